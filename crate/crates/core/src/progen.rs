//! Deterministic random-program generation for differential testing.
//!
//! Programs are machine-mode, translation-off, fault-free and terminating
//! by construction: memory accesses stay inside a private data window,
//! control flow is forward branches plus counted backward loops, and the
//! program ends with a SYSCON exit store. The same seed always yields the
//! same program.

use crate::asm::{enc, reg, Assembler};
use crate::machine::{RAM_BASE, SYSCON_ADDR, SYSCON_PASS};

/// Registers the generator may clobber. x8 holds the data base, x29 the
/// loop counter, x30 computed jump targets, x31 the SYSCON address.
const RD_POOL: [u8; 20] = [9, 10, 11, 12, 13, 14, 15, 16, 17, 18, 19, 20, 21, 22, 23, 24, 25, 26, 27, 28];

pub const DATA_OFFSET: u64 = 0x10000;
pub const DATA_SIZE: u64 = 0x1000;
/// Offsets stay inside the I/S-immediate range.
const OFF_RANGE: u64 = 2040;

struct SplitMix(u64);

impl SplitMix {
    fn next(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }

    fn below(&mut self, n: u64) -> u64 {
        self.next() % n
    }

    fn reg(&mut self) -> u8 {
        RD_POOL[self.below(RD_POOL.len() as u64) as usize]
    }
}

/// Generate a program of roughly `len` instructions; returns the ELF image.
pub fn generate(seed: u64, len: usize) -> Vec<u8> {
    let mut rng = SplitMix(seed);
    let mut asm = Assembler::new(RAM_BASE);
    let data_base = RAM_BASE + DATA_OFFSET;

    asm.li64(reg::S0, data_base);
    asm.li64(reg::T6, SYSCON_ADDR);
    for r in RD_POOL.iter().take(8) {
        let v = rng.next();
        asm.li64(*r, v);
    }

    let mut emitted = 0usize;
    let mut pending_loop: Option<(crate::asm::Label, u8)> = None;
    while emitted < len {
        let choice = rng.below(100);
        let rd = rng.reg();
        let rs1 = rng.reg();
        let rs2 = rng.reg();
        match choice {
            0..=29 => {
                // Register-register ALU.
                let f = [
                    enc::add,
                    enc::sub,
                    enc::sll,
                    enc::slt,
                    enc::sltu,
                    enc::xor,
                    enc::srl,
                    enc::sra,
                    enc::or,
                    enc::and,
                    enc::addw,
                    enc::subw,
                    enc::sllw,
                    enc::srlw,
                    enc::sraw,
                ][rng.below(15) as usize];
                asm.i(f(rd, rs1, rs2));
            }
            30..=44 => {
                let imm = rng.next() as i64 % 2048;
                let f = [enc::addi, enc::slti, enc::sltiu, enc::xori, enc::ori, enc::andi, enc::addiw]
                    [rng.below(7) as usize];
                asm.i(f(rd, rs1, imm));
            }
            45..=49 => {
                let sh = rng.below(64) as u8;
                let f = [enc::slli, enc::srli, enc::srai][rng.below(3) as usize];
                asm.i(f(rd, rs1, sh));
            }
            50..=57 => {
                // M extension, including division edge inputs.
                let f = [
                    enc::mul,
                    enc::mulh,
                    enc::mulhsu,
                    enc::mulhu,
                    enc::div,
                    enc::divu,
                    enc::rem,
                    enc::remu,
                    enc::mulw,
                    enc::divw,
                    enc::divuw,
                    enc::remw,
                    enc::remuw,
                ][rng.below(13) as usize];
                asm.i(f(rd, rs1, rs2));
            }
            58..=69 => {
                // Load from the data window.
                let w = [1u64, 2, 4, 8][rng.below(4) as usize];
                let off = (rng.below(OFF_RANGE) / w * w) as i64;
                let f = match w {
                    1 => {
                        if rng.below(2) == 0 {
                            enc::lb
                        } else {
                            enc::lbu
                        }
                    }
                    2 => {
                        if rng.below(2) == 0 {
                            enc::lh
                        } else {
                            enc::lhu
                        }
                    }
                    4 => {
                        if rng.below(2) == 0 {
                            enc::lw
                        } else {
                            enc::lwu
                        }
                    }
                    _ => enc::ld,
                };
                asm.i(f(rd, reg::S0, off));
            }
            70..=79 => {
                // Store into the data window; occasionally misaligned.
                let w = [1u64, 2, 4, 8][rng.below(4) as usize];
                let off = if rng.below(8) == 0 {
                    rng.below(OFF_RANGE) as i64
                } else {
                    (rng.below(OFF_RANGE) / w * w) as i64
                };
                let f = match w {
                    1 => enc::sb,
                    2 => enc::sh,
                    4 => enc::sw,
                    _ => enc::sd,
                };
                asm.i(f(rs1, reg::S0, off));
            }
            80..=84 => {
                // Atomics at aligned offsets.
                let w = rng.below(2);
                let off = (rng.below(OFF_RANGE / 8) * 8) as i64;
                asm.i(enc::addi(reg::T5, reg::S0, off));
                if rng.below(4) == 0 {
                    if w == 0 {
                        asm.i(enc::lr_w(rd, reg::T5));
                        asm.i(enc::sc_w(rs1, reg::T5, rs2));
                    } else {
                        asm.i(enc::lr_d(rd, reg::T5));
                        asm.i(enc::sc_d(rs1, reg::T5, rs2));
                    }
                } else {
                    let f = [enc::amoswap_w, enc::amoadd_w, enc::amoor_w, enc::amoand_w]
                        [rng.below(4) as usize];
                    if w == 0 {
                        asm.i(f(rd, reg::T5, rs2));
                    } else {
                        asm.i(enc::amoadd_d(rd, reg::T5, rs2));
                    }
                }
                emitted += 2;
            }
            85..=89 => {
                // Compressed forms.
                match rng.below(4) {
                    0 => asm.c(enc::c::addi(rd, rng.next() as i64 % 32)),
                    1 => asm.c(enc::c::li(rd, rng.next() as i64 % 32)),
                    2 => asm.c(enc::c::mv(rd, rs1)),
                    _ => asm.c(enc::c::add(rd, rs1)),
                };
            }
            90..=95 => {
                // Forward branch over the next few instructions.
                let skip = 1 + rng.below(4);
                let target = asm.new_label();
                let f = [enc::beq, enc::bne, enc::blt, enc::bge, enc::bltu, enc::bgeu]
                    [rng.below(6) as usize];
                asm.branch(f, rs1, rs2, target);
                for _ in 0..skip {
                    asm.i(enc::addi(rng.reg(), rng.reg(), 1));
                    emitted += 1;
                }
                asm.bind(target);
            }
            96..=97 => {
                // Computed jump through a register (exercises JALR paths).
                let target = asm.new_label();
                asm.la(reg::T5, target);
                asm.i(enc::jalr(0, reg::T5, 0));
                asm.bind(target);
                emitted += 2;
            }
            _ => {
                // Counted backward loop (not nested).
                if pending_loop.is_none() {
                    let n = 2 + rng.below(4);
                    asm.i(enc::addi(reg::T4, 0, n as i64));
                    let head = asm.here();
                    pending_loop = Some((head, 2 + rng.below(3) as u8));
                    emitted += 1;
                }
            }
        }
        emitted += 1;
        if let Some((head, left)) = pending_loop.take() {
            if left == 0 {
                asm.i(enc::addi(reg::T4, reg::T4, -1));
                asm.branch(enc::bne, reg::T4, 0, head);
                emitted += 2;
            } else {
                pending_loop = Some((head, left - 1));
            }
        }
    }
    if let Some((head, _)) = pending_loop.take() {
        asm.i(enc::addi(reg::T4, reg::T4, -1));
        asm.branch(enc::bne, reg::T4, 0, head);
    }

    // Exit with success.
    asm.li64(reg::T5, SYSCON_PASS as u64);
    asm.i(enc::sw(reg::T5, reg::T6, 0));
    // Fallback halt loop; never reached.
    let here = asm.here();
    asm.jal(0, here);

    let (base, bytes) = asm.finish();
    crate::elf::write(base, base, &bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_per_seed() {
        assert_eq!(generate(7, 200), generate(7, 200));
        assert_ne!(generate(7, 200), generate(8, 200));
    }

    #[test]
    fn generated_programs_run_on_the_oracle() {
        for seed in 0..20 {
            let image = generate(seed, 300);
            let mut interp = crate::interp::Interp::from_elf(&image, 1, 1 << 20).unwrap();
            let code = interp
                .run(2_000_000)
                .unwrap_or_else(|e| panic!("seed {seed}: oracle failed: {e}"));
            assert_eq!(code, 0, "seed {seed}");
        }
    }
}
