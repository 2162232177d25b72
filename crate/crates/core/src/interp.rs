//! A plain instruction-at-a-time reference interpreter.
//!
//! This is the functional oracle the translating engine is checked against:
//! flat byte-array memory, no translation caching, no timing, no memory
//! models. Multiple cores are interleaved strictly round-robin, one
//! instruction each. It shares only the decoder with the main engine and
//! deliberately reimplements all execution semantics.
//!
//! Scope: machine-mode, translation-off guests (the differential-testing
//! corpus). Anything that would trap is reported as an error rather than
//! emulated.

use crate::isa::{self, DecodedInstruction, Mnemonic};
use crate::machine::{RAM_BASE, SYSCON_ADDR, SYSCON_EXIT_MAGIC, SYSCON_PASS, UART_ADDR};

#[derive(Debug)]
pub enum InterpError {
    Illegal { pc: u64, raw: u32 },
    BadAccess { pc: u64, addr: u64 },
    Unsupported { pc: u64, what: &'static str },
    StepLimit,
}

impl std::fmt::Display for InterpError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            InterpError::Illegal { pc, raw } => {
                write!(f, "illegal instruction {raw:#010x} at {pc:#x}")
            }
            InterpError::BadAccess { pc, addr } => {
                write!(f, "bad memory access {addr:#x} at {pc:#x}")
            }
            InterpError::Unsupported { pc, what } => write!(f, "unsupported {what} at {pc:#x}"),
            InterpError::StepLimit => write!(f, "step limit exceeded"),
        }
    }
}

impl std::error::Error for InterpError {}

pub struct ICore {
    pub regs: [u64; 32],
    pub pc: u64,
    reservation: Option<u64>,
    pub retired: u64,
    pub done: bool,
}

pub struct Interp {
    pub mem: Vec<u8>,
    pub base: u64,
    pub cores: Vec<ICore>,
    pub console: Vec<u8>,
    pub exit_code: Option<i64>,
}

impl Interp {
    /// Build from an ELF image with every core starting at the entry point,
    /// a0 = hart id (machine-target boot convention).
    pub fn from_elf(image: &[u8], cores: usize, mem_size: u64) -> Result<Interp, crate::elf::ElfError> {
        let img = crate::elf::parse(image)?;
        let mut interp = Interp {
            mem: vec![0; mem_size as usize],
            base: RAM_BASE,
            cores: (0..cores)
                .map(|i| {
                    let mut regs = [0u64; 32];
                    regs[10] = i as u64;
                    ICore { regs, pc: img.entry, reservation: None, retired: 0, done: false }
                })
                .collect(),
            console: Vec::new(),
            exit_code: None,
        };
        for seg in &img.segments {
            let off = (seg.vaddr - RAM_BASE) as usize;
            interp.mem[off..off + seg.data.len()].copy_from_slice(&seg.data);
        }
        Ok(interp)
    }

    fn idx(&self, addr: u64, width: u64) -> Option<usize> {
        if addr >= self.base && addr + width <= self.base + self.mem.len() as u64 {
            Some((addr - self.base) as usize)
        } else {
            None
        }
    }

    fn read(&mut self, pc: u64, addr: u64, width: u64) -> Result<u64, InterpError> {
        if addr == UART_ADDR + 5 {
            return Ok(0x60);
        }
        let i = self.idx(addr, width).ok_or(InterpError::BadAccess { pc, addr })?;
        let mut v = 0u64;
        for k in (0..width as usize).rev() {
            v = v << 8 | self.mem[i + k] as u64;
        }
        Ok(v)
    }

    fn write(&mut self, pc: u64, addr: u64, width: u64, value: u64) -> Result<(), InterpError> {
        if addr == SYSCON_ADDR {
            let v = value as u32;
            if v == SYSCON_PASS {
                self.exit_code = Some(0);
            } else if v & 0xffff == SYSCON_EXIT_MAGIC {
                self.exit_code = Some((v >> 16) as i64);
            }
            return Ok(());
        }
        if addr == UART_ADDR {
            self.console.push(value as u8);
            return Ok(());
        }
        let i = self.idx(addr, width).ok_or(InterpError::BadAccess { pc, addr })?;
        for k in 0..width as usize {
            self.mem[i + k] = (value >> (8 * k)) as u8;
        }
        // Stores break other cores' reservations on the line.
        let line = addr & !63;
        for c in &mut self.cores {
            if c.reservation == Some(line) {
                c.reservation = None;
            }
        }
        Ok(())
    }

    /// Run round-robin until exit, completion, or `max_steps` total retired
    /// instructions.
    pub fn run(&mut self, max_steps: u64) -> Result<i64, InterpError> {
        let mut total = 0u64;
        loop {
            let mut any = false;
            for i in 0..self.cores.len() {
                if self.cores[i].done {
                    continue;
                }
                any = true;
                self.step(i)?;
                total += 1;
                if let Some(code) = self.exit_code {
                    return Ok(code);
                }
                if total >= max_steps {
                    return Err(InterpError::StepLimit);
                }
            }
            if !any {
                return Ok(self.exit_code.unwrap_or(0));
            }
        }
    }

    pub fn step(&mut self, core: usize) -> Result<(), InterpError> {
        let pc = self.cores[core].pc;
        let low = self.read(pc, pc, 2)? as u16;
        let raw = if isa::parcel_length(low) == 4 {
            low as u32 | (self.read(pc, pc + 2, 2)? as u32) << 16
        } else {
            low as u32
        };
        let instr = isa::decode(raw).map_err(|e| InterpError::Illegal { pc, raw: e.0 })?;
        self.exec(core, pc, &instr)?;
        self.cores[core].retired += 1;
        Ok(())
    }

    fn exec(&mut self, ci: usize, pc: u64, d: &DecodedInstruction) -> Result<(), InterpError> {
        use Mnemonic::*;
        let rs1 = self.cores[ci].regs[d.rs1 as usize];
        let rs2 = self.cores[ci].regs[d.rs2 as usize];
        let imm = d.imm as u64;
        let mut next = pc + d.length as u64;
        let sx = |v: u64| v as i32 as i64 as u64;
        let mut rd_val: Option<u64> = None;

        match d.mnemonic {
            Lui => rd_val = Some(imm),
            Auipc => rd_val = Some(pc.wrapping_add(imm)),
            Jal => {
                rd_val = Some(next);
                next = pc.wrapping_add(imm);
            }
            Jalr => {
                rd_val = Some(next);
                next = rs1.wrapping_add(imm) & !1;
            }
            Beq => {
                if rs1 == rs2 {
                    next = pc.wrapping_add(imm)
                }
            }
            Bne => {
                if rs1 != rs2 {
                    next = pc.wrapping_add(imm)
                }
            }
            Blt => {
                if (rs1 as i64) < rs2 as i64 {
                    next = pc.wrapping_add(imm)
                }
            }
            Bge => {
                if (rs1 as i64) >= rs2 as i64 {
                    next = pc.wrapping_add(imm)
                }
            }
            Bltu => {
                if rs1 < rs2 {
                    next = pc.wrapping_add(imm)
                }
            }
            Bgeu => {
                if rs1 >= rs2 {
                    next = pc.wrapping_add(imm)
                }
            }
            Lb => rd_val = Some(self.read(pc, rs1.wrapping_add(imm), 1)? as i8 as i64 as u64),
            Lh => rd_val = Some(self.read(pc, rs1.wrapping_add(imm), 2)? as i16 as i64 as u64),
            Lw => rd_val = Some(sx(self.read(pc, rs1.wrapping_add(imm), 4)?)),
            Ld => rd_val = Some(self.read(pc, rs1.wrapping_add(imm), 8)?),
            Lbu => rd_val = Some(self.read(pc, rs1.wrapping_add(imm), 1)?),
            Lhu => rd_val = Some(self.read(pc, rs1.wrapping_add(imm), 2)?),
            Lwu => rd_val = Some(self.read(pc, rs1.wrapping_add(imm), 4)?),
            Sb => self.write(pc, rs1.wrapping_add(imm), 1, rs2)?,
            Sh => self.write(pc, rs1.wrapping_add(imm), 2, rs2)?,
            Sw => self.write(pc, rs1.wrapping_add(imm), 4, rs2)?,
            Sd => self.write(pc, rs1.wrapping_add(imm), 8, rs2)?,
            Addi => rd_val = Some(rs1.wrapping_add(imm)),
            Slti => rd_val = Some(((rs1 as i64) < imm as i64) as u64),
            Sltiu => rd_val = Some((rs1 < imm) as u64),
            Xori => rd_val = Some(rs1 ^ imm),
            Ori => rd_val = Some(rs1 | imm),
            Andi => rd_val = Some(rs1 & imm),
            Slli => rd_val = Some(rs1 << imm),
            Srli => rd_val = Some(rs1 >> imm),
            Srai => rd_val = Some(((rs1 as i64) >> imm) as u64),
            Add => rd_val = Some(rs1.wrapping_add(rs2)),
            Sub => rd_val = Some(rs1.wrapping_sub(rs2)),
            Sll => rd_val = Some(rs1 << (rs2 & 63)),
            Slt => rd_val = Some(((rs1 as i64) < rs2 as i64) as u64),
            Sltu => rd_val = Some((rs1 < rs2) as u64),
            Xor => rd_val = Some(rs1 ^ rs2),
            Srl => rd_val = Some(rs1 >> (rs2 & 63)),
            Sra => rd_val = Some(((rs1 as i64) >> (rs2 & 63)) as u64),
            Or => rd_val = Some(rs1 | rs2),
            And => rd_val = Some(rs1 & rs2),
            Addiw => rd_val = Some(sx(rs1.wrapping_add(imm))),
            Slliw => rd_val = Some(sx((rs1 as u32 as u64) << imm)),
            Srliw => rd_val = Some(sx((rs1 as u32 >> imm) as u64)),
            Sraiw => rd_val = Some(((rs1 as i32) >> imm) as i64 as u64),
            Addw => rd_val = Some(sx(rs1.wrapping_add(rs2))),
            Subw => rd_val = Some(sx(rs1.wrapping_sub(rs2))),
            Sllw => rd_val = Some(sx((rs1 as u32 as u64) << (rs2 & 31))),
            Srlw => rd_val = Some(sx((rs1 as u32 >> (rs2 & 31)) as u64)),
            Sraw => rd_val = Some(((rs1 as i32) >> (rs2 & 31)) as i64 as u64),
            Mul => rd_val = Some(rs1.wrapping_mul(rs2)),
            Mulh => rd_val = Some(((rs1 as i64 as i128 * rs2 as i64 as i128) >> 64) as u64),
            Mulhsu => {
                rd_val = Some(((rs1 as i64 as i128).wrapping_mul(rs2 as i128) >> 64) as u64)
            }
            Mulhu => rd_val = Some(((rs1 as u128 * rs2 as u128) >> 64) as u64),
            Div => {
                let (a, b) = (rs1 as i64, rs2 as i64);
                rd_val = Some(if b == 0 {
                    u64::MAX
                } else if a == i64::MIN && b == -1 {
                    a as u64
                } else {
                    (a / b) as u64
                })
            }
            Divu => rd_val = Some(if rs2 == 0 { u64::MAX } else { rs1 / rs2 }),
            Rem => {
                let (a, b) = (rs1 as i64, rs2 as i64);
                rd_val = Some(if b == 0 {
                    a as u64
                } else if a == i64::MIN && b == -1 {
                    0
                } else {
                    (a % b) as u64
                })
            }
            Remu => rd_val = Some(if rs2 == 0 { rs1 } else { rs1 % rs2 }),
            Mulw => rd_val = Some(sx(rs1.wrapping_mul(rs2))),
            Divw => {
                let (a, b) = (rs1 as i32, rs2 as i32);
                rd_val = Some(if b == 0 {
                    u64::MAX
                } else if a == i32::MIN && b == -1 {
                    a as i64 as u64
                } else {
                    (a / b) as i64 as u64
                })
            }
            Divuw => {
                let (a, b) = (rs1 as u32, rs2 as u32);
                rd_val = Some(sx(if b == 0 { u32::MAX as u64 } else { (a / b) as u64 }))
            }
            Remw => {
                let (a, b) = (rs1 as i32, rs2 as i32);
                rd_val = Some(if b == 0 {
                    a as i64 as u64
                } else if a == i32::MIN && b == -1 {
                    0
                } else {
                    (a % b) as i64 as u64
                })
            }
            Remuw => {
                let (a, b) = (rs1 as u32, rs2 as u32);
                rd_val = Some(sx(if b == 0 { a as u64 } else { (a % b) as u64 }))
            }
            Fence | FenceI => {}
            LrW | LrD => {
                let w = d.access_width();
                let addr = rs1;
                if addr % w != 0 {
                    return Err(InterpError::BadAccess { pc, addr });
                }
                let v = self.read(pc, addr, w)?;
                rd_val = Some(if w == 4 { sx(v) } else { v });
                self.cores[ci].reservation = Some(addr & !63);
            }
            ScW | ScD => {
                let w = d.access_width();
                let addr = rs1;
                if addr % w != 0 {
                    return Err(InterpError::BadAccess { pc, addr });
                }
                if self.cores[ci].reservation == Some(addr & !63) {
                    self.cores[ci].reservation = None;
                    self.write(pc, addr, w, rs2)?;
                    rd_val = Some(0);
                } else {
                    self.cores[ci].reservation = None;
                    rd_val = Some(1);
                }
            }
            m if m.is_amo() => {
                let w = d.access_width();
                let addr = rs1;
                if addr % w != 0 {
                    return Err(InterpError::BadAccess { pc, addr });
                }
                let raw = self.read(pc, addr, w)?;
                let old = if w == 4 { sx(raw) } else { raw };
                let new = match m {
                    AmoswapW | AmoswapD => rs2,
                    AmoaddW | AmoaddD => old.wrapping_add(rs2),
                    AmoxorW | AmoxorD => old ^ rs2,
                    AmoandW | AmoandD => old & rs2,
                    AmoorW | AmoorD => old | rs2,
                    AmominW => ((old as i32).min(rs2 as i32)) as u64,
                    AmomaxW => ((old as i32).max(rs2 as i32)) as u64,
                    AmominuW => ((old as u32).min(rs2 as u32)) as u64,
                    AmomaxuW => ((old as u32).max(rs2 as u32)) as u64,
                    AmominD => ((old as i64).min(rs2 as i64)) as u64,
                    AmomaxD => ((old as i64).max(rs2 as i64)) as u64,
                    AmominuD => old.min(rs2),
                    AmomaxuD => old.max(rs2),
                    _ => unreachable!(),
                };
                self.write(pc, addr, w, new)?;
                rd_val = Some(old);
            }
            Wfi => {
                // The corpus uses WFI with interrupts masked as a park:
                // the core halts for good.
                self.cores[ci].done = true;
            }
            Ecall | Ebreak | Mret | Sret | SfenceVma | Csrrw | Csrrs | Csrrc | Csrrwi
            | Csrrsi | Csrrci => {
                return Err(InterpError::Unsupported { pc, what: "privileged operation" })
            }
            _ => unreachable!("all remaining mnemonics are handled by the guards"),
        }
        if let Some(v) = rd_val {
            if d.rd != 0 {
                self.cores[ci].regs[d.rd as usize] = v;
            }
        }
        self.cores[ci].pc = next;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asm::{enc, reg, Assembler};

    fn run_one(build: impl FnOnce(&mut Assembler)) -> Interp {
        let mut asm = Assembler::new(RAM_BASE);
        build(&mut asm);
        let (base, bytes) = asm.finish();
        let image = crate::elf::write(base, base, &bytes);
        let mut interp = Interp::from_elf(&image, 1, 1024 * 1024).unwrap();
        interp.run(100_000).unwrap();
        interp
    }

    fn exit_ok(asm: &mut Assembler) {
        asm.li64(reg::T0, SYSCON_ADDR);
        asm.li64(reg::T1, SYSCON_PASS as u64);
        asm.i(enc::sw(reg::T1, reg::T0, 0));
    }

    #[test]
    fn arithmetic_and_exit() {
        let i = run_one(|a| {
            a.i(enc::addi(reg::A0, 0, 21));
            a.i(enc::slli(reg::A0, reg::A0, 1));
            exit_ok(a);
        });
        assert_eq!(i.exit_code, Some(0));
        assert_eq!(i.cores[0].regs[reg::A0 as usize], 42);
    }

    #[test]
    fn loads_and_stores() {
        let i = run_one(|a| {
            a.li64(reg::T2, RAM_BASE + 0x1000);
            a.li64(reg::A1, 0xdead_beef_cafe_f00d);
            a.i(enc::sd(reg::A1, reg::T2, 0));
            a.i(enc::lw(reg::A2, reg::T2, 0));
            a.i(enc::lbu(reg::A3, reg::T2, 1));
            exit_ok(a);
        });
        assert_eq!(i.cores[0].regs[reg::A2 as usize], 0xffff_ffff_cafe_f00d);
        assert_eq!(i.cores[0].regs[reg::A3 as usize], 0xf0);
    }

    #[test]
    fn amo_and_lrsc() {
        let i = run_one(|a| {
            a.li64(reg::T2, RAM_BASE + 0x2000);
            a.i(enc::addi(reg::A1, 0, 5));
            a.i(enc::amoadd_w(reg::A2, reg::T2, reg::A1));
            a.i(enc::lr_w(reg::A3, reg::T2));
            a.i(enc::addi(reg::A4, reg::A3, 1));
            a.i(enc::sc_w(reg::A5, reg::T2, reg::A4));
            a.i(enc::lw(reg::A6, reg::T2, 0));
            exit_ok(a);
        });
        assert_eq!(i.cores[0].regs[reg::A2 as usize], 0);
        assert_eq!(i.cores[0].regs[reg::A3 as usize], 5);
        assert_eq!(i.cores[0].regs[reg::A5 as usize], 0);
        assert_eq!(i.cores[0].regs[reg::A6 as usize], 6);
    }
}
