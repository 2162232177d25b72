//! Instruction decoder for RV64IMAC + Zicsr + Zifencei.

use super::{DecodedInstruction, IllegalInstruction, Mnemonic};

/// 2 if the low two bits of the first parcel mark a compressed encoding,
/// 4 otherwise.
pub fn parcel_length(low16: u16) -> u64 {
    if low16 & 0b11 == 0b11 {
        4
    } else {
        2
    }
}

/// Decode the instruction starting in `raw`. If the first parcel is
/// compressed only the low 16 bits are consumed.
pub fn decode(raw: u32) -> Result<DecodedInstruction, IllegalInstruction> {
    if parcel_length(raw as u16) == 4 {
        decode32(raw)
    } else {
        decode16(raw as u16)
    }
}

fn rd(raw: u32) -> u8 {
    ((raw >> 7) & 0x1f) as u8
}

fn rs1(raw: u32) -> u8 {
    ((raw >> 15) & 0x1f) as u8
}

fn rs2(raw: u32) -> u8 {
    ((raw >> 20) & 0x1f) as u8
}

fn imm_i(raw: u32) -> i64 {
    (raw as i32 >> 20) as i64
}

fn imm_s(raw: u32) -> i64 {
    (((raw & 0xfe00_0000) as i32 >> 20) as i64) | ((raw >> 7) & 0x1f) as i64
}

fn imm_b(raw: u32) -> i64 {
    (((raw & 0x8000_0000) as i32 >> 19) as i64)
        | (((raw >> 7) & 1) as i64) << 11
        | (((raw >> 25) & 0x3f) as i64) << 5
        | (((raw >> 8) & 0xf) as i64) << 1
}

fn imm_u(raw: u32) -> i64 {
    (raw & 0xffff_f000) as i32 as i64
}

fn imm_j(raw: u32) -> i64 {
    (((raw & 0x8000_0000) as i32 >> 11) as i64)
        | ((raw & 0x000f_f000) as i64)
        | (((raw >> 20) & 1) as i64) << 11
        | (((raw >> 21) & 0x3ff) as i64) << 1
}

/// Decode a 32-bit (uncompressed) encoding.
pub fn decode32(raw: u32) -> Result<DecodedInstruction, IllegalInstruction> {
    use Mnemonic::*;
    let illegal = Err(IllegalInstruction(raw));
    let opcode = raw & 0x7f;
    let funct3 = (raw >> 12) & 0b111;
    let funct7 = raw >> 25;
    let ins = |m: Mnemonic, rd: u8, rs1: u8, rs2: u8, imm: i64| {
        Ok(DecodedInstruction::new(m, rd, rs1, rs2, imm, 4))
    };

    match opcode {
        0b0110111 => ins(Lui, rd(raw), 0, 0, imm_u(raw)),
        0b0010111 => ins(Auipc, rd(raw), 0, 0, imm_u(raw)),
        0b1101111 => ins(Jal, rd(raw), 0, 0, imm_j(raw)),
        0b1100111 => match funct3 {
            0b000 => ins(Jalr, rd(raw), rs1(raw), 0, imm_i(raw)),
            _ => illegal,
        },
        0b1100011 => {
            let m = match funct3 {
                0b000 => Beq,
                0b001 => Bne,
                0b100 => Blt,
                0b101 => Bge,
                0b110 => Bltu,
                0b111 => Bgeu,
                _ => return illegal,
            };
            ins(m, 0, rs1(raw), rs2(raw), imm_b(raw))
        }
        0b0000011 => {
            let m = match funct3 {
                0b000 => Lb,
                0b001 => Lh,
                0b010 => Lw,
                0b011 => Ld,
                0b100 => Lbu,
                0b101 => Lhu,
                0b110 => Lwu,
                _ => return illegal,
            };
            ins(m, rd(raw), rs1(raw), 0, imm_i(raw))
        }
        0b0100011 => {
            let m = match funct3 {
                0b000 => Sb,
                0b001 => Sh,
                0b010 => Sw,
                0b011 => Sd,
                _ => return illegal,
            };
            ins(m, 0, rs1(raw), rs2(raw), imm_s(raw))
        }
        0b0010011 => match funct3 {
            0b000 => ins(Addi, rd(raw), rs1(raw), 0, imm_i(raw)),
            0b010 => ins(Slti, rd(raw), rs1(raw), 0, imm_i(raw)),
            0b011 => ins(Sltiu, rd(raw), rs1(raw), 0, imm_i(raw)),
            0b100 => ins(Xori, rd(raw), rs1(raw), 0, imm_i(raw)),
            0b110 => ins(Ori, rd(raw), rs1(raw), 0, imm_i(raw)),
            0b111 => ins(Andi, rd(raw), rs1(raw), 0, imm_i(raw)),
            // RV64 shifts take a 6-bit shamt.
            0b001 => match funct7 >> 1 {
                0b000000 => ins(Slli, rd(raw), rs1(raw), 0, ((raw >> 20) & 0x3f) as i64),
                _ => illegal,
            },
            0b101 => match funct7 >> 1 {
                0b000000 => ins(Srli, rd(raw), rs1(raw), 0, ((raw >> 20) & 0x3f) as i64),
                0b010000 => ins(Srai, rd(raw), rs1(raw), 0, ((raw >> 20) & 0x3f) as i64),
                _ => illegal,
            },
            _ => unreachable!(),
        },
        0b0110011 => {
            let m = match (funct7, funct3) {
                (0b0000000, 0b000) => Add,
                (0b0100000, 0b000) => Sub,
                (0b0000000, 0b001) => Sll,
                (0b0000000, 0b010) => Slt,
                (0b0000000, 0b011) => Sltu,
                (0b0000000, 0b100) => Xor,
                (0b0000000, 0b101) => Srl,
                (0b0100000, 0b101) => Sra,
                (0b0000000, 0b110) => Or,
                (0b0000000, 0b111) => And,
                (0b0000001, 0b000) => Mul,
                (0b0000001, 0b001) => Mulh,
                (0b0000001, 0b010) => Mulhsu,
                (0b0000001, 0b011) => Mulhu,
                (0b0000001, 0b100) => Div,
                (0b0000001, 0b101) => Divu,
                (0b0000001, 0b110) => Rem,
                (0b0000001, 0b111) => Remu,
                _ => return illegal,
            };
            ins(m, rd(raw), rs1(raw), rs2(raw), 0)
        }
        0b0011011 => match funct3 {
            0b000 => ins(Addiw, rd(raw), rs1(raw), 0, imm_i(raw)),
            0b001 => match funct7 {
                0b0000000 => ins(Slliw, rd(raw), rs1(raw), 0, ((raw >> 20) & 0x1f) as i64),
                _ => illegal,
            },
            0b101 => match funct7 {
                0b0000000 => ins(Srliw, rd(raw), rs1(raw), 0, ((raw >> 20) & 0x1f) as i64),
                0b0100000 => ins(Sraiw, rd(raw), rs1(raw), 0, ((raw >> 20) & 0x1f) as i64),
                _ => illegal,
            },
            _ => illegal,
        },
        0b0111011 => {
            let m = match (funct7, funct3) {
                (0b0000000, 0b000) => Addw,
                (0b0100000, 0b000) => Subw,
                (0b0000000, 0b001) => Sllw,
                (0b0000000, 0b101) => Srlw,
                (0b0100000, 0b101) => Sraw,
                (0b0000001, 0b000) => Mulw,
                (0b0000001, 0b100) => Divw,
                (0b0000001, 0b101) => Divuw,
                (0b0000001, 0b110) => Remw,
                (0b0000001, 0b111) => Remuw,
                _ => return illegal,
            };
            ins(m, rd(raw), rs1(raw), rs2(raw), 0)
        }
        0b0001111 => match funct3 {
            // fm/pred/succ are accepted as-is; the simulator treats every
            // FENCE as a full fence.
            0b000 => ins(Fence, rd(raw), rs1(raw), 0, imm_i(raw)),
            0b001 => ins(FenceI, rd(raw), rs1(raw), 0, imm_i(raw)),
            _ => illegal,
        },
        0b0101111 => {
            if funct3 != 0b010 && funct3 != 0b011 {
                return illegal;
            }
            let word = funct3 == 0b010;
            let funct5 = raw >> 27;
            let m = match (funct5, word) {
                (0b00010, true) => LrW,
                (0b00010, false) => LrD,
                (0b00011, true) => ScW,
                (0b00011, false) => ScD,
                (0b00001, true) => AmoswapW,
                (0b00001, false) => AmoswapD,
                (0b00000, true) => AmoaddW,
                (0b00000, false) => AmoaddD,
                (0b00100, true) => AmoxorW,
                (0b00100, false) => AmoxorD,
                (0b01100, true) => AmoandW,
                (0b01100, false) => AmoandD,
                (0b01000, true) => AmoorW,
                (0b01000, false) => AmoorD,
                (0b10000, true) => AmominW,
                (0b10000, false) => AmominD,
                (0b10100, true) => AmomaxW,
                (0b10100, false) => AmomaxD,
                (0b11000, true) => AmominuW,
                (0b11000, false) => AmominuD,
                (0b11100, true) => AmomaxuW,
                (0b11100, false) => AmomaxuD,
                _ => return illegal,
            };
            if matches!(m, LrW | LrD) && rs2(raw) != 0 {
                return illegal;
            }
            ins(m, rd(raw), rs1(raw), rs2(raw), 0)
        }
        0b1110011 => match funct3 {
            0b000 => {
                if rd(raw) != 0 {
                    return illegal;
                }
                match raw >> 20 {
                    0b0000_0000_0000 if rs1(raw) == 0 => ins(Ecall, 0, 0, 0, 0),
                    0b0000_0000_0001 if rs1(raw) == 0 => ins(Ebreak, 0, 0, 0, 0),
                    0b0001_0000_0010 if rs1(raw) == 0 => ins(Sret, 0, 0, 0, 0),
                    0b0011_0000_0010 if rs1(raw) == 0 => ins(Mret, 0, 0, 0, 0),
                    0b0001_0000_0101 if rs1(raw) == 0 => ins(Wfi, 0, 0, 0, 0),
                    _ => {
                        if funct7 == 0b0001001 {
                            ins(SfenceVma, 0, rs1(raw), rs2(raw), 0)
                        } else {
                            illegal
                        }
                    }
                }
            }
            0b001 => ins(Csrrw, rd(raw), rs1(raw), 0, (raw >> 20) as i64),
            0b010 => ins(Csrrs, rd(raw), rs1(raw), 0, (raw >> 20) as i64),
            0b011 => ins(Csrrc, rd(raw), rs1(raw), 0, (raw >> 20) as i64),
            0b101 => ins(Csrrwi, rd(raw), rs1(raw), 0, (raw >> 20) as i64),
            0b110 => ins(Csrrsi, rd(raw), rs1(raw), 0, (raw >> 20) as i64),
            0b111 => ins(Csrrci, rd(raw), rs1(raw), 0, (raw >> 20) as i64),
            _ => illegal,
        },
        _ => illegal,
    }
}

/// Decode a 16-bit compressed encoding, expanding it to its base mnemonic.
pub fn decode16(raw: u16) -> Result<DecodedInstruction, IllegalInstruction> {
    use Mnemonic::*;
    let illegal = Err(IllegalInstruction(raw as u32));
    let r = raw as u32;
    let ins = |m: Mnemonic, rd: u8, rs1: u8, rs2: u8, imm: i64| {
        Ok(DecodedInstruction::new(m, rd, rs1, rs2, imm, 2))
    };
    // x8-x15 register slice used by most compressed forms.
    let r_hi = |pos: u32| 8 + ((r >> pos) & 0b111) as u8;
    let full = |pos: u32| ((r >> pos) & 0x1f) as u8;
    let bit = |pos: u32| (r >> pos) & 1;
    let funct3 = (r >> 13) & 0b111;

    match r & 0b11 {
        0b00 => match funct3 {
            0b000 => {
                let imm = (bit(12) << 5 | bit(11) << 4 | ((r >> 7) & 0b1111) << 6
                    | bit(6) << 2
                    | bit(5) << 3) as i64;
                if imm == 0 {
                    // Covers the all-zero parcel, defined illegal.
                    return illegal;
                }
                ins(Addi, r_hi(2), 2, 0, imm)
            }
            0b010 => {
                let imm = (((r >> 10) & 0b111) << 3 | bit(6) << 2 | bit(5) << 6) as i64;
                ins(Lw, r_hi(2), r_hi(7), 0, imm)
            }
            0b011 => {
                let imm = (((r >> 10) & 0b111) << 3 | ((r >> 5) & 0b11) << 6) as i64;
                ins(Ld, r_hi(2), r_hi(7), 0, imm)
            }
            0b110 => {
                let imm = (((r >> 10) & 0b111) << 3 | bit(6) << 2 | bit(5) << 6) as i64;
                ins(Sw, 0, r_hi(7), r_hi(2), imm)
            }
            0b111 => {
                let imm = (((r >> 10) & 0b111) << 3 | ((r >> 5) & 0b11) << 6) as i64;
                ins(Sd, 0, r_hi(7), r_hi(2), imm)
            }
            // 001/101 are C.FLD/C.FSD (no F/D support), 100 is reserved.
            _ => illegal,
        },
        0b01 => match funct3 {
            0b000 => {
                let imm = sext6(bit(12) << 5 | (r >> 2) & 0x1f);
                ins(Addi, full(7), full(7), 0, imm)
            }
            0b001 => {
                if full(7) == 0 {
                    return illegal;
                }
                let imm = sext6(bit(12) << 5 | (r >> 2) & 0x1f);
                ins(Addiw, full(7), full(7), 0, imm)
            }
            0b010 => {
                let imm = sext6(bit(12) << 5 | (r >> 2) & 0x1f);
                ins(Addi, full(7), 0, 0, imm)
            }
            0b011 => {
                if full(7) == 2 {
                    let imm = ((bit(12) << 9 | bit(6) << 4 | bit(5) << 6
                        | ((r >> 3) & 0b11) << 7
                        | bit(2) << 5) as i64)
                        << 54
                        >> 54;
                    if imm == 0 {
                        return illegal;
                    }
                    ins(Addi, 2, 2, 0, imm)
                } else {
                    let imm = ((bit(12) << 17 | ((r >> 2) & 0x1f) << 12) as i64) << 46 >> 46;
                    if imm == 0 {
                        return illegal;
                    }
                    ins(Lui, full(7), 0, 0, imm)
                }
            }
            0b100 => {
                let reg = r_hi(7);
                match (r >> 10) & 0b11 {
                    0b00 => ins(Srli, reg, reg, 0, (bit(12) << 5 | (r >> 2) & 0x1f) as i64),
                    0b01 => ins(Srai, reg, reg, 0, (bit(12) << 5 | (r >> 2) & 0x1f) as i64),
                    0b10 => ins(Andi, reg, reg, 0, sext6(bit(12) << 5 | (r >> 2) & 0x1f)),
                    _ => {
                        let rs2 = r_hi(2);
                        let m = match (bit(12), (r >> 5) & 0b11) {
                            (0, 0b00) => Sub,
                            (0, 0b01) => Xor,
                            (0, 0b10) => Or,
                            (0, 0b11) => And,
                            (1, 0b00) => Subw,
                            (1, 0b01) => Addw,
                            _ => return illegal,
                        };
                        ins(m, reg, reg, rs2, 0)
                    }
                }
            }
            0b101 => {
                let imm = ((bit(12) << 11
                    | bit(11) << 4
                    | ((r >> 9) & 0b11) << 8
                    | bit(8) << 10
                    | bit(7) << 6
                    | bit(6) << 7
                    | ((r >> 3) & 0b111) << 1
                    | bit(2) << 5) as i64)
                    << 52
                    >> 52;
                ins(Jal, 0, 0, 0, imm)
            }
            branch @ (0b110 | 0b111) => {
                let imm = ((bit(12) << 8
                    | ((r >> 10) & 0b11) << 3
                    | ((r >> 5) & 0b11) << 6
                    | ((r >> 3) & 0b11) << 1
                    | bit(2) << 5) as i64)
                    << 55
                    >> 55;
                let m = if branch == 0b110 { Beq } else { Bne };
                ins(m, 0, r_hi(7), 0, imm)
            }
            _ => unreachable!(),
        },
        0b10 => match funct3 {
            0b000 => ins(Slli, full(7), full(7), 0, (bit(12) << 5 | (r >> 2) & 0x1f) as i64),
            0b010 => {
                if full(7) == 0 {
                    return illegal;
                }
                let imm = (bit(12) << 5 | ((r >> 4) & 0b111) << 2 | ((r >> 2) & 0b11) << 6) as i64;
                ins(Lw, full(7), 2, 0, imm)
            }
            0b011 => {
                if full(7) == 0 {
                    return illegal;
                }
                let imm = (bit(12) << 5 | ((r >> 5) & 0b11) << 3 | ((r >> 2) & 0b111) << 6) as i64;
                ins(Ld, full(7), 2, 0, imm)
            }
            0b100 => {
                let rs1 = full(7);
                let rs2 = full(2);
                match (bit(12), rs1, rs2) {
                    // c.jr with rs1=0 is reserved; c.mv/c.add with rd=0 are hints.
                    (0, 0, 0) => illegal,
                    (0, _, 0) => ins(Jalr, 0, rs1, 0, 0),
                    (0, _, _) => ins(Add, rs1, 0, rs2, 0),
                    (1, 0, 0) => ins(Ebreak, 0, 0, 0, 0),
                    (1, _, 0) => ins(Jalr, 1, rs1, 0, 0),
                    (1, _, _) => ins(Add, rs1, rs1, rs2, 0),
                    _ => unreachable!(),
                }
            }
            0b110 => {
                let imm = (((r >> 9) & 0b1111) << 2 | ((r >> 7) & 0b11) << 6) as i64;
                ins(Sw, 0, 2, full(2), imm)
            }
            0b111 => {
                let imm = (((r >> 10) & 0b111) << 3 | ((r >> 7) & 0b111) << 6) as i64;
                ins(Sd, 0, 2, full(2), imm)
            }
            // 001/101 are C.FLDSP/C.FSDSP.
            _ => illegal,
        },
        _ => unreachable!("decode16 called on an uncompressed parcel"),
    }
}

fn sext6(v: u32) -> i64 {
    ((v as i64) << 58) >> 58
}
