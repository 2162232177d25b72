//! A small programmatic RV64IMAC assembler.
//!
//! Used to build the bundled micro-benchmark guests and as the encoding
//! route in decoder tests. Encodings are assembled from the field layouts
//! in the ISA manual and are written independently of the decoder.

/// Raw 32-bit encoders, one per format.
pub mod enc {
    fn r_type(opcode: u32, rd: u8, funct3: u32, rs1: u8, rs2: u8, funct7: u32) -> u32 {
        opcode
            | (rd as u32) << 7
            | funct3 << 12
            | (rs1 as u32) << 15
            | (rs2 as u32) << 20
            | funct7 << 25
    }

    fn i_type(opcode: u32, rd: u8, funct3: u32, rs1: u8, imm: i64) -> u32 {
        debug_assert!((-2048..=2047).contains(&imm), "I-immediate out of range: {imm}");
        opcode | (rd as u32) << 7 | funct3 << 12 | (rs1 as u32) << 15 | ((imm as u32) & 0xfff) << 20
    }

    fn s_type(opcode: u32, funct3: u32, rs1: u8, rs2: u8, imm: i64) -> u32 {
        debug_assert!((-2048..=2047).contains(&imm), "S-immediate out of range: {imm}");
        let imm = imm as u32;
        opcode
            | (imm & 0x1f) << 7
            | funct3 << 12
            | (rs1 as u32) << 15
            | (rs2 as u32) << 20
            | ((imm >> 5) & 0x7f) << 25
    }

    fn b_type(opcode: u32, funct3: u32, rs1: u8, rs2: u8, imm: i64) -> u32 {
        debug_assert!(imm % 2 == 0 && (-4096..=4094).contains(&imm), "B-immediate: {imm}");
        let imm = imm as u32;
        opcode
            | ((imm >> 11) & 1) << 7
            | ((imm >> 1) & 0xf) << 8
            | funct3 << 12
            | (rs1 as u32) << 15
            | (rs2 as u32) << 20
            | ((imm >> 5) & 0x3f) << 25
            | ((imm >> 12) & 1) << 31
    }

    fn u_type(opcode: u32, rd: u8, imm: i64) -> u32 {
        debug_assert!(imm % 4096 == 0, "U-immediate must be page-shifted: {imm}");
        opcode | (rd as u32) << 7 | (imm as u32 & 0xffff_f000)
    }

    fn j_type(opcode: u32, rd: u8, imm: i64) -> u32 {
        debug_assert!(imm % 2 == 0 && (-(1 << 20)..(1 << 20)).contains(&imm), "J-imm: {imm}");
        let imm = imm as u32;
        opcode
            | (rd as u32) << 7
            | (imm & 0xf_f000)
            | ((imm >> 11) & 1) << 20
            | ((imm >> 1) & 0x3ff) << 21
            | ((imm >> 20) & 1) << 31
    }

    pub fn lui(rd: u8, imm: i64) -> u32 {
        u_type(0b0110111, rd, imm)
    }
    pub fn auipc(rd: u8, imm: i64) -> u32 {
        u_type(0b0010111, rd, imm)
    }
    pub fn jal(rd: u8, off: i64) -> u32 {
        j_type(0b1101111, rd, off)
    }
    pub fn jalr(rd: u8, rs1: u8, off: i64) -> u32 {
        i_type(0b1100111, rd, 0b000, rs1, off)
    }

    pub fn beq(rs1: u8, rs2: u8, off: i64) -> u32 {
        b_type(0b1100011, 0b000, rs1, rs2, off)
    }
    pub fn bne(rs1: u8, rs2: u8, off: i64) -> u32 {
        b_type(0b1100011, 0b001, rs1, rs2, off)
    }
    pub fn blt(rs1: u8, rs2: u8, off: i64) -> u32 {
        b_type(0b1100011, 0b100, rs1, rs2, off)
    }
    pub fn bge(rs1: u8, rs2: u8, off: i64) -> u32 {
        b_type(0b1100011, 0b101, rs1, rs2, off)
    }
    pub fn bltu(rs1: u8, rs2: u8, off: i64) -> u32 {
        b_type(0b1100011, 0b110, rs1, rs2, off)
    }
    pub fn bgeu(rs1: u8, rs2: u8, off: i64) -> u32 {
        b_type(0b1100011, 0b111, rs1, rs2, off)
    }

    pub fn lb(rd: u8, rs1: u8, off: i64) -> u32 {
        i_type(0b0000011, rd, 0b000, rs1, off)
    }
    pub fn lh(rd: u8, rs1: u8, off: i64) -> u32 {
        i_type(0b0000011, rd, 0b001, rs1, off)
    }
    pub fn lw(rd: u8, rs1: u8, off: i64) -> u32 {
        i_type(0b0000011, rd, 0b010, rs1, off)
    }
    pub fn ld(rd: u8, rs1: u8, off: i64) -> u32 {
        i_type(0b0000011, rd, 0b011, rs1, off)
    }
    pub fn lbu(rd: u8, rs1: u8, off: i64) -> u32 {
        i_type(0b0000011, rd, 0b100, rs1, off)
    }
    pub fn lhu(rd: u8, rs1: u8, off: i64) -> u32 {
        i_type(0b0000011, rd, 0b101, rs1, off)
    }
    pub fn lwu(rd: u8, rs1: u8, off: i64) -> u32 {
        i_type(0b0000011, rd, 0b110, rs1, off)
    }

    pub fn sb(rs2: u8, rs1: u8, off: i64) -> u32 {
        s_type(0b0100011, 0b000, rs1, rs2, off)
    }
    pub fn sh(rs2: u8, rs1: u8, off: i64) -> u32 {
        s_type(0b0100011, 0b001, rs1, rs2, off)
    }
    pub fn sw(rs2: u8, rs1: u8, off: i64) -> u32 {
        s_type(0b0100011, 0b010, rs1, rs2, off)
    }
    pub fn sd(rs2: u8, rs1: u8, off: i64) -> u32 {
        s_type(0b0100011, 0b011, rs1, rs2, off)
    }

    pub fn addi(rd: u8, rs1: u8, imm: i64) -> u32 {
        i_type(0b0010011, rd, 0b000, rs1, imm)
    }
    pub fn slti(rd: u8, rs1: u8, imm: i64) -> u32 {
        i_type(0b0010011, rd, 0b010, rs1, imm)
    }
    pub fn sltiu(rd: u8, rs1: u8, imm: i64) -> u32 {
        i_type(0b0010011, rd, 0b011, rs1, imm)
    }
    pub fn xori(rd: u8, rs1: u8, imm: i64) -> u32 {
        i_type(0b0010011, rd, 0b100, rs1, imm)
    }
    pub fn ori(rd: u8, rs1: u8, imm: i64) -> u32 {
        i_type(0b0010011, rd, 0b110, rs1, imm)
    }
    pub fn andi(rd: u8, rs1: u8, imm: i64) -> u32 {
        i_type(0b0010011, rd, 0b111, rs1, imm)
    }
    pub fn slli(rd: u8, rs1: u8, shamt: u8) -> u32 {
        i_type(0b0010011, rd, 0b001, rs1, shamt as i64)
    }
    pub fn srli(rd: u8, rs1: u8, shamt: u8) -> u32 {
        i_type(0b0010011, rd, 0b101, rs1, shamt as i64)
    }
    pub fn srai(rd: u8, rs1: u8, shamt: u8) -> u32 {
        i_type(0b0010011, rd, 0b101, rs1, shamt as i64 | 0x400)
    }

    pub fn addiw(rd: u8, rs1: u8, imm: i64) -> u32 {
        i_type(0b0011011, rd, 0b000, rs1, imm)
    }
    pub fn slliw(rd: u8, rs1: u8, shamt: u8) -> u32 {
        i_type(0b0011011, rd, 0b001, rs1, shamt as i64)
    }
    pub fn srliw(rd: u8, rs1: u8, shamt: u8) -> u32 {
        i_type(0b0011011, rd, 0b101, rs1, shamt as i64)
    }
    pub fn sraiw(rd: u8, rs1: u8, shamt: u8) -> u32 {
        i_type(0b0011011, rd, 0b101, rs1, shamt as i64 | 0x400)
    }

    pub fn add(rd: u8, rs1: u8, rs2: u8) -> u32 {
        r_type(0b0110011, rd, 0b000, rs1, rs2, 0)
    }
    pub fn sub(rd: u8, rs1: u8, rs2: u8) -> u32 {
        r_type(0b0110011, rd, 0b000, rs1, rs2, 0b0100000)
    }
    pub fn sll(rd: u8, rs1: u8, rs2: u8) -> u32 {
        r_type(0b0110011, rd, 0b001, rs1, rs2, 0)
    }
    pub fn slt(rd: u8, rs1: u8, rs2: u8) -> u32 {
        r_type(0b0110011, rd, 0b010, rs1, rs2, 0)
    }
    pub fn sltu(rd: u8, rs1: u8, rs2: u8) -> u32 {
        r_type(0b0110011, rd, 0b011, rs1, rs2, 0)
    }
    pub fn xor(rd: u8, rs1: u8, rs2: u8) -> u32 {
        r_type(0b0110011, rd, 0b100, rs1, rs2, 0)
    }
    pub fn srl(rd: u8, rs1: u8, rs2: u8) -> u32 {
        r_type(0b0110011, rd, 0b101, rs1, rs2, 0)
    }
    pub fn sra(rd: u8, rs1: u8, rs2: u8) -> u32 {
        r_type(0b0110011, rd, 0b101, rs1, rs2, 0b0100000)
    }
    pub fn or(rd: u8, rs1: u8, rs2: u8) -> u32 {
        r_type(0b0110011, rd, 0b110, rs1, rs2, 0)
    }
    pub fn and(rd: u8, rs1: u8, rs2: u8) -> u32 {
        r_type(0b0110011, rd, 0b111, rs1, rs2, 0)
    }

    pub fn addw(rd: u8, rs1: u8, rs2: u8) -> u32 {
        r_type(0b0111011, rd, 0b000, rs1, rs2, 0)
    }
    pub fn subw(rd: u8, rs1: u8, rs2: u8) -> u32 {
        r_type(0b0111011, rd, 0b000, rs1, rs2, 0b0100000)
    }
    pub fn sllw(rd: u8, rs1: u8, rs2: u8) -> u32 {
        r_type(0b0111011, rd, 0b001, rs1, rs2, 0)
    }
    pub fn srlw(rd: u8, rs1: u8, rs2: u8) -> u32 {
        r_type(0b0111011, rd, 0b101, rs1, rs2, 0)
    }
    pub fn sraw(rd: u8, rs1: u8, rs2: u8) -> u32 {
        r_type(0b0111011, rd, 0b101, rs1, rs2, 0b0100000)
    }

    pub fn mul(rd: u8, rs1: u8, rs2: u8) -> u32 {
        r_type(0b0110011, rd, 0b000, rs1, rs2, 1)
    }
    pub fn mulh(rd: u8, rs1: u8, rs2: u8) -> u32 {
        r_type(0b0110011, rd, 0b001, rs1, rs2, 1)
    }
    pub fn mulhsu(rd: u8, rs1: u8, rs2: u8) -> u32 {
        r_type(0b0110011, rd, 0b010, rs1, rs2, 1)
    }
    pub fn mulhu(rd: u8, rs1: u8, rs2: u8) -> u32 {
        r_type(0b0110011, rd, 0b011, rs1, rs2, 1)
    }
    pub fn div(rd: u8, rs1: u8, rs2: u8) -> u32 {
        r_type(0b0110011, rd, 0b100, rs1, rs2, 1)
    }
    pub fn divu(rd: u8, rs1: u8, rs2: u8) -> u32 {
        r_type(0b0110011, rd, 0b101, rs1, rs2, 1)
    }
    pub fn rem(rd: u8, rs1: u8, rs2: u8) -> u32 {
        r_type(0b0110011, rd, 0b110, rs1, rs2, 1)
    }
    pub fn remu(rd: u8, rs1: u8, rs2: u8) -> u32 {
        r_type(0b0110011, rd, 0b111, rs1, rs2, 1)
    }
    pub fn mulw(rd: u8, rs1: u8, rs2: u8) -> u32 {
        r_type(0b0111011, rd, 0b000, rs1, rs2, 1)
    }
    pub fn divw(rd: u8, rs1: u8, rs2: u8) -> u32 {
        r_type(0b0111011, rd, 0b100, rs1, rs2, 1)
    }
    pub fn divuw(rd: u8, rs1: u8, rs2: u8) -> u32 {
        r_type(0b0111011, rd, 0b101, rs1, rs2, 1)
    }
    pub fn remw(rd: u8, rs1: u8, rs2: u8) -> u32 {
        r_type(0b0111011, rd, 0b110, rs1, rs2, 1)
    }
    pub fn remuw(rd: u8, rs1: u8, rs2: u8) -> u32 {
        r_type(0b0111011, rd, 0b111, rs1, rs2, 1)
    }

    fn amo(funct5: u32, word: bool, rd: u8, rs1: u8, rs2: u8) -> u32 {
        r_type(0b0101111, rd, if word { 0b010 } else { 0b011 }, rs1, rs2, funct5 << 2)
    }
    pub fn lr_w(rd: u8, rs1: u8) -> u32 {
        amo(0b00010, true, rd, rs1, 0)
    }
    pub fn sc_w(rd: u8, rs1: u8, rs2: u8) -> u32 {
        amo(0b00011, true, rd, rs1, rs2)
    }
    pub fn lr_d(rd: u8, rs1: u8) -> u32 {
        amo(0b00010, false, rd, rs1, 0)
    }
    pub fn sc_d(rd: u8, rs1: u8, rs2: u8) -> u32 {
        amo(0b00011, false, rd, rs1, rs2)
    }
    pub fn amoswap_w(rd: u8, rs1: u8, rs2: u8) -> u32 {
        amo(0b00001, true, rd, rs1, rs2)
    }
    pub fn amoadd_w(rd: u8, rs1: u8, rs2: u8) -> u32 {
        amo(0b00000, true, rd, rs1, rs2)
    }
    pub fn amoswap_d(rd: u8, rs1: u8, rs2: u8) -> u32 {
        amo(0b00001, false, rd, rs1, rs2)
    }
    pub fn amoadd_d(rd: u8, rs1: u8, rs2: u8) -> u32 {
        amo(0b00000, false, rd, rs1, rs2)
    }
    pub fn amoor_w(rd: u8, rs1: u8, rs2: u8) -> u32 {
        amo(0b01000, true, rd, rs1, rs2)
    }
    pub fn amoand_w(rd: u8, rs1: u8, rs2: u8) -> u32 {
        amo(0b01100, true, rd, rs1, rs2)
    }

    pub fn fence() -> u32 {
        i_type(0b0001111, 0, 0b000, 0, 0x0ff)
    }
    pub fn fence_i() -> u32 {
        i_type(0b0001111, 0, 0b001, 0, 0)
    }
    pub fn ecall() -> u32 {
        0x0000_0073
    }
    pub fn ebreak() -> u32 {
        0x0010_0073
    }
    pub fn mret() -> u32 {
        0x3020_0073
    }
    pub fn sret() -> u32 {
        0x1020_0073
    }
    pub fn wfi() -> u32 {
        0x1050_0073
    }
    pub fn sfence_vma(rs1: u8, rs2: u8) -> u32 {
        r_type(0b1110011, 0, 0b000, rs1, rs2, 0b0001001)
    }

    pub fn csrrw(rd: u8, csr: u16, rs1: u8) -> u32 {
        0b1110011 | (rd as u32) << 7 | 0b001 << 12 | (rs1 as u32) << 15 | (csr as u32) << 20
    }
    pub fn csrrs(rd: u8, csr: u16, rs1: u8) -> u32 {
        0b1110011 | (rd as u32) << 7 | 0b010 << 12 | (rs1 as u32) << 15 | (csr as u32) << 20
    }
    pub fn csrrc(rd: u8, csr: u16, rs1: u8) -> u32 {
        0b1110011 | (rd as u32) << 7 | 0b011 << 12 | (rs1 as u32) << 15 | (csr as u32) << 20
    }
    pub fn csrrwi(rd: u8, csr: u16, zimm: u8) -> u32 {
        0b1110011 | (rd as u32) << 7 | 0b101 << 12 | (zimm as u32) << 15 | (csr as u32) << 20
    }
    pub fn csrrsi(rd: u8, csr: u16, zimm: u8) -> u32 {
        0b1110011 | (rd as u32) << 7 | 0b110 << 12 | (zimm as u32) << 15 | (csr as u32) << 20
    }
    pub fn csrrci(rd: u8, csr: u16, zimm: u8) -> u32 {
        0b1110011 | (rd as u32) << 7 | 0b111 << 12 | (zimm as u32) << 15 | (csr as u32) << 20
    }

    /// Compressed encoders for the handful of forms the guests use.
    pub mod c {
        /// c.addi rd, imm (imm 6-bit signed, non-zero for a real add)
        pub fn addi(rd: u8, imm: i64) -> u16 {
            debug_assert!((-32..=31).contains(&imm));
            let imm = imm as u16;
            0b01 | ((imm & 0x1f) << 2) | ((rd as u16) << 7) | ((imm >> 5 & 1) << 12)
        }
        /// c.li rd, imm
        pub fn li(rd: u8, imm: i64) -> u16 {
            debug_assert!((-32..=31).contains(&imm));
            let imm = imm as u16;
            0b01 | (0b010 << 13) | ((imm & 0x1f) << 2) | ((rd as u16) << 7) | ((imm >> 5 & 1) << 12)
        }
        /// c.mv rd, rs2 (rs2 != 0)
        pub fn mv(rd: u8, rs2: u8) -> u16 {
            0b10 | (0b100 << 13) | ((rs2 as u16) << 2) | ((rd as u16) << 7)
        }
        /// c.add rd, rs2 (rs2 != 0)
        pub fn add(rd: u8, rs2: u8) -> u16 {
            0b10 | (0b100 << 13) | (1 << 12) | ((rs2 as u16) << 2) | ((rd as u16) << 7)
        }
        /// c.j offset
        pub fn j(off: i64) -> u16 {
            debug_assert!(off % 2 == 0 && (-2048..=2046).contains(&off));
            let o = off as u16;
            0b01 | (0b101 << 13)
                | ((o >> 11 & 1) << 12)
                | ((o >> 4 & 1) << 11)
                | ((o >> 8 & 0b11) << 9)
                | ((o >> 10 & 1) << 8)
                | ((o >> 6 & 1) << 7)
                | ((o >> 7 & 1) << 6)
                | ((o >> 1 & 0b111) << 3)
                | ((o >> 5 & 1) << 2)
        }
        /// c.nop
        pub fn nop() -> u16 {
            0x0001
        }
    }
}

/// Register aliases for readability in guest sources.
pub mod reg {
    pub const ZERO: u8 = 0;
    pub const RA: u8 = 1;
    pub const SP: u8 = 2;
    pub const GP: u8 = 3;
    pub const TP: u8 = 4;
    pub const T0: u8 = 5;
    pub const T1: u8 = 6;
    pub const T2: u8 = 7;
    pub const S0: u8 = 8;
    pub const S1: u8 = 9;
    pub const A0: u8 = 10;
    pub const A1: u8 = 11;
    pub const A2: u8 = 12;
    pub const A3: u8 = 13;
    pub const A4: u8 = 14;
    pub const A5: u8 = 15;
    pub const A6: u8 = 16;
    pub const A7: u8 = 17;
    pub const S2: u8 = 18;
    pub const S3: u8 = 19;
    pub const S4: u8 = 20;
    pub const S5: u8 = 21;
    pub const S6: u8 = 22;
    pub const S7: u8 = 23;
    pub const S8: u8 = 24;
    pub const S9: u8 = 25;
    pub const S10: u8 = 26;
    pub const S11: u8 = 27;
    pub const T3: u8 = 28;
    pub const T4: u8 = 29;
    pub const T5: u8 = 30;
    pub const T6: u8 = 31;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Label(usize);

enum Fixup {
    Branch { at: u64, enc: fn(u8, u8, i64) -> u32, rs1: u8, rs2: u8 },
    Jal { at: u64, rd: u8 },
    /// auipc+addi pair materializing an absolute address.
    La { at: u64, rd: u8 },
}

/// Assembles instructions at increasing addresses with label fixups.
pub struct Assembler {
    base: u64,
    buf: Vec<u8>,
    labels: Vec<Option<u64>>,
    fixups: Vec<(Label, Fixup)>,
}

impl Assembler {
    pub fn new(base: u64) -> Self {
        Assembler { base, buf: Vec::new(), labels: Vec::new(), fixups: Vec::new() }
    }

    pub fn pc(&self) -> u64 {
        self.base + self.buf.len() as u64
    }

    pub fn base(&self) -> u64 {
        self.base
    }

    /// Emit one 32-bit instruction.
    pub fn i(&mut self, word: u32) -> &mut Self {
        self.buf.extend_from_slice(&word.to_le_bytes());
        self
    }

    /// Emit one compressed instruction.
    pub fn c(&mut self, half: u16) -> &mut Self {
        self.buf.extend_from_slice(&half.to_le_bytes());
        self
    }

    pub fn raw_bytes(&mut self, bytes: &[u8]) -> &mut Self {
        self.buf.extend_from_slice(bytes);
        self
    }

    /// Align the current position with c.nop / nop padding.
    pub fn align(&mut self, to: u64) -> &mut Self {
        while self.pc() % to != 0 {
            if self.pc() % 4 != 0 && to >= 4 {
                self.c(enc::c::nop());
            } else {
                self.i(enc::addi(0, 0, 0));
            }
        }
        self
    }

    pub fn new_label(&mut self) -> Label {
        self.labels.push(None);
        Label(self.labels.len() - 1)
    }

    pub fn bind(&mut self, l: Label) -> &mut Self {
        assert!(self.labels[l.0].is_none(), "label bound twice");
        self.labels[l.0] = Some(self.pc());
        self
    }

    pub fn here(&mut self) -> Label {
        let l = self.new_label();
        self.bind(l);
        l
    }

    /// Branch to a label (forward or backward).
    pub fn branch(&mut self, enc: fn(u8, u8, i64) -> u32, rs1: u8, rs2: u8, l: Label) -> &mut Self {
        if let Some(target) = self.labels[l.0] {
            let off = target as i64 - self.pc() as i64;
            self.i(enc(rs1, rs2, off))
        } else {
            self.fixups.push((l, Fixup::Branch { at: self.pc(), enc, rs1, rs2 }));
            self.i(0)
        }
    }

    pub fn jal(&mut self, rd: u8, l: Label) -> &mut Self {
        if let Some(target) = self.labels[l.0] {
            let off = target as i64 - self.pc() as i64;
            self.i(enc::jal(rd, off))
        } else {
            self.fixups.push((l, Fixup::Jal { at: self.pc(), rd }));
            self.i(0)
        }
    }

    /// Load the absolute address of a label (auipc+addi pair).
    pub fn la(&mut self, rd: u8, l: Label) -> &mut Self {
        self.fixups.push((l, Fixup::La { at: self.pc(), rd }));
        self.i(0);
        self.i(0)
    }

    /// Materialize an arbitrary 64-bit constant into rd.
    pub fn li64(&mut self, rd: u8, value: u64) -> &mut Self {
        let v = value as i64;
        if (-2048..=2047).contains(&v) {
            return self.i(enc::addi(rd, 0, v));
        }
        if v == (v << 32) >> 32 {
            let hi = (v.wrapping_add(0x800) >> 12) << 12;
            // hi == 1<<31 is not lui-reachable; fall through to the long form.
            if hi != 1 << 31 {
                let lo = v - hi;
                self.i(enc::lui(rd, hi));
                if lo != 0 {
                    self.i(enc::addi(rd, rd, lo));
                }
                return self;
            }
        }
        // Materialize bits [63:32], then shift the low 32 bits in with
        // ori chunks (11+11+10 bits).
        self.li64(rd, (v >> 32) as u64);
        let low = value & 0xffff_ffff;
        self.i(enc::slli(rd, rd, 11));
        self.i(enc::ori(rd, rd, ((low >> 21) & 0x7ff) as i64));
        self.i(enc::slli(rd, rd, 11));
        self.i(enc::ori(rd, rd, ((low >> 10) & 0x7ff) as i64));
        self.i(enc::slli(rd, rd, 10));
        self.i(enc::ori(rd, rd, (low & 0x3ff) as i64));
        self
    }

    /// Finish assembly, applying fixups. Returns (base, bytes).
    pub fn finish(mut self) -> (u64, Vec<u8>) {
        for (label, fixup) in std::mem::take(&mut self.fixups) {
            let target =
                self.labels[label.0].unwrap_or_else(|| panic!("unbound label {:?}", label));
            match fixup {
                Fixup::Branch { at, enc, rs1, rs2 } => {
                    let word = enc(rs1, rs2, target as i64 - at as i64);
                    self.patch(at, word);
                }
                Fixup::Jal { at, rd } => {
                    let word = enc::jal(rd, target as i64 - at as i64);
                    self.patch(at, word);
                }
                Fixup::La { at, rd } => {
                    let off = target as i64 - at as i64;
                    let hi = (off.wrapping_add(0x800) >> 12) << 12;
                    let lo = off - hi;
                    self.patch(at, enc::auipc(rd, hi));
                    self.patch(at + 4, enc::addi(rd, rd, lo));
                }
            }
        }
        (self.base, self.buf)
    }

    fn patch(&mut self, addr: u64, word: u32) {
        let off = (addr - self.base) as usize;
        self.buf[off..off + 4].copy_from_slice(&word.to_le_bytes());
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::isa::{decode, Mnemonic};

    #[test]
    fn encode_decode_spot_checks() {
        let d = decode(enc::add(10, 10, 10)).unwrap();
        assert_eq!(d.mnemonic, Mnemonic::Add);
        assert_eq!(enc::add(10, 10, 10), 0x00a5_0533);
        let d = decode(enc::lw(10, 11, 0)).unwrap();
        assert_eq!(d.mnemonic, Mnemonic::Lw);
        assert_eq!((d.rd, d.rs1, d.imm), (10, 11, 0));
        let d = decode(enc::beq(5, 6, -8)).unwrap();
        assert_eq!(d.mnemonic, Mnemonic::Beq);
        assert_eq!(d.imm, -8);
        let d = decode(enc::csrrw(10, 0x300, 11)).unwrap();
        assert_eq!(d.mnemonic, Mnemonic::Csrrw);
        assert_eq!(d.imm, 0x300);
    }

    #[test]
    fn li64_produces_value() {
        // Checked through the interpreter in integration tests; here just
        // verify the simple 32-bit path decodes.
        let mut asm = Assembler::new(0x1000);
        asm.li64(5, 0x8000_0000);
        let (_, bytes) = asm.finish();
        assert!(bytes.len() >= 4);
    }

    #[test]
    fn labels_and_branches() {
        let mut asm = Assembler::new(0x1000);
        let done = asm.new_label();
        asm.i(enc::addi(5, 0, 1));
        asm.branch(enc::beq, 5, 5, done);
        asm.i(enc::addi(5, 0, 2));
        asm.bind(done);
        asm.i(enc::addi(6, 0, 3));
        let (_, bytes) = asm.finish();
        let w = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        let d = decode(w).unwrap();
        assert_eq!(d.mnemonic, Mnemonic::Beq);
        assert_eq!(d.imm, 8);
    }
}
