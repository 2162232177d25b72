//! RV64IMAC instruction definitions, decoding and synchronization
//! classification.
//!
//! Decoding is context-free: privilege checks happen at execution time, so
//! the same decoded form is valid in any mode. Compressed instructions are
//! expanded to their base mnemonic and keep `length == 2`.

mod decode;

pub use decode::{decode, decode16, decode32, parcel_length};

/// Operation kinds for RV64IMAC + Zicsr + Zifencei.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[rustfmt::skip]
pub enum Mnemonic {
    // RV32I / RV64I
    Lui, Auipc, Jal, Jalr,
    Beq, Bne, Blt, Bge, Bltu, Bgeu,
    Lb, Lh, Lw, Ld, Lbu, Lhu, Lwu,
    Sb, Sh, Sw, Sd,
    Addi, Slti, Sltiu, Xori, Ori, Andi, Slli, Srli, Srai,
    Add, Sub, Sll, Slt, Sltu, Xor, Srl, Sra, Or, And,
    Addiw, Slliw, Srliw, Sraiw,
    Addw, Subw, Sllw, Srlw, Sraw,
    Fence, FenceI,
    Ecall, Ebreak,
    // Zicsr
    Csrrw, Csrrs, Csrrc, Csrrwi, Csrrsi, Csrrci,
    // M
    Mul, Mulh, Mulhsu, Mulhu, Div, Divu, Rem, Remu,
    Mulw, Divw, Divuw, Remw, Remuw,
    // A
    LrW, ScW, AmoswapW, AmoaddW, AmoxorW, AmoandW, AmoorW,
    AmominW, AmomaxW, AmominuW, AmomaxuW,
    LrD, ScD, AmoswapD, AmoaddD, AmoxorD, AmoandD, AmoorD,
    AmominD, AmomaxD, AmominuD, AmomaxuD,
    // Privileged
    Mret, Sret, Wfi, SfenceVma,
}

/// How an instruction interacts with the rest of the system. Synchronization
/// points are injected around `MemoryOp` and `ControlRegOp`; `ControlFlow`
/// ends a basic block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SyncClass {
    None,
    MemoryOp,
    ControlRegOp,
    ControlFlow,
}

impl Mnemonic {
    /// Every mnemonic has exactly one class; this is the partition tested by
    /// `classify_sync`.
    pub fn sync_class(self) -> SyncClass {
        use Mnemonic::*;
        match self {
            Lb | Lh | Lw | Ld | Lbu | Lhu | Lwu | Sb | Sh | Sw | Sd | LrW | ScW | AmoswapW
            | AmoaddW | AmoxorW | AmoandW | AmoorW | AmominW | AmomaxW | AmominuW | AmomaxuW
            | LrD | ScD | AmoswapD | AmoaddD | AmoxorD | AmoandD | AmoorD | AmominD | AmomaxD
            | AmominuD | AmomaxuD => SyncClass::MemoryOp,
            Csrrw | Csrrs | Csrrc | Csrrwi | Csrrsi | Csrrci | Fence | FenceI | SfenceVma
            | Wfi => SyncClass::ControlRegOp,
            Beq | Bne | Blt | Bge | Bltu | Bgeu | Jal | Jalr | Ecall | Ebreak | Mret | Sret => {
                SyncClass::ControlFlow
            }
            _ => SyncClass::None,
        }
    }

    pub fn is_load(self) -> bool {
        use Mnemonic::*;
        matches!(self, Lb | Lh | Lw | Ld | Lbu | Lhu | Lwu)
    }

    pub fn is_store(self) -> bool {
        use Mnemonic::*;
        matches!(self, Sb | Sh | Sw | Sd)
    }

    pub fn is_amo(self) -> bool {
        use Mnemonic::*;
        matches!(
            self,
            LrW | ScW
                | AmoswapW
                | AmoaddW
                | AmoxorW
                | AmoandW
                | AmoorW
                | AmominW
                | AmomaxW
                | AmominuW
                | AmomaxuW
                | LrD
                | ScD
                | AmoswapD
                | AmoaddD
                | AmoxorD
                | AmoandD
                | AmoorD
                | AmominD
                | AmomaxD
                | AmominuD
                | AmomaxuD
        )
    }

    /// Conditional branch (has both a taken and a fall-through edge).
    pub fn is_cond_branch(self) -> bool {
        use Mnemonic::*;
        matches!(self, Beq | Bne | Blt | Bge | Bltu | Bgeu)
    }

    pub fn is_csr_op(self) -> bool {
        use Mnemonic::*;
        matches!(self, Csrrw | Csrrs | Csrrc | Csrrwi | Csrrsi | Csrrci)
    }
}

/// A fully decoded instruction.
///
/// `imm` holds the sign-extended immediate; for CSR instructions it holds the
/// 12-bit CSR address (and `rs1` the zimm for the immediate forms), for
/// shifts the shift amount.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecodedInstruction {
    pub mnemonic: Mnemonic,
    pub rd: u8,
    pub rs1: u8,
    pub rs2: u8,
    pub imm: i64,
    /// 2 for compressed encodings, 4 otherwise.
    pub length: u8,
    pub sync_class: SyncClass,
}

impl DecodedInstruction {
    pub fn new(mnemonic: Mnemonic, rd: u8, rs1: u8, rs2: u8, imm: i64, length: u8) -> Self {
        debug_assert!(rd < 32 && rs1 < 32 && rs2 < 32);
        debug_assert!(length == 2 || length == 4);
        DecodedInstruction { mnemonic, rd, rs1, rs2, imm, length, sync_class: mnemonic.sync_class() }
    }

    /// Memory access width in bytes for loads/stores/atomics.
    pub fn access_width(&self) -> u64 {
        use Mnemonic::*;
        match self.mnemonic {
            Lb | Lbu | Sb => 1,
            Lh | Lhu | Sh => 2,
            Lw | Lwu | Sw => 4,
            Ld | Sd => 8,
            m if m.is_amo() => {
                if matches!(
                    m,
                    LrW | ScW
                        | AmoswapW
                        | AmoaddW
                        | AmoxorW
                        | AmoandW
                        | AmoorW
                        | AmominW
                        | AmomaxW
                        | AmominuW
                        | AmomaxuW
                ) {
                    4
                } else {
                    8
                }
            }
            _ => 0,
        }
    }
}

/// Classify an instruction for synchronization purposes.
///
/// Loads/stores/atomics are `MemoryOp`; CSR accesses, fences and WFI are
/// `ControlRegOp`; branches, jumps and trap-raising instructions are
/// `ControlFlow`; everything else has no externally visible interaction.
pub fn classify_sync(instr: &DecodedInstruction) -> SyncClass {
    instr.mnemonic.sync_class()
}

/// Synchronous exception causes, encoded per the privileged specification.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum ExceptionCause {
    InstructionMisaligned = 0,
    InstructionAccessFault = 1,
    IllegalInstruction = 2,
    Breakpoint = 3,
    LoadMisaligned = 4,
    LoadAccessFault = 5,
    StoreMisaligned = 6,
    StoreAccessFault = 7,
    EcallFromU = 8,
    EcallFromS = 9,
    EcallFromM = 11,
    InstructionPageFault = 12,
    LoadPageFault = 13,
    StorePageFault = 15,
}

/// A trap to be raised: cause code plus the auxiliary trap value (faulting
/// address, offending instruction bits, ...).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Trap {
    pub cause: ExceptionCause,
    pub tval: u64,
}

impl Trap {
    pub fn new(cause: ExceptionCause, tval: u64) -> Self {
        Trap { cause, tval }
    }
}

/// Interrupt causes (the bit index in mip/mie).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum InterruptCause {
    SupervisorSoftware = 1,
    MachineSoftware = 3,
    SupervisorTimer = 5,
    MachineTimer = 7,
    SupervisorExternal = 9,
    MachineExternal = 11,
}

/// A 12-bit CSR address. The standard encoding derives read/write
/// permission and the minimum privilege from the top nibbles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CsrAddress(pub u16);

impl CsrAddress {
    pub fn new(addr: u16) -> Self {
        debug_assert!(addr < 0x1000);
        CsrAddress(addr)
    }

    /// Bits [11:10] == 0b11 marks a read-only CSR.
    pub fn is_read_only(self) -> bool {
        self.0 >> 10 == 0b11
    }

    /// Minimum privilege level (bits [9:8]): 0 user, 1 supervisor, 3 machine.
    pub fn min_privilege(self) -> u8 {
        ((self.0 >> 8) & 0b11) as u8
    }
}

/// CSR address constants used by the simulator.
pub mod csr {
    pub const FFLAGS: u16 = 0x001; // decoded but unsupported (no F/D)
    pub const CYCLE: u16 = 0xC00;
    pub const TIME: u16 = 0xC01;
    pub const INSTRET: u16 = 0xC02;
    pub const SSTATUS: u16 = 0x100;
    pub const SIE: u16 = 0x104;
    pub const STVEC: u16 = 0x105;
    pub const SCOUNTEREN: u16 = 0x106;
    pub const SSCRATCH: u16 = 0x140;
    pub const SEPC: u16 = 0x141;
    pub const SCAUSE: u16 = 0x142;
    pub const STVAL: u16 = 0x143;
    pub const SIP: u16 = 0x144;
    pub const SATP: u16 = 0x180;
    pub const MSTATUS: u16 = 0x300;
    pub const MISA: u16 = 0x301;
    pub const MEDELEG: u16 = 0x302;
    pub const MIDELEG: u16 = 0x303;
    pub const MIE: u16 = 0x304;
    pub const MTVEC: u16 = 0x305;
    pub const MCOUNTEREN: u16 = 0x306;
    pub const MSCRATCH: u16 = 0x340;
    pub const MEPC: u16 = 0x341;
    pub const MCAUSE: u16 = 0x342;
    pub const MTVAL: u16 = 0x343;
    pub const MIP: u16 = 0x344;
    pub const MCYCLE: u16 = 0xB00;
    pub const MINSTRET: u16 = 0xB02;
    pub const MVENDORID: u16 = 0xF11;
    pub const MARCHID: u16 = 0xF12;
    pub const MIMPID: u16 = 0xF13;
    pub const MHARTID: u16 = 0xF14;

    /// Vendor-defined simulator control register, in the custom
    /// machine-mode read/write range (0x7C0-0x7FF).
    pub const SIMCTRL: u16 = 0x7C0;
}

/// The decode error: the encoding is not a defined RV64IMAC instruction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IllegalInstruction(pub u32);

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sync_class_examples() {
        // LW a0,0(a1)
        let lw = decode(0x0005_a503).unwrap();
        assert_eq!(lw.mnemonic, Mnemonic::Lw);
        assert_eq!(classify_sync(&lw), SyncClass::MemoryOp);
        // CSRRW a0, mstatus, a1
        let csrrw = decode(0x3005_9573).unwrap();
        assert_eq!(csrrw.mnemonic, Mnemonic::Csrrw);
        assert_eq!(classify_sync(&csrrw), SyncClass::ControlRegOp);
        // ADD a0,a1,a2
        let add = decode(0x00c5_8533).unwrap();
        assert_eq!(add.mnemonic, Mnemonic::Add);
        assert_eq!(classify_sync(&add), SyncClass::None);
    }

    #[test]
    fn csr_address_privilege() {
        assert!(CsrAddress::new(csr::SIMCTRL).min_privilege() == 3);
        assert!(!CsrAddress::new(csr::SIMCTRL).is_read_only());
        assert!(CsrAddress::new(csr::MHARTID).is_read_only());
        assert_eq!(CsrAddress::new(csr::SSTATUS).min_privilege(), 1);
        assert_eq!(CsrAddress::new(csr::CYCLE).min_privilege(), 0);
    }
}
