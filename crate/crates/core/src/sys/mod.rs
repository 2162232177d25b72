//! Privileged architecture: CSRs, trap handling, interrupt delivery, and
//! the SIMCTRL runtime-reconfiguration register layout.

pub mod sbi;
pub mod syscall;

use crate::isa::{csr, CsrAddress, DecodedInstruction, ExceptionCause, Mnemonic, Trap};
use std::collections::VecDeque;
use std::sync::atomic::{AtomicU64, Ordering};

pub const PRIV_U: u8 = 0;
pub const PRIV_S: u8 = 1;
pub const PRIV_M: u8 = 3;

// mstatus bits.
pub const MSTATUS_SIE: u64 = 1 << 1;
pub const MSTATUS_MIE: u64 = 1 << 3;
pub const MSTATUS_SPIE: u64 = 1 << 5;
pub const MSTATUS_MPIE: u64 = 1 << 7;
pub const MSTATUS_SPP: u64 = 1 << 8;
pub const MSTATUS_MPP: u64 = 0b11 << 11;
pub const MSTATUS_SUM: u64 = 1 << 18;
pub const MSTATUS_MXR: u64 = 1 << 19;
/// UXL/SXL hardwired to 64-bit.
const MSTATUS_XL: u64 = 0b10 << 32 | 0b10 << 34;
const SSTATUS_MASK: u64 =
    MSTATUS_SIE | MSTATUS_SPIE | MSTATUS_SPP | MSTATUS_SUM | MSTATUS_MXR | 0b10 << 32;
const MSTATUS_WMASK: u64 = MSTATUS_SIE
    | MSTATUS_MIE
    | MSTATUS_SPIE
    | MSTATUS_MPIE
    | MSTATUS_SPP
    | MSTATUS_MPP
    | MSTATUS_SUM
    | MSTATUS_MXR;

// Interrupt bits in mip/mie.
pub const MIP_SSIP: u64 = 1 << 1;
pub const MIP_MSIP: u64 = 1 << 3;
pub const MIP_STIP: u64 = 1 << 5;
pub const MIP_MTIP: u64 = 1 << 7;
pub const MIP_SEIP: u64 = 1 << 9;
pub const MIP_MEIP: u64 = 1 << 11;

const MISA_RV64IMAC_SU: u64 = (2 << 62) // MXL=64
    | 1 << 0  // A
    | 1 << 2  // C
    | 1 << 8  // I
    | 1 << 12 // M
    | 1 << 18 // S
    | 1 << 20; // U

/// Per-core privileged state. The interrupt-pending bits live outside in a
/// shared atomic (they are set cross-core by IPIs and timers).
pub struct PrivState {
    pub hartid: u64,
    pub mode: u8,
    pub mstatus: u64,
    pub mtvec: u64,
    pub stvec: u64,
    pub mepc: u64,
    pub sepc: u64,
    pub mcause: u64,
    pub scause: u64,
    pub mtval: u64,
    pub stval: u64,
    pub mie: u64,
    pub mideleg: u64,
    pub medeleg: u64,
    pub satp: u64,
    pub mscratch: u64,
    pub sscratch: u64,
    pub mcounteren: u64,
    pub scounteren: u64,
    pub minstret: u64,
    /// mcycle reads as local_clock + offset; writing mcycle sets the offset.
    pub mcycle_offset: i64,
    pub simctrl_error: bool,
    /// Ring of recent (cause, pc) pairs for crash diagnostics.
    pub recent_traps: VecDeque<(u64, u64)>,
    /// Traps taken without an intervening retired instruction.
    pub consecutive_traps: u32,
    pub traps_taken: u64,
    pub interrupts_taken: u64,
}

impl PrivState {
    pub fn new(hartid: u64, mode: u8) -> Self {
        PrivState {
            hartid,
            mode,
            mstatus: MSTATUS_XL,
            mtvec: 0,
            stvec: 0,
            mepc: 0,
            sepc: 0,
            mcause: 0,
            scause: 0,
            mtval: 0,
            stval: 0,
            mie: 0,
            mideleg: 0,
            medeleg: 0,
            satp: 0,
            mscratch: 0,
            sscratch: 0,
            mcounteren: u64::MAX,
            scounteren: u64::MAX,
            minstret: 0,
            mcycle_offset: 0,
            simctrl_error: false,
            recent_traps: VecDeque::with_capacity(8),
            consecutive_traps: 0,
            traps_taken: 0,
            interrupts_taken: 0,
        }
    }

    pub fn sum(&self) -> bool {
        self.mstatus & MSTATUS_SUM != 0
    }

    pub fn mxr(&self) -> bool {
        self.mstatus & MSTATUS_MXR != 0
    }
}

/// Side effects a CSR write imposes on the rest of the machine.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CsrEffect {
    None,
    /// satp written: flush the TLB models and both L0s.
    SatpWritten,
}

pub struct CsrResult {
    pub old: u64,
    pub effect: CsrEffect,
}

fn csr_will_write(instr: &DecodedInstruction, operand: u64) -> bool {
    match instr.mnemonic {
        Mnemonic::Csrrw | Mnemonic::Csrrwi => true,
        _ => operand != 0,
    }
}

fn csr_new_value(instr: &DecodedInstruction, old: u64, operand: u64) -> u64 {
    match instr.mnemonic {
        Mnemonic::Csrrw | Mnemonic::Csrrwi => operand,
        Mnemonic::Csrrs | Mnemonic::Csrrsi => old | operand,
        Mnemonic::Csrrc | Mnemonic::Csrrci => old & !operand,
        _ => unreachable!(),
    }
}

fn illegal(instr_bits: u64) -> Trap {
    Trap::new(ExceptionCause::IllegalInstruction, instr_bits)
}

/// Execute a CSR instruction against the privileged state. `operand` is the
/// rs1 value (or zimm for the immediate forms); `clock` is the core's local
/// cycle count. SIMCTRL (0x7C0) is intercepted by the caller and never
/// reaches this function.
pub fn csr_op(
    ps: &mut PrivState,
    mip: &AtomicU64,
    clock: u64,
    instr: &DecodedInstruction,
    operand: u64,
) -> Result<CsrResult, Trap> {
    let addr = CsrAddress::new(instr.imm as u16 & 0xfff);
    let will_write = csr_will_write(instr, operand);
    if addr.min_privilege() > ps.mode || (addr.is_read_only() && will_write) {
        return Err(illegal(0));
    }
    let a = addr.0;
    // Counter visibility for lower privileges.
    if matches!(a, csr::CYCLE | csr::TIME | csr::INSTRET) {
        let bit = 1 << (a - csr::CYCLE);
        if ps.mode < PRIV_M && ps.mcounteren & bit == 0 {
            return Err(illegal(0));
        }
        if ps.mode < PRIV_S && ps.scounteren & bit == 0 {
            return Err(illegal(0));
        }
    }

    let mip_now = mip.load(Ordering::Relaxed);
    let old = match a {
        csr::MSTATUS => ps.mstatus,
        csr::SSTATUS => ps.mstatus & SSTATUS_MASK,
        csr::MISA => MISA_RV64IMAC_SU,
        csr::MEDELEG => ps.medeleg,
        csr::MIDELEG => ps.mideleg,
        csr::MIE => ps.mie,
        csr::SIE => ps.mie & ps.mideleg,
        csr::MTVEC => ps.mtvec,
        csr::STVEC => ps.stvec,
        csr::MCOUNTEREN => ps.mcounteren,
        csr::SCOUNTEREN => ps.scounteren,
        csr::MSCRATCH => ps.mscratch,
        csr::SSCRATCH => ps.sscratch,
        csr::MEPC => ps.mepc,
        csr::SEPC => ps.sepc,
        csr::MCAUSE => ps.mcause,
        csr::SCAUSE => ps.scause,
        csr::MTVAL => ps.mtval,
        csr::STVAL => ps.stval,
        csr::MIP => mip_now,
        csr::SIP => mip_now & ps.mideleg,
        csr::SATP => ps.satp,
        csr::MCYCLE | csr::CYCLE => clock.wrapping_add(ps.mcycle_offset as u64),
        csr::TIME => clock,
        csr::MINSTRET | csr::INSTRET => ps.minstret,
        csr::MVENDORID | csr::MARCHID | csr::MIMPID => 0,
        csr::MHARTID => ps.hartid,
        _ => return Err(illegal(0)),
    };

    let mut effect = CsrEffect::None;
    if will_write {
        let new = csr_new_value(instr, old, operand);
        match a {
            csr::MSTATUS => {
                ps.mstatus = (ps.mstatus & !MSTATUS_WMASK) | (new & MSTATUS_WMASK);
                // MPP is WARL over {U, S, M}.
                if (ps.mstatus & MSTATUS_MPP) >> 11 == 2 {
                    ps.mstatus &= !MSTATUS_MPP;
                }
            }
            csr::SSTATUS => {
                let mask = SSTATUS_MASK & MSTATUS_WMASK;
                ps.mstatus = (ps.mstatus & !mask) | (new & mask);
            }
            csr::MEDELEG => ps.medeleg = new & 0xffff,
            csr::MIDELEG => ps.mideleg = new & (MIP_SSIP | MIP_STIP | MIP_SEIP),
            csr::MIE => ps.mie = new & 0xfff,
            csr::SIE => {
                ps.mie = (ps.mie & !ps.mideleg) | (new & ps.mideleg);
            }
            csr::MTVEC => ps.mtvec = new & !0b10,
            csr::STVEC => ps.stvec = new & !0b10,
            csr::MCOUNTEREN => ps.mcounteren = new,
            csr::SCOUNTEREN => ps.scounteren = new,
            csr::MSCRATCH => ps.mscratch = new,
            csr::SSCRATCH => ps.sscratch = new,
            csr::MEPC => ps.mepc = new & !1,
            csr::SEPC => ps.sepc = new & !1,
            csr::MCAUSE => ps.mcause = new,
            csr::SCAUSE => ps.scause = new,
            csr::MTVAL => ps.mtval = new,
            csr::STVAL => ps.stval = new,
            csr::MIP => {
                // Software-writable pending bits only.
                let wmask = MIP_SSIP | MIP_STIP | MIP_SEIP;
                let cur = mip.load(Ordering::Relaxed);
                mip.store((cur & !wmask) | (new & wmask), Ordering::Relaxed);
            }
            csr::SIP => {
                let wmask = MIP_SSIP & ps.mideleg;
                let cur = mip.load(Ordering::Relaxed);
                mip.store((cur & !wmask) | (new & wmask), Ordering::Relaxed);
            }
            csr::SATP => {
                // WARL: only Bare and Sv39 are implemented.
                let mode = new >> 60;
                if mode == 0 || mode == 8 {
                    ps.satp = new;
                    effect = CsrEffect::SatpWritten;
                }
            }
            csr::MCYCLE => ps.mcycle_offset = new.wrapping_sub(clock) as i64,
            csr::MINSTRET => ps.minstret = new,
            _ => return Err(illegal(0)),
        }
    }
    Ok(CsrResult { old, effect })
}

/// Highest-priority pending interrupt cause, if one is deliverable in the
/// current mode. Follows the architectural priority order.
pub fn check_interrupt(ps: &PrivState, mip: u64) -> Option<u64> {
    let pending = mip & ps.mie;
    if pending == 0 {
        return None;
    }
    const ORDER: [u64; 6] = [11, 3, 7, 9, 1, 5];
    let m_pending = pending & !ps.mideleg;
    if m_pending != 0 && (ps.mode < PRIV_M || ps.mstatus & MSTATUS_MIE != 0) {
        for cause in ORDER {
            if m_pending & (1 << cause) != 0 {
                return Some(cause);
            }
        }
    }
    let s_pending = pending & ps.mideleg;
    if s_pending != 0 && (ps.mode < PRIV_S || (ps.mode == PRIV_S && ps.mstatus & MSTATUS_SIE != 0))
    {
        for cause in ORDER {
            if s_pending & (1 << cause) != 0 {
                return Some(cause);
            }
        }
    }
    None
}

/// Take a trap: update the target mode's CSRs, switch modes, and return the
/// trap vector PC. The caller flushes L0 caches if the mode changed.
pub fn take_trap(ps: &mut PrivState, cause: u64, is_interrupt: bool, tval: u64, epc: u64) -> u64 {
    ps.traps_taken += 1;
    if is_interrupt {
        ps.interrupts_taken += 1;
    }
    if ps.recent_traps.len() == 8 {
        ps.recent_traps.pop_front();
    }
    ps.recent_traps.push_back((cause | (is_interrupt as u64) << 63, epc));
    if !is_interrupt {
        ps.consecutive_traps += 1;
    }

    let deleg = if is_interrupt { ps.mideleg } else { ps.medeleg };
    let delegated = ps.mode != PRIV_M && deleg & (1 << cause) != 0;
    let cause_val = cause | (is_interrupt as u64) << 63;
    if delegated {
        ps.scause = cause_val;
        ps.sepc = epc;
        ps.stval = tval;
        let sie = ps.mstatus & MSTATUS_SIE != 0;
        ps.mstatus &= !(MSTATUS_SPIE | MSTATUS_SPP | MSTATUS_SIE);
        if sie {
            ps.mstatus |= MSTATUS_SPIE;
        }
        if ps.mode == PRIV_S {
            ps.mstatus |= MSTATUS_SPP;
        }
        ps.mode = PRIV_S;
        vector_pc(ps.stvec, cause, is_interrupt)
    } else {
        ps.mcause = cause_val;
        ps.mepc = epc;
        ps.mtval = tval;
        let mie = ps.mstatus & MSTATUS_MIE != 0;
        ps.mstatus &= !(MSTATUS_MPIE | MSTATUS_MPP | MSTATUS_MIE);
        if mie {
            ps.mstatus |= MSTATUS_MPIE;
        }
        ps.mstatus |= (ps.mode as u64) << 11;
        ps.mode = PRIV_M;
        vector_pc(ps.mtvec, cause, is_interrupt)
    }
}

fn vector_pc(tvec: u64, cause: u64, is_interrupt: bool) -> u64 {
    let base = tvec & !0b11;
    if tvec & 1 != 0 && is_interrupt {
        base + 4 * cause
    } else {
        base
    }
}

/// MRET: return from an M-mode trap. Returns the new PC.
pub fn mret(ps: &mut PrivState) -> u64 {
    let mpp = ((ps.mstatus & MSTATUS_MPP) >> 11) as u8;
    ps.mode = mpp;
    let mpie = ps.mstatus & MSTATUS_MPIE != 0;
    ps.mstatus &= !(MSTATUS_MIE | MSTATUS_MPP);
    if mpie {
        ps.mstatus |= MSTATUS_MIE;
    }
    ps.mstatus |= MSTATUS_MPIE;
    ps.mepc
}

/// SRET: return from an S-mode trap. Returns the new PC.
pub fn sret(ps: &mut PrivState) -> u64 {
    let spp = if ps.mstatus & MSTATUS_SPP != 0 { PRIV_S } else { PRIV_U };
    ps.mode = spp;
    let spie = ps.mstatus & MSTATUS_SPIE != 0;
    ps.mstatus &= !(MSTATUS_SIE | MSTATUS_SPP);
    if spie {
        ps.mstatus |= MSTATUS_SIE;
    }
    ps.mstatus |= MSTATUS_SPIE;
    ps.sepc
}

/// SIMCTRL register layout: {bits 0-3 pipeline model id, bits 4-7 memory
/// model id, bit 8 line-size select (0 = 64B, 1 = 4096B), bit 9 execution
/// mode (0 = lockstep, 1 = parallel), bit 31 sticky error flag}.
pub mod simctrl {
    use crate::config::{ExecMode, MemoryModelKind, PipelineKind};

    pub const ERROR_BIT: u64 = 1 << 31;

    pub fn pipeline_id(kind: PipelineKind) -> u64 {
        match kind {
            PipelineKind::Atomic => 0,
            PipelineKind::Simple => 1,
            PipelineKind::InOrder => 2,
        }
    }

    pub fn pipeline_from_id(id: u64) -> Option<PipelineKind> {
        match id {
            0 => Some(PipelineKind::Atomic),
            1 => Some(PipelineKind::Simple),
            2 => Some(PipelineKind::InOrder),
            _ => None,
        }
    }

    pub fn memory_id(kind: MemoryModelKind) -> u64 {
        match kind {
            MemoryModelKind::Atomic => 0,
            MemoryModelKind::Tlb => 1,
            MemoryModelKind::Cache => 2,
            MemoryModelKind::Mesi => 3,
        }
    }

    pub fn memory_from_id(id: u64) -> Option<MemoryModelKind> {
        match id {
            0 => Some(MemoryModelKind::Atomic),
            1 => Some(MemoryModelKind::Tlb),
            2 => Some(MemoryModelKind::Cache),
            3 => Some(MemoryModelKind::Mesi),
            _ => None,
        }
    }

    pub fn compose(
        pipeline: PipelineKind,
        memory: MemoryModelKind,
        line_size: u64,
        mode: ExecMode,
        error: bool,
    ) -> u64 {
        pipeline_id(pipeline)
            | memory_id(memory) << 4
            | ((line_size == 4096) as u64) << 8
            | ((mode == ExecMode::Parallel) as u64) << 9
            | (error as u64) << 31
    }

    pub struct Decoded {
        pub pipeline: Option<PipelineKind>,
        pub memory: Option<MemoryModelKind>,
        pub line_size: u64,
        pub mode: ExecMode,
    }

    pub fn decode(value: u64) -> Decoded {
        Decoded {
            pipeline: pipeline_from_id(value & 0xf),
            memory: memory_from_id(value >> 4 & 0xf),
            line_size: if value >> 8 & 1 != 0 { 4096 } else { 64 },
            mode: if value >> 9 & 1 != 0 { ExecMode::Parallel } else { ExecMode::Lockstep },
        }
    }
}
