//! The block execution engine.
//!
//! `run_slice` runs one core from its saved continuation until the next
//! yield (or wait/exit), returning the cycle count to the scheduler. The
//! continuation (`Resume`) is advanced *before* any yield so no side effect
//! is ever replayed. Synchronization points sit immediately before every
//! memory and control-register operation and at block ends; batched
//! pending cycles are flushed there.

use crate::config::{EmulationTarget, ExecMode, MemoryModelKind};
use crate::isa::{csr, ExceptionCause, Mnemonic, SyncClass, Trap};
use crate::machine::{
    Bus, Core, CurrentBlock, Machine, NextPc, PendingChain, PendingSwitch, Resume, RunState,
    StartRequest, WaitKind,
};
use crate::mem::{self, AccessCtx};
use crate::pipeline::create_model;
use crate::sched::EventKind;
use crate::sys::{self, sbi, simctrl, syscall, PRIV_M, PRIV_S, PRIV_U};
use crate::xlat::{self, BlockEnd, BlockLink, ChainEdge, FlushReason, Step, TransCtx};
use std::sync::atomic::Ordering;

/// Why a slice returned to the scheduler.
#[derive(Debug)]
pub enum SliceEvent {
    /// Suspend for n >= 1 cycles.
    Yield(u64),
    /// Parked (WFI, futex, rendezvous); `state` holds the reason.
    Wait,
    /// This core exited (user-target thread exit).
    Exited,
    /// The whole simulation is over (exit flag set).
    Shutdown,
    /// Instruction budget exhausted.
    LimitReached,
    /// Parallel mode: the stop flag was observed at a block end.
    StopRequested,
    /// Unrecoverable simulation error (guest trap loop etc.).
    Fatal(String),
}

fn fetch_ctx(core: &Core) -> AccessCtx {
    AccessCtx { satp: core.ps.satp, priv_mode: core.ps.mode, sum: false, mxr: false }
}

fn data_ctx(core: &Core) -> AccessCtx {
    AccessCtx {
        satp: core.ps.satp,
        priv_mode: core.ps.mode,
        sum: core.ps.sum(),
        mxr: core.ps.mxr(),
    }
}

fn trans_ctx(core: &Core) -> TransCtx {
    let sv39 = core.ps.mode != PRIV_M && mem::satp_mode(core.ps.satp) == mem::SATP_MODE_SV39;
    TransCtx {
        mode: core.ps.mode,
        asid: if sv39 { mem::satp_asid(core.ps.satp) } else { 0 },
        sv39,
    }
}

fn sext32(v: u64) -> u64 {
    v as i32 as i64 as u64
}

/// Run core `slot` until it yields. The core is temporarily moved out of
/// the machine so cross-core effects (coherence, IPIs, clone) can borrow
/// the rest freely.
pub fn run_slice(m: &mut Machine, slot: usize) -> SliceEvent {
    let mut core = std::mem::replace(&mut m.cores[slot], Core::placeholder());
    let ev = slice_loop(m, slot, &mut core);
    m.cores[slot] = core;
    ev
}

fn slice_loop(m: &mut Machine, slot: usize, core: &mut Core) -> SliceEvent {
    loop {
        match core.resume {
            Resume::Dispatch => {
                let tctx = trans_ctx(core);
                let idx = match core.cache.lookup(core.pc, tctx) {
                    Some(i) => i,
                    None => {
                        let actx = fetch_ctx(core);
                        let i = xlat::translate(
                            &mut core.cache,
                            &m.gmem,
                            &actx,
                            tctx,
                            core.model.as_mut(),
                            m.shmem.line_size,
                            core.pc,
                        );
                        if m.cfg.dump_blocks {
                            eprintln!("{}", core.cache.slot(i).block);
                        }
                        i
                    }
                };
                let serial = core.cache.slot(idx).serial;
                let block = core.cache.slot(idx).block.clone();
                if let Some(pch) = core.pending_chain.take() {
                    if block.phys_start_line != u64::MAX {
                        let guard = if block.start_vpc & !0xfff != pch.from_page {
                            Some(block.phys_start_line)
                        } else {
                            None
                        };
                        core.cache.set_link(
                            pch.idx,
                            pch.serial,
                            pch.edge,
                            BlockLink { idx, serial, guard_phys_line: guard },
                        );
                    }
                }
                core.cur = Some(CurrentBlock { block, idx, serial });
                core.resume = Resume::Enter { skip_icheck: false };
            }

            Resume::Enter { skip_icheck } => {
                let cur = core.cur.as_ref().expect("Enter without a block");
                if let Some(g) = cur.block.cross_page_guard {
                    // Re-read the second page's parcel; on any difference
                    // (or a fresh fault) retranslate under current state.
                    let actx = fetch_ctx(core);
                    let fresh = mem::fetch_translate(&m.gmem, &actx, g.second_page_vaddr)
                        .map(|p| m.gmem.read_u16(p));
                    if fresh != Ok(g.expected) {
                        let (idx, start) = (cur.idx, cur.block.start_vpc);
                        core.cur = None;
                        core.cache.invalidate(idx);
                        core.cache.guard_retranslations += 1;
                        core.pc = start;
                        core.resume = Resume::Dispatch;
                        continue;
                    }
                }
                core.block_execs += 1;
                core.pending_cycles += core.cur.as_ref().unwrap().block.entry_cost as u64;
                core.resume = Resume::Step { idx: 0, phase: if skip_icheck { 1 } else { 0 } };
            }

            Resume::Step { idx, phase } => {
                let blk = core.cur.as_ref().expect("Step without a block").block.clone();
                match exec_steps(m, slot, core, &blk, idx, phase) {
                    StepsOut::Yield(n) => return SliceEvent::Yield(n),
                    StepsOut::Continue => {}
                    StepsOut::Event(e) => return e,
                }
            }

            Resume::BlockEnd { next } => {
                // Flush batched cycles. A model that tracks no cycles still
                // yields one per block in lockstep, or a spinning core
                // would never hand the scheduler to its peers.
                let mut n = core.pending_cycles;
                if n == 0
                    && m.exec_mode == ExecMode::Lockstep
                    && !core.model.tracks_cycles()
                    && !core.block_end_flushed
                {
                    n = 1;
                }
                if n > 0 {
                    core.pending_cycles = 0;
                    core.yields += 1;
                    core.block_end_flushed = true;
                    return SliceEvent::Yield(n);
                }
                if core.retired_batch > 0 {
                    m.shared.retired.fetch_add(core.retired_batch, Ordering::Relaxed);
                    core.retired_batch = 0;
                }
                if m.shared.exit_flag.load(Ordering::Relaxed) {
                    return SliceEvent::Shutdown;
                }
                if let Some(limit) = m.cfg.max_insns {
                    if m.shared.retired.load(Ordering::Relaxed) >= limit {
                        return SliceEvent::LimitReached;
                    }
                }
                if m.exec_mode == ExecMode::Parallel {
                    if m.shared.stop.load(Ordering::Relaxed) {
                        return SliceEvent::StopRequested;
                    }
                    // Wall-derived timer in parallel mode.
                    let cmp = m.shared.mtimecmp[core.index].load(Ordering::Relaxed);
                    if cmp != u64::MAX && wall_time(m) >= cmp {
                        m.shared.set_mip_bits(core.index, sys::MIP_STIP);
                        m.shared.mtimecmp[core.index].store(u64::MAX, Ordering::Relaxed);
                    }
                } else if m.pending_switch.is_some() {
                    // Join the reconfiguration rendezvous; the driver
                    // commits the switch once every running core arrives.
                    m.pending_switch.as_mut().unwrap().arrived |= 1 << slot;
                    core.state = RunState::Waiting(WaitKind::Rendezvous);
                    return SliceEvent::Wait;
                }
                core.block_end_flushed = false;
                let mip = m.shared.mip[core.index].load(Ordering::Relaxed);
                if let Some(cause) = sys::check_interrupt(&core.ps, mip) {
                    core.pc = next.vpc();
                    core.pending_chain = None;
                    core.resume = Resume::Trap { cause, interrupt: true, tval: 0 };
                    continue;
                }
                match next {
                    NextPc::Chain { link, vpc, rechain } => {
                        let mut target = None;
                        if let Some(slot_ref) = core.cache.follow(link) {
                            let ok = match link.guard_phys_line {
                                None => true,
                                Some(expect) => {
                                    // Cross-page link: the L0 I-cache must
                                    // confirm the target still maps where it
                                    // was translated from. A hit doubles as
                                    // the block-entry access.
                                    let lmask = !(m.shmem.line_size - 1);
                                    mem::icache_link_check(&mut m.mems[slot], vpc)
                                        .is_some_and(|b| b & lmask == expect)
                                }
                            };
                            if ok {
                                target =
                                    Some((slot_ref.block.clone(), link.idx, slot_ref.serial));
                            }
                        }
                        match target {
                            Some((block, idx, serial)) => {
                                core.chain_follows += 1;
                                core.cur = Some(CurrentBlock { block, idx, serial });
                                core.resume =
                                    Resume::Enter { skip_icheck: link.guard_phys_line.is_some() };
                            }
                            None => {
                                core.pc = vpc;
                                core.pending_chain = rechain;
                                core.resume = Resume::Dispatch;
                            }
                        }
                    }
                    NextPc::Vpc { vpc, chain } => {
                        core.pc = vpc;
                        core.pending_chain = chain;
                        core.resume = Resume::Dispatch;
                    }
                }
            }

            Resume::Trap { cause, interrupt, tval } => {
                if core.pending_cycles > 0 {
                    let n = core.pending_cycles;
                    core.pending_cycles = 0;
                    core.yields += 1;
                    return SliceEvent::Yield(n);
                }
                if core.ps.consecutive_traps >= 64 {
                    return SliceEvent::Fatal(trap_loop_dump(core));
                }
                let old_mode = core.ps.mode;
                let target = sys::take_trap(&mut core.ps, cause, interrupt, tval, core.pc);
                if core.ps.mode != old_mode {
                    // L0 entries are only valid for one privilege context.
                    m.mems[slot].flush_l0();
                }
                core.pc = target;
                core.pending_chain = None;
                core.cur = None;
                core.resume = Resume::Dispatch;
            }
        }
    }
}

fn trap_loop_dump(core: &Core) -> String {
    let mut s = format!(
        "trap loop on core {}: pc={:#x} mode={} recent traps:",
        core.index, core.pc, core.ps.mode
    );
    for (cause, pc) in &core.ps.recent_traps {
        s.push_str(&format!(" (cause={cause:#x} pc={pc:#x})"));
    }
    s
}

fn wall_time(m: &Machine) -> u64 {
    m.shared.wall_start.elapsed().as_nanos() as u64
}

enum StepsOut {
    Yield(u64),
    Continue,
    Event(SliceEvent),
}

/// Execute steps of the current block starting at (idx, phase) until a
/// yield or a control transfer.
fn exec_steps(
    m: &mut Machine,
    slot: usize,
    core: &mut Core,
    blk: &xlat::TranslatedBlock,
    mut idx: u32,
    mut phase: u8,
) -> StepsOut {
    macro_rules! yield_at {
        ($resume:expr, $n:expr) => {{
            core.resume = $resume;
            return StepsOut::Yield($n);
        }};
    }
    loop {
        if idx as usize == blk.steps.len() {
            match blk.end {
                BlockEnd::FetchFault { trap, pc } => {
                    core.pc = pc;
                    core.resume =
                        Resume::Trap { cause: trap.cause as u64, interrupt: false, tval: trap.tval };
                }
                BlockEnd::Fallthrough => {
                    let vpc = blk.fallthrough_vpc();
                    let next = next_via(core, ChainEdge::Fallthrough, vpc, blk);
                    core.resume = Resume::BlockEnd { next };
                }
                BlockEnd::Branch | BlockEnd::Jump => {
                    unreachable!("transfer steps set the continuation themselves")
                }
            }
            return StepsOut::Continue;
        }
        let step = &blk.steps[idx as usize];

        if phase == 0 {
            if step.icheck {
                match icache_step(m, slot, core, step.pc) {
                    Ok(0) => {}
                    Ok(lat) => yield_at!(Resume::Step { idx, phase: 1 }, lat),
                    Err(e) => {
                        raise(core, step.pc, e);
                        return StepsOut::Continue;
                    }
                }
            }
            phase = 1;
        }
        if phase == 1 {
            if step.icheck_cross {
                match icache_step(m, slot, core, step.pc + 2) {
                    Ok(0) => {}
                    Ok(lat) => yield_at!(Resume::Step { idx, phase: 2 }, lat),
                    Err(e) => {
                        raise(core, step.pc, e);
                        return StepsOut::Continue;
                    }
                }
            }
        }

        // Synchronization point before every memory / control-register op.
        let sync = matches!(step.instr.sync_class, SyncClass::MemoryOp | SyncClass::ControlRegOp);
        if sync && core.pending_cycles > 0 {
            let n = core.pending_cycles;
            core.pending_cycles = 0;
            core.yields += 1;
            yield_at!(Resume::Step { idx, phase: 2 }, n);
        }

        match exec_one(m, slot, core, blk, step, idx) {
            ExecOut::Next => {
                idx += 1;
                phase = 0;
            }
            ExecOut::NextYield(lat) => yield_at!(Resume::Step { idx: idx + 1, phase: 0 }, lat),
            ExecOut::Control => return StepsOut::Continue,
            ExecOut::Event(e) => return StepsOut::Event(e),
        }
    }
}

fn raise(core: &mut Core, pc: u64, trap: Trap) {
    core.pc = pc;
    core.resume = Resume::Trap { cause: trap.cause as u64, interrupt: false, tval: trap.tval };
}

fn icache_step(m: &mut Machine, slot: usize, core: &Core, vaddr: u64) -> Result<u64, Trap> {
    let actx = fetch_ctx(core);
    mem::icache_access(slot, &mut m.mems, &mut m.shmem, &m.gmem, &actx, vaddr)
        .map_err(|f| f.to_trap())
}

enum ExecOut {
    Next,
    NextYield(u64),
    /// The continuation was set (block end, trap, wait target).
    Control,
    Event(SliceEvent),
}

fn retire(_m: &Machine, core: &mut Core, cost: u32) {
    core.ps.minstret += 1;
    core.ps.consecutive_traps = 0;
    core.pending_cycles += cost as u64;
    core.retired_batch += 1;
}

/// Successor resolution for a block edge: prefer an existing link, else
/// dispatch and remember the edge for chaining.
fn next_via(core: &Core, edge: ChainEdge, vpc: u64, blk: &xlat::TranslatedBlock) -> NextPc {
    let cur = core.cur.as_ref().unwrap();
    let from_page = blk.steps.last().map_or(blk.start_vpc, |s| s.pc) & !0xfff;
    let rechain =
        Some(PendingChain { idx: cur.idx, serial: cur.serial, edge, from_page });
    let slot = core.cache.slot(cur.idx);
    let link = match edge {
        ChainEdge::Taken => slot.taken_link,
        ChainEdge::Fallthrough => slot.fall_link,
    };
    match link {
        Some(l) => NextPc::Chain { link: l, vpc, rechain },
        None => NextPc::Vpc { vpc, chain: rechain },
    }
}

fn exec_one(
    m: &mut Machine,
    slot: usize,
    core: &mut Core,
    blk: &xlat::TranslatedBlock,
    step: &Step,
    _idx: u32,
) -> ExecOut {
    use Mnemonic::*;
    let instr = &step.instr;
    let rs1v = core.regs[instr.rs1 as usize];
    let rs2v = core.regs[instr.rs2 as usize];
    let pc = step.pc;
    let next_pc = pc + instr.length as u64;

    macro_rules! wr {
        ($v:expr) => {
            if instr.rd != 0 {
                core.regs[instr.rd as usize] = $v;
            }
        };
    }
    macro_rules! simple {
        ($v:expr) => {{
            wr!($v);
            retire(m, core, step.cost);
            return ExecOut::Next;
        }};
    }

    match instr.mnemonic {
        Lui => simple!(instr.imm as u64),
        Auipc => simple!(pc.wrapping_add(instr.imm as u64)),
        Addi => simple!(rs1v.wrapping_add(instr.imm as u64)),
        Slti => simple!(((rs1v as i64) < instr.imm) as u64),
        Sltiu => simple!((rs1v < instr.imm as u64) as u64),
        Xori => simple!(rs1v ^ instr.imm as u64),
        Ori => simple!(rs1v | instr.imm as u64),
        Andi => simple!(rs1v & instr.imm as u64),
        Slli => simple!(rs1v << instr.imm),
        Srli => simple!(rs1v >> instr.imm),
        Srai => simple!(((rs1v as i64) >> instr.imm) as u64),
        Addiw => simple!(sext32(rs1v.wrapping_add(instr.imm as u64))),
        Slliw => simple!(sext32((rs1v as u32 as u64) << instr.imm)),
        Srliw => simple!(sext32((rs1v as u32 >> instr.imm) as u64)),
        Sraiw => simple!(((rs1v as i32) >> instr.imm) as i64 as u64),
        Add => simple!(rs1v.wrapping_add(rs2v)),
        Sub => simple!(rs1v.wrapping_sub(rs2v)),
        Sll => simple!(rs1v << (rs2v & 63)),
        Slt => simple!(((rs1v as i64) < rs2v as i64) as u64),
        Sltu => simple!((rs1v < rs2v) as u64),
        Xor => simple!(rs1v ^ rs2v),
        Srl => simple!(rs1v >> (rs2v & 63)),
        Sra => simple!(((rs1v as i64) >> (rs2v & 63)) as u64),
        Or => simple!(rs1v | rs2v),
        And => simple!(rs1v & rs2v),
        Addw => simple!(sext32(rs1v.wrapping_add(rs2v))),
        Subw => simple!(sext32(rs1v.wrapping_sub(rs2v))),
        Sllw => simple!(sext32((rs1v as u32 as u64) << (rs2v & 31))),
        Srlw => simple!(sext32((rs1v as u32 >> (rs2v & 31)) as u64)),
        Sraw => simple!(((rs1v as i32) >> (rs2v & 31)) as i64 as u64),
        Mul => simple!(rs1v.wrapping_mul(rs2v)),
        Mulh => simple!(((rs1v as i64 as i128 * rs2v as i64 as i128) >> 64) as u64),
        Mulhsu => simple!(((rs1v as i64 as i128).wrapping_mul(rs2v as u128 as i128) >> 64) as u64),
        Mulhu => simple!(((rs1v as u128 * rs2v as u128) >> 64) as u64),
        Div => simple!(div_signed(rs1v as i64, rs2v as i64) as u64),
        Divu => simple!(if rs2v == 0 { u64::MAX } else { rs1v / rs2v }),
        Rem => simple!(rem_signed(rs1v as i64, rs2v as i64) as u64),
        Remu => simple!(if rs2v == 0 { rs1v } else { rs1v % rs2v }),
        Mulw => simple!(sext32(rs1v.wrapping_mul(rs2v))),
        Divw => simple!(div_signed(rs1v as i32 as i64, rs2v as i32 as i64) as i32 as i64 as u64),
        Divuw => {
            let (a, b) = (rs1v as u32, rs2v as u32);
            simple!(sext32(if b == 0 { u32::MAX as u64 } else { (a / b) as u64 }))
        }
        Remw => simple!(rem_signed(rs1v as i32 as i64, rs2v as i32 as i64) as i32 as i64 as u64),
        Remuw => {
            let (a, b) = (rs1v as u32, rs2v as u32);
            simple!(sext32(if b == 0 { a as u64 } else { (a % b) as u64 }))
        }

        m_ if m_.is_load() => {
            let addr = rs1v.wrapping_add(instr.imm as u64);
            let width = instr.access_width();
            let mut bus = Bus { shared: &m.shared };
            match mem::load(slot, &mut m.mems, &mut m.shmem, &m.gmem, &mut bus, &data_ctx(core), addr, width)
            {
                Ok((raw, lat)) => {
                    let v = match instr.mnemonic {
                        Lb => raw as i8 as i64 as u64,
                        Lh => raw as i16 as i64 as u64,
                        Lw => sext32(raw),
                        _ => raw,
                    };
                    wr!(v);
                    retire(m, core, step.cost);
                    if lat > 0 {
                        return ExecOut::NextYield(lat);
                    }
                    ExecOut::Next
                }
                Err(f) => {
                    raise(core, pc, f.to_trap());
                    ExecOut::Control
                }
            }
        }
        m_ if m_.is_store() => {
            let addr = rs1v.wrapping_add(instr.imm as u64);
            let width = instr.access_width();
            let mut bus = Bus { shared: &m.shared };
            match mem::store(slot, &mut m.mems, &mut m.shmem, &m.gmem, &mut bus, &data_ctx(core), addr, width, rs2v)
            {
                Ok(lat) => {
                    retire(m, core, step.cost);
                    // A device store may have ended the run.
                    if m.shared.exit_flag.load(Ordering::Relaxed) {
                        core.resume = Resume::Step { idx: _idx + 1, phase: 0 };
                        return ExecOut::Event(SliceEvent::Shutdown);
                    }
                    if lat > 0 {
                        return ExecOut::NextYield(lat);
                    }
                    ExecOut::Next
                }
                Err(f) => {
                    raise(core, pc, f.to_trap());
                    ExecOut::Control
                }
            }
        }
        LrW | LrD => {
            let width = instr.access_width();
            match mem::load_reserved(slot, &mut m.mems, &mut m.shmem, &m.gmem, &data_ctx(core), rs1v, width)
            {
                Ok((v, lat)) => {
                    wr!(v);
                    retire(m, core, step.cost);
                    if lat > 0 {
                        return ExecOut::NextYield(lat);
                    }
                    ExecOut::Next
                }
                Err(f) => {
                    raise(core, pc, f.to_trap());
                    ExecOut::Control
                }
            }
        }
        ScW | ScD => {
            let width = instr.access_width();
            let res = if m.exec_mode == ExecMode::Parallel {
                mem::store_conditional_cas(&mut m.mems[slot], &mut m.shmem, &m.gmem, &data_ctx(core), rs1v, width, rs2v)
            } else {
                mem::store_conditional(slot, &mut m.mems, &mut m.shmem, &m.gmem, &data_ctx(core), rs1v, width, rs2v)
            };
            match res {
                Ok((ok, lat)) => {
                    wr!(!ok as u64);
                    retire(m, core, step.cost);
                    if lat > 0 {
                        return ExecOut::NextYield(lat);
                    }
                    ExecOut::Next
                }
                Err(f) => {
                    raise(core, pc, f.to_trap());
                    ExecOut::Control
                }
            }
        }
        m_ if m_.is_amo() => {
            let width = instr.access_width();
            let word = width == 4;
            let mn = instr.mnemonic;
            let f = move |a: u64| apply_amo(mn, word, a, rs2v);
            match mem::amo(slot, &mut m.mems, &mut m.shmem, &m.gmem, &data_ctx(core), rs1v, width, &f)
            {
                Ok((old, lat)) => {
                    wr!(old);
                    retire(m, core, step.cost);
                    if lat > 0 {
                        return ExecOut::NextYield(lat);
                    }
                    ExecOut::Next
                }
                Err(f) => {
                    raise(core, pc, f.to_trap());
                    ExecOut::Control
                }
            }
        }

        m_ if m_.is_cond_branch() => {
            let taken = match instr.mnemonic {
                Beq => rs1v == rs2v,
                Bne => rs1v != rs2v,
                Blt => (rs1v as i64) < rs2v as i64,
                Bge => (rs1v as i64) >= rs2v as i64,
                Bltu => rs1v < rs2v,
                Bgeu => rs1v >= rs2v,
                _ => unreachable!(),
            };
            let cost = if taken { step.cost_taken } else { step.cost };
            retire(m, core, cost);
            let (edge, vpc) = if taken {
                (ChainEdge::Taken, pc.wrapping_add(instr.imm as u64))
            } else {
                (ChainEdge::Fallthrough, next_pc)
            };
            core.resume = Resume::BlockEnd { next: next_via(core, edge, vpc, blk) };
            ExecOut::Control
        }
        Jal => {
            wr!(next_pc);
            retire(m, core, step.cost);
            let vpc = pc.wrapping_add(instr.imm as u64);
            core.resume = Resume::BlockEnd { next: next_via(core, ChainEdge::Taken, vpc, blk) };
            ExecOut::Control
        }
        Jalr => {
            let target = rs1v.wrapping_add(instr.imm as u64) & !1;
            wr!(next_pc);
            retire(m, core, step.cost);
            // Indirect targets are not chained.
            core.resume = Resume::BlockEnd { next: NextPc::Vpc { vpc: target, chain: None } };
            ExecOut::Control
        }
        Mret => {
            if core.ps.mode != PRIV_M {
                raise(core, pc, Trap::new(ExceptionCause::IllegalInstruction, 0));
                return ExecOut::Control;
            }
            let old_mode = core.ps.mode;
            let target = sys::mret(&mut core.ps);
            if core.ps.mode != old_mode {
                m.mems[slot].flush_l0();
            }
            retire(m, core, step.cost);
            core.resume = Resume::BlockEnd { next: NextPc::Vpc { vpc: target, chain: None } };
            ExecOut::Control
        }
        Sret => {
            if core.ps.mode < PRIV_S {
                raise(core, pc, Trap::new(ExceptionCause::IllegalInstruction, 0));
                return ExecOut::Control;
            }
            let old_mode = core.ps.mode;
            let target = sys::sret(&mut core.ps);
            if core.ps.mode != old_mode {
                m.mems[slot].flush_l0();
            }
            retire(m, core, step.cost);
            core.resume = Resume::BlockEnd { next: NextPc::Vpc { vpc: target, chain: None } };
            ExecOut::Control
        }
        Ecall => exec_ecall(m, slot, core, step, pc, next_pc),
        Ebreak => {
            raise(core, pc, Trap::new(ExceptionCause::Breakpoint, pc));
            ExecOut::Control
        }
        Wfi => {
            if core.ps.mode < PRIV_S {
                raise(core, pc, Trap::new(ExceptionCause::IllegalInstruction, 0));
                return ExecOut::Control;
            }
            retire(m, core, step.cost);
            let mip = m.shared.mip[core.index].load(Ordering::Relaxed);
            core.resume = Resume::Step { idx: _idx + 1, phase: 0 };
            if mip & core.ps.mie != 0 {
                ExecOut::Next
            } else {
                core.state = RunState::Waiting(WaitKind::Wfi);
                ExecOut::Event(SliceEvent::Wait)
            }
        }
        Fence => {
            retire(m, core, step.cost);
            ExecOut::Next
        }
        FenceI => {
            core.cache.flush(FlushReason::FenceI);
            core.pending_chain = None;
            m.mems[slot].l0i.invalidate_all();
            m.mems[slot].l1i.flush_all();
            retire(m, core, step.cost);
            core.resume =
                Resume::BlockEnd { next: NextPc::Vpc { vpc: next_pc, chain: None } };
            ExecOut::Control
        }
        SfenceVma => {
            if core.ps.mode < PRIV_S {
                raise(core, pc, Trap::new(ExceptionCause::IllegalInstruction, 0));
                return ExecOut::Control;
            }
            let vaddr = if instr.rs1 == 0 { None } else { Some(rs1v) };
            m.mems[slot].flush_tlbs();
            m.mems[slot].flush_l0();
            core.cache.flush(FlushReason::Sfence(vaddr));
            core.pending_chain = None;
            retire(m, core, step.cost);
            core.resume =
                Resume::BlockEnd { next: NextPc::Vpc { vpc: next_pc, chain: None } };
            ExecOut::Control
        }
        m_ if m_.is_csr_op() => exec_csr(m, slot, core, step, pc, next_pc),
        _ => unreachable!("unhandled mnemonic {:?}", instr.mnemonic),
    }
}

fn div_signed(a: i64, b: i64) -> i64 {
    if b == 0 {
        -1
    } else if a == i64::MIN && b == -1 {
        a
    } else {
        a / b
    }
}

fn rem_signed(a: i64, b: i64) -> i64 {
    if b == 0 {
        a
    } else if a == i64::MIN && b == -1 {
        0
    } else {
        a % b
    }
}

/// Pure AMO combine. Word forms see the sign-extended old value and
/// compare in 32 bits.
fn apply_amo(m: Mnemonic, word: bool, a: u64, b: u64) -> u64 {
    use Mnemonic::*;
    match m {
        AmoswapW | AmoswapD => b,
        AmoaddW | AmoaddD => a.wrapping_add(b),
        AmoxorW | AmoxorD => a ^ b,
        AmoandW | AmoandD => a & b,
        AmoorW | AmoorD => a | b,
        AmominW | AmomaxW | AmominuW | AmomaxuW if word => {
            let (x, y) = (a as u32, b as u32);
            let take_a = match m {
                AmominW => (x as i32) < y as i32,
                AmomaxW => (x as i32) > y as i32,
                AmominuW => x < y,
                _ => x > y,
            };
            if take_a { a } else { b }
        }
        AmominD => if (a as i64) < b as i64 { a } else { b },
        AmomaxD => if (a as i64) > b as i64 { a } else { b },
        AmominuD => if a < b { a } else { b },
        AmomaxuD => if a > b { a } else { b },
        _ => unreachable!(),
    }
}

fn exec_csr(
    m: &mut Machine,
    slot: usize,
    core: &mut Core,
    step: &Step,
    pc: u64,
    next_pc: u64,
) -> ExecOut {
    let instr = &step.instr;
    let operand = match instr.mnemonic {
        Mnemonic::Csrrw | Mnemonic::Csrrs | Mnemonic::Csrrc => core.regs[instr.rs1 as usize],
        _ => instr.rs1 as u64, // zimm
    };
    if instr.imm as u16 == csr::SIMCTRL {
        return exec_simctrl(m, slot, core, step, pc, next_pc, operand);
    }
    let r = sys::csr_op(
        &mut core.ps,
        &m.shared.mip[core.index],
        core.local_clock,
        instr,
        operand,
    );
    match r {
        Ok(res) => {
            if instr.rd != 0 {
                core.regs[instr.rd as usize] = res.old;
            }
            if res.effect == sys::CsrEffect::SatpWritten {
                // Address space changed: TLB models and L0s are flushed;
                // translated blocks stay, keyed by (asid, mode).
                m.mems[slot].flush_tlbs();
                m.mems[slot].flush_l0();
            }
            retire(m, core, step.cost);
            core.resume = Resume::BlockEnd { next: NextPc::Vpc { vpc: next_pc, chain: None } };
            ExecOut::Control
        }
        Err(t) => {
            raise(core, pc, t);
            ExecOut::Control
        }
    }
}

fn exec_simctrl(
    m: &mut Machine,
    _slot: usize,
    core: &mut Core,
    step: &Step,
    pc: u64,
    next_pc: u64,
    operand: u64,
) -> ExecOut {
    let instr = &step.instr;
    if core.ps.mode != PRIV_M {
        raise(core, pc, Trap::new(ExceptionCause::IllegalInstruction, 0));
        return ExecOut::Control;
    }
    let old = simctrl::compose(
        core.pipeline_kind,
        m.shmem.model,
        m.shmem.line_size,
        m.exec_mode,
        core.ps.simctrl_error,
    );
    let will_write = match instr.mnemonic {
        Mnemonic::Csrrw | Mnemonic::Csrrwi => true,
        _ => operand != 0,
    };
    if instr.rd != 0 {
        core.regs[instr.rd as usize] = old;
    }
    if will_write {
        let new = match instr.mnemonic {
            Mnemonic::Csrrw | Mnemonic::Csrrwi => operand,
            Mnemonic::Csrrs | Mnemonic::Csrrsi => old | operand,
            _ => old & !operand,
        };
        let d = simctrl::decode(new);
        let valid = match (d.pipeline, d.memory) {
            (Some(_), Some(mem_kind)) => {
                let parallel_ok = d.mode == ExecMode::Lockstep
                    || (mem_kind == MemoryModelKind::Atomic && !m.cfg.deterministic);
                let line_ok = d.line_size == 64
                    || !matches!(mem_kind, MemoryModelKind::Cache | MemoryModelKind::Mesi);
                parallel_ok && line_ok
            }
            _ => false,
        };
        if !valid {
            // Write ignored; sticky error flag readable in SIMCTRL.
            core.ps.simctrl_error = true;
        } else {
            core.ps.simctrl_error = false;
            if let Some(p) = d.pipeline {
                if p != core.pipeline_kind {
                    core.pipeline_kind = p;
                    core.model = create_model(p, &m.cfg.pipeline_params);
                    core.cache.flush(FlushReason::ModelSwitch);
                    core.pending_chain = None;
                    core.cur = None;
                }
            }
            // The memory/line/mode part always commits through a global
            // rendezvous (idempotent semantics: re-selecting the current
            // model still flushes the L0s).
            if m.exec_mode == ExecMode::Lockstep {
                if m.pending_switch.is_none() {
                    m.pending_switch = Some(PendingSwitch { value: new, arrived: 0 });
                }
            } else {
                *m.shared.switch_request.lock().unwrap() = Some(new);
                m.shared.stop.store(true, Ordering::SeqCst);
            }
        }
    }
    retire(m, core, step.cost);
    core.resume = Resume::BlockEnd { next: NextPc::Vpc { vpc: next_pc, chain: None } };
    ExecOut::Control
}

fn exec_ecall(
    m: &mut Machine,
    slot: usize,
    core: &mut Core,
    step: &Step,
    pc: u64,
    next_pc: u64,
) -> ExecOut {
    match (m.cfg.target, core.ps.mode) {
        (EmulationTarget::User, PRIV_U) => exec_syscall(m, slot, core, step, pc, next_pc),
        (EmulationTarget::Supervisor, PRIV_S) => {
            let eid = core.regs[17];
            let fid = core.regs[16];
            let args = [
                core.regs[10],
                core.regs[11],
                core.regs[12],
                core.regs[13],
                core.regs[14],
                core.regs[15],
            ];
            let ret = {
                let mut host = SbiBridge { m, core };
                sbi::handle(&mut host, 0, eid, fid, args)
            };
            core.regs[10] = ret.error as u64;
            if !ret.legacy {
                core.regs[11] = ret.value as u64;
            }
            // An emulated ecall retires like an ordinary instruction.
            retire(m, core, step.cost);
            if m.shared.exit_flag.load(Ordering::Relaxed) {
                core.resume = Resume::BlockEnd { next: NextPc::Vpc { vpc: next_pc, chain: None } };
                return ExecOut::Event(SliceEvent::Shutdown);
            }
            core.resume = Resume::BlockEnd { next: NextPc::Vpc { vpc: next_pc, chain: None } };
            ExecOut::Control
        }
        _ => {
            // Architectural trap: cause 8 + mode.
            core.pc = pc;
            core.resume =
                Resume::Trap { cause: 8 + core.ps.mode as u64, interrupt: false, tval: 0 };
            ExecOut::Control
        }
    }
}

struct SbiBridge<'a> {
    m: &'a mut Machine,
    core: &'a mut Core,
}

impl sbi::SbiHost for SbiBridge<'_> {
    fn console_putchar(&mut self, byte: u8) {
        self.m.shared.putchar(byte);
    }

    fn console_getchar(&mut self) -> i64 {
        self.m.shared.console_in.lock().unwrap().pop_front().map_or(-1, |b| b as i64)
    }

    fn set_timer(&mut self, _hartid: usize, time_value: u64) {
        let hart = self.core.index;
        self.m.shared.clear_mip_bits(hart, sys::MIP_STIP);
        if self.m.exec_mode == ExecMode::Lockstep {
            if let Some(tok) = self.core.timer_token.take() {
                self.m.events.cancel(tok);
            }
            let tok = self.m.events.schedule(self.m.now, time_value, EventKind::TimerIrq(hart));
            self.core.timer_token = Some(tok);
        } else {
            self.m.shared.mtimecmp[hart].store(time_value, Ordering::SeqCst);
        }
    }

    fn send_ipi(&mut self, mask: u64, base: u64) {
        for j in 0..self.m.cfg.cores {
            let bit = (j as u64).checked_sub(base).filter(|b| *b < 64).map(|b| mask >> b & 1);
            if bit == Some(1) {
                self.m.shared.set_mip_bits(j, sys::MIP_SSIP);
            }
        }
    }

    fn shutdown(&mut self, code: i64) {
        self.m.shared.request_exit(code);
    }

    fn hart_count(&self) -> usize {
        self.m.cfg.cores
    }
}

fn exec_syscall(
    m: &mut Machine,
    slot: usize,
    core: &mut Core,
    step: &Step,
    pc: u64,
    next_pc: u64,
) -> ExecOut {
    let num = core.regs[17];
    let args = [
        core.regs[10],
        core.regs[11],
        core.regs[12],
        core.regs[13],
        core.regs[14],
        core.regs[15],
    ];
    let outcome = {
        let mut host = SyscallBridge { m, core, next_pc };
        syscall::dispatch(&mut host, num, args)
    };
    let _ = pc;
    match outcome {
        syscall::SyscallOutcome::Ret(v) => {
            core.regs[10] = v;
            retire(m, core, step.cost);
            core.resume = Resume::BlockEnd { next: NextPc::Vpc { vpc: next_pc, chain: None } };
            ExecOut::Control
        }
        syscall::SyscallOutcome::Exit(code) => {
            m.shared.request_exit(code as i64);
            retire(m, core, step.cost);
            core.resume = Resume::BlockEnd { next: NextPc::Vpc { vpc: next_pc, chain: None } };
            ExecOut::Event(SliceEvent::Shutdown)
        }
        syscall::SyscallOutcome::ExitThread(code) => {
            retire(m, core, step.cost);
            let others_live = m
                .cores
                .iter()
                .enumerate()
                .any(|(j, c)| j != slot && !matches!(c.state, RunState::Done | RunState::Offline));
            if others_live {
                core.state = RunState::Done;
                core.resume = Resume::Dispatch;
                ExecOut::Event(SliceEvent::Exited)
            } else {
                // Last live thread: process exit.
                m.shared.request_exit(code as i64);
                core.resume =
                    Resume::BlockEnd { next: NextPc::Vpc { vpc: next_pc, chain: None } };
                ExecOut::Event(SliceEvent::Shutdown)
            }
        }
        syscall::SyscallOutcome::Block => {
            // futex wait: a0 is set when woken; park at the post-syscall pc.
            core.regs[10] = 0;
            retire(m, core, step.cost);
            let addr = args[0];
            core.resume = Resume::BlockEnd { next: NextPc::Vpc { vpc: next_pc, chain: None } };
            if m.exec_mode == ExecMode::Lockstep {
                core.state = RunState::Waiting(WaitKind::Futex(addr));
                m.futex_waiters.entry(addr).or_default().push(slot);
                ExecOut::Event(SliceEvent::Wait)
            } else {
                // Parallel mode: treat as a spurious wakeup (permitted by
                // futex semantics); the guest re-checks its predicate.
                std::thread::yield_now();
                ExecOut::Control
            }
        }
    }
}

struct SyscallBridge<'a> {
    m: &'a mut Machine,
    core: &'a mut Core,
    next_pc: u64,
}

impl syscall::SyscallHost for SyscallBridge<'_> {
    fn read_guest(&mut self, vaddr: u64, len: usize) -> Option<Vec<u8>> {
        if len == 0 {
            return Some(Vec::new());
        }
        if !self.m.gmem.contains(vaddr, len as u64) {
            return None;
        }
        let mut buf = vec![0u8; len];
        self.m.gmem.read_bytes(vaddr, &mut buf);
        Some(buf)
    }

    fn write_guest(&mut self, vaddr: u64, data: &[u8]) -> bool {
        if data.is_empty() {
            return true;
        }
        if !self.m.gmem.contains(vaddr, data.len() as u64) {
            return false;
        }
        self.m.gmem.write_bytes(vaddr, data);
        true
    }

    fn write_fd(&mut self, fd: u64, data: &[u8]) -> i64 {
        match fd {
            1 | 2 => {
                for b in data {
                    self.m.shared.putchar(*b);
                }
                data.len() as i64
            }
            _ => -syscall::EBADF,
        }
    }

    fn read_fd(&mut self, fd: u64, len: usize) -> Option<Vec<u8>> {
        if fd != 0 {
            return None;
        }
        let mut inp = self.m.shared.console_in.lock().unwrap();
        let n = len.min(inp.len());
        if n == 0 {
            return None;
        }
        Some(inp.drain(..n).collect())
    }

    fn brk(&mut self, new: u64) -> u64 {
        let user = self.m.user.as_mut().expect("brk outside user target");
        if new >= user.brk_floor && new < user.mmap_ceiling.max(user.brk_floor + (64 << 20)) {
            user.brk = new;
        }
        user.brk
    }

    fn mmap_anon(&mut self, len: u64) -> Option<u64> {
        let user = self.m.user.as_mut().expect("mmap outside user target");
        let len = (len + 0xfff) & !0xfff;
        if user.mmap_next < user.mmap_ceiling + len {
            return None;
        }
        user.mmap_next -= len;
        Some(user.mmap_next)
    }

    fn nanos(&self) -> u64 {
        (self.core.local_clock as u128 * 1_000_000_000 / self.m.cfg.clock_hz as u128) as u64
    }

    fn pid(&self) -> u64 {
        1000
    }

    fn tid(&self) -> u64 {
        1000 + self.core.index as u64
    }

    fn clone_thread(&mut self, sp: u64, tls: u64, _ctid: u64) -> Result<u64, i64> {
        let free = self
            .m
            .cores
            .iter()
            .position(|c| c.state == RunState::Offline && c.index != usize::MAX);
        let Some(j) = free else {
            return Err(syscall::EAGAIN);
        };
        let mut regs = self.core.regs;
        regs[10] = 0; // child returns 0
        regs[2] = sp;
        regs[4] = tls;
        if self.m.exec_mode == ExecMode::Lockstep {
            let child = &mut self.m.cores[j];
            child.regs = regs;
            child.pc = self.next_pc;
            child.state = RunState::Ready;
            child.resume = Resume::Dispatch;
            child.resume_at = self.m.now;
        } else {
            let mut reqs = self.m.shared.start_requests.lock().unwrap();
            reqs[j] = Some(StartRequest { regs, pc: self.next_pc });
            self.m.shared.start_cv.notify_all();
        }
        Ok(1000 + j as u64)
    }

    fn futex_wait(&mut self, addr: u64, expected: u32) -> syscall::FutexWait {
        if !self.m.gmem.contains(addr, 4) {
            return syscall::FutexWait::BadAddress;
        }
        if self.m.gmem.read_u32(addr) == expected {
            syscall::FutexWait::Block
        } else {
            syscall::FutexWait::Mismatch
        }
    }

    fn futex_wake(&mut self, addr: u64, n: u64) -> u64 {
        if self.m.exec_mode != ExecMode::Lockstep {
            return 0;
        }
        let Some(waiters) = self.m.futex_waiters.get_mut(&addr) else {
            return 0;
        };
        waiters.sort_unstable();
        let mut woken = 0;
        while woken < n && !waiters.is_empty() {
            let j = waiters.remove(0);
            let c = &mut self.m.cores[j];
            if c.state == RunState::Waiting(WaitKind::Futex(addr)) {
                c.state = RunState::Ready;
                c.resume_at = self.m.now;
                woken += 1;
            }
        }
        if waiters.is_empty() {
            self.m.futex_waiters.remove(&addr);
        }
        woken
    }
}
