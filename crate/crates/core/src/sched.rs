//! Cooperative lockstep scheduling and the parallel execution driver.
//!
//! Lockstep mode is strictly single-threaded: contexts are resumed in
//! ascending core order within each global cycle, with the event loop
//! running after the cores of that cycle. Cycle batching happens inside the
//! executor (pending cycles flushed at synchronization points); the driver
//! only moves global time to the next due resume or event, so empty cycles
//! cost nothing.
//!
//! Parallel mode runs one OS thread per core with no cycle coupling; it is
//! only legal with the atomic memory model.

use crate::config::ExecMode;
use crate::exec::{run_slice, SliceEvent};
use crate::machine::{Core, Machine, RunState, StartRequest, WaitKind};
use crate::mem::{self, CoreMem, SharedMem};
use crate::sys::{self, simctrl};
use crate::stats::StatsReport;
use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::sync::atomic::Ordering;
use std::time::Instant;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    TimerIrq(usize),
}

#[derive(PartialEq, Eq)]
struct Queued {
    due: u64,
    seq: u64,
    kind: EventKind,
}

impl Ord for Queued {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        // Due cycle first, then insertion order.
        (self.due, self.seq).cmp(&(other.due, other.seq))
    }
}

impl PartialOrd for Queued {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

/// Cycle-keyed event queue. Events fire in (due, insertion) order; a
/// due time in the past is clamped to now.
#[derive(Default)]
pub struct EventQueue {
    heap: BinaryHeap<Reverse<Queued>>,
    cancelled: std::collections::HashSet<u64>,
    next_seq: u64,
    pub fired: u64,
}

impl EventQueue {
    pub fn schedule(&mut self, now: u64, due: u64, kind: EventKind) -> u64 {
        let due = if due < now {
            log::debug!("event scheduled in the past ({due} < {now}), clamping");
            now
        } else {
            due
        };
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Reverse(Queued { due, seq, kind }));
        seq
    }

    pub fn cancel(&mut self, token: u64) {
        self.cancelled.insert(token);
    }

    pub fn next_due(&mut self) -> Option<u64> {
        while let Some(Reverse(q)) = self.heap.peek() {
            if self.cancelled.remove(&q.seq) {
                self.heap.pop();
                continue;
            }
            return Some(q.due);
        }
        None
    }

    pub fn pop_due(&mut self, now: u64) -> Option<EventKind> {
        match self.next_due() {
            Some(due) if due <= now => {
                let q = self.heap.pop().unwrap().0;
                self.fired += 1;
                Some(q.kind)
            }
            _ => None,
        }
    }

    pub fn is_empty(&mut self) -> bool {
        self.next_due().is_none()
    }
}

/// Why an execution phase (lockstep or parallel) ended.
pub enum PhaseEnd {
    Exit,
    Limit,
    SwitchMode(ExecMode),
    Fatal(String),
}

pub struct RunOutcome {
    pub exit_code: i64,
    pub stats: StatsReport,
    pub fatal: Option<String>,
}

/// Run the machine to completion, switching between lockstep and parallel
/// phases as the guest requests.
pub fn run(m: &mut Machine) -> RunOutcome {
    let start = Instant::now();
    let mut fatal = None;
    loop {
        let end = match m.exec_mode {
            ExecMode::Lockstep => run_lockstep(m),
            ExecMode::Parallel => run_parallel(m),
        };
        match end {
            PhaseEnd::Exit | PhaseEnd::Limit => break,
            PhaseEnd::SwitchMode(mode) => {
                m.exec_mode = mode;
                m.mode_change = None;
            }
            PhaseEnd::Fatal(msg) => {
                fatal = Some(msg);
                break;
            }
        }
    }
    let stats = m.report(start.elapsed().as_secs_f64());
    RunOutcome { exit_code: stats.exit_code, stats, fatal }
}

/// Deterministic lockstep: resume order within a cycle is ascending core
/// index, then the event loop, then any cores the events woke.
pub fn run_lockstep(m: &mut Machine) -> PhaseEnd {
    loop {
        wake_wfi_cores(m);

        // Commit a pending reconfiguration once every running core has
        // arrived at its block end (cores parked in WFI/futex are already
        // quiescent at a synchronization point).
        if let Some(ps) = &m.pending_switch {
            let value = ps.value;
            if m.cores.iter().all(|c| c.state != RunState::Ready) {
                if let Some(end) = commit_switch(m, value) {
                    return end;
                }
                continue;
            }
        }

        let next_core = m
            .cores
            .iter()
            .filter(|c| c.state == RunState::Ready)
            .map(|c| c.resume_at)
            .min();
        let next_event = m.events.next_due();
        let t = match (next_core, next_event) {
            (Some(a), Some(b)) => a.min(b),
            (Some(a), None) => a,
            (None, Some(b)) => b,
            (None, None) => {
                if m.cores.iter().all(|c| matches!(c.state, RunState::Done | RunState::Offline))
                {
                    // Every thread exited.
                    m.shared.request_exit(0);
                    return PhaseEnd::Exit;
                }
                return PhaseEnd::Fatal(deadlock_dump(m));
            }
        };
        debug_assert!(t >= m.now);
        m.now = t;

        for i in 0..m.cores.len() {
            if m.cores[i].state != RunState::Ready || m.cores[i].resume_at > t {
                continue;
            }
            m.cores[i].local_clock = t;
            m.context_switches += 1;
            match run_slice(m, i) {
                SliceEvent::Yield(n) => {
                    debug_assert!(n >= 1);
                    m.cores[i].resume_at = t + n;
                }
                SliceEvent::Wait => {
                    m.cores[i].resume_at = u64::MAX;
                }
                SliceEvent::Exited => {
                    m.cores[i].state = RunState::Done;
                    m.cores[i].resume_at = u64::MAX;
                }
                SliceEvent::Shutdown => return PhaseEnd::Exit,
                SliceEvent::LimitReached => return PhaseEnd::Limit,
                SliceEvent::StopRequested => unreachable!("lockstep has no stop flag"),
                SliceEvent::Fatal(s) => return PhaseEnd::Fatal(s),
            }
        }

        // Event loop runs after the cores of this cycle.
        while let Some(kind) = m.events.pop_due(t) {
            match kind {
                EventKind::TimerIrq(core) => {
                    m.shared.set_mip_bits(core, sys::MIP_STIP);
                    if core < m.cores.len() {
                        m.cores[core].timer_token = None;
                    }
                }
            }
        }
    }
}

/// Wake WFI-parked cores whose wake condition (any pending enabled
/// interrupt, regardless of global enables) holds.
fn wake_wfi_cores(m: &mut Machine) {
    for i in 0..m.cores.len() {
        if m.cores[i].state == RunState::Waiting(WaitKind::Wfi) {
            let mip = m.shared.mip[i].load(Ordering::Relaxed);
            if mip & m.cores[i].ps.mie != 0 {
                m.cores[i].state = RunState::Ready;
                m.cores[i].resume_at = m.now;
            }
        }
    }
}

fn deadlock_dump(m: &Machine) -> String {
    let mut s = String::from("no runnable context and no pending events; waiting cores:");
    for c in &m.cores {
        s.push_str(&format!(
            " core{}={:?}@pc={:#x}",
            c.index,
            c.state,
            c.pc
        ));
    }
    s
}

/// Apply a committed SIMCTRL value: reconfigure the memory system, align
/// clocks, wake the rendezvoused cores, and surface a mode change.
fn commit_switch(m: &mut Machine, value: u64) -> Option<PhaseEnd> {
    m.pending_switch = None;
    let d = simctrl::decode(value);
    let mem_kind = d.memory.expect("validated before rendezvous");
    if m.cfg.snapshot_on_reconfigure {
        m.capture_snapshot();
    }
    mem::reconfigure_memory(&mut m.mems, &mut m.shmem, &m.cfg.memory, mem_kind, d.line_size);
    for core in &mut m.cores {
        // Flushing every code cache makes the post-switch translation
        // state canonical: any chain links or pending-chain bookkeeping a
        // nondeterministic parallel phase left behind die with the blocks,
        // so a measured region that starts here is exactly reproducible.
        // (Cycle annotations are memory-model independent; this trades a
        // one-time retranslation for a clean cut.)
        use crate::machine::{NextPc, Resume};
        match core.resume {
            Resume::Step { idx, .. } => {
                // A WFI-parked core sits past the last step of its block
                // (WFI ends blocks); rewrite to the equivalent block-end
                // state so the block itself can be dropped.
                let cur = core.cur.as_ref().expect("mid-block wait without a block");
                debug_assert_eq!(idx as usize, cur.block.steps.len());
                core.resume = Resume::BlockEnd {
                    next: NextPc::Vpc { vpc: cur.block.fallthrough_vpc(), chain: None },
                };
            }
            // Links and chain bookkeeping embedded in a parked block-end
            // refer to flushed blocks; resolve them to plain dispatches.
            Resume::BlockEnd { next: NextPc::Chain { vpc, .. } }
            | Resume::BlockEnd { next: NextPc::Vpc { vpc, .. } } => {
                core.resume =
                    Resume::BlockEnd { next: NextPc::Vpc { vpc, chain: None } };
            }
            _ => {}
        }
        core.cache.flush(crate::xlat::FlushReason::ModelSwitch);
        core.pending_chain = None;
        core.cur = None;
        if core.state == RunState::Waiting(WaitKind::Rendezvous) {
            core.state = RunState::Ready;
            core.resume_at = m.now;
        }
    }
    if m.cfg.stats_reset_on_reconfigure {
        m.reset_stats();
    }
    if d.mode != m.exec_mode {
        return Some(PhaseEnd::SwitchMode(d.mode));
    }
    None
}

/// Parallel execution: one thread per core, no cycle coupling. Only legal
/// with the atomic memory model; each worker runs an isolated single-core
/// machine view against the shared flat memory and flag block.
pub fn run_parallel(m: &mut Machine) -> PhaseEnd {
    m.shared.stop.store(false, Ordering::SeqCst);
    let cores = std::mem::take(&mut m.cores);
    let mems = std::mem::take(&mut m.mems);

    let results: Vec<(Core, CoreMem, Option<String>)> = std::thread::scope(|scope| {
        let mut handles = Vec::new();
        let line_size = m.shmem.line_size;
        for (core, cmem) in cores.into_iter().zip(mems.into_iter()) {
            let gmem = m.gmem.clone();
            let shared = m.shared.clone();
            let cfg = m.cfg.clone();
            handles.push(
                scope.spawn(move || parallel_worker(core, cmem, gmem, shared, cfg, line_size)),
            );
        }
        handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
    });

    let mut fatal = None;
    let mut max_clock = m.now;
    for (core, cmem, f) in results {
        max_clock = max_clock.max(core.local_clock);
        if let Some(msg) = f {
            fatal = Some(msg);
        }
        m.cores.push(core);
        m.mems.push(cmem);
    }
    m.cores.sort_by_key(|c| c.index);
    // Rendezvous: clocks align to a common cycle.
    m.now = max_clock;
    for c in &mut m.cores {
        c.local_clock = max_clock;
        if c.state == RunState::Ready {
            c.resume_at = max_clock;
        }
    }

    if let Some(msg) = fatal {
        return PhaseEnd::Fatal(msg);
    }
    if m.shared.exit_flag.load(Ordering::SeqCst) {
        return PhaseEnd::Exit;
    }
    if let Some(limit) = m.cfg.max_insns {
        if m.shared.retired.load(Ordering::Relaxed) >= limit {
            return PhaseEnd::Limit;
        }
    }
    let req = m.shared.switch_request.lock().unwrap().take();
    if let Some(value) = req {
        if let Some(end) = commit_switch(m, value) {
            return end;
        }
        // Same-mode reconfiguration: stay parallel.
        return PhaseEnd::SwitchMode(ExecMode::Parallel);
    }
    PhaseEnd::Fatal("parallel phase stopped without a reason".into())
}

fn parallel_worker(
    mut core: Core,
    cmem: CoreMem,
    gmem: std::sync::Arc<mem::GuestMemory>,
    shared: std::sync::Arc<crate::machine::SharedFlags>,
    cfg: crate::config::SimConfig,
    line_size: u64,
) -> (Core, CoreMem, Option<String>) {
    // Offline cores (user-target, pre-clone) wait for a start request.
    if core.state == RunState::Offline {
        let idx = core.index;
        let mut reqs = shared.start_requests.lock().unwrap();
        loop {
            if shared.stop.load(Ordering::SeqCst) {
                break;
            }
            if let Some(StartRequest { regs, pc }) = reqs[idx].take() {
                core.regs = regs;
                core.pc = pc;
                core.state = RunState::Ready;
                core.resume = crate::machine::Resume::Dispatch;
                break;
            }
            reqs = shared.start_cv.wait(reqs).unwrap();
        }
    }
    if core.state != RunState::Ready {
        return (core, cmem, None);
    }

    // A single-core machine view: the atomic model never touches the L2 or
    // other cores, so the worker owns a private copy of the shared-side
    // structures.
    let mut shmem = SharedMem::new(&cfg.memory);
    shmem.model = crate::config::MemoryModelKind::Atomic;
    shmem.line_size = line_size;
    let mut mini = Machine {
        shmem,
        cfg,
        gmem,
        cores: vec![Core::placeholder()],
        mems: vec![cmem],
        events: EventQueue::default(),
        shared,
        now: 0,
        exec_mode: ExecMode::Parallel,
        pending_switch: None,
        mode_change: None,
        user: None,
        futex_waiters: Default::default(),
        context_switches: 0,
        snapshot: None,
        echo_console: false,
    };
    mini.cores[0] = core;

    let fatal = loop {
        match run_slice(&mut mini, 0) {
            SliceEvent::Yield(n) => {
                mini.cores[0].local_clock += n;
            }
            SliceEvent::Wait => {
                // WFI in parallel mode: poll for the wake condition,
                // backing off so parked harts do not starve working ones.
                let i = mini.cores[0].index;
                let mut spins = 0u32;
                loop {
                    if mini.shared.stop.load(Ordering::SeqCst) {
                        break;
                    }
                    let mip = mini.shared.mip[i].load(Ordering::SeqCst);
                    if mip & mini.cores[0].ps.mie != 0 {
                        break;
                    }
                    let cmp = mini.shared.mtimecmp[i].load(Ordering::Relaxed);
                    if cmp != u64::MAX
                        && mini.shared.wall_start.elapsed().as_nanos() as u64 >= cmp
                    {
                        mini.shared.set_mip_bits(i, sys::MIP_STIP);
                        mini.shared.mtimecmp[i].store(u64::MAX, Ordering::Relaxed);
                        break;
                    }
                    spins += 1;
                    if spins < 64 {
                        std::thread::yield_now();
                    } else {
                        std::thread::sleep(std::time::Duration::from_micros(200));
                    }
                }
                mini.cores[0].state = RunState::Ready;
            }
            SliceEvent::Exited => break None,
            SliceEvent::Shutdown | SliceEvent::LimitReached | SliceEvent::StopRequested => {
                break None
            }
            SliceEvent::Fatal(s) => {
                mini.shared.request_exit(101);
                break Some(s);
            }
        }
        if mini.shared.stop.load(Ordering::Relaxed) {
            break None;
        }
        if let Some(limit) = mini.cfg.max_insns {
            if mini.shared.retired.load(Ordering::Relaxed) >= limit {
                mini.shared.stop.store(true, Ordering::SeqCst);
                mini.shared.start_cv.notify_all();
                break None;
            }
        }
    };
    // Exit/limit conditions stop every worker.
    if mini.shared.exit_flag.load(Ordering::SeqCst)
        || mini.cfg.max_insns.is_some_and(|l| mini.shared.retired.load(Ordering::Relaxed) >= l)
    {
        mini.shared.stop.store(true, Ordering::SeqCst);
        mini.shared.start_cv.notify_all();
    }
    let core = std::mem::replace(&mut mini.cores[0], Core::placeholder());
    let cmem = mini.mems.pop().unwrap();
    (core, cmem, fatal)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn event_queue_orders_by_due_then_insertion() {
        let mut q = EventQueue::default();
        q.schedule(0, 10, EventKind::TimerIrq(0));
        q.schedule(0, 5, EventKind::TimerIrq(1));
        q.schedule(0, 10, EventKind::TimerIrq(2));
        assert_eq!(q.next_due(), Some(5));
        assert_eq!(q.pop_due(5), Some(EventKind::TimerIrq(1)));
        assert_eq!(q.pop_due(10), Some(EventKind::TimerIrq(0)));
        assert_eq!(q.pop_due(10), Some(EventKind::TimerIrq(2)));
        assert_eq!(q.pop_due(u64::MAX), None);
        assert_eq!(q.fired, 3);
    }

    #[test]
    fn cancelled_events_never_fire() {
        let mut q = EventQueue::default();
        let tok = q.schedule(0, 5, EventKind::TimerIrq(0));
        q.schedule(0, 7, EventKind::TimerIrq(1));
        q.cancel(tok);
        assert_eq!(q.next_due(), Some(7));
        assert_eq!(q.pop_due(10), Some(EventKind::TimerIrq(1)));
        assert!(q.is_empty());
    }

    #[test]
    fn past_due_clamps_to_now() {
        let mut q = EventQueue::default();
        q.schedule(100, 50, EventKind::TimerIrq(0));
        assert_eq!(q.next_due(), Some(100));
    }
}
