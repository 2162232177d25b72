//! The composed simulated machine: cores, memory system, devices, shared
//! cross-core state, and end-of-run reporting.

use crate::config::{EmulationTarget, ExecMode, PipelineKind, SimConfig};
use crate::elf;
use crate::isa::Trap;
use crate::mem::{CoreMem, DeviceBus, GuestMemory, SharedMem};
use crate::pipeline::{create_model, PipelineModel};
use crate::sched::EventQueue;
use crate::stats::{CoreStats, MemGlobalStats, SchedStats, StatsReport};
use crate::sys::PrivState;
use crate::xlat::{BlockLink, ChainEdge, CodeCache, TranslatedBlock};
use std::collections::VecDeque;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::Instant;

pub const RAM_BASE: u64 = 0x8000_0000;
pub const SYSCON_ADDR: u64 = 0x0010_0000;
pub const UART_ADDR: u64 = 0x1000_0000;
/// CLINT-style machine software-interrupt registers: one word per hart.
pub const CLINT_MSIP_BASE: u64 = 0x0200_0000;
/// Writing these to SYSCON ends the simulation.
pub const SYSCON_PASS: u32 = 0x5555;
pub const SYSCON_EXIT_MAGIC: u32 = 0x3333;

const USER_STACK_SIZE: u64 = 2 * 1024 * 1024;

/// State shared across cores even in parallel execution mode. Everything
/// here is either atomic or lock-protected.
pub struct SharedFlags {
    pub mip: Vec<AtomicU64>,
    pub exit: Mutex<Option<i64>>,
    pub exit_flag: AtomicBool,
    /// Parallel mode: ask every worker to return at its next block end.
    pub stop: AtomicBool,
    /// Parallel mode: pending SIMCTRL value awaiting global application.
    pub switch_request: Mutex<Option<u64>>,
    pub console_out: Mutex<Vec<u8>>,
    pub console_in: Mutex<VecDeque<u8>>,
    pub echo_console: bool,
    /// Total retired instructions (all cores).
    pub retired: AtomicU64,
    /// Parallel-mode timer compare values (lockstep uses the event queue).
    pub mtimecmp: Vec<AtomicU64>,
    /// Parallel-mode thread start requests for offline cores (clone).
    pub start_requests: Mutex<Vec<Option<StartRequest>>>,
    pub start_cv: Condvar,
    pub wall_start: Instant,
}

#[derive(Clone)]
pub struct StartRequest {
    pub regs: [u64; 32],
    pub pc: u64,
}

impl SharedFlags {
    pub fn new(cores: usize, echo_console: bool) -> Self {
        SharedFlags {
            mip: (0..cores).map(|_| AtomicU64::new(0)).collect(),
            exit: Mutex::new(None),
            exit_flag: AtomicBool::new(false),
            stop: AtomicBool::new(false),
            switch_request: Mutex::new(None),
            console_out: Mutex::new(Vec::new()),
            console_in: Mutex::new(VecDeque::new()),
            echo_console,
            retired: AtomicU64::new(0),
            mtimecmp: (0..cores).map(|_| AtomicU64::new(u64::MAX)).collect(),
            start_requests: Mutex::new(vec![None; cores]),
            start_cv: Condvar::new(),
            wall_start: Instant::now(),
        }
    }

    pub fn request_exit(&self, code: i64) {
        let mut guard = self.exit.lock().unwrap();
        if guard.is_none() {
            *guard = Some(code);
        }
        self.exit_flag.store(true, Ordering::SeqCst);
        self.stop.store(true, Ordering::SeqCst);
        self.start_cv.notify_all();
    }

    pub fn exit_code(&self) -> Option<i64> {
        *self.exit.lock().unwrap()
    }

    pub fn set_mip_bits(&self, core: usize, bits: u64) {
        self.mip[core].fetch_or(bits, Ordering::SeqCst);
    }

    pub fn clear_mip_bits(&self, core: usize, bits: u64) {
        self.mip[core].fetch_and(!bits, Ordering::SeqCst);
    }

    pub fn putchar(&self, byte: u8) {
        self.console_out.lock().unwrap().push(byte);
        if self.echo_console {
            use std::io::Write;
            let _ = std::io::stdout().write_all(&[byte]);
            if byte == b'\n' {
                let _ = std::io::stdout().flush();
            }
        }
    }
}

/// Where execution resumes within a core's state machine; every yield
/// records the exact continuation so effects are never replayed.
#[derive(Debug, Clone, Copy)]
pub enum Resume {
    /// Look up (or translate) the block at `pc`.
    Dispatch,
    /// `cur` is set; run the entry guard and entry cost, then step 0.
    Enter { skip_icheck: bool },
    /// Executing `cur` at `idx`; `phase`: 0 = line check, 1 = crossing line
    /// check, 2 = sync flush + execute.
    Step { idx: u32, phase: u8 },
    /// Past the last step: flush, poll interrupts, follow the edge.
    BlockEnd { next: NextPc },
    /// Raise a trap at `pc` (pending cycles flushed first).
    Trap { cause: u64, interrupt: bool, tval: u64 },
}

#[derive(Debug, Clone, Copy)]
pub enum NextPc {
    Vpc { vpc: u64, chain: Option<PendingChain> },
    Chain { link: BlockLink, vpc: u64, rechain: Option<PendingChain> },
}

impl NextPc {
    pub fn vpc(&self) -> u64 {
        match self {
            NextPc::Vpc { vpc, .. } | NextPc::Chain { vpc, .. } => *vpc,
        }
    }
}

/// A block edge waiting to be linked to whatever block the dispatch loop
/// resolves next.
#[derive(Debug, Clone, Copy)]
pub struct PendingChain {
    pub idx: u32,
    pub serial: u64,
    pub edge: ChainEdge,
    /// Page of the predecessor's end; a cross-page link gets a guard.
    pub from_page: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WaitKind {
    Wfi,
    Futex(u64),
    Rendezvous,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunState {
    Ready,
    Waiting(WaitKind),
    /// Not yet started (user-target cores before clone).
    Offline,
    /// Exited (user-target thread exit).
    Done,
}

pub struct CurrentBlock {
    pub block: Arc<TranslatedBlock>,
    pub idx: u32,
    pub serial: u64,
}

/// One simulated hardware thread: architectural state, its code cache and
/// pipeline model, and its scheduling bookkeeping.
pub struct Core {
    pub index: usize,
    pub regs: [u64; 32],
    pub pc: u64,
    pub ps: PrivState,
    pub cache: CodeCache,
    pub pipeline_kind: PipelineKind,
    pub model: Box<dyn PipelineModel>,
    pub cur: Option<CurrentBlock>,
    pub resume: Resume,
    pub state: RunState,
    /// Global cycle at which this context resumes.
    pub resume_at: u64,
    pub local_clock: u64,
    pub pending_cycles: u64,
    /// Retired instructions not yet flushed to the shared counter
    /// (flushed at block ends to keep the hot path free of atomics).
    pub retired_batch: u64,
    /// Guards the minimum block-end yield against re-entry.
    pub block_end_flushed: bool,
    pub pending_chain: Option<PendingChain>,
    /// Active timer event (lockstep).
    pub timer_token: Option<u64>,
    pub block_execs: u64,
    pub chain_follows: u64,
    pub yields: u64,
}

impl Core {
    pub fn new(cfg: &SimConfig, index: usize, mode: u8) -> Self {
        Core {
            index,
            regs: [0; 32],
            pc: 0,
            ps: PrivState::new(index as u64, mode),
            cache: CodeCache::default(),
            pipeline_kind: cfg.pipeline[index],
            model: create_model(cfg.pipeline[index], &cfg.pipeline_params),
            cur: None,
            resume: Resume::Dispatch,
            state: RunState::Ready,
            resume_at: 0,
            local_clock: 0,
            pending_cycles: 0,
            retired_batch: 0,
            block_end_flushed: false,
            pending_chain: None,
            timer_token: None,
            block_execs: 0,
            chain_follows: 0,
            yields: 0,
        }
    }

    /// Cheap stand-in swapped into the machine while a core is executing.
    pub(crate) fn placeholder() -> Self {
        Core {
            index: usize::MAX,
            regs: [0; 32],
            pc: 0,
            ps: PrivState::new(u64::MAX, 0),
            cache: CodeCache::default(),
            pipeline_kind: PipelineKind::Atomic,
            model: create_model(PipelineKind::Atomic, &Default::default()),
            cur: None,
            resume: Resume::Dispatch,
            state: RunState::Offline,
            resume_at: u64::MAX,
            local_clock: 0,
            pending_cycles: 0,
            retired_batch: 0,
            block_end_flushed: false,
            pending_chain: None,
            timer_token: None,
            block_execs: 0,
            chain_follows: 0,
            yields: 0,
        }
    }
}

/// User-target address-space bookkeeping.
pub struct UserSpace {
    pub brk: u64,
    pub brk_floor: u64,
    pub mmap_next: u64,
    pub mmap_ceiling: u64,
}

/// Lockstep rendezvous for a global memory/mode switch.
pub struct PendingSwitch {
    pub value: u64,
    pub arrived: u64,
}

/// Architectural snapshot captured when a reconfiguration commits.
pub struct Snapshot {
    pub regs: Vec<[u64; 32]>,
    pub pcs: Vec<u64>,
    pub mem: Vec<u8>,
}

pub struct Machine {
    pub cfg: SimConfig,
    pub gmem: Arc<GuestMemory>,
    pub cores: Vec<Core>,
    pub mems: Vec<CoreMem>,
    pub shmem: SharedMem,
    pub events: EventQueue,
    pub shared: Arc<SharedFlags>,
    pub now: u64,
    pub exec_mode: ExecMode,
    pub pending_switch: Option<PendingSwitch>,
    /// Set when a committed reconfiguration changes the execution mode.
    pub mode_change: Option<ExecMode>,
    pub user: Option<UserSpace>,
    /// addr -> cores parked on it (lockstep futex).
    pub futex_waiters: std::collections::HashMap<u64, Vec<usize>>,
    pub context_switches: u64,
    pub snapshot: Option<Snapshot>,
    pub echo_console: bool,
}

#[derive(Debug)]
pub enum LoadError {
    Elf(elf::ElfError),
    SegmentOutsideRam { vaddr: u64, size: u64 },
}

impl std::fmt::Display for LoadError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LoadError::Elf(e) => write!(f, "{e}"),
            LoadError::SegmentOutsideRam { vaddr, size } => {
                write!(f, "segment {vaddr:#x}+{size:#x} outside guest RAM")
            }
        }
    }
}

impl std::error::Error for LoadError {}

impl From<elf::ElfError> for LoadError {
    fn from(e: elf::ElfError) -> Self {
        LoadError::Elf(e)
    }
}

impl Machine {
    /// Build a machine and load the guest image. The config must already be
    /// validated.
    pub fn new(cfg: SimConfig, image: &[u8]) -> Result<Machine, LoadError> {
        Machine::with_console(cfg, image, false)
    }

    pub fn with_console(
        cfg: SimConfig,
        image: &[u8],
        echo_console: bool,
    ) -> Result<Machine, LoadError> {
        let img = elf::parse(image)?;
        let ram_base = match cfg.target {
            EmulationTarget::User => 0,
            _ => RAM_BASE,
        };
        let gmem = Arc::new(GuestMemory::new(ram_base, cfg.memory_size));
        for seg in &img.segments {
            if !gmem.contains(seg.vaddr, seg.mem_size.max(1)) {
                return Err(LoadError::SegmentOutsideRam {
                    vaddr: seg.vaddr,
                    size: seg.mem_size,
                });
            }
            gmem.write_bytes(seg.vaddr, &seg.data);
        }

        let boot_mode = match cfg.target {
            EmulationTarget::User => crate::sys::PRIV_U,
            EmulationTarget::Supervisor => crate::sys::PRIV_S,
            EmulationTarget::Machine => crate::sys::PRIV_M,
        };
        let mut cores: Vec<Core> =
            (0..cfg.cores).map(|i| Core::new(&cfg, i, boot_mode)).collect();
        let mems: Vec<CoreMem> = (0..cfg.cores).map(|_| CoreMem::new(&cfg.memory)).collect();
        let shmem = SharedMem::new(&cfg.memory);
        let shared = Arc::new(SharedFlags::new(cfg.cores, echo_console));

        let mut user = None;
        match cfg.target {
            EmulationTarget::User => {
                // Core 0 runs; the rest come online via clone.
                let seg_end = img
                    .segments
                    .iter()
                    .map(|s| s.vaddr + s.mem_size)
                    .max()
                    .unwrap_or(0x1_0000);
                let brk = (seg_end + 0xfff) & !0xfff;
                let stack_region = cfg.cores as u64 * USER_STACK_SIZE;
                let stack0_top = cfg.memory_size - 64;
                user = Some(UserSpace {
                    brk,
                    brk_floor: brk,
                    mmap_next: cfg.memory_size - stack_region - 0x1000,
                    mmap_ceiling: brk + 0x1000,
                });
                for (i, core) in cores.iter_mut().enumerate() {
                    core.pc = img.entry;
                    if i == 0 {
                        core.regs[2] = setup_user_stack(&gmem, stack0_top, &cfg.args);
                    } else {
                        core.state = RunState::Offline;
                        core.resume_at = u64::MAX;
                    }
                }
                // Delegate nothing; user traps are emulated directly.
            }
            EmulationTarget::Supervisor => {
                for core in cores.iter_mut() {
                    core.pc = img.entry;
                    core.regs[10] = core.index as u64; // a0 = hartid
                    core.regs[11] = 0; // a1 = no device tree
                    // Exceptions and S-level interrupts are delegated; ecall
                    // from S (cause 9) stays with the SBI emulation layer.
                    core.ps.medeleg = 0xffff & !(1 << 9) & !(1 << 11);
                    core.ps.mideleg =
                        crate::sys::MIP_SSIP | crate::sys::MIP_STIP | crate::sys::MIP_SEIP;
                }
            }
            EmulationTarget::Machine => {
                for core in cores.iter_mut() {
                    core.pc = img.entry;
                    core.regs[10] = core.index as u64;
                    core.regs[11] = 0;
                }
            }
        }

        let exec_mode = cfg.mode;
        Ok(Machine {
            cfg,
            gmem,
            cores,
            mems,
            shmem,
            events: EventQueue::default(),
            shared,
            now: 0,
            exec_mode,
            pending_switch: None,
            mode_change: None,
            user,
            futex_waiters: std::collections::HashMap::new(),
            context_switches: 0,
            snapshot: None,
            echo_console,
        })
    }

    pub fn console_output(&self) -> Vec<u8> {
        self.shared.console_out.lock().unwrap().clone()
    }

    pub fn feed_console_input(&self, bytes: &[u8]) {
        self.shared.console_in.lock().unwrap().extend(bytes.iter().copied());
    }

    /// Capture the reconfiguration snapshot (memory plus per-core registers).
    pub(crate) fn capture_snapshot(&mut self) {
        let mut mem = vec![0u8; self.gmem.len() as usize];
        self.gmem.read_bytes(self.gmem.base(), &mut mem);
        self.snapshot = Some(Snapshot {
            regs: self.cores.iter().map(|c| c.regs).collect(),
            pcs: self.cores.iter().map(|c| c.pc).collect(),
            mem,
        });
    }

    /// Assemble the end-of-run report. Yielded-but-not-yet-resumed cycles
    /// and pending cycles are folded into the final mcycle so every retired
    /// instruction is accounted even when the run stops mid-cycle.
    pub fn report(&mut self, wall_seconds: f64) -> StatsReport {
        for core in &mut self.cores {
            if core.state == RunState::Ready
                && core.resume_at != u64::MAX
                && core.resume_at > core.local_clock
            {
                core.local_clock = core.resume_at;
            }
            core.local_clock += core.pending_cycles;
            core.pending_cycles = 0;
        }
        let cores = self
            .cores
            .iter()
            .zip(self.mems.iter())
            .map(|(c, m)| CoreStats {
                minstret: c.ps.minstret,
                mcycle: c.local_clock.wrapping_add(c.ps.mcycle_offset as u64),
                block_translations: c.cache.translations,
                block_executions: c.block_execs,
                guard_retranslations: c.cache.guard_retranslations,
                decode_calls: c.cache.decode_calls,
                chain_follows: c.chain_follows,
                yields: c.yields,
                l0d_hits: m.l0d.hits,
                l0d_misses: m.l0d.misses,
                l0i_hits: m.l0i.hits,
                l0i_misses: m.l0i.misses,
                itlb_hits: m.itlb.hits,
                itlb_misses: m.itlb.misses,
                dtlb_hits: m.dtlb.hits,
                dtlb_misses: m.dtlb.misses,
                l1i_hits: m.l1i.hits,
                l1i_misses: m.l1i.misses,
                l1d_hits: m.l1d.hits,
                l1d_misses: m.l1d.misses,
                l1d_writebacks: m.l1d.writebacks,
                traps_taken: c.ps.traps_taken,
                interrupts_taken: c.ps.interrupts_taken,
            })
            .collect();
        let mem = MemGlobalStats {
            l2_hits: self.shmem.l2.hits,
            l2_misses: self.shmem.l2.misses,
            l2_writebacks: self.shmem.l2.writebacks,
            l2_evictions: self.shmem.l2.evictions,
            coherence_invalidations: self.shmem.invalidations,
            coherence_downgrades: self.shmem.downgrades,
            coherence_upgrades: self.shmem.upgrades,
            page_walks: self.shmem.page_walks,
        };
        let probe = match self.cfg.probe {
            Some((addr, count)) => (0..count)
                .map(|k| {
                    let a = addr + k * 8;
                    let v = if self.gmem.contains(a, 8) { self.gmem.read_u64(a) } else { 0 };
                    (a, v)
                })
                .collect(),
            None => Vec::new(),
        };
        StatsReport {
            cores,
            mem,
            sched: SchedStats {
                context_switches: self.context_switches,
                events_fired: self.events.fired,
            },
            global_cycle: self.now,
            exit_code: self.shared.exit_code().unwrap_or(0),
            probe,
            wall_seconds,
        }
    }

    /// Reset all statistics counters (reconfiguration with stats reset).
    pub(crate) fn reset_stats(&mut self) {
        for core in &mut self.cores {
            core.ps.minstret = 0;
            core.block_execs = 0;
            core.chain_follows = 0;
            core.yields = 0;
            core.cache.translations = 0;
            core.cache.guard_retranslations = 0;
            core.cache.decode_calls = 0;
        }
        for m in &mut self.mems {
            m.l0d.hits = 0;
            m.l0d.misses = 0;
            m.l0i.hits = 0;
            m.l0i.misses = 0;
            m.itlb.hits = 0;
            m.itlb.misses = 0;
            m.dtlb.hits = 0;
            m.dtlb.misses = 0;
            m.l1i.hits = 0;
            m.l1i.misses = 0;
            m.l1d.hits = 0;
            m.l1d.misses = 0;
            m.l1d.writebacks = 0;
        }
        self.shmem.l2.hits = 0;
        self.shmem.l2.misses = 0;
        self.shmem.l2.writebacks = 0;
        self.shmem.l2.evictions = 0;
        self.shmem.invalidations = 0;
        self.shmem.downgrades = 0;
        self.shmem.upgrades = 0;
        self.shmem.page_walks = 0;
        self.context_switches = 0;
        self.events.fired = 0;
    }
}

fn setup_user_stack(gmem: &GuestMemory, stack_top: u64, args: &[String]) -> u64 {
    // Strings at the top, then argc/argv/envp/auxv below, 16-byte aligned.
    let mut str_ptr = stack_top;
    let mut arg_ptrs = Vec::new();
    for arg in args {
        str_ptr -= arg.len() as u64 + 1;
        gmem.write_bytes(str_ptr, arg.as_bytes());
        gmem.write_u8(str_ptr + arg.len() as u64, 0);
        arg_ptrs.push(str_ptr);
    }
    let words = 1 + arg_ptrs.len() + 1 + 1 + 2; // argc, argv*, NULL, envp NULL, AT_NULL
    let mut sp = (str_ptr - words as u64 * 8) & !15;
    let base = sp;
    gmem.write_u64(sp, args.len() as u64);
    sp += 8;
    for p in &arg_ptrs {
        gmem.write_u64(sp, *p);
        sp += 8;
    }
    gmem.write_u64(sp, 0); // argv terminator
    sp += 8;
    gmem.write_u64(sp, 0); // envp terminator
    sp += 8;
    gmem.write_u64(sp, 0); // AT_NULL
    gmem.write_u64(sp + 8, 0);
    base
}

/// The memory-mapped devices: a test-finisher SYSCON and a minimal UART.
pub struct Bus<'a> {
    pub shared: &'a SharedFlags,
}

impl DeviceBus for Bus<'_> {
    fn load(&mut self, paddr: u64, width: u64) -> Option<u64> {
        let harts = self.shared.mip.len() as u64;
        if (CLINT_MSIP_BASE..CLINT_MSIP_BASE + 4 * harts).contains(&paddr) && paddr % 4 == 0 {
            let hart = ((paddr - CLINT_MSIP_BASE) / 4) as usize;
            let mip = self.shared.mip[hart].load(std::sync::atomic::Ordering::Relaxed);
            return Some(mip >> 3 & 1);
        }
        match paddr {
            SYSCON_ADDR => Some(0),
            UART_ADDR => {
                let mut inp = self.shared.console_in.lock().unwrap();
                Some(inp.pop_front().map_or(0, u64::from))
            }
            a if a == UART_ADDR + 5 => {
                // LSR: transmitter always ready; data-ready when input queued.
                let ready = !self.shared.console_in.lock().unwrap().is_empty();
                Some(0x60 | ready as u64)
            }
            _ => {
                let _ = width;
                None
            }
        }
    }

    fn store(&mut self, paddr: u64, _width: u64, value: u64) -> bool {
        let harts = self.shared.mip.len() as u64;
        if (CLINT_MSIP_BASE..CLINT_MSIP_BASE + 4 * harts).contains(&paddr) && paddr % 4 == 0 {
            let hart = ((paddr - CLINT_MSIP_BASE) / 4) as usize;
            if value & 1 != 0 {
                self.shared.set_mip_bits(hart, crate::sys::MIP_MSIP);
            } else {
                self.shared.clear_mip_bits(hart, crate::sys::MIP_MSIP);
            }
            return true;
        }
        match paddr {
            SYSCON_ADDR => {
                let v = value as u32;
                if v == SYSCON_PASS {
                    self.shared.request_exit(0);
                } else if v & 0xffff == SYSCON_EXIT_MAGIC {
                    self.shared.request_exit((v >> 16) as i64);
                }
                true
            }
            UART_ADDR => {
                self.shared.putchar(value as u8);
                true
            }
            _ => false,
        }
    }
}

/// A trap raised while executing; `pc` becomes the exception PC.
#[derive(Debug, Clone, Copy)]
pub struct PendingTrap {
    pub trap: Trap,
    pub pc: u64,
}
