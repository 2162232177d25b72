//! Simulation configuration.
//!
//! Every model parameter (latencies, geometries, penalties) lives here so
//! runs are reproducible from a single config file plus flag overrides.

use serde::Deserialize;
use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmulationTarget {
    /// Linux syscall emulation, guest runs in U mode.
    User,
    /// SBI emulation, guest runs in S mode.
    Supervisor,
    /// Bare metal, guest runs in M mode.
    Machine,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExecMode {
    Lockstep,
    Parallel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PipelineKind {
    /// Cycle count not tracked.
    Atomic,
    /// Each instruction takes one cycle.
    Simple,
    /// 5-stage in-order scalar pipeline with a static branch predictor.
    InOrder,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MemoryModelKind {
    /// Memory accesses not tracked.
    Atomic,
    /// TLB hit rate collected; caches not simulated.
    Tlb,
    /// TLB and per-core L1 + shared L2 hit rates collected; no coherence.
    Cache,
    /// Directory-based MESI with a shared L2. Lockstep execution required.
    Mesi,
}

impl fmt::Display for PipelineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PipelineKind::Atomic => "atomic",
            PipelineKind::Simple => "simple",
            PipelineKind::InOrder => "inorder",
        })
    }
}

impl fmt::Display for MemoryModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MemoryModelKind::Atomic => "atomic",
            MemoryModelKind::Tlb => "tlb",
            MemoryModelKind::Cache => "cache",
            MemoryModelKind::Mesi => "mesi",
        })
    }
}

/// In-order pipeline model parameters. All penalties are extra cycles on
/// top of the 1-cycle base cost.
#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(rename_all = "kebab-case", default)]
pub struct PipelineParams {
    /// Charged when the static backward-taken/forward-not-taken prediction
    /// is wrong, and for every indirect/return-style transfer.
    pub branch_penalty: u32,
    pub loaduse_penalty: u32,
    /// Charged at block entry when the first instruction is 4 bytes long
    /// and starts at an address = 2 mod 4.
    pub misaligned_fetch_penalty: u32,
    pub mul_latency: u32,
    pub div_latency: u32,
}

impl Default for PipelineParams {
    fn default() -> Self {
        PipelineParams {
            branch_penalty: 2,
            loaduse_penalty: 1,
            misaligned_fetch_penalty: 1,
            mul_latency: 2,
            div_latency: 32,
        }
    }
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(rename_all = "kebab-case", default)]
pub struct CacheGeometry {
    pub size: u64,
    pub ways: u32,
}

impl Default for CacheGeometry {
    fn default() -> Self {
        CacheGeometry { size: 32 * 1024, ways: 4 }
    }
}

impl CacheGeometry {
    pub fn sets(&self, line_size: u64) -> u64 {
        self.size / line_size / self.ways as u64
    }
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(rename_all = "kebab-case", default)]
pub struct TlbGeometry {
    pub entries: u32,
    pub ways: u32,
}

impl Default for TlbGeometry {
    fn default() -> Self {
        TlbGeometry { entries: 32, ways: 4 }
    }
}

/// Cycle costs charged by the memory models.
#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(rename_all = "kebab-case", default)]
pub struct LatencyConfig {
    /// Extra cycles for an L1 hit (on top of the pipeline cost).
    pub l1_hit: u32,
    /// L1 miss serviced by the L2 (also the directory transaction cost).
    pub l2: u32,
    /// L2 miss serviced by memory.
    pub memory: u32,
    /// Page-table walk, per level traversed.
    pub walk_per_level: u32,
    /// Each coherence invalidation or downgrade of a remote core.
    pub invalidation: u32,
}

impl Default for LatencyConfig {
    fn default() -> Self {
        LatencyConfig { l1_hit: 0, l2: 20, memory: 100, walk_per_level: 3, invalidation: 10 }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "kebab-case", default)]
pub struct MemConfig {
    pub model: MemoryModelKind,
    /// 64 or 4096. 4096 turns the L0 data cache into an L0 TLB.
    pub line_size: u64,
    pub l0_entries: u64,
    pub itlb: TlbGeometry,
    pub dtlb: TlbGeometry,
    pub l1i: CacheGeometry,
    pub l1d: CacheGeometry,
    pub l2: CacheGeometry,
    pub latency: LatencyConfig,
}

impl Default for MemConfig {
    fn default() -> Self {
        MemConfig {
            model: MemoryModelKind::Atomic,
            line_size: 64,
            l0_entries: 1024,
            itlb: TlbGeometry::default(),
            dtlb: TlbGeometry::default(),
            l1i: CacheGeometry { size: 32 * 1024, ways: 4 },
            l1d: CacheGeometry { size: 32 * 1024, ways: 4 },
            l2: CacheGeometry { size: 512 * 1024, ways: 8 },
            latency: LatencyConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "kebab-case", default)]
pub struct SimConfig {
    pub cores: usize,
    pub target: EmulationTarget,
    pub mode: ExecMode,
    /// One entry per core; a single entry is broadcast to all cores.
    pub pipeline: Vec<PipelineKind>,
    pub pipeline_params: PipelineParams,
    pub memory: MemConfig,
    /// Guest RAM size in bytes.
    pub memory_size: u64,
    /// Simulated clock frequency, used by clock_gettime.
    pub clock_hz: u64,
    /// Stop after this many retired instructions (across all cores).
    pub max_insns: Option<u64>,
    pub dump_blocks: bool,
    /// Reset statistics counters when a SIMCTRL reconfiguration commits.
    pub stats_reset_on_reconfigure: bool,
    /// Record an architectural snapshot when a reconfiguration commits.
    pub snapshot_on_reconfigure: bool,
    /// Require reproducible execution: lockstep only, including runtime
    /// switches.
    pub deterministic: bool,
    /// argv for user-target guests (argv[0] defaults to the image name).
    pub args: Vec<String>,
    /// Report `count` 64-bit guest words starting at `addr` in the stats.
    pub probe: Option<(u64, u64)>,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            cores: 1,
            target: EmulationTarget::Machine,
            mode: ExecMode::Lockstep,
            pipeline: vec![PipelineKind::Simple],
            pipeline_params: PipelineParams::default(),
            memory: MemConfig::default(),
            memory_size: 256 * 1024 * 1024,
            clock_hz: 1_000_000_000,
            max_insns: None,
            dump_blocks: false,
            stats_reset_on_reconfigure: true,
            snapshot_on_reconfigure: false,
            deterministic: false,
            args: Vec::new(),
            probe: None,
        }
    }
}

#[derive(Debug)]
pub enum ConfigError {
    NoCores,
    TooManyCores(usize),
    PipelineCount { given: usize, cores: usize },
    ParallelNeedsAtomic(MemoryModelKind),
    DeterministicNeedsLockstep,
    BadLineSize(u64),
    NotPowerOfTwo(&'static str, u64),
    BadGeometry(&'static str),
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConfigError::NoCores => write!(f, "at least one core is required"),
            ConfigError::TooManyCores(n) => write!(f, "at most 64 cores supported, got {n}"),
            ConfigError::PipelineCount { given, cores } => write!(
                f,
                "pipeline list has {given} entries but {cores} cores are configured \
                 (give one entry, or one per core)"
            ),
            ConfigError::ParallelNeedsAtomic(m) => write!(
                f,
                "parallel execution requires the atomic memory model \
                 (configured memory model: {m})"
            ),
            ConfigError::DeterministicNeedsLockstep => {
                write!(f, "deterministic runs require lockstep execution")
            }
            ConfigError::BadLineSize(n) => write!(f, "line size must be 64 or 4096, got {n}"),
            ConfigError::NotPowerOfTwo(what, n) => write!(f, "{what} must be a power of two ({n})"),
            ConfigError::BadGeometry(what) => write!(f, "invalid geometry: {what}"),
        }
    }
}

impl std::error::Error for ConfigError {}

impl SimConfig {
    /// Validate and normalize (broadcast single pipeline entry to all cores).
    pub fn validate(mut self) -> Result<SimConfig, ConfigError> {
        if self.cores == 0 {
            return Err(ConfigError::NoCores);
        }
        if self.cores > 64 {
            return Err(ConfigError::TooManyCores(self.cores));
        }
        if self.pipeline.len() == 1 && self.cores > 1 {
            self.pipeline = vec![self.pipeline[0]; self.cores];
        }
        if self.pipeline.len() != self.cores {
            return Err(ConfigError::PipelineCount {
                given: self.pipeline.len(),
                cores: self.cores,
            });
        }
        if self.mode == ExecMode::Parallel && self.memory.model != MemoryModelKind::Atomic {
            return Err(ConfigError::ParallelNeedsAtomic(self.memory.model));
        }
        if self.mode == ExecMode::Parallel && self.deterministic {
            return Err(ConfigError::DeterministicNeedsLockstep);
        }
        if self.memory.line_size != 64 && self.memory.line_size != 4096 {
            return Err(ConfigError::BadLineSize(self.memory.line_size));
        }
        // Page-sized L0 lines only make sense when caches are not simulated;
        // with a cache model the L0 must match the 64-byte model lines to
        // keep the inclusion property line-granular.
        if self.memory.line_size == 4096
            && matches!(self.memory.model, MemoryModelKind::Cache | MemoryModelKind::Mesi)
        {
            return Err(ConfigError::BadLineSize(self.memory.line_size));
        }
        if !self.memory.l0_entries.is_power_of_two() {
            return Err(ConfigError::NotPowerOfTwo("L0 entry count", self.memory.l0_entries));
        }
        for (name, geo) in
            [("l1i", self.memory.l1i), ("l1d", self.memory.l1d), ("l2", self.memory.l2)]
        {
            let sets = geo.sets(self.memory.line_size.min(64));
            if sets == 0 || !sets.is_power_of_two() {
                return Err(ConfigError::BadGeometry(name));
            }
        }
        for (name, tlb) in [("itlb", self.memory.itlb), ("dtlb", self.memory.dtlb)] {
            if tlb.ways == 0 || tlb.entries % tlb.ways != 0 {
                return Err(ConfigError::BadGeometry(name));
            }
            if !(tlb.entries / tlb.ways).is_power_of_two() {
                return Err(ConfigError::BadGeometry(name));
            }
        }
        if !self.memory_size.is_power_of_two() {
            return Err(ConfigError::NotPowerOfTwo("memory size", self.memory_size));
        }
        Ok(self)
    }
}
