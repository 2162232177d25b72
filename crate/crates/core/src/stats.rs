//! Simulation statistics and the machine-readable report format.
//!
//! The report is emitted as flat `key=value` lines with a stable, sorted
//! key namespace so deterministic runs can be compared byte-for-byte.
//! Wall-clock derived values are excluded from the deterministic body and
//! reported separately.

use std::fmt::Write as _;

#[derive(Debug, Default, Clone)]
pub struct CoreStats {
    pub minstret: u64,
    pub mcycle: u64,
    pub block_translations: u64,
    pub block_executions: u64,
    pub guard_retranslations: u64,
    pub decode_calls: u64,
    pub chain_follows: u64,
    pub yields: u64,
    pub l0d_hits: u64,
    pub l0d_misses: u64,
    pub l0i_hits: u64,
    pub l0i_misses: u64,
    pub itlb_hits: u64,
    pub itlb_misses: u64,
    pub dtlb_hits: u64,
    pub dtlb_misses: u64,
    pub l1i_hits: u64,
    pub l1i_misses: u64,
    pub l1d_hits: u64,
    pub l1d_misses: u64,
    pub l1d_writebacks: u64,
    pub traps_taken: u64,
    pub interrupts_taken: u64,
}

#[derive(Debug, Default, Clone)]
pub struct MemGlobalStats {
    pub l2_hits: u64,
    pub l2_misses: u64,
    pub l2_writebacks: u64,
    pub l2_evictions: u64,
    pub coherence_invalidations: u64,
    pub coherence_downgrades: u64,
    pub coherence_upgrades: u64,
    pub page_walks: u64,
}

#[derive(Debug, Default, Clone)]
pub struct SchedStats {
    pub context_switches: u64,
    pub events_fired: u64,
}

/// Full end-of-run report.
#[derive(Debug, Default, Clone)]
pub struct StatsReport {
    pub cores: Vec<CoreStats>,
    pub mem: MemGlobalStats,
    pub sched: SchedStats,
    pub global_cycle: u64,
    pub exit_code: i64,
    /// Guest memory words sampled via the probe config, (addr, value).
    pub probe: Vec<(u64, u64)>,
    /// Wall-clock seconds; excluded from the deterministic body.
    pub wall_seconds: f64,
}

impl StatsReport {
    pub fn total_minstret(&self) -> u64 {
        self.cores.iter().map(|c| c.minstret).sum()
    }

    /// Simulated MIPS over the whole run (informational, wall-clock based).
    pub fn mips(&self) -> f64 {
        if self.wall_seconds > 0.0 {
            self.total_minstret() as f64 / 1.0e6 / self.wall_seconds
        } else {
            0.0
        }
    }

    /// The deterministic machine-readable body: sorted `key=value` lines.
    pub fn machine_readable(&self) -> String {
        let mut lines: Vec<String> = Vec::new();
        let mut kv = |k: String, v: u64| lines.push(format!("{k}={v}"));
        for (i, c) in self.cores.iter().enumerate() {
            let p = format!("core{i}.");
            kv(format!("{p}minstret"), c.minstret);
            kv(format!("{p}mcycle"), c.mcycle);
            kv(format!("{p}block.translations"), c.block_translations);
            kv(format!("{p}block.executions"), c.block_executions);
            kv(format!("{p}block.guard_retranslations"), c.guard_retranslations);
            kv(format!("{p}block.decode_calls"), c.decode_calls);
            kv(format!("{p}block.chain_follows"), c.chain_follows);
            kv(format!("{p}sched.yields"), c.yields);
            kv(format!("{p}l0d.hits"), c.l0d_hits);
            kv(format!("{p}l0d.misses"), c.l0d_misses);
            kv(format!("{p}l0i.hits"), c.l0i_hits);
            kv(format!("{p}l0i.misses"), c.l0i_misses);
            kv(format!("{p}itlb.hits"), c.itlb_hits);
            kv(format!("{p}itlb.misses"), c.itlb_misses);
            kv(format!("{p}dtlb.hits"), c.dtlb_hits);
            kv(format!("{p}dtlb.misses"), c.dtlb_misses);
            kv(format!("{p}l1i.hits"), c.l1i_hits);
            kv(format!("{p}l1i.misses"), c.l1i_misses);
            kv(format!("{p}l1d.hits"), c.l1d_hits);
            kv(format!("{p}l1d.misses"), c.l1d_misses);
            kv(format!("{p}l1d.writebacks"), c.l1d_writebacks);
            kv(format!("{p}traps"), c.traps_taken);
            kv(format!("{p}interrupts"), c.interrupts_taken);
        }
        kv("mem.l2.hits".into(), self.mem.l2_hits);
        kv("mem.l2.misses".into(), self.mem.l2_misses);
        kv("mem.l2.writebacks".into(), self.mem.l2_writebacks);
        kv("mem.l2.evictions".into(), self.mem.l2_evictions);
        kv("mem.coherence.invalidations".into(), self.mem.coherence_invalidations);
        kv("mem.coherence.downgrades".into(), self.mem.coherence_downgrades);
        kv("mem.coherence.upgrades".into(), self.mem.coherence_upgrades);
        kv("mem.page_walks".into(), self.mem.page_walks);
        kv("sched.context_switches".into(), self.sched.context_switches);
        kv("sched.events_fired".into(), self.sched.events_fired);
        kv("sim.cycle".into(), self.global_cycle);
        for (addr, value) in &self.probe {
            kv(format!("guest.probe.0x{addr:x}"), *value);
        }
        lines.push(format!("sim.exit_code={}", self.exit_code));
        lines.sort_unstable();
        let mut out = String::new();
        for l in lines {
            out.push_str(&l);
            out.push('\n');
        }
        out
    }

    /// Human-readable summary, including wall-clock derived numbers.
    pub fn human_readable(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "exit code       : {}", self.exit_code);
        let _ = writeln!(out, "global cycle    : {}", self.global_cycle);
        let _ = writeln!(out, "instructions    : {}", self.total_minstret());
        let _ = writeln!(out, "wall seconds    : {:.3}", self.wall_seconds);
        let _ = writeln!(out, "simulated MIPS  : {:.2}", self.mips());
        for (i, c) in self.cores.iter().enumerate() {
            let _ = writeln!(
                out,
                "core {i}: minstret={} mcycle={} blocks={}t/{}x l0d={}h/{}m l0i={}h/{}m",
                c.minstret,
                c.mcycle,
                c.block_translations,
                c.block_executions,
                c.l0d_hits,
                c.l0d_misses,
                c.l0i_hits,
                c.l0i_misses,
            );
        }
        let m = &self.mem;
        let _ = writeln!(
            out,
            "l2: {}h/{}m wb={} ev={}  coherence: inv={} down={} up={}",
            m.l2_hits,
            m.l2_misses,
            m.l2_writebacks,
            m.l2_evictions,
            m.coherence_invalidations,
            m.coherence_downgrades,
            m.coherence_upgrades
        );
        let _ = writeln!(
            out,
            "sched: switches={} events={}",
            self.sched.context_switches, self.sched.events_fired
        );
        out
    }
}
