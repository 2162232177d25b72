//! Cycle-level multi-core RISC-V system simulation.
//!
//! Guest basic blocks are decoded once into cached micro-step sequences with
//! cycle annotations attached at translation time by pluggable pipeline
//! models. All cores advance in deterministic lockstep under a cooperative
//! scheduler with cycle-batched yields; the memory path runs behind per-core
//! L0 filter caches in front of TLB, cache and MESI coherence models.

pub mod asm;
pub mod config;
pub mod elf;
pub mod isa;
pub mod mem;
pub mod stats;

pub mod exec;
pub mod machine;
pub mod pipeline;
pub mod sched;
pub mod sys;
pub mod xlat;

pub mod interp;
pub mod progen;

pub use config::SimConfig;
pub use machine::Machine;
pub use sched::{run, RunOutcome};
