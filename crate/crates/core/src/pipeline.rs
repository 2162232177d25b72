//! Pluggable pipeline timing models.
//!
//! Models are invoked as hooks at translation time only: the cycle counts
//! they return are baked into the translated block, so re-executing a block
//! runs no model code. Hooks must therefore be deterministic functions of
//! the instruction stream and the model's own state.
//!
//! For a conditional branch the two hooks annotate the two edges:
//! `after_instruction` prices the sequential (not-taken) edge and
//! `after_taken_branch` the taken edge; exactly one of the two costs is
//! charged per execution.

use crate::config::{PipelineKind, PipelineParams};
use crate::isa::{DecodedInstruction, Mnemonic};
use std::collections::HashMap;

pub trait PipelineModel: Send {
    /// Cycles charged when a block is entered. `first_len` is the byte
    /// length of the block's first instruction.
    fn begin_block(&mut self, _pc: u64, _first_len: u8) -> u32 {
        0
    }

    /// Cycles for one instruction on its sequential edge.
    fn after_instruction(&mut self, op: &DecodedInstruction, compressed: bool) -> u32;

    /// Cycles for a conditional branch on its taken edge.
    fn after_taken_branch(&mut self, op: &DecodedInstruction, compressed: bool) -> u32;

    /// Whether this model tracks cycles at all.
    fn tracks_cycles(&self) -> bool {
        true
    }
}

/// Cycle count not tracked.
#[derive(Default)]
pub struct AtomicModel;

impl PipelineModel for AtomicModel {
    fn after_instruction(&mut self, _op: &DecodedInstruction, _compressed: bool) -> u32 {
        0
    }
    fn after_taken_branch(&mut self, _op: &DecodedInstruction, _compressed: bool) -> u32 {
        0
    }
    fn tracks_cycles(&self) -> bool {
        false
    }
}

/// Every instruction takes one cycle; memory stalls come from the memory
/// model separately.
#[derive(Default)]
pub struct SimpleModel;

impl PipelineModel for SimpleModel {
    fn after_instruction(&mut self, _op: &DecodedInstruction, _compressed: bool) -> u32 {
        1
    }
    fn after_taken_branch(&mut self, _op: &DecodedInstruction, _compressed: bool) -> u32 {
        1
    }
}

/// A classic 5-stage in-order scalar pipeline.
///
/// * Static branch prediction: backward taken, forward not taken;
///   unconditional jumps predicted taken; indirect and pipeline-flushing
///   transfers (JALR, MRET, SRET, FENCE.I, SFENCE.VMA) always pay the
///   branch penalty.
/// * A load-use dependency on the immediately preceding load stalls one
///   bubble. Hazard state resets at every block entry: the first
///   instruction of a block conservatively assumes no pending hazard.
/// * Jumping to a 4-byte instruction at an address = 2 mod 4 costs an
///   extra fetch cycle.
/// * Multiplies and divides add configurable iterative latencies.
pub struct InOrderModel {
    params: PipelineParams,
    last_load_dest: u8,
}

impl InOrderModel {
    pub fn new(params: PipelineParams) -> Self {
        InOrderModel { params, last_load_dest: 0 }
    }
}

/// Registers actually read by an instruction, with 0 meaning "none"
/// (reads of x0 can never stall).
fn reads(op: &DecodedInstruction) -> (u8, u8) {
    use Mnemonic::*;
    match op.mnemonic {
        Lui | Auipc | Jal | Ecall | Ebreak | Mret | Sret | Wfi | Fence | FenceI => (0, 0),
        // Immediate CSR forms carry the zimm in rs1.
        Csrrwi | Csrrsi | Csrrci => (0, 0),
        Jalr | Csrrw | Csrrs | Csrrc => (op.rs1, 0),
        m if m.is_load() => (op.rs1, 0),
        m if m.is_store() || m.is_amo() => (op.rs1, op.rs2),
        SfenceVma => (op.rs1, op.rs2),
        m if m.is_cond_branch() => (op.rs1, op.rs2),
        // OP-IMM and shifts read rs1 only; rs2 is 0 for them by decode.
        _ => (op.rs1, op.rs2),
    }
}

impl PipelineModel for InOrderModel {
    fn begin_block(&mut self, pc: u64, first_len: u8) -> u32 {
        self.last_load_dest = 0;
        if pc % 4 == 2 && first_len == 4 {
            self.params.misaligned_fetch_penalty
        } else {
            0
        }
    }

    fn after_instruction(&mut self, op: &DecodedInstruction, _compressed: bool) -> u32 {
        use Mnemonic::*;
        let mut cycles = 1;
        let (r1, r2) = reads(op);
        if self.last_load_dest != 0
            && (r1 == self.last_load_dest || r2 == self.last_load_dest)
        {
            cycles += self.params.loaduse_penalty;
        }
        self.last_load_dest = if op.mnemonic.is_load() { op.rd } else { 0 };
        match op.mnemonic {
            Mul | Mulh | Mulhsu | Mulhu | Mulw => cycles += self.params.mul_latency,
            Div | Divu | Rem | Remu | Divw | Divuw | Remw | Remuw => {
                cycles += self.params.div_latency
            }
            Jalr | Mret | Sret | FenceI | SfenceVma => cycles += self.params.branch_penalty,
            // Sequential edge of a conditional branch: a backward branch was
            // predicted taken, so falling through is a misprediction.
            m if m.is_cond_branch() && op.imm < 0 => cycles += self.params.branch_penalty,
            _ => {}
        }
        cycles
    }

    fn after_taken_branch(&mut self, op: &DecodedInstruction, _compressed: bool) -> u32 {
        debug_assert!(op.mnemonic.is_cond_branch());
        // Taken edge: a forward branch was predicted not taken.
        if op.imm >= 0 {
            1 + self.params.branch_penalty
        } else {
            1
        }
    }
}

pub fn create_model(kind: PipelineKind, params: &PipelineParams) -> Box<dyn PipelineModel> {
    match kind {
        PipelineKind::Atomic => Box::new(AtomicModel),
        PipelineKind::Simple => Box::new(SimpleModel),
        PipelineKind::InOrder => Box::new(InOrderModel::new(*params)),
    }
}

type ModelFactory = Box<dyn Fn(&PipelineParams) -> Box<dyn PipelineModel> + Send + Sync>;

/// Name-keyed model registry. The three built-in models are pre-registered;
/// user extensions can be added under new names. Registering a name again
/// replaces the factory (idempotent for identical factories).
pub struct ModelRegistry {
    factories: HashMap<String, ModelFactory>,
}

impl Default for ModelRegistry {
    fn default() -> Self {
        let mut r = ModelRegistry { factories: HashMap::new() };
        r.register("atomic", |p| create_model(PipelineKind::Atomic, p));
        r.register("simple", |p| create_model(PipelineKind::Simple, p));
        r.register("inorder", |p| create_model(PipelineKind::InOrder, p));
        r
    }
}

impl ModelRegistry {
    pub fn register(
        &mut self,
        name: &str,
        factory: impl Fn(&PipelineParams) -> Box<dyn PipelineModel> + Send + Sync + 'static,
    ) {
        self.factories.insert(name.to_string(), Box::new(factory));
    }

    pub fn create(&self, name: &str, params: &PipelineParams) -> Option<Box<dyn PipelineModel>> {
        self.factories.get(name).map(|f| f(params))
    }

    pub fn known(&self, name: &str) -> bool {
        self.factories.contains_key(name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asm::enc;
    use crate::isa::decode;

    fn params() -> PipelineParams {
        PipelineParams::default()
    }

    #[test]
    fn simple_is_always_one() {
        let mut m = SimpleModel;
        let add = decode(enc::add(10, 11, 12)).unwrap();
        let lw = decode(enc::lw(10, 2, 0)).unwrap();
        let beq = decode(enc::beq(10, 11, -16)).unwrap();
        assert_eq!(m.after_instruction(&add, false), 1);
        assert_eq!(m.after_instruction(&lw, false), 1);
        assert_eq!(m.after_taken_branch(&beq, false), 1);
        assert_eq!(m.begin_block(0x1002, 4), 0);
    }

    #[test]
    fn inorder_load_use_bubble() {
        let mut m = InOrderModel::new(params());
        let lw = decode(enc::lw(10, 11, 0)).unwrap();
        let dependent = decode(enc::add(12, 10, 10)).unwrap();
        let independent = decode(enc::add(12, 13, 14)).unwrap();
        assert_eq!(m.after_instruction(&lw, false), 1);
        assert_eq!(m.after_instruction(&dependent, false), 2);
        // The hazard window is one instruction deep.
        m.begin_block(0x1000, 4);
        assert_eq!(m.after_instruction(&lw, false), 1);
        assert_eq!(m.after_instruction(&independent, false), 1);
        assert_eq!(m.after_instruction(&dependent, false), 1);
    }

    #[test]
    fn inorder_static_prediction() {
        let mut m = InOrderModel::new(params());
        let fwd = decode(enc::beq(10, 11, 16)).unwrap();
        let bwd = decode(enc::beq(10, 11, -16)).unwrap();
        // Forward: not-taken predicted. Taken edge pays the penalty.
        assert_eq!(m.after_instruction(&fwd, false), 1);
        assert_eq!(m.after_taken_branch(&fwd, false), 3);
        // Backward: taken predicted. Fall-through pays the penalty.
        assert_eq!(m.after_instruction(&bwd, false), 3);
        assert_eq!(m.after_taken_branch(&bwd, false), 1);
    }

    #[test]
    fn inorder_misaligned_entry() {
        let mut m = InOrderModel::new(params());
        assert_eq!(m.begin_block(0x1002, 4), 1);
        assert_eq!(m.begin_block(0x1002, 2), 0);
        assert_eq!(m.begin_block(0x1000, 4), 0);
        assert_eq!(m.begin_block(0x1004, 4), 0);
    }

    #[test]
    fn inorder_no_false_hazard_from_csr_zimm() {
        let mut m = InOrderModel::new(params());
        let lw = decode(enc::lw(5, 11, 0)).unwrap();
        // csrrwi x6, mscratch, 5: zimm equals the load destination.
        let csrrwi = decode(enc::csrrwi(6, 0x340, 5)).unwrap();
        assert_eq!(m.after_instruction(&lw, false), 1);
        assert_eq!(m.after_instruction(&csrrwi, false), 1);
    }

    #[test]
    fn inorder_mul_div_latency() {
        let mut m = InOrderModel::new(params());
        let mul = decode(enc::mul(10, 11, 12)).unwrap();
        let div = decode(enc::div(10, 11, 12)).unwrap();
        assert_eq!(m.after_instruction(&mul, false), 3);
        assert_eq!(m.after_instruction(&div, false), 33);
    }

    #[test]
    fn model_purity() {
        // Same sequence, same state -> identical annotations.
        let seq = [
            enc::lw(10, 11, 0),
            enc::add(12, 10, 10),
            enc::mul(13, 12, 12),
            enc::beq(13, 0, -8),
        ];
        let run = || {
            let mut m = InOrderModel::new(params());
            m.begin_block(0x1000, 4);
            seq.iter()
                .map(|&w| m.after_instruction(&decode(w).unwrap(), false))
                .collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn registry_builtins_and_extension() {
        let mut reg = ModelRegistry::default();
        assert!(reg.known("atomic") && reg.known("simple") && reg.known("inorder"));
        assert!(!reg.known("fancy"));
        reg.register("fancy", |p| create_model(PipelineKind::Simple, p));
        assert!(reg.known("fancy"));
        // Re-registering is idempotent.
        reg.register("fancy", |p| create_model(PipelineKind::Simple, p));
        let mut m = reg.create("fancy", &params()).unwrap();
        let add = decode(enc::add(1, 2, 3)).unwrap();
        assert_eq!(m.after_instruction(&add, false), 1);
    }
}
