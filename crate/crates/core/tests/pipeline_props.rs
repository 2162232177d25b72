//! Property tests for the pipeline models and the encoder/decoder pair.

use proptest::prelude::*;
use rvcycle_core::asm::enc;
use rvcycle_core::config::PipelineParams;
use rvcycle_core::isa::{decode, DecodedInstruction, Mnemonic};
use rvcycle_core::pipeline::{InOrderModel, PipelineModel, SimpleModel};

/// A strategy over well-formed 32-bit instructions built via the encoder.
fn any_instruction() -> impl Strategy<Value = u32> {
    let r = 0u8..32;
    let imm = -2048i64..2048;
    let sh = 0u8..64;
    prop_oneof![
        (r.clone(), r.clone(), imm.clone()).prop_map(|(a, b, i)| enc::addi(a, b, i)),
        (r.clone(), r.clone(), r.clone()).prop_map(|(a, b, c)| enc::add(a, b, c)),
        (r.clone(), r.clone(), r.clone()).prop_map(|(a, b, c)| enc::mul(a, b, c)),
        (r.clone(), r.clone(), r.clone()).prop_map(|(a, b, c)| enc::divu(a, b, c)),
        (r.clone(), r.clone(), sh).prop_map(|(a, b, s)| enc::srai(a, b, s % 64)),
        (r.clone(), r.clone(), imm.clone()).prop_map(|(a, b, i)| enc::lw(a, b, i)),
        (r.clone(), r.clone(), imm.clone()).prop_map(|(a, b, i)| enc::ld(a, b, i)),
        (r.clone(), r.clone(), imm.clone()).prop_map(|(a, b, i)| enc::sd(a, b, i)),
        (r.clone(), r.clone(), imm).prop_map(|(a, b, i)| enc::xori(a, b, i)),
        (r.clone(), r).prop_map(|(a, b)| enc::beq(a, b, -16)),
    ]
}

proptest! {
    /// Penalties are additive and never negative: for any instruction
    /// stream the in-order total is at least the simple total.
    #[test]
    fn inorder_total_at_least_simple(words in prop::collection::vec(any_instruction(), 1..64)) {
        let mut simple = SimpleModel;
        let mut inorder = InOrderModel::new(PipelineParams::default());
        simple.begin_block(0x8000_0000, 4);
        let entry = inorder.begin_block(0x8000_0000, 4) as u64;
        let mut s_total = 0u64;
        let mut i_total = entry;
        for w in words {
            let d = decode(w).unwrap();
            s_total += simple.after_instruction(&d, false) as u64;
            i_total += inorder.after_instruction(&d, false) as u64;
            if d.mnemonic.is_cond_branch() {
                prop_assert!(
                    inorder.after_taken_branch(&d, false) >= simple.after_taken_branch(&d, false)
                );
            }
        }
        prop_assert!(i_total >= s_total, "inorder {i_total} < simple {s_total}");
    }

    /// Hooks are deterministic functions of the stream and model state.
    #[test]
    fn annotations_are_pure(words in prop::collection::vec(any_instruction(), 1..64)) {
        let run = |words: &[u32]| {
            let mut m = InOrderModel::new(PipelineParams::default());
            m.begin_block(0x8000_0002, 4);
            words.iter().map(|w| m.after_instruction(&decode(*w).unwrap(), false)).collect::<Vec<_>>()
        };
        prop_assert_eq!(run(&words), run(&words));
    }

    /// Anything the encoder can produce, the decoder reads back exactly.
    #[test]
    fn encode_decode_roundtrip(w in any_instruction()) {
        let d: DecodedInstruction = decode(w).unwrap();
        prop_assert!(d.rd < 32 && d.rs1 < 32 && d.rs2 < 32);
        prop_assert_eq!(d.length, 4);
        // Re-encode through the matching encoder where the form is unique.
        let back = match d.mnemonic {
            Mnemonic::Addi => Some(enc::addi(d.rd, d.rs1, d.imm)),
            Mnemonic::Add => Some(enc::add(d.rd, d.rs1, d.rs2)),
            Mnemonic::Mul => Some(enc::mul(d.rd, d.rs1, d.rs2)),
            Mnemonic::Divu => Some(enc::divu(d.rd, d.rs1, d.rs2)),
            Mnemonic::Srai => Some(enc::srai(d.rd, d.rs1, d.imm as u8)),
            Mnemonic::Lw => Some(enc::lw(d.rd, d.rs1, d.imm)),
            Mnemonic::Ld => Some(enc::ld(d.rd, d.rs1, d.imm)),
            Mnemonic::Sd => Some(enc::sd(d.rs2, d.rs1, d.imm)),
            Mnemonic::Xori => Some(enc::xori(d.rd, d.rs1, d.imm)),
            Mnemonic::Beq => Some(enc::beq(d.rs1, d.rs2, d.imm)),
            _ => None,
        };
        if let Some(b) = back {
            prop_assert_eq!(b, w);
        }
    }
}
