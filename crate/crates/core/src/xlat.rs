//! Basic-block discovery, translation and caching.
//!
//! A block is decoded once into a sequence of micro-steps, each bound to its
//! decoded instruction and the cycle cost computed by the active pipeline
//! model's hooks at translation time. Re-executing a block performs no
//! decode or model work. Blocks end at the first control-flow transfer, at
//! instructions that can change translation or pipeline state (CSR ops,
//! FENCE.I, SFENCE.VMA, WFI), at a page boundary, or at the block size cap;
//! a single instruction straddling a page boundary is included under a
//! cross-page guard that re-reads the second page's parcel every execution.

use crate::isa::{self, DecodedInstruction, Mnemonic, SyncClass, Trap};
use crate::mem::{self, AccessCtx, GuestMemory};
use crate::pipeline::PipelineModel;
use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

pub const MAX_BLOCK_INSNS: usize = 256;

/// Translation context part of the cache key: the same virtual PC decodes
/// differently per privilege mode and address space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TransCtx {
    pub mode: u8,
    pub asid: u16,
    pub sv39: bool,
}

impl TransCtx {
    pub fn bare(mode: u8) -> Self {
        TransCtx { mode, asid: 0, sv39: false }
    }
}

/// One executable micro-step.
#[derive(Debug, Clone)]
pub struct Step {
    pub instr: DecodedInstruction,
    pub pc: u64,
    /// Cycles accumulated when the step retires sequentially.
    pub cost: u32,
    /// Cycles accumulated on the taken edge of a conditional branch.
    pub cost_taken: u32,
    /// Runtime L0 I-cache access for the line containing `pc`.
    pub icheck: bool,
    /// Second access when a 4-byte instruction crosses into the next line.
    pub icheck_cross: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockEnd {
    /// Last step is a conditional branch: taken target or fall-through.
    Branch,
    /// Last step is an unconditional transfer (JAL/JALR/MRET/SRET) or a
    /// trap-raising instruction; it decides the next PC itself.
    Jump,
    /// Page boundary, size cap, or a translation-affecting instruction:
    /// continue at `start_vpc + byte_len`.
    Fallthrough,
    /// Translation-time fetch fault or undecodable instruction, raised when
    /// execution reaches `pc` (never at translation time).
    FetchFault { trap: Trap, pc: u64 },
}

#[derive(Debug, Clone, Copy)]
pub struct CrossPageGuard {
    pub second_page_vaddr: u64,
    pub expected: u16,
}

pub struct TranslatedBlock {
    pub start_vpc: u64,
    pub ctx: TransCtx,
    pub steps: Vec<Step>,
    pub end: BlockEnd,
    /// Cycles charged at block entry (begin_block hook).
    pub entry_cost: u32,
    pub cross_page_guard: Option<CrossPageGuard>,
    /// Backing line of the first parcel at translation time, compared by
    /// guarded cross-page links.
    pub phys_start_line: u64,
    pub byte_len: u64,
}

impl TranslatedBlock {
    pub fn fallthrough_vpc(&self) -> u64 {
        self.start_vpc + self.byte_len
    }
}

impl fmt::Display for TranslatedBlock {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "block {:#x} ctx(mode={} asid={} sv39={}) entry_cost={} end={:?}",
            self.start_vpc, self.ctx.mode, self.ctx.asid, self.ctx.sv39, self.entry_cost, self.end
        )?;
        for s in &self.steps {
            writeln!(
                f,
                "  {:#x}: {:?} rd={} rs1={} rs2={} imm={} cost={}{}{}",
                s.pc,
                s.instr.mnemonic,
                s.instr.rd,
                s.instr.rs1,
                s.instr.rs2,
                s.instr.imm,
                s.cost,
                if s.instr.mnemonic.is_cond_branch() {
                    format!(" taken={}", s.cost_taken)
                } else {
                    String::new()
                },
                if s.icheck { " [icheck]" } else { "" },
            )?;
        }
        if let Some(g) = &self.cross_page_guard {
            writeln!(f, "  guard: {:#x} expect {:#06x}", g.second_page_vaddr, g.expected)?;
        }
        Ok(())
    }
}

/// A direct link from one block to a successor, valid only while the
/// target slot's serial matches (links are severed by flushes).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockLink {
    pub idx: u32,
    pub serial: u64,
    /// For cross-page targets: the backing line the target was translated
    /// from; the link is followed only when the L0 I-cache confirms it.
    pub guard_phys_line: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChainEdge {
    Taken,
    Fallthrough,
}

pub struct BlockSlot {
    pub serial: u64,
    pub block: Arc<TranslatedBlock>,
    pub taken_link: Option<BlockLink>,
    pub fall_link: Option<BlockLink>,
}

/// Reasons a cache flush can happen; targeted flushes keep unrelated blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlushReason {
    ModelSwitch,
    FenceI,
    /// SFENCE.VMA; `Some(vaddr)` flushes only blocks starting on that page.
    Sfence(Option<u64>),
    AsidChange,
}

/// Per-core code cache. Blocks are never shared across cores.
pub struct CodeCache {
    slots: Vec<BlockSlot>,
    map: HashMap<(u64, TransCtx), u32>,
    next_serial: u64,
    pub epoch: u64,
    pub translations: u64,
    pub guard_retranslations: u64,
    pub decode_calls: u64,
}

impl Default for CodeCache {
    fn default() -> Self {
        CodeCache {
            slots: Vec::new(),
            map: HashMap::new(),
            next_serial: 1,
            epoch: 0,
            translations: 0,
            guard_retranslations: 0,
            decode_calls: 0,
        }
    }
}

impl CodeCache {
    pub fn lookup(&self, vpc: u64, ctx: TransCtx) -> Option<u32> {
        self.map.get(&(vpc, ctx)).copied()
    }

    pub fn insert(&mut self, block: TranslatedBlock) -> u32 {
        let idx = self.slots.len() as u32;
        let serial = self.next_serial;
        self.next_serial += 1;
        self.map.insert((block.start_vpc, block.ctx), idx);
        self.slots.push(BlockSlot {
            serial,
            block: Arc::new(block),
            taken_link: None,
            fall_link: None,
        });
        idx
    }

    pub fn slot(&self, idx: u32) -> &BlockSlot {
        &self.slots[idx as usize]
    }

    /// Follow a link if its serial is still current.
    pub fn follow(&self, link: BlockLink) -> Option<&BlockSlot> {
        let slot = self.slots.get(link.idx as usize)?;
        if slot.serial == link.serial {
            Some(slot)
        } else {
            None
        }
    }

    pub fn set_link(&mut self, idx: u32, serial: u64, edge: ChainEdge, link: BlockLink) {
        // The predecessor may have been flushed since the edge was recorded.
        let Some(slot) = self.slots.get_mut(idx as usize) else {
            return;
        };
        if slot.serial != serial {
            return;
        }
        match edge {
            ChainEdge::Taken => slot.taken_link = Some(link),
            ChainEdge::Fallthrough => slot.fall_link = Some(link),
        }
    }

    /// Tombstone one block (guard retranslation); links into it die via the
    /// serial check.
    pub fn invalidate(&mut self, idx: u32) {
        let slot = &mut self.slots[idx as usize];
        self.map.remove(&(slot.block.start_vpc, slot.block.ctx));
        slot.serial = 0;
        slot.taken_link = None;
        slot.fall_link = None;
    }

    pub fn flush(&mut self, reason: FlushReason) {
        match reason {
            FlushReason::Sfence(Some(vaddr)) => {
                let page = vaddr & !0xfff;
                let doomed: Vec<(u64, TransCtx)> = self
                    .map
                    .keys()
                    .filter(|(vpc, _)| vpc & !0xfff == page)
                    .copied()
                    .collect();
                for key in doomed {
                    let idx = self.map.remove(&key).unwrap();
                    let slot = &mut self.slots[idx as usize];
                    slot.serial = 0;
                    slot.taken_link = None;
                    slot.fall_link = None;
                }
                self.epoch += 1;
            }
            _ => {
                self.slots.clear();
                self.map.clear();
                self.epoch += 1;
            }
        }
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

fn ends_block(instr: &DecodedInstruction) -> bool {
    match instr.sync_class {
        SyncClass::ControlFlow => true,
        // Instructions that can change translation, the code cache, or
        // suspend the core must re-enter the dispatch loop.
        SyncClass::ControlRegOp => !matches!(instr.mnemonic, Mnemonic::Fence),
        _ => false,
    }
}

/// Translate one basic block starting at `vpc`.
///
/// Fetch during translation is functional (fault detection and translation
/// only); the runtime I-cache accesses are marked on the steps instead, one
/// per distinct line covered. Faults discovered here become runtime trap
/// steps, never translation failures.
pub fn translate(
    cache: &mut CodeCache,
    gmem: &GuestMemory,
    actx: &AccessCtx,
    ctx: TransCtx,
    model: &mut dyn PipelineModel,
    line_size: u64,
    vpc: u64,
) -> u32 {
    cache.translations += 1;
    let line_mask = !(line_size - 1);
    let mut steps: Vec<Step> = Vec::new();
    let mut pc = vpc;
    let mut entry_cost = 0u32;
    let mut cross_page_guard = None;
    let mut phys_start_line = u64::MAX;
    let mut last_line = u64::MAX;
    let mut end = loop {
        if steps.len() >= MAX_BLOCK_INSNS {
            break BlockEnd::Fallthrough;
        }
        if pc != vpc && pc & 0xfff == 0 {
            // Next instruction starts on a different page.
            break BlockEnd::Fallthrough;
        }
        let phys = match mem::fetch_translate(gmem, actx, pc) {
            Ok(p) => p,
            Err(f) => break BlockEnd::FetchFault { trap: f.to_trap(), pc },
        };
        if pc == vpc {
            phys_start_line = phys & line_mask;
        }
        let low = gmem.read_u16(phys);
        let mut raw = low as u32;
        let len = isa::parcel_length(low) as u8;
        let mut straddles_page = false;
        if len == 4 {
            let hi_vaddr = pc + 2;
            let hi = if hi_vaddr & 0xfff == 0 {
                // The uncompressed instruction spans two pages: read the
                // second page's parcel and guard it.
                straddles_page = true;
                let phys2 = match mem::fetch_translate(gmem, actx, hi_vaddr) {
                    Ok(p) => p,
                    Err(f) => break BlockEnd::FetchFault { trap: f.to_trap(), pc },
                };
                let hi = gmem.read_u16(phys2);
                cross_page_guard =
                    Some(CrossPageGuard { second_page_vaddr: hi_vaddr, expected: hi });
                hi
            } else {
                gmem.read_u16(phys + 2)
            };
            raw |= (hi as u32) << 16;
        }
        cache.decode_calls += 1;
        let instr = match isa::decode(raw) {
            Ok(i) => i,
            Err(ill) => {
                break BlockEnd::FetchFault {
                    trap: Trap::new(isa::ExceptionCause::IllegalInstruction, ill.0 as u64),
                    pc,
                }
            }
        };
        if pc == vpc {
            entry_cost = model.begin_block(vpc, len);
        }
        let icheck = pc & line_mask != last_line;
        last_line = pc & line_mask;
        let icheck_cross = len == 4 && (pc + 2) & line_mask != last_line;
        if icheck_cross {
            last_line = (pc + 2) & line_mask;
        }
        let compressed = len == 2;
        let cost = model.after_instruction(&instr, compressed);
        let cost_taken = if instr.mnemonic.is_cond_branch() {
            model.after_taken_branch(&instr, compressed)
        } else {
            0
        };
        let is_end = ends_block(&instr);
        steps.push(Step { instr, pc, cost, cost_taken, icheck, icheck_cross });
        pc += len as u64;
        if is_end {
            break match instr.mnemonic {
                m if m.is_cond_branch() => BlockEnd::Branch,
                Mnemonic::Jal
                | Mnemonic::Jalr
                | Mnemonic::Mret
                | Mnemonic::Sret
                | Mnemonic::Ecall
                | Mnemonic::Ebreak => BlockEnd::Jump,
                _ => BlockEnd::Fallthrough,
            };
        }
        if straddles_page {
            break BlockEnd::Fallthrough;
        }
    };
    // A straddling control-flow instruction keeps its own end kind.
    if let BlockEnd::FetchFault { .. } = end {
    } else if steps.is_empty() {
        end = BlockEnd::Fallthrough;
    }
    let block = TranslatedBlock {
        start_vpc: vpc,
        ctx,
        steps,
        end,
        entry_cost,
        cross_page_guard,
        phys_start_line,
        byte_len: pc - vpc,
    };
    cache.insert(block)
}
