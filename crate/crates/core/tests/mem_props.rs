//! Property tests for the memory path: the Sv39 walker against an
//! independent recursive oracle, L0 soundness/inclusion shadow checks, and
//! MESI directory invariants on random multi-core traces.

use rvcycle_core::config::{CacheGeometry, MemConfig, MemoryModelKind, TlbGeometry};
use rvcycle_core::mem::{
    self, sv39, AccessCtx, CoreMem, GuestMemory, LineState, NoDevices, SharedMem,
};
use std::collections::HashMap;

struct SplitMix(u64);

impl SplitMix {
    fn next(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }
    fn below(&mut self, n: u64) -> u64 {
        self.next() % n
    }
}

// ---------------------------------------------------------------------
// Sv39 oracle
// ---------------------------------------------------------------------

/// Independent recursive walker used as the oracle. Ignores A/D updating
/// (checked separately) and returns (ppage, pbits, level) or the fault.
fn oracle_walk(
    mem: &GuestMemory,
    root: u64,
    vaddr: u64,
    level: u32,
) -> Result<(u64, u64, u32), ()> {
    if level == 3 && (vaddr as i64) << 25 >> 25 != vaddr as i64 {
        return Err(());
    }
    let vpn = (vaddr >> (12 + 9 * (level - 1))) & 0x1ff;
    let pte_addr = root + vpn * 8;
    if !mem.contains(pte_addr, 8) {
        return Err(());
    }
    let pte = mem.read_u64(pte_addr);
    if pte & 1 == 0 || (pte & 0b100 != 0 && pte & 0b010 == 0) {
        return Err(());
    }
    let ppn = pte >> 10 & 0xfff_ffff_ffff;
    if pte & 0b1110 != 0 {
        // Leaf.
        let span = 9 * (level - 1);
        if ppn & ((1 << span) - 1) != 0 {
            return Err(());
        }
        let vpn_low = (vaddr >> 12) & ((1 << span) - 1);
        return Ok(((ppn | vpn_low) << 12, pte & 0xff, level));
    }
    if level == 1 {
        return Err(());
    }
    oracle_walk(mem, ppn << 12, vaddr, level - 1)
}

/// Build a random page table rooted in RAM, mixing leaf levels, invalid
/// entries and misaligned superpages.
fn random_page_table(rng: &mut SplitMix, gmem: &GuestMemory, root: u64) -> Vec<u64> {
    let mut next_table = root + 0x1000;
    let mut mapped = Vec::new();
    for i in 0..512u64 {
        let r = rng.below(100);
        let entry_addr = root + i * 8;
        if r < 40 {
            continue; // invalid
        }
        if r < 55 {
            // Gigapage leaf (possibly misaligned).
            let ppn2 = rng.below(4) << 18;
            let mis = if rng.below(8) == 0 { rng.below(512) } else { 0 };
            let perms = 0b1111 & (rng.next() | 1) | 0b1100_0000;
            gmem.write_u64(entry_addr, (ppn2 | mis) << 10 | perms);
            if mis == 0 {
                mapped.push(i << 30);
            }
            continue;
        }
        // Pointer to an L1 table with a few entries.
        let l1 = next_table;
        next_table += 0x1000;
        gmem.write_u64(entry_addr, (l1 >> 12) << 10 | 1);
        for j in 0..8u64 {
            let k = rng.below(512);
            let leaf_addr = l1 + k * 8;
            if rng.below(3) == 0 {
                // 2 MiB leaf.
                let ppn1 = rng.below(1 << 10) << 9;
                let perms = 0b1111 & (rng.next() | 1) | 0b1100_0000;
                gmem.write_u64(leaf_addr, ppn1 << 10 | perms);
                mapped.push(i << 30 | k << 21);
            } else {
                // Pointer to an L0 table.
                let l0t = next_table;
                next_table += 0x1000;
                gmem.write_u64(leaf_addr, (l0t >> 12) << 10 | 1);
                for _ in 0..16 {
                    let p = rng.below(512);
                    let ppn = rng.below(1 << 20);
                    let perms = 0b1111 & (rng.next() | 1) | 0b1100_0000;
                    gmem.write_u64(l0t + p * 8, ppn << 10 | perms);
                    mapped.push(i << 30 | k << 21 | p << 12);
                }
            }
            let _ = j;
        }
    }
    mapped
}

#[test]
fn sv39_walker_matches_oracle_on_random_tables() {
    let mut rng = SplitMix(0x9a9e);
    for round in 0..6 {
        let gmem = GuestMemory::new(0x8000_0000, 64 * 1024 * 1024);
        let root = 0x8000_0000u64;
        let mapped = random_page_table(&mut rng, &gmem, root);
        let satp = 8u64 << 60 | root >> 12;
        // Probe mapped VAs plus random ones (canonicalized half the time).
        let mut probes: Vec<u64> = mapped
            .iter()
            .map(|v| {
                let v = v + rng.below(1 << 12);
                ((v as i64) << 25 >> 25) as u64
            })
            .collect();
        for _ in 0..20_000 {
            let v = rng.next();
            probes.push(if rng.below(2) == 0 { ((v as i64) << 25 >> 25) as u64 } else { v });
        }
        for vaddr in probes {
            let got = sv39::walk(&gmem, satp, vaddr, sv39::AccessKind::Load);
            let want = oracle_walk(&gmem, root, vaddr, 3);
            match (got, want) {
                (Ok(t), Ok((ppage, pbits, level))) => {
                    assert_eq!(t.ppage, ppage, "round {round} va {vaddr:#x}");
                    // The walker sets A on loads; mask it for comparison.
                    assert_eq!(t.pbits & !0x40, pbits & !0x40, "round {round} va {vaddr:#x}");
                    assert_eq!(t.levels, 4 - level, "round {round} va {vaddr:#x}");
                }
                (Err(mem::sv39::WalkError::PageFault | mem::sv39::WalkError::AccessFault), Err(())) => {}
                (g, w) => panic!("round {round} va {vaddr:#x}: {g:?} vs {w:?}"),
            }
        }
    }
}

#[test]
fn walker_sets_a_and_d_bits() {
    let gmem = GuestMemory::new(0x8000_0000, 4 * 1024 * 1024);
    let root = 0x8000_0000u64;
    let vpn2 = (0x8000_0000u64 >> 30) & 0x1ff;
    // Identity gigapage with A/D clear.
    let pte = (0x8000_0000u64 >> 12) << 10 | 0b1111;
    gmem.write_u64(root + vpn2 * 8, pte);
    let satp = 8u64 << 60 | root >> 12;
    sv39::walk(&gmem, satp, 0x8000_5000, sv39::AccessKind::Load).unwrap();
    let after = gmem.read_u64(root + vpn2 * 8);
    assert_ne!(after & sv39::PTE_A, 0);
    assert_eq!(after & sv39::PTE_D, 0);
    sv39::walk(&gmem, satp, 0x8000_5000, sv39::AccessKind::Store).unwrap();
    let after = gmem.read_u64(root + vpn2 * 8);
    assert_ne!(after & sv39::PTE_D, 0);
}

// ---------------------------------------------------------------------
// L0 shadow soundness and inclusion
// ---------------------------------------------------------------------

fn small_mem_cfg(model: MemoryModelKind) -> MemConfig {
    MemConfig {
        model,
        l0_entries: 64,
        itlb: TlbGeometry { entries: 8, ways: 2 },
        dtlb: TlbGeometry { entries: 8, ways: 2 },
        l1i: CacheGeometry { size: 1024, ways: 2 },
        l1d: CacheGeometry { size: 1024, ways: 2 },
        l2: CacheGeometry { size: 4096, ways: 4 },
        ..Default::default()
    }
}

/// Scan the inclusion property: every valid L0D entry is backed by a valid
/// DTLB mapping (when paging) and a present L1D line (when caches are
/// modeled), with the readonly bit covering S-state lines.
fn scan_inclusion(cm: &CoreMem, sh: &SharedMem, paging: bool) {
    let cache_model = matches!(sh.model, MemoryModelKind::Cache | MemoryModelKind::Mesi);
    for (vline, pline, ro) in cm.l0d.valid_entries() {
        if paging {
            let vpage = vline & !0xfff;
            assert!(
                cm.dtlb
                    .valid_mappings()
                    .any(|(vp, pp)| vp == vpage && pp == pline & !0xfff),
                "L0 entry {vline:#x}->{pline:#x} has no DTLB backing"
            );
        }
        if cache_model {
            let state = cm.l1d.state_of(pline);
            assert_ne!(state, LineState::Invalid, "L0 entry {vline:#x} not in L1D");
            if state == LineState::Shared {
                assert!(ro, "S-state line {pline:#x} must be read-only in L0");
            }
        }
    }
    for (vline, pline, _) in cm.l0i.valid_entries() {
        if cache_model {
            assert_ne!(
                cm.l1i.state_of(pline),
                LineState::Invalid,
                "L0I entry {vline:#x} not in L1I"
            );
        }
    }
}

#[test]
fn l0_shadow_soundness_bare_cache_model() {
    let mut rng = SplitMix(0x50de);
    let cfg = small_mem_cfg(MemoryModelKind::Cache);
    let mut mems = vec![CoreMem::new(&cfg)];
    let mut sh = SharedMem::new(&cfg);
    let gmem = GuestMemory::new(0x8000_0000, 1024 * 1024);
    let ctx = AccessCtx::bare();
    let mut shadow: HashMap<u64, u64> = HashMap::new();

    for op in 0..200_000u64 {
        let addr = 0x8000_0000 + (rng.below(64 * 1024) & !7);
        let write = rng.below(2) == 1;
        // Shadow check: if the L0 would hit, the backing must equal what
        // translation yields (identity in bare mode).
        if let Some(backing) = mems[0].l0d.peek(addr, write) {
            assert_eq!(backing, addr, "op {op}: L0 backing diverged");
        }
        if write {
            let v = rng.next();
            mem::store(0, &mut mems, &mut sh, &gmem, &mut NoDevices, &ctx, addr, 8, v).unwrap();
            shadow.insert(addr, v);
        } else {
            let (v, _) =
                mem::load(0, &mut mems, &mut sh, &gmem, &mut NoDevices, &ctx, addr, 8).unwrap();
            assert_eq!(v, shadow.get(&addr).copied().unwrap_or(0), "op {op}");
        }
        if op % 1024 == 0 {
            scan_inclusion(&mems[0], &sh, false);
        }
    }
    scan_inclusion(&mems[0], &sh, false);
    assert!(mems[0].l0d.hits > 0 && mems[0].l0d.misses > 0);
}

#[test]
fn l0_soundness_with_paging_and_tlb_evictions() {
    let mut rng = SplitMix(0x7ab5);
    let cfg = small_mem_cfg(MemoryModelKind::Tlb);
    let mut mems = vec![CoreMem::new(&cfg)];
    let mut sh = SharedMem::new(&cfg);
    let gmem = GuestMemory::new(0x8000_0000, 16 * 1024 * 1024);
    // Identity 4K pages for 0x8000_0000..+2MiB: root -> l1 -> leaf table.
    let root = 0x8000_0000u64;
    let l1 = root + 0x1000;
    let leaf = root + 0x2000;
    let vpn2 = (0x8000_0000u64 >> 30) & 0x1ff;
    gmem.write_u64(root + vpn2 * 8, (l1 >> 12) << 10 | 1);
    gmem.write_u64(l1 + 0 * 8, (leaf >> 12) << 10 | 1);
    for p in 0..512u64 {
        let pa = 0x8000_0000 + (p << 12);
        gmem.write_u64(leaf + p * 8, (pa >> 12) << 10 | 0xcf);
    }
    let ctx = AccessCtx {
        satp: 8 << 60 | root >> 12,
        priv_mode: 1,
        sum: false,
        mxr: false,
    };

    for op in 0..100_000u64 {
        // Stay off the page-table pages themselves.
        let addr = 0x8000_4000 + (rng.below(500 * 4096) & !7);
        if let Some(backing) = mems[0].l0d.peek(addr, false) {
            assert_eq!(backing, addr, "op {op}: identity mapping");
        }
        if rng.below(2) == 0 {
            mem::store(0, &mut mems, &mut sh, &gmem, &mut NoDevices, &ctx, addr, 8, op).unwrap();
        } else {
            mem::load(0, &mut mems, &mut sh, &gmem, &mut NoDevices, &ctx, addr, 8).unwrap();
        }
        if op % 512 == 0 {
            scan_inclusion(&mems[0], &sh, true);
        }
    }
    // The tiny TLB must have evicted and flushed L0 entries along the way.
    assert!(sh.page_walks > 16, "walks: {}", sh.page_walks);
}

#[test]
fn store_to_readonly_page_faults_without_fill() {
    let cfg = small_mem_cfg(MemoryModelKind::Tlb);
    let mut mems = vec![CoreMem::new(&cfg)];
    let mut sh = SharedMem::new(&cfg);
    let gmem = GuestMemory::new(0x8000_0000, 4 * 1024 * 1024);
    let root = 0x8000_0000u64;
    let leafs = root + 0x1000;
    let l1 = root + 0x2000;
    let vpn2 = (0x8000_0000u64 >> 30) & 0x1ff;
    gmem.write_u64(root + vpn2 * 8, (l1 >> 12) << 10 | 1);
    gmem.write_u64(l1, (leafs >> 12) << 10 | 1);
    // Page 4: read-only (R+A, no W).
    gmem.write_u64(leafs + 4 * 8, ((0x8000_4000u64 >> 12) << 10) | 0b100_0011);
    let ctx = AccessCtx { satp: 8 << 60 | root >> 12, priv_mode: 1, sum: false, mxr: false };

    let r = mem::load(0, &mut mems, &mut sh, &gmem, &mut NoDevices, &ctx, 0x8000_4010, 8);
    assert!(r.is_ok());
    // The fill must be read-only: a store probe misses the L0.
    assert!(mems[0].l0d.peek(0x8000_4010, false).is_some());
    assert!(mems[0].l0d.peek(0x8000_4010, true).is_none());
    let r = mem::store(0, &mut mems, &mut sh, &gmem, &mut NoDevices, &ctx, 0x8000_4010, 8, 1);
    let f = r.unwrap_err();
    assert_eq!(f.kind, mem::FaultKind::Page);
    assert_eq!(f.access, sv39::AccessKind::Store);
}

// ---------------------------------------------------------------------
// MESI random traces
// ---------------------------------------------------------------------

/// Full invariant audit: SWMR, directory-L1 agreement, inclusive L2, L0
/// inclusion, against the current cache states.
fn audit_mesi(mems: &[CoreMem], sh: &SharedMem) {
    // Directory agreement + SWMR per L2 line.
    for (pline, holders, exclusive) in sh.l2.directory_entries() {
        let mut actual = 0u64;
        let mut m_or_e = 0;
        let mut s_count = 0;
        for (i, cm) in mems.iter().enumerate() {
            match cm.l1d.state_of(pline) {
                LineState::Invalid => {}
                LineState::Shared => {
                    actual |= 1 << i;
                    s_count += 1;
                }
                LineState::Exclusive | LineState::Modified => {
                    actual |= 1 << i;
                    m_or_e += 1;
                }
            }
        }
        assert_eq!(actual, holders, "directory sharer set for {pline:#x}");
        assert!(m_or_e <= 1, "SWMR violated on {pline:#x}");
        if m_or_e == 1 {
            assert_eq!(s_count, 0, "M/E coexists with S on {pline:#x}");
            assert!(exclusive, "directory missed exclusivity on {pline:#x}");
        }
        if exclusive {
            assert_eq!(holders.count_ones(), 1, "exclusive with {holders:#b}");
            assert_eq!(m_or_e, 1, "directory exclusive but no M/E holder");
        }
    }
    for cm in mems {
        // Inclusive L2: every valid L1 line is present in the L2.
        for (pline, _) in cm.l1d.valid_lines() {
            assert!(sh.l2.present(pline), "L1D line {pline:#x} not in L2");
        }
        for (pline, _) in cm.l1i.valid_lines() {
            assert!(sh.l2.present(pline), "L1I line {pline:#x} not in L2");
        }
        scan_inclusion(cm, sh, false);
    }
}

#[test]
fn mesi_trace_invariants_hold() {
    let mut rng = SplitMix(0x3351);
    let cfg = small_mem_cfg(MemoryModelKind::Mesi);
    let cores = 4;
    let mut mems: Vec<CoreMem> = (0..cores).map(|_| CoreMem::new(&cfg)).collect();
    let mut sh = SharedMem::new(&cfg);
    let gmem = GuestMemory::new(0x8000_0000, 1024 * 1024);
    let ctx = AccessCtx::bare();
    let mut shadow: HashMap<u64, u64> = HashMap::new();

    for op in 0..250_000u64 {
        let core = rng.below(cores as u64) as usize;
        // A hot region (contention) plus a wider region (evictions).
        let addr = if rng.below(2) == 0 {
            0x8000_0000 + (rng.below(16) * 64)
        } else {
            0x8000_0000 + (rng.below(32 * 1024) & !7)
        };
        match rng.below(10) {
            0..=4 => {
                let (v, _) =
                    mem::load(core, &mut mems, &mut sh, &gmem, &mut NoDevices, &ctx, addr, 8)
                        .unwrap();
                assert_eq!(v, shadow.get(&addr).copied().unwrap_or(0), "op {op}");
            }
            5..=8 => {
                let v = rng.next();
                mem::store(core, &mut mems, &mut sh, &gmem, &mut NoDevices, &ctx, addr, 8, v)
                    .unwrap();
                shadow.insert(addr, v);
            }
            _ => {
                let (old, _) =
                    mem::amo(core, &mut mems, &mut sh, &gmem, &ctx, addr, 8, &|a| {
                        a.wrapping_add(3)
                    })
                    .unwrap();
                assert_eq!(old, shadow.get(&addr).copied().unwrap_or(0), "op {op}");
                shadow.insert(addr, old.wrapping_add(3));
            }
        }
        if op % 512 == 0 {
            audit_mesi(&mems, &sh);
        }
    }
    audit_mesi(&mems, &sh);
    assert!(sh.invalidations > 100);
    assert!(sh.downgrades > 100);
    assert!(sh.l2.evictions > 100);
}

#[test]
fn mesi_transition_table_cases() {
    // Canonical protocol transitions, driven directly.
    let cfg = small_mem_cfg(MemoryModelKind::Mesi);
    let mut mems: Vec<CoreMem> = (0..2).map(|_| CoreMem::new(&cfg)).collect();
    let mut sh = SharedMem::new(&cfg);
    let gmem = GuestMemory::new(0x8000_0000, 1024 * 1024);
    let ctx = AccessCtx::bare();
    let a = 0x8000_8000u64;

    // GetS on an uncached line grants E.
    mem::load(0, &mut mems, &mut sh, &gmem, &mut NoDevices, &ctx, a, 8).unwrap();
    assert_eq!(mems[0].l1d.state_of(a), LineState::Exclusive);
    // GetS while core 0 holds E (clean): both S, no writeback.
    let wb_before = sh.l2.writebacks;
    mem::load(1, &mut mems, &mut sh, &gmem, &mut NoDevices, &ctx, a, 8).unwrap();
    assert_eq!(mems[0].l1d.state_of(a), LineState::Shared);
    assert_eq!(mems[1].l1d.state_of(a), LineState::Shared);
    assert_eq!(sh.l2.writebacks, wb_before);
    // GetM while shared: other sharer invalidated.
    mem::store(1, &mut mems, &mut sh, &gmem, &mut NoDevices, &ctx, a, 8, 1).unwrap();
    assert_eq!(mems[0].l1d.state_of(a), LineState::Invalid);
    assert_eq!(mems[1].l1d.state_of(a), LineState::Modified);
    // GetS while core 1 holds M: downgrade with writeback bookkeeping.
    let down_before = sh.downgrades;
    mem::load(0, &mut mems, &mut sh, &gmem, &mut NoDevices, &ctx, a, 8).unwrap();
    assert_eq!(mems[1].l1d.state_of(a), LineState::Shared);
    assert_eq!(mems[0].l1d.state_of(a), LineState::Shared);
    assert_eq!(sh.downgrades, down_before + 1);
}

#[test]
fn reconfigure_flushes_and_restarts_cold() {
    let cfg = small_mem_cfg(MemoryModelKind::Cache);
    let mut mems: Vec<CoreMem> = (0..2).map(|_| CoreMem::new(&cfg)).collect();
    let mut sh = SharedMem::new(&cfg);
    let gmem = GuestMemory::new(0x8000_0000, 1024 * 1024);
    let ctx = AccessCtx::bare();
    for i in 0..32 {
        mem::load(0, &mut mems, &mut sh, &gmem, &mut NoDevices, &ctx, 0x8000_0000 + i * 64, 8)
            .unwrap();
    }
    assert!(mems[0].l0d.valid_entries().count() > 0);
    mem::reconfigure_memory(&mut mems, &mut sh, &cfg, MemoryModelKind::Mesi, 64);
    assert_eq!(sh.model, MemoryModelKind::Mesi);
    assert_eq!(mems[0].l0d.valid_entries().count(), 0, "L0 flushed");
    assert_eq!(mems[0].l1d.valid_lines().count(), 0, "L1 drained");
    assert_eq!(sh.l2.directory_entries().count(), 0, "directory all-I");
    // Line-size switch rebuilds the L0 geometry.
    mem::reconfigure_memory(&mut mems, &mut sh, &cfg, MemoryModelKind::Tlb, 4096);
    assert_eq!(mems[0].l0d.line_size(), 4096);
    mem::load(0, &mut mems, &mut sh, &gmem, &mut NoDevices, &ctx, 0x8000_0100, 8).unwrap();
    // One entry now covers the whole page.
    assert!(mems[0].l0d.peek(0x8000_0ff8, false).is_some());
}
