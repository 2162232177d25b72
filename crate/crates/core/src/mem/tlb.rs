//! Set-associative TLB model with round-robin replacement.
//!
//! Round-robin rather than LRU: L0 hits bypass the model, so recency
//! information is incomplete, and round-robin keeps replacement
//! deterministic without a seed.
//!
//! Superpage walk results are stored at 4 KiB granularity (the covering
//! page of the looked-up address), so set indexing stays uniform.

use crate::config::TlbGeometry;

#[derive(Clone, Copy)]
struct TlbEntry {
    valid: bool,
    vpn: u64,
    asid: u16,
    ppn: u64,
    /// R/W/X/U/A/D bits of the leaf PTE.
    pbits: u64,
    /// log2 of the mapped page size, kept for L0 shootdown on eviction.
    page_log2: u32,
}

impl Default for TlbEntry {
    fn default() -> Self {
        TlbEntry { valid: false, vpn: 0, asid: 0, ppn: 0, pbits: 0, page_log2: 12 }
    }
}

/// An eviction notice: the L0 entries covered by this mapping must be
/// flushed before the eviction completes (inclusion property).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TlbEviction {
    pub vpage: u64,
    pub page_log2: u32,
}

pub struct Tlb {
    entries: Vec<TlbEntry>,
    sets: u64,
    ways: usize,
    rr: Vec<u8>,
    pub hits: u64,
    pub misses: u64,
}

pub struct TlbHit {
    pub ppage: u64,
    pub pbits: u64,
}

impl Tlb {
    pub fn new(geo: TlbGeometry) -> Self {
        let sets = (geo.entries / geo.ways) as u64;
        Tlb {
            entries: vec![TlbEntry::default(); geo.entries as usize],
            sets,
            ways: geo.ways as usize,
            rr: vec![0; sets as usize],
            hits: 0,
            misses: 0,
        }
    }

    fn set_of(&self, vpn: u64) -> usize {
        (vpn & (self.sets - 1)) as usize
    }

    pub fn lookup(&mut self, vaddr: u64, asid: u16) -> Option<TlbHit> {
        let vpn = vaddr >> 12;
        let set = self.set_of(vpn);
        for way in 0..self.ways {
            let e = &self.entries[set * self.ways + way];
            if e.valid && e.vpn == vpn && e.asid == asid {
                self.hits += 1;
                return Some(TlbHit { ppage: e.ppn << 12, pbits: e.pbits });
            }
        }
        self.misses += 1;
        None
    }

    /// Insert a 4 KiB-granular mapping; returns the eviction notice for a
    /// displaced valid entry.
    pub fn insert(
        &mut self,
        vaddr: u64,
        asid: u16,
        ppage: u64,
        pbits: u64,
        page_log2: u32,
    ) -> Option<TlbEviction> {
        let vpn = vaddr >> 12;
        let set = self.set_of(vpn);
        // Reuse a matching or invalid way before sacrificing one.
        let mut victim = None;
        for way in 0..self.ways {
            let e = &self.entries[set * self.ways + way];
            if e.valid && e.vpn == vpn && e.asid == asid {
                victim = Some(way);
                break;
            }
            if !e.valid && victim.is_none() {
                victim = Some(way);
            }
        }
        let (way, evicted) = match victim {
            Some(w) => (w, None),
            None => {
                let w = self.rr[set] as usize % self.ways;
                self.rr[set] = self.rr[set].wrapping_add(1);
                let old = self.entries[set * self.ways + w];
                (w, Some(TlbEviction { vpage: old.vpn << 12, page_log2: old.page_log2 }))
            }
        };
        self.entries[set * self.ways + way] =
            TlbEntry { valid: true, vpn, asid, ppn: ppage >> 12, pbits, page_log2 };
        evicted
    }

    pub fn flush_all(&mut self) {
        for e in &mut self.entries {
            e.valid = false;
        }
    }

    /// Every valid (vpage, ppage) pair, for shadow inclusion scans.
    pub fn valid_mappings(&self) -> impl Iterator<Item = (u64, u64)> + '_ {
        self.entries.iter().filter(|e| e.valid).map(|e| (e.vpn << 12, e.ppn << 12))
    }
}
