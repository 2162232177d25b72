//! Per-core L0 filter caches.
//!
//! An L0 entry does not hold data; it is a virtual-tag-to-backing-address
//! translation packed into two words:
//!
//! * `T = (vtag << 1) | readonly`, where `vtag = vaddr >> log2(line_size)`.
//! * `A = vline ^ backing_line`, both line-aligned, so `vaddr ^ A` yields the
//!   backing address for every offset inside the line.
//!
//! A read hits when `T >> 1 == vtag`; a write hits when `vtag << 1 == T`,
//! which fails whenever the readonly bit is set. Invalid entries hold an
//! all-ones `T`, which can satisfy neither predicate for canonical
//! addresses.
//!
//! The instruction-side variant stores `T = vtag` with no readonly bit.
//!
//! A hit bypasses the memory model entirely, so entries may only exist when
//! backed by a valid TLB entry and a present L1 line of the active models
//! (the inclusion property), and must be valid for the current privilege
//! mode and address space: the owning core flushes the whole L0 on
//! privilege switches, satp writes and SFENCE.VMA.

pub const INVALID_T: u64 = u64::MAX;

#[derive(Clone, Copy)]
pub struct L0Entry {
    pub t: u64,
    pub a: u64,
}

impl Default for L0Entry {
    fn default() -> Self {
        L0Entry { t: INVALID_T, a: 0 }
    }
}

pub struct L0Cache {
    entries: Box<[L0Entry]>,
    /// Backing line address per slot, for physically-indexed invalidation;
    /// `u64::MAX` when the slot is invalid.
    phys: Box<[u64]>,
    log2_line: u32,
    index_mask: u64,
    /// Instruction-side entries have no readonly bit.
    has_ro_bit: bool,
    pub hits: u64,
    pub misses: u64,
}

impl L0Cache {
    pub fn new(entries: u64, line_size: u64, has_ro_bit: bool) -> Self {
        assert!(entries.is_power_of_two() && line_size.is_power_of_two());
        L0Cache {
            entries: vec![L0Entry::default(); entries as usize].into_boxed_slice(),
            phys: vec![u64::MAX; entries as usize].into_boxed_slice(),
            log2_line: line_size.trailing_zeros(),
            index_mask: entries - 1,
            has_ro_bit,
            hits: 0,
            misses: 0,
        }
    }

    pub fn line_size(&self) -> u64 {
        1 << self.log2_line
    }

    pub fn num_entries(&self) -> u64 {
        self.entries.len() as u64
    }

    fn vtag(&self, vaddr: u64) -> u64 {
        vaddr >> self.log2_line
    }

    fn matches(&self, e: L0Entry, vtag: u64, write: bool) -> bool {
        if !self.has_ro_bit {
            e.t == vtag
        } else if write {
            vtag << 1 == e.t
        } else {
            e.t >> 1 == vtag
        }
    }

    /// Fast-path lookup; returns the backing address on a hit.
    /// At most 3 memory operations: entry load, tag compare, XOR.
    pub fn lookup(&mut self, vaddr: u64, write: bool) -> Option<u64> {
        let vtag = self.vtag(vaddr);
        let e = self.entries[(vtag & self.index_mask) as usize];
        if self.matches(e, vtag, write) {
            self.hits += 1;
            Some(vaddr ^ e.a)
        } else {
            self.misses += 1;
            None
        }
    }

    /// Lookup without touching the statistics counters (used by the
    /// cross-page chain check, which substitutes for the block-entry access
    /// only when it hits).
    pub fn peek(&self, vaddr: u64, write: bool) -> Option<u64> {
        let vtag = self.vtag(vaddr);
        let e = self.entries[(vtag & self.index_mask) as usize];
        if self.matches(e, vtag, write) {
            Some(vaddr ^ e.a)
        } else {
            None
        }
    }

    pub fn count_hit(&mut self) {
        self.hits += 1;
    }

    /// Install a translation for the line containing `vaddr`.
    pub fn insert(&mut self, vaddr: u64, backing_line: u64, readonly: bool) {
        debug_assert!(backing_line & (self.line_size() - 1) == 0);
        debug_assert!(!readonly || self.has_ro_bit);
        let vtag = self.vtag(vaddr);
        let vline = vtag << self.log2_line;
        let idx = (vtag & self.index_mask) as usize;
        let t = if self.has_ro_bit { vtag << 1 | readonly as u64 } else { vtag };
        self.entries[idx] = L0Entry { t, a: vline ^ backing_line };
        self.phys[idx] = backing_line;
    }

    pub fn invalidate_all(&mut self) {
        self.entries.fill(L0Entry::default());
        self.phys.fill(u64::MAX);
    }

    /// Invalidate the entry covering virtual address `vaddr`, if any.
    pub fn invalidate_vaddr(&mut self, vaddr: u64) {
        let vtag = self.vtag(vaddr);
        let idx = (vtag & self.index_mask) as usize;
        let stored_vtag =
            if self.has_ro_bit { self.entries[idx].t >> 1 } else { self.entries[idx].t };
        if stored_vtag == vtag && self.entries[idx].t != INVALID_T {
            self.entries[idx] = L0Entry::default();
            self.phys[idx] = u64::MAX;
        }
    }

    /// Invalidate all entries inside the virtual page `vpage` of size
    /// `1 << page_log2` (TLB eviction path).
    pub fn invalidate_vpage(&mut self, vpage: u64, page_log2: u32) {
        if page_log2 <= self.log2_line {
            self.invalidate_vaddr(vpage);
            return;
        }
        let lines = 1u64 << (page_log2 - self.log2_line);
        if lines <= self.num_entries() {
            for i in 0..lines {
                self.invalidate_vaddr(vpage + (i << self.log2_line));
            }
        } else {
            // Superpage wider than the whole L0: sweep by tag range.
            let first = vpage >> self.log2_line;
            for idx in 0..self.entries.len() {
                let stored =
                    if self.has_ro_bit { self.entries[idx].t >> 1 } else { self.entries[idx].t };
                if self.entries[idx].t != INVALID_T && stored >= first && stored < first + lines {
                    self.entries[idx] = L0Entry::default();
                    self.phys[idx] = u64::MAX;
                }
            }
        }
    }

    /// Invalidate all entries whose backing line equals `backing_line`
    /// (coherence invalidation / L1 eviction path).
    pub fn invalidate_phys_line(&mut self, backing_line: u64) {
        for idx in 0..self.phys.len() {
            if self.phys[idx] == backing_line {
                self.entries[idx] = L0Entry::default();
                self.phys[idx] = u64::MAX;
            }
        }
    }

    /// Invalidate all entries backed by the physical page of `backing_page`.
    pub fn invalidate_phys_page(&mut self, backing_page: u64, page_log2: u32) {
        let mask = !((1u64 << page_log2) - 1);
        for idx in 0..self.phys.len() {
            if self.phys[idx] != u64::MAX && self.phys[idx] & mask == backing_page & mask {
                self.entries[idx] = L0Entry::default();
                self.phys[idx] = u64::MAX;
            }
        }
    }

    /// Set the readonly bit on the entry covering `vaddr` (coherence
    /// downgrade without full invalidation). No-op on the I-side.
    pub fn mark_readonly(&mut self, vaddr: u64) {
        if !self.has_ro_bit {
            return;
        }
        let vtag = self.vtag(vaddr);
        let idx = (vtag & self.index_mask) as usize;
        if self.entries[idx].t >> 1 == vtag {
            self.entries[idx].t |= 1;
        }
    }

    /// Iterate valid (vline, backing_line, readonly) triples, for shadow
    /// inclusion scans in tests.
    pub fn valid_entries(&self) -> impl Iterator<Item = (u64, u64, bool)> + '_ {
        self.entries.iter().zip(self.phys.iter()).filter_map(move |(e, p)| {
            if e.t == INVALID_T {
                None
            } else {
                let (vtag, ro) =
                    if self.has_ro_bit { (e.t >> 1, e.t & 1 != 0) } else { (e.t, false) };
                Some((vtag << self.log2_line, *p, ro))
            }
        })
    }
}
