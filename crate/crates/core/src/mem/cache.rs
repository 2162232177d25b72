//! Set-associative cache models: per-core L1s and the shared, inclusive L2
//! with an embedded coherence directory.
//!
//! Caches track tags and states only; data always lives in flat guest
//! physical memory, so writebacks are latency/statistics events. Replacement
//! is round-robin for the same reason as the TLB: the L0 filter hides hits
//! from the model, so recency-based policies cannot be maintained.

use crate::config::CacheGeometry;

/// MESI state of an L1 line. The plain (non-coherent) cache model uses
/// `E` as valid-clean and `M` as valid-dirty.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LineState {
    Invalid,
    Shared,
    Exclusive,
    Modified,
}

#[derive(Clone, Copy)]
struct L1Line {
    state: LineState,
    /// Full line address (paddr >> line_log2 << line_log2).
    pline: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct L1Eviction {
    pub pline: u64,
    pub dirty: bool,
}

pub struct L1Cache {
    lines: Vec<L1Line>,
    sets: u64,
    ways: usize,
    line_log2: u32,
    rr: Vec<u8>,
    pub hits: u64,
    pub misses: u64,
    pub writebacks: u64,
}

impl L1Cache {
    pub fn new(geo: CacheGeometry) -> Self {
        // The cache models always track 64-byte lines; 4096-byte L0 lines
        // pair with the TLB-only model.
        let line = 64;
        let sets = geo.sets(line);
        L1Cache {
            lines: vec![L1Line { state: LineState::Invalid, pline: 0 }; (sets * geo.ways as u64) as usize],
            sets,
            ways: geo.ways as usize,
            line_log2: line.trailing_zeros(),
            rr: vec![0; sets as usize],
            hits: 0,
            misses: 0,
            writebacks: 0,
        }
    }

    pub fn line_size(&self) -> u64 {
        1 << self.line_log2
    }

    pub fn line_of(&self, paddr: u64) -> u64 {
        paddr & !(self.line_size() - 1)
    }

    fn set_of(&self, pline: u64) -> usize {
        ((pline >> self.line_log2) & (self.sets - 1)) as usize
    }

    fn way_of(&self, pline: u64) -> Option<usize> {
        let set = self.set_of(pline);
        (0..self.ways).find(|&w| {
            let l = &self.lines[set * self.ways + w];
            l.state != LineState::Invalid && l.pline == pline
        })
    }

    pub fn state_of(&self, pline: u64) -> LineState {
        match self.way_of(pline) {
            Some(w) => self.lines[self.set_of(pline) * self.ways + w].state,
            None => LineState::Invalid,
        }
    }

    pub fn set_state(&mut self, pline: u64, state: LineState) {
        let set = self.set_of(pline);
        let w = self.way_of(pline).expect("set_state on absent line");
        self.lines[set * self.ways + w].state = state;
    }

    /// Fill `pline` in `state`, evicting the round-robin victim if the set
    /// is full. The caller handles the eviction (writeback, directory
    /// update, L0 shootdown) before using the new line.
    pub fn fill(&mut self, pline: u64, state: LineState) -> Option<L1Eviction> {
        debug_assert!(self.way_of(pline).is_none(), "fill of a present line");
        let set = self.set_of(pline);
        let mut way = None;
        for w in 0..self.ways {
            if self.lines[set * self.ways + w].state == LineState::Invalid {
                way = Some(w);
                break;
            }
        }
        let (way, evicted) = match way {
            Some(w) => (w, None),
            None => {
                let w = self.rr[set] as usize % self.ways;
                self.rr[set] = self.rr[set].wrapping_add(1);
                let old = self.lines[set * self.ways + w];
                let dirty = old.state == LineState::Modified;
                if dirty {
                    self.writebacks += 1;
                }
                (w, Some(L1Eviction { pline: old.pline, dirty }))
            }
        };
        self.lines[set * self.ways + way] = L1Line { state, pline };
        evicted
    }

    /// Coherence invalidation; returns whether the line was dirty.
    pub fn invalidate(&mut self, pline: u64) -> bool {
        let set = self.set_of(pline);
        if let Some(w) = self.way_of(pline) {
            let line = &mut self.lines[set * self.ways + w];
            let dirty = line.state == LineState::Modified;
            line.state = LineState::Invalid;
            if dirty {
                self.writebacks += 1;
            }
            dirty
        } else {
            false
        }
    }

    pub fn flush_all(&mut self) {
        for l in &mut self.lines {
            l.state = LineState::Invalid;
        }
    }

    pub fn valid_lines(&self) -> impl Iterator<Item = (u64, LineState)> + '_ {
        self.lines
            .iter()
            .filter(|l| l.state != LineState::Invalid)
            .map(|l| (l.pline, l.state))
    }
}

/// Directory summary per L2 line: which L1 data caches hold the line and
/// whether one of them holds it exclusively (E or M; the silent E-to-M
/// upgrade is invisible to the directory, as in real directories).
#[derive(Clone, Copy)]
struct L2Line {
    valid: bool,
    pline: u64,
    dirty: bool,
    holders: u64,
    exclusive: bool,
}

#[derive(Debug)]
pub struct L2Eviction {
    pub pline: u64,
    pub holders: u64,
    pub dirty: bool,
}

pub struct L2Shared {
    lines: Vec<L2Line>,
    sets: u64,
    ways: usize,
    line_log2: u32,
    rr: Vec<u8>,
    pub hits: u64,
    pub misses: u64,
    pub writebacks: u64,
    pub evictions: u64,
}

impl L2Shared {
    pub fn new(geo: CacheGeometry) -> Self {
        let line = 64;
        let sets = geo.sets(line);
        L2Shared {
            lines: vec![
                L2Line { valid: false, pline: 0, dirty: false, holders: 0, exclusive: false };
                (sets * geo.ways as u64) as usize
            ],
            sets,
            ways: geo.ways as usize,
            line_log2: line.trailing_zeros(),
            rr: vec![0; sets as usize],
            hits: 0,
            misses: 0,
            writebacks: 0,
            evictions: 0,
        }
    }

    pub fn line_of(&self, paddr: u64) -> u64 {
        paddr & !((1u64 << self.line_log2) - 1)
    }

    fn set_of(&self, pline: u64) -> usize {
        ((pline >> self.line_log2) & (self.sets - 1)) as usize
    }

    fn way_of(&self, pline: u64) -> Option<usize> {
        let set = self.set_of(pline);
        (0..self.ways).find(|&w| {
            let l = &self.lines[set * self.ways + w];
            l.valid && l.pline == pline
        })
    }

    pub fn present(&self, pline: u64) -> bool {
        self.way_of(pline).is_some()
    }

    /// Look up a line, counting a hit or miss. On a miss the line must be
    /// brought in with `fill`.
    pub fn lookup(&mut self, pline: u64) -> bool {
        let present = self.present(pline);
        if present {
            self.hits += 1;
        } else {
            self.misses += 1;
        }
        present
    }

    /// Install a line fetched from memory, evicting the round-robin victim.
    /// The caller must back-invalidate the victim's holders (inclusive L2).
    pub fn fill(&mut self, pline: u64) -> Option<L2Eviction> {
        debug_assert!(!self.present(pline));
        let set = self.set_of(pline);
        let mut way = None;
        for w in 0..self.ways {
            if !self.lines[set * self.ways + w].valid {
                way = Some(w);
                break;
            }
        }
        let (way, evicted) = match way {
            Some(w) => (w, None),
            None => {
                let w = self.rr[set] as usize % self.ways;
                self.rr[set] = self.rr[set].wrapping_add(1);
                let old = self.lines[set * self.ways + w];
                self.evictions += 1;
                if old.dirty {
                    self.writebacks += 1;
                }
                (w, Some(L2Eviction { pline: old.pline, holders: old.holders, dirty: old.dirty }))
            }
        };
        self.lines[set * self.ways + way] =
            L2Line { valid: true, pline, dirty: false, holders: 0, exclusive: false };
        evicted
    }

    pub fn holders(&self, pline: u64) -> u64 {
        self.way_of(pline).map_or(0, |w| self.lines[self.set_of(pline) * self.ways + w].holders)
    }

    pub fn is_exclusive(&self, pline: u64) -> bool {
        self.way_of(pline).is_some_and(|w| self.lines[self.set_of(pline) * self.ways + w].exclusive)
    }

    pub fn set_directory(&mut self, pline: u64, holders: u64, exclusive: bool) {
        debug_assert!(!exclusive || holders.count_ones() == 1);
        let set = self.set_of(pline);
        let w = self.way_of(pline).expect("directory update on absent line");
        let line = &mut self.lines[set * self.ways + w];
        line.holders = holders;
        line.exclusive = exclusive;
    }

    pub fn add_holder(&mut self, pline: u64, core: usize) {
        let set = self.set_of(pline);
        let w = self.way_of(pline).expect("add_holder on absent line");
        let line = &mut self.lines[set * self.ways + w];
        line.holders |= 1 << core;
    }

    pub fn remove_holder(&mut self, pline: u64, core: usize) {
        let set = self.set_of(pline);
        if let Some(w) = self.way_of(pline) {
            let line = &mut self.lines[set * self.ways + w];
            line.holders &= !(1 << core);
            if line.holders == 0 {
                line.exclusive = false;
            }
        }
    }

    pub fn mark_dirty(&mut self, pline: u64) {
        let set = self.set_of(pline);
        let w = self.way_of(pline).expect("mark_dirty on absent line");
        self.lines[set * self.ways + w].dirty = true;
    }

    pub fn flush_all(&mut self) {
        for l in &mut self.lines {
            l.valid = false;
            l.holders = 0;
            l.exclusive = false;
            l.dirty = false;
        }
    }

    /// Every valid (pline, holders, exclusive) triple, for invariant scans.
    pub fn directory_entries(&self) -> impl Iterator<Item = (u64, u64, bool)> + '_ {
        self.lines.iter().filter(|l| l.valid).map(|l| (l.pline, l.holders, l.exclusive))
    }
}
