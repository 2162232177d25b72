//! The full memory path: per-core L0 filter caches, TLB models, L1 caches,
//! the shared inclusive L2 with its MESI directory, and flat guest physical
//! memory.
//!
//! Every guest access first probes the per-core L0 (three memory operations:
//! entry load, compare, XOR). On a hit the backing address is used directly
//! and the models never see the access; the inclusion property (every L0
//! entry backed by a valid TLB entry and a present L1 line) guarantees the
//! hit is what the models would have decided. Misses run the slow path:
//! TLB walk, permission check, cache/coherence transaction, L0 fill.

pub mod cache;
pub mod guest;
pub mod l0;
pub mod sv39;
pub mod tlb;

pub use cache::{L1Cache, L2Shared, LineState};
pub use guest::GuestMemory;
pub use l0::L0Cache;
pub use sv39::{satp_asid, satp_mode, AccessKind, SATP_MODE_SV39};
pub use tlb::Tlb;

use crate::config::{LatencyConfig, MemConfig, MemoryModelKind};
use crate::isa::{ExceptionCause, Trap};
use cache::{L1Eviction, L2Eviction};
use tlb::TlbEviction;

/// An LR/SC reservation. Lockstep modes track the reserved line and break
/// it on any other core's store; the parallel atomic mode compares the
/// loaded value instead.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Reservation {
    pub pline: u64,
    pub paddr: u64,
    pub value: u64,
}

/// Per-core memory-side state. Kept separate from the execution context so
/// the coherence protocol can borrow every core's caches at once.
pub struct CoreMem {
    pub l0d: L0Cache,
    pub l0i: L0Cache,
    pub itlb: Tlb,
    pub dtlb: Tlb,
    pub l1i: L1Cache,
    pub l1d: L1Cache,
    pub reservation: Option<Reservation>,
}

impl CoreMem {
    pub fn new(cfg: &MemConfig) -> Self {
        CoreMem {
            l0d: L0Cache::new(cfg.l0_entries, cfg.line_size, true),
            l0i: L0Cache::new(cfg.l0_entries, cfg.line_size, false),
            itlb: Tlb::new(cfg.itlb),
            dtlb: Tlb::new(cfg.dtlb),
            l1i: L1Cache::new(cfg.l1i),
            l1d: L1Cache::new(cfg.l1d),
            reservation: None,
        }
    }

    /// Flush both L0 filters (privilege switch, satp write, SFENCE.VMA,
    /// model reconfiguration).
    pub fn flush_l0(&mut self) {
        self.l0d.invalidate_all();
        self.l0i.invalidate_all();
    }

    pub fn flush_tlbs(&mut self) {
        self.itlb.flush_all();
        self.dtlb.flush_all();
    }
}

/// Globally shared memory-side state: the active model, the shared L2 and
/// the coherence statistics.
pub struct SharedMem {
    pub model: MemoryModelKind,
    pub line_size: u64,
    pub lat: LatencyConfig,
    pub l2: L2Shared,
    pub page_walks: u64,
    pub invalidations: u64,
    pub downgrades: u64,
    pub upgrades: u64,
}

impl SharedMem {
    pub fn new(cfg: &MemConfig) -> Self {
        SharedMem {
            model: cfg.model,
            line_size: cfg.line_size,
            lat: cfg.latency,
            l2: L2Shared::new(cfg.l2),
            page_walks: 0,
            invalidations: 0,
            downgrades: 0,
            upgrades: 0,
        }
    }

    fn has_tlb_model(&self) -> bool {
        !matches!(self.model, MemoryModelKind::Atomic)
    }

    fn has_cache_model(&self) -> bool {
        matches!(self.model, MemoryModelKind::Cache | MemoryModelKind::Mesi)
    }
}

/// Translation context for one access, derived from the privileged state.
#[derive(Debug, Clone, Copy)]
pub struct AccessCtx {
    pub satp: u64,
    /// Effective privilege: 0 user, 1 supervisor, 3 machine.
    pub priv_mode: u8,
    pub sum: bool,
    pub mxr: bool,
}

impl AccessCtx {
    pub fn bare() -> Self {
        AccessCtx { satp: 0, priv_mode: 3, sum: false, mxr: false }
    }

    fn paging(&self) -> bool {
        self.priv_mode != 3 && satp_mode(self.satp) == SATP_MODE_SV39
    }

    fn asid(&self) -> u16 {
        satp_asid(self.satp)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FaultKind {
    Misaligned,
    Access,
    Page,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MemFault {
    pub access: AccessKind,
    pub kind: FaultKind,
    /// The (portion of the) virtual address that faulted.
    pub vaddr: u64,
}

impl MemFault {
    pub fn to_trap(self) -> Trap {
        let vaddr = self.vaddr;
        use AccessKind::*;
        use FaultKind::*;
        let cause = match (self.access, self.kind) {
            (Fetch, Misaligned) => ExceptionCause::InstructionMisaligned,
            (Fetch, Access) => ExceptionCause::InstructionAccessFault,
            (Fetch, Page) => ExceptionCause::InstructionPageFault,
            (Load, Misaligned) => ExceptionCause::LoadMisaligned,
            (Load, Access) => ExceptionCause::LoadAccessFault,
            (Load, Page) => ExceptionCause::LoadPageFault,
            (Store, Misaligned) => ExceptionCause::StoreMisaligned,
            (Store, Access) => ExceptionCause::StoreAccessFault,
            (Store, Page) => ExceptionCause::StorePageFault,
        };
        Trap::new(cause, vaddr)
    }
}

/// Memory-mapped devices, dispatched on slow-path accesses that fall
/// outside RAM. Returning None/false raises an access fault.
pub trait DeviceBus {
    fn load(&mut self, paddr: u64, width: u64) -> Option<u64>;
    fn store(&mut self, paddr: u64, width: u64, value: u64) -> bool;
}

/// A bus with no devices (unit tests, user emulation).
pub struct NoDevices;

impl DeviceBus for NoDevices {
    fn load(&mut self, _: u64, _: u64) -> Option<u64> {
        None
    }
    fn store(&mut self, _: u64, _: u64, _: u64) -> bool {
        false
    }
}

/// Split the per-core memory slice into the requester and the rest.
struct Remote<'a> {
    left: &'a mut [CoreMem],
    right: &'a mut [CoreMem],
}

impl<'a> Remote<'a> {
    fn get(&mut self, j: usize) -> &mut CoreMem {
        if j < self.left.len() {
            &mut self.left[j]
        } else {
            &mut self.right[j - self.left.len() - 1]
        }
    }

    fn iter_mut(&mut self) -> impl Iterator<Item = (usize, &mut CoreMem)> {
        let n = self.left.len();
        self.left
            .iter_mut()
            .enumerate()
            .chain(self.right.iter_mut().enumerate().map(move |(k, m)| (n + 1 + k, m)))
    }
}

fn split_mems(mems: &mut [CoreMem], i: usize) -> (&mut CoreMem, Remote<'_>) {
    let (left, rest) = mems.split_at_mut(i);
    let (me, right) = rest.split_first_mut().unwrap();
    (me, Remote { left, right })
}

fn fault(access: AccessKind, kind: FaultKind, vaddr: u64) -> MemFault {
    MemFault { access, kind, vaddr }
}

/// Result of a data slow path.
enum SlowTarget {
    /// Backing RAM address for the access plus the L0 fill already done.
    Ram(u64),
    /// Device address; no L0 fill, dispatch to the bus.
    Device(u64),
}

struct SlowResult {
    target: SlowTarget,
    latency: u64,
}

/// Translate `vaddr` through the TLB model (or a raw walk when no TLB is
/// modeled), check permissions, and return the physical address plus the
/// leaf permission bits.
fn translate_data(
    me: &mut CoreMem,
    sh: &mut SharedMem,
    gmem: &GuestMemory,
    ctx: &AccessCtx,
    vaddr: u64,
    kind: AccessKind,
) -> Result<(u64, u64, u64), MemFault> {
    debug_assert!(kind != AccessKind::Fetch);
    if !ctx.paging() {
        return Ok((vaddr, 0xff, 0));
    }
    let mut latency = 0u64;
    let asid = ctx.asid();
    let mut hit = if sh.has_tlb_model() { me.dtlb.lookup(vaddr, asid) } else { None };
    // A store through a mapping whose D bit is still clear must re-walk so
    // the walker can set it (hardware-managed A/D).
    if let Some(h) = &hit {
        if kind == AccessKind::Store && h.pbits & sv39::PTE_D == 0 {
            hit = None;
        }
    }
    let (ppage, pbits) = match hit {
        Some(h) => (h.ppage, h.pbits),
        None => {
            let t = sv39::walk(gmem, ctx.satp, vaddr, kind).map_err(|e| match e {
                sv39::WalkError::PageFault => fault(kind, FaultKind::Page, vaddr),
                sv39::WalkError::AccessFault => fault(kind, FaultKind::Access, vaddr),
            })?;
            if sh.has_tlb_model() {
                sh.page_walks += 1;
                latency += t.levels as u64 * sh.lat.walk_per_level as u64;
                if let Some(ev) = me.dtlb.insert(vaddr, asid, t.ppage, t.pbits, t.page_log2) {
                    evict_notify_tlb(&mut me.l0d, ev);
                }
            }
            (t.ppage, t.pbits)
        }
    };
    if !sv39::perm_ok(pbits, kind, ctx.priv_mode, ctx.sum, ctx.mxr) {
        return Err(fault(kind, FaultKind::Page, vaddr));
    }
    Ok((ppage | (vaddr & 0xfff), pbits, latency))
}

/// Inclusion maintenance: a TLB eviction flushes every L0 entry inside the
/// evicted page.
pub fn evict_notify_tlb(l0: &mut L0Cache, ev: TlbEviction) {
    l0.invalidate_vpage(ev.vpage, ev.page_log2);
}

/// Inclusion maintenance: an L1 eviction flushes the L0 entries backed by
/// the evicted line.
pub fn evict_notify_l1(l0: &mut L0Cache, pline: u64) {
    l0.invalidate_phys_line(pline);
}

/// Back-invalidate an evicted L2 line out of every L1 and L0 (inclusive L2).
fn l2_back_invalidate(
    me: &mut CoreMem,
    remote: &mut Remote<'_>,
    sh: &mut SharedMem,
    ev: &L2Eviction,
) {
    let all = |cm: &mut CoreMem| {
        cm.l1d.invalidate(ev.pline);
        evict_notify_l1(&mut cm.l0d, ev.pline);
        cm.l1i.invalidate(ev.pline);
        evict_notify_l1(&mut cm.l0i, ev.pline);
        if cm.reservation.is_some_and(|r| r.pline == ev.pline) {
            cm.reservation = None;
        }
    };
    all(me);
    for (_, cm) in remote.iter_mut() {
        all(cm);
    }
    let _ = sh;
}

/// Handle the requester's own L1D victim: writeback bookkeeping, directory
/// removal, L0 shootdown.
fn settle_l1d_eviction(me: &mut CoreMem, sh: &mut SharedMem, i: usize, ev: L1Eviction) {
    if ev.dirty {
        // Inclusion guarantees a dirty L1 line is present in the L2.
        debug_assert!(sh.l2.present(ev.pline));
        sh.l2.mark_dirty(ev.pline);
    }
    sh.l2.remove_holder(ev.pline, i);
    evict_notify_l1(&mut me.l0d, ev.pline);
    if me.reservation.is_some_and(|r| r.pline == ev.pline) {
        me.reservation = None;
    }
}

/// MESI directory transaction bringing `pline` into the requester's L1D in
/// a state sufficient for `kind`. `me` must currently miss (or hold S for a
/// store upgrade). Returns the added latency.
fn mesi_transaction(
    i: usize,
    me: &mut CoreMem,
    remote: &mut Remote<'_>,
    sh: &mut SharedMem,
    pline: u64,
    want_write: bool,
) -> u64 {
    let mut latency = 0u64;
    let cur = me.l1d.state_of(pline);

    if want_write && cur == LineState::Shared {
        // Upgrade: invalidate the other sharers, S -> M.
        latency += sh.lat.l2 as u64;
        let holders = sh.l2.holders(pline);
        for j in 0..64usize {
            if j != i && holders & (1 << j) != 0 {
                let cm = remote.get(j);
                cm.l1d.invalidate(pline);
                evict_notify_l1(&mut cm.l0d, pline);
                if cm.reservation.is_some_and(|r| r.pline == pline) {
                    cm.reservation = None;
                }
                sh.invalidations += 1;
                latency += sh.lat.invalidation as u64;
            }
        }
        sh.upgrades += 1;
        me.l1d.set_state(pline, LineState::Modified);
        sh.l2.set_directory(pline, 1 << i, true);
        return latency;
    }

    debug_assert_eq!(cur, LineState::Invalid, "mesi_transaction on a sufficient state");

    // L2 / memory access.
    if sh.l2.lookup(pline) {
        latency += sh.lat.l2 as u64;
    } else {
        latency += sh.lat.l2 as u64 + sh.lat.memory as u64;
        if let Some(ev) = sh.l2.fill(pline) {
            l2_back_invalidate(me, remote, sh, &ev);
        }
    }

    let holders = sh.l2.holders(pline);
    let exclusive = sh.l2.is_exclusive(pline);
    let grant;
    if want_write {
        // GetM: invalidate every holder.
        for j in 0..64usize {
            if holders & (1 << j) != 0 {
                debug_assert_ne!(j, i, "requester missed but directory lists it");
                let cm = remote.get(j);
                if cm.l1d.invalidate(pline) {
                    sh.l2.mark_dirty(pline);
                }
                evict_notify_l1(&mut cm.l0d, pline);
                if cm.reservation.is_some_and(|r| r.pline == pline) {
                    cm.reservation = None;
                }
                sh.invalidations += 1;
                latency += sh.lat.invalidation as u64;
            }
        }
        grant = LineState::Modified;
        // The fill below installs the directory entry.
    } else if exclusive {
        // GetS with an exclusive owner: downgrade it (writeback if M).
        let owner = holders.trailing_zeros() as usize;
        debug_assert_ne!(owner, i);
        let cm = remote.get(owner);
        if cm.l1d.state_of(pline) == LineState::Modified {
            cm.l1d.writebacks += 1;
            sh.l2.mark_dirty(pline);
        }
        cm.l1d.set_state(pline, LineState::Shared);
        // The owner's L0 must lose write permission; entries are virtually
        // indexed, so drop them and let the next read refill read-only.
        evict_notify_l1(&mut cm.l0d, pline);
        sh.downgrades += 1;
        latency += sh.lat.invalidation as u64;
        grant = LineState::Shared;
    } else if holders != 0 {
        grant = LineState::Shared;
    } else {
        grant = LineState::Exclusive;
    }

    if let Some(ev) = me.l1d.fill(pline, grant) {
        settle_l1d_eviction(me, sh, i, ev);
    }
    let new_holders = if want_write { 1 << i } else { sh.l2.holders(pline) | 1 << i };
    sh.l2.set_directory(pline, new_holders, grant != LineState::Shared);
    latency
}

/// Plain (non-coherent) cache model transaction for a missing line.
fn cache_transaction(
    i: usize,
    me: &mut CoreMem,
    remote: &mut Remote<'_>,
    sh: &mut SharedMem,
    pline: u64,
    want_write: bool,
) -> u64 {
    let mut latency = 0u64;
    if sh.l2.lookup(pline) {
        latency += sh.lat.l2 as u64;
    } else {
        latency += sh.lat.l2 as u64 + sh.lat.memory as u64;
        if let Some(ev) = sh.l2.fill(pline) {
            l2_back_invalidate(me, remote, sh, &ev);
        }
    }
    let state = if want_write { LineState::Modified } else { LineState::Exclusive };
    if let Some(ev) = me.l1d.fill(pline, state) {
        settle_l1d_eviction(me, sh, i, ev);
    }
    sh.l2.add_holder(pline, i);
    latency
}

/// Ensure the line is present (and writable, for stores) in the L1D under
/// the active cache model. Returns added latency and the resulting state.
fn ensure_l1d(
    i: usize,
    me: &mut CoreMem,
    remote: &mut Remote<'_>,
    sh: &mut SharedMem,
    pline: u64,
    want_write: bool,
) -> (u64, LineState) {
    let mut latency = 0u64;
    match sh.model {
        MemoryModelKind::Atomic | MemoryModelKind::Tlb => (0, LineState::Modified),
        MemoryModelKind::Cache => {
            let state = me.l1d.state_of(pline);
            if state == LineState::Invalid {
                me.l1d.misses += 1;
                latency += cache_transaction(i, me, remote, sh, pline, want_write);
            } else {
                me.l1d.hits += 1;
                latency += sh.lat.l1_hit as u64;
                if want_write {
                    me.l1d.set_state(pline, LineState::Modified);
                }
            }
            (latency, me.l1d.state_of(pline))
        }
        MemoryModelKind::Mesi => {
            let state = me.l1d.state_of(pline);
            let sufficient = match state {
                LineState::Invalid => false,
                LineState::Shared => !want_write,
                LineState::Exclusive | LineState::Modified => true,
            };
            if sufficient {
                me.l1d.hits += 1;
                latency += sh.lat.l1_hit as u64;
                if want_write && state == LineState::Exclusive {
                    // Silent E -> M upgrade; invisible to the directory.
                    me.l1d.set_state(pline, LineState::Modified);
                }
            } else {
                if state == LineState::Invalid {
                    me.l1d.misses += 1;
                } else {
                    // S->M upgrade counts as a hit for the hit-rate stats.
                    me.l1d.hits += 1;
                }
                latency += mesi_transaction(i, me, remote, sh, pline, want_write);
            }
            (latency, me.l1d.state_of(pline))
        }
    }
}

/// The slow path for one data access fully inside a line.
fn data_slow_path(
    i: usize,
    mems: &mut [CoreMem],
    sh: &mut SharedMem,
    gmem: &GuestMemory,
    ctx: &AccessCtx,
    vaddr: u64,
    width: u64,
    kind: AccessKind,
) -> Result<SlowResult, MemFault> {
    let (me, mut remote) = split_mems(mems, i);
    let (paddr, pbits, mut latency) = translate_data(me, sh, gmem, ctx, vaddr, kind)?;

    if !gmem.contains(paddr, width) {
        // Device space: no L0 fill, no cache involvement.
        return Ok(SlowResult { target: SlowTarget::Device(paddr), latency });
    }

    let pline = paddr & !(sh.line_size.min(64) - 1);
    let (lat, state) =
        ensure_l1d(i, me, &mut remote, sh, pline, kind == AccessKind::Store);
    latency += lat;

    // Fill the L0. The entry is read-only if a store through it would need
    // the slow path anyway: page not writable in this context, D bit still
    // clear, or line only held in S.
    let page_writable = !ctx.paging()
        || (sv39::perm_ok(pbits, AccessKind::Store, ctx.priv_mode, ctx.sum, ctx.mxr)
            && pbits & sv39::PTE_D != 0);
    let readonly = !page_writable || state == LineState::Shared;
    debug_assert!(!(kind == AccessKind::Store && readonly));
    let l0_line = vaddr & !(sh.line_size - 1);
    let backing_line = paddr & !(sh.line_size - 1);
    // With page-sized L0 lines the whole entry must be RAM-backed.
    if gmem.contains(backing_line, sh.line_size) {
        me.l0d.insert(l0_line, backing_line, readonly);
    }
    Ok(SlowResult { target: SlowTarget::Ram(paddr), latency })
}

/// A data access of up to 8 bytes fully inside one L0 line.
fn access_within_line(
    i: usize,
    mems: &mut [CoreMem],
    sh: &mut SharedMem,
    gmem: &GuestMemory,
    dev: &mut dyn DeviceBus,
    ctx: &AccessCtx,
    vaddr: u64,
    width: u64,
    store_value: Option<u64>,
) -> Result<(u64, u64), MemFault> {
    let kind = if store_value.is_some() { AccessKind::Store } else { AccessKind::Load };
    if let Some(backing) = mems[i].l0d.lookup(vaddr, kind == AccessKind::Store) {
        // Fast path: at most 3 memory operations, no model involvement.
        return Ok(match store_value {
            Some(v) => {
                gmem.write_width(backing, width, v);
                (0, 0)
            }
            None => (gmem.read_width(backing, width), 0),
        });
    }
    let slow = data_slow_path(i, mems, sh, gmem, ctx, vaddr, width, kind)?;
    match slow.target {
        SlowTarget::Ram(paddr) => {
            let value = match store_value {
                Some(v) => {
                    gmem.write_width(paddr, width, v);
                    kill_remote_reservations(mems, i, paddr & !63);
                    0
                }
                None => gmem.read_width(paddr, width),
            };
            Ok((value, slow.latency))
        }
        SlowTarget::Device(paddr) => match store_value {
            Some(v) => {
                if dev.store(paddr, width, v) {
                    Ok((0, slow.latency))
                } else {
                    Err(fault(kind, FaultKind::Access, vaddr))
                }
            }
            None => match dev.load(paddr, width) {
                Some(v) => Ok((v, slow.latency)),
                None => Err(fault(kind, FaultKind::Access, vaddr)),
            },
        },
    }
}

/// A store by core `i` invalidates every other core's reservation on the
/// line (lockstep models; the parallel atomic mode uses value-compare SC).
fn kill_remote_reservations(mems: &mut [CoreMem], i: usize, pline: u64) {
    for (j, cm) in mems.iter_mut().enumerate() {
        if j != i && cm.reservation.is_some_and(|r| r.pline == pline) {
            cm.reservation = None;
        }
    }
}

/// Guest load. Accesses crossing a line boundary are split in two.
pub fn load(
    i: usize,
    mems: &mut [CoreMem],
    sh: &mut SharedMem,
    gmem: &GuestMemory,
    dev: &mut dyn DeviceBus,
    ctx: &AccessCtx,
    vaddr: u64,
    width: u64,
) -> Result<(u64, u64), MemFault> {
    let line = sh.line_size;
    if (vaddr & (line - 1)) + width <= line {
        return access_within_line(i, mems, sh, gmem, dev, ctx, vaddr, width, None);
    }
    let lo_n = line - (vaddr & (line - 1));
    let (lo, lat1) = read_bytes_path(i, mems, sh, gmem, dev, ctx, vaddr, lo_n)?;
    let (hi, lat2) = read_bytes_path(i, mems, sh, gmem, dev, ctx, vaddr + lo_n, width - lo_n)?;
    Ok((lo | hi << (8 * lo_n), lat1 + lat2))
}

fn read_bytes_path(
    i: usize,
    mems: &mut [CoreMem],
    sh: &mut SharedMem,
    gmem: &GuestMemory,
    dev: &mut dyn DeviceBus,
    ctx: &AccessCtx,
    vaddr: u64,
    nbytes: u64,
) -> Result<(u64, u64), MemFault> {
    let mut value = 0u64;
    let mut latency = 0u64;
    let mut done = 0u64;
    // Widths 3/5/6/7 are assembled from power-of-two pieces.
    for w in [8u64, 4, 2, 1] {
        while nbytes - done >= w && (vaddr + done) % w == 0 {
            let (v, lat) =
                access_within_line(i, mems, sh, gmem, dev, ctx, vaddr + done, w, None)?;
            value |= v << (8 * done);
            latency += lat;
            done += w;
            if done == nbytes {
                return Ok((value, latency));
            }
        }
    }
    // Remaining unaligned head: byte at a time.
    while done < nbytes {
        let (v, lat) = access_within_line(i, mems, sh, gmem, dev, ctx, vaddr + done, 1, None)?;
        value |= v << (8 * done);
        latency += lat;
        done += 1;
    }
    Ok((value, latency))
}

/// Guest store. Accesses crossing a line boundary are split in two.
pub fn store(
    i: usize,
    mems: &mut [CoreMem],
    sh: &mut SharedMem,
    gmem: &GuestMemory,
    dev: &mut dyn DeviceBus,
    ctx: &AccessCtx,
    vaddr: u64,
    width: u64,
    value: u64,
) -> Result<u64, MemFault> {
    let line = sh.line_size;
    if (vaddr & (line - 1)) + width <= line {
        let (_, lat) =
            access_within_line(i, mems, sh, gmem, dev, ctx, vaddr, width, Some(value))?;
        return Ok(lat);
    }
    let lo_n = line - (vaddr & (line - 1));
    let lat1 = write_bytes_path(i, mems, sh, gmem, dev, ctx, vaddr, lo_n, value)?;
    let lat2 =
        write_bytes_path(i, mems, sh, gmem, dev, ctx, vaddr + lo_n, width - lo_n, value >> (8 * lo_n))?;
    Ok(lat1 + lat2)
}

fn write_bytes_path(
    i: usize,
    mems: &mut [CoreMem],
    sh: &mut SharedMem,
    gmem: &GuestMemory,
    dev: &mut dyn DeviceBus,
    ctx: &AccessCtx,
    vaddr: u64,
    nbytes: u64,
    value: u64,
) -> Result<u64, MemFault> {
    let mut latency = 0u64;
    let mut done = 0u64;
    for w in [8u64, 4, 2, 1] {
        while nbytes - done >= w && (vaddr + done) % w == 0 {
            let part = if w == 8 { value >> (8 * done) } else { value >> (8 * done) & ((1 << (8 * w)) - 1) };
            let (_, lat) =
                access_within_line(i, mems, sh, gmem, dev, ctx, vaddr + done, w, Some(part))?;
            latency += lat;
            done += w;
            if done == nbytes {
                return Ok(latency);
            }
        }
    }
    while done < nbytes {
        let (_, lat) = access_within_line(
            i,
            mems,
            sh,
            gmem,
            dev,
            ctx,
            vaddr + done,
            1,
            Some(value >> (8 * done) & 0xff),
        )?;
        latency += lat;
        done += 1;
    }
    Ok(latency)
}

/// Atomic memory operation: always slow path, never fills the L0, and under
/// MESI acquires the line in M state before the update commits.
/// Returns (old value, latency).
pub fn amo(
    i: usize,
    mems: &mut [CoreMem],
    sh: &mut SharedMem,
    gmem: &GuestMemory,
    ctx: &AccessCtx,
    vaddr: u64,
    width: u64,
    f: &dyn Fn(u64) -> u64,
) -> Result<(u64, u64), MemFault> {
    if vaddr % width != 0 {
        return Err(fault(AccessKind::Store, FaultKind::Misaligned, vaddr));
    }
    let (me, mut remote) = split_mems(mems, i);
    let (paddr, _pbits, mut latency) =
        translate_data(me, sh, gmem, ctx, vaddr, AccessKind::Store)?;
    if !gmem.contains(paddr, width) {
        return Err(fault(AccessKind::Store, FaultKind::Access, vaddr));
    }
    let pline = paddr & !(sh.line_size.min(64) - 1);
    let (lat, _) = ensure_l1d(i, me, &mut remote, sh, pline, true);
    latency += lat;
    let old = match width {
        4 => gmem.amo_u32(paddr, |v| f(v as i32 as i64 as u64) as u32) as i32 as i64 as u64,
        8 => gmem.amo_u64(paddr, f),
        _ => unreachable!(),
    };
    kill_remote_reservations(mems, i, pline);
    Ok((old, latency))
}

/// Load-reserved: slow path load that also installs the reservation.
pub fn load_reserved(
    i: usize,
    mems: &mut [CoreMem],
    sh: &mut SharedMem,
    gmem: &GuestMemory,
    ctx: &AccessCtx,
    vaddr: u64,
    width: u64,
) -> Result<(u64, u64), MemFault> {
    if vaddr % width != 0 {
        return Err(fault(AccessKind::Load, FaultKind::Misaligned, vaddr));
    }
    let (me, mut remote) = split_mems(mems, i);
    let (paddr, _pbits, mut latency) =
        translate_data(me, sh, gmem, ctx, vaddr, AccessKind::Load)?;
    if !gmem.contains(paddr, width) {
        return Err(fault(AccessKind::Load, FaultKind::Access, vaddr));
    }
    let pline = paddr & !(sh.line_size.min(64) - 1);
    let (lat, _) = ensure_l1d(i, me, &mut remote, sh, pline, false);
    latency += lat;
    let v = match width {
        4 => gmem.read_u32(paddr) as i32 as i64 as u64,
        8 => gmem.read_u64(paddr),
        _ => unreachable!(),
    };
    me.reservation = Some(Reservation { pline, paddr, value: v });
    Ok((v, latency))
}

/// Store-conditional. Returns (success, latency). A failing SC performs no
/// memory traffic beyond translation.
pub fn store_conditional(
    i: usize,
    mems: &mut [CoreMem],
    sh: &mut SharedMem,
    gmem: &GuestMemory,
    ctx: &AccessCtx,
    vaddr: u64,
    width: u64,
    value: u64,
) -> Result<(bool, u64), MemFault> {
    if vaddr % width != 0 {
        return Err(fault(AccessKind::Store, FaultKind::Misaligned, vaddr));
    }
    let (me, mut remote) = split_mems(mems, i);
    let (paddr, _pbits, mut latency) =
        translate_data(me, sh, gmem, ctx, vaddr, AccessKind::Store)?;
    if !gmem.contains(paddr, width) {
        return Err(fault(AccessKind::Store, FaultKind::Access, vaddr));
    }
    let pline = paddr & !(sh.line_size.min(64) - 1);
    if me.reservation.map(|r| r.pline) != Some(pline) {
        me.reservation = None;
        return Ok((false, latency));
    }
    me.reservation = None;
    let (lat, _) = ensure_l1d(i, me, &mut remote, sh, pline, true);
    latency += lat;
    match width {
        4 => gmem.write_u32(paddr, value as u32),
        8 => gmem.write_u64(paddr, value),
        _ => unreachable!(),
    }
    kill_remote_reservations(mems, i, pline);
    Ok((true, latency))
}

/// Value-compare store-conditional for the parallel atomic mode: succeeds
/// iff memory still holds the value LR observed. ABA is accepted, as in
/// other user-mode emulators.
pub fn store_conditional_cas(
    me: &mut CoreMem,
    sh: &mut SharedMem,
    gmem: &GuestMemory,
    ctx: &AccessCtx,
    vaddr: u64,
    width: u64,
    value: u64,
) -> Result<(bool, u64), MemFault> {
    if vaddr % width != 0 {
        return Err(fault(AccessKind::Store, FaultKind::Misaligned, vaddr));
    }
    let mut one = std::slice::from_mut(me);
    let (me, _) = split_mems(&mut one, 0);
    let (paddr, _pbits, latency) = translate_data(me, sh, gmem, ctx, vaddr, AccessKind::Store)?;
    if !gmem.contains(paddr, width) {
        return Err(fault(AccessKind::Store, FaultKind::Access, vaddr));
    }
    let res = match me.reservation.take() {
        Some(r) if r.paddr == paddr => r,
        _ => return Ok((false, latency)),
    };
    let ok = match width {
        4 => gmem.cas_u32(paddr, res.value as u32, value as u32),
        8 => gmem.cas_u64(paddr, res.value, value),
        _ => unreachable!(),
    };
    Ok((ok, latency))
}

/// Runtime instruction-side access for one line (block entry or a line
/// crossing inside a block): L0I probe, then the I-slow-path.
pub fn icache_access(
    i: usize,
    mems: &mut [CoreMem],
    sh: &mut SharedMem,
    gmem: &GuestMemory,
    ctx: &AccessCtx,
    vaddr: u64,
) -> Result<u64, MemFault> {
    if mems[i].l0i.lookup(vaddr, false).is_some() {
        return Ok(0);
    }
    ifetch_slow_path(i, mems, sh, gmem, ctx, vaddr)
}

/// Cross-page chain check: consult the L0 I-cache for the jump target and
/// return the cached backing address if present. Counts as the block-entry
/// access only when it hits (the caller falls back to the dispatch loop on
/// a miss, which performs the ordinary entry access).
pub fn icache_link_check(me: &mut CoreMem, vaddr: u64) -> Option<u64> {
    let hit = me.l0i.peek(vaddr, false);
    if hit.is_some() {
        me.l0i.count_hit();
    }
    hit
}

fn ifetch_slow_path(
    i: usize,
    mems: &mut [CoreMem],
    sh: &mut SharedMem,
    gmem: &GuestMemory,
    ctx: &AccessCtx,
    vaddr: u64,
) -> Result<u64, MemFault> {
    let (me, mut remote) = split_mems(mems, i);
    let mut latency = 0u64;
    let asid = ctx.asid();
    let (ppage, pbits) = if !ctx.paging() {
        (vaddr & !0xfff, 0xffu64)
    } else {
        let hit = if sh.has_tlb_model() { me.itlb.lookup(vaddr, asid) } else { None };
        match hit {
            Some(h) => (h.ppage, h.pbits),
            None => {
                let t = sv39::walk(gmem, ctx.satp, vaddr, AccessKind::Fetch).map_err(
                    |e| match e {
                        sv39::WalkError::PageFault => {
                            fault(AccessKind::Fetch, FaultKind::Page, vaddr)
                        }
                        sv39::WalkError::AccessFault => {
                            fault(AccessKind::Fetch, FaultKind::Access, vaddr)
                        }
                    },
                )?;
                if sh.has_tlb_model() {
                    sh.page_walks += 1;
                    latency += t.levels as u64 * sh.lat.walk_per_level as u64;
                    if let Some(ev) = me.itlb.insert(vaddr, asid, t.ppage, t.pbits, t.page_log2) {
                        evict_notify_tlb(&mut me.l0i, ev);
                    }
                }
                (t.ppage, t.pbits)
            }
        }
    };
    if ctx.paging() && !sv39::perm_ok(pbits, AccessKind::Fetch, ctx.priv_mode, ctx.sum, ctx.mxr)
    {
        return Err(fault(AccessKind::Fetch, FaultKind::Page, vaddr));
    }
    let paddr = ppage | (vaddr & 0xfff);
    if !gmem.contains(paddr, 2) {
        return Err(fault(AccessKind::Fetch, FaultKind::Access, vaddr));
    }

    if sh.has_cache_model() {
        let pline = paddr & !63;
        if me.l1i.state_of(pline) != LineState::Invalid {
            me.l1i.hits += 1;
            latency += sh.lat.l1_hit as u64;
        } else {
            me.l1i.misses += 1;
            if sh.l2.lookup(pline) {
                latency += sh.lat.l2 as u64;
            } else {
                latency += sh.lat.l2 as u64 + sh.lat.memory as u64;
                if let Some(ev) = sh.l2.fill(pline) {
                    l2_back_invalidate(me, &mut remote, sh, &ev);
                }
            }
            // An instruction fetch of a line held modified elsewhere forces
            // a writeback-downgrade so the fetch sees current data. The
            // directory tracks data caches only; the I-side copy is
            // invisible to it (FENCE.I is the guest's coherence contract).
            if sh.model == MemoryModelKind::Mesi && sh.l2.is_exclusive(pline) {
                let owner = sh.l2.holders(pline).trailing_zeros() as usize;
                let cm = if owner == i { &mut *me } else { remote.get(owner) };
                if cm.l1d.state_of(pline) == LineState::Modified {
                    cm.l1d.writebacks += 1;
                    sh.l2.mark_dirty(pline);
                }
                cm.l1d.set_state(pline, LineState::Shared);
                evict_notify_l1(&mut cm.l0d, pline);
                let holders = sh.l2.holders(pline);
                sh.l2.set_directory(pline, holders, false);
                sh.downgrades += 1;
                latency += sh.lat.invalidation as u64;
            }
            if let Some(ev) = me.l1i.fill(pline, LineState::Exclusive) {
                evict_notify_l1(&mut me.l0i, ev.pline);
            }
        }
    }

    let l0_line = vaddr & !(sh.line_size - 1);
    let backing_line = paddr & !(sh.line_size - 1);
    if gmem.contains(backing_line, sh.line_size) {
        me.l0i.insert(l0_line, backing_line, false);
    }
    Ok(latency)
}

/// Functional instruction fetch used during block translation: full
/// translation and fault detection, but no model statistics or latency.
/// Returns the backing physical address of the 2-byte parcel.
pub fn fetch_translate(
    gmem: &GuestMemory,
    ctx: &AccessCtx,
    vaddr: u64,
) -> Result<u64, MemFault> {
    if vaddr % 2 != 0 {
        return Err(fault(AccessKind::Fetch, FaultKind::Misaligned, vaddr));
    }
    let paddr = if !ctx.paging() {
        vaddr
    } else {
        let t = sv39::walk(gmem, ctx.satp, vaddr, AccessKind::Fetch).map_err(|e| match e {
            sv39::WalkError::PageFault => fault(AccessKind::Fetch, FaultKind::Page, vaddr),
            sv39::WalkError::AccessFault => fault(AccessKind::Fetch, FaultKind::Access, vaddr),
        })?;
        if !sv39::perm_ok(t.pbits, AccessKind::Fetch, ctx.priv_mode, ctx.sum, ctx.mxr) {
            return Err(fault(AccessKind::Fetch, FaultKind::Page, vaddr));
        }
        t.ppage | (vaddr & 0xfff)
    };
    if !gmem.contains(paddr, 2) {
        return Err(fault(AccessKind::Fetch, FaultKind::Access, vaddr));
    }
    Ok(paddr)
}

/// Switch the active memory model and/or line size. All cores must be at a
/// global synchronization point. L0s are flushed unconditionally (idempotent
/// semantics); model structures restart cold: L1s drained, directory all-I.
pub fn reconfigure_memory(
    mems: &mut [CoreMem],
    sh: &mut SharedMem,
    cfg: &MemConfig,
    model: MemoryModelKind,
    line_size: u64,
) {
    sh.model = model;
    sh.line_size = line_size;
    sh.l2.flush_all();
    for cm in mems.iter_mut() {
        if cm.l0d.line_size() != line_size {
            cm.l0d = L0Cache::new(cfg.l0_entries, line_size, true);
            cm.l0i = L0Cache::new(cfg.l0_entries, line_size, false);
        } else {
            cm.flush_l0();
        }
        cm.flush_tlbs();
        cm.l1d.flush_all();
        cm.l1i.flush_all();
        cm.reservation = None;
    }
}
