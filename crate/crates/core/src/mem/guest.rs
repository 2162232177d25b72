//! Flat guest physical memory.
//!
//! Backed by an 8-byte aligned allocation and accessed through atomic cells,
//! so naturally aligned loads/stores up to 8 bytes are single-copy atomic in
//! parallel execution mode. Misaligned accesses fall back to byte copies
//! with no atomicity promise, matching the memory-model contract.

use std::sync::atomic::{AtomicU16, AtomicU32, AtomicU64, AtomicU8, Ordering};

pub struct GuestMemory {
    base: u64,
    len: u64,
    cells: Box<[AtomicU64]>,
}

impl GuestMemory {
    pub fn new(base: u64, len: u64) -> Self {
        assert!(base % 8 == 0 && len % 8 == 0);
        let mut v = Vec::new();
        v.resize_with(len as usize / 8, || AtomicU64::new(0));
        GuestMemory { base, len, cells: v.into_boxed_slice() }
    }

    pub fn base(&self) -> u64 {
        self.base
    }

    pub fn len(&self) -> u64 {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Whether [paddr, paddr+width) lies entirely in RAM.
    pub fn contains(&self, paddr: u64, width: u64) -> bool {
        paddr >= self.base && paddr.wrapping_add(width) <= self.base + self.len && width <= self.len
    }

    fn ptr(&self, paddr: u64) -> *mut u8 {
        debug_assert!(self.contains(paddr, 1));
        unsafe { (self.cells.as_ptr() as *mut u8).add((paddr - self.base) as usize) }
    }

    pub fn read_u8(&self, paddr: u64) -> u8 {
        unsafe { (*(self.ptr(paddr) as *const AtomicU8)).load(Ordering::Relaxed) }
    }

    pub fn write_u8(&self, paddr: u64, v: u8) {
        unsafe { (*(self.ptr(paddr) as *const AtomicU8)).store(v, Ordering::Relaxed) }
    }

    pub fn read_u16(&self, paddr: u64) -> u16 {
        if paddr % 2 == 0 {
            unsafe { (*(self.ptr(paddr) as *const AtomicU16)).load(Ordering::Relaxed) }
        } else {
            u16::from_le_bytes([self.read_u8(paddr), self.read_u8(paddr + 1)])
        }
    }

    pub fn write_u16(&self, paddr: u64, v: u16) {
        if paddr % 2 == 0 {
            unsafe { (*(self.ptr(paddr) as *const AtomicU16)).store(v, Ordering::Relaxed) }
        } else {
            let b = v.to_le_bytes();
            self.write_u8(paddr, b[0]);
            self.write_u8(paddr + 1, b[1]);
        }
    }

    pub fn read_u32(&self, paddr: u64) -> u32 {
        if paddr % 4 == 0 {
            unsafe { (*(self.ptr(paddr) as *const AtomicU32)).load(Ordering::Relaxed) }
        } else {
            let mut b = [0u8; 4];
            for (i, x) in b.iter_mut().enumerate() {
                *x = self.read_u8(paddr + i as u64);
            }
            u32::from_le_bytes(b)
        }
    }

    pub fn write_u32(&self, paddr: u64, v: u32) {
        if paddr % 4 == 0 {
            unsafe { (*(self.ptr(paddr) as *const AtomicU32)).store(v, Ordering::Relaxed) }
        } else {
            for (i, x) in v.to_le_bytes().iter().enumerate() {
                self.write_u8(paddr + i as u64, *x);
            }
        }
    }

    pub fn read_u64(&self, paddr: u64) -> u64 {
        if paddr % 8 == 0 {
            let idx = ((paddr - self.base) / 8) as usize;
            self.cells[idx].load(Ordering::Relaxed)
        } else {
            let mut b = [0u8; 8];
            for (i, x) in b.iter_mut().enumerate() {
                *x = self.read_u8(paddr + i as u64);
            }
            u64::from_le_bytes(b)
        }
    }

    pub fn write_u64(&self, paddr: u64, v: u64) {
        if paddr % 8 == 0 {
            let idx = ((paddr - self.base) / 8) as usize;
            self.cells[idx].store(v, Ordering::Relaxed);
        } else {
            for (i, x) in v.to_le_bytes().iter().enumerate() {
                self.write_u8(paddr + i as u64, *x);
            }
        }
    }

    pub fn read_width(&self, paddr: u64, width: u64) -> u64 {
        match width {
            1 => self.read_u8(paddr) as u64,
            2 => self.read_u16(paddr) as u64,
            4 => self.read_u32(paddr) as u64,
            8 => self.read_u64(paddr),
            _ => unreachable!("bad access width {width}"),
        }
    }

    pub fn write_width(&self, paddr: u64, width: u64, v: u64) {
        match width {
            1 => self.write_u8(paddr, v as u8),
            2 => self.write_u16(paddr, v as u16),
            4 => self.write_u32(paddr, v as u32),
            8 => self.write_u64(paddr, v),
            _ => unreachable!("bad access width {width}"),
        }
    }

    pub fn read_bytes(&self, paddr: u64, buf: &mut [u8]) {
        for (i, b) in buf.iter_mut().enumerate() {
            *b = self.read_u8(paddr + i as u64);
        }
    }

    pub fn write_bytes(&self, paddr: u64, buf: &[u8]) {
        for (i, b) in buf.iter().enumerate() {
            self.write_u8(paddr + i as u64, *b);
        }
    }

    fn atomic32(&self, paddr: u64) -> &AtomicU32 {
        assert!(paddr % 4 == 0);
        unsafe { &*(self.ptr(paddr) as *const AtomicU32) }
    }

    fn atomic64(&self, paddr: u64) -> &AtomicU64 {
        assert!(paddr % 8 == 0);
        let idx = ((paddr - self.base) / 8) as usize;
        &self.cells[idx]
    }

    /// Atomic read-modify-write for AMO instructions; returns the old value.
    /// `f` must be pure (it may be re-run under contention).
    pub fn amo_u32(&self, paddr: u64, f: impl Fn(u32) -> u32) -> u32 {
        let cell = self.atomic32(paddr);
        let mut cur = cell.load(Ordering::SeqCst);
        loop {
            match cell.compare_exchange_weak(cur, f(cur), Ordering::SeqCst, Ordering::SeqCst) {
                Ok(_) => return cur,
                Err(v) => cur = v,
            }
        }
    }

    pub fn amo_u64(&self, paddr: u64, f: impl Fn(u64) -> u64) -> u64 {
        let cell = self.atomic64(paddr);
        let mut cur = cell.load(Ordering::SeqCst);
        loop {
            match cell.compare_exchange_weak(cur, f(cur), Ordering::SeqCst, Ordering::SeqCst) {
                Ok(_) => return cur,
                Err(v) => cur = v,
            }
        }
    }

    /// Value-compare store-conditional used in parallel execution mode.
    pub fn cas_u32(&self, paddr: u64, expected: u32, new: u32) -> bool {
        self.atomic32(paddr)
            .compare_exchange(expected, new, Ordering::SeqCst, Ordering::SeqCst)
            .is_ok()
    }

    pub fn cas_u64(&self, paddr: u64, expected: u64, new: u64) -> bool {
        self.atomic64(paddr)
            .compare_exchange(expected, new, Ordering::SeqCst, Ordering::SeqCst)
            .is_ok()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn aligned_and_misaligned() {
        let m = GuestMemory::new(0x1000, 0x1000);
        m.write_u64(0x1000, 0x1122_3344_5566_7788);
        assert_eq!(m.read_u32(0x1000), 0x5566_7788);
        assert_eq!(m.read_u16(0x1003), 0x4455);
        m.write_u16(0x1003, 0xbeef);
        assert_eq!(m.read_u64(0x1000), 0x1122_33be_ef66_7788);
    }

    #[test]
    fn bounds() {
        let m = GuestMemory::new(0x1000, 0x1000);
        assert!(m.contains(0x1000, 8));
        assert!(m.contains(0x1ff8, 8));
        assert!(!m.contains(0x1ff9, 8));
        assert!(!m.contains(0xfff, 1));
    }
}
