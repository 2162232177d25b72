//! Sv39 page-table walker.

use super::guest::GuestMemory;

pub const SATP_MODE_BARE: u64 = 0;
pub const SATP_MODE_SV39: u64 = 8;

pub const PTE_V: u64 = 1 << 0;
pub const PTE_R: u64 = 1 << 1;
pub const PTE_W: u64 = 1 << 2;
pub const PTE_X: u64 = 1 << 3;
pub const PTE_U: u64 = 1 << 4;
pub const PTE_G: u64 = 1 << 5;
pub const PTE_A: u64 = 1 << 6;
pub const PTE_D: u64 = 1 << 7;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AccessKind {
    Fetch,
    Load,
    Store,
}

/// Page permissions as seen by the access checker. `pbits` are the raw
/// R/W/X/U/A/D bits of the leaf PTE.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Translation {
    /// Physical page base for the 4 KiB page containing the address.
    pub ppage: u64,
    pub pbits: u64,
    /// log2 of the mapped page size (12, 21 or 30).
    pub page_log2: u32,
    /// Page-table levels traversed (1..=3); 0 for bare mode.
    pub levels: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WalkError {
    PageFault,
    /// The walk itself touched a physical address outside RAM.
    AccessFault,
}

pub fn satp_mode(satp: u64) -> u64 {
    satp >> 60
}

pub fn satp_asid(satp: u64) -> u16 {
    ((satp >> 44) & 0xffff) as u16
}

/// Check whether `pbits` permit `kind` from privilege `mode`
/// (0=U, 1=S, 3=M), honoring SUM and MXR.
pub fn perm_ok(pbits: u64, kind: AccessKind, mode: u8, sum: bool, mxr: bool) -> bool {
    let user_page = pbits & PTE_U != 0;
    match mode {
        0 => {
            if !user_page {
                return false;
            }
        }
        _ => {
            // Supervisor touching a user page: data only, and only with SUM.
            if user_page && (kind == AccessKind::Fetch || !sum) {
                return false;
            }
        }
    }
    match kind {
        AccessKind::Fetch => pbits & PTE_X != 0,
        AccessKind::Load => pbits & PTE_R != 0 || (mxr && pbits & PTE_X != 0),
        AccessKind::Store => pbits & PTE_W != 0,
    }
}

/// Walk the Sv39 page table rooted at `satp` for `vaddr`.
///
/// Hardware-managed A/D updating: the leaf's A bit (and D on stores) is set
/// in memory during the walk, matching common hardware. Permission checks
/// are the caller's job (`perm_ok`), so a walk result can be cached in the
/// TLB and re-checked per access.
pub fn walk(
    mem: &GuestMemory,
    satp: u64,
    vaddr: u64,
    kind: AccessKind,
) -> Result<Translation, WalkError> {
    if satp_mode(satp) != SATP_MODE_SV39 {
        // Bare: identity mapping. The access paths skip permission checks
        // when translation is off; these bits are informational.
        let pbits = PTE_V | PTE_R | PTE_W | PTE_X | PTE_A | PTE_D;
        return Ok(Translation { ppage: vaddr & !0xfff, pbits, page_log2: 12, levels: 0 });
    }
    // Sv39 virtual addresses must be canonical (bits 63:39 = bit 38).
    if (vaddr as i64) << 25 >> 25 != vaddr as i64 {
        return Err(WalkError::PageFault);
    }
    let mut table = (satp & 0xfff_ffff_ffff) << 12;
    for level in (0..3).rev() {
        let vpn = (vaddr >> (12 + 9 * level)) & 0x1ff;
        let pte_addr = table + vpn * 8;
        if !mem.contains(pte_addr, 8) {
            return Err(WalkError::AccessFault);
        }
        let pte = mem.read_u64(pte_addr);
        if pte & PTE_V == 0 || (pte & PTE_W != 0 && pte & PTE_R == 0) {
            return Err(WalkError::PageFault);
        }
        if pte & (PTE_R | PTE_X) == 0 {
            // Pointer to the next level.
            if level == 0 {
                return Err(WalkError::PageFault);
            }
            table = (pte >> 10 & 0xfff_ffff_ffff) << 12;
            continue;
        }
        // Leaf.
        let ppn = pte >> 10 & 0xfff_ffff_ffff;
        if level > 0 && ppn & ((1 << (9 * level)) - 1) != 0 {
            // Misaligned superpage.
            return Err(WalkError::PageFault);
        }
        let mut new_pte = pte | PTE_A;
        if kind == AccessKind::Store {
            new_pte |= PTE_D;
        }
        if new_pte != pte {
            mem.write_u64(pte_addr, new_pte);
        }
        let page_log2 = 12 + 9 * level as u32;
        let vpn_low = (vaddr >> 12) & ((1 << (9 * level)) - 1);
        return Ok(Translation {
            ppage: (ppn | vpn_low) << 12,
            pbits: new_pte & 0xff,
            page_log2,
            levels: 3 - level as u32,
        });
    }
    unreachable!()
}
