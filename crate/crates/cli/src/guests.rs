//! Bundled micro-benchmark guests, assembled at build time.
//!
//! Each builder returns a machine-target ELF image (except where noted).
//! Shared conventions: harts learn their id from a0 (machine boot) or
//! mhartid, data lives above GUEST_DATA, and runs end through the SYSCON
//! test-finisher.

use rvcycle_core::asm::{enc, reg, Assembler};
use rvcycle_core::isa::csr;
use rvcycle_core::machine::{CLINT_MSIP_BASE, RAM_BASE, SYSCON_ADDR, SYSCON_EXIT_MAGIC, SYSCON_PASS};
use rvcycle_core::{elf, sys};

pub const GUEST_DATA: u64 = RAM_BASE + 0x40_0000;

/// Exit with code 0.
fn exit_pass(a: &mut Assembler) {
    a.li64(reg::T6, SYSCON_ADDR);
    a.li64(reg::T5, SYSCON_PASS as u64);
    a.i(enc::sw(reg::T5, reg::T6, 0));
}

/// Exit with the code held in `r`.
fn exit_with(a: &mut Assembler, r: u8) {
    a.i(enc::slli(reg::T5, r, 16));
    a.li64(reg::T4, SYSCON_EXIT_MAGIC as u64);
    a.i(enc::or(reg::T5, reg::T5, reg::T4));
    a.li64(reg::T6, SYSCON_ADDR);
    a.i(enc::sw(reg::T5, reg::T6, 0));
}

/// Park a finished hart: WFI with all interrupts masked never wakes, and
/// costs nothing in lockstep (the scheduler skips waiting contexts) while a
/// parallel worker backs off instead of burning its host CPU.
fn park(a: &mut Assembler) {
    let spin = a.here();
    a.i(enc::wfi());
    a.jal(0, spin);
}

/// Integer matrix multiply across `cores` harts, rows interleaved.
///
/// Layout at GUEST_DATA: A, B, C (n*n i64 each), then control words:
/// +0 start flag, +8 done counter, +16 checksum.
pub fn matmul(n: u64, cores: u64) -> Vec<u8> {
    let a_base = GUEST_DATA;
    let b_base = a_base + n * n * 8;
    let c_base = b_base + n * n * 8;
    let ctrl = c_base + n * n * 8;

    let mut a = Assembler::new(RAM_BASE);
    let worker = a.new_label();
    a.i(enc::addi(reg::S0, reg::A0, 0)); // hart id
    a.branch(enc::bne, reg::S0, 0, worker);

    // Hart 0 initializes A and B: a[i][j] = i + 2j, b[i][j] = i ^ j (mod).
    a.li64(reg::T0, a_base);
    a.li64(reg::T1, b_base);
    a.li64(reg::T2, n * n);
    a.i(enc::addi(reg::T3, 0, 0)); // linear index
    {
        let head = a.here();
        // i = idx / n, j = idx % n computed incrementally in s2/s3.
        a.i(enc::slli(reg::T4, reg::S3, 1));
        a.i(enc::add(reg::A2, reg::S2, reg::T4)); // i + 2j
        a.i(enc::sd(reg::A2, reg::T0, 0));
        a.i(enc::xor(reg::A3, reg::S2, reg::S3));
        a.i(enc::andi(reg::A3, reg::A3, 255));
        a.i(enc::addi(reg::A3, reg::A3, 1));
        a.i(enc::sd(reg::A3, reg::T1, 0));
        a.i(enc::addi(reg::T0, reg::T0, 8));
        a.i(enc::addi(reg::T1, reg::T1, 8));
        a.i(enc::addi(reg::S3, reg::S3, 1)); // j += 1
        let no_wrap = a.new_label();
        a.li64(reg::A4, n);
        a.branch(enc::bne, reg::S3, reg::A4, no_wrap);
        a.i(enc::addi(reg::S3, 0, 0));
        a.i(enc::addi(reg::S2, reg::S2, 1)); // i += 1
        a.bind(no_wrap);
        a.i(enc::addi(reg::T3, reg::T3, 1));
        a.branch(enc::bne, reg::T3, reg::T2, head);
    }
    // Release the start flag.
    a.li64(reg::T0, ctrl);
    a.i(enc::addi(reg::T1, 0, 1));
    a.i(enc::amoswap_d(0, reg::T0, reg::T1));

    a.bind(worker);
    // Wait for start.
    a.li64(reg::T0, ctrl);
    {
        let wait = a.here();
        a.i(enc::ld(reg::T1, reg::T0, 0));
        a.branch(enc::beq, reg::T1, reg::ZERO, wait);
    }
    // for (i = hart; i < n; i += cores) for (j) for (k)
    a.li64(reg::S1, n);
    a.i(enc::addi(reg::S2, reg::S0, 0)); // i
    let row_loop = a.new_label();
    let rows_done = a.new_label();
    a.bind(row_loop);
    a.branch(enc::bge, reg::S2, reg::S1, rows_done);
    a.i(enc::addi(reg::S3, 0, 0)); // j
    {
        let col_loop = a.here();
        // acc in a2; a_ptr = A + i*n*8; b_ptr = B + j*8
        a.i(enc::addi(reg::A2, 0, 0));
        a.i(enc::mul(reg::T0, reg::S2, reg::S1));
        a.i(enc::slli(reg::T0, reg::T0, 3));
        a.li64(reg::T1, a_base);
        a.i(enc::add(reg::T0, reg::T0, reg::T1)); // a_ptr
        a.i(enc::slli(reg::T2, reg::S3, 3));
        a.li64(reg::T1, b_base);
        a.i(enc::add(reg::T2, reg::T2, reg::T1)); // b_ptr
        a.i(enc::slli(reg::A5, reg::S1, 3)); // row stride
        a.i(enc::addi(reg::T3, 0, 0)); // k
        {
            let k_loop = a.here();
            a.i(enc::ld(reg::A3, reg::T0, 0));
            a.i(enc::ld(reg::A4, reg::T2, 0));
            a.i(enc::mul(reg::A3, reg::A3, reg::A4));
            a.i(enc::add(reg::A2, reg::A2, reg::A3));
            a.i(enc::addi(reg::T0, reg::T0, 8));
            a.i(enc::add(reg::T2, reg::T2, reg::A5));
            a.i(enc::addi(reg::T3, reg::T3, 1));
            a.branch(enc::bne, reg::T3, reg::S1, k_loop);
        }
        // C[i][j] = acc
        a.i(enc::mul(reg::T0, reg::S2, reg::S1));
        a.i(enc::add(reg::T0, reg::T0, reg::S3));
        a.i(enc::slli(reg::T0, reg::T0, 3));
        a.li64(reg::T1, c_base);
        a.i(enc::add(reg::T0, reg::T0, reg::T1));
        a.i(enc::sd(reg::A2, reg::T0, 0));
        a.i(enc::addi(reg::S3, reg::S3, 1));
        a.branch(enc::bne, reg::S3, reg::S1, col_loop);
    }
    a.li64(reg::T0, cores);
    a.i(enc::add(reg::S2, reg::S2, reg::T0));
    a.jal(0, row_loop);
    a.bind(rows_done);

    // Signal completion.
    a.li64(reg::T0, ctrl + 8);
    a.i(enc::addi(reg::T1, 0, 1));
    a.i(enc::amoadd_d(0, reg::T0, reg::T1));
    let follower = a.new_label();
    a.branch(enc::bne, reg::S0, 0, follower);
    // Hart 0: wait for all, checksum C, store it, exit.
    {
        let wait = a.here();
        a.i(enc::ld(reg::T1, reg::T0, 0));
        a.li64(reg::T2, cores);
        a.branch(enc::bne, reg::T1, reg::T2, wait);
    }
    a.li64(reg::T0, c_base);
    a.li64(reg::T1, n * n);
    a.i(enc::addi(reg::A2, 0, 0));
    {
        let head = a.here();
        a.i(enc::ld(reg::T3, reg::T0, 0));
        a.i(enc::add(reg::A2, reg::A2, reg::T3));
        a.i(enc::addi(reg::T0, reg::T0, 8));
        a.i(enc::addi(reg::T1, reg::T1, -1));
        a.branch(enc::bne, reg::T1, 0, head);
    }
    a.li64(reg::T0, ctrl + 16);
    a.i(enc::sd(reg::A2, reg::T0, 0));
    exit_pass(&mut a);
    a.bind(follower);
    park(&mut a);

    let (base, bytes) = a.finish();
    elf::write(base, base, &bytes)
}

/// Control-word address of the matmul guest (start, done, checksum).
pub fn matmul_ctrl(n: u64) -> u64 {
    GUEST_DATA + 3 * n * n * 8
}

/// Pointer-chase memory-latency probe: a sequential ring of one pointer per
/// 64-byte line over `set_bytes`, chased `laps` times. The ring is built
/// under the boot models, then the guest switches to `simctrl_value` for
/// the region of interest (statistics reset at the switch).
pub fn memlat(set_bytes: u64, laps: u64, simctrl_value: u64) -> Vec<u8> {
    let nodes = set_bytes / 64;
    let ring = GUEST_DATA;
    let mut a = Assembler::new(RAM_BASE);
    // Build: node i -> node i+1, last -> first.
    a.li64(reg::T0, ring);
    a.li64(reg::T1, nodes - 1);
    {
        let head = a.here();
        a.i(enc::addi(reg::T2, reg::T0, 64));
        a.i(enc::sd(reg::T2, reg::T0, 0));
        a.i(enc::addi(reg::T0, reg::T0, 64));
        a.i(enc::addi(reg::T1, reg::T1, -1));
        a.branch(enc::bne, reg::T1, 0, head);
    }
    a.li64(reg::T2, ring);
    a.i(enc::sd(reg::T2, reg::T0, 0));
    // Region of interest.
    a.li64(reg::T0, simctrl_value);
    a.i(enc::csrrw(0, csr::SIMCTRL, reg::T0));
    a.li64(reg::S1, laps * nodes);
    a.li64(reg::A0, ring);
    {
        let chase = a.here();
        a.i(enc::ld(reg::A0, reg::A0, 0));
        a.i(enc::addi(reg::S1, reg::S1, -1));
        a.branch(enc::bne, reg::S1, 0, chase);
    }
    exit_pass(&mut a);
    let (base, bytes) = a.finish();
    elf::write(base, base, &bytes)
}

/// Spin-lock contention: every hart takes a shared spinlock `iters` times,
/// bumping a shared counter and its own acquisition count.
///
/// Layout at GUEST_DATA: +0 lock, +64 shared counter, +128 done counter,
/// +192.. per-hart acquisition counts (one 64-bit word each).
pub fn spinlock(iters: u64, cores: u64) -> Vec<u8> {
    let lock = GUEST_DATA;
    let counter = lock + 64;
    let done = lock + 128;
    let counts = lock + 192;
    let mut a = Assembler::new(RAM_BASE);
    a.i(enc::addi(reg::S0, reg::A0, 0));
    a.li64(reg::S1, lock);
    a.li64(reg::S2, counter);
    a.li64(reg::S3, done);
    a.li64(reg::S4, counts);
    a.i(enc::slli(reg::T0, reg::S0, 3));
    a.i(enc::add(reg::S4, reg::S4, reg::T0)); // my count slot
    a.li64(reg::T6, iters);
    let outer = a.here();
    {
        // Test-and-test-and-set acquire.
        let try_lock = a.here();
        let spin_read = a.new_label();
        a.i(enc::addi(reg::T1, 0, 1));
        a.i(enc::amoswap_w(reg::T2, reg::S1, reg::T1));
        let got = a.new_label();
        a.branch(enc::beq, reg::T2, reg::ZERO, got);
        a.bind(spin_read);
        a.i(enc::lw(reg::T2, reg::S1, 0));
        a.branch(enc::bne, reg::T2, reg::ZERO, spin_read);
        a.jal(0, try_lock);
        a.bind(got);
    }
    // Critical section: plain read-modify-write of the shared counter.
    a.i(enc::ld(reg::T3, reg::S2, 0));
    a.i(enc::addi(reg::T3, reg::T3, 1));
    a.i(enc::sd(reg::T3, reg::S2, 0));
    // My acquisition count.
    a.i(enc::ld(reg::T3, reg::S4, 0));
    a.i(enc::addi(reg::T3, reg::T3, 1));
    a.i(enc::sd(reg::T3, reg::S4, 0));
    // Release.
    a.i(enc::amoswap_w(0, reg::S1, 0));
    a.i(enc::addi(reg::T6, reg::T6, -1));
    a.branch(enc::bne, reg::T6, 0, outer);
    // Done barrier; hart 0 exits when everyone finished.
    a.i(enc::addi(reg::T1, 0, 1));
    a.i(enc::amoadd_d(0, reg::S3, reg::T1));
    let follower = a.new_label();
    a.branch(enc::bne, reg::S0, 0, follower);
    {
        let wait = a.here();
        a.i(enc::ld(reg::T1, reg::S3, 0));
        a.li64(reg::T2, cores);
        a.branch(enc::bne, reg::T1, reg::T2, wait);
    }
    exit_pass(&mut a);
    a.bind(follower);
    park(&mut a);
    let (base, bytes) = a.finish();
    elf::write(base, base, &bytes)
}

/// IPI ping-pong over SBI (supervisor target, 2 harts): hart 0 pings from
/// its foreground loop `rounds` times and waits for the pong each time;
/// hart 1's handler replies. Hart 0's handler only counts, so no reply
/// storm can starve the foreground loops. Exit code = pongs received.
pub fn ipi_pingpong(rounds: u64) -> Vec<u8> {
    let mut a = Assembler::new(RAM_BASE);
    let hart1 = a.new_label();
    let handler = a.new_label();
    let reply = a.new_label();
    let done = a.new_label();

    // Common setup: stvec, SSIE, SIE; a0 is the hart id at boot.
    a.i(enc::addi(reg::S0, reg::A0, 0));
    a.la(reg::T0, handler);
    a.i(enc::csrrw(0, csr::STVEC, reg::T0));
    a.li64(reg::T0, 1 << 1);
    a.i(enc::csrrs(0, csr::SIE, reg::T0));
    a.i(enc::csrrs(0, csr::SSTATUS, reg::T0));
    a.i(enc::addi(reg::S2, 0, 0)); // pongs seen
    a.i(enc::addi(reg::S4, 0, 0)); // pings sent
    a.branch(enc::bne, reg::S0, 0, hart1);

    // Hart 0 foreground: one outstanding ping at a time. The check-and-wait
    // window runs with SIE masked so a pong landing mid-window stays
    // pending (WFI wakes on pending interrupts regardless of SIE), closing
    // the classic lost-wakeup race.
    a.li64(reg::S3, rounds);
    {
        let round = a.here();
        let do_send = a.new_label();
        let unmask = a.new_label();
        a.li64(reg::T0, 1 << 1);
        a.i(enc::csrrc(0, csr::SSTATUS, reg::T0));
        a.branch(enc::bge, reg::S2, reg::S3, done);
        a.branch(enc::beq, reg::S4, reg::S2, do_send);
        a.i(enc::wfi());
        a.jal(0, unmask);
        a.bind(do_send);
        send_ipi(&mut a, 1);
        a.i(enc::addi(reg::S4, reg::S4, 1));
        a.bind(unmask);
        a.li64(reg::T0, 1 << 1);
        a.i(enc::csrrs(0, csr::SSTATUS, reg::T0));
        a.jal(0, round);
    }
    a.bind(done);
    exit_with(&mut a, reg::S2);

    // Hart 1 foreground: sleep; the handler does the replying.
    a.bind(hart1);
    {
        let loop1 = a.here();
        a.i(enc::wfi());
        a.jal(0, loop1);
    }

    // Shared interrupt handler: clear SSIP; hart 1 replies, hart 0 counts.
    a.bind(handler);
    a.li64(reg::T0, 1 << 1);
    a.i(enc::csrrc(0, csr::SIP, reg::T0));
    a.branch(enc::bne, reg::S0, 0, reply);
    a.i(enc::addi(reg::S2, reg::S2, 1));
    a.i(enc::sret());
    a.bind(reply);
    a.i(enc::addi(reg::A0, 0, 1)); // mask = hart 0
    a.i(enc::addi(reg::A1, 0, 0));
    a.li64(reg::A7, sys::sbi::EID_IPI);
    a.i(enc::addi(reg::A6, 0, 0));
    a.i(enc::ecall());
    a.i(enc::sret());

    let (base, bytes) = a.finish();
    elf::write(base, base, &bytes)
}

fn send_ipi(a: &mut Assembler, hart: u64) {
    a.i(enc::addi(reg::A0, 0, 1 << hart));
    a.i(enc::addi(reg::A1, 0, 0));
    a.li64(reg::A7, sys::sbi::EID_IPI);
    a.i(enc::addi(reg::A6, 0, 0));
    a.i(enc::ecall());
}

/// Cross-page stub exercise via a true Sv39 remap.
///
/// M-mode builds an identity gigapage table plus a virtual code window
/// whose second page initially maps to a frame ending in `addi a0,a0,1`;
/// S-mode calls the straddling routine, remaps the window's second page to
/// a frame holding `addi a0,a0,2`, issues a targeted SFENCE.VMA, and calls
/// again. Exit code = a0 after both calls (expect 3).
pub fn selfremap() -> Vec<u8> {
    // Virtual window at 1 GiB; physical frames inside RAM.
    let win = 0x4000_0000u64;
    let frame_a = RAM_BASE + 0x20_0000; // window page 0 backing
    let frame_b = RAM_BASE + 0x20_1000; // second page, variant 1
    let frame_c = RAM_BASE + 0x20_2000; // second page, variant 2
    let root = RAM_BASE + 0x10_0000;
    let l1 = root + 0x1000;
    let l0t = root + 0x2000;

    let mut a = Assembler::new(RAM_BASE);
    let smode = a.new_label();

    // Build page tables: identity 1 GiB gigapage for RAM (vpn2 of 0x8000_0000),
    // and win -> {frame_a, frame_b} via 4K pages. Also identity-map the
    // SYSCON device page.
    let vpn2_ram = (RAM_BASE >> 30) & 0x1ff;
    a.li64(reg::T0, root + vpn2_ram * 8);
    a.li64(reg::T1, (RAM_BASE >> 12) << 10 | 0xef); // leaf RWX+AD, global-ish
    a.i(enc::sd(reg::T1, reg::T0, 0));
    // SYSCON gigapage (vpn2 = 0): identity leaf, RW.
    a.li64(reg::T0, root);
    a.li64(reg::T1, 0 << 10 | 0xc7); // V|R|W|A|D
    a.i(enc::sd(reg::T1, reg::T0, 0));
    // win's vpn2 (1 GiB): pointer to l1.
    let vpn2_win = (win >> 30) & 0x1ff;
    a.li64(reg::T0, root + vpn2_win * 8);
    a.li64(reg::T1, (l1 >> 12) << 10 | 1);
    a.i(enc::sd(reg::T1, reg::T0, 0));
    // l1[0] -> l0 table.
    a.li64(reg::T0, l1);
    a.li64(reg::T1, (l0t >> 12) << 10 | 1);
    a.i(enc::sd(reg::T1, reg::T0, 0));
    // l0[0] = frame_a (X), l0[1] = frame_b (X).
    a.li64(reg::T0, l0t);
    a.li64(reg::T1, (frame_a >> 12) << 10 | 0xcb); // V|R|X|A|D
    a.i(enc::sd(reg::T1, reg::T0, 0));
    a.li64(reg::T1, (frame_b >> 12) << 10 | 0xcb);
    a.i(enc::sd(reg::T1, reg::T0, 8));

    // Write the straddling routine into the frames:
    // frame_a ends (at offset 0xffe) with the low parcel of `addi a0,a0,N`;
    // the second page's frame holds the high parcel + `jalr x0, ra`.
    let addi1 = enc::addi(reg::A0, reg::A0, 1);
    let addi2 = enc::addi(reg::A0, reg::A0, 2);
    let ret = enc::jalr(0, reg::RA, 0);
    a.li64(reg::T0, frame_a + 0xffe);
    a.li64(reg::T1, (addi1 & 0xffff) as u64);
    a.i(enc::sh(reg::T1, reg::T0, 0));
    a.li64(reg::T0, frame_b);
    a.li64(reg::T1, (addi1 >> 16) as u64);
    a.i(enc::sh(reg::T1, reg::T0, 0));
    a.li64(reg::T1, ret as u64);
    a.i(enc::sw(reg::T1, reg::T0, 2));
    a.li64(reg::T0, frame_c);
    a.li64(reg::T1, (addi2 >> 16) as u64);
    a.i(enc::sh(reg::T1, reg::T0, 0));
    a.li64(reg::T1, ret as u64);
    a.i(enc::sw(reg::T1, reg::T0, 2));

    // Enter S-mode at `smode` with satp enabled.
    a.li64(reg::T0, 8 << 60 | (root >> 12));
    a.i(enc::csrrw(0, csr::SATP, reg::T0));
    a.la(reg::T0, smode);
    a.i(enc::csrrw(0, csr::MEPC, reg::T0));
    // mstatus.MPP = S
    a.li64(reg::T0, 1 << 11);
    a.i(enc::csrrs(0, csr::MSTATUS, reg::T0));
    a.i(enc::mret());

    a.bind(smode);
    a.i(enc::addi(reg::A0, 0, 0));
    // First call: runs addi a0,a0,1.
    a.li64(reg::S1, win + 0xffe);
    a.i(enc::jalr(reg::RA, reg::S1, 0));
    // Remap the window's second page to frame_c.
    a.li64(reg::T0, l0t);
    a.li64(reg::T1, (frame_c >> 12) << 10 | 0xcb);
    a.i(enc::sd(reg::T1, reg::T0, 8));
    // Targeted fence on the second page only: the straddling block
    // (starting on page 0 of the window) survives; its guard re-read
    // catches the new bytes.
    a.li64(reg::T2, win + 0x1000);
    a.i(enc::sfence_vma(reg::T2, 0));
    // Second call: must observe addi a0,a0,2.
    a.i(enc::jalr(reg::RA, reg::S1, 0));
    exit_with(&mut a, reg::A0);

    let (base, bytes) = a.finish();
    elf::write(base, base, &bytes)
}

/// Known-layout block for instruction-cache access counting: a line-aligned
/// straight-line body of `body_insns` 4-byte instructions executed `laps`
/// times.
pub fn icount(body_insns: u64, laps: u64) -> Vec<u8> {
    let mut a = Assembler::new(RAM_BASE);
    a.li64(reg::T0, laps);
    a.align(64);
    let head = a.here();
    for _ in 0..body_insns {
        a.i(enc::addi(reg::A0, reg::A0, 1));
    }
    a.i(enc::addi(reg::T0, reg::T0, -1));
    a.branch(enc::bne, reg::T0, 0, head);
    exit_pass(&mut a);
    let (base, bytes) = a.finish();
    elf::write(base, base, &bytes)
}

/// Fast-forward / region-of-interest reconfiguration guest.
///
/// Hart 0 fills an array (the "preparation phase") while the other harts
/// park in WFI, then writes SIMCTRL = `roi_simctrl` (global rendezvous)
/// and releases the others through their CLINT MSIP registers. Parking in
/// WFI pins every follower to one architectural position no matter when
/// the fast-forward phase is interrupted, so the region of interest starts
/// from an exactly reproducible state even after a parallel phase.
/// Layout: GUEST_DATA: +64 lock, +128 counter, +192 done, +256.. per-hart
/// counts, +0x1000.. the array.
pub fn reconfig(array_words: u64, iters: u64, cores: u64, roi_simctrl: u64) -> Vec<u8> {
    let go = GUEST_DATA;
    let boot_done = go;
    let lock = go + 64;
    let counter = go + 128;
    let done = go + 192;
    let counts = go + 256;
    let array = go + 0x1000;

    let mut a = Assembler::new(RAM_BASE);
    let follower = a.new_label();
    let roi = a.new_label();
    a.i(enc::addi(reg::S0, reg::A0, 0));
    a.branch(enc::bne, reg::S0, 0, follower);
    // Hart 0: wait until every follower has signaled and parked. The
    // signal and the WFI sit in one basic block, so once the signal is
    // visible the follower can only be observed parked.
    a.li64(reg::T0, boot_done);
    {
        let wait = a.here();
        a.i(enc::ld(reg::T1, reg::T0, 0));
        a.li64(reg::T2, cores - 1);
        a.branch(enc::bne, reg::T1, reg::T2, wait);
    }
    // Preparation work.
    a.li64(reg::T0, array);
    a.li64(reg::T1, array_words);
    a.i(enc::addi(reg::T2, 0, 0));
    {
        let head = a.here();
        a.i(enc::mul(reg::T3, reg::T2, reg::T2));
        a.i(enc::sd(reg::T3, reg::T0, 0));
        a.i(enc::addi(reg::T0, reg::T0, 8));
        a.i(enc::addi(reg::T2, reg::T2, 1));
        a.branch(enc::bne, reg::T2, reg::T1, head);
    }
    // Switch to the region-of-interest models (global rendezvous; the
    // parked followers are already quiescent).
    a.li64(reg::T0, roi_simctrl);
    a.i(enc::csrrw(0, csr::SIMCTRL, reg::T0));
    // Wake the followers one by one via their MSIP registers.
    for h in 1..cores {
        a.li64(reg::T0, CLINT_MSIP_BASE + 4 * h);
        a.i(enc::addi(reg::T1, 0, 1));
        a.i(enc::sw(reg::T1, reg::T0, 0));
    }
    a.jal(0, roi);
    a.bind(follower);
    // Enable the machine software interrupt as a wake source, then signal
    // and park in the same basic block.
    a.i(enc::addi(reg::T0, 0, 8));
    a.i(enc::csrrs(0, csr::MIE, reg::T0));
    a.li64(reg::T0, boot_done);
    a.i(enc::addi(reg::T1, 0, 1));
    {
        let idle = a.new_label();
        a.i(enc::amoadd_d(0, reg::T0, reg::T1)); // signal: same block as wfi
        a.bind(idle);
        a.i(enc::wfi());
        a.i(enc::csrrs(reg::T1, csr::MIP, 0));
        a.i(enc::andi(reg::T1, reg::T1, 8));
        a.branch(enc::beq, reg::T1, reg::ZERO, idle);
    }
    // Acknowledge: clear our MSIP, then enter the measured region.
    a.li64(reg::T0, CLINT_MSIP_BASE);
    a.i(enc::slli(reg::T1, reg::S0, 2));
    a.i(enc::add(reg::T0, reg::T0, reg::T1));
    a.i(enc::sw(reg::ZERO, reg::T0, 0));
    a.bind(roi);
    // Region of interest: contended spinlock increments.
    a.li64(reg::S1, lock);
    a.li64(reg::S2, counter);
    a.li64(reg::S3, done);
    a.li64(reg::S4, counts);
    a.i(enc::slli(reg::T0, reg::S0, 3));
    a.i(enc::add(reg::S4, reg::S4, reg::T0));
    a.li64(reg::T6, iters);
    let outer = a.here();
    {
        let try_lock = a.here();
        let spin_read = a.new_label();
        let got = a.new_label();
        a.i(enc::addi(reg::T1, 0, 1));
        a.i(enc::amoswap_w(reg::T2, reg::S1, reg::T1));
        a.branch(enc::beq, reg::T2, reg::ZERO, got);
        a.bind(spin_read);
        a.i(enc::lw(reg::T2, reg::S1, 0));
        a.branch(enc::bne, reg::T2, reg::ZERO, spin_read);
        a.jal(0, try_lock);
        a.bind(got);
    }
    a.i(enc::ld(reg::T3, reg::S2, 0));
    a.i(enc::addi(reg::T3, reg::T3, 1));
    a.i(enc::sd(reg::T3, reg::S2, 0));
    a.i(enc::ld(reg::T3, reg::S4, 0));
    a.i(enc::addi(reg::T3, reg::T3, 1));
    a.i(enc::sd(reg::T3, reg::S4, 0));
    a.i(enc::amoswap_w(0, reg::S1, 0));
    a.i(enc::addi(reg::T6, reg::T6, -1));
    a.branch(enc::bne, reg::T6, 0, outer);
    a.i(enc::addi(reg::T1, 0, 1));
    a.i(enc::amoadd_d(0, reg::S3, reg::T1));
    let parked = a.new_label();
    a.branch(enc::bne, reg::S0, 0, parked);
    {
        let wait = a.here();
        a.i(enc::ld(reg::T1, reg::S3, 0));
        a.li64(reg::T2, cores);
        a.branch(enc::bne, reg::T1, reg::T2, wait);
    }
    exit_pass(&mut a);
    a.bind(parked);
    park(&mut a);
    let (base, bytes) = a.finish();
    elf::write(base, base, &bytes)
}

/// Hazard micro-kernels used by pipeline validation; a plain wrapper that
/// runs `body` once between a fixed prologue and the exit sequence.
pub fn kernel(body: impl FnOnce(&mut Assembler)) -> Vec<u8> {
    let mut a = Assembler::new(RAM_BASE);
    body(&mut a);
    exit_pass(&mut a);
    let (base, bytes) = a.finish();
    elf::write(base, base, &bytes)
}

/// Every bundled guest with its default parameters, for `gen-guests`.
pub fn all_guests() -> Vec<(&'static str, Vec<u8>)> {
    use rvcycle_core::sys::simctrl;
    use rvcycle_core::config::{ExecMode, MemoryModelKind, PipelineKind};
    let roi = simctrl::compose(
        PipelineKind::InOrder,
        MemoryModelKind::Mesi,
        64,
        ExecMode::Lockstep,
        false,
    );
    let cache_roi = simctrl::compose(
        PipelineKind::Simple,
        MemoryModelKind::Cache,
        64,
        ExecMode::Lockstep,
        false,
    );
    vec![
        ("matmul.elf", matmul(64, 4)),
        ("memlat.elf", memlat(16 * 1024, 64, cache_roi)),
        ("spinlock.elf", spinlock(2000, 4)),
        ("ipi-pingpong.elf", ipi_pingpong(64)),
        ("selfremap.elf", selfremap()),
        ("icount.elf", icount(32, 100)),
        ("reconfig.elf", reconfig(4096, 500, 4, roi)),
    ]
}
