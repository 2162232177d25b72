//! SBI emulation for supervisor-level guests.
//!
//! Implements the base, timer, IPI, HSM-status and system-reset extensions
//! plus the legacy console calls. EID in a7, FID in a6, arguments in a0-a5;
//! returns (error, value) in (a0, a1), or a single value for legacy calls.

pub const EID_LEGACY_SET_TIMER: u64 = 0x00;
pub const EID_LEGACY_PUTCHAR: u64 = 0x01;
pub const EID_LEGACY_GETCHAR: u64 = 0x02;
pub const EID_LEGACY_SHUTDOWN: u64 = 0x08;
pub const EID_BASE: u64 = 0x10;
pub const EID_TIME: u64 = 0x54494D45;
pub const EID_IPI: u64 = 0x735049;
pub const EID_HSM: u64 = 0x48534D;
pub const EID_SRST: u64 = 0x53525354;

pub const SBI_SUCCESS: i64 = 0;
pub const SBI_ERR_NOT_SUPPORTED: i64 = -2;
pub const SBI_ERR_INVALID_PARAM: i64 = -3;

#[derive(Debug, Clone, Copy)]
pub struct SbiRet {
    pub error: i64,
    pub value: i64,
    /// Legacy calls return a single value in a0 and leave a1 alone.
    pub legacy: bool,
}

impl SbiRet {
    fn ok(value: i64) -> Self {
        SbiRet { error: SBI_SUCCESS, value, legacy: false }
    }
    fn err(error: i64) -> Self {
        SbiRet { error, value: 0, legacy: false }
    }
    fn legacy(value: i64) -> Self {
        SbiRet { error: value, value: 0, legacy: true }
    }
}

/// Machine services the SBI layer needs.
pub trait SbiHost {
    fn console_putchar(&mut self, byte: u8);
    /// -1 when no input is available.
    fn console_getchar(&mut self) -> i64;
    /// Arm the hart's timer: deliver a supervisor timer interrupt when the
    /// timebase reaches `time_value`. Clears any pending timer interrupt.
    fn set_timer(&mut self, hartid: usize, time_value: u64);
    /// Set the supervisor software-interrupt pending bit on each hart in
    /// `mask << base`.
    fn send_ipi(&mut self, mask: u64, base: u64);
    fn shutdown(&mut self, code: i64);
    fn hart_count(&self) -> usize;
}

fn supported(eid: u64) -> bool {
    matches!(
        eid,
        EID_LEGACY_SET_TIMER
            | EID_LEGACY_PUTCHAR
            | EID_LEGACY_GETCHAR
            | EID_LEGACY_SHUTDOWN
            | EID_BASE
            | EID_TIME
            | EID_IPI
            | EID_HSM
            | EID_SRST
    )
}

pub fn handle(
    host: &mut dyn SbiHost,
    hartid: usize,
    eid: u64,
    fid: u64,
    args: [u64; 6],
) -> SbiRet {
    match eid {
        EID_LEGACY_SET_TIMER => {
            host.set_timer(hartid, args[0]);
            SbiRet::legacy(0)
        }
        EID_LEGACY_PUTCHAR => {
            host.console_putchar(args[0] as u8);
            SbiRet::legacy(0)
        }
        EID_LEGACY_GETCHAR => SbiRet::legacy(host.console_getchar()),
        EID_LEGACY_SHUTDOWN => {
            host.shutdown(0);
            SbiRet::legacy(0)
        }
        EID_BASE => match fid {
            0 => SbiRet::ok(1 << 24), // spec version 1.0
            1 => SbiRet::ok(0),       // implementation id
            2 => SbiRet::ok(0),       // implementation version
            3 => SbiRet::ok(supported(args[0]) as i64),
            4..=6 => SbiRet::ok(0),   // mvendorid/marchid/mimpid
            _ => SbiRet::err(SBI_ERR_NOT_SUPPORTED),
        },
        EID_TIME => match fid {
            0 => {
                host.set_timer(hartid, args[0]);
                SbiRet::ok(0)
            }
            _ => SbiRet::err(SBI_ERR_NOT_SUPPORTED),
        },
        EID_IPI => match fid {
            0 => {
                // hart_mask = -1 targets all harts from hart_mask_base.
                let base = args[1];
                if base != u64::MAX && base as usize >= host.hart_count() {
                    return SbiRet::err(SBI_ERR_INVALID_PARAM);
                }
                let (mask, base) =
                    if base == u64::MAX { (u64::MAX, 0) } else { (args[0], base) };
                host.send_ipi(mask, base);
                SbiRet::ok(0)
            }
            _ => SbiRet::err(SBI_ERR_NOT_SUPPORTED),
        },
        EID_HSM => match fid {
            // hart_get_status: every configured hart is STARTED (0).
            2 => {
                if (args[0] as usize) < host.hart_count() {
                    SbiRet::ok(0)
                } else {
                    SbiRet::err(SBI_ERR_INVALID_PARAM)
                }
            }
            _ => SbiRet::err(SBI_ERR_NOT_SUPPORTED),
        },
        EID_SRST => match fid {
            0 => {
                // reset_reason != 0 reports failure.
                host.shutdown(if args[1] != 0 { 1 } else { 0 });
                SbiRet::ok(0)
            }
            _ => SbiRet::err(SBI_ERR_NOT_SUPPORTED),
        },
        _ => SbiRet::err(SBI_ERR_NOT_SUPPORTED),
    }
}
