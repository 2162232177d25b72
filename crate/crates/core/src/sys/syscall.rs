//! Linux syscall emulation for user-level guests: the minimal set needed by
//! statically linked benchmarks. Unimplemented syscalls return ENOSYS and
//! are logged once per number.

use log::warn;
use std::collections::HashSet;
use std::sync::Mutex;

pub const SYS_GETCWD: u64 = 17;
pub const SYS_READ: u64 = 63;
pub const SYS_WRITE: u64 = 64;
pub const SYS_FSTAT: u64 = 80;
pub const SYS_EXIT: u64 = 93;
pub const SYS_EXIT_GROUP: u64 = 94;
pub const SYS_SET_TID_ADDRESS: u64 = 96;
pub const SYS_FUTEX: u64 = 98;
pub const SYS_SET_ROBUST_LIST: u64 = 99;
pub const SYS_CLOCK_GETTIME: u64 = 113;
pub const SYS_GETPID: u64 = 172;
pub const SYS_GETTID: u64 = 178;
pub const SYS_BRK: u64 = 214;
pub const SYS_MUNMAP: u64 = 215;
pub const SYS_CLONE: u64 = 220;
pub const SYS_MMAP: u64 = 222;

pub const ENOMEM: i64 = 12;
pub const EAGAIN: i64 = 11;
pub const EBADF: i64 = 9;
pub const EFAULT: i64 = 14;
pub const EINVAL: i64 = 22;
pub const ENOSYS: i64 = 38;

const FUTEX_WAIT: u64 = 0;
const FUTEX_WAKE: u64 = 1;
const MAP_ANONYMOUS: u64 = 0x20;

#[derive(Debug, PartialEq, Eq)]
pub enum SyscallOutcome {
    Ret(u64),
    /// exit_group: terminate the whole simulation.
    Exit(i32),
    /// exit: terminate the calling thread only.
    ExitThread(i32),
    /// FUTEX_WAIT matched: park the core until woken.
    Block,
}

#[derive(Debug, PartialEq, Eq)]
pub enum FutexWait {
    Block,
    Mismatch,
    BadAddress,
}

/// Machine services the syscall layer needs.
pub trait SyscallHost {
    fn read_guest(&mut self, vaddr: u64, len: usize) -> Option<Vec<u8>>;
    fn write_guest(&mut self, vaddr: u64, data: &[u8]) -> bool;
    /// Write to a file descriptor; returns bytes written or -errno.
    fn write_fd(&mut self, fd: u64, data: &[u8]) -> i64;
    /// Read from a file descriptor; None means EOF/no input.
    fn read_fd(&mut self, fd: u64, len: usize) -> Option<Vec<u8>>;
    /// Move the program break; returns the (possibly unchanged) break.
    fn brk(&mut self, new: u64) -> u64;
    fn mmap_anon(&mut self, len: u64) -> Option<u64>;
    /// Simulated nanoseconds derived from the cycle clock.
    fn nanos(&self) -> u64;
    fn pid(&self) -> u64;
    fn tid(&self) -> u64;
    /// Start a guest thread on a free simulated core; returns its tid.
    fn clone_thread(&mut self, sp: u64, tls: u64, ctid: u64) -> Result<u64, i64>;
    fn futex_wait(&mut self, addr: u64, expected: u32) -> FutexWait;
    /// Wake up to n waiters; returns the number woken.
    fn futex_wake(&mut self, addr: u64, n: u64) -> u64;
}

fn ret_err(errno: i64) -> SyscallOutcome {
    SyscallOutcome::Ret((-errno) as u64)
}

static UNKNOWN_LOGGED: Mutex<Option<HashSet<u64>>> = Mutex::new(None);

fn log_unknown_once(num: u64) {
    let mut guard = UNKNOWN_LOGGED.lock().unwrap();
    let set = guard.get_or_insert_with(HashSet::new);
    if set.insert(num) {
        warn!("unimplemented syscall {num}, returning ENOSYS");
    }
}

pub fn dispatch(host: &mut dyn SyscallHost, num: u64, args: [u64; 6]) -> SyscallOutcome {
    match num {
        SYS_EXIT => SyscallOutcome::ExitThread(args[0] as i32),
        SYS_EXIT_GROUP => SyscallOutcome::Exit(args[0] as i32),
        SYS_WRITE => {
            let (fd, buf, len) = (args[0], args[1], args[2] as usize);
            match host.read_guest(buf, len) {
                Some(data) => SyscallOutcome::Ret(host.write_fd(fd, &data) as u64),
                None => ret_err(EFAULT),
            }
        }
        SYS_READ => {
            let (fd, buf, len) = (args[0], args[1], args[2] as usize);
            match host.read_fd(fd, len) {
                Some(data) => {
                    if host.write_guest(buf, &data) {
                        SyscallOutcome::Ret(data.len() as u64)
                    } else {
                        ret_err(EFAULT)
                    }
                }
                None => SyscallOutcome::Ret(0),
            }
        }
        SYS_FSTAT => {
            // A zeroed struct stat with st_mode = character device keeps
            // stdio probes happy.
            let mut stat = [0u8; 128];
            stat[16..20].copy_from_slice(&0x2190u32.to_le_bytes()); // st_mode
            if host.write_guest(args[1], &stat) {
                SyscallOutcome::Ret(0)
            } else {
                ret_err(EFAULT)
            }
        }
        SYS_BRK => SyscallOutcome::Ret(host.brk(args[0])),
        SYS_MMAP => {
            let (len, flags) = (args[1], args[3]);
            if flags & MAP_ANONYMOUS == 0 {
                return ret_err(ENOSYS);
            }
            match host.mmap_anon(len) {
                Some(addr) => SyscallOutcome::Ret(addr),
                None => ret_err(ENOMEM),
            }
        }
        SYS_MUNMAP => SyscallOutcome::Ret(0),
        SYS_CLOCK_GETTIME => {
            let ns = host.nanos();
            let mut ts = [0u8; 16];
            ts[0..8].copy_from_slice(&(ns / 1_000_000_000).to_le_bytes());
            ts[8..16].copy_from_slice(&(ns % 1_000_000_000).to_le_bytes());
            if host.write_guest(args[1], &ts) {
                SyscallOutcome::Ret(0)
            } else {
                ret_err(EFAULT)
            }
        }
        SYS_GETPID => SyscallOutcome::Ret(host.pid()),
        SYS_GETTID => SyscallOutcome::Ret(host.tid()),
        SYS_SET_TID_ADDRESS => SyscallOutcome::Ret(host.tid()),
        SYS_SET_ROBUST_LIST => SyscallOutcome::Ret(0),
        SYS_GETCWD => {
            if host.write_guest(args[0], b"/\0") {
                SyscallOutcome::Ret(args[0])
            } else {
                ret_err(EFAULT)
            }
        }
        SYS_CLONE => {
            // riscv64: clone(flags, child_stack, ptid, tls, ctid).
            let (sp, tls, ctid) = (args[1], args[3], args[4]);
            match host.clone_thread(sp, tls, ctid) {
                Ok(tid) => SyscallOutcome::Ret(tid),
                Err(errno) => ret_err(errno),
            }
        }
        SYS_FUTEX => {
            let (addr, op, val) = (args[0], args[1] & 0x7f, args[2]);
            match op {
                FUTEX_WAIT => match host.futex_wait(addr, val as u32) {
                    FutexWait::Block => SyscallOutcome::Block,
                    FutexWait::Mismatch => ret_err(EAGAIN),
                    FutexWait::BadAddress => ret_err(EFAULT),
                },
                FUTEX_WAKE => SyscallOutcome::Ret(host.futex_wake(addr, val)),
                _ => ret_err(ENOSYS),
            }
        }
        _ => {
            log_unknown_once(num);
            ret_err(ENOSYS)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct MockHost {
        mem: Vec<u8>,
        out: Vec<u8>,
        brk: u64,
    }

    impl MockHost {
        fn new() -> Self {
            MockHost { mem: vec![0; 0x1000], out: Vec::new(), brk: 0x800 }
        }
    }

    impl SyscallHost for MockHost {
        fn read_guest(&mut self, vaddr: u64, len: usize) -> Option<Vec<u8>> {
            self.mem.get(vaddr as usize..vaddr as usize + len).map(|s| s.to_vec())
        }
        fn write_guest(&mut self, vaddr: u64, data: &[u8]) -> bool {
            match self.mem.get_mut(vaddr as usize..vaddr as usize + data.len()) {
                Some(s) => {
                    s.copy_from_slice(data);
                    true
                }
                None => false,
            }
        }
        fn write_fd(&mut self, fd: u64, data: &[u8]) -> i64 {
            if fd == 1 || fd == 2 {
                self.out.extend_from_slice(data);
                data.len() as i64
            } else {
                -EBADF
            }
        }
        fn read_fd(&mut self, _fd: u64, _len: usize) -> Option<Vec<u8>> {
            None
        }
        fn brk(&mut self, new: u64) -> u64 {
            if new != 0 {
                self.brk = new;
            }
            self.brk
        }
        fn mmap_anon(&mut self, _len: u64) -> Option<u64> {
            Some(0xa000_0000)
        }
        fn nanos(&self) -> u64 {
            42_000_000_123
        }
        fn pid(&self) -> u64 {
            1000
        }
        fn tid(&self) -> u64 {
            1001
        }
        fn clone_thread(&mut self, _sp: u64, _tls: u64, _ctid: u64) -> Result<u64, i64> {
            Err(EAGAIN)
        }
        fn futex_wait(&mut self, _addr: u64, _expected: u32) -> FutexWait {
            FutexWait::Block
        }
        fn futex_wake(&mut self, _addr: u64, _n: u64) -> u64 {
            1
        }
    }

    #[test]
    fn write_to_stdout() {
        let mut h = MockHost::new();
        h.mem[0x100..0x105].copy_from_slice(b"hello");
        let r = dispatch(&mut h, SYS_WRITE, [1, 0x100, 5, 0, 0, 0]);
        assert_eq!(r, SyscallOutcome::Ret(5));
        assert_eq!(h.out, b"hello");
    }

    #[test]
    fn exit_group_carries_code() {
        let mut h = MockHost::new();
        assert_eq!(dispatch(&mut h, SYS_EXIT_GROUP, [42, 0, 0, 0, 0, 0]), SyscallOutcome::Exit(42));
    }

    #[test]
    fn unknown_syscall_is_enosys() {
        let mut h = MockHost::new();
        assert_eq!(dispatch(&mut h, 9999, [0; 6]), SyscallOutcome::Ret((-ENOSYS) as u64));
    }

    #[test]
    fn clock_gettime_writes_timespec() {
        let mut h = MockHost::new();
        let r = dispatch(&mut h, SYS_CLOCK_GETTIME, [1, 0x200, 0, 0, 0, 0]);
        assert_eq!(r, SyscallOutcome::Ret(0));
        let sec = u64::from_le_bytes(h.mem[0x200..0x208].try_into().unwrap());
        let nsec = u64::from_le_bytes(h.mem[0x208..0x210].try_into().unwrap());
        assert_eq!((sec, nsec), (42, 123));
    }

    #[test]
    fn clone_beyond_core_count_fails() {
        let mut h = MockHost::new();
        let r = dispatch(&mut h, SYS_CLONE, [0x11, 0x500, 0, 0, 0, 0]);
        assert_eq!(r, SyscallOutcome::Ret((-EAGAIN) as u64));
    }
}
