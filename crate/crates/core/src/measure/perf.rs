use std::io;

use super::CounterBackend;

/// A per-thread hardware counter opened with `perf_event_open(2)`.
///
/// Counts user-space events of the calling thread on any CPU.
pub struct PerfCounter {
    #[cfg(target_os = "linux")]
    fd: libc::c_int,
}

#[cfg(target_os = "linux")]
mod sys {
    pub const PERF_TYPE_HARDWARE: u32 = 0;
    pub const PERF_COUNT_HW_CPU_CYCLES: u64 = 0;
    pub const PERF_COUNT_HW_INSTRUCTIONS: u64 = 1;
    pub const PERF_FLAG_FD_CLOEXEC: libc::c_ulong = 1 << 3;

    // attr.flags bits
    pub const EXCLUDE_KERNEL: u64 = 1 << 5;
    pub const EXCLUDE_HV: u64 = 1 << 6;

    /// The first published layout of `struct perf_event_attr`
    /// (`PERF_ATTR_SIZE_VER0`). Later kernels accept it unchanged.
    #[repr(C)]
    #[derive(Default)]
    pub struct PerfEventAttr {
        pub type_: u32,
        pub size: u32,
        pub config: u64,
        pub sample_period: u64,
        pub sample_type: u64,
        pub read_format: u64,
        pub flags: u64,
        pub wakeup_events: u32,
        pub bp_type: u32,
        pub config1: u64,
    }
}

#[cfg(target_os = "linux")]
impl PerfCounter {
    pub fn open(backend: CounterBackend) -> io::Result<PerfCounter> {
        let config = match backend {
            CounterBackend::HwCycles => sys::PERF_COUNT_HW_CPU_CYCLES,
            CounterBackend::HwInstructions => sys::PERF_COUNT_HW_INSTRUCTIONS,
            _ => {
                return Err(io::Error::new(
                    io::ErrorKind::InvalidInput,
                    "not a hardware backend",
                ))
            }
        };
        let attr = sys::PerfEventAttr {
            type_: sys::PERF_TYPE_HARDWARE,
            size: std::mem::size_of::<sys::PerfEventAttr>() as u32,
            config,
            flags: sys::EXCLUDE_KERNEL | sys::EXCLUDE_HV,
            ..Default::default()
        };
        // pid 0 / cpu -1: this thread, any CPU.
        let fd = unsafe {
            libc::syscall(
                libc::SYS_perf_event_open,
                &attr as *const sys::PerfEventAttr,
                0 as libc::pid_t,
                -1 as libc::c_int,
                -1 as libc::c_int,
                sys::PERF_FLAG_FD_CLOEXEC,
            )
        };
        if fd < 0 {
            return Err(io::Error::last_os_error());
        }
        let counter = PerfCounter {
            fd: fd as libc::c_int,
        };
        counter.read()?;
        Ok(counter)
    }

    pub fn read(&self) -> io::Result<u64> {
        let mut value = 0u64;
        let n = unsafe {
            libc::read(
                self.fd,
                &mut value as *mut u64 as *mut libc::c_void,
                std::mem::size_of::<u64>(),
            )
        };
        match n {
            8 => Ok(value),
            n if n < 0 => Err(io::Error::last_os_error()),
            _ => Err(io::Error::new(
                io::ErrorKind::UnexpectedEof,
                "short counter read",
            )),
        }
    }
}

#[cfg(target_os = "linux")]
impl Drop for PerfCounter {
    fn drop(&mut self) {
        unsafe {
            libc::close(self.fd);
        }
    }
}

#[cfg(not(target_os = "linux"))]
impl PerfCounter {
    pub fn open(_backend: CounterBackend) -> io::Result<PerfCounter> {
        Err(io::Error::new(
            io::ErrorKind::Unsupported,
            "hardware counters require Linux perf events",
        ))
    }

    pub fn read(&self) -> io::Result<u64> {
        unreachable!("PerfCounter cannot be constructed on this platform")
    }
}
