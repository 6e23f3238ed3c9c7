//! Per-thread work counters.
//!
//! Work is measured as the difference between two counter readings taken on
//! the same thread. Four backends are available:
//!
//! - `cycles` / `instructions`: hardware counters through the Linux
//!   performance-event interface, user space only.
//! - `clock`: a monotonic nanosecond clock. Stands in for `cycles` where
//!   hardware counters are unavailable; it also counts time spent descheduled.
//! - `logical`: a counter advanced only by explicit [`ThreadCounter::charge`]
//!   calls, which makes profiles deterministic.
//!
//! Readings are never sampled on a timer; they are taken only at interval
//! boundaries.

mod perf;

use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::OnceLock;
use std::time::Instant;

use thiserror::Error;

pub use perf::PerfCounter;

/// Environment variable selecting the backend.
pub const COUNTER_ENV: &str = "SPANPROF_COUNTER";

/// Logical counters saturate here so ticks always fit a signed 64-bit value.
pub const MAX_TICKS: u64 = i64::MAX as u64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CounterBackend {
    HwCycles,
    HwInstructions,
    Logical,
    Clock,
}

impl CounterBackend {
    pub fn name(self) -> &'static str {
        match self {
            CounterBackend::HwCycles => "cycles",
            CounterBackend::HwInstructions => "instructions",
            CounterBackend::Logical => "logical",
            CounterBackend::Clock => "clock",
        }
    }

    pub fn is_hardware(self) -> bool {
        matches!(
            self,
            CounterBackend::HwCycles | CounterBackend::HwInstructions
        )
    }

    /// Reads [`COUNTER_ENV`]; `None` when unset.
    pub fn from_env() -> Result<Option<Self>, MeasureError> {
        match std::env::var(COUNTER_ENV) {
            Ok(v) => v.parse().map(Some),
            Err(_) => Ok(None),
        }
    }

    /// Whether this backend can be used from the current thread.
    pub fn probe(self) -> Result<(), MeasureError> {
        ThreadCounter::new(self).map(|_| ())
    }
}

impl fmt::Display for CounterBackend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CounterBackend {
    type Err = MeasureError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "cycles" => Ok(CounterBackend::HwCycles),
            "instructions" => Ok(CounterBackend::HwInstructions),
            "logical" => Ok(CounterBackend::Logical),
            "clock" => Ok(CounterBackend::Clock),
            other => Err(MeasureError::UnknownBackend(other.to_string())),
        }
    }
}

#[derive(Debug, Error)]
pub enum MeasureError {
    #[error("counter backend `{backend}` unavailable: {reason}")]
    BackendUnavailable {
        backend: CounterBackend,
        reason: String,
    },
    #[error("interval marker belongs to another thread")]
    CrossThreadMarker,
    #[error("charge() requires the logical backend, active backend is `{0}`")]
    WrongBackend(CounterBackend),
    #[error("interval already open on this thread")]
    NestedInterval,
    #[error("no interval open on this thread")]
    NoOpenInterval,
    #[error("unknown counter backend `{0}` (expected cycles, instructions, logical or clock)")]
    UnknownBackend(String),
    #[error("counter read failed: {0}")]
    ReadFailed(#[source] std::io::Error),
}

/// Opaque counter reading taken by [`ThreadCounter::begin_interval`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Marker {
    thread: u64,
    reading: u64,
}

impl Marker {
    pub fn reading(&self) -> u64 {
        self.reading
    }
}

enum Source {
    Logical(u64),
    Clock,
    Perf(PerfCounter),
}

/// A counter handle owned by one thread.
pub struct ThreadCounter {
    backend: CounterBackend,
    source: Source,
    tag: u64,
    open: bool,
}

static NEXT_TAG: AtomicU64 = AtomicU64::new(1);

fn clock_epoch() -> Instant {
    static EPOCH: OnceLock<Instant> = OnceLock::new();
    *EPOCH.get_or_init(Instant::now)
}

impl ThreadCounter {
    pub fn new(backend: CounterBackend) -> Result<Self, MeasureError> {
        let source = match backend {
            CounterBackend::Logical => Source::Logical(0),
            CounterBackend::Clock => {
                clock_epoch();
                Source::Clock
            }
            CounterBackend::HwCycles | CounterBackend::HwInstructions => {
                let counter =
                    PerfCounter::open(backend).map_err(|e| MeasureError::BackendUnavailable {
                        backend,
                        reason: e.to_string(),
                    })?;
                Source::Perf(counter)
            }
        };
        Ok(ThreadCounter {
            backend,
            source,
            tag: NEXT_TAG.fetch_add(1, Ordering::Relaxed),
            open: false,
        })
    }

    pub fn backend(&self) -> CounterBackend {
        self.backend
    }

    fn read(&self) -> Result<u64, MeasureError> {
        match &self.source {
            Source::Logical(v) => Ok(*v),
            Source::Clock => Ok(clock_epoch().elapsed().as_nanos() as u64),
            Source::Perf(p) => p.read().map_err(MeasureError::ReadFailed),
        }
    }

    pub fn begin_interval(&mut self) -> Result<Marker, MeasureError> {
        if self.open {
            return Err(MeasureError::NestedInterval);
        }
        let reading = self.read()?;
        self.open = true;
        Ok(Marker {
            thread: self.tag,
            reading,
        })
    }

    pub fn end_interval(&mut self, marker: Marker) -> Result<u64, MeasureError> {
        if marker.thread != self.tag {
            return Err(MeasureError::CrossThreadMarker);
        }
        if !self.open {
            return Err(MeasureError::NoOpenInterval);
        }
        let now = self.read()?;
        self.open = false;
        Ok(now.saturating_sub(marker.reading))
    }

    /// Advances the logical counter by `cost` ticks.
    pub fn charge(&mut self, cost: u64) -> Result<(), MeasureError> {
        match &mut self.source {
            Source::Logical(v) => {
                *v = v.saturating_add(cost).min(MAX_TICKS);
                Ok(())
            }
            _ => Err(MeasureError::WrongBackend(self.backend)),
        }
    }

    /// Current raw reading.
    pub fn value(&self) -> Result<u64, MeasureError> {
        self.read()
    }
}
