//! Fork-join task runtime with profiling hooks.
//!
//! A run executes one root task on a work-stealing pool. In profiled mode
//! every spawn, sync and step boundary is reported to the calling thread's
//! [`DpstBuilder`], whose records stream into a shared [`ProfileSink`].

mod context;
mod pool;

use std::borrow::Cow;
use std::collections::HashMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{mpsc, Arc, Mutex};
use std::time::{Duration, Instant};

pub use context::{burn, Spawned, TaskContext};

use crate::dpst::{CausalRegion, DpstBuilder, IdBlock, RegionId, SiteId, SpawnSite};
use crate::measure::{CounterBackend, MeasureError, ThreadCounter};
use crate::profile_io::{ChunkWriter, ProfileSink};
use crate::profile_io::{ProfileError, ProfileHeader, ProfileRecord, RegionEntry, SiteEntry};

pub const THREADS_ENV: &str = "SPANPROF_THREADS";
pub const OUT_ENV: &str = "SPANPROF_OUT";
pub const DEFAULT_OUT: &str = "spanprof.sppf";

/// A [`SpawnSite`] for the current source line, optionally labeled.
#[macro_export]
macro_rules! site {
    () => {
        $crate::dpst::SpawnSite::new(file!(), line!())
    };
    ($label:expr) => {
        $crate::dpst::SpawnSite::labeled(file!(), line!(), $label)
    };
}

/// A [`CausalRegion`] with the given label at the current source line.
#[macro_export]
macro_rules! region {
    ($label:expr) => {
        $crate::dpst::CausalRegion::new($label, file!(), line!())
    };
}

#[derive(Debug, thiserror::Error)]
pub enum RuntimeError {
    #[error("sync without an outstanding spawn")]
    NoOpenFinish,
    #[error("invalid range {start}..{end} with grain {grain}")]
    InvalidRange {
        start: usize,
        end: usize,
        grain: usize,
    },
    #[error("causal region end `{found}` does not match the open region {expected}")]
    MismatchedRegion { expected: String, found: String },
    #[error("causal region `{0}` spans a spawn or sync")]
    CrossTaskRegion(String),
    #[error("task ended inside causal region `{0}`")]
    UnclosedRegion(String),
    #[error("task panicked: {0}")]
    TaskPanicked(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Measure(#[from] MeasureError),
    #[error(transparent)]
    Profile(#[from] ProfileError),
}

#[derive(Clone, Debug)]
pub struct Config {
    pub workers: usize,
    pub out: PathBuf,
    pub backend: CounterBackend,
}

impl Config {
    pub fn new(out: impl Into<PathBuf>, backend: CounterBackend) -> Config {
        Config {
            workers: default_workers(),
            out: out.into(),
            backend,
        }
    }

    pub fn workers(mut self, workers: usize) -> Config {
        self.workers = workers;
        self
    }

    /// Reads `SPANPROF_THREADS`, `SPANPROF_OUT` and `SPANPROF_COUNTER`.
    /// Without a counter setting, cycles are used when available and the
    /// clock otherwise.
    pub fn from_env() -> Result<Config, RuntimeError> {
        let workers = match std::env::var(THREADS_ENV) {
            Ok(v) => match v.trim().parse::<usize>() {
                Ok(n) if n > 0 => n,
                _ => return Err(RuntimeError::Config(format!("{THREADS_ENV}={v}"))),
            },
            Err(_) => default_workers(),
        };
        let out = std::env::var_os(OUT_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
        let backend = match CounterBackend::from_env()? {
            Some(b) => b,
            None => match CounterBackend::HwCycles.probe() {
                Ok(()) => CounterBackend::HwCycles,
                Err(e) => {
                    log::warn!("{e}; falling back to the clock backend");
                    CounterBackend::Clock
                }
            },
        };
        Ok(Config {
            workers,
            out,
            backend,
        })
    }
}

fn default_workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

/// Result of a profiled run.
#[derive(Debug)]
pub struct RunReport<R> {
    pub value: R,
    pub path: PathBuf,
    pub header: ProfileHeader,
    /// Canonical records, as written.
    pub records: Vec<ProfileRecord>,
    /// Largest number of simultaneously open tree nodes.
    pub peak_resident: u64,
    pub wall: Duration,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Mode {
    Profiled,
    Plain,
    Serial,
}

/// Interned site and region tables for one run.
#[derive(Default)]
struct Registry {
    sites: Mutex<HashMap<SpawnSite, SiteId>>,
    regions: Mutex<HashMap<Cow<'static, str>, (RegionId, CausalRegion)>>,
}

impl Registry {
    fn site(&self, site: &SpawnSite) -> SiteId {
        let mut sites = self.sites.lock().unwrap();
        let next = SiteId(sites.len() as u32);
        *sites.entry(site.clone()).or_insert(next)
    }

    /// Regions are keyed by label. The smallest source location seen for a
    /// label is kept so the header does not depend on scheduling.
    fn region(&self, region: &CausalRegion) -> RegionId {
        let mut regions = self.regions.lock().unwrap();
        let next = RegionId(regions.len() as u32);
        let entry = regions
            .entry(region.label.clone())
            .or_insert_with(|| (next, region.clone()));
        if (&region.file, region.line) < (&entry.1.file, entry.1.line) {
            entry.1 = region.clone();
        }
        entry.0
    }

    fn header(&self, backend: CounterBackend) -> ProfileHeader {
        let mut header = ProfileHeader::new(backend.name());
        header.sites = self
            .sites
            .lock()
            .unwrap()
            .iter()
            .map(|(site, &id)| SiteEntry {
                id,
                site: site.clone(),
            })
            .collect();
        header.sites.sort_by_key(|e| e.id);
        header.regions = self
            .regions
            .lock()
            .unwrap()
            .values()
            .map(|(id, region)| RegionEntry {
                id: *id,
                region: region.clone(),
            })
            .collect();
        header.regions.sort_by_key(|e| e.id);
        header
    }
}

pub(crate) struct RunShared {
    mode: Mode,
    registry: Registry,
    failures: Mutex<Vec<RuntimeError>>,
    resident: AtomicU64,
    peak: AtomicU64,
}

impl RunShared {
    fn new(mode: Mode) -> Arc<RunShared> {
        Arc::new(RunShared {
            mode,
            registry: Registry::default(),
            failures: Mutex::new(Vec::new()),
            resident: AtomicU64::new(0),
            peak: AtomicU64::new(0),
        })
    }

    pub(crate) fn fail(&self, err: RuntimeError) {
        log::error!("{err}");
        self.failures.lock().unwrap().push(err);
    }

    pub(crate) fn opened(&self, n: u64) {
        let now = self.resident.fetch_add(n, Ordering::AcqRel) + n;
        self.peak.fetch_max(now, Ordering::AcqRel);
    }

    pub(crate) fn closed(&self, n: u64) {
        self.resident.fetch_sub(n, Ordering::AcqRel);
    }

    fn take_failure(&self) -> Option<RuntimeError> {
        let mut failures = self.failures.lock().unwrap();
        (!failures.is_empty()).then(|| failures.remove(0))
    }
}

/// Per-thread profiling state. Installed on each worker for the duration of a
/// run, and on the calling thread for serial runs.
pub(crate) struct ThreadState {
    pub counter: Option<ThreadCounter>,
    pub builder: Option<DpstBuilder<ChunkWriter>>,
    sites: HashMap<SpawnSite, SiteId>,
    regions: HashMap<Cow<'static, str>, RegionId>,
}

thread_local! {
    static STATE: std::cell::RefCell<Option<ThreadState>> = const { std::cell::RefCell::new(None) };
}

/// Runs `f` on this thread's state. Returns `None` off a run.
pub(crate) fn with_state<R>(f: impl FnOnce(&mut ThreadState) -> R) -> Option<R> {
    STATE.with(|s| s.borrow_mut().as_mut().map(f))
}

pub(crate) fn intern_site(run: &RunShared, site: &SpawnSite) -> SiteId {
    with_state(|s| {
        if let Some(&id) = s.sites.get(site) {
            return id;
        }
        let id = run.registry.site(site);
        s.sites.insert(site.clone(), id);
        id
    })
    .unwrap_or_else(|| run.registry.site(site))
}

pub(crate) fn intern_region(run: &RunShared, region: &CausalRegion) -> RegionId {
    with_state(|s| {
        if let Some(&id) = s.regions.get(&region.label) {
            return id;
        }
        let id = run.registry.region(region);
        s.regions.insert(region.label.clone(), id);
        id
    })
    .unwrap_or_else(|| run.registry.region(region))
}

fn panic_message(payload: Box<dyn std::any::Any + Send>) -> String {
    if let Some(s) = payload.downcast_ref::<&str>() {
        (*s).to_string()
    } else if let Some(s) = payload.downcast_ref::<String>() {
        s.clone()
    } else {
        "non-string panic payload".to_string()
    }
}

/// Runs `root` on a pool and returns its value once every worker has exited.
fn run_on_pool<R, F>(
    workers: usize,
    run: &Arc<RunShared>,
    on_start: pool::Hook,
    root: F,
) -> Result<R, RuntimeError>
where
    R: Send + 'static,
    F: FnOnce(&mut TaskContext) -> R + Send + 'static,
{
    let on_exit: pool::Hook = Arc::new(|_| {
        // Dropping the builder flushes its chunk writer.
        STATE.with(|s| s.borrow_mut().take());
    });
    let pool = pool::Pool::new(workers, on_start, on_exit);
    let (tx, rx) = mpsc::channel();
    let shared = Arc::clone(run);
    pool.inject(Box::new(move || {
        let mut ctx = TaskContext::root(shared);
        let out = catch_unwind(AssertUnwindSafe(|| root(&mut ctx)));
        ctx.end_task();
        let _ = tx.send(out);
    }));
    let out = rx.recv();
    pool.shutdown();
    match out {
        Ok(Ok(v)) => Ok(v),
        Ok(Err(payload)) => Err(RuntimeError::TaskPanicked(panic_message(payload))),
        Err(_) => Err(RuntimeError::TaskPanicked("root task lost".into())),
    }
}

/// Executes `root` on `config.workers` threads with full instrumentation and
/// writes the profile to `config.out`.
///
/// Task panics and annotation errors are reported after the file has been
/// written with whatever was recorded.
pub fn run_profiled<R, F>(config: &Config, root: F) -> Result<RunReport<R>, RuntimeError>
where
    R: Send + 'static,
    F: FnOnce(&mut TaskContext) -> R + Send + 'static,
{
    if config.workers == 0 {
        return Err(RuntimeError::Config("workers must be at least 1".into()));
    }
    config.backend.probe()?;
    let sink = ProfileSink::new();
    let run = RunShared::new(Mode::Profiled);
    let stride = config.workers as u64;
    let backend = config.backend;
    let (start_sink, start_run) = (Arc::clone(&sink), Arc::clone(&run));
    let on_start: pool::Hook = Arc::new(move |index| {
        let counter = match ThreadCounter::new(backend) {
            Ok(c) => Some(c),
            Err(e) => {
                start_run.fail(e.into());
                None
            }
        };
        let builder = DpstBuilder::new(IdBlock::new(index as u64, stride), start_sink.writer());
        STATE.with(|s| {
            *s.borrow_mut() = Some(ThreadState {
                counter,
                builder: Some(builder),
                sites: HashMap::new(),
                regions: HashMap::new(),
            })
        });
    });
    let started = Instant::now();
    let value = run_on_pool(config.workers, &run, on_start, root);
    let wall = started.elapsed();
    let header = run.registry.header(backend);
    let (header, records) = sink.finish(&config.out, header)?;
    let value = value?;
    if let Some(err) = run.take_failure() {
        return Err(err);
    }
    Ok(RunReport {
        value,
        path: config.out.clone(),
        header,
        records,
        peak_resident: run.peak.load(Ordering::Acquire),
        wall,
    })
}

/// Executes `root` on the same pool without instrumentation.
pub fn run_plain<R, F>(workers: usize, root: F) -> Result<R, RuntimeError>
where
    R: Send + 'static,
    F: FnOnce(&mut TaskContext) -> R + Send + 'static,
{
    if workers == 0 {
        return Err(RuntimeError::Config("workers must be at least 1".into()));
    }
    let run = RunShared::new(Mode::Plain);
    let value = run_on_pool(workers, &run, Arc::new(|_| {}), root)?;
    match run.take_failure() {
        Some(err) => Err(err),
        None => Ok(value),
    }
}

/// Serial elision: every spawn runs inline on the calling thread. Returns the
/// value and the total logical ticks charged.
pub fn run_serial<R, F>(root: F) -> Result<(R, u64), RuntimeError>
where
    F: FnOnce(&mut TaskContext) -> R,
{
    let run = RunShared::new(Mode::Serial);
    let state = ThreadState {
        counter: Some(ThreadCounter::new(CounterBackend::Logical)?),
        builder: None,
        sites: HashMap::new(),
        regions: HashMap::new(),
    };
    let saved = STATE.with(|s| s.borrow_mut().replace(state));
    let mut ctx = TaskContext::root(Arc::clone(&run));
    let out = catch_unwind(AssertUnwindSafe(|| root(&mut ctx)));
    ctx.end_task();
    let state = STATE.with(|s| std::mem::replace(&mut *s.borrow_mut(), saved));
    let ticks = state.and_then(|s| s.counter).map_or(Ok(0), |c| c.value())?;
    let value = out.map_err(|p| RuntimeError::TaskPanicked(panic_message(p)))?;
    match run.take_failure() {
        Some(err) => Err(err),
        None => Ok((value, ticks)),
    }
}
