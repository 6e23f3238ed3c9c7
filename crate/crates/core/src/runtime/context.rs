use std::borrow::Cow;
use std::ops::Range;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use super::{
    intern_region, intern_site, panic_message, pool, with_state, Mode, RunShared, RuntimeError,
};
use crate::dpst::{CausalRegion, RegionId, SpawnSite, TaskScope, WorkSegment};
use crate::measure::{Marker, MeasureError};

/// Handle to a spawned task's return value, readable after the sync that
/// joins it.
pub struct Spawned<T> {
    slot: Arc<Mutex<Option<T>>>,
}

impl<T> Spawned<T> {
    /// The value, if the task has completed without panicking.
    pub fn try_take(&self) -> Option<T> {
        self.slot.lock().unwrap().take()
    }

    /// Panics if the task has not been synced or panicked itself.
    pub fn take(self) -> T {
        self.try_take()
            .expect("spawned task value taken before sync or after a panic")
    }
}

struct OpenRegion {
    label: Cow<'static, str>,
    id: Option<RegionId>,
    epoch: u64,
}

/// Execution context of one running task.
pub struct TaskContext {
    run: Arc<RunShared>,
    scope: Option<TaskScope>,
    /// Outstanding children of the open finish scope.
    pending: Option<Arc<AtomicUsize>>,
    /// Serial mode only: whether a spawn happened since the last sync.
    serial_open: bool,
    marker: Option<Marker>,
    segments: Vec<WorkSegment>,
    regions: Vec<OpenRegion>,
    /// Bumped at every spawn and sync; a region must begin and end in the
    /// same epoch.
    epoch: u64,
}

impl TaskContext {
    fn new(run: Arc<RunShared>, scope: Option<TaskScope>) -> TaskContext {
        TaskContext {
            run,
            scope,
            pending: None,
            serial_open: false,
            marker: None,
            segments: Vec::new(),
            regions: Vec::new(),
            epoch: 0,
        }
    }

    /// Context for a run's entry task. Opens the root when profiling.
    pub(super) fn root(run: Arc<RunShared>) -> TaskContext {
        let scope = if run.mode == Mode::Profiled {
            with_state(|s| s.builder.as_mut().map(|b| b.open_root()))
                .flatten()
                .and_then(|r| r.ok())
        } else {
            None
        };
        if scope.is_some() {
            run.opened(1);
        }
        let mut ctx = TaskContext::new(run, scope);
        ctx.start_interval();
        ctx
    }

    fn profiled(&self) -> bool {
        self.scope.is_some()
    }

    fn start_interval(&mut self) {
        if !self.profiled() {
            return;
        }
        match with_state(|s| s.counter.as_mut().map(|c| c.begin_interval())).flatten() {
            Some(Ok(m)) => self.marker = Some(m),
            Some(Err(e)) => self.run.fail(e.into()),
            None => {}
        }
    }

    /// Closes the running interval into a segment tagged with the outermost
    /// open region.
    fn cut_segment(&mut self) {
        let Some(marker) = self.marker.take() else {
            return;
        };
        let ticks = match with_state(|s| s.counter.as_mut().map(|c| c.end_interval(marker))) {
            Some(Some(Ok(t))) => t,
            Some(Some(Err(e))) => {
                self.run.fail(e.into());
                return;
            }
            _ => return,
        };
        if ticks == 0 {
            return;
        }
        let region = self.regions.first().and_then(|r| r.id);
        match self.segments.last_mut() {
            Some(last) if last.region == region => last.ticks = last.ticks.saturating_add(ticks),
            _ => self.segments.push(WorkSegment { region, ticks }),
        }
    }

    /// Emits the accumulated segments as a step node, if any work accrued.
    fn close_step(&mut self) {
        self.cut_segment();
        if self.segments.is_empty() {
            return;
        }
        let segments = std::mem::take(&mut self.segments);
        let Some(scope) = self.scope.as_mut() else {
            return;
        };
        if let Some(Some(Err(e))) =
            with_state(|s| s.builder.as_mut().map(|b| b.on_step(scope, segments)))
        {
            log::error!("step emission failed: {e}");
        }
    }

    /// Spawns `body` as a child task that may run in parallel with the rest
    /// of this task until the next [`sync`](Self::sync).
    pub fn spawn<T, F>(&mut self, site: SpawnSite, body: F) -> Spawned<T>
    where
        T: Send + 'static,
        F: FnOnce(&mut TaskContext) -> T + Send + 'static,
    {
        let slot = Arc::new(Mutex::new(None));
        let spawned = Spawned {
            slot: Arc::clone(&slot),
        };
        self.epoch += 1;
        if self.run.mode == Mode::Serial {
            self.serial_open = true;
            let mut child = TaskContext::new(Arc::clone(&self.run), None);
            let value = body(&mut child);
            child.end_task();
            *slot.lock().unwrap() = Some(value);
            return spawned;
        }

        self.close_step();
        let child_scope = self.scope.as_mut().and_then(|scope| {
            let site = intern_site(&self.run, &site);
            let nodes =
                with_state(|s| s.builder.as_mut().map(|b| b.on_spawn(scope, site))).flatten()?;
            self.run.opened(1 + nodes.finish.is_some() as u64);
            Some(nodes.child)
        });
        let pending = Arc::clone(
            self.pending
                .get_or_insert_with(|| Arc::new(AtomicUsize::new(0))),
        );
        pending.fetch_add(1, Ordering::AcqRel);
        let run = Arc::clone(&self.run);
        let job: pool::Job = Box::new(move || {
            let mut ctx = TaskContext::new(Arc::clone(&run), child_scope);
            ctx.start_interval();
            match catch_unwind(AssertUnwindSafe(|| body(&mut ctx))) {
                Ok(v) => *slot.lock().unwrap() = Some(v),
                Err(p) => run.fail(RuntimeError::TaskPanicked(panic_message(p))),
            }
            ctx.end_task();
            pending.fetch_sub(1, Ordering::AcqRel);
        });
        if let Err(job) = pool::push_local(job) {
            job();
        }
        self.start_interval();
        spawned
    }

    /// Waits for every task spawned by this task since its last sync,
    /// running other work meanwhile.
    pub fn sync(&mut self) -> Result<(), RuntimeError> {
        if self.run.mode == Mode::Serial {
            if !std::mem::take(&mut self.serial_open) {
                return Err(RuntimeError::NoOpenFinish);
            }
            self.epoch += 1;
            return Ok(());
        }
        let pending = self.pending.take().ok_or(RuntimeError::NoOpenFinish)?;
        self.close_step();
        pool::help_until(|| pending.load(Ordering::Acquire) == 0);
        if let Some(scope) = self.scope.as_mut() {
            if let Some(Some(Ok(_))) = with_state(|s| s.builder.as_mut().map(|b| b.on_sync(scope)))
            {
                self.run.closed(1);
            }
        }
        self.epoch += 1;
        self.start_interval();
        Ok(())
    }

    /// Runs `body` over `range` in chunks of at most `grain` indices, split
    /// recursively in halves. Joins the caller's outstanding spawns too.
    pub fn parallel_for<F>(
        &mut self,
        site: SpawnSite,
        range: Range<usize>,
        grain: usize,
        body: F,
    ) -> Result<(), RuntimeError>
    where
        F: Fn(&mut TaskContext, Range<usize>) + Send + Sync + 'static,
    {
        if range.start > range.end || grain == 0 {
            return Err(RuntimeError::InvalidRange {
                start: range.start,
                end: range.end,
                grain,
            });
        }
        if self.has_open_finish() {
            self.sync()?;
        }
        if range.is_empty() {
            return Ok(());
        }
        split(self, &site, range, grain, &Arc::new(body));
        Ok(())
    }

    fn has_open_finish(&self) -> bool {
        self.pending.is_some() || self.serial_open
    }

    /// Opens an annotated region. Nested regions are allowed; work is tagged
    /// with the outermost one.
    pub fn causal_begin(&mut self, region: &CausalRegion) {
        let id = (self.run.mode == Mode::Profiled).then(|| intern_region(&self.run, region));
        if self.regions.is_empty() {
            self.cut_segment();
            self.start_interval();
        }
        self.regions.push(OpenRegion {
            label: region.label.clone(),
            id,
            epoch: self.epoch,
        });
    }

    /// Closes the innermost open region, which must be `region` and must not
    /// contain a spawn or sync.
    pub fn causal_end(&mut self, region: &CausalRegion) -> Result<(), RuntimeError> {
        let top = self
            .regions
            .last()
            .ok_or_else(|| RuntimeError::MismatchedRegion {
                expected: "none".into(),
                found: region.label.to_string(),
            })?;
        if top.label != region.label {
            return Err(RuntimeError::MismatchedRegion {
                expected: format!("`{}`", top.label),
                found: region.label.to_string(),
            });
        }
        if top.epoch != self.epoch {
            let label = top.label.to_string();
            self.regions.pop();
            return Err(RuntimeError::CrossTaskRegion(label));
        }
        if self.regions.len() == 1 {
            self.cut_segment();
            self.start_interval();
        }
        self.regions.pop();
        Ok(())
    }

    /// Runs `f` inside `region`.
    pub fn causal<R>(
        &mut self,
        region: &CausalRegion,
        f: impl FnOnce(&mut TaskContext) -> R,
    ) -> Result<R, RuntimeError> {
        self.causal_begin(region);
        let out = f(self);
        self.causal_end(region)?;
        Ok(out)
    }

    /// Advances the logical counter. A no-op in plain mode.
    pub fn charge(&mut self, ticks: u64) -> Result<(), MeasureError> {
        with_state(|s| s.counter.as_mut().map(|c| c.charge(ticks)))
            .flatten()
            .unwrap_or(Ok(()))
    }

    /// Burns `units` of real computation and charges the same number of
    /// logical ticks when the logical backend is active.
    pub fn work(&mut self, units: u64) {
        burn(units);
        let _ = self.charge(units);
    }

    /// Ends the task: closes the last step, joins outstanding spawns and
    /// emits the task's own node.
    pub(super) fn end_task(mut self) {
        if let Some(open) = self.regions.first() {
            self.run
                .fail(RuntimeError::UnclosedRegion(open.label.to_string()));
        }
        if self.has_open_finish() {
            let _ = self.sync();
        }
        self.close_step();
        if let Some(scope) = self.scope.take() {
            if let Some(Some(Ok(_))) =
                with_state(|s| s.builder.as_mut().map(|b| b.on_task_end(scope)))
            {
                self.run.closed(1);
            }
        }
    }
}

fn split<F>(
    ctx: &mut TaskContext,
    site: &SpawnSite,
    range: Range<usize>,
    grain: usize,
    body: &Arc<F>,
) where
    F: Fn(&mut TaskContext, Range<usize>) + Send + Sync + 'static,
{
    if range.len() <= grain {
        body(ctx, range);
        return;
    }
    let mid = range.start + range.len() / 2;
    for half in [range.start..mid, mid..range.end] {
        let (s, b) = (site.clone(), Arc::clone(body));
        ctx.spawn(site.clone(), move |ctx| split(ctx, &s, half, grain, &b));
    }
    ctx.sync().expect("halves were spawned");
}

/// Deterministic busy work, roughly a nanosecond per unit.
pub fn burn(units: u64) {
    let mut x = 0x2545_F491_4F6C_DD1Du64;
    for i in 0..units {
        x ^= x << 7;
        x ^= x >> 9;
        x = x.wrapping_add(i);
    }
    std::hint::black_box(x);
}
