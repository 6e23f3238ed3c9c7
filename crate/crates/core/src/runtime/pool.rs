//! Work-stealing thread pool: one LIFO deque per worker, a shared injector,
//! random-victim stealing. Blocking waits run other jobs instead of parking.

use std::cell::{Cell, RefCell};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use crossbeam_deque::{Injector, Steal, Stealer, Worker};

pub(crate) type Job = Box<dyn FnOnce() + Send + 'static>;
pub(crate) type Hook = Arc<dyn Fn(usize) + Send + Sync>;

const IDLE_SPINS: u32 = 32;
const IDLE_WAIT: Duration = Duration::from_millis(1);

struct Shared {
    injector: Injector<Job>,
    stealers: Vec<Stealer<Job>>,
    shutdown: AtomicBool,
    sleepers: AtomicUsize,
    lock: Mutex<()>,
    wake: Condvar,
}

impl Shared {
    fn notify(&self) {
        if self.sleepers.load(Ordering::Acquire) > 0 {
            self.wake.notify_one();
        }
    }
}

struct Local {
    index: usize,
    deque: Worker<Job>,
    shared: Arc<Shared>,
    rng: Cell<u64>,
}

thread_local! {
    static LOCAL: RefCell<Option<Local>> = const { RefCell::new(None) };
}

pub(crate) struct Pool {
    shared: Arc<Shared>,
    threads: Vec<JoinHandle<()>>,
}

impl Pool {
    /// Starts `workers` threads. `on_start` and `on_exit` run on each worker
    /// thread before its first job and after its last one.
    pub fn new(workers: usize, on_start: Hook, on_exit: Hook) -> Pool {
        let workers = workers.max(1);
        let deques: Vec<Worker<Job>> = (0..workers).map(|_| Worker::new_lifo()).collect();
        let shared = Arc::new(Shared {
            injector: Injector::new(),
            stealers: deques.iter().map(Worker::stealer).collect(),
            shutdown: AtomicBool::new(false),
            sleepers: AtomicUsize::new(0),
            lock: Mutex::new(()),
            wake: Condvar::new(),
        });
        let threads = deques
            .into_iter()
            .enumerate()
            .map(|(index, deque)| {
                let shared = Arc::clone(&shared);
                let (on_start, on_exit) = (Arc::clone(&on_start), Arc::clone(&on_exit));
                std::thread::Builder::new()
                    .name(format!("spanprof-worker-{index}"))
                    .spawn(move || {
                        LOCAL.with(|l| {
                            *l.borrow_mut() = Some(Local {
                                index,
                                deque,
                                shared: Arc::clone(&shared),
                                rng: Cell::new(0x9E37_79B9_7F4A_7C15 ^ (index as u64 + 1)),
                            })
                        });
                        on_start(index);
                        worker_loop(&shared);
                        on_exit(index);
                        LOCAL.with(|l| l.borrow_mut().take());
                    })
                    .expect("failed to spawn worker thread")
            })
            .collect();
        Pool { shared, threads }
    }

    pub fn inject(&self, job: Job) {
        self.shared.injector.push(job);
        self.shared.wake.notify_all();
    }

    /// Stops the workers once they run out of jobs and joins them.
    pub fn shutdown(mut self) {
        self.stop();
    }

    fn stop(&mut self) {
        self.shared.shutdown.store(true, Ordering::Release);
        self.shared.wake.notify_all();
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }
}

impl Drop for Pool {
    fn drop(&mut self) {
        self.stop();
    }
}

fn worker_loop(shared: &Shared) {
    let mut idle = 0u32;
    loop {
        if let Some(job) = find_work() {
            idle = 0;
            job();
            continue;
        }
        if shared.shutdown.load(Ordering::Acquire) && shared.injector.is_empty() {
            break;
        }
        idle += 1;
        if idle < IDLE_SPINS {
            std::thread::yield_now();
            continue;
        }
        shared.sleepers.fetch_add(1, Ordering::AcqRel);
        let guard = shared.lock.lock().unwrap();
        let _ = shared.wake.wait_timeout(guard, IDLE_WAIT).unwrap();
        shared.sleepers.fetch_sub(1, Ordering::AcqRel);
    }
}

/// Pushes onto the current worker's deque. Returns the job back when called
/// off the pool.
pub(crate) fn push_local(job: Job) -> Result<(), Job> {
    LOCAL.with(|l| match l.borrow().as_ref() {
        Some(local) => {
            local.deque.push(job);
            local.shared.notify();
            Ok(())
        }
        None => Err(job),
    })
}

fn steal(from: impl Fn() -> Steal<Job>) -> Option<Job> {
    loop {
        match from() {
            Steal::Success(job) => return Some(job),
            Steal::Empty => return None,
            Steal::Retry => continue,
        }
    }
}

fn find_work() -> Option<Job> {
    LOCAL.with(|l| {
        let l = l.borrow();
        let local = l.as_ref()?;
        if let Some(job) = local.deque.pop() {
            return Some(job);
        }
        if let Some(job) = steal(|| local.shared.injector.steal_batch_and_pop(&local.deque)) {
            return Some(job);
        }
        let n = local.shared.stealers.len();
        // xorshift64
        let mut x = local.rng.get();
        x ^= x << 13;
        x ^= x >> 7;
        x ^= x << 17;
        local.rng.set(x);
        let start = (x % n as u64) as usize;
        (0..n)
            .map(|k| (start + k) % n)
            .filter(|&v| v != local.index)
            .find_map(|v| steal(|| local.shared.stealers[v].steal()))
    })
}

/// Runs other jobs until `done` returns true.
pub(crate) fn help_until(done: impl Fn() -> bool) {
    let mut idle = 0u32;
    while !done() {
        match find_work() {
            Some(job) => {
                idle = 0;
                job();
            }
            None => {
                idle += 1;
                if idle < IDLE_SPINS {
                    std::hint::spin_loop();
                } else {
                    std::thread::yield_now();
                }
            }
        }
    }
}
