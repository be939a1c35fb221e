//! Two-class priority task pool.
//!
//! High-priority tasks (coarse operator recomputes) always go first; low
//! priority tasks (integration and synthetic load) run in FIFO order, subject
//! to a per-cycle throttle. With one worker no thread is started and the
//! driver executes tasks itself at well-defined points, which keeps
//! single-worker runs deterministic.

use std::collections::VecDeque;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;

use parking_lot::{Condvar, Mutex};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TaskKind {
    Integrate,
    CoarseRecompute,
    Load,
}

impl TaskKind {
    pub fn is_high(self) -> bool {
        self == TaskKind::CoarseRecompute
    }
}

/// Work item. The job receives `true` to run and `false` when the pool
/// discards it during shutdown, so it can undo any claim it holds.
pub struct Task {
    pub kind: TaskKind,
    pub cell: usize,
    /// Worker whose partition owns the cell.
    pub owner: usize,
    pub epoch: u64,
    job: Box<dyn FnOnce(bool) + Send>,
}

impl Task {
    pub fn new(kind: TaskKind, cell: usize, owner: usize, epoch: u64, job: impl FnOnce(bool) + Send + 'static) -> Self {
        Self { kind, cell, owner, epoch, job: Box::new(job) }
    }
}

impl std::fmt::Debug for Task {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Task").field("kind", &self.kind).field("cell", &self.cell).finish()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SchedulerConfig {
    pub workers: usize,
    /// Low-priority executions allowed per cycle; `None` is unlimited.
    pub throttle: Option<usize>,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        Self { workers: 1, throttle: None }
    }
}

#[derive(Default)]
struct State {
    high: VecDeque<Task>,
    low: VecDeque<Task>,
    running_high: usize,
    running_low: usize,
    budget: Option<usize>,
    shutdown: bool,
}

impl State {
    fn take(&mut self) -> Option<Task> {
        if let Some(t) = self.high.pop_front() {
            self.running_high += 1;
            return Some(t);
        }
        if self.budget != Some(0) {
            if let Some(t) = self.low.pop_front() {
                if let Some(b) = self.budget.as_mut() {
                    *b -= 1;
                }
                self.running_low += 1;
                return Some(t);
            }
        }
        None
    }
}

struct Inner {
    state: Mutex<State>,
    cv: Condvar,
    throttle: Option<usize>,
    spawned: AtomicU64,
    completed: AtomicU64,
    discarded: AtomicU64,
    executed: Vec<AtomicU64>,
    remote: Vec<AtomicU64>,
}

impl Inner {
    fn execute(&self, worker: usize, task: Task) {
        let high = task.kind.is_high();
        if task.owner != worker {
            self.remote[worker].fetch_add(1, Ordering::Relaxed);
        }
        (task.job)(true);
        self.executed[worker].fetch_add(1, Ordering::Relaxed);
        self.completed.fetch_add(1, Ordering::AcqRel);
        let mut st = self.state.lock();
        if high {
            st.running_high -= 1;
        } else {
            st.running_low -= 1;
        }
        drop(st);
        self.cv.notify_all();
    }
}

/// Counters for telemetry.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SchedulerStats {
    pub spawned: u64,
    pub completed: u64,
    pub discarded: u64,
    pub pending: usize,
    pub running: usize,
    pub executed_per_worker: Vec<u64>,
    pub remote_per_worker: Vec<u64>,
}

pub struct Scheduler {
    inner: Arc<Inner>,
    workers: usize,
    handles: Vec<JoinHandle<()>>,
}

impl Scheduler {
    pub fn new(cfg: SchedulerConfig) -> Self {
        let workers = cfg.workers.max(1);
        let inner = Arc::new(Inner {
            state: Mutex::new(State { budget: cfg.throttle, ..State::default() }),
            cv: Condvar::new(),
            throttle: cfg.throttle,
            spawned: AtomicU64::new(0),
            completed: AtomicU64::new(0),
            discarded: AtomicU64::new(0),
            executed: (0..workers).map(|_| AtomicU64::new(0)).collect(),
            remote: (0..workers).map(|_| AtomicU64::new(0)).collect(),
        });
        let handles = (1..workers)
            .map(|w| {
                let inner = Arc::clone(&inner);
                std::thread::Builder::new()
                    .name(format!("lazymg-worker-{w}"))
                    .spawn(move || worker_loop(&inner, w))
                    .expect("spawn worker thread")
            })
            .collect();
        Self { inner, workers, handles }
    }

    pub fn workers(&self) -> usize {
        self.workers
    }

    /// Whether background threads exist.
    pub fn is_threaded(&self) -> bool {
        self.workers > 1
    }

    /// Enqueues a task. Never runs it on the caller.
    pub fn spawn(&self, task: Task) -> Result<()> {
        let mut st = self.inner.state.lock();
        if st.shutdown {
            drop(st);
            (task.job)(false);
            return Err(Error::Shutdown);
        }
        if task.kind.is_high() {
            st.high.push_back(task);
        } else {
            st.low.push_back(task);
        }
        self.inner.spawned.fetch_add(1, Ordering::AcqRel);
        drop(st);
        self.inner.cv.notify_one();
        Ok(())
    }

    /// Tasks waiting in the ready queues.
    pub fn pending_count(&self) -> usize {
        let st = self.inner.state.lock();
        st.high.len() + st.low.len()
    }

    /// Queued plus running tasks.
    pub fn outstanding(&self) -> usize {
        let st = self.inner.state.lock();
        st.high.len() + st.low.len() + st.running_high + st.running_low
    }

    /// Refills the per-cycle throttle budget.
    pub fn begin_cycle(&self) {
        self.inner.state.lock().budget = self.inner.throttle;
        self.inner.cv.notify_all();
    }

    /// Runs high-priority tasks on the calling thread until none is queued
    /// or running.
    pub fn run_high_until_idle(&self) {
        let mut st = self.inner.state.lock();
        loop {
            if let Some(t) = st.high.pop_front() {
                st.running_high += 1;
                drop(st);
                self.inner.execute(0, t);
                st = self.inner.state.lock();
            } else if st.running_high > 0 {
                self.inner.cv.wait(&mut st);
            } else {
                return;
            }
        }
    }

    /// Executes queued work on the calling thread, within the throttle.
    /// Used by the driver when there are no background workers.
    pub fn run_on_driver(&self) -> usize {
        let mut count = 0;
        loop {
            let next = self.inner.state.lock().take();
            match next {
                Some(t) => {
                    self.inner.execute(0, t);
                    count += 1;
                }
                None => return count,
            }
        }
    }

    /// Blocks until no task is queued or running, ignoring the throttle.
    pub fn wait_idle(&self) {
        let mut st = self.inner.state.lock();
        let saved = st.budget.take();
        drop(st);
        self.inner.cv.notify_all();
        if !self.is_threaded() {
            self.run_on_driver();
        }
        let mut st = self.inner.state.lock();
        while !(st.high.is_empty() && st.low.is_empty()) || st.running_high + st.running_low > 0 {
            self.inner.cv.wait(&mut st);
        }
        st.budget = saved;
    }

    pub fn stats(&self) -> SchedulerStats {
        let st = self.inner.state.lock();
        SchedulerStats {
            spawned: self.inner.spawned.load(Ordering::Acquire),
            completed: self.inner.completed.load(Ordering::Acquire),
            discarded: self.inner.discarded.load(Ordering::Acquire),
            pending: st.high.len() + st.low.len(),
            running: st.running_high + st.running_low,
            executed_per_worker: self.inner.executed.iter().map(|c| c.load(Ordering::Relaxed)).collect(),
            remote_per_worker: self.inner.remote.iter().map(|c| c.load(Ordering::Relaxed)).collect(),
        }
    }

    /// Stops accepting work, discards queued tasks and joins the workers.
    pub fn shutdown(&mut self) {
        let dropped: Vec<Task> = {
            let mut st = self.inner.state.lock();
            st.shutdown = true;
            let mut all: Vec<Task> = st.high.drain(..).collect();
            all.extend(st.low.drain(..));
            all
        };
        self.inner.cv.notify_all();
        for t in dropped {
            (t.job)(false);
            self.inner.discarded.fetch_add(1, Ordering::AcqRel);
        }
        for h in self.handles.drain(..) {
            let _ = h.join();
        }
    }
}

impl Drop for Scheduler {
    fn drop(&mut self) {
        self.shutdown();
    }
}

fn worker_loop(inner: &Inner, worker: usize) {
    let mut st = inner.state.lock();
    loop {
        if st.shutdown {
            return;
        }
        match st.take() {
            Some(t) => {
                drop(st);
                inner.execute(worker, t);
                st = inner.state.lock();
            }
            None => inner.cv.wait(&mut st),
        }
    }
}

/// Owner of stream slot `slot` when `total` slots are split into contiguous
/// chunks over `workers`.
pub fn partition_owner(slot: usize, total: usize, workers: usize) -> usize {
    if total == 0 {
        return 0;
    }
    (slot * workers / total).min(workers - 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::AtomicUsize;

    fn counter_task(kind: TaskKind, c: &Arc<AtomicUsize>) -> Task {
        let c = Arc::clone(c);
        Task::new(kind, 0, 0, 0, move |run| {
            if run {
                c.fetch_add(1, Ordering::SeqCst);
            }
        })
    }

    #[test]
    fn empty_pool() {
        let s = Scheduler::new(SchedulerConfig::default());
        assert_eq!(s.pending_count(), 0);
    }

    #[test]
    fn spawn_counts_and_never_runs_inline() {
        let s = Scheduler::new(SchedulerConfig::default());
        let c = Arc::new(AtomicUsize::new(0));
        for _ in 0..5 {
            s.spawn(counter_task(TaskKind::Integrate, &c)).unwrap();
        }
        assert_eq!(s.pending_count(), 5);
        assert_eq!(c.load(Ordering::SeqCst), 0);
        assert_eq!(s.run_on_driver(), 5);
        assert_eq!(c.load(Ordering::SeqCst), 5);
    }

    #[test]
    fn priority_then_fifo() {
        let s = Scheduler::new(SchedulerConfig::default());
        let log = Arc::new(Mutex::new(Vec::new()));
        for (i, kind) in [TaskKind::Integrate, TaskKind::CoarseRecompute, TaskKind::Integrate, TaskKind::CoarseRecompute]
            .into_iter()
            .enumerate()
        {
            let log = Arc::clone(&log);
            s.spawn(Task::new(kind, i, 0, 0, move |_| log.lock().push(i))).unwrap();
        }
        s.run_on_driver();
        assert_eq!(*log.lock(), vec![1, 3, 0, 2]);
    }

    #[test]
    fn throttle_limits_low_priority_only() {
        let s = Scheduler::new(SchedulerConfig { workers: 1, throttle: Some(1) });
        let c = Arc::new(AtomicUsize::new(0));
        for _ in 0..3 {
            s.spawn(counter_task(TaskKind::Integrate, &c)).unwrap();
        }
        s.spawn(counter_task(TaskKind::CoarseRecompute, &c)).unwrap();
        assert_eq!(s.run_on_driver(), 2);
        assert_eq!(s.pending_count(), 2);
        s.begin_cycle();
        assert_eq!(s.run_on_driver(), 1);
        assert_eq!(s.pending_count(), 1);
    }

    #[test]
    fn zero_throttle_starves() {
        let s = Scheduler::new(SchedulerConfig { workers: 1, throttle: Some(0) });
        let c = Arc::new(AtomicUsize::new(0));
        s.spawn(counter_task(TaskKind::Integrate, &c)).unwrap();
        for _ in 0..3 {
            s.begin_cycle();
            s.run_on_driver();
        }
        assert_eq!(s.pending_count(), 1);
    }

    #[test]
    fn thousand_tasks_four_workers() {
        let s = Scheduler::new(SchedulerConfig { workers: 4, throttle: None });
        let c = Arc::new(AtomicUsize::new(0));
        for i in 0..1000 {
            let c = Arc::clone(&c);
            s.spawn(Task::new(TaskKind::Integrate, i, i % 4, 0, move |_| {
                c.fetch_add(1, Ordering::SeqCst);
            }))
            .unwrap();
        }
        s.wait_idle();
        assert_eq!(c.load(Ordering::SeqCst), 1000);
        let st = s.stats();
        assert_eq!(st.pending, 0);
        assert_eq!(st.spawned, st.completed);
        assert_eq!(st.executed_per_worker.iter().sum::<u64>(), 1000);
    }

    #[test]
    fn high_batch_wait() {
        let s = Scheduler::new(SchedulerConfig { workers: 3, throttle: None });
        let c = Arc::new(AtomicUsize::new(0));
        for _ in 0..50 {
            s.spawn(counter_task(TaskKind::CoarseRecompute, &c)).unwrap();
        }
        s.run_high_until_idle();
        assert_eq!(c.load(Ordering::SeqCst), 50);
    }

    #[test]
    fn spawn_after_shutdown_rolls_back() {
        let mut s = Scheduler::new(SchedulerConfig::default());
        let cancelled = Arc::new(AtomicUsize::new(0));
        let c2 = Arc::clone(&cancelled);
        s.spawn(Task::new(TaskKind::Integrate, 0, 0, 0, move |run| {
            if !run {
                c2.fetch_add(1, Ordering::SeqCst);
            }
        }))
        .unwrap();
        s.shutdown();
        assert_eq!(cancelled.load(Ordering::SeqCst), 1);
        let c3 = Arc::clone(&cancelled);
        let r = s.spawn(Task::new(TaskKind::Integrate, 0, 0, 0, move |run| {
            if !run {
                c3.fetch_add(1, Ordering::SeqCst);
            }
        }));
        assert!(matches!(r, Err(Error::Shutdown)));
        assert_eq!(cancelled.load(Ordering::SeqCst), 2);
    }

    #[test]
    fn partition_is_contiguous() {
        let owners: Vec<usize> = (0..10).map(|s| partition_owner(s, 10, 3)).collect();
        assert_eq!(owners, vec![0, 0, 0, 0, 1, 1, 1, 2, 2, 2]);
    }
}
