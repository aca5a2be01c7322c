//! Single-threaded discrete-event executor with simulated processes, a
//! test-and-set mutex and a per-process event unit.

use std::cell::{Cell, RefCell};
use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};
use std::fmt;
use std::future::Future;
use std::hash::Hasher;
use std::pin::Pin;
use std::rc::Rc;
use std::task::{Context, Poll, Waker};

use fnv::FnvHasher;

pub type Pid = usize;
pub type Time = u64;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SimError {
    #[error("simulation stalled at cycle {at}; blocked: {}", blocked.join(", "))]
    Timeout { at: Time, blocked: Vec<String> },
    #[error("simulator fault: {0}")]
    Fault(String),
}

impl SimError {
    pub fn fault(msg: impl Into<String>) -> Self {
        SimError::Fault(msg.into())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProcKind {
    Wt,
    Pht,
    Mht,
    DmaControl,
    Harness,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ProcState {
    Runnable,
    Sleeping,
    BlockedOnEvent,
    BlockedOnMutex(String),
    Done,
}

type Task = Pin<Box<dyn Future<Output = Result<(), SimError>>>>;

struct Proc {
    name: String,
    kind: ProcKind,
    daemon: bool,
    state: ProcState,
    task: Option<Task>,
    busy: Time,
    finished_at: Option<Time>,
    event_flag: bool,
}

enum Action {
    Resume(Pid),
    Call(Box<dyn FnOnce() -> Result<(), SimError>>),
}

struct Event {
    time: Time,
    seq: u64,
    action: Action,
}

impl PartialEq for Event {
    fn eq(&self, o: &Self) -> bool {
        (self.time, self.seq) == (o.time, o.seq)
    }
}
impl Eq for Event {}
impl PartialOrd for Event {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for Event {
    // Reversed so the max-heap pops the earliest (time, seq).
    fn cmp(&self, o: &Self) -> Ordering {
        (o.time, o.seq).cmp(&(self.time, self.seq))
    }
}

struct Inner {
    now: Cell<Time>,
    seq: Cell<u64>,
    current: Cell<Pid>,
    queue: RefCell<BinaryHeap<Event>>,
    procs: RefCell<Vec<Proc>>,
    digest: RefCell<FnvHasher>,
    fired: Cell<u64>,
    wake_latency: Time,
    tas_latency: Time,
}

/// Handle to one simulation instance. Cheap to clone; not `Send`.
#[derive(Clone)]
pub struct Sim(Rc<Inner>);

impl fmt::Debug for Sim {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Sim(t={})", self.now())
    }
}

impl Sim {
    pub fn new(wake_latency: Time, tas_latency: Time) -> Self {
        Sim(Rc::new(Inner {
            now: Cell::new(0),
            seq: Cell::new(0),
            current: Cell::new(usize::MAX),
            queue: RefCell::new(BinaryHeap::new()),
            procs: RefCell::new(Vec::new()),
            digest: RefCell::new(FnvHasher::default()),
            fired: Cell::new(0),
            wake_latency,
            tas_latency,
        }))
    }

    pub fn now(&self) -> Time {
        self.0.now.get()
    }

    pub fn wake_latency(&self) -> Time {
        self.0.wake_latency
    }

    /// Process being polled. Only meaningful inside a process.
    pub fn current(&self) -> Pid {
        self.0.current.get()
    }

    fn push(&self, time: Time, action: Action) -> Result<u64, SimError> {
        if time < self.now() {
            return Err(SimError::fault(format!("event scheduled at {time}, before now ({})", self.now())));
        }
        let seq = self.0.seq.get();
        self.0.seq.set(seq + 1);
        self.0.queue.borrow_mut().push(Event { time, seq, action });
        Ok(seq)
    }

    /// Resumes `pid` at `time`. Returns the event sequence number.
    pub fn schedule(&self, time: Time, pid: Pid) -> Result<u64, SimError> {
        self.push(time, Action::Resume(pid))
    }

    /// Runs `f` at `time` outside any process.
    pub fn at(&self, time: Time, f: impl FnOnce() -> Result<(), SimError> + 'static) -> Result<u64, SimError> {
        self.push(time, Action::Call(Box::new(f)))
    }

    pub fn spawn(
        &self,
        name: impl Into<String>,
        kind: ProcKind,
        daemon: bool,
        task: impl Future<Output = Result<(), SimError>> + 'static,
    ) -> Pid {
        let mut procs = self.0.procs.borrow_mut();
        let pid = procs.len();
        procs.push(Proc {
            name: name.into(),
            kind,
            daemon,
            state: ProcState::Runnable,
            task: Some(Box::pin(task)),
            busy: 0,
            finished_at: None,
            event_flag: false,
        });
        drop(procs);
        self.push(self.now(), Action::Resume(pid)).expect("spawn at current time");
        pid
    }

    pub fn name(&self, pid: Pid) -> String {
        self.0.procs.borrow()[pid].name.clone()
    }

    pub fn kind(&self, pid: Pid) -> ProcKind {
        self.0.procs.borrow()[pid].kind
    }

    pub fn state(&self, pid: Pid) -> ProcState {
        self.0.procs.borrow()[pid].state.clone()
    }

    fn set_state(&self, pid: Pid, s: ProcState) {
        self.0.procs.borrow_mut()[pid].state = s;
    }

    pub fn busy(&self, pid: Pid) -> Time {
        self.0.procs.borrow()[pid].busy
    }

    pub fn finished_at(&self, pid: Pid) -> Option<Time> {
        self.0.procs.borrow()[pid].finished_at
    }

    pub fn process_count(&self) -> usize {
        self.0.procs.borrow().len()
    }

    /// FNV digest over every fired event's (time, sequence, target).
    pub fn trace_digest(&self) -> u64 {
        self.0.digest.borrow().finish()
    }

    pub fn events_fired(&self) -> u64 {
        self.0.fired.get()
    }

    /// Idle wait of `cycles`.
    pub fn sleep(&self, cycles: Time) -> Sleep {
        Sleep { sim: self.clone(), cycles, until: None }
    }

    /// Busy wait of `cycles`, counted towards the process's busy time.
    pub fn work(&self, cycles: Time) -> Sleep {
        let pid = self.current();
        if pid != usize::MAX {
            self.0.procs.borrow_mut()[pid].busy += cycles;
        }
        self.sleep(cycles)
    }

    /// Parks the current process until another party calls [`Sim::unpark`].
    fn park(&self, state: ProcState) -> Park {
        Park { sim: self.clone(), state: Some(state) }
    }

    fn unpark(&self, pid: Pid, at: Time) {
        self.set_state(pid, ProcState::Runnable);
        self.schedule(at, pid).expect("wake in the future");
    }

    /// Blocks until an event is posted to the current process; a pending
    /// posted event is consumed immediately.
    pub async fn wait_event(&self) {
        let pid = self.current();
        {
            let mut procs = self.0.procs.borrow_mut();
            if std::mem::take(&mut procs[pid].event_flag) {
                return;
            }
        }
        self.park(ProcState::BlockedOnEvent).await;
    }

    /// Posts an event to `pid`: a blocked process resumes after the wake
    /// latency, a running one finds the flag at its next wait.
    pub fn post(&self, pid: Pid) {
        let blocked = {
            let mut procs = self.0.procs.borrow_mut();
            let p = &mut procs[pid];
            if p.state == ProcState::BlockedOnEvent {
                true
            } else {
                if p.state != ProcState::Done {
                    p.event_flag = true;
                }
                false
            }
        };
        if blocked {
            self.unpark(pid, self.now() + self.0.wake_latency);
        }
    }

    /// Processes events until no non-daemon process is alive, the queue
    /// empties, or `limit` is passed. Returns the final time.
    pub fn run(&self, limit: Time) -> Result<Time, SimError> {
        loop {
            if self.live_workers() == 0 {
                return Ok(self.now());
            }
            let ev = self.0.queue.borrow_mut().pop();
            let Some(ev) = ev else { break };
            if ev.time > limit {
                self.0.now.set(limit);
                self.0.queue.borrow_mut().push(ev);
                break;
            }
            self.0.now.set(ev.time);
            self.0.fired.set(self.0.fired.get() + 1);
            let target = match &ev.action {
                Action::Resume(p) => *p as u64,
                Action::Call(_) => u64::MAX,
            };
            {
                let mut d = self.0.digest.borrow_mut();
                d.write_u64(ev.time);
                d.write_u64(ev.seq);
                d.write_u64(target);
            }
            match ev.action {
                Action::Call(f) => f()?,
                Action::Resume(pid) => self.poll_process(pid)?,
            }
        }
        Err(SimError::Timeout { at: self.now(), blocked: self.blocked_report() })
    }

    /// Drops every pending event and unfinished task so that state captured
    /// by them is released.
    pub fn shutdown(&self) {
        let events = std::mem::take(&mut *self.0.queue.borrow_mut());
        drop(events);
        let tasks: Vec<_> = self.0.procs.borrow_mut().iter_mut().map(|p| p.task.take()).collect();
        drop(tasks);
    }

    fn live_workers(&self) -> usize {
        self.0.procs.borrow().iter().filter(|p| !p.daemon && p.state != ProcState::Done).count()
    }

    fn blocked_report(&self) -> Vec<String> {
        self.0
            .procs
            .borrow()
            .iter()
            .filter(|p| p.state != ProcState::Done && !(p.daemon && p.state == ProcState::BlockedOnEvent))
            .map(|p| format!("{} ({:?})", p.name, p.state))
            .collect()
    }

    fn poll_process(&self, pid: Pid) -> Result<(), SimError> {
        let task = {
            let mut procs = self.0.procs.borrow_mut();
            let p = &mut procs[pid];
            if p.state == ProcState::Done {
                return Err(SimError::fault(format!("resumed finished process {}", p.name)));
            }
            p.state = ProcState::Runnable;
            p.task.take()
        };
        let Some(mut task) = task else {
            return Err(SimError::fault(format!("re-entrant poll of process {pid}")));
        };
        self.0.current.set(pid);
        let mut cx = Context::from_waker(Waker::noop());
        let res = task.as_mut().poll(&mut cx);
        self.0.current.set(usize::MAX);
        let mut procs = self.0.procs.borrow_mut();
        match res {
            Poll::Pending => {
                procs[pid].task = Some(task);
                Ok(())
            }
            Poll::Ready(r) => {
                procs[pid].state = ProcState::Done;
                procs[pid].finished_at = Some(self.now());
                r
            }
        }
    }
}

pub struct Sleep {
    sim: Sim,
    cycles: Time,
    until: Option<Time>,
}

impl Future for Sleep {
    type Output = ();
    fn poll(mut self: Pin<&mut Self>, _: &mut Context<'_>) -> Poll<()> {
        match self.until {
            None if self.cycles == 0 => Poll::Ready(()),
            None => {
                let until = self.sim.now() + self.cycles;
                self.until = Some(until);
                let pid = self.sim.current();
                self.sim.set_state(pid, ProcState::Sleeping);
                self.sim.schedule(until, pid).expect("sleep ends in the future");
                Poll::Pending
            }
            Some(t) if self.sim.now() >= t => Poll::Ready(()),
            Some(_) => Poll::Pending,
        }
    }
}

struct Park {
    sim: Sim,
    state: Option<ProcState>,
}

impl Future for Park {
    type Output = ();
    fn poll(mut self: Pin<&mut Self>, _: &mut Context<'_>) -> Poll<()> {
        match self.state.take() {
            Some(s) => {
                let pid = self.sim.current();
                self.sim.set_state(pid, s);
                Poll::Pending
            }
            None => Poll::Ready(()),
        }
    }
}

/// Test-and-set mutex in L1 memory with FIFO hand-off to waiters.
pub struct SimMutex {
    name: String,
    holder: Cell<Option<Pid>>,
    waiters: RefCell<VecDeque<Pid>>,
    acquisitions: Cell<u64>,
}

impl SimMutex {
    pub fn new(name: impl Into<String>) -> Self {
        Self { name: name.into(), holder: Cell::new(None), waiters: RefCell::new(VecDeque::new()), acquisitions: Cell::new(0) }
    }

    pub fn holder(&self) -> Option<Pid> {
        self.holder.get()
    }

    pub fn acquisitions(&self) -> u64 {
        self.acquisitions.get()
    }

    pub async fn acquire(&self, sim: &Sim) -> Result<(), SimError> {
        let me = sim.current();
        if self.holder.get() == Some(me) {
            return Err(SimError::fault(format!("{} re-acquired mutex {}", sim.name(me), self.name)));
        }
        sim.sleep(sim.0.tas_latency).await;
        self.acquisitions.set(self.acquisitions.get() + 1);
        if self.holder.get().is_none() {
            self.holder.set(Some(me));
            return Ok(());
        }
        self.waiters.borrow_mut().push_back(me);
        sim.park(ProcState::BlockedOnMutex(self.name.clone())).await;
        debug_assert_eq!(self.holder.get(), Some(me));
        Ok(())
    }

    pub fn release(&self, sim: &Sim) -> Result<(), SimError> {
        let me = sim.current();
        if self.holder.get() != Some(me) {
            return Err(SimError::fault(format!("{} released mutex {} it does not hold", sim.name(me), self.name)));
        }
        let next = self.waiters.borrow_mut().pop_front();
        self.holder.set(next);
        if let Some(w) = next {
            sim.unpark(w, sim.now() + sim.wake_latency());
        }
        Ok(())
    }
}
