//! In-process SPMD harness: logical ranks exchanging point-to-point messages.
//!
//! Every rank runs the same async program against its own [`Comm`]. The
//! deterministic scheduler polls ranks round-robin on the calling thread and
//! is the reference mode; the adversarial scheduler additionally holds sent
//! messages in flight and delivers them in a seeded random cross-pair order
//! (FIFO within each pair); the threaded scheduler gives every rank an OS
//! thread.

pub mod ledger;

use std::collections::{HashMap, VecDeque};
use std::future::Future;
use std::pin::Pin;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::task::{Context, Poll, Waker};
use std::time::{Duration, Instant};

use futures::future::poll_fn;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
pub use ledger::{ClockKind, CostLedger, CounterSink, LedgerRow, MemoryClass, Phase, PhaseCounters, RankLedger};

/// Bytes on the wire per complex sample.
pub const BYTES_PER_SAMPLE: u64 = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Scheduler {
    Deterministic,
    Adversarial { seed: u64 },
    Threaded,
}

impl Scheduler {
    pub fn clock(&self) -> ClockKind {
        match self {
            Scheduler::Threaded => ClockKind::Wall,
            _ => ClockKind::Virtual,
        }
    }
}

/// Message matching key. Receivers match on `(source rank, tag)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Tag {
    pub phase: Phase,
    pub kind: u32,
    pub level: u32,
    pub key: u64,
    pub part: u64,
}

impl Tag {
    pub fn new(phase: Phase, kind: u32) -> Self {
        Self {
            phase,
            kind,
            level: 0,
            key: 0,
            part: 0,
        }
    }

    pub fn level(mut self, level: u32) -> Self {
        self.level = level;
        self
    }

    pub fn key(mut self, key: u64) -> Self {
        self.key = key;
        self
    }

    pub fn part(mut self, part: u64) -> Self {
        self.part = part;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MessageDescriptor {
    pub source: usize,
    pub destination: usize,
    pub tag: Tag,
    pub bytes: u64,
}

struct Envelope {
    src: usize,
    tag: Tag,
    payload: Vec<Complex64>,
}

#[derive(Default)]
struct Mailbox {
    queues: HashMap<(usize, Tag), VecDeque<Vec<Complex64>>>,
}

impl Mailbox {
    fn take(&mut self, src: usize, tag: Tag) -> Option<Vec<Complex64>> {
        let q = self.queues.get_mut(&(src, tag))?;
        let v = q.pop_front();
        if q.is_empty() {
            self.queues.remove(&(src, tag));
        }
        v
    }
}

struct Shared {
    n: usize,
    hold_in_flight: bool,
    mailboxes: Vec<Mutex<Mailbox>>,
    /// Per `(src, dst)` pair, indexed `src * n + dst`.
    in_flight: Mutex<Vec<VecDeque<Envelope>>>,
    wakers: Vec<Mutex<Option<Waker>>>,
    waiting: Vec<AtomicBool>,
    events: AtomicU64,
    poisoned: AtomicBool,
    sinks: Vec<Arc<CounterSink>>,
    audit: Option<Mutex<Vec<MessageDescriptor>>>,
}

impl Shared {
    fn deliver(&self, dst: usize, env: Envelope) {
        self.mailboxes[dst]
            .lock()
            .unwrap()
            .queues
            .entry((env.src, env.tag))
            .or_default()
            .push_back(env.payload);
        self.events.fetch_add(1, Ordering::SeqCst);
        if let Some(w) = self.wakers[dst].lock().unwrap().take() {
            w.wake();
        }
    }

    fn in_flight_count(&self) -> usize {
        self.in_flight.lock().unwrap().iter().map(|q| q.len()).sum()
    }

    fn wake_all(&self) {
        for w in &self.wakers {
            if let Some(w) = w.lock().unwrap().take() {
                w.wake();
            }
        }
    }

    fn leftovers(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (dst, mb) in self.mailboxes.iter().enumerate() {
            let mb = mb.lock().unwrap();
            let mut keys: Vec<_> = mb.queues.iter().collect();
            keys.sort_by_key(|((s, t), _)| (*s, *t));
            for ((src, tag), q) in keys {
                for p in q {
                    out.push(format!("{src}->{dst} {tag:?} ({} samples)", p.len()));
                }
            }
        }
        for (i, q) in self.in_flight.lock().unwrap().iter().enumerate() {
            for e in q {
                out.push(format!("{}->{} {:?} in flight", e.src, i % self.n, e.tag));
            }
        }
        out
    }
}

/// Completion handle of an eager (buffered) send.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SendHandle {
    pub bytes: u64,
}

impl SendHandle {
    pub fn is_complete(&self) -> bool {
        true
    }
}

/// A rank's endpoint and counter sink.
#[derive(Clone)]
pub struct Comm {
    rank: usize,
    shared: Arc<Shared>,
}

impl Comm {
    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn size(&self) -> usize {
        self.shared.n
    }

    pub fn sink(&self) -> &CounterSink {
        &self.shared.sinks[self.rank]
    }

    /// Non-blocking send; the payload is buffered immediately. Sends to self
    /// are delivered without touching the message counters.
    pub fn isend(&self, dst: usize, tag: Tag, payload: Vec<Complex64>) -> Result<SendHandle> {
        if dst >= self.shared.n {
            return Err(Error::Rank {
                rank: self.rank,
                message: format!("send to nonexistent rank {dst}"),
            });
        }
        let bytes = payload.len() as u64 * BYTES_PER_SAMPLE;
        let env = Envelope {
            src: self.rank,
            tag,
            payload,
        };
        if dst == self.rank {
            self.shared.deliver(dst, env);
            return Ok(SendHandle { bytes: 0 });
        }
        self.sink().add_sent(tag.phase, 1, bytes);
        if let Some(log) = &self.shared.audit {
            log.lock().unwrap().push(MessageDescriptor {
                source: self.rank,
                destination: dst,
                tag,
                bytes,
            });
        }
        if self.shared.hold_in_flight {
            self.shared.in_flight.lock().unwrap()[self.rank * self.shared.n + dst].push_back(env);
            self.shared.events.fetch_add(1, Ordering::SeqCst);
        } else {
            self.shared.deliver(dst, env);
        }
        Ok(SendHandle { bytes })
    }

    fn take(&self, src: usize, tag: Tag) -> Option<Vec<Complex64>> {
        let v = self.shared.mailboxes[self.rank].lock().unwrap().take(src, tag)?;
        if src != self.rank {
            self.sink()
                .add_received(tag.phase, 1, v.len() as u64 * BYTES_PER_SAMPLE);
        }
        self.shared.events.fetch_add(1, Ordering::SeqCst);
        Some(v)
    }

    pub fn try_recv(&self, src: usize, tag: Tag) -> Option<Vec<Complex64>> {
        self.take(src, tag)
    }

    fn poll_any(&self, cx: &mut Context<'_>, expected: &[(usize, Tag)]) -> Poll<Result<(usize, Vec<Complex64>)>> {
        if self.shared.poisoned.load(Ordering::SeqCst) {
            return Poll::Ready(Err(Error::Deadlock(format!("rank {} aborted", self.rank))));
        }
        for round in 0..2 {
            for (i, (src, tag)) in expected.iter().enumerate() {
                if let Some(v) = self.take(*src, *tag) {
                    self.shared.waiting[self.rank].store(false, Ordering::SeqCst);
                    return Poll::Ready(Ok((i, v)));
                }
            }
            if round == 0 {
                // register before the second look so no delivery is missed
                *self.shared.wakers[self.rank].lock().unwrap() = Some(cx.waker().clone());
                self.shared.waiting[self.rank].store(true, Ordering::SeqCst);
            }
        }
        Poll::Pending
    }

    pub async fn recv(&self, src: usize, tag: Tag) -> Result<Vec<Complex64>> {
        let expected = [(src, tag)];
        poll_fn(|cx| self.poll_any(cx, &expected)).await.map(|(_, v)| v)
    }

    /// Waits for whichever of `expected` arrives first; returns its index.
    pub async fn wait_any(&self, expected: &[(usize, Tag)]) -> Result<(usize, Vec<Complex64>)> {
        if expected.is_empty() {
            return Err(Error::Protocol("wait_any on an empty set".into()));
        }
        poll_fn(|cx| self.poll_any(cx, expected)).await
    }

    pub fn record(&self, phase: Phase, flops: u64) {
        self.sink().add_flops(phase, flops);
    }

    /// Starts a wall-clock interval for `phase`, closed when the guard drops.
    pub fn timer(&self, phase: Phase) -> PhaseTimer<'_> {
        PhaseTimer {
            sink: self.sink(),
            phase,
            start: Instant::now(),
        }
    }
}

pub struct PhaseTimer<'a> {
    sink: &'a CounterSink,
    phase: Phase,
    start: Instant,
}

impl Drop for PhaseTimer<'_> {
    fn drop(&mut self) {
        self.sink
            .add_nanos(self.phase, self.start.elapsed().as_nanos() as u64);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WorldOptions {
    pub scheduler: Scheduler,
    /// Keep a log of every cross-rank message.
    pub audit: bool,
}

impl Default for WorldOptions {
    fn default() -> Self {
        Self {
            scheduler: Scheduler::Deterministic,
            audit: false,
        }
    }
}

pub struct WorldOutput<T> {
    pub results: Vec<T>,
    pub ledger: CostLedger,
    pub log: Vec<MessageDescriptor>,
}

fn rank_error(rank: usize, e: Error) -> Error {
    match e {
        Error::Rank { .. } | Error::Deadlock(_) | Error::Protocol(_) => e,
        other => Error::Rank {
            rank,
            message: other.to_string(),
        },
    }
}

/// Runs `program` on `n` ranks and collects each rank's result.
pub fn spawn_world<T, F, Fut>(n: usize, options: WorldOptions, program: F) -> Result<WorldOutput<T>>
where
    T: Send,
    F: Fn(Comm) -> Fut + Sync,
    Fut: Future<Output = Result<T>> + Send,
{
    if n == 0 {
        return Err(Error::InvalidInput("world needs at least one rank".into()));
    }
    let sinks: Vec<Arc<CounterSink>> = (0..n).map(|r| Arc::new(CounterSink::new(r))).collect();
    let shared = Arc::new(Shared {
        n,
        hold_in_flight: matches!(options.scheduler, Scheduler::Adversarial { .. }),
        mailboxes: (0..n).map(|_| Mutex::default()).collect(),
        in_flight: Mutex::new((0..n * n).map(|_| VecDeque::new()).collect()),
        wakers: (0..n).map(|_| Mutex::new(None)).collect(),
        waiting: (0..n).map(|_| AtomicBool::new(false)).collect(),
        events: AtomicU64::new(0),
        poisoned: AtomicBool::new(false),
        sinks: sinks.clone(),
        audit: options.audit.then(|| Mutex::new(Vec::new())),
    });
    let comms: Vec<Comm> = (0..n)
        .map(|rank| Comm {
            rank,
            shared: shared.clone(),
        })
        .collect();

    let results = match options.scheduler {
        Scheduler::Deterministic => run_polled(&shared, comms, &program, None)?,
        Scheduler::Adversarial { seed } => run_polled(&shared, comms, &program, Some(seed))?,
        Scheduler::Threaded => run_threaded(&shared, comms, &program)?,
    };

    let leftovers = shared.leftovers();
    if !leftovers.is_empty() {
        return Err(Error::Protocol(format!(
            "{} unmatched message(s) at teardown: {}",
            leftovers.len(),
            leftovers.join("; ")
        )));
    }
    let log = shared
        .audit
        .as_ref()
        .map(|l| std::mem::take(&mut *l.lock().unwrap()))
        .unwrap_or_default();
    Ok(WorldOutput {
        results,
        ledger: CostLedger::from_sinks(&sinks, options.scheduler.clock()),
        log,
    })
}

type BoxedRank<'a, T> = Pin<Box<dyn Future<Output = Result<T>> + 'a>>;

fn run_polled<'a, T, F, Fut>(shared: &Shared, comms: Vec<Comm>, program: &'a F, seed: Option<u64>) -> Result<Vec<T>>
where
    F: Fn(Comm) -> Fut,
    Fut: Future<Output = Result<T>> + 'a,
{
    let n = comms.len();
    let mut futures: Vec<Option<BoxedRank<'a, T>>> = comms
        .into_iter()
        .map(|c| Some(Box::pin(program(c)) as BoxedRank<'a, T>))
        .collect();
    let mut results: Vec<Option<T>> = (0..n).map(|_| None).collect();
    let mut rng = seed.map(ChaCha8Rng::seed_from_u64);
    let waker = futures::task::noop_waker();
    let mut cx = Context::from_waker(&waker);
    let mut remaining = n;
    while remaining > 0 {
        let before = shared.events.load(Ordering::SeqCst);
        let mut finished = false;
        for rank in 0..n {
            let Some(fut) = futures[rank].as_mut() else {
                continue;
            };
            if let Poll::Ready(out) = fut.as_mut().poll(&mut cx) {
                futures[rank] = None;
                remaining -= 1;
                finished = true;
                results[rank] = Some(out.map_err(|e| rank_error(rank, e))?);
            }
        }
        if let Some(rng) = rng.as_mut() {
            let mut queues = shared.in_flight.lock().unwrap();
            let pending: usize = queues.iter().map(|q| q.len()).sum();
            if pending > 0 {
                let count = rng.gen_range(1..=pending);
                for _ in 0..count {
                    let nonempty: Vec<usize> = (0..queues.len()).filter(|&i| !queues[i].is_empty()).collect();
                    let pick = nonempty[rng.gen_range(0..nonempty.len())];
                    let env = queues[pick].pop_front().unwrap();
                    shared.deliver(pick % n, env);
                }
            }
        }
        let progressed = finished || shared.events.load(Ordering::SeqCst) != before || shared.in_flight_count() > 0;
        if remaining > 0 && !progressed {
            let blocked: Vec<usize> = (0..n).filter(|&r| futures[r].is_some()).collect();
            return Err(Error::Deadlock(format!(
                "ranks {blocked:?} wait for messages that were never sent"
            )));
        }
    }
    Ok(results.into_iter().map(|r| r.unwrap()).collect())
}

fn run_threaded<T, F, Fut>(shared: &Arc<Shared>, comms: Vec<Comm>, program: &F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(Comm) -> Fut + Sync,
    Fut: Future<Output = Result<T>> + Send,
{
    let n = comms.len();
    let done: Vec<AtomicBool> = (0..n).map(|_| AtomicBool::new(false)).collect();
    let outcome = std::thread::scope(|scope| {
        let handles: Vec<_> = comms
            .into_iter()
            .map(|comm| {
                let done = &done;
                scope.spawn(move || {
                    let rank = comm.rank;
                    let out = futures::executor::block_on(program(comm));
                    if out.is_err() {
                        shared.poisoned.store(true, Ordering::SeqCst);
                        shared.wake_all();
                    }
                    done[rank].store(true, Ordering::SeqCst);
                    shared.events.fetch_add(1, Ordering::SeqCst);
                    out.map_err(|e| rank_error(rank, e))
                })
            })
            .collect();

        // watchdog: every live rank parked and nothing moving => deadlock
        let mut last = shared.events.load(Ordering::SeqCst);
        let mut stalled_since = Instant::now();
        let mut deadlock = false;
        while !done.iter().all(|d| d.load(Ordering::SeqCst)) {
            std::thread::sleep(Duration::from_millis(5));
            let now = shared.events.load(Ordering::SeqCst);
            let all_waiting = (0..n).all(|r| done[r].load(Ordering::SeqCst) || shared.waiting[r].load(Ordering::SeqCst));
            if now != last || !all_waiting {
                last = now;
                stalled_since = Instant::now();
            } else if stalled_since.elapsed() > Duration::from_millis(500) {
                deadlock = true;
                shared.poisoned.store(true, Ordering::SeqCst);
                shared.wake_all();
                break;
            }
        }
        let results: Vec<Result<T>> = handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(Error::Protocol("rank thread panicked".into()))))
            .collect();
        (results, deadlock)
    });
    let (results, deadlock) = outcome;
    if deadlock {
        return Err(Error::Deadlock("all live ranks blocked in receive".into()));
    }
    results.into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const SCHEDULERS: [Scheduler; 3] = [
        Scheduler::Deterministic,
        Scheduler::Adversarial { seed: 7 },
        Scheduler::Threaded,
    ];

    fn tag(part: u64) -> Tag {
        Tag::new(Phase::Setup, 0).part(part)
    }

    #[test]
    fn echo() {
        for s in SCHEDULERS {
            let out = spawn_world(1, WorldOptions { scheduler: s, audit: false }, |c| async move { Ok(c.rank() + 41) }).unwrap();
            assert_eq!(out.results, vec![41]);
        }
    }

    #[test]
    fn ring_token() {
        for s in SCHEDULERS {
            let out = spawn_world(4, WorldOptions { scheduler: s, audit: false }, |c| async move {
                let (me, n) = (c.rank(), c.size());
                let mut visits = Vec::new();
                if me == 0 {
                    c.isend(1, tag(0), vec![Complex64::new(0.0, 0.0)])?;
                    let t = c.recv(n - 1, tag(0)).await?;
                    visits.extend(t.iter().map(|v| v.re as usize));
                    visits.push(0);
                } else {
                    let mut t = c.recv(me - 1, tag(0)).await?;
                    t.push(Complex64::new(me as f64, 0.0));
                    c.isend((me + 1) % n, tag(0), t)?;
                }
                Ok(visits)
            })
            .unwrap();
            assert_eq!(out.results[0], vec![0, 1, 2, 3, 0]);
        }
    }

    #[test]
    fn all_pairs() {
        for s in SCHEDULERS {
            let out = spawn_world(8, WorldOptions { scheduler: s, audit: true }, |c| async move {
                for d in 0..c.size() {
                    if d != c.rank() {
                        c.isend(d, Tag::new(Phase::M2L, 1), vec![Complex64::new(c.rank() as f64, 0.0); 3])?;
                    }
                }
                let mut got = 0;
                for src in 0..c.size() {
                    if src != c.rank() {
                        let v = c.recv(src, Tag::new(Phase::M2L, 1)).await?;
                        assert_eq!(v[0].re as usize, src);
                        got += 1;
                    }
                }
                Ok(got)
            })
            .unwrap();
            assert!(out.results.iter().all(|&g| g == 7));
            let t = out.ledger.phase_total(Phase::M2L);
            assert_eq!(t.messages, 56);
            assert_eq!(t.bytes, 56 * 48);
            assert!(out.ledger.conserved());
            assert_eq!(out.log.iter().map(|d| d.bytes).sum::<u64>(), t.bytes);
        }
    }

    #[test]
    fn self_send_not_counted() {
        let out = spawn_world(2, WorldOptions::default(), |c| async move {
            c.isend(c.rank(), tag(1), vec![Complex64::new(1.0, 0.0)])?;
            Ok(c.recv(c.rank(), tag(1)).await?.len())
        })
        .unwrap();
        assert_eq!(out.results, vec![1, 1]);
        assert_eq!(out.ledger.total().messages, 0);
    }

    #[test]
    fn fifo_within_pair() {
        for s in SCHEDULERS {
            let out = spawn_world(2, WorldOptions { scheduler: s, audit: false }, |c| async move {
                if c.rank() == 0 {
                    for i in 0..20 {
                        c.isend(1, tag(2), vec![Complex64::new(i as f64, 0.0)])?;
                    }
                    Ok(vec![])
                } else {
                    let mut seen = Vec::new();
                    for _ in 0..20 {
                        seen.push(c.recv(0, tag(2)).await?[0].re as i32);
                    }
                    Ok(seen)
                }
            })
            .unwrap();
            assert_eq!(out.results[1], (0..20).collect::<Vec<_>>());
        }
    }

    #[test]
    fn missing_sender_deadlocks() {
        for s in SCHEDULERS {
            let r = spawn_world(2, WorldOptions { scheduler: s, audit: false }, |c| async move {
                if c.rank() == 1 {
                    c.recv(0, tag(3)).await?;
                }
                Ok(())
            });
            assert!(matches!(r, Err(Error::Deadlock(_))), "{s:?}");
        }
    }

    #[test]
    fn unmatched_message_is_protocol_error() {
        let r = spawn_world(2, WorldOptions::default(), |c| async move {
            if c.rank() == 0 {
                c.isend(1, tag(4), vec![])?;
            }
            Ok(())
        });
        assert!(matches!(r, Err(Error::Protocol(_))));
    }

    #[test]
    fn rank_error_is_tagged() {
        let r: Result<WorldOutput<()>> = spawn_world(3, WorldOptions::default(), |c| async move {
            if c.rank() == 2 {
                return Err(Error::InvalidInput("boom".into()));
            }
            Ok(())
        });
        assert!(matches!(r, Err(Error::Rank { rank: 2, .. })));
    }

    #[test]
    fn wait_any_returns_first_available() {
        let out = spawn_world(3, WorldOptions::default(), |c| async move {
            match c.rank() {
                0 => {
                    let (i, _) = c.wait_any(&[(1, tag(5)), (2, tag(5))]).await?;
                    let (j, _) = c.wait_any(&[(1, tag(5)), (2, tag(5))]).await?;
                    Ok(i + j)
                }
                r => {
                    c.isend(0, tag(5), vec![])?;
                    Ok(r)
                }
            }
        })
        .unwrap();
        assert_eq!(out.results[0], 1);
    }
}
