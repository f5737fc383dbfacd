use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    Setup,
    C2M,
    M2M,
    M2L,
    L2L,
    L2O,
    Near,
}

impl Phase {
    pub const ALL: [Phase; 7] = [
        Phase::Setup,
        Phase::C2M,
        Phase::M2M,
        Phase::M2L,
        Phase::L2L,
        Phase::L2O,
        Phase::Near,
    ];

    fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Phase::Setup => "setup",
            Phase::C2M => "c2m",
            Phase::M2M => "m2m",
            Phase::M2L => "m2l",
            Phase::L2L => "l2l",
            Phase::L2O => "l2o",
            Phase::Near => "near",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MemoryClass {
    TreeStorage,
    TranslationOperators,
    Buffers,
    Temporaries,
}

impl MemoryClass {
    pub const ALL: [MemoryClass; 4] = [
        MemoryClass::TreeStorage,
        MemoryClass::TranslationOperators,
        MemoryClass::Buffers,
        MemoryClass::Temporaries,
    ];
}

/// How `seconds` were obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClockKind {
    /// Cost model: 1 ns per flop, 1 µs per message, 1 ns per byte.
    Virtual,
    Wall,
}

pub const VIRTUAL_SECONDS_PER_FLOP: f64 = 1e-9;
pub const VIRTUAL_SECONDS_PER_MESSAGE: f64 = 1e-6;
pub const VIRTUAL_SECONDS_PER_BYTE: f64 = 1e-9;

#[derive(Debug, Default)]
struct AtomicCounters {
    flops: AtomicU64,
    messages: AtomicU64,
    bytes: AtomicU64,
    recv_messages: AtomicU64,
    recv_bytes: AtomicU64,
    nanos: AtomicU64,
}

/// Live per-rank counters. All updates are atomic so a rank may record from
/// several threads.
#[derive(Debug)]
pub struct CounterSink {
    rank: usize,
    phases: [AtomicCounters; 7],
    memory_peak: [AtomicU64; 4],
    memory_now: Mutex<[u64; 4]>,
}

impl CounterSink {
    pub fn new(rank: usize) -> Self {
        Self {
            rank,
            phases: Default::default(),
            memory_peak: Default::default(),
            memory_now: Mutex::new([0; 4]),
        }
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn add_flops(&self, phase: Phase, flops: u64) {
        self.phases[phase.index()].flops.fetch_add(flops, Ordering::Relaxed);
    }

    pub fn add_sent(&self, phase: Phase, messages: u64, bytes: u64) {
        let c = &self.phases[phase.index()];
        c.messages.fetch_add(messages, Ordering::Relaxed);
        c.bytes.fetch_add(bytes, Ordering::Relaxed);
    }

    pub fn add_received(&self, phase: Phase, messages: u64, bytes: u64) {
        let c = &self.phases[phase.index()];
        c.recv_messages.fetch_add(messages, Ordering::Relaxed);
        c.recv_bytes.fetch_add(bytes, Ordering::Relaxed);
    }

    pub fn add_nanos(&self, phase: Phase, nanos: u64) {
        self.phases[phase.index()].nanos.fetch_add(nanos, Ordering::Relaxed);
    }

    /// Records a high-water mark for `class`.
    pub fn peak(&self, class: MemoryClass, bytes: u64) {
        self.memory_peak[class as usize].fetch_max(bytes, Ordering::Relaxed);
    }

    pub fn alloc(&self, class: MemoryClass, bytes: u64) {
        let mut now = self.memory_now.lock().unwrap();
        now[class as usize] += bytes;
        self.peak(class, now[class as usize]);
    }

    pub fn free(&self, class: MemoryClass, bytes: u64) {
        let mut now = self.memory_now.lock().unwrap();
        now[class as usize] = now[class as usize].saturating_sub(bytes);
    }

    pub fn snapshot(&self, clock: ClockKind) -> RankLedger {
        let mut phases = BTreeMap::new();
        for phase in Phase::ALL {
            let c = &self.phases[phase.index()];
            let mut pc = PhaseCounters {
                flops: c.flops.load(Ordering::Relaxed),
                messages: c.messages.load(Ordering::Relaxed),
                bytes: c.bytes.load(Ordering::Relaxed),
                recv_messages: c.recv_messages.load(Ordering::Relaxed),
                recv_bytes: c.recv_bytes.load(Ordering::Relaxed),
                seconds: 0.0,
            };
            pc.seconds = match clock {
                ClockKind::Virtual => pc.virtual_seconds(),
                ClockKind::Wall => c.nanos.load(Ordering::Relaxed) as f64 * 1e-9,
            };
            phases.insert(phase, pc);
        }
        let memory = MemoryClass::ALL
            .iter()
            .map(|&m| (m, self.memory_peak[m as usize].load(Ordering::Relaxed)))
            .collect();
        RankLedger {
            rank: self.rank,
            phases,
            memory_peak: memory,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseCounters {
    pub flops: u64,
    /// Sent point-to-point messages (self-sends excluded).
    pub messages: u64,
    pub bytes: u64,
    pub recv_messages: u64,
    pub recv_bytes: u64,
    pub seconds: f64,
}

impl PhaseCounters {
    pub fn virtual_seconds(&self) -> f64 {
        self.flops as f64 * VIRTUAL_SECONDS_PER_FLOP
            + (self.messages + self.recv_messages) as f64 * VIRTUAL_SECONDS_PER_MESSAGE
            + (self.bytes + self.recv_bytes) as f64 * VIRTUAL_SECONDS_PER_BYTE
    }

    fn add(&mut self, o: &PhaseCounters) {
        self.flops += o.flops;
        self.messages += o.messages;
        self.bytes += o.bytes;
        self.recv_messages += o.recv_messages;
        self.recv_bytes += o.recv_bytes;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankLedger {
    pub rank: usize,
    pub phases: BTreeMap<Phase, PhaseCounters>,
    pub memory_peak: BTreeMap<MemoryClass, u64>,
}

/// Per-phase, per-rank counters of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostLedger {
    pub n_ranks: usize,
    pub clock: ClockKind,
    pub ranks: Vec<RankLedger>,
}

/// One row of the CSV table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerRow {
    pub run_id: String,
    pub n_p: usize,
    pub phase: String,
    pub seconds: f64,
    pub flops: u64,
    pub messages: u64,
    pub bytes: u64,
}

impl CostLedger {
    pub fn from_sinks(sinks: &[std::sync::Arc<CounterSink>], clock: ClockKind) -> Self {
        Self {
            n_ranks: sinks.len(),
            clock,
            ranks: sinks.iter().map(|s| s.snapshot(clock)).collect(),
        }
    }

    /// Counters summed over ranks; `seconds` is the slowest rank's.
    pub fn phase_total(&self, phase: Phase) -> PhaseCounters {
        let mut total = PhaseCounters::default();
        for r in &self.ranks {
            if let Some(c) = r.phases.get(&phase) {
                total.add(c);
                total.seconds = total.seconds.max(c.seconds);
            }
        }
        total
    }

    pub fn total(&self) -> PhaseCounters {
        let mut total = PhaseCounters::default();
        for phase in Phase::ALL {
            let p = self.phase_total(phase);
            total.add(&p);
            total.seconds += p.seconds;
        }
        total
    }

    /// Largest per-rank peak for each memory class.
    pub fn memory_peak(&self) -> BTreeMap<MemoryClass, u64> {
        let mut out = BTreeMap::new();
        for r in &self.ranks {
            for (c, b) in &r.memory_peak {
                let e = out.entry(*c).or_insert(0);
                *e = (*e).max(*b);
            }
        }
        out
    }

    /// Checks that every phase received exactly what it sent.
    pub fn conserved(&self) -> bool {
        Phase::ALL.iter().all(|&p| {
            let t = self.phase_total(p);
            t.messages == t.recv_messages && t.bytes == t.recv_bytes
        })
    }

    pub fn rows(&self, run_id: &str) -> Vec<LedgerRow> {
        Phase::ALL
            .iter()
            .map(|&p| {
                let t = self.phase_total(p);
                LedgerRow {
                    run_id: run_id.to_string(),
                    n_p: self.n_ranks,
                    phase: p.to_string(),
                    seconds: t.seconds,
                    flops: t.flops,
                    messages: t.messages,
                    bytes: t.bytes,
                }
            })
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn write_csv<W: Write>(&self, out: W, run_id: &str) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for row in self.rows(run_id) {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }
}
