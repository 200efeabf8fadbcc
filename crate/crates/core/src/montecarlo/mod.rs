//! Reproducible pulse-train Monte Carlo.
//!
//! Whether a pulse produces any detection event is a Bernoulli process drawn
//! block-wise from geometric gaps; what happens in an active pulse is drawn from
//! the pulse's own counter-based random stream. Both engines share this
//! construction, so chunking, worker count and skipping cannot change results.

mod engine;
mod rng;
mod sampler;
mod tags;

use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

pub use rng::{RandomStream, BLOCK_PULSES};
pub use sampler::{FLAG_DARK, FLAG_NOISE, FLAG_PAIR, FLAG_V};
pub use tags::{read_tag_stream, write_tag_stream, TAG_HEADER_BYTES, TAG_MAGIC, TAG_RECORD_BYTES};

use crate::coincidence::{self, CoincidenceTally};
use crate::error::{Error, Result};
use crate::model::ExperimentConfig;
use engine::Engine;

/// Above this event probability skipping gains nothing and the naive walk is used.
pub const SKIP_LIMIT: f64 = 0.1;
/// Default pulses per parallel work unit.
pub const DEFAULT_CHUNK_PULSES: u64 = 1 << 26;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum Channel {
    Herald = 0,
    Signal1 = 1,
    Signal2 = 2,
}

impl Channel {
    pub const ALL: [Channel; 3] = [Channel::Herald, Channel::Signal1, Channel::Signal2];

    pub fn index(self) -> usize {
        self as usize
    }

    pub(crate) fn from_index(i: usize) -> Self {
        Self::ALL[i]
    }
}

/// One registered detection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TimeTag {
    pub channel: Channel,
    pub pulse_index: u64,
    /// Absolute time since pulse 0.
    pub time_fs: u64,
    /// `FLAG_*` bits describing the origin of the click.
    pub flags: u8,
}

/// Per-pulse counts: a coincidence is two channels registering in the same pulse.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct TallySet {
    pub pulses: u64,
    /// Herald, signal 1, signal 2.
    pub singles: [u64; 3],
    pub n_h1: u64,
    pub n_h2: u64,
    pub n_h12: u64,
    /// Both signal arms, with or without the herald.
    pub n_12: u64,
}

impl TallySet {
    fn record(&mut self, reg: [bool; 3]) {
        for (s, r) in self.singles.iter_mut().zip(reg) {
            *s += u64::from(r);
        }
        let [h, a, b] = reg;
        self.n_h1 += u64::from(h && a);
        self.n_h2 += u64::from(h && b);
        self.n_h12 += u64::from(h && a && b);
        self.n_12 += u64::from(a && b);
    }

    pub fn merge(&mut self, other: &TallySet) {
        self.pulses += other.pulses;
        for (a, b) in self.singles.iter_mut().zip(other.singles) {
            *a += b;
        }
        self.n_h1 += other.n_h1;
        self.n_h2 += other.n_h2;
        self.n_h12 += other.n_h12;
        self.n_12 += other.n_12;
    }

    pub fn n_h(&self) -> u64 {
        self.singles[0]
    }

    /// Herald with at least one signal arm.
    pub fn n_h_any(&self) -> u64 {
        self.n_h1 + self.n_h2 - self.n_h12
    }

    /// Counts for the triggered g² estimator; the coincidence window is the pulse period.
    pub fn coincidence(&self, cfg: &ExperimentConfig) -> CoincidenceTally {
        CoincidenceTally {
            n_h: self.n_h(),
            n_h1: self.n_h1,
            n_h2: self.n_h2,
            n_h12: self.n_h12,
            window_ps: cfg.laser.period_ns() * 1e3,
            electronic_delay_ns: 0.0,
            duration_s: self.pulses as f64 / cfg.laser.rep_rate_hz(),
        }
    }

    pub fn g2(&self) -> Result<(f64, f64)> {
        coincidence::g2_from_counts(&CoincidenceTally {
            n_h: self.n_h(),
            n_h1: self.n_h1,
            n_h2: self.n_h2,
            n_h12: self.n_h12,
            ..CoincidenceTally::default()
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sink {
    TalliesOnly,
    TimeTags,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimOptions {
    pub workers: usize,
    pub chunk_pulses: u64,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            workers: 1,
            chunk_pulses: DEFAULT_CHUNK_PULSES,
        }
    }
}

impl SimOptions {
    pub fn with_workers(workers: usize) -> Self {
        Self {
            workers,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimReport {
    pub tallies: TallySet,
    /// Time-sorted registered tags, when requested.
    pub tags: Option<Vec<TimeTag>>,
    /// Per-pulse probability of any detection event.
    pub p_any: f64,
    /// The skipping engine was requested but the naive walk ran instead.
    pub fell_back: bool,
    pub wall_time_s: f64,
}

impl SimReport {
    /// Simulated pulses per wall-clock second.
    pub fn pulses_per_second(&self) -> f64 {
        self.tallies.pulses as f64 / self.wall_time_s.max(1e-12)
    }
}

fn run_chunks(
    cfg: &ExperimentConfig,
    n_pulses: u64,
    seed: u64,
    naive: bool,
    tags: bool,
    opts: &SimOptions,
) -> Result<(TallySet, Option<Vec<TimeTag>>, f64)> {
    if n_pulses == 0 {
        return Err(Error::domain("pulses", "must be >= 1"));
    }
    if opts.workers == 0 || opts.chunk_pulses == 0 {
        return Err(Error::domain("workers", "workers and chunk size must be >= 1"));
    }
    let engine = Engine::new(cfg, seed)?;
    let chunks: Vec<(u64, u64)> = (0..n_pulses.div_ceil(opts.chunk_pulses))
        .map(|k| {
            let start = k * opts.chunk_pulses;
            (start, (start + opts.chunk_pulses).min(n_pulses))
        })
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.workers)
        .build()
        .map_err(|e| Error::domain("workers", e.to_string()))?;
    let outputs: Vec<Result<engine::Output>> =
        pool.install(|| chunks.par_iter().map(|&(s, e)| engine.run(s, e, naive, tags)).collect());
    let mut tally = TallySet::default();
    let mut stream = tags.then(Vec::new);
    for out in outputs {
        let out = out?;
        tally.merge(&out.tally);
        if let (Some(all), Some(part)) = (stream.as_mut(), out.tags) {
            all.extend(part);
        }
    }
    Ok((tally, stream, engine.p_any()))
}

/// Pulse-by-pulse simulation of `n_pulses` pulses.
pub fn simulate(cfg: &ExperimentConfig, n_pulses: u64, seed: u64, sink: Sink, opts: &SimOptions) -> Result<SimReport> {
    let start = Instant::now();
    let (tallies, tags, p_any) = run_chunks(cfg, n_pulses, seed, true, sink == Sink::TimeTags, opts)?;
    Ok(SimReport {
        tallies,
        tags,
        p_any,
        fell_back: false,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

/// Tallies-only simulation that visits only pulses with a detection event.
///
/// Output is identical to [`simulate`] for the same seed. When the event
/// probability exceeds [`SKIP_LIMIT`] the naive walk runs and `fell_back` is set.
pub fn simulate_skipping(cfg: &ExperimentConfig, n_pulses: u64, seed: u64, opts: &SimOptions) -> Result<SimReport> {
    let start = Instant::now();
    let p_any = Engine::new(cfg, seed)?.p_any();
    let fell_back = p_any > SKIP_LIMIT;
    if fell_back {
        log::warn!("event probability {p_any:.3} per pulse; skipping disabled");
    }
    let (tallies, _, p_any) = run_chunks(cfg, n_pulses, seed, fell_back, false, opts)?;
    Ok(SimReport {
        tallies,
        tags: None,
        p_any,
        fell_back,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

/// Simulates the pulse range `[start, end)` alone; merging contiguous ranges
/// reproduces a single run.
pub fn simulate_range(
    cfg: &ExperimentConfig,
    seed: u64,
    start: u64,
    end: u64,
    sink: Sink,
) -> Result<(TallySet, Option<Vec<TimeTag>>)> {
    let out = Engine::new(cfg, seed)?.run(start, end, false, sink == Sink::TimeTags)?;
    Ok((out.tally, out.tags))
}
