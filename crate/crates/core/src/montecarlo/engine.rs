use rand_distr::{Distribution, StandardNormal};

use super::rng::{RandomStream, BLOCK_PULSES};
use super::sampler::{PulseSampler, FLAG_DARK};
use super::{Channel, TallySet, TimeTag};
use crate::error::{Error, Result};
use crate::model::{ExperimentConfig, FWHM_PER_SIGMA};
use crate::photostat::PulseModel;

/// Last registered time per channel.
#[derive(Debug, Clone, Copy, Default)]
struct DeadTime {
    last: [Option<u128>; 3],
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    offset: u64,
    channel: u8,
    flags: u8,
}

#[derive(Debug, Default)]
pub(crate) struct Output {
    pub tally: TallySet,
    pub tags: Option<Vec<TimeTag>>,
}

#[derive(Debug, Clone)]
pub(crate) struct Engine {
    sampler: PulseSampler,
    stream: RandomStream,
    p_any: f64,
    period_fs: u64,
    dead_fs: [u64; 3],
    sigma_fs: [f64; 3],
    /// Inactive pulses after which no earlier click can hold a detector dead.
    quiet: u64,
}

impl Engine {
    pub fn new(cfg: &ExperimentConfig, seed: u64) -> Result<Self> {
        let model = PulseModel::new(cfg)?;
        let sampler = PulseSampler::new(&model);
        let period_fs = cfg.laser.period_fs();
        if period_fs < 2 {
            return Err(Error::domain("laser.rep_rate_MHz", "period below 2 fs"));
        }
        let d = &cfg.detectors;
        let dets = [&d.herald, &d.signal1, &d.signal2];
        let dead_fs = dets.map(|x| (x.dead_time_ns * 1e6).round() as u64);
        let sigma_fs = dets.map(|x| x.jitter_fwhm_ps * 1e3 / FWHM_PER_SIGMA);
        let quiet = dead_fs.iter().map(|&t| t.div_ceil(period_fs)).max().unwrap_or(0);
        Ok(Self {
            p_any: sampler.p_any(),
            sampler,
            stream: RandomStream::new(seed),
            period_fs,
            dead_fs,
            sigma_fs,
            quiet,
        })
    }

    pub fn p_any(&self) -> f64 {
        self.p_any
    }

    fn resolve(
        &self,
        pulse: u64,
        dead: &mut DeadTime,
        scratch: &mut Vec<Candidate>,
        out: Option<&mut Output>,
    ) -> Result<()> {
        let mut rng = self.stream.pulse(pulse);
        let ev = self.sampler.sample(&mut rng);
        let period = self.period_fs;
        let half = (period / 2) as f64;
        scratch.clear();
        for ch in 0..3 {
            if ev.photon[ch] != 0 {
                let z: f64 = StandardNormal.sample(&mut rng);
                let offset = (half + self.sigma_fs[ch] * z).round().clamp(0.0, (period - 1) as f64);
                scratch.push(Candidate {
                    offset: offset as u64,
                    channel: ch as u8,
                    flags: ev.photon[ch],
                });
            }
        }
        for ch in 0..3 {
            for _ in 0..ev.darks[ch] {
                let u: f64 = rand::Rng::random(&mut rng);
                scratch.push(Candidate {
                    offset: ((u * period as f64) as u64).min(period - 1),
                    channel: ch as u8,
                    flags: FLAG_DARK,
                });
            }
        }
        scratch.sort_by_key(|c| (c.offset, c.channel));
        // Wide enough for any pulse count; only emitted tags must fit in u64.
        let base = u128::from(pulse) * u128::from(period);
        let mut registered = [false; 3];
        let mut out = out;
        for c in scratch.iter() {
            let ch = c.channel as usize;
            let t = base + u128::from(c.offset);
            if let Some(last) = dead.last[ch] {
                if t - last < u128::from(self.dead_fs[ch]) {
                    continue;
                }
            }
            dead.last[ch] = Some(t);
            registered[ch] = true;
            if let Some(tags) = out.as_mut().and_then(|o| o.tags.as_mut()) {
                tags.push(TimeTag {
                    channel: Channel::from_index(ch),
                    pulse_index: pulse,
                    time_fs: u64::try_from(t).map_err(|_| Error::Overflow(pulse))?,
                    flags: c.flags,
                });
            }
        }
        if let Some(o) = out {
            o.tally.record(registered);
        }
        Ok(())
    }

    /// Earliest pulse from which simulating forward reproduces the dead-time state at `start`.
    fn warm_start(&self, start: u64) -> u64 {
        if self.quiet == 0 || start == 0 || self.p_any <= 0.0 {
            return start;
        }
        let mut later = start;
        let mut block = (start - 1) / BLOCK_PULSES;
        let mut buf = Vec::new();
        loop {
            buf.clear();
            self.stream.active_pulses(block, self.p_any, &mut buf);
            for &a in buf.iter().rev().filter(|&&a| a < start) {
                if later - a > self.quiet {
                    return later;
                }
                later = a;
            }
            if block == 0 {
                return later;
            }
            block -= 1;
        }
    }

    /// Simulates pulses `[start, end)`.
    ///
    /// `naive` walks every pulse and resolves the active ones; otherwise only the
    /// active pulses are visited. Both produce identical output.
    pub fn run(&self, start: u64, end: u64, naive: bool, tags: bool) -> Result<Output> {
        let mut out = Output {
            tally: TallySet::default(),
            tags: tags.then(Vec::new),
        };
        out.tally.pulses = end.saturating_sub(start);
        if start >= end {
            return Ok(out);
        }
        let mut dead = DeadTime::default();
        let mut scratch = Vec::with_capacity(8);
        let mut active = Vec::new();

        let warm = self.warm_start(start);
        if warm < start {
            for block in warm / BLOCK_PULSES..=(start - 1) / BLOCK_PULSES {
                active.clear();
                self.stream.active_pulses(block, self.p_any, &mut active);
                for &p in active.iter().filter(|&&p| p >= warm && p < start) {
                    self.resolve(p, &mut dead, &mut scratch, None)?;
                }
            }
        }

        for block in start / BLOCK_PULSES..=(end - 1) / BLOCK_PULSES {
            active.clear();
            self.stream.active_pulses(block, self.p_any, &mut active);
            let lo = start.max(block * BLOCK_PULSES);
            let hi = end.min((block + 1) * BLOCK_PULSES);
            let mut next = active.iter().copied().filter(|&p| p >= lo && p < hi).peekable();
            if naive {
                for pulse in lo..hi {
                    if next.peek() == Some(&pulse) {
                        next.next();
                        self.resolve(pulse, &mut dead, &mut scratch, Some(&mut out))?;
                    }
                }
            } else {
                for pulse in next {
                    self.resolve(pulse, &mut dead, &mut scratch, Some(&mut out))?;
                }
            }
        }
        Ok(out)
    }
}
