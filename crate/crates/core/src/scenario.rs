//! Scenario sweeps shared by the command-line runner and the tests.

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::coincidence::{self, g2_from_rates};
use crate::error::{Error, Result};
use crate::model::{self, targets, ExperimentConfig, ScenarioId, Stage};
use crate::montecarlo::{self, SimOptions, Sink};
use crate::photostat::{self, PulseModel};

/// Analytic error bars correspond to this many pulses unless a budget is given.
pub const REFERENCE_PULSES: u64 = 6_000_000_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EngineKind {
    Analytic,
    MonteCarlo,
}

impl EngineKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EngineKind::Analytic => "analytic",
            EngineKind::MonteCarlo => "montecarlo",
        }
    }
}

impl FromStr for EngineKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "analytic" => Ok(EngineKind::Analytic),
            "montecarlo" => Ok(EngineKind::MonteCarlo),
            _ => Err(format!("unknown engine `{s}`")),
        }
    }
}

impl fmt::Display for EngineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Sweep grid of a scenario: write delay (fs) for `fig2_absorption`, storage time
/// (ps) otherwise. `fig3_histogram` and `custom` use a single storage time.
pub fn default_grid(id: ScenarioId, cfg: &ExperimentConfig) -> Vec<f64> {
    match id {
        ScenarioId::Fig2Absorption => (-40..=40).map(|i| f64::from(i) * 25.0).collect(),
        // Two points on the noise floor pin the offset of the decay fit.
        ScenarioId::Fig2Readout => vec![0.0, 2.0, 4.0, 6.0, 8.0, 10.0, 20.0, 30.0],
        ScenarioId::Fig4G2 => (1..=10).map(|i| f64::from(i) * 0.5).collect(),
        ScenarioId::Fig3Histogram => vec![targets::OPERATING_TAU_PS],
        ScenarioId::Custom => vec![cfg.storage_time_ps],
    }
}

pub fn columns(id: ScenarioId) -> &'static [&'static str] {
    match id {
        ScenarioId::Fig2Absorption => &["delay_fs", "transmission", "err"],
        ScenarioId::Fig2Readout => &["tau_ps", "coinc_cps", "err", "noise_cps", "noise_err"],
        ScenarioId::Fig3Histogram => &["delay_ns", "counts"],
        ScenarioId::Fig4G2 => &["tau_ps", "g2", "sigma"],
        ScenarioId::Custom => &["tau_ps", "herald_cps", "coinc_cps", "g2", "sigma"],
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub id: ScenarioId,
    pub grid: Vec<f64>,
    pub engine: EngineKind,
    /// Pulses per grid point; for the analytic engine, the budget the error bars refer to.
    pub pulses: u64,
    pub seed: u64,
}

impl Scenario {
    pub fn new(id: ScenarioId, cfg: &ExperimentConfig, engine: EngineKind, pulses: u64, seed: u64) -> Self {
        Self {
            id,
            grid: default_grid(id, cfg),
            engine,
            pulses,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.grid.is_empty() {
            return Err(Error::domain("grid", "must not be empty"));
        }
        if self.grid.windows(2).any(|w| !(w[0] < w[1])) || self.grid.iter().any(|x| !x.is_finite()) {
            return Err(Error::domain("grid", "must be finite and strictly increasing"));
        }
        if self.pulses == 0 {
            return Err(Error::domain("pulses", "must be >= 1"));
        }
        Ok(())
    }

    /// The configuration actually simulated: `cfg` with the scenario's fixed settings.
    ///
    /// `fig2_absorption` measures the unread write-pulse dip at the dip-calibration
    /// energy; the other scenarios read out the memory.
    pub fn resolve(&self, cfg: &ExperimentConfig) -> ExperimentConfig {
        let mut c = cfg.clone();
        c.scenario = self.id;
        c.seed = self.seed;
        match self.id {
            ScenarioId::Fig2Absorption => {
                c.stage = Stage::Transmitted;
                c.laser.write_energy_nj = targets::DIP_ENERGY_NJ;
                c.laser.read_energy_nj = 0.0;
                c.input_blocked = false;
            }
            ScenarioId::Fig2Readout | ScenarioId::Fig3Histogram | ScenarioId::Fig4G2 => {
                c.stage = Stage::MemoryOutput;
                c.input_blocked = false;
            }
            ScenarioId::Custom => {}
        }
        c
    }
}

/// Rows of one scenario run, in grid order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioOutput {
    pub id: ScenarioId,
    pub rows: Vec<Vec<f64>>,
}

impl ScenarioOutput {
    pub fn columns(&self) -> &'static [&'static str] {
        columns(self.id)
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.columns().iter().position(|c| *c == name)?;
        Some(self.rows.iter().map(|r| r[k]).collect())
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(self.columns())?;
        for row in &self.rows {
            w.write_record(row.iter().map(|v| v.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }
}

impl Serialize for ScenarioId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

/// Independent seed for grid point `i`.
fn point_seed(seed: u64, i: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(i as u64 + 1);
    rng.next_u64()
}

fn poisson_rate(p: f64, pulses: u64, rate_hz: f64) -> (f64, f64) {
    let n = pulses as f64;
    (p * rate_hz, (p * n).sqrt() * rate_hz / n)
}

struct Ctx<'a> {
    s: &'a Scenario,
    cfg: ExperimentConfig,
    opts: SimOptions,
}

impl Ctx<'_> {
    fn simulate(&self, cfg: &ExperimentConfig, seed: u64) -> Result<montecarlo::TallySet> {
        Ok(montecarlo::simulate_skipping(cfg, self.s.pulses, seed, &self.opts)?.tallies)
    }

    fn absorption(&self, i: usize, delay_fs: f64) -> Result<Vec<f64>> {
        let mut c = self.cfg.clone();
        c.write_delay_fs = delay_fs;
        let mut reference = c.clone();
        reference.stage = Stage::MemoryInput;
        match self.s.engine {
            EngineKind::Analytic => {
                let on = photostat::expected_rates(&c, 0.0)?.probs.p_h_any();
                let off = photostat::expected_rates(&reference, 0.0)?.probs.p_h_any();
                let n = self.s.pulses as f64;
                let t = on / off;
                Ok(vec![delay_fs, t, t * (1.0 / (on * n) + 1.0 / (off * n)).sqrt()])
            }
            EngineKind::MonteCarlo => {
                let seed = point_seed(self.s.seed, i);
                let on = self.simulate(&c, seed)?.n_h_any() as f64;
                let off = self.simulate(&reference, seed ^ 1)?.n_h_any() as f64;
                if off == 0.0 {
                    return Err(Error::DivisionByZero("no reference coincidences".into()));
                }
                let t = on / off;
                let rel = if on > 0.0 { 1.0 / on + 1.0 / off } else { 1.0 / off };
                Ok(vec![delay_fs, t, t * rel.sqrt()])
            }
        }
    }

    fn readout(&self, i: usize, tau: f64) -> Result<Vec<f64>> {
        let mut c = self.cfg.clone();
        c.storage_time_ps = tau;
        let rate = c.laser.rep_rate_hz();
        match self.s.engine {
            EngineKind::Analytic => {
                let r = photostat::expected_rates(&c, tau)?;
                let (s, se) = poisson_rate(r.probs.p_h_any(), self.s.pulses, rate);
                let (n, ne) = poisson_rate(r.blocked.p_h_any(), self.s.pulses, rate);
                Ok(vec![tau, s, se, n, ne])
            }
            EngineKind::MonteCarlo => {
                let seed = point_seed(self.s.seed, i);
                let duration = self.s.pulses as f64 / rate;
                let open = self.simulate(&c, seed)?.n_h_any() as f64;
                c.input_blocked = true;
                let blocked = self.simulate(&c, seed ^ 1)?.n_h_any() as f64;
                Ok(vec![
                    tau,
                    open / duration,
                    open.sqrt() / duration,
                    blocked / duration,
                    blocked.sqrt() / duration,
                ])
            }
        }
    }

    fn g2(&self, i: usize, tau: f64) -> Result<Vec<f64>> {
        let mut c = self.cfg.clone();
        c.storage_time_ps = tau;
        let (g2, sigma) = match self.s.engine {
            EngineKind::Analytic => {
                let p = photostat::expected_rates(&c, tau)?.probs;
                let n = self.s.pulses as f64;
                let (_, sigma) = g2_from_rates(p.p_herald * n, p.p_h1 * n, p.p_h2 * n, p.p_h12 * n)?;
                (p.g2()?, sigma)
            }
            EngineKind::MonteCarlo => self.simulate(&c, point_seed(self.s.seed, i))?.g2().unwrap_or_else(|e| {
                log::warn!("g2 undefined at tau = {tau} ps: {e}");
                (f64::NAN, f64::NAN)
            }),
        };
        Ok(vec![tau, g2, sigma])
    }

    fn custom(&self, i: usize, tau: f64) -> Result<Vec<f64>> {
        let mut c = self.cfg.clone();
        c.storage_time_ps = tau;
        let rate = c.laser.rep_rate_hz();
        match self.s.engine {
            EngineKind::Analytic => {
                let p = photostat::expected_rates(&c, tau)?.probs;
                let n = self.s.pulses as f64;
                let (g2, sigma) =
                    g2_from_rates(p.p_herald * n, p.p_h1 * n, p.p_h2 * n, p.p_h12 * n).unwrap_or((f64::NAN, f64::NAN));
                Ok(vec![tau, p.p_herald * rate, p.p_h_any() * rate, g2, sigma])
            }
            EngineKind::MonteCarlo => {
                let t = self.simulate(&c, point_seed(self.s.seed, i))?;
                let duration = t.pulses as f64 / rate;
                let (g2, sigma) = t.g2().unwrap_or((f64::NAN, f64::NAN));
                Ok(vec![
                    tau,
                    t.n_h() as f64 / duration,
                    t.n_h_any() as f64 / duration,
                    g2,
                    sigma,
                ])
            }
        }
    }

    fn histogram(&self, tau: f64) -> Result<Vec<Vec<f64>>> {
        let mut c = self.cfg.clone();
        c.storage_time_ps = tau;
        let bin = c.coincidence.histogram_bin_ps;
        let range = c.coincidence.electronic_delay_range_ns;
        let hist = match self.s.engine {
            EngineKind::Analytic => expected_histogram(&c, self.s.pulses)?,
            EngineKind::MonteCarlo => {
                let tags = montecarlo::simulate(&c, self.s.pulses, self.s.seed, Sink::TimeTags, &self.opts)?
                    .tags
                    .unwrap_or_default();
                let h = coincidence::delay_histogram(&tags, bin, range)?;
                (0..h.counts.len())
                    .map(|i| (h.bin_center_ps(i) / 1e3, h.counts[i] as f64))
                    .collect()
            }
        };
        Ok(hist.into_iter().map(|(d, n)| vec![d, n]).collect())
    }
}

/// Expected herald→signal delay histogram `(bin centre ns, counts)` over `pulses`.
///
/// Photon–photon coincidences are Gaussian with the two detectors' combined
/// jitter; any coincidence involving a dark count is spread uniformly over its
/// period cell. Dead time is ignored.
pub fn expected_histogram(cfg: &ExperimentConfig, pulses: u64) -> Result<Vec<(f64, f64)>> {
    let bin = cfg.coincidence.histogram_bin_ps;
    let range = cfg.coincidence.electronic_delay_range_ns * 1e3;
    let period = cfg.laser.period_ns() * 1e3;
    let model = PulseModel::new(cfg)?;
    let mut photon_only = model.clone();
    photon_only.dark_mean = [0.0; 3];
    let all = model.channel_probs();
    let ph = photon_only.channel_probs();
    let d = &cfg.detectors;
    let spread = (d.herald.jitter_sigma_ps().powi(2)
        + 0.5 * (d.signal1.jitter_sigma_ps().powi(2) + d.signal2.jitter_sigma_ps().powi(2)))
    .sqrt();
    let cdf = |x: f64| {
        if spread > 0.0 {
            0.5 * erfc(-x / (spread * std::f64::consts::SQRT_2))
        } else if x >= 0.0 {
            1.0
        } else {
            0.0
        }
    };
    let first = (-range / bin).floor() as i64;
    let last = (range / bin).ceil() as i64 - 1;
    let k_max = (range / period).ceil() as i64 + 1;
    let n = pulses as f64;
    let mut out = Vec::new();
    for b in first..=last {
        let (lo, hi) = (b as f64 * bin, (b + 1) as f64 * bin);
        let mut total = 0.0;
        for k in -k_max..=k_max {
            let (pp, p) = if k == 0 {
                (ph.p_h1 + ph.p_h2, all.p_h1 + all.p_h2)
            } else {
                (ph.p_herald * (ph.p_s1 + ph.p_s2), all.p_herald * (all.p_s1 + all.p_s2))
            };
            let centre = k as f64 * period;
            let gauss = cdf(hi - centre) - cdf(lo - centre);
            let overlap = (hi.min(centre + period / 2.0) - lo.max(centre - period / 2.0)).max(0.0);
            total += pp * gauss + (p - pp).max(0.0) * overlap / period;
        }
        out.push(((lo + hi) / 2e3, total * n));
    }
    Ok(out)
}

/// Runs a scenario on `cfg`. Points are dispatched to `opts.workers` threads;
/// output order follows the grid.
pub fn run(cfg: &ExperimentConfig, scenario: &Scenario, opts: &SimOptions) -> Result<ScenarioOutput> {
    scenario.validate()?;
    cfg.validate()?;
    let cfg = scenario.resolve(cfg);
    let per_point = scenario.grid.len() >= opts.workers && opts.workers > 1;
    let ctx = Ctx {
        s: scenario,
        cfg,
        opts: if per_point {
            SimOptions { workers: 1, ..*opts }
        } else {
            *opts
        },
    };
    let point = |(i, &x): (usize, &f64)| -> Result<Vec<f64>> {
        match scenario.id {
            ScenarioId::Fig2Absorption => ctx.absorption(i, x),
            ScenarioId::Fig2Readout => ctx.readout(i, x),
            ScenarioId::Fig4G2 => ctx.g2(i, x),
            ScenarioId::Custom => ctx.custom(i, x),
            ScenarioId::Fig3Histogram => unreachable!(),
        }
    };
    let rows = if scenario.id == ScenarioId::Fig3Histogram {
        ctx.histogram(scenario.grid[0])?
    } else if per_point {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(opts.workers)
            .build()
            .map_err(|e| Error::domain("workers", e.to_string()))?;
        pool.install(|| {
            scenario
                .grid
                .par_iter()
                .enumerate()
                .map(point)
                .collect::<Result<Vec<_>>>()
        })?
    } else {
        scenario
            .grid
            .iter()
            .enumerate()
            .map(point)
            .collect::<Result<Vec<_>>>()?
    };
    Ok(ScenarioOutput { id: scenario.id, rows })
}

/// Everything needed to repeat a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub scenario: String,
    pub engine: EngineKind,
    pub pulses: u64,
    pub seed: u64,
    pub grid: Vec<f64>,
    /// Resolved configuration in the `key = value` format.
    pub config: String,
    pub version: String,
    pub wall_time_s: f64,
}

impl Manifest {
    pub fn new(cfg: &ExperimentConfig, scenario: &Scenario, wall_time_s: f64) -> Self {
        Self {
            scenario: scenario.id.as_str().to_string(),
            engine: scenario.engine,
            pulses: scenario.pulses,
            seed: scenario.seed,
            grid: scenario.grid.clone(),
            config: model::render(cfg),
            version: env!("CARGO_PKG_VERSION").to_string(),
            wall_time_s,
        }
    }

    /// The configuration and scenario this manifest describes.
    pub fn inputs(&self) -> Result<(ExperimentConfig, Scenario)> {
        let cfg = model::load_config(&self.config)?;
        let id = self
            .scenario
            .parse()
            .map_err(|e: String| Error::domain("scenario", e))?;
        Ok((
            cfg,
            Scenario {
                id,
                grid: self.grid.clone(),
                engine: self.engine,
                pulses: self.pulses,
                seed: self.seed,
            },
        ))
    }
}

/// [`run`] plus a manifest recording the resolved inputs and wall time.
pub fn run_with_manifest(
    cfg: &ExperimentConfig,
    scenario: &Scenario,
    opts: &SimOptions,
) -> Result<(ScenarioOutput, Manifest)> {
    let start = Instant::now();
    let out = run(cfg, scenario, opts)?;
    let manifest = Manifest::new(cfg, scenario, start.elapsed().as_secs_f64());
    Ok((out, manifest))
}
