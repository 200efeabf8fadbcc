use serde::Serialize;

use super::dist::{self, cutoff_for, negative_binomial, thin, PhotonNumberDist};
use crate::error::{Error, Result};
use crate::memory::{self, Polarization};
use crate::model::{ExperimentConfig, Stage};

/// Per-pulse physics of one configuration, shared by the analytic and Monte Carlo engines.
///
/// Each pair sends its herald photon to a click with probability `herald_eff` and,
/// independently, its signal photon to the beam splitter with `signal_transfer`.
/// Photons at the splitter go to either arm with probability 1/2 and are then
/// detected with `arm_eff`.
#[derive(Debug, Clone, PartialEq)]
pub struct PulseModel {
    pub pair_mean: f64,
    /// Negative-binomial mode count of the pair number.
    pub pair_modes: f64,
    pub herald_eff: f64,
    pub signal_transfer: f64,
    pub arm_eff: [f64; 2],
    /// Mean noise photons at the splitter per pulse.
    pub noise_mean: f64,
    /// Share of `noise_mean` from thermal anti-Stokes scattering (rest is FWM).
    pub noise_thermal_fraction: f64,
    /// Mode count of the noise field; infinite for Poisson.
    pub noise_modes: f64,
    /// Dark-count mean per pulse for herald, signal 1, signal 2.
    pub dark_mean: [f64; 3],
    /// Label of signal photons in this detection basis.
    pub polarization: Polarization,
}

impl PulseModel {
    /// Model for `cfg` as configured (stage, storage time, blocked input).
    pub fn new(cfg: &ExperimentConfig) -> Result<Self> {
        Self::for_stage(cfg, cfg.stage, cfg.storage_time_ps, cfg.input_blocked)
    }

    pub fn for_stage(cfg: &ExperimentConfig, stage: Stage, tau_ps: f64, input_blocked: bool) -> Result<Self> {
        let eta_sig = cfg.source.signal_heralding_eff;
        let (transfer, polarization) = match stage {
            Stage::MemoryInput => (eta_sig, Polarization::H),
            Stage::Transmitted => (
                eta_sig * memory::absorption_transmission(cfg.write_delay_fs, cfg),
                Polarization::H,
            ),
            Stage::MemoryOutput => {
                let t = memory::end_to_end_efficiency(cfg, tau_ps)?;
                let overlap = memory::write_overlap(cfg.write_delay_fs, cfg);
                (eta_sig * t.end_to_end * overlap, t.output_polarization)
            }
        };
        let noise = if stage == Stage::MemoryOutput && cfg.laser.read_energy_nj > 0.0 {
            memory::noise_mean_per_pulse(cfg)?
        } else {
            memory::NoiseMean { thermal: 0.0, fwm: 0.0 }
        };
        let total = noise.total();
        let d = &cfg.detectors;
        let period_s = 1.0 / cfg.laser.rep_rate_hz();
        Ok(Self {
            pair_mean: cfg.source.mean_pairs_mu,
            pair_modes: f64::from(cfg.source.schmidt_modes_k),
            herald_eff: cfg.source.herald_click_prob_per_pair * d.herald.efficiency,
            signal_transfer: if input_blocked { 0.0 } else { transfer },
            arm_eff: [d.signal1.efficiency, d.signal2.efficiency],
            noise_mean: total,
            noise_thermal_fraction: if total > 0.0 { noise.thermal / total } else { 0.0 },
            noise_modes: memory::noise_modes(cfg),
            dark_mean: [
                d.herald.dark_cps * period_s,
                d.signal1.dark_cps * period_s,
                d.signal2.dark_cps * period_s,
            ],
            polarization,
        })
    }

    /// Per-pair probability that the signal photon is detected on arm `k`.
    pub fn pair_arm_prob(&self, k: usize) -> f64 {
        self.signal_transfer * 0.5 * self.arm_eff[k]
    }

    /// Per-photon probability that a noise photon is detected on arm `k`.
    pub fn noise_arm_prob(&self, k: usize) -> f64 {
        0.5 * self.arm_eff[k]
    }

    /// ln P(no click on any channel in `set`), channels indexed herald, s1, s2.
    fn ln_silent(&self, set: [bool; 3], pair_mean: f64, with_herald_dark: bool) -> f64 {
        let h = if set[0] { self.herald_eff } else { 0.0 };
        let a: f64 = (0..2).filter(|&k| set[k + 1]).map(|k| self.pair_arm_prob(k)).sum();
        let b: f64 = (0..2).filter(|&k| set[k + 1]).map(|k| self.noise_arm_prob(k)).sum();
        let pair_loss = h + a - h * a;
        let mut ln = ln_pgf(pair_mean, self.pair_modes, pair_loss) + ln_pgf(self.noise_mean, self.noise_modes, b);
        for (c, &on) in set.iter().enumerate() {
            if on && (c > 0 || with_herald_dark) {
                ln -= self.dark_mean[c];
            }
        }
        ln
    }

    /// Signal-side probabilities (s1, s2, s1∧s2) for a given pair mean.
    fn signal_probs(&self, pair_mean: f64) -> [f64; 3] {
        let l1 = self.ln_silent([false, true, false], pair_mean, false);
        let l2 = self.ln_silent([false, false, true], pair_mean, false);
        let l12 = self.ln_silent([false, true, true], pair_mean, false);
        let p1 = -l1.exp_m1();
        let p2 = -l2.exp_m1();
        // 1 − Z₁ − Z₂ + Z₁₂ = (1−Z₁)(1−Z₂) + Z₁Z₂(Z₁₂/(Z₁Z₂) − 1)
        let p12 = p1 * p2 + (l1 + l2).exp() * (l12 - l1 - l2).exp_m1();
        [p1, p2, p12]
    }

    /// P(herald clicks).
    pub fn herald_prob(&self) -> f64 {
        -self.ln_silent([true, false, false], self.pair_mean, true).exp_m1()
    }

    /// P(at least one of the three channels clicks).
    pub fn any_prob(&self) -> f64 {
        -self.ln_silent([true, true, true], self.pair_mean, true).exp_m1()
    }

    /// Closed-form channel probabilities.
    pub fn channel_probs(&self) -> ChannelProbs {
        let p_h = self.herald_prob();
        let uncond = self.signal_probs(self.pair_mean);
        // P(X ∧ h) = P(X) − P(¬h)·P'(X), where P' is the pair law tilted by (1 − η_h)
        // (given no herald click). Rewritten as [P(X) − P'(X)] + p_h·P'(X), with the
        // bracket built from exact differences of generating functions.
        let (tilted, shift) = tilted_mean(self.pair_mean, self.pair_modes, self.herald_eff);
        let cond = self.signal_probs(tilted);
        let a = [self.pair_arm_prob(0), self.pair_arm_prob(1)];
        let b = [self.noise_arm_prob(0), self.noise_arm_prob(1)];
        let rest = |x_noise: f64, dark: f64| (ln_pgf(self.noise_mean, self.noise_modes, x_noise) - dark).exp();
        let diff = |x: f64| pgf_shift(tilted, shift, self.pair_modes, x);
        let n1 = rest(b[0], self.dark_mean[1]);
        let n2 = rest(b[1], self.dark_mean[2]);
        let n12 = rest(b[0] + b[1], self.dark_mean[1] + self.dark_mean[2]);
        let d1 = -n1 * diff(a[0]);
        let d2 = -n2 * diff(a[1]);
        let d12 = d1 + d2 + n12 * diff(a[0] + a[1]);
        ChannelProbs {
            p_herald: p_h,
            p_s1: uncond[0],
            p_s2: uncond[1],
            p_12: uncond[2],
            p_h1: (d1 + p_h * cond[0]).max(0.0),
            p_h2: (d2 + p_h * cond[1]).max(0.0),
            p_h12: (d12 + p_h * cond[2]).max(0.0),
            p_any: self.any_prob(),
        }
    }

    /// Pair-number law conditioned on a herald click.
    pub fn heralded_pair_dist(&self) -> Result<PhotonNumberDist> {
        let p_h = self.herald_prob();
        if self.pair_mean == 0.0 || p_h == 0.0 {
            return Err(Error::ZeroHeraldProbability);
        }
        let n_max = cutoff_for(self.pair_mean, self.pair_modes, dist::ENGINE_TAIL);
        let pairs = negative_binomial(self.pair_mean, self.pair_modes, n_max)?;
        let ln_miss = (-self.herald_eff).ln_1p();
        let weighted = pairs
            .probs()
            .iter()
            .enumerate()
            .map(|(n, p)| p * -(n as f64 * ln_miss - self.dark_mean[0]).exp_m1())
            .collect();
        Ok(PhotonNumberDist::from_unnormalized(weighted))
    }

    /// Noise photon-number law at the splitter.
    pub fn noise_dist(&self) -> Result<PhotonNumberDist> {
        let n_max = cutoff_for(self.noise_mean, self.noise_modes, dist::ENGINE_TAIL);
        negative_binomial(self.noise_mean, self.noise_modes, n_max)
    }

    /// Photon number at the splitter given a herald click.
    pub fn heralded_signal_dist(&self) -> Result<PhotonNumberDist> {
        let signal = thin(&self.heralded_pair_dist()?, self.signal_transfer)?;
        Ok(signal.convolve(&self.noise_dist()?))
    }
}

/// ln E[(1 − x)^n] for a negative binomial with `modes` modes (∞ = Poisson).
fn ln_pgf(mean: f64, modes: f64, x: f64) -> f64 {
    if mean == 0.0 || x == 0.0 {
        0.0
    } else if modes.is_infinite() {
        -mean * x
    } else {
        -modes * (mean * x / modes).ln_1p()
    }
}

/// Mean of the negative binomial reweighted by (1 − η)ⁿ, and the drop in mean.
fn tilted_mean(mean: f64, modes: f64, eta: f64) -> (f64, f64) {
    if modes.is_infinite() {
        return (mean * (1.0 - eta), mean * eta);
    }
    let theta = mean / (mean + modes);
    let tilted_theta = (1.0 - eta) * theta;
    let tilted = modes * tilted_theta / (1.0 - tilted_theta);
    let shift = modes * theta * eta / ((1.0 - theta) * (1.0 - tilted_theta));
    (tilted, shift)
}

/// E_{mean+shift}[(1 − x)ⁿ] − E_{mean}[(1 − x)ⁿ] without cancellation.
fn pgf_shift(mean: f64, shift: f64, modes: f64, x: f64) -> f64 {
    if shift == 0.0 || x == 0.0 {
        return 0.0;
    }
    let ln_ratio = if modes.is_infinite() {
        -shift * x
    } else {
        -modes * (shift * x / (modes + mean * x)).ln_1p()
    };
    ln_pgf(mean, modes, x).exp() * ln_ratio.exp_m1()
}

/// Per-pulse click probabilities of one configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ChannelProbs {
    pub p_herald: f64,
    pub p_s1: f64,
    pub p_s2: f64,
    /// Both signal arms, regardless of the herald.
    pub p_12: f64,
    pub p_h1: f64,
    pub p_h2: f64,
    pub p_h12: f64,
    /// At least one of the three channels.
    pub p_any: f64,
}

impl ChannelProbs {
    /// Herald together with at least one signal arm.
    pub fn p_h_any(&self) -> f64 {
        self.p_h1 + self.p_h2 - self.p_h12
    }

    /// Triggered g² ratio on exact probabilities.
    pub fn g2(&self) -> Result<f64> {
        if self.p_h1 == 0.0 || self.p_h2 == 0.0 {
            return Err(Error::DivisionByZero("signal-arm coincidence probability".into()));
        }
        Ok(self.p_h12 * self.p_herald / (self.p_h1 * self.p_h2))
    }
}

/// Expected per-pulse probabilities and rates for one storage time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ChannelRates {
    pub probs: ChannelProbs,
    /// The same probabilities with the signal input blocked (noise and darks only).
    pub blocked: ChannelProbs,
    pub rep_rate_hz: f64,
    pub storage_time_ps: f64,
}

impl ChannelRates {
    pub fn cps(&self, p: f64) -> f64 {
        p * self.rep_rate_hz
    }

    /// Herald–signal coincidence rate (either arm), input open.
    pub fn coinc_cps(&self) -> f64 {
        self.cps(self.probs.p_h_any())
    }

    /// Herald–signal coincidence rate with the input blocked.
    pub fn noise_cps(&self) -> f64 {
        self.cps(self.blocked.p_h_any())
    }

    /// Blocked-input-subtracted signal over noise.
    pub fn snr(&self) -> Result<f64> {
        let noise = self.blocked.p_h_any();
        if noise == 0.0 {
            return Err(Error::DivisionByZero("blocked-input coincidence rate".into()));
        }
        Ok((self.probs.p_h_any() - noise) / noise)
    }

    pub fn g2(&self) -> Result<f64> {
        self.probs.g2()
    }
}

/// Exact channel probabilities for `cfg` at storage time `tau_ps`.
pub fn expected_rates(cfg: &ExperimentConfig, tau_ps: f64) -> Result<ChannelRates> {
    let open = PulseModel::for_stage(cfg, cfg.stage, tau_ps, cfg.input_blocked)?;
    let mut blocked = open.clone();
    blocked.signal_transfer = 0.0;
    Ok(ChannelRates {
        probs: open.channel_probs(),
        blocked: blocked.channel_probs(),
        rep_rate_hz: cfg.laser.rep_rate_hz(),
        storage_time_ps: tau_ps,
    })
}

/// P(herald clicks) per pulse, including dark counts.
pub fn herald_probability(cfg: &ExperimentConfig) -> f64 {
    let eta = cfg.source.herald_click_prob_per_pair * cfg.detectors.herald.efficiency;
    let dark = cfg.detectors.herald.dark_cps / cfg.laser.rep_rate_hz();
    let ln = ln_pgf(cfg.source.mean_pairs_mu, f64::from(cfg.source.schmidt_modes_k), eta);
    -(ln - dark).exp_m1()
}

/// Conditional photon number at the splitter given a herald click.
///
/// At `MemoryOutput` the pair signal is thinned by the memory transfer at
/// `cfg.storage_time_ps` and convolved with the noise field.
pub fn heralded_signal_dist(cfg: &ExperimentConfig, stage: Stage) -> Result<PhotonNumberDist> {
    PulseModel::for_stage(cfg, stage, cfg.storage_time_ps, cfg.input_blocked)?.heralded_signal_dist()
}

/// Triggered g² from closed-form channel probabilities.
pub fn heralded_g2(cfg: &ExperimentConfig, stage: Stage, tau_ps: f64) -> Result<f64> {
    let model = PulseModel::for_stage(cfg, stage, tau_ps, cfg.input_blocked)?;
    if model.herald_prob() == 0.0 {
        return Err(Error::ZeroHeraldProbability);
    }
    model.channel_probs().g2()
}

/// Triggered g² by applying the click model to the enumerated heralded distribution.
///
/// Independent of [`heralded_g2`]: it sums over photon numbers instead of using
/// generating functions.
pub fn heralded_g2_enumerated(cfg: &ExperimentConfig, stage: Stage, tau_ps: f64) -> Result<f64> {
    let model = PulseModel::for_stage(cfg, stage, tau_ps, cfg.input_blocked)?;
    let dist = model.heralded_signal_dist()?;
    let [c1, c2, c12] = click_probs(&dist, &model);
    if c1 == 0.0 || c2 == 0.0 {
        return Err(Error::DivisionByZero("signal-arm coincidence probability".into()));
    }
    Ok(c12 / (c1 * c2))
}

/// P(arm 1), P(arm 2), P(both) for a photon-number distribution at the splitter.
pub(crate) fn click_probs(dist: &PhotonNumberDist, model: &PulseModel) -> [f64; 3] {
    let b1 = model.noise_arm_prob(0);
    let b2 = model.noise_arm_prob(1);
    let [_, d1, d2] = model.dark_mean;
    let (l1, l2, l12) = ((-b1).ln_1p(), (-b2).ln_1p(), (-b1 - b2).ln_1p());
    let mut out = [0.0; 3];
    for (n, &p) in dist.probs().iter().enumerate() {
        let n = n as f64;
        let a = n * l1 - d1;
        let b = n * l2 - d2;
        let q1 = -a.exp_m1();
        let q2 = -b.exp_m1();
        out[0] += p * q1;
        out[1] += p * q2;
        out[2] += p * (q1 * q2 + (a + b).exp() * (n * (l12 - l1 - l2)).exp_m1());
    }
    out
}

/// g² of two independent fields mixed at intensity ratio `r` = signal/noise.
pub fn mixture_g2(r: f64, g2_s: f64, g2_n: f64) -> f64 {
    if r.is_infinite() {
        return g2_s;
    }
    (g2_s * r * r + 2.0 * r + g2_n) / ((r + 1.0) * (r + 1.0))
}

/// Non-negative signal/noise ratio at which [`mixture_g2`] equals `g2`.
pub fn mixture_ratio(g2: f64, g2_s: f64, g2_n: f64) -> Result<f64> {
    // (g2_s − g2) r² + 2 (1 − g2) r + (g2_n − g2) = 0
    let a = g2_s - g2;
    let b = 2.0 * (1.0 - g2);
    let c = g2_n - g2;
    let roots: Vec<f64> = if a.abs() < 1e-15 {
        if b == 0.0 {
            vec![]
        } else {
            vec![-c / b]
        }
    } else {
        let disc = b * b - 4.0 * a * c;
        if disc < 0.0 {
            vec![]
        } else {
            let s = disc.sqrt();
            vec![(-b + s) / (2.0 * a), (-b - s) / (2.0 * a)]
        }
    };
    roots
        .into_iter()
        .filter(|r| *r >= 0.0 && r.is_finite())
        .fold(None, |best: Option<f64>, r| Some(best.map_or(r, |b| b.max(r))))
        .ok_or_else(|| Error::NoRoot(format!("g2 = {g2} not reachable by mixing")))
}

/// Probability that a detector is dead at a pulse, per registered click at rate `p` per pulse.
///
/// A click blocks the following pulses whose (jittered) detection falls within
/// the dead time; `blocked_pulses` is the expected number of such pulses.
pub fn blocked_pulses(dead_time_ns: f64, period_ns: f64, jitter_sigma_ps: f64) -> f64 {
    let dead = dead_time_ns * 1e3;
    let period = period_ns * 1e3;
    let spread = std::f64::consts::SQRT_2 * jitter_sigma_ps;
    let mut total = 0.0;
    let mut k = 1.0;
    while k * period < dead + 10.0 * spread + period {
        let x = dead - k * period;
        total += if spread > 0.0 {
            statrs::function::erf::erfc(-x / (spread * std::f64::consts::SQRT_2)) / 2.0
        } else if x > 0.0 {
            1.0
        } else {
            0.0
        };
        k += 1.0;
    }
    total
}

impl ChannelProbs {
    /// Probabilities of *registered* clicks after non-paralyzable dead time, to first order.
    ///
    /// Only meaningful for comparing against Monte Carlo tallies.
    pub fn registered(&self, cfg: &ExperimentConfig) -> ChannelProbs {
        let period = cfg.laser.period_ns();
        let d = &cfg.detectors;
        let live = |det: &crate::model::DetectorConfig, p: f64| {
            1.0 / (1.0 + blocked_pulses(det.dead_time_ns, period, det.jitter_sigma_ps()) * p)
        };
        let lh = live(&d.herald, self.p_herald);
        let l1 = live(&d.signal1, self.p_s1);
        let l2 = live(&d.signal2, self.p_s2);
        ChannelProbs {
            p_herald: self.p_herald * lh,
            p_s1: self.p_s1 * l1,
            p_s2: self.p_s2 * l2,
            p_12: self.p_12 * l1 * l2,
            p_h1: self.p_h1 * lh * l1,
            p_h2: self.p_h2 * lh * l2,
            p_h12: self.p_h12 * lh * l1 * l2,
            p_any: self.p_any,
        }
    }
}
