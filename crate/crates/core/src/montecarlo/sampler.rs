//! Per-pulse event sampling conditioned on "something was detected".
//!
//! A pulse is decomposed into five independent components: detected pairs,
//! detected noise photons, and dark counts on each of the three channels. A
//! pair is *detected* when its herald clicks or its signal photon is detected;
//! by binomial thinning the number of detected pairs is again negative binomial
//! with mean `μ·q_pair`. The pulse is active when at least one component is
//! non-empty, which happens with probability `p_any`. Given activity, components
//! are switched on sequentially with `P(B_c | none before) = q_c / A_c`, where
//! `A_c = 1 − Π_{l≥c} (1 − q_l)`, and non-empty counts are drawn from their
//! zero-truncated laws.

use rand::Rng;

use crate::memory::Polarization;
use crate::photostat::PulseModel;

pub const FLAG_DARK: u8 = 1;
pub const FLAG_PAIR: u8 = 1 << 1;
pub const FLAG_NOISE: u8 = 1 << 2;
/// Signal detected in the V (memory output) basis.
pub const FLAG_V: u8 = 1 << 3;

const PAIRS: usize = 0;
const NOISE: usize = 1;
const DARK: usize = 2;

/// Zero-truncated count law as a cumulative table.
#[derive(Debug, Clone)]
struct Truncated {
    cdf: Vec<f64>,
}

impl Truncated {
    fn new(mean: f64, modes: f64) -> Self {
        let mass = -ln_vacuum(mean, modes).exp_m1();
        let mut cdf = Vec::new();
        if mass > 0.0 {
            let mut acc = 0.0;
            for p in crate::photostat::negbin_terms(mean, modes).skip(1).take(256) {
                acc += p / mass;
                cdf.push(acc);
                if acc >= 1.0 - 1e-17 {
                    break;
                }
            }
        }
        Self { cdf }
    }

    fn sample(&self, u: f64) -> u32 {
        let k = self
            .cdf
            .iter()
            .position(|&c| u < c)
            .unwrap_or(self.cdf.len().saturating_sub(1));
        k as u32 + 1
    }
}

fn ln_vacuum(mean: f64, modes: f64) -> f64 {
    if mean == 0.0 {
        0.0
    } else if modes.is_infinite() {
        -mean
    } else {
        -modes * (mean / modes).ln_1p()
    }
}

/// Detector outcome of one active pulse before timing and dead time.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub(crate) struct PulseEvents {
    /// Flags of the photon click on each channel, 0 when no photon was detected.
    pub photon: [u8; 3],
    pub darks: [u32; 3],
}

#[derive(Debug, Clone)]
pub(crate) struct PulseSampler {
    q: [f64; 5],
    /// P(some component c.. is non-empty).
    tail: [f64; 5],
    counts: [Truncated; 5],
    /// Cumulative fates of a detected pair: (h,·), (h,1), (h,2), (·,1), (·,2).
    pair_fate: [f64; 5],
    noise_arm1: f64,
    signal_flag: u8,
}

impl PulseSampler {
    pub fn new(model: &PulseModel) -> Self {
        let eta = model.herald_eff;
        let a1 = model.pair_arm_prob(0);
        let a2 = model.pair_arm_prob(1);
        let q_pair = eta + (a1 + a2) - eta * (a1 + a2);
        let b1 = model.noise_arm_prob(0);
        let b2 = model.noise_arm_prob(1);
        let means = [
            (model.pair_mean * q_pair, model.pair_modes),
            (model.noise_mean * (b1 + b2), model.noise_modes),
            (model.dark_mean[0], f64::INFINITY),
            (model.dark_mean[1], f64::INFINITY),
            (model.dark_mean[2], f64::INFINITY),
        ];
        let ln_empty = means.map(|(m, k)| ln_vacuum(m, k));
        let q = ln_empty.map(|l| -l.exp_m1());
        let mut tail = [0.0; 5];
        for c in 0..5 {
            tail[c] = -ln_empty[c..].iter().sum::<f64>().exp_m1();
        }
        let weights = [
            eta * (1.0 - a1 - a2),
            eta * a1,
            eta * a2,
            (1.0 - eta) * a1,
            (1.0 - eta) * a2,
        ];
        let mut pair_fate = [0.0; 5];
        let mut acc = 0.0;
        for (slot, w) in pair_fate.iter_mut().zip(weights) {
            acc += w / q_pair.max(f64::MIN_POSITIVE);
            *slot = acc;
        }
        Self {
            q,
            tail,
            counts: means.map(|(m, k)| Truncated::new(m, k)),
            pair_fate,
            noise_arm1: if b1 + b2 > 0.0 { b1 / (b1 + b2) } else { 0.0 },
            signal_flag: match model.polarization {
                Polarization::V => FLAG_V,
                Polarization::H => 0,
            },
        }
    }

    /// Probability that a pulse produces at least one detection event.
    pub fn p_any(&self) -> f64 {
        self.tail[0]
    }

    /// Samples an active pulse. Consumes variates from `rng` in a fixed order.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> PulseEvents {
        let mut ev = PulseEvents::default();
        let mut none_yet = true;
        for c in 0..5 {
            let u: f64 = rng.random();
            let on = if none_yet {
                u * self.tail[c] < self.q[c]
            } else {
                u < self.q[c]
            };
            if !on {
                continue;
            }
            none_yet = false;
            let n = self.counts[c].sample(rng.random());
            match c {
                PAIRS => {
                    for _ in 0..n {
                        let u: f64 = rng.random();
                        let fate = self.pair_fate.iter().position(|&f| u < f).unwrap_or(4);
                        if fate <= 2 {
                            ev.photon[0] |= FLAG_PAIR;
                        }
                        match fate {
                            1 | 3 => ev.photon[1] |= FLAG_PAIR | self.signal_flag,
                            2 | 4 => ev.photon[2] |= FLAG_PAIR | self.signal_flag,
                            _ => {}
                        }
                    }
                }
                NOISE => {
                    for _ in 0..n {
                        let arm = if rng.random::<f64>() < self.noise_arm1 { 1 } else { 2 };
                        ev.photon[arm] |= FLAG_NOISE | self.signal_flag;
                    }
                }
                _ => ev.darks[c - DARK] = n,
            }
        }
        ev
    }
}
