//! Storage-device model: write-pulse absorption, phonon retention, end-to-end
//! efficiency, and the read-pulse noise field.

use std::f64::consts::LN_2;

use crate::error::{Error, Result};
use crate::model::{read_efficiency, write_efficiency, ExperimentConfig, ScenarioId};
use crate::photostat;

/// Planck constant, J s (exact SI value).
pub const PLANCK_H: f64 = 6.626_070_15e-34;
/// Boltzmann constant, J/K (exact SI value).
pub const BOLTZMANN_K: f64 = 1.380_649e-23;
/// Temperature at which `noise.thermal_coinc_cps` is specified.
pub const REFERENCE_TEMPERATURE_K: f64 = 295.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Polarization {
    H,
    V,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MemoryTransfer {
    pub eta_write: f64,
    pub retention: f64,
    pub eta_read: f64,
    pub end_to_end: f64,
    pub input_polarization: Polarization,
    pub output_polarization: Polarization,
}

/// Normalized Gaussian overlap of the write pulse with the signal photon, 1 at zero delay.
pub fn write_overlap(delta_t_fs: f64, cfg: &ExperimentConfig) -> f64 {
    let w = cfg.memory.absorption_fwhm_fs;
    (-4.0 * LN_2 * delta_t_fs * delta_t_fs / (w * w)).exp()
}

/// Fraction of the signal transmitted past the write pulse, `1 − η_w·exp(−4 ln2 Δt²/w_a²)`.
///
/// The write efficiency is evaluated at `laser.write_energy_nJ`.
pub fn absorption_transmission(delta_t_fs: f64, cfg: &ExperimentConfig) -> f64 {
    let eta_w = write_efficiency(&cfg.memory, cfg.laser.write_energy_nj).unwrap_or(0.0);
    1.0 - eta_w * write_overlap(delta_t_fs, cfg)
}

/// Surviving fraction of the stored phonon after `tau_ps`.
pub fn retention(tau_ps: f64, cfg: &ExperimentConfig) -> Result<f64> {
    if !(tau_ps >= 0.0) {
        return Err(Error::domain("storage_time_ps", "must be >= 0"));
    }
    Ok((-tau_ps / cfg.memory.phonon_half_life_ps).exp2())
}

pub fn end_to_end_efficiency(cfg: &ExperimentConfig, tau_ps: f64) -> Result<MemoryTransfer> {
    let eta_write = write_efficiency(&cfg.memory, cfg.laser.write_energy_nj)?;
    let eta_read = read_efficiency(&cfg.memory, cfg.laser.read_energy_nj)?;
    let retention = retention(tau_ps, cfg)?;
    Ok(MemoryTransfer {
        eta_write,
        retention,
        eta_read,
        end_to_end: eta_write * retention * eta_read,
        input_polarization: Polarization::H,
        output_polarization: Polarization::V,
    })
}

/// Bose–Einstein occupation of a phonon mode.
pub fn thermal_occupation(freq_thz: f64, temp_k: f64) -> f64 {
    if temp_k <= 0.0 {
        return 0.0;
    }
    let x = PLANCK_H * freq_thz * 1e12 / (BOLTZMANN_K * temp_k);
    1.0 / x.exp_m1()
}

/// Noise photons per read pulse at the beam splitter, split by origin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseMean {
    pub thermal: f64,
    pub fwm: f64,
}

impl NoiseMean {
    pub fn total(&self) -> f64 {
        self.thermal + self.fwm
    }
}

/// Thermal anti-Stokes coincidence rate at the configured temperature.
pub fn thermal_coinc_cps(cfg: &ExperimentConfig) -> f64 {
    let n = &cfg.noise;
    if !n.thermal_enabled {
        return 0.0;
    }
    let f = cfg.memory.phonon_freq_thz;
    n.thermal_coinc_cps * thermal_occupation(f, n.temperature_k) / thermal_occupation(f, REFERENCE_TEMPERATURE_K)
}

/// Mode count of the noise field's negative-binomial law; infinite for Poisson.
pub fn noise_modes(cfg: &ExperimentConfig) -> f64 {
    let excess = cfg.noise.noise_g2 - 1.0;
    if excess <= 0.0 {
        f64::INFINITY
    } else {
        1.0 / excess
    }
}

/// Per-pulse noise mean reproducing the configured herald–noise coincidence rate.
///
/// The rate counts pulses where the herald fires and at least one noise photon is
/// detected on either arm (dark counts excluded). In the `fig4_g2` scenario the
/// result is multiplied by `noise.fig4_noise_scale`.
pub fn noise_mean_per_pulse(cfg: &ExperimentConfig) -> Result<NoiseMean> {
    let thermal_cps = thermal_coinc_cps(cfg);
    let fwm_cps = if cfg.noise.fwm_enabled {
        cfg.noise.fwm_coinc_cps
    } else {
        0.0
    };
    let total_cps = thermal_cps + fwm_cps;
    if total_cps == 0.0 {
        return Ok(NoiseMean { thermal: 0.0, fwm: 0.0 });
    }
    let p_h = photostat::herald_probability(cfg);
    if p_h == 0.0 {
        return Err(Error::ZeroHeraldProbability);
    }
    let q = 0.5 * (cfg.detectors.signal1.efficiency + cfg.detectors.signal2.efficiency);
    if q == 0.0 {
        return Err(Error::DivisionByZero("signal detection efficiency".into()));
    }
    let c = total_cps / (cfg.laser.rep_rate_hz() * p_h);
    if c >= 1.0 {
        return Err(Error::Infeasible(format!(
            "noise coincidence rate {total_cps} cps exceeds the herald rate"
        )));
    }
    let k = noise_modes(cfg);
    let photons = if k.is_infinite() {
        -(-c).ln_1p()
    } else {
        k * ((-(-c).ln_1p() / k).exp_m1())
    } / q;
    let scale = if cfg.scenario == ScenarioId::Fig4G2 {
        cfg.noise.fig4_noise_scale
    } else {
        1.0
    };
    let total = photons * scale;
    Ok(NoiseMean {
        thermal: total * thermal_cps / total_cps,
        fwm: total * fwm_cps / total_cps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn cfg() -> ExperimentConfig {
        ExperimentConfig::default()
    }

    #[test]
    fn absorption_dip() {
        let mut c = cfg();
        c.laser.write_energy_nj = 12.5;
        assert_relative_eq!(absorption_transmission(0.0, &c), 0.8, max_relative = 1e-12);
        assert_relative_eq!(absorption_transmission(163.0, &c), 0.9, max_relative = 1e-12);
        assert_relative_eq!(absorption_transmission(1e6, &c), 1.0);
    }

    #[test]
    fn retention_values() {
        let c = cfg();
        assert_eq!(retention(0.0, &c).unwrap(), 1.0);
        assert_relative_eq!(retention(3.5, &c).unwrap(), 0.5, max_relative = 1e-15);
        assert_relative_eq!(retention(7.0, &c).unwrap(), 0.25, max_relative = 1e-15);
        assert!(retention(-1.0, &c).is_err());
    }

    #[test]
    fn end_to_end_products() {
        let mut c = cfg();
        c.memory.write_kappa_per_nj = -(0.91f64).ln() / c.laser.write_energy_nj;
        c.memory.read_kappa_per_nj = -(0.90f64).ln() / c.laser.read_energy_nj;
        let t = end_to_end_efficiency(&c, 0.0).unwrap();
        assert_relative_eq!(t.eta_write, 0.09, max_relative = 1e-12);
        assert_relative_eq!(t.eta_read, 0.10, max_relative = 1e-12);
        assert_relative_eq!(t.end_to_end, 0.009, max_relative = 1e-12);
        assert_relative_eq!(
            end_to_end_efficiency(&c, 3.5).unwrap().end_to_end,
            0.0045,
            max_relative = 1e-12
        );
        assert_ne!(t.input_polarization, t.output_polarization);
        c.laser.read_energy_nj = 0.0;
        assert_eq!(end_to_end_efficiency(&c, 0.0).unwrap().end_to_end, 0.0);
    }

    #[test]
    fn default_transfer_at_zero_delay() {
        // Write 10.56 % at 6.25 nJ, read κ chosen for a 0.9 % product.
        let t = end_to_end_efficiency(&cfg(), 0.0).unwrap();
        assert!((t.eta_write - 0.1056).abs() < 1e-4);
        assert_relative_eq!(t.end_to_end, 0.009, max_relative = 1e-9);
    }

    #[test]
    fn occupation() {
        let n = thermal_occupation(40.0, 295.0);
        // Independent evaluation from hν/kT computed in one expression.
        let x: f64 = 6.626_070_15e-34 * 40e12 / (1.380_649e-23 * 295.0);
        assert!((x - 6.507).abs() < 1e-3);
        assert_relative_eq!(n, 1.0 / (x.exp() - 1.0), max_relative = 1e-12);
        assert!((n - 1.494e-3).abs() < 1e-6, "{n}");
        assert_eq!(thermal_occupation(40.0, 0.0), 0.0);
        let t_ln2 = PLANCK_H * 40e12 / (BOLTZMANN_K * LN_2);
        assert_relative_eq!(thermal_occupation(40.0, t_ln2), 1.0, max_relative = 1e-12);
    }

    #[test]
    fn noise_off_is_zero() {
        let mut c = cfg();
        c.noise.thermal_enabled = false;
        c.noise.fwm_enabled = false;
        assert_eq!(noise_mean_per_pulse(&c).unwrap().total(), 0.0);
    }

    #[test]
    fn thermal_component_follows_occupation() {
        let mut c = cfg();
        c.noise.fwm_enabled = false;
        c.noise.noise_g2 = 1.0;
        let base = noise_mean_per_pulse(&c).unwrap().thermal;
        c.noise.temperature_k = 590.0;
        let hot = noise_mean_per_pulse(&c).unwrap().thermal;
        let ratio = thermal_occupation(40.0, 590.0) / thermal_occupation(40.0, 295.0);
        // Poisson noise: mean ∝ −ln(1 − c) rather than c, so compare the rates.
        let p_h = photostat::herald_probability(&c);
        let q = c.detectors.signal1.efficiency;
        let rate = |m: f64| -(-m * q).exp_m1() * p_h * c.laser.rep_rate_hz();
        assert_relative_eq!(rate(hot) / rate(base), ratio, max_relative = 1e-12);
    }

    proptest! {
        #[test]
        fn retention_semigroup(a in 0.0f64..20.0, b in 0.0f64..20.0) {
            let c = cfg();
            let lhs = retention(a + b, &c).unwrap();
            let rhs = retention(a, &c).unwrap() * retention(b, &c).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-12 * lhs.max(1e-300));
        }

        #[test]
        fn transmission_symmetric_with_minimum_at_zero(dt in -2000.0f64..2000.0) {
            let c = cfg();
            prop_assert_eq!(absorption_transmission(dt, &c), absorption_transmission(-dt, &c));
            prop_assert!(absorption_transmission(dt, &c) >= absorption_transmission(0.0, &c));
        }
    }
}
