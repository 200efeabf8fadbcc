//! Physical parameters, configuration text, and calibration.
//!
//! Write and read efficiencies follow `η(E) = 1 − exp(−κE)` in pulse energy.

mod calibrate;
mod config;
mod text;

pub use calibrate::{
    calibrate_herald_rate, calibrate_noise_rates, calibrate_read_kappa, calibrate_source_mu, calibrate_write_kappa,
    default_calibration, targets, Calibration, NoiseRates,
};
pub use config::{
    calibrated, CoincidenceConfig, DetectorConfig, Detectors, ExperimentConfig, LaserConfig, MemoryConfig, NoiseConfig,
    ScenarioId, SourceConfig, Stage, FWHM_PER_SIGMA,
};
pub use text::{load_config, load_config_file, render};

use crate::error::{Error, Result};

fn saturating(kappa: f64, energy_nj: f64) -> Result<f64> {
    if !(energy_nj >= 0.0) {
        return Err(Error::domain("energy_nJ", "must be >= 0"));
    }
    Ok(-(-kappa * energy_nj).exp_m1())
}

/// Write (absorption) efficiency at pulse energy `energy_nj`.
pub fn write_efficiency(mem: &MemoryConfig, energy_nj: f64) -> Result<f64> {
    saturating(mem.write_kappa_per_nj, energy_nj)
}

/// Read (retrieval) efficiency at pulse energy `energy_nj`.
pub fn read_efficiency(mem: &MemoryConfig, energy_nj: f64) -> Result<f64> {
    saturating(mem.read_kappa_per_nj, energy_nj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn write_efficiency_values() {
        let mem = MemoryConfig::default();
        assert_relative_eq!(mem.write_kappa_per_nj, 0.0178515, max_relative = 1e-5);
        assert_relative_eq!(write_efficiency(&mem, 12.5).unwrap(), 0.2, max_relative = 1e-12);
        assert_eq!(write_efficiency(&mem, 0.0).unwrap(), 0.0);
        let half = write_efficiency(&mem, 6.25).unwrap();
        assert_relative_eq!(half, 1.0 - 0.8f64.sqrt(), max_relative = 1e-12);
        assert!((half - 0.1056).abs() < 5e-5);
        assert!((half - 0.09).abs() <= 0.02);
        assert!(write_efficiency(&mem, -1.0).is_err());
    }
}
