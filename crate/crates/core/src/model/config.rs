use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Calibrated values produced by [`super::calibrate::default_calibration`].
///
/// Frozen here so that loading an empty configuration is instant; the
/// `frozen_defaults_match_recalibration` test recomputes them.
pub mod calibrated {
    pub const MEAN_PAIRS_MU: f64 = 0.011789481592101926;
    pub const HERALD_CLICK_PROB_PER_PAIR: f64 = 0.2728917501535622;
    pub const HERALD_CLICK_PROB_PER_PULSE: f64 = 0.0032081807375460196;
    pub const SIGNAL_DETECTION_EFF: f64 = 0.0913726755933684;
    pub const READ_KAPPA_PER_NJ: f64 = 0.014256580211395215;
    pub const FWM_COINC_CPS: f64 = 2.5675675675675675;
    pub const FIG4_NOISE_SCALE: f64 = 1.8570311478152506;
}

/// Detection basis / measurement point along the signal path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stage {
    /// Signal field arriving at the memory, write and read pulses off.
    MemoryInput,
    /// H-polarized light leaving the memory with the write pulse on (unabsorbed input).
    Transmitted,
    /// V-polarized memory output: retrieved photons plus read-pulse noise.
    MemoryOutput,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::MemoryInput => "memory_input",
            Stage::Transmitted => "transmitted",
            Stage::MemoryOutput => "memory_output",
        }
    }
}

impl FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "memory_input" => Ok(Stage::MemoryInput),
            "transmitted" => Ok(Stage::Transmitted),
            "memory_output" => Ok(Stage::MemoryOutput),
            _ => Err(format!("unknown stage `{s}`")),
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ScenarioId {
    Fig2Absorption,
    Fig2Readout,
    Fig3Histogram,
    Fig4G2,
    Custom,
}

impl ScenarioId {
    pub const ALL: [ScenarioId; 5] = [
        ScenarioId::Fig2Absorption,
        ScenarioId::Fig2Readout,
        ScenarioId::Fig3Histogram,
        ScenarioId::Fig4G2,
        ScenarioId::Custom,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ScenarioId::Fig2Absorption => "fig2_absorption",
            ScenarioId::Fig2Readout => "fig2_readout",
            ScenarioId::Fig3Histogram => "fig3_histogram",
            ScenarioId::Fig4G2 => "fig4_g2",
            ScenarioId::Custom => "custom",
        }
    }
}

impl FromStr for ScenarioId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        ScenarioId::ALL
            .into_iter()
            .find(|id| id.as_str() == s)
            .ok_or_else(|| format!("unknown scenario `{s}`"))
    }
}

impl fmt::Display for ScenarioId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LaserConfig {
    pub rep_rate_mhz: f64,
    pub pulse_fwhm_fs: f64,
    pub write_energy_nj: f64,
    pub read_energy_nj: f64,
}

impl LaserConfig {
    pub fn period_ns(&self) -> f64 {
        1e3 / self.rep_rate_mhz
    }

    pub fn rep_rate_hz(&self) -> f64 {
        self.rep_rate_mhz * 1e6
    }

    /// Pulse period in integer femtoseconds (12 500 000 fs at 80 MHz).
    pub fn period_fs(&self) -> u64 {
        (1e9 / self.rep_rate_mhz).round() as u64
    }
}

impl Default for LaserConfig {
    fn default() -> Self {
        Self {
            rep_rate_mhz: 80.0,
            pulse_fwhm_fs: 190.0,
            write_energy_nj: 6.25,
            read_energy_nj: 6.25,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SourceConfig {
    pub mean_pairs_mu: f64,
    pub schmidt_modes_k: u32,
    pub herald_click_prob_per_pair: f64,
    pub signal_heralding_eff: f64,
    pub photon_fwhm_fs: f64,
}

impl Default for SourceConfig {
    fn default() -> Self {
        Self {
            mean_pairs_mu: calibrated::MEAN_PAIRS_MU,
            schmidt_modes_k: 1,
            herald_click_prob_per_pair: calibrated::HERALD_CLICK_PROB_PER_PAIR,
            signal_heralding_eff: 0.16,
            photon_fwhm_fs: 260.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MemoryConfig {
    pub write_kappa_per_nj: f64,
    pub read_kappa_per_nj: f64,
    pub phonon_half_life_ps: f64,
    pub phonon_freq_thz: f64,
    /// Detuning from the conduction band; informational only.
    pub detuning_thz: f64,
    pub absorption_fwhm_fs: f64,
}

impl Default for MemoryConfig {
    fn default() -> Self {
        Self {
            // 20 % absorption dip at 12.5 nJ.
            write_kappa_per_nj: 1.25f64.ln() / 12.5,
            read_kappa_per_nj: calibrated::READ_KAPPA_PER_NJ,
            phonon_half_life_ps: 3.5,
            phonon_freq_thz: 40.0,
            detuning_thz: 950.0,
            absorption_fwhm_fs: 326.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseConfig {
    pub temperature_k: f64,
    /// Thermal anti-Stokes coincidence rate at the reference temperature.
    pub thermal_coinc_cps: f64,
    pub fwm_coinc_cps: f64,
    pub noise_g2: f64,
    pub thermal_enabled: bool,
    pub fwm_enabled: bool,
    /// Multiplies the noise mean in the `fig4_g2` scenario.
    pub fig4_noise_scale: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            temperature_k: 295.0,
            thermal_coinc_cps: 5.0,
            fwm_coinc_cps: calibrated::FWM_COINC_CPS,
            noise_g2: 2.0,
            thermal_enabled: true,
            fwm_enabled: true,
            fig4_noise_scale: calibrated::FIG4_NOISE_SCALE,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorConfig {
    pub efficiency: f64,
    pub dark_cps: f64,
    pub jitter_fwhm_ps: f64,
    pub dead_time_ns: f64,
}

impl DetectorConfig {
    fn with_efficiency(efficiency: f64) -> Self {
        Self {
            efficiency,
            dark_cps: 100.0,
            jitter_fwhm_ps: 500.0,
            dead_time_ns: 50.0,
        }
    }

    /// Gaussian jitter standard deviation in ps.
    pub fn jitter_sigma_ps(&self) -> f64 {
        self.jitter_fwhm_ps / FWHM_PER_SIGMA
    }
}

/// FWHM / sigma for a Gaussian, 2·sqrt(2 ln 2).
pub const FWHM_PER_SIGMA: f64 = 2.354_820_045_030_949_3;

#[derive(Debug, Clone, PartialEq)]
pub struct Detectors {
    /// Extra herald-arm factor; the per-pair click probability of the source
    /// already includes herald detection.
    pub herald: DetectorConfig,
    pub signal1: DetectorConfig,
    pub signal2: DetectorConfig,
}

impl Default for Detectors {
    fn default() -> Self {
        Self {
            herald: DetectorConfig::with_efficiency(1.0),
            signal1: DetectorConfig::with_efficiency(calibrated::SIGNAL_DETECTION_EFF),
            signal2: DetectorConfig::with_efficiency(calibrated::SIGNAL_DETECTION_EFF),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoincidenceConfig {
    pub window_ps: f64,
    pub histogram_bin_ps: f64,
    /// Half-range of the electronic-delay histogram.
    pub electronic_delay_range_ns: f64,
}

impl Default for CoincidenceConfig {
    fn default() -> Self {
        Self {
            window_ps: 1000.0,
            // 12.5 ns / 80: peaks of the delay histogram land on bin edges.
            histogram_bin_ps: 156.25,
            electronic_delay_range_ns: 100.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub laser: LaserConfig,
    pub source: SourceConfig,
    pub memory: MemoryConfig,
    pub noise: NoiseConfig,
    pub detectors: Detectors,
    pub coincidence: CoincidenceConfig,
    pub storage_time_ps: f64,
    /// Write-pulse delay relative to the signal photon.
    pub write_delay_fs: f64,
    pub herald_click_prob_per_pulse: f64,
    pub stage: Stage,
    pub input_blocked: bool,
    pub seed: u64,
    pub scenario: ScenarioId,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            laser: LaserConfig::default(),
            source: SourceConfig::default(),
            memory: MemoryConfig::default(),
            noise: NoiseConfig::default(),
            detectors: Detectors::default(),
            coincidence: CoincidenceConfig::default(),
            storage_time_ps: 0.5,
            write_delay_fs: 0.0,
            herald_click_prob_per_pulse: calibrated::HERALD_CLICK_PROB_PER_PULSE,
            stage: Stage::MemoryOutput,
            input_blocked: false,
            seed: 1,
            scenario: ScenarioId::Custom,
        }
    }
}

fn require(ok: bool, key: &str, message: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::domain(key, message))
    }
}

fn probability(key: &str, value: f64) -> Result<()> {
    require((0.0..=1.0).contains(&value), key, "must lie in [0, 1]")
}

fn non_negative(key: &str, value: f64) -> Result<()> {
    require(value >= 0.0 && value.is_finite(), key, "must be finite and >= 0")
}

fn positive(key: &str, value: f64) -> Result<()> {
    require(value > 0.0 && value.is_finite(), key, "must be finite and > 0")
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let l = &self.laser;
        positive("laser.rep_rate_MHz", l.rep_rate_mhz)?;
        positive("laser.pulse_fwhm_fs", l.pulse_fwhm_fs)?;
        non_negative("laser.write_energy_nJ", l.write_energy_nj)?;
        non_negative("laser.read_energy_nJ", l.read_energy_nj)?;

        let s = &self.source;
        non_negative("source.mean_pairs_mu", s.mean_pairs_mu)?;
        require(s.schmidt_modes_k >= 1, "source.schmidt_modes_K", "must be >= 1")?;
        probability("source.herald_click_prob_per_pair", s.herald_click_prob_per_pair)?;
        probability("source.signal_heralding_eff", s.signal_heralding_eff)?;
        positive("source.photon_fwhm_fs", s.photon_fwhm_fs)?;

        let m = &self.memory;
        non_negative("memory.write_kappa_per_nJ", m.write_kappa_per_nj)?;
        non_negative("memory.read_kappa_per_nJ", m.read_kappa_per_nj)?;
        positive("memory.phonon_half_life_ps", m.phonon_half_life_ps)?;
        positive("memory.phonon_freq_THz", m.phonon_freq_thz)?;
        non_negative("memory.detuning_THz", m.detuning_thz)?;
        positive("memory.absorption_fwhm_fs", m.absorption_fwhm_fs)?;

        let n = &self.noise;
        non_negative("noise.temperature_K", n.temperature_k)?;
        non_negative("noise.thermal_coinc_cps", n.thermal_coinc_cps)?;
        non_negative("noise.fwm_coinc_cps", n.fwm_coinc_cps)?;
        require(
            (1.0..=2.0).contains(&n.noise_g2),
            "noise.noise_g2",
            "must lie in [1, 2]",
        )?;
        non_negative("noise.fig4_noise_scale", n.fig4_noise_scale)?;

        for (name, d) in [
            ("herald", &self.detectors.herald),
            ("signal1", &self.detectors.signal1),
            ("signal2", &self.detectors.signal2),
        ] {
            probability(&format!("detectors.{name}.efficiency"), d.efficiency)?;
            non_negative(&format!("detectors.{name}.dark_cps"), d.dark_cps)?;
            non_negative(&format!("detectors.{name}.jitter_fwhm_ps"), d.jitter_fwhm_ps)?;
            non_negative(&format!("detectors.{name}.dead_time_ns"), d.dead_time_ns)?;
        }

        let c = &self.coincidence;
        positive("coincidence.window_ps", c.window_ps)?;
        positive("coincidence.histogram_bin_ps", c.histogram_bin_ps)?;
        positive("coincidence.electronic_delay_range_ns", c.electronic_delay_range_ns)?;

        non_negative("storage_time_ps", self.storage_time_ps)?;
        require(self.write_delay_fs.is_finite(), "write_delay_fs", "must be finite")?;
        probability("herald_click_prob_per_pulse", self.herald_click_prob_per_pulse)?;
        Ok(())
    }
}
