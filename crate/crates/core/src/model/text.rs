//! Flat `key = value` configuration text.
//!
//! One assignment per line, `#` starts a comment, keys carry dotted section
//! prefixes and embed their units (`memory.phonon_half_life_ps`). Keys that
//! are absent keep the calibrated defaults.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use super::config::{DetectorConfig, ExperimentConfig};
use crate::error::{Error, Result};

/// Parses configuration text into a validated [`ExperimentConfig`].
pub fn load_config(text: &str) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::default();
    let mut seen = HashSet::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content.split_once('=').ok_or_else(|| Error::Parse {
            line,
            message: format!("expected `key = value`, found `{content}`"),
        })?;
        let (key, value) = (key.trim(), value.trim());
        if key.is_empty() || value.is_empty() {
            return Err(Error::Parse {
                line,
                message: "empty key or value".into(),
            });
        }
        if !seen.insert(key.to_string()) {
            return Err(Error::Parse {
                line,
                message: format!("duplicate key `{key}`"),
            });
        }
        assign(&mut cfg, key, value).map_err(|message| Error::Parse { line, message })?;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config_file(path: &Path) -> Result<ExperimentConfig> {
    if !path.exists() {
        return Err(Error::ConfigNotFound(path.to_path_buf()));
    }
    load_config(&std::fs::read_to_string(path)?)
}

/// Renders every key, in a fixed order; `load_config(&render(c)) == c`.
pub fn render(cfg: &ExperimentConfig) -> String {
    let mut out = String::new();
    let mut section = String::new();
    for (key, value) in entries(cfg) {
        let head = key.split_once('.').map_or("", |(h, _)| h);
        if head != section && !out.is_empty() {
            out.push('\n');
        }
        section = head.to_string();
        let _ = writeln!(out, "{key} = {value}");
    }
    out
}

fn entries(cfg: &ExperimentConfig) -> Vec<(String, String)> {
    let mut v: Vec<(String, String)> = Vec::with_capacity(48);
    let mut put = |k: &str, val: String| v.push((k.to_string(), val));

    put("laser.rep_rate_MHz", cfg.laser.rep_rate_mhz.to_string());
    put("laser.pulse_fwhm_fs", cfg.laser.pulse_fwhm_fs.to_string());
    put("laser.write_energy_nJ", cfg.laser.write_energy_nj.to_string());
    put("laser.read_energy_nJ", cfg.laser.read_energy_nj.to_string());

    let s = &cfg.source;
    put("source.mean_pairs_mu", s.mean_pairs_mu.to_string());
    put("source.schmidt_modes_K", s.schmidt_modes_k.to_string());
    put(
        "source.herald_click_prob_per_pair",
        s.herald_click_prob_per_pair.to_string(),
    );
    put("source.signal_heralding_eff", s.signal_heralding_eff.to_string());
    put("source.photon_fwhm_fs", s.photon_fwhm_fs.to_string());

    let m = &cfg.memory;
    put("memory.write_kappa_per_nJ", m.write_kappa_per_nj.to_string());
    put("memory.read_kappa_per_nJ", m.read_kappa_per_nj.to_string());
    put("memory.phonon_half_life_ps", m.phonon_half_life_ps.to_string());
    put("memory.phonon_freq_THz", m.phonon_freq_thz.to_string());
    put("memory.detuning_THz", m.detuning_thz.to_string());
    put("memory.absorption_fwhm_fs", m.absorption_fwhm_fs.to_string());

    let n = &cfg.noise;
    put("noise.temperature_K", n.temperature_k.to_string());
    put("noise.thermal_coinc_cps", n.thermal_coinc_cps.to_string());
    put("noise.fwm_coinc_cps", n.fwm_coinc_cps.to_string());
    put("noise.noise_g2", n.noise_g2.to_string());
    put("noise.thermal_enabled", n.thermal_enabled.to_string());
    put("noise.fwm_enabled", n.fwm_enabled.to_string());
    put("noise.fig4_noise_scale", n.fig4_noise_scale.to_string());

    for (name, d) in [
        ("herald", &cfg.detectors.herald),
        ("signal1", &cfg.detectors.signal1),
        ("signal2", &cfg.detectors.signal2),
    ] {
        put(&format!("detectors.{name}.efficiency"), d.efficiency.to_string());
        put(&format!("detectors.{name}.dark_cps"), d.dark_cps.to_string());
        put(
            &format!("detectors.{name}.jitter_fwhm_ps"),
            d.jitter_fwhm_ps.to_string(),
        );
        put(&format!("detectors.{name}.dead_time_ns"), d.dead_time_ns.to_string());
    }

    let c = &cfg.coincidence;
    put("coincidence.window_ps", c.window_ps.to_string());
    put("coincidence.histogram_bin_ps", c.histogram_bin_ps.to_string());
    put(
        "coincidence.electronic_delay_range_ns",
        c.electronic_delay_range_ns.to_string(),
    );

    put("storage_time_ps", cfg.storage_time_ps.to_string());
    put("write_delay_fs", cfg.write_delay_fs.to_string());
    put(
        "herald_click_prob_per_pulse",
        cfg.herald_click_prob_per_pulse.to_string(),
    );
    put("stage", cfg.stage.to_string());
    put("input_blocked", cfg.input_blocked.to_string());
    put("seed", cfg.seed.to_string());
    put("scenario", cfg.scenario.to_string());
    v
}

fn float(value: &str) -> Result<f64, String> {
    value.parse::<f64>().map_err(|_| format!("`{value}` is not a number"))
}

/// Integers may be written in scientific notation (`1e9`) as long as they are integral.
pub(crate) fn integer(value: &str) -> Result<u64, String> {
    if let Ok(v) = value.parse::<u64>() {
        return Ok(v);
    }
    let f = float(value)?;
    if f.fract() == 0.0 && f >= 0.0 && f <= u64::MAX as f64 {
        Ok(f as u64)
    } else {
        Err(format!("`{value}` is not a non-negative integer"))
    }
}

fn boolean(value: &str) -> Result<bool, String> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(format!("`{value}` is not `true` or `false`")),
    }
}

fn detector_field(d: &mut DetectorConfig, field: &str, value: &str) -> Result<(), String> {
    match field {
        "efficiency" => d.efficiency = float(value)?,
        "dark_cps" => d.dark_cps = float(value)?,
        "jitter_fwhm_ps" => d.jitter_fwhm_ps = float(value)?,
        "dead_time_ns" => d.dead_time_ns = float(value)?,
        _ => return Err(format!("unknown detector field `{field}`")),
    }
    Ok(())
}

fn assign(cfg: &mut ExperimentConfig, key: &str, value: &str) -> Result<(), String> {
    match key {
        "laser.rep_rate_MHz" => cfg.laser.rep_rate_mhz = float(value)?,
        "laser.pulse_fwhm_fs" => cfg.laser.pulse_fwhm_fs = float(value)?,
        "laser.write_energy_nJ" => cfg.laser.write_energy_nj = float(value)?,
        "laser.read_energy_nJ" => cfg.laser.read_energy_nj = float(value)?,

        "source.mean_pairs_mu" => cfg.source.mean_pairs_mu = float(value)?,
        "source.schmidt_modes_K" => {
            cfg.source.schmidt_modes_k =
                u32::try_from(integer(value)?).map_err(|_| format!("`{value}` is too large"))?
        }
        "source.herald_click_prob_per_pair" => cfg.source.herald_click_prob_per_pair = float(value)?,
        "source.signal_heralding_eff" => cfg.source.signal_heralding_eff = float(value)?,
        "source.photon_fwhm_fs" => cfg.source.photon_fwhm_fs = float(value)?,

        "memory.write_kappa_per_nJ" => cfg.memory.write_kappa_per_nj = float(value)?,
        "memory.read_kappa_per_nJ" => cfg.memory.read_kappa_per_nj = float(value)?,
        "memory.phonon_half_life_ps" => cfg.memory.phonon_half_life_ps = float(value)?,
        "memory.phonon_freq_THz" => cfg.memory.phonon_freq_thz = float(value)?,
        "memory.detuning_THz" => cfg.memory.detuning_thz = float(value)?,
        "memory.absorption_fwhm_fs" => cfg.memory.absorption_fwhm_fs = float(value)?,

        "noise.temperature_K" => cfg.noise.temperature_k = float(value)?,
        "noise.thermal_coinc_cps" => cfg.noise.thermal_coinc_cps = float(value)?,
        "noise.fwm_coinc_cps" => cfg.noise.fwm_coinc_cps = float(value)?,
        "noise.noise_g2" => cfg.noise.noise_g2 = float(value)?,
        "noise.thermal_enabled" => cfg.noise.thermal_enabled = boolean(value)?,
        "noise.fwm_enabled" => cfg.noise.fwm_enabled = boolean(value)?,
        "noise.fig4_noise_scale" => cfg.noise.fig4_noise_scale = float(value)?,

        "coincidence.window_ps" => cfg.coincidence.window_ps = float(value)?,
        "coincidence.histogram_bin_ps" => cfg.coincidence.histogram_bin_ps = float(value)?,
        "coincidence.electronic_delay_range_ns" => cfg.coincidence.electronic_delay_range_ns = float(value)?,

        "storage_time_ps" => cfg.storage_time_ps = float(value)?,
        "write_delay_fs" => cfg.write_delay_fs = float(value)?,
        "herald_click_prob_per_pulse" => cfg.herald_click_prob_per_pulse = float(value)?,
        "stage" => cfg.stage = value.parse()?,
        "input_blocked" => cfg.input_blocked = boolean(value)?,
        "seed" => cfg.seed = integer(value)?,
        "scenario" => cfg.scenario = value.parse()?,

        _ => {
            let detector = key.strip_prefix("detectors.").and_then(|rest| rest.split_once('.'));
            match detector {
                Some(("herald", field)) => detector_field(&mut cfg.detectors.herald, field, value)?,
                Some(("signal1", field)) => detector_field(&mut cfg.detectors.signal1, field, value)?,
                Some(("signal2", field)) => detector_field(&mut cfg.detectors.signal2, field, value)?,
                _ => return Err(format!("unknown key `{key}`")),
            }
        }
    }
    Ok(())
}
