//! Time-tag analytics: windowed coincidences, delay histograms, the triggered
//! g² estimator and signal-to-noise.

use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::montecarlo::{Channel, TimeTag};

/// The four counts of the triggered g² estimator plus their context.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct CoincidenceTally {
    pub n_h: u64,
    pub n_h1: u64,
    pub n_h2: u64,
    pub n_h12: u64,
    pub window_ps: f64,
    pub electronic_delay_ns: f64,
    pub duration_s: f64,
}

/// Herald→signal delay counts; bin `i` covers `[(first_bin + i)·w, (first_bin + i + 1)·w)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DelayHistogram {
    pub bin_width_ps: f64,
    pub first_bin: i64,
    pub counts: Vec<u64>,
}

impl DelayHistogram {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Lower edge of bin `i` in ps.
    pub fn bin_start_ps(&self, i: usize) -> f64 {
        (self.first_bin + i as i64) as f64 * self.bin_width_ps
    }

    pub fn bin_center_ps(&self, i: usize) -> f64 {
        self.bin_start_ps(i) + 0.5 * self.bin_width_ps
    }
}

fn channel_times(stream: &[TimeTag], ch: Channel) -> Result<Vec<i128>> {
    let times: Vec<i128> = stream
        .iter()
        .filter(|t| t.channel == ch)
        .map(|t| i128::from(t.time_fs))
        .collect();
    if times.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::Unsorted(format!("{ch:?}")));
    }
    Ok(times)
}

fn ps_to_fs(ps: f64) -> i128 {
    (ps * 1e3).round() as i128
}

fn check_window(window_ps: f64) -> Result<()> {
    if window_ps > 0.0 && window_ps.is_finite() {
        Ok(())
    } else {
        Err(Error::domain("window_ps", "must be > 0"))
    }
}

/// Pairs with `|t_b − t_a − delay| ≤ window/2`, each tag used at most once,
/// each `a` taking the earliest unused `b`.
pub(crate) fn greedy_pairs(a: &[i128], b: &[i128], half_window: i128, delay: i128) -> u64 {
    let mut j = 0;
    let mut count = 0;
    for &ta in a {
        let lo = ta + delay - half_window;
        let hi = ta + delay + half_window;
        while j < b.len() && b[j] < lo {
            j += 1;
        }
        if j < b.len() && b[j] <= hi {
            count += 1;
            j += 1;
        }
    }
    count
}

pub fn count_pairs(stream: &[TimeTag], ch_a: Channel, ch_b: Channel, window_ps: f64, delay_ps: f64) -> Result<u64> {
    check_window(window_ps)?;
    let a = channel_times(stream, ch_a)?;
    let b = channel_times(stream, ch_b)?;
    Ok(greedy_pairs(&a, &b, ps_to_fs(window_ps) / 2, ps_to_fs(delay_ps)))
}

fn any_within(times: &[i128], lo: i128, hi: i128) -> bool {
    let i = times.partition_point(|&t| t < lo);
    i < times.len() && times[i] <= hi
}

/// Heralds with a tag on both signal arms within `window/2`; tags may be shared.
pub fn count_triples(stream: &[TimeTag], window_ps: f64) -> Result<u64> {
    check_window(window_ps)?;
    let h = channel_times(stream, Channel::Herald)?;
    let s1 = channel_times(stream, Channel::Signal1)?;
    let s2 = channel_times(stream, Channel::Signal2)?;
    let half = ps_to_fs(window_ps) / 2;
    Ok(h.iter()
        .filter(|&&t| any_within(&s1, t - half, t + half) && any_within(&s2, t - half, t + half))
        .count() as u64)
}

/// Coincidence counts for the g² estimator from a tag stream.
pub fn tally_from_stream(stream: &[TimeTag], window_ps: f64, delay_ps: f64) -> Result<CoincidenceTally> {
    check_window(window_ps)?;
    let h = channel_times(stream, Channel::Herald)?;
    let s1 = channel_times(stream, Channel::Signal1)?;
    let s2 = channel_times(stream, Channel::Signal2)?;
    let half = ps_to_fs(window_ps) / 2;
    let delay = ps_to_fs(delay_ps);
    let span = match (stream.first(), stream.last()) {
        (Some(a), Some(b)) => (b.time_fs - a.time_fs) as f64 * 1e-15,
        _ => 0.0,
    };
    Ok(CoincidenceTally {
        n_h: h.len() as u64,
        n_h1: greedy_pairs(&h, &s1, half, delay),
        n_h2: greedy_pairs(&h, &s2, half, delay),
        n_h12: h
            .iter()
            .filter(|&&t| {
                any_within(&s1, t + delay - half, t + delay + half)
                    && any_within(&s2, t + delay - half, t + delay + half)
            })
            .count() as u64,
        window_ps,
        electronic_delay_ns: delay_ps * 1e-3,
        duration_s: span,
    })
}

/// `g² = N_h12·N_h/(N_h1·N_h2)` with Poisson error propagation.
///
/// With `N_h12 = 0` the `1/N_h12` term is dropped and sigma is an upper-bound scale.
pub fn g2_from_counts(t: &CoincidenceTally) -> Result<(f64, f64)> {
    if t.n_h1 == 0 || t.n_h2 == 0 {
        return Err(Error::DivisionByZero("N_h1 or N_h2 is zero".into()));
    }
    g2_from_rates(t.n_h as f64, t.n_h1 as f64, t.n_h2 as f64, t.n_h12 as f64)
}

/// [`g2_from_counts`] on real-valued (e.g. expected) counts.
pub fn g2_from_rates(n_h: f64, n_h1: f64, n_h2: f64, n_h12: f64) -> Result<(f64, f64)> {
    if n_h1 <= 0.0 || n_h2 <= 0.0 {
        return Err(Error::DivisionByZero("N_h1 or N_h2 is zero".into()));
    }
    let value = n_h12 * n_h / (n_h1 * n_h2);
    let mut rel = 1.0 / n_h1 + 1.0 / n_h2;
    if n_h > 0.0 {
        rel += 1.0 / n_h;
    }
    if n_h12 > 0.0 {
        rel += 1.0 / n_h12;
    }
    Ok((value, value * rel.sqrt()))
}

/// Standard deviations below the classical limit of 1.
pub fn classicality_z(g2: f64, sigma: f64) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(Error::domain("sigma", "must be > 0"));
    }
    Ok((1.0 - g2) / sigma)
}

/// Signal-to-noise from raw rates measured with the input open and blocked.
pub fn snr(signal_plus_noise_rate: f64, noise_rate: f64) -> Result<f64> {
    if !(noise_rate > 0.0) {
        return Err(Error::domain("noise_rate", "must be > 0"));
    }
    Ok((signal_plus_noise_rate - noise_rate) / noise_rate)
}

/// Histogram of all herald→signal delays (both arms) within `±range_ns`.
pub fn delay_histogram(stream: &[TimeTag], bin_ps: f64, range_ns: f64) -> Result<DelayHistogram> {
    let w = ps_to_fs(bin_ps);
    if w < 1 {
        return Err(Error::domain("bin_ps", "must be at least 1 fs"));
    }
    if !(range_ns > 0.0 && range_ns.is_finite()) {
        return Err(Error::domain("range_ns", "must be > 0"));
    }
    let range = (range_ns * 1e6).round() as i128;
    let first = -range.div_euclid(w) - i128::from(range.rem_euclid(w) != 0);
    let last = (range - 1).div_euclid(w);
    let mut counts = vec![0u64; (last - first + 1) as usize];
    let h = channel_times(stream, Channel::Herald)?;
    for ch in [Channel::Signal1, Channel::Signal2] {
        let s = channel_times(stream, ch)?;
        let mut lo = 0;
        for &th in &h {
            while lo < s.len() && s[lo] < th - range {
                lo += 1;
            }
            for &ts in s[lo..].iter().take_while(|&&ts| ts < th + range) {
                let k = (ts - th).div_euclid(w);
                counts[(k - first) as usize] += 1;
            }
        }
    }
    Ok(DelayHistogram {
        bin_width_ps: w as f64 / 1e3,
        first_bin: first as i64,
        counts,
    })
}

/// Peak structure of a delay histogram with one peak per laser period.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PeakAnalysis {
    /// Lag maximizing the histogram autocorrelation.
    pub spacing_ns: f64,
    /// Counts in the zero-delay period cell.
    pub zero_peak: f64,
    /// Mean counts of the other complete period cells.
    pub mean_accidental: f64,
    pub ratio: f64,
    /// FWHM of the peak shape, from all complete period cells folded onto one.
    pub fwhm_ps: f64,
}

pub fn analyze_peaks(hist: &DelayHistogram, period_ns: f64) -> Result<PeakAnalysis> {
    let period_ps = period_ns * 1e3;
    let w = hist.bin_width_ps;
    let n = hist.counts.len();
    let y: Vec<f64> = hist.counts.iter().map(|&c| c as f64).collect();
    let mean = y.iter().sum::<f64>() / n as f64;
    let max_lag = ((1.5 * period_ps / w) as usize).min(n.saturating_sub(1));
    let min_lag = ((0.5 * period_ps / w) as usize).max(1);
    let mut best = (f64::NEG_INFINITY, 0usize);
    for lag in min_lag..=max_lag {
        let c: f64 = (0..n - lag).map(|i| (y[i] - mean) * (y[i + lag] - mean)).sum::<f64>() / (n - lag) as f64;
        if c > best.0 {
            best = (c, lag);
        }
    }
    if best.1 == 0 {
        return Err(Error::Degenerate("histogram too short for peak spacing".into()));
    }

    // Period cells [kT − T/2, kT + T/2) by bin centre.
    let lo_k = (hist.bin_start_ps(0) / period_ps).ceil() as i64;
    let hi_k = (hist.bin_start_ps(n - 1) / period_ps).floor() as i64;
    let mut zero = 0.0;
    let mut others = Vec::new();
    for k in lo_k..=hi_k {
        let (a, b) = ((k as f64 - 0.5) * period_ps, (k as f64 + 0.5) * period_ps);
        if a < hist.bin_start_ps(0) || b > hist.bin_start_ps(n - 1) + w {
            continue;
        }
        let sum: f64 = (0..n)
            .filter(|&i| (a..b).contains(&hist.bin_center_ps(i)))
            .map(|i| y[i])
            .sum();
        if k == 0 {
            zero = sum;
        } else {
            others.push(sum);
        }
    }
    if others.is_empty() {
        return Err(Error::Degenerate("no complete accidental peaks in range".into()));
    }
    let mean_acc = others.iter().sum::<f64>() / others.len() as f64;

    let fwhm = folded_fwhm(hist, period_ps, lo_k, hi_k);
    Ok(PeakAnalysis {
        spacing_ns: best.1 as f64 * w / 1e3,
        zero_peak: zero,
        mean_accidental: mean_acc,
        ratio: if mean_acc > 0.0 { zero / mean_acc } else { f64::INFINITY },
        fwhm_ps: fwhm,
    })
}

/// Peak FWHM of the histogram folded modulo the period.
///
/// A flat baseline is taken from the outer half of the folded cell; the width
/// is the second moment inside ±3σ, iterated and corrected for the truncation
/// and for bin quantization. Restricting the window keeps the few uniformly
/// spread dark-count pairs from dominating the moment.
fn folded_fwhm(hist: &DelayHistogram, period_ps: f64, lo_k: i64, hi_k: i64) -> f64 {
    let w = hist.bin_width_ps;
    let n = hist.counts.len();
    let (first, last) = ((lo_k as f64 - 0.5) * period_ps, (hi_k as f64 + 0.5) * period_ps);
    let pts: Vec<(f64, f64)> = (0..n)
        .map(|i| (hist.bin_center_ps(i), hist.counts[i] as f64))
        .filter(|(t, _)| *t >= first.max(hist.bin_start_ps(0)) && *t < last.min(hist.bin_start_ps(n - 1) + w))
        .map(|(t, c)| (t - (t / period_ps).round() * period_ps, c))
        .collect();
    let outer: Vec<f64> = pts
        .iter()
        .filter(|(r, _)| r.abs() >= 0.25 * period_ps)
        .map(|p| p.1)
        .collect();
    let base = if outer.is_empty() {
        0.0
    } else {
        outer.iter().sum::<f64>() / outer.len() as f64
    };
    let moments = |half: f64| {
        let (mut m0, mut m2) = (0.0, 0.0);
        for (r, c) in pts.iter().filter(|(r, _)| r.abs() <= half) {
            m0 += c - base;
            m2 += (c - base) * r * r;
        }
        (m0, m2)
    };
    // Variance of a unit Gaussian truncated to ±3.
    let a = 3.0;
    let pdf = (-a * a / 2.0f64).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let kept = 1.0 - statrs::function::erf::erfc(a / std::f64::consts::SQRT_2);
    let shrink = 1.0 - 2.0 * a * pdf / kept;
    let (m0, m2) = moments(0.25 * period_ps);
    if !(m0 > 0.0 && m2 > 0.0) {
        return 0.0;
    }
    let mut sigma = (m2 / m0).sqrt();
    for _ in 0..50 {
        let (m0, m2) = moments(a * sigma);
        if !(m0 > 0.0 && m2 > 0.0) {
            return 0.0;
        }
        let next = ((m2 / m0 - w * w / 12.0).max(0.0) / shrink).sqrt();
        if (next - sigma).abs() <= 1e-9 * sigma {
            sigma = next;
            break;
        }
        sigma = next;
    }
    crate::model::FWHM_PER_SIGMA * sigma
}

pub fn write_histogram_csv<W: Write>(hist: &DelayHistogram, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["delay_ns", "counts"])?;
    for (i, c) in hist.counts.iter().enumerate() {
        w.write_record([format!("{}", hist.bin_center_ps(i) / 1e3), c.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_tally_csv<W: Write>(t: &CoincidenceTally, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["N_h", "N_h1", "N_h2", "N_h12", "g2", "sigma"])?;
    let (g2, sigma) = g2_from_counts(t).unwrap_or((f64::NAN, f64::NAN));
    w.write_record([
        t.n_h.to_string(),
        t.n_h1.to_string(),
        t.n_h2.to_string(),
        t.n_h12.to_string(),
        g2.to_string(),
        sigma.to_string(),
    ])?;
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn tag(channel: Channel, time_fs: u64) -> TimeTag {
        TimeTag {
            channel,
            pulse_index: time_fs / 12_500_000,
            time_fs,
            flags: 0,
        }
    }

    #[test]
    fn pair_edges() {
        let s = vec![tag(Channel::Herald, 1000), tag(Channel::Signal1, 1000)];
        assert_eq!(count_pairs(&s, Channel::Herald, Channel::Signal1, 1.0, 0.0).unwrap(), 1);
        let s = vec![tag(Channel::Herald, 0), tag(Channel::Signal1, 500_000)];
        assert_eq!(
            count_pairs(&s, Channel::Herald, Channel::Signal1, 1000.0, 0.0).unwrap(),
            1
        );
        let s = vec![tag(Channel::Herald, 0), tag(Channel::Signal1, 500_001)];
        assert_eq!(
            count_pairs(&s, Channel::Herald, Channel::Signal1, 1000.0, 0.0).unwrap(),
            0
        );
        let s = vec![tag(Channel::Signal1, 5), tag(Channel::Signal1, 1)];
        assert!(matches!(
            count_pairs(&s, Channel::Herald, Channel::Signal1, 1.0, 0.0),
            Err(Error::Unsorted(_))
        ));
    }

    #[test]
    fn triples() {
        let both = vec![
            tag(Channel::Herald, 100),
            tag(Channel::Signal1, 200),
            tag(Channel::Signal2, 300),
        ];
        assert_eq!(count_triples(&both, 1.0).unwrap(), 1);
        let one = vec![tag(Channel::Herald, 100), tag(Channel::Signal1, 200)];
        assert_eq!(count_triples(&one, 1.0).unwrap(), 0);
    }

    #[test]
    fn g2_arithmetic() {
        let t = |n_h, n_h1, n_h2, n_h12| CoincidenceTally {
            n_h,
            n_h1,
            n_h2,
            n_h12,
            ..Default::default()
        };
        assert_eq!(g2_from_counts(&t(1_000_000, 1000, 1000, 0)).unwrap().0, 0.0);
        assert_relative_eq!(g2_from_counts(&t(100, 20, 50, 10)).unwrap().0, 1.0);
        let (v, _) = g2_from_rates(1e6, 2000.0, 2000.0, 2.6).unwrap();
        assert_relative_eq!(v, 0.65, max_relative = 1e-12);
        assert!(g2_from_counts(&t(10, 0, 3, 0)).is_err());
    }

    #[test]
    fn z_and_snr() {
        assert_relative_eq!(classicality_z(0.65, 0.07).unwrap(), 5.0, max_relative = 1e-12);
        assert_eq!(classicality_z(1.0, 0.3).unwrap(), 0.0);
        assert_relative_eq!(classicality_z(0.04, 0.01).unwrap(), 96.0, max_relative = 1e-12);
        assert!(classicality_z(0.5, 0.0).is_err());
        assert_relative_eq!(snr(28.757 + 7.5676, 7.5676).unwrap(), 3.80, max_relative = 1e-3);
        assert_eq!(snr(5.0, 5.0).unwrap(), 0.0);
        assert!(snr(1.0, 0.0).is_err());
    }

    #[test]
    fn empty_histogram() {
        let h = delay_histogram(&[], 156.25, 100.0).unwrap();
        assert_eq!(h.total(), 0);
        assert_eq!(h.counts.len(), 1280);
        assert_eq!(h.bin_start_ps(0), -100_000.0);
    }
}
