//! Least-squares fits of the absorption dip and the retrieval decay, and the
//! pulse-width deconvolution.

use std::f64::consts::LN_2;
use std::io::{Read, Write};

use nalgebra::{Matrix3, Vector3};
use serde::Serialize;

use crate::error::{Error, Result};

pub const MAX_ITERATIONS: usize = 1000;
/// Convergence threshold on the largest relative parameter change.
pub const PARAM_TOLERANCE: f64 = 1e-10;

/// Result of a three-parameter fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FitResult {
    pub params: [f64; 3],
    /// One-sigma errors from `s²·(JᵀJ)⁻¹`, `s² = rss/(n − 3)`.
    pub std_errors: [f64; 3],
    pub rss: f64,
    pub converged: bool,
    pub iterations: usize,
}

/// `1 − depth·exp(−4 ln2 (t − center)²/fwhm²)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DipFit {
    pub depth: f64,
    pub fwhm_fs: f64,
    pub center_fs: f64,
    pub fit: FitResult,
}

/// `amplitude·2^(−τ/half_life) + offset`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DecayFit {
    pub amplitude: f64,
    pub half_life_ps: f64,
    pub offset: f64,
    pub fit: FitResult,
}

trait Model {
    /// Value and gradient with respect to the parameters.
    fn eval(&self, p: &Vector3<f64>, x: f64) -> (f64, Vector3<f64>);
    fn admissible(&self, p: &Vector3<f64>) -> bool;
    /// Magnitudes against which parameter steps are judged.
    fn scale(&self, p: &Vector3<f64>) -> Vector3<f64>;
}

struct Dip;

impl Model for Dip {
    fn eval(&self, p: &Vector3<f64>, x: f64) -> (f64, Vector3<f64>) {
        let (d, w, c) = (p[0], p[1], p[2]);
        let u = x - c;
        let g = (-4.0 * LN_2 * u * u / (w * w)).exp();
        let grad = Vector3::new(
            -g,
            -d * g * 8.0 * LN_2 * u * u / (w * w * w),
            -d * g * 8.0 * LN_2 * u / (w * w),
        );
        (1.0 - d * g, grad)
    }

    fn admissible(&self, p: &Vector3<f64>) -> bool {
        p[1] > 0.0
    }

    fn scale(&self, p: &Vector3<f64>) -> Vector3<f64> {
        Vector3::new(p[0].abs(), p[1].abs(), p[1].abs())
    }
}

struct Decay;

impl Model for Decay {
    fn eval(&self, p: &Vector3<f64>, x: f64) -> (f64, Vector3<f64>) {
        let (a, t) = (p[0], p[1]);
        let e = (-x / t).exp2();
        (a * e + p[2], Vector3::new(e, a * e * LN_2 * x / (t * t), 1.0))
    }

    fn admissible(&self, p: &Vector3<f64>) -> bool {
        p[1] > 0.0
    }

    fn scale(&self, p: &Vector3<f64>) -> Vector3<f64> {
        Vector3::new(p[0].abs(), p[1].abs(), p[2].abs().max(p[0].abs()))
    }
}

fn normal_equations<M: Model>(m: &M, p: &Vector3<f64>, pts: &[(f64, f64)]) -> (f64, Matrix3<f64>, Vector3<f64>) {
    let mut rss = 0.0;
    let mut jtj = Matrix3::zeros();
    let mut jtr = Vector3::zeros();
    for &(x, y) in pts {
        let (f, g) = m.eval(p, x);
        let r = y - f;
        rss += r * r;
        jtj += g * g.transpose();
        jtr += g * r;
    }
    (rss, jtj, jtr)
}

fn levenberg_marquardt<M: Model>(m: &M, pts: &[(f64, f64)], start: Vector3<f64>) -> Result<FitResult> {
    let mut p = start;
    let (mut rss, mut jtj, mut jtr) = normal_equations(m, &p, pts);
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < MAX_ITERATIONS {
        iterations += 1;
        if rss == 0.0 {
            converged = true;
            break;
        }
        let mut a = jtj;
        for i in 0..3 {
            a[(i, i)] += lambda * jtj[(i, i)].max(1e-300);
        }
        let Some(step) = a.lu().solve(&jtr) else {
            lambda *= 10.0;
            continue;
        };
        let trial = p + step;
        let (trial_rss, trial_jtj, trial_jtr) = normal_equations(m, &trial, pts);
        if m.admissible(&trial) && trial_rss.is_finite() && trial_rss <= rss {
            let scale = m.scale(&trial);
            let rel = (0..3).map(|i| step[i].abs() / scale[i].max(1e-300)).fold(0.0, f64::max);
            p = trial;
            rss = trial_rss;
            jtj = trial_jtj;
            jtr = trial_jtr;
            lambda = (lambda / 10.0).max(1e-12);
            if rel < PARAM_TOLERANCE {
                converged = true;
                break;
            }
        } else {
            lambda *= 10.0;
            // No downhill step at any damping: stationary to machine precision.
            if lambda > 1e16 {
                converged = true;
                break;
            }
        }
    }
    if !converged {
        return Err(Error::NonConvergence(MAX_ITERATIONS));
    }
    let dof = pts.len().saturating_sub(3);
    let s2 = if dof > 0 { rss / dof as f64 } else { 0.0 };
    let cov = jtj.try_inverse().unwrap_or_else(Matrix3::zeros);
    Ok(FitResult {
        params: [p[0], p[1], p[2]],
        std_errors: std::array::from_fn(|i| (s2 * cov[(i, i)]).max(0.0).sqrt()),
        rss,
        converged,
        iterations,
    })
}

fn check_points(points: &[(f64, f64)], min: usize) -> Result<()> {
    if points.len() < min {
        return Err(Error::Degenerate(format!(
            "need at least {min} points, got {}",
            points.len()
        )));
    }
    if points.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
        return Err(Error::Degenerate("non-finite data".into()));
    }
    Ok(())
}

fn sorted(points: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut v = points.to_vec();
    v.sort_by(|a, b| a.0.total_cmp(&b.0));
    v
}

/// Abscissa where a piecewise-linear interpolation of `pts` first crosses `level`
/// walking away from index `from` in direction `dir`.
fn crossing(pts: &[(f64, f64)], from: usize, dir: isize, level: f64, above: bool) -> Option<f64> {
    let mut i = from as isize;
    loop {
        let j = i + dir;
        if j < 0 || j >= pts.len() as isize {
            return None;
        }
        let (x0, y0) = pts[i as usize];
        let (x1, y1) = pts[j as usize];
        if (y1 >= level) == above {
            return Some(if y1 == y0 {
                x1
            } else {
                x0 + (level - y0) * (x1 - x0) / (y1 - y0)
            });
        }
        i = j;
    }
}

/// Fits `1 − d·exp(−4 ln2 (t − c)²/w²)` to `(delay_fs, transmission)` points.
///
/// Starts from the deepest point and the half-depth crossings around it.
pub fn fit_gaussian_dip(points: &[(f64, f64)]) -> Result<DipFit> {
    check_points(points, 4)?;
    let pts = sorted(points);
    let (imin, &(c0, ymin)) = pts
        .iter()
        .enumerate()
        .min_by(|a, b| a.1 .1.total_cmp(&b.1 .1))
        .expect("non-empty");
    let ymax = pts.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    let d0 = 1.0 - ymin;
    if ymax - ymin <= 1e-12 * ymax.abs().max(1.0) || d0 <= 0.0 {
        return Err(Error::Degenerate("no dip in the data".into()));
    }
    let half = 1.0 - d0 / 2.0;
    let span = pts[pts.len() - 1].0 - pts[0].0;
    let w0 = match (
        crossing(&pts, imin, -1, half, true),
        crossing(&pts, imin, 1, half, true),
    ) {
        (Some(l), Some(r)) => r - l,
        (Some(e), None) | (None, Some(e)) => 2.0 * (e - c0).abs(),
        (None, None) => span / 2.0,
    };
    let w0 = if w0 > 0.0 { w0 } else { span / 4.0 };
    let fit = levenberg_marquardt(&Dip, &pts, Vector3::new(d0, w0, c0))?;
    Ok(DipFit {
        depth: fit.params[0],
        fwhm_fs: fit.params[1].abs(),
        center_fs: fit.params[2],
        fit,
    })
}

/// Fits `A·2^(−τ/T½) + B` to `(tau_ps, rate)` points.
///
/// Starts from `B` = smallest rate, `A` from the earliest point, and `T½` from
/// the half-amplitude crossing.
pub fn fit_half_life(points: &[(f64, f64)]) -> Result<DecayFit> {
    check_points(points, 3)?;
    let pts = sorted(points);
    let span = pts[pts.len() - 1].0 - pts[0].0;
    if !(span > 0.0) {
        return Err(Error::Degenerate("no spread in storage time".into()));
    }
    let ymin = pts.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    let ymax = pts.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    if ymax - ymin <= 1e-12 * ymax.abs().max(f64::MIN_POSITIVE) {
        return Err(Error::Degenerate("constant data".into()));
    }
    let (x0, y0) = pts[0];
    let b0 = ymin;
    let level = b0 + (y0 - b0) / 2.0;
    let t0 = crossing(&pts, 0, 1, level, false)
        .map(|x| x - x0)
        .filter(|t| *t > 0.0)
        .unwrap_or(span / 2.0);
    let a0 = (y0 - b0) * (x0 / t0).exp2();
    let fit = levenberg_marquardt(&Decay, &pts, Vector3::new(a0, t0, b0))?;
    Ok(DecayFit {
        amplitude: fit.params[0],
        half_life_ps: fit.params[1],
        offset: fit.params[2],
        fit,
    })
}

/// Photon width from the absorption width and write-pulse width, `sqrt(w_a² − w_w²)`,
/// for transform-limited Gaussian pulses.
pub fn deconvolve_width(w_a_fs: f64, w_w_fs: f64) -> Result<f64> {
    if !(w_w_fs >= 0.0) {
        return Err(Error::domain("w_w_fs", "must be >= 0"));
    }
    if !(w_a_fs >= w_w_fs) {
        return Err(Error::domain("w_a_fs", "must be >= the write-pulse width"));
    }
    Ok(((w_a_fs - w_w_fs) * (w_a_fs + w_w_fs)).sqrt())
}

/// Reads `(x, y)` pairs from the first two columns of a CSV with a header row.
pub fn read_points_csv<R: Read>(input: R) -> Result<Vec<(f64, f64)>> {
    let mut r = csv::Reader::from_reader(input);
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let field = |k: usize| -> Result<f64> {
            rec.get(k)
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| Error::Parse {
                    line: i + 2,
                    message: format!("column {} is not a number", k + 1),
                })
        };
        out.push((field(0)?, field(1)?));
    }
    Ok(out)
}

/// Writes a fit as `parameter, value, std_error` rows followed by `rss` and `converged`.
pub fn write_fit_csv<W: Write>(names: [&str; 3], fit: &FitResult, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["parameter", "value", "std_error"])?;
    for ((name, value), err) in names.into_iter().zip(fit.params).zip(fit.std_errors) {
        w.write_record([name, &value.to_string(), &err.to_string()])?;
    }
    w.write_record(["rss", &fit.rss.to_string(), ""])?;
    w.write_record(["converged", &fit.converged.to_string(), ""])?;
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn dip(d: f64, w: f64, c: f64) -> Vec<(f64, f64)> {
        (-40..=40)
            .map(|i| {
                let t = f64::from(i) * 25.0;
                (t, 1.0 - d * (-4.0 * LN_2 * (t - c).powi(2) / (w * w)).exp())
            })
            .collect()
    }

    #[test]
    fn recovers_noiseless_dip() {
        let f = fit_gaussian_dip(&dip(0.2, 326.0, 0.0)).unwrap();
        assert_relative_eq!(f.depth, 0.2, max_relative = 1e-6);
        assert_relative_eq!(f.fwhm_fs, 326.0, max_relative = 1e-6);
        assert!(f.center_fs.abs() < 1e-6);
        assert!(f.fit.rss < 1e-10);
    }

    #[test]
    fn flat_data_is_degenerate() {
        let flat: Vec<_> = (0..20).map(|i| (f64::from(i), 1.0)).collect();
        assert!(matches!(fit_gaussian_dip(&flat), Err(Error::Degenerate(_))));
        assert!(matches!(fit_half_life(&flat), Err(Error::Degenerate(_))));
        assert!(fit_gaussian_dip(&flat[..3]).is_err());
    }

    #[test]
    fn recovers_noiseless_decay() {
        let pts: Vec<_> = (0..8)
            .map(|i| {
                let t = f64::from(i) * 1.5;
                (t, 30.0 * (-t / 3.5).exp2() + 8.0)
            })
            .collect();
        let f = fit_half_life(&pts).unwrap();
        assert_relative_eq!(f.half_life_ps, 3.5, max_relative = 1e-6);
        assert_relative_eq!(f.amplitude, 30.0, max_relative = 1e-6);
        assert_relative_eq!(f.offset, 8.0, max_relative = 1e-6);
        assert!(f.fit.rss < 1e-10);
    }

    #[test]
    fn deconvolution() {
        assert!((deconvolve_width(326.0, 190.0).unwrap() - 264.9).abs() < 0.1);
        assert_eq!(deconvolve_width(5.0, 3.0).unwrap(), 4.0);
        assert_eq!(deconvolve_width(7.0, 0.0).unwrap(), 7.0);
        assert!(deconvolve_width(3.0, 5.0).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let pts = read_points_csv("tau_ps,rate\n0.5,3.0\n1,2.5\n".as_bytes()).unwrap();
        assert_eq!(pts, vec![(0.5, 3.0), (1.0, 2.5)]);
        assert!(matches!(
            read_points_csv("a,b\n1,x\n".as_bytes()),
            Err(Error::Parse { line: 2, .. })
        ));
    }
}
