use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{percentile, CtfRecord};
use crate::error::{json_error_offset, Error, Result};

const MAX_AMP: f64 = 1.5;
const MAX_ITER: usize = 200;
const REL_TOL: f64 = 1e-10;

/// `A * exp(-(pi * sigma / d)^2)`.
pub fn ctf_model(amp: f64, sigma: f64, d: f64) -> f64 {
    amp * (-(PI * sigma / d).powi(2)).exp()
}

/// Partial derivatives of [`ctf_model`] with respect to `(A, sigma)`.
pub fn ctf_model_jacobian(amp: f64, sigma: f64, d: f64) -> [f64; 2] {
    let e = (-(PI * sigma / d).powi(2)).exp();
    [e, -2.0 * amp * e * PI * PI * sigma / (d * d)]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CtfModelFit {
    #[serde(rename = "amp_A")]
    pub amp_a: f64,
    pub sigma: f64,
    pub residual_rms: f64,
    pub n_points: usize,
    /// Infinite (`null` in JSON) when the data cannot constrain it.
    #[serde(rename = "se_amp_A", with = "unbounded")]
    pub se_amp_a: f64,
    #[serde(with = "unbounded")]
    pub se_sigma: f64,
    pub iterations: usize,
    pub converged: bool,
    pub poorly_constrained: bool,
}

/// JSON has no infinity; store non-finite values as null.
mod unbounded {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

impl CtfModelFit {
    pub fn eval(&self, d: f64) -> f64 {
        ctf_model(self.amp_a, self.sigma, d)
    }
}

/// Fits the model to the valid records.
pub fn fit_ctf_model(records: &[CtfRecord], init: Option<(f64, f64)>) -> Result<CtfModelFit> {
    let (d, c): (Vec<f64>, Vec<f64>) = records
        .iter()
        .filter(|r| r.valid)
        .map(|r| (r.region.d, r.c_test))
        .unzip();
    fit_ctf_points(&d, &c, init)
}

fn cost(d: &[f64], c: &[f64], p: (f64, f64)) -> f64 {
    d.iter()
        .zip(c)
        .map(|(&d, &c)| (c - ctf_model(p.0, p.1, d)).powi(2))
        .sum()
}

/// Normal-equation matrix and gradient at `p`.
fn normal_eq(d: &[f64], c: &[f64], p: (f64, f64)) -> ([[f64; 2]; 2], [f64; 2]) {
    let mut jtj = [[0.0; 2]; 2];
    let mut jtr = [0.0; 2];
    for (&d, &c) in d.iter().zip(c) {
        let j = ctf_model_jacobian(p.0, p.1, d);
        let r = c - ctf_model(p.0, p.1, d);
        for a in 0..2 {
            jtr[a] += j[a] * r;
            for b in 0..2 {
                jtj[a][b] += j[a] * j[b];
            }
        }
    }
    (jtj, jtr)
}

fn inverse2(m: [[f64; 2]; 2]) -> Option<[[f64; 2]; 2]> {
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    let scale = m[0][0].abs().max(m[1][1].abs());
    if !(det.abs() > 1e-14 * scale * scale) {
        return None;
    }
    Some([
        [m[1][1] / det, -m[0][1] / det],
        [-m[1][0] / det, m[0][0] / det],
    ])
}

/// Damped Gauss-Newton least squares for `(A, sigma)`. Unweighted.
pub fn fit_ctf_points(d: &[f64], c: &[f64], init: Option<(f64, f64)>) -> Result<CtfModelFit> {
    if d.len() != c.len() {
        return Err(Error::input(
            "distance and contrast arrays differ in length",
        ));
    }
    if d.iter().chain(c).any(|v| !v.is_finite()) || d.iter().any(|&v| v <= 0.0) {
        return Err(Error::input(
            "fit needs finite contrasts and positive distances",
        ));
    }
    let mut distinct = d.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if d.len() < 3 || distinct.len() < 3 {
        return Err(Error::insufficient(format!(
            "model fit needs at least 3 points at distinct distances (got {} points, {} distinct)",
            d.len(),
            distinct.len()
        )));
    }
    let d_max = distinct[distinct.len() - 1];
    let (amp_lo, sig_lo, sig_hi) = (1e-9, 1e-9 * d_max, 10.0 * d_max);
    let clamp = |p: (f64, f64)| (p.0.clamp(amp_lo, MAX_AMP), p.1.clamp(sig_lo, sig_hi));

    let mut p = match init {
        Some(p) => p,
        None => {
            let a0 = percentile(c, 95.0)?;
            let a0 = if a0 > 0.0 { a0 } else { 0.5 };
            let s0 = percentile(d, 50.0)? * (a0 / 0.2).max(1.01).ln().sqrt() / PI;
            (a0, s0)
        }
    };
    p = clamp(p);
    let mut f = cost(d, c, p);
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < MAX_ITER {
        iterations += 1;
        if f <= 1e-30 * d.len() as f64 {
            converged = true;
            break;
        }
        let (jtj, jtr) = normal_eq(d, c, p);
        let damped = [
            [jtj[0][0] * (1.0 + lambda) + 1e-300, jtj[0][1]],
            [jtj[1][0], jtj[1][1] * (1.0 + lambda) + 1e-300],
        ];
        let step = inverse2(damped).map(|m| {
            (
                m[0][0] * jtr[0] + m[0][1] * jtr[1],
                m[1][0] * jtr[0] + m[1][1] * jtr[1],
            )
        });
        let Some(step) = step else {
            // Degenerate curvature: nothing further to gain.
            converged = true;
            break;
        };
        let cand = clamp((p.0 + step.0, p.1 + step.1));
        let fc = cost(d, c, cand);
        if fc < f {
            let rel = (f - fc) / f;
            p = cand;
            f = fc;
            lambda = (lambda / 10.0).max(1e-12);
            if rel < REL_TOL {
                converged = true;
                break;
            }
        } else {
            lambda *= 10.0;
            if lambda > 1e16 {
                converged = true;
                break;
            }
        }
    }
    if !converged {
        log::warn!("CTF model fit stopped after {MAX_ITER} iterations without converging");
    }

    let n = d.len();
    let (jtj, _) = normal_eq(d, c, p);
    let s2 = f / (n - 2) as f64;
    let (se_a, se_s) = match inverse2(jtj) {
        Some(cov) => ((s2 * cov[0][0]).sqrt(), (s2 * cov[1][1]).sqrt()),
        None => (f64::INFINITY, f64::INFINITY),
    };
    let at_bound = p.0 >= MAX_AMP || p.1 <= sig_lo * 1e3 || p.1 >= sig_hi;
    let poorly_constrained =
        !se_a.is_finite() || !se_s.is_finite() || at_bound || se_s > p.1 || se_a > p.0;
    Ok(CtfModelFit {
        amp_a: p.0,
        sigma: p.1,
        residual_rms: (f / n as f64).sqrt(),
        n_points: n,
        se_amp_a: se_a,
        se_sigma: se_s,
        iterations,
        converged,
        poorly_constrained,
    })
}

/// Distance at which the fitted model reaches contrast `t`.
pub fn threshold_distance(fit: &CtfModelFit, t: f64) -> Result<f64> {
    if !(t > 0.0) {
        return Err(Error::input(format!("threshold {t} must be positive")));
    }
    if t >= fit.amp_a {
        return Err(Error::Numerical(format!(
            "threshold unreachable; model asymptote below threshold (t = {t}, A = {})",
            fit.amp_a
        )));
    }
    Ok(PI * fit.sigma / (fit.amp_a / t).ln().sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdCrossing {
    pub t: f64,
    /// `None` when the model never reaches `t`.
    pub d_star: Option<f64>,
}

/// Contents of `fit.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    #[serde(flatten)]
    pub fit: CtfModelFit,
    pub ref_ctf_min: f64,
    pub thresholds: Vec<ThresholdCrossing>,
    pub record_counts: BTreeMap<String, usize>,
}

impl FitReport {
    pub fn new(
        fit: CtfModelFit,
        ref_ctf_min: f64,
        thresholds: &[f64],
        records: &[CtfRecord],
    ) -> Self {
        let thresholds = thresholds
            .iter()
            .map(|&t| ThresholdCrossing {
                t,
                d_star: threshold_distance(&fit, t).ok(),
            })
            .collect();
        let record_counts = super::reason_counts(records)
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect();
        Self {
            fit,
            ref_ctf_min,
            thresholds,
            record_counts,
        }
    }

    pub fn d_star(&self, t: f64) -> Option<f64> {
        self.thresholds
            .iter()
            .find(|c| c.t == t)
            .and_then(|c| c.d_star)
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            offset: json_error_offset(&text, &e),
            message: format!("{}: {e}", path.as_ref().display()),
        })
    }
}
