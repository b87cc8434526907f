//! Closed-form approximation of the limiting thermal occupation
//!
//! ```text
//! n_T0(D) = (Q eps / 4) / (1 + ((a1 sqrt(eps) + b1) Q + a2 eps + b2) sqrt(D / omega))
//! ```
//!
//! and its least-squares refit against simulated boundary points.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryConstants {
    pub a1: f64,
    pub b1: f64,
    pub a2: f64,
    pub b2: f64,
}

impl BoundaryConstants {
    /// The published values.
    pub const PUBLISHED: BoundaryConstants = BoundaryConstants {
        a1: 2.08,
        b1: -4e-2,
        a2: -1.9e3,
        b2: -4.82,
    };

    pub fn is_finite(&self) -> bool {
        self.a1.is_finite() && self.b1.is_finite() && self.a2.is_finite() && self.b2.is_finite()
    }

    /// Coefficient of `sqrt(D / omega)` at `(quality, epsilon)`.
    pub fn slope(&self, epsilon: f64, quality: f64) -> f64 {
        (self.a1 * epsilon.sqrt() + self.b1) * quality + self.a2 * epsilon + self.b2
    }
}

impl Default for BoundaryConstants {
    fn default() -> Self {
        Self::PUBLISHED
    }
}

/// `n_T0` predicted by the approximation; `d` is in units of `omega`.
pub fn eval_boundary(d: f64, epsilon: f64, quality: f64, k: &BoundaryConstants) -> Result<f64> {
    if !(d >= 0.0 && d.is_finite()) {
        return Err(invalid("D", format!("must be finite and >= 0, got {d}")));
    }
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(invalid(
            "eps",
            format!("must be finite and > 0, got {epsilon}"),
        ));
    }
    if !(quality > 0.0 && quality.is_finite()) {
        return Err(invalid(
            "Q",
            format!("must be finite and > 0, got {quality}"),
        ));
    }
    let denom = 1.0 + k.slope(epsilon, quality) * d.sqrt();
    if !(denom > 0.0) {
        return Err(Error::OutOfValidity(format!(
            "denominator {denom:e} <= 0 at D = {d:e}, eps = {epsilon:e}, Q = {quality:e}"
        )));
    }
    Ok(quality * epsilon / 4.0 / denom)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundarySample {
    #[serde(rename = "D")]
    pub d: f64,
    #[serde(rename = "eps")]
    pub epsilon: f64,
    #[serde(rename = "Q")]
    pub quality: f64,
    #[serde(rename = "nT")]
    pub n_t0: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    #[default]
    Uniform,
    /// Weights `1 / n_T0^2`, i.e. relative errors.
    InverseSquare,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FitStatus {
    Full,
    /// Fewer than four independent `(Q, eps)` groups: only slopes are reported.
    Underdetermined,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupSlope {
    #[serde(rename = "Q")]
    pub quality: f64,
    #[serde(rename = "eps")]
    pub epsilon: f64,
    pub c: f64,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleResidual {
    #[serde(flatten)]
    pub sample: BoundarySample,
    pub predicted: Option<f64>,
    pub relative: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitReport {
    pub status: FitStatus,
    pub constants: Option<BoundaryConstants>,
    pub weighting: Weighting,
    pub slopes: Vec<GroupSlope>,
    pub residuals: Vec<SampleResidual>,
    pub rms_relative: f64,
    pub max_relative: f64,
}

/// Two-stage linear least squares.
///
/// Stage one regresses `Q eps / (4 n_T0) - 1` on `sqrt(D)` through the origin
/// for each `(Q, eps)` group; stage two regresses the slopes on
/// `[sqrt(eps) Q, Q, eps, 1]`.
pub fn fit_boundary(samples: &[BoundarySample], weighting: Weighting) -> Result<FitReport> {
    for s in samples {
        let ok = s.d >= 0.0
            && s.d.is_finite()
            && s.epsilon > 0.0
            && s.epsilon.is_finite()
            && s.quality > 0.0
            && s.quality.is_finite()
            && s.n_t0 > 0.0
            && s.n_t0.is_finite();
        if !ok {
            return Err(Error::Fit(format!("invalid sample {s:?}")));
        }
    }
    if !samples.iter().any(|s| s.d > 0.0) {
        return Err(Error::Fit(
            "no sample with D > 0: the slope is undefined".into(),
        ));
    }
    let mut ds: Vec<f64> = samples.iter().map(|s| s.d).collect();
    ds.sort_by(f64::total_cmp);
    ds.dedup();
    if ds.len() < 3 {
        return Err(Error::Fit(format!(
            "need at least 3 distinct D values, got {}",
            ds.len()
        )));
    }

    let mut groups: Vec<(f64, f64, Vec<&BoundarySample>)> = Vec::new();
    for s in samples {
        match groups
            .iter_mut()
            .find(|g| g.0 == s.quality && g.1 == s.epsilon)
        {
            Some(g) => g.2.push(s),
            None => groups.push((s.quality, s.epsilon, vec![s])),
        }
    }

    let mut slopes = Vec::with_capacity(groups.len());
    for (q, eps, members) in &groups {
        let (mut sxy, mut sxx) = (0.0, 0.0);
        for s in members {
            let w = match weighting {
                Weighting::Uniform => 1.0,
                Weighting::InverseSquare => 1.0 / (s.n_t0 * s.n_t0),
            };
            let x = s.d.sqrt();
            let y = q * eps / (4.0 * s.n_t0) - 1.0;
            sxy += w * x * y;
            sxx += w * x * x;
        }
        if sxx == 0.0 {
            return Err(Error::Fit(format!(
                "group Q = {q}, eps = {eps} has no sample with D > 0"
            )));
        }
        slopes.push(GroupSlope {
            quality: *q,
            epsilon: *eps,
            c: sxy / sxx,
            samples: members.len(),
        });
    }

    let constants = second_stage(&slopes)?;
    let status = if constants.is_some() {
        FitStatus::Full
    } else {
        FitStatus::Underdetermined
    };

    let residuals: Vec<SampleResidual> = samples
        .iter()
        .map(|s| {
            let predicted = match &constants {
                Some(k) => eval_boundary(s.d, s.epsilon, s.quality, k).ok(),
                None => slopes
                    .iter()
                    .find(|g| g.quality == s.quality && g.epsilon == s.epsilon)
                    .and_then(|g| {
                        let den = 1.0 + g.c * s.d.sqrt();
                        (den > 0.0).then(|| s.quality * s.epsilon / 4.0 / den)
                    }),
            };
            SampleResidual {
                sample: *s,
                predicted,
                relative: predicted.map(|p| (p - s.n_t0) / s.n_t0),
            }
        })
        .collect();
    let rel: Vec<f64> = residuals.iter().filter_map(|r| r.relative).collect();
    let rms_relative = if rel.is_empty() {
        f64::NAN
    } else {
        (rel.iter().map(|r| r * r).sum::<f64>() / rel.len() as f64).sqrt()
    };
    let max_relative = rel.iter().fold(0.0f64, |m, r| m.max(r.abs()));

    Ok(FitReport {
        status,
        constants,
        weighting,
        slopes,
        residuals,
        rms_relative,
        max_relative,
    })
}

fn second_stage(slopes: &[GroupSlope]) -> Result<Option<BoundaryConstants>> {
    if slopes.len() < 4 {
        return Ok(None);
    }
    let rows = slopes.len();
    let mut a = DMatrix::<f64>::zeros(rows, 4);
    let mut b = DVector::<f64>::zeros(rows);
    for (i, g) in slopes.iter().enumerate() {
        a[(i, 0)] = g.epsilon.sqrt() * g.quality;
        a[(i, 1)] = g.quality;
        a[(i, 2)] = g.epsilon;
        a[(i, 3)] = 1.0;
        b[i] = g.c;
    }
    // Column equilibration; the raw columns differ by ~5 orders of magnitude.
    let scale: Vec<f64> = (0..4)
        .map(|j| a.column(j).amax().max(f64::MIN_POSITIVE))
        .collect();
    for (j, s) in scale.iter().enumerate() {
        a.column_mut(j).scale_mut(1.0 / s);
    }
    let svd = a.svd(true, true);
    let smax = svd.singular_values.max();
    let rank = svd
        .singular_values
        .iter()
        .filter(|&&s| s > 1e-10 * smax)
        .count();
    if rank < 4 {
        return Ok(None);
    }
    let x = svd
        .solve(&b, 1e-10 * smax)
        .map_err(|e| Error::Fit(e.to_string()))?;
    let k = BoundaryConstants {
        a1: x[0] / scale[0],
        b1: x[1] / scale[1],
        a2: x[2] / scale[2],
        b2: x[3] / scale[3],
    };
    if !k.is_finite() {
        return Err(Error::Fit("non-finite constants".into()));
    }
    Ok(Some(k))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn published_values() {
        let k = BoundaryConstants::PUBLISHED;
        assert_eq!(eval_boundary(0.0, 1.6e-2, 5000.0, &k).unwrap(), 20.0);
        let v = eval_boundary(1e-8, 1.6e-2, 5000.0, &k).unwrap();
        assert!((v - 18.05).abs() < 5e-3, "{v}");
        let any = BoundaryConstants {
            a1: 7.0,
            b1: -3.0,
            a2: 1.0,
            b2: 0.5,
        };
        assert_eq!(eval_boundary(0.0, 2e-2, 100.0, &any).unwrap(), 0.5);
    }

    #[test]
    fn invalid_region_is_reported() {
        let k = BoundaryConstants {
            a1: 0.0,
            b1: -1.0,
            a2: 0.0,
            b2: 0.0,
        };
        assert!(matches!(
            eval_boundary(1.0, 1e-2, 5000.0, &k),
            Err(Error::OutOfValidity(_))
        ));
        assert!(eval_boundary(-1.0, 1e-2, 5000.0, &k).is_err());
    }

    fn synthetic(qs: &[f64], epss: &[f64], ds: &[f64]) -> Vec<BoundarySample> {
        let k = BoundaryConstants::PUBLISHED;
        let mut out = Vec::new();
        for &q in qs {
            for &e in epss {
                for &d in ds {
                    out.push(BoundarySample {
                        d,
                        epsilon: e,
                        quality: q,
                        n_t0: eval_boundary(d, e, q, &k).unwrap(),
                    });
                }
            }
        }
        out
    }

    #[test]
    fn round_trip() {
        let ds = [0.0, 1e-12, 1e-10, 1e-9, 1e-8, 1e-7];
        let s = synthetic(&[2000.0, 5000.0, 10000.0], &[1e-2, 1.6e-2, 2.4e-2], &ds);
        for w in [Weighting::Uniform, Weighting::InverseSquare] {
            let r = fit_boundary(&s, w).unwrap();
            assert_eq!(r.status, FitStatus::Full);
            let k = r.constants.unwrap();
            let p = BoundaryConstants::PUBLISHED;
            for (a, b) in [(k.a1, p.a1), (k.b1, p.b1), (k.a2, p.a2), (k.b2, p.b2)] {
                assert!((a / b - 1.0).abs() < 1e-6, "{a} vs {b}");
            }
            assert!(r.max_relative < 1e-9);
        }
    }

    #[test]
    fn single_group_is_underdetermined() {
        let s = synthetic(&[5000.0], &[1.6e-2], &[1e-10, 1e-9, 1e-8]);
        let r = fit_boundary(&s, Weighting::Uniform).unwrap();
        assert_eq!(r.status, FitStatus::Underdetermined);
        assert!(r.constants.is_none());
        let c = BoundaryConstants::PUBLISHED.slope(1.6e-2, 5000.0);
        assert!((r.slopes[0].c / c - 1.0).abs() < 1e-9);
    }

    #[test]
    fn zero_noise_only_is_an_error() {
        let s = synthetic(&[2000.0, 5000.0], &[1e-2, 2e-2], &[0.0]);
        assert!(matches!(
            fit_boundary(&s, Weighting::Uniform),
            Err(Error::Fit(_))
        ));
    }
}
