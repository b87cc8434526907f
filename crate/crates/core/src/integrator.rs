//! Adaptive Dormand-Prince 5(4) integration of the fifteen averaged moment
//! equations, with the continuous extension kept for every accepted step so
//! that the trajectory can be evaluated anywhere inside the integrated range.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{thermal_initial_state, GeneratorSet, MomentState, SystemParams, C64};

const DIM: usize = 15;
type Flat = [C64; DIM];

/// Numerical controls for [`integrate`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Controls {
    pub rel_tol: f64,
    pub abs_tol: f64,
    /// Upper bound on the step size; `None` leaves it to the error controller.
    pub max_step: Option<f64>,
    /// Spacing of stored samples; `None` means `1 / (200 gamma)`.
    pub sample_interval: Option<f64>,
    /// Integration stops (flagged as overflow) once any component modulus
    /// exceeds this value.
    pub overflow_cap: f64,
    pub max_steps: usize,
}

impl Default for Controls {
    fn default() -> Self {
        Controls {
            rel_tol: 1e-9,
            abs_tol: 1e-12,
            max_step: None,
            sample_interval: None,
            overflow_cap: 1e100,
            max_steps: 5_000_000,
        }
    }
}

impl Controls {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &'static str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(crate::error::invalid(
                    name,
                    format!("must be finite and > 0, got {v}"),
                ))
            }
        };
        positive("rel_tol", self.rel_tol)?;
        positive("abs_tol", self.abs_tol)?;
        if let Some(h) = self.max_step {
            positive("max_step", h)?;
        }
        if let Some(s) = self.sample_interval {
            positive("sample_interval", s)?;
        }
        if !(self.overflow_cap > 0.0) {
            return Err(crate::error::invalid("overflow_cap", "must be > 0"));
        }
        Ok(())
    }

    /// Sample spacing actually used for `params` over a horizon `t_end`.
    pub fn sample_interval_for(&self, params: &SystemParams, t_end: f64) -> f64 {
        match self.sample_interval {
            Some(s) => s,
            None if params.gamma() > 0.0 => 1.0 / (200.0 * params.gamma()),
            None => t_end / 1000.0,
        }
    }
}

/// Continuous extension of one accepted step on `[t0, t0 + h]`.
#[derive(Debug, Clone)]
struct DenseSegment {
    t0: f64,
    h: f64,
    coeffs: [Flat; 5],
}

impl DenseSegment {
    fn eval(&self, t: f64) -> Flat {
        let theta = (t - self.t0) / self.h;
        let theta1 = 1.0 - theta;
        let [r1, r2, r3, r4, r5] = &self.coeffs;
        let mut out = [C64::new(0.0, 0.0); DIM];
        for i in 0..DIM {
            out[i] = r1[i] + (r2[i] + (r3[i] + (r4[i] + r5[i] * theta1) * theta) * theta1) * theta;
        }
        out
    }
}

/// Sampled solution of the averaged moment equations.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub params: SystemParams,
    pub times: Vec<f64>,
    pub states: Vec<MomentState>,
    /// Accepted and rejected step counts.
    pub steps: usize,
    pub rejected: usize,
    /// Set when the run stopped because a component exceeded the overflow cap.
    pub overflow: bool,
    /// Last time covered by the dense output.
    pub t_reached: f64,
    pub t_end: f64,
    initial: MomentState,
    segments: Vec<DenseSegment>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Evaluates the dense output at `t`; `None` outside `[0, t_reached]`.
    pub fn state_at(&self, t: f64) -> Option<MomentState> {
        if !(t >= 0.0 && t <= self.t_reached) {
            return None;
        }
        if self.segments.is_empty() || t == 0.0 {
            return Some(self.initial);
        }
        let idx = self
            .segments
            .partition_point(|s| s.t0 + s.h < t)
            .min(self.segments.len() - 1);
        Some(unflatten(&self.segments[idx].eval(t)))
    }
}

fn flatten(s: &MomentState) -> Flat {
    s.flat()
}

fn unflatten(f: &Flat) -> MomentState {
    let mut s = MomentState::zero();
    for n in 0..5 {
        for k in 0..3 {
            s.u[n][k] = f[3 * n + k];
        }
    }
    s
}

fn rhs(gens: &GeneratorSet, t: f64, y: &Flat, out: &mut Flat) {
    for (n, g) in gens.systems.iter().enumerate() {
        let f = g.forcing(t);
        let b = 3 * n;
        for r in 0..3 {
            out[b + r] = g.drift[(r, 0)] * y[b]
                + g.drift[(r, 1)] * y[b + 1]
                + g.drift[(r, 2)] * y[b + 2]
                + f[r];
        }
    }
}

// Dormand-Prince 5(4) tableau with Hairer's dense-output weights.
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

fn combine(y: &Flat, h: f64, terms: &[(f64, &Flat)]) -> Flat {
    let mut out = *y;
    for (c, k) in terms {
        let w = h * c;
        for i in 0..DIM {
            out[i] += k[i] * w;
        }
    }
    out
}

fn max_abs(y: &Flat) -> f64 {
    y.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Integrates from the thermal equilibrium state of `params` up to `t_end`.
pub fn integrate(params: &SystemParams, t_end: f64, controls: &Controls) -> Result<Trajectory> {
    let gens = GeneratorSet::new(params)?;
    integrate_with(
        &gens,
        thermal_initial_state(params),
        params,
        t_end,
        controls,
    )
}

/// Integrates an arbitrary generator set from an arbitrary initial state.
pub fn integrate_with(
    gens: &GeneratorSet,
    initial: MomentState,
    params: &SystemParams,
    t_end: f64,
    controls: &Controls,
) -> Result<Trajectory> {
    if !(t_end > 0.0) || !t_end.is_finite() {
        return Err(crate::error::invalid(
            "t_end",
            format!("must be finite and > 0, got {t_end}"),
        ));
    }
    controls.validate()?;
    let sample_dt = controls.sample_interval_for(params, t_end);
    let max_step = controls.max_step.unwrap_or(f64::INFINITY).min(t_end);

    let mut traj = Trajectory {
        params: *params,
        times: vec![0.0],
        states: vec![initial],
        steps: 0,
        rejected: 0,
        overflow: false,
        t_reached: 0.0,
        t_end,
        initial,
        segments: Vec::new(),
    };

    let mut y = flatten(&initial);
    let mut t = 0.0;
    let mut k1 = [C64::new(0.0, 0.0); DIM];
    rhs(gens, t, &y, &mut k1);
    let mut h = initial_step(gens, &y, &k1, controls, max_step);
    let mut next_sample = 1usize;
    let mut rejected_last = false;

    let zero = [C64::new(0.0, 0.0); DIM];
    let (mut k2, mut k3, mut k4, mut k5, mut k6, mut k7) = (zero, zero, zero, zero, zero, zero);

    while t < t_end {
        if traj.steps + traj.rejected >= controls.max_steps {
            return Err(Error::Domain(format!(
                "step limit {} reached at t = {t}",
                controls.max_steps
            )));
        }
        if t + h > t_end || (t_end - (t + h)) < 1e-12 * t_end {
            h = t_end - t;
        }
        if h <= 16.0 * f64::EPSILON * t.abs().max(1.0) {
            return Err(Error::StepUnderflow { t, h });
        }

        let y2 = combine(&y, h, &[(A21, &k1)]);
        rhs(gens, t + C2 * h, &y2, &mut k2);
        let y3 = combine(&y, h, &[(A31, &k1), (A32, &k2)]);
        rhs(gens, t + C3 * h, &y3, &mut k3);
        let y4 = combine(&y, h, &[(A41, &k1), (A42, &k2), (A43, &k3)]);
        rhs(gens, t + C4 * h, &y4, &mut k4);
        let y5 = combine(&y, h, &[(A51, &k1), (A52, &k2), (A53, &k3), (A54, &k4)]);
        rhs(gens, t + C5 * h, &y5, &mut k5);
        let y6 = combine(
            &y,
            h,
            &[(A61, &k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)],
        );
        rhs(gens, t + h, &y6, &mut k6);
        let y_new = combine(
            &y,
            h,
            &[(A71, &k1), (A73, &k3), (A74, &k4), (A75, &k5), (A76, &k6)],
        );
        rhs(gens, t + h, &y_new, &mut k7);

        let mut err_sq = 0.0;
        for i in 0..DIM {
            let e =
                (k1[i] * E1 + k3[i] * E3 + k4[i] * E4 + k5[i] * E5 + k6[i] * E6 + k7[i] * E7) * h;
            let scale = controls.abs_tol + controls.rel_tol * y[i].norm().max(y_new[i].norm());
            err_sq += (e.norm() / scale).powi(2);
        }
        let err = (err_sq / DIM as f64).sqrt();

        if !err.is_finite() {
            traj.rejected += 1;
            h *= 0.2;
            rejected_last = true;
            continue;
        }

        if err <= 1.0 {
            if max_abs(&y_new) > controls.overflow_cap
                || y_new.iter().any(|z| !z.re.is_finite() || !z.im.is_finite())
            {
                traj.overflow = true;
                break;
            }

            let mut coeffs = [[C64::new(0.0, 0.0); DIM]; 5];
            for i in 0..DIM {
                let ydiff = y_new[i] - y[i];
                let bspl = k1[i] * h - ydiff;
                coeffs[0][i] = y[i];
                coeffs[1][i] = ydiff;
                coeffs[2][i] = bspl;
                coeffs[3][i] = ydiff - k7[i] * h - bspl;
                coeffs[4][i] =
                    (k1[i] * D1 + k3[i] * D3 + k4[i] * D4 + k5[i] * D5 + k6[i] * D6 + k7[i] * D7)
                        * h;
            }
            let seg = DenseSegment { t0: t, h, coeffs };
            let t_new = if h == t_end - t { t_end } else { t + h };

            loop {
                let ts = next_sample as f64 * sample_dt;
                if ts > t_new || ts > t_end {
                    break;
                }
                traj.times.push(ts);
                traj.states.push(unflatten(&seg.eval(ts)));
                next_sample += 1;
            }
            traj.segments.push(seg);
            traj.steps += 1;

            t = t_new;
            y = y_new;
            k1 = k7;
            traj.t_reached = t;

            let mut fac = 0.9 * err.max(1e-10).powf(-0.2);
            fac = fac.clamp(0.2, 10.0);
            if rejected_last {
                fac = fac.min(1.0);
            }
            h = (h * fac).min(max_step);
            rejected_last = false;
        } else {
            traj.rejected += 1;
            let fac = (0.9 * err.powf(-0.2)).clamp(0.2, 1.0);
            h *= fac;
            rejected_last = true;
        }
    }

    if !traj.overflow && traj.times.last().copied() != Some(t_end) && traj.t_reached == t_end {
        traj.times.push(t_end);
        traj.states.push(unflatten(&y));
    }
    Ok(traj)
}

fn initial_step(gens: &GeneratorSet, y0: &Flat, f0: &Flat, c: &Controls, max_step: f64) -> f64 {
    // Hairer-Norsett-Wanner starting step heuristic.
    let sc: Vec<f64> = y0
        .iter()
        .map(|z| c.abs_tol + c.rel_tol * z.norm())
        .collect();
    let norm = |v: &Flat| {
        (v.iter()
            .zip(&sc)
            .map(|(z, s)| (z.norm() / s).powi(2))
            .sum::<f64>()
            / DIM as f64)
            .sqrt()
    };
    let d0 = norm(y0);
    let d1 = norm(f0);
    let h0 = if d0 < 1e-5 || d1 < 1e-5 {
        1e-6
    } else {
        0.01 * d0 / d1
    };
    let h0 = h0.min(max_step);
    let y1 = combine(y0, h0, &[(1.0, f0)]);
    let mut f1 = [C64::new(0.0, 0.0); DIM];
    rhs(gens, h0, &y1, &mut f1);
    let mut diff = [C64::new(0.0, 0.0); DIM];
    for i in 0..DIM {
        diff[i] = f1[i] - f0[i];
    }
    let d2 = norm(&diff) / h0;
    let h1 = if d1.max(d2) <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / d1.max(d2)).powf(0.2)
    };
    (100.0 * h0).min(h1).min(max_step)
}
