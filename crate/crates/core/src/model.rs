//! Parameters, moment state and the constant generators of the averaged
//! second-moment equations.
//!
//! The five moment vectors close under the pump: each obeys
//! `du_n/dt = (V + D W_n^2) u_n + r_n(t)` once the Wiener phase of the pump has
//! been averaged out. All quantities are in units of the oscillator frequency.

use std::fmt;
use std::str::FromStr;

use nalgebra::{Matrix3, Vector3};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

pub type C64 = Complex64;

const I: C64 = C64::new(0.0, 1.0);

/// Physical and numerical parameters of one run.
///
/// `quality * gamma == omega` always holds: setting one recomputes the other.
/// A lossless oscillator (`gamma == 0`) is allowed and has infinite quality.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SystemParams {
    omega: f64,
    quality: f64,
    gamma: f64,
    epsilon: f64,
    delta: f64,
    noise_width: f64,
    n_thermal: f64,
}

impl SystemParams {
    /// Resonant pumping (`delta = 0`) at unit frequency.
    pub fn new(quality: f64, epsilon: f64, noise_width: f64, n_thermal: f64) -> Result<Self> {
        let mut p = SystemParams {
            omega: 1.0,
            quality: 1.0,
            gamma: 1.0,
            epsilon,
            delta: 0.0,
            noise_width,
            n_thermal,
        };
        p.set_quality(quality)?;
        p.validate()?;
        Ok(p)
    }

    pub fn omega(&self) -> f64 {
        self.omega
    }
    pub fn quality(&self) -> f64 {
        self.quality
    }
    pub fn gamma(&self) -> f64 {
        self.gamma
    }
    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }
    pub fn delta(&self) -> f64 {
        self.delta
    }
    pub fn noise_width(&self) -> f64 {
        self.noise_width
    }
    pub fn n_thermal(&self) -> f64 {
        self.n_thermal
    }

    fn set_quality(&mut self, quality: f64) -> Result<()> {
        if !(quality > 0.0) {
            return Err(invalid("quality", format!("must be > 0, got {quality}")));
        }
        self.quality = quality;
        self.gamma = self.omega / quality;
        Ok(())
    }

    pub fn with_quality(mut self, quality: f64) -> Result<Self> {
        self.set_quality(quality)?;
        Ok(self)
    }

    pub fn with_gamma(mut self, gamma: f64) -> Result<Self> {
        if !(gamma >= 0.0) || !gamma.is_finite() {
            return Err(invalid(
                "gamma",
                format!("must be finite and >= 0, got {gamma}"),
            ));
        }
        self.gamma = gamma;
        self.quality = if gamma == 0.0 {
            f64::INFINITY
        } else {
            self.omega / gamma
        };
        Ok(self)
    }

    pub fn with_omega(mut self, omega: f64) -> Result<Self> {
        if !(omega > 0.0) || !omega.is_finite() {
            return Err(invalid(
                "omega",
                format!("must be finite and > 0, got {omega}"),
            ));
        }
        self.omega = omega;
        self.gamma = omega / self.quality;
        Ok(self)
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Result<Self> {
        self.epsilon = epsilon;
        self.validate()?;
        Ok(self)
    }

    pub fn with_delta(mut self, delta: f64) -> Result<Self> {
        self.delta = delta;
        self.validate()?;
        Ok(self)
    }

    pub fn with_noise_width(mut self, noise_width: f64) -> Result<Self> {
        self.noise_width = noise_width;
        self.validate()?;
        Ok(self)
    }

    pub fn with_n_thermal(mut self, n_thermal: f64) -> Result<Self> {
        self.n_thermal = n_thermal;
        self.validate()?;
        Ok(self)
    }

    /// Sets the field named by `axis`.
    pub fn with_axis(self, axis: ParamAxis, value: f64) -> Result<Self> {
        match axis {
            ParamAxis::Quality => self.with_quality(value),
            ParamAxis::Epsilon => self.with_epsilon(value),
            ParamAxis::Delta => self.with_delta(value),
            ParamAxis::NoiseWidth => self.with_noise_width(value),
            ParamAxis::NThermal => self.with_n_thermal(value),
        }
    }

    pub fn axis_value(&self, axis: ParamAxis) -> f64 {
        match axis {
            ParamAxis::Quality => self.quality,
            ParamAxis::Epsilon => self.epsilon,
            ParamAxis::Delta => self.delta,
            ParamAxis::NoiseWidth => self.noise_width,
            ParamAxis::NThermal => self.n_thermal,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite_nonneg = |name: &'static str, v: f64| {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(invalid(name, format!("must be finite and >= 0, got {v}")))
            }
        };
        if !(self.omega > 0.0 && self.omega.is_finite()) {
            return Err(invalid(
                "omega",
                format!("must be finite and > 0, got {}", self.omega),
            ));
        }
        finite_nonneg("gamma", self.gamma)?;
        finite_nonneg("epsilon", self.epsilon)?;
        finite_nonneg("noise_width", self.noise_width)?;
        finite_nonneg("n_thermal", self.n_thermal)?;
        if !self.delta.is_finite() {
            return Err(invalid("delta", "must be finite"));
        }
        Ok(())
    }

    /// Pump-coupling rate `omega * epsilon / 4` that appears throughout `V`.
    pub fn coupling(&self) -> f64 {
        self.omega * self.epsilon / 4.0
    }

    /// Asymptotic growth rate `omega*epsilon/2 - gamma` of the moments at exact
    /// resonance without phase noise (negative below the instability).
    pub fn growth_rate(&self) -> f64 {
        self.omega * self.epsilon / 2.0 - self.gamma
    }

    /// Coherent-pump entanglement threshold `4 n_T / Q` for the amplitude.
    pub fn epsilon_threshold(&self) -> f64 {
        4.0 * self.n_thermal / self.quality
    }

    /// Coherent-pump limiting thermal occupation `Q epsilon / 4`.
    pub fn n_thermal_threshold(&self) -> f64 {
        self.quality * self.epsilon / 4.0
    }
}

/// A scannable `SystemParams` field. Names mirror the CLI flags.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ParamAxis {
    #[serde(rename = "Q")]
    Quality,
    #[serde(rename = "eps")]
    Epsilon,
    #[serde(rename = "Delta")]
    Delta,
    #[serde(rename = "D")]
    NoiseWidth,
    #[serde(rename = "nT")]
    NThermal,
}

impl ParamAxis {
    pub const ALL: [ParamAxis; 5] = [
        ParamAxis::Quality,
        ParamAxis::Epsilon,
        ParamAxis::Delta,
        ParamAxis::NoiseWidth,
        ParamAxis::NThermal,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ParamAxis::Quality => "Q",
            ParamAxis::Epsilon => "eps",
            ParamAxis::Delta => "Delta",
            ParamAxis::NoiseWidth => "D",
            ParamAxis::NThermal => "nT",
        }
    }
}

impl fmt::Display for ParamAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ParamAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ParamAxis::ALL
            .iter()
            .copied()
            .find(|a| a.name() == s)
            .ok_or_else(|| {
                invalid(
                    "axis",
                    format!("unknown axis `{s}` (expected Q, eps, Delta, D or nT)"),
                )
            })
    }
}

/// The fifteen quantum- and phase-averaged components `<u_n>_k`.
///
/// `u[n-1][k-1]` holds component `k` of system `n`:
///
/// | n | components |
/// |---|------------|
/// | 1 | `A1 A2 e^{-i phi}`, `(A1+A1 + A2+A2)/2`, `A1+ A2+ e^{i phi}` |
/// | 2 | `A2^2 e^{-i phi}`, `A1+ A2`, `A1+^2 e^{i phi}` |
/// | 3 | `A1^2`, `A1+ A2 e^{i phi}`, `A1+^2 e^{2i phi}` |
/// | 4 | `u_1 e^{i phi}` |
/// | 5 | `u_2 e^{i phi}` |
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentState {
    pub u: [Vector3<C64>; 5],
}

impl MomentState {
    pub fn zero() -> Self {
        MomentState {
            u: [Vector3::zeros(); 5],
        }
    }

    /// 1-based access matching the table above. Panics on out-of-range indices.
    pub fn get(&self, n: usize, k: usize) -> C64 {
        self.u[n - 1][k - 1]
    }

    /// Largest component modulus.
    pub fn max_abs(&self) -> f64 {
        self.u
            .iter()
            .flat_map(|v| v.iter())
            .map(|z| z.norm())
            .fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.u
            .iter()
            .flat_map(|v| v.iter())
            .all(|z| z.re.is_finite() && z.im.is_finite())
    }

    pub fn scaled(&self, factor: f64) -> Self {
        let mut out = *self;
        for v in out.u.iter_mut() {
            *v *= C64::from(factor);
        }
        out
    }

    /// The rotating-frame second moments that enter the covariance matrix.
    pub fn physical_moments(&self) -> PhysicalMoments {
        PhysicalMoments {
            nbar: self.get(1, 2).re,
            s1: self.get(3, 1),
            s2: self.get(5, 1),
            c: self.get(4, 1),
            d: self.get(2, 2),
        }
    }

    pub fn flat(&self) -> [C64; 15] {
        let mut out = [C64::new(0.0, 0.0); 15];
        for (n, v) in self.u.iter().enumerate() {
            for k in 0..3 {
                out[3 * n + k] = v[k];
            }
        }
        out
    }
}

/// Phase-averaged rotating-frame moments: `nbar = <A_j+ A_j>`, `s1 = <A1^2>`,
/// `s2 = <A2^2>`, `c = <A1 A2>`, `d = <A1+ A2>`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PhysicalMoments {
    pub nbar: f64,
    pub s1: C64,
    pub s2: C64,
    pub c: C64,
    pub d: C64,
}

impl PhysicalMoments {
    pub fn thermal(n: f64) -> Self {
        let z = C64::new(0.0, 0.0);
        PhysicalMoments {
            nbar: n,
            s1: z,
            s2: z,
            c: z,
            d: z,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.nbar.is_finite()
            && [self.s1, self.s2, self.c, self.d]
                .iter()
                .all(|z| z.re.is_finite() && z.im.is_finite())
    }

    /// `nbar >= 0` and the Cauchy-Schwarz bound `|d| <= nbar`, both up to `tol`.
    pub fn is_physical(&self, tol: f64) -> bool {
        self.nbar >= -tol && self.d.norm() <= self.nbar + tol
    }
}

/// Drift matrix and forcing mean of one moment system.
///
/// The forcing is `amplitude * exp(-decay * t)`; only system 4 decays.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Generator {
    pub drift: Matrix3<C64>,
    pub amplitude: Vector3<C64>,
    pub decay: f64,
}

impl Generator {
    pub fn forcing(&self, t: f64) -> Vector3<C64> {
        if self.decay == 0.0 {
            self.amplitude
        } else {
            self.amplitude * C64::from((-self.decay * t).exp())
        }
    }

    /// Right-hand side `drift * u + forcing(t)`.
    #[inline]
    pub fn rhs(&self, t: f64, u: &Vector3<C64>) -> Vector3<C64> {
        self.drift * u + self.forcing(t)
    }
}

/// All five generators for one parameter set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeneratorSet {
    pub systems: [Generator; 5],
}

impl GeneratorSet {
    pub fn new(params: &SystemParams) -> Result<Self> {
        params.validate()?;
        let g = |n| build_generator(n, params);
        Ok(GeneratorSet {
            systems: [g(1)?, g(2)?, g(3)?, g(4)?, g(5)?],
        })
    }

    pub fn rhs(&self, t: f64, state: &MomentState) -> MomentState {
        let mut out = MomentState::zero();
        for (n, gen) in self.systems.iter().enumerate() {
            out.u[n] = gen.rhs(t, &state.u[n]);
        }
        out
    }
}

/// The common coherent part `V` of the moment dynamics.
pub fn coherent_matrix(params: &SystemParams) -> Matrix3<C64> {
    let k = params.coupling();
    let g = params.gamma();
    let dl = params.delta();
    let z = C64::new(0.0, 0.0);
    Matrix3::new(
        C64::new(-g, dl),
        -I * (2.0 * k),
        z,
        I * k,
        C64::from(-g),
        -I * k,
        z,
        I * (2.0 * k),
        C64::new(-g, -dl),
    )
}

/// Phase-diffusion generator `W_n = i * diag(k_n)`; returns the integer phase
/// charges `k_n` carried by each component.
pub fn phase_charges(n: usize) -> Result<[f64; 3]> {
    match n {
        1 | 2 => Ok([-1.0, 0.0, 1.0]),
        3..=5 => Ok([0.0, 1.0, 2.0]),
        _ => Err(Error::InvalidIndex(n)),
    }
}

/// Coherent forcing mean of system `n` along a fixed phase, i.e. before the
/// phase average. For `n = 4` it multiplies `e^{i phi(t)}`.
pub fn forcing_amplitude(n: usize, params: &SystemParams) -> Result<Vector3<C64>> {
    let k = params.coupling();
    let thermal = C64::from(params.gamma() * params.n_thermal());
    let z = C64::new(0.0, 0.0);
    match n {
        1 | 4 => Ok(Vector3::new(-I * k, thermal, I * k)),
        2 | 3 | 5 => Ok(Vector3::new(z, z, z)),
        _ => Err(Error::InvalidIndex(n)),
    }
}

/// Builds `V + D W_n^2` and the phase-averaged forcing mean of system `n`.
pub fn build_generator(n: usize, params: &SystemParams) -> Result<Generator> {
    let charges = phase_charges(n)?;
    let d = params.noise_width();
    let mut drift = coherent_matrix(params);
    for (j, q) in charges.iter().enumerate() {
        drift[(j, j)] -= C64::from(d * q * q);
    }
    Ok(Generator {
        drift,
        amplitude: forcing_amplitude(n, params)?,
        decay: if n == 4 { d } else { 0.0 },
    })
}

/// Uncorrelated thermal equilibrium with zero initial pump phase.
pub fn thermal_initial_state(params: &SystemParams) -> MomentState {
    let mut s = MomentState::zero();
    let n = C64::from(params.n_thermal());
    s.u[0][1] = n;
    s.u[3][1] = n;
    s
}

/// Bose-Einstein occupation `1/(e^x - 1)` for `x = hbar omega / k_B T`.
pub fn boson_number(x: f64) -> Result<f64> {
    if !(x > 0.0) {
        return Err(Error::Domain(format!(
            "boson_number requires x > 0, got {x}"
        )));
    }
    Ok(1.0 / x.exp_m1())
}

/// Inverse of [`boson_number`]: `x = ln(1 + 1/n)`. Returns `+inf` for `n = 0`.
pub fn thermal_ratio(n_thermal: f64) -> Result<f64> {
    if !(n_thermal >= 0.0) {
        return Err(Error::Domain(format!(
            "thermal_ratio requires n >= 0, got {n_thermal}"
        )));
    }
    if n_thermal == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok((1.0 / n_thermal).ln_1p())
}

/// Half-width of the detuning window with parametric instability,
/// `sqrt(omega^2 eps^2 - 4 gamma^2) / 2`. `None` when the pump is below the
/// instability (`omega * eps < 2 gamma`).
pub fn delta_star(params: &SystemParams) -> Option<f64> {
    let drive = params.omega() * params.epsilon();
    let loss = 2.0 * params.gamma();
    if drive < loss {
        return None;
    }
    Some(((drive - loss) * (drive + loss)).sqrt() / 2.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: C64, b: C64, tol: f64) -> bool {
        (a - b).norm() <= tol
    }

    #[test]
    fn coherent_matrix_matches_substitution() {
        let p = SystemParams::new(5000.0, 1.6e-2, 0.0, 10.0).unwrap();
        let g = build_generator(1, &p).unwrap();
        let expect = [
            [
                C64::new(-2e-4, 0.0),
                C64::new(0.0, -8e-3),
                C64::new(0.0, 0.0),
            ],
            [
                C64::new(0.0, 4e-3),
                C64::new(-2e-4, 0.0),
                C64::new(0.0, -4e-3),
            ],
            [
                C64::new(0.0, 0.0),
                C64::new(0.0, 8e-3),
                C64::new(-2e-4, 0.0),
            ],
        ];
        for r in 0..3 {
            for c in 0..3 {
                assert!(close(g.drift[(r, c)], expect[r][c], 1e-15), "({r},{c})");
            }
        }
    }

    #[test]
    fn system_four_forcing_at_origin() {
        let p = SystemParams::new(5000.0, 1.6e-2, 3e-5, 7.0).unwrap();
        let g = build_generator(4, &p).unwrap();
        let f = g.forcing(0.0);
        let k = p.coupling();
        assert!(close(f[0], C64::new(0.0, -k), 1e-15));
        assert!(close(f[1], C64::new(p.gamma() * 7.0, 0.0), 1e-15));
        assert!(close(f[2], C64::new(0.0, k), 1e-15));
        let later = g.forcing(1e4);
        assert!(close(later[1], f[1] * (-3e-5 * 1e4_f64).exp(), 1e-15));
    }

    #[test]
    fn system_three_dephasing_diagonal() {
        let p = SystemParams::new(5000.0, 1.6e-2, 1e-8, 10.0).unwrap();
        let v = coherent_matrix(&p);
        let g = build_generator(3, &p).unwrap();
        let diff = g.drift - v;
        let want = [0.0, -1e-8, -4e-8];
        for r in 0..3 {
            for c in 0..3 {
                let w = if r == c {
                    C64::from(want[r])
                } else {
                    C64::new(0.0, 0.0)
                };
                assert!(close(diff[(r, c)], w, 1e-20));
            }
        }
    }

    #[test]
    fn generator_index_is_checked() {
        let p = SystemParams::new(100.0, 0.1, 0.0, 1.0).unwrap();
        assert_eq!(build_generator(0, &p), Err(Error::InvalidIndex(0)));
        assert_eq!(build_generator(6, &p), Err(Error::InvalidIndex(6)));
    }

    #[test]
    fn trace_and_zero_forcing() {
        let p = SystemParams::new(321.0, 0.07, 2e-3, 3.5)
            .unwrap()
            .with_delta(0.01)
            .unwrap();
        let v = coherent_matrix(&p);
        assert!(close(v.trace(), C64::from(-3.0 * p.gamma()), 1e-15));
        for n in [2, 3, 5] {
            let g = build_generator(n, &p).unwrap();
            for t in [0.0, 1.0, 1e5] {
                assert_eq!(g.forcing(t), Vector3::zeros());
            }
        }
    }

    #[test]
    fn thermal_start() {
        let p = SystemParams::new(5000.0, 1.6e-2, 0.0, 10.0).unwrap();
        let s = thermal_initial_state(&p);
        for n in 1..=5 {
            for k in 1..=3 {
                let want = if (n == 1 || n == 4) && k == 2 {
                    10.0
                } else {
                    0.0
                };
                assert_eq!(s.get(n, k), C64::from(want));
            }
        }
        let vac = thermal_initial_state(&p.with_n_thermal(0.0).unwrap());
        assert_eq!(vac, MomentState::zero());
        let hot = thermal_initial_state(&p.with_n_thermal(20.0).unwrap());
        assert_eq!(hot.get(1, 2).re, 20.0);
        assert_eq!(hot.get(4, 2).re, 20.0);
    }

    #[test]
    fn boson_number_values() {
        assert!((boson_number(1.1f64.ln()).unwrap() - 10.0).abs() < 1e-12);
        assert!((boson_number(2f64.ln()).unwrap() - 1.0).abs() < 1e-14);
        assert_eq!(boson_number(800.0).unwrap(), 0.0);
        assert!(boson_number(0.0).is_err());
        assert!(boson_number(-1.0).is_err());
        let x = thermal_ratio(10.0).unwrap();
        assert!((x - 1.1f64.ln()).abs() < 1e-15);
        assert_eq!(thermal_ratio(0.0).unwrap(), f64::INFINITY);
    }

    #[test]
    fn delta_star_values() {
        let p = SystemParams::new(5000.0, 1.6e-2, 0.0, 10.0).unwrap();
        assert!((delta_star(&p).unwrap() - 7.9975e-3).abs() < 1e-7);
        let edge = p.with_gamma(0.8e-2).unwrap();
        assert_eq!(delta_star(&edge), Some(0.0));
        let lossless = p.with_gamma(0.0).unwrap();
        assert!((delta_star(&lossless).unwrap() - 0.8e-2).abs() < 1e-17);
        assert_eq!(delta_star(&p.with_gamma(0.01).unwrap()), None);
    }

    #[test]
    fn quality_gamma_consistency() {
        let p = SystemParams::new(5000.0, 0.01, 0.0, 1.0).unwrap();
        assert_eq!(p.gamma() * p.quality(), p.omega());
        let q = p.with_gamma(0.0).unwrap();
        assert!(q.quality().is_infinite());
        assert!(SystemParams::new(-1.0, 0.01, 0.0, 1.0).is_err());
        assert!(SystemParams::new(10.0, -0.01, 0.0, 1.0).is_err());
        assert!(SystemParams::new(10.0, 0.01, -1.0, 1.0).is_err());
        assert!(SystemParams::new(10.0, 0.01, 0.0, f64::NAN).is_err());
    }

    #[test]
    fn axis_names_round_trip() {
        for a in ParamAxis::ALL {
            assert_eq!(a.name().parse::<ParamAxis>().unwrap(), a);
        }
        assert!("T".parse::<ParamAxis>().is_err());
    }
}
