//! Two-mode covariance matrix and logarithmic negativity.
//!
//! Quadratures are `q = (a + a+)/sqrt 2`, `p = i(a+ - a)/sqrt 2`, ordered
//! `(q1, p1, q2, p2)`, so the vacuum has variance 1/2 and separable states
//! have a partially transposed symplectic spectrum bounded below by 1/2.
//!
//! Two independent routes give the negativity: the block-determinant
//! invariants (evaluated in double-double arithmetic, since above the
//! instability the moments grow without bound while the smallest symplectic
//! eigenvalue stays O(1)), and the moduli of the eigenvalues of `-i J sigma~`.

use nalgebra::{Matrix2, Matrix4, Schur, SymmetricEigen};
use num_complex::Complex64;
use serde::Serialize;
use twofloat::TwoFloat;

use crate::error::{Error, Result};
use crate::model::{MomentState, PhysicalMoments};

/// Relative slack allowed on the discriminant of the symplectic invariants
/// before a covariance matrix is declared non-physical.
const DISCRIMINANT_TOL: f64 = 1e-9;

/// Symplectic form for the `(q1, p1, q2, p2)` ordering.
pub fn symplectic_form() -> Matrix4<f64> {
    Matrix4::new(
        0.0, 1.0, 0.0, 0.0, //
        -1.0, 0.0, 0.0, 0.0, //
        0.0, 0.0, 0.0, 1.0, //
        0.0, 0.0, -1.0, 0.0,
    )
}

/// Real symmetric 4x4 covariance matrix `[[alpha, gamma], [gamma^T, beta]]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CovarianceMatrix {
    sigma: Matrix4<f64>,
}

impl CovarianceMatrix {
    /// Symmetrizes `m` after checking it is finite and symmetric to `1e-12`
    /// relative.
    pub fn from_matrix(m: Matrix4<f64>) -> Result<Self> {
        if m.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonPhysical("non-finite covariance entry".into()));
        }
        let scale = m.amax().max(1.0);
        if (m - m.transpose()).amax() > 1e-12 * scale {
            return Err(Error::NonPhysical(
                "covariance matrix is not symmetric".into(),
            ));
        }
        Ok(CovarianceMatrix {
            sigma: (m + m.transpose()) * 0.5,
        })
    }

    pub fn sigma(&self) -> &Matrix4<f64> {
        &self.sigma
    }

    pub fn alpha(&self) -> Matrix2<f64> {
        self.sigma.fixed_view::<2, 2>(0, 0).into_owned()
    }

    pub fn beta(&self) -> Matrix2<f64> {
        self.sigma.fixed_view::<2, 2>(2, 2).into_owned()
    }

    pub fn gamma_block(&self) -> Matrix2<f64> {
        self.sigma.fixed_view::<2, 2>(0, 2).into_owned()
    }

    /// `Lambda sigma Lambda` with `Lambda = diag(1, 1, 1, -1)`: time reversal
    /// of the second mode.
    pub fn partial_transpose(&self) -> CovarianceMatrix {
        let lambda = Matrix4::from_diagonal(&nalgebra::Vector4::new(1.0, 1.0, 1.0, -1.0));
        CovarianceMatrix {
            sigma: lambda * self.sigma * lambda,
        }
    }

    /// `S sigma S^T`.
    pub fn transformed(&self, s: &Matrix4<f64>) -> CovarianceMatrix {
        let m = s * self.sigma * s.transpose();
        CovarianceMatrix {
            sigma: (m + m.transpose()) * 0.5,
        }
    }

    /// Smallest eigenvalue of the Hermitian matrix `sigma + (i/2) J`.
    pub fn uncertainty_margin(&self) -> f64 {
        let j = symplectic_form();
        let h = nalgebra::Matrix4::<Complex64>::from_fn(|r, c| {
            Complex64::new(self.sigma[(r, c)], 0.5 * j[(r, c)])
        });
        SymmetricEigen::new(h).eigenvalues.min()
    }

    /// Robertson-Schrodinger uncertainty relation, `sigma + (i/2) J >= -tol`.
    pub fn is_physical(&self, tol: f64) -> bool {
        self.uncertainty_margin() >= -tol
    }
}

/// Covariance matrix of a zero-mean state with the given rotating-frame
/// moments. Both modes are assigned the same occupation `nbar`.
pub fn covariance_from_moments(m: &PhysicalMoments) -> Result<CovarianceMatrix> {
    if !m.is_finite() {
        return Err(Error::NonPhysical("non-finite moments".into()));
    }
    let n = m.nbar + 0.5;
    let (s1, s2, c, d) = (m.s1, m.s2, m.c, m.d);
    let sigma = Matrix4::new(
        n + s1.re,
        s1.im,
        c.re + d.re,
        c.im + d.im,
        s1.im,
        n - s1.re,
        c.im - d.im,
        d.re - c.re,
        c.re + d.re,
        c.im - d.im,
        n + s2.re,
        s2.im,
        c.im + d.im,
        d.re - c.re,
        s2.im,
        n - s2.re,
    );
    Ok(CovarianceMatrix { sigma })
}

/// Block determinants `A = det alpha`, `B = det beta`, `C = det gamma` and
/// `Sigma = det sigma`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SymplecticInvariants {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub sigma: f64,
}

/// Result of [`log_negativity`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Negativity {
    pub e_n: f64,
    /// Smallest symplectic eigenvalue of the partially transposed state.
    pub nu_minus: f64,
    pub invariants: SymplecticInvariants,
}

struct ExactInvariants {
    a: TwoFloat,
    b: TwoFloat,
    c: TwoFloat,
    sigma: TwoFloat,
}

fn tf(x: f64) -> TwoFloat {
    TwoFloat::from(x)
}

fn minor(m: &Matrix4<f64>, rows: (usize, usize), cols: (usize, usize)) -> TwoFloat {
    tf(m[(rows.0, cols.0)]) * tf(m[(rows.1, cols.1)])
        - tf(m[(rows.0, cols.1)]) * tf(m[(rows.1, cols.0)])
}

fn exact_invariants(sigma: &Matrix4<f64>) -> ExactInvariants {
    // Laplace expansion along the first two rows.
    type Minor = ((usize, usize), (usize, usize), f64);
    const PAIRS: [Minor; 6] = [
        ((0, 1), (2, 3), 1.0),
        ((0, 2), (1, 3), -1.0),
        ((0, 3), (1, 2), 1.0),
        ((1, 2), (0, 3), 1.0),
        ((1, 3), (0, 2), -1.0),
        ((2, 3), (0, 1), 1.0),
    ];
    let mut det = tf(0.0);
    for (top, bottom, sign) in PAIRS {
        let term = minor(sigma, (0, 1), top) * minor(sigma, (2, 3), bottom);
        if sign > 0.0 {
            det += term;
        } else {
            det -= term;
        }
    }
    ExactInvariants {
        a: minor(sigma, (0, 1), (0, 1)),
        b: minor(sigma, (2, 3), (2, 3)),
        c: minor(sigma, (0, 1), (2, 3)),
        sigma: det,
    }
}

pub fn symplectic_invariants(cov: &CovarianceMatrix) -> SymplecticInvariants {
    let e = exact_invariants(&cov.sigma);
    SymplecticInvariants {
        a: e.a.into(),
        b: e.b.into(),
        c: e.c.into(),
        sigma: e.sigma.into(),
    }
}

/// `E_N = max(0, -log2(2 nu~_-))` with
/// `nu~_-^2 = 2 Sigma / (Delta~ + sqrt(Delta~^2 - 4 Sigma))`, `Delta~ = A + B - 2C`.
pub fn log_negativity(cov: &CovarianceMatrix) -> Result<Negativity> {
    let e = exact_invariants(&cov.sigma);
    let two = tf(2.0);
    let delta = e.a + e.b - two * e.c;
    let disc = delta * delta - tf(4.0) * e.sigma;
    let delta_f: f64 = delta.into();
    let disc_f: f64 = disc.into();
    let sigma_f: f64 = e.sigma.into();
    if !(delta_f > 0.0) {
        return Err(Error::NonPhysical(format!(
            "Delta~ = {delta_f:e} is not positive"
        )));
    }
    if disc_f < -DISCRIMINANT_TOL * delta_f * delta_f {
        return Err(Error::NonPhysical(format!(
            "complex symplectic eigenvalue (Delta~^2 - 4 Sigma = {disc_f:e})"
        )));
    }
    if sigma_f < -DISCRIMINANT_TOL * delta_f * delta_f {
        return Err(Error::NonPhysical(format!(
            "det sigma = {sigma_f:e} is negative"
        )));
    }
    let root = if disc_f > 0.0 { disc.sqrt() } else { tf(0.0) };
    let sigma_pos = if sigma_f > 0.0 { e.sigma } else { tf(0.0) };
    let nu_sq: f64 = (two * sigma_pos / (delta + root)).into();
    let nu_minus = nu_sq.sqrt();
    let e_n = (-(2.0 * nu_minus).log2()).max(0.0);
    Ok(Negativity {
        e_n,
        nu_minus,
        invariants: SymplecticInvariants {
            a: e.a.into(),
            b: e.b.into(),
            c: e.c.into(),
            sigma: sigma_f,
        },
    })
}

/// The two symplectic eigenvalues (ascending) as moduli of the eigenvalues of
/// `-i J sigma`, or of `-i J sigma~` when `partial_transpose` is set.
pub fn symplectic_spectrum(cov: &CovarianceMatrix, partial_transpose: bool) -> Result<[f64; 2]> {
    let target = if partial_transpose {
        cov.partial_transpose()
    } else {
        *cov
    };
    // eig(-i J s) = -i eig(J s); only the moduli matter.
    let m = symplectic_form() * target.sigma;
    let schur = Schur::try_new(m, f64::EPSILON, 10_000)
        .ok_or_else(|| Error::Eigen("Schur decomposition did not converge".into()))?;
    let mut moduli: Vec<f64> = schur
        .complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .collect();
    if moduli.iter().any(|x| !x.is_finite()) {
        return Err(Error::Eigen("non-finite eigenvalue".into()));
    }
    moduli.sort_by(f64::total_cmp);
    Ok([0.5 * (moduli[0] + moduli[1]), 0.5 * (moduli[2] + moduli[3])])
}

/// `-1/2 sum_m log2 min(1, 2|nu_m|)` over the full four-element spectrum, each
/// distinct symplectic eigenvalue appearing twice.
pub fn negativity_from_spectrum(spectrum: &[f64; 2]) -> f64 {
    -spectrum
        .iter()
        .map(|nu| (2.0 * nu.abs()).min(1.0).log2())
        .sum::<f64>()
}

/// Negativity of the state described by a moment vector.
pub fn state_negativity(state: &MomentState) -> Result<Negativity> {
    log_negativity(&covariance_from_moments(&state.physical_moments())?)
}
