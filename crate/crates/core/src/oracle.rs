//! Monte-Carlo check of the phase average.
//!
//! Each realization follows the unaveraged linear system along one Wiener
//! path `phi(t)`: per step the phase increment rotates every component by
//! `e^{i k dphi}` (`k` its phase charge), then the coherent flow `V` is
//! applied exactly with the forcing evaluated at the current `phi`. Nothing
//! here uses the averaged damping `D W_n^2` or the `e^{-Dt}` forcing
//! envelope; both have to emerge from the ensemble mean.

use nalgebra::{DMatrix, Matrix3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::integrator::{integrate, Controls, Trajectory};
use crate::model::{
    coherent_matrix, forcing_amplitude, phase_charges, thermal_initial_state, MomentState,
    SystemParams, C64,
};

/// Paths per reduction block. Blocks are combined in index order, so the
/// statistics do not depend on the thread count.
const BLOCK: usize = 64;

/// `min(1e-2 / D, 0.1 / (omega eps), 0.1 / gamma)`, capped at `1 / omega`.
pub fn default_dt(params: &SystemParams) -> f64 {
    let w = params.omega();
    let mut dt = 1.0 / w;
    if params.noise_width() > 0.0 {
        dt = dt.min(1e-2 / params.noise_width());
    }
    if params.epsilon() > 0.0 {
        dt = dt.min(0.1 / (w * params.epsilon()));
    }
    if params.gamma() > 0.0 {
        dt = dt.min(0.1 / params.gamma());
    }
    dt
}

fn check_step(params: &SystemParams, dt: f64) -> Result<()> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(invalid("dt", format!("must be finite and > 0, got {dt}")));
    }
    let drive = params.omega() * params.epsilon() / 2.0 * dt;
    let diffusion = params.noise_width() * dt;
    if drive >= 1e-2 || diffusion >= 1e-2 {
        return Err(Error::Stability(format!(
            "dt = {dt:e} gives (omega eps / 2) dt = {drive:e} and D dt = {diffusion:e}; both must be < 1e-2"
        )));
    }
    Ok(())
}

/// Random stream of path `index` under `master`.
pub fn path_rng(master: u64, index: u64) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(master);
    rng.set_stream(index);
    rng
}

/// Per-step propagator of one realization.
#[derive(Debug, Clone)]
struct Stepper {
    flow: Matrix3<C64>,
    /// `int_0^dt e^{V s} ds`
    flow_integral: Matrix3<C64>,
    forcing: [Vector3<C64>; 5],
    /// Powers of `e^{i phi}` multiplying each system's forcing.
    forcing_charge: [i32; 5],
    charges: [[i32; 3]; 5],
    /// Standard deviation of one Gaussian draw; a step sums `draws` of them.
    sigma: f64,
    draws: usize,
    steps: usize,
    dt: f64,
}

impl Stepper {
    fn new(params: &SystemParams, dt: f64, t_end: f64, draws: usize) -> Result<Self> {
        if draws == 0 {
            return Err(invalid("noise_substeps", "must be >= 1"));
        }
        params.validate()?;
        if !(t_end > 0.0 && t_end.is_finite()) {
            return Err(invalid(
                "t_end",
                format!("must be finite and > 0, got {t_end}"),
            ));
        }
        let steps = (t_end / dt).ceil().max(1.0) as usize;
        let dt = t_end / steps as f64;
        check_step(params, dt)?;

        let v = coherent_matrix(params);
        let mut aug = DMatrix::<C64>::zeros(6, 6);
        for i in 0..3 {
            for j in 0..3 {
                aug[(i, j)] = v[(i, j)] * dt;
            }
            aug[(i, i + 3)] = C64::from(dt);
        }
        let e = aug.exp();
        let flow = Matrix3::from_fn(|i, j| e[(i, j)]);
        let flow_integral = Matrix3::from_fn(|i, j| e[(i, j + 3)]);

        let mut forcing = [Vector3::zeros(); 5];
        let mut charges = [[0; 3]; 5];
        for n in 1..=5 {
            forcing[n - 1] = forcing_amplitude(n, params)?;
            let c = phase_charges(n)?;
            charges[n - 1] = [c[0] as i32, c[1] as i32, c[2] as i32];
        }
        Ok(Stepper {
            flow,
            flow_integral,
            forcing,
            forcing_charge: [0, 0, 0, 1, 1],
            charges,
            sigma: (2.0 * params.noise_width() * dt / draws as f64).sqrt(),
            draws,
            steps,
            dt,
        })
    }

    /// Advances by one step; `phi` is the accumulated phase.
    fn step(&self, u: &mut MomentState, phi: &mut f64, rng: &mut ChaCha12Rng) {
        if self.sigma > 0.0 {
            let mut xi = 0.0;
            for _ in 0..self.draws {
                let x: f64 = StandardNormal.sample(rng);
                xi += x;
            }
            let dphi = self.sigma * xi;
            *phi += dphi;
            let z = C64::from_polar(1.0, dphi);
            let powers = [z.conj(), C64::new(1.0, 0.0), z, z * z];
            for (un, ch) in u.u.iter_mut().zip(&self.charges) {
                for k in 0..3 {
                    un[k] *= powers[(ch[k] + 1) as usize];
                }
            }
        }
        let carrier = C64::from_polar(1.0, *phi);
        for n in 0..5 {
            let mut next = self.flow * u.u[n];
            if self.forcing[n] != Vector3::zeros() {
                let f = if self.forcing_charge[n] == 1 {
                    self.forcing[n] * carrier
                } else {
                    self.forcing[n]
                };
                next += self.flow_integral * f;
            }
            u.u[n] = next;
        }
    }

    /// States after the given step counts (sorted, possibly including 0).
    fn run(
        &self,
        initial: &MomentState,
        record: &[usize],
        rng: &mut ChaCha12Rng,
    ) -> Vec<MomentState> {
        let mut u = *initial;
        let mut phi = 0.0;
        let mut out = Vec::with_capacity(record.len());
        let mut next = record.iter().peekable();
        while next.peek() == Some(&&0) {
            out.push(u);
            next.next();
        }
        for s in 1..=self.steps {
            self.step(&mut u, &mut phi, rng);
            while next.peek() == Some(&&s) {
                out.push(u);
                next.next();
            }
        }
        out
    }
}

/// One realization sampled at every step.
#[derive(Debug, Clone)]
pub struct PathTrajectory {
    pub dt: f64,
    pub times: Vec<f64>,
    pub states: Vec<MomentState>,
}

/// Integrates path `0` of `seed` from thermal equilibrium.
///
/// `dt` is shrunk so that an integer number of steps reaches `t_end`.
pub fn simulate_realization(
    params: &SystemParams,
    seed: u64,
    dt: f64,
    t_end: f64,
) -> Result<PathTrajectory> {
    simulate_path(params, seed, 0, dt, t_end)
}

/// Integrates path `index` of the ensemble with master seed `master`.
pub fn simulate_path(
    params: &SystemParams,
    master: u64,
    index: u64,
    dt: f64,
    t_end: f64,
) -> Result<PathTrajectory> {
    let stepper = Stepper::new(params, dt, t_end, 1)?;
    let record: Vec<usize> = (0..=stepper.steps).collect();
    let mut rng = path_rng(master, index);
    let states = stepper.run(&thermal_initial_state(params), &record, &mut rng);
    Ok(PathTrajectory {
        dt: stepper.dt,
        times: record.iter().map(|&s| s as f64 * stepper.dt).collect(),
        states,
    })
}

/// Running mean and sum of squared deviations (Welford / Chan).
#[derive(Debug, Clone, Copy)]
struct Moments {
    n: f64,
    mean: [f64; 30],
    m2: [f64; 30],
}

impl Moments {
    fn new() -> Self {
        Moments {
            n: 0.0,
            mean: [0.0; 30],
            m2: [0.0; 30],
        }
    }

    fn push(&mut self, s: &MomentState) {
        self.n += 1.0;
        for (i, z) in s.flat().iter().enumerate() {
            for (j, x) in [z.re, z.im].into_iter().enumerate() {
                let c = 2 * i + j;
                let d = x - self.mean[c];
                self.mean[c] += d / self.n;
                self.m2[c] += d * (x - self.mean[c]);
            }
        }
    }

    fn merge(&mut self, o: &Moments) {
        if o.n == 0.0 {
            return;
        }
        let n = self.n + o.n;
        for c in 0..30 {
            let d = o.mean[c] - self.mean[c];
            self.mean[c] += d * o.n / n;
            self.m2[c] += o.m2[c] + d * d * self.n * o.n / n;
        }
        self.n = n;
    }
}

fn unflatten(v: &[f64; 30]) -> MomentState {
    let mut s = MomentState::zero();
    for n in 0..5 {
        for k in 0..3 {
            let c = 2 * (3 * n + k);
            s.u[n][k] = C64::new(v[c], v[c + 1]);
        }
    }
    s
}

/// Ensemble statistics at a set of checkpoints.
#[derive(Debug, Clone)]
pub struct PathEnsemble {
    pub n_paths: usize,
    pub dt: f64,
    pub seed: u64,
    pub times: Vec<f64>,
    pub mean: Vec<MomentState>,
    /// Standard error of the mean; real and imaginary parts are estimated
    /// separately and stored as the real and imaginary part of each entry.
    pub std_err: Vec<MomentState>,
}

impl PathEnsemble {
    /// Runs `n_paths` realizations and records the checkpoint statistics.
    /// Checkpoints are rounded to the nearest step.
    pub fn run(
        params: &SystemParams,
        n_paths: usize,
        dt: f64,
        t_end: f64,
        checkpoints: &[f64],
        seed: u64,
    ) -> Result<Self> {
        Self::run_coupled(params, n_paths, dt, t_end, checkpoints, seed, 1)
    }

    /// As [`PathEnsemble::run`], but each phase increment is the sum of
    /// `noise_substeps` Gaussian draws. An ensemble at `(dt, 2)` then follows
    /// the same Wiener paths as one at `(dt / 2, 1)`.
    pub fn run_coupled(
        params: &SystemParams,
        n_paths: usize,
        dt: f64,
        t_end: f64,
        checkpoints: &[f64],
        seed: u64,
        noise_substeps: usize,
    ) -> Result<Self> {
        if n_paths < 2 {
            return Err(invalid(
                "n_paths",
                "at least 2 paths are needed for a standard error",
            ));
        }
        let stepper = Stepper::new(params, dt, t_end, noise_substeps)?;
        let mut record: Vec<usize> = checkpoints
            .iter()
            .map(|&t| {
                if !(0.0..=t_end).contains(&t) {
                    return Err(invalid("checkpoints", format!("{t} outside [0, {t_end}]")));
                }
                Ok((t / stepper.dt).round() as usize)
            })
            .collect::<Result<_>>()?;
        record.sort_unstable();
        record.dedup();
        if record.is_empty() {
            return Err(invalid(
                "checkpoints",
                "at least one checkpoint is required",
            ));
        }
        let initial = thermal_initial_state(params);
        let n_blocks = n_paths.div_ceil(BLOCK);
        let blocks: Vec<Vec<Moments>> = (0..n_blocks)
            .into_par_iter()
            .map(|b| {
                let mut acc = vec![Moments::new(); record.len()];
                for p in b * BLOCK..((b + 1) * BLOCK).min(n_paths) {
                    let mut rng = path_rng(seed, p as u64);
                    for (m, s) in acc.iter_mut().zip(stepper.run(&initial, &record, &mut rng)) {
                        m.push(&s);
                    }
                }
                acc
            })
            .collect();
        let mut total = vec![Moments::new(); record.len()];
        for block in &blocks {
            for (t, m) in total.iter_mut().zip(block) {
                t.merge(m);
            }
        }
        let nf = n_paths as f64;
        Ok(PathEnsemble {
            n_paths,
            dt: stepper.dt,
            seed,
            times: record.iter().map(|&s| s as f64 * stepper.dt).collect(),
            mean: total.iter().map(|m| unflatten(&m.mean)).collect(),
            std_err: total
                .iter()
                .map(|m| {
                    let se = m.m2.map(|m2| (m2 / (nf - 1.0) / nf).sqrt());
                    unflatten(&se)
                })
                .collect(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Part {
    Re,
    Im,
}

/// One `(checkpoint, component, part)` comparison.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ComponentCheck {
    pub t: f64,
    pub n: usize,
    pub k: usize,
    pub part: Part,
    pub mc: f64,
    pub ode: f64,
    pub std_err: f64,
    /// `|mc - ode| / std_err`; infinite when the error is zero but they differ.
    pub z: f64,
    pub within: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareReport {
    pub pass: bool,
    pub n_paths: usize,
    pub dt: f64,
    pub seed: u64,
    pub t_end: f64,
    pub checkpoints: Vec<f64>,
    /// Pairs where ODE, mean and error are all exactly zero; excluded.
    pub trivial_pairs: usize,
    pub pairs: usize,
    pub within: usize,
    pub fraction_within: f64,
    pub worst: Option<ComponentCheck>,
    /// Components (`u[n][k].re|im`) with at least one failed checkpoint.
    pub offending: Vec<String>,
}

/// Settings of [`mc_compare`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareOptions {
    pub n_paths: usize,
    /// `None` means [`default_dt`].
    pub dt: Option<f64>,
    pub t_end: f64,
    /// `None` means ten equally spaced checkpoints ending at `t_end`.
    pub checkpoints: Option<Vec<f64>>,
    pub seed: u64,
    /// Allowed deviation in standard errors.
    pub z_max: f64,
    /// Required fraction of non-trivial pairs within `z_max`.
    pub min_fraction: f64,
    /// Relative slack added to `z_max * std_err`, for the ODE tolerance.
    pub rel_floor: f64,
}

impl CompareOptions {
    pub fn new(n_paths: usize, t_end: f64) -> Self {
        CompareOptions {
            n_paths,
            dt: None,
            t_end,
            checkpoints: None,
            seed: 0,
            z_max: 3.0,
            min_fraction: 0.95,
            rel_floor: 1e-7,
        }
    }
}

/// Compares the ensemble mean against the averaged moment equations.
pub fn mc_compare(params: &SystemParams, opts: &CompareOptions) -> Result<CompareReport> {
    if opts.n_paths < 1000 {
        return Err(invalid(
            "n_paths",
            format!("must be >= 1000, got {}", opts.n_paths),
        ));
    }
    let dt = opts.dt.unwrap_or_else(|| default_dt(params));
    let checkpoints = opts
        .checkpoints
        .clone()
        .unwrap_or_else(|| (1..=10).map(|i| opts.t_end * i as f64 / 10.0).collect());
    let ens = PathEnsemble::run(
        params,
        opts.n_paths,
        dt,
        opts.t_end,
        &checkpoints,
        opts.seed,
    )?;

    let controls = Controls {
        rel_tol: 1e-11,
        abs_tol: 1e-13,
        overflow_cap: f64::MAX,
        ..Controls::default()
    };
    let traj = integrate(params, opts.t_end, &controls)?;
    compare_ensemble(&ens, &traj, opts)
}

/// Compares an ensemble against any trajectory covering its checkpoints.
pub fn compare_ensemble(
    ens: &PathEnsemble,
    traj: &Trajectory,
    opts: &CompareOptions,
) -> Result<CompareReport> {
    if traj.overflow {
        return Err(Error::Domain(
            "moment equations overflowed before t_end".into(),
        ));
    }
    let mut checks = Vec::new();
    let mut trivial = 0;
    for (i, &t) in ens.times.iter().enumerate() {
        let ode = traj
            .state_at(t)
            .ok_or_else(|| Error::Domain(format!("no ODE state at t = {t}")))?;
        for n in 1..=5 {
            for k in 1..=3 {
                let (m, s, o) = (
                    ens.mean[i].get(n, k),
                    ens.std_err[i].get(n, k),
                    ode.get(n, k),
                );
                for (part, mc, se, ov) in
                    [(Part::Re, m.re, s.re, o.re), (Part::Im, m.im, s.im, o.im)]
                {
                    if mc == 0.0 && se == 0.0 && ov == 0.0 {
                        trivial += 1;
                        continue;
                    }
                    let diff = (mc - ov).abs();
                    let z = if se > 0.0 {
                        diff / se
                    } else if diff == 0.0 {
                        0.0
                    } else {
                        f64::INFINITY
                    };
                    let within = diff <= opts.z_max * se + opts.rel_floor * ov.abs().max(mc.abs());
                    checks.push(ComponentCheck {
                        t,
                        n,
                        k,
                        part,
                        mc,
                        ode: ov,
                        std_err: se,
                        z,
                        within,
                    });
                }
            }
        }
    }
    let pairs = checks.len();
    let within = checks.iter().filter(|c| c.within).count();
    let fraction_within = if pairs == 0 {
        1.0
    } else {
        within as f64 / pairs as f64
    };
    let worst = checks
        .iter()
        .filter(|c| !c.within)
        .max_by(|a, b| a.z.total_cmp(&b.z))
        .or_else(|| checks.iter().max_by(|a, b| a.z.total_cmp(&b.z)))
        .copied();
    let mut offending: Vec<String> = Vec::new();
    for c in checks.iter().filter(|c| !c.within) {
        let part = match c.part {
            Part::Re => "re",
            Part::Im => "im",
        };
        let name = format!("u[{}][{}].{part}", c.n, c.k);
        if !offending.contains(&name) {
            offending.push(name);
        }
    }
    Ok(CompareReport {
        pass: fraction_within >= opts.min_fraction,
        n_paths: ens.n_paths,
        dt: ens.dt,
        seed: ens.seed,
        t_end: opts.t_end,
        checkpoints: ens.times.clone(),
        trivial_pairs: trivial,
        pairs,
        within,
        fraction_within,
        worst,
        offending,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_step() {
        let p = SystemParams::new(5000.0, 1.6e-2, 1e-4, 10.0).unwrap();
        assert_eq!(default_dt(&p), 1.0);
        let p = p.with_noise_width(1e-1).unwrap();
        assert!((default_dt(&p) - 0.1).abs() < 1e-15);
    }

    #[test]
    fn coarse_step_is_rejected() {
        let p = SystemParams::new(5000.0, 1.6e-2, 1e-4, 10.0).unwrap();
        assert!(matches!(
            simulate_realization(&p, 1, 2.0, 100.0),
            Err(Error::Stability(_))
        ));
    }

    #[test]
    fn pure_rotation_keeps_modulus() {
        let p = SystemParams::new(5000.0, 0.0, 1e-3, 10.0)
            .unwrap()
            .with_gamma(0.0)
            .unwrap();
        let path = simulate_realization(&p, 7, 1.0, 500.0).unwrap();
        for s in &path.states {
            assert!((s.get(4, 2).norm() - 10.0).abs() < 1e-12);
            assert_eq!(s.get(1, 2), C64::from(10.0));
        }
        assert!(path.states.last().unwrap().get(4, 2).im.abs() > 0.0);
    }

    #[test]
    fn ensemble_is_reproducible() {
        let p = SystemParams::new(5000.0, 1.6e-2, 1e-4, 10.0).unwrap();
        let a = PathEnsemble::run(&p, 130, 1.0, 200.0, &[100.0, 200.0], 3).unwrap();
        let b = PathEnsemble::run(&p, 130, 1.0, 200.0, &[100.0, 200.0], 3).unwrap();
        assert_eq!(a.mean, b.mean);
        assert_eq!(a.std_err, b.std_err);
        let c = PathEnsemble::run(&p, 130, 1.0, 200.0, &[100.0, 200.0], 4).unwrap();
        assert_ne!(a.mean, c.mean);
    }
}
