//! Entanglement events along a trajectory: onset, death, lifetime, peak and
//! steady-state negativity.
//!
//! Above the instability every moment grows exponentially while the smallest
//! partially transposed symplectic eigenvalue stays O(1). Once the moments
//! exceed `resolution_cap` the O(1) difference is no longer resolved in
//! double precision, so samples beyond the cap are ignored and the run is
//! flagged as truncated.

use std::fmt;

use serde::{Serialize, Serializer};

use crate::error::{invalid, Error, Result};
use crate::integrator::{integrate, Controls, Trajectory};
use crate::model::SystemParams;
use crate::negativity::{state_negativity, Negativity};

/// A duration or instant that may be unbounded.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Extent {
    Finite(f64),
    Unbounded,
}

impl Extent {
    pub fn is_positive(&self) -> bool {
        match self {
            Extent::Finite(x) => *x > 0.0,
            Extent::Unbounded => true,
        }
    }

    pub fn finite(&self) -> Option<f64> {
        match self {
            Extent::Finite(x) => Some(*x),
            Extent::Unbounded => None,
        }
    }
}

impl fmt::Display for Extent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Extent::Finite(x) => write!(f, "{x:e}"),
            Extent::Unbounded => f.write_str("unbounded"),
        }
    }
}

impl Serialize for Extent {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Extent::Finite(x) => s.serialize_f64(*x),
            Extent::Unbounded => s.serialize_str("unbounded"),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ReportFlags {
    /// The moments outgrew the resolution (or overflow) cap before the horizon.
    pub overflow_truncated: bool,
    /// The horizon was too short to classify the late-time behaviour.
    pub horizon_truncated: bool,
    /// More than one entangled interval was found; `tau` is their total length.
    pub multiple_intervals: bool,
}

impl ReportFlags {
    pub fn labels(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        if self.overflow_truncated {
            out.push("overflow_truncated");
        }
        if self.horizon_truncated {
            out.push("horizon_truncated");
        }
        if self.multiple_intervals {
            out.push("multiple_intervals");
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EntanglementReport {
    pub t_onset: Option<f64>,
    /// `None` when never entangled, or when the horizon cut an open interval.
    pub t_death: Option<Extent>,
    pub tau: Extent,
    pub e_n_max: f64,
    pub t_peak: Option<f64>,
    pub e_n_steady: Option<f64>,
    pub flags: ReportFlags,
}

impl EntanglementReport {
    pub fn entangled(&self) -> bool {
        self.tau.is_positive()
    }
}

/// Thresholds and windows used by [`analyze_trajectory`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
pub struct AnalysisOptions {
    /// Numerical zero for `E_N`.
    pub eps_on: f64,
    /// An interval opens once `E_N > hysteresis * eps_on` and closes when
    /// `E_N < eps_on`.
    pub hysteresis: f64,
    /// Largest spread over the plateau window that counts as stationary:
    /// relative for `nu~_-`, relative to `max(E_N, 1)` for `E_N`.
    pub plateau_tol: f64,
    /// `None` means five relaxation times `5 / (gamma + omega eps / 2)`.
    pub plateau_window: Option<f64>,
    /// `None` means `100 / gamma`.
    pub horizon: Option<f64>,
    /// Largest moment modulus at which `E_N` is still trusted.
    pub resolution_cap: f64,
    /// Target resolution of onset/death/peak times.
    pub time_resolution: f64,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        AnalysisOptions {
            eps_on: 1e-10,
            hysteresis: 2.0,
            plateau_tol: 1e-4,
            plateau_window: None,
            horizon: None,
            resolution_cap: 1e10,
            time_resolution: 1e-3,
        }
    }
}

impl AnalysisOptions {
    pub fn plateau_window_for(&self, params: &SystemParams) -> f64 {
        self.plateau_window
            .unwrap_or_else(|| 5.0 / (params.gamma() + params.omega() * params.epsilon() / 2.0))
    }

    pub fn horizon_for(&self, params: &SystemParams) -> Result<f64> {
        match self.horizon {
            Some(h) if h > 0.0 && h.is_finite() => Ok(h),
            Some(h) => Err(invalid(
                "horizon",
                format!("must be finite and > 0, got {h}"),
            )),
            None if params.gamma() > 0.0 => Ok(100.0 / params.gamma()),
            None => Err(invalid("horizon", "required when gamma = 0")),
        }
    }
}

/// Integrator and analysis settings for one simulate-and-analyze run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, serde::Deserialize)]
pub struct RunControls {
    pub integrator: Controls,
    pub analysis: AnalysisOptions,
}

/// A trajectory together with its report.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub trajectory: Trajectory,
    pub report: EntanglementReport,
}

/// One `E_N(t)` sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NegativitySample {
    pub t: f64,
    pub e_n: f64,
    pub nu_minus: f64,
    pub nbar: f64,
}

/// Integrates from thermal equilibrium up to the analysis horizon (or the
/// resolution cap) and analyzes the result.
pub fn simulate(params: &SystemParams, controls: &RunControls) -> Result<Simulation> {
    let horizon = controls.analysis.horizon_for(params)?;
    let mut ic = controls.integrator;
    ic.overflow_cap = ic.overflow_cap.min(controls.analysis.resolution_cap);
    let trajectory = integrate(params, horizon, &ic)?;
    let report = analyze_trajectory(&trajectory, &controls.analysis)?;
    Ok(Simulation { trajectory, report })
}

/// `E_N(t)` at every stored sample within the resolution cap.
pub fn negativity_series(traj: &Trajectory, resolution_cap: f64) -> Result<Vec<NegativitySample>> {
    traj.times
        .iter()
        .zip(&traj.states)
        .take_while(|(_, s)| s.max_abs() <= resolution_cap)
        .map(|(t, s)| {
            let n = state_negativity(s)?;
            Ok(NegativitySample {
                t: *t,
                e_n: n.e_n,
                nu_minus: n.nu_minus,
                nbar: s.get(1, 2).re,
            })
        })
        .collect()
}

struct Probe<'a> {
    traj: &'a Trajectory,
}

impl Probe<'_> {
    fn neg(&self, t: f64) -> Result<Negativity> {
        let s = self
            .traj
            .state_at(t)
            .ok_or_else(|| Error::Domain(format!("t = {t} outside the integrated range")))?;
        state_negativity(&s)
    }

    /// Unclipped `-log2(2 nu~_-)`.
    fn signal(&self, t: f64) -> Result<f64> {
        Ok(-(2.0 * self.neg(t)?.nu_minus).log2())
    }

    /// Crossing of `signal = level` inside `[lo, hi]`; `rising` says which end
    /// is below the level.
    fn crossing(
        &self,
        mut lo: f64,
        mut hi: f64,
        level: f64,
        rising: bool,
        res: f64,
    ) -> Result<f64> {
        while hi - lo > res {
            let mid = 0.5 * (lo + hi);
            let above = self.signal(mid)? >= level;
            if above == rising {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }

    /// Golden-section maximization of the signal on `[a, b]`.
    fn peak(&self, mut a: f64, mut b: f64, res: f64) -> Result<(f64, f64)> {
        let r = 0.5 * (5f64.sqrt() - 1.0);
        let mut x1 = b - r * (b - a);
        let mut x2 = a + r * (b - a);
        let mut f1 = self.signal(x1)?;
        let mut f2 = self.signal(x2)?;
        while b - a > res {
            if f1 < f2 {
                a = x1;
                x1 = x2;
                f1 = f2;
                x2 = a + r * (b - a);
                f2 = self.signal(x2)?;
            } else {
                b = x2;
                x2 = x1;
                f2 = f1;
                x1 = b - r * (b - a);
                f1 = self.signal(x1)?;
            }
        }
        Ok(if f1 > f2 { (x1, f1) } else { (x2, f2) })
    }
}

/// Extracts the entanglement events of `traj`.
pub fn analyze_trajectory(traj: &Trajectory, opts: &AnalysisOptions) -> Result<EntanglementReport> {
    if traj.is_empty() {
        return Err(invalid("trajectory", "empty trajectory"));
    }
    if !(opts.eps_on > 0.0) {
        return Err(invalid("eps_on", "must be > 0"));
    }
    let probe = Probe { traj };
    let res = opts.time_resolution;

    let series = negativity_series(traj, opts.resolution_cap)?;
    let capped = series.len() < traj.len();
    let times: Vec<f64> = series.iter().map(|s| s.t).collect();
    let signal: Vec<f64> = series.iter().map(|s| -(2.0 * s.nu_minus).log2()).collect();
    let e_n: Vec<f64> = series.iter().map(|s| s.e_n).collect();
    let last = series.len() - 1;
    let t_last = times[last];

    let on_level = opts.hysteresis * opts.eps_on;
    let mut intervals: Vec<(f64, Option<f64>)> = Vec::new();
    let mut open: Option<f64> = None;
    let mut last_below: Option<usize> = None;
    for i in 0..series.len() {
        match open {
            None => {
                if e_n[i] > on_level {
                    let onset = match last_below {
                        None => times[0],
                        Some(j) => {
                            probe.crossing(times[j], times[j + 1], opts.eps_on, true, res)?
                        }
                    };
                    open = Some(onset);
                } else if e_n[i] < opts.eps_on {
                    last_below = Some(i);
                }
            }
            Some(onset) => {
                if e_n[i] < opts.eps_on {
                    let death = probe.crossing(times[i - 1], times[i], opts.eps_on, false, res)?;
                    intervals.push((onset, Some(death)));
                    open = None;
                    last_below = Some(i);
                }
            }
        }
    }
    if let Some(onset) = open {
        intervals.push((onset, None));
    }

    // Peak, refined between the neighbours of the best sample.
    let best = (0..series.len())
        .max_by(|&a, &b| signal[a].total_cmp(&signal[b]))
        .unwrap_or(0);
    let (mut t_peak, mut peak_signal) = (times[best], signal[best]);
    if last > 0 {
        let a = times[best.saturating_sub(1)];
        let b = times[(best + 1).min(last)];
        let (tp, sp) = probe.peak(a, b, res)?;
        if sp > peak_signal {
            t_peak = tp;
            peak_signal = sp;
        }
    }
    // A sub-sample excursion above the threshold that no sample caught.
    if intervals.is_empty() && peak_signal > on_level && best > 0 && best < last {
        let onset = probe.crossing(times[best - 1], t_peak, opts.eps_on, true, res)?;
        let death = probe.crossing(t_peak, times[best + 1], opts.eps_on, false, res)?;
        intervals.push((onset, Some(death)));
    }
    let e_n_max = peak_signal.max(0.0);

    // Earliest sample after the last event whose trailing window is flat in
    // both nu~_- and E_N. Taking the earliest one keeps the moments small.
    let window = opts.plateau_window_for(&traj.params);
    let last_event = intervals
        .last()
        .map(|(on, off)| off.unwrap_or(*on))
        .unwrap_or(times[0]);
    // E_N is compared against max(E_N, 1): near threshold E_N -> 0 and a
    // purely relative test would demand more digits than the moments carry.
    let spread = |v: &[f64], floor: f64| {
        let (lo, hi) = v
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| {
                (a.min(*x), b.max(*x))
            });
        (hi - lo) / hi.abs().max(lo.abs()).max(floor)
    };
    let nu: Vec<f64> = series.iter().map(|s| s.nu_minus).collect();
    let mut plateau_at = None;
    let mut j = 0;
    for i in 0..series.len() {
        if times[i] < last_event || times[i] - window < times[0] {
            continue;
        }
        while times[j] < times[i] - window {
            j += 1;
        }
        if spread(&nu[j..=i], f64::MIN_POSITIVE) < opts.plateau_tol
            && spread(&e_n[j..=i], 1.0) < opts.plateau_tol
        {
            plateau_at = Some(i);
            break;
        }
    }
    let plateau = plateau_at.is_some();
    let still_falling = !plateau
        && (t_last - window < times[0] || {
            let before = probe.neg(t_last - window)?;
            nu[last] < before.nu_minus
        });

    let mut flags = ReportFlags {
        overflow_truncated: traj.overflow || capped,
        horizon_truncated: false,
        multiple_intervals: intervals.len() > 1,
    };

    let e_n_steady = plateau_at.map(|i| e_n[i]);

    let t_onset = intervals.first().map(|iv| iv.0);
    let closed: f64 = intervals
        .iter()
        .filter_map(|(on, off)| off.map(|d| d - on))
        .sum();
    let (t_death, tau) = match intervals.last() {
        None => {
            if still_falling {
                flags.horizon_truncated = true;
            }
            (None, Extent::Finite(0.0))
        }
        Some((_, Some(death))) => (Some(Extent::Finite(*death)), Extent::Finite(closed)),
        Some((onset, None)) => {
            if plateau {
                (Some(Extent::Unbounded), Extent::Unbounded)
            } else {
                flags.horizon_truncated = true;
                (None, Extent::Finite(closed + (t_last - onset)))
            }
        }
    };

    Ok(EntanglementReport {
        t_onset,
        t_death,
        tau,
        e_n_max,
        t_peak: if e_n_max > 0.0 { Some(t_peak) } else { None },
        e_n_steady,
        flags,
    })
}

/// Plateau value of `E_N` for a coherent pump.
pub fn steady_state_negativity(params: &SystemParams, controls: &RunControls) -> Result<f64> {
    if params.noise_width() != 0.0 {
        return Err(invalid(
            "noise_width",
            "the steady state is only defined for a coherent pump (D = 0)",
        ));
    }
    let sim = simulate(params, controls)?;
    if let Some(v) = sim.report.e_n_steady {
        return Ok(v);
    }
    let series = negativity_series(&sim.trajectory, controls.analysis.resolution_cap)?;
    let partial = series.last().map(|s| s.e_n).unwrap_or(0.0);
    if sim.report.flags.overflow_truncated {
        Err(Error::OverflowBeforePlateau { partial })
    } else {
        Err(Error::NoPlateau { partial })
    }
}
