//! Parameter grids and bisection for the boundary of the entangled region.

use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{simulate, EntanglementReport, RunControls};
use crate::error::{invalid, Error, Result};
use crate::model::{ParamAxis, SystemParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Spacing {
    Lin,
    Log,
}

/// One swept parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridAxis {
    pub param: ParamAxis,
    pub min: f64,
    pub max: f64,
    pub count: usize,
    pub spacing: Spacing,
}

impl GridAxis {
    pub fn new(
        param: ParamAxis,
        min: f64,
        max: f64,
        count: usize,
        spacing: Spacing,
    ) -> Result<Self> {
        let axis = GridAxis {
            param,
            min,
            max,
            count,
            spacing,
        };
        axis.validate()?;
        Ok(axis)
    }

    pub fn validate(&self) -> Result<()> {
        if self.count < 2 {
            return Err(invalid(
                "grid",
                format!("axis {} needs at least 2 points", self.param),
            ));
        }
        if !(self.min.is_finite() && self.max.is_finite() && self.min < self.max) {
            return Err(invalid(
                "grid",
                format!(
                    "axis {} needs finite min < max, got [{}, {}]",
                    self.param, self.min, self.max
                ),
            ));
        }
        if self.spacing == Spacing::Log && self.min <= 0.0 {
            return Err(invalid(
                "grid",
                format!("log axis {} needs min > 0", self.param),
            ));
        }
        Ok(())
    }

    /// Grid values, endpoints included exactly.
    pub fn values(&self) -> Vec<f64> {
        let n = self.count;
        (0..n)
            .map(|i| {
                if i == 0 {
                    return self.min;
                }
                if i == n - 1 {
                    return self.max;
                }
                let f = i as f64 / (n - 1) as f64;
                match self.spacing {
                    Spacing::Lin => self.min + f * (self.max - self.min),
                    Spacing::Log => {
                        let (a, b) = (self.min.log10(), self.max.log10());
                        10f64.powf(a + f * (b - a))
                    }
                }
            })
            .collect()
    }
}

impl fmt::Display for GridAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sp = match self.spacing {
            Spacing::Lin => "lin",
            Spacing::Log => "log",
        };
        write!(
            f,
            "{}:{}:{:e}:{:e}:{}",
            self.param, sp, self.min, self.max, self.count
        )
    }
}

/// Parses `name:lin|log:min:max:count`, e.g. `D:log:1e-12:1e-6:25`.
impl FromStr for GridAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() != 5 {
            return Err(invalid(
                "grid",
                format!("expected name:lin|log:min:max:count, got `{s}`"),
            ));
        }
        let param: ParamAxis = parts[0].parse()?;
        let spacing = match parts[1] {
            "lin" => Spacing::Lin,
            "log" => Spacing::Log,
            other => return Err(invalid("grid", format!("unknown spacing `{other}`"))),
        };
        let num = |x: &str| {
            x.parse::<f64>()
                .map_err(|_| invalid("grid", format!("bad number `{x}` in `{s}`")))
        };
        let count = parts[4]
            .parse::<usize>()
            .map_err(|_| invalid("grid", format!("bad count `{}` in `{s}`", parts[4])))?;
        GridAxis::new(param, num(parts[2])?, num(parts[3])?, count, spacing)
    }
}

/// Report columns a sweep can emit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Output {
    Tau,
    TOnset,
    TDeath,
    ENMax,
    ENSteady,
}

impl Output {
    pub const ALL: [Output; 5] = [
        Output::Tau,
        Output::TOnset,
        Output::TDeath,
        Output::ENMax,
        Output::ENSteady,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Output::Tau => "tau",
            Output::TOnset => "t_onset",
            Output::TDeath => "t_death",
            Output::ENMax => "e_n_max",
            Output::ENSteady => "e_n_steady",
        }
    }

    /// Cell text for one report; empty when the value does not exist.
    pub fn format(&self, r: &EntanglementReport) -> String {
        let opt = |x: Option<f64>| x.map(|v| format!("{v:e}")).unwrap_or_default();
        match self {
            Output::Tau => r.tau.to_string(),
            Output::TOnset => opt(r.t_onset),
            Output::TDeath => r.t_death.map(|e| e.to_string()).unwrap_or_default(),
            Output::ENMax => format!("{:e}", r.e_n_max),
            Output::ENSteady => opt(r.e_n_steady),
        }
    }
}

impl FromStr for Output {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Output::ALL
            .into_iter()
            .find(|o| o.name() == s)
            .ok_or_else(|| invalid("outputs", format!("unknown output `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub axes: Vec<GridAxis>,
    pub fixed: SystemParams,
    pub outputs: Vec<Output>,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.axes.is_empty() || self.axes.len() > 2 {
            return Err(invalid("grid", "one or two axes are required"));
        }
        for a in &self.axes {
            a.validate()?;
        }
        if self.axes.len() == 2 && self.axes[0].param == self.axes[1].param {
            return Err(invalid("grid", "axis names must be distinct"));
        }
        if self.outputs.is_empty() {
            return Err(invalid("outputs", "at least one output column is required"));
        }
        self.fixed.validate()
    }

    pub fn len(&self) -> usize {
        self.axes.iter().map(|a| a.count).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Axis values of every cell, row-major (first axis outermost).
    pub fn cells(&self) -> Vec<Vec<f64>> {
        let mut cells: Vec<Vec<f64>> = vec![Vec::new()];
        for axis in &self.axes {
            let vals = axis.values();
            cells = cells
                .into_iter()
                .flat_map(|prefix| {
                    vals.iter().map(move |v| {
                        let mut c = prefix.clone();
                        c.push(*v);
                        c
                    })
                })
                .collect();
        }
        cells
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub values: Vec<f64>,
    pub report: Option<EntanglementReport>,
    pub error: Option<String>,
    pub steps: usize,
    pub wall_time: f64,
}

fn run_cell(spec: &SweepSpec, values: &[f64], controls: &RunControls) -> SweepRow {
    let start = Instant::now();
    let params = spec
        .axes
        .iter()
        .zip(values)
        .try_fold(spec.fixed, |p, (axis, v)| p.with_axis(axis.param, *v));
    let outcome = params.and_then(|p| simulate(&p, controls));
    let wall_time = start.elapsed().as_secs_f64();
    match outcome {
        Ok(sim) => SweepRow {
            values: values.to_vec(),
            report: Some(sim.report),
            error: None,
            steps: sim.trajectory.steps,
            wall_time,
        },
        Err(e) => SweepRow {
            values: values.to_vec(),
            report: None,
            error: Some(e.to_string()),
            steps: 0,
            wall_time,
        },
    }
}

/// Runs every grid cell; failures are stored in the row rather than returned.
pub fn run_grid(spec: &SweepSpec, controls: &RunControls) -> Result<Vec<SweepRow>> {
    run_grid_with_progress(spec, controls, &AtomicUsize::new(0))
}

/// As [`run_grid`], incrementing `progress` after each finished cell.
pub fn run_grid_with_progress(
    spec: &SweepSpec,
    controls: &RunControls,
    progress: &AtomicUsize,
) -> Result<Vec<SweepRow>> {
    spec.validate()?;
    controls.integrator.validate()?;
    Ok(spec
        .cells()
        .par_iter()
        .map(|values| {
            let row = run_cell(spec, values, controls);
            progress.fetch_add(1, Ordering::Relaxed);
            row
        })
        .collect())
}

/// A located point on the boundary of the entangled region.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundaryPoint {
    pub params: SystemParams,
    pub axis: ParamAxis,
    pub value: f64,
    /// Final bracket; `lo` and `hi` have different classifications.
    pub lo: f64,
    pub hi: f64,
    pub evaluations: usize,
    /// The full-horizon runs at the final bracket agree with the bisection.
    pub confirmed: bool,
}

/// Whether the run at `params` is ever entangled.
pub fn is_entangled(params: &SystemParams, controls: &RunControls) -> Result<bool> {
    Ok(simulate(params, controls)?.report.entangled())
}

/// Bisects the `tau > 0` predicate along `axis` to relative tolerance `tol`.
///
/// Bisection runs with a horizon of `30 / gamma`; both ends of the final
/// bracket are then re-classified with `controls` unchanged. The noise-width
/// axis is bisected geometrically when both ends are positive.
pub fn find_boundary(
    fixed: &SystemParams,
    axis: ParamAxis,
    bracket: (f64, f64),
    tol: f64,
    controls: &RunControls,
) -> Result<BoundaryPoint> {
    let (mut lo, mut hi) = bracket;
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(invalid(
            "bracket",
            format!("need finite lo < hi, got [{lo}, {hi}]"),
        ));
    }
    if !(tol > 0.0) {
        return Err(invalid("tol", "must be > 0"));
    }
    let mut quick = *controls;
    if quick.analysis.horizon.is_none() && fixed.gamma() > 0.0 {
        quick.analysis.horizon = Some(30.0 / fixed.gamma());
    }
    let at = |v: f64| fixed.with_axis(axis, v);
    let mut evaluations = 2;
    let f_lo = is_entangled(&at(lo)?, &quick)?;
    let f_hi = is_entangled(&at(hi)?, &quick)?;
    if f_lo == f_hi {
        return Err(Error::Bracket { lo, hi });
    }
    let geometric = axis == ParamAxis::NoiseWidth && lo > 0.0;
    loop {
        let mid = if geometric {
            (lo * hi).sqrt()
        } else {
            0.5 * (lo + hi)
        };
        if (hi - lo) <= tol * mid.abs() || mid <= lo || mid >= hi {
            break;
        }
        evaluations += 1;
        if is_entangled(&at(mid)?, &quick)? == f_lo {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    evaluations += 2;
    let confirmed =
        is_entangled(&at(lo)?, controls)? == f_lo && is_entangled(&at(hi)?, controls)? == f_hi;
    let value = if geometric {
        (lo * hi).sqrt()
    } else {
        0.5 * (lo + hi)
    };
    Ok(BoundaryPoint {
        params: at(value)?,
        axis,
        value,
        lo,
        hi,
        evaluations,
        confirmed,
    })
}

/// [`find_boundary`] at each value of a second parameter, in parallel.
pub fn trace_boundary(
    fixed: &SystemParams,
    axis: ParamAxis,
    along: ParamAxis,
    values: &[f64],
    bracket: (f64, f64),
    tol: f64,
    controls: &RunControls,
) -> Result<Vec<Result<BoundaryPoint>>> {
    if axis == along {
        return Err(invalid(
            "axis",
            "boundary axis and tracing axis must differ",
        ));
    }
    Ok(values
        .par_iter()
        .map(|v| {
            let p = fixed.with_axis(along, *v)?;
            find_boundary(&p, axis, bracket, tol, controls)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_parsing_and_values() {
        let a: GridAxis = "D:log:1e-12:1e-6:25".parse().unwrap();
        assert_eq!(a.param, ParamAxis::NoiseWidth);
        let v = a.values();
        assert_eq!(v.len(), 25);
        assert_eq!(v[0], 1e-12);
        assert_eq!(v[24], 1e-6);
        assert!((v[4] / 1e-11 - 1.0).abs() < 1e-12);
        let b: GridAxis = "nT:lin:1:25:25".parse().unwrap();
        assert_eq!(b.values()[3], 4.0);
        assert!("D:log:0:1:5".parse::<GridAxis>().is_err());
        assert!("D:lin:0:1:1".parse::<GridAxis>().is_err());
        assert!("D:cubic:0:1:3".parse::<GridAxis>().is_err());
        assert!("x:lin:0:1:3".parse::<GridAxis>().is_err());
    }

    #[test]
    fn cells_are_row_major() {
        let spec = SweepSpec {
            axes: vec![
                "D:lin:0:1:2".parse().unwrap(),
                "nT:lin:1:3:3".parse().unwrap(),
            ],
            fixed: SystemParams::new(5000.0, 1.6e-2, 0.0, 10.0).unwrap(),
            outputs: vec![Output::Tau],
        };
        let cells = spec.cells();
        assert_eq!(cells.len(), 6);
        assert_eq!(cells[0], vec![0.0, 1.0]);
        assert_eq!(cells[1], vec![0.0, 2.0]);
        assert_eq!(cells[3], vec![1.0, 1.0]);
    }

    #[test]
    fn duplicate_axes_rejected() {
        let spec = SweepSpec {
            axes: vec![
                "D:lin:0:1:2".parse().unwrap(),
                "D:lin:0:1:3".parse().unwrap(),
            ],
            fixed: SystemParams::new(5000.0, 1.6e-2, 0.0, 10.0).unwrap(),
            outputs: vec![Output::Tau],
        };
        assert!(run_grid(&spec, &RunControls::default()).is_err());
    }

    #[test]
    fn limiting_boson_number_at_coherent_pump() {
        let p = SystemParams::new(5000.0, 1.6e-2, 0.0, 10.0).unwrap();
        let b = find_boundary(
            &p,
            ParamAxis::NThermal,
            (1.0, 40.0),
            1e-3,
            &RunControls::default(),
        )
        .unwrap();
        assert!((b.value / 20.0 - 1.0).abs() < 0.02, "{}", b.value);
        assert!(b.confirmed);
    }

    #[test]
    fn bad_bracket_is_an_error() {
        let p = SystemParams::new(5000.0, 1.6e-2, 0.0, 10.0).unwrap();
        let r = find_boundary(
            &p,
            ParamAxis::NThermal,
            (1.0, 5.0),
            1e-3,
            &RunControls::default(),
        );
        assert!(matches!(r, Err(Error::Bracket { .. })));
    }
}
