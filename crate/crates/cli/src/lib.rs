//! `parament` command-line front end.

// `!(x > 0.0)` rejects NaN along with the out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod output;

use std::io::IsTerminal;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use clap::{Parser, Subcommand, ValueEnum};
use parament_core::{
    find_boundary, fit_boundary, negativity_series, oracle, run_grid_with_progress, simulate,
    trace_boundary, BoundaryConstants, BoundarySample, CompareOptions, GridAxis, Output, ParamAxis,
    Spacing, SweepSpec, Weighting,
};
use serde::Serialize;

use crate::config::{Resolved, Settings};
use crate::error::{CliError, CliResult};
use crate::output::{float, plot_script_path, write_csv, write_json, write_text, Meta};

#[derive(Parser, Debug)]
#[command(
    name = "parament",
    version,
    about = "Entanglement of two thermal oscillators coupled by a phase-noisy parametric pump"
)]
pub struct Cli {
    /// JSON file with parameter and control keys; flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[command(flatten)]
    pub settings: Settings,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Integrate one trajectory and write E_N(t) plus its entanglement report.
    Simulate(SimulateArgs),
    /// Run a one- or two-dimensional parameter grid.
    Sweep(SweepArgs),
    /// Locate the boundary of the entangled region by bisection.
    Boundary(BoundaryArgs),
    /// Refit the closed-form boundary approximation to boundary points.
    Fit(FitArgs),
    /// Compare the averaged equations against a Monte-Carlo phase ensemble.
    Oracle(OracleArgs),
}

#[derive(clap::Args, Debug)]
pub struct SimulateArgs {
    /// Output directory.
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
    /// File stem: writes <name>.csv and <name>.json.
    #[arg(long, default_value = "simulate")]
    pub name: String,
    /// Also write a matplotlib script next to the CSV.
    #[arg(long)]
    pub emit_plot_script: bool,
}

#[derive(clap::Args, Debug)]
pub struct SweepArgs {
    /// Axis as name:lin|log:min:max:count, e.g. D:log:1e-12:1e-6:25. One or two.
    #[arg(long, required = true, num_args = 1..=2)]
    pub grid: Vec<GridAxis>,
    /// Report columns (tau, t_onset, t_death, e_n_max, e_n_steady).
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "tau,t_onset,t_death,e_n_max,e_n_steady"
    )]
    pub outputs: Vec<Output>,
    #[arg(long, default_value = "sweep.csv")]
    pub out: PathBuf,
    #[arg(long)]
    pub emit_plot_script: bool,
}

#[derive(clap::Args, Debug)]
pub struct BoundaryArgs {
    /// Parameter to bisect: nT, eps, D or Q.
    #[arg(long)]
    pub axis: ParamAxis,
    /// Lower end of the bracket [default depends on the axis].
    #[arg(long)]
    pub lo: Option<f64>,
    /// Upper end of the bracket [default depends on the axis].
    #[arg(long)]
    pub hi: Option<f64>,
    /// Relative tolerance.
    #[arg(long, default_value_t = 1e-3)]
    pub tol: f64,
    /// Repeat the search along a second axis, e.g. D:log:1e-10:1e-6:9.
    #[arg(long)]
    pub trace: Option<GridAxis>,
    /// JSON list of critical points.
    #[arg(long, default_value = "boundary.json")]
    pub out: PathBuf,
    /// Also write the points as CSV (columns Q, eps, D, nT, Delta), the input of `fit`.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum WeightArg {
    Uniform,
    InverseSquare,
}

#[derive(clap::Args, Debug)]
pub struct FitArgs {
    /// Boundary CSV with columns Q, eps, D, nT.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum, default_value = "uniform")]
    pub weights: WeightArg,
    #[arg(long, default_value = "fit.json")]
    pub out: PathBuf,
}

#[derive(clap::Args, Debug)]
pub struct OracleArgs {
    #[arg(long, default_value_t = 10_000)]
    pub paths: usize,
    /// Time step [default: min(1e-2/D, 0.1/eps, 0.1/gamma, 1)].
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long, default_value_t = 2e4)]
    pub t_end: f64,
    /// Comma-separated checkpoint times [default: ten up to t_end].
    #[arg(long, value_delimiter = ',')]
    pub checkpoints: Option<Vec<f64>>,
    #[arg(long, default_value = "oracle.json")]
    pub out: PathBuf,
    /// Dump every step of the first N paths to --dump.
    #[arg(long, default_value_t = 0)]
    pub dump_paths: u64,
    #[arg(long, default_value = "oracle_paths.csv")]
    pub dump: PathBuf,
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let args: Vec<std::ffi::OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let line = args
        .iter()
        .skip(1)
        .map(|a| a.to_string_lossy().into_owned())
        .collect::<Vec<_>>()
        .join(" ");
    match run(&cli, &line) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: &Cli, command_line: &str) -> CliResult<()> {
    let base = match &cli.config {
        Some(p) => Settings::from_file(p)?,
        None => Settings::default(),
    };
    let resolved = base.merged(&cli.settings).resolve()?;
    let meta = Meta::new(command_line.to_string(), &resolved.settings);
    match &cli.command {
        Command::Simulate(a) => command_simulate(&resolved, &meta, a),
        Command::Sweep(a) => command_sweep(&resolved, &meta, a),
        Command::Boundary(a) => command_boundary(&resolved, &meta, a),
        Command::Fit(a) => command_fit(&meta, a),
        Command::Oracle(a) => command_oracle(&resolved, &meta, a),
    }
}

#[derive(Serialize)]
struct Diagnostics {
    steps: usize,
    rejected: usize,
    t_reached: f64,
    t_end: f64,
    overflow: bool,
}

pub fn command_simulate(r: &Resolved, meta: &Meta, a: &SimulateArgs) -> CliResult<()> {
    let sim = simulate(&r.params, &r.controls)?;
    let series = negativity_series(&sim.trajectory, r.controls.analysis.resolution_cap)?;
    let mut rows = vec![vec![
        "t_omega".into(),
        "E_N".into(),
        "nu_minus".into(),
        "nbar".into(),
    ]];
    rows.extend(
        series
            .iter()
            .map(|s| vec![float(s.t), float(s.e_n), float(s.nu_minus), float(s.nbar)]),
    );
    let csv = a.out_dir.join(format!("{}.csv", a.name));
    write_csv(&csv, meta, &rows)?;

    #[derive(Serialize)]
    struct Body<'a> {
        report: &'a parament_core::EntanglementReport,
        diagnostics: Diagnostics,
    }
    let t = &sim.trajectory;
    let body = Body {
        report: &sim.report,
        diagnostics: Diagnostics {
            steps: t.steps,
            rejected: t.rejected,
            t_reached: t.t_reached,
            t_end: t.t_end,
            overflow: t.overflow,
        },
    };
    write_json(&a.out_dir.join(format!("{}.json", a.name)), meta, &body)?;
    if a.emit_plot_script {
        write_text(&plot_script_path(&csv), &output::simulate_plot_script(&csv))?;
    }
    Ok(())
}

pub fn command_sweep(r: &Resolved, meta: &Meta, a: &SweepArgs) -> CliResult<()> {
    let mut outputs = a.outputs.clone();
    outputs.sort();
    outputs.dedup();
    let spec = SweepSpec {
        axes: a.grid.clone(),
        fixed: r.params,
        outputs,
    };
    spec.validate()?;
    let total = spec.len();
    let progress = AtomicUsize::new(0);
    let rows = std::thread::scope(|scope| {
        let done = &progress;
        let reporter = std::io::stderr().is_terminal().then(|| {
            scope.spawn(move || loop {
                let n = done.load(Ordering::Relaxed);
                eprint!("\r{n}/{total} cells");
                if n >= total {
                    eprintln!();
                    break;
                }
                std::thread::sleep(Duration::from_millis(500));
            })
        });
        let rows = run_grid_with_progress(&spec, &r.controls, &progress);
        progress.store(total, Ordering::Relaxed);
        if let Some(h) = reporter {
            let _ = h.join();
        }
        rows
    })?;

    let mut header: Vec<String> = spec
        .axes
        .iter()
        .map(|x| x.param.name().to_string())
        .collect();
    header.extend(spec.outputs.iter().map(|o| o.name().to_string()));
    header.push("steps".into());
    header.push("flags".into());
    let mut table = vec![header];
    let mut failures = 0;
    for row in &rows {
        let mut cells: Vec<String> = row.values.iter().map(|v| float(*v)).collect();
        match (&row.report, &row.error) {
            (Some(rep), _) => {
                cells.extend(spec.outputs.iter().map(|o| o.format(rep)));
                cells.push(row.steps.to_string());
                cells.push(rep.flags.labels().join(";"));
            }
            (None, err) => {
                failures += 1;
                cells.extend(spec.outputs.iter().map(|_| String::new()));
                cells.push(row.steps.to_string());
                cells.push(format!("error: {}", err.as_deref().unwrap_or("unknown")));
            }
        }
        table.push(cells);
    }
    write_csv(&a.out, meta, &table)?;
    if a.emit_plot_script {
        let axes: Vec<String> = spec
            .axes
            .iter()
            .map(|x| x.param.name().to_string())
            .collect();
        let logs: Vec<String> = spec
            .axes
            .iter()
            .filter(|x| x.spacing == Spacing::Log)
            .map(|x| x.param.name().to_string())
            .collect();
        write_text(
            &plot_script_path(&a.out),
            &output::sweep_plot_script(&a.out, &axes, &logs),
        )?;
    }
    if failures > 0 {
        eprintln!("warning: {failures} of {total} cells failed; see the flags column");
    }
    Ok(())
}

fn default_bracket(r: &Resolved, axis: ParamAxis) -> Option<(f64, f64)> {
    let p = &r.params;
    match axis {
        ParamAxis::NThermal => Some((0.0, 1.5 * p.n_thermal_threshold())),
        ParamAxis::Epsilon if p.n_thermal() > 0.0 => {
            Some((0.5 * p.epsilon_threshold(), 10.0 * p.epsilon_threshold()))
        }
        ParamAxis::NoiseWidth => Some((1e-14, 1e-4)),
        _ => None,
    }
}

#[derive(Serialize)]
struct PointOut {
    axis: ParamAxis,
    value: f64,
    lo: f64,
    hi: f64,
    evaluations: usize,
    confirmed: bool,
    #[serde(rename = "Q")]
    quality: f64,
    eps: f64,
    #[serde(rename = "D")]
    noise_width: f64,
    #[serde(rename = "nT")]
    n_thermal: f64,
    #[serde(rename = "Delta")]
    delta: f64,
}

#[derive(Serialize)]
struct FailureOut {
    at: Option<f64>,
    error: String,
}

pub fn command_boundary(r: &Resolved, meta: &Meta, a: &BoundaryArgs) -> CliResult<()> {
    let default = default_bracket(r, a.axis);
    let bracket = match (a.lo, a.hi, default) {
        (Some(lo), Some(hi), _) => (lo, hi),
        (lo, hi, Some((dlo, dhi))) => (lo.unwrap_or(dlo), hi.unwrap_or(dhi)),
        _ => {
            return Err(CliError::Validation(format!(
                "no default bracket for axis {}; pass --lo and --hi",
                a.axis
            )))
        }
    };
    let results = match &a.trace {
        None => vec![(
            None,
            find_boundary(&r.params, a.axis, bracket, a.tol, &r.controls),
        )],
        Some(t) => {
            let values = t.values();
            let found = trace_boundary(
                &r.params,
                a.axis,
                t.param,
                &values,
                bracket,
                a.tol,
                &r.controls,
            )?;
            values.into_iter().map(Some).zip(found).collect()
        }
    };
    let mut points = Vec::new();
    let mut failures = Vec::new();
    for (at, res) in results {
        match res {
            Ok(b) => points.push(PointOut {
                axis: b.axis,
                value: b.value,
                lo: b.lo,
                hi: b.hi,
                evaluations: b.evaluations,
                confirmed: b.confirmed,
                quality: b.params.quality(),
                eps: b.params.epsilon(),
                noise_width: b.params.noise_width(),
                n_thermal: b.params.n_thermal(),
                delta: b.params.delta(),
            }),
            Err(e) => failures.push(FailureOut {
                at,
                error: e.to_string(),
            }),
        }
    }
    #[derive(Serialize)]
    struct Body<'a> {
        points: &'a [PointOut],
        failures: &'a [FailureOut],
    }
    write_json(
        &a.out,
        meta,
        &Body {
            points: &points,
            failures: &failures,
        },
    )?;
    if let Some(csv) = &a.csv {
        let mut rows = vec![vec!["Q", "eps", "D", "nT", "Delta"]
            .into_iter()
            .map(String::from)
            .collect::<Vec<_>>()];
        rows.extend(points.iter().map(|p| {
            vec![
                float(p.quality),
                float(p.eps),
                float(p.noise_width),
                float(p.n_thermal),
                float(p.delta),
            ]
        }));
        write_csv(csv, meta, &rows)?;
    }
    for p in &points {
        println!("{} = {}", p.axis, p.value);
    }
    if points.is_empty() {
        let msg = failures
            .first()
            .map(|f| f.error.clone())
            .unwrap_or_else(|| "no boundary point found".into());
        return Err(CliError::Numerical(msg));
    }
    Ok(())
}

pub fn read_boundary_csv(path: &Path) -> CliResult<Vec<BoundarySample>> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::io(path, e))?;
    rdr.deserialize()
        .map(|r| r.map_err(|e| CliError::Validation(format!("{}: {e}", path.display()))))
        .collect()
}

pub fn command_fit(meta: &Meta, a: &FitArgs) -> CliResult<()> {
    let samples = read_boundary_csv(&a.input)?;
    let weighting = match a.weights {
        WeightArg::Uniform => Weighting::Uniform,
        WeightArg::InverseSquare => Weighting::InverseSquare,
    };
    let fit = fit_boundary(&samples, weighting)?;
    let published = BoundaryConstants::PUBLISHED;
    let published_relative: Vec<Option<f64>> = samples
        .iter()
        .map(|s| {
            parament_core::eval_boundary(s.d, s.epsilon, s.quality, &published)
                .ok()
                .map(|p| (p - s.n_t0) / s.n_t0)
        })
        .collect();
    #[derive(Serialize)]
    struct Body<'a> {
        fit: &'a parament_core::FitReport,
        published: BoundaryConstants,
        published_relative_residuals: Vec<Option<f64>>,
    }
    write_json(
        &a.out,
        meta,
        &Body {
            fit: &fit,
            published,
            published_relative_residuals: published_relative,
        },
    )
}

pub fn command_oracle(r: &Resolved, meta: &Meta, a: &OracleArgs) -> CliResult<()> {
    let opts = CompareOptions {
        dt: a.dt,
        checkpoints: a.checkpoints.clone(),
        seed: r.seed,
        ..CompareOptions::new(a.paths, a.t_end)
    };
    let report = oracle::mc_compare(&r.params, &opts)?;
    write_json(&a.out, meta, &report)?;
    if a.dump_paths > 0 {
        let dt = a.dt.unwrap_or_else(|| oracle::default_dt(&r.params));
        let mut header = vec!["path".to_string(), "t_omega".to_string()];
        for n in 1..=5 {
            for k in 1..=3 {
                header.push(format!("re_u{n}{k}"));
                header.push(format!("im_u{n}{k}"));
            }
        }
        let mut rows = vec![header];
        for p in 0..a.dump_paths {
            let path = oracle::simulate_path(&r.params, r.seed, p, dt, a.t_end)?;
            for (t, s) in path.times.iter().zip(&path.states) {
                let mut row = vec![p.to_string(), float(*t)];
                for z in s.flat() {
                    row.push(float(z.re));
                    row.push(float(z.im));
                }
                rows.push(row);
            }
        }
        write_csv(&a.dump, meta, &rows)?;
    }
    println!(
        "{}: {}/{} pairs within {} SE",
        if report.pass { "pass" } else { "FAIL" },
        report.within,
        report.pairs,
        opts.z_max
    );
    if !report.pass {
        return Err(CliError::Numerical(format!(
            "Monte-Carlo mean deviates in {}",
            report.offending.join(", ")
        )));
    }
    Ok(())
}
