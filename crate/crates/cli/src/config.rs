//! Physical parameters and numerical controls shared by every subcommand.
//!
//! The same keys are accepted from a JSON file (`--config`) and from flags;
//! flags win. Output headers echo the fully resolved set, which can be saved
//! and passed back through `--config`.

use std::fs;
use std::path::Path;

use clap::Args;
use parament_core::{AnalysisOptions, Controls, RunControls, SystemParams};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Args, Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Settings {
    /// Quality factor Q = omega / gamma [default: 5000]
    #[arg(long = "Q", global = true, allow_hyphen_values = true)]
    #[serde(rename = "Q", skip_serializing_if = "Option::is_none")]
    pub quality: Option<f64>,

    /// Thermal occupation of each bath [default: 10]
    #[arg(long = "nT", global = true, allow_hyphen_values = true)]
    #[serde(rename = "nT", skip_serializing_if = "Option::is_none")]
    pub n_thermal: Option<f64>,

    /// Pump modulation depth [default: 0.016]
    #[arg(long = "eps", global = true, allow_hyphen_values = true)]
    #[serde(rename = "eps", skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,

    /// Phase-noise spectral width D, in units of omega [default: 0]
    #[arg(long = "D", global = true, allow_hyphen_values = true)]
    #[serde(rename = "D", skip_serializing_if = "Option::is_none")]
    pub noise_width: Option<f64>,

    /// Detuning, in units of omega [default: 0]
    #[arg(long = "Delta", global = true, allow_hyphen_values = true)]
    #[serde(rename = "Delta", skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,

    /// Integrator relative tolerance [default: 1e-9]
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rtol: Option<f64>,

    /// Integrator absolute tolerance [default: 1e-12]
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub atol: Option<f64>,

    /// Largest integrator step [default: unlimited]
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_step: Option<f64>,

    /// Spacing of stored samples [default: 1/(200 gamma)]
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sample_interval: Option<f64>,

    /// Simulation horizon [default: 100/gamma]
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,

    /// Numerical zero of E_N [default: 1e-10]
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eps_on: Option<f64>,

    /// Plateau window [default: 5/(gamma + omega eps/2)]
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub plateau_window: Option<f64>,

    /// Largest moment modulus at which E_N is trusted [default: 1e10]
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub resolution_cap: Option<f64>,

    /// Master seed of the Monte-Carlo oracle [default: 0]
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

/// Everything a command needs, after merging and validation.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub settings: Settings,
    pub params: SystemParams,
    pub controls: RunControls,
    pub seed: u64,
}

impl Settings {
    pub fn from_file(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
    }

    /// `self` overridden by every flag present in `flags`.
    pub fn merged(self, flags: &Settings) -> Settings {
        macro_rules! pick {
            ($($f:ident),*) => {
                Settings { $($f: flags.$f.or(self.$f)),* }
            };
        }
        pick!(
            quality,
            n_thermal,
            epsilon,
            noise_width,
            delta,
            rtol,
            atol,
            max_step,
            sample_interval,
            horizon,
            eps_on,
            plateau_window,
            resolution_cap,
            seed
        )
    }

    /// Fills defaults and validates.
    pub fn resolve(&self) -> CliResult<Resolved> {
        let ic = Controls::default();
        let ac = AnalysisOptions::default();
        let s = Settings {
            quality: Some(self.quality.unwrap_or(5000.0)),
            n_thermal: Some(self.n_thermal.unwrap_or(10.0)),
            epsilon: Some(self.epsilon.unwrap_or(1.6e-2)),
            noise_width: Some(self.noise_width.unwrap_or(0.0)),
            delta: Some(self.delta.unwrap_or(0.0)),
            rtol: Some(self.rtol.unwrap_or(ic.rel_tol)),
            atol: Some(self.atol.unwrap_or(ic.abs_tol)),
            max_step: self.max_step,
            sample_interval: self.sample_interval,
            horizon: self.horizon,
            eps_on: Some(self.eps_on.unwrap_or(ac.eps_on)),
            plateau_window: self.plateau_window,
            resolution_cap: Some(self.resolution_cap.unwrap_or(ac.resolution_cap)),
            seed: Some(self.seed.unwrap_or(0)),
        };
        let params = SystemParams::new(
            s.quality.unwrap_or_default(),
            s.epsilon.unwrap_or_default(),
            s.noise_width.unwrap_or_default(),
            s.n_thermal.unwrap_or_default(),
        )?
        .with_delta(s.delta.unwrap_or_default())?;
        let controls = RunControls {
            integrator: Controls {
                rel_tol: s.rtol.unwrap_or(ic.rel_tol),
                abs_tol: s.atol.unwrap_or(ic.abs_tol),
                max_step: s.max_step,
                sample_interval: s.sample_interval,
                ..ic
            },
            analysis: AnalysisOptions {
                eps_on: s.eps_on.unwrap_or(ac.eps_on),
                plateau_window: s.plateau_window,
                horizon: s.horizon,
                resolution_cap: s.resolution_cap.unwrap_or(ac.resolution_cap),
                ..ac
            },
        };
        controls.integrator.validate()?;
        controls.analysis.horizon_for(&params)?;
        if let Some(w) = s.plateau_window {
            if !(w > 0.0 && w.is_finite()) {
                return Err(CliError::Validation(format!(
                    "plateau_window must be > 0, got {w}"
                )));
            }
        }
        if !(controls.analysis.eps_on > 0.0) {
            return Err(CliError::Validation("eps_on must be > 0".into()));
        }
        if !(controls.analysis.resolution_cap > 0.0) {
            return Err(CliError::Validation("resolution_cap must be > 0".into()));
        }
        Ok(Resolved {
            seed: s.seed.unwrap_or(0),
            settings: s,
            params,
            controls,
        })
    }
}
