//! Averaged second-moment dynamics of two parametrically coupled quantum
//! oscillators in independent thermal baths, driven by a pump whose phase
//! performs a Wiener walk, and the logarithmic negativity of the resulting
//! Gaussian state.

// `!(x > 0.0)` rejects NaN along with the out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod error;
pub mod fit;
pub mod integrator;
pub mod model;
pub mod negativity;
pub mod oracle;
pub mod sweep;

pub use analysis::{
    analyze_trajectory, negativity_series, simulate, steady_state_negativity, AnalysisOptions,
    EntanglementReport, Extent, ReportFlags, RunControls, Simulation,
};
pub use error::{Error, Result};
pub use fit::{
    eval_boundary, fit_boundary, BoundaryConstants, BoundarySample, FitReport, FitStatus, Weighting,
};
pub use integrator::{integrate, integrate_with, Controls, Trajectory};
pub use model::{
    boson_number, build_generator, delta_star, thermal_initial_state, thermal_ratio, GeneratorSet,
    MomentState, ParamAxis, PhysicalMoments, SystemParams,
};
pub use negativity::{
    covariance_from_moments, log_negativity, state_negativity, symplectic_spectrum,
    CovarianceMatrix, Negativity, SymplecticInvariants,
};
pub use oracle::{
    compare_ensemble, default_dt, mc_compare, simulate_path, simulate_realization, CompareOptions,
    CompareReport, PathEnsemble, PathTrajectory,
};
pub use sweep::{
    find_boundary, is_entangled, run_grid, run_grid_with_progress, trace_boundary, BoundaryPoint,
    GridAxis, Output, Spacing, SweepRow, SweepSpec,
};
