//! Estimation, information prediction and cautious/dual control for linear
//! dynamic systems whose parameter matrices are random.
//!
//! The crate is organized bottom-up:
//! - [`tensor`]: moment tensors of random matrices and their contractions;
//! - [`gaussian`]: joint Gaussian sampling (the brute-force oracle);
//! - [`model`]: system, prior, cost and scenario definitions;
//! - [`estimation`]: irreducible (Kalman-like) and reducible (learning)
//!   filter recursions plus the innovation adequacy statistic;
//! - [`info`]: predicted and realized parameter information;
//! - [`control`]: certainty-equivalent, cautious and dual gain synthesis;
//! - [`harness`]: Monte Carlo benchmark over estimator/controller variants.

pub mod control;
pub mod error;
pub mod estimation;
pub mod gaussian;
pub mod harness;
pub mod info;
pub mod model;
pub mod tensor;

pub use control::{
    average_cost, control_at, predict_information_ce, solve_cautious, solve_ce, solve_dual,
    solve_dual_auto, solve_schedule, GainKind, GainSchedule, NominalTrajectory, XiSchedule, U_MAX,
};
pub use error::{Error, Result};
pub use estimation::{
    adequacy, predict_irreducible, predict_reducible, update_irreducible, update_reducible,
    IrreducibleState, ReducibleState,
};
pub use gaussian::{psd_factor, sample_mvn, standard_normal_vec, JointGaussian};
pub use harness::{
    default_variants, run_benchmark, run_episode, run_set, stats_to_csv, trace_to_csv,
    write_stats_csv, write_stats_json, EpisodeResult, StepTrace, Variant, VariantStats,
};
pub use info::{
    excess_covariance, info_accumulate, info_multistep, info_one_step, restricted_logdet,
    InfoMode, InfoPrediction, OneStepInfo,
};
pub use model::{
    build_scenario, load_scenario, theta_system, CostSpec, LdsModel, MatrixId, Placement,
    PriorSpec, Scenario, ScenarioFile,
};
pub use tensor::{psd_report, MomentSet, PsdReport, Tensor3, Tensor4, PSD_TOL};
