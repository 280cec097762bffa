//! Differentiable action-to-waypoint lifting for vehicle motion models.
//!
//! A lifting operator rolls a horizon of raw control actions (throttle,
//! lateral, brake) into an ego-frame waypoint trajectory through an analytic
//! vehicle model, and exposes exact gradients of the waypoints with respect
//! to the raw actions. Two instantiations are provided:
//!
//! - [`kbm`]: the kinematic bicycle model, integrated in time with
//!   semi-implicit Euler or RK4;
//! - [`ccpp`]: a continuous-curvature (clothoid) rollout, integrated in
//!   arc length with uniform substepping and curvature/speed saturations.
//!
//! On top of the rollouts sit hand-written reverse-mode gradients
//! ([`jacobian`]), the waypoint L1 loss and evaluation statistics ([`loss`]),
//! a high-resolution oracle integrator plus accuracy/compute sweep harness
//! ([`harness`]), and a small waypoint-supervised training demo with a
//! learned lifting baseline ([`train`]).

pub mod activation;
pub mod ccpp;
pub mod config;
pub mod error;
pub mod harness;
pub mod jacobian;
pub mod kbm;
pub mod lift;
pub mod loss;
pub mod train;
pub mod types;

pub use activation::{activate_ccpp, activate_kbm, CcppControls, KbmControls};
pub use ccpp::{
    arc_increment, ccpp_speed_update, lift_ccpp, rollout_ccpp_states, rollout_ccpp_traced,
    substep_euler_ccpp, substep_rk4_ccpp, CcppPose, CcppTrace,
};
pub use config::{init_ccpp, init_kbm, LiftConfig, Model, Scheme};
pub use error::{LiftError, Result};
pub use harness::{oracle_rollout, pareto_substeps, records_to_csv, run_sweep, ErrorRecord, SweepSpec};
pub use jacobian::{finite_diff_check, lift_jacobian, loss_grad, GradCheckReport, Jacobian};
pub use kbm::{kbm_rhs, lift_kbm, rollout_kbm_states, step_euler_kbm, step_rk4_kbm};
pub use lift::lift;
pub use loss::{
    aggregate_error_profiles, error_profile_csv, pearson, per_waypoint_error, waypoint_l1_loss,
};
pub use train::{
    fit_mlp_lift, generate_dataset, generate_mlp_dataset, train_step, ExpertParams, MlpLift,
    MlpSample, SyntheticSample, TinyPolicy, TrainDemoConfig,
};
pub use types::{
    CcppState, InitialState, KbmState, LossWeights, RawActionSequence, WaypointTrajectory,
    ACTION_CHANNELS,
};
