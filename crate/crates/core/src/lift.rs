//! Model dispatch for the analytic lifting operators.

use crate::ccpp::lift_ccpp;
use crate::config::{LiftConfig, Model};
use crate::error::{LiftError, Result};
use crate::kbm::lift_kbm;
use crate::types::{InitialState, RawActionSequence, WaypointTrajectory};

/// Runs the lift selected by `cfg.model`. The learned model has no analytic
/// rollout and must be driven through a fitted regressor instead.
pub fn lift(
    actions: &RawActionSequence,
    s: &InitialState,
    cfg: &LiftConfig,
) -> Result<WaypointTrajectory> {
    match cfg.model {
        Model::Kbm => lift_kbm(actions, s, cfg),
        Model::Ccpp => lift_ccpp(actions, s, cfg),
        Model::Mlp => Err(LiftError::InvalidArgument(
            "model \"mlp\" has no analytic rollout; fit an MlpLift and call predict".into(),
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Scheme;

    #[test]
    fn dispatch_respects_model() {
        let actions = RawActionSequence::zeros(4).unwrap();
        let s = InitialState::with_speed(5.0).unwrap();
        assert!(lift(&actions, &s, &LiftConfig::kbm_defaults(Scheme::Euler)).is_ok());
        assert!(lift(&actions, &s, &LiftConfig::ccpp_defaults(Scheme::Rk4)).is_ok());
        let mlp_cfg = LiftConfig {
            model: Model::Mlp,
            ..LiftConfig::kbm_defaults(Scheme::Euler)
        };
        assert!(lift(&actions, &s, &mlp_cfg).is_err());
    }
}
