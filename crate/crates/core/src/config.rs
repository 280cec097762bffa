//! Lift configuration: physical parameters, integration scheme, model choice.

use std::f64::consts::FRAC_PI_2;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{LiftError, Result};
use crate::types::{CcppState, InitialState, KbmState};

/// Numerical integration scheme for the dynamics rollout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    /// Semi-implicit first order (speed and heading updated before position).
    Euler,
    /// Classical fourth-order Runge-Kutta with piecewise-constant controls.
    Rk4,
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scheme::Euler => write!(f, "euler"),
            Scheme::Rk4 => write!(f, "rk4"),
        }
    }
}

/// Which lifting operator a config drives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Model {
    /// Kinematic bicycle model, time-based integration.
    Kbm,
    /// Continuous-curvature (clothoid) rollout, arc-length integration.
    Ccpp,
    /// Learned feedforward lift; requires a fitted regressor.
    Mlp,
}

impl fmt::Display for Model {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Model::Kbm => write!(f, "kbm"),
            Model::Ccpp => write!(f, "ccpp"),
            Model::Mlp => write!(f, "mlp"),
        }
    }
}

/// All physical and numerical parameters of a lift.
///
/// Serializes to/from JSON with exactly these field names; unknown keys are
/// rejected. Units are SI throughout, angles in radians.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LiftConfig {
    /// Control interval between consecutive actions, seconds.
    pub dt: f64,
    /// Wheelbase, meters (bicycle model only).
    #[serde(rename = "L")]
    pub wheelbase: f64,
    /// Maximum steering angle, radians, in (0, pi/2).
    pub delta_max: f64,
    /// Longitudinal gain, m/s^2; one field serves both models.
    pub a_max: f64,
    /// Curvature bound, 1/m (clothoid model only).
    pub kappa_max: f64,
    /// Sharpness bound, 1/m^2 (clothoid model only).
    pub sharpness_max: f64,
    /// Arc-length substeps per control interval, >= 1 (clothoid model only).
    pub n_int: u32,
    pub scheme: Scheme,
    pub model: Model,
}

impl LiftConfig {
    /// Reference vehicle parameters for the bicycle model:
    /// dt 0.5 s, wheelbase 2.9 m, delta_max 0.6 rad, unit longitudinal gain.
    pub fn kbm_defaults(scheme: Scheme) -> Self {
        Self {
            dt: 0.5,
            wheelbase: 2.9,
            delta_max: 0.6,
            a_max: 1.0,
            kappa_max: 0.4,
            sharpness_max: 0.1,
            n_int: 1,
            scheme,
            model: Model::Kbm,
        }
    }

    /// Reference parameters for the clothoid model:
    /// kappa_max 0.4 1/m, sharpness_max 0.1 1/m^2, five substeps per interval.
    pub fn ccpp_defaults(scheme: Scheme) -> Self {
        Self {
            n_int: 5,
            model: Model::Ccpp,
            ..Self::kbm_defaults(scheme)
        }
    }

    /// Checks every invariant, reporting the first violated bound.
    pub fn validate(&self) -> Result<()> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(LiftError::NonpositiveInterval(self.dt));
        }
        if !(self.wheelbase.is_finite() && self.wheelbase > 0.0) {
            return Err(LiftError::NonpositiveWheelbase(self.wheelbase));
        }
        if !(self.delta_max.is_finite() && self.delta_max > 0.0 && self.delta_max < FRAC_PI_2) {
            return Err(LiftError::SteeringBoundOutOfRange(self.delta_max));
        }
        if !(self.a_max.is_finite() && self.a_max > 0.0) {
            return Err(LiftError::NonpositiveAccelGain(self.a_max));
        }
        if !(self.kappa_max.is_finite() && self.kappa_max > 0.0) {
            return Err(LiftError::NonpositiveCurvatureBound(self.kappa_max));
        }
        if !(self.sharpness_max.is_finite() && self.sharpness_max > 0.0) {
            return Err(LiftError::NonpositiveSharpnessBound(self.sharpness_max));
        }
        if self.n_int == 0 {
            return Err(LiftError::ZeroSubsteps);
        }
        Ok(())
    }

    /// Consuming form of [`validate`](Self::validate): returns the config
    /// unchanged iff all invariants hold.
    pub fn validated(self) -> Result<Self> {
        self.validate()?;
        Ok(self)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("LiftConfig serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)
            .map_err(|e| LiftError::InvalidArgument(format!("config JSON: {e}")))?;
        cfg.validated()
    }
}

/// Anchors the ego frame: bicycle state `(0, 0, 0, v0)`.
pub fn init_kbm(s: &InitialState) -> Result<KbmState> {
    if !s.v0.is_finite() {
        return Err(LiftError::NonFinite("initial speed"));
    }
    Ok(KbmState {
        x: 0.0,
        y: 0.0,
        theta: 0.0,
        v: s.v0,
    })
}

/// Anchors the ego frame: clothoid state `(0, 0, 0, kappa0, v0)`.
///
/// Rejects initial curvature outside the configured bound (inclusive).
pub fn init_ccpp(s: &InitialState, cfg: &LiftConfig) -> Result<CcppState> {
    if !s.v0.is_finite() || !s.kappa0.is_finite() {
        return Err(LiftError::NonFinite("initial state"));
    }
    if s.kappa0.abs() > cfg.kappa_max {
        return Err(LiftError::InitialCurvatureOutOfBounds {
            kappa0: s.kappa0,
            kappa_max: cfg.kappa_max,
        });
    }
    Ok(CcppState {
        x: 0.0,
        y: 0.0,
        theta: 0.0,
        kappa: s.kappa0,
        v: s.v0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_config_accepted() {
        let cfg = LiftConfig {
            dt: 0.5,
            wheelbase: 2.9,
            delta_max: 0.6,
            a_max: 1.0,
            kappa_max: 0.4,
            sharpness_max: 0.1,
            n_int: 5,
            scheme: Scheme::Euler,
            model: Model::Ccpp,
        };
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn zero_interval_named() {
        let cfg = LiftConfig {
            dt: 0.0,
            ..LiftConfig::kbm_defaults(Scheme::Euler)
        };
        let err = cfg.validate().unwrap_err();
        assert_eq!(err, LiftError::NonpositiveInterval(0.0));
        assert!(err.to_string().contains("nonpositive interval"));
    }

    #[test]
    fn zero_substeps_named() {
        let cfg = LiftConfig {
            n_int: 0,
            ..LiftConfig::ccpp_defaults(Scheme::Euler)
        };
        let err = cfg.validate().unwrap_err();
        assert_eq!(err, LiftError::ZeroSubsteps);
        assert!(err.to_string().contains("zero substeps"));
    }

    #[test]
    fn validation_reports_exactly_one_violation() {
        // several bounds violated at once: the first check wins
        let cfg = LiftConfig {
            dt: -1.0,
            wheelbase: 0.0,
            n_int: 0,
            ..LiftConfig::kbm_defaults(Scheme::Rk4)
        };
        assert_eq!(cfg.validate().unwrap_err(), LiftError::NonpositiveInterval(-1.0));
    }

    #[test]
    fn json_round_trip_and_unknown_keys() {
        let cfg = LiftConfig::ccpp_defaults(Scheme::Rk4);
        let parsed = LiftConfig::from_json(&cfg.to_json()).unwrap();
        assert_eq!(parsed, cfg);

        let with_unknown = r#"{"dt":0.5,"L":2.9,"delta_max":0.6,"a_max":1.0,
            "kappa_max":0.4,"sharpness_max":0.1,"n_int":5,
            "scheme":"euler","model":"kbm","typo_field":1}"#;
        assert!(LiftConfig::from_json(with_unknown).is_err());
    }

    #[test]
    fn init_kbm_anchors_origin() {
        let s = InitialState::with_speed(10.0).unwrap();
        let z = init_kbm(&s).unwrap();
        assert_eq!((z.x, z.y, z.theta, z.v), (0.0, 0.0, 0.0, 10.0));
        let z0 = init_kbm(&InitialState::with_speed(0.0).unwrap()).unwrap();
        assert_eq!(z0.v, 0.0);
        assert_eq!(z0.pose(), [0.0, 0.0]);
        let z37 = init_kbm(&InitialState::with_speed(3.7).unwrap()).unwrap();
        assert_eq!(z37.v, 3.7);
    }

    #[test]
    fn init_ccpp_checks_curvature_bound() {
        let cfg = LiftConfig::ccpp_defaults(Scheme::Euler);
        let ok = init_ccpp(&InitialState::new(10.0, 0.0).unwrap(), &cfg).unwrap();
        assert_eq!((ok.x, ok.y, ok.theta, ok.kappa, ok.v), (0.0, 0.0, 0.0, 0.0, 10.0));

        // bound is inclusive
        let edge = init_ccpp(&InitialState::new(5.0, 0.4).unwrap(), &cfg).unwrap();
        assert_eq!(edge.kappa, 0.4);

        let bad = init_ccpp(&InitialState::new(5.0, 0.5).unwrap(), &cfg);
        assert!(matches!(
            bad,
            Err(LiftError::InitialCurvatureOutOfBounds { .. })
        ));
    }
}
