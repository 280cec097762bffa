//! Control activation: raw per-step actions to bounded physical controls.
//!
//! Both models share the longitudinal form `a_lon = a_max * (sigmoid(tau) -
//! sigmoid(brake))`; the lateral channel is `tanh` scaled by the model's
//! bound. Evaluated in double precision with no fast approximations so the
//! gradient checks stay tight.

use crate::config::LiftConfig;
use crate::error::{LiftError, Result};

/// Bounded bicycle-model controls: longitudinal acceleration and steering.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KbmControls {
    /// m/s^2, strictly inside (-a_max, a_max).
    pub a_lon: f64,
    /// rad, strictly inside (-delta_max, delta_max).
    pub delta: f64,
}

/// Bounded clothoid-model controls: longitudinal acceleration and sharpness.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CcppControls {
    /// m/s^2, strictly inside (-a_max, a_max).
    pub a_lon: f64,
    /// 1/m^2, strictly inside (-sharpness_max, sharpness_max).
    pub sharpness: f64,
}

/// Numerically stable logistic sigmoid.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// d/dx sigmoid(x) = sigmoid(x) * (1 - sigmoid(x)).
pub fn dsigmoid(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 - s)
}

/// d/dx tanh(x) = 1 - tanh(x)^2.
pub fn dtanh(x: f64) -> f64 {
    let t = x.tanh();
    1.0 - t * t
}

fn check_finite(raw: [f64; 3]) -> Result<()> {
    if raw.iter().any(|v| !v.is_finite()) {
        return Err(LiftError::NonFinite("raw action"));
    }
    Ok(())
}

/// `(tau, sigma, brake)` to bicycle controls.
pub fn activate_kbm(raw: [f64; 3], cfg: &LiftConfig) -> Result<KbmControls> {
    check_finite(raw)?;
    let [tau, sigma, brake] = raw;
    Ok(KbmControls {
        a_lon: cfg.a_max * (sigmoid(tau) - sigmoid(brake)),
        delta: cfg.delta_max * sigma.tanh(),
    })
}

/// `(tau, xi, brake)` to clothoid controls.
pub fn activate_ccpp(raw: [f64; 3], cfg: &LiftConfig) -> Result<CcppControls> {
    check_finite(raw)?;
    let [tau, xi, brake] = raw;
    Ok(CcppControls {
        a_lon: cfg.a_max * (sigmoid(tau) - sigmoid(brake)),
        sharpness: cfg.sharpness_max * xi.tanh(),
    })
}

/// Jacobian of the activation: rows `(a_lon, lateral)`, columns
/// `(tau, lat, brake)`. Identical in shape for both models; `lateral_bound`
/// is `delta_max` or `sharpness_max`.
pub(crate) fn activation_jacobian(raw: [f64; 3], a_max: f64, lateral_bound: f64) -> [[f64; 3]; 2] {
    let [tau, lat, brake] = raw;
    [
        [a_max * dsigmoid(tau), 0.0, -a_max * dsigmoid(brake)],
        [0.0, lateral_bound * dtanh(lat), 0.0],
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Scheme;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn cfg() -> LiftConfig {
        LiftConfig::kbm_defaults(Scheme::Euler)
    }

    #[test]
    fn zero_raw_is_neutral() {
        let c = activate_kbm([0.0, 0.0, 0.0], &cfg()).unwrap();
        assert_eq!(c.a_lon, 0.0);
        assert_eq!(c.delta, 0.0);
        let c = activate_ccpp([0.0, 0.0, 0.0], &cfg()).unwrap();
        assert_eq!(c.a_lon, 0.0);
        assert_eq!(c.sharpness, 0.0);
    }

    #[test]
    fn lateral_channel_hits_known_values() {
        // atanh(0.5) pushed through tanh and the 0.6 rad bound
        let raw = [0.0, 0.5f64.atanh(), 0.0];
        let c = activate_kbm(raw, &cfg()).unwrap();
        assert_relative_eq!(c.delta, 0.3, max_relative = 1e-14);
    }

    #[test]
    fn longitudinal_saturation_value() {
        // frozen: sigmoid(10) - sigmoid(-10)
        let c = activate_kbm([10.0, 0.0, -10.0], &cfg()).unwrap();
        assert_relative_eq!(c.a_lon, 0.9999092042625952, max_relative = 1e-14);
    }

    #[test]
    fn sharpness_saturates_toward_bound() {
        let c = activate_ccpp([0.0, -20.0, 0.0], &cfg()).unwrap();
        assert!(c.sharpness > -0.1 && c.sharpness < -0.1 + 1e-8);
    }

    #[test]
    fn equal_throttle_and_brake_cancel() {
        let c = activate_ccpp([5.0, 0.0, 5.0], &cfg()).unwrap();
        assert_eq!(c.a_lon, 0.0);
    }

    proptest! {
        #[test]
        fn range_is_strict(tau in -50.0f64..50.0, lat in -50.0f64..50.0, brake in -50.0f64..50.0) {
            let cfg = cfg();
            let k = activate_kbm([tau, lat, brake], &cfg).unwrap();
            prop_assert!(k.a_lon.abs() < cfg.a_max);
            prop_assert!(k.delta.abs() < cfg.delta_max);
            let c = activate_ccpp([tau, lat, brake], &cfg).unwrap();
            prop_assert!(c.sharpness.abs() < cfg.sharpness_max);
        }

        #[test]
        fn lateral_odd_symmetry(lat in -30.0f64..30.0) {
            let cfg = cfg();
            let plus = activate_kbm([0.0, lat, 0.0], &cfg).unwrap().delta;
            let minus = activate_kbm([0.0, -lat, 0.0], &cfg).unwrap().delta;
            prop_assert_eq!(plus, -minus);
        }

        #[test]
        fn longitudinal_antisymmetry(tau in -30.0f64..30.0, brake in -30.0f64..30.0) {
            let cfg = cfg();
            let ab = activate_kbm([tau, 0.0, brake], &cfg).unwrap().a_lon;
            let ba = activate_kbm([brake, 0.0, tau], &cfg).unwrap().a_lon;
            prop_assert!((ab + ba).abs() < 1e-15);
        }

        #[test]
        fn monotone_in_channels(x in -20.0f64..20.0, eps in 1e-6f64..1.0) {
            let cfg = cfg();
            // a_lon strictly increasing in tau, strictly decreasing in brake
            let base = activate_kbm([x, 0.0, 0.0], &cfg).unwrap().a_lon;
            let up = activate_kbm([x + eps, 0.0, 0.0], &cfg).unwrap().a_lon;
            prop_assert!(up > base);
            let braked = activate_kbm([0.0, 0.0, x + eps], &cfg).unwrap().a_lon;
            let braked_less = activate_kbm([0.0, 0.0, x], &cfg).unwrap().a_lon;
            prop_assert!(braked < braked_less);
            // lateral strictly increasing
            let lat_up = activate_kbm([0.0, x + eps, 0.0], &cfg).unwrap().delta;
            let lat_base = activate_kbm([0.0, x, 0.0], &cfg).unwrap().delta;
            prop_assert!(lat_up > lat_base);
        }
    }

    #[test]
    fn rejects_nonfinite() {
        assert!(activate_kbm([f64::NAN, 0.0, 0.0], &cfg()).is_err());
        assert!(activate_ccpp([0.0, f64::INFINITY, 0.0], &cfg()).is_err());
    }

    #[test]
    fn activation_jacobian_matches_finite_differences() {
        let raw = [0.3, -0.7, 1.1];
        let j = activation_jacobian(raw, 1.0, 0.6);
        let h = 1e-6;
        for ch in 0..3 {
            let mut plus = raw;
            plus[ch] += h;
            let mut minus = raw;
            minus[ch] -= h;
            let cfg = cfg();
            let cp = activate_kbm(plus, &cfg).unwrap();
            let cm = activate_kbm(minus, &cfg).unwrap();
            assert_relative_eq!(
                j[0][ch],
                (cp.a_lon - cm.a_lon) / (2.0 * h),
                max_relative = 1e-8,
                epsilon = 1e-10
            );
            assert_relative_eq!(
                j[1][ch],
                (cp.delta - cm.delta) / (2.0 * h),
                max_relative = 1e-8,
                epsilon = 1e-10
            );
        }
    }
}
