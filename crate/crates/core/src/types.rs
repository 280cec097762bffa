//! Domain types shared by both lifting instantiations.
//!
//! All types here are immutable values after construction; they can be shared
//! and sent across threads freely.

use serde::{Deserialize, Serialize};

use crate::error::{LiftError, Result};

/// Number of raw action channels per step: throttle, lateral, brake.
pub const ACTION_CHANNELS: usize = 3;

/// A horizon of raw, unbounded per-step action triplets.
///
/// Rows are steps `k = 0..C_f`, columns are the channels `(tau, lat, brake)`
/// where `lat` is the steering channel for the bicycle model and the
/// sharpness channel for the clothoid model.
#[derive(Debug, Clone, PartialEq)]
pub struct RawActionSequence {
    steps: Vec<[f64; ACTION_CHANNELS]>,
}

impl RawActionSequence {
    /// Validates horizon length >= 1 and finiteness of every entry.
    pub fn new(steps: Vec<[f64; ACTION_CHANNELS]>) -> Result<Self> {
        if steps.is_empty() {
            return Err(LiftError::EmptyActions);
        }
        if steps.iter().flatten().any(|v| !v.is_finite()) {
            return Err(LiftError::NonFinite("raw action sequence"));
        }
        Ok(Self { steps })
    }

    /// Builds a horizon of `cf` all-zero action triplets.
    pub fn zeros(cf: usize) -> Result<Self> {
        Self::new(vec![[0.0; ACTION_CHANNELS]; cf])
    }

    /// Builds from a flat row-major slice of length `cf * 3`.
    pub fn from_flat(flat: &[f64]) -> Result<Self> {
        if flat.is_empty() || flat.len() % ACTION_CHANNELS != 0 {
            return Err(LiftError::InvalidArgument(format!(
                "flat action buffer length {} is not a positive multiple of {ACTION_CHANNELS}",
                flat.len()
            )));
        }
        Self::new(
            flat.chunks_exact(ACTION_CHANNELS)
                .map(|c| [c[0], c[1], c[2]])
                .collect(),
        )
    }

    /// Horizon length `C_f`.
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        false // construction guarantees C_f >= 1
    }

    pub fn step(&self, k: usize) -> [f64; ACTION_CHANNELS] {
        self.steps[k]
    }

    pub fn steps(&self) -> &[[f64; ACTION_CHANNELS]] {
        &self.steps
    }

    /// Row-major copy, step-major over channels.
    pub fn to_flat(&self) -> Vec<f64> {
        self.steps.iter().flatten().copied().collect()
    }

    /// Copy with one entry displaced; used by the finite-difference probes.
    pub fn perturbed(&self, step: usize, channel: usize, delta: f64) -> Self {
        let mut steps = self.steps.clone();
        steps[step][channel] += delta;
        Self { steps }
    }
}

/// Planar ego-frame waypoints, one per control interval, with the propagated
/// heading kept as optional metadata (recorded, never supervised).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaypointTrajectory {
    points: Vec<[f64; 2]>,
    headings: Option<Vec<f64>>,
}

impl WaypointTrajectory {
    pub fn new(points: Vec<[f64; 2]>, headings: Option<Vec<f64>>) -> Result<Self> {
        if points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(LiftError::NonFinite("waypoint trajectory"));
        }
        if let Some(h) = &headings {
            if h.len() != points.len() {
                return Err(LiftError::LengthMismatch {
                    left: points.len(),
                    right: h.len(),
                });
            }
        }
        Ok(Self { points, headings })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, k: usize) -> [f64; 2] {
        self.points[k]
    }

    pub fn points(&self) -> &[[f64; 2]] {
        &self.points
    }

    pub fn headings(&self) -> Option<&[f64]> {
        self.headings.as_deref()
    }

    /// Exact bitwise equality of the planar points.
    pub fn bits_eq(&self, other: &Self) -> bool {
        self.len() == other.len()
            && self
                .points
                .iter()
                .zip(&other.points)
                .all(|(a, b)| a[0].to_bits() == b[0].to_bits() && a[1].to_bits() == b[1].to_bits())
    }
}

/// Minimal initial state required for propagation.
///
/// `kappa0` is only consumed by the clothoid model; the bicycle model starts
/// from `v0` alone.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitialState {
    pub v0: f64,
    #[serde(default)]
    pub kappa0: f64,
}

impl InitialState {
    pub fn new(v0: f64, kappa0: f64) -> Result<Self> {
        if !v0.is_finite() || !kappa0.is_finite() {
            return Err(LiftError::NonFinite("initial state"));
        }
        if v0 < 0.0 {
            return Err(LiftError::NegativeInitialSpeed(v0));
        }
        Ok(Self { v0, kappa0 })
    }

    /// Initial speed only, zero curvature.
    pub fn with_speed(v0: f64) -> Result<Self> {
        Self::new(v0, 0.0)
    }
}

/// Sampled bicycle-model state: planar pose, heading and speed.
///
/// Speed carries no sign constraint; braking from rest drives it negative and
/// the rollout propagates that as-is.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KbmState {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub v: f64,
}

impl KbmState {
    pub fn pose(&self) -> [f64; 2] {
        [self.x, self.y]
    }
}

/// Clothoid-model state: planar pose, heading, curvature, and the tracked
/// speed used to convert time steps into arc-length increments.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CcppState {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub kappa: f64,
    pub v: f64,
}

impl CcppState {
    pub fn pose(&self) -> [f64; 2] {
        [self.x, self.y]
    }
}

/// Nonnegative temporal weights for the waypoint loss, with positive sum.
#[derive(Debug, Clone, PartialEq)]
pub struct LossWeights(Vec<f64>);

impl LossWeights {
    pub fn new(alphas: Vec<f64>) -> Result<Self> {
        for (i, a) in alphas.iter().enumerate() {
            if !a.is_finite() {
                return Err(LiftError::NonFinite("loss weights"));
            }
            if *a < 0.0 {
                return Err(LiftError::NegativeWeight(i));
            }
        }
        if alphas.iter().sum::<f64>() <= 0.0 {
            return Err(LiftError::ZeroWeightSum);
        }
        Ok(Self(alphas))
    }

    /// All-ones weights of length `cf`.
    pub fn uniform(cf: usize) -> Self {
        Self(vec![1.0; cf])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn sum(&self) -> f64 {
        self.0.iter().sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn action_sequence_rejects_empty_and_nonfinite() {
        assert_eq!(RawActionSequence::new(vec![]), Err(LiftError::EmptyActions));
        let bad = RawActionSequence::new(vec![[0.0, f64::NAN, 0.0]]);
        assert!(matches!(bad, Err(LiftError::NonFinite(_))));
        assert!(RawActionSequence::zeros(4).is_ok());
    }

    #[test]
    fn initial_state_bounds() {
        assert!(InitialState::with_speed(10.0).is_ok());
        assert!(InitialState::with_speed(0.0).is_ok());
        assert_eq!(
            InitialState::with_speed(-1.0),
            Err(LiftError::NegativeInitialSpeed(-1.0))
        );
        assert!(InitialState::new(1.0, f64::INFINITY).is_err());
    }

    #[test]
    fn loss_weights_validation() {
        assert!(LossWeights::new(vec![1.0, 2.0]).is_ok());
        assert_eq!(
            LossWeights::new(vec![0.0, 0.0]),
            Err(LiftError::ZeroWeightSum)
        );
        assert_eq!(
            LossWeights::new(vec![1.0, -0.1]),
            Err(LiftError::NegativeWeight(1))
        );
    }

    #[test]
    fn trajectory_heading_length_checked() {
        let bad = WaypointTrajectory::new(vec![[0.0, 0.0]; 3], Some(vec![0.0; 2]));
        assert!(matches!(bad, Err(LiftError::LengthMismatch { .. })));
    }
}
