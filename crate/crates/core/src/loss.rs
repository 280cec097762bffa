//! Waypoint-space loss and evaluation statistics.

use crate::error::{LiftError, Result};
use crate::types::{LossWeights, WaypointTrajectory};

/// Sign with sign(0) = 0, the L1 subgradient convention.
pub(crate) fn l1_sign(e: f64) -> f64 {
    if e > 0.0 {
        1.0
    } else if e < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn check_lengths(pred: &WaypointTrajectory, gt: &WaypointTrajectory) -> Result<()> {
    if pred.len() != gt.len() {
        return Err(LiftError::LengthMismatch {
            left: pred.len(),
            right: gt.len(),
        });
    }
    Ok(())
}

/// Weighted mean of per-waypoint absolute position errors:
/// `(1/sum alpha) * sum alpha_k * (|dx_k| + |dy_k|)`.
///
/// Heading is never part of the loss.
pub fn waypoint_l1_loss(
    pred: &WaypointTrajectory,
    gt: &WaypointTrajectory,
    weights: &LossWeights,
) -> Result<f64> {
    check_lengths(pred, gt)?;
    if weights.len() != pred.len() {
        return Err(LiftError::LengthMismatch {
            left: pred.len(),
            right: weights.len(),
        });
    }
    let wsum = weights.sum();
    if wsum <= 0.0 {
        return Err(LiftError::ZeroWeightSum);
    }
    let total: f64 = pred
        .points()
        .iter()
        .zip(gt.points())
        .zip(weights.as_slice())
        .map(|((p, g), a)| a * ((p[0] - g[0]).abs() + (p[1] - g[1]).abs()))
        .sum();
    Ok(total / wsum)
}

/// Unweighted per-index L1 position errors `|dx_k| + |dy_k|`.
pub fn per_waypoint_error(pred: &WaypointTrajectory, gt: &WaypointTrajectory) -> Result<Vec<f64>> {
    check_lengths(pred, gt)?;
    Ok(pred
        .points()
        .iter()
        .zip(gt.points())
        .map(|(p, g)| (p[0] - g[0]).abs() + (p[1] - g[1]).abs())
        .collect())
}

/// Mean and population standard deviation per waypoint index over a corpus
/// of error profiles (all profiles must share one length).
pub fn aggregate_error_profiles(profiles: &[Vec<f64>]) -> Result<Vec<(f64, f64)>> {
    let Some(first) = profiles.first() else {
        return Err(LiftError::InvalidArgument("empty profile corpus".into()));
    };
    let cf = first.len();
    for p in profiles {
        if p.len() != cf {
            return Err(LiftError::LengthMismatch {
                left: cf,
                right: p.len(),
            });
        }
    }
    let n = profiles.len() as f64;
    Ok((0..cf)
        .map(|k| {
            let mean = profiles.iter().map(|p| p[k]).sum::<f64>() / n;
            let var = profiles.iter().map(|p| (p[k] - mean).powi(2)).sum::<f64>() / n;
            (mean, var.sqrt())
        })
        .collect())
}

/// Error-profile aggregates as CSV with header `k,mean_l1,std_l1`.
pub fn error_profile_csv(aggregates: &[(f64, f64)]) -> String {
    let mut out = String::from("k,mean_l1,std_l1\n");
    for (k, (mean, std)) in aggregates.iter().enumerate() {
        out.push_str(&format!("{},{},{}\n", k + 1, mean, std));
    }
    out
}

/// Sample Pearson correlation coefficient.
///
/// Errors on length < 2, length mismatch, or a constant series (undefined
/// correlation).
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(LiftError::LengthMismatch {
            left: xs.len(),
            right: ys.len(),
        });
    }
    if xs.len() < 2 {
        return Err(LiftError::UndefinedCorrelation("need at least two points"));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    let mut sxy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        let dx = x - mx;
        let dy = y - my;
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(LiftError::UndefinedCorrelation("constant series"));
    }
    Ok(sxy / (sxx.sqrt() * syy.sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn traj(points: Vec<[f64; 2]>) -> WaypointTrajectory {
        WaypointTrajectory::new(points, None).unwrap()
    }

    #[test]
    fn loss_examples() {
        let gt = traj(vec![[0.0, 0.0]]);
        assert_eq!(
            waypoint_l1_loss(&gt, &gt, &LossWeights::uniform(1)).unwrap(),
            0.0
        );
        let pred = traj(vec![[1.0, 2.0]]);
        assert_eq!(
            waypoint_l1_loss(&pred, &gt, &LossWeights::uniform(1)).unwrap(),
            3.0
        );
        // per-step errors (2, 4) with unit weights: normalized mean 3
        let pred2 = traj(vec![[2.0, 0.0], [0.0, 4.0]]);
        let gt2 = traj(vec![[0.0, 0.0], [0.0, 0.0]]);
        assert_eq!(
            waypoint_l1_loss(&pred2, &gt2, &LossWeights::uniform(2)).unwrap(),
            3.0
        );
    }

    #[test]
    fn loss_length_mismatch() {
        let a = traj(vec![[0.0, 0.0]]);
        let b = traj(vec![[0.0, 0.0], [1.0, 1.0]]);
        assert!(matches!(
            waypoint_l1_loss(&a, &b, &LossWeights::uniform(1)),
            Err(LiftError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn per_waypoint_error_locality() {
        let gt = traj(vec![[1.0, 1.0], [2.0, 2.0], [3.0, 3.0]]);
        assert_eq!(per_waypoint_error(&gt, &gt).unwrap(), vec![0.0; 3]);
        let mut moved = gt.points().to_vec();
        moved[1] = [2.5, 1.0];
        let e = per_waypoint_error(&traj(moved), &gt).unwrap();
        assert_eq!(e[0], 0.0);
        assert_relative_eq!(e[1], 1.5, max_relative = 1e-15);
        assert_eq!(e[2], 0.0);
    }

    #[test]
    fn aggregate_matches_scripted_recomputation() {
        // frozen by hand: profiles {(1,3), (3,5)} -> means (2,4), stds (1,1)
        let agg = aggregate_error_profiles(&[vec![1.0, 3.0], vec![3.0, 5.0]]).unwrap();
        assert_eq!(agg, vec![(2.0, 1.0), (4.0, 1.0)]);
        let csv = error_profile_csv(&agg);
        assert_eq!(csv, "k,mean_l1,std_l1\n1,2,1\n2,4,1\n");
    }

    #[test]
    fn pearson_examples() {
        let xs = vec![1.0, 2.0, 4.0, 7.0];
        let same = pearson(&xs, &xs).unwrap();
        assert!((same - 1.0).abs() < 1e-12);
        let neg: Vec<f64> = xs.iter().map(|x| -x).collect();
        assert!((pearson(&xs, &neg).unwrap() + 1.0).abs() < 1e-12);
        let affine: Vec<f64> = xs.iter().map(|x| 2.5 * x + 3.0).collect();
        assert!((pearson(&xs, &affine).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pearson_constant_series_is_undefined() {
        assert!(matches!(
            pearson(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]),
            Err(LiftError::UndefinedCorrelation(_))
        ));
        assert!(pearson(&[1.0], &[1.0]).is_err());
    }

    proptest! {
        #[test]
        fn loss_nonnegative_and_zero_iff_equal(
            points in proptest::collection::vec((-100.0f64..100.0, -100.0f64..100.0), 1..10),
            shift in -5.0f64..5.0,
        ) {
            let pred = traj(points.iter().map(|(x, y)| [*x, *y]).collect());
            let w = LossWeights::uniform(pred.len());
            prop_assert_eq!(waypoint_l1_loss(&pred, &pred, &w).unwrap(), 0.0);
            if shift != 0.0 {
                let moved = traj(points.iter().map(|(x, y)| [*x + shift, *y]).collect());
                prop_assert!(waypoint_l1_loss(&moved, &pred, &w).unwrap() > 0.0);
            }
        }

        #[test]
        fn loss_positive_homogeneity(
            points in proptest::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 1..8),
            c in 0.01f64..100.0,
        ) {
            let gt = traj(vec![[0.0, 0.0]; points.len()]);
            let pred = traj(points.iter().map(|(x, y)| [*x, *y]).collect());
            let scaled = traj(points.iter().map(|(x, y)| [c * *x, c * *y]).collect());
            let w = LossWeights::uniform(points.len());
            let base = waypoint_l1_loss(&pred, &gt, &w).unwrap();
            let big = waypoint_l1_loss(&scaled, &gt, &w).unwrap();
            prop_assert!((big - c * base).abs() <= 1e-9 * big.max(1.0));
        }

        #[test]
        fn loss_weight_rescaling_invariance(
            c in 0.01f64..50.0,
            alphas in proptest::collection::vec(0.01f64..10.0, 3),
        ) {
            let pred = traj(vec![[1.0, -2.0], [0.5, 3.0], [-4.0, 0.1]]);
            let gt = traj(vec![[0.0, 0.0]; 3]);
            let w1 = LossWeights::new(alphas.clone()).unwrap();
            let w2 = LossWeights::new(alphas.iter().map(|a| c * a).collect()).unwrap();
            let l1 = waypoint_l1_loss(&pred, &gt, &w1).unwrap();
            let l2 = waypoint_l1_loss(&pred, &gt, &w2).unwrap();
            prop_assert!((l1 - l2).abs() <= 1e-12 * l1.max(1.0));
        }

        #[test]
        fn pearson_affine_invariance(
            xs in proptest::collection::vec(-100.0f64..100.0, 3..20),
            a in 0.01f64..10.0,
            b in -10.0f64..10.0,
        ) {
            // need a non-constant series
            prop_assume!(xs.iter().any(|v| (v - xs[0]).abs() > 1e-6));
            let ys: Vec<f64> = xs.iter().map(|x| a * x + b).collect();
            let rho = pearson(&xs, &ys).unwrap();
            prop_assert!((rho - 1.0).abs() < 1e-9);
        }
    }
}
