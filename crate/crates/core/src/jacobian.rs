//! Exact reverse-mode differentiation of the lifts w.r.t. raw actions.
//!
//! Each step function ships a paired analytic derivative (see `kbm` and
//! `ccpp`); this module records those local Jacobians along a rollout and
//! accumulates them in reverse. No tape or graph framework is involved.
//!
//! Clamp convention at saturation boundaries: the derivative passes through
//! strictly inside the bound and exactly at it, and is zero strictly outside.

use serde::Serialize;

use crate::activation::{activate_ccpp, activate_kbm, activation_jacobian};
use crate::ccpp::{rollout_ccpp_states, rollout_ccpp_traced, step_ccpp_jacobian};
use crate::config::{LiftConfig, Model};
use crate::error::{LiftError, Result};
use crate::kbm::{rollout_kbm_states, step_kbm_jacobian};
use crate::lift::lift;
use crate::loss::l1_sign;
use crate::types::{InitialState, LossWeights, RawActionSequence, WaypointTrajectory};

/// Dense derivative of every output coordinate w.r.t. every raw action entry.
///
/// Rows are row-major over (waypoint index, coordinate), columns over
/// (step index, channel); the matrix is block-lower-triangular in time.
#[derive(Debug, Clone, PartialEq)]
pub struct Jacobian {
    cf: usize,
    data: Vec<f64>,
}

impl Jacobian {
    fn zeros(cf: usize) -> Self {
        Self {
            cf,
            data: vec![0.0; cf * 2 * cf * 3],
        }
    }

    pub fn horizon(&self) -> usize {
        self.cf
    }

    pub fn rows(&self) -> usize {
        self.cf * 2
    }

    pub fn cols(&self) -> usize {
        self.cf * 3
    }

    pub fn entry(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols() + col]
    }

    fn entry_mut(&mut self, row: usize, col: usize) -> &mut f64 {
        let c = self.cols();
        &mut self.data[row * c + col]
    }

    /// 2x3 block for waypoint `k` (1-based, as produced by the lift) against
    /// action step `j` (0-based). Zero whenever `j >= k` (causality).
    pub fn block(&self, k: usize, j: usize) -> [[f64; 3]; 2] {
        let mut out = [[0.0; 3]; 2];
        for (coord, row_out) in out.iter_mut().enumerate() {
            for (ch, v) in row_out.iter_mut().enumerate() {
                *v = self.entry((k - 1) * 2 + coord, j * 3 + ch);
            }
        }
        out
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

/// Per-step local Jacobians recorded along one rollout.
struct Recorded<const N: usize> {
    /// d(state_{k+1}) / d(state_k)
    a: Vec<[[f64; N]; N]>,
    /// d(state_{k+1}) / d(controls_k)
    b: Vec<[[f64; 2]; N]>,
    /// d(controls_k) / d(raw_k)
    d: Vec<[[f64; 3]; 2]>,
}

fn record_kbm(
    actions: &RawActionSequence,
    s: &InitialState,
    cfg: &LiftConfig,
) -> Result<Recorded<4>> {
    let states = rollout_kbm_states(actions, s, cfg)?;
    let cf = actions.len();
    let mut rec = Recorded {
        a: Vec::with_capacity(cf),
        b: Vec::with_capacity(cf),
        d: Vec::with_capacity(cf),
    };
    for (k, raw) in actions.steps().iter().enumerate() {
        let u = activate_kbm(*raw, cfg)?;
        let j = step_kbm_jacobian(&states[k], &u, cfg);
        rec.a.push(j.a_state);
        rec.b.push(j.b_ctrl);
        rec.d.push(activation_jacobian(*raw, cfg.a_max, cfg.delta_max));
    }
    Ok(rec)
}

fn record_ccpp(
    actions: &RawActionSequence,
    s: &InitialState,
    cfg: &LiftConfig,
) -> Result<Recorded<5>> {
    let states = rollout_ccpp_states(actions, s, cfg)?;
    let cf = actions.len();
    let mut rec = Recorded {
        a: Vec::with_capacity(cf),
        b: Vec::with_capacity(cf),
        d: Vec::with_capacity(cf),
    };
    for (k, raw) in actions.steps().iter().enumerate() {
        let u = activate_ccpp(*raw, cfg)?;
        let j = step_ccpp_jacobian(&states[k], &u, cfg);
        rec.a.push(j.a_state);
        rec.b.push(j.b_ctrl);
        rec.d.push(activation_jacobian(*raw, cfg.a_max, cfg.sharpness_max));
    }
    Ok(rec)
}

/// Dense assembly: for each waypoint, walk the recorded chain backwards,
/// multiplying the running pose row-vector into each step's control block.
fn assemble<const N: usize>(rec: &Recorded<N>) -> Jacobian {
    let cf = rec.a.len();
    let mut jac = Jacobian::zeros(cf);
    for wp in 1..=cf {
        // rows of h: d(x, y)/d(state) — the planar readout
        let mut p = [[0.0; N]; 2];
        p[0][0] = 1.0;
        p[1][1] = 1.0;
        for k in (0..wp).rev() {
            // (2xN)(Nx2) -> 2x2
            let mut pb = [[0.0; 2]; 2];
            for (r, p_row) in p.iter().enumerate() {
                for c in 0..2 {
                    pb[r][c] = (0..N).map(|i| p_row[i] * rec.b[k][i][c]).sum();
                }
            }
            // (2x2)(2x3) -> 2x3
            for (r, pb_row) in pb.iter().enumerate() {
                for c in 0..3 {
                    let val = pb_row[0] * rec.d[k][0][c] + pb_row[1] * rec.d[k][1][c];
                    *jac.entry_mut((wp - 1) * 2 + r, k * 3 + c) = val;
                }
            }
            // p <- p * A_k
            let mut next = [[0.0; N]; 2];
            for (r, p_row) in p.iter().enumerate() {
                for c in 0..N {
                    next[r][c] = (0..N).map(|i| p_row[i] * rec.a[k][i][c]).sum();
                }
            }
            p = next;
        }
    }
    jac
}

/// Adjoint sweep: accumulates `J^T r` without materializing the Jacobian.
/// `r` holds one (x, y) cotangent per waypoint.
fn pullback<const N: usize>(rec: &Recorded<N>, r: &[[f64; 2]]) -> Vec<[f64; 3]> {
    let cf = rec.a.len();
    let mut grad = vec![[0.0; 3]; cf];
    let mut lambda = [0.0; N];
    for k in (0..cf).rev() {
        lambda[0] += r[k][0];
        lambda[1] += r[k][1];
        // g_u = B_k^T lambda
        let mut gu = [0.0; 2];
        for c in 0..2 {
            gu[c] = (0..N).map(|i| rec.b[k][i][c] * lambda[i]).sum();
        }
        // g_a = D_k^T g_u
        for c in 0..3 {
            grad[k][c] = rec.d[k][0][c] * gu[0] + rec.d[k][1][c] * gu[1];
        }
        // lambda <- A_k^T lambda
        let mut next = [0.0; N];
        for c in 0..N {
            next[c] = (0..N).map(|i| rec.a[k][i][c] * lambda[i]).sum();
        }
        lambda = next;
    }
    grad
}

/// Exact Jacobian of the configured lift at `actions`.
pub fn lift_jacobian(
    actions: &RawActionSequence,
    s: &InitialState,
    cfg: &LiftConfig,
) -> Result<Jacobian> {
    match cfg.model {
        Model::Kbm => Ok(assemble(&record_kbm(actions, s, cfg)?)),
        Model::Ccpp => Ok(assemble(&record_ccpp(actions, s, cfg)?)),
        Model::Mlp => Err(LiftError::ModelMismatch {
            expected: "kbm or ccpp",
            actual: "mlp",
        }),
    }
}

/// Reverse sweep for an arbitrary per-waypoint (x, y) cotangent.
pub(crate) fn waypoint_pullback(
    actions: &RawActionSequence,
    s: &InitialState,
    cfg: &LiftConfig,
    r: &[[f64; 2]],
) -> Result<Vec<[f64; 3]>> {
    match cfg.model {
        Model::Kbm => Ok(pullback(&record_kbm(actions, s, cfg)?, r)),
        Model::Ccpp => Ok(pullback(&record_ccpp(actions, s, cfg)?, r)),
        Model::Mlp => Err(LiftError::ModelMismatch {
            expected: "kbm or ccpp",
            actual: "mlp",
        }),
    }
}

/// Gradient of the weighted waypoint L1 loss w.r.t. the raw actions,
/// computed by one reverse sweep. The L1 subgradient uses sign with
/// sign(0) = 0.
pub fn loss_grad(
    actions: &RawActionSequence,
    s: &InitialState,
    cfg: &LiftConfig,
    gt: &WaypointTrajectory,
    weights: &LossWeights,
) -> Result<Vec<[f64; 3]>> {
    let cf = actions.len();
    if gt.len() != cf {
        return Err(LiftError::LengthMismatch {
            left: cf,
            right: gt.len(),
        });
    }
    if weights.len() != cf {
        return Err(LiftError::LengthMismatch {
            left: cf,
            right: weights.len(),
        });
    }
    let pred = lift(actions, s, cfg)?;
    let wsum = weights.sum();
    let r: Vec<[f64; 2]> = (0..cf)
        .map(|k| {
            let w = weights.as_slice()[k] / wsum;
            let p = pred.point(k);
            let g = gt.point(k);
            [w * l1_sign(p[0] - g[0]), w * l1_sign(p[1] - g[1])]
        })
        .collect();
    waypoint_pullback(actions, s, cfg, &r)
}

/// Outcome of comparing the analytic Jacobian against central differences.
///
/// `max_rel_err` uses the guarded denominator `max(|ad|, |fd|, 1)`, i.e.
/// relative error for large entries and absolute error near zero.
#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub max_abs_err: f64,
    pub max_rel_err: f64,
    /// (row, col) of the worst relative error.
    pub worst_entry: (usize, usize),
    pub fd_step: f64,
    /// True when any clamp boundary lies within the probe: the probed
    /// rollouts saturate differently, or an update lands exactly on a bound.
    pub boundary_flag: bool,
}

fn clamp_regions(
    actions: &RawActionSequence,
    s: &InitialState,
    cfg: &LiftConfig,
) -> Result<Option<Vec<i8>>> {
    match cfg.model {
        Model::Ccpp => {
            let (_, trace) = rollout_ccpp_traced(actions, s, cfg)?;
            Ok(Some(trace.regions))
        }
        // the bicycle model has no saturations
        _ => Ok(None),
    }
}

/// Verifies [`lift_jacobian`] against central differences
/// `(F(a + h e) - F(a - h e)) / 2h`, entry by entry.
pub fn finite_diff_check(
    actions: &RawActionSequence,
    s: &InitialState,
    cfg: &LiftConfig,
    fd_step: f64,
) -> Result<GradCheckReport> {
    if !(fd_step.is_finite() && fd_step > 0.0) {
        return Err(LiftError::InvalidArgument(format!(
            "fd_step must be positive, got {fd_step}"
        )));
    }
    let jac = lift_jacobian(actions, s, cfg)?;
    let cf = actions.len();
    let mut report = GradCheckReport {
        max_abs_err: 0.0,
        max_rel_err: 0.0,
        worst_entry: (0, 0),
        fd_step,
        boundary_flag: false,
    };
    for j in 0..cf {
        for ch in 0..3 {
            let plus_a = actions.perturbed(j, ch, fd_step);
            let minus_a = actions.perturbed(j, ch, -fd_step);
            let plus = lift(&plus_a, s, cfg)?;
            let minus = lift(&minus_a, s, cfg)?;

            let rp = clamp_regions(&plus_a, s, cfg)?;
            let rm = clamp_regions(&minus_a, s, cfg)?;
            if let (Some(rp), Some(rm)) = (rp, rm) {
                if rp != rm || rp.contains(&2) || rm.contains(&2) {
                    report.boundary_flag = true;
                }
            }

            let col = j * 3 + ch;
            for k in 0..cf {
                for coord in 0..2 {
                    let row = k * 2 + coord;
                    let fd =
                        (plus.point(k)[coord] - minus.point(k)[coord]) / (2.0 * fd_step);
                    let ad = jac.entry(row, col);
                    let abs_err = (ad - fd).abs();
                    let rel_err = abs_err / ad.abs().max(fd.abs()).max(1.0);
                    if abs_err > report.max_abs_err {
                        report.max_abs_err = abs_err;
                    }
                    if rel_err > report.max_rel_err {
                        report.max_rel_err = rel_err;
                        report.worst_entry = (row, col);
                    }
                }
            }
        }
    }
    Ok(report)
}
