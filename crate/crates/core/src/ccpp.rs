//! Continuous-curvature (clothoid) rollout with arc-length substepping.
//!
//! Speed is updated once per control interval and clamped nonnegative; the
//! travelled arc length is split into `n_int` uniform substeps over which the
//! pose/curvature ODE is integrated by Euler or RK4. Curvature is clamped to
//! the configured bound: inside the Euler update before use, after the
//! combined update for RK4.

use crate::activation::{activate_ccpp, CcppControls};
use crate::config::{init_ccpp, LiftConfig, Model, Scheme};
use crate::error::{LiftError, Result};
use crate::types::{CcppState, InitialState, RawActionSequence, WaypointTrajectory};

/// Pose-and-curvature part of the clothoid state, advanced per substep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CcppPose {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub kappa: f64,
}

fn clip(v: f64, bound: f64) -> f64 {
    v.clamp(-bound, bound)
}

/// Speed update with the nonnegativity clamp (forward motion only).
pub fn ccpp_speed_update(v: f64, a_lon: f64, dt: f64) -> f64 {
    (v + a_lon * dt).max(0.0)
}

/// Arc length travelled in one interval and its uniform substep share.
pub fn arc_increment(v_next: f64, dt: f64, n_int: u32) -> (f64, f64) {
    let total = v_next * dt;
    (total, total / n_int as f64)
}

/// Forward Euler substep in arc length. Curvature is clamped before being
/// used for the heading advance; exactly this update order.
pub fn substep_euler_ccpp(p: &CcppPose, sharpness: f64, ds: f64, kappa_max: f64) -> CcppPose {
    let kappa = clip(p.kappa + sharpness * ds, kappa_max);
    let theta = p.theta + kappa * ds;
    CcppPose {
        x: p.x + theta.cos() * ds,
        y: p.y + theta.sin() * ds,
        theta,
        kappa,
    }
}

fn field(p: &CcppPose, sharpness: f64) -> [f64; 4] {
    [p.theta.cos(), p.theta.sin(), p.kappa, sharpness]
}

fn advance(p: &CcppPose, k: &[f64; 4], h: f64) -> CcppPose {
    CcppPose {
        x: p.x + h * k[0],
        y: p.y + h * k[1],
        theta: p.theta + h * k[2],
        kappa: p.kappa + h * k[3],
    }
}

/// RK4 substep over the arc-length field `(cos theta, sin theta, kappa,
/// sharpness)`, with the curvature clamp applied after the combined update.
pub fn substep_rk4_ccpp(p: &CcppPose, sharpness: f64, ds: f64, kappa_max: f64) -> CcppPose {
    let k1 = field(p, sharpness);
    let k2 = field(&advance(p, &k1, ds / 2.0), sharpness);
    let k3 = field(&advance(p, &k2, ds / 2.0), sharpness);
    let k4 = field(&advance(p, &k3, ds), sharpness);
    let combined = CcppPose {
        x: p.x + ds / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
        y: p.y + ds / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
        theta: p.theta + ds / 6.0 * (k1[2] + 2.0 * k2[2] + 2.0 * k3[2] + k4[2]),
        kappa: p.kappa + ds / 6.0 * (k1[3] + 2.0 * k2[3] + 2.0 * k3[3] + k4[3]),
    };
    CcppPose {
        kappa: clip(combined.kappa, kappa_max),
        ..combined
    }
}

/// Clamp activity observed during a rollout, in event order: one speed event
/// per interval followed by one curvature event per substep.
///
/// Used to assert the saturation invariants and to flag finite-difference
/// probes that straddle a clamp boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct CcppTrace {
    /// Post-clamp speed after each interval update.
    pub speed_after_update: Vec<f64>,
    /// Post-clamp curvature after every substep, interval-major.
    pub kappa_after_substep: Vec<f64>,
    /// Region code per clamp event: 0 interior, +-1 clamped high/low,
    /// 2 exactly on a boundary.
    pub regions: Vec<i8>,
}

fn speed_region(preclamp: f64) -> i8 {
    if preclamp == 0.0 {
        2
    } else if preclamp < 0.0 {
        -1
    } else {
        0
    }
}

fn kappa_region(preclamp: f64, kappa_max: f64) -> i8 {
    if preclamp.abs() == kappa_max {
        2
    } else if preclamp > kappa_max {
        1
    } else if preclamp < -kappa_max {
        -1
    } else {
        0
    }
}

fn rollout_inner(
    actions: &RawActionSequence,
    s: &InitialState,
    cfg: &LiftConfig,
) -> Result<(Vec<CcppState>, CcppTrace)> {
    cfg.validate()?;
    if cfg.model != Model::Ccpp {
        return Err(LiftError::ModelMismatch {
            expected: "ccpp",
            actual: match cfg.model {
                Model::Kbm => "kbm",
                Model::Mlp => "mlp",
                Model::Ccpp => unreachable!(),
            },
        });
    }
    let cf = actions.len();
    let n_int = cfg.n_int as usize;
    let mut states = Vec::with_capacity(cf + 1);
    let mut trace = CcppTrace {
        speed_after_update: Vec::with_capacity(cf),
        kappa_after_substep: Vec::with_capacity(cf * n_int),
        regions: Vec::with_capacity(cf * (n_int + 1)),
    };
    let mut z = init_ccpp(s, cfg)?;
    states.push(z);
    for (k, raw) in actions.steps().iter().enumerate() {
        let u = activate_ccpp(*raw, cfg).map_err(|e| LiftError::StepFailed {
            step: k,
            source: Box::new(e),
        })?;
        let preclamp_v = z.v + u.a_lon * cfg.dt;
        trace.regions.push(speed_region(preclamp_v));
        let v = ccpp_speed_update(z.v, u.a_lon, cfg.dt);
        trace.speed_after_update.push(v);
        let (_, ds) = arc_increment(v, cfg.dt, cfg.n_int);
        let mut p = CcppPose {
            x: z.x,
            y: z.y,
            theta: z.theta,
            kappa: z.kappa,
        };
        for _ in 0..n_int {
            let preclamp_kappa = match cfg.scheme {
                Scheme::Euler => p.kappa + u.sharpness * ds,
                Scheme::Rk4 => {
                    let k1 = field(&p, u.sharpness);
                    let k2 = field(&advance(&p, &k1, ds / 2.0), u.sharpness);
                    let k3 = field(&advance(&p, &k2, ds / 2.0), u.sharpness);
                    let k4 = field(&advance(&p, &k3, ds), u.sharpness);
                    p.kappa + ds / 6.0 * (k1[3] + 2.0 * k2[3] + 2.0 * k3[3] + k4[3])
                }
            };
            trace.regions.push(kappa_region(preclamp_kappa, cfg.kappa_max));
            p = match cfg.scheme {
                Scheme::Euler => substep_euler_ccpp(&p, u.sharpness, ds, cfg.kappa_max),
                Scheme::Rk4 => substep_rk4_ccpp(&p, u.sharpness, ds, cfg.kappa_max),
            };
            trace.kappa_after_substep.push(p.kappa);
        }
        // terminal substep state carries to the next interval
        z = CcppState {
            x: p.x,
            y: p.y,
            theta: p.theta,
            kappa: p.kappa,
            v,
        };
        states.push(z);
    }
    Ok((states, trace))
}

/// Full state chain `z_0 .. z_{C_f}` (initial state included).
pub fn rollout_ccpp_states(
    actions: &RawActionSequence,
    s: &InitialState,
    cfg: &LiftConfig,
) -> Result<Vec<CcppState>> {
    rollout_inner(actions, s, cfg).map(|(states, _)| states)
}

/// State chain plus the clamp trace.
pub fn rollout_ccpp_traced(
    actions: &RawActionSequence,
    s: &InitialState,
    cfg: &LiftConfig,
) -> Result<(Vec<CcppState>, CcppTrace)> {
    rollout_inner(actions, s, cfg)
}

/// The clothoid lift: per interval, activation, speed update, arc-length
/// increment, `n_int` substeps of the configured scheme, planar readout.
/// Headings are the terminal substep theta per interval.
pub fn lift_ccpp(
    actions: &RawActionSequence,
    s: &InitialState,
    cfg: &LiftConfig,
) -> Result<WaypointTrajectory> {
    let states = rollout_ccpp_states(actions, s, cfg)?;
    WaypointTrajectory::new(
        states[1..].iter().map(CcppState::pose).collect(),
        Some(states[1..].iter().map(|z| z.theta).collect()),
    )
}

// ---------------------------------------------------------------------------
// Interval Jacobians (paired derivative functions)
// ---------------------------------------------------------------------------

/// d(interval)/d(state) and d(interval)/d(controls) for one control interval.
/// State order `(x, y, theta, kappa, v)`, control order `(a_lon, sharpness)`.
pub(crate) struct CcppStepJacobian {
    pub a_state: [[f64; 5]; 5],
    pub b_ctrl: [[f64; 2]; 5],
}

/// Derivative of one Euler substep w.r.t. the pose (4x4), the substep length
/// and the sharpness (4 each). Mirrors the update order of
/// [`substep_euler_ccpp`], with the clamp convention: pass-through strictly
/// inside and exactly at the bound, zero strictly outside.
fn substep_euler_partials(
    p: &CcppPose,
    sharpness: f64,
    ds: f64,
    kappa_max: f64,
) -> ([[f64; 4]; 4], [f64; 4], [f64; 4]) {
    let preclamp = p.kappa + sharpness * ds;
    let pass = if preclamp.abs() <= kappa_max { 1.0 } else { 0.0 };
    let kappa1 = clip(preclamp, kappa_max);
    let theta1 = p.theta + kappa1 * ds;
    let (sin_t, cos_t) = theta1.sin_cos();

    // kappa1 = clip(kappa + sharpness ds)
    let dk_dk = pass;
    let dk_dds = pass * sharpness;
    let dk_dsig = pass * ds;
    // theta1 = theta + kappa1 ds
    let dth_dth = 1.0;
    let dth_dk = ds * dk_dk;
    let dth_dds = ds * dk_dds + kappa1;
    let dth_dsig = ds * dk_dsig;
    // x1 = x + cos(theta1) ds ; y1 = y + sin(theta1) ds
    let dx_dth = -sin_t * ds * dth_dth;
    let dx_dk = -sin_t * ds * dth_dk;
    let dx_dds = -sin_t * ds * dth_dds + cos_t;
    let dx_dsig = -sin_t * ds * dth_dsig;
    let dy_dth = cos_t * ds * dth_dth;
    let dy_dk = cos_t * ds * dth_dk;
    let dy_dds = cos_t * ds * dth_dds + sin_t;
    let dy_dsig = cos_t * ds * dth_dsig;

    (
        [
            [1.0, 0.0, dx_dth, dx_dk],
            [0.0, 1.0, dy_dth, dy_dk],
            [0.0, 0.0, dth_dth, dth_dk],
            [0.0, 0.0, 0.0, dk_dk],
        ],
        [dx_dds, dy_dds, dth_dds, dk_dds],
        [dx_dsig, dy_dsig, dth_dsig, dk_dsig],
    )
}

fn field_partials(p: &CcppPose) -> [[f64; 4]; 4] {
    let (sin_t, cos_t) = p.theta.sin_cos();
    [
        [0.0, 0.0, -sin_t, 0.0],
        [0.0, 0.0, cos_t, 0.0],
        [0.0, 0.0, 0.0, 1.0],
        [0.0, 0.0, 0.0, 0.0],
    ]
}

fn mat4_mul(a: &[[f64; 4]; 4], b: &[[f64; 4]; 4]) -> [[f64; 4]; 4] {
    let mut out = [[0.0; 4]; 4];
    for i in 0..4 {
        for k in 0..4 {
            let aik = a[i][k];
            if aik != 0.0 {
                for j in 0..4 {
                    out[i][j] += aik * b[k][j];
                }
            }
        }
    }
    out
}

fn mat4_vec(a: &[[f64; 4]; 4], v: &[f64; 4]) -> [f64; 4] {
    let mut out = [0.0; 4];
    for i in 0..4 {
        for k in 0..4 {
            out[i] += a[i][k] * v[k];
        }
    }
    out
}

/// Derivative of one RK4 substep, stage-by-stage, with the terminal clamp
/// zeroing the curvature row when strictly outside the bound.
fn substep_rk4_partials(
    p: &CcppPose,
    sharpness: f64,
    ds: f64,
    kappa_max: f64,
) -> ([[f64; 4]; 4], [f64; 4], [f64; 4]) {
    let eye = {
        let mut m = [[0.0; 4]; 4];
        for (i, row) in m.iter_mut().enumerate() {
            row[i] = 1.0;
        }
        m
    };
    let f_sig = [0.0, 0.0, 0.0, 1.0];

    let k1 = field(p, sharpness);
    let z2 = advance(p, &k1, ds / 2.0);
    let k2 = field(&z2, sharpness);
    let z3 = advance(p, &k2, ds / 2.0);
    let k3 = field(&z3, sharpness);
    let z4 = advance(p, &k3, ds);
    let k4 = field(&z4, sharpness);

    let dk1_dp = field_partials(p);
    let dk1_dds = [0.0; 4];
    let dk1_dsig = f_sig;

    let stage = |zs: &CcppPose,
                 kprev: &[f64; 4],
                 dkprev_dp: &[[f64; 4]; 4],
                 dkprev_dds: &[f64; 4],
                 dkprev_dsig: &[f64; 4],
                 h_frac: f64|
     -> ([[f64; 4]; 4], [f64; 4], [f64; 4]) {
        // z_s = p + h_frac*ds * k_prev
        let h = h_frac * ds;
        let mut dzs_dp = eye;
        for i in 0..4 {
            for j in 0..4 {
                dzs_dp[i][j] += h * dkprev_dp[i][j];
            }
        }
        let mut dzs_dds = [0.0; 4];
        let mut dzs_dsig = [0.0; 4];
        for i in 0..4 {
            dzs_dds[i] = h_frac * kprev[i] + h * dkprev_dds[i];
            dzs_dsig[i] = h * dkprev_dsig[i];
        }
        let fz = field_partials(zs);
        let dk_dp = mat4_mul(&fz, &dzs_dp);
        let dk_dds = mat4_vec(&fz, &dzs_dds);
        let mut dk_dsig = mat4_vec(&fz, &dzs_dsig);
        for i in 0..4 {
            dk_dsig[i] += f_sig[i];
        }
        (dk_dp, dk_dds, dk_dsig)
    };

    let (dk2_dp, dk2_dds, dk2_dsig) = stage(&z2, &k1, &dk1_dp, &dk1_dds, &dk1_dsig, 0.5);
    let (dk3_dp, dk3_dds, dk3_dsig) = stage(&z3, &k2, &dk2_dp, &dk2_dds, &dk2_dsig, 0.5);
    let (dk4_dp, dk4_dds, dk4_dsig) = stage(&z4, &k3, &dk3_dp, &dk3_dds, &dk3_dsig, 1.0);

    let wsum = |a: &[f64; 4], b: &[f64; 4], c: &[f64; 4], d: &[f64; 4], i: usize| {
        a[i] + 2.0 * b[i] + 2.0 * c[i] + d[i]
    };

    let mut a_pose = eye;
    let mut b_ds = [0.0; 4];
    let mut b_sig = [0.0; 4];
    for i in 0..4 {
        for j in 0..4 {
            a_pose[i][j] += ds / 6.0
                * (dk1_dp[i][j] + 2.0 * dk2_dp[i][j] + 2.0 * dk3_dp[i][j] + dk4_dp[i][j]);
        }
        b_ds[i] = wsum(&k1, &k2, &k3, &k4, i) / 6.0
            + ds / 6.0 * wsum(&dk1_dds, &dk2_dds, &dk3_dds, &dk4_dds, i);
        b_sig[i] = ds / 6.0 * wsum(&dk1_dsig, &dk2_dsig, &dk3_dsig, &dk4_dsig, i);
    }

    // terminal clamp on the curvature row
    let preclamp = p.kappa + ds / 6.0 * wsum(&k1, &k2, &k3, &k4, 3);
    let pass = if preclamp.abs() <= kappa_max { 1.0 } else { 0.0 };
    for j in 0..4 {
        a_pose[3][j] *= pass;
    }
    b_ds[3] *= pass;
    b_sig[3] *= pass;

    (a_pose, b_ds, b_sig)
}

/// Exact derivative of one full control interval (speed update, arc-length
/// increment, substep chain) w.r.t. the incoming state and the activated
/// controls.
pub(crate) fn step_ccpp_jacobian(
    z: &CcppState,
    u: &CcppControls,
    cfg: &LiftConfig,
) -> CcppStepJacobian {
    let preclamp_v = z.v + u.a_lon * cfg.dt;
    let pass_v = if preclamp_v >= 0.0 { 1.0 } else { 0.0 };
    let v1 = preclamp_v.max(0.0);
    let (_, ds) = arc_increment(v1, cfg.dt, cfg.n_int);
    let dds_dv1 = cfg.dt / cfg.n_int as f64;

    let mut p = CcppPose {
        x: z.x,
        y: z.y,
        theta: z.theta,
        kappa: z.kappa,
    };
    let eye = {
        let mut m = [[0.0; 4]; 4];
        for (i, row) in m.iter_mut().enumerate() {
            row[i] = 1.0;
        }
        m
    };
    let mut a_pose = eye; // product of substep pose Jacobians
    let mut s_ds = [0.0; 4]; // accumulated sensitivity to the shared ds
    let mut s_sig = [0.0; 4]; // accumulated sensitivity to the shared sharpness
    for _ in 0..cfg.n_int {
        let (aj, b_ds, b_sig) = match cfg.scheme {
            Scheme::Euler => substep_euler_partials(&p, u.sharpness, ds, cfg.kappa_max),
            Scheme::Rk4 => substep_rk4_partials(&p, u.sharpness, ds, cfg.kappa_max),
        };
        let prev_ds = mat4_vec(&aj, &s_ds);
        let prev_sig = mat4_vec(&aj, &s_sig);
        for i in 0..4 {
            s_ds[i] = prev_ds[i] + b_ds[i];
            s_sig[i] = prev_sig[i] + b_sig[i];
        }
        a_pose = mat4_mul(&aj, &a_pose);
        p = match cfg.scheme {
            Scheme::Euler => substep_euler_ccpp(&p, u.sharpness, ds, cfg.kappa_max),
            Scheme::Rk4 => substep_rk4_ccpp(&p, u.sharpness, ds, cfg.kappa_max),
        };
    }

    let mut a_state = [[0.0; 5]; 5];
    let mut b_ctrl = [[0.0; 2]; 5];
    for i in 0..4 {
        for j in 0..4 {
            a_state[i][j] = a_pose[i][j];
        }
        // the pose reaches v only through ds
        a_state[i][4] = s_ds[i] * dds_dv1 * pass_v;
        b_ctrl[i][0] = s_ds[i] * dds_dv1 * pass_v * cfg.dt;
        b_ctrl[i][1] = s_sig[i];
    }
    a_state[4][4] = pass_v;
    b_ctrl[4][0] = pass_v * cfg.dt;
    CcppStepJacobian { a_state, b_ctrl }
}
