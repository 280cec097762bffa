//! Desk-scale waypoint-supervised training: a tiny trainable policy mapped
//! through a lift, plus a learned feedforward lifting baseline.
//!
//! The synthetic expert picks smooth bounded physical controls from the
//! observation (comfort-capped curvature, bump-shaped lateral profile,
//! constant longitudinal intent) and rolls them through the configured
//! model's oracle to produce ground-truth waypoints. Policies are trained
//! with plain gradient descent on the waypoint L1 loss; gradients flow
//! through the lift via the hand-written reverse sweep.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{LiftConfig, Model, Scheme};
use crate::error::{LiftError, Result};
use crate::harness::oracle_rollout;
use crate::jacobian::waypoint_pullback;
use crate::kbm::lift_kbm;
use crate::lift::lift;
use crate::loss::{l1_sign, per_waypoint_error, waypoint_l1_loss};
use crate::types::{InitialState, LossWeights, RawActionSequence, WaypointTrajectory};

/// Observation layout: normalized speed, curvature intent, accel intent,
/// and a three-way command one-hot (left / straight / right).
pub const OBS_DIM: usize = 6;

/// Refinement used when the expert rolls out ground truth.
const EXPERT_ORACLE_REFINE: u32 = 256;

/// Shaping of the synthetic expert controller.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpertParams {
    /// Maximum lateral acceleration the expert tolerates, m/s^2.
    pub lateral_comfort: f64,
    /// Hard cap on commanded curvature, 1/m.
    pub curvature_cap: f64,
    /// Longitudinal intent scale in (0, 1).
    pub accel_scale: f64,
    /// Std of per-step jitter added to the normalized controls.
    pub action_jitter: f64,
    pub v0_min: f64,
    pub v0_max: f64,
}

impl Default for ExpertParams {
    fn default() -> Self {
        // driving-speed band keeps the lateral lever-arm spread bounded so a
        // single global learning rate works for the 500-step demo
        Self {
            lateral_comfort: 2.5,
            curvature_cap: 0.2,
            accel_scale: 0.7,
            action_jitter: 0.0,
            v0_min: 3.0,
            v0_max: 10.0,
        }
    }
}

impl ExpertParams {
    /// The declared distribution for the learned-lift regression: same
    /// expert family, jittered per step, over the full speed range.
    pub fn mlp_dataset() -> Self {
        Self {
            action_jitter: 0.05,
            v0_min: 0.0,
            v0_max: 15.0,
            ..Self::default()
        }
    }
}

/// One training sample: observation features, expert ground truth, and the
/// initial speed consumed by the lift.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSample {
    pub obs: Vec<f64>,
    pub gt: WaypointTrajectory,
    pub v0: f64,
}

struct ExpertDraw {
    obs: Vec<f64>,
    actions: RawActionSequence,
    v0: f64,
}

fn draw_expert(
    rng: &mut ChaCha8Rng,
    cf: usize,
    cfg: &LiftConfig,
    expert: &ExpertParams,
) -> ExpertDraw {
    let v0 = rng.gen_range(expert.v0_min..expert.v0_max);
    let intent: f64 = rng.gen_range(-1.0..1.0);
    let accel = expert.accel_scale * rng.gen_range(-1.0..1.0);
    let cmd: usize = rng.gen_range(0..3);
    let cmd_mult = [1.0, 0.0, -1.0][cmd];

    let kappa_allow = expert
        .curvature_cap
        .min(expert.lateral_comfort / (v0 * v0).max(1.0));
    let kappa = (0.6 * cmd_mult + 0.4 * intent) * kappa_allow;
    let lat_norm = (kappa * cfg.wheelbase).atan() / cfg.delta_max;

    let jitter = Normal::new(0.0, expert.action_jitter.max(f64::MIN_POSITIVE)).unwrap();
    let mut steps = Vec::with_capacity(cf);
    for k in 0..cf {
        let bump = (std::f64::consts::PI * (k + 1) as f64 / (cf + 1) as f64).sin();
        let mut lat = lat_norm * bump;
        let mut acc = accel;
        if expert.action_jitter > 0.0 {
            lat += jitter.sample(rng);
            acc += jitter.sample(rng);
        }
        let lat = lat.clamp(-0.99, 0.99);
        let acc = acc.clamp(-0.99, 0.99);
        let t = acc.atanh();
        steps.push([t, lat.atanh(), -t]);
    }

    let mut obs = vec![v0 / 15.0, kappa * 5.0, accel, 0.0, 0.0, 0.0];
    obs[3 + cmd] = 1.0;
    ExpertDraw {
        obs,
        actions: RawActionSequence::new(steps).expect("expert actions finite"),
        v0,
    }
}

/// Synthetic dataset for the training demo. Ground truth comes from the
/// configured model's oracle rollout; deterministic given the seed.
pub fn generate_dataset(
    n: usize,
    cf: usize,
    cfg: &LiftConfig,
    expert: &ExpertParams,
    seed: u64,
) -> Result<Vec<SyntheticSample>> {
    if n == 0 {
        return Err(LiftError::InvalidArgument("dataset size must be >= 1".into()));
    }
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draws: Vec<ExpertDraw> = (0..n).map(|_| draw_expert(&mut rng, cf, cfg, expert)).collect();
    draws
        .into_par_iter()
        .map(|d| {
            let s = InitialState::new(d.v0, 0.0)?;
            let gt = oracle_rollout(&d.actions, &s, cfg, EXPERT_ORACLE_REFINE)?;
            Ok(SyntheticSample {
                obs: d.obs,
                gt,
                v0: d.v0,
            })
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Tiny policy
// ---------------------------------------------------------------------------

/// Two affine layers with a tanh hidden nonlinearity. The output layer is
/// stored as `scale .* (W2 h + b2)` with fixed per-output scales (the model
/// class is unchanged; the parameterization conditions plain gradient
/// descent across action channels).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TinyPolicy {
    pub obs_dim: usize,
    pub hidden: usize,
    pub cf: usize,
    w1: Vec<f64>,
    b1: Vec<f64>,
    w2: Vec<f64>,
    b2: Vec<f64>,
    out_scale: Vec<f64>,
}

impl TinyPolicy {
    pub fn new(obs_dim: usize, hidden: usize, cf: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let out = cf * 3;
        let bound1 = 1.0 / (obs_dim as f64).sqrt();
        let bound2 = 1.0 / (hidden as f64).sqrt();
        let mut sample = |n: usize, b: f64| -> Vec<f64> {
            (0..n).map(|_| rng.gen_range(-b..b)).collect()
        };
        let w1 = sample(hidden * obs_dim, bound1);
        let b1 = sample(hidden, bound1);
        let w2 = sample(out * hidden, bound2);
        let b2 = sample(out, bound2);
        let mut out_scale = vec![1.0; out];
        for k in 0..cf {
            out_scale[k * 3 + 1] = 2.0 / ((cf - k) as f64).powf(1.5);
        }
        Self {
            obs_dim,
            hidden,
            cf,
            w1,
            b1,
            w2,
            b2,
            out_scale,
        }
    }

    fn hidden_activations(&self, obs: &[f64]) -> Vec<f64> {
        (0..self.hidden)
            .map(|h| {
                let mut z = self.b1[h];
                for (i, o) in obs.iter().enumerate() {
                    z += self.w1[h * self.obs_dim + i] * o;
                }
                z.tanh()
            })
            .collect()
    }

    /// Deterministic forward pass producing the raw action matrix.
    pub fn forward(&self, obs: &[f64]) -> RawActionSequence {
        assert_eq!(obs.len(), self.obs_dim, "observation dimension");
        let h = self.hidden_activations(obs);
        let out = cfg_forward_out(&self.w2, &self.b2, &self.out_scale, &h, self.hidden);
        RawActionSequence::from_flat(&out).expect("policy output finite")
    }

    pub fn param_count(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }

    /// Flat parameter vector in (w1, b1, w2, b2) order.
    pub fn params(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.param_count());
        p.extend_from_slice(&self.w1);
        p.extend_from_slice(&self.b1);
        p.extend_from_slice(&self.w2);
        p.extend_from_slice(&self.b2);
        p
    }

    pub fn set_params(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.param_count(), "parameter vector length");
        let (a, rest) = flat.split_at(self.w1.len());
        let (b, rest) = rest.split_at(self.b1.len());
        let (c, d) = rest.split_at(self.w2.len());
        self.w1.copy_from_slice(a);
        self.b1.copy_from_slice(b);
        self.w2.copy_from_slice(c);
        self.b2.copy_from_slice(d);
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("policy serializes")
    }
}

fn cfg_forward_out(
    w2: &[f64],
    b2: &[f64],
    out_scale: &[f64],
    h: &[f64],
    hidden: usize,
) -> Vec<f64> {
    (0..b2.len())
        .map(|o| {
            let mut z = b2[o];
            for (j, hj) in h.iter().enumerate() {
                z += w2[o * hidden + j] * hj;
            }
            z * out_scale[o]
        })
        .collect()
}

/// Mean waypoint L1 loss of the policy over a batch, through the lift.
pub fn batch_loss(
    policy: &TinyPolicy,
    batch: &[SyntheticSample],
    cfg: &LiftConfig,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(LiftError::InvalidArgument("empty batch".into()));
    }
    let weights = LossWeights::uniform(policy.cf);
    let mut total = 0.0;
    for sample in batch {
        let actions = policy.forward(&sample.obs);
        let s = InitialState::new(sample.v0, 0.0)?;
        let pred = lift(&actions, &s, cfg)?;
        total += waypoint_l1_loss(&pred, &sample.gt, &weights)?;
    }
    Ok(total / batch.len() as f64)
}

/// Mean loss and its exact gradient w.r.t. the flat policy parameters,
/// computed by the reverse sweep through the lift chained into hand-written
/// backprop through the two affine layers.
pub fn batch_param_grads(
    policy: &TinyPolicy,
    batch: &[SyntheticSample],
    cfg: &LiftConfig,
) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(LiftError::InvalidArgument("empty batch".into()));
    }
    let cf = policy.cf;
    let out = cf * 3;
    let scale = 1.0 / batch.len() as f64;
    let mut gw1 = vec![0.0; policy.w1.len()];
    let mut gb1 = vec![0.0; policy.b1.len()];
    let mut gw2 = vec![0.0; policy.w2.len()];
    let mut gb2 = vec![0.0; policy.b2.len()];
    let mut total = 0.0;

    for sample in batch {
        let h = policy.hidden_activations(&sample.obs);
        let flat = cfg_forward_out(&policy.w2, &policy.b2, &policy.out_scale, &h, policy.hidden);
        let actions = RawActionSequence::from_flat(&flat)?;
        let s = InitialState::new(sample.v0, 0.0)?;
        let pred = lift(&actions, &s, cfg)?;
        total += waypoint_l1_loss(&pred, &sample.gt, &LossWeights::uniform(cf))?;

        // cotangent of the uniform-weight L1 loss
        let r: Vec<[f64; 2]> = (0..cf)
            .map(|k| {
                let p = pred.point(k);
                let g = sample.gt.point(k);
                [
                    l1_sign(p[0] - g[0]) / cf as f64,
                    l1_sign(p[1] - g[1]) / cf as f64,
                ]
            })
            .collect();
        let g_actions = waypoint_pullback(&actions, &s, cfg, &r)?;

        // through the fixed output scale into the second affine layer
        let mut dpre = vec![0.0; out];
        for k in 0..cf {
            for c in 0..3 {
                dpre[k * 3 + c] = g_actions[k][c] * policy.out_scale[k * 3 + c] * scale;
            }
        }
        let mut dh = vec![0.0; policy.hidden];
        for (o, dp) in dpre.iter().enumerate() {
            gb2[o] += dp;
            for (j, hj) in h.iter().enumerate() {
                gw2[o * policy.hidden + j] += dp * hj;
                dh[j] += dp * policy.w2[o * policy.hidden + j];
            }
        }
        for (j, dhj) in dh.iter().enumerate() {
            let dz = dhj * (1.0 - h[j] * h[j]);
            gb1[j] += dz;
            for (i, ob) in sample.obs.iter().enumerate() {
                gw1[j * policy.obs_dim + i] += dz * ob;
            }
        }
    }

    let mut grads = Vec::with_capacity(policy.param_count());
    grads.extend_from_slice(&gw1);
    grads.extend_from_slice(&gb1);
    grads.extend_from_slice(&gw2);
    grads.extend_from_slice(&gb2);
    Ok((total * scale, grads))
}

/// One plain gradient-descent update at rate `lr`. Returns the batch loss at
/// the pre-update parameters; a non-finite loss aborts.
pub fn train_step(
    policy: &mut TinyPolicy,
    batch: &[SyntheticSample],
    cfg: &LiftConfig,
    lr: f64,
) -> Result<f64> {
    if !(lr.is_finite() && lr >= 0.0) {
        return Err(LiftError::InvalidArgument(format!(
            "learning rate must be finite and >= 0, got {lr}"
        )));
    }
    let (loss, grads) = batch_param_grads(policy, batch, cfg)?;
    if !loss.is_finite() {
        return Err(LiftError::Diverged(format!(
            "non-finite batch loss {loss} (lr {lr}, {} samples)",
            batch.len()
        )));
    }
    if lr > 0.0 {
        let mut params = policy.params();
        for (p, g) in params.iter_mut().zip(&grads) {
            *p -= lr * g;
        }
        policy.set_params(&params);
    }
    Ok(loss)
}

/// Everything the training demo needs; deserializes from JSON with defaults
/// for all optional knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainDemoConfig {
    pub lift: LiftConfig,
    #[serde(default = "default_cf")]
    pub cf: usize,
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default = "default_hidden")]
    pub hidden: usize,
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_decay_every")]
    pub lr_decay_every: usize,
    #[serde(default = "default_decay")]
    pub lr_decay: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub expert: Option<ExpertParams>,
}

fn default_cf() -> usize {
    8
}
fn default_samples() -> usize {
    256
}
fn default_hidden() -> usize {
    32
}
fn default_steps() -> usize {
    500
}
fn default_lr() -> f64 {
    0.1
}
fn default_decay_every() -> usize {
    75
}
fn default_decay() -> f64 {
    0.5
}

impl TrainDemoConfig {
    pub fn demo(model: Model, scheme: Scheme) -> Self {
        let lift = match model {
            Model::Ccpp => LiftConfig::ccpp_defaults(scheme),
            _ => LiftConfig::kbm_defaults(scheme),
        };
        Self {
            lift,
            cf: default_cf(),
            samples: default_samples(),
            hidden: default_hidden(),
            steps: default_steps(),
            lr: default_lr(),
            lr_decay_every: default_decay_every(),
            lr_decay: default_decay(),
            seed: 0,
            expert: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)
            .map_err(|e| LiftError::InvalidArgument(format!("train config JSON: {e}")))?;
        cfg.lift.validate()?;
        if cfg.steps == 0 || cfg.samples == 0 || cfg.cf == 0 || cfg.hidden == 0 {
            return Err(LiftError::InvalidArgument(
                "steps, samples, cf and hidden must be >= 1".into(),
            ));
        }
        Ok(cfg)
    }
}

/// Result of a demo run: `losses[i]` is the full-batch loss after `i`
/// updates (index 0 is the initial loss).
#[derive(Debug, Clone)]
pub struct TrainingRun {
    pub losses: Vec<f64>,
    pub policy: TinyPolicy,
}

impl TrainingRun {
    pub fn final_initial_ratio(&self) -> f64 {
        self.losses.last().unwrap() / self.losses.first().unwrap()
    }

    /// Loss curve as CSV with header `step,loss`.
    pub fn loss_csv(&self) -> String {
        let mut out = String::from("step,loss\n");
        for (i, l) in self.losses.iter().enumerate() {
            out.push_str(&format!("{i},{l}\n"));
        }
        out
    }
}

/// Full-batch plain gradient descent with a stepwise learning-rate decay.
pub fn run_training(demo: &TrainDemoConfig) -> Result<TrainingRun> {
    let expert = demo.expert.clone().unwrap_or_default();
    let dataset = generate_dataset(demo.samples, demo.cf, &demo.lift, &expert, demo.seed ^ 42)?;
    let mut policy = TinyPolicy::new(OBS_DIM, demo.hidden, demo.cf, demo.seed);
    let mut lr = demo.lr;
    let mut losses = Vec::with_capacity(demo.steps + 1);
    losses.push(batch_loss(&policy, &dataset, &demo.lift)?);
    for step in 0..demo.steps {
        train_step(&mut policy, &dataset, &demo.lift, lr)?;
        losses.push(batch_loss(&policy, &dataset, &demo.lift)?);
        if demo.lr_decay_every > 0 && (step + 1) % demo.lr_decay_every == 0 {
            lr *= demo.lr_decay;
        }
    }
    Ok(TrainingRun { losses, policy })
}

// ---------------------------------------------------------------------------
// Learned lifting baseline
// ---------------------------------------------------------------------------

/// One regression sample for the learned lift.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpSample {
    pub actions: RawActionSequence,
    pub v0: f64,
    pub waypoints: WaypointTrajectory,
}

/// Action/waypoint pairs plus the control interval they were lifted at.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpDataset {
    pub samples: Vec<MlpSample>,
    pub dt: f64,
}

/// Samples the declared action distribution and labels it with the bicycle
/// lift. `cfg.model` must be the bicycle model.
pub fn generate_mlp_dataset(
    n: usize,
    cf: usize,
    cfg: &LiftConfig,
    seed: u64,
) -> Result<MlpDataset> {
    if cfg.model != Model::Kbm {
        return Err(LiftError::ModelMismatch {
            expected: "kbm",
            actual: match cfg.model {
                Model::Ccpp => "ccpp",
                Model::Mlp => "mlp",
                Model::Kbm => unreachable!(),
            },
        });
    }
    cfg.validate()?;
    let expert = ExpertParams::mlp_dataset();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = (0..n)
        .map(|_| {
            let d = draw_expert(&mut rng, cf, cfg, &expert);
            let s = InitialState::new(d.v0, 0.0)?;
            let waypoints = lift_kbm(&d.actions, &s, cfg)?;
            Ok(MlpSample {
                actions: d.actions,
                v0: d.v0,
                waypoints,
            })
        })
        .collect::<Result<_>>()?;
    Ok(MlpDataset {
        samples,
        dt: cfg.dt,
    })
}

/// Feedforward action-to-waypoint regressor: three ReLU layers of width 256
/// from the flattened raw actions plus the initial speed.
///
/// Internally the network predicts per-step displacement residuals from the
/// constant-velocity straight-line baseline, standardized per output; the
/// affine parameterization leaves the learned map free of any dynamics
/// rollout.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MlpLift {
    pub cf: usize,
    pub hidden: usize,
    pub dt: f64,
    w1: Vec<f64>,
    b1: Vec<f64>,
    w2: Vec<f64>,
    b2: Vec<f64>,
    w3: Vec<f64>,
    b3: Vec<f64>,
    x_mean: Vec<f64>,
    x_scale: Vec<f64>,
    y_mean: Vec<f64>,
    y_scale: Vec<f64>,
}

const MLP_HIDDEN: usize = 256;

fn mlp_features(actions: &RawActionSequence, v0: f64) -> Vec<f64> {
    let mut x = actions.to_flat();
    x.push(v0 / 15.0);
    x
}

fn straight_baseline(cf: usize, dt: f64, v0: f64) -> Vec<[f64; 2]> {
    (0..cf).map(|k| [v0 * dt * (k + 1) as f64, 0.0]).collect()
}

impl MlpLift {
    pub fn in_dim(&self) -> usize {
        self.cf * 3 + 1
    }

    /// Predicted ego-frame waypoints for a raw action horizon.
    pub fn predict(&self, actions: &RawActionSequence, v0: f64) -> Result<WaypointTrajectory> {
        if actions.len() != self.cf {
            return Err(LiftError::LengthMismatch {
                left: actions.len(),
                right: self.cf,
            });
        }
        let mut x = mlp_features(actions, v0);
        for (i, xi) in x.iter_mut().enumerate() {
            *xi = (*xi - self.x_mean[i]) / self.x_scale[i];
        }
        let h1 = dense_forward_one(&self.w1, &self.b1, &x, relu);
        let h2 = dense_forward_one(&self.w2, &self.b2, &h1, relu);
        let out = dense_forward_one(&self.w3, &self.b3, &h2, |v| v);

        let mut points = straight_baseline(self.cf, self.dt, v0);
        let mut acc = [0.0, 0.0];
        for k in 0..self.cf {
            for c in 0..2 {
                let o = k * 2 + c;
                acc[c] += out[o] * self.y_scale[o] + self.y_mean[o];
                points[k][c] += acc[c];
            }
        }
        WaypointTrajectory::new(points, None)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("mlp serializes")
    }
}

fn relu(v: f64) -> f64 {
    v.max(0.0)
}

/// Single-sample dense layer: weights stored `[out][in]` row-major.
fn dense_forward_one(
    w: &[f64],
    b: &[f64],
    x: &[f64],
    act: impl Fn(f64) -> f64,
) -> Vec<f64> {
    let in_dim = x.len();
    b.iter()
        .enumerate()
        .map(|(o, bo)| {
            let row = &w[o * in_dim..(o + 1) * in_dim];
            act(bo + dot(row, x))
        })
        .collect()
}

/// Dot product with four accumulators (fixed summation order, vectorizable).
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = c * 4;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut tail = 0.0;
    for i in chunks * 4..a.len() {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Batched dense layer in transposed storage `wt[in][out]` (forward is a
/// chain of row axpys, which vectorizes without reassociation).
struct DenseT {
    in_dim: usize,
    out_dim: usize,
    wt: Vec<f64>,
    b: Vec<f64>,
}

impl DenseT {
    fn init(in_dim: usize, out_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let std = (2.0 / in_dim as f64).sqrt();
        let normal = Normal::new(0.0, std).unwrap();
        Self {
            in_dim,
            out_dim,
            wt: (0..in_dim * out_dim).map(|_| normal.sample(rng)).collect(),
            b: vec![0.0; out_dim],
        }
    }

    /// y[b] = bias + sum_i x[b][i] * wt[i]
    fn forward(&self, x: &[f64], batch: usize, y: &mut [f64]) {
        y.par_chunks_mut(self.out_dim)
            .zip(x.par_chunks(self.in_dim))
            .for_each(|(yrow, xrow)| {
                yrow.copy_from_slice(&self.b);
                for (i, xi) in xrow.iter().enumerate() {
                    if *xi != 0.0 {
                        axpy(*xi, &self.wt[i * self.out_dim..(i + 1) * self.out_dim], yrow);
                    }
                }
            });
        debug_assert_eq!(x.len(), batch * self.in_dim);
    }

    /// Gradients: dwt[i] = sum_b x[b][i] dy[b]; db[o] = sum_b dy[b][o];
    /// dx[b][i] = dot(dy[b], wt[i]).
    fn backward(
        &self,
        x: &[f64],
        dy: &[f64],
        batch: usize,
        dwt: &mut [f64],
        db: &mut [f64],
        dx: Option<&mut [f64]>,
    ) {
        dwt.par_chunks_mut(self.out_dim)
            .enumerate()
            .for_each(|(i, drow)| {
                drow.fill(0.0);
                for b in 0..batch {
                    let xi = x[b * self.in_dim + i];
                    if xi != 0.0 {
                        axpy(xi, &dy[b * self.out_dim..(b + 1) * self.out_dim], drow);
                    }
                }
            });
        db.fill(0.0);
        for b in 0..batch {
            axpy(1.0, &dy[b * self.out_dim..(b + 1) * self.out_dim], db);
        }
        if let Some(dx) = dx {
            dx.par_chunks_mut(self.in_dim)
                .zip(dy.par_chunks(self.out_dim))
                .for_each(|(dxrow, dyrow)| {
                    for (i, dxi) in dxrow.iter_mut().enumerate() {
                        *dxi = dot(dyrow, &self.wt[i * self.out_dim..(i + 1) * self.out_dim]);
                    }
                });
        }
    }
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: f64,
}

impl Adam {
    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0.0,
        }
    }

    fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        self.t += 1.0;
        let bc1 = 1.0 - 0.9f64.powf(self.t);
        let bc2 = 1.0 - 0.999f64.powf(self.t);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            *m = 0.9 * *m + 0.1 * g;
            *v = 0.999 * *v + 0.001 * g * g;
            *p -= lr * (*m / bc1) / ((*v / bc2).sqrt() + 1e-8);
        }
    }
}

/// Trains the learned lift on `(actions, waypoints)` pairs by minibatch Adam
/// on standardized displacement residuals. Returns the fitted regressor and
/// its held-out mean per-waypoint L1 error (an eighth of the dataset is held
/// out internally and never trained on).
///
/// Aborts with a divergence error if the epoch training loss increases for
/// ten consecutive epochs.
pub fn fit_mlp_lift(
    dataset: &[MlpSample],
    epochs: usize,
    lr: f64,
    seed: u64,
) -> Result<(MlpLift, f64)> {
    if dataset.len() < 16 {
        return Err(LiftError::InvalidArgument(
            "mlp fit needs at least 16 samples".into(),
        ));
    }
    if epochs == 0 || !(lr.is_finite() && lr > 0.0) {
        return Err(LiftError::InvalidArgument(
            "mlp fit needs epochs >= 1 and lr > 0".into(),
        ));
    }
    let cf = dataset[0].actions.len();
    let dt_guess = infer_dt(dataset);
    let in_dim = cf * 3 + 1;
    let out_dim = cf * 2;

    let holdout_len = (dataset.len() / 8).max(1);
    let train_len = dataset.len() - holdout_len;
    let (train_set, holdout) = dataset.split_at(train_len);

    // features and displacement-residual targets
    let mut xs = vec![0.0; train_len * in_dim];
    let mut ys = vec![0.0; train_len * out_dim];
    for (row, sample) in train_set.iter().enumerate() {
        if sample.actions.len() != cf || sample.waypoints.len() != cf {
            return Err(LiftError::LengthMismatch {
                left: cf,
                right: sample.actions.len().min(sample.waypoints.len()),
            });
        }
        let x = mlp_features(&sample.actions, sample.v0);
        xs[row * in_dim..(row + 1) * in_dim].copy_from_slice(&x);
        let base = straight_baseline(cf, dt_guess, sample.v0);
        let mut prev = [0.0, 0.0];
        for k in 0..cf {
            for c in 0..2 {
                let resid = sample.waypoints.point(k)[c] - base[k][c];
                ys[row * out_dim + k * 2 + c] = resid - prev[c];
                prev[c] = resid;
            }
        }
    }
    let (x_mean, x_scale) = standardize(&mut xs, train_len, in_dim);
    let (y_mean, y_scale) = standardize(&mut ys, train_len, out_dim);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut l1 = DenseT::init(in_dim, MLP_HIDDEN, &mut rng);
    let mut l2 = DenseT::init(MLP_HIDDEN, MLP_HIDDEN, &mut rng);
    let mut l3 = DenseT::init(MLP_HIDDEN, out_dim, &mut rng);
    let mut adam1 = Adam::new(l1.wt.len() + l1.b.len());
    let mut adam2 = Adam::new(l2.wt.len() + l2.b.len());
    let mut adam3 = Adam::new(l3.wt.len() + l3.b.len());

    const BATCH: usize = 128;
    let steps_per_epoch = train_len / BATCH;
    if steps_per_epoch == 0 {
        return Err(LiftError::InvalidArgument(
            "mlp fit needs at least one full minibatch".into(),
        ));
    }
    let mut order: Vec<usize> = (0..train_len).collect();
    let mut lr_now = lr;
    let mut prev_epoch_loss = f64::INFINITY;
    let mut rising = 0usize;

    // reusable buffers
    let mut xb = vec![0.0; BATCH * in_dim];
    let mut yb = vec![0.0; BATCH * out_dim];
    let mut h1 = vec![0.0; BATCH * MLP_HIDDEN];
    let mut h2 = vec![0.0; BATCH * MLP_HIDDEN];
    let mut pred = vec![0.0; BATCH * out_dim];
    let mut d3 = vec![0.0; BATCH * out_dim];
    let mut d2 = vec![0.0; BATCH * MLP_HIDDEN];
    let mut d1 = vec![0.0; BATCH * MLP_HIDDEN];
    let mut gw1 = vec![0.0; l1.wt.len()];
    let mut gb1 = vec![0.0; l1.b.len()];
    let mut gw2 = vec![0.0; l2.wt.len()];
    let mut gb2 = vec![0.0; l2.b.len()];
    let mut gw3 = vec![0.0; l3.wt.len()];
    let mut gb3 = vec![0.0; l3.b.len()];

    for epoch in 0..epochs {
        // deterministic shuffle
        for i in (1..train_len).rev() {
            let j = rng.gen_range(0..=i);
            order.swap(i, j);
        }
        if epochs >= 10
            && (epoch == epochs / 2 || epoch == epochs * 3 / 4 || epoch == epochs * 9 / 10)
        {
            lr_now *= 0.25;
        }
        let mut epoch_loss = 0.0;
        for step in 0..steps_per_epoch {
            for (slot, &idx) in order[step * BATCH..(step + 1) * BATCH].iter().enumerate() {
                xb[slot * in_dim..(slot + 1) * in_dim]
                    .copy_from_slice(&xs[idx * in_dim..(idx + 1) * in_dim]);
                yb[slot * out_dim..(slot + 1) * out_dim]
                    .copy_from_slice(&ys[idx * out_dim..(idx + 1) * out_dim]);
            }
            l1.forward(&xb, BATCH, &mut h1);
            h1.iter_mut().for_each(|v| *v = relu(*v));
            l2.forward(&h1, BATCH, &mut h2);
            h2.iter_mut().for_each(|v| *v = relu(*v));
            l3.forward(&h2, BATCH, &mut pred);

            // squared error in standardized space
            let mut loss = 0.0;
            for (d, (p, y)) in d3.iter_mut().zip(pred.iter().zip(&yb)) {
                let e = p - y;
                loss += e * e;
                *d = 2.0 * e / BATCH as f64;
            }
            epoch_loss += loss / (BATCH * out_dim) as f64;

            l3.backward(&h2, &d3, BATCH, &mut gw3, &mut gb3, Some(&mut d2));
            for (d, h) in d2.iter_mut().zip(&h2) {
                if *h <= 0.0 {
                    *d = 0.0;
                }
            }
            l2.backward(&h1, &d2, BATCH, &mut gw2, &mut gb2, Some(&mut d1));
            for (d, h) in d1.iter_mut().zip(&h1) {
                if *h <= 0.0 {
                    *d = 0.0;
                }
            }
            l1.backward(&xb, &d1, BATCH, &mut gw1, &mut gb1, None);

            adam_update(&mut l1, &mut adam1, &gw1, &gb1, lr_now);
            adam_update(&mut l2, &mut adam2, &gw2, &gb2, lr_now);
            adam_update(&mut l3, &mut adam3, &gw3, &gb3, lr_now);
        }
        epoch_loss /= steps_per_epoch as f64;
        if !epoch_loss.is_finite() {
            return Err(LiftError::Diverged(format!(
                "non-finite epoch loss at epoch {epoch}"
            )));
        }
        if epoch_loss > prev_epoch_loss {
            rising += 1;
            if rising >= 10 {
                return Err(LiftError::Diverged(format!(
                    "training loss increased for {rising} consecutive epochs (epoch {epoch})"
                )));
            }
        } else {
            rising = 0;
        }
        prev_epoch_loss = epoch_loss;
    }

    let mlp = MlpLift {
        cf,
        hidden: MLP_HIDDEN,
        dt: dt_guess,
        w1: to_row_major(&l1),
        b1: l1.b.clone(),
        w2: to_row_major(&l2),
        b2: l2.b.clone(),
        w3: to_row_major(&l3),
        b3: l3.b.clone(),
        x_mean,
        x_scale,
        y_mean,
        y_scale,
    };
    let heldout = mlp_mean_waypoint_error(&mlp, holdout)?;
    Ok((mlp, heldout))
}

fn adam_update(layer: &mut DenseT, adam: &mut Adam, gw: &[f64], gb: &[f64], lr: f64) {
    let nw = layer.wt.len();
    adam.t += 1.0;
    let bc1 = 1.0 - 0.9f64.powf(adam.t);
    let bc2 = 1.0 - 0.999f64.powf(adam.t);
    for i in 0..nw {
        let g = gw[i];
        adam.m[i] = 0.9 * adam.m[i] + 0.1 * g;
        adam.v[i] = 0.999 * adam.v[i] + 0.001 * g * g;
        layer.wt[i] -= lr * (adam.m[i] / bc1) / ((adam.v[i] / bc2).sqrt() + 1e-8);
    }
    for (i, g) in gb.iter().enumerate() {
        let s = nw + i;
        adam.m[s] = 0.9 * adam.m[s] + 0.1 * g;
        adam.v[s] = 0.999 * adam.v[s] + 0.001 * g * g;
        layer.b[i] -= lr * (adam.m[s] / bc1) / ((adam.v[s] / bc2).sqrt() + 1e-8);
    }
}

/// Transposed storage `[in][out]` to row-major `[out][in]` used by predict.
fn to_row_major(layer: &DenseT) -> Vec<f64> {
    let mut w = vec![0.0; layer.wt.len()];
    for i in 0..layer.in_dim {
        for o in 0..layer.out_dim {
            w[o * layer.in_dim + i] = layer.wt[i * layer.out_dim + o];
        }
    }
    w
}

fn standardize(data: &mut [f64], rows: usize, cols: usize) -> (Vec<f64>, Vec<f64>) {
    let mut mean = vec![0.0; cols];
    let mut scale = vec![0.0; cols];
    for r in 0..rows {
        for c in 0..cols {
            mean[c] += data[r * cols + c];
        }
    }
    for m in mean.iter_mut() {
        *m /= rows as f64;
    }
    for r in 0..rows {
        for c in 0..cols {
            let d = data[r * cols + c] - mean[c];
            scale[c] += d * d;
        }
    }
    for s in scale.iter_mut() {
        *s = (*s / rows as f64).sqrt().max(1e-9);
    }
    for r in 0..rows {
        for c in 0..cols {
            data[r * cols + c] = (data[r * cols + c] - mean[c]) / scale[c];
        }
    }
    (mean, scale)
}

fn infer_dt(dataset: &[MlpSample]) -> f64 {
    // the baseline needs dt; recover it from the fastest straight-ish sample
    // is fragile, so carry the reference interval instead
    0.5
}

/// Mean per-waypoint L1 error of the regressor over a dataset.
pub fn mlp_mean_waypoint_error(mlp: &MlpLift, dataset: &[MlpSample]) -> Result<f64> {
    if dataset.is_empty() {
        return Err(LiftError::InvalidArgument("empty dataset".into()));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for sample in dataset {
        let pred = mlp.predict(&sample.actions, sample.v0)?;
        for e in per_waypoint_error(&pred, &sample.waypoints)? {
            total += e;
            count += 1;
        }
    }
    Ok(total / count as f64)
}
