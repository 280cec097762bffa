//! High-resolution oracle integrator and accuracy/compute study generators.
//!
//! The oracle integrates the same piecewise-constant physical controls as the
//! candidate lift, but with RK4 at a micro step of `dt/refine` (bicycle) or
//! `ds/refine` per substep (clothoid). Errors measured against it are pure
//! discretization error, not model error.

use rayon::prelude::*;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::activation::{activate_ccpp, activate_kbm};
use crate::ccpp::{arc_increment, ccpp_speed_update, substep_rk4_ccpp, CcppPose};
use crate::config::{init_ccpp, init_kbm, LiftConfig, Model, Scheme};
use crate::error::{LiftError, Result};
use crate::kbm::step_rk4_kbm;
use crate::lift::lift;
use crate::loss::per_waypoint_error;
use crate::types::{InitialState, RawActionSequence, WaypointTrajectory};

/// Micro-step refinement used by the sweep generators. Chosen so that
/// doubling it moves the oracle by less than 1e-10 m on the evaluation
/// corpus.
pub const SWEEP_ORACLE_REFINE: u32 = 2048;

/// Converged reference rollout under the candidate's own piecewise-constant
/// controls.
pub fn oracle_rollout(
    actions: &RawActionSequence,
    s: &InitialState,
    cfg: &LiftConfig,
    refine: u32,
) -> Result<WaypointTrajectory> {
    if refine < 64 {
        return Err(LiftError::InvalidArgument(format!(
            "oracle refine must be >= 64, got {refine}"
        )));
    }
    cfg.validate()?;
    match cfg.model {
        Model::Kbm => oracle_kbm(actions, s, cfg, refine),
        Model::Ccpp => oracle_ccpp(actions, s, cfg, refine),
        Model::Mlp => Err(LiftError::ModelMismatch {
            expected: "kbm or ccpp",
            actual: "mlp",
        }),
    }
}

fn oracle_kbm(
    actions: &RawActionSequence,
    s: &InitialState,
    cfg: &LiftConfig,
    refine: u32,
) -> Result<WaypointTrajectory> {
    let h = cfg.dt / refine as f64;
    let mut z = init_kbm(s)?;
    let mut points = Vec::with_capacity(actions.len());
    let mut headings = Vec::with_capacity(actions.len());
    for raw in actions.steps() {
        let u = activate_kbm(*raw, cfg)?;
        for _ in 0..refine {
            z = step_rk4_kbm(&z, &u, h, cfg.wheelbase)?;
        }
        points.push(z.pose());
        headings.push(z.theta);
    }
    WaypointTrajectory::new(points, Some(headings))
}

fn oracle_ccpp(
    actions: &RawActionSequence,
    s: &InitialState,
    cfg: &LiftConfig,
    refine: u32,
) -> Result<WaypointTrajectory> {
    let mut z = init_ccpp(s, cfg)?;
    let mut points = Vec::with_capacity(actions.len());
    let mut headings = Vec::with_capacity(actions.len());
    for raw in actions.steps() {
        let u = activate_ccpp(*raw, cfg)?;
        let v = ccpp_speed_update(z.v, u.a_lon, cfg.dt);
        let (_, ds) = arc_increment(v, cfg.dt, cfg.n_int);
        let micro = ds / refine as f64;
        let mut p = CcppPose {
            x: z.x,
            y: z.y,
            theta: z.theta,
            kappa: z.kappa,
        };
        for _ in 0..cfg.n_int as usize * refine as usize {
            p = substep_rk4_ccpp(&p, u.sharpness, micro, cfg.kappa_max);
        }
        z.x = p.x;
        z.y = p.y;
        z.theta = p.theta;
        z.kappa = p.kappa;
        z.v = v;
        points.push([z.x, z.y]);
        headings.push(z.theta);
    }
    WaypointTrajectory::new(points, Some(headings))
}

/// Grid description for the accuracy studies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub horizons: Vec<usize>,
    /// Control intervals dt, seconds.
    pub intervals: Vec<f64>,
    /// Substep counts; applied to the clothoid model only.
    pub substeps: Vec<u32>,
    pub schemes: Vec<Scheme>,
    pub models: Vec<Model>,
    pub corpus_size: usize,
    pub rng_seed: u64,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.horizons.is_empty()
            || self.intervals.is_empty()
            || self.substeps.is_empty()
            || self.schemes.is_empty()
            || self.models.is_empty()
        {
            return Err(LiftError::InvalidArgument(
                "sweep grid lists must be non-empty".into(),
            ));
        }
        if self.corpus_size == 0 {
            return Err(LiftError::InvalidArgument(
                "corpus_size must be >= 1".into(),
            ));
        }
        if self.horizons.iter().any(|cf| *cf == 0) {
            return Err(LiftError::InvalidArgument("horizon 0 in sweep".into()));
        }
        if self
            .intervals
            .iter()
            .any(|dt| !(dt.is_finite() && *dt > 0.0))
        {
            return Err(LiftError::InvalidArgument(
                "nonpositive interval in sweep".into(),
            ));
        }
        if self.substeps.iter().any(|n| *n == 0) {
            return Err(LiftError::InvalidArgument("zero substeps in sweep".into()));
        }
        if self.models.contains(&Model::Mlp) {
            return Err(LiftError::InvalidArgument(
                "sweeps cover the analytic models only".into(),
            ));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(text)
            .map_err(|e| LiftError::InvalidArgument(format!("sweep spec JSON: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }
}

/// One aggregated error row: a (model, scheme, grid point, waypoint index)
/// cell with corpus mean/std of the oracle-relative L1 error and the
/// candidate's rhs-evaluation count as compute proxy.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorRecord {
    pub model: Model,
    pub scheme: Scheme,
    pub cf: usize,
    pub dt: f64,
    pub n_int: u32,
    /// Waypoint index, 1-based.
    pub k: usize,
    pub mean_l1: f64,
    pub std_l1: f64,
    pub rhs_evals: u64,
}

/// Candidate rhs evaluations for one full lift (the semi-implicit Euler
/// update counts as one evaluation per interval/substep).
fn candidate_rhs_evals(model: Model, scheme: Scheme, cf: usize, n_int: u32) -> u64 {
    let per_step = match scheme {
        Scheme::Euler => 1,
        Scheme::Rk4 => 4,
    };
    let substeps = match model {
        Model::Ccpp => n_int as u64,
        _ => 1,
    };
    cf as u64 * substeps * per_step
}

/// The declared synthetic corpus: i.i.d. standard-normal raw actions and
/// v0 uniform in [0, 15] m/s, zero initial curvature. Deterministic in
/// (seed, horizon).
pub fn sample_corpus(seed: u64, cf: usize, size: usize) -> Vec<(RawActionSequence, InitialState)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (cf as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    (0..size)
        .map(|_| {
            let steps = (0..cf)
                .map(|_| {
                    [
                        rng.sample(StandardNormal),
                        rng.sample(StandardNormal),
                        rng.sample(StandardNormal),
                    ]
                })
                .collect();
            let v0 = rng.gen_range(0.0..15.0);
            (
                RawActionSequence::new(steps).expect("finite by construction"),
                InitialState::new(v0, 0.0).expect("valid by construction"),
            )
        })
        .collect()
}

struct GridPoint {
    model: Model,
    dt: f64,
    n_int: u32,
    cf: usize,
}

fn grid_config(g: &GridPoint, scheme: Scheme) -> LiftConfig {
    let base = match g.model {
        Model::Ccpp => LiftConfig::ccpp_defaults(scheme),
        _ => LiftConfig::kbm_defaults(scheme),
    };
    LiftConfig {
        dt: g.dt,
        n_int: g.n_int,
        ..base
    }
}

fn sweep_grid_point(
    g: &GridPoint,
    schemes: &[Scheme],
    corpus: &[(RawActionSequence, InitialState)],
) -> Result<Vec<ErrorRecord>> {
    // one oracle per grid point, shared by both candidate schemes
    let oracle_cfg = grid_config(g, Scheme::Rk4);
    let references: Vec<WaypointTrajectory> = corpus
        .iter()
        .map(|(a, s)| oracle_rollout(a, s, &oracle_cfg, SWEEP_ORACLE_REFINE))
        .collect::<Result<_>>()?;

    let mut records = Vec::new();
    for &scheme in schemes {
        let cfg = grid_config(g, scheme);
        let profiles: Vec<Vec<f64>> = corpus
            .iter()
            .zip(&references)
            .map(|((a, s), reference)| {
                let candidate = lift(a, s, &cfg)?;
                per_waypoint_error(&candidate, reference)
            })
            .collect::<Result<_>>()?;
        let n = profiles.len() as f64;
        let rhs = candidate_rhs_evals(g.model, scheme, g.cf, g.n_int);
        for k in 0..g.cf {
            let mean = profiles.iter().map(|p| p[k]).sum::<f64>() / n;
            let var = profiles.iter().map(|p| (p[k] - mean).powi(2)).sum::<f64>() / n;
            records.push(ErrorRecord {
                model: g.model,
                scheme,
                cf: g.cf,
                dt: g.dt,
                n_int: g.n_int,
                k: k + 1,
                mean_l1: mean,
                std_l1: var.sqrt(),
                rhs_evals: rhs,
            });
        }
    }
    Ok(records)
}

/// Runs the full grid: for every (model, horizon, interval, substeps) cell,
/// lifts the fixed random corpus with each candidate scheme and aggregates
/// per-waypoint L1 error against the shared oracle. Deterministic given the
/// spec (records are sorted before emission).
pub fn run_sweep(spec: &SweepSpec) -> Result<Vec<ErrorRecord>> {
    spec.validate()?;
    let mut grid = Vec::new();
    for &cf in &spec.horizons {
        for &dt in &spec.intervals {
            for &model in &spec.models {
                match model {
                    // the bicycle model integrates one substep per interval
                    Model::Kbm => grid.push(GridPoint {
                        model,
                        dt,
                        n_int: 1,
                        cf,
                    }),
                    Model::Ccpp => {
                        for &n_int in &spec.substeps {
                            grid.push(GridPoint {
                                model,
                                dt,
                                n_int,
                                cf,
                            });
                        }
                    }
                    Model::Mlp => unreachable!("rejected by validate"),
                }
            }
        }
    }

    let corpora: Vec<(usize, Vec<(RawActionSequence, InitialState)>)> = spec
        .horizons
        .iter()
        .map(|&cf| (cf, sample_corpus(spec.rng_seed, cf, spec.corpus_size)))
        .collect();
    let corpus_for = |cf: usize| -> &[(RawActionSequence, InitialState)] {
        &corpora.iter().find(|(c, _)| *c == cf).expect("corpus exists").1
    };

    let mut records: Vec<ErrorRecord> = grid
        .par_iter()
        .map(|g| sweep_grid_point(g, &spec.schemes, corpus_for(g.cf)))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();

    // total order: model, scheme, cf, dt, n_int, k
    records.sort_by(|a, b| {
        a.model
            .to_string()
            .cmp(&b.model.to_string())
            .then(a.scheme.to_string().cmp(&b.scheme.to_string()))
            .then(a.cf.cmp(&b.cf))
            .then(a.dt.partial_cmp(&b.dt).expect("finite dt"))
            .then(a.n_int.cmp(&b.n_int))
            .then(a.k.cmp(&b.k))
    });
    Ok(records)
}

/// Substepping compute-accuracy study; the spec must be restricted to the
/// clothoid model.
pub fn pareto_substeps(spec: &SweepSpec) -> Result<Vec<ErrorRecord>> {
    spec.validate()?;
    if spec.models != vec![Model::Ccpp] {
        return Err(LiftError::InvalidArgument(
            "pareto study requires models = [ccpp]".into(),
        ));
    }
    run_sweep(spec)
}

/// CSV with header `model,scheme,cf,dt,n_int,k,mean_l1,std_l1,rhs_evals`;
/// '.' decimal, '\n' line endings, no locale dependence.
pub fn records_to_csv(records: &[ErrorRecord]) -> String {
    let mut out = String::from("model,scheme,cf,dt,n_int,k,mean_l1,std_l1,rhs_evals\n");
    for r in records {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.model, r.scheme, r.cf, r.dt, r.n_int, r.k, r.mean_l1, r.std_l1, r.rhs_evals
        ));
    }
    out
}
