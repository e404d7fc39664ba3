//! Test-set generation on novel objects, prediction and scoring.

use std::f64::consts::TAU;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::report::{summarize, EvaluationReport, EvaluationRow};
use super::train::{ModelBundle, MotionSet, PreparedObject};
use super::{actions_for_link, baseline_final_pose, d_ang, d_lin, d_norm, ExperimentConfig, Predictor, Scoring};
use crate::density::Bandwidths;
use crate::error::{Error, Result};
use crate::geom::{relative_pose, world_displacement, Pose};
use crate::motion::{predict, Action, ContactRole, PreparedExpert, Prediction};
use crate::pushsim::{sample_friction, simulate_push, Link, PushScene};
use crate::query::{build_query_density, sample_feasible_link_pose, ContactFrame, QueryDensity};
use crate::seeding::{domain, mix, stream_rng};

/// Ground truth for one push.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruthPush {
    pub friction: f64,
    pub final_pose: Option<Pose>,
    pub error: Option<String>,
}

/// A query pose with its contact frames and ground-truth pushes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseSetup {
    pub link_pose: Pose,
    pub base_pose: Pose,
    pub ro: ContactFrame,
    pub env: Vec<ContactFrame>,
    /// `h` for the robot-object frame, relative to the estimated object pose.
    pub h_ro: Pose,
    pub h_env: Vec<Pose>,
    pub actions: Vec<Action>,
    /// Per action, one entry per repeat.
    pub truths: Vec<Vec<TruthPush>>,
}

/// One (test object, link, query pose).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestCase {
    pub object: usize,
    pub link: usize,
    pub query: usize,
    pub setup: Option<CaseSetup>,
    /// Why no query pose could be set up.
    pub error: Option<String>,
}

#[derive(Clone, Debug)]
pub struct TestSet {
    pub seed: u64,
    pub links: Vec<Link>,
    pub objects: Vec<PreparedObject>,
    pub cases: Vec<TestCase>,
}

fn case_key(object: usize, link: usize, query: usize) -> u64 {
    ((object as u64) << 40) | ((link as u64) << 32) | query as u64
}

fn setup_case(
    cfg: &ExperimentConfig,
    seed: u64,
    obj: &PreparedObject,
    link: &Link,
    key: u64,
    q_link: &QueryDensity,
    q_env: &QueryDensity,
) -> Result<CaseSetup> {
    let mut rng = stream_rng(seed, "test-case", key);
    let link_pose = sample_feasible_link_pose(q_link, link, &obj.cloud, &cfg.feasibility, &mut rng)?;
    let ro = q_link.select_contact_frame(&link_pose, &cfg.selection, &mut rng)?;
    let n_env = cfg.predictors.iter().map(Predictor::env_frames).max().unwrap_or(0);
    let env = q_env.sample_env_frames(n_env, &mut rng)?;
    let base_pose = link.base_for(&link_pose);
    let actions = actions_for_link(link, &cfg.action_set());
    let truths = actions
        .iter()
        .enumerate()
        .map(|(ai, action)| {
            (0..cfg.repeats)
                .map(|r| {
                    let mut prng = stream_rng(seed, "test-push", (key << 16) | ((ai as u64) << 8) | r as u64);
                    let friction = sample_friction(&cfg.sim, &mut prng);
                    let scene =
                        PushScene { object: &obj.sim, object_pose: obj.pose, base_pose, link, tracked: Vec::new() };
                    match simulate_push(&scene, action, friction, &cfg.sim) {
                        Ok(sim) => TruthPush { friction, final_pose: Some(*sim.final_object()), error: None },
                        Err(e) => TruthPush { friction, final_pose: None, error: Some(e.code().into()) },
                    }
                })
                .collect()
        })
        .collect();
    Ok(CaseSetup {
        link_pose,
        base_pose,
        h_ro: relative_pose(&ro.v, &obj.estimate),
        h_env: env.iter().map(|e| relative_pose(&e.v, &obj.estimate)).collect(),
        ro,
        env,
        actions,
        truths,
    })
}

/// Places every test object with a seeded yaw, draws query poses from the
/// bundle's contact models and runs the ground-truth pushes with freshly
/// sampled friction. Independent of the training-set size.
pub fn generate_test_set(cfg: &ExperimentConfig, bundle: &ModelBundle, seed: u64) -> Result<TestSet> {
    cfg.validate()?;
    let objects = cfg
        .test_objects
        .par_iter()
        .enumerate()
        .map(|(oi, spec)| {
            let mut rng = stream_rng(seed, "test-object", oi as u64);
            let yaw = rng.random_range(0.0..TAU);
            PreparedObject::new(spec, yaw, cfg, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    let links = bundle.links.clone();
    let mut cases = Vec::new();
    for (oi, obj) in objects.iter().enumerate() {
        let q_env = build_query_density(
            &bundle.environment,
            &obj.features,
            cfg.query_particles,
            &mut stream_rng(seed, "test-query-env", oi as u64),
        );
        for (li, link) in links.iter().enumerate() {
            let q_link = build_query_density(
                &bundle.robot_object[li],
                &obj.features,
                cfg.query_particles,
                &mut stream_rng(seed, "test-query", case_key(oi, li, 0)),
            );
            let batch: Vec<TestCase> = (0..cfg.query_poses)
                .into_par_iter()
                .map(|k| {
                    let setup = match (&q_link, &q_env) {
                        (Ok(ql), Ok(qe)) => setup_case(cfg, seed, obj, link, case_key(oi, li, k), ql, qe),
                        (Err(e), _) | (_, Err(e)) => Err(Error::NoContact(e.to_string())),
                    };
                    match setup {
                        Ok(s) => TestCase { object: oi, link: li, query: k, setup: Some(s), error: None },
                        Err(e) => TestCase { object: oi, link: li, query: k, setup: None, error: Some(e.code().into()) },
                    }
                })
                .collect();
            cases.extend(batch);
        }
    }
    Ok(TestSet { seed, links, objects, cases })
}

/// Ranked predictions of one trained variant, or the reason it has none.
#[derive(Clone, Debug)]
pub struct VariantPrediction {
    pub predictor: Predictor,
    pub result: std::result::Result<Vec<Prediction>, String>,
}

/// Builds the experts of `predictor` for a case and action and runs the
/// product-of-experts optimizer.
pub fn predict_case(
    cfg: &ExperimentConfig,
    models: &MotionSet,
    link: &Link,
    setup: &CaseSetup,
    action: &Action,
    predictor: Predictor,
    seed: u64,
    stream: u64,
) -> Result<Vec<Prediction>> {
    if !predictor.is_trained() {
        return Err(Error::Config("the baseline has no experts".into()));
    }
    let n_env = predictor.env_frames();
    if setup.env.len() < n_env {
        return Err(Error::Config(format!("{predictor} needs {n_env} environment frames, case has {}", setup.env.len())));
    }
    let ro_model = models.get(&link.name, ContactRole::RobotObject, &action.id)?;
    let mut experts = vec![PreparedExpert::new(ro_model, &setup.ro.condition, setup.h_ro)?];
    if n_env > 0 {
        let oe_model = models.get(&link.name, ContactRole::ObjectEnvironment, &action.id)?;
        for k in 0..n_env {
            experts.push(PreparedExpert::new(oe_model, &setup.env[k].condition, setup.h_env[k])?);
        }
    }
    predict(&experts, &cfg.predict, &mut stream_rng(seed, &format!("test-predict/{predictor}"), stream))
}

/// Final object pose implied by a predicted body-frame motion: the motion
/// is taken about the estimated object frame and applied in world space to
/// the true initial pose.
pub fn predicted_final(estimate: &Pose, truth_start: &Pose, p: &Prediction) -> Pose {
    world_displacement(estimate, &p.m_b).compose(truth_start)
}

struct Scored {
    pose: Pose,
    d_lin: f64,
    d_ang: f64,
    d_norm: f64,
    log_likelihood: Option<f64>,
}

fn score(truth: &Pose, pred: Pose, push_length: f64, ll: Option<f64>) -> Result<Scored> {
    let dl = d_lin(truth.p(), pred.p());
    let da = d_ang(truth.q().quaternion(), pred.q().quaternion())?;
    Ok(Scored { pose: pred, d_lin: dl, d_ang: da, d_norm: d_norm(dl, da, push_length), log_likelihood: ll })
}

fn row_base(set: &TestSet, case: &TestCase, action: &str, repeat: usize, predictor: Predictor) -> EvaluationRow {
    EvaluationRow {
        object: set.objects[case.object].label(),
        link: set.links[case.link].name.clone(),
        action: action.into(),
        query: case.query,
        repeat,
        predictor: predictor.as_str().into(),
        ..EvaluationRow::default()
    }
}

fn fill(row: &mut EvaluationRow, truth: &Pose, s: std::result::Result<Scored, String>) {
    row.set_truth(truth);
    match s {
        Ok(s) => {
            row.set_prediction(&s.pose);
            row.d_lin = Some(s.d_lin);
            row.d_ang = Some(s.d_ang);
            row.d_norm = Some(s.d_norm);
            row.log_likelihood = s.log_likelihood;
        }
        Err(e) => row.error = Some(e),
    }
}

fn case_rows(cfg: &ExperimentConfig, set: &TestSet, models: &MotionSet, ci: usize, ai: usize) -> Vec<EvaluationRow> {
    let case = &set.cases[ci];
    let link = &set.links[case.link];
    let Some(setup) = &case.setup else {
        // no push took place: every predictor row carries the setup error
        let actions = actions_for_link(link, &cfg.action_set());
        let id = &actions[ai].id;
        return (0..cfg.repeats)
            .flat_map(|r| {
                std::iter::once(Predictor::Baseline).chain(cfg.predictors.iter().copied()).map(move |p| {
                    let mut row = row_base(set, case, id, r, p);
                    row.error = case.error.clone();
                    row
                })
            })
            .collect();
    };
    let obj = &set.objects[case.object];
    let action = &setup.actions[ai];
    let stream = (case_key(case.object, case.link, case.query) << 8) | ai as u64;
    let variants: Vec<VariantPrediction> = cfg
        .predictors
        .iter()
        .map(|&p| VariantPrediction {
            predictor: p,
            result: predict_case(cfg, models, link, setup, action, p, set.seed, stream).map_err(|e| e.code().to_string()),
        })
        .collect();
    let length = cfg.push_length();
    let mut rows = Vec::new();
    for (r, truth) in setup.truths[ai].iter().enumerate() {
        let mut base = row_base(set, case, &action.id, r, Predictor::Baseline);
        base.friction = Some(truth.friction);
        let Some(end) = truth.final_pose else {
            base.error = truth.error.clone();
            rows.push(base.clone());
            for v in &variants {
                let mut row = row_base(set, case, &action.id, r, v.predictor);
                row.friction = Some(truth.friction);
                row.error = truth.error.clone();
                rows.push(row);
            }
            continue;
        };
        let b = baseline_final_pose(action, &obj.pose, &setup.base_pose, cfg.alpha_rad());
        fill(&mut base, &end, score(&end, b, length, None).map_err(|e| e.code().into()));
        rows.push(base);
        for v in &variants {
            let mut row = row_base(set, case, &action.id, r, v.predictor);
            row.friction = Some(truth.friction);
            let scored = v.result.clone().and_then(|preds| {
                let mut all = preds
                    .iter()
                    .map(|p| score(&end, predicted_final(&obj.estimate, &obj.pose, p), length, Some(p.log_likelihood)))
                    .collect::<Result<Vec<_>>>()
                    .map_err(|e| e.code().to_string())?;
                match cfg.scoring {
                    Scoring::Rank1 => Ok(all.swap_remove(0)),
                    Scoring::BestOfList => {
                        let best = (0..all.len()).min_by(|&i, &j| all[i].d_norm.total_cmp(&all[j].d_norm)).unwrap_or(0);
                        Ok(all.swap_remove(best))
                    }
                }
            });
            fill(&mut row, &end, scored);
            rows.push(row);
        }
    }
    rows
}

impl TestSet {
    /// Predicts and scores every push of the set with `models`. Rows come in
    /// case, action, repeat order, the baseline first within each push.
    pub fn evaluate(&self, cfg: &ExperimentConfig, models: &MotionSet, config_hash: &str) -> Result<EvaluationReport> {
        let actions = cfg.action_set();
        let jobs: Vec<(usize, usize)> = self
            .cases
            .iter()
            .enumerate()
            .flat_map(|(ci, c)| (0..actions_for_link(&self.links[c.link], &actions).len()).map(move |ai| (ci, ai)))
            .collect();
        let rows: Vec<EvaluationRow> =
            jobs.par_iter().map(|&(ci, ai)| case_rows(cfg, self, models, ci, ai)).collect::<Vec<_>>().concat();
        Ok(EvaluationReport {
            training_size: models.size,
            seed: self.seed,
            config_hash: config_hash.into(),
            push_length: cfg.push_length(),
            summary: summarize(&rows),
            rows,
        })
    }

    pub fn push_count(&self) -> usize {
        self.cases
            .iter()
            .map(|c| match &c.setup {
                Some(s) => s.truths.iter().map(Vec::len).sum(),
                None => 0,
            })
            .sum()
    }
}

/// Trains nothing: builds the test set from `bundle` and scores the motion
/// models of one training size.
pub fn run_evaluation(cfg: &ExperimentConfig, bundle: &ModelBundle, size: usize) -> Result<EvaluationReport> {
    let set = generate_test_set(cfg, bundle, cfg.seed)?;
    set.evaluate(cfg, &bundle.motion_models(size)?, &bundle.config_hash)
}

/// One bandwidth setting tried by [`grid_search`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub contact_factor: f64,
    pub motion_factor: f64,
    pub bandwidths: Bandwidths,
    /// Mean d_norm over all trained-variant rows without errors.
    pub mean_d_norm: Option<f64>,
    pub errors: usize,
}

/// Bandwidth grid over `factors × factors` (contact, motion) scalings of the
/// configured bandwidths, scored on a validation set drawn with a seed
/// disjoint from the test seed. Points come back best first.
pub fn grid_search(cfg: &ExperimentConfig, bundle: &ModelBundle, size: usize, factors: &[f64]) -> Result<Vec<GridPoint>> {
    let seed = mix(cfg.seed, domain("validation"));
    let set = generate_test_set(cfg, bundle, seed)?;
    let models = bundle.motion_models(size)?;
    let mut out = Vec::new();
    for &fc in factors {
        for &fm in factors {
            let bw = cfg.bandwidths.scaled(fc, fm);
            let report = set.evaluate(cfg, &models.with_bandwidths(bw)?, &bundle.config_hash)?;
            let trained: Vec<&EvaluationRow> = report.rows.iter().filter(|r| r.predictor != "baseline").collect();
            let ok: Vec<f64> = trained.iter().filter_map(|r| r.d_norm).collect();
            out.push(GridPoint {
                contact_factor: fc,
                motion_factor: fm,
                bandwidths: bw,
                mean_d_norm: (!ok.is_empty()).then(|| ok.iter().sum::<f64>() / ok.len() as f64),
                errors: trained.len() - ok.len(),
            });
        }
    }
    out.sort_by(|a, b| {
        let key = |g: &GridPoint| g.mean_d_norm.unwrap_or(f64::INFINITY);
        key(a).total_cmp(&key(b))
    });
    Ok(out)
}
