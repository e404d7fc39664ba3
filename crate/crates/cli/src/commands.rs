use std::fs;
use std::path::Path;

use serde_json::{json, Value};

use pushxfer::config::KeyValues;
use pushxfer::features::build_features;
use pushxfer::pipeline::{
    baseline_final_pose, d_ang, d_lin, d_norm, generate_test_set, grid_search, predict_case, predicted_final,
    run_training, EvaluationReport, ExperimentConfig, ModelBundle, Predictor, ALL,
};
use pushxfer::pushsim::Link;
use pushxfer::query::{build_query_density, sample_feasible_link_pose};
use pushxfer::seeding::stream_rng;
use pushxfer::{ContactModel, Error, PointCloud, Pose, Result, ShapeSpec};

use crate::{Cli, Command, Global};

pub fn run(cli: &Cli) -> Result<String> {
    let g = &cli.global;
    let out = match &cli.command {
        Command::GenShapes { out } => gen_shapes(g, out)?,
        Command::Train { out } => train(g, out)?,
        Command::Query { model, cloud, samples, link, density_out } => {
            query(g, model, cloud, *samples, link.as_deref(), density_out.as_deref())?
        }
        Command::Predict { models, object, link, action, size, query } => {
            predict(g, models, object, link, action.as_deref(), *size, *query)?
        }
        Command::Evaluate { models, out, size, grid_search } => evaluate(g, models, out, size, *grid_search)?,
        Command::Report { input, out } => return report(input, out.as_deref()),
    };
    Ok(serde_json::to_string_pretty(&out)?)
}

/// The experiment config from `--config` (or the preset), with flag overrides.
fn experiment_config(g: &Global) -> Result<ExperimentConfig> {
    let mut kv = match &g.config {
        Some(p) => KeyValues::read(p)?,
        None => KeyValues::default(),
    };
    if let Some(s) = g.scale {
        kv.push("scale", s.as_str());
    }
    if let Some(s) = g.seed {
        kv.push("seed", s);
    }
    let mut cfg = ExperimentConfig::from_key_values(&kv)?;
    apply_predictors(g, &mut cfg)?;
    cfg.validate()?;
    Ok(cfg)
}

fn apply_predictors(g: &Global, cfg: &mut ExperimentConfig) -> Result<()> {
    if g.predictor.is_empty() {
        return Ok(());
    }
    let trained: Vec<Predictor> = g.predictor.iter().copied().filter(|p| p.is_trained()).collect();
    if trained.is_empty() {
        return Err(Error::Config("at least one trained predictor (ro, ro3oe, ro5oe) is required".into()));
    }
    cfg.predictors = trained;
    Ok(())
}

/// Evaluation settings for a trained bundle: its own config unless
/// `--config` is given, then `--seed` and `--predictor` overrides.
fn evaluation_config(g: &Global, bundle: &ModelBundle) -> Result<ExperimentConfig> {
    let mut cfg = if g.config.is_some() || g.scale.is_some() { experiment_config(g)? } else { bundle.config.clone() };
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    apply_predictors(g, &mut cfg)?;
    cfg.validate()?;
    Ok(cfg)
}

fn gen_shapes(g: &Global, out: &Path) -> Result<Value> {
    let shapes = match &g.config {
        Some(p) => ShapeSpec::parse_config(&fs::read_to_string(p)?)?,
        None => {
            let mut v = vec![pushxfer::pipeline::default_training_object()];
            v.extend(pushxfer::pipeline::default_test_objects().into_iter().skip(1));
            v
        }
    };
    if shapes.is_empty() {
        return Err(Error::Config("no `shape = ...` lines in config".into()));
    }
    fs::create_dir_all(out)?;
    let seed = g.seed.unwrap_or(0);
    let mut listed = Vec::new();
    for (i, s) in shapes.iter().enumerate() {
        let sample = s.sample(&mut stream_rng(seed, "gen-shapes", i as u64))?;
        let file = format!("{}.ply", s.label());
        sample.cloud.write_ply(out.join(&file))?;
        listed.push(json!({ "shape": s.to_string(), "file": file, "points": sample.cloud.len() }));
    }
    fs::write(out.join("shapes.json"), serde_json::to_string_pretty(&listed)?)?;
    Ok(json!({ "out": out, "seed": seed, "shapes": listed }))
}

fn train(g: &Global, out: &Path) -> Result<Value> {
    let cfg = experiment_config(g)?;
    let bundle = run_training(&cfg)?;
    bundle.write_dir(out)?;
    Ok(json!({
        "out": out,
        "seed": cfg.seed,
        "config_hash": bundle.config_hash,
        "training_pushes": bundle.pushes.len(),
        "stats": bundle.stats,
    }))
}

fn read_cloud(path: &Path) -> Result<PointCloud> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("csv") => PointCloud::read_csv(path),
        Some("ply") => PointCloud::read_ply(path),
        _ => Err(Error::Parse(format!("{}: expected a .ply or .csv point cloud", path.display()))),
    }
}

fn link_named(name: &str) -> Result<Link> {
    pushxfer::pipeline::default_links()
        .into_iter()
        .find(|l| l.name == name)
        .ok_or_else(|| Error::Config(format!("unknown link '{name}' (front, side)")))
}

fn query(
    g: &Global,
    model: &Path,
    cloud: &Path,
    samples: usize,
    link: Option<&str>,
    density_out: Option<&Path>,
) -> Result<Value> {
    let cfg = experiment_config(g)?;
    let model = ContactModel::from_json(&fs::read_to_string(model)?)?;
    let cloud = read_cloud(cloud)?;
    let features = build_features(&cloud, cfg.feature_k)?;
    let q = build_query_density(&model, &features, cfg.query_particles, &mut stream_rng(cfg.seed, "cli-query", 0))?;
    if let Some(p) = density_out {
        fs::write(p, q.to_json()?)?;
    }
    let link = link.map(link_named).transpose()?;
    let mut rng = stream_rng(cfg.seed, "cli-query-sample", 0);
    let poses = (0..samples)
        .map(|_| match &link {
            Some(l) => sample_feasible_link_pose(&q, l, &cloud, &cfg.feasibility, &mut rng),
            None => Ok(q.sample_link_pose(&mut rng)),
        })
        .collect::<Result<Vec<Pose>>>()?;
    Ok(json!({ "particles": q.len(), "features": features.len(), "samples": poses }))
}

fn predict(
    g: &Global,
    models: &Path,
    object: &str,
    link: &str,
    action: Option<&str>,
    size: Option<usize>,
    query: usize,
) -> Result<Value> {
    let bundle = ModelBundle::read_dir(models)?;
    let mut cfg = evaluation_config(g, &bundle)?;
    cfg.test_objects = vec![object.parse()?];
    cfg.query_poses = query + 1;
    let size = size.or(bundle.config.training_sizes.iter().copied().max()).unwrap_or(1);
    let motions = bundle.motion_models(size)?;
    let li = bundle.links.iter().position(|l| l.name == link).ok_or_else(|| Error::Config(format!("unknown link '{link}'")))?;
    let set = generate_test_set(&cfg, &bundle, cfg.seed)?;
    let (ci, case) = set
        .cases
        .iter()
        .enumerate()
        .find(|(_, c)| c.link == li && c.query == query)
        .ok_or_else(|| Error::Config("no such query pose".into()))?;
    let setup = case.setup.as_ref().ok_or_else(|| match case.error.as_deref() {
        Some("no_feasible_pose") => Error::NoFeasiblePose(cfg.feasibility.oversampling),
        other => Error::NoContact(other.unwrap_or("query setup failed").into()),
    })?;
    let obj = &set.objects[0];
    let predictors: Vec<Predictor> = if g.predictor.is_empty() {
        std::iter::once(Predictor::Baseline).chain(cfg.predictors.iter().copied()).collect()
    } else {
        g.predictor.clone()
    };
    let length = cfg.push_length();
    let mut actions = Vec::new();
    for (ai, a) in setup.actions.iter().enumerate() {
        if action.is_some_and(|id| id != a.id) {
            continue;
        }
        let truths = &setup.truths[ai];
        let mut per_predictor = Vec::new();
        for &p in &predictors {
            let ranked: Result<Vec<(Option<f64>, Pose)>> = if p.is_trained() {
                predict_case(&cfg, &motions, &set.links[li], setup, a, p, cfg.seed, ((ci as u64) << 8) | ai as u64)
                    .map(|ps| ps.iter().map(|x| (Some(x.log_likelihood), predicted_final(&obj.estimate, &obj.pose, x))).collect())
            } else {
                Ok(vec![(None, baseline_final_pose(a, &obj.pose, &setup.base_pose, cfg.alpha_rad()))])
            };
            per_predictor.push(match ranked {
                Ok(list) => {
                    let best = list[0].1;
                    let scores = truths
                        .iter()
                        .map(|t| match &t.final_pose {
                            Some(tp) => {
                                let dl = d_lin(tp.p(), best.p());
                                let da = d_ang(tp.q().quaternion(), best.q().quaternion())?;
                                Ok(Some(d_norm(dl, da, length)))
                            }
                            None => Ok(None),
                        })
                        .collect::<Result<Vec<_>>>()?;
                    let ranked: Vec<Value> = list
                        .iter()
                        .enumerate()
                        .map(|(rank, (ll, pose))| json!({ "rank": rank + 1, "log_likelihood": ll, "final_pose": pose }))
                        .collect();
                    json!({ "predictor": p.as_str(), "ranked": ranked, "rank1_d_norm": scores })
                }
                Err(e) => json!({ "predictor": p.as_str(), "error": e.code(), "message": e.to_string() }),
            });
        }
        actions.push(json!({ "action": a.id, "truths": truths, "predictions": per_predictor }));
    }
    if actions.is_empty() {
        return Err(Error::Config(format!("action '{}' is not in the {link} link's action set", action.unwrap_or(""))));
    }
    Ok(json!({
        "object": obj.label(),
        "initial_pose": obj.pose,
        "link": link,
        "link_pose": setup.link_pose,
        "training_size": size,
        "actions": actions,
    }))
}

fn totals(rep: &EvaluationReport) -> Value {
    let by: serde_json::Map<String, Value> = rep
        .summary
        .iter()
        .filter(|s| s.object == ALL && s.action == ALL)
        .map(|s| (s.predictor.clone(), json!({ "n": s.n, "errors": s.errors, "mean_d_norm": s.mean_d_norm })))
        .collect();
    Value::Object(by)
}

fn evaluate(g: &Global, models: &Path, out: &Path, sizes: &[usize], grid: bool) -> Result<Value> {
    let bundle = ModelBundle::read_dir(models)?;
    let cfg = evaluation_config(g, &bundle)?;
    let sizes = if sizes.is_empty() { bundle.config.training_sizes.clone() } else { sizes.to_vec() };
    let set = generate_test_set(&cfg, &bundle, cfg.seed)?;
    let mut results = Vec::new();
    for &size in &sizes {
        let rep = set.evaluate(&cfg, &bundle.motion_models(size)?, &bundle.config_hash)?;
        rep.write_dir(out)?;
        let mut entry = json!({ "training_size": size, "rows": rep.rows.len(), "error_rows": rep.error_rows(), "totals": totals(&rep) });
        if grid {
            let points = grid_search(&cfg, &bundle, size, &[0.5, 1.0, 2.0])?;
            fs::write(out.join(format!("grid-{size}.json")), serde_json::to_string_pretty(&points)?)?;
            entry["best_bandwidths"] = serde_json::to_value(points[0].bandwidths)?;
        }
        results.push(entry);
    }
    Ok(json!({ "out": out, "seed": cfg.seed, "test_pushes": set.push_count(), "results": results }))
}

/// Rebuilds summary and plot files from a per-push CSV and prints the
/// per-object table of mean d_norm.
fn report(input: &Path, out: Option<&Path>) -> Result<String> {
    let rows = EvaluationReport::parse_rows_csv(&fs::read_to_string(input)?)?;
    let stem = input.file_stem().and_then(|s| s.to_str()).unwrap_or("");
    let size = stem.strip_prefix("pushes-").and_then(|s| s.parse().ok()).unwrap_or(0);
    // seed, hash and push length come from the summary written alongside
    let dir = input.parent().unwrap_or(Path::new("."));
    let meta: Value = fs::read_to_string(dir.join(format!("summary-{size}.json")))
        .ok()
        .and_then(|t| serde_json::from_str(&t).ok())
        .unwrap_or(Value::Null);
    let seed = meta["seed"].as_u64().unwrap_or(0);
    let hash = meta["config_hash"].as_str().unwrap_or("");
    let length = meta["push_length"].as_f64().unwrap_or_else(|| ExperimentConfig::desk(0).push_length());
    let rep = EvaluationReport::from_rows(size, seed, hash, length, rows);
    rep.write_dir(out.unwrap_or(dir))?;

    let mut predictors: Vec<&str> = rep.summary.iter().map(|s| s.predictor.as_str()).collect();
    predictors.sort_unstable();
    predictors.dedup();
    let mut objects: Vec<&str> = rep.summary.iter().filter(|s| s.object != ALL).map(|s| s.object.as_str()).collect();
    objects.sort_unstable();
    objects.dedup();
    objects.push(ALL);
    let mut text = format!("{:<32}", "mean d_norm");
    for p in &predictors {
        text.push_str(&format!("{p:>10}"));
    }
    for o in objects {
        text.push_str(&format!("\n{o:<32}"));
        for p in &predictors {
            match rep.group(o, p, ALL).and_then(|s| s.mean_d_norm) {
                Some(m) => text.push_str(&format!("{m:>10.4}")),
                None => text.push_str(&format!("{:>10}", "-")),
            }
        }
    }
    Ok(text)
}
