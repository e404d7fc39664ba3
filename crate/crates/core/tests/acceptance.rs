//! Acceptance criteria 1–8. Runs without the libtest harness so that each
//! criterion prints exactly one PASS/FAIL line; exits nonzero if any fails.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;
use std::time::Instant;

use nalgebra::{Quaternion, UnitQuaternion, Vector2, Vector3, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use pushxfer::density::{eval_gaussian, eval_motion_kernel, eval_theta, log_theta};
use pushxfer::features::build_features;
use pushxfer::geom::{
    local_to_object_motion, motion_between, object_to_local_motion, relative_pose,
};
use pushxfer::motion::{
    expert_conditional, log_condition_kernel, predict, record_rollout, ContactRole, MotionKernel, PreparedExpert,
};
use pushxfer::pipeline::{
    baseline_predict, build_action_set, d_ang, d_norm, generate_test_set, run_training, EvaluationReport,
    ExperimentConfig, ModelBundle, TestSet,
};
use pushxfer::pushsim::shapes::bounding_box;
use pushxfer::pushsim::{sample_friction, simulate_push, Link, PushScene, SimObject};
use pushxfer::query::{place_link, Feasibility};
use pushxfer::{Bandwidths, Condition, MotionModel, ParticleDensity, PointCloud, Pose, PredictConfig, RigidMotion, ShapeSpec, SimConfig, SurfaceFeature};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn random_pose<R: Rng>(rng: &mut R, spread: f64) -> Pose {
    let p = Vector3::new(rng.random_range(-spread..spread), rng.random_range(-spread..spread), rng.random_range(-spread..spread));
    let q = UnitQuaternion::from_euler_angles(rng.random_range(-PI..PI), rng.random_range(-1.5..1.5), rng.random_range(-PI..PI));
    Pose::new(p, q)
}

// ---------------------------------------------------------------- 1

fn criterion_1() -> Outcome {
    let a = Quaternion::new(1.0, 0.0, 0.0, 0.0);
    let b = Quaternion::new(0.0, 1.0, 0.0, 0.0);
    let q = UnitQuaternion::from_euler_angles(0.2, -0.4, 1.1).into_inner();
    let half = (0.3f64 / 2.0).cos();
    let r = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), 0.3).into_inner();
    let cases = [
        (d_ang(&q, &q).map_err(|e| e.to_string())?, 0.0),
        (d_ang(&q, &-q).map_err(|e| e.to_string())?, 0.0),
        (d_ang(&a, &b).map_err(|e| e.to_string())?, 1.0),
        // rotation by θ about z: 1 − cos²(θ/2)
        (d_ang(&a, &r).map_err(|e| e.to_string())?, 1.0 - half * half),
        (d_norm(0.0, 0.0, 0.4), 0.0),
        (d_norm(0.4, 0.0, 0.4), 0.5),
        (d_norm(0.0, 1.0, 0.4), 0.5),
        (d_norm(0.1, 0.2, 0.4), 0.1 + 0.125),
    ];
    let worst = cases.iter().map(|(g, w)| (g - w).abs()).fold(0.0, f64::max);
    let linear = baseline_predict(&build_action_set()[0], &Pose::identity(), 10f64.to_radians());
    let exact = *linear.p() == Vector3::new(0.4, 0.0, 0.0) && linear.rotation_angle() == 0.0;
    check(worst <= 1e-12 && exact, format!("max metric error {worst:.1e}, baseline linear = {:?}", linear.p().as_slice()))
}

// ---------------------------------------------------------------- 2

fn grid_plane(spacing: f64, n: usize) -> PointCloud {
    let mut pts = Vec::new();
    for i in 0..n {
        for j in 0..n {
            pts.push(Vector3::new(i as f64 * spacing, j as f64 * spacing, 0.0));
        }
    }
    PointCloud::new(pts)
}

fn cylinder_wall(radius: f64, height: f64, spacing: f64) -> PointCloud {
    let na = (2.0 * PI * radius / spacing).round() as usize;
    let nz = (height / spacing).round() as usize + 1;
    let mut pts = Vec::new();
    for iz in 0..nz {
        for ia in 0..na {
            let a = 2.0 * PI * ia as f64 / na as f64;
            pts.push(Vector3::new(radius * a.cos(), radius * a.sin(), iz as f64 * spacing));
        }
    }
    PointCloud::new(pts)
}

fn fibonacci_sphere(radius: f64, n: usize) -> PointCloud {
    let golden = PI * (3.0 - 5f64.sqrt());
    let pts = (0..n)
        .map(|i| {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let r = (1.0 - z * z).sqrt();
            let th = golden * i as f64;
            Vector3::new(r * th.cos(), r * th.sin(), z) * radius
        })
        .collect();
    PointCloud::new(pts)
}

fn criterion_2() -> Outcome {
    let k = 20;
    let radius = 0.1;
    let kappa = 1.0 / radius;
    // 1 cm spacing = 10⁴ points/m²; a plane's analytic curvature is zero, so
    // it is held to 5% of the curved shapes' 1/r
    let plane = build_features(&grid_plane(0.01, 30), k).map_err(|e| e.to_string())?;
    let plane_err = plane
        .iter()
        .filter(|f| (0.05..=0.24).contains(&f.pose.p().x) && (0.05..=0.24).contains(&f.pose.p().y))
        .map(|f| f.r.abs().max() / kappa)
        .fold(0.0, f64::max);
    let cyl = build_features(&cylinder_wall(radius, 0.2, 0.01), k).map_err(|e| e.to_string())?;
    let cyl_err = cyl
        .iter()
        .filter(|f| (0.04..=0.16).contains(&f.pose.p().z))
        .map(|f| ((f.r.x - kappa).abs() / kappa).max(f.r.y.abs() / kappa))
        .fold(0.0, f64::max);
    let n_sphere = (4.0 * PI * radius * radius * 1e4).ceil() as usize;
    let sphere = build_features(&fibonacci_sphere(radius, n_sphere), k).map_err(|e| e.to_string())?;
    let sph_err = sphere
        .iter()
        .map(|f| ((f.r.x - kappa).abs() / kappa).max((f.r.y - kappa).abs() / kappa))
        .fold(0.0, f64::max);

    // component-wise: translation difference and quaternion difference up to sign
    let gap = |a: &Pose, b: &Pose| {
        let (qa, qb) = (a.q().coords, b.q().coords);
        (a.p() - b.p()).amax().max((qa - qb).amax().min((qa + qb).amax()))
    };
    let gap_m = |a: &RigidMotion, b: &RigidMotion| gap(&a.as_pose(), &b.as_pose());
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut pose_err = 0.0f64;
    for _ in 0..1000 {
        let (a, b, h) = (random_pose(&mut rng, 1.0), random_pose(&mut rng, 1.0), random_pose(&mut rng, 0.3));
        pose_err = pose_err.max(gap(&a.compose(&a.inverse()), &Pose::identity()));
        pose_err = pose_err.max(gap(&a.compose(&relative_pose(&a, &b)), &b));
        let m = RigidMotion::from_pose(&random_pose(&mut rng, 0.2));
        pose_err = pose_err.max(gap_m(&local_to_object_motion(&object_to_local_motion(&m, &h), &h), &m));
        let json: Pose = serde_json::from_str(&serde_json::to_string(&a).unwrap()).unwrap();
        pose_err = pose_err.max(gap(&json, &a));
    }
    check(
        plane_err <= 0.05 && cyl_err <= 0.05 && sph_err <= 0.05 && pose_err <= 1e-9,
        format!(
            "worst relative curvature error plane {plane_err:.4}, cylinder {cyl_err:.4}, sphere {sph_err:.4}; pose round trip {pose_err:.1e}"
        ),
    )
}

// ---------------------------------------------------------------- 3

fn random_feature<R: Rng>(rng: &mut R) -> SurfaceFeature {
    SurfaceFeature {
        pose: random_pose(rng, 0.05),
        r: Vector2::new(rng.random_range(-5.0..15.0), rng.random_range(-5.0..5.0)),
    }
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let bw = Bandwidths { sigma_p: 0.02, sigma_q: 20.0, sigma_r: 4.0, motion_p: 0.05, motion_q: 20.0 };
    let particles: Vec<_> = (0..100).map(|_| random_feature(&mut rng)).collect();
    let raw: Vec<f64> = (0..100).map(|_| rng.random_range(0.01..1.0)).collect();
    let density = ParticleDensity::new(particles.clone(), raw.clone(), bw).map_err(|e| e.to_string())?;
    let total: f64 = raw.iter().sum();
    let mut kde_err = 0.0f64;
    for _ in 0..50 {
        let x = random_feature(&mut rng);
        let mut brute = 0.0;
        for (p, w) in particles.iter().zip(&raw) {
            brute += w / total
                * eval_gaussian(x.pose.p().as_slice(), p.pose.p().as_slice(), bw.sigma_p).unwrap()
                * eval_theta(x.pose.q(), p.pose.q(), bw.sigma_q).unwrap()
                * eval_gaussian(x.r.as_slice(), p.r.as_slice(), bw.sigma_r).unwrap();
        }
        kde_err = kde_err.max((density.eval(&x) - brute).abs() / brute);
    }

    // uniform S³ has density 1/(2π²), so 2π²·E[Θ] = 1
    let mu = UnitQuaternion::new_normalize(Quaternion::new(0.3, -0.2, 0.9, 0.1));
    let n = 200_000;
    let mut acc = 0.0;
    for _ in 0..n {
        let g = Vector4::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal));
        acc += log_theta(&UnitQuaternion::new_normalize(Quaternion::from(g)), &mu, 5.0).exp();
    }
    let integral = acc / n as f64 * 2.0 * PI * PI;

    let kernels: Vec<MotionKernel> = (0..100)
        .map(|_| {
            let f = random_feature(&mut rng);
            MotionKernel { c: Condition { u: f.pose, r: f.r }, m: RigidMotion::from_pose(&random_pose(&mut rng, 0.05)) }
        })
        .collect();
    let weights: Vec<f64> = (0..100).map(|_| rng.random_range(0.1..1.0)).collect();
    let model = MotionModel {
        action: "linear".into(),
        link: "front".into(),
        role: ContactRole::RobotObject,
        density: ParticleDensity::new(kernels.clone(), weights.clone(), bw).map_err(|e| e.to_string())?,
    };
    let mut cond_err = 0.0f64;
    for _ in 0..20 {
        let f = random_feature(&mut rng);
        let c = Condition { u: f.pose, r: f.r };
        let h = random_pose(&mut rng, 0.1);
        let m_b = RigidMotion::from_pose(&random_pose(&mut rng, 0.05));
        let m_v = object_to_local_motion(&m_b, &h);
        let (mut num, mut den) = (0.0, 0.0);
        for (k, w) in kernels.iter().zip(&weights) {
            let kc = log_condition_kernel(&c, &k.c, &bw).exp();
            num += w * eval_motion_kernel(&m_v, &k.m, &bw).unwrap() * kc;
            den += w * kc;
        }
        let got = expert_conditional(&model, &m_b, &c, &h).map_err(|e| e.to_string())?;
        cond_err = cond_err.max((got - num / den).abs() / (num / den));
    }
    check(
        kde_err <= 1e-12 && (integral - 1.0).abs() <= 0.02 && cond_err <= 1e-12,
        format!("KDE rel. error {kde_err:.1e}, Θ integral {integral:.4}, conditional rel. error {cond_err:.1e}"),
    )
}

// ---------------------------------------------------------------- 4

fn shapes() -> Vec<ShapeSpec> {
    pushxfer::pipeline::default_test_objects()
}

/// A link placed against the object's −x side with a random lateral offset
/// and yaw, touching the cloud.
fn random_contact<R: Rng>(obj: &SimObject, pose: &Pose, cloud: &PointCloud, link: &Link, rng: &mut R) -> Option<Pose> {
    let (lo, _) = bounding_box(&obj.world_footprint(pose));
    let s = Pose::planar(lo.x, rng.random_range(-0.06..0.06), link.mount_height(), rng.random_range(-0.3..0.3));
    place_link(&s, link, cloud, &Feasibility::default())
}

fn criterion_4() -> Outcome {
    let cfg = SimConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let actions = build_action_set();
    let link = Link::front();
    let (mut done, mut worst) = (0, 0.0f64);
    let mut attempts = 0;
    while done < 100 && attempts < 1000 {
        attempts += 1;
        let spec = &shapes()[attempts % 5];
        let obj = SimObject::new(spec, &cfg).map_err(|e| e.to_string())?;
        let pose = obj.resting_pose(0.0, 0.0, rng.random_range(-PI..PI), &cfg);
        let sample = spec.sample(&mut rng).map_err(|e| e.to_string())?;
        let cloud = sample.cloud.transformed(&pose);
        let Some(link_pose) = random_contact(&obj, &pose, &cloud, &link, &mut rng) else { continue };
        let tracked: Vec<Pose> = (0..3).map(|_| pose.compose(&random_pose(&mut rng, 0.1))).collect();
        let scene = PushScene { object: &obj, object_pose: pose, base_pose: link.base_for(&link_pose), link: &link, tracked };
        let action = &actions[attempts % actions.len()];
        let Ok(sim) = simulate_push(&scene, action, sample_friction(&cfg, &mut rng), &cfg) else { continue };
        let (b0, b1) = (sim.object.first().unwrap(), sim.object.last().unwrap());
        for traj in &sim.frames {
            let h0 = relative_pose(&traj[0], b0);
            let h1 = relative_pose(traj.last().unwrap(), b1);
            let (dp, dq) = h0.distance_to(&h1);
            worst = worst.max(dp).max(dq);
        }
        done += 1;
    }
    check(done == 100 && worst <= 1e-6, format!("{done} rollouts, max |h_start − h_end| {worst:.1e}"))
}

// ---------------------------------------------------------------- 5

fn criterion_5() -> Outcome {
    let cfg = SimConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let link = Link::front();
    let actions = build_action_set();
    let (mut worst_p, mut worst_q, mut done) = (0.0f64, 0.0f64, 0);
    let mut attempts = 0;
    while done < 5 && attempts < 100 {
        attempts += 1;
        let spec = ShapeSpec::cube(0.2);
        let obj = SimObject::new(&spec, &cfg).map_err(|e| e.to_string())?;
        let pose = obj.resting_pose(0.0, 0.0, 0.0, &cfg);
        let cloud = spec.sample(&mut rng).map_err(|e| e.to_string())?.cloud.transformed(&pose);
        let feats = build_features(&cloud, 20).map_err(|e| e.to_string())?;
        let Some(link_pose) = random_contact(&obj, &pose, &cloud, &link, &mut rng) else { continue };
        // contact frame: the feature nearest the link origin
        let f = feats
            .iter()
            .min_by(|a, b| (a.pose.p() - link_pose.p()).norm().total_cmp(&(b.pose.p() - link_pose.p()).norm()))
            .unwrap();
        let scene =
            PushScene { object: &obj, object_pose: pose, base_pose: link.base_for(&link_pose), link: &link, tracked: vec![f.pose] };
        let action = &actions[done % actions.len()];
        let Ok(sim) = simulate_push(&scene, action, sample_friction(&cfg, &mut rng), &cfg) else { continue };
        if sim.contact_lost {
            continue;
        }
        let c = Condition { u: relative_pose(&f.pose, &link_pose), r: f.r };
        let kernel = record_rollout(&sim, 0, c).map_err(|e| e.to_string())?;
        let model = MotionModel::new(&action.id, "front", ContactRole::RobotObject, vec![kernel], Bandwidths::default())
            .map_err(|e| e.to_string())?;
        let h = relative_pose(&f.pose, &pose);
        let expert = PreparedExpert::new(&model, &c, h).map_err(|e| e.to_string())?;
        let pred = predict(&[expert], &PredictConfig::desk(), &mut rng).map_err(|e| e.to_string())?;
        let truth = motion_between(sim.object.first().unwrap(), sim.object.last().unwrap());
        let (dp, dq) = pred[0].m_b.distance_to(&truth);
        worst_p = worst_p.max(dp);
        worst_q = worst_q.max(dq);
        done += 1;
    }
    check(
        done == 5 && worst_p < 0.01 && worst_q < 2f64.to_radians(),
        format!("{done} single-rollout models, worst error {:.2} mm / {:.3}°", worst_p * 1e3, worst_q.to_degrees()),
    )
}

// ---------------------------------------------------------------- 6–8

const SEED: u64 = 1;

struct Run {
    bundle: ModelBundle,
    reports: Vec<EvaluationReport>,
    seconds: f64,
}

fn desk_pipeline(out: &Path) -> Result<Run, String> {
    let t = Instant::now();
    let cfg = ExperimentConfig::desk(SEED);
    let bundle = run_training(&cfg).map_err(|e| e.to_string())?;
    bundle.write_dir(out.join("models")).map_err(|e| e.to_string())?;
    let set: TestSet = generate_test_set(&cfg, &bundle, cfg.seed).map_err(|e| e.to_string())?;
    let mut reports = Vec::new();
    for &size in &cfg.training_sizes {
        let models = bundle.motion_models(size).map_err(|e| e.to_string())?;
        let report = set.evaluate(&cfg, &models, &bundle.config_hash).map_err(|e| e.to_string())?;
        report.write_dir(out.join("reports")).map_err(|e| e.to_string())?;
        reports.push(report);
    }
    Ok(Run { bundle, reports, seconds: t.elapsed().as_secs_f64() })
}

fn criterion_6(run: &Run) -> Outcome {
    let r500 = run.reports.iter().find(|r| r.training_size == 500).ok_or("no 500-push report")?;
    let objects = r500.rows.iter().filter(|r| r.predictor == "baseline").count() / 5;
    let base = r500.total_mean("baseline").ok_or("no baseline rows")?;
    let mut parts = vec![format!("{objects} pushes/object, baseline {base:.4}")];
    let mut ok = objects == 60;
    for p in ["ro", "ro3oe", "ro5oe"] {
        let m = r500.total_mean(p).ok_or(format!("no {p} rows"))?;
        ok &= m < base && m / base < 0.75;
        parts.push(format!("{p} {m:.4} (ratio {:.3})", m / base));
    }
    let errors = r500.error_rows();
    parts.push(format!("{errors} error rows, {:.0} s", run.seconds));
    check(ok, parts.join(", "))
}

fn criterion_7(run: &Run) -> Outcome {
    let at = |size: usize, p: &str| -> Result<f64, String> {
        run.reports
            .iter()
            .find(|r| r.training_size == size)
            .and_then(|r| r.total_mean(p))
            .ok_or(format!("no {p} result at {size}"))
    };
    let (ro100, ro500) = (at(100, "ro")?, at(500, "ro")?);
    let (oe100, oe500) = (at(100, "ro3oe")?, at(500, "ro3oe")?);
    let change = (ro500 - ro100).abs() / ro100;
    check(
        change < 0.20 && oe500 < oe100,
        format!("RO {ro100:.4} → {ro500:.4} ({:+.1}%), RO+3OE {oe100:.4} → {oe500:.4}", 100.0 * (ro500 - ro100) / ro100),
    )
}

fn files_under(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn criterion_8(first: &Run, first_dir: &Path) -> Outcome {
    let second_dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().map_err(|e| e.to_string())?;
    let second = pool.install(|| desk_pipeline(second_dir.path()))?;
    let a = files_under(first_dir);
    let b = files_under(second_dir.path());
    let differing: Vec<&String> = a.iter().zip(&b).filter(|(x, y)| x != y).map(|(x, _)| &x.0).collect();
    let same = a.len() == b.len() && differing.is_empty() && first.bundle.config_hash == second.bundle.config_hash;
    check(
        same,
        format!(
            "{} files compared ({} vs 3 threads), {} differ{}; second run {:.0} s",
            a.len(),
            rayon::current_num_threads(),
            differing.len(),
            differing.first().map(|f| format!(" (first: {f})")).unwrap_or_default(),
            second.seconds
        ),
    )
}

fn report(n: usize, title: &str, start: Instant, outcome: &Outcome) -> bool {
    let secs = start.elapsed().as_secs_f64();
    match outcome {
        Ok(d) => println!("criterion {n} PASS  {title}: {d} [{secs:.1} s]"),
        Err(d) => println!("criterion {n} FAIL  {title}: {d} [{secs:.1} s]"),
    }
    outcome.is_ok()
}

fn main() {
    let mut all = true;
    let quick: [(usize, &str, fn() -> Outcome); 5] = [
        (1, "formula exactness", criterion_1),
        (2, "geometry oracles", criterion_2),
        (3, "KDE correctness", criterion_3),
        (4, "rigid constancy of h", criterion_4),
        (5, "degenerate recovery", criterion_5),
    ];
    for (n, title, f) in quick {
        let t = Instant::now();
        all &= report(n, title, t, &f());
    }

    let dir = tempfile::tempdir().expect("temp dir");
    let t = Instant::now();
    match desk_pipeline(dir.path()) {
        Ok(run) => {
            all &= report(6, "transfer trend", t, &criterion_6(&run));
            let t7 = Instant::now();
            all &= report(7, "sample-complexity trend", t7, &criterion_7(&run));
            let t8 = Instant::now();
            all &= report(8, "determinism", t8, &criterion_8(&run, dir.path()));
        }
        Err(e) => {
            for (n, title) in [(6, "transfer trend"), (7, "sample-complexity trend"), (8, "determinism")] {
                all &= report(n, title, t, &Err(format!("pipeline failed: {e}")));
            }
        }
    }
    if !all {
        std::process::exit(1);
    }
}
