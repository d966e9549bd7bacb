//! End-to-end acceptance checks. Each test prints one `PASS`/`FAIL` line
//! straight to stderr so the verdicts show up without `--nocapture`.
//!
//! The experiments share one core, so they run one at a time behind a lock
//! and the runtime check of the headline table measures only its own work.

use std::collections::BTreeMap;
use std::io::Write;
use std::sync::{Mutex, MutexGuard, OnceLock};
use std::time::Instant;

use m3dm::baseline::{self, GlobalDirection};
use m3dm::config::RunConfig;
use m3dm::controller::{self, Controller, Example, LossKind, TrainConfig};
use m3dm::dataio::{self, DatasetContainer, GenerationMode, Payload};
use m3dm::eval::{self, CvReport};
use m3dm::fitting::{self, CameraModel, FitConfig, FitProblem, FitTarget};
use m3dm::latent::{self, GeneratorMode, LatentWorld};
use m3dm::linalg::Matrix;
use m3dm::model::{FaceParams, MorphableBasis};
use m3dm::pipeline::{self, MethodKind};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

const PAIRS: usize = 20_000;
const FOLDS: usize = 5;
const TIME_BUDGET_S: f64 = 600.0;

static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

fn say(line: &str) {
    let _ = writeln!(std::io::stderr(), "{line}");
}

fn verdict(n: usize, ok: bool, summary: &str) {
    say(&format!("criterion {n}: {} {summary}", if ok { "PASS" } else { "FAIL" }));
    assert!(ok, "criterion {n}: {summary}");
}

/// Controller setup for the experiments. Smaller and shorter than the
/// library defaults so the full table fits the time budget on one core.
fn experiment_train() -> TrainConfig {
    TrainConfig {
        hidden: 128,
        hidden_layers: 2,
        epochs: 20,
        learning_rate: 3e-3,
        final_lr_fraction: 0.1,
        batch_size: 64,
        ..TrainConfig::default()
    }
}

fn experiment_config(mode: GeneratorMode) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.world.mode = mode;
    cfg.train = experiment_train();
    cfg
}

/// One fitted hyperplane and 20,000-pair dataset per attribute.
fn datasets(cfg: &RunConfig) -> (LatentWorld<f64>, Vec<DatasetContainer<f64>>) {
    let world: LatentWorld<f64> = pipeline::build_world(cfg).unwrap();
    let basis: MorphableBasis<f64> = pipeline::build_basis(cfg).unwrap();
    let data = world
        .attributes
        .iter()
        .map(|a| {
            let h = pipeline::fit_attribute_hyperplane(&world, &a.name, cfg.hyperplane_samples, cfg.hyperplane_seed, cfg)
                .unwrap();
            pipeline::generate_dataset(&world, &basis, &h, PAIRS, cfg.dataset_seed, GenerationMode::Direct, cfg).unwrap()
        })
        .collect();
    (world, data)
}

fn cross_validate(cfg: &RunConfig, methods: &[MethodKind]) -> Vec<CvReport> {
    let (_, data) = datasets(cfg);
    data.iter()
        .flat_map(|d| {
            pipeline::l2cv_methods(&d.pairs, d.manifest.seed, methods, &cfg.train, cfg.eval_folds, cfg.eval_seed).unwrap()
        })
        .collect()
}

/// `method -> attribute -> grand mean`
fn by_method(rows: &[CvReport]) -> BTreeMap<String, BTreeMap<String, f64>> {
    let mut m: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
    for r in rows {
        m.entry(r.method.clone()).or_default().insert(r.attribute.clone(), r.grand_mean);
    }
    m
}

struct CvTable {
    rows: Vec<CvReport>,
    text: String,
    seconds: f64,
}

fn nonlinear_table() -> &'static CvTable {
    static TABLE: OnceLock<CvTable> = OnceLock::new();
    TABLE.get_or_init(|| {
        let t = Instant::now();
        let rows = cross_validate(&experiment_config(GeneratorMode::Nonlinear), &MethodKind::all());
        let seconds = t.elapsed().as_secs_f64();
        let text = dataio::l2_table(&rows);
        say(&format!("nonlinear world, {FOLDS}-fold L2 ({seconds:.1} s):\n{text}"));
        CvTable { rows, text, seconds }
    })
}

#[test]
fn criterion_1_controller_beats_baseline_on_nonlinear_world() {
    let _g = serial();
    let t = nonlinear_table();
    for r in &t.rows {
        assert!(r.fold_sizes.iter().all(|&s| s == (16_000, 4_000)), "{:?}", r.fold_sizes);
    }
    let m = by_method(&t.rows);
    let base = &m[pipeline::MethodKind::Baseline.label()];
    let ours = &m[pipeline::MethodKind::Ours.label()];
    let wins = base.keys().filter(|a| ours[*a] < base[*a]).count();
    let mean = |v: &BTreeMap<String, f64>| v.values().sum::<f64>() / v.len() as f64;
    let gain = 1.0 - mean(ours) / mean(base);
    let ok = base.len() == 8 && wins >= 6 && gain >= 0.10 && t.seconds <= TIME_BUDGET_S;
    verdict(
        1,
        ok,
        &format!(
            "Ours < Baseline on {wins}/8 attributes, mean L2 {:.4} vs {:.4} ({:.1}% lower), {:.1} s",
            mean(ours),
            mean(base),
            100.0 * gain,
            t.seconds
        ),
    );
}

#[test]
fn criterion_2_no_residual_ablation() {
    let _g = serial();
    let t = nonlinear_table();
    let lines: Vec<&str> = t.text.lines().collect();
    let layout_ok = lines.len() == 4
        && lines[0].starts_with("L2\t")
        && lines[1].starts_with("Baseline\t")
        && lines[2].starts_with("Ours w.o.res\t")
        && lines[3].starts_with("Ours\t");
    let m = by_method(&t.rows);
    let ours = &m[MethodKind::Ours.label()];
    let nores = &m[MethodKind::OursNoResidual.label()];
    let ratios: Vec<(String, f64)> = ours.iter().map(|(a, o)| (a.clone(), nores[a] / o)).collect();
    let in_band = ratios.iter().filter(|(_, r)| (0.8..=1.5).contains(r)).count();
    let worst = ratios.iter().map(|(_, r)| *r).fold(f64::NAN, f64::max);
    let best = ratios.iter().map(|(_, r)| *r).fold(f64::NAN, f64::min);
    verdict(
        2,
        layout_ok && in_band == ratios.len() && ratios.len() == 8,
        &format!("no-residual/residual L2 ratio in [{best:.3}, {worst:.3}], {in_band}/8 within [0.8, 1.5], table layout ok: {layout_ok}"),
    );
}

#[test]
fn criterion_3_linear_world_agreement() {
    let _g = serial();
    let rows = cross_validate(
        &experiment_config(GeneratorMode::Linear),
        &[MethodKind::Baseline, MethodKind::Ours],
    );
    say(&format!("linear world, {FOLDS}-fold L2:\n{}", dataio::l2_table(&rows)));
    let m = by_method(&rows);
    let base = &m[MethodKind::Baseline.label()];
    let ours = &m[MethodKind::Ours.label()];
    let mut failures = Vec::new();
    for (a, b) in base {
        let o = ours[a];
        let agree = (b - o).abs() <= 0.10 * b.max(o);
        if !(agree && *b < 0.05 && o < 0.05) {
            failures.push(format!("{a} (baseline {b:.4}, ours {o:.4})"));
        }
    }
    let detail = if failures.is_empty() {
        "baseline and controller within 10% and below 0.05 on 8/8 attributes".to_string()
    } else {
        format!("{} attribute(s) outside 10% agreement or above 0.05: {}", failures.len(), failures.join(", "))
    };
    verdict(3, failures.is_empty(), &detail);
}

#[test]
fn criterion_4_mahalanobis_protocol() {
    let _g = serial();
    let cfg = experiment_config(GeneratorMode::Nonlinear);
    let (world, data) = datasets(&cfg);
    let draws = world.marginal_draws(cfg.reference_size, cfg.reference_seed).unwrap();
    let (latents, params): (Vec<_>, Vec<_>) = draws.into_iter().unzip();
    let mut rows = Vec::new();
    for d in &data {
        let h = d.manifest.hyperplane.to_hyperplane::<f64>(&d.manifest.attribute);
        let split = pipeline::reference_split(&latents, &params, &h, &cfg).unwrap();
        assert_eq!(split.test.len(), cfg.reference_size / 5);
        let s_max = d.manifest.s_max().unwrap();
        rows.extend(
            pipeline::mahalanobis_methods(&d.pairs, &split, s_max, &[MethodKind::Baseline, MethodKind::Ours], &cfg.train)
                .unwrap(),
        );
    }
    say(&format!("Mahalanobis distance to the target class:\n{}", dataio::mahalanobis_table(&rows)));
    let mut m: BTreeMap<&str, BTreeMap<&str, f64>> = BTreeMap::new();
    for r in &rows {
        m.entry(r.method.as_str()).or_default().insert(r.attribute.as_str(), r.mean);
    }
    let base = &m[MethodKind::Baseline.label()];
    let ours = &m[MethodKind::Ours.label()];
    let wins = base.keys().filter(|a| ours[*a] < base[*a]).count();
    verdict(4, base.len() == 8 && wins >= 6, &format!("controller closer than baseline on {wins}/8 attributes"));
}

#[test]
fn criterion_5_hyperplane_recovery() {
    let _g = serial();
    let cfg = RunConfig::default();
    let world: LatentWorld<f64> = pipeline::build_world(&cfg).unwrap();
    let mut worst: f64 = 0.0;
    for (i, a) in world.attributes.iter().enumerate() {
        let samples = world.separable_latents(&a.name, 2000, 0.5, 300 + i as u64).unwrap();
        let h = latent::fit_hyperplane(&a.name, &samples, &cfg.svm).unwrap();
        worst = worst.max(h.angle_to_deg(&a.u_true));
    }
    verdict(5, worst <= 5.0, &format!("worst angle to the true normal {worst:.3}° over 8 attributes"));
}

fn rel_err(est: &[f64], truth: &[f64]) -> f64 {
    let num: f64 = est.iter().zip(truth).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let den: f64 = truth.iter().map(|b| b * b).sum::<f64>().sqrt();
    num / den
}

#[test]
fn criterion_6_fitting_recovery() {
    let _g = serial();
    let cfg = RunConfig::default();
    let basis: MorphableBasis<f64> = pipeline::build_basis(&cfg).unwrap();
    let cam = CameraModel::default();
    let limit = 1e-3 * cam.image_width as f64;
    let landmark_cfg = FitConfig::landmarks_only();
    let pixel_cfg = FitConfig { lambda_reg: 1e-6, ..FitConfig::default() };
    let (mut converged, mut worst_rms) = (0, 0.0f64);
    let (mut tex_lm, mut tex_px) = (0.0, 0.0);
    const N: usize = 50;
    for i in 0..N {
        let truth = fitting::synthetic_face::<f64>(basis.dims(), 5000 + i as u64);
        let target = FitTarget::render(&truth, &basis, &cam, true).unwrap();
        let init = FaceParams::zeros(basis.dims());
        let lm = fitting::fit(&target, &basis, &cam, &init, &landmark_cfg).unwrap();
        let rms = fitting::landmark_rms(&lm.params, &target, &basis, &cam).unwrap();
        converged += lm.converged as usize;
        worst_rms = worst_rms.max(rms);
        let px = fitting::fit(&target, &basis, &cam, &init, &pixel_cfg).unwrap();
        tex_lm += rel_err(&lm.params.p_tex, &truth.p_tex) / N as f64;
        tex_px += rel_err(&px.params.p_tex, &truth.p_tex) / N as f64;
    }
    let reduction = 1.0 - tex_px / tex_lm;
    verdict(
        6,
        converged == N && worst_rms < limit && reduction >= 0.5,
        &format!(
            "{converged}/{N} landmark fits converged, worst RMS {worst_rms:.2e} px (limit {limit:.3}), p_tex error {tex_lm:.3} -> {tex_px:.3} with pixels ({:.1}% lower)",
            100.0 * reduction
        ),
    );
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| normal(rng)).collect()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn controller_gradient_error(draw: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(draw);
    let k = rng.gen_range(3..9);
    let hidden: Vec<usize> = (0..rng.gen_range(1..3)).map(|_| rng.gen_range(4..12)).collect();
    let residual = rng.gen_bool(0.5);
    let kind = if rng.gen_bool(0.5) { LossKind::Norm } else { LossKind::Squared };
    let mut c = Controller::<f64>::new("a", k, &hidden, residual, draw).unwrap();
    let flat: Vec<f64> = c.params_flat().iter().map(|w| w + 0.1 * normal(&mut rng)).collect();
    c.set_params_flat(&flat).unwrap();
    let src: Vec<Vec<f64>> = (0..4).map(|_| gaussian(&mut rng, k)).collect();
    let trg: Vec<Vec<f64>> = (0..4).map(|_| gaussian(&mut rng, k)).collect();
    let s = gaussian(&mut rng, 4);
    let batch: Vec<Example<f64>> = (0..4)
        .map(|i| Example { p_src: &src[i], s_trg: s[i], p_trg: &trg[i] })
        .collect();
    let (_, g) = controller::loss_and_grad(&c, &batch, kind).unwrap();
    let g = g.flat();
    let h = 1e-6;
    let mut probe = c.clone();
    let fd: Vec<f64> = (0..flat.len())
        .map(|j| {
            let mut x = flat.clone();
            x[j] += h;
            probe.set_params_flat(&x).unwrap();
            let lp = controller::loss(&probe, &batch, kind).unwrap();
            x[j] -= 2.0 * h;
            probe.set_params_flat(&x).unwrap();
            let lm = controller::loss(&probe, &batch, kind).unwrap();
            (lp - lm) / (2.0 * h)
        })
        .collect();
    let diff: Vec<f64> = g.iter().zip(&fd).map(|(a, b)| a - b).collect();
    norm(&diff) / norm(&fd)
}

fn jacobian_error(basis: &MorphableBasis<f64>, cam: &CameraModel<f64>, draw: u64) -> f64 {
    let truth = fitting::synthetic_face::<f64>(basis.dims(), 7000 + draw);
    let target = FitTarget::render(&truth, basis, cam, true).unwrap();
    let mut p = fitting::synthetic_face::<f64>(basis.dims(), 8000 + draw);
    p.p_cam = truth.p_cam;
    let cfg = if draw % 2 == 0 { FitConfig::default() } else { FitConfig::landmarks_only() };
    let problem = FitProblem::new(basis, cam, &target, &cfg).unwrap();
    let a = problem.analytic_jacobian(&p).unwrap();
    let n = problem.numeric_jacobian(&p).unwrap();
    let diff: Vec<f64> = a.as_slice().iter().zip(n.as_slice()).map(|(x, y)| x - y).collect();
    norm(&diff) / norm(n.as_slice())
}

/// Plain gradient descent on `‖P_c − p̂aᵀ‖_F²` down to a `1e-12` gradient.
fn rank_one_by_descent(pc: &Matrix<f64>, a: &[f64]) -> Vec<f64> {
    let aa: f64 = a.iter().map(|x| x * x).sum();
    let pa = pc.matvec(a);
    let mut p = vec![0.0; pc.rows()];
    let step = 0.2 / aa;
    loop {
        let grad: Vec<f64> = p.iter().zip(&pa).map(|(x, y)| 2.0 * (x * aa - y)).collect();
        if norm(&grad) < 1e-12 {
            return p;
        }
        p.iter_mut().zip(&grad).for_each(|(x, g)| *x -= step * g);
    }
}

fn rank_one_error(draw: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(draw);
    let (k, n) = (rng.gen_range(2..12), rng.gen_range(4..40));
    let p = Matrix::from_fn(k, n, |_, _| 3.0 * normal(&mut rng) + 1.0);
    let a = gaussian(&mut rng, n);
    let closed: GlobalDirection<f64> = baseline::fit_direction("a", &p, &a).unwrap();
    let pc = Matrix::from_fn(k, n, |r, c| p[(r, c)] - closed.center[r]);
    let descent = rank_one_by_descent(&pc, &a);
    closed.p_hat.iter().zip(&descent).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// `d(Ax + b; AX + b) = d(x; X)` with shrinkage disabled.
fn affine_invariance_error(draw: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(draw);
    let k = rng.gen_range(2..7);
    let pop: Vec<Vec<f64>> = (0..60).map(|_| gaussian(&mut rng, k)).collect();
    let a = Matrix::from_fn(k, k, |r, c| (if r == c { 2.0 } else { 0.0 }) + 0.5 * normal(&mut rng));
    let b = gaussian(&mut rng, k);
    let map = |x: &[f64]| -> Vec<f64> { a.matvec(x).iter().zip(&b).map(|(y, s)| y + s).collect() };
    let moved: Vec<Vec<f64>> = pop.iter().map(|x| map(x)).collect();
    let s0 = eval::population_stats(&pop, Some(0.0)).unwrap();
    let s1 = eval::population_stats(&moved, Some(0.0)).unwrap();
    let x = gaussian(&mut rng, k);
    let d0 = eval::mahalanobis(&x, &s0).unwrap();
    let d1 = eval::mahalanobis(&map(&x), &s1).unwrap();
    (d0 - d1).abs()
}

#[test]
fn criterion_7_numerical_oracles() {
    let _g = serial();
    const DRAWS: u64 = 100;
    let ctrl = (0..DRAWS).map(controller_gradient_error).fold(0.0, f64::max);
    let cfg = RunConfig::default();
    let basis: MorphableBasis<f64> = pipeline::build_basis(&cfg).unwrap();
    let cam = CameraModel::default();
    let jac = (0..DRAWS).map(|d| jacobian_error(&basis, &cam, d)).fold(0.0, f64::max);
    let rank1 = (0..DRAWS).map(rank_one_error).fold(0.0, f64::max);
    let maha = (0..DRAWS).map(affine_invariance_error).fold(0.0, f64::max);
    verdict(
        7,
        ctrl < 1e-4 && jac < 1e-4 && rank1 < 1e-8 && maha < 1e-8,
        &format!(
            "worst over {DRAWS} draws each: backprop {ctrl:.2e}, fitting Jacobian {jac:.2e}, rank-1 {rank1:.2e}, Mahalanobis {maha:.2e}"
        ),
    );
}

/// Small world → hyperplane → dataset → weights → report run, returning
/// every artifact as bytes.
fn small_pipeline(dir: &std::path::Path) -> Vec<Vec<u8>> {
    let mut cfg = RunConfig::default();
    cfg.basis_vertices = 162;
    cfg.train = TrainConfig { hidden: 16, epochs: 2, ..TrainConfig::default() };
    let world: LatentWorld<f64> = pipeline::build_world(&cfg).unwrap();
    let basis: MorphableBasis<f64> = pipeline::build_basis(&cfg).unwrap();
    let h = pipeline::fit_attribute_hyperplane(&world, "young", 500, 3, &cfg).unwrap();
    let data = pipeline::generate_dataset(&world, &basis, &h, 200, 7, GenerationMode::Direct, &cfg).unwrap();
    dataio::save_dataset(dir, &data).unwrap();
    let (c, _) = controller::train(&data.pairs, &cfg.train, true).unwrap();
    let rows = pipeline::l2cv_methods(&data.pairs, 7, &MethodKind::all(), &cfg.train, 4, 7).unwrap();
    let mut out: Vec<Vec<u8>> = Vec::new();
    let mut names: Vec<_> = std::fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
    names.sort();
    for p in names {
        out.push(std::fs::read(p).unwrap());
    }
    out.push(dataio::encode_weights(&Payload::Controller(c)));
    out.push(dataio::l2_table(&rows).into_bytes());
    out.push(serde_json::to_vec(&rows).unwrap());
    out
}

#[test]
fn criterion_8_invariant_suites() {
    let _g = serial();
    let mut failed: Vec<&str> = Vec::new();
    let cfg = RunConfig::default();
    let world: LatentWorld<f64> = pipeline::build_world(&cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);

    // Projection idempotence and shift consistency over 1,000 draws.
    let (mut idem, mut shift): (f64, f64) = (0.0, 0.0);
    for i in 0..1000 {
        let a = &world.attributes[i % world.attributes.len()];
        let h = latent::AttributeHyperplane::from_truth(a);
        let w = gaussian(&mut rng, world.d);
        let once = latent::project_to_hyperplane(&w, &h);
        let twice = latent::project_to_hyperplane(&once, &h);
        idem = idem.max(once.iter().zip(&twice).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max));
        let s = rng.gen_range(-3.0..3.0);
        let moved: Vec<f64> = once.iter().zip(&h.u_hat).map(|(x, u)| x + s * u).collect();
        shift = shift.max((latent::semantic_score(&moved, &h) - s).abs());
    }
    if idem > 1e-12 {
        failed.push("projection idempotence");
    }
    if shift > 1e-10 {
        failed.push("score-shift consistency");
    }

    // Identity at initialization, exactly.
    for seed in 0..20 {
        let c = Controller::<f64>::new("a", 40, &[32, 32], true, seed).unwrap();
        let p = gaussian(&mut rng, 40);
        if c.forward(&p, rng.gen_range(-2.0..2.0)).unwrap() != p {
            failed.push("controller identity at initialization");
            break;
        }
    }

    // Container round trips, bit for bit.
    let tmp = tempfile::tempdir().unwrap();
    let basis: MorphableBasis<f64> = pipeline::build_basis(&RunConfig { basis_vertices: 162, ..RunConfig::default() }).unwrap();
    let h = latent::AttributeHyperplane::from_truth(&world.attributes[0]);
    let data = pipeline::generate_dataset(&world, &basis, &h, 100, 21, GenerationMode::Direct, &cfg).unwrap();
    // Arrays are float32 on disk, so the reference is the quantized data.
    let mut quantized = data.clone();
    for p in quantized.pairs.iter_mut() {
        for x in p.w_proj.iter_mut().chain(p.p_pos.iter_mut()).chain(p.p_neg.iter_mut()) {
            *x = f64::from(*x as f32);
        }
        p.s_pos = f64::from(p.s_pos as f32);
        p.s_neg = f64::from(p.s_neg as f32);
    }
    dataio::save_dataset(&tmp.path().join("d"), &data).unwrap();
    let back = dataio::load_dataset::<f64>(&tmp.path().join("d")).unwrap();
    dataio::save_dataset(&tmp.path().join("d2"), &back).unwrap();
    let same_files = ["manifest.json", "id.u64", "w_proj.f32", "s_pos.f32", "s_neg.f32", "p_pos.f32", "p_neg.f32"]
        .iter()
        .all(|f| std::fs::read(tmp.path().join("d").join(f)).unwrap() == std::fs::read(tmp.path().join("d2").join(f)).unwrap());
    if back != quantized || !same_files {
        failed.push("dataset round trip");
    }
    let (c, _) = controller::train(&data.pairs, &TrainConfig { hidden: 8, epochs: 1, ..TrainConfig::default() }, true).unwrap();
    let weights = tmp.path().join("c.bin");
    dataio::save_weights(&weights, &Payload::Controller(c.clone())).unwrap();
    match dataio::load_weights::<f64>(&weights).unwrap() {
        Payload::Controller(d) if d.params_flat() == c.params_flat() && d == c => {}
        _ => failed.push("weight round trip"),
    }

    // The whole small pipeline twice under the same seeds.
    let a = small_pipeline(&tmp.path().join("run_a"));
    let b = small_pipeline(&tmp.path().join("run_b"));
    if a != b {
        failed.push("end-to-end determinism");
    }

    let detail = if failed.is_empty() {
        format!("idempotence {idem:.1e}, shift {shift:.1e}, identity at init, bit-exact containers, reproducible pipeline")
    } else {
        format!("broken: {}", failed.join(", "))
    };
    verdict(8, failed.is_empty(), &detail);
}
