//! Acceptance suite. Every criterion runs even if an earlier one fails; each
//! prints one PASS/FAIL line and the test fails if any criterion did.
//!
//! Run with `cargo test --release -p ual-core --test acceptance -- --nocapture`.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use ual_core::data::dataset::Dataset;
use ual_core::data::metrics::{f_measure, macro_average, support_weighted};
use ual_core::data::synth::{generate_dataset, SynthesisSpec};
use ual_core::embedding::{mc_predict, reparameterize, GaussianEmbedding};
use ual_core::losses::{kl_loss, rec_loss, LossTerms};
use ual_core::numerics::gradcheck::gradient_check;
use ual_core::numerics::{softmax, DenseMatrix, DenseVector, FixedNoise, Linear, NoiseSource, SeededRng};
use ual_core::pipeline::infer::prediction_spread;
use ual_core::pipeline::objectives::{corrupted_objective, run_standard_suite};
use ual_core::pipeline::train::fit;
use ual_core::pipeline::*;
use ual_core::quality::{fiqe_score, filter_embeddings};
use ual_core::scoring::importance;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

const SEEDS: u64 = 5;

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn config_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs")
}

fn bundled_spec() -> SynthesisSpec {
    SynthesisSpec::load(&config_dir().join("synthetic.spec")).expect("bundled synthetic spec")
}

fn bundled_config() -> TrainingConfig {
    TrainingConfig::load(&config_dir().join("train.cfg")).expect("bundled training config")
}

/// Train and validation sets for one seed; they share class centers.
fn seeded_data(seed: u64) -> (Dataset, Dataset) {
    let spec = SynthesisSpec {
        center_seed: 100 + seed,
        seed: 1000 + seed,
        ..bundled_spec()
    };
    let train = generate_dataset(&spec).unwrap().dataset;
    let val = generate_dataset(&SynthesisSpec {
        num_groups: 200,
        seed: 2000 + seed,
        ..spec
    })
    .unwrap()
    .dataset;
    (train, val)
}

fn face_config(seed: u64, ablation: Ablation, terms: &str) -> TrainingConfig {
    TrainingConfig {
        seed,
        ablation,
        loss_terms: LossTerms::parse(terms).unwrap(),
        branches: vec![Branch::Face],
        ..bundled_config()
    }
}

fn face_accuracy(seed: u64, ablation: Ablation, terms: &str) -> (f64, UalModel, TrainingConfig) {
    let (train, val) = seeded_data(seed);
    let cfg = face_config(seed, ablation, terms);
    let run = fit(&train, None, &cfg, |_, _| Ok(())).unwrap();
    let e = evaluate(&run.model, &val, &InferenceSettings::from_config(&cfg), cfg.fusion).unwrap();
    (e.fused.uar, run.model, cfg)
}

fn mean_accuracy(ablation: Ablation, terms: &str) -> f64 {
    (0..SEEDS).map(|s| face_accuracy(s, ablation, terms).0).sum::<f64>() / SEEDS as f64
}

fn gradient_fidelity() -> Outcome {
    let t0 = Instant::now();
    let reports = run_standard_suite(0..SEEDS, 1e-4).map_err(|e| e.to_string())?;
    let elapsed = t0.elapsed();
    let worst = reports.iter().map(|r| r.max_rel_error()).fold(0.0, f64::max);
    if let Some(bad) = reports.iter().find(|r| !r.passed()) {
        return Err(format!("{bad}"));
    }
    for term in ["face.cls", "object.cls", "face.kl", "object.kl", "face.rank", "face.rec", "unit.gaussian_head", "unit.linear"] {
        let n = reports.iter().filter(|r| r.objective.starts_with(&format!("{term} seed"))).count();
        check(n as u64 >= SEEDS, || format!("{term} checked on {n} instances"))?;
    }
    let corrupted = gradient_check(&corrupted_objective(0), 1e-4).map_err(|e| e.to_string())?;
    check(!corrupted.passed(), || "corrupted backward passed the check".into())?;
    check(elapsed < Duration::from_secs(30), || format!("took {elapsed:?}"))?;
    Ok(format!("{} checks, max rel err {worst:.2e}, {elapsed:.2?}", reports.len()))
}

fn kl_identities() -> Outcome {
    let unit = GaussianEmbedding::new(DenseVector::new(vec![0.0; 4]), DenseVector::new(vec![1.0; 4])).unwrap();
    check(kl_loss(&[unit]).unwrap() == 0.0, || "KL(N(0,1)) is not exactly 0".into())?;
    let shifted = GaussianEmbedding::new(DenseVector::new(vec![1.0]), DenseVector::new(vec![1.0])).unwrap();
    let v = kl_loss(&[shifted]).unwrap();
    check(v == 0.5, || format!("KL(N(1,1)) = {v}"))?;
    let mut rng = SeededRng::new(2);
    let mut min = f64::INFINITY;
    for _ in 0..10_000 {
        let d = 1 + rng.below(8);
        let mu: Vec<f64> = (0..d).map(|_| 5.0 * rng.standard_normal()).collect();
        let sigma: Vec<f64> = (0..d).map(|_| (3.0 * rng.standard_normal()).exp()).collect();
        let e = GaussianEmbedding::new(DenseVector::new(mu), DenseVector::new(sigma)).unwrap();
        min = min.min(kl_loss(&[e]).unwrap());
    }
    check(min >= 0.0, || format!("negative KL {min}"))?;
    Ok(format!("min over 10^4 random embeddings {min:.3e}"))
}

fn reparameterization() -> Outcome {
    let mut rng = SeededRng::new(3);
    let mu: Vec<f64> = (0..6).map(|_| rng.standard_normal()).collect();
    let sigma: Vec<f64> = (0..6).map(|_| rng.uniform() + 0.1).collect();
    let emb = GaussianEmbedding::new(DenseVector::new(mu.clone()), DenseVector::new(sigma)).unwrap();
    let draw = reparameterize(&emb, &mut FixedNoise::zeros());
    check(draw.z_star.as_slice() == mu.as_slice(), || "z* differs from mu".into())?;
    let rec = rec_loss(&draw.z_star, &mu).unwrap();
    check(rec == 0.0, || format!("rec loss {rec}"))?;
    let weights: Vec<f64> = (0..18).map(|_| rng.standard_normal()).collect();
    let classifier = Linear::new(
        DenseMatrix::from_vec(3, 6, weights).unwrap(),
        DenseVector::new(vec![0.1, -0.2, 0.3]),
    )
    .unwrap();
    let direct = softmax(&classifier.apply(&mu).unwrap());
    let single = mc_predict(&emb, &classifier, 1, &mut FixedNoise::zeros()).unwrap();
    check(single.probs == direct, || "single-sample MC prediction differs".into())?;
    // Averaging identical copies may round in the last place.
    let mc = mc_predict(&emb, &classifier, 25, &mut FixedNoise::zeros()).unwrap();
    let diff = mc.probs.max_abs_diff(&direct).unwrap();
    check(diff <= 1e-15, || format!("MC prediction differs by {diff:e}"))?;
    Ok(format!("z* = mu, rec = 0, MC = deterministic (N=25 rounding {diff:.1e})"))
}

fn score_algebra() -> Outcome {
    let mut rng = SeededRng::new(4);
    let mut worst = 0.0_f64;
    for g in 0..1000 {
        let n = 2 + rng.below(10);
        let scores: Vec<f64> = (0..n).map(|i| rng.uniform() * 10.0 + i as f64 * 1e-9).collect();
        let alphas = importance(&scores).alphas;
        let lo = scores.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        for (a, s) in alphas.iter().zip(&scores) {
            worst = worst.max((a + s - (lo + hi)).abs());
        }
        let order = |v: &[f64]| {
            let mut idx: Vec<usize> = (0..v.len()).collect();
            idx.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
            idx
        };
        let mut reversed = order(&scores);
        reversed.reverse();
        check(order(&alphas) == reversed, || format!("group {g}: alpha order is not the reversed score order"))?;
    }
    check(worst <= 1e-12, || format!("alpha + s off by {worst:e}"))?;
    let flat = importance(&[0.7; 5]).alphas;
    check(flat.iter().all(|&a| a == 1.0), || format!("equal scores gave {flat:?}"))?;
    Ok(format!("max |alpha + s - (min + max)| = {worst:.1e}"))
}

fn metric_reproduction() -> Outcome {
    let recall = [84.16, 75.18, 78.62];
    let precision = [87.57, 73.93, 76.08];
    let published_f = [85.83, 74.55, 77.33];
    let ave = macro_average(&recall);
    check((ave - 79.32).abs() <= 0.005, || format!("Ave = {ave}"))?;
    for ((p, r), f) in precision.iter().zip(&recall).zip(&published_f) {
        let got = f_measure(*p, *r);
        check((got - f).abs() <= 0.01, || format!("F({p}, {r}) = {got}, expected {f}"))?;
    }
    let uar = support_weighted(&recall, &[773, 728, 564]);
    check((uar - 79.52).abs() <= 0.1, || format!("support-weighted recall {uar}"))?;
    Ok(format!("Ave {ave:.3}, weighted recall {uar:.3}"))
}

fn quality_filter() -> Outcome {
    let same = vec![DenseVector::new(vec![0.3, -1.2, 4.0]); 5];
    let s = fiqe_score(&same).unwrap();
    check(s == 1.0, || format!("identical embeddings scored {s}"))?;
    let pair = [DenseVector::new(vec![0.0, 0.0]), DenseVector::new(vec![2.0, 0.0])];
    let s = fiqe_score(&pair).unwrap();
    let oracle = 2.0 / (1.0 + 1f64.exp());
    check((s - oracle).abs() <= 1e-12, || format!("pair at distance 2 scored {s}, expected {oracle}"))?;
    let mut rng = SeededRng::new(6);
    for g in 0..200 {
        let n = 1 + rng.below(8);
        let faces: Vec<GaussianEmbedding> = (0..n)
            .map(|_| {
                let mu = rng.standard_normal_vec(8);
                let sigma = DenseVector::new((0..8).map(|_| 1.0 + 5.0 * rng.uniform()).collect());
                GaussianEmbedding::new(mu, sigma).unwrap()
            })
            .collect();
        let mut noise: Vec<SeededRng> = (0..n as u64).map(|k| SeededRng::stream(g, &[k])).collect();
        let out = filter_embeddings(&faces, 8, 0.9, &mut noise).unwrap();
        check(!out.kept.is_empty(), || format!("group {g} emptied"))?;
    }
    Ok(format!("pair score {s:.15}"))
}

fn fusion() -> Outcome {
    let pred = |b: Branch, p: &[f64]| BranchPrediction::new(b, DenseVector::new(p.to_vec()));
    let mut rng = SeededRng::new(7);
    for _ in 0..1000 {
        let preds: Vec<BranchPrediction> = Branch::ALL
            .iter()
            .map(|&b| {
                let raw: Vec<f64> = (0..3).map(|_| rng.uniform() + 1e-3).collect();
                let t: f64 = raw.iter().sum();
                pred(b, &raw.iter().map(|v| v / t).collect::<Vec<_>>())
            })
            .collect();
        let f = pwfs_fuse(&preds).unwrap();
        let total: f64 = f.weights.iter().map(|(_, w)| w).sum();
        check(f.weights.iter().all(|(_, w)| *w >= 0.0), || "negative weight".into())?;
        check((total - 1.0).abs() <= 1e-12, || format!("weights sum to {total}"))?;
    }
    let same = [0.2, 0.5, 0.3];
    let f = pwfs_fuse(&Branch::ALL.map(|b| pred(b, &same))).unwrap();
    let drift = f.probs.max_abs_diff(&DenseVector::new(same.to_vec())).unwrap();
    check(drift <= 1e-12, || format!("fixed point drifted by {drift}"))?;

    let sc = [[0.8, 0.1, 0.1], [0.4, 0.3, 0.3], [0.5, 0.25, 0.25]];
    let f = pwfs_fuse(&[pred(Branch::Face, &sc[0]), pred(Branch::Object, &sc[1]), pred(Branch::Scene, &sc[2])]).unwrap();
    let conf = [0.8, 0.4, 0.5];
    let z: f64 = conf.iter().sum();
    for (k, (_, w)) in f.weights.iter().enumerate() {
        check((w - conf[k] / z).abs() <= 1e-12, || format!("weight {k} = {w}"))?;
    }
    #[allow(clippy::needless_range_loop)]
    for c in 0..3 {
        let oracle: f64 = (0..3).map(|b| conf[b] / z * sc[b][c]).sum();
        check((f.probs[c] - oracle).abs() <= 1e-12, || format!("class {c}: {} vs {oracle}", f.probs[c]))?;
    }
    Ok("weights on simplex, fixed point and worked example hold".into())
}

fn uncertainty_benefit() -> Outcome {
    let ual = mean_accuracy(Ablation::NoFiqe, "cls+kl+rank+rec");
    let base = mean_accuracy(Ablation::NoUalFiqe, "cls+kl+rank+rec");
    let gain = 100.0 * (ual - base);
    check(gain >= 3.0, || format!("UAL {:.2} vs mean baseline {:.2}: gain {gain:.2} points", 100.0 * ual, 100.0 * base))?;

    let (train, val) = seeded_data(0);
    let cfg = bundled_config();
    let t0 = Instant::now();
    fit(&train, Some(&val), &cfg, |_, _| Ok(())).map_err(|e| e.to_string())?;
    let elapsed = t0.elapsed();
    check(elapsed < Duration::from_secs(300), || format!("full run took {elapsed:?}"))?;
    Ok(format!(
        "UAL {:.2} vs mean baseline {:.2} (+{gain:.2} points); full run {elapsed:.1?}",
        100.0 * ual,
        100.0 * base
    ))
}

fn loss_term_ablation() -> Outcome {
    let configs = ["cls", "cls+kl", "cls+kl+rank", "cls+kl+rank+rec"];
    let acc: Vec<f64> = configs.iter().map(|t| 100.0 * mean_accuracy(Ablation::Full, t)).collect();
    let table = configs
        .iter()
        .zip(&acc)
        .map(|(t, a)| format!("{t} {a:.2}"))
        .collect::<Vec<_>>()
        .join(", ");
    check(acc[1] >= acc[0], || format!("adding kl lowered accuracy: {table}"))?;
    let best = acc.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    check(acc[3] >= best - 0.5, || format!("full loss not within 0.5 of best: {table}"))?;
    Ok(table)
}

fn sampling_study() -> Outcome {
    let (_, model, cfg) = face_accuracy(0, Ablation::Full, "cls+kl+rank+rec");
    let (_, val) = seeded_data(0);
    let base = InferenceSettings::from_config(&cfg);
    let at = |n: usize| InferenceSettings { mc_samples: n, ..base };
    let mut better = 0;
    for g in &val.groups {
        let one = prediction_spread(&model, Branch::Face, g, &at(1), 20).unwrap();
        let many = prediction_spread(&model, Branch::Face, g, &at(64), 20).unwrap();
        if many < one {
            better += 1;
        }
    }
    let frac = better as f64 / val.len() as f64;
    check(frac >= 0.95, || format!("std smaller at N=64 on only {:.1}% of groups", 100.0 * frac))?;
    Ok(format!("std smaller at N=64 on {:.1}% of groups", 100.0 * frac))
}

fn run_cli(dir: &Path, args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_ual"))
        .args(args)
        .current_dir(dir)
        .env("UAL_LOG_LEVEL", "error")
        .output()
        .map_err(|e| e.to_string())?;
    check(out.status.success(), || {
        format!("ual {} failed: {}", args.join(" "), String::from_utf8_lossy(&out.stderr))
    })
}

fn full_cli_run(dir: &Path) -> Result<(), String> {
    let configs = config_dir();
    let spec = configs.join("synthetic.spec");
    let cfg = configs.join("train.cfg");
    let val_spec = dir.join("val.spec");
    let text = std::fs::read_to_string(&spec).map_err(|e| e.to_string())?;
    let text: String = text
        .lines()
        .map(|l| if l.trim_start().starts_with("num_groups") { "num_groups = 200".to_string() } else { l.to_string() })
        .map(|l| l + "\n")
        .collect();
    std::fs::write(&val_spec, text).map_err(|e| e.to_string())?;
    run_cli(dir, &["simulate", "--config", spec.to_str().unwrap(), "--out", "train.jsonl"])?;
    run_cli(dir, &["simulate", "--config", "val.spec", "--seed", "2", "--out", "val.jsonl"])?;
    run_cli(
        dir,
        &["train", "--config", cfg.to_str().unwrap(), "--train", "train.jsonl", "--val", "val.jsonl", "--out", "run"],
    )?;
    run_cli(
        dir,
        &["eval", "--manifest", "run/manifest.json", "--data", "val.jsonl", "--fusion", "pwfs,equal", "--out", "report.jsonl"],
    )
}

fn files_under(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.is_dir() {
            out.extend(files_under(&path));
        } else {
            out.push(path);
        }
    }
    out.sort();
    out
}

fn determinism() -> Outcome {
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    full_cli_run(a.path())?;
    full_cli_run(b.path())?;
    let fa = files_under(a.path());
    let fb = files_under(b.path());
    let rel = |root: &Path, v: &[PathBuf]| v.iter().map(|p| p.strip_prefix(root).unwrap().to_path_buf()).collect::<Vec<_>>();
    check(rel(a.path(), &fa) == rel(b.path(), &fb), || "runs wrote different file sets".into())?;
    for (x, y) in fa.iter().zip(&fb) {
        let same = std::fs::read(x).map_err(|e| e.to_string())? == std::fs::read(y).map_err(|e| e.to_string())?;
        check(same, || format!("{} differs", x.strip_prefix(a.path()).unwrap().display()))?;
    }
    Ok(format!("{} files byte-identical", fa.len()))
}

#[test]
fn acceptance_criteria() {
    let criteria: [Criterion; 11] = [
        ("gradient fidelity", gradient_fidelity),
        ("KL identities", kl_identities),
        ("reparameterization", reparameterization),
        ("score and weight algebra", score_algebra),
        ("published metric reproduction", metric_reproduction),
        ("quality filter", quality_filter),
        ("fusion", fusion),
        ("end-to-end uncertainty benefit", uncertainty_benefit),
        ("loss-term ablation direction", loss_term_ablation),
        ("Monte-Carlo sampling study", sampling_study),
        ("determinism", determinism),
    ];
    let mut failed = Vec::new();
    for (i, (name, f)) in criteria.iter().enumerate() {
        let t0 = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let n = i + 1;
        match outcome {
            Ok(detail) => println!("criterion {n:>2} {name}: PASS ({detail}) [{:.1?}]", t0.elapsed()),
            Err(why) => {
                println!("criterion {n:>2} {name}: FAIL ({why}) [{:.1?}]", t0.elapsed());
                failed.push(n);
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
