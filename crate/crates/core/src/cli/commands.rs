use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde_json::{json, Value};

use super::manifest::{DatasetRef, RunManifest, MANIFEST_FILE};
use super::{EvalArgs, GradcheckArgs, SimulateArgs, TrainArgs};
use crate::data::dataset::{file_sha256, Dataset};
use crate::data::synth::{generate_dataset, SynthesisSpec};
use crate::error::{Result, UalError};
use crate::losses::LossBreakdown;
use crate::numerics::gradcheck::{gradient_check, GradCheckReport};
use crate::numerics::ParameterStore;
use crate::pipeline::config::{branches_to_string, Branch, TrainingConfig};
use crate::pipeline::eval::{evaluate, Evaluation};
use crate::pipeline::infer::{prediction_spread, InferenceSettings};
use crate::pipeline::model::UalModel;
use crate::pipeline::objectives::{corrupted_objective, run_standard_suite};
use crate::pipeline::train::fit;

pub const LOSS_HEADER: &str = "epoch,cls,kl,rank,rec,total";
pub const VAL_METRICS_FILE: &str = "val_metrics.jsonl";

pub fn loss_log_file(b: Branch) -> String {
    format!("{b}.loss.csv")
}

pub fn model_file(b: Branch) -> String {
    format!("{b}.params.json")
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| UalError::io(path, e))
}

fn write_line(w: &mut impl Write, path: &Path, line: &str) -> Result<()> {
    writeln!(w, "{line}").map_err(|e| UalError::io(path, e))
}

pub fn simulate(a: &SimulateArgs) -> Result<()> {
    let mut spec = match &a.config {
        Some(p) => SynthesisSpec::load(p)?,
        None => SynthesisSpec::default(),
    };
    if let Some(seed) = a.seed {
        spec.seed = seed;
    }
    let generated = generate_dataset(&spec)?;
    generated.dataset.save(&a.out)?;
    log::info!(
        "wrote {} groups to {} (sha256 {})",
        generated.dataset.len(),
        a.out.display(),
        file_sha256(&a.out)?
    );
    Ok(())
}

fn loss_row(epoch: usize, l: &LossBreakdown) -> String {
    format!("{epoch},{},{},{},{},{}", l.cls, l.kl, l.rank, l.rec, l.total)
}

fn evaluation_records(e: &Evaluation, extra: &Value) -> Vec<Value> {
    let mut out = Vec::new();
    for (b, m) in &e.per_branch {
        out.push(with_fields(extra, json!({"record": "metrics", "scope": b.as_str(), "metrics": m})));
    }
    out.push(with_fields(extra, json!({"record": "metrics", "scope": "fused", "metrics": e.fused})));
    out
}

/// `base` with every field of `extra` added in front.
fn with_fields(extra: &Value, base: Value) -> Value {
    let mut map = serde_json::Map::new();
    if let (Value::Object(e), Value::Object(b)) = (extra, base) {
        for (k, v) in e.iter().chain(b.iter()) {
            map.insert(k.clone(), v.clone());
        }
    }
    Value::Object(map)
}

pub fn train(a: &TrainArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => TrainingConfig::load(p)?,
        None => TrainingConfig::default(),
    };
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(b) = &a.branch {
        cfg.branches = b.0.clone();
    }
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    if let Some(x) = a.ablation {
        cfg.ablation = x;
    }
    if let Some(f) = a.fusion {
        cfg.fusion = f;
    }
    if let Some(n) = a.mc_samples {
        cfg.mc_samples = n;
    }
    cfg.validate()?;

    let train = Dataset::load(&a.train)?;
    let val = a.val.as_deref().map(Dataset::load).transpose()?;
    std::fs::create_dir_all(&a.out).map_err(|e| UalError::io(&a.out, e))?;

    let mut loss_logs = BTreeMap::new();
    for &b in &cfg.branches {
        let path = a.out.join(loss_log_file(b));
        let mut w = create(&path)?;
        write_line(&mut w, &path, LOSS_HEADER)?;
        loss_logs.insert(b, (path, w));
    }
    let val_path = a.out.join(VAL_METRICS_FILE);
    let mut val_log = match val {
        Some(_) => Some(create(&val_path)?),
        None => None,
    };

    let run = fit(&train, val.as_ref(), &cfg, |report, record| {
        for (b, l) in &report.losses {
            if let Some((path, w)) = loss_logs.get_mut(b) {
                write_line(w, path, &loss_row(report.epoch, l))?;
                w.flush().map_err(|e| UalError::io(path.as_path(), e))?;
            }
        }
        if let (Some(w), Some(r)) = (val_log.as_mut(), record) {
            for rec in evaluation_records(&r.evaluation, &json!({"epoch": r.epoch})) {
                write_line(w, &val_path, &rec.to_string())?;
            }
            w.flush().map_err(|e| UalError::io(&val_path, e))?;
        }
        Ok(())
    })?;

    let mut models = BTreeMap::new();
    for b in run.model.branches() {
        if let Some(store) = run.model.branch_store(b)? {
            let name = model_file(b);
            store.save(&a.out.join(&name))?;
            models.insert(b.as_str().to_string(), name);
        }
    }
    let manifest = RunManifest {
        tool: env!("CARGO_PKG_NAME").to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed: cfg.seed,
        config: cfg
            .to_pairs()
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect(),
        train: DatasetRef::of(&a.train)?,
        val: a.val.as_deref().map(DatasetRef::of).transpose()?,
        models,
        selected_epoch: run.selected_epoch,
    };
    manifest.save(&a.out.join(MANIFEST_FILE))?;
    log::info!("trained {} for {} epochs into {}", branches_to_string(&cfg.branches), cfg.epochs, a.out.display());
    Ok(())
}

fn load_model(manifest: &RunManifest, dir: &Path) -> Result<UalModel> {
    let mut store = ParameterStore::new();
    for file in manifest.models.values() {
        store.merge(ParameterStore::load(&dir.join(file))?);
    }
    UalModel::from_store(store)
}

/// Mean prediction spread of each stochastic branch over all groups.
fn mean_spread(model: &UalModel, data: &Dataset, s: &InferenceSettings, repeats: usize) -> Result<Vec<(Branch, f64)>> {
    let mut out = Vec::new();
    for b in model.branches() {
        if b == Branch::Scene {
            continue;
        }
        let spreads: Vec<f64> = data
            .groups
            .par_iter()
            .map(|g| prediction_spread(model, b, g, s, repeats))
            .collect::<Result<_>>()?;
        out.push((b, spreads.iter().sum::<f64>() / spreads.len().max(1) as f64));
    }
    Ok(out)
}

pub fn eval(a: &EvalArgs) -> Result<()> {
    let manifest = RunManifest::load(&a.manifest)?;
    let data_sha = manifest.check_dataset(&a.data, a.force)?;
    let dir = a.manifest.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."));
    let mut cfg = manifest.config()?;
    if let Some(x) = a.ablation {
        cfg.ablation = x;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    let mut model = load_model(&manifest, &dir)?;
    if let Some(keep) = &a.branch {
        for b in Branch::ALL {
            if !keep.0.contains(&b) {
                match b {
                    Branch::Face => model.face = None,
                    Branch::Object => model.object = None,
                    Branch::Scene => model.scene = None,
                }
            }
        }
    }
    if model.branches().is_empty() {
        return Err(UalError::InvalidArgument("no trained branch selected".into()));
    }
    let data = Dataset::load(&a.data)?;
    let fusions = if a.fusion.is_empty() { vec![cfg.fusion] } else { a.fusion.clone() };
    let mc = if a.mc_samples.is_empty() { vec![cfg.mc_samples] } else { a.mc_samples.clone() };
    if let Some(&bad) = mc.iter().find(|&&n| n == 0) {
        return Err(UalError::InvalidArgument(format!("--mc-samples must be positive, got {bad}")));
    }

    let mut records = vec![json!({
        "record": "run",
        "data_sha256": data_sha,
        "groups": data.len(),
        "branches": model.branches().iter().map(|b| b.as_str()).collect::<Vec<_>>(),
        "ablation": cfg.ablation.as_str(),
        "seed": cfg.seed,
    })];
    let mut sweep = Vec::new();
    for &n in &mc {
        let settings = InferenceSettings {
            mc_samples: n,
            ..InferenceSettings::from_config(&cfg)
        };
        let mut first_uar = None;
        for &f in &fusions {
            let e = evaluate(&model, &data, &settings, f)?;
            let tag = json!({"fusion": f.as_str(), "mc_samples": n});
            records.extend(evaluation_records(&e, &tag));
            for (p, g) in e.predictions.iter().zip(&data.groups) {
                records.push(with_fields(
                    &tag,
                    json!({"record": "group", "id": p.id, "truth": g.label, "prediction": p}),
                ));
            }
            first_uar.get_or_insert(e.fused.uar);
        }
        if mc.len() > 1 {
            let spread = mean_spread(&model, &data, &settings, a.spread_repeats)?;
            let spread: serde_json::Map<String, Value> =
                spread.into_iter().map(|(b, v)| (b.as_str().to_string(), json!(v))).collect();
            sweep.push(json!({
                "record": "sweep",
                "mc_samples": n,
                "fusion": fusions[0].as_str(),
                "fused_uar": first_uar,
                "spread": spread,
            }));
        }
    }
    records.extend(sweep);

    match &a.out {
        Some(path) => {
            let mut w = create(path)?;
            for r in &records {
                write_line(&mut w, path, &r.to_string())?;
            }
            w.flush().map_err(|e| UalError::io(path, e))?;
            print!("{}", render_tables(&records));
        }
        None => {
            let stdout = std::io::stdout();
            let mut w = stdout.lock();
            for r in &records {
                write_line(&mut w, Path::new("<stdout>"), &r.to_string())?;
            }
        }
    }
    Ok(())
}

fn pct(v: &Value) -> String {
    v.as_f64().map_or_else(|| "-".into(), |x| format!("{:.2}", 100.0 * x))
}

/// Human-readable summary built from the report records.
pub fn render_tables(records: &[Value]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<16} {:>5} {:<7} {:>7} {:>7} {:>7} {:>7}",
        "fusion", "N", "scope", "UAR", "Ave.R", "Ave.P", "Ave.F"
    );
    for r in records.iter().filter(|r| r["record"] == "metrics") {
        let m = &r["metrics"];
        let _ = writeln!(
            s,
            "{:<16} {:>5} {:<7} {:>7} {:>7} {:>7} {:>7}",
            r["fusion"].as_str().unwrap_or("-"),
            r["mc_samples"].as_u64().unwrap_or(0),
            r["scope"].as_str().unwrap_or("-"),
            pct(&m["uar"]),
            pct(&m["ave_recall"]),
            pct(&m["ave_precision"]),
            pct(&m["ave_f_measure"]),
        );
    }
    let sweep: Vec<&Value> = records.iter().filter(|r| r["record"] == "sweep").collect();
    if !sweep.is_empty() {
        let _ = writeln!(s, "\n{:>5} {:>9} {:>12} {:>12}", "N", "fused UAR", "face std", "object std");
        for r in sweep {
            let std = |b: &str| r["spread"][b].as_f64().map_or_else(|| "-".into(), |v| format!("{v:.6}"));
            let _ = writeln!(
                s,
                "{:>5} {:>9} {:>12} {:>12}",
                r["mc_samples"].as_u64().unwrap_or(0),
                pct(&r["fused_uar"]),
                std("face"),
                std("object")
            );
        }
    }
    s
}

/// Objective label without its instance seed, e.g. `face.rank`.
fn term_of(report: &GradCheckReport) -> &str {
    report.objective.split(" seed ").next().unwrap_or(&report.objective)
}

pub fn gradcheck(a: &GradcheckArgs) -> Result<i32> {
    if !(a.tolerance > 0.0) {
        return Err(UalError::InvalidArgument(format!("--tolerance must be positive, got {}", a.tolerance)));
    }
    let mut reports = run_standard_suite(0..a.seeds, a.tolerance)?;
    if a.self_test {
        reports.push(gradient_check(&corrupted_objective(0), a.tolerance)?);
    }
    let mut terms: Vec<(String, f64, bool)> = Vec::new();
    for r in &reports {
        let term = term_of(r);
        match terms.iter_mut().find(|(t, _, _)| t == term) {
            Some(entry) => {
                entry.1 = entry.1.max(r.max_rel_error());
                entry.2 &= r.passed();
            }
            None => terms.push((term.to_string(), r.max_rel_error(), r.passed())),
        }
    }
    println!("{:<36} {:>12}  status", "term", "max rel err");
    for (term, err, ok) in &terms {
        println!("{term:<36} {err:>12.3e}  {}", if *ok { "PASS" } else { "FAIL" });
    }
    let failed: Vec<&GradCheckReport> = reports.iter().filter(|r| !r.passed()).collect();
    for r in &failed {
        print!("\n{r}");
    }
    if failed.is_empty() {
        println!("\nall {} checks passed (tolerance {:e})", reports.len(), a.tolerance);
        Ok(0)
    } else {
        println!("\n{} of {} checks failed (tolerance {:e})", failed.len(), reports.len(), a.tolerance);
        Ok(3)
    }
}
