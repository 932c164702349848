use std::path::{Path, PathBuf};

use rebat_core::diagnostics::{confusion, evaluate_robust, loss_landscape_1d, symmetry_metric};
use rebat_core::experiment::{to_toml, DiagnosticKind, ExperimentConfig};
use rebat_core::io::write_atomic;
use rebat_core::train::{config_hash, read_metrics_csv, robust_gap, Checkpoint, Init, Splits, TrainConfig, TrainingState};
use rebat_core::{Dataset, Error, Model, Result, Trainer};
use serde_json::json;

use crate::args::{EvalArgs, TrainArgs};
use crate::artifacts::{self, emit_json, load_model, load_source, write_csv, Precision};

struct Data {
    train: Dataset<Precision>,
    val: Option<Dataset<Precision>>,
    test: Dataset<Precision>,
}

fn load_experiment(a: &TrainArgs) -> Result<(ExperimentConfig, PathBuf, Data)> {
    let exp = ExperimentConfig::load(&a.config)?;
    let out = a.out.clone().unwrap_or_else(|| exp.out_dir.clone());
    let (train, val, test) = exp.dataset.load::<Precision>()?;
    Ok((exp, out, Data { train, val, test }))
}

fn write_snapshot(exp: &ExperimentConfig, dir: &Path) -> Result<String> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    let hash = config_hash(exp);
    let text = format!("# config_hash: {hash}\n{}", to_toml(exp)?);
    write_atomic(&dir.join("experiment.toml"), text.as_bytes())?;
    Ok(hash)
}

/// Latest resumable state in a run directory.
fn resume_state(dir: &Path) -> Result<TrainingState<Precision>> {
    let mut candidates = vec![dir.join("last_good.ckpt"), dir.join("final.ckpt")];
    if let Ok(entries) = std::fs::read_dir(dir.join("checkpoints")) {
        candidates.extend(entries.filter_map(|e| e.ok()).map(|e| e.path()));
    }
    let mut best: Option<TrainingState<Precision>> = None;
    for p in candidates.iter().filter(|p| p.is_file()) {
        let s = Checkpoint::<Precision>::load(p)?.state;
        if best.as_ref().is_none_or(|b| s.epoch > b.epoch) {
            best = Some(s);
        }
    }
    best.ok_or_else(|| Error::Empty(format!("no checkpoint to resume in {}", dir.display())))
}

fn run_one(exp: &ExperimentConfig, cfg: &TrainConfig, dir: &Path, data: &Data, resume: bool) -> Result<Vec<rebat_core::train::EpochMetrics>> {
    let spec = exp.model_spec();
    let teacher = match cfg.kd.as_ref().and_then(|k| k.teacher.as_ref()) {
        Some(p) => Some(Checkpoint::<Precision>::load(p)?.model()?),
        None => None,
    };
    let init = if resume { Init::Resume(resume_state(dir)?) } else { Init::Fresh };
    let mut trainer = Trainer::new(cfg, &spec).run_dir(dir).init(init);
    if let Some(t) = &teacher {
        trainer = trainer.teacher(t);
    }
    let splits = Splits {
        train: &data.train,
        val: data.val.as_ref(),
        test: &data.test,
    };
    let result = trainer.run(&splits)?;
    Ok(result.state.history)
}

fn post_diagnostics(exp: &ExperimentConfig, dir: &Path, hash: &str, test: &Dataset<Precision>) -> Result<()> {
    if exp.diagnostics.is_empty() {
        return Ok(());
    }
    let ckpt = Checkpoint::<Precision>::load(&dir.join("final.ckpt"))?;
    let model: Model<Precision> = if exp.train.wa.enabled { ckpt.wa_model()? } else { ckpt.model()? };
    let attack = exp.train.eval_attack;
    let seed = exp.seed;
    let needs_matrix = exp.diagnostics.iter().any(|d| matches!(d, DiagnosticKind::Confusion | DiagnosticKind::Symmetry));
    let cm = if needs_matrix {
        Some(confusion(&model, test, &attack, seed)?.with_meta("final.ckpt", "test", attack))
    } else {
        None
    };
    for d in &exp.diagnostics {
        match d {
            DiagnosticKind::Confusion => {
                let cm = cm.as_ref().expect("computed above");
                let path = dir.join("confusion_final.json");
                let mut v = serde_json::to_value(cm)?;
                v["config_hash"] = json!(hash);
                write_atomic(&path, serde_json::to_string_pretty(&v)?.as_bytes())?;
                let rows: Vec<String> = cm.to_csv(false).lines().map(String::from).collect();
                let header = (0..cm.classes).map(|j| format!("pred_{j}")).collect::<Vec<_>>().join(",");
                write_csv(&dir.join("confusion_final.csv"), hash, &header, &rows)?;
            }
            DiagnosticKind::Symmetry => {
                let cm = cm.as_ref().expect("computed above");
                let v = json!({
                    "checkpoint": "final.ckpt",
                    "rates": symmetry_metric(&cm.rates, cm.classes)?,
                    "counts": symmetry_metric(&cm.counts_f64(), cm.classes)?,
                    "config_hash": hash,
                });
                write_atomic(&dir.join("symmetry_final.json"), serde_json::to_string_pretty(&v)?.as_bytes())?;
            }
            DiagnosticKind::Landscape => {
                let curve = loss_landscape_1d(&model, test, &attack, 21, 1.0, seed)?;
                let rows: Vec<String> = curve
                    .iter()
                    .map(|p| format!("{:.6},{}", p.t, p.loss.map_or(String::new(), |l| format!("{l:.6}"))))
                    .collect();
                write_csv(&dir.join("landscape_final.csv"), hash, "t,loss", &rows)?;
            }
        }
    }
    Ok(())
}

pub fn train(a: &TrainArgs) -> Result<()> {
    let (exp, dir, data) = load_experiment(a)?;
    let hash = write_snapshot(&exp, &dir)?;
    let history = run_one(&exp, &exp.train, &dir, &data, a.resume)?;
    post_diagnostics(&exp, &dir, &hash, &data.test)?;
    let gap = robust_gap(&history, exp.train.wa.enabled)?;
    emit_json(
        None,
        &hash,
        json!({
            "run_dir": dir,
            "epochs": history.len(),
            "best_epoch": gap.best_epoch,
            "best_rob_acc": gap.best,
            "final_rob_acc": gap.last,
            "robust_gap": gap.gap,
        }),
    )
}

pub const SUMMARY_HEADER: &str =
    "point,axis,value,best_epoch,best_rob_acc,final_rob_acc,robust_gap,wa_best_epoch,wa_best_rob_acc,wa_final_rob_acc,wa_robust_gap,run_config_hash";

pub fn sweep(a: &TrainArgs) -> Result<()> {
    let (exp, dir, data) = load_experiment(a)?;
    let points = exp.sweep_points()?;
    let hash = write_snapshot(&exp, &dir)?;
    let sweep = exp.sweep.as_ref().expect("sweep_points checked");
    let axis = serde_json::to_value(sweep.axis)?;
    let mut rows = Vec::with_capacity(points.len());
    for ((label, cfg), value) in points.iter().zip(&sweep.values) {
        let run_dir = dir.join(label);
        log::info!("sweep point {label}");
        run_one(&exp, cfg, &run_dir, &data, a.resume)?;
        // read back so the summary matches the per-run CSV exactly
        let history = read_metrics_csv(&run_dir.join("metrics.csv"))?;
        let g = robust_gap(&history, false)?;
        let w = robust_gap(&history, true)?;
        rows.push(format!(
            "{label},{},{value},{},{:.6},{:.6},{:.6},{},{:.6},{:.6},{:.6},{}",
            axis.as_str().unwrap_or_default(),
            g.best_epoch,
            g.best,
            g.last,
            g.gap,
            w.best_epoch,
            w.best,
            w.last,
            w.gap,
            config_hash(cfg)
        ));
    }
    write_csv(&dir.join("summary.csv"), &hash, SUMMARY_HEADER, &rows)?;
    emit_json(None, &hash, json!({ "run_dir": dir, "points": rows.len() }))
}

pub fn eval(a: &EvalArgs) -> Result<()> {
    let src = load_source(&a.source)?;
    let attack = artifacts::attack(&src.exp.train.eval_attack, &a.attack)?;
    let (model, ckpt) = load_model(&a.checkpoint, a.wa)?;
    let (nat, rob) = evaluate_robust(&model, &src.data, &attack, a.source.seed)?;
    emit_json(
        a.out.as_deref(),
        &src.hash,
        json!({
            "checkpoint": a.checkpoint,
            "checkpoint_config_hash": ckpt.config_hash,
            "epoch": ckpt.state.epoch,
            "weights": if a.wa { "wa" } else { "online" },
            "split": a.source.split.name(),
            "examples": src.data.len(),
            "attack": attack,
            "natural_accuracy": nat,
            "robust_accuracy": rob,
        }),
    )
}
