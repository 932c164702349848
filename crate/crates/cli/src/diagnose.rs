use std::path::Path;

use rebat_core::diagnostics::{
    bilateral_correlation, build_nonrobust_dataset, confusion, inject_experiment, loss_landscape_1d, memorization_probe,
    random_labels, symmetry_metric, target_class_probe, ConfusionMatrix, ProbeResult,
};
use rebat_core::experiment::ExperimentConfig;
use rebat_core::io::read_file;
use rebat_core::train::config_hash;
use rebat_core::{Error, Result};
use serde_json::{json, Value};

use crate::args::DiagnoseCommand;
use crate::artifacts::{attack, emit_json, load_model, load_source, with_ext, write_csv, Precision};

fn read_matrix(path: &Path) -> Result<(ConfusionMatrix, Option<String>)> {
    let bytes = read_file(path)?;
    let v: Value = serde_json::from_slice(&bytes)?;
    let hash = v.get("config_hash").and_then(Value::as_str).map(String::from);
    let mut v = v;
    if let Value::Object(m) = &mut v {
        m.remove("config_hash");
    }
    let cm: ConfusionMatrix = serde_json::from_value(v).map_err(|e| Error::Format {
        kind: "confusion matrix",
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    if cm.rates.len() != cm.classes * cm.classes || cm.counts.len() != cm.classes * cm.classes {
        return Err(Error::Format {
            kind: "confusion matrix",
            path: path.to_path_buf(),
            message: "entry count does not match classes".into(),
        });
    }
    Ok((cm, hash))
}

fn probe_json(r: ProbeResult, early: &Path, late: &Path) -> Result<Value> {
    let r = r.with_ids(early.display().to_string(), late.display().to_string());
    Ok(serde_json::to_value(r)?)
}

pub fn run(cmd: DiagnoseCommand) -> Result<()> {
    match cmd {
        DiagnoseCommand::Confusion {
            checkpoint,
            wa,
            source,
            attack: a,
            out,
        } => {
            let src = load_source(&source)?;
            let atk = attack(&src.exp.train.eval_attack, &a)?;
            let (model, _) = load_model(&checkpoint, wa)?;
            let cm = confusion(&model, &src.data, &atk, source.seed)?.with_meta(
                checkpoint.display().to_string(),
                source.split.name(),
                atk,
            );
            let rows: Vec<String> = cm.to_csv(false).lines().map(String::from).collect();
            let header = (0..cm.classes).map(|j| format!("pred_{j}")).collect::<Vec<_>>().join(",");
            write_csv(&with_ext(&out, "csv"), &src.hash, &header, &rows)?;
            emit_json(Some(&with_ext(&out, "json")), &src.hash, serde_json::to_value(&cm)?)
        }
        DiagnoseCommand::Symmetry { matrix, out, counts } => {
            let (cm, hash) = read_matrix(&matrix)?;
            let values = if counts { cm.counts_f64() } else { cm.rates.clone() };
            let s = symmetry_metric(&values, cm.classes)?;
            emit_json(
                out.as_deref(),
                &hash.unwrap_or_default(),
                json!({ "matrix": matrix, "entries": if counts { "counts" } else { "rates" }, "symmetry": s }),
            )
        }
        DiagnoseCommand::Correlation {
            train_before,
            test_before,
            test_after,
            out,
        } => {
            let (a, hash) = read_matrix(&train_before)?;
            let (b, _) = read_matrix(&test_before)?;
            let (c, _) = read_matrix(&test_after)?;
            if a.classes != b.classes || b.classes != c.classes {
                return Err(Error::invalid("confusion matrices disagree on class count"));
            }
            let rho = bilateral_correlation(&a.rates, &b.rates, &c.rates, a.classes)?;
            emit_json(
                out.as_deref(),
                &hash.unwrap_or_default(),
                json!({
                    "train_before": train_before,
                    "test_before": test_before,
                    "test_after": test_after,
                    "correlation": rho,
                }),
            )
        }
        DiagnoseCommand::ProbeMemorization {
            early,
            late,
            source,
            attack: a,
            min_samples,
            out,
        } => {
            let src = load_source(&source)?;
            let atk = attack(&rebat_core::diagnostics::probe_attack(), &a)?;
            let (e, _) = load_model(&early, false)?;
            let (l, _) = load_model(&late, false)?;
            let r = memorization_probe(&e, &l, &src.data, &atk, source.seed, min_samples)?;
            emit_json(out.as_deref(), &src.hash, probe_json(r, &early, &late)?)
        }
        DiagnoseCommand::ProbeTarget {
            reference,
            late,
            source,
            attack: a,
            min_samples,
            out,
        } => {
            let src = load_source(&source)?;
            let atk = attack(&rebat_core::diagnostics::probe_attack(), &a)?;
            let (r, _) = load_model(&reference, false)?;
            let (l, _) = load_model(&late, false)?;
            let res = target_class_probe(&r, &l, &src.data, &atk, source.seed, min_samples)?;
            emit_json(out.as_deref(), &src.hash, probe_json(res, &late, &reference)?)
        }
        DiagnoseCommand::Landscape {
            checkpoint,
            wa,
            source,
            attack: a,
            points,
            radius,
            out,
        } => {
            let src = load_source(&source)?;
            let atk = attack(&src.exp.train.eval_attack, &a)?;
            let (model, _) = load_model(&checkpoint, wa)?;
            let curve = loss_landscape_1d(&model, &src.data, &atk, points, radius, source.seed)?;
            let rows: Vec<String> = curve
                .iter()
                .map(|p| format!("{:.6},{}", p.t, p.loss.map_or(String::new(), |l| format!("{l:.6}"))))
                .collect();
            write_csv(&out, &src.hash, "t,loss", &rows)?;
            emit_json(None, &src.hash, json!({ "out": out, "points": rows.len() }))
        }
        DiagnoseCommand::Inject {
            checkpoint,
            config,
            eps,
            steps,
            epochs,
            seed,
            out,
        } => {
            let exp = ExperimentConfig::load(&config)?;
            let (train, _, test) = exp.dataset.load::<Precision>()?;
            let (base, _) = load_model(&checkpoint, false)?;
            let mut cfg = exp.train.clone();
            if let Some(e) = epochs {
                cfg.epochs = e;
                cfg.lr.milestones.retain(|&m| m < e);
            }
            cfg.validate().map_err(|e| Error::Config {
                path: "train".into(),
                message: e.to_string(),
            })?;
            let eps: Vec<f64> = eps.iter().map(|e| e / 255.0).collect();
            let rows = inject_experiment(&exp.model_spec(), &base, &cfg, &train, &test, &eps, steps, seed)?;
            let hash = config_hash(&cfg);
            let lines: Vec<String> = rows
                .iter()
                .map(|r| {
                    format!(
                        "{:.6},{:.6},{:.6},{:.6},{:.6}",
                        r.epsilon * 255.0,
                        r.injected_nat,
                        r.injected_rob,
                        r.control_nat,
                        r.control_rob
                    )
                })
                .collect();
            write_csv(
                &out,
                &hash,
                "epsilon_255,injected_nat_acc,injected_rob_acc,control_nat_acc,control_rob_acc",
                &lines,
            )?;
            emit_json(None, &hash, json!({ "out": out, "rows": serde_json::to_value(&rows)? }))
        }
        DiagnoseCommand::NonrobustDataset {
            checkpoint,
            source,
            attack: a,
            min_success_rate,
            subsample,
            random_label_control,
            out,
        } => {
            let src = load_source(&source)?;
            let base = rebat_core::attack::AttackConfig::pgd(16.0 / 255.0, 2.0 / 255.0, 20);
            let atk = attack(&base, &a)?;
            let (model, _) = load_model(&checkpoint, false)?;
            let nr = build_nonrobust_dataset(&model, &src.data, &atk, source.seed, min_success_rate, subsample)?;
            nr.dataset.save(&out)?;
            let mut summary = json!({
                "dataset": out,
                "source_checkpoint": checkpoint,
                "attack": atk,
                "attacked": nr.attacked,
                "success_rate": nr.success_rate,
                "examples": nr.dataset.len(),
            });
            if random_label_control {
                let labels = random_labels(nr.dataset.len(), nr.dataset.classes(), source.seed);
                let control_path = with_ext(&out, "random");
                nr.dataset
                    .with_labels(labels)?
                    .with_provenance(format!("random-labels:{}", nr.dataset.provenance()))
                    .save(&control_path)?;
                summary["random_label_control"] = json!(control_path);
            }
            emit_json(Some(&with_ext(&out, "json")), &src.hash, summary)
        }
    }
}
