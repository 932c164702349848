use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;

/// One row of `metrics.csv`. `epoch` is the 0-based index of the epoch
/// just trained. Validation columns are empty on epochs without a
/// validation pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub lr: f64,
    pub eps_train: f64,
    pub lambda: f64,
    pub train_nat_acc: f64,
    pub train_rob_acc: f64,
    pub test_nat_acc: f64,
    pub test_rob_acc: f64,
    pub wa_test_nat_acc: f64,
    pub wa_test_rob_acc: f64,
    pub mean_ce: f64,
    pub mean_kl: f64,
    pub val_rob_acc: Option<f64>,
    pub wa_val_rob_acc: Option<f64>,
}

pub const CSV_COLUMNS: [&str; 14] = [
    "epoch",
    "lr",
    "eps_train",
    "lambda",
    "train_nat_acc",
    "train_rob_acc",
    "test_nat_acc",
    "test_rob_acc",
    "wa_test_nat_acc",
    "wa_test_rob_acc",
    "mean_ce",
    "mean_kl",
    "val_rob_acc",
    "wa_val_rob_acc",
];

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

impl EpochMetrics {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{},{}",
            self.epoch,
            self.lr,
            self.eps_train,
            self.lambda,
            self.train_nat_acc,
            self.train_rob_acc,
            self.test_nat_acc,
            self.test_rob_acc,
            self.wa_test_nat_acc,
            self.wa_test_rob_acc,
            self.mean_ce,
            self.mean_kl,
            opt(self.val_rob_acc),
            opt(self.wa_val_rob_acc),
        )
    }

    fn parse_row(line: &str) -> Option<Self> {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != CSV_COLUMNS.len() {
            return None;
        }
        let num = |i: usize| f[i].parse::<f64>().ok();
        let maybe = |i: usize| if f[i].is_empty() { Some(None) } else { num(i).map(Some) };
        Some(Self {
            epoch: f[0].parse().ok()?,
            lr: num(1)?,
            eps_train: num(2)?,
            lambda: num(3)?,
            train_nat_acc: num(4)?,
            train_rob_acc: num(5)?,
            test_nat_acc: num(6)?,
            test_rob_acc: num(7)?,
            wa_test_nat_acc: num(8)?,
            wa_test_rob_acc: num(9)?,
            mean_ce: num(10)?,
            mean_kl: num(11)?,
            val_rob_acc: maybe(12)?,
            wa_val_rob_acc: maybe(13)?,
        })
    }
}

/// Full CSV text: a `# config_hash:` comment line, the header, then rows.
pub fn metrics_csv(config_hash: &str, rows: &[EpochMetrics]) -> String {
    let mut s = String::new();
    writeln!(s, "# config_hash: {config_hash}").unwrap();
    writeln!(s, "{}", CSV_COLUMNS.join(",")).unwrap();
    for r in rows {
        writeln!(s, "{}", r.csv_row()).unwrap();
    }
    s
}

pub fn write_metrics_csv(path: &Path, config_hash: &str, rows: &[EpochMetrics]) -> Result<()> {
    io::write_atomic(path, metrics_csv(config_hash, rows).as_bytes())
}

/// Parse a metrics file written by [`write_metrics_csv`].
pub fn read_metrics_csv(path: &Path) -> Result<Vec<EpochMetrics>> {
    let text = String::from_utf8(io::read_file(path)?).map_err(|e| Error::Format {
        kind: "metrics csv",
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let mut lines = text.lines().filter(|l| !l.starts_with('#'));
    if lines.next() != Some(CSV_COLUMNS.join(",").as_str()) {
        return Err(Error::Format {
            kind: "metrics csv",
            path: path.to_path_buf(),
            message: "unexpected header".into(),
        });
    }
    lines
        .enumerate()
        .map(|(i, l)| {
            EpochMetrics::parse_row(l).ok_or_else(|| Error::Format {
                kind: "metrics csv",
                path: path.to_path_buf(),
                message: format!("bad row {}", i + 1),
            })
        })
        .collect()
}

/// Best-versus-final robustness of one run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobustGap {
    pub best_epoch: usize,
    pub best: f64,
    pub last: f64,
    pub gap: f64,
}

/// Robust gap on test robust accuracy. The best epoch is the one with the
/// highest validation robust accuracy when any epoch has one, otherwise the
/// one with the highest test robust accuracy; ties go to the earliest.
pub fn robust_gap(history: &[EpochMetrics], wa: bool) -> Result<RobustGap> {
    let last = history.last().ok_or_else(|| Error::Empty("metrics history".into()))?;
    let test = |m: &EpochMetrics| if wa { m.wa_test_rob_acc } else { m.test_rob_acc };
    let val = |m: &EpochMetrics| if wa { m.wa_val_rob_acc } else { m.val_rob_acc };
    let has_val = history.iter().any(|m| val(m).is_some());
    let score = |m: &EpochMetrics| if has_val { val(m) } else { Some(test(m)) };
    let mut best: Option<(&EpochMetrics, f64)> = None;
    for m in history {
        if let Some(s) = score(m) {
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((m, s));
            }
        }
    }
    let (bm, _) = best.expect("non-empty history has a scored epoch");
    Ok(RobustGap {
        best_epoch: bm.epoch,
        best: test(bm),
        last: test(last),
        gap: test(bm) - test(last),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn row(epoch: usize, test_rob: f64, val: Option<f64>) -> EpochMetrics {
        EpochMetrics {
            epoch,
            lr: 0.1,
            eps_train: 8.0 / 255.0,
            lambda: 0.0,
            train_nat_acc: 0.5,
            train_rob_acc: 0.25,
            test_nat_acc: 0.5,
            test_rob_acc: test_rob,
            wa_test_nat_acc: 0.5,
            wa_test_rob_acc: test_rob,
            mean_ce: 1.0,
            mean_kl: 0.0,
            val_rob_acc: val,
            wa_val_rob_acc: val,
        }
    }

    #[test]
    fn csv_round_trip_and_format() {
        let rows = vec![row(0, 0.3, None), row(1, 0.45, Some(0.4))];
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        write_metrics_csv(&p, "abc", &rows).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("# config_hash: abc\nepoch,lr,"));
        assert!(text.contains("\n0,0.100000,0.031373,"));
        let back = read_metrics_csv(&p).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[1].val_rob_acc, Some(0.4));
        assert_eq!(back[0].val_rob_acc, None);
    }

    #[test]
    fn gap_uses_validation_when_present() {
        let h = vec![row(0, 0.5, Some(0.3)), row(1, 0.6, Some(0.2)), row(2, 0.4, None)];
        let g = robust_gap(&h, false).unwrap();
        assert_eq!(g.best_epoch, 0);
        assert!((g.gap - 0.1).abs() < 1e-12);
        let h = vec![row(0, 0.5, None), row(1, 0.6, None), row(2, 0.4, None)];
        let g = robust_gap(&h, true).unwrap();
        assert_eq!(g.best_epoch, 1);
        assert!((g.gap - 0.2).abs() < 1e-12);
        assert!(robust_gap(&[], false).is_err());
    }
}
