//! Binary confusion matrix, derived rates and per-epoch reports.
//!
//! Label 0 is the positive (defective) class.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const POSITIVE: usize = 0;

/// Counts indexed `[actual][predicted]`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; 2]; 2],
}

impl ConfusionMatrix {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut cm = Self::new();
        for (a, p) in pairs {
            cm.update(a, p)?;
        }
        Ok(cm)
    }

    pub fn update(&mut self, actual: usize, predicted: usize) -> Result<()> {
        if actual > 1 || predicted > 1 {
            return Err(Error::invalid(format!(
                "binary labels must be 0 or 1, got actual {actual}, predicted {predicted}"
            )));
        }
        self.counts[actual][predicted] += 1;
        Ok(())
    }

    /// Cellwise sum.
    pub fn merge(&self, other: &Self) -> Self {
        let mut out = *self;
        for a in 0..2 {
            for p in 0..2 {
                out.counts[a][p] += other.counts[a][p];
            }
        }
        out
    }

    pub fn tp(&self) -> u64 {
        self.counts[POSITIVE][POSITIVE]
    }

    pub fn fn_(&self) -> u64 {
        self.counts[POSITIVE][1 - POSITIVE]
    }

    pub fn fp(&self) -> u64 {
        self.counts[1 - POSITIVE][POSITIVE]
    }

    pub fn tn(&self) -> u64 {
        self.counts[1 - POSITIVE][1 - POSITIVE]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn correct(&self) -> u64 {
        self.tp() + self.tn()
    }

    /// Swaps the class roles: rows and columns both reversed.
    pub fn transposed_labels(&self) -> Self {
        let c = self.counts;
        Self {
            counts: [[c[1][1], c[1][0]], [c[0][1], c[0][0]]],
        }
    }

    pub fn precision(&self) -> Rate {
        Rate::ratio(self.tp(), self.tp() + self.fp())
    }

    pub fn recall(&self) -> Rate {
        Rate::ratio(self.tp(), self.tp() + self.fn_())
    }

    /// `2TP / (2TP + FP + FN)`, the harmonic mean of precision and recall.
    pub fn f1(&self) -> Rate {
        Rate::ratio(2 * self.tp(), 2 * self.tp() + self.fp() + self.fn_())
    }

    pub fn accuracy(&self) -> Rate {
        Rate::ratio(self.correct(), self.total())
    }
}

/// A rate in `[0, 1]`; `undefined` marks a zero denominator, reported as 0.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rate {
    pub value: f64,
    pub undefined: bool,
}

impl Rate {
    pub fn ratio(num: u64, den: u64) -> Self {
        if den == 0 {
            Self {
                value: 0.0,
                undefined: true,
            }
        } else {
            Self {
                value: num as f64 / den as f64,
                undefined: false,
            }
        }
    }
}

/// Harmonic mean of two rates; 0 when both are 0.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// Round half up to `decimals` places, robust to binary representation error
/// just below a decimal tie.
pub fn round_half_up(v: f64, decimals: i32) -> f64 {
    let scale = 10f64.powi(decimals);
    let scaled = (v * scale * 1e6).round() / 1e6;
    (scaled + 0.5).floor() / scale
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_correct: u64,
    pub train_total: u64,
    pub train_accuracy: f64,
    pub valid_accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub confusion: ConfusionMatrix,
    pub seconds: f64,
    /// Names of rates whose denominator was zero.
    pub flags: Vec<String>,
}

impl EpochReport {
    /// Derives every rate from the counts.
    pub fn new(
        epoch: usize,
        train_loss: f64,
        train_correct: u64,
        train_total: u64,
        confusion: ConfusionMatrix,
        seconds: f64,
    ) -> Self {
        let train = Rate::ratio(train_correct, train_total);
        let rates = [
            ("train_acc", train),
            ("valid_acc", confusion.accuracy()),
            ("precision", confusion.precision()),
            ("recall", confusion.recall()),
            ("f1", confusion.f1()),
        ];
        let flags = rates
            .iter()
            .filter(|(_, r)| r.undefined)
            .map(|(n, _)| n.to_string())
            .collect();
        Self {
            epoch,
            train_loss,
            train_correct,
            train_total,
            train_accuracy: train.value,
            valid_accuracy: rates[1].1.value,
            precision: rates[2].1.value,
            recall: rates[3].1.value,
            f1: rates[4].1.value,
            confusion,
            seconds,
            flags,
        }
    }

    /// Report of an evaluation over zero samples: every rate flagged.
    pub fn empty(epoch: usize) -> Self {
        Self::new(epoch, 0.0, 0, 0, ConfusionMatrix::new(), 0.0)
    }

    /// One `key=value` line. Rates appear rounded to two decimals; the counts,
    /// loss and time are exact, so [`EpochReport::parse_log_line`] rebuilds
    /// the report bit for bit.
    pub fn to_log_line(&self) -> String {
        let r = |v: f64| format!("{:.2}", round_half_up(v, 2));
        let cm = &self.confusion;
        format!(
            "epoch={} train_loss={:?} train_acc={} valid_acc={} precision={} recall={} f1={} \
             train_correct={} train_total={} tp={} fn={} fp={} tn={} seconds={:?} flags={}",
            self.epoch,
            self.train_loss,
            r(self.train_accuracy),
            r(self.valid_accuracy),
            r(self.precision),
            r(self.recall),
            r(self.f1),
            self.train_correct,
            self.train_total,
            cm.tp(),
            cm.fn_(),
            cm.fp(),
            cm.tn(),
            self.seconds,
            if self.flags.is_empty() {
                "none".to_string()
            } else {
                self.flags.join(",")
            }
        )
    }

    pub fn parse_log_line(line: &str) -> Result<Self> {
        let fields: std::collections::HashMap<&str, &str> =
            line.split_whitespace().filter_map(|kv| kv.split_once('=')).collect();
        let get = |k: &str| {
            fields
                .get(k)
                .copied()
                .ok_or_else(|| Error::Parse(format!("metrics line lacks '{k}': {line}")))
        };
        let num = |k: &str| -> Result<u64> {
            get(k)?
                .parse()
                .map_err(|e| Error::Parse(format!("metrics field '{k}': {e}")))
        };
        let float = |k: &str| -> Result<f64> {
            get(k)?
                .parse()
                .map_err(|e| Error::Parse(format!("metrics field '{k}': {e}")))
        };
        let mut cm = ConfusionMatrix::new();
        cm.counts[POSITIVE][POSITIVE] = num("tp")?;
        cm.counts[POSITIVE][1 - POSITIVE] = num("fn")?;
        cm.counts[1 - POSITIVE][POSITIVE] = num("fp")?;
        cm.counts[1 - POSITIVE][1 - POSITIVE] = num("tn")?;
        Ok(Self::new(
            num("epoch")? as usize,
            float("train_loss")?,
            num("train_correct")?,
            num("train_total")?,
            cm,
            float("seconds")?,
        ))
    }

    /// Metric/value table with percentages to two decimals.
    pub fn render_table(&self) -> String {
        let pct = |v: f64| format!("{:.2}%", round_half_up(100.0 * v, 2));
        let mut s = String::new();
        let _ = writeln!(s, "Performance metrics, epoch {}", self.epoch);
        let _ = writeln!(s, "{:<16} {:>10}", "Metric", "Value");
        let _ = writeln!(s, "{}", "-".repeat(27));
        let _ = writeln!(s, "{:<16} {:>10.4}", "Train Loss", self.train_loss);
        for (name, v) in [
            ("Train Accuracy", self.train_accuracy),
            ("Valid Accuracy", self.valid_accuracy),
            ("Precision", self.precision),
            ("Recall", self.recall),
            ("F1-Score", self.f1),
        ] {
            let _ = writeln!(s, "{name:<16} {:>10}", pct(v));
        }
        let cm = &self.confusion;
        let _ = writeln!(s, "Confusion matrix (rows actual, columns predicted; defective first)");
        let _ = writeln!(s, "  [{:>5} {:>5}]", cm.tp(), cm.fn_());
        let _ = writeln!(s, "  [{:>5} {:>5}]", cm.fp(), cm.tn());
        if !self.flags.is_empty() {
            let _ = writeln!(s, "undefined (zero denominator, shown as 0): {}", self.flags.join(", "));
        }
        s
    }
}

/// Column header of [`write_csv`].
pub const CSV_HEADER: [&str; 15] = [
    "epoch",
    "train_loss",
    "train_accuracy",
    "valid_accuracy",
    "precision",
    "recall",
    "f1",
    "train_correct",
    "train_total",
    "tp",
    "fn",
    "fp",
    "tn",
    "seconds",
    "flags",
];

/// One row per report; rates unrounded, `flags` joined with `;`.
pub fn write_csv<W: std::io::Write>(reports: &[EpochReport], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let err = |e: csv::Error| Error::Parse(format!("csv: {e}"));
    w.write_record(CSV_HEADER).map_err(err)?;
    for r in reports {
        let cm = &r.confusion;
        w.write_record([
            r.epoch.to_string(),
            format!("{:?}", r.train_loss),
            r.train_accuracy.to_string(),
            r.valid_accuracy.to_string(),
            r.precision.to_string(),
            r.recall.to_string(),
            r.f1.to_string(),
            r.train_correct.to_string(),
            r.train_total.to_string(),
            cm.tp().to_string(),
            cm.fn_().to_string(),
            cm.fp().to_string(),
            cm.tn().to_string(),
            format!("{:?}", r.seconds),
            r.flags.join(";"),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| Error::Parse(format!("csv: {e}")))
}

pub fn write_csv_file(reports: &[EpochReport], path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_csv(reports, &mut buf)?;
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}
