use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{csv_err, LabelRange};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub acc7: f64,
    pub acc5: f64,
    pub acc3: f64,
    /// Negative vs positive, zero labels excluded.
    pub acc2_pos: f64,
    /// Negative vs non-negative.
    pub acc2_nonneg: f64,
    pub f1_pos: f64,
    pub f1_nonneg: f64,
    pub mae: f64,
    pub corr: f64,
    /// Set when either argument of the correlation has zero variance.
    pub corr_degenerate: bool,
}

/// Class index of `x` given ascending cut points.
fn bin(x: f64, cuts: &[f64]) -> usize {
    cuts.iter().filter(|&&c| x > c).count()
}

fn rounded(x: f64, bound: f64) -> i64 {
    x.clamp(-bound, bound).round() as i64
}

fn accuracy(pairs: impl Iterator<Item = (bool, bool)>) -> (f64, usize) {
    let (mut hit, mut n) = (0usize, 0usize);
    for (a, b) in pairs {
        n += 1;
        hit += (a == b) as usize;
    }
    (if n == 0 { 0.0 } else { hit as f64 / n as f64 }, n)
}

/// Support-weighted F1 over the two classes.
fn weighted_f1(pairs: &[(bool, bool)]) -> f64 {
    if pairs.is_empty() {
        return 0.0;
    }
    let mut total = 0.0;
    for class in [false, true] {
        let tp = pairs.iter().filter(|&&(p, y)| p == class && y == class).count() as f64;
        let fp = pairs.iter().filter(|&&(p, y)| p == class && y != class).count() as f64;
        let fneg = pairs.iter().filter(|&&(p, y)| p != class && y == class).count() as f64;
        let support = tp + fneg;
        let denom = 2.0 * tp + fp + fneg;
        let f1 = if denom == 0.0 { 0.0 } else { 2.0 * tp / denom };
        total += support * f1;
    }
    total / pairs.len() as f64
}

/// Pearson correlation; `(0, true)` when either side has zero variance.
pub fn pearson(a: &[f64], b: &[f64]) -> (f64, bool) {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        (0.0, true)
    } else {
        (sab / (saa.sqrt() * sbb.sqrt()), false)
    }
}

pub fn metrics(labels: &[f64], preds: &[f64], scheme: LabelRange) -> Result<Metrics> {
    if labels.is_empty() || labels.len() != preds.len() {
        return Err(Error::invalid(format!(
            "metrics need equal non-empty inputs, got {} labels and {} predictions",
            labels.len(),
            preds.len()
        )));
    }
    let pairs = || labels.iter().copied().zip(preds.iter().copied());
    let frac = |f: &dyn Fn(f64, f64) -> bool| {
        pairs().filter(|&(y, p)| f(y, p)).count() as f64 / labels.len() as f64
    };
    let (acc7, acc5, acc3) = match scheme {
        LabelRange::English => (
            frac(&|y, p| rounded(y, 3.0) == rounded(p, 3.0)),
            frac(&|y, p| rounded(y, 2.0) == rounded(p, 2.0)),
            frac(&|y, p| rounded(y, 1.0) == rounded(p, 1.0)),
        ),
        LabelRange::Sims => {
            let c5 = [-0.6, -0.2, 0.2, 0.6];
            let c3 = [-0.1, 0.1];
            (
                frac(&|y, p| rounded(3.0 * y, 3.0) == rounded(3.0 * p, 3.0)),
                frac(&|y, p| bin(y, &c5) == bin(p, &c5)),
                frac(&|y, p| bin(y, &c3) == bin(p, &c3)),
            )
        }
    };
    let pos: Vec<(bool, bool)> = pairs().filter(|&(y, _)| y != 0.0).map(|(y, p)| (p > 0.0, y > 0.0)).collect();
    let nonneg: Vec<(bool, bool)> = pairs().map(|(y, p)| (p >= 0.0, y >= 0.0)).collect();
    let mae = pairs().map(|(y, p)| (y - p).abs()).sum::<f64>() / labels.len() as f64;
    let (corr, corr_degenerate) = pearson(preds, labels);
    Ok(Metrics {
        acc7,
        acc5,
        acc3,
        acc2_pos: accuracy(pos.iter().copied()).0,
        acc2_nonneg: accuracy(nonneg.iter().copied()).0,
        f1_pos: weighted_f1(&pos),
        f1_nonneg: weighted_f1(&nonneg),
        mae,
        corr,
        corr_degenerate,
    })
}

impl Metrics {
    pub fn mean(rows: &[Metrics]) -> Metrics {
        let n = rows.len() as f64;
        let avg = |f: fn(&Metrics) -> f64| rows.iter().map(f).sum::<f64>() / n;
        Metrics {
            acc7: avg(|m| m.acc7),
            acc5: avg(|m| m.acc5),
            acc3: avg(|m| m.acc3),
            acc2_pos: avg(|m| m.acc2_pos),
            acc2_nonneg: avg(|m| m.acc2_nonneg),
            f1_pos: avg(|m| m.f1_pos),
            f1_nonneg: avg(|m| m.f1_nonneg),
            mae: avg(|m| m.mae),
            corr: avg(|m| m.corr),
            corr_degenerate: rows.iter().any(|m| m.corr_degenerate),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateRow {
    pub rate: f64,
    pub metrics: Metrics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub rows: Vec<RateRow>,
    pub average: Metrics,
}

const CSV_HEADER: [&str; 11] = [
    "r", "acc7", "acc5", "acc3", "acc2_pos", "acc2_nonneg", "f1_pos", "f1_nonneg", "mae", "corr",
    "corr_degenerate",
];

fn csv_fields(label: String, m: &Metrics) -> Vec<String> {
    let mut v = vec![label];
    v.extend(
        [m.acc7, m.acc5, m.acc3, m.acc2_pos, m.acc2_nonneg, m.f1_pos, m.f1_nonneg, m.mae, m.corr]
            .iter()
            .map(|x| format!("{x:?}")),
    );
    v.push(m.corr_degenerate.to_string());
    v
}

impl MetricsReport {
    pub fn from_rows(rows: Vec<RateRow>) -> Self {
        let ms: Vec<Metrics> = rows.iter().map(|r| r.metrics).collect();
        Self {
            average: Metrics::mean(&ms),
            rows,
        }
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(CSV_HEADER).map_err(csv_err)?;
        for row in &self.rows {
            w.write_record(csv_fields(format!("{:.1}", row.rate), &row.metrics)).map_err(csv_err)?;
        }
        w.write_record(csv_fields("avg".into(), &self.average)).map_err(csv_err)?;
        let bytes = w.into_inner().map_err(|e| Error::invalid(format!("csv: {e}")))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::invalid(format!("json: {e}")))
    }

    /// Writes `<stem>.csv` and `<stem>.json` into `dir`.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(format!("{stem}.csv")), self.to_csv()?)?;
        std::fs::write(dir.join(format!("{stem}.json")), self.to_json()?)?;
        Ok(())
    }
}
