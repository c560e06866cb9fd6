use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;

use super::records::{recon_errors, score_records, PredictionRecord, RecordScore};
use crate::error::{Error, Result};

/// Pass/fail rule for one record.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Criterion {
    /// Box IoU strictly above the threshold.
    Iou(f64),
    /// Rotation error below `degrees` and translation error below `cm`.
    Pose { degrees: f64, cm: f64 },
}

impl Criterion {
    pub fn passes(&self, s: &RecordScore) -> bool {
        match *self {
            Criterion::Iou(t) => s.iou > t,
            Criterion::Pose { degrees, cm } => {
                s.rotation_deg < degrees && s.translation_m * 100.0 < cm
            }
        }
    }
}

/// The five table criteria, in column order.
pub const TABLE_CRITERIA: [(&str, Criterion); 5] = [
    ("IoU25", Criterion::Iou(0.25)),
    ("IoU50", Criterion::Iou(0.50)),
    ("5d5cm", Criterion::Pose { degrees: 5.0, cm: 5.0 }),
    ("10d5cm", Criterion::Pose { degrees: 10.0, cm: 5.0 }),
    ("10d10cm", Criterion::Pose { degrees: 10.0, cm: 10.0 }),
];

/// Report CSV header.
pub const REPORT_COLUMNS: &str = "category,count,IoU25,IoU50,5d5cm,10d5cm,10d10cm,CD,EMD";

/// Fraction of scored records passing `criterion`.
pub fn pass_fraction(scores: &[RecordScore], criterion: Criterion) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::Empty("predictions"));
    }
    Ok(scores.iter().filter(|s| criterion.passes(s)).count() as f64 / scores.len() as f64)
}

/// Average precision under perfect detection: the fraction of records
/// passing `criterion`.
pub fn compute_map(
    preds: &[PredictionRecord],
    criterion: Criterion,
    iou_samples: usize,
    seed: u64,
) -> Result<f64> {
    if preds.is_empty() {
        return Err(Error::Empty("predictions"));
    }
    pass_fraction(&score_records(preds, iou_samples, seed)?, criterion)
}

/// Metrics of one category or of all records.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub category: String,
    pub count: usize,
    pub map_iou25: f64,
    pub map_iou50: f64,
    pub map_5d5cm: f64,
    pub map_10d5cm: f64,
    pub map_10d10cm: f64,
    /// Mean Chamfer distance in units of 1e-3 m.
    pub cd_mean: f64,
    /// Mean EMD in meters.
    pub emd_mean: f64,
}

impl MetricRow {
    pub fn maps(&self) -> [f64; 5] {
        [self.map_iou25, self.map_iou50, self.map_5d5cm, self.map_10d5cm, self.map_10d10cm]
    }

    fn csv_line(&self, label: &str) -> String {
        let m = self.maps();
        format!(
            "{label},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
            self.count, m[0], m[1], m[2], m[3], m[4], self.cd_mean, self.emd_mean
        )
    }
}

/// Per-category rows plus the overall row.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub categories: Vec<MetricRow>,
    pub overall: MetricRow,
}

impl MetricReport {
    pub fn to_csv(&self) -> String {
        let mut s = format!("{REPORT_COLUMNS}\n");
        for r in &self.categories {
            let _ = writeln!(s, "{}", r.csv_line(&r.category));
        }
        let _ = writeln!(s, "{}", self.overall.csv_line("overall"));
        s
    }

    pub fn row(&self, category: &str) -> Option<&MetricRow> {
        if category == "overall" {
            return Some(&self.overall);
        }
        self.categories.iter().find(|r| r.category == category)
    }
}

/// Reconstruction table entry.
#[derive(Clone, Debug, PartialEq)]
pub struct ReconRow {
    pub category: String,
    pub count: usize,
    /// Mean Chamfer distance, units of 1e-3 m.
    pub cd: f64,
    pub emd: f64,
}

/// Per-category and overall mean CD (×10⁻³) and EMD. The overall row is the
/// record-weighted mean of the category rows.
pub fn recon_table(preds: &[PredictionRecord]) -> Result<(Vec<ReconRow>, ReconRow)> {
    if preds.is_empty() {
        return Err(Error::Empty("predictions"));
    }
    let errs: Vec<(f64, f64)> = preds.par_iter().map(recon_errors).collect::<Result<_>>()?;
    Ok(recon_rows(preds, &errs))
}

fn recon_rows(preds: &[PredictionRecord], errs: &[(f64, f64)]) -> (Vec<ReconRow>, ReconRow) {
    let mut by: BTreeMap<&str, (usize, f64, f64)> = BTreeMap::new();
    for (p, &(cd, em)) in preds.iter().zip(errs) {
        let e = by.entry(p.category.as_str()).or_default();
        e.0 += 1;
        e.1 += cd;
        e.2 += em;
    }
    let rows: Vec<ReconRow> = by
        .into_iter()
        .map(|(c, (n, cd, em))| ReconRow {
            category: c.to_string(),
            count: n,
            cd: cd / n as f64 * 1e3,
            emd: em / n as f64,
        })
        .collect();
    let total: usize = rows.iter().map(|r| r.count).sum();
    let overall = ReconRow {
        category: "overall".into(),
        count: total,
        cd: rows.iter().map(|r| r.cd * r.count as f64).sum::<f64>() / total as f64,
        emd: rows.iter().map(|r| r.emd * r.count as f64).sum::<f64>() / total as f64,
    };
    (rows, overall)
}

/// Full report: the five mAP columns and CD/EMD per category and overall.
pub fn evaluate(preds: &[PredictionRecord], iou_samples: usize, seed: u64) -> Result<MetricReport> {
    let scores = score_records(preds, iou_samples, seed)?;
    let errs: Vec<(f64, f64)> = preds.par_iter().map(recon_errors).collect::<Result<_>>()?;
    report_from_scores(preds, &scores, &errs)
}

pub(crate) fn report_from_scores(
    preds: &[PredictionRecord],
    scores: &[RecordScore],
    errs: &[(f64, f64)],
) -> Result<MetricReport> {
    if preds.is_empty() {
        return Err(Error::Empty("predictions"));
    }
    let (recon, overall_recon) = recon_rows(preds, errs);
    let row = |label: &str, pick: &dyn Fn(&PredictionRecord) -> bool, r: &ReconRow| -> Result<MetricRow> {
        let s: Vec<RecordScore> = preds
            .iter()
            .zip(scores)
            .filter(|(p, _)| pick(p))
            .map(|(_, s)| *s)
            .collect();
        let m = TABLE_CRITERIA
            .iter()
            .map(|(_, c)| pass_fraction(&s, *c))
            .collect::<Result<Vec<_>>>()?;
        Ok(MetricRow {
            category: label.to_string(),
            count: s.len(),
            map_iou25: m[0],
            map_iou50: m[1],
            map_5d5cm: m[2],
            map_10d5cm: m[3],
            map_10d10cm: m[4],
            cd_mean: r.cd,
            emd_mean: r.emd,
        })
    };
    let categories = recon
        .iter()
        .map(|r| row(&r.category, &|p| p.category == r.category, r))
        .collect::<Result<Vec<_>>>()?;
    let overall = row("overall", &|_| true, &overall_recon)?;
    Ok(MetricReport {
        categories,
        overall,
    })
}
