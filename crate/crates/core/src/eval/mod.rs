//! Evaluation: mAP at IoU and pose thresholds, reconstruction tables, AP
//! curves and a linear probe for view factorization.

mod curves;
mod probe;
mod records;
mod report;

pub use curves::{ap_curves, Curve, Curves, Sweep};
pub use probe::{factorization_probe, probe_error, ProbeReport, MIN_PROBE_SAMPLES};
pub use records::{
    align_about_axis, predict_split, recon_errors, score_record, score_records, PredictionRecord,
    RecordScore,
};
pub use report::{
    compute_map, evaluate, pass_fraction, recon_table, Criterion, MetricReport, MetricRow,
    ReconRow, REPORT_COLUMNS, TABLE_CRITERIA,
};

use crate::error::Result;

/// Report and curves from one scoring pass.
pub fn evaluate_with_curves(
    preds: &[PredictionRecord],
    sweep: &Sweep,
    iou_samples: usize,
    seed: u64,
) -> Result<(MetricReport, Curves)> {
    use rayon::prelude::*;
    let scores = score_records(preds, iou_samples, seed)?;
    let errs: Vec<(f64, f64)> = preds.par_iter().map(recon_errors).collect::<Result<_>>()?;
    Ok((
        report::report_from_scores(preds, &scores, &errs)?,
        curves::curves_from_scores(preds, &scores, sweep)?,
    ))
}
