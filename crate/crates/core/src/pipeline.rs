//! Whole-run orchestration: three-stage training and ablation sweeps.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::Result;
use crate::eval::{evaluate, predict_split, MetricReport, MetricRow, REPORT_COLUMNS};
use crate::nets::{is_vae_param, Model};
use crate::shapegen::{Dataset, Split};
use crate::train::{run_stage, Ablation, StageReport, TrainConfig};

/// Fresh model for `cfg`, seeded by the config seed.
pub fn init_model(cfg: &TrainConfig) -> Result<Model> {
    Model::new(cfg.net(), cfg.seed)
}

/// Runs `stages` in order on `model`, calling `after` with each finished
/// stage.
pub fn train_stages(
    cfg: &TrainConfig,
    data: &Dataset,
    model: &mut Model,
    stages: &[u8],
    mut after: impl FnMut(u8, &Model, &StageReport) -> Result<()>,
) -> Result<Vec<StageReport>> {
    let mut reports = Vec::with_capacity(stages.len());
    for &s in stages {
        let r = run_stage(s, cfg, model, data)?;
        after(s, model, &r)?;
        reports.push(r);
    }
    Ok(reports)
}

/// One row of an ablation table.
#[derive(Clone, Debug, PartialEq)]
pub struct AblationResult {
    pub ablation: Ablation,
    pub report: MetricReport,
    pub stages: Vec<StageReport>,
    pub model: Model,
}

/// Stage 1 only touches the autoencoder, and these ablations change only
/// the pose branch, so they start stage 2 from the same stage-1 weights.
fn shares_stage1(a: Ablation) -> bool {
    matches!(a, Ablation::None | Ablation::NoCass | Ablation::NoDm)
}

/// Trains and evaluates each ablation with the same seed and data. Runs
/// whose stage-1 training would be identical reuse one stage-1 result.
pub fn run_ablations(
    base: &TrainConfig,
    data: &Dataset,
    ablations: &[Ablation],
    iou_samples: usize,
    eval_seed: u64,
    mut progress: impl FnMut(&AblationResult) -> Result<()>,
) -> Result<Vec<AblationResult>> {
    let mut shared: Option<(Model, StageReport)> = None;
    let mut out = Vec::with_capacity(ablations.len());
    for &a in ablations {
        let cfg = TrainConfig {
            ablation: a,
            ..base.clone()
        };
        cfg.validate()?;
        let mut model = init_model(&cfg)?;
        let mut stages = Vec::new();
        if shares_stage1(a) {
            if shared.is_none() {
                let mut m = init_model(&TrainConfig {
                    ablation: Ablation::None,
                    ..cfg.clone()
                })?;
                let r = run_stage(1, &TrainConfig { ablation: Ablation::None, ..cfg.clone() }, &mut m, data)?;
                shared = Some((m, r));
            }
            let (m1, r1) = shared.as_ref().expect("stage-1 result");
            for (name, t) in m1.params.iter().filter(|(n, _)| is_vae_param(n)) {
                *model.params.get_mut(name)? = t.clone();
            }
            stages.push(r1.clone());
        } else {
            stages.push(run_stage(1, &cfg, &mut model, data)?);
        }
        stages.push(run_stage(2, &cfg, &mut model, data)?);
        stages.push(run_stage(3, &cfg, &mut model, data)?);
        let preds = predict_split(&model, data, Split::Test)?;
        let report = evaluate(&preds, iou_samples, eval_seed)?;
        let res = AblationResult {
            ablation: a,
            report,
            stages,
            model,
        };
        progress(&res)?;
        out.push(res);
    }
    Ok(out)
}

fn row_line(label: &str, r: &MetricRow) -> String {
    let m = r.maps();
    format!(
        "{label},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
        r.count, m[0], m[1], m[2], m[3], m[4], r.cd_mean, r.emd_mean
    )
}

/// One overall row per ablation, same columns as the evaluation report
/// with the first column naming the ablation.
pub fn ablation_csv(results: &[AblationResult]) -> String {
    let header = REPORT_COLUMNS.replacen("category", "ablation", 1);
    let mut s = format!("{header}\n");
    for r in results {
        let _ = writeln!(s, "{}", row_line(r.ablation.as_str(), &r.report.overall));
    }
    s
}

/// Header entries recorded with every stage checkpoint.
pub fn checkpoint_header(cfg: &TrainConfig, stage: u8, dataset_sha256: &str) -> BTreeMap<String, String> {
    let mut h = BTreeMap::new();
    h.insert("train.stage".into(), stage.to_string());
    h.insert("train.ablation".into(), cfg.ablation.to_string());
    h.insert("train.seed".into(), cfg.seed.to_string());
    h.insert("data.sha256".into(), dataset_sha256.to_string());
    for line in cfg.to_kv().lines() {
        if let Some((k, v)) = line.split_once('=') {
            h.insert(format!("config.{k}"), v.to_string());
        }
    }
    h
}
