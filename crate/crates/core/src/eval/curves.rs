use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::records::{score_records, PredictionRecord, RecordScore};
use super::report::{pass_fraction, Criterion};
use crate::error::{Error, Result};

/// Threshold grids for the three AP curves.
#[derive(Clone, Debug, PartialEq)]
pub struct Sweep {
    pub iou: Vec<f64>,
    pub rotation_deg: Vec<f64>,
    pub translation_cm: Vec<f64>,
}

fn grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

impl Default for Sweep {
    fn default() -> Self {
        Sweep {
            iou: grid(0.0, 1.0, 51),
            rotation_deg: grid(0.0, 60.0, 61),
            translation_cm: grid(0.0, 10.0, 51),
        }
    }
}

impl Sweep {
    pub fn validate(&self) -> Result<()> {
        for (name, g) in [
            ("IoU", &self.iou),
            ("rotation", &self.rotation_deg),
            ("translation", &self.translation_cm),
        ] {
            if g.is_empty() {
                return Err(Error::Empty("threshold sweep"));
            }
            if g.windows(2).any(|w| !(w[1] > w[0])) {
                return Err(Error::invalid(format!("{name} thresholds must increase")));
            }
        }
        Ok(())
    }
}

/// AP against one threshold grid, per category and overall.
#[derive(Clone, Debug, PartialEq)]
pub struct Curve {
    pub kind: &'static str,
    pub thresholds: Vec<f64>,
    /// Category name (and `overall`) to AP per threshold.
    pub series: BTreeMap<String, Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Curves {
    pub iou: Curve,
    pub rotation: Curve,
    pub translation: Curve,
}

fn curve(
    kind: &'static str,
    preds: &[PredictionRecord],
    scores: &[RecordScore],
    thresholds: &[f64],
    criterion: impl Fn(f64) -> Criterion,
) -> Result<Curve> {
    let mut groups: BTreeMap<String, Vec<RecordScore>> = BTreeMap::new();
    for (p, s) in preds.iter().zip(scores) {
        groups.entry(p.category.clone()).or_default().push(*s);
    }
    groups.insert("overall".into(), scores.to_vec());
    let series = groups
        .into_iter()
        .map(|(k, s)| {
            let ap = thresholds
                .iter()
                .map(|&t| pass_fraction(&s, criterion(t)))
                .collect::<Result<Vec<_>>>()?;
            Ok((k, ap))
        })
        .collect::<Result<_>>()?;
    Ok(Curve {
        kind,
        thresholds: thresholds.to_vec(),
        series,
    })
}

/// AP versus IoU, rotation-only and translation-only thresholds.
pub fn ap_curves(preds: &[PredictionRecord], sweep: &Sweep, iou_samples: usize, seed: u64) -> Result<Curves> {
    if preds.is_empty() {
        return Err(Error::Empty("predictions"));
    }
    sweep.validate()?;
    let scores = score_records(preds, iou_samples, seed)?;
    curves_from_scores(preds, &scores, sweep)
}

pub(crate) fn curves_from_scores(
    preds: &[PredictionRecord],
    scores: &[RecordScore],
    sweep: &Sweep,
) -> Result<Curves> {
    sweep.validate()?;
    Ok(Curves {
        iou: curve("iou", preds, scores, &sweep.iou, Criterion::Iou)?,
        rotation: curve("rotation_deg", preds, scores, &sweep.rotation_deg, |t| Criterion::Pose {
            degrees: t,
            cm: f64::INFINITY,
        })?,
        translation: curve("translation_cm", preds, scores, &sweep.translation_cm, |t| {
            Criterion::Pose {
                degrees: f64::INFINITY,
                cm: t,
            }
        })?,
    })
}

const PALETTE: [&str; 7] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#111111"];

impl Curves {
    fn all(&self) -> [&Curve; 3] {
        [&self.iou, &self.rotation, &self.translation]
    }

    /// Long format: `kind,threshold,category,ap`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("kind,threshold,category,ap\n");
        for c in self.all() {
            for (cat, ap) in &c.series {
                for (t, a) in c.thresholds.iter().zip(ap) {
                    let _ = writeln!(s, "{},{:.6},{},{:.6}", c.kind, t, cat, a);
                }
            }
        }
        s
    }

    /// Three side-by-side line charts.
    pub fn to_svg(&self) -> String {
        let (pw, ph, m) = (320.0, 240.0, 40.0);
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{}" font-family="sans-serif" font-size="11">"#,
            pw * 3.0,
            ph + 30.0
        );
        let names: Vec<&String> = self.iou.series.keys().collect();
        for (k, c) in self.all().into_iter().enumerate() {
            let x0 = k as f64 * pw;
            let (lo, hi) = (c.thresholds[0], *c.thresholds.last().unwrap_or(&1.0));
            let span = if hi > lo { hi - lo } else { 1.0 };
            let px = |t: f64| x0 + m + (t - lo) / span * (pw - 1.5 * m);
            let py = |a: f64| ph - m + 10.0 - a * (ph - 1.5 * m);
            let _ = writeln!(
                s,
                r##"<rect x="{:.1}" y="{:.1}" width="{:.1}" height="{:.1}" fill="none" stroke="#888"/>"##,
                px(lo),
                py(1.0),
                px(hi) - px(lo),
                py(0.0) - py(1.0)
            );
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
                (px(lo) + px(hi)) / 2.0,
                py(0.0) + 28.0,
                c.kind
            );
            for (v, label) in [(lo, lo), (hi, hi)] {
                let _ = writeln!(
                    s,
                    r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
                    px(v),
                    py(0.0) + 14.0,
                    label
                );
            }
            for (a, label) in [(0.0, "0"), (1.0, "1")] {
                let _ = writeln!(
                    s,
                    r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
                    px(lo) - 4.0,
                    py(a) + 4.0,
                    label
                );
            }
            for (i, (cat, ap)) in c.series.iter().enumerate() {
                let pts: Vec<String> = c
                    .thresholds
                    .iter()
                    .zip(ap)
                    .map(|(&t, &a)| format!("{:.1},{:.1}", px(t), py(a)))
                    .collect();
                let color = if cat == "overall" { PALETTE[6] } else { PALETTE[i % 6] };
                let _ = writeln!(
                    s,
                    r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
                    pts.join(" ")
                );
            }
        }
        for (i, cat) in names.iter().enumerate() {
            let color = if cat.as_str() == "overall" { PALETTE[6] } else { PALETTE[i % 6] };
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{:.1}" fill="{color}">{cat}</text>"#,
                10.0 + 90.0 * i as f64,
                ph + 24.0
            );
        }
        s.push_str("</svg>\n");
        s
    }
}
