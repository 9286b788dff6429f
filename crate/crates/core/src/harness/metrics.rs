//! Precision and success curves, their AUCs and plots.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{MimError, Result};
use crate::head::BBox;

/// Center-error thresholds `0..=50` px.
pub const PRECISION_STEPS: usize = 50;
/// IoU thresholds `i / 100` for `i = 0..=100`.
pub const SUCCESS_STEPS: usize = 100;

pub fn iou(a: &BBox, b: &BBox) -> f64 {
    a.iou(b)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub frames: usize,
    /// Fraction of frames with center error `≤ i` px.
    pub precision: Vec<f64>,
    /// Fraction of frames with IoU `> i/100`.
    pub success: Vec<f64>,
    pub precision_at_20: f64,
    /// Trapezoid area under the success curve.
    pub success_auc: f64,
    /// Trapezoid area under the precision curve, normalized to `[0, 1]`.
    pub precision_auc: f64,
    pub mean_iou: f64,
}

/// Trapezoid rule over unit-spaced integer counts, divided by `n · steps`.
fn trapezoid(counts: &[usize], n: usize) -> f64 {
    let steps = counts.len() - 1;
    let twice: usize = counts.windows(2).map(|w| w[0] + w[1]).sum();
    twice as f64 / (2 * n * steps) as f64
}

/// Curves of `traj` against `gt`. Counts stay integral until the final
/// division, so hand-tabulated cases match exactly.
pub fn evaluate(traj: &[BBox], gt: &[BBox]) -> Result<MetricReport> {
    if traj.len() != gt.len() {
        return Err(MimError::Invalid(format!("{} predictions for {} ground-truth boxes", traj.len(), gt.len())));
    }
    if traj.is_empty() {
        return Err(MimError::Invalid("nothing to evaluate".into()));
    }
    let n = traj.len();
    let ious: Vec<f64> = traj.iter().zip(gt).map(|(p, g)| p.iou(g)).collect();
    let errs: Vec<f64> = traj.iter().zip(gt).map(|(p, g)| p.center_error(g)).collect();
    let p_counts: Vec<usize> = (0..=PRECISION_STEPS)
        .map(|i| errs.iter().filter(|&&e| e <= i as f64).count())
        .collect();
    let s_counts: Vec<usize> = (0..=SUCCESS_STEPS)
        .map(|i| {
            let theta = i as f64 / SUCCESS_STEPS as f64;
            ious.iter().filter(|&&v| v > theta).count()
        })
        .collect();
    let frac = |c: &usize| *c as f64 / n as f64;
    Ok(MetricReport {
        frames: n,
        precision: p_counts.iter().map(frac).collect(),
        success: s_counts.iter().map(frac).collect(),
        precision_at_20: frac(&p_counts[20]),
        success_auc: trapezoid(&s_counts, n),
        precision_auc: trapezoid(&p_counts, n),
        mean_iou: ious.iter().sum::<f64>() / n as f64,
    })
}

impl MetricReport {
    /// `threshold,precision,success` with one row per IoU threshold
    /// `i/100`; the precision column holds the `i` px value and is empty
    /// past 50 px.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("threshold,precision,success\n");
        for (i, succ) in self.success.iter().enumerate() {
            let prec = self.precision.get(i).map(|p| p.to_string()).unwrap_or_default();
            let _ = writeln!(s, "{:.2},{prec},{succ}", i as f64 / SUCCESS_STEPS as f64);
        }
        s
    }

    /// Side-by-side precision and success plots.
    pub fn to_svg(&self) -> String {
        let (w, h, pad) = (320.0, 240.0, 36.0);
        let mut s = format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{h}\" font-family=\"sans-serif\" font-size=\"11\">\n",
            2.0 * w
        );
        let panels = [
            ("Precision", "center error (px)", &self.precision, PRECISION_STEPS as f64, self.precision_at_20, "P@20"),
            ("Success", "IoU threshold", &self.success, 1.0, self.success_auc, "AUC"),
        ];
        for (k, (title, xlabel, curve, xmax, score, tag)) in panels.into_iter().enumerate() {
            let ox = k as f64 * w;
            let (pw, ph) = (w - 2.0 * pad, h - 2.0 * pad);
            let _ = writeln!(
                s,
                "<rect x=\"{}\" y=\"{pad}\" width=\"{pw}\" height=\"{ph}\" fill=\"none\" stroke=\"#888\"/>",
                ox + pad
            );
            let last = (curve.len() - 1) as f64;
            let pts: Vec<String> = curve
                .iter()
                .enumerate()
                .map(|(i, v)| format!("{:.2},{:.2}", ox + pad + pw * i as f64 / last, pad + ph * (1.0 - v)))
                .collect();
            let _ = writeln!(s, "<polyline fill=\"none\" stroke=\"#c03\" stroke-width=\"1.5\" points=\"{}\"/>", pts.join(" "));
            let _ = writeln!(s, "<text x=\"{}\" y=\"{}\">{title} ({tag} {score:.3})</text>", ox + pad, pad - 8.0);
            let _ = writeln!(s, "<text x=\"{}\" y=\"{}\">{xlabel}: 0 to {xmax}</text>", ox + pad, h - 10.0);
        }
        s.push_str("</svg>\n");
        s
    }
}
