//! Depth evaluation metrics and the consistency-probe error maps.

mod fscore;
mod probe;

pub use fscore::{f_score, f_score_brute, FScore};
pub use probe::{edge_weights, pud_branch_means, pud_probe, subsample_probe, ProbeMap};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::geometry::unproject;
use crate::tensor::{CameraIntrinsics, DepthMap};

/// Exponents t of the δ_t thresholds (ratio bound 1.25^t).
pub const DELTA_EXPONENTS: [f64; 5] = [0.25, 0.5, 1.0, 2.0, 3.0];

pub const DEFAULT_FSCORE_TAU: f64 = 0.25;

fn joint(pred: &DepthMap, gt: &DepthMap) -> Result<Vec<(f64, f64)>> {
    ensure!(pred.dims() == gt.dims(), Shape, "prediction {:?} vs ground truth {:?}", pred.dims(), gt.dims());
    let pairs: Vec<(f64, f64)> = pred
        .depth()
        .iter()
        .zip(gt.depth())
        .zip(pred.valid().iter().zip(gt.valid()))
        .filter(|(_, (a, b))| **a && **b)
        .map(|((p, g), _)| (f64::from(*p), f64::from(*g)))
        .collect();
    ensure!(!pairs.is_empty(), InvalidInput, "prediction and ground truth share no valid pixels");
    Ok(pairs)
}

/// Fraction of jointly valid pixels with `max(p/g, g/p) < 1.25^t`.
pub fn delta_threshold(pred: &DepthMap, gt: &DepthMap, t: f64) -> Result<f64> {
    let pairs = joint(pred, gt)?;
    let bound = 1.25f64.powf(t);
    let hits = pairs.iter().filter(|(p, g)| (p / g).max(g / p) < bound).count();
    Ok(hits as f64 / pairs.len() as f64)
}

/// `sqrt(E[g²] − E[g]²)`, `g = ln p − ln g`.
///
/// Residuals are taken relative to the first pair's ratio, which leaves the
/// variance unchanged and makes power-of-two rescaling of `pred` bit-exact.
pub fn si_log(pred: &DepthMap, gt: &DepthMap) -> Result<f64> {
    let pairs = joint(pred, gt)?;
    ensure!(pairs.len() >= 2, InvalidInput, "si_log needs at least 2 jointly valid pixels");
    let n = pairs.len() as f64;
    let r0 = pairs[0].0 / pairs[0].1;
    let g: Vec<f64> = pairs.iter().map(|(p, t)| ((p / t) / r0).ln()).collect();
    let mean = g.iter().sum::<f64>() / n;
    // centered form of E[g²] − E[g]², exact zero for constant g
    let var = g.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Ok(var.sqrt())
}

pub fn abs_rel(pred: &DepthMap, gt: &DepthMap) -> Result<f64> {
    let pairs = joint(pred, gt)?;
    Ok(pairs.iter().map(|(p, g)| (p - g).abs() / g).sum::<f64>() / pairs.len() as f64)
}

pub fn rmse(pred: &DepthMap, gt: &DepthMap) -> Result<f64> {
    let pairs = joint(pred, gt)?;
    Ok((pairs.iter().map(|(p, g)| (p - g).powi(2)).sum::<f64>() / pairs.len() as f64).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// δ_t keyed by `t` formatted as in [`delta_key`].
    pub delta: BTreeMap<String, f64>,
    pub si_log: f64,
    pub abs_rel: f64,
    /// `abs_rel × 100`.
    pub abs_rel_pct: f64,
    pub rmse: f64,
    pub f_score: f64,
    pub valid_pixel_count: usize,
}

pub fn delta_key(t: f64) -> String {
    format!("{t}")
}

impl MetricsReport {
    pub fn delta_at(&self, t: f64) -> f64 {
        self.delta[&delta_key(t)]
    }

    /// Element-wise mean; `valid_pixel_count` is summed.
    pub fn mean(reports: &[MetricsReport]) -> Result<MetricsReport> {
        ensure!(!reports.is_empty(), InvalidInput, "no reports to average");
        let n = reports.len() as f64;
        let avg = |f: &dyn Fn(&MetricsReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
        let delta = DELTA_EXPONENTS
            .iter()
            .map(|t| (delta_key(*t), avg(&|r| r.delta_at(*t))))
            .collect();
        Ok(MetricsReport {
            delta,
            si_log: avg(&|r| r.si_log),
            abs_rel: avg(&|r| r.abs_rel),
            abs_rel_pct: avg(&|r| r.abs_rel_pct),
            rmse: avg(&|r| r.rmse),
            f_score: avg(&|r| r.f_score),
            valid_pixel_count: reports.iter().map(|r| r.valid_pixel_count).sum(),
        })
    }

    pub fn table_header() -> String {
        format!(
            "{:<14} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8}",
            "name", "δ0.25", "δ0.5", "δ1", "F_A", "SI_log", "Abs", "RMS"
        )
    }

    /// One row in the column order δ0.25 δ0.5 δ1 F_A SI_log Abs(×100) RMS.
    pub fn table_row(&self, name: &str) -> String {
        format!(
            "{:<14} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>8.3} {:>8.4}",
            name,
            self.delta_at(0.25),
            self.delta_at(0.5),
            self.delta_at(1.0),
            self.f_score,
            self.si_log,
            self.abs_rel_pct,
            self.rmse
        )
    }
}

/// Every metric for one prediction. The F-score compares unprojected clouds
/// of the jointly valid pixels.
pub fn evaluate(pred: &DepthMap, gt: &DepthMap, k: &CameraIntrinsics, tau: f64) -> Result<MetricsReport> {
    let pairs = joint(pred, gt)?;
    let delta = DELTA_EXPONENTS
        .iter()
        .map(|t| Ok((delta_key(*t), delta_threshold(pred, gt, *t)?)))
        .collect::<Result<_>>()?;
    let both: Vec<bool> = pred.valid().iter().zip(gt.valid()).map(|(a, b)| *a && *b).collect();
    let pc_pred = unproject(&pred.masked(&both)?, k, 1.0, None)?;
    let pc_gt = unproject(&gt.masked(&both)?, k, 1.0, None)?;
    let ar = abs_rel(pred, gt)?;
    Ok(MetricsReport {
        delta,
        si_log: if pairs.len() >= 2 { si_log(pred, gt)? } else { 0.0 },
        abs_rel: ar,
        abs_rel_pct: ar * 100.0,
        rmse: rmse(pred, gt)?,
        f_score: f_score(&pc_pred, &pc_gt, tau)?.f,
        valid_pixel_count: pairs.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn rand_depth(r: &mut Rng, h: usize, w: usize) -> DepthMap {
        DepthMap::from_values(h, w, (0..h * w).map(|_| r.uniform_range(0.5, 5.0) as f32).collect()).unwrap()
    }

    fn scaled(d: &DepthMap, c: f32) -> DepthMap {
        DepthMap::from_values(d.height(), d.width(), d.depth().iter().map(|v| v * c).collect()).unwrap()
    }

    #[test]
    fn deltas() {
        let mut r = Rng::new(1);
        let gt = rand_depth(&mut r, 8, 8);
        for t in DELTA_EXPONENTS {
            assert_eq!(delta_threshold(&gt, &gt, t).unwrap(), 1.0);
        }
        assert_eq!(delta_threshold(&scaled(&gt, 1.3), &gt, 1.0).unwrap(), 0.0);
        assert_eq!(delta_threshold(&scaled(&gt, 1.056), &gt, 0.25).unwrap(), 1.0);
        assert_eq!(delta_threshold(&scaled(&gt, 1.06), &gt, 0.25).unwrap(), 0.0);
    }

    #[test]
    fn si_log_cases() {
        let mut r = Rng::new(2);
        let gt = rand_depth(&mut r, 6, 6);
        assert_eq!(si_log(&gt, &gt).unwrap(), 0.0);
        assert_eq!(si_log(&scaled(&gt, 2.0), &gt).unwrap(), 0.0);
        let p = rand_depth(&mut r, 6, 6);
        assert_eq!(si_log(&scaled(&p, 0.25), &gt).unwrap(), si_log(&p, &gt).unwrap());
        let g2 = DepthMap::from_values(1, 2, vec![1.0, 1.0]).unwrap();
        let p2 = DepthMap::from_values(1, 2, vec![1.0, 2.0]).unwrap();
        assert!((si_log(&p2, &g2).unwrap() - 2f64.ln() / 2.0).abs() < 1e-15);
    }

    #[test]
    fn abs_rel_and_rmse() {
        let gt = DepthMap::filled(3, 3, 2.0).unwrap();
        assert_eq!(abs_rel(&gt, &gt).unwrap(), 0.0);
        assert_eq!(rmse(&gt, &gt).unwrap(), 0.0);
        assert_eq!(rmse(&DepthMap::filled(3, 3, 2.5).unwrap(), &gt).unwrap(), 0.5);
        let p = DepthMap::filled(3, 3, 2.2).unwrap();
        assert!((abs_rel(&p, &gt).unwrap() - 0.1).abs() < 1e-6);
    }

    #[test]
    fn report_mean_and_table() {
        let k = CameraIntrinsics::new(10.0, 10.0, 4.0, 4.0).unwrap();
        let mut r = Rng::new(3);
        let gt = rand_depth(&mut r, 8, 8);
        let a = evaluate(&gt, &gt, &k, 0.25).unwrap();
        assert_eq!(a.f_score, 1.0);
        assert_eq!(a.si_log, 0.0);
        let b = evaluate(&scaled(&gt, 1.1), &gt, &k, 0.25).unwrap();
        let m = MetricsReport::mean(&[a.clone(), b.clone()]).unwrap();
        assert!((m.rmse - (a.rmse + b.rmse) / 2.0).abs() < 1e-15);
        let header = MetricsReport::table_header();
        let cols: Vec<&str> = header.split_whitespace().collect();
        assert_eq!(cols, ["name", "δ0.25", "δ0.5", "δ1", "F_A", "SI_log", "Abs", "RMS"]);
        assert_eq!(m.table_row("mean").split_whitespace().count(), 8);
    }
}
