//! Point-cloud F-score at a distance threshold, with grid-hashed neighbor search.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::geometry::PointCloud;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FScore {
    pub precision: f64,
    pub recall: f64,
    pub f: f64,
}

impl FScore {
    fn from_pr(precision: f64, recall: f64) -> Self {
        let f = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Self { precision, recall, f }
    }
}

type Cell = (i64, i64, i64);

struct Grid<'a> {
    tau: f64,
    points: &'a [[f64; 3]],
    cells: HashMap<Cell, Vec<usize>>,
}

impl<'a> Grid<'a> {
    fn new(points: &'a [[f64; 3]], tau: f64) -> Self {
        let mut cells: HashMap<Cell, Vec<usize>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            cells.entry(Self::cell(p, tau)).or_default().push(i);
        }
        Self { tau, points, cells }
    }

    fn cell(p: &[f64; 3], tau: f64) -> Cell {
        (
            (p[0] / tau).floor() as i64,
            (p[1] / tau).floor() as i64,
            (p[2] / tau).floor() as i64,
        )
    }

    /// Any point within τ (cells have side τ, so the 27-neighborhood suffices).
    fn has_neighbor(&self, q: &[f64; 3]) -> bool {
        let (cx, cy, cz) = Self::cell(q, self.tau);
        let t2 = self.tau * self.tau;
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if let Some(ids) = self.cells.get(&(cx + dx, cy + dy, cz + dz)) {
                        if ids.iter().any(|&i| dist2(&self.points[i], q) <= t2) {
                            return true;
                        }
                    }
                }
            }
        }
        false
    }
}

#[inline]
fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)
}

fn check(pred: &PointCloud, gt: &PointCloud, tau: f64) -> Result<()> {
    ensure!(!pred.is_empty() && !gt.is_empty(), InvalidInput, "f_score needs two nonempty clouds");
    ensure!(tau > 0.0 && tau.is_finite(), InvalidInput, "f_score threshold must be > 0");
    Ok(())
}

/// Precision: share of predicted points within τ of a ground-truth point; recall symmetric.
pub fn f_score(pred: &PointCloud, gt: &PointCloud, tau: f64) -> Result<FScore> {
    check(pred, gt, tau)?;
    let gt_grid = Grid::new(gt.points(), tau);
    let pred_grid = Grid::new(pred.points(), tau);
    let p = pred.points().iter().filter(|q| gt_grid.has_neighbor(q)).count() as f64 / pred.len() as f64;
    let r = gt.points().iter().filter(|q| pred_grid.has_neighbor(q)).count() as f64 / gt.len() as f64;
    Ok(FScore::from_pr(p, r))
}

/// Quadratic-time reference implementation.
pub fn f_score_brute(pred: &PointCloud, gt: &PointCloud, tau: f64) -> Result<FScore> {
    check(pred, gt, tau)?;
    let t2 = tau * tau;
    let within = |a: &[[f64; 3]], b: &[[f64; 3]]| a.iter().filter(|q| b.iter().any(|p| dist2(p, q) <= t2)).count() as f64 / a.len() as f64;
    Ok(FScore::from_pr(within(pred.points(), gt.points()), within(gt.points(), pred.points())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn cloud(r: &mut Rng, n: usize, spread: f64) -> PointCloud {
        PointCloud::new((0..n).map(|_| [r.uniform_range(-spread, spread), r.uniform_range(-spread, spread), r.uniform_range(1.0, 1.0 + spread)]).collect()).unwrap()
    }

    #[test]
    fn hand_cases() {
        let mut r = Rng::new(1);
        let gt = cloud(&mut r, 9, 1.0);
        assert_eq!(f_score(&gt, &gt, 0.25).unwrap().f, 1.0);
        let far = PointCloud::new(gt.points().iter().map(|p| [p[0] + 100.0, p[1], p[2]]).collect()).unwrap();
        assert_eq!(f_score(&far, &gt, 0.25).unwrap().f, 0.0);
        let mut pts = gt.points().to_vec();
        pts.push([50.0, 50.0, 50.0]);
        let s = f_score(&PointCloud::new(pts).unwrap(), &gt, 0.25).unwrap();
        assert!((s.precision - 0.9).abs() < 1e-15);
        assert_eq!(s.recall, 1.0);
        assert!((s.f - 18.0 / 19.0).abs() < 1e-15);
    }

    #[test]
    fn grid_matches_brute_force_and_is_symmetric() {
        let mut r = Rng::new(2);
        for _ in 0..3 {
            let a = cloud(&mut r, 2000, 2.0);
            let b = cloud(&mut r, 1500, 2.0);
            for tau in [0.05, 0.1, 0.25] {
                let g = f_score(&a, &b, tau).unwrap();
                assert_eq!(g, f_score_brute(&a, &b, tau).unwrap());
                assert_eq!(g.f, f_score(&b, &a, tau).unwrap().f);
            }
        }
    }

    #[test]
    fn empty_cloud_rejected() {
        let a = PointCloud::new(vec![[0.0, 0.0, 1.0]]).unwrap();
        let e = PointCloud::new(vec![]).unwrap();
        assert!(f_score(&a, &e, 0.25).is_err());
        assert!(f_score(&a, &a, 0.0).is_err());
    }
}
