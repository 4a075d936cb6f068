//! Continuity, scaling and rate summaries over migration reports.

use dagmig_core::engine::MigrationReport;
use serde::{Deserialize, Serialize};

/// Per-object fraction of the migration during which the object was
/// visible nowhere: from leaving the source to being displayed at the
/// destination. The migration spans the first source deletion to the
/// last display. Objects that never displayed (bagged) or came out of
/// bags are left out.
pub fn unavailable_fractions(report: &MigrationReport) -> Vec<f64> {
    let live = || report.timeline.iter().filter(|e| !e.from_bag);
    let Some(first) = live().filter_map(|e| e.source_invisible).min() else {
        return Vec::new();
    };
    let last = live().filter_map(|e| e.displayed).max().unwrap_or(first);
    let span = last.saturating_sub(first).max(1) as f64;
    live()
        .filter_map(|e| {
            let gone = e.source_invisible?;
            let shown = e.displayed?;
            Some((shown.saturating_sub(gone) as f64 / span).clamp(0.0, 1.0))
        })
        .collect()
}

/// Empirical CDF as (value, cumulative fraction) steps.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Cdf {
    pub points: Vec<(f64, f64)>,
}

impl Cdf {
    pub fn new(values: &[f64]) -> Cdf {
        let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
        v.sort_by(f64::total_cmp);
        let n = v.len() as f64;
        let mut points: Vec<(f64, f64)> = Vec::new();
        for (i, x) in v.iter().enumerate() {
            let p = (i + 1) as f64 / n;
            match points.last_mut() {
                Some(last) if last.0 == *x => last.1 = p,
                _ => points.push((*x, p)),
            }
        }
        Cdf { points }
    }

    /// Fraction of values at or below `x`.
    pub fn at(&self, x: f64) -> f64 {
        let i = self.points.partition_point(|(v, _)| *v <= x);
        if i == 0 {
            0.0
        } else {
            self.points[i - 1].1
        }
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// First-order stochastic dominance in the "smaller is better"
    /// sense: this CDF lies on or above `other` everywhere.
    pub fn dominates(&self, other: &Cdf) -> bool {
        self.points
            .iter()
            .chain(other.points.iter())
            .all(|(x, _)| self.at(*x) + 1e-12 >= other.at(*x))
    }
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 {
        v[m]
    } else {
        (v[m - 1] + v[m]) / 2.0
    })
}

/// Least-squares line with its coefficient of determination.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    pub n: usize,
}

/// Fits `y = slope * x + intercept`. `None` with fewer than two points
/// or no spread in x.
pub fn fit(points: &[(f64, f64)]) -> Option<LinearFit> {
    let n = points.len();
    if n < 2 {
        return None;
    }
    let nf = n as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / nf;
    let my = points.iter().map(|p| p.1).sum::<f64>() / nf;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = points.iter().map(|p| (p.1 - my).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = points
        .iter()
        .map(|p| (p.1 - slope * p.0 - intercept).powi(2))
        .sum();
    let r2 = if syy == 0.0 { 1.0 } else { 1.0 - sse / syy };
    Some(LinearFit {
        slope,
        intercept,
        r2,
        n,
    })
}

/// Cost of one algorithm against graph size (nodes plus edges).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingReport {
    pub algorithm: String,
    pub fit: Option<LinearFit>,
    pub min_size: f64,
    pub max_size: f64,
}

impl ScalingReport {
    pub fn new(algorithm: &str, points: &[(f64, f64)]) -> ScalingReport {
        let sizes = points.iter().map(|p| p.0);
        ScalingReport {
            algorithm: algorithm.to_owned(),
            fit: fit(points),
            min_size: sizes.clone().fold(f64::INFINITY, f64::min),
            max_size: sizes.fold(0.0, f64::max),
        }
    }

    pub fn span(&self) -> f64 {
        if self.min_size > 0.0 {
            self.max_size / self.min_size
        } else {
            f64::INFINITY
        }
    }
}

/// Graph size the scaling fits use.
pub fn graph_size(r: &MigrationReport) -> f64 {
    (r.src_nodes + r.src_edges) as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cdf_steps_and_lookup() {
        let c = Cdf::new(&[0.5, 0.1, 0.1, 1.0]);
        assert_eq!(c.points, vec![(0.1, 0.5), (0.5, 0.75), (1.0, 1.0)]);
        assert_eq!(c.at(0.0), 0.0);
        assert_eq!(c.at(0.3), 0.5);
        assert_eq!(c.at(2.0), 1.0);
    }

    #[test]
    fn smaller_values_dominate() {
        let low = Cdf::new(&[0.0, 0.1, 0.2]);
        let high = Cdf::new(&[0.5, 0.6, 1.0]);
        assert!(low.dominates(&high));
        assert!(!high.dominates(&low));
        let crossing = Cdf::new(&[0.0, 0.9, 0.95]);
        assert!(!crossing.dominates(&high));
    }

    #[test]
    fn median_of_odd_and_even() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(&[]), None);
    }

    #[test]
    fn exact_line_fits_perfectly() {
        let pts: Vec<(f64, f64)> = (1..=10).map(|x| (x as f64, 3.0 * x as f64 + 2.0)).collect();
        let f = fit(&pts).unwrap();
        assert!((f.slope - 3.0).abs() < 1e-9);
        assert!((f.intercept - 2.0).abs() < 1e-9);
        assert!((f.r2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn fit_needs_spread() {
        assert!(fit(&[(1.0, 1.0)]).is_none());
        assert!(fit(&[(2.0, 1.0), (2.0, 5.0)]).is_none());
    }

    #[test]
    fn noisy_fit_r2_matches_hand_computation() {
        let f = fit(&[(0.0, 1.0), (1.0, 0.0), (2.0, 3.0), (3.0, 2.0)]).unwrap();
        // sxx = 5, sxy = 3, syy = 5; residuals 0.4, -1.2, 1.2, -0.4.
        assert!((f.slope - 0.6).abs() < 1e-12);
        assert!((f.intercept - 0.6).abs() < 1e-12);
        assert!((f.r2 - (1.0 - 3.2 / 5.0)).abs() < 1e-12);
    }
}
