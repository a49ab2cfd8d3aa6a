//! Identity-preservation and semantic scores for edits of mixture samples,
//! plus the cancellation diagnostic over a trajectory's updates.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gmm::{EditTask, GaussianMixture};
use crate::latent::Latent;

/// Top-two responsibilities closer than this flag an assignment as ambiguous.
pub const AMBIGUITY_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    pub component: usize,
    pub ambiguous: bool,
}

/// Most responsible component of `gmm` for a data-space point.
pub fn assign_component(gmm: &GaussianMixture, x: &Latent) -> Result<Assignment> {
    let gamma = gmm.responsibilities(x, 0.0)?;
    let mut order: Vec<usize> = (0..gamma.len()).collect();
    order.sort_by(|&a, &b| gamma[b].total_cmp(&gamma[a]).then(a.cmp(&b)));
    let ambiguous = gamma.len() > 1 && gamma[order[0]] - gamma[order[1]] <= AMBIGUITY_TOLERANCE;
    Ok(Assignment {
        component: order[0],
        ambiguous,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct OraclePoint {
    pub point: Latent,
    pub source_component: usize,
    pub ambiguous: bool,
}

/// The ideal identity-preserving edit: `x_src` translated by the mean shift
/// of its source component and that component's paired target.
pub fn paired_oracle_point(task: &EditTask, x_src: &Latent) -> Result<OraclePoint> {
    let a = assign_component(task.source(), x_src)?;
    let k = a.component;
    let shift = &task.target().means()[task.pairing()[k]] - &task.source().means()[k];
    Ok(OraclePoint {
        point: x_src + &shift,
        source_component: k,
        ambiguous: a.ambiguous,
    })
}

/// Distance to the paired oracle point, and whether the edit landed in the
/// target component paired with the source's component.
pub fn identity_error(task: &EditTask, x_src: &Latent, x_edit: &Latent) -> Result<(f64, bool)> {
    x_edit.check_dim(x_src.dim())?;
    let oracle = paired_oracle_point(task, x_src)?;
    let landed = assign_component(task.target(), x_edit)?;
    let consistent = landed.component == task.pairing()[oracle.source_component];
    Ok((x_edit.distance(&oracle.point), consistent))
}

/// Log-density of the edit under the target mixture.
pub fn semantic_score(task: &EditTask, x_edit: &Latent) -> Result<f64> {
    task.target().logpdf(x_edit)
}

/// `2 E|a - b| - E|a - a'| - E|b - b'|` over all pairs (V-statistic).
///
/// Rows are summed in parallel, each row sequentially, and row sums are
/// reduced in index order, so the value does not depend on thread count.
pub fn energy_distance(a: &[Latent], b: &[Latent]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::invalid("energy distance needs two nonempty batches"));
    }
    let d = a[0].dim();
    for x in a.iter().chain(b) {
        x.check_dim(d)?;
    }
    let mean_dist = |p: &[Latent], q: &[Latent]| -> f64 {
        let rows: Vec<f64> = p
            .par_iter()
            .map(|x| q.iter().map(|y| x.distance(y)).sum::<f64>())
            .collect();
        rows.iter().sum::<f64>() / (p.len() as f64 * q.len() as f64)
    };
    Ok(2.0 * mean_dist(a, b) - mean_dist(a, a) - mean_dist(b, b))
}

/// `|sum u_t| / sum |u_t|`; 1 when all updates are zero.
pub fn cancellation_ratio(updates: &[Latent]) -> Result<f64> {
    if updates.len() < 2 {
        return Err(Error::invalid("cancellation ratio needs at least two updates"));
    }
    let mut total = Latent::zeros(updates[0].dim());
    let mut path = 0.0;
    for u in updates {
        total += u;
        path += u.norm();
    }
    if path == 0.0 {
        return Ok(1.0);
    }
    Ok(total.norm() / path)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub identity_error: f64,
    pub assignment_consistent: bool,
    pub target_loglik: f64,
    pub source_loglik: f64,
    /// `None` when the method has no logged window (direct, inversion).
    pub cancel_ratio: Option<f64>,
}

pub fn score_edit(task: &EditTask, x_src: &Latent, x_edit: &Latent, updates: &[Latent]) -> Result<MetricsRow> {
    let (identity_error, assignment_consistent) = identity_error(task, x_src, x_edit)?;
    let cancel_ratio = if updates.len() >= 2 {
        Some(cancellation_ratio(updates)?)
    } else {
        None
    };
    Ok(MetricsRow {
        identity_error,
        assignment_consistent,
        target_loglik: semantic_score(task, x_edit)?,
        source_loglik: task.source().logpdf(x_edit)?,
        cancel_ratio,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Aggregates {
    pub count: usize,
    pub mean_identity_error: f64,
    pub assignment_rate: f64,
    pub mean_target_loglik: f64,
    pub mean_source_loglik: f64,
    /// Mean over rows that carry a ratio; `None` if none do.
    pub mean_cancel_ratio: Option<f64>,
    pub energy_distance: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub rows: Vec<MetricsRow>,
    pub aggregates: Aggregates,
}

impl MetricsReport {
    /// Aggregates the rows; the energy distance compares `edited` against
    /// `target_reference` when both are given.
    pub fn from_rows(
        rows: Vec<MetricsRow>,
        edited: Option<&[Latent]>,
        target_reference: Option<&[Latent]>,
    ) -> Result<Self> {
        let n = rows.len();
        let mean = |f: &dyn Fn(&MetricsRow) -> f64| -> f64 {
            if n == 0 {
                f64::NAN
            } else {
                rows.iter().map(f).sum::<f64>() / n as f64
            }
        };
        let ratios: Vec<f64> = rows.iter().filter_map(|r| r.cancel_ratio).collect();
        let energy = match (edited, target_reference) {
            (Some(e), Some(r)) if !e.is_empty() && !r.is_empty() => Some(energy_distance(e, r)?),
            _ => None,
        };
        let aggregates = Aggregates {
            count: n,
            mean_identity_error: mean(&|r| r.identity_error),
            assignment_rate: mean(&|r| if r.assignment_consistent { 1.0 } else { 0.0 }),
            mean_target_loglik: mean(&|r| r.target_loglik),
            mean_source_loglik: mean(&|r| r.source_loglik),
            mean_cancel_ratio: if ratios.is_empty() {
                None
            } else {
                Some(ratios.iter().sum::<f64>() / ratios.len() as f64)
            },
            energy_distance: energy,
        };
        Ok(MetricsReport { rows, aggregates })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn l(x: f64, y: f64) -> Latent {
        Latent::from([x, y])
    }

    #[test]
    fn oracle_point_maps_means() {
        let task = EditTask::paired_two_mode();
        for k in 0..2 {
            let mu = task.source().means()[k].clone();
            let o = paired_oracle_point(&task, &mu).unwrap();
            assert_eq!(o.point, task.target().means()[k]);
            assert!(!o.ambiguous);
        }
        let same = EditTask::identical(task.source().clone()).unwrap();
        let x = l(-2.0, 0.4);
        assert_eq!(paired_oracle_point(&same, &x).unwrap().point, x);
    }

    #[test]
    fn ambiguous_point_is_flagged() {
        let task = EditTask::paired_two_mode();
        let o = paired_oracle_point(&task, &l(-3.0, 0.0)).unwrap();
        assert!(o.ambiguous);
    }

    #[test]
    fn identity_error_examples() {
        let task = EditTask::paired_two_mode();
        let x = l(-2.7, 1.2);
        let oracle = paired_oracle_point(&task, &x).unwrap().point;
        assert_eq!(identity_error(&task, &x, &oracle).unwrap(), (0.0, true));
        let same = EditTask::identical(task.source().clone()).unwrap();
        assert_eq!(identity_error(&same, &x, &x).unwrap(), (0.0, true));
        // landing in the wrong target mode
        let (_, ok) = identity_error(&task, &x, &l(3.0, -1.0)).unwrap();
        assert!(!ok);
    }

    #[test]
    fn semantic_score_peak_and_tails() {
        let task = EditTask::paired_two_mode();
        let peak = semantic_score(&task, &l(3.0, 1.0)).unwrap();
        assert!(peak > semantic_score(&task, &l(3.1, 1.0)).unwrap());
        let mut prev = peak;
        for r in [5.0, 10.0, 20.0, 40.0, 80.0] {
            let s = semantic_score(&task, &l(3.0 + r, 1.0 + r)).unwrap();
            assert!(s < prev);
            prev = s;
        }
        assert!(prev < -1e3);
    }

    #[test]
    fn energy_distance_examples() {
        let a = vec![l(0.0, 0.0), l(1.0, 2.0), l(-1.0, 0.5)];
        assert!(energy_distance(&a, &a).unwrap().abs() < 1e-12);
        let p = vec![l(0.0, 0.0); 4];
        let q = vec![l(3.0, 4.0); 3];
        assert!((energy_distance(&p, &q).unwrap() - 10.0).abs() < 1e-12);
        assert!(energy_distance(&[], &q).is_err());
    }

    #[test]
    fn cancellation_examples() {
        let u = l(0.3, -0.1);
        assert!((cancellation_ratio(&vec![u.clone(); 5]).unwrap() - 1.0).abs() < 1e-15);
        let alt: Vec<Latent> = (0..6).map(|i| if i % 2 == 0 { u.clone() } else { -&u }).collect();
        assert_eq!(cancellation_ratio(&alt).unwrap(), 0.0);
        assert_eq!(cancellation_ratio(&vec![Latent::zeros(2); 3]).unwrap(), 1.0);
        assert!(cancellation_ratio(&[u]).is_err());
    }

    #[test]
    fn report_aggregates() {
        let rows = vec![
            MetricsRow {
                identity_error: 1.0,
                assignment_consistent: true,
                target_loglik: -2.0,
                source_loglik: -10.0,
                cancel_ratio: Some(0.5),
            },
            MetricsRow {
                identity_error: 3.0,
                assignment_consistent: false,
                target_loglik: -4.0,
                source_loglik: -20.0,
                cancel_ratio: None,
            },
        ];
        let r = MetricsReport::from_rows(rows, None, None).unwrap();
        assert_eq!(r.aggregates.mean_identity_error, 2.0);
        assert_eq!(r.aggregates.assignment_rate, 0.5);
        assert_eq!(r.aggregates.mean_target_loglik, -3.0);
        assert_eq!(r.aggregates.mean_cancel_ratio, Some(0.5));
        assert_eq!(r.aggregates.energy_distance, None);
    }
}
