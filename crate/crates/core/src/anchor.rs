//! Latent-anchor objectives and the anchor-aligned gradient.
//!
//! For per-step reconstructions `s_t = F_t(X^src_t)` and `g_t = F_t(X^tar_t)`
//! the strong objective `J(A) = sum_t |s_t - A|^2 + |g_t - A|^2` is minimized
//! by the mean midpoint, and at the minimum splits into the alignment term
//! `1/2 sum_t |g_t - s_t|^2` plus a midpoint-consistency term. The sampler
//! only descends the alignment term.

use crate::error::{Error, Result};
use crate::fault::{self, Fault};
use crate::flow::{Condition, VelocityField};
use crate::latent::Latent;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GuidanceScales {
    pub source: f64,
    pub target: f64,
}

/// Paired source/target reconstructions, one pair per timestep.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorSeries {
    sources: Vec<Latent>,
    targets: Vec<Latent>,
}

impl AnchorSeries {
    pub fn new(sources: Vec<Latent>, targets: Vec<Latent>) -> Result<Self> {
        if sources.is_empty() {
            return Err(Error::invalid("anchor series must be nonempty"));
        }
        if sources.len() != targets.len() {
            return Err(Error::invalid(format!(
                "anchor series lengths differ: {} sources, {} targets",
                sources.len(),
                targets.len()
            )));
        }
        let d = sources[0].dim();
        for x in sources.iter().chain(&targets) {
            x.check_dim(d)?;
        }
        Ok(AnchorSeries { sources, targets })
    }

    pub fn len(&self) -> usize {
        self.sources.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sources.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.sources[0].dim()
    }

    pub fn sources(&self) -> &[Latent] {
        &self.sources
    }

    pub fn targets(&self) -> &[Latent] {
        &self.targets
    }

    pub fn midpoints(&self) -> Vec<Latent> {
        self.pairs().map(|(s, g)| (s + g).scale(0.5)).collect()
    }

    pub fn pairs(&self) -> impl Iterator<Item = (&Latent, &Latent)> {
        self.sources.iter().zip(&self.targets)
    }

    /// Applies `f` to every reconstruction.
    pub fn map(&self, f: impl Fn(&Latent) -> Latent) -> AnchorSeries {
        AnchorSeries {
            sources: self.sources.iter().map(&f).collect(),
            targets: self.targets.iter().map(&f).collect(),
        }
    }
}

/// First-order estimate of the terminal noise state: `x + (1 - t) v(x, t)`.
pub fn single_step_inversion<F: VelocityField + ?Sized>(
    field: &F,
    x: &Latent,
    t: f64,
    cond: Condition,
    scale: f64,
) -> Result<Latent> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::invalid(format!("t = {t} outside [0, 1]")));
    }
    let v = field.velocity(x, t, cond, scale)?;
    Ok(x.axpy(1.0 - t, &v))
}

pub fn strong_objective(series: &AnchorSeries, anchor: &Latent) -> Result<f64> {
    anchor.check_dim(series.dim())?;
    Ok(series
        .pairs()
        .map(|(s, g)| (s - anchor).norm_squared() + (g - anchor).norm_squared())
        .sum())
}

/// `A* = (1 / 2T) sum_t (s_t + g_t)`, the mean of the midpoints.
pub fn optimal_anchor(series: &AnchorSeries) -> Latent {
    let mut acc = Latent::zeros(series.dim());
    for (s, g) in series.pairs() {
        acc += s;
        acc += g;
    }
    acc.scale(1.0 / (2.0 * series.len() as f64))
}

/// `J(A*) = 1/2 sum_t |g_t - s_t|^2 + 2 sum_t |m_t - m_bar|^2`
pub fn reduced_objective(series: &AnchorSeries) -> f64 {
    let mids = series.midpoints();
    let m_bar = Latent::mean(&mids).expect("series is nonempty");
    let spread: f64 = mids.iter().map(|m| (m - &m_bar).norm_squared()).sum();
    alignment_loss(series) + 2.0 * spread
}

/// `1/2 sum_t |g_t - s_t|^2`
pub fn alignment_loss(series: &AnchorSeries) -> f64 {
    0.5 * series.pairs().map(|(s, g)| (g - s).norm_squared()).sum::<f64>()
}

/// Jacobian-free alignment gradient `(2 - t) (g_inv - s_inv)`.
pub fn anchor_gradient(g_inv: &Latent, s_inv: &Latent, t: f64) -> Latent {
    let factor = if fault::is_active(Fault::SignFlip) {
        -(2.0 - t)
    } else {
        2.0 - t
    };
    (g_inv - s_inv).scale(factor)
}

/// Reference alignment gradient with the Jacobian term kept:
/// `[I + (1 - t) J]^T (g_inv - s_inv)` where `J` is the target-branch
/// velocity Jacobian, estimated by central differences with step `eps`.
#[allow(clippy::too_many_arguments)]
pub fn anchor_gradient_exact<F: VelocityField + ?Sized>(
    field: &F,
    x_fe: &Latent,
    x_src_t: &Latent,
    x_src_0: &Latent,
    t: f64,
    scales: GuidanceScales,
    eps: f64,
) -> Result<Latent> {
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(Error::invalid(format!("finite-difference eps {eps} outside [1e-7, 1e-3]")));
    }
    let x_tar_t = &(x_fe + x_src_t) - x_src_0;
    let g_inv = single_step_inversion(field, &x_tar_t, t, Condition::Target, scales.target)?;
    let s_inv = single_step_inversion(field, x_src_t, t, Condition::Source, scales.source)?;
    let resid = &g_inv - &s_inv;
    let d = x_fe.dim();
    let mut jt_r = Latent::zeros(d);
    for j in 0..d {
        let mut plus = x_tar_t.clone();
        let mut minus = x_tar_t.clone();
        plus[j] += eps;
        minus[j] -= eps;
        let vp = field.velocity(&plus, t, Condition::Target, scales.target)?;
        let vm = field.velocity(&minus, t, Condition::Target, scales.target)?;
        // column j of J dotted with the residual
        jt_r[j] = (&vp - &vm).scale(1.0 / (2.0 * eps)).dot(&resid);
    }
    Ok(resid.axpy(1.0 - t, &jt_r))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::simple::{ConstantField, LinearField};

    fn l(x: f64, y: f64) -> Latent {
        Latent::from([x, y])
    }

    #[test]
    fn single_step_examples() {
        let field = ConstantField(l(1.0, 0.0));
        let x = l(0.3, -0.7);
        assert_eq!(single_step_inversion(&field, &x, 1.0, Condition::Target, 1.0).unwrap(), x);
        assert_eq!(
            single_step_inversion(&field, &l(0.0, 0.0), 0.25, Condition::Target, 1.0).unwrap(),
            l(0.75, 0.0)
        );
        assert!(single_step_inversion(&field, &x, 1.2, Condition::Target, 1.0).is_err());
    }

    #[test]
    fn single_step_exact_on_straight_flow() {
        // x_t = x_0 + t c along a constant field; F_t(x_t) must land on x_1
        let c = l(0.4, -1.1);
        let field = ConstantField(c.clone());
        let x0 = l(2.0, 3.0);
        for t in [0.0, 0.2, 0.5, 0.9] {
            let xt = x0.axpy(t, &c);
            let f = single_step_inversion(&field, &xt, t, Condition::Source, 1.0).unwrap();
            assert!(f.max_abs_diff(&(&x0 + &c)) < 1e-14);
        }
    }

    #[test]
    fn objective_hand_values() {
        let one = AnchorSeries::new(vec![l(1.0, 0.0)], vec![l(3.0, 0.0)]).unwrap();
        assert_eq!(strong_objective(&one, &l(2.0, 0.0)).unwrap(), 2.0);
        assert_eq!(optimal_anchor(&one), l(2.0, 0.0));
        assert_eq!(alignment_loss(&one), 2.0);

        let two = AnchorSeries::new(vec![l(0.0, 0.0), l(0.0, 0.0)], vec![l(2.0, 0.0), l(4.0, 0.0)]).unwrap();
        assert_eq!(strong_objective(&two, &l(1.5, 0.0)).unwrap(), 11.0);
        assert_eq!(optimal_anchor(&two), l(1.5, 0.0));
        assert_eq!(reduced_objective(&two), 11.0);
        assert_eq!(alignment_loss(&two), 10.0);
    }

    #[test]
    fn perfect_anchor_is_zero() {
        let a = l(0.5, 0.5);
        let s = AnchorSeries::new(vec![a.clone(); 3], vec![a.clone(); 3]).unwrap();
        assert_eq!(strong_objective(&s, &a).unwrap(), 0.0);
        assert_eq!(alignment_loss(&s), 0.0);
    }

    #[test]
    fn equal_midpoints_close_the_bound() {
        // midpoints all at (1, 1)
        let s = AnchorSeries::new(vec![l(0.0, 1.0), l(1.0, 0.0)], vec![l(2.0, 1.0), l(1.0, 2.0)]).unwrap();
        assert_eq!(reduced_objective(&s), alignment_loss(&s));
    }

    #[test]
    fn series_validation() {
        assert!(AnchorSeries::new(vec![], vec![]).is_err());
        assert!(AnchorSeries::new(vec![l(0.0, 0.0)], vec![]).is_err());
        assert!(AnchorSeries::new(vec![l(0.0, 0.0)], vec![Latent::zeros(3)]).is_err());
    }

    #[test]
    fn gradient_examples() {
        let s = l(0.1, 0.2);
        assert_eq!(anchor_gradient(&s, &s, 0.3), l(0.0, 0.0));
        let g = anchor_gradient(&l(0.2, -0.4), &l(0.0, 0.0), 0.5);
        assert!(g.max_abs_diff(&l(0.3, -0.6)) < 1e-15);
        assert_eq!(anchor_gradient(&l(0.7, 0.1), &l(0.2, 0.3), 1.0), &l(0.7, 0.1) - &l(0.2, 0.3));
    }

    #[test]
    fn exact_gradient_zero_field() {
        let field = ConstantField(Latent::zeros(2));
        let scales = GuidanceScales { source: 3.5, target: 7.5 };
        let (x_fe, x_src_t, x_src_0) = (l(1.0, 2.0), l(0.5, -0.5), l(0.25, 0.0));
        let got = anchor_gradient_exact(&field, &x_fe, &x_src_t, &x_src_0, 0.4, scales, 1e-5).unwrap();
        let x_tar = &(&x_fe + &x_src_t) - &x_src_0;
        assert!(got.max_abs_diff(&(&x_tar - &x_src_t)) < 1e-15);
    }

    #[test]
    fn exact_gradient_linear_field() {
        let m = [0.3, -1.2, 0.8, 0.5];
        let field = LinearField::new(2, m.to_vec());
        let scales = GuidanceScales { source: 1.0, target: 1.0 };
        let (x_fe, x_src_t, x_src_0) = (l(0.4, -0.9), l(1.5, 0.2), l(-0.3, 0.6));
        let t = 0.35;
        let got = anchor_gradient_exact(&field, &x_fe, &x_src_t, &x_src_0, t, scales, 1e-5).unwrap();

        // hand-computed [I + (1-t) M]^T r with F(x) = (I + (1-t) M) x
        let apply = |x: &Latent| -> Latent {
            l(
                x[0] + (1.0 - t) * (m[0] * x[0] + m[1] * x[1]),
                x[1] + (1.0 - t) * (m[2] * x[0] + m[3] * x[1]),
            )
        };
        let x_tar = &(&x_fe + &x_src_t) - &x_src_0;
        let r = &apply(&x_tar) - &apply(&x_src_t);
        let expected = l(
            r[0] + (1.0 - t) * (m[0] * r[0] + m[2] * r[1]),
            r[1] + (1.0 - t) * (m[1] * r[0] + m[3] * r[1]),
        );
        assert!(got.max_abs_diff(&expected) < 1e-6, "{got:?} vs {expected:?}");
    }

    #[test]
    fn exact_gradient_rejects_bad_eps() {
        let field = ConstantField(Latent::zeros(2));
        let s = GuidanceScales { source: 1.0, target: 1.0 };
        let z = Latent::zeros(2);
        assert!(anchor_gradient_exact(&field, &z, &z, &z, 0.5, s, 1e-2).is_err());
        assert!(anchor_gradient_exact(&field, &z, &z, &z, 0.5, s, 1e-9).is_err());
    }
}
