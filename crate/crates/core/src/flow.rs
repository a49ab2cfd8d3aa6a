//! Time grids, noise schedules, forward noising and Euler integration.
//!
//! Time convention: `t = 1` is pure noise and `t = 0` is data. The noised
//! state is `X_t = (1 - t) X_0 + t N`, so the velocity `dX/dt` points from
//! data toward noise and *generation integrates backward in time*:
//! `X_{t_{i-1}} = X_{t_i} - delta_i * v(X_{t_i}, t_i)`.

use crate::error::{Error, Result};
use crate::fault::{self, Fault};
use crate::latent::Latent;

/// Which conditional branch of a field to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Condition {
    Source,
    Target,
    Unconditional,
}

impl Condition {
    pub const ALL: [Condition; 3] = [Condition::Source, Condition::Target, Condition::Unconditional];

    pub fn index(self) -> usize {
        match self {
            Condition::Source => 0,
            Condition::Target => 1,
            Condition::Unconditional => 2,
        }
    }
}

/// An evaluable velocity field `v(x, t, condition, guidance_scale)`.
///
/// Implementations must be pure: identical arguments give identical bits.
pub trait VelocityField: Sync {
    fn dim(&self) -> usize;

    fn velocity(&self, x: &Latent, t: f64, cond: Condition, scale: f64) -> Result<Latent>;
}

impl<F: VelocityField + ?Sized> VelocityField for &F {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn velocity(&self, x: &Latent, t: f64, cond: Condition, scale: f64) -> Result<Latent> {
        (**self).velocity(x, t, cond, scale)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    t: Vec<f64>,
}

impl TimeGrid {
    /// Number of steps `T`; the grid has `T + 1` nodes.
    pub fn steps(&self) -> usize {
        self.t.len() - 1
    }

    pub fn t(&self, i: usize) -> f64 {
        self.t[i]
    }

    pub fn values(&self) -> &[f64] {
        &self.t
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ScheduleKind {
    /// `sigma_{t_i} = t_i`
    #[default]
    Linear,
}

impl ScheduleKind {
    pub fn parse(s: &str) -> Option<ScheduleKind> {
        match s {
            "linear" => Some(ScheduleKind::Linear),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ScheduleKind::Linear => "linear",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    sigma: Vec<f64>,
}

impl Schedule {
    pub fn sigma(&self, i: usize) -> f64 {
        self.sigma[i]
    }

    /// Step size `delta_i = sigma_{t_i} - sigma_{t_{i-1}}` for `i >= 1`.
    pub fn delta(&self, i: usize) -> f64 {
        self.sigma[i] - self.sigma[i - 1]
    }

    pub fn values(&self) -> &[f64] {
        &self.sigma
    }
}

pub fn make_grid_and_schedule(steps: usize, kind: ScheduleKind) -> Result<(TimeGrid, Schedule)> {
    if steps == 0 {
        return Err(Error::invalid("step count T must be at least 1"));
    }
    let n = steps as f64;
    let t: Vec<f64> = (0..=steps).map(|i| i as f64 / n).collect();
    let sigma = match kind {
        ScheduleKind::Linear if fault::is_active(Fault::WrongSchedule) => {
            (0..=steps).map(|i| i as f64 / (n + 1.0)).collect()
        }
        ScheduleKind::Linear => t.clone(),
    };
    Ok((TimeGrid { t }, Schedule { sigma }))
}

/// `(1 - t) * x0 + t * noise`
pub fn noisy_interpolate(x0: &Latent, noise: &Latent, t: f64) -> Result<Latent> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::invalid(format!("t = {t} outside [0, 1]")));
    }
    noise.check_dim(x0.dim())?;
    // exact endpoints, independent of rounding in the blend
    if t == 0.0 {
        return Ok(x0.clone());
    }
    if t == 1.0 {
        return Ok(noise.clone());
    }
    Ok(Latent::new(
        x0.iter()
            .zip(noise.iter())
            .map(|(a, b)| (1.0 - t) * a + t * b)
            .collect(),
    ))
}

pub(crate) fn checked_velocity<F: VelocityField + ?Sized>(
    field: &F,
    x: &Latent,
    t: f64,
    cond: Condition,
    scale: f64,
    step: usize,
) -> Result<Latent> {
    let v = field.velocity(x, t, cond, scale).map_err(|e| match e {
        Error::NumericFailure { step: None, what } => Error::NumericFailure {
            step: Some(step),
            what,
        },
        other => other,
    })?;
    if !v.is_finite() {
        return Err(Error::numeric(Some(step), "non-finite velocity"));
    }
    Ok(v)
}

fn check_grid(grid: &TimeGrid, sched: &Schedule) -> Result<()> {
    if grid.t.len() != sched.sigma.len() {
        return Err(Error::invalid("time grid and schedule lengths differ"));
    }
    Ok(())
}

/// Integrates from noise (`t = 1`) down to data (`t = 0`).
pub fn euler_generate<F: VelocityField + ?Sized>(
    field: &F,
    cond: Condition,
    scale: f64,
    noise: &Latent,
    grid: &TimeGrid,
    sched: &Schedule,
) -> Result<Latent> {
    check_grid(grid, sched)?;
    noise.check_dim(field.dim())?;
    let mut x = noise.clone();
    for i in (1..=grid.steps()).rev() {
        let v = checked_velocity(field, &x, grid.t(i), cond, scale, i)?;
        x = x.axpy(-sched.delta(i), &v);
    }
    Ok(x)
}

/// Naive Euler inversion: integrates from data (`t = 0`) up to noise.
pub fn euler_invert<F: VelocityField + ?Sized>(
    field: &F,
    cond: Condition,
    scale: f64,
    x0: &Latent,
    grid: &TimeGrid,
    sched: &Schedule,
) -> Result<Latent> {
    check_grid(grid, sched)?;
    x0.check_dim(field.dim())?;
    let mut x = x0.clone();
    for i in 1..=grid.steps() {
        let v = checked_velocity(field, &x, grid.t(i - 1), cond, scale, i)?;
        x = x.axpy(sched.delta(i), &v);
    }
    Ok(x)
}

/// Closed-form fields used as fixtures and in the verification suite.
pub mod simple {
    use super::*;

    /// `v = c` everywhere, for every condition and scale.
    #[derive(Debug, Clone)]
    pub struct ConstantField(pub Latent);

    impl VelocityField for ConstantField {
        fn dim(&self) -> usize {
            self.0.dim()
        }

        fn velocity(&self, x: &Latent, _t: f64, _cond: Condition, _scale: f64) -> Result<Latent> {
            x.check_dim(self.0.dim())?;
            Ok(self.0.clone())
        }
    }

    /// `v = M x` with a row-major `d x d` matrix, ignoring time and condition.
    #[derive(Debug, Clone)]
    pub struct LinearField {
        dim: usize,
        matrix: Vec<f64>,
    }

    impl LinearField {
        pub fn new(dim: usize, matrix: Vec<f64>) -> Self {
            assert_eq!(matrix.len(), dim * dim);
            LinearField { dim, matrix }
        }

        pub fn matrix(&self) -> &[f64] {
            &self.matrix
        }
    }

    impl VelocityField for LinearField {
        fn dim(&self) -> usize {
            self.dim
        }

        fn velocity(&self, x: &Latent, _t: f64, _cond: Condition, _scale: f64) -> Result<Latent> {
            x.check_dim(self.dim)?;
            Ok(Latent::new(
                self.matrix
                    .chunks(self.dim)
                    .map(|row| row.iter().zip(x.iter()).map(|(m, v)| m * v).sum())
                    .collect(),
            ))
        }
    }

    /// A field that produces NaN at and below a threshold time.
    #[derive(Debug, Clone)]
    pub struct PoisonedField {
        pub dim: usize,
        pub below_t: f64,
    }

    impl VelocityField for PoisonedField {
        fn dim(&self) -> usize {
            self.dim
        }

        fn velocity(&self, _x: &Latent, t: f64, _cond: Condition, _scale: f64) -> Result<Latent> {
            let v = if t <= self.below_t { f64::NAN } else { 0.0 };
            Ok(Latent::new(vec![v; self.dim]))
        }
    }
}
