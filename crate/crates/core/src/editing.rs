//! Editing samplers: direct generation, editing by inversion, the
//! inversion-free velocity-difference sampler and the anchor-aligned
//! sampler.
//!
//! Every noise draw is keyed by `(seed, sample, step, repetition)` through
//! [`derive_noise`]; no sampler holds generator state, so results do not
//! depend on how samples are scheduled across threads.

use std::fmt;
use std::time::{Duration, Instant};

use rayon::prelude::*;

use crate::anchor::{anchor_gradient, single_step_inversion};
use crate::error::{Error, Result};
use crate::flow::{
    checked_velocity, euler_generate, euler_invert, make_grid_and_schedule, noisy_interpolate, Condition,
    ScheduleKind, VelocityField,
};
use crate::latent::Latent;
pub use crate::rng::derive_noise;

/// Step key used for the full-trajectory noise of the direct editor.
pub const GENERATION_STEP_KEY: u64 = u64::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Direct,
    Inversion,
    FlowEdit,
    AnchorFlow,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Direct, Method::Inversion, Method::FlowEdit, Method::AnchorFlow];

    pub fn name(self) -> &'static str {
        match self {
            Method::Direct => "direct",
            Method::Inversion => "inversion",
            Method::FlowEdit => "flowedit",
            Method::AnchorFlow => "anchorflow",
        }
    }

    pub fn parse(s: &str) -> Option<Method> {
        match s.to_ascii_lowercase().as_str() {
            "direct" => Some(Method::Direct),
            "inversion" => Some(Method::Inversion),
            "flowedit" => Some(Method::FlowEdit),
            "anchorflow" => Some(Method::AnchorFlow),
            _ => None,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// How the window samplers draw noise across steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NoiseMode {
    /// A new draw at every step (and every repetition).
    #[default]
    Fresh,
    /// One draw per repetition at step `n_max`, reused at every step.
    Fixed,
}

impl NoiseMode {
    pub fn name(self) -> &'static str {
        match self {
            NoiseMode::Fresh => "fresh",
            NoiseMode::Fixed => "fixed",
        }
    }

    pub fn parse(s: &str) -> Option<NoiseMode> {
        match s {
            "fresh" => Some(NoiseMode::Fresh),
            "fixed" => Some(NoiseMode::Fixed),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EditConfig {
    pub steps: usize,
    pub schedule: ScheduleKind,
    pub s_src: f64,
    pub s_tar: f64,
    pub n_min: usize,
    pub n_max: usize,
    pub n_avg: usize,
    pub seed: u64,
    pub method: Method,
    /// Multiplies the anchor-aligned update by an extra `(2 - t)`.
    pub squared_factor: bool,
    pub noise_mode: NoiseMode,
}

impl Default for EditConfig {
    fn default() -> Self {
        EditConfig {
            steps: 50,
            schedule: ScheduleKind::Linear,
            s_src: 3.5,
            s_tar: 7.5,
            n_min: 1,
            n_max: 41,
            n_avg: 1,
            seed: 0,
            method: Method::AnchorFlow,
            squared_factor: false,
            noise_mode: NoiseMode::Fresh,
        }
    }
}

impl EditConfig {
    pub fn with_method(mut self, method: Method) -> Self {
        self.method = method;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::invalid("T must be at least 1"));
        }
        if !(1 <= self.n_min && self.n_min <= self.n_max && self.n_max <= self.steps) {
            return Err(Error::invalid(format!(
                "need 1 <= n_min <= n_max <= T, got n_min = {}, n_max = {}, T = {}",
                self.n_min, self.n_max, self.steps
            )));
        }
        if self.n_avg == 0 {
            return Err(Error::invalid("n_avg must be at least 1"));
        }
        if !(self.s_src >= 0.0 && self.s_src.is_finite()) || !(self.s_tar >= 0.0 && self.s_tar.is_finite()) {
            return Err(Error::invalid("guidance scales must be finite and nonnegative"));
        }
        Ok(())
    }
}

/// One noise repetition within an active step.
#[derive(Debug, Clone, PartialEq)]
pub struct RepRecord {
    pub x_src_t: Latent,
    pub x_tar_t: Latent,
    pub v_src: Latent,
    pub v_tar: Latent,
    /// Velocity difference (FlowEdit) or alignment gradient (AnchorFlow).
    pub direction: Latent,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub index: usize,
    pub t: f64,
    /// Editing state before the update.
    pub x_fe: Latent,
    pub reps: Vec<RepRecord>,
    /// `X^FE_{t_{i-1}} - X^FE_{t_i}`
    pub update: Latent,
}

#[derive(Debug, Clone)]
pub struct EditResult {
    pub edited: Latent,
    /// Active steps in descending index order; empty for the direct and
    /// inversion editors.
    pub trajectory: Vec<StepRecord>,
    pub wall_time: Duration,
}

/// Equality ignores wall time.
impl PartialEq for EditResult {
    fn eq(&self, other: &Self) -> bool {
        self.edited == other.edited && self.trajectory == other.trajectory
    }
}

impl EditResult {
    pub fn updates(&self) -> Vec<Latent> {
        self.trajectory.iter().map(|s| s.update.clone()).collect()
    }
}

pub fn edit<F: VelocityField + ?Sized>(
    field: &F,
    cfg: &EditConfig,
    x_src: &Latent,
    sample_idx: u64,
) -> Result<EditResult> {
    match cfg.method {
        Method::Direct => direct_edit(field, cfg, x_src, sample_idx, None),
        Method::Inversion => inversion_edit(field, cfg, x_src),
        Method::FlowEdit => flowedit_sample(field, cfg, x_src, sample_idx),
        Method::AnchorFlow => anchorflow_sample(field, cfg, x_src, sample_idx),
    }
}

/// Edits each source with its index as the sample key, fanning out over the
/// current rayon pool. Output order and bits do not depend on the pool size.
pub fn edit_batch<F: VelocityField + ?Sized>(
    field: &F,
    cfg: &EditConfig,
    sources: &[Latent],
) -> Vec<Result<EditResult>> {
    sources
        .par_iter()
        .enumerate()
        .map(|(i, x)| edit(field, cfg, x, i as u64))
        .collect()
}

/// Generates from target-conditioned noise, ignoring the source.
pub fn direct_edit<F: VelocityField + ?Sized>(
    field: &F,
    cfg: &EditConfig,
    x_src: &Latent,
    sample_idx: u64,
    noise_override: Option<&Latent>,
) -> Result<EditResult> {
    cfg.validate()?;
    x_src.check_dim(field.dim())?;
    let start = Instant::now();
    let (grid, sched) = make_grid_and_schedule(cfg.steps, cfg.schedule)?;
    let noise = match noise_override {
        Some(n) => n.clone(),
        None => derive_noise(cfg.seed, sample_idx, GENERATION_STEP_KEY, 0, field.dim()),
    };
    let edited = euler_generate(field, Condition::Target, cfg.s_tar, &noise, &grid, &sched)?;
    Ok(EditResult {
        edited,
        trajectory: Vec::new(),
        wall_time: start.elapsed(),
    })
}

/// Inverts the source at unit guidance, then regenerates under the target.
pub fn inversion_edit<F: VelocityField + ?Sized>(
    field: &F,
    cfg: &EditConfig,
    x_src: &Latent,
) -> Result<EditResult> {
    cfg.validate()?;
    x_src.check_dim(field.dim())?;
    let start = Instant::now();
    let (grid, sched) = make_grid_and_schedule(cfg.steps, cfg.schedule)?;
    let inverted = euler_invert(field, Condition::Source, 1.0, x_src, &grid, &sched)?;
    let edited = euler_generate(field, Condition::Target, cfg.s_tar, &inverted, &grid, &sched)?;
    Ok(EditResult {
        edited,
        trajectory: Vec::new(),
        wall_time: start.elapsed(),
    })
}

/// Noise for repetition `rep` at grid index `step`.
pub fn step_noise(cfg: &EditConfig, dim: usize, sample_idx: u64, step: usize, rep: usize) -> Latent {
    let key = match cfg.noise_mode {
        NoiseMode::Fresh => step,
        NoiseMode::Fixed => cfg.n_max,
    };
    derive_noise(cfg.seed, sample_idx, key as u64, rep as u64, dim)
}

/// Source/target states and velocities shared by both window samplers.
fn branch_states<F: VelocityField + ?Sized>(
    field: &F,
    cfg: &EditConfig,
    x_fe: &Latent,
    x_src: &Latent,
    t: f64,
    noise: &Latent,
    step: usize,
) -> Result<(Latent, Latent, Latent, Latent)> {
    let x_src_t = noisy_interpolate(x_src, noise, t)?;
    // X^FE - X^src_0 first, so an unedited state maps X^tar_t onto X^src_t exactly
    let x_tar_t = &x_src_t + &(x_fe - x_src);
    let v_tar = checked_velocity(field, &x_tar_t, t, Condition::Target, cfg.s_tar, step)?;
    let v_src = checked_velocity(field, &x_src_t, t, Condition::Source, cfg.s_src, step)?;
    Ok((x_src_t, x_tar_t, v_src, v_tar))
}

/// Velocity difference `v(X^tar_t, c_tar) - v(X^src_t, c_src)` for one draw.
pub fn flowedit_direction<F: VelocityField + ?Sized>(
    field: &F,
    cfg: &EditConfig,
    x_fe: &Latent,
    x_src: &Latent,
    step: usize,
    t: f64,
    noise: &Latent,
) -> Result<RepRecord> {
    let (x_src_t, x_tar_t, v_src, v_tar) = branch_states(field, cfg, x_fe, x_src, t, noise, step)?;
    let direction = &v_tar - &v_src;
    Ok(RepRecord {
        x_src_t,
        x_tar_t,
        v_src,
        v_tar,
        direction,
    })
}

/// Alignment gradient `(2 - t) (F_t(X^tar_t) - F_t(X^src_t))` for one draw.
pub fn anchorflow_direction<F: VelocityField + ?Sized>(
    field: &F,
    cfg: &EditConfig,
    x_fe: &Latent,
    x_src: &Latent,
    step: usize,
    t: f64,
    noise: &Latent,
) -> Result<RepRecord> {
    let (x_src_t, x_tar_t, v_src, v_tar) = branch_states(field, cfg, x_fe, x_src, t, noise, step)?;
    // F_t(x) = x + (1 - t) v(x); the field values are reused from above
    let g_inv = x_tar_t.axpy(1.0 - t, &v_tar);
    let s_inv = x_src_t.axpy(1.0 - t, &v_src);
    debug_assert!({
        let check = single_step_inversion(field, &x_src_t, t, Condition::Source, cfg.s_src);
        check.map(|c| c == s_inv).unwrap_or(true)
    });
    let direction = anchor_gradient(&g_inv, &s_inv, t);
    Ok(RepRecord {
        x_src_t,
        x_tar_t,
        v_src,
        v_tar,
        direction,
    })
}

type DirectionFn<F> = fn(&F, &EditConfig, &Latent, &Latent, usize, f64, &Latent) -> Result<RepRecord>;

fn run_window<F: VelocityField + ?Sized>(
    field: &F,
    cfg: &EditConfig,
    x_src: &Latent,
    sample_idx: u64,
    direction: DirectionFn<F>,
    extra_factor: bool,
) -> Result<EditResult> {
    cfg.validate()?;
    x_src.check_dim(field.dim())?;
    let start = Instant::now();
    let (grid, sched) = make_grid_and_schedule(cfg.steps, cfg.schedule)?;
    let d = field.dim();
    let mut x_fe = x_src.clone();
    let mut trajectory = Vec::with_capacity(cfg.n_max - cfg.n_min + 1);
    for i in (cfg.n_min..=cfg.n_max).rev() {
        let t = grid.t(i);
        let mut reps = Vec::with_capacity(cfg.n_avg);
        for rep in 0..cfg.n_avg {
            let noise = step_noise(cfg, d, sample_idx, i, rep);
            reps.push(direction(field, cfg, &x_fe, x_src, i, t, &noise)?);
        }
        let mean_dir = Latent::mean(reps.iter().map(|r| &r.direction)).expect("n_avg >= 1");
        let mut step = sched.delta(i);
        if extra_factor {
            step *= 2.0 - t;
        }
        let update = mean_dir.scale(-step);
        if !update.is_finite() {
            return Err(Error::numeric(Some(i), "non-finite editing update"));
        }
        let next = &x_fe + &update;
        trajectory.push(StepRecord {
            index: i,
            t,
            x_fe: std::mem::replace(&mut x_fe, next),
            reps,
            update,
        });
    }
    Ok(EditResult {
        edited: x_fe,
        trajectory,
        wall_time: start.elapsed(),
    })
}

/// Inversion-free editing: Euler steps along the averaged velocity
/// difference over the active window `[n_min, n_max]`.
pub fn flowedit_sample<F: VelocityField + ?Sized>(
    field: &F,
    cfg: &EditConfig,
    x_src: &Latent,
    sample_idx: u64,
) -> Result<EditResult> {
    run_window(field, cfg, x_src, sample_idx, flowedit_direction::<F>, false)
}

/// Anchor-aligned editing: descends the alignment loss between the
/// single-step inversions of the target and source branches.
pub fn anchorflow_sample<F: VelocityField + ?Sized>(
    field: &F,
    cfg: &EditConfig,
    x_src: &Latent,
    sample_idx: u64,
) -> Result<EditResult> {
    run_window(
        field,
        cfg,
        x_src,
        sample_idx,
        anchorflow_direction::<F>,
        cfg.squared_factor,
    )
}
