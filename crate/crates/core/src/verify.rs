//! Self-checks over the whole pipeline, run by the `verify` subcommand and
//! written to verify.txt by bench runs.

use std::fmt::Write as _;
use std::time::Instant;

use crate::anchor::{alignment_loss, optimal_anchor, reduced_objective, strong_objective, AnchorSeries};
use crate::bench::{results_csv, run_cells, with_threads};
use crate::config::{BenchSpec, GridPoint};
use crate::editing::{anchorflow_sample, edit, EditConfig, Method};
use crate::flow::simple::ConstantField;
use crate::flow::{euler_generate, euler_invert, make_grid_and_schedule, Condition, ScheduleKind, VelocityField};
use crate::gmm::{mc_velocity_oracle, EditTask, GaussianMixture};
use crate::latent::Latent;
use crate::mlp::{numeric_grad_check, sample_batch, MlpField};
use crate::rng::{derive_noise, Stream};

#[derive(Debug, Clone)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct VerifyReport {
    pub checks: Vec<CheckOutcome>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn first_failure(&self) -> Option<&CheckOutcome> {
        self.checks.iter().find(|c| !c.passed)
    }

    /// 0 when every check passes, 4 otherwise.
    pub fn exit_code(&self) -> i32 {
        if self.passed() {
            0
        } else {
            4
        }
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for c in &self.checks {
            let tag = if c.passed { "PASS" } else { "FAIL" };
            writeln!(s, "{tag} {:<30} {}", c.name, c.detail).unwrap();
        }
        match self.first_failure() {
            None => writeln!(s, "result: pass ({} checks)", self.checks.len()).unwrap(),
            Some(c) => writeln!(s, "result: FAIL (first failure: {})", c.name).unwrap(),
        }
        s
    }
}

type Check = fn() -> Result<String, String>;

const CHECKS: &[(&str, Check)] = &[
    ("time-grid-and-schedule", check_schedule),
    ("closed-form-velocity", check_closed_form),
    ("oracle-equivalence", check_oracle),
    ("cfg-affinity", check_cfg),
    ("anchor-identities", check_anchor_identities),
    ("gradient-expansion-identity", check_gradient_expansion),
    ("identity-edit-invariance", check_identity_edit),
    ("noise-determinism", check_noise),
    ("learned-field-gradients", check_grad),
    ("checkpoint-round-trip", check_checkpoint),
    ("thread-count-determinism", check_threads),
];

pub fn check_names() -> Vec<&'static str> {
    CHECKS.iter().map(|(n, _)| *n).collect()
}

pub fn run_verify() -> VerifyReport {
    let checks = CHECKS
        .iter()
        .map(|(name, f)| {
            let start = Instant::now();
            let (passed, detail) = match f() {
                Ok(d) => (true, d),
                Err(d) => (false, d),
            };
            CheckOutcome {
                name,
                passed,
                detail,
                seconds: start.elapsed().as_secs_f64(),
            }
        })
        .collect();
    VerifyReport { checks }
}

fn lib<T>(r: crate::Result<T>) -> Result<T, String> {
    r.map_err(|e| e.to_string())
}

fn close(a: &Latent, b: &Latent, tol: f64) -> bool {
    let scale = a.norm().max(b.norm()).max(1.0);
    a.max_abs_diff(b) <= tol * scale
}

fn check_schedule() -> Result<String, String> {
    for steps in [1usize, 7, 50] {
        let (grid, sched) = lib(make_grid_and_schedule(steps, ScheduleKind::Linear))?;
        for i in 0..=steps {
            let expect = i as f64 / steps as f64;
            if (grid.t(i) - expect).abs() > 1e-15 || (sched.sigma(i) - expect).abs() > 1e-15 {
                return Err(format!("T = {steps}: t or sigma at {i} is not {i}/{steps}"));
            }
        }
        for i in 1..=steps {
            if (sched.delta(i) - 1.0 / steps as f64).abs() > 1e-15 {
                return Err(format!("T = {steps}: delta at {i} is not 1/{steps}"));
            }
        }
        let c = Latent::from([0.7, -1.3]);
        let x = Latent::from([0.2, 0.5]);
        let gen = lib(euler_generate(&ConstantField(c.clone()), Condition::Target, 1.0, &x, &grid, &sched))?;
        if !close(&gen, &(&x - &c), 1e-12) {
            return Err(format!("T = {steps}: constant field did not transport by -c"));
        }
        let inv = lib(euler_invert(&ConstantField(c.clone()), Condition::Source, 1.0, &gen, &grid, &sched))?;
        if !close(&inv, &x, 1e-12) {
            return Err(format!("T = {steps}: inversion did not undo generation"));
        }
    }
    Ok("t_i = sigma_i = i/T, delta = 1/T, constant transport exact".into())
}

fn check_closed_form() -> Result<String, String> {
    let v = lib(GaussianMixture::standard_normal(2).marginal_velocity(&Latent::from([1.0, 2.0]), 1.0))?;
    if !close(&v, &Latent::from([1.0, 2.0]), 1e-15) {
        return Err(format!("N(0, I) at t = 1: {v:?}"));
    }
    let g = lib(GaussianMixture::isotropic(Latent::from([1.0, -2.0]), 0.5))?;
    let x = Latent::from([0.3, 0.4]);
    let v0 = lib(g.marginal_velocity(&x, 0.0))?;
    if !close(&v0, &(-&x), 1e-15) {
        return Err(format!("t = 0 velocity is not -x: {v0:?}"));
    }
    Ok("t = 1 and t = 0 limits exact".into())
}

fn check_oracle() -> Result<String, String> {
    let task = EditTask::paired_two_mode();
    let mut probes = Stream::new(17);
    let mut worst: f64 = 0.0;
    for p in 0..5 {
        let cond = Condition::ALL[p % 3];
        let t = 0.1 + 0.8 * probes.uniform();
        let gmm = task.mixture(cond);
        let x = gmm.sample(&mut probes).scale(1.0 - t).axpy(t, &probes.normal_latent(2));
        let exact = lib(gmm.marginal_velocity(&x, t))?;
        let mc = lib(mc_velocity_oracle(gmm, &x, t, 20_000, &mut probes.fork(p as u64)))?;
        for j in 0..2 {
            let z = (exact[j] - mc.mean[j]).abs() / mc.std_err[j].max(1e-12);
            worst = worst.max(z);
        }
    }
    if worst > 4.0 {
        return Err(format!("closed form and Monte Carlo differ by {worst:.2} standard errors"));
    }
    Ok(format!("max deviation {worst:.2} standard errors over 5 probes"))
}

fn check_cfg() -> Result<String, String> {
    let task = EditTask::paired_two_mode();
    let x = Latent::from([-1.0, 0.4]);
    for t in [0.2, 0.7] {
        for cond in [Condition::Source, Condition::Target] {
            let v_u = lib(task.union().marginal_velocity(&x, t))?;
            let v_c = lib(task.mixture(cond).marginal_velocity(&x, t))?;
            if lib(task.velocity(&x, t, cond, 0.0))? != v_u || lib(task.velocity(&x, t, cond, 1.0))? != v_c {
                return Err("guidance scales 0 and 1 do not reduce to the plain fields".into());
            }
            for s in [2.5, 7.5] {
                let v = lib(task.velocity(&x, t, cond, s))?;
                if !close(&v, &v_u.axpy(s, &(&v_c - &v_u)), 1e-12) {
                    return Err(format!("guided field not affine in the scale at s = {s}"));
                }
            }
        }
    }
    Ok("v_u + s (v_c - v_u), exact at s = 0 and 1".into())
}

fn check_anchor_identities() -> Result<String, String> {
    let mut rng = Stream::new(23);
    for case in 0..20 {
        let len = 1 + (rng.next_u64() % 32) as usize;
        let d = [1, 2, 8][case % 3];
        let scale = 0.1 + 5.0 * rng.uniform();
        let draw = |r: &mut Stream| (0..len).map(|_| r.normal_latent(d).scale(scale)).collect::<Vec<_>>();
        let series = lib(AnchorSeries::new(draw(&mut rng), draw(&mut rng)))?;
        let a = optimal_anchor(&series);
        let strong = lib(strong_objective(&series, &a))?;
        let reduced = reduced_objective(&series);
        if (strong - reduced).abs() > 1e-9 * reduced.abs().max(1e-300) {
            return Err(format!("case {case}: objective at A* {strong} != reduced form {reduced}"));
        }
        if alignment_loss(&series) > reduced * (1.0 + 1e-12) {
            return Err(format!("case {case}: alignment loss exceeds the reduced objective"));
        }
        let nudged = a.axpy(1e-3, &rng.normal_latent(d));
        if lib(strong_objective(&series, &nudged))? < strong {
            return Err(format!("case {case}: A* is not a minimizer"));
        }
    }
    Ok("20 random series: objective at A* matches its reduced form".into())
}

fn check_gradient_expansion() -> Result<String, String> {
    let task = EditTask::paired_two_mode();
    let mut checked = 0;
    for run in 0..4u64 {
        let cfg = EditConfig {
            seed: run,
            n_avg: 1 + run as usize % 2,
            ..EditConfig::default()
        };
        let x_src = task.source().sample(&mut Stream::new(1000 + run));
        let result = lib(anchorflow_sample(&task, &cfg, &x_src, run))?;
        for step in &result.trajectory {
            let t = step.t;
            for rep in &step.reps {
                let expansion = (&(&step.x_fe - &x_src) + &(&rep.v_tar - &rep.v_src).scale(1.0 - t)).scale(2.0 - t);
                if !close(&rep.direction, &expansion, 1e-12) {
                    return Err(format!(
                        "run {run}, step {}: applied gradient {:?} != (2-t)[(X^FE - X^src_0) + (1-t) dv] {:?}",
                        step.index, rep.direction, expansion
                    ));
                }
                checked += 1;
            }
        }
    }
    Ok(format!("{checked} logged gradients match the expansion"))
}

fn check_identity_edit() -> Result<String, String> {
    let task = lib(EditTask::identical(EditTask::paired_two_mode().source().clone()))?;
    let mut rng = Stream::new(31);
    for i in 0..10u64 {
        let x = task.source().sample(&mut rng);
        for method in [Method::FlowEdit, Method::AnchorFlow] {
            for n_avg in [1, 4] {
                let cfg = EditConfig {
                    method,
                    n_avg,
                    seed: i,
                    ..EditConfig::default()
                };
                let out = lib(edit(&task, &cfg, &x, i))?;
                if out.edited.max_abs_diff(&x) > 1e-12 {
                    return Err(format!("{} with n_avg = {n_avg} moved the source", method.name()));
                }
            }
        }
    }
    Ok("flowedit and anchorflow return the source unchanged".into())
}

fn check_noise() -> Result<String, String> {
    let a = derive_noise(7, 3, 41, 0, 4);
    if a != derive_noise(7, 3, 41, 0, 4) {
        return Err("repeated noise derivation differs".into());
    }
    for other in [derive_noise(7, 4, 41, 0, 4), derive_noise(7, 3, 40, 0, 4), derive_noise(7, 3, 41, 1, 4)] {
        if other == a {
            return Err("distinct noise keys collide".into());
        }
    }
    let task = EditTask::paired_two_mode();
    let x = Latent::from([-3.2, 0.9]);
    for n_avg in [1, 4] {
        let cfg = EditConfig {
            n_avg,
            ..EditConfig::default()
        };
        let first = lib(edit(&task, &cfg, &x, 5))?;
        let second = lib(edit(&task, &cfg, &x, 5))?;
        if first != second {
            return Err(format!("anchorflow with n_avg = {n_avg} is not reproducible"));
        }
        for step in &first.trajectory {
            let noise = &step.reps[0].x_src_t;
            let expected = derive_noise(cfg.seed, 5, step.index as u64, 0, 2);
            let rebuilt = x.scale(1.0 - step.t).axpy(step.t, &expected);
            if !close(noise, &rebuilt, 1e-12) {
                return Err(format!("step {} did not use its keyed noise", step.index));
            }
        }
    }
    Ok("keyed noise reproducible and independent of n_avg".into())
}

fn check_grad() -> Result<String, String> {
    let task = EditTask::paired_two_mode();
    let batch = sample_batch(&task, 32, &mut Stream::new(41));
    let mut worst: f64 = 0.0;
    for seed in [1, 2] {
        let field = MlpField::init(2, &[64, 64], seed);
        let r = lib(numeric_grad_check(&field, &batch, 1e-5, 50, &mut Stream::new(seed)))?;
        worst = worst.max(r.max_rel_error);
    }
    if worst >= 1e-4 {
        return Err(format!("backprop and finite differences differ by {worst:.2e}"));
    }
    Ok(format!("max relative error {worst:.2e}"))
}

fn check_checkpoint() -> Result<String, String> {
    let field = MlpField::init(2, &[64, 64], 3);
    let mut buf = Vec::new();
    lib(field.write_checkpoint(&mut buf))?;
    let back = lib(MlpField::read_checkpoint(&buf[..]))?;
    if back != field {
        return Err("checkpoint did not round-trip".into());
    }
    Ok(format!("{} bytes round-trip", buf.len()))
}

fn check_threads() -> Result<String, String> {
    let spec = BenchSpec {
        samples: 12,
        grid: vec![GridPoint { n_max: 35, s_tar: 5.0 }, GridPoint { n_max: 41, s_tar: 7.5 }],
        n_avg: vec![1, 2],
        verify: false,
        ..BenchSpec::default()
    };
    let run = |threads| -> Result<String, String> {
        let rows = lib(with_threads(Some(threads), || run_cells(&spec, &spec.task)).and_then(|r| r))?;
        Ok(results_csv(&rows, 2))
    };
    let one = run(1)?;
    for threads in [2, 3] {
        if run(threads)? != one {
            return Err(format!("results differ between 1 and {threads} threads"));
        }
    }
    Ok(format!("{} result bytes identical across 1, 2, 3 threads", one.len()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pristine_suite_passes() {
        let report = run_verify();
        assert!(report.passed(), "{}", report.to_text());
        assert_eq!(report.exit_code(), 0);
        assert!(report.to_text().ends_with("result: pass (11 checks)\n"));
    }
}
