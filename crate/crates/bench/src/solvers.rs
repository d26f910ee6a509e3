//! Problem construction from a [`ProblemSpec`] and solver dispatch.

use overparam::baselines::{run_admm, run_ista, run_primal_dual, Acceleration, AdmmConfig, IstaConfig, PrimalDualConfig};
use overparam::hadamard_flow::{lipschitz_bounds, run_gd, FlowState, GradientBound, HadamardProblem, StepRule};
use overparam::linops::block_extract;
use overparam::mirror::{run_bpgd, BpgdConfig, Entropy, MirrorScaling};
use overparam::model::{Loss, RegressionProblem};
use overparam::problems::{gen_fourier_instance, gen_gaussian_instance, lambda_max, FourierSpec, GaussianSpec, LambdaFlavor};
use overparam::trace::TraceStatus;
use overparam::varpro::{minimize, OuterAlgorithm, OuterConfig, VarProProblem};
use overparam::{Error, Grad2DSpec, GroupMode, GroupStructure, LinearOperator, SolverTrace, Vector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::config::{Budget, EntropyKind, Family, HadamardStep, LambdaSpec, LossKind, ProblemSpec, SolverKind, SolverSpec};

/// A regression problem plus what some solvers need beyond it.
#[derive(Debug, Clone)]
pub struct Workload {
    pub problem: RegressionProblem,
    /// Original overlapping groups; `problem` then holds the lifted form.
    pub overlap: Option<GroupStructure>,
}

/// Piecewise-constant image with one random level per channel in each
/// quadrant, channel-major.
pub fn blocky_image(height: usize, width: usize, channels: usize, seed: u64) -> Vector {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let levels: Vec<f64> = (0..4 * channels).map(|_| rng.random()).collect();
    Vector::from_fn(height * width * channels, |k, _| {
        let (c, p) = (k / (height * width), k % (height * width));
        let q = 2 * usize::from(p / width >= height / 2) + usize::from(p % width >= width / 2);
        levels[4 * c + q]
    })
}

pub fn build_workload(spec: &ProblemSpec) -> overparam::Result<Workload> {
    match &spec.family {
        &Family::Gaussian { m, n, s, tasks, overlap, noise, loss } => {
            let mut g = GaussianSpec::new(m, n, s);
            g.tasks = tasks;
            g.overlap = overlap;
            g.noise_std = noise;
            g.seed = spec.seed;
            let inst = gen_gaussian_instance(&g)?;
            let flavor = match (loss, inst.groups.is_trivial()) {
                (LossKind::Robust, _) => LambdaFlavor::SqrtLasso,
                (_, true) => LambdaFlavor::Lasso,
                (_, false) => LambdaFlavor::GroupLasso,
            };
            let lambda = match spec.lambda {
                LambdaSpec::Absolute(l) => l,
                LambdaSpec::Fraction(f) => f * lambda_max(&inst.a, &inst.y, &inst.groups, flavor)?,
            };
            let loss = match loss {
                LossKind::Quadratic => Loss::Quadratic { lambda, y: inst.y.clone() },
                LossKind::Robust => Loss::sqrt_lasso(lambda, inst.y.clone()),
            };
            if inst.groups.mode() == GroupMode::Overlapping {
                let l = block_extract(&inst.groups, n)?;
                let problem = RegressionProblem::new(inst.a, l, inst.groups.stacked_blocks(), loss)?;
                return Ok(Workload {
                    problem,
                    overlap: Some(inst.groups),
                });
            }
            let l = LinearOperator::identity(inst.a.cols());
            Ok(Workload {
                problem: RegressionProblem::new(inst.a, l, inst.groups, loss)?,
                overlap: None,
            })
        }
        &Family::Fourier { dim, cutoff, grid, spikes } => {
            let frac = match spec.lambda {
                LambdaSpec::Fraction(f) => f,
                LambdaSpec::Absolute(_) => 1.0,
            };
            let mut inst = gen_fourier_instance(&FourierSpec {
                dim,
                cutoff,
                grid,
                spikes,
                lambda_frac: frac,
                seed: spec.seed,
            })?;
            if let LambdaSpec::Absolute(l) = spec.lambda {
                inst.lambda = Some(l);
            }
            Ok(Workload {
                problem: inst.regression()?,
                overlap: None,
            })
        }
        &Family::Tv { height, width, channels, noise, loss } => {
            let LambdaSpec::Absolute(lambda) = spec.lambda else {
                return Err(Error::InvalidArgument("the tv family takes an absolute λ".into()));
            };
            let clean = blocky_image(height, width, channels, spec.seed);
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed.wrapping_add(1));
            let hw = height * width;
            let (y, loss) = match loss {
                LossKind::Quadratic => {
                    let y = clean.map(|v| v + noise * rng.sample::<f64, _>(StandardNormal));
                    (y.clone(), Loss::Quadratic { lambda, y })
                }
                LossKind::Robust => {
                    let mut y = clean;
                    for p in 0..hw {
                        if rng.random::<f64>() < noise {
                            let v = if rng.random::<bool>() { 1.0 } else { 0.0 };
                            for c in 0..channels {
                                y[c * hw + p] = v;
                            }
                        }
                    }
                    let groups = GroupStructure::rows_across(hw, channels);
                    (y.clone(), Loss::Robust { lambda, y, groups })
                }
            };
            debug_assert_eq!(y.len(), hw * channels);
            let problem = RegressionProblem::new(
                LinearOperator::identity(hw * channels),
                LinearOperator::grad2d(Grad2DSpec::new(height, width, channels)),
                GroupStructure::gradient_pixels(height, width, channels),
                loss,
            )?;
            Ok(Workload { problem, overlap: None })
        }
    }
}

fn quadratic_parts(p: &RegressionProblem) -> overparam::Result<(f64, &Vector)> {
    match &p.loss {
        Loss::Quadratic { lambda, y } => Ok((*lambda, y)),
        _ => Err(Error::InvalidArgument("this solver needs the quadratic loss".into())),
    }
}

fn synthesis_groups(p: &RegressionProblem) -> overparam::Result<&GroupStructure> {
    if !p.l.is_identity() {
        return Err(Error::InvalidArgument("this solver needs L = Id".into()));
    }
    Ok(&p.reg_groups)
}

/// Runs one solver; the trace's `x` holds the final primal iterate.
pub fn run_solver(w: &Workload, solver: &SolverSpec, budget: &Budget) -> overparam::Result<SolverTrace> {
    let p = &w.problem;
    let iters = budget.max_iter;
    let mut trace = match &solver.kind {
        &SolverKind::VarPro { bb, memory, grad_tol } => {
            let vp = match &w.overlap {
                Some(groups) => {
                    let (lambda, y) = quadratic_parts(p)?;
                    VarProProblem::overlapping(p.a.clone(), groups.clone(), lambda, y.clone())?
                }
                None => VarProProblem::new(p.clone()),
            };
            let cfg = OuterConfig {
                algorithm: if bb { OuterAlgorithm::GradientDescentBb } else { OuterAlgorithm::Lbfgs },
                memory,
                grad_tol,
                max_iter: iters,
                time_limit: budget.time_limit,
                ..OuterConfig::default()
            };
            let run = minimize(&vp, &cfg)?;
            let mut t = run.trace;
            t.x = Some(vp.recover(&run.z)?);
            t
        }
        SolverKind::Ista { accel, step, tol } => {
            let accel = match accel.as_str() {
                "fista" => Acceleration::Fista,
                "bb" => Acceleration::BarzilaiBorwein,
                _ => Acceleration::None,
            };
            run_ista(
                p,
                &IstaConfig {
                    accel,
                    step: *step,
                    max_iter: iters,
                    tol: *tol,
                    x0: None,
                },
            )?
        }
        &SolverKind::Admm { tau, tol } => {
            let run = run_admm(p, &AdmmConfig { tau, max_iter: iters, tol })?;
            let mut t = run.trace;
            t.x = Some(run.x);
            t
        }
        &SolverKind::PrimalDual { sigma, tau, theta, tol } => run_primal_dual(
            p,
            &PrimalDualConfig {
                sigma,
                tau,
                theta,
                max_iter: iters,
                tol,
                ..PrimalDualConfig::default()
            },
        )?,
        &SolverKind::Hadamard { step, init_low, init_high } => {
            let (lambda, y) = quadratic_parts(p)?;
            let groups = synthesis_groups(p)?;
            let hp = HadamardProblem::new(p.a.clone(), groups.clone(), y.clone(), lambda)?;
            let s0 = FlowState::uniform(groups, init_low, init_high, 0);
            let m_f = lipschitz_bounds(&hp, &s0, GradientBound::Certified)?.m_f;
            let rule = match step {
                HadamardStep::Auto => StepRule::Fixed(1.0 / m_f),
                HadamardStep::Fixed(t) => StepRule::Fixed(t),
                HadamardStep::BarzilaiBorwein(t) => StepRule::BarzilaiBorwein {
                    tau0: t.unwrap_or(1.0 / m_f),
                },
            };
            let run = run_gd(&hp, s0, rule, iters)?;
            let mut t = run.trace;
            t.x = Some(run.state.x(groups));
            t
        }
        &SolverKind::Bpgd { entropy, step, literal } => {
            let e = match entropy {
                EntropyKind::Quadratic(s) => Entropy::quadratic(s)?,
                EntropyKind::Hyperbolic(c) => Entropy::hyperbolic(c)?,
            };
            let mut cfg = BpgdConfig::new(e);
            cfg.step = step;
            cfg.max_iter = iters;
            cfg.scaling = if literal { MirrorScaling::Literal } else { MirrorScaling::Consistent };
            let run = run_bpgd(p, &cfg)?;
            let mut t = run.trace;
            t.x = Some(run.x);
            t
        }
    };
    trace.solver = solver.label.clone();
    if let Some(limit) = budget.time_limit {
        let before = trace.records.len();
        trace.records.retain(|r| r.seconds <= limit || r.iter == 0);
        if trace.records.len() < before {
            trace.status = TraceStatus::TimeLimit;
        }
    }
    Ok(trace)
}

/// Errors, diverged runs and non-finite objectives count as failures.
pub fn is_failure(result: &overparam::Result<SolverTrace>) -> bool {
    match result {
        Err(_) => true,
        Ok(t) => {
            matches!(t.status, TraceStatus::Diverged) || !t.final_objective().is_some_and(f64::is_finite)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(family: Family, lambda: LambdaSpec) -> ProblemSpec {
        ProblemSpec { family, lambda, seed: 3 }
    }

    #[test]
    fn blocky_image_has_four_levels_per_channel() {
        let img = blocky_image(4, 6, 2, 1);
        let mut levels: Vec<f64> = img.iter().copied().collect();
        levels.sort_by(f64::total_cmp);
        levels.dedup();
        assert!(levels.len() <= 8);
        assert_eq!(img[0], img[1]);
        assert_ne!(img[0], img[5]);
    }

    #[test]
    fn lambda_fraction_scales_lambda_max() {
        let fam = Family::Gaussian {
            m: 10,
            n: 20,
            s: 2,
            tasks: 1,
            overlap: None,
            noise: 0.0,
            loss: LossKind::Quadratic,
        };
        let w1 = build_workload(&spec(fam.clone(), LambdaSpec::Fraction(1.0))).unwrap();
        let w2 = build_workload(&spec(fam, LambdaSpec::Fraction(0.5))).unwrap();
        let l = |w: &Workload| w.problem.loss.lambda().unwrap();
        assert!((l(&w1) - 2.0 * l(&w2)).abs() < 1e-12);
    }

    #[test]
    fn overlapping_groups_are_lifted() {
        let fam = Family::Gaussian {
            m: 10,
            n: 20,
            s: 3,
            tasks: 1,
            overlap: Some(2),
            noise: 0.0,
            loss: LossKind::Quadratic,
        };
        let w = build_workload(&spec(fam, LambdaSpec::Fraction(0.3))).unwrap();
        let g = w.overlap.as_ref().unwrap();
        assert_eq!(w.problem.l.rows(), g.groups().iter().map(Vec::len).sum::<usize>());
    }

    #[test]
    fn solvers_refuse_what_they_cannot_handle() {
        let fam = Family::Tv {
            height: 3,
            width: 3,
            channels: 1,
            noise: 0.1,
            loss: LossKind::Quadratic,
        };
        let w = build_workload(&spec(fam, LambdaSpec::Absolute(0.1))).unwrap();
        let had = SolverSpec {
            label: "h".into(),
            kind: SolverKind::Hadamard {
                step: HadamardStep::Auto,
                init_low: 0.5,
                init_high: 1.5,
            },
        };
        let budget = Budget {
            max_iter: 5,
            time_limit: None,
        };
        let r = run_solver(&w, &had, &budget);
        assert!(r.is_err() && is_failure(&r));
    }
}
