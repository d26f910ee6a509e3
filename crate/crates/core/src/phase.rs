//! Phase-transition sweeps: exact-recovery counts of row-sparse signals
//! from Gaussian measurements as the number of measurements grows.

use rayon::prelude::*;

use crate::baselines::{run_irls, IrlsConfig, LqRegression};
use crate::error::{Error, Result};
use crate::lq_forms::{solve_lq_option2, LqSolveConfig};
use crate::problems::{gen_gaussian_instance, GaussianSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PhaseMethod {
    /// IRLS on the equality-constrained problem.
    Irls,
    /// Option-2 VarPro with a small `λ` and random restarts.
    VarPro,
}

impl PhaseMethod {
    pub fn name(&self) -> &'static str {
        match self {
            PhaseMethod::Irls => "irls",
            PhaseMethod::VarPro => "varpro",
        }
    }
}

#[derive(Debug, Clone)]
pub struct PhaseSweepConfig {
    pub n: usize,
    pub s: usize,
    pub tasks: usize,
    pub m_grid: Vec<usize>,
    pub trials: usize,
    pub q: f64,
    /// Success when `‖x − x*‖/‖x*‖ < threshold`.
    pub threshold: f64,
    pub methods: Vec<PhaseMethod>,
    /// Stand-in for the equality constraint in the VarPro runs.
    pub varpro_lambda: f64,
    pub restarts: usize,
    pub seed: u64,
}

impl PhaseSweepConfig {
    pub fn new(n: usize, s: usize, tasks: usize, m_grid: Vec<usize>, trials: usize) -> Self {
        Self {
            n,
            s,
            tasks,
            m_grid,
            trials,
            q: 2.0 / 3.0,
            threshold: 0.01,
            methods: vec![PhaseMethod::Irls, PhaseMethod::VarPro],
            varpro_lambda: 1e-5,
            restarts: 3,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 || self.m_grid.is_empty() || self.methods.is_empty() {
            return Err(Error::InvalidArgument("empty phase sweep".into()));
        }
        if self.s > self.n || self.tasks == 0 {
            return Err(Error::InvalidArgument("invalid sparsity or task count".into()));
        }
        if !(self.threshold > 0.0 && self.varpro_lambda > 0.0) {
            return Err(Error::InvalidArgument("threshold and λ must be positive".into()));
        }
        Ok(())
    }

    /// Seed of trial `t` at `m`; shared by all methods.
    pub fn instance_seed(&self, m: usize, trial: usize) -> u64 {
        self.seed
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add((m as u64) << 32)
            .wrapping_add(trial as u64)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PhaseRow {
    pub m: usize,
    pub method: PhaseMethod,
    pub successes: usize,
    pub trials: usize,
}

/// Relative error of one method on one instance; errors count as failures.
pub fn recovery_error(cfg: &PhaseSweepConfig, m: usize, trial: usize, method: PhaseMethod) -> Result<f64> {
    if m == 0 {
        return Ok(f64::INFINITY);
    }
    let mut spec = GaussianSpec::new(m, cfg.n, cfg.s);
    spec.tasks = cfg.tasks;
    spec.seed = cfg.instance_seed(m, trial);
    let inst = gen_gaussian_instance(&spec)?;
    let x = match method {
        PhaseMethod::Irls => {
            let p = LqRegression::new(inst.a.clone(), inst.groups.clone(), inst.y.clone(), 0.0, cfg.q)?;
            run_irls(&p, &IrlsConfig::default())?
                .x
                .expect("IRLS records its iterate")
        }
        PhaseMethod::VarPro => {
            let lq = LqSolveConfig {
                restarts: cfg.restarts,
                seed: spec.seed,
                ..LqSolveConfig::default()
            };
            solve_lq_option2(&inst.a, &inst.groups, cfg.varpro_lambda, &inst.y, cfg.q, &lq)?.x
        }
    };
    Ok(inst.relative_error(&x).unwrap_or(f64::INFINITY))
}

/// Runs every `(m, trial, method)` in parallel; rows are sorted by
/// `(m, method)`.
pub fn run_phase_sweep(cfg: &PhaseSweepConfig) -> Result<Vec<PhaseRow>> {
    cfg.validate()?;
    let jobs: Vec<(usize, usize, PhaseMethod)> = cfg
        .m_grid
        .iter()
        .flat_map(|&m| {
            (0..cfg.trials).flat_map(move |t| cfg.methods.iter().map(move |&meth| (m, t, meth)))
        })
        .collect();
    let outcomes: Vec<(usize, PhaseMethod, bool)> = jobs
        .par_iter()
        .map(|&(m, t, meth)| {
            let ok = recovery_error(cfg, m, t, meth).is_ok_and(|e| e < cfg.threshold);
            (m, meth, ok)
        })
        .collect();
    let mut rows: Vec<PhaseRow> = Vec::new();
    for &m in &cfg.m_grid {
        for &meth in &cfg.methods {
            let successes = outcomes
                .iter()
                .filter(|(mm, me, ok)| *mm == m && *me == meth && *ok)
                .count();
            rows.push(PhaseRow {
                m,
                method: meth,
                successes,
                trials: cfg.trials,
            });
        }
    }
    rows.sort_by_key(|r| (r.m, r.method));
    rows.dedup();
    Ok(rows)
}

/// Decreases of the success count between consecutive `m` for one method,
/// as `(m, drop)`.
pub fn monotonicity_violations(rows: &[PhaseRow], method: PhaseMethod) -> Vec<(usize, usize)> {
    let mut series: Vec<&PhaseRow> = rows.iter().filter(|r| r.method == method).collect();
    series.sort_by_key(|r| r.m);
    series
        .windows(2)
        .filter(|w| w[1].successes < w[0].successes)
        .map(|w| (w[1].m, w[0].successes - w[1].successes))
        .collect()
}
