//! Per-iteration solver records and their CSV serialization.

use std::io::Write;
use std::time::Instant;

use crate::error::Result;
use crate::linalg::Vector;

pub const CSV_HEADER: &str = "iter,objective,grad_norm,seconds";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRecord {
    pub iter: usize,
    pub objective: f64,
    /// Gradient norm for smooth solvers, a fixed-point residual otherwise.
    pub grad_norm: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceStatus {
    Converged,
    MaxIterations,
    TimeLimit,
    LineSearchFailed,
    Diverged,
    /// Run ended early on a degenerate iterate (e.g. exact interpolation).
    Degenerate,
    /// Objective stopped changing beyond rounding for many iterations.
    Stalled,
}

#[derive(Debug, Clone)]
pub struct SolverTrace {
    pub solver: String,
    pub records: Vec<TraceRecord>,
    pub status: TraceStatus,
    /// Final outer variable (`v`, or `(v, w)` stacked).
    pub v: Option<Vector>,
    /// Final primal iterate.
    pub x: Option<Vector>,
    pub notes: Vec<String>,
}

impl SolverTrace {
    pub fn new(solver: impl Into<String>) -> Self {
        Self {
            solver: solver.into(),
            records: Vec::new(),
            status: TraceStatus::MaxIterations,
            v: None,
            x: None,
            notes: Vec::new(),
        }
    }

    pub fn push(&mut self, iter: usize, objective: f64, grad_norm: f64, clock: &Instant) {
        self.records.push(TraceRecord {
            iter,
            objective,
            grad_norm,
            seconds: clock.elapsed().as_secs_f64(),
        });
    }

    pub fn final_objective(&self) -> Option<f64> {
        self.records.last().map(|r| r.objective)
    }

    pub fn best_objective(&self) -> Option<f64> {
        self.records
            .iter()
            .map(|r| r.objective)
            .filter(|v| v.is_finite())
            .reduce(f64::min)
    }

    pub fn objectives(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.objective).collect()
    }

    pub fn is_nonincreasing(&self, slack: f64) -> bool {
        self.records
            .windows(2)
            .all(|w| w[1].objective <= w[0].objective + slack * (1.0 + w[0].objective.abs()))
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{CSV_HEADER}")?;
        for r in &self.records {
            writeln!(
                out,
                "{},{:.17e},{:.17e},{:.9}",
                r.iter, r.objective, r.grad_norm, r.seconds
            )?;
        }
        Ok(())
    }
}
