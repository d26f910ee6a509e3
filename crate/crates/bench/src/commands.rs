//! The `run`, `phase` and `reconstruct` subcommands.

use std::fs::{self, File};
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use overparam::linops::LinearOperator;
use overparam::model::{Loss, RegressionProblem};
use overparam::phase::{monotonicity_violations, run_phase_sweep, PhaseRow};
use overparam::problems::{add_salt_pepper, make_inpainting_mask, ImageTensor};
use overparam::{Grad2DSpec, GroupStructure, SolverTrace, Vector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::config::{Budget, ExperimentConfig, ImageTask, PhaseConfig, ReconstructConfig, SolverSpec};
use crate::solvers::{build_workload, is_failure, run_solver, Workload};
use crate::svg::{render, Panel, Scale, Series};
use crate::BenchError;

/// What a command did; `failures` drives the exit code.
#[derive(Debug, Clone, Default)]
pub struct Report {
    pub files: Vec<PathBuf>,
    pub failures: Vec<String>,
    pub warnings: Vec<String>,
}

fn write_trace(path: &Path, t: &SolverTrace) -> Result<(), BenchError> {
    let mut buf = Vec::new();
    t.write_csv(&mut buf).map_err(|e| BenchError::io(path, e))?;
    fs::write(path, buf).map_err(|e| BenchError::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<(), BenchError> {
    fs::write(path, text).map_err(|e| BenchError::io(path, e))
}

fn ensure_dir(dir: &Path) -> Result<(), BenchError> {
    fs::create_dir_all(dir).map_err(|e| BenchError::io(dir, e))
}

/// Objective error against `best`, on the positive part only.
fn error_series(t: &SolverTrace, best: f64, by_time: bool) -> Series {
    let points = t
        .records
        .iter()
        .map(|r| {
            let x = if by_time { r.seconds } else { r.iter as f64 };
            (x, r.objective - best)
        })
        .collect();
    Series {
        label: t.solver.clone(),
        points,
    }
}

fn convergence_svg(traces: &[&SolverTrace], best: f64) -> String {
    let panel = |by_time: bool| Panel {
        title: if by_time { "error vs time" } else { "error vs iteration" }.into(),
        x_label: if by_time { "seconds" } else { "iteration" }.into(),
        y_label: "objective - best".into(),
        x_scale: Scale::Log,
        y_scale: Scale::Log,
        series: traces.iter().map(|t| error_series(t, best, by_time)).collect(),
    };
    render(&[panel(false), panel(true)])
}

pub fn cmd_run(cfg: &ExperimentConfig, out: &Path) -> Result<Report, BenchError> {
    let w = build_workload(&cfg.problem).map_err(BenchError::Problem)?;
    ensure_dir(out)?;
    let mut report = Report::default();
    let results: Vec<(&SolverSpec, overparam::Result<SolverTrace>)> = cfg
        .solvers
        .iter()
        .map(|s| (s, run_solver(&w, s, &cfg.budget)))
        .collect();
    let ok: Vec<&SolverTrace> = results
        .iter()
        .filter(|(_, r)| !is_failure(r))
        .filter_map(|(_, r)| r.as_ref().ok())
        .collect();
    let best = ok
        .iter()
        .filter_map(|t| t.best_objective())
        .fold(f64::INFINITY, f64::min);
    let mut summary = String::from("solver,status,iterations,seconds,final_objective,error\n");
    for (spec, r) in &results {
        match r {
            Ok(t) => {
                let path = out.join(format!("{}.csv", spec.label));
                write_trace(&path, t)?;
                report.files.push(path);
                let last = t.records.last();
                let f = t.final_objective().unwrap_or(f64::NAN);
                summary.push_str(&format!(
                    "{},{:?},{},{:.6},{:.17e},{:.6e}\n",
                    spec.label,
                    t.status,
                    last.map_or(0, |r| r.iter),
                    last.map_or(0.0, |r| r.seconds),
                    f,
                    f - best
                ));
                if is_failure(r) {
                    report.failures.push(format!("{}: status {:?}, final objective {f}", spec.label, t.status));
                }
            }
            Err(e) => {
                summary.push_str(&format!("{},error,0,0,NaN,NaN\n", spec.label));
                report.failures.push(format!("{}: {e}", spec.label));
            }
        }
    }
    let path = out.join("summary.csv");
    write_text(&path, &summary)?;
    report.files.push(path);
    let path = out.join("convergence.svg");
    write_text(&path, &convergence_svg(&ok, best))?;
    report.files.push(path);
    Ok(report)
}

pub fn phase_csv(rows: &[PhaseRow]) -> String {
    let mut s = String::from("m,method,successes,trials\n");
    for r in rows {
        s.push_str(&format!("{},{},{},{}\n", r.m, r.method.name(), r.successes, r.trials));
    }
    s
}

pub fn cmd_phase(cfg: &PhaseConfig, out: &Path) -> Result<Report, BenchError> {
    ensure_dir(out)?;
    let rows = run_phase_sweep(&cfg.sweep).map_err(BenchError::Problem)?;
    let mut report = Report::default();
    let path = out.join("phase.csv");
    write_text(&path, &phase_csv(&rows))?;
    report.files.push(path);
    let series = cfg
        .sweep
        .methods
        .iter()
        .map(|&m| Series {
            label: m.name().into(),
            points: rows
                .iter()
                .filter(|r| r.method == m)
                .map(|r| (r.m as f64, r.successes as f64 / r.trials as f64))
                .collect(),
        })
        .collect();
    let svg = render(&[Panel {
        title: format!("recovery, n = {}, s = {}, T = {}", cfg.sweep.n, cfg.sweep.s, cfg.sweep.tasks),
        x_label: "m".into(),
        y_label: "success rate".into(),
        x_scale: Scale::Linear,
        y_scale: Scale::Linear,
        series,
    }]);
    let path = out.join("phase.svg");
    write_text(&path, &svg)?;
    report.files.push(path);
    for &m in &cfg.sweep.methods {
        for (at, drop) in monotonicity_violations(&rows, m) {
            report
                .warnings
                .push(format!("{}: successes drop by {drop} at m = {at}", m.name()));
        }
    }
    Ok(report)
}

pub fn load_image(path: &Path) -> Result<ImageTensor, BenchError> {
    let f = File::open(path).map_err(|e| BenchError::io(path, e))?;
    let r = BufReader::new(f);
    let img = match path.extension().and_then(|e| e.to_str()) {
        Some("sopt") => ImageTensor::read_sopt(r),
        _ => ImageTensor::read_pnm(r),
    };
    img.map_err(|e| BenchError::io(path, e))
}

fn save_image(img: &ImageTensor, dir: &Path, stem: &str) -> Result<PathBuf, BenchError> {
    let ext = match img.channels() {
        1 => "pgm",
        3 => "ppm",
        _ => "sopt",
    };
    let path = dir.join(format!("{stem}.{ext}"));
    let mut buf = Vec::new();
    match ext {
        "sopt" => img.write_sopt(&mut buf),
        _ => img.write_pnm(&mut buf),
    }
    .map_err(|e| BenchError::io(&path, e))?;
    fs::write(&path, buf).map_err(|e| BenchError::io(&path, e))?;
    Ok(path)
}

/// Corrupted observations and the regularized problem for one image task.
pub fn image_problem(cfg: &ReconstructConfig, img: &ImageTensor) -> overparam::Result<(RegressionProblem, Vector)> {
    let (h, w, c) = (img.height(), img.width(), img.channels());
    let n = h * w * c;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let noisy = img.to_vector().map(|v| v + cfg.noise * rng.sample::<f64, _>(StandardNormal));
    let l = LinearOperator::grad2d(Grad2DSpec::new(h, w, c));
    let groups = GroupStructure::gradient_pixels(h, w, c);
    let lambda = cfg.lambda;
    let (a, loss, shown) = match cfg.task {
        ImageTask::Denoise => (
            LinearOperator::identity(n),
            Loss::Quadratic { lambda, y: noisy.clone() },
            noisy,
        ),
        ImageTask::Inpaint => {
            let a = make_inpainting_mask(h, w, c, cfg.keep, cfg.seed)?;
            let y = a.apply(&noisy)?;
            let shown = a.adjoint(&y)?;
            (a, Loss::Quadratic { lambda, y }, shown)
        }
        ImageTask::TvL1 => {
            let y = add_salt_pepper(img, cfg.salt_pepper, cfg.seed)?.to_vector();
            let loss = Loss::Robust {
                lambda,
                y: y.clone(),
                groups: GroupStructure::rows_across(h * w, c),
            };
            (LinearOperator::identity(n), loss, y)
        }
    };
    Ok((RegressionProblem::new(a, l, groups, loss)?, shown))
}

/// Reconstruction of `img` under `cfg`'s task with one solver.
pub fn reconstruct(
    cfg: &ReconstructConfig,
    img: &ImageTensor,
    solver: &SolverSpec,
    budget: &Budget,
) -> overparam::Result<(Vector, SolverTrace)> {
    let (problem, _) = image_problem(cfg, img)?;
    let w = Workload { problem, overlap: None };
    let t = run_solver(&w, solver, budget)?;
    let x = t.x.clone().ok_or_else(|| overparam::Error::InvalidArgument("solver kept no iterate".into()))?;
    Ok((x, t))
}

/// Per-pixel Euclidean norm over channels of `x − reference`, clamped to `[0, 1]`.
pub fn residual_image(x: &Vector, reference: &ImageTensor) -> overparam::Result<ImageTensor> {
    let (h, w, c) = (reference.height(), reference.width(), reference.channels());
    let hw = h * w;
    let r = reference.data();
    let v = Vector::from_fn(hw, |p, _| {
        (0..c).map(|ch| (x[ch * hw + p] - r[ch * hw + p]).powi(2)).sum::<f64>().sqrt()
    });
    ImageTensor::from_vector_clamped(h, w, 1, &v)
}

pub fn cmd_reconstruct(cfg: &ReconstructConfig, out: &Path) -> Result<Report, BenchError> {
    let img = load_image(&cfg.input)?;
    let (_, shown) = image_problem(cfg, &img).map_err(BenchError::Problem)?;
    ensure_dir(out)?;
    let mut report = Report::default();
    let (h, w, c) = (img.height(), img.width(), img.channels());
    let observed = ImageTensor::from_vector_clamped(h, w, c, &shown).map_err(BenchError::Problem)?;
    report.files.push(save_image(&observed, out, "observed")?);
    for s in &cfg.solvers {
        match reconstruct(cfg, &img, s, &cfg.budget) {
            Ok((x, t)) => {
                let rec = ImageTensor::from_vector_clamped(h, w, c, &x).map_err(BenchError::Problem)?;
                report.files.push(save_image(&rec, out, &format!("{}_reconstruction", s.label))?);
                let res = residual_image(&x, &img).map_err(BenchError::Problem)?;
                report.files.push(save_image(&res, out, &format!("{}_residual", s.label))?);
                let path = out.join(format!("{}.csv", s.label));
                write_trace(&path, &t)?;
                report.files.push(path);
            }
            Err(e) => report.failures.push(format!("{}: {e}", s.label)),
        }
    }
    Ok(report)
}

/// Writes a report's messages to stderr.
pub fn print_report(report: &Report, mut err: impl Write) {
    for f in &report.files {
        let _ = writeln!(err, "wrote {}", f.display());
    }
    for w in &report.warnings {
        let _ = writeln!(err, "warning: {w}");
    }
    for f in &report.failures {
        let _ = writeln!(err, "solver failure: {f}");
    }
}
