//! Plain-text `key = value` configuration with `[section]` headers.
//!
//! ```text
//! [problem]
//! family = gaussian
//! m = 50
//! n = 200
//!
//! [solver:fista]
//! method = ista
//! accel = fista
//! ```

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("[{section}] is missing `{key}`")]
    Missing { section: String, key: String },
    #[error("[{section}] {key} = {value:?}: {reason}")]
    Invalid {
        section: String,
        key: String,
        value: String,
        reason: String,
    },
    #[error("[{section}] has unknown key(s): {keys}")]
    Unknown { section: String, keys: String },
    #[error("{0}")]
    Semantic(String),
}

type Result<T> = std::result::Result<T, ConfigError>;

#[derive(Debug, Clone)]
pub struct Section {
    pub name: String,
    entries: BTreeMap<String, String>,
}

impl Section {
    fn invalid(&self, key: &str, value: &str, reason: impl ToString) -> ConfigError {
        ConfigError::Invalid {
            section: self.name.clone(),
            key: key.into(),
            value: value.into(),
            reason: reason.to_string(),
        }
    }

    /// Removes and parses `key`; `None` when absent.
    pub fn take<T: FromStr>(&mut self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.entries.remove(key) {
            None => Ok(None),
            Some(v) => v.parse().map(Some).map_err(|e| self.invalid(key, &v, e)),
        }
    }

    pub fn take_or<T: FromStr>(&mut self, key: &str, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        Ok(self.take(key)?.unwrap_or(default))
    }

    pub fn require<T: FromStr>(&mut self, key: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        self.take(key)?.ok_or_else(|| ConfigError::Missing {
            section: self.name.clone(),
            key: key.into(),
        })
    }

    /// Comma-separated list.
    pub fn take_list<T: FromStr>(&mut self, key: &str) -> Result<Option<Vec<T>>>
    where
        T::Err: std::fmt::Display,
    {
        let Some(v) = self.entries.remove(key) else {
            return Ok(None);
        };
        v.split(',')
            .map(|s| s.trim().parse().map_err(|e| self.invalid(key, &v, e)))
            .collect::<Result<Vec<T>>>()
            .map(Some)
    }

    pub fn take_choice<'a>(&mut self, key: &str, choices: &[&'a str], default: &'a str) -> Result<&'a str> {
        match self.entries.remove(key) {
            None => Ok(default),
            Some(v) => choices
                .iter()
                .find(|c| **c == v)
                .copied()
                .ok_or_else(|| self.invalid(key, &v, format!("expected one of {}", choices.join(", ")))),
        }
    }

    /// Fails on keys nobody asked for, so typos do not pass silently.
    pub fn finish(self) -> Result<()> {
        if self.entries.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Unknown {
                section: self.name,
                keys: self.entries.into_keys().collect::<Vec<_>>().join(", "),
            })
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct ConfigFile {
    sections: Vec<Section>,
}

impl ConfigFile {
    /// `#` and `;` start comments; keys before the first header go to `[global]`.
    pub fn parse(text: &str) -> Result<Self> {
        let mut sections = vec![Section {
            name: "global".into(),
            entries: BTreeMap::new(),
        }];
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split(['#', ';']).next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let syntax = |msg: &str| ConfigError::Syntax {
                line: i + 1,
                msg: msg.into(),
            };
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| syntax("unterminated section header"))?
                    .trim();
                if name.is_empty() {
                    return Err(syntax("empty section name"));
                }
                if sections.iter().any(|s| s.name == name) {
                    return Err(syntax(&format!("duplicate section [{name}]")));
                }
                sections.push(Section {
                    name: name.into(),
                    entries: BTreeMap::new(),
                });
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| syntax("expected key = value"))?;
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() {
                return Err(syntax("empty key"));
            }
            let cur = sections.last_mut().expect("global section exists");
            if cur.entries.insert(k.into(), v.into()).is_some() {
                return Err(syntax(&format!("duplicate key `{k}`")));
            }
        }
        if sections[0].entries.is_empty() {
            sections.remove(0);
        }
        Ok(Self { sections })
    }

    pub fn take_section(&mut self, name: &str) -> Option<Section> {
        let i = self.sections.iter().position(|s| s.name == name)?;
        Some(self.sections.remove(i))
    }

    /// All `[prefix:LABEL]` sections in file order, as `(LABEL, section)`.
    pub fn take_prefixed(&mut self, prefix: &str) -> Vec<(String, Section)> {
        let mut out = Vec::new();
        let mut rest = Vec::new();
        for s in self.sections.drain(..) {
            match s.name.strip_prefix(prefix).and_then(|r| r.strip_prefix(':')) {
                Some(label) => out.push((label.trim().to_string(), s)),
                None => rest.push(s),
            }
        }
        self.sections = rest;
        out
    }

    pub fn finish(self) -> Result<()> {
        match self.sections.first() {
            None => Ok(()),
            Some(_) => Err(ConfigError::Semantic(format!(
                "unexpected section(s): {}",
                self.sections
                    .iter()
                    .map(|s| format!("[{}]", s.name))
                    .collect::<Vec<_>>()
                    .join(", ")
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    Quadratic,
    /// `‖Ax − y‖₂/λ'` (square-root lasso) for regression, per-pixel ℓ1 for images.
    Robust,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Family {
    Gaussian {
        m: usize,
        n: usize,
        s: usize,
        tasks: usize,
        overlap: Option<usize>,
        noise: f64,
        loss: LossKind,
    },
    Fourier {
        dim: usize,
        cutoff: usize,
        grid: usize,
        spikes: usize,
    },
    /// Piecewise-constant synthetic image; Gaussian noise for the quadratic
    /// loss, salt-and-pepper for the robust one.
    Tv {
        height: usize,
        width: usize,
        channels: usize,
        noise: f64,
        loss: LossKind,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LambdaSpec {
    Absolute(f64),
    /// Fraction of `λ_max` (defaults to 0.1). For overlapping groups this is
    /// the `λ_max` of the group norm over the groups taken one at a time.
    Fraction(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProblemSpec {
    pub family: Family,
    pub lambda: LambdaSpec,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Budget {
    pub max_iter: usize,
    /// Native for VarPro; other traces are cut at the cap.
    pub time_limit: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EntropyKind {
    Quadratic(f64),
    Hyperbolic(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum HadamardStep {
    /// `1/M_F`.
    Auto,
    Fixed(f64),
    BarzilaiBorwein(Option<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub enum SolverKind {
    VarPro { bb: bool, memory: usize, grad_tol: f64 },
    Ista { accel: String, step: Option<f64>, tol: f64 },
    Admm { tau: f64, tol: f64 },
    PrimalDual { sigma: Option<f64>, tau: Option<f64>, theta: f64, tol: f64 },
    Hadamard { step: HadamardStep, init_low: f64, init_high: f64 },
    Bpgd { entropy: EntropyKind, step: Option<f64>, literal: bool },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverSpec {
    pub label: String,
    pub kind: SolverKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub problem: ProblemSpec,
    pub solvers: Vec<SolverSpec>,
    pub budget: Budget,
    pub out: Option<PathBuf>,
}

fn parse_lambda(sec: &mut Section) -> Result<Option<LambdaSpec>> {
    let abs: Option<f64> = sec.take("lambda")?;
    let frac: Option<f64> = sec.take("lambda_frac")?;
    let spec = match (abs, frac) {
        (Some(_), Some(_)) => {
            return Err(ConfigError::Semantic(format!(
                "[{}] sets both lambda and lambda_frac",
                sec.name
            )))
        }
        (Some(l), None) => LambdaSpec::Absolute(l),
        (None, Some(f)) => LambdaSpec::Fraction(f),
        (None, None) => return Ok(None),
    };
    let v = match spec {
        LambdaSpec::Absolute(v) | LambdaSpec::Fraction(v) => v,
    };
    if !(v > 0.0 && v.is_finite()) {
        return Err(ConfigError::Semantic(format!("[{}] λ must be positive", sec.name)));
    }
    Ok(Some(spec))
}

fn parse_loss(sec: &mut Section) -> Result<LossKind> {
    Ok(match sec.take_choice("loss", &["quadratic", "robust"], "quadratic")? {
        "robust" => LossKind::Robust,
        _ => LossKind::Quadratic,
    })
}

fn parse_problem(mut sec: Section) -> Result<ProblemSpec> {
    let family = match sec.take_choice("family", &["gaussian", "fourier", "tv"], "gaussian")? {
        "gaussian" => Family::Gaussian {
            m: sec.require("m")?,
            n: sec.require("n")?,
            s: sec.require("s")?,
            tasks: sec.take_or("tasks", 1)?,
            overlap: sec.take("overlap")?,
            noise: sec.take_or("noise", 0.0)?,
            loss: parse_loss(&mut sec)?,
        },
        "fourier" => Family::Fourier {
            dim: sec.take_or("dim", 1)?,
            cutoff: sec.take_or("cutoff", 2)?,
            grid: sec.take_or("grid", 300)?,
            spikes: sec.take_or("spikes", 1)?,
        },
        _ => Family::Tv {
            height: sec.require("height")?,
            width: sec.require("width")?,
            channels: sec.take_or("channels", 1)?,
            noise: sec.take_or("noise", 0.1)?,
            loss: parse_loss(&mut sec)?,
        },
    };
    let lambda = match (parse_lambda(&mut sec)?, &family) {
        (Some(LambdaSpec::Fraction(_)), Family::Tv { .. }) => {
            return Err(ConfigError::Semantic("the tv family takes an absolute lambda".into()))
        }
        (None, Family::Tv { .. }) => return Err(ConfigError::Semantic("the tv family needs lambda".into())),
        (Some(l), _) => l,
        (None, _) => LambdaSpec::Fraction(0.1),
    };
    let seed = sec.take_or("seed", 0)?;
    sec.finish()?;
    Ok(ProblemSpec { family, lambda, seed })
}

fn parse_solver(label: String, mut sec: Section) -> Result<SolverSpec> {
    let methods = ["varpro", "ista", "fista", "admm", "pd", "hadamard", "bpgd"];
    let default = methods.iter().copied().find(|m| *m == label).unwrap_or("varpro");
    let method = sec.take_choice("method", &methods, default)?;
    let kind = match method {
        "varpro" => SolverKind::VarPro {
            bb: sec.take_choice("algorithm", &["lbfgs", "bb"], "lbfgs")? == "bb",
            memory: sec.take_or("memory", 10)?,
            grad_tol: sec.take_or("grad_tol", 1e-10)?,
        },
        "ista" | "fista" => {
            let accel = if method == "fista" { "fista" } else { "none" };
            SolverKind::Ista {
                accel: sec.take_choice("accel", &["none", "fista", "bb"], accel)?.into(),
                step: sec.take("step")?,
                tol: sec.take_or("tol", 1e-12)?,
            }
        }
        "admm" => SolverKind::Admm {
            tau: sec.take_or("tau", 1.0)?,
            tol: sec.take_or("tol", 1e-10)?,
        },
        "pd" => SolverKind::PrimalDual {
            sigma: sec.take("sigma")?,
            tau: sec.take("tau")?,
            theta: sec.take_or("theta", 1.0)?,
            tol: sec.take_or("tol", 1e-12)?,
        },
        "hadamard" => {
            let step = match sec.take_choice("step", &["auto", "fixed", "bb"], "auto")? {
                "fixed" => HadamardStep::Fixed(sec.require("tau")?),
                "bb" => HadamardStep::BarzilaiBorwein(sec.take("tau")?),
                _ => HadamardStep::Auto,
            };
            SolverKind::Hadamard {
                step,
                init_low: sec.take_or("init_low", 0.5)?,
                init_high: sec.take_or("init_high", 1.5)?,
            }
        }
        _ => {
            let entropy = match sec.take_choice("entropy", &["hyperbolic", "quadratic"], "hyperbolic")? {
                "quadratic" => EntropyKind::Quadratic(sec.take_or("scale", 1.0)?),
                _ => EntropyKind::Hyperbolic(sec.take_or("c", 1e-3)?),
            };
            SolverKind::Bpgd {
                entropy,
                step: sec.take("step")?,
                literal: sec.take_choice("scaling", &["consistent", "literal"], "consistent")? == "literal",
            }
        }
    };
    sec.finish()?;
    Ok(SolverSpec { label, kind })
}

fn parse_budget(sec: Option<Section>) -> Result<Budget> {
    let Some(mut sec) = sec else {
        return Ok(Budget {
            max_iter: 1000,
            time_limit: None,
        });
    };
    let b = Budget {
        max_iter: sec.take_or("max_iter", 1000)?,
        time_limit: sec.take("time_limit")?,
    };
    sec.finish()?;
    if b.max_iter == 0 || b.time_limit.is_some_and(|t| !(t > 0.0)) {
        return Err(ConfigError::Semantic("budget must be positive".into()));
    }
    Ok(b)
}

fn parse_out(sec: Option<Section>) -> Result<Option<PathBuf>> {
    let Some(mut sec) = sec else { return Ok(None) };
    let dir: Option<String> = sec.take("dir")?;
    sec.finish()?;
    Ok(dir.map(PathBuf::from))
}

fn parse_solvers(cfg: &mut ConfigFile) -> Result<Vec<SolverSpec>> {
    let mut solvers = Vec::new();
    for (label, sec) in cfg.take_prefixed("solver") {
        if label.is_empty() || label.contains(['/', '\\']) {
            return Err(ConfigError::Semantic(format!("bad solver label {label:?}")));
        }
        solvers.push(parse_solver(label, sec)?);
    }
    Ok(solvers)
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = ConfigFile::parse(text)?;
        let problem = parse_problem(
            cfg.take_section("problem")
                .ok_or_else(|| ConfigError::Semantic("missing [problem] section".into()))?,
        )?;
        let solvers = parse_solvers(&mut cfg)?;
        if solvers.is_empty() {
            return Err(ConfigError::Semantic("at least one [solver:NAME] section is needed".into()));
        }
        let budget = parse_budget(cfg.take_section("budget"))?;
        let out = parse_out(cfg.take_section("output"))?;
        cfg.finish()?;
        Ok(Self {
            problem,
            solvers,
            budget,
            out,
        })
    }
}

#[derive(Debug, Clone)]
pub struct PhaseConfig {
    pub sweep: overparam::phase::PhaseSweepConfig,
    pub out: Option<PathBuf>,
}

impl PhaseConfig {
    pub fn parse(text: &str) -> Result<Self> {
        use overparam::phase::{PhaseMethod, PhaseSweepConfig};
        let mut cfg = ConfigFile::parse(text)?;
        let mut sec = cfg
            .take_section("phase")
            .ok_or_else(|| ConfigError::Semantic("missing [phase] section".into()))?;
        let n: usize = sec.require("n")?;
        let m_grid = match sec.take_list::<usize>("m_grid")? {
            Some(g) => g,
            None => (1..=8).map(|i| i * n / 8).collect(),
        };
        let mut sweep = PhaseSweepConfig::new(n, sec.require("s")?, sec.take_or("tasks", 1)?, m_grid, sec.take_or("trials", 20)?);
        sweep.q = sec.take_or("q", sweep.q)?;
        sweep.threshold = sec.take_or("threshold", sweep.threshold)?;
        sweep.restarts = sec.take_or("restarts", sweep.restarts)?;
        sweep.varpro_lambda = sec.take_or("varpro_lambda", sweep.varpro_lambda)?;
        sweep.seed = sec.take_or("seed", sweep.seed)?;
        if let Some(names) = sec.take_list::<String>("methods")? {
            sweep.methods = names
                .iter()
                .map(|n| match n.as_str() {
                    "irls" => Ok(PhaseMethod::Irls),
                    "varpro" => Ok(PhaseMethod::VarPro),
                    other => Err(ConfigError::Semantic(format!("unknown phase method {other:?}"))),
                })
                .collect::<Result<_>>()?;
        }
        sec.finish()?;
        let out = parse_out(cfg.take_section("output"))?;
        cfg.finish()?;
        sweep
            .validate()
            .map_err(|e| ConfigError::Semantic(e.to_string()))?;
        if !(sweep.q > 0.5 && sweep.q < 1.0) {
            return Err(ConfigError::Semantic("phase sweeps need q in (1/2, 1)".into()));
        }
        Ok(Self { sweep, out })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImageTask {
    Denoise,
    Inpaint,
    TvL1,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReconstructConfig {
    pub input: PathBuf,
    pub task: ImageTask,
    pub lambda: f64,
    /// Kept pixel fraction for inpainting.
    pub keep: f64,
    /// Gaussian noise level added before denoising or inpainting.
    pub noise: f64,
    /// Salt-and-pepper fraction added before TV-L1.
    pub salt_pepper: f64,
    pub seed: u64,
    pub solvers: Vec<SolverSpec>,
    pub budget: Budget,
    pub out: Option<PathBuf>,
}

impl ReconstructConfig {
    /// Relative `input` paths resolve against `base`.
    pub fn parse(text: &str, base: Option<&std::path::Path>) -> Result<Self> {
        let mut cfg = ConfigFile::parse(text)?;
        let mut sec = cfg
            .take_section("reconstruct")
            .ok_or_else(|| ConfigError::Semantic("missing [reconstruct] section".into()))?;
        let mut input: PathBuf = sec.require::<String>("input")?.into();
        if input.is_relative() {
            if let Some(b) = base {
                input = b.join(input);
            }
        }
        let task = match sec.take_choice("task", &["denoise", "inpaint", "tv_l1"], "denoise")? {
            "inpaint" => ImageTask::Inpaint,
            "tv_l1" => ImageTask::TvL1,
            _ => ImageTask::Denoise,
        };
        let out = Self {
            input,
            task,
            lambda: sec.require("lambda")?,
            keep: sec.take_or("keep", 0.5)?,
            noise: sec.take_or("noise", 0.0)?,
            salt_pepper: sec.take_or("salt_pepper", 0.0)?,
            seed: sec.take_or("seed", 0)?,
            solvers: Vec::new(),
            budget: Budget {
                max_iter: 0,
                time_limit: None,
            },
            out: None,
        };
        sec.finish()?;
        if !(out.lambda > 0.0) || !(out.keep > 0.0 && out.keep <= 1.0) || out.noise < 0.0 {
            return Err(ConfigError::Semantic("λ, keep and noise out of range".into()));
        }
        let mut solvers = parse_solvers(&mut cfg)?;
        if solvers.is_empty() {
            solvers.push(parse_solver("varpro".into(), Section {
                name: "solver:varpro".into(),
                entries: BTreeMap::new(),
            })?);
        }
        let budget = parse_budget(cfg.take_section("budget"))?;
        let dir = parse_out(cfg.take_section("output"))?;
        cfg.finish()?;
        Ok(Self {
            solvers,
            budget,
            out: dir,
            ..out
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sections_and_comments() {
        let mut c = ConfigFile::parse("a = 1 # note\n[x]\nb=2\n; skip\n[solver:f]\nc = 3\n").unwrap();
        let mut g = c.take_section("global").unwrap();
        assert_eq!(g.require::<i32>("a").unwrap(), 1);
        let s = c.take_prefixed("solver");
        assert_eq!(s[0].0, "f");
        assert!(c.take_section("x").is_some());
        c.finish().unwrap();
    }

    #[test]
    fn syntax_errors_carry_line_numbers() {
        let e = ConfigFile::parse("[p]\nnot a pair\n").unwrap_err();
        assert!(matches!(e, ConfigError::Syntax { line: 2, .. }));
        assert!(ConfigFile::parse("[p]\na=1\na=2").is_err());
        assert!(ConfigFile::parse("[p\n").is_err());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = "[problem]\nm=5\nn=10\ns=2\nlamda=0.1\n[solver:ista]\n";
        let e = ExperimentConfig::parse(text).unwrap_err();
        assert!(matches!(e, ConfigError::Unknown { .. }), "{e}");
    }

    #[test]
    fn experiment_defaults() {
        let text = "[problem]\nm=5\nn=10\ns=2\n[solver:fista]\n[solver:hyp]\nmethod=bpgd\nc=0.01\n";
        let c = ExperimentConfig::parse(text).unwrap();
        assert_eq!(c.problem.lambda, LambdaSpec::Fraction(0.1));
        assert_eq!(c.budget.max_iter, 1000);
        assert!(matches!(&c.solvers[0].kind, SolverKind::Ista { accel, .. } if accel == "fista"));
        assert_eq!(
            c.solvers[1].kind,
            SolverKind::Bpgd {
                entropy: EntropyKind::Hyperbolic(0.01),
                step: None,
                literal: false
            }
        );
    }

    #[test]
    fn experiment_needs_a_solver() {
        assert!(ExperimentConfig::parse("[problem]\nm=5\nn=10\ns=2\n").is_err());
        assert!(ExperimentConfig::parse("[problem]\nm=5\nn=10\ns=2\n[solver:x]\n[budget]\nmax_iter=0\n").is_err());
    }

    #[test]
    fn phase_grid_defaults_to_eighths() {
        let c = PhaseConfig::parse("[phase]\nn=16\ns=2\n").unwrap();
        assert_eq!(c.sweep.m_grid, vec![2, 4, 6, 8, 10, 12, 14, 16]);
        assert!(PhaseConfig::parse("[phase]\nn=16\ns=2\nq=0.4\n").is_err());
    }
}
