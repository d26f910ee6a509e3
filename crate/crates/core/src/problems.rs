//! Instance generators, `λ_max`, noise models and image I/O.

use std::io::{BufRead, BufReader, Read, Write};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{check_len, Error, Result};
use crate::groups::{group_sq_norms, GroupStructure};
use crate::linalg::{Matrix, Vector};
use crate::linops::{fourier_system, read_f64_payload, read_u32, FourierSystemSpec, LinearOperator};
use crate::model::{Loss, RegressionProblem};

/// A generated problem. Multitask data is stacked task-major: `y` holds
/// `Y[:, 0]`, then `Y[:, 1]`, … and `a` is the per-task design repeated.
#[derive(Debug, Clone)]
pub struct ProblemInstance {
    pub a: LinearOperator,
    pub l: LinearOperator,
    pub groups: GroupStructure,
    pub y: Vector,
    pub x_true: Option<Vector>,
    pub noise: Option<Vector>,
    pub lambda: Option<f64>,
    pub tasks: usize,
    pub seed: u64,
}

impl ProblemInstance {
    /// `‖Lx‖_{1,2} + (1/2λ)‖Ax − y‖²` with the instance's `λ`.
    pub fn regression(&self) -> Result<RegressionProblem> {
        let lambda = self
            .lambda
            .ok_or_else(|| Error::InvalidArgument("instance has no λ".into()))?;
        RegressionProblem::new(
            self.a.clone(),
            self.l.clone(),
            self.groups.clone(),
            Loss::Quadratic {
                lambda,
                y: self.y.clone(),
            },
        )
    }

    pub fn relative_error(&self, x: &Vector) -> Option<f64> {
        self.x_true.as_ref().map(|t| (x - t).norm() / t.norm().max(f64::MIN_POSITIVE))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LambdaFlavor {
    Lasso,
    GroupLasso,
    SqrtLasso,
}

/// Smallest `λ` with zero solution. `Lasso` is `‖Aᵀy‖_∞`, `GroupLasso` is
/// `max_g ‖(Aᵀy)_g‖`, `SqrtLasso` is `‖Aᵀy‖_∞ / (‖y‖√m)`.
pub fn lambda_max(a: &LinearOperator, y: &Vector, groups: &GroupStructure, flavor: LambdaFlavor) -> Result<f64> {
    check_len("observations", a.rows(), y.len())?;
    let aty = a.adj(y);
    match flavor {
        LambdaFlavor::Lasso => Ok(aty.amax()),
        LambdaFlavor::GroupLasso => {
            check_len("groups", a.cols(), groups.dim())?;
            Ok(group_sq_norms(&aty, groups).iter().fold(0.0f64, |m, s| m.max(s.sqrt())))
        }
        LambdaFlavor::SqrtLasso => {
            let ny = y.norm();
            if ny == 0.0 {
                return Err(Error::InvalidArgument("square-root lasso λ_max needs y ≠ 0".into()));
            }
            Ok(aty.amax() / (ny * (y.len() as f64).sqrt()))
        }
    }
}

#[derive(Debug, Clone)]
pub struct GaussianSpec {
    pub m: usize,
    pub n: usize,
    /// Number of nonzero rows of `x*`.
    pub s: usize,
    pub tasks: usize,
    /// Consecutive overlapping groups with this overlap instead of rows.
    pub overlap: Option<usize>,
    pub noise_std: f64,
    pub normalize_columns: bool,
    /// `λ = λ_frac·λ_max` (group flavor) when set.
    pub lambda_frac: Option<f64>,
    pub seed: u64,
}

impl GaussianSpec {
    pub fn new(m: usize, n: usize, s: usize) -> Self {
        Self {
            m,
            n,
            s,
            tasks: 1,
            overlap: None,
            noise_std: 0.0,
            normalize_columns: true,
            lambda_frac: None,
            seed: 0,
        }
    }
}

fn gaussian_matrix(rng: &mut ChaCha8Rng, m: usize, n: usize, normalize: bool) -> Matrix {
    let mut a = Matrix::from_fn(m, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    if normalize {
        for mut c in a.column_iter_mut() {
            let norm = c.norm();
            if norm > 0.0 {
                c /= norm;
            }
        }
    }
    a
}

/// Gaussian design with a planted row-sparse signal.
pub fn gen_gaussian_instance(spec: &GaussianSpec) -> Result<ProblemInstance> {
    if spec.s > spec.n {
        return Err(Error::InvalidArgument(format!("sparsity {} exceeds n = {}", spec.s, spec.n)));
    }
    if spec.tasks == 0 {
        return Err(Error::InvalidArgument("at least one task is needed".into()));
    }
    let (m, n, t) = (spec.m, spec.n, spec.tasks);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let base = gaussian_matrix(&mut rng, m, n, spec.normalize_columns);
    let (groups, support): (GroupStructure, Vec<usize>) = match spec.overlap {
        None => {
            let rows = sample(&mut rng, n, spec.s).into_vec();
            let gs = if t == 1 {
                GroupStructure::trivial(n)
            } else {
                GroupStructure::rows_across(n, t)
            };
            (gs, rows)
        }
        Some(ov) => {
            if t != 1 {
                return Err(Error::InvalidArgument("overlapping groups are single-task".into()));
            }
            let gs = overlapping_groups(n, ov, 20, rng.random())?;
            // activate whole groups until s coordinates are covered
            let mut active = vec![false; n];
            let mut count = 0;
            for g in sample(&mut rng, gs.len(), gs.len()) {
                if count >= spec.s {
                    break;
                }
                for &i in gs.group(g) {
                    if !active[i] && count < spec.s {
                        active[i] = true;
                        count += 1;
                    }
                }
            }
            (gs, (0..n).filter(|&i| active[i]).collect())
        }
    };
    let mut x = Vector::zeros(n * t);
    for task in 0..t {
        for &i in &support {
            x[task * n + i] = rng.sample(StandardNormal);
        }
    }
    let a = if t == 1 {
        LinearOperator::dense(base)
    } else {
        LinearOperator::repeated(LinearOperator::dense(base), t)
    };
    let noise = Vector::from_fn(m * t, |_, _| spec.noise_std * rng.sample::<f64, _>(StandardNormal));
    let y = a.apply(&x)? + &noise;
    let lambda = match spec.lambda_frac {
        Some(f) => {
            let flavor = if spec.overlap.is_some() {
                LambdaFlavor::Lasso
            } else {
                LambdaFlavor::GroupLasso
            };
            Some(f * lambda_max(&a, &y, &groups, flavor)?)
        }
        None => None,
    };
    Ok(ProblemInstance {
        l: LinearOperator::identity(n * t),
        a,
        groups,
        y,
        x_true: Some(x),
        noise: Some(noise),
        lambda,
        tasks: t,
        seed: spec.seed,
    })
}

#[derive(Debug, Clone)]
pub struct FourierSpec {
    pub dim: usize,
    pub cutoff: usize,
    pub grid: usize,
    pub spikes: usize,
    pub lambda_frac: f64,
    pub seed: u64,
}

/// Low-pass Fourier measurements of a spike train on the grid, with
/// `λ = λ_frac·λ_max`. A single spike has unit amplitude; more spikes get
/// random signs and amplitudes in `[0.5, 1.5]`.
pub fn gen_fourier_instance(spec: &FourierSpec) -> Result<ProblemInstance> {
    if spec.spikes == 0 {
        return Err(Error::InvalidArgument("at least one spike is needed".into()));
    }
    let a = fourier_system(FourierSystemSpec {
        dim: spec.dim,
        cutoff: spec.cutoff,
        grid: spec.grid,
    })?;
    let n = a.cols();
    if spec.spikes > n {
        return Err(Error::InvalidArgument("more spikes than grid points".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut x = Vector::zeros(n);
    for i in sample(&mut rng, n, spec.spikes) {
        x[i] = if spec.spikes == 1 {
            1.0
        } else {
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            sign * rng.random_range(0.5..1.5)
        };
    }
    let y = a.apply(&x)?;
    let groups = GroupStructure::trivial(n);
    let lambda = spec.lambda_frac * lambda_max(&a, &y, &groups, LambdaFlavor::Lasso)?;
    Ok(ProblemInstance {
        l: LinearOperator::identity(n),
        a,
        groups,
        y,
        x_true: Some(x),
        noise: None,
        lambda: Some(lambda),
        tasks: 1,
        seed: spec.seed,
    })
}

/// Consecutive groups of random size in `1..=max_size`, each starting
/// `overlap` indices before the end of the previous one, covering `0..n`.
pub fn overlapping_groups(n: usize, overlap: usize, max_size: usize, seed: u64) -> Result<GroupStructure> {
    if n == 0 || max_size == 0 {
        return Err(Error::InvalidArgument("empty overlapping-group layout".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut groups = Vec::new();
    let mut start = 0;
    loop {
        // a group must extend past the overlap to make progress
        let size = rng.random_range(1..=max_size).max(overlap + 1);
        let end = (start + size).min(n);
        groups.push((start..end).collect());
        if end == n {
            break;
        }
        start = end - overlap;
    }
    GroupStructure::overlapping(n, groups, None)
}

/// Channel-major image, pixel `(i, j)` of channel `c` at
/// `c·h·w + i·w + j`, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl ImageTensor {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        check_len("image data", height * width * channels, data.len())?;
        if let Some(bad) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Format(format!("pixel value {bad} outside [0, 1]")));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    /// Clamps into `[0, 1]` instead of rejecting.
    pub fn from_vector_clamped(height: usize, width: usize, channels: usize, v: &Vector) -> Result<Self> {
        Self::new(height, width, channels, v.iter().map(|x| x.clamp(0.0, 1.0)).collect())
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn to_vector(&self) -> Vector {
        Vector::from_column_slice(&self.data)
    }

    pub fn get(&self, c: usize, i: usize, j: usize) -> f64 {
        self.data[c * self.pixels() + i * self.width + j]
    }

    /// Reads binary PGM (`P5`) or PPM (`P6`) with maxval ≤ 255.
    pub fn read_pnm<R: Read>(input: R) -> Result<Self> {
        let mut r = BufReader::new(input);
        let magic = pnm_token(&mut r)?;
        let channels = match magic.as_str() {
            "P5" => 1,
            "P6" => 3,
            _ => return Err(Error::Format(format!("unsupported image magic {magic:?}"))),
        };
        let width = pnm_number(&mut r)?;
        let height = pnm_number(&mut r)?;
        let maxval = pnm_number(&mut r)?;
        if maxval == 0 || maxval > 255 {
            return Err(Error::Format(format!("unsupported maxval {maxval}")));
        }
        let mut raw = vec![0u8; width * height * channels];
        r.read_exact(&mut raw)
            .map_err(|e| Error::Format(format!("truncated pixel data: {e}")))?;
        let hw = width * height;
        let mut data = vec![0.0; raw.len()];
        for p in 0..hw {
            for c in 0..channels {
                data[c * hw + p] = raw[p * channels + c] as f64 / maxval as f64;
            }
        }
        Self::new(height, width, channels, data)
    }

    /// Writes `P5` for one channel, `P6` for three.
    pub fn write_pnm<W: Write>(&self, mut out: W) -> Result<()> {
        let magic = match self.channels {
            1 => "P5",
            3 => "P6",
            c => return Err(Error::Format(format!("cannot write {c} channels as PNM"))),
        };
        write!(out, "{magic}\n{} {}\n255\n", self.width, self.height)?;
        let hw = self.pixels();
        let mut raw = Vec::with_capacity(hw * self.channels);
        for p in 0..hw {
            for c in 0..self.channels {
                raw.push((self.data[c * hw + p] * 255.0).round() as u8);
            }
        }
        out.write_all(&raw)?;
        Ok(())
    }

    /// `SOPT`, u32 height, u32 width, u32 channels, then the channel-major
    /// little-endian f64 payload.
    pub fn read_sopt<R: Read>(mut input: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        input.read_exact(&mut magic)?;
        if &magic != TENSOR_MAGIC {
            return Err(Error::Format("bad tensor magic".into()));
        }
        let h = read_u32(&mut input)? as usize;
        let w = read_u32(&mut input)? as usize;
        let c = read_u32(&mut input)? as usize;
        Self::new(h, w, c, read_f64_payload(&mut input, h * w * c)?)
    }

    pub fn write_sopt<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(TENSOR_MAGIC)?;
        for d in [self.height, self.width, self.channels] {
            let d = u32::try_from(d).map_err(|_| Error::Format("tensor too large".into()))?;
            out.write_all(&d.to_le_bytes())?;
        }
        for v in &self.data {
            out.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }
}

const TENSOR_MAGIC: &[u8; 4] = b"SOPT";

fn pnm_token<R: BufRead>(r: &mut R) -> Result<String> {
    let mut tok = String::new();
    let mut byte = [0u8; 1];
    loop {
        if r.read(&mut byte)? == 0 {
            break;
        }
        let ch = byte[0] as char;
        if ch == '#' && tok.is_empty() {
            let mut skip = Vec::new();
            r.read_until(b'\n', &mut skip)?;
            continue;
        }
        if ch.is_ascii_whitespace() {
            if tok.is_empty() {
                continue;
            }
            break;
        }
        tok.push(ch);
    }
    if tok.is_empty() {
        return Err(Error::Format("truncated image header".into()));
    }
    Ok(tok)
}

fn pnm_number<R: BufRead>(r: &mut R) -> Result<usize> {
    let tok = pnm_token(r)?;
    tok.parse()
        .map_err(|_| Error::Format(format!("bad header field {tok:?}")))
}

/// Sets `round(fraction·H·W)` distinct pixels to 0 or 1 (all channels
/// together, each value with probability ½).
pub fn add_salt_pepper(img: &ImageTensor, fraction: f64, seed: u64) -> Result<ImageTensor> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::InvalidArgument(format!("fraction {fraction} outside [0, 1]")));
    }
    let hw = img.pixels();
    let count = (fraction * hw as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = img.clone();
    for p in sample(&mut rng, hw, count) {
        let val = if rng.random::<bool>() { 1.0 } else { 0.0 };
        for c in 0..img.channels {
            out.data[c * hw + p] = val;
        }
    }
    Ok(out)
}

/// Keeps `⌊keep·H·W⌋` uniformly chosen pixels, the same in every channel.
pub fn make_inpainting_mask(h: usize, w: usize, channels: usize, keep: f64, seed: u64) -> Result<LinearOperator> {
    if !(keep > 0.0 && keep <= 1.0) {
        return Err(Error::InvalidArgument(format!("keep fraction {keep} outside (0, 1]")));
    }
    let hw = h * w;
    let count = (keep * hw as f64).floor() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pixels = sample(&mut rng, hw, count).into_vec();
    pixels.sort_unstable();
    let kept: Vec<usize> = (0..channels)
        .flat_map(|c| pixels.iter().map(move |p| c * hw + p))
        .collect();
    LinearOperator::mask(hw * channels, &kept)
}
