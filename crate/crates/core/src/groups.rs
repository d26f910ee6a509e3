//! Group structures, group norms, the grouped Hadamard product and the
//! extension `v ↦ v̄`.

use std::ops::{Deref, DerefMut};

use crate::error::{check_len, Error, Result};
use crate::linalg::Vector;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GroupMode {
    Partition,
    Overlapping,
}

/// A family of index groups over `0..dim`. Indices are 0-based internally;
/// the text format is 1-based.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupStructure {
    dim: usize,
    groups: Vec<Vec<usize>>,
    mode: GroupMode,
    weights: Vec<f64>,
    /// For each index, the groups containing it.
    membership: Vec<Vec<usize>>,
}

impl GroupStructure {
    /// Disjoint groups covering `0..dim`.
    pub fn partition(dim: usize, groups: Vec<Vec<usize>>) -> Result<Self> {
        let gs = Self::build(dim, groups, GroupMode::Partition, None)?;
        for (i, m) in gs.membership.iter().enumerate() {
            match m.len() {
                1 => {}
                0 => return Err(Error::NotPartition(format!("index {} is not covered", i + 1))),
                _ => {
                    return Err(Error::NotPartition(format!(
                        "index {} belongs to {} groups",
                        i + 1,
                        m.len()
                    )))
                }
            }
        }
        Ok(gs)
    }

    /// Possibly overlapping groups; weights default to `√n_g`.
    pub fn overlapping(
        dim: usize,
        groups: Vec<Vec<usize>>,
        weights: Option<Vec<f64>>,
    ) -> Result<Self> {
        Self::build(dim, groups, GroupMode::Overlapping, weights)
    }

    fn build(
        dim: usize,
        groups: Vec<Vec<usize>>,
        mode: GroupMode,
        weights: Option<Vec<f64>>,
    ) -> Result<Self> {
        let mut membership = vec![Vec::new(); dim];
        let mut sorted = Vec::with_capacity(groups.len());
        for (g, mut idx) in groups.into_iter().enumerate() {
            if idx.is_empty() {
                return Err(Error::InvalidArgument(format!("group {} is empty", g + 1)));
            }
            idx.sort_unstable();
            idx.dedup();
            for &i in &idx {
                if i >= dim {
                    return Err(Error::IndexOutOfRange { index: i + 1, dim });
                }
                membership[i].push(g);
            }
            sorted.push(idx);
        }
        let weights = match weights {
            Some(w) => {
                check_len("group weights", sorted.len(), w.len())?;
                if w.iter().any(|&x| !(x > 0.0)) {
                    return Err(Error::InvalidArgument("group weights must be positive".into()));
                }
                w
            }
            None => sorted.iter().map(|g| (g.len() as f64).sqrt()).collect(),
        };
        Ok(Self {
            dim,
            groups: sorted,
            mode,
            weights,
            membership,
        })
    }

    /// Singletons `{0}, …, {n-1}`.
    pub fn trivial(n: usize) -> Self {
        Self::partition(n, (0..n).map(|i| vec![i]).collect()).expect("singletons partition")
    }

    /// One group holding every index.
    pub fn single(n: usize) -> Self {
        Self::partition(n, vec![(0..n).collect()]).expect("single group partition")
    }

    /// Consecutive blocks of the given sizes.
    pub fn contiguous(sizes: &[usize]) -> Result<Self> {
        let mut groups = Vec::with_capacity(sizes.len());
        let mut start = 0;
        for &s in sizes {
            groups.push((start..start + s).collect());
            start += s;
        }
        Self::partition(start, groups)
    }

    /// Rows of a task-major stacked `n × copies` unknown: group `i` holds
    /// `{i, n+i, 2n+i, …}`.
    pub fn rows_across(n: usize, copies: usize) -> Self {
        let groups = (0..n).map(|i| (0..copies).map(|t| t * n + i).collect()).collect();
        Self::partition(n * copies, groups).expect("row groups partition")
    }

    /// Per-pixel groups over the output of a multichannel image gradient:
    /// each group holds both directions of every channel at one pixel.
    pub fn gradient_pixels(height: usize, width: usize, channels: usize) -> Self {
        let hw = height * width;
        let groups = (0..hw)
            .map(|p| {
                (0..channels)
                    .flat_map(|t| [2 * t * hw + p, 2 * t * hw + hw + p])
                    .collect()
            })
            .collect();
        Self::partition(2 * channels * hw, groups).expect("pixel groups partition")
    }

    /// The contiguous partition of the output space of a block extractor
    /// built from this structure.
    pub fn stacked_blocks(&self) -> Self {
        let sizes: Vec<usize> = self.groups.iter().map(Vec::len).collect();
        Self::contiguous(&sizes).expect("stacked blocks partition")
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    pub fn mode(&self) -> GroupMode {
        self.mode
    }

    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }

    pub fn group(&self, g: usize) -> &[usize] {
        &self.groups[g]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn groups_of(&self, i: usize) -> &[usize] {
        &self.membership[i]
    }

    /// True when every group is a singleton and groups follow index order.
    pub fn is_trivial(&self) -> bool {
        self.mode == GroupMode::Partition
            && self.groups.len() == self.dim
            && self.groups.iter().enumerate().all(|(g, idx)| idx[0] == g)
    }

    pub fn covers(&self) -> bool {
        self.membership.iter().all(|m| !m.is_empty())
    }

    pub fn require_partition(&self) -> Result<()> {
        if self.mode == GroupMode::Partition {
            Ok(())
        } else {
            Err(Error::NotPartition("overlapping structure".into()))
        }
    }

    /// Group owning index `i` in partition mode.
    pub fn owner(&self, i: usize) -> usize {
        self.membership[i][0]
    }

    /// Parses one group per line, 1-based whitespace-separated indices.
    pub fn from_text(text: &str, dim: usize, mode: GroupMode) -> Result<Self> {
        let mut groups = Vec::new();
        for (ln, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut g = Vec::new();
            for tok in line.split_whitespace() {
                let i: usize = tok
                    .parse()
                    .map_err(|_| Error::Format(format!("line {}: bad index {tok:?}", ln + 1)))?;
                if i == 0 {
                    return Err(Error::Format(format!("line {}: indices are 1-based", ln + 1)));
                }
                g.push(i - 1);
            }
            groups.push(g);
        }
        match mode {
            GroupMode::Partition => Self::partition(dim, groups),
            GroupMode::Overlapping => Self::overlapping(dim, groups, None),
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for g in &self.groups {
            let line: Vec<String> = g.iter().map(|i| (i + 1).to_string()).collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
        out
    }
}

/// One scalar per group.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupedVector(Vector);

impl GroupedVector {
    pub fn new(v: Vector) -> Self {
        Self(v)
    }

    pub fn from_vec(v: Vec<f64>) -> Self {
        Self(Vector::from_vec(v))
    }

    pub fn zeros(n: usize) -> Self {
        Self(Vector::zeros(n))
    }

    pub fn ones(n: usize) -> Self {
        Self(Vector::from_element(n, 1.0))
    }

    pub fn into_inner(self) -> Vector {
        self.0
    }

    pub fn as_vector(&self) -> &Vector {
        &self.0
    }

    pub fn check(&self, gs: &GroupStructure) -> Result<()> {
        check_len("grouped vector", gs.len(), self.0.len())
    }
}

impl Deref for GroupedVector {
    type Target = Vector;
    fn deref(&self) -> &Vector {
        &self.0
    }
}

impl DerefMut for GroupedVector {
    fn deref_mut(&mut self) -> &mut Vector {
        &mut self.0
    }
}

impl From<Vector> for GroupedVector {
    fn from(v: Vector) -> Self {
        Self(v)
    }
}

/// `Σ_g ‖z_g‖₂`.
pub fn group_norm_12(z: &Vector, gs: &GroupStructure) -> Result<f64> {
    gs.require_partition()?;
    check_len("grouped input", gs.dim(), z.len())?;
    Ok(group_sq_norms(z, gs).iter().map(|s| s.sqrt()).sum())
}

/// `max_g ‖z_g‖₂`, zero for an empty structure.
pub fn group_norm_inf2(z: &Vector, gs: &GroupStructure) -> f64 {
    group_sq_norms(z, gs)
        .iter()
        .fold(0.0_f64, |acc, s| acc.max(s.sqrt()))
}

/// `‖z_g‖²` for every group.
pub fn group_sq_norms(z: &Vector, gs: &GroupStructure) -> Vec<f64> {
    gs.groups()
        .iter()
        .map(|g| g.iter().map(|&i| z[i] * z[i]).sum())
        .collect()
}

/// `⟨a_g, b_g⟩` for every group.
pub fn group_inner(a: &Vector, b: &Vector, gs: &GroupStructure) -> Vec<f64> {
    gs.groups()
        .iter()
        .map(|g| g.iter().map(|&i| a[i] * b[i]).sum())
        .collect()
}

/// `(u_g v_g)_g`: entry `i` of group `g` becomes `u_i · v_g`.
pub fn hadamard_group(u: &Vector, v: &GroupedVector, gs: &GroupStructure) -> Result<Vector> {
    gs.require_partition()?;
    check_len("hadamard left factor", gs.dim(), u.len())?;
    v.check(gs)?;
    Ok(u.component_mul(&extend(v, gs)))
}

/// `v̄_i = v_g` for `i ∈ g`.
pub fn extend(v: &GroupedVector, gs: &GroupStructure) -> Vector {
    let mut out = Vector::zeros(gs.dim());
    for (g, idx) in gs.groups().iter().enumerate() {
        for &i in idx {
            out[i] = v[g];
        }
    }
    out
}

/// Closed-form minimizer of `½‖u‖² + ½‖v‖²` subject to `u ⊙ v = z`:
/// `v_g = √‖z_g‖`, `u_g = z_g / √‖z_g‖`.
pub fn balanced_factors(z: &Vector, gs: &GroupStructure) -> (Vector, GroupedVector) {
    let norms = group_sq_norms(z, gs);
    let v: Vec<f64> = norms.iter().map(|s| s.sqrt().sqrt()).collect();
    let mut u = Vector::zeros(gs.dim());
    for (g, idx) in gs.groups().iter().enumerate() {
        if v[g] > 0.0 {
            for &i in idx {
                u[i] = z[i] / v[g];
            }
        }
    }
    (u, GroupedVector::from_vec(v))
}
