//! Block soft-thresholding proximal maps for the derivative-based
//! regularizers, their values, and the partial-derivative norm readout.
//!
//! Vectors such as `phi = Z omega` are stored as `d` contiguous blocks of
//! length `n`; block `a` holds the partial derivative along variable `a` at
//! every training point.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockVector {
    data: Vec<f64>,
    block_len: usize,
}

impl BlockVector {
    pub fn new(data: Vec<f64>, block_len: usize) -> Result<Self> {
        if block_len == 0 || !data.len().is_multiple_of(block_len) {
            return Err(Error::DimensionMismatch {
                expected: block_len.max(1) * (data.len() / block_len.max(1) + 1),
                got: data.len(),
            });
        }
        Ok(Self { data, block_len })
    }

    pub fn zeros(blocks: usize, block_len: usize) -> Self {
        Self {
            data: vec![0.0; blocks * block_len],
            block_len,
        }
    }

    pub fn block_len(&self) -> usize {
        self.block_len
    }

    pub fn num_blocks(&self) -> usize {
        self.data.len() / self.block_len
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn block(&self, a: usize) -> &[f64] {
        &self.data[a * self.block_len..(a + 1) * self.block_len]
    }

    pub fn block_mut(&mut self, a: usize) -> &mut [f64] {
        &mut self.data[a * self.block_len..(a + 1) * self.block_len]
    }

    pub fn block_norm(&self, a: usize) -> f64 {
        squared_norm(self, &[a]).sqrt()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }
}

/// Partition of the variables `0..d` into disjoint, not necessarily
/// consecutive groups. Indices are zero-based internally; the JSON form
/// uses one-based indices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<usize>>", into = "Vec<Vec<usize>>")]
pub struct GroupStructure {
    groups: Vec<Vec<usize>>,
    dim: usize,
}

impl GroupStructure {
    pub fn new(groups: Vec<Vec<usize>>, dim: usize) -> Result<Self> {
        let mut seen = vec![false; dim];
        for g in &groups {
            if g.is_empty() {
                return Err(Error::InvalidGroups("empty group".into()));
            }
            for &a in g {
                if a >= dim {
                    return Err(Error::InvalidGroups(format!(
                        "variable {} out of range 1..={dim}",
                        a + 1
                    )));
                }
                if std::mem::replace(&mut seen[a], true) {
                    return Err(Error::InvalidGroups(format!(
                        "variable {} appears in more than one group",
                        a + 1
                    )));
                }
            }
        }
        if let Some(a) = seen.iter().position(|s| !s) {
            return Err(Error::InvalidGroups(format!(
                "variable {} is not covered by any group",
                a + 1
            )));
        }
        Ok(Self { groups, dim })
    }

    pub fn singletons(dim: usize) -> Self {
        Self {
            groups: (0..dim).map(|a| vec![a]).collect(),
            dim,
        }
    }

    /// Consecutive groups of `size` variables (the last may be shorter).
    pub fn consecutive(dim: usize, size: usize) -> Result<Self> {
        if size == 0 {
            return Err(Error::InvalidGroups("group size must be >= 1".into()));
        }
        let groups = (0..dim)
            .collect::<Vec<_>>()
            .chunks(size)
            .map(<[usize]>::to_vec)
            .collect();
        Self::new(groups, dim)
    }

    /// Parses a JSON array of arrays of one-based variable indices.
    pub fn from_json(text: &str, dim: usize) -> Result<Self> {
        let raw: Vec<Vec<usize>> = serde_json::from_str(text)?;
        Self::from_one_based(raw, dim)
    }

    pub fn from_one_based(raw: Vec<Vec<usize>>, dim: usize) -> Result<Self> {
        let mut groups = Vec::with_capacity(raw.len());
        for g in raw {
            let mut zero = Vec::with_capacity(g.len());
            for a in g {
                if a == 0 {
                    return Err(Error::InvalidGroups(
                        "variable indices are one-based; found 0".into(),
                    ));
                }
                zero.push(a - 1);
            }
            groups.push(zero);
        }
        Self::new(groups, dim)
    }

    pub fn to_one_based(&self) -> Vec<Vec<usize>> {
        self.groups
            .iter()
            .map(|g| g.iter().map(|a| a + 1).collect())
            .collect()
    }

    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.groups.iter().map(Vec::len).collect()
    }
}

impl TryFrom<Vec<Vec<usize>>> for GroupStructure {
    type Error = Error;

    fn try_from(raw: Vec<Vec<usize>>) -> Result<Self> {
        let dim = raw.iter().flatten().copied().max().unwrap_or(0);
        Self::from_one_based(raw, dim)
    }
}

impl From<GroupStructure> for Vec<Vec<usize>> {
    fn from(g: GroupStructure) -> Self {
        g.to_one_based()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RegularizerSpec {
    Lasso,
    GroupLasso { groups: GroupStructure },
    ElasticNet { mu: f64 },
}

impl RegularizerSpec {
    pub fn validate(&self, dim: usize) -> Result<()> {
        match self {
            RegularizerSpec::Lasso => Ok(()),
            RegularizerSpec::GroupLasso { groups } => {
                if groups.dim() != dim {
                    return Err(Error::InvalidGroups(format!(
                        "groups cover {} variables but the data has {dim}",
                        groups.dim()
                    )));
                }
                Ok(())
            }
            RegularizerSpec::ElasticNet { mu } => check_mu(*mu),
        }
    }

    pub fn mu(&self) -> Option<f64> {
        match self {
            RegularizerSpec::ElasticNet { mu } => Some(*mu),
            _ => None,
        }
    }

    pub fn short_name(&self) -> &'static str {
        match self {
            RegularizerSpec::Lasso => "l",
            RegularizerSpec::GroupLasso { .. } => "gl",
            RegularizerSpec::ElasticNet { .. } => "en",
        }
    }

    /// Penalised units (single variables or groups) with the weight that
    /// multiplies `tau` in their soft-threshold.
    pub fn weighted_units(&self, dim: usize) -> Vec<(Vec<usize>, f64)> {
        match self {
            RegularizerSpec::Lasso => (0..dim).map(|a| (vec![a], 1.0)).collect(),
            RegularizerSpec::GroupLasso { groups } => groups
                .groups()
                .iter()
                .map(|g| (g.clone(), g.len() as f64))
                .collect(),
            RegularizerSpec::ElasticNet { mu } => (0..dim).map(|a| (vec![a], *mu)).collect(),
        }
    }
}

fn check_mu(mu: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&mu) {
        return Err(Error::InvalidParameter(format!("mu must lie in [0, 1], got {mu}")));
    }
    Ok(())
}

fn squared_norm(v: &BlockVector, blocks: &[usize]) -> f64 {
    let mut acc = 0.0;
    for &a in blocks {
        for x in v.block(a) {
            acc += x * x;
        }
    }
    acc
}

/// Writes `v_g * scale * max(0, 1 - threshold / |v_g|)` into `out` for the
/// union of `blocks`; a norm at or below the threshold gives exact zeros.
fn shrink_blocks(out: &mut BlockVector, v: &BlockVector, blocks: &[usize], threshold: f64, scale: f64) {
    let norm = squared_norm(v, blocks).sqrt();
    if norm <= threshold || norm == 0.0 {
        for &a in blocks {
            out.block_mut(a).iter_mut().for_each(|x| *x = 0.0);
        }
        return;
    }
    let factor = (1.0 - threshold / norm) / scale;
    for &a in blocks {
        for (o, x) in out.block_mut(a).iter_mut().zip(v.block(a)) {
            *o = x * factor;
        }
    }
}

pub fn prox_lasso(v: &BlockVector, threshold: f64) -> Result<BlockVector> {
    if !(threshold >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "threshold must be >= 0, got {threshold}"
        )));
    }
    let mut out = BlockVector::zeros(v.num_blocks(), v.block_len());
    for a in 0..v.num_blocks() {
        shrink_blocks(&mut out, v, &[a], threshold, 1.0);
    }
    Ok(out)
}

pub fn prox_group_lasso(
    v: &BlockVector,
    base_threshold: f64,
    groups: &GroupStructure,
) -> Result<BlockVector> {
    if !(base_threshold >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "threshold must be >= 0, got {base_threshold}"
        )));
    }
    if groups.dim() != v.num_blocks() {
        return Err(Error::InvalidGroups(format!(
            "groups cover {} variables but the vector has {} blocks",
            groups.dim(),
            v.num_blocks()
        )));
    }
    let mut out = BlockVector::zeros(v.num_blocks(), v.block_len());
    for g in groups.groups() {
        shrink_blocks(&mut out, v, g, base_threshold * g.len() as f64, 1.0);
    }
    Ok(out)
}

pub fn prox_elastic_net(
    v: &BlockVector,
    tau: f64,
    mu: f64,
    kappa: f64,
    n: usize,
) -> Result<BlockVector> {
    check_mu(mu)?;
    if !(kappa > 0.0) {
        return Err(Error::InvalidParameter(format!("kappa must be > 0, got {kappa}")));
    }
    if !(tau >= 0.0) {
        return Err(Error::InvalidParameter(format!("tau must be >= 0, got {tau}")));
    }
    let nf = n as f64;
    let scale = 2.0 * tau * (1.0 - mu) / (kappa * nf) + 1.0;
    let threshold = tau * mu / (kappa * nf.sqrt());
    let mut out = BlockVector::zeros(v.num_blocks(), v.block_len());
    for a in 0..v.num_blocks() {
        shrink_blocks(&mut out, v, &[a], threshold, scale);
    }
    Ok(out)
}

/// Empirical regularizer `I(phi)` evaluated on derivative blocks.
pub fn regularizer_value(reg: &RegularizerSpec, phi: &BlockVector, n: usize) -> f64 {
    let nf = n as f64;
    match reg {
        RegularizerSpec::Lasso => {
            (0..phi.num_blocks()).map(|a| phi.block_norm(a)).sum::<f64>() / nf.sqrt()
        }
        RegularizerSpec::GroupLasso { groups } => {
            groups
                .groups()
                .iter()
                .map(|g| g.len() as f64 * squared_norm(phi, g).sqrt())
                .sum::<f64>()
                / nf.sqrt()
        }
        RegularizerSpec::ElasticNet { mu } => {
            let (mut l1, mut l2) = (0.0, 0.0);
            for a in 0..phi.num_blocks() {
                let sq = squared_norm(phi, &[a]);
                l1 += sq.sqrt();
                l2 += sq;
            }
            mu * l1 / nf.sqrt() + (1.0 - mu) * l2 / nf
        }
    }
}

/// Training-sample partial-derivative norms `|phi_a|_2 / sqrt(n)`.
pub fn partial_derivative_norms(phi: &BlockVector, n: usize) -> Vec<f64> {
    let s = (n as f64).sqrt();
    (0..phi.num_blocks()).map(|a| phi.block_norm(a) / s).collect()
}

/// Zero-based indices of variables with a strictly positive norm.
pub fn support_from_norms(norms: &[f64]) -> Vec<usize> {
    norms
        .iter()
        .enumerate()
        .filter(|(_, &v)| v > 0.0)
        .map(|(a, _)| a)
        .collect()
}
