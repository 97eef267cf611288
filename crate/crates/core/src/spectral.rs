//! Random-walk view of the proposal similarity graph.
//!
//! Similarities become a symmetric non-negative affinity `W`; rows of `W`
//! normalized to one give the transition matrix `T`, and node degree over total
//! volume gives the stationary distribution `pi`. For a partition `(A, A')` the
//! probability that one step of the stationary walk started in `A'` lands in `A`
//! measures how much a proposal outside a class would aggregate from inside it.
//! The two cross probabilities add up to the normalized cut.

use std::path::Path;

use log::warn;
use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::error::{Result, SelsaError};
use crate::proposal::write_csv;
use crate::selsa::{SelsaParams, SimilarityMatrix};

const SYMMETRY_TOL: f64 = 1e-12;

/// Symmetric, non-negative affinity matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinityGraph {
    w: Array2<f64>,
}

impl AffinityGraph {
    pub fn new(w: Array2<f64>) -> Result<Self> {
        let (n, m) = w.dim();
        if n != m || n == 0 {
            return Err(SelsaError::Config(format!(
                "affinity matrix must be square and non-empty, got {n}x{m}"
            )));
        }
        let scale = w.iter().fold(1.0_f64, |acc, v| acc.max(v.abs()));
        for i in 0..n {
            for j in 0..n {
                let v = w[[i, j]];
                if !v.is_finite() || v < 0.0 {
                    return Err(SelsaError::Precondition(format!(
                        "affinity entry ({i}, {j}) = {v} is not a finite non-negative number"
                    )));
                }
                if (v - w[[j, i]]).abs() > SYMMETRY_TOL * scale {
                    return Err(SelsaError::Precondition(format!(
                        "affinity matrix is not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        Ok(AffinityGraph { w })
    }

    pub fn weights(&self) -> &Array2<f64> {
        &self.w
    }

    pub fn len(&self) -> usize {
        self.w.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }

    /// Row sums of `W`; fails on the first node with zero degree.
    pub fn degrees(&self) -> Result<Array1<f64>> {
        let deg = self.w.sum_axis(Axis(1));
        if let Some(i) = deg.iter().position(|&d| d <= 0.0) {
            return Err(SelsaError::Precondition(format!(
                "node {i} has zero degree"
            )));
        }
        Ok(deg)
    }

    pub fn scaled(&self, factor: f64) -> Result<Self> {
        AffinityGraph::new(&self.w * factor)
    }
}

/// A non-empty proper subset `A` of the nodes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    in_a: Vec<bool>,
}

/// One side of a [`Partition`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    A,
    Complement,
}

impl Partition {
    pub fn new(n: usize, members: &[usize]) -> Result<Self> {
        let mut in_a = vec![false; n];
        for &i in members {
            if i >= n {
                return Err(SelsaError::Precondition(format!(
                    "node {i} outside a graph of {n} nodes"
                )));
            }
            in_a[i] = true;
        }
        Partition::from_mask(in_a)
    }

    pub fn from_mask(in_a: Vec<bool>) -> Result<Self> {
        let count = in_a.iter().filter(|&&b| b).count();
        if count == 0 || count == in_a.len() {
            return Err(SelsaError::Precondition(
                "partition side is empty: A must be non-empty and proper".into(),
            ));
        }
        Ok(Partition { in_a })
    }

    pub fn len(&self) -> usize {
        self.in_a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.in_a.is_empty()
    }

    pub fn contains(&self, side: Side, node: usize) -> bool {
        match side {
            Side::A => self.in_a[node],
            Side::Complement => !self.in_a[node],
        }
    }
}

/// `W = exp((S + S^T)/2 - max)`, elementwise.
pub fn to_affinity(s: &SimilarityMatrix) -> Result<AffinityGraph> {
    let s = &s.0;
    if s.nrows() != s.ncols() {
        return Err(SelsaError::Config(format!(
            "affinity needs a square similarity matrix over one proposal set, got {:?}",
            s.dim()
        )));
    }
    let mut sym = (s + &s.t()) * 0.5;
    let max = sym.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    sym.mapv_inplace(|v| (v - max).exp());
    AffinityGraph::new(sym)
}

pub fn stochastic_matrix(g: &AffinityGraph) -> Result<Array2<f64>> {
    let deg = g.degrees()?;
    Ok(&g.w / &deg.insert_axis(Axis(1)))
}

pub fn stationary_distribution(g: &AffinityGraph) -> Result<Array1<f64>> {
    let deg = g.degrees()?;
    let volume = deg.sum();
    Ok(deg / volume)
}

/// Probability that one step of the stationary walk started on side `from`
/// lands on side `to`.
pub fn transition_probability(
    g: &AffinityGraph,
    p: &Partition,
    from: Side,
    to: Side,
) -> Result<f64> {
    if p.len() != g.len() {
        return Err(SelsaError::Precondition(format!(
            "partition over {} nodes for a graph of {} nodes",
            p.len(),
            g.len()
        )));
    }
    let t = stochastic_matrix(g)?;
    let pi = stationary_distribution(g)?;
    let mut flow = 0.0;
    let mut mass = 0.0;
    for i in (0..g.len()).filter(|&i| p.contains(from, i)) {
        mass += pi[i];
        for j in (0..g.len()).filter(|&j| p.contains(to, j)) {
            flow += pi[i] * t[[i, j]];
        }
    }
    Ok((flow / mass).clamp(0.0, 1.0))
}

/// Normalized cut as the sum of both cross-side transition probabilities.
pub fn ncut(g: &AffinityGraph, p: &Partition) -> Result<f64> {
    Ok(transition_probability(g, p, Side::A, Side::Complement)?
        + transition_probability(g, p, Side::Complement, Side::A)?)
}

/// Inner-product similarity of raw features, `X X^T`.
pub fn raw_similarity(features: ArrayView2<f64>) -> SimilarityMatrix {
    SimilarityMatrix(features.dot(&features.t()))
}

/// Similarity the first aggregation block sees: `phi1(h) . psi1(h)` with `h = relu(fc1 x)`.
pub fn learned_similarity(
    features: ArrayView2<f64>,
    params: &SelsaParams,
) -> Result<SimilarityMatrix> {
    let mut h = params.fc1.apply(features)?;
    h.mapv_inplace(|v| v.max(0.0));
    crate::selsa::similarity_matrix(h.view(), h.view(), &params.phi1, &params.psi1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassRisk {
    pub class_id: usize,
    pub n_proposals: usize,
    /// Probability of stepping from outside the class into it.
    pub p_out_in_before: f64,
    pub p_out_in_after: f64,
    pub ncut_before: f64,
    pub ncut_after: f64,
}

/// Per-class cross-aggregation risk under two similarity structures over the
/// same proposals (typically untrained vs trained, or raw vs learned).
///
/// `classes` lists the class ids to report; a class with no proposals is
/// skipped with a warning. Fewer than two classes present is a precondition
/// failure, since no proper partition exists.
pub fn cluster_risk_report(
    before: &SimilarityMatrix,
    after: &SimilarityMatrix,
    labels: &[usize],
    classes: impl IntoIterator<Item = usize>,
) -> Result<Vec<ClassRisk>> {
    let n = labels.len();
    if before.0.dim() != (n, n) || after.0.dim() != (n, n) {
        return Err(SelsaError::Config(format!(
            "similarity matrices {:?} / {:?} do not match {n} labels",
            before.0.dim(),
            after.0.dim()
        )));
    }
    let mut present: Vec<usize> = labels.to_vec();
    present.sort_unstable();
    present.dedup();
    if present.len() < 2 {
        return Err(SelsaError::Precondition(
            "at least two classes are needed to form a partition".into(),
        ));
    }
    let g_before = to_affinity(before)?;
    let g_after = to_affinity(after)?;
    let mut rows = Vec::new();
    for class_id in classes {
        let members: Vec<usize> = (0..n).filter(|&i| labels[i] == class_id).collect();
        if members.is_empty() {
            warn!("class {class_id} has no proposals; skipped in cluster risk report");
            continue;
        }
        let p = Partition::new(n, &members)?;
        rows.push(ClassRisk {
            class_id,
            n_proposals: members.len(),
            p_out_in_before: transition_probability(&g_before, &p, Side::Complement, Side::A)?,
            p_out_in_after: transition_probability(&g_after, &p, Side::Complement, Side::A)?,
            ncut_before: ncut(&g_before, &p)?,
            ncut_after: ncut(&g_after, &p)?,
        });
    }
    Ok(rows)
}

pub const CLUSTER_RISK_HEADER: [&str; 6] = [
    "class_id",
    "n_proposals",
    "p_out_in_before",
    "p_out_in_after",
    "ncut_before",
    "ncut_after",
];

pub fn write_cluster_risk_csv(path: &Path, rows: &[ClassRisk]) -> Result<()> {
    let header: Vec<String> = CLUSTER_RISK_HEADER.iter().map(|s| s.to_string()).collect();
    write_csv(
        path,
        &header,
        rows.iter().map(|r| {
            vec![
                r.class_id.to_string(),
                r.n_proposals.to_string(),
                r.p_out_in_before.to_string(),
                r.p_out_in_after.to_string(),
                r.ncut_before.to_string(),
                r.ncut_after.to_string(),
            ]
        }),
    )
}
