use ndarray::{Array2, ArrayView2, Axis};

use super::AffineTransform;
use crate::error::{Result, SelsaError};

/// Raw pairwise similarities, rows = reference proposals, columns = pool proposals.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix(pub Array2<f64>);

/// Row-stochastic aggregation weights produced by [`softmax_rows`].
#[derive(Debug, Clone, PartialEq)]
pub struct AggregationWeights(Array2<f64>);

impl AggregationWeights {
    pub fn as_array(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn into_array(self) -> Array2<f64> {
        self.0
    }
}

/// `S[i, j] = phi(ref_i) . psi(pool_j)`.
pub fn similarity_matrix(
    refs: ArrayView2<f64>,
    pool: ArrayView2<f64>,
    phi: &AffineTransform,
    psi: &AffineTransform,
) -> Result<SimilarityMatrix> {
    if refs.nrows() == 0 || pool.nrows() == 0 {
        return Err(SelsaError::Config(
            "similarity needs at least one reference and one pool proposal".into(),
        ));
    }
    if phi.d_out() != psi.d_out() {
        return Err(SelsaError::Config(format!(
            "phi and psi output dimensions differ: {} vs {}",
            phi.d_out(),
            psi.d_out()
        )));
    }
    let q = phi.apply(refs)?;
    let k = psi.apply(pool)?;
    Ok(SimilarityMatrix(q.dot(&k.t())))
}

/// Softmax over each row, across every pool proposal jointly. Max-subtracted.
pub fn softmax_rows(s: &SimilarityMatrix) -> AggregationWeights {
    AggregationWeights(softmax_rows_array(s.0.view()))
}

pub(crate) fn softmax_rows_array(s: ArrayView2<f64>) -> Array2<f64> {
    let mut out = s.to_owned();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum: f64 = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

/// Row `i` of the output is `sum_j w[i, j] * pool[j]`.
pub fn aggregate(w: &AggregationWeights, pool: ArrayView2<f64>) -> Result<Array2<f64>> {
    if w.0.ncols() != pool.nrows() {
        return Err(SelsaError::Config(format!(
            "aggregation weights have {} columns but the pool has {} proposals",
            w.0.ncols(),
            pool.nrows()
        )));
    }
    Ok(w.0.dot(&pool))
}
