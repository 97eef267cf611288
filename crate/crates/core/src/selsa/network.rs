use std::ops::Range;

use ndarray::{s, Array2, ArrayView2, Axis};

use super::ops::softmax_rows_array;
use super::{AffineTransform, SelsaParams};
use crate::error::{Result, SelsaError};
use crate::proposal::VideoSequence;

/// Whether the head aggregates across proposals or classifies each one alone.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Aggregation {
    /// `fc1 -> fc2 -> classifier`, the single-frame baseline.
    Bypass,
    /// `fc1 -> SELSA -> fc2 -> SELSA -> classifier` over the joint pool.
    Selsa,
}

/// Activations of one SELSA block, kept for the backward pass.
#[derive(Debug, Clone)]
struct BlockCache {
    refs: Array2<f64>,
    pool: Array2<f64>,
    queries: Array2<f64>,
    keys: Array2<f64>,
    weights: Array2<f64>,
}

#[derive(Debug, Clone)]
enum CacheState {
    Bypass {
        input: Array2<f64>,
        h1: Array2<f64>,
        h2: Array2<f64>,
    },
    Selsa {
        input: Array2<f64>,
        h1: Array2<f64>,
        block1: BlockCache,
        agg1: Array2<f64>,
        h2: Array2<f64>,
        block2: BlockCache,
        agg2: Array2<f64>,
    },
}

/// Everything the backward pass needs. Consumed by [`network_backward`], and
/// tied to the exact parameter values of the forward call.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    fingerprint: u64,
    ref_rows: Range<usize>,
    state: CacheState,
}

impl ForwardCache {
    pub fn ref_rows(&self) -> Range<usize> {
        self.ref_rows.clone()
    }

    /// Input features of the first SELSA block's pool (post `fc1`), if aggregating.
    pub fn first_block_input(&self) -> Option<&Array2<f64>> {
        match &self.state {
            CacheState::Selsa { h1, .. } => Some(h1),
            CacheState::Bypass { .. } => None,
        }
    }

    /// Aggregation weights of the first and second block, if aggregating.
    pub fn block_weights(&self) -> Option<(&Array2<f64>, &Array2<f64>)> {
        match &self.state {
            CacheState::Selsa { block1, block2, .. } => Some((&block1.weights, &block2.weights)),
            CacheState::Bypass { .. } => None,
        }
    }
}

fn relu(mut x: Array2<f64>) -> Array2<f64> {
    x.mapv_inplace(|v| v.max(0.0));
    x
}

fn relu_backward(activated: &Array2<f64>, mut grad: Array2<f64>) -> Array2<f64> {
    grad.zip_mut_with(activated, |g, &h| {
        if h <= 0.0 {
            *g = 0.0;
        }
    });
    grad
}

fn block_forward(
    refs: ArrayView2<f64>,
    pool: ArrayView2<f64>,
    phi: &AffineTransform,
    psi: &AffineTransform,
) -> Result<(Array2<f64>, BlockCache)> {
    let queries = phi.apply(refs)?;
    let keys = psi.apply(pool)?;
    let weights = softmax_rows_array(queries.dot(&keys.t()).view());
    let out = weights.dot(&pool);
    Ok((
        out,
        BlockCache {
            refs: refs.to_owned(),
            pool: pool.to_owned(),
            queries,
            keys,
            weights,
        },
    ))
}

/// Returns (d refs, d pool, grad phi, grad psi).
fn block_backward(
    cache: &BlockCache,
    d_out: ArrayView2<f64>,
    phi: &AffineTransform,
    psi: &AffineTransform,
) -> (Array2<f64>, Array2<f64>, AffineTransform, AffineTransform) {
    let a = &cache.weights;
    let d_weights = d_out.dot(&cache.pool.t());
    let mut d_pool = a.t().dot(&d_out);

    // softmax Jacobian, row by row: dS = A * (dA - <A, dA>)
    let mut d_sim = d_weights;
    for (mut ds, arow) in d_sim.axis_iter_mut(Axis(0)).zip(a.axis_iter(Axis(0))) {
        let inner = ds.dot(&arow);
        ds.zip_mut_with(&arow, |g, &w| *g = w * (*g - inner));
    }

    let d_queries = d_sim.dot(&cache.keys);
    let d_keys = d_sim.t().dot(&cache.queries);
    let (grad_phi, d_refs) = phi.backward(cache.refs.view(), d_queries.view());
    let (grad_psi, d_pool_keys) = psi.backward(cache.pool.view(), d_keys.view());
    d_pool += &d_pool_keys;
    (d_refs, d_pool, grad_phi, grad_psi)
}

/// Runs the head over a joint proposal set.
///
/// `input` holds every proposal of every pool frame (`M x d`); `ref_rows` selects
/// the reference frame's proposals inside it. Returns `n_ref x (C + 1)` scores.
pub fn forward(
    input: ArrayView2<f64>,
    ref_rows: Range<usize>,
    params: &SelsaParams,
    mode: Aggregation,
) -> Result<(Array2<f64>, ForwardCache)> {
    params.validate()?;
    if input.ncols() != params.feature_dim() {
        return Err(SelsaError::Config(format!(
            "features have dimension {}, parameters expect {}",
            input.ncols(),
            params.feature_dim()
        )));
    }
    if ref_rows.is_empty() || ref_rows.end > input.nrows() {
        return Err(SelsaError::Config(format!(
            "reference rows {ref_rows:?} not inside a pool of {} proposals",
            input.nrows()
        )));
    }

    let fingerprint = params.fingerprint();
    let (scores, state) = match mode {
        Aggregation::Bypass => {
            let x = input.slice(s![ref_rows.clone(), ..]).to_owned();
            let h1 = relu(params.fc1.apply(x.view())?);
            let h2 = relu(params.fc2.apply(h1.view())?);
            let scores = params.classifier.apply(h2.view())?;
            (scores, CacheState::Bypass { input: x, h1, h2 })
        }
        Aggregation::Selsa => {
            let h1 = relu(params.fc1.apply(input)?);
            let (agg1, block1) = block_forward(h1.view(), h1.view(), &params.phi1, &params.psi1)?;
            let h2 = relu(params.fc2.apply(agg1.view())?);
            let (agg2, block2) = block_forward(
                h2.slice(s![ref_rows.clone(), ..]),
                h2.view(),
                &params.phi2,
                &params.psi2,
            )?;
            let scores = params.classifier.apply(agg2.view())?;
            (
                scores,
                CacheState::Selsa {
                    input: input.to_owned(),
                    h1,
                    block1,
                    agg1,
                    h2,
                    block2,
                    agg2,
                },
            )
        }
    };
    Ok((
        scores,
        ForwardCache {
            fingerprint,
            ref_rows,
            state,
        },
    ))
}

/// Forward pass for one reference frame of a video with pool frames `omega`.
///
/// `omega` must contain `ref_frame` and no duplicates; proposals are concatenated
/// in the order given.
pub fn network_forward(
    video: &VideoSequence,
    ref_frame: usize,
    omega: &[usize],
    params: &SelsaParams,
    mode: Aggregation,
) -> Result<(Array2<f64>, ForwardCache)> {
    if omega.is_empty() {
        return Err(SelsaError::Config("empty pool frame set".into()));
    }
    if let Some(&bad) = omega.iter().find(|&&f| f >= video.len()) {
        return Err(SelsaError::Config(format!(
            "pool frame {bad} outside a video of {} frames",
            video.len()
        )));
    }
    let mut seen = omega.to_vec();
    seen.sort_unstable();
    seen.dedup();
    if seen.len() != omega.len() {
        return Err(SelsaError::Config(
            "pool frame set contains duplicates".into(),
        ));
    }
    let slot = omega.iter().position(|&f| f == ref_frame).ok_or_else(|| {
        SelsaError::Config(format!(
            "reference frame {ref_frame} is not in the pool frame set"
        ))
    })?;
    let n = video.proposals_per_frame();
    let input = video.joint_features(omega);
    forward(input.view(), slot * n..(slot + 1) * n, params, mode)
}

/// Exact gradients of a scalar loss w.r.t. every parameter, given `d loss / d scores`.
///
/// The cache is consumed; a cache whose parameters no longer match `params`
/// is rejected with [`SelsaError::StaleCache`].
pub fn network_backward(
    cache: ForwardCache,
    grad_scores: ArrayView2<f64>,
    params: &SelsaParams,
) -> Result<SelsaParams> {
    if cache.fingerprint != params.fingerprint() {
        return Err(SelsaError::StaleCache);
    }
    let n_ref = cache.ref_rows.len();
    if grad_scores.dim() != (n_ref, params.classifier.d_out()) {
        return Err(SelsaError::Config(format!(
            "score gradient has shape {:?}, expected ({n_ref}, {})",
            grad_scores.dim(),
            params.classifier.d_out()
        )));
    }

    let mut grads = SelsaParams::zeros(params.feature_dim(), params.sim_dim(), params.n_classes());
    match cache.state {
        CacheState::Bypass { input, h1, h2 } => {
            let (g_cls, d_h2) = params.classifier.backward(h2.view(), grad_scores);
            let d_z2 = relu_backward(&h2, d_h2);
            let (g_fc2, d_h1) = params.fc2.backward(h1.view(), d_z2.view());
            let d_z1 = relu_backward(&h1, d_h1);
            let (g_fc1, _) = params.fc1.backward(input.view(), d_z1.view());
            grads.classifier = g_cls;
            grads.fc2 = g_fc2;
            grads.fc1 = g_fc1;
        }
        CacheState::Selsa {
            input,
            h1,
            block1,
            agg1,
            h2,
            block2,
            agg2,
        } => {
            let (g_cls, d_agg2) = params.classifier.backward(agg2.view(), grad_scores);
            let (d_refs2, mut d_h2, g_phi2, g_psi2) =
                block_backward(&block2, d_agg2.view(), &params.phi2, &params.psi2);
            let mut ref_block = d_h2.slice_mut(s![cache.ref_rows.clone(), ..]);
            ref_block += &d_refs2;
            let d_z2 = relu_backward(&h2, d_h2);
            let (g_fc2, d_agg1) = params.fc2.backward(agg1.view(), d_z2.view());
            let (d_refs1, d_pool1, g_phi1, g_psi1) =
                block_backward(&block1, d_agg1.view(), &params.phi1, &params.psi1);
            let d_h1 = d_refs1 + d_pool1;
            let d_z1 = relu_backward(&h1, d_h1);
            let (g_fc1, _) = params.fc1.backward(input.view(), d_z1.view());
            grads = SelsaParams {
                fc1: g_fc1,
                fc2: g_fc2,
                phi1: g_phi1,
                psi1: g_psi1,
                phi2: g_phi2,
                psi2: g_psi2,
                classifier: g_cls,
            };
        }
    }
    Ok(grads)
}
