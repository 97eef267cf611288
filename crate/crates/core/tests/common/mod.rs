#![allow(dead_code)]

use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use selsa::eval::{best_linkage, LinkGraph};
use selsa::proposal::{BoundingBox, Frame, Motion, Proposal, VideoSequence};
use selsa::selsa::{
    aggregate, network_backward, network_forward, softmax_rows, AffineTransform, Aggregation,
    SelsaParams, SimilarityMatrix,
};
use selsa::spectral::{
    ncut, stationary_distribution, stochastic_matrix, transition_probability, AffinityGraph,
    Partition, Side,
};
use selsa::training::cross_entropy;

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// A video of Gaussian features with random labels, background included.
pub fn random_video(
    rng: &mut ChaCha8Rng,
    n_frames: usize,
    per_frame: usize,
    dim: usize,
    n_classes: usize,
) -> VideoSequence {
    let frames = (0..n_frames)
        .map(|t| Frame {
            index: t,
            proposals: (0..per_frame)
                .map(|_| Proposal {
                    feature: (0..dim).map(|_| normal(rng)).collect(),
                    bbox: BoundingBox::new(0.0, 0.0, 1.0, 1.0).unwrap(),
                    frame_index: t,
                    class_id: rng.random_range(0..=n_classes),
                    object_id: -1,
                    motion: Motion::Slow,
                })
                .collect(),
            objects: Vec::new(),
        })
        .collect();
    VideoSequence::new(dim, n_classes, frames).unwrap()
}

/// Parameters with every entry, biases included, drawn from `N(0, scale^2)`.
pub fn random_params(
    rng: &mut ChaCha8Rng,
    dim: usize,
    sim_dim: usize,
    n_classes: usize,
    scale: f64,
) -> SelsaParams {
    let mut p = SelsaParams::zeros(dim, sim_dim, n_classes);
    for (_, t) in p.transforms_mut() {
        t.weight.mapv_inplace(|_| scale * normal(rng));
        t.bias.mapv_inplace(|_| scale * normal(rng));
    }
    p
}

fn affine(t: &AffineTransform, x: &[f64]) -> Vec<f64> {
    (0..t.weight.nrows())
        .map(|o| t.bias[o] + (0..x.len()).map(|i| t.weight[[o, i]] * x[i]).sum::<f64>())
        .collect()
}

fn relu(v: Vec<f64>) -> Vec<f64> {
    v.into_iter().map(|x| x.max(0.0)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Softmax-weighted sum over `pool` for each of `refs`, written with plain loops.
fn attend(
    refs: &[Vec<f64>],
    pool: &[Vec<f64>],
    phi: &AffineTransform,
    psi: &AffineTransform,
) -> Vec<Vec<f64>> {
    let keys: Vec<Vec<f64>> = pool.iter().map(|x| affine(psi, x)).collect();
    refs.iter()
        .map(|r| {
            let q = affine(phi, r);
            let logits: Vec<f64> = keys.iter().map(|k| dot(&q, k)).collect();
            let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
            let z: f64 = e.iter().sum();
            let mut out = vec![0.0; pool[0].len()];
            for (w, x) in e.iter().zip(pool) {
                for (o, v) in out.iter_mut().zip(x) {
                    *o += w / z * v;
                }
            }
            out
        })
        .collect()
}

/// Independent forward pass of the aggregating head over `input` rows, with
/// the reference proposals at `ref_rows`.
pub fn oracle_forward(
    input: &Array2<f64>,
    ref_rows: std::ops::Range<usize>,
    p: &SelsaParams,
    aggregate: bool,
) -> Vec<Vec<f64>> {
    let rows: Vec<Vec<f64>> = input.rows().into_iter().map(|r| r.to_vec()).collect();
    if !aggregate {
        return rows[ref_rows]
            .iter()
            .map(|x| {
                affine(
                    &p.classifier,
                    &relu(affine(&p.fc2, &relu(affine(&p.fc1, x)))),
                )
            })
            .collect();
    }
    let h1: Vec<Vec<f64>> = rows.iter().map(|x| relu(affine(&p.fc1, x))).collect();
    let a1 = attend(&h1, &h1, &p.phi1, &p.psi1);
    let h2: Vec<Vec<f64>> = a1.iter().map(|x| relu(affine(&p.fc2, x))).collect();
    let a2 = attend(&h2[ref_rows], &h2, &p.phi2, &p.psi2);
    a2.iter().map(|x| affine(&p.classifier, x)).collect()
}

/// Random symmetric non-negative weights with a positive diagonal.
pub fn random_graph(rng: &mut ChaCha8Rng, n: usize) -> AffinityGraph {
    let mut w = Array2::zeros((n, n));
    for i in 0..n {
        w[[i, i]] = rng.random_range(0.1..1.0);
        for j in 0..i {
            let v = if rng.random_bool(0.2) {
                0.0
            } else {
                rng.random_range(0.0..1.0)
            };
            w[[i, j]] = v;
            w[[j, i]] = v;
        }
    }
    AffinityGraph::new(w).unwrap()
}

/// A proper random subset: non-empty, not everything.
pub fn random_partition(rng: &mut ChaCha8Rng, n: usize) -> (Partition, Vec<bool>) {
    loop {
        let mask: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
        let k = mask.iter().filter(|&&b| b).count();
        if k > 0 && k < n {
            return (Partition::from_mask(mask.clone()).unwrap(), mask);
        }
    }
}

/// `cut(A, B) / vol(A) + cut(A, B) / vol(B)` by summing edge weights.
pub fn brute_force_ncut(w: &Array2<f64>, in_a: &[bool]) -> f64 {
    let n = in_a.len();
    let (mut cut, mut vol_a, mut vol_b) = (0.0, 0.0, 0.0);
    for i in 0..n {
        for j in 0..n {
            let v = w[[i, j]];
            if in_a[i] {
                vol_a += v;
            } else {
                vol_b += v;
            }
            if in_a[i] && !in_a[j] {
                cut += v;
            }
        }
    }
    cut / vol_a + cut / vol_b
}

/// Random link graph with up to `max_frames` frames of up to `max_boxes` boxes
/// on a small grid, so that links are common.
pub fn random_link_graph(rng: &mut ChaCha8Rng, max_frames: usize, max_boxes: usize) -> LinkGraph {
    let n_frames = rng.random_range(1..=max_frames);
    let frames = (0..n_frames)
        .map(|_| {
            let n = rng.random_range(0..=max_boxes);
            (0..n)
                .map(|_| {
                    let x = rng.random_range(0..3) as f64;
                    let y = rng.random_range(0..3) as f64;
                    let b = BoundingBox::new(x, y, x + 2.0, y + 2.0).unwrap();
                    (b, rng.random_range(0.01..1.0))
                })
                .collect()
        })
        .collect();
    LinkGraph {
        frames,
        link_iou: 0.3,
    }
}

/// Highest total score over every run of linked, alive boxes in consecutive
/// frames, with the path that attains it, by exhaustive enumeration.
pub fn brute_force_best_path(
    g: &LinkGraph,
    alive: &[Vec<bool>],
) -> Option<(usize, Vec<usize>, f64)> {
    fn extend(
        g: &LinkGraph,
        alive: &[Vec<bool>],
        start: usize,
        path: &mut Vec<usize>,
        total: f64,
        best: &mut Option<(usize, Vec<usize>, f64)>,
    ) {
        if best.as_ref().is_none_or(|b| total > b.2) {
            *best = Some((start, path.clone(), total));
        }
        let t = start + path.len() - 1;
        if t + 1 >= g.frames.len() {
            return;
        }
        let last = *path.last().unwrap();
        for j in 0..g.frames[t + 1].len() {
            if alive[t + 1][j] && g.linked(t, last, j) {
                path.push(j);
                extend(g, alive, start, path, total + g.frames[t + 1][j].1, best);
                path.pop();
            }
        }
    }
    let mut best = None;
    for t in 0..g.frames.len() {
        for i in 0..g.frames[t].len() {
            if alive[t][i] {
                extend(g, alive, t, &mut vec![i], g.frames[t][i].1, &mut best);
            }
        }
    }
    best
}

/// Largest deviation found by the exact identity checks: softmax row sums,
/// the convex-hull bound on aggregated norms, NCut against brute force and as
/// the sum of both cross-side transition probabilities, and stationarity.
pub fn identity_errors(n_graphs: usize) -> IdentityErrors {
    let mut e = IdentityErrors::default();
    for seed in 0..n_graphs as u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n_ref = rng.random_range(1..=6);
        let n_pool = rng.random_range(1..=10);
        let dim = rng.random_range(1..=5);
        let s = Array2::from_shape_fn((n_ref, n_pool), |_| 5.0 * normal(&mut rng));
        let pool = Array2::from_shape_fn((n_pool, dim), |_| normal(&mut rng));
        let w = softmax_rows(&SimilarityMatrix(s));
        for row in w.as_array().rows() {
            e.softmax_row_sum = e.softmax_row_sum.max((row.sum() - 1.0).abs());
        }
        let max_norm = pool
            .rows()
            .into_iter()
            .map(|r| r.dot(&r).sqrt())
            .fold(0.0, f64::max);
        let out = aggregate(&w, pool.view()).unwrap();
        for r in out.rows() {
            e.hull_excess = e.hull_excess.max(r.dot(&r).sqrt() - max_norm);
        }

        let n = rng.random_range(2..=10);
        let g = random_graph(&mut rng, n);
        let (p, mask) = random_partition(&mut rng, n);
        let cut = ncut(&g, &p).unwrap();
        let sum = transition_probability(&g, &p, Side::A, Side::Complement).unwrap()
            + transition_probability(&g, &p, Side::Complement, Side::A).unwrap();
        e.ncut_vs_brute_force = e
            .ncut_vs_brute_force
            .max((cut - brute_force_ncut(g.weights(), &mask)).abs());
        e.ncut_vs_transitions = e.ncut_vs_transitions.max((cut - sum).abs());
        let t = stochastic_matrix(&g).unwrap();
        let pi = stationary_distribution(&g).unwrap();
        let moved = pi.dot(&t);
        e.stationarity = e
            .stationarity
            .max((&moved - &pi).iter().fold(0.0, |m, v| m.max(v.abs())));
    }
    e
}

#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityErrors {
    pub softmax_row_sum: f64,
    pub hull_excess: f64,
    pub ncut_vs_brute_force: f64,
    pub ncut_vs_transitions: f64,
    pub stationarity: f64,
}

impl IdentityErrors {
    pub fn within(&self, tol: f64) -> bool {
        self.softmax_row_sum <= tol
            && self.hull_excess <= tol
            && self.ncut_vs_brute_force <= tol
            && self.ncut_vs_transitions <= tol
            && self.stationarity <= tol
    }
}

fn loss_at(
    video: &VideoSequence,
    omega: &[usize],
    p: &SelsaParams,
    mode: Aggregation,
    labels: &[usize],
) -> f64 {
    let (scores, _) = network_forward(video, omega[0], omega, p, mode).unwrap();
    cross_entropy(scores.view(), labels).unwrap().0
}

/// Worst relative error between analytic and central-difference gradients of
/// the cross-entropy loss, over every parameter of one random instance.
pub fn gradient_error(seed: u64, mode: Aggregation) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = rng.random_range(2..=8);
    let sim_dim = rng.random_range(1..=dim);
    let n_classes = rng.random_range(2..=4);
    let per_frame = rng.random_range(1..=4);
    let k = rng.random_range(1..=3);
    let video = random_video(&mut rng, k, per_frame, dim, n_classes);
    let params = random_params(&mut rng, dim, sim_dim, n_classes, 0.7);
    let omega: Vec<usize> = (0..k).collect();
    let labels: Vec<usize> = video.frames[0]
        .proposals
        .iter()
        .map(|p| p.class_id)
        .collect();

    let (scores, cache) = network_forward(&video, 0, &omega, &params, mode).unwrap();
    let (_, d_scores) = cross_entropy(scores.view(), &labels).unwrap();
    let grads = network_backward(cache, d_scores.view(), &params).unwrap();

    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let analytic: Vec<(&str, &AffineTransform)> = grads.transforms().to_vec();
    for (slot, (name, g)) in analytic.iter().enumerate() {
        let entries = g.weight.len() + g.bias.len();
        for e in 0..entries {
            let nudge = |delta: f64| {
                let mut p = params.clone();
                let (_, t) = p.transforms_mut().into_iter().nth(slot).unwrap();
                if e < t.weight.len() {
                    let (r, c) = (e / t.weight.ncols(), e % t.weight.ncols());
                    t.weight[[r, c]] += delta;
                } else {
                    t.bias[e - t.weight.len()] += delta;
                }
                loss_at(&video, &omega, &p, mode, &labels)
            };
            let numeric = (nudge(h) - nudge(-h)) / (2.0 * h);
            let exact = if e < g.weight.len() {
                g.weight[[e / g.weight.ncols(), e % g.weight.ncols()]]
            } else {
                g.bias[e - g.weight.len()]
            };
            let rel = (exact - numeric).abs() / exact.abs().max(numeric.abs()).max(1e-6);
            if rel > worst {
                worst = rel;
                if rel > 1e-3 {
                    eprintln!("seed {seed} {name}[{e}]: analytic {exact:e} numeric {numeric:e}");
                }
            }
        }
    }
    worst
}

/// Largest absolute gap between the crate's forward pass and the
/// straight-line oracle on one random instance.
pub fn forward_gap(seed: u64, mode: Aggregation) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = rng.random_range(1..=8);
    let sim_dim = rng.random_range(1..=8);
    let n_classes = rng.random_range(2..=5);
    let per_frame = rng.random_range(1..=5);
    let k = rng.random_range(1..=4);
    let video = random_video(&mut rng, k, per_frame, dim, n_classes);
    let params = random_params(&mut rng, dim, sim_dim, n_classes, 0.8);
    let reference = rng.random_range(0..k);
    let mut omega: Vec<usize> = (0..k).collect();
    omega.rotate_left(rng.random_range(0..k));
    let (scores, _) = network_forward(&video, reference, &omega, &params, mode).unwrap();
    let slot = omega.iter().position(|&f| f == reference).unwrap();
    let input = video.joint_features(&omega);
    let expected = oracle_forward(
        &input,
        slot * per_frame..(slot + 1) * per_frame,
        &params,
        mode == Aggregation::Selsa,
    );
    let mut gap: f64 = 0.0;
    for (i, row) in expected.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            gap = gap.max((scores[[i, j]] - v).abs());
        }
    }
    gap
}

/// Whether the dynamic program picks the exhaustive optimum on one random
/// instance, with a random set of boxes already consumed.
pub fn linkage_agrees(seed: u64) -> bool {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = random_link_graph(&mut rng, 4, 3);
    let alive: Vec<Vec<bool>> = g
        .frames
        .iter()
        .map(|f| f.iter().map(|_| rng.random_bool(0.85)).collect())
        .collect();
    match (best_linkage(&g, &alive), brute_force_best_path(&g, &alive)) {
        (None, None) => true,
        (Some(dp), Some((start, boxes, total))) => {
            (dp.total - total).abs() < 1e-12 && dp.start == start && dp.boxes == boxes
        }
        _ => false,
    }
}
