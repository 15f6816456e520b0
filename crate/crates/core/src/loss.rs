//! Pure-numeric training objectives: in-batch contrastive loss, answer
//! generation NLL, the retrieval distribution, the cross-attention target
//! distribution, the stop-gradient KL retriever loss, and their end-to-end
//! combination.
//!
//! Every loss returns its analytic gradient so the whole module can be
//! verified against central finite differences. All math is `f64`, log base e.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LossError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite input at ({row}, {col})")]
    NonFinite { row: usize, col: usize },
    #[error("target token {token} out of vocabulary range {vocab}")]
    TargetOutOfRange { token: usize, vocab: usize },
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("invalid passage boundaries: {0}")]
    BadBoundaries(String),
    #[error("distribution invariant violated: {0}")]
    BadDistribution(String),
}

/// Dense row-major matrix of `f64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self, LossError> {
        let n = rows.len();
        if n == 0 {
            return Err(LossError::Empty("matrix rows"));
        }
        let d = rows[0].len();
        if rows.iter().any(|r| r.len() != d) {
            return Err(LossError::ShapeMismatch("ragged rows".into()));
        }
        Ok(Mat {
            rows: n,
            cols: d,
            data: rows.into_iter().flatten().collect(),
        })
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, LossError> {
        if data.len() != rows * cols {
            return Err(LossError::ShapeMismatch(format!(
                "{} values for {}x{} matrix",
                data.len(),
                rows,
                cols
            )));
        }
        Ok(Mat { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn at_mut(&mut self, r: usize, c: usize) -> &mut f64 {
        &mut self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    fn check_finite(&self) -> Result<(), LossError> {
        for r in 0..self.rows {
            for c in 0..self.cols {
                if !self.at(r, c).is_finite() {
                    return Err(LossError::NonFinite { row: r, col: c });
                }
            }
        }
        Ok(())
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Numerically stable softmax.
fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// A probability distribution over K items: nonnegative, sums to 1 ± 1e-6.
#[derive(Debug, Clone, PartialEq)]
pub struct Distribution {
    probs: Vec<f64>,
}

impl Distribution {
    pub fn new(probs: Vec<f64>) -> Result<Self, LossError> {
        if probs.is_empty() {
            return Err(LossError::Empty("distribution"));
        }
        if let Some(p) = probs.iter().find(|p| !p.is_finite() || **p < 0.0) {
            return Err(LossError::BadDistribution(format!("entry {p}")));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(LossError::BadDistribution(format!("sum {sum}")));
        }
        Ok(Distribution { probs })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }
}

/// Loss value plus analytic gradients for the in-batch contrastive objective.
#[derive(Debug, Clone)]
pub struct ContrastiveGrad {
    pub loss: f64,
    pub grad_queries: Mat,
    pub grad_passages: Mat,
}

/// In-batch negative contrastive loss.
///
/// `queries` and `passages` are N x D with row i of `passages` the positive
/// for row i of `queries`; every other row in the batch serves as a negative.
/// Returns the mean over rows of `-log softmax_j(q_i . p_j)[i]` and the
/// gradients with respect to both matrices.
pub fn contrastive_loss(queries: &Mat, passages: &Mat) -> Result<ContrastiveGrad, LossError> {
    if queries.rows() != passages.rows() || queries.cols() != passages.cols() {
        return Err(LossError::ShapeMismatch(format!(
            "queries {}x{} vs passages {}x{}",
            queries.rows(),
            queries.cols(),
            passages.rows(),
            passages.cols()
        )));
    }
    queries.check_finite()?;
    passages.check_finite()?;
    let n = queries.rows();
    let d = queries.cols();

    let mut loss = 0.0;
    let mut grad_q = Mat::zeros(n, d);
    let mut grad_p = Mat::zeros(n, d);
    for i in 0..n {
        let scores: Vec<f64> = (0..n).map(|j| dot(queries.row(i), passages.row(j))).collect();
        let probs = softmax(&scores);
        loss -= probs[i].ln();
        // d loss_i / d score_ij = (p_ij - delta_ij) / N
        for j in 0..n {
            let g = (probs[j] - if i == j { 1.0 } else { 0.0 }) / n as f64;
            for k in 0..d {
                *grad_q.at_mut(i, k) += g * passages.at(j, k);
                *grad_p.at_mut(j, k) += g * queries.at(i, k);
            }
        }
    }
    Ok(ContrastiveGrad {
        loss: loss / n as f64,
        grad_queries: grad_q,
        grad_passages: grad_p,
    })
}

/// NLL value plus its gradient with respect to the logits.
#[derive(Debug, Clone)]
pub struct NllGrad {
    pub loss: f64,
    pub grad_logits: Mat,
}

/// Answer-generation negative log likelihood: sum over timesteps of
/// `-log softmax(logits_t)[target_t]`.
pub fn nll_loss(token_logits: &Mat, target_tokens: &[usize]) -> Result<NllGrad, LossError> {
    if target_tokens.len() != token_logits.rows() {
        return Err(LossError::ShapeMismatch(format!(
            "{} targets for {} logit rows",
            target_tokens.len(),
            token_logits.rows()
        )));
    }
    token_logits.check_finite()?;
    let vocab = token_logits.cols();
    if let Some(&bad) = target_tokens.iter().find(|&&t| t >= vocab) {
        return Err(LossError::TargetOutOfRange { token: bad, vocab });
    }

    let mut loss = 0.0;
    let mut grad = Mat::zeros(token_logits.rows(), vocab);
    for (t, &target) in target_tokens.iter().enumerate() {
        let probs = softmax(token_logits.row(t));
        loss -= probs[target].ln();
        for v in 0..vocab {
            *grad.at_mut(t, v) = probs[v] - if v == target { 1.0 } else { 0.0 };
        }
    }
    Ok(NllGrad { loss, grad_logits: grad })
}

/// Retrieval distribution: softmax over the query's dot products with each
/// candidate passage embedding.
pub fn p_ret(query: &[f64], candidates: &Mat) -> Result<Distribution, LossError> {
    if query.len() != candidates.cols() {
        return Err(LossError::ShapeMismatch(format!(
            "query dim {} vs candidate dim {}",
            query.len(),
            candidates.cols()
        )));
    }
    candidates.check_finite()?;
    let scores: Vec<f64> = (0..candidates.rows())
        .map(|j| dot(query, candidates.row(j)))
        .collect();
    Distribution::new(softmax(&scores))
}

/// Cross-attention target distribution over passages.
///
/// `attention` is H x T_total: per-head attention mass of the first output
/// token over the concatenated passage tokens at the last decoder layer.
/// `boundaries` has K+1 strictly increasing offsets partitioning the token
/// axis into K passages. Each head row should sum to 1; rows off by more than
/// 1e-4 are renormalized with a warning. Passage mass is summed per head and
/// averaged over heads.
pub fn p_ca(attention: &Mat, boundaries: &[usize]) -> Result<Distribution, LossError> {
    attention.check_finite()?;
    let t_total = attention.cols();
    if boundaries.len() < 2 {
        return Err(LossError::BadBoundaries("need at least 2 offsets".into()));
    }
    if boundaries[0] != 0 || *boundaries.last().unwrap() != t_total {
        return Err(LossError::BadBoundaries(format!(
            "offsets must start at 0 and end at {t_total}, got {boundaries:?}"
        )));
    }
    if boundaries.windows(2).any(|w| w[0] >= w[1]) {
        return Err(LossError::BadBoundaries(format!(
            "offsets must be strictly increasing, got {boundaries:?}"
        )));
    }
    let heads = attention.rows();
    if heads == 0 {
        return Err(LossError::Empty("attention heads"));
    }
    let k = boundaries.len() - 1;

    let mut probs = vec![0.0; k];
    for h in 0..heads {
        let row = attention.row(h);
        if row.iter().any(|v| *v < 0.0) {
            return Err(LossError::BadDistribution(format!(
                "negative attention weight in head {h}"
            )));
        }
        let sum: f64 = row.iter().sum();
        if sum <= 0.0 {
            return Err(LossError::BadDistribution(format!("head {h} sums to {sum}")));
        }
        let scale = if (sum - 1.0).abs() > 1e-4 {
            log::warn!("attention head {h} sums to {sum}; renormalizing");
            1.0 / sum
        } else {
            // Exact per-head renormalization keeps the output summing to 1.
            1.0 / sum
        };
        for j in 0..k {
            let mass: f64 = row[boundaries[j]..boundaries[j + 1]].iter().sum();
            probs[j] += mass * scale / heads as f64;
        }
    }
    Distribution::new(probs)
}

/// KL value plus its gradient, honoring the stop-gradient contract: the
/// gradient with respect to the target (`p_ca`) side is identically zero.
#[derive(Debug, Clone)]
pub struct KlGrad {
    pub loss: f64,
    /// d loss / d p_ret[k] = ln(p_ret[k] / p_ca[k]) + 1.
    pub grad_p_ret: Vec<f64>,
    /// Always zero: the target distribution is stop-gradient.
    pub grad_p_ca: Vec<f64>,
}

const KL_EPS: f64 = 1e-12;

/// Floor entries at `KL_EPS` and renormalize, preventing log(0) on the target.
fn smooth(probs: &[f64]) -> Vec<f64> {
    let floored: Vec<f64> = probs.iter().map(|p| p.max(KL_EPS)).collect();
    let sum: f64 = floored.iter().sum();
    floored.into_iter().map(|p| p / sum).collect()
}

/// Retriever loss: `KL(p_ret || p_ca)` with gradient flowing only through
/// `p_ret`. Only the target side is epsilon-smoothed; the `p_ret` side is
/// used as given, with `0 * log 0 = 0`.
pub fn kl_retriever_loss(p_ret: &Distribution, p_ca: &Distribution) -> Result<KlGrad, LossError> {
    if p_ret.len() != p_ca.len() {
        return Err(LossError::ShapeMismatch(format!(
            "p_ret has {} entries, p_ca has {}",
            p_ret.len(),
            p_ca.len()
        )));
    }
    let p = p_ret.probs();
    let q = smooth(p_ca.probs());
    let mut loss = 0.0;
    let mut grad = vec![0.0; p.len()];
    for k in 0..p.len() {
        if p[k] > 0.0 {
            loss += p[k] * (p[k] / q[k]).ln();
        }
        grad[k] = (p[k].max(KL_EPS) / q[k]).ln() + 1.0;
    }
    Ok(KlGrad {
        loss,
        grad_p_ret: grad,
        grad_p_ca: vec![0.0; p.len()],
    })
}

/// Inputs to the end-to-end loss for one training example.
#[derive(Debug, Clone)]
pub struct LossBatch {
    /// Query embedding, dimension D.
    pub query: Vec<f64>,
    /// K x D candidate passage embeddings returned for the query.
    pub candidates: Mat,
    /// T x V decoder logits for the answer tokens.
    pub token_logits: Mat,
    /// T target token ids.
    pub target_tokens: Vec<usize>,
    /// H x T_total cross-attention weights (first output token, last layer).
    pub attention: Mat,
    /// K+1 offsets partitioning T_total into passages.
    pub boundaries: Vec<usize>,
}

/// End-to-end gradients: the retriever KL term back-propagates into the query
/// and candidate embeddings through `p_ret` only; the generation NLL term
/// back-propagates into the logits.
#[derive(Debug, Clone)]
pub struct E2eGrad {
    pub loss: f64,
    pub retriever_loss: f64,
    pub generation_loss: f64,
    pub grad_query: Vec<f64>,
    pub grad_candidates: Mat,
    pub grad_logits: Mat,
}

/// Combined loss: `kl_retriever_loss(p_ret, p_ca) + nll_loss`.
pub fn e2e_loss(batch: &LossBatch) -> Result<f64, LossError> {
    Ok(e2e_loss_with_grad(batch)?.loss)
}

pub fn e2e_loss_with_grad(batch: &LossBatch) -> Result<E2eGrad, LossError> {
    if batch.candidates.rows() + 1 != batch.boundaries.len() {
        return Err(LossError::ShapeMismatch(format!(
            "{} candidates but {} boundary offsets",
            batch.candidates.rows(),
            batch.boundaries.len()
        )));
    }
    let retrieval = p_ret(&batch.query, &batch.candidates)?;
    let target = p_ca(&batch.attention, &batch.boundaries)?;
    let kl = kl_retriever_loss(&retrieval, &target)?;
    let nll = nll_loss(&batch.token_logits, &batch.target_tokens)?;

    // Chain the KL gradient through the softmax that produced p_ret:
    // d loss / d score_m = p_m * (g_m - sum_k g_k p_k), g = grad wrt probs.
    let probs = retrieval.probs();
    let g_dot_p: f64 = kl
        .grad_p_ret
        .iter()
        .zip(probs)
        .map(|(g, p)| g * p)
        .sum();
    let d = batch.query.len();
    let k = batch.candidates.rows();
    let mut grad_query = vec![0.0; d];
    let mut grad_candidates = Mat::zeros(k, d);
    for m in 0..k {
        let g_score = probs[m] * (kl.grad_p_ret[m] - g_dot_p);
        for c in 0..d {
            grad_query[c] += g_score * batch.candidates.at(m, c);
            *grad_candidates.at_mut(m, c) = g_score * batch.query[c];
        }
    }

    Ok(E2eGrad {
        loss: kl.loss + nll.loss,
        retriever_loss: kl.loss,
        generation_loss: nll.loss,
        grad_query,
        grad_candidates,
        grad_logits: nll.grad_logits,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn random_mat(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Mat {
        let data: Vec<f64> = (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Mat::from_vec(rows, cols, data).unwrap()
    }

    /// Central finite difference of `f` with respect to one slot of `x`.
    fn central_diff(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], i: usize, h: f64) -> f64 {
        let mut hi = x.to_vec();
        let mut lo = x.to_vec();
        hi[i] += h;
        lo[i] -= h;
        (f(&hi) - f(&lo)) / (2.0 * h)
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1.0)
    }

    #[test]
    fn contrastive_single_example_is_zero() {
        let q = Mat::from_rows(vec![vec![0.3, -0.7]]).unwrap();
        let p = Mat::from_rows(vec![vec![1.1, 0.2]]).unwrap();
        let out = contrastive_loss(&q, &p).unwrap();
        assert_eq!(out.loss, 0.0);
    }

    #[test]
    fn contrastive_matches_hand_computed_two_by_two() {
        // Score matrix [[2,0],[0,2]]: per-example loss log(1 + e^-2).
        let q = Mat::from_rows(vec![vec![2.0, 0.0], vec![0.0, 2.0]]).unwrap();
        let p = Mat::from_rows(vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let out = contrastive_loss(&q, &p).unwrap();
        let expected = (1.0 + (-2.0f64).exp()).ln();
        assert!((out.loss - expected).abs() < 1e-12);
        assert!((expected - 0.126928).abs() < 1e-6);
    }

    #[test]
    fn contrastive_rejects_nan() {
        let q = Mat::from_rows(vec![vec![f64::NAN, 0.0]]).unwrap();
        let p = Mat::from_rows(vec![vec![1.0, 0.0]]).unwrap();
        assert!(matches!(
            contrastive_loss(&q, &p),
            Err(LossError::NonFinite { .. })
        ));
    }

    #[test]
    fn contrastive_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let q = random_mat(&mut rng, 8, 16);
        let p = random_mat(&mut rng, 8, 16);
        let out = contrastive_loss(&q, &p).unwrap();
        let mut f_q = |flat: &[f64]| {
            let qm = Mat::from_vec(8, 16, flat.to_vec()).unwrap();
            contrastive_loss(&qm, &p).unwrap().loss
        };
        for i in (0..8 * 16).step_by(13) {
            let num = central_diff(&mut f_q, q.data(), i, 1e-5);
            assert!(rel_err(out.grad_queries.data()[i], num) < 1e-4);
        }
        let mut f_p = |flat: &[f64]| {
            let pm = Mat::from_vec(8, 16, flat.to_vec()).unwrap();
            contrastive_loss(&q, &pm).unwrap().loss
        };
        for i in (0..8 * 16).step_by(17) {
            let num = central_diff(&mut f_p, p.data(), i, 1e-5);
            assert!(rel_err(out.grad_passages.data()[i], num) < 1e-4);
        }
    }

    #[test]
    fn nll_saturated_logits_vanish() {
        let logits = Mat::from_rows(vec![vec![50.0, 0.0, 0.0]]).unwrap();
        let out = nll_loss(&logits, &[0]).unwrap();
        assert!(out.loss < 1e-12);
    }

    #[test]
    fn nll_uniform_logits_closed_form() {
        let logits = Mat::zeros(2, 4);
        let out = nll_loss(&logits, &[1, 3]).unwrap();
        assert!((out.loss - 2.0 * 4.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn nll_rejects_out_of_range_target() {
        let logits = Mat::zeros(1, 4);
        assert!(matches!(
            nll_loss(&logits, &[4]),
            Err(LossError::TargetOutOfRange { .. })
        ));
    }

    #[test]
    fn p_ret_hand_softmax() {
        // Scores [1, 0] -> [e/(e+1), 1/(e+1)].
        let q = vec![1.0];
        let cands = Mat::from_rows(vec![vec![1.0], vec![0.0]]).unwrap();
        let dist = p_ret(&q, &cands).unwrap();
        let e = std::f64::consts::E;
        assert!((dist.probs()[0] - e / (e + 1.0)).abs() < 1e-12);
        assert!((dist.probs()[0] - 0.7311).abs() < 1e-4);
        assert!((dist.probs()[1] - 0.2689).abs() < 1e-4);
    }

    #[test]
    fn p_ret_uniform_when_candidates_identical() {
        let q = vec![0.4, -0.2];
        let cands = Mat::from_rows(vec![vec![1.0, 2.0]; 5]).unwrap();
        let dist = p_ret(&q, &cands).unwrap();
        for p in dist.probs() {
            assert!((p - 0.2).abs() < 1e-12);
        }
    }

    #[test]
    fn p_ca_single_passage_takes_all_mass() {
        let att = Mat::from_rows(vec![vec![0.25, 0.25, 0.5]]).unwrap();
        let dist = p_ca(&att, &[0, 3]).unwrap();
        assert_eq!(dist.probs(), &[1.0]);
    }

    #[test]
    fn p_ca_manual_two_passages() {
        // Token weights [0.2, 0.3 | 0.5] with boundary after token 2.
        let att = Mat::from_rows(vec![vec![0.2, 0.3, 0.5]]).unwrap();
        let dist = p_ca(&att, &[0, 2, 3]).unwrap();
        assert!((dist.probs()[0] - 0.5).abs() < 1e-12);
        assert!((dist.probs()[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn p_ca_averages_heads() {
        let att = Mat::from_rows(vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let dist = p_ca(&att, &[0, 1, 2]).unwrap();
        assert!((dist.probs()[0] - 0.5).abs() < 1e-12);
        assert!((dist.probs()[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn p_ca_rejects_bad_boundaries() {
        let att = Mat::from_rows(vec![vec![0.5, 0.5]]).unwrap();
        assert!(p_ca(&att, &[0, 3]).is_err());
        assert!(p_ca(&att, &[1, 2]).is_err());
        assert!(p_ca(&att, &[0, 0, 2]).is_err());
    }

    #[test]
    fn kl_identical_distributions_is_zero() {
        let p = Distribution::new(vec![0.25; 4]).unwrap();
        let out = kl_retriever_loss(&p, &p.clone()).unwrap();
        assert!(out.loss.abs() < 1e-12);
    }

    #[test]
    fn kl_hand_computed_value() {
        let p = Distribution::new(vec![0.5, 0.5]).unwrap();
        let q = Distribution::new(vec![0.75, 0.25]).unwrap();
        let out = kl_retriever_loss(&p, &q).unwrap();
        let expected = 0.5 * (2.0f64 / 3.0).ln() + 0.5 * 2.0f64.ln();
        assert!((out.loss - expected).abs() < 1e-12);
        assert!((expected - 0.143841).abs() < 1e-6);
    }

    #[test]
    fn kl_stop_gradient_side_is_identically_zero() {
        let p = Distribution::new(vec![0.9, 0.1]).unwrap();
        let q = Distribution::new(vec![0.4, 0.6]).unwrap();
        let out = kl_retriever_loss(&p, &q).unwrap();
        assert!(out.grad_p_ca.iter().all(|g| *g == 0.0));
        // Perturbing the target changes the loss value even though the
        // reported gradient is zero.
        let q2 = Distribution::new(vec![0.5, 0.5]).unwrap();
        let out2 = kl_retriever_loss(&p, &q2).unwrap();
        assert!((out.loss - out2.loss).abs() > 1e-6);
    }

    fn toy_batch(rng: &mut ChaCha8Rng) -> LossBatch {
        let k = 4;
        let d = 6;
        let heads = 3;
        let tokens_per_passage = 2;
        let t_total = k * tokens_per_passage;
        let mut attention = random_mat(rng, heads, t_total);
        for h in 0..heads {
            let sum: f64 = attention.row(h).iter().map(|v| v.abs()).sum();
            for t in 0..t_total {
                let v = attention.at(h, t).abs() / sum;
                *attention.at_mut(h, t) = v;
            }
        }
        LossBatch {
            query: (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            candidates: random_mat(rng, k, d),
            token_logits: random_mat(rng, 5, 9),
            target_tokens: vec![0, 3, 8, 2, 5],
            attention,
            boundaries: (0..=k).map(|j| j * tokens_per_passage).collect(),
        }
    }

    #[test]
    fn e2e_is_sum_of_parts() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let batch = toy_batch(&mut rng);
        let retrieval = p_ret(&batch.query, &batch.candidates).unwrap();
        let target = p_ca(&batch.attention, &batch.boundaries).unwrap();
        let kl = kl_retriever_loss(&retrieval, &target).unwrap();
        let nll = nll_loss(&batch.token_logits, &batch.target_tokens).unwrap();
        let total = e2e_loss(&batch).unwrap();
        assert!((total - (kl.loss + nll.loss)).abs() < 1e-9);
    }

    #[test]
    fn e2e_vanishes_when_both_terms_vanish() {
        // p_ret == p_ca == uniform over 2 identical candidates, and logits
        // saturated at the targets.
        let batch = LossBatch {
            query: vec![0.5, 0.5],
            candidates: Mat::from_rows(vec![vec![1.0, 0.0], vec![1.0, 0.0]]).unwrap(),
            token_logits: Mat::from_rows(vec![vec![60.0, 0.0], vec![0.0, 60.0]]).unwrap(),
            target_tokens: vec![0, 1],
            attention: Mat::from_rows(vec![vec![0.5, 0.5]]).unwrap(),
            boundaries: vec![0, 1, 2],
        };
        let total = e2e_loss(&batch).unwrap();
        assert!(total.abs() < 1e-9);
    }

    #[test]
    fn e2e_query_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let batch = toy_batch(&mut rng);
        let out = e2e_loss_with_grad(&batch).unwrap();
        let mut f = |q: &[f64]| {
            let mut b = batch.clone();
            b.query = q.to_vec();
            e2e_loss(&b).unwrap()
        };
        for i in 0..batch.query.len() {
            let num = central_diff(&mut f, &batch.query, i, 1e-5);
            assert!(
                rel_err(out.grad_query[i], num) < 1e-4,
                "slot {i}: analytic {} vs numeric {num}",
                out.grad_query[i]
            );
        }
    }

    #[test]
    fn e2e_candidate_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let batch = toy_batch(&mut rng);
        let out = e2e_loss_with_grad(&batch).unwrap();
        let flat = batch.candidates.data().to_vec();
        let (k, d) = (batch.candidates.rows(), batch.candidates.cols());
        let mut f = |c: &[f64]| {
            let mut b = batch.clone();
            b.candidates = Mat::from_vec(k, d, c.to_vec()).unwrap();
            e2e_loss(&b).unwrap()
        };
        for i in (0..flat.len()).step_by(5) {
            let num = central_diff(&mut f, &flat, i, 1e-5);
            assert!(rel_err(out.grad_candidates.data()[i], num) < 1e-4);
        }
    }
}
