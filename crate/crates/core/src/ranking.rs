//! Items, factor costs, the linear ranking function and the pairwise
//! ranking distance used as the effectiveness half of the selection loss.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView1};

use crate::error::{CfsError, Result};
use crate::scalar::Scalar;

pub type RequestId = u64;

/// Factor values of one request: `n_items` rows by `p` factor columns.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorMatrix<T> {
    request_id: RequestId,
    values: Array2<T>,
}

impl<T: Scalar> FactorMatrix<T> {
    pub fn new(request_id: RequestId, values: Array2<T>) -> Result<Self> {
        let (n, p) = values.dim();
        if n < 2 {
            return Err(CfsError::Shape(format!(
                "request {request_id}: need at least 2 items, got {n}"
            )));
        }
        if p == 0 {
            return Err(CfsError::Shape(format!("request {request_id}: no factors")));
        }
        if let Some(((j, k), v)) = values.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(CfsError::InvalidValue(format!(
                "request {request_id}: factor value x[{j},{k}] = {v} is not finite"
            )));
        }
        Ok(FactorMatrix { request_id, values })
    }

    pub fn request_id(&self) -> RequestId {
        self.request_id
    }

    pub fn n_items(&self) -> usize {
        self.values.nrows()
    }

    pub fn p(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &Array2<T> {
        &self.values
    }

    pub fn item(&self, j: usize) -> ArrayView1<'_, T> {
        self.values.row(j)
    }
}

/// Per-factor compute cost `c_k`, strictly positive.
#[derive(Debug, Clone, PartialEq)]
pub struct CostVector<T>(Vec<T>);

impl<T: Scalar> CostVector<T> {
    pub fn new(costs: Vec<T>) -> Result<Self> {
        if costs.is_empty() {
            return Err(CfsError::Shape("empty cost vector".into()));
        }
        if let Some((k, c)) = costs
            .iter()
            .enumerate()
            .find(|(_, c)| !(c.is_finite() && **c > T::zero()))
        {
            return Err(CfsError::InvalidValue(format!(
                "cost c[{k}] = {c} must be finite and > 0"
            )));
        }
        Ok(CostVector(costs))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.0
    }

    pub fn total(&self) -> T {
        self.0.iter().copied().sum()
    }

    /// `Σ_k mask[k]·c_k`.
    pub fn kept_cost(&self, mask: &FactorMask) -> T {
        self.0
            .iter()
            .zip(mask.bits())
            .filter(|(_, &keep)| keep)
            .map(|(&c, _)| c)
            .sum()
    }
}

/// Indicator vector over factors; `true` keeps the factor in the score.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FactorMask {
    bits: Vec<bool>,
}

impl FactorMask {
    pub fn new(bits: Vec<bool>) -> Self {
        FactorMask { bits }
    }

    pub fn all_ones(p: usize) -> Self {
        FactorMask { bits: vec![true; p] }
    }

    pub fn all_zeros(p: usize) -> Self {
        FactorMask {
            bits: vec![false; p],
        }
    }

    /// Bit `k` of `code` becomes `mask[k]`.
    pub fn from_code(p: usize, code: u64) -> Self {
        FactorMask {
            bits: (0..p).map(|k| (code >> k) & 1 == 1).collect(),
        }
    }

    pub fn from_indices(p: usize, kept: &[usize]) -> Self {
        let mut bits = vec![false; p];
        for &k in kept {
            bits[k] = true;
        }
        FactorMask { bits }
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, k: usize) -> bool {
        self.bits[k]
    }

    pub fn set(&mut self, k: usize, keep: bool) {
        self.bits[k] = keep;
    }

    pub fn kept_count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn kept_indices(&self) -> Vec<usize> {
        (0..self.bits.len()).filter(|&k| self.bits[k]).collect()
    }

    pub fn is_superset_of(&self, other: &FactorMask) -> bool {
        self.len() == other.len() && self.bits.iter().zip(&other.bits).all(|(&a, &b)| a || !b)
    }
}

impl fmt::Display for FactorMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &b in &self.bits {
            f.write_str(if b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl FromStr for FactorMask {
    type Err = CfsError;

    fn from_str(s: &str) -> Result<Self> {
        s.chars()
            .map(|c| match c {
                '1' => Ok(true),
                '0' => Ok(false),
                other => Err(CfsError::InvalidValue(format!(
                    "mask character {other:?} is not 0 or 1"
                ))),
            })
            .collect::<Result<Vec<_>>>()
            .map(FactorMask::new)
    }
}

/// Black-box scorer. Only the linear form ships, but every consumer goes
/// through this trait.
pub trait Ranker<T: Scalar> {
    fn p(&self) -> usize;

    /// Writes one score per item into `out`.
    fn score_into(
        &self,
        request_id: RequestId,
        factors: &FactorMatrix<T>,
        mask: &FactorMask,
        out: &mut Vec<T>,
    ) -> Result<()>;
}

/// Linear scorer with one weight vector per request.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LinearRankingModel<T> {
    p: usize,
    weights: HashMap<RequestId, Vec<T>>,
}

impl<T: Scalar> LinearRankingModel<T> {
    pub fn new(p: usize) -> Self {
        LinearRankingModel {
            p,
            weights: HashMap::new(),
        }
    }

    pub fn insert(&mut self, request_id: RequestId, weights: Vec<T>) -> Result<()> {
        if weights.len() != self.p {
            return Err(CfsError::Shape(format!(
                "request {request_id}: weight vector has length {}, expected {}",
                weights.len(),
                self.p
            )));
        }
        if let Some((k, w)) = weights.iter().enumerate().find(|(_, w)| !w.is_finite()) {
            return Err(CfsError::InvalidValue(format!(
                "request {request_id}: weight w[{k}] = {w} is not finite"
            )));
        }
        self.weights.insert(request_id, weights);
        Ok(())
    }

    pub fn weights(&self, request_id: RequestId) -> Option<&[T]> {
        self.weights.get(&request_id).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

impl<T: Scalar> Ranker<T> for LinearRankingModel<T> {
    fn p(&self) -> usize {
        self.p
    }

    fn score_into(
        &self,
        request_id: RequestId,
        factors: &FactorMatrix<T>,
        mask: &FactorMask,
        out: &mut Vec<T>,
    ) -> Result<()> {
        let w = self
            .weights(request_id)
            .ok_or(CfsError::MissingModel(request_id))?;
        check_dims(self.p, factors, mask)?;
        out.clear();
        out.extend(factors.values().outer_iter().map(|x| {
            let mut s = T::zero();
            for ((&wk, &xk), &keep) in w.iter().zip(x.iter()).zip(mask.bits()) {
                if keep {
                    s += wk * xk;
                }
            }
            s
        }));
        Ok(())
    }
}

fn check_dims<T: Scalar>(p: usize, factors: &FactorMatrix<T>, mask: &FactorMask) -> Result<()> {
    if factors.p() != p {
        return Err(CfsError::Shape(format!(
            "request {}: factor matrix has {} columns, model expects {p}",
            factors.request_id(),
            factors.p()
        )));
    }
    if mask.len() != p {
        return Err(CfsError::Shape(format!(
            "mask has length {}, expected {p}",
            mask.len()
        )));
    }
    Ok(())
}

/// `score_j = Σ_k mask[k]·w_k·x_jk`.
pub fn score_items<T: Scalar, R: Ranker<T> + ?Sized>(
    model: &R,
    request_id: RequestId,
    factors: &FactorMatrix<T>,
    mask: &FactorMask,
) -> Result<Vec<T>> {
    let mut out = Vec::with_capacity(factors.n_items());
    model.score_into(request_id, factors, mask, &mut out)?;
    Ok(out)
}

/// A ranking of items. `order[0]` is the top item; `rank_of[item]` is the
/// item's position in `order`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Permutation {
    order: Vec<usize>,
    rank_of: Vec<usize>,
}

impl Permutation {
    pub fn from_order(order: Vec<usize>) -> Result<Self> {
        let n = order.len();
        let mut rank_of = vec![usize::MAX; n];
        for (pos, &item) in order.iter().enumerate() {
            if item >= n || rank_of[item] != usize::MAX {
                return Err(CfsError::InvalidValue(format!(
                    "order {order:?} is not a permutation of 0..{n}"
                )));
            }
            rank_of[item] = pos;
        }
        Ok(Permutation { order, rank_of })
    }

    pub fn identity(n: usize) -> Self {
        Permutation {
            order: (0..n).collect(),
            rank_of: (0..n).collect(),
        }
    }

    pub fn reversed(&self) -> Self {
        let mut order = self.order.clone();
        order.reverse();
        Permutation::from_order(order).expect("reversal of a permutation")
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn rank_of(&self) -> &[usize] {
        &self.rank_of
    }
}

/// Descending score order; equal scores keep ascending item index.
pub fn rank<T: Scalar>(scores: &[T]) -> Result<Permutation> {
    if let Some((index, v)) = scores.iter().enumerate().find(|(_, v)| !v.is_finite()) {
        return Err(CfsError::InvalidScore {
            index,
            value: v.as_f64(),
        });
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    // stable sort: ties stay in index order
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).expect("finite scores"));
    let mut rank_of = vec![0; order.len()];
    for (pos, &item) in order.iter().enumerate() {
        rank_of[item] = pos;
    }
    Ok(Permutation { order, rank_of })
}

/// Number of unordered item pairs ranked in opposite order by the two
/// permutations.
pub fn discordant_pairs(reference: &Permutation, candidate: &Permutation) -> Result<u64> {
    if reference.len() != candidate.len() {
        return Err(CfsError::Shape(format!(
            "permutations of different sizes: {} vs {}",
            reference.len(),
            candidate.len()
        )));
    }
    // Candidate positions listed in reference order; every inversion of this
    // sequence is a discordant pair.
    let mut seq: Vec<usize> = reference
        .order()
        .iter()
        .map(|&item| candidate.rank_of()[item])
        .collect();
    let mut scratch = vec![0; seq.len()];
    Ok(count_inversions(&mut seq, &mut scratch))
}

fn count_inversions(seq: &mut [usize], scratch: &mut [usize]) -> u64 {
    let n = seq.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut count = {
        let (left, right) = seq.split_at_mut(mid);
        let (sl, sr) = scratch.split_at_mut(mid);
        count_inversions(left, sl) + count_inversions(right, sr)
    };
    let (mut i, mut j, mut out) = (0, mid, 0);
    while i < mid && j < n {
        if seq[i] <= seq[j] {
            scratch[out] = seq[i];
            i += 1;
        } else {
            scratch[out] = seq[j];
            count += (mid - i) as u64;
            j += 1;
        }
        out += 1;
    }
    scratch[out..out + mid - i].copy_from_slice(&seq[i..mid]);
    out += mid - i;
    scratch[out..out + n - j].copy_from_slice(&seq[j..n]);
    seq.copy_from_slice(&scratch[..n]);
    count
}

/// Averaged pairwise loss: discordant pairs over `n(n-1)/2`, in `[0, 1]`.
pub fn pairwise_distance<T: Scalar>(reference: &Permutation, candidate: &Permutation) -> Result<T> {
    let n = reference.len();
    if n < 2 {
        return Err(CfsError::Shape(format!(
            "pairwise distance needs at least 2 items, got {n}"
        )));
    }
    let discordant = discordant_pairs(reference, candidate)?;
    let pairs = (n * (n - 1) / 2) as u64;
    Ok(T::from_u64(discordant).expect("pair count") / T::from_u64(pairs).expect("pair count"))
}

/// Trade-off between ranking distortion and compute cost.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CfsLossParams<T> {
    lambda: T,
}

impl<T: Scalar> CfsLossParams<T> {
    pub fn new(lambda: T) -> Result<Self> {
        if !(lambda.is_finite() && lambda > T::zero()) {
            return Err(CfsError::InvalidValue(format!(
                "lambda = {lambda} must be finite and > 0"
            )));
        }
        Ok(CfsLossParams { lambda })
    }

    pub fn lambda(&self) -> T {
        self.lambda
    }
}

/// The selection loss and its two parts; `loss = distance + lambda·cost_term`
/// holds exactly because `loss` is computed from the returned parts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParts<T> {
    pub distance: T,
    pub cost_term: T,
    pub loss: T,
}

impl<T: Scalar> LossParts<T> {
    pub fn from_parts(distance: T, cost_term: T, lambda: T) -> Self {
        LossParts {
            distance,
            cost_term,
            loss: distance + lambda * cost_term,
        }
    }
}

/// Evaluates the selection loss of many masks for one request, ranking the
/// full-factor scores only once.
pub struct LossEvaluator<'a, T: Scalar, R: Ranker<T> + ?Sized> {
    model: &'a R,
    factors: &'a FactorMatrix<T>,
    costs: &'a CostVector<T>,
    lambda: T,
    reference: Permutation,
    scratch: Vec<T>,
}

impl<'a, T: Scalar, R: Ranker<T> + ?Sized> LossEvaluator<'a, T, R> {
    /// `lambda` may be zero here (cost-free selection); it must not be negative.
    pub fn new(
        model: &'a R,
        factors: &'a FactorMatrix<T>,
        costs: &'a CostVector<T>,
        lambda: T,
    ) -> Result<Self> {
        if !(lambda.is_finite() && lambda >= T::zero()) {
            return Err(CfsError::InvalidValue(format!(
                "lambda = {lambda} must be finite and >= 0"
            )));
        }
        if costs.len() != factors.p() {
            return Err(CfsError::Shape(format!(
                "cost vector has length {}, factors have p = {}",
                costs.len(),
                factors.p()
            )));
        }
        let full = score_items(model, factors.request_id(), factors, &FactorMask::all_ones(factors.p()))?;
        let reference = rank(&full)?;
        Ok(LossEvaluator {
            model,
            factors,
            costs,
            lambda,
            reference,
            scratch: Vec::with_capacity(factors.n_items()),
        })
    }

    pub fn reference(&self) -> &Permutation {
        &self.reference
    }

    pub fn distance(&mut self, mask: &FactorMask) -> Result<T> {
        self.model
            .score_into(self.factors.request_id(), self.factors, mask, &mut self.scratch)?;
        let candidate = rank(&self.scratch)?;
        pairwise_distance(&self.reference, &candidate)
    }

    /// `n_items · Σ_k mask[k]·c_k`.
    pub fn cost_term(&self, mask: &FactorMask) -> T {
        T::from_usize_lossy(self.factors.n_items()) * self.costs.kept_cost(mask)
    }

    pub fn evaluate(&mut self, mask: &FactorMask) -> Result<LossParts<T>> {
        let distance = self.distance(mask)?;
        Ok(LossParts::from_parts(distance, self.cost_term(mask), self.lambda))
    }
}

pub fn cfs_loss<T: Scalar, R: Ranker<T> + ?Sized>(
    factors: &FactorMatrix<T>,
    model: &R,
    costs: &CostVector<T>,
    mask: &FactorMask,
    params: &CfsLossParams<T>,
) -> Result<LossParts<T>> {
    LossEvaluator::new(model, factors, costs, params.lambda())?.evaluate(mask)
}
