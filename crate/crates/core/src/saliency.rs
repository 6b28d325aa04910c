//! Token scoring: `[CLS]`-attention saliency, per-token key-vector L2 norms,
//! and deterministic top-k selection.

use std::cmp::Ordering;

use ndarray::{ArrayView2, ArrayView3, Axis};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    LargerIsBetter,
    SmallerIsBetter,
}

/// Per-token scores together with the sense in which a score is "better".
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreVector {
    values: Vec<f64>,
    direction: Direction,
}

impl ScoreVector {
    pub fn new(values: Vec<f64>, direction: Direction) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("scores"));
        }
        Ok(Self { values, direction })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn direction(&self) -> Direction {
        self.direction
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Orders token `a` before token `b` when `a` scores better; equal scores
    /// fall back to the lower index.
    pub fn rank_cmp(&self, a: usize, b: usize) -> Ordering {
        let (x, y) = (self.values[a], self.values[b]);
        // values are finite, so partial_cmp is total here
        let by_score = match self.direction {
            Direction::LargerIsBetter => y.partial_cmp(&x),
            Direction::SmallerIsBetter => x.partial_cmp(&y),
        }
        .unwrap_or(Ordering::Equal);
        by_score.then(a.cmp(&b))
    }
}

/// Sums each token's `[CLS]` attention over heads. Input is `heads × tokens`.
pub fn cls_saliency(cls_attention: ArrayView2<f64>) -> Result<ScoreVector> {
    let (heads, n) = cls_attention.dim();
    if heads == 0 || n == 0 {
        return Err(Error::NoTokens);
    }
    if let Some(((h, i), _)) = cls_attention.indexed_iter().find(|(_, v)| **v < 0.0) {
        return Err(Error::NegativeAttention { head: h, token: i });
    }
    let values = cls_attention.sum_axis(Axis(0)).to_vec();
    ScoreVector::new(values, Direction::LargerIsBetter)
}

/// Per-token L2 norm of the key vectors concatenated across heads. Input is
/// `heads × tokens × d_head`.
pub fn key_l2_norm(keys: ArrayView3<f64>) -> Result<ScoreVector> {
    let (heads, n, d_head) = keys.dim();
    if d_head == 0 {
        return Err(Error::EmptyHeadDim);
    }
    if heads == 0 || n == 0 {
        return Err(Error::NoTokens);
    }
    let values = (0..n)
        .map(|i| {
            keys.index_axis(Axis(1), i)
                .outer_iter()
                .map(|head| head.iter().map(|v| v * v).sum::<f64>())
                .sum::<f64>()
                .sqrt()
        })
        .collect();
    ScoreVector::new(values, Direction::SmallerIsBetter)
}

/// The `k` best-scoring indices, emitted in ascending index order.
pub fn select_top_k(scores: &ScoreVector, k: usize) -> Result<Vec<usize>> {
    let n = scores.len();
    if k == 0 {
        return Err(Error::ZeroBudget);
    }
    if k > n {
        return Err(Error::BudgetExceedsPopulation { k, n });
    }
    let mut idx: Vec<usize> = (0..n).collect();
    if k < n {
        idx.select_nth_unstable_by(k - 1, |&a, &b| scores.rank_cmp(a, b));
        idx.truncate(k);
    }
    idx.sort_unstable();
    Ok(idx)
}
