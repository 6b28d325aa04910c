//! Collaborative pruning: each cluster keeps a size-proportional quota of
//! elite tokens (those with the smallest key norms) and collapses the rest
//! into one mean token.

use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::model::{ClusterAssignment, TokenKind, TokenSet};
use crate::saliency::ScoreVector;
use crate::{Error, Result};

/// Elite quotas per cluster, indexed by position in the `cluster_sizes`
/// slice given to [`allocate_quotas`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuotaPlan {
    pub quotas: Vec<usize>,
    pub budget: usize,
    pub elite_budget: usize,
    /// Clusters that received one extra elite slot from the floor leftover.
    pub remainder_grants: Vec<usize>,
}

impl QuotaPlan {
    pub fn total(&self) -> usize {
        self.quotas.iter().sum()
    }
}

/// Splits `budget - n_clusters` elite slots across clusters in proportion to
/// their sizes.
///
/// Each cluster first gets `floor(size * elite_budget / n)`, capped at its
/// size. Slots lost to flooring go one at a time to clusters in order of
/// largest fractional remainder (lower index on ties), so the total is
/// `min(elite_budget, n)`.
pub fn allocate_quotas(cluster_sizes: &[usize], budget: usize) -> Result<QuotaPlan> {
    let n_clusters = cluster_sizes.len();
    if n_clusters == 0 {
        return Err(Error::InvalidParameter("no clusters".into()));
    }
    if cluster_sizes.contains(&0) {
        return Err(Error::InvalidParameter("empty cluster".into()));
    }
    if budget < n_clusters {
        return Err(Error::BudgetBelowClusters {
            budget,
            clusters: n_clusters,
        });
    }
    let n: usize = cluster_sizes.iter().sum();
    let elite_budget = budget - n_clusters;

    let mut quotas: Vec<usize> = cluster_sizes
        .iter()
        .map(|&s| (s * elite_budget / n).min(s))
        .collect();
    let target = elite_budget.min(n);
    let mut leftover = target - quotas.iter().sum::<usize>();

    let mut order: Vec<usize> = (0..n_clusters).collect();
    // fractional parts share the denominator n, so compare numerators
    let remainder = |c: usize| (cluster_sizes[c] * elite_budget) % n;
    order.sort_by(|&a, &b| remainder(b).cmp(&remainder(a)).then(a.cmp(&b)));

    let mut remainder_grants = Vec::new();
    while leftover > 0 {
        let before = leftover;
        for &c in &order {
            if leftover == 0 {
                break;
            }
            if quotas[c] < cluster_sizes[c] {
                quotas[c] += 1;
                remainder_grants.push(c);
                leftover -= 1;
            }
        }
        if leftover == before {
            break;
        }
    }

    Ok(QuotaPlan {
        quotas,
        budget,
        elite_budget,
        remainder_grants,
    })
}

/// The `q` members with the best key-norm scores, ascending by index.
pub fn select_elites(members: &[usize], k_norms: &ScoreVector, q: usize) -> Result<Vec<usize>> {
    if q > members.len() {
        return Err(Error::QuotaExceedsMembers {
            quota: q,
            members: members.len(),
        });
    }
    let mut sorted = members.to_vec();
    sorted.sort_by(|&a, &b| k_norms.rank_cmp(a, b));
    let mut elites = sorted[..q].to_vec();
    elites.sort_unstable();
    Ok(elites)
}

/// Column mean of the given rows, or `None` for an empty set.
pub fn merge_remaining(features: ArrayView2<f64>) -> Option<Array1<f64>> {
    features.mean_axis(Axis(0))
}

/// (origin, position row, feature row, kind)
type OutToken = (Vec<usize>, Array1<f64>, Array1<f64>, TokenKind);

/// Runs quota allocation, elite selection and merging over every cluster.
///
/// Output tokens are ordered by their smallest original index. A cluster
/// whose remainder is a single token passes that token through unchanged.
pub fn coprune(
    tokens: &TokenSet,
    assignment: &ClusterAssignment,
    k_norms: &ScoreVector,
    budget: usize,
) -> Result<TokenSet> {
    let n = tokens.len();
    if assignment.labels.len() != n {
        return Err(Error::BadAssignment(format!(
            "{} labels for {n} tokens",
            assignment.labels.len()
        )));
    }
    if k_norms.len() != n {
        return Err(Error::BadAssignment(format!(
            "{} key norms for {n} tokens",
            k_norms.len()
        )));
    }
    let n_clusters = assignment.n_clusters();
    if let Some(&bad) = assignment.labels.iter().find(|&&l| l == 0 || l > n_clusters) {
        return Err(Error::BadAssignment(format!("label {bad} outside 1..={n_clusters}")));
    }
    let groups = assignment.members();
    let sizes: Vec<usize> = groups.iter().map(Vec::len).collect();
    let plan = allocate_quotas(&sizes, budget)?;

    let mut out: Vec<OutToken> = Vec::new();
    for (members, &q) in groups.iter().zip(&plan.quotas) {
        let elites = select_elites(members, k_norms, q)?;
        for &e in &elites {
            out.push((
                tokens.origin[e].clone(),
                tokens.positions.row(e).to_owned(),
                tokens.features.row(e).to_owned(),
                TokenKind::Elite,
            ));
        }
        let remaining: Vec<usize> = members
            .iter()
            .copied()
            .filter(|i| elites.binary_search(i).is_err())
            .collect();
        match remaining.as_slice() {
            [] => {}
            [only] => out.push((
                tokens.origin[*only].clone(),
                tokens.positions.row(*only).to_owned(),
                tokens.features.row(*only).to_owned(),
                tokens.kind[*only],
            )),
            rest => {
                let feats = tokens.features.select(Axis(0), rest);
                let pos = tokens.positions.select(Axis(0), rest);
                let mut origin: Vec<usize> = rest
                    .iter()
                    .flat_map(|&i| tokens.origin[i].iter().copied())
                    .collect();
                origin.sort_unstable();
                out.push((
                    origin,
                    merge_remaining(pos.view()).expect("nonempty"),
                    merge_remaining(feats.view()).expect("nonempty"),
                    TokenKind::Merged,
                ));
            }
        }
    }
    out.sort_by_key(|t| t.0.iter().copied().min().unwrap_or(usize::MAX));

    let k = out.len();
    let d_feat = tokens.features.ncols();
    let mut features = Array2::zeros((k, d_feat));
    let mut positions = Array2::zeros((k, 2));
    let mut origin = Vec::with_capacity(k);
    let mut kind = Vec::with_capacity(k);
    for (r, (o, p, f, kd)) in out.into_iter().enumerate() {
        features.row_mut(r).assign(&f);
        positions.row_mut(r).assign(&p);
        origin.push(o);
        kind.push(kd);
    }
    Ok(TokenSet {
        features,
        positions,
        origin,
        kind,
    })
}
