//! Brute-force reference implementations and the randomized equivalence
//! suites behind `coprune oracle-check`.
//!
//! The references work on plain nested `Vec`s with explicit loops and share
//! no code with the engine modules. They follow the engine's documented
//! conventions (tie-breaks, sentinel delta, orphan fallback, remainder
//! grants) but reach them by direct enumeration.

#![allow(clippy::needless_range_loop)]

use std::collections::BTreeMap;
use std::fmt::Write as _;

use ndarray::{Array2, Array3};
use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::copruning::{allocate_quotas, coprune};
use crate::io::{decode_bundle, encode_bundle};
use crate::model::{ActivationBundle, BundleMeta, ClusterAssignment, TokenKind, TokenSet};
use crate::saliency::{cls_saliency, key_l2_norm, select_top_k, Direction, ScoreVector};
use crate::vic::{cluster, euclidean_matrix, local_density, VicParams};

pub type Rows = Vec<Vec<f64>>;

pub fn ref_cls_saliency(attn: &Rows) -> Vec<f64> {
    let n = attn.first().map_or(0, Vec::len);
    let mut out = vec![0.0; n];
    for i in 0..n {
        for row in attn {
            out[i] += row[i];
        }
    }
    out
}

/// `keys[h][i]` is head `h`'s key for token `i`. Flattens each token's keys
/// across heads and takes one norm.
pub fn ref_key_norm(keys: &[Rows]) -> Vec<f64> {
    let n = keys.first().map_or(0, Vec::len);
    (0..n)
        .map(|i| {
            let flat: Vec<f64> = keys.iter().flat_map(|head| head[i].iter().copied()).collect();
            flat.iter().map(|v| v * v).sum::<f64>().sqrt()
        })
        .collect()
}

/// Full stable sort, then prefix. `larger_better` selects the direction.
pub fn ref_top_k(values: &[f64], k: usize, larger_better: bool) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    if larger_better {
        idx.sort_by(|&a, &b| values[b].partial_cmp(&values[a]).unwrap());
    } else {
        idx.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap());
    }
    let mut top = idx[..k].to_vec();
    top.sort();
    top
}

pub fn ref_distances(points: &Rows) -> Rows {
    let n = points.len();
    let mut d = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            let mut s = 0.0;
            for c in 0..points[i].len() {
                let diff = points[i][c] - points[j][c];
                s += diff * diff;
            }
            d[i][j] = s.sqrt();
        }
    }
    d
}

pub fn ref_density(d: &Rows, d_c: f64) -> Vec<f64> {
    let n = d.len();
    let mut rho = vec![0.0; n];
    for i in 0..n {
        for j in 0..n {
            if j != i {
                rho[i] += (-(d[i][j] / d_c).powi(2)).exp();
            }
        }
    }
    rho
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RefClusters {
    pub labels: Vec<usize>,
    pub centers: Vec<usize>,
}

/// Density-peaks clustering straight from the step list: distances,
/// densities, gated nearest-denser search, top-gamma centers, then
/// densest-first label propagation.
pub fn ref_vic(features: &Rows, positions: &Rows, d_c: f64, tau: f64, alpha: f64) -> RefClusters {
    let n = features.len();
    let df = ref_distances(features);
    let ds = ref_distances(positions);
    let rho = ref_density(&df, d_c);

    let is_denser = |j: usize, i: usize| rho[j] > rho[i] || (rho[j] == rho[i] && j < i);

    let mut max_d = 0.0f64;
    for row in &df {
        for &v in row {
            if v > max_d {
                max_d = v;
            }
        }
    }
    let sentinel = if max_d > 0.0 { max_d } else { 1.0 };

    let mut delta = vec![sentinel; n];
    let mut parent: Vec<Option<usize>> = vec![None; n];
    for i in 0..n {
        let mut best = f64::INFINITY;
        for j in 0..n {
            if j != i && is_denser(j, i) && ds[i][j] <= tau && df[i][j] < best {
                best = df[i][j];
                parent[i] = Some(j);
            }
        }
        if parent[i].is_some() {
            delta[i] = best;
        }
    }
    let gamma: Vec<f64> = (0..n).map(|i| rho[i] * delta[i]).collect();

    let n_centers = ((n as f64 * alpha - 1e-9).ceil() as usize).clamp(1, n);
    // repeated argmax over the remaining tokens
    let mut centers = Vec::new();
    let mut taken = vec![false; n];
    for _ in 0..n_centers {
        let mut best: Option<usize> = None;
        for i in 0..n {
            if taken[i] {
                continue;
            }
            best = match best {
                None => Some(i),
                Some(b) => {
                    let better = gamma[i] > gamma[b] || (gamma[i] == gamma[b] && rho[i] > rho[b]);
                    Some(if better { i } else { b })
                }
            };
        }
        let b = best.expect("centers <= n");
        taken[b] = true;
        centers.push(b);
    }

    const UNSET: usize = usize::MAX;
    let mut labels = vec![UNSET; n];
    for (k, &c) in centers.iter().enumerate() {
        labels[c] = k + 1;
    }
    let mut order: Vec<usize> = (0..n).collect();
    // insertion sort: densest first, lower index on ties
    for a in 1..n {
        let mut b = a;
        while b > 0 && is_denser(order[b], order[b - 1]) {
            order.swap(b, b - 1);
            b -= 1;
        }
    }
    for &i in &order {
        if labels[i] != UNSET {
            continue;
        }
        labels[i] = match parent[i] {
            Some(p) => labels[p],
            None => {
                let mut best_k = 0;
                for k in 0..centers.len() {
                    if df[i][centers[k]] < df[i][centers[best_k]] {
                        best_k = k;
                    }
                }
                best_k + 1
            }
        };
    }
    RefClusters { labels, centers }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RefToken {
    pub origin: Vec<usize>,
    pub feature: Vec<f64>,
    pub kind: TokenKind,
}

/// Reference quota split by exact rational arithmetic: floor shares, then
/// one slot at a time to the cluster with the largest remaining fraction.
pub fn ref_quotas(sizes: &[usize], budget: usize) -> Vec<usize> {
    let n: usize = sizes.iter().sum();
    let elite = budget - sizes.len();
    let mut q: Vec<usize> = sizes.iter().map(|&s| std::cmp::min(s, s * elite / n)).collect();
    let target = std::cmp::min(elite, n);
    let mut granted = vec![false; sizes.len()];
    while q.iter().sum::<usize>() < target {
        let mut pick: Option<usize> = None;
        for c in 0..sizes.len() {
            if granted[c] || q[c] >= sizes[c] {
                continue;
            }
            let frac = (sizes[c] * elite) % n;
            pick = match pick {
                Some(p) if (sizes[p] * elite) % n >= frac => Some(p),
                _ => Some(c),
            };
        }
        match pick {
            Some(c) => {
                granted[c] = true;
                q[c] += 1;
            }
            // every cluster has had a grant; allow another round
            None if granted.iter().any(|&g| g) => granted.iter_mut().for_each(|g| *g = false),
            None => break,
        }
    }
    q
}

/// Group by label, keep the `q_c` smallest-norm members, average the rest.
pub fn ref_coprune(features: &Rows, labels: &[usize], norms: &[f64], budget: usize) -> Vec<RefToken> {
    let n_clusters = labels.iter().copied().max().unwrap_or(0);
    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); n_clusters];
    for i in 0..labels.len() {
        groups[labels[i] - 1].push(i);
    }
    let sizes: Vec<usize> = groups.iter().map(Vec::len).collect();
    let quotas = ref_quotas(&sizes, budget);
    let mut out = Vec::new();
    for (members, &q) in groups.iter().zip(&quotas) {
        let mut sorted = members.clone();
        sorted.sort_by(|&a, &b| norms[a].partial_cmp(&norms[b]).unwrap().then(a.cmp(&b)));
        let elites = &sorted[..q];
        for &e in elites {
            out.push(RefToken {
                origin: vec![e],
                feature: features[e].clone(),
                kind: TokenKind::Elite,
            });
        }
        let mut rest: Vec<usize> = sorted[q..].to_vec();
        rest.sort();
        if rest.len() == 1 {
            out.push(RefToken {
                origin: rest.clone(),
                feature: features[rest[0]].clone(),
                kind: TokenKind::Kept,
            });
        } else if !rest.is_empty() {
            let d = features[0].len();
            let mut mean = vec![0.0; d];
            for &i in &rest {
                for c in 0..d {
                    mean[c] += features[i][c];
                }
            }
            for v in &mut mean {
                *v /= rest.len() as f64;
            }
            out.push(RefToken {
                origin: rest,
                feature: mean,
                kind: TokenKind::Merged,
            });
        }
    }
    out.sort_by_key(|t| t.origin[0]);
    out
}

fn rows(a: &Array2<f64>) -> Rows {
    a.outer_iter().map(|r| r.to_vec()).collect()
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Random clustering instance: `features`, `positions`, `d_c`, `tau`,
/// `alpha`. Some instances carry duplicated rows to exercise density ties.
#[derive(Debug, Clone)]
pub struct VicInstance {
    pub features: Array2<f64>,
    pub positions: Array2<f64>,
    pub params: VicParams,
}

pub fn random_vic_instance(rng: &mut ChaCha8Rng, n_max: usize) -> VicInstance {
    let n = rng.random_range(2..=n_max.max(2));
    let d = rng.random_range(2..=32);
    let blobs = rng.random_range(1..=4usize);
    let centers: Vec<Vec<f64>> = (0..blobs)
        .map(|_| (0..d).map(|_| 3.0 * normal(rng)).collect())
        .collect();
    let mut features = Array2::zeros((n, d));
    for i in 0..n {
        let b = rng.random_range(0..blobs);
        for c in 0..d {
            features[[i, c]] = centers[b][c] + normal(rng);
        }
    }
    let mut positions = Array2::from_shape_fn((n, 2), |_| rng.random_range(0.0..1.0));
    if rng.random_bool(0.25) {
        for _ in 0..rng.random_range(1..=n / 2 + 1) {
            let (a, b) = (rng.random_range(0..n), rng.random_range(0..n));
            let row = features.row(a).to_owned();
            features.row_mut(b).assign(&row);
            let p = positions.row(a).to_owned();
            positions.row_mut(b).assign(&p);
        }
    }
    let typical = (2.0 * d as f64).sqrt();
    VicInstance {
        features,
        positions,
        params: VicParams {
            d_c: typical * rng.random_range(0.1..2.0),
            tau: rng.random_range(0.05..1.5),
            alpha: rng.random_range(0.01..=1.0),
        },
    }
}

/// Random co-pruning instance: token set, labels `1..=nc`, key norms and a
/// budget `>= nc`.
#[derive(Debug, Clone)]
pub struct CopruneInstance {
    pub tokens: TokenSet,
    pub assignment: ClusterAssignment,
    pub norms: ScoreVector,
    pub budget: usize,
}

pub fn random_coprune_instance(rng: &mut ChaCha8Rng, n_max: usize) -> CopruneInstance {
    let n = rng.random_range(1..=n_max.max(1));
    let d = rng.random_range(1..=16);
    let nc = rng.random_range(1..=n);
    let mut labels: Vec<usize> = (1..=nc).collect();
    while labels.len() < n {
        labels.push(rng.random_range(1..=nc));
    }
    labels.shuffle(rng);
    let centers: Vec<usize> = (1..=nc)
        .map(|c| labels.iter().position(|&l| l == c).expect("every label used"))
        .collect();
    // coarse norms give ties
    let norms: Vec<f64> = if rng.random_bool(0.5) {
        (0..n).map(|_| rng.random_range(0..5) as f64).collect()
    } else {
        (0..n).map(|_| rng.random_range(0.0..10.0)).collect()
    };
    let budget = nc + rng.random_range(0..=n + 2);
    let features = Array2::from_shape_fn((n, d), |_| normal(rng));
    let positions = Array2::from_shape_fn((n, 2), |_| rng.random_range(0.0..1.0));
    CopruneInstance {
        tokens: TokenSet {
            features,
            positions,
            origin: (0..n).map(|i| vec![i]).collect(),
            kind: vec![TokenKind::Kept; n],
        },
        assignment: ClusterAssignment {
            labels,
            centers,
            rho: vec![0.0; n],
            delta: vec![0.0; n],
            gamma: vec![0.0; n],
            parent: vec![None; n],
        },
        norms: ScoreVector::new(norms, Direction::SmallerIsBetter).expect("finite"),
        budget,
    }
}

pub fn random_keys(rng: &mut ChaCha8Rng, heads: usize, n: usize, d_head: usize) -> Array3<f64> {
    Array3::from_shape_fn((heads, n, d_head), |_| normal(rng) * 2.0)
}

pub fn keys_as_rows(keys: &Array3<f64>) -> Vec<Rows> {
    keys.outer_iter().map(|h| h.outer_iter().map(|r| r.to_vec()).collect()).collect()
}

pub fn random_bundle(rng: &mut ChaCha8Rng, n_max: usize) -> ActivationBundle {
    let m = rng.random_range(1..=n_max.max(1));
    let d_feat = rng.random_range(1..=24);
    let h_enc = rng.random_range(1..=4);
    let h_llm = rng.random_range(1..=4);
    let d_head = rng.random_range(1..=8);
    let n_layers = rng.random_range(2..=40);
    let mut layers: Vec<usize> = (0..rng.random_range(1..=3))
        .map(|_| rng.random_range(1..=n_layers))
        .collect();
    layers.sort();
    layers.dedup();
    let mut key_vectors = BTreeMap::new();
    let mut text_attention = BTreeMap::new();
    for &l in &layers {
        key_vectors.insert(
            l,
            Array3::from_shape_fn((h_llm, m, d_head), |_| normal(rng) as f32),
        );
        if rng.random_bool(0.5) {
            text_attention.insert(
                l,
                Array2::from_shape_fn((h_llm, m), |_| rng.random_range(0.0f32..1.0)),
            );
        }
    }
    ActivationBundle {
        meta: BundleMeta {
            model: format!("random-{}", rng.random::<u32>()),
            m,
            d: rng.random_range(1..=8192),
            n_layers,
            h_enc,
            h_llm,
            d_head,
        },
        token_features: Array2::from_shape_fn((m, d_feat), |_| (normal(rng) * 10.0) as f32),
        token_positions: Array2::from_shape_fn((m, 2), |_| rng.random_range(0.0f32..=1.0)),
        cls_attention: Array2::from_shape_fn((h_enc, m), |_| rng.random_range(0.0f32..1.0)),
        key_vectors,
        text_attention,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteResult {
    pub suite: &'static str,
    pub trials: usize,
    pub mismatches: usize,
    /// Description of the first mismatch, if any.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub first_failure: Option<String>,
}

impl SuiteResult {
    pub fn passed(&self) -> bool {
        self.mismatches == 0
    }
}

struct Tally {
    suite: &'static str,
    trials: usize,
    mismatches: usize,
    first_failure: Option<String>,
}

impl Tally {
    fn new(suite: &'static str) -> Self {
        Self {
            suite,
            trials: 0,
            mismatches: 0,
            first_failure: None,
        }
    }

    fn record(&mut self, ok: bool, describe: impl FnOnce() -> String) {
        self.trials += 1;
        if !ok {
            self.mismatches += 1;
            if self.first_failure.is_none() {
                self.first_failure = Some(describe());
            }
        }
    }

    fn finish(self) -> SuiteResult {
        SuiteResult {
            suite: self.suite,
            trials: self.trials,
            mismatches: self.mismatches,
            first_failure: self.first_failure,
        }
    }
}

fn close(a: &[f64], b: &[f64], rel: f64) -> bool {
    a.len() == b.len()
        && a.iter()
            .zip(b)
            .all(|(x, y)| (x - y).abs() <= rel * x.abs().max(y.abs()).max(1e-300))
}

pub fn suite_cls_saliency(rng: &mut ChaCha8Rng, n_max: usize, trials: usize) -> SuiteResult {
    let mut t = Tally::new("cls_saliency");
    for trial in 0..trials {
        let heads = rng.random_range(1..=8);
        let n = rng.random_range(1..=n_max.max(1));
        let a = Array2::from_shape_fn((heads, n), |_| rng.random_range(0.0..1.0));
        let got = cls_saliency(a.view()).map(|s| s.values().to_vec());
        let want = ref_cls_saliency(&rows(&a));
        t.record(got.as_ref().is_ok_and(|g| close(g, &want, 1e-12)), || {
            format!("trial {trial}: heads={heads} n={n}")
        });
    }
    t.finish()
}

pub fn suite_key_norm(rng: &mut ChaCha8Rng, n_max: usize, trials: usize) -> SuiteResult {
    let mut t = Tally::new("key_norm");
    for trial in 0..trials {
        let heads = rng.random_range(1..=8);
        let n = rng.random_range(1..=n_max.max(1));
        let d_head = rng.random_range(1..=16);
        let k = random_keys(rng, heads, n, d_head);
        let got = key_l2_norm(k.view()).map(|s| s.values().to_vec());
        let want = ref_key_norm(&keys_as_rows(&k));
        // squared norm equals the sum of per-head squared norms
        let per_head_ok = got.as_ref().is_ok_and(|g| {
            (0..n).all(|i| {
                let s: f64 = (0..heads)
                    .map(|h| (0..d_head).map(|e| k[[h, i, e]].powi(2)).sum::<f64>())
                    .sum();
                (g[i] * g[i] - s).abs() <= 1e-9 * s.max(1e-300)
            })
        });
        t.record(got.as_ref().is_ok_and(|g| close(g, &want, 1e-9)) && per_head_ok, || {
            format!("trial {trial}: heads={heads} n={n} d_head={d_head}")
        });
    }
    t.finish()
}

pub fn suite_top_k(rng: &mut ChaCha8Rng, n_max: usize, trials: usize) -> SuiteResult {
    let mut t = Tally::new("top_k");
    for trial in 0..trials {
        let n = rng.random_range(1..=n_max.max(1));
        let k = rng.random_range(1..=n);
        let values: Vec<f64> = (0..n).map(|_| rng.random_range(0..6) as f64).collect();
        let larger = rng.random_bool(0.5);
        let dir = if larger {
            Direction::LargerIsBetter
        } else {
            Direction::SmallerIsBetter
        };
        let s = ScoreVector::new(values.clone(), dir).expect("finite");
        let ok = select_top_k(&s, k).is_ok_and(|g| g == ref_top_k(&values, k, larger));
        t.record(ok, || format!("trial {trial}: n={n} k={k}"));
    }
    t.finish()
}

pub fn suite_distances_density(rng: &mut ChaCha8Rng, n_max: usize, trials: usize) -> SuiteResult {
    let mut t = Tally::new("distances_density");
    for trial in 0..trials {
        let inst = random_vic_instance(rng, n_max);
        let d = euclidean_matrix(inst.features.view());
        let rd = ref_distances(&rows(&inst.features));
        let dist_ok = d
            .outer_iter()
            .zip(&rd)
            .all(|(a, b)| a.iter().zip(b).all(|(x, y)| (x - y).abs() <= 1e-9));
        let rho = local_density(d.view(), inst.params.d_c);
        let want = ref_density(&rd, inst.params.d_c);
        let rho_ok = rho.is_ok_and(|r| r.iter().zip(&want).all(|(x, y)| (x - y).abs() <= 1e-9));
        t.record(dist_ok && rho_ok, || format!("trial {trial}: n={}", inst.features.nrows()));
    }
    t.finish()
}

pub fn suite_vic(rng: &mut ChaCha8Rng, n_max: usize, trials: usize) -> SuiteResult {
    let mut t = Tally::new("vic");
    for trial in 0..trials {
        let inst = random_vic_instance(rng, n_max);
        let got = cluster(inst.features.view(), inst.positions.view(), inst.params);
        let p = inst.params;
        let want = ref_vic(&rows(&inst.features), &rows(&inst.positions), p.d_c, p.tau, p.alpha);
        let ok = got.is_ok_and(|a| a.labels == want.labels && a.centers == want.centers);
        t.record(ok, || {
            format!("trial {trial}: n={} params={p:?}", inst.features.nrows())
        });
    }
    t.finish()
}

pub fn suite_quota(rng: &mut ChaCha8Rng, n_max: usize, trials: usize) -> SuiteResult {
    let mut t = Tally::new("quota");
    for trial in 0..trials {
        let nc = rng.random_range(1..=n_max.clamp(1, 16));
        let sizes: Vec<usize> = (0..nc).map(|_| rng.random_range(1..=12)).collect();
        let n: usize = sizes.iter().sum();
        let budget = nc + rng.random_range(0..=n + 3);
        let ok = allocate_quotas(&sizes, budget).is_ok_and(|p| p.quotas == ref_quotas(&sizes, budget));
        t.record(ok, || format!("trial {trial}: sizes={sizes:?} budget={budget}"));
    }
    t.finish()
}

/// Compares one co-pruning run against the reference; also checks the
/// budget and origin-conservation invariants.
pub fn coprune_matches(inst: &CopruneInstance) -> Result<(), String> {
    let got = coprune(&inst.tokens, &inst.assignment, &inst.norms, inst.budget)
        .map_err(|e| format!("engine error: {e}"))?;
    let want = ref_coprune(
        &rows(&inst.tokens.features),
        &inst.assignment.labels,
        inst.norms.values(),
        inst.budget,
    );
    if got.len() != want.len() {
        return Err(format!("length {} vs {}", got.len(), want.len()));
    }
    for (i, w) in want.iter().enumerate() {
        if got.origin[i] != w.origin || got.kind[i] != w.kind {
            return Err(format!("token {i}: {:?}/{:?} vs {:?}/{:?}", got.origin[i], got.kind[i], w.origin, w.kind));
        }
        let f = got.features.row(i);
        if f.iter().zip(&w.feature).any(|(a, b)| (a - b).abs() > 1e-9) {
            return Err(format!("token {i}: merged feature differs"));
        }
    }
    let n = inst.tokens.len();
    let nc = inst.assignment.n_clusters();
    if got.len() < nc.min(n) || got.len() > inst.budget {
        return Err(format!("budget violated: {} not in [{nc}, {}]", got.len(), inst.budget));
    }
    if got.origin_union() != (0..n).collect::<Vec<_>>() {
        return Err("origin union differs from input set".into());
    }
    Ok(())
}

pub fn suite_coprune(rng: &mut ChaCha8Rng, n_max: usize, trials: usize) -> SuiteResult {
    let mut t = Tally::new("coprune");
    for trial in 0..trials {
        let inst = random_coprune_instance(rng, n_max);
        let res = coprune_matches(&inst);
        t.record(res.is_ok(), || format!("trial {trial}: {}", res.unwrap_err()));
    }
    t.finish()
}

pub fn suite_stage3(rng: &mut ChaCha8Rng, n_max: usize, trials: usize) -> SuiteResult {
    let mut t = Tally::new("stage3_norm_topk");
    for trial in 0..trials {
        let heads = rng.random_range(1..=4);
        let n = rng.random_range(1..=n_max.max(1));
        let k = rng.random_range(1..=n);
        let d_head = rng.random_range(1..=8);
        let keys = random_keys(rng, heads, n, d_head);
        let norms = ref_key_norm(&keys_as_rows(&keys));
        let want = ref_top_k(&norms, k, false);
        let ok = key_l2_norm(keys.view())
            .and_then(|s| select_top_k(&s, k))
            .is_ok_and(|g| g == want);
        t.record(ok, || format!("trial {trial}: n={n} k={k}"));
    }
    t.finish()
}

pub fn suite_format(rng: &mut ChaCha8Rng, n_max: usize, trials: usize) -> SuiteResult {
    let mut t = Tally::new("format_roundtrip");
    for trial in 0..trials {
        let b = random_bundle(rng, n_max);
        let bytes = encode_bundle(&b);
        let ok = decode_bundle(&bytes).is_ok_and(|back| back == b && encode_bundle(&back) == bytes);
        t.record(ok, || format!("trial {trial}: m={}", b.meta.m));
    }
    t.finish()
}

/// Every suite, in a fixed order, each drawing from the same seeded stream.
pub fn run_all(n_max: usize, trials: usize, seed: u64) -> Vec<SuiteResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    vec![
        suite_cls_saliency(&mut rng, n_max, trials),
        suite_key_norm(&mut rng, n_max, trials),
        suite_top_k(&mut rng, n_max, trials),
        suite_distances_density(&mut rng, n_max, trials),
        suite_vic(&mut rng, n_max, trials),
        suite_quota(&mut rng, n_max, trials),
        suite_coprune(&mut rng, n_max, trials),
        suite_stage3(&mut rng, n_max, trials),
        suite_format(&mut rng, n_max, trials),
    ]
}

pub fn render(results: &[SuiteResult]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:<20} {:>7} {:>10}  status", "suite", "trials", "mismatches");
    for r in results {
        let _ = writeln!(
            s,
            "{:<20} {:>7} {:>10}  {}",
            r.suite,
            r.trials,
            r.mismatches,
            if r.passed() { "ok" } else { "FAIL" }
        );
        if let Some(f) = &r.first_failure {
            let _ = writeln!(s, "  first failure: {f}");
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_quota_examples() {
        assert_eq!(ref_quotas(&[10], 5), vec![4]);
        assert_eq!(ref_quotas(&[6, 4], 7), vec![3, 2]);
        assert_eq!(ref_quotas(&[5, 3], 6), vec![3, 1]);
    }

    #[test]
    fn reference_vic_on_two_blobs() {
        let mut f = Vec::new();
        for i in 0..8 {
            f.push(vec![(i % 3) as f64 * 0.1, (i / 3) as f64 * 0.1]);
        }
        for i in 0..8 {
            f.push(vec![20.0 + (i % 3) as f64 * 0.1, 20.0 + (i / 3) as f64 * 0.1]);
        }
        let p = vec![vec![0.5, 0.5]; 16];
        let r = ref_vic(&f, &p, 1.0, 0.6, 0.125);
        assert_eq!(r.centers.len(), 2);
        assert!(r.labels[..8].iter().all(|&l| l == r.labels[0]));
        assert!(r.labels[8..].iter().all(|&l| l == r.labels[8]));
        assert_ne!(r.labels[0], r.labels[8]);
    }

    #[test]
    fn all_suites_pass_small() {
        for r in run_all(24, 30, 1) {
            assert!(r.passed(), "{r:?}");
        }
    }
}
