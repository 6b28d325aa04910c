//! Shared domain types: the dumped activation bundle, the live token set that
//! flows through the pruning stages, and the clustering output.
//!
//! Tensors are stored as `f32` in bundles; everything downstream of a bundle
//! computes in `f64`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use ndarray::{Array2, Array3, Axis};
use serde::{Deserialize, Serialize};

/// Model-level metadata recorded alongside a bundle's tensors.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BundleMeta {
    pub model: String,
    /// Original visual token count.
    pub m: usize,
    /// LLM hidden size.
    pub d: usize,
    pub n_layers: usize,
    pub h_enc: usize,
    pub h_llm: usize,
    pub d_head: usize,
}

/// One sample's dumped tensors.
///
/// `key_vectors[l]` is `h_llm × m × d_head` and holds the per-head keys of
/// every original visual token at LLM layer `l`, captured from an unpruned
/// forward pass. `text_attention[l]` is an optional `h_llm × m` dump of the
/// attention text queries pay to each visual token, used only by the
/// attention baseline.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationBundle {
    pub meta: BundleMeta,
    pub token_features: Array2<f32>,
    pub token_positions: Array2<f32>,
    pub cls_attention: Array2<f32>,
    pub key_vectors: BTreeMap<usize, Array3<f32>>,
    pub text_attention: BTreeMap<usize, Array2<f32>>,
}

impl ActivationBundle {
    pub fn n_tokens(&self) -> usize {
        self.token_features.nrows()
    }

    pub fn d_feat(&self) -> usize {
        self.token_features.ncols()
    }

    pub fn keys_at(&self, layer: usize) -> crate::Result<&Array3<f32>> {
        self.key_vectors.get(&layer).ok_or(crate::Error::MissingLayer {
            tensor: "key_vectors",
            layer,
        })
    }

    pub fn text_attention_at(&self, layer: usize) -> crate::Result<&Array2<f32>> {
        self.text_attention.get(&layer).ok_or(crate::Error::MissingLayer {
            tensor: "text_attention",
            layer,
        })
    }
}

/// A broken bundle or token-set invariant.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub field: String,
    pub reason: String,
}

impl Violation {
    fn new(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.reason)
    }
}

/// Checks every bundle invariant and returns the violations found. An empty
/// list means the bundle is well-formed.
pub fn validate_bundle(bundle: &ActivationBundle) -> Vec<Violation> {
    let mut out = Vec::new();
    let meta = &bundle.meta;
    let n = bundle.n_tokens();

    if n != meta.m {
        out.push(Violation::new(
            "token_features",
            format!("shape mismatch: {n} rows but meta.m = {}", meta.m),
        ));
    }
    if bundle.d_feat() == 0 {
        out.push(Violation::new("token_features", "zero feature dimension"));
    }
    if bundle.token_features.iter().any(|v| !v.is_finite()) {
        out.push(Violation::new("token_features", "non-finite value"));
    }

    let pos = &bundle.token_positions;
    if pos.dim() != (n, 2) {
        out.push(Violation::new(
            "token_positions",
            format!("shape mismatch: {:?}, expected ({n}, 2)", pos.dim()),
        ));
    }
    if let Some((i, v)) = pos
        .indexed_iter()
        .find(|(_, v)| !(0.0..=1.0).contains(*v))
        .map(|(i, v)| (i, *v))
    {
        out.push(Violation::new(
            "token_positions",
            format!("position out of [0,1]: {v} at {i:?}"),
        ));
    }

    let cls = &bundle.cls_attention;
    if cls.dim() != (meta.h_enc, n) {
        out.push(Violation::new(
            "cls_attention",
            format!(
                "shape mismatch: {:?}, expected ({}, {n})",
                cls.dim(),
                meta.h_enc
            ),
        ));
    }
    if cls.iter().any(|v| !v.is_finite() || *v < 0.0) {
        out.push(Violation::new(
            "cls_attention",
            "entries must be finite and nonnegative",
        ));
    }

    for (&layer, keys) in &bundle.key_vectors {
        let field = format!("key_vectors_l{layer}");
        if layer == 0 || layer > meta.n_layers {
            out.push(Violation::new(
                &field,
                format!("layer outside 1..={}", meta.n_layers),
            ));
        }
        let want = (meta.h_llm, meta.m, meta.d_head);
        if keys.dim() != want {
            out.push(Violation::new(
                &field,
                format!("shape mismatch: {:?}, expected {want:?}", keys.dim()),
            ));
        }
        if keys.iter().any(|v| !v.is_finite()) {
            out.push(Violation::new(&field, "non-finite value"));
        }
    }

    for (&layer, attn) in &bundle.text_attention {
        let field = format!("text_attention_l{layer}");
        if layer == 0 || layer > meta.n_layers {
            out.push(Violation::new(
                &field,
                format!("layer outside 1..={}", meta.n_layers),
            ));
        }
        if attn.dim() != (meta.h_llm, meta.m) {
            out.push(Violation::new(
                &field,
                format!(
                    "shape mismatch: {:?}, expected ({}, {})",
                    attn.dim(),
                    meta.h_llm,
                    meta.m
                ),
            ));
        }
        if attn.iter().any(|v| !v.is_finite() || *v < 0.0) {
            out.push(Violation::new(
                &field,
                "entries must be finite and nonnegative",
            ));
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TokenKind {
    Kept,
    Elite,
    Merged,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KindCounts {
    pub kept: usize,
    pub elite: usize,
    pub merged: usize,
}

/// The live working set of visual tokens.
///
/// `origin[i]` lists the original bundle indices that token `i` stands for:
/// a single index for kept and elite tokens, several for merged tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenSet {
    pub features: Array2<f64>,
    pub positions: Array2<f64>,
    pub origin: Vec<Vec<usize>>,
    pub kind: Vec<TokenKind>,
}

impl TokenSet {
    /// Every bundle token, as kept tokens in original order.
    pub fn from_bundle(bundle: &ActivationBundle) -> Self {
        let n = bundle.n_tokens();
        Self {
            features: bundle.token_features.mapv(f64::from),
            positions: bundle.token_positions.mapv(f64::from),
            origin: (0..n).map(|i| vec![i]).collect(),
            kind: vec![TokenKind::Kept; n],
        }
    }

    pub fn len(&self) -> usize {
        self.origin.len()
    }

    pub fn is_empty(&self) -> bool {
        self.origin.is_empty()
    }

    /// Sub-selects tokens by position, preserving their kinds.
    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            features: self.features.select(Axis(0), indices),
            positions: self.positions.select(Axis(0), indices),
            origin: indices.iter().map(|&i| self.origin[i].clone()).collect(),
            kind: indices.iter().map(|&i| self.kind[i]).collect(),
        }
    }

    /// Sorted union of all origin lists.
    pub fn origin_union(&self) -> Vec<usize> {
        let set: BTreeSet<usize> = self.origin.iter().flatten().copied().collect();
        set.into_iter().collect()
    }

    pub fn kind_counts(&self) -> KindCounts {
        let mut c = KindCounts::default();
        for k in &self.kind {
            match k {
                TokenKind::Kept => c.kept += 1,
                TokenKind::Elite => c.elite += 1,
                TokenKind::Merged => c.merged += 1,
            }
        }
        c
    }

    /// Invariant check against the original token count `m`.
    pub fn check(&self, m: usize) -> Vec<Violation> {
        let mut out = Vec::new();
        let k = self.len();
        if self.features.nrows() != k || self.positions.dim() != (k, 2) || self.kind.len() != k {
            out.push(Violation::new("token_set", "row counts disagree"));
        }
        let total: usize = self.origin.iter().map(Vec::len).sum();
        if total != self.origin_union().len() {
            out.push(Violation::new("origin", "origin lists overlap"));
        }
        if self.origin.iter().flatten().any(|&i| i >= m) {
            out.push(Violation::new("origin", format!("index >= m ({m})")));
        }
        for (i, (o, kind)) in self.origin.iter().zip(&self.kind).enumerate() {
            if o.is_empty() {
                out.push(Violation::new("origin", format!("token {i} has no origin")));
            }
            if (*kind == TokenKind::Merged) != (o.len() > 1) {
                out.push(Violation::new(
                    "kind",
                    format!("token {i}: kind {kind:?} with {} origins", o.len()),
                ));
            }
        }
        out
    }
}

/// Output of visual information clustering.
///
/// Cluster ids run `1..=centers.len()`; `centers[k - 1]` is the token index
/// of cluster `k`'s center.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterAssignment {
    pub labels: Vec<usize>,
    pub centers: Vec<usize>,
    pub rho: Vec<f64>,
    pub delta: Vec<f64>,
    pub gamma: Vec<f64>,
    pub parent: Vec<Option<usize>>,
}

impl ClusterAssignment {
    pub fn n_clusters(&self) -> usize {
        self.centers.len()
    }

    /// Token indices grouped by cluster id, each group ascending.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut groups = vec![Vec::new(); self.n_clusters()];
        for (i, &label) in self.labels.iter().enumerate() {
            if (1..=groups.len()).contains(&label) {
                groups[label - 1].push(i);
            }
        }
        groups
    }
}
