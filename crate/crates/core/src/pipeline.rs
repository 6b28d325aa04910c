//! Three-stage pruning over an activation bundle.
//!
//! Stage I keeps the top `floor(m·pi1)` tokens by `[CLS]` saliency. Stage II,
//! at LLM layer `l_s`, clusters the survivors and co-prunes them to a budget
//! of `floor(m·pi2)`. Stage III, at `l_d`, keeps the `floor(m·pi3)` tokens
//! with the smallest key norms.
//!
//! The engine never runs transformer layers. Key vectors for every stage are
//! read from the bundle, which was captured from an unpruned forward pass; a
//! merged token's keys are the mean of its members' keys.

use std::fmt;

use ndarray::{Array2, Array3, Axis};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cost::{CostReport, FlopsConfig};
use crate::copruning::coprune;
use crate::model::{validate_bundle, ActivationBundle, KindCounts, TokenSet};
use crate::saliency::{cls_saliency, key_l2_norm, select_top_k, Direction, ScoreVector};
use crate::schedule::PruneSchedule;
use crate::vic::{cluster, VicParams};
use crate::{BundleError, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage {
    I,
    II,
    III,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::I => "I",
            Stage::II => "II",
            Stage::III => "III",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTrace {
    pub stage: Stage,
    pub input_count: usize,
    pub output_count: usize,
    /// Count the schedule asked for at this stage.
    pub target: usize,
    /// Sorted original indices still represented after the stage.
    pub kept_indices: Vec<usize>,
    pub kind_counts: KindCounts,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl StageTrace {
    fn new(stage: Stage, input_count: usize, target: usize, out: &TokenSet) -> Self {
        Self {
            stage,
            input_count,
            output_count: out.len(),
            target,
            kept_indices: out.origin_union(),
            kind_counts: out.kind_counts(),
            note: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PruneStrategy {
    /// Clustering plus key-norm co-pruning at stage II.
    Vitcop,
    /// Text-agnostic: `[CLS]` saliency top-k at stages II and III.
    AttentionTopk,
    /// Seeded uniform choice at stages II and III.
    Random { seed: u64 },
    /// Key-norm top-k at stage II, no clustering.
    NormOnly,
    /// Dumped text-to-visual attention top-k at stages II and III.
    AttentionOnly,
}

impl PruneStrategy {
    pub fn name(&self) -> &'static str {
        match self {
            PruneStrategy::Vitcop => "vitcop",
            PruneStrategy::AttentionTopk => "attention_topk_baseline",
            PruneStrategy::Random { .. } => "random_baseline",
            PruneStrategy::NormOnly => "norm_only",
            PruneStrategy::AttentionOnly => "attention_only",
        }
    }

    pub fn parse(name: &str, seed: Option<u64>) -> Result<Self> {
        Ok(match name {
            "vitcop" => PruneStrategy::Vitcop,
            "attention_topk_baseline" => PruneStrategy::AttentionTopk,
            "random_baseline" => PruneStrategy::Random {
                seed: seed.ok_or_else(|| {
                    Error::InvalidParameter("random_baseline requires a seed".into())
                })?,
            },
            "norm_only" => PruneStrategy::NormOnly,
            "attention_only" => PruneStrategy::AttentionOnly,
            other => return Err(Error::InvalidParameter(format!("unknown strategy {other}"))),
        })
    }
}

/// Per-head key vectors for the live tokens: `heads × tokens × d_head`.
pub fn live_keys(keys: &Array3<f32>, tokens: &TokenSet) -> Result<Array3<f64>> {
    let (heads, m, d_head) = keys.dim();
    if let Some(&bad) = tokens.origin.iter().flatten().find(|&&o| o >= m) {
        return Err(Error::InvalidParameter(format!(
            "token origin {bad} outside key tensor of {m} tokens"
        )));
    }
    let mut out = Array3::zeros((heads, tokens.len(), d_head));
    for (t, origin) in tokens.origin.iter().enumerate() {
        let rows = keys.select(Axis(1), origin).mapv(f64::from);
        let mean = rows.mean_axis(Axis(1)).ok_or(Error::NoTokens)?;
        out.index_axis_mut(Axis(1), t).assign(&mean);
    }
    Ok(out)
}

/// Per-token score from a `heads × m` attention dump, summed over heads and
/// averaged over each token's origin.
fn live_attention(attn: &Array2<f32>, tokens: &TokenSet) -> Result<ScoreVector> {
    let summed: Vec<f64> = attn.mapv(f64::from).sum_axis(Axis(0)).to_vec();
    let values = tokens
        .origin
        .iter()
        .map(|o| o.iter().map(|&i| summed[i]).sum::<f64>() / o.len() as f64)
        .collect();
    ScoreVector::new(values, Direction::LargerIsBetter)
}

pub fn run_stage1(bundle: &ActivationBundle, pi1: f64) -> Result<(TokenSet, StageTrace)> {
    let m = bundle.meta.m;
    let k1 = crate::schedule::keep_count(m, pi1);
    if k1 < 1 {
        return Err(Error::ZeroBudget);
    }
    let scores = cls_saliency(bundle.cls_attention.mapv(f64::from).view())?;
    let kept = select_top_k(&scores, k1)?;
    let all = TokenSet::from_bundle(bundle);
    let out = all.select(&kept);
    let trace = StageTrace::new(Stage::I, all.len(), k1, &out);
    Ok((out, trace))
}

/// Stage II co-pruning. `keys` is the bundle's key tensor at `l_s`.
pub fn run_stage2(
    tokens: &TokenSet,
    keys: &Array3<f32>,
    m: usize,
    schedule: &PruneSchedule,
) -> Result<(TokenSet, StageTrace)> {
    let budget = schedule.budget(m);
    let params = VicParams {
        d_c: schedule.d_c,
        tau: schedule.tau,
        alpha: schedule.alpha,
    };
    let assignment = cluster(tokens.features.view(), tokens.positions.view(), params)?;
    let norms = key_l2_norm(live_keys(keys, tokens)?.view())?;
    let out = coprune(tokens, &assignment, &norms, budget)?;
    let trace = StageTrace::new(Stage::II, tokens.len(), budget, &out);
    Ok((out, trace))
}

/// Stage III key-norm pruning. `keys` is the bundle's key tensor at `l_d`.
pub fn run_stage3(
    tokens: &TokenSet,
    keys: &Array3<f32>,
    pi3: f64,
    m: usize,
) -> Result<(TokenSet, StageTrace)> {
    let k3 = crate::schedule::keep_count(m, pi3);
    let norms = key_l2_norm(live_keys(keys, tokens)?.view())?;
    topk_stage(Stage::III, tokens, &norms, k3)
}

fn topk_stage(
    stage: Stage,
    tokens: &TokenSet,
    scores: &ScoreVector,
    k: usize,
) -> Result<(TokenSet, StageTrace)> {
    if k >= tokens.len() {
        let mut trace = StageTrace::new(stage, tokens.len(), k, tokens);
        trace.note = Some(format!(
            "target {k} >= live count {}; stage skipped",
            tokens.len()
        ));
        return Ok((tokens.clone(), trace));
    }
    let kept = select_top_k(scores, k)?;
    let out = tokens.select(&kept);
    Ok((out.clone(), StageTrace::new(stage, tokens.len(), k, &out)))
}

fn random_stage(
    stage: Stage,
    tokens: &TokenSet,
    k: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(TokenSet, StageTrace)> {
    if k == 0 {
        return Err(Error::ZeroBudget);
    }
    if k >= tokens.len() {
        return topk_stage(stage, tokens, &ScoreVector::new(vec![0.0; tokens.len()], Direction::LargerIsBetter)?, k);
    }
    let mut kept = sample(rng, tokens.len(), k).into_vec();
    kept.sort_unstable();
    let out = tokens.select(&kept);
    Ok((out.clone(), StageTrace::new(stage, tokens.len(), k, &out)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutput {
    pub tokens: TokenSet,
    pub traces: Vec<StageTrace>,
    pub cost: CostReport,
}

/// Runs all three stages. Counts are taken relative to the bundle's `m`;
/// FLOPs use the bundle's model dims with the schedule's text length and the
/// paper-mode FFN term.
pub fn run_pipeline(
    bundle: &ActivationBundle,
    schedule: &PruneSchedule,
    strategy: PruneStrategy,
) -> Result<PipelineOutput> {
    let violations = validate_bundle(bundle);
    if !violations.is_empty() {
        return Err(BundleError::Invalid(violations).into());
    }
    let m = bundle.meta.m;
    schedule.validate_for(m, bundle.meta.n_layers)?;
    let keys_s = bundle.keys_at(schedule.l_s)?;
    let keys_d = bundle.keys_at(schedule.l_d)?;

    let (t1, tr1) = run_stage1(bundle, schedule.pi1)?;
    let budget = schedule.budget(m);
    let k3 = schedule.stage3_count(m);

    let ((t2, tr2), (t3, tr3)) = match strategy {
        PruneStrategy::Vitcop => {
            let s2 = run_stage2(&t1, keys_s, m, schedule)?;
            let s3 = run_stage3(&s2.0, keys_d, schedule.pi3, m)?;
            (s2, s3)
        }
        PruneStrategy::NormOnly => {
            let norms = key_l2_norm(live_keys(keys_s, &t1)?.view())?;
            let s2 = topk_stage(Stage::II, &t1, &norms, budget)?;
            let s3 = run_stage3(&s2.0, keys_d, schedule.pi3, m)?;
            (s2, s3)
        }
        PruneStrategy::AttentionTopk => {
            let cls = cls_saliency(bundle.cls_attention.mapv(f64::from).view())?;
            let pick = |ts: &TokenSet| {
                let v = ts
                    .origin
                    .iter()
                    .map(|o| o.iter().map(|&i| cls.values()[i]).sum::<f64>() / o.len() as f64)
                    .collect();
                ScoreVector::new(v, Direction::LargerIsBetter)
            };
            let s2 = topk_stage(Stage::II, &t1, &pick(&t1)?, budget)?;
            let s3 = topk_stage(Stage::III, &s2.0, &pick(&s2.0)?, k3)?;
            (s2, s3)
        }
        PruneStrategy::AttentionOnly => {
            let a_s = bundle.text_attention_at(schedule.l_s)?;
            let a_d = bundle.text_attention_at(schedule.l_d)?;
            let s2 = topk_stage(Stage::II, &t1, &live_attention(a_s, &t1)?, budget)?;
            let s3 = topk_stage(Stage::III, &s2.0, &live_attention(a_d, &s2.0)?, k3)?;
            (s2, s3)
        }
        PruneStrategy::Random { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s2 = random_stage(Stage::II, &t1, budget, &mut rng)?;
            let s3 = random_stage(Stage::III, &s2.0, k3, &mut rng)?;
            (s2, s3)
        }
    };

    let cfg = FlopsConfig::paper(bundle.meta.d, bundle.meta.n_layers, schedule.model.n_text);
    let cost = CostReport::realized(
        [t1.len(), t2.len(), t3.len()],
        schedule.l_s,
        schedule.l_d,
        m,
        &cfg,
    );
    Ok(PipelineOutput {
        tokens: t3,
        traces: vec![tr1, tr2, tr3],
        cost,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{synth_bundle, SynthConfig};

    fn bundle(m: usize, seed: u64) -> ActivationBundle {
        synth_bundle(&SynthConfig { m, ..SynthConfig::small() }, seed)
    }

    #[test]
    fn stage1_picks_salient_tokens() {
        let mut b = bundle(4, 1);
        b.cls_attention = ndarray::array![[0.4f32, 0.1, 0.3, 0.2]];
        b.meta.h_enc = 1;
        let (ts, tr) = run_stage1(&b, 0.5).unwrap();
        assert_eq!(tr.kept_indices, vec![0, 2]);
        assert_eq!(ts.origin, vec![vec![0], vec![2]]);
        let (all, _) = run_stage1(&b, 1.0).unwrap();
        assert_eq!(all.len(), 4);
        assert!(run_stage1(&b, 0.1).is_err());
    }

    #[test]
    fn stage2_single_cluster_degenerate() {
        let b = bundle(10, 2);
        let mut ts = TokenSet::from_bundle(&b);
        ts.features.fill(1.0);
        ts.positions.fill(0.5);
        let mut s = PruneSchedule::preset("p889").unwrap();
        (s.pi1, s.pi2, s.pi3, s.alpha) = (1.0, 0.5, 0.1, 0.1);
        let keys = b.keys_at(s.l_s).unwrap();
        let (out, tr) = run_stage2(&ts, keys, 10, &s).unwrap();
        assert_eq!(tr.target, 5);
        assert_eq!(out.len(), 5);
        assert_eq!(out.kind_counts().elite, 4);
        assert_eq!(out.kind_counts().merged, 1);
    }

    #[test]
    fn stage3_noop_when_already_small() {
        let b = bundle(10, 3);
        let ts = TokenSet::from_bundle(&b).select(&[1, 4, 6]);
        let keys = b.keys_at(22).unwrap();
        let (out, tr) = run_stage3(&ts, keys, 0.3, 10).unwrap();
        assert_eq!(out, ts);
        assert!(tr.note.is_some());
        let (out, tr) = run_stage3(&ts, keys, 0.2, 10).unwrap();
        assert_eq!(out.len(), 2);
        assert!(tr.note.is_none());
    }

    #[test]
    fn preset_counts_on_576_tokens() {
        let b = bundle(576, 4);
        for (name, want) in [("p889", [172, 77, 15]), ("p667", [288, 253, 50])] {
            let s = PruneSchedule::preset(name).unwrap();
            let out = run_pipeline(&b, &s, PruneStrategy::Vitcop).unwrap();
            let counts: Vec<usize> = out.traces.iter().map(|t| t.output_count).collect();
            assert_eq!(counts[0], want[0], "{name}");
            assert!(counts[1] <= want[1], "{name}");
            assert_eq!(counts[2], want[2], "{name}");
            assert!(out.tokens.check(576).is_empty());
        }
    }

    #[test]
    fn every_strategy_runs() {
        let b = bundle(64, 5);
        let s = {
            let mut s = PruneSchedule::preset("p667").unwrap();
            s.alpha = 0.2;
            s
        };
        for strat in [
            PruneStrategy::Vitcop,
            PruneStrategy::NormOnly,
            PruneStrategy::AttentionTopk,
            PruneStrategy::AttentionOnly,
            PruneStrategy::Random { seed: 9 },
        ] {
            let out = run_pipeline(&b, &s, strat).unwrap();
            let stage1: Vec<usize> = out.traces[0].kept_indices.clone();
            for idx in out.tokens.origin_union() {
                assert!(stage1.binary_search(&idx).is_ok(), "{}", strat.name());
            }
            let c: Vec<usize> = out.traces.iter().map(|t| t.output_count).collect();
            assert!(c.windows(2).all(|w| w[0] >= w[1]));
        }
    }

    #[test]
    fn random_is_seeded() {
        let b = bundle(64, 6);
        let s = PruneSchedule::preset("p778").unwrap();
        let a = run_pipeline(&b, &s, PruneStrategy::Random { seed: 11 }).unwrap();
        let c = run_pipeline(&b, &s, PruneStrategy::Random { seed: 11 }).unwrap();
        assert_eq!(a.traces, c.traces);
        let d = run_pipeline(&b, &s, PruneStrategy::Random { seed: 12 }).unwrap();
        assert_ne!(a.traces, d.traces);
    }

    #[test]
    fn missing_layers_are_named() {
        let mut b = bundle(64, 7);
        b.key_vectors.remove(&22);
        let s = PruneSchedule::preset("p667").unwrap();
        let err = run_pipeline(&b, &s, PruneStrategy::Vitcop).unwrap_err();
        assert!(err.to_string().contains("layer 22"));
        let mut b = bundle(64, 7);
        b.text_attention.clear();
        assert!(matches!(
            run_pipeline(&b, &s, PruneStrategy::AttentionOnly),
            Err(Error::MissingLayer { tensor: "text_attention", .. })
        ));
    }

    #[test]
    fn identity_schedule() {
        let b = bundle(48, 8);
        let mut s = PruneSchedule::preset("p889").unwrap();
        (s.pi1, s.pi2, s.pi3, s.alpha) = (1.0, 1.0, 1.0, 1.0);
        let out = run_pipeline(&b, &s, PruneStrategy::Vitcop).unwrap();
        assert_eq!(out.tokens, TokenSet::from_bundle(&b));
        assert_eq!(out.cost.cr_int, 0.0);
    }

    #[test]
    fn merged_token_keys_are_member_means() {
        let b = bundle(8, 9);
        let ts = TokenSet {
            features: Array2::zeros((1, b.d_feat())),
            positions: Array2::zeros((1, 2)),
            origin: vec![vec![1, 5]],
            kind: vec![crate::model::TokenKind::Merged],
        };
        let keys = b.keys_at(2).unwrap();
        let live = live_keys(keys, &ts).unwrap();
        for h in 0..keys.dim().0 {
            for c in 0..keys.dim().2 {
                let want = (keys[[h, 1, c]] as f64 + keys[[h, 5, c]] as f64) / 2.0;
                assert!((live[[h, 0, c]] - want).abs() < 1e-12);
            }
        }
    }
}
