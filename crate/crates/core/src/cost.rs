//! Analytical FLOPs and token-compression accounting for a pruned LLM pass.

use serde::{Deserialize, Serialize};

use crate::schedule::PruneSchedule;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum FfnMode {
    /// `16·N·d²` per layer.
    Paper,
    /// `2·N·d·d_ffn·k` per layer, `k` being the number of FFN projections.
    Intermediate { d_ffn: usize, k: f64 },
}

impl FfnMode {
    pub fn name(&self) -> &'static str {
        match self {
            FfnMode::Paper => "paper",
            FfnMode::Intermediate { .. } => "intermediate",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlopsConfig {
    pub d: usize,
    pub n_layers: usize,
    pub n_text: usize,
    pub attn_coeff: f64,
    pub ffn: FfnMode,
}

impl FlopsConfig {
    pub fn paper(d: usize, n_layers: usize, n_text: usize) -> Self {
        Self {
            d,
            n_layers,
            n_text,
            attn_coeff: 4.0,
            ffn: FfnMode::Paper,
        }
    }

    /// Config for the schedule's model dims. The intermediate mode requires
    /// `model.d_ffn`.
    pub fn from_schedule(schedule: &PruneSchedule, mode: &str) -> Result<Self> {
        let m = &schedule.model;
        let ffn = match mode {
            "paper" => FfnMode::Paper,
            "intermediate" => FfnMode::Intermediate {
                d_ffn: m.d_ffn.ok_or_else(|| {
                    Error::Schedule("intermediate FFN mode needs model.d_ffn".into())
                })?,
                k: m.ffn_k,
            },
            other => return Err(Error::InvalidParameter(format!("unknown ffn mode {other}"))),
        };
        Ok(Self {
            ffn,
            ..Self::paper(m.d, m.n_layers, m.n_text)
        })
    }
}

/// Cost of one transformer layer over a sequence of length `n`.
pub fn flops_layer(n: f64, cfg: &FlopsConfig) -> f64 {
    let d = cfg.d as f64;
    let attention = cfg.attn_coeff * n * n * d;
    let ffn = match cfg.ffn {
        FfnMode::Paper => 16.0 * n * d * d,
        FfnMode::Intermediate { d_ffn, k } => 2.0 * n * d * d_ffn as f64 * k,
    };
    attention + ffn
}

/// Visual tokens alive at LLM layer `l` (1-based) under the schedule.
pub fn nv_at_layer(l: usize, schedule: &PruneSchedule, m: usize) -> Result<usize> {
    let n = schedule.model.n_layers;
    if l == 0 || l > n {
        return Err(Error::InvalidParameter(format!("layer {l} outside 1..={n}")));
    }
    Ok(if l < schedule.l_s {
        schedule.stage1_count(m)
    } else if l < schedule.l_d {
        schedule.budget(m)
    } else {
        schedule.stage3_count(m)
    })
}

fn segment_lengths(schedule: &PruneSchedule, n_layers: usize) -> [f64; 3] {
    [
        (schedule.l_s - 1) as f64,
        (schedule.l_d - schedule.l_s) as f64,
        (n_layers + 1 - schedule.l_d) as f64,
    ]
}

/// Total LLM FLOPs with the three segments at `pi·m + n_text` tokens each.
pub fn total_flops(schedule: &PruneSchedule, cfg: &FlopsConfig) -> f64 {
    let m = schedule.model.m as f64;
    let t = cfg.n_text as f64;
    let seg = segment_lengths(schedule, cfg.n_layers);
    let pis = [schedule.pi1, schedule.pi2, schedule.pi3];
    seg.iter()
        .zip(pis)
        .map(|(len, pi)| len * flops_layer(pi * m + t, cfg))
        .sum()
}

pub fn vanilla_flops(m: usize, cfg: &FlopsConfig) -> f64 {
    cfg.n_layers as f64 * flops_layer((m + cfg.n_text) as f64, cfg)
}

/// Fraction of visual-token slots removed, averaged over all LLM layers.
pub fn integrated_compression_ratio(schedule: &PruneSchedule) -> f64 {
    let n = schedule.model.n_layers;
    let m = schedule.model.m as f64;
    let seg = segment_lengths(schedule, n);
    let kept = (schedule.pi1 * m) * seg[0] + (schedule.pi2 * m) * seg[1] + (schedule.pi3 * m) * seg[2];
    1.0 - kept / (n as f64 * m)
}

/// Operation-count estimates for the pruning stages themselves, unit
/// constants: `m·log2 m`, `n_s²`, `n_d·log2 n_d`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageOverhead {
    pub stage1: f64,
    pub stage2: f64,
    pub stage3: f64,
}

fn n_log_n(n: f64) -> f64 {
    if n > 1.0 {
        n * n.log2()
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CostBasis {
    /// Evaluated from the schedule's real-valued ratios.
    Analytic,
    /// Evaluated from the token counts a pipeline run actually produced.
    Realized,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub basis: CostBasis,
    pub ffn_mode: String,
    pub m: usize,
    pub n_text: usize,
    pub nv_per_layer: Vec<usize>,
    pub flops_total: f64,
    pub flops_vanilla: f64,
    pub cr_int: f64,
    pub overhead: StageOverhead,
}

impl CostReport {
    /// `nv_per_layer` lists the floored per-layer counts; the FLOPs and
    /// compression totals use the unrounded `pi·m`.
    pub fn analytic(schedule: &PruneSchedule, cfg: &FlopsConfig) -> Result<Self> {
        let m = schedule.model.m;
        let nv_per_layer = (1..=schedule.model.n_layers)
            .map(|l| nv_at_layer(l, schedule, m))
            .collect::<Result<Vec<_>>>()?;
        let mf = m as f64;
        Ok(Self {
            basis: CostBasis::Analytic,
            ffn_mode: cfg.ffn.name().into(),
            m,
            n_text: cfg.n_text,
            nv_per_layer,
            flops_total: total_flops(schedule, cfg),
            flops_vanilla: vanilla_flops(m, cfg),
            cr_int: integrated_compression_ratio(schedule),
            overhead: StageOverhead {
                stage1: n_log_n(mf),
                stage2: (schedule.pi1 * mf).powi(2),
                stage3: n_log_n(schedule.pi2 * mf),
            },
        })
    }

    /// Report for a run that kept `counts[s]` visual tokens after stage
    /// `s`, with stage II firing at `l_s` and stage III at `l_d`.
    pub fn realized(
        counts: [usize; 3],
        l_s: usize,
        l_d: usize,
        m: usize,
        cfg: &FlopsConfig,
    ) -> Self {
        let nv_per_layer: Vec<usize> = (1..=cfg.n_layers)
            .map(|l| {
                if l < l_s {
                    counts[0]
                } else if l < l_d {
                    counts[1]
                } else {
                    counts[2]
                }
            })
            .collect();
        let flops_total = nv_per_layer
            .iter()
            .map(|&nv| flops_layer((nv + cfg.n_text) as f64, cfg))
            .sum();
        let kept: usize = nv_per_layer.iter().sum();
        Self {
            basis: CostBasis::Realized,
            ffn_mode: cfg.ffn.name().into(),
            m,
            n_text: cfg.n_text,
            nv_per_layer,
            flops_total,
            flops_vanilla: vanilla_flops(m, cfg),
            cr_int: 1.0 - kept as f64 / (cfg.n_layers * m) as f64,
            overhead: StageOverhead {
                stage1: n_log_n(m as f64),
                stage2: (counts[0] as f64).powi(2),
                stage3: n_log_n(counts[1] as f64),
            },
        }
    }
}
