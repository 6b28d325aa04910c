//! Line-delimited JSON report records and the matching human-readable
//! tables.
//!
//! Every record is one JSON object on one line with a `"record"` tag:
//! `header` (once per run), `stage` (per bundle per stage), `cost` (per
//! bundle), `error` (per bundle that failed), `analysis` (from `analyze`) and
//! `oracle` (per suite from `oracle-check`). Tables only show numbers the
//! records also carry.

use std::fmt::Write as _;

use serde::Serialize;

use crate::cost::CostReport;
use crate::oracle::SuiteResult;
use crate::pipeline::StageTrace;
use crate::schedule::PruneSchedule;

pub const FIDELITY_NOTE: &str = "stage II/III key vectors come from an unpruned forward pass; \
     merged tokens use the mean of their members' keys";

#[derive(Debug, Clone, Serialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum Record {
    Header {
        tool: String,
        version: String,
        strategy: String,
        #[serde(skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
        schedule: PruneSchedule,
        bundles: Vec<String>,
        fidelity_note: String,
    },
    Stage {
        bundle: String,
        #[serde(flatten)]
        trace: StageTrace,
    },
    Cost {
        bundle: String,
        /// Visual tokens left after the last stage.
        final_tokens: usize,
        /// Visual tokens averaged over all LLM layers, `(1 - cr_int) * m`.
        mean_tokens_per_layer: f64,
        #[serde(flatten)]
        cost: CostReport,
    },
    Error {
        bundle: String,
        code: String,
        message: String,
    },
    Analysis {
        schedule: PruneSchedule,
        stage_counts: [usize; 3],
        mean_tokens_per_layer: f64,
        #[serde(flatten)]
        cost: CostReport,
    },
    Oracle {
        #[serde(flatten)]
        result: SuiteResult,
        seed: u64,
        n_max: usize,
    },
}

impl Record {
    pub fn to_line(&self) -> String {
        let mut s = serde_json::to_string(self).expect("records serialize");
        s.push('\n');
        s
    }

    pub fn cost(bundle: &str, cost: &CostReport) -> Self {
        Record::Cost {
            bundle: bundle.into(),
            final_tokens: cost.nv_per_layer.last().copied().unwrap_or(0),
            mean_tokens_per_layer: mean_tokens(cost),
            cost: cost.clone(),
        }
    }
}

pub fn mean_tokens(cost: &CostReport) -> f64 {
    (1.0 - cost.cr_int) * cost.m as f64
}

/// Cost table: per-layer counts, totals and overheads.
pub fn cost_table(cost: &CostReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "basis        {:?}", cost.basis);
    let _ = writeln!(s, "ffn_mode     {}", cost.ffn_mode);
    let _ = writeln!(s, "m            {}", cost.m);
    let _ = writeln!(s, "n_text       {}", cost.n_text);
    let _ = writeln!(s, "layer  N_v");
    for (l, nv) in cost.nv_per_layer.iter().enumerate() {
        let _ = writeln!(s, "{:>5}  {nv}", l + 1);
    }
    let _ = writeln!(s, "flops_total    {:.6e}", cost.flops_total);
    let _ = writeln!(s, "flops_vanilla  {:.6e}", cost.flops_vanilla);
    let _ = writeln!(s, "cr_int         {:.4}", cost.cr_int);
    let _ = writeln!(s, "mean_tokens    {:.2}", mean_tokens(cost));
    let o = &cost.overhead;
    let _ = writeln!(
        s,
        "overhead       stage1 {:.1}  stage2 {:.1}  stage3 {:.1}",
        o.stage1, o.stage2, o.stage3
    );
    s
}

/// One line per stage: `bundle stage in -> out (target) elite/merged`.
pub fn trace_table(bundle: &str, traces: &[StageTrace]) -> String {
    let mut s = String::new();
    for t in traces {
        let k = &t.kind_counts;
        let _ = writeln!(
            s,
            "{bundle}  stage {:<3} {:>5} -> {:>5}  target {:>5}  kept {} elite {} merged {}",
            t.stage, t.input_count, t.output_count, t.target, k.kept, k.elite, k.merged
        );
    }
    s
}
