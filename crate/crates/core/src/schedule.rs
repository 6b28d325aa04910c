//! Pruning schedules: per-stage retention ratios, layer placement, clustering
//! parameters and the model dimensions used for cost accounting.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Absorbs representation error in `m * ratio` when the product is meant to
/// be an exact integer (e.g. `0.29 * 100`).
const FLOOR_EPS: f64 = 1e-9;

pub const DEFAULT_N_TEXT: usize = 40;
pub const DEFAULT_ALPHA: f64 = 0.125;
pub const DEFAULT_D_C: f64 = 8.0;
pub const DEFAULT_TAU: f64 = 0.6;
pub const DEFAULT_FFN_K: f64 = 3.0;

/// Preset names accepted wherever a schedule is expected.
pub const PRESETS: [&str; 4] = ["p667", "p778", "p889", "p944"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDims {
    pub m: usize,
    pub d: usize,
    pub n_layers: usize,
    #[serde(default = "default_n_text")]
    pub n_text: usize,
    /// FFN intermediate width, only used by the intermediate FLOPs mode.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d_ffn: Option<usize>,
    /// Number of `d × d_ffn` projections per FFN block.
    #[serde(default = "default_ffn_k")]
    pub ffn_k: f64,
}

fn default_n_text() -> usize {
    DEFAULT_N_TEXT
}

fn default_ffn_k() -> f64 {
    DEFAULT_FFN_K
}

impl ModelDims {
    pub fn llava_15_7b() -> Self {
        Self {
            m: 576,
            d: 4096,
            n_layers: 32,
            n_text: DEFAULT_N_TEXT,
            d_ffn: Some(11008),
            ffn_k: DEFAULT_FFN_K,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneSchedule {
    pub pi1: f64,
    pub pi2: f64,
    pub pi3: f64,
    pub l_s: usize,
    pub l_d: usize,
    #[serde(default = "default_d_c")]
    pub d_c: f64,
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    pub model: ModelDims,
}

fn default_d_c() -> f64 {
    DEFAULT_D_C
}

fn default_tau() -> f64 {
    DEFAULT_TAU
}

fn default_alpha() -> f64 {
    DEFAULT_ALPHA
}

/// `floor(m * ratio)`.
pub fn keep_count(m: usize, ratio: f64) -> usize {
    (m as f64 * ratio + FLOOR_EPS).floor().max(0.0) as usize
}

/// `ceil(n * alpha)`, clamped to `1..=n` for `n ≥ 1`.
pub fn center_count(n: usize, alpha: f64) -> usize {
    if n == 0 {
        return 0;
    }
    let c = (n as f64 * alpha - FLOOR_EPS).ceil() as usize;
    c.clamp(1, n)
}

/// Rescales a layer index placed for a `from`-layer model to a `to`-layer
/// model.
pub fn scale_layer(layer: usize, from: usize, to: usize) -> usize {
    ((layer * to) as f64 / from as f64).round().max(1.0) as usize
}

impl PruneSchedule {
    /// The per-stage retention ratios used for LLaVA-1.5-7B at the four
    /// overall pruning rates.
    pub fn preset(name: &str) -> Option<Self> {
        let (pi1, pi2, pi3) = match name {
            "p667" => (0.5000, 0.4394, 0.0879),
            "p778" => (0.4000, 0.2869, 0.0574),
            "p889" => (0.3000, 0.1343, 0.0269),
            "p944" => (0.2500, 0.0581, 0.0116),
            _ => return None,
        };
        Some(Self {
            pi1,
            pi2,
            pi3,
            l_s: 2,
            l_d: 22,
            d_c: DEFAULT_D_C,
            tau: DEFAULT_TAU,
            alpha: DEFAULT_ALPHA,
            model: ModelDims::llava_15_7b(),
        })
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Schedule(e.to_string()))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("schedule serializes")
    }

    /// Resolves a preset name, otherwise reads a TOML schedule file.
    pub fn load(name_or_path: &str) -> Result<Self> {
        if let Some(s) = Self::preset(name_or_path) {
            return Ok(s);
        }
        let text = std::fs::read_to_string(Path::new(name_or_path))
            .map_err(|e| Error::Schedule(format!("{name_or_path}: {e}")))?;
        Self::from_toml_str(&text)
    }

    /// Same ratios and parameters with layer placement rescaled to a model
    /// of `n_layers` depth.
    pub fn for_depth(&self, n_layers: usize) -> Self {
        let mut s = self.clone();
        if n_layers != self.model.n_layers {
            let from = self.model.n_layers.max(1);
            s.l_s = scale_layer(self.l_s, from, n_layers);
            s.l_d = scale_layer(self.l_d, from, n_layers).min(n_layers);
            s.model.n_layers = n_layers;
        }
        s
    }

    pub fn stage1_count(&self, m: usize) -> usize {
        keep_count(m, self.pi1)
    }

    pub fn budget(&self, m: usize) -> usize {
        keep_count(m, self.pi2)
    }

    pub fn stage3_count(&self, m: usize) -> usize {
        keep_count(m, self.pi3)
    }

    /// Checks the schedule's own invariants, using `model.m` and
    /// `model.n_layers`.
    pub fn validate(&self) -> Result<()> {
        self.validate_for(self.model.m, self.model.n_layers)
    }

    /// Checks the schedule against a concrete token count and depth.
    pub fn validate_for(&self, m: usize, n_layers: usize) -> Result<()> {
        let fail = |msg: String| Err(Error::Schedule(msg));
        for (name, p) in [("pi1", self.pi1), ("pi2", self.pi2), ("pi3", self.pi3)] {
            if !(p > 0.0 && p <= 1.0) {
                return fail(format!("{name}={p} not in (0, 1]"));
            }
        }
        if !(self.pi1 >= self.pi2 && self.pi2 >= self.pi3) {
            return fail("ratios must satisfy pi1 >= pi2 >= pi3".into());
        }
        if !(1 <= self.l_s && self.l_s < self.l_d && self.l_d <= n_layers) {
            return fail(format!(
                "layers must satisfy 1 <= l_s ({}) < l_d ({}) <= n_layers ({n_layers})",
                self.l_s, self.l_d
            ));
        }
        if !(self.d_c > 0.0 && self.d_c.is_finite()) {
            return fail(format!("d_c={} must be positive", self.d_c));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return fail(format!("tau={} must be positive", self.tau));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return fail(format!("alpha={} not in (0, 1]", self.alpha));
        }
        let k1 = self.stage1_count(m);
        if k1 < 1 {
            return fail(format!("stage I keeps no tokens (floor({m} * {}))", self.pi1));
        }
        if self.stage3_count(m) < 1 {
            return fail(format!("stage III keeps no tokens (floor({m} * {}))", self.pi3));
        }
        let budget = self.budget(m);
        let centers = center_count(k1, self.alpha);
        if budget < centers {
            return fail(format!(
                "stage II budget {budget} is below the cluster count {centers}"
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preset_counts_for_576_tokens() {
        let expect = [
            ("p667", [288, 253, 50]),
            ("p778", [230, 165, 33]),
            ("p889", [172, 77, 15]),
            ("p944", [144, 33, 6]),
        ];
        for (name, counts) in expect {
            let s = PruneSchedule::preset(name).unwrap();
            s.validate().unwrap();
            assert_eq!(
                [s.stage1_count(576), s.budget(576), s.stage3_count(576)],
                counts,
                "{name}"
            );
        }
    }

    #[test]
    fn floor_absorbs_representation_error() {
        // 0.29 * 100 = 28.999999999999996 in binary floating point
        assert_eq!(keep_count(100, 0.29), 29);
        assert_eq!(keep_count(576, 1.0), 576);
        assert_eq!(center_count(16, 0.125), 2);
        assert_eq!(center_count(172, 0.125), 22);
        assert_eq!(center_count(5, 1.0), 5);
        assert_eq!(center_count(3, 0.01), 1);
    }

    #[test]
    fn toml_round_trip_and_defaults() {
        let s = PruneSchedule::preset("p889").unwrap();
        let back = PruneSchedule::from_toml_str(&s.to_toml_string()).unwrap();
        assert_eq!(s, back);

        let minimal = r#"
            pi1 = 0.5
            pi2 = 0.25
            pi3 = 0.125
            l_s = 2
            l_d = 6
            [model]
            m = 64
            d = 256
            n_layers = 8
        "#;
        let s = PruneSchedule::from_toml_str(minimal).unwrap();
        assert_eq!(s.d_c, 8.0);
        assert_eq!(s.tau, 0.6);
        assert_eq!(s.model.n_text, 40);
        s.validate().unwrap();
    }

    #[test]
    fn invalid_schedules() {
        let base = PruneSchedule::preset("p889").unwrap();
        let mut s = base.clone();
        s.pi2 = 0.4;
        assert!(s.validate().is_err());
        let mut s = base.clone();
        s.l_s = 22;
        assert!(s.validate().is_err());
        let mut s = base.clone();
        s.alpha = 0.5;
        // 86 centers against a budget of 77
        assert!(s.validate().is_err());
        let mut s = base;
        s.pi3 = 0.001;
        assert!(s.validate().is_err());
    }

    #[test]
    fn layer_rescaling() {
        let s = PruneSchedule::preset("p889").unwrap().for_depth(40);
        assert_eq!((s.l_s, s.l_d), (3, 28));
        let same = PruneSchedule::preset("p889").unwrap().for_depth(32);
        assert_eq!((same.l_s, same.l_d), (2, 22));
    }
}
