//! Seeded synthetic activation bundles for fixtures, demos and tests.
//!
//! Tokens sit on a patch grid; features are drawn around a few regional
//! prototypes so clustering has structure to find, and keys are a noisy
//! linear map of the features.

use std::collections::BTreeMap;

use ndarray::{Array2, Array3};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::model::{ActivationBundle, BundleMeta};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub m: usize,
    pub d_feat: usize,
    pub d: usize,
    pub n_layers: usize,
    pub h_enc: usize,
    pub h_llm: usize,
    pub d_head: usize,
    pub layers: Vec<usize>,
    pub text_attention: bool,
}

impl SynthConfig {
    pub fn small() -> Self {
        Self {
            m: 64,
            d_feat: 16,
            d: 256,
            n_layers: 32,
            h_enc: 4,
            h_llm: 4,
            d_head: 8,
            layers: vec![2, 22],
            text_attention: true,
        }
    }
}

/// Normalized patch-grid coordinates `((row + 0.5) / h, (col + 0.5) / w)`
/// for `m` tokens laid out row-major on the smallest square-ish grid.
pub fn grid_positions(m: usize) -> Array2<f32> {
    let w = (m as f64).sqrt().ceil().max(1.0) as usize;
    let h = m.div_ceil(w).max(1);
    Array2::from_shape_fn((m, 2), |(i, c)| {
        let (row, col) = (i / w, i % w);
        if c == 0 {
            (row as f32 + 0.5) / h as f32
        } else {
            (col as f32 + 0.5) / w as f32
        }
    })
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn softmax_rows(logits: &mut Array2<f64>) {
    for mut row in logits.rows_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let s = row.sum();
        row.mapv_inplace(|v| v / s);
    }
}

pub fn synth_bundle(cfg: &SynthConfig, seed: u64) -> ActivationBundle {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = cfg.m;
    let positions = grid_positions(m);

    let n_proto = 6.min(m.max(1));
    let protos = Array2::from_shape_fn((n_proto, cfg.d_feat), |_| 4.0 * normal(&mut rng));
    let features = Array2::from_shape_fn((m, cfg.d_feat), |(i, c)| {
        // region by coarse grid cell
        let r = (positions[[i, 0]] * 2.0) as usize * 3 + (positions[[i, 1]] * 3.0) as usize;
        protos[[r % n_proto, c]]
    }) + Array2::from_shape_fn((m, cfg.d_feat), |_| normal(&mut rng));

    let mut cls = Array2::from_shape_fn((cfg.h_enc, m), |_| 0.0);
    for h in 0..cfg.h_enc {
        let w: Vec<f64> = (0..cfg.d_feat).map(|_| normal(&mut rng) * 0.3).collect();
        for i in 0..m {
            let dot: f64 = (0..cfg.d_feat).map(|c| features[[i, c]] * w[c]).sum();
            cls[[h, i]] = dot + normal(&mut rng);
        }
    }
    softmax_rows(&mut cls);

    let mut key_vectors = BTreeMap::new();
    let mut text_attention = BTreeMap::new();
    for &layer in &cfg.layers {
        let proj = Array3::from_shape_fn((cfg.h_llm, cfg.d_feat, cfg.d_head), |_| {
            normal(&mut rng) / (cfg.d_feat as f64).sqrt()
        });
        let mut keys = Array3::<f64>::zeros((cfg.h_llm, m, cfg.d_head));
        for h in 0..cfg.h_llm {
            for i in 0..m {
                for e in 0..cfg.d_head {
                    let dot: f64 = (0..cfg.d_feat).map(|c| features[[i, c]] * proj[[h, c, e]]).sum();
                    keys[[h, i, e]] = dot + 0.5 * normal(&mut rng);
                }
            }
        }
        if cfg.text_attention {
            let mut logits = Array2::<f64>::zeros((cfg.h_llm, m));
            for h in 0..cfg.h_llm {
                let q: Vec<f64> = (0..cfg.d_head).map(|_| normal(&mut rng)).collect();
                for i in 0..m {
                    let dot: f64 = (0..cfg.d_head).map(|e| keys[[h, i, e]] * q[e]).sum();
                    logits[[h, i]] = dot / (cfg.d_head as f64).sqrt();
                }
            }
            softmax_rows(&mut logits);
            text_attention.insert(layer, logits.mapv(|v| v as f32));
        }
        key_vectors.insert(layer, keys.mapv(|v| v as f32));
    }

    ActivationBundle {
        meta: BundleMeta {
            model: format!("synthetic-seed{seed}"),
            m,
            d: cfg.d,
            n_layers: cfg.n_layers,
            h_enc: cfg.h_enc,
            h_llm: cfg.h_llm,
            d_head: cfg.d_head,
        },
        token_features: features.mapv(|v| v as f32),
        token_positions: positions,
        cls_attention: cls.mapv(|v| v as f32),
        key_vectors,
        text_attention,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::validate_bundle;

    #[test]
    fn synthetic_bundles_validate() {
        for m in [1, 8, 10, 64, 576] {
            let b = synth_bundle(&SynthConfig { m, ..SynthConfig::small() }, m as u64);
            assert!(validate_bundle(&b).is_empty(), "m={m}");
        }
    }

    #[test]
    fn grid_convention() {
        let p = grid_positions(4);
        assert_eq!(p.row(0).to_vec(), vec![0.25, 0.25]);
        assert_eq!(p.row(3).to_vec(), vec![0.75, 0.75]);
    }

    #[test]
    fn deterministic() {
        let c = SynthConfig::small();
        assert_eq!(synth_bundle(&c, 5), synth_bundle(&c, 5));
        assert_ne!(synth_bundle(&c, 5), synth_bundle(&c, 6));
    }
}
