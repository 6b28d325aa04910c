//! Single-file tensor container used for activation bundles and pruning
//! results.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! 0        8 bytes   magic "CPRBNDL\0"
//! 8        u32       format version (1)
//! 12       u32       header length H in bytes
//! 16       H bytes   UTF-8 JSON header
//! 16 + H   ...       payload: f32 tensors, row-major, back to back
//! ```
//!
//! The header records each tensor's name, dtype, shape, and byte
//! offset/length relative to the payload start, plus the payload length and
//! its xxh64 checksum. See `FORMATS.md` at the repository root.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use xxhash_rust::xxh64::xxh64;

use crate::model::{validate_bundle, ActivationBundle, BundleMeta, TokenKind, TokenSet};
use crate::BundleError;

pub const MAGIC: &[u8; 8] = b"CPRBNDL\0";
pub const FORMAT_VERSION: u32 = 1;
const PREFIX_LEN: usize = 16;

pub const KIND_ACTIVATION: &str = "activation";
pub const KIND_RESULT: &str = "result";

type IoResult<T> = std::result::Result<T, BundleError>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub dtype: String,
    pub shape: Vec<usize>,
    pub offset: u64,
    pub length: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub kind: String,
    pub meta: Value,
    pub tensors: Vec<TensorEntry>,
    pub payload_length: u64,
    /// Hex xxh64 (seed 0) of the payload bytes.
    pub checksum: String,
}

/// A decoded container: manifest plus each tensor's values in manifest
/// order.
#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub manifest: Manifest,
    pub tensors: Vec<Vec<f32>>,
}

impl Container {
    fn tensor(&self, name: &str) -> IoResult<(&TensorEntry, &[f32])> {
        self.manifest
            .tensors
            .iter()
            .zip(&self.tensors)
            .find(|(e, _)| e.name == name)
            .map(|(e, v)| (e, v.as_slice()))
            .ok_or_else(|| BundleError::MissingTensor(name.into()))
    }
}

fn checksum_hex(payload: &[u8]) -> String {
    format!("{:016x}", xxh64(payload, 0))
}

/// Serializes named tensors and metadata into container bytes.
pub fn encode(kind: &str, meta: Value, tensors: &[(String, Vec<usize>, &[f32])]) -> Vec<u8> {
    let mut payload = Vec::new();
    let mut entries = Vec::with_capacity(tensors.len());
    for (name, shape, data) in tensors {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        let offset = payload.len() as u64;
        for v in data.iter() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
        entries.push(TensorEntry {
            name: name.clone(),
            dtype: "f32".into(),
            shape: shape.clone(),
            offset,
            length: payload.len() as u64 - offset,
        });
    }
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        kind: kind.into(),
        meta,
        tensors: entries,
        payload_length: payload.len() as u64,
        checksum: checksum_hex(&payload),
    };
    let header = serde_json::to_vec(&manifest).expect("manifest serializes");
    let mut out = Vec::with_capacity(PREFIX_LEN + header.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&payload);
    out
}

/// Parses only the prefix and manifest; no payload checks.
pub fn read_manifest(bytes: &[u8]) -> IoResult<Manifest> {
    if bytes.len() < PREFIX_LEN || &bytes[..8] != MAGIC {
        return Err(BundleError::BadMagic);
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(BundleError::VersionMismatch {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let header_len = u32::from_le_bytes(bytes[12..16].try_into().expect("4 bytes")) as usize;
    let header = bytes
        .get(PREFIX_LEN..PREFIX_LEN + header_len)
        .ok_or_else(|| BundleError::Header("header extends past end of file".into()))?;
    let manifest: Manifest =
        serde_json::from_slice(header).map_err(|e| BundleError::Header(e.to_string()))?;
    if manifest.format_version != version {
        return Err(BundleError::VersionMismatch {
            found: manifest.format_version,
            expected: FORMAT_VERSION,
        });
    }
    Ok(manifest)
}

pub fn decode(bytes: &[u8]) -> IoResult<Container> {
    let manifest = read_manifest(bytes)?;
    let header_len = u32::from_le_bytes(bytes[12..16].try_into().expect("4 bytes")) as usize;
    let payload = &bytes[PREFIX_LEN + header_len..];
    if payload.len() as u64 != manifest.payload_length {
        return Err(BundleError::PayloadLength {
            declared: manifest.payload_length,
            found: payload.len() as u64,
        });
    }
    let computed = checksum_hex(payload);
    if computed != manifest.checksum {
        return Err(BundleError::Checksum {
            declared: manifest.checksum.clone(),
            computed,
        });
    }

    let mut spans: Vec<(u64, u64, &str)> = Vec::new();
    let mut tensors = Vec::with_capacity(manifest.tensors.len());
    for e in &manifest.tensors {
        let shape_err = |reason: String| BundleError::ShapeMismatch {
            name: e.name.clone(),
            reason,
        };
        if e.dtype != "f32" {
            return Err(shape_err(format!("unsupported dtype {}", e.dtype)));
        }
        let elems: usize = e.shape.iter().product();
        if elems as u64 * 4 != e.length {
            return Err(shape_err(format!(
                "{} elements need {} bytes, entry declares {}",
                elems,
                elems * 4,
                e.length
            )));
        }
        let end = e.offset.checked_add(e.length).filter(|&end| end <= manifest.payload_length);
        let Some(end) = end else {
            return Err(BundleError::PayloadLength {
                declared: e.offset.saturating_add(e.length),
                found: manifest.payload_length,
            });
        };
        spans.push((e.offset, end, &e.name));
        let raw = &payload[e.offset as usize..end as usize];
        tensors.push(
            raw.chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect(),
        );
    }
    spans.sort_unstable();
    for w in spans.windows(2) {
        if w[1].0 < w[0].1 {
            return Err(BundleError::ShapeMismatch {
                name: w[1].2.into(),
                reason: format!("overlaps {}", w[0].2),
            });
        }
    }
    Ok(Container { manifest, tensors })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ActivationMeta {
    #[serde(flatten)]
    model: BundleMeta,
    d_feat: usize,
    layers: Vec<usize>,
    text_attention_layers: Vec<usize>,
}

fn key_name(layer: usize) -> String {
    format!("key_vectors_l{layer}")
}

fn text_attn_name(layer: usize) -> String {
    format!("text_attention_l{layer}")
}

pub fn encode_bundle(bundle: &ActivationBundle) -> Vec<u8> {
    let meta = ActivationMeta {
        model: bundle.meta.clone(),
        d_feat: bundle.d_feat(),
        layers: bundle.key_vectors.keys().copied().collect(),
        text_attention_layers: bundle.text_attention.keys().copied().collect(),
    };
    // logical (row-major) order, whatever the arrays' memory layout
    let mut owned: Vec<(String, Vec<usize>, Vec<f32>)> = vec![
        ("token_features".into(), bundle.token_features.shape().to_vec(), bundle.token_features.iter().copied().collect()),
        ("token_positions".into(), bundle.token_positions.shape().to_vec(), bundle.token_positions.iter().copied().collect()),
        ("cls_attention".into(), bundle.cls_attention.shape().to_vec(), bundle.cls_attention.iter().copied().collect()),
    ];
    for (&l, k) in &bundle.key_vectors {
        owned.push((key_name(l), k.shape().to_vec(), k.iter().copied().collect()));
    }
    for (&l, a) in &bundle.text_attention {
        owned.push((text_attn_name(l), a.shape().to_vec(), a.iter().copied().collect()));
    }
    let tensors: Vec<(String, Vec<usize>, &[f32])> = owned
        .iter()
        .map(|(n, s, v)| (n.clone(), s.clone(), v.as_slice()))
        .collect();
    encode(
        KIND_ACTIVATION,
        serde_json::to_value(meta).expect("meta serializes"),
        &tensors,
    )
}

fn matrix(c: &Container, name: &str, rows: usize, cols: usize) -> IoResult<Array2<f32>> {
    let (e, data) = c.tensor(name)?;
    if e.shape != [rows, cols] {
        return Err(BundleError::ShapeMismatch {
            name: name.into(),
            reason: format!("shape {:?}, meta implies [{rows}, {cols}]", e.shape),
        });
    }
    Ok(Array2::from_shape_vec((rows, cols), data.to_vec()).expect("shape checked"))
}

fn cube(c: &Container, name: &str, dims: (usize, usize, usize)) -> IoResult<Array3<f32>> {
    let (e, data) = c.tensor(name)?;
    if e.shape != [dims.0, dims.1, dims.2] {
        return Err(BundleError::ShapeMismatch {
            name: name.into(),
            reason: format!("shape {:?}, meta implies {dims:?}", e.shape),
        });
    }
    Ok(Array3::from_shape_vec(dims, data.to_vec()).expect("shape checked"))
}

/// Decodes and validates an activation bundle.
pub fn decode_bundle(bytes: &[u8]) -> IoResult<ActivationBundle> {
    let c = decode(bytes)?;
    if c.manifest.kind != KIND_ACTIVATION {
        return Err(BundleError::WrongKind {
            found: c.manifest.kind.clone(),
            expected: KIND_ACTIVATION,
        });
    }
    let meta: ActivationMeta = serde_json::from_value(c.manifest.meta.clone())
        .map_err(|e| BundleError::Header(format!("meta: {e}")))?;
    let bm = &meta.model;
    let n = bm.m;
    let token_features = matrix(&c, "token_features", n, meta.d_feat)?;
    let token_positions = matrix(&c, "token_positions", n, 2)?;
    let cls_attention = matrix(&c, "cls_attention", bm.h_enc, n)?;
    let mut key_vectors = BTreeMap::new();
    for &l in &meta.layers {
        key_vectors.insert(l, cube(&c, &key_name(l), (bm.h_llm, n, bm.d_head))?);
    }
    let mut text_attention = BTreeMap::new();
    for &l in &meta.text_attention_layers {
        text_attention.insert(l, matrix(&c, &text_attn_name(l), bm.h_llm, n)?);
    }
    let bundle = ActivationBundle {
        meta: meta.model,
        token_features,
        token_positions,
        cls_attention,
        key_vectors,
        text_attention,
    };
    let violations = validate_bundle(&bundle);
    if !violations.is_empty() {
        return Err(BundleError::Invalid(violations));
    }
    Ok(bundle)
}

pub fn load_bundle(path: impl AsRef<Path>) -> IoResult<ActivationBundle> {
    decode_bundle(&fs::read(path)?)
}

pub fn save_bundle(bundle: &ActivationBundle, path: impl AsRef<Path>) -> IoResult<()> {
    fs::write(path, encode_bundle(bundle))?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultMeta {
    pub source_model: String,
    pub m: usize,
    pub strategy: String,
    pub origin: Vec<Vec<usize>>,
    pub kind: Vec<TokenKind>,
}

/// Writes a pruned token set. Features and positions are narrowed to `f32`.
pub fn encode_result(tokens: &TokenSet, source_model: &str, m: usize, strategy: &str) -> Vec<u8> {
    let meta = ResultMeta {
        source_model: source_model.into(),
        m,
        strategy: strategy.into(),
        origin: tokens.origin.clone(),
        kind: tokens.kind.clone(),
    };
    let feats: Vec<f32> = tokens.features.iter().map(|&v| v as f32).collect();
    let pos: Vec<f32> = tokens.positions.iter().map(|&v| v as f32).collect();
    encode(
        KIND_RESULT,
        serde_json::to_value(meta).expect("meta serializes"),
        &[
            ("features".into(), tokens.features.shape().to_vec(), &feats),
            ("positions".into(), tokens.positions.shape().to_vec(), &pos),
        ],
    )
}

pub fn decode_result(bytes: &[u8]) -> IoResult<(ResultMeta, TokenSet)> {
    let c = decode(bytes)?;
    if c.manifest.kind != KIND_RESULT {
        return Err(BundleError::WrongKind {
            found: c.manifest.kind.clone(),
            expected: KIND_RESULT,
        });
    }
    let meta: ResultMeta = serde_json::from_value(c.manifest.meta.clone())
        .map_err(|e| BundleError::Header(format!("meta: {e}")))?;
    let k = meta.origin.len();
    let (fe, _) = c.tensor("features")?;
    let d_feat = fe.shape.get(1).copied().unwrap_or(0);
    let features = matrix(&c, "features", k, d_feat)?.mapv(f64::from);
    let positions = matrix(&c, "positions", k, 2)?.mapv(f64::from);
    let tokens = TokenSet {
        features,
        positions,
        origin: meta.origin.clone(),
        kind: meta.kind.clone(),
    };
    Ok((meta, tokens))
}
