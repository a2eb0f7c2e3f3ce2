//! PCA + SVR compression of trained models into the WNGC artifact format.
//!
//! Weight matrices are handled with one row per output unit: a dense layer's
//! `n_in x n_out` matrix is transposed, a conv layer's `c_out x patch` matrix
//! is used as is. PCA therefore reduces the fan-in dimension. Cross-predicted
//! FCN layers are the exception and keep the `n_in x n_out` layout.

use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::codec::{Reader, Writer};
use crate::error::{ensure, Result, WingsError};
use crate::linalg::Matrix;
use crate::model::{read_layer_meta, write_layer_meta, Activation, Layer, LayerKind, Model};
use crate::pca::{fit_pca, inverse_transform, transform, PcaBasis, Retention};
use crate::rng::Rng;
use crate::sensitivity::LayerScore;
use crate::svr::{predict, train_svr, SvrModel, SvrPolicy};

pub const ARTIFACT_MAGIC: [u8; 4] = *b"WNGC";
pub const ARTIFACT_VERSION: u16 = 1;
/// magic + version + kind + layer count
const HEADER_LEN: usize = 4 + 2 + 1 + 2;
/// original_bytes + compressed_bytes
const TRAILER_LEN: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ArtifactKind {
    Fcn,
    Cnn,
}

impl ArtifactKind {
    fn code(self) -> u8 {
        match self {
            ArtifactKind::Fcn => 0,
            ArtifactKind::Cnn => 1,
        }
    }
}

/// How one layer's weights are stored.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerStore {
    /// Weights verbatim (also used for parameter-free layers).
    Raw { weights: Matrix },
    /// Dense layer whose rows (one per input neuron, i.e. outgoing weights of
    /// the previous layer's neurons) are predicted from those neurons'
    /// reduced incoming weights, one SVR per component. `incoming` projects
    /// this layer's own columns for the next layer in the chain.
    CrossPredicted {
        basis: PcaBasis,
        svrs: Vec<SvrModel>,
        incoming: Option<PcaBasis>,
    },
    /// Leading `known.cols()` reduced columns stored; the rest predicted
    /// from them, one SVR per column.
    IntraCompressed {
        basis: PcaBasis,
        known: Matrix,
        svrs: Vec<SvrModel>,
    },
    /// Basis plus the full reduced matrix.
    PcaReduced { basis: PcaBasis, reduced: Matrix },
    /// Weights verbatim plus the basis that projects them.
    RawWithBasis { weights: Matrix, basis: PcaBasis },
}

impl LayerStore {
    pub fn mode(&self) -> u8 {
        match self {
            LayerStore::Raw { .. } => 0,
            LayerStore::CrossPredicted { .. } => 1,
            LayerStore::IntraCompressed { .. } => 2,
            LayerStore::PcaReduced { .. } => 3,
            LayerStore::RawWithBasis { .. } => 4,
        }
    }

    pub fn mode_name(&self) -> &'static str {
        match self {
            LayerStore::Raw { .. } => "raw",
            LayerStore::CrossPredicted { .. } => "cross-predicted",
            LayerStore::IntraCompressed { .. } => "intra-compressed",
            LayerStore::PcaReduced { .. } => "pca-reduced",
            LayerStore::RawWithBasis { .. } => "raw-with-basis",
        }
    }

    pub fn basis(&self) -> Option<&PcaBasis> {
        match self {
            LayerStore::Raw { .. } => None,
            LayerStore::CrossPredicted { basis, .. }
            | LayerStore::IntraCompressed { basis, .. }
            | LayerStore::PcaReduced { basis, .. }
            | LayerStore::RawWithBasis { basis, .. } => Some(basis),
        }
    }

    pub fn svrs(&self) -> &[SvrModel] {
        match self {
            LayerStore::CrossPredicted { svrs, .. } | LayerStore::IntraCompressed { svrs, .. } => {
                svrs
            }
            _ => &[],
        }
    }

    /// True for modes that replace the weights with a PCA/SVR representation.
    pub fn is_compressed(&self) -> bool {
        matches!(
            self,
            LayerStore::CrossPredicted { .. }
                | LayerStore::IntraCompressed { .. }
                | LayerStore::PcaReduced { .. }
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StoredLayer {
    pub kind: LayerKind,
    pub activation: Activation,
    pub store: LayerStore,
    pub bias: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompressedArtifact {
    pub kind: ArtifactKind,
    pub layers: Vec<StoredLayer>,
    /// 32-bit weight and bias bytes of the source model.
    pub original_bytes: u64,
}

/// What a byte range of an encoded model or artifact holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum RegionClass {
    RawWeights,
    Bias,
    PcaComponents,
    PcaMean,
    KnownColumns,
    ReducedScores,
    SvrSupportVectors,
    SvrDualCoefs,
    SvrBias,
}

/// A run of little-endian `f32` values inside an encoded buffer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Region {
    pub start: usize,
    pub end: usize,
    pub layer: usize,
    pub class: RegionClass,
}

impl CompressedArtifact {
    pub fn compressed_bytes(&self) -> u64 {
        self.encode().0.len() as u64
    }

    pub fn ratio(&self) -> f64 {
        compression_ratio(self)
    }

    /// Layer shells with zero weights, enough to validate the architecture.
    fn skeleton(&self) -> Result<Model> {
        Model::new(
            self.layers
                .iter()
                .map(|l| Layer::zeroed(l.kind, l.activation))
                .collect(),
        )
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.encode().0
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<CompressedArtifact> {
        decode_artifact(bytes, true)
    }

    /// Byte ranges of every `f32` payload, by class.
    pub fn regions(&self) -> Vec<Region> {
        self.encode().1
    }

    pub(crate) fn encode(&self) -> (Vec<u8>, Vec<Region>) {
        let mut w = Writer::new();
        let mut regions = Regions::default();
        w.bytes(&ARTIFACT_MAGIC);
        w.u16(ARTIFACT_VERSION);
        w.u8(self.kind.code());
        w.u16(u16::try_from(self.layers.len()).expect("too many layers"));
        for (li, layer) in self.layers.iter().enumerate() {
            regions.layer = li;
            w.u8(layer.store.mode());
            let len_at = w.buf.len();
            w.u64(0);
            let payload_start = w.buf.len();
            write_layer_meta(&mut w, &layer.kind, layer.activation);
            match &layer.store {
                LayerStore::Raw { weights } => {
                    regions.f32s(&mut w, weights.data(), RegionClass::RawWeights);
                }
                LayerStore::CrossPredicted {
                    basis,
                    svrs,
                    incoming,
                } => {
                    encode_basis(&mut w, basis, &mut regions);
                    w.dim(svrs.len());
                    for m in svrs {
                        encode_svr(&mut w, m, &mut regions);
                    }
                    w.u8(incoming.is_some() as u8);
                    if let Some(b) = incoming {
                        encode_basis(&mut w, b, &mut regions);
                    }
                }
                LayerStore::IntraCompressed { basis, known, svrs } => {
                    encode_basis(&mut w, basis, &mut regions);
                    w.dim(known.rows());
                    w.dim(known.cols());
                    regions.f32s(&mut w, known.data(), RegionClass::KnownColumns);
                    w.dim(svrs.len());
                    for m in svrs {
                        encode_svr(&mut w, m, &mut regions);
                    }
                }
                LayerStore::PcaReduced { basis, reduced } => {
                    encode_basis(&mut w, basis, &mut regions);
                    w.dim(reduced.rows());
                    regions.f32s(&mut w, reduced.data(), RegionClass::ReducedScores);
                }
                LayerStore::RawWithBasis { weights, basis } => {
                    regions.f32s(&mut w, weights.data(), RegionClass::RawWeights);
                    encode_basis(&mut w, basis, &mut regions);
                }
            }
            regions.f32s(&mut w, &layer.bias, RegionClass::Bias);
            let len = (w.buf.len() - payload_start) as u64;
            w.buf[len_at..len_at + 8].copy_from_slice(&len.to_le_bytes());
        }
        w.u64(self.original_bytes);
        let total = (w.buf.len() + 8) as u64;
        w.u64(total);
        (w.buf, regions.list)
    }
}

#[derive(Default)]
struct Regions {
    layer: usize,
    list: Vec<Region>,
}

impl Regions {
    fn add(&mut self, start: usize, end: usize, class: RegionClass) {
        if end > start {
            self.list.push(Region {
                start,
                end,
                layer: self.layer,
                class,
            });
        }
    }

    fn f32s(&mut self, w: &mut Writer, vs: &[f32], class: RegionClass) {
        let s = w.buf.len();
        w.f32s(vs);
        self.add(s, w.buf.len(), class);
    }
}

fn encode_basis(w: &mut Writer, b: &PcaBasis, regions: &mut Regions) {
    let start = w.buf.len();
    b.encode(w);
    // n, k, mean, components, eigenvalues, eta
    let mean_start = start + 8;
    let comp_start = mean_start + 4 * b.dim();
    regions.add(mean_start, comp_start, RegionClass::PcaMean);
    regions.add(
        comp_start,
        comp_start + 4 * b.components.len(),
        RegionClass::PcaComponents,
    );
}

fn encode_svr(w: &mut Writer, m: &SvrModel, regions: &mut Regions) {
    let start = w.buf.len();
    let layout = m.encode(w);
    let (a, b) = layout.support_vectors;
    regions.add(start + a, start + b, RegionClass::SvrSupportVectors);
    let (a, b) = layout.dual_coefs;
    regions.add(start + a, start + b, RegionClass::SvrDualCoefs);
    regions.add(start + b, start + b + 4, RegionClass::SvrBias);
}

/// Original 32-bit parameter bytes over total artifact bytes.
pub fn compression_ratio(a: &CompressedArtifact) -> f64 {
    a.original_bytes as f64 / a.compressed_bytes() as f64
}

/// Byte ranges of a WNGS model's weight and bias payloads.
pub fn model_regions(model: &Model) -> Vec<Region> {
    let mut regions = Vec::new();
    let mut w = Writer::new();
    w.bytes(&crate::model::MODEL_MAGIC);
    w.u16(crate::model::MODEL_VERSION);
    w.u16(model.len() as u16);
    for (li, l) in model.layers().iter().enumerate() {
        write_layer_meta(&mut w, &l.kind, l.activation);
        let s = w.buf.len();
        w.f32s(l.weights.data());
        if w.buf.len() > s {
            regions.push(Region {
                start: s,
                end: w.buf.len(),
                layer: li,
                class: RegionClass::RawWeights,
            });
        }
        let s = w.buf.len();
        w.f32s(&l.bias);
        if w.buf.len() > s {
            regions.push(Region {
                start: s,
                end: w.buf.len(),
                layer: li,
                class: RegionClass::Bias,
            });
        }
    }
    regions
}

// ------------------------------------------------------------------ decode

pub fn decode_artifact(bytes: &[u8], strict: bool) -> Result<CompressedArtifact> {
    let mut r = Reader::new(bytes);
    if r.take(4, "magic")? != ARTIFACT_MAGIC {
        return Err(WingsError::format(0, "bad magic, not a WNGC artifact"));
    }
    let version = r.u16("version")?;
    if version != ARTIFACT_VERSION {
        return Err(WingsError::format(
            4,
            format!("unsupported version {version}"),
        ));
    }
    let kind = match r.u8("artifact kind")? {
        0 => ArtifactKind::Fcn,
        1 => ArtifactKind::Cnn,
        other => {
            return Err(WingsError::format(
                6,
                format!("unknown artifact kind {other}"),
            ))
        }
    };
    let n = r.u16("layer count")? as usize;
    let mut layers = Vec::with_capacity(n);
    for li in 0..n {
        let mode_at = r.offset();
        let mode = r.u8("layer mode")?;
        let len = r.u64("payload length")?;
        let base = r.offset();
        let len = usize::try_from(len)
            .ok()
            .filter(|&l| l <= r.remaining())
            .ok_or_else(|| {
                WingsError::format(
                    base,
                    format!("layer {li} payload length {len} exceeds file"),
                )
            })?;
        let payload = r.take(len, "layer payload")?;
        let mut pr = Reader::with_base(payload, base);
        let layer = decode_layer(&mut pr, mode, mode_at, strict)?;
        pr.finish(&format!("layer {li} payload"))?;
        layers.push(layer);
    }
    let original_bytes = r.u64("original bytes")?;
    let at = r.offset();
    let compressed = r.u64("compressed bytes")?;
    r.finish("artifact")?;
    if compressed != bytes.len() as u64 {
        return Err(WingsError::format(
            at,
            format!(
                "recorded size {compressed} does not match file size {}",
                bytes.len()
            ),
        ));
    }
    let art = CompressedArtifact {
        kind,
        layers,
        original_bytes,
    };
    validate_artifact(&art).map_err(|e| match e {
        WingsError::Contract(m) => {
            WingsError::format(bytes.len(), format!("invalid artifact: {m}"))
        }
        other => other,
    })?;
    Ok(art)
}

fn decode_layer(r: &mut Reader, mode: u8, mode_at: usize, strict: bool) -> Result<StoredLayer> {
    let (kind, activation) = read_layer_meta(r)?;
    let (rows, cols) = kind.weight_shape();
    let store = match mode {
        0 => LayerStore::Raw {
            weights: Matrix::from_raw(rows, cols, r.f32s(rows * cols, "raw weights", strict)?),
        },
        1 => {
            let basis = PcaBasis::decode(r, strict)?;
            let n = r.dim("svr count")?;
            let svrs = decode_svrs(r, n, strict)?;
            let incoming = match r.u8("incoming flag")? {
                0 => None,
                1 => Some(PcaBasis::decode(r, strict)?),
                other => return Err(r.err(format!("bad incoming flag {other}"))),
            };
            LayerStore::CrossPredicted {
                basis,
                svrs,
                incoming,
            }
        }
        2 => {
            let basis = PcaBasis::decode(r, strict)?;
            let kr = r.dim("known rows")?;
            let kc = r.dim("known cols")?;
            let total = kr
                .checked_mul(kc)
                .ok_or_else(|| r.err("known size overflows"))?;
            let known = Matrix::from_raw(kr, kc, r.f32s(total, "known columns", strict)?);
            let n = r.dim("svr count")?;
            let svrs = decode_svrs(r, n, strict)?;
            LayerStore::IntraCompressed { basis, known, svrs }
        }
        3 => {
            let basis = PcaBasis::decode(r, strict)?;
            let rr = r.dim("reduced rows")?;
            let total = rr
                .checked_mul(basis.k())
                .ok_or_else(|| r.err("reduced size overflows"))?;
            let reduced = Matrix::from_raw(rr, basis.k(), r.f32s(total, "reduced scores", strict)?);
            LayerStore::PcaReduced { basis, reduced }
        }
        4 => {
            let weights = Matrix::from_raw(rows, cols, r.f32s(rows * cols, "raw weights", strict)?);
            let basis = PcaBasis::decode(r, strict)?;
            LayerStore::RawWithBasis { weights, basis }
        }
        other => {
            return Err(WingsError::format(
                mode_at,
                format!("unknown layer mode {other}"),
            ))
        }
    };
    let bias = r.f32s(kind.bias_len(), "bias", strict)?;
    Ok(StoredLayer {
        kind,
        activation,
        store,
        bias,
    })
}

fn decode_svrs(r: &mut Reader, n: usize, strict: bool) -> Result<Vec<SvrModel>> {
    // each SVR takes at least 25 bytes; reject absurd counts before allocating
    if n > r.remaining() / 25 + 1 {
        return Err(r.err(format!("svr count {n} exceeds payload")));
    }
    (0..n)
        .map(|_| SvrModel::decode(r, strict).map(|(m, _)| m))
        .collect()
}

/// `(rows, fan_in)` of the row-per-output matrix for a weighted layer.
fn oriented_shape(kind: &LayerKind) -> (usize, usize) {
    match *kind {
        LayerKind::Dense { n_in, n_out } => (n_out, n_in),
        LayerKind::Conv2D(m) => (m.c_out, m.patch_len()),
        _ => (0, 0),
    }
}

/// Structural consistency of every store with its layer and neighbours.
fn validate_artifact(a: &CompressedArtifact) -> Result<()> {
    a.skeleton()?;
    let mut prev_k: Option<usize> = None;
    for (i, l) in a.layers.iter().enumerate() {
        let (rows, fan_in) = oriented_shape(&l.kind);
        ensure!(l.bias.len() == l.kind.bias_len(), "layer {i}: bias length");
        if let Some(b) = l.store.basis() {
            ensure!(
                l.kind.has_weights(),
                "layer {i}: basis on a parameter-free layer"
            );
            let want = match &l.store {
                LayerStore::CrossPredicted { .. } => rows,
                _ => fan_in,
            };
            ensure!(
                b.dim() == want,
                "layer {i}: basis dimension {} != {want}",
                b.dim()
            );
            ensure!(b.k() >= 1, "layer {i}: empty basis");
            ensure!(b.eigenvalues.len() == b.k(), "layer {i}: eigenvalue count");
        }
        let k_here = match &l.store {
            LayerStore::Raw { weights } => {
                ensure!(
                    weights.shape() == l.kind.weight_shape(),
                    "layer {i}: raw weight shape"
                );
                None
            }
            LayerStore::RawWithBasis { weights, basis } => {
                ensure!(
                    weights.shape() == l.kind.weight_shape(),
                    "layer {i}: raw weight shape"
                );
                Some(basis.k())
            }
            LayerStore::PcaReduced { basis, reduced } => {
                ensure!(
                    reduced.rows() == rows,
                    "layer {i}: reduced rows {} != {rows}",
                    reduced.rows()
                );
                Some(basis.k())
            }
            LayerStore::CrossPredicted {
                basis,
                svrs,
                incoming,
            } => {
                ensure!(
                    a.kind == ArtifactKind::Fcn,
                    "layer {i}: cross prediction outside an FCN artifact"
                );
                let d = prev_k.ok_or_else(|| {
                    WingsError::contract(format!(
                        "layer {i}: cross prediction without a reduced predecessor"
                    ))
                })?;
                ensure!(
                    svrs.len() == basis.k(),
                    "layer {i}: {} SVRs for k={}",
                    svrs.len(),
                    basis.k()
                );
                for m in svrs {
                    ensure!(m.dim() == d, "layer {i}: SVR dimension {} != {d}", m.dim());
                    ensure!(
                        m.dual_coefs.len() == m.support_vectors.rows(),
                        "layer {i}: SVR shape"
                    );
                }
                match incoming {
                    Some(b) => {
                        ensure!(
                            b.dim() == fan_in,
                            "layer {i}: incoming basis dimension {} != {fan_in}",
                            b.dim()
                        );
                        ensure!(
                            b.k() >= 1 && b.eigenvalues.len() == b.k(),
                            "layer {i}: incoming basis shape"
                        );
                        Some(b.k())
                    }
                    None => None,
                }
            }
            LayerStore::IntraCompressed { basis, known, svrs } => {
                let p = known.cols();
                ensure!(
                    known.rows() == rows,
                    "layer {i}: known rows {} != {rows}",
                    known.rows()
                );
                ensure!(
                    p >= 1 && p <= basis.k(),
                    "layer {i}: split {p} outside [1, {}]",
                    basis.k()
                );
                ensure!(svrs.len() == basis.k() - p, "layer {i}: SVR count");
                for m in svrs {
                    ensure!(m.dim() == p, "layer {i}: SVR dimension {} != {p}", m.dim());
                    ensure!(
                        m.dual_coefs.len() == m.support_vectors.rows(),
                        "layer {i}: SVR shape"
                    );
                }
                None
            }
        };
        if l.kind.has_weights() {
            prev_k = k_here;
        }
    }
    Ok(())
}

pub fn save_artifact(a: &CompressedArtifact, path: &Path) -> Result<()> {
    fs::write(path, a.to_bytes())?;
    Ok(())
}

pub fn load_artifact(path: &Path) -> Result<CompressedArtifact> {
    decode_artifact(&fs::read(path)?, true)
}

// ---------------------------------------------------------- reconstruction

/// Row-per-output view of a weight matrix.
pub fn oriented(layer_kind: &LayerKind, weights: &Matrix) -> Matrix {
    match layer_kind {
        LayerKind::Dense { .. } => weights.transpose(),
        _ => weights.clone(),
    }
}

/// Inverse of [`oriented`].
pub fn unoriented(layer_kind: &LayerKind, m: &Matrix) -> Matrix {
    match layer_kind {
        LayerKind::Dense { .. } => m.transpose(),
        _ => m.clone(),
    }
}

/// Outgoing weights `n_in x n_out` from the previous neurons' reduced
/// incoming weights `prev` (`n_in x d`).
fn cross_weights(basis: &PcaBasis, svrs: &[SvrModel], prev: &Matrix) -> Result<Matrix> {
    let cols = predict_columns(svrs, prev)?;
    let r = Matrix::from_fn(prev.rows(), svrs.len(), |i, c| cols[c][i]);
    inverse_transform(basis, &r)
}

fn predict_columns(svrs: &[SvrModel], x: &Matrix) -> Result<Vec<Vec<f32>>> {
    svrs.iter().map(|m| predict(m, x)).collect()
}

/// `[known | predicted]` for an intra-compressed store, `rows x k`.
fn intra_reduced(known: &Matrix, svrs: &[SvrModel]) -> Result<Matrix> {
    let cols = predict_columns(svrs, known)?;
    let p = known.cols();
    let k = p + svrs.len();
    Ok(Matrix::from_fn(known.rows(), k, |r, c| {
        if c < p {
            known.get(r, c)
        } else {
            cols[c - p][r]
        }
    }))
}

/// Row-per-output reconstruction of an intra-compressed store.
pub fn reconstruct_intra(store: &LayerStore) -> Result<Matrix> {
    match store {
        LayerStore::IntraCompressed { basis, known, svrs } => {
            inverse_transform(basis, &intra_reduced(known, svrs)?)
        }
        _ => Err(WingsError::contract(
            "reconstruct_intra needs an intra-compressed store",
        )),
    }
}

/// Weights of every layer, in model layout. Cross-predicted layers chain
/// through the previous layer's (possibly predicted) reduced matrix.
pub fn reconstruct_weights(a: &CompressedArtifact) -> Result<Vec<Matrix>> {
    let mut out = Vec::with_capacity(a.layers.len());
    let mut prev_reduced: Option<Matrix> = None;
    for l in &a.layers {
        let (w, reduced) = match &l.store {
            LayerStore::Raw { weights } => (weights.clone(), None),
            LayerStore::RawWithBasis { weights, basis } => {
                let r = transform(basis, &oriented(&l.kind, weights))?;
                (weights.clone(), Some(r))
            }
            LayerStore::PcaReduced { basis, reduced } => {
                let m = inverse_transform(basis, reduced)?;
                (unoriented(&l.kind, &m), Some(reduced.clone()))
            }
            LayerStore::CrossPredicted {
                basis,
                svrs,
                incoming,
            } => {
                let prev = prev_reduced.as_ref().ok_or_else(|| {
                    WingsError::contract("cross prediction without a predecessor")
                })?;
                let w = cross_weights(basis, svrs, prev)?;
                let next = match incoming {
                    Some(b) => Some(transform(b, &w.transpose())?),
                    None => None,
                };
                (w, next)
            }
            LayerStore::IntraCompressed { .. } => {
                (unoriented(&l.kind, &reconstruct_intra(&l.store)?), None)
            }
        };
        if l.kind.has_weights() {
            prev_reduced = reduced;
        }
        out.push(w);
    }
    Ok(out)
}

/// Assemble a model from reconstructed weights. No finiteness check, so
/// corrupted artifacts still produce a (corrupted) model.
pub fn rebuild_model(a: &CompressedArtifact) -> Result<Model> {
    let weights = reconstruct_weights(a)?;
    Model::new(
        a.layers
            .iter()
            .zip(weights)
            .map(|(l, w)| Layer {
                kind: l.kind,
                activation: l.activation,
                weights: w,
                bias: l.bias.clone(),
            })
            .collect(),
    )
}

/// `‖a - b‖_F / ‖a‖_F` (0 when both are empty or `a` is zero and equal).
pub fn relative_residual(a: &Matrix, b: &Matrix) -> f64 {
    let num: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (*x as f64 - *y as f64).powi(2))
        .sum::<f64>()
        .sqrt();
    let den = a.frobenius_norm();
    if den == 0.0 {
        if num == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        num / den
    }
}

// ------------------------------------------------------------- compressors

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerReport {
    pub layer: usize,
    pub kind: &'static str,
    pub mode: &'static str,
    pub k: Option<usize>,
    pub split: Option<usize>,
    pub eta_achieved: Option<f64>,
    pub n_svrs: usize,
    pub svrs_converged: bool,
    pub max_kkt_residual: f64,
    pub raw_bytes: usize,
    pub stored_bytes: usize,
    /// `‖W - Ŵ‖_F / ‖W‖_F` of the reconstruction.
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompressionReport {
    pub kind: ArtifactKind,
    pub layers: Vec<LayerReport>,
    pub warnings: Vec<String>,
    pub original_bytes: u64,
    pub compressed_bytes: u64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FcnOptions {
    pub eta: f64,
    pub policy: SvrPolicy,
    /// Keep the first layer's weights verbatim (plus its basis) instead of
    /// storing its PCA-reduced form.
    pub first_layer_raw: bool,
    /// Store the final layer verbatim.
    pub keep_last_raw: bool,
    /// Store a layer raw when its predicted form would be larger.
    pub raw_fallback: bool,
    pub seed: u64,
}

impl Default for FcnOptions {
    fn default() -> Self {
        FcnOptions {
            eta: 0.9,
            policy: SvrPolicy::default(),
            first_layer_raw: false,
            keep_last_raw: false,
            raw_fallback: true,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CnnOptions {
    pub tau: f64,
    pub eta: f64,
    pub split_fraction: f64,
    pub policy: SvrPolicy,
    /// Dense layers below this many weights stay raw.
    pub min_dense_weights: usize,
    pub seed: u64,
}

impl Default for CnnOptions {
    fn default() -> Self {
        CnnOptions {
            tau: f64::INFINITY,
            eta: 0.95,
            split_fraction: 0.5,
            policy: SvrPolicy::default(),
            min_dense_weights: 1024,
            seed: 0,
        }
    }
}

/// Seed for the SVR predicting reduced column `col`. Independent of the
/// layer index, so identical layers compress identically.
fn svr_seed(seed: u64, col: usize) -> u64 {
    Rng::new(seed).derive("svr", &[col as u64]).next_u64()
}

struct SvrBatch {
    models: Vec<SvrModel>,
    converged: bool,
    max_kkt: f64,
}

fn fit_columns(
    x: &Matrix,
    targets: &Matrix,
    first_col: usize,
    policy: &SvrPolicy,
    seed: u64,
) -> Result<SvrBatch> {
    let mut models = Vec::new();
    let mut converged = true;
    let mut max_kkt = 0.0f64;
    for c in first_col..targets.cols() {
        let y = targets.column(c);
        let cfg = policy.resolve(x, &y);
        let fit = train_svr(x, &y, &cfg, svr_seed(seed, c))?;
        converged &= fit.converged;
        max_kkt = max_kkt.max(fit.kkt_residual);
        models.push(fit.model);
    }
    Ok(SvrBatch {
        models,
        converged,
        max_kkt,
    })
}

impl StoredLayer {
    /// Bytes this layer occupies in an encoded artifact.
    pub fn encoded_len(&self) -> usize {
        store_len(self)
    }
}

fn store_len(l: &StoredLayer) -> usize {
    let a = CompressedArtifact {
        kind: ArtifactKind::Cnn,
        layers: vec![l.clone()],
        original_bytes: 0,
    };
    a.encode().0.len() - HEADER_LEN - TRAILER_LEN
}

fn raw_layer(l: &Layer) -> StoredLayer {
    StoredLayer {
        kind: l.kind,
        activation: l.activation,
        store: LayerStore::Raw {
            weights: l.weights.clone(),
        },
        bias: l.bias.clone(),
    }
}

fn finish(
    kind: ArtifactKind,
    model: &Model,
    layers: Vec<StoredLayer>,
    mut reports: Vec<LayerReport>,
    warnings: Vec<String>,
) -> Result<(CompressedArtifact, CompressionReport)> {
    let art = CompressedArtifact {
        kind,
        layers,
        original_bytes: model.weight_bytes() as u64,
    };
    validate_artifact(&art)?;
    let rebuilt = reconstruct_weights(&art)?;
    for r in &mut reports {
        r.residual = relative_residual(&model.layer(r.layer).weights, &rebuilt[r.layer]);
    }
    let compressed = art.compressed_bytes();
    let report = CompressionReport {
        kind,
        layers: reports,
        warnings,
        original_bytes: art.original_bytes,
        compressed_bytes: compressed,
        ratio: art.original_bytes as f64 / compressed as f64,
    };
    Ok((art, report))
}

fn layer_report(i: usize, l: &Layer, stored: &StoredLayer) -> LayerReport {
    let b = stored.store.basis();
    LayerReport {
        layer: i,
        kind: l.kind.name(),
        mode: stored.store.mode_name(),
        k: b.map(PcaBasis::k),
        split: match &stored.store {
            LayerStore::IntraCompressed { known, .. } => Some(known.cols()),
            _ => None,
        },
        eta_achieved: b.map(|b| b.eta_achieved),
        n_svrs: stored.store.svrs().len(),
        svrs_converged: true,
        max_kkt_residual: 0.0,
        raw_bytes: 4 * (l.weights.len() + l.bias.len()),
        stored_bytes: store_len(stored),
        residual: 0.0,
    }
}

/// Cross-layer compression of an all-dense network.
///
/// The first layer is stored PCA-reduced over its incoming weights (or raw
/// with that basis). For every later layer, each row of `W` holds the
/// outgoing weights of one neuron of the previous layer; its PCA scores are
/// regressed, one SVR per component, on the reduced incoming weights of the
/// same neuron as reproduced at inference time. With `raw_fallback`, a layer
/// whose predicted form would be larger than its raw weights is stored raw.
pub fn compress_fcn(
    model: &Model,
    opts: &FcnOptions,
) -> Result<(CompressedArtifact, CompressionReport)> {
    ensure!(
        model
            .layers()
            .iter()
            .all(|l| matches!(l.kind, LayerKind::Dense { .. })),
        "FCN compression needs an all-dense model"
    );
    ensure!(
        model.len() >= 2,
        "FCN compression needs at least 2 dense layers"
    );
    ensure!(opts.eta > 0.0 && opts.eta <= 1.0, "eta must lie in (0, 1]");

    let mut layers = Vec::with_capacity(model.len());
    let mut reports = Vec::with_capacity(model.len());
    let mut warnings = Vec::new();

    let l0 = model.layer(0);
    let fit0 = fit_pca(&oriented(&l0.kind, &l0.weights), Retention::Eta(opts.eta))?;
    let store0 = if opts.first_layer_raw {
        LayerStore::RawWithBasis {
            weights: l0.weights.clone(),
            basis: fit0.basis,
        }
    } else {
        LayerStore::PcaReduced {
            basis: fit0.basis,
            reduced: fit0.reduced.clone(),
        }
    };
    let stored0 = StoredLayer {
        kind: l0.kind,
        activation: l0.activation,
        store: store0,
        bias: l0.bias.clone(),
    };
    reports.push(layer_report(0, l0, &stored0));
    layers.push(stored0);
    let mut prev = fit0.reduced;

    let last = model.len() - 1;
    let predicted = |i: usize| i <= last && !(opts.keep_last_raw && i == last);
    for i in 1..model.len() {
        let l = model.layer(i);
        if !predicted(i) {
            let s = raw_layer(l);
            reports.push(layer_report(i, l, &s));
            layers.push(s);
            break;
        }
        // rows are the previous layer's neurons, matching `prev` row for row
        let fit = fit_pca(&l.weights, Retention::Eta(opts.eta))?;
        let batch = fit_columns(&prev, &fit.reduced, 0, &opts.policy, opts.seed)?;
        if !batch.converged {
            warnings.push(format!("layer {i}: some SVRs hit the iteration cap"));
        }
        let w_hat = cross_weights(&fit.basis, &batch.models, &prev)?;
        let incoming = if predicted(i + 1) {
            Some(fit_pca(&l.weights.transpose(), Retention::Eta(opts.eta))?.basis)
        } else {
            None
        };
        let s = StoredLayer {
            kind: l.kind,
            activation: l.activation,
            store: LayerStore::CrossPredicted {
                basis: fit.basis,
                svrs: batch.models,
                incoming: incoming.clone(),
            },
            bias: l.bias.clone(),
        };
        // same incoming basis either way, so only the weight stores compete
        let fallback = match &incoming {
            Some(b) => StoredLayer {
                store: LayerStore::RawWithBasis {
                    weights: l.weights.clone(),
                    basis: b.clone(),
                },
                ..raw_layer(l)
            },
            None => raw_layer(l),
        };
        if opts.raw_fallback && store_len(&s) > store_len(&fallback) {
            warnings.push(format!(
                "layer {i}: prediction would take {} bytes, stored raw instead",
                store_len(&s)
            ));
            if let Some(b) = &incoming {
                prev = transform(b, &l.weights.transpose())?;
            }
            reports.push(layer_report(i, l, &fallback));
            layers.push(fallback);
            continue;
        }
        if let Some(b) = &incoming {
            prev = transform(b, &w_hat.transpose())?;
        }
        let mut rep = layer_report(i, l, &s);
        rep.svrs_converged = batch.converged;
        rep.max_kkt_residual = batch.max_kkt;
        reports.push(rep);
        layers.push(s);
    }
    finish(ArtifactKind::Fcn, model, layers, reports, warnings)
}

/// Split point for `k` retained components: `max(1, round(f k))`, kept below
/// `k` whenever there are at least two components.
pub fn split_point(k: usize, split_fraction: f64) -> usize {
    let p = ((split_fraction * k as f64).round() as usize).max(1);
    if k >= 2 {
        p.min(k - 1)
    } else {
        p.min(k)
    }
}

/// Intra-layer store for a row-per-output matrix.
pub fn compress_intra(
    m: &Matrix,
    eta: f64,
    split_fraction: f64,
    policy: &SvrPolicy,
    seed: u64,
) -> Result<(LayerStore, bool, f64)> {
    let fit = fit_pca(m, Retention::Eta(eta))?;
    let k = fit.basis.k();
    let p = split_point(k, split_fraction);
    let known = fit.reduced.column_range(0, p);
    let batch = fit_columns(&known, &fit.reduced, p, policy, seed)?;
    Ok((
        LayerStore::IntraCompressed {
            basis: fit.basis,
            known,
            svrs: batch.models,
        },
        batch.converged,
        batch.max_kkt,
    ))
}

/// Sensitivity-aware intra-layer compression.
///
/// Conv layers scoring below `tau` are intra-compressed, the rest stay raw.
/// Dense layers are intra-compressed when they have at least
/// `min_dense_weights` weights and the compressed store is smaller than the
/// raw one.
pub fn compress_cnn(
    model: &Model,
    scores: &[LayerScore],
    opts: &CnnOptions,
) -> Result<(CompressedArtifact, CompressionReport)> {
    ensure!(
        model
            .layers()
            .iter()
            .any(|l| matches!(l.kind, LayerKind::Conv2D(_))),
        "CNN compression needs at least one conv layer"
    );
    ensure!(
        opts.split_fraction > 0.0 && opts.split_fraction < 1.0,
        "split fraction must lie in (0, 1)"
    );
    ensure!(opts.eta > 0.0 && opts.eta <= 1.0, "eta must lie in (0, 1]");
    ensure!(!opts.tau.is_nan(), "tau must not be NaN");
    let score_of = |i: usize| scores.iter().find(|s| s.layer == i).map(|s| s.score);

    let mut layers = Vec::with_capacity(model.len());
    let mut reports = Vec::new();
    let mut warnings = Vec::new();
    let mut any_conv = false;
    for (i, l) in model.layers().iter().enumerate() {
        let raw = raw_layer(l);
        let candidate = match l.kind {
            LayerKind::Conv2D(_) => {
                let s = score_of(i).ok_or_else(|| {
                    WingsError::contract(format!("no sensitivity score for conv layer {i}"))
                })?;
                s < opts.tau
            }
            LayerKind::Dense { .. } => l.weights.len() >= opts.min_dense_weights,
            _ => false,
        };
        if !candidate {
            if l.kind.has_weights() {
                reports.push(layer_report(i, l, &raw));
            }
            layers.push(raw);
            continue;
        }
        let m = oriented(&l.kind, &l.weights);
        let (store, converged, kkt) =
            match compress_intra(&m, opts.eta, opts.split_fraction, &opts.policy, opts.seed) {
                Ok(v) => v,
                Err(WingsError::Degenerate(msg)) => {
                    warnings.push(format!("layer {i}: kept raw ({msg})"));
                    reports.push(layer_report(i, l, &raw));
                    layers.push(raw);
                    continue;
                }
                Err(e) => return Err(e),
            };
        let s = StoredLayer {
            kind: l.kind,
            activation: l.activation,
            store,
            bias: l.bias.clone(),
        };
        let is_dense = matches!(l.kind, LayerKind::Dense { .. });
        if is_dense && store_len(&s) >= store_len(&raw) {
            reports.push(layer_report(i, l, &raw));
            layers.push(raw);
            continue;
        }
        if !is_dense {
            any_conv = true;
        }
        if !converged {
            warnings.push(format!("layer {i}: some SVRs hit the iteration cap"));
        }
        let mut rep = layer_report(i, l, &s);
        rep.svrs_converged = converged;
        rep.max_kkt_residual = kkt;
        reports.push(rep);
        layers.push(s);
    }
    if !any_conv {
        warnings.push("no conv layer selected; conv weights stored raw".into());
    }
    finish(ArtifactKind::Cnn, model, layers, reports, warnings)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::svr::{EpsilonRule, GammaRule};

    fn conv_model(seed: u64) -> Model {
        Model::from_arch("conv4-pool-conv6-dense3", (1, 6, 6), seed).unwrap()
    }

    fn scores_for(model: &Model, value: f64) -> Vec<LayerScore> {
        model
            .weighted_layers()
            .into_iter()
            .map(|l| LayerScore {
                layer: l,
                kind: model.layer(l).kind.name(),
                score: value,
            })
            .collect()
    }

    #[test]
    fn split_points() {
        assert_eq!(split_point(1, 0.5), 1);
        assert_eq!(split_point(2, 0.5), 1);
        assert_eq!(split_point(10, 0.5), 5);
        assert_eq!(split_point(10, 0.99), 9);
        assert_eq!(split_point(10, 0.01), 1);
    }

    #[test]
    fn all_raw_cnn_round_trips_and_is_not_smaller() {
        let m = conv_model(1);
        let opts = CnnOptions {
            tau: 0.0,
            min_dense_weights: usize::MAX,
            ..Default::default()
        };
        let (art, rep) = compress_cnn(&m, &scores_for(&m, 1.0), &opts).unwrap();
        assert!(art.layers.iter().all(|l| !l.store.is_compressed()));
        assert!(rep.ratio <= 1.0);
        assert!(!rep.warnings.is_empty());
        let rebuilt = rebuild_model(&art).unwrap();
        assert_eq!(rebuilt.to_bytes(), m.to_bytes());
        let bytes = art.to_bytes();
        assert_eq!(CompressedArtifact::from_bytes(&bytes).unwrap(), art);
        assert_eq!(
            u64::from_le_bytes(bytes[bytes.len() - 8..].try_into().unwrap()),
            bytes.len() as u64
        );
    }

    #[test]
    fn intra_with_no_prediction_is_plain_pca() {
        let mut r = Rng::new(3);
        let m = Matrix::from_fn(8, 5, |_, c| r.uniform(-1.0, 1.0) / (1.0 + c as f32));
        let fit = fit_pca(&m, Retention::Eta(0.9)).unwrap();
        let store = LayerStore::IntraCompressed {
            basis: fit.basis.clone(),
            known: fit.reduced.clone(),
            svrs: vec![],
        };
        let rec = reconstruct_intra(&store).unwrap();
        assert_eq!(rec, inverse_transform(&fit.basis, &fit.reduced).unwrap());
        let mut resid = 0.0f64;
        let mut energy = 0.0f64;
        for row in 0..8 {
            for c in 0..5 {
                let centered = m.get(row, c) as f64 - fit.basis.mean[c] as f64;
                energy += centered * centered;
                resid += (m.get(row, c) as f64 - rec.get(row, c) as f64).powi(2);
            }
        }
        assert!(resid / energy <= 1.0 - fit.basis.eta_achieved + 1e-3);
    }

    #[test]
    fn selected_and_raw_layers() {
        let m = conv_model(2);
        let mut scores = scores_for(&m, 1.0);
        scores[0].score = 0.1; // first conv selected
        let opts = CnnOptions {
            tau: 0.5,
            eta: 0.95,
            min_dense_weights: usize::MAX,
            ..Default::default()
        };
        let (art, rep) = compress_cnn(&m, &scores, &opts).unwrap();
        assert_eq!(art.layers[0].store.mode_name(), "intra-compressed");
        assert_eq!(art.layers[2].store.mode_name(), "raw");
        let rebuilt = rebuild_model(&art).unwrap();
        assert_eq!(
            rebuilt.layer(2).weights.to_le_bytes(),
            m.layer(2).weights.to_le_bytes()
        );
        assert!(rep.layers[0].residual > 0.0);
        let again = compress_cnn(&m, &scores, &opts).unwrap().0;
        assert_eq!(again.to_bytes(), art.to_bytes());
    }

    #[test]
    fn identical_layers_store_identically() {
        let mut layers = Model::from_arch("conv4-pool-dense36-dense36-dense3", (1, 6, 6), 4)
            .unwrap()
            .into_layers();
        let w = Matrix::from_fn(36, 36, |r, c| {
            let (r, c) = (r as f32, c as f32);
            0.3 * (0.7 * r).sin() * (0.4 * c).cos() + 0.1 * (0.2 * r + 0.9 * c).sin()
        });
        layers[3].weights = w.clone();
        layers[4].weights = w;
        layers[4].bias = layers[3].bias.clone();
        let m = Model::new(layers).unwrap();
        let opts = CnnOptions {
            tau: 10.0,
            min_dense_weights: 1,
            ..Default::default()
        };
        let (art, _) = compress_cnn(&m, &scores_for(&m, 0.0), &opts).unwrap();
        assert!(art.layers[3].store.is_compressed());
        assert_eq!(art.layers[3].store, art.layers[4].store);
    }

    #[test]
    fn fcn_round_trip_and_accounting() {
        let m = Model::mlp(&[12, 10, 8, 4], 5).unwrap();
        let opts = FcnOptions {
            eta: 0.9,
            raw_fallback: false,
            ..Default::default()
        };
        let (art, rep) = compress_fcn(&m, &opts).unwrap();
        let bytes = art.to_bytes();
        assert_eq!(rep.compressed_bytes, bytes.len() as u64);
        let sum: usize = rep.layers.iter().map(|l| l.stored_bytes).sum();
        assert_eq!(sum + HEADER_LEN + TRAILER_LEN, bytes.len());
        let back = CompressedArtifact::from_bytes(&bytes).unwrap();
        assert_eq!(back.to_bytes(), bytes);
        assert_eq!(art.layers[0].store.mode_name(), "pca-reduced");
        assert_eq!(art.layers[1].store.mode_name(), "cross-predicted");
    }

    #[test]
    fn fcn_near_lossless_regime() {
        let m = Model::mlp(&[6, 5, 4], 6).unwrap();
        let opts = FcnOptions {
            eta: 1.0,
            policy: SvrPolicy {
                c: 1000.0,
                epsilon: EpsilonRule::Absolute(1e-5),
                gamma: GammaRule::InverseDim,
                max_passes: 100_000,
                tol: 1e-6,
            },
            raw_fallback: false,
            ..Default::default()
        };
        let (art, rep) = compress_fcn(&m, &opts).unwrap();
        assert!(
            rep.layers.iter().all(|l| l.residual < 1e-3),
            "{:?}",
            rep.layers
        );
        let rebuilt = rebuild_model(&art).unwrap();
        let mut r = Rng::new(1);
        let x = Matrix::from_fn(20, 6, |_, _| r.uniform(0.0, 1.0));
        let a = crate::model::predict(&m, &x).unwrap();
        let b = crate::model::predict(&rebuilt, &x).unwrap();
        for (u, v) in a.data().iter().zip(b.data()) {
            assert!((u - v).abs() < 0.05);
        }
    }

    #[test]
    fn fcn_falls_back_to_raw_when_prediction_grows() {
        let m = Model::mlp(&[40, 30, 20, 4], 8).unwrap();
        let opts = FcnOptions {
            eta: 0.99,
            ..Default::default()
        };
        let (art, rep) = compress_fcn(&m, &opts).unwrap();
        assert_eq!(art.layers[1].store.mode_name(), "raw-with-basis");
        assert!(rep.warnings.iter().any(|w| w.starts_with("layer 1")));
        assert!(rep
            .layers
            .iter()
            .skip(1)
            .all(|l| l.stored_bytes <= l.raw_bytes + 4 * (l.k.unwrap_or(0) + 2) * 40));
        let rebuilt = reconstruct_weights(&art).unwrap();
        assert_eq!(rebuilt[1], m.layer(1).weights);
        let (grown, _) = compress_fcn(
            &m,
            &FcnOptions {
                raw_fallback: false,
                ..opts
            },
        )
        .unwrap();
        assert_eq!(grown.layers[1].store.mode_name(), "cross-predicted");
        assert!(grown.compressed_bytes() > art.compressed_bytes());
    }

    #[test]
    fn fcn_preconditions() {
        assert!(compress_fcn(&Model::mlp(&[4, 3], 0).unwrap(), &FcnOptions::default()).is_err());
        assert!(compress_fcn(&conv_model(0), &FcnOptions::default()).is_err());
        let m = Model::mlp(&[4, 3, 2], 0).unwrap();
        assert!(compress_cnn(&m, &[], &CnnOptions::default()).is_err());
    }

    #[test]
    fn keep_last_raw_and_first_raw() {
        let m = Model::mlp(&[12, 10, 8, 4], 5).unwrap();
        let opts = FcnOptions {
            keep_last_raw: true,
            first_layer_raw: true,
            ..Default::default()
        };
        let (art, _) = compress_fcn(&m, &opts).unwrap();
        assert_eq!(art.layers[0].store.mode_name(), "raw-with-basis");
        assert_eq!(art.layers[2].store.mode_name(), "raw");
        let rebuilt = rebuild_model(&art).unwrap();
        assert_eq!(rebuilt.layer(0).weights, m.layer(0).weights);
        assert_eq!(rebuilt.layer(2).weights, m.layer(2).weights);
        assert_eq!(
            CompressedArtifact::from_bytes(&art.to_bytes()).unwrap(),
            art
        );
    }

    #[test]
    fn decode_errors() {
        let m = Model::mlp(&[6, 5, 4], 6).unwrap();
        let (art, _) = compress_fcn(&m, &FcnOptions::default()).unwrap();
        let bytes = art.to_bytes();
        let mut bad = bytes.clone();
        bad[0] ^= 0xFF;
        assert!(matches!(
            CompressedArtifact::from_bytes(&bad),
            Err(WingsError::Format { offset: 0, .. })
        ));
        for cut in [3, 10, bytes.len() / 2, bytes.len() - 1] {
            assert!(matches!(
                CompressedArtifact::from_bytes(&bytes[..cut]),
                Err(WingsError::Format { .. })
            ));
        }
        let mut bad_mode = bytes.clone();
        bad_mode[HEADER_LEN] = 9;
        assert!(CompressedArtifact::from_bytes(&bad_mode).is_err());
    }

    #[test]
    fn regions_cover_payloads() {
        let m = conv_model(3);
        let opts = CnnOptions {
            tau: 10.0,
            min_dense_weights: 1,
            ..Default::default()
        };
        let (art, _) = compress_cnn(&m, &scores_for(&m, 0.0), &opts).unwrap();
        let (bytes, regions) = art.encode();
        for w in regions.windows(2) {
            assert!(w[0].end <= w[1].start);
        }
        for r in &regions {
            assert!(r.end <= bytes.len() && (r.end - r.start) % 4 == 0);
        }
        assert!(regions
            .iter()
            .any(|r| r.class == RegionClass::PcaComponents));
        assert!(regions.iter().any(|r| r.class == RegionClass::SvrDualCoefs));
        // component bytes decode to the stored values
        let r = regions
            .iter()
            .find(|r| r.class == RegionClass::PcaComponents)
            .unwrap();
        let first = f32::from_le_bytes(bytes[r.start..r.start + 4].try_into().unwrap());
        assert_eq!(
            first,
            art.layers[r.layer].store.basis().unwrap().components.data()[0]
        );
    }
}
