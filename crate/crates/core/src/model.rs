//! A small feed-forward network engine: dense and im2col convolution layers,
//! 2x2 max pooling, softmax cross-entropy, SGD, and the WNGS model format.

use std::fs;
use std::path::Path;

use crate::codec::{Reader, Writer};
use crate::data::Dataset;
use crate::error::{ensure, Result, WingsError};
use crate::linalg::{gemm, gemm_nt, gemm_tn, Matrix};
use crate::rng::Rng;

pub const MODEL_MAGIC: [u8; 4] = *b"WNGS";
pub const MODEL_VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Activation {
    None,
    ReLU,
    Softmax,
}

impl Activation {
    pub fn code(self) -> u8 {
        match self {
            Activation::None => 0,
            Activation::ReLU => 1,
            Activation::Softmax => 2,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(Activation::None),
            1 => Some(Activation::ReLU),
            2 => Some(Activation::Softmax),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::None => "none",
            Activation::ReLU => "relu",
            Activation::Softmax => "softmax",
        }
    }
}

/// Geometry of a 2-D convolution over a `c_in x in_h x in_w` input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ConvMeta {
    pub c_in: usize,
    pub c_out: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub in_h: usize,
    pub in_w: usize,
}

impl ConvMeta {
    pub fn out_h(&self) -> usize {
        (self.in_h + 2 * self.pad - self.kh) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.in_w + 2 * self.pad - self.kw) / self.stride + 1
    }

    /// Length of one im2col patch, `c_in * kh * kw`.
    pub fn patch_len(&self) -> usize {
        self.c_in * self.kh * self.kw
    }

    fn positions(&self) -> usize {
        self.out_h() * self.out_w()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LayerKind {
    Dense { n_in: usize, n_out: usize },
    Conv2D(ConvMeta),
    MaxPool2x2 { c: usize, h: usize, w: usize },
    Flatten { c: usize, h: usize, w: usize },
}

impl LayerKind {
    pub fn code(&self) -> u8 {
        match self {
            LayerKind::Dense { .. } => 0,
            LayerKind::Conv2D(_) => 1,
            LayerKind::MaxPool2x2 { .. } => 2,
            LayerKind::Flatten { .. } => 3,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            LayerKind::Dense { .. } => "dense",
            LayerKind::Conv2D(_) => "conv2d",
            LayerKind::MaxPool2x2 { .. } => "maxpool2x2",
            LayerKind::Flatten { .. } => "flatten",
        }
    }

    pub fn has_weights(&self) -> bool {
        matches!(self, LayerKind::Dense { .. } | LayerKind::Conv2D(_))
    }

    /// `(rows, cols)` of the weight matrix; `(0, 0)` for parameter-free layers.
    pub fn weight_shape(&self) -> (usize, usize) {
        match *self {
            LayerKind::Dense { n_in, n_out } => (n_in, n_out),
            LayerKind::Conv2D(m) => (m.c_out, m.patch_len()),
            _ => (0, 0),
        }
    }

    pub fn bias_len(&self) -> usize {
        match *self {
            LayerKind::Dense { n_out, .. } => n_out,
            LayerKind::Conv2D(m) => m.c_out,
            _ => 0,
        }
    }

    pub fn in_len(&self) -> usize {
        match *self {
            LayerKind::Dense { n_in, .. } => n_in,
            LayerKind::Conv2D(m) => m.c_in * m.in_h * m.in_w,
            LayerKind::MaxPool2x2 { c, h, w } | LayerKind::Flatten { c, h, w } => c * h * w,
        }
    }

    pub fn out_len(&self) -> usize {
        match *self {
            LayerKind::Dense { n_out, .. } => n_out,
            LayerKind::Conv2D(m) => m.c_out * m.positions(),
            LayerKind::MaxPool2x2 { c, h, w } => c * (h / 2) * (w / 2),
            LayerKind::Flatten { c, h, w } => c * h * w,
        }
    }

    /// Spatial input shape, if the layer consumes one.
    fn in_shape(&self) -> Option<(usize, usize, usize)> {
        match *self {
            LayerKind::Dense { .. } => None,
            LayerKind::Conv2D(m) => Some((m.c_in, m.in_h, m.in_w)),
            LayerKind::MaxPool2x2 { c, h, w } | LayerKind::Flatten { c, h, w } => Some((c, h, w)),
        }
    }

    /// Spatial output shape, if the layer produces one.
    fn out_shape(&self) -> Option<(usize, usize, usize)> {
        match *self {
            LayerKind::Conv2D(m) => Some((m.c_out, m.out_h(), m.out_w())),
            LayerKind::MaxPool2x2 { c, h, w } => Some((c, h / 2, w / 2)),
            _ => None,
        }
    }

    /// Checks geometry and that every derived size fits in `usize`.
    fn validate(&self) -> std::result::Result<(), String> {
        let mul = |xs: &[usize]| xs.iter().try_fold(1usize, |a, &b| a.checked_mul(b));
        match *self {
            LayerKind::Dense { n_in, n_out } => {
                if n_in == 0 || n_out == 0 {
                    return Err("dense layer with zero width".into());
                }
                mul(&[n_in, n_out]).ok_or("dense size overflows")?;
            }
            LayerKind::Conv2D(m) => {
                if m.c_in == 0 || m.c_out == 0 || m.kh == 0 || m.kw == 0 || m.stride == 0 {
                    return Err("conv layer with a zero dimension".into());
                }
                let ph = m
                    .in_h
                    .checked_add(m.pad.checked_mul(2).ok_or("pad overflows")?);
                let pw = m.in_w.checked_add(m.pad * 2);
                match (ph, pw) {
                    (Some(ph), Some(pw)) if ph >= m.kh && pw >= m.kw => {}
                    _ => return Err("conv kernel larger than padded input".into()),
                }
                mul(&[m.c_out, m.c_in, m.kh, m.kw]).ok_or("conv weight size overflows")?;
                mul(&[m.c_in, m.in_h, m.in_w]).ok_or("conv input size overflows")?;
                mul(&[m.c_out, m.out_h(), m.out_w()]).ok_or("conv output size overflows")?;
            }
            LayerKind::MaxPool2x2 { c, h, w } => {
                if c == 0 || h < 2 || w < 2 {
                    return Err("pooling needs at least a 2x2 input".into());
                }
                mul(&[c, h, w]).ok_or("pool size overflows")?;
            }
            LayerKind::Flatten { c, h, w } => {
                if c == 0 || h == 0 || w == 0 {
                    return Err("flatten with a zero dimension".into());
                }
                mul(&[c, h, w]).ok_or("flatten size overflows")?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub kind: LayerKind,
    pub activation: Activation,
    /// Dense: `n_in x n_out`. Conv: `c_out x (c_in * kh * kw)`. Empty otherwise.
    pub weights: Matrix,
    pub bias: Vec<f32>,
}

impl Layer {
    /// Layer of the given kind with zero weights and biases.
    pub fn zeroed(kind: LayerKind, activation: Activation) -> Layer {
        let (r, c) = kind.weight_shape();
        Layer {
            kind,
            activation,
            weights: Matrix::zeros(r, c),
            bias: vec![0.0; kind.bias_len()],
        }
    }

    pub fn dense(n_in: usize, n_out: usize, activation: Activation) -> Layer {
        Layer::zeroed(LayerKind::Dense { n_in, n_out }, activation)
    }

    pub fn conv(meta: ConvMeta, activation: Activation) -> Layer {
        Layer::zeroed(LayerKind::Conv2D(meta), activation)
    }

    pub fn max_pool(c: usize, h: usize, w: usize) -> Layer {
        Layer::zeroed(LayerKind::MaxPool2x2 { c, h, w }, Activation::None)
    }

    pub fn flatten(c: usize, h: usize, w: usize) -> Layer {
        Layer::zeroed(LayerKind::Flatten { c, h, w }, Activation::None)
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    layers: Vec<Layer>,
}

impl Model {
    /// Validates shapes and layer chaining.
    pub fn new(layers: Vec<Layer>) -> Result<Model> {
        ensure!(!layers.is_empty(), "model has no layers");
        ensure!(
            layers
                .iter()
                .any(|l| matches!(l.kind, LayerKind::Dense { .. })),
            "model needs at least one dense layer"
        );
        let last = layers.len() - 1;
        for (i, l) in layers.iter().enumerate() {
            l.kind
                .validate()
                .map_err(|e| WingsError::contract(format!("layer {i}: {e}")))?;
            let (r, c) = l.kind.weight_shape();
            ensure!(
                l.weights.shape() == (r, c),
                "layer {i}: weights are {}x{}, expected {r}x{c}",
                l.weights.rows(),
                l.weights.cols()
            );
            ensure!(
                l.bias.len() == l.kind.bias_len(),
                "layer {i}: bias has {} entries, expected {}",
                l.bias.len(),
                l.kind.bias_len()
            );
            ensure!(
                l.activation != Activation::Softmax || i == last,
                "layer {i}: softmax is only allowed on the final layer"
            );
            ensure!(
                l.kind.has_weights() || l.activation == Activation::None,
                "layer {i}: {} takes no activation",
                l.kind.name()
            );
            if i > 0 {
                let prev = &layers[i - 1].kind;
                ensure!(
                    prev.out_len() == l.kind.in_len(),
                    "layer {i}: input length {} does not match previous output {}",
                    l.kind.in_len(),
                    prev.out_len()
                );
                if let (Some(p), Some(q)) = (prev.out_shape(), l.kind.in_shape()) {
                    ensure!(p == q, "layer {i}: input shape {q:?} does not match {p:?}");
                }
            }
        }
        Ok(Model { layers })
    }

    /// Validated model with Glorot-uniform weights and zero biases.
    pub fn init(mut layers: Vec<Layer>, seed: u64) -> Result<Model> {
        let root = Rng::new(seed);
        for (i, l) in layers.iter_mut().enumerate() {
            let (fan_in, fan_out) = match l.kind {
                LayerKind::Dense { n_in, n_out } => (n_in, n_out),
                LayerKind::Conv2D(m) => (m.patch_len(), m.c_out * m.kh * m.kw),
                _ => continue,
            };
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt() as f32;
            let mut rng = root.derive("init", &[i as u64]);
            l.weights
                .data_mut()
                .iter_mut()
                .for_each(|w| *w = rng.uniform(-limit, limit));
            l.bias.iter_mut().for_each(|b| *b = 0.0);
        }
        Model::new(layers)
    }

    /// Build from a compact architecture string such as
    /// `dense256-dense128-dense10` or `conv16-pool-conv32-pool-dense10`.
    ///
    /// `convN` is a 3x3, stride 1, pad 1 convolution with ReLU; `pool` is 2x2
    /// max pooling; `denseN` uses ReLU except the last, which uses softmax. A
    /// flatten is inserted between spatial and dense layers.
    pub fn from_arch(arch: &str, input: (usize, usize, usize), seed: u64) -> Result<Model> {
        let tokens: Vec<&str> = arch
            .split('-')
            .map(str::trim)
            .filter(|t| !t.is_empty())
            .collect();
        ensure!(!tokens.is_empty(), "empty architecture string");
        let mut layers = Vec::new();
        let (mut c, mut h, mut w) = input;
        let mut spatial = false;
        let mut flat = c * h * w;
        for (ti, tok) in tokens.iter().enumerate() {
            let is_last = ti + 1 == tokens.len();
            if let Some(n) = tok.strip_prefix("conv") {
                let c_out: usize = n
                    .parse()
                    .map_err(|_| WingsError::contract(format!("bad conv token '{tok}'")))?;
                ensure!(flat == c * h * w, "conv after dense in '{arch}'");
                let meta = ConvMeta {
                    c_in: c,
                    c_out,
                    kh: 3,
                    kw: 3,
                    stride: 1,
                    pad: 1,
                    in_h: h,
                    in_w: w,
                };
                layers.push(Layer::conv(meta, Activation::ReLU));
                c = c_out;
                spatial = true;
                flat = c * h * w;
            } else if *tok == "pool" {
                ensure!(flat == c * h * w, "pool after dense in '{arch}'");
                layers.push(Layer::max_pool(c, h, w));
                h /= 2;
                w /= 2;
                spatial = true;
                flat = c * h * w;
            } else if let Some(n) = tok.strip_prefix("dense") {
                let n_out: usize = n
                    .parse()
                    .map_err(|_| WingsError::contract(format!("bad dense token '{tok}'")))?;
                if spatial {
                    layers.push(Layer::flatten(c, h, w));
                    spatial = false;
                }
                let act = if is_last {
                    Activation::Softmax
                } else {
                    Activation::ReLU
                };
                layers.push(Layer::dense(flat, n_out, act));
                flat = n_out;
            } else {
                return Err(WingsError::contract(format!("unknown layer token '{tok}'")));
            }
        }
        Model::init(layers, seed)
    }

    /// `sizes[0]` inputs, ReLU hidden layers, softmax output.
    pub fn mlp(sizes: &[usize], seed: u64) -> Result<Model> {
        ensure!(
            sizes.len() >= 2,
            "an MLP needs at least input and output sizes"
        );
        let arch: Vec<String> = sizes[1..].iter().map(|n| format!("dense{n}")).collect();
        Model::from_arch(&arch.join("-"), (1, 1, sizes[0]), seed)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layer(&self, i: usize) -> &Layer {
        &self.layers[i]
    }

    /// Mutable access for in-place weight edits; shapes must not change.
    pub fn weights_mut(&mut self, i: usize) -> (&mut Matrix, &mut Vec<f32>) {
        let l = &mut self.layers[i];
        (&mut l.weights, &mut l.bias)
    }

    pub fn into_layers(self) -> Vec<Layer> {
        self.layers
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn input_len(&self) -> usize {
        self.layers[0].kind.in_len()
    }

    pub fn output_len(&self) -> usize {
        self.layers[self.layers.len() - 1].kind.out_len()
    }

    /// Indices of layers that carry weights.
    pub fn weighted_layers(&self) -> Vec<usize> {
        (0..self.layers.len())
            .filter(|&i| self.layers[i].kind.has_weights())
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    /// Bytes of all weights and biases at 32 bits each.
    pub fn weight_bytes(&self) -> usize {
        self.param_count() * 4
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.is_finite() && l.bias.iter().all(|b| b.is_finite()))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        encode_model(self)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Model> {
        decode_model(bytes, true)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vec<f32>>,
}

impl Gradients {
    pub fn zeros_like(model: &Model) -> Gradients {
        Gradients {
            weights: model
                .layers
                .iter()
                .map(|l| Matrix::zeros(l.weights.rows(), l.weights.cols()))
                .collect(),
            biases: model
                .layers
                .iter()
                .map(|l| vec![0.0; l.bias.len()])
                .collect(),
        }
    }
}

// ---------------------------------------------------------------- forward

struct LayerOut {
    /// Pre-activation values, kept only for layers with an activation.
    pre: Option<Matrix>,
    out: Matrix,
    /// For pooling: input index of each output's maximum.
    argmax: Vec<u32>,
}

fn im2col(x: &[f32], m: &ConvMeta) -> Matrix {
    let (oh, ow) = (m.out_h(), m.out_w());
    let k = m.patch_len();
    let mut out = vec![0.0f32; oh * ow * k];
    for oy in 0..oh {
        for ox in 0..ow {
            let row = &mut out[(oy * ow + ox) * k..(oy * ow + ox + 1) * k];
            let mut idx = 0;
            for ci in 0..m.c_in {
                let plane = &x[ci * m.in_h * m.in_w..(ci + 1) * m.in_h * m.in_w];
                for ky in 0..m.kh {
                    let iy = (oy * m.stride + ky) as isize - m.pad as isize;
                    for kx in 0..m.kw {
                        let ix = (ox * m.stride + kx) as isize - m.pad as isize;
                        if iy >= 0 && ix >= 0 && (iy as usize) < m.in_h && (ix as usize) < m.in_w {
                            row[idx] = plane[iy as usize * m.in_w + ix as usize];
                        }
                        idx += 1;
                    }
                }
            }
        }
    }
    Matrix::from_raw(oh * ow, k, out)
}

fn col2im_add(patches: &Matrix, m: &ConvMeta, dx: &mut [f32]) {
    let (oh, ow) = (m.out_h(), m.out_w());
    for oy in 0..oh {
        for ox in 0..ow {
            let row = patches.row(oy * ow + ox);
            let mut idx = 0;
            for ci in 0..m.c_in {
                for ky in 0..m.kh {
                    let iy = (oy * m.stride + ky) as isize - m.pad as isize;
                    for kx in 0..m.kw {
                        let ix = (ox * m.stride + kx) as isize - m.pad as isize;
                        if iy >= 0 && ix >= 0 && (iy as usize) < m.in_h && (ix as usize) < m.in_w {
                            dx[ci * m.in_h * m.in_w + iy as usize * m.in_w + ix as usize] +=
                                row[idx];
                        }
                        idx += 1;
                    }
                }
            }
        }
    }
}

fn relu_inplace(v: &mut [f32]) {
    // NaN passes through so corrupted weights stay visible downstream
    for x in v {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
}

fn softmax_rows(m: &mut Matrix) {
    let cols = m.cols();
    for r in 0..m.rows() {
        let row = m.row_mut(r);
        let max = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
        let mut sum = 0.0f32;
        for x in row.iter_mut() {
            *x = (*x - max).exp();
            sum += *x;
        }
        for x in row.iter_mut() {
            *x /= sum;
        }
        debug_assert_eq!(row.len(), cols);
    }
}

fn layer_forward(layer: &Layer, x: &Matrix, keep_pre: bool) -> LayerOut {
    let n = x.rows();
    let mut argmax = Vec::new();
    let mut z = match layer.kind {
        LayerKind::Dense { .. } => {
            let mut z = gemm(x, &layer.weights);
            for r in 0..n {
                for (v, b) in z.row_mut(r).iter_mut().zip(&layer.bias) {
                    *v += b;
                }
            }
            z
        }
        LayerKind::Conv2D(m) => {
            let p = m.positions();
            let mut z = Matrix::zeros(n, m.c_out * p);
            for s in 0..n {
                let patches = im2col(x.row(s), &m);
                let y = gemm_nt(&patches, &layer.weights); // P x C_out
                let out = z.row_mut(s);
                for pos in 0..p {
                    for co in 0..m.c_out {
                        out[co * p + pos] = y.get(pos, co) + layer.bias[co];
                    }
                }
            }
            z
        }
        LayerKind::MaxPool2x2 { c, h, w } => {
            let (oh, ow) = (h / 2, w / 2);
            let mut z = Matrix::zeros(n, c * oh * ow);
            argmax = vec![0u32; n * c * oh * ow];
            for s in 0..n {
                let xin = x.row(s);
                let out = z.row_mut(s);
                for ch in 0..c {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let o = ch * oh * ow + oy * ow + ox;
                            let mut best = ch * h * w + 2 * oy * w + 2 * ox;
                            for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                                let i = ch * h * w + (2 * oy + dy) * w + 2 * ox + dx;
                                if xin[i] > xin[best] {
                                    best = i;
                                }
                            }
                            out[o] = xin[best];
                            argmax[s * c * oh * ow + o] = best as u32;
                        }
                    }
                }
            }
            z
        }
        LayerKind::Flatten { .. } => x.clone(),
    };
    let pre = if keep_pre && layer.activation != Activation::None {
        Some(z.clone())
    } else {
        None
    };
    match layer.activation {
        Activation::None => {}
        Activation::ReLU => relu_inplace(z.data_mut()),
        Activation::Softmax => softmax_rows(&mut z),
    }
    LayerOut {
        pre,
        out: z,
        argmax,
    }
}

fn check_batch(model: &Model, batch: &Matrix) -> Result<()> {
    ensure!(
        batch.cols() == model.input_len(),
        "batch has {} columns, model expects {}",
        batch.cols(),
        model.input_len()
    );
    Ok(())
}

/// Post-activation output of every layer.
pub fn forward(model: &Model, batch: &Matrix) -> Result<Vec<Matrix>> {
    check_batch(model, batch)?;
    let mut outs: Vec<Matrix> = Vec::with_capacity(model.layers.len());
    for (i, l) in model.layers.iter().enumerate() {
        let x = if i == 0 { batch } else { &outs[i - 1] };
        let o = layer_forward(l, x, false).out;
        outs.push(o);
    }
    Ok(outs)
}

/// Final-layer output only.
pub fn predict(model: &Model, batch: &Matrix) -> Result<Matrix> {
    check_batch(model, batch)?;
    let mut x = batch.clone();
    for l in &model.layers {
        x = layer_forward(l, &x, false).out;
    }
    Ok(x)
}

/// Index of the largest entry. NaN entries are ignored; a row with no
/// comparable entry yields `usize::MAX`, which never matches a label.
pub fn argmax(row: &[f32]) -> usize {
    let mut best = usize::MAX;
    for (i, &v) in row.iter().enumerate() {
        if v.is_nan() {
            continue;
        }
        if best == usize::MAX || v > row[best] {
            best = i;
        }
    }
    best
}

// --------------------------------------------------------------- backward

/// Mean softmax cross-entropy over the batch and its gradients.
pub fn backward(model: &Model, batch: &Matrix, labels: &[usize]) -> Result<(f32, Gradients)> {
    backward_scaled(model, batch, labels, 1.0)
}

/// As [`backward`] with the loss multiplied by `scale`.
pub fn backward_scaled(
    model: &Model,
    batch: &Matrix,
    labels: &[usize],
    scale: f32,
) -> Result<(f32, Gradients)> {
    check_batch(model, batch)?;
    ensure!(
        labels.len() == batch.rows(),
        "{} labels for {} samples",
        labels.len(),
        batch.rows()
    );
    ensure!(!labels.is_empty(), "empty batch");
    let k = model.output_len();
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(WingsError::contract(format!(
            "label {bad} out of range for {k} outputs"
        )));
    }

    let nl = model.layers.len();
    let mut inputs: Vec<Matrix> = Vec::with_capacity(nl);
    let mut outs: Vec<LayerOut> = Vec::with_capacity(nl);
    for (i, l) in model.layers.iter().enumerate() {
        let x = if i == 0 {
            batch.clone()
        } else {
            outs[i - 1].out.clone()
        };
        let o = layer_forward(l, &x, true);
        inputs.push(x);
        outs.push(o);
    }

    // Cross-entropy on the final layer's logits.
    let last = &outs[nl - 1];
    let logits = match model.layers[nl - 1].activation {
        Activation::Softmax => last.pre.as_ref().expect("kept pre-activation"),
        _ => &last.out,
    };
    let n = batch.rows();
    let mut g = Matrix::zeros(n, k);
    let mut loss = 0.0f64;
    for (r, &y) in labels.iter().enumerate() {
        let z = logits.row(r);
        let max = z.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
        let sum: f64 = z.iter().map(|&v| ((v - max) as f64).exp()).sum();
        let lse = max as f64 + sum.ln();
        loss += lse - z[y] as f64;
        let grow = g.row_mut(r);
        for (j, gv) in grow.iter_mut().enumerate() {
            let p = ((z[j] - max) as f64).exp() / sum;
            let t = if j == y { 1.0 } else { 0.0 };
            *gv = ((p - t) * scale as f64 / n as f64) as f32;
        }
    }
    let loss = (loss / n as f64 * scale as f64) as f32;

    let mut grads = Gradients::zeros_like(model);
    for i in (0..nl).rev() {
        let layer = &model.layers[i];
        // g is the gradient w.r.t. this layer's output; turn it into the
        // gradient w.r.t. the pre-activation.
        match layer.activation {
            Activation::Softmax if i == nl - 1 => {}
            Activation::ReLU => {
                let pre = outs[i].pre.as_ref().expect("kept pre-activation");
                for (gv, &z) in g.data_mut().iter_mut().zip(pre.data()) {
                    if z <= 0.0 {
                        *gv = 0.0;
                    }
                }
            }
            _ => {}
        }
        let x = &inputs[i];
        let need_dx = i > 0;
        g = match layer.kind {
            LayerKind::Dense { .. } => {
                grads.weights[i] = gemm_tn(x, &g);
                let db = &mut grads.biases[i];
                for r in 0..n {
                    for (b, v) in db.iter_mut().zip(g.row(r)) {
                        *b += v;
                    }
                }
                if need_dx {
                    gemm_nt(&g, &layer.weights)
                } else {
                    Matrix::zeros(0, 0)
                }
            }
            LayerKind::Conv2D(m) => {
                let p = m.positions();
                let mut dx = Matrix::zeros(if need_dx { n } else { 0 }, m.c_in * m.in_h * m.in_w);
                let mut dw = Matrix::zeros(m.c_out, m.patch_len());
                for s in 0..n {
                    let gs = Matrix::from_raw(m.c_out, p, g.row(s).to_vec());
                    let patches = im2col(x.row(s), &m);
                    let contrib = gemm(&gs, &patches);
                    for (a, b) in dw.data_mut().iter_mut().zip(contrib.data()) {
                        *a += b;
                    }
                    for co in 0..m.c_out {
                        grads.biases[i][co] += gs.row(co).iter().sum::<f32>();
                    }
                    if need_dx {
                        let dpatch = gemm_tn(&gs, &layer.weights);
                        col2im_add(&dpatch, &m, dx.row_mut(s));
                    }
                }
                grads.weights[i] = dw;
                dx
            }
            LayerKind::MaxPool2x2 { c, h, w } => {
                let olen = c * (h / 2) * (w / 2);
                let mut dx = Matrix::zeros(n, c * h * w);
                for s in 0..n {
                    let src = g.row(s).to_vec();
                    let dst = dx.row_mut(s);
                    for (o, v) in src.iter().enumerate() {
                        dst[outs[i].argmax[s * olen + o] as usize] += v;
                    }
                }
                dx
            }
            LayerKind::Flatten { .. } => g,
        };
    }
    Ok((loss, grads))
}

// --------------------------------------------------------------- training

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f32,
    pub batch_size: usize,
    pub seed: u64,
    /// L2 penalty coefficient applied to weights (not biases).
    pub weight_decay: f32,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            lr: 0.1,
            batch_size: 64,
            seed: 0,
            weight_decay: 0.0,
        }
    }
}

/// Minibatch SGD on a copy of `model`. Returns the trained model and the mean
/// training loss of each epoch.
pub fn train_sgd(model: &Model, data: &Dataset, cfg: &TrainConfig) -> Result<(Model, Vec<f32>)> {
    ensure!(cfg.epochs >= 1, "epochs must be at least 1");
    ensure!(
        cfg.lr >= 0.0 && cfg.lr.is_finite(),
        "learning rate must be finite and >= 0"
    );
    ensure!(cfg.batch_size >= 1, "batch size must be at least 1");
    ensure!(
        cfg.weight_decay >= 0.0 && cfg.weight_decay.is_finite(),
        "weight decay must be finite and >= 0"
    );
    ensure!(!data.is_empty(), "empty training set");
    let mut m = model.clone();
    let root = Rng::new(cfg.seed);
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let perm = root
            .derive("epoch", &[epoch as u64])
            .permutation(data.len());
        let mut total = 0.0f64;
        for chunk in perm.chunks(cfg.batch_size) {
            let (x, y) = data.batch(chunk);
            let (loss, grads) = backward(&m, &x, &y)?;
            if !loss.is_finite() {
                return Err(WingsError::Diverged {
                    epoch: epoch + 1,
                    loss,
                });
            }
            total += loss as f64 * chunk.len() as f64;
            if cfg.lr == 0.0 {
                continue;
            }
            for (l, layer) in m.layers.iter_mut().enumerate() {
                let gw = &grads.weights[l];
                let decay = cfg.weight_decay;
                for (w, g) in layer.weights.data_mut().iter_mut().zip(gw.data()) {
                    *w -= cfg.lr * (g + decay * *w);
                }
                for (b, g) in layer.bias.iter_mut().zip(&grads.biases[l]) {
                    *b -= cfg.lr * g;
                }
            }
        }
        let mean = (total / data.len() as f64) as f32;
        if !mean.is_finite() || !m.is_finite() {
            return Err(WingsError::Diverged {
                epoch: epoch + 1,
                loss: mean,
            });
        }
        log.push(mean);
    }
    Ok((m, log))
}

/// Predicted class per sample.
pub fn predict_classes(model: &Model, samples: &Matrix) -> Result<Vec<usize>> {
    const CHUNK: usize = 512;
    check_batch(model, samples)?;
    let mut out = Vec::with_capacity(samples.rows());
    let mut start = 0;
    while start < samples.rows() {
        let end = (start + CHUNK).min(samples.rows());
        let idx: Vec<usize> = (start..end).collect();
        let y = predict(model, &samples.select_rows(&idx))?;
        out.extend((0..y.rows()).map(|r| argmax(y.row(r))));
        start = end;
    }
    Ok(out)
}

/// Fraction of samples whose argmax output equals the label.
pub fn evaluate_accuracy(model: &Model, data: &Dataset) -> Result<f64> {
    ensure!(!data.is_empty(), "cannot evaluate on an empty dataset");
    let pred = predict_classes(model, data.samples())?;
    let correct = pred
        .iter()
        .zip(data.labels())
        .filter(|(p, l)| p == l)
        .count();
    Ok(correct as f64 / data.len() as f64)
}

// ---------------------------------------------------------- serialization

pub(crate) fn write_layer_meta(w: &mut Writer, kind: &LayerKind, act: Activation) {
    w.u8(kind.code());
    w.u8(act.code());
    match *kind {
        LayerKind::Dense { n_in, n_out } => {
            w.dim(n_in);
            w.dim(n_out);
        }
        LayerKind::Conv2D(m) => {
            for v in [m.c_in, m.c_out, m.kh, m.kw, m.stride, m.pad, m.in_h, m.in_w] {
                w.dim(v);
            }
        }
        LayerKind::MaxPool2x2 { c, h, w: wd } | LayerKind::Flatten { c, h, w: wd } => {
            w.dim(c);
            w.dim(h);
            w.dim(wd);
        }
    }
}

pub(crate) fn read_layer_meta(r: &mut Reader) -> Result<(LayerKind, Activation)> {
    let at = r.offset();
    let code = r.u8("layer kind")?;
    let act_at = r.offset();
    let act = r.u8("activation")?;
    let act = Activation::from_code(act)
        .ok_or_else(|| WingsError::format(act_at, format!("unknown activation code {act}")))?;
    let kind = match code {
        0 => LayerKind::Dense {
            n_in: r.dim("dense n_in")?,
            n_out: r.dim("dense n_out")?,
        },
        1 => {
            let mut v = [0usize; 8];
            for x in v.iter_mut() {
                *x = r.dim("conv dims")?;
            }
            LayerKind::Conv2D(ConvMeta {
                c_in: v[0],
                c_out: v[1],
                kh: v[2],
                kw: v[3],
                stride: v[4],
                pad: v[5],
                in_h: v[6],
                in_w: v[7],
            })
        }
        2 | 3 => {
            let (c, h, w) = (r.dim("c")?, r.dim("h")?, r.dim("w")?);
            if code == 2 {
                LayerKind::MaxPool2x2 { c, h, w }
            } else {
                LayerKind::Flatten { c, h, w }
            }
        }
        other => {
            return Err(WingsError::format(
                at,
                format!("unknown layer kind {other}"),
            ))
        }
    };
    kind.validate().map_err(|e| WingsError::format(at, e))?;
    Ok((kind, act))
}

pub fn encode_model(model: &Model) -> Vec<u8> {
    let mut w = Writer::new();
    w.bytes(&MODEL_MAGIC);
    w.u16(MODEL_VERSION);
    w.u16(u16::try_from(model.layers.len()).expect("too many layers"));
    for l in &model.layers {
        write_layer_meta(&mut w, &l.kind, l.activation);
        w.f32s(l.weights.data());
        w.f32s(&l.bias);
    }
    w.buf
}

/// Decode a WNGS buffer. `strict` rejects non-finite weights; the lenient
/// mode exists for fault-injected files.
pub fn decode_model(bytes: &[u8], strict: bool) -> Result<Model> {
    let mut r = Reader::new(bytes);
    let magic = r.take(4, "magic")?;
    if magic != MODEL_MAGIC {
        return Err(WingsError::format(0, "bad magic, not a WNGS model"));
    }
    let version = r.u16("version")?;
    if version != MODEL_VERSION {
        return Err(WingsError::format(
            4,
            format!("unsupported version {version}"),
        ));
    }
    let n = r.u16("layer count")? as usize;
    let mut layers = Vec::with_capacity(n);
    for _ in 0..n {
        let (kind, act) = read_layer_meta(&mut r)?;
        let (rows, cols) = kind.weight_shape();
        let weights = r.f32s(rows * cols, "weights", strict)?;
        let bias = r.f32s(kind.bias_len(), "biases", strict)?;
        layers.push(Layer {
            kind,
            activation: act,
            weights: Matrix::from_raw(rows, cols, weights),
            bias,
        });
    }
    r.finish("model")?;
    Model::new(layers).map_err(|e| match e {
        WingsError::Contract(m) => WingsError::format(bytes.len(), format!("invalid model: {m}")),
        other => other,
    })
}

pub fn save_model(model: &Model, path: &Path) -> Result<()> {
    fs::write(path, encode_model(model))?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<Model> {
    decode_model(&fs::read(path)?, true)
}
