//! Per-layer gradient sensitivity and threshold-based layer selection.

use serde::Serialize;

use crate::data::Dataset;
use crate::error::{ensure, Result};
use crate::linalg::frobenius_norm;
use crate::model::{backward_scaled, LayerKind, Model};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensitivityConfig {
    pub n_batches: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Multiplies the loss; scores scale linearly with it.
    pub loss_scale: f32,
}

impl Default for SensitivityConfig {
    fn default() -> Self {
        SensitivityConfig {
            n_batches: 8,
            batch_size: 64,
            seed: 0,
            loss_scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerScore {
    pub layer: usize,
    pub kind: &'static str,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SensitivityReport {
    /// One entry per weighted layer, in model order.
    pub scores: Vec<LayerScore>,
    pub batches_used: usize,
    pub tau: f64,
    /// Model layer indices with score strictly below `tau`.
    pub selected: Vec<usize>,
}

/// Sample indices of each batch. A batch size of at least the dataset size
/// means every batch is the whole dataset in natural order; otherwise
/// batches are consecutive windows of one seeded permutation, wrapping.
pub fn sensitivity_batches(
    n: usize,
    n_batches: usize,
    batch_size: usize,
    seed: u64,
) -> Vec<Vec<usize>> {
    if batch_size >= n {
        return vec![(0..n).collect(); n_batches];
    }
    let perm = Rng::new(seed).derive("sensitivity", &[]).permutation(n);
    (0..n_batches)
        .map(|b| {
            (0..batch_size)
                .map(|i| perm[(b * batch_size + i) % n])
                .collect()
        })
        .collect()
}

/// `S_l`: mean over batches of the Frobenius norm of the batch-mean weight
/// gradient, for every weighted layer.
pub fn layer_sensitivity(
    model: &Model,
    data: &Dataset,
    cfg: &SensitivityConfig,
) -> Result<Vec<LayerScore>> {
    ensure!(cfg.n_batches >= 1, "need at least one batch");
    ensure!(cfg.batch_size >= 1, "batch size must be at least 1");
    ensure!(!data.is_empty(), "empty dataset");
    ensure!(
        cfg.loss_scale > 0.0 && cfg.loss_scale.is_finite(),
        "loss scale must be finite and > 0"
    );
    let weighted = model.weighted_layers();
    let mut sums = vec![0.0f64; weighted.len()];
    let batches = sensitivity_batches(data.len(), cfg.n_batches, cfg.batch_size, cfg.seed);
    for idx in &batches {
        let (x, y) = data.batch(idx);
        let (_, g) = backward_scaled(model, &x, &y, cfg.loss_scale)?;
        for (s, &l) in sums.iter_mut().zip(&weighted) {
            *s += frobenius_norm(&g.weights[l]);
        }
    }
    Ok(weighted
        .iter()
        .zip(sums)
        .map(|(&l, s)| LayerScore {
            layer: l,
            kind: model.layer(l).kind.name(),
            score: s / batches.len() as f64,
        })
        .collect())
}

/// Positions `i` with `scores[i] < tau`.
pub fn select_layers(scores: &[f64], tau: f64) -> Vec<usize> {
    (0..scores.len()).filter(|&i| scores[i] < tau).collect()
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Scores, threshold and selection. Only conv layers are candidates when
/// `conv_only` is set; the default threshold is the median candidate score.
pub fn sensitivity_report(
    model: &Model,
    data: &Dataset,
    cfg: &SensitivityConfig,
    tau: Option<f64>,
    conv_only: bool,
) -> Result<SensitivityReport> {
    let scores = layer_sensitivity(model, data, cfg)?;
    let candidates: Vec<&LayerScore> = scores
        .iter()
        .filter(|s| !conv_only || matches!(model.layer(s.layer).kind, LayerKind::Conv2D(_)))
        .collect();
    let cand_scores: Vec<f64> = candidates.iter().map(|s| s.score).collect();
    let tau = tau.unwrap_or_else(|| median(&cand_scores));
    ensure!(
        tau.is_finite(),
        "threshold must be finite (no candidate layers?)"
    );
    let selected = select_layers(&cand_scores, tau)
        .into_iter()
        .map(|i| candidates[i].layer)
        .collect();
    Ok(SensitivityReport {
        batches_used: cfg.n_batches,
        scores,
        tau,
        selected,
    })
}
