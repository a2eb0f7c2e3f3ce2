//! Inference straight from a compressed artifact.

use crate::compress::{rebuild_model, relative_residual, ArtifactKind, CompressedArtifact};
use crate::data::Dataset;
use crate::error::{ensure, Result};
use crate::linalg::Matrix;
use crate::model::{evaluate_accuracy, predict, Model};

/// A model rebuilt from an artifact, plus per-layer reconstruction residuals
/// (`‖W - Ŵ‖_F / ‖W‖_F`) when the source model was supplied.
#[derive(Debug, Clone, PartialEq)]
pub struct ReconstructedModel {
    pub model: Model,
    /// One entry per layer; `None` for parameter-free layers or when no
    /// original was given.
    pub residuals: Vec<Option<f64>>,
}

impl ReconstructedModel {
    pub fn predict(&self, batch: &Matrix) -> Result<Matrix> {
        predict(&self.model, batch)
    }

    pub fn accuracy(&self, data: &Dataset) -> Result<f64> {
        evaluate_accuracy(&self.model, data)
    }
}

/// Regenerate every layer once. Corrupted (non-finite) values are carried
/// through rather than rejected.
pub fn materialize(artifact: &CompressedArtifact) -> Result<ReconstructedModel> {
    let model = rebuild_model(artifact)?;
    let residuals = vec![None; model.len()];
    Ok(ReconstructedModel { model, residuals })
}

/// [`materialize`] with residuals measured against `original`.
pub fn materialize_against(
    artifact: &CompressedArtifact,
    original: &Model,
) -> Result<ReconstructedModel> {
    let mut rec = materialize(artifact)?;
    ensure!(
        original.len() == rec.model.len()
            && original
                .layers()
                .iter()
                .zip(rec.model.layers())
                .all(|(a, b)| a.kind == b.kind),
        "artifact does not match the original architecture"
    );
    for (i, (a, b)) in original.layers().iter().zip(rec.model.layers()).enumerate() {
        if a.kind.has_weights() {
            rec.residuals[i] = Some(relative_residual(&a.weights, &b.weights));
        }
    }
    Ok(rec)
}

/// Class probabilities for an FCN artifact, regenerating the weights for
/// this call.
pub fn infer_fcn(artifact: &CompressedArtifact, batch: &Matrix) -> Result<Matrix> {
    ensure!(
        artifact.kind == ArtifactKind::Fcn,
        "infer_fcn needs an FCN artifact"
    );
    predict(&rebuild_model(artifact)?, batch)
}

/// Class probabilities for a CNN artifact, regenerating the weights for
/// this call.
pub fn infer_cnn(artifact: &CompressedArtifact, batch: &Matrix) -> Result<Matrix> {
    ensure!(
        artifact.kind == ArtifactKind::Cnn,
        "infer_cnn needs a CNN artifact"
    );
    predict(&rebuild_model(artifact)?, batch)
}

pub fn infer(artifact: &CompressedArtifact, batch: &Matrix) -> Result<Matrix> {
    match artifact.kind {
        ArtifactKind::Fcn => infer_fcn(artifact, batch),
        ArtifactKind::Cnn => infer_cnn(artifact, batch),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compress::{compress_cnn, compress_fcn, CnnOptions, FcnOptions};
    use crate::rng::Rng;
    use crate::sensitivity::LayerScore;

    fn batch(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut r = Rng::new(seed);
        Matrix::from_fn(rows, cols, |_, _| r.uniform(0.0, 1.0))
    }

    #[test]
    fn materialized_equals_streaming() {
        let m = Model::mlp(&[10, 8, 6, 3], 2).unwrap();
        let (art, rep) = compress_fcn(&m, &FcnOptions::default()).unwrap();
        let rec = materialize_against(&art, &m).unwrap();
        for s in 0..10 {
            let x = batch(7, 10, s);
            let a = rec.predict(&x).unwrap();
            let b = infer_fcn(&art, &x).unwrap();
            assert_eq!(a.to_le_bytes(), b.to_le_bytes());
            for row in 0..a.rows() {
                let sum: f32 = a.row(row).iter().sum();
                assert!((sum - 1.0).abs() < 1e-5);
            }
        }
        assert_eq!(
            materialize(&art).unwrap().model.to_bytes(),
            rec.model.to_bytes()
        );
        for l in &rep.layers {
            assert!((rec.residuals[l.layer].unwrap() - l.residual).abs() <= 1e-6);
        }
        assert!(infer_cnn(&art, &batch(1, 10, 0)).is_err());
        assert!(infer_fcn(&art, &batch(1, 9, 0)).is_err());
    }

    #[test]
    fn raw_cnn_artifact_is_pass_through() {
        let m = Model::from_arch("conv3-pool-dense4", (1, 6, 6), 3).unwrap();
        let scores = vec![
            LayerScore {
                layer: 0,
                kind: "conv2d",
                score: 1.0,
            },
            LayerScore {
                layer: 3,
                kind: "dense",
                score: 1.0,
            },
        ];
        let opts = CnnOptions {
            tau: 0.5,
            min_dense_weights: usize::MAX,
            ..Default::default()
        };
        let (art, _) = compress_cnn(&m, &scores, &opts).unwrap();
        let x = batch(5, 36, 1);
        assert_eq!(
            infer_cnn(&art, &x).unwrap().to_le_bytes(),
            predict(&m, &x).unwrap().to_le_bytes()
        );
        assert!(infer(&art, &x).is_ok());
    }
}
