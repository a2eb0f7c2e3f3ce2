//! PCA + SVR weight generation for compact neural network storage, with
//! sensitivity analysis, bit-flip fault injection and cost estimates.

pub mod attack;
mod codec;
pub mod compress;
pub mod data;
pub mod error;
pub mod infer;
pub mod linalg;
pub mod model;
pub mod pca;
pub mod report;
pub mod rng;
pub mod sensitivity;
pub mod svr;

pub use attack::{
    amplification, apply_flips, flip_bits, report_csv, run_campaign, AttackReport, AttackSpec,
    AttackTarget, BitPolicy, Flip,
};
pub use compress::{
    compress_cnn, compress_fcn, compression_ratio, decode_artifact, load_artifact, model_regions,
    rebuild_model, reconstruct_intra, save_artifact, ArtifactKind, CnnOptions, CompressedArtifact,
    CompressionReport, FcnOptions, LayerStore, Region, RegionClass, StoredLayer,
};
pub use data::{gen_synth, gen_synth_images, load_idx, load_mnist_dir, write_idx, Dataset};
pub use error::{Result, WingsError};
pub use infer::{
    infer, infer_cnn, infer_fcn, materialize, materialize_against, ReconstructedModel,
};
pub use linalg::{frobenius_norm, matmul, sym_eig, EigResult, Matrix};
pub use model::{
    backward, decode_model, encode_model, evaluate_accuracy, forward, load_model, predict,
    predict_classes, save_model, train_sgd, Activation, ConvMeta, Gradients, Layer, LayerKind,
    Model, TrainConfig,
};
pub use pca::{fit_pca, inverse_transform, transform, PcaBasis, PcaFit, Retention};
pub use report::{
    attack_complexity_proxy, ecc_cost, estimate_memory_energy, format_bytes, ComplexityProxy,
    CostReport, EnergyModel,
};
pub use rng::Rng;
pub use sensitivity::{
    layer_sensitivity, select_layers, sensitivity_report, LayerScore, SensitivityConfig,
    SensitivityReport,
};
pub use svr::{
    svr_param_count, train_svr, EpsilonRule, GammaRule, Kernel, SvrConfig, SvrFit, SvrModel,
    SvrPolicy,
};
