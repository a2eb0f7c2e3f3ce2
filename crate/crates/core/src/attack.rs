//! Bit-flip fault injection into serialized models and artifacts.

use std::fmt::Write as _;

use serde::Serialize;

use crate::compress::{decode_artifact, model_regions, CompressedArtifact, Region, RegionClass};
use crate::data::Dataset;
use crate::error::{ensure, Result, WingsError};
use crate::infer::materialize;
use crate::model::{decode_model, encode_model, evaluate_accuracy, Model};
use crate::rng::Rng;

/// Degradations below this many accuracy points make `A` undefined.
pub const AMPLIFICATION_FLOOR: f64 = 0.1;
pub const DEFAULT_EVAL_SIZE: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum AttackTarget {
    RawWeights,
    FirstLayer,
    PcaBasisStore,
    PcaMeanStore,
    SvrDualCoefs,
    SvrSupportVectors,
    AllCompressedStores,
}

impl AttackTarget {
    pub const ALL: [AttackTarget; 7] = [
        AttackTarget::RawWeights,
        AttackTarget::FirstLayer,
        AttackTarget::PcaBasisStore,
        AttackTarget::PcaMeanStore,
        AttackTarget::SvrDualCoefs,
        AttackTarget::SvrSupportVectors,
        AttackTarget::AllCompressedStores,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AttackTarget::RawWeights => "raw-weights",
            AttackTarget::FirstLayer => "first-layer",
            AttackTarget::PcaBasisStore => "pca-basis",
            AttackTarget::PcaMeanStore => "pca-mean",
            AttackTarget::SvrDualCoefs => "svr-dual-coefs",
            AttackTarget::SvrSupportVectors => "svr-support-vectors",
            AttackTarget::AllCompressedStores => "all-compressed",
        }
    }

    pub fn parse(s: &str) -> Option<AttackTarget> {
        AttackTarget::ALL.into_iter().find(|t| t.name() == s)
    }

    /// Whether a region of an encoded artifact belongs to this target.
    pub fn selects(self, r: &Region) -> bool {
        use RegionClass::*;
        match self {
            AttackTarget::RawWeights => r.class == RawWeights,
            AttackTarget::FirstLayer => r.layer == 0 && r.class != Bias,
            AttackTarget::PcaBasisStore => r.class == PcaComponents,
            AttackTarget::PcaMeanStore => r.class == PcaMean,
            AttackTarget::SvrDualCoefs => r.class == SvrDualCoefs,
            AttackTarget::SvrSupportVectors => r.class == SvrSupportVectors,
            AttackTarget::AllCompressedStores => matches!(
                r.class,
                PcaComponents
                    | PcaMean
                    | KnownColumns
                    | ReducedScores
                    | SvrSupportVectors
                    | SvrDualCoefs
                    | SvrBias
            ),
        }
    }
}

/// Which bits of each little-endian `f32` may be flipped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum BitPolicy {
    UniformBit,
    /// Bits 23..=30.
    ExponentBits,
    /// Bit 31.
    SignBit,
}

impl BitPolicy {
    pub fn name(self) -> &'static str {
        match self {
            BitPolicy::UniformBit => "uniform",
            BitPolicy::ExponentBits => "exponent",
            BitPolicy::SignBit => "sign",
        }
    }

    pub fn parse(s: &str) -> Option<BitPolicy> {
        [
            BitPolicy::UniformBit,
            BitPolicy::ExponentBits,
            BitPolicy::SignBit,
        ]
        .into_iter()
        .find(|p| p.name() == s)
    }

    fn bits(self) -> std::ops::RangeInclusive<u32> {
        match self {
            BitPolicy::UniformBit => 0..=31,
            BitPolicy::ExponentBits => 23..=30,
            BitPolicy::SignBit => 31..=31,
        }
    }

    fn per_word(self) -> usize {
        self.bits().count()
    }
}

/// One flipped bit: `bit` (0 = LSB) of the byte at `byte`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct Flip {
    pub byte: usize,
    pub bit: u8,
}

pub fn eligible_bits(regions: &[Region], policy: BitPolicy) -> usize {
    regions.iter().map(|r| (r.end - r.start) / 4).sum::<usize>() * policy.per_word()
}

/// Flip `n_flips` distinct eligible bits inside `regions`.
pub fn flip_bits(
    bytes: &[u8],
    regions: &[Region],
    n_flips: usize,
    policy: BitPolicy,
    rng: &mut Rng,
) -> Result<(Vec<u8>, Vec<Flip>)> {
    let total = eligible_bits(regions, policy);
    ensure!(
        n_flips <= total,
        "{n_flips} flips requested but only {total} eligible bits"
    );
    for r in regions {
        ensure!(
            r.end <= bytes.len() && r.start <= r.end,
            "region outside the buffer"
        );
    }
    let per_word = policy.per_word();
    let first_bit = *policy.bits().start();
    let log: Vec<Flip> = rng
        .sample_distinct(total, n_flips)
        .into_iter()
        .map(|i| {
            let (mut word, bit) = (i / per_word, first_bit + (i % per_word) as u32);
            let mut at = 0;
            for r in regions {
                let words = (r.end - r.start) / 4;
                if word < words {
                    at = r.start + 4 * word;
                    break;
                }
                word -= words;
            }
            Flip {
                byte: at + (bit / 8) as usize,
                bit: (bit % 8) as u8,
            }
        })
        .collect();
    let mut out = bytes.to_vec();
    apply_flips(&mut out, &log);
    Ok((out, log))
}

/// XOR every logged bit; applying a log twice restores the input.
pub fn apply_flips(bytes: &mut [u8], log: &[Flip]) {
    for f in log {
        bytes[f.byte] ^= 1 << f.bit;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackSpec {
    pub target: AttackTarget,
    pub flip_budgets: Vec<usize>,
    pub bit_policy: BitPolicy,
    pub trials: usize,
    pub seed: u64,
    pub eval_size: usize,
}

impl AttackSpec {
    pub fn new(
        target: AttackTarget,
        flip_budgets: Vec<usize>,
        bit_policy: BitPolicy,
        trials: usize,
        seed: u64,
    ) -> Self {
        AttackSpec {
            target,
            flip_budgets,
            bit_policy,
            trials,
            seed,
            eval_size: DEFAULT_EVAL_SIZE,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrialRow {
    pub budget: usize,
    pub trial: usize,
    /// Fractions in [0, 1].
    pub acc_original: f64,
    pub acc_compressed: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Stats {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

impl Stats {
    fn of(v: &[f64]) -> Stats {
        Stats {
            mean: v.iter().sum::<f64>() / v.len() as f64,
            min: v.iter().copied().fold(f64::INFINITY, f64::min),
            max: v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BudgetSummary {
    pub budget: usize,
    pub original: Stats,
    pub compressed: Stats,
    /// Mean accuracy loss in points (baseline minus attacked).
    pub delta_original: f64,
    pub delta_compressed: f64,
    pub amplification: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttackReport {
    pub target: AttackTarget,
    pub bit_policy: BitPolicy,
    pub seed: u64,
    pub trials: usize,
    pub eval_size: usize,
    pub baseline_original: f64,
    pub baseline_compressed: f64,
    pub eligible_bits_original: usize,
    pub eligible_bits_compressed: usize,
    /// Trials whose corrupted artifact could not be decoded or rebuilt;
    /// they count as zero accuracy.
    pub failed_rebuilds: usize,
    pub budgets: Vec<BudgetSummary>,
    pub rows: Vec<TrialRow>,
}

/// Mean of `baseline - acc` over trials, in points.
fn mean_drop(baseline: f64, accs: &[f64]) -> f64 {
    100.0 * accs.iter().map(|a| baseline - a).sum::<f64>() / accs.len() as f64
}

/// `dc / do` when `do` reaches the floor, in accuracy points.
pub fn amplification_factor(delta_compressed: f64, delta_original: f64) -> Option<f64> {
    (delta_original >= AMPLIFICATION_FLOOR).then(|| delta_compressed / delta_original)
}

/// Per-budget `A`, recomputed from the trial rows.
pub fn amplification(report: &AttackReport) -> Vec<(usize, Option<f64>)> {
    report
        .budgets
        .iter()
        .map(|b| {
            let rows: Vec<&TrialRow> = report
                .rows
                .iter()
                .filter(|r| r.budget == b.budget)
                .collect();
            let o: Vec<f64> = rows.iter().map(|r| r.acc_original).collect();
            let c: Vec<f64> = rows.iter().map(|r| r.acc_compressed).collect();
            let d_o = mean_drop(report.baseline_original, &o);
            let d_c = mean_drop(report.baseline_compressed, &c);
            (b.budget, amplification_factor(d_c, d_o))
        })
        .collect()
}

/// The fixed evaluation subset: `eval_size` seeded distinct samples in
/// ascending order (everything when the dataset is smaller).
pub fn eval_subset(data: &Dataset, eval_size: usize, seed: u64) -> Dataset {
    if eval_size >= data.len() {
        return data.clone();
    }
    let mut idx = Rng::new(seed)
        .derive("eval-subset", &[])
        .sample_distinct(data.len(), eval_size);
    idx.sort_unstable();
    data.subset(&idx)
}

fn compressed_accuracy(bytes: &[u8], data: &Dataset) -> Option<f64> {
    let art = decode_artifact(bytes, false).ok()?;
    let rec = materialize(&art).ok()?;
    rec.accuracy(data).ok()
}

/// Attack the original model's raw weights and the artifact's `target`
/// regions with matched flip budgets, trial by trial.
pub fn run_campaign(
    model: &Model,
    artifact: &CompressedArtifact,
    data: &Dataset,
    spec: &AttackSpec,
) -> Result<AttackReport> {
    ensure!(spec.trials >= 1, "need at least one trial");
    ensure!(
        spec.flip_budgets.windows(2).all(|w| w[0] < w[1]),
        "flip budgets must be strictly increasing"
    );
    ensure!(!data.is_empty(), "empty evaluation data");
    let rebuilt = materialize(artifact)?;
    ensure!(
        rebuilt.model.len() == model.len()
            && rebuilt
                .model
                .layers()
                .iter()
                .zip(model.layers())
                .all(|(a, b)| a.kind == b.kind),
        "artifact does not match the model architecture"
    );
    let eval = eval_subset(data, spec.eval_size, spec.seed);
    let baseline_original = evaluate_accuracy(model, &eval)?;
    let baseline_compressed = rebuilt.accuracy(&eval)?;

    let model_bytes = encode_model(model);
    let model_regs: Vec<Region> = model_regions(model)
        .into_iter()
        .filter(|r| r.class == RegionClass::RawWeights)
        .collect();
    let (art_bytes, art_regs) = artifact.encode();
    let art_regs: Vec<Region> = art_regs
        .into_iter()
        .filter(|r| spec.target.selects(r))
        .collect();
    let eligible_o = eligible_bits(&model_regs, spec.bit_policy);
    let eligible_c = eligible_bits(&art_regs, spec.bit_policy);
    if let Some(&max_b) = spec.flip_budgets.last() {
        ensure!(
            max_b <= eligible_o.min(eligible_c),
            "budget {max_b} exceeds eligible bits (original {eligible_o}, {} {eligible_c})",
            spec.target.name()
        );
    }

    let root = Rng::new(spec.seed);
    let mut rows = Vec::with_capacity(spec.flip_budgets.len() * spec.trials);
    let mut failed = 0;
    let mut budgets = Vec::with_capacity(spec.flip_budgets.len());
    for &b in &spec.flip_budgets {
        let mut acc_o = Vec::with_capacity(spec.trials);
        let mut acc_c = Vec::with_capacity(spec.trials);
        for t in 0..spec.trials {
            let key = [b as u64, t as u64];
            let mut ro = root.derive("attack-original", &key);
            let (mb, _) = flip_bits(&model_bytes, &model_regs, b, spec.bit_policy, &mut ro)?;
            let attacked = decode_model(&mb, false).map_err(|e| {
                WingsError::contract(format!("attacked model failed to decode: {e}"))
            })?;
            let ao = evaluate_accuracy(&attacked, &eval)?;

            let mut rc = root.derive("attack-compressed", &key);
            let (cb, _) = flip_bits(&art_bytes, &art_regs, b, spec.bit_policy, &mut rc)?;
            let ac = compressed_accuracy(&cb, &eval).unwrap_or_else(|| {
                failed += 1;
                0.0
            });
            acc_o.push(ao);
            acc_c.push(ac);
            rows.push(TrialRow {
                budget: b,
                trial: t,
                acc_original: ao,
                acc_compressed: ac,
            });
        }
        let original = Stats::of(&acc_o);
        let compressed = Stats::of(&acc_c);
        let d_o = mean_drop(baseline_original, &acc_o);
        let d_c = mean_drop(baseline_compressed, &acc_c);
        budgets.push(BudgetSummary {
            budget: b,
            original,
            compressed,
            delta_original: d_o,
            delta_compressed: d_c,
            amplification: amplification_factor(d_c, d_o),
        });
    }
    Ok(AttackReport {
        target: spec.target,
        bit_policy: spec.bit_policy,
        seed: spec.seed,
        trials: spec.trials,
        eval_size: eval.len(),
        baseline_original,
        baseline_compressed,
        eligible_bits_original: eligible_o,
        eligible_bits_compressed: eligible_c,
        failed_rebuilds: failed,
        budgets,
        rows,
    })
}

/// `budget,trial,target,acc_original,acc_compressed`, one line per trial.
pub fn report_csv(report: &AttackReport) -> String {
    let mut s = String::from("budget,trial,target,acc_original,acc_compressed\n");
    for r in &report.rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            r.budget,
            r.trial,
            report.target.name(),
            r.acc_original,
            r.acc_compressed
        );
    }
    s
}
