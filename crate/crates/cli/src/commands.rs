use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use wings_core::report::DEFAULT_ECC_OVERHEAD;
use wings_core::*;

use crate::args::*;
use crate::CliError;

type Res<T> = std::result::Result<T, CliError>;

#[derive(Serialize)]
struct OutputFile {
    path: PathBuf,
    sha256: String,
}

#[derive(Serialize)]
struct Summary {
    command: &'static str,
    seed: u64,
    config: Value,
    outputs: Vec<OutputFile>,
    result: Value,
}

/// Files written by a command, hashed after writing.
#[derive(Default)]
struct Outputs(Vec<OutputFile>);

impl Outputs {
    fn write(&mut self, path: &Path, bytes: &[u8]) -> Res<()> {
        std::fs::write(path, bytes)?;
        self.record(path)
    }

    fn record(&mut self, path: &Path) -> Res<()> {
        let bytes = std::fs::read(path)?;
        self.0.push(OutputFile {
            path: path.to_path_buf(),
            sha256: hex::encode(Sha256::digest(&bytes)),
        });
        Ok(())
    }
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("serializable")
}

fn pretty<T: Serialize>(v: &T) -> Vec<u8> {
    let mut s = serde_json::to_vec_pretty(v).expect("serializable");
    s.push(b'\n');
    s
}

/// Run the selected subcommand and return its JSON summary.
pub fn run(cli: &Cli) -> Res<String> {
    let started = Instant::now();
    let mut outputs = Outputs::default();
    let (command, config, result) = match &cli.command {
        Command::Train(a) => ("train", to_value(a), train(a, cli.seed, &mut outputs)?),
        Command::Sensitivity(a) => (
            "sensitivity",
            to_value(a),
            sensitivity(a, cli.seed, &mut outputs)?,
        ),
        Command::Compress(a) => (
            "compress",
            to_value(a),
            compress(a, cli.seed, &mut outputs)?,
        ),
        Command::Infer(a) => ("infer", to_value(a), infer_cmd(a, &mut outputs)?),
        Command::Attack(a) => ("attack", to_value(a), attack(a, cli.seed, &mut outputs)?),
        Command::Estimate(a) => ("estimate", to_value(a), estimate(a, &mut outputs)?),
        Command::Report(a) => ("report", to_value(a), report(a, &mut outputs)?),
    };
    eprintln!(
        "{command} finished in {:.1} s",
        started.elapsed().as_secs_f64()
    );
    let summary = Summary {
        command,
        seed: cli.seed,
        config,
        outputs: outputs.0,
        result,
    };
    let text = serde_json::to_string_pretty(&summary).expect("serializable");
    if let Some(path) = &cli.summary {
        std::fs::write(path, format!("{text}\n"))?;
    }
    Ok(text)
}

// ------------------------------------------------------------------ data

fn input_shape(d: &DataArgs) -> (usize, usize, usize) {
    match d.data {
        DataSource::Synth => (1, 1, d.dim),
        DataSource::SynthImages => (1, d.side, d.side),
        DataSource::Mnist => (1, 28, 28),
    }
}

/// Training and held-out parts of the selected dataset.
fn load_data(d: &DataArgs) -> Res<(Dataset, Dataset)> {
    let n = d.n_train + d.n_test;
    match d.data {
        DataSource::Synth => {
            let all = gen_synth(n, d.dim, d.classes, d.separation, d.data_seed);
            Ok((all.range(0, d.n_train), all.range(d.n_train, n)))
        }
        DataSource::SynthImages => {
            let all = gen_synth_images(n, d.side, d.side, d.classes, d.noise, d.data_seed);
            Ok((all.range(0, d.n_train), all.range(d.n_train, n)))
        }
        DataSource::Mnist => {
            let dir = d.data_dir.as_ref().ok_or_else(|| {
                CliError::Usage("--data mnist needs --data-dir or WINGS_DATA_DIR".into())
            })?;
            let train = load_mnist_dir(dir, true)?;
            let test = load_mnist_dir(dir, false)?;
            Ok((
                train.range(0, d.n_train.min(train.len())),
                test.range(0, d.n_test.min(test.len())),
            ))
        }
    }
}

fn check_input(model: &Model, data: &Dataset) -> Res<()> {
    if model.input_len() != data.dim() {
        return Err(WingsError::Contract(format!(
            "model expects {} inputs but the data has {} features",
            model.input_len(),
            data.dim()
        ))
        .into());
    }
    Ok(())
}

// -------------------------------------------------------------- commands

fn train(a: &TrainArgs, seed: u64, out: &mut Outputs) -> Res<Value> {
    let (train, test) = load_data(&a.data)?;
    let init = Model::from_arch(&a.arch, input_shape(&a.data), seed)?;
    check_input(&init, &train)?;
    let cfg = TrainConfig {
        epochs: a.epochs,
        lr: a.lr,
        batch_size: a.batch_size,
        seed,
        weight_decay: a.weight_decay,
    };
    let (model, losses) = train_sgd(&init, &train, &cfg)?;
    let accuracy = if test.is_empty() {
        None
    } else {
        Some(evaluate_accuracy(&model, &test)?)
    };
    save_model(&model, &a.out)?;
    out.record(&a.out)?;
    if let Some(acc) = accuracy {
        eprintln!("test accuracy {:.2}%", 100.0 * acc);
    }
    Ok(json!({
        "params": model.param_count(),
        "weight_bytes": model.weight_bytes(),
        "epoch_losses": losses,
        "test_accuracy": accuracy,
    }))
}

fn sensitivity(a: &SensitivityArgs, seed: u64, out: &mut Outputs) -> Res<Value> {
    let model = load_model(&a.model)?;
    let (train, _) = load_data(&a.data)?;
    check_input(&model, &train)?;
    let cfg = SensitivityConfig {
        n_batches: a.batches,
        batch_size: a.sens_batch_size,
        seed,
        loss_scale: a.loss_scale,
    };
    let report = sensitivity_report(&model, &train, &cfg, a.tau, a.conv_only)?;
    for s in &report.scores {
        eprintln!("layer {:>2} {:<7} S = {:.6}", s.layer, s.kind, s.score);
    }
    if let Some(path) = &a.out {
        out.write(path, &pretty(&report))?;
    }
    Ok(to_value(&report))
}

fn svr_policy(a: &CompressArgs) -> SvrPolicy {
    SvrPolicy {
        c: a.svr_c,
        epsilon: EpsilonRule::RelativeStd(a.svr_epsilon),
        gamma: match a.gamma {
            Gamma::InverseDim => GammaRule::InverseDim,
            Gamma::Scaled => GammaRule::Scaled,
        },
        ..Default::default()
    }
}

fn compress(a: &CompressArgs, seed: u64, out: &mut Outputs) -> Res<Value> {
    let model = load_model(&a.model)?;
    let (artifact, report, sensitivity) = match a.mode {
        Mode::Fcn => {
            let opts = FcnOptions {
                eta: a.eta.unwrap_or(0.9),
                policy: svr_policy(a),
                first_layer_raw: a.first_layer_raw,
                keep_last_raw: a.keep_last_raw,
                raw_fallback: !a.no_raw_fallback,
                seed,
            };
            let (art, rep) = compress_fcn(&model, &opts)?;
            (art, rep, None)
        }
        Mode::Cnn => {
            let (train, _) = load_data(&a.data)?;
            check_input(&model, &train)?;
            let cfg = SensitivityConfig {
                n_batches: a.batches,
                batch_size: a.sens_batch_size,
                seed,
                loss_scale: 1.0,
            };
            let sens = sensitivity_report(&model, &train, &cfg, a.tau, true)?;
            let opts = CnnOptions {
                tau: sens.tau,
                eta: a.eta.unwrap_or(0.95),
                split_fraction: a.split,
                policy: svr_policy(a),
                min_dense_weights: a.min_dense_weights,
                seed,
            };
            let (art, rep) = compress_cnn(&model, &sens.scores, &opts)?;
            (art, rep, Some(sens))
        }
    };
    save_artifact(&artifact, &a.out)?;
    out.record(&a.out)?;
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    eprintln!(
        "{} -> {} bytes, ratio {:.3}",
        report.original_bytes, report.compressed_bytes, report.ratio
    );
    Ok(json!({
        "ratio": report.ratio,
        "report": report,
        "sensitivity": sensitivity,
    }))
}

fn infer_cmd(a: &InferArgs, out: &mut Outputs) -> Res<Value> {
    let artifact = load_artifact(&a.artifact)?;
    let (_, test) = load_data(&a.data)?;
    if a.batch_size == 0 {
        return Err(CliError::Usage("--batch-size must be at least 1".into()));
    }
    let reconstructed = match &a.model {
        Some(p) => Some(materialize_against(&artifact, &load_model(p)?)?),
        None => None,
    };
    let cached = if a.no_cache {
        None
    } else {
        match &reconstructed {
            Some(r) => Some(r.model.clone()),
            None => Some(materialize(&artifact)?.model),
        }
    };
    let mut predicted = Vec::with_capacity(test.len());
    let mut start = 0;
    while start < test.len() {
        let end = (start + a.batch_size).min(test.len());
        let idx: Vec<usize> = (start..end).collect();
        let (x, _) = test.batch(&idx);
        let probs = match &cached {
            Some(m) => predict(m, &x)?,
            None => wings_core::infer(&artifact, &x)?,
        };
        predicted.extend((0..probs.rows()).map(|r| wings_core::model::argmax(probs.row(r))));
        start = end;
    }
    let correct = predicted
        .iter()
        .zip(test.labels())
        .filter(|(p, l)| p == l)
        .count();
    let accuracy = correct as f64 / test.len().max(1) as f64;
    eprintln!(
        "accuracy {:.2}% on {} samples",
        100.0 * accuracy,
        test.len()
    );
    if let Some(path) = &a.out {
        let mut csv = String::from("index,label,predicted\n");
        for (i, (p, l)) in predicted.iter().zip(test.labels()).enumerate() {
            csv.push_str(&format!("{i},{l},{p}\n"));
        }
        out.write(path, csv.as_bytes())?;
    }
    let prediction_bytes: Vec<u8> = predicted
        .iter()
        .flat_map(|&p| (p as u32).to_le_bytes())
        .collect();
    Ok(json!({
        "accuracy": accuracy,
        "samples": test.len(),
        "weights": if a.no_cache { "regenerated per batch" } else { "materialized once" },
        "predictions_sha256": hex::encode(Sha256::digest(&prediction_bytes)),
        "residuals": reconstructed.map(|r| r.residuals),
    }))
}

fn attack(a: &AttackArgs, seed: u64, out: &mut Outputs) -> Res<Value> {
    let model = load_model(&a.model)?;
    let artifact = load_artifact(&a.artifact)?;
    let (_, test) = load_data(&a.data)?;
    check_input(&model, &test)?;
    let mut spec = AttackSpec::new(a.target, a.budgets.clone(), a.policy, a.trials, seed);
    spec.eval_size = a.eval_size;
    let report = run_campaign(&model, &artifact, &test, &spec)?;
    out.write(&a.out, report_csv(&report).as_bytes())?;
    eprintln!("budget  dAcc_orig  dAcc_comp  A");
    for b in &report.budgets {
        eprintln!(
            "{:>6}  {:>9.2}  {:>9.2}  {}",
            b.budget,
            b.delta_original,
            b.delta_compressed,
            b.amplification
                .map_or("undefined".to_string(), |v| format!("{v:.3}"))
        );
    }
    Ok(json!({
        "target": report.target,
        "bit_policy": report.bit_policy,
        "trials": report.trials,
        "eval_size": report.eval_size,
        "baseline_original": report.baseline_original,
        "baseline_compressed": report.baseline_compressed,
        "eligible_bits_original": report.eligible_bits_original,
        "eligible_bits_compressed": report.eligible_bits_compressed,
        "failed_rebuilds": report.failed_rebuilds,
        "budgets": report.budgets,
        "amplification_note": "A = mean compressed drop / mean original drop in accuracy points; undefined when the original drop is below 0.1 points",
    }))
}

fn estimate(a: &EstimateArgs, out: &mut Outputs) -> Res<Value> {
    let energy = EnergyModel::new(a.ddr3_pj, a.sram_pj)?;
    let base = estimate_memory_energy(a.params, a.bits, &energy)?;
    let compressed = match a.compression_fraction {
        Some(f) => Some(base.compressed(f)?),
        None => None,
    };
    eprintln!(
        "{} params x {} bit: {}, DDR3 {:.4} J, SRAM {:.4} J",
        a.params, a.bits, base.memory, base.energy_ddr3_j, base.energy_sram_j
    );
    let result = json!({
        "energy_model": energy,
        "estimate": base,
        "compressed": compressed,
    });
    if let Some(path) = &a.out {
        out.write(path, &pretty(&result))?;
    }
    Ok(result)
}

#[derive(Serialize)]
struct LayerEntry {
    layer: usize,
    kind: &'static str,
    mode: &'static str,
    k: Option<usize>,
    n_svrs: usize,
    svr_params: usize,
    stored_bytes: usize,
    residual: Option<f64>,
}

fn report(a: &ReportArgs, out: &mut Outputs) -> Res<Value> {
    let artifact = load_artifact(&a.artifact)?;
    let residuals = match &a.model {
        Some(p) => Some(materialize_against(&artifact, &load_model(p)?)?.residuals),
        None => None,
    };
    let layers: Vec<LayerEntry> = artifact
        .layers
        .iter()
        .enumerate()
        .map(|(i, l)| LayerEntry {
            layer: i,
            kind: l.kind.name(),
            mode: l.store.mode_name(),
            k: l.store.basis().map(|b| b.k()),
            n_svrs: l.store.svrs().len(),
            svr_params: l.store.svrs().iter().map(svr_param_count).sum(),
            stored_bytes: l.encoded_len(),
            residual: residuals.as_ref().and_then(|r| r[i]),
        })
        .collect();
    let original_params = artifact.original_bytes / 4;
    let compressed_bytes = artifact.compressed_bytes();
    // Share of the original bytes saved; zero when the artifact is larger.
    let fraction = (1.0 - compressed_bytes as f64 / artifact.original_bytes as f64).max(0.0);
    let energy = EnergyModel::default();
    let costs = if original_params > 0 {
        let base = estimate_memory_energy(original_params, 32, &energy)?;
        let compressed = base.compressed(fraction)?;
        Some(json!({ "original": base, "compressed": compressed }))
    } else {
        None
    };
    let ecc = if original_params > 0 {
        let (o, c) = ecc_cost(original_params, a.ecc_rate, fraction)?;
        Some(json!({ "rate": a.ecc_rate, "original": o, "compressed": c }))
    } else {
        None
    };
    let proxy = attack_complexity_proxy(&artifact).map(|p| {
        json!({
            "log_value": p.log_value,
            "layers": p.layers,
            "note": "proxy only: sum over compressed layers of ln(PCA parameters) + ln(SVR parameters); not a measured attack cost",
        })
    });
    eprintln!(
        "{} layers, {} -> {} bytes, ratio {:.3}",
        layers.len(),
        artifact.original_bytes,
        compressed_bytes,
        artifact.ratio()
    );
    let result = json!({
        "kind": artifact.kind,
        "original_bytes": artifact.original_bytes,
        "compressed_bytes": compressed_bytes,
        "ratio": artifact.ratio(),
        "compression_fraction": fraction,
        "layers": layers,
        "costs": costs,
        "ecc": ecc,
        "default_ecc_rate": DEFAULT_ECC_OVERHEAD,
        "attack_complexity_proxy": proxy,
    });
    if let Some(path) = &a.out {
        out.write(path, &pretty(&result))?;
    }
    Ok(result)
}
