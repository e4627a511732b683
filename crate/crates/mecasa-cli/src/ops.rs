//! Subcommand implementations.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use serde_json::json;

use mecasa_core::attention::{
    casa_forward, flop_count, softmax_attention, AttentionKind, CasaParams,
};
use mecasa_core::backbone::{shape_audit, BackboneConfig};
use mecasa_core::checkpoint::{
    load_epochs, save_checkpoint, save_epochs, save_features,
};
use mecasa_core::data::{
    load_recording, save_recording, stratified_split, synth_hybrid_dataset,
    SplitIndices,
};
use mecasa_core::signal::{
    bandpass_filter, epoch_signal, mbll_to_hbt, resample, standardize,
    to_optical_density, Epoch, EpochLabel, MbllConfig, Modality, SignalRecording,
};
use mecasa_core::tensor::Tensor;
use mecasa_core::train::{
    cross_validate_backbone, evaluate_backbone, evaluate_fusion,
    extract_features, train_backbone, train_fusion, MetricsReport, TrainConfig,
};
use mecasa_core::fusion::FusionConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{CliModality, Repr, RunConfig};

fn log_debug(msg: &str) {
    if std::env::var("MECASA_LOG").map(|v| v == "debug").unwrap_or(false) {
        eprintln!("[debug] {msg}");
    }
}

/// Write `<out>/<name>.json` and `<out>/<name>.txt`, and echo the text.
fn write_report(out: &Path, name: &str, body: &serde_json::Value, text: &str) -> Result<()> {
    fs::create_dir_all(out)?;
    fs::write(
        out.join(format!("{name}.json")),
        serde_json::to_vec_pretty(body)?,
    )?;
    fs::write(out.join(format!("{name}.txt")), text)?;
    print!("{text}");
    Ok(())
}

fn train_config(cfg: &RunConfig) -> TrainConfig {
    TrainConfig {
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        lr: cfg.lr,
        seed: cfg.seed,
        shuffle: true,
    }
}

pub fn cmd_synth(cfg: &RunConfig) -> Result<()> {
    let trials = synth_hybrid_dataset(cfg.trials, cfg.seed, cfg.snr)?;
    fs::create_dir_all(&cfg.out)?;
    for t in &trials {
        save_recording(
            &cfg.out,
            &format!("t{:03}_eeg", t.trial_id),
            &t.eeg,
            0,
            t.trial_id,
            &t.labels,
        )?;
        save_recording(
            &cfg.out,
            &format!("t{:03}_fnirs", t.trial_id),
            &t.fnirs,
            0,
            t.trial_id,
            &t.labels,
        )?;
    }
    let body = json!({
        "command": "synth",
        "config": cfg,
        "trials": trials.len(),
    });
    let text = format!(
        "synth: wrote {} trials (seed {}, snr {}) to {}\n",
        trials.len(),
        cfg.seed,
        cfg.snr,
        cfg.out.display()
    );
    write_report(&cfg.out, "synth", &body, &text)
}

fn manifest_paths(root: &Path, suffix: &str) -> Result<Vec<PathBuf>> {
    let dir = root.join("manifests");
    let mut paths: Vec<PathBuf> = fs::read_dir(&dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| {
            p.extension().map(|e| e == "json").unwrap_or(false)
                && p.file_stem()
                    .and_then(|s| s.to_str())
                    .map(|s| s.ends_with(suffix))
                    .unwrap_or(false)
        })
        .collect();
    paths.sort();
    Ok(paths)
}

/// Preprocess one recording into model-ready form for the given tag.
fn preprocess_recording(rec: &SignalRecording, tag: &str) -> Result<SignalRecording> {
    let out = match tag {
        "eeg" => {
            let filtered = bandpass_filter(rec, 0.5, 45.0)?;
            resample(&filtered, 128.0)?
        }
        "od128" => resample(&to_optical_density(rec)?, 128.0)?,
        "od10" => resample(&to_optical_density(rec)?, 10.0)?,
        "hbt" => resample(
            &mbll_to_hbt(&to_optical_density(rec)?, &MbllConfig::default())?,
            128.0,
        )?,
        other => bail!("unknown representation {other:?}"),
    };
    Ok(out)
}

/// Run the preprocessing chain for the configured modality/representation
/// and return the standardized epochs plus the split used for the
/// statistics.
pub fn preprocess_epochs(cfg: &RunConfig) -> Result<(Vec<Epoch>, SplitIndices, String)> {
    let tag = cfg.epochs_tag();
    let suffix = match cfg.modality {
        CliModality::Eeg => "_eeg",
        CliModality::Fnirs => "_fnirs",
    };
    let paths = manifest_paths(&cfg.data, suffix)?;
    if paths.is_empty() {
        bail!(
            "no {} manifests found under {}",
            suffix.trim_start_matches('_'),
            cfg.data.display()
        );
    }
    let mut epochs = Vec::new();
    for p in &paths {
        let (rec, manifest) =
            load_recording(p).with_context(|| format!("loading {}", p.display()))?;
        let prepped = preprocess_recording(&rec, &tag)
            .with_context(|| format!("preprocessing {}", p.display()))?;
        epochs.extend(epoch_signal(
            &prepped,
            &manifest.labels,
            1.0,
            0.5,
            manifest.subject_id,
            manifest.session_id,
        )?);
        log_debug(&format!("{} -> {} epochs so far", p.display(), epochs.len()));
    }
    let labels: Vec<EpochLabel> = epochs.iter().map(|e| e.label).collect();
    let split = stratified_split(&labels, [0.70, 0.15, 0.15], cfg.seed)?;
    standardize(&mut epochs, &split.train);
    Ok((epochs, split, tag))
}

pub fn cmd_preprocess(cfg: &RunConfig) -> Result<()> {
    let (epochs, split, tag) = preprocess_epochs(cfg)?;
    fs::create_dir_all(&cfg.out)?;
    let modality = match cfg.modality {
        CliModality::Eeg => Modality::Eeg,
        CliModality::Fnirs => match cfg.repr_or_default() {
            Repr::Hbt => Modality::FnirsHbt,
            _ => Modality::FnirsOd,
        },
    };
    save_epochs(&cfg.out.join(format!("{tag}.epochs")), modality, &tag, &epochs)?;
    fs::write(
        cfg.out.join(format!("{tag}.split.json")),
        serde_json::to_vec_pretty(&split)?,
    )?;
    let (c, w) = (epochs[0].channels, epochs[0].window);
    let body = json!({
        "command": "preprocess",
        "config": cfg,
        "repr": tag,
        "epoch_count": epochs.len(),
        "epoch_shape": [1, c, w],
        "split_sizes": [split.train.len(), split.val.len(), split.test.len()],
    });
    let text = format!(
        "preprocess[{tag}]: {} epochs of shape (1, {c}, {w}); split {}/{}/{}\n",
        epochs.len(),
        split.train.len(),
        split.val.len(),
        split.test.len()
    );
    write_report(&cfg.out, format!("preprocess_{tag}").as_str(), &body, &text)
}

fn load_tagged_epochs(cfg: &RunConfig, tag: &str) -> Result<(Vec<Epoch>, SplitIndices)> {
    let path = cfg.data.join(format!("{tag}.epochs"));
    let (_, epochs) = load_epochs(&path)
        .with_context(|| format!("loading preprocessed epochs {}", path.display()))?;
    if epochs.is_empty() {
        bail!("no epochs in {}", path.display());
    }
    let split_path = cfg.data.join(format!("{tag}.split.json"));
    let split: SplitIndices = match fs::read(&split_path) {
        Ok(bytes) => serde_json::from_slice(&bytes)?,
        Err(_) => {
            let labels: Vec<EpochLabel> = epochs.iter().map(|e| e.label).collect();
            stratified_split(&labels, [0.70, 0.15, 0.15], cfg.seed)?
        }
    };
    Ok((epochs, split))
}

fn backbone_config(epochs: &[Epoch], dims: &[usize]) -> Result<BackboneConfig> {
    let cfg = BackboneConfig::new(epochs[0].channels, epochs[0].window, dims.to_vec());
    // Audit the layer geometry up front so impossible input/dim pairings
    // fail with shapes instead of deep in training.
    shape_audit(&cfg).map_err(|e| {
        anyhow::anyhow!(
            "model geometry invalid for input (1, {}, {}) with dims {:?}: {e}",
            epochs[0].channels,
            epochs[0].window,
            dims
        )
    })?;
    Ok(cfg)
}

fn run_training(
    cfg: &RunConfig,
    epochs: &[Epoch],
    split: &SplitIndices,
    dims: &[usize],
) -> Result<(MetricsReport, f64)> {
    let model_cfg = backbone_config(epochs, dims)?;
    let tc = train_config(cfg);
    // Final model on the ratio split supplies the checkpoint artifact and
    // the single-split metrics.
    let (model, _) = train_backbone(&model_cfg, epochs, split, &tc)?;
    let mut cm = [[0usize; 2]; 2];
    let test_accuracy = evaluate_backbone(&model, epochs, &split.test, Some(&mut cm))?;
    let report = if cfg.folds >= 2 {
        cross_validate_backbone(&model_cfg, epochs, cfg.folds, &tc)?
    } else {
        MetricsReport {
            fold_accuracies: vec![test_accuracy],
            mean_accuracy: test_accuracy,
            ci_half_width: 0.0,
            confusion: cm,
            runtime_secs: 0.0,
        }
    };
    fs::create_dir_all(&cfg.out)?;
    save_checkpoint(&cfg.out.join(format!("model_{}.ckpt", cfg.epochs_tag())), &model)?;
    Ok((report, test_accuracy))
}

pub fn cmd_train(cfg: &RunConfig) -> Result<()> {
    let tag = cfg.epochs_tag();
    let (epochs, split) = load_tagged_epochs(cfg, &tag)?;
    let (report, test_accuracy) = run_training(cfg, &epochs, &split, &cfg.dims)?;
    let body = json!({
        "command": "train",
        "config": cfg,
        "repr": tag,
        "metrics": report,
        "test_accuracy": test_accuracy,
    });
    let text = format!(
        "train[{tag}]: mean accuracy {:.4} ± {:.4} over {} fold(s); split test accuracy {:.4}\n",
        report.mean_accuracy,
        report.ci_half_width,
        report.fold_accuracies.len(),
        test_accuracy
    );
    write_report(&cfg.out, &format!("train_{tag}"), &body, &text)
}

pub fn cmd_fuse(cfg: &RunConfig) -> Result<()> {
    let fnirs_tag = cfg.repr_or_default().tag().to_string();
    let eeg_cfg = RunConfig {
        modality: CliModality::Eeg,
        repr: None,
        ..cfg.clone()
    };
    let (eeg_epochs, _) = load_tagged_epochs(&eeg_cfg, "eeg")?;
    let (fnirs_epochs, _) = load_tagged_epochs(cfg, &fnirs_tag)?;
    if eeg_epochs.len() != fnirs_epochs.len() {
        bail!(
            "modalities have {} vs {} epochs; fusion needs paired epochs",
            eeg_epochs.len(),
            fnirs_epochs.len()
        );
    }
    for (i, (a, b)) in eeg_epochs.iter().zip(&fnirs_epochs).enumerate() {
        if a.label != b.label {
            bail!("label mismatch between modalities at epoch {i}");
        }
    }
    let labels: Vec<EpochLabel> = eeg_epochs.iter().map(|e| e.label).collect();
    let split = stratified_split(&labels, [0.70, 0.15, 0.15], cfg.seed)?;
    let tc = train_config(cfg);

    let eeg_model_cfg = backbone_config(&eeg_epochs, &cfg.dims)?;
    let fnirs_model_cfg = backbone_config(&fnirs_epochs, &cfg.dims)?;
    let (eeg_model, _) = train_backbone(&eeg_model_cfg, &eeg_epochs, &split, &tc)?;
    let (fnirs_model, _) = train_backbone(&fnirs_model_cfg, &fnirs_epochs, &split, &tc)?;
    fs::create_dir_all(&cfg.out)?;
    save_checkpoint(&cfg.out.join("model_eeg.ckpt"), &eeg_model)?;
    save_checkpoint(&cfg.out.join(format!("model_{fnirs_tag}.ckpt")), &fnirs_model)?;

    let all: Vec<usize> = (0..eeg_epochs.len()).collect();
    let feats_eeg = extract_features(&eeg_model, &eeg_epochs, &all)?;
    let feats_fnirs = extract_features(&fnirs_model, &fnirs_epochs, &all)?;
    let label_idx: Vec<usize> = labels
        .iter()
        .map(|l| mecasa_core::train::label_index(*l))
        .collect();
    save_features(
        &cfg.out.join("features_eeg.feat"),
        Modality::Eeg,
        "all",
        &feats_eeg,
        &label_idx,
    )?;
    save_features(
        &cfg.out.join(format!("features_{fnirs_tag}.feat")),
        Modality::FnirsOd,
        "all",
        &feats_fnirs,
        &label_idx,
    )?;

    let fusion_cfg = FusionConfig::new(
        eeg_model_cfg.feature_dim(),
        fnirs_model_cfg.feature_dim(),
    );
    // The fusion head sees low-dimensional frozen features, so extra epochs
    // cost almost nothing; give it a healthy floor.
    let fusion_tc = TrainConfig {
        epochs: tc.epochs.max(50),
        ..tc.clone()
    };
    let (fusion, _) =
        train_fusion(&fusion_cfg, &feats_eeg, &feats_fnirs, &label_idx, &split, &fusion_tc)?;

    let eeg_acc = evaluate_backbone(&eeg_model, &eeg_epochs, &split.test, None)?;
    let fnirs_acc = evaluate_backbone(&fnirs_model, &fnirs_epochs, &split.test, None)?;
    let fused_acc = evaluate_fusion(&fusion, &feats_eeg, &feats_fnirs, &label_idx, &split.test, None)?;

    let body = json!({
        "command": "fuse",
        "config": cfg,
        "fnirs_repr": fnirs_tag,
        "eeg_test_accuracy": eeg_acc,
        "fnirs_test_accuracy": fnirs_acc,
        "fused_test_accuracy": fused_acc,
    });
    let text = format!(
        "fuse[eeg+{fnirs_tag}]: eeg {:.4}, fnirs {:.4}, fused {:.4}\n",
        eeg_acc, fnirs_acc, fused_acc
    );
    write_report(&cfg.out, "fuse", &body, &text)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum AblationGrid {
    Dims,
    Repr,
}

pub fn cmd_ablate(cfg: &RunConfig, grid: AblationGrid) -> Result<bool> {
    let cells: Vec<(String, Vec<usize>, String)> = match grid {
        AblationGrid::Dims => ["16-32", "32-64", "48-56", "64-128"]
            .iter()
            .map(|d| {
                (
                    d.to_string(),
                    crate::config::parse_dims(d).unwrap(),
                    cfg.epochs_tag(),
                )
            })
            .collect(),
        AblationGrid::Repr => [Repr::Od10, Repr::Hbt, Repr::Od128]
            .iter()
            .map(|r| {
                (
                    r.tag().to_string(),
                    cfg.dims.clone(),
                    r.tag().to_string(),
                )
            })
            .collect(),
    };
    let mut rows = Vec::new();
    let mut all_ok = true;
    let mut text = format!(
        "{:<10} {:>10} {:>10}  {}\n",
        "cell", "mean_acc", "ci", "status"
    );
    for (name, dims, tag) in &cells {
        let result = load_tagged_epochs(cfg, tag)
            .and_then(|(epochs, split)| run_training(cfg, &epochs, &split, dims));
        match result {
            Ok((report, _)) => {
                text += &format!(
                    "{:<10} {:>10.4} {:>10.4}  ok\n",
                    name, report.mean_accuracy, report.ci_half_width
                );
                rows.push(json!({
                    "cell": name,
                    "dims": dims,
                    "repr": tag,
                    "mean_accuracy": report.mean_accuracy,
                    "ci_half_width": report.ci_half_width,
                    "fold_accuracies": report.fold_accuracies,
                    "status": "ok",
                }));
            }
            Err(e) => {
                all_ok = false;
                text += &format!("{:<10} {:>10} {:>10}  FAILED: {e:#}\n", name, "-", "-");
                rows.push(json!({
                    "cell": name,
                    "dims": dims,
                    "repr": tag,
                    "status": "failed",
                    "error": format!("{e:#}"),
                }));
            }
        }
    }
    let body = json!({
        "command": "ablate",
        "config": cfg,
        "grid": match grid { AblationGrid::Dims => "dims", AblationGrid::Repr => "repr" },
        "rows": rows,
    });
    write_report(&cfg.out, "ablate", &body, &text)?;
    Ok(all_ok)
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Least-squares slope of ln(y) against ln(x).
pub fn log_log_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let num: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let den: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    num / den
}

pub struct BenchRow {
    pub n: usize,
    pub casa_flops: u64,
    pub softmax_flops: u64,
    pub casa_secs: f64,
    pub softmax_secs: f64,
}

/// Time both attention kinds at each sequence length.
pub fn bench_attention(ns: &[usize], d: usize, reps: usize, seed: u64) -> Vec<BenchRow> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = CasaParams::init(d, &mut rng);
    let mut rows = Vec::new();
    for &n in ns {
        let x = Tensor::new(
            vec![1, d, 1, n],
            (0..d * n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        let flat: Vec<f64> = (0..n * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut casa_times = Vec::with_capacity(reps);
        let mut softmax_times = Vec::with_capacity(reps);
        for _ in 0..reps {
            let t = Instant::now();
            let y = casa_forward(&x, &params).unwrap();
            std::hint::black_box(y.to_vec()[0]);
            casa_times.push(t.elapsed().as_secs_f64());
            let t = Instant::now();
            let y = softmax_attention(&flat, &flat, &flat, n, d);
            std::hint::black_box(y[0]);
            softmax_times.push(t.elapsed().as_secs_f64());
        }
        rows.push(BenchRow {
            n,
            casa_flops: flop_count(AttentionKind::Casa, n, d),
            softmax_flops: flop_count(AttentionKind::Softmax, n, d),
            casa_secs: median(casa_times),
            softmax_secs: median(softmax_times),
        });
    }
    rows
}

pub fn cmd_bench(cfg: &RunConfig, n_list: &str, d: usize, reps: usize) -> Result<()> {
    let ns: Vec<usize> = n_list
        .split(',')
        .map(|p| p.trim().parse::<usize>().context("bad N value"))
        .collect::<Result<_>>()?;
    if ns.iter().any(|&n| n < 16) {
        bail!("all N values must be at least 16");
    }
    let rows = bench_attention(&ns, d, reps, cfg.seed);
    let xs: Vec<f64> = rows.iter().map(|r| r.n as f64).collect();
    let casa_exp = log_log_slope(&xs, &rows.iter().map(|r| r.casa_secs).collect::<Vec<_>>());
    let softmax_exp =
        log_log_slope(&xs, &rows.iter().map(|r| r.softmax_secs).collect::<Vec<_>>());
    let mut text = format!(
        "{:>8} {:>14} {:>14} {:>12} {:>12}\n",
        "N", "casa_flops", "softmax_flops", "casa_ms", "softmax_ms"
    );
    for r in &rows {
        text += &format!(
            "{:>8} {:>14} {:>14} {:>12.3} {:>12.3}\n",
            r.n,
            r.casa_flops,
            r.softmax_flops,
            r.casa_secs * 1e3,
            r.softmax_secs * 1e3
        );
    }
    text += &format!(
        "fitted exponents: casa {:.3}, softmax {:.3} (d={d}, {reps} reps)\n",
        casa_exp, softmax_exp
    );
    let body = json!({
        "command": "bench",
        "config": cfg,
        "d": d,
        "reps": reps,
        "rows": rows.iter().map(|r| json!({
            "n": r.n,
            "casa_flops": r.casa_flops,
            "softmax_flops": r.softmax_flops,
            "casa_secs": r.casa_secs,
            "softmax_secs": r.softmax_secs,
        })).collect::<Vec<_>>(),
        "casa_exponent": casa_exp,
        "softmax_exponent": softmax_exp,
    });
    write_report(&cfg.out, "bench", &body, &text)
}

pub fn cmd_validate(cfg: &RunConfig) -> Result<bool> {
    let dir = cfg.data.join("manifests");
    let mut paths: Vec<PathBuf> = fs::read_dir(&dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().map(|e| e == "json").unwrap_or(false))
        .collect();
    paths.sort();
    let mut rows = Vec::new();
    let mut all_ok = true;
    let mut text = String::new();
    for p in &paths {
        match load_recording(p) {
            Ok((rec, _)) => {
                text += &format!(
                    "ok      {} ({} ch x {} samples @ {} Hz)\n",
                    p.display(),
                    rec.channels,
                    rec.samples,
                    rec.fs
                );
                rows.push(json!({"path": p, "status": "ok"}));
            }
            Err(e) => {
                all_ok = false;
                text += &format!("INVALID {}: {e}\n", p.display());
                rows.push(json!({"path": p, "status": "invalid", "error": e.to_string()}));
            }
        }
    }
    text += &format!(
        "validate: {} manifests, {}\n",
        paths.len(),
        if all_ok { "all valid" } else { "errors found" }
    );
    let body = json!({
        "command": "validate",
        "config": cfg,
        "manifests": paths.len(),
        "rows": rows,
        "all_valid": all_ok,
    });
    write_report(&cfg.out, "validate", &body, &text)?;
    Ok(all_ok)
}
