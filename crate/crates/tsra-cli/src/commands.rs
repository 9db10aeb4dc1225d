//! Subcommand implementations. Each returns `Ok(())` or a [`CliError`]
//! carrying the process exit code.

use crate::config::{RunConfig, DEFAULT_SCENES};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use tsra::align::{load_checkpoint, save_checkpoint, train, AlignError};
use tsra::evaluation::{deviation_stats, write_detections_jsonl, DeviationThresholds};
use tsra::geometry::{rotated_iou, RotatedBox};
use tsra::image::read_gray_auto;
use tsra::modality::{ms_score_with_polarity, Polarity};
use tsra::pipeline::{
    build_samples, evaluate_alignment, split_scenes, AlignmentReport, Predictor,
};
use tsra::simulator::{export_dataset, generate_dataset, import_dataset, Dataset};

/// Process exit codes: 2 usage/config, 3 numeric failure, 4 artifact
/// mismatch, 1 anything else.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Numeric(String),
    Artifact(String),
    Other(anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Numeric(_) => 3,
            CliError::Artifact(_) => 4,
            CliError::Other(_) => 1,
        }
    }

    pub fn message(&self) -> String {
        match self {
            CliError::Usage(m) | CliError::Numeric(m) | CliError::Artifact(m) => m.clone(),
            CliError::Other(e) => format!("{e:#}"),
        }
    }
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Other(e)
    }
}

type CmdResult = Result<(), CliError>;

fn load_config(path: Option<&Path>, seed_flag: Option<u64>) -> Result<(RunConfig, u64), CliError> {
    let mut cfg = RunConfig::load(path).map_err(|e| CliError::Usage(format!("{e:#}")))?;
    let seed = cfg
        .resolve_seed(seed_flag)
        .map_err(|e| CliError::Usage(format!("{e:#}")))?;
    Ok((cfg, seed))
}

fn load_dataset(dir: &Path) -> Result<Dataset, CliError> {
    import_dataset(dir).map_err(|e| CliError::Artifact(format!("{e}")))
}

fn write_file(path: &Path, contents: &str) -> CmdResult {
    std::fs::write(path, contents)
        .map_err(|e| CliError::Other(anyhow::anyhow!("cannot write {}: {e}", path.display())))
}

/// Parses `cx,cy,w,h,theta` into a box.
pub fn parse_box(text: &str) -> Result<RotatedBox, CliError> {
    let parts: Vec<&str> = text.split(',').map(str::trim).collect();
    if parts.len() != 5 {
        return Err(CliError::Usage(format!(
            "box must be cx,cy,w,h,theta (got {text:?})"
        )));
    }
    let mut vals = [0.0f64; 5];
    for (v, p) in vals.iter_mut().zip(parts.iter()) {
        *v = p
            .parse()
            .map_err(|_| CliError::Usage(format!("bad number {p:?} in box {text:?}")))?;
    }
    RotatedBox::new(vals[0], vals[1], vals[2], vals[3], vals[4])
        .map_err(|e| CliError::Usage(format!("invalid box {text:?}: {e}")))
}

pub fn cmd_simulate(
    config: Option<&Path>,
    out: &Path,
    scenes_flag: Option<u64>,
    seed_flag: Option<u64>,
) -> CmdResult {
    let (mut cfg, seed) = load_config(config, seed_flag)?;
    if let Some(n) = scenes_flag {
        cfg.scenes = Some(n);
    }
    let scenes = cfg.scenes.unwrap_or(DEFAULT_SCENES);
    let dataset = generate_dataset(&cfg.scene, scenes);
    export_dataset(&dataset, out).map_err(|e| CliError::Other(anyhow::anyhow!("{e}")))?;
    write_file(&out.join("effective_config.json"), &cfg.echo_json())?;
    let pairs = dataset.all_annotations();
    let stats = deviation_stats(&pairs, cfg.stats);
    println!(
        "wrote {} scenes, {} objects to {} (seed {seed})",
        dataset.scenes.len(),
        dataset.object_count(),
        out.display()
    );
    println!("deviant_fraction={:.6}", stats.deviant_fraction());
    Ok(())
}

pub fn cmd_train_align(
    dataset_dir: &Path,
    config: Option<&Path>,
    out_checkpoint: &Path,
    no_ms: bool,
    no_jitter: bool,
    seed_flag: Option<u64>,
) -> CmdResult {
    let (cfg, seed) = load_config(config, seed_flag)?;
    let dataset = load_dataset(dataset_dir)?;
    let pipe = cfg.pipeline_config(cfg.pipeline.use_ms && !no_ms);
    let (train_scenes, _) = split_scenes(dataset.scenes.len(), pipe.holdout_fraction);
    if train_scenes.is_empty() {
        return Err(CliError::Usage(
            "dataset has no training scenes after the holdout split".into(),
        ));
    }
    let jitter_cfg = cfg.jitter.to_config(seed);
    let jitter = (cfg.jitter.enabled && !no_jitter).then_some((&jitter_cfg, cfg.jitter.copies));
    let samples = build_samples(&dataset, &train_scenes, &pipe, jitter);
    if samples.is_empty() {
        return Err(CliError::Usage("no training samples were produced".into()));
    }
    let result = train(&cfg.train, &samples).map_err(|e| match e {
        AlignError::NonFiniteLoss { epoch } => {
            CliError::Numeric(format!("loss became non-finite in epoch {epoch}"))
        }
        other => CliError::Other(anyhow::anyhow!("{other}")),
    })?;

    let out_dir = out_checkpoint.parent().map(Path::to_path_buf).filter(|p| !p.as_os_str().is_empty());
    if let Some(dir) = &out_dir {
        std::fs::create_dir_all(dir)
            .map_err(|e| CliError::Other(anyhow::anyhow!("cannot create {}: {e}", dir.display())))?;
    }
    let echo = cfg.echo_json();
    save_checkpoint(out_checkpoint, &result.params, &echo)
        .map_err(|e| CliError::Other(anyhow::anyhow!("{e}")))?;
    let mut curve = String::from("epoch,mean_loss\n");
    for (epoch, loss) in result.loss_curve.iter().enumerate() {
        let _ = writeln!(curve, "{epoch},{loss}");
    }
    let base = out_dir.unwrap_or_else(|| PathBuf::from("."));
    write_file(&base.join("loss_curve.csv"), &curve)?;
    write_file(&base.join("effective_config.json"), &echo)?;
    println!(
        "trained on {} samples for {} epochs (seed {seed}); checkpoint {}",
        samples.len(),
        result.loss_curve.len(),
        out_checkpoint.display()
    );
    if let (Some(first), Some(last)) = (result.loss_curve.first(), result.loss_curve.last()) {
        println!("loss first={first} last={last}");
    }
    Ok(())
}

fn print_report(report: &AlignmentReport) {
    println!("objects evaluated: {}", report.objects);
    println!("{:<18} {:>12} {:>12} {:>12}", "metric", "before", "after", "reduction");
    let row = |name: &str, before: f64, after: f64| {
        println!("{name:<18} {before:>12.4} {after:>12.4} {:>12.4}", before - after);
    };
    row("center_error_px", report.center_before, report.center_after);
    row("size_error_px", report.size_before, report.size_after);
    row("angle_error_deg", report.angle_before_deg, report.angle_after_deg);
    println!(
        "{:<18} {:>12.4} {:>12.4}",
        "mean_iou", report.iou_before, report.iou_after
    );
    println!(
        "{:<18} {:>12.4} {:>12.4}",
        "map", report.map_before, report.map_after
    );
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_eval(
    dataset_dir: &Path,
    checkpoint: Option<&Path>,
    report_dir: &Path,
    config: Option<&Path>,
    no_ms: bool,
    oracle: bool,
    seed_flag: Option<u64>,
) -> CmdResult {
    let dataset = load_dataset(dataset_dir)?;

    // Config precedence: explicit --config, else the training echo stored in
    // the checkpoint header, else defaults.
    let (cfg, params) = if let Some(ckpt_path) = checkpoint {
        let (params, header) =
            load_checkpoint(ckpt_path).map_err(|e| CliError::Artifact(format!("{e}")))?;
        let cfg = if config.is_some() {
            load_config(config, seed_flag)?.0
        } else {
            let mut cfg: RunConfig = serde_json::from_str(&header).map_err(|e| {
                CliError::Artifact(format!(
                    "checkpoint header is not a run config ({e}); pass --config"
                ))
            })?;
            cfg.resolve_seed(seed_flag)
                .map_err(|e| CliError::Usage(format!("{e:#}")))?;
            cfg
        };
        let expect = cfg.features.channels * cfg.pooling.out_size * cfg.pooling.out_size;
        if params.input_dim != expect {
            return Err(CliError::Artifact(format!(
                "checkpoint input dimension {} does not match features x pooling = {expect}",
                params.input_dim
            )));
        }
        (cfg, Some(params))
    } else {
        if !oracle {
            return Err(CliError::Usage(
                "--checkpoint is required unless --oracle is set".into(),
            ));
        }
        (load_config(config, seed_flag)?.0, None)
    };

    let pipe = cfg.pipeline_config(cfg.pipeline.use_ms && !no_ms);
    let (_, holdout) = split_scenes(dataset.scenes.len(), pipe.holdout_fraction);
    let predictor = if oracle {
        Predictor::Oracle
    } else {
        Predictor::Head(params.as_ref().expect("checkpoint loaded"))
    };
    let report = evaluate_alignment(&dataset, &holdout, predictor, &pipe, cfg.eval.iou_thresh)
        .map_err(|e| CliError::Other(anyhow::anyhow!("{e}")))?;

    std::fs::create_dir_all(report_dir)
        .map_err(|e| CliError::Other(anyhow::anyhow!("cannot create {}: {e}", report_dir.display())))?;
    write_file(&report_dir.join("report.csv"), &report.to_csv())?;
    write_detections_jsonl(&report_dir.join("aligned.jsonl"), &report.aligned)
        .map_err(|e| CliError::Other(anyhow::anyhow!("{e}")))?;
    write_file(&report_dir.join("effective_config.json"), &cfg.echo_json())?;
    print_report(&report);
    Ok(())
}

pub fn cmd_stats(
    dataset_dir: &Path,
    out: Option<&Path>,
    thresholds: DeviationThresholds,
) -> CmdResult {
    let dataset = load_dataset(dataset_dir)?;
    let pairs = dataset.all_annotations();
    let stats = deviation_stats(&pairs, thresholds);
    let csv = stats.to_csv();
    if let Some(path) = out {
        write_file(path, &csv)?;
    }
    print!("{csv}");
    println!("deviant_fraction={:.6}", stats.deviant_fraction());
    Ok(())
}

pub fn cmd_ms_score(
    image: &Path,
    bbox: &RotatedBox,
    extend: f64,
    polarity: Polarity,
) -> CmdResult {
    if extend < 1.0 || !extend.is_finite() {
        return Err(CliError::Usage(format!(
            "--extend must be >= 1 (got {extend})"
        )));
    }
    let img = read_gray_auto(image).map_err(|e| CliError::Artifact(format!("{e}")))?;
    let score = ms_score_with_polarity(&img, bbox, extend, polarity)
        .map_err(|e| CliError::Usage(format!("{e}")))?;
    println!("{:.6}", score.score);
    println!(
        "n={} n_object={} n_bbox={}",
        score.n, score.n_object, score.n_bbox
    );
    Ok(())
}

pub fn cmd_iou(box_a: &RotatedBox, box_b: &RotatedBox) -> CmdResult {
    println!("{:.6}", rotated_iou(box_a, box_b));
    Ok(())
}
