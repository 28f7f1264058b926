//! The five subcommands. Each reads the effective configuration and writes
//! its artifacts into the output directory.

use std::fs;
use std::path::{Path, PathBuf};

use ecdbs::hsi_io::{
    band_entropy, difference_image, extract_patches, read_cube, read_labels, split,
    write_change_map, write_csv_report, write_cube, write_labels, CsvReport, HsiCube, LabelMask,
    PatchSet, Split,
};
use ecdbs::network::{read_checkpoint, write_checkpoint, EcdbsModel, FrozenGraph};
use ecdbs::train_eval::{build_model, evaluate, predict_map, synth_generate, train, TrainError};

use crate::config::RunConfig;
use crate::error::CliError;

pub const CHECKPOINT_FILE: &str = "model.ecdb";
pub const LAST_GOOD_FILE: &str = "model_last_good.ecdb";
pub const EFFECTIVE_CONFIG_FILE: &str = "effective_config.json";

/// Creates the output directory and echoes the resolved configuration.
pub fn prepare_output(cfg: &RunConfig) -> Result<(), CliError> {
    fs::create_dir_all(&cfg.out)
        .map_err(|e| CliError::Data(format!("cannot create {}: {e}", cfg.out.display())))?;
    let path = cfg.out.join(EFFECTIVE_CONFIG_FILE);
    fs::write(&path, cfg.to_json()).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn load_difference(cfg: &RunConfig) -> Result<HsiCube, CliError> {
    let t1 = read_cube(RunConfig::require(&cfg.data.t1, "data.t1")?)?;
    let t2 = read_cube(RunConfig::require(&cfg.data.t2, "data.t2")?)?;
    if t1.bands() != t2.bands() {
        return Err(CliError::Data(format!(
            "band count mismatch: t1 has {} bands, t2 has {}",
            t1.bands(),
            t2.bands()
        )));
    }
    Ok(difference_image(&t1, &t2)?)
}

fn load_labels(cfg: &RunConfig) -> Result<LabelMask, CliError> {
    Ok(read_labels(RunConfig::require(
        &cfg.data.labels,
        "data.labels",
    )?)?)
}

fn checkpoint_path(cfg: &RunConfig, checkpoint: Option<&Path>) -> PathBuf {
    checkpoint.map_or_else(|| cfg.out.join(CHECKPOINT_FILE), Path::to_path_buf)
}

/// Reads a checkpoint and checks it against the cube and, when the
/// configuration pins one, the cluster count.
fn load_model(cfg: &RunConfig, path: &Path, diff: &HsiCube) -> Result<EcdbsModel<f32>, CliError> {
    let model = read_checkpoint::<f32>(path)?;
    if model.config.bands != diff.bands() {
        return Err(CliError::Data(format!(
            "checkpoint expects {} bands, cube has {}",
            model.config.bands,
            diff.bands()
        )));
    }
    if cfg.bands.clusters.is_some() || cfg.bands.downsample_rate.is_some() {
        let b = cfg.bands.resolve_clusters(diff.bands())?;
        if b != model.config.clusters {
            return Err(CliError::Data(format!(
                "checkpoint selects {} bands, configuration asks for {b}",
                model.config.clusters
            )));
        }
    }
    Ok(model)
}

fn write_report(report: &CsvReport, path: PathBuf) -> Result<(), CliError> {
    write_csv_report(report, &path)?;
    log::info!("wrote {}", path.display());
    Ok(())
}

pub fn synth(cfg: &RunConfig) -> Result<(), CliError> {
    let scene = synth_generate(&cfg.synth_config())?;
    prepare_output(cfg)?;
    write_cube(&scene.t1, cfg.out.join("t1.hsic"))?;
    write_cube(&scene.t2, cfg.out.join("t2.hsic"))?;
    write_labels(&scene.labels, cfg.out.join("labels.hsil"))?;
    let mut report = CsvReport::new(["band", "group", "informative"]);
    for (band, &group) in scene.band_groups.iter().enumerate() {
        let informative = u8::from(scene.informative.contains(&band));
        report.push([band, group, informative as usize]);
    }
    write_report(&report, cfg.out.join("ground_truth_bands.csv"))?;
    println!(
        "synthesised {}x{}x{} scene, informative bands {:?}",
        scene.t1.bands(),
        scene.t1.height(),
        scene.t1.width(),
        scene.informative
    );
    Ok(())
}

pub fn select_bands(cfg: &RunConfig, checkpoint: Option<&Path>) -> Result<(), CliError> {
    let diff = load_difference(cfg)?;
    let model = checkpoint.map(|p| load_model(cfg, p, &diff)).transpose()?;
    let (clusters, selected) = match &model {
        Some(m) => (m.graph.clusters.clone(), Some(m.selected_bands()?)),
        None => {
            let b = cfg.bands.resolve_clusters(diff.bands())?;
            (
                FrozenGraph::build(&diff, cfg.bands.neighbors, b, cfg.seed)?.clusters,
                None,
            )
        }
    };
    prepare_output(cfg)?;
    let entropy = band_entropy(&diff);
    let mut header = vec!["band", "cluster", "entropy"];
    if selected.is_some() {
        header.push("selected");
    }
    let mut report = CsvReport::new(header);
    for (band, (&cluster, h)) in clusters.labels().iter().zip(&entropy).enumerate() {
        let mut row = vec![band.to_string(), cluster.to_string(), h.to_string()];
        if let Some(sel) = &selected {
            row.push(u8::from(sel.contains(&band)).to_string());
        }
        report.push(row);
    }
    write_report(&report, cfg.out.join("bands.csv"))?;
    println!("{} bands in {} clusters", diff.bands(), clusters.clusters());
    if let Some(sel) = selected {
        let mut report = CsvReport::new(["cluster", "band"]);
        for (cluster, band) in sel.iter().enumerate() {
            report.push([cluster, *band]);
        }
        write_report(&report, cfg.out.join("selected_bands.csv"))?;
        println!("selected bands {sel:?}");
    }
    Ok(())
}

fn labelled_split<'a>(
    cfg: &RunConfig,
    diff: &'a HsiCube,
    labels: &LabelMask,
) -> Result<(PatchSet<'a>, Split), CliError> {
    let patches = extract_patches(diff, labels, cfg.network.patch_size)?;
    let sp = split(&patches, &cfg.split_spec())?;
    Ok((patches, sp))
}

fn print_metrics(title: &str, ev: &ecdbs::train_eval::Evaluation) {
    println!("{title}:\n{}", ev.report.to_text(&ev.confusion).trim_end());
}

pub fn train_cmd(cfg: &RunConfig) -> Result<(), CliError> {
    let train_cfg = cfg.train_config();
    train_cfg.validate()?;
    cfg.loss.validate()?;
    let diff = load_difference(cfg)?;
    let labels = load_labels(cfg)?;
    let model_cfg = cfg.model_config(diff.bands())?;
    model_cfg.validate()?;
    let (patches, sp) = labelled_split(cfg, &diff, &labels)?;
    println!(
        "{} bands, {} clusters; {} train / {} val / {} test patches",
        model_cfg.bands,
        model_cfg.clusters,
        sp.train.len(),
        sp.val.len(),
        sp.test.len()
    );
    let model = build_model(model_cfg, &diff)?;
    prepare_output(cfg)?;
    let outcome = match train(model, &patches, &sp, &train_cfg, &cfg.loss) {
        Ok(o) => o,
        Err(TrainError::Diverged { epoch, last_good }) => {
            let path = cfg.out.join(LAST_GOOD_FILE);
            write_checkpoint(&*last_good, &path)?;
            return Err(CliError::Numerical(format!(
                "training diverged at epoch {epoch}; last good model saved to {}",
                path.display()
            )));
        }
        Err(e) => return Err(e.into()),
    };

    let path = cfg.out.join(CHECKPOINT_FILE);
    write_checkpoint(&outcome.best, &path)?;
    log::info!("wrote {}", path.display());

    let bands = cfg.model_config(diff.bands())?.bands;
    let mut header: Vec<String> = ["epoch", "tau", "train_loss", "val_oa", "val_kappa"]
        .map(String::from)
        .to_vec();
    header.extend((0..bands).map(|j| format!("w_{j}")));
    let mut log_report = CsvReport::new(header);
    let clusters = outcome.best.config.clusters;
    let mut header: Vec<String> = ["epoch", "tau", "min_row_max"].map(String::from).to_vec();
    header.extend((0..clusters).map(|i| format!("sel_{i}")));
    let mut trajectory = CsvReport::new(header);
    for e in &outcome.log {
        let mut row = vec![
            e.epoch.to_string(),
            e.tau.to_string(),
            e.train_loss.to_string(),
            e.val_oa.to_string(),
            e.val_kappa.to_string(),
        ];
        row.extend(e.weights.iter().map(f64::to_string));
        log_report.push(row);
        let mut row = vec![
            e.epoch.to_string(),
            e.tau.to_string(),
            e.min_row_max.to_string(),
        ];
        row.extend(e.selected.iter().map(usize::to_string));
        trajectory.push(row);
    }
    write_report(&log_report, cfg.out.join("training_log.csv"))?;
    write_report(&trajectory, cfg.out.join("weight_trajectory.csv"))?;

    println!(
        "best epoch {} of {}; selected bands {:?}",
        outcome.best_epoch,
        outcome.log.len(),
        outcome.best.selected_bands()?
    );
    if sp.val.is_empty() {
        println!("no validation split; kept the last epoch");
    } else {
        print_metrics("validation", &evaluate(&outcome.best, &patches, &sp.val)?);
    }
    Ok(())
}

pub fn predict(cfg: &RunConfig, checkpoint: Option<&Path>) -> Result<(), CliError> {
    let diff = load_difference(cfg)?;
    let model = load_model(cfg, &checkpoint_path(cfg, checkpoint), &diff)?;
    let map = predict_map(&model, &diff)?;
    prepare_output(cfg)?;
    let path = cfg.out.join("change_map.pgm");
    write_change_map(&map, diff.height(), diff.width(), &path)?;
    let changed = map.iter().filter(|&&p| p == 1).count();
    println!(
        "{changed} of {} pixels predicted changed; wrote {}",
        map.len(),
        path.display()
    );
    Ok(())
}

pub fn evaluate_cmd(cfg: &RunConfig, checkpoint: Option<&Path>) -> Result<(), CliError> {
    let diff = load_difference(cfg)?;
    let labels = load_labels(cfg)?;
    let model = load_model(cfg, &checkpoint_path(cfg, checkpoint), &diff)?;
    let patches = extract_patches(&diff, &labels, model.config.patch_size)?;
    let sp = split(&patches, &cfg.split_spec())?;
    let ev = evaluate(&model, &patches, &sp.test)?;
    prepare_output(cfg)?;
    let r = &ev.report;
    let mut report = CsvReport::new(["metric", "value"]);
    for (name, value) in [
        ("oa", r.oa),
        ("kappa", r.kappa),
        ("f1", r.f1),
        ("precision", r.precision),
        ("recall", r.recall),
    ] {
        report.push([name.to_string(), value.to_string()]);
    }
    let cm = &ev.confusion;
    for (name, value) in [("tp", cm.tp), ("tn", cm.tn), ("fp", cm.fp), ("fn", cm.fn_)] {
        report.push([name.to_string(), value.to_string()]);
    }
    write_report(&report, cfg.out.join("metrics.csv"))?;
    let path = cfg.out.join("metrics.txt");
    fs::write(&path, r.to_text(cm))
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    print_metrics(&format!("test ({} pixels)", sp.test.len()), &ev);
    Ok(())
}
