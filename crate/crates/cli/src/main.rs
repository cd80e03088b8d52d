//! Command-line front end: phantom generation, training, inference, cohort
//! evaluation and slice rendering.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use defae::metrics::evaluate_cohort;
use defae::pipeline::{infer, load_cohort, load_volume, phantom_training_set, train_full, Checkpoint, TrainConfig};
use defae::render::{render_overlay, render_slice};
use defae::volume::{
    generate_phantom, load_mask, save_mask, save_volume, CohortLabel, CohortManifest, ManifestEntry, PhantomSpec,
};
use defae::{Error, Result};

#[derive(Parser)]
#[command(name = "defae", version, about = "Deformable adversarial autoencoder for 3-D anomaly detection")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML training configuration; defaults are used when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configuration seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic cohort (volumes, masks, manifest.json).
    PhantomGen {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 4)]
        healthy: usize,
        #[arg(long, default_value_t = 4)]
        anomalous: usize,
        #[arg(long, default_value_t = 0.75)]
        severity: f64,
        #[arg(long, default_value = "left_hippocampus")]
        target: String,
        /// Grid edge length; the configuration's phantom grid by default.
        #[arg(long)]
        grid: Option<usize>,
    },
    /// Run both training stages and write a checkpoint plus loss log.
    Train {
        #[arg(long)]
        out: PathBuf,
        /// Train on the healthy subjects of this manifest instead of the
        /// configured data source.
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Write every map and the scores for one volume.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        volume: PathBuf,
        #[arg(long)]
        mask: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the scores of one volume as JSON.
    Score {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        volume: PathBuf,
        #[arg(long)]
        mask: Option<PathBuf>,
    },
    /// Score a manifest and write report.json and report.csv.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write one slice as PGM, or as PPM with an anomaly overlay.
    RenderSlice {
        #[arg(long)]
        volume: PathBuf,
        /// 0 = depth, 1 = height, 2 = width.
        #[arg(long, default_value_t = 0)]
        axis: usize,
        #[arg(long)]
        index: usize,
        #[arg(long)]
        out: PathBuf,
        /// Map drawn in a warm channel over the grayscale slice.
        #[arg(long)]
        overlay: Option<PathBuf>,
    },
}

fn config(common: &Common) -> Result<TrainConfig> {
    let mut cfg = match &common.config {
        Some(path) => TrainConfig::load(path)?,
        None => TrainConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn phantom_gen(cfg: &TrainConfig, out: &Path, healthy: usize, anomalous: usize, severity: f64, target: &str, grid: usize) -> Result<()> {
    if !(0.0..=1.0).contains(&severity) {
        return Err(Error::InvalidArgument(format!("severity {severity} outside [0, 1]")));
    }
    create_dir(out)?;
    let mut entries = Vec::new();
    let groups = [(CohortLabel::Healthy, healthy, 0.0), (CohortLabel::Anomalous, anomalous, severity)];
    for (label, count, sev) in groups {
        for i in 0..count {
            let tag = match label {
                CohortLabel::Healthy => "healthy",
                CohortLabel::Anomalous => "anomalous",
            };
            let id = format!("{tag}_{i:03}");
            // distinct seed streams per group so healthy and anomalous
            // subjects never share anatomy
            let seed = cfg.seed.wrapping_mul(1_000_003).wrapping_add(label.as_binary() as u64 * 500_000 + i as u64);
            let spec = PhantomSpec {
                variability: cfg.phantom_variability,
                ..PhantomSpec::healthy(seed, grid).with_target(target).with_severity(sev)
            };
            let p = generate_phantom(&spec)?;
            save_volume(&p.volume, &out.join(&id))?;
            let mask_name = format!("{id}_mask");
            save_mask(&p.mask, &out.join(&mask_name))?;
            entries.push(ManifestEntry {
                id: id.clone(),
                volume: PathBuf::from(format!("{id}.f32raw")),
                label,
                mask: Some(PathBuf::from(format!("{mask_name}.f32raw"))),
            });
        }
    }
    let manifest = CohortManifest::new(entries, cfg.seed)?;
    manifest.save(&out.join("manifest.json"))?;
    println!("wrote {} subjects to {}", manifest.entries.len(), out.display());
    Ok(())
}

fn train(mut cfg: TrainConfig, out: &Path, manifest: Option<&Path>) -> Result<()> {
    let manifest = manifest.map(Path::to_path_buf).or_else(|| (cfg.data_source != "phantom").then(|| PathBuf::from(&cfg.data_source)));
    let volumes = match &manifest {
        Some(path) => {
            cfg.data_source = path.display().to_string();
            let m = CohortManifest::load(path)?;
            let healthy = CohortManifest::new(m.with_label(CohortLabel::Healthy).cloned().collect(), m.seed)?;
            load_cohort(&healthy, &cfg)?.into_iter().map(|s| s.volume).collect()
        }
        None => phantom_training_set(&cfg)?,
    };
    create_dir(out)?;
    let (ck, log) = train_full(&cfg, &volumes, &mut |stage, epoch, losses| {
        let parts: Vec<String> = losses.iter().map(|(k, v)| format!("{k}={v:.4}")).collect();
        eprintln!("stage {stage} epoch {epoch}: {}", parts.join(" "));
    })?;
    ck.save(&out.join("checkpoint.ckpt"))?;
    log.write_csv(&out.join("losses.csv"))?;
    let path = out.join("config.toml");
    fs::write(&path, cfg.to_toml()?).map_err(|e| Error::io(&path, e))?;
    println!("checkpoint written to {}", out.join("checkpoint.ckpt").display());
    Ok(())
}

fn run_infer(ckpt: &Path, volume: &Path, mask: Option<&Path>) -> Result<defae::pipeline::InferenceResult> {
    let ck = Checkpoint::load(ckpt)?;
    let x = load_volume(volume, &ck.config)?;
    let mask = mask.map(load_mask).transpose()?;
    infer(&ck, &x, mask.as_ref())
}

fn run(cli: Cli) -> Result<()> {
    let cfg = config(&cli.common)?;
    match cli.command {
        Command::PhantomGen {
            out,
            healthy,
            anomalous,
            severity,
            target,
            grid,
        } => phantom_gen(&cfg, &out, healthy, anomalous, severity, &target, grid.unwrap_or(cfg.phantom_grid)),
        Command::Train { out, manifest } => train(cfg, &out, manifest.as_deref()),
        Command::Infer {
            checkpoint,
            volume,
            mask,
            out,
        } => {
            let r = run_infer(&checkpoint, &volume, mask.as_deref())?;
            r.save(&out)?;
            println!("{}", serde_json::to_string_pretty(&r.scores)?);
            Ok(())
        }
        Command::Score { checkpoint, volume, mask } => {
            let r = run_infer(&checkpoint, &volume, mask.as_deref())?;
            println!("{}", serde_json::to_string_pretty(&r.scores)?);
            Ok(())
        }
        Command::Evaluate { checkpoint, manifest, out } => {
            let ck = Checkpoint::load(&checkpoint)?;
            let m = CohortManifest::load(&manifest)?;
            let report = evaluate_cohort(&ck, &m)?;
            create_dir(&out)?;
            report.write_json(&out.join("report.json"))?;
            report.write_csv(&out.join("report.csv"))?;
            for f in &report.failures {
                eprintln!("subject {} failed: {}", f.id, f.error);
            }
            println!(
                "auroc {:.4} (residual only {:.4}, folding only {:.4}) over {} subjects",
                report.auroc,
                report.auroc_residual,
                report.auroc_folding,
                report.subjects.len()
            );
            Ok(())
        }
        Command::RenderSlice {
            volume,
            axis,
            index,
            out,
            overlay,
        } => {
            let v = load_volume(&volume, &cfg)?;
            match overlay {
                Some(path) => render_overlay(&v, &load_volume(&path, &TrainConfig { normalize: false, ..cfg })?, axis, index, &out),
                None => render_slice(&v, axis, index, &out),
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 2 } else { 1 })
        }
    }
}
