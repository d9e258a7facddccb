use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use ssrecon::harness::experiment::{
    checkpoint_path, create_dir, evaluate_stage, load_training_state, train_stage, write_csv,
    write_evaluation_artifacts, write_text, write_training_artifacts, RunRecord, Timings,
};
use ssrecon::harness::io::{read_sinogram_pfm, write_pfm, write_png, write_sinogram_pfm};
use ssrecon::harness::{
    compare_methods, configure_threads, prepare_data, robustness_sweep, ExperimentConfig,
    SweepAmplitude,
};
use ssrecon::methods::theory::{
    check_conditional_identity, check_linear_minimizers, LinearCheckConfig, LinearWeighting,
};
use ssrecon::methods::{infer, LossContext, MethodSpec, ReconOperators, StoppingMode};
use ssrecon::nn::{Checkpoint, UNet};
use ssrecon::noise::NoiseSpec;

#[derive(Parser)]
#[command(
    name = "ssrecon",
    version,
    about = "Self-supervised CT reconstruction experiments"
)]
struct Cli {
    /// Worker threads (overrides N2I_THREADS).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the noisy dataset and write sinograms and clean images.
    Synthesize(Common),
    /// Train and store checkpoints and the loss curve.
    Train(Common),
    /// Select checkpoints of a trained run and score the test split.
    Evaluate(Common),
    /// Reconstruct one sinogram with a checkpoint.
    Infer {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Sinogram as a PFM matching the configured geometry.
        #[arg(long)]
        input: PathBuf,
        /// Keys the inference noise stream for [z] inference.
        #[arg(long, default_value_t = 0)]
        sample_id: u64,
        #[arg(long)]
        output: PathBuf,
    },
    /// Train several methods on identical data and tabulate them.
    Compare {
        #[command(flatten)]
        common: Common,
        /// Comma-separated labels, e.g. NN2Is,NN2N,N2I.
        #[arg(long, value_delimiter = ',')]
        methods: Vec<String>,
    },
    /// Evaluate a trained run on test data with other correlation lengths.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_values_t = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0])]
        sigmas: Vec<f64>,
        /// Defaults to the last checkpoint of the run.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Rescale delta so every sigma has the test noise's per-pixel std.
        #[arg(long)]
        match_std: bool,
    },
    /// Monte-Carlo checks of the loss identity.
    TheoryCheck {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 100_000)]
        num_mc: usize,
    },
}

#[derive(Args, Clone)]
struct Common {
    /// TOML experiment file; the desk preset when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    angles: Option<usize>,
    #[arg(long)]
    epochs: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Method label: NN2I, NN2Is, NN2N or N2I, optionally with [y]/[z].
    #[arg(long)]
    method: Option<String>,
    /// last_epoch or psnr_oracle.
    #[arg(long)]
    stopping: Option<String>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)
                .with_context(|| format!("loading {}", path.display()))?,
            None => ExperimentConfig::desk(),
        };
        let noise = &mut cfg.noise;
        for params in [
            Some(&mut noise.train),
            noise.val.as_mut(),
            noise.test.as_mut(),
        ]
        .into_iter()
        .flatten()
        {
            if let Some(sigma) = self.sigma {
                params.sigma = sigma;
                params.kernel_radius = None;
            }
            if let Some(delta) = self.delta {
                params.delta = delta;
            }
        }
        if let Some(a) = self.angles {
            cfg.geometry.num_angles = a;
        }
        if let Some(e) = self.epochs {
            cfg.train.epochs = e;
            if e > 0 && e % cfg.train.checkpoint_every != 0 {
                cfg.train.checkpoint_every = e;
            }
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(m) = &self.method {
            cfg.method = m.parse::<MethodSpec>()?;
        }
        if let Some(s) = &self.stopping {
            cfg.stopping = vec![s.parse::<StoppingMode>()?];
        }
        if let Some(out) = &self.out {
            cfg.output_dir = out.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Some(n) = configure_threads(cli.threads) {
        log::info!("using {n} worker threads");
    }
    match cli.command {
        Command::Synthesize(common) => synthesize(&common.load()?),
        Command::Train(common) => train(&common.load()?),
        Command::Evaluate(common) => evaluate(&common.load()?),
        Command::Infer {
            common,
            checkpoint,
            input,
            sample_id,
            output,
        } => infer_one(&common.load()?, &checkpoint, &input, sample_id, &output),
        Command::Compare { common, methods } => compare(&common.load()?, &methods),
        Command::Sweep {
            common,
            sigmas,
            checkpoint,
            match_std,
        } => {
            let amplitude = if match_std {
                SweepAmplitude::MatchedStd
            } else {
                SweepAmplitude::FixedDelta
            };
            sweep(&common.load()?, &sigmas, checkpoint, amplitude)
        }
        Command::TheoryCheck { common, num_mc } => theory_check(common.seed.unwrap_or(0), num_mc),
    }
}

fn synthesize(cfg: &ExperimentConfig) -> Result<()> {
    let data = prepare_data(cfg)?;
    let dir = cfg
        .output_dir
        .join(format!("{}-data-s{}", cfg.name, cfg.seed));
    create_dir(&dir)?;
    let mut index = Vec::new();
    for (split, samples) in [
        ("train", &data.train),
        ("val", &data.val),
        ("test", &data.test),
    ] {
        for s in samples {
            let id = s.sample_id();
            let sino = format!("y_{id:05}.pfm");
            let clean = format!("x_{id:05}.pfm");
            write_sinogram_pfm(&dir.join(&sino), s.y())?;
            write_pfm(&dir.join(&clean), s.clean()?)?;
            index.push(IndexRow {
                split,
                sample_id: id,
                sinogram: sino,
                clean,
            });
        }
    }
    write_csv(&dir.join("index.csv"), &index)?;
    write_text(&dir.join("config.toml"), &cfg.to_toml()?)?;
    println!("wrote {} samples to {}", index.len(), dir.display());
    Ok(())
}

#[derive(serde::Serialize)]
struct IndexRow {
    split: &'static str,
    sample_id: u64,
    sinogram: String,
    clean: String,
}

fn train(cfg: &ExperimentConfig) -> Result<()> {
    let data = prepare_data(cfg)?;
    let state = train_stage(cfg, &data)?;
    let dir = cfg.run_dir();
    create_dir(&dir)?;
    write_text(&dir.join("config.toml"), &cfg.to_toml()?)?;
    write_training_artifacts(&dir, cfg, &state)?;
    let last = state.loss_curve.last().map(|r| r.loss).unwrap_or(f64::NAN);
    println!(
        "{}: {} epochs, final loss {last:.6e}, {} checkpoints in {}",
        cfg.run_id(),
        state.epoch,
        state.checkpoints.len(),
        dir.display()
    );
    Ok(())
}

fn evaluate(cfg: &ExperimentConfig) -> Result<()> {
    let dir = cfg.run_dir();
    let data = prepare_data(cfg)?;
    let state = load_training_state(&dir, cfg)?;
    let start = std::time::Instant::now();
    let (selections, metrics, recons) = evaluate_stage(cfg, &data, &state)?;
    let record = RunRecord {
        run_id: cfg.run_id(),
        config: cfg.clone(),
        param_count: state.params.len(),
        checkpoint_epochs: state.checkpoints.iter().map(|(e, _)| *e).collect(),
        loss_curve: state.loss_curve.clone(),
        selections,
        metrics,
        timings: Timings {
            eval_seconds: start.elapsed().as_secs_f64(),
            ..Timings::default()
        },
    };
    write_evaluation_artifacts(&dir, &record, &recons)?;
    print_record(&record);
    Ok(())
}

fn print_record(record: &RunRecord) {
    println!(
        "{:<12} {:<10} {:>7} {:>9} {:>8}",
        "stopping", "inference", "epoch", "psnr", "ssim"
    );
    for sel in &record.selections {
        let p = record.psnr_summary(sel.stopping, sel.inference);
        let s = record.ssim_summary(sel.stopping, sel.inference);
        println!(
            "{:<12} {:<10} {:>7} {:>9.3} {:>8.4}",
            sel.stopping.to_string(),
            sel.inference.to_string(),
            sel.epoch,
            p.mean,
            s.mean
        );
    }
}

fn infer_one(
    cfg: &ExperimentConfig,
    checkpoint: &Path,
    input: &Path,
    sample_id: u64,
    output: &Path,
) -> Result<()> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let geom = cfg.geometry()?;
    let y = read_sinogram_pfm(input, &geom)?;
    let ops = ReconOperators::new(&geom, cfg.dataset.image_size)?;
    let net = UNet::new(&ckpt.config)?;
    let noise = cfg.noise.test().spec(cfg.seed)?;
    let ctx = LossContext {
        ops: &ops,
        net: &net,
        noise: &noise,
    };
    let recon = infer(&ckpt.params, &cfg.method, &y, sample_id, ctx)?;
    write_pfm(output, &recon)?;
    write_png(&output.with_extension("png"), &recon, 0.0, 1.0)?;
    println!("wrote {}", output.display());
    Ok(())
}

fn compare(cfg: &ExperimentConfig, labels: &[String]) -> Result<()> {
    let methods = if labels.is_empty() {
        MethodSpec::all_training_methods()
    } else {
        labels
            .iter()
            .map(|l| l.parse::<MethodSpec>())
            .collect::<Result<Vec<_>, _>>()?
    };
    let dir = cfg
        .output_dir
        .join(format!("{}-compare-s{}", cfg.name, cfg.seed));
    create_dir(&dir)?;
    let cmp = compare_methods(cfg, &methods, Some(&dir))?;
    for row in cmp.table() {
        if row.statistic != "median" {
            continue;
        }
        let cells: Vec<String> = row
            .values
            .iter()
            .map(|(k, v)| format!("{k}={v:.3}"))
            .collect();
        println!(
            "{} {} median: {}",
            row.stopping,
            row.metric,
            cells.join(" ")
        );
    }
    println!("tables in {}", dir.display());
    Ok(())
}

fn sweep(
    cfg: &ExperimentConfig,
    sigmas: &[f64],
    checkpoint: Option<PathBuf>,
    amplitude: SweepAmplitude,
) -> Result<()> {
    let dir = cfg.run_dir();
    let params = match checkpoint {
        Some(path) => Checkpoint::load(&path)?.params,
        None => {
            let state = load_training_state(&dir, cfg)?;
            let path = checkpoint_path(&dir, state.epoch);
            log::info!("using {}", path.display());
            state.params
        }
    };
    if sigmas.is_empty() {
        bail!("no sigma values given");
    }
    let rows = robustness_sweep(cfg, &params, sigmas, amplitude)?;
    create_dir(&dir)?;
    write_csv(&dir.join("sweep.csv"), &rows)?;
    for r in &rows {
        println!(
            "sigma {:>5.2} delta {:>7.3} [{}]: psnr {:.3} +- {:.3}, ssim {:.4}",
            r.sigma, r.delta, r.inference, r.psnr_mean, r.psnr_std, r.ssim_mean
        );
    }
    Ok(())
}

fn theory_check(seed: u64, num_mc: usize) -> Result<()> {
    for (name, weighting) in [
        ("W = Id", LinearWeighting::Identity),
        ("W random 8x4", LinearWeighting::Random { rows: 8 }),
    ] {
        let mut cfg = LinearCheckConfig::new(4, 4, num_mc, seed);
        cfg.weighting = weighting;
        let report = check_linear_minimizers(&cfg)?;
        println!(
            "linear minimizers ({name}): distance {:.3e}",
            report.distance
        );
    }
    let noise = NoiseSpec::new(1.0, 2.0, seed)?;
    let report = check_conditional_identity(&noise, num_mc, seed)?;
    println!(
        "conditional identity: binned residual {:.4}, unconditional max |z| {:.2} ({} bins)",
        report.residual, report.unconditional_max_z, report.bins_used
    );
    Ok(())
}
