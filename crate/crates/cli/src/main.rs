use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use phasescan::arch::Variant;
use phasescan::harness::{evaluate_run, run_ablation, saliency, train_run, write_report, RunConfig};
use phasescan::phantom::{generate, write_dataset, PhantomSpec, Preset};
use phasescan::ssm::{ScanInputs, ScanMode};

/// Multi-phase phantom generation, training and evaluation.
#[derive(Parser)]
#[command(name = "phasescan", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a phantom dataset directory.
    Gen {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 240)]
        n: usize,
        #[arg(long, default_value = "default")]
        preset: Preset,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Phantom keys in this file override the preset.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Cross-validate a model on a dataset.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        folds: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Metrics report for a finished run.
    Eval {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        report: PathBuf,
        /// Skip the inference timing.
        #[arg(long)]
        no_timing: bool,
    },
    /// Train the ablation ladder on the same folds.
    Ablate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Comma-separated subset, e.g. `basic,c1,c3,full`.
        #[arg(long, value_delimiter = ',')]
        variants: Option<Vec<Variant>>,
    },
    /// Grad-CAM volume for one held-out sample.
    Saliency {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        sample: String,
        #[arg(long, default_value_t = 2)]
        stage: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Micro-benchmarks.
    Bench {
        #[command(subcommand)]
        what: Bench,
    },
}

#[derive(Subcommand)]
enum Bench {
    /// Sequential versus parallel selective scan.
    Scan(ScanBench),
}

#[derive(Args)]
struct ScanBench {
    #[arg(long, default_value_t = 4096)]
    len: usize,
    #[arg(long, default_value_t = 16)]
    d_state: usize,
    #[arg(long, default_value_t = 16)]
    channels: usize,
    #[arg(long, default_value_t = 5)]
    reps: usize,
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p).with_context(|| format!("reading config {}", p.display())),
        None => Ok(RunConfig::default()),
    }
}

fn median_ms(reps: usize, mut f: impl FnMut() -> Result<()>) -> Result<f64> {
    let mut t = Vec::with_capacity(reps);
    for _ in 0..reps.max(1) {
        let start = Instant::now();
        f()?;
        t.push(start.elapsed().as_secs_f64() * 1e3);
    }
    t.sort_by(f64::total_cmp);
    Ok(t[t.len() / 2])
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Gen {
            out,
            n,
            preset,
            seed,
            config,
        } => {
            let mut spec = PhantomSpec::preset(preset);
            if let Some(path) = config {
                let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
                for line in text.lines().map(|l| l.split('#').next().unwrap_or("").trim()) {
                    let Some((k, v)) = line.split_once('=') else { continue };
                    spec.set(k.trim(), v.trim())?;
                }
            }
            let samples = generate(&spec, n, seed)?;
            let entries = write_dataset(&out, &samples)?;
            let ones = entries.iter().filter(|e| e.label == 1).count();
            println!(
                "wrote {} samples ({} class 0, {ones} class 1, preset {preset}) to {}",
                entries.len(),
                entries.len() - ones,
                out.display()
            );
        }
        Command::Train {
            data,
            config,
            folds,
            out,
        } => {
            let mut cfg = load_config(config.as_deref())?;
            if let Some(k) = folds {
                cfg.train.folds = k;
            }
            let start = Instant::now();
            let outcomes = train_run(&data, &cfg, &out, &mut |e| eprintln!("{}", e.to_line()))?;
            for f in &outcomes {
                println!("fold={} acc={:.4} auc={:.4}", f.fold, f.metrics.acc, f.metrics.auc);
            }
            println!("trained {} folds in {:.1} s; run at {}", outcomes.len(), start.elapsed().as_secs_f64(), out.display());
        }
        Command::Eval { run, report, no_timing } => {
            let r = evaluate_run(&run, !no_timing)?;
            let json = write_report(&r, &report)?;
            print!("{}", r.to_kv());
            eprintln!("report: {} and {}", report.display(), json.display());
        }
        Command::Ablate {
            data,
            out,
            config,
            variants,
        } => {
            let cfg = load_config(config.as_deref())?;
            let variants = variants.unwrap_or_else(|| Variant::ALL.to_vec());
            let rows = run_ablation(&data, &cfg, &variants, &out, &mut |v, e| eprintln!("{v} {}", e.to_line()))?;
            for r in rows {
                println!(
                    "{} acc={:.4}±{:.4} auc={:.4}±{:.4}",
                    r.variant, r.report.mean.acc, r.report.std.acc, r.report.mean.auc, r.report.std.auc
                );
            }
            println!("table: {}", out.join("ablation.txt").display());
        }
        Command::Saliency {
            run,
            sample,
            stage,
            out,
        } => {
            let cam = saliency(&run, &sample, stage, &out)?;
            println!("wrote {:?} saliency for {sample} to {}", cam.shape(), out.display());
        }
        Command::Bench { what: Bench::Scan(b) } => {
            if b.len == 0 || b.d_state == 0 || b.channels == 0 {
                bail!("len, d-state and channels must be positive");
            }
            let inputs = ScanInputs::<f32>::random(b.len, b.channels, b.d_state, 0);
            let seq = median_ms(b.reps, || Ok(inputs.run(ScanMode::Sequential).map(drop)?))?;
            let par = median_ms(b.reps, || Ok(inputs.run(ScanMode::Parallel).map(drop)?))?;
            let diff = inputs
                .run(ScanMode::Parallel)?
                .rel_err(&inputs.run(ScanMode::Sequential)?);
            println!("len={} d_state={} channels={}", b.len, b.d_state, b.channels);
            println!("sequential_ms={seq:.3}");
            println!("parallel_ms={par:.3}");
            println!("threads={}", rayon_threads());
            println!("max_rel_diff={diff:.3e}");
        }
    }
    Ok(())
}

fn rayon_threads() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}
