//! `dsea`: train, evaluate, and inspect dual-space entity alignment models.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use dsea_core::encoders::{encode_euclid, PairGraphs};
use dsea_core::inference::export_embeddings;
use dsea_core::kgdata::{generate_synthetic_pair, load_openea, split_links, write_openea, SyntheticConfig};
use dsea_core::selftest::{run_selftest, SelfTestOptions};
use dsea_core::trainer::{evaluate_params, grid_lambda, run_folds, train_with, TrainConfig};
use dsea_core::CheckpointF64;

#[derive(Parser)]
#[command(name = "dsea", version, about = "Dual-space knowledge-graph entity alignment")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Ablation {
    /// Drop the Euclidean/hyperbolic contrast.
    Inter,
    /// Drop the within-view contrast.
    Intra,
    /// Drop both contrastive terms.
    Both,
}

#[derive(Subcommand)]
enum Command {
    /// Train on one fold and write a checkpoint.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 1)]
        fold: usize,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Checkpoint path; the epoch log goes to `<out>.log`.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum)]
        ablate: Option<Ablation>,
    },
    /// Score a checkpoint on a fold's test links.
    Evaluate {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 1)]
        fold: usize,
        /// Overrides the checkpoint's CSLS neighbourhood size.
        #[arg(long, conflicts_with = "no_csls")]
        csls_k: Option<usize>,
        /// Rank by plain cosine similarity.
        #[arg(long)]
        no_csls: bool,
    },
    /// Train and test on several folds and report per-fold and mean metrics.
    Folds {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5")]
        folds: Vec<usize>,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Report file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sweep the contrastive weight on one fold.
    Grid {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 1)]
        fold: usize,
        #[arg(long, value_delimiter = ',', default_value = "0.1,1,10,100,300,1000")]
        lambdas: Vec<f64>,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Table file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a synthetic hierarchical pair with five folds in OpenEA layout.
    GenSynthetic {
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 3)]
        branching: usize,
        #[arg(long, default_value_t = 0.05)]
        noise: f64,
        #[arg(long, default_value_t = 0.1)]
        dropout: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write fused Euclidean embeddings of both graphs.
    Export {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 1)]
        fold: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the built-in numerical checks.
    Selftest {
        #[arg(long, hide = true)]
        inject_fault: bool,
    },
}

fn load_config(path: Option<&Path>) -> Result<TrainConfig> {
    match path {
        Some(p) => Ok(TrainConfig::load(p)?),
        None => Ok(TrainConfig::default()),
    }
}

fn write_out(path: Option<&Path>, text: &str) -> Result<()> {
    print!("{text}");
    if let Some(p) = path {
        fs::write(p, text).with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(())
}

fn run(cmd: Command) -> Result<bool> {
    match cmd {
        Command::Train {
            data,
            fold,
            config,
            out,
            ablate,
        } => {
            let mut cfg = load_config(config.as_deref())?;
            match ablate {
                Some(Ablation::Inter) => cfg.use_inter = false,
                Some(Ablation::Intra) => cfg.use_intra = false,
                Some(Ablation::Both) => {
                    cfg.use_inter = false;
                    cfg.use_intra = false;
                }
                None => {}
            }
            let pair = load_openea(&data, fold)?;
            let log_path = PathBuf::from(format!("{}.log", out.display()));
            let mut log = fs::File::create(&log_path).with_context(|| format!("creating {}", log_path.display()))?;
            let mut io_err = None;
            let outcome = train_with::<f64>(&pair, &cfg, &mut |e| {
                println!("{e}");
                if let Err(err) = writeln!(log, "{e}") {
                    io_err.get_or_insert(err);
                }
            })?;
            if let Some(e) = io_err {
                return Err(e).with_context(|| format!("writing {}", log_path.display()));
            }
            println!("parameters {}", outcome.parameter_count);
            println!("best epoch {} val_mrr {:.6}", outcome.best.epoch, outcome.best.val_mrr);
            outcome.best.save(&out)?;
            Ok(true)
        }
        Command::Evaluate {
            ckpt,
            data,
            fold,
            csls_k,
            no_csls,
        } => {
            let ck = CheckpointF64::load(&ckpt)?;
            let pair = load_openea(&data, fold)?;
            let k = if no_csls { None } else { Some(csls_k.unwrap_or(ck.config.csls_k)) };
            let report = evaluate_params(&pair, &ck.params, &ck.config, k)?;
            print!("{}", report.table());
            print!("{}", report.metric_lines());
            Ok(true)
        }
        Command::Folds {
            data,
            folds,
            config,
            out,
        } => {
            let cfg = load_config(config.as_deref())?;
            let report = run_folds::<f64>(&data, &cfg, &folds)?;
            write_out(out.as_deref(), &report.render())?;
            Ok(true)
        }
        Command::Grid {
            data,
            fold,
            lambdas,
            config,
            out,
        } => {
            let cfg = load_config(config.as_deref())?;
            let pair = load_openea(&data, fold)?;
            let grid = grid_lambda::<f64>(&pair, &cfg, &lambdas)?;
            write_out(out.as_deref(), &grid.table())?;
            Ok(true)
        }
        Command::GenSynthetic {
            n,
            branching,
            noise,
            dropout,
            seed,
            out,
        } => {
            let cfg = SyntheticConfig::new(n, branching, noise, seed).with_dropout(dropout);
            let pair = generate_synthetic_pair(&cfg)?;
            let mut links = pair.all_links();
            links.sort_unstable();
            let mut folds = vec![pair.split()];
            folds.extend((2..=5).map(|f| split_links(&links, seed, f)));
            write_openea(&pair, &out, &folds)?;
            println!(
                "wrote {} + {} triples, {} links, 5 folds to {}",
                pair.kg1.triples().len(),
                pair.kg2.triples().len(),
                links.len(),
                out.display()
            );
            Ok(true)
        }
        Command::Export { ckpt, data, fold, out } => {
            let ck = CheckpointF64::load(&ckpt)?;
            let pair = load_openea(&data, fold)?;
            let emb = encode_euclid(&PairGraphs::new(&pair), &ck.params)?;
            export_embeddings(&emb, [&pair.kg1, &pair.kg2], &out)?;
            Ok(true)
        }
        Command::Selftest { inject_fault } => {
            let results = run_selftest(SelfTestOptions { inject_fault });
            for r in &results {
                println!("{r}");
            }
            Ok(results.iter().all(|r| r.passed))
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

