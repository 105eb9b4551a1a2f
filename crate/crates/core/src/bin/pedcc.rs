use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use pedcc_ood::commands;
use pedcc_ood::evaluate::default_omega_grid;
use pedcc_ood::loss::LossParams;
use pedcc_ood::trainer::{Activation, NetworkSpec, OodKind, TrainConfig};
use pedcc_ood::{Error, ErrorKind};

#[derive(Parser)]
#[command(name = "pedcc", version, about = "OOD detection with predefined evenly-distributed class centroids")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a centroid frame.
    GenFrame {
        #[arg(long)]
        classes: usize,
        #[arg(long)]
        dim: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a synthetic blob task (train.csv, id_test.csv, ood.csv).
    MakeData {
        #[arg(long)]
        classes: usize,
        #[arg(long, default_value_t = 2)]
        input_dim: usize,
        #[arg(long, default_value_t = 200)]
        per_class: usize,
        #[arg(long, default_value = "uniform-box")]
        ood_kind: OodKind,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Train a feature extractor against a frame.
    Train(TrainArgs),
    /// Map input rows to unit embeddings with a trained model.
    Embed {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Decompose embeddings into score rows.
    Score {
        #[arg(long)]
        frame: PathBuf,
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long, default_value_t = 0.0)]
        omega: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Choose omega on one in-distribution / OOD score pair.
    TuneOmega {
        #[arg(long)]
        id: PathBuf,
        #[arg(long)]
        ood: PathBuf,
        /// Comma-separated grid; defaults to 0 plus 25 log-spaced points in [1e-3, 1e3].
        #[arg(long, value_delimiter = ',')]
        grid: Option<Vec<f64>>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Report AUROC and TNR at 95% TPR from two score files.
    Eval(EvalArgs),
    /// Ablation rows for the pure and combined scores.
    Ablate(EvalArgs),
    /// Run the full pipeline from a config file.
    Pipeline {
        /// `key = value` config; the built-in synthetic run when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Permit the tuning OOD set among the evaluation sets.
        #[arg(long)]
        allow_overlap: bool,
        /// Print the effective config and exit.
        #[arg(long)]
        print_config: bool,
    },
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    frame: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    history: Option<PathBuf>,
    /// Comma-separated hidden layer widths.
    #[arg(long, value_delimiter = ',', default_value = "16,16")]
    hidden: Vec<usize>,
    #[arg(long, default_value = "relu")]
    activation: Activation,
    #[arg(long, default_value_t = 0)]
    net_seed: u64,
    #[arg(long, default_value_t = 50)]
    epochs: usize,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 0.05)]
    lr: f64,
    #[arg(long, default_value_t = 0.9)]
    momentum: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 7.5)]
    scale: f64,
    #[arg(long, default_value_t = 0.35)]
    margin: f64,
    #[arg(long, default_value_t = 1.0)]
    mse_weight: f64,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    id: PathBuf,
    #[arg(long)]
    ood: PathBuf,
    /// Defaults to the omega recorded in the in-distribution score file.
    #[arg(long)]
    omega: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

fn print_rows(report: &pedcc_ood::Report) {
    println!("{:<22} {:>8} {:>8} {:>10}", "method", "auroc", "tnr95", "omega");
    for r in &report.rows {
        let omega = r.omega.map(|w| format!("{w:.4e}")).unwrap_or_default();
        println!("{:<22} {:>8.4} {:>8.4} {:>10}", r.method, r.auroc, r.tnr_at_tpr95, omega);
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenFrame { classes, dim, seed, out } => {
            commands::cmd_gen_frame(classes, dim, seed, &out)?;
            println!("wrote {}", out.display());
        }
        Command::MakeData {
            classes,
            input_dim,
            per_class,
            ood_kind,
            seed,
            out_dir,
        } => {
            for p in commands::cmd_make_data(classes, input_dim, per_class, ood_kind, seed, &out_dir)? {
                println!("wrote {}", p.display());
            }
        }
        Command::Train(a) => {
            let frame = pedcc_ood::io::read_frame(&a.frame)?.value;
            let data_dim = pedcc_ood::io::read_embeddings(&a.data)?.value.dim();
            let network = NetworkSpec {
                input_dim: data_dim,
                hidden_dims: a.hidden,
                feature_dim: frame.dim(),
                activation: a.activation,
                seed: a.net_seed,
            };
            let cfg = TrainConfig {
                epochs: a.epochs,
                batch_size: a.batch_size,
                learning_rate: a.lr,
                momentum: a.momentum,
                seed: a.seed,
                loss: LossParams::new(a.scale, a.margin, a.mse_weight)?,
            };
            let outcome = commands::cmd_train(&a.frame, &a.data, &network, &cfg, &a.out, a.history.as_deref())?;
            if let (Some(first), Some(last)) = (outcome.history.first(), outcome.history.last()) {
                println!("loss {first:.6} -> {last:.6} over {} epochs", outcome.history.len());
            }
            println!("wrote {}", a.out.display());
        }
        Command::Embed { model, input, out } => {
            let n = commands::cmd_embed(&model, &input, &out)?;
            println!("wrote {n} rows to {}", out.display());
        }
        Command::Score {
            frame,
            embeddings,
            omega,
            out,
        } => {
            let t = commands::cmd_score(&frame, &embeddings, omega, &out)?;
            println!("wrote {} rows to {}", t.rows.len(), out.display());
        }
        Command::TuneOmega { id, ood, grid, out } => {
            let grid = grid.unwrap_or_else(default_omega_grid);
            let t = commands::cmd_tune_omega(&id, &ood, &grid, out.as_deref())?;
            println!("omega = {:e}  tnr_at_tpr95 = {:.6}", t.omega, t.row.tnr_at_tpr95);
        }
        Command::Eval(a) => print_rows(&commands::cmd_eval(&a.id, &a.ood, a.omega, &a.out)?),
        Command::Ablate(a) => print_rows(&commands::cmd_ablate(&a.id, &a.ood, a.omega, &a.out)?),
        Command::Pipeline {
            config,
            out_dir,
            allow_overlap,
            print_config,
        } => {
            if print_config {
                let cfg = match &config {
                    Some(p) => pedcc_ood::pipeline::PipelineConfig::load(p)?,
                    None => pedcc_ood::pipeline::PipelineConfig::default(),
                };
                print!("{}", cfg.render());
                return Ok(());
            }
            let s = commands::cmd_run_pipeline(config.as_deref(), allow_overlap, out_dir.as_deref())
                .context("pipeline failed")?;
            println!("config {}", s.config_hash);
            println!("train accuracy {:.4}", s.train_accuracy);
            println!("omega {:e}", s.tuned.omega);
            for (name, report) in &s.reports {
                println!("\n[{name}]");
                print_rows(report);
            }
        }
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let kind = err
        .chain()
        .find_map(|e| e.downcast_ref::<Error>())
        .map(Error::kind);
    match kind {
        Some(ErrorKind::Numerical) => 3,
        Some(ErrorKind::Io) => 4,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // library errors already render their sources
            let mut parts = Vec::new();
            for cause in e.chain() {
                parts.push(cause.to_string());
                if cause.downcast_ref::<Error>().is_some() {
                    break;
                }
            }
            eprintln!("error: {}", parts.join(": "));
            ExitCode::from(exit_code(&e))
        }
    }
}
