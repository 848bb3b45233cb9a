//! Command-line entry point: training, evaluation, feature synthesis,
//! and synthetic dataset generation.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use ugn::checkpoint::Checkpoint;
use ugn::config::RunConfig;
use ugn::data::{
    generate_sbm, generate_translation_pairs, load_edge_list, save_edge_list, save_labels,
    save_matrix_pairs,
};
use ugn::supernode::synthesize_features;
use ugn::train::{evaluate_checkpoint, train};
use ugn::UgnError;

#[derive(Parser)]
#[command(name = "ugn", about = "Graph learning toolkit", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model from a run configuration file.
    Train(TrainArgs),
    /// Evaluate a saved checkpoint.
    Eval(EvalArgs),
    /// Synthesize node features.
    Features {
        #[command(subcommand)]
        kind: FeaturesCommand,
    },
    /// Generate synthetic datasets.
    Gen {
        #[command(subcommand)]
        kind: GenCommand,
    },
}

#[derive(Args)]
struct TrainArgs {
    /// Path to a key=value run configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Override the seed from the config file.
    #[arg(long)]
    seed: Option<u64>,
    /// Additional key=value overrides, repeatable.
    #[arg(long = "set")]
    set: Vec<String>,
    /// Directory for run artifacts (effective config, checkpoint, logs).
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Checkpoint produced by `ugn train`.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset to evaluate on; defaults to the checkpoint's own dataset.
    #[arg(long)]
    data: Option<PathBuf>,
}

#[derive(Subcommand)]
enum FeaturesCommand {
    /// Supernode connection counts plus random padding.
    Supernode {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        supernodes: usize,
        #[arg(long)]
        rand_dim: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum GenCommand {
    /// Planted-partition graph with community labels.
    Sbm {
        #[arg(long)]
        nodes: usize,
        #[arg(long)]
        communities: usize,
        #[arg(long)]
        p_in: f64,
        #[arg(long)]
        p_out: f64,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        labels: Option<PathBuf>,
    },
    /// Source/target connectivity pairs from a shared tanh family.
    Translate {
        #[arg(long)]
        nodes: usize,
        #[arg(long)]
        count: usize,
        #[arg(long, default_value_t = 0.9)]
        alpha: f64,
        #[arg(long, default_value_t = 0.1)]
        beta: f64,
        #[arg(long, default_value_t = 0.05)]
        noise: f64,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn exit_code_for(err: &UgnError) -> u8 {
    match err {
        UgnError::Config(_)
        | UgnError::InvalidArgument(_)
        | UgnError::Dimension(_)
        | UgnError::ShapeMismatch { .. }
        | UgnError::Parse { .. } => 1,
        _ => 2,
    }
}

fn run_train(args: TrainArgs) -> ugn::Result<()> {
    let mut overrides = args.set.clone();
    if let Some(seed) = args.seed {
        overrides.push(format!("seed={seed}"));
    }
    let cfg = RunConfig::load(&args.config, &overrides)?;
    let outcome = train(&cfg)?;
    if let Some(dir) = &args.out_dir {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("config.txt"), cfg.canonical_text())?;
        outcome.checkpoint.save(dir.join("checkpoint.txt"))?;
        fs::write(dir.join("metrics.txt"), outcome.metrics.to_text())?;
        let mut epochs = String::new();
        for log in &outcome.epoch_logs {
            epochs.push_str(&log.to_text());
            epochs.push('\n');
        }
        fs::write(dir.join("epochs.txt"), epochs)?;
    }
    print!("{}", outcome.metrics.to_text());
    Ok(())
}

fn run_eval(args: EvalArgs) -> ugn::Result<()> {
    let ckpt = Checkpoint::load(&args.checkpoint)?;
    let data = args.data.as_ref().map(|p| p.display().to_string());
    let metrics = evaluate_checkpoint(&ckpt, data.as_deref())?;
    print!("{}", metrics.to_text());
    Ok(())
}

fn run_features(cmd: FeaturesCommand) -> ugn::Result<()> {
    match cmd {
        FeaturesCommand::Supernode {
            graph,
            supernodes,
            rand_dim,
            seed,
            out,
        } => {
            let data = load_edge_list(&graph)?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let features = synthesize_features(&data.graph, supernodes, rand_dim, &mut rng)?;
            let t = features.into_tensor();
            let [rows, cols] = [t.shape()[0], t.shape()[1]];
            let mut text = String::new();
            for i in 0..rows {
                for j in 0..cols {
                    if j > 0 {
                        text.push('\t');
                    }
                    let _ = write!(text, "{}", t.get2(i, j));
                }
                text.push('\n');
            }
            fs::write(&out, text)?;
            println!("rows\t{rows}");
            println!("cols\t{cols}");
            Ok(())
        }
    }
}

fn run_gen(cmd: GenCommand) -> ugn::Result<()> {
    match cmd {
        GenCommand::Sbm {
            nodes,
            communities,
            p_in,
            p_out,
            seed,
            out,
            labels,
        } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (g, node_labels) = generate_sbm(nodes, communities, p_in, p_out, &mut rng)?;
            save_edge_list(&out, &g, &HashMap::new())?;
            if let Some(path) = labels {
                save_labels(&path, &node_labels)?;
            }
            println!("nodes\t{}", g.node_count());
            println!("edges\t{}", g.edge_count());
            Ok(())
        }
        GenCommand::Translate {
            nodes,
            count,
            alpha,
            beta,
            noise,
            seed,
            out,
        } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pairs = generate_translation_pairs(nodes, count, alpha, beta, noise, &mut rng)?;
            save_matrix_pairs(&out, &pairs)?;
            println!("pairs\t{}", pairs.len());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(args) => run_train(args),
        Command::Eval(args) => run_eval(args),
        Command::Features { kind } => run_features(kind),
        Command::Gen { kind } => run_gen(kind),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
