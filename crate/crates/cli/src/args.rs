use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "gthna", version, about = "Graph anomaly detection with memory-guided reconstruction")]
pub struct Cli {
    /// Log more (repeat for debug output).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model and write scores, metrics, loss curve and checkpoint.
    Train(RunArgs),
    /// Score a graph with a saved checkpoint.
    Score {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Scores CSV to write.
        #[arg(long)]
        output: PathBuf,
    },
    /// Train one model per point of a loss-weight grid.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_delimiter = ',', default_value = "1.0")]
        grid_lambda_s: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "0.001,0.01,0.1")]
        grid_lambda_n: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "0.001,0.01,0.1")]
        grid_lambda_m: Vec<f64>,
        #[arg(long)]
        output: PathBuf,
    },
    /// Compare the full model against its ablations over several seeds.
    Ablate {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4")]
        seeds: Vec<u64>,
        #[arg(long)]
        output: PathBuf,
    },
    /// Inject clique and attribute anomalies into a graph.
    Inject {
        #[command(flatten)]
        input: GraphFiles,
        #[arg(long)]
        clique_count: usize,
        #[arg(long)]
        clique_size: usize,
        #[arg(long, default_value_t = 50)]
        candidates: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Directory for nodes.csv, edges.csv and labels.csv.
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Generate a stochastic block model graph with Gaussian features.
    GenSbm {
        #[arg(long)]
        blocks: usize,
        #[arg(long)]
        per_block: usize,
        #[arg(long)]
        p_in: f64,
        #[arg(long)]
        p_out: f64,
        #[arg(long)]
        d: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1.0)]
        mean_scale: f64,
        #[arg(long, default_value_t = 0.5)]
        feature_std: f64,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Per-node maximum cosine similarity to the memory items of a checkpoint.
    ReportSimilarity {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// AUC of a scores CSV.
    EvalAuc {
        #[arg(long)]
        scores: PathBuf,
        /// Label file; defaults to the `label` column of the scores file.
        #[arg(long)]
        labels: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct GraphFiles {
    #[arg(long)]
    pub nodes: PathBuf,
    #[arg(long)]
    pub edges: PathBuf,
    #[arg(long)]
    pub labels: Option<PathBuf>,
}

/// A config file plus flag overrides for every field.
#[derive(Debug, Default, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,

    #[arg(long, requires = "edges")]
    pub nodes: Option<PathBuf>,
    #[arg(long, requires = "nodes")]
    pub edges: Option<PathBuf>,
    #[arg(long, requires = "nodes")]
    pub labels: Option<PathBuf>,
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    #[arg(long)]
    pub cache_dir: Option<PathBuf>,

    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub d_h: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub memory_items: Option<usize>,
    #[arg(long)]
    pub ratio: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub lambda_s: Option<f64>,
    #[arg(long)]
    pub lambda_n: Option<f64>,
    #[arg(long)]
    pub lambda_m: Option<f64>,
    #[arg(long)]
    pub no_memory: bool,
    #[arg(long)]
    pub no_structure_extractor: bool,

    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Log AUC every this many epochs.
    #[arg(long)]
    pub score_every: Option<usize>,
}
