mod args;

use std::path::Path;
use std::process::ExitCode;

use clap::Parser;
use gthna::config::{DataConfig, RunConfig};
use gthna::graph::{generate_sbm, inject_anomalies, load_graph, write_graph, InjectionSpec, SbmSpec};
use gthna::metrics::auc;
use gthna::model::{Model, PreparedGraph};
use gthna::report::{read_scores, report_similarity, write_similarity, ScoreReport, CHECKPOINT_FILE};
use gthna::sweep::{ablate, ablation_means, lambda_grid, sweep, write_csv};
use gthna::train::train;
use gthna::{Error, Result};
use gthna_autodiff::Checkpoint;

use args::{Cli, Command, GraphFiles, RunArgs};

const EXIT_CONFIG: u8 = 2;
const EXIT_DATA: u8 = 3;
const EXIT_DIVERGENCE: u8 = 4;

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Divergence { .. } => EXIT_DIVERGENCE,
        Error::Config(_) | Error::UnsupportedReport(_) => EXIT_CONFIG,
        _ => EXIT_DATA,
    }
}

fn resolve(run: &RunArgs) -> Result<RunConfig> {
    let mut cfg = match &run.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let (Some(nodes), Some(edges)) = (&run.nodes, &run.edges) {
        cfg.data = Some(DataConfig {
            nodes: nodes.clone(),
            edges: edges.clone(),
            labels: run.labels.clone(),
        });
        cfg.synthetic = None;
    }
    if run.output_dir.is_some() {
        cfg.output_dir.clone_from(&run.output_dir);
    }
    if run.cache_dir.is_some() {
        cfg.cache_dir.clone_from(&run.cache_dir);
    }

    let m = &mut cfg.model;
    macro_rules! set {
        ($dst:expr, $src:expr) => {
            if let Some(v) = $src {
                $dst = v;
            }
        };
    }
    set!(m.k, run.k);
    set!(m.d_h, run.d_h);
    set!(m.heads, run.heads);
    set!(m.layers, run.layers);
    set!(m.ratio, run.ratio);
    set!(m.beta, run.beta);
    set!(m.lambda_s, run.lambda_s);
    set!(m.lambda_n, run.lambda_n);
    set!(m.lambda_m, run.lambda_m);
    if run.memory_items.is_some() {
        m.memory_items = run.memory_items;
    }
    m.no_memory |= run.no_memory;
    m.no_structure_extractor |= run.no_structure_extractor;

    let t = &mut cfg.train;
    set!(t.lr, run.lr);
    set!(t.epochs, run.epochs);
    set!(t.seed, run.seed);
    if run.score_every.is_some() {
        t.score_every = run.score_every;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn prepare(cfg: &RunConfig) -> Result<PreparedGraph> {
    let g = cfg.build_graph()?;
    log::info!("graph: {} nodes, {} edges, {} features", g.num_nodes(), g.num_edges(), g.feature_dim());
    PreparedGraph::new(g, &cfg.model, cfg.cache_dir.as_deref())
}

fn print_auc(auc: Option<f64>) {
    match auc {
        Some(a) => println!("auc: {a:.6}"),
        None => println!("auc: undefined (no usable labels)"),
    }
}

fn cmd_train(run: &RunArgs) -> Result<()> {
    let cfg = resolve(run)?;
    let dir = cfg
        .output_dir
        .clone()
        .ok_or_else(|| Error::Config("train needs an output directory (--output-dir or output_dir)".into()))?;
    let g = prepare(&cfg)?;
    let out = match train(&cfg.model, &cfg.train, &g) {
        Ok(out) => out,
        Err(Error::Divergence { epoch, last_finite, checkpoint }) => {
            if let Some(c) = &checkpoint {
                std::fs::create_dir_all(&dir).map_err(|e| Error::Config(format!("{}: {e}", dir.display())))?;
                let path = dir.join(CHECKPOINT_FILE);
                c.save(&path)?;
                eprintln!("saved last finite checkpoint to {}", path.display());
            }
            return Err(Error::Divergence { epoch, last_finite, checkpoint });
        }
        Err(e) => return Err(e),
    };
    let report = ScoreReport::from_outcome(&out, g.graph.labels(), cfg.clone());
    report.write_dir(&dir, Some(&out.model))?;
    println!("final loss: {:.6}", out.final_loss);
    print_auc(out.auc);
    println!("wrote {}", dir.display());
    Ok(())
}

fn load_model(path: &Path) -> Result<Model> {
    Model::from_checkpoint(&Checkpoint::load(path)?)
}

/// The checkpoint's model settings win over the config for `score` and
/// `report-similarity`; the config only supplies the graph.
fn prepare_for(model: &Model, run: &RunArgs) -> Result<(RunConfig, PreparedGraph)> {
    let mut cfg = resolve(run)?;
    cfg.model = model.cfg;
    let g = prepare(&cfg)?;
    Ok((cfg, g))
}

fn cmd_score(run: &RunArgs, checkpoint: &Path, output: &Path) -> Result<()> {
    let model = load_model(checkpoint)?;
    let (cfg, g) = prepare_for(&model, run)?;
    let (losses, _) = model.evaluate(&g)?;
    let report = ScoreReport::new(&losses, &model.cfg.weights(), g.graph.labels(), cfg);
    report.write_scores(output)?;
    print_auc(report.auc);
    Ok(())
}

fn cmd_sweep(run: &RunArgs, s: &[f64], n: &[f64], m: &[f64], output: &Path) -> Result<()> {
    let cfg = resolve(run)?;
    let g = prepare(&cfg)?;
    let cells = sweep(&cfg.model, &cfg.train, &g, &lambda_grid(s, n, m))?;
    for c in &cells {
        match &c.error {
            None => println!("lambda_s={} lambda_n={} lambda_m={} auc={:.6}", c.lambda_s, c.lambda_n, c.lambda_m, c.auc),
            Some(e) => println!("lambda_s={} lambda_n={} lambda_m={} failed: {e}", c.lambda_s, c.lambda_n, c.lambda_m),
        }
    }
    write_csv(&cells, output)
}

fn cmd_ablate(run: &RunArgs, seeds: &[u64], output: &Path) -> Result<()> {
    if seeds.is_empty() {
        return Err(Error::Config("no seeds given".into()));
    }
    let cfg = resolve(run)?;
    let g = prepare(&cfg)?;
    let rows = ablate(&cfg.model, &cfg.train, &g, seeds);
    for (variant, mean) in ablation_means(&rows) {
        println!("{:<24} mean auc {mean:.6}", variant.name());
    }
    write_csv(&rows, output)
}

fn write_triple(g: &gthna::graph::Graph, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Config(format!("{}: {e}", dir.display())))?;
    let labels = dir.join("labels.csv");
    write_graph(g, &dir.join("nodes.csv"), &dir.join("edges.csv"), Some(&labels))?;
    println!("wrote {} nodes, {} edges to {}", g.num_nodes(), g.num_edges(), dir.display());
    Ok(())
}

fn cmd_inject(input: &GraphFiles, spec: InjectionSpec, out_dir: &Path) -> Result<()> {
    let (g, _) = load_graph(&input.nodes, &input.edges, input.labels.as_deref())?;
    let g = inject_anomalies(&g, &spec)?;
    write_triple(&g, out_dir)
}

fn cmd_report_similarity(run: &RunArgs, checkpoint: &Path, output: &Path) -> Result<()> {
    let model = load_model(checkpoint)?;
    let (_, g) = prepare_for(&model, run)?;
    let rows = report_similarity(&model, &g)?;
    write_similarity(&rows, output)?;
    let mean = |want: u8| {
        let v: Vec<f64> = rows.iter().filter(|r| r.label == Some(want)).map(|r| r.max_cosine).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    };
    if let (Some(normal), Some(anomalous)) = (mean(0), mean(1)) {
        println!("mean max cosine: normal {normal:.4}, anomalous {anomalous:.4}");
    }
    Ok(())
}

fn cmd_eval_auc(scores: &Path, labels: Option<&Path>) -> Result<()> {
    let (s, own) = read_scores(scores)?;
    let l = match labels {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::Parse {
                file: path.to_path_buf(),
                line: 0,
                msg: e.to_string(),
            })?;
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .enumerate()
                .map(|(i, l)| match l {
                    "0" => Ok(0),
                    "1" => Ok(1),
                    _ => Err(Error::Parse {
                        file: path.to_path_buf(),
                        line: i + 1,
                        msg: format!("label must be 0 or 1, got `{l}`"),
                    }),
                })
                .collect::<Result<Vec<u8>>>()?
        }
        None => own.ok_or_else(|| Error::UndefinedMetric(format!("{} has no label column", scores.display())))?,
    };
    println!("{:.6}", auc(&s, &l)?);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(run) => cmd_train(&run),
        Command::Score { run, checkpoint, output } => cmd_score(&run, &checkpoint, &output),
        Command::Sweep {
            run,
            grid_lambda_s,
            grid_lambda_n,
            grid_lambda_m,
            output,
        } => cmd_sweep(&run, &grid_lambda_s, &grid_lambda_n, &grid_lambda_m, &output),
        Command::Ablate { run, seeds, output } => cmd_ablate(&run, &seeds, &output),
        Command::Inject {
            input,
            clique_count,
            clique_size,
            candidates,
            seed,
            out_dir,
        } => {
            let spec = InjectionSpec {
                clique_count,
                clique_size,
                attribute_candidates: candidates,
                seed,
            };
            cmd_inject(&input, spec, &out_dir)
        }
        Command::GenSbm {
            blocks,
            per_block,
            p_in,
            p_out,
            d,
            seed,
            mean_scale,
            feature_std,
            out_dir,
        } => {
            let spec = SbmSpec {
                mean_scale,
                feature_std,
                ..SbmSpec::new(blocks, per_block, p_in, p_out, d, seed)
            };
            write_triple(&generate_sbm(&spec)?, &out_dir)
        }
        Command::ReportSimilarity { run, checkpoint, output } => cmd_report_similarity(&run, &checkpoint, &output),
        Command::EvalAuc { scores, labels } => cmd_eval_auc(&scores, labels.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
