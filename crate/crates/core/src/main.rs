use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use peer_contagion::config::RunConfig;
use peer_contagion::diagnostics::{self, LlnTarget};
use peer_contagion::estimators::{self, EstimateReport, EstimatorKind};
use peer_contagion::experiment::{self, Design, GraphSource, PreparedGraph, Protocol};
use peer_contagion::graph::{self, Graph};
use peer_contagion::linalg::EigenOptions;
use peer_contagion::relerm::{self, EvalSchedule};
use peer_contagion::rng;
use peer_contagion::simulate::{read_node_list, Covariates, Dataset};
use peer_contagion::{Error, Result};

const GRAPH_FILE: &str = "graph.edgelist";
const COVARIATES_FILE: &str = "covariates.csv";
const DATASET_FILE: &str = "dataset.csv";
const EVALUATION_FILE: &str = "evaluation.txt";
const PARAMS_FILE: &str = "params.txt";

#[derive(Parser, Debug)]
#[command(name = "peer-contagion", version, about = "Peer contagion estimation under latent homophily")]
struct Cli {
    /// TOML configuration file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory, created when missing.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Draw a block-model graph and its confounder.
    Generate(GraphArgs),
    /// Simulate treatments and outcomes on a graph.
    Simulate(SimulateArgs),
    /// Fit embeddings and the outcome head to a dataset.
    Train(TrainArgs),
    /// Evaluate all estimators on a dataset and saved parameters.
    Estimate(EstimateArgs),
    /// Run the full bias grid.
    Experiment(ExperimentArgs),
    /// Variance of the oracle estimand as the graph grows.
    LlnCheck(LlnArgs),
}

#[derive(Args, Debug, Default)]
struct GraphArgs {
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    blocks: Option<usize>,
    #[arg(long)]
    p_in: Option<f64>,
    #[arg(long)]
    p_out: Option<f64>,
}

#[derive(Args, Debug)]
struct Inputs {
    /// Edge list; defaults to the one in the output directory.
    #[arg(long)]
    graph: Option<PathBuf>,
    /// Dataset CSV; defaults to the one in the output directory.
    #[arg(long)]
    data: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long)]
    graph: Option<PathBuf>,
    #[arg(long)]
    covariates: Option<PathBuf>,
    #[arg(long)]
    beta1: Option<f64>,
    #[arg(long, value_enum)]
    design: Option<DesignArg>,
    /// Fraction of confounder values resampled before simulating.
    #[arg(long)]
    resample_rate: Option<f64>,
}

#[derive(Args, Debug, Default)]
struct TrainFlags {
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    q: Option<f64>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    inputs: Inputs,
    #[command(flatten)]
    train: TrainFlags,
    /// Record the loss on held-out samples this often.
    #[arg(long)]
    eval_every: Option<usize>,
}

#[derive(Args, Debug)]
struct EstimateArgs {
    #[command(flatten)]
    inputs: Inputs,
    /// Saved parameters; defaults to the file written by `train`.
    #[arg(long)]
    params: Option<PathBuf>,
    /// Restrict evaluation to the node ids listed one per line.
    #[arg(long)]
    nodes: Option<PathBuf>,
    #[arg(long)]
    communities: Option<usize>,
}

#[derive(Args, Debug)]
struct ExperimentArgs {
    #[command(flatten)]
    graph: GraphArgs,
    #[command(flatten)]
    train: TrainFlags,
    #[arg(long)]
    n_seeds: Option<usize>,
    #[arg(long, value_enum)]
    protocol: Option<ProtocolArg>,
    #[arg(long, value_enum)]
    design: Option<DesignArg>,
    /// Print the resolved configuration and exit.
    #[arg(long)]
    dry_run: bool,
}

#[derive(Args, Debug)]
struct LlnArgs {
    /// Comma-separated graph sizes.
    #[arg(long, value_delimiter = ',')]
    n_grid: Option<Vec<usize>>,
    #[arg(long)]
    replicates: Option<usize>,
    #[arg(long, value_enum)]
    target: Option<TargetArg>,
    #[arg(long)]
    variance_bound: Option<f64>,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum DesignArg {
    Continuous,
    Vaccination,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum ProtocolArg {
    FixedData,
    Replicate,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum TargetArg {
    Psi0,
    Psi1,
    Contrast,
}

impl From<DesignArg> for Design {
    fn from(d: DesignArg) -> Self {
        match d {
            DesignArg::Continuous => Design::Continuous,
            DesignArg::Vaccination => Design::Vaccination,
        }
    }
}

fn set<T>(slot: &mut T, flag: Option<T>) {
    if let Some(v) = flag {
        *slot = v;
    }
}

impl GraphArgs {
    fn apply(&self, source: &mut GraphSource) -> Result<()> {
        if self.n.is_none() && self.blocks.is_none() && self.p_in.is_none() && self.p_out.is_none() {
            return Ok(());
        }
        match source {
            GraphSource::Sbm { n, blocks, p_in, p_out } => {
                set(n, self.n);
                set(blocks, self.blocks);
                set(p_in, self.p_in);
                set(p_out, self.p_out);
                Ok(())
            }
            GraphSource::EdgeList { .. } => Err(Error::Config("block-model flags given but the graph source is an edge list".into())),
        }
    }
}

impl TrainFlags {
    fn apply(&self, cfg: &mut RunConfig) {
        let t = &mut cfg.experiment.train;
        set(&mut t.steps, self.steps);
        set(&mut t.dim, self.dim);
        set(&mut t.learning_rate, self.learning_rate);
        set(&mut t.q, self.q);
    }
}

fn resolve(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    set(&mut cfg.seed, cli.seed);
    set(&mut cfg.output_dir, cli.out.clone());
    let e = &mut cfg.experiment;
    match &cli.command {
        Command::Generate(a) => a.apply(&mut e.graph)?,
        Command::Simulate(a) => {
            if let Some(d) = a.design {
                e.design = d.into();
            }
            if let Some(b) = a.beta1 {
                e.beta1_grid = vec![b];
            }
            if let Some(r) = a.resample_rate {
                e.confounders.truncate(1);
                e.confounders[0].resample_rate = r;
            }
        }
        Command::Train(a) => a.train.apply(&mut cfg),
        Command::Estimate(a) => set(&mut e.communities, a.communities.map(Some)),
        Command::Experiment(a) => {
            a.graph.apply(&mut e.graph)?;
            set(&mut e.n_seeds, a.n_seeds);
            if let Some(p) = a.protocol {
                e.protocol = match p {
                    ProtocolArg::FixedData => Protocol::FixedData,
                    ProtocolArg::Replicate => Protocol::Replicate,
                };
            }
            if let Some(d) = a.design {
                e.design = d.into();
            }
            a.train.apply(&mut cfg);
        }
        Command::LlnCheck(a) => {
            let l = &mut cfg.lln;
            set(&mut l.n_grid, a.n_grid.clone());
            set(&mut l.replicates, a.replicates);
            if let Some(t) = a.target {
                l.target = match t {
                    TargetArg::Psi0 => LlnTarget::Psi0,
                    TargetArg::Psi1 => LlnTarget::Psi1,
                    TargetArg::Contrast => LlnTarget::Contrast,
                };
            }
            if a.variance_bound.is_some() {
                l.variance_bound = a.variance_bound;
            }
        }
    }
    Ok(cfg)
}

fn prepare_output(cfg: &RunConfig) -> Result<&Path> {
    let dir = cfg.output_dir.as_path();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    cfg.echo(dir)?;
    Ok(dir)
}

fn or_default(path: &Option<PathBuf>, dir: &Path, name: &str) -> PathBuf {
    path.clone().unwrap_or_else(|| dir.join(name))
}

fn load_graph(path: &Path) -> Result<Graph> {
    let loaded = graph::load_edge_list(path)?;
    if loaded.original_ids.iter().enumerate().any(|(i, &id)| id != i as u64) {
        log::warn!("{}: node ids were remapped to 0..{}", path.display(), loaded.graph.n());
    }
    Ok(loaded.graph)
}

fn load_dataset(path: &Path, g: &Graph) -> Result<Dataset> {
    let data = Dataset::read_csv(path)?;
    if data.covariates.len() != g.n() {
        return Err(Error::DimensionMismatch { expected: g.n(), got: data.covariates.len() });
    }
    Ok(data)
}

fn write(path: &Path, body: &str) -> Result<()> {
    std::fs::write(path, body).map_err(|e| Error::io(path, e))
}

fn cmd_generate(cfg: &RunConfig) -> Result<()> {
    if !matches!(cfg.experiment.graph, GraphSource::Sbm { .. }) {
        return Err(Error::Config("generate needs a block-model graph source".into()));
    }
    cfg.experiment.graph.validate()?;
    let dir = prepare_output(cfg)?;
    let (g, cov) = cfg.experiment.graph.build(rng::derive(cfg.seed, rng::GRAPH, 0))?;
    g.write_edge_list(&dir.join(GRAPH_FILE))?;
    cov.write_csv(&dir.join(COVARIATES_FILE))?;
    println!("{}", g.summary());
    Ok(())
}

fn cmd_simulate(cfg: &RunConfig, a: &SimulateArgs) -> Result<()> {
    let e = &cfg.experiment;
    e.validate()?;
    let dir = prepare_output(cfg)?;
    let g = load_graph(&or_default(&a.graph, dir, GRAPH_FILE))?;
    let cov = Covariates::read_csv(&or_default(&a.covariates, dir, COVARIATES_FILE))?;
    let prepared = PreparedGraph::from_parts(g, cov)?;
    let cell = e.cells().into_iter().next().expect("validated grid has a cell");
    let data = experiment::simulate_cell(e, &prepared, &cell, rng::derive(cfg.seed, rng::DATA, 0))?;
    if let Some(nodes) = &data.evaluation {
        let body: String = nodes.iter().map(|i| format!("{i}\n")).collect();
        write(&dir.join(EVALUATION_FILE), &body)?;
    }
    let dataset = Dataset { covariates: data.covariates, treatments: data.treatments, aggregated: data.aggregated, outcomes: data.outcomes };
    dataset.write_csv(&dir.join(DATASET_FILE))?;
    println!("eligible={} truth={}", dataset.aggregated.n_eligible(), data.truth);
    Ok(())
}

fn cmd_train(cfg: &RunConfig, a: &TrainArgs) -> Result<()> {
    let e = &cfg.experiment;
    e.sampler.validate()?;
    e.train.validate()?;
    if a.eval_every == Some(0) {
        return Err(Error::Config("eval_every must be positive".into()));
    }
    let dir = prepare_output(cfg)?;
    let g = load_graph(&or_default(&a.inputs.graph, dir, GRAPH_FILE))?;
    let data = load_dataset(&or_default(&a.inputs.data, dir, DATASET_FILE), &g)?;
    let schedule = a.eval_every.map(|every| EvalSchedule { every, samples: 20 });
    let report = relerm::train_with_report(
        &g,
        &data.aggregated,
        &data.outcomes,
        &e.sampler,
        &e.train,
        rng::derive(cfg.seed, rng::TRAIN, 0),
        schedule,
    )?;
    relerm::save_params(&report.params, &dir.join(PARAMS_FILE))?;
    if !report.eval_losses.is_empty() {
        let mut body = String::from("step,loss\n");
        for (step, loss) in &report.eval_losses {
            body.push_str(&format!("{step},{loss}\n"));
        }
        write(&dir.join("train_loss.csv"), &body)?;
    }
    println!("w_v={}", report.params.head.w_v);
    Ok(())
}

fn cmd_estimate(cfg: &RunConfig, a: &EstimateArgs) -> Result<()> {
    let e = &cfg.experiment;
    let dir = prepare_output(cfg)?;
    let g = load_graph(&or_default(&a.inputs.graph, dir, GRAPH_FILE))?;
    let data = load_dataset(&or_default(&a.inputs.data, dir, DATASET_FILE), &g)?;
    let params = relerm::load_params(&or_default(&a.params, dir, PARAMS_FILE), Some(g.n()))?;
    let nodes = a.nodes.as_deref().map(read_node_list).transpose()?;
    if let Some(&bad) = nodes.as_ref().and_then(|ns| ns.iter().find(|&&i| i >= g.n())) {
        return Err(Error::NodeOutOfRange { node: bad, n: g.n() });
    }
    let node_set = nodes.as_deref();
    let agg = e.simulation.aggregator;
    let mut reports: Vec<EstimateReport> = Vec::new();
    for &kind in &e.estimators {
        reports.push(match kind {
            EstimatorKind::Unadjusted => estimators::unadjusted_ols(&data.aggregated, &data.outcomes, node_set)?,
            EstimatorKind::Parametric => {
                let k = e.communities_for(g.n());
                estimators::parametric_baseline(&g, &data.aggregated, &data.outcomes, k, node_set, &EigenOptions::default())?
            }
            EstimatorKind::Embedding => estimators::embedding_estimate(&g, &params, agg, node_set, cfg.seed)?,
        });
    }
    let mut body = format!("{}\n", EstimateReport::CSV_HEADER);
    for r in &reports {
        body.push_str(&r.csv_row("observed", None));
        body.push('\n');
        println!("{}: {}", r.estimator, r.t_star_contrast);
    }
    write(&dir.join("estimates.csv"), &body)
}

/// Exit code 0 when every cell completed, 2 otherwise.
fn cmd_experiment(cfg: &RunConfig, dry_run: bool) -> Result<ExitCode> {
    cfg.experiment.validate()?;
    if dry_run {
        print!("{}", cfg.to_toml()?);
        return Ok(ExitCode::SUCCESS);
    }
    let dir = prepare_output(cfg)?;
    let outcome = diagnostics::run_experiment(&cfg.experiment, cfg.seed)?;
    outcome.write(dir)?;
    print!("{}", outcome.markdown());
    if outcome.all_complete() {
        Ok(ExitCode::SUCCESS)
    } else {
        for c in &outcome.cells {
            for (kind, r) in &c.results {
                if let Err(msg) = r {
                    eprintln!("{} / {kind}: {msg}", c.cell.confounder.label);
                }
            }
        }
        Ok(ExitCode::from(2))
    }
}

fn cmd_lln(cfg: &RunConfig) -> Result<()> {
    cfg.lln.validate()?;
    let dir = prepare_output(cfg)?;
    let res = diagnostics::lln_study(&cfg.lln, cfg.seed)?;
    write(&dir.join("lln.csv"), &res.to_csv())?;
    print!("{}", res.to_csv());
    match res.fitted_log_slope {
        Some(s) => println!("log-log slope: {s:.3}"),
        None => println!("log-log slope: NA"),
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<ExitCode> {
    let cfg = resolve(cli)?;
    match &cli.command {
        Command::Generate(_) => cmd_generate(&cfg)?,
        Command::Simulate(a) => cmd_simulate(&cfg, a)?,
        Command::Train(a) => cmd_train(&cfg, a)?,
        Command::Estimate(a) => cmd_estimate(&cfg, a)?,
        Command::Experiment(a) => return cmd_experiment(&cfg, a.dry_run),
        Command::LlnCheck(_) => cmd_lln(&cfg)?,
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}
