mod config;
mod error;
mod manifest;
mod parse;

use clap::{Args, Parser, Subcommand, ValueEnum};
use config::NetworkConfig;
use error::CliError;
use infograph::estimate::{make_estimated_oracle, write_rates_csv, GlmOptions};
use infograph::exactinfo::{cc_directed_information_sets, DEFAULT_EPS};
use infograph::graphquery::c_separation;
use infograph::model::{enumerate_joint, GenerativeModel, ProcessPanel, DEFAULT_STATE_CAP};
use infograph::sim::simulate_glm_network;
use infograph::structure::{
    di_construct, mgm_construct, structure_recovery_bounded, DiBackend, DiOracle, DirectedGraph,
    ExactBackend, Maximality, NodeRecovery,
};
use manifest::Recorder;
use serde_json::json;
use std::collections::BTreeMap;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

#[derive(Parser)]
#[command(
    name = "infograph",
    version,
    about = "Directed information graphs from simulated or recorded processes"
)]
struct Cli {
    /// Worker threads for parallel query evaluation (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a GLM point-process network described by a TOML config.
    Simulate(SimulateArgs),
    /// Infer a graph from a panel (estimated) or a model file (exact).
    Infer(InferArgs),
    /// Answer `csep U | Z | W` on a graph file.
    Query(QueryArgs),
    /// Exact causally conditioned directed information of a model file.
    Exact(ExactArgs),
    /// Render a graph file as Graphviz DOT.
    ExportDot(ExportDotArgs),
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    config: PathBuf,
    /// Seed of every random draw of the run.
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Override the number of bins in the config.
    #[arg(long)]
    n: Option<usize>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Method {
    /// Sequential pruning per node.
    Alg1,
    /// One full-conditioning query per ordered pair.
    Alg2,
    /// Bounded in-degree search over source sets of size K.
    Alg3,
}

#[derive(Args)]
struct InferArgs {
    #[arg(long, value_enum)]
    method: Method,
    /// Binary panel CSV (estimated mode).
    #[arg(long, conflicts_with = "exact")]
    panel: Option<PathBuf>,
    /// Use the exact engine on `--model`.
    #[arg(long, requires = "model")]
    exact: bool,
    #[arg(long)]
    model: Option<PathBuf>,
    /// In-degree bound for alg3.
    #[arg(long)]
    k: Option<usize>,
    /// Edge threshold: normalized rate when estimating (default 0.05), bits
    /// when exact (default 1e-9).
    #[arg(long)]
    threshold: Option<f64>,
    /// Relative maximality band of alg3 when estimating.
    #[arg(long, default_value_t = 0.05)]
    delta: f64,
    /// History length in bins.
    #[arg(long, default_value_t = 10)]
    window: usize,
    /// Bin width in seconds.
    #[arg(long, default_value_t = 1e-3)]
    bin_width: f64,
    /// Comma-separated process names for a panel.
    #[arg(long)]
    names: Option<String>,
    /// Largest number of trajectories the exact engine enumerates.
    #[arg(long, default_value_t = DEFAULT_STATE_CAP)]
    cap: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct QueryArgs {
    #[arg(long)]
    graph: PathBuf,
    /// For example `csep D | A,C | B`.
    query: String,
}

#[derive(Args)]
struct ExactArgs {
    #[arg(long)]
    model: PathBuf,
    /// For example `X -> Y`, or `X -> Z || W,Y`.
    query: String,
    #[arg(long, default_value_t = DEFAULT_STATE_CAP)]
    cap: usize,
}

#[derive(Args)]
struct ExportDotArgs {
    #[arg(long)]
    graph: PathBuf,
    /// Estimates CSV from `infer`; full-conditioning pairwise values become
    /// edge labels.
    #[arg(long)]
    estimates: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

fn read_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(CliError::io(path))
}

fn simulate(a: SimulateArgs) -> Result<(), CliError> {
    let cfg = NetworkConfig::parse(&read_text(&a.config)?)?.to_sim(a.seed, a.n)?;
    let (panel, models) = simulate_glm_network(&cfg)?;
    std::fs::create_dir_all(&a.out).map_err(CliError::io(&a.out))?;
    let mut rec = Recorder::new("simulate");
    rec.config = Some(a.config.clone());
    rec.seed = Some(a.seed);
    rec.parameters = json!({ "n": cfg.n, "m": cfg.m, "window": cfg.window });
    let mut csv = Vec::new();
    panel.write_csv(&mut csv)?;
    rec.write(a.out.join("panel.csv"), &csv)?;
    let truth = cfg.truth();
    rec.write(a.out.join("truth.json"), truth.to_json()?.as_bytes())?;
    rec.write(a.out.join("truth.dot"), truth.to_dot(None).as_bytes())?;
    let coef = serde_json::to_string_pretty(&models).expect("models serialize");
    rec.write(a.out.join("models.json"), coef.as_bytes())?;
    rec.finish(&a.out.join("manifest.json"))?;
    println!(
        "wrote {} bins of {} processes to {}",
        cfg.n,
        cfg.m,
        a.out.display()
    );
    Ok(())
}

/// Values of full-conditioning single-source queries, keyed by `(source, target)`.
fn pairwise_labels<B: DiBackend>(oracle: &DiOracle<B>) -> BTreeMap<(usize, usize), f64> {
    let m = oracle.m();
    oracle
        .records()
        .into_iter()
        .filter(|r| r.selector.sources.len() == 1 && r.selector.conditioning.len() + 2 == m)
        .map(|r| {
            let k = *r.selector.sources.iter().next().unwrap();
            ((k, r.selector.target), r.value.value)
        })
        .collect()
}

fn run_method<B: DiBackend>(
    oracle: &DiOracle<B>,
    a: &InferArgs,
    threshold: f64,
    maximality: Maximality,
) -> Result<(DirectedGraph, Option<Vec<NodeRecovery>>), CliError> {
    Ok(match a.method {
        Method::Alg1 => (mgm_construct(oracle, threshold)?, None),
        Method::Alg2 => (di_construct(oracle, threshold)?, None),
        Method::Alg3 => {
            let k = a.k.expect("checked before");
            let r = structure_recovery_bounded(oracle, &vec![k; oracle.m()], maximality)?;
            (r.graph, Some(r.nodes))
        }
    })
}

fn join_names(set: &std::collections::BTreeSet<usize>, names: &[String]) -> String {
    set.iter()
        .map(|&i| names[i].as_str())
        .collect::<Vec<_>>()
        .join(";")
}

fn write_graph_outputs<B: DiBackend>(
    rec: &mut Recorder,
    out: &Path,
    oracle: &DiOracle<B>,
    graph: DirectedGraph,
    names: Vec<String>,
    nodes: Option<Vec<NodeRecovery>>,
) -> Result<DirectedGraph, CliError> {
    let graph = graph.with_names(names)?;
    rec.write(out.join("graph.json"), graph.to_json()?.as_bytes())?;
    let mut labels = pairwise_labels(oracle);
    if let Some(nodes) = &nodes {
        // bounded recovery: label k -> i with the best maximal set containing k
        for node in nodes {
            for (set, v) in &node.candidates {
                if node.maximal.contains(set) {
                    for &k in set.intersection(&node.parents) {
                        let e = labels.entry((k, node.node)).or_insert(f64::NEG_INFINITY);
                        *e = e.max(*v);
                    }
                }
            }
        }
    }
    rec.write(
        out.join("graph.dot"),
        graph.to_dot(Some(&labels)).as_bytes(),
    )?;
    if let Some(nodes) = nodes {
        let s = serde_json::to_string_pretty(&nodes).expect("recovery serializes");
        rec.write(out.join("maximal.json"), s.as_bytes())?;
    }
    Ok(graph)
}

fn infer(a: InferArgs) -> Result<(), CliError> {
    if a.method == Method::Alg3 && a.k.is_none() {
        return Err(CliError::Usage("alg3 requires --k".into()));
    }
    std::fs::create_dir_all(&a.out).map_err(CliError::io(&a.out))?;
    let mut rec = Recorder::new("infer");
    let method = a
        .method
        .to_possible_value()
        .expect("named")
        .get_name()
        .to_string();
    let graph = if a.exact {
        let path = a.model.clone().expect("clap requires --model");
        let model = GenerativeModel::from_json(&read_text(&path)?)?;
        rec.inputs.push(path);
        let threshold = a.threshold.unwrap_or(DEFAULT_EPS);
        let oracle = DiOracle::new(ExactBackend::from_model(&model, a.cap)?);
        let (g, nodes) = run_method(&oracle, &a, threshold, Maximality::exact(threshold))?;
        let names = model.names().to_vec();
        let mut csv = String::from("target,sources,conditioning,bits\n");
        for r in oracle.records() {
            let s = &r.selector;
            csv.push_str(&format!(
                "{},{},{},{:.9}\n",
                names[s.target],
                join_names(&s.sources, &names),
                join_names(&s.conditioning, &names),
                r.value.value
            ));
        }
        rec.write(a.out.join("estimates.csv"), csv.as_bytes())?;
        rec.parameters = json!({
            "method": method, "exact": true, "threshold": threshold, "k": a.k,
            "queries": oracle.stats(),
        });
        write_graph_outputs(&mut rec, &a.out, &oracle, g, names, nodes)?
    } else {
        let path = a
            .panel
            .clone()
            .ok_or_else(|| CliError::Usage("give --panel, or --exact with --model".into()))?;
        let file = std::fs::File::open(&path).map_err(CliError::io(&path))?;
        let panel = ProcessPanel::read_csv(BufReader::new(file), None)?;
        rec.inputs.push(path);
        let m = panel.m();
        let names: Vec<String> = match &a.names {
            Some(s) => s.split(',').map(|x| x.trim().to_string()).collect(),
            None => (0..m).map(|i| format!("p{i}")).collect(),
        };
        if names.len() != m {
            return Err(CliError::Usage(format!(
                "{} names for {m} processes",
                names.len()
            )));
        }
        let opts = GlmOptions {
            window: a.window,
            bin_width: a.bin_width,
            ..GlmOptions::default()
        };
        let threshold = a.threshold.unwrap_or(0.05);
        let oracle = make_estimated_oracle(Arc::new(panel), opts)?;
        let (g, nodes) = run_method(
            &oracle,
            &a,
            threshold,
            Maximality::relative(a.delta, threshold),
        )?;
        let mut csv = Vec::new();
        write_rates_csv(&mut csv, &oracle.backend().rate_table(), &names)?;
        rec.write(a.out.join("estimates.csv"), &csv)?;
        let fit_table: Vec<_> = oracle
            .backend()
            .fit_table()
            .iter()
            .map(|f| (**f).clone())
            .collect();
        let fits = serde_json::to_string_pretty(&fit_table).expect("fits serialize");
        rec.write(a.out.join("fits.json"), fits.as_bytes())?;
        rec.parameters = json!({
            "method": method, "exact": false, "threshold": threshold, "delta": a.delta,
            "k": a.k, "glm": opts, "queries": oracle.stats(),
        });
        write_graph_outputs(&mut rec, &a.out, &oracle, g, names, nodes)?
    };
    rec.finish(&a.out.join("manifest.json"))?;
    for (k, i) in graph.edges() {
        println!("{} -> {}", graph.names()[k], graph.names()[i]);
    }
    Ok(())
}

fn query(a: QueryArgs) -> Result<(), CliError> {
    let graph = DirectedGraph::from_json(&read_text(&a.graph)?)?;
    let q = parse::csep_query(&a.query, graph.names())?;
    let verdict = c_separation(&graph, &q.u, &q.z, &q.w)?;
    let names = graph.names();
    if verdict.separated {
        let blockers: Vec<&str> = verdict
            .blockers
            .iter()
            .map(|&b| names[b].as_str())
            .collect();
        println!("true");
        println!("blocked by outgoing arrows at: {}", blockers.join(", "));
    } else {
        println!("false");
        if let Some(p) = verdict.open_path {
            println!("open path: {}", p.render(names));
        }
    }
    Ok(())
}

fn exact(a: ExactArgs) -> Result<(), CliError> {
    let model = GenerativeModel::from_json(&read_text(&a.model)?)?;
    let q = parse::info_query(&a.query, model.names())?;
    let joint = enumerate_joint(&model, a.cap)?;
    let v = cc_directed_information_sets(&joint, &q.sources, &q.targets, &q.conditioning)?;
    println!("{:.9}", v.value);
    Ok(())
}

fn export_dot(a: ExportDotArgs) -> Result<(), CliError> {
    let graph = DirectedGraph::from_json(&read_text(&a.graph)?)?;
    let mut rec = Recorder::new("export-dot");
    rec.inputs.push(a.graph.clone());
    let labels = match &a.estimates {
        Some(path) => {
            rec.inputs.push(path.clone());
            Some(labels_from_csv(&read_text(path)?, graph.names())?)
        }
        None => None,
    };
    rec.write(a.out.clone(), graph.to_dot(labels.as_ref()).as_bytes())?;
    let mut manifest = a.out.clone().into_os_string();
    manifest.push(".manifest.json");
    rec.finish(Path::new(&manifest))
}

/// Reads `target,sources,conditioning,...,value` rows and keeps the
/// single-source, full-conditioning ones.
fn labels_from_csv(
    text: &str,
    names: &[String],
) -> Result<BTreeMap<(usize, usize), f64>, CliError> {
    let m = names.len();
    let mut out = BTreeMap::new();
    for (no, line) in text.lines().enumerate().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        let bad = || CliError::Usage(format!("estimates line {}: malformed row", no + 1));
        if cols.len() < 4 {
            return Err(bad());
        }
        let target = parse::name_set(cols[0], names)?;
        let sources = parse::name_set(&cols[1].replace(';', ","), names)?;
        let cond = parse::name_set(&cols[2].replace(';', ","), names)?;
        let value: f64 = cols[cols.len() - 1].trim().parse().map_err(|_| bad())?;
        if target.len() == 1 && sources.len() == 1 && cond.len() + 2 == m {
            let i = *target.iter().next().unwrap();
            let k = *sources.iter().next().unwrap();
            out.insert((k, i), value);
        }
    }
    Ok(out)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(j) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(j)
            .build_global()
        {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    let result = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Infer(a) => infer(a),
        Command::Query(a) => query(a),
        Command::Exact(a) => exact(a),
        Command::ExportDot(a) => export_dot(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if let CliError::Estimation { trace, .. } = &e {
                if !trace.is_empty() {
                    eprintln!("fit report: mean log-likelihood per iteration {trace:?}");
                }
            }
            if let CliError::Capacity(_) = &e {
                eprintln!("hint: estimate from simulated or recorded data with `infer --panel`");
            }
            ExitCode::from(e.exit_code())
        }
    }
}
