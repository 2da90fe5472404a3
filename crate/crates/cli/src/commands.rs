use std::fmt;
use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use annet_core::synth::{benchmark_fig1a, benchmark_fig1b, write_fig1a_csv, write_fig1b_csv, Fig1aConfig, Fig1bConfig};
use annet_core::{
    fit as fit_model, load_edge_list, load_metadata, nmi as nmi_value, predict_from_metadata, read_labels_csv,
    write_labels_csv, write_marginals_csv, FitConfig, FitError, FitReport, Graph, MetadataColumn, MetadataKind,
    PlantedInstance, PlantedParams, RunManifest, SynthError,
};

use crate::{Fig1aArgs, Fig1bArgs, FitArgs, GenerateArgs, NmiArgs, PredictArgs};

/// Failure classes, mapped onto the process exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags, unreadable or malformed inputs (exit 2).
    Input(String),
    /// The model could not be fitted (exit 3).
    Fit(String),
    /// Writing outputs failed (exit 1).
    Output(String),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Input(_) => 2,
            CliError::Fit(_) => 3,
            CliError::Output(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Input(m) | CliError::Fit(m) | CliError::Output(m) => f.write_str(m),
        }
    }
}

impl From<FitError> for CliError {
    fn from(e: FitError) -> Self {
        match e {
            FitError::AllRestartsFailed { .. } | FitError::Bp(_) => CliError::Fit(e.to_string()),
            _ => CliError::Input(e.to_string()),
        }
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        match e {
            SynthError::Fit(f) => f.into(),
            SynthError::Csv(c) => CliError::Output(c.to_string()),
            other => CliError::Input(other.to_string()),
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::Output(format!("{}: {e}", path.display())))
}

fn output_error(path: Option<&Path>) -> impl Fn(String) -> CliError + '_ {
    move |e| match path {
        Some(p) => CliError::Output(format!("{}: {e}", p.display())),
        None => CliError::Output(e),
    }
}

fn display(path: &Path) -> String {
    path.display().to_string()
}

/// Largest node id in a `node,value` file, plus one.
fn metadata_node_bound(text: &str) -> usize {
    text.lines()
        .skip(1)
        .filter_map(|line| line.split(',').next()?.trim().parse::<usize>().ok())
        .max()
        .map_or(0, |m| m + 1)
}

/// Loads the network and its metadata. Nodes that appear only in the
/// metadata are added to the network without edges.
fn load_inputs(edges: &Path, metadata: &Path, kind: MetadataKind) -> Result<(Graph, MetadataColumn)> {
    let mut graph = load_edge_list(open(edges)?).map_err(|e| CliError::Input(format!("{}: {e}", edges.display())))?;
    let text = fs::read_to_string(metadata).map_err(|e| CliError::Input(format!("{}: {e}", metadata.display())))?;
    let bound = metadata_node_bound(&text);
    if bound > graph.node_count() {
        graph = Graph::from_edges(bound, graph.edges()).map_err(|e| CliError::Input(e.to_string()))?;
    }
    let column = load_metadata(text.as_bytes(), kind, graph.node_count())
        .map_err(|e| CliError::Input(format!("{}: {e}", metadata.display())))?;
    Ok((graph, column))
}

pub fn fit(args: FitArgs, reproducible: bool) -> Result<()> {
    let kind = if args.ordered { MetadataKind::Ordered } else { MetadataKind::Discrete };
    let mut config = FitConfig::new(args.k as usize);
    config.seed = args.seed;
    config.reproducible = reproducible;
    if let Some(r) = args.restarts {
        config.restarts = r;
    }
    if let Some(s) = args.max_em_steps {
        config.max_em_steps = s;
    }
    if let Some(s) = args.max_bp_steps {
        config.max_bp_steps = s;
    }
    if let Some(t) = args.tol {
        config.em_tol = t;
    }
    if let Some(d) = args.degree {
        config.bernstein_degree = d;
    }
    config.validate()?;

    let (graph, metadata) = load_inputs(&args.edges, &args.metadata, kind)?;
    let result = fit_model(&graph, &metadata, &config)?;
    if !result.converged {
        log::warn!("no restart converged within {} EM steps; reporting the best one", config.max_em_steps);
    }

    let mut manifest = RunManifest::new("fit", config.seed);
    manifest.inputs = vec![display(&args.edges), display(&args.metadata)];
    manifest.outputs = args.out.iter().chain(args.marginals.iter()).map(|p| display(p)).collect();
    manifest.config = Some(config.clone());
    let report = FitReport::new(manifest, &config, &result);
    let json = report.to_json().map_err(|e| CliError::Output(e.to_string()))?;

    if let Some(path) = &args.marginals {
        write_marginals_csv(&result.marginals, create(path)?).map_err(|e| output_error(Some(path))(e.to_string()))?;
    }
    write_text(args.out.as_deref(), &json)
}

fn write_text(path: Option<&Path>, text: &str) -> Result<()> {
    let result = match path {
        Some(p) => fs::write(p, format!("{text}\n")),
        None => writeln!(io::stdout().lock(), "{text}"),
    };
    result.map_err(|e| output_error(path)(e.to_string()))
}

pub fn predict(args: PredictArgs) -> Result<()> {
    let report = FitReport::from_json(open(&args.model)?)
        .map_err(|e| CliError::Input(format!("{}: {e}", args.model.display())))?;
    let prior = report.prior.to_prior().map_err(|e| CliError::Input(e.to_string()))?;
    let prediction = predict_from_metadata(&prior, &report.encoding, &args.value)
        .map_err(|e| CliError::Input(format!("value {:?} does not fit this model: {e}", args.value)))?;
    if let Some(w) = &prediction.warning {
        log::warn!("{w}");
    }
    let json = serde_json::to_string(&prediction.probabilities).map_err(|e| CliError::Output(e.to_string()))?;
    write_text(None, &json)
}

pub fn generate(args: GenerateArgs) -> Result<()> {
    let params = PlantedParams {
        n: args.n,
        k: args.k,
        c_in: args.cin,
        c_out: args.cout,
        match_rate: args.rho,
        seed: args.seed,
    };
    let inst = PlantedInstance::generate(params)?;
    fs::create_dir_all(&args.out_dir).map_err(|e| output_error(Some(&args.out_dir))(e.to_string()))?;
    let path = |suffix: &str| -> PathBuf { args.out_dir.join(format!("{}.{suffix}", args.prefix)) };

    let edges = path("edges");
    let header = format!(
        "# planted partition n={} k={} cin={} cout={} rho={} seed={}\n",
        args.n, args.k, args.cin, args.cout, args.rho, args.seed
    );
    fs::write(&edges, header + &inst.graph.to_edge_list()).map_err(|e| output_error(Some(&edges))(e.to_string()))?;

    let metadata = path("metadata.csv");
    let MetadataColumn::Discrete(meta) = &inst.metadata else {
        return Err(CliError::Output("planted metadata is not discrete".into()));
    };
    let mut w = create(&metadata)?;
    let mut text = String::from("node,value\n");
    for (u, &x) in meta.values().iter().enumerate() {
        text.push_str(&format!("{u},{}\n", meta.labels()[x]));
    }
    w.write_all(text.as_bytes())
        .and_then(|_| w.flush())
        .map_err(|e| output_error(Some(&metadata))(e.to_string()))?;

    let truth = path("truth.csv");
    write_labels_csv(&inst.truth, create(&truth)?).map_err(|e| output_error(Some(&truth))(e.to_string()))?;

    for p in [&edges, &metadata, &truth] {
        println!("{}", p.display());
    }
    Ok(())
}

fn bench_fit(restarts: Option<usize>) -> FitConfig {
    let mut config = FitConfig::new(2);
    if let Some(r) = restarts {
        config.restarts = r;
    }
    config
}

pub fn fig1a(args: Fig1aArgs, reproducible: bool) -> Result<()> {
    let mut config = Fig1aConfig::new(args.seed);
    config.n = args.n;
    config.reps = args.reps;
    config.c_mean = args.c;
    config.match_rates = args.rho;
    config.diffs = args.diff;
    config.fit = bench_fit(args.restarts);
    config.sequential = reproducible;
    let rows = benchmark_fig1a(&config)?;
    match &args.out {
        Some(path) => write_fig1a_csv(&rows, create(path)?)?,
        None => write_fig1a_csv(&rows, io::stdout().lock())?,
    }
    Ok(())
}

pub fn fig1b(args: Fig1bArgs, reproducible: bool) -> Result<()> {
    let mut config = Fig1bConfig::new(args.seed);
    config.n = args.n;
    config.reps = args.reps;
    config.c_in = args.cin;
    config.c_out = args.cout;
    config.agreement = args.agreement;
    config.fit = bench_fit(args.restarts);
    config.sequential = reproducible;
    let result = benchmark_fig1b(&config)?;
    println!("success_with_metadata {:.4}", result.success_with);
    println!("success_without_metadata {:.4}", result.success_without);
    if let Some(path) = &args.out {
        write_fig1b_csv(&result, create(path)?)?;
    }
    Ok(())
}

pub fn nmi(args: NmiArgs) -> Result<()> {
    let read = |p: &Path| read_labels_csv(open(p)?).map_err(|e| CliError::Input(format!("{}: {e}", p.display())));
    let (a, b) = (read(&args.a)?, read(&args.b)?);
    let value = nmi_value(&a, &b).map_err(|e| CliError::Input(e.to_string()))?;
    println!("{value:.6}");
    Ok(())
}
