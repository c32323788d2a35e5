//! The `ame` command line: ingest, fit, gof, analyze and verify.
//!
//! Every command writes under `--out-dir` together with a `manifest.json`
//! recording the effective configuration, input hashes and seed. Outputs
//! depend only on inputs and seed, so repeated runs are byte-identical.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis::{
    cluster_multiplicative, coefficient_summary, multiplicative_matrix, write_additive_csv,
    write_clusters_csv, write_coefficients_csv, write_matrix_csv, write_rankings_csv,
};
use crate::covariates::CovariateTable;
use crate::gof::{posterior_predictive_gof, write_gof_csv};
use crate::ingest::{ingest, read_records};
use crate::model::{parse_config, ModelSpec, Variant};
use crate::network::DirectedNetwork;
use crate::sampler::{run_chain, Chain};
use crate::store::{chain_summary, read_samples_csv, write_samples_csv};
use crate::synthetic::verify;

pub const EXIT_ERROR: u8 = 1;
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_ORACLE_FAILED: u8 = 3;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const NODES_FILE: &str = "nodes.txt";
pub const EDGES_FILE: &str = "edges.tsv";
pub const COVARIATES_FILE: &str = "covariates.csv";
pub const REPORT_FILE: &str = "ingest_report.json";
pub const SAMPLES_FILE: &str = "samples.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const GOF_FILE: &str = "gof.csv";

#[derive(Debug, Parser)]
#[command(name = "ame", version, about = "Fit and check AME probit network models")]
pub struct Cli {
    /// Seed for every random stream (overrides the config seed).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Directory all outputs are written to.
    #[arg(long, global = true, default_value = "ame-out")]
    pub out_dir: PathBuf,
    /// Flat `key = value` model config.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build the network and covariates from a concert archive CSV.
    Ingest {
        csv: PathBuf,
        /// Keep one undirected tie per co-programmed pair.
        #[arg(long)]
        symmetric: bool,
        /// Rows in the degree tables of the report.
        #[arg(long, default_value_t = 10)]
        top_k: usize,
    },
    /// Run the Gibbs sampler on an ingested data directory.
    Fit {
        data: PathBuf,
        #[arg(long)]
        variant: Option<Variant>,
        /// Latent dimension for AME.
        #[arg(long)]
        rank: Option<usize>,
        /// Independent chains, written to chain-1, chain-2, ...
        #[arg(long, default_value_t = 1)]
        chains: usize,
    },
    /// Posterior-predictive goodness of fit for one or more fitted chains.
    Gof {
        /// Fitted chain directory; repeat to compare models.
        #[arg(long = "chain", required = true)]
        chains: Vec<PathBuf>,
        /// Data directory the chains were fitted to.
        #[arg(long)]
        data: PathBuf,
    },
    /// Coefficient, additive-effect, multiplicative and cluster summaries.
    Analyze {
        chain: PathBuf,
        #[arg(long, default_value_t = 10)]
        top_k: usize,
        /// Node ids for the multiplicative matrix (repeat or separate with ';').
        #[arg(long, value_delimiter = ';')]
        subset: Vec<String>,
        /// Number of k-means clusters of the latent positions.
        #[arg(long)]
        clusters: Option<usize>,
    },
    /// Run the built-in oracle suite.
    Verify,
}

/// Provenance written into every output directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub variant: Option<String>,
    pub model: Option<String>,
    /// Every model config key with its value.
    pub config: BTreeMap<String, String>,
    /// Command-specific flags.
    pub options: BTreeMap<String, String>,
    /// Input file name to SHA-256.
    pub inputs: BTreeMap<String, String>,
    pub outputs: Vec<String>,
    /// Taken from `SOURCE_DATE_EPOCH` when set; wall-clock time would break
    /// reproducibility.
    pub source_date_epoch: Option<String>,
}

impl RunManifest {
    fn new(command: &str, seed: u64) -> Self {
        Self {
            command: command.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            seed,
            variant: None,
            model: None,
            config: BTreeMap::new(),
            options: BTreeMap::new(),
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
            source_date_epoch: std::env::var("SOURCE_DATE_EPOCH").ok(),
        }
    }

    fn with_spec(mut self, spec: &ModelSpec) -> Self {
        self.variant = Some(spec.variant.label().into());
        self.model = Some(spec.model_label());
        self.config = spec
            .config_pairs()
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect();
        self
    }

    fn input(&mut self, path: &Path) -> anyhow::Result<()> {
        let name = path
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string());
        self.inputs.insert(name, sha256_file(path)?);
        Ok(())
    }

    fn write(&self, dir: &Path) -> anyhow::Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        write_text(&dir.join(MANIFEST_FILE), &text)
    }

    pub fn read(dir: &Path) -> anyhow::Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let f = File::open(&path).with_context(|| format!("opening {}", path.display()))?;
        serde_json::from_reader(BufReader::new(f)).with_context(|| format!("parsing {}", path.display()))
    }
}

pub fn sha256_file(path: &Path) -> anyhow::Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn write_text(path: &Path, text: &str) -> anyhow::Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn write_with(
    path: &Path,
    f: impl FnOnce(&mut BufWriter<File>) -> crate::Result<()>,
) -> anyhow::Result<()> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(file);
    f(&mut w).with_context(|| format!("writing {}", path.display()))?;
    w.flush()?;
    Ok(())
}

fn json_file<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path, &text)
}

/// Parses arguments, runs the command and maps the outcome to an exit code.
pub fn run<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match execute(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_ERROR)
        }
    }
}

pub fn execute(cli: &Cli) -> anyhow::Result<ExitCode> {
    fs::create_dir_all(&cli.out_dir)
        .with_context(|| format!("creating {}", cli.out_dir.display()))?;
    match &cli.command {
        Command::Ingest {
            csv,
            symmetric,
            top_k,
        } => cmd_ingest(cli, csv, *symmetric, *top_k),
        Command::Fit {
            data,
            variant,
            rank,
            chains,
        } => cmd_fit(cli, data, *variant, *rank, *chains),
        Command::Gof { chains, data } => cmd_gof(cli, chains, data),
        Command::Analyze {
            chain,
            top_k,
            subset,
            clusters,
        } => cmd_analyze(cli, chain, *top_k, subset, *clusters),
        Command::Verify => cmd_verify(cli),
    }
}

fn cmd_ingest(cli: &Cli, csv: &Path, symmetric: bool, top_k: usize) -> anyhow::Result<ExitCode> {
    let f = File::open(csv).with_context(|| format!("opening {}", csv.display()))?;
    let records = read_records(BufReader::new(f)).with_context(|| format!("reading {}", csv.display()))?;
    let data = ingest(records, symmetric, top_k)?;
    let out = &cli.out_dir;
    write_with(&out.join(NODES_FILE), |w| data.network.write_manifest(w))?;
    write_with(&out.join(EDGES_FILE), |w| data.network.write_edge_list(w))?;
    write_with(&out.join(COVARIATES_FILE), |w| data.covariates.write_csv(w))?;
    json_file(&out.join(REPORT_FILE), &data.report)?;

    let mut m = RunManifest::new("ingest", cli.seed.unwrap_or(0));
    m.input(csv)?;
    m.options.insert("symmetric".into(), symmetric.to_string());
    m.options.insert("top_k".into(), top_k.to_string());
    m.outputs = [NODES_FILE, EDGES_FILE, COVARIATES_FILE, REPORT_FILE]
        .map(String::from)
        .to_vec();
    m.write(out)?;
    println!(
        "{} nodes, {} ties written to {}",
        data.report.nodes,
        data.report.edges,
        out.display()
    );
    Ok(ExitCode::SUCCESS)
}

/// Network and covariates of an ingested data directory, in node order.
pub fn read_data(dir: &Path) -> anyhow::Result<(DirectedNetwork, CovariateTable)> {
    let open = |name: &str| {
        let p = dir.join(name);
        File::open(&p)
            .map(BufReader::new)
            .with_context(|| format!("opening {}", p.display()))
    };
    let y = DirectedNetwork::read(open(NODES_FILE)?, open(EDGES_FILE)?)
        .with_context(|| format!("reading network in {}", dir.display()))?;
    let x = if dir.join(COVARIATES_FILE).exists() {
        CovariateTable::read_csv(open(COVARIATES_FILE)?)?.aligned_to(y.node_ids())?
    } else {
        CovariateTable::empty(y.node_ids().to_vec())
    };
    Ok((y, x))
}

fn data_inputs(m: &mut RunManifest, dir: &Path) -> anyhow::Result<()> {
    for name in [NODES_FILE, EDGES_FILE, COVARIATES_FILE] {
        let p = dir.join(name);
        if p.exists() {
            m.input(&p)?;
        }
    }
    Ok(())
}

/// Model spec from the config file with command-line overrides applied.
/// The network's stored symmetry decides `symmetric`.
pub fn resolve_spec(
    config: Option<&Path>,
    variant: Option<Variant>,
    rank: Option<usize>,
    seed: Option<u64>,
    symmetric: bool,
) -> anyhow::Result<ModelSpec> {
    let mut kv = match config {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            parse_config(&text).with_context(|| format!("in {}", p.display()))?
        }
        None => BTreeMap::new(),
    };
    if let Some(v) = variant {
        kv.insert("variant".into(), v.label().into());
        if !v.has_multiplicative() {
            kv.remove("latent_rank");
            kv.remove("psi_iw_scale");
        } else if kv.get("latent_rank").is_some_and(|r| r.trim() == "0") {
            kv.remove("latent_rank");
        }
    }
    if let Some(r) = rank {
        kv.insert("latent_rank".into(), r.to_string());
    }
    if let Some(s) = seed {
        kv.insert("seed".into(), s.to_string());
    }
    kv.insert("symmetric".into(), symmetric.to_string());
    Ok(ModelSpec::from_config_map(&kv)?)
}

fn cmd_fit(
    cli: &Cli,
    data: &Path,
    variant: Option<Variant>,
    rank: Option<usize>,
    chains: usize,
) -> anyhow::Result<ExitCode> {
    if chains == 0 {
        bail!("--chains must be at least 1");
    }
    let (y, x) = read_data(data)?;
    let spec = resolve_spec(cli.config.as_deref(), variant, rank, cli.seed, y.is_symmetric())?;
    let base = spec.mcmc.seed;
    let specs: Vec<ModelSpec> = (0..chains as u64)
        .map(|k| {
            let mut s = spec.clone();
            s.mcmc.seed = base.wrapping_add(k);
            s
        })
        .collect();
    let fitted = specs
        .par_iter()
        .map(|s| run_chain(&y, &x, s))
        .collect::<crate::Result<Vec<_>>>()?;

    let mut inputs = RunManifest::new("fit", base);
    data_inputs(&mut inputs, data)?;
    if let Some(c) = &cli.config {
        inputs.input(c)?;
    }
    let mut dirs = Vec::new();
    for (k, (chain, s)) in fitted.iter().zip(&specs).enumerate() {
        let dir = if chains == 1 {
            cli.out_dir.clone()
        } else {
            let d = cli.out_dir.join(format!("chain-{}", k + 1));
            fs::create_dir_all(&d)?;
            dirs.push(format!("chain-{}", k + 1));
            d
        };
        let mut m = RunManifest::new("fit", s.mcmc.seed).with_spec(s);
        m.inputs = inputs.inputs.clone();
        m.options.insert("chains".into(), chains.to_string());
        m.options.insert("chain".into(), (k + 1).to_string());
        write_chain(&dir, chain, &y, m)?;
        println!(
            "{}: {} draws written to {}",
            s.model_label(),
            chain.draws.len(),
            dir.display()
        );
    }
    if chains > 1 {
        let mut m = inputs.with_spec(&spec);
        m.options.insert("chains".into(), chains.to_string());
        m.outputs = dirs;
        m.write(&cli.out_dir)?;
    }
    Ok(ExitCode::SUCCESS)
}

fn write_chain(dir: &Path, chain: &Chain, y: &DirectedNetwork, mut m: RunManifest) -> anyhow::Result<()> {
    write_with(&dir.join(NODES_FILE), |w| y.write_manifest(w))?;
    write_with(&dir.join(SAMPLES_FILE), |w| write_samples_csv(w, chain))?;
    json_file(&dir.join(SUMMARY_FILE), &chain_summary(chain)?)?;
    let mut outputs = vec![NODES_FILE, SAMPLES_FILE, SUMMARY_FILE];
    if let Some(g) = &chain.gof {
        write_with(&dir.join(GOF_FILE), |w| write_gof_csv(w, std::slice::from_ref(g)))?;
        outputs.push(GOF_FILE);
    }
    m.outputs = outputs.into_iter().map(String::from).collect();
    m.write(dir)
}

/// Reads a chain written by `fit`.
pub fn load_chain(dir: &Path) -> anyhow::Result<(Chain, RunManifest)> {
    let m = RunManifest::read(dir)?;
    if m.command != "fit" || !dir.join(SAMPLES_FILE).exists() {
        bail!("{} is not a fitted chain directory", dir.display());
    }
    let spec = ModelSpec::from_config_map(&m.config)?;
    let nodes = File::open(dir.join(NODES_FILE)).with_context(|| format!("opening nodes in {}", dir.display()))?;
    let net = DirectedNetwork::read(BufReader::new(nodes), &b""[..])?;
    let samples = File::open(dir.join(SAMPLES_FILE))?;
    let (coefficient_names, draws) = read_samples_csv(BufReader::new(samples), &spec, net.node_ids())
        .with_context(|| format!("reading {}", dir.join(SAMPLES_FILE).display()))?;
    if draws.is_empty() {
        bail!("{} holds no draws", dir.display());
    }
    let chain = Chain {
        spec,
        node_ids: net.node_ids().to_vec(),
        coefficient_names,
        draws,
        last_state: None,
        rho_acceptance: None,
        gof: None,
    };
    Ok((chain, m))
}

fn cmd_gof(cli: &Cli, chains: &[PathBuf], data: &Path) -> anyhow::Result<ExitCode> {
    let (y, x) = read_data(data)?;
    let mut m = RunManifest::new("gof", cli.seed.unwrap_or(0));
    data_inputs(&mut m, data)?;
    let mut tables = Vec::new();
    for (k, dir) in chains.iter().enumerate() {
        let (chain, cm) = load_chain(dir)?;
        if chain.node_ids != y.node_ids() {
            bail!("chain {} was not fitted to {}", dir.display(), data.display());
        }
        let seed = cli.seed.unwrap_or(cm.seed);
        tables.push(posterior_predictive_gof(&chain.draws, &y, &x, &chain.spec, seed)?);
        let samples = dir.join(SAMPLES_FILE);
        m.inputs.insert(format!("chain-{}/{SAMPLES_FILE}", k + 1), sha256_file(&samples)?);
        m.options.insert(format!("chain-{}", k + 1), chain.spec.model_label());
        m.options.insert(format!("chain-{}-seed", k + 1), seed.to_string());
    }
    write_with(&cli.out_dir.join(GOF_FILE), |w| write_gof_csv(w, &tables))?;
    m.outputs = vec![GOF_FILE.into()];
    m.write(&cli.out_dir)?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_analyze(
    cli: &Cli,
    dir: &Path,
    top_k: usize,
    subset: &[String],
    clusters: Option<usize>,
) -> anyhow::Result<ExitCode> {
    let (chain, cm) = load_chain(dir)?;
    let seed = cli.seed.unwrap_or(cm.seed);
    let out = &cli.out_dir;
    let variant = chain.spec.variant;
    if !variant.has_multiplicative() && (!subset.is_empty() || clusters.is_some()) {
        bail!("--subset and --clusters need a model with multiplicative effects, got {variant}");
    }
    let mut outputs = vec!["coefficients.csv"];
    let coefs = coefficient_summary(&chain)?;
    write_with(&out.join("coefficients.csv"), |w| write_coefficients_csv(w, &coefs))?;
    if variant.has_additive() {
        write_with(&out.join("additive_effects.csv"), |w| write_additive_csv(w, &chain))?;
        write_with(&out.join("rankings.csv"), |w| write_rankings_csv(w, &chain, top_k))?;
        outputs.extend(["additive_effects.csv", "rankings.csv"]);
    }
    if variant.has_multiplicative() {
        let ids = (!subset.is_empty()).then_some(subset);
        let (names, mat) = multiplicative_matrix(&chain, ids)?;
        write_with(&out.join("uv_matrix.csv"), |w| write_matrix_csv(w, &names, &mat))?;
        outputs.push("uv_matrix.csv");
        if let Some(k) = clusters {
            let rows = cluster_multiplicative(&chain, k, seed)?;
            write_with(&out.join("clusters.csv"), |w| write_clusters_csv(w, &rows))?;
            outputs.push("clusters.csv");
        }
    }

    let mut m = RunManifest::new("analyze", seed).with_spec(&chain.spec);
    m.inputs.insert(SAMPLES_FILE.into(), sha256_file(&dir.join(SAMPLES_FILE))?);
    m.options.insert("top_k".into(), top_k.to_string());
    m.options.insert("subset".into(), subset.join(";"));
    m.options.insert("clusters".into(), clusters.map_or("none".into(), |k| k.to_string()));
    m.outputs = outputs.into_iter().map(String::from).collect();
    m.write(out)?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_verify(cli: &Cli) -> anyhow::Result<ExitCode> {
    let seed = cli.seed.unwrap_or(0);
    let report = verify(seed);
    let text = report.to_text();
    print!("{text}");
    write_text(&cli.out_dir.join("verify.txt"), &text)?;
    json_file(&cli.out_dir.join("verify.json"), &report)?;
    let mut m = RunManifest::new("verify", seed);
    m.outputs = vec!["verify.txt".into(), "verify.json".into()];
    m.write(&cli.out_dir)?;
    Ok(if report.all_passed() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_ORACLE_FAILED)
    })
}
