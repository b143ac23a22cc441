//! Command line front end: `simulate`, `fit`, `benchmark` and `report`.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::baselines::{score_observed, score_summary, BaselineMethod};
use crate::bench::{
    aggregate_rows, run_experiment, simulate_replicate, ExperimentSpec, Method, PanelSetup, PanelSpec, ScenarioKind,
};
use crate::error::{Error, ErrorClass, Result};
use crate::factorize::FactorOptions;
use crate::io;
use crate::linalg::{svd_panel, DEFAULT_RANK_TOL};
use crate::mediate::{cammel_fact, cammel_naive, cammel_proj, MediationOptions};
use crate::rng::{derive_seed, stream};
use crate::simulate::{gene_id, ConfoundedSettings, PolygenicSettings, ScenarioData};
use crate::ssvi::SviOptions;
use crate::sumstats::combine;

#[derive(Debug, Parser)]
#[command(name = "cammel", version, about = "Causal mediation analysis of GWAS and eQTL summary statistics")]
struct Cli {
    /// JSON configuration; flags given on the command line take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Maximum number of worker threads.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate a scenario and write summary statistics, observed data and truth.
    Simulate(SimulateArgs),
    /// Fit mediation models and baselines to summary statistics.
    Fit(FitArgs),
    /// Run a replicated benchmark and write per-replicate AUPRC.
    Benchmark(BenchmarkArgs),
    /// Summarise a benchmark report as mean ± sd per scenario and method.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScenarioName {
    Polygenic,
    Confounded,
    Custom,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[arg(long, value_enum)]
    scenario: Option<ScenarioName>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct FitArgs {
    /// Methods to run, comma separated, or `all`.
    #[arg(long, value_delimiter = ',')]
    method: Vec<String>,
    /// Directory written by `simulate`; supplies defaults for every input path.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    panel: Option<PathBuf>,
    #[arg(long)]
    null_panel: Option<PathBuf>,
    #[arg(long)]
    gwas: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    eqtl: Vec<PathBuf>,
    #[arg(long)]
    expression: Option<PathBuf>,
    #[arg(long)]
    phenotype: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    l_max: Option<usize>,
    /// Output directory; one `<method>.tsv` per method.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct BenchmarkArgs {
    #[arg(long, value_enum)]
    scenario: Option<ScenarioName>,
    #[arg(long)]
    replicates: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_delimiter = ',')]
    methods: Vec<String>,
    #[arg(long)]
    l_max: Option<usize>,
    /// Report TSV; a JSON sidecar echoes the configuration.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// Report TSV written by `benchmark`.
    #[arg(long)]
    input: PathBuf,
    /// Write the table here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Settings read from a JSON configuration file. Every field is optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub scenario: Option<ScenarioKind>,
    pub panel: Option<PanelSpec>,
    pub svi: Option<SviOptions>,
    pub factor: Option<FactorOptions>,
    pub pip_threshold: Option<f64>,
    pub l_max: Option<usize>,
    pub methods: Option<Vec<Method>>,
    pub replicates: Option<usize>,
    pub threads: Option<usize>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        io::read_json(path)
    }

    fn mediation(&self) -> MediationOptions {
        let mut m = MediationOptions::default();
        if let Some(s) = self.svi {
            m.svi = s;
        }
        if let Some(f) = self.factor {
            m.factor = f;
        }
        if let Some(t) = self.pip_threshold {
            m.pip_threshold = t;
        }
        m
    }

    fn scenario(&self, flag: Option<ScenarioName>) -> Result<ScenarioKind> {
        Ok(match (flag, &self.scenario) {
            (None, Some(s)) => s.clone(),
            (None, None) | (Some(ScenarioName::Polygenic), None) => {
                ScenarioKind::Polygenic(PolygenicSettings::default())
            }
            (Some(ScenarioName::Polygenic), Some(s @ ScenarioKind::Polygenic(_)))
            | (Some(ScenarioName::Confounded), Some(s @ ScenarioKind::Confounded(_)))
            | (Some(ScenarioName::Custom), Some(s @ ScenarioKind::Custom(_))) => s.clone(),
            (Some(ScenarioName::Polygenic), Some(_)) => ScenarioKind::Polygenic(PolygenicSettings::default()),
            (Some(ScenarioName::Confounded), _) => ScenarioKind::Confounded(ConfoundedSettings::default()),
            (Some(ScenarioName::Custom), _) => {
                return Err(Error::Usage(
                    "--scenario custom needs a \"scenario\" object of kind \"custom\" in --config".into(),
                ))
            }
        })
    }
}

fn scenario_label(s: &ScenarioKind) -> &'static str {
    match s {
        ScenarioKind::Polygenic(_) => "polygenic",
        ScenarioKind::Confounded(_) => "confounded",
        ScenarioKind::Custom(_) => "custom",
    }
}

fn require_seed(flag: Option<u64>, cfg: &RunConfig) -> Result<u64> {
    flag.or(cfg.seed)
        .ok_or_else(|| Error::Usage("missing required flag --seed (or \"seed\" in --config)".into()))
}

fn parse_methods(raw: &[String], cfg: &RunConfig) -> Result<Vec<Method>> {
    if raw.is_empty() {
        return Ok(cfg.methods.clone().unwrap_or_else(|| Method::ALL.to_vec()));
    }
    let mut out = Vec::new();
    for r in raw {
        if r.eq_ignore_ascii_case("all") {
            out.extend(Method::ALL);
        } else {
            out.push(Method::parse(r).ok_or_else(|| Error::Usage(format!("unknown method {r:?}")))?);
        }
    }
    out.sort();
    out.dedup();
    Ok(out)
}

fn experiment(
    name: &str,
    scenario: ScenarioKind,
    methods: Vec<Method>,
    replicates: usize,
    seed: u64,
    l_max: Option<usize>,
    cfg: &RunConfig,
) -> ExperimentSpec {
    ExperimentSpec {
        name: name.into(),
        scenario,
        methods,
        replicates,
        seed,
        panel: cfg.panel.clone().unwrap_or_default(),
        mediation: cfg.mediation(),
        l_max: l_max.or(cfg.l_max).unwrap_or(10),
    }
}

fn truth_json(spec: &ExperimentSpec, data: &ScenarioData) -> serde_json::Value {
    let t = &data.truth;
    json!({
        "seed": spec.seed,
        "causal_set": t.causal_set.iter().map(|&(g, s)| json!({"gene_id": gene_id(g), "sign": s})).collect::<Vec<_>>(),
        "missing_set": t.missing_set.iter().map(|&g| gene_id(g)).collect::<Vec<_>>(),
        "observed_genes": data.observed_genes.iter().map(|&g| gene_id(g)).collect::<Vec<_>>(),
        "beta": t.beta.as_slice(),
        "xi": t.xi.as_slice(),
        "tau0_2": t.tau0_2,
        "sigma0_2": t.sigma0_2,
        "gene_windows": t.gene_windows,
        "config": spec,
    })
}

fn run_simulate(a: &SimulateArgs, cfg: &RunConfig) -> Result<()> {
    let seed = require_seed(a.seed, cfg)?;
    let scenario = cfg.scenario(a.scenario)?;
    let spec = experiment(scenario_label(&scenario), scenario, Vec::new(), 1, seed, None, cfg);
    let setup = PanelSetup::new(&spec.panel, seed)?;
    spec.scenario.config().validate(setup.analysis.p())?;
    let data = simulate_replicate(&spec, &setup, 0)?;
    let out = &a.out;
    io::write_panel(&out.join("panel.tsv"), &setup.analysis)?;
    io::write_panel(&out.join("null_panel.tsv"), &setup.null)?;
    io::write_summary(&out.join("gwas.tsv"), &data.combined.gwas)?;
    for (s, &g) in data.combined.eqtl.iter().zip(&data.observed_genes) {
        io::write_summary(&out.join(format!("eqtl_{g}.tsv")), s)?;
    }
    let ids: Vec<String> = data.observed_genes.iter().map(|&g| gene_id(g)).collect();
    io::write_expression(&out.join("expression.tsv"), &ids, &data.observed_expression)?;
    io::write_phenotype(&out.join("phenotype.tsv"), &data.observed_phenotype)?;
    io::write_json(&out.join("truth.json"), &truth_json(&spec, &data))?;
    log::info!("simulated {} genes into {}", ids.len(), out.display());
    Ok(())
}

/// `eqtl_<k>.tsv` files of a directory, ordered by `k`.
fn eqtl_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    let mut found = Vec::new();
    for e in entries {
        let path = e.map_err(|e| Error::io(dir.display().to_string(), e))?.path();
        let name = path.file_name().and_then(|s| s.to_str()).unwrap_or_default();
        if let Some(k) = name
            .strip_prefix("eqtl_")
            .and_then(|s| s.strip_suffix(".tsv"))
            .and_then(|s| s.parse::<usize>().ok())
        {
            found.push((k, path));
        }
    }
    found.sort();
    Ok(found.into_iter().map(|(_, p)| p).collect())
}

fn input_path(explicit: &Option<PathBuf>, dir: &Option<PathBuf>, file: &str, flag: &str) -> Result<PathBuf> {
    explicit
        .clone()
        .or_else(|| dir.as_ref().map(|d| d.join(file)))
        .ok_or_else(|| Error::Usage(format!("missing required flag --{flag} (or --input)")))
}

fn run_fit(a: &FitArgs, cfg: &RunConfig) -> Result<()> {
    let methods = parse_methods(&a.method, cfg)?;
    if a.method.is_empty() && cfg.methods.is_none() {
        return Err(Error::Usage("missing required flag --method".into()));
    }
    let seed = a.seed.or(cfg.seed).unwrap_or(0);
    let opts = cfg.mediation();
    let l_max = a.l_max.or(cfg.l_max).unwrap_or(10);

    let panel = io::load_panel(&input_path(&a.panel, &a.input, "panel.tsv", "panel")?)?;
    let gwas = io::load_summary(&input_path(&a.gwas, &a.input, "gwas.tsv", "gwas")?)?;
    let eqtl_paths = match (&a.eqtl, &a.input) {
        (e, _) if !e.is_empty() => e.clone(),
        (_, Some(dir)) => eqtl_files(dir)?,
        _ => return Err(Error::Usage("missing required flag --eqtl (or --input)".into())),
    };
    let eqtls = eqtl_paths.iter().map(|p| io::load_summary(p)).collect::<Result<Vec<_>>>()?;
    let combined = combine(gwas, eqtls)?;
    if combined.snp_ids() != panel.snp_ids() {
        return Err(Error::OrderMismatch("summary SNP ids differ from the panel header".into()));
    }
    let eig = svd_panel(&panel, DEFAULT_RANK_TOL)?;

    for m in methods {
        let mseed = derive_seed(seed, 0, 1 + Method::ALL.iter().position(|x| *x == m).unwrap() as u64);
        let mut rng = stream(mseed, 0);
        let text = match m {
            Method::CammelNaive => io::mediation_tsv(&cammel_naive(&combined, &eig, &opts, &mut rng)?),
            Method::CammelFact => io::mediation_tsv(&cammel_fact(&combined, &eig, l_max, &opts, &mut rng)?),
            Method::CammelProj => {
                let null = io::load_panel(&input_path(&a.null_panel, &a.input, "null_panel.tsv", "null-panel")?)?;
                io::mediation_tsv(&cammel_proj(&combined, &eig, &null, l_max, &opts, &mut rng)?)
            }
            Method::Stwas => io::baseline_tsv(&score_summary(BaselineMethod::Stwas, &combined, &eig)?),
            Method::Ivw => io::baseline_tsv(&score_summary(BaselineMethod::Ivw, &combined, &eig)?),
            Method::Egger => io::baseline_tsv(&score_summary(BaselineMethod::Egger, &combined, &eig)?),
            Method::Otwas => {
                let (ids, expr) =
                    io::load_expression(&input_path(&a.expression, &a.input, "expression.tsv", "expression")?)?;
                let y = io::load_phenotype(&input_path(&a.phenotype, &a.input, "phenotype.tsv", "phenotype")?)?;
                io::baseline_tsv(&score_observed(&expr, &y, &ids)?)
            }
        };
        io::write_text(&a.out.join(format!("{}.tsv", m.name())), &text)?;
        log::info!("{} done", m.name());
    }
    Ok(())
}

fn run_benchmark(a: &BenchmarkArgs, cfg: &RunConfig) -> Result<()> {
    let seed = require_seed(a.seed, cfg)?;
    let scenario = cfg.scenario(a.scenario)?;
    let methods = parse_methods(&a.methods, cfg)?;
    let replicates = a.replicates.or(cfg.replicates).unwrap_or(20);
    let spec = experiment(scenario_label(&scenario), scenario, methods, replicates, seed, a.l_max, cfg);
    let report = run_experiment(&spec)?;
    io::write_text(&a.out, &io::report_tsv(&report.rows))?;
    io::write_json(
        &io::sidecar_path(&a.out),
        &json!({"seed": report.seed, "config": report.config}),
    )
}

fn run_report(a: &ReportArgs) -> Result<()> {
    let rows = io::load_report(&a.input)?;
    let mut out = String::from("scenario\tmethod\tauprc\tn\n");
    for g in aggregate_rows(&rows) {
        out.push_str(&format!(
            "{}\t{}\t{:.3} ± {:.3}\t{}\n",
            g.scenario,
            g.method.name(),
            g.mean,
            g.sd,
            g.n
        ));
    }
    match &a.out {
        Some(p) => io::write_text(p, &out),
        None => {
            print!("{out}");
            Ok(())
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    let cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(t) = cli.threads.or(cfg.threads) {
        if t == 0 {
            return Err(Error::Usage("--threads must be at least 1".into()));
        }
        // a pool built earlier in the process (e.g. by a previous call) is kept
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
    }
    match &cli.command {
        Command::Simulate(a) => run_simulate(a, &cfg),
        Command::Fit(a) => run_fit(a, &cfg),
        Command::Benchmark(a) => run_benchmark(a, &cfg),
        Command::Report(a) => run_report(a),
    }
}

/// Exit status for an error: 1 usage, 2 data, 3 numerical.
pub fn exit_code(e: &Error) -> i32 {
    match e.class() {
        ErrorClass::Usage => 1,
        ErrorClass::Data => 2,
        ErrorClass::Numerical => 3,
    }
}

/// Parses `argv` (program name first), runs one subcommand and returns the exit status.
pub fn parse_and_dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.code());
            if matches!(e, Error::Usage(_)) {
                eprintln!("run with --help for usage");
            }
            exit_code(&e)
        }
    }
}
