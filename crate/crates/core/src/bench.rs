//! Benchmark harness: simulate, run every method on the released data and
//! score gene rankings with a sign-aware average precision.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{score_observed, score_summary, BaselineMethod, BaselineScore};
use crate::error::{Error, Result};
use crate::linalg::{svd_panel, EigenLD, GenotypePanel, DEFAULT_RANK_TOL};
use crate::mediate::{cammel_fact, cammel_naive, cammel_proj, MediationOptions, MediationResult};
use crate::rng::{derive_seed, stream};
use crate::simulate::{
    gene_id, gene_index, simulate_scenario, synthetic_panel, ConfoundedSettings, PolygenicSettings,
    ScenarioConfig, ScenarioData,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    CammelNaive,
    CammelFact,
    CammelProj,
    Stwas,
    Ivw,
    Egger,
    Otwas,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::CammelNaive,
        Method::CammelFact,
        Method::CammelProj,
        Method::Stwas,
        Method::Ivw,
        Method::Egger,
        Method::Otwas,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Method::CammelNaive => "cammel_naive",
            Method::CammelFact => "cammel_fact",
            Method::CammelProj => "cammel_proj",
            Method::Stwas => "stwas",
            Method::Ivw => "ivw",
            Method::Egger => "egger",
            Method::Otwas => "otwas",
        }
    }

    pub fn parse(s: &str) -> Option<Method> {
        let s = s.trim().to_ascii_lowercase();
        let s = s.strip_prefix("cammel_").unwrap_or(&s);
        Some(match s {
            "naive" => Method::CammelNaive,
            "fact" => Method::CammelFact,
            "proj" => Method::CammelProj,
            "stwas" => Method::Stwas,
            "ivw" => Method::Ivw,
            "egger" => Method::Egger,
            "otwas" => Method::Otwas,
            _ => return None,
        })
    }

    fn baseline(&self) -> Option<BaselineMethod> {
        match self {
            Method::Stwas => Some(BaselineMethod::Stwas),
            Method::Ivw => Some(BaselineMethod::Ivw),
            Method::Egger => Some(BaselineMethod::Egger),
            Method::Otwas => Some(BaselineMethod::Otwas),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub gene_id: String,
    /// Ranking key, larger is more confident.
    pub score: f64,
    /// Secondary key for equal scores.
    pub tiebreak: f64,
    pub predicted_sign: i8,
    pub true_is_causal: bool,
    pub true_sign: i8,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PredictionTable {
    pub rows: Vec<PredictionRow>,
}

impl PredictionTable {
    pub fn n_causal(&self) -> usize {
        self.rows.iter().filter(|r| r.true_is_causal).count()
    }

    /// Rows in ranking order: score, then tiebreak (both descending), then gene id.
    pub fn ranked(&self) -> Vec<&PredictionRow> {
        let mut rows: Vec<&PredictionRow> = self.rows.iter().collect();
        rows.sort_by(|a, b| {
            b.score
                .total_cmp(&a.score)
                .then(b.tiebreak.total_cmp(&a.tiebreak))
                .then(a.gene_id.cmp(&b.gene_id))
        });
        rows
    }
}

/// Average precision where a hit is a causal gene with the correct sign.
/// Every observed causal gene counts toward the recall denominator.
pub fn auprc_signed(table: &PredictionTable) -> Result<f64> {
    let positives = table.n_causal();
    if positives == 0 {
        return Err(Error::NoPositives);
    }
    if let Some(r) = table.rows.iter().find(|r| !r.score.is_finite()) {
        return Err(Error::NumericalFailure(format!(
            "non-finite score for {}",
            r.gene_id
        )));
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, row) in table.ranked().iter().enumerate() {
        if row.true_is_causal && row.predicted_sign == row.true_sign {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    Ok(sum / positives as f64)
}

/// Ranking rows of a mediation fit: score `pip`, tiebreak `|mean|`.
pub fn mediation_predictions(result: &MediationResult, data: &ScenarioData) -> PredictionTable {
    PredictionTable {
        rows: result
            .genes
            .iter()
            .map(|g| row(&g.gene_id, g.beta_pip, g.beta_mean.abs(), g.beta_sign, data))
            .collect(),
    }
}

/// Ranking rows of a baseline: score `|statistic|`.
pub fn baseline_predictions(scores: &[BaselineScore], data: &ScenarioData) -> PredictionTable {
    PredictionTable {
        rows: scores
            .iter()
            .map(|s| row(&s.gene_id, s.statistic.abs(), 0.0, s.sign, data))
            .collect(),
    }
}

fn row(id: &str, score: f64, tiebreak: f64, sign: i8, data: &ScenarioData) -> PredictionRow {
    let truth = gene_index(id).and_then(|g| data.truth.true_sign(g));
    PredictionRow {
        gene_id: id.to_string(),
        score,
        tiebreak,
        predicted_sign: sign,
        true_is_causal: truth.is_some(),
        true_sign: truth.unwrap_or(0),
    }
}

/// Synthetic reference panel and the split into analysis and null blocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PanelSpec {
    pub n: usize,
    pub block_sizes: Vec<usize>,
    pub rho: f64,
    /// Blocks `0..analysis_blocks` form the analysis region; the last block is the null block.
    pub analysis_blocks: usize,
}

impl Default for PanelSpec {
    fn default() -> Self {
        Self {
            n: 300,
            block_sizes: vec![200; 5],
            rho: 0.9,
            analysis_blocks: 4,
        }
    }
}

/// Panels and decompositions shared by all replicates of one experiment.
#[derive(Debug, Clone)]
pub struct PanelSetup {
    pub analysis: GenotypePanel,
    pub null: GenotypePanel,
    pub eig: EigenLD,
}

impl PanelSetup {
    pub fn new(spec: &PanelSpec, seed: u64) -> Result<Self> {
        let nb = spec.block_sizes.len();
        if spec.analysis_blocks == 0 || spec.analysis_blocks >= nb {
            return Err(Error::ConfigInvalid(format!(
                "analysis_blocks = {} must leave a null block among {nb}",
                spec.analysis_blocks
            )));
        }
        let full = synthetic_panel(spec.n, &spec.block_sizes, spec.rho, &mut stream(seed, 0))?;
        let analysis = full.select_blocks(0, spec.analysis_blocks)?;
        let null = full.select_blocks(nb - 1, nb)?;
        let eig = svd_panel(&analysis, DEFAULT_RANK_TOL)?;
        Ok(Self { analysis, null, eig })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ScenarioKind {
    Polygenic(PolygenicSettings),
    Confounded(ConfoundedSettings),
    Custom(ScenarioConfig),
}

impl ScenarioKind {
    pub fn config(&self) -> ScenarioConfig {
        match self {
            ScenarioKind::Polygenic(s) => s.to_config(0),
            ScenarioKind::Confounded(s) => s.to_config(0),
            ScenarioKind::Custom(c) => c.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub name: String,
    pub scenario: ScenarioKind,
    pub methods: Vec<Method>,
    pub replicates: usize,
    pub seed: u64,
    #[serde(default)]
    pub panel: PanelSpec,
    #[serde(default)]
    pub mediation: MediationOptions,
    #[serde(default = "default_l_max")]
    pub l_max: usize,
}

fn default_l_max() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub scenario: String,
    pub method: Method,
    pub replicate: usize,
    pub auprc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub scenario: String,
    pub method: Method,
    pub mean: f64,
    pub sd: f64,
    /// Replicates with a finite score.
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub rows: Vec<ReportRow>,
    pub config: serde_json::Value,
    pub seed: u64,
}

impl BenchmarkReport {
    /// Mean and sample sd over finite replicate scores, per (scenario, method).
    pub fn aggregates(&self) -> Vec<Aggregate> {
        aggregate_rows(&self.rows)
    }

    pub fn mean(&self, method: Method) -> f64 {
        self.aggregates()
            .iter()
            .find(|a| a.method == method)
            .map(|a| a.mean)
            .unwrap_or(f64::NAN)
    }
}

pub fn aggregate_rows(rows: &[ReportRow]) -> Vec<Aggregate> {
    let mut groups: BTreeMap<(String, Method), Vec<f64>> = BTreeMap::new();
    for r in rows {
        let entry = groups.entry((r.scenario.clone(), r.method)).or_default();
        if r.auprc.is_finite() {
            entry.push(r.auprc);
        }
    }
    groups
        .into_iter()
        .map(|((scenario, method), v)| {
            let n = v.len();
            let mean = if n == 0 {
                f64::NAN
            } else {
                v.iter().sum::<f64>() / n as f64
            };
            let sd = if n < 2 {
                f64::NAN
            } else {
                (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
            };
            Aggregate {
                scenario,
                method,
                mean,
                sd,
                n,
            }
        })
        .collect()
}

/// Runs one method on one simulated data set.
pub fn run_method(
    method: Method,
    data: &ScenarioData,
    setup: &PanelSetup,
    spec: &ExperimentSpec,
    seed: u64,
) -> Result<PredictionTable> {
    let mut rng = stream(seed, 0);
    let opts = &spec.mediation;
    let combined = &data.combined;
    match method {
        Method::CammelNaive => {
            let r = cammel_naive(combined, &setup.eig, opts, &mut rng)?;
            Ok(mediation_predictions(&r, data))
        }
        Method::CammelFact => {
            let r = cammel_fact(combined, &setup.eig, spec.l_max, opts, &mut rng)?;
            Ok(mediation_predictions(&r, data))
        }
        Method::CammelProj => {
            let r = cammel_proj(combined, &setup.eig, &setup.null, spec.l_max, opts, &mut rng)?;
            Ok(mediation_predictions(&r, data))
        }
        Method::Otwas => {
            let ids: Vec<String> = data.observed_genes.iter().map(|&g| gene_id(g)).collect();
            let s = score_observed(&data.observed_expression, &data.observed_phenotype, &ids)?;
            Ok(baseline_predictions(&s, data))
        }
        m => {
            let b = m.baseline().expect("summary baseline");
            let s = score_summary(b, combined, &setup.eig)?;
            Ok(baseline_predictions(&s, data))
        }
    }
}

/// Simulates replicate `rep` of an experiment.
pub fn simulate_replicate(spec: &ExperimentSpec, setup: &PanelSetup, rep: usize) -> Result<ScenarioData> {
    let cfg = spec.scenario.config();
    let mut rng = stream(derive_seed(spec.seed, rep as u64, 0), 1);
    simulate_scenario(&setup.analysis, &cfg, &mut rng)
}

/// Runs all replicates concurrently; a failing method scores NaN.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<BenchmarkReport> {
    if spec.replicates == 0 {
        return Err(Error::ConfigInvalid("replicates must be at least 1".into()));
    }
    if spec.methods.is_empty() {
        return Err(Error::ConfigInvalid("no methods requested".into()));
    }
    let setup = PanelSetup::new(&spec.panel, spec.seed)?;
    spec.scenario.config().validate(setup.analysis.p())?;
    let per_rep: Vec<Vec<ReportRow>> = (0..spec.replicates)
        .into_par_iter()
        .map(|rep| {
            let data = simulate_replicate(spec, &setup, rep);
            spec.methods
                .iter()
                .enumerate()
                .map(|(mi, &method)| {
                    let auprc = data
                        .as_ref()
                        .map_err(|e| e.to_string())
                        .and_then(|d| {
                            let seed = derive_seed(spec.seed, rep as u64, 1 + mi as u64);
                            run_method(method, d, &setup, spec, seed)
                                .and_then(|t| auprc_signed(&t))
                                .map_err(|e| e.to_string())
                        })
                        .unwrap_or_else(|msg| {
                            log::warn!("{} replicate {rep} {}: {msg}", spec.name, method.name());
                            f64::NAN
                        });
                    ReportRow {
                        scenario: spec.name.clone(),
                        method,
                        replicate: rep,
                        auprc,
                    }
                })
                .collect()
        })
        .collect();
    Ok(BenchmarkReport {
        rows: per_rep.into_iter().flatten().collect(),
        config: serde_json::to_value(spec)?,
        seed: spec.seed,
    })
}
