//! TSV and JSON readers and writers for panels, summary statistics and result tables.
//!
//! Floats are written with 17 significant digits so that a write followed by a
//! read reproduces every value exactly.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::baselines::BaselineScore;
use crate::bench::{Method, ReportRow};
use crate::error::{Error, Result};
use crate::linalg::{standardize, GenotypePanel};
use crate::mediate::MediationResult;
use crate::sumstats::SummaryVector;

/// Formats a float so that parsing it back is exact.
pub fn fmt_f64(x: f64) -> String {
    if x.is_nan() {
        "NaN".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{x:.16e}")
    }
}

fn show(path: &Path) -> String {
    path.display().to_string()
}

/// Sidecar JSON next to a TSV: `panel.tsv` becomes `panel.json`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(show(path), e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(show(dir), e))?;
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(show(path), e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(show(path), e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = read_text(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: show(path),
        line: e.line(),
        msg: e.to_string(),
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path, &text)
}

/// A parsed TSV: header plus rows of raw fields, each tagged with its 1-based line number.
pub struct Table {
    pub path: String,
    pub header: Vec<String>,
    pub rows: Vec<(usize, Vec<String>)>,
}

impl Table {
    pub fn read(path: &Path) -> Result<Self> {
        let text = read_text(path)?;
        Self::parse(&show(path), &text)
    }

    pub fn parse(path: &str, text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
            .filter(|(_, l)| !l.trim().is_empty());
        let (_, head) = lines.next().ok_or_else(|| Error::Parse {
            path: path.into(),
            line: 1,
            msg: "empty file".into(),
        })?;
        let header: Vec<String> = head.split('\t').map(|s| s.trim().to_string()).collect();
        let mut rows = Vec::new();
        for (line, l) in lines {
            let fields: Vec<String> = l.split('\t').map(|s| s.trim().to_string()).collect();
            if fields.len() != header.len() {
                return Err(Error::Parse {
                    path: path.into(),
                    line,
                    msg: format!("expected {} fields, found {}", header.len(), fields.len()),
                });
            }
            rows.push((line, fields));
        }
        Ok(Self {
            path: path.into(),
            header,
            rows,
        })
    }

    /// Column positions of `names`, or a schema error listing every missing one.
    pub fn require(&self, names: &[&str]) -> Result<Vec<usize>> {
        let missing: Vec<&str> = names
            .iter()
            .copied()
            .filter(|n| !self.header.iter().any(|h| h == n))
            .collect();
        if !missing.is_empty() {
            return Err(Error::Schema {
                path: self.path.clone(),
                missing: missing.join(","),
            });
        }
        Ok(names
            .iter()
            .map(|n| self.header.iter().position(|h| h == n).unwrap())
            .collect())
    }

    fn number(&self, line: usize, column: &str, raw: &str, allow_nan: bool) -> Result<f64> {
        let bad = |msg: String| Error::Parse {
            path: self.path.clone(),
            line,
            msg,
        };
        let v: f64 = raw
            .parse()
            .map_err(|_| bad(format!("column {column}: cannot parse {raw:?} as a number")))?;
        if !allow_nan && !v.is_finite() {
            return Err(bad(format!("column {column}: non-finite value {raw}")));
        }
        Ok(v)
    }

    pub fn column_f64(&self, idx: usize, allow_nan: bool) -> Result<Vec<f64>> {
        let name = &self.header[idx];
        self.rows
            .iter()
            .map(|(line, f)| self.number(*line, name, &f[idx], allow_nan))
            .collect()
    }

    pub fn column_str(&self, idx: usize) -> Vec<String> {
        self.rows.iter().map(|(_, f)| f[idx].clone()).collect()
    }

    /// All columns as a finite numeric matrix.
    pub fn matrix(&self) -> Result<DMatrix<f64>> {
        let (n, p) = (self.rows.len(), self.header.len());
        let mut m = DMatrix::zeros(n, p);
        for (i, (line, f)) in self.rows.iter().enumerate() {
            for j in 0..p {
                m[(i, j)] = self.number(*line, &self.header[j], &f[j], false)?;
            }
        }
        Ok(m)
    }
}

fn tsv_matrix(header: &[String], m: &DMatrix<f64>) -> String {
    let mut out = header.join("\t");
    out.push('\n');
    for i in 0..m.nrows() {
        let row: Vec<String> = m.row(i).iter().map(|&x| fmt_f64(x)).collect();
        out.push_str(&row.join("\t"));
        out.push('\n');
    }
    out
}

#[derive(Debug, Serialize, Deserialize)]
struct BlocksSidecar {
    blocks: Vec<(usize, usize)>,
}

/// Reads raw dosages (header of SNP ids) and standardizes on load; block
/// bounds come from the optional sidecar.
pub fn load_panel(path: &Path) -> Result<GenotypePanel> {
    let table = Table::read(path)?;
    if table.rows.len() < 2 {
        return Err(Error::Parse {
            path: table.path,
            line: 1,
            msg: "a panel needs at least two individuals".into(),
        });
    }
    let panel = standardize(&table.matrix()?)?.with_snp_ids(table.header.clone())?;
    let side = sidecar_path(path);
    if side.exists() {
        let s: BlocksSidecar = read_json(&side)?;
        panel.with_blocks(s.blocks)
    } else {
        Ok(panel)
    }
}

pub fn write_panel(path: &Path, panel: &GenotypePanel) -> Result<()> {
    write_text(path, &tsv_matrix(panel.snp_ids(), panel.values()))?;
    write_json(
        &sidecar_path(path),
        &BlocksSidecar {
            blocks: panel.block_bounds().to_vec(),
        },
    )
}

#[derive(Debug, Serialize, Deserialize)]
struct TraitSidecar {
    trait_id: String,
    n: usize,
}

pub const SUMMARY_COLUMNS: [&str; 4] = ["snp_id", "effect", "se", "z"];

pub fn load_summary(path: &Path) -> Result<SummaryVector> {
    let table = Table::read(path)?;
    let idx = table.require(&SUMMARY_COLUMNS)?;
    let meta: TraitSidecar = read_json(&sidecar_path(path))?;
    let snp_ids = table.column_str(idx[0]);
    let effect = DVector::from_vec(table.column_f64(idx[1], false)?);
    let se = DVector::from_vec(table.column_f64(idx[2], false)?);
    let z = DVector::from_vec(table.column_f64(idx[3], false)?);
    if let Some(i) = se.iter().position(|s| *s <= 0.0) {
        return Err(Error::Parse {
            path: table.path.clone(),
            line: table.rows[i].0,
            msg: format!("column se: non-positive value {}", se[i]),
        });
    }
    Ok(SummaryVector {
        trait_id: meta.trait_id,
        snp_ids,
        effect,
        se,
        z,
        n_samples: meta.n,
    })
}

pub fn write_summary(path: &Path, s: &SummaryVector) -> Result<()> {
    let mut out = SUMMARY_COLUMNS.join("\t");
    out.push('\n');
    for j in 0..s.p() {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\n",
            s.snp_ids[j],
            fmt_f64(s.effect[j]),
            fmt_f64(s.se[j]),
            fmt_f64(s.z[j])
        ));
    }
    write_text(path, &out)?;
    write_json(
        &sidecar_path(path),
        &TraitSidecar {
            trait_id: s.trait_id.clone(),
            n: s.n_samples,
        },
    )
}

/// Observed expression: one row per individual, one column per gene id.
pub fn write_expression(path: &Path, gene_ids: &[String], m: &DMatrix<f64>) -> Result<()> {
    write_text(path, &tsv_matrix(gene_ids, m))
}

pub fn load_expression(path: &Path) -> Result<(Vec<String>, DMatrix<f64>)> {
    let table = Table::read(path)?;
    Ok((table.header.clone(), table.matrix()?))
}

pub fn write_phenotype(path: &Path, y: &DVector<f64>) -> Result<()> {
    let m = DMatrix::from_column_slice(y.len(), 1, y.as_slice());
    write_text(path, &tsv_matrix(&["y".to_string()], &m))
}

pub fn load_phenotype(path: &Path) -> Result<DVector<f64>> {
    let table = Table::read(path)?;
    let idx = table.require(&["y"])?;
    Ok(DVector::from_vec(table.column_f64(idx[0], false)?))
}

pub fn mediation_tsv(result: &MediationResult) -> String {
    let mut out = String::from("gene_id\tbeta_mean\tbeta_pip\tsign\n");
    for g in &result.genes {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\n",
            g.gene_id,
            fmt_f64(g.beta_mean),
            fmt_f64(g.beta_pip),
            g.beta_sign
        ));
    }
    out
}

pub fn baseline_tsv(scores: &[BaselineScore]) -> String {
    let mut out = String::from("gene_id\tstatistic\tsign\n");
    for s in scores {
        out.push_str(&format!("{}\t{}\t{}\n", s.gene_id, fmt_f64(s.statistic), s.sign));
    }
    out
}

pub const REPORT_COLUMNS: [&str; 4] = ["scenario", "method", "replicate", "auprc"];

pub fn report_tsv(rows: &[ReportRow]) -> String {
    let mut out = REPORT_COLUMNS.join("\t");
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\n",
            r.scenario,
            r.method.name(),
            r.replicate,
            fmt_f64(r.auprc)
        ));
    }
    out
}

pub fn load_report(path: &Path) -> Result<Vec<ReportRow>> {
    let table = Table::read(path)?;
    let idx = table.require(&REPORT_COLUMNS)?;
    let auprc = table.column_f64(idx[3], true)?;
    table
        .rows
        .iter()
        .zip(auprc)
        .map(|((line, f), auprc)| {
            let bad = |msg: String| Error::Parse {
                path: table.path.clone(),
                line: *line,
                msg,
            };
            let method = Method::parse(&f[idx[1]])
                .ok_or_else(|| bad(format!("unknown method {:?}", f[idx[1]])))?;
            let replicate = f[idx[2]]
                .parse()
                .map_err(|_| bad(format!("replicate {:?} is not a count", f[idx[2]])))?;
            Ok(ReportRow {
                scenario: f[idx[0]].clone(),
                method,
                replicate,
                auprc,
            })
        })
        .collect()
}
