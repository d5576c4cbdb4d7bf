use std::fs;
use std::path::Path;

use modalmix::select::{ComponentSummary, ModelComparisonReport, ModelRow};
use modalmix::{Family, GridDensity};
use serde::Serialize;

use crate::error::CliError;

/// Evenly spaced points per density file.
pub const DENSITY_POINTS: usize = 512;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComponentReport {
    pub component: usize,
    pub weight_mean: f64,
    pub weight_sd: f64,
    pub location_mean: f64,
    pub location_sd: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub precision_mean: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub precision_sd: Option<f64>,
}

impl ComponentReport {
    fn new(index: usize, c: &ComponentSummary) -> Self {
        Self {
            component: index + 1,
            weight_mean: c.weight_mean,
            weight_sd: c.weight_sd,
            location_mean: c.location_mean,
            location_sd: c.location_sd,
            precision_mean: c.precision_mean,
            precision_sd: c.precision_sd,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelReport {
    pub model: String,
    pub k: usize,
    #[serde(rename = "log_evidence_I")]
    pub log_evidence_i: f64,
    #[serde(rename = "log_evidence_chib_G")]
    pub log_evidence_chib_g: f64,
    #[serde(rename = "log_evidence_chib_M")]
    pub log_evidence_chib_m: f64,
    #[serde(rename = "prob_I")]
    pub prob_i: f64,
    #[serde(rename = "prob_G")]
    pub prob_g: f64,
    #[serde(rename = "prob_M")]
    pub prob_m: f64,
    pub components: Vec<ComponentReport>,
    pub diagnostic_tv: f64,
    pub diagnostic_flagged: bool,
    pub distinct_allocations: usize,
    pub seed: u64,
    pub runtime_ms: u128,
}

impl ModelReport {
    pub fn new(row: &ModelRow, seed: u64) -> Self {
        Self {
            model: format!("M{}", row.k),
            k: row.k,
            log_evidence_i: row.log_evidence_i,
            log_evidence_chib_g: row.log_evidence_chib_g,
            log_evidence_chib_m: row.log_evidence_chib_m,
            prob_i: row.prob_i,
            prob_g: row.prob_g,
            prob_m: row.prob_m,
            components: row.components.iter().enumerate().map(|(j, c)| ComponentReport::new(j, c)).collect(),
            diagnostic_tv: row.diagnostic.tv_distance,
            diagnostic_flagged: row.diagnostic.flagged,
            distinct_allocations: row.distinct_allocations,
            seed,
            runtime_ms: row.runtime_ms,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SamplerEcho {
    pub burn_in: usize,
    pub iterations: usize,
    pub thin: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiagnoseReport {
    pub k: usize,
    pub tv_distance: f64,
    pub threshold: f64,
    pub flagged: bool,
    /// `log_evidence_chib_G - log_evidence_I`.
    pub chib_g_minus_i: f64,
    /// Largest `|log pG - log pI|` over keys seen by both estimates.
    pub max_abs_log_ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleReport {
    pub k: usize,
    pub exact_log_evidence: f64,
    #[serde(rename = "log_evidence_I")]
    pub log_evidence_i: f64,
    pub tv_gibbs_vs_exact: f64,
    pub tv_renormalized_vs_exact: f64,
    pub max_tv: f64,
    /// Exact posterior mass of the visited allocations.
    pub visited_exact_mass: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub command: String,
    pub data: String,
    pub n: usize,
    pub family: Family,
    pub seed: u64,
    pub sampler: SamplerEcho,
    pub models: Vec<ModelReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub diagnostic: Option<DiagnoseReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle: Option<OracleReport>,
}

impl Report {
    pub fn models_from(cmp: &ModelComparisonReport) -> Vec<ModelReport> {
        cmp.rows.iter().map(|r| ModelReport::new(r, cmp.seed)).collect()
    }

    pub fn write_json(&self, dir: &Path) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(self).map_err(|e| CliError::Io(e.to_string()))?;
        text.push('\n');
        let path = dir.join("report.json");
        fs::write(&path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
    }
}

fn write_density(path: &Path, g: &GridDensity) -> Result<(), CliError> {
    let mut out = String::from("support,density\n");
    for (x, d) in g.resample_even(DENSITY_POINTS) {
        out.push_str(&format!("{x},{d}\n"));
    }
    fs::write(path, out).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

/// One CSV per component and parameter: `marginal_K{k}_comp{j}_{param}.csv`.
pub fn write_densities(dir: &Path, row: &ModelRow) -> Result<Vec<String>, CliError> {
    let mut names = Vec::new();
    for (j, m) in row.marginals.iter().enumerate() {
        let mut files = vec![("location", &m.location)];
        if let Some(w) = &m.weight {
            files.push(("weight", w));
        }
        if let Some(p) = &m.precision {
            files.push(("precision", p));
        }
        for (param, g) in files {
            let name = format!("marginal_K{}_comp{}_{param}.csv", row.k, j + 1);
            write_density(&dir.join(&name), g)?;
            names.push(name);
        }
    }
    Ok(names)
}
