use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use rri_core::geometry::{CohortName, CohortSpec};
use rri_core::oracle::OracleLaw;
use rri_core::pipeline::FitModality;
use rri_core::regressors::{Hyperparameters, ModelKind};

use crate::CliError;

/// Run configuration file. Every field is optional; command-line flags
/// override file values.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub cohort: Option<String>,
    /// Custom cohort spec, relative to the config file.
    pub cohort_spec: Option<PathBuf>,
    pub n: Option<usize>,
    pub seed: Option<u64>,
    pub split_seed: Option<u64>,
    pub oracle_mode: Option<OracleLaw>,
    pub noise_std: Option<f64>,
    pub kinds: Option<Vec<ModelKind>>,
    pub modality: Option<FitModality>,
    pub out: Option<PathBuf>,
    pub jobs: Option<usize>,
    pub hyperparameters: Option<Hyperparameters>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        if !path.is_file() {
            return Err(CliError::config(format!(
                "config file {} not found",
                path.display()
            )));
        }
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::config(format!("config file {}: {e}", path.display())))?;
        if let Some(spec) = &cfg.cohort_spec {
            if spec.is_relative() {
                let base = path.parent().unwrap_or(Path::new("."));
                cfg.cohort_spec = Some(base.join(spec));
            }
        }
        Ok(cfg)
    }
}

/// Resolve the cohort from a spec file or a builtin name.
pub fn resolve_cohort(name: Option<&str>, spec: Option<&Path>) -> Result<CohortSpec, CliError> {
    match (name, spec) {
        (_, Some(path)) => {
            if !path.is_file() {
                return Err(CliError::config(format!(
                    "cohort spec {} not found",
                    path.display()
                )));
            }
            let spec = CohortSpec::from_json_file(path)?;
            if let Some(n) = name {
                let named: CohortName = n.parse()?;
                if named != spec.name {
                    return Err(CliError::config(format!(
                        "--cohort {n} disagrees with cohort spec name '{}'",
                        spec.name
                    )));
                }
            }
            Ok(spec)
        }
        (Some(n), None) => Ok(CohortSpec::builtin(n.parse()?)),
        (None, None) => Err(CliError::config(
            "a cohort is required: pass --cohort {isoradial, pulmonary, brachiocephalic} or --cohort-spec",
        )),
    }
}

pub fn parse_kinds(raw: &[String]) -> Result<Vec<ModelKind>, CliError> {
    let mut kinds = Vec::new();
    for s in raw {
        let k: ModelKind = s.trim().parse()?;
        if !kinds.contains(&k) {
            kinds.push(k);
        }
    }
    if kinds.is_empty() {
        return Err(CliError::config(
            "--kinds must name at least one model kind",
        ));
    }
    Ok(kinds)
}
