//! Geometry-to-coefficient regressors.
//!
//! Six model families share one interface: features are z-scored with
//! training statistics, the family-specific fit runs in standardized space,
//! and predictions are mapped back to physical coefficient units. All
//! families except the neural network fit the coefficient targets directly;
//! the network instead minimizes the pressure-difference error those
//! coefficients produce on the recorded flow samples.

pub mod gpr;
pub mod knn;
pub mod linear;
pub mod nn;
pub mod standardize;
pub mod svr;
pub mod tree;

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{CohortName, FeatureVector, N_FEATURES};
use crate::junction::{FlowState, RRICoefficients};

pub use standardize::Standardizer;

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Knn,
    Dtree,
    Linear,
    Svr,
    Gpr,
    Nn,
}

impl ModelKind {
    pub const ALL: [ModelKind; 6] = [
        ModelKind::Knn,
        ModelKind::Dtree,
        ModelKind::Linear,
        ModelKind::Svr,
        ModelKind::Gpr,
        ModelKind::Nn,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Knn => "knn",
            ModelKind::Dtree => "dtree",
            ModelKind::Linear => "linear",
            ModelKind::Svr => "svr",
            ModelKind::Gpr => "gpr",
            ModelKind::Nn => "nn",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown model kind '{s}'; expected one of: knn, dtree, linear, svr, gpr, nn"
                ))
            })
    }
}

/// What a single trained model outputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    /// `[r_lin, r_quad]` from steady fits.
    SteadyRr,
    /// `[L]` fitted with steady resistances held fixed.
    InductanceL,
    /// `[r_lin, r_quad, L]` all from the transient fit.
    TransientTo,
}

impl Modality {
    pub fn output_dim(self) -> usize {
        match self {
            Modality::SteadyRr => 2,
            Modality::InductanceL => 1,
            Modality::TransientTo => 3,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Modality::SteadyRr => "steady_rr",
            Modality::InductanceL => "inductance_l",
            Modality::TransientTo => "transient_to",
        }
    }

    /// Regression basis of one flow sample for the pressure loss.
    fn basis(self, s: FlowState) -> Vec<f64> {
        match self {
            Modality::SteadyRr => vec![s.q, s.q * s.q],
            Modality::InductanceL => vec![s.q_dot],
            Modality::TransientTo => vec![s.q, s.q * s.q, s.q_dot],
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KnnParams {
    pub k: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeParams {
    pub max_depth: usize,
    pub min_samples_leaf: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvrParams {
    pub c: f64,
    pub epsilon: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GprParams {
    pub alpha: f64,
    pub rbf_length_scale: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    pub knn: KnnParams,
    pub dtree: TreeParams,
    pub svr: SvrParams,
    pub gpr: GprParams,
    pub nn: nn::NnSettings,
}

impl Default for Hyperparameters {
    fn default() -> Self {
        Self {
            knn: KnnParams { k: 7 },
            dtree: TreeParams {
                max_depth: 4,
                min_samples_leaf: 8,
            },
            svr: SvrParams {
                c: 1.4,
                epsilon: 0.029,
            },
            gpr: GprParams {
                alpha: 0.002,
                rbf_length_scale: 1.6,
            },
            nn: nn::NnSettings {
                hidden_size: 48,
                hidden_layers: 2,
                learning_rate: 0.018,
                lr_decay: 0.031,
                batch_size: 24,
                epochs: 500,
                patience: 50,
            },
        }
    }
}

impl Hyperparameters {
    /// Defaults, with the wider hidden layer used for the isoradial cohort.
    pub fn for_cohort(cohort: CohortName) -> Self {
        let mut hp = Self::default();
        if cohort == CohortName::Isoradial {
            hp.nn.hidden_size = 70;
        }
        hp
    }
}

/// Recorded flow samples of one training row, consumed by the network loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PressureSamples {
    pub flows: Vec<FlowState>,
    pub dp: Vec<f64>,
    /// `(r_lin, r_quad)` held fixed when only the inductance is learned.
    pub fixed_resistance: Option<(f64, f64)>,
}

impl PressureSamples {
    fn loss(&self, modality: Modality) -> Result<nn::PressureLoss> {
        let basis: Vec<Vec<f64>> = self.flows.iter().map(|s| modality.basis(*s)).collect();
        let target: Vec<f64> = self
            .flows
            .iter()
            .zip(&self.dp)
            .map(|(s, dp)| match (modality, self.fixed_resistance) {
                (Modality::InductanceL, Some((a, b))) => dp - a * s.q - b * s.q * s.q,
                _ => *dp,
            })
            .collect();
        nn::PressureLoss::new(&basis, &target)
    }
}

#[derive(Debug, Clone, Default)]
pub struct TrainingData {
    pub features: Vec<FeatureVector>,
    pub targets: Vec<Vec<f64>>,
    pub samples: Option<Vec<PressureSamples>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum ModelParams {
    Knn(knn::KnnModel),
    Dtree(tree::TreeModel),
    Linear(linear::LinearModel),
    Svr { machines: Vec<svr::SvrModel> },
    Gpr(gpr::GprModel),
    Nn(nn::NnModel),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedRegressor {
    pub version: u32,
    pub kind: ModelKind,
    pub modality: Modality,
    pub hyperparameters: Hyperparameters,
    pub feature_scaler: Standardizer,
    pub target_scaler: Standardizer,
    pub params: ModelParams,
    /// Fingerprint of the dataset the model was trained on.
    #[serde(default)]
    pub dataset_fingerprint: Option<String>,
}

pub fn train(
    kind: ModelKind,
    modality: Modality,
    data: &TrainingData,
    hp: &Hyperparameters,
    seed: u64,
) -> Result<TrainedRegressor> {
    let n = data.features.len();
    if n == 0 {
        return Err(Error::Training("no training rows".into()));
    }
    if data.targets.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: data.targets.len(),
        });
    }
    let out_dim = modality.output_dim();
    if let Some(bad) = data.targets.iter().find(|t| t.len() != out_dim) {
        return Err(Error::DimensionMismatch {
            expected: out_dim,
            got: bad.len(),
        });
    }
    if data
        .features
        .iter()
        .any(|f| f.0.iter().any(|v| !v.is_finite()))
    {
        return Err(Error::Training("non-finite feature value".into()));
    }
    if data.targets.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Training("non-finite target value".into()));
    }
    match (kind, &data.samples) {
        (ModelKind::Nn, None) => {
            return Err(Error::Training(
                "nn training requires per-row pressure samples".into(),
            ))
        }
        (ModelKind::Nn, Some(s)) if s.len() != n => {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: s.len(),
            })
        }
        _ => {}
    }

    let raw_x: Vec<&[f64]> = data.features.iter().map(|f| f.as_slice()).collect();
    let feature_scaler = Standardizer::fit(&raw_x);
    let target_scaler = Standardizer::fit(&data.targets);
    let x: Vec<Vec<f64>> = raw_x.iter().map(|r| feature_scaler.transform(r)).collect();
    let y: Vec<Vec<f64>> = data
        .targets
        .iter()
        .map(|t| target_scaler.transform(t))
        .collect();

    let params = match kind {
        ModelKind::Knn => ModelParams::Knn(knn::KnnModel::fit(&x, &y, hp.knn.k)?),
        ModelKind::Dtree => ModelParams::Dtree(tree::TreeModel::fit(
            &x,
            &y,
            hp.dtree.max_depth,
            hp.dtree.min_samples_leaf,
        )?),
        ModelKind::Linear => ModelParams::Linear(linear::LinearModel::fit(&x, &y)?),
        ModelKind::Svr => {
            let settings = svr::SvrSettings {
                c: hp.svr.c,
                epsilon: hp.svr.epsilon,
                gamma: 1.0 / N_FEATURES as f64,
                tolerance: 1e-3,
                max_iterations: 1_000_000,
            };
            let machines = (0..out_dim)
                .map(|t| {
                    let yt: Vec<f64> = y.iter().map(|r| r[t]).collect();
                    svr::fit(&x, &yt, &settings).map(|f| f.model)
                })
                .collect::<Result<_>>()?;
            ModelParams::Svr { machines }
        }
        ModelKind::Gpr => ModelParams::Gpr(gpr::GprModel::fit(
            &x,
            &y,
            hp.gpr.alpha,
            hp.gpr.rbf_length_scale,
        )?),
        ModelKind::Nn => {
            let samples = data.samples.as_ref().expect("checked above");
            let losses = samples
                .iter()
                .map(|s| s.loss(modality))
                .collect::<Result<Vec<_>>>()?;
            ModelParams::Nn(nn::train(
                &x,
                &losses,
                &target_scaler.mean,
                &target_scaler.std,
                &hp.nn,
                seed,
            )?)
        }
    };

    Ok(TrainedRegressor {
        version: MODEL_FORMAT_VERSION,
        kind,
        modality,
        hyperparameters: *hp,
        feature_scaler,
        target_scaler,
        params,
        dataset_fingerprint: None,
    })
}

impl TrainedRegressor {
    /// Physical-unit outputs for raw features.
    pub fn predict_slice(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.feature_scaler.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.feature_scaler.dim(),
                got: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("non-finite feature value".into()));
        }
        let z = self.feature_scaler.transform(x);
        let standardized = match &self.params {
            ModelParams::Knn(m) => m.predict(&z),
            ModelParams::Dtree(m) => m.predict(&z),
            ModelParams::Linear(m) => m.predict(&z),
            ModelParams::Svr { machines } => machines.iter().map(|m| m.predict(&z)).collect(),
            ModelParams::Gpr(m) => m.predict(&z),
            ModelParams::Nn(m) => return Ok(m.predict(&z)),
        };
        Ok(self.target_scaler.inverse(&standardized))
    }

    pub fn predict(&self, x: &FeatureVector) -> Result<Vec<f64>> {
        self.predict_slice(x.as_slice())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(f, self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::io::BufReader::new(std::fs::File::open(path)?);
        let model: TrainedRegressor = serde_json::from_reader(f)?;
        if model.version != MODEL_FORMAT_VERSION {
            return Err(Error::Config(format!(
                "model file version {} is not supported (expected {MODEL_FORMAT_VERSION})",
                model.version
            )));
        }
        Ok(model)
    }
}

/// Geometry-to-`RRICoefficients` map in either modality.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "modality", rename_all = "snake_case")]
pub enum CoefficientModel {
    /// Resistances from one model, inductance from another.
    Standard {
        steady: TrainedRegressor,
        inductance: TrainedRegressor,
    },
    TransientOptimized {
        model: TrainedRegressor,
    },
}

impl CoefficientModel {
    pub fn kind(&self) -> ModelKind {
        match self {
            CoefficientModel::Standard { steady, .. } => steady.kind,
            CoefficientModel::TransientOptimized { model } => model.kind,
        }
    }

    pub fn predict(&self, x: &FeatureVector) -> Result<RRICoefficients> {
        match self {
            CoefficientModel::Standard { steady, inductance } => {
                let r = steady.predict(x)?;
                let l = inductance.predict(x)?;
                Ok(RRICoefficients::new(r[0], r[1], l[0]))
            }
            CoefficientModel::TransientOptimized { model } => {
                let c = model.predict(x)?;
                Ok(RRICoefficients::new(c[0], c[1], c[2]))
            }
        }
    }
}

/// Number of training groups for an 80/20-style split of `n` groups.
pub fn train_count(n: usize, train_fraction: f64) -> usize {
    let raw = (train_fraction * n as f64 + 1e-9).floor() as usize;
    if n >= 2 {
        raw.clamp(1, n - 1)
    } else {
        raw.min(n)
    }
}

/// Split records by group key so every group lands wholly on one side.
pub fn split_dataset<T: Clone>(
    records: &[T],
    group: impl Fn(&T) -> u64,
    train_fraction: f64,
    seed: u64,
) -> (Vec<T>, Vec<T>) {
    let groups: Vec<u64> = records
        .iter()
        .map(&group)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut shuffled = groups.clone();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = train_count(groups.len(), train_fraction);
    let train_groups: BTreeSet<u64> = shuffled[..n_train].iter().copied().collect();
    records
        .iter()
        .cloned()
        .partition(|r| train_groups.contains(&group(r)))
}
