//! Dataset construction, model training, RMSE evaluation and figure sweeps.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::fitting::{fit_record, fit_steady, fit_transient_optimized, FittedRecord};
use crate::geometry::{
    cohort_rng, dyn_to_mmhg, sample_cohort, BifurcationGeometry, CohortSpec, Outlet, DYN_PER_MMHG,
};
use crate::junction::{dp_rri, FlowState, JunctionLaw, RRICoefficients, Unified0dPoiseuille};
use crate::oracle::{
    Oracle, OracleConfig, SteadySample, TransientRun, TransientTrace, STEADY_FRACTIONS,
};
use crate::regressors::{
    self, split_dataset, CoefficientModel, Hyperparameters, Modality, ModelKind, PressureSamples,
    TrainedRegressor, TrainingData,
};

pub const FOUR_POINT_FRACTIONS: [f64; 4] = [0.25, 0.5, 0.75, 1.0];
pub const DEFAULT_TRAIN_FRACTION: f64 = 0.8;
/// Largest tolerated share of failed geometries.
pub const MAX_FAILURE_FRACTION: f64 = 0.05;

/// SplitMix64 finalizer, used to derive independent child seeds.
pub fn derive_seed(seed: u64, tag: u64, index: u64) -> u64 {
    let mut z = seed
        .wrapping_add(tag.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(index.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub cohort: CohortSpec,
    pub n_geometries: usize,
    pub seed: u64,
    pub oracle: OracleConfig,
    #[serde(default)]
    pub four_point: bool,
}

impl DatasetConfig {
    pub fn new(cohort: CohortSpec, n_geometries: usize, seed: u64, oracle: OracleConfig) -> Self {
        Self {
            cohort,
            n_geometries,
            seed,
            oracle,
            four_point: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.cohort.validate()?;
        self.oracle.validate()?;
        if self.n_geometries < 2 {
            return Err(Error::Config(format!(
                "n_geometries must be >= 2, got {}",
                self.n_geometries
            )));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn fingerprint(&self) -> String {
        sha256_hex(&serde_json::to_vec(self).expect("config serializes"))
    }

    fn steady_fractions(&self) -> &'static [f64] {
        if self.four_point {
            &FOUR_POINT_FRACTIONS
        } else {
            &STEADY_FRACTIONS
        }
    }
}

/// One geometry/outlet pair with its experiments and fits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub fingerprint: String,
    pub geometry_id: u64,
    pub inlet_velocity: f64,
    /// Peak inlet flow, cm³/s.
    pub q_peak: f64,
    pub fit: FittedRecord,
    pub steady: Vec<SteadySample>,
    pub trace: TransientTrace,
    /// Inlet flow at every trace sample.
    pub q_inlet: Vec<f64>,
}

impl DatasetRecord {
    pub fn outlet(&self) -> Outlet {
        self.fit.outlet
    }

    pub fn geometry(&self) -> &BifurcationGeometry {
        &self.fit.geometry
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeometryFailure {
    pub geometry_id: u64,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub config: DatasetConfig,
    pub fingerprint: String,
    pub records: Vec<DatasetRecord>,
    pub failures: Vec<GeometryFailure>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub fingerprint: String,
    pub config: DatasetConfig,
    pub n_geometries: usize,
    pub n_records: usize,
    pub geometry_ids: Vec<u64>,
    pub failures: Vec<GeometryFailure>,
}

fn run_geometry(
    config: &DatasetConfig,
    oracle: &Oracle,
    fingerprint: &str,
    id: u64,
) -> Result<[DatasetRecord; 2]> {
    let sample = sample_cohort(&config.cohort, &mut cohort_rng(config.seed, id))?;
    let geom = sample.geometry;
    let q_peak = sample.inlet_flow();
    let noise_seed = derive_seed(config.seed, 1, id);

    let mut steady: [Vec<SteadySample>; 2] = [Vec::new(), Vec::new()];
    for &frac in config.steady_fractions() {
        let pair = oracle.run_steady(&geom, q_peak, frac, noise_seed)?;
        steady[0].push(pair[0]);
        steady[1].push(pair[1]);
    }
    let run = oracle.run_transient(&geom, q_peak, noise_seed)?;

    let record = |outlet: Outlet| -> Result<DatasetRecord> {
        let k = outlet.index();
        let trace = run.outlets[k].clone();
        let fit = fit_record(geom, outlet, &steady[k], &trace, config.four_point)?;
        Ok(DatasetRecord {
            fingerprint: fingerprint.to_string(),
            geometry_id: id,
            inlet_velocity: sample.inlet_velocity,
            q_peak,
            fit,
            steady: steady[k].clone(),
            trace,
            q_inlet: run.q_inlet.clone(),
        })
    };
    Ok([record(Outlet::First)?, record(Outlet::Second)?])
}

/// Run every virtual experiment of a cohort. `jobs` bounds the worker
/// threads (`None` uses all cores); output does not depend on it.
pub fn build_dataset(config: &DatasetConfig, jobs: Option<usize>) -> Result<Dataset> {
    config.validate()?;
    let oracle = Oracle::new(config.oracle)?;
    let fingerprint = config.fingerprint();
    let work = || -> Vec<(u64, Result<[DatasetRecord; 2]>)> {
        (0..config.n_geometries as u64)
            .into_par_iter()
            .map(|id| (id, run_geometry(config, &oracle, &fingerprint, id)))
            .collect()
    };
    let results = match jobs {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| Error::Config(format!("cannot start {n} worker threads: {e}")))?
            .install(work),
        None => work(),
    };

    let mut records = Vec::with_capacity(2 * config.n_geometries);
    let mut failures = Vec::new();
    for (id, r) in results {
        match r {
            Ok(pair) => records.extend(pair),
            Err(e) => failures.push(GeometryFailure {
                geometry_id: id,
                message: e.to_string(),
            }),
        }
    }
    if failures.len() as f64 > MAX_FAILURE_FRACTION * config.n_geometries as f64 {
        return Err(Error::DatasetRejected {
            failed: failures.len(),
            total: config.n_geometries,
        });
    }
    Ok(Dataset {
        config: config.clone(),
        fingerprint,
        records,
        failures,
    })
}

impl Dataset {
    pub fn geometry_ids(&self) -> Vec<u64> {
        let mut ids: Vec<u64> = self.records.iter().map(|r| r.geometry_id).collect();
        ids.dedup();
        ids
    }

    pub fn manifest(&self) -> DatasetManifest {
        let geometry_ids = self.geometry_ids();
        DatasetManifest {
            fingerprint: self.fingerprint.clone(),
            config: self.config.clone(),
            n_geometries: geometry_ids.len(),
            n_records: self.records.len(),
            geometry_ids,
            failures: self.failures.clone(),
        }
    }

    /// Check record fingerprints and counts against the header.
    pub fn validate(&self) -> Result<()> {
        if self.fingerprint != self.config.fingerprint() {
            return Err(Error::Fingerprint {
                expected: self.config.fingerprint(),
                found: self.fingerprint.clone(),
            });
        }
        if let Some(bad) = self
            .records
            .iter()
            .find(|r| r.fingerprint != self.fingerprint)
        {
            return Err(Error::Fingerprint {
                expected: self.fingerprint.clone(),
                found: bad.fingerprint.clone(),
            });
        }
        let n_geom = self.geometry_ids().len();
        if n_geom + self.failures.len() != self.config.n_geometries
            || self.records.len() != 2 * n_geom
        {
            return Err(Error::Config(format!(
                "dataset holds {} records for {n_geom} geometries, header expects {} geometries",
                self.records.len(),
                self.config.n_geometries
            )));
        }
        Ok(())
    }

    /// Writes `manifest.json`, `records.jsonl` and `traces/geometry_NNNN.csv`.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir.join("traces"))?;
        let mut w = BufWriter::new(fs::File::create(dir.join("records.jsonl"))?);
        for r in &self.records {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        for pair in self.records.chunks(2) {
            let run = TransientRun {
                q_inlet: pair[0].q_inlet.clone(),
                p_inlet: Vec::new(),
                outlets: [pair[0].trace.clone(), pair[1].trace.clone()],
            };
            let path = dir
                .join("traces")
                .join(format!("geometry_{:04}.csv", pair[0].geometry_id));
            let mut f = BufWriter::new(fs::File::create(path)?);
            run.write_csv(&mut f)?;
            f.flush()?;
        }
        let f = BufWriter::new(fs::File::create(dir.join("manifest.json"))?);
        serde_json::to_writer_pretty(f, &self.manifest())?;
        Ok(())
    }

    pub fn read_dir(dir: &Path) -> Result<Self> {
        let manifest: DatasetManifest =
            serde_json::from_reader(BufReader::new(fs::File::open(dir.join("manifest.json"))?))?;
        let mut records = Vec::with_capacity(manifest.n_records);
        for line in BufReader::new(fs::File::open(dir.join("records.jsonl"))?).lines() {
            let line = line?;
            if !line.trim().is_empty() {
                records.push(serde_json::from_str(&line)?);
            }
        }
        let ds = Dataset {
            config: manifest.config,
            fingerprint: manifest.fingerprint,
            records,
            failures: manifest.failures,
        };
        ds.validate()?;
        if ds.records.len() != manifest.n_records {
            return Err(Error::Config(format!(
                "manifest lists {} records, records.jsonl holds {}",
                manifest.n_records,
                ds.records.len()
            )));
        }
        Ok(ds)
    }

    pub fn split(
        &self,
        train_fraction: f64,
        seed: u64,
    ) -> (Vec<&DatasetRecord>, Vec<&DatasetRecord>) {
        let refs: Vec<&DatasetRecord> = self.records.iter().collect();
        split_dataset(&refs, |r| r.geometry_id, train_fraction, seed)
    }
}

/// How the three coefficients of one block are obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FitModality {
    /// Steady resistances plus a separate inductance model.
    Standard,
    /// One model for all three transient-optimized coefficients.
    To,
}

impl FitModality {
    pub const BOTH: [FitModality; 2] = [FitModality::Standard, FitModality::To];

    pub fn as_str(self) -> &'static str {
        match self {
            FitModality::Standard => "standard",
            FitModality::To => "to",
        }
    }
}

impl std::fmt::Display for FitModality {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for FitModality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standard" => Ok(FitModality::Standard),
            "to" => Ok(FitModality::To),
            _ => Err(Error::Config(format!(
                "unknown modality '{s}'; expected one of: standard, to"
            ))),
        }
    }
}

fn trace_flows(trace: &TransientTrace) -> Vec<FlowState> {
    (1..trace.len())
        .map(|i| FlowState::new(trace.q[i], trace.q_dot[i]))
        .collect()
}

/// Regression rows for one modality: features, fitted targets and the
/// flow samples the network loss is evaluated on.
pub fn training_data(records: &[&DatasetRecord], modality: Modality) -> TrainingData {
    let mut data = TrainingData::default();
    let mut samples = Vec::with_capacity(records.len());
    for r in records {
        data.features.push(r.geometry().feature_vector(r.outlet()));
        let f = &r.fit;
        let (target, s) = match modality {
            Modality::SteadyRr => (
                vec![f.steady.0, f.steady.1],
                PressureSamples {
                    flows: r
                        .steady
                        .iter()
                        .map(|s| FlowState::steady(s.q_outlet))
                        .collect(),
                    dp: r.steady.iter().map(|s| s.dp).collect(),
                    fixed_resistance: None,
                },
            ),
            Modality::InductanceL => (
                vec![f.inductance],
                PressureSamples {
                    flows: trace_flows(&r.trace),
                    dp: r.trace.dp[1..].to_vec(),
                    fixed_resistance: Some(f.steady),
                },
            ),
            Modality::TransientTo => (
                f.to_coeffs.to_array().to_vec(),
                PressureSamples {
                    flows: trace_flows(&r.trace),
                    dp: r.trace.dp[1..].to_vec(),
                    fixed_resistance: None,
                },
            ),
        };
        data.targets.push(target);
        samples.push(s);
    }
    data.samples = Some(samples);
    data
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub kinds: Vec<ModelKind>,
    pub modalities: Vec<FitModality>,
    pub split_seed: u64,
    pub train_seed: u64,
    pub train_fraction: f64,
    pub hyperparameters: Hyperparameters,
}

impl TrainConfig {
    pub fn new(hyperparameters: Hyperparameters, split_seed: u64, train_seed: u64) -> Self {
        Self {
            kinds: ModelKind::ALL.to_vec(),
            modalities: FitModality::BOTH.to_vec(),
            split_seed,
            train_seed,
            train_fraction: DEFAULT_TRAIN_FRACTION,
            hyperparameters,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedEntry {
    pub kind: ModelKind,
    pub modality: FitModality,
    pub model: CoefficientModel,
}

/// Every model trained on one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSet {
    pub version: u32,
    pub dataset_fingerprint: String,
    pub config: TrainConfig,
    pub entries: Vec<TrainedEntry>,
}

impl ModelSet {
    pub fn get(&self, kind: ModelKind, modality: FitModality) -> Option<&CoefficientModel> {
        self.entries
            .iter()
            .find(|e| e.kind == kind && e.modality == modality)
            .map(|e| &e.model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = BufWriter::new(fs::File::create(path)?);
        serde_json::to_writer(f, self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let set: ModelSet = serde_json::from_reader(BufReader::new(fs::File::open(path)?))?;
        if set.version != regressors::MODEL_FORMAT_VERSION {
            return Err(Error::Config(format!(
                "model set version {} is not supported (expected {})",
                set.version,
                regressors::MODEL_FORMAT_VERSION
            )));
        }
        Ok(set)
    }
}

pub fn train_models(dataset: &Dataset, config: &TrainConfig) -> Result<ModelSet> {
    let (train, _) = dataset.split(config.train_fraction, config.split_seed);
    let hp = &config.hyperparameters;
    let mut entries = Vec::new();
    for &modality in &config.modalities {
        let parts: &[Modality] = match modality {
            FitModality::Standard => &[Modality::SteadyRr, Modality::InductanceL],
            FitModality::To => &[Modality::TransientTo],
        };
        let data: Vec<TrainingData> = parts.iter().map(|&m| training_data(&train, m)).collect();
        for &kind in &config.kinds {
            let mut fitted = Vec::with_capacity(parts.len());
            for (&part, d) in parts.iter().zip(&data) {
                let seed = derive_seed(config.train_seed, kind as u64, part as u64);
                let mut m: TrainedRegressor = regressors::train(kind, part, d, hp, seed)?;
                m.dataset_fingerprint = Some(dataset.fingerprint.clone());
                fitted.push(m);
            }
            let model = match modality {
                FitModality::Standard => {
                    let inductance = fitted.pop().expect("two parts");
                    let steady = fitted.pop().expect("two parts");
                    CoefficientModel::Standard { steady, inductance }
                }
                FitModality::To => CoefficientModel::TransientOptimized {
                    model: fitted.pop().expect("one part"),
                },
            };
            entries.push(TrainedEntry {
                kind,
                modality,
                model,
            });
        }
    }
    Ok(ModelSet {
        version: regressors::MODEL_FORMAT_VERSION,
        dataset_fingerprint: dataset.fingerprint.clone(),
        config: config.clone(),
        entries,
    })
}

#[derive(Debug, Clone, Copy, Default)]
struct SqErr {
    sum: f64,
    n: usize,
}

impl SqErr {
    fn push(&mut self, e: f64) {
        self.sum += e * e;
        self.n += 1;
    }

    fn merge(&mut self, o: SqErr) {
        self.sum += o.sum;
        self.n += o.n;
    }

    fn rmse_mmhg(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            (self.sum / self.n as f64).sqrt() / DYN_PER_MMHG
        }
    }
}

/// Squared errors of a pressure predictor over one record.
fn record_errors(
    r: &DatasetRecord,
    predict_steady: impl Fn(&SteadySample) -> f64,
    predict_transient: impl Fn(usize) -> f64,
) -> (SqErr, SqErr) {
    let mut steady = SqErr::default();
    for s in &r.steady {
        steady.push(predict_steady(s) - s.dp);
    }
    let mut transient = SqErr::default();
    for i in 1..r.trace.len() {
        transient.push(predict_transient(i) - r.trace.dp[i]);
    }
    (steady, transient)
}

fn rri_errors(r: &DatasetRecord, c: &RRICoefficients) -> (SqErr, SqErr) {
    record_errors(
        r,
        |s| dp_rri(c, FlowState::steady(s.q_outlet)),
        |i| dp_rri(c, FlowState::new(r.trace.q[i], r.trace.q_dot[i])),
    )
}

fn baseline_errors(r: &DatasetRecord, oracle: &OracleConfig) -> Result<(SqErr, SqErr)> {
    let law = Unified0dPoiseuille::new(r.geometry(), r.outlet(), oracle.fluid, 0.0)?;
    Ok(record_errors(
        r,
        |s| law.pressure_difference(FlowState::steady(s.q_outlet), s.inlet_fraction * r.q_peak),
        |i| law.pressure_difference(FlowState::steady(r.trace.q[i]), r.q_inlet[i]),
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RmsePair {
    pub train: f64,
    pub test: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeometryRmse {
    pub geometry_id: u64,
    pub steady_rmse_mmhg: f64,
    pub transient_rmse_mmhg: f64,
    /// Share of test geometries (percent) with a transient RMSE at or below this one.
    pub transient_percentile: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelReport {
    pub kind: ModelKind,
    pub modality: FitModality,
    pub steady_rmse_mmhg: RmsePair,
    pub transient_rmse_mmhg: RmsePair,
    /// Largest predicted inductance over all records.
    pub max_predicted_inductance: f64,
    pub per_geometry_test: Vec<GeometryRmse>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub cohort: String,
    pub dataset_fingerprint: String,
    pub split_seed: u64,
    pub train_fraction: f64,
    pub n_train_geometries: usize,
    pub n_test_geometries: usize,
    pub dt: f64,
    pub steady_fractions: Vec<f64>,
    pub hyperparameters: Hyperparameters,
    pub baseline_steady_rmse_mmhg: RmsePair,
    pub baseline_transient_rmse_mmhg: RmsePair,
    pub models: Vec<ModelReport>,
}

fn per_geometry(errs: &BTreeMap<u64, (SqErr, SqErr)>) -> Vec<GeometryRmse> {
    let transient: Vec<f64> = errs.values().map(|e| e.1.rmse_mmhg()).collect();
    let n = transient.len() as f64;
    errs.iter()
        .map(|(&geometry_id, (s, t))| {
            let v = t.rmse_mmhg();
            let at_or_below = transient.iter().filter(|&&x| x <= v).count() as f64;
            GeometryRmse {
                geometry_id,
                steady_rmse_mmhg: s.rmse_mmhg(),
                transient_rmse_mmhg: v,
                transient_percentile: 100.0 * at_or_below / n,
            }
        })
        .collect()
}

/// Train/test RMSE of every model plus the Unified0D+ baseline. RMSE pools
/// both outlets and every sample; transient rows skip `t = 0`.
pub fn evaluate_rmse(dataset: &Dataset, models: &ModelSet) -> Result<EvaluationReport> {
    if models.dataset_fingerprint != dataset.fingerprint {
        return Err(Error::Fingerprint {
            expected: dataset.fingerprint.clone(),
            found: models.dataset_fingerprint.clone(),
        });
    }
    for e in &models.entries {
        let parts: Vec<&TrainedRegressor> = match &e.model {
            CoefficientModel::Standard { steady, inductance } => vec![steady, inductance],
            CoefficientModel::TransientOptimized { model } => vec![model],
        };
        for p in parts {
            if p.dataset_fingerprint.as_deref() != Some(dataset.fingerprint.as_str()) {
                return Err(Error::Fingerprint {
                    expected: dataset.fingerprint.clone(),
                    found: p.dataset_fingerprint.clone().unwrap_or_default(),
                });
            }
        }
    }
    let cfg = &models.config;
    let (train, test) = dataset.split(cfg.train_fraction, cfg.split_seed);

    let pooled = |set: &[&DatasetRecord], f: &dyn Fn(&DatasetRecord) -> Result<(SqErr, SqErr)>| {
        let mut s = SqErr::default();
        let mut t = SqErr::default();
        let mut by_geom: BTreeMap<u64, (SqErr, SqErr)> = BTreeMap::new();
        for r in set {
            let (a, b) = f(r)?;
            s.merge(a);
            t.merge(b);
            let g = by_geom.entry(r.geometry_id).or_default();
            g.0.merge(a);
            g.1.merge(b);
        }
        Ok::<_, Error>((s, t, by_geom))
    };

    let baseline = |r: &DatasetRecord| baseline_errors(r, &dataset.config.oracle);
    let (bs_train, bt_train, _) = pooled(&train, &baseline)?;
    let (bs_test, bt_test, _) = pooled(&test, &baseline)?;

    let mut reports = Vec::with_capacity(models.entries.len());
    for e in &models.entries {
        let eval = |r: &DatasetRecord| {
            let c = e.model.predict(&r.geometry().feature_vector(r.outlet()))?;
            Ok(rri_errors(r, &c))
        };
        let (s_train, t_train, _) = pooled(&train, &eval)?;
        let (s_test, t_test, by_geom) = pooled(&test, &eval)?;
        let mut max_l = f64::NEG_INFINITY;
        for r in &dataset.records {
            let c = e.model.predict(&r.geometry().feature_vector(r.outlet()))?;
            max_l = max_l.max(c.inductance);
        }
        reports.push(ModelReport {
            kind: e.kind,
            modality: e.modality,
            steady_rmse_mmhg: RmsePair {
                train: s_train.rmse_mmhg(),
                test: s_test.rmse_mmhg(),
            },
            transient_rmse_mmhg: RmsePair {
                train: t_train.rmse_mmhg(),
                test: t_test.rmse_mmhg(),
            },
            max_predicted_inductance: max_l,
            per_geometry_test: per_geometry(&by_geom),
        });
    }

    let n_geoms = |set: &[&DatasetRecord]| {
        let mut ids: Vec<u64> = set.iter().map(|r| r.geometry_id).collect();
        ids.sort_unstable();
        ids.dedup();
        ids.len()
    };
    Ok(EvaluationReport {
        cohort: dataset.config.cohort.name.to_string(),
        dataset_fingerprint: dataset.fingerprint.clone(),
        split_seed: cfg.split_seed,
        train_fraction: cfg.train_fraction,
        n_train_geometries: n_geoms(&train),
        n_test_geometries: n_geoms(&test),
        dt: dataset.config.oracle.dt,
        steady_fractions: dataset.config.steady_fractions().to_vec(),
        hyperparameters: cfg.hyperparameters,
        baseline_steady_rmse_mmhg: RmsePair {
            train: bs_train.rmse_mmhg(),
            test: bs_test.rmse_mmhg(),
        },
        baseline_transient_rmse_mmhg: RmsePair {
            train: bt_train.rmse_mmhg(),
            test: bt_test.rmse_mmhg(),
        },
        models: reports,
    })
}

/// Root-mean-square of `pred - truth` in mmHg.
pub fn rmse_mmhg(pred: &[f64], truth: &[f64]) -> f64 {
    let mut acc = SqErr::default();
    for (p, t) in pred.iter().zip(truth) {
        acc.push(p - t);
    }
    acc.rmse_mmhg()
}

impl EvaluationReport {
    pub fn best(
        &self,
        modality: FitModality,
        metric: impl Fn(&ModelReport) -> f64,
    ) -> Option<&ModelReport> {
        self.models
            .iter()
            .filter(|m| m.modality == modality)
            .min_by(|a, b| metric(a).total_cmp(&metric(b)))
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(
            w,
            "cohort,kind,modality,train_steady_rmse_mmhg,test_steady_rmse_mmhg,train_transient_rmse_mmhg,test_transient_rmse_mmhg"
        )?;
        writeln!(
            w,
            "{},unified0d,baseline,{},{},{},{}",
            self.cohort,
            self.baseline_steady_rmse_mmhg.train,
            self.baseline_steady_rmse_mmhg.test,
            self.baseline_transient_rmse_mmhg.train,
            self.baseline_transient_rmse_mmhg.test
        )?;
        for m in &self.models {
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                self.cohort,
                m.kind,
                m.modality,
                m.steady_rmse_mmhg.train,
                m.steady_rmse_mmhg.test,
                m.transient_rmse_mmhg.train,
                m.transient_rmse_mmhg.test
            )?;
        }
        Ok(())
    }
}

/// One row of tidy figure data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    /// `steady` or `transient`.
    pub curve: &'static str,
    pub series: &'static str,
    pub outlet_radius: f64,
    pub q: f64,
    pub q_dot: f64,
    pub dp_dyn: f64,
    pub dp_mmhg: f64,
}

impl CurvePoint {
    fn new(
        curve: &'static str,
        series: &'static str,
        outlet_radius: f64,
        s: FlowState,
        dp: f64,
    ) -> Self {
        Self {
            curve,
            series,
            outlet_radius,
            q: s.q,
            q_dot: s.q_dot,
            dp_dyn: dp,
            dp_mmhg: dyn_to_mmhg(dp),
        }
    }
}

/// Three outlet radii at 10%, 50% and 90% of the range reachable from the
/// cohort's nominal inlet radius.
pub fn default_sweep_radii(spec: &CohortSpec) -> [f64; 3] {
    let r_in = spec.nominal().geometry.r_inlet;
    let (lo, hi) = match spec.outlet {
        crate::geometry::OutletRadiusRange::OutletRadius(i) => (i.lo, i.hi),
        crate::geometry::OutletRadiusRange::RadiusRatio(i) => (i.lo * r_in, i.hi * r_in),
    };
    [0.1, 0.5, 0.9].map(|f| lo + f * (hi - lo))
}

/// Steady ΔP-Q curves and transient loops of outlet 1 of the cohort's
/// nominal geometry, with that outlet's radius set to each of `radii`.
pub fn run_figure_sweep(
    spec: &CohortSpec,
    oracle_config: &OracleConfig,
    radii: &[f64],
    model: Option<&CoefficientModel>,
    n_points: usize,
    seed: u64,
) -> Result<Vec<CurvePoint>> {
    if n_points < 2 {
        return Err(Error::Config(format!(
            "n_points must be >= 2, got {n_points}"
        )));
    }
    let (lo, hi) = spec.outlet_bounds();
    if let Some(r) = radii.iter().find(|r| !(lo..=hi).contains(*r)) {
        return Err(Error::Config(format!(
            "sweep radius {r} outside cohort range [{lo}, {hi}]"
        )));
    }
    let oracle = Oracle::new(*oracle_config)?;
    let nominal = spec.nominal();
    let q_peak = nominal.inlet_flow();
    let outlet = Outlet::First;
    let mut out = Vec::new();

    for &radius in radii {
        let geom = nominal.geometry.with_outlet_radius(outlet, radius);
        geom.validate()?;
        let k = outlet.index();
        let baseline = Unified0dPoiseuille::new(&geom, outlet, oracle_config.fluid, 0.0)?;
        let predicted = model
            .map(|m| m.predict(&geom.feature_vector(outlet)))
            .transpose()?;

        let point = |frac: f64| -> Result<SteadySample> {
            let s = oracle.steady_state(&geom, frac * q_peak)?;
            Ok(SteadySample {
                q_outlet: s.outlets[k].q,
                dp: s.outlets[k].dp,
                inlet_fraction: frac,
            })
        };
        let (r_lin, r_quad) = fit_steady(&point(0.5)?, &point(1.0)?)?;
        let rr = RRICoefficients::new(r_lin, r_quad, 0.0);

        for i in 0..n_points {
            let frac = i as f64 / (n_points - 1) as f64;
            let s = point(frac)?;
            let st = FlowState::steady(s.q_outlet);
            out.push(CurvePoint::new("steady", "oracle", radius, st, s.dp));
            out.push(CurvePoint::new(
                "steady",
                "rr_fitted",
                radius,
                st,
                dp_rri(&rr, st),
            ));
            out.push(CurvePoint::new(
                "steady",
                "unified0d",
                radius,
                st,
                baseline.pressure_difference(st, frac * q_peak),
            ));
            if let Some(c) = &predicted {
                out.push(CurvePoint::new(
                    "steady",
                    "predicted",
                    radius,
                    st,
                    dp_rri(c, st),
                ));
            }
        }

        let run = oracle.run_transient(&geom, q_peak, seed)?;
        let trace = &run.outlets[k];
        let rri = fit_transient_optimized(trace)?.coeffs;
        for i in 1..trace.len() {
            let st = FlowState::new(trace.q[i], trace.q_dot[i]);
            out.push(CurvePoint::new(
                "transient",
                "oracle",
                radius,
                st,
                trace.dp[i],
            ));
            out.push(CurvePoint::new(
                "transient",
                "rri_fitted",
                radius,
                st,
                dp_rri(&rri, st),
            ));
            out.push(CurvePoint::new(
                "transient",
                "rr_fitted",
                radius,
                st,
                dp_rri(&rr, st),
            ));
            out.push(CurvePoint::new(
                "transient",
                "unified0d",
                radius,
                st,
                baseline.pressure_difference(FlowState::steady(st.q), run.q_inlet[i]),
            ));
            if let Some(c) = &predicted {
                out.push(CurvePoint::new(
                    "transient",
                    "predicted",
                    radius,
                    st,
                    dp_rri(c, st),
                ));
            }
        }
    }
    Ok(out)
}

pub fn write_curves_csv<W: Write>(mut w: W, points: &[CurvePoint]) -> std::io::Result<()> {
    writeln!(w, "curve,series,outlet_radius,q,q_dot,dp_dyn,dp_mmhg")?;
    for p in points {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            p.curve, p.series, p.outlet_radius, p.q, p.q_dot, p.dp_dyn, p.dp_mmhg
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{CohortName, Interval, OutletRadiusRange};
    use crate::oracle::OracleMode;

    fn small(name: CohortName, n: usize, mode: OracleMode) -> Dataset {
        let cfg = DatasetConfig::new(
            CohortSpec::builtin(name),
            n,
            11,
            OracleConfig::default().with_mode(mode),
        );
        build_dataset(&cfg, Some(2)).unwrap()
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(1e-300)
    }

    #[test]
    fn pure_mode_to_matches_standard() {
        let ds = small(CohortName::Pulmonary, 4, OracleMode::pure());
        ds.validate().unwrap();
        assert_eq!(ds.records.len(), 8);
        for r in &ds.records {
            let a = r.fit.to_coeffs.to_array();
            let b = r.fit.standard_coeffs().to_array();
            for (x, y) in a.iter().zip(&b) {
                assert!(rel(*x, *y) < 1e-8, "{a:?} vs {b:?}");
            }
            assert_eq!(r.trace.len(), 1001);
            assert_eq!(
                r.steady
                    .iter()
                    .map(|s| s.inlet_fraction)
                    .collect::<Vec<_>>(),
                vec![0.5, 1.0]
            );
        }
    }

    #[test]
    fn zero_width_cohort_gives_identical_records() {
        let spec = CohortSpec {
            name: CohortName::Isoradial,
            inlet_radius: Interval::point(0.5),
            outlet: OutletRadiusRange::OutletRadius(Interval::point(0.4)),
            outlet_angle_deg: Interval::point(45.0),
            inlet_velocity: Interval::point(60.0),
            outlet_sampling: crate::geometry::OutletSampling::Shared,
            length_jitter: Interval::point(0.0),
        };
        let mut cfg = DatasetConfig::new(spec, 2, 3, OracleConfig::default());
        cfg.oracle.period = 0.1;
        let ds = build_dataset(&cfg, None).unwrap();
        assert_eq!(ds.records.len(), 4);
        let a = &ds.records[0];
        let b = &ds.records[2];
        assert_eq!(a.fit, b.fit);
        assert_eq!(a.trace, b.trace);
    }

    #[test]
    fn jobs_do_not_change_output() {
        let mut cfg = DatasetConfig::new(
            CohortSpec::builtin(CohortName::Brachiocephalic),
            5,
            2,
            OracleConfig::default().with_mode(OracleMode::nonideal().with_noise(10.0)),
        );
        cfg.oracle.period = 0.2;
        let a = build_dataset(&cfg, Some(1)).unwrap();
        let b = build_dataset(&cfg, Some(4)).unwrap();
        assert_eq!(a, b);
        assert_eq!(cfg.fingerprint(), cfg.clone().fingerprint());
    }

    #[test]
    fn directory_round_trip() {
        let ds = small(CohortName::Isoradial, 3, OracleMode::nonideal());
        let dir = std::env::temp_dir().join(format!("rri-ds-{}", std::process::id()));
        ds.write_dir(&dir).unwrap();
        let back = Dataset::read_dir(&dir).unwrap();
        assert_eq!(back, ds);
        assert!(dir.join("traces/geometry_0002.csv").exists());
        fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn tampered_record_fails_validation() {
        let mut ds = small(CohortName::Isoradial, 2, OracleMode::pure());
        ds.records[1].fingerprint = "0".repeat(64);
        assert!(matches!(ds.validate(), Err(Error::Fingerprint { .. })));
    }

    #[test]
    fn rmse_definition() {
        let truth = [10.0, -20.0, 3.5];
        assert_eq!(rmse_mmhg(&truth, &truth), 0.0);
        let shifted: Vec<f64> = truth.iter().map(|t| t + DYN_PER_MMHG).collect();
        assert_eq!(rmse_mmhg(&shifted, &truth), 1.0);
    }

    #[test]
    fn gpr_interpolates_pure_training_set() {
        let ds = small(CohortName::Brachiocephalic, 20, OracleMode::pure());
        // alpha = 0.002 smooths at the 1e-2 mmHg level; near-interpolation needs a small alpha
        let mut hp = Hyperparameters::default();
        hp.gpr.alpha = 1e-6;
        let mut cfg = TrainConfig::new(hp, 5, 6);
        cfg.kinds = vec![ModelKind::Gpr, ModelKind::Linear];
        let models = train_models(&ds, &cfg).unwrap();
        let report = evaluate_rmse(&ds, &models).unwrap();
        let gpr = report
            .models
            .iter()
            .find(|m| m.kind == ModelKind::Gpr && m.modality == FitModality::Standard)
            .unwrap();
        assert!(
            gpr.steady_rmse_mmhg.train < 1e-3,
            "{}",
            gpr.steady_rmse_mmhg.train
        );
        assert_eq!(
            (report.n_train_geometries, report.n_test_geometries),
            (16, 4)
        );

        let mut other = models.clone();
        other.dataset_fingerprint = "f".repeat(64);
        assert!(matches!(
            evaluate_rmse(&ds, &other),
            Err(Error::Fingerprint { .. })
        ));
        assert_eq!(evaluate_rmse(&ds, &models).unwrap(), report);
    }

    #[test]
    fn sweep_properties() {
        let spec = CohortSpec::builtin(CohortName::Pulmonary);
        let mut cfg = OracleConfig::default();
        cfg.period = 0.5;
        let radii = default_sweep_radii(&spec);
        let pts = run_figure_sweep(&spec, &cfg, &radii, None, 9, 0).unwrap();
        let steady = |series: &str, r: f64| -> Vec<&CurvePoint> {
            pts.iter()
                .filter(|p| p.curve == "steady" && p.series == series && p.outlet_radius == r)
                .collect()
        };
        // RR curve reproduces the oracle at its two fitted operating points
        for r in radii {
            let o = steady("oracle", r);
            let rr = steady("rr_fitted", r);
            assert!(rel(rr[4].dp_dyn, o[4].dp_dyn) < 1e-8);
            assert!(rel(rr[8].dp_dyn, o[8].dp_dyn) < 1e-8);
        }
        let rr_loop: Vec<&CurvePoint> = pts
            .iter()
            .filter(|p| {
                p.curve == "transient" && p.series == "rr_fitted" && p.outlet_radius == radii[0]
            })
            .collect();
        let q: Vec<f64> = rr_loop.iter().map(|p| p.q).collect();
        let dp: Vec<f64> = rr_loop.iter().map(|p| p.dp_dyn).collect();
        assert!(
            crate::solver::loop_area(&q, &dp).abs()
                < 1e-6 * dp.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
        );
        assert!(run_figure_sweep(&spec, &cfg, &[10.0], None, 9, 0).is_err());
    }
}
