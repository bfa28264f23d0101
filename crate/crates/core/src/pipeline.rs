//! Experiment manifests and the end-to-end run they describe.
//!
//! A manifest fixes every input of a run: lattice, grids, sample counts,
//! sampler schedules, predictor and detector settings and one master seed.
//! Training data uses chain stream 0 and evaluation data stream 1 of that
//! seed; ensemble members and the χ_F reference get seeds derived from it.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::{linspace, LabeledDataset, ModelKind};
use crate::detector::{
    combine_reports, derivative_curve, find_crossover, prediction_curve, DerivativeCurve, Method, PredictionCurve,
    TransitionReport, DEFAULT_SMOOTHING_WINDOW,
};
use crate::error::{Error, Result};
use crate::fidelity::{chi_f_curve_mc, ChiFCurve};
use crate::igt::{sample_igt_grid, SamplerSettings};
use crate::lattice::LatticeGeometry;
use crate::parallel::map_indexed;
use crate::predictor::{
    dos_build, ensemble_train, Architecture, BetaPredictor, DosModel, LabelScaler, LayerSpec, LossHistory, NeuralNet,
    TrainConfig,
};
use crate::rng::mix;
use crate::table::CurveTable;
use crate::toric::{
    sample_sigma_x_grid, sample_sigma_z_grid, stabilizer_dataset, FieldPreset, StabilizerSettings, SIGMA_Z_MAX_N,
};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

const MODEL_SEED_TAG: u64 = 0x6d6f_6465_6c73;
const CHI_F_SEED_TAG: u64 = 0x6368_6966;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
pub struct GridSpec {
    pub start: f64,
    pub stop: f64,
    pub points: usize,
}

impl GridSpec {
    pub fn values(&self) -> Vec<f64> {
        linspace(self.start, self.stop, self.points)
    }

    pub fn step(&self) -> f64 {
        if self.points > 1 {
            (self.stop - self.start) / (self.points - 1) as f64
        } else {
            0.0
        }
    }

    fn validate(&self, path: &str) -> Result<()> {
        if self.points == 0 {
            return Err(Error::config(format!("{path}.points"), "must be >= 1"));
        }
        if !self.start.is_finite() || !self.stop.is_finite() || self.start < 0.0 {
            return Err(Error::config(format!("{path}.start"), "must be finite and >= 0"));
        }
        if self.points > 1 && !(self.stop > self.start) {
            return Err(Error::config(format!("{path}.stop"), "must exceed start"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
#[serde(rename_all = "snake_case")]
pub enum ArchPreset {
    /// Reduced filter counts with global pooling; the default.
    Desk,
    /// Full-width layer structure.
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
#[serde(untagged)]
pub enum ArchitectureSpec {
    Preset(ArchPreset),
    Layers { layers: Vec<LayerSpec> },
}

impl ArchitectureSpec {
    pub fn resolve(&self, kind: ModelKind, n: usize, labels: LabelScaler) -> Architecture {
        match self {
            ArchitectureSpec::Preset(ArchPreset::Desk) => Architecture::desk(kind, n, labels),
            ArchitectureSpec::Preset(ArchPreset::Full) => Architecture::full(kind, n, labels),
            ArchitectureSpec::Layers { layers } => Architecture {
                input: Architecture::input_for(kind, n),
                layers: layers.clone(),
                labels,
            },
        }
    }
}

fn default_ensemble() -> usize {
    5
}

fn default_architecture() -> ArchitectureSpec {
    ArchitectureSpec::Preset(ArchPreset::Desk)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum PredictorSpec {
    Dos,
    Nn {
        #[serde(default = "default_architecture")]
        architecture: ArchitectureSpec,
        #[serde(default)]
        train: TrainConfig,
        #[serde(default = "default_ensemble")]
        ensemble: usize,
    },
}

fn default_window() -> usize {
    DEFAULT_SMOOTHING_WINDOW
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
pub struct DetectorSpec {
    #[serde(default = "default_window")]
    pub smoothing_window: usize,
}

impl Default for DetectorSpec {
    fn default() -> Self {
        Self {
            smoothing_window: DEFAULT_SMOOTHING_WINDOW,
        }
    }
}

/// Markov-chain schedule shared by both roles; counts come from the manifest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
#[serde(default)]
pub struct ScheduleSpec {
    pub therm_sweeps: usize,
    pub stride_sweeps: usize,
    #[serde(default)]
    pub gauge_moves: bool,
}

impl Default for ScheduleSpec {
    fn default() -> Self {
        let s = SamplerSettings::new(1);
        Self {
            therm_sweeps: s.therm_sweeps,
            stride_sweeps: s.stride_sweeps,
            gauge_moves: false,
        }
    }
}

impl ScheduleSpec {
    pub fn settings(&self, count: usize) -> SamplerSettings {
        SamplerSettings {
            count,
            therm_sweeps: self.therm_sweeps,
            stride_sweeps: self.stride_sweeps,
            gauge_moves: self.gauge_moves,
        }
    }
}

/// Stabilizer-vector settings; the per-β record count comes from the manifest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
pub struct StabilizerSpec {
    pub mc_samples: usize,
}

/// χ_F reference curve computed alongside a toric run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
pub struct FidelitySpec {
    pub grid: GridSpec,
    pub mc_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
pub struct ExperimentManifest {
    pub id: String,
    pub kind: ModelKind,
    pub n: usize,
    pub master_seed: u64,
    pub train_grid: GridSpec,
    pub eval_grid: GridSpec,
    pub train_per_beta: usize,
    pub eval_per_beta: usize,
    #[serde(default)]
    pub sampler: ScheduleSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub field: Option<FieldPreset>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stabilizer: Option<StabilizerSpec>,
    pub predictor: PredictorSpec,
    #[serde(default)]
    pub detector: DetectorSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fidelity: Option<FidelitySpec>,
    #[serde(default = "tool_version")]
    pub tool_version: String,
}

fn tool_version() -> String {
    TOOL_VERSION.to_string()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Train,
    Eval,
}

impl Role {
    pub fn name(self) -> &'static str {
        match self {
            Role::Train => "train",
            Role::Eval => "eval",
        }
    }

    fn chain_index(self) -> u64 {
        match self {
            Role::Train => 0,
            Role::Eval => 1,
        }
    }
}

impl ExperimentManifest {
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let m: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::config(
                if path == "." { "manifest".into() } else { path },
                e.into_inner().to_string(),
            )
        })?;
        m.validate()?;
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes") + "\n"
    }

    pub fn validate(&self) -> Result<()> {
        if self.id.is_empty() || self.id.contains(['/', '\\']) || self.id.starts_with('.') {
            return Err(Error::config("id", "must be a non-empty file-name-safe string"));
        }
        LatticeGeometry::new(self.n).map_err(|e| Error::config("n", e.to_string()))?;
        if self.kind == ModelKind::ToricZ && self.n > SIGMA_Z_MAX_N {
            return Err(Error::config(
                "n",
                format!("σz limited to n ≤ {SIGMA_Z_MAX_N}, got {}", self.n),
            ));
        }
        self.train_grid.validate("train_grid")?;
        self.eval_grid.validate("eval_grid")?;
        if self.train_per_beta == 0 {
            return Err(Error::config("train_per_beta", "must be >= 1"));
        }
        if self.eval_per_beta == 0 {
            return Err(Error::config("eval_per_beta", "must be >= 1"));
        }
        if self.sampler.stride_sweeps == 0 {
            return Err(Error::config("sampler.stride_sweeps", "must be >= 1"));
        }
        match self.kind {
            ModelKind::Igt => {
                if self.field.is_some() {
                    return Err(Error::config("field", "not used by igt runs"));
                }
            }
            _ => {
                let preset = self
                    .field
                    .as_ref()
                    .ok_or_else(|| Error::config("field", "required for toric runs"))?;
                preset
                    .resolve(&LatticeGeometry::new(self.n)?)
                    .map_err(|e| Error::config("field", e.to_string()))?;
            }
        }
        match (self.kind, &self.stabilizer) {
            (ModelKind::Stabilizer, None) => return Err(Error::config("stabilizer", "required for stabilizer runs")),
            (ModelKind::Stabilizer, Some(s)) if s.mc_samples == 0 => {
                return Err(Error::config("stabilizer.mc_samples", "must be >= 1"))
            }
            (ModelKind::Stabilizer, _) => {}
            (_, Some(_)) => return Err(Error::config("stabilizer", "only used by stabilizer runs")),
            _ => {}
        }
        if let Some(f) = &self.fidelity {
            if self.kind == ModelKind::Igt {
                return Err(Error::config("fidelity", "χ_F reference needs a toric field"));
            }
            f.grid.validate("fidelity.grid")?;
            if f.mc_samples < 2 {
                return Err(Error::config("fidelity.mc_samples", "must be >= 2"));
            }
        }
        match &self.predictor {
            PredictorSpec::Dos => {
                if self.kind != ModelKind::Igt {
                    return Err(Error::config(
                        "predictor.type",
                        "density of states applies to igt runs only",
                    ));
                }
            }
            PredictorSpec::Nn {
                architecture,
                train,
                ensemble,
            } => {
                if *ensemble == 0 {
                    return Err(Error::config("predictor.ensemble", "must be >= 1"));
                }
                train
                    .check()
                    .map_err(|e| Error::config("predictor.train", e.to_string()))?;
                NeuralNet::init(architecture.resolve(self.kind, self.n, self.label_scaler()?), 0)
                    .map_err(|e| Error::config("predictor.architecture", e.to_string()))?;
            }
        }
        if self.detector.smoothing_window == 0 {
            return Err(Error::config("detector.smoothing_window", "must be >= 1"));
        }
        if self.eval_grid.points < 3 {
            return Err(Error::config("eval_grid.points", "derivative needs at least 3 points"));
        }
        Ok(())
    }

    /// Labels are scaled by the training grid's range.
    pub fn label_scaler(&self) -> Result<LabelScaler> {
        LabelScaler::new(self.train_grid.start, self.train_grid.stop)
            .map_err(|e| Error::config("train_grid", e.to_string()))
    }

    pub fn method(&self) -> Method {
        match self.predictor {
            PredictorSpec::Dos => Method::Dos,
            PredictorSpec::Nn { .. } => Method::Nn,
        }
    }

    pub fn model_seeds(&self) -> Vec<u64> {
        let k = match self.predictor {
            PredictorSpec::Dos => 1,
            PredictorSpec::Nn { ensemble, .. } => ensemble,
        };
        (0..k as u64)
            .map(|i| mix(mix(self.master_seed ^ MODEL_SEED_TAG) ^ i))
            .collect()
    }

    pub fn sample(&self, role: Role) -> Result<LabeledDataset> {
        let (grid, count) = match role {
            Role::Train => (self.train_grid.values(), self.train_per_beta),
            Role::Eval => (self.eval_grid.values(), self.eval_per_beta),
        };
        let chain = role.chain_index();
        let settings = self.sampler.settings(count);
        let field = match &self.field {
            Some(p) => Some(p.resolve(&LatticeGeometry::new(self.n)?)?),
            None => None,
        };
        let field_ref = || field.as_ref().expect("validated: toric runs have a field");
        let mut ds = match self.kind {
            ModelKind::Igt => sample_igt_grid(self.n, &grid, &settings, self.master_seed, chain)?,
            ModelKind::ToricX => sample_sigma_x_grid(self.n, field_ref(), &grid, &settings, self.master_seed, chain)?,
            ModelKind::ToricZ => sample_sigma_z_grid(self.n, field_ref(), &grid, &settings, self.master_seed, chain)?,
            ModelKind::Stabilizer => {
                let spec = self.stabilizer.expect("validated: stabilizer settings present");
                let s = StabilizerSettings {
                    estimates: count,
                    mc_samples: spec.mc_samples,
                    therm_sweeps: self.sampler.therm_sweeps,
                    stride_sweeps: self.sampler.stride_sweeps,
                };
                stabilizer_dataset(self.n, field_ref(), &grid, &s, self.master_seed, chain)?
            }
        };
        ds.meta.field = self.field.clone();
        ds.meta.role = Some(role.name().to_string());
        Ok(ds)
    }

    pub fn train(&self, train: &LabeledDataset) -> Result<TrainedPredictor> {
        match &self.predictor {
            PredictorSpec::Dos => Ok(TrainedPredictor::Dos(dos_build(train)?.model())),
            PredictorSpec::Nn {
                architecture,
                train: cfg,
                ..
            } => {
                let arch = architecture.resolve(self.kind, self.n, self.label_scaler()?);
                Ok(TrainedPredictor::Nn(ensemble_train(
                    train,
                    &arch,
                    cfg,
                    &self.model_seeds(),
                )?))
            }
        }
    }

    pub fn chi_f_reference(&self) -> Result<Option<ChiFCurve>> {
        let (Some(spec), Some(preset)) = (&self.fidelity, &self.field) else {
            return Ok(None);
        };
        let lambdas = preset.resolve(&LatticeGeometry::new(self.n)?)?;
        let settings = SamplerSettings {
            count: spec.mc_samples,
            therm_sweeps: self.sampler.therm_sweeps,
            stride_sweeps: self.sampler.stride_sweeps,
            gauge_moves: false,
        };
        let seed = mix(self.master_seed ^ CHI_F_SEED_TAG);
        chi_f_curve_mc(self.n, &lambdas, &spec.grid.values(), &settings, seed).map(Some)
    }
}

pub enum TrainedPredictor {
    Dos(DosModel),
    Nn(Vec<(NeuralNet, LossHistory)>),
}

impl TrainedPredictor {
    pub fn members(&self) -> usize {
        match self {
            TrainedPredictor::Dos(_) => 1,
            TrainedPredictor::Nn(m) => m.len(),
        }
    }

    pub fn final_losses(&self) -> Vec<f64> {
        match self {
            TrainedPredictor::Dos(_) => Vec::new(),
            TrainedPredictor::Nn(m) => m.iter().map(|(_, h)| h.final_train()).collect(),
        }
    }

    /// Writes `dos.csv`, or `model_k.tprb` and `loss_k.json` per member.
    pub fn save(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let mut written = Vec::new();
        match self {
            TrainedPredictor::Dos(model) => {
                let p = dir.join("dos.csv");
                model.save(&p)?;
                written.push(p);
            }
            TrainedPredictor::Nn(members) => {
                for (k, (net, hist)) in members.iter().enumerate() {
                    let p = dir.join(format!("model_{k}.tprb"));
                    net.save(&p)?;
                    written.push(p);
                    let p = dir.join(format!("loss_{k}.json"));
                    std::fs::write(&p, serde_json::to_string_pretty(hist)? + "\n")?;
                    written.push(p);
                }
            }
        }
        Ok(written)
    }

    /// Reads what [`TrainedPredictor::save`] wrote for this manifest.
    pub fn load(manifest: &ExperimentManifest, dir: &Path) -> Result<Self> {
        match manifest.predictor {
            PredictorSpec::Dos => Ok(TrainedPredictor::Dos(DosModel::load(manifest.n, &dir.join("dos.csv"))?)),
            PredictorSpec::Nn { ensemble, .. } => {
                let members = (0..ensemble)
                    .map(|k| -> Result<_> {
                        let net = NeuralNet::load(&dir.join(format!("model_{k}.tprb")))?;
                        let hist = serde_json::from_str(&std::fs::read_to_string(dir.join(format!("loss_{k}.json")))?)?;
                        Ok((net, hist))
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(TrainedPredictor::Nn(members))
            }
        }
    }
}

/// Per-member curves and the combined report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub curves: Vec<PredictionCurve>,
    pub derivatives: Vec<DerivativeCurve>,
    pub members: Vec<TransitionReport>,
    pub report: TransitionReport,
}

pub fn detect_with(
    predictors: &[&dyn BetaPredictor],
    eval: &LabeledDataset,
    window: usize,
    method: Method,
) -> Result<Detection> {
    let per_member = map_indexed(predictors.len(), |k| -> Result<_> {
        let curve = prediction_curve(predictors[k], eval)?;
        let d = derivative_curve(&curve)?;
        let r = find_crossover(&d, window, method)?;
        Ok((curve, d, r))
    });
    let mut det = Detection {
        curves: Vec::new(),
        derivatives: Vec::new(),
        members: Vec::new(),
        report: TransitionReport {
            beta_star: 0.0,
            uncertainty: 0.0,
            method,
            grid_resolution: 0.0,
            window,
            status: crate::detector::PeakStatus::NoPeak,
            members: Vec::new(),
        },
    };
    for m in per_member {
        let (c, d, r) = m?;
        det.curves.push(c);
        det.derivatives.push(d);
        det.members.push(r);
    }
    det.report = combine_reports(&det.members)?;
    Ok(det)
}

pub fn detect(manifest: &ExperimentManifest, trained: &TrainedPredictor, eval: &LabeledDataset) -> Result<Detection> {
    let window = manifest.detector.smoothing_window;
    match trained {
        TrainedPredictor::Dos(model) => {
            let bound = model.bind()?;
            detect_with(&[&bound], eval, window, Method::Dos)
        }
        TrainedPredictor::Nn(members) => {
            let refs: Vec<&dyn BetaPredictor> = members.iter().map(|(m, _)| m as &dyn BetaPredictor).collect();
            detect_with(&refs, eval, window, Method::Nn)
        }
    }
}

/// χ_F peak as a transition report, for comparison with model peaks.
pub fn chi_f_report(curve: &ChiFCurve) -> Result<TransitionReport> {
    let d = DerivativeCurve {
        beta: curve.beta_grid.clone(),
        d: curve.chi_values.clone(),
    };
    find_crossover(&d, 1, Method::ChiF)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub id: String,
    pub kind: ModelKind,
    pub n: usize,
    pub transition: TransitionReport,
    pub members: Vec<TransitionReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<TransitionReport>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub final_losses: Vec<f64>,
}

/// Everything a manifest run produces, plus the files written.
pub struct RunOutput {
    pub report: RunReport,
    pub detection: Detection,
    pub chi_f: Option<ChiFCurve>,
    pub artifacts: Vec<PathBuf>,
}

/// Runs sampling, training, detection and the optional χ_F reference, writing
/// all artifacts into `out_dir`.
pub fn run(manifest: &ExperimentManifest, out_dir: &Path) -> Result<RunOutput> {
    manifest.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let mut artifacts = Vec::new();
    let mut record = |p: PathBuf| -> PathBuf {
        artifacts.push(p.clone());
        p
    };
    std::fs::write(record(out_dir.join("manifest.json")), manifest.to_json())?;

    let train = manifest.sample(Role::Train)?;
    train.write(out_dir, "train")?;
    record(out_dir.join("train.json"));
    record(out_dir.join("train.csv"));
    let eval = manifest.sample(Role::Eval)?;
    eval.write(out_dir, "eval")?;
    record(out_dir.join("eval.json"));
    record(out_dir.join("eval.csv"));

    let trained = manifest.train(&train)?;
    for p in trained.save(out_dir)? {
        record(p);
    }
    let final_losses = trained.final_losses();

    let detection = detect(manifest, &trained, &eval)?;
    for (k, (c, d)) in detection.curves.iter().zip(&detection.derivatives).enumerate() {
        CurveTable::from(c).write(&record(out_dir.join(format!("prediction_{k}.csv"))))?;
        CurveTable::from(d).write(&record(out_dir.join(format!("derivative_{k}.csv"))))?;
    }

    let chi_f = manifest.chi_f_reference()?;
    let reference = match &chi_f {
        Some(c) => {
            CurveTable::from(c).write(&record(out_dir.join("chi_f.csv")))?;
            Some(chi_f_report(c)?)
        }
        None => None,
    };

    let report = RunReport {
        id: manifest.id.clone(),
        kind: manifest.kind,
        n: manifest.n,
        transition: detection.report.clone(),
        members: detection.members.clone(),
        reference,
        final_losses,
    };
    std::fs::write(
        record(out_dir.join("report.json")),
        serde_json::to_string_pretty(&report)? + "\n",
    )?;
    Ok(RunOutput {
        report,
        detection,
        chi_f,
        artifacts,
    })
}
