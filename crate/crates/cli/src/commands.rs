use std::fs;
use std::path::{Component, Path, PathBuf};

use serde_json::{json, Value};
use topoprobe::dataset::{LabeledDataset, ModelKind};
use topoprobe::detector::{
    combine_reports, derivative_curve, find_crossover, prediction_curve, scaling_fit, DerivativeCurve, Method,
    PredictionCurve,
};
use topoprobe::fidelity::chi_f_curve_exact;
use topoprobe::lattice::LatticeGeometry;
use topoprobe::pipeline::{self, chi_f_report, ExperimentManifest, Role, TrainedPredictor};
use topoprobe::plot::{Plot, Reference, Series};
use topoprobe::predictor::BetaPredictor;
use topoprobe::stats::{mean, population_std};
use topoprobe::table::CurveTable;
use topoprobe::toric::stabilizer_dataset_exact;
use topoprobe::verify::run_checks;

use crate::args::{Command, ManifestArgs, MethodArg, RoleArg};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Failed(String),
    #[error(transparent)]
    Core(#[from] topoprobe::Error),
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(e.into())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Core(e.into())
    }
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Core(topoprobe::Error::Config { .. }) => 2,
            _ => 3,
        }
    }

    pub fn to_json(&self) -> Value {
        let (kind, path) = match self {
            CliError::Usage(_) => ("usage", None),
            CliError::Failed(_) => ("check_failed", None),
            CliError::Core(topoprobe::Error::Config { path, .. }) => ("config", Some(path.clone())),
            CliError::Core(e) => (e.kind(), None),
        };
        let message = match self {
            CliError::Core(topoprobe::Error::Config { message, .. }) => message.clone(),
            other => other.to_string(),
        };
        let mut err = json!({ "kind": kind, "message": message });
        if let Some(p) = path {
            err["path"] = Value::String(p);
        }
        json!({ "error": err })
    }
}

/// Joins a relative file name onto the output directory, refusing anything
/// that could escape it.
pub fn inside(out: &Path, name: &str) -> CliResult<PathBuf> {
    let rel = Path::new(name);
    if name.is_empty() || !rel.components().all(|c| matches!(c, Component::Normal(_))) {
        return Err(CliError::Usage(format!(
            "`{name}` must be a plain relative path inside the output directory"
        )));
    }
    let path = out.join(rel);
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    Ok(path)
}

/// Sets `value` at a dotted path, creating intermediate objects.
fn apply_override(doc: &mut Value, spec: &str) -> CliResult<()> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| CliError::Usage(format!("--set expects PATH=VALUE, got `{spec}`")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(CliError::Usage(format!("bad override path `{path}`")));
    }
    let mut node = doc;
    for (i, key) in keys.iter().enumerate() {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| topoprobe::Error::config(keys[..i].join("."), "is not an object"))?;
        if i + 1 == keys.len() {
            obj.insert(key.to_string(), value);
            return Ok(());
        }
        node = obj.entry(key.to_string()).or_insert_with(|| json!({}));
    }
    Ok(())
}

pub fn resolve_manifest(args: &ManifestArgs) -> CliResult<ExperimentManifest> {
    let text = fs::read_to_string(&args.manifest)?;
    let mut doc: Value =
        serde_json::from_str(&text).map_err(|e| topoprobe::Error::config("manifest", e.to_string()))?;
    for spec in &args.overrides {
        apply_override(&mut doc, spec)?;
    }
    if let Some(seed) = args.seed {
        apply_override(&mut doc, &format!("master_seed={seed}"))?;
    }
    Ok(ExperimentManifest::from_json(&doc.to_string())?)
}

fn prepare(args: &ManifestArgs) -> CliResult<ExperimentManifest> {
    let manifest = resolve_manifest(args)?;
    fs::create_dir_all(&args.out)?;
    if let Some(name) = &args.manifest_out {
        fs::write(inside(&args.out, name)?, manifest.to_json())?;
    }
    Ok(manifest)
}

fn read_dataset(dir: &Path, role: Role, manifest: &ExperimentManifest) -> CliResult<LabeledDataset> {
    let ds = LabeledDataset::read(dir, role.name())?;
    if ds.meta.kind != manifest.kind || ds.meta.n != manifest.n {
        return Err(topoprobe::Error::config(
            "kind",
            format!(
                "dataset is {:?} n={}, manifest is {:?} n={}",
                ds.meta.kind, ds.meta.n, manifest.kind, manifest.n
            ),
        )
        .into());
    }
    Ok(ds)
}

fn write_table(path: PathBuf, table: CurveTable, written: &mut Vec<String>) -> CliResult<()> {
    table.write(&path)?;
    written.push(path.display().to_string());
    Ok(())
}

fn write_json(path: PathBuf, value: &impl serde::Serialize, written: &mut Vec<String>) -> CliResult<()> {
    fs::write(&path, serde_json::to_string_pretty(value)? + "\n")?;
    written.push(path.display().to_string());
    Ok(())
}

fn method(m: MethodArg) -> Method {
    match m {
        MethodArg::Nn => Method::Nn,
        MethodArg::Dos => Method::Dos,
        MethodArg::ChiF => Method::ChiF,
    }
}

/// Curve of plaquette-averaged ⟨B_p⟩: mean over records and the spread of
/// the per-record averages.
pub fn stabilizer_curve(ds: &LabeledDataset) -> CurveTable {
    let mut table = CurveTable::new(&["beta", "b_mean", "b_spread"]);
    for (beta, records) in ds.group_by_beta() {
        let per_record: Vec<f64> = records.iter().map(|r| mean(&r.sample.features())).collect();
        table.push(vec![beta, mean(&per_record), population_std(&per_record)]);
    }
    table
}

fn scaling_point(path: &Path) -> CliResult<(usize, f64)> {
    let v: Value = serde_json::from_str(&fs::read_to_string(path)?)?;
    let n = v["n"].as_u64();
    let b = v["transition"]["beta_star"]
        .as_f64()
        .or_else(|| v["beta_star"].as_f64());
    match (n, b) {
        (Some(n), Some(b)) => Ok((n as usize, b)),
        _ => Err(topoprobe::Error::Format(format!("{}: expected a run report with n and β*", path.display())).into()),
    }
}

/// Runs one command, returning the JSON summary printed on stdout.
pub fn execute(command: Command) -> CliResult<Value> {
    match command {
        Command::Sample { manifest, role } => {
            let m = prepare(&manifest)?;
            let roles = match role {
                RoleArg::Train => vec![Role::Train],
                RoleArg::Eval => vec![Role::Eval],
                RoleArg::All => vec![Role::Train, Role::Eval],
            };
            let mut written = Vec::new();
            for r in roles {
                let ds = m.sample(r)?;
                ds.write(&manifest.out, r.name())?;
                for ext in ["json", "csv"] {
                    written.push(manifest.out.join(format!("{}.{ext}", r.name())).display().to_string());
                }
            }
            Ok(json!({ "written": written }))
        }
        Command::Train { manifest, data } => {
            let m = prepare(&manifest)?;
            let ds = read_dataset(data.as_deref().unwrap_or(&manifest.out), Role::Train, &m)?;
            let trained = m.train(&ds)?;
            let written: Vec<String> = trained
                .save(&manifest.out)?
                .iter()
                .map(|p| p.display().to_string())
                .collect();
            Ok(json!({ "written": written, "final_losses": trained.final_losses() }))
        }
        Command::Predict { manifest, data, models } => {
            let m = prepare(&manifest)?;
            let ds = read_dataset(data.as_deref().unwrap_or(&manifest.out), Role::Eval, &m)?;
            let trained = TrainedPredictor::load(&m, models.as_deref().unwrap_or(&manifest.out))?;
            let curves: Vec<PredictionCurve> = match &trained {
                TrainedPredictor::Dos(model) => vec![prediction_curve(&model.bind()?, &ds)?],
                TrainedPredictor::Nn(members) => members
                    .iter()
                    .map(|(net, _)| prediction_curve(net as &dyn BetaPredictor, &ds))
                    .collect::<topoprobe::Result<_>>()?,
            };
            let mut written = Vec::new();
            for (k, c) in curves.iter().enumerate() {
                write_table(manifest.out.join(format!("prediction_{k}.csv")), c.into(), &mut written)?;
            }
            Ok(json!({ "written": written }))
        }
        Command::Detect {
            curves,
            window,
            method: m,
            out,
        } => {
            if window == 0 {
                return Err(CliError::Usage("--window must be >= 1".into()));
            }
            fs::create_dir_all(&out)?;
            let mut written = Vec::new();
            let mut reports = Vec::new();
            for (k, path) in curves.iter().enumerate() {
                let table = CurveTable::read(path)?;
                let d = if table.column("mean_pred").is_some() {
                    derivative_curve(&PredictionCurve::try_from(&table)?)?
                } else {
                    DerivativeCurve::try_from(&table)?
                };
                reports.push(find_crossover(&d, window, method(m))?);
                write_table(out.join(format!("derivative_{k}.csv")), (&d).into(), &mut written)?;
            }
            let report = combine_reports(&reports)?;
            write_json(out.join("report.json"), &report, &mut written)?;
            Ok(json!({ "report": report, "written": written }))
        }
        Command::Fidelity { manifest, exact } => {
            let m = prepare(&manifest)?;
            let spec = m
                .fidelity
                .ok_or_else(|| topoprobe::Error::config("fidelity", "required by the fidelity command"))?;
            let curve = if exact {
                let preset = m.field.as_ref().expect("validated: fidelity implies a toric field");
                chi_f_curve_exact(m.n, &preset.resolve(&LatticeGeometry::new(m.n)?)?, &spec.grid.values())?
            } else {
                m.chi_f_reference()?.expect("fidelity spec present")
            };
            let report = chi_f_report(&curve)?;
            let mut written = Vec::new();
            write_table(manifest.out.join("chi_f.csv"), (&curve).into(), &mut written)?;
            write_json(manifest.out.join("chi_f_report.json"), &report, &mut written)?;
            Ok(json!({ "report": report, "written": written }))
        }
        Command::Stabilizer { manifest, exact } => {
            let m = prepare(&manifest)?;
            if m.kind != ModelKind::Stabilizer {
                return Err(topoprobe::Error::config("kind", "stabilizer command needs a stabilizer manifest").into());
            }
            let ds = if exact {
                let preset = m.field.as_ref().expect("validated: stabilizer runs have a field");
                let lambdas = preset.resolve(&LatticeGeometry::new(m.n)?)?;
                stabilizer_dataset_exact(m.n, &lambdas, &m.eval_grid.values(), m.eval_per_beta)?
            } else {
                m.sample(Role::Eval)?
            };
            ds.write(&manifest.out, "stabilizer")?;
            let mut written = vec![
                manifest.out.join("stabilizer.json").display().to_string(),
                manifest.out.join("stabilizer.csv").display().to_string(),
            ];
            write_table(
                manifest.out.join("stabilizer_curve.csv"),
                stabilizer_curve(&ds),
                &mut written,
            )?;
            Ok(json!({ "written": written }))
        }
        Command::Scaling {
            reports,
            mut points,
            out,
        } => {
            for path in &reports {
                points.push(scaling_point(path)?);
            }
            if points.is_empty() {
                return Err(CliError::Usage("scaling needs --report or --point inputs".into()));
            }
            fs::create_dir_all(&out)?;
            let fit = scaling_fit(&points)?;
            let mut written = Vec::new();
            write_json(out.join("scaling.json"), &fit, &mut written)?;
            Ok(json!({ "fit": fit, "written": written }))
        }
        Command::Plot {
            inputs,
            x,
            y,
            references,
            title,
            out,
            name,
        } => {
            if inputs.is_empty() {
                return Err(CliError::Usage("plot needs at least one --input curve".into()));
            }
            let target = inside(&out, &name)?;
            let mut plot = Plot::new(&title, &x, y.as_deref().unwrap_or(""));
            for path in &inputs {
                let table = CurveTable::read(path)?;
                let y_col =
                    match &y {
                        Some(c) => c.clone(),
                        None => table.columns.get(1).cloned().ok_or_else(|| {
                            topoprobe::Error::Format(format!("{}: needs two columns", path.display()))
                        })?,
                    };
                let missing = |c: &str| topoprobe::Error::Format(format!("{}: no column `{c}`", path.display()));
                let xs = table.column(&x).ok_or_else(|| missing(&x))?;
                let ys = table.column(&y_col).ok_or_else(|| missing(&y_col))?;
                plot.series.push(Series {
                    name: path
                        .file_stem()
                        .map(|s| s.to_string_lossy().into_owned())
                        .unwrap_or_default(),
                    points: xs.into_iter().zip(ys).collect(),
                });
            }
            plot.references = references.into_iter().map(|(name, x)| Reference { name, x }).collect();
            fs::write(&target, plot.to_svg()?)?;
            Ok(json!({ "written": [target.display().to_string()] }))
        }
        Command::Verify { samples, seed, out } => {
            let results = run_checks(samples, seed)?;
            for r in &results {
                eprintln!("{} {}: {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
            }
            if let Some(out) = out {
                fs::create_dir_all(&out)?;
                write_json(out.join("verify.json"), &results, &mut Vec::new())?;
            }
            let failed = results.iter().filter(|r| !r.passed).count();
            if failed > 0 {
                return Err(CliError::Failed(format!("{failed} of {} checks failed", results.len())));
            }
            Ok(json!({ "checks": results }))
        }
        Command::Run { manifest } => {
            let m = prepare(&manifest)?;
            let output = pipeline::run(&m, &manifest.out)?;
            Ok(json!({
                "report": output.report,
                "written": output.artifacts.iter().map(|p| p.display().to_string()).collect::<Vec<_>>(),
            }))
        }
        Command::Schema { out } => {
            let schema = serde_json::to_value(schemars::schema_for!(ExperimentManifest))?;
            if let Some(out) = out {
                fs::create_dir_all(&out)?;
                write_json(out.join("manifest.schema.json"), &schema, &mut Vec::new())?;
            }
            Ok(schema)
        }
    }
}
