use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "topoprobe",
    version,
    about = "Sample, train, detect and plot lattice-model crossover experiments"
)]
pub struct Cli {
    /// Worker threads for chains and ensemble training.
    #[arg(long, global = true, env = "TOPOPROBE_THREADS")]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw the training and evaluation datasets of a manifest.
    Sample {
        #[command(flatten)]
        manifest: ManifestArgs,
        #[arg(long, value_enum, default_value = "all")]
        role: RoleArg,
    },
    /// Fit the manifest's predictor to a training dataset.
    Train {
        #[command(flatten)]
        manifest: ManifestArgs,
        /// Directory holding train.json/train.csv (defaults to --out).
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Evaluate trained models on the evaluation dataset; one prediction curve per model.
    Predict {
        #[command(flatten)]
        manifest: ManifestArgs,
        /// Directory holding eval.json/eval.csv (defaults to --out).
        #[arg(long)]
        data: Option<PathBuf>,
        /// Directory holding dos.csv or model_k.tprb (defaults to --out).
        #[arg(long)]
        models: Option<PathBuf>,
    },
    /// Locate the peak of D(β) for one or more prediction or derivative curves.
    Detect {
        /// Prediction curve CSVs (beta,mean_pred,...) or derivative CSVs (beta,d).
        #[arg(long = "curve", required = true)]
        curves: Vec<PathBuf>,
        #[arg(long, default_value_t = topoprobe::detector::DEFAULT_SMOOTHING_WINDOW)]
        window: usize,
        #[arg(long, value_enum, default_value = "nn")]
        method: MethodArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// χ_F(β) reference curve for the manifest's field.
    Fidelity {
        #[command(flatten)]
        manifest: ManifestArgs,
        /// Enumerate exactly instead of sampling (n ≤ 3).
        #[arg(long)]
        exact: bool,
    },
    /// Plaquette-expectation dataset and its mean ⟨B_p⟩(β) curve on the evaluation grid.
    Stabilizer {
        #[command(flatten)]
        manifest: ManifestArgs,
        /// Use exact expectations instead of sampling (n ≤ 3).
        #[arg(long)]
        exact: bool,
    },
    /// Fit β* = a + b·ln(2N²) across lattice sizes.
    Scaling {
        /// Run or detection reports (report.json) carrying n and β*.
        #[arg(long = "report")]
        reports: Vec<PathBuf>,
        /// Explicit N=β* pairs.
        #[arg(long = "point", value_parser = parse_point)]
        points: Vec<(usize, f64)>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render curve CSVs as one SVG.
    Plot {
        #[arg(long = "input")]
        inputs: Vec<PathBuf>,
        /// Column for the x axis.
        #[arg(long, default_value = "beta")]
        x: String,
        /// Column for the y axis; defaults to the second column of each file.
        #[arg(long)]
        y: Option<String>,
        /// Dashed vertical line, as LABEL=X.
        #[arg(long = "reference", value_parser = parse_reference)]
        references: Vec<(String, f64)>,
        #[arg(long, default_value = "")]
        title: String,
        #[arg(long)]
        out: PathBuf,
        /// File name inside --out.
        #[arg(long, default_value = "plot.svg")]
        name: String,
    },
    /// Cross-check samplers and estimators against exact enumeration.
    Verify {
        #[arg(long, default_value_t = 20_000)]
        samples: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sample, train, detect and write every artifact of a manifest.
    Run {
        #[command(flatten)]
        manifest: ManifestArgs,
    },
    /// Print the JSON schema of experiment manifests.
    Schema {
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct ManifestArgs {
    /// Experiment manifest (JSON).
    #[arg(long)]
    pub manifest: PathBuf,
    /// Override a manifest value, as dotted.path=JSON (bare words are strings).
    #[arg(long = "set", value_name = "PATH=VALUE")]
    pub overrides: Vec<String>,
    /// Override master_seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory; nothing is written outside it.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the fully resolved manifest under this name inside --out.
    #[arg(long)]
    pub manifest_out: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RoleArg {
    Train,
    Eval,
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Nn,
    Dos,
    ChiF,
}

fn parse_point(s: &str) -> Result<(usize, f64), String> {
    let (n, b) = s.split_once('=').ok_or("expected N=BETA")?;
    let n = n.trim().parse().map_err(|_| format!("bad lattice size `{n}`"))?;
    let b = b.trim().parse().map_err(|_| format!("bad β* `{b}`"))?;
    Ok((n, b))
}

fn parse_reference(s: &str) -> Result<(String, f64), String> {
    let (name, x) = s.rsplit_once('=').ok_or("expected LABEL=X")?;
    let x = x.trim().parse().map_err(|_| format!("bad position `{x}`"))?;
    Ok((name.to_string(), x))
}
