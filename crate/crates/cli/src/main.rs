use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use sparse_depth::dataset::{load_long_csv, save_long_csv, union_grid, DEFAULT_MAX_GRID_POINTS};
use sparse_depth::depth::{
    alpha_grid, mbd_fast_weighted, mbd_u_weighted, select_alpha_star, write_depth_csv, DepthVector, GridWeighting,
    DEFAULT_RHO_THRESHOLD,
};
use sparse_depth::experiments::{emit_outputs, run_induced_sparsity, run_simulation, ExperimentConfig, ExperimentOutput};
use sparse_depth::iev::{fit_model, iev_fit, IevConfig, PipelineConfig};
use sparse_depth::sim::{generate, sparsify, ModelId, ModelSpec, SparsityScheme, SparsitySpec};
use sparse_depth::{EvaluationGrid, SparseFunctionalDataset};

#[derive(Parser)]
#[command(name = "sparse-depth", version, about = "Depth of sparsely observed functional data")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Monte Carlo study on simulated curves.
    Simulate(SimulateArgs),
    /// Induce sparsity in a densely observed dataset and compare depths.
    Induce(InduceArgs),
    /// Reconstruct curves with bootstrap intervals.
    Fit(FitArgs),
    /// Rank curves by depth.
    Depth(DepthArgs),
    /// Write a simulated dataset as long CSV.
    Generate(GenerateArgs),
}

#[derive(Args)]
struct StudyArgs {
    #[arg(long)]
    replicates: Option<usize>,
    #[arg(long)]
    bootstrap: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Spearman threshold for selecting the interval level.
    #[arg(long, default_value_t = DEFAULT_RHO_THRESHOLD)]
    threshold: f64,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Skip the SVG scatter plots.
    #[arg(long)]
    no_plots: bool,
    /// Reselect smoothing parameters on every bootstrap resample.
    #[arg(long)]
    reselect_smoothing: bool,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=4))]
    model: u8,
    /// Comma-separated settings.
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4", value_parser = clap::value_parser!(u8).range(1..=4))]
    setting: Vec<u8>,
    #[arg(long)]
    n: Option<usize>,
    /// 100 replicates of 200 subjects with 100 bootstrap draws unless overridden.
    #[arg(long)]
    full_scale: bool,
    #[command(flatten)]
    study: StudyArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum Protocol {
    J5,
    J2to5,
    J2,
}

impl From<Protocol> for SparsityScheme {
    fn from(p: Protocol) -> Self {
        match p {
            Protocol::J5 => SparsityScheme::FixedJ5,
            Protocol::J2to5 => SparsityScheme::J2to5,
            Protocol::J2 => SparsityScheme::FixedJ2,
        }
    }
}

#[derive(Args)]
struct InduceArgs {
    /// Long CSV `subject_id,s,value` with every subject on the same grid.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum)]
    protocol: Protocol,
    /// Constrain estimates and bounds to be non-negative.
    #[arg(long)]
    clamp_nonnegative: bool,
    #[command(flatten)]
    study: StudyArgs,
}

#[derive(Args)]
struct InputArgs {
    /// Long CSV `subject_id,s,value`.
    #[arg(long)]
    input: PathBuf,
    /// Domain `LOWER,UPPER` (default: observed range).
    #[arg(long, value_delimiter = ',', num_args = 2)]
    domain: Option<Vec<f64>>,
    /// Evaluation grid size; the union of observed points is used when it is no larger.
    #[arg(long, default_value_t = DEFAULT_MAX_GRID_POINTS)]
    max_grid_points: usize,
    #[arg(long, default_value_t = 100)]
    bootstrap: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    clamp_nonnegative: bool,
    /// Reselect smoothing parameters on every bootstrap resample.
    #[arg(long)]
    reselect_smoothing: bool,
}

impl InputArgs {
    fn load(&self) -> Result<(SparseFunctionalDataset, EvaluationGrid)> {
        let domain = self.domain.as_ref().map(|d| (d[0], d[1]));
        let ds = load_long_csv(&self.input, domain).with_context(|| format!("reading {}", self.input.display()))?;
        let grid = union_grid(&ds, self.max_grid_points)?;
        Ok((ds, grid))
    }

    fn iev(&self, alphas: Vec<f64>) -> IevConfig {
        IevConfig {
            bootstrap: self.bootstrap,
            alphas,
            seed: self.seed,
            clamp_nonnegative: self.clamp_nonnegative,
            pipeline: PipelineConfig::default(),
            reselect_smoothing: self.reselect_smoothing,
        }
    }
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Interval levels to write (repeatable).
    #[arg(long = "alpha", default_value = "0.05")]
    alphas: Vec<f64>,
    /// Output directory for `reconstructions.csv` and `model.json`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Mbd,
    Mbdu,
}

#[derive(Args)]
struct DepthArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long, value_enum)]
    method: Method,
    /// Interval level for the uncertainty-aware depth.
    #[arg(long, conflicts_with = "auto_alpha")]
    alpha: Option<f64>,
    /// Select the level from the Spearman profile.
    #[arg(long)]
    auto_alpha: bool,
    #[arg(long, default_value_t = DEFAULT_RHO_THRESHOLD)]
    threshold: f64,
    /// Rank the observed curves directly (requires a common grid).
    #[arg(long, conflicts_with_all = ["alpha", "auto_alpha"])]
    observed: bool,
    #[arg(long)]
    trapezoid: bool,
    /// Output CSV `subject_id,method,alpha,depth,rank`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=4))]
    model: u8,
    #[arg(long, default_value_t = 200)]
    n: usize,
    /// Sparsify with this setting (1-4) instead of writing dense noisy curves.
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=4))]
    setting: Option<u8>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write the noiseless curves to this file.
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    if let Some(t) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .context("configuring worker threads")?;
    }
    match cli.command {
        Command::Simulate(args) => simulate(args),
        Command::Induce(args) => induce(args),
        Command::Fit(args) => fit(args),
        Command::Depth(args) => depth(args),
        Command::Generate(args) => generate_data(args),
    }
}

fn study_config(base: ExperimentConfig, study: &StudyArgs) -> ExperimentConfig {
    ExperimentConfig {
        replicates: study.replicates.unwrap_or(base.replicates),
        bootstrap: study.bootstrap.unwrap_or(base.bootstrap),
        seed: study.seed,
        rho_threshold: study.threshold,
        reselect_smoothing: study.reselect_smoothing,
        ..base
    }
}

fn simulate(args: SimulateArgs) -> Result<()> {
    let base = if args.full_scale {
        ExperimentConfig::full_scale()
    } else {
        ExperimentConfig::desk()
    };
    let mut config = study_config(base, &args.study);
    config.n = args.n.unwrap_or(config.n);
    let model = ModelId::try_from(args.model)?;
    let mut schemes = args
        .setting
        .iter()
        .map(|&s| SparsityScheme::setting(s))
        .collect::<Result<Vec<_>, _>>()?;
    schemes.sort();
    schemes.dedup();
    let output = run_simulation(model, &schemes, &config)?;
    finish(&output, &args.study)
}

fn induce(args: InduceArgs) -> Result<()> {
    let ds = load_long_csv(&args.input, None).with_context(|| format!("reading {}", args.input.display()))?;
    let mut config = study_config(ExperimentConfig::full_scale(), &args.study);
    config.clamp_nonnegative = args.clamp_nonnegative;
    let output = run_induced_sparsity(&ds, args.protocol.into(), &config)?;
    finish(&output, &args.study)
}

fn finish(output: &ExperimentOutput, study: &StudyArgs) -> Result<()> {
    let files = emit_outputs(output, &study.out, !study.no_plots)?;
    for cell in &output.report.cells {
        println!(
            "{:<16} completed {:>4}/{:<4} alpha* found {:>4}  rho0 {}  rhoU {}  delta {}  alpha* {}",
            cell.label(),
            cell.completed,
            cell.replicates,
            cell.alpha_star_found,
            show(cell.median_rho0, 3, ""),
            show(cell.median_rho_u, 3, ""),
            show(cell.median_delta_rho_pct, 2, "%"),
            show(cell.median_alpha_star, 2, ""),
        );
    }
    println!("wrote {}", files.records.parent().unwrap_or(Path::new(".")).display());
    Ok(())
}

fn show(v: Option<f64>, digits: usize, suffix: &str) -> String {
    v.map(|x| format!("{x:.digits$}{suffix}")).unwrap_or_else(|| "-".into())
}

fn fit(args: FitArgs) -> Result<()> {
    let (ds, grid) = args.input.load()?;
    let config = args.input.iev(args.alphas.clone());
    let fitted = iev_fit(&ds, &grid, &config)?;
    let model = fit_model(&ds, &grid, &config.pipeline)?;
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let rec_path = args.out.join("reconstructions.csv");
    fitted.write_csv(BufWriter::new(File::create(&rec_path)?))?;
    fs::write(args.out.join("model.json"), model.to_json()?)?;
    println!(
        "{} subjects on {} grid points, K = {}, sigma2 = {:.4e}; wrote {}",
        ds.len(),
        grid.len(),
        model.k,
        model.sigma2,
        args.out.display()
    );
    Ok(())
}

fn depth(args: DepthArgs) -> Result<()> {
    let weighting = if args.trapezoid {
        GridWeighting::Trapezoid
    } else {
        GridWeighting::Uniform
    };
    let (ds, grid) = args.input.load()?;
    let ids = ds.subject_ids();

    let result: DepthVector = if args.observed {
        if matches!(args.method, Method::Mbdu) {
            bail!("--observed ranks the raw curves and supports only --method mbd");
        }
        mbd_fast_weighted(&ds.to_dense()?, weighting)?
    } else {
        let fitted = iev_fit(&ds, &grid, &args.input.iev(vec![0.05]))?;
        let plain = mbd_fast_weighted(&fitted.point_estimates(), weighting)?;
        match (args.method, args.alpha, args.auto_alpha) {
            (Method::Mbd, None, false) => plain,
            (Method::Mbd, _, _) => bail!("--alpha and --auto-alpha apply only to --method mbdu"),
            (Method::Mbdu, Some(alpha), false) => {
                let b = fitted.bands(alpha)?;
                let mut d = mbd_u_weighted(&b.estimates, &b.lower, &b.upper, weighting)?;
                d.alpha = Some(alpha);
                d
            }
            (Method::Mbdu, None, true) => {
                let selection = select_alpha_star(&plain, &alpha_grid(), args.threshold, weighting, |alpha| {
                    let b = fitted.bands(alpha)?;
                    Ok((b.estimates, b.lower, b.upper))
                })?;
                match selection.selected {
                    Some(d) => d,
                    None => {
                        eprintln!("no level reaches rho <= {}; writing plain depth", args.threshold);
                        plain
                    }
                }
            }
            (Method::Mbdu, _, _) => bail!("--method mbdu needs --alpha A or --auto-alpha"),
        }
    };
    write_depth_csv(&ids, &result, BufWriter::new(File::create(&args.out)?))?;
    println!(
        "wrote {} depths ({}{}) to {}",
        ids.len(),
        result.method.as_str(),
        result.alpha.map(|a| format!(", alpha = {a}")).unwrap_or_default(),
        args.out.display()
    );
    Ok(())
}

fn generate_data(args: GenerateArgs) -> Result<()> {
    let sample = generate(&ModelSpec::new(ModelId::try_from(args.model)?, args.n, args.seed))?;
    let ds = match args.setting {
        Some(s) => sparsify(
            &sample.noisy,
            &SparsitySpec {
                scheme: SparsityScheme::setting(s)?,
                seed: args.seed,
            },
        )?,
        None => sample.noisy.to_sparse(None)?,
    };
    save_long_csv(&ds, &args.out)?;
    if let Some(path) = &args.truth {
        save_long_csv(&sample.truth.to_sparse(None)?, path)?;
    }
    println!("wrote {} subjects to {}", ds.len(), args.out.display());
    Ok(())
}
