//! Command-line front end for the attainment toolkit.
//!
//! Exit codes: 0 success, 2 configuration error, 3 I/O error (missing or
//! malformed files), 4 numerical failure.

mod manifest;

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use attainment::calibration::{calibrated_predict, CalibrationSet, LinearMap};
use attainment::dataset::{load_dataset, save_dataset};
use attainment::domain::{
    Dimension, DomainBounds, FeatureParameterPoint, FeatureVector, GainVector, DIMS,
};
use attainment::error::Error;
use attainment::gp::{FitConfig, FittedModel};
use attainment::region::{slice_grid, write_grid_csv, write_grid_svg, AttainmentQuery, SliceSpec};
use attainment::simulator::{reference_bounds, run_trial_traced, SimConfig};
use attainment::solver::{solve, FreezeMask, SolverConfig};
use attainment::TrialRecord;

use manifest::{ManifestBuilder, OutputLock};

#[derive(Parser)]
#[command(
    name = "attainment",
    version,
    about = "Learn attainment regions from binary trials and search them for fixes"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run simulated trials and write a dataset
    Sample(SampleArgs),
    /// Fit a success-probability model to a dataset
    Fit(FitArgs),
    /// Predict the success probability at a point
    Predict(PredictArgs),
    /// Evaluate a 2-D region slice to CSV (and optionally SVG)
    Region(RegionArgs),
    /// Find the nearest attainable point under a freeze mask
    Solve(SolveArgs),
    /// Fit sim-to-real linear maps from endpoint readings
    Calibrate(CalibrateArgs),
}

#[derive(Args, Serialize)]
struct SampleArgs {
    /// Use the built-in ~420-point reference plan (seeds derived per trial)
    #[arg(long, conflicts_with = "point")]
    reference_plan: bool,
    /// Add one plan point, e.g. ice=0,angle=5,kp=1.0[,ki=0][,kd=0]
    #[arg(long)]
    point: Vec<String>,
    /// Explicit trial seeds (cartesian with the plan points)
    #[arg(long, value_delimiter = ',', conflicts_with = "reference_plan")]
    seeds: Vec<u64>,
    /// Base seed
    #[arg(long, env = "ATTAINMENT_SEED", default_value_t = 0)]
    seed: u64,
    /// Write the per-step trace CSV of the first trial
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Output dataset (JSON lines)
    #[arg(short, long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct FitArgs {
    /// Input dataset
    dataset: PathBuf,
    /// Output model file (JSON)
    #[arg(short, long)]
    out: PathBuf,
    #[arg(long, env = "ATTAINMENT_SEED", default_value_t = 0)]
    seed: u64,
    /// Optimizer starts
    #[arg(long, default_value_t = 8)]
    starts: usize,
    /// Optimizer iteration cap per start
    #[arg(long, default_value_t = 100)]
    max_iters: usize,
}

#[derive(Args, Serialize)]
struct PredictArgs {
    /// Fitted model file
    model: PathBuf,
    /// Query point as ice,angle,kp,ki,kd (clamped into bounds with a warning)
    #[arg(short = 'x', long = "point", allow_hyphen_values = true)]
    point: Option<String>,
    /// Calibration file: interpret raw latent readings instead of -x
    #[arg(long, requires = "theta")]
    calibration: Option<PathBuf>,
    /// Raw latent readings as raw_ice,raw_angle
    #[arg(long, allow_hyphen_values = true, conflicts_with = "raw_file")]
    raw: Option<String>,
    /// JSON file with raw latent readings: {"ice": <raw>, "angle": <raw>}
    #[arg(long)]
    raw_file: Option<PathBuf>,
    /// Gains as kp,ki,kd (used with --calibration)
    #[arg(long)]
    theta: Option<String>,
    /// Success threshold η_p
    #[arg(long, default_value_t = attainment::DEFAULT_ETA_P)]
    eta: f64,
    /// Optionally write the prediction as JSON
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct RegionArgs {
    /// Fitted model file
    model: PathBuf,
    /// The two free dimensions, e.g. angle,kp
    #[arg(long)]
    free: String,
    /// Pin a dimension, e.g. --fix ice=1 (unpinned dims are unrestricted)
    #[arg(long)]
    fix: Vec<String>,
    #[arg(long, default_value_t = attainment::DEFAULT_ETA_P)]
    eta: f64,
    /// Grid resolution per axis
    #[arg(long, default_value_t = 100)]
    resolution: usize,
    /// Output CSV
    #[arg(short, long)]
    out: PathBuf,
    /// Optional SVG rendering
    #[arg(long)]
    svg: Option<PathBuf>,
    /// Dataset whose points are overlaid on the SVG
    #[arg(long)]
    dataset: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct SolveArgs {
    /// Fitted model file
    model: PathBuf,
    /// Query point as ice,angle,kp,ki,kd (clamped into bounds with a warning)
    #[arg(short = 'x', long = "point", allow_hyphen_values = true)]
    point: String,
    /// adaptive (freeze features), counterfactual (freeze gains), or mask
    #[arg(long)]
    mode: SolveMode,
    /// Frozen dimensions for --mode mask, e.g. ice,angle,kd
    #[arg(long, required_if_eq("mode", "mask"))]
    mask: Option<String>,
    #[arg(long, default_value_t = attainment::DEFAULT_ETA_P)]
    eta: f64,
    #[arg(long, default_value_t = 512)]
    population: usize,
    #[arg(long, default_value_t = 50)]
    iterations: usize,
    #[arg(long, default_value_t = 1e-3)]
    tol: f64,
    #[arg(long, env = "ATTAINMENT_SEED", default_value_t = 0)]
    seed: u64,
    /// Write the full solution report as JSON
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, clap::ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum SolveMode {
    Adaptive,
    Counterfactual,
    Mask,
}

#[derive(Args, Serialize)]
struct CalibrateArgs {
    /// Ice endpoints as raw:feature,raw:feature (e.g. 0.35:0,1.26:1)
    #[arg(long, allow_hyphen_values = true)]
    ice_endpoints: String,
    /// Angle endpoints as raw:feature,raw:feature (e.g. 0.095:0,-1.63:30)
    #[arg(long, allow_hyphen_values = true)]
    angle_endpoints: String,
    /// Output calibration file (JSON)
    #[arg(short, long)]
    out: PathBuf,
}

fn main() {
    let cli = Cli::parse();
    let code = match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_config() {
                2
            } else if e.is_numerical() {
                4
            } else {
                3
            }
        }
    };
    std::process::exit(code);
}

fn run(command: Command) -> attainment::Result<()> {
    match command {
        Command::Sample(args) => cmd_sample(args),
        Command::Fit(args) => cmd_fit(args),
        Command::Predict(args) => cmd_predict(args),
        Command::Region(args) => cmd_region(args),
        Command::Solve(args) => cmd_solve(args),
        Command::Calibrate(args) => cmd_calibrate(args),
    }
}

fn cmd_sample(args: SampleArgs) -> attainment::Result<()> {
    let mut manifest = ManifestBuilder::new("sample", &args);
    manifest.seed(args.seed);
    let cfg = SimConfig::default();
    let bounds = reference_bounds();

    let records: Vec<TrialRecord> = if args.reference_plan {
        attainment::reference_dataset(args.seed, &cfg)?
    } else {
        if args.point.is_empty() {
            return Err(Error::InvalidConfig(
                "pass --reference-plan or at least one --point".into(),
            ));
        }
        let plan: Vec<(FeatureVector, GainVector)> = args
            .point
            .iter()
            .map(|p| parse_point_spec(p))
            .collect::<attainment::Result<_>>()?;
        let seeds = if args.seeds.is_empty() {
            vec![args.seed]
        } else {
            args.seeds.clone()
        };
        attainment::sample_dataset(&plan, &seeds, &cfg)?
    };

    if let Some(trace_path) = &args.trace {
        if args.reference_plan || args.point.len() != 1 {
            return Err(Error::InvalidConfig(
                "--trace needs exactly one --point".into(),
            ));
        }
        let (z, theta) = parse_point_spec(&args.point[0])?;
        let seed = args.seeds.first().copied().unwrap_or(args.seed);
        let (_, trace) = run_trial_traced(&z, &theta, seed, &cfg)?;
        let _lock = OutputLock::acquire(trace_path)?;
        let mut w = std::io::BufWriter::new(std::fs::File::create(trace_path)?);
        trace.write_csv(&mut w)?;
        w.flush()?;
        manifest.output(trace_path);
    }

    let _lock = OutputLock::acquire(&args.out)?;
    save_dataset(&records, &bounds, &args.out)?;
    let successes = records.iter().filter(|r| r.succeeded()).count();
    println!(
        "wrote {} trials ({successes} successes) to {}",
        records.len(),
        args.out.display()
    );
    manifest.output(&args.out);
    manifest.flag("trials", records.len());
    manifest.write()?;
    Ok(())
}

fn cmd_fit(args: FitArgs) -> attainment::Result<()> {
    let mut manifest = ManifestBuilder::new("fit", &args);
    manifest.seed(args.seed).input(&args.dataset);
    let (records, bounds) = load_dataset(&args.dataset)?;
    let cfg = FitConfig {
        seed: args.seed,
        starts: args.starts,
        max_iters: args.max_iters,
        ..FitConfig::default()
    };
    let model = FittedModel::fit(&records, &bounds, &cfg)?;
    if model.is_degenerate() {
        eprintln!("warning: dataset labels are constant; model flagged degenerate");
    }
    let _lock = OutputLock::acquire(&args.out)?;
    model.save(&args.out)?;
    println!(
        "fitted {} records (prior mean {:.3}) to {}",
        model.training_len(),
        model.prior_mean(),
        args.out.display()
    );
    manifest.output(&args.out);
    manifest.flag("degenerate", model.is_degenerate());
    manifest.write()?;
    Ok(())
}

fn cmd_predict(args: PredictArgs) -> attainment::Result<()> {
    let mut manifest = ManifestBuilder::new("predict", &args);
    manifest.input(&args.model);
    let model = FittedModel::load(&args.model)?;

    let (probability, attainable, x) = if let Some(calibration) = &args.calibration {
        manifest.input(calibration);
        let maps = CalibrationSet::load(calibration)?;
        let raw = match (&args.raw, &args.raw_file) {
            (Some(inline), None) => parse_floats::<2>(inline)?,
            (None, Some(path)) => {
                manifest.input(path);
                read_raw_readings(path)?
            }
            _ => {
                return Err(Error::InvalidConfig(
                    "--calibration needs --raw raw_ice,raw_angle or --raw-file".into(),
                ))
            }
        };
        let t = parse_floats::<3>(args.theta.as_deref().ok_or_else(|| {
            Error::InvalidConfig("--calibration needs --theta kp,ki,kd".into())
        })?)?;
        let theta = GainVector::new(t[0], t[1], t[2])?;
        let p = calibrated_predict(&model, &maps, raw[0], raw[1], &theta, args.eta)?;
        if p.ice_clamped || p.angle_clamped {
            eprintln!("note: calibrated features were clamped into bounds");
            manifest.flag("clamped", true);
        }
        (p.probability, p.attainable, p.x)
    } else {
        let spec = args.point.as_deref().ok_or_else(|| {
            Error::InvalidConfig("pass -x ice,angle,kp,ki,kd or --calibration".into())
        })?;
        let x = parse_query_point(spec, model.bounds(), &mut manifest)?;
        let q = AttainmentQuery::new(&model, args.eta)?;
        let p = q.success_probability(&x)?;
        (p, p >= args.eta, x)
    };

    println!("p={probability}");
    if let Some(out) = &args.out {
        let _lock = OutputLock::acquire(out)?;
        let report = serde_json::json!({
            "x": x.to_array(),
            "probability": probability,
            "attainable": attainable,
            "eta_p": args.eta,
        });
        write_json_file(out, &report)?;
        manifest.output(out);
        manifest.write()?;
    }
    Ok(())
}

fn cmd_region(args: RegionArgs) -> attainment::Result<()> {
    let mut manifest = ManifestBuilder::new("region", &args);
    manifest.input(&args.model);
    let model = FittedModel::load(&args.model)?;
    let q = AttainmentQuery::new(&model, args.eta)?;

    let free = parse_dimension_pair(&args.free)?;
    let mut spec = SliceSpec::new(free[0], free[1], args.resolution)?;
    for fix in &args.fix {
        let (dim, value) = parse_fix(fix)?;
        spec = spec.fix(dim, value)?;
    }
    let grid = slice_grid(&q, &spec)?;

    let _lock = OutputLock::acquire(&args.out)?;
    let mut w = std::io::BufWriter::new(std::fs::File::create(&args.out)?);
    write_grid_csv(&grid, &mut w)?;
    w.flush()?;
    manifest.output(&args.out);

    if let Some(svg_path) = &args.svg {
        let samples = match &args.dataset {
            Some(path) => {
                manifest.input(path);
                load_dataset(path)?.0
            }
            None => Vec::new(),
        };
        let _svg_lock = OutputLock::acquire(svg_path)?;
        let mut w = std::io::BufWriter::new(std::fs::File::create(svg_path)?);
        write_grid_svg(&grid, &samples, model.bounds(), &mut w)?;
        w.flush()?;
        manifest.output(svg_path);
    }

    println!(
        "wrote {}x{} slice ({} attainable cells) to {}",
        args.resolution,
        args.resolution,
        grid.attainable_count(),
        args.out.display()
    );
    manifest.flag("attainable_cells", grid.attainable_count());
    manifest.write()?;
    Ok(())
}

fn cmd_solve(args: SolveArgs) -> attainment::Result<()> {
    let mut manifest = ManifestBuilder::new("solve", &args);
    manifest.seed(args.seed).input(&args.model);
    let model = FittedModel::load(&args.model)?;
    let q = AttainmentQuery::new(&model, args.eta)?;

    let x = parse_query_point(&args.point, model.bounds(), &mut manifest)?;
    let (mode_name, mask) = match args.mode {
        SolveMode::Adaptive => ("adaptive", FreezeMask::adaptive()),
        SolveMode::Counterfactual => ("counterfactual", FreezeMask::counterfactual()),
        SolveMode::Mask => {
            let dims = parse_dimension_list(args.mask.as_deref().unwrap_or_default())?;
            ("masked", FreezeMask::from_frozen_dims(&dims)?)
        }
    };
    let cfg = SolverConfig {
        population: args.population,
        max_iterations: args.iterations,
        convergence_tol: args.tol,
        seed: args.seed,
        ..SolverConfig::default()
    };
    let result = solve(&q, &x, &mask, &cfg)?;

    if result.feasible {
        let from = x.to_array();
        let to = result.x_star.to_array();
        let moves: Vec<String> = Dimension::ALL
            .iter()
            .filter(|d| !mask.is_frozen(**d))
            .map(|d| format!("{} {:.2} → {:.2}", d.name(), from[d.index()], to[d.index()]))
            .collect();
        println!(
            "{mode_name} solution: {}, predicted {:.2}",
            moves.join(", "),
            result.predicted
        );
    } else {
        println!(
            "{mode_name} solution: none found (query predicted {:.2}, eta {:.2})",
            result.predicted, args.eta
        );
    }

    if let Some(out) = &args.out {
        let report = serde_json::json!({
            "query": x.to_array(),
            "frozen": mask.frozen_flags(),
            "eta_p": args.eta,
            "seed": args.seed,
            "result": result,
        });
        let _lock = OutputLock::acquire(out)?;
        write_json_file(out, &report)?;
        manifest.output(out);
        manifest.flag("feasible", result.feasible);
        manifest.write()?;
    }
    Ok(())
}

fn cmd_calibrate(args: CalibrateArgs) -> attainment::Result<()> {
    let mut manifest = ManifestBuilder::new("calibrate", &args);
    let ice = parse_endpoints(&args.ice_endpoints)?;
    let angle = parse_endpoints(&args.angle_endpoints)?;
    let set = CalibrationSet::new(
        LinearMap::fit(ice[0], ice[1], Dimension::Ice)?,
        LinearMap::fit(angle[0], angle[1], Dimension::AngleDeg)?,
    )?;
    let _lock = OutputLock::acquire(&args.out)?;
    set.save(&args.out)?;
    println!(
        "ice map {:.4}·raw{:+.4}, angle map {:.4}·raw{:+.4} written to {}",
        set.ice.slope,
        set.ice.intercept,
        set.angle.slope,
        set.angle.intercept,
        args.out.display()
    );
    manifest.output(&args.out);
    manifest.write()?;
    Ok(())
}

// ---- flag parsing helpers ----

fn parse_point_spec(spec: &str) -> attainment::Result<(FeatureVector, GainVector)> {
    let mut values = [0.0_f64; DIMS];
    for part in spec.split(',').filter(|p| !p.is_empty()) {
        let (key, value) = part.split_once('=').ok_or_else(|| {
            Error::InvalidConfig(format!("point component {part:?} is not key=value"))
        })?;
        let dim = Dimension::parse(key.trim())
            .ok_or_else(|| Error::InvalidConfig(format!("unknown dimension {key:?}")))?;
        values[dim.index()] = parse_f64(value)?;
    }
    Ok((
        FeatureVector::new(values[0], values[1])?,
        GainVector::new(values[2], values[3], values[4])?,
    ))
}

fn parse_f64(s: &str) -> attainment::Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|e| Error::InvalidConfig(format!("bad number {s:?}: {e}")))
}

fn parse_floats<const N: usize>(s: &str) -> attainment::Result<[f64; N]> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != N {
        return Err(Error::InvalidConfig(format!(
            "expected {N} comma-separated numbers, got {:?}",
            s
        )));
    }
    let mut out = [0.0; N];
    for (i, p) in parts.iter().enumerate() {
        out[i] = parse_f64(p)?;
    }
    Ok(out)
}

/// Parses `-x ice,angle,kp,ki,kd`, clamping out-of-bounds coordinates into
/// the model's domain with a warning (calibrated encoder readings drift past
/// the endpoints; the model cannot extrapolate outside its domain).
fn parse_query_point(
    spec: &str,
    bounds: &DomainBounds,
    manifest: &mut ManifestBuilder,
) -> attainment::Result<FeatureParameterPoint> {
    let raw = parse_floats::<DIMS>(spec)?;
    let (clamped, moved) = bounds.clamp_array(raw);
    if moved {
        for dim in Dimension::ALL {
            let d = dim.index();
            if clamped[d] != raw[d] {
                eprintln!(
                    "warning: {} = {} clamped to {} (bounds [{}, {}])",
                    dim.name(),
                    raw[d],
                    clamped[d],
                    bounds.lo(dim),
                    bounds.hi(dim)
                );
            }
        }
        manifest.flag("clamped", true);
    }
    FeatureParameterPoint::from_array(clamped)
}

fn parse_dimension_list(s: &str) -> attainment::Result<Vec<Dimension>> {
    s.split(',')
        .filter(|p| !p.trim().is_empty())
        .map(|p| {
            Dimension::parse(p.trim())
                .ok_or_else(|| Error::InvalidConfig(format!("unknown dimension {p:?}")))
        })
        .collect()
}

fn parse_dimension_pair(s: &str) -> attainment::Result<[Dimension; 2]> {
    let dims = parse_dimension_list(s)?;
    match dims.as_slice() {
        [a, b] => Ok([*a, *b]),
        _ => Err(Error::InvalidConfig(format!(
            "--free needs exactly two dimensions, got {s:?}"
        ))),
    }
}

fn parse_fix(s: &str) -> attainment::Result<(Dimension, f64)> {
    let (key, value) = s
        .split_once('=')
        .ok_or_else(|| Error::InvalidConfig(format!("--fix {s:?} is not dim=value")))?;
    let dim = Dimension::parse(key.trim())
        .ok_or_else(|| Error::InvalidConfig(format!("unknown dimension {key:?}")))?;
    Ok((dim, parse_f64(value)?))
}

fn parse_endpoints(s: &str) -> attainment::Result<[(f64, f64); 2]> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 2 {
        return Err(Error::InvalidConfig(format!(
            "expected two raw:feature endpoints, got {s:?}"
        )));
    }
    let mut out = [(0.0, 0.0); 2];
    for (i, p) in parts.iter().enumerate() {
        let (raw, feature) = p.split_once(':').ok_or_else(|| {
            Error::InvalidConfig(format!("endpoint {p:?} is not raw:feature"))
        })?;
        out[i] = (parse_f64(raw)?, parse_f64(feature)?);
    }
    Ok(out)
}

fn read_raw_readings(path: &Path) -> attainment::Result<[f64; 2]> {
    let text = std::fs::read_to_string(path)?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::Parse {
        line: 1,
        message: e.to_string(),
    })?;
    let get = |key: &str| {
        value
            .get(key)
            .and_then(serde_json::Value::as_f64)
            .ok_or_else(|| Error::Parse {
                line: 1,
                message: format!("raw-readings file is missing a numeric {key:?} field"),
            })
    };
    Ok([get("ice")?, get("angle")?])
}

fn write_json_file(path: &Path, value: &serde_json::Value) -> attainment::Result<()> {
    let mut file = std::fs::File::create(path)?;
    serde_json::to_writer_pretty(&mut file, value).map_err(std::io::Error::other)?;
    file.write_all(b"\n")?;
    Ok(())
}
