//! `vl-ident` — command-line front end for Volterra-Laguerre system
//! identification: basis inspection, coefficient counting, fitting,
//! prediction, scoring, time-scale tuning, plant simulation, and randomized
//! structure-selection studies.
//!
//! Every failure is reported on stderr as a single `error[<class>]: <msg>`
//! line with exit code 1; argument-parsing problems keep clap's usage text
//! and exit code 2. Outputs are deterministic byte for byte: floats carry
//! 17 significant digits, files are written atomically, and every random
//! path is seeded (seeds are echoed on stdout).

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use vl_core::error::{Result, VlError};
use vl_core::experiment::{run_experiment, summarize, ExperimentConfig};
use vl_core::io::{self, DataSource, DifferenceMeta};
use vl_core::laguerre::LaguerreSeriesSpec;
use vl_core::model::{
    coefficient_count, vl_param_count, volterra_param_count_approx, volterra_param_count_exact,
    FittedModel, ModelStructure,
};
use vl_core::regressor::{assemble, fit, output_window, predict, resolve_window, Dataset};
use vl_core::simulate::{
    difference_transform, excite_and_simulate, inverse_cumulate, metrics_between, Metrics,
};
use vl_core::tuner::{tune_time_scales, TuneConfig};

#[derive(Parser)]
#[command(
    name = "vl-ident",
    version,
    about = "Volterra-Laguerre system identification",
    propagate_version = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample an orthonormal Laguerre basis over a lag window as CSV
    Laguerre(LaguerreArgs),
    /// Report coefficient counts for a model structure
    Count(CountArgs),
    /// Fit model coefficients to a dataset by least squares
    Fit(FitArgs),
    /// Predict a dataset window with a fitted model
    Predict(PredictArgs),
    /// Score a fitted model against recorded outputs
    Evaluate(EvaluateArgs),
    /// Search for the basis time scales that minimize the fit residual
    Tune(TuneArgs),
    /// Simulate a synthetic plant under generated excitation
    Simulate(SimulateArgs),
    /// Run a randomized structure-selection study
    Experiment(ExperimentArgs),
}

#[derive(Args)]
struct LaguerreArgs {
    /// Number of basis functions (orders 0 through R-1)
    #[arg(long)]
    order: usize,
    /// Basis time scale, in inverse time units
    #[arg(long)]
    time_scale: f64,
    /// Largest lag to sample (rows run from lag 0 through this value)
    #[arg(long)]
    memory: usize,
    /// Grid step: row j samples the basis at t = j * dt
    #[arg(long, default_value_t = 1.0)]
    dt: f64,
    /// Output CSV path; prints to stdout when omitted
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CountArgs {
    /// Model structure JSON
    #[arg(long)]
    structure: PathBuf,
    /// Accept unknown fields in input files
    #[arg(long)]
    lenient: bool,
}

#[derive(Args)]
struct FitArgs {
    /// Input dataset CSV
    #[arg(long)]
    data: PathBuf,
    /// Model structure JSON
    #[arg(long)]
    structure: PathBuf,
    /// Output model JSON
    #[arg(long)]
    out: PathBuf,
    /// First row of the fitting window (default: the memory length)
    #[arg(long)]
    start: Option<usize>,
    /// Number of rows in the fitting window (default: the rest of the data)
    #[arg(long)]
    rows: Option<usize>,
    /// Ridge penalty added to the squared-error objective
    #[arg(long, default_value_t = 0.0)]
    ridge: f64,
    /// Sample interval override for the dataset
    #[arg(long)]
    sample_interval: Option<f64>,
    /// Fit first differences of this column (must be the structure's output)
    #[arg(long, value_name = "COLUMN")]
    difference: Option<String>,
    /// Accept unknown fields in input files
    #[arg(long)]
    lenient: bool,
}

#[derive(Args)]
struct PredictArgs {
    /// Input dataset CSV
    #[arg(long)]
    data: PathBuf,
    /// Fitted model JSON
    #[arg(long)]
    model: PathBuf,
    /// Output predictions CSV
    #[arg(long)]
    out: PathBuf,
    /// First row of the prediction window (default: the memory length)
    #[arg(long)]
    start: Option<usize>,
    /// Number of rows to predict (default: the rest of the data)
    #[arg(long)]
    rows: Option<usize>,
    /// Accept unknown fields in input files
    #[arg(long)]
    lenient: bool,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Input dataset CSV
    #[arg(long)]
    data: PathBuf,
    /// Fitted model JSON
    #[arg(long)]
    model: PathBuf,
    /// Output metrics JSON
    #[arg(long)]
    out: PathBuf,
    /// First row of the scoring window (default: the memory length)
    #[arg(long)]
    start: Option<usize>,
    /// Number of rows to score (default: the rest of the data)
    #[arg(long)]
    rows: Option<usize>,
    /// Accept unknown fields in input files
    #[arg(long)]
    lenient: bool,
}

#[derive(Args)]
struct TuneArgs {
    /// Input dataset CSV
    #[arg(long)]
    data: PathBuf,
    /// Initial model structure JSON (its time scales seed the search box)
    #[arg(long)]
    structure: PathBuf,
    /// Output JSON for the tuned structure
    #[arg(long)]
    out: PathBuf,
    /// Optional CSV trace of every objective evaluation
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Optional JSON report (best residual, evaluation count, seed)
    #[arg(long)]
    report: Option<PathBuf>,
    /// Number of multistart points
    #[arg(long, default_value_t = 8)]
    starts: usize,
    /// Total objective-evaluation budget across all starts
    #[arg(long, default_value_t = 2000)]
    budget: usize,
    /// Time-scale search box as LO,HI (inverse samples)
    #[arg(long, value_parser = parse_bounds, default_value = "0.005,100")]
    bounds: (f64, f64),
    /// Seed for the multistart jitter
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Tail fraction of the window scored as validation (0 trains and
    /// scores on the same rows)
    #[arg(long, default_value_t = 0.0)]
    val_split: f64,
    /// Ridge penalty used inside the objective
    #[arg(long, default_value_t = 0.0)]
    ridge: f64,
    /// First row of the fitting window (default: the memory length)
    #[arg(long)]
    start: Option<usize>,
    /// Number of rows in the fitting window (default: the rest of the data)
    #[arg(long)]
    rows: Option<usize>,
    /// Sample interval override for the dataset
    #[arg(long)]
    sample_interval: Option<f64>,
    /// Accept unknown fields in input files
    #[arg(long)]
    lenient: bool,
}

#[derive(Args)]
struct SimulateArgs {
    /// Plant description JSON
    #[arg(long)]
    plant: PathBuf,
    /// CSV of recorded input series (columns named after the plant inputs)
    #[arg(long, conflicts_with_all = ["excitation", "length"])]
    inputs: Option<PathBuf>,
    /// Excitation descriptions JSON (one per plant input); needs --length
    #[arg(long, requires = "length")]
    excitation: Option<PathBuf>,
    /// Number of samples to generate under --excitation
    #[arg(long)]
    length: Option<usize>,
    /// Seed for excitation and measurement noise
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Sample interval recorded in the dataset
    #[arg(long, default_value_t = 1.0)]
    sample_interval: f64,
    /// Output dataset CSV
    #[arg(long)]
    out: PathBuf,
    /// Accept unknown fields in input files
    #[arg(long)]
    lenient: bool,
}

#[derive(Args)]
struct ExperimentArgs {
    /// Study configuration JSON
    #[arg(long)]
    config: PathBuf,
    /// Output CSV with one row per fitted trial
    #[arg(long)]
    out: PathBuf,
    /// Output JSON with per-arm summary statistics
    #[arg(long)]
    summary: PathBuf,
    /// Accept unknown fields in input files
    #[arg(long)]
    lenient: bool,
}

fn parse_bounds(s: &str) -> std::result::Result<(f64, f64), String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 2 {
        return Err(format!("expected LO,HI, got '{s}'"));
    }
    let lo: f64 = parts[0]
        .trim()
        .parse()
        .map_err(|_| format!("bad lower bound '{}'", parts[0]))?;
    let hi: f64 = parts[1]
        .trim()
        .parse()
        .map_err(|_| format!("bad upper bound '{}'", parts[1]))?;
    Ok((lo, hi))
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        // One line per failure; embedded newlines would break log scraping.
        let msg = e.to_string().replace('\n', "; ");
        eprintln!("error[{}]: {}", e.class(), msg);
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    init_thread_pool()?;
    match cli.command {
        Command::Laguerre(args) => cmd_laguerre(args),
        Command::Count(args) => cmd_count(args),
        Command::Fit(args) => cmd_fit(args),
        Command::Predict(args) => cmd_predict(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Tune(args) => cmd_tune(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::Experiment(args) => cmd_experiment(args),
    }
}

/// Honor VL_IDENT_THREADS for the global worker pool; unset means rayon's
/// default (one worker per logical CPU).
fn init_thread_pool() -> Result<()> {
    match std::env::var("VL_IDENT_THREADS") {
        Err(_) => Ok(()),
        Ok(raw) => {
            let n: usize = raw.trim().parse().map_err(|_| {
                VlError::Config(format!(
                    "VL_IDENT_THREADS must be a positive integer, got '{raw}'"
                ))
            })?;
            if n == 0 {
                return Err(VlError::Config(
                    "VL_IDENT_THREADS must be a positive integer, got '0'".into(),
                ));
            }
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .map_err(|e| VlError::Config(format!("cannot size the thread pool: {e}")))
        }
    }
}

fn cmd_laguerre(args: LaguerreArgs) -> Result<()> {
    let spec = LaguerreSeriesSpec::new(args.order, args.time_scale)?;
    let text = io::render_laguerre_csv(&spec, args.memory, args.dt)?;
    match args.out {
        Some(path) => {
            io::write_atomic(&path, text.as_bytes())?;
            println!(
                "wrote {} samples x {} functions to {}",
                args.memory + 1,
                args.order,
                path.display()
            );
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn cmd_count(args: CountArgs) -> Result<()> {
    let structure = io::load_structure(&args.structure, !args.lenient)?;
    let count = coefficient_count(&structure)?;
    let degree = structure.max_degree();
    let memory = structure.memory_length;
    println!("coefficients: {count}");
    println!("inputs: {}", structure.num_inputs());
    println!("max_degree: {degree}");
    println!("memory_length: {memory}");
    if memory >= 1 {
        // The same (degree, memory) pair as a raw lag-domain Volterra model,
        // exactly and in the usual M^N approximation.
        println!(
            "volterra_exact: {}",
            volterra_param_count_exact(degree as u32, memory as u64)?
        );
        println!(
            "volterra_approx: {}",
            volterra_param_count_approx(degree as u32, memory as u64)?
        );
    }
    // When every slot shares one basis size the unreduced expansion has the
    // familiar R^N size; print it for comparison with the reduced count.
    let orders: Vec<usize> = structure
        .inputs
        .iter()
        .flat_map(|i| i.terms.iter().map(|t| t.order_count))
        .collect();
    if let Some(&first) = orders.first() {
        if orders.iter().all(|&r| r == first) {
            println!(
                "nominal_power: {}",
                vl_param_count(degree as u32, first as u64)?
            );
        }
    }
    Ok(())
}

/// Dataset with the output replaced by its first difference. Row `k` pairs
/// the output step from `k` to `k+1` with the input history through the
/// step's endpoint `k+1` (inputs lose their first sample), so a plant that
/// acts on current inputs stays inside the model class after differencing.
fn differenced_dataset(dataset: &Dataset) -> Result<Dataset> {
    let d = difference_transform(&dataset.output)?;
    let inputs: Vec<Vec<f64>> = dataset.inputs.iter().map(|s| s[1..].to_vec()).collect();
    Dataset::new(
        dataset.sample_interval,
        dataset.input_names.clone(),
        inputs,
        dataset.output_name.clone(),
        d,
    )
}

fn load_data_for(
    path: &Path,
    structure: &ModelStructure,
    sample_interval: Option<f64>,
) -> Result<Dataset> {
    let names: Vec<String> = structure.inputs.iter().map(|i| i.name.clone()).collect();
    let interval = sample_interval.unwrap_or(structure.sample_interval);
    io::load_dataset_csv(path, &names, &structure.output_name, interval)
}

fn cmd_fit(args: FitArgs) -> Result<()> {
    let structure = io::load_structure(&args.structure, !args.lenient)?;
    let dataset = load_data_for(&args.data, &structure, args.sample_interval)?;

    let (fit_data, meta) = match &args.difference {
        None => (dataset, None),
        Some(column) => {
            if *column != structure.output_name {
                return Err(VlError::InvalidParameter(format!(
                    "--difference column '{column}' is not the structure's output '{}'",
                    structure.output_name
                )));
            }
            let levels = dataset.output.clone();
            let diffed = differenced_dataset(&dataset)?;
            (diffed, Some(levels))
        }
    };
    let (start, rows) = resolve_window(&fit_data, &structure, args.start, args.rows)?;
    let design = assemble(&fit_data, &structure, start, rows)?;
    let model = fit(
        &design,
        output_window(&fit_data, start, rows)?,
        args.ridge,
        &structure,
    )?;
    let difference = meta.map(|levels| DifferenceMeta {
        column: structure.output_name.clone(),
        // Level just before the first predicted step; prediction rebuilds
        // levels start+1.. by accumulating from here.
        initial: levels[start],
    });
    io::save_model(&args.out, &model, difference.as_ref())?;
    println!("rows: {rows}");
    println!("columns: {}", model.theta.len());
    println!("rank: {}", model.stats.rank);
    if model.stats.underdetermined {
        println!("underdetermined: true");
    }
    println!("sse: {}", io::fmt_float(model.stats.sse));
    println!("wrote {}", args.out.display());
    Ok(())
}

/// Prediction output of a model on a dataset window: the sample index of
/// the first value, the predictions, and the matching recorded values.
/// Differencing models predict output steps and are re-anchored at the
/// recorded level at the window start, so their rows are levels too.
fn predict_window(
    model: &FittedModel,
    difference: Option<&DifferenceMeta>,
    dataset: &Dataset,
    start: Option<usize>,
    rows: Option<usize>,
) -> Result<(usize, Vec<f64>, Vec<f64>, Option<Metrics>)> {
    match difference {
        None => {
            let (start, rows) = resolve_window(dataset, &model.structure, start, rows)?;
            let predicted = predict(model, dataset, start, rows)?;
            let actual = output_window(dataset, start, rows)?.to_vec();
            Ok((start, predicted, actual, None))
        }
        Some(_) => {
            let levels = dataset.output.clone();
            let diffed = differenced_dataset(dataset)?;
            let (start, rows) = resolve_window(&diffed, &model.structure, start, rows)?;
            let steps = predict(model, &diffed, start, rows)?;
            let diff_actual = output_window(&diffed, start, rows)?;
            let diff_metrics = metrics_between(&steps, diff_actual, start)?;
            let rebuilt = inverse_cumulate(levels[start], &steps);
            let predicted = rebuilt[1..].to_vec();
            let actual = levels[start + 1..start + 1 + rows].to_vec();
            Ok((start + 1, predicted, actual, Some(diff_metrics)))
        }
    }
}

fn cmd_predict(args: PredictArgs) -> Result<()> {
    let (model, difference) = io::load_model(&args.model, !args.lenient)?;
    let dataset = load_data_for(&args.data, &model.structure, None)?;
    let (first, predicted, actual, _) =
        predict_window(&model, difference.as_ref(), &dataset, args.start, args.rows)?;
    let text = io::render_predictions_csv(
        first,
        &predicted,
        Some((model.structure.output_name.as_str(), &actual)),
    )?;
    io::write_atomic(&args.out, text.as_bytes())?;
    println!(
        "wrote {} predictions to {}",
        predicted.len(),
        args.out.display()
    );
    Ok(())
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<()> {
    let (model, difference) = io::load_model(&args.model, !args.lenient)?;
    let dataset = load_data_for(&args.data, &model.structure, None)?;
    let (first, predicted, actual, diff_metrics) =
        predict_window(&model, difference.as_ref(), &dataset, args.start, args.rows)?;
    let metrics = metrics_between(&predicted, &actual, first)?;
    // For a differencing model the headline metrics are on the trained
    // target (the steps); the reconstructed levels ride along.
    let (main, levels) = match diff_metrics {
        None => (metrics, None),
        Some(on_diffs) => (on_diffs, Some(metrics)),
    };
    let text = io::render_metrics_json(&main, levels.as_ref())?;
    io::write_atomic(&args.out, text.as_bytes())?;
    println!("sse: {}", io::fmt_float(main.sse));
    println!("mse: {}", io::fmt_float(main.mse));
    match main.normalized_sse {
        Some(v) => println!("normalized_sse: {}", io::fmt_float(v)),
        None => println!("normalized_sse: n/a"),
    }
    if let Some(l) = &levels {
        println!("levels_sse: {}", io::fmt_float(l.sse));
    }
    println!("wrote {}", args.out.display());
    Ok(())
}

fn cmd_tune(args: TuneArgs) -> Result<()> {
    let structure = io::load_structure(&args.structure, !args.lenient)?;
    let dataset = load_data_for(&args.data, &structure, args.sample_interval)?;
    let config = TuneConfig {
        bounds: args.bounds,
        multistart_count: args.starts,
        max_evaluations: args.budget,
        seed: args.seed,
        validation_fraction: args.val_split,
        ridge: args.ridge,
        ..TuneConfig::default()
    };
    let outcome = tune_time_scales(&dataset, &structure, args.start, args.rows, &config);
    // A failed search still leaves its trace on disk when one was asked for.
    if let (Some(trace_path), Err(VlError::TuningFailed { trace, .. })) = (&args.trace, &outcome) {
        io::write_atomic(trace_path, io::render_trace_csv(trace)?.as_bytes())?;
    }
    let outcome = outcome?;
    io::save_structure(&args.out, &outcome.structure)?;
    if let Some(trace_path) = &args.trace {
        io::write_atomic(trace_path, io::render_trace_csv(&outcome.trace)?.as_bytes())?;
    }
    if let Some(report_path) = &args.report {
        let text = io::render_tune_report_json(&outcome, args.seed)?;
        io::write_atomic(report_path, text.as_bytes())?;
    }
    println!("rng: {}", vl_core::RNG_ALGORITHM);
    println!("seed: {}", args.seed);
    println!("evaluations: {}", outcome.evaluations);
    println!("best_start: {}", outcome.best_start);
    println!("best_sse: {}", io::fmt_float(outcome.best_sse));
    for (slot, scale) in outcome
        .structure
        .scale_slots()
        .iter()
        .zip(outcome.structure.time_scales())
    {
        let (input, term) = *slot;
        println!(
            "scale input={} term={}: {}",
            outcome.structure.inputs[input].name,
            term,
            io::fmt_float(scale)
        );
    }
    println!("wrote {}", args.out.display());
    Ok(())
}

fn cmd_simulate(args: SimulateArgs) -> Result<()> {
    let plant = io::load_plant(&args.plant, !args.lenient)?;
    let dataset = match (&args.inputs, &args.excitation) {
        (Some(inputs_path), None) => {
            // Recorded inputs: read the plant's input columns; the output
            // column does not exist yet, so load inputs standalone.
            let series = io::load_columns_csv(inputs_path, &plant.input_names)?;
            vl_core::simulate::simulate_dataset(&plant, series, args.sample_interval, args.seed)?
        }
        (None, Some(excitation_path)) => {
            let excitation = io::load_excitations(excitation_path, !args.lenient)?;
            let length = args
                .length
                .expect("clap enforces --length with --excitation");
            excite_and_simulate(&plant, &excitation, length, args.sample_interval, args.seed)?
        }
        _ => {
            return Err(VlError::InvalidParameter(
                "exactly one of --inputs or --excitation is required".into(),
            ))
        }
    };
    io::write_dataset_csv(&args.out, &dataset)?;
    println!("rng: {}", vl_core::RNG_ALGORITHM);
    println!("seed: {}", args.seed);
    println!("wrote {} samples to {}", dataset.len(), args.out.display());
    Ok(())
}

fn cmd_experiment(args: ExperimentArgs) -> Result<()> {
    let spec = io::load_experiment_file(&args.config, !args.lenient)?;
    let seed = spec.seed.unwrap_or(0);
    let dataset = match &spec.data {
        DataSource::Csv {
            path,
            inputs,
            output,
            sample_interval,
        } => io::load_dataset_csv(path, inputs, output, *sample_interval)?,
        DataSource::Plant {
            path,
            length,
            seed: data_seed,
            excitation,
        } => {
            let plant = io::load_plant(path, !args.lenient)?;
            // The data seed is independent of the study seed so the sampled
            // structures do not correlate with the realization they fit.
            excite_and_simulate(&plant, excitation, *length, 1.0, data_seed.unwrap_or(seed))?
        }
    };
    let config = ExperimentConfig {
        trials: spec.trials,
        arms: spec.arms,
        seed,
        memory_length: spec.memory_length,
        constant_column: spec.constant_column,
        ridge: spec.ridge,
        degree_range: spec.degree_range,
        order_range: spec.order_range,
        scale_range: spec.scale_range,
        start: spec.start,
        rows: spec.rows,
    };
    let records = run_experiment(&dataset, &config)?;
    let summary = summarize(&records)?;

    io::write_atomic(&args.out, io::render_trials_csv(&records)?.as_bytes())?;
    io::write_atomic(
        &args.summary,
        io::render_summary_json(&summary, seed, spec.trials)?.as_bytes(),
    )?;

    println!("rng: {}", vl_core::RNG_ALGORITHM);
    println!("seed: {seed}");
    println!("trials_per_arm: {}", spec.trials);
    for arm in &summary.arms {
        println!(
            "arm {}: mean_sse={} median_sse={} std_sse={} resamples={}",
            arm.mode.label(),
            io::fmt_float(arm.mean_sse),
            io::fmt_float(arm.median_sse),
            io::fmt_float(arm.std_sse),
            arm.total_resamples
        );
    }
    println!("wrote {}", args.out.display());
    println!("wrote {}", args.summary.display());
    Ok(())
}
