//! File formats: CSV datasets and JSON structure/model/plant/study files.
//!
//! Two rules make every artifact reproducible byte for byte:
//!
//! * Floats are always written with 17 significant digits in scientific
//!   notation (enough to round-trip any double exactly), in JSON via a
//!   custom formatter and in CSV via the same [`fmt_float`].
//! * Field order is fixed by the serde structs, collections are vectors
//!   (never hash maps), and files are written atomically (temp file plus
//!   rename) with a trailing newline.
//!
//! JSON loads are strict by default: a field the schema does not know is a
//! schema error naming the offending path. Lenient mode skips that check
//! and only requires the known fields to be present and well typed.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::ser::{CompactFormatter, Formatter, PrettyFormatter};
use serde_json::Value;

use crate::error::{Result, VlError};
use crate::experiment::{ArmSelection, ExperimentSummary, TrialRecord};
use crate::laguerre::LaguerreSeriesSpec;
use crate::model::{CoefficientIndex, FitStats, FittedModel, InputSpec, ModelStructure};
use crate::regressor::Dataset;
use crate::simulate::{
    InputKind, Metrics, PlantKind, SyntheticPlant, VolterraChannel, WienerChannel,
};
use crate::tuner::TraceRow;

// ---------------------------------------------------------------------------
// Float formatting
// ---------------------------------------------------------------------------

/// Render a float with 17 significant digits — lossless for every f64.
pub fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

macro_rules! forward_pretty {
    ($($name:ident ( $($arg:ident : $ty:ty),* )),* $(,)?) => {
        $(fn $name<W>(&mut self, writer: &mut W $(, $arg: $ty)*) -> std::io::Result<()>
        where
            W: ?Sized + std::io::Write,
        {
            self.inner.$name(writer $(, $arg)*)
        })*
    };
}

/// Pretty JSON formatter that writes every f64 via [`fmt_float`].
struct Sci17Pretty<'a> {
    inner: PrettyFormatter<'a>,
}

impl Formatter for Sci17Pretty<'_> {
    fn write_f64<W>(&mut self, writer: &mut W, value: f64) -> std::io::Result<()>
    where
        W: ?Sized + std::io::Write,
    {
        write!(writer, "{value:.16e}")
    }

    forward_pretty!(
        begin_array(),
        end_array(),
        begin_array_value(first: bool),
        end_array_value(),
        begin_object(),
        end_object(),
        begin_object_key(first: bool),
        begin_object_value(),
        end_object_value(),
    );
}

/// Compact variant for JSON embedded in CSV cells.
struct Sci17Compact;

impl Formatter for Sci17Compact {
    fn write_f64<W>(&mut self, writer: &mut W, value: f64) -> std::io::Result<()>
    where
        W: ?Sized + std::io::Write,
    {
        write!(writer, "{value:.16e}")
    }
}

/// Serialize to pretty JSON with lossless floats and a trailing newline.
pub fn to_json_pretty<T: Serialize>(value: &T) -> Result<String> {
    let mut buf = Vec::new();
    let fmt = Sci17Pretty {
        inner: PrettyFormatter::with_indent(b"  "),
    };
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, fmt);
    value
        .serialize(&mut ser)
        .map_err(|e| VlError::Data(format!("JSON serialization failed: {e}")))?;
    buf.push(b'\n');
    String::from_utf8(buf).map_err(|e| VlError::Data(format!("JSON output is not UTF-8: {e}")))
}

/// Serialize to compact single-line JSON with lossless floats.
pub fn to_json_compact<T: Serialize>(value: &T) -> Result<String> {
    let _ = CompactFormatter; // the default; kept for symmetry with the pretty path
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, Sci17Compact);
    value
        .serialize(&mut ser)
        .map_err(|e| VlError::Data(format!("JSON serialization failed: {e}")))?;
    String::from_utf8(buf).map_err(|e| VlError::Data(format!("JSON output is not UTF-8: {e}")))
}

/// Write `bytes` to `path` atomically: temp file in the same directory,
/// then rename over the target.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    let file_name = path
        .file_name()
        .ok_or_else(|| VlError::InvalidParameter(format!("not a file path: {}", path.display())))?;
    let mut tmp: PathBuf = dir.map(Path::to_path_buf).unwrap_or_default();
    tmp.push(format!(
        ".{}.tmp{}",
        file_name.to_string_lossy(),
        std::process::id()
    ));
    let mut file = fs::File::create(&tmp).map_err(|e| io_with_path(&tmp, e))?;
    file.write_all(bytes).map_err(|e| io_with_path(&tmp, e))?;
    file.sync_all().map_err(|e| io_with_path(&tmp, e))?;
    drop(file);
    fs::rename(&tmp, path).map_err(|e| io_with_path(path, e))
}

fn io_with_path(path: &Path, e: std::io::Error) -> VlError {
    VlError::Io(std::io::Error::new(
        e.kind(),
        format!("{}: {e}", path.display()),
    ))
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

/// Load the named columns of a CSV file into a dataset. The file may carry
/// extra columns; requested ones must exist, be distinct, and hold finite
/// numbers. Errors name the 1-based data row (the header is row 0).
pub fn load_dataset_csv(
    path: &Path,
    input_names: &[String],
    output_name: &str,
    sample_interval: f64,
) -> Result<Dataset> {
    if input_names.is_empty() {
        return Err(VlError::InvalidParameter(
            "at least one input column is required".into(),
        ));
    }
    let mut requested: Vec<&str> = input_names.iter().map(String::as_str).collect();
    requested.push(output_name);
    let mut columns = read_csv_columns(path, &requested)?;
    let output = columns.pop().expect("output column present");
    Ok(Dataset::new(
        sample_interval,
        input_names.to_vec(),
        columns,
        output_name.to_string(),
        output,
    )?)
}

/// Load named numeric columns from a CSV file (same validation as
/// [`load_dataset_csv`], without the dataset packaging).
pub fn load_columns_csv(path: &Path, names: &[String]) -> Result<Vec<Vec<f64>>> {
    let requested: Vec<&str> = names.iter().map(String::as_str).collect();
    read_csv_columns(path, &requested)
}

fn read_csv_columns(path: &Path, requested: &[&str]) -> Result<Vec<Vec<f64>>> {
    if requested.is_empty() {
        return Err(VlError::InvalidParameter(
            "at least one column is required".into(),
        ));
    }
    for (i, name) in requested.iter().enumerate() {
        if requested[..i].contains(name) {
            return Err(VlError::InvalidParameter(format!(
                "column '{name}' was requested more than once"
            )));
        }
    }

    let file = fs::File::open(path).map_err(|e| io_with_path(path, e))?;
    if file.metadata().map_err(|e| io_with_path(path, e))?.len() == 0 {
        return Err(VlError::Data(format!("{}: file is empty", path.display())));
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(file);
    let headers = reader
        .headers()
        .map_err(|e| VlError::Data(format!("{}: cannot read header: {e}", path.display())))?
        .clone();

    let mut positions = Vec::with_capacity(requested.len());
    for name in requested {
        let hits: Vec<usize> = headers
            .iter()
            .enumerate()
            .filter(|(_, h)| h == name)
            .map(|(i, _)| i)
            .collect();
        match hits.as_slice() {
            [] => {
                return Err(VlError::Data(format!(
                    "{}: missing column '{name}' (file has: {})",
                    path.display(),
                    headers.iter().collect::<Vec<_>>().join(", ")
                )))
            }
            [one] => positions.push(*one),
            _ => {
                return Err(VlError::Data(format!(
                    "{}: column '{name}' appears more than once in the header",
                    path.display()
                )))
            }
        }
    }

    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); requested.len()];
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record
            .map_err(|e| VlError::Data(format!("{}: data row {row}: {e}", path.display())))?;
        for (c, &pos) in positions.iter().enumerate() {
            let cell = record.get(pos).ok_or_else(|| {
                VlError::Data(format!(
                    "{}: data row {row} has no column '{}'",
                    path.display(),
                    requested[c]
                ))
            })?;
            let v: f64 = cell.trim().parse().map_err(|_| {
                VlError::Data(format!(
                    "{}: non-numeric cell at data row {row}, column '{}': '{cell}'",
                    path.display(),
                    requested[c]
                ))
            })?;
            if !v.is_finite() {
                return Err(VlError::Data(format!(
                    "{}: non-finite value at data row {row}, column '{}'",
                    path.display(),
                    requested[c]
                )));
            }
            columns[c].push(v);
        }
    }
    if columns[0].is_empty() {
        return Err(VlError::Data(format!("{}: no data rows", path.display())));
    }
    Ok(columns)
}

fn csv_to_string(headers: &[String], rows: impl Iterator<Item = Vec<String>>) -> Result<String> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer
        .write_record(headers)
        .map_err(|e| VlError::Data(format!("CSV write failed: {e}")))?;
    for row in rows {
        writer
            .write_record(&row)
            .map_err(|e| VlError::Data(format!("CSV write failed: {e}")))?;
    }
    let bytes = writer
        .into_inner()
        .map_err(|e| VlError::Data(format!("CSV write failed: {e}")))?;
    String::from_utf8(bytes).map_err(|e| VlError::Data(format!("CSV output is not UTF-8: {e}")))
}

/// Render a dataset as CSV (inputs first, output last).
pub fn render_dataset_csv(dataset: &Dataset) -> Result<String> {
    let mut headers = dataset.input_names.clone();
    headers.push(dataset.output_name.clone());
    let rows = (0..dataset.len()).map(|k| {
        let mut row: Vec<String> = dataset
            .inputs
            .iter()
            .map(|series| fmt_float(series[k]))
            .collect();
        row.push(fmt_float(dataset.output[k]));
        row
    });
    csv_to_string(&headers, rows)
}

pub fn write_dataset_csv(path: &Path, dataset: &Dataset) -> Result<()> {
    write_atomic(path, render_dataset_csv(dataset)?.as_bytes())
}

/// Render a basis sampled on a lag grid as CSV: a `t` column (lag times
/// `dt`) plus one column per basis function (`l0`, `l1`, ...).
pub fn render_laguerre_csv(spec: &LaguerreSeriesSpec, memory: usize, dt: f64) -> Result<String> {
    if !dt.is_finite() || dt <= 0.0 {
        return Err(VlError::InvalidParameter(format!(
            "grid step must be finite and positive, got {dt}"
        )));
    }
    let mut headers = vec!["t".to_string()];
    headers.extend((0..spec.order_count).map(|n| format!("l{n}")));
    let mut rows = Vec::with_capacity(memory + 1);
    for j in 0..=memory {
        let t = j as f64 * dt;
        let mut row = vec![fmt_float(t)];
        for n in 0..spec.order_count {
            row.push(fmt_float(crate::laguerre::eval_laguerre(
                n,
                t,
                spec.time_scale,
            )?));
        }
        rows.push(row);
    }
    csv_to_string(&headers, rows.into_iter())
}

/// Render predictions as CSV: `sample,y_hat[,<output name>]`.
pub fn render_predictions_csv(
    start: usize,
    predicted: &[f64],
    actual: Option<(&str, &[f64])>,
) -> Result<String> {
    if let Some((_, actual)) = actual {
        if actual.len() != predicted.len() {
            return Err(VlError::InvalidParameter(format!(
                "{} predictions but {} actual samples",
                predicted.len(),
                actual.len()
            )));
        }
    }
    let mut headers = vec!["sample".to_string(), "y_hat".to_string()];
    if let Some((name, _)) = actual {
        headers.push(name.to_string());
    }
    let rows = (0..predicted.len()).map(|i| {
        let mut row = vec![(start + i).to_string(), fmt_float(predicted[i])];
        if let Some((_, actual)) = actual {
            row.push(fmt_float(actual[i]));
        }
        row
    });
    csv_to_string(&headers, rows)
}

/// Render a tuning trace as CSV: `start,iter,a0,...,sse`, one row per
/// objective evaluation (`iter` numbers them globally).
pub fn render_trace_csv(trace: &[TraceRow]) -> Result<String> {
    let dim = trace.first().map(|r| r.time_scales.len()).unwrap_or(0);
    let mut headers = vec!["start".to_string(), "iter".to_string()];
    headers.extend((0..dim).map(|d| format!("a{d}")));
    headers.push("sse".to_string());
    let rows = trace.iter().map(|r| {
        let mut row = vec![r.start_index.to_string(), r.evaluation.to_string()];
        row.extend(r.time_scales.iter().map(|&a| fmt_float(a)));
        row.push(fmt_float(r.sse));
        row
    });
    csv_to_string(&headers, rows)
}

#[derive(Serialize)]
struct TrialParams {
    coefficients: usize,
    inputs: Vec<InputFile>,
}

/// Render study trials as CSV: `trial,mode,params_json,sse,resamples`,
/// where `params_json` is a compact JSON object carrying the coefficient
/// count and the sampled per-input structure.
pub fn render_trials_csv(records: &[TrialRecord]) -> Result<String> {
    let headers: Vec<String> = ["trial", "mode", "params_json", "sse", "resamples"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let mut rows = Vec::with_capacity(records.len());
    for r in records {
        let params = TrialParams {
            coefficients: r.coefficient_count,
            inputs: r.structure.inputs.iter().map(InputFile::from).collect(),
        };
        rows.push(vec![
            r.trial.to_string(),
            r.mode.label().to_string(),
            to_json_compact(&params)?,
            fmt_float(r.sse),
            r.resamples.to_string(),
        ]);
    }
    csv_to_string(&headers, rows.into_iter())
}

// ---------------------------------------------------------------------------
// Strict-mode schema checking
// ---------------------------------------------------------------------------

#[derive(Clone, Copy)]
enum Allowed {
    /// Object with exactly these possible fields.
    Object(&'static [(&'static str, Allowed)]),
    /// Array whose items all follow one schema.
    Array(&'static Allowed),
    /// Scalar or array of scalars; nothing to check inside.
    Leaf,
}

fn check_unknown_fields(value: &Value, allowed: &Allowed, path: &str) -> Result<()> {
    match allowed {
        Allowed::Leaf => Ok(()),
        Allowed::Array(inner) => {
            if let Value::Array(items) = value {
                for (i, item) in items.iter().enumerate() {
                    check_unknown_fields(item, inner, &format!("{path}[{i}]"))?;
                }
            }
            Ok(())
        }
        Allowed::Object(fields) => {
            if let Value::Object(map) = value {
                for (key, sub) in map {
                    match fields.iter().find(|(name, _)| name == key) {
                        Some((_, schema)) => {
                            let sub_path = if path.is_empty() {
                                key.clone()
                            } else {
                                format!("{path}.{key}")
                            };
                            check_unknown_fields(sub, schema, &sub_path)?;
                        }
                        None => {
                            let full = if path.is_empty() {
                                key.clone()
                            } else {
                                format!("{path}.{key}")
                            };
                            return Err(VlError::Schema(format!("unknown field '{full}'")));
                        }
                    }
                }
            }
            Ok(())
        }
    }
}

const TERM_SCHEMA: Allowed = Allowed::Object(&[
    ("order_count", Allowed::Leaf),
    ("time_scale", Allowed::Leaf),
]);

const INPUT_SCHEMA: Allowed = Allowed::Object(&[
    ("name", Allowed::Leaf),
    ("degree", Allowed::Leaf),
    ("terms", Allowed::Array(&TERM_SCHEMA)),
]);

const STRUCTURE_SCHEMA: Allowed = Allowed::Object(&[
    ("memory_length", Allowed::Leaf),
    ("sample_interval", Allowed::Leaf),
    ("output", Allowed::Leaf),
    ("constant_column", Allowed::Leaf),
    ("inputs", Allowed::Array(&INPUT_SCHEMA)),
]);

const MODEL_SCHEMA: Allowed = Allowed::Object(&[
    ("structure", STRUCTURE_SCHEMA),
    ("coefficients", Allowed::Leaf),
    (
        "columns",
        Allowed::Array(&Allowed::Object(&[
            ("term", Allowed::Leaf),
            ("factors", Allowed::Leaf),
        ])),
    ),
    (
        "stats",
        Allowed::Object(&[
            ("sse", Allowed::Leaf),
            ("num_rows", Allowed::Leaf),
            ("condition_estimate", Allowed::Leaf),
            ("rank", Allowed::Leaf),
            ("underdetermined", Allowed::Leaf),
        ]),
    ),
    (
        "difference",
        Allowed::Object(&[("column", Allowed::Leaf), ("initial", Allowed::Leaf)]),
    ),
]);

const PLANT_SCHEMA: Allowed = Allowed::Object(&[
    ("kind", Allowed::Leaf),
    ("memory_length", Allowed::Leaf),
    ("inputs", Allowed::Leaf),
    ("output", Allowed::Leaf),
    ("noise_std", Allowed::Leaf),
    ("integrate_output", Allowed::Leaf),
    (
        "channels",
        Allowed::Array(&Allowed::Object(&[
            ("impulse_response", Allowed::Leaf),
            ("polynomial", Allowed::Leaf),
            ("kernel1", Allowed::Leaf),
            ("kernel2", Allowed::Leaf),
        ])),
    ),
]);

const EXCITATION_SCHEMA: Allowed = Allowed::Object(&[
    ("kind", Allowed::Leaf),
    ("low", Allowed::Leaf),
    ("high", Allowed::Leaf),
    ("dwell", Allowed::Leaf),
    ("gain", Allowed::Leaf),
    ("pole", Allowed::Leaf),
    ("components", Allowed::Leaf),
    ("min_period", Allowed::Leaf),
    ("max_period", Allowed::Leaf),
    ("amplitude", Allowed::Leaf),
]);

const EXPERIMENT_SCHEMA: Allowed = Allowed::Object(&[
    ("trials", Allowed::Leaf),
    ("arms", Allowed::Leaf),
    ("seed", Allowed::Leaf),
    ("memory_length", Allowed::Leaf),
    ("constant_column", Allowed::Leaf),
    ("ridge", Allowed::Leaf),
    ("degree_range", Allowed::Leaf),
    ("order_range", Allowed::Leaf),
    ("scale_range", Allowed::Leaf),
    ("start", Allowed::Leaf),
    ("rows", Allowed::Leaf),
    (
        "data",
        Allowed::Object(&[
            (
                "csv",
                Allowed::Object(&[
                    ("path", Allowed::Leaf),
                    ("inputs", Allowed::Leaf),
                    ("output", Allowed::Leaf),
                    ("sample_interval", Allowed::Leaf),
                ]),
            ),
            (
                "plant",
                Allowed::Object(&[
                    ("path", Allowed::Leaf),
                    ("length", Allowed::Leaf),
                    ("seed", Allowed::Leaf),
                    ("excitation", Allowed::Array(&EXCITATION_SCHEMA)),
                ]),
            ),
        ]),
    ),
]);

const EXCITATION_LIST_SCHEMA: Allowed = Allowed::Array(&EXCITATION_SCHEMA);

fn load_json_file<T: DeserializeOwned>(path: &Path, strict: bool, schema: &Allowed) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| io_with_path(path, e))?;
    let value: Value = serde_json::from_str(&text)
        .map_err(|e| VlError::Schema(format!("{}: invalid JSON: {e}", path.display())))?;
    if strict {
        check_unknown_fields(&value, schema, "")
            .map_err(|e| VlError::Schema(format!("{}: {e}", path.display())))?;
    }
    serde_json::from_value(value).map_err(|e| VlError::Schema(format!("{}: {e}", path.display())))
}

// ---------------------------------------------------------------------------
// Structure files
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TermFile {
    order_count: usize,
    time_scale: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct InputFile {
    name: String,
    degree: usize,
    terms: Vec<TermFile>,
}

impl From<&InputSpec> for InputFile {
    fn from(spec: &InputSpec) -> Self {
        InputFile {
            name: spec.name.clone(),
            degree: spec.degree,
            terms: spec
                .terms
                .iter()
                .map(|t| TermFile {
                    order_count: t.order_count,
                    time_scale: t.time_scale,
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct StructureFile {
    memory_length: usize,
    sample_interval: f64,
    output: String,
    constant_column: bool,
    inputs: Vec<InputFile>,
}

impl StructureFile {
    fn from_structure(s: &ModelStructure) -> Self {
        StructureFile {
            memory_length: s.memory_length,
            sample_interval: s.sample_interval,
            output: s.output_name.clone(),
            constant_column: s.constant_column,
            inputs: s.inputs.iter().map(InputFile::from).collect(),
        }
    }

    fn into_structure(self) -> Result<ModelStructure> {
        let structure = ModelStructure {
            memory_length: self.memory_length,
            sample_interval: self.sample_interval,
            inputs: self
                .inputs
                .into_iter()
                .map(|i| InputSpec {
                    name: i.name,
                    degree: i.degree,
                    terms: i
                        .terms
                        .into_iter()
                        .map(|t| LaguerreSeriesSpec {
                            order_count: t.order_count,
                            time_scale: t.time_scale,
                        })
                        .collect(),
                })
                .collect(),
            output_name: self.output,
            constant_column: self.constant_column,
        };
        structure.validate()?;
        Ok(structure)
    }
}

pub fn save_structure(path: &Path, structure: &ModelStructure) -> Result<()> {
    structure.validate()?;
    let text = to_json_pretty(&StructureFile::from_structure(structure))?;
    write_atomic(path, text.as_bytes())
}

pub fn load_structure(path: &Path, strict: bool) -> Result<ModelStructure> {
    let file: StructureFile = load_json_file(path, strict, &STRUCTURE_SCHEMA)?;
    file.into_structure()
        .map_err(|e| VlError::Schema(format!("{}: {e}", path.display())))
}

// ---------------------------------------------------------------------------
// Model files
// ---------------------------------------------------------------------------

/// Differencing bookkeeping stored inside a model file: which column the
/// model was trained to difference, and the level that preceded the first
/// fitted difference (used to re-anchor reconstructions).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DifferenceMeta {
    pub column: String,
    pub initial: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct StatsFile {
    sse: f64,
    num_rows: usize,
    condition_estimate: f64,
    rank: usize,
    underdetermined: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ModelFile {
    structure: StructureFile,
    coefficients: Vec<f64>,
    columns: Vec<CoefficientIndex>,
    stats: StatsFile,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    difference: Option<DifferenceMeta>,
}

pub fn save_model(
    path: &Path,
    model: &FittedModel,
    difference: Option<&DifferenceMeta>,
) -> Result<()> {
    let file = ModelFile {
        structure: StructureFile::from_structure(&model.structure),
        coefficients: model.theta.clone(),
        columns: model.index.clone(),
        stats: StatsFile {
            sse: model.stats.sse,
            num_rows: model.stats.num_rows,
            condition_estimate: model.stats.condition_estimate,
            rank: model.stats.rank,
            underdetermined: model.stats.underdetermined,
        },
        difference: difference.cloned(),
    };
    write_atomic(path, to_json_pretty(&file)?.as_bytes())
}

pub fn load_model(path: &Path, strict: bool) -> Result<(FittedModel, Option<DifferenceMeta>)> {
    let file: ModelFile = load_json_file(path, strict, &MODEL_SCHEMA)?;
    let structure = file
        .structure
        .into_structure()
        .map_err(|e| VlError::Schema(format!("{}: {e}", path.display())))?;
    if file.coefficients.len() != file.columns.len() {
        return Err(VlError::Integrity(format!(
            "{}: {} coefficients but {} column descriptors",
            path.display(),
            file.coefficients.len(),
            file.columns.len()
        )));
    }
    let expected = crate::model::coefficient_count(&structure)?;
    if file.coefficients.len() != expected {
        return Err(VlError::Integrity(format!(
            "{}: the structure declares {expected} coefficients but the file carries {}",
            path.display(),
            file.coefficients.len()
        )));
    }
    if let Some(bad) = file.coefficients.iter().position(|v| !v.is_finite()) {
        return Err(VlError::Data(format!(
            "{}: non-finite coefficient at position {bad}",
            path.display()
        )));
    }
    if let Some(meta) = &file.difference {
        if meta.column != structure.output_name {
            return Err(VlError::Integrity(format!(
                "{}: differencing column '{}' does not match the model output '{}'",
                path.display(),
                meta.column,
                structure.output_name
            )));
        }
        if !meta.initial.is_finite() {
            return Err(VlError::Data(format!(
                "{}: differencing anchor is not finite",
                path.display()
            )));
        }
    }
    let model = FittedModel {
        structure,
        theta: file.coefficients,
        index: file.columns,
        stats: FitStats {
            sse: file.stats.sse,
            num_rows: file.stats.num_rows,
            condition_estimate: file.stats.condition_estimate,
            rank: file.stats.rank,
            underdetermined: file.stats.underdetermined,
        },
    };
    Ok((model, file.difference))
}

// ---------------------------------------------------------------------------
// Plant files
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ChannelFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    impulse_response: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    polynomial: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    kernel1: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    kernel2: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PlantFile {
    kind: String,
    memory_length: usize,
    inputs: Vec<String>,
    output: String,
    #[serde(default)]
    noise_std: f64,
    #[serde(default)]
    integrate_output: bool,
    channels: Vec<ChannelFile>,
}

pub fn save_plant(path: &Path, plant: &SyntheticPlant) -> Result<()> {
    plant.validate()?;
    let (kind, channels) = match &plant.kind {
        PlantKind::Wiener(chs) => (
            "wiener".to_string(),
            chs.iter()
                .map(|ch| ChannelFile {
                    impulse_response: Some(ch.impulse_response.clone()),
                    polynomial: Some(ch.polynomial.clone()),
                    kernel1: None,
                    kernel2: None,
                })
                .collect(),
        ),
        PlantKind::FiniteVolterra(chs) => (
            "finite_volterra".to_string(),
            chs.iter()
                .map(|ch| ChannelFile {
                    impulse_response: None,
                    polynomial: None,
                    kernel1: Some(ch.kernel1.clone()),
                    kernel2: ch.kernel2.clone(),
                })
                .collect(),
        ),
    };
    let file = PlantFile {
        kind,
        memory_length: plant.memory_length,
        inputs: plant.input_names.clone(),
        output: plant.output_name.clone(),
        noise_std: plant.noise_std,
        integrate_output: plant.integrate_output,
        channels,
    };
    write_atomic(path, to_json_pretty(&file)?.as_bytes())
}

pub fn load_plant(path: &Path, strict: bool) -> Result<SyntheticPlant> {
    let file: PlantFile = load_json_file(path, strict, &PLANT_SCHEMA)?;
    let kind = match file.kind.as_str() {
        "wiener" => {
            let mut chs = Vec::with_capacity(file.channels.len());
            for (c, ch) in file.channels.into_iter().enumerate() {
                if ch.kernel1.is_some() || ch.kernel2.is_some() {
                    return Err(VlError::Schema(format!(
                        "{}: channel {c} carries Volterra kernels but the plant kind is 'wiener'",
                        path.display()
                    )));
                }
                let impulse_response = ch.impulse_response.ok_or_else(|| {
                    VlError::Schema(format!(
                        "{}: channel {c} is missing 'impulse_response'",
                        path.display()
                    ))
                })?;
                let polynomial = ch.polynomial.ok_or_else(|| {
                    VlError::Schema(format!(
                        "{}: channel {c} is missing 'polynomial'",
                        path.display()
                    ))
                })?;
                chs.push(WienerChannel {
                    impulse_response,
                    polynomial,
                });
            }
            PlantKind::Wiener(chs)
        }
        "finite_volterra" => {
            let mut chs = Vec::with_capacity(file.channels.len());
            for (c, ch) in file.channels.into_iter().enumerate() {
                if ch.impulse_response.is_some() || ch.polynomial.is_some() {
                    return Err(VlError::Schema(format!(
                        "{}: channel {c} carries Wiener fields but the plant kind is \
                         'finite_volterra'",
                        path.display()
                    )));
                }
                let kernel1 = ch.kernel1.ok_or_else(|| {
                    VlError::Schema(format!(
                        "{}: channel {c} is missing 'kernel1'",
                        path.display()
                    ))
                })?;
                chs.push(VolterraChannel {
                    kernel1,
                    kernel2: ch.kernel2,
                });
            }
            PlantKind::FiniteVolterra(chs)
        }
        other => {
            return Err(VlError::Schema(format!(
                "{}: unknown plant kind '{other}' (expected 'wiener' or 'finite_volterra')",
                path.display()
            )))
        }
    };
    let plant = SyntheticPlant {
        kind,
        input_names: file.inputs,
        output_name: file.output,
        memory_length: file.memory_length,
        noise_std: file.noise_std,
        integrate_output: file.integrate_output,
    };
    plant
        .validate()
        .map_err(|e| VlError::Schema(format!("{}: {e}", path.display())))?;
    Ok(plant)
}

// ---------------------------------------------------------------------------
// Excitation files
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum ExcitationFile {
    TwoLevel {
        low: f64,
        high: f64,
        dwell: usize,
    },
    FilteredNoise {
        gain: f64,
        pole: f64,
    },
    Multisine {
        components: usize,
        min_period: f64,
        max_period: f64,
        amplitude: f64,
    },
}

impl From<ExcitationFile> for InputKind {
    fn from(e: ExcitationFile) -> Self {
        match e {
            ExcitationFile::TwoLevel { low, high, dwell } => {
                InputKind::TwoLevel { low, high, dwell }
            }
            ExcitationFile::FilteredNoise { gain, pole } => InputKind::FilteredNoise { gain, pole },
            ExcitationFile::Multisine {
                components,
                min_period,
                max_period,
                amplitude,
            } => InputKind::Multisine {
                components,
                min_period,
                max_period,
                amplitude,
            },
        }
    }
}

/// Load a JSON array of excitation descriptions (one per plant input).
pub fn load_excitations(path: &Path, strict: bool) -> Result<Vec<InputKind>> {
    let kinds: Vec<ExcitationFile> = load_json_file(path, strict, &EXCITATION_LIST_SCHEMA)?;
    let kinds: Vec<InputKind> = kinds.into_iter().map(InputKind::from).collect();
    for (i, kind) in kinds.iter().enumerate() {
        kind.validate()
            .map_err(|e| VlError::Schema(format!("{}: excitation {i}: {e}", path.display())))?;
    }
    Ok(kinds)
}

// ---------------------------------------------------------------------------
// Study (experiment) files
// ---------------------------------------------------------------------------

/// Where a study gets its data.
#[derive(Debug, Clone)]
pub enum DataSource {
    /// Load columns from an existing CSV file.
    Csv {
        path: PathBuf,
        inputs: Vec<String>,
        output: String,
        sample_interval: f64,
    },
    /// Simulate a plant file under generated excitation.
    Plant {
        path: PathBuf,
        length: usize,
        seed: Option<u64>,
        excitation: Vec<InputKind>,
    },
}

/// Parsed study file: sampling ranges plus the data source. Relative paths
/// inside are resolved against the file's own directory.
#[derive(Debug, Clone)]
pub struct ExperimentFileData {
    pub trials: usize,
    pub arms: ArmSelection,
    pub seed: Option<u64>,
    pub memory_length: usize,
    pub constant_column: bool,
    pub ridge: f64,
    pub degree_range: (usize, usize),
    pub order_range: (usize, usize),
    pub scale_range: (f64, f64),
    pub start: Option<usize>,
    pub rows: Option<usize>,
    pub data: DataSource,
}

#[derive(Debug, Clone, Deserialize)]
struct CsvSourceFile {
    path: String,
    inputs: Vec<String>,
    output: String,
    #[serde(default = "default_sample_interval")]
    sample_interval: f64,
}

fn default_sample_interval() -> f64 {
    1.0
}

#[derive(Debug, Clone, Deserialize)]
struct PlantSourceFile {
    path: String,
    length: usize,
    #[serde(default)]
    seed: Option<u64>,
    excitation: Vec<ExcitationFile>,
}

#[derive(Debug, Clone, Deserialize)]
struct DataSourceFile {
    #[serde(default)]
    csv: Option<CsvSourceFile>,
    #[serde(default)]
    plant: Option<PlantSourceFile>,
}

#[derive(Debug, Clone, Deserialize)]
struct ExperimentFile {
    trials: usize,
    arms: String,
    #[serde(default)]
    seed: Option<u64>,
    memory_length: usize,
    #[serde(default)]
    constant_column: bool,
    #[serde(default)]
    ridge: f64,
    degree_range: [usize; 2],
    order_range: [usize; 2],
    scale_range: [f64; 2],
    #[serde(default)]
    start: Option<usize>,
    #[serde(default)]
    rows: Option<usize>,
    data: DataSourceFile,
}

pub fn load_experiment_file(path: &Path, strict: bool) -> Result<ExperimentFileData> {
    let file: ExperimentFile = load_json_file(path, strict, &EXPERIMENT_SCHEMA)?;
    let arms = match file.arms.as_str() {
        "fixed" => ArmSelection::Fixed,
        "variable" => ArmSelection::Variable,
        "both" => ArmSelection::Both,
        other => {
            return Err(VlError::Config(format!(
                "{}: unknown arms selection '{other}' (expected 'fixed', 'variable', or 'both')",
                path.display()
            )))
        }
    };
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let resolve = |p: &str| -> PathBuf {
        let p = Path::new(p);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            base.join(p)
        }
    };
    let data = match (file.data.csv, file.data.plant) {
        (Some(csv), None) => DataSource::Csv {
            path: resolve(&csv.path),
            inputs: csv.inputs,
            output: csv.output,
            sample_interval: csv.sample_interval,
        },
        (None, Some(plant)) => DataSource::Plant {
            path: resolve(&plant.path),
            length: plant.length,
            seed: plant.seed,
            excitation: plant.excitation.into_iter().map(InputKind::from).collect(),
        },
        (Some(_), Some(_)) => {
            return Err(VlError::Config(format!(
                "{}: 'data' declares both 'csv' and 'plant'; pick one",
                path.display()
            )))
        }
        (None, None) => {
            return Err(VlError::Config(format!(
                "{}: 'data' must declare either 'csv' or 'plant'",
                path.display()
            )))
        }
    };
    Ok(ExperimentFileData {
        trials: file.trials,
        arms,
        seed: file.seed,
        memory_length: file.memory_length,
        constant_column: file.constant_column,
        ridge: file.ridge,
        degree_range: (file.degree_range[0], file.degree_range[1]),
        order_range: (file.order_range[0], file.order_range[1]),
        scale_range: (file.scale_range[0], file.scale_range[1]),
        start: file.start,
        rows: file.rows,
        data,
    })
}

// ---------------------------------------------------------------------------
// Metrics and summary files
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
struct MetricsFile {
    start: usize,
    rows: usize,
    sse: f64,
    mse: f64,
    normalized_sse: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    levels: Option<Box<MetricsFile>>,
}

impl MetricsFile {
    fn from_metrics(m: &Metrics, levels: Option<&Metrics>) -> Self {
        MetricsFile {
            start: m.start,
            rows: m.rows,
            sse: m.sse,
            mse: m.mse,
            normalized_sse: m.normalized_sse,
            levels: levels.map(|l| Box::new(MetricsFile::from_metrics(l, None))),
        }
    }
}

/// Render metrics as JSON; `levels` carries the reconstructed-level metrics
/// of a differencing model when available.
pub fn render_metrics_json(metrics: &Metrics, levels: Option<&Metrics>) -> Result<String> {
    to_json_pretty(&MetricsFile::from_metrics(metrics, levels))
}

#[derive(Debug, Clone, Serialize)]
struct ArmSummaryFile {
    mode: &'static str,
    trials: usize,
    mean_sse: f64,
    median_sse: f64,
    std_sse: f64,
    min_sse: f64,
    max_sse: f64,
    mean_normalized: Option<f64>,
    total_resamples: usize,
}

#[derive(Debug, Clone, Serialize)]
struct HistogramFile {
    log10_edges: Vec<f64>,
    counts: Vec<HistogramArmFile>,
}

#[derive(Debug, Clone, Serialize)]
struct HistogramArmFile {
    mode: &'static str,
    bins: Vec<usize>,
}

#[derive(Debug, Clone, Serialize)]
struct SummaryFile {
    rng: &'static str,
    seed: u64,
    trials_per_arm: usize,
    arms: Vec<ArmSummaryFile>,
    histogram: HistogramFile,
}

/// Render a study summary as JSON, stamped with the generator and seed that
/// produced it.
pub fn render_summary_json(
    summary: &ExperimentSummary,
    seed: u64,
    trials_per_arm: usize,
) -> Result<String> {
    let file = SummaryFile {
        rng: crate::RNG_ALGORITHM,
        seed,
        trials_per_arm,
        arms: summary
            .arms
            .iter()
            .map(|a| ArmSummaryFile {
                mode: a.mode.label(),
                trials: a.trials,
                mean_sse: a.mean_sse,
                median_sse: a.median_sse,
                std_sse: a.std_sse,
                min_sse: a.min_sse,
                max_sse: a.max_sse,
                mean_normalized: a.mean_normalized,
                total_resamples: a.total_resamples,
            })
            .collect(),
        histogram: HistogramFile {
            log10_edges: summary.histogram.edges.clone(),
            counts: summary
                .histogram
                .counts
                .iter()
                .map(|(mode, bins)| HistogramArmFile {
                    mode: mode.label(),
                    bins: bins.clone(),
                })
                .collect(),
        },
    };
    to_json_pretty(&file)
}

// ---------------------------------------------------------------------------
// Tuning outcome file
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
struct TuneReportFile {
    best_sse: f64,
    best_start: usize,
    evaluations: usize,
    seed: u64,
    rng: &'static str,
    time_scales: Vec<f64>,
}

/// Render a small JSON report of a tuning run (the tuned structure itself
/// is saved separately as a structure file).
pub fn render_tune_report_json(outcome: &crate::tuner::TuneOutcome, seed: u64) -> Result<String> {
    let file = TuneReportFile {
        best_sse: outcome.best_sse,
        best_start: outcome.best_start,
        evaluations: outcome.evaluations,
        seed,
        rng: crate::RNG_ALGORITHM,
        time_scales: outcome.structure.time_scales(),
    };
    to_json_pretty(&file)
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------
