//! Lag embedding, design-matrix assembly, least-squares fitting, prediction.
//!
//! For each polynomial term `n` the assembly filters every active input
//! through its sampled Laguerre basis (a lag-matrix/basis-matrix product),
//! stacks the filtered signals side by side, and expands each row with the
//! degree-`n` reduced Kronecker product. Term blocks are concatenated, the
//! optional constant column first. Row `d` of the design corresponds to
//! sample `start + d`; `start` must be at least the memory length so every
//! lag window is fully inside the data.

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, VlError};
use crate::laguerre::build_basis_matrix;
use crate::lstsq;
use crate::model::{
    coefficient_count, multiset_indices, CoefficientIndex, FitStats, FittedModel, ModelStructure,
};

/// A named multichannel dataset sampled on a shared clock.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub sample_interval: f64,
    pub input_names: Vec<String>,
    /// One series per entry of `input_names`, all the same length.
    pub inputs: Vec<Vec<f64>>,
    pub output_name: String,
    pub output: Vec<f64>,
}

impl Dataset {
    pub fn new(
        sample_interval: f64,
        input_names: Vec<String>,
        inputs: Vec<Vec<f64>>,
        output_name: String,
        output: Vec<f64>,
    ) -> Result<Self> {
        if !sample_interval.is_finite() || sample_interval <= 0.0 {
            return Err(VlError::InvalidParameter(format!(
                "sample interval must be finite and positive, got {sample_interval}"
            )));
        }
        if input_names.len() != inputs.len() {
            return Err(VlError::InvalidParameter(format!(
                "{} input names but {} input series",
                input_names.len(),
                inputs.len()
            )));
        }
        if input_names.is_empty() {
            return Err(VlError::InvalidParameter(
                "a dataset needs at least one input".into(),
            ));
        }
        let len = output.len();
        for (name, series) in input_names.iter().zip(inputs.iter()) {
            if series.len() != len {
                return Err(VlError::Data(format!(
                    "column '{name}' has {} samples but the output has {len}",
                    series.len()
                )));
            }
        }
        let ds = Dataset {
            sample_interval,
            input_names,
            inputs,
            output_name,
            output,
        };
        ds.check_finite()?;
        Ok(ds)
    }

    fn check_finite(&self) -> Result<()> {
        for (name, series) in self.input_names.iter().zip(self.inputs.iter()) {
            if let Some(j) = series.iter().position(|v| !v.is_finite()) {
                return Err(VlError::Data(format!(
                    "column '{name}' contains a non-finite value at sample {j}"
                )));
            }
        }
        if let Some(j) = self.output.iter().position(|v| !v.is_finite()) {
            return Err(VlError::Data(format!(
                "column '{}' contains a non-finite value at sample {j}",
                self.output_name
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.output.len()
    }

    pub fn is_empty(&self) -> bool {
        self.output.is_empty()
    }

    pub fn input_by_name(&self, name: &str) -> Option<&[f64]> {
        self.input_names
            .iter()
            .position(|n| n == name)
            .map(|i| self.inputs[i].as_slice())
    }
}

/// Assembled regressor block for a window of samples.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    /// One row per sample `start + d`, one column per coefficient.
    pub rows: DMatrix<f64>,
    /// First sample index covered by the rows.
    pub start: usize,
    /// Which coefficient each column estimates.
    pub column_index: Vec<CoefficientIndex>,
}

impl DesignMatrix {
    pub fn num_rows(&self) -> usize {
        self.rows.nrows()
    }

    pub fn num_cols(&self) -> usize {
        self.rows.ncols()
    }
}

/// Lag-embed `signal`: row `d`, column `j` is `signal[start + d - j]` for
/// lags `j = 0..=memory`. Requires `start >= memory` and the window to stay
/// inside the signal.
pub fn build_lag_matrix(
    signal: &[f64],
    start: usize,
    rows: usize,
    memory: usize,
) -> Result<DMatrix<f64>> {
    if start < memory {
        return Err(VlError::Range(format!(
            "window start {start} is inside the warm-up region; it must be at least the \
             memory length {memory}"
        )));
    }
    if rows == 0 {
        return Err(VlError::Range("a lag window needs at least one row".into()));
    }
    let end = start
        .checked_add(rows)
        .ok_or_else(|| VlError::Overflow("window end exceeds usize".into()))?;
    if end > signal.len() {
        return Err(VlError::Range(format!(
            "window [{start}, {end}) runs past the {} available samples",
            signal.len()
        )));
    }
    let mut out = DMatrix::zeros(rows, memory + 1);
    for d in 0..rows {
        for j in 0..=memory {
            out[(d, j)] = signal[start + d - j];
        }
    }
    Ok(out)
}

/// Resolve optional window bounds against a dataset and structure: `start`
/// defaults to the memory length (the first usable sample), `rows` to all
/// remaining samples.
pub fn resolve_window(
    dataset: &Dataset,
    structure: &ModelStructure,
    start: Option<usize>,
    rows: Option<usize>,
) -> Result<(usize, usize)> {
    let start = start.unwrap_or(structure.memory_length);
    if start < structure.memory_length {
        return Err(VlError::Range(format!(
            "window start {start} is inside the warm-up region; it must be at least the \
             memory length {}",
            structure.memory_length
        )));
    }
    if start >= dataset.len() {
        return Err(VlError::Range(format!(
            "window start {start} is past the {} available samples",
            dataset.len()
        )));
    }
    let rows = rows.unwrap_or(dataset.len() - start);
    if rows == 0 {
        return Err(VlError::Range("the fitting window is empty".into()));
    }
    if start + rows > dataset.len() {
        return Err(VlError::Range(format!(
            "window [{start}, {}) runs past the {} available samples",
            start + rows,
            dataset.len()
        )));
    }
    Ok((start, rows))
}

/// Output samples aligned with the design rows of the same window.
pub fn output_window(dataset: &Dataset, start: usize, rows: usize) -> Result<&[f64]> {
    if start + rows > dataset.len() {
        return Err(VlError::Range(format!(
            "window [{start}, {}) runs past the {} available samples",
            start + rows,
            dataset.len()
        )));
    }
    Ok(&dataset.output[start..start + rows])
}

/// Assemble the design matrix of `structure` over `dataset` for the window
/// of `rows` samples beginning at `start`.
pub fn assemble(
    dataset: &Dataset,
    structure: &ModelStructure,
    start: usize,
    rows: usize,
) -> Result<DesignMatrix> {
    structure.validate()?;
    // Lag matrices are per input and shared across terms.
    let mut lag_matrices = Vec::with_capacity(structure.num_inputs());
    for input in &structure.inputs {
        let signal = dataset.input_by_name(&input.name).ok_or_else(|| {
            VlError::Schema(format!(
                "model input '{}' is not a dataset column (dataset has: {})",
                input.name,
                dataset.input_names.join(", ")
            ))
        })?;
        lag_matrices.push(build_lag_matrix(
            signal,
            start,
            rows,
            structure.memory_length,
        )?);
    }

    let total_cols = coefficient_count(structure)?;
    let mut out = DMatrix::zeros(rows, total_cols);
    let mut column_index = Vec::with_capacity(total_cols);
    let mut col = 0;

    if structure.constant_column {
        for d in 0..rows {
            out[(d, 0)] = 1.0;
        }
        column_index.push(CoefficientIndex {
            term: 0,
            factors: Vec::new(),
        });
        col = 1;
    }

    for n in 1..=structure.max_degree() {
        let active = structure.active_inputs(n);
        let rho = structure.stacked_order_count(n);
        // Filtered signals stacked over active inputs: rows x rho.
        let mut filtered = DMatrix::zeros(rows, rho);
        // Which (input, basis order) each stacked slot came from.
        let mut slots = Vec::with_capacity(rho);
        let mut offset = 0;
        for &i in &active {
            let spec = structure.inputs[i].terms[n - 1];
            let basis = build_basis_matrix(&spec, structure.memory_length)?;
            let block = &lag_matrices[i] * &basis.samples;
            filtered
                .view_mut((0, offset), (rows, spec.order_count))
                .copy_from(&block);
            for r in 0..spec.order_count {
                slots.push((i, r));
            }
            offset += spec.order_count;
        }
        let combos = multiset_indices(rho, n)?;
        for (c, combo) in combos.iter().enumerate() {
            for d in 0..rows {
                out[(d, col + c)] = combo.iter().map(|&p| filtered[(d, p)]).product();
            }
            column_index.push(CoefficientIndex {
                term: n,
                factors: combo.iter().map(|&p| slots[p]).collect(),
            });
        }
        col += combos.len();
    }
    debug_assert_eq!(col, total_cols);

    Ok(DesignMatrix {
        rows: out,
        start,
        column_index,
    })
}

/// Estimate coefficients for `structure` from an assembled design and the
/// aligned output samples. `ridge == 0` gives plain least squares; rank
/// deficiency yields the minimum-norm solution, reported through
/// [`FitStats`].
pub fn fit(
    design: &DesignMatrix,
    output: &[f64],
    ridge: f64,
    structure: &ModelStructure,
) -> Result<FittedModel> {
    if output.len() != design.num_rows() {
        return Err(VlError::InvalidParameter(format!(
            "design has {} rows but the output window has {} samples",
            design.num_rows(),
            output.len()
        )));
    }
    let expected = coefficient_count(structure)?;
    if design.num_cols() != expected {
        return Err(VlError::Integrity(format!(
            "design has {} columns but the structure declares {expected} coefficients",
            design.num_cols()
        )));
    }
    let y = DVector::from_column_slice(output);
    let ls = lstsq::solve_least_squares(&design.rows, &y, ridge)?;
    let underdetermined = ridge == 0.0 && design.num_rows() < design.num_cols();
    Ok(FittedModel {
        structure: structure.clone(),
        theta: ls.solution.as_slice().to_vec(),
        index: design.column_index.clone(),
        stats: FitStats {
            sse: ls.sse,
            num_rows: design.num_rows(),
            condition_estimate: ls.condition,
            rank: ls.rank,
            underdetermined,
        },
    })
}

/// Predict the model output over a window of `dataset`. The dataset must
/// contain every input column named by the model structure.
pub fn predict(
    model: &FittedModel,
    dataset: &Dataset,
    start: usize,
    rows: usize,
) -> Result<Vec<f64>> {
    if model.theta.len() != model.index.len() {
        return Err(VlError::Integrity(format!(
            "model carries {} coefficients but {} column descriptors",
            model.theta.len(),
            model.index.len()
        )));
    }
    let design = assemble(dataset, &model.structure, start, rows)?;
    if design.column_index != model.index {
        return Err(VlError::Integrity(
            "model column index does not match the assembled design".into(),
        ));
    }
    let theta = DVector::from_column_slice(&model.theta);
    let pred = &design.rows * theta;
    Ok(pred.as_slice().to_vec())
}
