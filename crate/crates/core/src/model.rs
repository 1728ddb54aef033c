//! Model structure, coefficient bookkeeping, and parameter-count arithmetic.
//!
//! A model is declared per input: input `i` participates in polynomial terms
//! up to its degree `N_i`, and each (term, input) pair carries its own
//! Laguerre expansion (order count and time scale). Degree-`n` regressor
//! columns are all degree-`n` monomials over the filtered signals of the
//! inputs active at that term, one column per *multiset* of factors — the
//! reduced Kronecker product — because coefficient symmetry makes the
//! repeated products of the full Kronecker power redundant.

use serde::{Deserialize, Serialize};

use crate::error::{Result, VlError};
use crate::laguerre::LaguerreSeriesSpec;

/// One input channel: its column name, polynomial degree, and one Laguerre
/// expansion per term `1..=degree` (index 0 of `terms` belongs to term 1).
#[derive(Debug, Clone, PartialEq)]
pub struct InputSpec {
    pub name: String,
    pub degree: usize,
    pub terms: Vec<LaguerreSeriesSpec>,
}

/// Full model declaration.
///
/// `memory_length` is the shared lag depth `M` (lags `0..=M` enter every
/// filtered signal); `sample_interval` is carried for reporting only — all
/// internal time arithmetic is in samples.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelStructure {
    pub memory_length: usize,
    pub sample_interval: f64,
    pub inputs: Vec<InputSpec>,
    pub output_name: String,
    pub constant_column: bool,
}

impl ModelStructure {
    pub fn validate(&self) -> Result<()> {
        if self.inputs.is_empty() {
            return Err(VlError::InvalidParameter(
                "a model needs at least one input".into(),
            ));
        }
        if !self.sample_interval.is_finite() || self.sample_interval <= 0.0 {
            return Err(VlError::InvalidParameter(format!(
                "sample interval must be finite and positive, got {}",
                self.sample_interval
            )));
        }
        if self.output_name.is_empty() {
            return Err(VlError::InvalidParameter(
                "output name must not be empty".into(),
            ));
        }
        let mut seen = std::collections::BTreeSet::new();
        for input in &self.inputs {
            if input.name.is_empty() {
                return Err(VlError::InvalidParameter(
                    "input names must not be empty".into(),
                ));
            }
            if !seen.insert(input.name.as_str()) {
                return Err(VlError::InvalidParameter(format!(
                    "duplicate input name '{}'",
                    input.name
                )));
            }
            if input.degree == 0 {
                return Err(VlError::InvalidParameter(format!(
                    "input '{}' must have degree at least 1",
                    input.name
                )));
            }
            if input.terms.len() != input.degree {
                return Err(VlError::InvalidParameter(format!(
                    "input '{}' declares degree {} but {} expansions",
                    input.name,
                    input.degree,
                    input.terms.len()
                )));
            }
            for (t, spec) in input.terms.iter().enumerate() {
                spec.validate().map_err(|e| {
                    VlError::InvalidParameter(format!(
                        "input '{}', term {}: {e}",
                        input.name,
                        t + 1
                    ))
                })?;
                // A basis with more functions than lag samples cannot be
                // resolved: the sampled basis has M+1 rows.
                if spec.order_count > self.memory_length + 1 {
                    return Err(VlError::InvalidParameter(format!(
                        "input '{}', term {}: {} basis functions exceed the {} lag samples \
                         of memory length {}",
                        input.name,
                        t + 1,
                        spec.order_count,
                        self.memory_length + 1,
                        self.memory_length
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn num_inputs(&self) -> usize {
        self.inputs.len()
    }

    /// Highest polynomial degree over all inputs.
    pub fn max_degree(&self) -> usize {
        self.inputs.iter().map(|i| i.degree).max().unwrap_or(0)
    }

    /// Expansion of input `i` at term `n` (1-based term), if active there.
    pub fn term_spec(&self, term: usize, input: usize) -> Option<&LaguerreSeriesSpec> {
        self.inputs.get(input).and_then(|inp| {
            if term >= 1 && term <= inp.degree {
                inp.terms.get(term - 1)
            } else {
                None
            }
        })
    }

    /// Indices of the inputs active at term `n` (those with degree >= n),
    /// in declaration order.
    pub fn active_inputs(&self, term: usize) -> Vec<usize> {
        self.inputs
            .iter()
            .enumerate()
            .filter(|(_, inp)| inp.degree >= term)
            .map(|(i, _)| i)
            .collect()
    }

    /// Total basis-function count stacked at term `n`.
    pub fn stacked_order_count(&self, term: usize) -> usize {
        self.active_inputs(term)
            .iter()
            .map(|&i| self.inputs[i].terms[term - 1].order_count)
            .sum()
    }

    /// Flat list of every (input, term) slot that carries a time scale, in
    /// a fixed order (inputs outer, terms inner). This is the coordinate
    /// order used by the tuner.
    pub fn scale_slots(&self) -> Vec<(usize, usize)> {
        let mut slots = Vec::new();
        for (i, input) in self.inputs.iter().enumerate() {
            for t in 1..=input.degree {
                slots.push((i, t));
            }
        }
        slots
    }

    /// Current time scales in [`Self::scale_slots`] order.
    pub fn time_scales(&self) -> Vec<f64> {
        self.inputs
            .iter()
            .flat_map(|inp| inp.terms.iter().map(|s| s.time_scale))
            .collect()
    }

    /// Copy of the structure with all time scales replaced, in
    /// [`Self::scale_slots`] order.
    pub fn with_time_scales(&self, scales: &[f64]) -> Result<ModelStructure> {
        let slots = self.scale_slots();
        if scales.len() != slots.len() {
            return Err(VlError::InvalidParameter(format!(
                "expected {} time scales, got {}",
                slots.len(),
                scales.len()
            )));
        }
        let mut out = self.clone();
        for (&(i, t), &a) in slots.iter().zip(scales.iter()) {
            out.inputs[i].terms[t - 1].time_scale = a;
        }
        out.validate()?;
        Ok(out)
    }
}

/// Which model coefficient a design-matrix column belongs to.
///
/// `factors` lists the `term` basis functions whose product forms the
/// column, as `(input index, basis order)` pairs sorted ascending — the
/// canonical representative of the factor multiset. The constant column, if
/// present, has `term == 0` and no factors.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CoefficientIndex {
    pub term: usize,
    pub factors: Vec<(usize, usize)>,
}

/// Quality numbers attached to a fitted model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitStats {
    /// Sum of squared residuals on the fitting rows.
    pub sse: f64,
    pub num_rows: usize,
    /// Singular-value ratio of the (possibly ridge-augmented) design;
    /// 0 for an all-zero design, always finite.
    pub condition_estimate: f64,
    pub rank: usize,
    /// True when there were fewer rows than coefficients and no ridge.
    pub underdetermined: bool,
}

/// A structure together with estimated coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct FittedModel {
    pub structure: ModelStructure,
    /// Coefficients, aligned with `index`.
    pub theta: Vec<f64>,
    pub index: Vec<CoefficientIndex>,
    pub stats: FitStats,
}

/// All multisets of `power` indices drawn from `0..len`, each sorted
/// ascending, enumerated in lexicographic order.
///
/// This single enumeration defines the column order of every degree-`power`
/// block, so [`reduced_kronecker`] and the design assembly cannot drift
/// apart.
pub fn multiset_indices(len: usize, power: usize) -> Result<Vec<Vec<usize>>> {
    if len == 0 {
        return Err(VlError::InvalidParameter(
            "multiset enumeration needs a non-empty index set".into(),
        ));
    }
    if power == 0 {
        return Err(VlError::InvalidParameter(
            "multiset enumeration needs power at least 1".into(),
        ));
    }
    let mut out = Vec::with_capacity(multiset_count(len, power)?);
    let mut idx = vec![0usize; power];
    loop {
        out.push(idx.clone());
        // Advance the nondecreasing odometer: bump the rightmost position
        // that can still grow, then level everything after it.
        let mut p = power;
        loop {
            if p == 0 {
                return Ok(out);
            }
            p -= 1;
            if idx[p] + 1 < len {
                idx[p] += 1;
                let v = idx[p];
                for q in idx.iter_mut().skip(p + 1) {
                    *q = v;
                }
                break;
            }
        }
    }
}

/// Number of multisets of size `power` from `len` symbols:
/// `C(len + power - 1, power)`.
pub fn multiset_count(len: usize, power: usize) -> Result<usize> {
    let c = binomial((len + power - 1) as u128, power as u128)?;
    usize::try_from(c).map_err(|_| {
        VlError::Overflow(format!(
            "C({}, {power}) does not fit in usize",
            len + power - 1
        ))
    })
}

fn binomial(n: u128, k: u128) -> Result<u128> {
    if k > n {
        return Ok(0);
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc
            .checked_mul(n - i)
            .ok_or_else(|| VlError::Overflow(format!("C({n}, {k}) exceeds 128-bit range")))?;
        acc /= i + 1;
    }
    Ok(acc)
}

/// Degree-`power` reduced Kronecker power of `v`: products over every factor
/// multiset, in [`multiset_indices`] order. Length `C(len+power-1, power)`.
pub fn reduced_kronecker(v: &[f64], power: usize) -> Result<Vec<f64>> {
    let indices = multiset_indices(v.len(), power)?;
    Ok(indices
        .iter()
        .map(|combo| combo.iter().map(|&j| v[j]).product())
        .collect())
}

/// Number of distinct coefficients the structure actually estimates:
/// one per factor multiset per term, plus the constant column.
pub fn coefficient_count(structure: &ModelStructure) -> Result<usize> {
    structure.validate()?;
    let mut total = if structure.constant_column { 1 } else { 0 };
    for n in 1..=structure.max_degree() {
        let rho = structure.stacked_order_count(n);
        if rho > 0 {
            total += multiset_count(rho, n)?;
        }
    }
    Ok(total)
}

/// Coefficient count of the full discrete Volterra model of degree `degree`
/// and memory `memory`, counting every lag tuple of every term:
/// `((M+1)^(N+1) - 1) / M` for `M >= 1`.
pub fn volterra_param_count_exact(degree: u32, memory: u64) -> Result<u128> {
    if memory == 0 {
        return Err(VlError::InvalidParameter(
            "exact count needs memory length at least 1".into(),
        ));
    }
    let m1 = memory as u128 + 1;
    let pow = m1.checked_pow(degree + 1).ok_or_else(|| {
        VlError::Overflow(format!("({memory}+1)^{} exceeds 128-bit range", degree + 1))
    })?;
    Ok((pow - 1) / memory as u128)
}

/// Common order-of-magnitude approximation of the same count: `M^N`.
pub fn volterra_param_count_approx(degree: u32, memory: u64) -> Result<u128> {
    (memory as u128)
        .checked_pow(degree)
        .ok_or_else(|| VlError::Overflow(format!("{memory}^{degree} exceeds 128-bit range")))
}

/// Nominal coefficient count of a degree-`degree` expansion with a uniform
/// basis of `order` functions per term before symmetry reduction: `R^N`.
pub fn vl_param_count(degree: u32, order: u64) -> Result<u128> {
    if degree == 0 {
        return Err(VlError::InvalidParameter(
            "degree must be at least 1".into(),
        ));
    }
    if order == 0 {
        return Err(VlError::InvalidParameter(
            "order count must be at least 1".into(),
        ));
    }
    (order as u128)
        .checked_pow(degree)
        .ok_or_else(|| VlError::Overflow(format!("{order}^{degree} exceeds 128-bit range")))
}
