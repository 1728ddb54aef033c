//! Time-scale search.
//!
//! Basis time scales enter the regressor nonlinearly, so they cannot be
//! estimated by the least-squares step. This module wraps the whole
//! fit-and-score pipeline into a scalar objective and minimizes it with a
//! bounded Nelder-Mead simplex, run from several quasi-random start points.
//! The search works in log(scale) coordinates — time scales live on a ratio
//! scale spanning decades — and clamps every candidate into the configured
//! box, so no evaluation ever leaves it. Candidates that cannot be
//! evaluated (structure/window inconsistencies, numerical failures) score
//! positive infinity instead of aborting the search; if every evaluation is
//! unusable the search itself fails with the full trace attached.
//!
//! Everything is deterministic: the start points come from a Halton
//! sequence with a seeded random shift, evaluation order is fixed, and the
//! total number of objective evaluations never exceeds the configured
//! budget (it is split across starts in advance).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::error::{Result, VlError};
use crate::model::ModelStructure;
use crate::regressor::{assemble, fit, output_window, resolve_window, Dataset, DesignMatrix};

/// Search configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct TuneConfig {
    /// Inclusive time-scale box applied to every slot.
    pub bounds: (f64, f64),
    /// Number of independent simplex starts.
    pub multistart_count: usize,
    /// Hard cap on total objective evaluations, shared across starts.
    pub max_evaluations: usize,
    /// Relative spread of simplex objective values that counts as converged.
    pub tolerance: f64,
    /// Seed for the start-point shift.
    pub seed: u64,
    /// Fraction of the window held out for scoring (0 scores the training
    /// residual itself).
    pub validation_fraction: f64,
    /// Ridge penalty passed through to each fit.
    pub ridge: f64,
}

impl Default for TuneConfig {
    fn default() -> Self {
        TuneConfig {
            bounds: (0.005, 100.0),
            multistart_count: 8,
            max_evaluations: 2000,
            tolerance: 1e-10,
            seed: 0,
            validation_fraction: 0.0,
            ridge: 0.0,
        }
    }
}

impl TuneConfig {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.bounds;
        if !lo.is_finite() || !hi.is_finite() || lo <= 0.0 || lo >= hi {
            return Err(VlError::InvalidParameter(format!(
                "time-scale bounds must satisfy 0 < low < high, got ({lo}, {hi})"
            )));
        }
        if self.multistart_count == 0 {
            return Err(VlError::InvalidParameter(
                "at least one start is required".into(),
            ));
        }
        if self.max_evaluations == 0 {
            return Err(VlError::InvalidParameter(
                "the evaluation budget must be at least 1".into(),
            ));
        }
        if !self.tolerance.is_finite() || self.tolerance < 0.0 {
            return Err(VlError::InvalidParameter(format!(
                "tolerance must be finite and non-negative, got {}",
                self.tolerance
            )));
        }
        if !self.validation_fraction.is_finite() || !(0.0..1.0).contains(&self.validation_fraction)
        {
            return Err(VlError::InvalidParameter(format!(
                "validation fraction must lie in [0, 1), got {}",
                self.validation_fraction
            )));
        }
        if !self.ridge.is_finite() || self.ridge < 0.0 {
            return Err(VlError::InvalidParameter(format!(
                "ridge penalty must be finite and non-negative, got {}",
                self.ridge
            )));
        }
        Ok(())
    }
}

/// One objective evaluation, in the order they happened.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    /// Which start proposed the candidate.
    pub start_index: usize,
    /// Global evaluation counter, 0-based.
    pub evaluation: usize,
    /// Candidate scales in slot order, already clamped into the box.
    pub time_scales: Vec<f64>,
    /// Objective value; positive infinity marks an unusable candidate.
    pub sse: f64,
}

/// Search result.
#[derive(Debug, Clone, PartialEq)]
pub struct TuneOutcome {
    /// The input structure with the winning time scales substituted.
    pub structure: ModelStructure,
    pub best_sse: f64,
    /// Start that produced the winner (ties go to the earlier start).
    pub best_start: usize,
    pub evaluations: usize,
    pub trace: Vec<TraceRow>,
}

/// Score one candidate structure: assemble, fit, and return the residual on
/// the held-out tail of the window (or the training residual when
/// `validation_fraction` is zero). Any failure maps to positive infinity so
/// searches can treat the objective as total.
pub fn objective(
    dataset: &Dataset,
    structure: &ModelStructure,
    start: usize,
    rows: usize,
    ridge: f64,
    validation_fraction: f64,
) -> f64 {
    match objective_inner(dataset, structure, start, rows, ridge, validation_fraction) {
        Ok(v) if v.is_finite() => v,
        _ => f64::INFINITY,
    }
}

fn objective_inner(
    dataset: &Dataset,
    structure: &ModelStructure,
    start: usize,
    rows: usize,
    ridge: f64,
    validation_fraction: f64,
) -> Result<f64> {
    let design = assemble(dataset, structure, start, rows)?;
    let y = output_window(dataset, start, rows)?;
    let val_rows = (rows as f64 * validation_fraction).floor() as usize;
    if val_rows == 0 {
        let model = fit(&design, y, ridge, structure)?;
        return Ok(model.stats.sse);
    }
    let train_rows = rows - val_rows;
    if train_rows == 0 {
        return Err(VlError::InvalidParameter(
            "validation split leaves no training rows".into(),
        ));
    }
    let train = DesignMatrix {
        rows: design.rows.rows(0, train_rows).into_owned(),
        start: design.start,
        column_index: design.column_index.clone(),
    };
    let model = fit(&train, &y[..train_rows], ridge, structure)?;
    let theta = nalgebra::DVector::from_column_slice(&model.theta);
    let pred = design.rows.rows(train_rows, val_rows) * theta;
    let mut sse = 0.0;
    for (p, t) in pred.iter().zip(y[train_rows..].iter()) {
        let e = t - p;
        sse += e * e;
    }
    Ok(sse)
}

/// Van der Corput radical inverse — digit reversal of `index` in `base`.
fn halton(mut index: usize, base: usize) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    while index > 0 {
        f /= base as f64;
        r += f * (index % base) as f64;
        index /= base;
    }
    r
}

const PRIMES: [usize; 16] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53];

/// Minimize the fit objective over every time-scale slot of `structure`.
///
/// `start`/`rows` follow the same defaults as fitting (see
/// [`resolve_window`]). Returns the tuned structure, the winning score, and
/// the complete evaluation trace. When several starts tie on the score the
/// earliest start wins, which keeps the outcome independent of scheduling.
pub fn tune_time_scales(
    dataset: &Dataset,
    structure: &ModelStructure,
    start: Option<usize>,
    rows: Option<usize>,
    config: &TuneConfig,
) -> Result<TuneOutcome> {
    config.validate()?;
    let (start, rows) = resolve_window(dataset, structure, start, rows)?;
    let slots = structure.scale_slots();
    let dim = slots.len();
    if dim == 0 {
        return Err(VlError::InvalidParameter(
            "the structure has no time-scale slots to tune".into(),
        ));
    }

    let (lo, hi) = (config.bounds.0.ln(), config.bounds.1.ln());
    let span = hi - lo;

    // One random shift, shared by all starts, turns the raw Halton points
    // into a randomized low-discrepancy set.
    let mut rng = ChaCha12Rng::seed_from_u64(config.seed);
    let shift: Vec<f64> = (0..dim).map(|_| rng.random_range(0.0..1.0)).collect();

    let mut trace: Vec<TraceRow> = Vec::new();
    let mut best: Option<(f64, usize, Vec<f64>)> = None;

    // Split the budget ahead of time; earlier starts get the remainder.
    let base_budget = config.max_evaluations / config.multistart_count;
    let remainder = config.max_evaluations % config.multistart_count;

    for s in 0..config.multistart_count {
        let budget = base_budget + usize::from(s < remainder);
        if budget == 0 {
            continue;
        }
        let origin: Vec<f64> = (0..dim)
            .map(|d| {
                let h = halton(s + 1, PRIMES[d % PRIMES.len()]);
                let u = (h + shift[d]).fract();
                lo + u * span
            })
            .collect();

        let mut used = 0usize;
        // Evaluate a candidate (clamped in place), recording the trace.
        let mut eval = |z: &mut Vec<f64>, trace: &mut Vec<TraceRow>| -> Option<f64> {
            if used >= budget {
                return None;
            }
            used += 1;
            for v in z.iter_mut() {
                *v = v.clamp(lo, hi);
            }
            let scales: Vec<f64> = z.iter().map(|v| v.exp()).collect();
            let sse = match structure.with_time_scales(&scales) {
                Ok(candidate) => objective(
                    dataset,
                    &candidate,
                    start,
                    rows,
                    config.ridge,
                    config.validation_fraction,
                ),
                Err(_) => f64::INFINITY,
            };
            trace.push(TraceRow {
                start_index: s,
                evaluation: trace.len(),
                time_scales: scales,
                sse,
            });
            Some(sse)
        };

        // Initial simplex: the origin plus one offset vertex per dimension,
        // kept inside the box.
        let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(dim + 1);
        let delta = 0.2 * span;
        'start_loop: {
            let mut x0 = origin.clone();
            let Some(f0) = eval(&mut x0, &mut trace) else {
                break 'start_loop;
            };
            simplex.push((x0.clone(), f0));
            for d in 0..dim {
                let mut x = x0.clone();
                x[d] = if x[d] + delta <= hi {
                    x[d] + delta
                } else {
                    x[d] - delta
                };
                let Some(f) = eval(&mut x, &mut trace) else {
                    break 'start_loop;
                };
                simplex.push((x, f));
            }

            // Standard Nelder-Mead coefficients.
            let (alpha, gamma, beta, sigma) = (1.0, 2.0, 0.5, 0.5);
            loop {
                simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).expect("no NaN objectives"));
                let f_best = simplex[0].1;
                let f_worst = simplex[dim].1;
                if f_worst.is_finite()
                    && (f_worst - f_best) <= config.tolerance * (f_best.abs() + 1e-30)
                {
                    break;
                }
                // Centroid of all but the worst vertex.
                let mut centroid = vec![0.0; dim];
                for (x, _) in simplex.iter().take(dim) {
                    for d in 0..dim {
                        centroid[d] += x[d] / dim as f64;
                    }
                }
                let worst = simplex[dim].0.clone();
                let mut reflected: Vec<f64> = (0..dim)
                    .map(|d| centroid[d] + alpha * (centroid[d] - worst[d]))
                    .collect();
                let Some(f_r) = eval(&mut reflected, &mut trace) else {
                    break;
                };
                if f_r < f_best {
                    // Try to expand further in the same direction.
                    let mut expanded: Vec<f64> = (0..dim)
                        .map(|d| centroid[d] + gamma * (reflected[d] - centroid[d]))
                        .collect();
                    let Some(f_e) = eval(&mut expanded, &mut trace) else {
                        break;
                    };
                    simplex[dim] = if f_e < f_r {
                        (expanded, f_e)
                    } else {
                        (reflected, f_r)
                    };
                } else if f_r < simplex[dim - 1].1 {
                    simplex[dim] = (reflected, f_r);
                } else {
                    // Contract toward the better of worst/reflected.
                    let toward = if f_r < simplex[dim].1 {
                        &reflected
                    } else {
                        &worst
                    };
                    let mut contracted: Vec<f64> = (0..dim)
                        .map(|d| centroid[d] + beta * (toward[d] - centroid[d]))
                        .collect();
                    let Some(f_c) = eval(&mut contracted, &mut trace) else {
                        break;
                    };
                    if f_c < simplex[dim].1.min(f_r) {
                        simplex[dim] = (contracted, f_c);
                    } else {
                        // Shrink everything toward the best vertex.
                        let anchor = simplex[0].0.clone();
                        let mut exhausted = false;
                        for v in simplex.iter_mut().skip(1) {
                            let mut x: Vec<f64> = (0..dim)
                                .map(|d| anchor[d] + sigma * (v.0[d] - anchor[d]))
                                .collect();
                            let Some(f) = eval(&mut x, &mut trace) else {
                                exhausted = true;
                                break;
                            };
                            *v = (x, f);
                        }
                        if exhausted {
                            break;
                        }
                    }
                }
            }
        }

        // Fold this start's evaluations into the global winner.
        for row in trace.iter().filter(|r| r.start_index == s) {
            let better = match &best {
                None => row.sse < f64::INFINITY,
                Some((b, _, _)) => row.sse < *b,
            };
            if better {
                let z: Vec<f64> = row.time_scales.iter().map(|a| a.ln()).collect();
                best = Some((row.sse, s, z));
            }
        }
    }

    let evaluations = trace.len();
    match best {
        Some((best_sse, best_start, z)) => {
            let scales: Vec<f64> = z.iter().map(|v| v.exp()).collect();
            let structure = structure.with_time_scales(&scales)?;
            Ok(TuneOutcome {
                structure,
                best_sse,
                best_start,
                evaluations,
                trace,
            })
        }
        None => Err(VlError::TuningFailed { evaluations, trace }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::laguerre::LaguerreSeriesSpec;
    use crate::model::InputSpec;
    use crate::simulate::{generate_input, InputKind};

    /// Linear plant y = conv(e^{-0.2 j}, u) packaged as a dataset.
    fn exponential_plant_dataset(len: usize, memory: usize, seed: u64) -> Dataset {
        let u = generate_input(
            &InputKind::TwoLevel {
                low: -1.0,
                high: 1.0,
                dwell: 4,
            },
            len,
            seed,
        )
        .unwrap();
        let y: Vec<f64> = (0..len)
            .map(|k| {
                (0..=memory.min(k))
                    .map(|j| (-0.2 * j as f64).exp() * u[k - j])
                    .sum()
            })
            .collect();
        Dataset::new(1.0, vec!["u".into()], vec![u], "y".into(), y).unwrap()
    }

    fn first_order_structure(memory: usize, orders: usize, a: f64) -> ModelStructure {
        ModelStructure {
            memory_length: memory,
            sample_interval: 1.0,
            inputs: vec![InputSpec {
                name: "u".into(),
                degree: 1,
                terms: vec![LaguerreSeriesSpec {
                    order_count: orders,
                    time_scale: a,
                }],
            }],
            output_name: "y".into(),
            constant_column: false,
        }
    }

    #[test]
    fn objective_prefers_the_true_scale() {
        // e^{-0.2 j} is proportional to the order-0 function at a = 0.2, so
        // a single-function model scores near zero exactly there.
        let ds = exponential_plant_dataset(500, 40, 5);
        let at = |a: f64| {
            let s = first_order_structure(40, 1, a);
            objective(&ds, &s, 40, 400, 0.0, 0.0)
        };
        let truth = at(0.2);
        assert!(
            truth < 1e-18 * 400.0,
            "objective at the true scale is {truth}"
        );
        assert!(at(0.1) > truth * 1e6 || at(0.1) > 1e-6);
        assert!(at(0.4) > truth * 1e6 || at(0.4) > 1e-6);
    }

    #[test]
    fn objective_is_deterministic_and_total() {
        let ds = exponential_plant_dataset(200, 20, 9);
        let s = first_order_structure(20, 2, 0.7);
        let a = objective(&ds, &s, 20, 150, 1e-8, 0.25);
        let b = objective(&ds, &s, 20, 150, 1e-8, 0.25);
        assert_eq!(a.to_bits(), b.to_bits());
        // A window that runs past the data is unusable, not a panic.
        let bad = objective(&ds, &s, 20, 100_000, 0.0, 0.0);
        assert!(bad.is_infinite());
    }

    #[test]
    fn search_matches_a_dense_grid() {
        let ds = exponential_plant_dataset(400, 30, 13);
        let s = first_order_structure(30, 1, 1.0);
        // Dense reference grid in log space.
        let (lo, hi) = (0.01f64, 5.0f64);
        let mut grid_best = (f64::INFINITY, 0.0);
        for i in 0..=400 {
            let a = (lo.ln() + (hi.ln() - lo.ln()) * i as f64 / 400.0).exp();
            let v = objective(&ds, &s.with_time_scales(&[a]).unwrap(), 30, 350, 0.0, 0.0);
            if v < grid_best.0 {
                grid_best = (v, a);
            }
        }
        let config = TuneConfig {
            bounds: (lo, hi),
            multistart_count: 4,
            max_evaluations: 400,
            ..TuneConfig::default()
        };
        let outcome = tune_time_scales(&ds, &s, None, Some(350), &config).unwrap();
        assert!(
            outcome.best_sse <= grid_best.0 * (1.0 + 1e-6) + 1e-18,
            "search {} worse than grid {}",
            outcome.best_sse,
            grid_best.0
        );
        let tuned = outcome.structure.time_scales()[0];
        assert!(
            (tuned.ln() - 0.2f64.ln()).abs() < 0.2,
            "tuned scale {tuned} is far from 0.2"
        );
    }

    #[test]
    fn search_is_reproducible_and_respects_budget_and_bounds() {
        let ds = exponential_plant_dataset(300, 25, 21);
        let s = first_order_structure(25, 2, 1.0);
        let config = TuneConfig {
            bounds: (0.05, 2.0),
            multistart_count: 3,
            max_evaluations: 37,
            tolerance: 0.0,
            seed: 4,
            ..TuneConfig::default()
        };
        let a = tune_time_scales(&ds, &s, None, None, &config).unwrap();
        let b = tune_time_scales(&ds, &s, None, None, &config).unwrap();
        assert_eq!(a.trace.len(), b.trace.len());
        for (ra, rb) in a.trace.iter().zip(b.trace.iter()) {
            assert_eq!(ra.start_index, rb.start_index);
            assert_eq!(ra.evaluation, rb.evaluation);
            assert_eq!(
                ra.time_scales
                    .iter()
                    .map(|v| v.to_bits())
                    .collect::<Vec<_>>(),
                rb.time_scales
                    .iter()
                    .map(|v| v.to_bits())
                    .collect::<Vec<_>>()
            );
            assert_eq!(ra.sse.to_bits(), rb.sse.to_bits());
        }
        assert!(a.evaluations <= 37);
        assert!(a.evaluations >= 30, "budget barely used: {}", a.evaluations);
        for row in &a.trace {
            for &scale in &row.time_scales {
                assert!(
                    (0.05..=2.0 + 1e-12).contains(&scale),
                    "scale {scale} escaped the box"
                );
            }
        }
        // Trace rows are globally numbered in order.
        for (i, row) in a.trace.iter().enumerate() {
            assert_eq!(row.evaluation, i);
        }
    }

    #[test]
    fn per_term_scales_are_tuned_independently() {
        // Two-input linear plant with very different decay rates; the tuner
        // has a two-dimensional search space and must separate them.
        let len = 500;
        let memory = 35;
        let u1 = generate_input(
            &InputKind::FilteredNoise {
                gain: 1.0,
                pole: 0.0,
            },
            len,
            31,
        )
        .unwrap();
        let u2 = generate_input(
            &InputKind::FilteredNoise {
                gain: 1.0,
                pole: 0.0,
            },
            len,
            32,
        )
        .unwrap();
        let y: Vec<f64> = (0..len)
            .map(|k| {
                let mut acc = 0.0;
                for j in 0..=memory.min(k) {
                    acc += (-0.1 * j as f64).exp() * u1[k - j];
                    acc += (-0.9 * j as f64).exp() * u2[k - j];
                }
                acc
            })
            .collect();
        let ds = Dataset::new(
            1.0,
            vec!["u1".into(), "u2".into()],
            vec![u1, u2],
            "y".into(),
            y,
        )
        .unwrap();
        let s = ModelStructure {
            memory_length: memory,
            sample_interval: 1.0,
            inputs: vec![
                InputSpec {
                    name: "u1".into(),
                    degree: 1,
                    terms: vec![LaguerreSeriesSpec {
                        order_count: 1,
                        time_scale: 0.5,
                    }],
                },
                InputSpec {
                    name: "u2".into(),
                    degree: 1,
                    terms: vec![LaguerreSeriesSpec {
                        order_count: 1,
                        time_scale: 0.5,
                    }],
                },
            ],
            output_name: "y".into(),
            constant_column: false,
        };
        let config = TuneConfig {
            bounds: (0.02, 5.0),
            multistart_count: 6,
            max_evaluations: 900,
            seed: 1,
            ..TuneConfig::default()
        };
        let outcome = tune_time_scales(&ds, &s, None, None, &config).unwrap();
        let scales = outcome.structure.time_scales();
        assert!(
            (scales[0].ln() - 0.1f64.ln()).abs() < 0.25,
            "slow channel tuned to {}",
            scales[0]
        );
        assert!(
            (scales[1].ln() - 0.9f64.ln()).abs() < 0.25,
            "fast channel tuned to {}",
            scales[1]
        );
    }

    #[test]
    fn nested_bases_never_fit_worse() {
        // Adding a basis function can only lower the training residual at a
        // fixed scale.
        let ds = exponential_plant_dataset(300, 30, 41);
        let mut prev = f64::INFINITY;
        for r in 1..=4 {
            let s = first_order_structure(30, r, 0.35);
            let v = objective(&ds, &s, 30, 250, 0.0, 0.0);
            assert!(v <= prev + 1e-9, "order {r} fit {v} worse than {prev}");
            prev = v;
        }
    }

    #[test]
    fn impossible_structures_fail_with_the_trace_attached() {
        // More basis functions than lag samples: every candidate structure
        // is invalid, every evaluation is unusable.
        let ds = exponential_plant_dataset(100, 5, 3);
        let s = first_order_structure(5, 9, 0.5);
        let config = TuneConfig {
            multistart_count: 2,
            max_evaluations: 12,
            ..TuneConfig::default()
        };
        let err = tune_time_scales(&ds, &s, None, None, &config).unwrap_err();
        assert_eq!(err.class(), "tuning-failed");
        match err {
            VlError::TuningFailed { evaluations, trace } => {
                assert!(evaluations > 0 && evaluations <= 12);
                assert_eq!(trace.len(), evaluations);
                assert!(trace.iter().all(|r| r.sse.is_infinite()));
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn config_validation() {
        let mut c = TuneConfig::default();
        c.bounds = (1.0, 1.0);
        assert!(c.validate().is_err());
        let mut c = TuneConfig::default();
        c.bounds = (-1.0, 2.0);
        assert!(c.validate().is_err());
        let mut c = TuneConfig::default();
        c.validation_fraction = 1.0;
        assert!(c.validate().is_err());
        let mut c = TuneConfig::default();
        c.max_evaluations = 0;
        assert!(c.validate().is_err());
    }
}
