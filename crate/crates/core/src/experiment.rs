//! Randomized structure-selection studies.
//!
//! The study compares two sampling policies over model structures fitted to
//! one dataset. The **fixed** arm draws a single degree, basis size, and
//! time scale per trial and applies them uniformly to every input and term;
//! the **variable** arm draws a degree per input and an independent basis
//! size and time scale per (term, input) slot. Every fixed-arm structure is
//! also reachable by the variable arm, so the variable arm can only widen
//! the reachable set — the study measures how much that freedom buys on a
//! concrete plant.
//!
//! Each (arm, trial) pair runs on its own counter-derived ChaCha12
//! substream, so trials are statistically independent, reproducible in
//! isolation, and identical whether arms run alone or together, serially or
//! in parallel. Draws that exceed the feasibility bound (more coefficients
//! than fitting rows) are rejected and redrawn from the same substream, with
//! the rejection count reported per trial.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;

use crate::error::{Result, VlError};
use crate::laguerre::LaguerreSeriesSpec;
use crate::model::{coefficient_count, InputSpec, ModelStructure};
use crate::regressor::{assemble, fit, output_window, Dataset};

/// Sampling policy of one arm.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// One degree, basis size, and time scale per trial, shared everywhere.
    Fixed,
    /// Independent degree per input; independent basis size and time scale
    /// per (term, input) slot.
    Variable,
}

impl Mode {
    pub fn label(&self) -> &'static str {
        match self {
            Mode::Fixed => "fixed",
            Mode::Variable => "variable",
        }
    }

    fn stream_tag(&self) -> u64 {
        match self {
            Mode::Fixed => 0,
            Mode::Variable => 1,
        }
    }
}

/// Which arms to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArmSelection {
    Fixed,
    Variable,
    Both,
}

impl ArmSelection {
    pub fn modes(&self) -> Vec<Mode> {
        match self {
            ArmSelection::Fixed => vec![Mode::Fixed],
            ArmSelection::Variable => vec![Mode::Variable],
            ArmSelection::Both => vec![Mode::Fixed, Mode::Variable],
        }
    }
}

/// Study configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub trials: usize,
    pub arms: ArmSelection,
    pub seed: u64,
    /// Memory length shared by every sampled structure.
    pub memory_length: usize,
    pub constant_column: bool,
    pub ridge: f64,
    /// Inclusive range of polynomial degrees.
    pub degree_range: (usize, usize),
    /// Inclusive range of basis sizes per (term, input) slot.
    pub order_range: (usize, usize),
    /// Inclusive range of time scales; drawn log-uniformly.
    pub scale_range: (f64, f64),
    /// Fitting window; defaults to everything past the memory length.
    pub start: Option<usize>,
    pub rows: Option<usize>,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(VlError::Config("a study needs at least one trial".into()));
        }
        let (d0, d1) = self.degree_range;
        if d0 == 0 || d0 > d1 {
            return Err(VlError::Config(format!(
                "degree range must satisfy 1 <= low <= high, got [{d0}, {d1}]"
            )));
        }
        let (o0, o1) = self.order_range;
        if o0 == 0 || o0 > o1 {
            return Err(VlError::Config(format!(
                "order range must satisfy 1 <= low <= high, got [{o0}, {o1}]"
            )));
        }
        if o1 > self.memory_length + 1 {
            return Err(VlError::Config(format!(
                "largest basis size {o1} exceeds the {} lag samples of memory length {}",
                self.memory_length + 1,
                self.memory_length
            )));
        }
        let (s0, s1) = self.scale_range;
        if !s0.is_finite() || !s1.is_finite() || s0 <= 0.0 || s0 > s1 {
            return Err(VlError::Config(format!(
                "time-scale range must satisfy 0 < low <= high, got [{s0}, {s1}]"
            )));
        }
        if !self.ridge.is_finite() || self.ridge < 0.0 {
            return Err(VlError::Config(format!(
                "ridge penalty must be finite and non-negative, got {}",
                self.ridge
            )));
        }
        Ok(())
    }
}

/// One fitted trial.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub mode: Mode,
    pub trial: usize,
    pub structure: ModelStructure,
    pub coefficient_count: usize,
    /// Training residual of the least-squares fit.
    pub sse: f64,
    /// Structures rejected by the feasibility bound before this one.
    pub resamples: usize,
}

const MAX_RESAMPLES: usize = 1000;

fn draw_structure<R: Rng>(
    rng: &mut R,
    dataset: &Dataset,
    config: &ExperimentConfig,
    mode: Mode,
) -> ModelStructure {
    let (d0, d1) = config.degree_range;
    let (o0, o1) = config.order_range;
    let (s0, s1) = config.scale_range;
    let draw_scale = |rng: &mut R| -> f64 {
        if s0 == s1 {
            s0
        } else {
            rng.random_range(s0.ln()..=s1.ln()).exp()
        }
    };
    let inputs = match mode {
        Mode::Fixed => {
            // One draw of everything, applied uniformly. Draw order:
            // degree, basis size, time scale.
            let degree = rng.random_range(d0..=d1);
            let order = rng.random_range(o0..=o1);
            let scale = draw_scale(rng);
            dataset
                .input_names
                .iter()
                .map(|name| InputSpec {
                    name: name.clone(),
                    degree,
                    terms: vec![
                        LaguerreSeriesSpec {
                            order_count: order,
                            time_scale: scale
                        };
                        degree
                    ],
                })
                .collect()
        }
        Mode::Variable => {
            // Per input: degree first, then (basis size, time scale) per
            // term in ascending term order.
            dataset
                .input_names
                .iter()
                .map(|name| {
                    let degree = rng.random_range(d0..=d1);
                    let terms = (0..degree)
                        .map(|_| {
                            let order = rng.random_range(o0..=o1);
                            let scale = draw_scale(rng);
                            LaguerreSeriesSpec {
                                order_count: order,
                                time_scale: scale,
                            }
                        })
                        .collect();
                    InputSpec {
                        name: name.clone(),
                        degree,
                        terms,
                    }
                })
                .collect()
        }
    };
    ModelStructure {
        memory_length: config.memory_length,
        sample_interval: dataset.sample_interval,
        inputs,
        output_name: dataset.output_name.clone(),
        constant_column: config.constant_column,
    }
}

fn run_trial(
    dataset: &Dataset,
    config: &ExperimentConfig,
    mode: Mode,
    trial: usize,
    start: usize,
    rows: usize,
) -> Result<TrialRecord> {
    let mut rng = ChaCha12Rng::seed_from_u64(config.seed);
    rng.set_stream((mode.stream_tag() << 32) | trial as u64);
    let mut resamples = 0;
    let (structure, count) = loop {
        let candidate = draw_structure(&mut rng, dataset, config, mode);
        let count = coefficient_count(&candidate)?;
        if count <= rows {
            break (candidate, count);
        }
        resamples += 1;
        if resamples > MAX_RESAMPLES {
            return Err(VlError::Config(format!(
                "trial {trial} ({}) found no structure within {rows} fitting rows after \
                 {MAX_RESAMPLES} draws; shrink the degree/order ranges or provide more data",
                mode.label()
            )));
        }
    };
    let design = assemble(dataset, &structure, start, rows)?;
    let y = output_window(dataset, start, rows)?;
    let model = fit(&design, y, config.ridge, &structure)?;
    Ok(TrialRecord {
        mode,
        trial,
        structure,
        coefficient_count: count,
        sse: model.stats.sse,
        resamples,
    })
}

/// Run the study: every selected arm, `trials` fits each, in a fixed record
/// order (arms in selection order, trials ascending). Parallelism does not
/// affect the results.
pub fn run_experiment(dataset: &Dataset, config: &ExperimentConfig) -> Result<Vec<TrialRecord>> {
    config.validate()?;
    let start = config.start.unwrap_or(config.memory_length);
    if start < config.memory_length {
        return Err(VlError::Range(format!(
            "window start {start} is inside the warm-up region; it must be at least the \
             memory length {}",
            config.memory_length
        )));
    }
    if start >= dataset.len() {
        return Err(VlError::Range(format!(
            "window start {start} is past the {} available samples",
            dataset.len()
        )));
    }
    let rows = config.rows.unwrap_or(dataset.len() - start);
    if rows == 0 || start + rows > dataset.len() {
        return Err(VlError::Range(format!(
            "window [{start}, {}) does not fit the {} available samples",
            start + rows,
            dataset.len()
        )));
    }
    // The smallest structure in the search space has to be feasible, or
    // every trial would exhaust its redraw allowance.
    let smallest = {
        let (d0, _) = config.degree_range;
        let (o0, _) = config.order_range;
        let inputs = dataset
            .input_names
            .iter()
            .map(|name| InputSpec {
                name: name.clone(),
                degree: d0,
                terms: vec![
                    LaguerreSeriesSpec {
                        order_count: o0,
                        time_scale: config.scale_range.0
                    };
                    d0
                ],
            })
            .collect();
        ModelStructure {
            memory_length: config.memory_length,
            sample_interval: dataset.sample_interval,
            inputs,
            output_name: dataset.output_name.clone(),
            constant_column: config.constant_column,
        }
    };
    let min_count = coefficient_count(&smallest)?;
    if min_count > rows {
        return Err(VlError::Config(format!(
            "even the smallest structure in the search space has {min_count} coefficients \
             but only {rows} fitting rows are available"
        )));
    }

    let mut records = Vec::with_capacity(config.arms.modes().len() * config.trials);
    for mode in config.arms.modes() {
        let arm: Result<Vec<TrialRecord>> = (0..config.trials)
            .into_par_iter()
            .map(|trial| run_trial(dataset, config, mode, trial, start, rows))
            .collect();
        records.extend(arm?);
    }
    Ok(records)
}

/// Per-arm summary statistics of the trial residuals.
#[derive(Debug, Clone, PartialEq)]
pub struct ArmSummary {
    pub mode: Mode,
    pub trials: usize,
    pub mean_sse: f64,
    pub median_sse: f64,
    pub std_sse: f64,
    pub min_sse: f64,
    pub max_sse: f64,
    /// Mean divided by the best residual seen anywhere in the study; absent
    /// when that best residual is zero.
    pub mean_normalized: Option<f64>,
    pub total_resamples: usize,
}

/// Shared-bin histogram of log10 residuals, one count row per arm.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    /// Bin edges in log10(SSE); `counts` rows have `edges.len() - 1`
    /// entries. Empty when no trial had a positive residual.
    pub edges: Vec<f64>,
    pub counts: Vec<(Mode, Vec<usize>)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSummary {
    pub arms: Vec<ArmSummary>,
    pub histogram: Histogram,
}

const HISTOGRAM_BINS: usize = 24;

/// Summarize trial records (from one or several arms).
pub fn summarize(records: &[TrialRecord]) -> Result<ExperimentSummary> {
    if records.is_empty() {
        return Err(VlError::InvalidParameter(
            "no trial records to summarize".into(),
        ));
    }
    if let Some(bad) = records.iter().find(|r| !r.sse.is_finite()) {
        return Err(VlError::Data(format!(
            "trial {} ({}) carries a non-finite residual",
            bad.trial,
            bad.mode.label()
        )));
    }
    let mut modes: Vec<Mode> = Vec::new();
    for r in records {
        if !modes.contains(&r.mode) {
            modes.push(r.mode);
        }
    }
    let global_min = records.iter().map(|r| r.sse).fold(f64::INFINITY, f64::min);

    let mut arms = Vec::with_capacity(modes.len());
    for &mode in &modes {
        let mut sses: Vec<f64> = records
            .iter()
            .filter(|r| r.mode == mode)
            .map(|r| r.sse)
            .collect();
        sses.sort_by(|a, b| a.partial_cmp(b).expect("finite residuals"));
        let n = sses.len();
        let mean = sses.iter().sum::<f64>() / n as f64;
        let median = if n % 2 == 1 {
            sses[n / 2]
        } else {
            0.5 * (sses[n / 2 - 1] + sses[n / 2])
        };
        let std = if n > 1 {
            (sses.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        arms.push(ArmSummary {
            mode,
            trials: n,
            mean_sse: mean,
            median_sse: median,
            std_sse: std,
            min_sse: sses[0],
            max_sse: sses[n - 1],
            mean_normalized: if global_min > 0.0 {
                Some(mean / global_min)
            } else {
                None
            },
            total_resamples: records
                .iter()
                .filter(|r| r.mode == mode)
                .map(|r| r.resamples)
                .sum(),
        });
    }

    // Histogram over log10 of the positive residuals; non-positive residuals
    // are clipped into the first bin.
    let logs: Vec<f64> = records
        .iter()
        .filter(|r| r.sse > 0.0)
        .map(|r| r.sse.log10())
        .collect();
    let histogram = if logs.is_empty() {
        Histogram {
            edges: Vec::new(),
            counts: modes.iter().map(|&m| (m, Vec::new())).collect(),
        }
    } else {
        let mut lo = logs.iter().cloned().fold(f64::INFINITY, f64::min);
        let mut hi = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if lo == hi {
            lo -= 0.5;
            hi += 0.5;
        }
        let width = (hi - lo) / HISTOGRAM_BINS as f64;
        let edges: Vec<f64> = (0..=HISTOGRAM_BINS)
            .map(|b| lo + b as f64 * width)
            .collect();
        let counts = modes
            .iter()
            .map(|&mode| {
                let mut bins = vec![0usize; HISTOGRAM_BINS];
                for r in records.iter().filter(|r| r.mode == mode) {
                    let bin = if r.sse <= 0.0 {
                        0
                    } else {
                        (((r.sse.log10() - lo) / width) as usize).min(HISTOGRAM_BINS - 1)
                    };
                    bins[bin] += 1;
                }
                (mode, bins)
            })
            .collect();
        Histogram { edges, counts }
    };

    Ok(ExperimentSummary { arms, histogram })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulate::{
        generate_input, simulate_dataset, InputKind, PlantKind, SyntheticPlant, WienerChannel,
    };

    fn two_channel_dataset(len: usize, seed: u64) -> Dataset {
        let m = 20;
        let plant = SyntheticPlant {
            kind: PlantKind::Wiener(vec![
                WienerChannel {
                    impulse_response: (0..=m).map(|j| (-0.15 * j as f64).exp()).collect(),
                    polynomial: vec![0.0, 1.0],
                },
                WienerChannel {
                    impulse_response: (0..=m).map(|j| (-0.7 * j as f64).exp()).collect(),
                    polynomial: vec![0.0, 0.4, 0.8],
                },
            ]),
            input_names: vec!["u1".into(), "u2".into()],
            output_name: "y".into(),
            memory_length: m,
            noise_std: 0.01,
            integrate_output: false,
        };
        let u1 = generate_input(
            &InputKind::TwoLevel {
                low: -1.0,
                high: 1.0,
                dwell: 6,
            },
            len,
            seed,
        )
        .unwrap();
        let u2 = generate_input(
            &InputKind::FilteredNoise {
                gain: 0.7,
                pole: 0.3,
            },
            len,
            seed + 1,
        )
        .unwrap();
        simulate_dataset(&plant, vec![u1, u2], 1.0, seed + 2).unwrap()
    }

    fn small_config(trials: usize, arms: ArmSelection) -> ExperimentConfig {
        ExperimentConfig {
            trials,
            arms,
            seed: 11,
            memory_length: 20,
            constant_column: false,
            ridge: 0.0,
            degree_range: (1, 2),
            order_range: (2, 3),
            scale_range: (0.05, 2.0),
            start: None,
            rows: None,
        }
    }

    #[test]
    fn records_come_back_in_order_with_domains_respected() {
        let ds = two_channel_dataset(300, 5);
        let config = small_config(12, ArmSelection::Both);
        let records = run_experiment(&ds, &config).unwrap();
        assert_eq!(records.len(), 24);
        for (i, r) in records.iter().enumerate() {
            let (want_mode, want_trial) = if i < 12 {
                (Mode::Fixed, i)
            } else {
                (Mode::Variable, i - 12)
            };
            assert_eq!(r.mode, want_mode);
            assert_eq!(r.trial, want_trial);
            assert!(r.sse.is_finite() && r.sse >= 0.0);
            for input in &r.structure.inputs {
                assert!((1..=2).contains(&input.degree));
                for term in &input.terms {
                    assert!((2..=3).contains(&term.order_count));
                    assert!((0.05..=2.0).contains(&term.time_scale));
                }
            }
            assert_eq!(
                r.coefficient_count,
                coefficient_count(&r.structure).unwrap()
            );
        }
    }

    #[test]
    fn fixed_arm_draws_are_uniform_across_slots() {
        let ds = two_channel_dataset(300, 7);
        let config = small_config(10, ArmSelection::Fixed);
        let records = run_experiment(&ds, &config).unwrap();
        for r in &records {
            let first = &r.structure.inputs[0];
            for input in &r.structure.inputs {
                assert_eq!(input.degree, first.degree);
                for term in &input.terms {
                    assert_eq!(term.order_count, first.terms[0].order_count);
                    assert_eq!(term.time_scale, first.terms[0].time_scale);
                }
            }
        }
        // The variable arm, by contrast, eventually differentiates slots.
        let config = small_config(10, ArmSelection::Variable);
        let records = run_experiment(&ds, &config).unwrap();
        let any_heterogeneous = records.iter().any(|r| {
            let scales = r.structure.time_scales();
            scales.windows(2).any(|w| w[0] != w[1])
        });
        assert!(any_heterogeneous, "variable arm never varied a slot");
    }

    #[test]
    fn reruns_and_arm_subsets_are_identical() {
        let ds = two_channel_dataset(250, 9);
        let config = small_config(8, ArmSelection::Both);
        let a = run_experiment(&ds, &config).unwrap();
        let b = run_experiment(&ds, &config).unwrap();
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b.iter()) {
            assert_eq!(x.structure, y.structure);
            assert_eq!(x.sse.to_bits(), y.sse.to_bits());
        }
        // The fixed arm alone reproduces the fixed rows of the joint run:
        // substreams are keyed by (arm, trial), not by scheduling.
        let fixed_only = run_experiment(&ds, &small_config(8, ArmSelection::Fixed)).unwrap();
        for (x, y) in fixed_only.iter().zip(a.iter().take(8)) {
            assert_eq!(x.structure, y.structure);
            assert_eq!(x.sse.to_bits(), y.sse.to_bits());
        }
    }

    #[test]
    fn single_forced_trial_matches_a_direct_fit() {
        let ds = two_channel_dataset(300, 13);
        // Degenerate ranges pin the drawn structure completely.
        let config = ExperimentConfig {
            trials: 1,
            arms: ArmSelection::Fixed,
            seed: 3,
            memory_length: 20,
            constant_column: false,
            ridge: 0.0,
            degree_range: (2, 2),
            order_range: (3, 3),
            scale_range: (0.4, 0.4),
            start: None,
            rows: None,
        };
        let records = run_experiment(&ds, &config).unwrap();
        assert_eq!(records.len(), 1);
        let r = &records[0];
        let design = assemble(&ds, &r.structure, 20, ds.len() - 20).unwrap();
        let y = output_window(&ds, 20, ds.len() - 20).unwrap();
        let direct = fit(&design, y, 0.0, &r.structure).unwrap();
        assert_eq!(r.sse.to_bits(), direct.stats.sse.to_bits());
    }

    #[test]
    fn infeasible_search_space_is_rejected_upfront() {
        let ds = two_channel_dataset(300, 15);
        let mut config = small_config(2, ArmSelection::Both);
        config.rows = Some(3); // far fewer rows than any structure's coefficients
        let err = run_experiment(&ds, &config).unwrap_err();
        assert_eq!(err.class(), "config");
    }

    #[test]
    fn summary_statistics_are_correct_on_known_records() {
        let structure = two_channel_dataset(60, 1);
        let template = run_experiment(&structure, &small_config(1, ArmSelection::Fixed)).unwrap()
            [0]
        .structure
        .clone();
        let mk = |mode: Mode, trial: usize, sse: f64| TrialRecord {
            mode,
            trial,
            structure: template.clone(),
            coefficient_count: 4,
            sse,
            resamples: trial % 2,
        };
        let records = vec![
            mk(Mode::Fixed, 0, 4.0),
            mk(Mode::Fixed, 1, 1.0),
            mk(Mode::Fixed, 2, 7.0),
            mk(Mode::Variable, 0, 2.0),
            mk(Mode::Variable, 1, 0.5),
        ];
        let summary = summarize(&records).unwrap();
        assert_eq!(summary.arms.len(), 2);
        let fixed = &summary.arms[0];
        assert_eq!(fixed.mode, Mode::Fixed);
        assert_eq!(fixed.trials, 3);
        assert!((fixed.mean_sse - 4.0).abs() < 1e-12);
        assert!((fixed.median_sse - 4.0).abs() < 1e-12);
        assert!((fixed.std_sse - 3.0).abs() < 1e-12);
        assert_eq!(fixed.min_sse, 1.0);
        assert_eq!(fixed.max_sse, 7.0);
        assert_eq!(fixed.mean_normalized, Some(8.0));
        assert_eq!(fixed.total_resamples, 1);
        let variable = &summary.arms[1];
        assert!((variable.median_sse - 1.25).abs() < 1e-12);
        assert_eq!(variable.mean_normalized, Some(2.5));
        // Histogram counts every record exactly once per arm.
        let total: usize = summary
            .histogram
            .counts
            .iter()
            .map(|(_, c)| c.iter().sum::<usize>())
            .sum();
        assert_eq!(total, 5);
        assert_eq!(summary.histogram.edges.len(), HISTOGRAM_BINS + 1);
    }

    #[test]
    fn summary_handles_single_trial_and_zero_minimum() {
        let template = {
            let ds = two_channel_dataset(60, 2);
            run_experiment(&ds, &small_config(1, ArmSelection::Fixed)).unwrap()[0]
                .structure
                .clone()
        };
        let one = vec![TrialRecord {
            mode: Mode::Variable,
            trial: 0,
            structure: template.clone(),
            coefficient_count: 4,
            sse: 2.5,
            resamples: 0,
        }];
        let s = summarize(&one).unwrap();
        assert_eq!(s.arms[0].mean_sse, 2.5);
        assert_eq!(s.arms[0].median_sse, 2.5);
        assert_eq!(s.arms[0].std_sse, 0.0);

        // A zero global minimum makes normalization undefined.
        let zeroed = vec![
            TrialRecord {
                mode: Mode::Fixed,
                trial: 0,
                structure: template.clone(),
                coefficient_count: 4,
                sse: 0.0,
                resamples: 0,
            },
            TrialRecord {
                mode: Mode::Fixed,
                trial: 1,
                structure: template,
                coefficient_count: 4,
                sse: 1.0,
                resamples: 0,
            },
        ];
        let s = summarize(&zeroed).unwrap();
        assert_eq!(s.arms[0].mean_normalized, None);
        // The zero residual is clipped into the first histogram bin.
        let total: usize = s.histogram.counts[0].1.iter().sum();
        assert_eq!(total, 2);
    }

    #[test]
    fn config_validation_catches_bad_ranges() {
        let mut c = small_config(4, ArmSelection::Both);
        c.degree_range = (0, 2);
        assert_eq!(
            run_experiment(&two_channel_dataset(100, 3), &c)
                .unwrap_err()
                .class(),
            "config"
        );
        let mut c = small_config(4, ArmSelection::Both);
        c.order_range = (3, 2);
        assert!(c.validate().is_err());
        let mut c = small_config(4, ArmSelection::Both);
        c.order_range = (2, 40); // exceeds memory + 1
        assert!(c.validate().is_err());
        let mut c = small_config(4, ArmSelection::Both);
        c.scale_range = (0.0, 1.0);
        assert!(c.validate().is_err());
        let mut c = small_config(0, ArmSelection::Both);
        c.trials = 0;
        assert!(c.validate().is_err());
    }
}
