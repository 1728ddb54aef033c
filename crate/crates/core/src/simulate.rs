//! Synthetic plants, excitation signals, prediction metrics, and the
//! first-difference transform for integrating outputs.
//!
//! Plants are multi-input, single-output, and additive over input channels:
//! each channel is either a truncated Volterra pair (first- plus optional
//! second-order kernel) or a Wiener element (linear convolution followed by
//! a static polynomial). History before the first sample is taken as zero,
//! so the first `memory_length` output samples carry a warm-up transient;
//! fitting windows normally start past it. Measurement noise is Gaussian,
//! drawn from a seeded ChaCha12 stream, and an optional running sum turns
//! the plant into an integrating one.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::error::{Result, VlError};
use crate::model::FittedModel;
use crate::regressor::{output_window, predict, Dataset};

/// Truncated Volterra channel: `kernel1[j]` weights lag `j`; the optional
/// symmetric `kernel2[i][j]` weights the lag pair `(i, j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct VolterraChannel {
    pub kernel1: Vec<f64>,
    pub kernel2: Option<Vec<Vec<f64>>>,
}

/// Wiener channel: convolution with `impulse_response` followed by a static
/// polynomial with ascending coefficients (`polynomial[p]` multiplies `x^p`).
#[derive(Debug, Clone, PartialEq)]
pub struct WienerChannel {
    pub impulse_response: Vec<f64>,
    pub polynomial: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum PlantKind {
    FiniteVolterra(Vec<VolterraChannel>),
    Wiener(Vec<WienerChannel>),
}

/// A synthetic multi-input plant with one output.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticPlant {
    pub kind: PlantKind,
    pub input_names: Vec<String>,
    pub output_name: String,
    /// Lag depth of every kernel / impulse response (lags `0..=memory`).
    pub memory_length: usize,
    /// Standard deviation of additive Gaussian measurement noise.
    pub noise_std: f64,
    /// When set, the output is the running sum of the channel responses —
    /// an integrating (non-fading-memory) plant.
    pub integrate_output: bool,
}

impl SyntheticPlant {
    pub fn num_channels(&self) -> usize {
        match &self.kind {
            PlantKind::FiniteVolterra(chs) => chs.len(),
            PlantKind::Wiener(chs) => chs.len(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let taps = self.memory_length + 1;
        if self.input_names.is_empty() {
            return Err(VlError::InvalidParameter(
                "a plant needs at least one input".into(),
            ));
        }
        if self.input_names.len() != self.num_channels() {
            return Err(VlError::InvalidParameter(format!(
                "{} input names but {} channels",
                self.input_names.len(),
                self.num_channels()
            )));
        }
        if self.output_name.is_empty() {
            return Err(VlError::InvalidParameter(
                "output name must not be empty".into(),
            ));
        }
        if !self.noise_std.is_finite() || self.noise_std < 0.0 {
            return Err(VlError::InvalidParameter(format!(
                "noise level must be finite and non-negative, got {}",
                self.noise_std
            )));
        }
        match &self.kind {
            PlantKind::FiniteVolterra(chs) => {
                for (c, ch) in chs.iter().enumerate() {
                    if ch.kernel1.len() != taps {
                        return Err(VlError::InvalidParameter(format!(
                            "channel {c}: first-order kernel has {} taps, expected {taps}",
                            ch.kernel1.len()
                        )));
                    }
                    if let Some(k2) = &ch.kernel2 {
                        if k2.len() != taps || k2.iter().any(|row| row.len() != taps) {
                            return Err(VlError::InvalidParameter(format!(
                                "channel {c}: second-order kernel must be {taps}x{taps}"
                            )));
                        }
                        for i in 0..taps {
                            for j in (i + 1)..taps {
                                if (k2[i][j] - k2[j][i]).abs() > 1e-12 * k2[i][j].abs().max(1.0) {
                                    return Err(VlError::InvalidParameter(format!(
                                        "channel {c}: second-order kernel is not symmetric \
                                         at ({i}, {j})"
                                    )));
                                }
                            }
                        }
                    }
                }
            }
            PlantKind::Wiener(chs) => {
                for (c, ch) in chs.iter().enumerate() {
                    if ch.impulse_response.len() != taps {
                        return Err(VlError::InvalidParameter(format!(
                            "channel {c}: impulse response has {} taps, expected {taps}",
                            ch.impulse_response.len()
                        )));
                    }
                    if ch.polynomial.is_empty() {
                        return Err(VlError::InvalidParameter(format!(
                            "channel {c}: polynomial needs at least one coefficient"
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Simulate the plant over the given input series (zero history before the
/// first sample). Noise is reproducible from `seed`; a zero `noise_std`
/// draws nothing at all.
pub fn simulate_plant(plant: &SyntheticPlant, inputs: &[Vec<f64>], seed: u64) -> Result<Vec<f64>> {
    plant.validate()?;
    if inputs.len() != plant.num_channels() {
        return Err(VlError::InvalidParameter(format!(
            "plant has {} channels but {} input series were given",
            plant.num_channels(),
            inputs.len()
        )));
    }
    let len = inputs.first().map(|s| s.len()).unwrap_or(0);
    for (c, series) in inputs.iter().enumerate() {
        if series.len() != len {
            return Err(VlError::Data(format!(
                "input series {c} has {} samples, expected {len}",
                series.len()
            )));
        }
        if let Some(j) = series.iter().position(|v| !v.is_finite()) {
            return Err(VlError::Data(format!(
                "input series {c} contains a non-finite value at sample {j}"
            )));
        }
    }

    let m = plant.memory_length;
    let mut out = vec![0.0; len];
    match &plant.kind {
        PlantKind::FiniteVolterra(chs) => {
            for (ch, u) in chs.iter().zip(inputs.iter()) {
                for k in 0..len {
                    let top = m.min(k);
                    let mut acc = 0.0;
                    for j in 0..=top {
                        acc += ch.kernel1[j] * u[k - j];
                    }
                    if let Some(k2) = &ch.kernel2 {
                        for i in 0..=top {
                            for j in 0..=top {
                                acc += k2[i][j] * u[k - i] * u[k - j];
                            }
                        }
                    }
                    out[k] += acc;
                }
            }
        }
        PlantKind::Wiener(chs) => {
            for (ch, u) in chs.iter().zip(inputs.iter()) {
                for k in 0..len {
                    let top = m.min(k);
                    let mut x = 0.0;
                    for j in 0..=top {
                        x += ch.impulse_response[j] * u[k - j];
                    }
                    // Horner evaluation of the static polynomial.
                    let mut y = 0.0;
                    for &c in ch.polynomial.iter().rev() {
                        y = y * x + c;
                    }
                    out[k] += y;
                }
            }
        }
    }

    if plant.noise_std > 0.0 {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, plant.noise_std).map_err(|e| {
            VlError::InvalidParameter(format!("bad noise level {}: {e}", plant.noise_std))
        })?;
        for v in out.iter_mut() {
            *v += normal.sample(&mut rng);
        }
    }

    if plant.integrate_output {
        let mut acc = 0.0;
        for v in out.iter_mut() {
            acc += *v;
            *v = acc;
        }
    }
    Ok(out)
}

/// Simulate and package the result as a named dataset.
pub fn simulate_dataset(
    plant: &SyntheticPlant,
    inputs: Vec<Vec<f64>>,
    sample_interval: f64,
    seed: u64,
) -> Result<Dataset> {
    let output = simulate_plant(plant, &inputs, seed)?;
    Dataset::new(
        sample_interval,
        plant.input_names.clone(),
        inputs,
        plant.output_name.clone(),
        output,
    )
}

/// Generate one excitation per plant input and simulate the plant over it.
///
/// All randomness descends from `seed`: input `i` is generated with seed
/// `seed + (i + 1) * GOLDEN` (a fixed odd stride, so streams never collide)
/// and the plant's measurement noise uses `seed` itself. Callers that want
/// the same dataset therefore only need to repeat the same seed.
pub fn excite_and_simulate(
    plant: &SyntheticPlant,
    excitation: &[InputKind],
    length: usize,
    sample_interval: f64,
    seed: u64,
) -> Result<Dataset> {
    plant.validate()?;
    if excitation.len() != plant.input_names.len() {
        return Err(VlError::Config(format!(
            "plant has {} inputs but {} excitations were given",
            plant.input_names.len(),
            excitation.len()
        )));
    }
    // Odd 64-bit stride (2^64 / golden ratio) keeps per-input seeds distinct
    // from each other and from the noise seed for any base seed.
    const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;
    let inputs = excitation
        .iter()
        .enumerate()
        .map(|(i, kind)| {
            generate_input(
                kind,
                length,
                seed.wrapping_add(GOLDEN.wrapping_mul(i as u64 + 1)),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    simulate_dataset(plant, inputs, sample_interval, seed)
}

/// Excitation generators for simulation studies.
#[derive(Debug, Clone, PartialEq)]
pub enum InputKind {
    /// Random telegraph between two levels with a minimum dwell time: after
    /// `dwell` samples at a level, each further sample switches with
    /// probability one half.
    TwoLevel { low: f64, high: f64, dwell: usize },
    /// First-order autoregressive filter driven by unit Gaussian noise:
    /// `x[k] = pole * x[k-1] + gain * w[k]`. A zero pole gives white noise.
    FilteredNoise { gain: f64, pole: f64 },
    /// Sum of sines with log-uniform random periods and uniform random
    /// phases; each component has amplitude `amplitude / sqrt(components)`.
    Multisine {
        components: usize,
        min_period: f64,
        max_period: f64,
        amplitude: f64,
    },
}

impl InputKind {
    pub fn validate(&self) -> Result<()> {
        match self {
            InputKind::TwoLevel { low, high, dwell } => {
                if !low.is_finite() || !high.is_finite() || low >= high {
                    return Err(VlError::InvalidParameter(format!(
                        "two-level excitation needs finite low < high, got {low} and {high}"
                    )));
                }
                if *dwell == 0 {
                    return Err(VlError::InvalidParameter(
                        "two-level dwell must be at least 1 sample".into(),
                    ));
                }
            }
            InputKind::FilteredNoise { gain, pole } => {
                if !gain.is_finite() {
                    return Err(VlError::InvalidParameter(format!(
                        "filtered-noise gain must be finite, got {gain}"
                    )));
                }
                if !pole.is_finite() || pole.abs() >= 1.0 {
                    return Err(VlError::InvalidParameter(format!(
                        "filtered-noise pole must satisfy |pole| < 1, got {pole}"
                    )));
                }
            }
            InputKind::Multisine {
                components,
                min_period,
                max_period,
                amplitude,
            } => {
                if *components == 0 {
                    return Err(VlError::InvalidParameter(
                        "multisine needs at least one component".into(),
                    ));
                }
                if !min_period.is_finite()
                    || !max_period.is_finite()
                    || *min_period <= 0.0
                    || min_period > max_period
                {
                    return Err(VlError::InvalidParameter(format!(
                        "multisine needs 0 < min period <= max period, got {min_period} \
                         and {max_period}"
                    )));
                }
                if !amplitude.is_finite() || *amplitude <= 0.0 {
                    return Err(VlError::InvalidParameter(format!(
                        "multisine amplitude must be positive, got {amplitude}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Generate `length` excitation samples, reproducible from `seed`.
pub fn generate_input(kind: &InputKind, length: usize, seed: u64) -> Result<Vec<f64>> {
    kind.validate()?;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(length);
    match kind {
        InputKind::TwoLevel { low, high, dwell } => {
            let mut level = *low;
            let mut run = 0usize;
            for _ in 0..length {
                if run >= *dwell && rng.random::<bool>() {
                    level = if level == *low { *high } else { *low };
                    run = 0;
                }
                out.push(level);
                run += 1;
            }
        }
        InputKind::FilteredNoise { gain, pole } => {
            let normal = Normal::new(0.0, 1.0).expect("unit normal");
            let mut x = 0.0;
            for _ in 0..length {
                x = pole * x + gain * normal.sample(&mut rng);
                out.push(x);
            }
        }
        InputKind::Multisine {
            components,
            min_period,
            max_period,
            amplitude,
        } => {
            let log_period = Uniform::new_inclusive(min_period.ln(), max_period.ln())
                .expect("valid period range");
            let phase = Uniform::new(0.0, std::f64::consts::TAU).expect("valid phase range");
            let comps: Vec<(f64, f64)> = (0..*components)
                .map(|_| {
                    let period: f64 = log_period.sample(&mut rng).exp();
                    (std::f64::consts::TAU / period, phase.sample(&mut rng))
                })
                .collect();
            let scale = amplitude / (*components as f64).sqrt();
            for k in 0..length {
                let t = k as f64;
                out.push(scale * comps.iter().map(|(w, p)| (w * t + p).sin()).sum::<f64>());
            }
        }
    }
    Ok(out)
}

/// Prediction-quality metrics over a window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub sse: f64,
    pub mse: f64,
    /// `sse` divided by the output energy of the window; absent when the
    /// window has zero energy.
    pub normalized_sse: Option<f64>,
    pub rows: usize,
    pub start: usize,
}

/// Metrics of `predicted` against `actual` for a window beginning at
/// `start` (the start is carried through for reporting).
pub fn metrics_between(predicted: &[f64], actual: &[f64], start: usize) -> Result<Metrics> {
    if predicted.len() != actual.len() {
        return Err(VlError::InvalidParameter(format!(
            "{} predictions against {} actual samples",
            predicted.len(),
            actual.len()
        )));
    }
    if predicted.is_empty() {
        return Err(VlError::Range("metrics need at least one sample".into()));
    }
    let mut sse = 0.0;
    let mut energy = 0.0;
    for (p, t) in predicted.iter().zip(actual.iter()) {
        if !p.is_finite() || !t.is_finite() {
            return Err(VlError::Data(
                "metrics input contains a non-finite value".into(),
            ));
        }
        let e = t - p;
        sse += e * e;
        energy += t * t;
    }
    Ok(Metrics {
        sse,
        mse: sse / predicted.len() as f64,
        normalized_sse: if energy > 0.0 {
            Some(sse / energy)
        } else {
            None
        },
        rows: predicted.len(),
        start,
    })
}

/// Predict a window of `dataset` with `model` and score it against the
/// recorded output.
pub fn evaluate(
    model: &FittedModel,
    dataset: &Dataset,
    start: usize,
    rows: usize,
) -> Result<Metrics> {
    let predicted = predict(model, dataset, start, rows)?;
    let actual = output_window(dataset, start, rows)?;
    metrics_between(&predicted, actual, start)
}

/// First difference: `out[k] = signal[k+1] - signal[k]`, one sample shorter
/// than the input.
pub fn difference_transform(signal: &[f64]) -> Result<Vec<f64>> {
    if signal.len() < 2 {
        return Err(VlError::Range(format!(
            "differencing needs at least 2 samples, got {}",
            signal.len()
        )));
    }
    Ok(signal.windows(2).map(|w| w[1] - w[0]).collect())
}

/// Undo [`difference_transform`]: starting from `initial`, accumulate the
/// differences. Returns `diffs.len() + 1` samples beginning with `initial`.
pub fn inverse_cumulate(initial: f64, diffs: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(diffs.len() + 1);
    let mut level = initial;
    out.push(level);
    for d in diffs {
        level += d;
        out.push(level);
    }
    out
}
