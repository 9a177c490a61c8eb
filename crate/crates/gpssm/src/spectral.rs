//! Fourier-feature representation of a nominal dynamics model.
//!
//! A nominal model observed through a dataset of `(ẑ_t, X_{t+1})` tuples is
//! reconstructed as a truncated cosine series
//!
//! ```text
//! f̂(z) = Σ_{j=1..M} S_j · cos(ω_jᵀ z + φ_j)
//! ```
//!
//! whose parameters `{S_j, φ_j, ω_j}` are fit by minimizing the mean squared
//! reconstruction error plus a frequency penalty `λ_ω ||W||²`. Training runs
//! either with all three parameter groups free (`Direct`) or with amplitudes
//! and phases produced by a quadrature approximation of the Fourier integral
//! with learned positive integration steps (`QuadratureEncoder`).
//!
//! Stationary baselines reuse the same machinery: phases are frozen at
//! uniform random draws, frequencies are optimized, and amplitudes are then
//! assigned from the closed-form spectral density of a squared-exponential or
//! Matérn kernel.

use std::f64::consts::PI;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::{wrap_angle, TrajectoryDataset};
use crate::error::{GpssmError, Result};

/// Learned feature triplets `(ω_j, S_j, φ_j)` for one state dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralFeatureSet {
    /// Frequency matrix `W`, one row `ω_jᵀ` per feature (M × D_z).
    freq: DMatrix<f64>,
    /// Non-negative amplitudes `S_j` (Fourier coefficient moduli).
    amplitude: DVector<f64>,
    /// Phases `φ_j`, wrapped to `[-π, π)`.
    phase: DVector<f64>,
}

impl SpectralFeatureSet {
    /// Validates lengths and finiteness; wraps phases into `[-π, π)`.
    pub fn new(freq: DMatrix<f64>, amplitude: DVector<f64>, phase: DVector<f64>) -> Result<Self> {
        let m = freq.nrows();
        if amplitude.len() != m {
            return Err(GpssmError::DimensionMismatch {
                context: "feature amplitudes",
                expected: m,
                found: amplitude.len(),
            });
        }
        if phase.len() != m {
            return Err(GpssmError::DimensionMismatch {
                context: "feature phases",
                expected: m,
                found: phase.len(),
            });
        }
        if m == 0 || freq.ncols() == 0 {
            return Err(GpssmError::InvalidConfig(
                "feature set needs at least one feature and one input dimension".into(),
            ));
        }
        let finite = freq.iter().all(|v| v.is_finite())
            && amplitude.iter().all(|v| v.is_finite())
            && phase.iter().all(|v| v.is_finite());
        if !finite {
            return Err(GpssmError::NonFinite {
                context: "spectral feature set".into(),
            });
        }
        if amplitude.iter().any(|&s| s < 0.0) {
            return Err(GpssmError::InvalidConfig(
                "feature amplitudes must be non-negative".into(),
            ));
        }
        let phase = phase.map(wrap_angle);
        Ok(SpectralFeatureSet {
            freq,
            amplitude,
            phase,
        })
    }

    /// Number of features `M`.
    pub fn feature_count(&self) -> usize {
        self.freq.nrows()
    }

    /// Input dimension `D_z`.
    pub fn input_dim(&self) -> usize {
        self.freq.ncols()
    }

    pub fn frequencies(&self) -> &DMatrix<f64> {
        &self.freq
    }

    pub fn amplitudes(&self) -> &DVector<f64> {
        &self.amplitude
    }

    pub fn phases(&self) -> &DVector<f64> {
        &self.phase
    }

    fn check_input(&self, z: &DVector<f64>) -> Result<()> {
        if z.len() != self.input_dim() {
            return Err(GpssmError::DimensionMismatch {
                context: "feature input",
                expected: self.input_dim(),
                found: z.len(),
            });
        }
        Ok(())
    }

    /// Feature vector `Φ(z)` with entries `cos(ω_jᵀ z + φ_j)`.
    pub fn features(&self, z: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_input(z)?;
        let mut out = DVector::zeros(self.feature_count());
        self.features_into(z, &mut out);
        Ok(out)
    }

    /// Same as [`features`](Self::features) without checks or allocation;
    /// used on the rollout hot path.
    pub(crate) fn features_into(&self, z: &DVector<f64>, out: &mut DVector<f64>) {
        out.gemv(1.0, &self.freq, z, 0.0);
        for j in 0..out.len() {
            out[j] = (out[j] + self.phase[j]).cos();
        }
    }

    /// Reconstruction `Σ_j S_j cos(ω_jᵀ z + φ_j)`.
    pub fn decode(&self, z: &DVector<f64>) -> Result<f64> {
        let phi = self.features(z)?;
        Ok(self.amplitude.dot(&phi))
    }

    /// Persists as `j,S,phi,w1..wDz` rows.
    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("j,S,phi");
        for i in 0..self.input_dim() {
            out.push_str(&format!(",w{}", i + 1));
        }
        out.push('\n');
        for j in 0..self.feature_count() {
            out.push_str(&format!("{},{},{}", j, self.amplitude[j], self.phase[j]));
            for i in 0..self.input_dim() {
                out.push(',');
                out.push_str(&self.freq[(j, i)].to_string());
            }
            out.push('\n');
        }
        let mut file = fs::File::create(path).map_err(|e| GpssmError::io(path, e))?;
        file.write_all(out.as_bytes())
            .map_err(|e| GpssmError::io(path, e))
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| GpssmError::io(path, e))?;
        let mut lines = text.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or_else(|| GpssmError::parse(path, 1, "missing header"))?;
        let cols = header.split(',').count();
        if cols < 4 {
            return Err(GpssmError::parse(path, 1, "expected j,S,phi,w1.. header"));
        }
        let dz = cols - 3;
        let mut amps = Vec::new();
        let mut phases = Vec::new();
        let mut freqs: Vec<f64> = Vec::new();
        for (line_no, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != cols {
                return Err(GpssmError::parse(
                    path,
                    line_no + 1,
                    format!("row has {} columns, expected {}", fields.len(), cols),
                ));
            }
            let parse = |s: &str| -> Result<f64> {
                s.trim().parse::<f64>().map_err(|_| {
                    GpssmError::parse(path, line_no + 1, format!("bad number '{}'", s))
                })
            };
            amps.push(parse(fields[1])?);
            phases.push(parse(fields[2])?);
            for f in &fields[3..] {
                freqs.push(parse(f)?);
            }
        }
        if amps.is_empty() {
            return Err(GpssmError::parse(path, 1, "feature file has no rows"));
        }
        let m = amps.len();
        SpectralFeatureSet::new(
            DMatrix::from_row_slice(m, dz, &freqs),
            DVector::from_vec(amps),
            DVector::from_vec(phases),
        )
    }
}

/// Positive quadrature steps `η_t` for the encoder approximation of the
/// Fourier integral.
#[derive(Debug, Clone)]
pub struct QuadratureWeights {
    eta: DVector<f64>,
}

impl QuadratureWeights {
    pub fn new(eta: DVector<f64>) -> Result<Self> {
        if eta.iter().any(|&e| !(e > 0.0) || !e.is_finite()) {
            return Err(GpssmError::InvalidConfig(
                "quadrature steps must be strictly positive and finite".into(),
            ));
        }
        Ok(QuadratureWeights { eta })
    }

    pub fn len(&self) -> usize {
        self.eta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eta.is_empty()
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.eta
    }
}

/// Quadrature approximation of the Fourier coefficients:
/// `c_j = Σ_t X_{t+1,dim} · exp(-i ω_jᵀ ẑ_t) · η_t`, returned as
/// `(S_j, φ_j) = (|c_j|, arg c_j)`. A zero coefficient gets phase 0.
pub fn encode_quadrature(
    data: &TrajectoryDataset,
    dim: usize,
    frequencies: &DMatrix<f64>,
    weights: &QuadratureWeights,
) -> Result<(DVector<f64>, DVector<f64>)> {
    if weights.len() != data.len() {
        return Err(GpssmError::DimensionMismatch {
            context: "quadrature steps",
            expected: data.len(),
            found: weights.len(),
        });
    }
    check_dim(data, dim)?;
    let m = frequencies.nrows();
    let mut amps = DVector::zeros(m);
    let mut phases = DVector::zeros(m);
    for j in 0..m {
        let omega = frequencies.row(j);
        let mut c = Complex64::new(0.0, 0.0);
        for t in 0..data.len() {
            let angle = omega.transpose().dot(data.input(t));
            let x = data.target_component(t, dim) * weights.eta[t];
            c += Complex64::new(x * angle.cos(), -x * angle.sin());
        }
        amps[j] = c.norm();
        phases[j] = if amps[j] == 0.0 { 0.0 } else { c.arg() };
    }
    Ok((amps, phases))
}

fn check_dim(data: &TrajectoryDataset, dim: usize) -> Result<()> {
    if dim >= data.dims().d {
        return Err(GpssmError::DimensionMismatch {
            context: "target component index",
            expected: data.dims().d,
            found: dim,
        });
    }
    Ok(())
}

/// Mean squared reconstruction residual for component `dim` plus
/// `λ_ω ||W||²_F`.
pub fn reconstruction_loss(
    features: &SpectralFeatureSet,
    data: &TrajectoryDataset,
    dim: usize,
    freq_penalty: f64,
) -> Result<f64> {
    if data.is_empty() {
        return Err(GpssmError::EmptyDataset);
    }
    check_dim(data, dim)?;
    let t_count = data.len() as f64;
    let mut sum = 0.0;
    for t in 0..data.len() {
        let r = data.target_component(t, dim) - features.decode(data.input(t))?;
        sum += r * r;
    }
    Ok(sum / t_count + freq_penalty * features.freq.norm_squared())
}

/// Gradients of the reconstruction loss with respect to the feature-set
/// parameters `S`, `φ` and `W`.
#[derive(Debug, Clone)]
pub struct LossGradients {
    pub amplitude: DVector<f64>,
    pub phase: DVector<f64>,
    pub freq: DMatrix<f64>,
}

/// Loss and analytic gradients for the free-parameter (direct) mode.
pub fn loss_and_gradients(
    features: &SpectralFeatureSet,
    data: &TrajectoryDataset,
    dim: usize,
    freq_penalty: f64,
) -> Result<(f64, LossGradients)> {
    if data.is_empty() {
        return Err(GpssmError::EmptyDataset);
    }
    check_dim(data, dim)?;
    let m = features.feature_count();
    let dz = features.input_dim();
    let t_count = data.len() as f64;

    let mut g_amp = DVector::zeros(m);
    let mut g_phase = DVector::zeros(m);
    let mut g_freq = DMatrix::zeros(m, dz);
    let mut loss = 0.0;

    let mut angles = DVector::zeros(m);
    for t in 0..data.len() {
        let z = data.input(t);
        if z.len() != dz {
            return Err(GpssmError::DimensionMismatch {
                context: "loss input",
                expected: dz,
                found: z.len(),
            });
        }
        angles.gemv(1.0, &features.freq, z, 0.0);
        let mut pred = 0.0;
        for j in 0..m {
            angles[j] += features.phase[j];
            pred += features.amplitude[j] * angles[j].cos();
        }
        let r = data.target_component(t, dim) - pred;
        loss += r * r;
        let scale = 2.0 * r / t_count;
        for j in 0..m {
            let (sin_a, cos_a) = angles[j].sin_cos();
            g_amp[j] -= scale * cos_a;
            let dphase = scale * features.amplitude[j] * sin_a;
            g_phase[j] += dphase;
            for i in 0..dz {
                g_freq[(j, i)] += dphase * z[i];
            }
        }
    }
    loss /= t_count;
    loss += freq_penalty * features.freq.norm_squared();
    g_freq += 2.0 * freq_penalty * &features.freq;

    Ok((
        loss,
        LossGradients {
            amplitude: g_amp,
            phase: g_phase,
            freq: g_freq,
        },
    ))
}

/// Gradients of the encoder-mode loss with respect to the free parameters
/// `W` and `η`; the derived amplitudes and phases are reported alongside.
#[derive(Debug, Clone)]
pub struct EncoderEvaluation {
    pub loss: f64,
    pub amplitude: DVector<f64>,
    pub phase: DVector<f64>,
    pub freq_grad: DMatrix<f64>,
    pub eta_grad: DVector<f64>,
}

/// Loss and analytic gradients with amplitudes and phases produced by the
/// quadrature encoder, so the gradient w.r.t. `ω_j` carries both the direct
/// decoder term and the path through the Fourier coefficients, and `η_t`
/// receives its full chain-rule contribution.
pub fn encoder_loss_and_gradients(
    frequencies: &DMatrix<f64>,
    weights: &QuadratureWeights,
    data: &TrajectoryDataset,
    dim: usize,
    freq_penalty: f64,
) -> Result<EncoderEvaluation> {
    if data.is_empty() {
        return Err(GpssmError::EmptyDataset);
    }
    check_dim(data, dim)?;
    if weights.len() != data.len() {
        return Err(GpssmError::DimensionMismatch {
            context: "quadrature steps",
            expected: data.len(),
            found: weights.len(),
        });
    }
    let m = frequencies.nrows();
    let dz = frequencies.ncols();
    let t_count = data.len();

    // forward: coefficients c_j = A_j + i B_j from the quadrature
    let mut re: DVector<f64> = DVector::zeros(m);
    let mut im: DVector<f64> = DVector::zeros(m);
    // per (j, t) encoder angles ω_jᵀ ẑ_t, reused in the backward pass
    let mut enc_sin = DMatrix::zeros(m, t_count);
    let mut enc_cos = DMatrix::zeros(m, t_count);
    for t in 0..t_count {
        let z = data.input(t);
        let x = data.target_component(t, dim);
        let eta = weights.eta[t];
        for j in 0..m {
            let angle = frequencies.row(j).transpose().dot(z);
            let (s, c) = angle.sin_cos();
            enc_sin[(j, t)] = s;
            enc_cos[(j, t)] = c;
            re[j] += x * c * eta;
            im[j] -= x * s * eta;
        }
    }
    let mut amplitude = DVector::zeros(m);
    let mut phase = DVector::zeros(m);
    for j in 0..m {
        amplitude[j] = (re[j] * re[j] + im[j] * im[j]).sqrt();
        phase[j] = if amplitude[j] == 0.0 {
            0.0
        } else {
            im[j].atan2(re[j])
        };
    }

    // decoder loss and gradients w.r.t. the derived (S, φ) plus the direct
    // decoder path of ω
    let derived = SpectralFeatureSet {
        freq: frequencies.clone(),
        amplitude: amplitude.clone(),
        phase: phase.clone(),
    };
    let (loss, grads) = loss_and_gradients(&derived, data, dim, freq_penalty)?;

    // chain rule through S_j = |c_j|, φ_j = arg(c_j)
    let mut freq_grad = grads.freq;
    let mut eta_grad = DVector::zeros(t_count);
    for j in 0..m {
        let s = amplitude[j];
        if s <= f64::EPSILON {
            continue;
        }
        let (a, b) = (re[j], im[j]);
        let gs = grads.amplitude[j];
        let gp = grads.phase[j];
        // dA/dω_j and dB/dω_j accumulated over t
        let mut da_domega: DVector<f64> = DVector::zeros(dz);
        let mut db_domega: DVector<f64> = DVector::zeros(dz);
        for t in 0..t_count {
            let z = data.input(t);
            let x = data.target_component(t, dim);
            let eta = weights.eta[t];
            let sin_a = enc_sin[(j, t)];
            let cos_a = enc_cos[(j, t)];
            for i in 0..dz {
                da_domega[i] -= x * sin_a * eta * z[i];
                db_domega[i] -= x * cos_a * eta * z[i];
            }
            // dA/dη_t = x cos, dB/dη_t = -x sin
            let da_deta = x * cos_a;
            let db_deta = -x * sin_a;
            eta_grad[t] += gs * (a * da_deta + b * db_deta) / s
                + gp * (-b * da_deta + a * db_deta) / (s * s);
        }
        for i in 0..dz {
            freq_grad[(j, i)] += gs * (a * da_domega[i] + b * db_domega[i]) / s
                + gp * (-b * da_domega[i] + a * db_domega[i]) / (s * s);
        }
    }

    Ok(EncoderEvaluation {
        loss,
        amplitude,
        phase,
        freq_grad,
        eta_grad,
    })
}

/// How the autoencoder parametrizes amplitudes and phases.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainingMode {
    /// `S`, `φ`, `ω` are all free parameters.
    Direct,
    /// `S`, `φ` come from the quadrature encoder; `ω` and `η` are learned.
    QuadratureEncoder,
}

/// Autoencoder training configuration.
#[derive(Debug, Clone)]
pub struct AutoencoderConfig {
    /// Feature count `M`.
    pub feature_count: usize,
    /// Frequency regularization weight `λ_ω`.
    pub freq_penalty: f64,
    pub epochs: usize,
    /// Initial learning rate; decays to zero on a half-cosine.
    pub learning_rate: f64,
    /// Frequencies initialize uniformly in `[-w, w]^{D_z}`.
    pub freq_init_halfwidth: f64,
    pub mode: TrainingMode,
    pub seed: u64,
}

impl AutoencoderConfig {
    pub fn new(feature_count: usize) -> Self {
        AutoencoderConfig {
            feature_count,
            freq_penalty: 0.1,
            epochs: 10_000,
            learning_rate: 0.02,
            freq_init_halfwidth: 3.0,
            mode: TrainingMode::Direct,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.feature_count == 0 {
            return Err(GpssmError::InvalidConfig("feature count must be ≥ 1".into()));
        }
        if self.freq_penalty < 0.0 {
            return Err(GpssmError::InvalidConfig(
                "frequency penalty must be ≥ 0".into(),
            ));
        }
        if self.epochs == 0 {
            return Err(GpssmError::InvalidConfig("epochs must be ≥ 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(GpssmError::InvalidConfig(
                "learning rate must be > 0".into(),
            ));
        }
        if !(self.freq_init_halfwidth > 0.0) {
            return Err(GpssmError::InvalidConfig(
                "frequency init half-width must be > 0".into(),
            ));
        }
        Ok(())
    }
}

/// Result of a training run.
#[derive(Debug, Clone)]
pub struct TrainingOutput {
    pub features: SpectralFeatureSet,
    /// Loss value at the start of each epoch.
    pub loss_trace: Vec<f64>,
    /// Learned integration steps, encoder mode only.
    pub quadrature: Option<QuadratureWeights>,
}

/// First-order adaptive-moment optimizer over a flat parameter vector.
struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(len: usize) -> Self {
        Adam {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }

    fn update(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        self.step += 1;
        let b1c = 1.0 - Self::BETA1.powi(self.step as i32);
        let b2c = 1.0 - Self::BETA2.powi(self.step as i32);
        for i in 0..params.len() {
            self.m[i] = Self::BETA1 * self.m[i] + (1.0 - Self::BETA1) * grads[i];
            self.v[i] = Self::BETA2 * self.v[i] + (1.0 - Self::BETA2) * grads[i] * grads[i];
            let mhat = self.m[i] / b1c;
            let vhat = self.v[i] / b2c;
            params[i] -= lr * mhat / (vhat.sqrt() + Self::EPS);
        }
    }
}

fn cosine_lr(base: f64, epoch: usize, total: usize) -> f64 {
    base * 0.5 * (1.0 + (PI * epoch as f64 / total as f64).cos())
}

fn init_frequencies(rng: &mut ChaCha8Rng, m: usize, dz: usize, halfwidth: f64) -> DMatrix<f64> {
    DMatrix::from_fn(m, dz, |_, _| rng.random_range(-halfwidth..halfwidth))
}

/// Fits a spectral feature set to component `dim` of the dataset.
pub fn train(
    data: &TrajectoryDataset,
    dim: usize,
    config: &AutoencoderConfig,
) -> Result<TrainingOutput> {
    config.validate()?;
    if data.is_empty() {
        return Err(GpssmError::EmptyDataset);
    }
    check_dim(data, dim)?;
    match config.mode {
        TrainingMode::Direct => train_direct(data, dim, config),
        TrainingMode::QuadratureEncoder => train_encoder(data, dim, config),
    }
}

fn train_direct(
    data: &TrajectoryDataset,
    dim: usize,
    config: &AutoencoderConfig,
) -> Result<TrainingOutput> {
    let m = config.feature_count;
    let dz = data.dims().dz();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let freq = init_frequencies(&mut rng, m, dz, config.freq_init_halfwidth);
    // raw amplitude parameter; S_j = |a_j| keeps amplitudes non-negative
    let mut raw_amp: Vec<f64> = (0..m).map(|_| rng.random_range(0.05..1.0)).collect();
    let mut phase: Vec<f64> = (0..m).map(|_| rng.random_range(-PI..PI)).collect();
    let mut freq_flat: Vec<f64> = freq.transpose().as_slice().to_vec(); // row-major
    drop(freq);

    let mut adam = Adam::new(2 * m + m * dz);
    let mut trace = Vec::with_capacity(config.epochs);
    let mut grads = vec![0.0; 2 * m + m * dz];
    let mut params = vec![0.0; 2 * m + m * dz];

    for epoch in 0..config.epochs {
        let features = SpectralFeatureSet {
            freq: DMatrix::from_row_slice(m, dz, &freq_flat),
            amplitude: DVector::from_iterator(m, raw_amp.iter().map(|a| a.abs())),
            phase: DVector::from_row_slice(&phase),
        };
        let (loss, g) = loss_and_gradients(&features, data, dim, config.freq_penalty)?;
        if !loss.is_finite() {
            return Err(GpssmError::TrainingDiverged { epoch });
        }
        trace.push(loss);

        for j in 0..m {
            grads[j] = g.amplitude[j] * sign(raw_amp[j]);
            grads[m + j] = g.phase[j];
            for i in 0..dz {
                grads[2 * m + j * dz + i] = g.freq[(j, i)];
            }
        }
        params[..m].copy_from_slice(&raw_amp);
        params[m..2 * m].copy_from_slice(&phase);
        params[2 * m..].copy_from_slice(&freq_flat);

        let lr = cosine_lr(config.learning_rate, epoch, config.epochs);
        adam.update(&mut params, &grads, lr);

        raw_amp.copy_from_slice(&params[..m]);
        for j in 0..m {
            phase[j] = wrap_angle(params[m + j]);
        }
        freq_flat.copy_from_slice(&params[2 * m..]);
    }

    let features = SpectralFeatureSet::new(
        DMatrix::from_row_slice(m, dz, &freq_flat),
        DVector::from_iterator(m, raw_amp.iter().map(|a| a.abs())),
        DVector::from_row_slice(&phase),
    )?;
    Ok(TrainingOutput {
        features,
        loss_trace: trace,
        quadrature: None,
    })
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn train_encoder(
    data: &TrajectoryDataset,
    dim: usize,
    config: &AutoencoderConfig,
) -> Result<TrainingOutput> {
    let m = config.feature_count;
    let dz = data.dims().dz();
    let t_count = data.len();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let freq = init_frequencies(&mut rng, m, dz, config.freq_init_halfwidth);
    let mut freq_flat: Vec<f64> = freq.transpose().as_slice().to_vec();
    drop(freq);
    // η_t = exp(ρ_t); start at 1/T so coefficient magnitudes match the data scale
    let mut rho = vec![-(t_count as f64).ln(); t_count];

    let n_params = m * dz + t_count;
    let mut adam = Adam::new(n_params);
    let mut trace = Vec::with_capacity(config.epochs);
    let mut grads = vec![0.0; n_params];
    let mut params = vec![0.0; n_params];
    let mut last_eval: Option<EncoderEvaluation> = None;

    for epoch in 0..config.epochs {
        let freq = DMatrix::from_row_slice(m, dz, &freq_flat);
        let eta = QuadratureWeights::new(DVector::from_iterator(
            t_count,
            rho.iter().map(|r| r.exp()),
        ))?;
        let eval = encoder_loss_and_gradients(&freq, &eta, data, dim, config.freq_penalty)?;
        if !eval.loss.is_finite() {
            return Err(GpssmError::TrainingDiverged { epoch });
        }
        trace.push(eval.loss);

        for j in 0..m {
            for i in 0..dz {
                grads[j * dz + i] = eval.freq_grad[(j, i)];
            }
        }
        for t in 0..t_count {
            // dL/dρ_t = dL/dη_t · η_t
            grads[m * dz + t] = eval.eta_grad[t] * eta.eta[t];
        }
        params[..m * dz].copy_from_slice(&freq_flat);
        params[m * dz..].copy_from_slice(&rho);

        let lr = cosine_lr(config.learning_rate, epoch, config.epochs);
        adam.update(&mut params, &grads, lr);

        freq_flat.copy_from_slice(&params[..m * dz]);
        rho.copy_from_slice(&params[m * dz..]);
        last_eval = Some(eval);
    }

    // amplitudes and phases from the final encoder pass
    let freq = DMatrix::from_row_slice(m, dz, &freq_flat);
    let eta = QuadratureWeights::new(DVector::from_iterator(
        t_count,
        rho.iter().map(|r| r.exp()),
    ))?;
    let (amplitude, phase) = encode_quadrature(data, dim, &freq, &eta)?;
    let _ = last_eval;
    let features = SpectralFeatureSet::new(freq, amplitude, phase)?;
    Ok(TrainingOutput {
        features,
        loss_trace: trace,
        quadrature: Some(eta),
    })
}

/// Trains one feature set per state dimension; dimension `d` uses seed
/// `config.seed + d`. Trainings run in parallel, outputs are ordered by
/// dimension.
pub fn train_per_dimension(
    data: &TrajectoryDataset,
    config: &AutoencoderConfig,
) -> Result<Vec<TrainingOutput>> {
    (0..data.dims().d)
        .into_par_iter()
        .map(|d| {
            let mut cfg = config.clone();
            cfg.seed = config.seed.wrapping_add(d as u64);
            train(data, d, &cfg)
        })
        .collect()
}

/// Closed-form spectral densities for stationary baseline kernels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StationarySpectrum {
    SquaredExponential,
    /// Matérn smoothness order; the argument doubles ν, so `Matern(1)` is
    /// ν = 1/2, `Matern(3)` is ν = 3/2 and `Matern(5)` is ν = 5/2.
    Matern(u8),
}

impl StationarySpectrum {
    pub fn matern_half() -> Self {
        StationarySpectrum::Matern(1)
    }

    pub fn matern_three_halves() -> Self {
        StationarySpectrum::Matern(3)
    }

    pub fn matern_five_halves() -> Self {
        StationarySpectrum::Matern(5)
    }

    fn validate(&self) -> Result<()> {
        match self {
            StationarySpectrum::Matern(n) if ![1, 3, 5].contains(n) => Err(
                GpssmError::InvalidConfig(format!("unsupported Matérn order {}/2", n)),
            ),
            _ => Ok(()),
        }
    }
}

/// Γ(n/2) for positive integer n.
fn gamma_of_half(n: u32) -> f64 {
    if n % 2 == 0 {
        // Γ(k) = (k-1)!
        let k = n / 2;
        (1..k).map(|i| i as f64).product()
    } else {
        // Γ(k + 1/2) = (2k)! √π / (4^k k!)
        let k = (n - 1) / 2;
        let mut v = PI.sqrt();
        for i in 1..=k {
            v *= (i as f64) - 0.5;
        }
        v
    }
}

/// Spectral density `S(ω)` of a unit-variance stationary kernel over `R^D`,
/// evaluated at angular frequency `ω`. Even in `ω` by construction.
pub fn stationary_spectral_density(
    spectrum: StationarySpectrum,
    lengthscale: f64,
    omega: &DVector<f64>,
) -> Result<f64> {
    if !(lengthscale > 0.0) {
        return Err(GpssmError::InvalidConfig(
            "lengthscale must be > 0".into(),
        ));
    }
    spectrum.validate()?;
    let d = omega.len() as f64;
    let w2 = omega.norm_squared();
    let value = match spectrum {
        StationarySpectrum::SquaredExponential => {
            (2.0 * PI).powf(d / 2.0) * lengthscale.powf(d) * (-lengthscale * lengthscale * w2 / 2.0).exp()
        }
        StationarySpectrum::Matern(n) => {
            let nu = n as f64 / 2.0;
            let two_nu = 2.0 * nu;
            let const_num = 2.0_f64.powf(d) * PI.powf(d / 2.0)
                * gamma_of_half(n as u32 + omega.len() as u32)
                * two_nu.powf(nu);
            let const_den = gamma_of_half(n as u32) * lengthscale.powf(two_nu);
            (const_num / const_den) * (two_nu / (lengthscale * lengthscale) + w2).powf(-(nu + d / 2.0))
        }
    };
    Ok(value)
}

/// Trains a stationary-spectrum baseline feature set.
///
/// Phases are drawn once from U(0, 2π) with the config seed and frozen, the
/// decoder amplitude is pinned at √2 while the frequencies are optimized on
/// the reconstruction loss, and the final amplitudes are replaced by the
/// closed-form spectral density at the learned frequencies.
pub fn train_stationary_baseline(
    data: &TrajectoryDataset,
    dim: usize,
    config: &AutoencoderConfig,
    lengthscale: f64,
    spectrum: StationarySpectrum,
) -> Result<TrainingOutput> {
    config.validate()?;
    if !(lengthscale > 0.0) {
        return Err(GpssmError::InvalidConfig(
            "lengthscale must be > 0".into(),
        ));
    }
    spectrum.validate()?;
    if data.is_empty() {
        return Err(GpssmError::EmptyDataset);
    }
    check_dim(data, dim)?;

    let m = config.feature_count;
    let dz = data.dims().dz();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let phase: Vec<f64> = (0..m)
        .map(|_| wrap_angle(rng.random_range(0.0..2.0 * PI)))
        .collect();
    let mut freq_flat: Vec<f64> = {
        let f = init_frequencies(&mut rng, m, dz, config.freq_init_halfwidth);
        f.transpose().as_slice().to_vec()
    };
    let fixed_amp = DVector::from_element(m, 2.0_f64.sqrt());
    let phase_vec = DVector::from_row_slice(&phase);

    let mut adam = Adam::new(m * dz);
    let mut trace = Vec::with_capacity(config.epochs);
    let mut grads = vec![0.0; m * dz];

    for epoch in 0..config.epochs {
        let features = SpectralFeatureSet {
            freq: DMatrix::from_row_slice(m, dz, &freq_flat),
            amplitude: fixed_amp.clone(),
            phase: phase_vec.clone(),
        };
        let (loss, g) = loss_and_gradients(&features, data, dim, config.freq_penalty)?;
        if !loss.is_finite() {
            return Err(GpssmError::TrainingDiverged { epoch });
        }
        trace.push(loss);
        for j in 0..m {
            for i in 0..dz {
                grads[j * dz + i] = g.freq[(j, i)];
            }
        }
        let lr = cosine_lr(config.learning_rate, epoch, config.epochs);
        adam.update(&mut freq_flat, &grads, lr);
    }

    let freq = DMatrix::from_row_slice(m, dz, &freq_flat);
    let mut amplitude = DVector::zeros(m);
    for j in 0..m {
        let omega = freq.row(j).transpose();
        amplitude[j] = stationary_spectral_density(spectrum, lengthscale, &omega)?;
    }
    let features = SpectralFeatureSet::new(freq, amplitude, phase_vec)?;
    Ok(TrainingOutput {
        features,
        loss_trace: trace,
        quadrature: None,
    })
}

/// Writes a loss trace as `epoch,loss` rows.
pub fn save_loss_trace(path: &Path, trace: &[f64]) -> Result<()> {
    let mut out = String::from("epoch,loss\n");
    for (e, l) in trace.iter().enumerate() {
        out.push_str(&format!("{},{}\n", e, l));
    }
    fs::write(path, out).map_err(|e| GpssmError::io(path, e))
}
