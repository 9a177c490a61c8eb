//! Weight-space Gaussian process over the learned features.
//!
//! Each state dimension carries an independent model
//! `f(z) = Σ_j β_j φ_j(z)` with `β_j ~ N(m_j, v_j)`, `m_j = S_j*` and
//! `v_j = max(ξ m_j, ε_v)`. Conditioning on a dataset yields the exact
//! Gaussian weight posterior
//!
//! ```text
//! Σ = (V⁻¹ + σ⁻² Φ_Z Φ_Zᵀ)⁻¹        μ = Σ (V⁻¹ m + σ⁻² Φ_Z X)
//! ```
//!
//! computed through a Cholesky factorization rather than an explicit
//! inverse; the conditioning noise is `σ² = σ_d² + σ_n²`, merging process
//! and observation noise since the posterior is fit on observed next
//! states. The associated Mercer kernel is
//! `k(z, z′) = Σ_j v_j φ_j(z) φ_j(z′)`; it is generally non-stationary.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::data::TrajectoryDataset;
use crate::error::{GpssmError, Result};
use crate::spectral::SpectralFeatureSet;

/// Per-dimension prior over the KL weights plus the noise scalars.
#[derive(Debug, Clone)]
pub struct GpssmPrior {
    mean: DVector<f64>,
    variance: DVector<f64>,
    process_noise_std: f64,
    obs_noise_std: f64,
}

impl GpssmPrior {
    /// Builds the prior from learned features: `m_j = S_j*` and
    /// `v_j = max(ξ m_j, ε_v)` with `ε_v = 1e-8 · max_j(ξ m_j)`
    /// (absolute `1e-12` when every amplitude is zero) so that `V` stays
    /// invertible when some amplitudes vanish.
    pub fn from_features(
        features: &SpectralFeatureSet,
        xi: f64,
        process_noise_std: f64,
        obs_noise_std: f64,
    ) -> Result<Self> {
        if !(xi > 0.0) {
            return Err(GpssmError::InvalidConfig("ξ must be > 0".into()));
        }
        if !(process_noise_std > 0.0) {
            return Err(GpssmError::InvalidConfig("σ_d must be > 0".into()));
        }
        if obs_noise_std < 0.0 {
            return Err(GpssmError::InvalidConfig("σ_n must be ≥ 0".into()));
        }
        let mean = features.amplitudes().clone();
        let raw_max = mean.iter().fold(0.0_f64, |acc, &m| acc.max(xi * m));
        let floor = if raw_max > 0.0 { 1e-8 * raw_max } else { 1e-12 };
        let variance = mean.map(|m| (xi * m).max(floor));
        Ok(GpssmPrior {
            mean,
            variance,
            process_noise_std,
            obs_noise_std,
        })
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn variance(&self) -> &DVector<f64> {
        &self.variance
    }

    pub fn process_noise_std(&self) -> f64 {
        self.process_noise_std
    }

    pub fn obs_noise_std(&self) -> f64 {
        self.obs_noise_std
    }

    /// Conditioning noise `σ² = σ_d² + σ_n²`.
    pub fn conditioning_noise_var(&self) -> f64 {
        self.process_noise_std * self.process_noise_std
            + self.obs_noise_std * self.obs_noise_std
    }

    pub fn feature_count(&self) -> usize {
        self.mean.len()
    }
}

/// Predictive mean and variance at a single input.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictiveMoments {
    pub mean: f64,
    pub variance: f64,
}

/// Gaussian posterior over the KL weights of one state dimension.
#[derive(Debug, Clone)]
pub struct WeightPosterior {
    mean: DVector<f64>,
    covariance: DMatrix<f64>,
    cholesky: DMatrix<f64>,
    observation_count: usize,
}

impl WeightPosterior {
    /// Prior recovery: conditioning on no data returns `(m, V)` exactly.
    pub fn from_prior(prior: &GpssmPrior) -> Self {
        let covariance = DMatrix::from_diagonal(&prior.variance);
        let cholesky = DMatrix::from_diagonal(&prior.variance.map(f64::sqrt));
        WeightPosterior {
            mean: prior.mean.clone(),
            covariance,
            cholesky,
            observation_count: 0,
        }
    }

    /// Reassembles a posterior from persisted parts; `Σ = L Lᵀ`.
    pub fn from_parts(
        mean: DVector<f64>,
        cholesky: DMatrix<f64>,
        observation_count: usize,
    ) -> Result<Self> {
        let m = mean.len();
        if cholesky.nrows() != m || cholesky.ncols() != m {
            return Err(GpssmError::DimensionMismatch {
                context: "posterior Cholesky factor",
                expected: m,
                found: cholesky.nrows(),
            });
        }
        let covariance = &cholesky * cholesky.transpose();
        Ok(WeightPosterior {
            mean,
            covariance,
            cholesky,
            observation_count,
        })
    }

    /// Exact weight posterior for component `dim` of the dataset.
    ///
    /// Cost is `O(M²T + M³)`: linear in the number of tuples for fixed `M`.
    pub fn condition(
        prior: &GpssmPrior,
        features: &SpectralFeatureSet,
        data: &TrajectoryDataset,
        dim: usize,
    ) -> Result<Self> {
        let m = features.feature_count();
        if prior.feature_count() != m {
            return Err(GpssmError::DimensionMismatch {
                context: "prior/feature count",
                expected: m,
                found: prior.feature_count(),
            });
        }
        if data.is_empty() {
            return Ok(Self::from_prior(prior));
        }
        if dim >= data.dims().d {
            return Err(GpssmError::DimensionMismatch {
                context: "conditioning dimension",
                expected: data.dims().d,
                found: dim,
            });
        }

        let t_count = data.len();
        let mut phi_z = DMatrix::zeros(m, t_count);
        let mut col = DVector::zeros(m);
        for t in 0..t_count {
            features.features_into(data.input(t), &mut col);
            phi_z.set_column(t, &col);
        }
        let x = DVector::from_fn(t_count, |t, _| data.target_component(t, dim));

        let noise_var = prior.conditioning_noise_var();
        let inv_noise = 1.0 / noise_var;

        // A = V⁻¹ + σ⁻² Φ Φᵀ,  b = V⁻¹ m + σ⁻² Φ X
        let mut a = &phi_z * phi_z.transpose() * inv_noise;
        for j in 0..m {
            a[(j, j)] += 1.0 / prior.variance[j];
        }
        let mut b = &phi_z * &x * inv_noise;
        for j in 0..m {
            b[j] += prior.mean[j] / prior.variance[j];
        }

        let chol_a = Cholesky::new(a).ok_or(GpssmError::CholeskyFailure { dim })?;
        let mean = chol_a.solve(&b);
        let mut covariance = chol_a.inverse();
        // symmetrize against roundoff before factorizing
        let sym = (&covariance + covariance.transpose()) * 0.5;
        covariance = sym;
        let cholesky = Cholesky::new(covariance.clone())
            .ok_or(GpssmError::CholeskyFailure { dim })?
            .l();

        Ok(WeightPosterior {
            mean,
            covariance,
            cholesky,
            observation_count: t_count,
        })
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    /// Lower-triangular `L` with `Σ = L Lᵀ`.
    pub fn cholesky_factor(&self) -> &DMatrix<f64> {
        &self.cholesky
    }

    pub fn observation_count(&self) -> usize {
        self.observation_count
    }

    pub fn feature_count(&self) -> usize {
        self.mean.len()
    }

    /// Predictive posterior `N(μᵀΦ(z), Φ(z)ᵀ Σ Φ(z))`.
    ///
    /// The variance is evaluated as `‖Lᵀ Φ‖²`, which cannot go negative.
    pub fn predict(
        &self,
        features: &SpectralFeatureSet,
        z: &DVector<f64>,
    ) -> Result<PredictiveMoments> {
        if features.feature_count() != self.feature_count() {
            return Err(GpssmError::DimensionMismatch {
                context: "posterior/feature count",
                expected: self.feature_count(),
                found: features.feature_count(),
            });
        }
        let phi = features.features(z)?;
        let mean = self.mean.dot(&phi);
        let half = self.cholesky.tr_mul(&phi);
        Ok(PredictiveMoments {
            mean,
            variance: half.norm_squared(),
        })
    }
}

/// Feature vector `Φ(z)`; entries are cosines, so all lie in `[-1, 1]`.
pub fn feature_vector(features: &SpectralFeatureSet, z: &DVector<f64>) -> Result<DVector<f64>> {
    features.features(z)
}

/// Domain-informed Mercer kernel `k(z, z′) = Σ_j v_j φ_j(z) φ_j(z′)`.
pub fn kernel(
    features: &SpectralFeatureSet,
    prior: &GpssmPrior,
    z: &DVector<f64>,
    z_prime: &DVector<f64>,
) -> Result<f64> {
    if prior.feature_count() != features.feature_count() {
        return Err(GpssmError::DimensionMismatch {
            context: "prior/feature count",
            expected: features.feature_count(),
            found: prior.feature_count(),
        });
    }
    let a = features.features(z)?;
    let b = features.features(z_prime)?;
    let mut acc = 0.0;
    for j in 0..a.len() {
        acc += prior.variance[j] * a[j] * b[j];
    }
    Ok(acc)
}

/// Posterior artifact persisted per state dimension: header with `M`, the
/// conditioning count and the noise scales, then `μ` and the lower triangle
/// of `L` row-major.
#[derive(Debug, Clone)]
pub struct PosteriorArtifact {
    pub posterior: WeightPosterior,
    pub process_noise_std: f64,
    pub obs_noise_std: f64,
}

impl PosteriorArtifact {
    pub fn save(&self, path: &Path) -> Result<()> {
        let m = self.posterior.feature_count();
        let mut out = format!(
            "M={} T={} sigma_d={} sigma_n={}\n",
            m,
            self.posterior.observation_count,
            self.process_noise_std,
            self.obs_noise_std
        );
        out.push_str("mu\n");
        for j in 0..m {
            out.push_str(&self.posterior.mean[j].to_string());
            out.push('\n');
        }
        out.push_str("L\n");
        for r in 0..m {
            for c in 0..=r {
                if c > 0 {
                    out.push(',');
                }
                out.push_str(&self.posterior.cholesky[(r, c)].to_string());
            }
            out.push('\n');
        }
        let mut file = fs::File::create(path).map_err(|e| GpssmError::io(path, e))?;
        file.write_all(out.as_bytes())
            .map_err(|e| GpssmError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| GpssmError::io(path, e))?;
        let mut lines = text.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or_else(|| GpssmError::parse(path, 1, "missing header"))?;
        let mut m = None;
        let mut t = None;
        let mut sigma_d = None;
        let mut sigma_n = None;
        for token in header.split_whitespace() {
            let (key, value) = token
                .split_once('=')
                .ok_or_else(|| GpssmError::parse(path, 1, format!("bad header token '{}'", token)))?;
            match key {
                "M" => m = value.parse::<usize>().ok(),
                "T" => t = value.parse::<usize>().ok(),
                "sigma_d" => sigma_d = value.parse::<f64>().ok(),
                "sigma_n" => sigma_n = value.parse::<f64>().ok(),
                _ => {}
            }
        }
        let m = m.ok_or_else(|| GpssmError::parse(path, 1, "header missing M"))?;
        let t = t.ok_or_else(|| GpssmError::parse(path, 1, "header missing T"))?;
        let sigma_d = sigma_d.ok_or_else(|| GpssmError::parse(path, 1, "header missing sigma_d"))?;
        let sigma_n = sigma_n.ok_or_else(|| GpssmError::parse(path, 1, "header missing sigma_n"))?;

        let expect_tag = |line: Option<(usize, &str)>, tag: &str| -> Result<()> {
            match line {
                Some((_, l)) if l.trim() == tag => Ok(()),
                Some((n, l)) => Err(GpssmError::parse(
                    path,
                    n + 1,
                    format!("expected '{}', found '{}'", tag, l),
                )),
                None => Err(GpssmError::parse(path, 0, format!("missing '{}' section", tag))),
            }
        };
        expect_tag(lines.next(), "mu")?;
        let mut mean = DVector::zeros(m);
        for j in 0..m {
            let (line_no, line) = lines
                .next()
                .ok_or_else(|| GpssmError::parse(path, 0, "truncated mu section"))?;
            mean[j] = line.trim().parse::<f64>().map_err(|_| {
                GpssmError::parse(path, line_no + 1, format!("bad number '{}'", line))
            })?;
        }
        expect_tag(lines.next(), "L")?;
        let mut chol = DMatrix::zeros(m, m);
        for r in 0..m {
            let (line_no, line) = lines
                .next()
                .ok_or_else(|| GpssmError::parse(path, 0, "truncated L section"))?;
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != r + 1 {
                return Err(GpssmError::parse(
                    path,
                    line_no + 1,
                    format!("L row {} has {} entries, expected {}", r, fields.len(), r + 1),
                ));
            }
            for (c, field) in fields.iter().enumerate() {
                chol[(r, c)] = field.trim().parse::<f64>().map_err(|_| {
                    GpssmError::parse(path, line_no + 1, format!("bad number '{}'", field))
                })?;
            }
        }
        Ok(PosteriorArtifact {
            posterior: WeightPosterior::from_parts(mean, chol, t)?,
            process_noise_std: sigma_d,
            obs_noise_std: sigma_n,
        })
    }
}
