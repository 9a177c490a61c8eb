//! State/control containers and datasets of state-control-next-state tuples.
//!
//! A [`TrajectoryDataset`] holds `T` tuples `(ẑ_t, X_{t+1})` where
//! `ẑ_t = [x_tᵀ, u_tᵀ]ᵀ` concatenates the observed state and the applied
//! control, and `X_{t+1}` is the observed next state. Datasets persist as a
//! single CSV file (header `t,x1..xD,u1..uDu,y1..yD`) and are immutable after
//! construction, so they can be shared freely across threads.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use nalgebra::DVector;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{GpssmError, Result};

/// Wraps an angle to the half-open interval `[-π, π)`.
pub fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::PI;
    let w = (a + PI).rem_euclid(2.0 * PI) - PI;
    // rem_euclid can return exactly 2π for inputs just below -π due to rounding
    if w >= PI {
        w - 2.0 * PI
    } else {
        w
    }
}

/// State and control dimensions of a system.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    /// State dimension `D`.
    pub d: usize,
    /// Control dimension `D_u` (0 for autonomous systems such as the elbow toy).
    pub d_u: usize,
}

impl Dims {
    pub fn new(d: usize, d_u: usize) -> Result<Self> {
        if d == 0 {
            return Err(GpssmError::InvalidConfig(
                "state dimension must be at least 1".into(),
            ));
        }
        Ok(Dims { d, d_u })
    }

    /// Combined input dimension `D_z = D + D_u`.
    pub fn dz(&self) -> usize {
        self.d + self.d_u
    }
}

fn ensure_finite(values: &DVector<f64>, context: &str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(GpssmError::NonFinite {
            context: context.to_string(),
        })
    }
}

/// System state `x_t ∈ R^D`.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemState {
    values: DVector<f64>,
}

impl SystemState {
    pub fn new(values: DVector<f64>) -> Result<Self> {
        ensure_finite(&values, "system state")?;
        Ok(SystemState { values })
    }

    pub fn from_slice(values: &[f64]) -> Result<Self> {
        Self::new(DVector::from_row_slice(values))
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.values
    }

    pub fn component(&self, i: usize) -> f64 {
        self.values[i]
    }
}

/// Control input `u_t ∈ R^{D_u}`.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlInput {
    values: DVector<f64>,
}

impl ControlInput {
    pub fn new(values: DVector<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(GpssmError::InvalidConfig(
                "control input must have at least one component".into(),
            ));
        }
        ensure_finite(&values, "control input")?;
        Ok(ControlInput { values })
    }

    pub fn from_slice(values: &[f64]) -> Result<Self> {
        Self::new(DVector::from_row_slice(values))
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.values
    }
}

/// Concatenated state-control point `z = [xᵀ, uᵀ]ᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateAction {
    z: DVector<f64>,
}

impl StateAction {
    /// Builds `z = [state; control]`, state components first.
    pub fn from_parts(state: &SystemState, control: &ControlInput) -> Self {
        let mut z = DVector::zeros(state.dim() + control.dim());
        z.rows_mut(0, state.dim()).copy_from(state.values());
        z.rows_mut(state.dim(), control.dim())
            .copy_from(control.values());
        StateAction { z }
    }

    /// Wraps an already-concatenated vector; checks length against `dims`.
    pub fn from_vector(z: DVector<f64>, dims: Dims) -> Result<Self> {
        if z.len() != dims.dz() {
            return Err(GpssmError::DimensionMismatch {
                context: "state-action vector",
                expected: dims.dz(),
                found: z.len(),
            });
        }
        ensure_finite(&z, "state-action vector")?;
        Ok(StateAction { z })
    }

    pub fn vector(&self) -> &DVector<f64> {
        &self.z
    }

    pub fn dim(&self) -> usize {
        self.z.len()
    }
}

/// Immutable dataset of `T` tuples `(ẑ_t, X_{t+1})`.
#[derive(Debug, Clone)]
pub struct TrajectoryDataset {
    dims: Dims,
    inputs: Vec<DVector<f64>>,
    targets: Vec<DVector<f64>>,
    source: String,
    sample_rate_hz: f64,
}

impl TrajectoryDataset {
    /// Builds a dataset from parallel input/target lists.
    ///
    /// An empty dataset is permitted (it conditions a posterior back to its
    /// prior); loading from file rejects empty data sections.
    pub fn new(
        dims: Dims,
        inputs: Vec<DVector<f64>>,
        targets: Vec<DVector<f64>>,
        source: impl Into<String>,
        sample_rate_hz: f64,
    ) -> Result<Self> {
        if inputs.len() != targets.len() {
            return Err(GpssmError::DimensionMismatch {
                context: "dataset input/target row counts",
                expected: inputs.len(),
                found: targets.len(),
            });
        }
        for (t, (z, y)) in inputs.iter().zip(targets.iter()).enumerate() {
            if z.len() != dims.dz() {
                return Err(GpssmError::DimensionMismatch {
                    context: "dataset input row",
                    expected: dims.dz(),
                    found: z.len(),
                });
            }
            if y.len() != dims.d {
                return Err(GpssmError::DimensionMismatch {
                    context: "dataset target row",
                    expected: dims.d,
                    found: y.len(),
                });
            }
            if !(z.iter().all(|v| v.is_finite()) && y.iter().all(|v| v.is_finite())) {
                return Err(GpssmError::NonFinite {
                    context: format!("dataset row {}", t),
                });
            }
        }
        Ok(TrajectoryDataset {
            dims,
            inputs,
            targets,
            source: source.into(),
            sample_rate_hz,
        })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    /// Number of tuples `T`.
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }

    /// Input point `ẑ_t`.
    pub fn input(&self, t: usize) -> &DVector<f64> {
        &self.inputs[t]
    }

    /// Observed next state `X_{t+1}`.
    pub fn target(&self, t: usize) -> &DVector<f64> {
        &self.targets[t]
    }

    /// Single component `[X_{t+1}]_dim`.
    pub fn target_component(&self, t: usize, dim: usize) -> f64 {
        self.targets[t][dim]
    }

    pub fn inputs(&self) -> &[DVector<f64>] {
        &self.inputs
    }

    pub fn targets(&self) -> &[DVector<f64>] {
        &self.targets
    }

    fn subset(&self, indices: &[usize], tag: &str) -> TrajectoryDataset {
        TrajectoryDataset {
            dims: self.dims,
            inputs: indices.iter().map(|&i| self.inputs[i].clone()).collect(),
            targets: indices.iter().map(|&i| self.targets[i].clone()).collect(),
            source: format!("{}:{}", self.source, tag),
            sample_rate_hz: self.sample_rate_hz,
        }
    }

    /// Splits into nested training slices and a disjoint holdout set.
    ///
    /// Rows are shuffled once with the given seed; the last
    /// `floor(T·holdout)` rows become the holdout set and each fraction `f`
    /// selects the first `floor(train_len·f)` of the remaining rows, so the
    /// slice for a smaller fraction is always a prefix of the slice for a
    /// larger one.
    pub fn split_fractions(
        &self,
        fractions: &[f64],
        holdout: f64,
        seed: u64,
    ) -> Result<(Vec<TrajectoryDataset>, TrajectoryDataset)> {
        if !(holdout > 0.0 && holdout < 1.0) {
            return Err(GpssmError::InvalidConfig(format!(
                "holdout fraction {} outside (0, 1)",
                holdout
            )));
        }
        for &f in fractions {
            if !(f > 0.0 && f <= 1.0) {
                return Err(GpssmError::InvalidConfig(format!(
                    "training fraction {} outside (0, 1]",
                    f
                )));
            }
        }
        if self.is_empty() {
            return Err(GpssmError::EmptyDataset);
        }

        let t = self.len();
        let mut indices: Vec<usize> = (0..t).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        indices.shuffle(&mut rng);

        let holdout_len = ((t as f64) * holdout).floor() as usize;
        if holdout_len == 0 || holdout_len == t {
            return Err(GpssmError::InvalidConfig(format!(
                "holdout fraction {} leaves an empty split for {} rows",
                holdout, t
            )));
        }
        let train_len = t - holdout_len;
        let train_idx = &indices[..train_len];
        let test_idx = &indices[train_len..];

        let mut slices = Vec::with_capacity(fractions.len());
        for &f in fractions {
            let k = ((train_len as f64) * f).floor() as usize;
            if k == 0 {
                return Err(GpssmError::InvalidConfig(format!(
                    "fraction {} selects zero rows from {} training rows",
                    f, train_len
                )));
            }
            slices.push(self.subset(&train_idx[..k], &format!("train{}", f)));
        }
        let test = self.subset(test_idx, "holdout");
        Ok((slices, test))
    }

    /// Writes the dataset as CSV: `t,x1..xD,u1..uDu,y1..yD`.
    ///
    /// Floats use shortest round-trip formatting, so save followed by load
    /// reproduces every value bit-exactly.
    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        out.push('t');
        for i in 0..self.dims.d {
            out.push_str(&format!(",x{}", i + 1));
        }
        for i in 0..self.dims.d_u {
            out.push_str(&format!(",u{}", i + 1));
        }
        for i in 0..self.dims.d {
            out.push_str(&format!(",y{}", i + 1));
        }
        out.push('\n');
        for (t, (z, y)) in self.inputs.iter().zip(self.targets.iter()).enumerate() {
            out.push_str(&t.to_string());
            for v in z.iter().chain(y.iter()) {
                out.push(',');
                out.push_str(&v.to_string());
            }
            out.push('\n');
        }
        let mut file = fs::File::create(path).map_err(|e| GpssmError::io(path, e))?;
        file.write_all(out.as_bytes())
            .map_err(|e| GpssmError::io(path, e))
    }

    /// Loads a dataset saved by [`TrajectoryDataset::save_csv`].
    pub fn load_csv(path: &Path, dims: Dims) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| GpssmError::io(path, e))?;
        let expected_cols = 1 + dims.dz() + dims.d;
        let mut inputs = Vec::new();
        let mut targets = Vec::new();
        for (line_no, line) in text.lines().enumerate() {
            if line_no == 0 {
                // header; column count doubles as a cheap dimension check
                let cols = line.split(',').count();
                if cols != expected_cols {
                    return Err(GpssmError::parse(
                        path,
                        1,
                        format!("header has {} columns, expected {}", cols, expected_cols),
                    ));
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != expected_cols {
                return Err(GpssmError::parse(
                    path,
                    line_no + 1,
                    format!("row has {} columns, expected {}", fields.len(), expected_cols),
                ));
            }
            fields[0].trim().parse::<i64>().map_err(|_| {
                GpssmError::parse(path, line_no + 1, format!("bad index '{}'", fields[0]))
            })?;
            let mut values = Vec::with_capacity(expected_cols - 1);
            for field in &fields[1..] {
                let v: f64 = field.trim().parse().map_err(|_| {
                    GpssmError::parse(path, line_no + 1, format!("bad number '{}'", field))
                })?;
                if !v.is_finite() {
                    return Err(GpssmError::parse(
                        path,
                        line_no + 1,
                        format!("non-finite value '{}'", field),
                    ));
                }
                values.push(v);
            }
            inputs.push(DVector::from_row_slice(&values[..dims.dz()]));
            targets.push(DVector::from_row_slice(&values[dims.dz()..]));
        }
        if inputs.is_empty() {
            return Err(GpssmError::EmptyDataset);
        }
        let source = path.display().to_string();
        TrajectoryDataset::new(dims, inputs, targets, source, 0.0)
    }

    /// Returns a copy with the given metadata.
    pub fn with_metadata(mut self, source: impl Into<String>, sample_rate_hz: f64) -> Self {
        self.source = source.into();
        self.sample_rate_hz = sample_rate_hz;
        self
    }
}
