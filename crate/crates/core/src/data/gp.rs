use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::tensor::Tensor;

use super::DataError;

/// Inputs are drawn uniformly from `[0, 1]^INPUT_DIM`.
pub const INPUT_DIM: usize = 10;
pub const INITIAL_JITTER: f64 = 1e-8;
pub const MAX_JITTER_ESCALATIONS: usize = 6;
pub const TRAIN_FRACTION: f64 = 0.8;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelKind {
    #[default]
    Rbf,
    Matern,
    Periodic,
    RationalQuadratic,
    /// Gibbs kernel with lengthscale `ℓ(x) = ℓ₀·(1 + x₁)`.
    NonStationary,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MaternNu {
    Half,
    ThreeHalves,
    #[default]
    FiveHalves,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GpKernelSpec {
    pub kind: KernelKind,
    pub lengthscale: f64,
    pub variance: f64,
    pub period: f64,
    /// Rational-quadratic shape.
    pub alpha: f64,
    pub nu: MaternNu,
}

impl Default for GpKernelSpec {
    fn default() -> Self {
        Self {
            kind: KernelKind::Rbf,
            lengthscale: 1.0,
            variance: 1.0,
            period: 1.0,
            alpha: 1.0,
            nu: MaternNu::FiveHalves,
        }
    }
}

impl GpKernelSpec {
    pub fn of(kind: KernelKind) -> Self {
        Self {
            kind,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), DataError> {
        for (name, v) in [
            ("lengthscale", self.lengthscale),
            ("variance", self.variance),
            ("period", self.period),
            ("alpha", self.alpha),
        ] {
            if !(v > 0.0) {
                return Err(DataError::Spec(format!("{name} must be > 0, got {v}")));
            }
        }
        Ok(())
    }

    pub fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        let sq: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
        let (l, v) = (self.lengthscale, self.variance);
        match self.kind {
            KernelKind::Rbf => v * (-0.5 * sq / (l * l)).exp(),
            KernelKind::Matern => {
                let r = sq.sqrt() / l;
                v * match self.nu {
                    MaternNu::Half => (-r).exp(),
                    MaternNu::ThreeHalves => {
                        let s = 3f64.sqrt() * r;
                        (1.0 + s) * (-s).exp()
                    }
                    MaternNu::FiveHalves => {
                        let s = 5f64.sqrt() * r;
                        (1.0 + s + s * s / 3.0) * (-s).exp()
                    }
                }
            }
            KernelKind::Periodic => {
                let e: f64 = x
                    .iter()
                    .zip(y)
                    .map(|(a, b)| {
                        let s = (PI * (a - b).abs() / self.period).sin();
                        -2.0 * s * s / (l * l)
                    })
                    .sum();
                v * e.exp()
            }
            KernelKind::RationalQuadratic => v * (1.0 + sq / (2.0 * self.alpha * l * l)).powf(-self.alpha),
            KernelKind::NonStationary => {
                let (lx, ly) = (l * (1.0 + x[0]), l * (1.0 + y[0]));
                let s = lx * lx + ly * ly;
                let pre = (2.0 * lx * ly / s).powf(0.5 * x.len() as f64);
                v * pre * (-sq / s).exp()
            }
        }
    }

    pub fn matrix(&self, inputs: &Tensor) -> DMatrix<f64> {
        let n = inputs.rows();
        DMatrix::from_fn(n, n, |i, j| self.eval(inputs.row(i), inputs.row(j)))
    }
}

/// Cholesky factor of a kernel matrix at fixed inputs.
pub struct GpSampler {
    factor: DMatrix<f64>,
    /// Diagonal jitter that made the factorization succeed.
    pub jitter: f64,
}

impl GpSampler {
    pub fn new(spec: &GpKernelSpec, inputs: &Tensor) -> Result<Self, DataError> {
        spec.validate()?;
        let k = spec.matrix(inputs);
        let n = k.nrows();
        let mut jitter = INITIAL_JITTER;
        for _ in 0..=MAX_JITTER_ESCALATIONS {
            let shifted = &k + DMatrix::identity(n, n) * jitter;
            if let Some(ch) = Cholesky::new(shifted) {
                return Ok(Self { factor: ch.l(), jitter });
            }
            jitter *= 10.0;
        }
        Err(DataError::Numerical(format!(
            "kernel matrix not factorizable after {MAX_JITTER_ESCALATIONS} jitter escalations (last {:.0e})",
            jitter / 10.0
        )))
    }

    /// One joint draw `L z`.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let n = self.factor.nrows();
        let z = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        (&self.factor * z).iter().copied().collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RegressionBatch {
    pub inputs: Tensor,
    pub targets: Tensor,
    pub split: Split,
}

impl RegressionBatch {
    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Rows `start..end` as a new batch.
    pub fn slice(&self, start: usize, end: usize) -> Result<Self, DataError> {
        Ok(Self {
            inputs: self.inputs.slice_rows(start, end)?,
            targets: self.targets.slice_rows(start, end)?,
            split: self.split,
        })
    }

    /// Rows picked by `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Result<Self, DataError> {
        let pick = |t: &Tensor| {
            let rows: Vec<Vec<f64>> = indices.iter().map(|&i| t.row(i).to_vec()).collect();
            Tensor::from_rows(&rows)
        };
        Ok(Self {
            inputs: pick(&self.inputs)?,
            targets: pick(&self.targets)?,
            split: self.split,
        })
    }
}

/// One joint draw over `n_points` uniform inputs, split 80/20 into train
/// and test. Noise-free.
pub fn gp_sample(spec: &GpKernelSpec, n_points: usize, seed: u64) -> Result<(RegressionBatch, RegressionBatch), DataError> {
    if n_points < 2 {
        return Err(DataError::Spec(format!("need at least 2 points, got {n_points}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inputs = Tensor::uniform(&[n_points, INPUT_DIM], 0.0, 1.0, &mut rng);
    let y = GpSampler::new(spec, &inputs)?.draw(&mut rng);
    let targets = Tensor::new(vec![n_points, 1], y)?;
    let n_train = ((n_points as f64 * TRAIN_FRACTION).round() as usize).clamp(1, n_points - 1);
    let all = RegressionBatch {
        inputs,
        targets,
        split: Split::Train,
    };
    let train = all.slice(0, n_train)?;
    let mut test = all.slice(n_train, n_points)?;
    test.split = Split::Test;
    Ok((train, test))
}
