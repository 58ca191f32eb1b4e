//! Covariance estimates and their spectral diagnostics.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which estimator produced a covariance matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorId {
    PowerSubsample,
    BipowerSubsample,
    TruncatedSubsample,
    NoisySubsample,
    SHat,
    SigmaTilde,
    RescaledBipower,
    PvTilde,
    ObservedAvar,
    ClosedForm,
}

impl EstimatorId {
    pub fn as_str(&self) -> &'static str {
        match self {
            EstimatorId::PowerSubsample => "power_subsample",
            EstimatorId::BipowerSubsample => "bipower_subsample",
            EstimatorId::TruncatedSubsample => "truncated_subsample",
            EstimatorId::NoisySubsample => "noisy_subsample",
            EstimatorId::SHat => "s_hat",
            EstimatorId::SigmaTilde => "sigma_tilde",
            EstimatorId::RescaledBipower => "rescaled_bipower",
            EstimatorId::PvTilde => "pv_tilde",
            EstimatorId::ObservedAvar => "observed_avar",
            EstimatorId::ClosedForm => "closed_form",
        }
    }
}

/// Spectral summary of a symmetric matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub min_eigenvalue: f64,
    pub max_eigenvalue: f64,
    /// Largest over smallest absolute eigenvalue; infinite when singular.
    pub condition_number: f64,
    /// `min_eigenvalue >= -1e-10`.
    pub psd: bool,
    /// `min_eigenvalue > 0`.
    pub positive_definite: bool,
    /// `condition_number >= 10 * dim`.
    pub ill_conditioned: bool,
}

pub const PSD_TOL: f64 = 1e-10;

/// Eigenvalue diagnostics of the symmetric part of `m`.
pub fn matrix_diagnostics(m: &DMatrix<f64>) -> Result<Diagnostics> {
    if m.nrows() != m.ncols() {
        return Err(Error::NotSquare {
            rows: m.nrows(),
            cols: m.ncols(),
        });
    }
    if m.nrows() == 0 {
        return Err(Error::InvalidConfig("empty matrix".into()));
    }
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigenvalues();
    let min = eig.min();
    let max = eig.max();
    let amax = eig.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    let amin = eig.iter().fold(f64::INFINITY, |a, v| a.min(v.abs()));
    let condition_number = if amin > 0.0 {
        amax / amin
    } else {
        f64::INFINITY
    };
    Ok(Diagnostics {
        min_eigenvalue: min,
        max_eigenvalue: max,
        condition_number,
        psd: min >= -PSD_TOL,
        positive_definite: min > 0.0,
        ill_conditioned: condition_number >= 10.0 * m.nrows() as f64,
    })
}

/// A covariance matrix estimate with diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct CovEstimate {
    pub matrix: DMatrix<f64>,
    pub estimator: EstimatorId,
    pub min_eigenvalue: f64,
    pub condition_number: f64,
    /// Fraction of the unit interval the estimate was computed on.
    pub effective_window: f64,
    /// Frobenius norm of the antisymmetric part before symmetrization.
    pub asymmetry: f64,
}

impl CovEstimate {
    /// Symmetrizes `matrix`, records its raw asymmetry and computes diagnostics.
    pub fn new(
        matrix: DMatrix<f64>,
        estimator: EstimatorId,
        effective_window: f64,
    ) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() {
            return Err(Error::NotSquare {
                rows: matrix.nrows(),
                cols: matrix.ncols(),
            });
        }
        let asymmetry = ((&matrix - matrix.transpose()) * 0.5).norm();
        let matrix = (&matrix + matrix.transpose()) * 0.5;
        let d = matrix_diagnostics(&matrix)?;
        Ok(Self {
            matrix,
            estimator,
            min_eigenvalue: d.min_eigenvalue,
            condition_number: d.condition_number,
            effective_window,
            asymmetry,
        })
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn diagnostics(&self) -> Diagnostics {
        matrix_diagnostics(&self.matrix).expect("square by construction")
    }

    /// `w' M w`.
    pub fn quadratic_form(&self, w: &[f64]) -> f64 {
        let v = nalgebra::DVector::from_column_slice(w);
        (v.transpose() * &self.matrix * &v)[(0, 0)]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.dim())
            .map(|i| self.matrix.row(i).iter().copied().collect())
            .collect()
    }

    pub fn to_json(&self) -> serde_json::Value {
        let d = self.diagnostics();
        serde_json::json!({
            "estimator": self.estimator.as_str(),
            "matrix": self.rows(),
            "min_eigenvalue": self.min_eigenvalue,
            "condition_number": if self.condition_number.is_finite() { serde_json::json!(self.condition_number) } else { serde_json::json!("inf") },
            "psd": d.psd,
            "positive_definite": d.positive_definite,
            "ill_conditioned": d.ill_conditioned,
            "effective_window": self.effective_window,
            "asymmetry": self.asymmetry,
        })
    }
}

/// `(1/count) sum_k x_k x_k'` over the rows of `devs`, each of length `m`.
pub(crate) fn mean_outer(devs: &[Vec<f64>], m: usize) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(m, m);
    for d in devs {
        for i in 0..m {
            for j in 0..m {
                out[(i, j)] += d[i] * d[j];
            }
        }
    }
    out / devs.len() as f64
}
