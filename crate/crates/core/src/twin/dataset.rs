use serde::{Deserialize, Serialize};

use crate::nn::Matrix;
use crate::{Error, Result};

/// Potential outcomes known for synthetic data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub y0: Vec<f64>,
    pub y1: Vec<f64>,
    /// Stored as `y1 - y0` so the identity holds bit-exactly.
    pub tau: Vec<f64>,
}

impl GroundTruth {
    pub fn from_potential_outcomes(y0: Vec<f64>, y1: Vec<f64>) -> Self {
        let tau = y0.iter().zip(&y1).map(|(a, b)| b - a).collect();
        Self { y0, y1, tau }
    }
}

/// Covariates, treatment, observed outcome and optional ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub x: Matrix,
    pub t: Vec<u8>,
    pub y: Vec<f64>,
    pub truth: Option<GroundTruth>,
    pub ood: Option<Vec<bool>>,
}

impl LabeledDataset {
    pub fn new(x: Matrix, t: Vec<u8>, y: Vec<f64>) -> Result<Self> {
        let ds = Self {
            x,
            t,
            y,
            truth: None,
            ood: None,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn with_truth(mut self, truth: GroundTruth) -> Result<Self> {
        self.truth = Some(truth);
        self.validate()?;
        Ok(self)
    }

    pub fn with_ood(mut self, ood: Vec<bool>) -> Result<Self> {
        self.ood = Some(ood);
        self.validate()?;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.cols()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.x.rows();
        let check = |what: &str, len: usize| {
            if len == n {
                Ok(())
            } else {
                Err(Error::Data(format!("{what} has {len} rows, covariates have {n}")))
            }
        };
        check("treatment", self.t.len())?;
        check("outcome", self.y.len())?;
        if self.t.iter().any(|&t| t > 1) {
            return Err(Error::Data("treatment must be 0 or 1".into()));
        }
        if let Some(truth) = &self.truth {
            check("y0_true", truth.y0.len())?;
            check("y1_true", truth.y1.len())?;
            check("tau_true", truth.tau.len())?;
            let consistent = truth
                .y0
                .iter()
                .zip(&truth.y1)
                .zip(&truth.tau)
                .all(|((a, b), t)| b - a == *t);
            if !consistent {
                return Err(Error::Data("tau_true must equal y1_true - y0_true".into()));
            }
        }
        if let Some(ood) = &self.ood {
            check("ood_flag", ood.len())?;
        }
        Ok(())
    }

    /// Rejects NaN or infinite covariates and outcomes.
    pub fn check_finite(&self) -> Result<()> {
        if !self.x.is_finite() {
            return Err(Error::NonFinite("covariates"));
        }
        if self.y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("outcomes"));
        }
        Ok(())
    }

    /// Rows in the given order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        let pick = |v: &[f64]| indices.iter().map(|&i| v[i]).collect::<Vec<_>>();
        Self {
            x: self.x.select_rows(indices),
            t: indices.iter().map(|&i| self.t[i]).collect(),
            y: pick(&self.y),
            truth: self.truth.as_ref().map(|g| GroundTruth {
                y0: pick(&g.y0),
                y1: pick(&g.y1),
                tau: pick(&g.tau),
            }),
            ood: self
                .ood
                .as_ref()
                .map(|o| indices.iter().map(|&i| o[i]).collect()),
        }
    }

    pub fn tau_true(&self) -> Option<&[f64]> {
        self.truth.as_ref().map(|g| g.tau.as_slice())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_treatment() {
        let x = Matrix::zeros(2, 1);
        assert!(LabeledDataset::new(x, vec![0, 2], vec![0.0, 0.0]).is_err());
    }

    #[test]
    fn rejects_inconsistent_tau() {
        let x = Matrix::zeros(1, 1);
        let ds = LabeledDataset::new(x, vec![0], vec![0.0]).unwrap();
        let truth = GroundTruth {
            y0: vec![1.0],
            y1: vec![2.0],
            tau: vec![0.5],
        };
        assert!(ds.with_truth(truth).is_err());
    }

    #[test]
    fn subset_keeps_columns_aligned() {
        let x = Matrix::from_rows(&[[0.0], [1.0], [2.0]]).unwrap();
        let ds = LabeledDataset::new(x, vec![0, 1, 0], vec![5.0, 6.0, 7.0])
            .unwrap()
            .with_ood(vec![false, true, false])
            .unwrap();
        let s = ds.subset(&[2, 1]);
        assert_eq!(s.y, vec![7.0, 6.0]);
        assert_eq!(s.t, vec![0, 1]);
        assert_eq!(s.ood, Some(vec![false, true]));
        assert_eq!(s.x.as_slice(), &[2.0, 1.0]);
    }
}
