use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dro::AtomScorer;
use crate::numkit::{dot, Matrix};
use crate::{Error, Result};

/// `f_c(y) = w_cᵀ y + b_c`, one row per output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearHead {
    pub weights: Matrix,
    pub biases: Vec<f64>,
    /// Hash of the configuration that produced the head, if any.
    #[serde(default)]
    pub config_hash: Option<String>,
}

impl LinearHead {
    pub fn zeros(outputs: usize, dim: usize) -> Self {
        LinearHead {
            weights: Matrix::zeros(outputs, dim),
            biases: vec![0.0; outputs],
            config_hash: None,
        }
    }

    pub fn new(weights: Matrix, biases: Vec<f64>) -> Result<Self> {
        if weights.rows() != biases.len() {
            return Err(Error::dim(format!("{} weight rows with {} biases", weights.rows(), biases.len())));
        }
        let head = LinearHead {
            weights,
            biases,
            config_hash: None,
        };
        head.check_finite()?;
        Ok(head)
    }

    pub fn outputs(&self) -> usize {
        self.weights.rows()
    }

    pub fn dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn num_params(&self) -> usize {
        self.outputs() * (self.dim() + 1)
    }

    pub fn score(&self, c: usize, y: &[f64]) -> f64 {
        dot(self.weights.row(c), y) + self.biases[c]
    }

    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        (0..self.outputs()).map(|c| self.score(c, x)).collect()
    }

    /// Argmax of the plain logits, ties to the lowest class.
    pub fn predict_class(&self, x: &[f64]) -> usize {
        crate::dro::decide(&self.logits(x))
    }

    /// Output 0, for single-output regression heads.
    pub fn predict_value(&self, x: &[f64]) -> f64 {
        self.score(0, x)
    }

    /// Scores of output `c` at every row of `ys`.
    pub fn scores(&self, c: usize, ys: &Matrix) -> Vec<f64> {
        ys.row_iter().map(|y| self.score(c, y)).collect()
    }

    /// Weights row-major, then biases.
    pub fn params(&self) -> Vec<f64> {
        let mut p = self.weights.as_slice().to_vec();
        p.extend_from_slice(&self.biases);
        p
    }

    pub fn set_params(&mut self, p: &[f64]) -> Result<()> {
        if p.len() != self.num_params() {
            return Err(Error::dim(format!("{} parameters for a head with {}", p.len(), self.num_params())));
        }
        let nw = self.outputs() * self.dim();
        self.weights.as_mut_slice().copy_from_slice(&p[..nw]);
        self.biases.copy_from_slice(&p[nw..]);
        Ok(())
    }

    pub fn check_finite(&self) -> Result<()> {
        if self.weights.as_slice().iter().chain(&self.biases).all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite("head parameters".into()))
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let head: LinearHead = serde_json::from_str(s)?;
        if head.weights.rows() != head.biases.len() {
            return Err(Error::dim("head weights and biases disagree"));
        }
        head.weights.validate()?;
        Ok(head)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s)
    }
}

impl AtomScorer for LinearHead {
    fn atom_scores(&self, class: usize, atoms: &Matrix) -> Vec<f64> {
        self.scores(class, atoms)
    }
}

/// Offset of `w_c` and `b_c` in the flat parameter vector.
pub(crate) fn param_offsets(outputs: usize, dim: usize, c: usize) -> (usize, usize) {
    (c * dim, outputs * dim + c)
}
