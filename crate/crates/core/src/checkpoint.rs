//! Named-array checkpoints stored as JSON.
//!
//! Each array carries its shape; values are written with the shortest
//! representation that parses back to the same `f64`, so a save/load cycle
//! is bit-exact.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NamedArray {
    pub name: String,
    pub shape: [usize; 2],
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub arrays: Vec<NamedArray>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, m: &Matrix) {
        self.arrays.push(NamedArray {
            name: name.into(),
            shape: [m.rows(), m.cols()],
            data: m.data().to_vec(),
        });
    }

    pub fn get(&self, name: &str) -> Result<Matrix> {
        let a = self
            .arrays
            .iter()
            .find(|a| a.name == name)
            .ok_or_else(|| Error::InvalidArgument(format!("checkpoint has no array {name:?}")))?;
        Matrix::try_from_vec(a.shape[0], a.shape[1], a.data.clone())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer_pretty(file, self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let ck: Self = serde_json::from_str(&text)?;
        for a in &ck.arrays {
            if a.shape[0] * a.shape[1] != a.data.len() {
                return Err(Error::Shape(format!(
                    "array {:?} declares {:?} but holds {} values",
                    a.name,
                    a.shape,
                    a.data.len()
                )));
            }
        }
        Ok(ck)
    }
}
