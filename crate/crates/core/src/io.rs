//! Model files and matrix export.
//!
//! A model file is JSON:
//!
//! ```json
//! {
//!   "states": ["a", "b"],
//!   "transitions": [[0.0, 1.0], [1.0, 0.0]],
//!   "offspring": { "a": [[0, 0.5], [2, 0.5]], "b": [[0, 1.0]] }
//! }
//! ```
//!
//! Offspring probabilities must already sum to one; parametric laws have to
//! be truncated and renormalized before they are written out.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::ModelError;
use crate::matrix::Matrix;
use crate::model::{build_model, chain_issues, validate_chain, BpmeModel, OffspringDist};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub states: Vec<String>,
    pub transitions: Vec<Vec<f64>>,
    pub offspring: BTreeMap<String, Vec<(usize, f64)>>,
}

#[derive(Debug)]
pub enum LoadError {
    Parse(serde_json::Error),
    Invalid(Vec<ModelError>),
}

impl fmt::Display for LoadError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LoadError::Parse(e) => write!(f, "model file does not parse: {e}"),
            LoadError::Invalid(issues) => {
                write!(f, "model file is invalid:")?;
                for issue in issues {
                    write!(f, "\n  - {issue}")?;
                }
                Ok(())
            }
        }
    }
}

impl std::error::Error for LoadError {}

impl ModelFile {
    pub fn parse(text: &str) -> Result<Self, LoadError> {
        serde_json::from_str(text).map_err(LoadError::Parse)
    }

    /// Validates everything and reports every problem found, not just the first.
    pub fn into_model<T: Scalar>(self) -> Result<BpmeModel<T>, LoadError> {
        let mut issues = Vec::new();
        let rows: Vec<Vec<T>> = self
            .transitions
            .iter()
            .map(|r| r.iter().map(|&x| T::lit(x)).collect())
            .collect();
        let matrix = match Matrix::from_rows(rows) {
            Ok(m) => {
                issues.extend(chain_issues(&m, &self.states));
                Some(m)
            }
            Err(e) => {
                issues.push(e.into());
                None
            }
        };
        for name in self.offspring.keys() {
            if !self.states.contains(name) {
                issues.push(ModelError::UnknownState(name.clone()));
            }
        }
        let mut offspring = Vec::with_capacity(self.states.len());
        for state in &self.states {
            match self.offspring.get(state) {
                None => issues.push(ModelError::MissingOffspring(state.clone())),
                Some(pairs) => {
                    let pairs: Vec<(usize, T)> = pairs.iter().map(|&(n, p)| (n, T::lit(p))).collect();
                    match OffspringDist::from_probabilities(state, &pairs) {
                        Ok(o) => offspring.push(o),
                        Err(e) => issues.push(e),
                    }
                }
            }
        }
        if !issues.is_empty() {
            return Err(LoadError::Invalid(issues));
        }
        let chain = validate_chain(matrix.expect("no issues"), self.states)
            .map_err(|e| LoadError::Invalid(vec![e]))?;
        build_model(chain, offspring).map_err(|e| LoadError::Invalid(vec![e]))
    }

    pub fn from_model<T: Scalar>(model: &BpmeModel<T>) -> Self {
        let labels = model.chain().labels();
        Self {
            states: labels.to_vec(),
            transitions: model.transition().rows().into_iter().map(|r| r.into_iter().map(T::as_f64).collect()).collect(),
            offspring: labels
                .iter()
                .zip(model.offspring())
                .map(|(l, o)| (l.clone(), o.pmf().iter().map(|&(n, p)| (n, p.as_f64())).collect()))
                .collect(),
        }
    }
}

pub fn load_model<T: Scalar>(text: &str) -> Result<BpmeModel<T>, LoadError> {
    ModelFile::parse(text)?.into_model()
}

/// SHA-256 of the model file bytes, lowercase hex.
pub fn model_hash(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Matrix with its state labels, as written to JSON reports.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LabeledMatrix {
    pub labels: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl LabeledMatrix {
    pub fn new<T: Scalar>(labels: &[String], m: &Matrix<T>) -> Self {
        Self {
            labels: labels.to_vec(),
            rows: m.rows().into_iter().map(|r| r.into_iter().map(T::as_f64).collect()).collect(),
        }
    }

    /// Header `state,<labels...>`, then one row per state.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "state,{}", self.labels.join(","))?;
        for (label, row) in self.labels.iter().zip(&self.rows) {
            let cells: Vec<String> = row.iter().map(|x| format!("{x}")).collect();
            writeln!(out, "{label},{}", cells.join(","))?;
        }
        Ok(())
    }
}
