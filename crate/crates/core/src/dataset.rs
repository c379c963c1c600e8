//! Data model for the small unconfounded dataset and the large auxiliary
//! dataset, CSV ingestion and export, and seeded fold assignment.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One unit: covariates, binary treatment and observed outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    covariates: Vec<f64>,
    treatment: u8,
    outcome: f64,
}

impl Sample {
    pub fn new(covariates: Vec<f64>, treatment: u8, outcome: f64) -> Result<Self> {
        if treatment > 1 {
            return Err(Error::Config(format!("treatment must be 0 or 1, got {treatment}")));
        }
        if !outcome.is_finite() || covariates.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("sample values must be finite".into()));
        }
        Ok(Self {
            covariates,
            treatment,
            outcome,
        })
    }

    pub fn covariates(&self) -> &[f64] {
        &self.covariates
    }

    pub fn treatment(&self) -> u8 {
        self.treatment
    }

    pub fn is_treated(&self) -> bool {
        self.treatment == 1
    }

    pub fn outcome(&self) -> f64 {
        self.outcome
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Role {
    /// The small dataset assumed free of unobserved confounding (D¹).
    SmallUnconfounded,
    /// The large, possibly confounded dataset (D²).
    LargeAuxiliary,
}

/// An ordered, nonempty collection of samples sharing one covariate
/// dimension, optionally carrying known treatment probabilities (RCT case).
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    samples: Vec<Sample>,
    role: Role,
    known_propensity: Option<Vec<f64>>,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>, role: Role) -> Result<Self> {
        let Some(first) = samples.first() else {
            return Err(Error::Config("dataset must contain at least one sample".into()));
        };
        let q = first.covariates.len();
        if let Some((i, s)) = samples
            .iter()
            .enumerate()
            .find(|(_, s)| s.covariates.len() != q)
        {
            return Err(Error::Config(format!(
                "sample {i} has {} covariates, expected {q}",
                s.covariates.len()
            )));
        }
        Ok(Self {
            samples,
            role,
            known_propensity: None,
        })
    }

    pub fn with_known_propensity(mut self, propensity: Vec<f64>) -> Result<Self> {
        if propensity.len() != self.samples.len() {
            return Err(Error::Dimension {
                expected: self.samples.len(),
                got: propensity.len(),
            });
        }
        if let Some(&p) = propensity.iter().find(|p| !(**p > 0.0 && **p < 1.0)) {
            return Err(Error::Overlap(p));
        }
        self.known_propensity = Some(propensity);
        Ok(self)
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Covariate dimension q.
    pub fn dim(&self) -> usize {
        self.samples[0].covariates.len()
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn with_role(mut self, role: Role) -> Self {
        self.role = role;
        self
    }

    pub fn known_propensity(&self) -> Option<&[f64]> {
        self.known_propensity.as_deref()
    }

    pub fn treated_count(&self) -> usize {
        self.samples.iter().filter(|s| s.is_treated()).count()
    }

    /// Sub-dataset holding the samples at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let samples = indices.iter().map(|&i| self.samples[i].clone()).collect();
        let mut out = Dataset::new(samples, self.role)?;
        if let Some(p) = &self.known_propensity {
            out.known_propensity = Some(indices.iter().map(|&i| p[i]).collect());
        }
        Ok(out)
    }

    /// n × q covariate matrix.
    pub fn covariate_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.len(), self.dim(), |i, j| self.samples[i].covariates[j])
    }

    pub fn outcomes(&self) -> Vec<f64> {
        self.samples.iter().map(Sample::outcome).collect()
    }

    pub fn treatments(&self) -> Vec<u8> {
        self.samples.iter().map(Sample::treatment).collect()
    }

    /// Writes the dataset as CSV using the column names in `schema`.
    ///
    /// Values are printed with Rust's shortest round-trip formatting, so
    /// reloading reproduces every double exactly.
    pub fn write_csv<W: Write>(&self, writer: W, schema: &CsvSchema) -> Result<()> {
        if schema.covariates.len() != self.dim() {
            return Err(Error::Schema(format!(
                "schema names {} covariate columns but dataset has {}",
                schema.covariates.len(),
                self.dim()
            )));
        }
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<&str> = schema.covariates.iter().map(String::as_str).collect();
        header.push(&schema.treatment);
        header.push(&schema.outcome);
        let propensity = match (&schema.propensity, &self.known_propensity) {
            (Some(name), Some(values)) => {
                header.push(name);
                Some(values)
            }
            _ => None,
        };
        w.write_record(&header)?;
        for (i, s) in self.samples.iter().enumerate() {
            let mut row: Vec<String> = s.covariates.iter().map(|v| v.to_string()).collect();
            row.push(s.treatment.to_string());
            row.push(s.outcome.to_string());
            if let Some(p) = propensity {
                row.push(p[i].to_string());
            }
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>, schema: &CsvSchema) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file), schema)
    }
}

/// Column mapping for CSV ingestion.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CsvSchema {
    pub covariates: Vec<String>,
    pub treatment: String,
    pub outcome: String,
    pub propensity: Option<String>,
}

impl CsvSchema {
    /// Schema with covariate columns `x0 .. x{q-1}`, treatment `a`, outcome `y`.
    pub fn numbered(q: usize) -> Self {
        Self {
            covariates: (0..q).map(|j| format!("x{j}")).collect(),
            treatment: "a".into(),
            outcome: "y".into(),
            propensity: None,
        }
    }

    pub fn with_propensity(mut self, column: impl Into<String>) -> Self {
        self.propensity = Some(column.into());
        self
    }
}

pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema, role: Role) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, schema, role)
}

/// Parses CSV from any reader. Rows are numbered from 1, header excluded.
pub fn read_csv<R: Read>(reader: R, schema: &CsvSchema, role: Role) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let position = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::Schema(format!("missing column `{name}`")))
    };
    let cov_idx = schema
        .covariates
        .iter()
        .map(|c| position(c))
        .collect::<Result<Vec<_>>>()?;
    let a_idx = position(&schema.treatment)?;
    let y_idx = position(&schema.outcome)?;
    let p_idx = schema.propensity.as_deref().map(position).transpose()?;

    let mut samples = Vec::new();
    let mut propensity = Vec::new();
    for (r, record) in rdr.records().enumerate() {
        let row = r + 1;
        let record = record?;
        let cell = |idx: usize, name: &str| -> Result<f64> {
            let raw = record.get(idx).unwrap_or("").trim();
            let parse_err = |message: String| Error::Parse {
                row,
                column: name.to_string(),
                message,
            };
            if raw.is_empty() {
                return Err(parse_err("missing value".into()));
            }
            let v: f64 = raw
                .parse()
                .map_err(|_| parse_err(format!("`{raw}` is not a number")))?;
            if !v.is_finite() {
                return Err(parse_err(format!("`{raw}` is not finite")));
            }
            Ok(v)
        };
        let covariates = cov_idx
            .iter()
            .zip(&schema.covariates)
            .map(|(&i, name)| cell(i, name))
            .collect::<Result<Vec<_>>>()?;
        let a = cell(a_idx, &schema.treatment)?;
        let treatment = if a == 0.0 {
            0
        } else if a == 1.0 {
            1
        } else {
            return Err(Error::Parse {
                row,
                column: schema.treatment.clone(),
                message: format!("treatment must be 0 or 1, got {a}"),
            });
        };
        let outcome = cell(y_idx, &schema.outcome)?;
        if let (Some(i), Some(name)) = (p_idx, schema.propensity.as_deref()) {
            let p = cell(i, name)?;
            if !(p > 0.0 && p < 1.0) {
                return Err(Error::Parse {
                    row,
                    column: name.to_string(),
                    message: format!("propensity must lie in (0, 1), got {p}"),
                });
            }
            propensity.push(p);
        }
        samples.push(Sample {
            covariates,
            treatment,
            outcome,
        });
    }
    let ds = Dataset::new(samples, role)?;
    if p_idx.is_some() {
        ds.with_known_propensity(propensity)
    } else {
        Ok(ds)
    }
}

/// Balanced fold labels for a dataset, reproducible from the seed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitAssignment {
    folds: Vec<usize>,
    k: usize,
    seed: u64,
}

impl SplitAssignment {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.folds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.folds.is_empty()
    }

    pub fn fold_of(&self, i: usize) -> usize {
        self.folds[i]
    }

    pub fn folds(&self) -> &[usize] {
        &self.folds
    }

    /// Indices in fold `k`, ascending.
    pub fn members(&self, k: usize) -> Vec<usize> {
        (0..self.folds.len()).filter(|&i| self.folds[i] == k).collect()
    }

    /// Indices outside fold `k`, ascending.
    pub fn complement(&self, k: usize) -> Vec<usize> {
        (0..self.folds.len()).filter(|&i| self.folds[i] != k).collect()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in &self.folds {
            sizes[f] += 1;
        }
        sizes
    }
}

pub fn split(ds: &Dataset, k: usize, seed: u64) -> Result<SplitAssignment> {
    split_len(ds.len(), k, seed)
}

/// Seeded shuffle followed by round-robin fold assignment.
pub fn split_len(n: usize, k: usize, seed: u64) -> Result<SplitAssignment> {
    if k < 2 {
        return Err(Error::Config(format!("number of folds must be at least 2, got {k}")));
    }
    if k > n {
        return Err(Error::Config(format!(
            "cannot split {n} samples into {k} nonempty folds"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let mut folds = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        folds[i] = pos % k;
    }
    Ok(SplitAssignment { folds, k, seed })
}
