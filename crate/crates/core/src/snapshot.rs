//! Binary container for estimates and ground truth.
//!
//! Layout: the 8-byte magic, a little-endian `u32` header length, a JSON
//! header, then every array listed in the header as row-major little-endian
//! `f64` values.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::posterior::Posterior;
use crate::synth::GroundTruth;
use crate::table::{Matrix, Tensor3};

pub const MAGIC: &[u8; 8] = b"TAGMODL1";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArraySpec {
    pub name: String,
    pub shape: Vec<usize>,
}

impl ArraySpec {
    fn len(&self) -> usize {
        self.shape.iter().product()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotHeader {
    /// `"posterior"` or `"truth"`.
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    pub dims: BTreeMap<String, usize>,
    #[serde(default)]
    pub hyperparameters: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iterations: Option<usize>,
    /// Resource names in row order of `phi`.
    pub resources: Vec<String>,
    pub arrays: Vec<ArraySpec>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub header: SnapshotHeader,
    /// One buffer per entry of `header.arrays`.
    pub data: Vec<Vec<f64>>,
}

impl Snapshot {
    /// Wraps an estimate. `hyperparameters` and `iterations` are recorded as given.
    pub fn from_posterior(
        model: &str,
        posterior: &Posterior,
        resources: Vec<String>,
        n_tags: usize,
        hyperparameters: BTreeMap<String, f64>,
        iterations: usize,
    ) -> Result<Self> {
        let [n_x, n_z, n_t] = posterior.theta.dims();
        if resources.len() != posterior.phi.rows() || n_t != n_tags {
            return Err(Error::Shape("resource names or tag count disagree with the estimate".into()));
        }
        let dims = BTreeMap::from([
            ("resources".to_string(), posterior.phi.rows()),
            ("users".to_string(), posterior.psi.rows()),
            ("tags".to_string(), n_t),
            ("topics".to_string(), n_z),
            ("interests".to_string(), n_x),
        ]);
        let header = SnapshotHeader {
            kind: "posterior".into(),
            model: Some(model.to_string()),
            dims,
            hyperparameters,
            iterations: Some(iterations),
            resources,
            arrays: vec![
                ArraySpec { name: "phi".into(), shape: vec![posterior.phi.rows(), posterior.phi.cols()] },
                ArraySpec { name: "psi".into(), shape: vec![posterior.psi.rows(), posterior.psi.cols()] },
                ArraySpec { name: "theta".into(), shape: vec![n_x, n_z, n_t] },
            ],
        };
        Ok(Self {
            header,
            data: vec![
                posterior.phi.as_slice().to_vec(),
                posterior.psi.as_slice().to_vec(),
                posterior.theta.as_slice().to_vec(),
            ],
        })
    }

    pub fn from_truth(truth: &GroundTruth) -> Self {
        let dims = BTreeMap::from([
            ("resources".to_string(), truth.phi.rows()),
            ("users".to_string(), truth.psi.rows()),
            ("tags".to_string(), truth.theta.cols()),
            ("topics".to_string(), truth.phi.cols()),
        ]);
        let spec = |name: &str, m: &Matrix| ArraySpec { name: name.into(), shape: vec![m.rows(), m.cols()] };
        Self {
            header: SnapshotHeader {
                kind: "truth".into(),
                model: None,
                dims,
                hyperparameters: BTreeMap::new(),
                iterations: None,
                resources: truth.resource_names(),
                arrays: vec![spec("phi", &truth.phi), spec("psi", &truth.psi), spec("theta", &truth.theta)],
            },
            data: vec![
                truth.phi.as_slice().to_vec(),
                truth.psi.as_slice().to_vec(),
                truth.theta.as_slice().to_vec(),
            ],
        }
    }

    fn array(&self, name: &str) -> Result<(&ArraySpec, &[f64])> {
        self.header
            .arrays
            .iter()
            .zip(&self.data)
            .find(|(s, _)| s.name == name)
            .map(|(s, d)| (s, d.as_slice()))
            .ok_or_else(|| Error::Format(format!("snapshot has no array named {name}")))
    }

    pub fn matrix(&self, name: &str) -> Result<Matrix> {
        let (spec, data) = self.array(name)?;
        match spec.shape[..] {
            [rows, cols] => Matrix::from_vec(rows, cols, data.to_vec()),
            _ => Err(Error::Format(format!("{name} is not a matrix"))),
        }
    }

    pub fn phi(&self) -> Result<Matrix> {
        self.matrix("phi")
    }

    /// Rows of `phi` for the resources named in `names`, in that order.
    pub fn phi_for_names(&self, names: &[String]) -> Result<Matrix> {
        let phi = self.phi()?;
        let index: std::collections::HashMap<&str, usize> =
            self.header.resources.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
        let rows = names
            .iter()
            .map(|n| index.get(n.as_str()).copied().ok_or_else(|| Error::UnknownResource(n.clone())))
            .collect::<Result<Vec<_>>>()?;
        Ok(phi.select_rows(&rows))
    }

    pub fn to_posterior(&self) -> Result<Posterior> {
        if self.header.kind != "posterior" {
            return Err(Error::Format(format!("expected a posterior snapshot, found {}", self.header.kind)));
        }
        let (spec, theta) = self.array("theta")?;
        let dims: [usize; 3] = spec.shape[..]
            .try_into()
            .map_err(|_| Error::Format("theta must have three dimensions".into()))?;
        Ok(Posterior {
            phi: self.phi()?,
            psi: self.matrix("psi")?,
            theta: Tensor3::from_vec(dims, theta.to_vec())?,
            n_samples_averaged: 0,
        })
    }

    pub fn write<W: Write>(&self, mut out: W) -> Result<()> {
        for (spec, data) in self.header.arrays.iter().zip(&self.data) {
            if spec.len() != data.len() {
                return Err(Error::Shape(format!("array {} does not match its shape", spec.name)));
            }
        }
        let header = serde_json::to_vec(&self.header).map_err(|e| Error::Format(e.to_string()))?;
        let len = u32::try_from(header.len()).map_err(|_| Error::Format("header too large".into()))?;
        out.write_all(MAGIC)?;
        out.write_all(&len.to_le_bytes())?;
        out.write_all(&header)?;
        for data in &self.data {
            for v in data {
                out.write_all(&v.to_le_bytes())?;
            }
        }
        out.flush()?;
        Ok(())
    }

    pub fn read<R: Read>(mut input: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        input.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("not a snapshot file".into()));
        }
        let mut len = [0u8; 4];
        input.read_exact(&mut len)?;
        let mut header = vec![0u8; u32::from_le_bytes(len) as usize];
        input.read_exact(&mut header)?;
        let header: SnapshotHeader =
            serde_json::from_slice(&header).map_err(|e| Error::Format(format!("bad snapshot header: {e}")))?;
        let mut data = Vec::with_capacity(header.arrays.len());
        let mut buf = [0u8; 8];
        for spec in &header.arrays {
            let mut values = Vec::with_capacity(spec.len());
            for _ in 0..spec.len() {
                input.read_exact(&mut buf)?;
                values.push(f64::from_le_bytes(buf));
            }
            data.push(values);
        }
        Ok(Self { header, data })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read(BufReader::new(File::open(path)?))
    }
}
