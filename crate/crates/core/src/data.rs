//! Toy labeled datasets.

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::str::FromStr;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// Row-major `[len, dim]`.
    pub features: Vec<f64>,
    pub dim: usize,
    pub labels: Vec<usize>,
    pub classes: usize,
}

impl Dataset {
    pub fn new(features: Vec<f64>, dim: usize, labels: Vec<usize>, classes: usize) -> Result<Self> {
        if dim == 0 || features.len() != labels.len() * dim {
            return Err(Error::ShapeMismatch {
                op: "dataset",
                detail: format!("{} features for {} labels of dim {}", features.len(), labels.len(), dim),
            });
        }
        if labels.iter().any(|&l| l >= classes) {
            return Err(Error::InvalidConfig("label out of range".into()));
        }
        Ok(Self { features, dim, labels, classes })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut features = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            features.extend_from_slice(self.row(i));
        }
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        Dataset { features, dim: self.dim, labels, classes: self.classes }
    }

    /// Features and labels of the given rows as a `[n, dim]` tensor.
    pub fn batch(&self, indices: &[usize]) -> (Tensor, Vec<usize>) {
        let s = self.subset(indices);
        let t = Tensor::new(vec![indices.len(), self.dim], s.features).expect("shape");
        (t, s.labels)
    }

    pub fn standardize(&mut self) {
        let n = self.len() as f64;
        for c in 0..self.dim {
            let mean = (0..self.len()).map(|r| self.features[r * self.dim + c]).sum::<f64>() / n;
            let var = (0..self.len()).map(|r| (self.features[r * self.dim + c] - mean).powi(2)).sum::<f64>() / n;
            let sd = if var > 0.0 { var.sqrt() } else { 1.0 };
            for r in 0..self.len() {
                let v = &mut self.features[r * self.dim + c];
                *v = (*v - mean) / sd;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    Moons,
    Blobs,
    Spirals,
}

impl FromStr for DatasetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "moons" => Ok(Self::Moons),
            "blobs" => Ok(Self::Blobs),
            "spirals" => Ok(Self::Spirals),
            _ => Err(Error::Parse { what: "dataset kind", detail: s.to_string() }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub kind: DatasetKind,
    pub size: usize,
    /// Standard deviation of the Gaussian jitter.
    pub noise: f64,
    pub classes: usize,
    pub seed: u64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self { kind: DatasetKind::Moons, size: 2000, noise: 0.2, classes: 2, seed: 101 }
    }
}

/// Deterministic under `spec.seed`; rows are shuffled and features standardized.
pub fn generate_dataset(spec: &DatasetSpec) -> Result<Dataset> {
    if spec.size < 4 {
        return Err(Error::InvalidConfig(format!("dataset size {} < 4", spec.size)));
    }
    if spec.classes < 2 {
        return Err(Error::InvalidConfig("need at least 2 classes".into()));
    }
    if spec.kind == DatasetKind::Moons && spec.classes != 2 {
        return Err(Error::InvalidConfig("moons has exactly 2 classes".into()));
    }
    if !(spec.noise >= 0.0 && spec.noise.is_finite()) {
        return Err(Error::InvalidConfig("noise must be a non-negative number".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let jitter = Normal::new(0.0, spec.noise.max(f64::MIN_POSITIVE)).expect("valid normal");
    let k = spec.classes;
    let mut points: Vec<([f64; 2], usize)> = Vec::with_capacity(spec.size);
    for i in 0..spec.size {
        let class = i % k;
        // Position of this point along its class, in [0, 1].
        let per_class = (spec.size - class).div_ceil(k);
        let t = if per_class > 1 { (i / k) as f64 / (per_class - 1) as f64 } else { 0.5 };
        let p = match spec.kind {
            DatasetKind::Moons => {
                let a = PI * t;
                if class == 0 {
                    [a.cos(), a.sin()]
                } else {
                    [1.0 - a.cos(), 0.5 - a.sin()]
                }
            }
            DatasetKind::Blobs => {
                let a = 2.0 * PI * class as f64 / k as f64;
                [4.0 * a.cos(), 4.0 * a.sin()]
            }
            DatasetKind::Spirals => {
                let r = 0.2 + 0.8 * t;
                let a = 2.0 * PI * (class as f64 / k as f64 + 0.75 * t);
                [r * a.cos(), r * a.sin()]
            }
        };
        let p = if spec.noise > 0.0 {
            [p[0] + jitter.sample(&mut rng), p[1] + jitter.sample(&mut rng)]
        } else {
            p
        };
        points.push((p, class));
    }
    points.shuffle(&mut rng);
    let features = points.iter().flat_map(|(p, _)| p.iter().copied()).collect();
    let labels = points.iter().map(|(_, c)| *c).collect();
    let mut ds = Dataset::new(features, 2, labels, k)?;
    ds.standardize();
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_standardized() {
        let spec = DatasetSpec { kind: DatasetKind::Spirals, classes: 3, size: 300, ..Default::default() };
        let a = generate_dataset(&spec).unwrap();
        assert_eq!(a, generate_dataset(&spec).unwrap());
        for c in 0..2 {
            let col: Vec<f64> = (0..a.len()).map(|r| a.row(r)[c]).collect();
            let mean = col.iter().sum::<f64>() / col.len() as f64;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / col.len() as f64;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn classes_are_balanced() {
        let ds = generate_dataset(&DatasetSpec { noise: 0.0, size: 200, ..Default::default() }).unwrap();
        assert_eq!(ds.labels.iter().filter(|&&l| l == 0).count(), 100);
        let ds = generate_dataset(&DatasetSpec { kind: DatasetKind::Blobs, classes: 3, size: 301, ..Default::default() }).unwrap();
        assert_eq!(ds.labels.iter().filter(|&&l| l == 0).count(), 101);
    }

    #[test]
    fn invalid_specs() {
        assert!(generate_dataset(&DatasetSpec { size: 3, ..Default::default() }).is_err());
        assert!(generate_dataset(&DatasetSpec { classes: 1, kind: DatasetKind::Blobs, ..Default::default() }).is_err());
        assert!(generate_dataset(&DatasetSpec { classes: 3, ..Default::default() }).is_err());
    }
}
