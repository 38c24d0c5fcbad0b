use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::numerics::DenseMatrix;

/// Feature matrix (`n × d`, one row per point) with integer class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: DenseMatrix,
    labels: Vec<usize>,
    num_classes: usize,
}

impl Dataset {
    pub fn new(features: DenseMatrix, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(Error::Dimension(format!(
                "{} feature rows but {} labels",
                features.rows(),
                labels.len()
            )));
        }
        if features.rows() == 0 {
            return Err(Error::Validation("dataset has no points".into()));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::Validation(format!(
                "label {bad} outside [0, {num_classes})"
            )));
        }
        Ok(Self {
            features,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_features(&self) -> usize {
        self.features.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn features(&self) -> &DenseMatrix {
        &self.features
    }

    pub fn point(&self, i: usize) -> &[f64] {
        self.features.row(i)
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Writes the dataset as `f1,...,fd,label` rows.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .has_headers(false)
            .from_path(path)
            .map_err(|e| Error::Io(e.to_string()))?;
        for i in 0..self.len() {
            let mut rec: Vec<String> = self.point(i).iter().map(|x| format!("{x:?}")).collect();
            rec.push(self.labels[i].to_string());
            w.write_record(&rec).map_err(|e| Error::Io(e.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Two interleaved half-circles. Class 0 gets `n/2` points on the upper unit
/// arc, class 1 the rest on the shifted lower arc; every coordinate is then
/// perturbed by `N(0, noise²)`.
pub fn make_two_moons(n: usize, noise: f64, seed: u64) -> Result<Dataset> {
    if n < 2 {
        return Err(Error::Validation(format!(
            "two moons needs n >= 2, got {n}"
        )));
    }
    if !(noise >= 0.0 && noise.is_finite()) {
        return Err(Error::Validation(format!("noise {noise} must be >= 0")));
    }
    let n_out = n / 2;
    let n_in = n - n_out;
    let arc = |m: usize, i: usize| {
        if m <= 1 {
            0.0
        } else {
            std::f64::consts::PI * (i as f64 / (m - 1) as f64)
        }
    };
    let mut data = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n_out {
        let t = arc(n_out, i);
        data.extend([t.cos(), t.sin()]);
        labels.push(0);
    }
    for i in 0..n_in {
        let t = arc(n_in, i);
        data.extend([1.0 - t.cos(), 1.0 - t.sin() - 0.5]);
        labels.push(1);
    }
    if noise > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for x in data.iter_mut() {
            *x += noise * rng.sample::<f64, _>(StandardNormal);
        }
    }
    Dataset::new(DenseMatrix::new(n, 2, data)?, labels, 2)
}

/// Reads comma-separated rows whose last column is an integer label.
/// Line numbers in errors are 1-based.
pub fn load_csv_dataset(path: &Path) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Io(e.to_string()))?;
    let mut data = Vec::new();
    let mut labels = Vec::new();
    let mut width = None;
    for (idx, rec) in reader.records().enumerate() {
        let line = idx + 1;
        let rec = rec.map_err(|e| Error::Parse {
            line,
            msg: e.to_string(),
        })?;
        if rec.len() < 2 {
            return Err(Error::Parse {
                line,
                msg: "expected at least one feature and a label".into(),
            });
        }
        match width {
            None => width = Some(rec.len()),
            Some(w) if w != rec.len() => {
                return Err(Error::Parse {
                    line,
                    msg: format!("{} columns, expected {w}", rec.len()),
                })
            }
            _ => {}
        }
        let last = rec.len() - 1;
        for field in rec.iter().take(last) {
            let x: f64 = field.parse().map_err(|_| Error::Parse {
                line,
                msg: format!("invalid number {field:?}"),
            })?;
            if !x.is_finite() {
                return Err(Error::Parse {
                    line,
                    msg: format!("non-finite feature {field:?}"),
                });
            }
            data.push(x);
        }
        let label: usize = rec[last].parse().map_err(|_| Error::Parse {
            line,
            msg: format!("invalid label {:?}", &rec[last]),
        })?;
        labels.push(label);
    }
    let Some(width) = width else {
        return Err(Error::Parse {
            line: 1,
            msg: "empty dataset file".into(),
        });
    };
    let num_classes = labels.iter().max().map_or(0, |m| m + 1);
    let features = DenseMatrix::new(labels.len(), width - 1, data)?;
    Dataset::new(features, labels, num_classes)
}

/// Seeded minibatch selector: sampling without replacement within an epoch,
/// reshuffled at each epoch boundary. A trailing partial batch is dropped.
#[derive(Debug, Clone)]
pub struct BatchSampler {
    order: Vec<usize>,
    batch_size: usize,
    pos: usize,
    rng: ChaCha8Rng,
}

impl BatchSampler {
    pub fn new(n: usize, batch_size: usize, seed: u64) -> Result<Self> {
        if batch_size == 0 || batch_size > n {
            return Err(Error::Validation(format!(
                "batch size {batch_size} must lie in [1, {n}]"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        Ok(Self {
            order,
            batch_size,
            pos: 0,
            rng,
        })
    }

    pub fn next_batch(&mut self) -> Vec<usize> {
        if self.pos + self.batch_size > self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.pos = 0;
        }
        let batch = self.order[self.pos..self.pos + self.batch_size].to_vec();
        self.pos += self.batch_size;
        batch
    }
}

/// `min(cap, n)` distinct indices drawn with a seeded shuffle (all of them when `n ≤ cap`).
pub fn abridged_indices(n: usize, cap: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    if n > cap {
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        idx.truncate(cap);
        idx.sort_unstable();
    }
    idx
}
