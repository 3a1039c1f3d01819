use std::io::{Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::ModelError;

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub features: Vec<f64>,
    pub target: f64,
    pub city: String,
}

/// Rows of (feature vector, target, city tag). All rows share one arity.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingSet {
    pub rows: Vec<Sample>,
}

impl TrainingSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, features: Vec<f64>, target: f64, city: &str) -> Result<(), ModelError> {
        if let Some(a) = self.arity() {
            if a != features.len() {
                return Err(ModelError::ArityMismatch {
                    expected: a,
                    got: features.len(),
                });
            }
        }
        if features.is_empty() {
            return Err(ModelError::EmptyFeatures);
        }
        self.rows.push(Sample {
            features,
            target,
            city: city.to_string(),
        });
        Ok(())
    }

    pub fn extend(&mut self, other: TrainingSet) -> Result<(), ModelError> {
        for s in other.rows {
            self.push(s.features, s.target, &s.city)?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn arity(&self) -> Option<usize> {
        self.rows.first().map(|r| r.features.len())
    }

    pub fn targets(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.target).collect()
    }

    /// Column-major copy of the features.
    pub fn columns(&self) -> Vec<Vec<f64>> {
        let arity = self.arity().unwrap_or(0);
        (0..arity)
            .map(|f| self.rows.iter().map(|r| r.features[f]).collect())
            .collect()
    }

    /// Distinct city tags in first-seen order.
    pub fn cities(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for r in &self.rows {
            if !out.contains(&r.city) {
                out.push(r.city.clone());
            }
        }
        out
    }

    /// Population standard deviation per feature.
    pub fn feature_std(&self) -> Vec<f64> {
        let n = self.len() as f64;
        self.columns()
            .iter()
            .map(|c| {
                let m = c.iter().sum::<f64>() / n;
                (c.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n).sqrt()
            })
            .collect()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), ModelError> {
        let mut wr = csv::Writer::from_writer(w);
        let arity = self.arity().unwrap_or(1);
        let mut header: Vec<String> = (0..arity).map(|i| format!("feature_{i}")).collect();
        header.push("target".into());
        header.push("city".into());
        wr.write_record(&header)?;
        for r in &self.rows {
            let mut rec: Vec<String> = r.features.iter().map(|v| format!("{v}")).collect();
            rec.push(format!("{}", r.target));
            rec.push(r.city.clone());
            wr.write_record(&rec)?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self, ModelError> {
        let mut rd = csv::Reader::from_reader(r);
        let headers = rd.headers()?.clone();
        let n = headers.len();
        if n < 3 || &headers[n - 2] != "target" || &headers[n - 1] != "city" {
            return Err(ModelError::Csv("header must end with target,city".into()));
        }
        let mut ts = TrainingSet::new();
        for (i, rec) in rd.records().enumerate() {
            let rec = rec?;
            let parse = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| ModelError::Csv(format!("row {}: bad number {s:?}", i + 1)))
            };
            let features = (0..n - 2).map(|k| parse(&rec[k])).collect::<Result<Vec<_>, _>>()?;
            ts.push(features, parse(&rec[n - 2])?, &rec[n - 1])?;
        }
        Ok(ts)
    }
}

/// Appends `n_samples` noisy copies of every row. Noise on feature `f` is
/// N(0, (noise_level * std_f)^2), std taken over the input set. Targets and
/// city tags are copied unchanged. Originals come first, in order.
pub fn augment(ts: &TrainingSet, n_samples: usize, noise_level: f64, seed: u64) -> Result<TrainingSet, ModelError> {
    if !(noise_level >= 0.0 && noise_level.is_finite()) {
        return Err(ModelError::InvalidParam(format!("noise_level {noise_level}")));
    }
    let stds = ts.feature_std();
    let dists: Vec<Normal<f64>> = stds
        .iter()
        .map(|s| Normal::new(0.0, noise_level * s).expect("finite non-negative std"))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = ts.clone();
    out.rows.reserve(ts.len() * n_samples);
    for r in &ts.rows {
        for _ in 0..n_samples {
            let features = r
                .features
                .iter()
                .zip(&dists)
                .map(|(v, d)| v + d.sample(&mut rng))
                .collect();
            out.rows.push(Sample {
                features,
                target: r.target,
                city: r.city.clone(),
            });
        }
    }
    Ok(out)
}
