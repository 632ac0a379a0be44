use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Replicated simulator output summarized at unique design locations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateData {
    x: Vec<Vec<f64>>,
    a: Vec<u32>,
    ybar: Vec<f64>,
    s2: Vec<f64>,
}

impl ReplicateData {
    /// `s2` holds unbiased within-location variances; entries where `a_i = 1` must be 0.
    pub fn new(x: Vec<Vec<f64>>, a: Vec<u32>, ybar: Vec<f64>, s2: Vec<f64>) -> Result<Self> {
        let n = x.len();
        if n == 0 {
            return Err(Error::InsufficientData("no design locations".into()));
        }
        for (name, len) in [("a", a.len()), ("ybar", ybar.len()), ("s2", s2.len())] {
            if len != n {
                return Err(Error::InvalidArgument(format!(
                    "{name} has {len} entries for {n} locations"
                )));
            }
        }
        let d = x[0].len();
        if d == 0 {
            return Err(Error::InvalidArgument("design has zero columns".into()));
        }
        for row in &x {
            if row.len() != d {
                return Err(Error::DimensionMismatch { expected: d, got: row.len() });
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("design location".into()));
            }
        }
        if ybar.iter().chain(&s2).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("replicate summaries".into()));
        }
        for i in 0..n {
            if a[i] == 0 {
                return Err(Error::InvalidArgument(format!("location {i} has zero replicates")));
            }
            if s2[i] < 0.0 {
                return Err(Error::InvalidArgument(format!("location {i} has negative variance")));
            }
            if a[i] == 1 && s2[i] != 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "location {i} has a single replicate but nonzero variance"
                )));
            }
        }
        Ok(ReplicateData { x, a, ybar, s2 })
    }

    /// Summarizes raw replicate vectors, one per location.
    pub fn from_replicates(x: Vec<Vec<f64>>, y: &[Vec<f64>]) -> Result<Self> {
        if x.len() != y.len() {
            return Err(Error::InvalidArgument(format!(
                "{} locations but {} replicate groups",
                x.len(),
                y.len()
            )));
        }
        let mut a = Vec::with_capacity(y.len());
        let mut ybar = Vec::with_capacity(y.len());
        let mut s2 = Vec::with_capacity(y.len());
        for (i, reps) in y.iter().enumerate() {
            if reps.is_empty() {
                return Err(Error::InvalidArgument(format!("location {i} has zero replicates")));
            }
            let k = reps.len() as f64;
            let mean = reps.iter().sum::<f64>() / k;
            let var = if reps.len() > 1 {
                reps.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0)
            } else {
                0.0
            };
            a.push(reps.len() as u32);
            ybar.push(mean);
            s2.push(var);
        }
        ReplicateData::new(x, a, ybar, s2)
    }

    /// Groups (location, output) pairs by exactly equal locations, in order of first appearance.
    pub fn from_pairs(points: &[Vec<f64>], y: &[f64]) -> Result<Self> {
        if points.len() != y.len() {
            return Err(Error::InvalidArgument(format!(
                "{} points but {} outputs",
                points.len(),
                y.len()
            )));
        }
        let mut xs: Vec<Vec<f64>> = Vec::new();
        let mut groups: Vec<Vec<f64>> = Vec::new();
        let mut lookup = std::collections::HashMap::new();
        for (p, &v) in points.iter().zip(y) {
            let key: Vec<u64> = p.iter().map(|c| c.to_bits()).collect();
            let slot = *lookup.entry(key).or_insert_with(|| {
                xs.push(p.clone());
                groups.push(Vec::new());
                groups.len() - 1
            });
            groups[slot].push(v);
        }
        ReplicateData::from_replicates(xs, &groups)
    }

    pub fn x(&self) -> &[Vec<f64>] {
        &self.x
    }

    pub fn replicates(&self) -> &[u32] {
        &self.a
    }

    pub fn ybar(&self) -> &[f64] {
        &self.ybar
    }

    pub fn s2(&self) -> &[f64] {
        &self.s2
    }

    /// Number of unique locations.
    pub fn n(&self) -> usize {
        self.x.len()
    }

    /// Total number of runs.
    pub fn total(&self) -> u64 {
        self.a.iter().map(|&a| u64::from(a)).sum()
    }

    pub fn dim(&self) -> usize {
        self.x[0].len()
    }

    pub(crate) fn validate(&self) -> Result<()> {
        ReplicateData::new(self.x.clone(), self.a.clone(), self.ybar.clone(), self.s2.clone()).map(|_| ())
    }
}
