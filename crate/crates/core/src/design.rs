//! Space-filling experimental designs on the unit cube.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::param_space::ParameterSpace;
use crate::simulator::seeded;

/// Unique design points (unit cube) with per-point replicate counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Design {
    pub points: Vec<Vec<f64>>,
    pub replicates: Vec<u32>,
}

/// One planned simulator execution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunAssignment {
    pub point_id: usize,
    pub seed: u64,
}

impl Design {
    pub fn new(points: Vec<Vec<f64>>, replicates: Vec<u32>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidArgument("design needs at least one point".into()));
        }
        if points.len() != replicates.len() {
            return Err(Error::InvalidArgument("one replicate count per point required".into()));
        }
        let d = points[0].len();
        for p in &points {
            if p.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: p.len(),
                });
            }
            if p.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::InvalidArgument("design coordinates must lie in [0, 1]".into()));
            }
        }
        if replicates.contains(&0) {
            return Err(Error::InvalidArgument("replicate counts must be positive".into()));
        }
        Ok(Design { points, replicates })
    }

    fn singles(points: Vec<Vec<f64>>) -> Self {
        let n = points.len();
        Design {
            points,
            replicates: vec![1; n],
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn total_runs(&self) -> u64 {
        self.replicates.iter().map(|&a| a as u64).sum()
    }

    /// Writes `point_id,<dim names...>,replicates` with native-unit coordinates.
    pub fn write_csv(&self, space: &ParameterSpace, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        let mut out = String::from("point_id");
        for name in space.names() {
            out.push(',');
            out.push_str(name);
        }
        out.push_str(",replicates\n");
        for (i, (p, a)) in self.points.iter().zip(&self.replicates).enumerate() {
            out.push_str(&i.to_string());
            for v in space.denormalize(p)? {
                out.push(',');
                out.push_str(&v.to_string());
            }
            out.push(',');
            out.push_str(&a.to_string());
            out.push('\n');
        }
        w.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Reads a design written by [`Design::write_csv`].
    pub fn read_csv(space: &ParameterSpace, path: &Path) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path)?;
        let d = space.len();
        let mut points = Vec::new();
        let mut replicates = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            if rec.len() != d + 2 {
                return Err(Error::InvalidArgument(format!(
                    "{}: expected {} columns, found {}",
                    path.display(),
                    d + 2,
                    rec.len()
                )));
            }
            let parse = |s: &str| {
                s.parse::<f64>()
                    .map_err(|_| Error::InvalidArgument(format!("{}: bad number `{s}`", path.display())))
            };
            let native: Vec<f64> = (1..=d).map(|j| parse(&rec[j])).collect::<Result<_>>()?;
            points.push(space.normalize(&native)?);
            replicates.push(
                rec[d + 1]
                    .parse()
                    .map_err(|_| Error::InvalidArgument(format!("{}: bad replicate count", path.display())))?,
            );
        }
        Design::new(points, replicates)
    }
}

pub(crate) fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Smallest pairwise Euclidean distance; infinite for fewer than two points.
pub fn min_pairwise_distance(points: &[Vec<f64>]) -> f64 {
    let mut best = f64::INFINITY;
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            best = best.min(distance(&points[i], &points[j]));
        }
    }
    best
}

/// One random Latin hypercube with points at bin centres.
fn random_lhs(d: usize, n: usize, rng: &mut impl rand::Rng) -> Vec<Vec<f64>> {
    let mut points = vec![vec![0.0; d]; n];
    let mut perm: Vec<usize> = (0..n).collect();
    for j in 0..d {
        perm.shuffle(rng);
        for (i, &bin) in perm.iter().enumerate() {
            points[i][j] = (bin as f64 + 0.5) / n as f64;
        }
    }
    points
}

/// Best of `restarts` random Latin hypercubes under the maximin criterion.
///
/// Every column places exactly one point in each of the `n` bins
/// `[k/n, (k+1)/n)`, at the bin centre. Ties keep the earliest restart.
pub fn lhs_maximin(d: usize, n: usize, seed: u64, restarts: usize) -> Design {
    assert!(d >= 1 && n >= 1 && restarts >= 1, "lhs_maximin needs d, n, restarts >= 1");
    let mut rng = seeded(seed, 0x004c_4853);
    let mut best = random_lhs(d, n, &mut rng);
    let mut best_score = min_pairwise_distance(&best);
    for _ in 1..restarts {
        let cand = random_lhs(d, n, &mut rng);
        let score = min_pairwise_distance(&cand);
        if score > best_score {
            best = cand;
            best_score = score;
        }
    }
    Design::singles(best)
}

/// Greedy maximin subset of `candidates` of size `k`, returned as candidate indices
/// in selection order.
///
/// With `existing` points, each pick maximizes its minimum distance to
/// everything chosen so far plus `existing`. Without them, the farthest
/// candidate pair seeds the selection. Ties go to the lowest index.
pub fn maximin_select_indices(candidates: &[Vec<f64>], k: usize, existing: &[Vec<f64>]) -> Result<Vec<usize>> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be >= 1".into()));
    }
    if k > candidates.len() {
        return Err(Error::InvalidArgument(format!(
            "cannot select {k} points from {} candidates",
            candidates.len()
        )));
    }
    let mut mind = vec![f64::INFINITY; candidates.len()];
    for e in existing {
        for (m, c) in mind.iter_mut().zip(candidates) {
            *m = m.min(distance(c, e));
        }
    }
    let mut chosen: Vec<usize> = Vec::with_capacity(k);
    let mut taken = vec![false; candidates.len()];

    let take = |idx: usize, chosen: &mut Vec<usize>, mind: &mut Vec<f64>, taken: &mut Vec<bool>| {
        chosen.push(idx);
        taken[idx] = true;
        let p = &candidates[idx];
        for (m, c) in mind.iter_mut().zip(candidates) {
            *m = m.min(distance(c, p));
        }
    };

    if existing.is_empty() {
        if candidates.len() == 1 {
            return Ok(vec![0]);
        }
        let (mut bi, mut bj, mut bd) = (0, 1, f64::NEG_INFINITY);
        for i in 0..candidates.len() {
            for j in i + 1..candidates.len() {
                let dd = distance(&candidates[i], &candidates[j]);
                if dd > bd {
                    (bi, bj, bd) = (i, j, dd);
                }
            }
        }
        take(bi, &mut chosen, &mut mind, &mut taken);
        if k > 1 {
            take(bj, &mut chosen, &mut mind, &mut taken);
        }
    }
    while chosen.len() < k {
        let mut best: Option<usize> = None;
        for (i, &m) in mind.iter().enumerate() {
            if taken[i] {
                continue;
            }
            if best.is_none_or(|b| m > mind[b]) {
                best = Some(i);
            }
        }
        let b = best.expect("k <= candidates guarantees a free candidate");
        take(b, &mut chosen, &mut mind, &mut taken);
    }
    Ok(chosen)
}

/// [`maximin_select_indices`], materialized as a design with single replicates.
pub fn maximin_select(candidates: &[Vec<f64>], k: usize, existing: &[Vec<f64>]) -> Result<Design> {
    let idx = maximin_select_indices(candidates, k, existing)?;
    Ok(Design::singles(idx.into_iter().map(|i| candidates[i].clone()).collect()))
}

/// Assigns `a` replicates per point, seeds consecutive from `next_seed` in
/// point-major order.
pub fn plan_replicates(design: &mut Design, a: u32, next_seed: u64) -> Vec<RunAssignment> {
    assert!(a >= 1, "replicates must be >= 1");
    design.replicates.iter_mut().for_each(|r| *r = a);
    let mut seed = next_seed;
    let mut out = Vec::with_capacity(design.len() * a as usize);
    for point_id in 0..design.len() {
        for _ in 0..a {
            out.push(RunAssignment { point_id, seed });
            seed += 1;
        }
    }
    out
}
