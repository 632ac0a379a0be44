//! Bounded parameter spaces, implicit candidate grids and NROY sets.
//!
//! All downstream computation (designs, emulators, distances) happens on the
//! unit hypercube; native units only appear at the simulator boundary and in
//! exported files.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One named, bounded input dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dimension {
    pub name: String,
    pub lo: f64,
    pub hi: f64,
}

impl Dimension {
    pub fn new(name: impl Into<String>, lo: f64, hi: f64) -> Self {
        Dimension {
            name: name.into(),
            lo,
            hi,
        }
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }
}

/// Ordered list of bounded dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Dimension>", into = "Vec<Dimension>")]
pub struct ParameterSpace {
    dims: Vec<Dimension>,
}

impl TryFrom<Vec<Dimension>> for ParameterSpace {
    type Error = Error;

    fn try_from(dims: Vec<Dimension>) -> Result<Self> {
        ParameterSpace::new(dims)
    }
}

impl From<ParameterSpace> for Vec<Dimension> {
    fn from(space: ParameterSpace) -> Self {
        space.dims
    }
}

impl ParameterSpace {
    pub fn new(dims: Vec<Dimension>) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::InvalidSpace("no dimensions".into()));
        }
        for (i, d) in dims.iter().enumerate() {
            if !(d.lo.is_finite() && d.hi.is_finite()) {
                return Err(Error::InvalidSpace(format!(
                    "dimension `{}` has non-finite bounds",
                    d.name
                )));
            }
            if d.lo >= d.hi {
                return Err(Error::InvalidSpace(format!(
                    "dimension `{}` has lo {} >= hi {}",
                    d.name, d.lo, d.hi
                )));
            }
            if dims[..i].iter().any(|o| o.name == d.name) {
                return Err(Error::InvalidSpace(format!(
                    "duplicate dimension name `{}`",
                    d.name
                )));
            }
        }
        Ok(ParameterSpace { dims })
    }

    pub fn dims(&self) -> &[Dimension] {
        &self.dims
    }

    pub fn len(&self) -> usize {
        self.dims.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dims.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.dims.iter().map(|d| d.name.as_str())
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.dims.iter().position(|d| d.name == name)
    }

    /// Maps a native-unit point onto the unit cube.
    pub fn normalize(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_len(x.len())?;
        self.dims
            .iter()
            .zip(x)
            .map(|(d, &v)| {
                if !(v >= d.lo && v <= d.hi) {
                    return Err(Error::OutOfBounds {
                        dim: d.name.clone(),
                        value: v,
                        lo: d.lo,
                        hi: d.hi,
                    });
                }
                Ok(((v - d.lo) / d.width()).clamp(0.0, 1.0))
            })
            .collect()
    }

    /// Maps a unit-cube point back to native units.
    pub fn denormalize(&self, u: &[f64]) -> Result<Vec<f64>> {
        self.check_len(u.len())?;
        Ok(self
            .dims
            .iter()
            .zip(u)
            .map(|(d, &v)| (d.lo + v * d.width()).clamp(d.lo, d.hi))
            .collect())
    }

    fn check_len(&self, got: usize) -> Result<()> {
        if got != self.dims.len() {
            return Err(Error::DimensionMismatch {
                expected: self.dims.len(),
                got,
            });
        }
        Ok(())
    }
}

/// Full-factorial lattice of `m` points per dimension, addressed by index.
///
/// The lattice is never materialized; point `i` is decoded from its index with
/// the last dimension varying fastest. Per-dimension coordinates are the `m`
/// evenly spaced values from 0 to 1 inclusive.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateGrid {
    space: ParameterSpace,
    m: usize,
    len: u64,
}

impl CandidateGrid {
    pub fn new(space: ParameterSpace, m: usize) -> Result<Self> {
        if m == 0 {
            return Err(Error::InvalidArgument("grid needs m >= 1".into()));
        }
        let len = (m as u64)
            .checked_pow(space.len() as u32)
            .ok_or_else(|| Error::InvalidArgument("grid size overflows u64".into()))?;
        Ok(CandidateGrid { space, m, len })
    }

    pub fn space(&self) -> &ParameterSpace {
        &self.space
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn dim(&self) -> usize {
        self.space.len()
    }

    /// Total number of lattice points, `m^d`.
    pub fn len(&self) -> u64 {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Coordinate of lattice level `j` along any dimension.
    pub fn level(&self, j: usize) -> f64 {
        if self.m == 1 {
            0.5
        } else {
            j as f64 / (self.m - 1) as f64
        }
    }

    /// Per-dimension lattice levels of point `index`.
    pub fn levels(&self, index: u64, out: &mut [usize]) {
        let m = self.m as u64;
        let mut rest = index;
        for slot in out.iter_mut().rev() {
            *slot = (rest % m) as usize;
            rest /= m;
        }
    }

    /// Writes the unit-cube coordinates of point `index` into `out`.
    pub fn point_into(&self, index: u64, out: &mut [f64]) -> Result<()> {
        if index >= self.len {
            return Err(Error::IndexOutOfRange {
                index,
                len: self.len,
            });
        }
        if out.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: out.len(),
            });
        }
        let m = self.m as u64;
        let mut rest = index;
        for slot in out.iter_mut().rev() {
            *slot = self.level((rest % m) as usize);
            rest /= m;
        }
        Ok(())
    }

    pub fn point(&self, index: u64) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.dim()];
        self.point_into(index, &mut out)?;
        Ok(out)
    }

    /// Index of the lattice point closest to the unit-cube point `u`.
    pub fn nearest_index(&self, u: &[f64]) -> Result<u64> {
        if u.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: u.len(),
            });
        }
        let m = self.m as u64;
        let mut index = 0u64;
        for &v in u {
            let j = if self.m == 1 {
                0
            } else {
                (v.clamp(0.0, 1.0) * (self.m - 1) as f64).round() as u64
            };
            index = index * m + j;
        }
        Ok(index)
    }
}

/// Grid points surviving an implausibility cutoff.
#[derive(Debug, Clone, PartialEq)]
pub struct NroySet {
    grid: CandidateGrid,
    indices: Vec<u64>,
    imax: Vec<f64>,
    cutoff: f64,
}

impl NroySet {
    /// Builds a set, validating ordering and the cutoff invariant.
    pub fn new(grid: CandidateGrid, indices: Vec<u64>, imax: Vec<f64>, cutoff: f64) -> Result<Self> {
        if indices.len() != imax.len() {
            return Err(Error::InvalidArgument(format!(
                "{} indices but {} implausibility values",
                indices.len(),
                imax.len()
            )));
        }
        if indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument(
                "NROY indices must be strictly increasing".into(),
            ));
        }
        if let Some(&last) = indices.last() {
            if last >= grid.len() {
                return Err(Error::IndexOutOfRange {
                    index: last,
                    len: grid.len(),
                });
            }
        }
        if let Some(bad) = imax.iter().find(|&&v| !(v < cutoff)) {
            return Err(Error::InvalidArgument(format!(
                "implausibility {bad} not below cutoff {cutoff}"
            )));
        }
        Ok(NroySet {
            grid,
            indices,
            imax,
            cutoff,
        })
    }

    /// The whole grid, as the region before any wave has run.
    pub fn full(grid: CandidateGrid) -> Self {
        let indices: Vec<u64> = (0..grid.len()).collect();
        let imax = vec![0.0; indices.len()];
        NroySet {
            grid,
            indices,
            imax,
            cutoff: f64::INFINITY,
        }
    }

    pub fn grid(&self) -> &CandidateGrid {
        &self.grid
    }

    pub fn indices(&self) -> &[u64] {
        &self.indices
    }

    pub fn imax(&self) -> &[f64] {
        &self.imax
    }

    pub fn cutoff(&self) -> f64 {
        self.cutoff
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn contains(&self, index: u64) -> bool {
        self.indices.binary_search(&index).is_ok()
    }

    /// Unit-cube coordinates of every member, in index order.
    pub fn points(&self) -> Vec<Vec<f64>> {
        self.indices
            .iter()
            .map(|&i| self.grid.point(i).expect("indices validated on construction"))
            .collect()
    }

    /// Writes `index,<dim names...>,imax` with coordinates in native units.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        let space = self.grid.space();
        let mut header = String::from("index");
        for name in space.names() {
            header.push(',');
            header.push_str(name);
        }
        header.push_str(",imax\n");
        w.write_all(header.as_bytes()).map_err(|e| Error::io(path, e))?;
        let mut unit = vec![0.0; self.grid.dim()];
        let mut line = String::new();
        for (&idx, &im) in self.indices.iter().zip(&self.imax) {
            self.grid.point_into(idx, &mut unit)?;
            let native = space.denormalize(&unit)?;
            line.clear();
            line.push_str(&idx.to_string());
            for v in native {
                line.push(',');
                line.push_str(&v.to_string());
            }
            line.push(',');
            line.push_str(&im.to_string());
            line.push('\n');
            w.write_all(line.as_bytes()).map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Reads a file written by [`NroySet::write_csv`]; only `index` and `imax` are used.
    pub fn read_csv(grid: CandidateGrid, cutoff: f64, path: &Path) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path)?;
        let mut indices = Vec::new();
        let mut imax = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let idx: u64 = rec
                .get(0)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::InvalidArgument(format!("bad index in {}", path.display())))?;
            let im: f64 = rec
                .get(rec.len() - 1)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::InvalidArgument(format!("bad imax in {}", path.display())))?;
            indices.push(idx);
            imax.push(im);
        }
        NroySet::new(grid, indices, imax, cutoff)
    }
}

/// Fraction of the grid volume retained by `nroy`.
pub fn volume_fraction(nroy: &NroySet) -> f64 {
    fraction_of(nroy.len() as u64, nroy.grid().len())
}

/// `count / total`, the arithmetic behind volume percentages.
pub fn fraction_of(count: u64, total: u64) -> f64 {
    if total == 0 {
        0.0
    } else {
        count as f64 / total as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn space1(lo: f64, hi: f64) -> ParameterSpace {
        ParameterSpace::new(vec![Dimension::new("a", lo, hi)]).unwrap()
    }

    fn unit_space(d: usize) -> ParameterSpace {
        ParameterSpace::new(
            (0..d)
                .map(|i| Dimension::new(format!("p{i}"), 0.0, 1.0))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(space1(2.0, 6.0).normalize(&[4.0]).unwrap(), vec![0.5]);
        assert_eq!(space1(2.0, 6.0).normalize(&[2.0]).unwrap(), vec![0.0]);
        assert_eq!(space1(2.0, 6.0).normalize(&[6.0]).unwrap(), vec![1.0]);
        let s = space1(0.1, 0.3);
        let u = s.normalize(&[0.25]).unwrap();
        assert_relative_eq!(u[0], 0.75, max_relative = 1e-12);
        assert_relative_eq!(s.denormalize(&u).unwrap()[0], 0.25, max_relative = 1e-12);
    }

    #[test]
    fn normalize_rejects_out_of_bounds_with_name() {
        let err = space1(2.0, 6.0).normalize(&[7.0]).unwrap_err();
        match err {
            Error::OutOfBounds { dim, .. } => assert_eq!(dim, "a"),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn space_validation() {
        assert!(ParameterSpace::new(vec![Dimension::new("a", 1.0, 1.0)]).is_err());
        assert!(ParameterSpace::new(vec![
            Dimension::new("a", 0.0, 1.0),
            Dimension::new("a", 0.0, 2.0)
        ])
        .is_err());
    }

    #[test]
    fn grid_examples() {
        let g = CandidateGrid::new(unit_space(4), 40).unwrap();
        assert_eq!(g.len(), 2_560_000);

        let g = CandidateGrid::new(unit_space(1), 5).unwrap();
        assert_eq!(g.point(2).unwrap(), vec![0.5]);
        assert!(matches!(g.point(5), Err(Error::IndexOutOfRange { .. })));

        let g = CandidateGrid::new(unit_space(2), 2).unwrap();
        let corners: Vec<Vec<f64>> = (0..4).map(|i| g.point(i).unwrap()).collect();
        assert_eq!(
            corners,
            vec![
                vec![0.0, 0.0],
                vec![0.0, 1.0],
                vec![1.0, 0.0],
                vec![1.0, 1.0]
            ]
        );
    }

    #[test]
    fn grid_enumeration_is_a_bijection() {
        for d in 1..=3 {
            for m in 1..=5 {
                let g = CandidateGrid::new(unit_space(d), m).unwrap();
                let mut seen = std::collections::BTreeSet::new();
                for i in 0..g.len() {
                    let p = g.point(i).unwrap();
                    let key: Vec<u64> = p.iter().map(|v| (v * 1e9).round() as u64).collect();
                    assert!(seen.insert(key), "duplicate point for d={d} m={m}");
                    assert_eq!(g.nearest_index(&p).unwrap(), i);
                }
                assert_eq!(seen.len() as u64, (m as u64).pow(d as u32));
            }
        }
    }

    #[test]
    fn table_volume_arithmetic() {
        let total = 2_560_000;
        assert!((fraction_of(184_974, total) * 100.0 - 7.23).abs() < 0.005);
        assert!((fraction_of(21_114, total) * 100.0 - 0.82).abs() < 0.005);
        let g = CandidateGrid::new(unit_space(2), 3).unwrap();
        let empty = NroySet::new(g, vec![], vec![], 3.0).unwrap();
        assert_eq!(volume_fraction(&empty), 0.0);
    }

    #[test]
    fn nroy_invariants_enforced() {
        let g = CandidateGrid::new(unit_space(2), 3).unwrap();
        assert!(NroySet::new(g.clone(), vec![2, 1], vec![0.0, 0.0], 3.0).is_err());
        assert!(NroySet::new(g.clone(), vec![1, 9], vec![0.0, 0.0], 3.0).is_err());
        assert!(NroySet::new(g.clone(), vec![1], vec![3.0], 3.0).is_err());
        assert!(NroySet::new(g, vec![1, 4], vec![2.9, 0.1], 3.0).is_ok());
    }

    #[test]
    fn nroy_csv_roundtrip() {
        let space = ParameterSpace::new(vec![
            Dimension::new("beta", 0.01, 0.02),
            Dimension::new("tn", 1.0, 20.0),
        ])
        .unwrap();
        let g = CandidateGrid::new(space, 4).unwrap();
        let set = NroySet::new(g.clone(), vec![0, 5, 15], vec![0.5, 1.25, 2.999], 3.0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nroy.csv");
        set.write_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("index,beta,tn,imax\n"));
        let back = NroySet::read_csv(g, 3.0, &path).unwrap();
        assert_eq!(back, set);
    }

    proptest! {
        #[test]
        fn normalize_roundtrip(lo in -1e3f64..1e3, w in 1e-3f64..1e3, t in 0.0f64..=1.0) {
            let s = space1(lo, lo + w);
            let x = lo + t * w;
            let back = s.denormalize(&s.normalize(&[x]).unwrap()).unwrap()[0];
            prop_assert!((back - x).abs() <= 1e-12 * x.abs().max(w));
        }

        #[test]
        fn volume_monotone_under_subset(mask in proptest::collection::vec(any::<bool>(), 27), keep in proptest::collection::vec(any::<bool>(), 27)) {
            let g = CandidateGrid::new(unit_space(3), 3).unwrap();
            let big: Vec<u64> = (0..27).filter(|&i| mask[i as usize]).collect();
            let small: Vec<u64> = big.iter().copied().filter(|&i| keep[i as usize]).collect();
            let a = NroySet::new(g.clone(), big.clone(), vec![0.0; big.len()], 1.0).unwrap();
            let b = NroySet::new(g, small.clone(), vec![0.0; small.len()], 1.0).unwrap();
            prop_assert!(volume_fraction(&b) <= volume_fraction(&a));
        }
    }
}
