use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{sq_dist, KdTree};
use crate::error::{GmspError, Result};

/// Clouds larger than this use the kd-tree; smaller ones the direct scan.
pub const KDTREE_THRESHOLD: usize = 2000;

/// `n × d` observations stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointCloud {
    data: Vec<f64>,
    n: usize,
    d: usize,
}

impl PointCloud {
    pub fn new(data: Vec<f64>, d: usize) -> Result<Self> {
        if d == 0 {
            return Err(GmspError::Domain("dimension must be at least 1".into()));
        }
        if !data.len().is_multiple_of(d) {
            return Err(GmspError::DimensionMismatch { expected: d, got: data.len() % d });
        }
        let n = data.len() / d;
        if n < 2 {
            return Err(GmspError::TooFewPoints(n));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(GmspError::NonFinite { row: pos / d, col: pos % d });
        }
        Ok(Self { data, n, d })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.first().map(|r| r.len()).unwrap_or(1);
        let mut data = Vec::with_capacity(rows.len() * d);
        for r in rows {
            if r.len() != d {
                return Err(GmspError::DimensionMismatch { expected: d, got: r.len() });
            }
            data.extend_from_slice(r);
        }
        Self::new(data, d)
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.d
    }

    #[inline]
    pub fn point(&self, i: usize) -> &[f64] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.d)
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let mut data = Vec::with_capacity(indices.len() * self.d);
        for &i in indices {
            data.extend_from_slice(self.point(i));
        }
        Self::new(data, self.d)
    }

    /// Copy with every point shifted by `offset`.
    pub fn translated(&self, offset: &[f64]) -> Self {
        assert_eq!(offset.len(), self.d);
        let mut data = self.data.clone();
        for row in data.chunks_exact_mut(self.d) {
            for (x, o) in row.iter_mut().zip(offset) {
                *x += o;
            }
        }
        Self { data, n: self.n, d: self.d }
    }
}

/// Nearest-neighbour distance `R_n(i)` and index `NN_i` for every observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NNTable {
    pub radii: Vec<f64>,
    pub nn_index: Vec<usize>,
}

impl NNTable {
    pub fn len(&self) -> usize {
        self.radii.len()
    }

    pub fn is_empty(&self) -> bool {
        self.radii.is_empty()
    }
}

/// Nearest neighbour of point `i` by direct scan; ties go to the smaller index.
pub fn nearest_neighbour_of(cloud: &PointCloud, i: usize) -> (usize, f64) {
    let p = cloud.point(i);
    let mut best = (usize::MAX, f64::INFINITY);
    for j in 0..cloud.n() {
        if j == i {
            continue;
        }
        let d2 = sq_dist(p, cloud.point(j));
        if d2 < best.1 {
            best = (j, d2);
        }
    }
    (best.0, best.1.sqrt())
}

pub fn nn_table_brute(cloud: &PointCloud) -> NNTable {
    let (nn_index, radii) = (0..cloud.n())
        .into_par_iter()
        .map(|i| nearest_neighbour_of(cloud, i))
        .unzip();
    NNTable { radii, nn_index }
}

pub fn nn_table_kdtree(cloud: &PointCloud) -> NNTable {
    let tree = KdTree::build(cloud);
    let (nn_index, radii) = (0..cloud.n())
        .into_par_iter()
        .map(|i| {
            let (j, d2) = tree.nearest_excluding(cloud, i);
            (j, d2.sqrt())
        })
        .unzip();
    NNTable { radii, nn_index }
}

/// Nearest-neighbour table, switching to the kd-tree above [`KDTREE_THRESHOLD`].
pub fn nn_table(cloud: &PointCloud) -> Result<NNTable> {
    if cloud.n() < 2 {
        return Err(GmspError::TooFewPoints(cloud.n()));
    }
    Ok(if cloud.n() > KDTREE_THRESHOLD { nn_table_kdtree(cloud) } else { nn_table_brute(cloud) })
}
