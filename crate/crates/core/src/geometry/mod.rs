//! Sample geometry: point clouds, nearest-neighbour tables, and d-ball volumes.

mod ball;
mod kdtree;
mod nn;

pub use ball::{
    ball_volume, cap_volume, intersection_volume, lens_volume, radius_from_volume, unit_ball_volume,
};
pub use kdtree::KdTree;
pub use nn::{nearest_neighbour_of, nn_table, nn_table_brute, nn_table_kdtree, NNTable, PointCloud, KDTREE_THRESHOLD};

#[inline]
pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}
