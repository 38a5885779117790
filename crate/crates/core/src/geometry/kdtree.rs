use super::{sq_dist, PointCloud};

const LEAF_SIZE: usize = 8;

#[derive(Debug, Clone)]
enum Node {
    Leaf { start: usize, end: usize },
    Split { axis: usize, value: f64, left: usize, right: usize },
}

/// Static kd-tree over the rows of a [`PointCloud`], answering exact
/// nearest-neighbour queries with the same smallest-index tie rule as the
/// direct scan.
#[derive(Debug, Clone)]
pub struct KdTree {
    nodes: Vec<Node>,
    order: Vec<usize>,
}

impl KdTree {
    pub fn build(cloud: &PointCloud) -> Self {
        let mut tree = Self { nodes: Vec::new(), order: (0..cloud.n()).collect() };
        let n = cloud.n();
        tree.build_node(cloud, 0, n);
        tree
    }

    fn build_node(&mut self, cloud: &PointCloud, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let d = cloud.dim();
        let mut axis = 0;
        let mut best_spread = -1.0;
        for k in 0..d {
            let (lo, hi) = self.order[start..end].iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &i| {
                let v = cloud.point(i)[k];
                (lo.min(v), hi.max(v))
            });
            if hi - lo > best_spread {
                best_spread = hi - lo;
                axis = k;
            }
        }
        if best_spread <= 0.0 {
            // all points coincide
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let mid = start + (end - start) / 2;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            cloud.point(a)[axis].total_cmp(&cloud.point(b)[axis])
        });
        let value = cloud.point(self.order[mid])[axis];
        self.nodes.push(Node::Leaf { start: 0, end: 0 });
        let left = self.build_node(cloud, start, mid);
        let right = self.build_node(cloud, mid, end);
        self.nodes[id] = Node::Split { axis, value, left, right };
        id
    }

    /// Nearest neighbour of row `i` other than itself: `(index, squared distance)`.
    pub fn nearest_excluding(&self, cloud: &PointCloud, i: usize) -> (usize, f64) {
        let mut best = (usize::MAX, f64::INFINITY);
        self.search(cloud, 0, cloud.point(i), i, &mut best);
        best
    }

    fn search(&self, cloud: &PointCloud, node: usize, q: &[f64], skip: usize, best: &mut (usize, f64)) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &j in &self.order[start..end] {
                    if j == skip {
                        continue;
                    }
                    let d2 = sq_dist(q, cloud.point(j));
                    if d2 < best.1 || (d2 == best.1 && j < best.0) {
                        *best = (j, d2);
                    }
                }
            }
            Node::Split { axis, value, left, right } => {
                let diff = q[axis] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.search(cloud, near, q, skip, best);
                // equality must still descend: a tie with a smaller index may sit there
                if diff * diff <= best.1 {
                    self.search(cloud, far, q, skip, best);
                }
            }
        }
    }
}
