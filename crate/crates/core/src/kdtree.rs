//! Exact nearest-neighbor search over 3D points.

use crate::model::Vec3;

const LEAF_SIZE: usize = 8;

#[derive(Debug, Clone)]
enum Node {
    Leaf { start: u32, end: u32 },
    Split { dim: u8, value: f64, left: u32, right: u32 },
}

/// Static bucketed k-d tree. Queries are exact; among equidistant entries
/// the lowest original index wins.
#[derive(Debug, Clone)]
pub struct KdTree {
    points: Vec<[f64; 3]>,
    ids: Vec<u32>,
    nodes: Vec<Node>,
    lo: [f64; 3],
    hi: [f64; 3],
}

impl KdTree {
    pub fn build(entries: &[Vec3]) -> Self {
        let mut order: Vec<u32> = (0..entries.len() as u32).collect();
        let mut tree = Self {
            points: Vec::with_capacity(entries.len()),
            ids: Vec::with_capacity(entries.len()),
            nodes: Vec::new(),
            lo: [f64::INFINITY; 3],
            hi: [f64::NEG_INFINITY; 3],
        };
        for p in entries {
            for d in 0..3 {
                tree.lo[d] = tree.lo[d].min(p[d]);
                tree.hi[d] = tree.hi[d].max(p[d]);
            }
        }
        if !entries.is_empty() {
            tree.build_node(entries, &mut order, 0);
        }
        for &i in &order {
            let p = entries[i as usize];
            tree.points.push([p.x, p.y, p.z]);
            tree.ids.push(i);
        }
        tree
    }

    fn build_node(&mut self, entries: &[Vec3], order: &mut [u32], offset: usize) -> u32 {
        let id = self.nodes.len() as u32;
        if order.len() <= LEAF_SIZE {
            self.nodes.push(Node::Leaf {
                start: offset as u32,
                end: (offset + order.len()) as u32,
            });
            return id;
        }
        // Split the widest extent of this cell at the median.
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for &i in order.iter() {
            let p = entries[i as usize];
            for d in 0..3 {
                lo[d] = lo[d].min(p[d]);
                hi[d] = hi[d].max(p[d]);
            }
        }
        let dim = (0..3)
            .max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b])))
            .unwrap();
        let mid = order.len() / 2;
        order.select_nth_unstable_by(mid, |&a, &b| {
            entries[a as usize][dim]
                .total_cmp(&entries[b as usize][dim])
                .then(a.cmp(&b))
        });
        let value = entries[order[mid] as usize][dim];
        self.nodes.push(Node::Leaf { start: 0, end: 0 });
        let (left_part, right_part) = order.split_at_mut(mid);
        let left = self.build_node(entries, left_part, offset);
        let right = self.build_node(entries, right_part, offset + mid);
        self.nodes[id as usize] = Node::Split {
            dim: dim as u8,
            value,
            left,
            right,
        };
        id
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Closest entry as `(index, distance)`; `None` for an empty tree.
    pub fn nearest(&self, query: &Vec3) -> Option<(usize, f64)> {
        self.search(query, f64::INFINITY)
    }

    /// Closest entry if its distance is strictly below `radius`.
    pub fn nearest_within(&self, query: &Vec3, radius: f64) -> Option<(usize, f64)> {
        // Cheap reject against the bounding box.
        let mut box_d2 = 0.0;
        for d in 0..3 {
            let excess = (self.lo[d] - query[d]).max(query[d] - self.hi[d]).max(0.0);
            box_d2 += excess * excess;
        }
        let bound = radius * radius * (1.0 + 1e-12);
        if self.is_empty() || box_d2 > bound {
            return None;
        }
        self.search(query, bound)
            .filter(|&(_, dist)| dist < radius)
    }

    /// Best `(d2, id)` lexicographically among entries with `d2 < bound_d2`.
    fn search(&self, query: &Vec3, bound_d2: f64) -> Option<(usize, f64)> {
        if self.is_empty() {
            return None;
        }
        let q = [query.x, query.y, query.z];
        let mut best_d2 = bound_d2;
        let mut best_id = u32::MAX;
        let mut stack: Vec<(u32, f64)> = Vec::with_capacity(64);
        stack.push((0, 0.0));
        while let Some((node, plane_d2)) = stack.pop() {
            if plane_d2 > best_d2 {
                continue;
            }
            match self.nodes[node as usize] {
                Node::Leaf { start, end } => {
                    for k in start as usize..end as usize {
                        let p = &self.points[k];
                        let (dx, dy, dz) = (p[0] - q[0], p[1] - q[1], p[2] - q[2]);
                        let d2 = dx * dx + dy * dy + dz * dz;
                        let id = self.ids[k];
                        if d2 < best_d2 || (d2 == best_d2 && id < best_id) {
                            best_d2 = d2;
                            best_id = id;
                        }
                    }
                }
                Node::Split {
                    dim,
                    value,
                    left,
                    right,
                } => {
                    let diff = q[dim as usize] - value;
                    let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                    // Far side pushed first so the near side is explored first.
                    stack.push((far, diff * diff));
                    stack.push((near, 0.0));
                }
            }
        }
        (best_id != u32::MAX).then(|| (best_id as usize, best_d2.sqrt()))
    }
}
