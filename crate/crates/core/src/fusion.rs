//! Multi-view label fusion by confidence and distance weighted voting.
//!
//! For every point `p` of the original cloud and every camera `c`, the
//! nearest entry of that camera's partial cloud is a neighbor of `p` when it
//! lies strictly closer than `epsilon`. Each neighbor votes `w / d` for its
//! label (confidence over camera distance) and the point takes the label with
//! the largest accumulated vote, lowest id on ties, `unlabeled` with no votes.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kdtree::KdTree;
use crate::model::{ClassId, LabelSet, PointCloud, Vec3, UNLABELED};
use crate::render::LabeledPartialCloud;

pub const DEFAULT_EPSILON: f64 = 0.05;
pub const DEFAULT_D_MIN: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionParams {
    /// Neighbor radius, meters (exclusive).
    pub epsilon: f64,
    /// Lower clamp on camera distance, meters.
    pub d_min: f64,
}

impl Default for FusionParams {
    fn default() -> Self {
        Self {
            epsilon: DEFAULT_EPSILON,
            d_min: DEFAULT_D_MIN,
        }
    }
}

impl FusionParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Config(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if !(self.d_min > 0.0 && self.d_min.is_finite()) {
            return Err(Error::Config(format!("d_min must be positive, got {}", self.d_min)));
        }
        Ok(())
    }
}

/// A partial cloud with its search index.
pub struct IndexedPartial<'a> {
    pub partial: &'a LabeledPartialCloud,
    tree: KdTree,
}

pub fn build_index(entries: &[Vec3]) -> KdTree {
    KdTree::build(entries)
}

pub fn index_partials(partials: &[LabeledPartialCloud]) -> Vec<IndexedPartial<'_>> {
    partials
        .par_iter()
        .map(|partial| {
            let positions: Vec<Vec3> = partial.entries.iter().map(|e| e.position).collect();
            IndexedPartial {
                partial,
                tree: build_index(&positions),
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub camera: usize,
    pub label: ClassId,
    pub confidence: f64,
    pub cam_dist: f64,
    /// Distance from the query point.
    pub distance: f64,
}

/// At most one neighbor per camera, sorted by camera id (then input order).
pub fn gather_neighbors(p: &Vec3, partials: &[IndexedPartial<'_>], params: &FusionParams) -> Vec<Neighbor> {
    let mut out = Vec::new();
    gather_into(p, partials, params, &mut out);
    out
}

fn gather_into(p: &Vec3, partials: &[IndexedPartial<'_>], params: &FusionParams, out: &mut Vec<Neighbor>) {
    out.clear();
    for ip in partials {
        if let Some((k, distance)) = ip.tree.nearest_within(p, params.epsilon) {
            let e = &ip.partial.entries[k];
            out.push(Neighbor {
                camera: ip.partial.camera,
                label: e.label,
                confidence: e.confidence,
                cam_dist: e.cam_dist.max(params.d_min),
                distance,
            });
        }
    }
    // Stable sort: fixed accumulation order whatever the input order.
    out.sort_by_key(|n| n.camera);
}

/// Vote vector indexed by class id.
pub fn vote(neighbors: &[Neighbor], label_count: usize) -> Vec<f64> {
    let mut v = vec![0.0; label_count];
    vote_into(neighbors, &mut v);
    v
}

fn vote_into(neighbors: &[Neighbor], v: &mut [f64]) {
    v.iter_mut().for_each(|x| *x = 0.0);
    for n in neighbors {
        v[n.label as usize] += n.confidence / n.cam_dist;
    }
}

/// Smallest class id attaining the maximum vote; `unlabeled` if all zero.
pub fn assign_label(votes: &[f64]) -> ClassId {
    let mut best = UNLABELED;
    let mut best_v = 0.0;
    for (id, &v) in votes.iter().enumerate().skip(1) {
        if v > best_v {
            best_v = v;
            best = id as ClassId;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionResult {
    pub labels: Vec<ClassId>,
    /// Winning vote per point.
    pub vote_mass: Vec<f64>,
    /// Number of neighbors per point.
    pub support: Vec<u32>,
}

impl FusionResult {
    pub fn unlabeled(n: usize) -> Self {
        Self {
            labels: vec![UNLABELED; n],
            vote_mass: vec![0.0; n],
            support: vec![0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn summary(&self, labels: &LabelSet) -> FusionSummary {
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for name in labels.class_names() {
            counts.insert(name.to_string(), 0);
        }
        let mut unlabeled = 0;
        for &l in &self.labels {
            if l == UNLABELED {
                unlabeled += 1;
            } else if let Some(name) = labels.name(l) {
                *counts.entry(name.to_string()).or_default() += 1;
            }
        }
        FusionSummary {
            points: self.len(),
            per_class_counts: counts,
            unlabeled_fraction: if self.is_empty() {
                0.0
            } else {
                unlabeled as f64 / self.len() as f64
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionSummary {
    pub points: usize,
    pub per_class_counts: BTreeMap<String, usize>,
    pub unlabeled_fraction: f64,
}

/// Fuses partial clouds onto `cloud`. Runs on the current rayon pool; the
/// result does not depend on the number of threads.
pub fn fuse(
    cloud: &PointCloud,
    partials: &[LabeledPartialCloud],
    params: &FusionParams,
    label_count: usize,
) -> Result<FusionResult> {
    params.validate()?;
    for p in partials {
        if let Some(e) = p.entries.iter().find(|e| e.label as usize >= label_count) {
            return Err(Error::Argument(format!(
                "partial cloud {} has label {} >= label count {label_count}",
                p.camera, e.label
            )));
        }
    }
    let indexed = index_partials(partials);
    let per_point: Vec<(ClassId, f64, u32)> = cloud
        .positions()
        .par_iter()
        .map_init(
            || (Vec::with_capacity(indexed.len()), vec![0.0; label_count]),
            |(neighbors, votes), p| {
                gather_into(p, &indexed, params, neighbors);
                if neighbors.is_empty() {
                    return (UNLABELED, 0.0, 0);
                }
                vote_into(neighbors, votes);
                let label = assign_label(votes);
                (label, votes[label as usize], neighbors.len() as u32)
            },
        )
        .collect();
    let mut result = FusionResult::unlabeled(0);
    for (l, m, s) in per_point {
        result.labels.push(l);
        result.vote_mass.push(m);
        result.support.push(s);
    }
    Ok(result)
}
