//! Merging of overlapping raw window hits into candidate regions.

use serde::{Deserialize, Serialize};

use super::DetectionBox;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GroupParams {
    /// Boxes overlapping at least this much are linked into one cluster.
    pub iou: f64,
    pub min_votes: usize,
}

impl Default for GroupParams {
    fn default() -> Self {
        Self { iou: 0.3, min_votes: 2 }
    }
}

impl GroupParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.iou > 0.0 && self.iou <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "grouping IoU must be in (0, 1], got {}",
                self.iou
            )));
        }
        Ok(())
    }
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

/// Single-linkage clustering on IoU ≥ `params.iou`. Clusters with fewer than
/// `min_votes` members are dropped; each survivor becomes the score-weighted
/// mean of its members (plain mean when scores do not sum positive) carrying
/// the best member score. Output is ordered by each cluster's first member.
pub fn group_detections(raw: &[DetectionBox], params: &GroupParams) -> Vec<DetectionBox> {
    let n = raw.len();
    if n == 0 {
        return Vec::new();
    }
    let mut parent: Vec<usize> = (0..n).collect();
    // Sweep along x: boxes that do not overlap in x cannot reach the IoU bar.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| raw[a].x.total_cmp(&raw[b].x).then(a.cmp(&b)));
    for (k, &i) in order.iter().enumerate() {
        let right = raw[i].x + raw[i].w;
        for &j in &order[k + 1..] {
            if raw[j].x >= right {
                break;
            }
            if raw[i].iou(&raw[j]) >= params.iou {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); n];
    for i in 0..n {
        let r = find(&mut parent, i);
        members[r].push(i);
    }
    let mut out = Vec::new();
    for (root, m) in members.iter().enumerate() {
        if m.is_empty() || m.len() < params.min_votes.max(1) {
            continue;
        }
        debug_assert_eq!(m[0], root);
        let total: f64 = m.iter().map(|&i| raw[i].score).sum();
        let weight = |i: usize| {
            if total > 0.0 {
                raw[i].score / total
            } else {
                1.0 / m.len() as f64
            }
        };
        let mut b = DetectionBox {
            x: 0.0,
            y: 0.0,
            w: 0.0,
            h: 0.0,
            score: f64::NEG_INFINITY,
            source: raw[root].source,
        };
        for &i in m {
            let wt = weight(i);
            b.x += wt * raw[i].x;
            b.y += wt * raw[i].y;
            b.w += wt * raw[i].w;
            b.h += wt * raw[i].h;
            b.score = b.score.max(raw[i].score);
        }
        out.push(b);
    }
    out
}
