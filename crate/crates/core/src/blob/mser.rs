//! Maximally stable extremal regions from a union-find component tree.

use serde::{Deserialize, Serialize};

use super::MIN_REGION_AREA;
use crate::raster::Raster;
use crate::region::{DetectorFlags, Point, Polarity, Region};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MserParams {
    pub delta: u32,
    pub min_area: usize,
    /// Upper area bound as a fraction of the raster.
    pub max_area_fraction: f64,
    pub max_variation: f64,
    /// Nested selections whose areas differ by less than this share are
    /// reduced to the more stable one.
    pub min_diversity: f64,
}

impl Default for MserParams {
    fn default() -> Self {
        Self {
            delta: 5,
            min_area: MIN_REGION_AREA,
            max_area_fraction: 0.01,
            max_variation: 0.25,
            min_diversity: 0.2,
        }
    }
}

struct Node {
    level: i32,
    area: usize,
    parent: usize,
    children: Vec<usize>,
    /// Pixels that joined at this node's level.
    own: Vec<u32>,
}

const NONE: usize = usize::MAX;

fn find(parent: &mut [u32], mut i: u32) -> u32 {
    while parent[i as usize] != i {
        let p = parent[i as usize];
        parent[i as usize] = parent[p as usize];
        i = p;
    }
    i
}

/// Component tree of upper level sets `{v ≥ L}` for integer levels 255..0.
/// Every node is a component at the level where it last changed.
fn build_tree(levels: &[u8], w: usize, h: usize) -> Vec<Node> {
    let n = w * h;
    let mut buckets: Vec<Vec<u32>> = vec![Vec::new(); 256];
    for (i, &v) in levels.iter().enumerate() {
        buckets[v as usize].push(i as u32);
    }
    let mut uf: Vec<u32> = (0..n as u32).collect();
    let mut size = vec![0usize; n];
    let mut added = vec![false; n];
    // Current tree node of each union-find root.
    let mut node_of = vec![NONE; n];
    let mut nodes: Vec<Node> = Vec::new();
    let mut pending: Vec<(u32, u32)> = Vec::new();

    for level in (0..256).rev() {
        if buckets[level].is_empty() {
            continue;
        }
        pending.clear();
        for &p in &buckets[level] {
            added[p as usize] = true;
            size[p as usize] = 1;
        }
        for &p in &buckets[level] {
            let (x, y) = (p as usize % w, p as usize / w);
            let mut nb = [u32::MAX; 4];
            if x > 0 {
                nb[0] = p - 1;
            }
            if x + 1 < w {
                nb[1] = p + 1;
            }
            if y > 0 {
                nb[2] = p - w as u32;
            }
            if y + 1 < h {
                nb[3] = p + w as u32;
            }
            for q in nb {
                if q == u32::MAX || !added[q as usize] {
                    continue;
                }
                let (a, b) = (find(&mut uf, p), find(&mut uf, q));
                if a == b {
                    continue;
                }
                // Remember tree nodes of components being absorbed.
                for r in [a, b] {
                    if node_of[r as usize] != NONE {
                        pending.push((r, node_of[r as usize] as u32));
                    }
                }
                let (big, small) = if size[a as usize] >= size[b as usize] {
                    (a, b)
                } else {
                    (b, a)
                };
                uf[small as usize] = big;
                size[big as usize] += size[small as usize];
                node_of[small as usize] = NONE;
                node_of[big as usize] = NONE;
            }
        }
        // Group the level's new pixels and absorbed nodes by final root.
        let mut new_at: std::collections::BTreeMap<u32, (Vec<u32>, Vec<usize>)> = Default::default();
        for &p in &buckets[level] {
            let r = find(&mut uf, p);
            new_at.entry(r).or_default().0.push(p);
        }
        for &(r, nd) in &pending {
            let root = find(&mut uf, r);
            let e = new_at.entry(root).or_default();
            if !e.1.contains(&(nd as usize)) {
                e.1.push(nd as usize);
            }
        }
        for (root, (own, children)) in new_at {
            // A component whose node survived untouched keeps it as a child.
            let mut children = children;
            if node_of[root as usize] != NONE && !children.contains(&node_of[root as usize]) {
                children.push(node_of[root as usize]);
            }
            let id = nodes.len();
            for &c in &children {
                nodes[c].parent = id;
            }
            nodes.push(Node {
                level: level as i32,
                area: size[root as usize],
                parent: NONE,
                children,
                own,
            });
            node_of[root as usize] = id;
        }
    }
    nodes
}

fn collect_pixels(nodes: &[Node], id: usize, w: usize) -> Vec<Point> {
    let mut out = Vec::with_capacity(nodes[id].area);
    let mut stack = vec![id];
    while let Some(n) = stack.pop() {
        out.extend(
            nodes[n]
                .own
                .iter()
                .map(|&p| Point::new((p as usize % w) as i32, (p as usize / w) as i32)),
        );
        stack.extend(&nodes[n].children);
    }
    out
}

/// Extremal regions of one polarity that are stable over `delta` grey levels.
/// Dark regions are found as bright regions of the inverted raster.
pub fn detect_mser(img: &Raster, polarity: Polarity, params: &MserParams) -> Vec<Region> {
    let (w, h) = img.dims();
    let levels: Vec<u8> = img
        .data()
        .iter()
        .map(|&v| {
            let q = v.round().clamp(0.0, 255.0) as u8;
            match polarity {
                Polarity::Bright => q,
                Polarity::Dark => 255 - q,
            }
        })
        .collect();
    let nodes = build_tree(&levels, w, h);
    let delta = params.delta as i32;
    let max_area = ((w * h) as f64 * params.max_area_fraction).floor() as usize;

    // Variation (|R(L−Δ)| − |R(L)|) / |R(L)|, where R(L−Δ) is the last ancestor
    // still at or above L − Δ.
    let variation: Vec<f64> = (0..nodes.len())
        .map(|i| {
            let target = nodes[i].level - delta;
            let mut a = i;
            while nodes[a].parent != NONE && nodes[nodes[a].parent].level >= target {
                a = nodes[a].parent;
            }
            (nodes[a].area - nodes[i].area) as f64 / nodes[i].area as f64
        })
        .collect();

    let mut selected: Vec<usize> = (0..nodes.len())
        .filter(|&i| {
            let n = &nodes[i];
            n.area >= params.min_area
                && n.area <= max_area
                && variation[i] <= params.max_variation
                && (n.parent == NONE || variation[i] <= variation[n.parent])
                && n.children.iter().all(|&c| variation[i] <= variation[c])
        })
        .collect();

    // Diversity pruning: most stable first, reject anything nested too
    // closely (in area) with an already accepted region.
    selected.sort_by(|&a, &b| {
        variation[a]
            .total_cmp(&variation[b])
            .then(nodes[b].area.cmp(&nodes[a].area))
            .then(a.cmp(&b))
    });
    let mut accepted: Vec<usize> = Vec::new();
    let is_ancestor = |anc: usize, mut d: usize| {
        while d != NONE {
            if d == anc {
                return true;
            }
            d = nodes[d].parent;
        }
        false
    };
    for &i in &selected {
        let clash = accepted.iter().any(|&j| {
            let (outer, inner) = if is_ancestor(j, i) {
                (j, i)
            } else if is_ancestor(i, j) {
                (i, j)
            } else {
                return false;
            };
            let (ao, ai) = (nodes[outer].area as f64, nodes[inner].area as f64);
            (ao - ai) / ao < params.min_diversity
        });
        if !clash {
            accepted.push(i);
        }
    }
    accepted.sort_unstable();
    accepted
        .into_iter()
        .map(|i| {
            Region::new(collect_pixels(&nodes, i, w), polarity).with_detectors(DetectorFlags {
                mser: true,
                simple_blob: false,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn disc(size: usize, cx: f64, cy: f64, r: f64, bg: f32, fg: f32) -> Raster {
        Raster::from_fn(size, size, |x, y| {
            if (x as f64 - cx).hypot(y as f64 - cy) <= r {
                fg
            } else {
                bg
            }
        })
    }

    #[test]
    fn flat_raster_has_no_regions() {
        let r = Raster::new(40, 40, 128.0);
        assert!(detect_mser(&r, Polarity::Bright, &MserParams::default()).is_empty());
        assert!(detect_mser(&r, Polarity::Dark, &MserParams::default()).is_empty());
    }

    #[test]
    fn single_disc() {
        let img = disc(120, 60.0, 60.0, 6.0, 128.0, 188.0);
        let truth = (0..120 * 120)
            .filter(|&i| ((i % 120) as f64 - 60.0).hypot((i / 120) as f64 - 60.0) <= 6.0)
            .count();
        let regions = detect_mser(&img, Polarity::Bright, &MserParams::default());
        assert_eq!(regions.len(), 1);
        let a = regions[0].area_px() as f64;
        assert!((a - truth as f64).abs() <= 0.15 * truth as f64);
        assert!(regions[0].is_four_connected());
        let dark = detect_mser(&img.map(|v| 256.0 - v), Polarity::Dark, &MserParams::default());
        assert_eq!(dark.len(), 1);
        assert_eq!(dark[0].area_px(), regions[0].area_px());
    }

    #[test]
    fn nested_squares_align_with_a_square() {
        // Outer 16×16 at +30, inner 6×6 at +60, on a 120×120 background.
        let img = Raster::from_fn(120, 120, |x, y| {
            if (57..63).contains(&x) && (57..63).contains(&y) {
                188.0
            } else if (52..68).contains(&x) && (52..68).contains(&y) {
                158.0
            } else {
                128.0
            }
        });
        let regions = detect_mser(&img, Polarity::Bright, &MserParams::default());
        assert!(!regions.is_empty());
        for r in &regions {
            let b = r.bbox();
            let outer = (b.x - 52.0).abs() <= 1.0 && (b.w - 16.0).abs() <= 1.0;
            let inner = (b.x - 57.0).abs() <= 1.0 && (b.w - 6.0).abs() <= 1.0;
            assert!(outer || inner, "{b:?}");
        }
    }

    #[test]
    fn tree_node_areas_are_consistent() {
        let img = Raster::from_fn(17, 13, |x, y| ((x * 37 + y * 91) % 256) as f32);
        let levels: Vec<u8> = img.data().iter().map(|&v| v as u8).collect();
        let nodes = build_tree(&levels, 17, 13);
        for (i, n) in nodes.iter().enumerate() {
            assert_eq!(collect_pixels(&nodes, i, 17).len(), n.area);
            if n.parent != NONE {
                assert!(nodes[n.parent].level < n.level);
            }
        }
        let roots = nodes.iter().filter(|n| n.parent == NONE).count();
        assert_eq!(roots, 1);
    }
}
