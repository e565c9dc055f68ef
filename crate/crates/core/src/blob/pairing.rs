//! Block–shadow pairing, edge-based shape refinement and the final pairing check.

use serde::{Deserialize, Serialize};

use super::{BlockCandidate, MIN_REGION_AREA};
use crate::raster::{angle_diff_deg, vector_to_azimuth, Raster, SunGeometry};
use crate::region::{split_components, Mask, Point, Polarity, Region};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PairingParams {
    /// Half-width of the cone around the anti-sun azimuth, degrees.
    pub cone_half_angle_deg: f64,
    /// Maximum centroid distance in block equivalent diameters.
    pub distance_factor: f64,
    /// Floor on the maximum centroid distance, pixels.
    pub min_distance_px: f64,
    /// Minimum shadow area as a share of the block area.
    pub min_shadow_area_ratio: f64,
}

impl Default for PairingParams {
    fn default() -> Self {
        Self {
            cone_half_angle_deg: 45.0,
            distance_factor: 1.5,
            min_distance_px: 10.0,
            min_shadow_area_ratio: 0.25,
        }
    }
}

/// Azimuth from block to shadow when the pair is geometrically adequate.
pub fn pairing_valid(block: &Region, shadow: &Region, sun: &SunGeometry, params: &PairingParams) -> Option<(f64, f64)> {
    if block.is_empty() || shadow.is_empty() {
        return None;
    }
    let (bx, by) = block.centroid();
    let (sx, sy) = shadow.centroid();
    let dist = (sx - bx).hypot(sy - by);
    let max_dist = (params.distance_factor * block.equivalent_diameter()).max(params.min_distance_px);
    if dist > max_dist || dist == 0.0 {
        return None;
    }
    if (shadow.area_px() as f64) < params.min_shadow_area_ratio * block.area_px() as f64 {
        return None;
    }
    let angle = vector_to_azimuth(sx - bx, sy - by);
    if angle_diff_deg(angle, sun.anti_sun_azimuth_deg()) > params.cone_half_angle_deg {
        return None;
    }
    Some((angle, dist))
}

/// Globally greedy one-to-one pairing: all adequate (block, shadow) pairs
/// are taken in order of centroid distance, then larger shadow area. Bright
/// regions left without a shadow survive only when both detectors saw them.
pub fn pair_blocks_shadows(
    bright: &[Region],
    dark: &[Region],
    sun: &SunGeometry,
    params: &PairingParams,
) -> Vec<BlockCandidate> {
    let mut pairs: Vec<(f64, usize, usize, usize, f64)> = Vec::new();
    for (i, b) in bright.iter().enumerate() {
        for (j, s) in dark.iter().enumerate() {
            if let Some((angle, dist)) = pairing_valid(b, s, sun, params) {
                pairs.push((dist, s.area_px(), i, j, angle));
            }
        }
    }
    pairs.sort_by(|a, b| {
        a.0.total_cmp(&b.0)
            .then(b.1.cmp(&a.1))
            .then(a.2.cmp(&b.2))
            .then(a.3.cmp(&b.3))
    });
    let mut shadow_of: Vec<Option<(usize, f64)>> = vec![None; bright.len()];
    let mut used = vec![false; dark.len()];
    for &(_, _, i, j, angle) in &pairs {
        if shadow_of[i].is_none() && !used[j] {
            shadow_of[i] = Some((j, angle));
            used[j] = true;
        }
    }
    bright
        .iter()
        .zip(shadow_of)
        .filter_map(|(b, s)| match s {
            Some((j, angle)) => Some(BlockCandidate {
                block: b.clone(),
                shadow: Some(dark[j].clone()),
                pair_angle_deg: Some(angle),
            }),
            None if b.detectors.both() => Some(BlockCandidate::unpaired(b.clone())),
            None => None,
        })
        .collect()
}

fn near_edge(edges: &Mask, p: Point) -> bool {
    (-1..=1).any(|dy| (-1..=1).any(|dx| edges.get_signed(p.x as i64 + dx, p.y as i64 + dy)))
}

/// Remove pixels within 1 px of an edge and keep the piece holding the most
/// extreme remaining intensity (maximum for bright, minimum for dark). When
/// nothing survives, only the edge pixels are removed; when even that empties
/// the region, its extreme pixel alone is kept.
fn cut_region(region: &Region, edges: &Mask, img: &Raster) -> Region {
    let mut kept: Vec<Point> = region
        .pixels()
        .iter()
        .copied()
        .filter(|&p| !near_edge(edges, p))
        .collect();
    if kept.len() == region.area_px() || region.is_empty() {
        return region.clone();
    }
    // Thin shapes: fall back to removing the edge pixels themselves.
    if kept.is_empty() {
        kept = region
            .pixels()
            .iter()
            .copied()
            .filter(|p| !edges.get_signed(p.x as i64, p.y as i64))
            .collect();
    }
    let value = |p: Point| {
        let v = img.get(p.x as usize, p.y as usize);
        match region.polarity {
            Polarity::Bright => v,
            Polarity::Dark => -v,
        }
    };
    let extreme = |px: &[Point]| {
        let mut best = px[0];
        for &p in &px[1..] {
            if value(p) > value(best) {
                best = p;
            }
        }
        best
    };
    // Everything within reach of an edge: the extreme pixel alone remains.
    if kept.is_empty() {
        let best = extreme(region.pixels());
        return Region::new(vec![best], region.polarity).with_detectors(region.detectors);
    }
    let best = extreme(&kept);
    let piece = split_components(&kept)
        .into_iter()
        .find(|c| c.contains(&best))
        .expect("the extreme pixel belongs to a component");
    Region::new(piece, region.polarity).with_detectors(region.detectors)
}

/// Cut the block (and its shadow) along the 1-px-dilated edge map.
pub fn refine_with_edges(candidate: &BlockCandidate, edges: &Mask, img: &Raster) -> BlockCandidate {
    BlockCandidate {
        block: cut_region(&candidate.block, edges, img),
        shadow: candidate.shadow.as_ref().map(|s| cut_region(s, edges, img)),
        pair_angle_deg: candidate.pair_angle_deg,
    }
}

/// Re-check pairing on final shapes. Shadows that vanished or no longer sit
/// in the anti-sun cone are unlinked; blocks left without a shadow need
/// dual-detector support; blocks below the minimum area are dropped.
pub fn finalize_candidates(
    candidates: Vec<BlockCandidate>,
    sun: &SunGeometry,
    params: &PairingParams,
) -> Vec<BlockCandidate> {
    candidates
        .into_iter()
        .filter_map(|mut c| {
            if c.block.area_px() < MIN_REGION_AREA {
                return None;
            }
            let link = c
                .shadow
                .as_ref()
                .filter(|s| s.area_px() >= MIN_REGION_AREA)
                .and_then(|s| pairing_valid(&c.block, s, sun, params));
            match link {
                Some((angle, _)) => c.pair_angle_deg = Some(angle),
                None => {
                    c.shadow = None;
                    c.pair_angle_deg = None;
                }
            }
            if c.shadow.is_none() && !c.block.detectors.both() {
                return None;
            }
            Some(c)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::azimuth_to_vector;
    use crate::region::DetectorFlags;

    fn disc(cx: f64, cy: f64, r: f64, pol: Polarity, flags: DetectorFlags) -> Region {
        let mut px = Vec::new();
        let ri = r.ceil() as i32 + 1;
        for y in (cy as i32 - ri)..=(cy as i32 + ri) {
            for x in (cx as i32 - ri)..=(cx as i32 + ri) {
                if (x as f64 - cx).hypot(y as f64 - cy) <= r {
                    px.push(Point::new(x, y));
                }
            }
        }
        Region::new(px, pol).with_detectors(flags)
    }

    const ONE: DetectorFlags = DetectorFlags {
        mser: true,
        simple_blob: false,
    };
    const BOTH: DetectorFlags = DetectorFlags {
        mser: true,
        simple_blob: true,
    };

    #[test]
    fn shadow_along_anti_sun_is_paired() {
        let sun = SunGeometry::default();
        let b = disc(50.0, 50.0, 4.0, Polarity::Bright, ONE);
        let (ux, uy) = azimuth_to_vector(sun.anti_sun_azimuth_deg());
        let d = b.equivalent_diameter();
        let s = disc(50.0 + ux * d, 50.0 + uy * d, 3.0, Polarity::Dark, ONE);
        let out = pair_blocks_shadows(&[b], &[s], &sun, &PairingParams::default());
        assert_eq!(out.len(), 1);
        assert!(out[0].has_shadow());
        assert!(angle_diff_deg(out[0].pair_angle_deg.unwrap(), 135.0) < 10.0);
    }

    #[test]
    fn sun_side_shadow_is_rejected() {
        let sun = SunGeometry::default();
        let (ux, uy) = azimuth_to_vector(sun.azimuth_deg);
        let s = disc(50.0 + 8.0 * ux, 50.0 + 8.0 * uy, 3.0, Polarity::Dark, ONE);
        let single = disc(50.0, 50.0, 4.0, Polarity::Bright, ONE);
        assert!(pair_blocks_shadows(&[single], std::slice::from_ref(&s), &sun, &PairingParams::default()).is_empty());
        let dual = disc(50.0, 50.0, 4.0, Polarity::Bright, BOTH);
        let out = pair_blocks_shadows(&[dual], &[s], &sun, &PairingParams::default());
        assert_eq!(out.len(), 1);
        assert!(!out[0].has_shadow());
    }

    #[test]
    fn no_dark_regions_single_detector_dropped() {
        let b = disc(20.0, 20.0, 3.0, Polarity::Bright, ONE);
        assert!(pair_blocks_shadows(&[b], &[], &SunGeometry::default(), &PairingParams::default()).is_empty());
    }

    #[test]
    fn one_shadow_serves_one_block() {
        let sun = SunGeometry::default();
        let (ux, uy) = azimuth_to_vector(sun.anti_sun_azimuth_deg());
        let s = disc(50.0 + 6.0 * ux, 50.0 + 6.0 * uy, 3.0, Polarity::Dark, ONE);
        let b1 = disc(50.0, 50.0, 3.0, Polarity::Bright, ONE);
        let b2 = disc(50.0 + 1.0, 50.0 - 4.0, 3.0, Polarity::Bright, ONE);
        let out = pair_blocks_shadows(&[b1, b2], &[s], &sun, &PairingParams::default());
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].block.centroid(), (50.0, 50.0));
    }

    #[test]
    fn edges_cut_two_lobes() {
        // Two 5×5 lobes joined by a bridge; an edge column crosses the bridge.
        let mut px = Vec::new();
        for y in 0..5 {
            for x in 0..5 {
                px.push(Point::new(x, y));
                px.push(Point::new(x + 10, y));
            }
        }
        for x in 5..10 {
            px.push(Point::new(x, 2));
        }
        let r = Region::new(px, Polarity::Bright).with_detectors(BOTH);
        let img = Raster::from_fn(20, 8, |x, _| if x >= 10 { 200.0 } else { 150.0 });
        let mut edges = Mask::new(20, 8);
        edges.set(7, 2, true);
        let c = refine_with_edges(&BlockCandidate::unpaired(r), &edges, &img);
        assert_eq!(c.block.area_px(), 25 + 1);
        assert!(c.block.pixels().iter().all(|p| p.x >= 9));
    }

    #[test]
    fn boundary_edges_keep_interior() {
        let r = Region::new(
            (0..9)
                .flat_map(|y| (0..9).map(move |x| Point::new(x + 5, y + 5)))
                .collect(),
            Polarity::Bright,
        );
        let img = Raster::new(20, 20, 180.0);
        let edges = Mask::from_fn(20, 20, |x, y| {
            let inside = (5..14).contains(&x) && (5..14).contains(&y);
            let inner = (6..13).contains(&x) && (6..13).contains(&y);
            inside && !inner
        });
        let c = refine_with_edges(&BlockCandidate::unpaired(r), &edges, &img);
        // The 5×5 core survives intact.
        assert_eq!(c.block.area_px(), 25);
        for y in 7..12 {
            for x in 7..12 {
                assert!(c.block.contains(Point::new(x, y)));
            }
        }
        let untouched = refine_with_edges(&BlockCandidate::unpaired(c.block.clone()), &Mask::new(20, 20), &img);
        assert_eq!(untouched.block, c.block);
    }

    #[test]
    fn finalize_rules() {
        let sun = SunGeometry::default();
        let p = PairingParams::default();
        let (ux, uy) = azimuth_to_vector(sun.anti_sun_azimuth_deg());
        let b = disc(50.0, 50.0, 4.0, Polarity::Bright, BOTH);
        let s = disc(50.0 + 7.0 * ux, 50.0 + 7.0 * uy, 3.0, Polarity::Dark, ONE);
        let valid = BlockCandidate {
            block: b.clone(),
            shadow: Some(s.clone()),
            pair_angle_deg: Some(135.0),
        };
        let out = finalize_candidates(vec![valid.clone()], &sun, &p);
        assert_eq!(out[0].block, valid.block);
        assert_eq!(out[0].shadow, valid.shadow);

        let vanished = BlockCandidate {
            shadow: Some(Region::new(Vec::new(), Polarity::Dark)),
            ..valid.clone()
        };
        let out = finalize_candidates(vec![vanished], &sun, &p);
        assert_eq!(out.len(), 1);
        assert!(!out[0].has_shadow());

        // Rotate the shadow 60° off the anti-sun direction.
        let off = crate::raster::azimuth_to_vector(sun.anti_sun_azimuth_deg() + 60.0);
        let drift = BlockCandidate {
            block: b.with_detectors(ONE),
            shadow: Some(disc(50.0 + 7.0 * off.0, 50.0 + 7.0 * off.1, 3.0, Polarity::Dark, ONE)),
            pair_angle_deg: Some(195.0),
        };
        assert!(finalize_candidates(vec![drift.clone()], &sun, &p).is_empty());
        let dual = BlockCandidate {
            block: drift.block.clone().with_detectors(BOTH),
            ..drift
        };
        let out = finalize_candidates(vec![dual], &sun, &p);
        assert_eq!(out.len(), 1);
        assert!(!out[0].has_shadow());
    }
}
