//! Marker-based watershed (priority flooding) of candidate shapes on the
//! gradient of the 'after' image.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use super::BlockCandidate;
use crate::raster::Raster;
use crate::region::{split_components, Mask, Point, Region};

const UNKNOWN: u32 = 0;
const BACKGROUND: u32 = 1;

/// Central-difference gradient magnitude with clamp-to-edge borders.
pub fn gradient_magnitude(img: &Raster) -> Vec<f32> {
    let (w, h) = img.dims();
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let (xi, yi) = (x as isize, y as isize);
            let gx = 0.5 * (img.get_clamped(xi + 1, yi) - img.get_clamped(xi - 1, yi));
            let gy = 0.5 * (img.get_clamped(xi, yi + 1) - img.get_clamped(xi, yi - 1));
            out.push(gx.hypot(gy));
        }
    }
    out
}

/// Flood `labels` in place: pixels leave a priority queue in ascending order
/// of `max(gradient, flood level)` (FIFO among equals) and hand their label
/// to every `UNKNOWN` neighbour. Labels above `BACKGROUND` are objects.
pub(crate) fn flood(labels: &mut [u32], grad: &[f32], w: usize, h: usize) {
    let mut heap: BinaryHeap<Reverse<(u32, u64, usize)>> = BinaryHeap::new();
    let mut counter = 0u64;
    let neighbours = |i: usize| {
        let (x, y) = (i % w, i / w);
        let mut n = [usize::MAX; 4];
        if x > 0 {
            n[0] = i - 1;
        }
        if x + 1 < w {
            n[1] = i + 1;
        }
        if y > 0 {
            n[2] = i - w;
        }
        if y + 1 < h {
            n[3] = i + w;
        }
        n
    };
    // Non-negative floats order like their bit patterns.
    let key = |v: f32| v.max(0.0).to_bits();
    // Seeds enter at their own gradient; object seeds go first so that they
    // win ties on a ridge.
    let objects = (0..w * h).filter(|&i| labels[i] > BACKGROUND);
    let background = (0..w * h).filter(|&i| labels[i] == BACKGROUND);
    for i in objects.chain(background) {
        heap.push(Reverse((key(grad[i]), counter, i)));
        counter += 1;
    }
    while let Some(Reverse((level, _, i))) = heap.pop() {
        for j in neighbours(i) {
            if j != usize::MAX && labels[j] == UNKNOWN {
                labels[j] = labels[i];
                heap.push(Reverse((key(grad[j]).max(level), counter, j)));
                counter += 1;
            }
        }
    }
}

fn basin(labels: &[u32], label: u32, w: usize, template: &Region) -> Region {
    let pixels: Vec<Point> = labels
        .iter()
        .enumerate()
        .filter(|(_, &l)| l == label)
        .map(|(i, _)| Point::new((i % w) as i32, (i / w) as i32))
        .collect();
    // Keep one 4-connected piece: the largest (first in raster order on ties).
    let piece = split_components(&pixels)
        .into_iter()
        .fold(Vec::new(), |best, c| if c.len() > best.len() { c } else { best });
    Region::new(piece, template.polarity).with_detectors(template.detectors)
}

/// Replace every candidate's block and shadow by its watershed basin.
///
/// Pixels in exactly one of the threshold mask and the union of candidate
/// shapes form the zone to be flooded; shape pixels inside the threshold
/// mask seed their candidate's labels; all remaining pixels seed a single
/// background label.
pub fn watershed_refine(after: &Raster, threshold_mask: &Mask, refined: &[BlockCandidate]) -> Vec<BlockCandidate> {
    let (w, h) = after.dims();
    let mut shapes = Mask::new(w, h);
    for c in refined {
        shapes.set_pixels(c.block.pixels());
        if let Some(s) = &c.shadow {
            shapes.set_pixels(s.pixels());
        }
    }
    let unknown = threshold_mask.xor(&shapes);
    let mut labels: Vec<u32> = (0..w * h)
        .map(|i| {
            let (x, y) = (i % w, i / w);
            if unknown.get(x, y) || shapes.get(x, y) {
                UNKNOWN
            } else {
                BACKGROUND
            }
        })
        .collect();
    let seed = |r: &Region, label: u32, labels: &mut [u32]| {
        for p in r.pixels() {
            if p.x < 0 || p.y < 0 || p.x as usize >= w || p.y as usize >= h {
                continue;
            }
            let (x, y) = (p.x as usize, p.y as usize);
            let i = y * w + x;
            if threshold_mask.get(x, y) && labels[i] == UNKNOWN {
                labels[i] = label;
            }
        }
    };
    for (k, c) in refined.iter().enumerate() {
        seed(&c.block, 2 + 2 * k as u32, &mut labels);
        if let Some(s) = &c.shadow {
            seed(s, 3 + 2 * k as u32, &mut labels);
        }
    }
    let grad = gradient_magnitude(after);
    flood(&mut labels, &grad, w, h);

    refined
        .iter()
        .enumerate()
        .map(|(k, c)| BlockCandidate {
            block: basin(&labels, 2 + 2 * k as u32, w, &c.block),
            shadow: c.shadow.as_ref().map(|s| basin(&labels, 3 + 2 * k as u32, w, s)),
            pair_angle_deg: c.pair_angle_deg,
        })
        .collect()
}
