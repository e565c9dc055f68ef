//! Independent oracles and fixtures shared by the integration tests and the
//! acceptance harness. Nothing here calls the library code it checks.

#![allow(dead_code)]

use std::collections::HashSet;
use std::f64::consts::PI;

use blockfall::blob::{
    canny_edges, canny_magnitude, compute_thresholds, pair_blocks_shadows, threshold_bands, watershed_refine,
    BlockCandidate, CannyParams, PairingParams,
};
use blockfall::eval::{compute_rates, match_detections, BlockRecord, MatchParams};
use blockfall::fusion::{acceptance_rule, fuse};
use blockfall::hog::HogLayout;
use blockfall::raster::{Raster, SunGeometry, Translation};
use blockfall::region::{connected_components, BoundingBox, DetectorFlags, Mask, Point, Polarity, Region};
use blockfall::svm::{DetectionBox, MapSource};
use blockfall::synthgen::{BackgroundMode, SceneSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Check = std::result::Result<(), String>;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// ---------------------------------------------------------------- metrics

/// Region, class, total actual, total predicted, true positives, TPR, FDR.
pub type TableRow = (
    &'static str,
    &'static str,
    usize,
    usize,
    usize,
    &'static str,
    &'static str,
);

pub const TABLE1: [TableRow; 14] = [
    ("a", "all", 100, 61, 59, "59.00", "3.28"),
    ("a", "> 0.5 m²", 59, 50, 46, "77.97", "8.00"),
    ("b", "all", 80, 48, 47, "58.75", "2.08"),
    ("b", "> 0.5 m²", 48, 35, 34, "70.83", "2.86"),
    ("c", "all", 71, 73, 63, "88.73", "13.70"),
    ("c", "> 0.5 m²", 56, 56, 49, "87.50", "12.50"),
    ("d", "all", 180, 122, 101, "56.11", "17.21"),
    ("d", "> 0.5 m²", 94, 79, 71, "75.53", "10.13"),
    ("e", "all", 24, 21, 15, "62.50", "28.57"),
    ("e", "> 0.5 m²", 11, 14, 9, "81.82", "35.71"),
    ("f", "all", 140, 82, 79, "56.43", "3.66"),
    ("f", "> 0.5 m²", 105, 72, 71, "67.62", "1.39"),
    ("total", "all", 595, 407, 364, "61.18", "10.57"),
    ("total", "> 0.5 m²", 373, 306, 280, "75.07", "8.50"),
];

fn square_record(id: usize, x: f64, y: f64) -> BlockRecord {
    BlockRecord::from_box(id, BoundingBox::new(x, y, 4.0, 4.0), 16.0)
}

/// Realise one (actual, predicted, TP) triple as boxes on a grid: the first
/// `tp` predictions sit on truth boxes, the rest far away from any truth.
pub fn table_row_scene(actual: usize, predicted: usize, tp: usize) -> (Vec<BlockRecord>, Vec<BlockRecord>) {
    let truth: Vec<BlockRecord> = (0..actual)
        .map(|i| square_record(i, (i % 40) as f64 * 10.0, (i / 40) as f64 * 10.0))
        .collect();
    let pred: Vec<BlockRecord> = (0..predicted)
        .map(|i| {
            if i < tp {
                square_record(i, truth[i].bbox.x, truth[i].bbox.y)
            } else {
                square_record(i, (i % 40) as f64 * 10.0, 5000.0 + (i / 40) as f64 * 10.0)
            }
        })
        .collect();
    (truth, pred)
}

/// Every Table 1 row through matching and rate computation; returns one
/// mismatch message per failing row.
pub fn table1_failures() -> Vec<String> {
    let params = MatchParams::default();
    let mut bad = Vec::new();
    for (region, class, actual, predicted, tp, tpr, fdr) in TABLE1 {
        let (truth, pred) = table_row_scene(actual, predicted, tp);
        let matches = match_detections(&truth, &pred, &params);
        let report = compute_rates(&matches, &truth, &pred, 0.25, &params);
        let all = &report.classes[0];
        let got = (
            all.total_actual,
            all.total_predicted,
            all.true_positives,
            format!("{:.2}", all.tpr),
            format!("{:.2}", all.fdr),
        );
        let want = (actual, predicted, tp, tpr.to_string(), fdr.to_string());
        if got != want {
            bad.push(format!("region {region} {class}: got {got:?}, want {want:?}"));
        }
    }
    bad
}

// ---------------------------------------------------------------- HOG

/// Window with smooth structure, edges and noise; integer grey levels.
pub fn random_window(seed: u64, w: usize, h: usize) -> Raster {
    let mut r = rng(seed);
    let (fx, fy, ph): (f64, f64, f64) = (r.gen_range(0.02..0.3), r.gen_range(0.02..0.3), r.gen_range(0.0..6.3));
    let (cx, cy, rad): (f64, f64, f64) = (
        r.gen_range(0.0..w as f64),
        r.gen_range(0.0..h as f64),
        r.gen_range(4.0..20.0),
    );
    let amp: f64 = r.gen_range(10.0..80.0);
    let data: Vec<f32> = (0..w * h)
        .map(|i| {
            let (x, y) = ((i % w) as f64, (i / w) as f64);
            let mut v = 120.0 + amp * (fx * x + fy * y + ph).sin();
            if (x - cx).hypot(y - cy) < rad {
                v += 60.0;
            }
            v += r.gen_range(-8.0..8.0);
            v.clamp(0.0, 255.0).round() as f32
        })
        .collect();
    Raster::from_vec(w, h, data).unwrap()
}

/// Direct per-block HOG: centred differences with replicated borders,
/// unsigned orientation voted linearly into the two nearest bins (circular),
/// bilinear spatial votes toward cell centres (clamped inside the block),
/// L2-Hys normalisation per block; blocks in row-major order.
pub fn hog_brute(win: &Raster, l: &HogLayout) -> Vec<f64> {
    const EPS: f64 = 1e-6;
    const CLIP: f64 = 0.2;
    let (w, h) = win.dims();
    let px = |x: i64, y: i64| win.get(x.clamp(0, w as i64 - 1) as usize, y.clamp(0, h as i64 - 1) as usize) as f64;
    let bs = l.cell_size * l.block_cells;
    let nc = l.block_cells;
    let cs = l.cell_size as f64;
    let bins = l.bins;
    let tent = |u: usize, c: usize| {
        let pos = ((u as f64 + 0.5) / cs - 0.5).clamp(0.0, (nc - 1) as f64);
        (1.0 - (pos - c as f64).abs()).max(0.0)
    };
    let mut out = Vec::new();
    for by in 0..(h - bs) / l.block_stride + 1 {
        for bx in 0..(w - bs) / l.block_stride + 1 {
            let mut hist = vec![0.0f64; nc * nc * bins];
            for v in 0..bs {
                for u in 0..bs {
                    let x = (bx * l.block_stride + u) as i64;
                    let y = (by * l.block_stride + v) as i64;
                    let gx = px(x + 1, y) - px(x - 1, y);
                    let gy = px(x, y + 1) - px(x, y - 1);
                    let m = gx.hypot(gy);
                    if m == 0.0 {
                        continue;
                    }
                    let ang = gy.atan2(gx).to_degrees().rem_euclid(180.0);
                    let pos = ang / (180.0 / bins as f64);
                    for k in 0..bins {
                        let d = (pos - k as f64).abs();
                        let d = d.min(bins as f64 - d);
                        let wo = (1.0 - d).max(0.0);
                        if wo == 0.0 {
                            continue;
                        }
                        for cy in 0..nc {
                            for cx in 0..nc {
                                hist[(cy * nc + cx) * bins + k] += m * wo * tent(u, cx) * tent(v, cy);
                            }
                        }
                    }
                }
            }
            let n = (hist.iter().map(|a| a * a).sum::<f64>() + EPS * EPS).sqrt();
            hist.iter_mut().for_each(|a| *a = (*a / n).min(CLIP));
            let n = (hist.iter().map(|a| a * a).sum::<f64>() + EPS * EPS).sqrt();
            hist.iter_mut().for_each(|a| *a /= n);
            out.extend(hist);
        }
    }
    out
}

pub fn max_abs_diff(a: &[f32], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (*x as f64 - y).abs()).fold(0.0, f64::max)
}

// ---------------------------------------------------------------- SVR

pub struct SvrProblem {
    pub x: Vec<Vec<f32>>,
    pub y: Vec<f64>,
}

/// 50 samples in 20 dimensions with ±1 targets from a noisy linear rule.
pub fn svr_problem(seed: u64) -> SvrProblem {
    let mut r = rng(seed);
    let dim = 20;
    let truth: Vec<f64> = (0..dim).map(|_| r.gen_range(-1.0..1.0)).collect();
    let mut x = Vec::new();
    let mut y = Vec::new();
    for _ in 0..50 {
        let row: Vec<f32> = (0..dim).map(|_| r.gen_range(-1.0f32..1.0)).collect();
        let s: f64 = row.iter().zip(&truth).map(|(a, b)| *a as f64 * b).sum::<f64>() + r.gen_range(-0.5..0.5);
        y.push(if s >= 0.0 { 1.0 } else { -1.0 });
        x.push(row);
    }
    SvrProblem { x, y }
}

pub fn svr_objective(p: &SvrProblem, w: &[f64], b: f64, eps: f64, c: f64) -> f64 {
    let reg: f64 = 0.5 * w.iter().map(|v| v * v).sum::<f64>();
    let loss: f64 =
        p.x.iter()
            .zip(&p.y)
            .map(|(xi, yi)| {
                let f: f64 = xi.iter().zip(w).map(|(a, b)| *a as f64 * b).sum::<f64>() + b;
                ((yi - f).abs() - eps).max(0.0)
            })
            .sum();
    reg + c * loss
}

/// Exact best bias for fixed weights: the loss is piecewise linear in `b`
/// with breakpoints at `r_i ± ε`, so one of them is optimal.
fn best_bias(p: &SvrProblem, w: &[f64], eps: f64, c: f64) -> f64 {
    let mut best = (f64::INFINITY, 0.0);
    for (xi, yi) in p.x.iter().zip(&p.y) {
        let r = yi - xi.iter().zip(w).map(|(a, b)| *a as f64 * b).sum::<f64>();
        for b in [r - eps, r + eps] {
            let v = svr_objective(p, w, b, eps, c);
            if v < best.0 {
                best = (v, b);
            }
        }
    }
    best.1
}

/// Long-run subgradient descent on the primal with step 1/t on the weights
/// (the objective is 1-strongly convex in them) and exact bias refits.
/// Returns the best objective seen.
pub fn subgradient_reference(p: &SvrProblem, eps: f64, c: f64, iters: usize) -> f64 {
    let dim = p.x[0].len();
    let mut w = vec![0.0f64; dim];
    let mut b = best_bias(p, &w, eps, c);
    let mut best = svr_objective(p, &w, b, eps, c);
    let mut avg = vec![0.0f64; dim];
    for t in 1..=iters {
        let mut g = w.clone();
        for (xi, yi) in p.x.iter().zip(&p.y) {
            let f: f64 = xi.iter().zip(&w).map(|(a, b)| *a as f64 * b).sum::<f64>() + b;
            let r = yi - f;
            let s = if r > eps {
                -c
            } else if r < -eps {
                c
            } else {
                0.0
            };
            if s != 0.0 {
                for (gj, xj) in g.iter_mut().zip(xi) {
                    *gj += s * *xj as f64;
                }
            }
        }
        let step = 1.0 / t as f64;
        for (wj, gj) in w.iter_mut().zip(&g) {
            *wj -= step * gj;
        }
        for (aj, wj) in avg.iter_mut().zip(&w) {
            *aj += (wj - *aj) / t as f64;
        }
        if t % 50 == 0 || t == iters {
            b = best_bias(p, &w, eps, c);
            best = best.min(svr_objective(p, &w, b, eps, c));
            let ba = best_bias(p, &avg, eps, c);
            best = best.min(svr_objective(p, &avg, ba, eps, c));
        }
    }
    best
}

// ---------------------------------------------------------------- ECC

/// Analytic texture: a few oriented sinusoids plus Gaussian bumps.
pub struct Texture {
    waves: Vec<(f64, f64, f64, f64)>,
    bumps: Vec<(f64, f64, f64, f64)>,
}

impl Texture {
    pub fn new(seed: u64, w: usize, h: usize) -> Self {
        let mut r = rng(seed);
        let waves = (0..5)
            .map(|_| {
                let period = r.gen_range(12.0..40.0);
                let theta: f64 = r.gen_range(0.0..PI);
                let k = 2.0 * PI / period;
                (
                    k * theta.cos(),
                    k * theta.sin(),
                    r.gen_range(0.0..2.0 * PI),
                    r.gen_range(8.0..20.0),
                )
            })
            .collect();
        let bumps = (0..8)
            .map(|_| {
                (
                    r.gen_range(0.0..w as f64),
                    r.gen_range(0.0..h as f64),
                    r.gen_range(3.0..9.0),
                    r.gen_range(-40.0..40.0),
                )
            })
            .collect();
        Self { waves, bumps }
    }

    pub fn eval(&self, x: f64, y: f64) -> f64 {
        let mut v = 128.0;
        for &(kx, ky, ph, a) in &self.waves {
            v += a * (kx * x + ky * y + ph).sin();
        }
        for &(cx, cy, s, a) in &self.bumps {
            v += a * (-((x - cx).powi(2) + (y - cy).powi(2)) / (2.0 * s * s)).exp();
        }
        v
    }

    /// Raster of `f(x + s)`.
    pub fn render(&self, w: usize, h: usize, s: Translation) -> Raster {
        Raster::from_fn(w, h, |x, y| self.eval(x as f64 + s.dx, y as f64 + s.dy) as f32)
    }
}

/// Random shift with magnitude at most 5 px.
pub fn random_shift(seed: u64) -> Translation {
    let mut r = rng(seed);
    let mag: f64 = r.gen_range(0.0..5.0);
    let a: f64 = r.gen_range(0.0..2.0 * PI);
    Translation::new(mag * a.cos(), mag * a.sin())
}

// ---------------------------------------------------------------- blob chain

/// Integer-valued raster of smooth bumps on noise.
pub fn random_field(r: &mut ChaCha8Rng, w: usize, h: usize) -> Raster {
    let bumps: Vec<(f64, f64, f64, f64)> = (0..r.gen_range(1..12))
        .map(|_| {
            (
                r.gen_range(0.0..w as f64),
                r.gen_range(0.0..h as f64),
                r.gen_range(1.5..8.0),
                r.gen_range(-90.0..90.0),
            )
        })
        .collect();
    let noise: f64 = r.gen_range(0.0..12.0);
    Raster::from_fn(w, h, |x, y| {
        let mut v = 128.0;
        for &(cx, cy, s, a) in &bumps {
            v += a * (-((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)) / (2.0 * s * s)).exp();
        }
        v += noise * (r.gen::<f64>() - 0.5);
        v.clamp(0.0, 255.0).round() as f32
    })
}

pub fn check_thresholds(seed: u64) -> Check {
    let mut r = rng(seed);
    let (w, h) = (r.gen_range(8..60), r.gen_range(8..60));
    let img = random_field(&mut r, w, h);
    let n = (w * h) as f64;
    let mean = img.data().iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = img.data().iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
    let sigma = var.sqrt();
    let bands = compute_thresholds(&img);
    for (got, raw, name) in [
        (bands.dark_max, mean - 0.5 * sigma, "dark"),
        (bands.bright_min, mean + 0.5 * sigma, "bright"),
    ] {
        let near_half = (raw - raw.floor() - 0.5).abs() < 1e-9;
        let ok = got as f64 == raw.round() || (near_half && (got as f64 - raw).abs() <= 0.5 + 1e-9);
        if !ok {
            return Err(format!(
                "seed {seed}: {name} band {got} but mean ± σ/2 rounds to {}",
                raw.round()
            ));
        }
    }
    if sigma == 0.0 {
        return Ok(());
    }
    let (bright, dark) = threshold_bands(&img, &bands);
    for y in 0..h {
        for x in 0..w {
            let v = img.get(x, y);
            if bright.get(x, y) != (v > bands.bright_min) || dark.get(x, y) != (v < bands.dark_max) {
                return Err(format!("seed {seed}: band membership wrong at ({x},{y})"));
            }
        }
    }
    Ok(())
}

fn eight_components(mask: &Mask) -> Vec<Vec<(usize, usize)>> {
    let (w, h) = (mask.width(), mask.height());
    let mut seen = vec![false; w * h];
    let mut out = Vec::new();
    for start in 0..w * h {
        if seen[start] || !mask.get(start % w, start / w) {
            continue;
        }
        let mut comp = Vec::new();
        let mut stack = vec![start];
        seen[start] = true;
        while let Some(i) = stack.pop() {
            let (x, y) = (i % w, i / w);
            comp.push((x, y));
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                    if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                        continue;
                    }
                    let j = ny as usize * w + nx as usize;
                    if !seen[j] && mask.get(nx as usize, ny as usize) {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
        }
        out.push(comp);
    }
    out
}

fn subset(a: &Mask, b: &Mask) -> bool {
    a.data().iter().zip(b.data()).all(|(&x, &y)| !x || y)
}

pub fn check_canny(seed: u64) -> Check {
    let mut r = rng(seed);
    let (w, h) = (r.gen_range(12..64), r.gen_range(12..64));
    let img = random_field(&mut r, w, h);
    let weak: f32 = r.gen_range(5.0..60.0);
    let strong: f32 = weak + r.gen_range(0.0..80.0);
    let sigma: f64 = r.gen_range(0.5..2.0);
    let p = CannyParams { strong, weak, sigma };
    let edges = canny_edges(&img, &p).map_err(|e| e.to_string())?;
    let mag = canny_magnitude(&img, sigma);
    for y in 0..h {
        for x in 0..w {
            if edges.get(x, y) && mag[y * w + x] < weak {
                return Err(format!("seed {seed}: edge below weak threshold at ({x},{y})"));
            }
        }
    }
    for comp in eight_components(&edges) {
        if !comp.iter().any(|&(x, y)| mag[y * w + x] >= strong) {
            return Err(format!(
                "seed {seed}: edge component of {} px without a strong pixel",
                comp.len()
            ));
        }
    }
    let lower = CannyParams { weak: weak * 0.7, ..p };
    let no_hysteresis = CannyParams { weak: strong, ..p };
    let e_lower = canny_edges(&img, &lower).map_err(|e| e.to_string())?;
    let e_strong = canny_edges(&img, &no_hysteresis).map_err(|e| e.to_string())?;
    if !subset(&edges, &e_lower) {
        return Err(format!("seed {seed}: lowering the weak threshold removed edges"));
    }
    if !subset(&e_strong, &edges) {
        return Err(format!(
            "seed {seed}: strong-only edges not contained in hysteresis edges"
        ));
    }
    Ok(())
}

/// Up to `n` pixels grown breadth-first (4-connected) from `start` inside `allowed`.
fn grow(start: Point, allowed: &HashSet<Point>, n: usize) -> Vec<Point> {
    let mut out = vec![start];
    let mut seen: HashSet<Point> = [start].into_iter().collect();
    let mut i = 0;
    while i < out.len() && out.len() < n {
        let p = out[i];
        for (dx, dy) in [(1, 0), (-1, 0), (0, 1), (0, -1)] {
            let q = Point::new(p.x + dx, p.y + dy);
            if allowed.contains(&q) && seen.insert(q) && out.len() < n {
                out.push(q);
            }
        }
        i += 1;
    }
    out
}

fn four_connected(px: &[Point]) -> bool {
    if px.is_empty() {
        return true;
    }
    let set: HashSet<Point> = px.iter().copied().collect();
    grow(px[0], &set, usize::MAX).len() == px.len()
}

pub fn check_watershed(seed: u64) -> Check {
    let mut r = rng(seed);
    let (w, h) = (r.gen_range(16..64), r.gen_range(16..64));
    let after = random_field(&mut r, w, h);
    let level = r.gen_range(110.0..150.0) as f32;
    let field = random_field(&mut r, w, h);
    let mask = Mask::from_fn(w, h, |x, y| field.get(x, y) > level || after.get(x, y) > level + 20.0);
    let comps = connected_components(&mask);
    let mut markers: Vec<Vec<Point>> = Vec::new();
    for c in &comps {
        if r.gen_bool(0.7) {
            let allowed: HashSet<Point> = c.iter().copied().collect();
            let start = c[r.gen_range(0..c.len())];
            markers.push(grow(start, &allowed, r.gen_range(1..=c.len().min(30))));
        }
    }
    let mut candidates = Vec::new();
    let mut i = 0;
    while i < markers.len() {
        let block = Region::new(markers[i].clone(), Polarity::Bright);
        let shadow = if i + 1 < markers.len() && r.gen_bool(0.5) {
            i += 1;
            Some(Region::new(markers[i].clone(), Polarity::Dark))
        } else {
            None
        };
        candidates.push(BlockCandidate {
            block,
            shadow,
            pair_angle_deg: None,
        });
        i += 1;
    }
    let out = watershed_refine(&after, &mask, &candidates);
    if out.len() != candidates.len() {
        return Err(format!(
            "seed {seed}: {} candidates in, {} out",
            candidates.len(),
            out.len()
        ));
    }
    let mut owner: HashSet<Point> = HashSet::new();
    for (c_in, c_out) in candidates.iter().zip(&out) {
        let pairs = [
            (Some(&c_in.block), Some(&c_out.block)),
            (c_in.shadow.as_ref(), c_out.shadow.as_ref()),
        ];
        for (m, basin) in pairs {
            let (Some(m), Some(basin)) = (m, basin) else {
                if m.is_some() {
                    return Err(format!("seed {seed}: shadow lost its basin"));
                }
                continue;
            };
            if !m.pixels().iter().all(|p| basin.contains(*p)) {
                return Err(format!("seed {seed}: basin does not contain its marker"));
            }
            if !basin.pixels().iter().all(|p| mask.get(p.x as usize, p.y as usize)) {
                return Err(format!("seed {seed}: basin leaves the threshold mask"));
            }
            if !four_connected(basin.pixels()) {
                return Err(format!("seed {seed}: basin is not 4-connected"));
            }
            for p in basin.pixels() {
                if !owner.insert(*p) {
                    return Err(format!("seed {seed}: basins overlap at ({}, {})", p.x, p.y));
                }
            }
        }
    }
    Ok(())
}

fn disc_region(cx: f64, cy: f64, rad: f64, pol: Polarity, flags: DetectorFlags) -> Region {
    let mut px = Vec::new();
    let r = rad.ceil() as i32 + 1;
    for y in (cy as i32 - r)..=(cy as i32 + r) {
        for x in (cx as i32 - r)..=(cx as i32 + r) {
            if (x as f64 - cx).hypot(y as f64 - cy) <= rad {
                px.push(Point::new(x, y));
            }
        }
    }
    Region::new(px, pol).with_detectors(flags)
}

fn centroid(r: &Region) -> (f64, f64) {
    let n = r.pixels().len() as f64;
    let sx: f64 = r.pixels().iter().map(|p| p.x as f64).sum();
    let sy: f64 = r.pixels().iter().map(|p| p.y as f64).sum();
    (sx / n, sy / n)
}

/// Cone, distance and area-ratio rules evaluated from first principles.
fn pair_ok(block: &Region, shadow: &Region, sun: &SunGeometry, p: &PairingParams) -> bool {
    let (bx, by) = centroid(block);
    let (sx, sy) = centroid(shadow);
    let (dx, dy) = (sx - bx, sy - by);
    let dist = dx.hypot(dy);
    let diam = (4.0 * block.pixels().len() as f64 / PI).sqrt();
    if dist == 0.0 || dist > (p.distance_factor * diam).max(p.min_distance_px) {
        return false;
    }
    if (shadow.pixels().len() as f64) < p.min_shadow_area_ratio * block.pixels().len() as f64 {
        return false;
    }
    let az = dx.atan2(-dy).to_degrees().rem_euclid(360.0);
    let anti = (sun.azimuth_deg + 180.0).rem_euclid(360.0);
    let d = (az - anti).abs() % 360.0;
    d.min(360.0 - d) <= p.cone_half_angle_deg
}

pub fn check_pairing(seed: u64) -> Check {
    let mut r = rng(seed);
    let sun = SunGeometry::new(r.gen_range(0.0..360.0), r.gen_range(30.0..80.0)).unwrap();
    let p = PairingParams::default();
    let flags = |r: &mut ChaCha8Rng| DetectorFlags {
        mser: r.gen_bool(0.7),
        simple_blob: r.gen_bool(0.7),
    };
    let bright: Vec<Region> = (0..r.gen_range(0..12))
        .map(|_| {
            let f = flags(&mut r);
            disc_region(
                r.gen_range(0.0..80.0),
                r.gen_range(0.0..80.0),
                r.gen_range(1.0..5.0),
                Polarity::Bright,
                f,
            )
        })
        .collect();
    let dark: Vec<Region> = (0..r.gen_range(0..14))
        .map(|_| {
            let f = flags(&mut r);
            disc_region(
                r.gen_range(0.0..80.0),
                r.gen_range(0.0..80.0),
                r.gen_range(0.8..4.0),
                Polarity::Dark,
                f,
            )
        })
        .collect();
    let out = pair_blocks_shadows(&bright, &dark, &sun, &p);
    let index_of = |reg: &Region, pool: &[Region]| pool.iter().position(|q| q == reg);
    let mut used_dark = vec![false; dark.len()];
    let mut kept_bright = vec![false; bright.len()];
    for c in &out {
        let bi = index_of(&c.block, &bright).ok_or(format!("seed {seed}: unknown block"))?;
        if kept_bright[bi] {
            return Err(format!("seed {seed}: block {bi} emitted twice"));
        }
        kept_bright[bi] = true;
        match &c.shadow {
            Some(s) => {
                let si = index_of(s, &dark).ok_or(format!("seed {seed}: unknown shadow"))?;
                if used_dark[si] {
                    return Err(format!("seed {seed}: shadow {si} paired with two blocks"));
                }
                used_dark[si] = true;
                if !pair_ok(&c.block, s, &sun, &p) {
                    return Err(format!("seed {seed}: block {bi} paired with an inadequate shadow {si}"));
                }
            }
            None if !c.block.detectors.both() => {
                return Err(format!(
                    "seed {seed}: shadow-less block {bi} lacks dual-detector support"
                ));
            }
            None => {}
        }
    }
    for (bi, b) in bright.iter().enumerate() {
        let paired = out.iter().any(|c| &c.block == b && c.shadow.is_some());
        if paired {
            continue;
        }
        if !kept_bright[bi] && b.detectors.both() {
            return Err(format!("seed {seed}: dual-detector block {bi} dropped"));
        }
        if let Some(si) = (0..dark.len()).find(|&si| !used_dark[si] && pair_ok(b, &dark[si], &sun, &p)) {
            return Err(format!(
                "seed {seed}: block {bi} left unpaired although shadow {si} is free and adequate"
            ));
        }
    }
    Ok(())
}

// ---------------------------------------------------------------- fusion

/// The published rule, spelled out case by case.
pub fn expected_acceptance(has_shadow: bool, after: bool, diff: bool, before: bool) -> bool {
    if before {
        return false;
    }
    if has_shadow {
        after || diff
    } else {
        after && diff
    }
}

/// All 16 combinations through both the rule and the box-level fusion.
pub fn fusion_failures() -> Vec<String> {
    let mut bad = Vec::new();
    let flags = DetectorFlags {
        mser: true,
        simple_blob: true,
    };
    for bits in 0..16u8 {
        let (has_shadow, after, diff, before) = (bits & 8 != 0, bits & 4 != 0, bits & 2 != 0, bits & 1 != 0);
        let want = expected_acceptance(has_shadow, after, diff, before);
        if acceptance_rule(has_shadow, after, diff, before) != want {
            bad.push(format!(
                "rule shadow={has_shadow} after={after} diff={diff} before={before}"
            ));
        }
        let block = disc_region(30.0, 30.0, 3.0, Polarity::Bright, flags);
        let shadow = has_shadow.then(|| disc_region(34.0, 34.0, 2.0, Polarity::Dark, flags));
        let cand = BlockCandidate {
            block,
            shadow,
            pair_angle_deg: None,
        };
        let covering = |on: bool, source: MapSource| -> Vec<DetectionBox> {
            let far = DetectionBox {
                x: 100.0,
                y: 100.0,
                w: 8.0,
                h: 10.0,
                score: 1.0,
                source,
            };
            let near = DetectionBox {
                x: 26.0,
                y: 25.0,
                w: 8.0,
                h: 10.0,
                score: 1.0,
                source,
            };
            if on {
                vec![far, near]
            } else {
                vec![far]
            }
        };
        let fused = fuse(
            &[cand],
            &covering(before, MapSource::Before),
            &covering(after, MapSource::After),
            &covering(diff, MapSource::Difference),
            0.25,
        );
        if (fused.len() == 1) != want {
            bad.push(format!(
                "fuse shadow={has_shadow} after={after} diff={diff} before={before}"
            ));
        }
    }
    bad
}

// ---------------------------------------------------------------- scenes

/// Benchmark scene: 1000×1000, 30-150 blocks of 8-200 px, noise σ 3, a
/// global shift of up to 2 px, 20 static boulders, background cycling with
/// the seed.
pub fn benchmark_spec(seed: u64) -> SceneSpec {
    let mut r = rng(seed ^ 0x5eed);
    let modes = [
        BackgroundMode::Textured,
        BackgroundMode::Layered,
        BackgroundMode::Changing,
        BackgroundMode::Flat,
    ];
    SceneSpec {
        width: 1000,
        height: 1000,
        seed,
        n_blocks: r.gen_range(30..=150),
        block_area_range_px: (8.0, 200.0),
        background: modes[(seed % 4) as usize],
        noise_sigma: 3.0,
        global_shift_px: Translation::new(r.gen_range(-2.0..2.0), r.gen_range(-2.0..2.0)),
        n_static_blocks: 20,
        ..Default::default()
    }
}

/// Small scene for fast end-to-end tests.
pub fn small_spec(seed: u64, background: BackgroundMode) -> SceneSpec {
    SceneSpec {
        width: 400,
        height: 400,
        seed,
        n_blocks: 30,
        background,
        noise_sigma: 2.0,
        global_shift_px: Translation::new(0.8, -0.6),
        n_static_blocks: 4,
        ..Default::default()
    }
}
