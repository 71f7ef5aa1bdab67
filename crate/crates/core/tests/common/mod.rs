//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use ilora::maskgeom::{BinaryMask, Circle};
use ilora::numkit::{Matrix, Rng};

/// Squared distance to the nearest background pixel by exhaustive search,
/// with everything outside the image treated as background.
pub fn brute_edt_sq(mask: &BinaryMask) -> Vec<u64> {
    let (w, h) = (mask.width(), mask.height());
    let background: Vec<(i64, i64)> = (0..h)
        .flat_map(|y| (0..w).map(move |x| (x, y)))
        .filter(|&(x, y)| !mask.get(x, y))
        .map(|(x, y)| (x as i64, y as i64))
        .collect();
    let mut out = vec![0; w * h];
    for y in 0..h {
        for x in 0..w {
            if !mask.get(x, y) {
                continue;
            }
            let (xi, yi) = (x as i64, y as i64);
            let edge = (xi + 1).min(w as i64 - xi).min(yi + 1).min(h as i64 - yi);
            let mut best = (edge * edge) as u64;
            for &(bx, by) in &background {
                let d = ((bx - xi).pow(2) + (by - yi).pow(2)) as u64;
                best = best.min(d);
            }
            out[y * w + x] = best;
        }
    }
    out
}

/// `[x_left, y_top, x_right, y_bottom]` by collecting every foreground pixel.
pub fn scan_bbox(mask: &BinaryMask) -> Option<[usize; 4]> {
    let pts: Vec<(usize, usize)> = (0..mask.height())
        .flat_map(|y| (0..mask.width()).map(move |x| (x, y)))
        .filter(|&(x, y)| mask.get(x, y))
        .collect();
    if pts.is_empty() {
        return None;
    }
    Some([
        pts.iter().map(|p| p.0).min().unwrap(),
        pts.iter().map(|p| p.1).min().unwrap(),
        pts.iter().map(|p| p.0).max().unwrap(),
        pts.iter().map(|p| p.1).max().unwrap(),
    ])
}

/// Union of a few random disks and rectangles, with sparse holes; never empty.
pub fn random_mask(rng: &mut Rng, max_side: usize) -> BinaryMask {
    let h = 1 + rng.below(max_side);
    let w = 1 + rng.below(max_side);
    let shapes: Vec<(bool, f64, f64, f64, f64)> = (0..1 + rng.below(4))
        .map(|_| {
            (
                rng.bernoulli(0.5),
                rng.uniform_range(0.0, w as f64),
                rng.uniform_range(0.0, h as f64),
                rng.uniform_range(0.5, w.max(h) as f64 / 2.0),
                rng.uniform_range(0.5, w.max(h) as f64 / 2.0),
            )
        })
        .collect();
    let hole_rate = if rng.bernoulli(0.3) { 0.05 } else { 0.0 };
    let mut m = BinaryMask::from_fn(h, w, |x, y| {
        let (xf, yf) = (x as f64, y as f64);
        let inside = shapes.iter().any(|&(disk, cx, cy, a, b)| {
            if disk {
                (xf - cx).powi(2) + (yf - cy).powi(2) <= a * a
            } else {
                (xf - cx).abs() <= a && (yf - cy).abs() <= b
            }
        });
        inside && !rng.bernoulli(hole_rate)
    });
    if m.foreground_count() == 0 {
        let (x, y) = (rng.below(w), rng.below(h));
        m.set(x, y, true);
    }
    m
}

/// IoU by sampling an `n×n` grid of cell centres over the union's bounding square.
pub fn raster_iou(a: &Circle, b: &Circle, n: usize) -> f64 {
    let x0 = (a.cx - a.radius).min(b.cx - b.radius);
    let y0 = (a.cy - a.radius).min(b.cy - b.radius);
    let x1 = (a.cx + a.radius).max(b.cx + b.radius);
    let y1 = (a.cy + a.radius).max(b.cy + b.radius);
    let side = (x1 - x0).max(y1 - y0);
    let step = side / n as f64;
    let (mut inter, mut union) = (0u64, 0u64);
    for i in 0..n {
        let y = y0 + (i as f64 + 0.5) * step;
        for j in 0..n {
            let x = x0 + (j as f64 + 0.5) * step;
            let ia = (x - a.cx).powi(2) + (y - a.cy).powi(2) <= a.radius * a.radius;
            let ib = (x - b.cx).powi(2) + (y - b.cy).powi(2) <= b.radius * b.radius;
            inter += (ia && ib) as u64;
            union += (ia || ib) as u64;
        }
    }
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// `H·W0ᵀ + s·H·Aᵀ·Bᵀ` with explicit scalar loops.
pub fn lora_forward(h: &Matrix, w0: &Matrix, a: &Matrix, b: &Matrix, s: f64) -> Matrix {
    let (l, hd) = h.shape();
    let (d, r) = b.shape();
    Matrix::from_fn(l, d, |t, o| {
        let base: f64 = (0..hd).map(|k| h[(t, k)] * w0[(o, k)]).sum();
        let delta: f64 = (0..r)
            .map(|j| b[(o, j)] * (0..hd).map(|k| h[(t, k)] * a[(j, k)]).sum::<f64>())
            .sum();
        base + s * delta
    })
}

/// Greedy prompt selection written against an exhaustive distance field and
/// a stable sort over `(−radius², y, x)`.
pub fn greedy_points(mask: &BinaryMask, k: usize, cap: f64) -> (Vec<[usize; 2]>, bool) {
    let sq = brute_edt_sq(mask);
    let w = mask.width();
    let mut order: Vec<usize> = (0..sq.len()).filter(|&i| mask.bits()[i]).collect();
    order.sort_by_key(|&i| (std::cmp::Reverse(sq[i]), i / w, i % w));
    let mut chosen: Vec<Circle> = Vec::new();
    let mut points = Vec::new();
    for i in order {
        let c = Circle::new((i % w) as f64, (i / w) as f64, (sq[i] as f64).sqrt());
        if chosen.iter().all(|p| ilora::maskgeom::circle_iou(p, &c) <= cap) {
            chosen.push(c);
            points.push([i % w, i / w]);
            if points.len() == k {
                break;
            }
        }
    }
    let degenerate = points.len() < k;
    while points.len() < k {
        points.push(points[0]);
    }
    (points, degenerate)
}
