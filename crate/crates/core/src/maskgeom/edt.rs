//! Exact squared Euclidean distance transform by separable lower envelopes of
//! parabolas (Felzenszwalb & Huttenlocher).

use super::BinaryMask;

/// Marks "no background seen yet" in the 1-D passes.
const FAR: u64 = u64::MAX;

/// Per-pixel distance to the nearest non-foreground pixel. Pixels outside the
/// image count as background; background pixels have distance 0.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceField {
    width: usize,
    height: usize,
    squared: Vec<u64>,
}

impl DistanceField {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Squared distance at `(x, y)`; an exact integer.
    pub fn squared(&self, x: usize, y: usize) -> u64 {
        self.squared[y * self.width + x]
    }

    pub fn radius(&self, x: usize, y: usize) -> f64 {
        (self.squared(x, y) as f64).sqrt()
    }

    pub fn squared_values(&self) -> &[u64] {
        &self.squared
    }

    pub fn radii(&self) -> Vec<f64> {
        self.squared.iter().map(|&s| (s as f64).sqrt()).collect()
    }

    /// Largest radius over the field.
    pub fn max_radius(&self) -> f64 {
        (self.squared.iter().copied().max().unwrap_or(0) as f64).sqrt()
    }
}

/// 1-D pass: `out[q] = min_p (q - p)² + f[p]` over points with finite `f`.
fn envelope_1d(f: &[u64], out: &mut [u64], v: &mut Vec<usize>, z: &mut Vec<f64>) {
    v.clear();
    z.clear();
    for (q, &fq) in f.iter().enumerate() {
        if fq == FAR {
            continue;
        }
        let key_q = fq as f64 + (q * q) as f64;
        while let Some(&vk) = v.last() {
            let key_v = f[vk] as f64 + (vk * vk) as f64;
            let s = (key_q - key_v) / (2.0 * (q - vk) as f64);
            if s <= *z.last().expect("z tracks v") {
                v.pop();
                z.pop();
            } else {
                v.push(q);
                z.push(s);
                break;
            }
        }
        if v.is_empty() {
            v.push(q);
            z.push(f64::NEG_INFINITY);
        }
    }
    if v.is_empty() {
        out.fill(FAR);
        return;
    }
    let mut k = 0;
    for (q, slot) in out.iter_mut().enumerate() {
        while k + 1 < v.len() && z[k + 1] < q as f64 {
            k += 1;
        }
        let p = v[k];
        let dq = q.abs_diff(p) as u64;
        *slot = dq * dq + f[p];
    }
}

pub fn distance_transform(mask: &BinaryMask) -> DistanceField {
    let (w, h) = (mask.width(), mask.height());
    // One-pixel background frame stands in for everything outside the image.
    let (pw, ph) = (w + 2, h + 2);
    let mut grid = vec![0u64; pw * ph];
    for y in 0..h {
        for x in 0..w {
            if mask.get(x, y) {
                grid[(y + 1) * pw + (x + 1)] = FAR;
            }
        }
    }

    let mut v = Vec::new();
    let mut z = Vec::new();
    let mut col = vec![0u64; ph];
    let mut col_out = vec![0u64; ph];
    for x in 0..pw {
        for y in 0..ph {
            col[y] = grid[y * pw + x];
        }
        envelope_1d(&col, &mut col_out, &mut v, &mut z);
        for y in 0..ph {
            grid[y * pw + x] = col_out[y];
        }
    }
    let mut row_out = vec![0u64; pw];
    for y in 0..ph {
        envelope_1d(&grid[y * pw..(y + 1) * pw], &mut row_out, &mut v, &mut z);
        grid[y * pw..(y + 1) * pw].copy_from_slice(&row_out);
    }

    let mut squared = Vec::with_capacity(w * h);
    for y in 0..h {
        squared.extend_from_slice(&grid[(y + 1) * pw + 1..(y + 1) * pw + 1 + w]);
    }
    DistanceField {
        width: w,
        height: h,
        squared,
    }
}
