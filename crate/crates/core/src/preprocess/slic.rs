//! Simple linear iterative clustering over the leading reduced bands.

use std::collections::VecDeque;

use super::Segmentation;
use crate::dataio::HsiCube;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SlicParams {
    /// Requested number of superpixels.
    pub superpixels: usize,
    pub compactness: f64,
    pub iterations: usize,
}

impl Default for SlicParams {
    fn default() -> Self {
        SlicParams {
            superpixels: 600,
            compactness: 10.0,
            iterations: 10,
        }
    }
}

#[derive(Clone, Debug)]
struct Center {
    y: f64,
    x: f64,
    color: Vec<f64>,
}

/// Segments `reduced` into roughly `params.superpixels` 4-connected regions.
///
/// Colors are the first `min(3, bands)` bands. Centers start on a regular
/// grid of spacing S ≈ √(N/K); each round assigns every pixel within a 2S
/// window to the center minimizing `d_color + (compactness / S) · d_xy`,
/// then moves centers to their members' mean. Orphan fragments are merged
/// into an adjacent region afterwards.
pub fn slic_segment(reduced: &HsiCube<f64>, params: &SlicParams) -> Result<Segmentation> {
    let (h, w) = (reduced.height(), reduced.width());
    let n = h * w;
    let k = params.superpixels;
    if k == 0 {
        return Err(Error::Config("superpixels must be at least 1".into()));
    }
    if k > n {
        return Err(Error::Config(format!("superpixels {k} exceeds pixel count {n}")));
    }
    if params.iterations == 0 {
        return Err(Error::Config("slic iterations must be at least 1".into()));
    }
    if !(params.compactness >= 0.0) {
        return Err(Error::Config("slic compactness must be non-negative".into()));
    }
    let channels = reduced.bands().min(3);
    let color = |p: usize| -> Vec<f64> { (0..channels).map(|b| reduced.band(b)[p]).collect() };

    let step = (n as f64 / k as f64).sqrt();
    let ny = ((h as f64 / step).round() as usize).clamp(1, h);
    let nx = ((w as f64 / step).round() as usize).clamp(1, w);
    let (sy, sx) = (h as f64 / ny as f64, w as f64 / nx as f64);
    let s = sy.max(sx);
    let spatial_weight = params.compactness / s;

    let mut centers: Vec<Center> = Vec::with_capacity(ny * nx);
    for i in 0..ny {
        for j in 0..nx {
            let y = (i as f64 + 0.5) * sy - 0.5;
            let x = (j as f64 + 0.5) * sx - 0.5;
            let p = (y.round() as usize).min(h - 1) * w + (x.round() as usize).min(w - 1);
            centers.push(Center { y, x, color: color(p) });
        }
    }

    let mut assign = vec![usize::MAX; n];
    let mut dist = vec![f64::INFINITY; n];
    for _ in 0..params.iterations {
        dist.fill(f64::INFINITY);
        assign.fill(usize::MAX);
        for (ci, c) in centers.iter().enumerate() {
            let y0 = (c.y - s).ceil().max(0.0) as usize;
            let y1 = ((c.y + s).floor() as isize).min(h as isize - 1);
            let x0 = (c.x - s).ceil().max(0.0) as usize;
            let x1 = ((c.x + s).floor() as isize).min(w as isize - 1);
            if y1 < 0 || x1 < 0 {
                continue;
            }
            for r in y0..=y1 as usize {
                for col in x0..=x1 as usize {
                    let p = r * w + col;
                    let dc: f64 = (0..channels)
                        .map(|b| (reduced.band(b)[p] - c.color[b]).powi(2))
                        .sum::<f64>()
                        .sqrt();
                    let dxy = ((r as f64 - c.y).powi(2) + (col as f64 - c.x).powi(2)).sqrt();
                    let d = dc + spatial_weight * dxy;
                    if d < dist[p] {
                        dist[p] = d;
                        assign[p] = ci;
                    }
                }
            }
        }
        // Any pixel outside every window goes to its spatially nearest center.
        for p in 0..n {
            if assign[p] == usize::MAX {
                let (r, col) = ((p / w) as f64, (p % w) as f64);
                assign[p] = nearest_center(&centers, r, col);
            }
        }
        let mut acc = vec![(0.0, 0.0, vec![0.0; channels], 0usize); centers.len()];
        for p in 0..n {
            let a = &mut acc[assign[p]];
            a.0 += (p / w) as f64;
            a.1 += (p % w) as f64;
            for b in 0..channels {
                a.2[b] += reduced.band(b)[p];
            }
            a.3 += 1;
        }
        for (c, (sy_, sx_, sc, cnt)) in centers.iter_mut().zip(acc) {
            if cnt > 0 {
                let m = cnt as f64;
                c.y = sy_ / m;
                c.x = sx_ / m;
                c.color = sc.into_iter().map(|v| v / m).collect();
            }
        }
    }

    let min_size = ((n as f64 / k as f64) / 4.0).floor().max(1.0) as usize;
    let labels = enforce_connectivity(&assign, h, w, min_size);
    Segmentation::from_labels(h, w, labels)
}

fn nearest_center(centers: &[Center], r: f64, c: f64) -> usize {
    let mut best = (f64::INFINITY, 0);
    for (i, ctr) in centers.iter().enumerate() {
        let d = (ctr.y - r).powi(2) + (ctr.x - c).powi(2);
        if d < best.0 {
            best = (d, i);
        }
    }
    best.1
}

/// Relabels connected components in scan order. A component smaller than
/// `min_size` is absorbed by the region that precedes it in scan order
/// (above or to the left of its first pixel), which keeps every final region
/// 4-connected.
fn enforce_connectivity(assign: &[usize], h: usize, w: usize, min_size: usize) -> Vec<usize> {
    let n = h * w;
    let mut out = vec![usize::MAX; n];
    let mut next = 0;
    let mut queue = VecDeque::new();
    let mut component = Vec::new();
    for start in 0..n {
        if out[start] != usize::MAX {
            continue;
        }
        let (r, c) = (start / w, start % w);
        let adjacent = if c > 0 {
            Some(out[start - 1])
        } else if r > 0 {
            Some(out[start - w])
        } else {
            None
        };
        let orig = assign[start];
        component.clear();
        queue.push_back(start);
        out[start] = next;
        while let Some(p) = queue.pop_front() {
            component.push(p);
            let (pr, pc) = (p / w, p % w);
            let mut try_push = |q: usize| {
                if out[q] == usize::MAX && assign[q] == orig {
                    out[q] = next;
                    queue.push_back(q);
                }
            };
            if pr > 0 {
                try_push(p - w);
            }
            if pr + 1 < h {
                try_push(p + w);
            }
            if pc > 0 {
                try_push(p - 1);
            }
            if pc + 1 < w {
                try_push(p + 1);
            }
        }
        match adjacent {
            Some(adj) if component.len() < min_size => {
                for &p in &component {
                    out[p] = adj;
                }
            }
            _ => next += 1,
        }
    }
    out
}
