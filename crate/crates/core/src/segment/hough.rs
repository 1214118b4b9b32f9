//! Circle Hough transform over a binary edge image.

use serde::{Deserialize, Serialize};

use crate::image::Mask;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Circle {
    pub x: usize,
    pub y: usize,
    pub radius: usize,
    /// Accumulator votes.
    pub score: u32,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CircleSet {
    pub circles: Vec<Circle>,
}

impl CircleSet {
    pub fn len(&self) -> usize {
        self.circles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.circles.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HoughParams {
    pub r_min: usize,
    pub r_max: usize,
    pub accumulator_threshold: u32,
    pub nms_distance: f64,
}

impl Default for HoughParams {
    fn default() -> Self {
        Self {
            r_min: 8,
            r_max: 16,
            accumulator_threshold: 65,
            nms_distance: 8.0,
        }
    }
}

/// Distinct integer offsets on the rasterized circle of radius `r`.
pub fn circle_offsets(r: usize) -> Vec<(isize, isize)> {
    if r == 0 {
        return vec![(0, 0)];
    }
    let steps = 16 * r;
    let mut pts: Vec<(isize, isize)> = (0..steps)
        .map(|i| {
            let t = i as f64 * std::f64::consts::TAU / steps as f64;
            (
                (r as f64 * t.cos()).round() as isize,
                (r as f64 * t.sin()).round() as isize,
            )
        })
        .collect();
    pts.sort_unstable();
    pts.dedup();
    pts
}

pub fn hough_circles(edges: &Mask, params: &HoughParams) -> CircleSet {
    assert!(params.r_min <= params.r_max, "r_min must not exceed r_max");
    let (w, h) = (edges.width(), edges.height());
    let radii: Vec<usize> = (params.r_min..=params.r_max).collect();
    let plane = w * h;
    let mut acc = vec![0u32; radii.len() * plane];
    let edge_px: Vec<(isize, isize)> = edges
        .indices()
        .map(|i| ((i % w) as isize, (i / w) as isize))
        .collect();
    if edge_px.is_empty() {
        return CircleSet::default();
    }
    for (ri, &r) in radii.iter().enumerate() {
        let offsets = circle_offsets(r);
        let layer = &mut acc[ri * plane..(ri + 1) * plane];
        for &(ex, ey) in &edge_px {
            for &(dx, dy) in &offsets {
                let cx = ex - dx;
                let cy = ey - dy;
                if cx >= 0 && cy >= 0 && (cx as usize) < w && (cy as usize) < h {
                    layer[cy as usize * w + cx as usize] += 1;
                }
            }
        }
    }

    let mut candidates = Vec::new();
    for ri in 0..radii.len() {
        for y in 0..h {
            for x in 0..w {
                let v = acc[ri * plane + y * w + x];
                if v < params.accumulator_threshold || v == 0 {
                    continue;
                }
                let mut is_max = true;
                'nb: for dr in -1isize..=1 {
                    for dy in -1isize..=1 {
                        for dx in -1isize..=1 {
                            if dr == 0 && dy == 0 && dx == 0 {
                                continue;
                            }
                            let nr = ri as isize + dr;
                            let ny = y as isize + dy;
                            let nx = x as isize + dx;
                            if nr < 0
                                || ny < 0
                                || nx < 0
                                || nr >= radii.len() as isize
                                || ny >= h as isize
                                || nx >= w as isize
                            {
                                continue;
                            }
                            let nv =
                                acc[nr as usize * plane + ny as usize * w + nx as usize];
                            if nv > v {
                                is_max = false;
                                break 'nb;
                            }
                        }
                    }
                }
                if is_max {
                    candidates.push(Circle {
                        x,
                        y,
                        radius: radii[ri],
                        score: v,
                    });
                }
            }
        }
    }
    candidates.sort_by(|a, b| {
        b.score
            .cmp(&a.score)
            .then(a.y.cmp(&b.y))
            .then(a.x.cmp(&b.x))
            .then(a.radius.cmp(&b.radius))
    });
    let mut kept: Vec<Circle> = Vec::new();
    for c in candidates {
        let close = kept.iter().any(|k| {
            let d2 = (k.x as f64 - c.x as f64).powi(2) + (k.y as f64 - c.y as f64).powi(2);
            d2 <= params.nms_distance * params.nms_distance
        });
        if !close {
            kept.push(c);
        }
    }
    CircleSet { circles: kept }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn ring(w: usize, cx: f64, cy: f64, r: f64) -> Mask {
        Mask::from_fn(w, w, |x, y| {
            let d = ((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)).sqrt();
            (d - r).abs() < 0.5
        })
    }

    #[test]
    fn blank_image_has_no_circles() {
        for params in [
            HoughParams::default(),
            HoughParams {
                r_min: 1,
                r_max: 3,
                accumulator_threshold: 0,
                nms_distance: 0.0,
            },
        ] {
            assert!(hough_circles(&Mask::new(32, 32), &params).is_empty());
        }
    }

    #[test]
    fn single_circle_radius_12() {
        let edges = ring(64, 30.0, 33.0, 12.0);
        let set = hough_circles(&edges, &HoughParams::default());
        assert_eq!(set.len(), 1, "{set:?}");
        let c = set.circles[0];
        assert!((c.x as f64 - 30.0).abs() <= 2.0 && (c.y as f64 - 33.0).abs() <= 2.0);
        assert!((c.radius as f64 - 12.0).abs() <= 2.0);
    }

    #[test]
    fn three_circles() {
        let a = ring(96, 20.0, 20.0, 10.0);
        let b = ring(96, 70.0, 25.0, 12.0);
        let c = ring(96, 45.0, 70.0, 14.0);
        let edges = Mask::from_fn(96, 96, |x, y| a.get(x, y) || b.get(x, y) || c.get(x, y));
        // One-pixel rings cast fewer votes than the thick gradient edges the
        // default threshold is tuned for.
        let params = HoughParams {
            accumulator_threshold: 40,
            ..HoughParams::default()
        };
        let set = hough_circles(&edges, &params);
        assert_eq!(set.len(), 3, "{set:?}");
        assert!(set.circles.windows(2).all(|w| w[0].score >= w[1].score));
    }
}
