//! Morphometric descriptors of pixel blobs.

use crate::segment::Blob;

/// Clockwise (in image coordinates, y down) Moore neighbourhood starting east.
const RING: [(isize, isize); 8] = [
    (1, 0),
    (1, 1),
    (0, 1),
    (-1, 1),
    (-1, 0),
    (-1, -1),
    (0, -1),
    (1, -1),
];

fn ring_index(dx: isize, dy: isize) -> usize {
    RING.iter()
        .position(|&d| d == (dx, dy))
        .expect("offset is a Moore neighbour")
}

/// Moore-neighbour trace of the outer boundary. Returns the chain of ring
/// directions, empty for single-pixel blobs.
pub fn boundary_chain(blob: &Blob) -> Vec<usize> {
    let Some(&start) = blob.pixels.first() else {
        return Vec::new();
    };
    let mask = blob.to_mask();
    let inside = |x: isize, y: isize| {
        x >= 0
            && y >= 0
            && (x as usize) < blob.width
            && (y as usize) < blob.height
            && mask.get(x as usize, y as usize)
    };
    let (sx, sy) = (start.0 as isize, start.1 as isize);
    let mut cur = (sx, sy);
    // The first raster pixel's west neighbour is always background.
    let mut back = ring_index(-1, 0);
    let mut chain = Vec::new();
    let mut first_move: Option<usize> = None;
    // A closed boundary visits each pixel at most 4 times.
    let limit = 4 * blob.area() + 8;
    for _ in 0..limit {
        let mut found = None;
        for k in 1..=8 {
            let idx = (back + k) % 8;
            let (dx, dy) = RING[idx];
            if inside(cur.0 + dx, cur.1 + dy) {
                found = Some(idx);
                break;
            }
        }
        let Some(idx) = found else {
            return Vec::new();
        };
        if cur == (sx, sy) && first_move == Some(idx) {
            break;
        }
        if first_move.is_none() {
            first_move = Some(idx);
        }
        let prev = RING[(idx + 7) % 8];
        let next = (cur.0 + RING[idx].0, cur.1 + RING[idx].1);
        let back_abs = (cur.0 + prev.0, cur.1 + prev.1);
        back = ring_index(back_abs.0 - next.0, back_abs.1 - next.1);
        cur = next;
        chain.push(idx);
    }
    chain
}

/// Perimeter of the pixel region: corner-count corrected chain length of
/// the pixel-centre contour plus the half-pixel outward offset (`pi`).
pub fn perimeter(blob: &Blob) -> f64 {
    let chain = boundary_chain(blob);
    if chain.is_empty() {
        return std::f64::consts::PI;
    }
    let odd = chain.iter().filter(|&&d| d % 2 == 1).count() as f64;
    let even = chain.len() as f64 - odd;
    let corners = (0..chain.len())
        .filter(|&i| chain[i] != chain[(i + 1) % chain.len()])
        .count() as f64;
    0.980 * even + 1.406 * odd - 0.091 * corners + std::f64::consts::PI
}

/// `4 pi A / P^2`, capped at 1.
pub fn circularity(area: f64, perimeter: f64) -> f64 {
    if perimeter <= 0.0 {
        return 0.0;
    }
    (4.0 * std::f64::consts::PI * area / (perimeter * perimeter)).min(1.0)
}

/// Convex hull (counter-clockwise, no collinear points) of the corners of
/// every boundary pixel.
pub fn corner_hull(blob: &Blob) -> Vec<(f64, f64)> {
    let mut pts: Vec<(i64, i64)> = Vec::new();
    for (x, y) in blob.boundary() {
        let (x, y) = (x as i64, y as i64);
        pts.extend([(x, y), (x + 1, y), (x, y + 1), (x + 1, y + 1)]);
    }
    pts.sort_unstable();
    pts.dedup();
    if pts.len() < 3 {
        return pts.iter().map(|&(x, y)| (x as f64, y as f64)).collect();
    }
    let cross = |o: (i64, i64), a: (i64, i64), b: (i64, i64)| {
        (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
    };
    let mut lower: Vec<(i64, i64)> = Vec::new();
    for &p in &pts {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 0 {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<(i64, i64)> = Vec::new();
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 0 {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower.into_iter().map(|(x, y)| (x as f64, y as f64)).collect()
}

pub fn polygon_area(poly: &[(f64, f64)]) -> f64 {
    if poly.len() < 3 {
        return 0.0;
    }
    let mut s = 0.0;
    for i in 0..poly.len() {
        let (x0, y0) = poly[i];
        let (x1, y1) = poly[(i + 1) % poly.len()];
        s += x0 * y1 - x1 * y0;
    }
    s.abs() / 2.0
}

/// Maximum distance between any two hull points.
pub fn max_caliper(hull: &[(f64, f64)]) -> f64 {
    let mut best: f64 = 0.0;
    for (i, a) in hull.iter().enumerate() {
        for b in &hull[i + 1..] {
            best = best.max(((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt());
        }
    }
    best
}

/// Minimum projection width over 180 evenly spaced directions.
pub fn min_caliper(hull: &[(f64, f64)]) -> f64 {
    if hull.is_empty() {
        return 0.0;
    }
    (0..180)
        .map(|k| {
            let t = (k as f64).to_radians();
            let (c, s) = (t.cos(), t.sin());
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for &(x, y) in hull {
                let p = x * c + y * s;
                lo = lo.min(p);
                hi = hi.max(p);
            }
            hi - lo
        })
        .fold(f64::INFINITY, f64::min)
}

/// Eccentricity of the ellipse with the blob's second central moments.
pub fn eccentricity(blob: &Blob) -> f64 {
    let (cx, cy) = blob.centroid();
    let n = blob.area() as f64;
    let (mut a, mut b, mut c) = (0.0, 0.0, 0.0);
    for &(x, y) in &blob.pixels {
        let dx = x as f64 - cx;
        let dy = y as f64 - cy;
        a += dx * dx;
        b += dx * dy;
        c += dy * dy;
    }
    a /= n;
    b /= n;
    c /= n;
    let root = ((a - c).powi(2) + 4.0 * b * b).sqrt();
    let l1 = (a + c + root) / 2.0;
    let l2 = ((a + c - root) / 2.0).max(0.0);
    if l1 <= 0.0 {
        0.0
    } else {
        (1.0 - l2 / l1).max(0.0).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Morphometry {
    pub area: f64,
    pub perimeter: f64,
    pub circularity: f64,
    pub max_caliper: f64,
    pub min_caliper: f64,
    pub eccentricity: f64,
    pub solidity: f64,
}

pub fn morphometry(blob: &Blob) -> Morphometry {
    let area = blob.area() as f64;
    let perimeter = perimeter(blob);
    let hull = corner_hull(blob);
    let hull_area = polygon_area(&hull);
    Morphometry {
        area,
        perimeter,
        circularity: circularity(area, perimeter),
        max_caliper: max_caliper(&hull),
        min_caliper: min_caliper(&hull),
        eccentricity: eccentricity(blob),
        solidity: if hull_area > 0.0 {
            (area / hull_area).min(1.0)
        } else {
            1.0
        },
    }
}
