use std::collections::VecDeque;

use crate::image::{Grid, Mask};

/// 8-connected pixel region.
#[derive(Debug, Clone, PartialEq)]
pub struct Blob {
    /// Pixel coordinates `(x, y)` in raster order.
    pub pixels: Vec<(usize, usize)>,
    pub width: usize,
    pub height: usize,
}

pub const NEIGHBORS_8: [(isize, isize); 8] = [
    (-1, -1),
    (0, -1),
    (1, -1),
    (-1, 0),
    (1, 0),
    (-1, 1),
    (0, 1),
    (1, 1),
];

impl Blob {
    /// Builds a blob from arbitrary pixel coordinates; they are sorted into
    /// raster order.
    pub fn new(mut pixels: Vec<(usize, usize)>, width: usize, height: usize) -> Self {
        pixels.sort_by_key(|&(x, y)| (y, x));
        Self {
            pixels,
            width,
            height,
        }
    }

    pub fn area(&self) -> usize {
        self.pixels.len()
    }

    pub fn centroid(&self) -> (f64, f64) {
        let n = self.pixels.len().max(1) as f64;
        let (sx, sy) = self
            .pixels
            .iter()
            .fold((0.0, 0.0), |(a, b), &(x, y)| (a + x as f64, b + y as f64));
        (sx / n, sy / n)
    }

    /// `(min_x, min_y, max_x, max_y)`.
    pub fn bbox(&self) -> (usize, usize, usize, usize) {
        let mut b = (usize::MAX, usize::MAX, 0, 0);
        for &(x, y) in &self.pixels {
            b.0 = b.0.min(x);
            b.1 = b.1.min(y);
            b.2 = b.2.max(x);
            b.3 = b.3.max(y);
        }
        b
    }

    pub fn to_mask(&self) -> Mask {
        let mut m = Mask::new(self.width, self.height);
        for &(x, y) in &self.pixels {
            m.set(x, y, true);
        }
        m
    }

    pub fn mean_of(&self, values: &Grid<f64>) -> f64 {
        if self.pixels.is_empty() {
            return 0.0;
        }
        self.pixels.iter().map(|&(x, y)| *values.at(x, y)).sum::<f64>() / self.pixels.len() as f64
    }

    /// Pixels with at least one 4-neighbour outside the blob (or outside the
    /// image), raster order.
    pub fn boundary(&self) -> Vec<(usize, usize)> {
        let m = self.to_mask();
        self.pixels
            .iter()
            .copied()
            .filter(|&(x, y)| {
                x == 0
                    || y == 0
                    || x + 1 >= self.width
                    || y + 1 >= self.height
                    || !m.get(x - 1, y)
                    || !m.get(x + 1, y)
                    || !m.get(x, y - 1)
                    || !m.get(x, y + 1)
            })
            .collect()
    }
}

/// Maximal 8-connected regions of `mask`, ordered by `(min y, min x)` of
/// their bounding box (ties by first raster pixel).
pub fn connected_components(mask: &Mask) -> Vec<Blob> {
    let (w, h) = (mask.width(), mask.height());
    let mut seen = vec![false; w * h];
    let mut blobs = Vec::new();
    let mut queue = VecDeque::new();
    for start in mask.indices() {
        if seen[start] {
            continue;
        }
        seen[start] = true;
        queue.push_back(start);
        let mut pixels = Vec::new();
        while let Some(i) = queue.pop_front() {
            let (x, y) = (i % w, i / w);
            pixels.push((x, y));
            for (dx, dy) in NEIGHBORS_8 {
                let nx = x as isize + dx;
                let ny = y as isize + dy;
                if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                    continue;
                }
                let j = ny as usize * w + nx as usize;
                if mask.bits()[j] && !seen[j] {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
        blobs.push(Blob::new(pixels, w, h));
    }
    // Blobs are discovered in order of their first raster pixel, which fixes
    // min y; the stable sort then orders by min x within equal min y.
    blobs.sort_by_key(|b| {
        let (min_x, min_y, _, _) = b.bbox();
        (min_y, min_x)
    });
    blobs
}
