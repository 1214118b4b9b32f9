//! Binary morphology with a disc structuring element
//! `{(dx, dy) : dx^2 + dy^2 <= r^2}`. Only in-bounds neighbours take part,
//! so the image border neither grows nor erodes shapes that touch it.

use serde::{Deserialize, Serialize};

use crate::image::Mask;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MorphOp {
    Dilate,
    Erode,
}

/// Half-width of the disc on each row offset `dy in -r..=r`.
fn disc_spans(radius: usize) -> Vec<(isize, isize)> {
    let r = radius as isize;
    (-r..=r)
        .map(|dy| {
            let hw = ((r * r - dy * dy) as f64).sqrt().floor() as isize;
            (dy, hw)
        })
        .collect()
}

fn dilate(mask: &Mask, radius: usize) -> Mask {
    let (w, h) = (mask.width() as isize, mask.height() as isize);
    let spans = disc_spans(radius);
    let mut out = Mask::new(mask.width(), mask.height());
    for i in mask.indices() {
        let x = (i % mask.width()) as isize;
        let y = (i / mask.width()) as isize;
        for &(dy, hw) in &spans {
            let ny = y + dy;
            if ny < 0 || ny >= h {
                continue;
            }
            let x0 = (x - hw).max(0);
            let x1 = (x + hw).min(w - 1);
            for nx in x0..=x1 {
                out.set(nx as usize, ny as usize, true);
            }
        }
    }
    out
}

pub fn morphology(mask: &Mask, op: MorphOp, radius: usize) -> Mask {
    assert!(radius >= 1, "structuring element radius must be >= 1");
    match op {
        MorphOp::Dilate => dilate(mask, radius),
        // Erosion is the dual of dilation of the complement.
        MorphOp::Erode => dilate(&mask.not(), radius).not(),
    }
}

/// Dilation minus erosion.
pub fn morphological_gradient(mask: &Mask, radius: usize) -> Mask {
    morphology(mask, MorphOp::Dilate, radius).and_not(&morphology(mask, MorphOp::Erode, radius))
}

/// Dilation followed by erosion.
pub fn closing(mask: &Mask, radius: usize) -> Mask {
    morphology(&morphology(mask, MorphOp::Dilate, radius), MorphOp::Erode, radius)
}
