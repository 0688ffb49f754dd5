use rand::Rng;

use super::{ImageRgb, SemanticLayout};
use crate::error::{Error, Result};

/// Resize-then-crop augmentation with a random horizontal flip.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentParams {
    pub target: (usize, usize),
    /// Extra pixels added to each side length before cropping back to `target`.
    pub jitter: usize,
    pub flip_prob: f64,
}

/// Nearest-neighbour resize; class indices are categorical.
pub fn resize_nearest(layout: &SemanticLayout, width: usize, height: usize) -> Result<SemanticLayout> {
    let (sw, sh) = (layout.width(), layout.height());
    let mut px = Vec::with_capacity(width * height);
    for y in 0..height {
        let sy = y * sh / height;
        for x in 0..width {
            px.push(layout.get(x * sw / width, sy));
        }
    }
    SemanticLayout::new(width, height, layout.class_count(), px)
}

/// Bilinear resize with half-pixel centres and edge clamping.
pub fn resize_bilinear(image: &ImageRgb, width: usize, height: usize) -> Result<ImageRgb> {
    let (sw, sh) = (image.width(), image.height());
    let src = image.values();
    let coord = |d: usize, dn: usize, sn: usize| -> (usize, usize, f32) {
        let s = ((d as f32 + 0.5) * sn as f32 / dn as f32 - 0.5).max(0.0);
        let i0 = (s.floor() as usize).min(sn - 1);
        let i1 = (i0 + 1).min(sn - 1);
        (i0, i1, s - i0 as f32)
    };
    let mut values = Vec::with_capacity(width * height * 3);
    for y in 0..height {
        let (y0, y1, fy) = coord(y, height, sh);
        for x in 0..width {
            let (x0, x1, fx) = coord(x, width, sw);
            for c in 0..3 {
                let at = |xx: usize, yy: usize| src[3 * (yy * sw + xx) + c];
                let top = at(x0, y0) * (1.0 - fx) + at(x1, y0) * fx;
                let bot = at(x0, y1) * (1.0 - fx) + at(x1, y1) * fx;
                values.push((top * (1.0 - fy) + bot * fy).clamp(0.0, 1.0));
            }
        }
    }
    ImageRgb::new(width, height, values)
}

pub fn flip_horizontal(layout: &SemanticLayout, image: &ImageRgb) -> (SemanticLayout, ImageRgb) {
    let (w, h) = (layout.width(), layout.height());
    let mut px = Vec::with_capacity(w * h);
    let mut vals = Vec::with_capacity(w * h * 3);
    for y in 0..h {
        for x in (0..w).rev() {
            px.push(layout.get(x, y));
            vals.extend_from_slice(&image.pixel(x, y));
        }
    }
    (
        SemanticLayout {
            width: w,
            height: h,
            classes: layout.class_count(),
            pixels: px,
        },
        ImageRgb {
            width: w,
            height: h,
            values: vals,
        },
    )
}

/// Applies identical geometry to a layout/image pair. Always consumes three
/// draws from `rng` (two crop offsets and the flip decision).
pub fn augment(
    layout: &SemanticLayout,
    image: &ImageRgb,
    params: &AugmentParams,
    rng: &mut impl Rng,
) -> Result<(SemanticLayout, ImageRgb)> {
    let (tw, th) = params.target;
    if tw == 0 || th == 0 {
        return Err(Error::Invalid("augmentation target has a zero side".into()));
    }
    if !(0.0..=1.0).contains(&params.flip_prob) {
        return Err(Error::Invalid(format!("flip probability {} outside [0,1]", params.flip_prob)));
    }
    if (layout.width(), layout.height()) != (image.width(), image.height()) {
        return Err(Error::Invalid("layout and image sizes differ".into()));
    }
    let (rw, rh) = (tw + params.jitter, th + params.jitter);
    let big_l = resize_nearest(layout, rw, rh)?;
    let big_i = resize_bilinear(image, rw, rh)?;
    let ox = rng.random_range(0..=rw - tw);
    let oy = rng.random_range(0..=rh - th);
    let flip = rng.random::<f64>() < params.flip_prob;

    let mut px = Vec::with_capacity(tw * th);
    let mut vals = Vec::with_capacity(tw * th * 3);
    for y in oy..oy + th {
        for x in ox..ox + tw {
            px.push(big_l.get(x, y));
            vals.extend_from_slice(&big_i.pixel(x, y));
        }
    }
    let l = SemanticLayout::new(tw, th, layout.class_count(), px)?;
    let i = ImageRgb::new(tw, th, vals)?;
    Ok(if flip { flip_horizontal(&l, &i) } else { (l, i) })
}
