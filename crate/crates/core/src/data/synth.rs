//! Procedural "toy facades": rectangular building layouts rendered with a
//! random global illumination that is not recorded in the layout, so each
//! layout admits many plausible images.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Dataset, ImageRgb, Sample, SemanticLayout, Split};
use crate::error::{Error, Result};

pub type Rgb = [f32; 3];

pub const WALL: u8 = 0;
pub const WINDOW: u8 = 1;
pub const DOOR: u8 = 2;
pub const ROOF: u8 = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticWorldConfig {
    pub width: usize,
    pub height: usize,
    pub class_names: Vec<String>,
    /// Base colour per class, indexed by class.
    pub palette: Vec<Rgb>,
    pub roof_rows: (usize, usize),
    pub window_rows: (usize, usize),
    pub window_cols: (usize, usize),
    pub window_size: (usize, usize),
    pub door_width: (usize, usize),
    pub door_height: (usize, usize),
    pub illumination: (f32, f32),
    /// Peak-to-peak amplitude of the left-to-right multiplicative shading.
    pub shading: f32,
    /// Minimum pairwise angle between palette colours, in degrees.
    pub min_angle_deg: f32,
    pub max_retries: usize,
    pub seed: u64,
}

impl Default for SyntheticWorldConfig {
    fn default() -> Self {
        Self {
            width: 32,
            height: 32,
            class_names: ["wall", "window", "door", "roof"].map(String::from).to_vec(),
            palette: vec![
                [0.80, 0.55, 0.35],
                [0.20, 0.35, 0.80],
                [0.30, 0.70, 0.25],
                [0.75, 0.25, 0.55],
            ],
            roof_rows: (3, 6),
            window_rows: (2, 3),
            window_cols: (2, 4),
            window_size: (3, 5),
            door_width: (4, 7),
            door_height: (6, 10),
            illumination: (0.55, 1.0),
            shading: 0.2,
            min_angle_deg: 15.0,
            max_retries: 16,
            seed: 0,
        }
    }
}

/// Angle between two colours in degrees.
pub(crate) fn angle_deg(a: Rgb, b: Rgb) -> f32 {
    let dot: f32 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f32>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f32>().sqrt();
    (dot / (na * nb)).clamp(-1.0, 1.0).acos().to_degrees()
}

impl SyntheticWorldConfig {
    pub fn class_count(&self) -> usize {
        self.palette.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.palette.len() != 4 || self.class_names.len() != 4 {
            return Err(Error::Config(
                "the facade world has exactly 4 classes (wall, window, door, roof)".into(),
            ));
        }
        let (lo, hi) = self.illumination;
        if !(lo > 0.0 && lo <= hi) {
            return Err(Error::Config(format!("illumination range [{lo}, {hi}] must satisfy 0 < lo <= hi")));
        }
        for (i, a) in self.palette.iter().enumerate() {
            if a.iter().any(|v| !(0.0..=1.0).contains(v)) || a.iter().all(|&v| v == 0.0) {
                return Err(Error::Config(format!("palette colour {i} must be a non-zero colour in [0,1]")));
            }
            for (j, b) in self.palette.iter().enumerate().skip(i + 1) {
                let ang = angle_deg(*a, *b);
                if ang < self.min_angle_deg {
                    return Err(Error::Config(format!(
                        "palette colours {i} and {j} are {ang:.1}° apart, below the {}° minimum",
                        self.min_angle_deg
                    )));
                }
            }
        }
        let ranges = [
            ("roof_rows", self.roof_rows),
            ("window_rows", self.window_rows),
            ("window_cols", self.window_cols),
            ("window_size", self.window_size),
            ("door_width", self.door_width),
            ("door_height", self.door_height),
        ];
        for (name, (a, b)) in ranges {
            if a == 0 || a > b {
                return Err(Error::Config(format!("{name} range ({a}, {b}) is empty")));
            }
        }
        if self.door_width.1 >= self.width || self.roof_rows.1 + self.door_height.1 >= self.height {
            return Err(Error::Config("structures do not fit the image".into()));
        }
        Ok(())
    }
}

fn range(rng: &mut impl Rng, (lo, hi): (usize, usize)) -> usize {
    rng.random_range(lo..=hi)
}

fn build_layout(cfg: &SyntheticWorldConfig, rng: &mut impl Rng) -> SemanticLayout {
    let (w, h) = (cfg.width, cfg.height);
    let mut px = vec![WALL; w * h];
    let mut fill = |x0: usize, y0: usize, x1: usize, y1: usize, c: u8| {
        for y in y0..y1.min(h) {
            for x in x0..x1.min(w) {
                px[y * w + x] = c;
            }
        }
    };

    let roof = range(rng, cfg.roof_rows);
    fill(0, 0, w, roof, ROOF);

    let rows = range(rng, cfg.window_rows);
    let cols = range(rng, cfg.window_cols);
    let top = roof + 2;
    let bottom = h.saturating_sub(2);
    let slot_h = (bottom.saturating_sub(top)) / rows.max(1);
    let slot_w = w / cols.max(1);
    let win_w = range(rng, cfg.window_size).min(slot_w.saturating_sub(1)).max(1);
    let win_h = range(rng, cfg.window_size).min(slot_h.saturating_sub(1)).max(1);
    for r in 0..rows {
        for c in 0..cols {
            let x0 = c * slot_w + (slot_w - win_w) / 2;
            let y0 = top + r * slot_h + (slot_h.saturating_sub(win_h)) / 2;
            fill(x0, y0, x0 + win_w, y0 + win_h, WINDOW);
        }
    }

    let dw = range(rng, cfg.door_width);
    let dh = range(rng, cfg.door_height);
    let dx = rng.random_range(1..=w - dw - 1);
    fill(dx, h - dh, dx + dw, h, DOOR);

    SemanticLayout {
        width: w,
        height: h,
        classes: cfg.class_count(),
        pixels: px,
    }
}

/// Renders `layout` under a global illumination factor, optionally with the
/// horizontal shading gradient.
pub fn render(layout: &SemanticLayout, cfg: &SyntheticWorldConfig, illumination: f32, gradient: bool) -> ImageRgb {
    let (w, h) = (layout.width(), layout.height());
    let mut values = Vec::with_capacity(w * h * 3);
    for y in 0..h {
        for x in 0..w {
            let shade = if gradient && w > 1 {
                1.0 + cfg.shading * (x as f32 / (w - 1) as f32 - 0.5)
            } else {
                1.0
            };
            let base = cfg.palette[layout.get(x, y) as usize];
            for v in base {
                values.push((v * illumination * shade).clamp(0.0, 1.0));
            }
        }
    }
    ImageRgb {
        width: w,
        height: h,
        values,
    }
}

/// Generates `count` training pairs. Sample `i` draws from its own ChaCha
/// stream, so datasets are reproducible and prefix-stable.
pub fn generate(cfg: &SyntheticWorldConfig, count: usize) -> Result<Dataset> {
    cfg.validate()?;
    if count == 0 {
        return Err(Error::Invalid("sample count must be at least 1".into()));
    }
    let mut samples = Vec::with_capacity(count);
    for i in 0..count {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(i as u64);
        let layout = (0..cfg.max_retries)
            .map(|_| build_layout(cfg, &mut rng))
            .find(|l| l.histogram().iter().all(|&n| n > 0))
            .ok_or(Error::Degenerate(cfg.max_retries))?;
        let (lo, hi) = cfg.illumination;
        let illum = if lo < hi { rng.random_range(lo..=hi) } else { lo };
        let image = render(&layout, cfg, illum, true);
        samples.push(Sample {
            layout,
            image,
            split: Split::Train,
        });
    }
    Dataset::new(samples)
}
