//! Reality and diversity measurements.
//!
//! Reality is scored by segmenting generated images with an exact
//! palette-angle oracle, which is valid only for images from the synthetic
//! facade renderer. Diversity is scored by pairwise output distance and by
//! how well a single noise entry confines its effect to its own segment.

use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{ImageRgb, NoiseVector, Rgb, Sample, SemanticLayout};
use crate::error::{Error, Result};
use crate::models::Generator;

pub const LINKAGE_FLOOR: f64 = 1e-6;
pub const LINKAGE_CAP: f64 = 1e6;

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    /// Samples per layout for the diversity score.
    pub samples: usize,
    pub linkage_steps: Vec<f64>,
    /// Images generated per layout for accuracy and IoU.
    pub reality_samples: usize,
    /// Test layouts used (0: all).
    pub layouts: usize,
    pub seed: u64,
    pub diversity_ratio_min: f64,
    pub linkage_min: f64,
    pub accuracy_gap_max: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            samples: 8,
            linkage_steps: vec![-1.0, -0.5, 0.0, 0.5, 1.0],
            reality_samples: 4,
            layouts: 0,
            seed: 1234,
            diversity_ratio_min: 3.0,
            linkage_min: 2.0,
            accuracy_gap_max: 0.05,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.samples < 2 {
            return Err(Error::Config("eval samples must be at least 2".into()));
        }
        if self.linkage_steps.len() < 2 || self.linkage_steps.iter().any(|s| !(-1.0..=1.0).contains(s)) {
            return Err(Error::Config("linkage steps need at least 2 values in [-1,1]".into()));
        }
        if self.reality_samples == 0 {
            return Err(Error::Config("reality samples must be at least 1".into()));
        }
        Ok(())
    }
}

/// Per-pixel argmin of the angle to each palette colour. Exact ties go to the
/// lower class; black pixels go to class 0.
pub fn oracle_segment(image: &ImageRgb, palette: &[Rgb]) -> Result<SemanticLayout> {
    if palette.is_empty() || palette.len() > 256 {
        return Err(Error::Invalid(format!("palette has {} colours", palette.len())));
    }
    let units: Vec<[f64; 3]> = palette
        .iter()
        .map(|c| {
            let n = c.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt();
            [c[0] as f64 / n, c[1] as f64 / n, c[2] as f64 / n]
        })
        .collect();
    let mut px = Vec::with_capacity(image.width() * image.height());
    for y in 0..image.height() {
        for x in 0..image.width() {
            let p = image.pixel(x, y).map(|v| v as f64);
            let norm = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
            if norm == 0.0 {
                px.push(0);
                continue;
            }
            let mut best = 0;
            let mut best_cos = f64::NEG_INFINITY;
            for (c, u) in units.iter().enumerate() {
                let cos = (p[0] * u[0] + p[1] * u[1] + p[2] * u[2]) / norm;
                if cos > best_cos {
                    best_cos = cos;
                    best = c;
                }
            }
            px.push(best as u8);
        }
    }
    SemanticLayout::new(image.width(), image.height(), palette.len(), px)
}

fn same_dims(a: &SemanticLayout, b: &SemanticLayout) -> Result<()> {
    if (a.width(), a.height()) != (b.width(), b.height()) {
        return Err(Error::Invalid(format!(
            "layouts are {}×{} and {}×{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    Ok(())
}

/// Fraction of pixels labelled correctly.
pub fn accuracy(pred: &SemanticLayout, truth: &SemanticLayout) -> Result<f64> {
    same_dims(pred, truth)?;
    let hits = pred.pixels().iter().zip(truth.pixels()).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / truth.pixels().len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct IouReport {
    /// Mean over the classes present in the ground truth.
    pub mean: f64,
    /// `TP/(TP+FP+FN)` for classes present in either layout.
    pub per_class: Vec<Option<f64>>,
}

pub fn iou(pred: &SemanticLayout, truth: &SemanticLayout) -> Result<IouReport> {
    same_dims(pred, truth)?;
    let classes = pred.class_count().max(truth.class_count());
    let (mut tp, mut fp, mut fnn) = (vec![0usize; classes], vec![0usize; classes], vec![0usize; classes]);
    for (&p, &t) in pred.pixels().iter().zip(truth.pixels()) {
        if p == t {
            tp[p as usize] += 1;
        } else {
            fp[p as usize] += 1;
            fnn[t as usize] += 1;
        }
    }
    let per_class: Vec<Option<f64>> = (0..classes)
        .map(|c| {
            let union = tp[c] + fp[c] + fnn[c];
            (union > 0).then(|| tp[c] as f64 / union as f64)
        })
        .collect();
    let present = truth.present_classes();
    let mean = present.iter().map(|&c| per_class[c].unwrap_or(0.0)).sum::<f64>() / present.len() as f64;
    Ok(IouReport { mean, per_class })
}

/// Mean pairwise global L1 distance.
pub fn pairwise_diversity(images: &[ImageRgb]) -> Result<f64> {
    if images.len() < 2 {
        return Err(Error::Invalid("diversity needs at least 2 images".into()));
    }
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..images.len() {
        for j in i + 1..images.len() {
            total += images[i].mean_l1(&images[j]);
            pairs += 1;
        }
    }
    Ok(total / pairs as f64)
}

/// Generator outputs for one noise vector, flattened when the head emits
/// several images.
fn outputs(g: &Generator<f32>, layout: &SemanticLayout, noise: &NoiseVector) -> Result<Vec<ImageRgb>> {
    g.synthesize(layout, noise)
}

/// Pairwise diversity of `k` samples under i.i.d. uniform noise.
pub fn diversity_score(g: &Generator<f32>, layout: &SemanticLayout, k: usize, rng: &mut ChaCha8Rng) -> Result<f64> {
    if k < 2 {
        return Err(Error::Invalid("diversity needs K >= 2".into()));
    }
    let mut imgs = Vec::with_capacity(k);
    for _ in 0..k {
        let n = NoiseVector::sample(layout.class_count(), rng);
        imgs.push(outputs(g, layout, &n)?.swap_remove(0));
    }
    pairwise_diversity(&imgs)
}

/// Inside/outside ratio of the per-pixel change along a sweep of images.
pub fn linkage_of(sweep: &[ImageRgb], layout: &SemanticLayout, c: usize) -> Result<f64> {
    if sweep.len() < 2 {
        return Err(Error::Invalid("linkage needs at least 2 sweep steps".into()));
    }
    if !layout.present_classes().contains(&c) {
        return Err(Error::Invalid(format!("class {c} is absent from the layout")));
    }
    let (w, h) = (layout.width(), layout.height());
    if sweep.iter().any(|i| (i.width(), i.height()) != (w, h)) {
        return Err(Error::Invalid("sweep images do not match the layout size".into()));
    }
    let (mut inside, mut n_in, mut outside, mut n_out) = (0.0f64, 0usize, 0.0f64, 0usize);
    for pair in sweep.windows(2) {
        let (a, b) = (pair[0].values(), pair[1].values());
        for (p, &class) in layout.pixels().iter().enumerate() {
            let d = (0..3).map(|ch| (a[3 * p + ch] - b[3 * p + ch]).abs() as f64).sum::<f64>() / 3.0;
            if class as usize == c {
                inside += d;
                n_in += 1;
            } else {
                outside += d;
                n_out += 1;
            }
        }
    }
    if n_out == 0 {
        return Err(Error::Invalid(format!("class {c} covers the whole layout")));
    }
    let num = inside / n_in as f64;
    let den = outside / n_out as f64;
    // a change confined to the segment scores the cap outright
    if den < LINKAGE_FLOOR && num > 0.0 {
        return Ok(LINKAGE_CAP);
    }
    Ok((num / den.max(LINKAGE_FLOOR)).min(LINKAGE_CAP))
}

/// Sweeps `n^c` over `steps` with every other entry at 0.
pub fn sweep_images(g: &Generator<f32>, layout: &SemanticLayout, c: usize, steps: &[f64]) -> Result<Vec<ImageRgb>> {
    if c >= layout.class_count() {
        return Err(Error::Invalid(format!("class {c} out of range")));
    }
    steps
        .iter()
        .map(|&s| {
            let mut v = vec![0.0f64; layout.class_count()];
            v[c] = s;
            let (n, _) = NoiseVector::clamped(&v);
            Ok(outputs(g, layout, &n)?.swap_remove(0))
        })
        .collect()
}

pub fn linkage_score(g: &Generator<f32>, layout: &SemanticLayout, c: usize, steps: &[f64]) -> Result<f64> {
    if !layout.present_classes().contains(&c) {
        return Err(Error::Invalid(format!("class {c} is absent from the layout")));
    }
    linkage_of(&sweep_images(g, layout, c, steps)?, layout, c)
}

/// `count` samples under i.i.d. noise drawn from a ChaCha stream seeded
/// with `seed`.
pub fn sample_images(g: &Generator<f32>, layout: &SemanticLayout, count: usize, seed: u64) -> Result<Vec<ImageRgb>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let n = NoiseVector::sample(layout.class_count(), &mut rng);
            Ok(outputs(g, layout, &n)?.swap_remove(0))
        })
        .collect()
}

pub const MONTAGE_SEPARATOR: usize = 2;

/// Tiles equally sized images row-major into `cols` columns with 2-pixel
/// white separators between cells (none at the border).
pub fn montage(images: &[ImageRgb], cols: usize) -> Result<ImageRgb> {
    let first = images.first().ok_or_else(|| Error::Invalid("montage of zero images".into()))?;
    if cols == 0 {
        return Err(Error::Invalid("montage needs at least one column".into()));
    }
    let (w, h) = (first.width(), first.height());
    if images.iter().any(|i| (i.width(), i.height()) != (w, h)) {
        return Err(Error::Invalid("montage images differ in size".into()));
    }
    let cols = cols.min(images.len());
    let rows = images.len().div_ceil(cols);
    let sep = MONTAGE_SEPARATOR;
    let (mw, mh) = (cols * w + (cols - 1) * sep, rows * h + (rows - 1) * sep);
    let mut v = vec![1.0f32; mw * mh * 3];
    for (k, img) in images.iter().enumerate() {
        let (x0, y0) = ((k % cols) * (w + sep), (k / cols) * (h + sep));
        for y in 0..h {
            let src = &img.values()[y * w * 3..(y + 1) * w * 3];
            let at = ((y0 + y) * mw + x0) * 3;
            v[at..at + w * 3].copy_from_slice(src);
        }
    }
    ImageRgb::new(mw, mh, v)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub mean_iou: f64,
    /// Mean IoU per class over the images whose ground truth contains it.
    pub per_class_iou: Vec<Option<f64>>,
    pub diversity: f64,
    /// Mean linkage per class over the layouts containing it.
    pub linkage: Vec<Option<f64>>,
}

impl MetricsReport {
    pub fn mean_linkage(&self) -> f64 {
        let v: Vec<f64> = self.linkage.iter().flatten().copied().collect();
        if v.is_empty() {
            0.0
        } else {
            v.iter().sum::<f64>() / v.len() as f64
        }
    }
}

fn running_means(acc: &[(f64, usize)]) -> Vec<Option<f64>> {
    acc.iter().map(|&(s, n)| (n > 0).then(|| s / n as f64)).collect()
}

/// Reality metrics of already generated images against their layouts.
pub fn reality_of(pairs: &[(ImageRgb, &SemanticLayout)], palette: &[Rgb]) -> Result<(f64, f64, Vec<Option<f64>>)> {
    if pairs.is_empty() {
        return Err(Error::Invalid("no images to evaluate".into()));
    }
    let classes = palette.len();
    let (mut acc, mut miou) = (0.0, 0.0);
    let mut per = vec![(0.0, 0usize); classes];
    for (img, truth) in pairs {
        let pred = oracle_segment(img, palette)?;
        acc += accuracy(&pred, truth)?;
        let r = iou(&pred, truth)?;
        miou += r.mean;
        for c in truth.present_classes() {
            per[c].0 += r.per_class[c].unwrap_or(0.0);
            per[c].1 += 1;
        }
    }
    let n = pairs.len() as f64;
    Ok((acc / n, miou / n, running_means(&per)))
}

/// Full report over `samples`. Layout `i` uses its own RNG stream so the
/// result does not depend on evaluation order.
pub fn reality_report(g: &Generator<f32>, samples: &[&Sample], palette: &[Rgb], cfg: &EvalConfig) -> Result<MetricsReport> {
    cfg.validate()?;
    let samples = if cfg.layouts > 0 && cfg.layouts < samples.len() {
        &samples[..cfg.layouts]
    } else {
        samples
    };
    if samples.is_empty() {
        return Err(Error::Invalid("evaluation split is empty".into()));
    }
    let classes = g.class_count();
    let mut generated = Vec::new();
    let mut diversity = 0.0;
    let mut link = vec![(0.0, 0usize); classes];
    for (i, s) in samples.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(i as u64);
        for _ in 0..cfg.reality_samples {
            let n = NoiseVector::sample(classes, &mut rng);
            for img in outputs(g, &s.layout, &n)? {
                generated.push((img, &s.layout));
            }
        }
        diversity += diversity_score(g, &s.layout, cfg.samples, &mut rng)?;
        let present = s.layout.present_classes();
        for c in present {
            if s.layout.histogram()[c] == s.layout.pixels().len() {
                continue;
            }
            link[c].0 += linkage_score(g, &s.layout, c, &cfg.linkage_steps)?;
            link[c].1 += 1;
        }
    }
    let (accuracy, mean_iou, per_class_iou) = reality_of(&generated, palette)?;
    Ok(MetricsReport {
        accuracy,
        mean_iou,
        per_class_iou,
        diversity: diversity / samples.len() as f64,
        linkage: running_means(&link),
    })
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "nan".to_string(), |x| format!("{x:.6}"))
}

/// One CSV row per model variant.
pub fn report_csv(rows: &[(&str, &MetricsReport)], class_names: &[String]) -> String {
    let mut s = String::from("model,accuracy,iou,diversity,mean_linkage");
    for n in class_names {
        let _ = write!(s, ",iou_{n}");
    }
    for n in class_names {
        let _ = write!(s, ",linkage_{n}");
    }
    s.push('\n');
    for (name, r) in rows {
        let _ = write!(
            s,
            "{name},{:.6},{:.6},{:.6},{:.6}",
            r.accuracy,
            r.mean_iou,
            r.diversity,
            r.mean_linkage()
        );
        for c in 0..class_names.len() {
            let _ = write!(s, ",{}", opt(r.per_class_iou.get(c).copied().flatten()));
        }
        for c in 0..class_names.len() {
            let _ = write!(s, ",{}", opt(r.linkage.get(c).copied().flatten()));
        }
        s.push('\n');
    }
    s
}

/// Aligned text table with the reality columns first.
pub fn report_table(rows: &[(&str, &MetricsReport)]) -> String {
    let width = rows.iter().map(|(n, _)| n.len()).max().unwrap_or(0).max(5);
    let mut s = String::from(
        "Segmentation by the palette-angle oracle; valid only for synthetic facade renders.\n",
    );
    let _ = writeln!(s, "{:<width$}  {:>8}  {:>8}  {:>9}  {:>8}", "Model", "Accuracy", "IoU", "Diversity", "Linkage");
    for (name, r) in rows {
        let _ = writeln!(
            s,
            "{name:<width$}  {:>8.3}  {:>8.3}  {:>9.4}  {:>8.2}",
            r.accuracy,
            r.mean_iou,
            r.diversity,
            r.mean_linkage()
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate, render, SyntheticWorldConfig};

    fn solid(w: usize, h: usize, f: impl Fn(usize) -> f32) -> ImageRgb {
        ImageRgb::new(w, h, (0..w * h * 3).map(|i| f(i / 3)).collect()).unwrap()
    }

    #[test]
    fn oracle_recovers_rendered_layouts() {
        let cfg = SyntheticWorldConfig::default();
        let data = generate(&cfg, 4).unwrap();
        for s in data.samples() {
            let flat = render(&s.layout, &cfg, 1.0, false);
            assert_eq!(oracle_segment(&flat, &cfg.palette).unwrap(), s.layout);
            let dim = ImageRgb::new(32, 32, flat.values().iter().map(|v| v * 0.5).collect()).unwrap();
            assert_eq!(oracle_segment(&dim, &cfg.palette).unwrap(), s.layout);
            // the training renders themselves (illumination and shading) too
            assert_eq!(oracle_segment(&s.image, &cfg.palette).unwrap(), s.layout);
        }
    }

    #[test]
    fn oracle_ties_and_black() {
        let palette = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]];
        let img = ImageRgb::new(2, 1, vec![0.5, 0.5, 0.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(oracle_segment(&img, &palette).unwrap().pixels(), &[0, 0]);
        let img = ImageRgb::new(1, 1, vec![0.1, 0.9, 0.0]).unwrap();
        assert_eq!(oracle_segment(&img, &palette).unwrap().pixels(), &[1]);
    }

    #[test]
    fn accuracy_examples() {
        let t = SemanticLayout::new(2, 2, 2, vec![0, 1, 1, 0]).unwrap();
        assert_eq!(accuracy(&t, &t).unwrap(), 1.0);
        let wrong = SemanticLayout::new(2, 2, 2, vec![1, 0, 0, 1]).unwrap();
        assert_eq!(accuracy(&wrong, &t).unwrap(), 0.0);
        let three = SemanticLayout::new(2, 2, 2, vec![0, 1, 1, 1]).unwrap();
        assert_eq!(accuracy(&three, &t).unwrap(), 0.75);
        let other = SemanticLayout::filled(3, 2, 2, 0).unwrap();
        assert!(accuracy(&other, &t).is_err());
    }

    #[test]
    fn iou_examples() {
        let t = SemanticLayout::new(2, 2, 2, vec![0, 1, 1, 0]).unwrap();
        let r = iou(&t, &t).unwrap();
        assert_eq!(r.mean, 1.0);
        assert_eq!(r.per_class, vec![Some(1.0), Some(1.0)]);
        let inv = SemanticLayout::new(2, 2, 2, vec![1, 0, 0, 1]).unwrap();
        assert_eq!(iou(&inv, &t).unwrap().per_class, vec![Some(0.0), Some(0.0)]);
        // truth class 1 at {1,2}, prediction at {2,3}
        let p = SemanticLayout::new(2, 2, 2, vec![0, 0, 1, 1]).unwrap();
        let r = iou(&p, &t).unwrap();
        assert!((r.per_class[1].unwrap() - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn diversity_examples() {
        let a = solid(2, 2, |_| 0.1);
        let b = solid(2, 2, |_| 0.3);
        assert!((pairwise_diversity(&[a.clone(), b.clone()]).unwrap() - 0.2).abs() < 1e-7);
        assert_eq!(pairwise_diversity(&[a.clone(), a.clone(), a.clone()]).unwrap(), 0.0);
        // pairwise distances 0.1, 0.2, 0.3 (0 to 0.1, 0.1 to 0.3, 0 to 0.3)
        let c = solid(2, 2, |_| 0.0);
        let d = solid(2, 2, |_| 0.1);
        let e = solid(2, 2, |_| 0.3);
        assert!((pairwise_diversity(&[c, d, e]).unwrap() - 0.2).abs() < 1e-7);
        assert!(pairwise_diversity(&[a]).is_err());
    }

    #[test]
    fn linkage_examples() {
        let layout = SemanticLayout::new(2, 2, 2, vec![0, 0, 1, 1]).unwrap();
        let inside_only = [solid(2, 2, |_| 0.1), solid(2, 2, |p| if p < 2 { 0.5 } else { 0.1 })];
        assert_eq!(linkage_of(&inside_only, &layout, 0).unwrap(), LINKAGE_CAP);
        let uniform = [solid(2, 2, |_| 0.1), solid(2, 2, |_| 0.4)];
        assert!((linkage_of(&uniform, &layout, 0).unwrap() - 1.0).abs() < 1e-6);
        let ratio = [solid(2, 2, |_| 0.1), solid(2, 2, |p| if p < 2 { 0.16 } else { 0.12 })];
        assert!((linkage_of(&ratio, &layout, 0).unwrap() - 3.0).abs() < 1e-4);
        let one = SemanticLayout::filled(2, 2, 2, 0).unwrap();
        assert!(linkage_of(&uniform, &one, 1).is_err());
    }

    #[test]
    fn ground_truth_report_is_exact() {
        let cfg = SyntheticWorldConfig::default();
        let data = generate(&cfg, 6).unwrap();
        let pairs: Vec<_> = data.samples().iter().map(|s| (s.image.clone(), &s.layout)).collect();
        let (acc, miou, per) = reality_of(&pairs, &cfg.palette).unwrap();
        assert_eq!(acc, 1.0);
        assert_eq!(miou, 1.0);
        assert!(per.iter().all(|v| *v == Some(1.0)));
    }

    #[test]
    fn montage_geometry() {
        let imgs: Vec<_> = (0..5).map(|k| solid(3, 2, move |_| k as f32 / 10.0)).collect();
        let row = montage(&imgs, 5).unwrap();
        assert_eq!((row.width(), row.height()), (5 * 3 + 4 * 2, 2));
        assert_eq!(row.pixel(3, 0), [1.0; 3]);
        assert_eq!(row.pixel(5, 1), [0.1; 3]);
        let grid = montage(&imgs, 2).unwrap();
        assert_eq!((grid.width(), grid.height()), (8, 3 * 2 + 2 * 2));
        // unused trailing cell stays white
        assert_eq!(grid.pixel(7, 9), [1.0; 3]);
        assert!(montage(&[], 2).is_err());
    }

    #[test]
    fn table_layout() {
        let r = MetricsReport {
            accuracy: 0.9,
            mean_iou: 0.8,
            per_class_iou: vec![Some(0.8), None],
            diversity: 0.05,
            linkage: vec![Some(2.0), Some(4.0)],
        };
        let names = vec!["wall".to_string(), "window".to_string()];
        let csv = report_csv(&[("base", &r)], &names);
        assert_eq!(
            csv,
            "model,accuracy,iou,diversity,mean_linkage,iou_wall,iou_window,linkage_wall,linkage_window\n\
             base,0.900000,0.800000,0.050000,3.000000,0.800000,nan,2.000000,4.000000\n"
        );
        let table = report_table(&[("base", &r), ("+div", &r)]);
        assert!(table.lines().nth(1).unwrap().starts_with("Model  Accuracy"));
        assert_eq!(table.lines().count(), 4);
    }
}
