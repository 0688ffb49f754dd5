//! Adversarial, reconstruction, content and diversity losses.
//!
//! Every image distance is mean-normalised: the global L1 distance is the
//! mean of `|a − b|` over all pixels and channels, and the segmentwise
//! distance for class `c` is the same mean restricted to the pixels labelled
//! `c`. This keeps the per-class bound `λ_c` independent of resolution.

use crate::data::{NoiseVector, SemanticLayout};
use crate::error::{Error, Result};
use crate::models::{Bound, FeatureExtractor};
use crate::tensor::{Real, Tape, Tensor, Var};

/// Loss weights.
#[derive(Debug, Clone, PartialEq)]
pub struct LossConfig {
    /// Weight of the L1 reconstruction term in the generator loss.
    pub alpha: f64,
    /// Weight of the diversity loss in the final objective.
    pub beta: f64,
    /// Per-class distortion bound; a single entry applies to every class.
    pub lambda_c: Vec<f64>,
    /// Content-loss weights, one per feature-extractor stage.
    pub lambda_k: Vec<f64>,
    pub log_eps: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            alpha: 100.0,
            beta: 10.0,
            lambda_c: vec![0.3],
            lambda_k: vec![0.5, 0.5],
            log_eps: crate::tensor::LOG_CLAMP,
        }
    }
}

impl LossConfig {
    pub fn validate(&self, classes: usize) -> Result<()> {
        if self.alpha < 0.0 || self.beta < 0.0 {
            return Err(Error::Config("alpha and beta must be non-negative".into()));
        }
        if self.lambda_c.is_empty() || self.lambda_c.iter().any(|&l| l < 0.0) {
            return Err(Error::Config("lambda_c entries must be non-negative".into()));
        }
        if self.lambda_c.len() != 1 && self.lambda_c.len() != classes {
            return Err(Error::Config(format!(
                "lambda_c has {} entries; expected 1 or {classes}",
                self.lambda_c.len()
            )));
        }
        if self.lambda_k.iter().any(|&l| l < 0.0) || self.lambda_k.iter().sum::<f64>() <= 0.0 {
            return Err(Error::Config("lambda_k must be non-negative with a positive sum".into()));
        }
        if !(self.log_eps > 0.0 && self.log_eps < 0.5) {
            return Err(Error::Config("log_eps must lie in (0, 0.5)".into()));
        }
        Ok(())
    }

    /// `λ_c` for every class.
    pub fn lambda_per_class(&self, classes: usize) -> Vec<f64> {
        if self.lambda_c.len() == 1 {
            vec![self.lambda_c[0]; classes]
        } else {
            self.lambda_c.clone()
        }
    }
}

fn zero<T: Real>(tape: &mut Tape<T>) -> Var {
    tape.constant(Tensor::scalar(T::zero()))
}

fn sum_scalars<T: Real>(tape: &mut Tape<T>, terms: &[Var]) -> Result<Var> {
    let mut it = terms.iter().copied();
    let Some(mut acc) = it.next() else {
        return Ok(zero(tape));
    };
    for t in it {
        acc = tape.add(acc, t)?;
    }
    Ok(acc)
}

/// Mean `|a − b|` over every element.
pub fn global_l1<T: Real>(tape: &mut Tape<T>, a: Var, b: Var) -> Result<Var> {
    let d = tape.sub(a, b)?;
    let d = tape.abs(d);
    Ok(tape.mean(d))
}

/// Mean `|a − b|` over the pixels of class `c` (all channels). Zero when the
/// class is absent.
pub fn segmentwise_l1<T: Real>(
    tape: &mut Tape<T>,
    a: Var,
    b: Var,
    layout: &SemanticLayout,
    c: usize,
) -> Result<Var> {
    let (ch, h, w) = tape.value(a).chw()?;
    if (h, w) != (layout.height(), layout.width()) {
        return Err(Error::Invalid(format!(
            "image is {w}×{h}, layout is {}×{}",
            layout.width(),
            layout.height()
        )));
    }
    let mask = layout.class_mask(c, ch)?;
    let d = tape.sub(a, b)?;
    let d = tape.abs(d);
    Ok(tape.masked_mean(d, mask)?)
}

/// Discriminator objective `mean log D(l,i) + mean log(1 − D(l,G(l,n)))`,
/// to be maximised.
pub fn loss_discriminator<T: Real>(tape: &mut Tape<T>, d_real: Var, d_fake: Var, eps: f64) -> Result<Var> {
    let eps = T::from_f64(eps);
    let lr = tape.log_clamped(d_real, eps);
    let real = tape.mean(lr);
    let one_minus = tape.affine(d_fake, -T::one(), T::one());
    let lf = tape.log_clamped(one_minus, eps);
    let fake = tape.mean(lf);
    Ok(tape.add(real, fake)?)
}

/// Generator objective `mean log(1 − D(l,G(l,n))) + α·L1(G(l,n), i)`, to be
/// minimised.
pub fn loss_generator<T: Real>(
    tape: &mut Tape<T>,
    d_fake: Var,
    fake: Var,
    real: Var,
    alpha: f64,
    eps: f64,
) -> Result<Var> {
    let one_minus = tape.affine(d_fake, -T::one(), T::one());
    let lf = tape.log_clamped(one_minus, T::from_f64(eps));
    let adv = tape.mean(lf);
    if alpha == 0.0 {
        return Ok(adv);
    }
    let l1 = global_l1(tape, fake, real)?;
    let l1 = tape.scale(l1, T::from_f64(alpha));
    Ok(tape.add(adv, l1)?)
}

/// `Σ_k λ_k · mean|Φ_k(fake) − Φ_k(real)|` from precomputed features.
pub fn content_from_features<T: Real>(
    tape: &mut Tape<T>,
    fake: &[Var],
    real: &[Var],
    lambda_k: &[f64],
) -> Result<Var> {
    if fake.len() != real.len() || fake.len() != lambda_k.len() {
        return Err(Error::Invalid(format!(
            "{} fake / {} real feature maps for {} weights",
            fake.len(),
            real.len(),
            lambda_k.len()
        )));
    }
    let mut terms = Vec::with_capacity(fake.len());
    for ((&f, &r), &l) in fake.iter().zip(real).zip(lambda_k) {
        let d = global_l1(tape, f, r)?;
        terms.push(tape.scale(d, T::from_f64(l)));
    }
    sum_scalars(tape, &terms)
}

/// Content loss between a generated image and the ground truth over every
/// stage of the fixed feature extractor. `phi_params` must be a frozen binding.
pub fn loss_content<T: Real>(
    tape: &mut Tape<T>,
    phi: &FeatureExtractor<T>,
    phi_params: &Bound,
    fake: Var,
    real: Var,
    lambda_k: &[f64],
) -> Result<Var> {
    let ff = phi.features(tape, phi_params, fake)?;
    let rf = phi.features(tape, phi_params, real)?;
    content_from_features(tape, &ff, &rf, lambda_k)
}

/// Index and handle of the smallest scalar (ties resolve to the lowest index).
pub fn select_min<T: Real>(tape: &Tape<T>, losses: &[Var]) -> Result<(usize, Var)> {
    let mut best: Option<(usize, Var, T)> = None;
    for (i, &v) in losses.iter().enumerate() {
        let x = tape.value(v).item();
        if best.is_none_or(|(_, _, b)| x < b) {
            best = Some((i, v, x));
        }
    }
    best.map(|(i, v, _)| (i, v))
        .ok_or_else(|| Error::Invalid("hindsight loss over zero outputs".into()))
}

/// Best-of-n content loss: only the output closest to the ground truth is
/// penalised, so gradient reaches that output alone.
pub fn loss_hindsight<T: Real>(
    tape: &mut Tape<T>,
    phi: &FeatureExtractor<T>,
    phi_params: &Bound,
    outputs: &[Var],
    real: Var,
    lambda_k: &[f64],
) -> Result<Var> {
    if outputs.is_empty() {
        return Err(Error::Invalid("hindsight loss over zero outputs".into()));
    }
    let rf = phi.features(tape, phi_params, real)?;
    let mut losses = Vec::with_capacity(outputs.len());
    for &o in outputs {
        let ff = phi.features(tape, phi_params, o)?;
        losses.push(content_from_features(tape, &ff, &rf, lambda_k)?);
    }
    Ok(select_min(tape, &losses)?.1)
}

fn noise_abs(noise: &NoiseVector) -> Vec<f64> {
    noise.values().iter().map(|v| (*v as f64).abs()).collect()
}

/// `−mean_c|n^c| · L1(G(l,0), G(l,n))`.
pub fn diversity_unconditional<T: Real>(
    tape: &mut Tape<T>,
    g0: Var,
    gn: Var,
    noise: &NoiseVector,
) -> Result<Var> {
    if noise.is_empty() {
        return Err(Error::Invalid("empty noise vector".into()));
    }
    let mag = noise_abs(noise).iter().sum::<f64>() / noise.len() as f64;
    let d = global_l1(tape, g0, gn)?;
    Ok(tape.scale(d, T::from_f64(-mag)))
}

fn check_noise(layout: &SemanticLayout, noise: &NoiseVector) -> Result<()> {
    if noise.len() != layout.class_count() {
        return Err(Error::Invalid(format!(
            "noise has {} entries for {} classes",
            noise.len(),
            layout.class_count()
        )));
    }
    Ok(())
}

/// `−Σ_c |n^c| · L1_c(G(l,0), G(l,n))` over the classes present in `layout`.
pub fn diversity_segmentwise<T: Real>(
    tape: &mut Tape<T>,
    g0: Var,
    gn: Var,
    layout: &SemanticLayout,
    noise: &NoiseVector,
) -> Result<Var> {
    check_noise(layout, noise)?;
    let mags = noise_abs(noise);
    let mut terms = Vec::new();
    for c in layout.present_classes() {
        let seg = segmentwise_l1(tape, g0, gn, layout, c)?;
        terms.push(tape.scale(seg, T::from_f64(-mags[c])));
    }
    sum_scalars(tape, &terms)
}

/// Hinged diversity loss `Σ_c |n^c| · max(0, λ_c − L1_c(G(l,0), G(l,n)))`.
/// Absent classes contribute nothing.
pub fn diversity_hinged<T: Real>(
    tape: &mut Tape<T>,
    g0: Var,
    gn: Var,
    layout: &SemanticLayout,
    noise: &NoiseVector,
    lambda_c: &[f64],
) -> Result<Var> {
    check_noise(layout, noise)?;
    if lambda_c.len() != layout.class_count() {
        return Err(Error::Invalid(format!(
            "{} distortion bounds for {} classes",
            lambda_c.len(),
            layout.class_count()
        )));
    }
    let mags = noise_abs(noise);
    let mut terms = Vec::new();
    for c in layout.present_classes() {
        let seg = segmentwise_l1(tape, g0, gn, layout, c)?;
        let gap = tape.affine(seg, -T::one(), T::from_f64(lambda_c[c]));
        let hinge = tape.relu(gap);
        terms.push(tape.scale(hinge, T::from_f64(mags[c])));
    }
    sum_scalars(tape, &terms)
}

/// `base + β·div`.
pub fn objective_combined<T: Real>(tape: &mut Tape<T>, base: Var, div: Var, beta: f64) -> Result<Var> {
    let weighted = tape.scale(div, T::from_f64(beta));
    Ok(tape.add(base, weighted)?)
}
