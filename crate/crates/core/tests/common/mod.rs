//! Oracles shared by the integration and acceptance targets.
#![allow(dead_code)]

use divsynth::data::{NoiseVector, SemanticLayout};
use divsynth::losses;
use divsynth::models::FeatureExtractor;
use divsynth::tensor::{gradient_check_with, Difference, Tape, Tensor, TensorError, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const STEP: f64 = 1e-4;
pub const TOL: f64 = 1e-4;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Uniform in `±[lo, hi)`; keeps kinked primitives away from their kink.
pub fn signed_away(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    let v = (0..n)
        .map(|_| {
            let m = rng.random_range(lo..hi);
            if rng.random_bool(0.5) { m } else { -m }
        })
        .collect();
    Tensor::from_vec(shape, v).unwrap()
}

pub fn random_layout(rng: &mut ChaCha8Rng, w: usize, h: usize, classes: usize) -> SemanticLayout {
    let px = (0..w * h).map(|_| rng.random_range(0..classes as u8)).collect();
    SemanticLayout::new(w, h, classes, px).unwrap()
}

/// Layout in which every class occurs at least once.
pub fn full_layout(rng: &mut ChaCha8Rng, w: usize, h: usize, classes: usize) -> SemanticLayout {
    loop {
        let l = random_layout(rng, w, h, classes);
        if l.histogram().iter().all(|&n| n > 0) {
            return l;
        }
    }
}

pub fn random_noise(rng: &mut ChaCha8Rng, classes: usize) -> NoiseVector {
    NoiseVector::new((0..classes).map(|_| rng.random_range(0.1f32..1.0)).collect()).unwrap()
}

fn te(e: divsynth::Error) -> TensorError {
    TensorError::GradCheck(e.to_string())
}

/// Worst relative error of one named check over all its points.
#[derive(Debug, Clone)]
pub struct Check {
    pub name: String,
    pub points: usize,
    pub max_rel: f64,
}

impl Check {
    pub fn passed(&self) -> bool {
        self.max_rel <= TOL
    }
}

struct Acc {
    name: String,
    points: usize,
    max_rel: f64,
}

impl Acc {
    fn new(name: &str) -> Self {
        Self { name: name.into(), points: 0, max_rel: 0.0 }
    }

    fn run<F>(&mut self, f: F, x: &Tensor<f64>, mode: Difference)
    where
        F: Fn(&mut Tape<f64>, Var) -> Result<Var, TensorError>,
    {
        let r = gradient_check_with(f, x, STEP, TOL, mode)
            .unwrap_or_else(|e| panic!("{}: {e}", self.name));
        self.points += 1;
        self.max_rel = self.max_rel.max(r.max_rel_error);
    }

    fn done(self) -> Check {
        Check { name: self.name, points: self.points, max_rel: self.max_rel }
    }
}

/// Weighted sum `Σ cos(0.917·i + phase)·v_i`, so every output element gets a
/// distinct cotangent whatever the output shape.
fn probe(t: &mut Tape<f64>, v: Var, phase: f64) -> Result<Var, TensorError> {
    let shape = t.shape(v).to_vec();
    let n = t.value(v).len();
    let w = Tensor::from_vec(&shape, (0..n).map(|i| (0.917 * i as f64 + phase).cos()).collect())?;
    let p = t.mul_const(v, w)?;
    Ok(t.sum(p))
}

const POINTS: usize = 20;

/// Finite-difference checks of every tape primitive, 20 random inputs each.
pub fn primitive_checks(seed: u64) -> Vec<Check> {
    let mut r = rng(seed);
    let shape = [3, 4, 5];
    let mut out = Vec::new();

    macro_rules! unary {
        ($name:expr, $gen:expr, |$t:ident, $v:ident| $body:expr) => {{
            let mut acc = Acc::new($name);
            for _ in 0..POINTS {
                let x: Tensor<f64> = $gen(&mut r);
                let w: f64 = r.random_range(0.0..6.0);
                acc.run(
                    |$t, $v| {
                        let y = $body?;
                        probe($t, y, w)
                    },
                    &x,
                    Difference::Central,
                );
            }
            out.push(acc.done());
        }};
    }

    let any = |r: &mut ChaCha8Rng| uniform(r, &shape, -2.0, 2.0);
    let away = |r: &mut ChaCha8Rng| signed_away(r, &shape, 0.01, 2.0);
    let positive = |r: &mut ChaCha8Rng| uniform(r, &shape, 0.05, 2.0);

    unary!("affine", any, |t, v| Ok::<_, TensorError>(t.affine(v, -1.7, 0.3)));
    unary!("scale", any, |t, v| Ok::<_, TensorError>(t.scale(v, 2.5)));
    unary!("abs", away, |t, v| Ok::<_, TensorError>(t.abs(v)));
    unary!("relu", away, |t, v| Ok::<_, TensorError>(t.relu(v)));
    unary!("leaky_relu", away, |t, v| Ok::<_, TensorError>(t.leaky_relu(v, 0.2)));
    unary!("sigmoid", any, |t, v| Ok::<_, TensorError>(t.sigmoid(v)));
    unary!("log_clamped", positive, |t, v| Ok::<_, TensorError>(t.log_clamped(v, 1e-7)));
    unary!("sum", any, |t, v| Ok::<_, TensorError>(t.sum(v)));
    unary!("mean", any, |t, v| Ok::<_, TensorError>(t.mean(v)));
    unary!("upsample2", any, |t, v| t.upsample2(v));
    unary!("narrow_channels", any, |t, v| t.narrow_channels(v, 1, 2));

    // Binary ops: one operand is the checked leaf, the other a parameter
    // leaf too, so both gradient paths run.
    let mut binary = |name: &str, op: &dyn Fn(&mut Tape<f64>, Var, Var) -> Result<Var, TensorError>| {
        let mut acc = Acc::new(name);
        for _ in 0..POINTS {
            let x = uniform(&mut r, &shape, -2.0, 2.0);
            let other = uniform(&mut r, &shape, -2.0, 2.0);
            let w: f64 = r.random_range(0.0..6.0);
            for side in [false, true] {
                acc.run(
                    |t, v| {
                        let o = t.param(other.clone());
                        let y = if side { op(t, o, v)? } else { op(t, v, o)? };
                        probe(t, y, w)
                    },
                    &x,
                    Difference::Central,
                );
            }
        }
        out.push(acc.done());
    };
    binary("add", &|t, a, b| t.add(a, b));
    binary("sub", &|t, a, b| t.sub(a, b));
    binary("mul", &|t, a, b| t.mul(a, b));
    binary("concat", &|t, a, b| t.concat(&[a, b, a]));

    let mut acc = Acc::new("mul_const");
    for _ in 0..POINTS {
        let x = uniform(&mut r, &shape, -2.0, 2.0);
        let c = uniform(&mut r, &shape, -2.0, 2.0);
        let w: f64 = r.random_range(0.0..6.0);
        acc.run(|t, v| { let y = t.mul_const(v, c.clone())?; probe(t, y, w) }, &x, Difference::Central);
    }
    out.push(acc.done());

    let mut acc = Acc::new("masked_mean");
    for _ in 0..POINTS {
        let x = uniform(&mut r, &shape, -2.0, 2.0);
        let m = Tensor::from_vec(&shape, (0..60).map(|_| if r.random_bool(0.4) { 1.0 } else { 0.0 }).collect()).unwrap();
        acc.run(|t, v| t.masked_mean(v, m.clone()), &x, Difference::Central);
    }
    out.push(acc.done());

    // conv2d: gradient with respect to input, kernel and bias in turn.
    let mut acc = Acc::new("conv2d");
    for i in 0..POINTS {
        let (stride, pad) = [(1, 1), (2, 1), (1, 0), (2, 0)][i % 4];
        let x = uniform(&mut r, &[2, 6, 7], -1.0, 1.0);
        let k = uniform(&mut r, &[3, 2, 3, 3], -1.0, 1.0);
        let b = uniform(&mut r, &[3], -1.0, 1.0);
        let w: f64 = r.random_range(0.0..6.0);
        acc.run(|t, v| { let (kk, bb) = (t.param(k.clone()), t.param(b.clone())); let y = t.conv2d(v, kk, bb, stride, pad)?; probe(t, y, w) }, &x, Difference::Central);
        acc.run(|t, v| { let (xx, bb) = (t.param(x.clone()), t.param(b.clone())); let y = t.conv2d(xx, v, bb, stride, pad)?; probe(t, y, w) }, &k, Difference::Central);
        acc.run(|t, v| { let (xx, kk) = (t.param(x.clone()), t.param(k.clone())); let y = t.conv2d(xx, kk, v, stride, pad)?; probe(t, y, w) }, &b, Difference::Central);
    }
    out.push(acc.done());

    let mut acc = Acc::new("layer_norm");
    for _ in 0..POINTS {
        let x = uniform(&mut r, &shape, -2.0, 2.0);
        let g = uniform(&mut r, &[3], 0.5, 1.5);
        let b = uniform(&mut r, &[3], -0.5, 0.5);
        let w: f64 = r.random_range(0.0..6.0);
        acc.run(|t, v| { let (gg, bb) = (t.param(g.clone()), t.param(b.clone())); let y = t.layer_norm(v, gg, bb, 1e-5)?; probe(t, y, w) }, &x, Difference::Central);
        acc.run(|t, v| { let (xx, bb) = (t.param(x.clone()), t.param(b.clone())); let y = t.layer_norm(xx, v, bb, 1e-5)?; probe(t, y, w) }, &g, Difference::Central);
        acc.run(|t, v| { let (xx, gg) = (t.param(x.clone()), t.param(g.clone())); let y = t.layer_norm(xx, gg, v, 1e-5)?; probe(t, y, w) }, &b, Difference::Central);
    }
    out.push(acc.done());
    out
}

const LOSS_POINTS: usize = 10;
const W: usize = 8;
const H: usize = 8;
const C: usize = 3;

/// `g0` plus a per-pixel offset of magnitude at least 0.02, so `|gn − g0|`
/// never crosses zero under the finite-difference step.
fn offset_pair(r: &mut ChaCha8Rng) -> (Tensor<f64>, Tensor<f64>) {
    let g0 = uniform(r, &[3, H, W], 0.2, 0.8);
    let d = signed_away(r, &[3, H, W], 0.02, 0.4);
    let gn = Tensor::from_vec(&[3, H, W], g0.data().iter().zip(d.data()).map(|(a, b)| a + b).collect()).unwrap();
    (g0, gn)
}

/// Stacks `[g0; gn]` into a single `[6,H,W]` leaf.
fn stacked(g0: &Tensor<f64>, gn: &Tensor<f64>) -> Tensor<f64> {
    let mut v = g0.data().to_vec();
    v.extend_from_slice(gn.data());
    Tensor::from_vec(&[6, H, W], v).unwrap()
}

/// `gn` whose segment-`c` distance from `g0` is exactly `target` for every
/// class (each pixel offset by ±target with random sign).
fn pair_at_distance(r: &mut ChaCha8Rng, target: f64) -> (Tensor<f64>, Tensor<f64>) {
    let g0 = uniform(r, &[3, H, W], 0.4, 0.6);
    let gn = g0
        .data()
        .iter()
        .map(|&a| if r.random_bool(0.5) { a + target } else { a - target })
        .collect();
    (g0, Tensor::from_vec(&[3, H, W], gn).unwrap())
}

/// True when every feature activation and every feature difference between
/// `fake` and `real` is at least `margin` away from zero, so a finite-difference
/// step cannot cross a leaky-ReLU or L1 kink.
fn clear_of_kinks(phi: &FeatureExtractor<f64>, fake: &Tensor<f64>, real: &Tensor<f64>, margin: f64) -> bool {
    let mut t = Tape::new();
    let p = phi.params.bind_frozen(&mut t);
    let (f, r) = (t.constant(fake.clone()), t.constant(real.clone()));
    let ff = phi.features(&mut t, &p, f).unwrap();
    let rf = phi.features(&mut t, &p, r).unwrap();
    ff.iter().zip(&rf).all(|(&a, &b)| {
        let (va, vb) = (t.value(a).data(), t.value(b).data());
        va.iter().zip(vb).all(|(x, y)| x.abs() > margin && y.abs() > margin && (x - y).abs() > margin)
    })
}

/// A `(fake, real)` pair clear of every kink of the content loss.
fn smooth_content_pair(r: &mut ChaCha8Rng, phi: &FeatureExtractor<f64>) -> (Tensor<f64>, Tensor<f64>) {
    loop {
        let (fake, real) = offset_pair(r);
        if clear_of_kinks(phi, &fake, &real, 1e-3) {
            return (fake, real);
        }
    }
}

fn split(t: &mut Tape<f64>, v: Var) -> Result<(Var, Var), TensorError> {
    Ok((t.narrow_channels(v, 0, 3)?, t.narrow_channels(v, 3, 3)?))
}

/// Finite-difference checks of every loss, at least ten random points each,
/// with hinge points placed at and around the kink.
pub fn loss_checks(seed: u64) -> Vec<Check> {
    let mut r = rng(seed);
    let mut out = Vec::new();

    let mut acc = Acc::new("global_l1");
    for _ in 0..LOSS_POINTS {
        let (a, b) = offset_pair(&mut r);
        acc.run(|t, v| { let (a, b) = split(t, v)?; losses::global_l1(t, a, b).map_err(te) }, &stacked(&a, &b), Difference::Central);
    }
    out.push(acc.done());

    let mut acc = Acc::new("segmentwise_l1");
    for _ in 0..LOSS_POINTS {
        let l = full_layout(&mut r, W, H, C);
        let (a, b) = offset_pair(&mut r);
        let c = r.random_range(0..C);
        acc.run(|t, v| { let (a, b) = split(t, v)?; losses::segmentwise_l1(t, a, b, &l, c).map_err(te) }, &stacked(&a, &b), Difference::Central);
    }
    out.push(acc.done());

    // Adversarial objectives: the leaf stacks real and fake discriminator
    // scores (and, for the generator, the fake image).
    let mut acc = Acc::new("loss_discriminator");
    for _ in 0..LOSS_POINTS {
        let s = uniform(&mut r, &[2, 3, 3], 0.05, 0.95);
        acc.run(
            |t, v| {
                let (dr, df) = (t.narrow_channels(v, 0, 1)?, t.narrow_channels(v, 1, 1)?);
                losses::loss_discriminator(t, dr, df, 1e-7).map_err(te)
            },
            &s,
            Difference::Central,
        );
    }
    out.push(acc.done());

    let mut acc = Acc::new("loss_generator");
    for _ in 0..LOSS_POINTS {
        let (fake, real) = offset_pair(&mut r);
        let real_c = real.clone();
        let mut v = fake.data().to_vec();
        v.extend((0..H * W).map(|_| r.random_range(0.05..0.95)));
        let leaf = Tensor::from_vec(&[4, H, W], v).unwrap();
        acc.run(
            |t, v| {
                let f = t.narrow_channels(v, 0, 3)?;
                let d = t.narrow_channels(v, 3, 1)?;
                let i = t.constant(real_c.clone());
                losses::loss_generator(t, d, f, i, 100.0, 1e-7).map_err(te)
            },
            &leaf,
            Difference::Central,
        );
    }
    out.push(acc.done());

    let phi = FeatureExtractor::<f64>::new(&[4, 6], 7).unwrap();
    let mut acc = Acc::new("loss_content");
    for _ in 0..LOSS_POINTS {
        let (fake, real) = smooth_content_pair(&mut r, &phi);
        acc.run(
            |t, v| {
                let p = phi.params.bind_frozen(t);
                let i = t.constant(real.clone());
                losses::loss_content(t, &phi, &p, v, i, &[0.5, 0.5]).map_err(te)
            },
            &fake,
            Difference::Central,
        );
    }
    out.push(acc.done());

    let mut acc = Acc::new("loss_hindsight");
    for _ in 0..LOSS_POINTS {
        let (near, real) = smooth_content_pair(&mut r, &phi);
        // Second output is far from the target so the minimum never flips.
        let far = real.map(|x| x + 2.0);
        let (first, second) = if r.random_bool(0.5) { (near, far) } else { (far, near) };
        acc.run(
            |t, v| {
                let p = phi.params.bind_frozen(t);
                let i = t.constant(real.clone());
                let (a, b) = split(t, v)?;
                losses::loss_hindsight(t, &phi, &p, &[a, b], i, &[0.5, 0.5]).map_err(te)
            },
            &stacked(&first, &second),
            Difference::Central,
        );
    }
    out.push(acc.done());

    let mut acc = Acc::new("diversity_unconditional");
    for _ in 0..LOSS_POINTS {
        let (g0, gn) = offset_pair(&mut r);
        let n = random_noise(&mut r, C);
        acc.run(|t, v| { let (a, b) = split(t, v)?; losses::diversity_unconditional(t, a, b, &n).map_err(te) }, &stacked(&g0, &gn), Difference::Central);
    }
    out.push(acc.done());

    let mut acc = Acc::new("diversity_segmentwise");
    for _ in 0..LOSS_POINTS {
        let l = full_layout(&mut r, W, H, C);
        let (g0, gn) = offset_pair(&mut r);
        let n = random_noise(&mut r, C);
        acc.run(|t, v| { let (a, b) = split(t, v)?; losses::diversity_segmentwise(t, a, b, &l, &n).map_err(te) }, &stacked(&g0, &gn), Difference::Central);
    }
    out.push(acc.done());

    let lambda = vec![0.3; C];
    let mut acc = Acc::new("diversity_hinged");
    for _ in 0..LOSS_POINTS {
        let l = full_layout(&mut r, W, H, C);
        let (g0, gn) = offset_pair(&mut r);
        let n = random_noise(&mut r, C);
        acc.run(|t, v| { let (a, b) = split(t, v)?; losses::diversity_hinged(t, a, b, &l, &n, &lambda).map_err(te) }, &stacked(&g0, &gn), Difference::Central);
    }
    out.push(acc.done());

    // Near the kink the central quotient is still valid as long as the step
    // cannot move a segment distance across λ; exactly at it only a one-sided
    // quotient matches the subgradient the tape returns.
    let mut acc = Acc::new("diversity_hinged_kink");
    for offset in [-1e-3, -1e-5, 0.0, 1e-5, 1e-3] {
        for _ in 0..2 {
            let l = full_layout(&mut r, W, H, C);
            let (g0, gn) = pair_at_distance(&mut r, 0.3 + offset);
            let n = random_noise(&mut r, C);
            let mode = if offset == 0.0 { Difference::OneSided } else { Difference::Central };
            acc.run(|t, v| { let (a, b) = split(t, v)?; losses::diversity_hinged(t, a, b, &l, &n, &lambda).map_err(te) }, &stacked(&g0, &gn), mode);
        }
    }
    out.push(acc.done());

    let mut acc = Acc::new("objective_combined");
    for _ in 0..LOSS_POINTS {
        let l = full_layout(&mut r, W, H, C);
        let (g0, gn) = offset_pair(&mut r);
        let n = random_noise(&mut r, C);
        let shift = signed_away(&mut r, &[3, H, W], 0.02, 0.4);
        let real = Tensor::from_vec(&[3, H, W], gn.data().iter().zip(shift.data()).map(|(a, b)| a + b).collect()).unwrap();
        acc.run(
            |t, v| {
                let (a, b) = split(t, v)?;
                let i = t.constant(real.clone());
                let base = losses::global_l1(t, b, i).map_err(te)?;
                let div = losses::diversity_hinged(t, a, b, &l, &n, &lambda).map_err(te)?;
                losses::objective_combined(t, base, div, 10.0).map_err(te)
            },
            &stacked(&g0, &gn),
            Difference::Central,
        );
    }
    out.push(acc.done());
    out
}

/// Pixel-counting accuracy.
pub fn brute_accuracy(pred: &SemanticLayout, truth: &SemanticLayout) -> f64 {
    let mut hit = 0;
    for y in 0..truth.height() {
        for x in 0..truth.width() {
            if pred.get(x, y) == truth.get(x, y) {
                hit += 1;
            }
        }
    }
    hit as f64 / (truth.width() * truth.height()) as f64
}

/// Per-class IoU by counting, `None` where the class is in neither layout;
/// the mean runs over classes present in `truth`.
pub fn brute_iou(pred: &SemanticLayout, truth: &SemanticLayout) -> (f64, Vec<Option<f64>>) {
    let classes = truth.class_count();
    let mut per = Vec::new();
    let (mut sum, mut n) = (0.0, 0);
    for c in 0..classes as u8 {
        let (mut inter, mut union, mut in_truth) = (0usize, 0usize, false);
        for y in 0..truth.height() {
            for x in 0..truth.width() {
                let (p, t) = (pred.get(x, y) == c, truth.get(x, y) == c);
                in_truth |= t;
                inter += (p && t) as usize;
                union += (p || t) as usize;
            }
        }
        let v = (union > 0).then(|| inter as f64 / union as f64);
        if in_truth {
            sum += v.unwrap();
            n += 1;
        }
        per.push(v);
    }
    (sum / n as f64, per)
}

/// Number of layout pairs on which `accuracy`/`iou` disagree with counting,
/// over `pairs` random 8×8 pairs.
pub fn metric_mismatches(seed: u64, pairs: usize) -> usize {
    use divsynth::evaluation::{accuracy, iou};
    let mut r = rng(seed);
    let mut bad = 0;
    for _ in 0..pairs {
        let classes = r.random_range(1..=6);
        let truth = random_layout(&mut r, 8, 8, classes);
        // Mix exact copies, sparse corruption and unrelated predictions.
        let pred = match r.random_range(0..3) {
            0 => truth.clone(),
            1 => {
                let px = truth
                    .pixels()
                    .iter()
                    .map(|&p| if r.random_bool(0.2) { r.random_range(0..classes as u8) } else { p })
                    .collect();
                SemanticLayout::new(8, 8, classes, px).unwrap()
            }
            _ => random_layout(&mut r, 8, 8, classes),
        };
        let (mean, per) = brute_iou(&pred, &truth);
        let rep = iou(&pred, &truth).unwrap();
        if accuracy(&pred, &truth).unwrap() != brute_accuracy(&pred, &truth) || rep.mean != mean || rep.per_class != per {
            bad += 1;
        }
    }
    bad
}

/// Composition count by odometer enumeration of every noise setting.
pub fn enumerate_compositions(ks: &[u64]) -> u128 {
    let mut digits = vec![0u64; ks.len()];
    let mut n = 0u128;
    loop {
        n += 1;
        let mut i = 0;
        loop {
            if i == ks.len() {
                return n;
            }
            digits[i] += 1;
            if digits[i] < ks[i] {
                break;
            }
            digits[i] = 0;
            i += 1;
        }
    }
}

/// Random k-lists on which `count_compositions` disagrees with enumeration.
pub fn composition_mismatches(seed: u64, lists: usize) -> usize {
    let mut r = rng(seed);
    (0..lists)
        .filter(|_| {
            let len = r.random_range(1..=5);
            let ks: Vec<u64> = (0..len).map(|_| r.random_range(1..=6)).collect();
            divsynth::data::count_compositions(&ks).unwrap() != enumerate_compositions(&ks)
        })
        .count()
}

/// Worst absolute deviation of `Σ_c w_c·segL1_c` from the global L1, with
/// `w_c` the pixel share of class `c`.
pub fn partition_error(seed: u64, trials: usize) -> f64 {
    let mut r = rng(seed);
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let (w, h) = (r.random_range(1..10), r.random_range(1..10));
        let classes = r.random_range(1..5);
        let l = random_layout(&mut r, w, h, classes);
        let a = uniform(&mut r, &[3, h, w], 0.0, 1.0);
        let b = uniform(&mut r, &[3, h, w], 0.0, 1.0);
        let mut t = Tape::new();
        let (va, vb) = (t.constant(a), t.constant(b));
        let g = losses::global_l1(&mut t, va, vb).unwrap();
        let hist = l.histogram();
        let mut s = 0.0;
        for c in 0..classes {
            let seg = losses::segmentwise_l1(&mut t, va, vb, &l, c).unwrap();
            s += hist[c] as f64 / (w * h) as f64 * t.value(seg).item();
        }
        worst = worst.max((s - t.value(g).item()).abs());
    }
    worst
}

/// Worst deviation from bilinearity of the unconditional diversity term:
/// scaling every `|n^c|` by `t`, or `gn − g0` by `t`, scales the loss by `t`.
pub fn bilinearity_error(seed: u64, trials: usize) -> f64 {
    let mut r = rng(seed);
    let mut worst = 0.0f64;
    let eval = |g0: &Tensor<f64>, gn: &Tensor<f64>, n: &NoiseVector| {
        let mut t = Tape::new();
        let (a, b) = (t.constant(g0.clone()), t.constant(gn.clone()));
        let d = losses::diversity_unconditional(&mut t, a, b, n).unwrap();
        t.value(d).item()
    };
    for _ in 0..trials {
        let g0 = uniform(&mut r, &[3, 4, 4], 0.3, 0.7);
        let gn = uniform(&mut r, &[3, 4, 4], 0.3, 0.7);
        let n = random_noise(&mut r, 4);
        let s: f32 = r.random_range(0.0..1.0);
        let base = eval(&g0, &gn, &n);
        let scaled_n = NoiseVector::new(n.values().iter().map(|v| v * s).collect()).unwrap();
        // n is stored in f32, so the scaled vector is the exact product only
        // up to f32 rounding; compare against the realised ratio.
        let ratio = scaled_n.values().iter().map(|v| v.abs() as f64).sum::<f64>()
            / n.values().iter().map(|v| v.abs() as f64).sum::<f64>();
        worst = worst.max((eval(&g0, &gn, &scaled_n) - ratio * base).abs());
        let s = s as f64;
        let gs = Tensor::from_vec(&[3, 4, 4], g0.data().iter().zip(gn.data()).map(|(a, b)| a + s * (b - a)).collect()).unwrap();
        worst = worst.max((eval(&g0, &gs, &n) - s * base).abs());
    }
    worst
}

/// Small, fast run: 16×16 world, narrow networks, a handful of samples.
pub fn tiny_run(base: &str) -> divsynth::config::RunConfig {
    let mut run = divsynth::config::RunConfig::default();
    for (k, v) in [
        ("width", "16"),
        ("height", "16"),
        ("roof_rows", "2,3"),
        ("window_rows", "1,2"),
        ("window_cols", "1,2"),
        ("window_size", "2,3"),
        ("door_width", "2,4"),
        ("door_height", "3,5"),
        ("train_count", "6"),
        ("test_count", "2"),
        ("base", base),
        ("epochs", "2"),
        ("crn_doublings", "3"),
        ("crn_channels", "8"),
        ("phi_widths", "4,8"),
        ("unet_widths", "8,16"),
        ("disc_widths", "8,16"),
        ("eval_samples", "3"),
        ("reality_samples", "2"),
    ] {
        run.set(k, v).unwrap();
    }
    run.validate().unwrap();
    run
}

pub fn tiny_data(run: &divsynth::config::RunConfig) -> divsynth::data::Dataset {
    divsynth::data::generate(&run.world, run.train_count + run.test_count)
        .unwrap()
        .with_holdout(run.test_count)
}

/// Minimal HTTP/1.1 response.
#[derive(Debug, Clone, PartialEq)]
pub struct Response {
    pub status: u16,
    pub headers: Vec<(String, String)>,
    pub body: Vec<u8>,
}

impl Response {
    pub fn header(&self, name: &str) -> Option<&str> {
        self.headers.iter().find(|(k, _)| k.eq_ignore_ascii_case(name)).map(|(_, v)| v.as_str())
    }

    pub fn json(&self) -> serde_json::Value {
        serde_json::from_slice(&self.body).unwrap()
    }
}

/// One request over a fresh connection, read until the server closes it.
pub fn http(addr: std::net::SocketAddr, method: &str, path: &str, body: Option<&str>) -> Response {
    use std::io::{Read, Write};
    let mut s = std::net::TcpStream::connect(addr).unwrap();
    let body = body.unwrap_or("");
    let req = format!(
        "{method} {path} HTTP/1.1\r\nHost: {addr}\r\nConnection: close\r\nContent-Type: application/json\r\nContent-Length: {}\r\n\r\n{body}",
        body.len()
    );
    s.write_all(req.as_bytes()).unwrap();
    let mut raw = Vec::new();
    s.read_to_end(&mut raw).unwrap();
    let split = raw.windows(4).position(|w| w == b"\r\n\r\n").expect("header terminator");
    let head = String::from_utf8(raw[..split].to_vec()).unwrap();
    let mut lines = head.split("\r\n");
    let status = lines.next().unwrap().split(' ').nth(1).unwrap().parse().unwrap();
    let headers: Vec<(String, String)> = lines
        .map(|l| {
            let (k, v) = l.split_once(':').unwrap();
            (k.trim().to_ascii_lowercase(), v.trim().to_string())
        })
        .collect();
    let mut body = raw[split + 4..].to_vec();
    if headers.iter().any(|(k, v)| k == "transfer-encoding" && v.contains("chunked")) {
        body = dechunk(&body);
    }
    Response { status, headers, body }
}

fn dechunk(mut b: &[u8]) -> Vec<u8> {
    let mut out = Vec::new();
    loop {
        let eol = b.windows(2).position(|w| w == b"\r\n").unwrap();
        let n = usize::from_str_radix(std::str::from_utf8(&b[..eol]).unwrap().trim(), 16).unwrap();
        if n == 0 {
            return out;
        }
        out.extend_from_slice(&b[eol + 2..eol + 2 + n]);
        b = &b[eol + 4 + n..];
    }
}

/// Serves `state` on an ephemeral port from a background runtime.
pub fn spawn_server(state: divsynth::serve::ServeState) -> std::net::SocketAddr {
    let (tx, rx) = std::sync::mpsc::channel();
    std::thread::spawn(move || {
        let rt = tokio::runtime::Builder::new_multi_thread().worker_threads(4).enable_all().build().unwrap();
        rt.block_on(async move {
            let l = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
            tx.send(l.local_addr().unwrap()).unwrap();
            divsynth::serve::run(l, std::sync::Arc::new(state)).await.unwrap();
        });
    });
    rx.recv().unwrap()
}

/// Serving state over an untrained tiny generator and the test layouts.
pub fn tiny_state() -> divsynth::serve::ServeState {
    let run = tiny_run("crn");
    let data = tiny_data(&run);
    let g = run.train.build_generator(4).unwrap();
    let layouts = data
        .samples()
        .iter()
        .take(3)
        .enumerate()
        .map(|(i, s)| (format!("{i:04}"), s.layout.clone()))
        .collect();
    divsynth::serve::ServeState::new(g, layouts, run.world.class_names.clone(), run.world.palette.clone()).unwrap()
}
