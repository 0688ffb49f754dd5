//! Two-forward diversity training around either base network, with Adam
//! updates, per-epoch metrics and resumable checkpoints.
//!
//! All randomness (shuffling, augmentation, noise, dropout) is drawn from a
//! single ChaCha stream owned by the [`Trainer`], so a run is a pure function
//! of the dataset and the config.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;
use crate::data::{augment, AugmentParams, ImageRgb, NoiseVector, Sample, SemanticLayout, Split};
use crate::data::{write_atomic, Dataset};
use crate::error::{Error, Result};
use crate::losses::{self, LossConfig};
use crate::models::{
    Checkpoint, CrnCascade, CrnConfig, DiscConfig, FeatureExtractor, Generator, GeneratorUNet,
    ParamStore, PatchDiscriminator, UNetConfig,
};
use crate::tensor::{Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaseKind {
    Gan,
    Crn,
}

impl BaseKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Gan => "gan",
            Self::Crn => "crn",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "gan" => Ok(Self::Gan),
            "crn" => Ok(Self::Crn),
            _ => Err(Error::Config(format!("base must be gan or crn, got {s:?}"))),
        }
    }
}

/// Which diversity term enters the objective. `Off` performs the same
/// forwards and RNG draws as the others but never records the term.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiversityMode {
    Hinged,
    Segmentwise,
    Unconditional,
    Off,
}

impl DiversityMode {
    pub fn name(self) -> &'static str {
        match self {
            Self::Hinged => "hinged",
            Self::Segmentwise => "segmentwise",
            Self::Unconditional => "unconditional",
            Self::Off => "off",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "hinged" => Ok(Self::Hinged),
            "segmentwise" => Ok(Self::Segmentwise),
            "unconditional" => Ok(Self::Unconditional),
            "off" => Ok(Self::Off),
            _ => Err(Error::Config(format!(
                "diversity must be hinged, segmentwise, unconditional or off, got {s:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub base: BaseKind,
    pub epochs: usize,
    pub lr: f64,
    pub adam_b1: f64,
    pub adam_b2: f64,
    pub adam_eps: f64,
    pub loss: LossConfig,
    pub diversity: DiversityMode,
    pub seed: u64,
    /// Write a checkpoint every this many epochs (0: only at the end).
    pub checkpoint_every: usize,
    pub augment: bool,
    pub jitter: usize,
    pub flip_prob: f64,
    pub unet_widths: Vec<usize>,
    pub dropout: f64,
    pub disc_widths: Vec<usize>,
    pub crn_base: usize,
    pub crn_doublings: usize,
    pub crn_channels: usize,
    pub crn_outputs: usize,
    pub phi_widths: Vec<usize>,
    pub phi_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            base: BaseKind::Crn,
            epochs: 100,
            lr: 2e-4,
            adam_b1: 0.5,
            adam_b2: 0.999,
            adam_eps: 1e-8,
            loss: LossConfig::default(),
            diversity: DiversityMode::Hinged,
            seed: 0,
            checkpoint_every: 0,
            augment: false,
            jitter: 4,
            flip_prob: 0.5,
            unet_widths: vec![16, 32, 64],
            dropout: 0.5,
            disc_widths: vec![16, 32, 64],
            crn_base: 2,
            crn_doublings: 4,
            crn_channels: 32,
            crn_outputs: 1,
            phi_widths: vec![16, 32],
            phi_seed: 7,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, classes: usize) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.adam_b1) || !(0.0..1.0).contains(&self.adam_b2) || self.adam_eps <= 0.0 {
            return Err(Error::Config("adam betas must lie in [0,1) and epsilon be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config("dropout must lie in [0,1)".into()));
        }
        if self.crn_outputs == 0 || self.crn_channels == 0 || self.crn_base == 0 {
            return Err(Error::Config("crn sizes must be positive".into()));
        }
        if self.phi_widths.len() != self.loss.lambda_k.len() {
            return Err(Error::Config(format!(
                "{} feature stages need as many lambda_k weights, got {}",
                self.phi_widths.len(),
                self.loss.lambda_k.len()
            )));
        }
        self.loss.validate(classes)
    }

    pub fn unet(&self, classes: usize) -> UNetConfig {
        UNetConfig {
            classes,
            widths: self.unet_widths.clone(),
            dropout: self.dropout,
        }
    }

    pub fn disc(&self, classes: usize) -> DiscConfig {
        DiscConfig {
            classes,
            widths: self.disc_widths.clone(),
        }
    }

    pub fn crn(&self, classes: usize) -> CrnConfig {
        CrnConfig {
            classes,
            base: (self.crn_base, self.crn_base),
            doublings: self.crn_doublings,
            channels: self.crn_channels,
            outputs: self.crn_outputs,
        }
    }

    /// Initialisation stream, independent of the training stream.
    pub fn init_rng(&self) -> ChaCha8Rng {
        let mut r = ChaCha8Rng::seed_from_u64(self.seed);
        r.set_stream(1);
        r
    }

    pub fn train_rng(&self) -> ChaCha8Rng {
        let mut r = ChaCha8Rng::seed_from_u64(self.seed);
        r.set_stream(2);
        r
    }

    /// Freshly initialised generator for this config.
    pub fn build_generator(&self, classes: usize) -> Result<Generator<f32>> {
        let mut rng = self.init_rng();
        Ok(match self.base {
            BaseKind::Gan => Generator::UNet(GeneratorUNet::new(self.unet(classes), &mut rng)?),
            BaseKind::Crn => Generator::Crn(CrnCascade::new(self.crn(classes), &mut rng)?),
        })
    }
}

/// Bias-corrected Adam moments for one parameter store.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor<f32>>,
    pub v: Vec<Tensor<f32>>,
    pub t: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamParams {
    pub lr: f64,
    pub b1: f64,
    pub b2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(store: &ParamStore<f32>) -> Self {
        let zeros: Vec<_> = store.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    /// One Adam step. Nothing is modified if any gradient is non-finite or
    /// mis-shaped.
    pub fn update(&mut self, store: &mut ParamStore<f32>, grads: &[Tensor<f32>], hp: AdamParams) -> Result<()> {
        if grads.len() != store.len() || self.m.len() != store.len() {
            return Err(Error::Invalid(format!(
                "{} gradients and {} moment buffers for {} parameters",
                grads.len(),
                self.m.len(),
                store.len()
            )));
        }
        for ((g, p), name) in grads.iter().zip(store.tensors()).zip(store.names()) {
            if g.shape() != p.shape() {
                return Err(Error::Invalid(format!("gradient for {name} has shape {:?}", g.shape())));
            }
            if !g.all_finite() {
                return Err(Error::NonFinite(format!("gradient of {name}")));
            }
        }
        self.t += 1;
        let t = self.t as i32;
        let c1 = (1.0 - hp.b1.powi(t)) as f32;
        let c2 = (1.0 - hp.b2.powi(t)) as f32;
        let (b1, b2, lr, eps) = (hp.b1 as f32, hp.b2 as f32, hp.lr as f32, hp.eps as f32);
        for (i, p) in store.tensors_mut().iter_mut().enumerate() {
            let g = grads[i].data();
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            for (j, w) in p.data_mut().iter_mut().enumerate() {
                m[j] = b1 * m[j] + (1.0 - b1) * g[j];
                v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
                let mh = m[j] / c1;
                let vh = v[j] / c2;
                *w -= lr * mh / (vh.sqrt() + eps);
            }
        }
        Ok(())
    }

    fn save(&self, ck: &mut Checkpoint, prefix: &str, store: &ParamStore<f32>) {
        for (name, (m, v)) in store.names().iter().zip(self.m.iter().zip(&self.v)) {
            ck.insert(format!("{prefix}.m.{name}"), m.clone());
            ck.insert(format!("{prefix}.v.{name}"), v.clone());
        }
        ck.insert_u64(&format!("{prefix}.t"), self.t);
    }

    fn load(ck: &Checkpoint, prefix: &str, store: &ParamStore<f32>) -> Result<Self> {
        let mut m = store.clone();
        let mut v = store.clone();
        ck.load_store(&format!("{prefix}.m"), &mut m)?;
        ck.load_store(&format!("{prefix}.v"), &mut v)?;
        Ok(Self {
            m: m.tensors().to_vec(),
            v: v.tensors().to_vec(),
            t: ck.u64(&format!("{prefix}.t"))?,
        })
    }
}

/// Losses of one update.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepReport {
    pub loss_base: f64,
    pub loss_div: f64,
    pub loss_total: f64,
    /// Discriminator objective before its update (GAN path).
    pub loss_disc: Option<f64>,
    /// Discriminator objective on the same batch after its update.
    pub loss_disc_after: Option<f64>,
    pub grad_norm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss_base: f64,
    pub loss_div: f64,
    pub loss_total: f64,
    pub loss_disc: Option<f64>,
}

/// Renders the metrics log. Values use the shortest round-trip decimal form.
pub fn metrics_csv(records: &[EpochRecord], base: BaseKind) -> String {
    let mut s = String::from("epoch,loss_base,loss_div,loss_total");
    if base == BaseKind::Gan {
        s.push_str(",loss_disc");
    }
    s.push('\n');
    for r in records {
        let _ = write!(s, "{},{},{},{}", r.epoch, r.loss_base, r.loss_div, r.loss_total);
        if base == BaseKind::Gan {
            let _ = write!(s, ",{}", r.loss_disc.unwrap_or(f64::NAN));
        }
        s.push('\n');
    }
    s
}

fn parse_metrics_csv(text: &str) -> Result<Vec<EpochRecord>> {
    let bad = |i: usize| Error::Checkpoint(format!("metrics history line {} is malformed", i + 1));
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() < 4 {
            return Err(bad(i));
        }
        let num = |j: usize| f[j].parse::<f64>().map_err(|_| bad(i));
        out.push(EpochRecord {
            epoch: f[0].parse().map_err(|_| bad(i))?,
            loss_base: num(1)?,
            loss_div: num(2)?,
            loss_total: num(3)?,
            loss_disc: if f.len() > 4 { Some(num(4)?) } else { None },
        });
    }
    Ok(out)
}

fn gather_grads(
    grads: &mut crate::tensor::Gradients<f32>,
    vars: &[Var],
    store: &ParamStore<f32>,
) -> (Vec<Tensor<f32>>, f64) {
    let mut sq = 0.0f64;
    let out = vars
        .iter()
        .zip(store.tensors())
        .map(|(&v, p)| {
            let g = grads.take(v).unwrap_or_else(|| Tensor::zeros(p.shape()));
            sq += g.data().iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>();
            g
        })
        .collect();
    (out, sq.sqrt())
}

fn check_finite(what: &str, v: f64, layout: &SemanticLayout, noise: &NoiseVector) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(format!(
            "{what} = {v} for layout {}×{} with histogram {:?}, noise {:?}",
            layout.width(),
            layout.height(),
            layout.histogram(),
            noise.values()
        )))
    }
}

/// Mutable training state: networks, optimiser moments, RNG and history.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub run: RunConfig,
    pub generator: Generator<f32>,
    pub discriminator: Option<PatchDiscriminator<f32>>,
    pub phi: Option<FeatureExtractor<f32>>,
    pub adam_gen: AdamState,
    pub adam_disc: Option<AdamState>,
    pub rng: ChaCha8Rng,
    pub epoch: usize,
    pub history: Vec<EpochRecord>,
    /// Noise forced for every step instead of sampling (tests only).
    pub forced_noise: Option<NoiseVector>,
}

impl Trainer {
    pub fn new(run: RunConfig, classes: usize) -> Result<Self> {
        let cfg = &run.train;
        cfg.validate(classes)?;
        let generator = cfg.build_generator(classes)?;
        let (discriminator, phi) = match cfg.base {
            BaseKind::Gan => {
                let mut rng = cfg.init_rng();
                rng.set_stream(3);
                (Some(PatchDiscriminator::new(cfg.disc(classes), &mut rng)?), None)
            }
            BaseKind::Crn => (None, Some(FeatureExtractor::new(&cfg.phi_widths, cfg.phi_seed)?)),
        };
        let adam_gen = AdamState::new(generator.params());
        let adam_disc = discriminator.as_ref().map(|d| AdamState::new(&d.params));
        let rng = cfg.train_rng();
        Ok(Self {
            run,
            generator,
            discriminator,
            phi,
            adam_gen,
            adam_disc,
            rng,
            epoch: 0,
            history: Vec::new(),
            forced_noise: None,
        })
    }

    fn cfg(&self) -> &TrainConfig {
        &self.run.train
    }

    fn adam(&self) -> AdamParams {
        let c = self.cfg();
        AdamParams {
            lr: c.lr,
            b1: c.adam_b1,
            b2: c.adam_b2,
            eps: c.adam_eps,
        }
    }

    /// `L_f` for one generator output on `tape`.
    fn base_loss(
        &self,
        tape: &mut Tape<f32>,
        frozen: &crate::models::Bound,
        layout_var: Var,
        output: Var,
        real: Var,
    ) -> Result<Var> {
        let cfg = self.cfg();
        match cfg.base {
            BaseKind::Gan => {
                let d = self.discriminator.as_ref().expect("gan trainer has a discriminator");
                let score = d.forward(tape, frozen, layout_var, output)?;
                losses::loss_generator(tape, score, output, real, cfg.loss.alpha, cfg.loss.log_eps)
            }
            BaseKind::Crn => {
                let phi = self.phi.as_ref().expect("crn trainer has a feature extractor");
                let n = self.generator.image_count();
                let outs = (0..n)
                    .map(|j| Ok(tape.narrow_channels(output, 3 * j, 3)?))
                    .collect::<Result<Vec<_>>>()?;
                losses::loss_hindsight(tape, phi, frozen, &outs, real, &cfg.loss.lambda_k)
            }
        }
    }

    fn diversity(
        &self,
        tape: &mut Tape<f32>,
        g0: Var,
        gn: Var,
        layout: &SemanticLayout,
        noise: &NoiseVector,
    ) -> Result<Option<Var>> {
        let cfg = self.cfg();
        Ok(match cfg.diversity {
            DiversityMode::Off => None,
            DiversityMode::Hinged => {
                let lambda = cfg.loss.lambda_per_class(layout.class_count());
                Some(losses::diversity_hinged(tape, g0, gn, layout, noise, &lambda)?)
            }
            DiversityMode::Segmentwise => Some(losses::diversity_segmentwise(tape, g0, gn, layout, noise)?),
            DiversityMode::Unconditional => Some(losses::diversity_unconditional(tape, g0, gn, noise)?),
        })
    }

    /// The generator update of the two-forward loop: `i1 = G(l, n)`,
    /// `i2 = G(l, 0)`, `L_f` averaged over both, diversity on `(i2, i1)`,
    /// one Adam step on `L_f + β·L_div`.
    pub fn generator_step(&mut self, layout: &SemanticLayout, image: &ImageRgb, noise: &NoiseVector) -> Result<StepReport> {
        let mut tape = Tape::new();
        let p = self.generator.params().bind(&mut tape);
        let zero = NoiseVector::zeros(noise.len());
        let rng: &mut dyn RngCore = &mut self.rng;
        let i1 = self.generator.forward(&mut tape, &p, layout, noise, Some(&mut *rng))?;
        let i2 = self.generator.forward(&mut tape, &p, layout, &zero, Some(rng))?;
        let real = tape.constant(image.to_tensor());
        let layout_var = tape.constant(layout.one_hot());
        let frozen = match (&self.discriminator, &self.phi) {
            (Some(d), _) => d.params.bind_frozen(&mut tape),
            (None, Some(phi)) => phi.params.bind_frozen(&mut tape),
            (None, None) => unreachable!("trainer without discriminator or feature extractor"),
        };
        let l1 = self.base_loss(&mut tape, &frozen, layout_var, i1, real)?;
        let l2 = self.base_loss(&mut tape, &frozen, layout_var, i2, real)?;
        let sum = tape.add(l1, l2)?;
        let base = tape.scale(sum, 0.5);
        let div = self.diversity(&mut tape, i2, i1, layout, noise)?;
        let total = match div {
            Some(d) => losses::objective_combined(&mut tape, base, d, self.cfg().loss.beta)?,
            None => base,
        };
        let report_base = tape.value(base).item() as f64;
        let report_div = div.map_or(0.0, |d| tape.value(d).item() as f64);
        let report_total = tape.value(total).item() as f64;
        check_finite("generator loss", report_total, layout, noise)?;
        let mut grads = tape.backward(total)?;
        let (g, norm) = gather_grads(&mut grads, p.vars(), self.generator.params());
        let hp = self.adam();
        self.adam_gen.update(self.generator.params_mut(), &g, hp)?;
        Ok(StepReport {
            loss_base: report_base,
            loss_div: report_div,
            loss_total: report_total,
            loss_disc: None,
            loss_disc_after: None,
            grad_norm: norm,
        })
    }

    fn disc_objective(&self, layout: &SemanticLayout, real: &Tensor<f32>, fake: &Tensor<f32>) -> Result<f64> {
        let d = self.discriminator.as_ref().expect("gan trainer has a discriminator");
        let mut tape = Tape::new();
        let p = d.params.bind_frozen(&mut tape);
        let lv = tape.constant(layout.one_hot());
        let rv = tape.constant(real.clone());
        let fv = tape.constant(fake.clone());
        let sr = d.forward(&mut tape, &p, lv, rv)?;
        let sf = d.forward(&mut tape, &p, lv, fv)?;
        let l = losses::loss_discriminator(&mut tape, sr, sf, self.cfg().loss.log_eps)?;
        Ok(tape.value(l).item() as f64)
    }

    /// One ascent step of the discriminator on the adversarial objective,
    /// with `G(l, n)` computed once and held constant. Returns the objective
    /// on this pair before and after the update.
    pub fn discriminator_step(&mut self, layout: &SemanticLayout, image: &ImageRgb, noise: &NoiseVector) -> Result<(f64, f64)> {
        if self.cfg().base != BaseKind::Gan {
            return Err(Error::Invalid("discriminator step requires the gan base".into()));
        }
        let fake = {
            let mut tape = Tape::new();
            let p = self.generator.params().bind_frozen(&mut tape);
            let rng: &mut dyn RngCore = &mut self.rng;
            let out = self.generator.forward(&mut tape, &p, layout, noise, Some(rng))?;
            tape.value(out).clone()
        };
        let real_t: Tensor<f32> = image.to_tensor();
        let d = self.discriminator.as_ref().expect("gan trainer has a discriminator");
        let mut tape = Tape::new();
        let p = d.params.bind(&mut tape);
        let lv = tape.constant(layout.one_hot());
        let rv = tape.constant(real_t.clone());
        let fv = tape.constant(fake.clone());
        let sr = d.forward(&mut tape, &p, lv, rv)?;
        let sf = d.forward(&mut tape, &p, lv, fv)?;
        let obj = losses::loss_discriminator(&mut tape, sr, sf, self.cfg().loss.log_eps)?;
        let before = tape.value(obj).item() as f64;
        check_finite("discriminator objective", before, layout, noise)?;
        let neg = tape.scale(obj, -1.0);
        let mut grads = tape.backward(neg)?;
        let (g, _) = gather_grads(&mut grads, p.vars(), &d.params);
        let hp = self.adam();
        let d = self.discriminator.as_mut().expect("gan trainer has a discriminator");
        self.adam_disc
            .as_mut()
            .expect("gan trainer has discriminator moments")
            .update(&mut d.params, &g, hp)?;
        let after = self.disc_objective(layout, &real_t, &fake)?;
        Ok((before, after))
    }

    /// Discriminator step followed by the generator update.
    pub fn gan_alternating_step(&mut self, layout: &SemanticLayout, image: &ImageRgb, noise: &NoiseVector) -> Result<StepReport> {
        let (before, after) = self.discriminator_step(layout, image, noise)?;
        let mut report = self.generator_step(layout, image, noise)?;
        report.loss_disc = Some(before);
        report.loss_disc_after = Some(after);
        Ok(report)
    }

    /// Draws augmentation and noise for one sample, then updates.
    pub fn step(&mut self, sample: &Sample) -> Result<StepReport> {
        let cfg = self.cfg().clone();
        let (layout, image) = if cfg.augment {
            let params = AugmentParams {
                target: (sample.layout.width(), sample.layout.height()),
                jitter: cfg.jitter,
                flip_prob: cfg.flip_prob,
            };
            augment(&sample.layout, &sample.image, &params, &mut self.rng)?
        } else {
            (sample.layout.clone(), sample.image.clone())
        };
        let sampled = NoiseVector::sample(layout.class_count(), &mut self.rng);
        let noise = self.forced_noise.clone().unwrap_or(sampled);
        match cfg.base {
            BaseKind::Gan => self.gan_alternating_step(&layout, &image, &noise),
            BaseKind::Crn => self.generator_step(&layout, &image, &noise),
        }
    }

    /// One shuffled pass over the train split. `on_step` sees every report.
    pub fn run_epoch(&mut self, data: &Dataset, mut on_step: impl FnMut(&StepReport)) -> Result<EpochRecord> {
        let train: Vec<&Sample> = data.split(Split::Train).collect();
        if train.is_empty() {
            return Err(Error::Invalid("train split is empty".into()));
        }
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut self.rng);
        let (mut b, mut d, mut t, mut disc) = (0.0, 0.0, 0.0, 0.0);
        for &i in &order {
            let r = self.step(train[i])?;
            on_step(&r);
            b += r.loss_base;
            d += r.loss_div;
            t += r.loss_total;
            disc += r.loss_disc.unwrap_or(0.0);
        }
        self.epoch += 1;
        let n = order.len() as f64;
        let rec = EpochRecord {
            epoch: self.epoch,
            loss_base: b / n,
            loss_div: d / n,
            loss_total: t / n,
            loss_disc: (self.cfg().base == BaseKind::Gan).then_some(disc / n),
        };
        self.history.push(rec);
        Ok(rec)
    }

    fn check_dataset(&self, data: &Dataset) -> Result<()> {
        if data.class_count() != self.generator.class_count() {
            return Err(Error::Invalid(format!(
                "dataset has {} classes, model expects {}",
                data.class_count(),
                self.generator.class_count()
            )));
        }
        if let Generator::Crn(g) = &self.generator {
            let (w, h) = g.config.output_size();
            if data.size() != (w, h) {
                return Err(Error::Invalid(format!(
                    "dataset images are {}×{}, cascade produces {w}×{h}",
                    data.size().0,
                    data.size().1
                )));
            }
        }
        Ok(())
    }

    /// Runs the remaining epochs. With `out`, writes `metrics.csv`,
    /// `checkpoint_epoch_<k>.dsyn` per cadence and `final.dsyn`, creating the
    /// directory if needed.
    pub fn train(&mut self, data: &Dataset, out: Option<&Path>) -> Result<()> {
        self.check_dataset(data)?;
        if let Some(dir) = out {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let every = self.cfg().checkpoint_every;
        while self.epoch < self.cfg().epochs {
            self.run_epoch(data, |_| {})?;
            if let Some(dir) = out {
                write_atomic(&dir.join("metrics.csv"), self.metrics_csv().as_bytes())?;
                if every > 0 && self.epoch % every == 0 {
                    self.checkpoint()?.save(&dir.join(format!("checkpoint_epoch_{}.dsyn", self.epoch)))?;
                }
            }
        }
        if let Some(dir) = out {
            write_atomic(&dir.join("metrics.csv"), self.metrics_csv().as_bytes())?;
            self.checkpoint()?.save(&dir.join("final.dsyn"))?;
        }
        Ok(())
    }

    pub fn metrics_csv(&self) -> String {
        metrics_csv(&self.history, self.cfg().base)
    }

    /// Complete state: weights, moments, RNG position, epoch, history and
    /// the resolved config.
    pub fn checkpoint(&self) -> Result<Checkpoint> {
        let mut ck = Checkpoint::new();
        ck.insert_bytes("meta.config", self.run.to_text().as_bytes());
        ck.insert_store("gen", self.generator.params());
        self.adam_gen.save(&mut ck, "adam.gen", self.generator.params());
        if let (Some(d), Some(a)) = (&self.discriminator, &self.adam_disc) {
            ck.insert_store("disc", &d.params);
            a.save(&mut ck, "adam.disc", &d.params);
        }
        ck.insert_bytes("meta.rng.seed", &self.rng.get_seed());
        ck.insert_u64("meta.rng.stream", self.rng.get_stream());
        ck.insert_bytes("meta.rng.word_pos", &self.rng.get_word_pos().to_le_bytes());
        ck.insert_u64("meta.epoch", self.epoch as u64);
        ck.insert_bytes("meta.history", self.metrics_csv().as_bytes());
        Ok(ck)
    }

    /// Rebuilds a trainer from [`checkpoint`](Self::checkpoint) output. The
    /// epoch target may be raised through `epochs`.
    pub fn resume(ck: &Checkpoint, epochs: Option<usize>) -> Result<Self> {
        let mut run = RunConfig::from_checkpoint(ck)?;
        if let Some(e) = epochs {
            run.train.epochs = e;
        }
        let classes = run.world.class_count();
        let mut t = Self::new(run, classes)?;
        ck.load_store("gen", t.generator.params_mut())?;
        t.adam_gen = AdamState::load(ck, "adam.gen", t.generator.params())?;
        if let Some(d) = t.discriminator.as_mut() {
            ck.load_store("disc", &mut d.params)?;
            t.adam_disc = Some(AdamState::load(ck, "adam.disc", &d.params)?);
        }
        let seed: [u8; 32] = ck
            .bytes("meta.rng.seed")?
            .try_into()
            .map_err(|_| Error::Checkpoint("meta.rng.seed is not 32 bytes".into()))?;
        let pos: [u8; 16] = ck
            .bytes("meta.rng.word_pos")?
            .try_into()
            .map_err(|_| Error::Checkpoint("meta.rng.word_pos is not 16 bytes".into()))?;
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(ck.u64("meta.rng.stream")?);
        rng.set_word_pos(u128::from_le_bytes(pos));
        t.rng = rng;
        t.epoch = ck.u64("meta.epoch")? as usize;
        let hist = String::from_utf8(ck.bytes("meta.history")?)
            .map_err(|_| Error::Checkpoint("meta.history is not UTF-8".into()))?;
        t.history = parse_metrics_csv(&hist)?;
        Ok(t)
    }
}

/// Loads the generator and config stored in a checkpoint.
pub fn load_generator(ck: &Checkpoint) -> Result<(RunConfig, Generator<f32>)> {
    let run = RunConfig::from_checkpoint(ck)?;
    let mut g = run.train.build_generator(run.world.class_count())?;
    ck.load_store("gen", g.params_mut())?;
    Ok((run, g))
}
