use rand::{Rng, RngCore};

use super::params::{dropout, lrelu, Bound, Conv, Norm, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tape, Tensor, Var};

/// Encoder-decoder generator with skip connections. Input is the one-hot
/// layout concatenated with the noise channel.
#[derive(Debug, Clone, PartialEq)]
pub struct UNetConfig {
    pub classes: usize,
    pub widths: Vec<usize>,
    pub dropout: f64,
}

#[derive(Debug, Clone)]
pub struct GeneratorUNet<T> {
    pub config: UNetConfig,
    pub params: ParamStore<T>,
    encoder: Vec<(Conv, Option<Norm>)>,
    decoder: Vec<(Conv, Norm)>,
    head: Conv,
}

impl<T: Real> GeneratorUNet<T> {
    pub fn new(config: UNetConfig, rng: &mut impl Rng) -> Result<Self> {
        if config.widths.is_empty() || config.widths.contains(&0) {
            return Err(Error::Config("generator widths must be non-empty and positive".into()));
        }
        if !(0.0..1.0).contains(&config.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0,1)", config.dropout)));
        }
        let mut params = ParamStore::default();
        let input = config.classes + 1;
        let w = &config.widths;
        let mut encoder = Vec::new();
        let mut cin = input;
        for (i, &cout) in w.iter().enumerate() {
            let conv = Conv::new(&mut params, &format!("enc{i}"), cin, cout, 4, 2, 1, rng);
            let norm = (i > 0).then(|| Norm::new(&mut params, &format!("enc{i}.norm"), cout));
            encoder.push((conv, norm));
            cin = cout;
        }
        let mut decoder = Vec::new();
        for j in (0..w.len() - 1).rev() {
            let conv = Conv::new(&mut params, &format!("dec{j}"), cin, w[j], 3, 1, 1, rng);
            let norm = Norm::new(&mut params, &format!("dec{j}.norm"), w[j]);
            decoder.push((conv, norm));
            cin = 2 * w[j];
        }
        let head = Conv::new(&mut params, "head", cin + input, 3, 3, 1, 1, rng);
        Ok(Self {
            config,
            params,
            encoder,
            decoder,
            head,
        })
    }

    pub fn depth(&self) -> usize {
        self.config.widths.len()
    }

    /// `input` is `[|C|+1, H, W]`; returns `[3, H, W]` in (0, 1).
    pub fn forward(
        &self,
        tape: &mut Tape<T>,
        p: &Bound,
        input: Var,
        mut rng: Option<&mut dyn RngCore>,
    ) -> Result<Var> {
        let (c, h, w) = tape.value(input).chw()?;
        let depth = self.depth();
        if c != self.config.classes + 1 {
            return Err(Error::Invalid(format!(
                "generator expects {} input channels, got {c}",
                self.config.classes + 1
            )));
        }
        if !h.is_power_of_two() || !w.is_power_of_two() || h < 1 << depth || w < 1 << depth {
            return Err(Error::Invalid(format!(
                "generator input {h}×{w} must be powers of two of at least {}",
                1 << depth
            )));
        }
        let mut skips = Vec::with_capacity(depth);
        let mut x = input;
        for (conv, norm) in &self.encoder {
            x = conv.forward(tape, p, x)?;
            if let Some(n) = norm {
                x = n.forward(tape, p, x)?;
            }
            x = lrelu(tape, x);
            skips.push(x);
        }
        skips.pop();
        for (conv, norm) in &self.decoder {
            x = tape.upsample2(x)?;
            x = conv.forward(tape, p, x)?;
            x = norm.forward(tape, p, x)?;
            x = lrelu(tape, x);
            x = dropout(tape, x, self.config.dropout, rng.as_mut().map(|r| &mut **r as &mut dyn RngCore))?;
            let skip = skips.pop().expect("one skip per decoder stage");
            x = tape.concat(&[x, skip])?;
        }
        x = tape.upsample2(x)?;
        x = tape.concat(&[x, input])?;
        x = self.head.forward(tape, p, x)?;
        Ok(tape.sigmoid(x))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscConfig {
    pub classes: usize,
    pub widths: Vec<usize>,
}

/// Conditional patch discriminator over `(layout, image)`.
#[derive(Debug, Clone)]
pub struct PatchDiscriminator<T> {
    pub config: DiscConfig,
    pub params: ParamStore<T>,
    stages: Vec<(Conv, Option<Norm>)>,
    head: Conv,
}

impl<T: Real> PatchDiscriminator<T> {
    pub fn new(config: DiscConfig, rng: &mut impl Rng) -> Result<Self> {
        if config.widths.is_empty() || config.widths.contains(&0) {
            return Err(Error::Config("discriminator widths must be non-empty and positive".into()));
        }
        let mut params = ParamStore::default();
        let mut cin = config.classes + 3;
        let mut stages = Vec::new();
        for (i, &cout) in config.widths.iter().enumerate() {
            let conv = Conv::new(&mut params, &format!("stage{i}"), cin, cout, 4, 2, 1, rng);
            let norm = (i > 0).then(|| Norm::new(&mut params, &format!("stage{i}.norm"), cout));
            stages.push((conv, norm));
            cin = cout;
        }
        let head = Conv::new(&mut params, "head", cin, 1, 3, 1, 1, rng);
        Ok(Self {
            config,
            params,
            stages,
            head,
        })
    }

    /// Per-patch realness scores `[1, P, P]` in (0, 1).
    pub fn forward(&self, tape: &mut Tape<T>, p: &Bound, layout: Var, image: Var) -> Result<Var> {
        let (lc, lh, lw) = tape.value(layout).chw()?;
        let (ic, ih, iw) = tape.value(image).chw()?;
        if (lh, lw) != (ih, iw) || lc != self.config.classes || ic != 3 {
            return Err(Error::Invalid(format!(
                "discriminator got layout {lc}×{lh}×{lw} and image {ic}×{ih}×{iw}"
            )));
        }
        let mut x = tape.concat(&[layout, image])?;
        for (conv, norm) in &self.stages {
            x = conv.forward(tape, p, x)?;
            if let Some(n) = norm {
                x = n.forward(tape, p, x)?;
            }
            x = lrelu(tape, x);
        }
        x = self.head.forward(tape, p, x)?;
        Ok(tape.sigmoid(x))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrnConfig {
    pub classes: usize,
    /// Coarsest grid `(w₀, h₀)`.
    pub base: (usize, usize),
    /// Number of resolution-doubling modules.
    pub doublings: usize,
    pub channels: usize,
    /// Images emitted per forward pass (3·outputs head channels).
    pub outputs: usize,
}

impl CrnConfig {
    pub fn output_size(&self) -> (usize, usize) {
        (self.base.0 << self.doublings, self.base.1 << self.doublings)
    }
}

#[derive(Debug, Clone, Copy)]
struct CrnModule {
    conv_a: Conv,
    norm_a: Norm,
    conv_b: Conv,
    norm_b: Norm,
}

/// Cascade of refinement modules. Module `i` works at `w₀·2ⁱ × h₀·2ⁱ` on the
/// layout (and noise channel) at that resolution plus the previous module's
/// features, and hands features at twice the resolution to its successor. A
/// final full-resolution module maps the last features to RGB.
#[derive(Debug, Clone)]
pub struct CrnCascade<T> {
    pub config: CrnConfig,
    pub params: ParamStore<T>,
    modules: Vec<CrnModule>,
    head: (Conv, Norm),
    out: Conv,
}

impl<T: Real> CrnCascade<T> {
    pub fn new(config: CrnConfig, rng: &mut impl Rng) -> Result<Self> {
        if config.base.0 == 0 || config.base.1 == 0 || config.doublings == 0 {
            return Err(Error::Config("cascade needs a non-empty base grid and at least one doubling".into()));
        }
        if config.channels == 0 || config.outputs == 0 {
            return Err(Error::Config("cascade channels and outputs must be positive".into()));
        }
        let mut params = ParamStore::default();
        let inp = config.classes + 1;
        let ch = config.channels;
        let modules = (0..config.doublings)
            .map(|i| {
                let cin = if i == 0 { inp } else { inp + ch };
                CrnModule {
                    conv_a: Conv::new(&mut params, &format!("m{i}.a"), cin, ch, 3, 1, 1, rng),
                    norm_a: Norm::new(&mut params, &format!("m{i}.a.norm"), ch),
                    conv_b: Conv::new(&mut params, &format!("m{i}.b"), ch, ch, 3, 1, 1, rng),
                    norm_b: Norm::new(&mut params, &format!("m{i}.b.norm"), ch),
                }
            })
            .collect();
        let head = (
            Conv::new(&mut params, "head", inp + ch, ch, 3, 1, 1, rng),
            Norm::new(&mut params, "head.norm", ch),
        );
        let out = Conv::new(&mut params, "out", ch, 3 * config.outputs, 1, 1, 0, rng);
        Ok(Self {
            config,
            params,
            modules,
            head,
            out,
        })
    }

    /// `onehot` is `[|C|, H, W]` and `noise` `[1, H, W]` at the output size.
    /// Returns `[3·outputs, H, W]` in (0, 1).
    pub fn forward(&self, tape: &mut Tape<T>, p: &Bound, onehot: &Tensor<T>, noise: &Tensor<T>) -> Result<Var> {
        let (w_out, h_out) = self.config.output_size();
        let (c, h, w) = onehot.chw()?;
        if (h, w) != (h_out, w_out) || c != self.config.classes {
            return Err(Error::Invalid(format!(
                "cascade produces {w_out}×{h_out} from {} classes, layout is {w}×{h} with {c}",
                self.config.classes
            )));
        }
        if noise.shape() != [1, h, w] {
            return Err(Error::Invalid(format!("noise channel shape {:?}", noise.shape())));
        }
        let full = Tensor::concat_channels(&[onehot, noise])?;
        let d = self.config.doublings;
        let mut feats: Option<Var> = None;
        for (i, m) in self.modules.iter().enumerate() {
            let cond = full.downsample_nearest(1 << (d - i))?;
            let (rw, rh) = (self.config.base.0 << i, self.config.base.1 << i);
            debug_assert_eq!(cond.shape()[1..], [rh, rw]);
            let cond = tape.constant(cond);
            let mut x = match feats {
                Some(f) => {
                    if tape.shape(f)[1..] != [rh, rw] {
                        return Err(Error::Invalid(format!(
                            "module {i} expected features at {rw}×{rh}, got {:?}",
                            tape.shape(f)
                        )));
                    }
                    tape.concat(&[cond, f])?
                }
                None => cond,
            };
            x = m.conv_a.forward(tape, p, x)?;
            x = m.norm_a.forward(tape, p, x)?;
            x = lrelu(tape, x);
            x = m.conv_b.forward(tape, p, x)?;
            x = m.norm_b.forward(tape, p, x)?;
            x = lrelu(tape, x);
            feats = Some(tape.upsample2(x)?);
        }
        let cond = tape.constant(full);
        let f = feats.expect("at least one module");
        let mut x = tape.concat(&[cond, f])?;
        x = self.head.0.forward(tape, p, x)?;
        x = self.head.1.forward(tape, p, x)?;
        x = lrelu(tape, x);
        x = self.out.forward(tape, p, x)?;
        Ok(tape.sigmoid(x))
    }
}

/// Fixed, seeded stack of stride-2 convolutions used as the perceptual
/// feature map for the content loss. Never trained.
#[derive(Debug, Clone)]
pub struct FeatureExtractor<T> {
    pub widths: Vec<usize>,
    pub seed: u64,
    pub params: ParamStore<T>,
    stages: Vec<Conv>,
}

impl<T: Real> FeatureExtractor<T> {
    pub fn new(widths: &[usize], seed: u64) -> Result<Self> {
        use rand::SeedableRng;
        if widths.is_empty() || widths.contains(&0) {
            return Err(Error::Config("feature extractor widths must be non-empty and positive".into()));
        }
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::default();
        let mut cin = 3;
        let stages = widths
            .iter()
            .enumerate()
            .map(|(i, &cout)| {
                let c = Conv::new(&mut params, &format!("phi{i}"), cin, cout, 3, 2, 1, &mut rng);
                cin = cout;
                c
            })
            .collect();
        Ok(Self {
            widths: widths.to_vec(),
            seed,
            params,
            stages,
        })
    }

    pub fn stages(&self) -> usize {
        self.stages.len()
    }

    /// Features `Φ_1..Φ_K`; stage `k` is at `H/2ᵏ × W/2ᵏ`. `p` must come from
    /// [`ParamStore::bind_frozen`].
    pub fn features(&self, tape: &mut Tape<T>, p: &Bound, image: Var) -> Result<Vec<Var>> {
        let (c, h, w) = tape.value(image).chw()?;
        let k = self.stages.len();
        if c != 3 || h % (1 << k) != 0 || w % (1 << k) != 0 {
            return Err(Error::Invalid(format!(
                "feature extractor needs a 3-channel image divisible by {}, got {c}×{h}×{w}",
                1 << k
            )));
        }
        let mut out = Vec::with_capacity(k);
        let mut x = image;
        for conv in &self.stages {
            x = conv.forward(tape, p, x)?;
            x = lrelu(tape, x);
            out.push(x);
        }
        Ok(out)
    }
}
