//! Generator, discriminator, refinement cascade, fixed feature extractor
//! and checkpoint persistence.

mod checkpoint;
mod nets;
mod params;

use rand::RngCore;

pub use checkpoint::{Checkpoint, MAGIC, VERSION};
pub use nets::{
    CrnCascade, CrnConfig, DiscConfig, FeatureExtractor, GeneratorUNet, PatchDiscriminator,
    UNetConfig,
};
pub use params::{Bound, Conv, Norm, ParamId, ParamStore, NORM_EPS};

use crate::data::{build_noise_channel, ImageRgb, NoiseVector, SemanticLayout};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tape, Tensor, Var};

/// Either generator family behind one interface.
#[derive(Debug, Clone)]
pub enum Generator<T> {
    UNet(GeneratorUNet<T>),
    Crn(CrnCascade<T>),
}

impl<T: Real> Generator<T> {
    pub fn params(&self) -> &ParamStore<T> {
        match self {
            Self::UNet(g) => &g.params,
            Self::Crn(g) => &g.params,
        }
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        match self {
            Self::UNet(g) => &mut g.params,
            Self::Crn(g) => &mut g.params,
        }
    }

    pub fn class_count(&self) -> usize {
        match self {
            Self::UNet(g) => g.config.classes,
            Self::Crn(g) => g.config.classes,
        }
    }

    /// Images produced per forward pass.
    pub fn image_count(&self) -> usize {
        match self {
            Self::UNet(_) => 1,
            Self::Crn(g) => g.config.outputs,
        }
    }

    /// Records `G(l, n)` on `tape`, returning `[3·image_count, H, W]`.
    /// Dropout is active only when `rng` is given.
    pub fn forward(
        &self,
        tape: &mut Tape<T>,
        p: &Bound,
        layout: &SemanticLayout,
        noise: &NoiseVector,
        rng: Option<&mut dyn RngCore>,
    ) -> Result<Var> {
        if layout.class_count() != self.class_count() {
            return Err(Error::Invalid(format!(
                "layout has {} classes, generator expects {}",
                layout.class_count(),
                self.class_count()
            )));
        }
        let onehot: Tensor<T> = layout.one_hot();
        let channel: Tensor<T> = build_noise_channel(layout, noise)?;
        match self {
            Self::UNet(g) => {
                let input = tape.constant(Tensor::concat_channels(&[&onehot, &channel])?);
                g.forward(tape, p, input, rng)
            }
            Self::Crn(g) => g.forward(tape, p, &onehot, &channel),
        }
    }

    /// Deterministic inference (dropout off).
    pub fn synthesize(&self, layout: &SemanticLayout, noise: &NoiseVector) -> Result<Vec<ImageRgb>> {
        let mut tape = Tape::new();
        let p = self.params().bind_frozen(&mut tape);
        let out = self.forward(&mut tape, &p, layout, noise, None)?;
        let t = tape.value(out);
        let (c, h, w) = t.chw()?;
        let plane = h * w;
        (0..c / 3)
            .map(|j| {
                let slice = Tensor::from_raw(vec![3, h, w], t.data()[3 * j * plane..3 * (j + 1) * plane].to_vec());
                ImageRgb::from_tensor(&slice)
            })
            .collect()
    }

    /// First image of [`synthesize`](Self::synthesize).
    pub fn synthesize_one(&self, layout: &SemanticLayout, noise: &NoiseVector) -> Result<ImageRgb> {
        Ok(self.synthesize(layout, noise)?.swap_remove(0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate, SyntheticWorldConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn unet(rng: &mut ChaCha8Rng) -> GeneratorUNet<f32> {
        GeneratorUNet::new(
            UNetConfig {
                classes: 4,
                widths: vec![16, 32, 64],
                dropout: 0.5,
            },
            rng,
        )
        .unwrap()
    }

    fn crn(outputs: usize, rng: &mut ChaCha8Rng) -> CrnCascade<f32> {
        CrnCascade::new(
            CrnConfig {
                classes: 4,
                base: (2, 2),
                doublings: 4,
                channels: 8,
                outputs,
            },
            rng,
        )
        .unwrap()
    }

    fn layout() -> SemanticLayout {
        generate(&SyntheticWorldConfig::default(), 1).unwrap().samples()[0].layout.clone()
    }

    #[test]
    fn unet_shape_range_and_determinism() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = Generator::UNet(unet(&mut rng));
        let l = layout();
        let n = NoiseVector::new(vec![0.3, -0.2, 0.9, -1.0]).unwrap();
        let a = g.synthesize_one(&l, &n).unwrap();
        assert_eq!((a.width(), a.height()), (32, 32));
        let mut tape = Tape::new();
        let p = g.params().bind_frozen(&mut tape);
        let v = g.forward(&mut tape, &p, &l, &n, None).unwrap();
        assert_eq!(tape.shape(v), &[3, 32, 32]);
        assert!(tape.value(v).data().iter().all(|&x| x > 0.0 && x < 1.0));
        assert_eq!(g.synthesize_one(&l, &n).unwrap(), a);
    }

    #[test]
    fn unet_rejects_non_power_of_two() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = unet(&mut rng);
        let mut tape = Tape::<f32>::new();
        let p = g.params.bind_frozen(&mut tape);
        let x = tape.constant(Tensor::zeros(&[5, 24, 24]));
        assert!(g.forward(&mut tape, &p, x, None).is_err());
        let x = tape.constant(Tensor::zeros(&[5, 4, 4]));
        assert!(g.forward(&mut tape, &p, x, None).is_err());
    }

    #[test]
    fn discriminator_patch_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let d = PatchDiscriminator::<f32>::new(
            DiscConfig {
                classes: 4,
                widths: vec![16, 32, 64],
            },
            &mut rng,
        )
        .unwrap();
        let l = layout();
        let imgs: Vec<Tensor<f32>> = (0..3)
            .map(|s| {
                Tensor::from_raw(
                    vec![3, 32, 32],
                    (0..3 * 32 * 32).map(|i| ((i * (s + 3)) % 17) as f32 / 17.0).collect(),
                )
            })
            .collect();
        let score = |img: &Tensor<f32>| {
            let mut tape = Tape::new();
            let p = d.params.bind_frozen(&mut tape);
            let lv = tape.constant(l.one_hot());
            let iv = tape.constant(img.clone());
            let s = d.forward(&mut tape, &p, lv, iv).unwrap();
            tape.value(s).clone()
        };
        let scores: Vec<_> = imgs.iter().map(score).collect();
        for s in &scores {
            assert_eq!(s.shape(), &[1, 4, 4]);
            assert!(s.data().iter().all(|&x| x > 0.0 && x < 1.0));
        }
        // evaluating in reverse order yields the same per-sample scores
        let rev: Vec<_> = imgs.iter().rev().map(score).collect();
        assert_eq!(rev.into_iter().rev().collect::<Vec<_>>(), scores);

        let mut tape = Tape::new();
        let p = d.params.bind_frozen(&mut tape);
        let lv = tape.constant(l.one_hot());
        let iv = tape.constant(Tensor::zeros(&[3, 16, 16]));
        assert!(d.forward(&mut tape, &p, lv, iv).is_err());
    }

    #[test]
    fn crn_sizes() {
        let cfg = CrnConfig {
            classes: 4,
            base: (2, 2),
            doublings: 3,
            channels: 4,
            outputs: 1,
        };
        assert_eq!(cfg.output_size(), (16, 16));
        let large = CrnConfig {
            base: (4, 8),
            doublings: 6,
            ..cfg.clone()
        };
        assert_eq!(large.output_size(), (256, 512));

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = Generator::Crn(crn(9, &mut rng));
        let l = layout();
        let mut tape = Tape::new();
        let p = g.params().bind_frozen(&mut tape);
        let v = g.forward(&mut tape, &p, &l, &NoiseVector::zeros(4), None).unwrap();
        assert_eq!(tape.shape(v), &[27, 32, 32]);
        assert_eq!(g.synthesize(&l, &NoiseVector::zeros(4)).unwrap().len(), 9);

        let small = SemanticLayout::filled(16, 16, 4, 0).unwrap();
        assert!(g.synthesize(&small, &NoiseVector::zeros(4)).is_err());
    }

    #[test]
    fn feature_extractor_shapes_and_seed() {
        let a = FeatureExtractor::<f32>::new(&[16, 32], 5).unwrap();
        let b = FeatureExtractor::<f32>::new(&[16, 32], 5).unwrap();
        assert_eq!(a.params, b.params);
        let mut tape = Tape::new();
        let p = a.params.bind_frozen(&mut tape);
        let img = tape.constant(Tensor::full(&[3, 32, 32], 0.5));
        let f = a.features(&mut tape, &p, img).unwrap();
        assert_eq!(tape.shape(f[0]), &[16, 16, 16]);
        assert_eq!(tape.shape(f[1]), &[32, 8, 8]);
        let bad = tape.constant(Tensor::full(&[3, 30, 30], 0.5));
        assert!(a.features(&mut tape, &p, bad).is_err());
    }
}
