use std::f32::consts::PI;

use rand::Rng;

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::image::{Image, CANONICAL_SIZE, CHANNELS};
use crate::rng;

/// Knobs for the synthetic generator. `structure_noise` mixes a per-sample
/// low-frequency field into the class template (intra-class variability);
/// `pixel_noise` is the iid noise amplitude on top.
#[derive(Debug, Clone, Copy)]
pub struct SynthParams {
    pub structure_noise: f32,
    pub pixel_noise: f32,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            structure_noise: 0.40,
            pixel_noise: 0.06,
        }
    }
}

/// Generate a class-conditional structured-noise dataset.
///
/// Generation rule: each class gets a fixed template, the equal blend of a
/// smooth random color field (4x4 grid, bilinearly upsampled) and a colored
/// sinusoidal grating with class-specific frequency, orientation and phase.
/// Each sample is the template mixed with a per-sample low-frequency field
/// plus iid pixel noise, clamped to `[0, 1]`. Deterministic per seed: every
/// template and sample derives its own generator from (seed, class, index),
/// independent of iteration order.
pub fn synth_dataset(num_classes: usize, per_class: usize, seed: u64) -> Result<LabeledDataset> {
    synth_dataset_with(num_classes, per_class, seed, SynthParams::default())
}

pub fn synth_dataset_with(
    num_classes: usize,
    per_class: usize,
    seed: u64,
    params: SynthParams,
) -> Result<LabeledDataset> {
    if num_classes < 2 {
        return Err(Error::Argument(format!(
            "num_classes must be >= 2, got {num_classes}"
        )));
    }
    if per_class < 1 {
        return Err(Error::Argument("per_class must be >= 1".into()));
    }

    let templates: Vec<Image> = (0..num_classes)
        .map(|k| class_template(seed, k as u64))
        .collect();

    let mut items = Vec::with_capacity(num_classes * per_class);
    for (k, template) in templates.iter().enumerate() {
        for i in 0..per_class {
            let tag = ((k as u64) << 32) | i as u64;
            let img = render_sample(template, rng::mix(seed, tag), params);
            items.push((img, k));
        }
    }
    LabeledDataset::new(
        items,
        num_classes,
        format!("synth-c{num_classes}-n{per_class}-s{seed}"),
    )
}

fn class_template(seed: u64, class: u64) -> Image {
    let mut rng = rng::sub_rng(seed, (1 << 60) | class);
    let field = low_freq_field(&mut rng, 4);

    let freq = rng.random_range(1.5f32..4.5);
    let theta = rng.random_range(0.0f32..PI);
    let phase = rng.random_range(0.0f32..2.0 * PI);
    let palette: [f32; 3] = [
        rng.random_range(0.2f32..1.0),
        rng.random_range(0.2f32..1.0),
        rng.random_range(0.2f32..1.0),
    ];
    let (dy, dx) = (theta.sin(), theta.cos());

    Image::from_fn(CANONICAL_SIZE, CANONICAL_SIZE, |c, y, x| {
        let proj = (dx * x as f32 + dy * y as f32) / CANONICAL_SIZE as f32;
        let wave = 0.5 + 0.5 * (2.0 * PI * freq * proj + phase).sin();
        let stripe = palette[c] * wave;
        0.5 * field.get(c, y, x) + 0.5 * stripe
    })
}

fn render_sample(template: &Image, sample_seed: u64, params: SynthParams) -> Image {
    let mut rng = rng::rng_from(sample_seed);
    let structure = low_freq_field(&mut rng, 8);
    let eta = params.structure_noise;
    let mut img = Image::from_fn(CANONICAL_SIZE, CANONICAL_SIZE, |c, y, x| {
        (1.0 - eta) * template.get(c, y, x) + eta * structure.get(c, y, x)
    });
    if params.pixel_noise > 0.0 {
        for v in img.as_mut_slice().iter_mut() {
            // cheap symmetric noise; exact distribution shape is immaterial
            let n: f32 = rng.random_range(-1.0..1.0);
            *v += params.pixel_noise * n;
        }
    }
    img.clamp01();
    img
}

/// Random `grid x grid` RGB lattice upsampled bilinearly to canonical size.
fn low_freq_field(rng: &mut impl Rng, grid: usize) -> Image {
    let mut lattice = Image::zeros(grid, grid);
    for c in 0..CHANNELS {
        for y in 0..grid {
            for x in 0..grid {
                lattice.set(c, y, x, rng.random_range(0.0..1.0));
            }
        }
    }
    lattice.resize_bilinear(CANONICAL_SIZE, CANONICAL_SIZE)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_for_fixed_seed() {
        let a = synth_dataset(4, 10, 7).unwrap();
        let b = synth_dataset(4, 10, 7).unwrap();
        assert_eq!(a.len(), 40);
        assert_eq!(a.num_classes, 4);
        for ((ia, la), (ib, lb)) in a.items.iter().zip(&b.items) {
            assert_eq!(la, lb);
            assert_eq!(ia.as_slice(), ib.as_slice());
        }
    }

    #[test]
    fn minimal_size() {
        let ds = synth_dataset(2, 1, 0).unwrap();
        assert_eq!(ds.len(), 2);
    }

    #[test]
    fn different_seeds_differ() {
        let a = synth_dataset(2, 1, 1).unwrap();
        let b = synth_dataset(2, 1, 2).unwrap();
        assert_ne!(a.items[0].0.as_slice(), b.items[0].0.as_slice());
    }

    #[test]
    fn rejects_degenerate_arguments() {
        assert!(synth_dataset(1, 5, 0).is_err());
        assert!(synth_dataset(3, 0, 0).is_err());
    }

    #[test]
    fn samples_satisfy_image_invariants() {
        let ds = synth_dataset(3, 5, 42).unwrap();
        for (img, _) in &ds.items {
            assert!(img.is_canonical());
            img.validate().unwrap();
        }
    }

    #[test]
    fn same_class_samples_share_structure_more_than_cross_class() {
        // average intra-class L2 distance should undercut inter-class distance
        let ds = synth_dataset(4, 6, 3).unwrap();
        let dist = |a: &Image, b: &Image| -> f32 {
            a.as_slice()
                .iter()
                .zip(b.as_slice())
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f32>()
        };
        let mut intra = (0.0f32, 0);
        let mut inter = (0.0f32, 0);
        for i in 0..ds.len() {
            for j in (i + 1)..ds.len() {
                let d = dist(&ds.items[i].0, &ds.items[j].0);
                if ds.items[i].1 == ds.items[j].1 {
                    intra = (intra.0 + d, intra.1 + 1);
                } else {
                    inter = (inter.0 + d, inter.1 + 1);
                }
            }
        }
        assert!(intra.0 / (intra.1 as f32) < inter.0 / (inter.1 as f32));
    }
}
