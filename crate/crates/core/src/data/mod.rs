//! Dataset loading, synthesis, shadow-set extraction, and augmentation.

mod augment;
mod layout;
mod synth;

pub use augment::{augment, AugmentConfig};
pub use layout::{load_dataset, save_dataset, Split};
pub use synth::synth_dataset;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::rng;

/// Labeled image collection; class ids are dense in `[0, num_classes)`.
#[derive(Debug, Clone)]
pub struct LabeledDataset {
    pub items: Vec<(Image, usize)>,
    pub num_classes: usize,
    pub name: String,
}

impl LabeledDataset {
    pub fn new(items: Vec<(Image, usize)>, num_classes: usize, name: impl Into<String>) -> Result<Self> {
        let ds = LabeledDataset {
            items,
            num_classes,
            name: name.into(),
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        if self.items.is_empty() {
            return Err(Error::Argument(format!("dataset `{}` is empty", self.name)));
        }
        for (i, (img, label)) in self.items.iter().enumerate() {
            if *label >= self.num_classes {
                return Err(Error::Argument(format!(
                    "item {i}: class id {label} outside [0, {})",
                    self.num_classes
                )));
            }
            img.validate()?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn images(&self) -> Vec<Image> {
        self.items.iter().map(|(img, _)| img.clone()).collect()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.items.iter().map(|(_, l)| *l).collect()
    }

    /// Deterministically take `count` items per class, in stored order.
    pub fn take_per_class(&self, count: usize, name: &str) -> Result<LabeledDataset> {
        let mut kept = Vec::new();
        let mut seen = vec![0usize; self.num_classes];
        for (img, label) in &self.items {
            if seen[*label] < count {
                kept.push((img.clone(), *label));
                seen[*label] += 1;
            }
        }
        LabeledDataset::new(kept, self.num_classes, name)
    }
}

/// Unlabeled image pool extracted from a source dataset.
#[derive(Debug, Clone)]
pub struct ShadowDataset {
    pub items: Vec<Image>,
    pub source: String,
}

impl ShadowDataset {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

/// One attack destination: a downstream task, its target class, and the
/// reference images anchoring the target-class feature region.
#[derive(Debug, Clone)]
pub struct AttackTarget {
    pub task: String,
    pub class_id: usize,
    pub refs: Vec<Image>,
}

/// All attack destinations for one injection run.
#[derive(Debug, Clone)]
pub struct ReferenceSet {
    pub targets: Vec<AttackTarget>,
}

impl ReferenceSet {
    pub fn new(targets: Vec<AttackTarget>) -> Result<Self> {
        if targets.is_empty() {
            return Err(Error::Argument("reference set has no targets".into()));
        }
        for t in &targets {
            if t.refs.is_empty() {
                return Err(Error::Argument(format!(
                    "target ({}, {}) has no reference images",
                    t.task, t.class_id
                )));
            }
        }
        Ok(ReferenceSet { targets })
    }

    pub fn single(task: impl Into<String>, class_id: usize, refs: Vec<Image>) -> Result<Self> {
        ReferenceSet::new(vec![AttackTarget {
            task: task.into(),
            class_id,
            refs,
        }])
    }

    /// Total reference count over all targets.
    pub fn total_refs(&self) -> usize {
        self.targets.iter().map(|t| t.refs.len()).sum()
    }
}

/// Uniform sample of `size` images without replacement, labels discarded.
pub fn make_shadow_dataset(src: &LabeledDataset, size: usize, seed: u64) -> Result<ShadowDataset> {
    if size == 0 || size > src.len() {
        return Err(Error::Argument(format!(
            "shadow size {size} outside [1, {}]",
            src.len()
        )));
    }
    let mut indices: Vec<usize> = (0..src.len()).collect();
    let mut rng = rng::rng_from(seed);
    indices.shuffle(&mut rng);
    indices.truncate(size);
    let items = indices
        .into_iter()
        .map(|i| src.items[i].0.clone())
        .collect();
    Ok(ShadowDataset {
        items,
        source: src.name.clone(),
    })
}
