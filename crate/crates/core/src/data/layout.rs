use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::image::Image;

/// On-disk dataset layout: one directory per class of PNG files under a split
/// directory, plus `manifest.txt` recording class names and counts:
///
/// ```text
/// root/
///   manifest.txt
///   train/<class-name>/*.png
///   test/<class-name>/*.png
/// ```
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::Argument(format!(
                "unknown split `{other}` (expected train or test)"
            ))),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Default)]
struct Manifest {
    name: String,
    classes: Vec<String>,
    /// (split, class index) -> item count
    counts: BTreeMap<(String, usize), usize>,
}

impl Manifest {
    fn parse(text: &str, path: &Path) -> Result<Manifest> {
        let mut m = Manifest::default();
        let mut class_names: BTreeMap<usize, String> = BTreeMap::new();
        let mut num_classes = 0usize;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Load {
                path: path.to_path_buf(),
                msg: format!("manifest line {} is not `key = value`", lineno + 1),
            })?;
            let (key, value) = (key.trim(), value.trim());
            if key == "name" {
                m.name = value.to_string();
            } else if key == "classes" {
                num_classes = value.parse().map_err(|_| Error::Load {
                    path: path.to_path_buf(),
                    msg: format!("bad class count `{value}`"),
                })?;
            } else if let Some(idx) = key.strip_prefix("class.") {
                let idx: usize = idx.parse().map_err(|_| Error::Load {
                    path: path.to_path_buf(),
                    msg: format!("bad class index in `{key}`"),
                })?;
                class_names.insert(idx, value.to_string());
            } else if let Some(rest) = key.strip_prefix("count.") {
                let (split, idx) = rest.split_once('.').ok_or_else(|| Error::Load {
                    path: path.to_path_buf(),
                    msg: format!("bad count key `{key}`"),
                })?;
                let idx: usize = idx.parse().map_err(|_| Error::Load {
                    path: path.to_path_buf(),
                    msg: format!("bad count key `{key}`"),
                })?;
                let n: usize = value.parse().map_err(|_| Error::Load {
                    path: path.to_path_buf(),
                    msg: format!("bad count value `{value}`"),
                })?;
                m.counts.insert((split.to_string(), idx), n);
            }
        }
        if num_classes == 0 || class_names.len() != num_classes {
            return Err(Error::Load {
                path: path.to_path_buf(),
                msg: format!(
                    "manifest declares {num_classes} classes but names {}",
                    class_names.len()
                ),
            });
        }
        m.classes = (0..num_classes)
            .map(|i| {
                class_names.get(&i).cloned().ok_or_else(|| Error::Load {
                    path: path.to_path_buf(),
                    msg: format!("missing class.{i} entry"),
                })
            })
            .collect::<Result<_>>()?;
        Ok(m)
    }

    fn render(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("name = {}\n", self.name));
        out.push_str(&format!("classes = {}\n", self.classes.len()));
        for (i, name) in self.classes.iter().enumerate() {
            out.push_str(&format!("class.{i} = {name}\n"));
        }
        for ((split, idx), n) in &self.counts {
            out.push_str(&format!("count.{split}.{idx} = {n}\n"));
        }
        out
    }
}

/// Load one split of a directory-per-class dataset; every image is resized to
/// the canonical 32x32 resolution with values scaled to `[0, 1]`.
pub fn load_dataset(root: impl AsRef<Path>, split: Split) -> Result<LabeledDataset> {
    let root = root.as_ref();
    let manifest_path = root.join("manifest.txt");
    let text = fs::read_to_string(&manifest_path)
        .map_err(|e| Error::io(manifest_path.clone(), e))?;
    let manifest = Manifest::parse(&text, &manifest_path)?;

    let split_dir = root.join(split.as_str());
    let mut items = Vec::new();
    for (class_id, class_name) in manifest.classes.iter().enumerate() {
        let class_dir = split_dir.join(class_name);
        let mut files: Vec<PathBuf> = fs::read_dir(&class_dir)
            .map_err(|e| Error::io(class_dir.clone(), e))?
            .filter_map(|entry| entry.ok().map(|e| e.path()))
            .filter(|p| p.extension().map(|e| e == "png").unwrap_or(false))
            .collect();
        files.sort();
        if let Some(&expected) = manifest.counts.get(&(split.as_str().to_string(), class_id)) {
            if files.len() != expected {
                return Err(Error::Load {
                    path: class_dir.clone(),
                    msg: format!(
                        "manifest expects {expected} {split} images for class {class_id}, found {}",
                        files.len()
                    ),
                });
            }
        }
        for path in files {
            let index = items.len();
            let decoded = image::open(&path).map_err(|e| Error::CorruptItem {
                index,
                path: path.clone(),
                msg: e.to_string(),
            })?;
            let img = Image::from_rgb8(&decoded.to_rgb8()).canonicalize();
            items.push((img, class_id));
        }
    }
    if items.is_empty() {
        return Err(Error::Load {
            path: root.to_path_buf(),
            msg: format!("no images under {split} split"),
        });
    }
    LabeledDataset::new(items, manifest.classes.len(), manifest.name)
}

/// Write one split of a dataset in the directory-per-class layout, creating
/// or updating `manifest.txt`. Class directories are named `class_<id>`.
pub fn save_dataset(ds: &LabeledDataset, root: impl AsRef<Path>, split: Split) -> Result<()> {
    ds.validate()?;
    let root = root.as_ref();
    fs::create_dir_all(root).map_err(|e| Error::io(root.to_path_buf(), e))?;

    let manifest_path = root.join("manifest.txt");
    let mut manifest = if manifest_path.exists() {
        let text = fs::read_to_string(&manifest_path)
            .map_err(|e| Error::io(manifest_path.clone(), e))?;
        let m = Manifest::parse(&text, &manifest_path)?;
        if m.classes.len() != ds.num_classes {
            return Err(Error::Argument(format!(
                "existing manifest has {} classes, dataset has {}",
                m.classes.len(),
                ds.num_classes
            )));
        }
        m
    } else {
        Manifest {
            name: ds.name.clone(),
            classes: (0..ds.num_classes).map(|i| format!("class_{i}")).collect(),
            counts: BTreeMap::new(),
        }
    };

    let mut per_class = vec![0usize; ds.num_classes];
    for (img, label) in &ds.items {
        let dir = root.join(split.as_str()).join(&manifest.classes[*label]);
        fs::create_dir_all(&dir).map_err(|e| Error::io(dir.clone(), e))?;
        let path = dir.join(format!("{:05}.png", per_class[*label]));
        img.to_rgb8()
            .save(&path)
            .map_err(|e| Error::Load {
                path: path.clone(),
                msg: e.to_string(),
            })?;
        per_class[*label] += 1;
    }
    for (class_id, n) in per_class.iter().enumerate() {
        manifest
            .counts
            .insert((split.as_str().to_string(), class_id), *n);
    }
    fs::write(&manifest_path, manifest.render())
        .map_err(|e| Error::io(manifest_path.clone(), e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_dataset;

    #[test]
    fn save_and_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let ds = synth_dataset(3, 4, 21).unwrap();
        save_dataset(&ds, dir.path(), Split::Train).unwrap();
        let loaded = load_dataset(dir.path(), Split::Train).unwrap();
        assert_eq!(loaded.len(), ds.len());
        assert_eq!(loaded.num_classes, 3);
        // PNG quantizes to 8 bits; pixel values must match within that step
        for ((a, la), (b, lb)) in ds.items.iter().zip(&loaded.items) {
            assert_eq!(la, lb);
            for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
                assert!((x - y).abs() <= 0.5 / 255.0 + 1e-6);
            }
        }
    }

    #[test]
    fn loading_canonicalizes_all_images() {
        let dir = tempfile::tempdir().unwrap();
        let ds = synth_dataset(2, 2, 5).unwrap();
        save_dataset(&ds, dir.path(), Split::Test).unwrap();
        // drop a larger image into one class dir to exercise the resize path
        let big = Image::from_fn(96, 96, |c, y, x| ((c + y + x) % 3) as f32 / 3.0);
        big.to_rgb8()
            .save(dir.path().join("test/class_0/zzz_big.png"))
            .unwrap();
        // fix the manifest count for the extra file
        let ds2 = load_dataset_with_relaxed_counts(dir.path());
        for (img, _) in &ds2.items {
            assert!(img.is_canonical());
            img.validate().unwrap();
        }
    }

    fn load_dataset_with_relaxed_counts(root: &Path) -> LabeledDataset {
        // rewrite the manifest without counts so the extra file is accepted
        let manifest_path = root.join("manifest.txt");
        let text = fs::read_to_string(&manifest_path).unwrap();
        let stripped: String = text
            .lines()
            .filter(|l| !l.trim_start().starts_with("count."))
            .map(|l| format!("{l}\n"))
            .collect();
        fs::write(&manifest_path, stripped).unwrap();
        load_dataset(root, Split::Test).unwrap()
    }

    #[test]
    fn missing_root_is_io_error() {
        let err = load_dataset("/nonexistent/nowhere", Split::Train).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }

    #[test]
    fn empty_split_is_load_error() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(
            dir.path().join("manifest.txt"),
            "name = empty\nclasses = 1\nclass.0 = a\n",
        )
        .unwrap();
        fs::create_dir_all(dir.path().join("train/a")).unwrap();
        let err = load_dataset(dir.path(), Split::Train).unwrap_err();
        assert!(matches!(err, Error::Load { .. }));
    }

    #[test]
    fn corrupt_image_reports_item_index() {
        let dir = tempfile::tempdir().unwrap();
        let ds = synth_dataset(2, 1, 5).unwrap();
        save_dataset(&ds, dir.path(), Split::Train).unwrap();
        fs::write(dir.path().join("train/class_1/00000.png"), b"not a png").unwrap();
        let err = load_dataset(dir.path(), Split::Train).unwrap_err();
        match err {
            Error::CorruptItem { index, .. } => assert_eq!(index, 1),
            other => panic!("expected CorruptItem, got {other:?}"),
        }
    }

    #[test]
    fn unknown_split_string_rejected() {
        assert!("validation".parse::<Split>().is_err());
        assert_eq!("train".parse::<Split>().unwrap(), Split::Train);
    }
}
