//! Labelled datasets: synthetic shape classes, image directories and
//! feature files with a labels sidecar.

use std::collections::BTreeMap;
use std::f64::consts::{PI, TAU};
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::features_io::{labels_path, load_features, load_labels};
use crate::image::{read_pnm, write_pnm, Image};
use crate::tensor::FeatureMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Item {
    Image(Image),
    Features(FeatureMap),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassData {
    pub name: String,
    pub items: Vec<Item>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub classes: Vec<ClassData>,
    pub split: Split,
}

impl Dataset {
    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn item(&self, class: usize, index: usize) -> &Item {
        &self.classes[class].items[index]
    }

    pub fn total_items(&self) -> usize {
        self.classes.iter().map(|c| c.items.len()).sum()
    }

    /// Loads a directory of per-class image folders, or a feature file with its
    /// `.labels` sidecar.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let meta = fs::metadata(path).map_err(|e| Error::io(path, e))?;
        if meta.is_dir() {
            load_image_dir(path)
        } else {
            load_feature_file(path)
        }
    }

    /// Writes every image item as `<dir>/<class>/<nnnn>.pgm|ppm`.
    pub fn save_images(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        for class in &self.classes {
            let sub = dir.join(&class.name);
            fs::create_dir_all(&sub).map_err(|e| Error::io(&sub, e))?;
            for (i, item) in class.items.iter().enumerate() {
                let Item::Image(img) = item else {
                    return Err(Error::Parameter(format!(
                        "class {} holds feature maps, not images",
                        class.name
                    )));
                };
                let ext = if img.channels() == 1 { "pgm" } else { "ppm" };
                write_pnm(img, sub.join(format!("{i:04}.{ext}")))?;
            }
        }
        Ok(())
    }
}

fn sorted_entries(dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    let mut entries = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
        .collect::<Result<Vec<_>>>()?;
    entries.sort();
    Ok(entries)
}

fn load_image_dir(dir: &Path) -> Result<Dataset> {
    let mut classes = Vec::new();
    for sub in sorted_entries(dir)? {
        if !sub.is_dir() {
            continue;
        }
        let mut items = Vec::new();
        for file in sorted_entries(&sub)? {
            let is_pnm = file
                .extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "pgm" | "ppm" | "pnm"));
            if is_pnm {
                items.push(Item::Image(read_pnm(&file)?));
            }
        }
        let name = sub
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        classes.push(ClassData { name, items });
    }
    if classes.is_empty() {
        return Err(Error::Config(format!(
            "{} has no class subdirectories",
            dir.display()
        )));
    }
    Ok(Dataset {
        classes,
        split: Split::Test,
    })
}

fn load_feature_file(path: &Path) -> Result<Dataset> {
    let maps = load_features(path)?;
    let labels = load_labels(labels_path(path))?;
    if labels.len() != maps.len() {
        return Err(Error::Config(format!(
            "{} maps but {} labels",
            maps.len(),
            labels.len()
        )));
    }
    let mut grouped: BTreeMap<String, Vec<Item>> = BTreeMap::new();
    for (map, label) in maps.into_iter().zip(labels) {
        grouped.entry(label).or_default().push(Item::Features(map));
    }
    Ok(Dataset {
        classes: grouped
            .into_iter()
            .map(|(name, items)| ClassData { name, items })
            .collect(),
        split: Split::Test,
    })
}

/// Pattern drawn inside the object disk.
#[derive(Debug, Clone)]
enum Pattern {
    Bars { freq: f64 },
    Rings { freq: f64, phase: f64 },
    Blobs { centers: Vec<(f64, f64, f64)> },
    Plaid { freq: f64 },
}

#[derive(Debug, Clone)]
struct ShapeClass {
    pattern: Pattern,
    orientation: f64,
    contrast: f64,
}

impl ShapeClass {
    fn sample(index: usize, rng: &mut ChaCha8Rng) -> Self {
        let pattern = match index % 4 {
            0 => Pattern::Bars {
                freq: rng.gen_range(1.0..3.0),
            },
            1 => Pattern::Rings {
                freq: rng.gen_range(1.0..3.0),
                phase: rng.gen_range(0.0..TAU),
            },
            2 => Pattern::Blobs {
                centers: (0..rng.gen_range(2..5))
                    .map(|_| {
                        let r = rng.gen_range(0.2..0.7);
                        let a = rng.gen_range(0.0..TAU);
                        (r * a.cos(), r * a.sin(), rng.gen_range(0.15..0.35))
                    })
                    .collect(),
            },
            _ => Pattern::Plaid {
                freq: rng.gen_range(0.8..2.2),
            },
        };
        Self {
            pattern,
            orientation: rng.gen_range(0.0..PI),
            contrast: rng.gen_range(0.6..0.9),
        }
    }

    /// Pattern intensity in `[0,1]` at object-relative coordinates.
    fn value(&self, x: f64, y: f64) -> f64 {
        match &self.pattern {
            Pattern::Bars { freq } => 0.5 + 0.5 * (TAU * freq * x).cos(),
            Pattern::Rings { freq, phase } => {
                0.5 + 0.5 * (TAU * freq * (x * x + y * y).sqrt() + phase).cos()
            }
            Pattern::Blobs { centers } => centers
                .iter()
                .map(|&(cx, cy, s)| (-((x - cx).powi(2) + (y - cy).powi(2)) / (2.0 * s * s)).exp())
                .sum::<f64>()
                .min(1.0),
            Pattern::Plaid { freq } => {
                0.5 + 0.5 * (TAU * freq * x).cos() * (TAU * freq * y).cos()
            }
        }
    }

    fn render(&self, side: usize, rng: &mut ChaCha8Rng) -> Image {
        let s = side as f64;
        let cx = s * (0.5 + rng.gen_range(-0.1..0.1));
        let cy = s * (0.5 + rng.gen_range(-0.1..0.1));
        let radius = 0.3 * s * rng.gen_range(0.75..1.3);
        let angle = self.orientation + rng.gen_range(-0.2..0.2);
        let (sin, cos) = angle.sin_cos();
        let background = rng.gen_range(0.25..0.45);
        let clutter: Vec<(f64, f64, f64, f64)> = (0..4)
            .map(|_| {
                (
                    rng.gen_range(0.0..s),
                    rng.gen_range(0.0..s),
                    rng.gen_range(0.04..0.1) * s,
                    rng.gen_range(-0.2..0.2),
                )
            })
            .collect();

        let mut pixels = Vec::with_capacity(side * side);
        for row in 0..side {
            for col in 0..side {
                let (px, py) = (col as f64 + 0.5, row as f64 + 0.5);
                let (dx, dy) = ((px - cx) / radius, (py - cy) / radius);
                let (x, y) = (cos * dx + sin * dy, -sin * dx + cos * dy);
                let rho = (dx * dx + dy * dy).sqrt();
                let mask = ((1.15 - rho) / 0.15).clamp(0.0, 1.0);
                let mut bg = background;
                for &(bx, by, bs, amp) in &clutter {
                    let d2 = (px - bx).powi(2) + (py - by).powi(2);
                    bg += amp * (-d2 / (2.0 * bs * bs)).exp();
                }
                let fg = 0.5 + self.contrast * (self.value(x, y) - 0.5);
                let noise = rng.gen_range(-0.04..0.04);
                pixels.push((bg * (1.0 - mask) + fg * mask + noise).clamp(0.0, 1.0));
            }
        }
        Image::new(side, side, 1, pixels).expect("pixels are clamped to [0,1]")
    }
}

/// Deterministic synthetic dataset of grayscale shape classes.
///
/// Each class is a parametric pattern family (bars, rings, blob clusters or
/// plaids) with class-specific frequency, orientation and contrast, drawn in
/// a disk whose position, size and rotation jitter per sample over a
/// cluttered background.
pub fn generate_toy_dataset(
    seed: u64,
    num_classes: usize,
    samples_per_class: usize,
    resolution: usize,
) -> Result<Dataset> {
    if num_classes < 2 {
        return Err(Error::Parameter(format!(
            "need at least 2 classes, got {num_classes}"
        )));
    }
    if resolution < 2 {
        return Err(Error::Parameter(format!("resolution {resolution}")));
    }
    let classes = (0..num_classes)
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c as u64);
            let shape = ShapeClass::sample(c, &mut rng);
            ClassData {
                name: format!("class_{c:03}"),
                items: (0..samples_per_class)
                    .map(|_| Item::Image(shape.render(resolution, &mut rng)))
                    .collect(),
            }
        })
        .collect();
    Ok(Dataset {
        classes,
        split: Split::Test,
    })
}
