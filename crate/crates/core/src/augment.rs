//! Multi-scale prototype augmentation.
//!
//! Support images are resized to every resolution of a [`ScaleSet`],
//! extracted, pooled back to the grid of the base (first) resolution and
//! averaged into one prototype per scale; the class prototype is the mean of
//! those per-scale prototypes.

use crate::error::{Error, Result};
use crate::extractor::{Extractor, ExtractorConfig};
use crate::head::{compute_prototype, Prototype};
use crate::image::{resize_image, Image};
use crate::tensor::FeatureMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Resolution {
    pub width: usize,
    pub height: usize,
}

impl Resolution {
    pub const fn square(side: usize) -> Self {
        Self {
            width: side,
            height: side,
        }
    }
}

impl std::fmt::Display for Resolution {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}", self.width, self.height)
    }
}

impl std::str::FromStr for Resolution {
    type Err = Error;

    /// Accepts `84` or `84x84`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("resolution {s:?} is not N or WxH"));
        let s = s.trim();
        match s.split_once('x') {
            Some((w, h)) => Ok(Self {
                width: w.trim().parse().map_err(|_| bad())?,
                height: h.trim().parse().map_err(|_| bad())?,
            }),
            None => s.parse().map(Self::square).map_err(|_| bad()),
        }
    }
}

/// Resolutions to extract support images at; the first is the base.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScaleSet {
    resolutions: Vec<Resolution>,
}

impl Default for ScaleSet {
    fn default() -> Self {
        Self {
            resolutions: vec![
                Resolution::square(84),
                Resolution::square(92),
                Resolution::square(108),
            ],
        }
    }
}

impl ScaleSet {
    pub fn new(resolutions: Vec<Resolution>) -> Result<Self> {
        if resolutions.is_empty() {
            return Err(Error::Parameter("scale set is empty".into()));
        }
        Ok(Self { resolutions })
    }

    pub fn single(base: Resolution) -> Self {
        Self {
            resolutions: vec![base],
        }
    }

    pub fn base(&self) -> Resolution {
        self.resolutions[0]
    }

    pub fn resolutions(&self) -> &[Resolution] {
        &self.resolutions
    }

    /// Checks every scale against the extractor and returns the base grid.
    pub fn base_grid(&self, config: &ExtractorConfig) -> Result<(usize, usize)> {
        let base = config.output_grid(self.base().width, self.base().height)?;
        for res in &self.resolutions[1..] {
            let (w, h) = config.output_grid(res.width, res.height)?;
            if w < base.0 || h < base.1 {
                return Err(Error::Parameter(format!(
                    "scale {res} gives a {w}x{h} grid, smaller than the base {}x{}",
                    base.0, base.1
                )));
            }
        }
        Ok(base)
    }

    pub fn describe(&self) -> String {
        self.resolutions
            .iter()
            .map(Resolution::to_string)
            .collect::<Vec<_>>()
            .join(",")
    }
}

/// Adaptive average pooling of the spatial grid down to `target_w x target_h`.
///
/// Target cell `(a, b)` averages source rows `[⌊a·h/th⌋, ⌊(a+1)·h/th⌋)` and the
/// analogous column block.
pub fn pool_to_grid(map: &FeatureMap, target_w: usize, target_h: usize) -> Result<FeatureMap> {
    let (w, h, d) = map.shape();
    if target_w == 0 || target_h == 0 || target_w > w || target_h > h {
        return Err(Error::Parameter(format!(
            "cannot pool a {w}x{h} grid to {target_w}x{target_h}"
        )));
    }
    if (target_w, target_h) == (w, h) {
        return Ok(map.clone());
    }
    let mut data = Vec::with_capacity(target_w * target_h * d);
    let mut acc = vec![0.0; d];
    for a in 0..target_h {
        let (r0, r1) = (a * h / target_h, (a + 1) * h / target_h);
        for b in 0..target_w {
            let (c0, c1) = (b * w / target_w, (b + 1) * w / target_w);
            acc.iter_mut().for_each(|x| *x = 0.0);
            for row in r0..r1 {
                for col in c0..c1 {
                    for (s, v) in acc.iter_mut().zip(map.descriptor(row * w + col)) {
                        *s += v;
                    }
                }
            }
            let count = ((r1 - r0) * (c1 - c0)) as f64;
            data.extend(acc.iter().map(|s| s / count));
        }
    }
    FeatureMap::new(target_w, target_h, d, data)
}

/// Extracts `image` at `res` and pools the result to `grid`.
pub fn extract_at_scale(
    extractor: &Extractor,
    image: &Image,
    res: Resolution,
    grid: (usize, usize),
) -> Result<FeatureMap> {
    let resized = resize_image(image, res.width, res.height)?;
    pool_to_grid(&extractor.extract(&resized)?, grid.0, grid.1)
}

/// Mean of per-scale prototypes. `per_scale[s]` holds the pooled support maps at scale `s`.
pub fn fuse_scales(per_scale: &[Vec<FeatureMap>], class_id: usize) -> Result<Prototype> {
    let protos = per_scale
        .iter()
        .map(|maps| compute_prototype(maps, class_id))
        .collect::<Result<Vec<_>>>()?;
    let fused: Vec<FeatureMap> = protos.into_iter().map(|p| p.map).collect();
    compute_prototype(&fused, class_id)
}

/// Multi-scale prototype of one class from its support images.
pub fn augmented_prototype(
    support_images: &[Image],
    class_id: usize,
    scales: &ScaleSet,
    config: &ExtractorConfig,
) -> Result<Prototype> {
    let first = support_images
        .first()
        .ok_or_else(|| Error::Parameter(format!("class {class_id} has no support images")))?;
    let grid = scales.base_grid(config)?;
    let extractor = Extractor::new(config, first.channels())?;
    let per_scale = scales
        .resolutions()
        .iter()
        .map(|&res| {
            support_images
                .iter()
                .map(|img| extract_at_scale(&extractor, img, res, grid))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    fuse_scales(&per_scale, class_id)
}
