//! Rectify-weight visualisation: the query image with each grid cell's
//! brightness scaled by its weight.

use std::path::Path;

use crate::error::{Error, Result};
use crate::head::RectifyWeights;
use crate::image::{write_pnm, Image};

/// Brightness multipliers `0.25 + 0.75·w̃`, where `w̃` is the min-max
/// normalized weight (0.5 when all weights are equal).
pub fn brightness_factors(weights: &[f64]) -> Vec<f64> {
    let lo = weights.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    weights
        .iter()
        .map(|&w| {
            let norm = if hi > lo { (w - lo) / (hi - lo) } else { 0.5 };
            0.25 + 0.75 * norm
        })
        .collect()
}

/// Grayscale copy of `image` modulated cell by cell. The `grid_w x grid_h`
/// weight grid is upsampled to the image with nearest-cell lookup.
pub fn heatmap_image(
    image: &Image,
    weights: &RectifyWeights,
    grid_w: usize,
    grid_h: usize,
) -> Result<Image> {
    if grid_w == 0 || grid_h == 0 || weights.len() != grid_w * grid_h {
        return Err(Error::Dimension(format!(
            "{} weights for a {grid_w}x{grid_h} grid",
            weights.len()
        )));
    }
    let gray = image.to_gray();
    let factors = brightness_factors(weights.values());
    let (w, h) = (gray.width(), gray.height());
    let mut pixels = Vec::with_capacity(w * h);
    for row in 0..h {
        let cell_row = row * grid_h / h;
        for col in 0..w {
            let cell_col = col * grid_w / w;
            pixels.push(gray.get(row, col, 0) * factors[cell_row * grid_w + cell_col]);
        }
    }
    Image::new(w, h, 1, pixels)
}

/// Writes the heatmap as binary PGM (P5, maxval 255).
pub fn render_weight_heatmap(
    query_image: &Image,
    weights: &RectifyWeights,
    grid_w: usize,
    grid_h: usize,
    out_path: impl AsRef<Path>,
) -> Result<()> {
    write_pnm(&heatmap_image(query_image, weights, grid_w, grid_h)?, out_path)
}
