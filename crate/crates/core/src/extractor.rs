//! Deterministic toy convolutional feature extractor.
//!
//! Each layer is a zero-padded 3x3 convolution with seeded random filters
//! (no bias), a ramp `max(0, x)` and non-overlapping average pooling by the
//! layer's stride. The last layer's channels are the descriptor dimension.
//! With the default strides `[4, 2, 2]` an 84x84 input becomes a 5x5 grid.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::tensor::FeatureMap;

const KERNEL: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct ExtractorConfig {
    pub seed: u64,
    pub num_layers: usize,
    /// Channels of every layer but the last.
    pub hidden_dim: usize,
    /// Descriptor length `d`.
    pub out_dim: usize,
    /// Pooling stride per layer.
    pub strides: Vec<usize>,
}

impl Default for ExtractorConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            num_layers: 3,
            hidden_dim: 16,
            out_dim: 32,
            strides: vec![4, 2, 2],
        }
    }
}

impl ExtractorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_layers == 0 || self.out_dim == 0 || self.hidden_dim == 0 {
            return Err(Error::Parameter(
                "extractor needs at least one layer and nonzero widths".into(),
            ));
        }
        if self.strides.len() != self.num_layers {
            return Err(Error::Parameter(format!(
                "{} strides given for {} layers",
                self.strides.len(),
                self.num_layers
            )));
        }
        if self.strides.contains(&0) {
            return Err(Error::Parameter("stride 0".into()));
        }
        Ok(())
    }

    /// Grid `(w, h)` produced for a `width x height` input.
    pub fn output_grid(&self, width: usize, height: usize) -> Result<(usize, usize)> {
        self.validate()?;
        let (mut w, mut h) = (width, height);
        for (layer, &s) in self.strides.iter().enumerate() {
            w /= s;
            h /= s;
            if w == 0 || h == 0 {
                return Err(Error::Resolution(format!(
                    "{width}x{height} input collapses to nothing at layer {layer}; \
                     need at least {} pixels per side",
                    self.min_side()
                )));
            }
        }
        Ok((w, h))
    }

    /// Smallest side length that survives every pooling stage.
    pub fn min_side(&self) -> usize {
        self.strides.iter().product()
    }

    fn layer_widths(&self, in_channels: usize) -> Vec<(usize, usize)> {
        (0..self.num_layers)
            .map(|l| {
                let cin = if l == 0 { in_channels } else { self.hidden_dim };
                let cout = if l + 1 == self.num_layers {
                    self.out_dim
                } else {
                    self.hidden_dim
                };
                (cin, cout)
            })
            .collect()
    }
}

/// One conv layer's filters, laid out `[out][in][ky][kx]`.
#[derive(Debug, Clone)]
pub struct ConvLayer {
    pub in_channels: usize,
    pub out_channels: usize,
    pub stride: usize,
    pub weights: Vec<f64>,
}

impl ConvLayer {
    pub fn weight(&self, out: usize, input: usize, ky: usize, kx: usize) -> f64 {
        self.weights[((out * self.in_channels + input) * KERNEL + ky) * KERNEL + kx]
    }
}

/// Filters instantiated for one config and input channel count.
#[derive(Debug, Clone)]
pub struct Extractor {
    config: ExtractorConfig,
    in_channels: usize,
    layers: Vec<ConvLayer>,
}

impl Extractor {
    pub fn new(config: &ExtractorConfig, in_channels: usize) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let fan = KERNEL * KERNEL;
        let layers = config
            .layer_widths(in_channels)
            .into_iter()
            .zip(&config.strides)
            .map(|((cin, cout), &stride)| {
                let mut weights = Vec::with_capacity(cout * cin * fan);
                for _ in 0..cout {
                    let filter: Vec<f64> =
                        (0..cin * fan).map(|_| rng.gen_range(-1.0..=1.0)).collect();
                    let mean = filter.iter().sum::<f64>() / filter.len() as f64;
                    weights.extend(filter.iter().map(|w| w - mean));
                }
                ConvLayer {
                    in_channels: cin,
                    out_channels: cout,
                    stride,
                    weights,
                }
            })
            .collect();
        Ok(Self {
            config: config.clone(),
            in_channels,
            layers,
        })
    }

    pub fn layers(&self) -> &[ConvLayer] {
        &self.layers
    }

    pub fn config(&self) -> &ExtractorConfig {
        &self.config
    }

    pub fn extract(&self, image: &Image) -> Result<FeatureMap> {
        if image.channels() != self.in_channels {
            return Err(Error::Dimension(format!(
                "extractor built for {} channels, image has {}",
                self.in_channels,
                image.channels()
            )));
        }
        let (out_w, out_h) = self.config.output_grid(image.width(), image.height())?;

        // planar [channel][row][col]
        let (mut w, mut h) = (image.width(), image.height());
        let ch = image.channels();
        let mut planes = vec![0.0; ch * w * h];
        for (i, &p) in image.pixels().iter().enumerate() {
            let (pixel, c) = (i / ch, i % ch);
            planes[c * w * h + pixel] = p;
        }

        for layer in &self.layers {
            let conv = conv3x3_relu(&planes, w, h, layer);
            let (pw, ph) = (w / layer.stride, h / layer.stride);
            planes = avg_pool(&conv, w, h, layer.out_channels, layer.stride);
            w = pw;
            h = ph;
        }
        debug_assert_eq!((w, h), (out_w, out_h));

        let d = self.config.out_dim;
        let mut data = vec![0.0; w * h * d];
        for c in 0..d {
            for p in 0..w * h {
                // descriptors are stored at single precision so feature files round-trip exactly
                data[p * d + c] = planes[c * w * h + p] as f32 as f64;
            }
        }
        FeatureMap::new(w, h, d, data)
    }
}

fn conv3x3_relu(input: &[f64], w: usize, h: usize, layer: &ConvLayer) -> Vec<f64> {
    let plane = w * h;
    let mut out = vec![0.0; layer.out_channels * plane];
    for o in 0..layer.out_channels {
        let dst = &mut out[o * plane..(o + 1) * plane];
        for i in 0..layer.in_channels {
            let src = &input[i * plane..(i + 1) * plane];
            for ky in 0..KERNEL {
                for kx in 0..KERNEL {
                    let wt = layer.weight(o, i, ky, kx);
                    // source row/col = dest + k - 1, skipping the zero padding
                    let y_lo = 1usize.saturating_sub(ky);
                    let y_hi = (h + 1 - ky).min(h);
                    let x_lo = 1usize.saturating_sub(kx);
                    let x_hi = (w + 1 - kx).min(w);
                    for y in y_lo..y_hi {
                        let sy = y + ky - 1;
                        let srow = &src[sy * w..(sy + 1) * w];
                        let drow = &mut dst[y * w..(y + 1) * w];
                        for x in x_lo..x_hi {
                            drow[x] += wt * srow[x + kx - 1];
                        }
                    }
                }
            }
        }
        for v in dst.iter_mut() {
            *v = if *v > 0.0 { *v } else { 0.0 };
        }
    }
    out
}

fn avg_pool(input: &[f64], w: usize, h: usize, channels: usize, stride: usize) -> Vec<f64> {
    if stride == 1 {
        return input.to_vec();
    }
    let (pw, ph) = (w / stride, h / stride);
    let area = (stride * stride) as f64;
    let mut out = Vec::with_capacity(channels * pw * ph);
    for c in 0..channels {
        let src = &input[c * w * h..(c + 1) * w * h];
        for py in 0..ph {
            for px in 0..pw {
                let mut acc = 0.0;
                for y in py * stride..(py + 1) * stride {
                    for x in px * stride..(px + 1) * stride {
                        acc += src[y * w + x];
                    }
                }
                out.push(acc / area);
            }
        }
    }
    out
}

/// Convenience wrapper building the filters for `image`'s channel count.
pub fn extract(image: &Image, config: &ExtractorConfig) -> Result<FeatureMap> {
    Extractor::new(config, image.channels())?.extract(image)
}
