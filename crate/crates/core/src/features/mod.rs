//! Per-part histogram features.
//!
//! Every image is described by 72 blocks: nine body parts, four channels
//! (color, texture, dense gradient words, skin) and two patch aggregations
//! (mean and max pooling). Each block is an L1-normalized histogram, or an
//! all-zero histogram flagged `empty` when the region is too small to sample.

mod cache;
mod codebook;
mod color;
mod skin;
mod sift;
mod texture;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{BodyPart, PartRegion, Rect};

pub use cache::{read_cache, write_cache, CacheEntry, FEATURE_CACHE_FORMAT};
pub use codebook::{kmeans, train_codebook, Codebook, KMeansOptions, CODEBOOK_FORMAT};
pub use color::{extract_color, hsv_bin, COLOR_BINS};
pub use sift::{
    dense_descriptors, descriptor_at, extract_sift, Descriptor, DESCRIPTOR_DIM, DESCRIPTOR_STRIDE,
    DESCRIPTOR_WINDOW,
};
pub use skin::{extract_skin, skin_probability, SKIN_BINS};
pub use texture::{extract_texture, lbp_code, uniform_lbp_bin, TEXTURE_BINS};

/// Side length of the square patches histograms are pooled over.
pub const PATCH_SIZE: u32 = 8;
pub const CHANNELS_PER_PART: usize = 4;
pub const AGGREGATIONS: usize = 2;
pub const BLOCK_COUNT: usize = 9 * CHANNELS_PER_PART * AGGREGATIONS;

/// An 8-bit RGB image in row-major order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Raster {
    width: u32,
    height: u32,
    pixels: Vec<[u8; 3]>,
}

impl Raster {
    pub fn new(width: u32, height: u32, pixels: Vec<[u8; 3]>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidDimensions { width, height });
        }
        let expected = width as usize * height as usize;
        if pixels.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                found: pixels.len(),
            });
        }
        Ok(Raster {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: u32, height: u32, rgb: [u8; 3]) -> Result<Self> {
        Raster::new(width, height, vec![rgb; width as usize * height as usize])
    }

    /// Decodes a PNG or JPEG file.
    pub fn load(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?;
        let rgb = img.to_rgb8();
        let (w, h) = rgb.dimensions();
        Raster::new(w, h, rgb.pixels().map(|p| p.0).collect())
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let mut buf = image::RgbImage::new(self.width, self.height);
        for (dst, src) in buf.pixels_mut().zip(&self.pixels) {
            dst.0 = *src;
        }
        buf.save_with_format(path, image::ImageFormat::Png)
            .map_err(|source| Error::Image {
                path: path.to_path_buf(),
                source,
            })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        self.pixels[y as usize * self.width as usize + x as usize]
    }

    pub fn set_pixel(&mut self, x: u32, y: u32, rgb: [u8; 3]) {
        let w = self.width as usize;
        self.pixels[y as usize * w + x as usize] = rgb;
    }

    pub fn fill_rect(&mut self, rect: Rect, rgb: [u8; 3]) {
        let x_end = (rect.x + rect.width).min(self.width);
        let y_end = (rect.y + rect.height).min(self.height);
        for y in rect.y..y_end {
            for x in rect.x..x_end {
                self.set_pixel(x, y, rgb);
            }
        }
    }

    /// ITU-R BT.601 luma of every pixel.
    pub fn luma(&self) -> Vec<f64> {
        self.pixels.iter().map(|&p| luma(p)).collect()
    }

    pub(crate) fn check_region(&self, rect: &Rect) -> Result<()> {
        if rect.fits_within(self.width, self.height) {
            Ok(())
        } else {
            Err(Error::RegionOutOfBounds {
                x: rect.x,
                y: rect.y,
                width: rect.width,
                height: rect.height,
                raster_width: self.width,
                raster_height: self.height,
            })
        }
    }
}

pub fn luma(p: [u8; 3]) -> f64 {
    0.299 * f64::from(p[0]) + 0.587 * f64::from(p[1]) + 0.114 * f64::from(p[2])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    Color,
    Texture,
    Sift,
    Skin,
}

impl Channel {
    pub const ALL: [Channel; 4] = [Channel::Color, Channel::Texture, Channel::Sift, Channel::Skin];

    pub fn as_str(self) -> &'static str {
        match self {
            Channel::Color => "color",
            Channel::Texture => "texture",
            Channel::Sift => "sift",
            Channel::Skin => "skin",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    MeanPool,
    MaxPool,
}

impl Aggregation {
    pub const ALL: [Aggregation; 2] = [Aggregation::MeanPool, Aggregation::MaxPool];

    pub fn as_str(self) -> &'static str {
        match self {
            Aggregation::MeanPool => "mean_pool",
            Aggregation::MaxPool => "max_pool",
        }
    }
}

/// Position of a (part, channel, aggregation) triple in canonical block order.
pub fn block_index(part: BodyPart, channel: Channel, aggregation: Aggregation) -> usize {
    (part.index() * CHANNELS_PER_PART + channel as usize) * AGGREGATIONS + aggregation as usize
}

/// Inverse of [`block_index`].
pub fn block_key(index: usize) -> (BodyPart, Channel, Aggregation) {
    let aggregation = Aggregation::ALL[index % AGGREGATIONS];
    let channel = Channel::ALL[(index / AGGREGATIONS) % CHANNELS_PER_PART];
    let part = BodyPart::ALL[index / (AGGREGATIONS * CHANNELS_PER_PART)];
    (part, channel, aggregation)
}

/// Mean- and max-pooled histograms for one region and channel.
#[derive(Debug, Clone, PartialEq)]
pub struct PooledHistograms {
    pub mean_pool: Vec<f64>,
    pub max_pool: Vec<f64>,
    /// Set when no patch could be sampled; both histograms are then all zero.
    pub empty: bool,
}

impl PooledHistograms {
    fn empty(dim: usize) -> Self {
        PooledHistograms {
            mean_pool: vec![0.0; dim],
            max_pool: vec![0.0; dim],
            empty: true,
        }
    }
}

/// Pools per-patch bin counts. Each patch histogram is normalized to unit mass
/// first; patches without samples are ignored. Both pooled outputs are
/// L1-renormalized.
pub fn pool_patches(patches: &[Vec<f64>], dim: usize) -> PooledHistograms {
    let mut mean = vec![0.0; dim];
    let mut max = vec![0.0f64; dim];
    let mut used = 0usize;
    for counts in patches {
        debug_assert_eq!(counts.len(), dim);
        let total: f64 = counts.iter().sum();
        if total <= 0.0 {
            continue;
        }
        used += 1;
        for ((m, x), &c) in mean.iter_mut().zip(max.iter_mut()).zip(counts) {
            let v = c / total;
            *m += v;
            *x = x.max(v);
        }
    }
    if used == 0 {
        return PooledHistograms::empty(dim);
    }
    l1_normalize(&mut mean);
    l1_normalize(&mut max);
    PooledHistograms {
        mean_pool: mean,
        max_pool: max,
        empty: false,
    }
}

pub(crate) fn l1_normalize(v: &mut [f64]) {
    let s: f64 = v.iter().sum();
    if s > 0.0 {
        v.iter_mut().for_each(|x| *x /= s);
    }
}

/// Non-overlapping `PATCH_SIZE` tiles of a region, clipped at its far edges.
pub(crate) fn patches(rect: &Rect) -> impl Iterator<Item = Rect> + '_ {
    let rows = rect.height.div_ceil(PATCH_SIZE);
    let cols = rect.width.div_ceil(PATCH_SIZE);
    (0..rows).flat_map(move |r| {
        (0..cols).map(move |c| {
            let x = rect.x + c * PATCH_SIZE;
            let y = rect.y + r * PATCH_SIZE;
            Rect::new(
                x,
                y,
                PATCH_SIZE.min(rect.x + rect.width - x),
                PATCH_SIZE.min(rect.y + rect.height - y),
            )
        })
    })
}

/// Per-pixel binning shared by the color and skin channels.
pub(crate) fn pixel_binned(
    raster: &Raster,
    region: &PartRegion,
    dim: usize,
    bin: impl Fn([u8; 3]) -> usize,
) -> Result<PooledHistograms> {
    raster.check_region(&region.rect)?;
    let hists: Vec<Vec<f64>> = patches(&region.rect)
        .map(|p| {
            let mut h = vec![0.0; dim];
            for y in p.y..p.y + p.height {
                for x in p.x..p.x + p.width {
                    h[bin(raster.pixel(x, y))] += 1.0;
                }
            }
            h
        })
        .collect();
    Ok(pool_patches(&hists, dim))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureBlock {
    pub part: BodyPart,
    pub channel: Channel,
    pub aggregation: Aggregation,
    pub histogram: Vec<f64>,
    pub empty: bool,
}

/// The 72 blocks of one image, in canonical order, tagged with the codebook
/// that produced the gradient-word channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BodyFeatures {
    pub codebook_fingerprint: String,
    pub blocks: Vec<FeatureBlock>,
}

impl BodyFeatures {
    /// Validates block count, order, non-negativity and normalization.
    pub fn new(codebook_fingerprint: String, blocks: Vec<FeatureBlock>) -> Result<Self> {
        if blocks.len() != BLOCK_COUNT {
            return Err(Error::DimensionMismatch {
                expected: BLOCK_COUNT,
                found: blocks.len(),
            });
        }
        for (i, b) in blocks.iter().enumerate() {
            if block_key(i) != (b.part, b.channel, b.aggregation) {
                return Err(Error::InvalidParameter(format!(
                    "block {i} is ({}, {}, {}), not in canonical order",
                    b.part,
                    b.channel.as_str(),
                    b.aggregation.as_str()
                )));
            }
            if let Some((j, &v)) = b.histogram.iter().enumerate().find(|(_, v)| !(**v >= 0.0)) {
                return Err(Error::NegativeEntry { index: j, value: v });
            }
        }
        Ok(BodyFeatures {
            codebook_fingerprint,
            blocks,
        })
    }

    /// Builds features from 72 histograms in canonical block order; a block
    /// is marked empty when its histogram is all zero.
    pub fn from_histograms(codebook_fingerprint: String, histograms: Vec<Vec<f64>>) -> Result<Self> {
        let blocks = histograms
            .into_iter()
            .enumerate()
            .map(|(i, histogram)| {
                let (part, channel, aggregation) = block_key(i.min(BLOCK_COUNT - 1));
                FeatureBlock {
                    part,
                    channel,
                    aggregation,
                    empty: histogram.iter().all(|&v| v == 0.0),
                    histogram,
                }
            })
            .collect();
        BodyFeatures::new(codebook_fingerprint, blocks)
    }

    pub fn block(&self, part: BodyPart, channel: Channel, aggregation: Aggregation) -> &FeatureBlock {
        &self.blocks[block_index(part, channel, aggregation)]
    }

    pub fn histograms(&self) -> impl Iterator<Item = &[f64]> {
        self.blocks.iter().map(|b| b.histogram.as_slice())
    }
}

/// Extracts all 72 blocks for one image.
pub fn extract_all(
    raster: &Raster,
    regions: &[PartRegion; 9],
    codebook: &Codebook,
) -> Result<BodyFeatures> {
    let gray = raster.luma();
    let mut blocks = Vec::with_capacity(BLOCK_COUNT);
    for (region, part) in regions.iter().zip(BodyPart::ALL) {
        if region.part != part {
            return Err(Error::InvalidParameter(format!(
                "region for {} found where {part} was expected",
                region.part
            )));
        }
        let wrap = |e| Error::in_part(part.as_str(), e);
        let per_channel = [
            (Channel::Color, extract_color(raster, region).map_err(wrap)?),
            (
                Channel::Texture,
                texture::extract_texture_gray(raster, &gray, region).map_err(wrap)?,
            ),
            (
                Channel::Sift,
                sift::extract_sift_gray(raster, &gray, region, codebook).map_err(wrap)?,
            ),
            (Channel::Skin, extract_skin(raster, region).map_err(wrap)?),
        ];
        for (channel, pooled) in per_channel {
            let empty = pooled.empty;
            blocks.push(FeatureBlock {
                part,
                channel,
                aggregation: Aggregation::MeanPool,
                histogram: pooled.mean_pool,
                empty,
            });
            blocks.push(FeatureBlock {
                part,
                channel,
                aggregation: Aggregation::MaxPool,
                histogram: pooled.max_pool,
                empty,
            });
        }
    }
    BodyFeatures::new(codebook.fingerprint().to_string(), blocks)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn block_index_round_trip() {
        for i in 0..BLOCK_COUNT {
            let (p, c, a) = block_key(i);
            assert_eq!(block_index(p, c, a), i);
        }
        assert_eq!(
            block_index(BodyPart::Torso, Channel::Color, Aggregation::MeanPool),
            0
        );
        assert_eq!(
            block_index(BodyPart::LowerRightLeg, Channel::Skin, Aggregation::MaxPool),
            71
        );
    }

    #[test]
    fn patch_tiling_covers_region() {
        let rect = Rect::new(3, 5, 20, 9);
        let tiles: Vec<_> = patches(&rect).collect();
        assert_eq!(tiles.len(), 3 * 2);
        let area: u32 = tiles.iter().map(|t| t.width * t.height).sum();
        assert_eq!(area, 20 * 9);
        assert_eq!(tiles[2], Rect::new(19, 5, 4, 8));
    }

    #[test]
    fn empty_patch_list_is_flagged() {
        let pooled = pool_patches(&[], 4);
        assert!(pooled.empty);
        assert_eq!(pooled.mean_pool, vec![0.0; 4]);
    }

    proptest! {
        #[test]
        fn pooling_is_order_invariant_and_normalized(
            patches in proptest::collection::vec(proptest::collection::vec(0u32..20, 5), 1..12),
            seed in any::<u64>(),
        ) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let hists: Vec<Vec<f64>> = patches
                .iter()
                .map(|p| p.iter().map(|&c| f64::from(c)).collect())
                .collect();
            let a = pool_patches(&hists, 5);
            let mut shuffled = hists.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let b = pool_patches(&shuffled, 5);
            prop_assert_eq!(&a.max_pool, &b.max_pool);
            for (x, y) in a.mean_pool.iter().zip(&b.mean_pool) {
                prop_assert!((x - y).abs() < 1e-12);
            }
            if !a.empty {
                prop_assert!((a.mean_pool.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                prop_assert!((a.max_pool.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }
    }
}
