use std::sync::OnceLock;

use crate::error::Result;
use crate::ingest::PartRegion;

use super::{patches, pool_patches, PooledHistograms, Raster};

/// 58 uniform patterns plus one bin shared by all non-uniform codes.
pub const TEXTURE_BINS: usize = 59;

fn uniform_table() -> &'static [u8; 256] {
    static TABLE: OnceLock<[u8; 256]> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut table = [0u8; 256];
        let mut next = 0u8;
        for (c, slot) in (0..=255u8).zip(table.iter_mut()) {
            let transitions = (c ^ c.rotate_right(1)).count_ones();
            if transitions <= 2 {
                *slot = next;
                next += 1;
            } else {
                *slot = (TEXTURE_BINS - 1) as u8;
            }
        }
        debug_assert_eq!(usize::from(next), TEXTURE_BINS - 1);
        table
    })
}

/// Histogram bin of an LBP code: uniform codes in increasing numeric order,
/// then one shared bin for the rest.
pub fn uniform_lbp_bin(code: u8) -> usize {
    usize::from(uniform_table()[usize::from(code)])
}

/// LBP(8,1) code of an interior pixel of a luma plane of width `stride`.
///
/// Neighbours are visited clockwise from the top-left; bit `n` is set when
/// neighbour `n` is strictly brighter than the centre.
pub fn lbp_code(gray: &[f64], stride: usize, x: usize, y: usize) -> u8 {
    const OFFSETS: [(isize, isize); 8] = [
        (-1, -1),
        (0, -1),
        (1, -1),
        (1, 0),
        (1, 1),
        (0, 1),
        (-1, 1),
        (-1, 0),
    ];
    let center = gray[y * stride + x];
    let mut code = 0u8;
    for (bit, (dx, dy)) in OFFSETS.iter().enumerate() {
        let nx = (x as isize + dx) as usize;
        let ny = (y as isize + dy) as usize;
        if gray[ny * stride + nx] > center {
            code |= 1 << bit;
        }
    }
    code
}

/// Pooled uniform-LBP histograms. Only pixels whose 3x3 neighbourhood lies
/// inside the region are coded; regions under 3x3 give a flagged empty block.
pub fn extract_texture(raster: &Raster, region: &PartRegion) -> Result<PooledHistograms> {
    extract_texture_gray(raster, &raster.luma(), region)
}

pub(crate) fn extract_texture_gray(
    raster: &Raster,
    gray: &[f64],
    region: &PartRegion,
) -> Result<PooledHistograms> {
    raster.check_region(&region.rect)?;
    let r = region.rect;
    if r.width < 3 || r.height < 3 {
        return Ok(pool_patches(&[], TEXTURE_BINS));
    }
    let stride = raster.width() as usize;
    let (x_lo, x_hi) = (r.x + 1, r.x + r.width - 1);
    let (y_lo, y_hi) = (r.y + 1, r.y + r.height - 1);
    let hists: Vec<Vec<f64>> = patches(&r)
        .map(|p| {
            let mut h = vec![0.0; TEXTURE_BINS];
            for y in p.y.max(y_lo)..(p.y + p.height).min(y_hi) {
                for x in p.x.max(x_lo)..(p.x + p.width).min(x_hi) {
                    let code = lbp_code(gray, stride, x as usize, y as usize);
                    h[uniform_lbp_bin(code)] += 1.0;
                }
            }
            h
        })
        .collect();
    Ok(pool_patches(&hists, TEXTURE_BINS))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{BodyPart, Rect};

    fn region(x: u32, y: u32, w: u32, h: u32) -> PartRegion {
        PartRegion {
            part: BodyPart::Torso,
            rect: Rect::new(x, y, w, h),
        }
    }

    #[test]
    fn uniform_table_shape() {
        let uniform = (0..=255u8).filter(|&c| uniform_lbp_bin(c) < TEXTURE_BINS - 1).count();
        assert_eq!(uniform, 58);
        assert_eq!(uniform_lbp_bin(0), 0);
        assert_eq!(uniform_lbp_bin(255), 57);
        // 0b0000_0101 has four transitions
        assert_eq!(uniform_lbp_bin(0b0000_0101), 58);
    }

    #[test]
    fn constant_region_is_all_zero_code() {
        let raster = Raster::filled(12, 12, [90, 90, 90]).unwrap();
        let pooled = extract_texture(&raster, &region(0, 0, 12, 12)).unwrap();
        assert_eq!(pooled.mean_pool.len(), TEXTURE_BINS);
        assert_eq!(pooled.mean_pool[0], 1.0);
        assert_eq!(pooled.max_pool[0], 1.0);
    }

    #[test]
    fn vertical_step_edge() {
        // 5 wide x 4 tall: columns 0-1 dark, 2-4 bright. Interior pixels are
        // x in 1..=3, y in 1..=2 (six pixels). At x=1 the three right-hand
        // neighbours (bits 2,3,4) are brighter: code 0b0001_1100 = 28, which
        // is the 14th uniform code (bin 13). x=2 and x=3 have no brighter
        // neighbour: code 0. So 4/6 in bin 0 and 2/6 in bin 13.
        let mut raster = Raster::filled(5, 4, [0, 0, 0]).unwrap();
        raster.fill_rect(Rect::new(2, 0, 3, 4), [200, 200, 200]);
        let gray = raster.luma();
        assert_eq!(lbp_code(&gray, 5, 1, 1), 28);
        assert_eq!(lbp_code(&gray, 5, 2, 1), 0);
        assert_eq!(uniform_lbp_bin(28), 13);

        let pooled = extract_texture(&raster, &region(0, 0, 5, 4)).unwrap();
        assert!((pooled.mean_pool[0] - 4.0 / 6.0).abs() < 1e-12);
        assert!((pooled.mean_pool[13] - 2.0 / 6.0).abs() < 1e-12);
        // one patch only, so max pooling renormalizes to the same histogram
        assert!((pooled.max_pool[0] - 4.0 / 6.0).abs() < 1e-12);
        assert!((pooled.max_pool[13] - 2.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn tiny_region_is_flagged() {
        let raster = Raster::filled(10, 10, [5, 5, 5]).unwrap();
        let pooled = extract_texture(&raster, &region(0, 0, 2, 9)).unwrap();
        assert!(pooled.empty);
        assert!(pooled.mean_pool.iter().all(|&v| v == 0.0));
        assert_eq!(pooled.max_pool.len(), TEXTURE_BINS);
    }

    #[test]
    fn region_outside_raster_errors() {
        let raster = Raster::filled(10, 10, [5, 5, 5]).unwrap();
        assert!(extract_texture(&raster, &region(8, 8, 3, 3)).is_err());
    }
}
