use crate::error::Result;
use crate::ingest::PartRegion;

use super::{pixel_binned, PooledHistograms, Raster};

const HUE_BINS: usize = 8;
const SAT_BINS: usize = 4;
const VAL_BINS: usize = 3;

/// HSV quantization: 8 hue x 4 saturation x 3 value bins.
pub const COLOR_BINS: usize = HUE_BINS * SAT_BINS * VAL_BINS;

/// HSV bin of an RGB pixel, laid out hue-major.
pub fn hsv_bin(p: [u8; 3]) -> usize {
    let r = f64::from(p[0]) / 255.0;
    let g = f64::from(p[1]) / 255.0;
    let b = f64::from(p[2]) / 255.0;
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;

    let hue = if delta == 0.0 {
        0.0
    } else if max == r {
        (60.0 * ((g - b) / delta)).rem_euclid(360.0)
    } else if max == g {
        60.0 * ((b - r) / delta + 2.0)
    } else {
        60.0 * ((r - g) / delta + 4.0)
    };
    let sat = if max == 0.0 { 0.0 } else { delta / max };

    let h = ((hue / 360.0 * HUE_BINS as f64) as usize).min(HUE_BINS - 1);
    let s = ((sat * SAT_BINS as f64) as usize).min(SAT_BINS - 1);
    let v = ((max * VAL_BINS as f64) as usize).min(VAL_BINS - 1);
    (h * SAT_BINS + s) * VAL_BINS + v
}

/// Pooled HSV histograms over 8x8 patches of a region.
pub fn extract_color(raster: &Raster, region: &PartRegion) -> Result<PooledHistograms> {
    pixel_binned(raster, region, COLOR_BINS, hsv_bin)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use crate::ingest::{BodyPart, Rect};

    fn region(x: u32, y: u32, w: u32, h: u32) -> PartRegion {
        PartRegion {
            part: BodyPart::Torso,
            rect: Rect::new(x, y, w, h),
        }
    }

    #[test]
    fn primary_bins() {
        // hue 0, full saturation, full value
        assert_eq!(hsv_bin([255, 0, 0]), 3 * 3 + 2);
        // hue 240 lands in hue bin 5
        assert_eq!(hsv_bin([0, 0, 255]), (5 * 4 + 3) * 3 + 2);
        assert_eq!(hsv_bin([0, 0, 0]), 0);
        // white: no saturation, top value bin
        assert_eq!(hsv_bin([255, 255, 255]), 2);
        assert!(hsv_bin([255, 0, 1]) < COLOR_BINS);
    }

    #[test]
    fn uniform_red_is_one_hot() {
        let raster = Raster::filled(20, 20, [255, 0, 0]).unwrap();
        let pooled = extract_color(&raster, &region(2, 3, 13, 11)).unwrap();
        let bin = hsv_bin([255, 0, 0]);
        for hist in [&pooled.mean_pool, &pooled.max_pool] {
            assert_eq!(hist.len(), COLOR_BINS);
            assert_eq!(hist[bin], 1.0);
            assert_eq!(hist.iter().sum::<f64>(), 1.0);
        }
    }

    #[test]
    fn half_red_half_blue_patches() {
        // two 8x8 patches side by side: left red, right blue
        let mut raster = Raster::filled(16, 8, [255, 0, 0]).unwrap();
        raster.fill_rect(Rect::new(8, 0, 8, 8), [0, 0, 255]);
        let pooled = extract_color(&raster, &region(0, 0, 16, 8)).unwrap();
        let red = hsv_bin([255, 0, 0]);
        let blue = hsv_bin([0, 0, 255]);
        // mean: (1,0)+(0,1) averaged = 0.5/0.5; max: (1,1) renormalized = 0.5/0.5
        assert_eq!(pooled.mean_pool[red], 0.5);
        assert_eq!(pooled.mean_pool[blue], 0.5);
        assert_eq!(pooled.max_pool[red], 0.5);
        assert_eq!(pooled.max_pool[blue], 0.5);
        assert_eq!(pooled.mean_pool.iter().filter(|&&v| v > 0.0).count(), 2);
    }

    #[test]
    fn mixed_patches_differ_between_poolings() {
        // left patch all red; right patch half red half blue
        let mut raster = Raster::filled(16, 8, [255, 0, 0]).unwrap();
        raster.fill_rect(Rect::new(8, 0, 8, 4), [0, 0, 255]);
        let pooled = extract_color(&raster, &region(0, 0, 16, 8)).unwrap();
        let red = hsv_bin([255, 0, 0]);
        let blue = hsv_bin([0, 0, 255]);
        assert!((pooled.mean_pool[red] - 0.75).abs() < 1e-12);
        assert!((pooled.mean_pool[blue] - 0.25).abs() < 1e-12);
        // max pool: red 1.0, blue 0.5 -> 2/3, 1/3
        assert!((pooled.max_pool[red] - 2.0 / 3.0).abs() < 1e-12);
        assert!((pooled.max_pool[blue] - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn region_outside_raster() {
        let raster = Raster::filled(10, 10, [1, 2, 3]).unwrap();
        assert!(matches!(
            extract_color(&raster, &region(5, 5, 6, 2)),
            Err(Error::RegionOutOfBounds { .. })
        ));
    }
}
