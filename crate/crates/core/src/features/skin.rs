use crate::error::Result;
use crate::ingest::PartRegion;

use super::{pixel_binned, PooledHistograms, Raster};

pub const SKIN_BINS: usize = 16;

const CB_RANGE: (f64, f64) = (77.0, 127.0);
const CR_RANGE: (f64, f64) = (133.0, 173.0);
/// Width of the linear fall-off outside the chroma box.
const RAMP: f64 = 8.0;

/// Full-range BT.601 chroma (Cb, Cr).
pub fn chroma(p: [u8; 3]) -> (f64, f64) {
    let (r, g, b) = (f64::from(p[0]), f64::from(p[1]), f64::from(p[2]));
    let cb = 128.0 - 0.168_736 * r - 0.331_264 * g + 0.5 * b;
    let cr = 128.0 + 0.5 * r - 0.418_688 * g - 0.081_312 * b;
    (cb, cr)
}

fn axis_membership(v: f64, (lo, hi): (f64, f64)) -> f64 {
    let outside = if v < lo {
        lo - v
    } else if v > hi {
        v - hi
    } else {
        0.0
    };
    (1.0 - outside / RAMP).clamp(0.0, 1.0)
}

/// Skin probability: 1 inside the Cb/Cr box, falling linearly to 0 over
/// `RAMP` chroma units outside it.
pub fn skin_probability(p: [u8; 3]) -> f64 {
    let (cb, cr) = chroma(p);
    axis_membership(cb, CB_RANGE).min(axis_membership(cr, CR_RANGE))
}

fn skin_bin(p: [u8; 3]) -> usize {
    ((skin_probability(p) * SKIN_BINS as f64) as usize).min(SKIN_BINS - 1)
}

/// Pooled 16-bin histograms of per-pixel skin probability.
pub fn extract_skin(raster: &Raster, region: &PartRegion) -> Result<PooledHistograms> {
    pixel_binned(raster, region, SKIN_BINS, skin_bin)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{BodyPart, Rect};

    fn whole(raster: &Raster) -> PartRegion {
        PartRegion {
            part: BodyPart::LowerLeftArm,
            rect: Rect::new(0, 0, raster.width(), raster.height()),
        }
    }

    #[test]
    fn green_is_not_skin() {
        let raster = Raster::filled(9, 9, [0, 255, 0]).unwrap();
        assert_eq!(skin_probability([0, 255, 0]), 0.0);
        let pooled = extract_skin(&raster, &whole(&raster)).unwrap();
        assert_eq!(pooled.mean_pool[0], 1.0);
        assert_eq!(pooled.max_pool[0], 1.0);
    }

    #[test]
    fn prototypical_skin_tone() {
        // Cb = 128 - 0.168736*224 - 0.331264*172 + 0.5*105 = 85.73
        // Cr = 128 + 0.5*224 - 0.418688*172 - 0.081312*105 = 159.45
        let (cb, cr) = chroma([224, 172, 105]);
        assert!((cb - 85.7250).abs() < 1e-3, "{cb}");
        assert!((cr - 159.4488).abs() < 1e-3, "{cr}");
        let raster = Raster::filled(8, 8, [224, 172, 105]).unwrap();
        let pooled = extract_skin(&raster, &whole(&raster)).unwrap();
        assert_eq!(pooled.mean_pool[15], 1.0);
        assert_eq!(pooled.mean_pool.iter().sum::<f64>(), 1.0);
    }

    #[test]
    fn ramp_is_linear() {
        assert_eq!(axis_membership(73.0, CB_RANGE), 0.5);
        assert_eq!(axis_membership(177.0, CR_RANGE), 0.5);
        assert_eq!(axis_membership(60.0, CB_RANGE), 0.0);
        assert_eq!(axis_membership(100.0, CB_RANGE), 1.0);
    }
}
