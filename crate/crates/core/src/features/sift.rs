use std::f64::consts::TAU;

use crate::error::Result;
use crate::ingest::{PartRegion, Rect};

use super::{pool_patches, Codebook, PooledHistograms, Raster};

pub const DESCRIPTOR_DIM: usize = 128;
/// Side length of the square window a descriptor summarizes.
pub const DESCRIPTOR_WINDOW: u32 = 16;
/// Spacing of the dense sampling grid.
pub const DESCRIPTOR_STRIDE: u32 = 16;

const GRID: usize = 4;
const ORIENTATIONS: usize = 8;
const CELL: f64 = DESCRIPTOR_WINDOW as f64 / GRID as f64;
const CLAMP: f64 = 0.2;

pub type Descriptor = Vec<f64>;

/// Upright 4x4x8 gradient-orientation descriptor of the 16x16 window whose
/// top-left corner is `(x0, y0)`, with Gaussian spatial weighting, trilinear
/// binning and the usual normalize / clamp at 0.2 / renormalize step.
/// A window without gradient yields the zero vector.
pub fn descriptor_at(gray: &[f64], width: u32, height: u32, x0: u32, y0: u32) -> Descriptor {
    let (w, h) = (width as i64, height as i64);
    let at = |x: i64, y: i64| gray[(y.clamp(0, h - 1) * w + x.clamp(0, w - 1)) as usize];
    let mut desc = vec![0.0; DESCRIPTOR_DIM];
    let half = DESCRIPTOR_WINDOW as f64 / 2.0;
    let sigma = half;

    for v in 0..DESCRIPTOR_WINDOW {
        for u in 0..DESCRIPTOR_WINDOW {
            let (px, py) = (i64::from(x0 + u), i64::from(y0 + v));
            let gx = at(px + 1, py) - at(px - 1, py);
            let gy = at(px, py + 1) - at(px, py - 1);
            let mag = gx.hypot(gy);
            if mag == 0.0 {
                continue;
            }
            let du = f64::from(u) + 0.5 - half;
            let dv = f64::from(v) + 0.5 - half;
            let weight = (-(du * du + dv * dv) / (2.0 * sigma * sigma)).exp();
            let contribution = mag * weight;

            let cx = (f64::from(u) + 0.5) / CELL - 0.5;
            let cy = (f64::from(v) + 0.5) / CELL - 0.5;
            let co = gy.atan2(gx).rem_euclid(TAU) / TAU * ORIENTATIONS as f64;
            let (ix, iy, io) = (cx.floor(), cy.floor(), co.floor());
            let (fx, fy, fo) = (cx - ix, cy - iy, co - io);

            for (dy, wy) in [(0i64, 1.0 - fy), (1, fy)] {
                let cell_y = iy as i64 + dy;
                if !(0..GRID as i64).contains(&cell_y) {
                    continue;
                }
                for (dx, wx) in [(0i64, 1.0 - fx), (1, fx)] {
                    let cell_x = ix as i64 + dx;
                    if !(0..GRID as i64).contains(&cell_x) {
                        continue;
                    }
                    for (dor, wo) in [(0i64, 1.0 - fo), (1, fo)] {
                        let o = (io as i64 + dor).rem_euclid(ORIENTATIONS as i64);
                        let idx = (cell_y as usize * GRID + cell_x as usize) * ORIENTATIONS
                            + o as usize;
                        desc[idx] += contribution * wy * wx * wo;
                    }
                }
            }
        }
    }

    normalize_l2(&mut desc);
    let mut clamped = false;
    for v in desc.iter_mut() {
        if *v > CLAMP {
            *v = CLAMP;
            clamped = true;
        }
    }
    if clamped {
        normalize_l2(&mut desc);
    }
    desc
}

fn normalize_l2(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
}

/// Window origins of the dense grid inside a region. Regions smaller than a
/// window have none.
pub(crate) fn window_origins(rect: &Rect) -> impl Iterator<Item = (u32, u32)> + '_ {
    let fits = |len: u32| {
        if len >= DESCRIPTOR_WINDOW {
            (len - DESCRIPTOR_WINDOW) / DESCRIPTOR_STRIDE + 1
        } else {
            0
        }
    };
    let (nx, ny) = (fits(rect.width), fits(rect.height));
    (0..ny).flat_map(move |j| {
        (0..nx).map(move |i| (rect.x + i * DESCRIPTOR_STRIDE, rect.y + j * DESCRIPTOR_STRIDE))
    })
}

/// Dense descriptors over a region, in row-major window order.
pub fn dense_descriptors(raster: &Raster, gray: &[f64], region: &PartRegion) -> Result<Vec<Descriptor>> {
    raster.check_region(&region.rect)?;
    Ok(window_origins(&region.rect)
        .map(|(x, y)| descriptor_at(gray, raster.width(), raster.height(), x, y))
        .collect())
}

/// Pooled visual-word histograms: each dense descriptor is one patch whose
/// histogram is one-hot at its nearest codeword.
pub fn extract_sift(raster: &Raster, region: &PartRegion, codebook: &Codebook) -> Result<PooledHistograms> {
    extract_sift_gray(raster, &raster.luma(), region, codebook)
}

pub(crate) fn extract_sift_gray(
    raster: &Raster,
    gray: &[f64],
    region: &PartRegion,
    codebook: &Codebook,
) -> Result<PooledHistograms> {
    let k = codebook.k();
    let hists: Vec<Vec<f64>> = dense_descriptors(raster, gray, region)?
        .iter()
        .map(|d| {
            let mut h = vec![0.0; k];
            h[codebook.nearest(d)] = 1.0;
            h
        })
        .collect();
    Ok(pool_patches(&hists, k))
}
