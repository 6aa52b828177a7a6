use crate::linalg::Rng;
use crate::metrics::{BinaryMask, Volume};

/// One draw of the training-time augmentation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentParams {
    /// Mirror along x, y, z.
    pub flips: [bool; 3],
    /// Global intensity offset added to every voxel.
    pub shift: f64,
    /// Isotropic zoom about the volume centre.
    pub scale: f64,
}

impl AugmentParams {
    pub const IDENTITY: AugmentParams = AugmentParams {
        flips: [false; 3],
        shift: 0.0,
        scale: 1.0,
    };

    /// Flip each axis with probability 0.5, shift in `[−0.1, 0.1]`, zoom in
    /// `[0.9, 1.1]`.
    pub fn sample(rng: &mut Rng) -> Self {
        let flips = [rng.bernoulli(0.5), rng.bernoulli(0.5), rng.bernoulli(0.5)];
        let shift = rng.uniform_in(-0.1, 0.1);
        let scale = rng.uniform_in(0.9, 1.1);
        Self { flips, shift, scale }
    }

    /// Applies flips, then zoom (trilinear for the image, nearest for the
    /// label), then the intensity shift.
    pub fn apply(&self, image: &Volume, label: &BinaryMask) -> (Volume, BinaryMask) {
        assert_eq!(image.dims(), label.dims(), "image and label grids differ");
        let mut img = flip_volume(image, self.flips);
        let mut lab = flip_mask(label, self.flips);
        if self.scale != 1.0 {
            img = zoom_trilinear(&img, self.scale);
            lab = zoom_nearest(&lab, self.scale);
        }
        if self.shift != 0.0 {
            for v in img.data_mut() {
                *v += self.shift;
            }
        }
        (img, lab)
    }
}

/// Samples and applies one augmentation.
pub fn augment(image: &Volume, label: &BinaryMask, rng: &mut Rng) -> (Volume, BinaryMask) {
    AugmentParams::sample(rng).apply(image, label)
}

fn flipped_coord(i: usize, n: usize, flip: bool) -> usize {
    if flip {
        n - 1 - i
    } else {
        i
    }
}

pub fn flip_volume(v: &Volume, flips: [bool; 3]) -> Volume {
    let [nx, ny, nz] = v.dims();
    let mut out = v.clone();
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let s = v.get(
                    flipped_coord(x, nx, flips[0]),
                    flipped_coord(y, ny, flips[1]),
                    flipped_coord(z, nz, flips[2]),
                );
                out.set(x, y, z, s);
            }
        }
    }
    out
}

pub fn flip_mask(m: &BinaryMask, flips: [bool; 3]) -> BinaryMask {
    let [nx, ny, nz] = m.dims();
    let mut out = m.clone();
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let s = m.get(
                    flipped_coord(x, nx, flips[0]),
                    flipped_coord(y, ny, flips[1]),
                    flipped_coord(z, nz, flips[2]),
                );
                out.set(x, y, z, s);
            }
        }
    }
    out
}

/// Source coordinate of output index `i` under zoom `scale` about the centre.
fn source_coord(i: usize, n: usize, scale: f64) -> f64 {
    let c = (n as f64 - 1.0) / 2.0;
    c + (i as f64 - c) / scale
}

fn zoom_trilinear(v: &Volume, scale: f64) -> Volume {
    let [nx, ny, nz] = v.dims();
    let mut out = v.clone();
    let clamp = |p: f64, n: usize| p.clamp(0.0, (n - 1) as f64);
    for z in 0..nz {
        let pz = clamp(source_coord(z, nz, scale), nz);
        for y in 0..ny {
            let py = clamp(source_coord(y, ny, scale), ny);
            for x in 0..nx {
                let px = clamp(source_coord(x, nx, scale), nx);
                out.set(x, y, z, trilinear(v, px, py, pz));
            }
        }
    }
    out
}

fn trilinear(v: &Volume, px: f64, py: f64, pz: f64) -> f64 {
    let [nx, ny, nz] = v.dims();
    let (x0, y0, z0) = (px.floor() as usize, py.floor() as usize, pz.floor() as usize);
    let (x1, y1, z1) = ((x0 + 1).min(nx - 1), (y0 + 1).min(ny - 1), (z0 + 1).min(nz - 1));
    let (fx, fy, fz) = (px - x0 as f64, py - y0 as f64, pz - z0 as f64);
    let lerp = |a: f64, b: f64, t: f64| a * (1.0 - t) + b * t;
    let c00 = lerp(v.get(x0, y0, z0), v.get(x1, y0, z0), fx);
    let c10 = lerp(v.get(x0, y1, z0), v.get(x1, y1, z0), fx);
    let c01 = lerp(v.get(x0, y0, z1), v.get(x1, y0, z1), fx);
    let c11 = lerp(v.get(x0, y1, z1), v.get(x1, y1, z1), fx);
    lerp(lerp(c00, c10, fy), lerp(c01, c11, fy), fz)
}

fn zoom_nearest(m: &BinaryMask, scale: f64) -> BinaryMask {
    let [nx, ny, nz] = m.dims();
    let mut out = m.clone();
    let near = |p: f64, n: usize| p.round().clamp(0.0, (n - 1) as f64) as usize;
    for z in 0..nz {
        let sz = near(source_coord(z, nz, scale), nz);
        for y in 0..ny {
            let sy = near(source_coord(y, ny, scale), ny);
            for x in 0..nx {
                let sx = near(source_coord(x, nx, scale), nx);
                out.set(x, y, z, m.get(sx, sy, sz));
            }
        }
    }
    out
}
