//! Gaussian blur and unsharp masking.

use rayon::prelude::*;

use crate::volume::Volume;

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as i64;
    let mut w: Vec<f64> = (-radius..=radius)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = w.iter().sum();
    for x in &mut w {
        *x /= sum;
    }
    w
}

/// Separable Gaussian blur, kernel truncated at 3σ, replicate boundary.
pub fn gaussian_blur(v: &Volume, sigma: f64) -> Volume {
    assert!(sigma > 0.0, "sigma must be positive");
    let kernel = gaussian_kernel(sigma);
    let radius = (kernel.len() / 2) as i64;
    let dims = v.dims;
    let mut cur = v.data.clone();

    for axis in 0..3 {
        let n = dims[axis] as i64;
        let stride = match axis {
            0 => 1usize,
            1 => dims[0],
            _ => dims[0] * dims[1],
        };
        let mut next = vec![0.0f32; cur.len()];
        let slab = dims[0] * dims[1];
        next.par_chunks_mut(slab).enumerate().for_each(|(z, plane)| {
            for y in 0..dims[1] {
                for x in 0..dims[0] {
                    let pos = [x as i64, y as i64, z as i64][axis];
                    let base = x + dims[0] * (y + dims[1] * z);
                    let line_origin = base - pos as usize * stride;
                    let mut acc = 0.0f64;
                    for (k, &w) in kernel.iter().enumerate() {
                        let p = (pos + k as i64 - radius).clamp(0, n - 1) as usize;
                        acc += w * cur[line_origin + p * stride] as f64;
                    }
                    plane[x + dims[0] * y] = acc as f32;
                }
            }
        });
        cur = next;
    }

    Volume {
        dims,
        voxel_size: v.voxel_size,
        data: cur,
    }
}

/// `clamp(v + weight·(v − blur(v, sigma)), 0, 255)`.
pub fn unsharp_mask(v: &Volume, sigma: f64, weight: f64) -> Volume {
    assert!(weight >= 0.0, "weight must be non-negative");
    let blurred = gaussian_blur(v, sigma);
    let mut out = v.clone();
    for (o, (&orig, &b)) in out.data.iter_mut().zip(v.data.iter().zip(&blurred.data)) {
        let sharp = orig as f64 + weight * (orig as f64 - b as f64);
        *o = sharp.clamp(0.0, 255.0) as f32;
    }
    out
}
