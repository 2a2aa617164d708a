//! Voxel-size resampling and rigid volume resampling.

use rayon::prelude::*;

use crate::error::Result;
use crate::transform::RigidTransform;
use crate::volume::Volume;

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Interpolation {
    Nearest,
    Linear,
    Cubic,
}

/// Resample onto a grid with `target_voxel` spacing (µm). Output dims
/// are `round(dims · voxel/target)`; sampling is trilinear with
/// edge-clamped coordinates so constant volumes stay constant.
pub fn resample_to(v: &Volume, target_voxel: [f64; 3]) -> Result<Volume> {
    if target_voxel.iter().any(|&s| !(s > 0.0)) {
        return Err(crate::error::Error::InvalidParameter(format!(
            "target voxel size must be positive, got {target_voxel:?}"
        )));
    }
    if target_voxel == v.voxel_size {
        return Ok(v.clone());
    }
    let mut dims_out = [0usize; 3];
    let mut scale = [0f64; 3];
    for a in 0..3 {
        dims_out[a] = (((v.dims[a] as f64) * v.voxel_size[a] / target_voxel[a]).round() as usize).max(1);
        scale[a] = target_voxel[a] / v.voxel_size[a];
    }
    let mut out = Volume::zeros(dims_out, target_voxel);
    let slab = dims_out[0] * dims_out[1];
    out.data
        .par_chunks_mut(slab)
        .enumerate()
        .for_each(|(z, plane)| {
            let sz = (z as f64 + 0.5) * scale[2] - 0.5;
            for y in 0..dims_out[1] {
                let sy = (y as f64 + 0.5) * scale[1] - 0.5;
                for x in 0..dims_out[0] {
                    let sx = (x as f64 + 0.5) * scale[0] - 0.5;
                    plane[x + dims_out[0] * y] = trilinear_clamped(v, sx, sy, sz);
                }
            }
        });
    Ok(out)
}

/// Resample under a rigid map: `out(x) = v(t⁻¹·x)`, out-of-bounds 0.
/// Dims and voxel size are preserved.
pub fn resample_rigid(v: &Volume, t: &RigidTransform, interp: Interpolation) -> Volume {
    let inv = t.invert();
    let r = inv.rotation();
    let tr = inv.translation_vec();
    let (r00, r01, r02) = (r[(0, 0)], r[(0, 1)], r[(0, 2)]);
    let (r10, r11, r12) = (r[(1, 0)], r[(1, 1)], r[(1, 2)]);
    let (r20, r21, r22) = (r[(2, 0)], r[(2, 1)], r[(2, 2)]);

    let mut out = Volume::zeros(v.dims, v.voxel_size);
    let dims = v.dims;
    let slab = dims[0] * dims[1];
    out.data
        .par_chunks_mut(slab)
        .enumerate()
        .for_each(|(z, plane)| {
            let zf = z as f64;
            for y in 0..dims[1] {
                let yf = y as f64;
                for x in 0..dims[0] {
                    let xf = x as f64;
                    let sx = r00 * xf + r01 * yf + r02 * zf + tr[0];
                    let sy = r10 * xf + r11 * yf + r12 * zf + tr[1];
                    let sz = r20 * xf + r21 * yf + r22 * zf + tr[2];
                    plane[x + dims[0] * y] = match interp {
                        Interpolation::Nearest => nearest_zero(v, sx, sy, sz),
                        Interpolation::Linear => trilinear_zero(v, sx, sy, sz),
                        Interpolation::Cubic => tricubic_zero(v, sx, sy, sz),
                    };
                }
            }
        });
    out
}

#[inline]
fn in_bounds(v: &Volume, x: f64, y: f64, z: f64) -> bool {
    x >= 0.0
        && y >= 0.0
        && z >= 0.0
        && x <= (v.dims[0] - 1) as f64
        && y <= (v.dims[1] - 1) as f64
        && z <= (v.dims[2] - 1) as f64
}

fn nearest_zero(v: &Volume, x: f64, y: f64, z: f64) -> f32 {
    if !in_bounds(v, x, y, z) {
        return 0.0;
    }
    v.get(
        (x.round() as usize).min(v.dims[0] - 1),
        (y.round() as usize).min(v.dims[1] - 1),
        (z.round() as usize).min(v.dims[2] - 1),
    )
}

fn trilinear_at(v: &Volume, x: f64, y: f64, z: f64) -> f32 {
    let x0 = x.floor();
    let y0 = y.floor();
    let z0 = z.floor();
    let (fx, fy, fz) = (x - x0, y - y0, z - z0);
    let ix = x0 as usize;
    let iy = y0 as usize;
    let iz = z0 as usize;
    let ix1 = (ix + 1).min(v.dims[0] - 1);
    let iy1 = (iy + 1).min(v.dims[1] - 1);
    let iz1 = (iz + 1).min(v.dims[2] - 1);

    let c000 = v.get(ix, iy, iz) as f64;
    let c100 = v.get(ix1, iy, iz) as f64;
    let c010 = v.get(ix, iy1, iz) as f64;
    let c110 = v.get(ix1, iy1, iz) as f64;
    let c001 = v.get(ix, iy, iz1) as f64;
    let c101 = v.get(ix1, iy, iz1) as f64;
    let c011 = v.get(ix, iy1, iz1) as f64;
    let c111 = v.get(ix1, iy1, iz1) as f64;

    let c00 = c000 + (c100 - c000) * fx;
    let c01 = c001 + (c101 - c001) * fx;
    let c10 = c010 + (c110 - c010) * fx;
    let c11 = c011 + (c111 - c011) * fx;
    let c0 = c00 + (c10 - c00) * fy;
    let c1 = c01 + (c11 - c01) * fy;
    (c0 + (c1 - c0) * fz) as f32
}

/// Trilinear with coordinates clamped into the grid (for rescaling).
fn trilinear_clamped(v: &Volume, x: f64, y: f64, z: f64) -> f32 {
    let cx = x.clamp(0.0, (v.dims[0] - 1) as f64);
    let cy = y.clamp(0.0, (v.dims[1] - 1) as f64);
    let cz = z.clamp(0.0, (v.dims[2] - 1) as f64);
    trilinear_at(v, cx, cy, cz)
}

/// Trilinear with zero outside the grid (for rigid resampling).
fn trilinear_zero(v: &Volume, x: f64, y: f64, z: f64) -> f32 {
    if !in_bounds(v, x, y, z) {
        return 0.0;
    }
    trilinear_at(v, x, y, z)
}

#[inline]
fn catmull_rom(t: f64) -> [f64; 4] {
    let t2 = t * t;
    let t3 = t2 * t;
    [
        0.5 * (-t3 + 2.0 * t2 - t),
        0.5 * (3.0 * t3 - 5.0 * t2 + 2.0),
        0.5 * (-3.0 * t3 + 4.0 * t2 + t),
        0.5 * (t3 - t2),
    ]
}

/// Separable cubic (Catmull-Rom) in all three axes; stencil rows are
/// clamped at the faces, points outside the grid sample 0.
fn tricubic_zero(v: &Volume, x: f64, y: f64, z: f64) -> f32 {
    if !in_bounds(v, x, y, z) {
        return 0.0;
    }
    let x0 = x.floor();
    let y0 = y.floor();
    let z0 = z.floor();
    let wx = catmull_rom(x - x0);
    let wy = catmull_rom(y - y0);
    let wz = catmull_rom(z - z0);
    let clamp = |i: i64, n: usize| -> usize { i.clamp(0, n as i64 - 1) as usize };

    let mut acc = 0.0f64;
    for (k, wzk) in wz.iter().enumerate() {
        let iz = clamp(z0 as i64 + k as i64 - 1, v.dims[2]);
        for (j, wyj) in wy.iter().enumerate() {
            let iy = clamp(y0 as i64 + j as i64 - 1, v.dims[1]);
            let mut row = 0.0f64;
            for (i, wxi) in wx.iter().enumerate() {
                let ix = clamp(x0 as i64 + i as i64 - 1, v.dims[0]);
                row += wxi * v.get(ix, iy, iz) as f64;
            }
            acc += wzk * wyj * row;
        }
    }
    acc as f32
}
