//! Binary morphology: per-slice closing / hole filling / outlining for
//! surface extraction, and 3D hole filling for the correlation masks.

use std::collections::VecDeque;

use rayon::prelude::*;

use crate::volume::BinaryMask;

fn disk_offsets(radius: usize) -> Vec<(i64, i64)> {
    let r = radius as i64;
    let r2 = (radius * radius) as i64;
    let mut out = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            if dx * dx + dy * dy <= r2 {
                out.push((dx, dy));
            }
        }
    }
    out
}

fn dilate_slice(src: &[bool], nx: usize, ny: usize, se: &[(i64, i64)], dst: &mut [bool]) {
    for y in 0..ny as i64 {
        for x in 0..nx as i64 {
            let mut hit = false;
            for &(dx, dy) in se {
                let (sx, sy) = (x + dx, y + dy);
                if sx >= 0 && sy >= 0 && sx < nx as i64 && sy < ny as i64
                    && src[sx as usize + nx * sy as usize]
                {
                    hit = true;
                    break;
                }
            }
            dst[x as usize + nx * y as usize] = hit;
        }
    }
}

fn erode_slice(src: &[bool], nx: usize, ny: usize, se: &[(i64, i64)], dst: &mut [bool]) {
    for y in 0..ny as i64 {
        for x in 0..nx as i64 {
            let mut all = true;
            for &(dx, dy) in se {
                let (sx, sy) = (x + dx, y + dy);
                let inside = sx >= 0 && sy >= 0 && sx < nx as i64 && sy < ny as i64;
                if !inside || !src[sx as usize + nx * sy as usize] {
                    all = false;
                    break;
                }
            }
            dst[x as usize + nx * y as usize] = all;
        }
    }
}

/// Dilation followed by erosion with a digital disk, slice by slice.
pub fn binary_closing_2d(m: &BinaryMask, radius: usize) -> BinaryMask {
    let se = disk_offsets(radius);
    let [nx, ny, _] = m.dims;
    let slab = nx * ny;
    let mut out = BinaryMask::new_false(m.dims);
    out.bits
        .par_chunks_mut(slab)
        .zip(m.bits.par_chunks(slab))
        .for_each(|(dst, src)| {
            let mut tmp = vec![false; slab];
            dilate_slice(src, nx, ny, &se, &mut tmp);
            erode_slice(&tmp, nx, ny, &se, dst);
        });
    out
}

/// Flood the background from the slice border (4-connectivity);
/// anything not reached becomes foreground.
pub fn fill_holes_2d(m: &BinaryMask) -> BinaryMask {
    let [nx, ny, _] = m.dims;
    let slab = nx * ny;
    let mut out = BinaryMask::new_false(m.dims);
    out.bits
        .par_chunks_mut(slab)
        .zip(m.bits.par_chunks(slab))
        .for_each(|(dst, src)| {
            let mut reached = vec![false; slab];
            let mut queue = VecDeque::new();
            let seed = |x: usize, y: usize, reached: &mut Vec<bool>, queue: &mut VecDeque<(usize, usize)>| {
                let i = x + nx * y;
                if !src[i] && !reached[i] {
                    reached[i] = true;
                    queue.push_back((x, y));
                }
            };
            for x in 0..nx {
                seed(x, 0, &mut reached, &mut queue);
                seed(x, ny - 1, &mut reached, &mut queue);
            }
            for y in 0..ny {
                seed(0, y, &mut reached, &mut queue);
                seed(nx - 1, y, &mut reached, &mut queue);
            }
            while let Some((x, y)) = queue.pop_front() {
                let visit = |sx: i64, sy: i64, reached: &mut Vec<bool>, queue: &mut VecDeque<(usize, usize)>| {
                    if sx >= 0 && sy >= 0 && (sx as usize) < nx && (sy as usize) < ny {
                        let i = sx as usize + nx * sy as usize;
                        if !src[i] && !reached[i] {
                            reached[i] = true;
                            queue.push_back((sx as usize, sy as usize));
                        }
                    }
                };
                visit(x as i64 - 1, y as i64, &mut reached, &mut queue);
                visit(x as i64 + 1, y as i64, &mut reached, &mut queue);
                visit(x as i64, y as i64 - 1, &mut reached, &mut queue);
                visit(x as i64, y as i64 + 1, &mut reached, &mut queue);
            }
            for i in 0..slab {
                dst[i] = src[i] || !reached[i];
            }
        });
    out
}

/// Foreground voxels with at least one false 8-neighbor in their slice.
pub fn outline_2d(m: &BinaryMask) -> BinaryMask {
    let [nx, ny, _] = m.dims;
    let slab = nx * ny;
    let mut out = BinaryMask::new_false(m.dims);
    out.bits
        .par_chunks_mut(slab)
        .zip(m.bits.par_chunks(slab))
        .for_each(|(dst, src)| {
            for y in 0..ny as i64 {
                for x in 0..nx as i64 {
                    let i = x as usize + nx * y as usize;
                    if !src[i] {
                        continue;
                    }
                    let mut boundary = false;
                    'scan: for dy in -1..=1i64 {
                        for dx in -1..=1i64 {
                            if dx == 0 && dy == 0 {
                                continue;
                            }
                            let (sx, sy) = (x + dx, y + dy);
                            if sx >= 0 && sy >= 0 && (sx as usize) < nx && (sy as usize) < ny
                                && !src[sx as usize + nx * sy as usize]
                            {
                                boundary = true;
                                break 'scan;
                            }
                        }
                    }
                    dst[i] = boundary;
                }
            }
        });
    out
}

/// 3D flood fill from the volume boundary (6-connectivity); unreached
/// background voxels become foreground.
pub fn fill_holes_3d(m: &BinaryMask) -> BinaryMask {
    let [nx, ny, nz] = m.dims;
    let idx = |x: usize, y: usize, z: usize| x + nx * (y + ny * z);
    let mut reached = vec![false; m.bits.len()];
    let mut queue: VecDeque<(usize, usize, usize)> = VecDeque::new();

    let seed = |x: usize, y: usize, z: usize, reached: &mut Vec<bool>, queue: &mut VecDeque<(usize, usize, usize)>| {
        let i = idx(x, y, z);
        if !m.bits[i] && !reached[i] {
            reached[i] = true;
            queue.push_back((x, y, z));
        }
    };
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                if x == 0 || y == 0 || z == 0 || x == nx - 1 || y == ny - 1 || z == nz - 1 {
                    seed(x, y, z, &mut reached, &mut queue);
                }
            }
        }
    }
    while let Some((x, y, z)) = queue.pop_front() {
        let neighbors = [
            (x.wrapping_sub(1), y, z),
            (x + 1, y, z),
            (x, y.wrapping_sub(1), z),
            (x, y + 1, z),
            (x, y, z.wrapping_sub(1)),
            (x, y, z + 1),
        ];
        for (sx, sy, sz) in neighbors {
            if sx < nx && sy < ny && sz < nz {
                let i = idx(sx, sy, sz);
                if !m.bits[i] && !reached[i] {
                    reached[i] = true;
                    queue.push_back((sx, sy, sz));
                }
            }
        }
    }
    let mut out = m.clone();
    for (o, r) in out.bits.iter_mut().zip(&reached) {
        *o = *o || !*r;
    }
    out
}
