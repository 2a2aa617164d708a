//! Fast point feature histograms: 33-dimensional local surface
//! descriptors (three 11-bin angle histograms) used for global
//! correspondence search.

use nalgebra::Vector3;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kdtree::KdTree;
use crate::surface::{PointCloud, NEIGHBOR_TIE_REL};

pub const FEATURE_DIM: usize = 33;
const BINS: usize = 11;

/// Pairs closer than this (squared) are treated as duplicates and skipped.
const MIN_PAIR_DIST2: f64 = 1e-24;
/// Tolerance for the source/target swap decision; ties go to the
/// lower point index so the choice is stable under rigid motion.
const SWAP_TIE_TOL: f64 = 1e-12;
/// A pair whose connecting line is (nearly) parallel to the source
/// normal has no well-defined frame and is skipped.
const FRAME_DEGENERACY_TOL: f64 = 1e-9;
/// Dihedral angles this close to +-pi are pinned to +pi: the sign of
/// atan2 at the branch cut is pure rounding noise.
const THETA_WRAP_TOL: f64 = 1e-9;

#[derive(Clone, Debug, Default)]
pub struct FeatureCloud {
    pub features: Vec<[f64; FEATURE_DIM]>,
}

impl FeatureCloud {
    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }
}

/// Decide which endpoint acts as the frame source: the one whose
/// normal is closer (by |cos|) to the connecting line. `d` points from
/// point 1 to point 2.
fn swap_to_second(n1: &Vector3<f64>, n2: &Vector3<f64>, d_hat: &Vector3<f64>) -> Option<bool> {
    let c1 = n1.dot(d_hat).abs();
    let c2 = n2.dot(d_hat).abs();
    if (c1 - c2).abs() <= SWAP_TIE_TOL {
        None // caller breaks the tie by index
    } else {
        Some(c2 > c1)
    }
}

/// Darboux-frame angles (alpha, phi, theta) for an ordered
/// source/target pair. Returns None for a degenerate frame.
fn pair_angles(
    p_s: &Vector3<f64>,
    n_s: &Vector3<f64>,
    p_t: &Vector3<f64>,
    n_t: &Vector3<f64>,
) -> Option<(f64, f64, f64)> {
    let d = p_t - p_s;
    let dist = d.norm();
    let d_hat = d / dist;
    let u = *n_s;
    let v_raw = d_hat.cross(&u);
    let v_norm = v_raw.norm();
    if v_norm < FRAME_DEGENERACY_TOL {
        return None;
    }
    let v = v_raw / v_norm;
    let w = u.cross(&v);

    let alpha = v.dot(n_t);
    let phi = u.dot(&d_hat);
    let wt = w.dot(n_t);
    let ut = u.dot(n_t);
    let theta = if wt.abs() <= THETA_WRAP_TOL {
        if ut < 0.0 {
            std::f64::consts::PI
        } else {
            0.0
        }
    } else {
        wt.atan2(ut)
    };
    Some((alpha, phi, theta))
}

fn bin_unit(x: f64) -> usize {
    // x in [-1, 1] onto 11 bins
    (((x + 1.0) * 0.5 * BINS as f64) as isize).clamp(0, BINS as isize - 1) as usize
}

fn bin_angle(theta: f64) -> usize {
    let t = (theta + std::f64::consts::PI) / (2.0 * std::f64::consts::PI);
    ((t * BINS as f64) as isize).clamp(0, BINS as isize - 1) as usize
}

/// Radius neighbors of every point, sorted by (distance, index), self
/// excluded, capped at `max_neighbors` but keeping every point tied
/// with the cut-off distance.
fn neighbor_lists(
    tree: &KdTree<3>,
    points: &[[f64; 3]],
    radius: f64,
    max_neighbors: usize,
) -> Vec<Vec<(u32, f64)>> {
    let r2 = radius * radius * (1.0 + NEIGHBOR_TIE_REL);
    points
        .par_iter()
        .enumerate()
        .map(|(i, q)| {
            let mut nbrs: Vec<(u32, f64)> = tree
                .within_radius(q, r2)
                .into_iter()
                .filter(|&(j, _)| j as usize != i)
                .collect();
            if nbrs.len() > max_neighbors {
                let cut = nbrs[max_neighbors - 1].1 * (1.0 + NEIGHBOR_TIE_REL);
                let mut end = max_neighbors;
                while end < nbrs.len() && nbrs[end].1 <= cut {
                    end += 1;
                }
                nbrs.truncate(end);
            }
            nbrs
        })
        .collect()
}

/// Compute the 33-dimensional descriptor for every point of a cloud
/// with normals. Points with no neighbors inside `radius` get a zero
/// descriptor.
pub fn compute_fpfh(cloud: &PointCloud, radius: f64, max_neighbors: usize) -> Result<FeatureCloud> {
    let normals = cloud
        .normals
        .as_ref()
        .ok_or(Error::DegenerateConfiguration("cloud has no normals"))?;
    if radius <= 0.0 || max_neighbors == 0 {
        return Err(Error::InvalidParameter(format!(
            "radius = {radius}, max_neighbors = {max_neighbors}"
        )));
    }
    if cloud.is_empty() {
        return Err(Error::EmptySurface);
    }

    let pts: Vec<[f64; 3]> = cloud.points.iter().map(|p| [p.x, p.y, p.z]).collect();
    let vecs: Vec<Vector3<f64>> = cloud.points.iter().map(|p| p.coords).collect();
    let tree = KdTree::build(pts.clone());
    let nbrs = neighbor_lists(&tree, &pts, radius, max_neighbors);

    let spfh: Vec<[f64; FEATURE_DIM]> = (0..vecs.len())
        .into_par_iter()
        .map(|i| {
            let mut hist = [0.0f64; FEATURE_DIM];
            let mut pairs = 0usize;
            for &(j, d2) in &nbrs[i] {
                if d2 <= MIN_PAIR_DIST2 {
                    continue;
                }
                let j = j as usize;
                let d_hat = (vecs[j] - vecs[i]) / d2.sqrt();
                let swapped = match swap_to_second(&normals[i], &normals[j], &d_hat) {
                    Some(s) => s,
                    None => j < i,
                };
                let angles = if swapped {
                    pair_angles(&vecs[j], &normals[j], &vecs[i], &normals[i])
                } else {
                    pair_angles(&vecs[i], &normals[i], &vecs[j], &normals[j])
                };
                if let Some((alpha, phi, theta)) = angles {
                    hist[bin_unit(alpha)] += 1.0;
                    hist[BINS + bin_unit(phi)] += 1.0;
                    hist[2 * BINS + bin_angle(theta)] += 1.0;
                    pairs += 1;
                }
            }
            if pairs > 0 {
                let s = 100.0 / pairs as f64;
                for h in hist.iter_mut() {
                    *h *= s;
                }
            }
            hist
        })
        .collect();

    let features: Vec<[f64; FEATURE_DIM]> = (0..vecs.len())
        .into_par_iter()
        .map(|i| {
            let mut f = spfh[i];
            let valid: Vec<(usize, f64)> = nbrs[i]
                .iter()
                .filter(|&&(_, d2)| d2 > MIN_PAIR_DIST2)
                .map(|&(j, d2)| (j as usize, d2))
                .collect();
            if !valid.is_empty() {
                let inv_k = 1.0 / valid.len() as f64;
                for &(j, d2) in &valid {
                    let w = inv_k / d2.sqrt();
                    for (fi, si) in f.iter_mut().zip(spfh[j].iter()) {
                        *fi += w * si;
                    }
                }
            }
            for block in 0..3 {
                let sum: f64 = f[block * BINS..(block + 1) * BINS].iter().sum();
                if sum > 0.0 {
                    let s = 100.0 / sum;
                    for h in &mut f[block * BINS..(block + 1) * BINS] {
                        *h *= s;
                    }
                }
            }
            f
        })
        .collect();

    Ok(FeatureCloud { features })
}
