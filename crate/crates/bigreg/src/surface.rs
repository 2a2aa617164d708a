//! Surface point clouds: extraction from binary masks, normal
//! estimation, and centroid pre-alignment.

use nalgebra::Vector3;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kdtree::KdTree;
use crate::transform::{Point3, RigidTransform};
use crate::volume::{binary_closing_2d, fill_holes_2d, outline_2d, BinaryMask};

/// Inclusion band (relative, on squared distances) for neighbor
/// selection. Points tied at a selection boundary are all kept, so the
/// neighborhood set does not depend on floating-point noise in
/// rotated coordinates.
pub const NEIGHBOR_TIE_REL: f64 = 1e-9;

#[derive(Clone, Debug, Default)]
pub struct PointCloud {
    pub points: Vec<Point3>,
    pub normals: Option<Vec<Vector3<f64>>>,
}

impl PointCloud {
    pub fn from_points(points: Vec<Point3>) -> Self {
        Self {
            points,
            normals: None,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn centroid(&self) -> Vector3<f64> {
        let mut c = Vector3::zeros();
        for p in &self.points {
            c += p.coords;
        }
        c / self.points.len().max(1) as f64
    }

    /// Apply a rigid transform to points (and rotate normals if present).
    pub fn transformed(&self, t: &RigidTransform) -> PointCloud {
        PointCloud {
            points: self.points.iter().map(|p| t.apply_point(*p)).collect(),
            normals: self
                .normals
                .as_ref()
                .map(|ns| ns.iter().map(|n| t.apply_vector(*n)).collect()),
        }
    }

    /// ASCII dump: `x y z [nx ny nz]` per line.
    pub fn write_xyz(&self, path: &std::path::Path) -> Result<()> {
        let mut s = String::new();
        for (i, p) in self.points.iter().enumerate() {
            s.push_str(&format!("{} {} {}", p.x, p.y, p.z));
            if let Some(ns) = &self.normals {
                let n = ns[i];
                s.push_str(&format!(" {} {} {}", n.x, n.y, n.z));
            }
            s.push('\n');
        }
        std::fs::write(path, s)?;
        Ok(())
    }
}

/// Slice-wise closing, hole filling and outlining; the surviving voxel
/// coordinates become the surface cloud.
pub fn extract_surface(m: &BinaryMask, closing_radius: usize) -> Result<PointCloud> {
    let cleaned = outline_2d(&fill_holes_2d(&binary_closing_2d(m, closing_radius)));
    let [nx, ny, nz] = cleaned.dims;
    let mut points = Vec::new();
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                if cleaned.get(x, y, z) {
                    points.push(Point3::new(x as f64, y as f64, z as f64));
                }
            }
        }
    }
    if points.is_empty() {
        return Err(Error::EmptySurface);
    }
    Ok(PointCloud::from_points(points))
}

/// Per-point normals from the k-NN covariance (smallest-eigenvalue
/// eigenvector), oriented away from the cloud centroid. Returns the
/// cloud with normals and the count of degenerate neighborhoods
/// (rank < 2), whose normals fall back to +z.
pub fn estimate_normals(cloud: &PointCloud, k: usize) -> Result<(PointCloud, usize)> {
    if k < 3 {
        return Err(Error::InvalidParameter(format!("k = {k}, need k >= 3")));
    }
    if cloud.len() < k {
        return Err(Error::InvalidParameter(format!(
            "cloud has {} points, need at least k = {k}",
            cloud.len()
        )));
    }
    let pts: Vec<[f64; 3]> = cloud.points.iter().map(|p| [p.x, p.y, p.z]).collect();
    let tree = KdTree::build(pts);
    let centroid = cloud.centroid();

    let results: Vec<(Vector3<f64>, bool)> = cloud
        .points
        .par_iter()
        .map(|p| {
            let q = [p.x, p.y, p.z];
            let base = tree.knn(&q, k);
            let kth = base.last().map(|&(_, d2)| d2).unwrap_or(0.0);
            // Pull in every point tied with the k-th distance.
            let neighbors = tree.within_radius(&q, kth * (1.0 + NEIGHBOR_TIE_REL));

            let m = neighbors.len() as f64;
            let mut mean = Vector3::zeros();
            for &(i, _) in &neighbors {
                let n = tree.point(i);
                mean += Vector3::new(n[0], n[1], n[2]);
            }
            mean /= m;
            let mut cov = nalgebra::Matrix3::zeros();
            for &(i, _) in &neighbors {
                let n = tree.point(i);
                let d = Vector3::new(n[0], n[1], n[2]) - mean;
                cov += d * d.transpose();
            }
            cov /= m;

            let eig = nalgebra::SymmetricEigen::new(cov);
            let mut i_min = 0;
            let mut i_max = 0;
            for i in 1..3 {
                if eig.eigenvalues[i] < eig.eigenvalues[i_min] {
                    i_min = i;
                }
                if eig.eigenvalues[i] > eig.eigenvalues[i_max] {
                    i_max = i;
                }
            }
            // Rank < 2: the mid eigenvalue vanishes against the largest.
            let mid = 3 - i_min - i_max;
            let degenerate = i_min == i_max
                || eig.eigenvalues[mid] <= 1e-12 * eig.eigenvalues[i_max].max(1e-300);
            if degenerate {
                return (Vector3::z(), true);
            }
            let mut n: Vector3<f64> = eig.eigenvectors.column(i_min).into_owned();
            n.normalize_mut();
            if n.dot(&(p.coords - centroid)) < 0.0 {
                n = -n;
            }
            (n, false)
        })
        .collect();

    let degenerate_count = results.iter().filter(|r| r.1).count();
    let normals = results.into_iter().map(|r| r.0).collect();
    Ok((
        PointCloud {
            points: cloud.points.clone(),
            normals: Some(normals),
        },
        degenerate_count,
    ))
}

/// Pure translation taking the moving centroid onto the fixed centroid.
pub fn center_align(moving: &PointCloud, fixed: &PointCloud) -> RigidTransform {
    RigidTransform::translation(fixed.centroid() - moving.centroid())
}
