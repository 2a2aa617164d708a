//! Point-to-plane iterative closest point refinement.
//!
//! Minimizes the sum of squared distances from transformed moving
//! points to the tangent planes of their nearest fixed points, one
//! Gauss-Newton step per correspondence update.

use nalgebra::{Matrix6, Rotation3, Vector3, Vector6};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kdtree::KdTree;
use crate::surface::PointCloud;
use crate::transform::RigidTransform;

#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct IcpParams {
    /// voxels; pairs farther apart than this are not matched
    pub max_correspondence_distance: f64,
    pub max_iterations: usize,
    /// stop once the residual and the update stop moving by this
    /// relative amount
    pub relative_change_epsilon: f64,
}

impl Default for IcpParams {
    fn default() -> Self {
        Self {
            max_correspondence_distance: 16.0,
            max_iterations: 2000,
            relative_change_epsilon: 1e-6,
        }
    }
}

#[derive(Clone, Debug)]
pub struct IcpResult {
    pub transform: RigidTransform,
    pub iterations: usize,
    /// fraction of moving points with a match inside the distance cap
    pub fitness: f64,
    /// root-mean-square plane distance over the matched pairs
    pub rmse: f64,
    pub converged: bool,
}

/// Sum of squared plane distances for a fixed correspondence set;
/// exposed for diagnostics and tests.
pub fn point_to_plane_loss(
    moving: &PointCloud,
    fixed: &PointCloud,
    pairs: &[(u32, u32)],
    t: &RigidTransform,
) -> f64 {
    let normals = fixed.normals.as_ref().expect("fixed cloud has normals");
    pairs
        .iter()
        .map(|&(mi, fi)| {
            let q = t.apply_point(moving.points[mi as usize]);
            let r = normals[fi as usize].dot(&(fixed.points[fi as usize] - q));
            r * r
        })
        .sum()
}

pub fn point_to_plane_icp(
    moving: &PointCloud,
    fixed: &PointCloud,
    init: &RigidTransform,
    params: &IcpParams,
) -> Result<IcpResult> {
    let normals = fixed
        .normals
        .as_ref()
        .ok_or(Error::DegenerateConfiguration("fixed cloud has no normals"))?;
    if moving.is_empty() || fixed.is_empty() {
        return Err(Error::EmptySurface);
    }
    if !(params.max_correspondence_distance > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "max_correspondence_distance = {}",
            params.max_correspondence_distance
        )));
    }

    let tree = KdTree::build(fixed.points.iter().map(|p| [p.x, p.y, p.z]).collect());
    let d2 = params.max_correspondence_distance * params.max_correspondence_distance;
    let n_moving = moving.points.len();

    let mut t = *init;
    let mut prev_rmse = f64::INFINITY;
    let mut fitness = 0.0;
    let mut rmse = 0.0;
    let mut converged = false;
    let mut iterations = 0;

    for iter in 0..params.max_iterations {
        // (transformed point, fixed index) for every matched pair
        let matches: Vec<(Vector3<f64>, u32)> = moving
            .points
            .par_iter()
            .filter_map(|p| {
                let q = t.apply_point(*p);
                tree.nearest_within(&[q.x, q.y, q.z], d2)
                    .map(|(fi, _)| (q.coords, fi))
            })
            .collect();

        if matches.is_empty() {
            // Nothing inside the cap: report the starting point with a
            // zero score rather than failing.
            return Ok(IcpResult {
                transform: t,
                iterations: iter,
                fitness: 0.0,
                rmse: 0.0,
                converged: false,
            });
        }

        let mut a = Matrix6::<f64>::zeros();
        let mut b = Vector6::<f64>::zeros();
        let mut sq_sum = 0.0;
        for (q, fi) in &matches {
            let n = normals[*fi as usize];
            let f = fixed.points[*fi as usize].coords;
            let r = n.dot(&(f - q));
            let c = q.cross(&n);
            let j = Vector6::new(c.x, c.y, c.z, n.x, n.y, n.z);
            a += j * j.transpose();
            b += j * r;
            sq_sum += r * r;
        }
        fitness = matches.len() as f64 / n_moving as f64;
        rmse = (sq_sum / matches.len() as f64).sqrt();

        // Flat or sliding-symmetric geometry leaves null directions;
        // a small ridge keeps the step well-defined there.
        let xi = match a.cholesky() {
            Some(ch) => ch.solve(&b),
            None => match (a + Matrix6::identity() * 1e-9).cholesky() {
                Some(ch) => ch.solve(&b),
                None => break,
            },
        };

        let omega = Vector3::new(xi[0], xi[1], xi[2]);
        let trans = Vector3::new(xi[3], xi[4], xi[5]);
        let step =
            RigidTransform::from_parts(Rotation3::from_scaled_axis(omega).into_inner(), trans);
        t = step.compose(&t);
        iterations = iter + 1;

        let rel = (prev_rmse - rmse).abs() / prev_rmse.max(1e-300);
        if xi.norm() < params.relative_change_epsilon
            || (prev_rmse.is_finite() && rel < params.relative_change_epsilon)
        {
            converged = true;
            break;
        }
        prev_rmse = rmse;
    }

    Ok(IcpResult {
        transform: t,
        iterations,
        fitness,
        rmse,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transform::Point3;
    use nalgebra::Unit;

    /// Three orthogonal wall patches meeting at a corner: constrains
    /// all six degrees of freedom.
    fn corner_cloud(step: usize) -> PointCloud {
        let mut points = Vec::new();
        let mut normals = Vec::new();
        for i in (1..20).step_by(step) {
            for j in (1..20).step_by(step) {
                let (fi, fj) = (i as f64, j as f64);
                points.push(Point3::new(fi, fj, 0.0));
                normals.push(Vector3::z());
                points.push(Point3::new(0.0, fi, fj));
                normals.push(Vector3::x());
                points.push(Point3::new(fi, 0.0, fj));
                normals.push(Vector3::y());
            }
        }
        PointCloud {
            points,
            normals: Some(normals),
        }
    }

    #[test]
    fn plane_offset_collapses_in_one_step() {
        let mut points = Vec::new();
        let mut normals = Vec::new();
        for y in 0..12 {
            for x in 0..12 {
                points.push(Point3::new(x as f64, y as f64, 0.0));
                normals.push(Vector3::z());
            }
        }
        let fixed = PointCloud {
            points: points.clone(),
            normals: Some(normals),
        };
        let moving = PointCloud::from_points(
            points
                .iter()
                .map(|p| Point3::new(p.x, p.y, p.z + 0.5))
                .collect(),
        );
        let params = IcpParams {
            max_correspondence_distance: 2.0,
            max_iterations: 10,
            relative_change_epsilon: 1e-9,
        };
        let r = point_to_plane_icp(&moving, &fixed, &RigidTransform::identity(), &params).unwrap();
        assert!(r.converged);
        let tz = r.transform.translation_vec().z;
        assert!((tz + 0.5).abs() < 1e-6, "z shift {tz}");
        assert!(r.rmse < 1e-6);
        assert_eq!(r.fitness, 1.0);
    }

    #[test]
    fn recovers_a_small_rigid_motion_exactly() {
        let base = corner_cloud(1);
        let t_true = RigidTransform::rotation_about_point(
            Unit::new_normalize(Vector3::new(0.3, 1.0, -0.2)),
            2f64.to_radians(),
            Point3::new(10.0, 10.0, 10.0),
        )
        .compose(&RigidTransform::translation(Vector3::new(0.5, -0.3, 0.4)));
        let fixed = base.transformed(&t_true);
        let params = IcpParams {
            max_correspondence_distance: 3.0,
            max_iterations: 50,
            relative_change_epsilon: 1e-10,
        };
        let r = point_to_plane_icp(&base, &fixed, &RigidTransform::identity(), &params).unwrap();
        assert!(r.converged);
        assert!(r.iterations <= 50);
        let diff = (r.transform.matrix() - t_true.matrix()).abs().max();
        assert!(diff < 1e-6, "matrix entries off by {diff}");
        assert!(r.rmse < 1e-7);
    }

    #[test]
    fn shrugs_off_unmatched_clutter() {
        let base = corner_cloud(1);
        let t_true = RigidTransform::translation(Vector3::new(0.8, -0.6, 0.3));
        let fixed = base.transformed(&t_true);
        let mut cluttered = base.clone();
        for i in 0..40 {
            cluttered
                .points
                .push(Point3::new(200.0 + i as f64, 150.0, -90.0));
        }
        let params = IcpParams {
            max_correspondence_distance: 3.0,
            max_iterations: 50,
            relative_change_epsilon: 1e-10,
        };
        let r =
            point_to_plane_icp(&cluttered, &fixed, &RigidTransform::identity(), &params).unwrap();
        let diff = (r.transform.matrix() - t_true.matrix()).abs().max();
        assert!(diff < 1e-6, "matrix entries off by {diff}");
        assert!(r.fitness < 1.0 && r.fitness > 0.9);
    }

    #[test]
    fn far_away_start_returns_the_init() {
        let fixed = corner_cloud(2);
        let moving = PointCloud::from_points(
            fixed
                .points
                .iter()
                .map(|p| Point3::new(p.x + 500.0, p.y, p.z))
                .collect(),
        );
        let init = RigidTransform::translation(Vector3::new(1.0, 2.0, 3.0));
        let params = IcpParams {
            max_correspondence_distance: 4.0,
            max_iterations: 30,
            relative_change_epsilon: 1e-6,
        };
        let r = point_to_plane_icp(&moving, &fixed, &init, &params).unwrap();
        assert_eq!(r.transform.matrix(), init.matrix());
        assert_eq!(r.fitness, 0.0);
        assert_eq!(r.iterations, 0);
        assert!(!r.converged);
    }

    #[test]
    fn iteration_budget_is_respected() {
        let base = corner_cloud(1);
        let t_true = RigidTransform::rotation_about_point(
            Unit::new_normalize(Vector3::new(0.0, 0.0, 1.0)),
            5f64.to_radians(),
            Point3::new(10.0, 10.0, 0.0),
        );
        let fixed = base.transformed(&t_true);
        let params = IcpParams {
            max_correspondence_distance: 5.0,
            max_iterations: 2,
            relative_change_epsilon: 1e-12,
        };
        let r = point_to_plane_icp(&base, &fixed, &RigidTransform::identity(), &params).unwrap();
        assert!(r.iterations <= 2);
    }

    #[test]
    fn loss_matches_a_direct_sum() {
        let fixed = corner_cloud(3);
        let moving = PointCloud::from_points(fixed.points.clone());
        let pairs: Vec<(u32, u32)> = (0..moving.len() as u32).map(|i| (i, i)).collect();
        let t = RigidTransform::translation(Vector3::new(0.0, 0.0, 0.25));
        let loss = point_to_plane_loss(&moving, &fixed, &pairs, &t);
        // Only the z=0 wall normals see the z shift.
        let z_wall = fixed
            .normals
            .as_ref()
            .unwrap()
            .iter()
            .filter(|n| n.z == 1.0)
            .count() as f64;
        assert!((loss - z_wall * 0.0625).abs() < 1e-9);
    }
}
