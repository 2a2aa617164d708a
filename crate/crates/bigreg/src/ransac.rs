//! Global alignment: descriptor matching plus sample-consensus rigid
//! model search over the matched pairs.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fpfh::FeatureCloud;
use crate::kdtree::KdTree;
use crate::surface::PointCloud;
use crate::transform::{umeyama_fit, Point3, RigidTransform};

/// Minimum side-length ratio (shorter/longer) between a sampled
/// triangle and its matched counterpart; rigid motion preserves
/// lengths, so weaker agreement marks a bad sample.
pub const EDGE_SIMILARITY: f64 = 0.9;

const BATCH: u64 = 1024;

#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct RansacParams {
    pub iterations: u64,
    pub sample_size: usize,
    /// voxels; a transformed moving point is an inlier if the fixed
    /// surface comes this close
    pub inlier_distance: f64,
    /// early-exit confidence in (0, 1]; exactly 1.0 disables the exit
    /// and always runs the full iteration budget
    pub confidence: f64,
    pub seed: u64,
}

impl Default for RansacParams {
    fn default() -> Self {
        Self {
            iterations: 2_500_000,
            sample_size: 3,
            inlier_distance: 30.0,
            confidence: 0.999,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct RansacResult {
    pub transform: RigidTransform,
    pub inlier_count: usize,
    /// inliers over the whole moving cloud
    pub inlier_fraction: f64,
    pub iterations_run: u64,
    pub best_iteration: u64,
}

/// Nearest-descriptor match from every moving point into the fixed
/// cloud.
pub fn match_features(moving: &FeatureCloud, fixed: &FeatureCloud) -> Result<Vec<(u32, u32)>> {
    if fixed.is_empty() || moving.is_empty() {
        return Err(Error::EmptyIndex);
    }
    let tree = KdTree::build(fixed.features.clone());
    Ok(moving
        .features
        .par_iter()
        .enumerate()
        .map(|(i, f)| {
            let (j, _) = tree.nearest(f).expect("non-empty feature index");
            (i as u32, j)
        })
        .collect())
}

fn count_inliers(moving: &PointCloud, fixed_tree: &KdTree<3>, t: &RigidTransform, d2: f64) -> usize {
    moving
        .points
        .par_iter()
        .map(|p| {
            let q = t.apply_point(*p);
            usize::from(fixed_tree.nearest_within(&[q.x, q.y, q.z], d2).is_some())
        })
        .sum()
}

/// One model hypothesis from the RNG stream of iteration `it`.
fn hypothesis(
    it: u64,
    moving: &PointCloud,
    fixed: &PointCloud,
    correspondences: &[(u32, u32)],
    params: &RansacParams,
) -> Option<RigidTransform> {
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    rng.set_stream(it);
    let picks = rand::seq::index::sample(&mut rng, correspondences.len(), params.sample_size);

    let mut src: Vec<Point3> = Vec::with_capacity(params.sample_size);
    let mut dst: Vec<Point3> = Vec::with_capacity(params.sample_size);
    for k in picks.iter() {
        let (mi, fi) = correspondences[k];
        src.push(moving.points[mi as usize]);
        dst.push(fixed.points[fi as usize]);
    }

    for a in 0..src.len() {
        for b in (a + 1)..src.len() {
            let dm = (src[a] - src[b]).norm();
            let df = (dst[a] - dst[b]).norm();
            if dm.min(df) < EDGE_SIMILARITY * dm.max(df) {
                return None;
            }
        }
    }

    let t = umeyama_fit(&src, &dst).ok()?;
    let d = params.inlier_distance;
    if src
        .iter()
        .zip(&dst)
        .any(|(s, f)| (t.apply_point(*s) - f).norm() > d)
    {
        return None;
    }
    Some(t)
}

/// Sample-consensus search for the rigid transform supported by the
/// most moving points. `correspondences` are (moving, fixed) index
/// pairs, typically from [`match_features`].
pub fn ransac_register(
    moving: &PointCloud,
    fixed: &PointCloud,
    correspondences: &[(u32, u32)],
    params: &RansacParams,
) -> Result<RansacResult> {
    if params.sample_size < 3 {
        return Err(Error::InvalidParameter(format!(
            "sample_size = {}, need >= 3",
            params.sample_size
        )));
    }
    if correspondences.len() < params.sample_size {
        return Err(Error::InvalidParameter(format!(
            "{} correspondences but sample_size = {}",
            correspondences.len(),
            params.sample_size
        )));
    }
    if !(params.inlier_distance > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "inlier_distance = {}",
            params.inlier_distance
        )));
    }
    if params.iterations == 0 || !(params.confidence > 0.0 && params.confidence <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "iterations = {}, confidence = {}",
            params.iterations, params.confidence
        )));
    }

    let fixed_tree = KdTree::build(fixed.points.iter().map(|p| [p.x, p.y, p.z]).collect());
    let d2 = params.inlier_distance * params.inlier_distance;
    let n_moving = moving.points.len();

    let mut best: Option<(usize, u64, RigidTransform)> = None;
    let mut done = 0u64;
    while done < params.iterations {
        let n = BATCH.min(params.iterations - done);
        let batch: Vec<Option<(usize, RigidTransform)>> = (done..done + n)
            .into_par_iter()
            .map(|it| {
                hypothesis(it, moving, fixed, correspondences, params)
                    .map(|t| (count_inliers(moving, &fixed_tree, &t, d2), t))
            })
            .collect();
        // Sequential reduce; strict > keeps the earliest iteration on
        // ties, independent of thread count.
        for (off, cand) in batch.into_iter().enumerate() {
            if let Some((count, t)) = cand {
                if best.as_ref().map_or(true, |(bc, _, _)| count > *bc) {
                    best = Some((count, done + off as u64, t));
                }
            }
        }
        done += n;

        if params.confidence < 1.0 {
            if let Some((count, _, _)) = &best {
                let w = *count as f64 / n_moving as f64;
                let p_good = w.powi(params.sample_size as i32);
                if p_good >= 1.0 {
                    break;
                }
                if p_good > 0.0 {
                    let needed = (1.0 - params.confidence).ln() / (1.0 - p_good).ln();
                    if done as f64 >= needed {
                        break;
                    }
                }
            }
        }
    }

    let (inlier_count, best_iteration, transform) =
        best.ok_or(Error::NoValidModel("no consistent rigid model found"))?;
    Ok(RansacResult {
        transform,
        inlier_count,
        inlier_fraction: inlier_count as f64 / n_moving as f64,
        iterations_run: done,
        best_iteration,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fpfh::FEATURE_DIM;
    use nalgebra::Vector3;
    use rand::Rng;

    fn scatter(n: usize, seed: u64) -> Vec<Point3> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                Point3::new(
                    rng.gen_range(-20.0..20.0),
                    rng.gen_range(-20.0..20.0),
                    rng.gen_range(-20.0..20.0),
                )
            })
            .collect()
    }

    fn true_motion() -> RigidTransform {
        RigidTransform::rotation_about_point(
            nalgebra::Unit::new_normalize(Vector3::new(0.2, 0.9, -0.4)),
            0.6,
            Point3::new(3.0, -1.0, 2.0),
        )
        .compose(&RigidTransform::translation(Vector3::new(8.0, -5.0, 3.0)))
    }

    #[test]
    fn matching_recovers_a_permutation() {
        let mut fixed = FeatureCloud::default();
        for i in 0..6 {
            let mut f = [0.0; FEATURE_DIM];
            f[i * 5] = 100.0;
            f[i * 5 + 1] = 35.0 * i as f64;
            fixed.features.push(f);
        }
        let perm = [3usize, 0, 5, 1, 4, 2];
        let moving = FeatureCloud {
            features: perm.iter().map(|&j| fixed.features[j]).collect(),
        };
        let m = match_features(&moving, &fixed).unwrap();
        for (i, &(mi, fi)) in m.iter().enumerate() {
            assert_eq!(mi as usize, i);
            assert_eq!(fi as usize, perm[i]);
        }
    }

    #[test]
    fn perfect_correspondences_give_the_exact_motion() {
        let src = scatter(40, 11);
        let t_true = true_motion();
        let moving = PointCloud::from_points(src.clone());
        let fixed = PointCloud::from_points(src.iter().map(|p| t_true.apply_point(*p)).collect());
        let corr: Vec<(u32, u32)> = (0..40u32).map(|i| (i, i)).collect();
        let params = RansacParams {
            iterations: 500,
            inlier_distance: 0.5,
            confidence: 1.0,
            seed: 7,
            ..Default::default()
        };
        let r = ransac_register(&moving, &fixed, &corr, &params).unwrap();
        assert_eq!(r.inlier_count, 40);
        assert_eq!(r.iterations_run, 500);
        let diff = (r.transform.matrix() - t_true.matrix()).abs().max();
        assert!(diff < 1e-9, "matrix entries off by {diff}");
    }

    #[test]
    fn survives_scrambled_correspondences() {
        let src = scatter(80, 5);
        let t_true = true_motion();
        let moving = PointCloud::from_points(src.clone());
        let fixed = PointCloud::from_points(src.iter().map(|p| t_true.apply_point(*p)).collect());
        let mut corr: Vec<(u32, u32)> = (0..80u32).map(|i| (i, i)).collect();
        // Derange the last 32 matches.
        for i in 48..80 {
            corr[i].1 = 48 + ((corr[i].1 - 48 + 7) % 32);
        }
        let params = RansacParams {
            iterations: 4000,
            inlier_distance: 0.5,
            confidence: 0.999,
            seed: 3,
            ..Default::default()
        };
        let r = ransac_register(&moving, &fixed, &corr, &params).unwrap();
        assert!(r.inlier_count >= 78, "only {} inliers", r.inlier_count);
        // A contaminated 3-point model sits whole degrees off; the
        // bound only needs to separate that from fit noise.
        assert!(crate::transform::rotation_error(&r.transform, &t_true) < 1e-3);
        assert!((r.transform.translation_vec() - t_true.translation_vec()).norm() < 1e-3);
    }

    #[test]
    fn early_exit_trips_on_clean_data() {
        let src = scatter(60, 2);
        let t_true = true_motion();
        let moving = PointCloud::from_points(src.clone());
        let fixed = PointCloud::from_points(src.iter().map(|p| t_true.apply_point(*p)).collect());
        let corr: Vec<(u32, u32)> = (0..60u32).map(|i| (i, i)).collect();
        let params = RansacParams {
            iterations: 2_000_000,
            inlier_distance: 0.5,
            confidence: 0.999,
            seed: 1,
            ..Default::default()
        };
        let r = ransac_register(&moving, &fixed, &corr, &params).unwrap();
        assert!(r.iterations_run <= 2 * BATCH, "ran {}", r.iterations_run);
        assert_eq!(r.inlier_count, 60);
    }

    #[test]
    fn repeated_runs_are_bitwise_identical() {
        let src = scatter(50, 9);
        let t_true = true_motion();
        let moving = PointCloud::from_points(src.clone());
        let fixed = PointCloud::from_points(src.iter().map(|p| t_true.apply_point(*p)).collect());
        let mut corr: Vec<(u32, u32)> = (0..50u32).map(|i| (i, i)).collect();
        for i in 30..50 {
            corr[i].1 = 30 + ((corr[i].1 - 30 + 11) % 20);
        }
        let params = RansacParams {
            iterations: 3000,
            inlier_distance: 0.4,
            confidence: 1.0,
            seed: 42,
            ..Default::default()
        };
        let a = ransac_register(&moving, &fixed, &corr, &params).unwrap();
        let b = ransac_register(&moving, &fixed, &corr, &params).unwrap();
        assert_eq!(a.transform.matrix(), b.transform.matrix());
        assert_eq!(a.best_iteration, b.best_iteration);
        assert_eq!(a.inlier_count, b.inlier_count);
    }

    #[test]
    fn collinear_correspondences_yield_no_model() {
        let src: Vec<Point3> = (0..20).map(|i| Point3::new(i as f64, 0.0, 0.0)).collect();
        let moving = PointCloud::from_points(src.clone());
        let fixed = PointCloud::from_points(src);
        let corr: Vec<(u32, u32)> = (0..20u32).map(|i| (i, i)).collect();
        let params = RansacParams {
            iterations: 200,
            inlier_distance: 0.5,
            confidence: 1.0,
            seed: 0,
            ..Default::default()
        };
        assert!(matches!(
            ransac_register(&moving, &fixed, &corr, &params),
            Err(Error::NoValidModel(_))
        ));
    }

    #[test]
    fn stretched_targets_fail_the_edge_check() {
        let src = scatter(30, 4);
        let moving = PointCloud::from_points(src.clone());
        let fixed = PointCloud::from_points(
            src.iter()
                .map(|p| Point3::from(p.coords * 2.0))
                .collect(),
        );
        let corr: Vec<(u32, u32)> = (0..30u32).map(|i| (i, i)).collect();
        let params = RansacParams {
            iterations: 300,
            inlier_distance: 0.5,
            confidence: 1.0,
            seed: 0,
            ..Default::default()
        };
        assert!(matches!(
            ransac_register(&moving, &fixed, &corr, &params),
            Err(Error::NoValidModel(_))
        ));
    }
}
