//! Landmark-based evaluation: ground-truth fitting from tracked
//! landmark pairs, per-landmark distances, and summary scores.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::transform::{umeyama_fit, Point3, RigidTransform};

const CSV_HEADER: &str = "mx,my,mz,fx,fy,fz";

/// Paired landmark coordinates (voxels) in the moving and fixed frames,
/// plus the voxel pitch that converts them to micrometres.
#[derive(Clone, Debug)]
pub struct LandmarkSet {
    pub moving: Vec<Point3>,
    pub fixed: Vec<Point3>,
    /// micrometres per voxel
    pub voxel_size: f64,
}

impl LandmarkSet {
    pub fn new(moving: Vec<Point3>, fixed: Vec<Point3>, voxel_size: f64) -> Result<Self> {
        if moving.len() != fixed.len() {
            return Err(Error::InvalidParameter(format!(
                "{} moving vs {} fixed landmarks",
                moving.len(),
                fixed.len()
            )));
        }
        if !(voxel_size > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "voxel size {voxel_size} must be positive"
            )));
        }
        Ok(Self {
            moving,
            fixed,
            voxel_size,
        })
    }

    pub fn len(&self) -> usize {
        self.moving.len()
    }

    pub fn is_empty(&self) -> bool {
        self.moving.is_empty()
    }

    /// Check that within each frame every landmark is farther than
    /// `min_um` from its nearest neighbor; opt-in protocol guard.
    pub fn validate_min_spacing(&self, min_um: f64) -> Result<()> {
        let min_vox = min_um / self.voxel_size;
        let d2 = min_vox * min_vox;
        for (label, pts) in [("moving", &self.moving), ("fixed", &self.fixed)] {
            for i in 0..pts.len() {
                for j in (i + 1)..pts.len() {
                    if (pts[i] - pts[j]).norm_squared() <= d2 {
                        return Err(Error::InvalidParameter(format!(
                            "{label} landmarks {i} and {j} are within {min_um} um"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Columns hold voxel coordinates; the voxel pitch is supplied by
    /// the caller because the file format does not carry it.
    pub fn read_csv(path: &Path, voxel_size: f64) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut lines = text.lines();
        match lines.next().map(str::trim) {
            Some(h) if h == CSV_HEADER => {}
            other => {
                return Err(Error::Format(format!(
                    "landmark csv must start with '{CSV_HEADER}', got {other:?}"
                )))
            }
        }
        let mut moving = Vec::new();
        let mut fixed = Vec::new();
        for (lineno, line) in lines.enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != 6 {
                return Err(Error::Format(format!(
                    "line {}: expected 6 fields, got {}",
                    lineno + 2,
                    fields.len()
                )));
            }
            let mut v = [0.0f64; 6];
            for (slot, field) in v.iter_mut().zip(&fields) {
                *slot = field.parse().map_err(|e| {
                    Error::Format(format!("line {}: bad number {field:?}: {e}", lineno + 2))
                })?;
                if !slot.is_finite() {
                    return Err(Error::Format(format!(
                        "line {}: non-finite value {field:?}",
                        lineno + 2
                    )));
                }
            }
            moving.push(Point3::new(v[0], v[1], v[2]));
            fixed.push(Point3::new(v[3], v[4], v[5]));
        }
        Self::new(moving, fixed, voxel_size)
    }

    /// Shortest-round-trip float formatting: reading the file back
    /// reproduces every coordinate bit for bit.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut s = String::from(CSV_HEADER);
        s.push('\n');
        for (m, f) in self.moving.iter().zip(&self.fixed) {
            s.push_str(&format!(
                "{},{},{},{},{},{}\n",
                m.x, m.y, m.z, f.x, f.y, f.z
            ));
        }
        std::fs::write(path, s)?;
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct GtRansacParams {
    pub iterations: u64,
    /// micrometres; landmark pairs within this of the model count as inliers
    pub inlier_tau_um: f64,
    pub seed: u64,
}

impl Default for GtRansacParams {
    fn default() -> Self {
        Self {
            iterations: 100_000,
            inlier_tau_um: 12.0,
            seed: 0,
        }
    }
}

/// Robust ground-truth transform from tracked landmark pairs:
/// three-point consensus search, then a least-squares re-fit on the
/// inliers of the best model. Landmark coordinates are voxels; the
/// inlier tolerance is micrometres, converted via the set's voxel size.
pub fn landmark_ransac_gt(lm: &LandmarkSet, params: &GtRansacParams) -> Result<RigidTransform> {
    if lm.len() < 3 {
        return Err(Error::InvalidParameter(format!(
            "{} landmark pairs, need at least 3",
            lm.len()
        )));
    }
    if !(params.inlier_tau_um > 0.0) || !(lm.voxel_size > 0.0) || params.iterations == 0 {
        return Err(Error::InvalidParameter(format!(
            "inlier_tau_um = {}, voxel_size = {}, iterations = {}",
            params.inlier_tau_um, lm.voxel_size, params.iterations
        )));
    }
    let d_vox = params.inlier_tau_um / lm.voxel_size;
    let d2 = d_vox * d_vox;

    let count_inliers = |t: &RigidTransform| -> usize {
        lm.moving
            .iter()
            .zip(&lm.fixed)
            .filter(|(m, f)| (t.apply_point(**m) - **f).norm_squared() <= d2)
            .count()
    };

    const BATCH: u64 = 4096;
    let mut best: Option<(usize, u64, RigidTransform)> = None;
    let mut done = 0u64;
    while done < params.iterations {
        let n = BATCH.min(params.iterations - done);
        let batch: Vec<Option<(usize, RigidTransform)>> = (done..done + n)
            .into_par_iter()
            .map(|it| {
                let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
                rng.set_stream(it);
                let picks = rand::seq::index::sample(&mut rng, lm.len(), 3);
                let src: Vec<Point3> = picks.iter().map(|i| lm.moving[i]).collect();
                let dst: Vec<Point3> = picks.iter().map(|i| lm.fixed[i]).collect();
                let t = umeyama_fit(&src, &dst).ok()?;
                if src
                    .iter()
                    .zip(&dst)
                    .any(|(s, f)| (t.apply_point(*s) - f).norm_squared() > d2)
                {
                    return None;
                }
                Some((count_inliers(&t), t))
            })
            .collect();
        for (off, cand) in batch.into_iter().enumerate() {
            if let Some((count, t)) = cand {
                if best.as_ref().map_or(true, |(bc, _, _)| count > *bc) {
                    best = Some((count, done + off as u64, t));
                }
            }
        }
        done += n;
    }

    let (_, _, coarse) = best.ok_or(Error::NoValidModel(
        "no landmark triple produced a consistent model",
    ))?;

    // Re-fit on every inlier of the winning model.
    let mut src = Vec::new();
    let mut dst = Vec::new();
    for (m, f) in lm.moving.iter().zip(&lm.fixed) {
        if (coarse.apply_point(*m) - *f).norm_squared() <= d2 {
            src.push(*m);
            dst.push(*f);
        }
    }
    umeyama_fit(&src, &dst)
}

/// Per-landmark registration errors in micrometres.
pub fn landmark_distances_um(lm: &LandmarkSet, t: &RigidTransform) -> Vec<f64> {
    lm.moving
        .iter()
        .zip(&lm.fixed)
        .map(|(m, f)| (t.apply_point(*m) - *f).norm() * lm.voxel_size)
        .collect()
}

/// Mean post-registration landmark distance in micrometres: the
/// primary landmark summary score.
pub fn landmark_distance(lm: &LandmarkSet, t: &RigidTransform) -> f64 {
    let d = landmark_distances_um(lm, t);
    if d.is_empty() {
        return f64::NAN;
    }
    d.iter().sum::<f64>() / d.len() as f64
}

/// Median of the per-landmark errors (mean of the two central values
/// for even counts); robust companion to [`landmark_distance`].
pub fn median_landmark_distance_um(lm: &LandmarkSet, t: &RigidTransform) -> f64 {
    let mut d = landmark_distances_um(lm, t);
    if d.is_empty() {
        return f64::NAN;
    }
    d.sort_by(|a, b| a.total_cmp(b));
    let n = d.len();
    if n % 2 == 1 {
        d[n / 2]
    } else {
        0.5 * (d[n / 2 - 1] + d[n / 2])
    }
}

/// Fraction of landmarks registered to within `tau_um`.
pub fn landmark_fitness(lm: &LandmarkSet, t: &RigidTransform, tau_um: f64) -> f64 {
    if lm.is_empty() {
        return f64::NAN;
    }
    let within = landmark_distances_um(lm, t)
        .into_iter()
        .filter(|&d| d <= tau_um)
        .count();
    within as f64 / lm.len() as f64
}

/// Summary of a registration against tracked landmarks.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalReport {
    /// mean landmark distance, micrometres
    pub lmd_um: f64,
    /// fraction of landmarks within the fitness tolerance
    pub lm_fitness: f64,
    /// rotation error against the landmark-derived ground truth, degrees
    pub rot_err_deg: f64,
    /// translation error against the ground truth, micrometres
    pub trans_err_um: f64,
}

/// Full evaluation: landmark statistics plus rotation/translation
/// error against a ground-truth transform fitted to the landmarks.
pub fn evaluate_registration(
    lm: &LandmarkSet,
    t: &RigidTransform,
    fitness_tau_um: f64,
    gt: &GtRansacParams,
) -> Result<EvalReport> {
    let truth = landmark_ransac_gt(lm, gt)?;
    Ok(EvalReport {
        lmd_um: landmark_distance(lm, t),
        lm_fitness: landmark_fitness(lm, t, fitness_tau_um),
        rot_err_deg: crate::transform::rotation_error(t, &truth),
        trans_err_um: crate::transform::translation_error(t, &truth, lm.voxel_size),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;
    use rand::Rng;

    fn sample_landmarks(n: usize, seed: u64, t: &RigidTransform) -> LandmarkSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let moving: Vec<Point3> = (0..n)
            .map(|_| {
                Point3::new(
                    rng.gen_range(0.0..120.0),
                    rng.gen_range(0.0..100.0),
                    rng.gen_range(0.0..60.0),
                )
            })
            .collect();
        let fixed = moving.iter().map(|p| t.apply_point(*p)).collect();
        LandmarkSet {
            moving,
            fixed,
            voxel_size: 1.0,
        }
    }

    fn motion() -> RigidTransform {
        RigidTransform::rotation_about_point(
            nalgebra::Unit::new_normalize(Vector3::new(0.1, 0.2, 1.0)),
            0.5,
            Point3::new(60.0, 50.0, 30.0),
        )
        .compose(&RigidTransform::translation(Vector3::new(20.0, -35.0, 4.0)))
    }

    #[test]
    fn csv_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("lm.csv");
        let lm = LandmarkSet {
            moving: vec![
                Point3::new(1.0 / 3.0, -2.75, 1e-17),
                Point3::new(123.456789012345678, 0.1, -0.0),
            ],
            fixed: vec![
                Point3::new(7.0, 8.0, 9.000000000000002),
                Point3::new(-1.5e8, 2.0f64.sqrt(), 3.0),
            ],
            voxel_size: 1.42,
        };
        lm.write_csv(&path).unwrap();
        let back = LandmarkSet::read_csv(&path, 1.42).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back.voxel_size, 1.42);
        for i in 0..2 {
            assert_eq!(lm.moving[i], back.moving[i]);
            assert_eq!(lm.fixed[i], back.fixed[i]);
        }
    }

    #[test]
    fn csv_rejects_malformed_input() {
        let dir = tempfile::tempdir().unwrap();
        let bad_header = dir.path().join("a.csv");
        std::fs::write(&bad_header, "x,y,z\n1,2,3\n").unwrap();
        assert!(matches!(
            LandmarkSet::read_csv(&bad_header, 1.0),
            Err(Error::Format(_))
        ));

        let bad_fields = dir.path().join("b.csv");
        std::fs::write(&bad_fields, "mx,my,mz,fx,fy,fz\n1,2,3,4,5\n").unwrap();
        assert!(matches!(
            LandmarkSet::read_csv(&bad_fields, 1.0),
            Err(Error::Format(_))
        ));

        let bad_number = dir.path().join("c.csv");
        std::fs::write(&bad_number, "mx,my,mz,fx,fy,fz\n1,2,three,4,5,6\n").unwrap();
        assert!(matches!(
            LandmarkSet::read_csv(&bad_number, 1.0),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn spacing_guard_flags_close_pairs() {
        let lm = LandmarkSet {
            moving: vec![
                Point3::new(0.0, 0.0, 0.0),
                Point3::new(200.0, 0.0, 0.0),
                Point3::new(0.0, 150.0, 0.0),
            ],
            fixed: vec![
                Point3::new(0.0, 0.0, 0.0),
                Point3::new(200.0, 0.0, 0.0),
                Point3::new(0.0, 150.0, 0.0),
            ],
            voxel_size: 1.0,
        };
        assert!(lm.validate_min_spacing(100.0).is_ok());
        assert!(lm.validate_min_spacing(151.0).is_err());
    }

    #[test]
    fn clean_landmarks_give_the_exact_truth() {
        let t_true = motion();
        let lm = sample_landmarks(40, 8, &t_true);
        let got = landmark_ransac_gt(&lm, &GtRansacParams::default()).unwrap();
        let diff = (got.matrix() - t_true.matrix()).abs().max();
        assert!(diff < 1e-9, "matrix entries off by {diff}");
    }

    #[test]
    fn mistracked_landmarks_are_rejected() {
        let t_true = motion();
        let mut lm = sample_landmarks(50, 21, &t_true);
        // mistrack 15 of 50
        for i in 0..15 {
            lm.fixed[i * 3] += Vector3::new(25.0 + i as f64, -18.0, 30.0);
        }
        let params = GtRansacParams {
            iterations: 20_000,
            inlier_tau_um: 2.0,
            seed: 5,
        };
        let got = landmark_ransac_gt(&lm, &params).unwrap();
        let diff = (got.matrix() - t_true.matrix()).abs().max();
        assert!(diff < 1e-9, "matrix entries off by {diff}");
    }

    #[test]
    fn collinear_landmarks_have_no_model() {
        let lm = LandmarkSet {
            moving: (0..10).map(|i| Point3::new(i as f64, 0.0, 0.0)).collect(),
            fixed: (0..10).map(|i| Point3::new(i as f64, 0.0, 0.0)).collect(),
            voxel_size: 1.0,
        };
        assert!(matches!(
            landmark_ransac_gt(&lm, &GtRansacParams::default()),
            Err(Error::NoValidModel(_) | Error::DegenerateConfiguration(_))
        ));
        let two = LandmarkSet {
            moving: vec![Point3::origin(), Point3::new(1.0, 0.0, 0.0)],
            fixed: vec![Point3::origin(), Point3::new(1.0, 0.0, 0.0)],
            voxel_size: 1.0,
        };
        assert!(matches!(
            landmark_ransac_gt(&two, &GtRansacParams::default()),
            Err(Error::InvalidParameter(_))
        ));
    }

    #[test]
    fn distances_and_summaries_match_hand_values() {
        let lm = LandmarkSet {
            moving: vec![
                Point3::new(0.0, 0.0, 0.0),
                Point3::new(10.0, 0.0, 0.0),
                Point3::new(0.0, 5.0, 0.0),
            ],
            fixed: vec![
                Point3::new(3.0, 4.0, 0.0),
                Point3::new(10.0, 0.0, 1.0),
                Point3::new(0.0, 5.0, 2.0),
            ],
            voxel_size: 2.0,
        };
        let t = RigidTransform::identity();
        let d = landmark_distances_um(&lm, &t);
        assert_eq!(d, vec![10.0, 2.0, 4.0]);
        assert_eq!(landmark_distance(&lm, &t), 16.0 / 3.0);
        assert_eq!(median_landmark_distance_um(&lm, &t), 4.0);
        // inclusive threshold: exactly tau counts as within
        assert_eq!(landmark_fitness(&lm, &t, 4.0), 2.0 / 3.0);
        assert_eq!(landmark_fitness(&lm, &t, 2.0), 1.0 / 3.0);
        assert_eq!(landmark_fitness(&lm, &t, 1.9), 0.0);

        let even = LandmarkSet {
            moving: lm.moving[..2].to_vec(),
            fixed: lm.fixed[..2].to_vec(),
            voxel_size: 2.0,
        };
        assert_eq!(median_landmark_distance_um(&even, &t), 6.0);
    }

    #[test]
    fn evaluation_report_closes_the_loop() {
        let t_true = motion();
        let mut lm = sample_landmarks(60, 33, &t_true);
        lm.voxel_size = 1.42;
        let report =
            evaluate_registration(&lm, &t_true, 12.0, &GtRansacParams::default()).unwrap();
        assert!(report.lmd_um < 1e-9);
        assert_eq!(report.lm_fitness, 1.0);
        assert!(report.rot_err_deg < 1e-4);
        assert!(report.trans_err_um < 1e-6);
    }
}
