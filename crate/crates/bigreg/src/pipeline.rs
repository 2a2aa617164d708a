//! Two-stage registration pipeline.
//!
//! Stage 1.1 aligns surface point clouds globally (feature matching +
//! consensus search), stage 1.2 refines the pose locally
//! (point-to-plane ICP), and stage 2 fixes the residual translation by
//! masked correlation over all integer shifts. Transforms compose as
//! `t_overall = t_2 ∘ t_1` with `t_1 = t_12 ∘ t_11`; a disabled stage
//! contributes the identity.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fpfh::compute_fpfh;
use crate::icp::{point_to_plane_icp, IcpParams};
use crate::mncc::stage2_refine;
use crate::ransac::{match_features, ransac_register, RansacParams};
use crate::surface::{center_align, estimate_normals, extract_surface, PointCloud};
use crate::transform::RigidTransform;
use crate::volume::{
    fill_holes_3d, resample_rigid, resample_to, unsharp_mask, Interpolation, Volume,
};

/// Stage 2 corrects the small translation left over after stage 1, so
/// by default its correlation peak is only accepted this close to the
/// zero shift; wider hunts are opt-in via `stage2_max_shift`.
pub const DEFAULT_STAGE2_WINDOW: [i64; 3] = [4, 4, 4];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct StageToggles {
    pub s11: bool,
    pub s12: bool,
    pub s2: bool,
}

impl Default for StageToggles {
    fn default() -> Self {
        Self {
            s11: true,
            s12: true,
            s2: true,
        }
    }
}

/// Everything the pipeline needs. The defaults are the full-scale
/// production values; [`PipelineConfig::desk_scale`] shrinks the
/// neighborhood/search parameters for small test volumes.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// mask threshold for the moving volume (strictly above)
    pub moving_threshold: f32,
    /// mask threshold for the fixed volume (strictly above)
    pub fixed_threshold: f32,
    /// 2-D closing radius used during surface extraction
    pub closing_radius: usize,
    /// unsharp-mask parameters applied to the fixed volume before its
    /// surface mask is taken (removes low-frequency haze)
    pub unsharp_sigma: f64,
    pub unsharp_weight: f64,
    /// neighbors for surface-normal estimation
    pub normals_k: usize,
    /// feature-descriptor neighborhood radius, voxels
    pub fpfh_radius: f64,
    pub fpfh_max_neighbors: usize,
    pub ransac: RansacParams,
    pub icp: IcpParams,
    /// minimum mask-overlap fraction for a correlation cell to count
    pub stage2_min_overlap_fraction: f64,
    /// stage-2 shift search window; `None` means the ±4-voxel
    /// refinement window [`DEFAULT_STAGE2_WINDOW`]
    pub stage2_max_shift: Option<[i64; 3]>,
    /// keep only slices `z0..z1` of both volumes during preprocessing
    pub z_crop: Option<[usize; 2]>,
    pub stages: StageToggles,
    /// permit stage subsets that skip the global stage 1.1
    pub allow_nonstandard_stages: bool,
    /// master seed; overrides `ransac.seed` inside [`register`]
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            moving_threshold: 5.0,
            fixed_threshold: 0.0,
            closing_radius: 2,
            unsharp_sigma: 5.0,
            unsharp_weight: 0.8,
            normals_k: 30,
            fpfh_radius: 200.0,
            fpfh_max_neighbors: 400,
            ransac: RansacParams {
                iterations: 2_500_000,
                inlier_distance: 30.0,
                ..RansacParams::default()
            },
            icp: IcpParams {
                max_correspondence_distance: 16.0,
                max_iterations: 2000,
                ..IcpParams::default()
            },
            stage2_min_overlap_fraction: 0.3,
            stage2_max_shift: None,
            z_crop: None,
            stages: StageToggles::default(),
            allow_nonstandard_stages: false,
            seed: 0,
        }
    }
}

impl PipelineConfig {
    /// Neighborhood and search scales tuned for test volumes of
    /// roughly 100–300 voxels per side.
    pub fn desk_scale() -> Self {
        Self {
            normals_k: 12,
            fpfh_radius: 10.0,
            fpfh_max_neighbors: 250,
            ransac: RansacParams {
                iterations: 60_000,
                inlier_distance: 2.0,
                // exhaustive: on small self-similar surfaces an early
                // exit can lock in a mediocre pose before a correct
                // triple is ever sampled
                confidence: 1.0,
                ..RansacParams::default()
            },
            icp: IcpParams {
                max_correspondence_distance: 2.5,
                max_iterations: 200,
                ..IcpParams::default()
            },
            ..Self::default()
        }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct StageScores {
    pub ransac_inlier_count: Option<usize>,
    pub ransac_inlier_fraction: Option<f64>,
    pub icp_fitness: Option<f64>,
    pub icp_rmse: Option<f64>,
    pub icp_iterations: Option<usize>,
    pub mncc_peak: Option<f32>,
    pub mncc_shift: Option<[i64; 3]>,
}

/// Wall-clock seconds per enabled stage (zero when disabled).
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct StageTimings {
    pub preprocess_s: f64,
    pub s11_s: f64,
    pub s12_s: f64,
    pub s2_s: f64,
    pub total_s: f64,
}

#[derive(Clone, Debug)]
pub struct RegistrationResult {
    pub t_11: RigidTransform,
    /// incremental stage-1.2 refinement on top of `t_11`
    pub t_12: RigidTransform,
    /// surface-alignment total: the ICP output seeded with `t_11`
    pub t_1: RigidTransform,
    pub t_2: RigidTransform,
    pub t_overall: RigidTransform,
    pub scores: StageScores,
    pub timings: StageTimings,
}

/// Bring a raw pair onto one grid: the fixed volume is resampled to
/// the moving voxel size, both are optionally z-cropped, padded to
/// their element-wise max dims (content centered), and normalized to
/// [0, 255].
pub fn preprocess_pair(
    moving_raw: &Volume,
    fixed_raw: &Volume,
    cfg: &PipelineConfig,
) -> Result<(Volume, Volume)> {
    let mut moving = moving_raw.clone();
    let mut fixed = resample_to(fixed_raw, moving_raw.voxel_size)?;

    if let Some([z0, z1]) = cfg.z_crop {
        if z0 >= z1 {
            return Err(Error::InvalidParameter(format!(
                "z_crop [{z0}, {z1}) is empty"
            )));
        }
        let take = |v: &Volume| -> Result<Volume> {
            let hi = z1.min(v.dims[2]);
            if z0 >= hi {
                return Err(Error::InvalidParameter(format!(
                    "z_crop [{z0}, {z1}) outside volume with {} slices",
                    v.dims[2]
                )));
            }
            v.crop([0, 0, z0], [v.dims[0], v.dims[1], hi - z0])
        };
        moving = take(&moving)?;
        fixed = take(&fixed)?;
    }

    let target = [
        moving.dims[0].max(fixed.dims[0]),
        moving.dims[1].max(fixed.dims[1]),
        moving.dims[2].max(fixed.dims[2]),
    ];
    moving = moving.pad_to(target)?;
    fixed = fixed.pad_to(target)?;
    Ok((moving.normalize_0_255()?, fixed.normalize_0_255()?))
}

fn surface_with_normals(
    v: &Volume,
    tau: f32,
    closing_radius: usize,
    k: usize,
) -> Result<PointCloud> {
    let mask = v.threshold(tau, true);
    let cloud = extract_surface(&mask, closing_radius)?;
    let (with_normals, _degenerate) = estimate_normals(&cloud, k)?;
    Ok(with_normals)
}

/// Run the enabled stages on a preprocessed pair (same dims, same
/// voxel size). Point clouds carry the pose between stages 1.1 and
/// 1.2; the only full-volume resample is the linear one feeding stage
/// 2 — the cubic output resample is the caller's move.
pub fn register(
    moving: &Volume,
    fixed: &Volume,
    cfg: &PipelineConfig,
) -> Result<RegistrationResult> {
    if moving.dims != fixed.dims {
        return Err(Error::DimsMismatch(moving.dims, fixed.dims));
    }
    if moving.voxel_size != fixed.voxel_size {
        return Err(Error::InvalidParameter(format!(
            "voxel sizes differ: {:?} vs {:?} (preprocess first)",
            moving.voxel_size, fixed.voxel_size
        )));
    }
    let st = cfg.stages;
    if (st.s12 || st.s2) && !st.s11 && !cfg.allow_nonstandard_stages {
        return Err(Error::InvalidParameter(
            "stage 1.1 is required before 1.2/2 (set allow_nonstandard_stages to override)"
                .into(),
        ));
    }

    let t_start = Instant::now();
    let mut scores = StageScores::default();
    let mut timings = StageTimings::default();

    // surface clouds are shared by stages 1.1 and 1.2
    let clock = Instant::now();
    let (m_cloud, f_cloud) = if st.s11 || st.s12 {
        let m = surface_with_normals(moving, cfg.moving_threshold, cfg.closing_radius, cfg.normals_k)
            .map_err(|e| e.in_stage("1.1"))?;
        let sharp = unsharp_mask(fixed, cfg.unsharp_sigma, cfg.unsharp_weight);
        let f = surface_with_normals(&sharp, cfg.fixed_threshold, cfg.closing_radius, cfg.normals_k)
            .map_err(|e| e.in_stage("1.1"))?;
        (Some(m), Some(f))
    } else {
        (None, None)
    };
    timings.preprocess_s = clock.elapsed().as_secs_f64();

    let mut t_11 = RigidTransform::identity();
    if st.s11 {
        let clock = Instant::now();
        let (m_cloud, f_cloud) = (m_cloud.as_ref().unwrap(), f_cloud.as_ref().unwrap());
        let mut run = || -> Result<()> {
            let m_feat = compute_fpfh(m_cloud, cfg.fpfh_radius, cfg.fpfh_max_neighbors)?;
            let f_feat = compute_fpfh(f_cloud, cfg.fpfh_radius, cfg.fpfh_max_neighbors)?;
            let pairs = match_features(&m_feat, &f_feat)?;
            let params = RansacParams {
                seed: cfg.seed,
                ..cfg.ransac.clone()
            };
            // descriptors are translation invariant, so matching is done on the raw
            // clouds and only the sampling geometry sees the centred coordinates
            let t_center = center_align(m_cloud, f_cloud);
            let m_centered = m_cloud.transformed(&t_center);
            let res = ransac_register(&m_centered, f_cloud, &pairs, &params)?;
            t_11 = res.transform.compose(&t_center);
            scores.ransac_inlier_count = Some(res.inlier_count);
            scores.ransac_inlier_fraction = Some(res.inlier_fraction);
            Ok(())
        };
        run().map_err(|e| e.in_stage("1.1"))?;
        timings.s11_s = clock.elapsed().as_secs_f64();
    }

    let mut t_1 = t_11;
    let mut t_12 = RigidTransform::identity();
    if st.s12 {
        let clock = Instant::now();
        let (m_cloud, f_cloud) = (m_cloud.as_ref().unwrap(), f_cloud.as_ref().unwrap());
        let res = point_to_plane_icp(m_cloud, f_cloud, &t_11, &cfg.icp)
            .map_err(|e| e.in_stage("1.2"))?;
        t_1 = res.transform;
        t_12 = t_1.compose(&t_11.invert());
        scores.icp_fitness = Some(res.fitness);
        scores.icp_rmse = Some(res.rmse);
        scores.icp_iterations = Some(res.iterations);
        timings.s12_s = clock.elapsed().as_secs_f64();
    }

    let mut t_2 = RigidTransform::identity();
    if st.s2 {
        let clock = Instant::now();
        let mut run = || -> Result<()> {
            let moved = resample_rigid(moving, &t_1, Interpolation::Linear);
            let m_mask = fill_holes_3d(&moved.threshold(0.0, true));
            let f_mask = fill_holes_3d(&fixed.threshold(0.0, true));
            let window = cfg.stage2_max_shift.unwrap_or(DEFAULT_STAGE2_WINDOW);
            let (t, peak, _corr) = stage2_refine(
                fixed,
                &f_mask,
                &moved,
                &m_mask,
                Some(window),
                cfg.stage2_min_overlap_fraction,
            )?;
            let tv = t.translation_vec();
            t_2 = t;
            scores.mncc_peak = Some(peak);
            scores.mncc_shift = Some([tv.x as i64, tv.y as i64, tv.z as i64]);
            Ok(())
        };
        run().map_err(|e| e.in_stage("2"))?;
        timings.s2_s = clock.elapsed().as_secs_f64();
    }

    let t_overall = t_2.compose(&t_1);
    timings.total_s = t_start.elapsed().as_secs_f64();
    Ok(RegistrationResult {
        t_11,
        t_12,
        t_1,
        t_2,
        t_overall,
        scores,
        timings,
    })
}
