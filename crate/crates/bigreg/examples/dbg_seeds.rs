//! Scratch: end-to-end error check at full phantom scale.
use bigreg::evaluation::landmark_distance;
use bigreg::pipeline::{register, PipelineConfig};
use bigreg::synthetic::{generate_phantom, PhantomSpec};
use bigreg::transform::{rotation_error, translation_error};

fn main() {
    for seed in [0u64, 1, 2, 3, 4, 5, 6, 7] {
        let spec = PhantomSpec {
            seed,
            ..Default::default()
        };
        let p = generate_phantom(&spec).unwrap();
        let cfg = PipelineConfig::desk_scale();
        let t0 = std::time::Instant::now();
        let res = register(&p.moving, &p.fixed, &cfg).unwrap();
        let secs = t0.elapsed().as_secs_f64();
        let t = &res.t_overall;
        let te_vox = translation_error(t, &p.gt, spec.voxel_size_um) / spec.voxel_size_um;
        let lmd_vox = landmark_distance(&p.landmarks, t) / spec.voxel_size_um;
        let delta = t.compose(&p.gt.invert());
        let rot = nalgebra::Rotation3::from_matrix(&delta.matrix().fixed_view::<3, 3>(0, 0).into());
        let axis = rot
            .axis()
            .map(|a| [a.x, a.y, a.z])
            .unwrap_or([0.0, 0.0, 0.0]);
        println!(
            "seed {seed:>3}: rot {:6.3} | te {:6.2} vox | lmd {:6.2} vox | axis [{:5.2} {:5.2} {:5.2}] | {:5.1} s",
            rotation_error(t, &p.gt),
            te_vox,
            lmd_vox,
            axis[0],
            axis[1],
            axis[2],
            secs
        );
    }
}
