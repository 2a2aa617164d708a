//! End-to-end runs of the two-stage pipeline on generated scenes.

use bigreg::evaluation::landmark_distance;
use bigreg::pipeline::{register, PipelineConfig};
use bigreg::synthetic::{generate_phantom, PhantomSpec};
use bigreg::transform::{rotation_error, translation_error, RigidTransform};

fn small_phantom(seed: u64) -> PhantomSpec {
    PhantomSpec {
        dims: [160, 160, 80],
        seed,
        max_translation_vox: 40.0,
        ..Default::default()
    }
}

#[test]
fn full_pipeline_recovers_the_ground_truth() {
    let spec = small_phantom(42);
    let phantom = generate_phantom(&spec).unwrap();
    let mut cfg = PipelineConfig::desk_scale();
    cfg.seed = 7;

    let res = register(&phantom.moving, &phantom.fixed, &cfg).unwrap();

    let rot = rotation_error(&res.t_overall, &phantom.gt);
    let trans = translation_error(&res.t_overall, &phantom.gt, 1.0);
    let lmd_vox = landmark_distance(&phantom.landmarks, &res.t_overall) / spec.voxel_size_um;
    println!(
        "rot {rot:.4} deg, trans {trans:.3} vox, lmd {lmd_vox:.3} vox, scores {:?}",
        res.scores
    );
    assert!(rot < 1.0, "rotation error {rot} deg");
    assert!(trans < 2.0, "translation error {trans} vox");
    assert!(lmd_vox < 3.0, "landmark distance {lmd_vox} vox");
}

#[test]
fn self_registration_is_near_identity() {
    let phantom = generate_phantom(&small_phantom(3)).unwrap();
    let mut cfg = PipelineConfig::desk_scale();
    cfg.seed = 1;

    let res = register(&phantom.fixed, &phantom.fixed, &cfg).unwrap();

    let ident = RigidTransform::identity();
    let rot = rotation_error(&res.t_overall, &ident);
    let trans = translation_error(&res.t_overall, &ident, 1.0);
    println!("self-registration: rot {rot:.4} deg, trans {trans:.3} vox");
    assert!(rot < 0.1, "rotation error {rot} deg");
    assert!(trans < 0.5, "translation error {trans} vox");
}
