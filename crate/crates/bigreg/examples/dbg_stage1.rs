//! Scratch diagnostic for stage-1 behavior on a phantom.

use bigreg::fpfh::compute_fpfh;
use bigreg::kdtree::KdTree;
use bigreg::ransac::{match_features, ransac_register, RansacParams};
use bigreg::surface::{center_align, estimate_normals, extract_surface};
use bigreg::synthetic::{generate_phantom, PhantomSpec};
use bigreg::transform::rotation_error;
use bigreg::volume::unsharp_mask;

fn main() {
    let spec = PhantomSpec {
        dims: [160, 160, 80],
        seed: 42,
        max_translation_vox: 40.0,
        ..Default::default()
    };
    let p = generate_phantom(&spec).unwrap();
    println!("gt:\n{:.3}", p.gt.matrix());

    let m_mask = p.moving.threshold(5.0, true);
    let m_cloud = extract_surface(&m_mask, 2).unwrap();
    let (m_cloud, mdeg) = estimate_normals(&m_cloud, 12).unwrap();
    let sharp = unsharp_mask(&p.fixed, 5.0, 0.8);
    let f_mask = sharp.threshold(0.0, true);
    let f_cloud = extract_surface(&f_mask, 2).unwrap();
    let (f_cloud, fdeg) = estimate_normals(&f_cloud, 12).unwrap();
    println!(
        "clouds: moving {} (deg {}), fixed {} (deg {})",
        m_cloud.len(),
        mdeg,
        f_cloud.len(),
        fdeg
    );

    let mf = compute_fpfh(&m_cloud, 10.0, 250).unwrap();
    let ff = compute_fpfh(&f_cloud, 10.0, 250).unwrap();
    let pairs = match_features(&mf, &ff).unwrap();

    for tau in [2.0, 3.0, 4.0, 6.0] {
        let good = pairs
            .iter()
            .filter(|&&(mi, fi)| {
                let pm = p.gt.apply_point(m_cloud.points[mi as usize]);
                (pm - f_cloud.points[fi as usize]).norm() <= tau
            })
            .count();
        println!(
            "match correctness tau={tau}: {good}/{} = {:.4}",
            pairs.len(),
            good as f64 / pairs.len() as f64
        );
    }

    // inlier fraction of the TRUE pose (d = 3)
    let f_tree = KdTree::<3>::build(
        f_cloud
            .points
            .iter()
            .map(|q| [q.x, q.y, q.z])
            .collect::<Vec<_>>(),
    );
    let at_gt = m_cloud
        .points
        .iter()
        .filter(|pt| {
            let q = p.gt.apply_point(**pt);
            f_tree.nearest_within(&[q.x, q.y, q.z], 9.0).is_some()
        })
        .count();
    println!(
        "inliers at gt: {at_gt}/{} = {:.3}",
        m_cloud.len(),
        at_gt as f64 / m_cloud.len() as f64
    );

    let t_center = center_align(&m_cloud, &f_cloud);
    let m_centered = m_cloud.transformed(&t_center);
    for (label, conf, iters) in [("exit .999", 0.999, 20_000u64), ("full 20k", 1.0, 20_000)] {
        let params = RansacParams {
            iterations: iters,
            inlier_distance: 3.0,
            confidence: conf,
            seed: 7,
            ..Default::default()
        };
        let res = ransac_register(&m_centered, &f_cloud, &pairs, &params).unwrap();
        let t = res.transform.compose(&t_center);
        println!(
            "ransac [{label}]: inliers {} frac {:.3} ran {} best_it {} roterr {:.3} deg",
            res.inlier_count,
            res.inlier_fraction,
            res.iterations_run,
            res.best_iteration,
            rotation_error(&t, &p.gt)
        );
    }
}
