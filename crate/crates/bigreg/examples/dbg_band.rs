//! Scratch: decompose z-shift correlation by region.
use bigreg::synthetic::{generate_phantom, PhantomSpec};
use bigreg::volume::{fill_holes_3d, resample_rigid, Interpolation};

fn main() {
    let spec = PhantomSpec {
        dims: [160, 160, 80],
        seed: 42,
        max_translation_vox: 40.0,
        noise_sigma: 0.0,
        ..Default::default()
    };
    let p = generate_phantom(&spec).unwrap();
    let moved = resample_rigid(&p.moving, &p.gt, Interpolation::Linear);
    let m_mask = fill_holes_3d(&moved.threshold(0.0, true));
    let f_mask = fill_holes_3d(&p.fixed.threshold(0.0, true));
    let [nx, ny, nz] = p.fixed.dims;

    // fixed(x,y,z+dz) vs moved(x,y,z) over the joint mask, whole volume
    // and wall-only (fixed intensity gate 50..160)
    for wall_only in [false, true] {
        println!("wall_only = {wall_only}");
        for dz in -6i64..=6 {
            let (mut n, mut sf, mut sm, mut sff, mut smm, mut sfm) =
                (0f64, 0f64, 0f64, 0f64, 0f64, 0f64);
            for z in 0..nz {
                let zf = z as i64 + dz;
                if zf < 0 || zf >= nz as i64 {
                    continue;
                }
                let zf = zf as usize;
                for y in 0..ny {
                    for x in 0..nx {
                        if !(m_mask.get(x, y, z) && f_mask.get(x, y, zf)) {
                            continue;
                        }
                        let f = p.fixed.get(x, y, zf) as f64;
                        let m = moved.get(x, y, z) as f64;
                        if wall_only && !(50.0..160.0).contains(&f) {
                            continue;
                        }
                        n += 1.0;
                        sf += f;
                        sm += m;
                        sff += f * f;
                        smm += m * m;
                        sfm += f * m;
                    }
                }
            }
            let cov = sfm / n - (sf / n) * (sm / n);
            let vf = sff / n - (sf / n) * (sf / n);
            let vm = smm / n - (sm / n) * (sm / n);
            println!(
                "  dz {dz:+}: n {:>9.0} rho {:+.4} (sigf {:.1} sigm {:.1})",
                n,
                cov / (vf * vm).sqrt(),
                vf.sqrt(),
                vm.sqrt()
            );
        }
    }
}
