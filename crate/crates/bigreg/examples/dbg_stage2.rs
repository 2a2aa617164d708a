//! Scratch: stage-2 correlation profile around the true alignment.
use bigreg::mncc::mncc_fft;
use bigreg::synthetic::{generate_phantom, PhantomSpec};
use bigreg::volume::{fill_holes_3d, resample_rigid, Interpolation};

fn main() {
    let spec = PhantomSpec {
        dims: [160, 160, 80],
        seed: 42,
        max_translation_vox: 40.0,
        ..Default::default()
    };
    let p = generate_phantom(&spec).unwrap();
    // resample with the exact ground truth: the peak should be the zero shift
    let moved = resample_rigid(&p.moving, &p.gt, Interpolation::Linear);
    let m_mask = fill_holes_3d(&moved.threshold(0.0, true));
    let f_mask = fill_holes_3d(&p.fixed.threshold(0.0, true));
    let corr = mncc_fft(&p.fixed, &f_mask, &moved, &m_mask, 0.3).unwrap();

    let at = |dx: i64, dy: i64, dz: i64| -> f32 {
        let ix = (corr.zero_shift_index[0] as i64 + dx) as usize;
        let iy = (corr.zero_shift_index[1] as i64 + dy) as usize;
        let iz = (corr.zero_shift_index[2] as i64 + dz) as usize;
        corr.scores[(iz * corr.dims[1] + iy) * corr.dims[0] + ix]
    };
    println!("z-profile (dx=dy=0):");
    for dz in -8..=8i64 {
        println!("  dz {dz:+}: {:.4}", at(0, 0, dz));
    }
    println!("x-profile (dy=dz=0):");
    for dx in -4..=4i64 {
        println!("  dx {dx:+}: {:.4}", at(dx, 0, 0));
    }
    println!("y-profile (dx=dz=0):");
    for dy in -4..=4i64 {
        println!("  dy {dy:+}: {:.4}", at(0, dy, 0));
    }
    let (peak, score) = corr.find_peak_within([8, 8, 8]).unwrap();
    println!(
        "peak within +-8: [{} {} {}] score {:.4}",
        peak.dx, peak.dy, peak.dz, score
    );
}
