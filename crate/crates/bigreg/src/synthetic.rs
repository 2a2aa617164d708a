//! Synthetic two-modality test scenes with exact ground truth.
//!
//! The scene is a hollow tube ("bone wall") whose cross-section is a
//! low-order harmonic profile — chiral, so the outline pins the
//! in-plane orientation uniquely — with a bend and a taper along z and
//! smooth surface bumps that give the outer wall local relief in both
//! the axial and circumferential directions. Small ellipsoidal
//! cavities inside the wall and three wall canals provide interior
//! texture. The same geometry is rendered twice:
//!
//! * moving: a microCT-like map, sampled analytically after the
//!   ground-truth motion, complete view;
//! * fixed: a light-sheet-like map in the reference frame, with a
//!   y-graded surface loss, the lower part of the view cut away, and a
//!   smooth intensity haze.
//!
//! Cavity centres double as tracked landmark pairs.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::evaluation::LandmarkSet;
use crate::transform::{Point3, RigidTransform};
use crate::volume::Volume;

const XRM_WALL: f32 = 190.0;
const XRM_MARROW: f32 = 15.0;
const XRM_FEATURE: f32 = 10.0;
const LSFM_WALL: f32 = 90.0;
const LSFM_MARROW: f32 = 20.0;
const LSFM_FEATURE: f32 = 220.0;
// banding depth of the wall texture per view
const XRM_BAND: f64 = 0.28;
const LSFM_BAND: f64 = 0.5;

// phases of the profile harmonics, all chosen mirror-symmetric about
// the y axis: the dominant first harmonic denies the outline any
// rotational self-symmetry, while keeping the lower lobe centered so
// that the partial fixed view truncates it evenly on both sides
const PHASE_1: f64 = std::f64::consts::FRAC_PI_2;
const PHASE_2: f64 = 0.0;
const PHASE_3: f64 = -std::f64::consts::FRAC_PI_2;

#[derive(Clone, Debug)]
pub struct PhantomSpec {
    pub dims: [usize; 3],
    pub voxel_size_um: f64,
    pub seed: u64,
    /// upper bound for the in-plane ground-truth translation, voxels
    pub max_translation_vox: f64,
    /// base outer radius of the wall cross-section, voxels
    pub shell_radius: f64,
    /// first-harmonic amplitude: widens the +y side (egg-ness)
    pub shell_asymmetry: f64,
    /// tilted second harmonic (ellipticity off the axes)
    pub shell_skew: f64,
    /// third harmonic (tri-lobed accent)
    pub shell_harmonic3: f64,
    pub wall_thickness: f64,
    /// lateral drift of the shell axis from bottom to top, voxels
    pub bend_vox: f64,
    /// relative cross-section shrink from bottom to top
    pub taper: f64,
    /// smooth outer-surface relief: count and relative height of
    /// Gaussian bumps scattered over the (angle, z) surface
    pub surface_bump_count: usize,
    pub surface_bump_amplitude: f64,
    /// waviness of the wall/marrow boundary, as a fraction of the local
    /// inner radius; keeps the cavity shape from being a plain extrusion
    pub inner_bump_count: usize,
    pub inner_bump_amplitude: f64,
    pub lacuna_count: usize,
    pub lacuna_radius_range: (f64, f64),
    pub lacuna_min_spacing: f64,
    pub canal_radius: f64,
    /// fixed-view surface loss: base + gradient * sin(angle), voxels,
    /// so the +y side loses the most material
    pub erosion_base: f64,
    pub erosion_gradient: f64,
    /// fraction of the cross-section height cut from the bottom of the
    /// fixed view
    pub crop_fraction: f64,
    pub noise_sigma: f64,
    pub haze_amplitude: f64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            dims: [256, 256, 128],
            voxel_size_um: 1.42,
            seed: 0,
            max_translation_vox: 100.0,
            shell_radius: 14.0,
            shell_asymmetry: 0.30,
            shell_skew: 0.12,
            shell_harmonic3: 0.08,
            wall_thickness: 6.5,
            bend_vox: 2.0,
            taper: 0.06,
            surface_bump_count: 70,
            surface_bump_amplitude: 0.25,
            inner_bump_count: 50,
            inner_bump_amplitude: 0.22,
            lacuna_count: 40,
            lacuna_radius_range: (1.3, 1.9),
            lacuna_min_spacing: 6.0,
            canal_radius: 1.2,
            erosion_base: 0.5,
            erosion_gradient: 0.25,
            crop_fraction: 0.30,
            noise_sigma: 1.0,
            haze_amplitude: 6.0,
        }
    }
}

pub struct Phantom {
    /// light-sheet-like reference volume
    pub fixed: Volume,
    /// microCT-like volume, displaced by `gt`
    pub moving: Volume,
    /// ground truth: maps moving voxel coordinates onto fixed ones
    pub gt: RigidTransform,
    /// cavity centres as (moving, fixed) pairs
    pub landmarks: LandmarkSet,
}

/// In-plane rigid motion: a rotation about the z axis through the
/// volume centre plus an xy translation of random direction and a
/// magnitude uniform in [0, max_translation_vox].
pub fn random_pretransform(
    seed: u64,
    dims: [usize; 3],
    max_translation_vox: f64,
) -> RigidTransform {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let angle = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
    let mag = rng.gen_range(0.0..=max_translation_vox);
    let dir = rng.gen_range(0.0..std::f64::consts::TAU);
    let center = Point3::new(
        (dims[0] as f64 - 1.0) / 2.0,
        (dims[1] as f64 - 1.0) / 2.0,
        (dims[2] as f64 - 1.0) / 2.0,
    );
    RigidTransform::translation(Vector3::new(mag * dir.cos(), mag * dir.sin(), 0.0))
        .compose(&RigidTransform::rotation_about_point(
            Vector3::z_axis(),
            angle,
            center,
        ))
}

struct Lacuna {
    c: [f64; 3],
    r: [f64; 3],
}

struct Bump {
    phi: f64,
    z: f64,
    sigma: f64,
    /// relative radial height, signed
    amp: f64,
}

struct HazeBlob {
    c: [f64; 3],
    sigma: f64,
    amp: f64,
}

enum Modality {
    Xrm,
    LsfmFixed,
}

#[derive(PartialEq, Clone, Copy)]
enum Region {
    Outside,
    Wall,
    Marrow,
}

struct Scene {
    spec: PhantomSpec,
    cx: f64,
    cy: f64,
    crop_y: f64,
    lacunae: Vec<Lacuna>,
    lacuna_buckets: Vec<Vec<u16>>,
    bumps: Vec<Bump>,
    bump_buckets: Vec<Vec<u16>>,
    inner_bumps: Vec<Bump>,
    inner_bump_buckets: Vec<Vec<u16>>,
    /// (angle, mid-wall radius) per canal
    tubes: [[f64; 2]; 3],
    haze: Vec<HazeBlob>,
}

fn wrap_angle(d: f64) -> f64 {
    let mut d = d % std::f64::consts::TAU;
    if d > std::f64::consts::PI {
        d -= std::f64::consts::TAU;
    } else if d < -std::f64::consts::PI {
        d += std::f64::consts::TAU;
    }
    d
}

impl Scene {
    fn build(spec: &PhantomSpec) -> Result<Self> {
        let [nx, ny, nz] = spec.dims;
        if spec.wall_thickness >= spec.shell_radius {
            return Err(Error::InvalidParameter(
                "wall thicker than the shell radius".into(),
            ));
        }
        let cx = (nx as f64 - 1.0) / 2.0;
        let cy = (ny as f64 - 1.0) / 2.0;
        let crop_y = Self::crop_plane_of(spec);

        let mut scene = Self {
            spec: spec.clone(),
            cx,
            cy,
            crop_y,
            lacunae: Vec::new(),
            lacuna_buckets: vec![Vec::new(); nz],
            bumps: Vec::new(),
            bump_buckets: vec![Vec::new(); nz],
            inner_bumps: Vec::new(),
            inner_bump_buckets: vec![Vec::new(); nz],
            tubes: [[0.0; 2]; 3],
            haze: Vec::new(),
        };
        let tube_angles = [0.3, 2.4, -std::f64::consts::FRAC_PI_2];
        for (i, phi) in tube_angles.into_iter().enumerate() {
            let mid = scene.radius_at(phi) - spec.wall_thickness / 2.0;
            scene.tubes[i] = [phi, mid];
        }
        scene.place_bumps();
        scene.place_inner_bumps();
        scene.place_lacunae()?;
        scene.place_haze();
        Ok(scene)
    }

    /// Unbumped outer radius of the cross-section profile.
    fn profile_radius(spec: &PhantomSpec, phi: f64) -> f64 {
        spec.shell_radius
            * (1.0
                + spec.shell_asymmetry * (phi - PHASE_1).cos()
                + spec.shell_skew * (2.0 * phi - PHASE_2).cos()
                + spec.shell_harmonic3 * (3.0 * phi - PHASE_3).cos())
    }

    fn radius_at(&self, phi: f64) -> f64 {
        Self::profile_radius(&self.spec, phi)
    }

    /// y coordinate of the crop plane: `crop_fraction` is the portion of the
    /// cross-section height removed from the bottom, so the plane is measured
    /// from the profile's actual lowest reach rather than from the frame
    /// center. Extents are sampled over the full angular profile with the
    /// bump-relief margin included.
    pub(crate) fn crop_plane_of(spec: &PhantomSpec) -> f64 {
        let cy = (spec.dims[1] as f64 - 1.0) / 2.0;
        let margin = 1.0 + spec.surface_bump_amplitude;
        let mut top: f64 = 0.0;
        let mut bottom: f64 = 0.0;
        for i in 0..720 {
            let phi = i as f64 * std::f64::consts::TAU / 720.0;
            let y = Self::profile_radius(spec, phi) * margin * phi.sin();
            top = top.max(y);
            bottom = bottom.max(-y);
        }
        cy - bottom + spec.crop_fraction * (top + bottom)
    }

    /// Relative radial relief at a surface position, from the Gaussian
    /// bump field over (arc length, z).
    fn bump_at(&self, phi: f64, z: f64) -> f64 {
        let bucket = (z.floor().max(0.0) as usize).min(self.bump_buckets.len() - 1);
        let a = self.spec.shell_radius;
        let mut v = 0.0;
        for &i in &self.bump_buckets[bucket] {
            let b = &self.bumps[i as usize];
            let ds = wrap_angle(phi - b.phi) * a;
            let dz = z - b.z;
            v += b.amp * (-(ds * ds + dz * dz) / (2.0 * b.sigma * b.sigma)).exp();
        }
        v
    }

    /// Same construction for the wall/marrow boundary.
    fn inner_bump_at(&self, phi: f64, z: f64) -> f64 {
        let bucket = (z.floor().max(0.0) as usize).min(self.inner_bump_buckets.len() - 1);
        let a = self.spec.shell_radius - self.spec.wall_thickness;
        let mut v = 0.0;
        for &i in &self.inner_bump_buckets[bucket] {
            let b = &self.inner_bumps[i as usize];
            let ds = wrap_angle(phi - b.phi) * a;
            let dz = z - b.z;
            v += b.amp * (-(ds * ds + dz * dz) / (2.0 * b.sigma * b.sigma)).exp();
        }
        v
    }

    /// Wavy inner-boundary radius of the cross-section at (phi, z).
    fn inner_radius_at(&self, phi: f64, z: f64) -> f64 {
        (self.radius_at(phi) - self.spec.wall_thickness) * (1.0 + self.inner_bump_at(phi, z))
    }

    fn zn(&self, z: f64) -> f64 {
        (z / (self.spec.dims[2] as f64 - 1.0)).clamp(0.0, 1.0)
    }

    fn section(&self, z: f64) -> (f64, f64) {
        let zn = self.zn(z);
        let scale = 1.0 - self.spec.taper * zn;
        let cxz = self.cx + self.spec.bend_vox * zn * zn;
        (scale, cxz)
    }

    /// Region of a point, with the outer surface optionally shrunk by
    /// the angle-graded fixed-view erosion.
    fn classify(&self, x: f64, y: f64, z: f64, eroded: bool) -> Region {
        let s = &self.spec;
        let (scale, cxz) = self.section(z);
        let xr = (x - cxz) / scale;
        let yr = (y - self.cy) / scale;
        let r = xr.hypot(yr);
        let base = self.radius_at(f64::atan2(yr, xr));
        let phi = f64::atan2(yr, xr);

        let erosion = if eroded {
            s.erosion_base + s.erosion_gradient * phi.sin()
        } else {
            0.0
        };
        let outer = base * (1.0 + self.bump_at(phi, z)) - erosion;
        if r > outer {
            return Region::Outside;
        }
        if r < self.inner_radius_at(phi, z) {
            Region::Marrow
        } else {
            Region::Wall
        }
    }

    fn in_feature(&self, x: f64, y: f64, z: f64) -> bool {
        let bucket = (z.floor().max(0.0) as usize).min(self.lacuna_buckets.len() - 1);
        for &i in &self.lacuna_buckets[bucket] {
            let l = &self.lacunae[i as usize];
            let dx = (x - l.c[0]) / l.r[0];
            let dy = (y - l.c[1]) / l.r[1];
            let dz = (z - l.c[2]) / l.r[2];
            if dx * dx + dy * dy + dz * dz <= 1.0 {
                return true;
            }
        }
        let (scale, cxz) = self.section(z);
        let xr = (x - cxz) / scale;
        let yr = (y - self.cy) / scale;
        let r2 = self.spec.canal_radius * self.spec.canal_radius;
        self.tubes.iter().any(|t| {
            let (tx, ty) = (t[1] * t[0].cos(), t[1] * t[0].sin());
            (xr - tx).powi(2) + (yr - ty).powi(2) <= r2
        })
    }

    fn place_bumps(&mut self) {
        let s = self.spec.clone();
        let nz = s.dims[2];
        let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
        rng.set_stream(5);
        for j in 0..s.surface_bump_count {
            let bump = Bump {
                phi: rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI),
                z: rng.gen_range(0.0..nz as f64),
                sigma: rng.gen_range(2.5..5.0),
                amp: s.surface_bump_amplitude
                    * rng.gen_range(0.6..1.0)
                    * if j % 2 == 0 { 1.0 } else { -1.0 },
            };
            let z_lo = ((bump.z - 3.0 * bump.sigma).floor().max(0.0)) as usize;
            let z_hi = ((bump.z + 3.0 * bump.sigma).ceil() as usize).min(nz - 1);
            for b in z_lo..=z_hi {
                self.bump_buckets[b].push(j as u16);
            }
            self.bumps.push(bump);
        }
    }

    fn place_inner_bumps(&mut self) {
        let s = self.spec.clone();
        let nz = s.dims[2];
        let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
        rng.set_stream(6);
        for j in 0..s.inner_bump_count {
            let bump = Bump {
                phi: rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI),
                z: rng.gen_range(0.0..nz as f64),
                sigma: rng.gen_range(3.0..6.0),
                amp: s.inner_bump_amplitude
                    * rng.gen_range(0.6..1.0)
                    * if j % 2 == 0 { 1.0 } else { -1.0 },
            };
            let z_lo = ((bump.z - 3.0 * bump.sigma).floor().max(0.0)) as usize;
            let z_hi = ((bump.z + 3.0 * bump.sigma).ceil() as usize).min(nz - 1);
            for b in z_lo..=z_hi {
                self.inner_bump_buckets[b].push(j as u16);
            }
            self.inner_bumps.push(bump);
        }
    }

    fn place_lacunae(&mut self) -> Result<()> {
        let s = self.spec.clone();
        let nz = s.dims[2];
        let (r_lo, r_hi) = s.lacuna_radius_range;
        let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
        rng.set_stream(1);

        let mut attempts = 0;
        while self.lacunae.len() < s.lacuna_count && attempts < 50_000 {
            attempts += 1;
            let z = rng.gen_range(6.0..nz as f64 - 7.0);
            let phi = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
            let r = [
                rng.gen_range(r_lo..r_hi),
                rng.gen_range(r_lo..r_hi),
                rng.gen_range(r_lo..r_hi),
            ];
            let m = r[0].max(r[1]).max(r[2]) + 0.3;

            // radial band that keeps the whole ellipsoid inside the
            // (uneroded) wall across its whole z extent, since both
            // boundaries are wavy in z
            let base = self.radius_at(phi);
            let zs = [z - r[2], z, z + r[2]];
            let lo = zs
                .iter()
                .map(|&zz| self.inner_radius_at(phi, zz))
                .fold(f64::MIN, f64::max)
                + m;
            let hi = zs
                .iter()
                .map(|&zz| base * (1.0 + self.bump_at(phi, zz)))
                .fold(f64::MAX, f64::min)
                - m;
            if hi <= lo {
                continue;
            }
            let rad = rng.gen_range(lo..hi);

            let (scale, cxz) = self.section(z);
            let c = [
                cxz + rad * phi.cos() * scale,
                self.cy + rad * phi.sin() * scale,
                z,
            ];
            let spacing2 = s.lacuna_min_spacing * s.lacuna_min_spacing;
            if self.lacunae.iter().any(|l| {
                let d = [c[0] - l.c[0], c[1] - l.c[1], c[2] - l.c[2]];
                d[0] * d[0] + d[1] * d[1] + d[2] * d[2] < spacing2
            }) {
                continue;
            }

            let idx = self.lacunae.len() as u16;
            let z_lo = ((c[2] - r[2] - 0.5).floor().max(0.0)) as usize;
            let z_hi = ((c[2] + r[2] + 0.5).ceil() as usize).min(nz - 1);
            for bucket in z_lo..=z_hi {
                self.lacuna_buckets[bucket].push(idx);
            }
            self.lacunae.push(Lacuna { c, r });
        }
        if self.lacunae.len() < 10 {
            return Err(Error::SpecInfeasible(format!(
                "only {} of {} cavities placed",
                self.lacunae.len(),
                s.lacuna_count
            )));
        }
        Ok(())
    }

    fn place_haze(&mut self) {
        let s = &self.spec;
        let nz = s.dims[2];
        let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
        rng.set_stream(2);
        let spread = s.shell_radius * 1.4;
        for _ in 0..6 {
            self.haze.push(HazeBlob {
                c: [
                    self.cx + rng.gen_range(-spread..spread),
                    self.cy + rng.gen_range(-spread..spread),
                    rng.gen_range(0.0..nz as f64),
                ],
                sigma: rng.gen_range(8.0..15.0),
                amp: s.haze_amplitude * rng.gen_range(0.5..1.0),
            });
        }
    }

    fn haze_at(&self, x: f64, y: f64, z: f64) -> f32 {
        let mut v = 0.0;
        for h in &self.haze {
            let d2 = (x - h.c[0]).powi(2) + (y - h.c[1]).powi(2) + (z - h.c[2]).powi(2);
            v += h.amp * (-d2 / (2.0 * h.sigma * h.sigma)).exp();
        }
        v as f32
    }

    /// Mineral-density banding in material coordinates. Both views sample
    /// it at the same material point, so it is a shared texture that pins
    /// the alignment along the otherwise smooth axis; the incommensurate
    /// wavelengths make its autocorrelation collapse within a few voxels
    /// and stay low across the whole frame.
    fn band_at(&self, x: f64, y: f64, z: f64) -> f64 {
        let tau = std::f64::consts::TAU;
        0.42 * (tau * z / 5.1 + 0.8 * (tau * y / 19.0).sin()).sin()
            + 0.36 * (tau * z / 7.3 + 0.8 * (tau * x / 17.0).sin()).sin()
            + 0.24 * (tau * z / 9.7 + 0.8 * (tau * (x + y) / 23.0).sin()).sin()
            + 0.18 * (tau * z / 12.7 + 0.8 * (tau * (x - y) / 15.0).sin()).sin()
    }

    fn value(&self, x: f64, y: f64, z: f64, modality: &Modality) -> f32 {
        let eroded = matches!(modality, Modality::LsfmFixed);
        if eroded && y < self.crop_y {
            return 0.0;
        }
        let region = self.classify(x, y, z, eroded);
        let base = match (region, modality) {
            (Region::Outside, _) => return 0.0,
            (Region::Marrow, Modality::Xrm) => XRM_MARROW,
            (Region::Marrow, Modality::LsfmFixed) => LSFM_MARROW,
            (Region::Wall, m) => {
                if self.in_feature(x, y, z) {
                    match m {
                        Modality::Xrm => XRM_FEATURE,
                        Modality::LsfmFixed => LSFM_FEATURE,
                    }
                } else {
                    let band = self.band_at(x, y, z);
                    match m {
                        Modality::Xrm => XRM_WALL * (1.0 + XRM_BAND * band) as f32,
                        Modality::LsfmFixed => LSFM_WALL * (1.0 + LSFM_BAND * band) as f32,
                    }
                }
            }
        };
        if eroded {
            base + self.haze_at(x, y, z)
        } else {
            base
        }
    }
}

/// One standard normal via Box-Muller; consumes two uniforms.
fn next_normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen();
    let u2: f64 = rng.gen();
    (-2.0 * (1.0 - u1).ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Additive noise on the support only: the background stays exactly
/// zero, so masks recovered by thresholding above zero are clean.
fn add_support_noise(v: &mut Volume, sigma: f64, rng: &mut ChaCha8Rng) {
    if sigma <= 0.0 {
        return;
    }
    for d in v.data.iter_mut() {
        if *d > 0.0 {
            *d = (*d + (sigma * next_normal(rng)) as f32).clamp(0.0, 255.0);
        }
    }
}

pub fn generate_phantom(spec: &PhantomSpec) -> Result<Phantom> {
    let scene = Scene::build(spec)?;
    let [nx, ny, _] = spec.dims;
    let gt = random_pretransform(spec.seed, spec.dims, spec.max_translation_vox);
    let vxl = [spec.voxel_size_um; 3];

    let mut fixed = Volume::zeros(spec.dims, vxl);
    fixed
        .data
        .par_chunks_mut(nx * ny)
        .enumerate()
        .for_each(|(z, slab)| {
            for y in 0..ny {
                for x in 0..nx {
                    slab[x + nx * y] =
                        scene.value(x as f64, y as f64, z as f64, &Modality::LsfmFixed);
                }
            }
        });

    let mut moving = Volume::zeros(spec.dims, vxl);
    moving
        .data
        .par_chunks_mut(nx * ny)
        .enumerate()
        .for_each(|(z, slab)| {
            for y in 0..ny {
                for x in 0..nx {
                    let p = gt.apply_point(Point3::new(x as f64, y as f64, z as f64));
                    slab[x + nx * y] = scene.value(p.x, p.y, p.z, &Modality::Xrm);
                }
            }
        });

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(3);
    add_support_noise(&mut moving, spec.noise_sigma, &mut rng);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(4);
    add_support_noise(&mut fixed, spec.noise_sigma, &mut rng);

    let gt_inv = gt.invert();
    let fixed_lm: Vec<Point3> = scene
        .lacunae
        .iter()
        .map(|l| Point3::new(l.c[0], l.c[1], l.c[2]))
        .collect();
    let moving_lm: Vec<Point3> = fixed_lm.iter().map(|p| gt_inv.apply_point(*p)).collect();

    Ok(Phantom {
        fixed,
        moving,
        gt,
        landmarks: LandmarkSet::new(moving_lm, fixed_lm, spec.voxel_size_um)?,
    })
}
