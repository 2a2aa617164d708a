//! Real-input 3-D FFT on the x-fastest volume layout.
//!
//! The x axis uses a real-to-complex transform (half spectrum,
//! nx/2 + 1 bins); y and z run complex passes over gathered column
//! blocks, which keeps memory traffic local without a transposed
//! scratch copy of the whole grid.

use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use std::sync::Arc;

/// Columns gathered per strided pass; adjacent x keeps reads within a
/// few cache lines.
const BLOCK: usize = 16;

/// Smallest size >= n whose prime factors are all 2, 3 or 5.
pub fn good_size(n: usize) -> usize {
    let mut m = n.max(1);
    'outer: loop {
        let mut r = m;
        for p in [2, 3, 5] {
            while r % p == 0 {
                r /= p;
            }
        }
        if r == 1 {
            return m;
        }
        m += 1;
        continue 'outer;
    }
}

pub struct Fft3 {
    dims: [usize; 3],
    nxc: usize,
    r2c: Arc<dyn RealToComplex<f64>>,
    c2r: Arc<dyn ComplexToReal<f64>>,
    fwd_y: Arc<dyn Fft<f64>>,
    inv_y: Arc<dyn Fft<f64>>,
    fwd_z: Arc<dyn Fft<f64>>,
    inv_z: Arc<dyn Fft<f64>>,
    real_scratch: Vec<Complex<f64>>,
    line_scratch: Vec<Complex<f64>>,
    block: Vec<Complex<f64>>,
}

impl Fft3 {
    pub fn new(dims: [usize; 3]) -> Self {
        let [nx, ny, nz] = dims;
        assert!(nx > 0 && ny > 0 && nz > 0);
        let mut rp = RealFftPlanner::<f64>::new();
        let r2c = rp.plan_fft_forward(nx);
        let c2r = rp.plan_fft_inverse(nx);
        let mut cp = FftPlanner::<f64>::new();
        let fwd_y = cp.plan_fft_forward(ny);
        let inv_y = cp.plan_fft_inverse(ny);
        let fwd_z = cp.plan_fft_forward(nz);
        let inv_z = cp.plan_fft_inverse(nz);
        let real_scratch_len = r2c.get_scratch_len().max(c2r.get_scratch_len());
        let line_scratch_len = fwd_y
            .get_inplace_scratch_len()
            .max(inv_y.get_inplace_scratch_len())
            .max(fwd_z.get_inplace_scratch_len())
            .max(inv_z.get_inplace_scratch_len());
        Self {
            dims,
            nxc: nx / 2 + 1,
            r2c,
            c2r,
            fwd_y,
            inv_y,
            fwd_z,
            inv_z,
            real_scratch: vec![Complex::default(); real_scratch_len],
            line_scratch: vec![Complex::default(); line_scratch_len],
            block: vec![Complex::default(); BLOCK * ny.max(nz)],
        }
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    /// Complex elements in one spectrum.
    pub fn spectrum_len(&self) -> usize {
        self.nxc * self.dims[1] * self.dims[2]
    }

    fn pass_y(&mut self, spec: &mut [Complex<f64>], forward: bool) {
        let [_, ny, nz] = self.dims;
        let nxc = self.nxc;
        let plan = if forward { &self.fwd_y } else { &self.inv_y };
        for z in 0..nz {
            let base_z = nxc * ny * z;
            let mut x0 = 0;
            while x0 < nxc {
                let w = BLOCK.min(nxc - x0);
                for j in 0..ny {
                    let row = base_z + nxc * j + x0;
                    for b in 0..w {
                        self.block[b * ny + j] = spec[row + b];
                    }
                }
                for b in 0..w {
                    plan.process_with_scratch(
                        &mut self.block[b * ny..(b + 1) * ny],
                        &mut self.line_scratch,
                    );
                }
                for j in 0..ny {
                    let row = base_z + nxc * j + x0;
                    for b in 0..w {
                        spec[row + b] = self.block[b * ny + j];
                    }
                }
                x0 += w;
            }
        }
    }

    fn pass_z(&mut self, spec: &mut [Complex<f64>], forward: bool) {
        let [_, ny, nz] = self.dims;
        let nxc = self.nxc;
        let plan = if forward { &self.fwd_z } else { &self.inv_z };
        let stride = nxc * ny;
        for y in 0..ny {
            let base_y = nxc * y;
            let mut x0 = 0;
            while x0 < nxc {
                let w = BLOCK.min(nxc - x0);
                for k in 0..nz {
                    let row = base_y + stride * k + x0;
                    for b in 0..w {
                        self.block[b * nz + k] = spec[row + b];
                    }
                }
                for b in 0..w {
                    plan.process_with_scratch(
                        &mut self.block[b * nz..(b + 1) * nz],
                        &mut self.line_scratch,
                    );
                }
                for k in 0..nz {
                    let row = base_y + stride * k + x0;
                    for b in 0..w {
                        spec[row + b] = self.block[b * nz + k];
                    }
                }
                x0 += w;
            }
        }
    }

    /// Real grid -> half spectrum. The input buffer is clobbered.
    pub fn forward(&mut self, real: &mut [f64], spec: &mut [Complex<f64>]) {
        let [nx, ny, nz] = self.dims;
        assert_eq!(real.len(), nx * ny * nz);
        assert_eq!(spec.len(), self.spectrum_len());
        for line in 0..ny * nz {
            self.r2c
                .process_with_scratch(
                    &mut real[line * nx..(line + 1) * nx],
                    &mut spec[line * self.nxc..(line + 1) * self.nxc],
                    &mut self.real_scratch,
                )
                .expect("r2c lengths are planned");
        }
        self.pass_y(spec, true);
        self.pass_z(spec, true);
    }

    /// Half spectrum -> real grid, normalized so that
    /// forward followed by inverse is the identity. The spectrum is
    /// clobbered.
    pub fn inverse(&mut self, spec: &mut [Complex<f64>], real: &mut [f64]) {
        let [nx, ny, nz] = self.dims;
        assert_eq!(real.len(), nx * ny * nz);
        assert_eq!(spec.len(), self.spectrum_len());
        self.pass_z(spec, false);
        self.pass_y(spec, false);
        let nxc = self.nxc;
        let has_nyquist = nx % 2 == 0;
        for line in 0..ny * nz {
            let s = &mut spec[line * nxc..(line + 1) * nxc];
            // The DC bin (and for even lengths the Nyquist bin) is
            // mathematically real; scrub rounding residue so the
            // half-spectrum inverse accepts it. For odd lengths the
            // last bin is an ordinary complex bin and must be kept.
            s[0].im = 0.0;
            if has_nyquist {
                s[nxc - 1].im = 0.0;
            }
            self.c2r
                .process_with_scratch(
                    s,
                    &mut real[line * nx..(line + 1) * nx],
                    &mut self.real_scratch,
                )
                .expect("c2r lengths are planned");
        }
        let scale = 1.0 / (nx * ny * nz) as f64;
        for v in real.iter_mut() {
            *v *= scale;
        }
    }
}

/// b <- a * conj(b), elementwise. With a = F(f) and b = F(g) the
/// inverse transform of b is the linear cross-correlation
/// c(s) = sum_x f(x) g(x - s) (given enough zero padding).
pub fn mul_conj_into(a: &[Complex<f64>], b: &mut [Complex<f64>]) {
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(b.iter_mut()) {
        *y = x * y.conj();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn good_sizes_are_smooth_and_minimal() {
        assert_eq!(good_size(1), 1);
        assert_eq!(good_size(2), 2);
        assert_eq!(good_size(7), 8);
        assert_eq!(good_size(13), 15);
        assert_eq!(good_size(255), 256);
        assert_eq!(good_size(480), 480);
        assert_eq!(good_size(511), 512);
        assert_eq!(good_size(999), 1000);
    }

    #[test]
    fn forward_inverse_is_the_identity() {
        // one even and one odd x length: odd keeps a complex final bin
        for dims in [[20usize, 12, 9], [27, 6, 5]] {
            let n = dims[0] * dims[1] * dims[2];
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            let orig: Vec<f64> = (0..n).map(|_| rng.gen_range(-4.0..4.0)).collect();
            let mut fft = Fft3::new(dims);
            let mut work = orig.clone();
            let mut spec = vec![Complex::default(); fft.spectrum_len()];
            fft.forward(&mut work, &mut spec);
            let mut out = vec![0.0; n];
            fft.inverse(&mut spec, &mut out);
            for (a, b) in orig.iter().zip(&out) {
                assert!((a - b).abs() < 1e-12, "dims {dims:?}: {a} vs {b}");
            }
        }
    }

    /// Index u of the padded correlation grid holds shift u, with
    /// negative shifts wrapped to the top end.
    fn shift_index(s: i64, p: usize) -> usize {
        if s >= 0 {
            s as usize
        } else {
            (p as i64 + s) as usize
        }
    }

    #[test]
    fn fft_correlation_matches_the_direct_sum() {
        // 2*7-1 = 13 pads to 15: exercises the odd-length x path
        let (n1, n2) = ([7usize, 5, 4], [7usize, 5, 4]);
        let pad = [
            good_size(2 * n1[0] - 1),
            good_size(2 * n1[1] - 1),
            good_size(2 * n1[2] - 1),
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let f: Vec<f64> = (0..n1[0] * n1[1] * n1[2])
            .map(|_| rng.gen_range(-2.0..2.0))
            .collect();
        let g: Vec<f64> = (0..n2[0] * n2[1] * n2[2])
            .map(|_| rng.gen_range(-2.0..2.0))
            .collect();

        let embed = |src: &[f64], nd: [usize; 3]| {
            let mut out = vec![0.0; pad[0] * pad[1] * pad[2]];
            for z in 0..nd[2] {
                for y in 0..nd[1] {
                    for x in 0..nd[0] {
                        out[x + pad[0] * (y + pad[1] * z)] = src[x + nd[0] * (y + nd[1] * z)];
                    }
                }
            }
            out
        };

        let mut fft = Fft3::new(pad);
        let mut fa = embed(&f, n1);
        let mut fb = embed(&g, n2);
        let mut sa = vec![Complex::default(); fft.spectrum_len()];
        let mut sb = vec![Complex::default(); fft.spectrum_len()];
        fft.forward(&mut fa, &mut sa);
        fft.forward(&mut fb, &mut sb);
        mul_conj_into(&sa, &mut sb);
        let mut corr = vec![0.0; pad[0] * pad[1] * pad[2]];
        fft.inverse(&mut sb, &mut corr);

        let at = |v: &[f64], x: i64, y: i64, z: i64, nd: [usize; 3]| {
            if x < 0 || y < 0 || z < 0 || x >= nd[0] as i64 || y >= nd[1] as i64 || z >= nd[2] as i64
            {
                0.0
            } else {
                v[x as usize + nd[0] * (y as usize + nd[1] * z as usize)]
            }
        };

        for sz in -(n2[2] as i64 - 1)..n1[2] as i64 {
            for sy in -(n2[1] as i64 - 1)..n1[1] as i64 {
                for sx in -(n2[0] as i64 - 1)..n1[0] as i64 {
                    let mut direct = 0.0;
                    for z in 0..n1[2] as i64 {
                        for y in 0..n1[1] as i64 {
                            for x in 0..n1[0] as i64 {
                                direct += at(&f, x, y, z, n1)
                                    * at(&g, x - sx, y - sy, z - sz, n2);
                            }
                        }
                    }
                    let idx = shift_index(sx, pad[0])
                        + pad[0]
                            * (shift_index(sy, pad[1]) + pad[1] * shift_index(sz, pad[2]));
                    assert!(
                        (corr[idx] - direct).abs() < 1e-10,
                        "shift ({sx},{sy},{sz}): fft {} direct {}",
                        corr[idx],
                        direct
                    );
                }
            }
        }
    }

    #[test]
    fn impulse_correlation_lands_on_the_offset() {
        let pad = [8, 9, 5];
        let mut fft = Fft3::new(pad);
        let n = pad[0] * pad[1] * pad[2];
        let mut a = vec![0.0; n];
        let mut b = vec![0.0; n];
        // f has a spike at (3,2,1), g at (1,1,0): correlation peaks at
        // the difference (2,1,1).
        a[3 + pad[0] * (2 + pad[1])] = 1.0;
        b[1 + pad[0]] = 1.0;
        let mut sa = vec![Complex::default(); fft.spectrum_len()];
        let mut sb = vec![Complex::default(); fft.spectrum_len()];
        fft.forward(&mut a, &mut sa);
        fft.forward(&mut b, &mut sb);
        mul_conj_into(&sa, &mut sb);
        let mut corr = vec![0.0; n];
        fft.inverse(&mut sb, &mut corr);
        for z in 0..pad[2] {
            for y in 0..pad[1] {
                for x in 0..pad[0] {
                    let expected = if (x, y, z) == (2, 1, 1) { 1.0 } else { 0.0 };
                    let got = corr[x + pad[0] * (y + pad[1] * z)];
                    assert!((got - expected).abs() < 1e-12, "({x},{y},{z}) = {got}");
                }
            }
        }
    }
}
