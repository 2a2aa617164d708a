//! Dense 3D volumes, binary masks, and the preprocessing operations the
//! registration pipeline is built from.

mod filter;
mod io;
mod morphology;
mod resample;

pub use filter::{gaussian_blur, unsharp_mask};
pub use io::{load_volume, save_volume};
pub use morphology::{
    binary_closing_2d, fill_holes_2d, fill_holes_3d, outline_2d,
};
pub use resample::{resample_rigid, resample_to, Interpolation};

use crate::error::{Error, Result};

/// Dense scalar grid, x-fastest layout, voxel sizes in micrometers.
#[derive(Clone, Debug, PartialEq)]
pub struct Volume {
    pub dims: [usize; 3],
    pub voxel_size: [f64; 3],
    pub data: Vec<f32>,
}

/// Boolean grid sharing the [`Volume`] dims contract.
#[derive(Clone, Debug, PartialEq)]
pub struct BinaryMask {
    pub dims: [usize; 3],
    pub bits: Vec<bool>,
}

impl Volume {
    pub fn zeros(dims: [usize; 3], voxel_size: [f64; 3]) -> Self {
        Self {
            dims,
            voxel_size,
            data: vec![0.0; dims[0] * dims[1] * dims[2]],
        }
    }

    pub fn from_data(dims: [usize; 3], voxel_size: [f64; 3], data: Vec<f32>) -> Result<Self> {
        if data.len() != dims[0] * dims[1] * dims[2] {
            return Err(Error::Format(format!(
                "data length {} does not match dims {:?}",
                data.len(),
                dims
            )));
        }
        if voxel_size.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::InvalidParameter(format!(
                "voxel size must be positive, got {voxel_size:?}"
            )));
        }
        Ok(Self {
            dims,
            voxel_size,
            data,
        })
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> f32 {
        self.data[self.index(x, y, z)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, z: usize, v: f32) {
        let i = self.index(x, y, z);
        self.data[i] = v;
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn min_max(&self) -> (f32, f32) {
        let mut lo = f32::INFINITY;
        let mut hi = f32::NEG_INFINITY;
        for &v in &self.data {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        (lo, hi)
    }

    /// Center the volume inside `target` dims, new voxels zero.
    /// The source origin lands at `pad_offset`.
    pub fn pad_to(&self, target: [usize; 3]) -> Result<Volume> {
        if (0..3).any(|a| target[a] < self.dims[a]) {
            return Err(Error::DimsTooSmall {
                actual: self.dims,
                target,
            });
        }
        let off = pad_offset(self.dims, target);
        let mut out = Volume::zeros(target, self.voxel_size);
        for z in 0..self.dims[2] {
            for y in 0..self.dims[1] {
                let src = self.index(0, y, z);
                let dst = out.index(off[0], y + off[1], z + off[2]);
                out.data[dst..dst + self.dims[0]]
                    .copy_from_slice(&self.data[src..src + self.dims[0]]);
            }
        }
        Ok(out)
    }

    /// Inverse of [`Self::pad_to`] given the recorded offset.
    pub fn crop(&self, offset: [usize; 3], dims: [usize; 3]) -> Result<Volume> {
        if (0..3).any(|a| offset[a] + dims[a] > self.dims[a]) {
            return Err(Error::InvalidParameter(format!(
                "crop {offset:?}+{dims:?} exceeds {:?}",
                self.dims
            )));
        }
        let mut out = Volume::zeros(dims, self.voxel_size);
        for z in 0..dims[2] {
            for y in 0..dims[1] {
                let src = self.index(offset[0], y + offset[1], z + offset[2]);
                let dst = out.index(0, y, z);
                out.data[dst..dst + dims[0]].copy_from_slice(&self.data[src..src + dims[0]]);
            }
        }
        Ok(out)
    }

    /// Affine map of [min, max] onto [0, 255].
    pub fn normalize_0_255(&self) -> Result<Volume> {
        let (lo, hi) = self.min_max();
        if !(hi > lo) {
            return Err(Error::ConstantVolume);
        }
        let scale = 255.0 / (hi as f64 - lo as f64);
        let mut out = self.clone();
        for v in &mut out.data {
            *v = ((*v as f64 - lo as f64) * scale) as f32;
        }
        Ok(out)
    }

    /// 255 − v, element-wise. Assumes a [0,255] intensity range.
    pub fn invert_intensity(&self) -> Volume {
        let mut out = self.clone();
        for v in &mut out.data {
            *v = 255.0 - *v;
        }
        out
    }

    pub fn threshold(&self, tau: f32, strict: bool) -> BinaryMask {
        let bits = if strict {
            self.data.iter().map(|&v| v > tau).collect()
        } else {
            self.data.iter().map(|&v| v >= tau).collect()
        };
        BinaryMask {
            dims: self.dims,
            bits,
        }
    }

    /// Element-wise product with a mask: outside voxels become 0.
    pub fn mask_apply(&self, m: &BinaryMask) -> Result<Volume> {
        if m.dims != self.dims {
            return Err(Error::DimsMismatch(self.dims, m.dims));
        }
        let mut out = self.clone();
        for (v, &keep) in out.data.iter_mut().zip(&m.bits) {
            if !keep {
                *v = 0.0;
            }
        }
        Ok(out)
    }
}

/// Centering offset used by [`Volume::pad_to`].
pub fn pad_offset(source: [usize; 3], target: [usize; 3]) -> [usize; 3] {
    [
        (target[0] - source[0]) / 2,
        (target[1] - source[1]) / 2,
        (target[2] - source[2]) / 2,
    ]
}

impl BinaryMask {
    pub fn new_false(dims: [usize; 3]) -> Self {
        Self {
            dims,
            bits: vec![false; dims[0] * dims[1] * dims[2]],
        }
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> bool {
        self.bits[self.index(x, y, z)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, z: usize, v: bool) {
        let i = self.index(x, y, z);
        self.bits[i] = v;
    }

    pub fn count_true(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(dims: [usize; 3]) -> Volume {
        let n = dims[0] * dims[1] * dims[2];
        Volume::from_data(dims, [1.0; 3], (0..n).map(|i| i as f32).collect()).unwrap()
    }

    #[test]
    fn from_data_checks_length() {
        assert!(matches!(
            Volume::from_data([2, 2, 2], [1.0; 3], vec![0.0; 9]),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn pad_preserves_content_and_centers() {
        let v = Volume::from_data([2, 2, 2], [1.0; 3], vec![1.0; 8]).unwrap();
        let p = v.pad_to([4, 4, 4]).unwrap();
        assert_eq!(p.data.iter().sum::<f32>(), 8.0);
        assert_eq!(p.get(0, 0, 0), 0.0);
        assert_eq!(p.get(1, 1, 1), 1.0);
        assert_eq!(p.get(2, 2, 2), 1.0);
        // Same dims is the identity.
        assert_eq!(v.pad_to([2, 2, 2]).unwrap(), v);
        // Too-small target is rejected.
        assert!(v.pad_to([1, 4, 4]).is_err());
    }

    #[test]
    fn pad_then_crop_is_identity() {
        let v = ramp([3, 4, 5]);
        let p = v.pad_to([7, 8, 9]).unwrap();
        let off = pad_offset([3, 4, 5], [7, 8, 9]);
        assert_eq!(p.crop(off, [3, 4, 5]).unwrap(), v);
    }

    #[test]
    fn normalize_cases() {
        let already = Volume::from_data([2, 1, 1], [1.0; 3], vec![0.0, 255.0]).unwrap();
        assert_eq!(already.normalize_0_255().unwrap().data, vec![0.0, 255.0]);

        let two = Volume::from_data([2, 1, 1], [1.0; 3], vec![10.0, 20.0]).unwrap();
        assert_eq!(two.normalize_0_255().unwrap().data, vec![0.0, 255.0]);

        let flat = Volume::from_data([2, 1, 1], [1.0; 3], vec![7.0, 7.0]).unwrap();
        assert!(matches!(flat.normalize_0_255(), Err(Error::ConstantVolume)));
    }

    #[test]
    fn normalize_preserves_order() {
        let v = ramp([4, 3, 2]);
        let n = v.normalize_0_255().unwrap();
        let mut sorted_in: Vec<usize> = (0..v.len()).collect();
        sorted_in.sort_by(|&a, &b| v.data[a].partial_cmp(&v.data[b]).unwrap());
        for w in sorted_in.windows(2) {
            assert!(n.data[w[0]] <= n.data[w[1]]);
        }
        let (lo, hi) = n.min_max();
        assert_eq!((lo, hi), (0.0, 255.0));
    }

    #[test]
    fn invert_intensity_cases() {
        let z = Volume::zeros([2, 2, 1], [1.0; 3]);
        assert!(z.invert_intensity().data.iter().all(|&v| v == 255.0));
        let v = Volume::from_data([1, 1, 1], [1.0; 3], vec![100.0]).unwrap();
        assert_eq!(v.invert_intensity().data[0], 155.0);
        let r = ramp([3, 3, 3]);
        assert_eq!(r.invert_intensity().invert_intensity(), r);
    }

    #[test]
    fn threshold_cases() {
        let v = ramp([4, 2, 2]);
        assert_eq!(v.threshold(-1.0, true).count_true(), v.len());
        let five = Volume::from_data([1, 1, 1], [1.0; 3], vec![5.0]).unwrap();
        assert!(!five.threshold(5.0, true).get(0, 0, 0));
        assert!(five.threshold(5.0, false).get(0, 0, 0));
        // Cardinality matches a direct scan.
        let tau = 7.5;
        let expect = v.data.iter().filter(|&&x| x > tau).count();
        assert_eq!(v.threshold(tau, true).count_true(), expect);
    }

    #[test]
    fn mask_apply_cases() {
        let v = ramp([3, 3, 1]);
        let all = v.threshold(-1.0, true);
        assert_eq!(v.mask_apply(&all).unwrap(), v);

        let none = BinaryMask::new_false([3, 3, 1]);
        assert!(v.mask_apply(&none).unwrap().data.iter().all(|&x| x == 0.0));

        let mut some = BinaryMask::new_false([3, 3, 1]);
        some.set(1, 2, 0, true);
        let masked = v.mask_apply(&some).unwrap();
        for i in 0..v.len() {
            if some.bits[i] {
                assert_eq!(masked.data[i], v.data[i]);
            } else {
                assert_eq!(masked.data[i], 0.0);
            }
        }

        let wrong = BinaryMask::new_false([2, 2, 2]);
        assert!(v.mask_apply(&wrong).is_err());
    }
}
