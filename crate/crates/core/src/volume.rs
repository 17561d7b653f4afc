//! Dense 3D scalar fields and the `VLM1` volume file format.
//!
//! Voxel centers sit at integer coordinates, axis 2 is fastest in memory and
//! the physical position of voxel `i` is `i * spacing` (origin at voxel 0).
//!
//! File layout (little-endian): magic `VLM1`, version `u32 = 1`, dims
//! `3 x u32`, spacing `3 x f32`, then `d0*d1*d2` `f32` voxels.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const VOLUME_MAGIC: &[u8; 4] = b"VLM1";
pub const VOLUME_VERSION: u32 = 1;
const HEADER_BYTES: usize = 4 + 4 + 12 + 12;

#[derive(Clone, Debug, PartialEq)]
pub struct Volume<T> {
    dims: [usize; 3],
    spacing: [f32; 3],
    data: Vec<T>,
}

impl<T: Scalar> Volume<T> {
    pub fn new(dims: [usize; 3], spacing: [f32; 3], data: Vec<T>) -> Result<Self> {
        check_dims(dims)?;
        if !spacing.iter().all(|s| *s > 0.0 && s.is_finite()) {
            return Err(Error::NonPositiveSpacing(spacing));
        }
        let expected = dims[0] * dims[1] * dims[2];
        if data.len() != expected {
            return Err(Error::DataLength { expected, found: data.len() });
        }
        Ok(Self { dims, spacing, data })
    }

    pub fn zeros(dims: [usize; 3]) -> Self {
        Self::filled(dims, T::zero())
    }

    pub fn filled(dims: [usize; 3], value: T) -> Self {
        assert!(dims.iter().all(|&d| d > 0), "dims must be positive");
        Self { dims, spacing: [1.0; 3], data: vec![value; dims[0] * dims[1] * dims[2]] }
    }

    /// Builds a volume by evaluating `f` at every voxel index.
    pub fn from_fn(dims: [usize; 3], mut f: impl FnMut([usize; 3]) -> T) -> Self {
        assert!(dims.iter().all(|&d| d > 0), "dims must be positive");
        let mut data = Vec::with_capacity(dims[0] * dims[1] * dims[2]);
        for i0 in 0..dims[0] {
            for i1 in 0..dims[1] {
                for i2 in 0..dims[2] {
                    data.push(f([i0, i1, i2]));
                }
            }
        }
        Self { dims, spacing: [1.0; 3], data }
    }

    pub fn with_spacing(mut self, spacing: [f32; 3]) -> Result<Self> {
        if !spacing.iter().all(|s| *s > 0.0 && s.is_finite()) {
            return Err(Error::NonPositiveSpacing(spacing));
        }
        self.spacing = spacing;
        Ok(self)
    }

    /// Same geometry, new data. Panics if the length differs.
    pub fn with_data(&self, data: Vec<T>) -> Self {
        assert_eq!(data.len(), self.data.len(), "data length must match dims");
        Self { dims: self.dims, spacing: self.spacing, data }
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f32; 3] {
        self.spacing
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn index(&self, i: [usize; 3]) -> usize {
        linear_index(self.dims, i)
    }

    /// Inverse of [`Volume::index`].
    #[inline]
    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let [_, d1, d2] = self.dims;
        [idx / (d1 * d2), (idx / d2) % d1, idx % d2]
    }

    #[inline]
    pub fn get(&self, i: [usize; 3]) -> T {
        self.data[self.index(i)]
    }

    #[inline]
    pub fn set(&mut self, i: [usize; 3], v: T) {
        let idx = self.index(i);
        self.data[idx] = v;
    }

    /// Value at a signed index, zero outside the field.
    #[inline]
    pub fn get_or_zero(&self, i: [isize; 3]) -> T {
        let d = self.dims;
        if i[0] < 0 || i[1] < 0 || i[2] < 0 {
            return T::zero();
        }
        let (a, b, c) = (i[0] as usize, i[1] as usize, i[2] as usize);
        if a >= d[0] || b >= d[1] || c >= d[2] {
            return T::zero();
        }
        self.data[(a * d[1] + b) * d[2] + c]
    }

    /// Trilinear interpolation at continuous voxel coordinates; voxels outside
    /// the field contribute zero.
    pub fn sample_trilinear(&self, p: [f64; 3]) -> f64 {
        let d = self.dims;
        for a in 0..3 {
            if !(p[a] > -1.0 && p[a] < d[a] as f64) {
                return 0.0;
            }
        }
        let f0 = p[0].floor();
        let f1 = p[1].floor();
        let f2 = p[2].floor();
        let (t0, t1, t2) = (p[0] - f0, p[1] - f1, p[2] - f2);
        let (b0, b1, b2) = (f0 as isize, f1 as isize, f2 as isize);
        // Exact lattice hits return the stored value untouched.
        if t0 == 0.0 && t1 == 0.0 && t2 == 0.0 {
            return self.get_or_zero([b0, b1, b2]).f64();
        }
        let mut acc = 0.0;
        for (o0, w0) in [(0, 1.0 - t0), (1, t0)] {
            if w0 == 0.0 {
                continue;
            }
            for (o1, w1) in [(0, 1.0 - t1), (1, t1)] {
                if w1 == 0.0 {
                    continue;
                }
                for (o2, w2) in [(0, 1.0 - t2), (1, t2)] {
                    if w2 == 0.0 {
                        continue;
                    }
                    acc += w0 * w1 * w2 * self.get_or_zero([b0 + o0, b1 + o1, b2 + o2]).f64();
                }
            }
        }
        acc
    }

    pub fn min_max(&self) -> (T, T) {
        self.data.iter().fold((T::infinity(), T::neg_infinity()), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        })
    }

    /// Sum with a 64-bit accumulator.
    pub fn sum(&self) -> f64 {
        self.data.iter().map(|v| v.f64()).sum()
    }

    /// Index of the first maximum.
    pub fn argmax(&self) -> [usize; 3] {
        let mut best = 0;
        for (i, v) in self.data.iter().enumerate() {
            if *v > self.data[best] {
                best = i;
            }
        }
        self.coords(best)
    }

    pub fn first_non_finite(&self) -> Option<usize> {
        self.data.iter().position(|v| !v.is_finite())
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        self.with_data(self.data.iter().map(|&v| f(v)).collect())
    }

    /// Converts the voxel type, keeping geometry.
    pub fn cast<U: Scalar>(&self) -> Volume<U> {
        Volume {
            dims: self.dims,
            spacing: self.spacing,
            data: self.data.iter().map(|v| U::of(v.f64())).collect(),
        }
    }

    /// Physical position in mm of a continuous voxel coordinate.
    pub fn voxel_to_mm(&self, p: [f64; 3]) -> [f64; 3] {
        voxel_to_mm(p, self.spacing)
    }
}

/// `i0*d1*d2 + i1*d2 + i2`
#[inline]
pub fn linear_index(dims: [usize; 3], i: [usize; 3]) -> usize {
    (i[0] * dims[1] + i[1]) * dims[2] + i[2]
}

pub fn voxel_to_mm(p: [f64; 3], spacing: [f32; 3]) -> [f64; 3] {
    [p[0] * spacing[0] as f64, p[1] * spacing[1] as f64, p[2] * spacing[2] as f64]
}

fn check_dims(dims: [usize; 3]) -> Result<()> {
    if dims.iter().any(|&d| d == 0) {
        return Err(Error::NonPositiveDims(dims));
    }
    Ok(())
}

pub type Volume3 = Volume<f32>;

pub fn encode_volume(v: &Volume3) -> Result<Vec<u8>> {
    if let Some(i) = v.first_non_finite() {
        return Err(Error::NonFinite(i));
    }
    let mut out = Vec::with_capacity(HEADER_BYTES + 4 * v.len());
    out.extend_from_slice(VOLUME_MAGIC);
    out.extend_from_slice(&VOLUME_VERSION.to_le_bytes());
    for d in v.dims {
        let d = u32::try_from(d).map_err(|_| Error::InvalidParameter(format!("dim {d} exceeds u32")))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    for s in v.spacing {
        out.extend_from_slice(&s.to_le_bytes());
    }
    for x in &v.data {
        out.extend_from_slice(&x.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_volume(bytes: &[u8], path: &Path) -> Result<Volume3> {
    if bytes.len() < 4 || &bytes[..4] != VOLUME_MAGIC {
        return Err(Error::BadMagic { path: path.to_path_buf(), expected: "VLM1" });
    }
    if bytes.len() < HEADER_BYTES {
        return Err(Error::TruncatedFile { expected: HEADER_BYTES, found: bytes.len() });
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let f32_at = |o: usize| f32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let version = u32_at(4);
    if version != VOLUME_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let dims = [u32_at(8) as usize, u32_at(12) as usize, u32_at(16) as usize];
    check_dims(dims)?;
    let spacing = [f32_at(20), f32_at(24), f32_at(28)];
    let n = dims[0]
        .checked_mul(dims[1])
        .and_then(|x| x.checked_mul(dims[2]))
        .ok_or(Error::NonPositiveDims(dims))?;
    let expected = HEADER_BYTES + 4 * n;
    if bytes.len() < expected {
        return Err(Error::TruncatedFile { expected, found: bytes.len() });
    }
    let data = bytes[HEADER_BYTES..expected]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Volume::new(dims, spacing, data)
}

pub fn write_volume(v: &Volume3, path: impl AsRef<Path>) -> Result<()> {
    let bytes = encode_volume(v)?;
    fs::write(path, bytes)?;
    Ok(())
}

pub fn read_volume(path: impl AsRef<Path>) -> Result<Volume3> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    decode_volume(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_2x2x2() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.vlm");
        let v = Volume::new([2, 2, 2], [1.0, 1.0, 1.0], vec![1.0f32; 8]).unwrap();
        write_volume(&v, &path).unwrap();
        let back = read_volume(&path).unwrap();
        assert_eq!(back, v);
    }

    #[test]
    fn file_size_matches_layout() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.vlm");
        let v = Volume::new([2, 2, 2], [2.2, 1.0, 1.0], vec![0.5f32; 8]).unwrap();
        write_volume(&v, &path).unwrap();
        // magic + version + dims + spacing + 8 voxels
        assert_eq!(fs::metadata(&path).unwrap().len(), 4 + 4 + 12 + 12 + 8 * 4);
    }

    #[test]
    fn axis2_is_fastest() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.vlm");
        let mut v = Volume3::zeros([3, 3, 3]);
        v.set([0, 0, 1], 5.0);
        write_volume(&v, &path).unwrap();
        let back = read_volume(&path).unwrap();
        assert_eq!(back.data()[1], 5.0);
        // i0*d1*d2 + i1*d2 + i2 for (1,2,0) in 3x3x3 = 9 + 6 = 15
        assert_eq!(back.index([1, 2, 0]), 15);
        assert_eq!(back.coords(15), [1, 2, 0]);
    }

    #[test]
    fn identical_volumes_write_identical_bytes() {
        let v = Volume3::from_fn([3, 4, 5], |[a, b, c]| (a * 20 + b * 5 + c) as f32 * 0.1);
        assert_eq!(encode_volume(&v).unwrap(), encode_volume(&v.clone()).unwrap());
    }

    #[test]
    fn bad_magic_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.vlm");
        let mut bytes = encode_volume(&Volume3::zeros([2, 2, 2])).unwrap();
        bytes[..4].copy_from_slice(b"XXXX");
        fs::write(&path, bytes).unwrap();
        assert!(matches!(read_volume(&path), Err(Error::BadMagic { .. })));
    }

    #[test]
    fn truncated_rejected() {
        let bytes = encode_volume(&Volume3::zeros([2, 2, 2])).unwrap();
        let r = decode_volume(&bytes[..bytes.len() - 1], Path::new("t"));
        assert!(matches!(r, Err(Error::TruncatedFile { .. })));
    }

    #[test]
    fn zero_dims_rejected() {
        let mut bytes = encode_volume(&Volume3::zeros([2, 2, 2])).unwrap();
        bytes[8..12].copy_from_slice(&0u32.to_le_bytes());
        let r = decode_volume(&bytes, Path::new("t"));
        assert!(matches!(r, Err(Error::NonPositiveDims(_))));
    }

    #[test]
    fn nan_rejected_before_writing() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.vlm");
        let mut v = Volume3::zeros([2, 2, 2]);
        v.set([1, 1, 1], f32::NAN);
        assert!(matches!(write_volume(&v, &path), Err(Error::NonFinite(7))));
        assert!(!path.exists());
    }

    #[test]
    fn mm_position_is_index_times_spacing() {
        let v = Volume3::zeros([4, 4, 4]).with_spacing([2.2, 1.0, 0.5]).unwrap();
        let mm = v.voxel_to_mm([3.0, 2.0, 1.0]);
        assert!((mm[0] - 6.6).abs() < 1e-6);
        assert_eq!(mm[1], 2.0);
        assert_eq!(mm[2], 0.5);
    }

    #[test]
    fn trilinear_on_lattice_and_between() {
        let v = Volume3::from_fn([2, 2, 2], |[a, _, _]| a as f32);
        assert_eq!(v.sample_trilinear([1.0, 0.0, 1.0]), 1.0);
        assert!((v.sample_trilinear([0.25, 0.5, 0.5]) - 0.25).abs() < 1e-12);
        // half outside: neighbour beyond the field counts as zero
        assert!((v.sample_trilinear([1.5, 0.0, 0.0]) - 0.5).abs() < 1e-12);
        assert_eq!(v.sample_trilinear([-1.0, 0.0, 0.0]), 0.0);
    }

    #[test]
    fn bad_spacing_rejected() {
        assert!(Volume::new([1, 1, 1], [0.0, 1.0, 1.0], vec![0.0f32]).is_err());
    }
}
