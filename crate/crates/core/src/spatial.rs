//! Patient-side (spatial) transforms: affine, elastic deformation and
//! anisotropic resampling.
//!
//! Images are resampled by inverse mapping with trilinear interpolation and a
//! zero fill outside the field. Points move with the forward map, so a feature
//! at `p` ends up at `T(p)`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::Volume3;

pub type Mat3 = [[f64; 3]; 3];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AffineParams {
    /// Euler angles in degrees, applied about axis 0, then 1, then 2.
    pub rotation_deg: [f64; 3],
    /// Voxels.
    pub translation: [f64; 3],
    pub scale: [f64; 3],
    /// Rotation/scale center in voxel coordinates.
    pub center: [f64; 3],
}

impl AffineParams {
    /// Identity centered on the middle of a `dims` volume.
    pub fn identity(dims: [usize; 3]) -> Self {
        Self {
            rotation_deg: [0.0; 3],
            translation: [0.0; 3],
            scale: [1.0; 3],
            center: volume_center(dims),
        }
    }

    pub fn translation(dims: [usize; 3], t: [f64; 3]) -> Self {
        Self { translation: t, ..Self::identity(dims) }
    }

    pub fn is_identity(&self) -> bool {
        self.rotation_deg == [0.0; 3] && self.translation == [0.0; 3] && self.scale == [1.0; 3]
    }

    /// Linear part `R * S` with `R = R2 * R1 * R0`.
    pub fn matrix(&self) -> Mat3 {
        let r = mat_mul(
            &rotation(2, self.rotation_deg[2]),
            &mat_mul(&rotation(1, self.rotation_deg[1]), &rotation(0, self.rotation_deg[0])),
        );
        let mut m = r;
        for row in m.iter_mut() {
            for (a, x) in row.iter_mut().enumerate() {
                *x *= self.scale[a];
            }
        }
        m
    }

    /// `(R * S)^-1 = S^-1 * R^T`
    pub fn inverse_matrix(&self) -> Result<Mat3> {
        if self.scale.iter().any(|&s| s == 0.0 || !s.is_finite()) {
            return Err(Error::InvalidParameter(format!("singular affine scale {:?}", self.scale)));
        }
        let r = mat_mul(
            &rotation(2, self.rotation_deg[2]),
            &mat_mul(&rotation(1, self.rotation_deg[1]), &rotation(0, self.rotation_deg[0])),
        );
        let mut inv = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                inv[i][j] = r[j][i] / self.scale[i];
            }
        }
        Ok(inv)
    }
}

pub fn volume_center(dims: [usize; 3]) -> [f64; 3] {
    [0, 1, 2].map(|a| (dims[a] - 1) as f64 / 2.0)
}

/// Rotation by `deg` about `axis`, right-handed over the cyclic axis order.
fn rotation(axis: usize, deg: f64) -> Mat3 {
    let mut m = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    if deg == 0.0 {
        return m;
    }
    let (s, c) = deg.to_radians().sin_cos();
    let (u, v) = ((axis + 1) % 3, (axis + 2) % 3);
    m[u][u] = c;
    m[u][v] = -s;
    m[v][u] = s;
    m[v][v] = c;
    m
}

fn mat_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

fn mat_vec(m: &Mat3, v: [f64; 3]) -> [f64; 3] {
    [0, 1, 2].map(|i| m[i][0] * v[0] + m[i][1] * v[1] + m[i][2] * v[2])
}

/// Forward map: scale and rotate about the center, then translate.
pub fn transform_point_affine(p: [f64; 3], a: &AffineParams) -> [f64; 3] {
    let m = a.matrix();
    let d = [0, 1, 2].map(|i| p[i] - a.center[i]);
    let r = mat_vec(&m, d);
    [0, 1, 2].map(|i| r[i] + a.center[i] + a.translation[i])
}

/// Resamples every output voxel from `v` at `source(output_index)`.
fn resample(v: &Volume3, source: impl Fn([f64; 3]) -> [f64; 3] + Sync) -> Volume3 {
    let [d0, d1, d2] = v.dims();
    let data: Vec<f32> = (0..d0)
        .into_par_iter()
        .flat_map_iter(|i0| {
            let source = &source;
            (0..d1).flat_map(move |i1| {
                (0..d2).map(move |i2| {
                    let y = [i0 as f64, i1 as f64, i2 as f64];
                    v.sample_trilinear(source(y)) as f32
                })
            })
        })
        .collect();
    v.with_data(data)
}

pub fn apply_affine(v: &Volume3, a: &AffineParams) -> Result<Volume3> {
    let inv = a.inverse_matrix()?;
    let shift = [0, 1, 2].map(|i| a.center[i] + a.translation[i]);
    Ok(resample(v, |y| {
        let d = [0, 1, 2].map(|i| y[i] - shift[i]);
        let s = mat_vec(&inv, d);
        [0, 1, 2].map(|i| s[i] + a.center[i])
    }))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ElasticParams {
    /// Control points per axis, each at least 2; they span the volume corners.
    pub control_grid: [usize; 3],
    pub max_displacement: f64,
    /// One displacement (voxels) per control point, axis 2 fastest.
    pub displacements: Vec<[f64; 3]>,
}

impl ElasticParams {
    /// Displacements drawn uniformly from `[-max, max]` per component.
    pub fn random(control_grid: [usize; 3], max_displacement: f64, rng: &mut impl rand::Rng) -> Self {
        let n = control_grid.iter().product();
        let displacements = (0..n)
            .map(|_| {
                [0; 3].map(|_| {
                    if max_displacement > 0.0 {
                        rng.random_range(-max_displacement..=max_displacement)
                    } else {
                        0.0
                    }
                })
            })
            .collect();
        Self { control_grid, max_displacement, displacements }
    }

    /// The same displacement at every control point.
    pub fn constant(control_grid: [usize; 3], d: [f64; 3]) -> Self {
        let n = control_grid.iter().product();
        let max_displacement = d.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        Self { control_grid, max_displacement, displacements: vec![d; n] }
    }

    pub fn validate(&self) -> Result<()> {
        if self.control_grid.iter().any(|&g| g < 2) {
            return Err(Error::InvalidParameter("elastic control grid needs >= 2 points per axis".into()));
        }
        if !(self.max_displacement >= 0.0) {
            return Err(Error::InvalidParameter("max_displacement must be non-negative".into()));
        }
        if self.displacements.len() != self.control_grid.iter().product::<usize>() {
            return Err(Error::InvalidParameter("displacement count does not match control grid".into()));
        }
        let limit = self.max_displacement * (1.0 + 1e-12);
        if self.displacements.iter().flatten().any(|x| !(x.abs() <= limit)) {
            return Err(Error::InvalidParameter("control displacement exceeds max_displacement".into()));
        }
        Ok(())
    }

    /// Dense displacement at voxel coordinate `x` of a `dims` volume, trilinear
    /// between control points.
    pub fn displacement_at(&self, x: [f64; 3], dims: [usize; 3]) -> [f64; 3] {
        let g = self.control_grid;
        let mut base = [0usize; 3];
        let mut frac = [0.0; 3];
        for a in 0..3 {
            let u = if dims[a] > 1 {
                (x[a] * (g[a] - 1) as f64 / (dims[a] - 1) as f64).clamp(0.0, (g[a] - 1) as f64)
            } else {
                0.0
            };
            let b = (u.floor() as usize).min(g[a] - 2);
            base[a] = b;
            frac[a] = u - b as f64;
        }
        let mut out = [0.0; 3];
        for o0 in 0..2 {
            let w0 = if o0 == 0 { 1.0 - frac[0] } else { frac[0] };
            for o1 in 0..2 {
                let w1 = if o1 == 0 { 1.0 - frac[1] } else { frac[1] };
                for o2 in 0..2 {
                    let w2 = if o2 == 0 { 1.0 - frac[2] } else { frac[2] };
                    let w = w0 * w1 * w2;
                    if w == 0.0 {
                        continue;
                    }
                    let idx = ((base[0] + o0) * g[1] + base[1] + o1) * g[2] + base[2] + o2;
                    let d = self.displacements[idx];
                    for a in 0..3 {
                        out[a] += w * d[a];
                    }
                }
            }
        }
        out
    }

    /// Voxel spacing between control points along each axis.
    pub fn cell_size(&self, dims: [usize; 3]) -> [f64; 3] {
        [0, 1, 2].map(|a| (dims[a] - 1) as f64 / (self.control_grid[a] - 1) as f64)
    }
}

/// `output(x) = trilinear(v, x + D(x))`
pub fn apply_elastic(v: &Volume3, e: &ElasticParams) -> Result<Volume3> {
    e.validate()?;
    let dims = v.dims();
    Ok(resample(v, |y| {
        let d = e.displacement_at(y, dims);
        [y[0] + d[0], y[1] + d[1], y[2] + d[2]]
    }))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnisotropyParams {
    pub axis: usize,
    /// In (1, 4].
    pub downsample_factor: f64,
}

/// Piecewise-linear interpolant of `line` at coordinate `s`, constant beyond the ends.
fn lerp_line(line: &[f64], s: f64) -> f64 {
    let n = line.len();
    if s <= 0.0 {
        return line[0];
    }
    if s >= (n - 1) as f64 {
        return line[n - 1];
    }
    let b = s.floor() as usize;
    let t = s - b as f64;
    line[b] * (1.0 - t) + line[b + 1] * t
}

/// Mean of the linear interpolant over `[a, b]`, integrated piecewise exactly.
fn box_average(line: &[f64], a: f64, b: f64) -> f64 {
    let mut acc = 0.0;
    let mut s0 = a;
    let mut f0 = lerp_line(line, s0);
    while s0 < b {
        let s1 = (s0.floor() + 1.0).min(b);
        let f1 = lerp_line(line, s1);
        acc += 0.5 * (f0 + f1) * (s1 - s0);
        s0 = s1;
        f0 = f1;
    }
    acc / (b - a)
}

fn resample_line(line: &[f64], factor: f64) -> Vec<f64> {
    let n = line.len();
    let m = ((n as f64 / factor).round() as usize).max(1);
    if m >= n {
        return line.to_vec();
    }
    let f = n as f64 / m as f64;
    let down: Vec<f64> = (0..m)
        .map(|j| box_average(line, j as f64 * f - 0.5, (j + 1) as f64 * f - 0.5))
        .collect();
    (0..n)
        .map(|i| {
            let u = ((i as f64 + 0.5) / f - 0.5).clamp(0.0, (m - 1) as f64);
            lerp_line(&down, u)
        })
        .collect()
}

/// Thick-slice simulation: box-average down along `axis`, linear back up to the original dims.
pub fn apply_anisotropy(v: &Volume3, a: &AnisotropyParams) -> Result<Volume3> {
    if a.axis > 2 {
        return Err(Error::InvalidParameter(format!("anisotropy axis {} out of range", a.axis)));
    }
    if !(a.downsample_factor >= 1.0 && a.downsample_factor.is_finite()) {
        return Err(Error::InvalidParameter("downsample factor must be >= 1".into()));
    }
    let dims = v.dims();
    let n = dims[a.axis];
    let mut out = v.clone();
    let strides = [dims[1] * dims[2], dims[2], 1];
    let stride = strides[a.axis];
    let others: Vec<usize> = (0..3).filter(|&x| x != a.axis).collect();
    let mut line = vec![0.0; n];
    for p in 0..dims[others[0]] {
        for q in 0..dims[others[1]] {
            let base = p * strides[others[0]] + q * strides[others[1]];
            for (t, x) in line.iter_mut().enumerate() {
                *x = v.data()[base + t * stride] as f64;
            }
            let res = resample_line(&line, a.downsample_factor);
            for (t, x) in res.iter().enumerate() {
                out.data_mut()[base + t * stride] = *x as f32;
            }
        }
    }
    Ok(out)
}
