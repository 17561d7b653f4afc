//! Direct 3D convolution kernels over one sample at a time.
//!
//! Work is blocked by output line: for each `(i0, i1)` the full axis-2 line of
//! every output channel is accumulated in a small buffer while input segments
//! stream through once per tap. On x86-64 with AVX2 the same code is compiled
//! a second time with wider vectors; there is no FMA contraction, so both
//! paths round identically.

use brainmark_core::Scalar;

/// Tap offsets of a cubic kernel in `(a, b, c)` row-major order.
pub(crate) fn tap_offsets(ksize: usize, dilation: usize) -> Vec<[isize; 3]> {
    let half = (ksize / 2) as isize;
    let d = dilation as isize;
    let mut out = Vec::with_capacity(ksize * ksize * ksize);
    for a in 0..ksize as isize {
        for b in 0..ksize as isize {
            for c in 0..ksize as isize {
                out.push([(a - half) * d, (b - half) * d, (c - half) * d]);
            }
        }
    }
    out
}

/// Copy of `x` (`c` fields over `dims`) with `pad` zeros on both ends of
/// every axis-2 line, so shifted reads along that axis never go out of range.
#[inline(always)]
fn pad_lines<T: Scalar>(x: &[T], c: usize, dims: [usize; 3], pad: usize) -> Vec<T> {
    let d2 = dims[2];
    let lines = c * dims[0] * dims[1];
    let w = d2 + 2 * pad;
    let mut out = vec![T::zero(); lines * w];
    for (dst, src) in out.chunks_exact_mut(w).zip(x.chunks_exact(d2)) {
        dst[pad..pad + d2].copy_from_slice(src);
    }
    out
}

fn axis2_pad(taps: &[[isize; 3]]) -> usize {
    taps.iter().map(|o| o[2].unsigned_abs()).max().unwrap_or(0)
}

pub(crate) struct Geometry<'a> {
    pub dims: [usize; 3],
    pub taps: &'a [[isize; 3]],
    pub cin: usize,
    pub cout: usize,
}

/// `out[o][i] = bias[o] + sum_{c,t} w[c][t][o] * x[c][i + off_t]` with zero
/// padding. `w` is laid out `[cin][tap][cout]`.
#[inline(always)]
fn correlate_impl<T: Scalar>(geo: &Geometry, x: &[T], w: &[T], bias: Option<&[T]>, out: &mut [T]) {
    let [d0, d1, d2] = geo.dims;
    let plane = d0 * d1 * d2;
    let (cin, cout, nt) = (geo.cin, geo.cout, geo.taps.len());
    let pad = axis2_pad(geo.taps);
    let pw = d2 + 2 * pad;
    let xp = pad_lines(x, cin, geo.dims, pad);
    let pplane = d0 * d1 * pw;
    let mut acc = vec![T::zero(); cout * d2];
    for i0 in 0..d0 {
        for i1 in 0..d1 {
            for o in 0..cout {
                let b = bias.map_or(T::zero(), |b| b[o]);
                acc[o * d2..(o + 1) * d2].fill(b);
            }
            for (t, off) in geo.taps.iter().enumerate() {
                let j0 = i0 as isize + off[0];
                let j1 = i1 as isize + off[1];
                if j0 < 0 || j1 < 0 || j0 >= d0 as isize || j1 >= d1 as isize {
                    continue;
                }
                let start = (j0 as usize * d1 + j1 as usize) * pw + (pad as isize + off[2]) as usize;
                for c in 0..cin {
                    let src = &xp[c * pplane + start..][..d2];
                    let wrow = &w[(c * nt + t) * cout..][..cout];
                    for (dst, &wt) in acc.chunks_exact_mut(d2).zip(wrow) {
                        for (a, &v) in dst.iter_mut().zip(src) {
                            *a += wt * v;
                        }
                    }
                }
            }
            let line = (i0 * d1 + i1) * d2;
            for (o, a) in acc.chunks_exact(d2).enumerate() {
                out[o * plane + line..][..d2].copy_from_slice(a);
            }
        }
    }
}

/// Dot product with independent lane accumulators so the loop vectorizes.
#[inline(always)]
pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    const LANES: usize = 8;
    let mut acc = [T::zero(); LANES];
    let (ca, cb) = (a.chunks_exact(LANES), b.chunks_exact(LANES));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..LANES {
            acc[l] += x[l] * y[l];
        }
    }
    let mut s = ra.iter().zip(rb).fold(T::zero(), |s, (&x, &y)| s + x * y);
    for v in acc {
        s += v;
    }
    s
}

/// `dw[o][c][t] += sum_i g[o][i] * x[c][i + off_t]`, accumulated per output
/// plane in `T` and then folded into the f64 totals.
#[inline(always)]
fn weight_grad_impl<T: Scalar>(geo: &Geometry, g: &[T], x: &[T], dw: &mut [f64]) {
    let [d0, d1, d2] = geo.dims;
    let plane = d0 * d1 * d2;
    let (cin, cout, nt) = (geo.cin, geo.cout, geo.taps.len());
    let pad = axis2_pad(geo.taps);
    let pw = d2 + 2 * pad;
    let xp = pad_lines(x, cin, geo.dims, pad);
    let pplane = d0 * d1 * pw;
    let mut part = vec![T::zero(); cout * cin * nt];
    for i0 in 0..d0 {
        part.iter_mut().for_each(|p| *p = T::zero());
        for i1 in 0..d1 {
            let line = (i0 * d1 + i1) * d2;
            for (t, off) in geo.taps.iter().enumerate() {
                let j0 = i0 as isize + off[0];
                let j1 = i1 as isize + off[1];
                if j0 < 0 || j1 < 0 || j0 >= d0 as isize || j1 >= d1 as isize {
                    continue;
                }
                let start = (j0 as usize * d1 + j1 as usize) * pw + (pad as isize + off[2]) as usize;
                for o in 0..cout {
                    let gl = &g[o * plane + line..][..d2];
                    for c in 0..cin {
                        part[(o * cin + c) * nt + t] += dot(gl, &xp[c * pplane + start..][..d2]);
                    }
                }
            }
        }
        for (d, p) in dw.iter_mut().zip(&part) {
            *d += p.f64();
        }
    }
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn correlate_avx2<T: Scalar>(geo: &Geometry, x: &[T], w: &[T], bias: Option<&[T]>, out: &mut [T]) {
    correlate_impl(geo, x, w, bias, out)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn weight_grad_avx2<T: Scalar>(geo: &Geometry, g: &[T], x: &[T], dw: &mut [f64]) {
    weight_grad_impl(geo, g, x, dw)
}

fn has_avx2() -> bool {
    #[cfg(target_arch = "x86_64")]
    {
        std::is_x86_feature_detected!("avx2")
    }
    #[cfg(not(target_arch = "x86_64"))]
    {
        false
    }
}

pub(crate) fn correlate<T: Scalar>(geo: &Geometry, x: &[T], w: &[T], bias: Option<&[T]>, out: &mut [T]) {
    #[cfg(target_arch = "x86_64")]
    if has_avx2() {
        // SAFETY: the CPU supports AVX2, checked at runtime just above.
        return unsafe { correlate_avx2(geo, x, w, bias, out) };
    }
    correlate_impl(geo, x, w, bias, out)
}

pub(crate) fn weight_grad<T: Scalar>(geo: &Geometry, g: &[T], x: &[T], dw: &mut [f64]) {
    #[cfg(target_arch = "x86_64")]
    if has_avx2() {
        // SAFETY: the CPU supports AVX2, checked at runtime just above.
        return unsafe { weight_grad_avx2(geo, g, x, dw) };
    }
    weight_grad_impl(geo, g, x, dw)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn avx2_and_portable_paths_agree_bitwise() {
        let dims = [5, 6, 7];
        let taps = tap_offsets(3, 2);
        let geo = Geometry { dims, taps: &taps, cin: 3, cout: 2 };
        let x: Vec<f32> = (0..3 * 210).map(|i| ((i * 31 % 97) as f32 - 48.0) / 17.0).collect();
        let w: Vec<f32> = (0..3 * 27 * 2).map(|i| ((i * 7 % 23) as f32 - 11.0) / 13.0).collect();
        let mut a = vec![0.0f32; 2 * 210];
        let mut b = a.clone();
        correlate_impl(&geo, &x, &w, Some(&[0.5, -0.25]), &mut a);
        correlate(&geo, &x, &w, Some(&[0.5, -0.25]), &mut b);
        assert_eq!(a, b);
        let g: Vec<f32> = (0..2 * 210).map(|i| ((i * 11 % 29) as f32 - 14.0) / 9.0).collect();
        let mut da = vec![0.0; 2 * 3 * 27];
        let mut db = da.clone();
        weight_grad_impl(&geo, &g, &x, &mut da);
        weight_grad(&geo, &g, &x, &mut db);
        assert_eq!(da, db);
    }
}
