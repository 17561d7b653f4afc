//! Complex FFT for arbitrary lengths.
//!
//! Powers of two use an iterative radix-2 Cooley-Tukey transform; every other
//! length goes through Bluestein's chirp-z algorithm on a padded power-of-two
//! convolution. Forward is `X[k] = sum x[n] e^{-2 pi i k n / N}`; the inverse
//! carries the `1/N` factor.

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;

#[derive(Clone, Debug)]
pub struct Fft {
    n: usize,
    kind: Kind,
}

#[derive(Clone, Debug)]
enum Kind {
    Radix2(Radix2),
    Bluestein(Box<Bluestein>),
}

#[derive(Clone, Debug)]
struct Radix2 {
    n: usize,
    /// `e^{-2 pi i k / n}` for `k < n/2`.
    twiddles: Vec<Complex64>,
    bitrev: Vec<usize>,
}

impl Radix2 {
    fn new(n: usize) -> Self {
        debug_assert!(n.is_power_of_two());
        let twiddles = (0..n / 2)
            .map(|k| Complex64::from_polar(1.0, -2.0 * PI * k as f64 / n as f64))
            .collect();
        let bits = n.trailing_zeros();
        let bitrev = (0..n)
            .map(|i| if bits == 0 { 0 } else { i.reverse_bits() >> (usize::BITS - bits) })
            .collect();
        Self { n, twiddles, bitrev }
    }

    /// Unnormalized forward transform.
    fn forward(&self, buf: &mut [Complex64]) {
        let n = self.n;
        for i in 0..n {
            let j = self.bitrev[i];
            if i < j {
                buf.swap(i, j);
            }
        }
        let mut len = 2;
        while len <= n {
            let half = len / 2;
            let step = n / len;
            for start in (0..n).step_by(len) {
                for k in 0..half {
                    let w = self.twiddles[k * step];
                    let a = buf[start + k];
                    let b = buf[start + k + half] * w;
                    buf[start + k] = a + b;
                    buf[start + k + half] = a - b;
                }
            }
            len <<= 1;
        }
    }
}

#[derive(Clone, Debug)]
struct Bluestein {
    n: usize,
    inner: Radix2,
    /// `e^{-i pi k^2 / n}`
    chirp: Vec<Complex64>,
    /// Forward transform of the conjugate chirp filter, pre-scaled by `1/m`.
    filter: Vec<Complex64>,
}

impl Bluestein {
    fn new(n: usize) -> Self {
        let m = (2 * n - 1).next_power_of_two();
        let inner = Radix2::new(m);
        let chirp: Vec<Complex64> = (0..n)
            .map(|k| {
                // k^2 mod 2n keeps the phase argument small.
                let k2 = (k as u128 * k as u128 % (2 * n as u128)) as f64;
                Complex64::from_polar(1.0, -PI * k2 / n as f64)
            })
            .collect();
        let mut filter = vec![Complex64::new(0.0, 0.0); m];
        filter[0] = chirp[0].conj();
        for k in 1..n {
            filter[k] = chirp[k].conj();
            filter[m - k] = chirp[k].conj();
        }
        inner.forward(&mut filter);
        let scale = 1.0 / m as f64;
        filter.iter_mut().for_each(|f| *f *= scale);
        Self { n, inner, chirp, filter }
    }

    fn forward(&self, buf: &mut [Complex64]) {
        let m = self.inner.n;
        let mut work = vec![Complex64::new(0.0, 0.0); m];
        for k in 0..self.n {
            work[k] = buf[k] * self.chirp[k];
        }
        self.inner.forward(&mut work);
        for (w, f) in work.iter_mut().zip(&self.filter) {
            *w = (*w * f).conj();
        }
        // inverse via conjugation; the 1/m factor lives in `filter`
        self.inner.forward(&mut work);
        for k in 0..self.n {
            buf[k] = work[k].conj() * self.chirp[k];
        }
    }
}

impl Fft {
    pub fn new(n: usize) -> Self {
        assert!(n > 0, "FFT length must be positive");
        let kind = if n.is_power_of_two() {
            Kind::Radix2(Radix2::new(n))
        } else {
            Kind::Bluestein(Box::new(Bluestein::new(n)))
        };
        Self { n, kind }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn forward(&self, buf: &mut [Complex64]) {
        assert_eq!(buf.len(), self.n, "buffer length must equal FFT length");
        match &self.kind {
            Kind::Radix2(r) => r.forward(buf),
            Kind::Bluestein(b) => b.forward(buf),
        }
    }

    /// Inverse transform including the `1/N` normalization.
    pub fn inverse(&self, buf: &mut [Complex64]) {
        buf.iter_mut().for_each(|x| *x = x.conj());
        self.forward(buf);
        let scale = 1.0 / self.n as f64;
        buf.iter_mut().for_each(|x| *x = x.conj() * scale);
    }

    pub fn transform(&self, buf: &mut [Complex64], inverse: bool) {
        if inverse {
            self.inverse(buf)
        } else {
            self.forward(buf)
        }
    }
}

/// Transforms every line of a `dims`-shaped array (axis 2 fastest) along `axis`.
pub fn fft_axis(data: &mut [Complex64], dims: [usize; 3], axis: usize, inverse: bool) {
    assert_eq!(data.len(), dims[0] * dims[1] * dims[2]);
    let n = dims[axis];
    if n == 1 {
        return;
    }
    let plan = Fft::new(n);
    if axis == 2 {
        data.par_chunks_mut(n).for_each(|line| plan.transform(line, inverse));
        return;
    }
    let stride = if axis == 0 { dims[1] * dims[2] } else { dims[2] };
    let mut line = vec![Complex64::new(0.0, 0.0); n];
    let (outer, inner) = if axis == 0 { (1, dims[1] * dims[2]) } else { (dims[0], dims[2]) };
    let outer_stride = if axis == 0 { 0 } else { dims[1] * dims[2] };
    for o in 0..outer {
        for i in 0..inner {
            let base = o * outer_stride + i;
            for (t, x) in line.iter_mut().enumerate() {
                *x = data[base + t * stride];
            }
            plan.transform(&mut line, inverse);
            for (t, x) in line.iter().enumerate() {
                data[base + t * stride] = *x;
            }
        }
    }
}

/// Separable 3D transform.
pub fn fft3(data: &mut [Complex64], dims: [usize; 3], inverse: bool) {
    for axis in 0..3 {
        fft_axis(data, dims, axis, inverse);
    }
}

/// Signed frequency index of bin `k` in an `n`-point transform.
pub fn signed_frequency(k: usize, n: usize) -> i64 {
    if k <= n / 2 {
        k as i64
    } else {
        k as i64 - n as i64
    }
}
