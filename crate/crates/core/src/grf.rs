// SPDX-License-Identifier: Apache-2.0
//! Stationary Gaussian random fields with covariance
//! `C(r) = variance * exp(-(r / length_scale)^2)` by circulant embedding.
//!
//! The covariance is laid out on a periodic grid at least twice the field
//! size (and padded by four length scales), diagonalized with a 2D FFT, and
//! white noise is coloured by the square root of the spectrum. The Gaussian
//! kernel can produce tiny negative eigenvalues from truncation; those are
//! set to zero.

use rand::Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

/// Sample an `nx x ny` field (row-major, `y * nx + x`) on a grid with the
/// given pixel spacing.
pub fn gaussian_random_field(
    nx: usize,
    ny: usize,
    spacing: f64,
    variance: f64,
    length_scale: f64,
    rng: &mut impl Rng,
) -> Vec<f64> {
    if nx == 0 || ny == 0 {
        return Vec::new();
    }
    if !(variance > 0.0) || !(length_scale > 0.0) {
        return vec![0.0; nx * ny];
    }
    let pad = (4.0 * length_scale / spacing).ceil() as usize;
    let mx = embed_size(nx, pad);
    let my = embed_size(ny, pad);

    let mut spec: Vec<Complex64> = Vec::with_capacity(mx * my);
    for j in 0..my {
        let dy = j.min(my - j) as f64 * spacing;
        for i in 0..mx {
            let dx = i.min(mx - i) as f64 * spacing;
            let r2 = (dx * dx + dy * dy) / (length_scale * length_scale);
            spec.push(Complex64::new(variance * (-r2).exp(), 0.0));
        }
    }
    let mut planner = FftPlanner::new();
    fft2(&mut spec, mx, my, &mut planner, false);

    let total = (mx * my) as f64;
    let mut buf: Vec<Complex64> = spec
        .iter()
        .map(|lam| {
            let a = (lam.re.max(0.0) / total).sqrt();
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            Complex64::new(a * re, a * im)
        })
        .collect();
    fft2(&mut buf, mx, my, &mut planner, false);

    let mut out = Vec::with_capacity(nx * ny);
    for y in 0..ny {
        for x in 0..nx {
            out.push(buf[y * mx + x].re);
        }
    }
    out
}

fn embed_size(n: usize, pad: usize) -> usize {
    let m = (2 * n).max(n + pad).max(2);
    // round up to a 2^a 3^b 5^c size so the FFT stays fast
    let mut s = m;
    loop {
        let mut k = s;
        for p in [2, 3, 5] {
            while k.is_multiple_of(p) {
                k /= p;
            }
        }
        if k == 1 {
            return s;
        }
        s += 1;
    }
}

fn fft2(
    data: &mut [Complex64],
    mx: usize,
    my: usize,
    planner: &mut FftPlanner<f64>,
    inverse: bool,
) {
    let row = if inverse {
        planner.plan_fft_inverse(mx)
    } else {
        planner.plan_fft_forward(mx)
    };
    for r in data.chunks_exact_mut(mx) {
        row.process(r);
    }
    let col = if inverse {
        planner.plan_fft_inverse(my)
    } else {
        planner.plan_fft_forward(my)
    };
    let mut tmp = vec![Complex64::new(0.0, 0.0); my];
    for x in 0..mx {
        for y in 0..my {
            tmp[y] = data[y * mx + x];
        }
        col.process(&mut tmp);
        for y in 0..my {
            data[y * mx + x] = tmp[y];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_variance_is_flat() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f = gaussian_random_field(8, 5, 1.0, 0.0, 3.0, &mut rng);
        assert!(f.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn embed_sizes_are_smooth() {
        assert_eq!(embed_size(600, 160), 1200);
        assert_eq!(embed_size(7, 100), 108);
    }

    #[test]
    fn same_seed_same_field() {
        let a = gaussian_random_field(20, 30, 2.0, 1.5, 10.0, &mut ChaCha8Rng::seed_from_u64(9));
        let b = gaussian_random_field(20, 30, 2.0, 1.5, 10.0, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
    }
}
