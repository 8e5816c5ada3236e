//! Separable 2-D orthonormal wavelet transform (8-tap Daubechies filter,
//! periodic boundary) used by the wavelet-domain denoiser.

use crate::mat::Matrix;
use crate::scalar::Real;

/// 8-tap Daubechies orthonormal scaling filter; coefficients sum to √2.
const LOW: [f64; 8] = [
    0.230_377_813_308_855_23,
    0.714_846_570_552_541_5,
    0.630_880_767_929_590_4,
    -0.027_983_769_416_983_85,
    -0.187_034_811_718_881_14,
    0.030_841_381_835_986_965,
    0.032_883_011_666_982_945,
    -0.010_597_401_784_997_278,
];

/// Quadrature mirror of [`LOW`]: g[t] = (-1)^t h[7-t].
fn high_pass() -> [f64; 8] {
    let mut g = [0f64; 8];
    for (t, slot) in g.iter_mut().enumerate() {
        let h = LOW[LOW.len() - 1 - t];
        *slot = if t % 2 == 0 { h } else { -h };
    }
    g
}

/// Detail subbands of one decomposition level.
#[derive(Debug, Clone)]
pub(crate) struct DetailBands<T> {
    /// High-pass along x, low-pass along y.
    pub dh: Matrix<T>,
    /// Low-pass along x, high-pass along y.
    pub dv: Matrix<T>,
    /// High-pass along both axes.
    pub dd: Matrix<T>,
}

impl<T> DetailBands<T> {
    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Matrix<T>> {
        [&mut self.dh, &mut self.dv, &mut self.dd].into_iter()
    }
}

/// Multi-level decomposition; `details[0]` is the finest level.
#[derive(Debug, Clone)]
pub(crate) struct Decomposition<T> {
    pub approx: Matrix<T>,
    pub details: Vec<DetailBands<T>>,
}

/// Analysis on each row: output row is [low | high] halves.
fn analyze_rows<T: Real>(m: &Matrix<T>) -> Matrix<T> {
    let w = m.width();
    let h = m.height();
    debug_assert!(w.is_multiple_of(2));
    let half = w / 2;
    let g = high_pass();
    let mut out = Matrix::filled(w, h, T::zero());
    for y in 0..h {
        let src = m.row(y);
        let dst = out.row_mut(y);
        for k in 0..half {
            let mut a = 0f64;
            let mut d = 0f64;
            for t in 0..LOW.len() {
                let v = src[(2 * k + t) % w].as_f64();
                a += LOW[t] * v;
                d += g[t] * v;
            }
            dst[k] = T::from_f64_lossy(a);
            dst[half + k] = T::from_f64_lossy(d);
        }
    }
    out
}

/// Transpose of [`analyze_rows`]; exactly inverts it for orthonormal
/// filters.
fn synthesize_rows<T: Real>(m: &Matrix<T>) -> Matrix<T> {
    let w = m.width();
    let h = m.height();
    let half = w / 2;
    let g = high_pass();
    let mut out = Matrix::filled(w, h, T::zero());
    let mut acc = vec![0f64; w];
    for y in 0..h {
        acc.fill(0.0);
        let src = m.row(y);
        for k in 0..half {
            let a = src[k].as_f64();
            let d = src[half + k].as_f64();
            for t in 0..LOW.len() {
                acc[(2 * k + t) % w] += LOW[t] * a + g[t] * d;
            }
        }
        let dst = out.row_mut(y);
        for (slot, &v) in dst.iter_mut().zip(acc.iter()) {
            *slot = T::from_f64_lossy(v);
        }
    }
    out
}

fn analyze_cols<T: Real>(m: &Matrix<T>) -> Matrix<T> {
    analyze_rows(&m.transpose()).transpose()
}

fn synthesize_cols<T: Real>(m: &Matrix<T>) -> Matrix<T> {
    synthesize_rows(&m.transpose()).transpose()
}

fn dwt2_once<T: Real>(m: &Matrix<T>) -> (Matrix<T>, DetailBands<T>) {
    let t = analyze_cols(&analyze_rows(m));
    let w2 = m.width() / 2;
    let h2 = m.height() / 2;
    let quad = |x0: usize, y0: usize| Matrix::from_fn(w2, h2, |x, y| t.get(x0 + x, y0 + y));
    let ll = quad(0, 0);
    let dh = quad(w2, 0);
    let dv = quad(0, h2);
    let dd = quad(w2, h2);
    (ll, DetailBands { dh, dv, dd })
}

fn idwt2_once<T: Real>(ll: &Matrix<T>, bands: &DetailBands<T>) -> Matrix<T> {
    let w2 = ll.width();
    let h2 = ll.height();
    let assembled = Matrix::from_fn(2 * w2, 2 * h2, |x, y| match (x < w2, y < h2) {
        (true, true) => ll.get(x, y),
        (false, true) => bands.dh.get(x - w2, y),
        (true, false) => bands.dv.get(x, y - h2),
        (false, false) => bands.dd.get(x - w2, y - h2),
    });
    synthesize_rows(&synthesize_cols(&assembled))
}

/// Forward transform; both dimensions must be divisible by 2^levels.
pub(crate) fn forward<T: Real>(m: &Matrix<T>, levels: usize) -> Decomposition<T> {
    assert!(levels >= 1);
    assert!(
        m.width().is_multiple_of(1 << levels) && m.height().is_multiple_of(1 << levels),
        "dimensions must be a multiple of 2^levels"
    );
    let mut cur = m.clone();
    let mut details = Vec::with_capacity(levels);
    for _ in 0..levels {
        let (ll, bands) = dwt2_once(&cur);
        details.push(bands);
        cur = ll;
    }
    Decomposition { approx: cur, details }
}

pub(crate) fn inverse<T: Real>(d: &Decomposition<T>) -> Matrix<T> {
    let mut cur = d.approx.clone();
    for bands in d.details.iter().rev() {
        cur = idwt2_once(&cur, bands);
    }
    cur
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn filters_are_orthonormal() {
        let g = high_pass();
        let dot = |a: &[f64], b: &[f64], shift: usize| -> f64 {
            a.iter().zip(b.iter().cycle().skip(shift)).map(|(x, y)| x * y).sum()
        };
        assert!((LOW.iter().map(|v| v * v).sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(g.iter().sum::<f64>().abs() < 1e-12);
        assert!(dot(&LOW, &g, 0).abs() < 1e-12);
    }

    #[test]
    fn perfect_reconstruction_f64() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let m = Matrix::from_fn(48, 32, |_, _| rng.gen_range(-100.0f64..100.0));
        let rec = inverse(&forward(&m, 3));
        let max_err = m
            .as_slice()
            .iter()
            .zip(rec.as_slice())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(max_err < 1e-8, "max reconstruction error {max_err}");
    }

    #[test]
    fn perfect_reconstruction_f32() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        let m = Matrix::from_fn(64, 64, |_, _| rng.gen_range(-128.0f32..128.0));
        let rec = inverse(&forward(&m, 4));
        let max_err = m
            .as_slice()
            .iter()
            .zip(rec.as_slice())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f32, f32::max);
        assert!(max_err < 1e-2, "max reconstruction error {max_err}");
    }

    #[test]
    fn constant_input_has_zero_details() {
        let m = Matrix::filled(32, 32, 128.0f64);
        let d = forward(&m, 2);
        for bands in &d.details {
            for band in [&bands.dh, &bands.dv, &bands.dd] {
                assert!(band.as_slice().iter().all(|v| v.abs() < 1e-9));
            }
        }
    }
}
