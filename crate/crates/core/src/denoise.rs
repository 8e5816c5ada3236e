//! Per-frame PRNU noise residual estimation: W = I - denoise(I).
//!
//! The built-in filter is the wavelet-domain locally adaptive Wiener
//! attenuator: an orthonormal 8-tap Daubechies decomposition whose detail
//! coefficients are scaled by s²/(s² + σ₀²), with the local signal
//! variance s² taken as the minimum over sliding-window estimates. The
//! approximation band passes through unchanged. Denoisers are pluggable
//! through a small name registry so alternative extractors can slot in
//! behind the same contract.

use thiserror::Error;

use crate::dwt;
use crate::frameio::LumaFrame;
use crate::mat::Matrix;
use crate::scalar::Real;

#[derive(Debug, Error)]
pub enum DenoiseError {
    #[error("frame {width}x{height} smaller than the {window}-pixel window")]
    TooSmall { width: usize, height: usize, window: usize },
    #[error("bad denoiser parameters: {0}")]
    BadParams(String),
    #[error("unknown denoiser {0:?}")]
    UnknownDenoiser(String),
}

/// Noise residual of one frame; dimensions equal the source frame's and
/// every value is finite.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseResidual<T> {
    values: Matrix<T>,
}

impl<T: Real> NoiseResidual<T> {
    pub fn new(values: Matrix<T>) -> Self {
        assert!(
            values.as_slice().iter().all(|v| v.is_finite()),
            "noise residual must be finite"
        );
        NoiseResidual { values }
    }

    pub fn values(&self) -> &Matrix<T> {
        &self.values
    }

    pub fn width(&self) -> usize {
        self.values.width()
    }

    pub fn height(&self) -> usize {
        self.values.height()
    }
}

/// Parameters of the wavelet-Wiener extractor. σ₀² lives on the 0-255
/// intensity scale.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserParams {
    pub noise_floor_variance: f64,
    pub levels: usize,
    pub window_sizes: Vec<usize>,
}

impl DenoiserParams {
    pub fn new(
        noise_floor_variance: f64,
        levels: usize,
        window_sizes: Vec<usize>,
    ) -> Result<Self, DenoiseError> {
        if !noise_floor_variance.is_finite() || noise_floor_variance <= 0.0 {
            return Err(DenoiseError::BadParams(format!(
                "noise floor variance must be positive, got {noise_floor_variance}"
            )));
        }
        if levels < 1 {
            return Err(DenoiseError::BadParams("levels must be >= 1".into()));
        }
        if window_sizes.is_empty() {
            return Err(DenoiseError::BadParams("window list must not be empty".into()));
        }
        if let Some(&w) = window_sizes.iter().find(|&&w| w < 3 || w % 2 == 0) {
            return Err(DenoiseError::BadParams(format!(
                "window sizes must be odd and >= 3, got {w}"
            )));
        }
        Ok(DenoiserParams { noise_floor_variance, levels, window_sizes })
    }
}

impl Default for DenoiserParams {
    fn default() -> Self {
        DenoiserParams::new(9.0, 4, vec![3, 5, 7, 9]).unwrap()
    }
}

/// A frame denoiser; implementations must be pure functions of their
/// input so frames can be processed in parallel.
pub trait Denoiser<T: Real>: Send + Sync {
    fn name(&self) -> &'static str;
    fn denoise(&self, frame: &LumaFrame) -> Result<Matrix<T>, DenoiseError>;
}

/// Name of the built-in denoiser.
pub const WAVELET_WIENER: &str = "wavelet-wiener";

/// Looks a denoiser up by registry name.
pub fn denoiser_by_name<T: Real>(
    name: &str,
    params: DenoiserParams,
) -> Result<Box<dyn Denoiser<T>>, DenoiseError> {
    match name {
        WAVELET_WIENER => Ok(Box::new(WaveletWiener::new(params))),
        other => Err(DenoiseError::UnknownDenoiser(other.to_string())),
    }
}

/// The wavelet-domain locally adaptive Wiener denoiser.
#[derive(Debug, Clone)]
pub struct WaveletWiener<T> {
    params: DenoiserParams,
    _scalar: std::marker::PhantomData<T>,
}

impl<T: Real> WaveletWiener<T> {
    pub fn new(params: DenoiserParams) -> Self {
        WaveletWiener { params, _scalar: std::marker::PhantomData }
    }

    pub fn params(&self) -> &DenoiserParams {
        &self.params
    }
}

impl<T: Real> Denoiser<T> for WaveletWiener<T> {
    fn name(&self) -> &'static str {
        WAVELET_WIENER
    }

    fn denoise(&self, frame: &LumaFrame) -> Result<Matrix<T>, DenoiseError> {
        let p = &self.params;
        let max_window = *p.window_sizes.iter().max().unwrap();
        if frame.width() < max_window || frame.height() < max_window {
            return Err(DenoiseError::TooSmall {
                width: frame.width(),
                height: frame.height(),
                window: max_window,
            });
        }

        let m: Matrix<T> = frame.to_matrix();
        let unit = 1usize << p.levels;
        let pw = m.width().div_ceil(unit) * unit;
        let ph = m.height().div_ceil(unit) * unit;
        let padded = mirror_pad(&m, pw, ph);

        let mut decomp = dwt::forward(&padded, p.levels);
        for bands in &mut decomp.details {
            for band in bands.iter_mut() {
                wiener_attenuate(band, p.noise_floor_variance, &p.window_sizes);
            }
        }
        let rec = dwt::inverse(&decomp);
        Ok(Matrix::from_fn(m.width(), m.height(), |x, y| rec.get(x, y)))
    }
}

/// Symmetric (mirror) extension to the padded size.
fn mirror_pad<T: Real>(m: &Matrix<T>, pw: usize, ph: usize) -> Matrix<T> {
    let reflect = |i: usize, n: usize| -> usize {
        if n == 1 {
            return 0;
        }
        let period = 2 * n - 2;
        let r = i % period;
        if r < n {
            r
        } else {
            period - r
        }
    };
    Matrix::from_fn(pw, ph, |x, y| m.get(reflect(x, m.width()), reflect(y, m.height())))
}

/// Scales every coefficient by s²/(s² + σ₀²). The local signal variance
/// s² is the windowed mean of c² minus σ₀², floored at 0 and minimized
/// over the window sizes, so the gain always lies in [0, 1].
fn wiener_attenuate<T: Real>(band: &mut Matrix<T>, sigma0_sq: f64, windows: &[usize]) {
    let w = band.width();
    let h = band.height();
    let stride = w + 1;
    let mut ii = vec![0f64; stride * (h + 1)];
    for y in 0..h {
        let mut rowsum = 0f64;
        for x in 0..w {
            let v = band.get(x, y).as_f64();
            rowsum += v * v;
            ii[(y + 1) * stride + (x + 1)] = ii[y * stride + (x + 1)] + rowsum;
        }
    }
    // Inclusive-rectangle sum of squares.
    let rect = |x0: usize, y0: usize, x1: usize, y1: usize| -> f64 {
        ii[(y1 + 1) * stride + (x1 + 1)] - ii[y0 * stride + (x1 + 1)]
            - ii[(y1 + 1) * stride + x0]
            + ii[y0 * stride + x0]
    };
    for y in 0..h {
        for x in 0..w {
            let mut est = f64::INFINITY;
            for &win in windows {
                let r = win / 2;
                let x0 = x.saturating_sub(r);
                let y0 = y.saturating_sub(r);
                let x1 = (x + r).min(w - 1);
                let y1 = (y + r).min(h - 1);
                let count = ((x1 - x0 + 1) * (y1 - y0 + 1)) as f64;
                let mean = rect(x0, y0, x1, y1) / count;
                est = est.min((mean - sigma0_sq).max(0.0));
            }
            let gain = est / (est + sigma0_sq);
            band.set(x, y, T::from_f64_lossy(band.get(x, y).as_f64() * gain));
        }
    }
}

/// W = I - denoise(I).
pub fn residual<T: Real>(
    frame: &LumaFrame,
    denoiser: &dyn Denoiser<T>,
) -> Result<NoiseResidual<T>, DenoiseError> {
    let denoised = denoiser.denoise(frame)?;
    let values = Matrix::from_fn(frame.width(), frame.height(), |x, y| {
        T::from_f64_lossy(frame.get(x, y) as f64) - denoised.get(x, y)
    });
    Ok(NoiseResidual::new(values))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn frame_from_fn(w: usize, h: usize, mut f: impl FnMut(usize, usize) -> u8) -> LumaFrame {
        let mut samples = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                samples.push(f(x, y));
            }
        }
        LumaFrame::new(w, h, samples).unwrap()
    }

    fn default_denoiser() -> WaveletWiener<f32> {
        WaveletWiener::new(DenoiserParams::default())
    }

    #[test]
    fn params_are_validated() {
        assert!(DenoiserParams::new(0.0, 4, vec![3]).is_err());
        assert!(DenoiserParams::new(9.0, 0, vec![3]).is_err());
        assert!(DenoiserParams::new(9.0, 4, vec![]).is_err());
        assert!(DenoiserParams::new(9.0, 4, vec![4]).is_err());
        assert!(DenoiserParams::new(9.0, 4, vec![3, 1]).is_err());
        assert!(DenoiserParams::new(9.0, 4, vec![3, 5, 7, 9]).is_ok());
    }

    #[test]
    fn registry_knows_the_builtin_only() {
        assert!(denoiser_by_name::<f32>(WAVELET_WIENER, DenoiserParams::default()).is_ok());
        match denoiser_by_name::<f32>("median", DenoiserParams::default()) {
            Err(DenoiseError::UnknownDenoiser(name)) => assert_eq!(name, "median"),
            _ => panic!("expected an unknown-denoiser error"),
        }
    }

    #[test]
    fn constant_frame_passes_through() {
        let frame = frame_from_fn(40, 24, |_, _| 128);
        let den = default_denoiser().denoise(&frame).unwrap();
        assert_eq!((den.width(), den.height()), (40, 24));
        assert!(den.as_slice().iter().all(|v| (v - 128.0).abs() < 1e-2));
        let res = residual(&frame, &default_denoiser()).unwrap();
        assert!(res.values().as_slice().iter().all(|v| v.abs() < 1e-2));
    }

    #[test]
    fn impulse_energy_is_reduced() {
        let amp = 80.0f32;
        let frame = frame_from_fn(64, 64, |x, y| if (x, y) == (32, 32) { 208 } else { 128 });
        let res = residual(&frame, &default_denoiser()).unwrap();
        let sup = res.values().as_slice().iter().fold(0.0f32, |m, v| m.max(v.abs()));
        assert!(sup < amp, "residual sup-norm {sup} not below impulse amplitude {amp}");
        assert!(sup > 0.0);
    }

    #[test]
    fn huge_noise_floor_suppresses_all_detail() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let frame = frame_from_fn(64, 48, |_, _| rng.gen_range(0..=255));
        let params = DenoiserParams::new(1e12, 4, vec![3, 5, 7, 9]).unwrap();
        let den = WaveletWiener::<f64>::new(params).denoise(&frame).unwrap();

        // Reference: zero every detail band outright.
        let m: Matrix<f64> = frame.to_matrix();
        let mut decomp = dwt::forward(&m, 4);
        for bands in &mut decomp.details {
            for band in bands.iter_mut() {
                for v in band.as_mut_slice() {
                    *v = 0.0;
                }
            }
        }
        let lowpass = dwt::inverse(&decomp);
        let max_err = den
            .as_slice()
            .iter()
            .zip(lowpass.as_slice())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(max_err < 1e-6, "denoised deviates from low-pass by {max_err}");
    }

    #[test]
    fn wiener_gain_lies_in_unit_interval() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let before = Matrix::from_fn(31, 17, |_, _| rng.gen_range(-50.0f64..50.0));
        let mut after = before.clone();
        wiener_attenuate(&mut after, 9.0, &[3, 5, 7, 9]);
        for (&b, &a) in before.as_slice().iter().zip(after.as_slice()) {
            assert!(a.abs() <= b.abs() + 1e-12, "gain above 1: {b} -> {a}");
            assert!(a * b >= 0.0, "gain below 0 flipped sign: {b} -> {a}");
        }
    }

    #[test]
    fn residual_plus_denoised_restores_frame() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let frame = frame_from_fn(48, 32, |_, _| rng.gen_range(0..=255));
        let den = default_denoiser().denoise(&frame).unwrap();
        let res = residual(&frame, &default_denoiser()).unwrap();
        for y in 0..32 {
            for x in 0..48 {
                let back = res.values().get(x, y) + den.get(x, y);
                assert!((back - frame.get(x, y) as f32).abs() < 1e-3);
            }
        }
    }

    #[test]
    fn denoise_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let frame = frame_from_fn(32, 32, |_, _| rng.gen_range(0..=255));
        let a = default_denoiser().denoise(&frame).unwrap();
        let b = default_denoiser().denoise(&frame).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn planted_white_noise_lands_in_the_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let w = 128;
        let h = 128;
        // Smooth scene plus white noise of variance 4.
        let mut noise = Vec::with_capacity(w * h);
        let mut samples = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                let clean = 96.0 + 64.0 * (x as f64 / w as f64);
                let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
                let u2: f64 = rng.gen();
                let n = 2.0 * (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos() / 2.0
                    * 2.0;
                let planted = (clean + n).round().clamp(0.0, 255.0);
                noise.push(planted - clean.round());
                samples.push(planted as u8);
                let _ = y;
            }
        }
        let frame = LumaFrame::new(w, h, samples).unwrap();
        let res = residual::<f64>(&frame, &WaveletWiener::new(DenoiserParams::default())).unwrap();

        let a: Vec<f64> = res.values().as_slice().to_vec();
        let corr = pearson(&a, &noise);
        assert!(corr > 0.5, "residual/noise correlation {corr} too weak");
    }

    #[test]
    fn frame_smaller_than_window_is_rejected() {
        let frame = frame_from_fn(8, 8, |_, _| 100);
        let err = default_denoiser().denoise(&frame).unwrap_err();
        assert!(matches!(err, DenoiseError::TooSmall { window: 9, .. }));
    }

    fn pearson(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let ma = a.iter().sum::<f64>() / n;
        let mb = b.iter().sum::<f64>() / n;
        let mut dot = 0.0;
        let mut na = 0.0;
        let mut nb = 0.0;
        for (&x, &y) in a.iter().zip(b) {
            let dx = x - ma;
            let dy = y - mb;
            dot += dx * dy;
            na += dx * dx;
            nb += dy * dy;
        }
        dot / (na * nb).sqrt()
    }
}
