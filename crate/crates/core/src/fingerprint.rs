//! Per-video fingerprint estimation.
//!
//! A macroblock's noise survives compression only when some of its
//! transform residual's AC coefficients are nonzero, so each frame gets a
//! binary survival mask at macroblock granularity. The video fingerprint
//! is the masked, intensity-weighted aggregate of the per-frame noise
//! residuals,
//!
//!   K = Σ_j W_j·I_j·M_j / (Σ_j (I_j·M_j)² + 1),
//!
//! with the +1 keeping pixels masked out in every frame at exactly zero.
//! The optional enhancer suppresses scene detail by compressing large
//! fingerprint magnitudes through a four-branch odd exponential map with
//! cutover parameter α.

use std::io::{Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::coeffxml::{FrameCoeffs, MACROBLOCK_SIZE};
use crate::denoise::{self, Denoiser, NoiseResidual};
use crate::frameio::{LumaFrame, VideoFrameSet};
use crate::mat::Matrix;
use crate::scalar::Real;

#[derive(Debug, Error)]
pub enum FingerprintError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("empty video: a fingerprint needs at least one frame")]
    EmptyVideo,
    #[error("fingerprint {id:?} is already enhanced")]
    AlreadyEnhanced { id: String },
    #[error("enhancer alpha must be positive and finite, got {alpha}")]
    BadAlpha { alpha: f64 },
    #[error("unknown enhancer model {0:?}")]
    UnknownEnhancer(String),
    #[error("bad fingerprint file: {0}")]
    Format(String),
    #[error(transparent)]
    Denoise(#[from] denoise::DenoiseError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Binary survival mask of one frame, constant over each macroblock
/// footprint.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameMask {
    bits: Matrix<u8>,
}

impl FrameMask {
    pub fn width(&self) -> usize {
        self.bits.width()
    }

    pub fn height(&self) -> usize {
        self.bits.height()
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.bits.get(x, y)
    }

    pub fn bits(&self) -> &Matrix<u8> {
        &self.bits
    }

    /// Fraction of surviving pixels.
    pub fn alive_fraction(&self) -> f64 {
        let ones: usize = self.bits.as_slice().iter().map(|&b| b as usize).sum();
        ones as f64 / self.bits.len() as f64
    }
}

/// Builds the survival mask for one frame: a macroblock's 16x16
/// footprint (clipped at frame edges) is 1 iff any AC coefficient in any
/// of its matrices is nonzero. Pixels covered by no record stay 0.
pub fn build_mask(coeffs: &FrameCoeffs, width: usize, height: usize) -> FrameMask {
    let mut bits = Matrix::filled(width, height, 0u8);
    for mb in &coeffs.macroblocks {
        let alive = mb.has_nonzero_ac() as u8;
        let x0 = mb.x as usize;
        let y0 = mb.y as usize;
        debug_assert!(x0 < width && y0 < height, "macroblock position outside frame");
        for y in y0..(y0 + MACROBLOCK_SIZE).min(height) {
            for x in x0..(x0 + MACROBLOCK_SIZE).min(width) {
                bits.set(x, y, alive);
            }
        }
    }
    FrameMask { bits }
}

/// The stacked per-video mask; depth equals the frame count.
#[derive(Debug, Clone)]
pub struct VideoMask {
    masks: Vec<FrameMask>,
}

impl VideoMask {
    pub fn new(masks: Vec<FrameMask>) -> Result<Self, FingerprintError> {
        if let Some(first) = masks.first() {
            let (w, h) = (first.width(), first.height());
            if masks.iter().any(|m| m.width() != w || m.height() != h) {
                return Err(FingerprintError::ShapeMismatch(
                    "frame masks differ in resolution".into(),
                ));
            }
        }
        Ok(VideoMask { masks })
    }

    pub fn depth(&self) -> usize {
        self.masks.len()
    }

    pub fn masks(&self) -> &[FrameMask] {
        &self.masks
    }
}

/// Masks for every frame of a coefficient dump.
pub fn build_video_mask(
    coeffs: &[FrameCoeffs],
    width: usize,
    height: usize,
) -> Result<VideoMask, FingerprintError> {
    VideoMask::new(coeffs.iter().map(|fc| build_mask(fc, width, height)).collect())
}

/// Provenance carried alongside fingerprint values.
#[derive(Debug, Clone, PartialEq)]
pub struct FingerprintMeta {
    pub source_id: String,
    pub frame_count: u32,
    pub enhancer: Option<String>,
    pub alpha: Option<f64>,
}

/// A per-video fingerprint matrix, raw or enhanced.
#[derive(Debug, Clone, PartialEq)]
pub struct Fingerprint<T> {
    values: Matrix<T>,
    enhanced: bool,
    meta: FingerprintMeta,
}

impl<T: Real> Fingerprint<T> {
    /// Wraps raw (unenhanced) fingerprint values.
    pub fn unenhanced(values: Matrix<T>, source_id: impl Into<String>, frame_count: u32) -> Self {
        Fingerprint {
            values,
            enhanced: false,
            meta: FingerprintMeta {
                source_id: source_id.into(),
                frame_count,
                enhancer: None,
                alpha: None,
            },
        }
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

    pub fn is_enhanced(&self) -> bool {
        self.enhanced
    }

    pub fn meta(&self) -> &FingerprintMeta {
        &self.meta
    }

    pub fn id(&self) -> &str {
        &self.meta.source_id
    }
}

/// Eq-style masked aggregation of residuals into the video fingerprint.
/// Accumulation runs in f64, strictly in frame order.
pub fn aggregate<T: Real>(
    frames: &[LumaFrame],
    residuals: &[NoiseResidual<T>],
    masks: &VideoMask,
    source_id: &str,
) -> Result<Fingerprint<T>, FingerprintError> {
    let n = frames.len();
    if n == 0 {
        return Err(FingerprintError::EmptyVideo);
    }
    if residuals.len() != n || masks.depth() != n {
        return Err(FingerprintError::ShapeMismatch(format!(
            "{} frames, {} residuals, {} masks",
            n,
            residuals.len(),
            masks.depth()
        )));
    }
    let width = frames[0].width();
    let height = frames[0].height();
    let len = width * height;
    for j in 0..n {
        if frames[j].width() != width
            || frames[j].height() != height
            || residuals[j].width() != width
            || residuals[j].height() != height
            || masks.masks()[j].width() != width
            || masks.masks()[j].height() != height
        {
            return Err(FingerprintError::ShapeMismatch(format!(
                "frame {j} disagrees with {width}x{height}"
            )));
        }
    }

    let mut num = vec![0f64; len];
    let mut den = vec![0f64; len];
    for j in 0..n {
        let samples = frames[j].samples();
        let w = residuals[j].values().as_slice();
        let m = masks.masks()[j].bits().as_slice();
        for idx in 0..len {
            if m[idx] != 0 {
                let i = samples[idx] as f64;
                num[idx] += w[idx].as_f64() * i;
                den[idx] += i * i;
            }
        }
    }
    let values = Matrix::from_vec(
        width,
        height,
        (0..len).map(|idx| T::from_f64_lossy(num[idx] / (den[idx] + 1.0))).collect(),
    );
    Ok(Fingerprint::unenhanced(values, source_id, n as u32))
}

/// Registry name of the exponential scene-suppression enhancer.
pub const GAMMA3: &str = "gamma3";

/// Enhancer selection: a registry model name plus its α.
#[derive(Debug, Clone, PartialEq)]
pub struct EnhancerParams {
    pub model: String,
    pub alpha: f64,
}

impl EnhancerParams {
    pub fn gamma3(alpha: f64) -> Self {
        EnhancerParams { model: GAMMA3.to_string(), alpha }
    }
}

/// Pointwise fingerprint enhancer.
pub trait Enhancer: Send + Sync {
    fn name(&self) -> &'static str;
    fn apply(&self, k: f64) -> f64;
}

/// The four-branch odd exponential map with cutover at ±α: identity-like
/// saturation 1-e^{-K} inside [-α, α], exponential decay outside. Output
/// magnitude never exceeds 1-e^{-α}.
#[derive(Debug, Clone)]
pub struct ExponentialSuppression {
    alpha: f64,
}

impl ExponentialSuppression {
    pub fn new(alpha: f64) -> Result<Self, FingerprintError> {
        if !alpha.is_finite() || alpha <= 0.0 {
            return Err(FingerprintError::BadAlpha { alpha });
        }
        Ok(ExponentialSuppression { alpha })
    }
}

impl Enhancer for ExponentialSuppression {
    fn name(&self) -> &'static str {
        GAMMA3
    }

    fn apply(&self, k: f64) -> f64 {
        let a = self.alpha;
        if k >= 0.0 {
            if k <= a {
                1.0 - (-k).exp()
            } else {
                (1.0 - (-a).exp()) * (a - k).exp()
            }
        } else if k >= -a {
            -1.0 + k.exp()
        } else {
            (-1.0 + (-a).exp()) * (a + k).exp()
        }
    }
}

pub fn enhancer_by_name(name: &str, alpha: f64) -> Result<Box<dyn Enhancer>, FingerprintError> {
    match name {
        GAMMA3 => Ok(Box::new(ExponentialSuppression::new(alpha)?)),
        other => Err(FingerprintError::UnknownEnhancer(other.to_string())),
    }
}

/// Applies the selected enhancer to a raw fingerprint.
pub fn enhance<T: Real>(
    fp: &Fingerprint<T>,
    params: &EnhancerParams,
) -> Result<Fingerprint<T>, FingerprintError> {
    if fp.enhanced {
        return Err(FingerprintError::AlreadyEnhanced { id: fp.meta.source_id.clone() });
    }
    let enhancer = enhancer_by_name(&params.model, params.alpha)?;
    let values = fp.values.map(|k| T::from_f64_lossy(enhancer.apply(k.as_f64())));
    Ok(Fingerprint {
        values,
        enhanced: true,
        meta: FingerprintMeta {
            source_id: fp.meta.source_id.clone(),
            frame_count: fp.meta.frame_count,
            enhancer: Some(enhancer.name().to_string()),
            alpha: Some(params.alpha),
        },
    })
}

/// Number of frames denoised per parallel batch; aggregation itself stays
/// strictly frame-ordered so results are identical across thread counts.
fn denoise_chunk_len() -> usize {
    rayon::current_num_threads().max(2)
}

/// Full single-video estimation: residuals, masks, aggregate and the
/// optional enhancement.
pub fn extract_video_fingerprint<T: Real>(
    set: &VideoFrameSet,
    denoiser: &dyn Denoiser<T>,
    eparams: Option<&EnhancerParams>,
    source_id: &str,
) -> Result<Fingerprint<T>, FingerprintError> {
    use rayon::prelude::*;

    if set.is_empty() {
        return Err(FingerprintError::EmptyVideo);
    }
    let masks = build_video_mask(&set.coeffs, set.width, set.height)?;

    let len = set.width * set.height;
    let mut num = vec![0f64; len];
    let mut den = vec![0f64; len];
    let chunk_len = denoise_chunk_len();
    for (c, chunk) in set.frames.chunks(chunk_len).enumerate() {
        let residuals: Vec<NoiseResidual<T>> = chunk
            .par_iter()
            .map(|frame| denoise::residual(frame, denoiser))
            .collect::<Result<_, _>>()?;
        for (off, (frame, res)) in chunk.iter().zip(&residuals).enumerate() {
            let j = c * chunk_len + off;
            let samples = frame.samples();
            let w = res.values().as_slice();
            let m = masks.masks()[j].bits().as_slice();
            for idx in 0..len {
                if m[idx] != 0 {
                    let i = samples[idx] as f64;
                    num[idx] += w[idx].as_f64() * i;
                    den[idx] += i * i;
                }
            }
        }
    }
    let values = Matrix::from_vec(
        set.width,
        set.height,
        (0..len).map(|idx| T::from_f64_lossy(num[idx] / (den[idx] + 1.0))).collect(),
    );
    let raw = Fingerprint::unenhanced(values, source_id, set.len() as u32);
    match eparams {
        Some(p) => enhance(&raw, p),
        None => Ok(raw),
    }
}

const MAGIC: &[u8; 4] = b"VFP1";
const MAX_DIM: u32 = 1 << 20;

/// Writes the binary fingerprint format: magic "VFP1", little-endian u32
/// width, u32 height, u8 enhanced flag, f32 alpha (0 if unenhanced), u32
/// frame count, then width*height f32 values row-major.
pub fn write_fingerprint<T: Real>(
    fp: &Fingerprint<T>,
    out: &mut impl Write,
) -> std::io::Result<()> {
    out.write_all(MAGIC)?;
    out.write_all(&(fp.width() as u32).to_le_bytes())?;
    out.write_all(&(fp.height() as u32).to_le_bytes())?;
    out.write_all(&[fp.enhanced as u8])?;
    let alpha = fp.meta.alpha.unwrap_or(0.0) as f32;
    out.write_all(&alpha.to_le_bytes())?;
    out.write_all(&fp.meta.frame_count.to_le_bytes())?;
    let mut buf = Vec::with_capacity(fp.values.len() * 4);
    for v in fp.values.as_slice() {
        buf.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
    }
    out.write_all(&buf)
}

/// Reads the binary fingerprint format. The format does not record the
/// source video or enhancer name, so the caller supplies an id.
pub fn read_fingerprint(
    input: &mut impl Read,
    source_id: &str,
) -> Result<Fingerprint<f32>, FingerprintError> {
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(FingerprintError::Format(format!("bad magic {magic:?}")));
    }
    let mut u32buf = [0u8; 4];
    input.read_exact(&mut u32buf)?;
    let width = u32::from_le_bytes(u32buf);
    input.read_exact(&mut u32buf)?;
    let height = u32::from_le_bytes(u32buf);
    if width == 0 || height == 0 || width > MAX_DIM || height > MAX_DIM {
        return Err(FingerprintError::Format(format!("implausible dimensions {width}x{height}")));
    }
    let mut flag = [0u8; 1];
    input.read_exact(&mut flag)?;
    let enhanced = match flag[0] {
        0 => false,
        1 => true,
        other => return Err(FingerprintError::Format(format!("bad enhanced flag {other}"))),
    };
    input.read_exact(&mut u32buf)?;
    let alpha = f32::from_le_bytes(u32buf);
    input.read_exact(&mut u32buf)?;
    let frame_count = u32::from_le_bytes(u32buf);

    let len = width as usize * height as usize;
    let mut raw = vec![0u8; len * 4];
    input.read_exact(&mut raw)?;
    let mut values = Vec::with_capacity(len);
    for chunk in raw.chunks_exact(4) {
        let v = f32::from_le_bytes(chunk.try_into().unwrap());
        if !v.is_finite() {
            return Err(FingerprintError::Format("non-finite fingerprint value".into()));
        }
        values.push(v);
    }
    Ok(Fingerprint {
        values: Matrix::from_vec(width as usize, height as usize, values),
        enhanced,
        meta: FingerprintMeta {
            source_id: source_id.to_string(),
            frame_count,
            enhancer: None,
            alpha: if enhanced { Some(alpha as f64) } else { None },
        },
    })
}

pub fn write_fingerprint_file<T: Real>(fp: &Fingerprint<T>, path: &Path) -> std::io::Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_fingerprint(fp, &mut out)?;
    out.flush()
}

/// Reads a fingerprint file; the file stem becomes the source id unless
/// one is given.
pub fn read_fingerprint_file(
    path: &Path,
    source_id: Option<&str>,
) -> Result<Fingerprint<f32>, FingerprintError> {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("fingerprint").to_string();
    let id = source_id.unwrap_or(&stem);
    let mut input = std::io::BufReader::new(std::fs::File::open(path)?);
    read_fingerprint(&mut input, id)
}
