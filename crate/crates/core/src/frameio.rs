//! Loading decoded frames as 8-bit luminance planes and pairing them
//! with their coefficient dumps.
//!
//! Supported inputs are binary PGM (P5, 8-bit) and PNG (8-bit grayscale
//! or RGB). Color is reduced to luma with BT.601 weights, rounded to the
//! nearest integer.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::coeffxml::{macroblock_grid, FrameCoeffs};
use crate::mat::Matrix;
use crate::scalar::Real;

#[derive(Debug, Error)]
pub enum FrameIoError {
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("unsupported frame format: {path}")]
    UnsupportedFormat { path: PathBuf },
    #[error("frame sequence gap: missing index {index}")]
    Gap { index: u64 },
    #[error("duplicate frame index {index} in sequence")]
    DuplicateIndex { index: u64 },
    #[error("no frames matching pattern {pattern:?} in {dir}")]
    NoFrames { dir: PathBuf, pattern: String },
    #[error("pattern {pattern:?} must contain a {{index}} placeholder")]
    BadPattern { pattern: String },
    #[error("mixed frame resolutions: {first_width}x{first_height} then {width}x{height}")]
    MixedResolution { first_width: usize, first_height: usize, width: usize, height: usize },
    #[error("frame/coefficient alignment error: {frames} vs {coeffs}")]
    LengthMismatch { frames: usize, coeffs: usize },
    #[error("frame/coefficient alignment error: empty video")]
    EmptyVideo,
    #[error("picture {picture_id}: macroblock at ({x}, {y}) outside {width}x{height} frames")]
    CoeffOutOfFrame { picture_id: i64, x: u32, y: u32, width: usize, height: usize },
    #[error("picture {picture_id}: {count} macroblocks but {expected} grid cells for {width}x{height} frames")]
    CoeffGridMismatch { picture_id: i64, count: usize, expected: usize, width: usize, height: usize },
    #[error("bad frame dimensions {width}x{height} for {len} samples")]
    BadDimensions { width: usize, height: usize, len: usize },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Decoded 8-bit luminance plane of one frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LumaFrame {
    width: usize,
    height: usize,
    samples: Vec<u8>,
}

impl LumaFrame {
    pub fn new(width: usize, height: usize, samples: Vec<u8>) -> Result<Self, FrameIoError> {
        if width == 0 || height == 0 || samples.len() != width * height {
            return Err(FrameIoError::BadDimensions { width, height, len: samples.len() });
        }
        Ok(LumaFrame { width, height, samples })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.samples[y * self.width + x]
    }

    pub fn samples(&self) -> &[u8] {
        &self.samples
    }

    pub fn to_matrix<T: Real>(&self) -> Matrix<T> {
        Matrix::from_vec(
            self.width,
            self.height,
            self.samples.iter().map(|&v| T::from_f64_lossy(v as f64)).collect(),
        )
    }
}

/// BT.601 luma from an 8-bit RGB triple, rounded to nearest.
pub fn bt601_luma(r: u8, g: u8, b: u8) -> u8 {
    let y = 0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64;
    y.round().clamp(0.0, 255.0) as u8
}

/// Loads a single frame, dispatching on the file extension.
pub fn load_luma(path: &Path) -> Result<LumaFrame, FrameIoError> {
    let ext = path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase());
    match ext.as_deref() {
        Some("pgm") => load_pgm(path),
        Some("png") => load_png(path),
        _ => Err(FrameIoError::UnsupportedFormat { path: path.to_path_buf() }),
    }
}

fn format_err(path: &Path, message: impl Into<String>) -> FrameIoError {
    FrameIoError::Format { path: path.to_path_buf(), message: message.into() }
}

fn load_pgm(path: &Path) -> Result<LumaFrame, FrameIoError> {
    let bytes = fs::read(path)?;
    if bytes.len() < 2 || &bytes[0..2] != b"P5" {
        return Err(format_err(path, "not a binary PGM (missing P5 magic)"));
    }
    let mut pos = 2usize;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        // Skip whitespace and '#' comments between header fields.
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while let Some(&b) = bytes.get(pos) {
                        pos += 1;
                        if b == b'\n' {
                            break;
                        }
                    }
                }
                Some(_) => break,
                None => return Err(format_err(path, "truncated PGM header")),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(|b| b.is_ascii_digit()) {
            pos += 1;
        }
        if pos == start {
            return Err(format_err(path, "non-numeric PGM header field"));
        }
        let text = std::str::from_utf8(&bytes[start..pos]).unwrap();
        *field = text.parse().map_err(|_| format_err(path, "bad PGM header field"))?;
    }
    let [width, height, maxval] = fields;
    if maxval == 0 || maxval > 255 {
        return Err(format_err(path, format!("unsupported PGM maxval {maxval} (8-bit only)")));
    }
    // Exactly one whitespace byte separates the header from the raster.
    if !bytes.get(pos).is_some_and(|b| b.is_ascii_whitespace()) {
        return Err(format_err(path, "missing raster separator"));
    }
    pos += 1;
    let need = width
        .checked_mul(height)
        .ok_or_else(|| format_err(path, "implausible PGM dimensions"))?;
    if bytes.len() < pos + need {
        return Err(format_err(path, "truncated PGM raster"));
    }
    LumaFrame::new(width, height, bytes[pos..pos + need].to_vec())
}

/// Writes an 8-bit binary PGM.
pub fn write_pgm(frame: &LumaFrame, out: &mut impl Write) -> std::io::Result<()> {
    write!(out, "P5\n{} {}\n255\n", frame.width, frame.height)?;
    out.write_all(&frame.samples)
}

pub fn write_pgm_file(frame: &LumaFrame, path: &Path) -> std::io::Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    write_pgm(frame, &mut f)?;
    f.flush()
}

fn load_png(path: &Path) -> Result<LumaFrame, FrameIoError> {
    let file = fs::File::open(path)?;
    let decoder = png::Decoder::new(std::io::BufReader::new(file));
    let mut reader = decoder.read_info().map_err(|e| format_err(path, e.to_string()))?;
    let mut buf = vec![0u8; reader.output_buffer_size()];
    let info = reader.next_frame(&mut buf).map_err(|e| format_err(path, e.to_string()))?;
    if info.bit_depth != png::BitDepth::Eight {
        return Err(format_err(path, "only 8-bit PNG supported"));
    }
    let (width, height) = (info.width as usize, info.height as usize);
    let data = &buf[..info.buffer_size()];
    let samples = match info.color_type {
        png::ColorType::Grayscale => data.to_vec(),
        png::ColorType::Rgb => {
            data.chunks_exact(3).map(|px| bt601_luma(px[0], px[1], px[2])).collect()
        }
        other => return Err(format_err(path, format!("unsupported PNG color type {other:?}"))),
    };
    LumaFrame::new(width, height, samples)
}

/// Splits a `{index}` filename template into prefix and suffix.
fn split_pattern(pattern: &str) -> Result<(&str, &str), FrameIoError> {
    pattern
        .split_once("{index}")
        .ok_or_else(|| FrameIoError::BadPattern { pattern: pattern.to_string() })
}

/// Loads a numbered frame sequence in index order.
///
/// The template uses a `{index}` placeholder (plain decimal), e.g.
/// `f{index}.pgm`. Numbering must start at 0 or 1 and be consecutive.
pub fn load_frame_sequence(dir: &Path, pattern: &str) -> Result<Vec<LumaFrame>, FrameIoError> {
    let (prefix, suffix) = split_pattern(pattern)?;
    let mut by_index: BTreeMap<u64, PathBuf> = BTreeMap::new();
    for entry in fs::read_dir(dir)? {
        let entry = entry?;
        let name = entry.file_name();
        let Some(name) = name.to_str() else { continue };
        let Some(rest) = name.strip_prefix(prefix) else { continue };
        let Some(middle) = rest.strip_suffix(suffix) else { continue };
        if middle.is_empty() || !middle.bytes().all(|b| b.is_ascii_digit()) {
            continue;
        }
        let index: u64 = middle
            .parse()
            .map_err(|_| format_err(&entry.path(), "frame index out of range"))?;
        if by_index.insert(index, entry.path()).is_some() {
            return Err(FrameIoError::DuplicateIndex { index });
        }
    }
    if by_index.is_empty() {
        return Err(FrameIoError::NoFrames { dir: dir.to_path_buf(), pattern: pattern.to_string() });
    }

    let first = *by_index.keys().next().unwrap();
    let last = *by_index.keys().next_back().unwrap();
    let start = if first <= 1 { first } else { 1 };
    for index in start..=last {
        if !by_index.contains_key(&index) {
            return Err(FrameIoError::Gap { index });
        }
    }

    let mut frames = Vec::with_capacity(by_index.len());
    for path in by_index.values() {
        let frame = load_luma(path)?;
        if let Some(prev) = frames.last() {
            let prev: &LumaFrame = prev;
            if prev.width != frame.width || prev.height != frame.height {
                return Err(FrameIoError::MixedResolution {
                    first_width: prev.width,
                    first_height: prev.height,
                    width: frame.width,
                    height: frame.height,
                });
            }
        }
        frames.push(frame);
    }
    Ok(frames)
}

/// Frames positionally paired with their coefficient dump.
#[derive(Debug, Clone)]
pub struct VideoFrameSet {
    pub frames: Vec<LumaFrame>,
    pub coeffs: Vec<FrameCoeffs>,
    pub width: usize,
    pub height: usize,
}

impl VideoFrameSet {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

/// Pairs the k-th frame with the k-th coefficient record. Decode order
/// and display order are assumed to agree; strict length equality keeps
/// the pairing honest.
pub fn align(
    frames: Vec<LumaFrame>,
    coeffs: Vec<FrameCoeffs>,
    strict: bool,
) -> Result<VideoFrameSet, FrameIoError> {
    if frames.len() != coeffs.len() {
        return Err(FrameIoError::LengthMismatch { frames: frames.len(), coeffs: coeffs.len() });
    }
    if frames.is_empty() {
        return Err(FrameIoError::EmptyVideo);
    }
    let width = frames[0].width;
    let height = frames[0].height;
    for f in &frames[1..] {
        if f.width != width || f.height != height {
            return Err(FrameIoError::MixedResolution {
                first_width: width,
                first_height: height,
                width: f.width,
                height: f.height,
            });
        }
    }
    let (gw, gh) = macroblock_grid(width, height);
    for fc in &coeffs {
        for mb in &fc.macroblocks {
            if mb.x as usize >= width || mb.y as usize >= height {
                return Err(FrameIoError::CoeffOutOfFrame {
                    picture_id: fc.picture_id,
                    x: mb.x,
                    y: mb.y,
                    width,
                    height,
                });
            }
        }
        if strict && fc.macroblocks.len() != gw * gh {
            return Err(FrameIoError::CoeffGridMismatch {
                picture_id: fc.picture_id,
                count: fc.macroblocks.len(),
                expected: gw * gh,
                width,
                height,
            });
        }
    }
    Ok(VideoFrameSet { frames, coeffs, width, height })
}
