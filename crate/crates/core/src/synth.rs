//! Synthetic devices, videos, frames and coefficient dumps with known
//! ground truth: the verification oracle for the whole pipeline.
//!
//! Each device gets a zero-mean unit-variance fingerprint; each video
//! renders a per-video scene through the multiplicative sensor model
//! I = clip(round(scene * (1 + strength * K) + shot noise)) and a
//! coefficient dump whose dead blocks (all-zero AC) are drawn per frame.
//! Every random stream derives from (seed, device, video), so outputs
//! are byte-identical no matter how generation is parallelized.

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coeffxml::{
    macroblock_grid, write_coeff_dump, CoeffBlock, CoeffXmlError, FrameCoeffs, MacroblockRecord,
    ParseMode, SliceType, MACROBLOCK_SIZE,
};
use crate::fingerprint::{self, Fingerprint, FingerprintError};
use crate::frameio::{self, FrameIoError, LumaFrame, VideoFrameSet};
use crate::mat::Matrix;
use crate::metrics::GroundTruth;
use crate::similarity::{self, SimilarityError};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("bad synth config: {0}")]
    BadConfig(String),
    #[error("no estimated fingerprint for video {0:?}")]
    MissingEstimate(String),
    #[error(transparent)]
    Similarity(#[from] SimilarityError),
    #[error(transparent)]
    Fingerprint(#[from] FingerprintError),
    #[error(transparent)]
    Frames(#[from] FrameIoError),
    #[error(transparent)]
    Coeffs(#[from] CoeffXmlError),
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Scene content rendered behind the planted fingerprint.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SceneModel {
    /// Constant mid-gray.
    Flat,
    /// Linear ramp with a per-video orientation.
    Gradient,
    /// Smoothed two-octave value noise, per-video seeded.
    Textured,
}

impl SceneModel {
    pub fn name(self) -> &'static str {
        match self {
            SceneModel::Flat => "flat",
            SceneModel::Gradient => "gradient",
            SceneModel::Textured => "textured",
        }
    }
}

impl std::str::FromStr for SceneModel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "flat" => Ok(SceneModel::Flat),
            "gradient" => Ok(SceneModel::Gradient),
            "textured" => Ok(SceneModel::Textured),
            other => Err(format!("unknown scene model {other:?}")),
        }
    }
}

/// Per-device video counts: one shared count or an explicit list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum VideosPerDevice {
    Uniform(usize),
    PerDevice(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub devices: usize,
    pub videos_per_device: VideosPerDevice,
    pub frames_per_video: usize,
    pub width: usize,
    pub height: usize,
    pub strength: f64,
    pub scene: SceneModel,
    pub dead_block_fraction: f64,
    pub shot_noise_variance: f64,
    pub seed: u64,
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |msg: String| Err(SynthError::BadConfig(msg));
        if self.devices == 0 {
            return bad("need at least one device".into());
        }
        match &self.videos_per_device {
            VideosPerDevice::Uniform(0) => return bad("videos per device must be >= 1".into()),
            VideosPerDevice::PerDevice(counts) => {
                if counts.len() != self.devices {
                    return bad(format!(
                        "{} per-device counts for {} devices",
                        counts.len(),
                        self.devices
                    ));
                }
                if counts.contains(&0) {
                    return bad("videos per device must be >= 1".into());
                }
            }
            _ => {}
        }
        if self.frames_per_video == 0 {
            return bad("frames per video must be >= 1".into());
        }
        if self.width == 0 || self.height == 0 {
            return bad("resolution must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.dead_block_fraction) {
            return bad(format!("dead-block fraction {} not in [0,1]", self.dead_block_fraction));
        }
        if !self.strength.is_finite() || self.strength < 0.0 {
            return bad(format!("strength {} must be nonnegative", self.strength));
        }
        if !self.shot_noise_variance.is_finite() || self.shot_noise_variance < 0.0 {
            return bad(format!("shot noise variance {} must be nonnegative", self.shot_noise_variance));
        }
        Ok(())
    }

    pub fn videos_for(&self, device_index: usize) -> usize {
        match &self.videos_per_device {
            VideosPerDevice::Uniform(n) => *n,
            VideosPerDevice::PerDevice(counts) => counts[device_index],
        }
    }

    pub fn device_id(&self, device_index: usize) -> String {
        format!("D{:02}", device_index + 1)
    }

    pub fn video_id(&self, device_index: usize, video_index: usize) -> String {
        format!("{}-v{:02}", self.device_id(device_index), video_index + 1)
    }
}

/// Independent deterministic stream for one (purpose, device, video)
/// triple.
fn stream_rng(seed: u64, purpose: u64, device: u64, video: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[0..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&purpose.to_le_bytes());
    key[16..24].copy_from_slice(&device.to_le_bytes());
    key[24..32].copy_from_slice(&video.to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// A synthetic device: id plus its true fingerprint (zero mean, unit
/// variance).
#[derive(Debug, Clone)]
pub struct SynthDevice {
    pub id: String,
    pub fingerprint: Matrix<f64>,
}

pub fn make_device(config: &SynthConfig, device_index: usize) -> SynthDevice {
    let mut rng = stream_rng(config.seed, 1, device_index as u64, 0);
    let len = config.width * config.height;
    let mut values: Vec<f64> = (0..len).map(|_| gaussian(&mut rng)).collect();
    let mean = values.iter().sum::<f64>() / len as f64;
    for v in &mut values {
        *v -= mean;
    }
    let var = values.iter().map(|v| v * v).sum::<f64>() / len as f64;
    let std = var.sqrt();
    if std > 0.0 {
        for v in &mut values {
            *v /= std;
        }
    }
    SynthDevice {
        id: config.device_id(device_index),
        fingerprint: Matrix::from_vec(config.width, config.height, values),
    }
}

/// Smoothed lattice value noise in [-1, 1]. The lattice phase is
/// randomized per call so the interpolation structure does not line up
/// across videos and masquerade as a shared fingerprint.
fn value_noise(rng: &mut ChaCha8Rng, width: usize, height: usize, cell: usize) -> Matrix<f64> {
    let gw = width.div_ceil(cell) + 3;
    let gh = height.div_ceil(cell) + 3;
    let lattice: Vec<f64> = (0..gw * gh).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let ox: f64 = rng.gen_range(0.0..cell as f64);
    let oy: f64 = rng.gen_range(0.0..cell as f64);
    let smooth = |t: f64| t * t * (3.0 - 2.0 * t);
    Matrix::from_fn(width, height, |x, y| {
        let fx = (x as f64 + ox) / cell as f64;
        let fy = (y as f64 + oy) / cell as f64;
        let ix = fx as usize;
        let iy = fy as usize;
        let tx = smooth(fx - ix as f64);
        let ty = smooth(fy - iy as f64);
        let at = |gx: usize, gy: usize| lattice[gy * gw + gx];
        let top = at(ix, iy) * (1.0 - tx) + at(ix + 1, iy) * tx;
        let bot = at(ix, iy + 1) * (1.0 - tx) + at(ix + 1, iy + 1) * tx;
        top * (1.0 - ty) + bot * ty
    })
}

/// Per-video scene plane on the 0-255 scale.
fn make_scene(rng: &mut ChaCha8Rng, config: &SynthConfig) -> Matrix<f64> {
    let (w, h) = (config.width, config.height);
    match config.scene {
        SceneModel::Flat => Matrix::filled(w, h, 128.0),
        SceneModel::Gradient => {
            let theta: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            let (c, s) = (theta.cos(), theta.sin());
            Matrix::from_fn(w, h, |x, y| {
                let nx = if w > 1 { x as f64 / (w - 1) as f64 - 0.5 } else { 0.0 };
                let ny = if h > 1 { y as f64 / (h - 1) as f64 - 0.5 } else { 0.0 };
                128.0 + 113.0 * (nx * c + ny * s)
            })
        }
        SceneModel::Textured => {
            let coarse = value_noise(rng, w, h, 32.min(w).min(h).max(2));
            let fine = value_noise(rng, w, h, 8.min(w).min(h).max(2));
            Matrix::from_fn(w, h, |x, y| {
                128.0 + 85.0 * (0.6 * coarse.get(x, y) + 0.4 * fine.get(x, y))
            })
        }
    }
}

/// Everything generated for one video, including the planted dead-block
/// layout (raster order per frame) that the masks must reproduce.
#[derive(Debug, Clone)]
pub struct VideoPlan {
    pub frames: Vec<LumaFrame>,
    pub coeffs: Vec<FrameCoeffs>,
    pub dead_blocks: Vec<Vec<bool>>,
}

pub fn generate_video(
    config: &SynthConfig,
    device: &SynthDevice,
    device_index: usize,
    video_index: usize,
) -> VideoPlan {
    let mut rng = stream_rng(config.seed, 2, device_index as u64, video_index as u64);
    let scene = make_scene(&mut rng, config);
    let sigma = config.shot_noise_variance.sqrt();
    let len = config.width * config.height;

    let mut frames = Vec::with_capacity(config.frames_per_video);
    for _ in 0..config.frames_per_video {
        let mut samples = Vec::with_capacity(len);
        let k = device.fingerprint.as_slice();
        let sc = scene.as_slice();
        for idx in 0..len {
            let value = sc[idx] * (1.0 + config.strength * k[idx]) + sigma * gaussian(&mut rng);
            samples.push(value.round().clamp(0.0, 255.0) as u8);
        }
        frames.push(LumaFrame::new(config.width, config.height, samples).unwrap());
    }

    let (gw, gh) = macroblock_grid(config.width, config.height);
    let mut coeffs = Vec::with_capacity(config.frames_per_video);
    let mut dead_blocks = Vec::with_capacity(config.frames_per_video);
    for j in 0..config.frames_per_video {
        let slice_type = match j {
            0 => SliceType::I,
            j if j % 2 == 1 => SliceType::P,
            _ => SliceType::B,
        };
        let pred_mode = match slice_type {
            SliceType::I => "BLOCK_TYPE_I",
            SliceType::P => "BLOCK_TYPE_P",
            SliceType::B => "BLOCK_TYPE_B",
        };
        let mut records = Vec::with_capacity(gw * gh);
        let mut dead = Vec::with_capacity(gw * gh);
        for cy in 0..gh {
            for cx in 0..gw {
                let is_dead = rng.gen::<f64>() < config.dead_block_fraction;
                let block = if is_dead {
                    // Dead: all AC zero; the DC term may still be set.
                    let mut rows = vec![vec![0i32; 4]; 4];
                    rows[0][0] = rng.gen_range(-7..=7);
                    CoeffBlock::from_rows(&rows).unwrap()
                } else {
                    let mut rows: Vec<Vec<i32>> =
                        (0..4).map(|_| (0..4).map(|_| rng.gen_range(-7..=7)).collect()).collect();
                    // Force at least one nonzero AC coefficient.
                    let pos = rng.gen_range(1..16);
                    let mut v = rng.gen_range(1..=7);
                    if rng.gen::<bool>() {
                        v = -v;
                    }
                    rows[pos / 4][pos % 4] = v;
                    CoeffBlock::from_rows(&rows).unwrap()
                };
                records.push(MacroblockRecord {
                    num: (cy * gw + cx) as u32,
                    x: (cx * MACROBLOCK_SIZE) as u32,
                    y: (cy * MACROBLOCK_SIZE) as u32,
                    pred_mode: pred_mode.to_string(),
                    coeffs: vec![block],
                });
                dead.push(is_dead);
            }
        }
        coeffs.push(FrameCoeffs {
            picture_id: j as i64,
            poc: j as i64,
            slice_type,
            macroblocks: records,
        });
        dead_blocks.push(dead);
    }

    VideoPlan { frames, coeffs, dead_blocks }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ManifestDevice {
    pub id: String,
    pub fingerprint: String,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ManifestVideo {
    pub id: String,
    pub device: String,
    pub frames_dir: String,
    pub pattern: String,
    pub coeffs: String,
    pub frame_count: usize,
}

/// Index of a generated dataset; all paths are relative to the manifest's
/// directory.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Manifest {
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    pub frames_per_video: usize,
    pub strength: f64,
    pub scene: String,
    pub dead_block_fraction: f64,
    pub shot_noise_variance: f64,
    pub labels: String,
    pub devices: Vec<ManifestDevice>,
    pub videos: Vec<ManifestVideo>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self, SynthError> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), SynthError> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer_pretty(&mut out, self)?;
        out.write_all(b"\n")?;
        out.flush()?;
        Ok(())
    }

    pub fn labels_path(&self, base: &Path) -> PathBuf {
        base.join(&self.labels)
    }

    /// Loads one video's frames and coefficient dump as an aligned set.
    pub fn load_video(
        &self,
        base: &Path,
        video: &ManifestVideo,
        mode: ParseMode,
    ) -> Result<VideoFrameSet, SynthError> {
        let frames = frameio::load_frame_sequence(&base.join(&video.frames_dir), &video.pattern)?;
        let file = std::fs::File::open(base.join(&video.coeffs))?;
        let parsed = crate::coeffxml::parse_coeff_dump(
            std::io::BufReader::new(file),
            self.width,
            self.height,
            mode,
        )?;
        Ok(frameio::align(frames, parsed.frames, mode == ParseMode::Strict)?)
    }
}

/// Generates the dataset under `out`: frames as PGM sequences, one
/// coefficient dump per video, true device fingerprints, labels.csv and
/// manifest.json.
pub fn generate_dataset(config: &SynthConfig, out: &Path) -> Result<Manifest, SynthError> {
    config.validate()?;
    std::fs::create_dir_all(out.join("devices"))?;

    let devices: Vec<SynthDevice> = (0..config.devices).map(|d| make_device(config, d)).collect();
    let mut manifest_devices = Vec::with_capacity(devices.len());
    for device in &devices {
        let rel = format!("devices/{}.vfp", device.id);
        let fp32 = Fingerprint::<f32>::unenhanced(
            device.fingerprint.map(|v| v as f32),
            device.id.clone(),
            0,
        );
        fingerprint::write_fingerprint_file(&fp32, &out.join(&rel))?;
        manifest_devices.push(ManifestDevice { id: device.id.clone(), fingerprint: rel });
    }

    let jobs: Vec<(usize, usize)> = (0..config.devices)
        .flat_map(|d| (0..config.videos_for(d)).map(move |v| (d, v)))
        .collect();
    let videos: Vec<ManifestVideo> = jobs
        .par_iter()
        .map(|&(d, v)| -> Result<ManifestVideo, SynthError> {
            let id = config.video_id(d, v);
            let video_dir = out.join("videos").join(&id);
            let frames_dir = video_dir.join("frames");
            std::fs::create_dir_all(&frames_dir)?;
            let plan = generate_video(config, &devices[d], d, v);
            for (j, frame) in plan.frames.iter().enumerate() {
                frameio::write_pgm_file(frame, &frames_dir.join(format!("f{j}.pgm")))?;
            }
            let mut xml = std::io::BufWriter::new(
                std::fs::File::create(video_dir.join("coeffs.xml"))?,
            );
            write_coeff_dump(&plan.coeffs, &mut xml)?;
            xml.flush()?;
            Ok(ManifestVideo {
                id: id.clone(),
                device: config.device_id(d),
                frames_dir: format!("videos/{id}/frames"),
                pattern: "f{index}.pgm".to_string(),
                coeffs: format!("videos/{id}/coeffs.xml"),
                frame_count: config.frames_per_video,
            })
        })
        .collect::<Result<_, _>>()?;

    let truth = GroundTruth::from_pairs(
        videos.iter().map(|v| (v.id.clone(), v.device.clone())),
    )
    .map_err(|e| SynthError::Manifest(e.to_string()))?;
    let mut labels = std::io::BufWriter::new(std::fs::File::create(out.join("labels.csv"))?);
    truth.write_csv(&mut labels)?;
    labels.flush()?;

    let manifest = Manifest {
        seed: config.seed,
        width: config.width,
        height: config.height,
        frames_per_video: config.frames_per_video,
        strength: config.strength,
        scene: config.scene.name().to_string(),
        dead_block_fraction: config.dead_block_fraction,
        shot_noise_variance: config.shot_noise_variance,
        labels: "labels.csv".to_string(),
        devices: manifest_devices,
        videos,
    };
    manifest.save(&out.join("manifest.json"))?;
    Ok(manifest)
}

/// Per-video score against the planted fingerprint.
#[derive(Debug, Clone)]
pub struct PlantScore {
    pub video_id: String,
    pub device_id: String,
    pub corr_to_true: f64,
}

/// Oracle report: recovery of the planted fingerprints plus the
/// same-device vs cross-device correlation margin of the estimates.
#[derive(Debug, Clone)]
pub struct PlantReport {
    pub per_video: Vec<PlantScore>,
    pub same_device_mean: Option<f64>,
    pub cross_device_mean: Option<f64>,
}

impl PlantReport {
    /// Same-device minus cross-device mean; `None` when either side has
    /// no pairs (e.g. a single device).
    pub fn margin(&self) -> Option<f64> {
        match (self.same_device_mean, self.cross_device_mean) {
            (Some(s), Some(c)) => Some(s - c),
            _ => None,
        }
    }
}

/// Checks estimated fingerprints against the manifest's planted truth.
pub fn plant_check(
    manifest: &Manifest,
    base: &Path,
    estimates: &[Fingerprint<f32>],
) -> Result<PlantReport, SynthError> {
    let by_id: std::collections::BTreeMap<&str, &Fingerprint<f32>> =
        estimates.iter().map(|fp| (fp.id(), fp)).collect();

    let mut true_fps: std::collections::BTreeMap<&str, Fingerprint<f32>> = Default::default();
    for device in &manifest.devices {
        let fp = fingerprint::read_fingerprint_file(
            &base.join(&device.fingerprint),
            Some(&device.id),
        )?;
        true_fps.insert(device.id.as_str(), fp);
    }

    let mut per_video = Vec::with_capacity(manifest.videos.len());
    for video in &manifest.videos {
        let est = by_id
            .get(video.id.as_str())
            .ok_or_else(|| SynthError::MissingEstimate(video.id.clone()))?;
        let truth = true_fps
            .get(video.device.as_str())
            .ok_or_else(|| SynthError::Manifest(format!("no device {:?}", video.device)))?;
        per_video.push(PlantScore {
            video_id: video.id.clone(),
            device_id: video.device.clone(),
            corr_to_true: similarity::correlation(est, truth)?,
        });
    }

    let mut same = Vec::new();
    let mut cross = Vec::new();
    for i in 0..manifest.videos.len() {
        for j in (i + 1)..manifest.videos.len() {
            let a = &manifest.videos[i];
            let b = &manifest.videos[j];
            let corr = similarity::correlation(
                by_id[a.id.as_str()],
                by_id[b.id.as_str()],
            )?;
            if a.device == b.device {
                same.push(corr);
            } else {
                cross.push(corr);
            }
        }
    }
    let mean = |v: &[f64]| {
        if v.is_empty() {
            None
        } else {
            Some(v.iter().sum::<f64>() / v.len() as f64)
        }
    };
    Ok(PlantReport {
        per_video,
        same_device_mean: mean(&same),
        cross_device_mean: mean(&cross),
    })
}
