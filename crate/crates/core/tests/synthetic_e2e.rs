//! End-to-end checks on synthetic data with known ground truth: the
//! planted fingerprint must be recoverable, absent signal must stay
//! absent, and the clustering must rediscover the devices.

mod common;

use common::estimate_all;
use tempfile::tempdir;
use vfp_core::clustering::select_clustering;
use vfp_core::fingerprint::EnhancerParams;
use vfp_core::metrics::GroundTruth;
use vfp_core::similarity::{self, build_matrix};
use vfp_core::synth::{
    generate_dataset, plant_check, SceneModel, SynthConfig, VideosPerDevice,
};

fn base_config() -> SynthConfig {
    SynthConfig {
        devices: 2,
        videos_per_device: VideosPerDevice::Uniform(2),
        frames_per_video: 8,
        width: 128,
        height: 128,
        strength: 0.1,
        scene: SceneModel::Flat,
        dead_block_fraction: 0.3,
        shot_noise_variance: 4.0,
        seed: 2024,
    }
}

#[test]
fn zero_strength_leaves_no_cross_device_signal() {
    let config = SynthConfig {
        strength: 0.0,
        frames_per_video: 4,
        scene: SceneModel::Textured,
        ..base_config()
    };
    let dir = tempdir().unwrap();
    let manifest = generate_dataset(&config, dir.path()).unwrap();
    let fps = estimate_all(&manifest, dir.path(), None);
    for i in 0..fps.len() {
        for j in (i + 1)..fps.len() {
            if manifest.videos[i].device != manifest.videos[j].device {
                let corr = similarity::correlation(&fps[i], &fps[j]).unwrap();
                assert!(
                    corr.abs() < 0.05,
                    "unplanted cross-device correlation {corr} between {} and {}",
                    fps[i].id(),
                    fps[j].id()
                );
            }
        }
    }
}

#[test]
fn fully_dead_masks_give_exactly_zero_fingerprints() {
    let config = SynthConfig {
        dead_block_fraction: 1.0,
        frames_per_video: 3,
        width: 64,
        height: 48,
        ..base_config()
    };
    let dir = tempdir().unwrap();
    let manifest = generate_dataset(&config, dir.path()).unwrap();
    for fp in estimate_all(&manifest, dir.path(), None) {
        assert!(
            fp.values().as_slice().iter().all(|&v| v == 0.0),
            "{} has nonzero values despite fully dead masks",
            fp.id()
        );
    }
}

#[test]
fn plant_check_recovers_the_planted_fingerprints() {
    let config = base_config();
    let dir = tempdir().unwrap();
    let manifest = generate_dataset(&config, dir.path()).unwrap();
    let fps = estimate_all(&manifest, dir.path(), None);
    let report = plant_check(&manifest, dir.path(), &fps).unwrap();

    for score in &report.per_video {
        assert!(
            score.corr_to_true > 0.2,
            "{} recovers its device fingerprint poorly: {}",
            score.video_id,
            score.corr_to_true
        );
    }
    let margin = report.margin().expect("two devices give both pair kinds");
    assert!(margin > 0.1, "same-vs-cross margin too small: {margin}");
    assert!(report.same_device_mean.unwrap() > report.cross_device_mean.unwrap());
}

#[test]
fn shuffled_labels_collapse_the_margin() {
    let config = SynthConfig {
        videos_per_device: VideosPerDevice::Uniform(4),
        ..base_config()
    };
    let dir = tempdir().unwrap();
    let mut manifest = generate_dataset(&config, dir.path()).unwrap();
    let fps = estimate_all(&manifest, dir.path(), None);
    let honest = plant_check(&manifest, dir.path(), &fps).unwrap().margin().unwrap();

    // Alternate the device labels across the video list so "same device"
    // pairs are mostly lies.
    let devices: Vec<String> = manifest.devices.iter().map(|d| d.id.clone()).collect();
    for (i, video) in manifest.videos.iter_mut().enumerate() {
        video.device = devices[i % devices.len()].clone();
    }
    let shuffled = plant_check(&manifest, dir.path(), &fps).unwrap().margin().unwrap();
    assert!(
        shuffled.abs() < honest / 2.0,
        "shuffled margin {shuffled} did not collapse (honest {honest})"
    );
}

#[test]
fn single_device_has_no_cross_pairs() {
    let config = SynthConfig {
        devices: 1,
        frames_per_video: 3,
        width: 64,
        height: 64,
        ..base_config()
    };
    let dir = tempdir().unwrap();
    let manifest = generate_dataset(&config, dir.path()).unwrap();
    let fps = estimate_all(&manifest, dir.path(), None);
    let report = plant_check(&manifest, dir.path(), &fps).unwrap();
    assert!(report.cross_device_mean.is_none());
    assert!(report.margin().is_none());
    assert!(report.same_device_mean.is_some());
}

#[test]
fn recovery_improves_with_strength_and_frames() {
    let mean_recovery = |config: &SynthConfig| -> f64 {
        let dir = tempdir().unwrap();
        let manifest = generate_dataset(config, dir.path()).unwrap();
        let fps = estimate_all(&manifest, dir.path(), None);
        let report = plant_check(&manifest, dir.path(), &fps).unwrap();
        report.per_video.iter().map(|s| s.corr_to_true).sum::<f64>()
            / report.per_video.len() as f64
    };

    // Grids sit in the weak-signal regime; once the planted pattern
    // rises far above the noise floor the Wiener filter starts keeping
    // it in the denoised image and recovery saturates.
    let strengths = [0.004, 0.01, 0.025];
    let by_strength: Vec<f64> = strengths
        .iter()
        .map(|&s| mean_recovery(&SynthConfig { strength: s, ..base_config() }))
        .collect();
    assert!(
        by_strength[0] < by_strength[1] && by_strength[1] < by_strength[2],
        "recovery not monotone in strength: {by_strength:?}"
    );

    let by_frames: Vec<f64> = [3usize, 12]
        .iter()
        .map(|&f| {
            mean_recovery(&SynthConfig {
                strength: 0.01,
                frames_per_video: f,
                ..base_config()
            })
        })
        .collect();
    assert!(
        by_frames[0] < by_frames[1],
        "recovery not monotone in frame count: {by_frames:?}"
    );
}

#[test]
fn same_device_videos_correlate_above_cross_device() {
    let config = SynthConfig { scene: SceneModel::Textured, ..base_config() };
    let dir = tempdir().unwrap();
    let manifest = generate_dataset(&config, dir.path()).unwrap();
    let fps = estimate_all(&manifest, dir.path(), Some(&EnhancerParams::gamma3(20.0)));
    assert!(fps.iter().all(|fp| fp.is_enhanced()));
    let bound = 1.0 - (-20.0f64).exp();
    for fp in &fps {
        assert!(fp.values().as_slice().iter().all(|v| (v.abs() as f64) <= bound));
    }

    // Within-device entries strictly above cross-device ones.
    let matrix = build_matrix(&fps).unwrap();
    let device_of = |id: &str| {
        manifest.videos.iter().find(|v| v.id == id).unwrap().device.clone()
    };
    let mut min_same = f64::INFINITY;
    let mut max_cross = f64::NEG_INFINITY;
    for i in 0..matrix.n() {
        for j in (i + 1)..matrix.n() {
            let same = device_of(&matrix.ids()[i]) == device_of(&matrix.ids()[j]);
            if same {
                min_same = min_same.min(matrix.get(i, j));
            } else {
                max_cross = max_cross.max(matrix.get(i, j));
            }
        }
    }
    assert!(
        min_same > max_cross,
        "weakest same-device pair {min_same} not above strongest cross {max_cross}"
    );
}

#[test]
fn asymmetric_thirteen_device_set_clusters_pure() {
    // Thirteen devices with 27/11/7/4 and ten 3-video tails, mirroring an
    // uneven real-world collection shape.
    let counts = vec![27, 11, 7, 4, 3, 3, 3, 3, 3, 3, 3, 3, 3];
    let config = SynthConfig {
        devices: counts.len(),
        videos_per_device: VideosPerDevice::PerDevice(counts),
        frames_per_video: 6,
        width: 160,
        height: 120,
        strength: 0.1,
        scene: SceneModel::Textured,
        dead_block_fraction: 0.3,
        shot_noise_variance: 4.0,
        seed: 7,
    };
    let dir = tempdir().unwrap();
    let manifest = generate_dataset(&config, dir.path()).unwrap();
    let fps = estimate_all(&manifest, dir.path(), Some(&EnhancerParams::gamma3(20.0)));
    let matrix = build_matrix(&fps).unwrap();
    let result = select_clustering(&matrix).unwrap();

    assert!(
        (13..=14).contains(&result.k),
        "expected 13 or 14 clusters, got {}",
        result.k
    );
    let truth = GroundTruth::from_csv_file(&manifest.labels_path(dir.path())).unwrap();
    for group in result.groups() {
        let devices: std::collections::BTreeSet<&str> =
            group.iter().map(|id| truth.device_of(id).unwrap()).collect();
        assert_eq!(devices.len(), 1, "mixed cluster: {group:?}");
    }
}
