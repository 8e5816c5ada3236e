//! Independent reference implementations used as oracles by the
//! integration and acceptance suites. They deliberately recompute
//! everything from scratch and share no code with the library paths they
//! check.

#![allow(dead_code)]

use std::path::Path;

use vfp_core::coeffxml::ParseMode;
use vfp_core::denoise::{DenoiserParams, WaveletWiener};
use vfp_core::fingerprint::{extract_video_fingerprint, EnhancerParams};
use vfp_core::synth::Manifest;
use vfp_core::Fingerprint32;

/// One naive merge record: cluster ids (leaves 0..n-1, merge t creates
/// n+t) and the linkage similarity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NaiveMerge {
    pub a: usize,
    pub b: usize,
    pub similarity: f64,
}

/// Greedy average-linkage reference: recomputes every pair's linkage
/// from the leaf similarities at every step (O(n^3) and proud of it).
/// Ties break on the lexicographically smallest (min-leaf, min-leaf)
/// pair, the same rule the library documents.
pub fn naive_average_linkage(sim: &[f64], n: usize) -> Vec<NaiveMerge> {
    assert_eq!(sim.len(), n * n);
    struct Cluster {
        id: usize,
        leaves: Vec<usize>,
    }
    let mut clusters: Vec<Cluster> =
        (0..n).map(|i| Cluster { id: i, leaves: vec![i] }).collect();
    let mut merges = Vec::with_capacity(n - 1);
    for t in 0..(n - 1) {
        let mut best: Option<(f64, usize, usize, usize, usize)> = None; // (d, p, q, ci, cj)
        for ci in 0..clusters.len() {
            for cj in (ci + 1)..clusters.len() {
                let u = &clusters[ci];
                let v = &clusters[cj];
                let mut sum = 0f64;
                for &a in &u.leaves {
                    for &b in &v.leaves {
                        sum += sim[a * n + b];
                    }
                }
                let d = sum / (u.leaves.len() * v.leaves.len()) as f64;
                let (mut p, mut q) = (u.leaves[0], v.leaves[0]);
                if p > q {
                    std::mem::swap(&mut p, &mut q);
                }
                let wins = match &best {
                    None => true,
                    Some((bd, bp, bq, _, _)) => d > *bd || (d == *bd && (p, q) < (*bp, *bq)),
                };
                if wins {
                    best = Some((d, p, q, ci, cj));
                }
            }
        }
        let (d, _, _, ci, cj) = best.unwrap();
        let (first, second) = if clusters[ci].leaves[0] <= clusters[cj].leaves[0] {
            (ci, cj)
        } else {
            (cj, ci)
        };
        merges.push(NaiveMerge {
            a: clusters[first].id,
            b: clusters[second].id,
            similarity: d,
        });
        // Merge cj into ci (remove the later index first).
        let (keep, gone) = (ci.min(cj), ci.max(cj));
        let removed = clusters.remove(gone);
        let target = &mut clusters[keep];
        target.leaves.extend(removed.leaves);
        target.leaves.sort_unstable();
        target.id = n + t;
    }
    merges
}

/// Direct silhouette evaluation: cohesion, separation and scores per
/// item, straight double loops.
pub fn naive_silhouette(labels: &[usize], dist: &[f64], n: usize) -> (Vec<f64>, f64) {
    assert_eq!(dist.len(), n * n);
    let k = labels.iter().copied().max().unwrap() + 1;
    let mut scores = vec![0f64; n];
    for x in 0..n {
        let own = labels[x];
        let own_count = labels.iter().filter(|&&l| l == own).count();
        if own_count == 1 {
            scores[x] = 0.0;
            continue;
        }
        let a = (0..n)
            .filter(|&y| y != x && labels[y] == own)
            .map(|y| dist[x * n + y])
            .sum::<f64>()
            / (own_count - 1) as f64;
        let mut b = f64::INFINITY;
        for other in 0..k {
            if other == own {
                continue;
            }
            let members: Vec<usize> = (0..n).filter(|&y| labels[y] == other).collect();
            let mean = members.iter().map(|&y| dist[x * n + y]).sum::<f64>()
                / members.len() as f64;
            b = b.min(mean);
        }
        let m = a.max(b);
        scores[x] = if m == 0.0 { 0.0 } else { (b - a) / m };
    }
    let sc = scores.iter().sum::<f64>() / n as f64;
    (scores, sc)
}

/// AUC as the Mann-Whitney statistic: the fraction of (positive,
/// negative) score pairs the positive wins, counting ties as half.
pub fn mann_whitney_auc(positives: &[f64], negatives: &[f64]) -> f64 {
    let mut wins = 0u64;
    let mut ties = 0u64;
    for &p in positives {
        for &n in negatives {
            if p > n {
                wins += 1;
            } else if p == n {
                ties += 1;
            }
        }
    }
    (wins as f64 + 0.5 * ties as f64) / (positives.len() * negatives.len()) as f64
}

/// Estimates a fingerprint for every manifest video with the default
/// denoiser, optionally enhancing. Videos are processed in manifest
/// order.
pub fn estimate_all(
    manifest: &Manifest,
    base: &Path,
    eparams: Option<&EnhancerParams>,
) -> Vec<Fingerprint32> {
    let denoiser = WaveletWiener::<f32>::new(DenoiserParams::default());
    manifest
        .videos
        .iter()
        .map(|video| {
            let set = manifest
                .load_video(base, video, ParseMode::Strict)
                .expect("synthetic video loads");
            extract_video_fingerprint(&set, &denoiser, eparams, &video.id)
                .expect("fingerprint extraction succeeds")
        })
        .collect()
}

/// Plain Pearson correlation over two equal-length slices.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        dot += (x - ma) * (y - mb);
        na += (x - ma) * (x - ma);
        nb += (y - mb) * (y - mb);
    }
    dot / (na * nb).sqrt()
}
