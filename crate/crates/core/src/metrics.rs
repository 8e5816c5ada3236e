//! Evaluation against ground-truth labels: per-group TPR, average TPR,
//! and the pairwise-verification ROC/AUC.
//!
//! A group's TPR is 100 x (videos of its device in the group) / (that
//! device's total), and a mixed group scores 0 outright; the majority
//! rule, which scores mixed groups by their predominant device, is kept
//! behind an option for comparison. The ROC treats every unordered video
//! pair as a verification trial: the score is the pair's correlation and
//! the positive label is "same device".

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde::Serialize;
use thiserror::Error;

use crate::similarity::SimilarityMatrix;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("video id {0:?} missing from the ground truth")]
    UnknownVideo(String),
    #[error("video id {0:?} appears in more than one cluster")]
    NotAPartition(String),
    #[error("clusters must be nonempty")]
    EmptyCluster,
    #[error("need both same-device and cross-device pairs for a ROC")]
    DegenerateLabels,
    #[error("fixed TPR denominator must be positive")]
    BadDenominator,
    #[error("bad labels csv: {0}")]
    Csv(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Video id -> device id mapping.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GroundTruth {
    map: BTreeMap<String, String>,
    device_totals: BTreeMap<String, usize>,
}

impl GroundTruth {
    pub fn from_pairs<I, S1, S2>(pairs: I) -> Result<Self, MetricsError>
    where
        I: IntoIterator<Item = (S1, S2)>,
        S1: Into<String>,
        S2: Into<String>,
    {
        let mut map = BTreeMap::new();
        let mut device_totals = BTreeMap::new();
        for (video, device) in pairs {
            let video = video.into();
            let device: String = device.into();
            if map.insert(video.clone(), device.clone()).is_some() {
                return Err(MetricsError::Csv(format!("duplicate video id {video:?}")));
            }
            *device_totals.entry(device).or_insert(0) += 1;
        }
        Ok(GroundTruth { map, device_totals })
    }

    pub fn device_of(&self, video: &str) -> Result<&str, MetricsError> {
        self.map
            .get(video)
            .map(String::as_str)
            .ok_or_else(|| MetricsError::UnknownVideo(video.to_string()))
    }

    pub fn total_of_device(&self, device: &str) -> usize {
        self.device_totals.get(device).copied().unwrap_or(0)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Reads the labels.csv wire format: header "video_id,device_id".
    pub fn from_csv(input: impl BufRead) -> Result<Self, MetricsError> {
        let mut lines = input.lines();
        let header = lines.next().ok_or_else(|| MetricsError::Csv("empty file".into()))??;
        if header.trim() != "video_id,device_id" {
            return Err(MetricsError::Csv(format!("bad header {header:?}")));
        }
        let mut pairs = Vec::new();
        for line in lines {
            let line = line?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let (video, device) = line
                .split_once(',')
                .ok_or_else(|| MetricsError::Csv(format!("bad row {line:?}")))?;
            pairs.push((video.trim().to_string(), device.trim().to_string()));
        }
        GroundTruth::from_pairs(pairs)
    }

    pub fn from_csv_file(path: &std::path::Path) -> Result<Self, MetricsError> {
        GroundTruth::from_csv(std::io::BufReader::new(std::fs::File::open(path)?))
    }

    pub fn write_csv(&self, out: &mut impl Write) -> std::io::Result<()> {
        writeln!(out, "video_id,device_id")?;
        for (video, device) in &self.map {
            writeln!(out, "{video},{device}")?;
        }
        Ok(())
    }
}

/// How a group's device is decided.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TprRule {
    /// Mixed groups score 0; only pure groups count.
    #[default]
    Pure,
    /// The predominant device scores; ties break on the smallest device
    /// id.
    Majority,
}

/// Which total the matched count is divided by.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TprDenominator {
    /// The device's true video count in the ground truth.
    #[default]
    DeviceTotal,
    /// A fixed count, for reproducing reports that assumed a uniform
    /// per-device total.
    Fixed(u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TprOptions {
    pub rule: TprRule,
    pub denominator: TprDenominator,
}

/// TPR (percent) of one cluster.
pub fn group_tpr(
    cluster: &[String],
    truth: &GroundTruth,
    opts: TprOptions,
) -> Result<f64, MetricsError> {
    if cluster.is_empty() {
        return Err(MetricsError::EmptyCluster);
    }
    if let TprDenominator::Fixed(0) = opts.denominator {
        return Err(MetricsError::BadDenominator);
    }
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for id in cluster {
        *counts.entry(truth.device_of(id)?).or_insert(0) += 1;
    }
    let (device, matched) = match opts.rule {
        TprRule::Pure => {
            if counts.len() > 1 {
                return Ok(0.0);
            }
            let (&device, &count) = counts.iter().next().unwrap();
            (device, count)
        }
        TprRule::Majority => {
            // BTreeMap iterates by device id, so on count ties the
            // smallest id wins.
            let (&device, &count) =
                counts.iter().max_by_key(|&(id, &c)| (c, std::cmp::Reverse(id))).unwrap();
            (device, count)
        }
    };
    let denom = match opts.denominator {
        TprDenominator::DeviceTotal => truth.total_of_device(device) as f64,
        TprDenominator::Fixed(n) => n as f64,
    };
    Ok(100.0 * matched as f64 / denom)
}

/// Arithmetic mean of the per-group TPRs. Clusters must partition their
/// id set (no id twice, all ids labeled).
pub fn average_tpr(
    clusters: &[Vec<String>],
    truth: &GroundTruth,
    opts: TprOptions,
) -> Result<f64, MetricsError> {
    if clusters.is_empty() {
        return Err(MetricsError::EmptyCluster);
    }
    let mut seen = std::collections::HashSet::new();
    for cluster in clusters {
        for id in cluster {
            if !seen.insert(id.as_str()) {
                return Err(MetricsError::NotAPartition(id.clone()));
            }
        }
    }
    let tprs = clusters
        .iter()
        .map(|c| group_tpr(c, truth, opts))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(tprs.iter().sum::<f64>() / tprs.len() as f64)
}

/// ROC curve points (FPR, TPR) and the trapezoidal area under them.
#[derive(Debug, Clone, Serialize)]
pub struct RocCurve {
    pub points: Vec<(f64, f64)>,
    pub auc: f64,
}

impl RocCurve {
    /// roc.csv wire format: header "fpr,tpr", one point per threshold.
    pub fn write_csv(&self, out: &mut impl Write) -> std::io::Result<()> {
        writeln!(out, "fpr,tpr")?;
        for (fpr, tpr) in &self.points {
            writeln!(out, "{fpr},{tpr}")?;
        }
        Ok(())
    }
}

/// ROC over scored verification trials: `scores` with boolean labels,
/// higher score means more same-device.
pub fn roc_from_scores(scored: &[(f64, bool)]) -> Result<RocCurve, MetricsError> {
    let positives = scored.iter().filter(|(_, label)| *label).count();
    let negatives = scored.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(MetricsError::DegenerateLabels);
    }
    let mut sorted: Vec<(f64, bool)> = scored.to_vec();
    sorted.sort_by(|a, b| b.0.partial_cmp(&a.0).expect("scores must be finite"));

    let mut points = vec![(0.0, 0.0)];
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut i = 0;
    while i < sorted.len() {
        let threshold = sorted[i].0;
        while i < sorted.len() && sorted[i].0 == threshold {
            if sorted[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push((fp as f64 / negatives as f64, tp as f64 / positives as f64));
    }
    debug_assert_eq!(*points.last().unwrap(), (1.0, 1.0));

    let mut auc = 0f64;
    for pair in points.windows(2) {
        let (x0, y0) = pair[0];
        let (x1, y1) = pair[1];
        auc += (x1 - x0) * (y0 + y1) / 2.0;
    }
    Ok(RocCurve { points, auc })
}

/// Pairwise verification ROC from the similarity matrix: all n(n-1)/2
/// correlations scored against same-device ground truth.
pub fn roc_auc(sim: &SimilarityMatrix, truth: &GroundTruth) -> Result<RocCurve, MetricsError> {
    let n = sim.n();
    let mut scored = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            let same = truth.device_of(&sim.ids()[i])? == truth.device_of(&sim.ids()[j])?;
            scored.push((sim.get(i, j), same));
        }
    }
    roc_from_scores(&scored)
}

/// Full evaluation output.
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub group_tprs: Vec<f64>,
    pub average_tpr: f64,
    pub roc: Option<RocCurve>,
}

impl EvalReport {
    /// report.json document; TPR percentages are printed to one decimal.
    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct Doc<'a> {
            group_tprs: Vec<f64>,
            average_tpr: f64,
            auc: Option<f64>,
            roc: Option<&'a [(f64, f64)]>,
        }
        let round1 = |v: f64| (v * 10.0).round() / 10.0;
        let doc = Doc {
            group_tprs: self.group_tprs.iter().map(|&v| round1(v)).collect(),
            average_tpr: round1(self.average_tpr),
            auc: self.roc.as_ref().map(|r| r.auc),
            roc: self.roc.as_ref().map(|r| r.points.as_slice()),
        };
        serde_json::to_string_pretty(&doc).expect("report serializes")
    }
}

/// Scores a clustering (and, when a similarity matrix is supplied, the
/// pairwise ROC) against the ground truth.
pub fn evaluate(
    clusters: &[Vec<String>],
    truth: &GroundTruth,
    sim: Option<&SimilarityMatrix>,
    opts: TprOptions,
) -> Result<EvalReport, MetricsError> {
    let group_tprs = clusters
        .iter()
        .map(|c| group_tpr(c, truth, opts))
        .collect::<Result<Vec<_>, _>>()?;
    let average_tpr = average_tpr(clusters, truth, opts)?;
    let roc = match sim {
        Some(sim) => Some(roc_auc(sim, truth)?),
        None => None,
    };
    Ok(EvalReport { group_tprs, average_tpr, roc })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(device: &str, from: usize, count: usize) -> Vec<String> {
        (from..from + count).map(|i| format!("{device}-v{i:02}")).collect()
    }

    fn truth_of(counts: &[(&str, usize)]) -> GroundTruth {
        let mut pairs = Vec::new();
        for &(device, count) in counts {
            for id in ids(device, 0, count) {
                pairs.push((id, device.to_string()));
            }
        }
        GroundTruth::from_pairs(pairs).unwrap()
    }

    #[test]
    fn pure_group_scores_its_share() {
        let truth = truth_of(&[("M32", 10)]);
        let cluster = ids("M32", 0, 5);
        assert_eq!(group_tpr(&cluster, &truth, TprOptions::default()).unwrap(), 50.0);
    }

    #[test]
    fn mixed_group_scores_zero() {
        let truth = truth_of(&[("M32", 10), ("M17", 10), ("M00", 8)]);
        let mut cluster = ids("M32", 0, 2);
        cluster.extend(ids("M17", 0, 3));
        cluster.extend(ids("M00", 0, 2));
        assert_eq!(group_tpr(&cluster, &truth, TprOptions::default()).unwrap(), 0.0);
    }

    #[test]
    fn complete_pure_group_scores_100() {
        let truth = truth_of(&[("M29", 10), ("M12", 10)]);
        let cluster = ids("M29", 0, 10);
        assert_eq!(group_tpr(&cluster, &truth, TprOptions::default()).unwrap(), 100.0);
    }

    #[test]
    fn majority_rule_scores_the_predominant_device() {
        let truth = truth_of(&[("M00", 8), ("M32", 10)]);
        let mut cluster = ids("M00", 0, 6);
        cluster.extend(ids("M32", 0, 3));
        let opts = TprOptions { rule: TprRule::Majority, ..Default::default() };
        assert_eq!(group_tpr(&cluster, &truth, opts).unwrap(), 75.0);
    }

    #[test]
    fn fixed_denominator_reproduces_uniform_totals() {
        let truth = truth_of(&[("M00", 8)]);
        let cluster = ids("M00", 0, 5);
        let fixed = TprOptions {
            denominator: TprDenominator::Fixed(10),
            ..Default::default()
        };
        assert_eq!(group_tpr(&cluster, &truth, fixed).unwrap(), 50.0);
        assert_eq!(group_tpr(&cluster, &truth, TprOptions::default()).unwrap(), 62.5);
    }

    #[test]
    fn unknown_video_is_a_label_error() {
        let truth = truth_of(&[("M32", 2)]);
        let cluster = vec!["stranger".to_string()];
        assert!(matches!(
            group_tpr(&cluster, &truth, TprOptions::default()),
            Err(MetricsError::UnknownVideo(_))
        ));
    }

    #[test]
    fn average_tpr_is_the_group_mean() {
        let truth = truth_of(&[("A", 2), ("B", 2)]);
        let clusters = vec![ids("A", 0, 2), ids("B", 0, 1), ids("B", 1, 1)];
        // 100, 50, 50 -> 200/3.
        let avg = average_tpr(&clusters, &truth, TprOptions::default()).unwrap();
        assert!((avg - 200.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn perfect_partition_scores_100() {
        let truth = truth_of(&[("A", 3), ("B", 4), ("C", 1)]);
        let clusters = vec![ids("A", 0, 3), ids("B", 0, 4), ids("C", 0, 1)];
        assert_eq!(average_tpr(&clusters, &truth, TprOptions::default()).unwrap(), 100.0);
    }

    #[test]
    fn duplicated_id_breaks_the_partition() {
        let truth = truth_of(&[("A", 2)]);
        let clusters = vec![ids("A", 0, 2), ids("A", 1, 1)];
        assert!(matches!(
            average_tpr(&clusters, &truth, TprOptions::default()),
            Err(MetricsError::NotAPartition(_))
        ));
    }

    #[test]
    fn roc_perfect_separation_is_one() {
        let scored = [(0.9, true), (0.8, true), (0.2, false), (0.1, false)];
        let roc = roc_from_scores(&scored).unwrap();
        assert_eq!(roc.auc, 1.0);
        assert_eq!(roc.points.first(), Some(&(0.0, 0.0)));
        assert_eq!(roc.points.last(), Some(&(1.0, 1.0)));
    }

    #[test]
    fn roc_reversed_separation_is_zero() {
        let scored = [(0.1, true), (0.2, true), (0.8, false), (0.9, false)];
        assert_eq!(roc_from_scores(&scored).unwrap().auc, 0.0);
    }

    #[test]
    fn roc_three_wins_one_loss_is_075() {
        // pos {0.8, 0.4}, neg {0.6, 0.2}: 3 wins of 4 pairs.
        let scored = [(0.8, true), (0.4, true), (0.6, false), (0.2, false)];
        assert_eq!(roc_from_scores(&scored).unwrap().auc, 0.75);
    }

    #[test]
    fn identical_distributions_sit_at_chance() {
        let mut scored = Vec::new();
        for i in 0..50 {
            let s = i as f64 / 50.0;
            scored.push((s, true));
            scored.push((s, false));
        }
        let auc = roc_from_scores(&scored).unwrap().auc;
        assert!((auc - 0.5).abs() < 1e-12);
    }

    #[test]
    fn roc_points_are_monotone_and_anchored() {
        let scored = [
            (0.9, true),
            (0.7, false),
            (0.7, true),
            (0.5, true),
            (0.4, false),
            (0.1, false),
        ];
        let roc = roc_from_scores(&scored).unwrap();
        assert_eq!(roc.points[0], (0.0, 0.0));
        assert_eq!(*roc.points.last().unwrap(), (1.0, 1.0));
        for pair in roc.points.windows(2) {
            assert!(pair[1].0 >= pair[0].0);
            assert!(pair[1].1 >= pair[0].1);
        }
    }

    #[test]
    fn degenerate_labels_are_rejected() {
        assert!(matches!(
            roc_from_scores(&[(0.4, true), (0.5, true)]),
            Err(MetricsError::DegenerateLabels)
        ));
    }

    #[test]
    fn labels_csv_round_trips() {
        let truth = truth_of(&[("M27", 3), ("M00", 2)]);
        let mut bytes = Vec::new();
        truth.write_csv(&mut bytes).unwrap();
        let back = GroundTruth::from_csv(&bytes[..]).unwrap();
        assert_eq!(back, truth);
        assert_eq!(back.total_of_device("M27"), 3);
    }

    #[test]
    fn labels_csv_requires_the_header() {
        let err = GroundTruth::from_csv(&b"vid,dev\nv1,d1\n"[..]).unwrap_err();
        assert!(matches!(err, MetricsError::Csv(_)));
    }
}
