//! Pairwise normalized correlation between fingerprints and the
//! similarity matrix built from it.
//!
//! Fingerprints are flattened row-major, mean-centered and compared with
//! the cosine of the centered vectors (Pearson correlation). Dot
//! products and norms accumulate in f64; a 1080p fingerprint flattens to
//! about two million elements.

use std::io::{BufRead, Write};

use rayon::prelude::*;
use thiserror::Error;

use crate::fingerprint::Fingerprint;
use crate::scalar::Real;

#[derive(Debug, Error)]
pub enum SimilarityError {
    #[error("fingerprint shape mismatch: {a_id:?} is {aw}x{ah}, {b_id:?} is {bw}x{bh}")]
    ShapeMismatch { a_id: String, aw: usize, ah: usize, b_id: String, bw: usize, bh: usize },
    #[error("fingerprint {id:?} is constant; correlation is undefined")]
    Degenerate { id: String },
    #[error("need at least {need} fingerprints, got {got}")]
    TooFew { need: usize, got: usize },
    #[error("fingerprints must have at least 2 elements")]
    TooSmall,
    #[error("duplicate video id {0:?}")]
    DuplicateId(String),
    #[error("bad similarity matrix csv: {0}")]
    Csv(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Mean-centered cosine of the two flattened fingerprints, in [-1, 1].
pub fn correlation<T: Real>(
    a: &Fingerprint<T>,
    b: &Fingerprint<T>,
) -> Result<f64, SimilarityError> {
    if a.width() != b.width() || a.height() != b.height() {
        return Err(SimilarityError::ShapeMismatch {
            a_id: a.id().to_string(),
            aw: a.width(),
            ah: a.height(),
            b_id: b.id().to_string(),
            bw: b.width(),
            bh: b.height(),
        });
    }
    let xs = a.values().as_slice();
    let ys = b.values().as_slice();
    if xs.len() < 2 {
        return Err(SimilarityError::TooSmall);
    }
    let n = xs.len() as f64;
    let mut sum_a = 0f64;
    let mut sum_b = 0f64;
    for (&x, &y) in xs.iter().zip(ys) {
        sum_a += x.as_f64();
        sum_b += y.as_f64();
    }
    let mean_a = sum_a / n;
    let mean_b = sum_b / n;
    let mut dot = 0f64;
    let mut sq_a = 0f64;
    let mut sq_b = 0f64;
    for (&x, &y) in xs.iter().zip(ys) {
        let dx = x.as_f64() - mean_a;
        let dy = y.as_f64() - mean_b;
        dot += dx * dy;
        sq_a += dx * dx;
        sq_b += dy * dy;
    }
    if sq_a == 0.0 {
        return Err(SimilarityError::Degenerate { id: a.id().to_string() });
    }
    if sq_b == 0.0 {
        return Err(SimilarityError::Degenerate { id: b.id().to_string() });
    }
    Ok((dot / (sq_a * sq_b).sqrt()).clamp(-1.0, 1.0))
}

/// Symmetric pairwise-correlation matrix with unit diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    ids: Vec<String>,
    values: Vec<f64>,
}

impl SimilarityMatrix {
    /// Wraps a precomputed square matrix. Checks squareness and
    /// finiteness; symmetry is the producer's contract and is enforced
    /// again by consumers that require it.
    pub fn from_parts(ids: Vec<String>, values: Vec<f64>) -> Result<Self, SimilarityError> {
        let n = ids.len();
        if values.len() != n * n {
            return Err(SimilarityError::Csv(format!(
                "{} values for {} ids (want {})",
                values.len(),
                n,
                n * n
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(SimilarityError::Csv("non-finite matrix value".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for id in &ids {
            if !seen.insert(id.clone()) {
                return Err(SimilarityError::DuplicateId(id.clone()));
            }
        }
        Ok(SimilarityMatrix { ids, values })
    }

    pub fn n(&self) -> usize {
        self.ids.len()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.ids.len() + j]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Correlates every unordered pair. Pairs run in parallel; the gather is
/// keyed by index so the result does not depend on scheduling.
pub fn build_matrix<T: Real>(fps: &[Fingerprint<T>]) -> Result<SimilarityMatrix, SimilarityError> {
    let n = fps.len();
    if n < 2 {
        return Err(SimilarityError::TooFew { need: 2, got: n });
    }
    let ids: Vec<String> = fps.iter().map(|fp| fp.id().to_string()).collect();
    let mut seen = std::collections::HashSet::new();
    for id in &ids {
        if !seen.insert(id.clone()) {
            return Err(SimilarityError::DuplicateId(id.clone()));
        }
    }

    let pairs: Vec<(usize, usize)> =
        (0..n).flat_map(|i| ((i + 1)..n).map(move |j| (i, j))).collect();
    let corrs: Vec<((usize, usize), f64)> = pairs
        .par_iter()
        .map(|&(i, j)| correlation(&fps[i], &fps[j]).map(|c| ((i, j), c)))
        .collect::<Result<_, _>>()?;

    let mut values = vec![0f64; n * n];
    for i in 0..n {
        values[i * n + i] = 1.0;
    }
    for ((i, j), c) in corrs {
        values[i * n + j] = c;
        values[j * n + i] = c;
    }
    SimilarityMatrix::from_parts(ids, values)
}

/// CSV wire format: a header row of ids, then n rows of n values with 9
/// significant digits.
pub fn write_matrix_csv(m: &SimilarityMatrix, out: &mut impl Write) -> Result<(), SimilarityError> {
    for id in m.ids() {
        if id.contains(',') || id.contains('\n') {
            return Err(SimilarityError::Csv(format!("id {id:?} contains a delimiter")));
        }
    }
    writeln!(out, "{}", m.ids().join(","))?;
    let n = m.n();
    for i in 0..n {
        let row: Vec<String> = (0..n).map(|j| format!("{:.8e}", m.get(i, j))).collect();
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}

pub fn read_matrix_csv(input: impl BufRead) -> Result<SimilarityMatrix, SimilarityError> {
    let mut lines = input.lines();
    let header = lines
        .next()
        .ok_or_else(|| SimilarityError::Csv("empty matrix file".into()))??;
    let ids: Vec<String> = header.split(',').map(|s| s.trim().to_string()).collect();
    let n = ids.len();
    let mut values = Vec::with_capacity(n * n);
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row: Vec<&str> = line.split(',').collect();
        if row.len() != n {
            return Err(SimilarityError::Csv(format!(
                "row {} has {} values, expected {n}",
                i + 1,
                row.len()
            )));
        }
        for tok in row {
            let v: f64 = tok
                .trim()
                .parse()
                .map_err(|_| SimilarityError::Csv(format!("bad value {tok:?}")))?;
            values.push(v);
        }
    }
    SimilarityMatrix::from_parts(ids, values)
}

pub fn write_matrix_csv_file(
    m: &SimilarityMatrix,
    path: &std::path::Path,
) -> Result<(), SimilarityError> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_matrix_csv(m, &mut out)?;
    out.flush()?;
    Ok(())
}

pub fn read_matrix_csv_file(path: &std::path::Path) -> Result<SimilarityMatrix, SimilarityError> {
    read_matrix_csv(std::io::BufReader::new(std::fs::File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mat::Matrix;
    use proptest::prelude::*;

    fn fp(id: &str, values: Vec<f64>) -> Fingerprint<f64> {
        let w = values.len();
        Fingerprint::unenhanced(Matrix::from_vec(w, 1, values), id, 1)
    }

    #[test]
    fn self_correlation_is_exactly_one() {
        let a = fp("a", vec![0.3, -1.2, 4.5, 0.0]);
        assert_eq!(correlation(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn negated_input_gives_minus_one() {
        let a = fp("a", vec![0.3, -1.2, 4.5, 0.0]);
        let b = fp("b", vec![-0.3, 1.2, -4.5, 0.0]);
        assert_eq!(correlation(&a, &b).unwrap(), -1.0);
    }

    #[test]
    fn hand_computed_value_matches() {
        // centered dot 6.5, norms sqrt(5)*sqrt(8.75): 0.982703...
        let a = fp("a", vec![1.0, 2.0, 3.0, 4.0]);
        let b = fp("b", vec![1.0, 2.0, 3.0, 5.0]);
        let r = correlation(&a, &b).unwrap();
        assert!((r - 0.98270).abs() < 1e-5, "got {r}");
        assert!((r - 6.5 / (5.0f64 * 8.75).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn constant_fingerprint_is_degenerate() {
        let a = fp("flat", vec![2.0, 2.0, 2.0]);
        let b = fp("b", vec![1.0, 2.0, 3.0]);
        match correlation(&a, &b).unwrap_err() {
            SimilarityError::Degenerate { id } => assert_eq!(id, "flat"),
            other => panic!("unexpected error: {other}"),
        }
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let a = fp("a", vec![1.0, 2.0]);
        let b = Fingerprint::unenhanced(Matrix::from_vec(1, 2, vec![1.0, 2.0]), "b", 1);
        assert!(matches!(correlation(&a, &b), Err(SimilarityError::ShapeMismatch { .. })));
    }

    #[test]
    fn matrix_has_unit_diagonal_and_symmetry() {
        let fps = vec![
            fp("a", vec![1.0, 2.0, 3.0, 4.0]),
            fp("b", vec![1.0, 2.0, 3.0, 4.0]),
            fp("c", vec![4.0, 1.0, 2.0, 2.5]),
        ];
        let m = build_matrix(&fps).unwrap();
        assert_eq!(m.n(), 3);
        for i in 0..3 {
            assert_eq!(m.get(i, i), 1.0);
            for j in 0..3 {
                assert_eq!(m.get(i, j), m.get(j, i));
            }
        }
        // Identical pair correlates at exactly 1.
        assert_eq!(m.get(0, 1), 1.0);
    }

    #[test]
    fn two_fingerprints_make_a_2x2_matrix() {
        let fps = vec![fp("a", vec![1.0, 2.0, 3.0]), fp("b", vec![3.0, 1.0, 2.0])];
        let m = build_matrix(&fps).unwrap();
        assert_eq!(m.n(), 2);
        assert_eq!(m.get(0, 1), m.get(1, 0));

        let err = build_matrix(&fps[..1]).unwrap_err();
        assert!(matches!(err, SimilarityError::TooFew { got: 1, .. }));
    }

    #[test]
    fn csv_round_trip_preserves_nine_digits() {
        let fps = vec![
            fp("a", vec![1.0, 2.0, 3.0, 4.0]),
            fp("b", vec![1.0, 2.0, 3.0, 5.0]),
            fp("c", vec![-1.0, 0.5, 2.0, 0.25]),
        ];
        let m = build_matrix(&fps).unwrap();
        let mut bytes = Vec::new();
        write_matrix_csv(&m, &mut bytes).unwrap();
        let back = read_matrix_csv(&bytes[..]).unwrap();
        assert_eq!(back.ids(), m.ids());
        for i in 0..3 {
            for j in 0..3 {
                assert!((back.get(i, j) - m.get(i, j)).abs() < 1e-8);
                assert_eq!(back.get(i, j), back.get(j, i));
            }
        }
    }

    proptest! {
        #[test]
        fn correlation_invariant_under_affine_rescale(
            values in proptest::collection::vec(-100.0f64..100.0, 8),
            others in proptest::collection::vec(-100.0f64..100.0, 8),
            scale in 0.01f64..50.0,
            shift in -100.0f64..100.0,
        ) {
            let a = fp("a", values.clone());
            let b = fp("b", others);
            prop_assume!(correlation(&a, &a).is_ok());
            prop_assume!(correlation(&b, &b).is_ok());
            let scaled = fp("s", values.iter().map(|v| v * scale + shift).collect());
            prop_assume!(correlation(&scaled, &scaled).is_ok());
            let base = correlation(&a, &b).unwrap();
            let moved = correlation(&scaled, &b).unwrap();
            prop_assert!((base - moved).abs() < 1e-6);
            // Symmetry is exact.
            prop_assert_eq!(correlation(&a, &b).unwrap(), correlation(&b, &a).unwrap());
            // Range.
            prop_assert!((-1.0..=1.0).contains(&base));
        }
    }
}
