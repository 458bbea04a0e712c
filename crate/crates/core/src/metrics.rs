//! Evaluation and analysis metrics.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::feature_loss;
use crate::tensor::Tensor;

/// Largest number of features per sample kept for CKA.
pub const CKA_MAX_FEATURES: usize = 2048;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionLog {
    pub teacher_pred: Vec<usize>,
    pub student_pred: Vec<usize>,
    pub labels: Vec<usize>,
}

impl PredictionLog {
    pub fn new(teacher_pred: Vec<usize>, student_pred: Vec<usize>, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        let n = labels.len();
        if teacher_pred.len() != n || student_pred.len() != n {
            return Err(Error::Contract(format!(
                "prediction log lengths differ: teacher {}, student {}, labels {n}",
                teacher_pred.len(),
                student_pred.len()
            )));
        }
        if let Some(bad) = teacher_pred.iter().chain(&student_pred).chain(&labels).find(|&&c| c >= num_classes) {
            return Err(Error::Contract(format!("class {bad} outside [0, {num_classes})")));
        }
        Ok(PredictionLog { teacher_pred, student_pred, labels })
    }
}

/// Fraction of teacher-misclassified samples that the student gets right.
pub fn ek_metric(log: &PredictionLog) -> Result<f64> {
    let mut teacher_wrong = 0usize;
    let mut rescued = 0usize;
    for ((&t, &s), &y) in log.teacher_pred.iter().zip(&log.student_pred).zip(&log.labels) {
        if t != y {
            teacher_wrong += 1;
            if s == y {
                rescued += 1;
            }
        }
    }
    if teacher_wrong == 0 {
        return Err(Error::Contract("EK undefined: the teacher is correct on every sample".into()));
    }
    Ok(rescued as f64 / teacher_wrong as f64)
}

/// Row-major `rows x cols` matrix of activations, one row per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows * cols != data.len() || rows == 0 || cols == 0 {
            return Err(Error::dim("matrix", format!("{rows}x{cols} with {} values", data.len())));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    /// Column-centered copy.
    pub fn centered(&self) -> Matrix {
        let mut means = vec![0.0; self.cols];
        for row in self.data.chunks(self.cols) {
            means.iter_mut().zip(row).for_each(|(m, v)| *m += v);
        }
        means.iter_mut().for_each(|m| *m /= self.rows as f64);
        let data = self
            .data
            .chunks(self.cols)
            .flat_map(|row| row.iter().zip(&means).map(|(v, m)| v - m).collect::<Vec<_>>())
            .collect();
        Matrix { rows: self.rows, cols: self.cols, data }
    }

    /// `self * self^T`, the `rows x rows` linear kernel.
    fn gram(&self) -> Vec<f64> {
        let n = self.rows;
        let mut g = vec![0.0; n * n];
        for i in 0..n {
            let ri = &self.data[i * self.cols..(i + 1) * self.cols];
            for j in i..n {
                let rj = &self.data[j * self.cols..(j + 1) * self.cols];
                let d: f64 = ri.iter().zip(rj).map(|(a, b)| a * b).sum();
                g[i * n + j] = d;
                g[j * n + i] = d;
            }
        }
        g
    }
}

/// Linear CKA between two activation matrices over the same samples,
/// `||Y_c^T X_c||_F^2 / (||X_c^T X_c||_F ||Y_c^T Y_c||_F)`, evaluated through
/// the sample-space kernels `K = X_c X_c^T`, `L = Y_c Y_c^T` as
/// `<K, L>_F / (||K||_F ||L||_F)`.
pub fn cka_linear(x: &Matrix, y: &Matrix) -> Result<f64> {
    if x.rows != y.rows {
        return Err(Error::Contract(format!("CKA needs equal sample counts, got {} and {}", x.rows, y.rows)));
    }
    if x.rows < 2 {
        return Err(Error::Contract("CKA needs at least two samples".into()));
    }
    let (xc, yc) = (x.centered(), y.centered());
    if xc.data.iter().all(|&v| v == 0.0) || yc.data.iter().all(|&v| v == 0.0) {
        return Err(Error::Contract("degenerate activations: zero variance after centering".into()));
    }
    let (k, l) = (xc.gram(), yc.gram());
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(u, v)| u * v).sum::<f64>();
    let hsic_xy = dot(&k, &l);
    let denom = (dot(&k, &k) * dot(&l, &l)).sqrt();
    if denom == 0.0 {
        return Err(Error::Contract("degenerate activations: zero kernel norm".into()));
    }
    Ok((hsic_xy / denom).clamp(0.0, 1.0))
}

/// Flattens a `[N, ...]` tap into an `N x F` matrix of post-relu activations,
/// keeping at most `max_features` columns by a seeded strided subsample.
pub fn tap_matrix(tap: &Tensor, max_features: usize, seed: u64) -> Result<Matrix> {
    let n = tap.shape()[0];
    let f = tap.numel() / n;
    let cols: Vec<usize> = if f <= max_features {
        (0..f).collect()
    } else {
        let stride = f.div_ceil(max_features);
        let offset = ChaCha8Rng::seed_from_u64(seed).random_range(0..stride);
        (offset..f).step_by(stride).collect()
    };
    let mut data = Vec::with_capacity(n * cols.len());
    for row in tap.values().chunks(f) {
        data.extend(cols.iter().map(|&c| row[c].max(0.0)));
    }
    Matrix::new(n, cols.len(), data)
}

/// Layer-by-layer CKA, `result[i][j] = cka(a[i], b[j])`.
pub fn cka_matrix(a: &[Matrix], b: &[Matrix]) -> Result<Vec<Vec<f64>>> {
    a.iter().map(|x| b.iter().map(|y| cka_linear(x, y)).collect()).collect()
}

/// Fraction of samples whose label ranks among the `k` largest logits, ties
/// broken toward the lower class index.
pub fn topk_accuracy(logits: &Tensor, labels: &[usize], k: usize) -> Result<f64> {
    let &[n, classes] = logits.shape() else {
        return Err(Error::dim("topk_accuracy", format!("expected [N,K] logits, got {:?}", logits.shape())));
    };
    if k == 0 || k > classes {
        return Err(Error::Contract(format!("k = {k} outside [1, {classes}]")));
    }
    if labels.len() != n {
        return Err(Error::dim("topk_accuracy", format!("batch axis: {n} rows vs {} labels", labels.len())));
    }
    let hits = logits
        .values()
        .chunks(classes)
        .zip(labels)
        .filter(|(row, &y)| {
            let target = row[y];
            let rank = row
                .iter()
                .enumerate()
                .filter(|&(j, &v)| v > target || (v == target && j < y))
                .count();
            rank < k
        })
        .count();
    Ok(hits as f64 / n as f64)
}

/// Feature loss at each alignment layer, in layer order.
pub fn layer_l2_report(teacher_taps: &[Tensor], student_taps_projected: &[Tensor]) -> Result<Vec<f64>> {
    if teacher_taps.len() != student_taps_projected.len() {
        return Err(Error::Contract(format!(
            "{} teacher taps vs {} student taps",
            teacher_taps.len(),
            student_taps_projected.len()
        )));
    }
    teacher_taps
        .iter()
        .zip(student_taps_projected)
        .map(|(t, s)| feature_loss(&t.detach(), &s.detach()).map(|l| l.item()))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MemoryReport {
    pub baseline_peak: usize,
    pub candidate_peak: usize,
    /// `100 * (baseline - candidate) / baseline`; positive means the
    /// candidate retained fewer activations.
    pub reduction_pct: f64,
}

/// Compares peak retained-activation counts of two regimes measured on the
/// same network and batch.
pub fn memory_report(baseline_peak: usize, candidate_peak: usize) -> MemoryReport {
    let reduction_pct = if baseline_peak == 0 {
        0.0
    } else {
        100.0 * (baseline_peak as f64 - candidate_peak as f64) / baseline_peak as f64
    };
    MemoryReport { baseline_peak, candidate_peak, reduction_pct }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ek_direct_count() {
        // teacher wrong on samples 1, 2, 3; student right on 2 of those
        let log = PredictionLog::new(vec![0, 1, 1, 1, 2], vec![0, 1, 2, 1, 2], vec![0, 0, 2, 2, 2], 3).unwrap();
        assert!((ek_metric(&log).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        let same = PredictionLog::new(vec![0, 1, 1], vec![0, 1, 1], vec![0, 0, 2], 3).unwrap();
        assert_eq!(ek_metric(&same).unwrap(), 0.0);
        let perfect = PredictionLog::new(vec![0, 1], vec![1, 1], vec![0, 1], 2).unwrap();
        assert!(ek_metric(&perfect).unwrap_err().to_string().contains("EK undefined"));
        assert!(PredictionLog::new(vec![0], vec![0, 1], vec![0], 2).is_err());
    }

    #[test]
    fn cka_self_and_degenerate() {
        let x = Matrix::new(4, 2, vec![1.0, 2.0, 0.5, -1.0, 3.0, 0.0, -2.0, 1.0]).unwrap();
        assert!((cka_linear(&x, &x).unwrap() - 1.0).abs() < 1e-12);
        let flat = Matrix::new(4, 2, vec![1.0; 8]).unwrap();
        assert!(cka_linear(&x, &flat).unwrap_err().to_string().contains("degenerate"));
        let short = Matrix::new(3, 2, vec![0.0; 6]).unwrap();
        assert!(cka_linear(&x, &short).is_err());
    }

    #[test]
    fn topk_edges() {
        let logits = Tensor::from_vec(vec![2, 3], vec![3.0, 2.0, 1.0, 0.0, 5.0, 1.0]).unwrap();
        assert_eq!(topk_accuracy(&logits, &[0, 1], 1).unwrap(), 1.0);
        assert_eq!(topk_accuracy(&logits, &[2, 0], 3).unwrap(), 1.0);
        assert_eq!(topk_accuracy(&logits, &[2, 0], 1).unwrap(), 0.0);
        assert!(topk_accuracy(&logits, &[0, 1], 0).is_err());
        assert!(topk_accuracy(&logits, &[0, 1], 4).is_err());
        // ties: lower index wins
        let tied = Tensor::from_vec(vec![1, 2], vec![1.0, 1.0]).unwrap();
        assert_eq!(topk_accuracy(&tied, &[0], 1).unwrap(), 1.0);
        assert_eq!(topk_accuracy(&tied, &[1], 1).unwrap(), 0.0);
    }

    #[test]
    fn l2_report_cases() {
        let t = Tensor::full(&[2, 3, 2, 2], 1.5);
        assert_eq!(layer_l2_report(&[t.clone(), t.clone()], &[t.clone(), t.clone()]).unwrap(), vec![0.0, 0.0]);
        let s = Tensor::zeros(&[2, 3, 2, 2]);
        let single = layer_l2_report(std::slice::from_ref(&t), std::slice::from_ref(&s)).unwrap();
        assert_eq!(single, vec![feature_loss(&t, &s).unwrap().item()]);
        assert!(layer_l2_report(&[t], &[]).is_err());
    }

    #[test]
    fn memory_report_sign() {
        assert_eq!(memory_report(10, 10).reduction_pct, 0.0);
        assert!(memory_report(10, 7).reduction_pct > 0.0);
    }

    #[test]
    fn tap_matrix_subsamples() {
        let t = Tensor::from_vec(vec![2, 5000], (0..10000).map(|v| v as f64 - 5000.0).collect()).unwrap();
        let m = tap_matrix(&t, CKA_MAX_FEATURES, 1).unwrap();
        assert!(m.cols <= CKA_MAX_FEATURES);
        assert_eq!(m.rows, 2);
        assert!(m.data.iter().all(|&v| v >= 0.0));
    }
}
