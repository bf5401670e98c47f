//! Classifier heads trained on the embedding: k-NN, LDA, linear SVM.
//!
//! Every head is deterministic given its inputs: k-NN breaks distance ties
//! by smaller index and mean-label ties toward class 0 (a vote of exactly
//! ½ is not a majority), LDA breaks score ties toward the smaller label, and the SVM is
//! trained by a full-batch projected subgradient descent with a fixed step
//! schedule and iteration budget, so refits are bitwise identical.

use nalgebra::{Cholesky, DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{FsmlError, Result};

/// Iterations of the SVM subgradient loop.
const SVM_ITERS: usize = 10_000;

/// Head choice plus its hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum HeadSpec {
    Knn { k: usize },
    Lda,
    Svm { cost: f64 },
}

impl std::fmt::Display for HeadSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            HeadSpec::Knn { k } => write!(f, "knn{k}"),
            HeadSpec::Lda => write!(f, "lda"),
            HeadSpec::Svm { cost } => write!(f, "svm(cost={cost})"),
        }
    }
}

/// A fitted classifier head.
#[derive(Clone, Debug)]
pub enum ClassifierHead {
    Knn {
        k: usize,
        train: DMatrix<f64>,
        labels: Vec<usize>,
        binary: bool,
    },
    Lda {
        classes: Vec<usize>,
        /// Class means, aligned with `classes`.
        means: Vec<DVector<f64>>,
        /// Inverse pooled covariance (ridged if singular).
        cov_inv: DMatrix<f64>,
        log_priors: Vec<f64>,
    },
    Svm {
        /// One (class, w, b) machine per class in one-vs-rest order; binary
        /// problems keep a single machine for the larger label.
        machines: Vec<(usize, DVector<f64>, f64)>,
        classes: Vec<usize>,
    },
}

/// Distinct labels in ascending order.
fn classes_of(labels: &[usize]) -> Vec<usize> {
    let mut classes: Vec<usize> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    classes
}

/// Fits the requested head on embedding rows and labels.
pub fn fit_head(spec: HeadSpec, z: &DMatrix<f64>, labels: &[usize]) -> Result<ClassifierHead> {
    let n = z.nrows();
    if n == 0 {
        return Err(FsmlError::InvalidState("empty training set".into()));
    }
    if labels.len() != n {
        return Err(FsmlError::parameter(format!(
            "{} labels for {n} embedding rows",
            labels.len()
        )));
    }
    match spec {
        HeadSpec::Knn { k } => {
            if k < 1 || k > n {
                return Err(FsmlError::parameter(format!(
                    "k = {k} must lie in [1, n] = [1, {n}]"
                )));
            }
            let binary = labels.iter().all(|&y| y <= 1);
            Ok(ClassifierHead::Knn {
                k,
                train: z.clone(),
                labels: labels.to_vec(),
                binary,
            })
        }
        HeadSpec::Lda => fit_lda(z, labels),
        HeadSpec::Svm { cost } => fit_svm(z, labels, cost),
    }
}

fn fit_lda(z: &DMatrix<f64>, labels: &[usize]) -> Result<ClassifierHead> {
    let n = z.nrows();
    let d = z.ncols();
    let classes = classes_of(labels);
    let m = classes.len();
    if m < 2 {
        return Err(FsmlError::InvalidState(
            "LDA needs at least two classes present".into(),
        ));
    }
    if n <= d {
        return Err(FsmlError::InsufficientData { needed: d + 1, got: n });
    }

    let mut means = vec![DVector::zeros(d); m];
    let mut counts = vec![0usize; m];
    let class_index = |y: usize| classes.binary_search(&y).expect("label seen during fit");
    for (i, &y) in labels.iter().enumerate() {
        let c = class_index(y);
        counts[c] += 1;
        for k in 0..d {
            means[c][k] += z[(i, k)];
        }
    }
    for c in 0..m {
        means[c] /= counts[c] as f64;
    }

    let mut cov = DMatrix::zeros(d, d);
    for (i, &y) in labels.iter().enumerate() {
        let c = class_index(y);
        for r in 0..d {
            let dr = z[(i, r)] - means[c][r];
            for s in r..d {
                cov[(r, s)] += dr * (z[(i, s)] - means[c][s]);
            }
        }
    }
    cov /= (n - m).max(1) as f64;
    for r in 0..d {
        for s in 0..r {
            cov[(r, s)] = cov[(s, r)];
        }
    }

    // Cholesky doubles as the singularity test; ridge once relative to the
    // covariance scale, then absolutely for the all-degenerate case.
    let chol = Cholesky::new(cov.clone()).or_else(|| {
        log::warn!("singular pooled covariance; adding ridge");
        let ridge = 1e-8 * cov.trace() / d as f64;
        let mut fixed = cov.clone();
        for r in 0..d {
            fixed[(r, r)] += ridge;
        }
        Cholesky::new(fixed)
    });
    let chol = match chol {
        Some(c) => c,
        None => {
            let mut fixed = cov;
            for r in 0..d {
                fixed[(r, r)] += 1e-12;
            }
            Cholesky::new(fixed).ok_or_else(|| {
                FsmlError::InvalidState("pooled covariance is not factorizable".into())
            })?
        }
    };
    let cov_inv = chol.inverse();
    let log_priors = counts
        .iter()
        .map(|&c| (c as f64 / n as f64).ln())
        .collect();
    Ok(ClassifierHead::Lda {
        classes,
        means,
        cov_inv,
        log_priors,
    })
}

fn fit_svm(z: &DMatrix<f64>, labels: &[usize], cost: f64) -> Result<ClassifierHead> {
    if !(cost.is_finite() && cost > 0.0) {
        return Err(FsmlError::parameter(format!(
            "svm cost must be positive, got {cost}"
        )));
    }
    let classes = classes_of(labels);
    if classes.len() < 2 {
        return Err(FsmlError::InvalidState(
            "SVM needs both classes present".into(),
        ));
    }
    let machines = if classes.len() == 2 {
        // Single machine: +1 for the larger label.
        let pos = classes[1];
        let (w, b) = train_binary_svm(z, labels, pos, cost);
        vec![(pos, w, b)]
    } else {
        classes
            .iter()
            .map(|&c| {
                let (w, b) = train_binary_svm(z, labels, c, cost);
                (c, w, b)
            })
            .collect()
    };
    Ok(ClassifierHead::Svm { machines, classes })
}

/// Full-batch projected subgradient on (cost/2)‖w‖² + mean hinge loss, with
/// step 1/(cost·t) and the ‖w‖ ≤ 1/√cost projection.
fn train_binary_svm(z: &DMatrix<f64>, labels: &[usize], positive: usize, cost: f64) -> (DVector<f64>, f64) {
    let n = z.nrows();
    let d = z.ncols();
    let ys: Vec<f64> = labels
        .iter()
        .map(|&y| if y == positive { 1.0 } else { -1.0 })
        .collect();
    let mut w = DVector::zeros(d);
    let mut b = 0.0;
    let radius = 1.0 / cost.sqrt();
    for t in 1..=SVM_ITERS {
        let step = 1.0 / (cost * t as f64);
        let mut grad_w = w.clone() * cost;
        let mut grad_b = 0.0;
        for i in 0..n {
            let mut margin = b;
            for k in 0..d {
                margin += w[k] * z[(i, k)];
            }
            if ys[i] * margin < 1.0 {
                let scale = ys[i] / n as f64;
                for k in 0..d {
                    grad_w[k] -= scale * z[(i, k)];
                }
                grad_b -= scale;
            }
        }
        w -= step * grad_w;
        b -= step * grad_b;
        let norm = w.norm();
        if norm > radius {
            w *= radius / norm;
        }
    }
    (w, b)
}

impl ClassifierHead {
    /// Embedding dimension the head expects.
    pub fn d(&self) -> usize {
        match self {
            ClassifierHead::Knn { train, .. } => train.ncols(),
            ClassifierHead::Lda { means, .. } => means[0].len(),
            ClassifierHead::Svm { machines, .. } => machines[0].1.len(),
        }
    }

    /// Predicts the label for one embedding point.
    pub fn predict(&self, z0: &DVector<f64>) -> Result<usize> {
        if z0.len() != self.d() {
            return Err(FsmlError::parameter(format!(
                "query has dimension {}, head expects {}",
                z0.len(),
                self.d()
            )));
        }
        Ok(match self {
            ClassifierHead::Knn {
                k,
                train,
                labels,
                binary,
            } => knn_vote(*k, train, labels, *binary, z0),
            ClassifierHead::Lda {
                classes,
                means,
                cov_inv,
                log_priors,
            } => {
                let mut best = (f64::NEG_INFINITY, usize::MAX);
                for (c, class) in classes.iter().enumerate() {
                    let proj = cov_inv * &means[c];
                    let score = z0.dot(&proj) - 0.5 * means[c].dot(&proj) + log_priors[c];
                    if score > best.0 || (score == best.0 && *class < best.1) {
                        best = (score, *class);
                    }
                }
                best.1
            }
            ClassifierHead::Svm { machines, classes } => {
                if classes.len() == 2 {
                    let (pos, w, b) = &machines[0];
                    if w.dot(z0) + b > 0.0 {
                        *pos
                    } else {
                        classes[0]
                    }
                } else {
                    let mut best = (f64::NEG_INFINITY, usize::MAX);
                    for (class, w, b) in machines {
                        let score = w.dot(z0) + b;
                        if score > best.0 || (score == best.0 && *class < best.1) {
                            best = (score, *class);
                        }
                    }
                    best.1
                }
            }
        })
    }

    /// Predicts every row of `z` (parallel, order-preserving).
    pub fn predict_batch(&self, z: &DMatrix<f64>) -> Result<Vec<usize>> {
        (0..z.nrows())
            .into_par_iter()
            .map(|i| self.predict(&z.row(i).transpose()))
            .collect()
    }

    /// Per-class scores where the head has them (LDA discriminants, SVM
    /// margins); k-NN has no natural score and returns `None`.
    pub fn scores(&self, z0: &DVector<f64>) -> Option<Vec<(usize, f64)>> {
        match self {
            ClassifierHead::Knn { .. } => None,
            ClassifierHead::Lda {
                classes,
                means,
                cov_inv,
                log_priors,
            } => Some(
                classes
                    .iter()
                    .enumerate()
                    .map(|(c, &class)| {
                        let proj = cov_inv * &means[c];
                        (
                            class,
                            z0.dot(&proj) - 0.5 * means[c].dot(&proj) + log_priors[c],
                        )
                    })
                    .collect(),
            ),
            ClassifierHead::Svm { machines, classes } => {
                if classes.len() == 2 {
                    let (pos, w, b) = &machines[0];
                    let s = w.dot(z0) + b;
                    Some(vec![(classes[0], -s), (*pos, s)])
                } else {
                    Some(
                        machines
                            .iter()
                            .map(|(class, w, b)| (*class, w.dot(z0) + b))
                            .collect(),
                    )
                }
            }
        }
    }
}

fn knn_vote(k: usize, train: &DMatrix<f64>, labels: &[usize], binary: bool, z0: &DVector<f64>) -> usize {
    let n = train.nrows();
    let d = train.ncols();
    let mut order: Vec<(f64, usize)> = (0..n)
        .map(|i| {
            let mut dist2 = 0.0;
            for c in 0..d {
                let diff = train[(i, c)] - z0[c];
                dist2 += diff * diff;
            }
            (dist2, i)
        })
        .collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    if binary {
        let mean: f64 = order[..k]
            .iter()
            .map(|&(_, i)| labels[i] as f64)
            .sum::<f64>()
            / k as f64;
        usize::from(mean > 0.5)
    } else {
        let mut votes: Vec<(usize, usize)> = Vec::new();
        for &(_, i) in &order[..k] {
            match votes.iter_mut().find(|(y, _)| *y == labels[i]) {
                Some((_, count)) => *count += 1,
                None => votes.push((labels[i], 1)),
            }
        }
        votes
            .into_iter()
            .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)))
            .map(|(y, _)| y)
            .expect("k ≥ 1 guarantees at least one vote")
    }
}

/// Fraction of rows whose prediction disagrees with the label.
pub fn misclassification_rate(
    head: &ClassifierHead,
    z: &DMatrix<f64>,
    labels: &[usize],
) -> Result<f64> {
    if z.nrows() != labels.len() {
        return Err(FsmlError::parameter("rows and labels differ in length"));
    }
    if labels.is_empty() {
        return Err(FsmlError::InsufficientData { needed: 1, got: 0 });
    }
    let preds = head.predict_batch(z)?;
    let wrong = preds
        .iter()
        .zip(labels)
        .filter(|(p, y)| p != y)
        .count();
    Ok(wrong as f64 / labels.len() as f64)
}
