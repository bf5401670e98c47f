//! Curve containers and L2 geometry.
//!
//! A [`SampledCurve`] is one subject's raw record: observation times and
//! noisy values. A [`Curve`] is a smooth function represented by its values
//! on a shared dense [`Grid`]; inner products and distances are trapezoid
//! quadrature on that grid, giving O(G) geometry. A [`LabeledDataset`]
//! bundles curves with integer class labels.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{FsmlError, Result};
use crate::fda::grid::Grid;

/// One subject's discrete, noisy observations before smoothing.
///
/// Times are sorted ascending on construction. Repeated times are tolerated
/// (they occur in merged records); the ridged smoother is built to survive
/// them.
#[derive(Clone, Debug)]
pub struct SampledCurve {
    id: String,
    times: Vec<f64>,
    values: Vec<f64>,
}

impl SampledCurve {
    pub fn new(id: impl Into<String>, times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        let id = id.into();
        if times.len() != values.len() {
            return Err(FsmlError::parameter(format!(
                "curve {id}: {} times vs {} values",
                times.len(),
                values.len()
            )));
        }
        if times.len() < 2 {
            return Err(FsmlError::InsufficientData {
                needed: 2,
                got: times.len(),
            });
        }
        if times.iter().chain(values.iter()).any(|v| !v.is_finite()) {
            return Err(FsmlError::parameter(format!(
                "curve {id}: non-finite time or value"
            )));
        }
        let mut order: Vec<usize> = (0..times.len()).collect();
        order.sort_by(|&a, &b| times[a].total_cmp(&times[b]).then(a.cmp(&b)));
        let times_sorted: Vec<f64> = order.iter().map(|&i| times[i]).collect();
        let values_sorted: Vec<f64> = order.iter().map(|&i| values[i]).collect();
        Ok(SampledCurve {
            id,
            times: times_sorted,
            values: values_sorted,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Number of observations J for this subject.
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Observation span, last time minus first.
    pub fn span(&self) -> f64 {
        self.times[self.times.len() - 1] - self.times[0]
    }
}

/// A smooth function represented by values on a shared evaluation grid.
#[derive(Clone, Debug)]
pub struct Curve {
    grid: Grid,
    values: Vec<f64>,
}

impl Curve {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(FsmlError::parameter(format!(
                "curve has {} values for a {}-point grid",
                values.len(),
                grid.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(FsmlError::parameter("curve values must be finite"));
        }
        Ok(Curve { grid, values })
    }

    /// Evaluates `f` at every grid point.
    pub fn from_fn(grid: Grid, f: impl Fn(f64) -> f64) -> Result<Self> {
        let values = grid.points().iter().map(|&t| f(t)).collect();
        Curve::new(grid, values)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Pointwise difference `self - other`.
    pub fn minus(&self, other: &Curve) -> Result<Curve> {
        check_same_grid(self, other)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a - b)
            .collect();
        Ok(Curve {
            grid: self.grid.clone(),
            values,
        })
    }

    /// Quadrature norm ‖self‖ = √⟨self, self⟩.
    pub fn norm(&self) -> f64 {
        dot_weighted(self.grid.weights(), &self.values, &self.values)
            .max(0.0)
            .sqrt()
    }
}

fn check_same_grid(f: &Curve, g: &Curve) -> Result<()> {
    if f.grid.same_as(&g.grid) {
        Ok(())
    } else {
        Err(FsmlError::GridMismatch)
    }
}

#[inline]
fn dot_weighted(w: &[f64], a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for i in 0..w.len() {
        // w·(a·b) rather than (w·a)·b so swapping f and g is bitwise neutral.
        acc += w[i] * (a[i] * b[i]);
    }
    acc
}

/// Trapezoid-rule approximation of ∫ f·g over the grid interval.
///
/// Symmetric in its arguments by construction (identical float operations).
///
/// # Errors
/// [`FsmlError::GridMismatch`] when the curves live on different grids.
pub fn trapezoid_inner_product(f: &Curve, g: &Curve) -> Result<f64> {
    check_same_grid(f, g)?;
    Ok(dot_weighted(f.grid.weights(), &f.values, &g.values))
}

/// L2 distance √∫(f−g)²; zero iff the value vectors are identical.
///
/// # Errors
/// [`FsmlError::GridMismatch`] when the curves live on different grids.
pub fn l2_distance(f: &Curve, g: &Curve) -> Result<f64> {
    check_same_grid(f, g)?;
    Ok(l2_distance_unchecked(
        f.grid.weights(),
        &f.values,
        &g.values,
    ))
}

#[inline]
pub(crate) fn l2_distance_unchecked(w: &[f64], a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for i in 0..w.len() {
        let d = a[i] - b[i];
        acc += w[i] * d * d;
    }
    acc.sqrt()
}

/// Full symmetric matrix of pairwise L2 distances, diagonal zero.
///
/// Rows are computed in parallel; entries do not depend on the schedule.
pub fn pairwise_l2(curves: &[Curve]) -> Result<DMatrix<f64>> {
    let n = curves.len();
    if n == 0 {
        return Err(FsmlError::InsufficientData { needed: 1, got: 0 });
    }
    for c in &curves[1..] {
        check_same_grid(&curves[0], c)?;
    }
    let w = curves[0].grid().weights();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut row = vec![0.0; n];
            for (j, item) in row.iter_mut().enumerate().take(n) {
                if j != i {
                    *item = l2_distance_unchecked(w, &curves[i].values, &curves[j].values);
                }
            }
            row
        })
        .collect();
    let mut m = DMatrix::zeros(n, n);
    // Symmetrize from the upper triangle so the matrix is bitwise symmetric
    // even if per-row rounding were ever to differ.
    for i in 0..n {
        for j in i + 1..n {
            m[(i, j)] = rows[i][j];
            m[(j, i)] = rows[i][j];
        }
    }
    Ok(m)
}

/// Curves with integer class labels in `0..class_count`.
#[derive(Clone, Debug)]
pub struct LabeledDataset {
    curves: Vec<Curve>,
    labels: Vec<usize>,
    class_count: usize,
}

impl LabeledDataset {
    pub fn new(curves: Vec<Curve>, labels: Vec<usize>, class_count: usize) -> Result<Self> {
        if curves.len() != labels.len() {
            return Err(FsmlError::parameter(format!(
                "{} curves vs {} labels",
                curves.len(),
                labels.len()
            )));
        }
        if curves.len() < 2 {
            return Err(FsmlError::InsufficientData {
                needed: 2,
                got: curves.len(),
            });
        }
        if class_count == 0 {
            return Err(FsmlError::parameter("class_count must be positive"));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= class_count) {
            return Err(FsmlError::parameter(format!(
                "label {bad} out of range for {class_count} classes"
            )));
        }
        for c in &curves[1..] {
            check_same_grid(&curves[0], c)?;
        }
        Ok(LabeledDataset {
            curves,
            labels,
            class_count,
        })
    }

    pub fn n(&self) -> usize {
        self.curves.len()
    }

    pub fn curves(&self) -> &[Curve] {
        &self.curves
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn grid(&self) -> &Grid {
        self.curves[0].grid()
    }

    /// Dataset restricted to `indices`, preserving their order.
    pub fn subset(&self, indices: &[usize]) -> Result<LabeledDataset> {
        let curves = indices.iter().map(|&i| self.curves[i].clone()).collect();
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        LabeledDataset::new(curves, labels, self.class_count)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn grid(n: usize) -> Grid {
        Grid::uniform(0.0, 1.0, n).unwrap()
    }

    fn curve_fn(g: &Grid, f: impl Fn(f64) -> f64) -> Curve {
        Curve::from_fn(g.clone(), f).unwrap()
    }

    #[test]
    fn inner_product_of_zero_is_zero() {
        let g = grid(101);
        let z = curve_fn(&g, |_| 0.0);
        let any = curve_fn(&g, |t| 3.0 * t - 1.0);
        assert_eq!(trapezoid_inner_product(&z, &any).unwrap(), 0.0);
    }

    #[test]
    fn inner_product_of_ones_is_one() {
        let g = grid(101);
        let one = curve_fn(&g, |_| 1.0);
        let ip = trapezoid_inner_product(&one, &one).unwrap();
        assert!((ip - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sin_squared_integrates_to_half() {
        let g = grid(1001);
        let s = curve_fn(&g, |t| (2.0 * std::f64::consts::PI * t).sin());
        let ip = trapezoid_inner_product(&s, &s).unwrap();
        assert!((ip - 0.5).abs() < 1e-6, "got {ip}");
    }

    #[test]
    fn l2_distance_examples() {
        let g = grid(1001);
        let s = curve_fn(&g, |t| (2.0 * std::f64::consts::PI * t).sin());
        let zero = curve_fn(&g, |_| 0.0);
        let one = curve_fn(&g, |_| 1.0);
        assert_eq!(l2_distance(&s, &s).unwrap(), 0.0);
        assert!((l2_distance(&one, &zero).unwrap() - 1.0).abs() < 1e-12);
        let d = l2_distance(&s, &zero).unwrap();
        assert!((d - 0.70711).abs() < 1e-5, "got {d}");
    }

    #[test]
    fn mismatched_grids_error() {
        let f = curve_fn(&grid(101), |t| t);
        let g = curve_fn(&grid(102), |t| t);
        assert!(matches!(
            trapezoid_inner_product(&f, &g),
            Err(FsmlError::GridMismatch)
        ));
        assert!(matches!(l2_distance(&f, &g), Err(FsmlError::GridMismatch)));
    }

    #[test]
    fn inner_product_is_symmetric_exactly() {
        let g = grid(64);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let f = Curve::new(g.clone(), (0..64).map(|_| rng.gen::<f64>() - 0.5).collect())
                .unwrap();
            let h = Curve::new(g.clone(), (0..64).map(|_| rng.gen::<f64>() - 0.5).collect())
                .unwrap();
            let a = trapezoid_inner_product(&f, &h).unwrap();
            let b = trapezoid_inner_product(&h, &f).unwrap();
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn cauchy_schwarz_holds() {
        let g = grid(64);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..200 {
            let f = Curve::new(
                g.clone(),
                (0..64).map(|_| 4.0 * (rng.gen::<f64>() - 0.5)).collect(),
            )
            .unwrap();
            let h = Curve::new(
                g.clone(),
                (0..64).map(|_| 4.0 * (rng.gen::<f64>() - 0.5)).collect(),
            )
            .unwrap();
            let ip = trapezoid_inner_product(&f, &h).unwrap().abs();
            assert!(ip <= f.norm() * h.norm() + 1e-12);
        }
    }

    #[test]
    fn pairwise_matches_scalar_distance() {
        let g = grid(33);
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let curves: Vec<Curve> = (0..7)
            .map(|_| {
                Curve::new(g.clone(), (0..33).map(|_| rng.gen::<f64>()).collect()).unwrap()
            })
            .collect();
        let m = pairwise_l2(&curves).unwrap();
        for i in 0..7 {
            assert_eq!(m[(i, i)], 0.0);
            for j in 0..7 {
                assert_eq!(m[(i, j)].to_bits(), m[(j, i)].to_bits());
                if i < j {
                    let d = l2_distance(&curves[i], &curves[j]).unwrap();
                    assert!((m[(i, j)] - d).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn sampled_curve_sorts_times() {
        let c = SampledCurve::new("a", vec![0.5, 0.1, 0.9], vec![2.0, 1.0, 3.0]).unwrap();
        assert_eq!(c.times(), &[0.1, 0.5, 0.9]);
        assert_eq!(c.values(), &[1.0, 2.0, 3.0]);
        assert!((c.span() - 0.8).abs() < 1e-15);
    }

    #[test]
    fn sampled_curve_rejects_bad_input() {
        assert!(SampledCurve::new("a", vec![0.0], vec![1.0]).is_err());
        assert!(SampledCurve::new("a", vec![0.0, 1.0], vec![1.0]).is_err());
        assert!(SampledCurve::new("a", vec![0.0, f64::NAN], vec![1.0, 2.0]).is_err());
    }

    #[test]
    fn dataset_validation() {
        let g = grid(16);
        let c0 = curve_fn(&g, |t| t);
        let c1 = curve_fn(&g, |t| 1.0 - t);
        assert!(LabeledDataset::new(vec![c0.clone(), c1.clone()], vec![0, 1], 2).is_ok());
        assert!(LabeledDataset::new(vec![c0.clone(), c1.clone()], vec![0, 2], 2).is_err());
        assert!(LabeledDataset::new(vec![c0.clone()], vec![0], 1).is_err());
        let other = Curve::from_fn(grid(17), |t| t).unwrap();
        assert!(LabeledDataset::new(vec![c0, other], vec![0, 1], 2).is_err());
    }
}
