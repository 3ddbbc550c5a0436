//! Dense feature-map types and the numeric kernels the scoring path is built on.
//!
//! Everything here is a pure function of its inputs. Zero-norm vectors are
//! treated as "dead" descriptors: they normalize to the zero vector and have
//! cosine 0 with everything.

use crate::error::{Error, Result};

/// Norms below this are treated as zero.
pub const NORM_EPS: f64 = 1e-12;

/// A `width x height` grid of `dim`-dimensional local descriptors.
///
/// Descriptors are stored row-major in spatial order: cell `(row, col)` is
/// descriptor `row * width + col`, and `data` holds `r * dim` values with
/// `r = width * height`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    width: usize,
    height: usize,
    dim: usize,
    data: Vec<f64>,
}

impl FeatureMap {
    pub fn new(width: usize, height: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || dim == 0 {
            return Err(Error::Parameter(format!(
                "feature map shape {width}x{height}x{dim} has a zero extent"
            )));
        }
        let expected = width * height * dim;
        if data.len() != expected {
            return Err(Error::Dimension(format!(
                "feature map {width}x{height}x{dim} needs {expected} values, got {}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Parameter(format!(
                "feature map value {pos} is not finite"
            )));
        }
        Ok(Self {
            width,
            height,
            dim,
            data,
        })
    }

    /// Builds a map from a list of descriptors laid out as a single row.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::Dimension("descriptor rows differ in length".into()));
        }
        Self::new(rows.len(), 1, dim, rows.concat())
    }

    pub fn zeros(width: usize, height: usize, dim: usize) -> Result<Self> {
        Self::new(width, height, dim, vec![0.0; width * height * dim])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of spatial positions.
    pub fn positions(&self) -> usize {
        self.width * self.height
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.width, self.height, self.dim)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn descriptor(&self, index: usize) -> &[f64] {
        &self.data[index * self.dim..(index + 1) * self.dim]
    }

    pub fn descriptors(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.dim)
    }

    /// Returns a copy with every descriptor replaced by its unit-norm counterpart.
    pub fn normalized(&self) -> FeatureMap {
        let mut data = Vec::with_capacity(self.data.len());
        for row in self.descriptors() {
            data.extend(l2_normalize(row));
        }
        FeatureMap { data, ..*self }
    }

    /// Multiplies one descriptor in place. Used by invariance checks.
    pub fn scale_descriptor(&mut self, index: usize, factor: f64) {
        let dim = self.dim;
        for v in &mut self.data[index * dim..(index + 1) * dim] {
            *v *= factor;
        }
    }
}

/// Dense row-major matrix, the output of [`cosine_matrix`].
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols + col]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.data[row * self.cols..(row + 1) * self.cols]
    }
}

/// Class probabilities produced by the softmax head.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbVector {
    values: Vec<f64>,
}

impl ProbVector {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Index of the largest probability; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        argmax(&self.values)
    }
}

/// Index of the largest value, lowest index on ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `v / ‖v‖₂`, or the zero vector when `‖v‖₂ < 1e-12`.
pub fn l2_normalize(v: &[f64]) -> Vec<f64> {
    let norm = l2_norm(v);
    if norm < NORM_EPS {
        vec![0.0; v.len()]
    } else {
        v.iter().map(|x| x / norm).collect()
    }
}

/// Cosine similarity `⟨û, v̂⟩`; 0 when either vector has (near) zero norm.
pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::Dimension(format!(
            "cosine of vectors with lengths {} and {}",
            u.len(),
            v.len()
        )));
    }
    Ok(dot(&l2_normalize(u), &l2_normalize(v)))
}

/// All pairwise cosines between the rows of `a` and the rows of `b`, both
/// given as flat row-major buffers with `dim` columns.
pub fn cosine_matrix(a: &[f64], b: &[f64], dim: usize) -> Result<Matrix> {
    if dim == 0 || !a.len().is_multiple_of(dim) || !b.len().is_multiple_of(dim) {
        return Err(Error::Dimension(format!(
            "buffers of length {} and {} are not rows of width {dim}",
            a.len(),
            b.len()
        )));
    }
    let an: Vec<f64> = a.chunks_exact(dim).flat_map(l2_normalize).collect();
    let bn: Vec<f64> = b.chunks_exact(dim).flat_map(l2_normalize).collect();
    Ok(unit_dot_matrix(&an, &bn, dim))
}

/// Cosine matrix between two feature maps (rows of `a` against rows of `b`).
pub fn map_cosines(a: &FeatureMap, b: &FeatureMap) -> Result<Matrix> {
    if a.dim() != b.dim() {
        return Err(Error::Dimension(format!(
            "descriptor dims {} and {} differ",
            a.dim(),
            b.dim()
        )));
    }
    cosine_matrix(a.data(), b.data(), a.dim())
}

/// Pairwise dot products of rows that are already unit-normalized.
pub(crate) fn unit_dot_matrix(a: &[f64], b: &[f64], dim: usize) -> Matrix {
    let rows = a.len() / dim;
    let cols = b.len() / dim;
    let mut data = Vec::with_capacity(rows * cols);
    for ar in a.chunks_exact(dim) {
        for br in b.chunks_exact(dim) {
            data.push(dot(ar, br));
        }
    }
    Matrix { rows, cols, data }
}

/// Sum of the `k` largest entries of `values`.
pub fn top_k_sum(values: &[f64], k: usize) -> Result<f64> {
    if k == 0 || k > values.len() {
        return Err(Error::Parameter(format!(
            "k = {k} outside 1..={}",
            values.len()
        )));
    }
    let mut scratch = values.to_vec();
    Ok(top_k_sum_in_place(&mut scratch, k))
}

/// Reorders `scratch` and returns the sum of its `k` largest entries, added
/// in descending order. Caller guarantees `1 <= k <= scratch.len()`.
pub(crate) fn top_k_sum_in_place(scratch: &mut [f64], k: usize) -> f64 {
    debug_assert!(k >= 1 && k <= scratch.len());
    if k < scratch.len() {
        scratch.select_nth_unstable_by(k - 1, |a, b| b.total_cmp(a));
    }
    let top = &mut scratch[..k];
    top.sort_unstable_by(|a, b| b.total_cmp(a));
    top.iter().sum()
}

/// Max-shifted softmax. Permuting the logits permutes the output exactly.
pub fn softmax(logits: &[f64]) -> ProbVector {
    if logits.is_empty() {
        return ProbVector { values: Vec::new() };
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    // summing in sorted order makes the result independent of class order
    let mut sorted = exps.clone();
    sorted.sort_unstable_by(f64::total_cmp);
    let total: f64 = sorted.iter().sum();
    ProbVector {
        values: exps.into_iter().map(|e| e / total).collect(),
    }
}

/// `-log softmax(logits)[label]`, computed through log-sum-exp.
pub fn cross_entropy(logits: &[f64], label: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|&l| (l - max).exp()).sum::<f64>().ln();
    lse - logits[label]
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    // Independent scalar loop used as the reference for cosine values.
    fn scalar_cosine(u: &[f64], v: &[f64]) -> f64 {
        let mut uv = 0.0;
        let mut uu = 0.0;
        let mut vv = 0.0;
        for i in 0..u.len() {
            uv += u[i] * v[i];
            uu += u[i] * u[i];
            vv += v[i] * v[i];
        }
        if uu.sqrt() < 1e-12 || vv.sqrt() < 1e-12 {
            0.0
        } else {
            uv / (uu.sqrt() * vv.sqrt())
        }
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(l2_normalize(&[3.0, 4.0]), vec![0.6, 0.8]);
        assert_eq!(l2_normalize(&[0.0, 0.0]), vec![0.0, 0.0]);
        assert_eq!(l2_normalize(&[1.0; 4]), vec![0.5; 4]);
    }

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), 1.0);
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        let expected = scalar_cosine(&[1.0, 2.0], &[2.0, 1.0]);
        assert_abs_diff_eq!(expected, 0.8, epsilon = 1e-15);
        assert_abs_diff_eq!(cosine(&[1.0, 2.0], &[2.0, 1.0]).unwrap(), expected, epsilon = 1e-12);
        assert!(matches!(cosine(&[1.0], &[1.0, 2.0]), Err(Error::Dimension(_))));
    }

    #[test]
    fn cosine_matrix_examples() {
        let eye = [1.0, 0.0, 0.0, 1.0];
        let m = cosine_matrix(&eye, &eye, 2).unwrap();
        assert_eq!(m.data, vec![1.0, 0.0, 0.0, 1.0]);

        let m = cosine_matrix(&[1.0, 2.0], &[2.0, 1.0], 2).unwrap();
        assert_abs_diff_eq!(m.get(0, 0), 0.8, epsilon = 1e-12);

        let a = [0.0, 0.0, 1.0, 3.0];
        let b = [2.0, -1.0, 0.5, 0.5, 7.0, 1.0];
        let m = cosine_matrix(&a, &b, 2).unwrap();
        assert_eq!(m.row(0), &[0.0, 0.0, 0.0]);
        assert!(cosine_matrix(&a, &[1.0, 2.0, 3.0], 3).is_err());
    }

    #[test]
    fn top_k_examples() {
        let sorted_oracle = |v: &[f64], k: usize| {
            let mut s = v.to_vec();
            s.sort_by(|a, b| b.partial_cmp(a).unwrap());
            s[..k].iter().sum::<f64>()
        };
        let v = [0.9, 0.1, 0.5];
        assert_abs_diff_eq!(top_k_sum(&v, 2).unwrap(), sorted_oracle(&v, 2), epsilon = 1e-15);
        assert_abs_diff_eq!(top_k_sum(&v, 2).unwrap(), 1.4, epsilon = 1e-12);
        assert_abs_diff_eq!(top_k_sum(&[0.3, -0.2, 0.4], 3).unwrap(), 0.5, epsilon = 1e-12);
        assert_eq!(top_k_sum(&[0.7, 0.7, 0.2], 1).unwrap(), 0.7);
        assert!(top_k_sum(&v, 0).is_err());
        assert!(top_k_sum(&v, 4).is_err());
    }

    #[test]
    fn softmax_examples() {
        let p = softmax(&[0.0, 0.0, 0.0]);
        for &x in p.values() {
            assert_abs_diff_eq!(x, 1.0 / 3.0, epsilon = 1e-15);
        }
        let p = softmax(&[1000.0, 0.0]);
        assert_eq!(p.values(), &[1.0, 0.0]);
        let p = softmax(&[std::f64::consts::LN_2, 0.0]);
        let e = std::f64::consts::LN_2.exp();
        assert_abs_diff_eq!(p.values()[0], e / (e + 1.0), epsilon = 1e-15);
        assert_abs_diff_eq!(p.values()[0], 2.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p.values()[1], 1.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn argmax_prefers_lowest_index() {
        assert_eq!(argmax(&[0.2, 0.5, 0.5]), 1);
        assert_eq!(softmax(&[1.0, 1.0]).argmax(), 0);
    }

    #[test]
    fn cross_entropy_matches_log_softmax() {
        let logits = [1.5, -0.5, 3.0];
        let p = softmax(&logits);
        assert_abs_diff_eq!(cross_entropy(&logits, 1), -p.values()[1].ln(), epsilon = 1e-12);
    }

    #[test]
    fn feature_map_validation() {
        assert!(FeatureMap::new(2, 2, 1, vec![0.0; 3]).is_err());
        assert!(FeatureMap::new(1, 1, 1, vec![f64::NAN]).is_err());
        assert!(FeatureMap::new(0, 1, 1, vec![]).is_err());
        let m = FeatureMap::new(3, 2, 2, (0..12).map(f64::from).collect()).unwrap();
        assert_eq!(m.positions(), 6);
        assert_eq!(m.descriptor(4), &[8.0, 9.0]);
    }

    fn small_vec(len: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-10.0f64..10.0, len)
    }

    proptest! {
        #[test]
        fn cosine_is_scale_invariant_and_symmetric(
            (u, v) in (1usize..9).prop_flat_map(|d| (small_vec(d), small_vec(d))),
            a in 0.01f64..100.0,
            b in 0.01f64..100.0,
        ) {
            let base = cosine(&u, &v).unwrap();
            let us: Vec<f64> = u.iter().map(|x| a * x).collect();
            let vs: Vec<f64> = v.iter().map(|x| b * x).collect();
            prop_assert!((cosine(&us, &vs).unwrap() - base).abs() <= 1e-12);
            prop_assert_eq!(cosine(&v, &u).unwrap(), base);
            prop_assert!((scalar_cosine(&u, &v) - base).abs() <= 1e-12);
        }

        #[test]
        fn top_k_full_sum_and_increments(v in prop::collection::vec(-5.0f64..5.0, 1..12)) {
            let total: f64 = v.iter().sum();
            prop_assert!((top_k_sum(&v, v.len()).unwrap() - total).abs() <= 1e-12);
            let mut sorted = v.clone();
            sorted.sort_by(|a, b| b.total_cmp(a));
            for k in 1..v.len() {
                // each step adds exactly the next-largest value
                let step = top_k_sum(&v, k + 1).unwrap() - top_k_sum(&v, k).unwrap();
                prop_assert!((step - sorted[k]).abs() <= 1e-12);
            }
        }

        #[test]
        fn softmax_shift_and_permutation(
            v in prop::collection::vec(-50.0f64..50.0, 1..8),
            shift in -100.0f64..100.0,
        ) {
            let p = softmax(&v);
            prop_assert!((p.values().iter().sum::<f64>() - 1.0).abs() <= 1e-9);
            let shifted: Vec<f64> = v.iter().map(|x| x + shift).collect();
            for (a, b) in p.values().iter().zip(softmax(&shifted).values()) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
            let mut rev = v.clone();
            rev.reverse();
            let pr = softmax(&rev);
            for (i, &x) in p.values().iter().enumerate() {
                prop_assert_eq!(x, pr.values()[v.len() - 1 - i]);
            }
        }
    }
}
