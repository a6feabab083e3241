//! The `K_{p,q}(x, z) = exp(-‖x − z‖_q^p / L^p)` kernel family.
//!
//! Two norm modes are supported: `q = 2` (a generalized Laplace kernel that
//! is invariant to orthogonal transformations) and `q = p` (a product of 1-D
//! kernels). Both are positive definite whenever `0 < p <= q <= 2`.

use std::ops::Range;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, XrfmError};
use crate::linalg::{psd_power, Matrix};

/// Largest number of points used when estimating the median pairwise distance.
pub const MEDIAN_SAMPLE_CAP: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormMode {
    /// `q = 2`
    Euclidean,
    /// `q = p`
    Product,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BandwidthMode {
    Constant,
    /// `L` is multiplied by the median pairwise distance of the leaf.
    Adaptive,
    /// `L` is divided by the median pairwise distance of the leaf.
    AdaptiveLiteral,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub p: f64,
    pub norm: NormMode,
    pub bandwidth: f64,
    pub bandwidth_mode: BandwidthMode,
}

impl Default for KernelSpec {
    fn default() -> Self {
        Self::laplace(10.0)
    }
}

impl KernelSpec {
    pub fn new(p: f64, norm: NormMode, bandwidth: f64) -> Self {
        Self {
            p,
            norm,
            bandwidth,
            bandwidth_mode: BandwidthMode::Constant,
        }
    }

    /// `exp(-‖x − z‖₂ / L)`
    pub fn laplace(bandwidth: f64) -> Self {
        Self::new(1.0, NormMode::Euclidean, bandwidth)
    }

    /// `exp(-‖x − z‖₂² / L²)`
    pub fn gaussian(bandwidth: f64) -> Self {
        Self::new(2.0, NormMode::Euclidean, bandwidth)
    }

    pub fn with_bandwidth(mut self, bandwidth: f64) -> Self {
        self.bandwidth = bandwidth;
        self
    }

    pub fn with_mode(mut self, mode: BandwidthMode) -> Self {
        self.bandwidth_mode = mode;
        self
    }

    /// The norm order `q`.
    pub fn q(&self) -> f64 {
        match self.norm {
            NormMode::Euclidean => 2.0,
            NormMode::Product => self.p,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.p > 0.0 && self.p <= 2.0) {
            return Err(XrfmError::InvalidSpec(format!(
                "exponent p = {} outside (0, 2]",
                self.p
            )));
        }
        if !(self.bandwidth > 0.0 && self.bandwidth.is_finite()) {
            return Err(XrfmError::InvalidSpec(format!(
                "bandwidth L = {} must be positive and finite",
                self.bandwidth
            )));
        }
        Ok(())
    }

    /// `‖a − b‖_q^p`, the quantity inside the exponential before scaling.
    #[inline]
    pub fn distance_power(&self, a: &[f64], b: &[f64]) -> f64 {
        match self.norm {
            NormMode::Euclidean => {
                let sq: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
                pow_half(sq, self.p)
            }
            NormMode::Product => {
                if self.p == 1.0 {
                    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
                } else {
                    a.iter().zip(b).map(|(x, y)| (x - y).abs().powf(self.p)).sum()
                }
            }
        }
    }

    #[inline]
    pub(crate) fn inv_lp(&self) -> f64 {
        self.bandwidth.powf(-self.p)
    }

    #[inline]
    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        (-self.distance_power(a, b) * self.inv_lp()).exp()
    }
}

/// `sq^(p/2)` with fast paths for the common exponents.
#[inline]
pub(crate) fn pow_half(sq: f64, p: f64) -> f64 {
    if p == 2.0 {
        sq
    } else if p == 1.0 {
        sq.sqrt()
    } else {
        sq.powf(0.5 * p)
    }
}

/// Kernel matrix `K(X, Z)`.
pub fn kernel_matrix(spec: &KernelSpec, x: &Matrix, z: &Matrix) -> Result<Matrix> {
    spec.validate()?;
    if x.cols() != z.cols() {
        return Err(XrfmError::DimensionMismatch(format!(
            "kernel_matrix: {} vs {} columns",
            x.cols(),
            z.cols()
        )));
    }
    let m = z.rows();
    let inv = spec.inv_lp();
    let mut out = Matrix::zeros(x.rows(), m);
    if m == 0 {
        return Ok(out);
    }
    out.data_mut()
        .par_chunks_mut(m)
        .enumerate()
        .for_each(|(i, row)| {
            let xi = x.row(i);
            for (j, v) in row.iter_mut().enumerate() {
                *v = (-spec.distance_power(xi, z.row(j)) * inv).exp();
            }
        });
    Ok(out)
}

/// Symmetric Gram matrix `K(X, X) + ridge·I`, filled from the upper triangle.
pub(crate) fn gram_with_ridge(spec: &KernelSpec, x: &Matrix, ridge: f64) -> Matrix {
    let n = x.rows();
    let inv = spec.inv_lp();
    let mut out = Matrix::zeros(n, n);
    out.data_mut()
        .par_chunks_mut(n.max(1))
        .enumerate()
        .for_each(|(i, row)| {
            let xi = x.row(i);
            row[i] = 1.0 + ridge;
            for j in (i + 1)..n {
                row[j] = (-spec.distance_power(xi, x.row(j)) * inv).exp();
            }
        });
    mirror_upper(&mut out);
    out
}

pub(crate) fn mirror_upper(m: &mut Matrix) {
    let n = m.rows();
    for i in 0..n {
        for j in (i + 1)..n {
            m[(j, i)] = m[(i, j)];
        }
    }
}

/// Writes `∂K(x, z)/∂x` into `phi` (length d). Coincident points, and for
/// product kernels coincident coordinates, contribute 0. Returns `false` when
/// the whole gradient is zero.
#[inline]
pub(crate) fn pair_gradient(
    spec: &KernelSpec,
    inv: f64,
    x: &[f64],
    z: &[f64],
    phi: &mut [f64],
) -> bool {
    let p = spec.p;
    match spec.norm {
        NormMode::Euclidean => {
            let sq: f64 = x.iter().zip(z).map(|(a, b)| (a - b) * (a - b)).sum();
            if sq == 0.0 {
                return false;
            }
            let s = pow_half(sq, p);
            let k = (-s * inv).exp();
            // d/dx r^p = p r^(p-2) (x - z)
            let coef = -k * inv * p * s / sq;
            for ((g, a), b) in phi.iter_mut().zip(x).zip(z) {
                *g = coef * (a - b);
            }
            true
        }
        NormMode::Product => {
            let s = spec.distance_power(x, z);
            let k = (-s * inv).exp();
            let coef = -k * inv * p;
            let mut any = false;
            for ((g, a), b) in phi.iter_mut().zip(x).zip(z) {
                let delta = a - b;
                *g = if delta == 0.0 {
                    0.0
                } else {
                    any = true;
                    let mag = if p == 1.0 {
                        1.0
                    } else {
                        delta.abs().powf(p - 1.0)
                    };
                    coef * mag * delta.signum()
                };
            }
            any
        }
    }
}

/// Adds `Σ_j weights_j ⊗ ∂K(x, z_j)/∂x` into `grad`, laid out as c blocks of
/// length d. Row `exclude` of `Z` is skipped.
pub(crate) fn accumulate_jacobian(
    spec: &KernelSpec,
    inv: f64,
    x: &[f64],
    z: &Matrix,
    weights: &Matrix,
    exclude: Option<usize>,
    phi: &mut [f64],
    grad: &mut [f64],
) {
    let d = x.len();
    for j in 0..z.rows() {
        if Some(j) == exclude {
            continue;
        }
        if !pair_gradient(spec, inv, x, z.row(j), phi) {
            continue;
        }
        for (out, &w) in weights.row(j).iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            let block = &mut grad[out * d..(out + 1) * d];
            for (g, f) in block.iter_mut().zip(phi.iter()) {
                *g += w * f;
            }
        }
    }
}

/// Jacobian (d×c) of `f(x) = Σ_j K(x, z_j)·weights_j`. Row `exclude` of `Z`
/// is skipped, which removes a training point's self-interaction.
pub fn kernel_gradient(
    spec: &KernelSpec,
    x: &[f64],
    z: &Matrix,
    weights: &Matrix,
    exclude: Option<usize>,
) -> Result<Matrix> {
    spec.validate()?;
    if x.len() != z.cols() || weights.rows() != z.rows() {
        return Err(XrfmError::DimensionMismatch(format!(
            "kernel_gradient: x has {} entries, Z is {}x{}, weights has {} rows",
            x.len(),
            z.rows(),
            z.cols(),
            weights.rows()
        )));
    }
    let d = x.len();
    let c = weights.cols();
    let mut phi = vec![0.0; d];
    let mut grad = vec![0.0; d * c];
    accumulate_jacobian(spec, spec.inv_lp(), x, z, weights, exclude, &mut phi, &mut grad);
    Ok(Matrix::from_fn(d, c, |k, out| grad[out * d + k]))
}

/// Median of a non-empty slice; even counts average the two central values.
pub(crate) fn median(values: &mut [f64]) -> f64 {
    assert!(!values.is_empty());
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Median of `‖x − x′‖` over distinct pairs with `x ≠ x′`, using the L1 norm
/// for product kernels and L2 otherwise. Returns 0 when every point coincides.
pub fn median_pairwise_distance(spec: &KernelSpec, x: &Matrix, seed: u64) -> f64 {
    let n = x.rows();
    let rows: Vec<usize> = if n > MEDIAN_SAMPLE_CAP {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut idx = sample(&mut rng, n, MEDIAN_SAMPLE_CAP).into_vec();
        idx.sort_unstable();
        idx
    } else {
        (0..n).collect()
    };
    let q = match spec.norm {
        NormMode::Product => 1.0,
        NormMode::Euclidean => 2.0,
    };
    let mut dists = Vec::with_capacity(rows.len() * rows.len().saturating_sub(1) / 2);
    for (a, &i) in rows.iter().enumerate() {
        for &j in &rows[a + 1..] {
            let dist = crate::linalg::q_distance(x.row(i), x.row(j), q);
            if dist > 0.0 {
                dists.push(dist);
            }
        }
    }
    if dists.is_empty() {
        0.0
    } else {
        median(&mut dists)
    }
}

/// Effective bandwidth for a leaf according to `spec.bandwidth_mode`.
pub fn adapt_bandwidth(spec: &KernelSpec, x_leaf: &Matrix, seed: u64) -> f64 {
    if spec.bandwidth_mode == BandwidthMode::Constant {
        return spec.bandwidth;
    }
    let med = median_pairwise_distance(spec, x_leaf, seed);
    if med <= 0.0 {
        return spec.bandwidth;
    }
    match spec.bandwidth_mode {
        BandwidthMode::Adaptive => spec.bandwidth * med,
        BandwidthMode::AdaptiveLiteral => spec.bandwidth / med,
        BandwidthMode::Constant => unreachable!(),
    }
}

/// Precomputed L1 distances `‖T_c (e_i − e_j)‖₁` for one one-hot column group.
#[derive(Debug, Clone, PartialEq)]
pub struct CategoricalBlock {
    pub span: Range<usize>,
    pub table: Matrix,
    /// `‖T_c e_j‖₁`, the distance between category `j` and an all-zero row.
    pub unknown: Vec<f64>,
}

impl CategoricalBlock {
    /// Builds the table from the block's transform `T_c` (already powered).
    pub fn from_transform(span: Range<usize>, transform: &Matrix) -> Self {
        let c = transform.rows();
        let table = Matrix::from_fn(c, c, |i, j| {
            if i == j {
                0.0
            } else {
                (0..c)
                    .map(|k| (transform[(k, i)] - transform[(k, j)]).abs())
                    .sum()
            }
        });
        let unknown = (0..c)
            .map(|j| (0..c).map(|k| transform[(k, j)].abs()).sum())
            .collect();
        Self {
            span,
            table,
            unknown,
        }
    }

    pub fn cardinality(&self) -> usize {
        self.table.rows()
    }

    /// Category index of a one-hot row segment; `Some(None)` for an all-zero
    /// segment and `None` when the segment is not a valid indicator.
    pub fn category_of(&self, row: &[f64]) -> Option<Option<usize>> {
        let seg = &row[self.span.clone()];
        let mut found = None;
        for (i, &v) in seg.iter().enumerate() {
            if v == 1.0 {
                if found.is_some() {
                    return None;
                }
                found = Some(i);
            } else if v != 0.0 {
                return None;
            }
        }
        Some(found)
    }

    #[inline]
    pub fn lookup(&self, a: Option<usize>, b: Option<usize>) -> f64 {
        match (a, b) {
            (Some(i), Some(j)) => self.table[(i, j)],
            (Some(i), None) | (None, Some(i)) => self.unknown[i],
            (None, None) => 0.0,
        }
    }
}

fn check_spans(spans: &[Range<usize>], d: usize) -> Result<()> {
    let mut sorted: Vec<&Range<usize>> = spans.iter().collect();
    sorted.sort_by_key(|r| r.start);
    for r in &sorted {
        if r.start >= r.end || r.end > d {
            return Err(XrfmError::BlockMismatch(format!(
                "span {}..{} is empty or exceeds dimension {d}",
                r.start, r.end
            )));
        }
    }
    for w in sorted.windows(2) {
        if w[1].start < w[0].end {
            return Err(XrfmError::BlockMismatch(format!(
                "spans {}..{} and {}..{} overlap",
                w[0].start, w[0].end, w[1].start, w[1].end
            )));
        }
    }
    Ok(())
}

fn sub_block(m: &Matrix, span: &Range<usize>) -> Matrix {
    let c = span.len();
    Matrix::from_fn(c, c, |i, j| m[(span.start + i, span.start + j)])
}

/// Lookup tables `‖M_c^{1/2}(e_i − e_j)‖₁` for each one-hot group of `M`.
pub fn build_categorical_blocks(
    m: &Matrix,
    column_groups: &[Range<usize>],
) -> Result<Vec<CategoricalBlock>> {
    check_spans(column_groups, m.rows())?;
    column_groups
        .iter()
        .map(|span| {
            let root = psd_power(&sub_block(m, span), 0.5)?;
            Ok(CategoricalBlock::from_transform(span.clone(), &root))
        })
        .collect()
}

/// Gram matrix evaluator for `p = 1` product kernels over data whose
/// categorical groups are transformed block-diagonally: numeric coordinates
/// are compared directly, categorical groups through their lookup tables.
pub(crate) struct BlockGram<'a> {
    numeric: Vec<usize>,
    blocks: &'a [CategoricalBlock],
    codes: Vec<Vec<Option<usize>>>,
}

impl<'a> BlockGram<'a> {
    /// `transformed` holds the rows after the block-diagonal transform and
    /// `raw` the untransformed one-hot rows. Returns `None` if any raw row is
    /// not a valid indicator in some group.
    pub(crate) fn new(
        blocks: &'a [CategoricalBlock],
        raw: &Matrix,
        d: usize,
    ) -> Option<Self> {
        let mut is_cat = vec![false; d];
        for b in blocks {
            is_cat[b.span.clone()].iter_mut().for_each(|v| *v = true);
        }
        let numeric = (0..d).filter(|&k| !is_cat[k]).collect();
        let mut codes = Vec::with_capacity(raw.rows());
        for row in raw.row_iter() {
            let mut rc = Vec::with_capacity(blocks.len());
            for b in blocks {
                rc.push(b.category_of(row)?);
            }
            codes.push(rc);
        }
        Some(Self {
            numeric,
            blocks,
            codes,
        })
    }

    pub(crate) fn gram_with_ridge(&self, spec: &KernelSpec, transformed: &Matrix, ridge: f64) -> Matrix {
        let n = transformed.rows();
        let inv = spec.inv_lp();
        let mut out = Matrix::zeros(n, n);
        out.data_mut()
            .par_chunks_mut(n.max(1))
            .enumerate()
            .for_each(|(i, row)| {
                let xi = transformed.row(i);
                row[i] = 1.0 + ridge;
                for j in (i + 1)..n {
                    let xj = transformed.row(j);
                    let mut s: f64 = self.numeric.iter().map(|&k| (xi[k] - xj[k]).abs()).sum();
                    for (b, block) in self.blocks.iter().enumerate() {
                        s += block.lookup(self.codes[i][b], self.codes[j][b]);
                    }
                    row[j] = (-s * inv).exp();
                }
            });
        mirror_upper(&mut out);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::sym_eigh;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
        Matrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
    }

    fn random_orthogonal(d: usize, rng: &mut ChaCha8Rng) -> Matrix {
        // Gram-Schmidt on a Gaussian matrix
        let g = gaussian(d, d, rng);
        let mut cols: Vec<Vec<f64>> = Vec::new();
        for j in 0..d {
            let mut v = g.column(j);
            for u in &cols {
                let dot: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(u).for_each(|(a, b)| *a -= dot * b);
            }
            let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            v.iter_mut().for_each(|a| *a /= norm);
            cols.push(v);
        }
        Matrix::from_fn(d, d, |i, j| cols[j][i])
    }

    #[test]
    fn zero_distance_gives_one() {
        let x = Matrix::from_rows(&[vec![0.3, -1.2, 4.0]]);
        for spec in [
            KernelSpec::laplace(1.0),
            KernelSpec::gaussian(0.1),
            KernelSpec::new(0.7, NormMode::Product, 3.0),
        ] {
            assert_eq!(kernel_matrix(&spec, &x, &x).unwrap()[(0, 0)], 1.0);
        }
    }

    #[test]
    fn laplace_and_gaussian_values() {
        let x = Matrix::from_rows(&[vec![0.0, 0.0]]);
        let z = Matrix::from_rows(&[vec![3.0, 4.0]]);
        let k = kernel_matrix(&KernelSpec::laplace(1.0), &x, &z).unwrap();
        assert!((k[(0, 0)] - (-5f64).exp()).abs() < 1e-16);
        assert!((k[(0, 0)] - 6.7379e-3).abs() < 1e-7);

        let z = Matrix::from_rows(&[vec![2.0, 0.0]]);
        let k = kernel_matrix(&KernelSpec::gaussian(2.0), &x, &z).unwrap();
        assert!((k[(0, 0)] - (-1f64).exp()).abs() < 1e-16);
        assert!((k[(0, 0)] - 0.367879).abs() < 1e-6);
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let x = Matrix::zeros(1, 1);
        for spec in [
            KernelSpec::new(0.0, NormMode::Euclidean, 1.0),
            KernelSpec::new(2.1, NormMode::Product, 1.0),
            KernelSpec::new(1.0, NormMode::Euclidean, 0.0),
            KernelSpec::new(1.0, NormMode::Euclidean, f64::NAN),
        ] {
            assert!(matches!(
                kernel_matrix(&spec, &x, &x),
                Err(XrfmError::InvalidSpec(_))
            ));
        }
    }

    #[test]
    fn kernel_matrix_matches_scalar_loop() {
        let mut r = rng(11);
        let x = gaussian(6, 4, &mut r);
        let z = gaussian(5, 4, &mut r);
        for (p, norm) in [
            (1.0, NormMode::Euclidean),
            (1.3, NormMode::Euclidean),
            (0.8, NormMode::Product),
            (2.0, NormMode::Product),
        ] {
            let spec = KernelSpec::new(p, norm, 1.7);
            let k = kernel_matrix(&spec, &x, &z).unwrap();
            let q = spec.q();
            for i in 0..6 {
                for j in 0..5 {
                    let dist: f64 = (0..4)
                        .map(|c| (x[(i, c)] - z[(j, c)]).abs().powf(q))
                        .sum::<f64>()
                        .powf(1.0 / q);
                    let expected = (-dist.powf(p) / 1.7f64.powf(p)).exp();
                    assert!((k[(i, j)] - expected).abs() < 1e-13);
                    assert!(k[(i, j)] > 0.0 && k[(i, j)] <= 1.0);
                }
            }
        }
    }

    #[test]
    fn gram_is_symmetric_with_unit_diagonal() {
        let mut r = rng(12);
        let x = gaussian(12, 3, &mut r);
        let spec = KernelSpec::new(1.2, NormMode::Product, 2.0);
        let g = gram_with_ridge(&spec, &x, 0.0);
        let k = kernel_matrix(&spec, &x, &x).unwrap();
        assert!(g.max_abs_diff(&k) < 1e-15);
        for i in 0..12 {
            assert_eq!(g[(i, i)], 1.0);
            for j in 0..12 {
                assert_eq!(g[(i, j)], g[(j, i)]);
            }
        }
    }

    #[test]
    fn kernel_matrices_are_psd() {
        let mut r = rng(13);
        for _ in 0..40 {
            let p = r.gen_range(0.5..=2.0);
            let norm = if r.gen_bool(0.5) {
                NormMode::Euclidean
            } else {
                NormMode::Product
            };
            let spec = KernelSpec::new(p, norm, r.gen_range(0.5..5.0));
            let x = gaussian(30, 5, &mut r);
            let k = kernel_matrix(&spec, &x, &x).unwrap();
            let min = *sym_eigh(&k).unwrap().eigenvalues.last().unwrap();
            assert!(min >= -1e-8 * 30.0, "p={p} {norm:?} min eig {min}");
        }
    }

    #[test]
    fn euclidean_kernel_is_orthogonally_invariant() {
        let mut r = rng(14);
        let x = gaussian(7, 5, &mut r);
        let z = gaussian(4, 5, &mut r);
        let u = random_orthogonal(5, &mut r);
        let spec = KernelSpec::new(1.4, NormMode::Euclidean, 2.5);
        let k = kernel_matrix(&spec, &x, &z).unwrap();
        let ku = kernel_matrix(&spec, &x.matmul(&u).unwrap(), &z.matmul(&u).unwrap()).unwrap();
        assert!(k.max_abs_diff(&ku) < 1e-12);
    }

    #[test]
    fn product_kernel_factorizes() {
        let mut r = rng(15);
        let x = gaussian(5, 4, &mut r);
        let z = gaussian(5, 4, &mut r);
        let spec = KernelSpec::new(0.9, NormMode::Product, 1.3);
        let k = kernel_matrix(&spec, &x, &z).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                let prod: f64 = (0..4)
                    .map(|c| {
                        let a = Matrix::from_rows(&[vec![x[(i, c)]]]);
                        let b = Matrix::from_rows(&[vec![z[(j, c)]]]);
                        kernel_matrix(&spec, &a, &b).unwrap()[(0, 0)]
                    })
                    .product();
                assert!((k[(i, j)] - prod).abs() < 1e-12);
            }
        }
    }

    fn finite_difference_jacobian(
        spec: &KernelSpec,
        x: &[f64],
        z: &Matrix,
        w: &Matrix,
        h: f64,
    ) -> Matrix {
        let f = |pt: &[f64]| -> Vec<f64> {
            let k = kernel_matrix(spec, &Matrix::from_rows(&[pt.to_vec()]), z).unwrap();
            k.matmul(w).unwrap().into_data()
        };
        let d = x.len();
        let mut jac = Matrix::zeros(d, w.cols());
        for k in 0..d {
            let mut plus = x.to_vec();
            let mut minus = x.to_vec();
            plus[k] += h;
            minus[k] -= h;
            let (fp, fm) = (f(&plus), f(&minus));
            for c in 0..w.cols() {
                jac[(k, c)] = (fp[c] - fm[c]) / (2.0 * h);
            }
        }
        jac
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut r = rng(16);
        for (p, norm) in [
            (2.0, NormMode::Euclidean),
            (1.0, NormMode::Euclidean),
            (1.3, NormMode::Euclidean),
            (1.0, NormMode::Product),
            (1.3, NormMode::Product),
            (2.0, NormMode::Product),
        ] {
            let spec = KernelSpec::new(p, norm, 2.0);
            let z = gaussian(10, 4, &mut r);
            let w = gaussian(10, 2, &mut r);
            let x: Vec<f64> = (0..4).map(|_| r.sample(StandardNormal)).collect();
            let jac = kernel_gradient(&spec, &x, &z, &w, None).unwrap();
            let fd = finite_difference_jacobian(&spec, &x, &z, &w, 1e-5);
            let scale = fd.max_abs().max(1e-12);
            assert!(
                jac.max_abs_diff(&fd) <= 1e-4 * scale,
                "p={p} {norm:?}: {} vs scale {scale}",
                jac.max_abs_diff(&fd)
            );
        }
    }

    #[test]
    fn gradient_degenerate_cases() {
        let spec = KernelSpec::laplace(1.0);
        let z = Matrix::from_rows(&[vec![1.0, 2.0], vec![0.0, 1.0]]);
        let jac = kernel_gradient(&spec, &[0.5, 0.5], &z, &Matrix::zeros(2, 1), None).unwrap();
        assert_eq!(jac.max_abs(), 0.0);

        let single = Matrix::from_rows(&[vec![1.0, 2.0]]);
        let w = Matrix::column_vector(&[3.0]);
        let jac = kernel_gradient(&spec, &[1.0, 2.0], &single, &w, Some(0)).unwrap();
        assert_eq!(jac.max_abs(), 0.0);
        // coincident point without exclusion contributes nothing either
        let jac = kernel_gradient(&spec, &[1.0, 2.0], &single, &w, None).unwrap();
        assert_eq!(jac.max_abs(), 0.0);
    }

    #[test]
    fn adaptive_bandwidth_cases() {
        let spec = KernelSpec::laplace(1.0).with_mode(BandwidthMode::Adaptive);
        let two = Matrix::from_rows(&[vec![0.0, 0.0], vec![2.0, 0.0]]);
        assert_eq!(adapt_bandwidth(&spec, &two, 0), 2.0);

        let literal = spec.with_mode(BandwidthMode::AdaptiveLiteral);
        assert_eq!(adapt_bandwidth(&literal, &two, 0), 0.5);

        let same = Matrix::from_rows(&vec![vec![1.0, 1.0]; 5]);
        assert_eq!(adapt_bandwidth(&spec.with_bandwidth(3.0), &same, 0), 3.0);

        let constant = KernelSpec::laplace(4.0);
        assert_eq!(adapt_bandwidth(&constant, &two, 0), 4.0);
    }

    #[test]
    fn adaptive_bandwidth_matches_all_pairs_median() {
        let mut r = rng(17);
        let x = gaussian(50, 3, &mut r);
        for norm in [NormMode::Euclidean, NormMode::Product] {
            let spec = KernelSpec::new(1.0, norm, 1.5).with_mode(BandwidthMode::Adaptive);
            let q = if norm == NormMode::Product { 1.0 } else { 2.0 };
            let mut all = Vec::new();
            for i in 0..50 {
                for j in 0..50 {
                    if i < j {
                        let d: f64 = (0..3)
                            .map(|c| (x[(i, c)] - x[(j, c)]).abs().powf(q))
                            .sum::<f64>()
                            .powf(1.0 / q);
                        all.push(d);
                    }
                }
            }
            all.sort_by(f64::total_cmp);
            // 1225 pairs: the median is the 613th smallest
            let expected = all[612];
            let got = adapt_bandwidth(&spec, &x, 9);
            assert!((got - 1.5 * expected).abs() < 1e-12);
        }
    }

    #[test]
    fn median_pairwise_subsamples_large_inputs() {
        let mut r = rng(18);
        let x = gaussian(1500, 2, &mut r);
        let spec = KernelSpec::laplace(1.0);
        let a = median_pairwise_distance(&spec, &x, 1);
        let b = median_pairwise_distance(&spec, &x, 1);
        assert_eq!(a, b);
        // median distance between 2-D standard normals is 2·sqrt(ln 2) ≈ 1.665
        assert!((a - 1.665).abs() < 0.05, "{a}");
    }

    #[test]
    fn categorical_identity_block() {
        let blocks = build_categorical_blocks(&Matrix::identity(2), &[0..2]).unwrap();
        assert_eq!(blocks[0].table[(0, 0)], 0.0);
        assert_eq!(blocks[0].table[(0, 1)], 2.0);
        assert_eq!(blocks[0].table[(1, 0)], 2.0);
    }

    #[test]
    fn categorical_span_errors() {
        let m = Matrix::identity(5);
        assert!(matches!(
            build_categorical_blocks(&m, &[0..3, 2..4]),
            Err(XrfmError::BlockMismatch(_))
        ));
        assert!(matches!(
            build_categorical_blocks(&m, &[3..6]),
            Err(XrfmError::BlockMismatch(_))
        ));
    }

    #[test]
    fn categorical_lookup_matches_direct() {
        let mut r = rng(19);
        for _ in 0..10 {
            let c = r.gen_range(2..6);
            let g = gaussian(c, c, &mut r);
            let mc = g.matmul(&g.transpose()).unwrap();
            let blocks = build_categorical_blocks(&mc, &[0..c]).unwrap();
            let root = psd_power(&mc, 0.5).unwrap();
            let spec = KernelSpec::new(1.0, NormMode::Product, 1.7);
            for i in 0..c {
                for j in 0..c {
                    let ei = Matrix::from_fn(1, c, |_, k| if k == i { 1.0 } else { 0.0 });
                    let ej = Matrix::from_fn(1, c, |_, k| if k == j { 1.0 } else { 0.0 });
                    let direct = kernel_matrix(
                        &spec,
                        &ei.matmul(&root).unwrap(),
                        &ej.matmul(&root).unwrap(),
                    )
                    .unwrap()[(0, 0)];
                    let lookup = (-blocks[0].table[(i, j)] / 1.7).exp();
                    assert!((direct - lookup).abs() < 1e-12);
                }
            }
        }
    }
}
