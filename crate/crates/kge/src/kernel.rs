//! Minimal dense linear algebra: vectors, square matrices, the bilinear
//! form `xᵀ W y` and its partial derivatives, and L2 normalization.
//!
//! Everything here is 64-bit and row-major. The shapes involved are small
//! (embedding dimensions up to a few hundred), so there is no BLAS and no
//! sparsity — just tight loops over contiguous storage.

use crate::error::{Error, Result};

/// A dense vector of `f64` values.
#[derive(Debug, Clone, PartialEq)]
pub struct Vector(pub Vec<f64>);

/// A dense square matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    data: Vec<f64>,
    dim: usize,
}

impl Vector {
    pub fn zeros(dim: usize) -> Self {
        Vector(vec![0.0; dim])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dot(&self, other: &Vector) -> f64 {
        debug_assert_eq!(self.len(), other.len());
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    /// `self += factor * other`
    pub fn add_scaled(&mut self, factor: f64, other: &Vector) {
        debug_assert_eq!(self.len(), other.len());
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += factor * b;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for v in &mut self.0 {
            *v *= factor;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

impl Matrix {
    pub fn zeros(dim: usize) -> Self {
        Matrix {
            data: vec![0.0; dim * dim],
            dim,
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Matrix::zeros(dim);
        for i in 0..dim {
            m.data[i * dim + i] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let dim = rows.len();
        let mut data = Vec::with_capacity(dim * dim);
        for row in rows {
            assert_eq!(row.len(), dim, "matrix rows must be square");
            data.extend_from_slice(row);
        }
        Matrix { data, dim }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.dim + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.data[row * self.dim + col] = value;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// `W y`
    pub fn matvec(&self, y: &Vector) -> Vector {
        debug_assert_eq!(self.dim, y.len());
        let mut out = Vector::zeros(self.dim);
        for (row, o) in out.0.iter_mut().enumerate() {
            let base = row * self.dim;
            *o = self.data[base..base + self.dim]
                .iter()
                .zip(&y.0)
                .map(|(w, v)| w * v)
                .sum();
        }
        out
    }

    /// `Wᵀ x`
    pub fn matvec_transpose(&self, x: &Vector) -> Vector {
        debug_assert_eq!(self.dim, x.len());
        let mut out = Vector::zeros(self.dim);
        for (row, xv) in x.0.iter().enumerate() {
            let base = row * self.dim;
            for (o, w) in out.0.iter_mut().zip(&self.data[base..base + self.dim]) {
                *o += xv * w;
            }
        }
        out
    }

    /// `self += factor * x yᵀ`
    pub fn add_scaled_outer(&mut self, factor: f64, x: &Vector, y: &Vector) {
        debug_assert_eq!(self.dim, x.len());
        debug_assert_eq!(self.dim, y.len());
        for (row, xv) in x.0.iter().enumerate() {
            let fx = factor * xv;
            let base = row * self.dim;
            for (w, yv) in self.data[base..base + self.dim].iter_mut().zip(&y.0) {
                *w += fx * yv;
            }
        }
    }

    /// `self += factor * other`
    pub fn add_scaled(&mut self, factor: f64, other: &Matrix) {
        debug_assert_eq!(self.dim, other.dim);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += factor * b;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for v in &mut self.data {
            *v *= factor;
        }
    }

    /// Squared Frobenius norm.
    pub fn frobenius_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

fn check_dims(x: &Vector, w: &Matrix, y: &Vector) -> Result<()> {
    if x.len() != w.dim() || y.len() != w.dim() {
        return Err(Error::InvalidArgument(format!(
            "bilinear dimension mismatch: x has {}, W has {}x{}, y has {}",
            x.len(),
            w.dim(),
            w.dim(),
            y.len()
        )));
    }
    Ok(())
}

/// The bilinear form `Σ_ij x_i W_ij y_j`.
pub fn bilinear(x: &Vector, w: &Matrix, y: &Vector) -> Result<f64> {
    check_dims(x, w, y)?;
    Ok(bilinear_unchecked(x, w, y))
}

/// As [`bilinear`] but with dimensions guaranteed by the caller.
pub(crate) fn bilinear_unchecked(x: &Vector, w: &Matrix, y: &Vector) -> f64 {
    let dim = w.dim();
    let mut total = 0.0;
    for (row, xv) in x.0.iter().enumerate() {
        let base = row * dim;
        let row_dot: f64 = w.as_slice()[base..base + dim]
            .iter()
            .zip(&y.0)
            .map(|(wv, yv)| wv * yv)
            .sum();
        total += xv * row_dot;
    }
    total
}

/// Partial derivatives of the bilinear form with respect to each argument:
/// `∂/∂x = W y`, `∂/∂W = x yᵀ`, `∂/∂y = Wᵀ x`.
pub fn bilinear_grads(x: &Vector, w: &Matrix, y: &Vector) -> Result<(Vector, Matrix, Vector)> {
    check_dims(x, w, y)?;
    let gx = w.matvec(y);
    let gy = w.matvec_transpose(x);
    let mut gw = Matrix::zeros(w.dim());
    gw.add_scaled_outer(1.0, x, y);
    Ok((gx, gw, gy))
}

/// Returns `x / ‖x‖₂`. Fails on the zero vector.
pub fn l2_normalize(x: &Vector) -> Result<Vector> {
    let norm = x.norm();
    if norm == 0.0 {
        return Err(Error::NumericDegenerate(
            "cannot normalize a zero vector".to_string(),
        ));
    }
    Ok(Vector(x.0.iter().map(|v| v / norm).collect()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_vector(rng: &mut impl Rng, dim: usize) -> Vector {
        Vector((0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
    }

    fn random_matrix(rng: &mut impl Rng, dim: usize) -> Matrix {
        let mut m = Matrix::zeros(dim);
        for v in m.as_mut_slice() {
            *v = rng.gen_range(-1.0..1.0);
        }
        m
    }

    #[test]
    fn bilinear_identity_basis() {
        let e1 = Vector(vec![1.0, 0.0, 0.0]);
        let id = Matrix::identity(3);
        assert_eq!(bilinear(&e1, &id, &e1).unwrap(), 1.0);
    }

    #[test]
    fn bilinear_zero_vector() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let zero = Vector::zeros(4);
        let w = random_matrix(&mut rng, 4);
        let y = random_vector(&mut rng, 4);
        assert_eq!(bilinear(&zero, &w, &y).unwrap(), 0.0);
    }

    #[test]
    fn bilinear_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random_vector(&mut rng, 4);
        let w = random_matrix(&mut rng, 4);
        let y = random_vector(&mut rng, 4);
        // independent oracle: literal triple-loop summation
        let mut expected = 0.0;
        for i in 0..4 {
            for j in 0..4 {
                expected += x.0[i] * w.get(i, j) * y.0[j];
            }
        }
        assert_relative_eq!(bilinear(&x, &w, &y).unwrap(), expected, max_relative = 1e-12);
    }

    #[test]
    fn bilinear_dimension_mismatch() {
        let x = Vector::zeros(3);
        let w = Matrix::zeros(4);
        let y = Vector::zeros(4);
        assert!(bilinear(&x, &w, &y).is_err());
    }

    #[test]
    fn bilinear_identity_is_dot() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random_vector(&mut rng, 7);
        let y = random_vector(&mut rng, 7);
        let id = Matrix::identity(7);
        assert_relative_eq!(
            bilinear(&x, &id, &y).unwrap(),
            x.dot(&y),
            max_relative = 1e-12
        );
    }

    #[test]
    fn grads_identity_relation() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random_vector(&mut rng, 5);
        let y = random_vector(&mut rng, 5);
        let id = Matrix::identity(5);
        let (gx, gw, gy) = bilinear_grads(&x, &id, &y).unwrap();
        assert_eq!(gx, y);
        assert_eq!(gy, x);
        for i in 0..5 {
            for j in 0..5 {
                assert_relative_eq!(gw.get(i, j), x.0[i] * y.0[j]);
            }
        }
    }

    #[test]
    fn grads_zero_inputs() {
        let zero = Vector::zeros(3);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let w = random_matrix(&mut rng, 3);
        let (_, gw, _) = bilinear_grads(&zero, &w, &zero).unwrap();
        assert!(gw.as_slice().iter().all(|&v| v == 0.0));
    }

    // Central finite-difference oracle for a scalar function of one slot.
    fn central_diff(mut f: impl FnMut(f64) -> f64, at: f64, step: f64) -> f64 {
        (f(at + step) - f(at - step)) / (2.0 * step)
    }

    fn assert_close_fd(analytic: f64, numeric: f64) {
        let scale = analytic.abs().max(numeric.abs()).max(1e-8);
        assert!(
            (analytic - numeric).abs() / scale <= 1e-6,
            "analytic {analytic} vs finite-difference {numeric}"
        );
    }

    #[test]
    fn grads_match_finite_differences() {
        let step = 1e-5;
        for dim in [2usize, 5, 20] {
            let mut rng = ChaCha8Rng::seed_from_u64(6 + dim as u64);
            let x = random_vector(&mut rng, dim);
            let w = random_matrix(&mut rng, dim);
            let y = random_vector(&mut rng, dim);
            let (gx, gw, gy) = bilinear_grads(&x, &w, &y).unwrap();

            for i in 0..dim {
                let fd = central_diff(
                    |v| {
                        let mut xp = x.clone();
                        xp.0[i] = v;
                        bilinear(&xp, &w, &y).unwrap()
                    },
                    x.0[i],
                    step,
                );
                assert_close_fd(gx.0[i], fd);

                let fd = central_diff(
                    |v| {
                        let mut yp = y.clone();
                        yp.0[i] = v;
                        bilinear(&x, &w, &yp).unwrap()
                    },
                    y.0[i],
                    step,
                );
                assert_close_fd(gy.0[i], fd);

                for j in 0..dim {
                    let fd = central_diff(
                        |v| {
                            let mut wp = w.clone();
                            wp.set(i, j, v);
                            bilinear(&x, &wp, &y).unwrap()
                        },
                        w.get(i, j),
                        step,
                    );
                    assert_close_fd(gw.get(i, j), fd);
                }
            }
        }
    }

    #[test]
    fn normalize_three_four_five() {
        let v = Vector(vec![3.0, 4.0]);
        let n = l2_normalize(&v).unwrap();
        assert_relative_eq!(n.0[0], 0.6, epsilon = 1e-15);
        assert_relative_eq!(n.0[1], 0.8, epsilon = 1e-15);
    }

    #[test]
    fn normalize_zero_vector_fails() {
        assert!(matches!(
            l2_normalize(&Vector::zeros(3)),
            Err(Error::NumericDegenerate(_))
        ));
    }

    #[test]
    fn normalize_random_has_unit_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let v = random_vector(&mut rng, 12);
            if v.norm() == 0.0 {
                continue;
            }
            let n = l2_normalize(&v).unwrap();
            assert!((n.norm() - 1.0).abs() <= 1e-12);
        }
    }

    proptest! {
        #[test]
        fn bilinear_scales_linearly(seed in 0u64..1000, a in -3.0f64..3.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = random_vector(&mut rng, 6);
            let w = random_matrix(&mut rng, 6);
            let y = random_vector(&mut rng, 6);
            let base = bilinear(&x, &w, &y).unwrap();

            let mut xs = x.clone();
            xs.scale(a);
            let sx = bilinear(&xs, &w, &y).unwrap();
            prop_assert!((sx - a * base).abs() <= 1e-12 * (1.0 + base.abs() * a.abs()));

            let mut ys = y.clone();
            ys.scale(a);
            let sy = bilinear(&x, &w, &ys).unwrap();
            prop_assert!((sy - a * base).abs() <= 1e-12 * (1.0 + base.abs() * a.abs()));

            let mut ws = w.clone();
            ws.scale(a);
            let sw = bilinear(&x, &ws, &y).unwrap();
            prop_assert!((sw - a * base).abs() <= 1e-12 * (1.0 + base.abs() * a.abs()));
        }

        #[test]
        fn normalize_is_idempotent(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let v = random_vector(&mut rng, 8);
            prop_assume!(v.norm() > 1e-6);
            let once = l2_normalize(&v).unwrap();
            let twice = l2_normalize(&once).unwrap();
            for (a, b) in once.0.iter().zip(&twice.0) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }
    }
}
