//! Flat parameter vectors and the geometry every subspace operation is
//! built from: SGD steps, full-vector cosine distance (with its gradient),
//! and coefficient-weighted interpolation between endpoints.

use std::sync::Arc;

use crate::error::CoreError;
use crate::model::{Layout, LayoutEntry};
use crate::task::Coeffs;
use crate::tensor::{Scalar, Tensor};
use crate::Result;

/// One model's parameters as a flat vector plus the layout that names it.
#[derive(Debug, Clone)]
pub struct ParamVector<F: Scalar = f32> {
    values: Vec<F>,
    layout: Arc<Layout>,
    fingerprint: u64,
}

impl<F: Scalar> ParamVector<F> {
    pub fn from_parts(values: Vec<F>, layout: Layout, fingerprint: u64) -> Self {
        assert_eq!(
            values.len(),
            layout.total_size(),
            "layout size must equal flat length"
        );
        ParamVector { values, layout: Arc::new(layout), fingerprint }
    }

    /// Zero vector with the same layout and fingerprint as `self`.
    pub fn zeros_like(&self) -> Self {
        ParamVector {
            values: vec![F::zero(); self.values.len()],
            layout: Arc::clone(&self.layout),
            fingerprint: self.fingerprint,
        }
    }

    /// Single bias-free matrix parameterization of a purely linear map.
    pub fn matrix(rows: usize, cols: usize, values: Vec<F>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(CoreError::shape(
                "linear matrix parameters",
                format!("{}", rows * cols),
                format!("{}", values.len()),
            ));
        }
        let layout = Layout {
            entries: vec![LayoutEntry { name: "linear.weight".into(), shape: vec![rows, cols] }],
        };
        let fingerprint = crate::model::fnv1a(format!("linear {rows}x{cols}").as_bytes());
        Ok(ParamVector::from_parts(values, layout, fingerprint))
    }

    pub fn values(&self) -> &[F] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [F] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    /// Flat view of the layout entry at `index`.
    pub fn block(&self, index: usize) -> &[F] {
        let (offset, size) = self.layout.span(index);
        &self.values[offset..offset + size]
    }

    pub fn block_mut(&mut self, index: usize) -> &mut [F] {
        let (offset, size) = self.layout.span(index);
        &mut self.values[offset..offset + size]
    }

    pub fn compatible_with(&self, other: &ParamVector<F>) -> Result<()> {
        if self.fingerprint != other.fingerprint {
            return Err(CoreError::FingerprintMismatch {
                expected: self.fingerprint,
                got: other.fingerprint,
            });
        }
        Ok(())
    }

    pub fn dot(&self, other: &ParamVector<F>) -> F {
        let mut acc = F::zero();
        for (a, b) in self.values.iter().zip(&other.values) {
            acc += *a * *b;
        }
        acc
    }

    pub fn l2_norm(&self) -> F {
        self.dot(self).sqrt()
    }

    pub fn to_f64(&self) -> ParamVector<f64> {
        ParamVector {
            values: self.values.iter().map(|v| v.as_f64()).collect(),
            layout: Arc::new(self.layout.as_ref().clone()),
            fingerprint: self.fingerprint,
        }
    }

    pub fn err_if_not_finite(&self, context: &str) -> Result<()> {
        if self.values.iter().any(|v| !v.is_finite()) {
            Err(CoreError::non_finite(context))
        } else {
            Ok(())
        }
    }
}

impl ParamVector<f64> {
    pub fn to_f32(&self) -> ParamVector<f32> {
        ParamVector {
            values: self.values.iter().map(|&v| v as f32).collect(),
            layout: Arc::new(self.layout.as_ref().clone()),
            fingerprint: self.fingerprint,
        }
    }
}

impl<F: Scalar> PartialEq for ParamVector<F> {
    fn eq(&self, other: &Self) -> bool {
        self.fingerprint == other.fingerprint && self.values == other.values
    }
}

/// Parameter gradient with the scalar loss it came from.
#[derive(Debug, Clone)]
pub struct GradRecord<F: Scalar = f32> {
    pub grad: ParamVector<F>,
    pub loss: F,
    pub batch_id: u64,
}

/// `params - lr * grad`, elementwise.
pub fn sgd_step<F: Scalar>(params: &ParamVector<F>, grad: &GradRecord<F>, lr: F) -> Result<ParamVector<F>> {
    params.compatible_with(&grad.grad)?;
    let mut out = params.clone();
    for (p, g) in out.values.iter_mut().zip(grad.grad.values()) {
        *p = *p - lr * *g;
    }
    Ok(out)
}

/// `1 - a.b / (|a||b|)` over the full flat vectors.
pub fn cosine_distance<F: Scalar>(a: &ParamVector<F>, b: &ParamVector<F>) -> Result<F> {
    a.compatible_with(b)?;
    let na = a.l2_norm();
    let nb = b.l2_norm();
    if na == F::zero() || nb == F::zero() {
        return Err(CoreError::zero_norm("cosine_distance"));
    }
    Ok(F::one() - a.dot(b) / (na * nb))
}

/// Cosine similarity of two raw value slices; zero-norm inputs map to 0.
pub fn cosine_similarity_raw<F: Scalar>(a: &[F], b: &[F]) -> F {
    let mut dot = F::zero();
    let mut na = F::zero();
    let mut nb = F::zero();
    for (x, y) in a.iter().zip(b) {
        dot += *x * *y;
        na += *x * *x;
        nb += *y * *y;
    }
    if na == F::zero() || nb == F::zero() {
        return F::zero();
    }
    dot / (na.sqrt() * nb.sqrt())
}

/// Mean cosine distance from endpoint `i` to every other endpoint, with the
/// gradient taken w.r.t. endpoint `i` only (the others held constant).
pub fn avg_cosine_distance_grad<F: Scalar>(
    i: usize,
    endpoints: &[ParamVector<F>],
) -> Result<(F, GradRecord<F>)> {
    if endpoints.len() < 2 {
        return Err(CoreError::InvalidParameter(
            "avg_cosine_distance_grad needs at least 2 endpoints".into(),
        ));
    }
    let theta = &endpoints[i];
    let na = theta.l2_norm();
    if na == F::zero() {
        return Err(CoreError::zero_norm("avg_cosine_distance_grad endpoint"));
    }
    let count = F::from_f64((endpoints.len() - 1) as f64);
    let mut value = F::zero();
    let mut grad = theta.zeros_like();
    for (n, other) in endpoints.iter().enumerate() {
        if n == i {
            continue;
        }
        theta.compatible_with(other)?;
        let nb = other.l2_norm();
        if nb == F::zero() {
            return Err(CoreError::zero_norm("avg_cosine_distance_grad endpoint"));
        }
        let dot = theta.dot(other);
        value += F::one() - dot / (na * nb);
        // d/da [1 - a.b/(|a||b|)] = (a.b)/(|a|^3 |b|) a - b/(|a||b|)
        let coeff_a = dot / (na * na * na * nb);
        let coeff_b = F::one() / (na * nb);
        for ((g, a), b) in grad.values.iter_mut().zip(theta.values()).zip(other.values()) {
            *g += coeff_a * *a - coeff_b * *b;
        }
    }
    value = value / count;
    for g in grad.values.iter_mut() {
        *g = *g / count;
    }
    let record = GradRecord { grad, loss: value, batch_id: 0 };
    Ok((value, record))
}

/// Coefficient-weighted sum of endpoints.
pub fn interpolate_params<F: Scalar>(
    coeffs: &Coeffs,
    endpoints: &[ParamVector<F>],
) -> Result<ParamVector<F>> {
    if coeffs.len() != endpoints.len() {
        return Err(CoreError::shape(
            "interpolate_params",
            format!("{} coefficients", endpoints.len()),
            format!("{}", coeffs.len()),
        ));
    }
    if endpoints.is_empty() {
        return Err(CoreError::Empty("interpolate_params endpoints".into()));
    }
    for w in endpoints.windows(2) {
        w[0].compatible_with(&w[1])?;
    }
    let mut out = endpoints[0].zeros_like();
    for (alpha, endpoint) in coeffs.alpha().iter().zip(endpoints) {
        let a = F::from_f64(*alpha as f64);
        for (o, v) in out.values.iter_mut().zip(endpoint.values()) {
            *o += a * *v;
        }
    }
    Ok(out)
}

/// Gradient of the scalar loss `mean(theta . x)` w.r.t. a bias-free matrix
/// `theta`, linear in the input by construction.
fn linear_loss_grad<F: Scalar>(rows: usize, cols: usize, batch: &Tensor<F>) -> Vec<F> {
    let b = batch.outer_len();
    let scale = F::one() / F::from_f64((b * rows) as f64);
    // dL/dtheta[k][l] = scale * sum_b x[b][l]; identical for every k.
    let mut col_sums = vec![F::zero(); cols];
    for bi in 0..b {
        let row = batch.row(bi);
        for (s, x) in col_sums.iter_mut().zip(row) {
            *s += *x;
        }
    }
    let mut grad = Vec::with_capacity(rows * cols);
    for _ in 0..rows {
        for s in &col_sums {
            grad.push(*s * scale);
        }
    }
    grad
}

/// Checks that the gradient of the linear loss at an interpolated input
/// equals the coefficient-weighted sum of per-input gradients. Returns the
/// max absolute deviation between the two routes.
pub fn linear_grad_decomposition_check<F: Scalar>(
    theta: &ParamVector<F>,
    inputs: &[Tensor<F>],
    coeffs: &Coeffs,
) -> Result<F> {
    let entries = &theta.layout().entries;
    if entries.len() != 1 || entries[0].shape.len() != 2 {
        return Err(CoreError::InvalidParameter(
            "linear_grad_decomposition_check requires a purely linear (single bias-free matrix) model".into(),
        ));
    }
    let rows = entries[0].shape[0];
    let cols = entries[0].shape[1];
    if inputs.is_empty() || inputs.len() != coeffs.len() {
        return Err(CoreError::shape(
            "linear_grad_decomposition_check",
            format!("{} inputs", coeffs.len()),
            format!("{}", inputs.len()),
        ));
    }
    for t in inputs {
        if t.inner_len() != cols {
            return Err(CoreError::shape(
                "linear_grad_decomposition_check input",
                format!("{cols} features"),
                format!("{}", t.inner_len()),
            ));
        }
        if t.outer_len() != inputs[0].outer_len() {
            return Err(CoreError::shape(
                "linear_grad_decomposition_check input",
                format!("{} samples", inputs[0].outer_len()),
                format!("{}", t.outer_len()),
            ));
        }
    }

    // Route A: gradient at the interpolated input.
    let mut mixed: Tensor<F> = Tensor::zeros(inputs[0].shape().to_vec());
    for (alpha, input) in coeffs.alpha().iter().zip(inputs) {
        let a = F::from_f64(*alpha as f64);
        for (m, x) in mixed.data_mut().iter_mut().zip(input.data()) {
            *m += a * *x;
        }
    }
    let grad_mixed = linear_loss_grad(rows, cols, &mixed);

    // Route B: coefficient-weighted sum of per-input gradients.
    let mut grad_sum = vec![F::zero(); rows * cols];
    for (alpha, input) in coeffs.alpha().iter().zip(inputs) {
        let a = F::from_f64(*alpha as f64);
        let g = linear_loss_grad(rows, cols, input);
        for (s, gi) in grad_sum.iter_mut().zip(g) {
            *s += a * gi;
        }
    }

    let mut max_dev = F::zero();
    for (a, b) in grad_mixed.iter().zip(&grad_sum) {
        let d: F = (*a - *b).abs();
        if d > max_dev {
            max_dev = d;
        }
    }
    Ok(max_dev)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{InputShape, ModelSpec};

    fn pair(a: Vec<f32>, b: Vec<f32>) -> (ParamVector<f32>, ParamVector<f32>) {
        let n = a.len();
        (
            ParamVector::matrix(1, n, a).unwrap(),
            ParamVector::matrix(1, n, b).unwrap(),
        )
    }

    #[test]
    fn sgd_step_arithmetic() {
        let (p, g) = pair(vec![1.0, 1.0], vec![1.0, -1.0]);
        let rec = GradRecord { grad: g, loss: 0.0, batch_id: 0 };
        let out = sgd_step(&p, &rec, 0.5).unwrap();
        assert_eq!(out.values(), &[0.5, 1.5]);
        let unchanged = sgd_step(&p, &rec, 0.0).unwrap();
        assert_eq!(unchanged.values(), p.values());
    }

    #[test]
    fn two_steps_match_doubled_rate() {
        let (p, g) = pair(vec![0.25, -3.0, 7.5], vec![1.5, 0.5, -2.0]);
        let rec = GradRecord { grad: g, loss: 0.0, batch_id: 0 };
        let twice = sgd_step(&sgd_step(&p, &rec, 0.1).unwrap(), &rec, 0.1).unwrap();
        let once = sgd_step(&p, &rec, 0.2).unwrap();
        for (a, b) in twice.values().iter().zip(once.values()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn cosine_distance_examples() {
        let (a, b) = pair(vec![1.0, 0.0], vec![0.0, 1.0]);
        assert!((cosine_distance(&a, &b).unwrap() - 1.0).abs() < 1e-7);
        assert!(cosine_distance(&a, &a).unwrap().abs() < 1e-7);
        let (c, d) = pair(vec![1.0, 1.0], vec![1.0, 0.0]);
        let expected = 1.0 - 1.0 / 2.0f32.sqrt();
        assert!((cosine_distance(&c, &d).unwrap() - expected).abs() < 1e-6);
    }

    #[test]
    fn cosine_distance_rejects_zero_norm() {
        let (a, z) = pair(vec![1.0, 0.0], vec![0.0, 0.0]);
        assert!(matches!(cosine_distance(&a, &z), Err(CoreError::ZeroNorm { .. })));
    }

    #[test]
    fn cosine_distance_rejects_fingerprint_mismatch() {
        let a = ParamVector::matrix(1, 2, vec![1.0f32, 0.0]).unwrap();
        let b = ParamVector::matrix(2, 1, vec![1.0f32, 0.0]).unwrap();
        assert!(matches!(
            cosine_distance(&a, &b),
            Err(CoreError::FingerprintMismatch { .. })
        ));
    }

    #[test]
    fn avg_distance_trivial_cases() {
        let (a, _) = pair(vec![1.0, 2.0], vec![0.0; 2]);
        let endpoints = vec![a.clone(), a.clone(), a.clone()];
        let (value, rec) = avg_cosine_distance_grad(0, &endpoints).unwrap();
        assert!(value.abs() < 1e-6);
        // For identical endpoints the gradient is radial: orthogonal
        // component against theta is zero.
        let radial = rec.grad.dot(&a) / a.dot(&a);
        for (g, t) in rec.grad.values().iter().zip(a.values()) {
            assert!((g - radial * t).abs() < 1e-6);
        }

        let (x, y) = pair(vec![1.0, 0.0], vec![0.0, 1.0]);
        let (value, _) = avg_cosine_distance_grad(0, &[x.clone(), y.clone()]).unwrap();
        assert!((value - cosine_distance(&x, &y).unwrap()).abs() < 1e-7);
    }

    #[test]
    fn avg_distance_requires_two_endpoints() {
        let (a, _) = pair(vec![1.0, 2.0], vec![0.0; 2]);
        assert!(avg_cosine_distance_grad(0, &[a]).is_err());
    }

    #[test]
    fn interpolation_examples() {
        let (a, b) = pair(vec![0.0, 0.0], vec![2.0, 2.0]);
        let mid = interpolate_params(&Coeffs::new(vec![0.5, 0.5]).unwrap(), &[a.clone(), b.clone()]).unwrap();
        assert_eq!(mid.values(), &[1.0, 1.0]);
        let first = interpolate_params(&Coeffs::new(vec![1.0, 0.0]).unwrap(), &[a.clone(), b]).unwrap();
        assert_eq!(first.values(), a.values());
    }

    #[test]
    fn interpolation_centre_of_three() {
        let spec = ModelSpec::dense(vec![], InputShape::Flat { features: 1 }, 2).unwrap();
        let make = |v: [f32; 2]| {
            let mut p = spec.init_params::<f32>(0).zeros_like();
            p.values_mut().copy_from_slice(&[v[0], v[1], 0.0, 0.0]);
            p
        };
        let endpoints = vec![make([0.0, 0.0]), make([2.0, 4.0]), make([4.0, 2.0])];
        let third = 1.0 / 3.0;
        let centre = interpolate_params(&Coeffs::new(vec![third; 3]).unwrap(), &endpoints).unwrap();
        assert!((centre.values()[0] - 2.0).abs() < 1e-6);
        assert!((centre.values()[1] - 2.0).abs() < 1e-6);
    }

    #[test]
    fn decomposition_trivial_cases() {
        let theta = ParamVector::matrix(2, 3, vec![0.3f32, -0.1, 0.7, 0.2, 0.9, -0.4]).unwrap();
        let x0 = Tensor::new(vec![2, 3], vec![0.1, 0.5, 0.9, 0.2, 0.4, 0.6]).unwrap();
        let x1 = Tensor::new(vec![2, 3], vec![0.9, 0.1, 0.3, 0.8, 0.2, 0.5]).unwrap();

        let single = linear_grad_decomposition_check(
            &theta,
            &[x0.clone()],
            &Coeffs::new(vec![1.0]).unwrap(),
        )
        .unwrap();
        assert_eq!(single, 0.0);

        let second_only = linear_grad_decomposition_check(
            &theta,
            &[x0.clone(), x1.clone()],
            &Coeffs::new(vec![0.0, 1.0]).unwrap(),
        )
        .unwrap();
        assert_eq!(second_only, 0.0);

        let mixed = linear_grad_decomposition_check(
            &theta,
            &[x0, x1],
            &Coeffs::new(vec![0.3, 0.7]).unwrap(),
        )
        .unwrap();
        assert!(mixed < 1e-6, "deviation {mixed}");
    }

    #[test]
    fn decomposition_rejects_nonlinear_layouts() {
        let spec = ModelSpec::dense(vec![4], InputShape::Flat { features: 3 }, 2).unwrap();
        let theta = spec.init_params::<f32>(1);
        let x = Tensor::new(vec![1, 3], vec![0.1, 0.2, 0.3]).unwrap();
        assert!(linear_grad_decomposition_check(&theta, &[x], &Coeffs::new(vec![1.0]).unwrap()).is_err());
    }
}
