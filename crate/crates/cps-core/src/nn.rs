//! Forward passes and reverse-mode gradients for the conv/dense models.
//!
//! The kernels are plain nested loops with a fixed left-to-right
//! accumulation order: given the same inputs the results are bitwise
//! reproducible, which the subspace equivalence checks rely on.

use crate::error::CoreError;
use crate::model::{ArchKind, InputShape, ModelSpec, LAYERS_PER_BLOCK};
use crate::params::{GradRecord, ParamVector};
use crate::task::TaskSet;
use crate::tensor::{Scalar, Tensor};
use crate::Result;

/// Classification targets: hard labels or a soft row-stochastic matrix.
pub enum Targets<'a, F: Scalar> {
    Hard(&'a [u16]),
    Soft(&'a Tensor<F>),
}

// ---------------------------------------------------------------------------
// Kernels
// ---------------------------------------------------------------------------

fn dense_fwd<F: Scalar>(x: &[F], bsz: usize, din: usize, dout: usize, w: &[F], bias: &[F]) -> Vec<F> {
    let mut out = vec![F::zero(); bsz * dout];
    for b in 0..bsz {
        let xr = &x[b * din..(b + 1) * din];
        for o in 0..dout {
            let mut acc = bias[o];
            let wr = &w[o * din..(o + 1) * din];
            for k in 0..din {
                acc += wr[k] * xr[k];
            }
            out[b * dout + o] = acc;
        }
    }
    out
}

fn dense_bwd<F: Scalar>(
    x: &[F],
    gout: &[F],
    w: &[F],
    bsz: usize,
    din: usize,
    dout: usize,
) -> (Vec<F>, Vec<F>, Vec<F>) {
    let mut gx = vec![F::zero(); bsz * din];
    let mut gw = vec![F::zero(); dout * din];
    let mut gb = vec![F::zero(); dout];
    for b in 0..bsz {
        let xr = &x[b * din..(b + 1) * din];
        for o in 0..dout {
            let g = gout[b * dout + o];
            gb[o] += g;
            let wr = &w[o * din..(o + 1) * din];
            let gwr = &mut gw[o * din..(o + 1) * din];
            let gxr = &mut gx[b * din..(b + 1) * din];
            for k in 0..din {
                gwr[k] += g * xr[k];
                gxr[k] += g * wr[k];
            }
        }
    }
    (gx, gw, gb)
}

fn conv3x3_fwd<F: Scalar>(
    x: &[F],
    bsz: usize,
    cin: usize,
    h: usize,
    w: usize,
    wgt: &[F],
    bias: &[F],
    cout: usize,
) -> Vec<F> {
    let mut out = vec![F::zero(); bsz * cout * h * w];
    for b in 0..bsz {
        for o in 0..cout {
            for y in 0..h {
                for xx in 0..w {
                    let mut acc = bias[o];
                    for c in 0..cin {
                        let xplane = &x[(b * cin + c) * h * w..(b * cin + c + 1) * h * w];
                        let wk = &wgt[((o * cin + c) * 3) * 3..((o * cin + c) * 3 + 3) * 3];
                        for dy in 0..3 {
                            let sy = y + dy;
                            if sy == 0 || sy > h {
                                continue;
                            }
                            let sy = sy - 1;
                            for dx in 0..3 {
                                let sx = xx + dx;
                                if sx == 0 || sx > w {
                                    continue;
                                }
                                acc += wk[dy * 3 + dx] * xplane[sy * w + (sx - 1)];
                            }
                        }
                    }
                    out[((b * cout + o) * h + y) * w + xx] = acc;
                }
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn conv3x3_bwd<F: Scalar>(
    x: &[F],
    gout: &[F],
    wgt: &[F],
    bsz: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
) -> (Vec<F>, Vec<F>, Vec<F>) {
    let mut gx = vec![F::zero(); bsz * cin * h * w];
    let mut gw = vec![F::zero(); cout * cin * 9];
    let mut gb = vec![F::zero(); cout];
    for b in 0..bsz {
        for o in 0..cout {
            for y in 0..h {
                for xx in 0..w {
                    let g = gout[((b * cout + o) * h + y) * w + xx];
                    gb[o] += g;
                    for c in 0..cin {
                        let base = (b * cin + c) * h * w;
                        for dy in 0..3 {
                            let sy = y + dy;
                            if sy == 0 || sy > h {
                                continue;
                            }
                            let sy = sy - 1;
                            for dx in 0..3 {
                                let sx = xx + dx;
                                if sx == 0 || sx > w {
                                    continue;
                                }
                                let sx = sx - 1;
                                let widx = ((o * cin + c) * 3 + dy) * 3 + dx;
                                gw[widx] += g * x[base + sy * w + sx];
                                gx[base + sy * w + sx] += g * wgt[widx];
                            }
                        }
                    }
                }
            }
        }
    }
    (gx, gw, gb)
}

fn relu_fwd<F: Scalar>(pre: &[F]) -> Vec<F> {
    pre.iter().map(|&v| if v > F::zero() { v } else { F::zero() }).collect()
}

fn relu_bwd<F: Scalar>(pre: &[F], gout: &[F]) -> Vec<F> {
    pre.iter()
        .zip(gout)
        .map(|(&p, &g)| if p > F::zero() { g } else { F::zero() })
        .collect()
}

/// 2x2 max pool with stride 2; trailing odd row/column is dropped. Returns
/// the pooled values and the flat input index of each window maximum (first
/// occurrence wins on ties).
fn maxpool2x2_fwd<F: Scalar>(
    x: &[F],
    planes: usize,
    h: usize,
    w: usize,
) -> (Vec<F>, Vec<usize>, usize, usize) {
    let h2 = h / 2;
    let w2 = w / 2;
    let mut out = vec![F::zero(); planes * h2 * w2];
    let mut arg = vec![0usize; planes * h2 * w2];
    for p in 0..planes {
        let base = p * h * w;
        for py in 0..h2 {
            for px in 0..w2 {
                let mut best_idx = base + (2 * py) * w + 2 * px;
                let mut best = x[best_idx];
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * py + dy) * w + 2 * px + dx;
                    if x[idx] > best {
                        best = x[idx];
                        best_idx = idx;
                    }
                }
                out[(p * h2 + py) * w2 + px] = best;
                arg[(p * h2 + py) * w2 + px] = best_idx;
            }
        }
    }
    (out, arg, h2, w2)
}

fn maxpool2x2_bwd<F: Scalar>(gout: &[F], arg: &[usize], input_len: usize) -> Vec<F> {
    let mut gx = vec![F::zero(); input_len];
    for (g, &idx) in gout.iter().zip(arg) {
        gx[idx] += *g;
    }
    gx
}

fn gap_fwd<F: Scalar>(x: &[F], bsz: usize, ch: usize, h: usize, w: usize) -> Vec<F> {
    let area = F::from_f64((h * w) as f64);
    let mut out = vec![F::zero(); bsz * ch];
    for b in 0..bsz {
        for c in 0..ch {
            let plane = &x[(b * ch + c) * h * w..(b * ch + c + 1) * h * w];
            let mut acc = F::zero();
            for &v in plane {
                acc += v;
            }
            out[b * ch + c] = acc / area;
        }
    }
    out
}

fn gap_bwd<F: Scalar>(gout: &[F], bsz: usize, ch: usize, h: usize, w: usize) -> Vec<F> {
    let area = F::from_f64((h * w) as f64);
    let mut gx = vec![F::zero(); bsz * ch * h * w];
    for b in 0..bsz {
        for c in 0..ch {
            let g = gout[b * ch + c] / area;
            for v in &mut gx[(b * ch + c) * h * w..(b * ch + c + 1) * h * w] {
                *v = g;
            }
        }
    }
    gx
}

// ---------------------------------------------------------------------------
// Forward trace
// ---------------------------------------------------------------------------

struct LayerCache<F: Scalar> {
    /// Activation entering the layer, flattened.
    input: Vec<F>,
    /// Pre-activation output of the affine op.
    pre: Vec<F>,
    /// (argmax indices, pre-pool length, pooled h, pooled w) when pooled.
    pool: Option<(Vec<usize>, usize, usize, usize)>,
    /// Spatial size entering the layer (conv only).
    in_hw: (usize, usize),
    in_ch: usize,
    out_ch: usize,
}

struct Trace<F: Scalar> {
    layers: Vec<LayerCache<F>>,
    /// Input to the classifier head, shape (batch, features).
    head_input: Vec<F>,
    head_in_dim: usize,
    /// Spatial size entering global average pooling (conv only).
    gap_hw: Option<(usize, usize)>,
    logits: Tensor<F>,
}

fn check_batch<F: Scalar>(model: &ModelSpec, params: &ParamVector<F>, batch: &Tensor<F>) -> Result<usize> {
    if params.fingerprint() != model.fingerprint() {
        return Err(CoreError::FingerprintMismatch {
            expected: model.fingerprint(),
            got: params.fingerprint(),
        });
    }
    let bsz = batch.outer_len();
    let expected = model.input.batched(bsz);
    let matches = match (&model.input, model.kind) {
        // Dense models accept any batch whose per-sample size flattens to
        // the declared feature count.
        (_, ArchKind::Dense) => batch.inner_len() == model.input.feature_count(),
        (InputShape::Image { .. }, ArchKind::Conv) => batch.shape() == expected.as_slice(),
        _ => false,
    };
    if !matches {
        return Err(CoreError::shape(
            "model input",
            format!("{expected:?}"),
            format!("{:?}", batch.shape()),
        ));
    }
    batch.err_if_not_finite("model input")?;
    Ok(bsz)
}

fn run_forward<F: Scalar>(
    model: &ModelSpec,
    params: &ParamVector<F>,
    batch: &Tensor<F>,
) -> Result<Trace<F>> {
    let bsz = check_batch(model, params, batch)?;
    let nl = model.widths.len();
    let mut layers = Vec::with_capacity(nl);

    let (head_input, head_in_dim, gap_hw) = match model.kind {
        ArchKind::Conv => {
            let (mut ch, mut h, mut w) = match &model.input {
                InputShape::Image { channels, height, width } => (*channels, *height, *width),
                InputShape::Flat { .. } => unreachable!("validated"),
            };
            let mut x = batch.data().to_vec();
            for (i, &width) in model.widths.iter().enumerate() {
                let wgt = params.block(2 * i);
                let bias = params.block(2 * i + 1);
                let pre = conv3x3_fwd(&x, bsz, ch, h, w, wgt, bias, width);
                if pre.iter().any(|v| !v.is_finite()) {
                    return Err(CoreError::non_finite(&format!("conv{i} activation")));
                }
                let post = relu_fwd(&pre);
                let pool_here = (i + 1) % LAYERS_PER_BLOCK == 0 && h >= 2 && w >= 2;
                let (next, pool, nh, nw) = if pool_here {
                    let (pooled, arg, h2, w2) = maxpool2x2_fwd(&post, bsz * width, h, w);
                    (pooled, Some((arg, post.len(), h2, w2)), h2, w2)
                } else {
                    (post, None, h, w)
                };
                layers.push(LayerCache {
                    input: x,
                    pre,
                    pool,
                    in_hw: (h, w),
                    in_ch: ch,
                    out_ch: width,
                });
                x = next;
                ch = width;
                h = nh;
                w = nw;
            }
            (gap_fwd(&x, bsz, ch, h, w), ch, Some((h, w)))
        }
        ArchKind::Dense => {
            let mut dim = model.input.feature_count();
            let mut x = batch.data().to_vec();
            for (i, &width) in model.widths.iter().enumerate() {
                let wgt = params.block(2 * i);
                let bias = params.block(2 * i + 1);
                let pre = dense_fwd(&x, bsz, dim, width, wgt, bias);
                if pre.iter().any(|v| !v.is_finite()) {
                    return Err(CoreError::non_finite(&format!("fc{i} activation")));
                }
                let post = relu_fwd(&pre);
                layers.push(LayerCache {
                    input: x,
                    pre,
                    pool: None,
                    in_hw: (1, 1),
                    in_ch: dim,
                    out_ch: width,
                });
                x = post;
                dim = width;
            }
            (x, dim, None)
        }
    };

    let head_w = params.block(2 * nl);
    let head_b = params.block(2 * nl + 1);
    let logits_data = dense_fwd(&head_input, bsz, head_in_dim, model.classes, head_w, head_b);
    if logits_data.iter().any(|v| !v.is_finite()) {
        return Err(CoreError::non_finite("logits"));
    }
    let logits = Tensor::new(vec![bsz, model.classes], logits_data)?;

    Ok(Trace { layers, head_input, head_in_dim, gap_hw, logits })
}

// ---------------------------------------------------------------------------
// Public operations
// ---------------------------------------------------------------------------

/// Runs the model and returns logits of shape (batch, classes).
pub fn forward<F: Scalar>(
    model: &ModelSpec,
    params: &ParamVector<F>,
    batch: &Tensor<F>,
) -> Result<Tensor<F>> {
    Ok(run_forward(model, params, batch)?.logits)
}

/// Mean negative log softmax probability of the true class.
pub fn cross_entropy<F: Scalar>(logits: &Tensor<F>, labels: &[u16]) -> Result<F> {
    let (loss, _) = softmax_ce(logits, &Targets::Hard(labels))?;
    Ok(loss)
}

/// Cross-entropy against soft row-stochastic targets.
pub fn soft_cross_entropy<F: Scalar>(logits: &Tensor<F>, targets: &Tensor<F>) -> Result<F> {
    let (loss, _) = softmax_ce(logits, &Targets::Soft(targets))?;
    Ok(loss)
}

/// Row-wise softmax probabilities.
pub fn softmax<F: Scalar>(logits: &Tensor<F>) -> Tensor<F> {
    let bsz = logits.outer_len();
    let classes = logits.inner_len();
    let mut out = Tensor::zeros(vec![bsz, classes]);
    for b in 0..bsz {
        let row = logits.row(b);
        let mut m = row[0];
        for &v in row {
            if v > m {
                m = v;
            }
        }
        let mut sum = F::zero();
        let orow = out.row_mut(b);
        for (o, &v) in orow.iter_mut().zip(row) {
            *o = (v - m).exp();
            sum += *o;
        }
        for o in orow.iter_mut() {
            *o = *o / sum;
        }
    }
    out
}

/// Row-wise argmax; ties resolve to the lowest class index.
pub fn predictions<F: Scalar>(logits: &Tensor<F>) -> Vec<u16> {
    (0..logits.outer_len())
        .map(|b| {
            let row = logits.row(b);
            let mut best = 0usize;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            best as u16
        })
        .collect()
}

fn softmax_ce<F: Scalar>(logits: &Tensor<F>, targets: &Targets<F>) -> Result<(F, Tensor<F>)> {
    let bsz = logits.outer_len();
    let classes = logits.inner_len();
    if bsz == 0 {
        return Err(CoreError::Empty("cross_entropy batch".into()));
    }
    match targets {
        Targets::Hard(labels) => {
            if labels.len() != bsz {
                return Err(CoreError::shape(
                    "cross_entropy labels",
                    format!("{bsz}"),
                    format!("{}", labels.len()),
                ));
            }
            for &l in labels.iter() {
                if l as usize >= classes {
                    return Err(CoreError::LabelOutOfRange { label: l as u32, classes });
                }
            }
        }
        Targets::Soft(t) => {
            if t.shape() != logits.shape() {
                return Err(CoreError::shape(
                    "cross_entropy soft targets",
                    format!("{:?}", logits.shape()),
                    format!("{:?}", t.shape()),
                ));
            }
        }
    }

    let probs = softmax(logits);
    let inv_b = F::one() / F::from_f64(bsz as f64);
    let mut loss = F::zero();
    let mut grad = Tensor::zeros(vec![bsz, classes]);
    for b in 0..bsz {
        let row = logits.row(b);
        let mut m = row[0];
        for &v in row {
            if v > m {
                m = v;
            }
        }
        let mut sumexp = F::zero();
        for &v in row {
            sumexp += (v - m).exp();
        }
        let lse = m + sumexp.ln();
        let grow = grad.row_mut(b);
        let prow = probs.row(b);
        match targets {
            Targets::Hard(labels) => {
                let y = labels[b] as usize;
                loss += lse - row[y];
                for (i, g) in grow.iter_mut().enumerate() {
                    let indicator = if i == y { F::one() } else { F::zero() };
                    *g = (prow[i] - indicator) * inv_b;
                }
            }
            Targets::Soft(t) => {
                let trow = t.row(b);
                let mut dot = F::zero();
                for (q, &z) in trow.iter().zip(row) {
                    dot += *q * z;
                }
                loss += lse - dot;
                for (i, g) in grow.iter_mut().enumerate() {
                    *g = (prow[i] - trow[i]) * inv_b;
                }
            }
        }
    }
    loss = loss * inv_b;
    if !loss.is_finite() {
        return Err(CoreError::non_finite("cross_entropy loss"));
    }
    Ok((loss, grad))
}

struct BackwardOut<F: Scalar> {
    grad_params: ParamVector<F>,
    grad_input: Tensor<F>,
}

fn run_backward<F: Scalar>(
    model: &ModelSpec,
    params: &ParamVector<F>,
    batch: &Tensor<F>,
    trace: &Trace<F>,
    dlogits: &Tensor<F>,
) -> BackwardOut<F> {
    let bsz = batch.outer_len();
    let nl = model.widths.len();
    let mut grad = params.zeros_like();

    // Head.
    let head_w = params.block(2 * nl);
    let (mut g, gw, gb) = dense_bwd(
        &trace.head_input,
        dlogits.data(),
        head_w,
        bsz,
        trace.head_in_dim,
        model.classes,
    );
    grad.block_mut(2 * nl).copy_from_slice(&gw);
    grad.block_mut(2 * nl + 1).copy_from_slice(&gb);

    match model.kind {
        ArchKind::Conv => {
            let (gh, gw_sp) = trace.gap_hw.expect("conv trace has gap dims");
            let last_ch = trace.head_in_dim;
            g = gap_bwd(&g, bsz, last_ch, gh, gw_sp);
            for (i, layer) in trace.layers.iter().enumerate().rev() {
                if let Some((arg, pre_pool_len, _, _)) = &layer.pool {
                    g = maxpool2x2_bwd(&g, arg, *pre_pool_len);
                }
                g = relu_bwd(&layer.pre, &g);
                let (h, w) = layer.in_hw;
                let wgt = params.block(2 * i);
                let (gx, gwv, gbv) =
                    conv3x3_bwd(&layer.input, &g, wgt, bsz, layer.in_ch, h, w, layer.out_ch);
                grad.block_mut(2 * i).copy_from_slice(&gwv);
                grad.block_mut(2 * i + 1).copy_from_slice(&gbv);
                g = gx;
            }
        }
        ArchKind::Dense => {
            for (i, layer) in trace.layers.iter().enumerate().rev() {
                g = relu_bwd(&layer.pre, &g);
                let wgt = params.block(2 * i);
                let (gx, gwv, gbv) =
                    dense_bwd(&layer.input, &g, wgt, bsz, layer.in_ch, layer.out_ch);
                grad.block_mut(2 * i).copy_from_slice(&gwv);
                grad.block_mut(2 * i + 1).copy_from_slice(&gbv);
                g = gx;
            }
        }
    }

    let grad_input = Tensor::new(batch.shape().to_vec(), g).expect("gradient shape matches input");
    BackwardOut { grad_params: grad, grad_input }
}

/// Reverse-mode gradient of the classification loss w.r.t. the parameters.
pub fn backward<F: Scalar>(
    model: &ModelSpec,
    params: &ParamVector<F>,
    batch: &Tensor<F>,
    targets: Targets<F>,
    batch_id: u64,
) -> Result<GradRecord<F>> {
    let (record, _) = backward_with_input_grad(model, params, batch, targets, batch_id)?;
    Ok(record)
}

/// As [`backward`], additionally returning the gradient w.r.t. the input
/// batch (used by the gradient-ascent attacks).
pub fn backward_with_input_grad<F: Scalar>(
    model: &ModelSpec,
    params: &ParamVector<F>,
    batch: &Tensor<F>,
    targets: Targets<F>,
    batch_id: u64,
) -> Result<(GradRecord<F>, Tensor<F>)> {
    let trace = run_forward(model, params, batch)?;
    let (loss, dlogits) = softmax_ce(&trace.logits, &targets)?;
    let out = run_backward(model, params, batch, &trace, &dlogits);
    Ok((
        GradRecord { grad: out.grad_params, loss, batch_id },
        out.grad_input,
    ))
}

/// Backward pass with a caller-supplied gradient on the logits. Returns the
/// parameter gradient and the input gradient. Used to chain larger graphs
/// (the hypernetwork) through a base model.
pub fn backward_from_output_grad<F: Scalar>(
    model: &ModelSpec,
    params: &ParamVector<F>,
    batch: &Tensor<F>,
    dlogits: &Tensor<F>,
) -> Result<(ParamVector<F>, Tensor<F>)> {
    let trace = run_forward(model, params, batch)?;
    if dlogits.shape() != trace.logits.shape() {
        return Err(CoreError::shape(
            "output gradient",
            format!("{:?}", trace.logits.shape()),
            format!("{:?}", dlogits.shape()),
        ));
    }
    let out = run_backward(model, params, batch, &trace, dlogits);
    Ok((out.grad_params, out.grad_input))
}

/// Loss/accuracy metrics over one task.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalMetrics {
    pub loss: f64,
    pub accuracy: f64,
    pub samples: usize,
}

const EVAL_CHUNK: usize = 256;

/// Mean cross-entropy and accuracy of `params` on a normalized task.
pub fn evaluate(model: &ModelSpec, params: &ParamVector<f32>, task: &TaskSet) -> Result<EvalMetrics> {
    if task.is_empty() {
        return Err(CoreError::Empty("evaluate task".into()));
    }
    let n = task.len();
    let mut loss_sum = 0.0f64;
    let mut correct = 0usize;
    let mut start = 0;
    while start < n {
        let end = (start + EVAL_CHUNK).min(n);
        let idx: Vec<usize> = (start..end).collect();
        let chunk = task.inputs.gather_rows(&idx);
        let labels = &task.fine[start..end];
        let logits = forward(model, params, &chunk)?;
        let loss = cross_entropy(&logits, labels)?;
        loss_sum += loss as f64 * (end - start) as f64;
        for (p, &y) in predictions(&logits).iter().zip(labels) {
            if *p == y {
                correct += 1;
            }
        }
        start = end;
    }
    Ok(EvalMetrics {
        loss: loss_sum / n as f64,
        accuracy: correct as f64 / n as f64,
        samples: n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::InputShape;

    fn flat(n: usize) -> InputShape {
        InputShape::Flat { features: n }
    }

    #[test]
    fn zero_weight_dense_gives_zero_logits() {
        let spec = ModelSpec::dense(vec![4], flat(3), 5).unwrap();
        let params = spec.init_params::<f32>(1).zeros_like();
        let batch = Tensor::new(vec![2, 3], vec![1.0, -2.0, 3.0, 0.5, 0.5, 0.5]).unwrap();
        let logits = forward(&spec, &params, &batch).unwrap();
        assert!(logits.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_linear_model_passes_input_through() {
        let spec = ModelSpec::dense(vec![], flat(3), 3).unwrap();
        let mut params = spec.init_params::<f32>(1).zeros_like();
        // head.weight is the first layout entry for the pure linear model.
        let wm = params.block_mut(0);
        for i in 0..3 {
            wm[i * 3 + i] = 1.0;
        }
        let batch = Tensor::new(vec![2, 3], vec![0.1, 0.2, 0.3, -1.0, 0.0, 2.0]).unwrap();
        let logits = forward(&spec, &params, &batch).unwrap();
        assert_eq!(logits.data(), batch.data());
    }

    #[test]
    fn uniform_logits_loss_is_ln_c() {
        for classes in [2usize, 5, 10] {
            let logits = Tensor::new(vec![3, classes], vec![0.7; 3 * classes]).unwrap();
            let labels = vec![0u16; 3];
            let loss = cross_entropy(&logits, &labels).unwrap();
            assert!((loss - (classes as f32).ln()).abs() < 1e-6, "classes {classes}");
        }
    }

    #[test]
    fn loss_vanishes_with_margin() {
        let mut last = f32::INFINITY;
        for margin in [2.0f32, 8.0, 20.0] {
            let logits = Tensor::new(vec![1, 2], vec![margin, 0.0]).unwrap();
            let loss = cross_entropy(&logits, &[0]).unwrap();
            assert!(loss < last);
            last = loss;
        }
        assert!(last < 1e-8);
    }

    #[test]
    fn two_class_closed_form() {
        let logits = Tensor::new(vec![1, 2], vec![2.0, 0.0]).unwrap();
        let loss = cross_entropy(&logits, &[0]).unwrap();
        let expected = (1.0 + (-2.0f32).exp()).ln();
        assert!((loss - expected).abs() < 1e-6);
        assert!((loss - 0.126928).abs() < 1e-5);
    }

    #[test]
    fn label_out_of_range_rejected() {
        let logits = Tensor::new(vec![1, 2], vec![0.0, 0.0]).unwrap();
        assert!(matches!(
            cross_entropy(&logits, &[2]),
            Err(CoreError::LabelOutOfRange { .. })
        ));
    }

    #[test]
    fn zero_input_grads() {
        // Zero input through a dense layer: weight grads vanish, bias grads do not.
        let spec = ModelSpec::dense(vec![], flat(3), 2).unwrap();
        let params = spec.init_params::<f32>(3);
        let batch = Tensor::new(vec![2, 3], vec![0.0; 6]).unwrap();
        let rec = backward(&spec, &params, &batch, Targets::Hard(&[0, 1]), 0).unwrap();
        let gw = rec.grad.block(0);
        let gb = rec.grad.block(1);
        assert!(gw.iter().all(|&v| v == 0.0));
        assert!(gb.iter().any(|&v| v != 0.0));
    }

    #[test]
    fn duplicated_rows_leave_gradient_unchanged() {
        let spec = ModelSpec::dense(vec![4], flat(3), 2).unwrap();
        let params = spec.init_params::<f32>(7);
        let row = vec![0.3f32, -0.8, 0.5];
        let single = Tensor::new(vec![1, 3], row.clone()).unwrap();
        let double = Tensor::new(vec![2, 3], [row.clone(), row].concat()).unwrap();
        let g1 = backward(&spec, &params, &single, Targets::Hard(&[1]), 0).unwrap();
        let g2 = backward(&spec, &params, &double, Targets::Hard(&[1, 1]), 0).unwrap();
        assert_eq!(g1.grad.values(), g2.grad.values());
        assert_eq!(g1.loss, g2.loss);
    }

    #[test]
    fn forward_is_bitwise_deterministic() {
        let spec = ModelSpec::preset("3-layer", InputShape::Image { channels: 3, height: 8, width: 8 }, 4)
            .unwrap();
        let params = spec.init_params::<f32>(11);
        let mut data = Vec::new();
        for i in 0..(2 * 3 * 8 * 8) {
            data.push(((i * 37) % 101) as f32 / 101.0);
        }
        let batch = Tensor::new(vec![2, 3, 8, 8], data).unwrap();
        let a = forward(&spec, &params, &batch).unwrap();
        let b = forward(&spec, &params, &batch).unwrap();
        assert_eq!(a.data(), b.data());
        let ga = backward(&spec, &params, &batch, Targets::Hard(&[0, 2]), 0).unwrap();
        let gb = backward(&spec, &params, &batch, Targets::Hard(&[0, 2]), 0).unwrap();
        assert_eq!(ga.grad.values(), gb.grad.values());
    }

    #[test]
    fn soft_targets_match_hard_for_one_hot() {
        let logits = Tensor::new(vec![2, 3], vec![0.5, -0.2, 1.0, 2.0, 0.0, -1.0]).unwrap();
        let hard = cross_entropy(&logits, &[2, 0]).unwrap();
        let soft = Tensor::new(vec![2, 3], vec![0.0, 0.0, 1.0, 1.0, 0.0, 0.0]).unwrap();
        let soft_loss = soft_cross_entropy(&logits, &soft).unwrap();
        assert_eq!(hard, soft_loss);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let spec = ModelSpec::preset("3-layer", InputShape::Image { channels: 3, height: 8, width: 8 }, 4)
            .unwrap();
        let params = spec.init_params::<f32>(1);
        let batch = Tensor::new(vec![1, 3, 4, 4], vec![0.0; 48]).unwrap();
        assert!(matches!(
            forward(&spec, &params, &batch),
            Err(CoreError::ShapeMismatch { .. })
        ));
    }
}
