//! Forward kernels and vector-Jacobian products for the tape primitives.

use crate::autodiff::{accumulate, tensor_to_mat3, AutodiffError, Node, Op, Tensor, Var};
use crate::geometry::{Mat3, Vec3};
use crate::scalar::{cast, Scalar};

/// Batched matrix product over the last two dims with optional logical
/// transposes. Leading dims must match exactly (no broadcasting).
pub(crate) fn matmul<S: Scalar>(
    a: &Tensor<S>,
    b: &Tensor<S>,
    ta: bool,
    tb: bool,
) -> Result<Tensor<S>, AutodiffError> {
    if a.rank() < 2 || b.rank() < 2 || a.rank() != b.rank() {
        return Err(AutodiffError::ShapeMismatch(format!(
            "matmul ranks {:?} x {:?}",
            a.shape, b.shape
        )));
    }
    let r = a.rank();
    if a.shape[..r - 2] != b.shape[..r - 2] {
        return Err(AutodiffError::ShapeMismatch(format!(
            "matmul batch dims {:?} vs {:?}",
            a.shape, b.shape
        )));
    }
    let (a_rows, a_cols) = (a.shape[r - 2], a.shape[r - 1]);
    let (b_rows, b_cols) = (b.shape[r - 2], b.shape[r - 1]);
    let (n, ka) = if ta { (a_cols, a_rows) } else { (a_rows, a_cols) };
    let (kb, m) = if tb { (b_cols, b_rows) } else { (b_rows, b_cols) };
    if ka != kb {
        return Err(AutodiffError::ShapeMismatch(format!(
            "matmul inner dims {ka} vs {kb} (shapes {:?} x {:?})",
            a.shape, b.shape
        )));
    }
    let batch: usize = a.shape[..r - 2].iter().product();
    let mut shape = a.shape[..r - 2].to_vec();
    shape.push(n);
    shape.push(m);
    let mut out = vec![S::zero(); batch * n * m];
    let a_stride = a_rows * a_cols;
    let b_stride = b_rows * b_cols;
    for bi in 0..batch {
        let abase = bi * a_stride;
        let bbase = bi * b_stride;
        let obase = bi * n * m;
        if !ta && !tb {
            // Hot path: i-k-j with contiguous row slices.
            for i in 0..n {
                let arow = &a.data[abase + i * ka..abase + (i + 1) * ka];
                let orow = &mut out[obase + i * m..obase + (i + 1) * m];
                for (k, &av) in arow.iter().enumerate() {
                    if av == S::zero() {
                        continue;
                    }
                    let brow = &b.data[bbase + k * m..bbase + (k + 1) * m];
                    for (o, &bv) in orow.iter_mut().zip(brow.iter()) {
                        *o += av * bv;
                    }
                }
            }
        } else {
            let a_at = |i: usize, k: usize| {
                if ta {
                    a.data[abase + k * a_cols + i]
                } else {
                    a.data[abase + i * a_cols + k]
                }
            };
            let b_at = |k: usize, j: usize| {
                if tb {
                    b.data[bbase + j * b_cols + k]
                } else {
                    b.data[bbase + k * b_cols + j]
                }
            };
            for i in 0..n {
                for j in 0..m {
                    let mut acc = S::zero();
                    for k in 0..ka {
                        acc += a_at(i, k) * b_at(k, j);
                    }
                    out[obase + i * m + j] = acc;
                }
            }
        }
    }
    Tensor::new(shape, out)
}

pub(crate) fn concat_last<S: Scalar>(
    a: &Tensor<S>,
    b: &Tensor<S>,
) -> Result<Tensor<S>, AutodiffError> {
    if a.rank() != b.rank()
        || a.rank() == 0
        || a.shape[..a.rank() - 1] != b.shape[..b.rank() - 1]
    {
        return Err(AutodiffError::ShapeMismatch(format!(
            "concat_lastdim {:?} vs {:?}",
            a.shape, b.shape
        )));
    }
    let la = a.last_dim();
    let lb = b.last_dim();
    let outer = a.outer_count();
    let mut shape = a.shape.clone();
    *shape.last_mut().unwrap() = la + lb;
    let mut data = Vec::with_capacity(outer * (la + lb));
    for i in 0..outer {
        data.extend_from_slice(&a.data[i * la..(i + 1) * la]);
        data.extend_from_slice(&b.data[i * lb..(i + 1) * lb]);
    }
    Tensor::new(shape, data)
}

pub(crate) fn gather_rows<S: Scalar>(
    a: &Tensor<S>,
    indices: &[usize],
) -> Result<Tensor<S>, AutodiffError> {
    let (rows, cols) = a.dims2()?;
    if let Some(&bad) = indices.iter().find(|&&i| i >= rows) {
        return Err(AutodiffError::ShapeMismatch(format!(
            "gather_rows index {bad} out of range for {rows} rows"
        )));
    }
    let mut data = Vec::with_capacity(indices.len() * cols);
    for &i in indices {
        data.extend_from_slice(&a.data[i * cols..(i + 1) * cols]);
    }
    Tensor::new(vec![indices.len(), cols], data)
}

pub(crate) fn transpose_last2<S: Scalar>(a: &Tensor<S>) -> Result<Tensor<S>, AutodiffError> {
    if a.rank() < 2 {
        return Err(AutodiffError::ShapeMismatch(format!(
            "transpose_last2 needs rank >= 2, got {:?}",
            a.shape
        )));
    }
    let r = a.rank();
    let (n, m) = (a.shape[r - 2], a.shape[r - 1]);
    let batch: usize = a.shape[..r - 2].iter().product();
    let mut shape = a.shape.clone();
    shape[r - 2] = m;
    shape[r - 1] = n;
    let mut data = vec![S::zero(); a.numel()];
    for bi in 0..batch {
        let base = bi * n * m;
        for i in 0..n {
            for j in 0..m {
                data[base + j * n + i] = a.data[base + i * m + j];
            }
        }
    }
    Tensor::new(shape, data)
}

pub(crate) fn softmax_last<S: Scalar>(a: &Tensor<S>) -> Tensor<S> {
    let last = a.last_dim().max(1);
    let mut data = vec![S::zero(); a.numel()];
    for (slice_out, slice_in) in data.chunks_mut(last).zip(a.data.chunks(last)) {
        let max = slice_in
            .iter()
            .copied()
            .fold(S::neg_infinity(), |m, v| if v > m { v } else { m });
        let mut sum = S::zero();
        for (o, &v) in slice_out.iter_mut().zip(slice_in.iter()) {
            let e = (v - max).exp();
            *o = e;
            sum += e;
        }
        let inv = S::one() / sum;
        for o in slice_out.iter_mut() {
            *o *= inv;
        }
    }
    Tensor {
        shape: a.shape.clone(),
        data,
    }
}

pub(crate) fn reduce_max_last<S: Scalar>(
    a: &Tensor<S>,
) -> Result<(Tensor<S>, Vec<usize>), AutodiffError> {
    if a.rank() == 0 || a.last_dim() == 0 {
        return Err(AutodiffError::ShapeMismatch(
            "reduce_max_lastdim needs a nonempty last dim".into(),
        ));
    }
    let last = a.last_dim();
    let outer = a.outer_count();
    let mut data = Vec::with_capacity(outer);
    let mut argmax = Vec::with_capacity(outer);
    for slice in a.data.chunks(last) {
        let mut best = 0usize;
        let mut best_v = slice[0];
        for (i, &v) in slice.iter().enumerate().skip(1) {
            if v > best_v {
                best_v = v;
                best = i;
            }
        }
        data.push(best_v);
        argmax.push(best);
    }
    let shape = a.shape[..a.rank() - 1].to_vec();
    Ok((Tensor::new(shape, data)?, argmax))
}

pub(crate) fn layer_norm_last<S: Scalar>(
    a: &Tensor<S>,
    eps: S,
) -> Result<(Tensor<S>, Vec<S>), AutodiffError> {
    let last = a.last_dim();
    if last == 0 {
        return Err(AutodiffError::ShapeMismatch(
            "layer_norm_lastdim needs a nonempty last dim".into(),
        ));
    }
    let outer = a.outer_count();
    let inv_n = S::one() / S::from_usize(last).unwrap();
    let mut data = vec![S::zero(); a.numel()];
    let mut inv_stds = Vec::with_capacity(outer);
    for (slice_out, slice_in) in data.chunks_mut(last).zip(a.data.chunks(last)) {
        let mean = slice_in.iter().copied().sum::<S>() * inv_n;
        let var = slice_in
            .iter()
            .map(|&v| (v - mean) * (v - mean))
            .sum::<S>()
            * inv_n;
        let inv_std = S::one() / (var + eps).sqrt();
        for (o, &v) in slice_out.iter_mut().zip(slice_in.iter()) {
            *o = (v - mean) * inv_std;
        }
        inv_stds.push(inv_std);
    }
    Ok((
        Tensor {
            shape: a.shape.clone(),
            data,
        },
        inv_stds,
    ))
}

pub(crate) fn broadcast_add_row<S: Scalar>(
    a: &Tensor<S>,
    row: &Tensor<S>,
) -> Result<Tensor<S>, AutodiffError> {
    if a.rank() < 2 || row.rank() != 1 || row.shape[0] != a.last_dim() {
        return Err(AutodiffError::ShapeMismatch(format!(
            "broadcast_add_row {:?} + {:?}",
            a.shape, row.shape
        )));
    }
    let last = a.last_dim();
    let mut data = a.data.clone();
    for slice in data.chunks_mut(last) {
        for (o, &r) in slice.iter_mut().zip(row.data.iter()) {
            *o += r;
        }
    }
    Ok(Tensor {
        shape: a.shape.clone(),
        data,
    })
}

/// Dispatches the vector-Jacobian product of node `idx`, accumulating into
/// the parents' gradient slots.
pub(crate) fn backprop<S: Scalar>(
    nodes: &[Node<S>],
    idx: usize,
    grad: &Tensor<S>,
    grads: &mut [Option<Tensor<S>>],
) {
    let needs = |v: Var| nodes[v.0].requires_grad;
    match &nodes[idx].op {
        Op::Leaf { .. } => {}
        Op::Matmul(a, b) => {
            let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
            if needs(*a) {
                let da = matmul(grad, bv, false, true).expect("matmul vjp shape");
                accumulate(&mut grads[a.0], da);
            }
            if needs(*b) {
                let db = matmul(av, grad, true, false).expect("matmul vjp shape");
                accumulate(&mut grads[b.0], db);
            }
        }
        Op::Add(a, b) => {
            if needs(*a) {
                accumulate(&mut grads[a.0], grad.clone());
            }
            if needs(*b) {
                accumulate(&mut grads[b.0], grad.clone());
            }
        }
        Op::Sub(a, b) => {
            if needs(*a) {
                accumulate(&mut grads[a.0], grad.clone());
            }
            if needs(*b) {
                let neg = Tensor {
                    shape: grad.shape.clone(),
                    data: grad.data.iter().map(|&g| -g).collect(),
                };
                accumulate(&mut grads[b.0], neg);
            }
        }
        Op::Mul(a, b) => {
            let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
            if needs(*a) {
                let da = Tensor {
                    shape: grad.shape.clone(),
                    data: grad
                        .data
                        .iter()
                        .zip(bv.data.iter())
                        .map(|(&g, &v)| g * v)
                        .collect(),
                };
                accumulate(&mut grads[a.0], da);
            }
            if needs(*b) {
                let db = Tensor {
                    shape: grad.shape.clone(),
                    data: grad
                        .data
                        .iter()
                        .zip(av.data.iter())
                        .map(|(&g, &v)| g * v)
                        .collect(),
                };
                accumulate(&mut grads[b.0], db);
            }
        }
        Op::Scale(a, c) => {
            if needs(*a) {
                let da = Tensor {
                    shape: grad.shape.clone(),
                    data: grad.data.iter().map(|&g| g * *c).collect(),
                };
                accumulate(&mut grads[a.0], da);
            }
        }
        Op::ConcatLast(a, b) => {
            let la = nodes[a.0].value.last_dim();
            let lb = nodes[b.0].value.last_dim();
            let outer = nodes[a.0].value.outer_count();
            if needs(*a) {
                let mut da = Tensor::zeros(&nodes[a.0].value.shape);
                for i in 0..outer {
                    da.data[i * la..(i + 1) * la]
                        .copy_from_slice(&grad.data[i * (la + lb)..i * (la + lb) + la]);
                }
                accumulate(&mut grads[a.0], da);
            }
            if needs(*b) {
                let mut db = Tensor::zeros(&nodes[b.0].value.shape);
                for i in 0..outer {
                    db.data[i * lb..(i + 1) * lb]
                        .copy_from_slice(&grad.data[i * (la + lb) + la..(i + 1) * (la + lb)]);
                }
                accumulate(&mut grads[b.0], db);
            }
        }
        Op::GatherRows(a, indices) => {
            if needs(*a) {
                let cols = nodes[a.0].value.shape[1];
                let mut da = Tensor::zeros(&nodes[a.0].value.shape);
                for (r, &i) in indices.iter().enumerate() {
                    for c in 0..cols {
                        da.data[i * cols + c] += grad.data[r * cols + c];
                    }
                }
                accumulate(&mut grads[a.0], da);
            }
        }
        Op::TransposeLast2(a) => {
            if needs(*a) {
                let da = transpose_last2(grad).expect("transpose vjp");
                accumulate(&mut grads[a.0], da);
            }
        }
        Op::Relu(a) => {
            if needs(*a) {
                let av = &nodes[a.0].value;
                let da = Tensor {
                    shape: grad.shape.clone(),
                    data: grad
                        .data
                        .iter()
                        .zip(av.data.iter())
                        .map(|(&g, &x)| if x > S::zero() { g } else { S::zero() })
                        .collect(),
                };
                accumulate(&mut grads[a.0], da);
            }
        }
        Op::LeakyRelu(a, slope) => {
            if needs(*a) {
                let av = &nodes[a.0].value;
                let da = Tensor {
                    shape: grad.shape.clone(),
                    data: grad
                        .data
                        .iter()
                        .zip(av.data.iter())
                        .map(|(&g, &x)| if x > S::zero() { g } else { g * *slope })
                        .collect(),
                };
                accumulate(&mut grads[a.0], da);
            }
        }
        Op::SoftmaxLast(a) => {
            if needs(*a) {
                // dx = p * (g - sum(g * p)) per slice.
                let p = &nodes[idx].value;
                let last = p.last_dim();
                let mut da = Tensor::zeros(&p.shape);
                for ((dslice, gslice), pslice) in da
                    .data
                    .chunks_mut(last)
                    .zip(grad.data.chunks(last))
                    .zip(p.data.chunks(last))
                {
                    let dot: S = gslice
                        .iter()
                        .zip(pslice.iter())
                        .map(|(&g, &pv)| g * pv)
                        .sum();
                    for ((d, &g), &pv) in dslice.iter_mut().zip(gslice.iter()).zip(pslice.iter()) {
                        *d = pv * (g - dot);
                    }
                }
                accumulate(&mut grads[a.0], da);
            }
        }
        Op::Log(a) => {
            if needs(*a) {
                let av = &nodes[a.0].value;
                let da = Tensor {
                    shape: grad.shape.clone(),
                    data: grad
                        .data
                        .iter()
                        .zip(av.data.iter())
                        .map(|(&g, &x)| g / x)
                        .collect(),
                };
                accumulate(&mut grads[a.0], da);
            }
        }
        Op::Exp(a) => {
            if needs(*a) {
                let yv = &nodes[idx].value;
                let da = Tensor {
                    shape: grad.shape.clone(),
                    data: grad
                        .data
                        .iter()
                        .zip(yv.data.iter())
                        .map(|(&g, &y)| g * y)
                        .collect(),
                };
                accumulate(&mut grads[a.0], da);
            }
        }
        Op::Sqrt(a) => {
            if needs(*a) {
                let yv = &nodes[idx].value;
                let half = cast::<S>(0.5);
                let da = Tensor {
                    shape: grad.shape.clone(),
                    data: grad
                        .data
                        .iter()
                        .zip(yv.data.iter())
                        .map(|(&g, &y)| {
                            if y == S::zero() {
                                S::zero() // subgradient at 0 pinned to 0
                            } else {
                                g * half / y
                            }
                        })
                        .collect(),
                };
                accumulate(&mut grads[a.0], da);
            }
        }
        Op::ReduceSum(a) => {
            if needs(*a) {
                let g = grad.data[0];
                accumulate(
                    &mut grads[a.0],
                    Tensor::full(&nodes[a.0].value.shape, g),
                );
            }
        }
        Op::ReduceMean(a) => {
            if needs(*a) {
                let n = S::from_usize(nodes[a.0].value.numel().max(1)).unwrap();
                let g = grad.data[0] / n;
                accumulate(
                    &mut grads[a.0],
                    Tensor::full(&nodes[a.0].value.shape, g),
                );
            }
        }
        Op::ReduceMaxLast(a, argmax) => {
            if needs(*a) {
                let last = nodes[a.0].value.last_dim();
                let mut da = Tensor::zeros(&nodes[a.0].value.shape);
                for (slice_idx, &am) in argmax.iter().enumerate() {
                    da.data[slice_idx * last + am] = grad.data[slice_idx];
                }
                accumulate(&mut grads[a.0], da);
            }
        }
        Op::LayerNormLast { input, inv_std } => {
            if needs(*input) {
                // dx = inv_std * (g - mean(g) - y * mean(g .* y)) per slice.
                let y = &nodes[idx].value;
                let last = y.last_dim();
                let inv_n = S::one() / S::from_usize(last).unwrap();
                let mut da = Tensor::zeros(&y.shape);
                for (slice_idx, ((dslice, gslice), yslice)) in da
                    .data
                    .chunks_mut(last)
                    .zip(grad.data.chunks(last))
                    .zip(y.data.chunks(last))
                    .enumerate()
                {
                    let g_mean = gslice.iter().copied().sum::<S>() * inv_n;
                    let gy_mean = gslice
                        .iter()
                        .zip(yslice.iter())
                        .map(|(&g, &yv)| g * yv)
                        .sum::<S>()
                        * inv_n;
                    let is = inv_std[slice_idx];
                    for ((d, &g), &yv) in dslice.iter_mut().zip(gslice.iter()).zip(yslice.iter()) {
                        *d = is * (g - g_mean - yv * gy_mean);
                    }
                }
                accumulate(&mut grads[input.0], da);
            }
        }
        Op::BroadcastAddRow(a, row) => {
            if needs(*a) {
                accumulate(&mut grads[a.0], grad.clone());
            }
            if needs(*row) {
                let last = nodes[a.0].value.last_dim();
                let mut drow = Tensor::zeros(&nodes[row.0].value.shape);
                for slice in grad.data.chunks(last) {
                    for (d, &g) in drow.data.iter_mut().zip(slice.iter()) {
                        *d += g;
                    }
                }
                accumulate(&mut grads[row.0], drow);
            }
        }
        Op::Reshape(a) => {
            if needs(*a) {
                let da = Tensor {
                    shape: nodes[a.0].value.shape.clone(),
                    data: grad.data.clone(),
                };
                accumulate(&mut grads[a.0], da);
            }
        }
        Op::RotationFromCov(h) => {
            if needs(*h) {
                let q = tensor_to_mat3(&nodes[idx].value);
                let hm = tensor_to_mat3(&nodes[h.0].value);
                let gbar = tensor_to_mat3(grad);
                let dh = rotation_from_cov_vjp(&q, &hm, &gbar);
                accumulate(
                    &mut grads[h.0],
                    Tensor {
                        shape: vec![3, 3],
                        data: dh.m.iter().flatten().copied().collect(),
                    },
                );
            }
        }
    }
}

fn vee_antisym<S: Scalar>(g: &Mat3<S>) -> Vec3<S> {
    Vec3::new(
        g.m[2][1] - g.m[1][2],
        g.m[0][2] - g.m[2][0],
        g.m[1][0] - g.m[0][1],
    )
}

fn cross_matrix<S: Scalar>(v: Vec3<S>) -> Mat3<S> {
    let z = S::zero();
    Mat3::from_rows([z, -v.z, v.y], [v.z, z, -v.x], [-v.y, v.x, z])
}

/// Gradient of the reflection-corrected rotation with respect to the
/// cross-covariance, via polar-decomposition sensitivity.
///
/// With `A = H^T = Q P` (Q the corrected rotation, P symmetric), a
/// perturbation satisfies `(tr(P) I - P) w = vee(B - B^T)`, `B = Q^T dA`,
/// and `dQ = Q [w]x`. Solving the 3x3 system in reverse gives
/// `dL/dH = ([h]x Q^T)^T` with `h = (tr(P) I - P)^{-1} vee(Q^T G - G^T Q)`.
/// The system is singular only for rank < 2 covariances; a tiny ridge keeps
/// training finite there.
pub(crate) fn rotation_from_cov_vjp<S: Scalar>(
    q: &Mat3<S>,
    h: &Mat3<S>,
    upstream: &Mat3<S>,
) -> Mat3<S> {
    let p = q.transpose() * h.transpose();
    let m = Mat3::diag(p.trace(), p.trace(), p.trace()) - p;
    let g = vee_antisym(&(q.transpose() * *upstream));
    let ridge = cast::<S>(1e-12) * p.trace().abs().max(S::one());
    let m_reg = m + Mat3::diag(ridge, ridge, ridge);
    let hv = m_reg.solve(g).unwrap_or(Vec3::zero());
    (*q * cross_matrix(hv)).transpose()
}
