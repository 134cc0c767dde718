//! Minimal reverse-mode gradient tape over dense tensors.
//!
//! A [`Tape`] records every primitive applied to tape handles ([`Var`]) in
//! order; [`Tape::backward`] replays the records in reverse, accumulating
//! vector-Jacobian products into named leaf gradients. Gradient summation
//! order is fixed by recording index, so results are bit-reproducible.
//!
//! Forward values are identical whether or not gradients are required;
//! `requires_grad` only gates backward work.

mod check;
mod ops;
mod tensor;

pub use check::{gradient_check, numeric_gradient};
pub use tensor::Tensor;

use std::cell::RefCell;
use std::collections::BTreeMap;

use thiserror::Error;

use crate::geometry::Mat3;
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum AutodiffError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite input to {op}")]
    NonFiniteInput { op: &'static str },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("loss is not connected to this tape (stale or foreign handle)")]
    DisconnectedLoss,
    #[error("invalid tape handle (tape already consumed by backward?)")]
    InvalidHandle,
}

/// Handle to a node recorded on a tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

/// One recorded primitive: forward value plus what backward needs.
pub(crate) struct Node<S> {
    pub value: Tensor<S>,
    pub op: Op<S>,
    pub requires_grad: bool,
}

/// Recorded primitive kinds. Saved fields are exactly what each
/// vector-Jacobian product needs.
pub(crate) enum Op<S> {
    Leaf { name: Option<String> },
    Matmul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, S),
    ConcatLast(Var, Var),
    GatherRows(Var, Vec<usize>),
    TransposeLast2(Var),
    Relu(Var),
    LeakyRelu(Var, S),
    SoftmaxLast(Var),
    Log(Var),
    Exp(Var),
    Sqrt(Var),
    ReduceSum(Var),
    ReduceMean(Var),
    ReduceMaxLast(Var, Vec<usize>),
    LayerNormLast { input: Var, inv_std: Vec<S> },
    BroadcastAddRow(Var, Var),
    Reshape(Var),
    RotationFromCov(Var),
}

impl<S> Op<S> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf { .. } => "leaf",
            Op::Matmul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::ConcatLast(..) => "concat_lastdim",
            Op::GatherRows(..) => "gather_rows",
            Op::TransposeLast2(..) => "transpose_last2",
            Op::Relu(..) => "relu",
            Op::LeakyRelu(..) => "leaky_relu",
            Op::SoftmaxLast(..) => "softmax_lastdim",
            Op::Log(..) => "log",
            Op::Exp(..) => "exp",
            Op::Sqrt(..) => "sqrt",
            Op::ReduceSum(..) => "reduce_sum",
            Op::ReduceMean(..) => "reduce_mean",
            Op::ReduceMaxLast(..) => "reduce_max_lastdim",
            Op::LayerNormLast { .. } => "layer_norm_lastdim",
            Op::BroadcastAddRow(..) => "broadcast_add_row",
            Op::Reshape(..) => "reshape",
            Op::RotationFromCov(..) => "rotation_from_cov",
        }
    }
}

/// Named leaf gradients produced by [`Tape::backward`]. Leaves the loss
/// never touched are absent (treat as zero).
pub type Gradients<S> = BTreeMap<String, Tensor<S>>;

/// The recording tape. Confine a tape and its vars to one thread; distinct
/// tapes may run on distinct threads.
pub struct Tape<S: Scalar> {
    nodes: RefCell<Vec<Node<S>>>,
    leaf_registry: RefCell<BTreeMap<String, Var>>,
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            leaf_registry: RefCell::new(BTreeMap::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.borrow().is_empty()
    }

    fn push(&self, value: Tensor<S>, op: Op<S>, requires_grad: bool) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(nodes.len() - 1)
    }

    fn check(&self, v: Var) -> Result<(), AutodiffError> {
        if v.0 >= self.nodes.borrow().len() {
            return Err(AutodiffError::InvalidHandle);
        }
        Ok(())
    }

    fn requires(&self, v: Var) -> bool {
        self.nodes.borrow()[v.0].requires_grad
    }

    fn ensure_finite(&self, vars: &[Var], op: &'static str) -> Result<(), AutodiffError> {
        let nodes = self.nodes.borrow();
        for v in vars {
            if !nodes[v.0].value.is_all_finite() {
                return Err(AutodiffError::NonFiniteInput { op });
            }
        }
        Ok(())
    }

    /// Enters a constant (no gradient).
    pub fn constant(&self, value: Tensor<S>) -> Var {
        self.push(value, Op::Leaf { name: None }, false)
    }

    /// Enters (or retrieves) a named differentiable leaf. Calling twice with
    /// the same name returns the same handle, so shared parameters
    /// accumulate gradients from every use.
    pub fn leaf(&self, name: &str, value: &Tensor<S>) -> Var {
        if let Some(&v) = self.leaf_registry.borrow().get(name) {
            return v;
        }
        let v = self.push(
            value.clone(),
            Op::Leaf {
                name: Some(name.to_string()),
            },
            true,
        );
        self.leaf_registry.borrow_mut().insert(name.to_string(), v);
        v
    }

    /// Copy of the forward value behind a handle.
    pub fn value(&self, v: Var) -> Tensor<S> {
        self.nodes.borrow()[v.0].value.clone()
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].value.shape.clone()
    }

    /// Scalar extraction for numel-1 tensors.
    pub fn scalar_value(&self, v: Var) -> S {
        let nodes = self.nodes.borrow();
        debug_assert_eq!(nodes[v.0].value.numel(), 1);
        nodes[v.0].value.data[0]
    }

    fn unary<F>(
        &self,
        a: Var,
        op_name: &'static str,
        make_op: impl FnOnce() -> Op<S>,
        f: F,
    ) -> Result<Var, AutodiffError>
    where
        F: FnOnce(&Tensor<S>) -> Tensor<S>,
    {
        self.check(a)?;
        self.ensure_finite(&[a], op_name)?;
        let value = f(&self.nodes.borrow()[a.0].value);
        Ok(self.push(value, make_op(), self.requires(a)))
    }

    // ----- primitives -------------------------------------------------

    /// Matrix product over the last two dims; leading dims must match.
    pub fn matmul(&self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.check(a)?;
        self.check(b)?;
        self.ensure_finite(&[a, b], "matmul")?;
        let nodes = self.nodes.borrow();
        let value = ops::matmul(&nodes[a.0].value, &nodes[b.0].value, false, false)?;
        drop(nodes);
        let rg = self.requires(a) || self.requires(b);
        Ok(self.push(value, Op::Matmul(a, b), rg))
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.binary_elementwise(a, b, "add", Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.binary_elementwise(a, b, "sub", Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.binary_elementwise(a, b, "mul", Op::Mul(a, b), |x, y| x * y)
    }

    fn binary_elementwise(
        &self,
        a: Var,
        b: Var,
        op_name: &'static str,
        op: Op<S>,
        f: impl Fn(S, S) -> S,
    ) -> Result<Var, AutodiffError> {
        self.check(a)?;
        self.check(b)?;
        self.ensure_finite(&[a, b], op_name)?;
        let nodes = self.nodes.borrow();
        let (ta, tb) = (&nodes[a.0].value, &nodes[b.0].value);
        if ta.shape != tb.shape {
            return Err(AutodiffError::ShapeMismatch(format!(
                "{op_name}: {:?} vs {:?}",
                ta.shape, tb.shape
            )));
        }
        let data = ta
            .data
            .iter()
            .zip(tb.data.iter())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let value = Tensor {
            shape: ta.shape.clone(),
            data,
        };
        drop(nodes);
        let rg = self.requires(a) || self.requires(b);
        Ok(self.push(value, op, rg))
    }

    pub fn scale(&self, a: Var, c: S) -> Result<Var, AutodiffError> {
        self.unary(a, "scale", || Op::Scale(a, c), |t| Tensor {
            shape: t.shape.clone(),
            data: t.data.iter().map(|&v| v * c).collect(),
        })
    }

    /// Concatenates along the last dimension; leading dims must match.
    pub fn concat_lastdim(&self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.check(a)?;
        self.check(b)?;
        self.ensure_finite(&[a, b], "concat_lastdim")?;
        let nodes = self.nodes.borrow();
        let value = ops::concat_last(&nodes[a.0].value, &nodes[b.0].value)?;
        drop(nodes);
        let rg = self.requires(a) || self.requires(b);
        Ok(self.push(value, Op::ConcatLast(a, b), rg))
    }

    /// Selects rows of a rank-2 tensor; indices are constants and may
    /// repeat. Gradients scatter-add back into the source rows.
    pub fn gather_rows(&self, a: Var, indices: &[usize]) -> Result<Var, AutodiffError> {
        self.check(a)?;
        self.ensure_finite(&[a], "gather_rows")?;
        let nodes = self.nodes.borrow();
        let value = ops::gather_rows(&nodes[a.0].value, indices)?;
        drop(nodes);
        Ok(self.push(value, Op::GatherRows(a, indices.to_vec()), self.requires(a)))
    }

    pub fn transpose_last2(&self, a: Var) -> Result<Var, AutodiffError> {
        self.check(a)?;
        self.ensure_finite(&[a], "transpose_last2")?;
        let nodes = self.nodes.borrow();
        let value = ops::transpose_last2(&nodes[a.0].value)?;
        drop(nodes);
        Ok(self.push(value, Op::TransposeLast2(a), self.requires(a)))
    }

    pub fn relu(&self, a: Var) -> Result<Var, AutodiffError> {
        self.unary(a, "relu", || Op::Relu(a), |t| Tensor {
            shape: t.shape.clone(),
            data: t
                .data
                .iter()
                .map(|&v| if v > S::zero() { v } else { S::zero() })
                .collect(),
        })
    }

    pub fn leaky_relu(&self, a: Var, slope: S) -> Result<Var, AutodiffError> {
        self.unary(a, "leaky_relu", || Op::LeakyRelu(a, slope), |t| Tensor {
            shape: t.shape.clone(),
            data: t
                .data
                .iter()
                .map(|&v| if v > S::zero() { v } else { v * slope })
                .collect(),
        })
    }

    /// Row-stabilized softmax over the last dimension.
    pub fn softmax_lastdim(&self, a: Var) -> Result<Var, AutodiffError> {
        self.check(a)?;
        self.ensure_finite(&[a], "softmax_lastdim")?;
        let nodes = self.nodes.borrow();
        let value = ops::softmax_last(&nodes[a.0].value);
        drop(nodes);
        Ok(self.push(value, Op::SoftmaxLast(a), self.requires(a)))
    }

    pub fn log(&self, a: Var) -> Result<Var, AutodiffError> {
        self.unary(a, "log", || Op::Log(a), |t| Tensor {
            shape: t.shape.clone(),
            data: t.data.iter().map(|&v| v.ln()).collect(),
        })
    }

    pub fn exp(&self, a: Var) -> Result<Var, AutodiffError> {
        self.unary(a, "exp", || Op::Exp(a), |t| Tensor {
            shape: t.shape.clone(),
            data: t.data.iter().map(|&v| v.exp()).collect(),
        })
    }

    /// Elementwise square root. The gradient at exactly zero is defined as
    /// zero (subgradient convention used by the norm-style losses).
    pub fn sqrt(&self, a: Var) -> Result<Var, AutodiffError> {
        self.unary(a, "sqrt", || Op::Sqrt(a), |t| Tensor {
            shape: t.shape.clone(),
            data: t.data.iter().map(|&v| v.sqrt()).collect(),
        })
    }

    /// Full reduction to a `[1]` scalar.
    pub fn reduce_sum(&self, a: Var) -> Result<Var, AutodiffError> {
        self.unary(a, "reduce_sum", || Op::ReduceSum(a), |t| {
            Tensor::scalar(t.data.iter().copied().sum())
        })
    }

    pub fn reduce_mean(&self, a: Var) -> Result<Var, AutodiffError> {
        self.unary(a, "reduce_mean", || Op::ReduceMean(a), |t| {
            let n = S::from_usize(t.numel().max(1)).unwrap();
            Tensor::scalar(t.data.iter().copied().sum::<S>() / n)
        })
    }

    /// Max over the last dimension (the dimension is dropped). Gradient
    /// routes to the first maximal element of each slice.
    pub fn reduce_max_lastdim(&self, a: Var) -> Result<Var, AutodiffError> {
        self.check(a)?;
        self.ensure_finite(&[a], "reduce_max_lastdim")?;
        let nodes = self.nodes.borrow();
        let (value, argmax) = ops::reduce_max_last(&nodes[a.0].value)?;
        drop(nodes);
        Ok(self.push(value, Op::ReduceMaxLast(a, argmax), self.requires(a)))
    }

    /// Normalizes each last-dim slice to zero mean / unit variance
    /// (biased variance, stabilized by `eps`). No affine part.
    pub fn layer_norm_lastdim(&self, a: Var, eps: S) -> Result<Var, AutodiffError> {
        self.check(a)?;
        self.ensure_finite(&[a], "layer_norm_lastdim")?;
        let nodes = self.nodes.borrow();
        let (value, inv_std) = ops::layer_norm_last(&nodes[a.0].value, eps)?;
        drop(nodes);
        Ok(self.push(
            value,
            Op::LayerNormLast { input: a, inv_std },
            self.requires(a),
        ))
    }

    /// Adds a rank-1 row to every last-dim slice of `a` (bias addition).
    pub fn broadcast_add_row(&self, a: Var, row: Var) -> Result<Var, AutodiffError> {
        self.check(a)?;
        self.check(row)?;
        self.ensure_finite(&[a, row], "broadcast_add_row")?;
        let nodes = self.nodes.borrow();
        let value = ops::broadcast_add_row(&nodes[a.0].value, &nodes[row.0].value)?;
        drop(nodes);
        let rg = self.requires(a) || self.requires(row);
        Ok(self.push(value, Op::BroadcastAddRow(a, row), rg))
    }

    /// Metadata-only reshape (identity on data).
    pub fn reshape(&self, a: Var, shape: &[usize]) -> Result<Var, AutodiffError> {
        self.check(a)?;
        let nodes = self.nodes.borrow();
        let t = &nodes[a.0].value;
        if t.numel() != shape.iter().product::<usize>() {
            return Err(AutodiffError::ShapeMismatch(format!(
                "reshape {:?} -> {:?}",
                t.shape, shape
            )));
        }
        let value = Tensor {
            shape: shape.to_vec(),
            data: t.data.clone(),
        };
        drop(nodes);
        Ok(self.push(value, Op::Reshape(a), self.requires(a)))
    }

    /// Reflection-corrected rotation from a 3x3 cross-covariance, the
    /// closed-form alignment optimum. Differentiable: the backward pass
    /// uses the polar-decomposition sensitivity (robust to repeated
    /// singular values; only rank < 2 covariances are truly degenerate,
    /// and those are flagged).
    pub fn rotation_from_cov(&self, h: Var) -> Result<(Var, bool), AutodiffError> {
        self.check(h)?;
        self.ensure_finite(&[h], "rotation_from_cov")?;
        let nodes = self.nodes.borrow();
        let t = &nodes[h.0].value;
        if t.shape != [3, 3] {
            return Err(AutodiffError::ShapeMismatch(format!(
                "rotation_from_cov expects [3, 3], got {:?}",
                t.shape
            )));
        }
        let m = tensor_to_mat3(t);
        drop(nodes);
        let (r, degenerate) = crate::procrustes::rotation_from_covariance(&m);
        let value = mat3_to_tensor(&r);
        Ok((
            self.push(value, Op::RotationFromCov(h), self.requires(h)),
            degenerate,
        ))
    }

    // ----- backward ----------------------------------------------------

    /// Reverse pass from a scalar loss. Returns named leaf gradients and
    /// clears the tape; handles into this tape become invalid.
    pub fn backward(&self, loss: Var) -> Result<Gradients<S>, AutodiffError> {
        if loss.0 >= self.nodes.borrow().len() {
            return Err(AutodiffError::DisconnectedLoss);
        }
        {
            let nodes = self.nodes.borrow();
            let lt = &nodes[loss.0].value;
            if lt.numel() != 1 {
                return Err(AutodiffError::NotScalar(lt.shape.clone()));
            }
        }
        let nodes = self.nodes.borrow();
        let mut grads: Vec<Option<Tensor<S>>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(&nodes[loss.0].value.shape, S::one()));

        let mut out: Gradients<S> = BTreeMap::new();
        for idx in (0..nodes.len()).rev() {
            let Some(grad) = grads[idx].take() else {
                continue;
            };
            let node = &nodes[idx];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf { name: Some(name) } = &node.op {
                accumulate_entry(&mut out, name, &grad);
                continue;
            }
            ops::backprop(&nodes, idx, &grad, &mut grads);
        }
        drop(nodes);
        // Tape is consumed: release the recorded graph.
        self.nodes.borrow_mut().clear();
        self.leaf_registry.borrow_mut().clear();
        Ok(out)
    }
}

fn accumulate_entry<S: Scalar>(out: &mut Gradients<S>, name: &str, grad: &Tensor<S>) {
    match out.get_mut(name) {
        Some(existing) => {
            for (e, g) in existing.data.iter_mut().zip(grad.data.iter()) {
                *e += *g;
            }
        }
        None => {
            out.insert(name.to_string(), grad.clone());
        }
    }
}

pub(crate) fn accumulate<S: Scalar>(slot: &mut Option<Tensor<S>>, grad: Tensor<S>) {
    match slot {
        Some(existing) => {
            debug_assert_eq!(existing.shape, grad.shape);
            for (e, g) in existing.data.iter_mut().zip(grad.data.iter()) {
                *e += *g;
            }
        }
        None => *slot = Some(grad),
    }
}

pub(crate) fn tensor_to_mat3<S: Scalar>(t: &Tensor<S>) -> Mat3<S> {
    let d = &t.data;
    Mat3::from_rows(
        [d[0], d[1], d[2]],
        [d[3], d[4], d[5]],
        [d[6], d[7], d[8]],
    )
}

pub(crate) fn mat3_to_tensor<S: Scalar>(m: &Mat3<S>) -> Tensor<S> {
    Tensor {
        shape: vec![3, 3],
        data: m.m.iter().flatten().copied().collect(),
    }
}
