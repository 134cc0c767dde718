//! Global pooling and the temperature value head.

use crate::autodiff::{Tape, Tensor, Var};
use crate::networks::{NetCtx, NetworkError};
use crate::scalar::{cast, Scalar};

/// Channel-wise mean over rows: `[N, d] -> [1, d]`.
pub fn global_pool<S: Scalar>(tape: &Tape<S>, phi: Var) -> Result<Var, NetworkError> {
    let shape = tape.shape(phi);
    let n = shape[0];
    if n == 0 {
        return Err(NetworkError::InvalidConfig("global_pool of empty cloud".into()));
    }
    let weights = tape.constant(Tensor::full(
        &[1, n],
        S::one() / S::from_usize(n).unwrap(),
    ));
    Ok(tape.matmul(weights, phi)?)
}

/// Numerically safe softplus: `relu(x) + ln(1 + exp(-|x|))`.
fn softplus<S: Scalar>(tape: &Tape<S>, x: Var) -> Result<Var, NetworkError> {
    let pos = tape.relu(x)?;
    let neg = tape.relu(tape.scale(x, -S::one())?)?;
    let abs = tape.add(pos, neg)?;
    let e = tape.exp(tape.scale(abs, -S::one())?)?;
    let ones = tape.constant(Tensor::full(&tape.shape(x), S::one()));
    let lp = tape.log(tape.add(e, ones)?)?;
    Ok(tape.add(pos, lp)?)
}

/// Predicts the matching temperature from pooled features:
/// an MLP over `concat(Psi_X, Psi_Y)` with normalization + relu between
/// layers, pushed through softplus and shifted by the floor, so the
/// output is a positive `[1, 1]` scalar.
pub fn value_head<S: Scalar>(ctx: &NetCtx<S>, psi_x: Var, psi_y: Var) -> Result<Var, NetworkError> {
    let t = ctx.tape;
    let cfg = &ctx.params.config.value_head;
    let mut h = t.concat_lastdim(psi_x, psi_y)?;
    for i in 0..cfg.widths.len() - 1 {
        let prefix = format!("value.layer{i}");
        h = t.matmul(h, ctx.p(&format!("{prefix}.weight")))?;
        h = ctx.norm_affine(h, &prefix)?;
        h = t.relu(h)?;
    }
    let out = ctx.linear_bias(h, "value.out")?;
    let sp = softplus(t, out)?;
    let floor = t.constant(Tensor::full(&[1, 1], cast::<S>(cfg.lambda_floor)));
    Ok(t.add(sp, floor)?)
}
