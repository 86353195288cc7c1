use rand::Rng;

use super::check_finite;
use crate::error::Result;
use crate::numerics::{Bound, ParamId, ParamStore, Tape, Tensor, Var};

/// Fused parameters of one sLSTM block; gate order in the fused
/// pre-activation is `[z, i, f, o]`.
#[derive(Debug, Clone)]
pub struct SLstmParams {
    pub d: usize,
    pub w: ParamId,
    pub r: ParamId,
    pub b: ParamId,
}

impl SLstmParams {
    pub fn new(store: &mut ParamStore, prefix: &str, d: usize, rng: &mut impl Rng) -> Self {
        let w = store.add_uniform(format!("{prefix}.w"), d, 4 * d, rng);
        let r = store.add_uniform(format!("{prefix}.r"), d, 4 * d, rng);
        let mut bias = vec![0.0; 4 * d];
        bias[2 * d..3 * d].fill(1.0);
        let b = store.add(format!("{prefix}.b"), Tensor::vector(bias));
        Self { d, w, r, b }
    }
}

/// Batched sLSTM state, every field `[B×d]`.
#[derive(Debug, Clone, Copy)]
pub struct SLstmState<'t> {
    pub c: Var<'t>,
    pub n: Var<'t>,
    pub h: Var<'t>,
    pub m: Var<'t>,
}

impl<'t> SLstmState<'t> {
    pub fn zeros(tape: &'t Tape, batch: usize, d: usize) -> Self {
        let z = tape.constant(Tensor::zeros(&[batch, d]));
        Self { c: z, n: z, h: z, m: z }
    }
}

pub fn slstm_step<'t>(
    params: &SLstmParams,
    bound: &Bound<'t>,
    state: &SLstmState<'t>,
    input: &Var<'t>,
    step: usize,
) -> Result<SLstmState<'t>> {
    let pre = input
        .matmul(&bound[params.w])?
        .add(&state.h.matmul(&bound[params.r])?)?
        .add(&bound[params.b])?;
    slstm_cell(state, &pre, params.d, step)
}

/// Recurrence given the fused pre-activation `[B×4d]`.
pub fn slstm_cell<'t>(state: &SLstmState<'t>, pre: &Var<'t>, d: usize, step: usize) -> Result<SLstmState<'t>> {
    check_finite(pre, "sLSTM gate pre-activation", step)?;
    let y = pre.slice_last(0, d)?.tanh();
    let log_i = pre.slice_last(d, d)?;
    let log_f = pre.slice_last(2 * d, d)?.log_sigmoid();
    let o = pre.slice_last(3 * d, d)?.sigmoid();

    let shifted_f = log_f.add(&state.m)?;
    let m = shifted_f.maximum(&log_i)?;
    let i = log_i.sub(&m)?.exp();
    let f = shifted_f.sub(&m)?.exp();

    let c = f.mul(&state.c)?.add(&i.mul(&y)?)?;
    let n = f.mul(&state.n)?.add(&i)?;
    let h = o.mul(&c.div(&n)?)?;
    Ok(SLstmState { c, n, h, m })
}
