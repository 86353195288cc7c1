use rand::Rng;

use super::check_finite;
use crate::error::Result;
use crate::numerics::{Bound, ParamId, ParamStore, Tape, Tensor, Var};

/// Single-head mLSTM block. The fused input projection is
/// `[q, k, v, o, i, f]` with widths `d, d, d, d, 1, 1`.
#[derive(Debug, Clone)]
pub struct MLstmParams {
    pub d: usize,
    pub w: ParamId,
    pub b: ParamId,
}

impl MLstmParams {
    pub fn new(store: &mut ParamStore, prefix: &str, d: usize, rng: &mut impl Rng) -> Self {
        let w = store.add_uniform(format!("{prefix}.w"), d, 4 * d + 2, rng);
        let mut bias = vec![0.0; 4 * d + 2];
        bias[4 * d + 1] = 1.0;
        let b = store.add(format!("{prefix}.b"), Tensor::vector(bias));
        Self { d, w, b }
    }
}

/// Batched mLSTM state: `c` is `[B×d×d]`, `n` and `h` are `[B×d]`, `m` is `[B×1]`.
#[derive(Debug, Clone, Copy)]
pub struct MLstmState<'t> {
    pub c: Var<'t>,
    pub n: Var<'t>,
    pub h: Var<'t>,
    pub m: Var<'t>,
}

impl<'t> MLstmState<'t> {
    pub fn zeros(tape: &'t Tape, batch: usize, d: usize) -> Self {
        Self {
            c: tape.constant(Tensor::zeros(&[batch, d, d])),
            n: tape.constant(Tensor::zeros(&[batch, d])),
            h: tape.constant(Tensor::zeros(&[batch, d])),
            m: tape.constant(Tensor::zeros(&[batch, 1])),
        }
    }
}

/// Projected inputs of one mLSTM step. `log_i` and `f_pre` are `[B×1]`.
#[derive(Debug, Clone, Copy)]
pub struct MLstmGates<'t> {
    pub q: Var<'t>,
    pub k: Var<'t>,
    pub v: Var<'t>,
    pub o_pre: Var<'t>,
    pub log_i: Var<'t>,
    pub f_pre: Var<'t>,
}

pub fn mlstm_step<'t>(
    params: &MLstmParams,
    bound: &Bound<'t>,
    state: &MLstmState<'t>,
    input: &Var<'t>,
    step: usize,
) -> Result<MLstmState<'t>> {
    let d = params.d;
    let pre = input.affine(&bound[params.w], &bound[params.b])?;
    check_finite(&pre, "mLSTM gate pre-activation", step)?;
    let gates = MLstmGates {
        q: pre.slice_last(0, d)?,
        k: pre.slice_last(d, d)?.scale(1.0 / (d as f64).sqrt()),
        v: pre.slice_last(2 * d, d)?,
        o_pre: pre.slice_last(3 * d, d)?,
        log_i: pre.slice_last(4 * d, 1)?,
        f_pre: pre.slice_last(4 * d + 1, 1)?,
    };
    mlstm_cell(state, &gates, step)
}

/// Matrix-memory recurrence with stabilized scalar gates.
pub fn mlstm_cell<'t>(state: &MLstmState<'t>, g: &MLstmGates<'t>, step: usize) -> Result<MLstmState<'t>> {
    check_finite(&g.q, "mLSTM query", step)?;
    let shape = g.q.shape();
    let (batch, d) = (shape[0], shape[1]);

    let log_f = g.f_pre.log_sigmoid();
    let shifted_f = log_f.add(&state.m)?;
    let m = shifted_f.maximum(&g.log_i)?;
    let i = g.log_i.sub(&m)?.exp();
    let f = shifted_f.sub(&m)?.exp();

    let outer = g.v.reshape(&[batch, d, 1])?.mul(&g.k.reshape(&[batch, 1, d])?)?;
    let c = f
        .reshape(&[batch, 1, 1])?
        .mul(&state.c)?
        .add(&i.reshape(&[batch, 1, 1])?.mul(&outer)?)?;
    let n = f.mul(&state.n)?.add(&i.mul(&g.k)?)?;

    let cq = c.mul(&g.q.reshape(&[batch, 1, d])?)?.sum_last_axis();
    let denom = n
        .mul(&g.q)?
        .sum_last_axis()
        .reshape(&[batch, 1])?
        .abs()
        .max_scalar(1.0);
    let h = g.o_pre.sigmoid().mul(&cq.div(&denom)?)?;
    Ok(MLstmState { c, n, h, m })
}
