//! Recurrent building blocks: sLSTM and mLSTM cells, their residual stack,
//! and the Gaussian latent and output heads.

mod heads;
mod mlstm;
mod slstm;

pub use heads::{reparameterize, zero_latent, LatentHead, LatentState, OutputHead, LOGVAR_MAX, LOGVAR_MIN};
pub use mlstm::{mlstm_cell, mlstm_step, MLstmGates, MLstmParams, MLstmState};
pub use slstm::{slstm_cell, slstm_step, SLstmParams, SLstmState};

use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::{Bound, ParamStore, Tape, Var};

pub(crate) fn check_finite(v: &Var<'_>, what: &str, step: usize) -> Result<()> {
    if v.value().all_finite() {
        Ok(())
    } else {
        Err(Error::numeric(what, Some(step)))
    }
}

#[derive(Debug, Clone)]
pub enum Block {
    M(MLstmParams),
    S(SLstmParams),
}

#[derive(Debug, Clone, Copy)]
pub enum BlockState<'t> {
    M(MLstmState<'t>),
    S(SLstmState<'t>),
}

/// Deterministic part of a recurrent unit: cells applied in pattern order,
/// each wrapped in a residual connection.
#[derive(Debug, Clone)]
pub struct CellStack {
    pub d_model: usize,
    pub blocks: Vec<Block>,
}

impl CellStack {
    pub fn new(store: &mut ParamStore, prefix: &str, pattern: &str, d_model: usize, rng: &mut impl Rng) -> Result<Self> {
        let blocks = pattern
            .chars()
            .enumerate()
            .map(|(i, c)| match c {
                'm' => Ok(Block::M(MLstmParams::new(store, &format!("{prefix}.{i}.mlstm"), d_model, rng))),
                's' => Ok(Block::S(SLstmParams::new(store, &format!("{prefix}.{i}.slstm"), d_model, rng))),
                other => Err(Error::Config(format!("unknown block kind {other:?}"))),
            })
            .collect::<Result<_>>()?;
        Ok(Self { d_model, blocks })
    }

    pub fn init_state<'t>(&self, tape: &'t Tape, batch: usize) -> Vec<BlockState<'t>> {
        self.blocks
            .iter()
            .map(|b| match b {
                Block::M(_) => BlockState::M(MLstmState::zeros(tape, batch, self.d_model)),
                Block::S(_) => BlockState::S(SLstmState::zeros(tape, batch, self.d_model)),
            })
            .collect()
    }

    /// Advances every block by one step and returns the top hidden state.
    pub fn step<'t>(&self, bound: &Bound<'t>, states: &mut [BlockState<'t>], input: &Var<'t>, step: usize) -> Result<Var<'t>> {
        let mut u = *input;
        for (block, state) in self.blocks.iter().zip(states.iter_mut()) {
            let h = match (block, &*state) {
                (Block::M(p), BlockState::M(s)) => {
                    let next = mlstm_step(p, bound, s, &u, step)?;
                    *state = BlockState::M(next);
                    next.h
                }
                (Block::S(p), BlockState::S(s)) => {
                    let next = slstm_step(p, bound, s, &u, step)?;
                    *state = BlockState::S(next);
                    next.h
                }
                _ => return Err(Error::Contract("block state does not match block kind".into())),
            };
            u = u.add(&h)?;
        }
        Ok(u)
    }
}

#[cfg(test)]
mod tests;
