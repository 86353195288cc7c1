use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::*;
use crate::config::Activation;
use crate::numerics::gradcheck::{check_gradients, relative_error, Objective};
use crate::numerics::{ParamStore, Tape, Tensor};

fn randn(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let v: f64 = StandardNormal.sample(rng);
            scale * v
        })
        .collect::<Vec<f64>>();
    Tensor::new(shape.to_vec(), data).unwrap()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[test]
fn slstm_zero_weights_and_input_give_zero_hidden() {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let p = SLstmParams::new(&mut store, "s", 3, &mut rng);
    for t in store.tensors_mut() {
        t.data_mut().fill(0.0);
    }
    let tape = Tape::new();
    let b = store.bind(&tape);
    let s0 = SLstmState::zeros(&tape, 2, 3);
    let x = tape.constant(Tensor::zeros(&[2, 3]));
    let s1 = slstm_step(&p, &b, &s0, &x, 1).unwrap();
    assert!(s1.h.value().data().iter().all(|&v| v == 0.0));
}

#[test]
fn slstm_first_step_normalized_cell_is_cell_input() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let tape = Tape::new();
    let pre = randn(&mut rng, &[1, 8], 1.5);
    let s0 = SLstmState::zeros(&tape, 1, 2);
    let s1 = slstm_cell(&s0, &tape.constant(pre.clone()), 2, 1).unwrap();
    for j in 0..2 {
        let y = pre.data()[j].tanh();
        let o = sigmoid(pre.data()[6 + j]);
        let h = s1.h.value().data()[j];
        assert!((h / o - y).abs() < 1e-14, "{} vs {}", h / o, y);
        assert_eq!(s1.c.value().data()[j] / s1.n.value().data()[j], h / o);
    }
}

#[test]
fn slstm_long_random_run_stays_finite() {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let p = SLstmParams::new(&mut store, "s", 4, &mut rng);
    let tape = Tape::new();
    let b = store.bind_frozen(&tape);
    let mut s = SLstmState::zeros(&tape, 3, 4);
    for t in 1..=200 {
        let x = tape.constant(randn(&mut rng, &[3, 4], 2.0));
        s = slstm_step(&p, &b, &s, &x, t).unwrap();
        assert!(s.h.value().all_finite() && s.c.value().all_finite());
        assert!(s.n.value().data().iter().all(|&v| v > 0.0));
    }
}

#[test]
fn exponential_gates_do_not_overflow_over_ten_thousand_steps() {
    // Input gate pre-activation of 50 every step: unstabilized, the cell would
    // grow like e^{50 t} and overflow after about 15 steps.
    let tape = Tape::new();
    let mut pre = vec![0.3, -0.2, 50.0, 50.0, 4.0, 4.0, 0.0, 0.0];
    let mut s = SLstmState::zeros(&tape, 1, 2);
    for t in 1..=10_000 {
        pre[0] = ((t as f64) * 0.01).sin();
        let v = tape.constant(Tensor::new(vec![1, 8], pre.clone()).unwrap());
        s = slstm_cell(&s, &v, 2, t).unwrap();
    }
    let c = s.c.value();
    assert!(c.all_finite() && s.h.value().all_finite());
    assert!(c.data().iter().all(|v| v.abs() < 1e3));
}

#[test]
fn nan_pre_activation_reports_step() {
    let tape = Tape::new();
    let s = SLstmState::zeros(&tape, 1, 1);
    let pre = tape.constant(Tensor::new(vec![1, 4], vec![0.0, f64::NAN, 0.0, 0.0]).unwrap());
    match slstm_cell(&s, &pre, 1, 7) {
        Err(crate::Error::Numeric { step: Some(7), .. }) => {}
        other => panic!("unexpected {other:?}"),
    }
}

fn mlstm_gates<'t>(tape: &'t Tape, q: &[f64], k: &[f64], v: &[f64], log_i: f64, f_pre: f64) -> MLstmGates<'t> {
    let d = q.len();
    let row = |x: &[f64]| tape.constant(Tensor::new(vec![1, d], x.to_vec()).unwrap());
    let one = |x: f64| tape.constant(Tensor::new(vec![1, 1], vec![x]).unwrap());
    MLstmGates {
        q: row(q),
        k: row(k),
        v: row(v),
        o_pre: row(&vec![0.0; d]),
        log_i: one(log_i),
        f_pre: one(f_pre),
    }
}

#[test]
fn mlstm_rank_one_retrieval() {
    let tape = Tape::new();
    let k = [0.6, 0.8, 0.0];
    let v = [1.5, -2.0, 0.25];
    let s0 = MLstmState::zeros(&tape, 1, 3);
    let s1 = mlstm_cell(&s0, &mlstm_gates(&tape, &k, &k, &v, 0.0, 0.0), 1).unwrap();
    // i' = 1 because log f < 0 = log i sets the stabilizer to 0.
    let h = s1.h.value();
    for j in 0..3 {
        assert!((h.data()[j] / 0.5 - v[j]).abs() < 1e-14);
        for l in 0..3 {
            assert!((s1.c.value().data()[j * 3 + l] - v[j] * k[l]).abs() < 1e-15);
        }
    }
}

#[test]
fn mlstm_closed_gates_keep_memory() {
    let tape = Tape::new();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let s0 = MLstmState::zeros(&tape, 1, 2);
    let g = |rng: &mut ChaCha8Rng| {
        let r = randn(rng, &[6], 1.0).into_vec();
        (r[0..2].to_vec(), r[2..4].to_vec(), r[4..6].to_vec())
    };
    let (q, k, v) = g(&mut rng);
    let s1 = mlstm_cell(&s0, &mlstm_gates(&tape, &q, &k, &v, 0.3, 0.1), 1).unwrap();
    let (q, k, v) = g(&mut rng);
    let s2 = mlstm_cell(&s1, &mlstm_gates(&tape, &q, &k, &v, -1000.0, 50.0), 2).unwrap();
    assert_eq!(s1.c.value(), s2.c.value());
    assert_eq!(s1.n.value(), s2.n.value());
}

#[test]
fn mlstm_readout_is_bounded_by_memory_product() {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let p = MLstmParams::new(&mut store, "m", 3, &mut rng);
    let tape = Tape::new();
    let b = store.bind_frozen(&tape);
    let mut s = MLstmState::zeros(&tape, 2, 3);
    for t in 1..=1000 {
        let x = tape.constant(randn(&mut rng, &[2, 3], 1.0));
        let pre = x.affine(&b[p.w], &b[p.b]).unwrap().value();
        s = mlstm_step(&p, &b, &s, &x, t).unwrap();
        let (c, n, h) = (s.c.value(), s.n.value(), s.h.value());
        for r in 0..2 {
            let row = &pre.data()[r * 14..(r + 1) * 14];
            let q = &row[0..3];
            let nq: f64 = (0..3).map(|j| n.data()[r * 3 + j] * q[j]).sum();
            let denom = nq.abs().max(1.0);
            assert!(denom >= 1.0);
            let mut cq_norm = 0.0;
            let mut ht_norm = 0.0;
            for j in 0..3 {
                let cq: f64 = (0..3).map(|l| c.data()[r * 9 + j * 3 + l] * q[l]).sum();
                cq_norm += cq * cq;
                let ht = h.data()[r * 3 + j] / sigmoid(row[9 + j]);
                ht_norm += ht * ht;
            }
            assert!(ht_norm.sqrt() <= cq_norm.sqrt() * (1.0 + 1e-12) + 1e-300);
        }
    }
}

#[test]
fn latent_head_center_and_zero_network() {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let head = LatentHead::new(&mut store, "z", 5, 2, &mut rng);
    store.get_mut(head.w).data_mut().fill(0.0);
    store.get_mut(head.b).data_mut().copy_from_slice(&[0.5, -0.25, 1.0, -3.0]);
    let tape = Tape::new();
    let b = store.bind(&tape);
    let h = tape.constant(randn(&mut rng, &[1, 3], 1.0));
    let z = tape.constant(randn(&mut rng, &[1, 2], 1.0));
    let lat = head.latent(&b, &[h, z], Some(&Tensor::zeros(&[1, 2]))).unwrap();
    assert_eq!(lat.sample.value(), lat.mean.value());
    assert_eq!(lat.mean.value().data(), &[0.5, -0.25]);
    assert_eq!(lat.logvar.value().data(), &[1.0, -3.0]);
    let det = head.latent(&b, &[h, z], None).unwrap();
    assert_eq!(det.sample.id(), det.mean.id());
}

#[test]
fn logvar_is_clamped() {
    let tape = Tape::new();
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let head = LatentHead::new(&mut store, "z", 1, 1, &mut rng);
    store.get_mut(head.w).data_mut().fill(0.0);
    store.get_mut(head.b).data_mut().copy_from_slice(&[0.0, 40.0]);
    let b = store.bind(&tape);
    let (_, lv) = head.params(&b, &[tape.constant(Tensor::zeros(&[1, 1]))]).unwrap();
    assert_eq!(lv.item(), LOGVAR_MAX);
}

#[test]
fn reparameterized_draws_match_moments() {
    let n = 100_000;
    let (mu, lv) = (0.7, -0.4);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let tape = Tape::new();
    let mean = tape.constant(Tensor::full(&[n, 1], mu));
    let logvar = tape.constant(Tensor::full(&[n, 1], lv));
    let eps = randn(&mut rng, &[n, 1], 1.0);
    let s = reparameterize(mean, logvar, Some(&eps)).unwrap().sample.value();
    let m = s.sum() / n as f64;
    let var = s.data().iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64;
    let sigma = (lv / 2.0_f64).exp();
    assert!((m - mu).abs() < 3.0 * sigma / (n as f64).sqrt(), "mean {m}");
    assert!((var / lv.exp() - 1.0).abs() < 0.05, "var {var}");
}

#[test]
fn output_head_zero_and_identity_cases() {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let head = OutputHead::new(&mut store, "out", 2, 3, Activation::Tanh, &mut rng);
    store.get_mut(head.wz).data_mut().fill(0.0);
    store.get_mut(head.rz).data_mut().fill(0.0);
    store.get_mut(head.b).data_mut().copy_from_slice(&[0.1, -0.2, 0.3]);
    let tape = Tape::new();
    let b = store.bind(&tape);
    let z = tape.constant(randn(&mut rng, &[1, 2], 1.0));
    let h = tape.constant(randn(&mut rng, &[1, 3], 1.0));
    let x = head.apply(&b, &z, &h).unwrap().value();
    assert_eq!(x.data(), &[0.1f64.tanh(), (-0.2f64).tanh(), 0.3f64.tanh()]);

    let mut store = ParamStore::new();
    let head = OutputHead::new(&mut store, "out", 2, 3, Activation::Identity, &mut rng);
    store.get_mut(head.wz).data_mut().fill(0.0);
    store
        .get_mut(head.rz)
        .data_mut()
        .copy_from_slice(&[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
    let tape = Tape::new();
    let b = store.bind(&tape);
    let h = tape.constant(randn(&mut rng, &[1, 3], 1.0));
    let z = tape.constant(randn(&mut rng, &[1, 2], 1.0));
    assert_eq!(head.apply(&b, &z, &h).unwrap().value(), h.value());
}

/// Two unrolled steps of stack → latent head → output head on fixed inputs.
struct TwoStep {
    stack: CellStack,
    latent: LatentHead,
    output: OutputHead,
    inputs: Vec<Tensor>,
    eps: Vec<Tensor>,
}

impl Objective for TwoStep {
    fn evaluate<'t>(&self, tape: &'t Tape, params: &[Bound<'t>]) -> Var<'t> {
        let b = &params[0];
        let mut states = self.stack.init_state(tape, 2);
        let mut z = zero_latent(tape, 2, self.latent.d_latent);
        let mut loss = tape.constant(Tensor::scalar(0.0));
        for (t, (x, e)) in self.inputs.iter().zip(&self.eps).enumerate() {
            let h = self.stack.step(b, &mut states, &tape.constant(x.clone()), t + 1).unwrap();
            let lat = self.latent.latent(b, &[h, z], Some(e)).unwrap();
            z = lat.sample;
            let out = self.output.apply(b, &z, &h).unwrap();
            let term = out.square().mean().add(&lat.logvar.mean()).unwrap();
            loss = loss.add(&term).unwrap();
        }
        loss
    }
}

fn two_step(pattern: &str, seed: u64) -> (ParamStore, TwoStep) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let stack = CellStack::new(&mut store, "u", pattern, 4, &mut rng).unwrap();
    let latent = LatentHead::new(&mut store, "z", 6, 2, &mut rng);
    let output = OutputHead::new(&mut store, "x", 2, 4, Activation::Tanh, &mut rng);
    let inputs = (0..2).map(|_| randn(&mut rng, &[2, 4], 1.0)).collect();
    let eps = (0..2).map(|_| randn(&mut rng, &[2, 2], 1.0)).collect();
    (
        store,
        TwoStep {
            stack,
            latent,
            output,
            inputs,
            eps,
        },
    )
}

#[test]
fn unrolled_full_step_gradients_match_finite_differences() {
    let (store, obj) = two_step("ms", 9);
    let entries = check_gradients(&[&store], &obj, 1e-5, |_, _, _| true);
    assert_eq!(entries.len(), store.numel());
    for e in &entries {
        assert!(e.relative_error(1e-7) < 1e-4, "{e:?}");
    }
}

#[test]
fn slstm_step_gradients_on_random_coordinates() {
    let (store, obj) = two_step("s", 10);
    let mut picks = ChaCha8Rng::seed_from_u64(11);
    let total = store.numel();
    let chosen: Vec<usize> = rand::seq::index::sample(&mut picks, total, 8).into_vec();
    let mut flat = 0;
    let entries = check_gradients(&[&store], &obj, 1e-5, |_, _, _| {
        flat += 1;
        chosen.contains(&(flat - 1))
    });
    assert_eq!(entries.len(), 8);
    for e in &entries {
        assert!(relative_error(e.analytic, e.numeric) < 1e-4 || (e.analytic - e.numeric).abs() < 1e-10, "{e:?}");
    }
}

#[test]
fn identical_seed_gives_bitwise_identical_states() {
    let run = || {
        let (store, obj) = two_step("ms", 12);
        let tape = Tape::new();
        let b = store.bind_frozen(&tape);
        obj.evaluate(&tape, &[b]).item().to_bits()
    };
    assert_eq!(run(), run());
}
