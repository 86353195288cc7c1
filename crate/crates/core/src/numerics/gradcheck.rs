//! Central finite differences, used as an independent oracle for the tape.

use super::{Bound, ParamId, ParamStore, Tape, Var};

/// `(f(x + h·e_i) − f(x − h·e_i)) / 2h` for every coordinate `i`.
pub fn central_difference(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let up = f(&probe);
            probe[i] = orig - h;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `|a − b| / max(|a|, |b|, floor)`.
pub fn relative_error_with_floor(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// `|a − b| / max(|a|, |b|)`, zero when both are exactly zero.
pub fn relative_error(a: f64, b: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    relative_error_with_floor(a, b, f64::MIN_POSITIVE)
}

/// A scalar function of one or more parameter stores, rebuilt on a fresh tape
/// for every evaluation.
pub trait Objective {
    fn evaluate<'t>(&self, tape: &'t Tape, params: &[Bound<'t>]) -> Var<'t>;
}

/// Analytic and numeric derivative of one parameter coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientEntry {
    pub store: usize,
    pub name: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

impl GradientEntry {
    pub fn relative_error(&self, floor: f64) -> f64 {
        relative_error_with_floor(self.analytic, self.numeric, floor)
    }
}

/// Compares tape gradients with central differences for every coordinate
/// accepted by `select(store, id, index)`.
pub fn check_gradients(
    stores: &[&ParamStore],
    objective: &impl Objective,
    h: f64,
    mut select: impl FnMut(usize, ParamId, usize) -> bool,
) -> Vec<GradientEntry> {
    let tape = Tape::new();
    let bound: Vec<Bound<'_>> = stores.iter().map(|s| s.bind(&tape)).collect();
    let root = objective.evaluate(&tape, &bound);
    tape.backward(root).expect("objective must be a tracked scalar");
    let analytic: Vec<_> = stores
        .iter()
        .zip(&bound)
        .map(|(s, b)| s.gradients(&tape, b))
        .collect();

    let eval = |probe: &[ParamStore]| {
        let tape = Tape::new();
        let bound: Vec<Bound<'_>> = probe.iter().map(|s| s.bind_frozen(&tape)).collect();
        objective.evaluate(&tape, &bound).item()
    };

    let mut probe: Vec<ParamStore> = stores.iter().map(|s| (*s).clone()).collect();
    let mut out = Vec::new();
    for (si, store) in stores.iter().enumerate() {
        for id in store.ids() {
            for k in 0..store.get(id).len() {
                if !select(si, id, k) {
                    continue;
                }
                let orig = store.get(id).data()[k];
                probe[si].get_mut(id).data_mut()[k] = orig + h;
                let up = eval(&probe);
                probe[si].get_mut(id).data_mut()[k] = orig - h;
                let down = eval(&probe);
                probe[si].get_mut(id).data_mut()[k] = orig;
                out.push(GradientEntry {
                    store: si,
                    name: store.name(id).to_string(),
                    index: k,
                    analytic: analytic[si][id.index()].data()[k],
                    numeric: (up - down) / (2.0 * h),
                });
            }
        }
    }
    out
}
