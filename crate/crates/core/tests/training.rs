mod common;

use common::{bits, sines, tiny_config};
use proptest::prelude::*;
use stoxlstm::dataio::{export_latents, read_numeric_csv, WindowSet};
use stoxlstm::generative::LatentSource;
use stoxlstm::loss::KlDirection;
use stoxlstm::model::{elbo_objective, BatchObjective, LossSettings, TrainBatch};
use stoxlstm::numerics::gradcheck::check_gradients;
use stoxlstm::numerics::{Tape, Tensor};
use stoxlstm::preprocess::patch_count;
use stoxlstm::trainer::checkpoint::{load_model, save_model, Checkpoint};
use stoxlstm::trainer::{train, TrainConfig};
use stoxlstm::{Error, StoxModel};

/// Gradients smaller than this are compared absolutely (to 1e-9): a central
/// difference at h = 1e-5 on a loss of order 10 carries ~2e-10 of roundoff.
const GRAD_FLOOR: f64 = 1e-5;

fn quick_config() -> TrainConfig {
    TrainConfig {
        epochs: 3,
        batch_size: 16,
        lr: 3e-3,
        beta: 1.0,
        seed: 7,
        patience: 0,
        ..TrainConfig::default()
    }
}

fn all_bits(model: &StoxModel) -> Vec<u64> {
    model.stores().iter().flat_map(|s| s.tensors().iter().flat_map(bits)).collect()
}

#[test]
fn total_loss_gradients_match_finite_differences() {
    let model = StoxModel::new(&tiny_config(), 21).unwrap();
    assert_eq!(model.generative.geometry().count(), 3);
    let data = sines(2, 24, 4);
    let windows: Vec<&[f64]> = vec![data.row(0), data.row(1)];
    for direction in [KlDirection::Paper, KlDirection::Standard] {
        let objective = BatchObjective {
            model: &model,
            batch: TrainBatch::new(&model, &windows, Some(&[5, 6])).unwrap(),
            settings: LossSettings {
                beta: 2.0,
                kl_direction: direction,
            },
        };
        let entries = check_gradients(&model.stores(), &objective, 1e-5, |_, _, _| true);
        assert_eq!(entries.len(), model.num_parameters());
        let worst = entries
            .iter()
            .max_by(|a, b| a.relative_error(GRAD_FLOOR).total_cmp(&b.relative_error(GRAD_FLOOR)))
            .unwrap();
        assert!(worst.relative_error(GRAD_FLOOR) < 1e-4, "{direction:?}: {worst:?}");
        let resolved = entries.iter().filter(|e| e.numeric.abs() >= GRAD_FLOOR).count();
        assert!(resolved * 2 > entries.len(), "only {resolved} of {} entries above the floor", entries.len());
    }
}

#[test]
fn training_is_reproducible_and_independent_of_worker_count() {
    let data = sines(2, 160, 1);
    let train_ws = WindowSet::new(&data, (0, 120), 16, 8, 1);
    let val_ws = WindowSet::new(&data, (104, 160), 16, 8, 1);
    let run = |workers| {
        let cfg = TrainConfig { workers, ..quick_config() };
        train(StoxModel::new(&tiny_config(), 2).unwrap(), &train_ws, &val_ws, &cfg, |_| {}).unwrap()
    };
    let a = run(1);
    let b = run(1);
    let c = run(3);
    assert_eq!(all_bits(&a.model), all_bits(&b.model));
    assert_eq!(all_bits(&a.model), all_bits(&c.model));
    assert_eq!(a.history, c.history);
    assert_eq!(a.history.len(), 3);
}

#[test]
fn kept_model_is_the_best_validation_epoch() {
    let data = sines(1, 200, 3);
    let train_ws = WindowSet::new(&data, (0, 150), 16, 8, 1);
    let val_ws = WindowSet::new(&data, (134, 200), 16, 8, 1);
    let cfg = TrainConfig { epochs: 5, ..quick_config() };
    let out = train(StoxModel::new(&tiny_config(), 8).unwrap(), &train_ws, &val_ws, &cfg, |_| {}).unwrap();
    let best = out.best_epoch.unwrap();
    let kept = stoxlstm::trainer::forecast_mse(&out.model.generative, &val_ws, 1).unwrap();
    assert_eq!(kept, out.history[best].val_mse);
    assert!(kept <= out.history.last().unwrap().val_mse);
}

#[test]
fn clipping_above_every_gradient_norm_changes_nothing() {
    let data = sines(1, 120, 5);
    let train_ws = WindowSet::new(&data, (0, 90), 16, 8, 1);
    let val_ws = WindowSet::new(&data, (74, 120), 16, 8, 1);
    let run = |clip_norm| {
        let cfg = TrainConfig { clip_norm, ..quick_config() };
        train(StoxModel::new(&tiny_config(), 1).unwrap(), &train_ws, &val_ws, &cfg, |_| {}).unwrap()
    };
    assert_eq!(all_bits(&run(None).model), all_bits(&run(Some(1e12)).model));
}

#[test]
fn zero_epochs_return_the_initial_model() {
    let data = sines(1, 80, 5);
    let train_ws = WindowSet::new(&data, (0, 50), 16, 8, 1);
    let val_ws = WindowSet::new(&data, (34, 80), 16, 8, 1);
    let init = StoxModel::new(&tiny_config(), 1).unwrap();
    let cfg = TrainConfig { epochs: 0, ..quick_config() };
    let out = train(init.clone(), &train_ws, &val_ws, &cfg, |_| {}).unwrap();
    assert!(out.history.is_empty() && out.best_epoch.is_none());
    assert_eq!(all_bits(&out.model), all_bits(&init));
}

#[test]
fn empty_split_is_a_data_error() {
    let data = sines(1, 80, 5);
    let train_ws = WindowSet::new(&data, (0, 20), 16, 8, 1);
    let val_ws = WindowSet::new(&data, (34, 80), 16, 8, 1);
    let init = StoxModel::new(&tiny_config(), 1).unwrap();
    let err = train(init, &train_ws, &val_ws, &quick_config(), |_| {}).unwrap_err();
    assert!(matches!(err, Error::Data(_)), "{err}");
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    let model = StoxModel::new(&tiny_config(), 13).unwrap();
    save_model(&path, &model, serde_json::json!({"epoch": 4})).unwrap();
    let (loaded, meta) = load_model(&path).unwrap();
    assert_eq!(meta["epoch"], 4);
    assert_eq!(all_bits(&loaded), all_bits(&model));
    assert_eq!(loaded.config(), model.config());

    let bytes = std::fs::read(&path).unwrap();
    let again = dir.path().join("again.ckpt");
    save_model(&again, &loaded, meta).unwrap();
    assert_eq!(std::fs::read(&again).unwrap(), bytes);
    assert!(Checkpoint::decode(&bytes[..bytes.len() - 3]).is_err());
    let mut extra = bytes.clone();
    extra.push(0);
    assert!(Checkpoint::decode(&extra).is_err());
}

#[test]
fn channels_are_forecast_independently() {
    let model = StoxModel::new(&tiny_config(), 17).unwrap();
    let hist = sines(3, 16, 2);
    let joint = model.generative.forecast(&hist, 4, 3).unwrap();
    for c in 0..3 {
        let single = Tensor::new(vec![1, 16], hist.row(c).to_vec()).unwrap();
        let point = model.generative.forecast(&single, 4, 0).unwrap().point;
        assert_eq!(bits(&point), joint.point.row(c).iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }
    let order = [2, 0, 1];
    let permuted = Tensor::new(vec![3, 16], order.iter().flat_map(|&c| hist.row(c).to_vec()).collect()).unwrap();
    let p = model.generative.forecast(&permuted, 4, 0).unwrap().point;
    for (r, &c) in order.iter().enumerate() {
        assert_eq!(p.row(r), joint.point.row(c));
    }
}

#[test]
fn latent_export_has_one_row_per_step() {
    let model = StoxModel::new(&tiny_config(), 19).unwrap();
    let data = sines(1, 24, 1);
    let batch = TrainBatch::new(&model, &[data.row(0)], Some(&[1])).unwrap();
    let settings = LossSettings {
        beta: 1.0,
        kl_direction: KlDirection::Paper,
    };
    let dump = |dir: &std::path::Path| {
        let tape = Tape::new();
        let gb = model.generative.store().bind_frozen(&tape);
        let ib = model.inference.store().bind_frozen(&tape);
        let out = elbo_objective(&model, &gb, &ib, &batch, settings).unwrap();
        export_latents(dir, &out.generative, &out.posterior, 0).unwrap()
    };
    let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let files = dump(d1.path());
    let again = dump(d2.path());
    assert_eq!(files.len(), 8);
    for (f, g) in files.iter().zip(&again) {
        assert_eq!(std::fs::read(f).unwrap(), std::fs::read(g).unwrap());
        let (head, rows) = read_numeric_csv(f).unwrap();
        assert_eq!(rows.len(), 4, "{}", f.display());
        let name = f.file_stem().unwrap().to_str().unwrap();
        let width = if name.contains("_z_") { 2 } else { 4 };
        assert_eq!(head.len(), width, "{name}");
    }

    // Prior pass for comparison: also four steps.
    let tape = Tape::new();
    let gb = model.generative.store().bind_frozen(&tape);
    let trace = model.generative.run(&gb, &batch.gen_patches, LatentSource::Prior(None)).unwrap();
    assert_eq!(trace.latents.len(), 4);
}

#[test]
fn default_geometry_has_seventeen_windows() {
    assert_eq!(patch_count(336, 96, 56, 24).unwrap(), 17);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]
    #[test]
    fn patch_count_matches_ceiling_formula(
        p in 1usize..=128, s_frac in 0.0f64..1.0, l in 1usize..400, t in 1usize..200,
    ) {
        let s = 1 + ((p - 1) as f64 * s_frac) as usize;
        prop_assume!(l + t >= p);
        let n = patch_count(l, t, p, s).unwrap();
        prop_assert_eq!(n, (l + t + s - p).div_ceil(s));
    }
}
