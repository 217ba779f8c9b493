use std::sync::Arc;

use raaf_core::frames::{FrameGeometry, FrameLayout, ModalitySnapshot, Sample};
use raaf_core::kernel::Rng;
use raaf_core::model::{copy_rngs, BackwardOptions, Mode, ModelConfig, RaafModel};
use raaf_core::Error;

fn geometry(rows: usize) -> FrameGeometry {
    let labels: Arc<[String]> = (0..rows).map(|i| format!("r{i}")).collect::<Vec<_>>().into();
    FrameGeometry::new(FrameLayout::Activity, labels).unwrap()
}

fn random_sample(geo: &FrameGeometry, frames: usize, label: usize, rng: &mut Rng) -> Sample {
    let frames = (0..frames)
        .map(|f| {
            let rows = (0..geo.n_rows()).map(|_| [rng.normal(), rng.normal(), rng.normal()]).collect();
            let snap = ModalitySnapshot::new(rows, geo.row_labels().clone()).unwrap();
            geo.render(&snap, f).unwrap()
        })
        .collect();
    Sample {
        frames,
        label,
        subject_id: "s".into(),
    }
}

fn tiny(classes: usize) -> ModelConfig {
    let mut cfg = ModelConfig::new(11, 9, 2, classes);
    cfg.glimpses = 3;
    cfg.copies = 3;
    cfg.conv_channels = [2, 2];
    cfg.attention_hidden = 8;
    cfg.frame_hidden = 6;
    cfg.glimpse.branch_dim = 5;
    cfg.glimpse.glimpse_dim = 7;
    cfg.glimpse.retina.height = 4;
    cfg.glimpse.retina.width = 2;
    cfg
}

#[test]
fn trace_completeness_and_simplex() {
    let mut rng = Rng::new(1);
    let cfg = tiny(3);
    let model = RaafModel::new(cfg.clone(), &mut rng).unwrap();
    let sample = random_sample(&geometry(5), 2, 1, &mut rng);
    let trace = model.forward_seeded(&sample, 9, Mode::Train).unwrap();
    assert_eq!(trace.copies.len(), cfg.copies);
    for c in &trace.copies {
        assert_eq!(c.locations.len(), cfg.frames * cfg.glimpses);
        assert_eq!(c.actions.len(), cfg.frames);
        assert!(c.locations.iter().all(|r| r.log_density.is_finite()));
        for r in c.locations.iter().filter(|r| r.is_policy()) {
            let m = r.mean.unwrap();
            assert!(m.row.abs() < 1.0 && m.col.abs() < 1.0);
        }
        assert!(c.reward == 0.0 || c.reward == 1.0);
    }
    assert!((trace.probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    assert_eq!(trace.conv_frames()[0].shape(), &[11, 9]);
}

#[test]
fn identical_copies_average_to_one_copy() {
    let mut rng = Rng::new(2);
    let model = RaafModel::new(tiny(2), &mut rng).unwrap();
    let sample = random_sample(&geometry(5), 2, 0, &mut rng);
    let mut one = vec![Rng::with_stream(5, 0)];
    let mut three = vec![Rng::with_stream(5, 0); 3];
    let a = model.forward_sample(&sample, &mut one, Mode::Eval).unwrap();
    let b = model.forward_sample(&sample, &mut three, Mode::Eval).unwrap();
    assert_eq!(a.prediction, b.prediction);
    for (x, y) in a.probs.iter().zip(&b.probs) {
        assert!((x - y).abs() < 1e-15);
    }
}

#[test]
fn seed_determines_everything() {
    let mut rng = Rng::new(3);
    let model = RaafModel::new(tiny(3), &mut rng).unwrap();
    let sample = random_sample(&geometry(5), 2, 2, &mut rng);
    let a = model.forward_seeded(&sample, 11, Mode::Train).unwrap();
    let b = model.forward_seeded(&sample, 11, Mode::Train).unwrap();
    assert_eq!(a.probs, b.probs);
    for (x, y) in a.copies.iter().zip(&b.copies) {
        assert_eq!(x.locations, y.locations);
    }
    let c = model.forward_seeded(&sample, 12, Mode::Train).unwrap();
    assert_ne!(a.copies[0].locations, c.copies[0].locations);
}

#[test]
fn backward_requires_training_trace() {
    let mut rng = Rng::new(4);
    let mut model = RaafModel::new(tiny(2), &mut rng).unwrap();
    let sample = random_sample(&geometry(5), 2, 0, &mut rng);
    let trace = model.forward_seeded(&sample, 1, Mode::Eval).unwrap();
    let opts = BackwardOptions {
        scale: 1.0,
        baseline: 0.0,
        reinforce: true,
    };
    assert!(matches!(model.backward(&trace, &opts), Err(Error::State(_))));
}

#[test]
fn zero_rewards_leave_location_head_untouched() {
    let mut rng = Rng::new(5);
    let mut model = RaafModel::new(tiny(3), &mut rng).unwrap();
    let sample = random_sample(&geometry(5), 2, 1, &mut rng);
    let mut trace = model.forward_seeded(&sample, 2, Mode::Train).unwrap();
    for c in &mut trace.copies {
        c.reward = 0.0;
    }
    let opts = BackwardOptions {
        scale: 1.0,
        baseline: 0.0,
        reinforce: true,
    };
    model.backward(&trace, &opts).unwrap();
    assert!(model.loc_head.weight.grad.data().iter().all(|&g| g == 0.0));
    assert!(model.loc_head.bias.grad.data().iter().all(|&g| g == 0.0));
    assert!(model.class_head.weight.grad.l2_norm() > 0.0);

    model.zero_grad();
    for c in &mut trace.copies {
        c.reward = 1.0;
    }
    model.backward(&trace, &opts).unwrap();
    assert!(model.loc_head.weight.grad.l2_norm() > 0.0);
}

#[test]
fn wrong_frame_count_is_dimension_error() {
    let mut rng = Rng::new(6);
    let model = RaafModel::new(tiny(2), &mut rng).unwrap();
    let sample = random_sample(&geometry(5), 3, 0, &mut rng);
    assert!(matches!(model.forward_seeded(&sample, 1, Mode::Eval), Err(Error::Dimension(_))));
}

#[test]
fn checkpoint_round_trip() {
    let mut rng = Rng::new(7);
    let model = RaafModel::new(tiny(2), &mut rng).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    model.save(&path).unwrap();
    let back = RaafModel::load(&path).unwrap();
    assert_eq!(back.config(), model.config());
    for (a, b) in back.params().iter().zip(model.params()) {
        assert_eq!(a.value, b.value);
    }
    let sample = random_sample(&geometry(5), 2, 0, &mut rng);
    let p = model.forward_sample(&sample, &mut copy_rngs(3, 2), Mode::Eval).unwrap();
    let q = back.forward_sample(&sample, &mut copy_rngs(3, 2), Mode::Eval).unwrap();
    assert_eq!(p.probs, q.probs);
}

#[test]
#[ignore]
fn default_size_timing() {
    let mut rng = Rng::new(8);
    let mut model = RaafModel::new(ModelConfig::new(79, 9, 5, 6), &mut rng).unwrap();
    let sample = random_sample(&geometry(13), 5, 0, &mut rng);
    let t = std::time::Instant::now();
    let trace = model.forward_seeded(&sample, 1, Mode::Train).unwrap();
    eprintln!("forward {:?} params {}", t.elapsed(), model.parameter_count());
    let t = std::time::Instant::now();
    model
        .backward(&trace, &BackwardOptions { scale: 1.0, baseline: 0.0, reinforce: true })
        .unwrap();
    eprintln!("backward {:?}", t.elapsed());
}
