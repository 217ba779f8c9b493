use raaf_core::gradcheck::{self, relative_error};

fn assert_passes(r: gradcheck::LayerReport) {
    println!(
        "{}: max rel err {:.3e} over {} coords ({} kinks skipped)",
        r.layer, r.max_rel_error, r.checked, r.skipped_kinks
    );
    assert!(r.passed(), "{r:?}");
}

#[test]
fn relative_error_floors_small_gradients() {
    assert_eq!(relative_error(1.0, 1.0), 0.0);
    assert!((relative_error(2.0, 1.0) - 0.5).abs() < 1e-12);
    assert!((relative_error(1e-9, 0.0) - 1e-5).abs() < 1e-12);
}

#[test]
fn linear() {
    assert_passes(gradcheck::check_linear(100, 1).unwrap());
}

#[test]
fn relu() {
    assert_passes(gradcheck::check_relu(100, 2).unwrap());
}

#[test]
fn conv2d() {
    assert_passes(gradcheck::check_conv2d(100, 3).unwrap());
}

#[test]
fn maxpool() {
    assert_passes(gradcheck::check_maxpool(100, 4).unwrap());
}

#[test]
fn lstm_four_steps() {
    assert_passes(gradcheck::check_lstm(100, 5).unwrap());
}

#[test]
fn softmax_xent() {
    assert_passes(gradcheck::check_softmax_xent(100, 6).unwrap());
}

#[test]
fn glimpse_both_branches() {
    assert_passes(gradcheck::check_glimpse(100, 7).unwrap());
}

#[test]
fn encoder() {
    assert_passes(gradcheck::check_encoder(100, 8).unwrap());
}

#[test]
fn full_path_frozen_locations() {
    assert_passes(gradcheck::check_full_path(100, 9).unwrap());
}

#[test]
fn reinforce_surrogate() {
    assert_passes(gradcheck::check_reinforce_path(100, 10).unwrap());
}
