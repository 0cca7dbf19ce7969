mod common;

use common::gradients::{self, TOLERANCE};
use skytemp::nn::gradcheck::GradCheckReport;
use skytemp::nn::Direction;

fn assert_passes(name: &str, report: &GradCheckReport, min_checked: usize) {
    assert!(report.checked >= min_checked, "{name}: only {} coordinates checked: {report:?}", report.checked);
    assert!(report.max_rel_error < TOLERANCE, "{name}: {report:?}");
}

#[test]
fn dense_layer() {
    assert_passes("dense", &gradients::dense(), 11);
}

#[test]
fn convolution() {
    let r = gradients::conv();
    assert_passes("conv", &r, r.checked.max(1));
    assert_eq!(r.skipped_kinks, 0);
}

#[test]
fn max_pooling() {
    assert_passes("maxpool", &gradients::maxpool(), 40);
}

#[test]
fn softmax_with_cross_entropy() {
    let (fused, chained) = gradients::softmax_cross_entropy();
    assert_passes("fused", &fused, 70);
    assert_passes("chained", &chained, 70);
}

#[test]
fn lstm_unrolled() {
    assert_passes("lstm", &gradients::lstm_cell(), 100);
}

#[test]
fn full_cnn() {
    let r = gradients::cnn(200);
    assert_passes("cnn", &r, 180);
}

#[test]
fn sequence_unidirectional() {
    let r = gradients::sequence(Direction::Uni, 200);
    assert_passes("uni", &r, 180);
}

#[test]
fn sequence_bidirectional() {
    let r = gradients::sequence(Direction::Bi, 200);
    assert_passes("bi", &r, 180);
}
