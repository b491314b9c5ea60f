//! Digit-scale training smoke test: a couple of epochs on 1,000 images must
//! produce finite losses and beat coin-flip classification comfortably.

use came::cotrain::{
    classification_accuracy, train, AugPolicy, HyperParams, OptimizerSpec,
};
use came::pipeline::synth_digits;

#[test]
fn two_epochs_on_a_thousand_digits_learns_something() {
    let set = synth_digits(1000, 42, "smoke");
    let hp = HyperParams {
        arch: "lenet5".to_string(),
        lambda: 0.001,
        tau: 0.07,
        batch_size: 50,
        epochs: 2,
        optimizer: OptimizerSpec::Adam { lr: 1e-3 },
        projection_dim: 32,
        seed: 0,
    };
    let (model, history) = train(&set, &hp, &AugPolicy::digits_default()).unwrap();
    assert_eq!(history.len(), 2);
    for metrics in &history {
        assert!(metrics.ce_loss.is_finite());
        assert!(metrics.nce_loss.is_finite());
    }
    let acc = classification_accuracy(&model, &set).unwrap();
    assert!(acc > 0.5, "post-smoke accuracy {acc}");
}
