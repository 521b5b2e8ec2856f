use dedim::feature_store::LabeledFeatureSet;
use dedim::mixmatch::{train, train_supervised, MixMatchConfig, ToyModel};
use dedim::rng;
use dedim::sandbox::{build_run, ClusterLayout, RunData, SandboxConfig, Sources};

fn small_run(pct: u32) -> RunData {
    let layout = ClusterLayout::new(3, 4, 2).unwrap();
    let iod: LabeledFeatureSet = layout.sample(80, 0.8, 0.0, 20, "blobs").unwrap();
    let ood = layout.sample(80, 0.8, 6.0, 21, "far").unwrap().features;
    let config = SandboxConfig {
        s_uood: "far".into(),
        pct_uood: pct,
        n_l: 30,
        n_u: 90,
        n_test: 60,
        num_classes: 3,
        seed: 5,
        runs: 1,
        ..SandboxConfig::default()
    };
    build_run(&config, &Sources { iod, ood: Some(ood) }, 0).unwrap()
}

fn cfg() -> MixMatchConfig {
    MixMatchConfig { epochs: 4, hidden: 8, ..MixMatchConfig::default() }
}

#[test]
fn zero_learning_rate_keeps_the_initial_model() {
    let run = small_run(50);
    let config = MixMatchConfig { learning_rate: 0.0, weight_decay: 0.0, ..cfg() };
    let out = train(&run, &config, 11).unwrap();
    let initial = ToyModel::new(4, 8, 3, &mut rng::stream(11, 0));
    assert_eq!(out.model.as_ref().unwrap().params(), initial.params());
    assert!(out.epoch_accuracy.iter().all(|a| *a == out.initial_accuracy));
    assert_eq!(out.best_accuracy, out.initial_accuracy);
    assert_eq!(out.best_epoch, 0);
}

#[test]
fn training_is_deterministic() {
    let run = small_run(100);
    let a = train(&run, &cfg(), 3).unwrap();
    let b = train(&run, &cfg(), 3).unwrap();
    assert_eq!(a.epoch_accuracy, b.epoch_accuracy);
    assert_eq!(a.model.unwrap().params(), b.model.unwrap().params());
    let c = train(&run, &cfg(), 4).unwrap();
    assert_ne!(c.epoch_accuracy.len(), 0);
}

#[test]
fn outcome_shape() {
    let run = small_run(0);
    let out = train_supervised(&run, &cfg(), 1).unwrap();
    assert_eq!(out.epoch_accuracy.len(), 4);
    // one pass over the larger of the labelled and unlabelled sets per epoch
    assert_eq!(out.steps, 4 * 90usize.div_ceil(16));
    assert!((0.0..=1.0).contains(&out.best_accuracy));
    assert!(out.epoch_accuracy.iter().all(|a| *a <= out.best_accuracy));
}

#[test]
fn learning_improves_on_chance() {
    let run = small_run(0);
    let out = train(&run, &MixMatchConfig { epochs: 20, learning_rate: 2e-3, ..cfg() }, 2).unwrap();
    assert!(out.best_accuracy > 0.6, "best {}", out.best_accuracy);
}
