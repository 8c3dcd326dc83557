use stflow_core::data::{generate, prepare, Prepared, SplitSpec, SynthSpec};
use stflow_core::model::checkpoint;
use stflow_core::par;
use stflow_core::trainer::{curve_csv, evaluate, normalized_rmse, run_replicas, train, TrainConfig};
use stflow_core::{ModelConfig, Variant};

fn data() -> Prepared {
    let ds = generate(&SynthSpec::new((8, 4), 4, 60), 2).unwrap();
    prepare(&ds, 3, &SplitSpec::TestDays(1)).unwrap()
}

fn small(epochs: usize) -> TrainConfig {
    TrainConfig {
        batch_size: 8,
        learning_rate: 1e-3,
        epochs,
        seeds: vec![0],
        ..TrainConfig::default()
    }
}

#[test]
fn identical_runs_are_byte_identical() {
    let d = data();
    let set = d.train.truncated(24);
    let a = train(&ModelConfig::tiny(), &set, &small(2)).unwrap();
    let b = train(&ModelConfig::tiny(), &set, &small(2)).unwrap();
    assert_eq!(curve_csv(&a.curve), curve_csv(&b.curve));
    let extra = serde_json::Value::Null;
    assert_eq!(checkpoint::encode(&a.model, &extra), checkpoint::encode(&b.model, &extra));

    let c = train(&ModelConfig { seed: 1, ..ModelConfig::tiny() }, &set, &small(2)).unwrap();
    assert_ne!(curve_csv(&a.curve), curve_csv(&c.curve));
}

#[test]
fn thread_count_does_not_change_the_result() {
    let d = data();
    let set = d.train.truncated(16);
    let one = par::with_threads(1, || train(&ModelConfig::tiny(), &set, &small(1)).unwrap());
    let four = par::with_threads(4, || train(&ModelConfig::tiny(), &set, &small(1)).unwrap());
    let extra = serde_json::Value::Null;
    assert_eq!(checkpoint::encode(&one.model, &extra), checkpoint::encode(&four.model, &extra));
}

#[test]
fn zero_learning_rate_leaves_weights_untouched() {
    let d = data();
    let cfg = TrainConfig {
        learning_rate: 0.0,
        ..small(1)
    };
    let before = stflow_core::Model::build(&ModelConfig::tiny()).unwrap();
    let after = train(&ModelConfig::tiny(), &d.train.truncated(16), &cfg).unwrap().model;
    assert_eq!(before.store.params(), after.store.params());
    // running statistics still follow the batches
    assert_ne!(before.store.buffers(), after.store.buffers());
}

#[test]
fn loss_goes_down_on_a_tiny_set() {
    let d = data();
    let set = d.train.truncated(16);
    let out = train(&ModelConfig::tiny(), &set, &small(30)).unwrap();
    let first = out.curve[0].loss;
    let last = out.curve.last().unwrap().loss;
    assert!(last < 0.5 * first, "{} -> {}", first, last);
    assert!(normalized_rmse(&out.model, &set).unwrap().is_finite());
}

#[test]
fn evaluate_has_no_side_effects() {
    let d = data();
    let out = train(&ModelConfig::tiny(), &d.train.truncated(16), &small(1)).unwrap();
    let snapshot = out.model.store.clone();
    let a = evaluate(&out.model, &d.test, &d.normalizer).unwrap();
    let b = evaluate(&out.model, &d.test, &d.normalizer).unwrap();
    assert_eq!(a, b);
    assert_eq!(out.model.store.params(), snapshot.params());
    assert_eq!(out.model.store.buffers(), snapshot.buffers());
}

#[test]
fn replicas_aggregate_per_seed_rows() {
    let mut d = data();
    d.train = d.train.truncated(16);
    let cfg = small(1);
    let (report, runs) = run_replicas(&ModelConfig::tiny(), &cfg, &d, &[5, 5]).unwrap();
    assert_eq!(report.rows.len(), 2);
    assert_eq!(report.std.rmse, 0.0);
    assert_eq!(runs[0].metrics, runs[1].metrics);
    let (report, _) = run_replicas(&ModelConfig::tiny(), &cfg, &d, &[1, 2, 3]).unwrap();
    assert_eq!(report.rows.iter().map(|r| r.0).collect::<Vec<_>>(), [1, 2, 3]);
    assert!(report.std.rmse > 0.0);
    assert!(report.to_csv().starts_with("seed,rmse,mape,ape\n1,"));
}

#[test]
fn too_small_batches_and_sets_are_rejected() {
    let d = data();
    let cfg = TrainConfig {
        batch_size: 1,
        ..small(1)
    };
    assert!(train(&ModelConfig::tiny(), &d.train, &cfg).is_err());
    assert!(train(&ModelConfig::tiny(), &d.train.truncated(1), &small(1)).is_err());
    let wrong_p = Variant::N5.apply(&ModelConfig::tiny());
    assert!(train(&wrong_p, &d.train.truncated(8), &small(1)).is_err());
}

#[test]
fn diverging_training_reports_a_numerical_error() {
    let d = data();
    let cfg = TrainConfig {
        learning_rate: 1e30,
        ..small(5)
    };
    match train(&ModelConfig::tiny(), &d.train.truncated(16), &cfg) {
        Err(stflow_core::Error::Numerical(msg)) => assert!(msg.contains("epoch"), "{msg}"),
        other => panic!("expected a numerical failure, got {:?}", other.map(|o| o.curve)),
    }
}
