mod common;

use common::rand_tensor;
use stflow_core::blocks::{bind, Ctx, ParamStore};
use stflow_core::data::EXTERNAL_WIDTH;
use stflow_core::model::{checkpoint, Variant};
use stflow_core::{Error, Model, ModelConfig, Rng, Tape, Tensor};

fn inputs(cfg: &ModelConfig, batch: usize, seed: u64) -> (Tensor<f32>, Tensor<f32>) {
    let mut rng = Rng::new(seed);
    let [n, m] = cfg.grid;
    let x = rand_tensor(&[batch, cfg.closeness, n, m, 2], &mut rng);
    let e = Tensor::from_fn([batch, EXTERNAL_WIDTH], |_| rng.uniform(0.0, 1.0) as f32);
    (x, e)
}

/// Copies every parameter of `src` whose name also exists in `dst`.
fn copy_shared(src: &ParamStore<f32>, dst: &mut ParamStore<f32>) -> usize {
    let mut n = 0;
    for p in dst.params_mut() {
        if let Some(s) = src.params().iter().find(|s| s.name == p.name) {
            p.value = s.value.clone();
            n += 1;
        }
    }
    n
}

fn set(store: &mut ParamStore<f32>, name: &str, v: f32) {
    let id = store.find_param(name).unwrap_or_else(|| panic!("no parameter {}", name));
    for x in store.param_mut(id).data_mut() {
        *x = v;
    }
}

/// Perturbs the parameters so zero biases and unit gammas do not hide anything.
fn jitter(model: &mut Model, seed: u64) {
    let mut rng = Rng::new(seed);
    for p in model.store.params_mut() {
        for v in p.value.data_mut() {
            *v += rng.uniform(-0.05, 0.05) as f32;
        }
    }
}

#[test]
fn encoder_maps_zero_input_to_zero_and_has_the_latent_shape() {
    let cfg = ModelConfig::bike_nyc();
    let model = Model::build(&cfg).unwrap();
    let x = Tensor::zeros([1, 4, 16, 8, 2]);
    let e = Tensor::zeros([1, EXTERNAL_WIDTH]);
    let mut tape = Tape::<f32>::new();
    let vars = bind(&mut tape, &model.store, false);
    let (xv, ev) = (tape.constant(x), tape.constant(e));
    let f = model.forward(&mut tape, &model.store, &vars, xv, ev, false).unwrap();
    assert_eq!(tape.shape(f.encoded), [1, 4, 4, 2, 16]);
    assert_eq!(tape.shape(f.output), [1, 16, 8, 2]);
    // zero biases, zero running means: every encoder activation is exactly 0
    assert!(tape.value(f.encoded).data().iter().all(|&v| v == 0.0));
}

#[test]
fn build_is_deterministic_per_seed() {
    let cfg = ModelConfig::tiny();
    let a = Model::build(&cfg).unwrap();
    let b = Model::build(&cfg).unwrap();
    assert_eq!(a.store.params(), b.store.params());
    let c = Model::build(&ModelConfig { seed: 1, ..cfg }).unwrap();
    assert_ne!(a.store.params(), c.store.params());
}

#[test]
fn no_attention_equals_attention_saturated_at_one() {
    let base = ModelConfig::tiny();
    let mut with = Model::build(&base).unwrap();
    jitter(&mut with, 1);
    let mut without = Model::build(&Variant::NoAtt.apply(&base)).unwrap();
    let shared = copy_shared(&with.store, &mut without.store);
    assert_eq!(shared, without.store.params().len());
    // zero MLP/conv weights and a large bias drive both sigmoids to exactly 1
    for name in ["channel_attention.fc2.w", "spatial_attention.conv_max.w", "spatial_attention.conv_avg.w"] {
        set(&mut with.store, &format!("decoder.{}", name), 0.0);
    }
    for name in ["channel_attention.fc2.b", "spatial_attention.conv_max.b", "spatial_attention.conv_avg.b"] {
        set(&mut with.store, &format!("decoder.{}", name), 100.0);
    }
    let (x, e) = inputs(&base, 3, 2);
    assert_eq!(with.predict(&x, &e).unwrap(), without.predict(&x, &e).unwrap());

    // and the attention path does change the output when not saturated
    set(&mut with.store, "decoder.channel_attention.fc2.b", 0.0);
    assert_ne!(with.predict(&x, &e).unwrap(), without.predict(&x, &e).unwrap());
}

#[test]
fn no_external_ignores_the_external_vector() {
    let base = ModelConfig::tiny();
    let noext = Model::build(&Variant::NoExt.apply(&base)).unwrap();
    assert!(noext.store.params().iter().all(|p| !p.name.starts_with("external.")));
    let (x, e1) = inputs(&base, 2, 3);
    let (_, e2) = inputs(&base, 2, 4);
    assert_eq!(noext.predict(&x, &e1).unwrap(), noext.predict(&x, &e2).unwrap());
    let mut full = Model::build(&base).unwrap();
    jitter(&mut full, 5);
    assert_ne!(full.predict(&x, &e1).unwrap(), full.predict(&x, &e2).unwrap());
}

#[test]
fn no_long_skip_drops_the_encoder_to_decoder_path() {
    let base = ModelConfig::tiny();
    let mut with = Model::build(&base).unwrap();
    jitter(&mut with, 6);
    let mut without = Model::build(&Variant::NoLSC.apply(&base)).unwrap();
    copy_shared(&with.store, &mut without.store);
    let (x, e) = inputs(&base, 2, 7);
    assert_ne!(with.predict(&x, &e).unwrap(), without.predict(&x, &e).unwrap());
}

#[test]
fn closeness_variants_build_and_run() {
    for v in [Variant::N3, Variant::N5] {
        let cfg = v.apply(&ModelConfig::tiny());
        let model = Model::build(&cfg).unwrap();
        let (x, e) = inputs(&cfg, 2, 8);
        assert_eq!(model.predict(&x, &e).unwrap().shape(), [2, 8, 4, 2]);
    }
    let wrong = inputs(&Variant::N5.apply(&ModelConfig::tiny()), 2, 8);
    let m3 = Model::build(&Variant::N3.apply(&ModelConfig::tiny())).unwrap();
    assert!(matches!(m3.predict(&wrong.0, &wrong.1), Err(Error::Shape { .. })));
}

#[test]
fn predictions_lie_in_the_normalized_range() {
    let mut m = Model::build(&ModelConfig::tiny()).unwrap();
    jitter(&mut m, 9);
    let (x, e) = inputs(&m.config, 4, 10);
    let y = m.predict(&x, &e).unwrap();
    assert!(y.data().iter().all(|v| v.abs() <= 1.0));
}

#[test]
fn predict_matches_a_single_eval_forward() {
    let mut m = Model::build(&ModelConfig::tiny()).unwrap();
    jitter(&mut m, 11);
    let (x, e) = inputs(&m.config, 11, 12);
    let batched = m.predict(&x, &e).unwrap();
    let mut tape = Tape::<f32>::new();
    let vars = bind(&mut tape, &m.store, false);
    let (xv, ev) = (tape.constant(x), tape.constant(e));
    let f = m.forward(&mut tape, &m.store, &vars, xv, ev, false).unwrap();
    let d = batched.max_abs_diff(tape.value(f.output));
    assert!(d < 1e-6, "{}", d);
}

#[test]
fn summary_rows_add_up_to_the_totals() {
    let m = Model::build(&ModelConfig::bike_nyc()).unwrap();
    let s = m.summary().unwrap();
    assert_eq!(s.rows.iter().map(|r| r.params).sum::<usize>(), m.num_params());
    assert_eq!(s.total_params, m.num_params());
    assert_eq!(s.rows.iter().map(|r| r.flops).sum::<u64>(), s.total_flops);
    let blocks: Vec<String> = s.block_totals().into_iter().map(|b| b.0).collect();
    assert_eq!(blocks, ["encoder", "cascade", "external", "fusion", "decoder"]);
    let csv = s.to_csv();
    assert_eq!(csv.lines().count(), s.rows.len() + 2);
    assert!(csv.ends_with(&format!("total,,{},{}\n", s.total_params, s.total_flops)));
}

#[test]
fn trace_is_consistent_with_batch_size() {
    let m = Model::build(&ModelConfig::tiny()).unwrap();
    let (t1, _) = m.trace(1, false).unwrap();
    let (t3, _) = m.trace(3, false).unwrap();
    assert_eq!(t3.total_flops(), 3 * t1.total_flops());
}

#[test]
fn checkpoint_round_trip_preserves_everything() {
    let mut m = Model::build(&ModelConfig::tiny()).unwrap();
    jitter(&mut m, 13);
    for b in m.store.buffers_mut() {
        for (i, v) in b.value.data_mut().iter_mut().enumerate() {
            *v = 0.5 + i as f32 * 0.01;
        }
    }
    let extra = serde_json::json!({ "note": "x", "n": 3 });
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    checkpoint::save(&m, &extra, &path).unwrap();
    let back = checkpoint::load_for(&path, &m.config).unwrap();
    assert_eq!(back.extra, extra);
    assert_eq!(back.model.store.params(), m.store.params());
    assert_eq!(back.model.store.buffers(), m.store.buffers());
    let (x, e) = inputs(&m.config, 2, 14);
    assert_eq!(back.model.predict(&x, &e).unwrap(), m.predict(&x, &e).unwrap());
    assert_eq!(checkpoint::encode(&back.model, &extra), std::fs::read(&path).unwrap());
}

#[test]
fn checkpoint_rejects_other_configs_and_corruption() {
    let m = Model::build(&ModelConfig::tiny()).unwrap();
    let bytes = checkpoint::encode(&m, &serde_json::Value::Null);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    std::fs::write(&path, &bytes).unwrap();
    let other = Variant::NoAtt.apply(&m.config);
    let err = checkpoint::load_for(&path, &other).unwrap_err();
    assert!(matches!(err, Error::Checkpoint(_)), "{err}");
    // the seed is not part of the architecture
    assert!(checkpoint::load_for(&path, &ModelConfig { seed: 99, ..m.config.clone() }).is_ok());

    let mut bad = bytes.clone();
    let mid = bad.len() / 2;
    bad[mid] ^= 1;
    assert!(matches!(checkpoint::decode(&bad), Err(Error::Checkpoint(_))));
    assert!(matches!(checkpoint::decode(&bytes[..20]), Err(Error::Checkpoint(_))));
    assert!(matches!(checkpoint::decode(b"not a checkpoint at all, clearly......"), Err(Error::Checkpoint(_))));
}

#[test]
fn eval_mode_uses_running_statistics() {
    let mut m = Model::build(&ModelConfig::tiny()).unwrap();
    let (x, e) = inputs(&m.config, 2, 15);
    let before = m.predict(&x, &e).unwrap();
    let id = m.store.buffers().iter().position(|b| b.name == "encoder.input.bn.running_mean").unwrap();
    for v in m.store.buffers_mut().nth(id).unwrap().value.data_mut() {
        *v = 0.3;
    }
    assert_ne!(m.predict(&x, &e).unwrap(), before);
}

#[test]
fn train_mode_batch_statistics_produce_updates() {
    let m = Model::build(&ModelConfig::tiny()).unwrap();
    let (x, e) = inputs(&m.config, 2, 16);
    let mut tape = Tape::<f32>::new();
    let vars = bind(&mut tape, &m.store, true);
    let (xv, ev) = (tape.constant(x.clone()), tape.constant(e.clone()));
    let mut cx = Ctx::new(&mut tape, &vars, &m.store, true);
    let (out, _) = m.forward_ctx(&mut cx, xv, ev).unwrap();
    assert_eq!(cx.bn_updates.len(), m.store.buffers().len() / 2);
    let _ = out;

    // batch of one cannot be normalized with batch statistics
    let (x1, e1) = inputs(&m.config, 1, 16);
    let mut tape = Tape::<f32>::new();
    let vars = bind(&mut tape, &m.store, true);
    let (xv, ev) = (tape.constant(x1), tape.constant(e1));
    assert!(m.forward(&mut tape, &m.store, &vars, xv, ev, true).is_err());
}
