use super::Model;
use crate::blocks::ParamStore;
use crate::data::EXTERNAL_WIDTH;
use crate::error::Result;
use crate::rng::Rng;
use crate::tensor::{gradcheck_indices, GradcheckReport, Step, Tensor};

/// Picks `k` (parameter, element) pairs: one element of every parameter
/// tensor first (as far as `k` allows), then uniformly over all elements.
pub fn sample_params(store: &ParamStore<f32>, k: usize, rng: &mut Rng) -> Vec<(usize, usize)> {
    let sizes: Vec<usize> = store.params().iter().map(|p| p.value.numel()).collect();
    let mut tensors: Vec<usize> = (0..sizes.len()).collect();
    rng.shuffle(&mut tensors);
    let mut picks: Vec<(usize, usize)> = tensors.iter().take(k).map(|&i| (i, rng.below(sizes[i]))).collect();
    let total: usize = sizes.iter().sum();
    while picks.len() < k.min(total) {
        let mut flat = rng.below(total);
        let mut i = 0;
        while flat >= sizes[i] {
            flat -= sizes[i];
            i += 1;
        }
        if !picks.contains(&(i, flat)) {
            picks.push((i, flat));
        }
    }
    picks
}

/// Finite-difference check of the full network's MSE loss in 64-bit, with
/// batch normalization in training mode on a random batch of two samples.
pub fn gradcheck_model(model: &Model, samples: usize, seed: u64, step: Step) -> Result<GradcheckReport> {
    let c = &model.config;
    let mut rng = Rng::new(seed);
    let batch = 2;
    let [n, m] = c.grid;
    let x = Tensor::<f64>::from_fn([batch, c.closeness, n, m, 2], |_| rng.uniform(-1.0, 1.0));
    let e = Tensor::<f64>::from_fn([batch, EXTERNAL_WIDTH], |_| rng.uniform(0.0, 1.0));
    let y = Tensor::<f64>::from_fn([batch, n, m, 2], |_| rng.uniform(-1.0, 1.0));
    let store: ParamStore<f64> = model.store.cast();
    let inputs: Vec<Tensor<f64>> = store.params().iter().map(|p| p.value.clone()).collect();
    let picks = sample_params(&model.store, samples, &mut rng);
    gradcheck_indices(
        |tape, vars| {
            let xv = tape.constant(x.clone());
            let ev = tape.constant(e.clone());
            let yv = tape.constant(y.clone());
            let f = model.forward(tape, &store, vars, xv, ev, true)?;
            tape.mse(f.output, yv)
        },
        &inputs,
        &picks,
        step,
    )
}
