#![allow(dead_code)]

use pnet::nn::{model_backward, model_forward, Mode, ModelConfig, ModelParams};
use pnet::tensor::{Init, SeededRng, Tensor};

/// Per-tensor relative error `‖a − n‖ / max(‖a‖, ‖n‖)` between analytic and
/// central-difference gradients of the full training loss.
pub struct GradCheck {
    pub names: Vec<String>,
    pub rel_errors: Vec<f64>,
}

impl GradCheck {
    pub fn max(&self) -> f64 {
        self.rel_errors.iter().copied().fold(0.0, f64::max)
    }
}

pub fn full_model_gradcheck(lambda: f64, seed: u64) -> GradCheck {
    let cfg = ModelConfig::miniature(3, 4);
    let mut rng = SeededRng::new(seed);
    let params = ModelParams::<f64>::init(&cfg, &mut rng).unwrap();
    let x = Tensor::<f64>::create(
        &[4, 1, 32, 64],
        Init::Gaussian {
            mean: 0.2,
            std: 0.3,
            rng: &mut rng,
        },
    )
    .unwrap();
    let subjects = [0usize, 2, 1, 2];
    let postures = [3usize, 0, 1, 2];
    let dropout_seed = seed ^ 0xD0;

    let loss = |p: &ModelParams<f64>| -> f64 {
        let mut drng = SeededRng::new(dropout_seed);
        let out = model_forward(&x, p, Mode::Train(&mut drng)).unwrap();
        let (_, l) = model_backward(p, out.cache().unwrap(), &subjects, &postures, lambda).unwrap();
        l.total
    };

    let mut drng = SeededRng::new(dropout_seed);
    let out = model_forward(&x, &params, Mode::Train(&mut drng)).unwrap();
    let (grads, _) =
        model_backward(&params, out.cache().unwrap(), &subjects, &postures, lambda).unwrap();

    let h = 1e-5;
    let names = params.trainable_names();
    let mut rel_errors = Vec::new();
    for (ti, analytic) in grads.tensors.iter().enumerate() {
        let mut diff2 = 0.0;
        let mut a2 = 0.0;
        let mut n2 = 0.0;
        for i in 0..analytic.len() {
            let mut plus = params.clone();
            plus.trainable_mut()[ti].data_mut()[i] += h;
            let mut minus = params.clone();
            minus.trainable_mut()[ti].data_mut()[i] -= h;
            let num = (loss(&plus) - loss(&minus)) / (2.0 * h);
            let a = analytic.data()[i];
            diff2 += (a - num).powi(2);
            a2 += a * a;
            n2 += num * num;
        }
        let denom = a2.sqrt().max(n2.sqrt()).max(1e-300);
        rel_errors.push(if a2 == 0.0 && n2 == 0.0 {
            0.0
        } else {
            diff2.sqrt() / denom
        });
    }
    GradCheck { names, rel_errors }
}
