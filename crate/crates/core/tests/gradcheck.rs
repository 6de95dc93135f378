use musalign::align::LossWeights;
use musalign::corpus::GenreSequence;
use musalign::model::{Batch, Model, ModelConfig, ModelKind};
use musalign::nn::{AudioConfig, CfEncoderConfig, GenreConfig, Mode, Module};
use musalign::rng::Rng;
use ndarray::Array2;
use rand::{Rng as _, SeedableRng};

fn reduced_config() -> ModelConfig {
    ModelConfig {
        audio: AudioConfig {
            frames: 16,
            bands: 8,
            channels: vec![2, 3],
            pools: vec![(2, 2), (2, 2)],
            hidden: 6,
            dim: 8,
            dropout: 0.5,
        },
        genre: GenreConfig {
            input_dim: 6,
            dim: 8,
            heads: 4,
            dropout: 0.5,
        },
        cf: CfEncoderConfig {
            input_dim: 5,
            hidden: 6,
            dim: 8,
            dropout: 0.5,
        },
        genre_vocab: 7,
    }
}

fn batch(rng: &mut Rng, m: usize) -> Batch {
    let audio = (0..m)
        .map(|_| Array2::from_shape_simple_fn((1, 16 * 8), || rng.random_range(0.0..1.0)))
        .collect();
    let genre = (0..m)
        .map(|i| {
            let vectors = Array2::from_shape_simple_fn((4, 6), || rng.random_range(-1.0..1.0));
            let mask = (0..4).map(|r| r <= i % 4).collect();
            GenreSequence { vectors, mask }
        })
        .collect();
    let cf = Array2::from_shape_simple_fn((m, 5), || rng.random_range(0.0..0.5));
    let genre_targets =
        Array2::from_shape_fn((m, 7), |(i, g)| f64::from(u8::from((i + g) % 3 == 0)));
    Batch {
        audio,
        genre: Some(genre),
        cf: Some(cf),
        genre_targets: Some(genre_targets),
    }
}

struct GradCheck {
    /// `|a - n| / |n|` over the concatenated gradient.
    global: f64,
    /// Worst per-tensor relative error among tensors with a non-vanishing gradient.
    worst_tensor: (String, f64),
    /// Largest absolute error among tensors whose gradient vanishes (biases
    /// feeding a normalization layer).
    vanishing_abs: f64,
}

fn check(kind: ModelKind, seed: u64) -> GradCheck {
    let mut rng = Rng::seed_from_u64(seed);
    let model = Model::new(kind, reduced_config(), LossWeights::default(), &mut rng).unwrap();
    let b = batch(&mut rng, 3);
    let tau = 0.1;
    let loss_at = |m: &Model| {
        m.loss(&b, tau, Mode::Train, &mut Rng::seed_from_u64(99))
            .unwrap()
            .loss
            .total()
    };
    let (_, grad) = model
        .loss_grad(&b, tau, Mode::Train, &mut Rng::seed_from_u64(99))
        .unwrap();
    let analytic: Vec<(String, Vec<f64>, bool)> = grad
        .params()
        .into_iter()
        .map(|p| (p.name, p.data.to_vec(), p.trainable))
        .collect();
    let h = 1e-6;
    let mut out = GradCheck {
        global: 0.0,
        worst_tensor: (String::new(), 0.0),
        vanishing_abs: 0.0,
    };
    let (mut diff_sq, mut num_sq) = (0.0, 0.0);
    for (k, (name, a, trainable)) in analytic.iter().enumerate() {
        if !trainable {
            continue;
        }
        let mut numeric = vec![0.0; a.len()];
        for (i, n) in numeric.iter_mut().enumerate() {
            let mut plus = model.clone();
            plus.params_mut()[k].data[i] += h;
            let mut minus = model.clone();
            minus.params_mut()[k].data[i] -= h;
            *n = (loss_at(&plus) - loss_at(&minus)) / (2.0 * h);
        }
        let d: f64 = a.iter().zip(&numeric).map(|(x, y)| (x - y).powi(2)).sum();
        let nn: f64 = numeric.iter().map(|x| x * x).sum();
        diff_sq += d;
        num_sq += nn;
        if nn.sqrt() > 1e-6 {
            let rel = d.sqrt() / nn.sqrt();
            if rel > out.worst_tensor.1 {
                out.worst_tensor = (name.clone(), rel);
            }
        } else {
            out.vanishing_abs = out.vanishing_abs.max(d.sqrt());
        }
    }
    out.global = diff_sq.sqrt() / num_sq.sqrt();
    out
}

#[test]
fn full_model_gradients_match_finite_differences() {
    for kind in ModelKind::ALL {
        let c = check(kind, 1);
        assert!(
            c.global < 1e-4,
            "{kind}: global relative error {:e}",
            c.global
        );
        assert!(
            c.worst_tensor.1 < 1e-4,
            "{kind}: {} relative error {:e}",
            c.worst_tensor.0,
            c.worst_tensor.1
        );
        assert!(
            c.vanishing_abs < 1e-6,
            "{kind}: vanishing-gradient error {:e}",
            c.vanishing_abs
        );
    }
}
