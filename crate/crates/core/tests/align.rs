use musalign::align::{
    alignment_loss, cosine_sim, ntxent_loss, ntxent_loss_grad, Embeddings, LossWeights,
};
use musalign::rng::Rng;
use ndarray::Array2;
use proptest::prelude::*;
use rand::{Rng as _, SeedableRng};
use rand_distr::StandardNormal;

/// Literal evaluation: materialize all 2M candidates and sum per anchor.
fn brute_ntxent(a: &Array2<f64>, b: &Array2<f64>, tau: f64) -> f64 {
    let m = a.nrows();
    let zeta: Vec<Vec<f64>> = a
        .rows()
        .into_iter()
        .chain(b.rows())
        .map(|r| r.to_vec())
        .collect();
    let xi = |u: &[f64], v: &[f64]| (cosine_sim(u, v).unwrap() / tau).exp();
    let mut total = 0.0;
    for i in 0..m {
        let ai = a.row(i).to_vec();
        let num = xi(&ai, &b.row(i).to_vec());
        let den: f64 = (0..2 * m)
            .filter(|&k| k != i)
            .map(|k| xi(&ai, &zeta[k]))
            .sum();
        total += -(num / den).ln();
    }
    total
}

fn random(rng: &mut Rng, m: usize, d: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((m, d), || rng.sample(StandardNormal))
}

#[test]
fn matches_literal_evaluation_on_random_fixtures() {
    let mut rng = Rng::seed_from_u64(11);
    for _ in 0..100 {
        let m = rng.random_range(1..=5);
        let d = rng.random_range(2..=8);
        let tau = rng.random_range(0.05..1.0);
        let a = random(&mut rng, m, d);
        let b = random(&mut rng, m, d);
        let fast = ntxent_loss(&a, &b, tau).unwrap();
        let slow = brute_ntxent(&a, &b, tau);
        assert!(
            (fast - slow).abs() <= 1e-9 * slow.abs().max(1.0),
            "{fast} vs {slow}"
        );
    }
}

#[test]
fn gradient_matches_finite_differences() {
    let mut rng = Rng::seed_from_u64(5);
    let a = random(&mut rng, 4, 5);
    let b = random(&mut rng, 4, 5);
    let tau = 0.2;
    let (_, da, db) = ntxent_loss_grad(&a, &b, tau).unwrap();
    let h = 1e-6;
    for (x, grad, is_a) in [(&a, &da, true), (&b, &db, false)] {
        for idx in 0..x.len() {
            let (r, c) = (idx / x.ncols(), idx % x.ncols());
            let eval = |delta: f64| {
                let mut y = x.clone();
                y[[r, c]] += delta;
                if is_a {
                    ntxent_loss(&y, &b, tau).unwrap()
                } else {
                    ntxent_loss(&a, &y, tau).unwrap()
                }
            };
            let num = (eval(h) - eval(-h)) / (2.0 * h);
            assert!(
                (num - grad[[r, c]]).abs() < 1e-6,
                "{num} vs {}",
                grad[[r, c]]
            );
        }
    }
}

#[test]
fn loss_is_asymmetric() {
    let mut rng = Rng::seed_from_u64(8);
    let a = random(&mut rng, 4, 3);
    let b = random(&mut rng, 4, 3);
    let ab = ntxent_loss(&a, &b, 0.1).unwrap();
    let ba = ntxent_loss(&b, &a, 0.1).unwrap();
    assert!((ab - ba).abs() > 1e-6);
}

#[test]
fn random_unit_batches_concentrate_near_log_of_candidates() {
    let mut rng = Rng::seed_from_u64(2);
    let (m, d) = (64, 512);
    let a = random(&mut rng, m, d);
    let b = random(&mut rng, m, d);
    let per_anchor = ntxent_loss(&a, &b, 0.1).unwrap() / m as f64;
    let expected = ((2 * m - 1) as f64).ln();
    assert!(
        (per_anchor - expected).abs() <= 0.1 * expected,
        "{per_anchor} vs {expected}"
    );
}

#[test]
fn swapping_genre_and_cf_swaps_components() {
    let mut rng = Rng::seed_from_u64(3);
    let a = random(&mut rng, 6, 4);
    let g = random(&mut rng, 6, 4);
    let c = random(&mut rng, 6, 4);
    let w = LossWeights::default();
    let r1 = alignment_loss(
        Embeddings {
            audio: &a,
            genre: Some(&g),
            cf: Some(&c),
        },
        &w,
        0.1,
    )
    .unwrap();
    let r2 = alignment_loss(
        Embeddings {
            audio: &a,
            genre: Some(&c),
            cf: Some(&g),
        },
        &w,
        0.1,
    )
    .unwrap();
    assert!((r1.a2g - r2.a2p).abs() < 1e-12);
    assert!((r1.a2p - r2.a2g).abs() < 1e-12);
    assert!((r1.g2p - r2.g2p).abs() < 1e-12);
}

#[test]
fn symmetric_pair_and_total_composition() {
    let mut rng = Rng::seed_from_u64(4);
    let a = random(&mut rng, 5, 4);
    let g = random(&mut rng, 5, 4);
    let c = random(&mut rng, 5, 4);
    let w = LossWeights {
        a2g: 0.5,
        a2p: 2.0,
        g2p: 1.5,
    };
    let r = alignment_loss(
        Embeddings {
            audio: &a,
            genre: Some(&g),
            cf: Some(&c),
        },
        &w,
        0.1,
    )
    .unwrap();
    let a2g = ntxent_loss(&a, &g, 0.1).unwrap() + ntxent_loss(&g, &a, 0.1).unwrap();
    assert!((r.a2g - a2g).abs() < 1e-12);
    assert!((r.total - (0.5 * r.a2g + 2.0 * r.a2p + 1.5 * r.g2p)).abs() < 1e-6);
}

proptest! {
    #[test]
    fn nonnegative_and_scale_invariant(
        seed in any::<u64>(),
        m in 1usize..6,
        d in 2usize..6,
        scale in 0.01f64..100.0,
    ) {
        let mut rng = Rng::seed_from_u64(seed);
        let a = random(&mut rng, m, d);
        let b = random(&mut rng, m, d);
        let l = ntxent_loss(&a, &b, 0.1).unwrap();
        prop_assert!(l >= -1e-12);
        let ls = ntxent_loss(&(&a * scale), &(&b * scale), 0.1).unwrap();
        prop_assert!((l - ls).abs() <= 1e-9 * l.abs().max(1.0));
    }
}
