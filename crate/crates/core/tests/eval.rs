use std::collections::HashSet;

use musalign::corpus::{
    generate_synthetic_corpus, stratified_split, Corpus, GenreEmbeddingTable, Playlist,
    SplitAssignment, TrackRecord, MEL_BANDS,
};
use musalign::eval::*;
use musalign::nn::AudioConfig;
use musalign::nn::AudioEncoder;
use musalign::rng::Rng;
use ndarray::{Array1, Array2, ArrayView1};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng as _, SeedableRng};
use rand_distr::StandardNormal;

fn brute_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for i in 0..scores.len() {
        for j in 0..scores.len() {
            if labels[i] && !labels[j] {
                pairs += 1.0;
                wins += if scores[i] > scores[j] {
                    1.0
                } else if scores[i] == scores[j] {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    wins / pairs
}

/// Positions (1-based) of relevant items; both metrics depend only on these.
fn hit_positions(pred: &[u32], rel: &HashSet<u32>, k: usize) -> Vec<usize> {
    pred.iter()
        .take(k)
        .enumerate()
        .filter(|(_, id)| rel.contains(id))
        .map(|(i, _)| i + 1)
        .collect()
}

fn brute_ndcg(pred: &[u32], rel: &HashSet<u32>, k: usize) -> f64 {
    let dcg: f64 = hit_positions(pred, rel, k)
        .iter()
        .map(|&p| 1.0 / (p as f64 + 1.0).log2())
        .sum();
    let mut idcg = 0.0;
    for p in 1..=rel.len().min(k) {
        idcg += 1.0 / (p as f64 + 1.0).log2();
    }
    dcg / idcg
}

fn brute_ap(pred: &[u32], rel: &HashSet<u32>, k: usize) -> f64 {
    let mut s = 0.0;
    for i in 1..=pred.len().min(k) {
        if rel.contains(&pred[i - 1]) {
            let hits = pred[..i].iter().filter(|id| rel.contains(id)).count();
            s += hits as f64 / i as f64;
        }
    }
    s / rel.len() as f64
}

proptest! {
    #[test]
    fn auc_equals_pairwise_count(
        raw in proptest::collection::vec((0u8..6, any::<bool>()), 2..100),
    ) {
        let scores: Vec<f64> = raw.iter().map(|r| f64::from(r.0) / 5.0).collect();
        let labels: Vec<bool> = raw.iter().map(|r| r.1).collect();
        prop_assume!(labels.iter().any(|&l| l) && labels.iter().any(|&l| !l));
        prop_assert_eq!(roc_auc(&scores, &labels).unwrap(), brute_auc(&scores, &labels));
    }

    #[test]
    fn ranking_metrics_equal_brute_force(
        n in 1usize..100,
        seed in any::<u64>(),
        n_rel in 1usize..20,
        k in 1usize..120,
    ) {
        let mut rng = Rng::seed_from_u64(seed);
        let mut pred: Vec<u32> = (0..n as u32).collect();
        pred.shuffle(&mut rng);
        let rel: HashSet<u32> = (0..n_rel).map(|_| rng.random_range(0..150u32)).collect();
        prop_assert!((ndcg_at_k(&pred, &rel, k).unwrap() - brute_ndcg(&pred, &rel, k)).abs() < 1e-12);
        prop_assert!((average_precision_at_k(&pred, &rel, k).unwrap() - brute_ap(&pred, &rel, k)).abs() < 1e-12);
    }

    #[test]
    fn metrics_ignore_order_of_irrelevant_items(seed in any::<u64>(), n in 5usize..100) {
        let mut rng = Rng::seed_from_u64(seed);
        let mut pred: Vec<u32> = (0..n as u32).collect();
        pred.shuffle(&mut rng);
        let rel: HashSet<u32> = pred.iter().copied().filter(|_| rng.random_bool(0.2)).chain([pred[0]]).collect();
        let mut shuffled = pred.clone();
        let slots: Vec<usize> = (0..n).filter(|&i| !rel.contains(&pred[i])).collect();
        let mut vals: Vec<u32> = slots.iter().map(|&i| pred[i]).collect();
        vals.shuffle(&mut rng);
        for (s, v) in slots.iter().zip(vals) {
            shuffled[*s] = v;
        }
        prop_assert_eq!(ndcg_at_k(&pred, &rel, 100).unwrap(), ndcg_at_k(&shuffled, &rel, 100).unwrap());
        prop_assert_eq!(
            average_precision_at_k(&pred, &rel, 100).unwrap(),
            average_precision_at_k(&shuffled, &rel, 100).unwrap()
        );
    }

    #[test]
    fn relevant_item_on_top_never_hurts(seed in any::<u64>(), n in 2usize..100) {
        let mut rng = Rng::seed_from_u64(seed);
        let mut pred: Vec<u32> = (0..n as u32).collect();
        pred.shuffle(&mut rng);
        let mut rel: HashSet<u32> = pred.iter().copied().filter(|_| rng.random_bool(0.2)).collect();
        rel.insert(pred[n - 1]);
        let before = (ndcg_at_k(&pred, &rel, 100).unwrap(), average_precision_at_k(&pred, &rel, 100).unwrap());
        let mut better = vec![1000u32];
        better.extend(&pred);
        rel.insert(1000);
        let after = (ndcg_at_k(&better, &rel, 100).unwrap(), average_precision_at_k(&better, &rel, 100).unwrap());
        prop_assert!(after.0 >= before.0 - 1e-12 && after.1 >= before.1 - 1e-12);
    }

    #[test]
    fn exact_knn_equals_sorted_brute_force(seed in any::<u64>(), n in 1usize..60, k in 1usize..80) {
        let mut rng = Rng::seed_from_u64(seed);
        let v = Array2::from_shape_simple_fn((n, 4), || f64::from(rng.random_range(-3i8..=3)) + 0.01);
        let ids: Vec<u32> = (0..n as u32).map(|i| i * 7 % 101).collect();
        let idx = EmbeddingIndex::new(ids.clone(), &v).unwrap();
        let q: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let got: Vec<u32> = knn_cosine(&q, &idx, k).unwrap().iter().map(|x| x.track_id).collect();
        let cos = |r: ArrayView1<f64>| {
            let dot: f64 = r.iter().zip(&q).map(|(a, b)| a * b).sum();
            dot / (r.dot(&r).sqrt() * q.iter().map(|x| x * x).sum::<f64>().sqrt())
        };
        let mut brute: Vec<(f64, u32)> = (0..n).map(|i| (cos(v.row(i)), ids[i])).collect();
        brute.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
        let expect: Vec<u32> = brute.into_iter().take(k).map(|x| x.1).collect();
        // cosines computed two ways can differ in the last bit, so compare
        // the similarity sequence and the id order within exact ties only
        prop_assert_eq!(got.len(), expect.len());
        for (g, e) in got.iter().zip(&expect) {
            let gi = ids.iter().position(|x| x == g).unwrap();
            let ei = ids.iter().position(|x| x == e).unwrap();
            prop_assert!((cos(v.row(gi)) - cos(v.row(ei))).abs() < 1e-12);
        }
    }
}

#[test]
fn continuation_matches_exhaustive_count_then_similarity() {
    let mut rng = Rng::seed_from_u64(21);
    let cand = Array2::from_shape_simple_fn((10, 3), || rng.sample::<f64, _>(StandardNormal));
    let ids: Vec<u32> = (0..10).collect();
    let idx = EmbeddingIndex::new(ids.clone(), &cand).unwrap();
    let seeds = Array2::from_shape_simple_fn((3, 3), || rng.sample::<f64, _>(StandardNormal));
    let per_seed = 4;
    let views: Vec<(u32, ArrayView1<f64>)> =
        (0..3).map(|i| (100 + i as u32, seeds.row(i))).collect();
    let got = continue_playlist(&views, &idx, per_seed, 100).unwrap();

    let cos =
        |a: ArrayView1<f64>, b: ArrayView1<f64>| a.dot(&b) / (a.dot(&a).sqrt() * b.dot(&b).sqrt());
    let mut count = [0usize; 10];
    let mut sum = [0.0f64; 10];
    for s in 0..3 {
        let mut sims: Vec<(f64, usize)> = (0..10)
            .map(|c| (cos(seeds.row(s), cand.row(c)), c))
            .collect();
        sims.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
        for &(v, c) in sims.iter().take(per_seed) {
            count[c] += 1;
            sum[c] += v;
        }
    }
    let mut expect: Vec<usize> = (0..10).filter(|&c| count[c] > 0).collect();
    expect.sort_by(|&a, &b| {
        count[b]
            .cmp(&count[a])
            .then(sum[b].partial_cmp(&sum[a]).unwrap())
            .then(a.cmp(&b))
    });
    assert_eq!(got, expect.iter().map(|&c| c as u32).collect::<Vec<_>>());
}

fn recall_at_100(n: usize, dim: usize, clustered: bool) -> f64 {
    recall_with(n, dim, clustered, ForestConfig::default())
}

/// Recall of the forest against exact search on `n` points, with queries
/// drawn from the same distribution as the data.
fn recall_with(n: usize, dim: usize, clustered: bool, cfg: ForestConfig) -> f64 {
    let mut rng = Rng::seed_from_u64(5);
    let centers = Array2::from_shape_simple_fn((20, dim), || rng.sample::<f64, _>(StandardNormal));
    let queries = 30;
    let v = Array2::from_shape_fn((n + queries, dim), |(i, d)| {
        let base = if clustered { centers[[i % 20, d]] } else { 0.0 };
        base + rng.sample::<f64, _>(StandardNormal) * if clustered { 0.5 } else { 1.0 }
    });
    let data = v.slice(ndarray::s![..n, ..]).to_owned();
    let idx = EmbeddingIndex::new((0..n as u32).collect(), &data).unwrap();
    let forest = RpForest::build(&idx, cfg).unwrap();
    let mut hits = 0usize;
    for qi in n..n + queries {
        let q = v.row(qi).to_vec();
        let exact: HashSet<u32> = knn_cosine(&q, &idx, 100)
            .unwrap()
            .iter()
            .map(|x| x.track_id)
            .collect();
        hits += forest
            .query(&idx, &q, 100)
            .unwrap()
            .iter()
            .filter(|x| exact.contains(&x.track_id))
            .count();
    }
    hits as f64 / (100 * queries) as f64
}

#[test]
fn approximate_index_recall() {
    for (dim, clustered) in [(32, true), (16, false), (8, false)] {
        let r = recall_at_100(10_000, dim, clustered);
        assert!(r >= 0.95, "dim {dim} clustered {clustered}: recall {r}");
    }
}

fn fast_probe() -> ProbeConfig {
    ProbeConfig {
        repeats: 3,
        epochs: 30,
        genre_hidden: 32,
        tag_hidden: (16, 8),
        ..ProbeConfig::default()
    }
}

fn embeddings_from(rows: &Array2<f64>, windows_per_track: usize) -> TrackEmbeddings {
    let n = rows.nrows() / windows_per_track;
    let windows: Vec<Array2<f64>> = (0..n)
        .map(|t| {
            rows.slice(ndarray::s![
                t * windows_per_track..(t + 1) * windows_per_track,
                ..
            ])
            .to_owned()
        })
        .collect();
    let mean = Array2::from_shape_fn((n, rows.ncols()), |(t, d)| {
        windows[t].column(d).mean().unwrap()
    });
    TrackEmbeddings {
        ids: (0..n as u32).collect(),
        mean,
        windows,
    }
}

#[test]
fn separable_genres_are_classified_perfectly() {
    let mut rng = Rng::seed_from_u64(1);
    let make = |rng: &mut Rng, n: usize| {
        let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
        let rows = Array2::from_shape_fn((n * 3, 4), |(r, d)| {
            let c = labels[r / 3] as f64 * 2.0 - 1.0;
            let signal = if d == 0 { 3.0 * c } else { 0.0 };
            signal + rng.random_range(-0.5..0.5)
        });
        (embeddings_from(&rows, 3), labels)
    };
    let (tr, ytr) = make(&mut rng, 40);
    let (te, yte) = make(&mut rng, 20);
    let s = eval_genre_classification(&tr, &ytr, &te, &yte, &fast_probe()).unwrap();
    assert!(s.per_repeat.iter().all(|&a| a == 1.0), "{s:?}");
}

#[test]
fn shuffled_labels_are_at_chance() {
    let mut rng = Rng::seed_from_u64(2);
    let rows = Array2::from_shape_simple_fn((400, 8), || rng.sample::<f64, _>(StandardNormal));
    let all = embeddings_from(&rows, 1);
    let mut labels: Vec<usize> = (0..400).map(|i| i % 4).collect();
    labels.shuffle(&mut rng);
    let train = all.select(&(0..300).collect::<Vec<u32>>()).unwrap();
    let test = all.select(&(300..400).collect::<Vec<u32>>()).unwrap();
    let s = eval_genre_classification(&train, &labels[..300], &test, &labels[300..], &fast_probe())
        .unwrap();
    assert!((s.mean - 0.25).abs() <= 0.1, "{s:?}");
}

fn tag_fixture(
    linear: bool,
    seed: u64,
) -> (
    TrackEmbeddings,
    Vec<Vec<u32>>,
    Vec<musalign::corpus::TagCategory>,
) {
    let mut rng = Rng::seed_from_u64(seed);
    let n = 300;
    let tags: Vec<Vec<u32>> = (0..n)
        .map(|_| {
            let mut t = vec![1 + rng.random_range(0..3u32)];
            if rng.random_bool(0.5) {
                t.push(4);
            }
            t
        })
        .collect();
    let rows = Array2::from_shape_fn((n, 6), |(i, d)| {
        let noise: f64 = rng.sample(StandardNormal);
        let signal = if linear && d < 4 {
            if tags[i].contains(&(d as u32 + 1)) {
                2.0
            } else {
                -2.0
            }
        } else {
            0.0
        };
        signal + 0.3 * noise
    });
    let cats = vec![musalign::corpus::TagCategory {
        name: "mood".into(),
        genre_ids: vec![1, 2, 3, 4],
    }];
    (embeddings_from(&rows, 1), tags, cats)
}

#[test]
fn linearly_encoded_tags_score_high() {
    let (emb, tags, cats) = tag_fixture(true, 3);
    let r = eval_autotagging(&emb, &tags, &cats, &fast_probe()).unwrap();
    assert!(r[0].auc.mean >= 0.95, "{:?}", r[0].auc);
    for (best, last) in &r[0].val_bce {
        assert!(best <= last);
    }
}

#[test]
fn random_embeddings_tag_at_chance() {
    let (emb, tags, cats) = tag_fixture(false, 4);
    let cfg = ProbeConfig {
        repeats: 5,
        ..fast_probe()
    };
    let r = eval_autotagging(&emb, &tags, &cats, &cfg).unwrap();
    assert!((r[0].auc.mean - 0.5).abs() <= 0.05, "{:?}", r[0].auc);
}

fn flat_track(id: u32, frames: usize, value: impl Fn(usize, usize) -> f32) -> TrackRecord {
    let mel = (0..frames * MEL_BANDS)
        .map(|i| value(i / MEL_BANDS, i % MEL_BANDS))
        .collect();
    TrackRecord::new(id, mel, vec![1]).unwrap()
}

fn small_encoder() -> AudioEncoder {
    let cfg = AudioConfig {
        channels: vec![2; 7],
        hidden: 8,
        dim: 4,
        ..AudioConfig::default()
    };
    AudioEncoder::new(cfg, &mut Rng::seed_from_u64(3)).unwrap()
}

#[test]
fn extraction_windows() {
    let enc = small_encoder();
    let pattern = |t: usize, b: usize| ((t * 7 + b * 3) % 11) as f32 / 11.0;
    let one = flat_track(1, 256, pattern);
    let e1 = extract_track_embedding(&enc, &one).unwrap();
    let direct = enc.embed(&musalign::corpus::window_chunks(&one)).unwrap();
    assert_eq!(e1, direct.row(0).to_owned());

    let twice = flat_track(2, 512, |t, b| pattern(t % 256, b));
    let e2 = extract_track_embedding(&enc, &twice).unwrap();
    assert!((&e2 - &e1).iter().all(|v| v.abs() < 1e-12));

    let longer = flat_track(3, 300, pattern);
    assert_eq!(musalign::corpus::window_chunks(&longer).len(), 1);
    assert_eq!(extract_track_embedding(&enc, &longer).unwrap(), e1);
}

#[test]
fn extraction_is_independent_of_grouping() {
    let enc = small_encoder();
    let corpus = generate_synthetic_corpus(40, 4, 4, 0.3, 1).unwrap();
    let tracks: Vec<&TrackRecord> = corpus.tracks().iter().collect();
    let all = extract_embeddings(&enc, &tracks).unwrap();
    for (i, t) in tracks.iter().enumerate().step_by(7) {
        let single = extract_track_embedding(&enc, t).unwrap();
        assert!((&single - &all.mean.row(i)).iter().all(|v| v.abs() < 1e-12));
    }
    let again = extract_embeddings(&enc, &tracks[5..]).unwrap();
    assert!((&again.mean - &all.mean.slice(ndarray::s![5.., ..]))
        .iter()
        .all(|v| v.abs() < 1e-12));
}

#[test]
fn playlists_entirely_in_test_are_skipped() {
    let table = GenreEmbeddingTable::new(2, [(1, vec![1.0, 0.0])].into_iter().collect()).unwrap();
    let tracks: Vec<TrackRecord> = (0..6).map(|i| flat_track(i, 256, |_, _| 0.0)).collect();
    let playlists = vec![
        Playlist {
            playlist_id: 0,
            track_ids: vec![0, 3],
        },
        Playlist {
            playlist_id: 1,
            track_ids: vec![4, 5],
        },
        Playlist {
            playlist_id: 2,
            track_ids: vec![1, 2],
        },
    ];
    let corpus = Corpus::new(tracks, playlists, 1, table, vec![]).unwrap();
    let split = SplitAssignment {
        train: [0, 1, 2].into_iter().collect(),
        validation: Default::default(),
        test: [3, 4, 5].into_iter().collect(),
    };
    let mut rng = Rng::seed_from_u64(0);
    let emb = TrackEmbeddings {
        ids: (0..6).collect(),
        mean: Array2::from_shape_simple_fn((6, 3), || rng.sample(StandardNormal)),
        windows: vec![Array2::zeros((1, 3)); 6],
    };
    let s = eval_playlist_continuation(&corpus, &split, &emb, 100).unwrap();
    assert_eq!((s.evaluated, s.skipped), (1, 1));
    // all three candidates are returned, so the single relevant one is found
    assert!(s.ndcg > 0.0 && s.map > 0.0);
}

#[test]
fn random_embeddings_sit_at_the_analytic_random_level() {
    let corpus = generate_synthetic_corpus(256, 8, 64, 0.3, 9).unwrap();
    let split = stratified_split(&corpus, (0.8, 0.1, 0.1), 9).unwrap();
    let tracks: Vec<&TrackRecord> = corpus.tracks().iter().collect();
    let n_cand = split.test.len();
    // every candidate ends up ranked (fewer than 100), uniformly at random
    assert!(n_cand <= 100);
    let mut expected = 0.0;
    let mut n = 0;
    for p in corpus.playlists() {
        let r = p
            .track_ids
            .iter()
            .filter(|id| split.test.contains(id))
            .count();
        if r == 0 || r == p.track_ids.len() {
            continue;
        }
        let dcg: f64 = (1..=n_cand)
            .map(|i| 1.0 / (i as f64 + 1.0).log2())
            .sum::<f64>()
            * r as f64
            / n_cand as f64;
        let idcg: f64 = (1..=r).map(|i| 1.0 / (i as f64 + 1.0).log2()).sum();
        expected += dcg / idcg;
        n += 1;
    }
    expected /= n as f64;
    let mut total = 0.0;
    for seed in 0..20 {
        let emb = random_embeddings(&tracks, 16, seed);
        total += eval_playlist_continuation(&corpus, &split, &emb, 100)
            .unwrap()
            .ndcg;
    }
    let mc = total / 20.0;
    assert!(
        (mc - expected).abs() < 0.05 * expected.max(0.1),
        "monte carlo {mc} vs analytic {expected}"
    );
    let _ = Array1::<f64>::zeros(1);
}
