//! Scratch experiment runner for sizing the cluster benchmark.

use nishan::corpus::make_class_split;
use nishan::encoder::EncoderBackend;
use nishan::episodes::{standard_split, test_protocol, EpisodeSpec};
use nishan::pretrain::{retrain, MaskingPolicy, RetrainConfig};
use nishan::protonet::{episode_gradients, HeadConfig, HeadParams};
use nishan::rng::{seeded_rng, sub_seed};
use nishan::similarity::SimilarityKind;
use nishan::synthetic::{cluster_corpus, cluster_encoder, ClusterSpec};
use nishan::train::{evaluate, grad_check, train, Pipeline, TrainConfig};
use rand::Rng;
use std::time::Instant;

fn bench_spec() -> ClusterSpec {
    ClusterSpec {
        samples_per_class: 90,
        ..ClusterSpec::default()
    }
}

fn pipeline_for(spec: &ClusterSpec, corpus: &nishan::Corpus) -> Pipeline {
    Pipeline {
        encoder: EncoderBackend::Toy(cluster_encoder(spec, corpus)),
        l_seq: spec.l_seq,
        head: HeadConfig {
            d_h: spec.d_h,
            ..HeadConfig::default()
        },
    }
}

fn end_to_end(seed: u64, episodes: usize, lr: f64) -> (f64, f64) {
    let spec = ClusterSpec {
        seed,
        ..bench_spec()
    };
    let corpus = cluster_corpus(&spec);
    let pipeline = pipeline_for(&spec, &corpus);
    let (train_half, test_half) = standard_split(&corpus, 0.8, sub_seed(seed, "split")).unwrap();

    let eval_classes: Vec<String> = corpus.label_vocab.iter().take(4).cloned().collect();
    let task = test_protocol(&test_half, &eval_classes, 5, sub_seed(seed, "task")).unwrap();

    let init = HeadParams::init(&pipeline.head, sub_seed(seed, "head-init"));
    let (init_core, _) = evaluate(&pipeline, &init, &task, SimilarityKind::Cosine).unwrap();

    let ep = EpisodeSpec { n_way: 4, k_shot: 5, q_query: 5, seed };
    let cfg = TrainConfig {
                    max_grad_norm: Some(10.0),
        learning_rate: lr,
        max_episodes: episodes,
        eval_every: 100,
        patience: 10,
        seed,
    };
    let outcome = train(&pipeline, &train_half, &corpus.label_vocab, None, &ep, &cfg).unwrap();
    let (core, _) = evaluate(&pipeline, &outcome.params, &task, SimilarityKind::Cosine).unwrap();
    (init_core.accuracy, core.accuracy)
}

fn main() {
    let t0 = Instant::now();

    // --- end-to-end at several seeds/lrs
    for lr in [1e-3, 5e-4] {
        for seed in 0..3u64 {
            let s = Instant::now();
            let (init_acc, final_acc) = end_to_end(seed, 2000, lr);
            println!(
                "e2e lr {lr:.0e} seed {seed}: init {init_acc:.4} -> final {final_acc:.4} ({:.1}s)",
                s.elapsed().as_secs_f64()
            );
        }
    }

    // --- metric sweep after training (seed 0, lr 1e-3)
    {
        let spec = ClusterSpec { seed: 0, ..bench_spec() };
        let corpus = cluster_corpus(&spec);
        let pipeline = pipeline_for(&spec, &corpus);
        let (train_half, test_half) = standard_split(&corpus, 0.8, sub_seed(0, "split")).unwrap();
        let eval_classes: Vec<String> = corpus.label_vocab.iter().take(4).cloned().collect();
        let task = test_protocol(&test_half, &eval_classes, 5, sub_seed(0, "task")).unwrap();
        let ep = EpisodeSpec { n_way: 4, k_shot: 5, q_query: 5, seed: 0 };
        let cfg = TrainConfig {
                    max_grad_norm: Some(10.0),
            learning_rate: 1e-3,
            max_episodes: 2000,
            eval_every: 100,
            patience: 10,
            seed: 0,
        };
        let outcome = train(&pipeline, &train_half, &corpus.label_vocab, None, &ep, &cfg).unwrap();
        let mut ranked: Vec<(SimilarityKind, f64)> = SimilarityKind::ALL
            .iter()
            .map(|&k| {
                let (m, _) = evaluate(&pipeline, &outcome.params, &task, k).unwrap();
                (k, m.weighted_f1)
            })
            .collect();
        ranked.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
        println!("sweep ranking (seed 0, seen-class task):");
        for (i, (k, f1)) in ranked.iter().enumerate() {
            println!("  {:2}. {k} wf1 {f1:.4}", i + 1);
        }
    }

    // --- unseen-class protocol: disjoint split, 5-shot vs 1-shot and seen fractions
    {
        let spec = ClusterSpec {
            n_classes: 24,
            samples_per_class: 40,
            seed: 3,
            ..bench_spec()
        };
        let corpus = cluster_corpus(&spec);
        let pipeline = pipeline_for(&spec, &corpus);
        for seen in [0.25f64, 0.5, 0.75] {
            let mut accs = Vec::new();
            for seed in 0..3u64 {
                let split = make_class_split(&corpus, seen, 1.0 / 3.0, seed).unwrap();
                let mut rng = seeded_rng(sub_seed(seed, "pick-test"));
                let mut test_classes = split.c_test.clone();
                while test_classes.len() > 4 {
                    let i = rng.gen_range(0..test_classes.len());
                    test_classes.remove(i);
                }
                let task = test_protocol(&corpus, &test_classes, 5, sub_seed(seed, "task")).unwrap();
                let ep = EpisodeSpec { n_way: 4, k_shot: 5, q_query: 5, seed };
                let cfg = TrainConfig {
                    max_grad_norm: Some(10.0),
                    learning_rate: 1e-3,
                    max_episodes: 800,
                    eval_every: 100,
                    patience: 10,
                    seed,
                };
                let outcome =
                    train(&pipeline, &corpus, &split.c_train, None, &ep, &cfg).unwrap();
                let (core, _) =
                    evaluate(&pipeline, &outcome.params, &task, SimilarityKind::Cosine).unwrap();
                accs.push(core.accuracy);
            }
            let mean = accs.iter().sum::<f64>() / accs.len() as f64;
            println!("seen {seen}: unseen-class acc mean {mean:.4} {accs:?}");
        }

        // 1-shot vs 5-shot at seen 0.5
        for k_shot in [1usize, 5] {
            let mut accs = Vec::new();
            for seed in 0..3u64 {
                let split = make_class_split(&corpus, 0.5, 1.0 / 3.0, seed).unwrap();
                let mut rng = seeded_rng(sub_seed(seed, "pick-test"));
                let mut test_classes = split.c_test.clone();
                while test_classes.len() > 4 {
                    let i = rng.gen_range(0..test_classes.len());
                    test_classes.remove(i);
                }
                let task =
                    test_protocol(&corpus, &test_classes, k_shot, sub_seed(seed, "task")).unwrap();
                let ep = EpisodeSpec { n_way: 4, k_shot, q_query: 5, seed };
                let cfg = TrainConfig {
                    max_grad_norm: Some(10.0),
                    learning_rate: 1e-3,
                    max_episodes: 800,
                    eval_every: 100,
                    patience: 10,
                    seed,
                };
                let outcome = train(&pipeline, &corpus, &split.c_train, None, &ep, &cfg).unwrap();
                let (core, _) =
                    evaluate(&pipeline, &outcome.params, &task, SimilarityKind::Cosine).unwrap();
                accs.push(core.accuracy);
            }
            let mean = accs.iter().sum::<f64>() / accs.len() as f64;
            println!("k_shot {k_shot}: acc mean {mean:.4} {accs:?}");
        }
    }

    // --- gradient check at the pinned instance
    {
        let s = Instant::now();
        let cfg = HeadConfig {
            d_h: 16,
            heads: 4,
            dropout_rate: 0.0,
            metric_temperature: 0.1,
            ucl_temperature: 0.05,
            hidden_size: 300,
        };
        let params = HeadParams::init(&cfg, 123);
        let mut rng = seeded_rng(77);
        let mut rand_emb = |l: usize| {
            nishan::SequenceEmbedding::new(
                ndarray::Array2::from_shape_fn((l, 16), |_| rng.gen_range(-1.0..1.0)),
                vec![true; l],
            )
        };
        let tensors = nishan::protonet::EpisodeTensors {
            support: (0..3).map(|_| (0..2).map(|_| rand_emb(5)).collect()).collect(),
            query: (0..6).map(|_| rand_emb(5)).collect(),
            query_labels: vec![0, 0, 1, 1, 2, 2],
        };
        let (_, grads) = episode_gradients(&tensors, &params, &cfg, None).unwrap();
        let flat = params.flatten();
        println!("params: {}", flat.len());
        let loss_fn = |p: &[f64]| {
            let mut probe = params.clone();
            probe.set_from_flat(p);
            nishan::protonet::forward_episode(&tensors, &probe, &cfg, None)
                .unwrap()
                .loss
                .total
        };
        let err = grad_check(&flat, &grads.flatten(), loss_fn, 1e-5);
        println!("gradcheck max rel err {err:.3e} in {:.1}s", s.elapsed().as_secs_f64());
    }

    // --- pretraining effect
    {
        let s = Instant::now();
        let spec = ClusterSpec { seed: 5, ..bench_spec() };
        let corpus = cluster_corpus(&spec);
        let mut encoder = cluster_encoder(&spec, &corpus);
        let policy = MaskingPolicy::default();
        let rcfg = RetrainConfig {
            epochs: 12, // ~45 батчей of 16 per epoch -> ~540 steps
            batch_size: 16,
            learning_rate: 3e-3,
            scl_temperature: 0.05,
            seed: 5,
        };
        let history = retrain(&mut encoder, &corpus, &policy, &rcfg, &Default::default()).unwrap();
        let first = history.first().unwrap().total;
        let last = history.last().unwrap().total;
        println!(
            "pretrain {} steps: total {first:.4} -> {last:.4} ({:.0}% drop) in {:.1}s",
            history.len(),
            (1.0 - last / first) * 100.0,
            s.elapsed().as_secs_f64()
        );

        // downstream with the pretrained encoder
        let pipeline = Pipeline {
            encoder: EncoderBackend::Toy(encoder),
            l_seq: spec.l_seq,
            head: HeadConfig { d_h: spec.d_h, ..HeadConfig::default() },
        };
        let (train_half, test_half) = standard_split(&corpus, 0.8, sub_seed(5, "split")).unwrap();
        let eval_classes: Vec<String> = corpus.label_vocab.iter().take(4).cloned().collect();
        let task = test_protocol(&test_half, &eval_classes, 5, sub_seed(5, "task")).unwrap();
        let ep = EpisodeSpec { n_way: 4, k_shot: 5, q_query: 5, seed: 5 };
        let cfg = TrainConfig {
                    max_grad_norm: Some(10.0),
            learning_rate: 1e-3,
            max_episodes: 2000,
            eval_every: 100,
            patience: 10,
            seed: 5,
        };
        let outcome = train(&pipeline, &train_half, &corpus.label_vocab, None, &ep, &cfg).unwrap();
        let (core, _) = evaluate(&pipeline, &outcome.params, &task, SimilarityKind::Cosine).unwrap();
        println!("downstream after pretraining: acc {:.4}", core.accuracy);

        let baseline = end_to_end(5, 2000, 1e-3);
        println!("baseline (fresh encoder) seed 5: init {:.4} final {:.4}", baseline.0, baseline.1);
    }

    println!("total probe time {:.1}s", t0.elapsed().as_secs_f64());
}
