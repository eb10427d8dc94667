//! Size the pretraining-effect check and the metric-sweep placement.

use nishan::corpus::make_class_split;
use nishan::encoder::EncoderBackend;
use nishan::episodes::{standard_split, test_protocol, EpisodeSpec};
use nishan::pretrain::{retrain, MaskingPolicy, RetrainConfig};
use nishan::protonet::HeadConfig;
use nishan::rng::sub_seed;
use nishan::similarity::SimilarityKind;
use nishan::synthetic::{cluster_corpus, cluster_encoder, ClusterSpec};
use nishan::train::{evaluate_mean, train, Pipeline, TrainConfig};

fn bench_spec(seed: u64) -> ClusterSpec {
    ClusterSpec {
        samples_per_class: 120,
        seed,
        ..ClusterSpec::default()
    }
}

fn robust_train(
    pipeline: &Pipeline,
    corpus: &nishan::Corpus,
    train_classes: &[String],
    val_tasks: &[nishan::episodes::TestTask],
    k_shot: usize,
    seed: u64,
    episodes: usize,
) -> nishan::protonet::HeadParams {
    let ep = EpisodeSpec { n_way: 4, k_shot, q_query: 5, seed };
    let cfg = TrainConfig {
        learning_rate: 1e-3,
        max_episodes: episodes,
        eval_every: 100,
        patience: 30,
        max_grad_norm: Some(10.0),
        seed,
    };
    train(pipeline, corpus, train_classes, val_tasks, &ep, &cfg)
        .unwrap()
        .params
}

fn downstream(encoder: EncoderBackend, spec: &ClusterSpec, corpus: &nishan::Corpus, seed: u64) -> f64 {
    let pipeline = Pipeline {
        encoder,
        l_seq: spec.l_seq,
        head: HeadConfig { d_h: spec.d_h, ..HeadConfig::default() },
    };
    let (train_half, held_out) = standard_split(corpus, 0.8, sub_seed(seed, "split")).unwrap();
    let (val_half, test_half) = standard_split(&held_out, 0.5, sub_seed(seed, "vsplit")).unwrap();
    let val_tasks: Vec<_> = (0..5)
        .map(|i| {
            test_protocol(&val_half, &corpus.label_vocab, 5, sub_seed(seed, "val").wrapping_add(i))
                .unwrap()
        })
        .collect();
    let test_classes: Vec<String> = corpus.label_vocab.iter().take(4).cloned().collect();
    let test_tasks: Vec<_> = (0..3)
        .map(|i| {
            test_protocol(&test_half, &test_classes, 5, sub_seed(seed, "test").wrapping_add(i))
                .unwrap()
        })
        .collect();
    let params = robust_train(&pipeline, &train_half, &corpus.label_vocab, &val_tasks, 5, seed, 2000);
    evaluate_mean(&pipeline, &params, &test_tasks, SimilarityKind::Cosine)
        .unwrap()
        .accuracy
}

fn main() {
    // --- pretraining effect at several learning rates
    let spec = bench_spec(5);
    let corpus = cluster_corpus(&spec);
    let baseline = downstream(
        EncoderBackend::Toy(cluster_encoder(&spec, &corpus)),
        &spec,
        &corpus,
        5,
    );
    println!("baseline downstream: {baseline:.4}");
    for lr in [3e-4f64, 1e-3, 3e-3] {
        let mut encoder = cluster_encoder(&spec, &corpus);
        let rcfg = RetrainConfig {
            epochs: 9,
            batch_size: 16,
            learning_rate: lr,
            scl_temperature: 0.05,
            seed: 5,
        };
        let history = retrain(&mut encoder, &corpus, &MaskingPolicy::default(), &rcfg, &Default::default()).unwrap();
        let head: f64 = history.iter().take(5).map(|h| h.total).sum::<f64>() / 5.0;
        let tail: f64 = history.iter().rev().take(5).map(|h| h.total).sum::<f64>() / 5.0;
        let acc = downstream(EncoderBackend::Toy(encoder), &spec, &corpus, 5);
        println!(
            "pretrain lr {lr:.0e}: {} steps, loss {head:.4} -> {tail:.4} ({:.0}% drop), downstream {acc:.4}",
            history.len(),
            (1.0 - tail / head) * 100.0
        );
    }

    // --- metric sweep on the seen-class benchmark (3 seeds)
    for seed in 0..3u64 {
        let spec = bench_spec(0);
        let corpus = cluster_corpus(&spec);
        let pipeline = Pipeline {
            encoder: EncoderBackend::Toy(cluster_encoder(&spec, &corpus)),
            l_seq: spec.l_seq,
            head: HeadConfig { d_h: spec.d_h, ..HeadConfig::default() },
        };
        let (train_half, held_out) = standard_split(&corpus, 0.8, sub_seed(seed, "split")).unwrap();
        let (val_half, test_half) = standard_split(&held_out, 0.5, sub_seed(seed, "vsplit")).unwrap();
        let val_tasks: Vec<_> = (0..5)
            .map(|i| test_protocol(&val_half, &corpus.label_vocab, 5, sub_seed(seed, "val").wrapping_add(i)).unwrap())
            .collect();
        let test_classes: Vec<String> = corpus.label_vocab.iter().take(4).cloned().collect();
        let test_tasks: Vec<_> = (0..3)
            .map(|i| test_protocol(&test_half, &test_classes, 5, sub_seed(seed, "test").wrapping_add(i)).unwrap())
            .collect();
        let params = robust_train(&pipeline, &train_half, &corpus.label_vocab, &val_tasks, 5, seed, 2000);
        let mut ranked: Vec<(SimilarityKind, f64)> = SimilarityKind::ALL
            .iter()
            .map(|&k| {
                let m = evaluate_mean(&pipeline, &params, &test_tasks, k).unwrap();
                (k, m.weighted_f1)
            })
            .collect();
        ranked.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
        let line: Vec<String> = ranked.iter().map(|(k, f)| format!("{k}:{f:.3}")).collect();
        println!("sweep(seen) seed {seed}: {}", line.join(" "));
    }

    // --- metric sweep on the unseen-class protocol (16 classes)
    let uspec = ClusterSpec {
        n_classes: 16,
        samples_per_class: 40,
        seed: 3,
        ..ClusterSpec::default()
    };
    let ucorpus = cluster_corpus(&uspec);
    let upipe = Pipeline {
        encoder: EncoderBackend::Toy(cluster_encoder(&uspec, &ucorpus)),
        l_seq: uspec.l_seq,
        head: HeadConfig { d_h: uspec.d_h, ..HeadConfig::default() },
    };
    for seed in 0..3u64 {
        let split = make_class_split(&ucorpus, 0.5, 1.0 / 3.0, seed).unwrap();
        let val_tasks: Vec<_> = (0..3)
            .map(|i| test_protocol(&ucorpus, &split.c_val, 5, sub_seed(seed, "val").wrapping_add(i)).unwrap())
            .collect();
        let test_tasks: Vec<_> = (0..3)
            .map(|i| test_protocol(&ucorpus, &split.c_test, 5, sub_seed(seed, "test").wrapping_add(i)).unwrap())
            .collect();
        let params = robust_train(&upipe, &ucorpus, &split.c_train, &val_tasks, 5, seed, 1200);
        let mut ranked: Vec<(SimilarityKind, f64)> = SimilarityKind::ALL
            .iter()
            .map(|&k| {
                let m = evaluate_mean(&upipe, &params, &test_tasks, k).unwrap();
                (k, m.weighted_f1)
            })
            .collect();
        ranked.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
        let line: Vec<String> = ranked.iter().map(|(k, f)| format!("{k}:{f:.3}")).collect();
        println!("sweep(unseen) seed {seed}: {}", line.join(" "));
    }
}
