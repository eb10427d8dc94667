//! Stability with multi-draw validation selection and multi-draw test scoring.

use nishan::encoder::EncoderBackend;
use nishan::episodes::{standard_split, test_protocol, EpisodeSpec};
use nishan::protonet::{HeadConfig, HeadParams};
use nishan::rng::sub_seed;
use nishan::similarity::SimilarityKind;
use nishan::synthetic::{cluster_corpus, cluster_encoder, ClusterSpec};
use nishan::train::{evaluate_mean, train, Pipeline, TrainConfig};

fn main() {
    let spec = ClusterSpec { samples_per_class: 120, ..ClusterSpec::default() };
    let corpus = cluster_corpus(&spec);
    let (train_half, held_out) = standard_split(&corpus, 0.8, 11).unwrap();
    let (val_half, test_half) = standard_split(&held_out, 0.5, 12).unwrap();
    let test_classes: Vec<String> = corpus.label_vocab.iter().take(4).cloned().collect();
    let test_tasks: Vec<_> = (0..3)
        .map(|i| test_protocol(&test_half, &test_classes, 5, 21 + i * 10).unwrap())
        .collect();
    let val_tasks: Vec<_> = (0..3)
        .map(|i| test_protocol(&val_half, &corpus.label_vocab, 5, 22 + i * 10).unwrap())
        .collect();

    let base_head = HeadConfig { d_h: spec.d_h, ..HeadConfig::default() };
    let base_pipeline = Pipeline {
        encoder: EncoderBackend::Toy(cluster_encoder(&spec, &corpus)),
        l_seq: spec.l_seq,
        head: base_head,
    };
    let mut init_sum = 0.0;
    for seed in 0..10u64 {
        let params = HeadParams::init(&base_head, sub_seed(seed, "head-init"));
        let core = evaluate_mean(&base_pipeline, &params, &test_tasks, SimilarityKind::Cosine).unwrap();
        init_sum += core.accuracy;
    }
    println!("init accuracy mean {:.4}", init_sum / 10.0);

    for (t, tau) in [(0.1, 0.05), (0.1, 0.5)] {
        for lr in [1e-3f64, 3e-4] {
            let mut finals = Vec::new();
            for seed in 0..6u64 {
                let head = HeadConfig {
                    d_h: spec.d_h,
                    metric_temperature: t,
                    ucl_temperature: tau,
                    ..HeadConfig::default()
                };
                let pipeline = Pipeline {
                    encoder: EncoderBackend::Toy(cluster_encoder(&spec, &corpus)),
                    l_seq: spec.l_seq,
                    head,
                };
                let ep = EpisodeSpec { n_way: 4, k_shot: 5, q_query: 5, seed };
                let cfg = TrainConfig {
                    learning_rate: lr,
                    max_episodes: 2000,
                    eval_every: 100,
                    patience: 30,
                    max_grad_norm: Some(10.0),
                    seed,
                };
                let outcome =
                    train(&pipeline, &train_half, &corpus.label_vocab, &val_tasks, &ep, &cfg).unwrap();
                let core =
                    evaluate_mean(&pipeline, &outcome.params, &test_tasks, SimilarityKind::Cosine).unwrap();
                finals.push(core.accuracy);
            }
            let worst = finals.iter().cloned().fold(f64::INFINITY, f64::min);
            println!(
                "t {t} tau {tau} lr {lr:.0e}: finals {:?} worst {worst:.4}",
                finals.iter().map(|a| (a * 1e4).round() / 1e4).collect::<Vec<_>>()
            );
        }
    }
}
