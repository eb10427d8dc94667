//! Final stability sizing: val-draw count and per-episode query count.
use nishan::encoder::EncoderBackend;
use nishan::episodes::{standard_split, test_protocol, EpisodeSpec};
use nishan::protonet::HeadConfig;
use nishan::similarity::SimilarityKind;
use nishan::synthetic::{cluster_corpus, cluster_encoder, ClusterSpec};
use nishan::train::{evaluate_mean, train, Pipeline, TrainConfig};
use std::time::Instant;

fn main() {
    let spec = ClusterSpec { samples_per_class: 120, ..ClusterSpec::default() };
    let corpus = cluster_corpus(&spec);
    let (train_half, held_out) = standard_split(&corpus, 0.8, 11).unwrap();
    let (val_half, test_half) = standard_split(&held_out, 0.5, 12).unwrap();
    let test_classes: Vec<String> = corpus.label_vocab.iter().take(4).cloned().collect();
    let test_tasks: Vec<_> = (0..3)
        .map(|i| test_protocol(&test_half, &test_classes, 5, 21 + i * 10).unwrap())
        .collect();

    for n_val in [3usize, 5] {
        for q in [5usize, 10] {
            let val_tasks: Vec<_> = (0..n_val)
                .map(|i| test_protocol(&val_half, &corpus.label_vocab, 5, 22 + (i as u64) * 10).unwrap())
                .collect();
            let mut finals = Vec::new();
            let started = Instant::now();
            for seed in 0..8u64 {
                let head = HeadConfig { d_h: spec.d_h, ..HeadConfig::default() };
                let pipeline = Pipeline {
                    encoder: EncoderBackend::Toy(cluster_encoder(&spec, &corpus)),
                    l_seq: spec.l_seq,
                    head,
                };
                let ep = EpisodeSpec { n_way: 4, k_shot: 5, q_query: q, seed };
                let cfg = TrainConfig {
                    learning_rate: 1e-3,
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
                "val_draws {n_val} q {q}: finals {:?} worst {worst:.4} ({:.0}s/8 runs)",
                finals.iter().map(|a| (a * 1e4).round() / 1e4).collect::<Vec<_>>(),
                started.elapsed().as_secs_f64()
            );
        }
    }
}
