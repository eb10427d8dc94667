//! Unseen-class transfer trends: seen fraction sweep and 1- vs 5-shot.
use nishan::corpus::make_class_split;
use nishan::encoder::EncoderBackend;
use nishan::episodes::{test_protocol, EpisodeSpec};
use nishan::protonet::HeadConfig;
use nishan::rng::{seeded_rng, sub_seed};
use nishan::similarity::SimilarityKind;
use nishan::synthetic::{cluster_corpus, cluster_encoder, ClusterSpec};
use nishan::train::{evaluate_mean, train, Pipeline, TrainConfig};
use rand::seq::SliceRandom;

fn run(corpus: &nishan::Corpus, pipeline: &Pipeline, seen: f64, k_shot: usize, seed: u64, episodes: usize) -> f64 {
    let split = make_class_split(corpus, seen, 1.0 / 3.0, seed).unwrap();
    let val_tasks: Vec<_> = (0..3)
        .map(|i| test_protocol(corpus, &split.c_val, 5, sub_seed(seed, "val") + i).unwrap())
        .collect();
    // three 3-way test tasks from the unseen test pool
    let test_tasks: Vec<_> = (0..3)
        .map(|i| {
            let mut rng = seeded_rng(sub_seed(seed, "test-classes") + i);
            let mut classes = split.c_test.clone();
            classes.shuffle(&mut rng);
            classes.truncate(3);
            test_protocol(corpus, &classes, k_shot, sub_seed(seed, "test-task") + i).unwrap()
        })
        .collect();
    let ep = EpisodeSpec { n_way: 4, k_shot, q_query: 5, seed };
    let cfg = TrainConfig {
        learning_rate: 1e-3,
        max_episodes: episodes,
        eval_every: 100,
        patience: 30,
        max_grad_norm: Some(10.0),
        seed,
    };
    let outcome = train(pipeline, corpus, &split.c_train, &val_tasks, &ep, &cfg).unwrap();
    evaluate_mean(pipeline, &outcome.params, &test_tasks, SimilarityKind::Cosine)
        .unwrap()
        .accuracy
}

fn main() {
    for d_h in [32usize, 16] {
        let spec = ClusterSpec {
            n_classes: 16,
            samples_per_class: 40,
            d_h,
            seed: 3,
            ..ClusterSpec::default()
        };
        let corpus = cluster_corpus(&spec);
        let pipeline = Pipeline {
            encoder: EncoderBackend::Toy(cluster_encoder(&spec, &corpus)),
            l_seq: spec.l_seq,
            head: HeadConfig { d_h, ..HeadConfig::default() },
        };
        for seen in [0.25f64, 0.5, 0.75] {
            let accs: Vec<f64> = (0..3u64).map(|s| run(&corpus, &pipeline, seen, 5, s, 1500)).collect();
            let mean = accs.iter().sum::<f64>() / 3.0;
            println!(
                "d_h {d_h} seen {seen}: mean {mean:.4} {:?}",
                accs.iter().map(|a| (a * 1e3).round() / 1e3).collect::<Vec<_>>()
            );
        }
        for k in [1usize, 5] {
            let accs: Vec<f64> = (0..3u64).map(|s| run(&corpus, &pipeline, 0.5, k, s, 1500)).collect();
            let mean = accs.iter().sum::<f64>() / 3.0;
            println!("d_h {d_h} k_shot {k}: mean {mean:.4}");
        }
    }
}
