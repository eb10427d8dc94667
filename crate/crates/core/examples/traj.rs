//! Checkpoint-by-checkpoint trajectory of val vs test accuracy.
use nishan::encoder::EncoderBackend;
use nishan::episodes::{sample_episode, standard_split, test_protocol, EpisodeSpec};
use nishan::protonet::{episode_gradients, HeadConfig, HeadParams};
use nishan::rng::{indexed_seed, seeded_rng, sub_seed};
use nishan::similarity::SimilarityKind;
use nishan::synthetic::{cluster_corpus, cluster_encoder, ClusterSpec};
use nishan::train::{evaluate, Adam, Pipeline};

fn main() {
    let spec = ClusterSpec { samples_per_class: 120, ..ClusterSpec::default() };
    let corpus = cluster_corpus(&spec);
    let (train_half, held_out) = standard_split(&corpus, 0.8, 11).unwrap();
    let (val_half, test_half) = standard_split(&held_out, 0.5, 12).unwrap();
    let test_classes: Vec<String> = corpus.label_vocab.iter().take(4).cloned().collect();
    let task = test_protocol(&test_half, &test_classes, 5, 21).unwrap();
    let val_task = test_protocol(&val_half, &corpus.label_vocab, 5, 22).unwrap();

    let seed = 2u64;
    let head = HeadConfig { d_h: spec.d_h, ..HeadConfig::default() };
    let pipeline = Pipeline {
        encoder: EncoderBackend::Toy(cluster_encoder(&spec, &corpus)),
        l_seq: spec.l_seq,
        head,
    };
    let mut params = HeadParams::init(&head, sub_seed(seed, "head-init"));
    let mut adam = Adam::new(params.flatten().len());
    let ep = EpisodeSpec { n_way: 4, k_shot: 5, q_query: 5, seed };
    for episode_idx in 0..2000usize {
        let mut rng = seeded_rng(indexed_seed(ep.seed, "episode", episode_idx as u64));
        let episode = sample_episode(&train_half, &corpus.label_vocab, &ep, &mut rng).unwrap();
        let tensors = pipeline.episode_tensors(&episode.support, &episode.query, 4).unwrap();
        let mut drop_rng = seeded_rng(indexed_seed(seed, "dropout", episode_idx as u64));
        let (_, grads) = episode_gradients(&tensors, &params, &pipeline.head, Some(&mut drop_rng)).unwrap();
        let mut gflat = grads.flatten();
        let norm = gflat.iter().map(|g| g * g).sum::<f64>().sqrt();
        if norm > 10.0 { for g in gflat.iter_mut() { *g *= 10.0 / norm; } }
        let mut flat = params.flatten();
        adam.step(&mut flat, &gflat, 1e-3);
        params.set_from_flat(&flat);
        if (episode_idx + 1) % 100 == 0 {
            let (val, _) = evaluate(&pipeline, &params, &val_task, SimilarityKind::Cosine).unwrap();
            let (test, _) = evaluate(&pipeline, &params, &task, SimilarityKind::Cosine).unwrap();
            println!("ep {:4}: val {:.4} test {:.4}", episode_idx + 1, val.accuracy, test.accuracy);
        }
    }
}
