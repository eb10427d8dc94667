//! Instrumented training loop: watch gradient norms and fused-value spikes.

use nishan::encoder::EncoderBackend;
use nishan::episodes::{sample_episode, standard_split, EpisodeSpec};
use nishan::protonet::{episode_gradients, HeadConfig, HeadParams};
use nishan::rng::{indexed_seed, seeded_rng, sub_seed};
use nishan::synthetic::{cluster_corpus, cluster_encoder, ClusterSpec};
use nishan::train::{Adam, Pipeline};

fn main() {
    let spec = ClusterSpec {
        samples_per_class: 90,
        ..ClusterSpec::default()
    };
    let corpus = cluster_corpus(&spec);
    let (train_half, _) = standard_split(&corpus, 0.8, 11).unwrap();
    let head = HeadConfig {
        d_h: spec.d_h,
        ucl_temperature: 0.05,
        ..HeadConfig::default()
    };
    let pipeline = Pipeline {
        encoder: EncoderBackend::Toy(cluster_encoder(&spec, &corpus)),
        l_seq: spec.l_seq,
        head,
    };
    let seed = 1u64;
    let mut params = HeadParams::init(&head, sub_seed(seed, "head-init"));
    let mut adam = Adam::new(params.flatten().len());
    let ep = EpisodeSpec { n_way: 4, k_shot: 5, q_query: 5, seed };

    let mut max_grad_seen = 0.0f64;
    for episode_idx in 0..2000usize {
        let mut rng = seeded_rng(indexed_seed(ep.seed, "episode", episode_idx as u64));
        let episode = sample_episode(&train_half, &corpus.label_vocab, &ep, &mut rng).unwrap();
        let tensors = pipeline
            .episode_tensors(&episode.support, &episode.query, episode.class_map.len())
            .unwrap();
        let mut drop_rng = seeded_rng(indexed_seed(seed, "dropout", episode_idx as u64));
        let (out, grads) =
            episode_gradients(&tensors, &params, &pipeline.head, Some(&mut drop_rng)).unwrap();
        let gflat = grads.flatten();
        let gnorm = gflat.iter().map(|g| g * g).sum::<f64>().sqrt();
        max_grad_seen = max_grad_seen.max(gnorm);
        let mut flat = params.flatten();
        adam.step(&mut flat, &gflat, 3e-4);
        params.set_from_flat(&flat);

        if episode_idx % 100 == 0 || gnorm > 100.0 {
            let max_reps = out
                .prototypes
                .iter()
                .chain(out.query_reps.iter())
                .fold(0.0f64, |m, &v| m.max(v.abs()));
            println!(
                "ep {episode_idx:4}: ce {:8.4} ucl1 {:7.4} ucl2 {:7.4} gnorm {gnorm:10.2} max|rep| {max_reps:9.2}",
                out.loss.ce, out.loss.ucl1, out.loss.ucl2
            );
        }
    }
    println!("max grad norm over run: {max_grad_seen:.1}");
}
