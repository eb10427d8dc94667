//! Scan instance seeds for a finite-difference check clear of pooling ties.

use nishan::protonet::{episode_gradients, forward_episode, EpisodeTensors, HeadConfig, HeadParams};
use nishan::rng::seeded_rng;
use nishan::train::grad_check;
use rand::Rng;

fn main() {
    let cfg = HeadConfig {
        d_h: 16,
        heads: 4,
        dropout_rate: 0.0,
        metric_temperature: 0.1,
        ucl_temperature: 0.05,
        hidden_size: 300,
    };
    for seed in 0..12u64 {
        let params = HeadParams::init(&cfg, seed.wrapping_mul(1000) + 123);
        let mut rng = seeded_rng(seed.wrapping_mul(77) + 7);
        let mut rand_emb = |l: usize| {
            nishan::SequenceEmbedding::new(
                ndarray::Array2::from_shape_fn((l, 16), |_| rng.gen_range(-1.0..1.0)),
                vec![true; l],
            )
        };
        let tensors = EpisodeTensors {
            support: (0..3).map(|_| (0..2).map(|_| rand_emb(5)).collect()).collect(),
            query: (0..6).map(|_| rand_emb(5)).collect(),
            query_labels: vec![0, 0, 1, 1, 2, 2],
        };
        let (_, grads) = episode_gradients(&tensors, &params, &cfg, None).unwrap();
        let flat = params.flatten();
        let loss_fn = |p: &[f64]| {
            let mut probe = params.clone();
            probe.set_from_flat(p);
            forward_episode(&tensors, &probe, &cfg, None).unwrap().loss.total
        };
        let err = grad_check(&flat, &grads.flatten(), loss_fn, 1e-5);
        println!("seed {seed}: max rel err {err:.3e}");
    }
}
