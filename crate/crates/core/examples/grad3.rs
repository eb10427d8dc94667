//! Convergence scan at the worst index of a kink-afflicted seed.
use nishan::protonet::{episode_gradients, forward_episode, EpisodeTensors, HeadConfig, HeadParams};
use nishan::rng::seeded_rng;
use rand::Rng;

fn main() {
    let cfg = HeadConfig { d_h: 16, heads: 4, dropout_rate: 0.0, metric_temperature: 0.1, ucl_temperature: 0.05, hidden_size: 300 };
    let params = HeadParams::init(&cfg, 3123);
    let mut rng = seeded_rng(238);
    let mut rand_emb = |l: usize| nishan::SequenceEmbedding::new(
        ndarray::Array2::from_shape_fn((l, 16), |_| rng.gen_range(-1.0..1.0)), vec![true; l]);
    let tensors = EpisodeTensors {
        support: (0..3).map(|_| (0..2).map(|_| rand_emb(5)).collect()).collect(),
        query: (0..6).map(|_| rand_emb(5)).collect(),
        query_labels: vec![0, 0, 1, 1, 2, 2],
    };
    let (_, grads) = episode_gradients(&tensors, &params, &cfg, None).unwrap();
    let flat = params.flatten();
    let analytic = grads.flatten();
    let loss_fn = |p: &[f64]| {
        let mut probe = params.clone();
        probe.set_from_flat(p);
        forward_episode(&tensors, &probe, &cfg, None).unwrap().loss.total
    };
    // find worst index at h=1e-5
    let mut probe = flat.clone();
    let mut worst = (0.0f64, 0usize);
    for i in 0..flat.len() {
        let orig = probe[i];
        probe[i] = orig + 1e-5; let plus = loss_fn(&probe);
        probe[i] = orig - 1e-5; let minus = loss_fn(&probe);
        probe[i] = orig;
        let fd = (plus - minus) / 2e-5;
        let err = (analytic[i] - fd).abs() / analytic[i].abs().max(fd.abs()).max(1e-4);
        if err > worst.0 { worst = (err, i); }
    }
    let idx = worst.1;
    println!("worst err {:.3e} at {idx}", worst.0);
    for h in [1e-5, 1e-6, 1e-7, 1e-8] {
        let orig = probe[idx];
        probe[idx] = orig + h; let plus = loss_fn(&probe);
        probe[idx] = orig - h; let minus = loss_fn(&probe);
        probe[idx] = orig;
        let fd = (plus - minus) / (2.0 * h);
        println!("h {h:.0e}: fd {fd:.10e} analytic {:.10e}", analytic[idx]);
    }
}
