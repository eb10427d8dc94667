//! Deterministic synthetic fixtures: a cluster benchmark whose encoder
//! embeddings form well-separated Gaussian clusters, and a marker-format
//! dataset mirroring a realistic skewed intent distribution.

use crate::corpus::Corpus;
use crate::encoder::{ToyEncoder, Vocab, PAD_ID};
use crate::rng::{seeded_rng, sub_seed};
use crate::Utterance;
use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal};

/// Shape of the cluster benchmark.
#[derive(Debug, Clone, Copy)]
pub struct ClusterSpec {
    pub n_classes: usize,
    pub samples_per_class: usize,
    pub tokens_per_class: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub l_seq: usize,
    pub d_h: usize,
    /// Minimum pairwise center distance divided by the within-cluster
    /// standard deviation.
    pub separation: f64,
    pub seed: u64,
}

impl Default for ClusterSpec {
    fn default() -> Self {
        Self {
            n_classes: 8,
            samples_per_class: 40,
            tokens_per_class: 12,
            min_len: 4,
            max_len: 8,
            l_seq: 10,
            d_h: 32,
            separation: 8.0,
            seed: 0,
        }
    }
}

fn class_token(class: usize, j: usize) -> String {
    format!("w{class}_{j}")
}

/// Corpus where each class draws its tokens from a disjoint pool.
pub fn cluster_corpus(spec: &ClusterSpec) -> Corpus {
    let mut rng = seeded_rng(sub_seed(spec.seed, "cluster-corpus"));
    let mut utterances = Vec::new();
    for class in 0..spec.n_classes {
        for i in 0..spec.samples_per_class {
            let len = rng.gen_range(spec.min_len..=spec.max_len);
            let tokens: Vec<String> = (0..len)
                .map(|_| class_token(class, rng.gen_range(0..spec.tokens_per_class)))
                .collect();
            utterances.push(Utterance {
                id: format!("c{class}-{i}"),
                raw_text: tokens.join(" "),
                tokens,
                label: format!("intent{class:02}"),
            });
        }
    }
    Corpus::from_utterances(utterances).expect("non-empty by construction")
}

/// Encoder whose token table places every class in its own Gaussian cluster:
/// random unit-scale centers, token noise sized so the minimum pairwise
/// center distance is `separation` times the within-cluster sigma. The
/// output mixing starts at zero, so initial embeddings are exactly token
/// plus positional rows.
pub fn cluster_encoder(spec: &ClusterSpec, corpus: &Corpus) -> ToyEncoder {
    let vocab = Vocab::from_corpus(corpus);
    let mut encoder = ToyEncoder::new(vocab, spec.l_seq, spec.d_h, sub_seed(spec.seed, "encoder"));

    let mut rng = seeded_rng(sub_seed(spec.seed, "cluster-centers"));
    let normal = Normal::new(0.0, 1.0).expect("valid normal");
    let centers: Vec<Vec<f64>> = (0..spec.n_classes)
        .map(|_| (0..spec.d_h).map(|_| normal.sample(&mut rng)).collect())
        .collect();
    let mut min_dist = f64::INFINITY;
    for a in 0..spec.n_classes {
        for b in a + 1..spec.n_classes {
            let d: f64 = centers[a]
                .iter()
                .zip(&centers[b])
                .map(|(x, y)| (x - y).powi(2))
                .sum::<f64>()
                .sqrt();
            min_dist = min_dist.min(d);
        }
    }
    let sigma = min_dist / spec.separation;

    encoder.params.pos_emb.fill(0.0);
    for class in 0..spec.n_classes {
        for j in 0..spec.tokens_per_class {
            let id = encoder.vocab.id(&class_token(class, j));
            for c in 0..spec.d_h {
                encoder.params.tok_emb[(id, c)] = centers[class][c] + sigma * normal.sample(&mut rng);
            }
        }
    }
    for c in 0..spec.d_h {
        encoder.params.tok_emb[(PAD_ID, c)] = 0.0;
    }
    encoder
}

/// Within-cluster sigma actually used by [`cluster_encoder`] for a given
/// spec (handy for assertions about the generated geometry).
pub fn cluster_geometry(spec: &ClusterSpec, encoder: &ToyEncoder) -> (f64, f64) {
    // recover per-class means, then min center distance and max deviation
    let mut centers = vec![vec![0.0f64; spec.d_h]; spec.n_classes];
    for class in 0..spec.n_classes {
        for j in 0..spec.tokens_per_class {
            let id = encoder.vocab.id(&class_token(class, j));
            for c in 0..spec.d_h {
                centers[class][c] += encoder.params.tok_emb[(id, c)] / spec.tokens_per_class as f64;
            }
        }
    }
    let mut min_dist = f64::INFINITY;
    for a in 0..spec.n_classes {
        for b in a + 1..spec.n_classes {
            let d: f64 = centers[a]
                .iter()
                .zip(&centers[b])
                .map(|(x, y)| (x - y).powi(2))
                .sum::<f64>()
                .sqrt();
            min_dist = min_dist.min(d);
        }
    }
    let mut var_acc = 0.0;
    let mut count = 0usize;
    for class in 0..spec.n_classes {
        for j in 0..spec.tokens_per_class {
            let id = encoder.vocab.id(&class_token(class, j));
            for c in 0..spec.d_h {
                var_acc += (encoder.params.tok_emb[(id, c)] - centers[class][c]).powi(2);
                count += 1;
            }
        }
    }
    (min_dist, (var_acc / count as f64).sqrt())
}

/// Class sizes of the skewed marker-format fixture: sixteen usable classes
/// totalling 5836 samples, plus two classes small enough to be filtered out.
pub const SKEWED_CLASS_SIZES: [(&str, usize); 18] = [
    ("flight", 3666),
    ("airfare", 403),
    ("ground_service", 385),
    ("airline", 290),
    ("abbreviation", 211),
    ("aircraft", 156),
    ("flight_time", 147),
    ("quantity", 130),
    ("distance", 93),
    ("airport", 81),
    ("city", 67),
    ("ground_fare", 60),
    ("capacity", 51),
    ("flight_no", 38),
    ("meal", 33),
    ("restriction", 25),
    ("cheapest", 6),
    ("day_name", 4),
];

/// Marker-format lines (`BOS ... EOS label`) with the skewed distribution
/// above. Deterministic for a given seed.
pub fn skewed_marker_lines(seed: u64) -> Vec<String> {
    let mut rng = seeded_rng(sub_seed(seed, "marker-fixture"));
    let mut lines = Vec::new();
    for (label, count) in SKEWED_CLASS_SIZES {
        for _ in 0..count {
            let len = rng.gen_range(3..=9);
            let tokens: Vec<String> =
                (0..len).map(|_| format!("q{}", rng.gen_range(0..880))).collect();
            lines.push(format!("BOS {} EOS {label}", tokens.join(" ")));
        }
    }
    lines
}

/// Embedding-store variant of the cluster benchmark: per-utterance matrices
/// whose rows are the class center plus Gaussian noise.
pub fn cluster_store(spec: &ClusterSpec, corpus: &Corpus) -> crate::encoder::EmbeddingStore {
    let encoder = cluster_encoder(spec, corpus);
    let mut store = crate::encoder::EmbeddingStore::new();
    for utt in &corpus.utterances {
        let ids = encoder.token_ids(&utt.tokens);
        let rows = ids.len().min(spec.l_seq);
        let mut m = Array2::zeros((rows, spec.d_h));
        for (r, &id) in ids.iter().take(rows).enumerate() {
            for c in 0..spec.d_h {
                m[(r, c)] = encoder.params.tok_emb[(id, c)];
            }
        }
        store.insert(utt.id.clone(), m);
    }
    store
}
