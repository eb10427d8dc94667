//! N-way K-shot episode construction and the episode-free test protocol.
//!
//! Every operation here is a pure function of its inputs and a seed, so
//! parallel evaluation reproduces serial results.

use crate::corpus::{Corpus, Utterance};
use crate::error::{Error, Result};
use crate::rng::seeded_rng;
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

/// Shape of one training episode.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct EpisodeSpec {
    pub n_way: usize,
    pub k_shot: usize,
    pub q_query: usize,
    pub seed: u64,
}

impl EpisodeSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_way < 2 || self.k_shot < 1 || self.q_query < 1 {
            return Err(Error::InvalidConfig(format!(
                "episode spec needs n_way >= 2, k_shot >= 1, q_query >= 1; got {self:?}"
            )));
        }
        Ok(())
    }
}

/// One sampled task: `n_way * k_shot` support samples to build prototypes
/// from and `n_way * q_query` query samples to classify. Class indices are
/// episode-local; `class_map` recovers the global labels.
#[derive(Debug, Clone)]
pub struct Episode {
    pub support: Vec<(Utterance, usize)>,
    pub query: Vec<(Utterance, usize)>,
    pub class_map: Vec<String>,
}

/// Fixed evaluation task: one seeded support draw per class, every other
/// sample of those classes as a query.
#[derive(Debug, Clone)]
pub struct TestTask {
    pub support: Vec<(Utterance, usize)>,
    pub query: Vec<(Utterance, usize)>,
    pub class_map: Vec<String>,
}

/// Debug dump of an episode's composition.
#[derive(Debug, serde::Serialize, serde::Deserialize)]
pub struct EpisodeDump {
    pub classes: Vec<String>,
    pub support_ids: Vec<String>,
    pub query_ids: Vec<String>,
    pub seed: u64,
}

impl Episode {
    pub fn dump(&self, seed: u64) -> EpisodeDump {
        EpisodeDump {
            classes: self.class_map.clone(),
            support_ids: self.support.iter().map(|(u, _)| u.id.clone()).collect(),
            query_ids: self.query.iter().map(|(u, _)| u.id.clone()).collect(),
            seed,
        }
    }
}

fn sorted_subset(class_subset: &[String]) -> Vec<String> {
    let mut labels = class_subset.to_vec();
    labels.sort();
    labels
}

/// Sample one episode: `n_way` classes drawn uniformly without replacement
/// from `class_subset`, then `k_shot + q_query` utterances per class without
/// replacement (first `k_shot` become support).
pub fn sample_episode(
    corpus: &Corpus,
    class_subset: &[String],
    spec: &EpisodeSpec,
    rng: &mut ChaCha8Rng,
) -> Result<Episode> {
    spec.validate()?;
    if class_subset.len() < spec.n_way {
        return Err(Error::InsufficientClasses {
            needed: spec.n_way,
            available: class_subset.len(),
        });
    }
    let mut labels = sorted_subset(class_subset);
    labels.shuffle(rng);
    labels.truncate(spec.n_way);

    let mut support = Vec::with_capacity(spec.n_way * spec.k_shot);
    let mut query = Vec::with_capacity(spec.n_way * spec.q_query);
    for (class_idx, label) in labels.iter().enumerate() {
        let mut indices = corpus.indices_of(label);
        if indices.len() < spec.k_shot + spec.q_query {
            return Err(Error::InsufficientSamples(label.clone()));
        }
        indices.shuffle(rng);
        for &i in &indices[..spec.k_shot] {
            support.push((corpus.utterances[i].clone(), class_idx));
        }
        for &i in &indices[spec.k_shot..spec.k_shot + spec.q_query] {
            query.push((corpus.utterances[i].clone(), class_idx));
        }
    }
    Ok(Episode {
        support,
        query,
        class_map: labels,
    })
}

/// Build the fixed evaluation task over `test_classes`: a seeded draw of
/// `k_shot` support samples per class; all remaining samples of those
/// classes form the query set.
pub fn test_protocol(
    corpus: &Corpus,
    test_classes: &[String],
    k_shot: usize,
    seed: u64,
) -> Result<TestTask> {
    let labels = sorted_subset(test_classes);
    let mut rng = seeded_rng(seed);
    let mut support = Vec::new();
    let mut query = Vec::new();
    for (class_idx, label) in labels.iter().enumerate() {
        let mut indices = corpus.indices_of(label);
        if indices.len() <= k_shot {
            return Err(Error::InsufficientSamples(label.clone()));
        }
        indices.shuffle(&mut rng);
        for &i in &indices[..k_shot] {
            support.push((corpus.utterances[i].clone(), class_idx));
        }
        for &i in &indices[k_shot..] {
            query.push((corpus.utterances[i].clone(), class_idx));
        }
    }
    Ok(TestTask {
        support,
        query,
        class_map: labels,
    })
}

/// Stratified per-class split into a train and a test corpus. The train
/// share is rounded half toward train and clamped so both halves keep at
/// least one sample of every class.
pub fn standard_split(
    corpus: &Corpus,
    train_fraction: f64,
    seed: u64,
) -> Result<(Corpus, Corpus)> {
    if !(0.0..1.0).contains(&train_fraction) || train_fraction == 0.0 {
        return Err(Error::InvalidConfig(format!(
            "train_fraction must lie in (0,1), got {train_fraction}"
        )));
    }
    let mut rng = seeded_rng(seed);
    let mut labels = corpus.label_vocab.clone();
    labels.sort();
    let mut train = Vec::new();
    let mut test = Vec::new();
    for label in &labels {
        let mut indices = corpus.indices_of(label);
        if indices.len() < 2 {
            return Err(Error::ClassTooSmall(label.clone()));
        }
        indices.shuffle(&mut rng);
        let raw = (train_fraction * indices.len() as f64).round() as usize;
        let n_train = raw.clamp(1, indices.len() - 1);
        for &i in &indices[..n_train] {
            train.push(corpus.utterances[i].clone());
        }
        for &i in &indices[n_train..] {
            test.push(corpus.utterances[i].clone());
        }
    }
    Ok((
        Corpus::from_utterances(train)?,
        Corpus::from_utterances(test)?,
    ))
}
