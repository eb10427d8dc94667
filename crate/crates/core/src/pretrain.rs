//! Encoder re-training on unlabeled text: masked-token prediction plus a
//! self-supervised contrastive objective over stopword-stripped, shuffled
//! views of the same utterance. The two losses are added and optimized
//! jointly.

use crate::corpus::{Corpus, Utterance};
use crate::encoder::{ToyEncoder, Vocab, MASK};
use crate::error::{Error, Result};
use crate::rng::{indexed_seed, seeded_rng};
use crate::tape::Tape;
use crate::train::Adam;
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use std::collections::HashSet;

/// Token corruption policy: a fixed fraction of real tokens is selected for
/// prediction; each selected token becomes the mask marker, a random vocab
/// token, or stays unchanged.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct MaskingPolicy {
    pub select_rate: f64,
    pub mask_frac: f64,
    pub random_frac: f64,
    pub keep_frac: f64,
    pub seed: u64,
}

impl Default for MaskingPolicy {
    fn default() -> Self {
        Self {
            select_rate: 0.25,
            mask_frac: 0.8,
            random_frac: 0.1,
            keep_frac: 0.1,
            seed: 0,
        }
    }
}

impl MaskingPolicy {
    pub fn validate(&self) -> Result<()> {
        if (self.mask_frac + self.random_frac + self.keep_frac - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig(
                "mask, random and keep fractions must sum to 1".into(),
            ));
        }
        if self.select_rate <= 0.0 || self.select_rate >= 1.0 {
            return Err(Error::InvalidConfig("select_rate must lie in (0,1)".into()));
        }
        Ok(())
    }
}

/// One corrupted sequence with the positions to predict and their originals.
#[derive(Debug, Clone)]
pub struct MlmBatch {
    pub corrupted_tokens: Vec<String>,
    pub target_positions: Vec<usize>,
    pub target_tokens: Vec<String>,
}

/// Corrupt `tokens` under `policy`. Exactly `max(1, round(select_rate * n))`
/// positions are chosen uniformly without replacement; each selected token
/// independently becomes the mask marker (`mask_frac`), a uniformly random
/// non-reserved vocab token (`random_frac`), or stays as is.
pub fn apply_masking(
    tokens: &[String],
    policy: &MaskingPolicy,
    vocab: &Vocab,
    rng: &mut ChaCha8Rng,
) -> MlmBatch {
    assert!(!tokens.is_empty(), "masking needs at least one real token");
    let n = tokens.len();
    let n_select = ((policy.select_rate * n as f64).round() as usize).clamp(1, n);
    let mut positions: Vec<usize> = (0..n).collect();
    positions.shuffle(rng);
    positions.truncate(n_select);
    positions.sort_unstable();

    let mut corrupted = tokens.to_vec();
    let mut target_tokens = Vec::with_capacity(n_select);
    for &pos in &positions {
        target_tokens.push(tokens[pos].clone());
        let u: f64 = rng.gen();
        if u < policy.mask_frac {
            corrupted[pos] = MASK.to_owned();
        } else if u < policy.mask_frac + policy.random_frac {
            let real = vocab.len() - vocab.reserved();
            let pick = vocab.reserved() + rng.gen_range(0..real.max(1));
            corrupted[pos] = vocab.tokens[pick.min(vocab.len() - 1)].clone();
        }
        // else: keep the original token
    }
    MlmBatch {
        corrupted_tokens: corrupted,
        target_positions: positions,
        target_tokens,
    }
}

/// Mean negative log softmax probability of the true token, one logit row
/// per target.
pub fn mlm_loss(logits: &Array2<f64>, target_ids: &[usize]) -> Result<f64> {
    if target_ids.is_empty() || logits.nrows() == 0 {
        return Err(Error::EmptyTargets);
    }
    if logits.nrows() != target_ids.len() {
        return Err(Error::DimensionMismatch {
            expected: target_ids.len(),
            got: logits.nrows(),
        });
    }
    let probs = crate::tape::softmax_rows_masked(logits, None);
    let mut acc = 0.0;
    for (r, &y) in target_ids.iter().enumerate() {
        if y >= logits.ncols() {
            return Err(Error::IndexOutOfRange {
                index: y,
                classes: logits.ncols(),
            });
        }
        acc -= probs[(r, y)].max(f64::MIN_POSITIVE).ln();
    }
    Ok(acc / target_ids.len() as f64)
}

/// Anchor/positive view pair of one utterance.
#[derive(Debug, Clone)]
pub struct SclViews {
    pub anchor_tokens: Vec<String>,
    pub positive_tokens: Vec<String>,
}

/// The bundled Urdu stopword list (one token per line, NFC).
pub fn default_stopwords() -> HashSet<String> {
    load_stopwords_str(include_str!("../fixtures/stopwords_ur.txt"))
}

/// Parse a stopword file: one token per line, blank lines ignored.
pub fn load_stopwords_str(text: &str) -> HashSet<String> {
    use unicode_normalization::UnicodeNormalization;
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(|l| l.nfc().collect())
        .collect()
}

/// Build the contrastive views: the anchor is the original token sequence;
/// the positive removes stopwords and shuffles what remains.
pub fn make_scl_views(
    utterance: &Utterance,
    stopwords: &HashSet<String>,
    rng: &mut ChaCha8Rng,
) -> Result<SclViews> {
    let mut positive: Vec<String> = utterance
        .tokens
        .iter()
        .filter(|t| !stopwords.contains(*t))
        .cloned()
        .collect();
    if positive.is_empty() {
        return Err(Error::AllStopwords);
    }
    positive.shuffle(rng);
    Ok(SclViews {
        anchor_tokens: utterance.tokens.clone(),
        positive_tokens: positive,
    })
}

/// In-batch contrastive loss: for row i the positive is `positives[i]` and
/// the negatives are the other positive rows; cosine similarities are
/// divided by `temperature`.
pub fn scl_loss(anchors: &Array2<f64>, positives: &Array2<f64>, temperature: f64) -> Result<f64> {
    let b = anchors.nrows();
    if b < 2 {
        return Err(Error::BatchTooSmall(b));
    }
    if positives.nrows() != b || positives.ncols() != anchors.ncols() {
        return Err(Error::DimensionMismatch {
            expected: b,
            got: positives.nrows(),
        });
    }
    if temperature <= 0.0 {
        return Err(Error::InvalidConfig("temperature must be positive".into()));
    }
    let mut scores = Array2::zeros((b, b));
    for i in 0..b {
        for j in 0..b {
            let qi: Vec<f64> = anchors.row(i).to_vec();
            let pj: Vec<f64> = positives.row(j).to_vec();
            scores[(i, j)] =
                crate::similarity::score(crate::similarity::SimilarityKind::Cosine, &qi, &pj)?
                    / temperature;
        }
    }
    let probs = crate::tape::softmax_rows_masked(&scores, None);
    let mut acc = 0.0;
    for i in 0..b {
        acc -= probs[(i, i)].max(f64::MIN_POSITIVE).ln();
    }
    Ok(acc / b as f64)
}

/// Loss components of one re-training step; `total = mlm + scl` exactly.
#[derive(Debug, Clone, Copy)]
pub struct PretrainLoss {
    pub step: usize,
    pub mlm: f64,
    pub scl: f64,
    pub total: f64,
}

/// Re-training schedule.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct RetrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub scl_temperature: f64,
    pub seed: u64,
}

impl Default for RetrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 64,
            learning_rate: 1e-5,
            scl_temperature: 0.05,
            seed: 0,
        }
    }
}

/// Render the loss history as `step,mlm,scl,total` CSV.
pub fn loss_history_csv(history: &[PretrainLoss]) -> String {
    let mut out = String::from("step,mlm,scl,total\n");
    for row in history {
        out.push_str(&format!("{},{},{},{}\n", row.step, row.mlm, row.scl, row.total));
    }
    out
}

/// Jointly optimize the masked-token and contrastive objectives over the
/// corpus. Parameters update in place; the returned history has one entry
/// per optimizer step. Zero epochs leave the encoder untouched.
pub fn retrain(
    encoder: &mut ToyEncoder,
    corpus: &Corpus,
    policy: &MaskingPolicy,
    config: &RetrainConfig,
    stopwords: &HashSet<String>,
) -> Result<Vec<PretrainLoss>> {
    policy.validate()?;
    if config.batch_size < 2 {
        return Err(Error::BatchTooSmall(config.batch_size));
    }
    let mut history = Vec::new();
    let mut adam = Adam::new(encoder.params.flatten().len());
    let mut step = 0usize;

    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..corpus.len()).collect();
        order.shuffle(&mut seeded_rng(indexed_seed(config.seed, "retrain-epoch", epoch as u64)));

        let mut start = 0;
        while start < order.len() {
            let mut end = (start + config.batch_size).min(order.len());
            // avoid a trailing singleton: the contrastive term needs pairs
            if order.len() - end == 1 {
                end = order.len();
            }
            let batch: Vec<&Utterance> =
                order[start..end].iter().map(|&i| &corpus.utterances[i]).collect();
            start = end;
            if batch.len() < 2 {
                continue;
            }

            let mut rng = seeded_rng(indexed_seed(config.seed, "retrain-step", step as u64));
            let loss = retrain_step(encoder, &batch, policy, config, stopwords, &mut adam, &mut rng)?;
            history.push(PretrainLoss {
                step,
                mlm: loss.0,
                scl: loss.1,
                total: loss.0 + loss.1,
            });
            step += 1;
        }
    }
    Ok(history)
}

fn truncated(tokens: &[String], l_seq: usize) -> Vec<String> {
    tokens[..tokens.len().min(l_seq)].to_vec()
}

fn retrain_step(
    encoder: &mut ToyEncoder,
    batch: &[&Utterance],
    policy: &MaskingPolicy,
    config: &RetrainConfig,
    stopwords: &HashSet<String>,
    adam: &mut Adam,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, f64)> {
    let mut tape = Tape::new();
    let vars = encoder.vars(&mut tape);

    // masked-token term: one logit row per selected position across the batch
    let mut logit_rows = Vec::new();
    let mut target_ids = Vec::new();
    for utt in batch {
        let tokens = truncated(&utt.tokens, encoder.l_seq);
        let masked = apply_masking(&tokens, policy, &encoder.vocab, rng);
        let ids = encoder.token_ids(&masked.corrupted_tokens);
        let valid = vec![true; ids.len()];
        let ctx = encoder.contextualize_on_tape(&mut tape, &vars, &ids, &valid);
        let picked = tape.select_rows(ctx, &masked.target_positions);
        let logits = tape.matmul(picked, vars.w_out);
        logit_rows.push(tape.add_row(logits, vars.b_out));
        for tok in &masked.target_tokens {
            target_ids.push(encoder.vocab.id(tok));
        }
    }
    let all_logits = tape.concat_rows(&logit_rows);
    let mlm = tape.cross_entropy_rows(all_logits, &target_ids);

    // contrastive term over pooled anchor/positive sentence vectors
    let mut anchor_rows = Vec::with_capacity(batch.len());
    let mut positive_rows = Vec::with_capacity(batch.len());
    for utt in batch {
        let views = match make_scl_views(utt, stopwords, rng) {
            Ok(v) => v,
            // an utterance of pure stopwords falls back to a plain shuffle
            Err(Error::AllStopwords) => make_scl_views(utt, &HashSet::new(), rng)?,
            Err(e) => return Err(e),
        };
        let encode_pooled = |tokens: &[String], tape: &mut Tape| {
            let toks = truncated(tokens, encoder.l_seq);
            let ids = encoder.token_ids(&toks);
            let valid = vec![true; ids.len()];
            let ctx = encoder.contextualize_on_tape(tape, &vars, &ids, &valid);
            tape.mean_rows(ctx, &valid)
        };
        anchor_rows.push(encode_pooled(&views.anchor_tokens, &mut tape));
        positive_rows.push(encode_pooled(&views.positive_tokens, &mut tape));
    }
    let anchors = tape.concat_rows(&anchor_rows);
    let positives = tape.concat_rows(&positive_rows);
    let sims = tape.cosine_rows(anchors, positives);
    let scaled = tape.scale(sims, 1.0 / config.scl_temperature);
    let diag: Vec<usize> = (0..batch.len()).collect();
    let scl = tape.cross_entropy_rows(scaled, &diag);

    let total = tape.add(mlm, scl);
    let grads_by_var = tape.backward(total);

    let ordered_vars = [
        vars.tok_emb,
        vars.pos_emb,
        vars.w_q,
        vars.w_k,
        vars.w_v,
        vars.w_o,
        vars.b_o,
        vars.w_out,
        vars.b_out,
    ];
    let mut grad_flat = Vec::new();
    for v in ordered_vars {
        grad_flat.extend(grads_by_var[v].iter().copied());
    }
    let mut flat = encoder.params.flatten();
    adam.step(&mut flat, &grad_flat, config.learning_rate);
    encoder.params.set_from_flat(&flat);

    Ok((tape.scalar(mlm), tape.scalar(scl)))
}
