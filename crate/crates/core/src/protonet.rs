//! Prototype attention head.
//!
//! Support embeddings pass through two attention arrangements — token-major
//! self-attention per sentence and a feature-major arrangement per class —
//! whose pooled, normalized outputs are fused elementwise by a harmonic mean
//! into per-sentence prototype candidates. A weighting layer collapses the K
//! candidates of each class into one prototype; a shared feedforward
//! projection then maps prototypes and query representations into a common
//! space where temperature-scaled cosine scores drive a cross-entropy loss.
//! Two dropout-perturbed passes feed contrastive regularizers over the
//! prototypes and over the query representations.
//!
//! The support and query paths share one set of Q/K/V transforms and one
//! projection; layer norms are per site (sentence, class, query).

use crate::encoder::SequenceEmbedding;
use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Hyperparameters of the head.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct HeadConfig {
    pub d_h: usize,
    pub heads: usize,
    pub dropout_rate: f64,
    /// Temperature `t` dividing metric scores.
    pub metric_temperature: f64,
    /// Temperature `tau` inside the contrastive regularizers.
    pub ucl_temperature: f64,
    /// Width of the shared projection's middle layer.
    pub hidden_size: usize,
}

impl Default for HeadConfig {
    fn default() -> Self {
        Self {
            d_h: 64,
            heads: 4,
            dropout_rate: 0.1,
            metric_temperature: 0.1,
            ucl_temperature: 0.05,
            hidden_size: 300,
        }
    }
}

impl HeadConfig {
    pub fn d_head(&self) -> usize {
        self.d_h / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || self.d_h % self.heads != 0 {
            return Err(Error::InvalidConfig(format!(
                "heads ({}) must divide d_h ({})",
                self.heads, self.d_h
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::InvalidConfig("dropout_rate must lie in [0,1)".into()));
        }
        if self.metric_temperature <= 0.0 || self.ucl_temperature <= 0.0 {
            return Err(Error::InvalidConfig("temperatures must be positive".into()));
        }
        if self.hidden_size == 0 {
            return Err(Error::InvalidConfig("hidden_size must be positive".into()));
        }
        Ok(())
    }
}

/// Q/K/V transforms shared by every attention site, plus per-site layer
/// norm gains and biases.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    pub w_q: Array2<f64>,
    pub b_q: Array2<f64>,
    pub w_k: Array2<f64>,
    pub b_k: Array2<f64>,
    pub w_v: Array2<f64>,
    pub b_v: Array2<f64>,
    pub ln_sent_gain: Array2<f64>,
    pub ln_sent_bias: Array2<f64>,
    pub ln_class_gain: Array2<f64>,
    pub ln_class_bias: Array2<f64>,
    pub ln_query_gain: Array2<f64>,
    pub ln_query_bias: Array2<f64>,
}

/// Prototype weighting layer: scores each of a class's K fused sentence
/// vectors and softmax-combines them into one prototype.
#[derive(Debug, Clone, PartialEq)]
pub struct RefineParams {
    pub w: Array2<f64>,
    pub b: Array2<f64>,
}

/// Shared two-layer feedforward projection into the common metric space.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectParams {
    pub w1: Array2<f64>,
    pub b1: Array2<f64>,
    pub w2: Array2<f64>,
    pub b2: Array2<f64>,
}

/// All trainable tensors of the head.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams {
    pub attention: AttentionParams,
    pub refine: RefineParams,
    pub project: ProjectParams,
}

impl HeadParams {
    /// Uniform `1/sqrt(d_h)` initialization for the transforms and the
    /// projection; zero for the weighting layer (uniform sentence weights);
    /// unit gains and zero biases for the layer norms.
    pub fn init(cfg: &HeadConfig, seed: u64) -> Self {
        let mut rng = crate::rng::seeded_rng(seed);
        let s = 1.0 / (cfg.d_h as f64).sqrt();
        let mut uniform =
            |r: usize, c: usize| Array2::from_shape_fn((r, c), |_| rng.gen_range(-s..s));
        let d = cfg.d_h;
        let attention = AttentionParams {
            w_q: uniform(d, d),
            b_q: Array2::zeros((1, d)),
            w_k: uniform(d, d),
            b_k: Array2::zeros((1, d)),
            w_v: uniform(d, d),
            b_v: Array2::zeros((1, d)),
            ln_sent_gain: Array2::ones((1, d)),
            ln_sent_bias: Array2::zeros((1, d)),
            ln_class_gain: Array2::ones((1, d)),
            ln_class_bias: Array2::zeros((1, d)),
            ln_query_gain: Array2::ones((1, d)),
            ln_query_bias: Array2::zeros((1, d)),
        };
        let refine = RefineParams {
            w: Array2::zeros((d, d)),
            b: Array2::zeros((1, d)),
        };
        let project = ProjectParams {
            w1: uniform(d, cfg.hidden_size),
            b1: Array2::zeros((1, cfg.hidden_size)),
            w2: uniform(cfg.hidden_size, d),
            b2: Array2::zeros((1, d)),
        };
        Self {
            attention,
            refine,
            project,
        }
    }

    pub fn named(&self) -> Vec<(&'static str, &Array2<f64>)> {
        let a = &self.attention;
        vec![
            ("w_q", &a.w_q),
            ("b_q", &a.b_q),
            ("w_k", &a.w_k),
            ("b_k", &a.b_k),
            ("w_v", &a.w_v),
            ("b_v", &a.b_v),
            ("ln_sent_gain", &a.ln_sent_gain),
            ("ln_sent_bias", &a.ln_sent_bias),
            ("ln_class_gain", &a.ln_class_gain),
            ("ln_class_bias", &a.ln_class_bias),
            ("ln_query_gain", &a.ln_query_gain),
            ("ln_query_bias", &a.ln_query_bias),
            ("pi_w", &self.refine.w),
            ("pi_b", &self.refine.b),
            ("ad_w1", &self.project.w1),
            ("ad_b1", &self.project.b1),
            ("ad_w2", &self.project.w2),
            ("ad_b2", &self.project.b2),
        ]
    }

    pub fn named_mut(&mut self) -> Vec<(&'static str, &mut Array2<f64>)> {
        let a = &mut self.attention;
        vec![
            ("w_q", &mut a.w_q),
            ("b_q", &mut a.b_q),
            ("w_k", &mut a.w_k),
            ("b_k", &mut a.b_k),
            ("w_v", &mut a.w_v),
            ("b_v", &mut a.b_v),
            ("ln_sent_gain", &mut a.ln_sent_gain),
            ("ln_sent_bias", &mut a.ln_sent_bias),
            ("ln_class_gain", &mut a.ln_class_gain),
            ("ln_class_bias", &mut a.ln_class_bias),
            ("ln_query_gain", &mut a.ln_query_gain),
            ("ln_query_bias", &mut a.ln_query_bias),
            ("pi_w", &mut self.refine.w),
            ("pi_b", &mut self.refine.b),
            ("ad_w1", &mut self.project.w1),
            ("ad_b1", &mut self.project.b1),
            ("ad_w2", &mut self.project.w2),
            ("ad_b2", &mut self.project.b2),
        ]
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.named()
            .iter()
            .flat_map(|(_, t)| t.iter().copied())
            .collect()
    }

    pub fn set_from_flat(&mut self, flat: &[f64]) {
        let mut at = 0;
        for (_, t) in self.named_mut() {
            for v in t.iter_mut() {
                *v = flat[at];
                at += 1;
            }
        }
        assert_eq!(at, flat.len(), "flat parameter vector has wrong length");
    }

    /// Insert every tensor as a tape leaf.
    pub fn vars(&self, tape: &mut Tape) -> HeadVars {
        let mut ordered = Vec::new();
        for (_, t) in self.named() {
            ordered.push(tape.leaf(t.clone()));
        }
        HeadVars::from_ordered(&ordered)
    }
}

/// Tape handles for [`HeadParams`], in `named()` order.
#[derive(Debug, Clone, Copy)]
pub struct HeadVars {
    pub w_q: Var,
    pub b_q: Var,
    pub w_k: Var,
    pub b_k: Var,
    pub w_v: Var,
    pub b_v: Var,
    pub ln_sent_gain: Var,
    pub ln_sent_bias: Var,
    pub ln_class_gain: Var,
    pub ln_class_bias: Var,
    pub ln_query_gain: Var,
    pub ln_query_bias: Var,
    pub pi_w: Var,
    pub pi_b: Var,
    pub ad_w1: Var,
    pub ad_b1: Var,
    pub ad_w2: Var,
    pub ad_b2: Var,
}

impl HeadVars {
    fn from_ordered(vars: &[Var]) -> Self {
        assert_eq!(vars.len(), 18);
        Self {
            w_q: vars[0],
            b_q: vars[1],
            w_k: vars[2],
            b_k: vars[3],
            w_v: vars[4],
            b_v: vars[5],
            ln_sent_gain: vars[6],
            ln_sent_bias: vars[7],
            ln_class_gain: vars[8],
            ln_class_bias: vars[9],
            ln_query_gain: vars[10],
            ln_query_bias: vars[11],
            pi_w: vars[12],
            pi_b: vars[13],
            ad_w1: vars[14],
            ad_b1: vars[15],
            ad_w2: vars[16],
            ad_b2: vars[17],
        }
    }

    pub fn ordered(&self) -> [Var; 18] {
        [
            self.w_q,
            self.b_q,
            self.w_k,
            self.b_k,
            self.w_v,
            self.b_v,
            self.ln_sent_gain,
            self.ln_sent_bias,
            self.ln_class_gain,
            self.ln_class_bias,
            self.ln_query_gain,
            self.ln_query_bias,
            self.pi_w,
            self.pi_b,
            self.ad_w1,
            self.ad_b1,
            self.ad_w2,
            self.ad_b2,
        ]
    }
}

/// Embedded episode ready for the head: `support[class][shot]`, queries in
/// episode order, and the episode-local label of each query.
#[derive(Debug, Clone)]
pub struct EpisodeTensors {
    pub support: Vec<Vec<SequenceEmbedding>>,
    pub query: Vec<SequenceEmbedding>,
    pub query_labels: Vec<usize>,
}

impl EpisodeTensors {
    pub fn n_way(&self) -> usize {
        self.support.len()
    }

    pub fn validate(&self, d_h: usize) -> Result<()> {
        let n = self.support.len();
        if n < 2 {
            return Err(Error::BatchTooSmall(n));
        }
        let k = self.support.first().map_or(0, Vec::len);
        for class in &self.support {
            if class.len() != k || k == 0 {
                return Err(Error::InvalidConfig(
                    "support classes must share one shot count".into(),
                ));
            }
            for emb in class {
                if emb.d_h() != d_h {
                    return Err(Error::DimensionMismatch {
                        expected: d_h,
                        got: emb.d_h(),
                    });
                }
            }
        }
        for emb in &self.query {
            if emb.d_h() != d_h {
                return Err(Error::DimensionMismatch {
                    expected: d_h,
                    got: emb.d_h(),
                });
            }
        }
        if self.query.len() != self.query_labels.len() {
            return Err(Error::InvalidConfig("one label per query required".into()));
        }
        for &label in &self.query_labels {
            if label >= n {
                return Err(Error::IndexOutOfRange {
                    index: label,
                    classes: n,
                });
            }
        }
        Ok(())
    }
}

/// Loss components of one episode; `total` is their exact sum.
#[derive(Debug, Clone, Copy)]
pub struct LossBreakdown {
    pub ce: f64,
    pub ucl1: f64,
    pub ucl2: f64,
    pub total: f64,
}

/// Everything the head produces on one episode.
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    /// Temperature-scaled cosine scores, one row per query.
    pub scores: Array2<f64>,
    pub loss: LossBreakdown,
    pub predictions: Vec<usize>,
    /// Final prototypes (clean pass), one row per class.
    pub prototypes: Array2<f64>,
    /// Final query representations (clean pass).
    pub query_reps: Array2<f64>,
}

/// Full-width Q, K, V for row-vector inputs: `x . w + b`.
pub fn qkv_transform(tape: &mut Tape, x: Var, vars: &HeadVars) -> (Var, Var, Var) {
    let q = tape.matmul(x, vars.w_q);
    let q = tape.add_row(q, vars.b_q);
    let k = tape.matmul(x, vars.w_k);
    let k = tape.add_row(k, vars.b_k);
    let v = tape.matmul(x, vars.w_v);
    let v = tape.add_row(v, vars.b_v);
    (q, k, v)
}

/// `softmax(q . k^T / sqrt(key_width)) . v` with masked keys excluded.
/// Rows of the softmax sum to one over the valid keys.
pub fn scaled_attention(
    tape: &mut Tape,
    q: Var,
    k: Var,
    v: Var,
    key_mask: Option<&[bool]>,
) -> Result<Var> {
    if let Some(mask) = key_mask {
        if !mask.iter().any(|&m| m) {
            return Err(Error::AllMasked);
        }
    }
    let key_width = tape.value(k).ncols();
    let kt = tape.transpose(k);
    let scores = tape.matmul(q, kt);
    let scaled = tape.scale(scores, 1.0 / (key_width as f64).sqrt());
    let attn = tape.softmax_rows(scaled, key_mask);
    Ok(tape.matmul(attn, v))
}

/// Multi-head self-attention over one `L x d_h` sequence.
fn self_attention(
    tape: &mut Tape,
    x: Var,
    vars: &HeadVars,
    heads: usize,
    key_mask: &[bool],
) -> Result<Var> {
    let d_h = tape.value(x).ncols();
    let d_head = d_h / heads;
    let (q, k, v) = qkv_transform(tape, x, vars);
    let mut parts = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = tape.slice_cols(q, h * d_head, d_head);
        let kh = tape.slice_cols(k, h * d_head, d_head);
        let vh = tape.slice_cols(v, h * d_head, d_head);
        parts.push(scaled_attention(tape, qh, kh, vh, Some(key_mask))?);
    }
    Ok(tape.concat_cols(&parts))
}

/// Sentence-level support attention: per-sentence self-attention, max pool
/// over positions, then layer norm. One `1 x d_h` vector per sentence.
pub fn fiat_sentence_attention(
    tape: &mut Tape,
    sentence: Var,
    mask: &[bool],
    vars: &HeadVars,
    heads: usize,
) -> Result<Var> {
    let ctx = self_attention(tape, sentence, vars, heads, mask)?;
    let pooled = tape.max_pool_rows(ctx, mask);
    Ok(tape.layer_norm_rows(pooled, vars.ln_sent_gain, vars.ln_sent_bias))
}

/// Class-level support attention. The K sentences of a class are stacked
/// into one `(K*L) x d_h` block whose Q/K/V are re-read feature-major
/// (each of the d_head feature rows attends over the others), mapped back,
/// then max-pooled per sentence and layer-normalized. Padded positions are
/// zeroed so they contribute nothing to the feature-feature products.
pub fn fiat_class_attention(
    tape: &mut Tape,
    sentences: &[(Var, Vec<bool>)],
    vars: &HeadVars,
    heads: usize,
) -> Result<Vec<Var>> {
    let lens: Vec<usize> = sentences
        .iter()
        .map(|(s, _)| tape.value(*s).nrows())
        .collect();
    let sentence_vars: Vec<Var> = sentences.iter().map(|(s, _)| *s).collect();
    let stacked = tape.concat_rows(&sentence_vars);
    let mut mask = Vec::new();
    for (_, m) in sentences {
        mask.extend_from_slice(m);
    }
    if !mask.iter().any(|&m| m) {
        return Err(Error::AllMasked);
    }
    let d_h = tape.value(stacked).ncols();
    let d_head = d_h / heads;

    let (q, k, v) = qkv_transform(tape, stacked, vars);
    let q = tape.mask_rows(q, &mask);
    let k = tape.mask_rows(k, &mask);
    let v = tape.mask_rows(v, &mask);

    let mut parts = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = tape.slice_cols(q, h * d_head, d_head);
        let kh = tape.slice_cols(k, h * d_head, d_head);
        let vh = tape.slice_cols(v, h * d_head, d_head);
        // feature-major arrangement: rows indexed by feature
        let qt = tape.transpose(qh);
        let kt = tape.transpose(kh);
        let vt = tape.transpose(vh);
        let ctx = scaled_attention(tape, qt, kt, vt, None)?;
        parts.push(tape.transpose(ctx));
    }
    let merged = tape.concat_cols(&parts);

    let mut out = Vec::with_capacity(sentences.len());
    let mut at = 0;
    for (i, &len) in lens.iter().enumerate() {
        let rows = tape.slice_rows(merged, at, len);
        let pooled = tape.max_pool_rows(rows, &sentences[i].1);
        out.push(tape.layer_norm_rows(pooled, vars.ln_class_gain, vars.ln_class_bias));
        at += len;
    }
    Ok(out)
}

/// Query attention: self-attention, layer norm per position, max pool over
/// positions. Shares the Q/K/V transforms with the support paths.
pub fn query_attention(
    tape: &mut Tape,
    query: Var,
    mask: &[bool],
    vars: &HeadVars,
    heads: usize,
) -> Result<Var> {
    let ctx = self_attention(tape, query, vars, heads, mask)?;
    let normed = tape.layer_norm_rows(ctx, vars.ln_query_gain, vars.ln_query_bias);
    Ok(tape.max_pool_rows(normed, mask))
}

/// Collapse the `K x d_h` fused sentence block of one class into a single
/// prototype: per-sentence scores `mean(tanh(p . w + b))`, softmax over K,
/// weighted sum of the rows.
pub fn refine_prototype(tape: &mut Tape, fused: Var, vars: &HeadVars) -> Var {
    let d_h = tape.value(fused).ncols();
    let scored = tape.matmul(fused, vars.pi_w);
    let scored = tape.add_row(scored, vars.pi_b);
    let squashed = tape.tanh(scored);
    let ones = tape.leaf(Array2::ones((d_h, 1)));
    let sums = tape.matmul(squashed, ones);
    let means = tape.scale(sums, 1.0 / d_h as f64);
    let row = tape.transpose(means);
    let weights = tape.softmax_rows(row, None);
    tape.matmul(weights, fused)
}

/// The shared projection: `relu(x . w1 + b1) . w2 + b2`, applied identically
/// to prototypes and query representations.
pub fn project_shared(tape: &mut Tape, x: Var, vars: &HeadVars) -> Var {
    let h = tape.matmul(x, vars.ad_w1);
    let h = tape.add_row(h, vars.ad_b1);
    let h = tape.relu(h);
    let out = tape.matmul(h, vars.ad_w2);
    tape.add_row(out, vars.ad_b2)
}

/// Contrastive regularizer: for each row i of `reps`, the positive is row i
/// of `primed` and the negatives are the other primed rows; cosine
/// similarities divided by `tau`, mean negative log ratio.
pub fn contrastive_regularizer(tape: &mut Tape, reps: Var, primed: Var, tau: f64) -> Result<Var> {
    let b = tape.value(reps).nrows();
    if b < 2 {
        return Err(Error::BatchTooSmall(b));
    }
    let sims = tape.cosine_rows(reps, primed);
    let scaled = tape.scale(sims, 1.0 / tau);
    let labels: Vec<usize> = (0..b).collect();
    Ok(tape.cross_entropy_rows(scaled, &labels))
}

/// Temperature-scaled cosine scores of queries against prototypes.
pub fn metric_scores(tape: &mut Tape, query_reps: Var, prototypes: Var, t: f64) -> Var {
    let cos = tape.cosine_rows(query_reps, prototypes);
    tape.scale(cos, 1.0 / t)
}

/// Mean cross-entropy of the score rows against the true class indices.
pub fn intent_cross_entropy(tape: &mut Tape, scores: Var, labels: &[usize]) -> Result<Var> {
    let classes = tape.value(scores).ncols();
    for &l in labels {
        if l >= classes {
            return Err(Error::IndexOutOfRange { index: l, classes });
        }
    }
    Ok(tape.cross_entropy_rows(scores, labels))
}

fn apply_dropout(values: &Array2<f64>, rate: f64, rng: &mut ChaCha8Rng) -> Array2<f64> {
    if rate == 0.0 {
        return values.clone();
    }
    let keep = 1.0 - rate;
    values.mapv(|v| if rng.gen::<f64>() < keep { v / keep } else { 0.0 })
}

/// One full pass from embedded inputs to prototypes and query
/// representations. `dropout` perturbs the input embeddings (the primed
/// view); the clean pass passes `None`.
fn representation_pass(
    tape: &mut Tape,
    tensors: &EpisodeTensors,
    vars: &HeadVars,
    cfg: &HeadConfig,
    dropout: Option<&mut ChaCha8Rng>,
) -> Result<(Var, Var)> {
    let mut drop = dropout;
    let mut leaf = |tape: &mut Tape, emb: &SequenceEmbedding| -> Var {
        match drop.as_deref_mut() {
            Some(rng) => tape.leaf(apply_dropout(&emb.values, cfg.dropout_rate, rng)),
            None => tape.leaf(emb.values.clone()),
        }
    };

    let mut proto_rows = Vec::with_capacity(tensors.support.len());
    for class in &tensors.support {
        let mut sentence_vars = Vec::with_capacity(class.len());
        for emb in class {
            let x = leaf(tape, emb);
            sentence_vars.push((x, emb.mask.clone()));
        }
        let mut fused_rows = Vec::with_capacity(class.len());
        let class_side = fiat_class_attention(tape, &sentence_vars, vars, cfg.heads)?;
        for ((x, mask), i_cla) in sentence_vars.iter().zip(class_side) {
            let i_sent = fiat_sentence_attention(tape, *x, mask, vars, cfg.heads)?;
            fused_rows.push(tape.harmonic_mean(i_sent, i_cla));
        }
        let fused = tape.concat_rows(&fused_rows);
        proto_rows.push(refine_prototype(tape, fused, vars));
    }
    let prototypes = tape.concat_rows(&proto_rows);

    let mut query_rows = Vec::with_capacity(tensors.query.len());
    for emb in &tensors.query {
        let x = leaf(tape, emb);
        query_rows.push(query_attention(tape, x, &emb.mask, vars, cfg.heads)?);
    }
    let queries = tape.concat_rows(&query_rows);

    let proto = project_shared(tape, prototypes, vars);
    let query_reps = project_shared(tape, queries, vars);
    Ok((proto, query_reps))
}

struct EpisodeGraph {
    vars: HeadVars,
    proto: Var,
    query_reps: Var,
    scores: Var,
    ce: Var,
    ucl1: Var,
    ucl2: Var,
    total: Var,
}

fn build_episode_graph(
    tape: &mut Tape,
    tensors: &EpisodeTensors,
    params: &HeadParams,
    cfg: &HeadConfig,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<EpisodeGraph> {
    cfg.validate()?;
    tensors.validate(cfg.d_h)?;
    if tensors.query.len() < 2 {
        return Err(Error::BatchTooSmall(tensors.query.len()));
    }
    let vars = params.vars(tape);

    let (proto, query_reps) = representation_pass(tape, tensors, &vars, cfg, None)?;
    let scores = metric_scores(tape, query_reps, proto, cfg.metric_temperature);
    let ce = intent_cross_entropy(tape, scores, &tensors.query_labels)?;

    // second pass with dropout-perturbed inputs; with dropout disabled the
    // primed representations are the clean ones
    let (proto_primed, query_primed) = match rng {
        Some(rng) if cfg.dropout_rate > 0.0 => {
            representation_pass(tape, tensors, &vars, cfg, Some(rng))?
        }
        _ => (proto, query_reps),
    };
    let ucl1 = contrastive_regularizer(tape, proto, proto_primed, cfg.ucl_temperature)?;
    let ucl2 = contrastive_regularizer(tape, query_reps, query_primed, cfg.ucl_temperature)?;

    let partial = tape.add(ce, ucl1);
    let total = tape.add(partial, ucl2);
    Ok(EpisodeGraph {
        vars,
        proto,
        query_reps,
        scores,
        ce,
        ucl1,
        ucl2,
        total,
    })
}

fn output_from_graph(tape: &Tape, graph: &EpisodeGraph) -> ForwardOutput {
    let scores = tape.value(graph.scores).clone();
    let predictions = crate::similarity::argmax_rows(&scores);
    ForwardOutput {
        scores,
        loss: LossBreakdown {
            ce: tape.scalar(graph.ce),
            ucl1: tape.scalar(graph.ucl1),
            ucl2: tape.scalar(graph.ucl2),
            total: tape.scalar(graph.total),
        },
        predictions,
        prototypes: tape.value(graph.proto).clone(),
        query_reps: tape.value(graph.query_reps).clone(),
    }
}

/// Run the head on one episode. `rng` drives the dropout draws of the primed
/// pass; pass `None` (or set `dropout_rate` to 0) for a deterministic run.
pub fn forward_episode(
    tensors: &EpisodeTensors,
    params: &HeadParams,
    cfg: &HeadConfig,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<ForwardOutput> {
    let mut tape = Tape::new();
    let graph = build_episode_graph(&mut tape, tensors, params, cfg, rng)?;
    Ok(output_from_graph(&tape, &graph))
}

/// Like [`forward_episode`], additionally returning the gradient of the
/// total loss with respect to every head parameter.
pub fn episode_gradients(
    tensors: &EpisodeTensors,
    params: &HeadParams,
    cfg: &HeadConfig,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<(ForwardOutput, HeadParams)> {
    let mut tape = Tape::new();
    let graph = build_episode_graph(&mut tape, tensors, params, cfg, rng)?;
    let grads_by_var = tape.backward(graph.total);
    let mut grads = params.clone();
    for ((_, slot), var) in grads.named_mut().into_iter().zip(graph.vars.ordered()) {
        slot.assign(&grads_by_var[var]);
    }
    Ok((output_from_graph(&tape, &graph), grads))
}

/// Prototypes and query representations only (clean pass), for evaluation
/// with arbitrary similarity measures.
pub fn episode_representations(
    tensors: &EpisodeTensors,
    params: &HeadParams,
    cfg: &HeadConfig,
) -> Result<(Array2<f64>, Array2<f64>)> {
    cfg.validate()?;
    tensors.validate(cfg.d_h)?;
    let mut tape = Tape::new();
    let vars = params.vars(&mut tape);
    let (proto, query_reps) = representation_pass(&mut tape, tensors, &vars, cfg, None)?;
    Ok((tape.value(proto).clone(), tape.value(query_reps).clone()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::arr2;

    fn test_cfg(d_h: usize, heads: usize) -> HeadConfig {
        HeadConfig {
            d_h,
            heads,
            dropout_rate: 0.0,
            metric_temperature: 0.1,
            ucl_temperature: 0.5,
            hidden_size: 8,
        }
    }

    fn rand_emb(l: usize, d: usize, seed: u64) -> SequenceEmbedding {
        let mut rng = crate::rng::seeded_rng(seed);
        SequenceEmbedding::new(
            Array2::from_shape_fn((l, d), |_| rand::Rng::gen_range(&mut rng, -1.0..1.0)),
            vec![true; l],
        )
    }

    #[test]
    fn qkv_identity_weights_reproduce_input() {
        let cfg = test_cfg(4, 2);
        let mut params = HeadParams::init(&cfg, 1);
        params.attention.w_q = Array2::eye(4);
        params.attention.w_k = Array2::eye(4);
        params.attention.w_v = Array2::eye(4);
        let mut tape = Tape::new();
        let vars = params.vars(&mut tape);
        let x = tape.leaf(arr2(&[[1.0, 2.0, 3.0, 4.0], [5.0, 6.0, 7.0, 8.0]]));
        let (q, k, v) = qkv_transform(&mut tape, x, &vars);
        assert_eq!(tape.value(q), tape.value(x));
        assert_eq!(tape.value(k), tape.value(x));
        assert_eq!(tape.value(v), tape.value(x));
    }

    #[test]
    fn qkv_zero_weights_broadcast_bias() {
        let cfg = test_cfg(4, 2);
        let mut params = HeadParams::init(&cfg, 1);
        params.attention.w_q = Array2::zeros((4, 4));
        params.attention.b_q = arr2(&[[0.5, -0.5, 1.0, 0.0]]);
        let mut tape = Tape::new();
        let vars = params.vars(&mut tape);
        let x = tape.leaf(Array2::from_elem((3, 4), 2.0));
        let (q, _, _) = qkv_transform(&mut tape, x, &vars);
        for r in 0..3 {
            assert_eq!(tape.value(q).row(r).to_vec(), vec![0.5, -0.5, 1.0, 0.0]);
        }
    }

    #[test]
    fn qkv_matches_dense_loop_oracle() {
        let cfg = test_cfg(4, 2);
        let params = HeadParams::init(&cfg, 5);
        let mut tape = Tape::new();
        let vars = params.vars(&mut tape);
        let xv = arr2(&[[0.3, -0.7, 0.2, 0.9], [1.5, 0.1, -0.4, 0.6]]);
        let x = tape.leaf(xv.clone());
        let (q, _, _) = qkv_transform(&mut tape, x, &vars);
        for r in 0..2 {
            for c in 0..4 {
                let mut expect = params.attention.b_q[(0, c)];
                for k in 0..4 {
                    expect += xv[(r, k)] * params.attention.w_q[(k, c)];
                }
                assert_abs_diff_eq!(tape.value(q)[(r, c)], expect, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn single_valid_key_returns_its_value_row() {
        let mut tape = Tape::new();
        let q = tape.leaf(arr2(&[[0.2, 0.4], [0.9, -0.3]]));
        let k = tape.leaf(arr2(&[[1.0, 0.0], [0.0, 1.0], [0.5, 0.5]]));
        let v = tape.leaf(arr2(&[[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]));
        let out = scaled_attention(&mut tape, q, k, v, Some(&[false, true, false])).unwrap();
        for r in 0..2 {
            assert_abs_diff_eq!(tape.value(out)[(r, 0)], 3.0, epsilon = 1e-12);
            assert_abs_diff_eq!(tape.value(out)[(r, 1)], 4.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn identical_keys_average_their_values() {
        let mut tape = Tape::new();
        let q = tape.leaf(arr2(&[[0.7, -0.2]]));
        let k = tape.leaf(arr2(&[[0.3, 0.3], [0.3, 0.3]]));
        let v = tape.leaf(arr2(&[[2.0, 0.0], [4.0, 6.0]]));
        let out = scaled_attention(&mut tape, q, k, v, None).unwrap();
        assert_abs_diff_eq!(tape.value(out)[(0, 0)], 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(tape.value(out)[(0, 1)], 3.0, epsilon = 1e-12);
    }

    #[test]
    fn attention_matches_exhaustive_softmax_oracle() {
        let mut rng = crate::rng::seeded_rng(7);
        let mut rand = |r: usize, c: usize| {
            Array2::from_shape_fn((r, c), |_| rand::Rng::gen_range(&mut rng, -1.0..1.0))
        };
        let (qv, kv, vv) = (rand(2, 3), rand(3, 3), rand(3, 3));
        let mut tape = Tape::new();
        let q = tape.leaf(qv.clone());
        let k = tape.leaf(kv.clone());
        let v = tape.leaf(vv.clone());
        let out = scaled_attention(&mut tape, q, k, v, None).unwrap();
        let scale = (3.0f64).sqrt();
        for r in 0..2 {
            let logits: Vec<f64> = (0..3)
                .map(|j| {
                    (0..3).map(|d| qv[(r, d)] * kv[(j, d)]).sum::<f64>() / scale
                })
                .collect();
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
            let sum: f64 = exps.iter().sum();
            for c in 0..3 {
                let expect: f64 = (0..3).map(|j| exps[j] / sum * vv[(j, c)]).sum();
                assert_abs_diff_eq!(tape.value(out)[(r, c)], expect, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn all_masked_keys_error() {
        let mut tape = Tape::new();
        let q = tape.leaf(arr2(&[[1.0]]));
        let k = tape.leaf(arr2(&[[1.0]]));
        let v = tape.leaf(arr2(&[[1.0]]));
        assert!(matches!(
            scaled_attention(&mut tape, q, k, v, Some(&[false])),
            Err(Error::AllMasked)
        ));
    }

    #[test]
    fn sentence_attention_shapes() {
        let cfg = test_cfg(16, 4);
        let params = HeadParams::init(&cfg, 3);
        let mut tape = Tape::new();
        let vars = params.vars(&mut tape);
        // N=4, K=5 support: each sentence becomes one 1 x d_h vector
        for seed in 0..20 {
            let emb = rand_emb(8, 16, seed);
            let x = tape.leaf(emb.values.clone());
            let out = fiat_sentence_attention(&mut tape, x, &emb.mask, &vars, 4).unwrap();
            assert_eq!(tape.value(out).dim(), (1, 16));
        }
    }

    #[test]
    fn degenerate_single_token_sentence_is_layer_normed_value_row() {
        let cfg = test_cfg(4, 1);
        let params = HeadParams::init(&cfg, 11);
        let mut tape = Tape::new();
        let vars = params.vars(&mut tape);
        let emb = rand_emb(1, 4, 42);
        let x = tape.leaf(emb.values.clone());
        let got = fiat_sentence_attention(&mut tape, x, &[true], &vars, 1).unwrap();

        // with one position, attention returns exactly that position's V row
        let (_, _, v) = qkv_transform(&mut tape, x, &vars);
        let ln = tape.layer_norm_rows(v, vars.ln_sent_gain, vars.ln_sent_bias);
        for c in 0..4 {
            assert_abs_diff_eq!(
                tape.value(got)[(0, c)],
                tape.value(ln)[(0, c)],
                epsilon = 1e-9
            );
        }
    }

    #[test]
    fn class_attention_shapes_and_oracle() {
        let cfg = test_cfg(4, 2);
        let params = HeadParams::init(&cfg, 13);
        let mut tape = Tape::new();
        let vars = params.vars(&mut tape);
        // one class: K=2 sentences of length 3, d_h=4
        let e0 = rand_emb(3, 4, 100);
        let e1 = rand_emb(3, 4, 101);
        let x0 = tape.leaf(e0.values.clone());
        let x1 = tape.leaf(e1.values.clone());
        let got = fiat_class_attention(
            &mut tape,
            &[(x0, e0.mask.clone()), (x1, e1.mask.clone())],
            &vars,
            2,
        )
        .unwrap();
        assert_eq!(got.len(), 2);
        assert_eq!(tape.value(got[0]).dim(), (1, 4));

        // transposed-arrangement oracle with dense loops
        let a = &params.attention;
        let stack = ndarray::concatenate(ndarray::Axis(0), &[e0.values.view(), e1.values.view()])
            .unwrap();
        let q = stack.dot(&a.w_q) + &a.b_q;
        let k = stack.dot(&a.w_k) + &a.b_k;
        let v = stack.dot(&a.w_v) + &a.b_v;
        let total_len = 6usize;
        let d_head = 2usize;
        let mut merged = Array2::zeros((total_len, 4));
        for h in 0..2 {
            let cols = h * d_head..(h + 1) * d_head;
            let qh = q.slice(ndarray::s![.., cols.clone()]).t().to_owned();
            let kh = k.slice(ndarray::s![.., cols.clone()]).t().to_owned();
            let vh = v.slice(ndarray::s![.., cols.clone()]).t().to_owned();
            let scale = (total_len as f64).sqrt();
            for f in 0..d_head {
                let logits: Vec<f64> =
                    (0..d_head).map(|g| qh.row(f).dot(&kh.row(g)) / scale).collect();
                let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
                let sum: f64 = exps.iter().sum();
                for pos in 0..total_len {
                    let mut acc = 0.0;
                    for g in 0..d_head {
                        acc += exps[g] / sum * vh[(g, pos)];
                    }
                    merged[(pos, h * d_head + f)] = acc;
                }
            }
        }
        // per-sentence max pool then layer norm
        for (s, var) in got.iter().enumerate() {
            let rows = merged.slice(ndarray::s![s * 3..(s + 1) * 3, ..]);
            let mut pooled = [f64::NEG_INFINITY; 4];
            for r in 0..3 {
                for c in 0..4 {
                    pooled[c] = pooled[c].max(rows[(r, c)]);
                }
            }
            let mean: f64 = pooled.iter().sum::<f64>() / 4.0;
            let variance: f64 = pooled.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / 4.0;
            let inv = 1.0 / (variance + crate::tape::LN_EPS).sqrt();
            for c in 0..4 {
                let expect = (pooled[c] - mean) * inv * a.ln_class_gain[(0, c)]
                    + a.ln_class_bias[(0, c)];
                assert_abs_diff_eq!(tape.value(*var)[(0, c)], expect, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn fused_prototype_of_identical_views_is_identity() {
        let mut tape = Tape::new();
        let x = tape.leaf(arr2(&[[2.0, -3.0, 0.5]]));
        let fused = tape.harmonic_mean(x, x);
        for c in 0..3 {
            assert_abs_diff_eq!(
                tape.value(fused)[(0, c)],
                tape.value(x)[(0, c)],
                epsilon = 1e-6
            );
        }
    }

    #[test]
    fn refine_with_zero_weights_is_plain_mean() {
        let cfg = test_cfg(4, 2);
        let params = HeadParams::init(&cfg, 17); // refine is zero-initialized
        let mut tape = Tape::new();
        let vars = params.vars(&mut tape);
        let fused = tape.leaf(arr2(&[
            [1.0, 2.0, 3.0, 4.0],
            [5.0, 6.0, 7.0, 8.0],
            [0.0, 0.0, 0.0, 0.0],
        ]));
        let proto = refine_prototype(&mut tape, fused, &vars);
        for c in 0..4 {
            let expect = (tape.value(fused)[(0, c)] + tape.value(fused)[(1, c)]) / 3.0
                + tape.value(fused)[(2, c)] / 3.0;
            assert_abs_diff_eq!(tape.value(proto)[(0, c)], expect, epsilon = 1e-12);
        }
    }

    #[test]
    fn refine_single_shot_is_identity() {
        let cfg = test_cfg(4, 2);
        let mut params = HeadParams::init(&cfg, 19);
        params.refine.w = Array2::from_elem((4, 4), 0.3);
        params.refine.b = Array2::from_elem((1, 4), -0.2);
        let mut tape = Tape::new();
        let vars = params.vars(&mut tape);
        let fused = tape.leaf(arr2(&[[0.4, -1.2, 2.2, 0.0]]));
        let proto = refine_prototype(&mut tape, fused, &vars);
        for c in 0..4 {
            assert_abs_diff_eq!(
                tape.value(proto)[(0, c)],
                tape.value(fused)[(0, c)],
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn refine_matches_softmax_weighted_sum_oracle() {
        let cfg = test_cfg(4, 2);
        let mut params = HeadParams::init(&cfg, 23);
        let mut rng = crate::rng::seeded_rng(29);
        params.refine.w = Array2::from_shape_fn((4, 4), |_| rand::Rng::gen_range(&mut rng, -1.0..1.0));
        params.refine.b = Array2::from_shape_fn((1, 4), |_| rand::Rng::gen_range(&mut rng, -1.0..1.0));
        let fused_v = Array2::from_shape_fn((3, 4), |_| rand::Rng::gen_range(&mut rng, -1.0..1.0));

        let mut tape = Tape::new();
        let vars = params.vars(&mut tape);
        let fused = tape.leaf(fused_v.clone());
        let proto = refine_prototype(&mut tape, fused, &vars);

        let mut scores = [0.0f64; 3];
        for k in 0..3 {
            let mut acc = 0.0;
            for c in 0..4 {
                let mut z = params.refine.b[(0, c)];
                for d in 0..4 {
                    z += fused_v[(k, d)] * params.refine.w[(d, c)];
                }
                acc += z.tanh();
            }
            scores[k] = acc / 4.0;
        }
        let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        for c in 0..4 {
            let expect: f64 = (0..3).map(|k| exps[k] / sum * fused_v[(k, c)]).sum();
            assert_abs_diff_eq!(tape.value(proto)[(0, c)], expect, epsilon = 1e-9);
        }
    }

    #[test]
    fn shared_projection_maps_equal_inputs_equally() {
        let cfg = test_cfg(4, 2);
        let params = HeadParams::init(&cfg, 31);
        let mut tape = Tape::new();
        let vars = params.vars(&mut tape);
        let v = arr2(&[[0.3, 0.9, -0.4, 0.1]]);
        let a = tape.leaf(v.clone());
        let b = tape.leaf(v);
        let pa = project_shared(&mut tape, a, &vars);
        let pb = project_shared(&mut tape, b, &vars);
        assert_eq!(tape.value(pa), tape.value(pb));
    }

    #[test]
    fn identity_projection_with_inactive_nonlinearity() {
        let cfg = HeadConfig {
            hidden_size: 4,
            ..test_cfg(4, 2)
        };
        let mut params = HeadParams::init(&cfg, 37);
        params.project.w1 = Array2::eye(4);
        params.project.b1 = Array2::zeros((1, 4));
        params.project.w2 = Array2::eye(4);
        params.project.b2 = Array2::zeros((1, 4));
        let mut tape = Tape::new();
        let vars = params.vars(&mut tape);
        // non-negative inputs stay in the linear region of the rectifier
        let x = tape.leaf(arr2(&[[0.5, 2.0, 0.0, 1.25]]));
        let y = project_shared(&mut tape, x, &vars);
        assert_eq!(tape.value(y), tape.value(x));
    }

    #[test]
    fn projection_matches_dense_oracle() {
        let cfg = HeadConfig {
            hidden_size: 5,
            ..test_cfg(4, 2)
        };
        let params = HeadParams::init(&cfg, 41);
        let mut tape = Tape::new();
        let vars = params.vars(&mut tape);
        let xv = arr2(&[[0.2, -0.8, 1.1, 0.4], [-0.5, 0.3, 0.0, 0.9]]);
        let x = tape.leaf(xv.clone());
        let y = project_shared(&mut tape, x, &vars);
        let p = &params.project;
        for r in 0..2 {
            for c in 0..4 {
                let mut out = p.b2[(0, c)];
                for h in 0..5 {
                    let mut z = p.b1[(0, h)];
                    for d in 0..4 {
                        z += xv[(r, d)] * p.w1[(d, h)];
                    }
                    out += z.max(0.0) * p.w2[(h, c)];
                }
                assert_abs_diff_eq!(tape.value(y)[(r, c)], out, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn contrastive_regularizer_hand_values() {
        // two orthogonal rows, primed view equal to the clean view, tau = 1:
        // loss per row is -ln(e / (e + 1))
        let mut tape = Tape::new();
        let reps = tape.leaf(arr2(&[[1.0, 0.0], [0.0, 1.0]]));
        let loss = contrastive_regularizer(&mut tape, reps, reps, 1.0).unwrap();
        let expect = -(1f64.exp() / (1f64.exp() + 1.0)).ln();
        assert_abs_diff_eq!(tape.scalar(loss), expect, epsilon = 1e-12);

        // identical rows: ln B regardless of tau
        let mut tape = Tape::new();
        let reps = tape.leaf(arr2(&[[0.4, 0.2], [0.4, 0.2], [0.4, 0.2]]));
        let loss = contrastive_regularizer(&mut tape, reps, reps, 0.25).unwrap();
        assert_abs_diff_eq!(tape.scalar(loss), 3f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn contrastive_regularizer_needs_two_rows() {
        let mut tape = Tape::new();
        let reps = tape.leaf(arr2(&[[1.0, 0.0]]));
        assert!(matches!(
            contrastive_regularizer(&mut tape, reps, reps, 1.0),
            Err(Error::BatchTooSmall(1))
        ));
    }

    #[test]
    fn metric_scores_hand_values() {
        let mut tape = Tape::new();
        let q = tape.leaf(arr2(&[[1.0, 2.0]]));
        let p = tape.leaf(arr2(&[[2.0, 1.0], [2.0, 4.0], [-1.0, 0.5]]));
        let s = metric_scores(&mut tape, q, p, 0.1);
        assert_abs_diff_eq!(tape.value(s)[(0, 0)], 8.0, epsilon = 1e-12);
        assert_abs_diff_eq!(tape.value(s)[(0, 1)], 10.0, epsilon = 1e-12);
    }

    #[test]
    fn cross_entropy_uniform_and_saturated() {
        let mut tape = Tape::new();
        let scores = tape.leaf(Array2::zeros((3, 4)));
        let loss = intent_cross_entropy(&mut tape, scores, &[0, 1, 2]).unwrap();
        assert_abs_diff_eq!(tape.scalar(loss), 4f64.ln(), epsilon = 1e-12);

        let mut tape = Tape::new();
        let mut sv = Array2::zeros((2, 3));
        sv[(0, 1)] = 1000.0;
        sv[(1, 0)] = 1000.0;
        let scores = tape.leaf(sv);
        let loss = intent_cross_entropy(&mut tape, scores, &[1, 0]).unwrap();
        assert!(tape.scalar(loss) < 1e-9);

        let mut tape = Tape::new();
        let scores = tape.leaf(Array2::zeros((1, 3)));
        assert!(matches!(
            intent_cross_entropy(&mut tape, scores, &[3]),
            Err(Error::IndexOutOfRange { .. })
        ));
    }

    fn toy_tensors(n: usize, k: usize, q_per_class: usize, l: usize, d: usize) -> EpisodeTensors {
        let mut support = Vec::new();
        let mut query = Vec::new();
        let mut labels = Vec::new();
        let mut seed = 1000;
        for class in 0..n {
            let mut shots = Vec::new();
            for _ in 0..k {
                shots.push(rand_emb(l, d, seed));
                seed += 1;
            }
            support.push(shots);
            for _ in 0..q_per_class {
                query.push(rand_emb(l, d, seed));
                labels.push(class);
                seed += 1;
            }
        }
        EpisodeTensors {
            support,
            query,
            query_labels: labels,
        }
    }

    #[test]
    fn forward_shapes_and_loss_identity() {
        let cfg = test_cfg(16, 4);
        let params = HeadParams::init(&cfg, 43);
        let tensors = toy_tensors(4, 5, 5, 6, 16);
        let out = forward_episode(&tensors, &params, &cfg, None).unwrap();
        assert_eq!(out.scores.dim(), (20, 4));
        assert_eq!(out.predictions.len(), 20);
        assert_eq!(out.prototypes.dim(), (4, 16));
        assert_eq!(out.query_reps.dim(), (20, 16));
        assert_eq!(out.loss.total, out.loss.ce + out.loss.ucl1 + out.loss.ucl2);
    }

    #[test]
    fn forward_is_deterministic_without_dropout() {
        let cfg = test_cfg(8, 2);
        let params = HeadParams::init(&cfg, 47);
        let tensors = toy_tensors(3, 2, 2, 4, 8);
        let a = forward_episode(&tensors, &params, &cfg, None).unwrap();
        let b = forward_episode(&tensors, &params, &cfg, None).unwrap();
        assert_eq!(a.scores, b.scores);
        assert_eq!(a.loss.total, b.loss.total);
    }

    #[test]
    fn separable_embeddings_classify_perfectly() {
        // Oracle construction: with identity Q/K/V, one feature per head,
        // default layer norms and an identity projection, both paths reduce
        // to relu(LN(x)) of the shared class vector, so each query matches
        // its own prototype with cosine exactly 1 while distinct classes
        // (disjoint coordinate support) score strictly less.
        let (n, k, q, l, d) = (3, 2, 2, 2, 12);
        let mut support = Vec::new();
        let mut query = Vec::new();
        let mut labels = Vec::new();
        for class in 0..n {
            let mut m = Array2::zeros((l, d));
            for r in 0..l {
                m[(r, class)] = 1.0;
                m[(r, class + 6)] = 0.5;
            }
            let emb = SequenceEmbedding::new(m, vec![true; l]);
            support.push(vec![emb.clone(); k]);
            for _ in 0..q {
                query.push(emb.clone());
                labels.push(class);
            }
        }
        let tensors = EpisodeTensors {
            support,
            query,
            query_labels: labels.clone(),
        };
        let cfg = HeadConfig {
            heads: d,
            hidden_size: d,
            ..test_cfg(d, 2)
        };
        let mut params = HeadParams::init(&cfg, 51);
        params.attention.w_q = Array2::eye(d);
        params.attention.b_q.fill(0.0);
        params.attention.w_k = Array2::eye(d);
        params.attention.b_k.fill(0.0);
        params.attention.w_v = Array2::eye(d);
        params.attention.b_v.fill(0.0);
        params.project.w1 = Array2::eye(d);
        params.project.b1 = Array2::zeros((1, d));
        params.project.w2 = Array2::eye(d);
        params.project.b2 = Array2::zeros((1, d));
        let out = forward_episode(&tensors, &params, &cfg, None).unwrap();
        assert_eq!(out.predictions, labels);
        // same-class scores sit at cosine 1 (scaled by 1/t)
        for (row, &label) in labels.iter().enumerate() {
            assert_abs_diff_eq!(
                out.scores[(row, label)],
                1.0 / cfg.metric_temperature,
                epsilon = 1e-9
            );
        }
    }

    #[test]
    fn softmax_rows_of_scores_sum_to_one() {
        let cfg = test_cfg(8, 2);
        let params = HeadParams::init(&cfg, 53);
        let tensors = toy_tensors(3, 2, 3, 4, 8);
        let out = forward_episode(&tensors, &params, &cfg, None).unwrap();
        let probs = crate::tape::softmax_rows_masked(&out.scores, None);
        for r in 0..probs.nrows() {
            assert_abs_diff_eq!(probs.row(r).sum(), 1.0, epsilon = 1e-6);
        }
    }

    #[test]
    fn argmax_invariant_to_query_rescaling_and_temperature() {
        let cfg = test_cfg(8, 2);
        let params = HeadParams::init(&cfg, 59);
        let tensors = toy_tensors(3, 2, 3, 4, 8);
        let base = forward_episode(&tensors, &params, &cfg, None).unwrap();

        let hot_cfg = HeadConfig {
            metric_temperature: 2.5,
            ..cfg
        };
        let hot = forward_episode(&tensors, &params, &hot_cfg, None).unwrap();
        assert_eq!(base.predictions, hot.predictions);

        // positive rescaling of all query representations cannot move the
        // cosine argmax
        let scaled = &base.query_reps * 7.3;
        let sims = crate::similarity::score_matrix(
            crate::similarity::SimilarityKind::Cosine,
            &scaled,
            &base.prototypes,
        )
        .unwrap();
        assert_eq!(crate::similarity::argmax_rows(&sims), base.predictions);
    }

    #[test]
    fn shared_parameters_touch_both_paths() {
        let cfg = test_cfg(8, 2);
        let params = HeadParams::init(&cfg, 61);
        let tensors = toy_tensors(3, 2, 2, 4, 8);
        let base = forward_episode(&tensors, &params, &cfg, None).unwrap();

        let mut perturbed = params.clone();
        perturbed.attention.w_q[(0, 0)] += 0.05;
        perturbed.project.w1[(0, 0)] += 0.05;
        let moved = forward_episode(&tensors, &perturbed, &cfg, None).unwrap();
        assert_ne!(base.prototypes, moved.prototypes, "support path unaffected");
        assert_ne!(base.query_reps, moved.query_reps, "query path unaffected");
    }

    #[test]
    fn dropout_passes_differ_but_clean_outputs_stay_fixed() {
        let cfg = HeadConfig {
            dropout_rate: 0.3,
            ..test_cfg(8, 2)
        };
        let params = HeadParams::init(&cfg, 67);
        let tensors = toy_tensors(3, 2, 2, 4, 8);
        let mut rng_a = crate::rng::seeded_rng(1);
        let mut rng_b = crate::rng::seeded_rng(2);
        let a = forward_episode(&tensors, &params, &cfg, Some(&mut rng_a)).unwrap();
        let b = forward_episode(&tensors, &params, &cfg, Some(&mut rng_b)).unwrap();
        // clean-pass quantities agree; regularizers see different primed views
        assert_eq!(a.scores, b.scores);
        assert_eq!(a.loss.ce, b.loss.ce);
        assert_ne!(a.loss.ucl1, b.loss.ucl1);
    }
}
