//! Sequence embeddings for utterances.
//!
//! Two backends produce them: a read-only store of precomputed matrices
//! (for plugging in externally computed representations) and a small
//! trainable encoder (token + positional embeddings mixed by one masked
//! self-attention layer with a position-wise affine map on top).

use crate::corpus::{Corpus, Utterance};
use crate::error::{Error, Result};
use crate::rng::seeded_rng;
use crate::tape::{softmax_rows_masked, Tape, Var};
use ndarray::Array2;
use rand::Rng;
use std::collections::{BTreeMap, HashMap};
use std::path::Path;

pub const PAD: &str = "[PAD]";
pub const MASK: &str = "[MASK]";
pub const UNK: &str = "[UNK]";
pub const PAD_ID: usize = 0;
pub const MASK_ID: usize = 1;
pub const UNK_ID: usize = 2;

/// Per-utterance embedding matrix (`l_seq x d_h`) with a token validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceEmbedding {
    pub values: Array2<f64>,
    pub mask: Vec<bool>,
}

impl SequenceEmbedding {
    pub fn new(values: Array2<f64>, mask: Vec<bool>) -> Self {
        debug_assert_eq!(values.nrows(), mask.len());
        debug_assert!(mask.iter().any(|&m| m), "embedding with no valid position");
        Self { values, mask }
    }

    pub fn d_h(&self) -> usize {
        self.values.ncols()
    }
}

/// Keep the first `l_seq` tokens, padding with `[PAD]` as needed.
/// Returns the fixed-length token list and its validity mask.
pub fn pad_or_truncate(tokens: &[String], l_seq: usize) -> (Vec<String>, Vec<bool>) {
    assert!(l_seq >= 1);
    let kept = tokens.len().min(l_seq);
    let mut out = Vec::with_capacity(l_seq);
    let mut mask = Vec::with_capacity(l_seq);
    for tok in &tokens[..kept] {
        out.push(tok.clone());
        mask.push(true);
    }
    while out.len() < l_seq {
        out.push(PAD.to_owned());
        mask.push(false);
    }
    (out, mask)
}

/// Token vocabulary with `[PAD]`, `[MASK]`, `[UNK]` reserved up front.
#[derive(Debug, Clone)]
pub struct Vocab {
    pub tokens: Vec<String>,
    lookup: HashMap<String, usize>,
}

impl Vocab {
    pub fn new(mut tokens: Vec<String>) -> Self {
        tokens.sort();
        tokens.dedup();
        let mut all = vec![PAD.to_owned(), MASK.to_owned(), UNK.to_owned()];
        all.extend(tokens.into_iter().filter(|t| t != PAD && t != MASK && t != UNK));
        let lookup = all
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Self { tokens: all, lookup }
    }

    pub fn from_corpus(corpus: &Corpus) -> Self {
        let tokens: Vec<String> = corpus
            .utterances
            .iter()
            .flat_map(|u| u.tokens.iter().cloned())
            .collect();
        Self::new(tokens)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.lookup.get(token).copied().unwrap_or(UNK_ID)
    }

    /// Number of reserved marker tokens at the front of the table.
    pub fn reserved(&self) -> usize {
        3
    }
}

/// Trainable tensors of the toy encoder.
#[derive(Debug, Clone)]
pub struct ToyParams {
    pub tok_emb: Array2<f64>,
    pub pos_emb: Array2<f64>,
    pub w_q: Array2<f64>,
    pub w_k: Array2<f64>,
    pub w_v: Array2<f64>,
    pub w_o: Array2<f64>,
    pub b_o: Array2<f64>,
    pub w_out: Array2<f64>,
    pub b_out: Array2<f64>,
}

impl ToyParams {
    pub fn named(&self) -> Vec<(&'static str, &Array2<f64>)> {
        vec![
            ("tok_emb", &self.tok_emb),
            ("pos_emb", &self.pos_emb),
            ("w_q", &self.w_q),
            ("w_k", &self.w_k),
            ("w_v", &self.w_v),
            ("w_o", &self.w_o),
            ("b_o", &self.b_o),
            ("w_out", &self.w_out),
            ("b_out", &self.b_out),
        ]
    }

    pub fn named_mut(&mut self) -> Vec<(&'static str, &mut Array2<f64>)> {
        vec![
            ("tok_emb", &mut self.tok_emb),
            ("pos_emb", &mut self.pos_emb),
            ("w_q", &mut self.w_q),
            ("w_k", &mut self.w_k),
            ("w_v", &mut self.w_v),
            ("w_o", &mut self.w_o),
            ("b_o", &mut self.b_o),
            ("w_out", &mut self.w_out),
            ("b_out", &mut self.b_out),
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
        assert_eq!(at, flat.len());
    }
}

/// Parameter handles after insertion on a tape.
pub struct ToyVars {
    pub tok_emb: Var,
    pub pos_emb: Var,
    pub w_q: Var,
    pub w_k: Var,
    pub w_v: Var,
    pub w_o: Var,
    pub b_o: Var,
    pub w_out: Var,
    pub b_out: Var,
}

/// Small trainable encoder standing in for a pretrained model.
#[derive(Debug, Clone)]
pub struct ToyEncoder {
    pub vocab: Vocab,
    pub l_seq: usize,
    pub d_h: usize,
    pub params: ToyParams,
}

impl ToyEncoder {
    /// Random initialization: uniform token table scaled by `1/sqrt(d_h)`,
    /// zero output mixing so the initial embeddings are exactly
    /// token + positional.
    pub fn new(vocab: Vocab, l_seq: usize, d_h: usize, seed: u64) -> Self {
        let mut rng = seeded_rng(seed);
        let s = 1.0 / (d_h as f64).sqrt();
        let mut uniform =
            |rows: usize, cols: usize| Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-s..s));
        let params = ToyParams {
            tok_emb: uniform(vocab.len(), d_h),
            pos_emb: uniform(l_seq, d_h) * 0.1,
            w_q: uniform(d_h, d_h),
            w_k: uniform(d_h, d_h),
            w_v: uniform(d_h, d_h),
            w_o: Array2::zeros((d_h, d_h)),
            b_o: Array2::zeros((1, d_h)),
            w_out: uniform(d_h, vocab.len()),
            b_out: Array2::zeros((1, vocab.len())),
        };
        Self {
            vocab,
            l_seq,
            d_h,
            params,
        }
    }

    pub fn token_ids(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.vocab.id(t)).collect()
    }

    /// Contextual vectors for one fixed-length token sequence.
    /// `valid` marks real (non-pad) positions; padded positions never act
    /// as attention keys.
    pub fn contextualize(&self, ids: &[usize], valid: &[bool]) -> Array2<f64> {
        let p = &self.params;
        let l = ids.len();
        let mut e = Array2::zeros((l, self.d_h));
        for (r, &id) in ids.iter().enumerate() {
            for c in 0..self.d_h {
                e[(r, c)] = p.tok_emb[(id, c)] + p.pos_emb[(r, c)];
            }
        }
        let q = e.dot(&p.w_q);
        let k = e.dot(&p.w_k);
        let v = e.dot(&p.w_v);
        let scores = q.dot(&k.t()) / (self.d_h as f64).sqrt();
        let attn = softmax_rows_masked(&scores, Some(valid));
        let mixed = attn.dot(&v).dot(&p.w_o) + &p.b_o;
        e + mixed
    }

    /// Same computation recorded on a tape, for re-training.
    pub fn contextualize_on_tape(
        &self,
        tape: &mut Tape,
        vars: &ToyVars,
        ids: &[usize],
        valid: &[bool],
    ) -> Var {
        let tok = tape.select_rows(vars.tok_emb, ids);
        let pos = tape.slice_rows(vars.pos_emb, 0, ids.len());
        let e = tape.add(tok, pos);
        let q = tape.matmul(e, vars.w_q);
        let k = tape.matmul(e, vars.w_k);
        let v = tape.matmul(e, vars.w_v);
        let kt = tape.transpose(k);
        let scores = tape.matmul(q, kt);
        let scaled = tape.scale(scores, 1.0 / (self.d_h as f64).sqrt());
        let attn = tape.softmax_rows(scaled, Some(valid));
        let ctx = tape.matmul(attn, v);
        let mixed = tape.matmul(ctx, vars.w_o);
        let mixed = tape.add_row(mixed, vars.b_o);
        tape.add(e, mixed)
    }

    pub fn vars(&self, tape: &mut Tape) -> ToyVars {
        let p = &self.params;
        ToyVars {
            tok_emb: tape.leaf(p.tok_emb.clone()),
            pos_emb: tape.leaf(p.pos_emb.clone()),
            w_q: tape.leaf(p.w_q.clone()),
            w_k: tape.leaf(p.w_k.clone()),
            w_v: tape.leaf(p.w_v.clone()),
            w_o: tape.leaf(p.w_o.clone()),
            b_o: tape.leaf(p.b_o.clone()),
            w_out: tape.leaf(p.w_out.clone()),
            b_out: tape.leaf(p.b_out.clone()),
        }
    }

    fn encode(&self, utterance: &Utterance, l_seq: usize) -> SequenceEmbedding {
        let (tokens, mask) = pad_or_truncate(&utterance.tokens, l_seq.min(self.l_seq));
        let ids = self.token_ids(&tokens);
        SequenceEmbedding::new(self.contextualize(&ids, &mask), mask)
    }

    /// Persist as `encoder.ckpt` (tensors) plus `encoder.json` (vocabulary
    /// and shape metadata) inside `dir`.
    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let header = crate::checkpoint::CheckpointHeader {
            d_h: self.d_h as u32,
            heads: 1,
            hidden_size: 0,
        };
        crate::checkpoint::save(&dir.join("encoder.ckpt"), header, &self.params.named())?;
        let meta = EncoderMeta {
            l_seq: self.l_seq,
            d_h: self.d_h,
            tokens: self.vocab.tokens[self.vocab.reserved()..].to_vec(),
        };
        std::fs::write(dir.join("encoder.json"), serde_json::to_string_pretty(&meta)?)?;
        Ok(())
    }

    pub fn load_dir(dir: &Path) -> Result<Self> {
        let meta: EncoderMeta =
            serde_json::from_str(&std::fs::read_to_string(dir.join("encoder.json"))?)?;
        let vocab = Vocab::new(meta.tokens);
        let mut encoder = ToyEncoder::new(vocab, meta.l_seq, meta.d_h, 0);
        let (_, tensors) = crate::checkpoint::load(&dir.join("encoder.ckpt"))?;
        crate::checkpoint::fill_from_tensors(encoder.params.named_mut(), &tensors)?;
        Ok(encoder)
    }
}

#[derive(serde::Serialize, serde::Deserialize)]
struct EncoderMeta {
    l_seq: usize,
    d_h: usize,
    tokens: Vec<String>,
}

/// Index record for one stored matrix.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct StoreEntry {
    pub offset_bytes: u64,
    pub l_seq: usize,
    pub d_h: usize,
}

/// Read-only store of precomputed embeddings, keyed by utterance id.
///
/// On disk: `index.json` (id -> offset/shape) plus `data.f32`, the
/// concatenated row-major little-endian `f32` matrices. Loading and
/// re-serializing reproduces `data.f32` byte for byte.
#[derive(Debug, Clone, Default)]
pub struct EmbeddingStore {
    order: Vec<String>,
    matrices: HashMap<String, Array2<f64>>,
}

impl EmbeddingStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, id: impl Into<String>, matrix: Array2<f64>) {
        let id = id.into();
        if !self.matrices.contains_key(&id) {
            self.order.push(id.clone());
        }
        self.matrices.insert(id, matrix);
    }

    pub fn get(&self, id: &str) -> Option<&Array2<f64>> {
        self.matrices.get(id)
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// Width of the first stored matrix, when any.
    pub fn first_d_h(&self) -> Option<usize> {
        self.order.first().map(|id| self.matrices[id].ncols())
    }

    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut data = Vec::new();
        let mut index: BTreeMap<String, StoreEntry> = BTreeMap::new();
        for id in &self.order {
            let m = &self.matrices[id];
            index.insert(
                id.clone(),
                StoreEntry {
                    offset_bytes: data.len() as u64,
                    l_seq: m.nrows(),
                    d_h: m.ncols(),
                },
            );
            for v in m.iter() {
                data.extend_from_slice(&(*v as f32).to_le_bytes());
            }
        }
        std::fs::write(dir.join("data.f32"), data)?;
        let json = serde_json::to_string_pretty(&index)?;
        std::fs::write(dir.join("index.json"), json)?;
        Ok(())
    }

    pub fn load_dir(dir: &Path) -> Result<Self> {
        let json = std::fs::read_to_string(dir.join("index.json"))?;
        let index: BTreeMap<String, StoreEntry> = serde_json::from_str(&json)?;
        let data = std::fs::read(dir.join("data.f32"))?;
        let mut ordered: Vec<(&String, &StoreEntry)> = index.iter().collect();
        ordered.sort_by_key(|(_, e)| e.offset_bytes);
        let mut store = Self::new();
        for (id, entry) in ordered {
            let n = entry.l_seq * entry.d_h;
            let start = entry.offset_bytes as usize;
            let end = start + 4 * n;
            if end > data.len() {
                return Err(Error::Checkpoint(format!("store entry {id} overruns data.f32")));
            }
            let mut values = Vec::with_capacity(n);
            for i in 0..n {
                let at = start + 4 * i;
                let bytes: [u8; 4] = data[at..at + 4].try_into().unwrap();
                values.push(f64::from(f32::from_le_bytes(bytes)));
            }
            let matrix = Array2::from_shape_vec((entry.l_seq, entry.d_h), values)
                .map_err(|e| Error::Checkpoint(e.to_string()))?;
            store.insert(id.clone(), matrix);
        }
        Ok(store)
    }
}

/// Embedding source used by the rest of the pipeline.
#[derive(Debug, Clone)]
pub enum EncoderBackend {
    PrecomputedStore(EmbeddingStore),
    Toy(ToyEncoder),
}

impl EncoderBackend {
    /// Embed a batch, preserving order. Store lookups return the stored
    /// matrix bit-identically (the requested `l_seq` only applies to the
    /// trainable backend).
    pub fn encode_batch(
        &self,
        utterances: &[&Utterance],
        l_seq: usize,
    ) -> Result<Vec<SequenceEmbedding>> {
        match self {
            EncoderBackend::PrecomputedStore(store) => {
                let mut out = Vec::with_capacity(utterances.len());
                let mut d_h: Option<usize> = None;
                for u in utterances {
                    let m = store
                        .get(&u.id)
                        .ok_or_else(|| Error::MissingEmbedding(u.id.clone()))?;
                    match d_h {
                        None => d_h = Some(m.ncols()),
                        Some(d) if d != m.ncols() => {
                            return Err(Error::DimensionMismatch {
                                expected: d,
                                got: m.ncols(),
                            })
                        }
                        _ => {}
                    }
                    out.push(SequenceEmbedding::new(m.clone(), vec![true; m.nrows()]));
                }
                Ok(out)
            }
            EncoderBackend::Toy(enc) => Ok(utterances
                .iter()
                .map(|u| enc.encode(u, l_seq))
                .collect()),
        }
    }

    /// Logit rows for the listed positions of one corrupted token sequence.
    /// Only the trainable backend supports this.
    pub fn mlm_logits(
        &self,
        masked_tokens: &[String],
        mask_positions: &[usize],
    ) -> Result<Array2<f64>> {
        let EncoderBackend::Toy(enc) = self else {
            return Err(Error::BackendNotTrainable);
        };
        let (tokens, valid) = pad_or_truncate(masked_tokens, enc.l_seq.min(masked_tokens.len().max(1)));
        let ids = enc.token_ids(&tokens);
        for &p in mask_positions {
            if p >= ids.len() {
                return Err(Error::IndexOutOfRange {
                    index: p,
                    classes: ids.len(),
                });
            }
        }
        let ctx = enc.contextualize(&ids, &valid);
        let mut out = Array2::zeros((mask_positions.len(), enc.vocab.len()));
        for (r, &p) in mask_positions.iter().enumerate() {
            let row = ctx.row(p).dot(&enc.params.w_out) + &enc.params.b_out.row(0);
            out.row_mut(r).assign(&row);
        }
        Ok(out)
    }

    pub fn d_h(&self) -> Option<usize> {
        match self {
            EncoderBackend::Toy(enc) => Some(enc.d_h),
            EncoderBackend::PrecomputedStore(_) => None,
        }
    }
}
