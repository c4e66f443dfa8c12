//! Vocabulary, word embeddings and LSTM / BiLSTM sentence encoders.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::autodiff::{Graph, ParamId, ParamSet, Var};
use crate::error::{Error, Result};
use crate::rng::Seeded;
use crate::tensor::Tensor;

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";
pub const DEFAULT_MAX_VOCAB: usize = 300_000;
pub const DEFAULT_MAX_LEN: usize = 82;

/// Lowercased whitespace tokenization with punctuation and clitics split off.
pub fn tokenize(sentence: &str) -> Vec<String> {
    fn flush(piece: &mut String, out: &mut Vec<String>) {
        if piece.is_empty() {
            return;
        }
        let word = core::mem::take(piece);
        if word.len() > 3 && word.ends_with("n't") {
            out.push(word[..word.len() - 3].to_string());
            out.push("n't".to_string());
        } else if let Some(pos) = word.find('\'').filter(|&p| p > 0) {
            out.push(word[..pos].to_string());
            out.push(word[pos..].to_string());
        } else {
            out.push(word);
        }
    }
    let mut out = Vec::new();
    for raw in sentence.split_whitespace() {
        let mut piece = String::new();
        for ch in raw.to_lowercase().chars() {
            if ch.is_alphanumeric() || ch == '-' || ch == '\'' {
                piece.push(ch);
            } else {
                flush(&mut piece, &mut out);
                out.push(ch.to_string());
            }
        }
        flush(&mut piece, &mut out);
    }
    out
}

/// Token ↔ index bijection with PAD at 0 and UNK at 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    index: BTreeMap<String, usize>,
    tokens: Vec<String>,
    counts: Vec<u64>,
    max_size: usize,
}

impl Vocabulary {
    /// Ranks tokens by frequency (ties lexicographic) and keeps the top `max_size`.
    pub fn build<'a, I>(tokens: I, max_size: usize) -> Result<Self>
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut counts: BTreeMap<&str, u64> = BTreeMap::new();
        for t in tokens {
            *counts.entry(t).or_insert(0) += 1;
        }
        if counts.is_empty() {
            return Err(Error::Empty("build_vocab"));
        }
        let mut ranked: Vec<(&str, u64)> = counts
            .into_iter()
            .filter(|(t, _)| *t != PAD_TOKEN && *t != UNK_TOKEN)
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        ranked.truncate(max_size);

        let mut vocab = Vocabulary::empty(max_size);
        for (t, c) in ranked {
            vocab.push(t.to_string(), c);
        }
        Ok(vocab)
    }

    /// Rebuilds a vocabulary from its ordered token list (index 0 and 1 must be PAD/UNK).
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < 2 || tokens[PAD] != PAD_TOKEN || tokens[UNK] != UNK_TOKEN {
            return Err(Error::Invalid("vocabulary must start with <pad>, <unk>".into()));
        }
        let mut vocab = Vocabulary::empty(tokens.len() - 2);
        for t in tokens.into_iter().skip(2) {
            if vocab.index.contains_key(&t) {
                return Err(Error::Invalid(format!("duplicate vocabulary entry {t:?}")));
            }
            vocab.push(t, 0);
        }
        Ok(vocab)
    }

    fn empty(max_size: usize) -> Self {
        let mut v = Vocabulary {
            index: BTreeMap::new(),
            tokens: Vec::new(),
            counts: Vec::new(),
            max_size,
        };
        v.push(PAD_TOKEN.to_string(), 0);
        v.push(UNK_TOKEN.to_string(), 0);
        v
    }

    fn push(&mut self, token: String, count: u64) {
        self.index.insert(token.clone(), self.tokens.len());
        self.tokens.push(token);
        self.counts.push(count);
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() <= 2
    }

    pub fn max_size(&self) -> usize {
        self.max_size
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    /// Index of `token`, falling back to its lowercase form and then UNK.
    pub fn lookup(&self, token: &str) -> usize {
        self.get(token)
            .or_else(|| self.get(&token.to_lowercase()))
            .unwrap_or(UNK)
    }

    pub fn token(&self, index: usize) -> Option<&str> {
        self.tokens.get(index).map(String::as_str)
    }

    pub fn count(&self, index: usize) -> u64 {
        self.counts.get(index).copied().unwrap_or(0)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens.iter().map(|t| self.lookup(t.as_ref())).collect()
    }
}

/// Word embedding matrix `[vocab × dim]`; the PAD row is zero and frozen.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EmbeddingTable {
    pub id: ParamId,
    pub dim: usize,
}

impl EmbeddingTable {
    /// Rows drawn from seeded `uniform(-0.05, 0.05)`, PAD zeroed.
    pub fn random(params: &mut ParamSet, vocab_size: usize, dim: usize, seed: u64) -> Self {
        Self::from_pretrained(params, vocab_size, dim, seed, |_| None)
            .expect("no pretrained rows to validate")
    }

    /// Copies rows supplied by `pretrained(index)`; other rows are seeded uniform.
    pub fn from_pretrained<F>(
        params: &mut ParamSet,
        vocab_size: usize,
        dim: usize,
        seed: u64,
        mut pretrained: F,
    ) -> Result<Self>
    where
        F: FnMut(usize) -> Option<Vec<f64>>,
    {
        let mut table = Tensor::zeros(&[vocab_size, dim]);
        for row in 1..vocab_size {
            let values = match pretrained(row) {
                Some(v) if v.len() != dim => {
                    return Err(Error::shape("embedding row", &[dim], &[v.len()]));
                }
                Some(v) => v,
                None => {
                    let mut rng = Seeded::new(crate::rng::splitmix(seed ^ row as u64));
                    (0..dim).map(|_| rng.uniform(-0.05, 0.05)).collect()
                }
            };
            table.row_mut(row).copy_from_slice(&values);
        }
        let id = params.add("embedding", table);
        params.get_mut(id).frozen_rows.push(PAD);
        Ok(EmbeddingTable { id, dim })
    }

    pub fn set_trainable(&self, params: &mut ParamSet, trainable: bool) {
        params.get_mut(self.id).requires_grad = trainable;
    }

    pub fn lookup(&self, g: &mut Graph<'_>, token: usize) -> Result<Var> {
        g.param_row(self.id, token)
    }
}

/// Gate weights of one LSTM layer, stacked as `[input; forget; output; candidate]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LstmParameters {
    pub input_weights: ParamId,
    pub hidden_weights: ParamId,
    pub bias: ParamId,
    pub input_dim: usize,
    pub hidden_dim: usize,
}

impl LstmParameters {
    /// Weights from seeded `uniform(-0.08, 0.08)`, forget bias 1, other biases 0.
    pub fn new(params: &mut ParamSet, name: &str, input_dim: usize, hidden_dim: usize, seed: u64) -> Self {
        let mut rng = Seeded::derived(seed, name);
        let wx = rng.tensor(&[4 * hidden_dim, input_dim], 0.08);
        let wh = rng.tensor(&[4 * hidden_dim, hidden_dim], 0.08);
        let mut b = Tensor::zeros(&[4 * hidden_dim]);
        b.data_mut()[hidden_dim..2 * hidden_dim].fill(1.0);
        LstmParameters {
            input_weights: params.add(format!("{name}.wx"), wx),
            hidden_weights: params.add(format!("{name}.wh"), wh),
            bias: params.add(format!("{name}.b"), b),
            input_dim,
            hidden_dim,
        }
    }

    /// One step of the standard LSTM cell: returns `(h', c')`.
    pub fn step(&self, g: &mut Graph<'_>, x: Var, h: Var, c: Var) -> Result<(Var, Var)> {
        let hd = self.hidden_dim;
        if g.shape(x) != [self.input_dim] {
            return Err(Error::shape("lstm_step input", &[self.input_dim], g.shape(x)));
        }
        if g.shape(h) != [hd] || g.shape(c) != [hd] {
            return Err(Error::shape("lstm_step state", &[hd], g.shape(h)));
        }
        let wx = g.param(self.input_weights);
        let wh = g.param(self.hidden_weights);
        let b = g.param(self.bias);
        let zx = g.matvec(wx, x)?;
        let zh = g.matvec(wh, h)?;
        let z = g.add(zx, zh)?;
        let z = g.add(z, b)?;
        let i = g.slice(z, 0, hd)?;
        let f = g.slice(z, hd, hd)?;
        let o = g.slice(z, 2 * hd, hd)?;
        let cand = g.slice(z, 3 * hd, hd)?;
        let i = g.sigmoid(i);
        let f = g.sigmoid(f);
        let o = g.sigmoid(o);
        let cand = g.tanh(cand);
        let keep = g.mul(f, c)?;
        let write = g.mul(i, cand)?;
        let c_next = g.add(keep, write)?;
        let squashed = g.tanh(c_next);
        let h_next = g.mul(o, squashed)?;
        Ok((h_next, c_next))
    }

    /// Runs the cell over `inputs` (reversed when `reverse`), returning hidden
    /// states indexed by input position.
    pub fn run(&self, g: &mut Graph<'_>, inputs: &[Var], reverse: bool) -> Result<Vec<Var>> {
        if inputs.is_empty() {
            return Err(Error::Empty("lstm"));
        }
        let mut h = g.constant(Tensor::zeros(&[self.hidden_dim]));
        let mut c = h;
        let mut out = vec![h; inputs.len()];
        let order: Vec<usize> = if reverse {
            (0..inputs.len()).rev().collect()
        } else {
            (0..inputs.len()).collect()
        };
        for t in order {
            let (h2, c2) = self.step(g, inputs[t], h, c)?;
            h = h2;
            c = c2;
            out[t] = h;
        }
        Ok(out)
    }
}

/// Truncation and dropout settings shared by all encoders.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EncoderOptions {
    pub max_len: usize,
    /// Dropout keep probability applied to recurrent inputs and outputs.
    pub keep_prob: f64,
}

impl Default for EncoderOptions {
    fn default() -> Self {
        EncoderOptions {
            max_len: DEFAULT_MAX_LEN,
            keep_prob: 1.0,
        }
    }
}

/// Drops trailing PAD tokens and truncates to `max_len`.
pub fn real_tokens(tokens: &[usize], max_len: usize) -> Result<&[usize]> {
    let end = tokens.iter().rposition(|&t| t != PAD).map_or(0, |p| p + 1);
    if end == 0 {
        return Err(Error::Empty("sentence"));
    }
    if end > max_len {
        log::warn!("truncating sentence of {end} tokens to {max_len}");
        return Ok(&tokens[..max_len]);
    }
    Ok(&tokens[..end])
}

fn embed_sequence(
    g: &mut Graph<'_>,
    tokens: &[usize],
    emb: &EmbeddingTable,
    opts: &EncoderOptions,
) -> Result<Vec<Var>> {
    let tokens = real_tokens(tokens, opts.max_len)?;
    let mut xs = Vec::with_capacity(tokens.len());
    for &t in tokens {
        let row = emb.lookup(g, t)?;
        xs.push(g.dropout(row, opts.keep_prob));
    }
    Ok(xs)
}

/// Final hidden state of a unidirectional LSTM over the real tokens.
pub fn encode_final(
    g: &mut Graph<'_>,
    tokens: &[usize],
    emb: &EmbeddingTable,
    lstm: &LstmParameters,
    opts: &EncoderOptions,
) -> Result<Var> {
    let xs = embed_sequence(g, tokens, emb, opts)?;
    let hs = lstm.run(g, &xs, false)?;
    let last = *hs.last().expect("non-empty");
    Ok(g.dropout(last, opts.keep_prob))
}

/// Per-time-step hidden states of a BiLSTM, real tokens only.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContextualEmbedding {
    pub forward: Vec<Var>,
    pub backward: Vec<Var>,
}

impl ContextualEmbedding {
    pub fn len(&self) -> usize {
        self.forward.len()
    }

    pub fn is_empty(&self) -> bool {
        self.forward.is_empty()
    }

    /// Forward state after the last real token.
    pub fn forward_final(&self) -> Var {
        *self.forward.last().expect("non-empty")
    }

    /// Backward state after reading back to the first token.
    pub fn backward_final(&self) -> Var {
        self.backward[0]
    }

    /// `[max_len × h]` forward and backward matrices; rows past the real length are zero.
    pub fn padded(&self, g: &Graph<'_>, max_len: usize) -> (Tensor, Tensor) {
        let h = g.value(self.forward[0]).len();
        let fill = |states: &[Var]| {
            let mut t = Tensor::zeros(&[max_len, h]);
            for (i, v) in states.iter().take(max_len).enumerate() {
                t.row_mut(i).copy_from_slice(g.value(*v).data());
            }
            t
        };
        (fill(&self.forward), fill(&self.backward))
    }
}

pub fn encode_contextual(
    g: &mut Graph<'_>,
    tokens: &[usize],
    emb: &EmbeddingTable,
    forward: &LstmParameters,
    backward: &LstmParameters,
    opts: &EncoderOptions,
) -> Result<ContextualEmbedding> {
    let xs = embed_sequence(g, tokens, emb, opts)?;
    bidirectional(g, &xs, forward, backward, opts.keep_prob)
}

/// BiLSTM over arbitrary input vectors (also used for aggregation).
pub fn bidirectional(
    g: &mut Graph<'_>,
    inputs: &[Var],
    forward: &LstmParameters,
    backward: &LstmParameters,
    keep_prob: f64,
) -> Result<ContextualEmbedding> {
    let fwd = forward.run(g, inputs, false)?;
    let bwd = backward.run(g, inputs, true)?;
    let forward = fwd.into_iter().map(|v| g.dropout(v, keep_prob)).collect();
    let backward = bwd.into_iter().map(|v| g.dropout(v, keep_prob)).collect();
    Ok(ContextualEmbedding { forward, backward })
}
