//! Multi-perspective cosine matching, the four sentence-matching strategies,
//! and the affine projection used to match text against image vectors.
//!
//! For perspective `k`, two vectors are compared as
//! `cos(W[k] ∘ a, W[k] ∘ b)` (text/text) or `cos(W[k] ∘ t, U[k] ∘ i)`
//! (text/image). All strategies take the real time-steps only; padding never
//! reaches these functions.

use alloc::format;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, ParamId, ParamSet, Var};
use crate::error::{Error, Result};
use crate::rng::Seeded;
use crate::tensor::Tensor;

/// Floor on the attention normalizer of attentive matching.
pub const ATTENTION_FLOOR: f64 = 1e-8;

/// Trainable `[l × d]` perspective matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PerspectiveWeights {
    pub id: ParamId,
    pub perspectives: usize,
    pub dim: usize,
}

impl PerspectiveWeights {
    pub fn new(params: &mut ParamSet, name: &str, perspectives: usize, dim: usize, seed: u64) -> Result<Self> {
        if perspectives == 0 || dim == 0 {
            return Err(Error::Config(format!("{name}: perspectives and width must be ≥ 1")));
        }
        let mut rng = Seeded::derived(seed, name);
        // uniform(0.1, 1) keeps every row away from zero
        let data = (0..perspectives * dim).map(|_| rng.uniform(0.1, 1.0)).collect();
        let w = Tensor::matrix(perspectives, dim, data)?;
        Ok(PerspectiveWeights {
            id: params.add(name, w),
            perspectives,
            dim,
        })
    }
}

/// `v = weight · f + bias`, mapping `e`-wide image features to the `d`-wide matching space.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AffineMap {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl AffineMap {
    pub fn new(params: &mut ParamSet, name: &str, in_dim: usize, out_dim: usize, seed: u64) -> Self {
        let mut rng = Seeded::derived(seed, name);
        let scale = 1.0 / libm::sqrt(in_dim as f64);
        AffineMap {
            weight: params.add(format!("{name}.w"), rng.tensor(&[out_dim, in_dim], scale)),
            bias: params.add(format!("{name}.b"), Tensor::zeros(&[out_dim])),
            in_dim,
            out_dim,
        }
    }
}

/// Text-side `W` and image-side `U`, both `[l × d]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MultimodalWeights {
    pub text: PerspectiveWeights,
    pub image: PerspectiveWeights,
}

impl MultimodalWeights {
    pub fn new(params: &mut ParamSet, name: &str, perspectives: usize, dim: usize, seed: u64) -> Result<Self> {
        Ok(MultimodalWeights {
            text: PerspectiveWeights::new(params, &format!("{name}.w"), perspectives, dim, seed)?,
            image: PerspectiveWeights::new(params, &format!("{name}.u"), perspectives, dim, seed)?,
        })
    }
}

/// An `l`-wide vector of per-perspective cosines.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchingVector(pub Vec<f64>);

impl MatchingVector {
    pub fn perspectives(&self) -> usize {
        self.0.len()
    }
}

/// How attentive matching turns raw cosines into weights.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionWeighting {
    /// Raw cosines, normalized by their sum floored at [`ATTENTION_FLOOR`].
    #[default]
    Cosine,
    /// Softmax of the raw cosines.
    Softmax,
}

/// Perspective matrices in graph form: `left` weights the query side, `right` the other side.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Perspective {
    pub left: Var,
    pub right: Var,
}

impl Perspective {
    pub fn text(g: &mut Graph<'_>, w: &PerspectiveWeights) -> Self {
        let v = g.param(w.id);
        Perspective { left: v, right: v }
    }

    pub fn multimodal(g: &mut Graph<'_>, mw: &MultimodalWeights) -> Self {
        Perspective {
            left: g.param(mw.text.id),
            right: g.param(mw.image.id),
        }
    }

    fn weigh_left(&self, g: &mut Graph<'_>, v: Var) -> Result<Var> {
        self.check(g, self.left, v)?;
        g.rows_mul(self.left, v)
    }

    fn weigh_right(&self, g: &mut Graph<'_>, v: Var) -> Result<Var> {
        self.check(g, self.right, v)?;
        g.rows_mul(self.right, v)
    }

    fn check(&self, g: &Graph<'_>, w: Var, v: Var) -> Result<()> {
        let ws = g.shape(w);
        let vs = g.shape(v);
        if ws.len() != 2 || vs != [ws[1]] {
            return Err(Error::shape("perspective match", ws, vs));
        }
        Ok(())
    }

    /// `m_k = cos(left[k] ∘ a, right[k] ∘ b)`.
    pub fn matches(&self, g: &mut Graph<'_>, a: Var, b: Var) -> Result<Var> {
        let wa = self.weigh_left(g, a)?;
        let wb = self.weigh_right(g, b)?;
        g.rows_cosine(wa, wb)
    }
}

/// Multi-perspective match of two text vectors with shared weights.
pub fn mp_match(g: &mut Graph<'_>, v1: Var, v2: Var, w: Var) -> Result<Var> {
    Perspective { left: w, right: w }.matches(g, v1, v2)
}

/// Multi-perspective match of a text vector against a projected image vector.
pub fn multimodal_match(g: &mut Graph<'_>, text: Var, image: Var, w: Var, u: Var) -> Result<Var> {
    Perspective { left: w, right: u }.matches(g, text, image)
}

pub fn affine_project(g: &mut Graph<'_>, f: Var, map: &AffineMap) -> Result<Var> {
    if g.shape(f) != [map.in_dim] {
        return Err(Error::shape("affine_project", &[map.in_dim], g.shape(f)));
    }
    let w = g.param(map.weight);
    let b = g.param(map.bias);
    g.affine(w, f, b)
}

/// Each step of `seq` matched against one fixed vector (the other sentence's final state).
pub fn full_matching(g: &mut Graph<'_>, seq: &[Var], other_final: Var, p: Perspective) -> Result<Vec<Var>> {
    if seq.is_empty() {
        return Err(Error::Empty("full_matching"));
    }
    let other = p.weigh_right(g, other_final)?;
    seq.iter()
        .map(|&s| {
            let ws = p.weigh_left(g, s)?;
            g.rows_cosine(ws, other)
        })
        .collect()
}

/// Per step of `seq1`, the element-wise maximum of its matches against every step of `seq2`.
pub fn maxpool_matching(g: &mut Graph<'_>, seq1: &[Var], seq2: &[Var], p: Perspective) -> Result<Vec<Var>> {
    if seq1.is_empty() || seq2.is_empty() {
        return Err(Error::Empty("maxpool_matching"));
    }
    let others: Vec<Var> = seq2
        .iter()
        .map(|&s| p.weigh_right(g, s))
        .collect::<Result<_>>()?;
    let mut out = Vec::with_capacity(seq1.len());
    for &s in seq1 {
        let ws = p.weigh_left(g, s)?;
        let row: Vec<Var> = others
            .iter()
            .map(|&o| g.rows_cosine(ws, o))
            .collect::<Result<_>>()?;
        out.push(if row.len() == 1 { row[0] } else { g.maximum(&row)? });
    }
    Ok(out)
}

fn raw_cosines(g: &mut Graph<'_>, s: Var, seq2: &[Var]) -> Result<Vec<Var>> {
    seq2.iter().map(|&o| g.cosine(s, o)).collect()
}

/// Per step of `seq1`, matched against the cosine-weighted mean of `seq2`.
pub fn attentive_matching(
    g: &mut Graph<'_>,
    seq1: &[Var],
    seq2: &[Var],
    p: Perspective,
    weighting: AttentionWeighting,
) -> Result<Vec<Var>> {
    if seq1.is_empty() || seq2.is_empty() {
        return Err(Error::Empty("attentive_matching"));
    }
    let states = g.stack(seq2)?;
    let mut out = Vec::with_capacity(seq1.len());
    for &s in seq1 {
        let cos = raw_cosines(g, s, seq2)?;
        let weights = g.concat(&cos)?;
        let attended = match weighting {
            AttentionWeighting::Cosine => {
                let total = g.sum(weights);
                let total = g.floor_at(total, ATTENTION_FLOOR);
                let weighted = g.vecmat(weights, states)?;
                g.div_scalar(weighted, total)?
            }
            AttentionWeighting::Softmax => {
                let w = g.softmax(weights)?;
                g.vecmat(w, states)?
            }
        };
        out.push(p.matches(g, s, attended)?);
    }
    Ok(out)
}

/// Per step of `seq1`, matched against the `seq2` step with the highest raw cosine
/// (earliest index on ties).
pub fn max_attentive_matching(g: &mut Graph<'_>, seq1: &[Var], seq2: &[Var], p: Perspective) -> Result<Vec<Var>> {
    if seq1.is_empty() || seq2.is_empty() {
        return Err(Error::Empty("max_attentive_matching"));
    }
    let mut out = Vec::with_capacity(seq1.len());
    for &s in seq1 {
        let sv = g.value(s).data().to_vec();
        let mut best = 0;
        let mut best_cos = f64::NEG_INFINITY;
        for (j, &o) in seq2.iter().enumerate() {
            let c = crate::tensor::cosine(&sv, g.value(o).data());
            if c > best_cos {
                best_cos = c;
                best = j;
            }
        }
        out.push(p.matches(g, s, seq2[best])?);
    }
    Ok(out)
}

/// Value-level [`mp_match`].
pub fn mp_match_values(v1: &Tensor, v2: &Tensor, w: &Tensor) -> Result<MatchingVector> {
    let empty = ParamSet::new();
    let mut g = Graph::new(&empty);
    let (a, b, wv) = (g.constant(v1.clone()), g.constant(v2.clone()), g.constant(w.clone()));
    let m = mp_match(&mut g, a, b, wv)?;
    Ok(MatchingVector(g.value(m).data().to_vec()))
}

/// Value-level [`multimodal_match`].
pub fn multimodal_match_values(text: &Tensor, image: &Tensor, w: &Tensor, u: &Tensor) -> Result<MatchingVector> {
    let empty = ParamSet::new();
    let mut g = Graph::new(&empty);
    let t = g.constant(text.clone());
    let i = g.constant(image.clone());
    let (wv, uv) = (g.constant(w.clone()), g.constant(u.clone()));
    let m = multimodal_match(&mut g, t, i, wv, uv)?;
    Ok(MatchingVector(g.value(m).data().to_vec()))
}
