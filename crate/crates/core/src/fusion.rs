//! Dense layers, gated tanh units, V-LSTM fusion and top-down region attention.

use alloc::format;
use alloc::vec::Vec;

use crate::autodiff::{Graph, ParamId, ParamSet, Var};
use crate::error::{Error, Result};
use crate::features::{FeatureVariant, ImageFeature};
use crate::rng::Seeded;
use crate::tensor::Tensor;

/// `y = W x + b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Dense {
    /// Glorot-uniform weights, zero bias.
    pub fn new(params: &mut ParamSet, name: &str, in_dim: usize, out_dim: usize, seed: u64) -> Self {
        let mut rng = Seeded::derived(seed, name);
        let scale = libm::sqrt(6.0 / (in_dim + out_dim) as f64);
        Dense {
            weight: params.add(format!("{name}.w"), rng.tensor(&[out_dim, in_dim], scale)),
            bias: params.add(format!("{name}.b"), Tensor::zeros(&[out_dim])),
            in_dim,
            out_dim,
        }
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Result<Var> {
        if g.shape(x) != [self.in_dim] {
            return Err(Error::shape("dense", &[self.in_dim], g.shape(x)));
        }
        let w = g.param(self.weight);
        let b = g.param(self.bias);
        g.affine(w, x, b)
    }
}

/// The two branches of a gated tanh unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GatedTanhParameters {
    pub tanh: Dense,
    pub gate: Dense,
}

impl GatedTanhParameters {
    pub fn new(params: &mut ParamSet, name: &str, in_dim: usize, out_dim: usize, seed: u64) -> Self {
        GatedTanhParameters {
            tanh: Dense::new(params, &format!("{name}.tanh"), in_dim, out_dim, seed),
            gate: Dense::new(params, &format!("{name}.gate"), in_dim, out_dim, seed),
        }
    }

    pub fn out_dim(&self) -> usize {
        self.tanh.out_dim
    }
}

/// `tanh(W₁x + b₁) ⊙ σ(W₂x + b₂)`.
pub fn gated_tanh(g: &mut Graph<'_>, x: Var, p: &GatedTanhParameters) -> Result<Var> {
    let a = p.tanh.forward(g, x)?;
    let a = g.tanh(a);
    let s = p.gate.forward(g, x)?;
    let s = g.sigmoid(s);
    g.mul(a, s)
}

/// Text layer and image reduction of the V-LSTM.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VlstmFusion {
    pub text: Dense,
    pub image: Dense,
}

impl VlstmFusion {
    pub fn new(params: &mut ParamSet, name: &str, text_dim: usize, image_dim: usize, seed: u64) -> Self {
        VlstmFusion {
            text: Dense::new(params, &format!("{name}.text"), text_dim, text_dim, seed),
            image: Dense::new(params, &format!("{name}.image"), image_dim, text_dim, seed),
        }
    }

    /// `ReLU(W_t text + b_t)`, the text branch alone.
    pub fn text_branch(&self, g: &mut Graph<'_>, text: Var) -> Result<Var> {
        let t = self.text.forward(g, text)?;
        Ok(g.relu(t))
    }
}

/// `ReLU(W_t text + b_t) ⊙ (W_i image + b_i)` for a global image vector.
pub fn vlstm_fuse(g: &mut Graph<'_>, text: Var, image: &ImageFeature, p: &VlstmFusion) -> Result<Var> {
    image.expect_variant(FeatureVariant::Global)?;
    let iv = g.constant(image.data.clone());
    vlstm_fuse_var(g, text, iv, p)
}

pub fn vlstm_fuse_var(g: &mut Graph<'_>, text: Var, image: Var, p: &VlstmFusion) -> Result<Var> {
    let t = p.text_branch(g, text)?;
    let i = p.image.forward(g, image)?;
    g.mul(t, i)
}

/// Region scorer: `linear(gated_tanh(concat(text, region)))`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TopDownAttention {
    pub hidden: GatedTanhParameters,
    pub score: Dense,
    pub text_dim: usize,
    pub region_dim: usize,
}

impl TopDownAttention {
    pub fn new(params: &mut ParamSet, name: &str, text_dim: usize, region_dim: usize, hidden: usize, seed: u64) -> Self {
        TopDownAttention {
            hidden: GatedTanhParameters::new(params, &format!("{name}.hidden"), text_dim + region_dim, hidden, seed),
            score: Dense::new(params, &format!("{name}.score"), hidden, 1, seed),
            text_dim,
            region_dim,
        }
    }
}

/// Attention output and the weights it used.
#[derive(Debug, Clone, PartialEq)]
pub struct Attended {
    pub output: Var,
    pub weights: Var,
}

/// Attention over a 36-region feature.
pub fn topdown_attention(g: &mut Graph<'_>, text: Var, regions: &ImageFeature, p: &TopDownAttention) -> Result<Attended> {
    regions.expect_variant(FeatureVariant::Regions)?;
    let rows: Vec<Var> = (0..regions.data.rows())
        .map(|r| Tensor::vector(regions.data.row(r).to_vec()).map(|t| g.constant(t)))
        .collect::<Result<_>>()?;
    attend(g, text, &rows, p)
}

/// Attention over an arbitrary set of region vectors; masked regions are simply left out.
pub fn attend(g: &mut Graph<'_>, text: Var, regions: &[Var], p: &TopDownAttention) -> Result<Attended> {
    if regions.is_empty() {
        return Err(Error::Empty("attention regions"));
    }
    let mut scores = Vec::with_capacity(regions.len());
    for &r in regions {
        let x = g.concat(&[text, r])?;
        let hdn = gated_tanh(g, x, &p.hidden)?;
        scores.push(p.score.forward(g, hdn)?);
    }
    let scores = g.concat(&scores)?;
    let weights = g.softmax(scores)?;
    let stacked = g.stack(regions)?;
    let output = g.vecmat(weights, stacked)?;
    Ok(Attended { output, weights })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::grad_check_params;
    use alloc::vec;

    fn v(x: &[f64]) -> Tensor {
        Tensor::vector(x.to_vec()).unwrap()
    }

    #[test]
    fn gated_tanh_zero_params_gives_zero() {
        let mut ps = ParamSet::new();
        let p = GatedTanhParameters::new(&mut ps, "g", 3, 2, 0);
        for id in ps.ids().collect::<Vec<_>>() {
            ps.get_mut(id).value.data_mut().fill(0.0);
        }
        let mut g = Graph::new(&ps);
        let x = g.constant(v(&[1., -2., 3.]));
        let y = gated_tanh(&mut g, x, &p).unwrap();
        assert_eq!(g.value(y).data(), &[0., 0.]);
    }

    #[test]
    fn gated_tanh_saturated_gate_is_tanh() {
        let mut ps = ParamSet::new();
        let p = GatedTanhParameters::new(&mut ps, "g", 2, 2, 1);
        ps.get_mut(p.gate.weight).value.data_mut().fill(0.0);
        ps.get_mut(p.gate.bias).value.data_mut().fill(50.0);
        let mut g = Graph::new(&ps);
        let x = g.constant(v(&[0.4, -0.3]));
        let y = gated_tanh(&mut g, x, &p).unwrap();
        let t = p.tanh.forward(&mut g, x).unwrap();
        let t = g.tanh(t);
        for (a, b) in g.value(y).data().iter().zip(g.value(t).data()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn gated_tanh_scalar_oracle() {
        let mut ps = ParamSet::new();
        let p = GatedTanhParameters::new(&mut ps, "g", 2, 1, 4);
        let mut g = Graph::new(&ps);
        let x = g.constant(v(&[0.7, -1.2]));
        let y = gated_tanh(&mut g, x, &p).unwrap();
        let y = g.value(y).item();
        let w1 = ps.value(p.tanh.weight).data();
        let w2 = ps.value(p.gate.weight).data();
        let a = libm::tanh(w1[0] * 0.7 - w1[1] * 1.2);
        let s = 1.0 / (1.0 + libm::exp(-(w2[0] * 0.7 - w2[1] * 1.2)));
        assert!((y - a * s).abs() < 1e-14);
    }

    #[test]
    fn vlstm_fuse_identities() {
        let mut ps = ParamSet::new();
        let p = VlstmFusion::new(&mut ps, "f", 2, 3, 0);
        ps.get_mut(p.image.weight).value.data_mut().fill(0.0);
        ps.get_mut(p.image.bias).value.data_mut().fill(1.0);
        let img = ImageFeature::new("i", FeatureVariant::Global, v(&[0.6, 0.8, 0.0])).unwrap();
        let mut g = Graph::new(&ps);
        let t = g.constant(v(&[0.5, -0.1]));
        let fused = vlstm_fuse(&mut g, t, &img, &p).unwrap();
        let text = p.text_branch(&mut g, t).unwrap();
        assert_eq!(g.value(fused).data(), g.value(text).data());

        let z = g.constant(v(&[0.0, 0.0]));
        let fused = vlstm_fuse(&mut g, z, &img, &p).unwrap();
        assert_eq!(g.value(fused).data(), &[0.0, 0.0]);

        let grid = ImageFeature::new("i", FeatureVariant::Grid, Tensor::zeros(&[49, 3])).unwrap();
        assert!(matches!(vlstm_fuse(&mut g, t, &grid, &p), Err(Error::Variant { .. })));
    }

    #[test]
    fn attention_singleton_and_identical_regions() {
        let mut ps = ParamSet::new();
        let p = TopDownAttention::new(&mut ps, "a", 2, 3, 4, 0);
        let mut g = Graph::new(&ps);
        let t = g.constant(v(&[0.3, 0.2]));
        let r = g.constant(v(&[1.0, -2.0, 0.5]));
        let a = attend(&mut g, t, &[r], &p).unwrap();
        assert_eq!(g.value(a.output).data(), g.value(r).data());
        let a = attend(&mut g, t, &[r, r, r], &p).unwrap();
        for (x, y) in g.value(a.output).data().iter().zip(g.value(r).data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn attention_two_regions_hand_weights() {
        let mut ps = ParamSet::new();
        let p = TopDownAttention::new(&mut ps, "a", 1, 1, 1, 0);
        // gate saturated and text column zeroed, so score_r = tanh(r)
        ps.get_mut(p.hidden.tanh.weight).value = Tensor::matrix(1, 2, vec![0.0, 1.0]).unwrap();
        ps.get_mut(p.hidden.gate.weight).value.data_mut().fill(0.0);
        ps.get_mut(p.hidden.gate.bias).value.data_mut().fill(60.0);
        ps.get_mut(p.score.weight).value.data_mut().fill(1.0);
        let mut g = Graph::new(&ps);
        let t = g.constant(v(&[5.0]));
        let r1 = g.constant(v(&[0.5]));
        let r2 = g.constant(v(&[-0.5]));
        let a = attend(&mut g, t, &[r1, r2], &p).unwrap();
        let s1 = libm::tanh(0.5);
        let w1 = 1.0 / (1.0 + libm::exp(-2.0 * s1));
        let expected = w1 * 0.5 + (1.0 - w1) * -0.5;
        assert!((g.value(a.output).item() - expected).abs() < 1e-12);
        let ws = g.value(a.weights).data();
        assert!((ws[0] + ws[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn topdown_requires_regions() {
        let mut ps = ParamSet::new();
        let p = TopDownAttention::new(&mut ps, "a", 2, 3, 4, 0);
        let mut g = Graph::new(&ps);
        let t = g.constant(v(&[0.3, 0.2]));
        let img = ImageFeature::new("i", FeatureVariant::Global, v(&[1.0, 0.0, 0.0])).unwrap();
        assert!(matches!(topdown_attention(&mut g, t, &img, &p), Err(Error::Variant { .. })));
    }

    #[test]
    fn fusion_gradients_match_finite_differences() {
        for seed in 0..10 {
            let mut ps = ParamSet::new();
            let f = VlstmFusion::new(&mut ps, "f", 3, 4, seed);
            let gt = GatedTanhParameters::new(&mut ps, "g", 3, 2, seed);
            let att = TopDownAttention::new(&mut ps, "a", 3, 4, 2, seed);
            let mut rng = Seeded::new(seed);
            let text = rng.tensor(&[3], 1.0);
            let img = rng.tensor(&[4], 1.0);
            let regions: Vec<Tensor> = (0..3).map(|_| rng.tensor(&[4], 1.0)).collect();
            let err = grad_check_params(
                &ps,
                |g| {
                    let t = g.constant(text.clone());
                    let i = g.constant(img.clone());
                    let a = vlstm_fuse_var(g, t, i, &f)?;
                    let b = gated_tanh(g, t, &gt)?;
                    let rs: Vec<Var> = regions.iter().map(|r| g.constant(r.clone())).collect();
                    let c = attend(g, t, &rs, &att)?.output;
                    let all = g.concat(&[a, b, c])?;
                    let sq = g.mul(all, all)?;
                    Ok(g.sum(sq))
                },
                1e-5,
            )
            .unwrap();
            assert!(err < 1e-5, "seed {seed}: {err}");
        }
    }
}
