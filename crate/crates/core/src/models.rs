//! The five architectures, their configuration and the grounding ablations.
//!
//! Parameter layouts depend only on the architecture and its dimensions, never
//! on the grounding: an input that a grounding leaves out is replaced by a
//! zero vector of the same width. A checkpoint can therefore be evaluated under
//! any grounding its architecture supports.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, ParamSet, Var};
use crate::data::{Example, Label};
use crate::encoders::{
    self, ContextualEmbedding, EmbeddingTable, EncoderOptions, LstmParameters, Vocabulary,
};
use crate::error::{Error, Result};
use crate::features::{FeatureVariant, ImageFeature, ImageLookup};
use crate::fusion::{self, Dense, GatedTanhParameters, TopDownAttention, VlstmFusion};
use crate::matching::{
    self, AffineMap, AttentionWeighting, MultimodalWeights, Perspective, PerspectiveWeights,
};
use crate::rng;
use crate::tensor::{self, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Architecture {
    #[serde(rename = "LSTM")]
    Lstm,
    #[serde(rename = "V_LSTM")]
    VLstm,
    #[serde(rename = "BIMPM")]
    Bimpm,
    #[serde(rename = "V_BIMPM")]
    VBimpm,
    #[serde(rename = "VQA")]
    Vqa,
}

impl Architecture {
    pub const ALL: [Architecture; 5] = [
        Architecture::Lstm,
        Architecture::VLstm,
        Architecture::Bimpm,
        Architecture::VBimpm,
        Architecture::Vqa,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Architecture::Lstm => "LSTM",
            Architecture::VLstm => "V_LSTM",
            Architecture::Bimpm => "BIMPM",
            Architecture::VBimpm => "V_BIMPM",
            Architecture::Vqa => "VQA",
        }
    }

    /// Accepts `V_LSTM`, `v-lstm`, `vlstm` and similar spellings.
    pub fn parse(s: &str) -> Option<Self> {
        let key: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .map(|c| c.to_ascii_lowercase())
            .collect();
        match key.as_str() {
            "lstm" => Some(Architecture::Lstm),
            "vlstm" => Some(Architecture::VLstm),
            "bimpm" => Some(Architecture::Bimpm),
            "vbimpm" => Some(Architecture::VBimpm),
            "vqa" => Some(Architecture::Vqa),
            _ => None,
        }
    }

    /// The image representation the architecture consumes, if any.
    pub fn feature_variant(self) -> Option<FeatureVariant> {
        match self {
            Architecture::Lstm | Architecture::Bimpm => None,
            Architecture::VLstm => Some(FeatureVariant::Global),
            Architecture::VBimpm => Some(FeatureVariant::Grid),
            Architecture::Vqa => Some(FeatureVariant::Regions),
        }
    }

    pub fn uses_image(self) -> bool {
        self.feature_variant().is_some()
    }
}

/// Which inputs reach the model.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Grounding {
    /// Premise and hypothesis, no image.
    #[default]
    #[serde(rename = "NONE")]
    None,
    /// `[H]`: hypothesis only.
    #[serde(rename = "H_ONLY_TEXT", alias = "H")]
    HypothesisOnly,
    /// `[H+I]`: hypothesis and image, premise left out.
    #[serde(rename = "H_PLUS_IMAGE", alias = "H+I")]
    HypothesisImage,
    /// Premise as text, image combined with the hypothesis only.
    #[serde(rename = "HI_ONLY", alias = "P,H+I")]
    GroundHypothesis,
    /// Image combined with both sentences.
    #[serde(rename = "FULL", alias = "FULL_BOTH", alias = "P+I,H+I")]
    Full,
}

impl Grounding {
    pub const ALL: [Grounding; 5] = [
        Grounding::None,
        Grounding::HypothesisOnly,
        Grounding::HypothesisImage,
        Grounding::GroundHypothesis,
        Grounding::Full,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Grounding::None => "NONE",
            Grounding::HypothesisOnly => "H_ONLY_TEXT",
            Grounding::HypothesisImage => "H_PLUS_IMAGE",
            Grounding::GroundHypothesis => "HI_ONLY",
            Grounding::Full => "FULL",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "NONE" => Some(Grounding::None),
            "H_ONLY_TEXT" | "H" | "[H]" => Some(Grounding::HypothesisOnly),
            "H_PLUS_IMAGE" | "H+I" | "[H+I]" => Some(Grounding::HypothesisImage),
            "HI_ONLY" | "P,H+I" => Some(Grounding::GroundHypothesis),
            "FULL" | "FULL_BOTH" | "P+I,H+I" => Some(Grounding::Full),
            _ => None,
        }
    }

    /// Command-line form: `grounding` is `none`, `h` (image on H) or `ph`
    /// (image on P and H); `hypothesis_only` drops the premise.
    pub fn from_cli(grounding: &str, hypothesis_only: bool) -> Result<Self> {
        match (grounding.trim().to_ascii_lowercase().as_str(), hypothesis_only) {
            ("none", false) => Ok(Grounding::None),
            ("none", true) => Ok(Grounding::HypothesisOnly),
            ("h", false) => Ok(Grounding::GroundHypothesis),
            ("h", true) => Ok(Grounding::HypothesisImage),
            ("ph", false) => Ok(Grounding::Full),
            ("ph", true) => Err(Error::Config("--grounding ph needs the premise; drop --hypothesis-only".into())),
            (other, _) => Err(Error::Config(format!("unknown grounding {other:?} (expected h, ph or none)"))),
        }
    }

    pub fn uses_premise(self) -> bool {
        !matches!(self, Grounding::HypothesisOnly | Grounding::HypothesisImage)
    }

    pub fn uses_image(self) -> bool {
        matches!(
            self,
            Grounding::HypothesisImage | Grounding::GroundHypothesis | Grounding::Full
        )
    }

    pub fn grounds_premise(self) -> bool {
        self == Grounding::Full
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub architecture: Architecture,
    pub grounding: Grounding,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    /// Number of matching perspectives `l` (BiMPM family).
    pub perspectives: usize,
    /// Dropout keep probability during training.
    pub keep_prob: f64,
    pub seed: u64,
    pub max_len: usize,
    /// Width of each image vector; the variant's nominal width when absent.
    pub image_width: Option<usize>,
    pub attention: AttentionWeighting,
    /// V-BiMPM: also full-match every step against the mean image vector.
    pub mean_image_matching: bool,
    /// Give the premise its own sentence encoder instead of sharing the hypothesis one.
    pub separate_encoders: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            architecture: Architecture::Lstm,
            grounding: Grounding::None,
            embed_dim: 300,
            hidden_dim: 512,
            perspectives: 8,
            keep_prob: 0.5,
            seed: 0,
            max_len: encoders::DEFAULT_MAX_LEN,
            image_width: None,
            attention: AttentionWeighting::Cosine,
            mean_image_matching: false,
            separate_encoders: false,
        }
    }
}

impl ModelConfig {
    /// Defaults for `architecture` with its preferred grounding (image on H for visual models).
    pub fn new(architecture: Architecture) -> Self {
        let grounding = if architecture.uses_image() {
            Grounding::GroundHypothesis
        } else {
            Grounding::None
        };
        ModelConfig {
            architecture,
            grounding,
            ..ModelConfig::default()
        }
    }

    /// Small dimensions for fixtures and tests.
    pub fn toy(architecture: Architecture, dim: usize, perspectives: usize, image_width: usize) -> Self {
        ModelConfig {
            embed_dim: dim,
            hidden_dim: dim,
            perspectives,
            image_width: Some(image_width),
            ..ModelConfig::new(architecture)
        }
    }

    pub fn image_width(&self) -> Option<usize> {
        self.architecture
            .feature_variant()
            .map(|v| self.image_width.unwrap_or(v.nominal_width()))
    }

    pub fn validate(&self) -> Result<()> {
        check_grounding(self.architecture, self.grounding)?;
        if self.embed_dim == 0 || self.hidden_dim == 0 || self.perspectives == 0 || self.max_len == 0 {
            return Err(Error::Config("dimensions must be positive".into()));
        }
        if self.image_width == Some(0) {
            return Err(Error::Config("image width must be positive".into()));
        }
        if !(self.keep_prob > 0.0 && self.keep_prob <= 1.0) {
            return Err(Error::Config(format!("keep probability {} outside (0, 1]", self.keep_prob)));
        }
        Ok(())
    }

    fn encoder_options(&self) -> EncoderOptions {
        EncoderOptions {
            max_len: self.max_len,
            keep_prob: self.keep_prob,
        }
    }
}

/// Rejects groundings the architecture cannot honour.
pub fn check_grounding(architecture: Architecture, grounding: Grounding) -> Result<()> {
    let ok = match architecture {
        Architecture::Lstm => !grounding.uses_image(),
        // matching needs two sentences
        Architecture::Bimpm => grounding == Grounding::None,
        _ => grounding.uses_image(),
    };
    if ok {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "grounding {} is not available for {}",
            grounding.name(),
            architecture.name()
        )))
    }
}

/// Class probabilities in (entailment, contradiction, neutral) order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub probabilities: [f64; 3],
    pub label: Label,
}

impl Prediction {
    pub fn from_logits(logits: &[f64]) -> Result<Self> {
        if logits.len() != 3 {
            return Err(Error::shape("prediction", &[3], &[logits.len()]));
        }
        let p = tensor::softmax(logits);
        if p.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite(String::from("logits")));
        }
        let probabilities = [p[0], p[1], p[2]];
        let mut best = 0;
        for k in 1..3 {
            if probabilities[k] > probabilities[best] {
                best = k;
            }
        }
        Ok(Prediction {
            probabilities,
            label: Label::ALL[best],
        })
    }
}

/// Raw input of one pair.
#[derive(Debug, Clone, Copy)]
pub struct ModelInput<'a> {
    pub premise: &'a [usize],
    pub hypothesis: &'a [usize],
    pub image: Option<&'a ImageFeature>,
}

/// What a forward pass actually sees after the grounding ablation.
#[derive(Debug, Clone, Copy)]
pub struct EffectiveInput<'a> {
    pub premise: Option<&'a [usize]>,
    pub hypothesis: &'a [usize],
    pub premise_image: Option<&'a ImageFeature>,
    pub hypothesis_image: Option<&'a ImageFeature>,
}

/// `[H]` drops premise and image, `[H+I]` drops the premise, the others keep both
/// sentences and attach the image where the grounding says.
pub fn apply_ablation<'a>(grounding: Grounding, input: &ModelInput<'a>) -> Result<EffectiveInput<'a>> {
    let image = if grounding.uses_image() {
        Some(input.image.ok_or_else(|| Error::MissingImage(String::from("pair")))?)
    } else {
        None
    };
    Ok(EffectiveInput {
        premise: grounding.uses_premise().then_some(input.premise),
        hypothesis: input.hypothesis,
        premise_image: if grounding.grounds_premise() { image } else { None },
        hypothesis_image: image,
    })
}

#[derive(Debug, Clone, PartialEq)]
struct Classifier {
    layers: Vec<Dense>,
    out: Dense,
}

impl Classifier {
    fn new(params: &mut ParamSet, name: &str, in_dim: usize, hidden: usize, depth: usize, seed: u64) -> Self {
        let mut layers = Vec::with_capacity(depth);
        let mut width = in_dim;
        for k in 0..depth {
            layers.push(Dense::new(params, &format!("{name}{k}"), width, hidden, seed));
            width = hidden;
        }
        Classifier {
            layers,
            out: Dense::new(params, &format!("{name}.out"), width, 3, seed),
        }
    }

    /// ReLU layers with dropout, then the output layer.
    fn relu_logits(&self, g: &mut Graph<'_>, mut x: Var, keep: f64) -> Result<Var> {
        for l in &self.layers {
            let y = l.forward(g, x)?;
            let y = g.relu(y);
            x = g.dropout(y, keep);
        }
        self.out.forward(g, x)
    }
}

#[derive(Debug, Clone, PartialEq)]
struct LstmLayout {
    embedding: EmbeddingTable,
    encoder: LstmParameters,
    premise_encoder: Option<LstmParameters>,
    classifier: Classifier,
}

#[derive(Debug, Clone, PartialEq)]
struct VlstmLayout {
    base: LstmLayout,
    fusion: VlstmFusion,
}

#[derive(Debug, Clone, PartialEq)]
struct ImageMatching {
    project: AffineMap,
    /// maxpool, attentive, max-attentive (forward, backward each), then the
    /// optional mean-image full matching pair.
    weights: Vec<MultimodalWeights>,
}

#[derive(Debug, Clone, PartialEq)]
struct BimpmLayout {
    embedding: EmbeddingTable,
    context_fwd: LstmParameters,
    context_bwd: LstmParameters,
    premise_context: Option<(LstmParameters, LstmParameters)>,
    /// full, maxpool, attentive, max-attentive (forward, backward each).
    text: Vec<PerspectiveWeights>,
    image: Option<ImageMatching>,
    aggregate_fwd: LstmParameters,
    aggregate_bwd: LstmParameters,
    hidden: Dense,
    out: Dense,
}

#[derive(Debug, Clone, PartialEq)]
struct VqaLayout {
    embedding: EmbeddingTable,
    encoder: LstmParameters,
    premise_encoder: Option<LstmParameters>,
    attention: TopDownAttention,
    text_reduce: GatedTanhParameters,
    image_reduce: GatedTanhParameters,
    stack: Vec<GatedTanhParameters>,
    out: Dense,
}

#[derive(Debug, Clone, PartialEq)]
enum Layout {
    Lstm(LstmLayout),
    VLstm(VlstmLayout),
    Bimpm(BimpmLayout),
    Vqa(VqaLayout),
}

/// Architecture wiring: parameter handles plus configuration, no values.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    config: ModelConfig,
    layout: Layout,
}

const TEXT_STRATEGIES: usize = 8;
const IMAGE_STRATEGIES: usize = 6;

impl Network {
    /// Allocates and initializes every parameter of `config` in `params`.
    pub fn build<F>(config: &ModelConfig, vocab_size: usize, params: &mut ParamSet, pretrained: F) -> Result<Self>
    where
        F: FnMut(usize) -> Option<Vec<f64>>,
    {
        config.validate()?;
        let seed = config.seed;
        let (e, h, l) = (config.embed_dim, config.hidden_dim, config.perspectives);
        let s = |label: &str| rng::mix(seed, label);
        let embedding = EmbeddingTable::from_pretrained(params, vocab_size, e, s("embedding"), pretrained)?;
        let separate = config.separate_encoders;
        let premise_lstm = |params: &mut ParamSet, name: &str| separate.then(|| LstmParameters::new(params, name, e, h, seed));
        let lstm_base = |params: &mut ParamSet, embedding| LstmLayout {
            embedding,
            encoder: LstmParameters::new(params, "encoder", e, h, seed),
            premise_encoder: premise_lstm(params, "encoder.premise"),
            classifier: Classifier::new(params, "mlp", 2 * h, h, 3, seed),
        };
        let layout = match config.architecture {
            Architecture::Lstm => Layout::Lstm(lstm_base(params, embedding)),
            Architecture::VLstm => {
                let base = lstm_base(params, embedding);
                let w = config.image_width().expect("visual architecture");
                Layout::VLstm(VlstmLayout {
                    base,
                    fusion: VlstmFusion::new(params, "fusion", h, w, seed),
                })
            }
            Architecture::Bimpm | Architecture::VBimpm => {
                let context_fwd = LstmParameters::new(params, "context.fwd", e, h, seed);
                let context_bwd = LstmParameters::new(params, "context.bwd", e, h, seed);
                let premise_context = premise_lstm(params, "context.premise.fwd")
                    .map(|f| (f, LstmParameters::new(params, "context.premise.bwd", e, h, seed)));
                let names = ["full", "maxpool", "attentive", "max_attentive"];
                let mut text = Vec::with_capacity(TEXT_STRATEGIES);
                for n in names {
                    for d in ["fwd", "bwd"] {
                        text.push(PerspectiveWeights::new(params, &format!("match.{n}.{d}"), l, h, seed)?);
                    }
                }
                let mut channels = TEXT_STRATEGIES;
                let image = if config.architecture == Architecture::VBimpm {
                    let w = config.image_width().expect("visual architecture");
                    let project = AffineMap::new(params, "image.project", w, h, seed);
                    let mut names = vec!["maxpool", "attentive", "max_attentive"];
                    if config.mean_image_matching {
                        names.push("mean");
                    }
                    let mut weights = Vec::new();
                    for n in names {
                        for d in ["fwd", "bwd"] {
                            weights.push(MultimodalWeights::new(params, &format!("image.{n}.{d}"), l, h, seed)?);
                        }
                    }
                    channels += weights.len();
                    Some(ImageMatching { project, weights })
                } else {
                    None
                };
                Layout::Bimpm(BimpmLayout {
                    embedding,
                    context_fwd,
                    context_bwd,
                    premise_context,
                    text,
                    image,
                    aggregate_fwd: LstmParameters::new(params, "aggregate.fwd", channels * l, h, seed),
                    aggregate_bwd: LstmParameters::new(params, "aggregate.bwd", channels * l, h, seed),
                    hidden: Dense::new(params, "head.hidden", 4 * h, h, seed),
                    out: Dense::new(params, "head.out", h, 3, seed),
                })
            }
            Architecture::Vqa => {
                let w = config.image_width().expect("visual architecture");
                let stack = (0..3)
                    .map(|k| GatedTanhParameters::new(params, &format!("stack{k}"), if k == 0 { 2 * h } else { h }, h, seed))
                    .collect();
                Layout::Vqa(VqaLayout {
                    embedding,
                    encoder: LstmParameters::new(params, "encoder", e, h, seed),
                    premise_encoder: premise_lstm(params, "encoder.premise"),
                    attention: TopDownAttention::new(params, "attention", h, w, h, seed),
                    text_reduce: GatedTanhParameters::new(params, "reduce.text", h, h, seed),
                    image_reduce: GatedTanhParameters::new(params, "reduce.image", w, h, seed),
                    stack,
                    out: Dense::new(params, "head.out", h, 3, seed),
                })
            }
        };
        Ok(Network {
            config: config.clone(),
            layout,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// The same wiring evaluated under another grounding.
    pub fn with_grounding(&self, grounding: Grounding) -> Result<Network> {
        check_grounding(self.config.architecture, grounding)?;
        let mut n = self.clone();
        n.config.grounding = grounding;
        Ok(n)
    }

    pub fn embedding(&self) -> EmbeddingTable {
        match &self.layout {
            Layout::Lstm(l) => l.embedding,
            Layout::VLstm(l) => l.base.embedding,
            Layout::Bimpm(l) => l.embedding,
            Layout::Vqa(l) => l.embedding,
        }
    }

    /// Unnormalized class scores for one pair.
    pub fn logits(&self, g: &mut Graph<'_>, input: &ModelInput<'_>) -> Result<Var> {
        let eff = apply_ablation(self.config.grounding, input)?;
        self.logits_effective(g, &eff)
    }

    /// Cross-entropy of the pair's gold label.
    pub fn loss(&self, g: &mut Graph<'_>, input: &ModelInput<'_>, label: Label) -> Result<Var> {
        let logits = self.logits(g, input)?;
        g.cross_entropy(logits, label.index())
    }

    pub fn logits_effective(&self, g: &mut Graph<'_>, input: &EffectiveInput<'_>) -> Result<Var> {
        if let Some(variant) = self.config.architecture.feature_variant() {
            for img in [input.premise_image, input.hypothesis_image].into_iter().flatten() {
                img.expect_variant(variant)?;
            }
        }
        match &self.layout {
            Layout::Lstm(l) => self.lstm(g, l, input),
            Layout::VLstm(l) => self.vlstm(g, l, input),
            Layout::Bimpm(l) => self.bimpm(g, l, input),
            Layout::Vqa(l) => self.vqa(g, l, input),
        }
    }

    fn zeros(&self, g: &mut Graph<'_>, width: usize) -> Var {
        g.constant(Tensor::zeros(&[width]))
    }

    fn lstm(&self, g: &mut Graph<'_>, l: &LstmLayout, input: &EffectiveInput<'_>) -> Result<Var> {
        let opts = self.config.encoder_options();
        let h = encoders::encode_final(g, input.hypothesis, &l.embedding, &l.encoder, &opts)?;
        let p = match input.premise {
            Some(p) => encoders::encode_final(g, p, &l.embedding, l.premise_encoder.as_ref().unwrap_or(&l.encoder), &opts)?,
            None => self.zeros(g, self.config.hidden_dim),
        };
        let x = g.concat(&[p, h])?;
        l.classifier.relu_logits(g, x, self.config.keep_prob)
    }

    fn vlstm(&self, g: &mut Graph<'_>, l: &VlstmLayout, input: &EffectiveInput<'_>) -> Result<Var> {
        let opts = self.config.encoder_options();
        let keep = self.config.keep_prob;
        let b = &l.base;
        let side = |g: &mut Graph<'_>, tokens: Option<&[usize]>, image: Option<&ImageFeature>, encoder: &LstmParameters| -> Result<Var> {
            let Some(tokens) = tokens else {
                return Ok(g.constant(Tensor::zeros(&[self.config.hidden_dim])));
            };
            let text = encoders::encode_final(g, tokens, &b.embedding, encoder, &opts)?;
            let v = match image {
                Some(img) => fusion::vlstm_fuse(g, text, img, &l.fusion)?,
                None => l.fusion.text_branch(g, text)?,
            };
            Ok(g.dropout(v, keep))
        };
        let p = side(g, input.premise, input.premise_image, b.premise_encoder.as_ref().unwrap_or(&b.encoder))?;
        let h = side(g, Some(input.hypothesis), input.hypothesis_image, &b.encoder)?;
        let x = g.concat(&[p, h])?;
        b.classifier.relu_logits(g, x, keep)
    }

    fn bimpm<'i>(&self, g: &mut Graph<'_>, l: &BimpmLayout, input: &EffectiveInput<'i>) -> Result<Var> {
        let opts = self.config.encoder_options();
        let keep = self.config.keep_prob;
        let lp = self.config.perspectives;
        let hd = self.config.hidden_dim;
        let encode = |g: &mut Graph<'_>, t: &[usize], (fwd, bwd): (&LstmParameters, &LstmParameters)| {
            encoders::encode_contextual(g, t, &l.embedding, fwd, bwd, &opts)
        };
        let ctx_h = encode(g, input.hypothesis, (&l.context_fwd, &l.context_bwd))?;
        let premise_lstms = match &l.premise_context {
            Some((f, b)) => (f, b),
            None => (&l.context_fwd, &l.context_bwd),
        };
        let ctx_p = match input.premise {
            Some(p) => Some(encode(g, p, premise_lstms)?),
            None => None,
        };

        // P→H, H→P text matching; zeros when the premise is absent
        let (text_p, text_h) = match &ctx_p {
            Some(cp) => (
                Some(self.match_text(g, l, cp, &ctx_h)?),
                self.match_text(g, l, &ctx_h, cp)?,
            ),
            None => {
                let z = self.zeros(g, TEXT_STRATEGIES * lp);
                (None, vec![z; ctx_h.len()])
            }
        };

        let mut projected: Option<(&'i ImageFeature, Vec<Var>)> = None;
        let mut image_channels = |g: &mut Graph<'_>, ctx: &ContextualEmbedding, img: Option<&'i ImageFeature>| -> Result<Option<Vec<Var>>> {
            let Some(im) = &l.image else { return Ok(None) };
            let Some(img) = img else {
                let z = g.constant(Tensor::zeros(&[im.weights.len() * lp]));
                return Ok(Some(vec![z; ctx.len()]));
            };
            let vs = match &projected {
                Some((k, vs)) if core::ptr::eq(*k, img) => vs.clone(),
                _ => {
                    let vs = project_grid(g, img, &im.project)?;
                    projected = Some((img, vs.clone()));
                    vs
                }
            };
            Ok(Some(self.match_image(g, im, ctx, &vs)?))
        };

        let img_h = image_channels(g, &ctx_h, input.hypothesis_image)?;
        let agg_h = self.aggregate(g, l, text_h, img_h)?;
        let (pf, pb) = match (&ctx_p, text_p) {
            (Some(cp), Some(tp)) => {
                let img_p = image_channels(g, cp, input.premise_image)?;
                let agg = self.aggregate(g, l, tp, img_p)?;
                (agg.forward_final(), agg.backward_final())
            }
            _ => {
                let z = self.zeros(g, hd);
                (z, z)
            }
        };
        let x = g.concat(&[pf, pb, agg_h.forward_final(), agg_h.backward_final()])?;
        let y = l.hidden.forward(g, x)?;
        let y = g.tanh(y);
        let y = g.dropout(y, keep);
        l.out.forward(g, y)
    }

    /// Per step of `a`, the 8 text matching vectors against `b`, concatenated.
    fn match_text(&self, g: &mut Graph<'_>, l: &BimpmLayout, a: &ContextualEmbedding, b: &ContextualEmbedding) -> Result<Vec<Var>> {
        let w: Vec<Perspective> = l.text.iter().map(|p| Perspective::text(g, p)).collect();
        let att = self.config.attention;
        let parts = [
            matching::full_matching(g, &a.forward, b.forward_final(), w[0])?,
            matching::full_matching(g, &a.backward, b.backward_final(), w[1])?,
            matching::maxpool_matching(g, &a.forward, &b.forward, w[2])?,
            matching::maxpool_matching(g, &a.backward, &b.backward, w[3])?,
            matching::attentive_matching(g, &a.forward, &b.forward, w[4], att)?,
            matching::attentive_matching(g, &a.backward, &b.backward, w[5], att)?,
            matching::max_attentive_matching(g, &a.forward, &b.forward, w[6])?,
            matching::max_attentive_matching(g, &a.backward, &b.backward, w[7])?,
        ];
        per_step_concat(g, &parts)
    }

    fn match_image(&self, g: &mut Graph<'_>, im: &ImageMatching, a: &ContextualEmbedding, vs: &[Var]) -> Result<Vec<Var>> {
        let w: Vec<Perspective> = im.weights.iter().map(|p| Perspective::multimodal(g, p)).collect();
        let att = self.config.attention;
        let mut parts = vec![
            matching::maxpool_matching(g, &a.forward, vs, w[0])?,
            matching::maxpool_matching(g, &a.backward, vs, w[1])?,
            matching::attentive_matching(g, &a.forward, vs, w[2], att)?,
            matching::attentive_matching(g, &a.backward, vs, w[3], att)?,
            matching::max_attentive_matching(g, &a.forward, vs, w[4])?,
            matching::max_attentive_matching(g, &a.backward, vs, w[5])?,
        ];
        if w.len() > IMAGE_STRATEGIES {
            let stacked = g.stack(vs)?;
            let uniform = g.constant(Tensor::filled(&[vs.len()], 1.0 / vs.len() as f64));
            let mean = g.vecmat(uniform, stacked)?;
            parts.push(matching::full_matching(g, &a.forward, mean, w[6])?);
            parts.push(matching::full_matching(g, &a.backward, mean, w[7])?);
        }
        per_step_concat(g, &parts)
    }

    fn aggregate(&self, g: &mut Graph<'_>, l: &BimpmLayout, text: Vec<Var>, image: Option<Vec<Var>>) -> Result<ContextualEmbedding> {
        let keep = self.config.keep_prob;
        let mut steps = Vec::with_capacity(text.len());
        for (i, t) in text.into_iter().enumerate() {
            let x = match &image {
                Some(im) => g.concat(&[t, im[i]])?,
                None => t,
            };
            steps.push(g.dropout(x, keep));
        }
        encoders::bidirectional(g, &steps, &l.aggregate_fwd, &l.aggregate_bwd, keep)
    }

    fn vqa(&self, g: &mut Graph<'_>, l: &VqaLayout, input: &EffectiveInput<'_>) -> Result<Var> {
        let opts = self.config.encoder_options();
        let side = |g: &mut Graph<'_>, tokens: Option<&[usize]>, image: Option<&ImageFeature>, encoder: &LstmParameters| -> Result<Var> {
            let Some(tokens) = tokens else {
                return Ok(g.constant(Tensor::zeros(&[self.config.hidden_dim])));
            };
            let text = encoders::encode_final(g, tokens, &l.embedding, encoder, &opts)?;
            let t = fusion::gated_tanh(g, text, &l.text_reduce)?;
            match image {
                Some(img) => {
                    let att = fusion::topdown_attention(g, text, img, &l.attention)?;
                    let i = fusion::gated_tanh(g, att.output, &l.image_reduce)?;
                    g.mul(t, i)
                }
                None => Ok(t),
            }
        };
        let p = side(g, input.premise, input.premise_image, l.premise_encoder.as_ref().unwrap_or(&l.encoder))?;
        let h = side(g, Some(input.hypothesis), input.hypothesis_image, &l.encoder)?;
        let mut x = g.concat(&[p, h])?;
        for layer in &l.stack {
            x = fusion::gated_tanh(g, x, layer)?;
        }
        l.out.forward(g, x)
    }
}

fn project_grid(g: &mut Graph<'_>, img: &ImageFeature, map: &AffineMap) -> Result<Vec<Var>> {
    (0..img.data.rows())
        .map(|r| {
            let f = g.constant(Tensor::vector(img.data.row(r).to_vec())?);
            matching::affine_project(g, f, map)
        })
        .collect()
}

fn per_step_concat(g: &mut Graph<'_>, parts: &[Vec<Var>]) -> Result<Vec<Var>> {
    let n = parts[0].len();
    (0..n)
        .map(|i| {
            let row: Vec<Var> = parts.iter().map(|p| p[i]).collect();
            g.concat(&row)
        })
        .collect()
}

/// A network together with its parameter values and vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    network: Network,
    params: ParamSet,
    vocab: Vocabulary,
}

impl Model {
    pub fn new(config: &ModelConfig, vocab: Vocabulary) -> Result<Self> {
        Self::with_pretrained(config, vocab, |_| None)
    }

    /// Embedding rows come from `pretrained(index)` where available.
    pub fn with_pretrained<F>(config: &ModelConfig, vocab: Vocabulary, pretrained: F) -> Result<Self>
    where
        F: FnMut(usize) -> Option<Vec<f64>>,
    {
        let mut params = ParamSet::new();
        let network = Network::build(config, vocab.len(), &mut params, pretrained)?;
        Ok(Model { network, params, vocab })
    }

    /// Reassembles a model from stored parameters; names and shapes must match
    /// what `config` builds.
    pub fn from_parts(config: &ModelConfig, vocab: Vocabulary, stored: ParamSet) -> Result<Self> {
        let mut model = Model::new(config, vocab)?;
        if stored.len() != model.params.len() {
            return Err(Error::Config(format!(
                "{} expects {} parameter tensors, found {}",
                config.architecture.name(),
                model.params.len(),
                stored.len()
            )));
        }
        for (fresh, s) in model.params.iter_mut().zip(stored.iter()) {
            if fresh.name != s.name || fresh.value.shape() != s.value.shape() {
                return Err(Error::Config(format!(
                    "parameter mismatch: expected {} {:?}, found {} {:?}",
                    fresh.name,
                    fresh.value.shape(),
                    s.name,
                    s.value.shape()
                )));
            }
            fresh.value = s.value.clone();
            fresh.requires_grad = s.requires_grad;
        }
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        self.network.config()
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn set_grounding(&mut self, grounding: Grounding) -> Result<()> {
        self.network = self.network.with_grounding(grounding)?;
        Ok(())
    }

    /// Evaluation-mode prediction.
    pub fn predict(&self, input: &ModelInput<'_>) -> Result<Prediction> {
        let mut g = Graph::new(&self.params);
        let logits = self.network.logits(&mut g, input)?;
        Prediction::from_logits(g.value(logits).data())
    }

    pub fn predict_example(&self, ex: &Example, images: &dyn ImageLookup) -> Result<Prediction> {
        let input = resolve_input(self.config(), ex, images)?;
        self.predict(&input)
    }
}

/// Builds the model input for an example, fetching its image when the
/// configuration needs one.
pub fn resolve_input<'a>(config: &ModelConfig, ex: &'a Example, images: &'a dyn ImageLookup) -> Result<ModelInput<'a>> {
    let image = if config.architecture.uses_image() && config.grounding.uses_image() {
        let id = ex
            .image_id
            .as_deref()
            .ok_or_else(|| Error::MissingImage(format!("pair {} has no image id", ex.pair_id)))?;
        Some(images.feature(id).ok_or_else(|| Error::MissingImage(String::from(id)))?)
    } else {
        None
    };
    Ok(ModelInput {
        premise: &ex.premise,
        hypothesis: &ex.hypothesis,
        image,
    })
}
