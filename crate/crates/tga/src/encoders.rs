//! A toy dual encoder standing in for a CLIP-style model: an image branch
//! exposing pre-pool per-patch features and a pooled embedding, paired with a
//! prompt (text) branch, compared by cosine similarity at temperature `tau`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::evalkit::Example;
use crate::objectives;
use crate::tensor::{Graph, Tensor, Var};

/// Structural hyperparameters of the dual encoder.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EncoderConfig {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    /// Patch side; must divide both height and width.
    pub patch: usize,
    pub embed_dim: usize,
    /// Number of mixing blocks in the image branch.
    pub blocks: usize,
    /// Word-embedding table rows available to the text branch.
    pub vocab: usize,
    /// Softmax temperature applied to cosine logits.
    pub tau: f32,
    /// Seed for parameter initialization.
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            height: 32,
            width: 32,
            channels: 3,
            patch: 8,
            embed_dim: 32,
            blocks: 2,
            vocab: 64,
            tau: 0.07,
            seed: 1,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |reason: String| Err(Error::Config { reason });
        if self.patch == 0 || self.height % self.patch != 0 || self.width % self.patch != 0 {
            return fail(format!(
                "patch {} must divide image {}x{}",
                self.patch, self.height, self.width
            ));
        }
        if self.channels == 0 {
            return fail("channels must be >= 1".into());
        }
        if self.embed_dim < 2 {
            return fail(format!("embed_dim must be >= 2, got {}", self.embed_dim));
        }
        if self.blocks < 1 {
            return fail("blocks must be >= 1".into());
        }
        if self.vocab < 1 {
            return fail("vocab must be >= 1".into());
        }
        if !(self.tau > 0.0) {
            return fail(format!("tau must be > 0, got {}", self.tau));
        }
        Ok(())
    }

    /// Number of patches P = (H/p)(W/p).
    pub fn patches(&self) -> usize {
        (self.height / self.patch) * (self.width / self.patch)
    }

    /// Per-patch input features C*p*p.
    pub fn patch_features(&self) -> usize {
        self.channels * self.patch * self.patch
    }
}

/// Templated class / non-class prompts over a fixed whitespace vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptSet {
    class_names: Vec<String>,
    vocab: Vec<String>,
    class_prompts: Vec<Vec<usize>>,
    non_class_prompts: Vec<Vec<usize>>,
    background_prompt: Option<Vec<usize>>,
}

const CLASS_TEMPLATE: &str = "this is a photo of a";
const NON_CLASS_TEMPLATE: &str = "this is not a photo of a";
const BACKGROUND_TEMPLATE: &str = "this is the background of the photo";

impl PromptSet {
    /// Build class and non-class prompts for every class name. The vocabulary
    /// is the template words plus the class words, in first-seen order.
    pub fn new(class_names: &[&str]) -> Result<Self> {
        if class_names.is_empty() {
            return Err(Error::EmptyInput("class names"));
        }
        let mut vocab: Vec<String> = Vec::new();
        let mut tokenize_new = |text: &str| -> Vec<usize> {
            text.split_whitespace()
                .map(|word| {
                    let w = word.to_lowercase();
                    match vocab.iter().position(|v| *v == w) {
                        Some(i) => i,
                        None => {
                            vocab.push(w);
                            vocab.len() - 1
                        }
                    }
                })
                .collect()
        };
        let mut class_prompts = Vec::new();
        let mut non_class_prompts = Vec::new();
        for name in class_names {
            class_prompts.push(tokenize_new(&format!("{CLASS_TEMPLATE} {name}")));
            non_class_prompts.push(tokenize_new(&format!("{NON_CLASS_TEMPLATE} {name}")));
        }
        let background_prompt = Some(tokenize_new(BACKGROUND_TEMPLATE));
        Ok(PromptSet {
            class_names: class_names.iter().map(|s| s.to_string()).collect(),
            vocab,
            class_prompts,
            non_class_prompts,
            background_prompt,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn class_name(&self, c: usize) -> &str {
        &self.class_names[c]
    }

    pub fn class_prompt(&self, c: usize) -> &[usize] {
        &self.class_prompts[c]
    }

    pub fn non_class_prompt(&self, c: usize) -> &[usize] {
        &self.non_class_prompts[c]
    }

    pub fn background_prompt(&self) -> Option<&[usize]> {
        self.background_prompt.as_deref()
    }

    pub fn vocab_len(&self) -> usize {
        self.vocab.len()
    }

    /// Lowercase whitespace tokenization against the fixed vocabulary.
    pub fn tokenize(&self, text: &str) -> Result<Vec<usize>> {
        text.split_whitespace()
            .map(|w| {
                let lw = w.to_lowercase();
                self.vocab
                    .iter()
                    .position(|v| *v == lw)
                    .ok_or(Error::UnknownToken { token: lw.clone() })
            })
            .collect()
    }
}

/// One trainable weight matrix.
#[derive(Debug, Clone, PartialEq)]
struct Param {
    data: Vec<f32>,
    shape: Vec<usize>,
}

impl Param {
    /// Uniform init in [-1/sqrt(fan_in), +1/sqrt(fan_in)].
    fn init(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Self {
        let bound = 1.0 / (rows as f32).sqrt();
        let data = (0..rows * cols)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        Param {
            data,
            shape: vec![rows, cols],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct MixBlock {
    /// Cross-patch linear mix, [P, P].
    mix: Param,
    /// Per-patch feed-forward, [d, d].
    ff: Param,
}

/// Image encoder (patch features + pooled embedding) paired with a prompt
/// encoder, each independently freezable.
#[derive(Debug, Clone, PartialEq)]
pub struct DualEncoder {
    cfg: EncoderConfig,
    patch_proj: Param,
    mix_blocks: Vec<MixBlock>,
    out_proj: Param,
    word_embed: Param,
    text_ff1: Param,
    text_ff2: Param,
    image_frozen: bool,
    text_frozen: bool,
}

/// Graph handles for one bound copy of the encoder parameters.
pub struct BoundModel {
    pub patch_proj: Var,
    pub mix_blocks: Vec<(Var, Var)>,
    pub out_proj: Var,
    pub word_embed: Var,
    pub text_ff1: Var,
    pub text_ff2: Var,
    cfg: EncoderConfig,
}

impl BoundModel {
    /// Image-branch vars in canonical parameter order.
    pub fn image_vars(&self) -> Vec<Var> {
        let mut vars = vec![self.patch_proj];
        for (m, f) in &self.mix_blocks {
            vars.push(*m);
            vars.push(*f);
        }
        vars.push(self.out_proj);
        vars
    }

    pub fn text_vars(&self) -> Vec<Var> {
        vec![self.word_embed, self.text_ff1, self.text_ff2]
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.cfg
    }
}

impl DualEncoder {
    /// Fresh model with seeded uniform initialization, both branches trainable.
    pub fn init(cfg: EncoderConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let d = cfg.embed_dim;
        let p = cfg.patches();
        let feat = cfg.patch_features();
        Ok(DualEncoder {
            patch_proj: Param::init(&mut rng, feat, d),
            mix_blocks: (0..cfg.blocks)
                .map(|_| MixBlock {
                    mix: Param::init(&mut rng, p, p),
                    ff: Param::init(&mut rng, d, d),
                })
                .collect(),
            out_proj: Param::init(&mut rng, d, d),
            word_embed: Param::init(&mut rng, cfg.vocab, d),
            text_ff1: Param::init(&mut rng, d, d),
            text_ff2: Param::init(&mut rng, d, d),
            image_frozen: false,
            text_frozen: false,
            cfg,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.cfg
    }

    pub fn image_frozen(&self) -> bool {
        self.image_frozen
    }

    pub fn text_frozen(&self) -> bool {
        self.text_frozen
    }

    pub fn set_image_frozen(&mut self, frozen: bool) {
        self.image_frozen = frozen;
    }

    pub fn set_text_frozen(&mut self, frozen: bool) {
        self.text_frozen = frozen;
    }

    /// Canonical (name, data, shape) listing of every parameter.
    pub fn named_params(&self) -> Vec<(String, &[f32], &[usize])> {
        let mut out: Vec<(String, &[f32], &[usize])> = vec![(
            "image.patch_proj".into(),
            &self.patch_proj.data[..],
            &self.patch_proj.shape[..],
        )];
        for (i, b) in self.mix_blocks.iter().enumerate() {
            out.push((format!("image.block{i}.mix"), &b.mix.data, &b.mix.shape));
            out.push((format!("image.block{i}.ff"), &b.ff.data, &b.ff.shape));
        }
        out.push((
            "image.out_proj".into(),
            &self.out_proj.data,
            &self.out_proj.shape,
        ));
        out.push((
            "text.word_embed".into(),
            &self.word_embed.data,
            &self.word_embed.shape,
        ));
        out.push(("text.ff1".into(), &self.text_ff1.data, &self.text_ff1.shape));
        out.push(("text.ff2".into(), &self.text_ff2.data, &self.text_ff2.shape));
        out
    }

    /// Mutable image-branch slots in the same order as [`BoundModel::image_vars`].
    pub(crate) fn image_params_mut(&mut self) -> Vec<&mut Vec<f32>> {
        let mut out = vec![&mut self.patch_proj.data];
        for b in &mut self.mix_blocks {
            out.push(&mut b.mix.data);
            out.push(&mut b.ff.data);
        }
        out.push(&mut self.out_proj.data);
        out
    }

    pub(crate) fn text_params_mut(&mut self) -> Vec<&mut Vec<f32>> {
        vec![
            &mut self.word_embed.data,
            &mut self.text_ff1.data,
            &mut self.text_ff2.data,
        ]
    }

    /// Overwrite one named parameter; used by checkpoint loading.
    pub(crate) fn set_param(&mut self, name: &str, data: Vec<f32>, shape: &[usize]) -> Result<()> {
        let slot: Option<&mut Param> = match name {
            "image.patch_proj" => Some(&mut self.patch_proj),
            "image.out_proj" => Some(&mut self.out_proj),
            "text.word_embed" => Some(&mut self.word_embed),
            "text.ff1" => Some(&mut self.text_ff1),
            "text.ff2" => Some(&mut self.text_ff2),
            _ => {
                let mut found = None;
                for (i, b) in self.mix_blocks.iter_mut().enumerate() {
                    if name == format!("image.block{i}.mix") {
                        found = Some(&mut b.mix);
                        break;
                    }
                    if name == format!("image.block{i}.ff") {
                        found = Some(&mut b.ff);
                        break;
                    }
                }
                found
            }
        };
        let param = slot.ok_or_else(|| Error::Config {
            reason: format!("unknown parameter name {name}"),
        })?;
        if param.shape != shape || param.data.len() != data.len() {
            return Err(Error::ShapeMismatch {
                op: "set_param",
                expected: format!("{:?}", param.shape),
                got: format!("{shape:?}"),
            });
        }
        param.data = data;
        Ok(())
    }

    /// Register every parameter in `g`. Image-branch leaves are differentiable
    /// iff `trainable` and the branch is not frozen; likewise for text.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> BoundModel {
        let img = trainable && !self.image_frozen;
        let txt = trainable && !self.text_frozen;
        let reg = |g: &mut Graph, p: &Param, t: bool| {
            g.parameter(&p.data, &p.shape, t)
                .expect("stored parameter shapes are valid")
        };
        BoundModel {
            patch_proj: reg(g, &self.patch_proj, img),
            mix_blocks: self
                .mix_blocks
                .iter()
                .map(|b| (reg(g, &b.mix, img), reg(g, &b.ff, img)))
                .collect(),
            out_proj: reg(g, &self.out_proj, img),
            word_embed: reg(g, &self.word_embed, txt),
            text_ff1: reg(g, &self.text_ff1, txt),
            text_ff2: reg(g, &self.text_ff2, txt),
            cfg: self.cfg,
        }
    }

    /// [`DualEncoder::bind`] with one image-branch parameter (by canonical
    /// index) replaced by an externally supplied var; the rest are constants.
    /// Used to probe the training objective's gradient one parameter tensor
    /// at a time.
    pub fn bind_with_override(
        &self,
        g: &mut Graph,
        image_param_index: usize,
        replacement: Var,
    ) -> Result<BoundModel> {
        let mut bound = self.bind(g, false);
        let count = 2 + 2 * self.mix_blocks.len();
        if image_param_index >= count {
            return Err(Error::Domain {
                op: "bind_with_override",
                reason: format!("image parameter index {image_param_index} out of range {count}"),
            });
        }
        let expected: Vec<usize> = {
            let params = self.named_params();
            params[image_param_index].2.to_vec()
        };
        if g.shape(replacement) != expected {
            return Err(Error::ShapeMismatch {
                op: "bind_with_override",
                expected: format!("{expected:?}"),
                got: format!("{:?}", g.shape(replacement)),
            });
        }
        if image_param_index == 0 {
            bound.patch_proj = replacement;
        } else if image_param_index < 1 + 2 * self.mix_blocks.len() {
            let block = (image_param_index - 1) / 2;
            if (image_param_index - 1) % 2 == 0 {
                bound.mix_blocks[block].0 = replacement;
            } else {
                bound.mix_blocks[block].1 = replacement;
            }
        } else {
            bound.out_proj = replacement;
        }
        Ok(bound)
    }

    /// Per-patch features `f_g` ([P,d]) and L2-normalized pooled embedding
    /// `f` ([d]) as detached tensors.
    pub fn encode_image(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        let mut g = Graph::new();
        let xv = g.leaf(Tensor::new(x.data().to_vec(), x.shape())?);
        let bound = self.bind(&mut g, false);
        let (f_g, f) = encode_image_graph(&mut g, &bound, xv)?;
        Ok((
            Tensor::new(g.data(f_g).to_vec(), g.shape(f_g))?,
            Tensor::new(g.data(f).to_vec(), g.shape(f))?,
        ))
    }

    /// L2-normalized prompt embedding ([d]) as a detached tensor.
    pub fn encode_text(&self, tokens: &[usize]) -> Result<Tensor> {
        let mut g = Graph::new();
        let bound = self.bind(&mut g, false);
        let e = encode_text_graph(&mut g, &bound, tokens)?;
        Tensor::new(g.data(e).to_vec(), g.shape(e))
    }

    /// Cosine logits `cos(f(x), g(t_c)) / tau` for every class.
    pub fn class_logits(&self, x: &Tensor, prompts: &PromptSet) -> Result<Vec<f32>> {
        if prompts.num_classes() == 0 {
            return Err(Error::EmptyInput("prompt set"));
        }
        let mut g = Graph::new();
        let xv = g.leaf(Tensor::new(x.data().to_vec(), x.shape())?);
        let bound = self.bind(&mut g, false);
        let (_f_g, f) = encode_image_graph(&mut g, &bound, xv)?;
        let mut logits = Vec::with_capacity(prompts.num_classes());
        for c in 0..prompts.num_classes() {
            let t = encode_text_graph(&mut g, &bound, prompts.class_prompt(c))?;
            let cos = g.cosine_sim(f, t)?;
            logits.push(g.scalar_value(cos) / self.cfg.tau);
        }
        Ok(logits)
    }
}

/// Image-branch forward inside an existing graph. Returns `(f_g, f)`.
pub fn encode_image_graph(g: &mut Graph, bound: &BoundModel, x: Var) -> Result<(Var, Var)> {
    let cfg = &bound.cfg;
    let expected = [cfg.channels, cfg.height, cfg.width];
    if g.shape(x) != expected {
        return Err(Error::ShapeMismatch {
            op: "encode_image",
            expected: format!("{expected:?}"),
            got: format!("{:?}", g.shape(x)),
        });
    }
    let p = cfg.patches();
    let d = cfg.embed_dim;
    let patches = g.patchify(x, cfg.patch)?;
    let mut hidden = g.matmul(patches, bound.patch_proj)?;
    for (mix, ff) in &bound.mix_blocks {
        let mixed = g.matmul(*mix, hidden)?;
        let transformed = g.matmul(mixed, *ff)?;
        let activated = g.tanh(transformed);
        hidden = g.add(hidden, activated)?;
    }
    let f_g = g.matmul(hidden, bound.out_proj)?;
    // Pooling commutes with the shared final projection: the pooled
    // embedding is the mean of the projected patch features, so text
    // embeddings trained against `f` stay aligned with the per-patch space
    // the attention maps are computed in.
    let f_g_t = g.transpose(f_g)?;
    let avg = g.constant(vec![1.0 / p as f32; p], &[p, 1])?;
    let pooled_col = g.matmul(f_g_t, avg)?;
    let flat = g.reshape(pooled_col, &[d])?;
    let f = g.l2_normalize(flat)?;
    Ok((f_g, f))
}

/// Text-branch forward inside an existing graph: mean word embedding through
/// one hidden feed-forward layer, L2-normalized.
pub fn encode_text_graph(g: &mut Graph, bound: &BoundModel, tokens: &[usize]) -> Result<Var> {
    let cfg = &bound.cfg;
    if tokens.is_empty() {
        return Err(Error::EmptyInput("prompt tokens"));
    }
    for &t in tokens {
        if t >= cfg.vocab {
            return Err(Error::UnknownToken {
                token: format!("id {t} (vocab size {})", cfg.vocab),
            });
        }
    }
    // Mean of word embeddings as a constant selection matrix [1, V] x [V, d].
    let mut sel = vec![0.0f32; cfg.vocab];
    let w = 1.0 / tokens.len() as f32;
    for &t in tokens {
        sel[t] += w;
    }
    let sel = g.constant(sel, &[1, cfg.vocab])?;
    let avg = g.matmul(sel, bound.word_embed)?;
    let hidden_lin = g.matmul(avg, bound.text_ff1)?;
    let hidden = g.tanh(hidden_lin);
    let out = g.matmul(hidden, bound.text_ff2)?;
    let flat = g.reshape(out, &[cfg.embed_dim])?;
    g.l2_normalize(flat)
}

/// Frozen original model plus the trainable target it is fine-tuned from.
#[derive(Debug, Clone)]
pub struct ModelPair {
    pub original: DualEncoder,
    pub target: DualEncoder,
}

impl ModelPair {
    /// `original` = fully frozen copy; `target` = copy with a trainable image
    /// branch and frozen text branch.
    pub fn from_pretrained(model: &DualEncoder) -> Self {
        let mut original = model.clone();
        original.set_image_frozen(true);
        original.set_text_frozen(true);
        let mut target = model.clone();
        target.set_image_frozen(false);
        target.set_text_frozen(true);
        ModelPair { original, target }
    }
}

/// Per-epoch mean losses from clean pre-training.
#[derive(Debug, Clone)]
pub struct PretrainReport {
    pub per_epoch_loss: Vec<f32>,
    pub initial_loss: f32,
    pub final_loss: f32,
}

/// Stage-0 clean contrastive pre-training: plain SGD on the contrastive
/// cross-entropy over clean examples, updating every non-frozen branch.
pub fn pretrain_clean(
    model: &mut DualEncoder,
    data: &[Example],
    prompts: &PromptSet,
    epochs: usize,
    batch_size: usize,
    lr: f32,
) -> Result<PretrainReport> {
    if data.is_empty() {
        return Err(Error::EmptyInput("training data"));
    }
    if batch_size == 0 {
        return Err(Error::Domain {
            op: "pretrain_clean",
            reason: "batch_size must be >= 1".into(),
        });
    }
    if lr < 0.0 {
        return Err(Error::Domain {
            op: "pretrain_clean",
            reason: format!("learning rate must be >= 0, got {lr}"),
        });
    }
    let classes = prompts.num_classes();
    for ex in data {
        if ex.label >= classes {
            return Err(Error::LabelOutOfRange {
                label: ex.label,
                classes,
            });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(model.cfg.seed ^ 0x70726574);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut per_epoch = Vec::with_capacity(epochs);
    let mut initial_loss = None;
    for _epoch in 0..epochs {
        for i in (1..order.len()).rev() {
            let j = rng.random_range(0..=i);
            order.swap(i, j);
        }
        let mut epoch_loss = 0.0f64;
        let mut batches = 0usize;
        for chunk in order.chunks(batch_size) {
            let mut g = Graph::new();
            let bound = model.bind(&mut g, true);
            let text_rows: Vec<Var> = (0..classes)
                .map(|c| encode_text_graph(&mut g, &bound, prompts.class_prompt(c)))
                .collect::<Result<_>>()?;
            let text_mat = g.concat_rows(&text_rows)?;
            let mut image_rows = Vec::with_capacity(chunk.len());
            let mut labels = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let xv = g.leaf(Tensor::new(
                    data[i].image.data().to_vec(),
                    data[i].image.shape(),
                )?);
                let (_f_g, f) = encode_image_graph(&mut g, &bound, xv)?;
                image_rows.push(f);
                labels.push(data[i].label);
            }
            let image_mat = g.concat_rows(&image_rows)?;
            let loss = objectives::contrastive_ce_loss(
                &mut g,
                image_mat,
                text_mat,
                &labels,
                model.cfg.tau,
            )?;
            let loss_val = g.scalar_value(loss);
            if initial_loss.is_none() {
                initial_loss = Some(loss_val);
            }
            epoch_loss += loss_val as f64;
            batches += 1;
            if lr > 0.0 {
                g.backward(loss)?;
                let image_grads: Vec<Option<Vec<f32>>> = bound
                    .image_vars()
                    .iter()
                    .map(|&v| g.grad(v).map(|s| s.to_vec()))
                    .collect();
                let text_grads: Vec<Option<Vec<f32>>> = bound
                    .text_vars()
                    .iter()
                    .map(|&v| g.grad(v).map(|s| s.to_vec()))
                    .collect();
                if !model.image_frozen {
                    for (param, grad) in model.image_params_mut().into_iter().zip(&image_grads) {
                        if let Some(grad) = grad {
                            for (p, gv) in param.iter_mut().zip(grad) {
                                *p -= lr * gv;
                            }
                        }
                    }
                }
                if !model.text_frozen {
                    for (param, grad) in model.text_params_mut().into_iter().zip(&text_grads) {
                        if let Some(grad) = grad {
                            for (p, gv) in param.iter_mut().zip(grad) {
                                *p -= lr * gv;
                            }
                        }
                    }
                }
            }
        }
        per_epoch.push((epoch_loss / batches.max(1) as f64) as f32);
    }
    let final_loss = per_epoch.last().copied().unwrap_or(f32::NAN);
    Ok(PretrainReport {
        per_epoch_loss: per_epoch,
        initial_loss: initial_loss.unwrap_or(f32::NAN),
        final_loss,
    })
}

/// Stage-0b prompt-space alignment. Clean contrastive pre-training fixes
/// only the relative geometry of the class embeddings; this phase pins the
/// absolute geometry that the attention pipeline relies on, using the same
/// positive/negative pair structure as the contrastive loss:
/// class prompts are pulled toward their images, each non-class prompt
/// ("this is not a photo of a <c>") is pushed away from class-`c` images,
/// and the class cross-entropy anchors the classifier. Only the text branch
/// moves; the image branch is read-only and its embeddings are cached.
pub fn pretrain_negation(
    model: &mut DualEncoder,
    data: &[Example],
    prompts: &PromptSet,
    epochs: usize,
    batch_size: usize,
    lr: f32,
) -> Result<PretrainReport> {
    if data.is_empty() {
        return Err(Error::EmptyInput("training data"));
    }
    if batch_size == 0 || lr < 0.0 {
        return Err(Error::Domain {
            op: "pretrain_negation",
            reason: "batch_size must be >= 1 and lr >= 0".into(),
        });
    }
    if model.text_frozen {
        return Err(Error::Domain {
            op: "pretrain_negation",
            reason: "text branch is frozen".into(),
        });
    }
    let classes = prompts.num_classes();
    for ex in data {
        if ex.label >= classes {
            return Err(Error::LabelOutOfRange {
                label: ex.label,
                classes,
            });
        }
    }
    let d = model.cfg.embed_dim;
    let tau = model.cfg.tau;
    let embeds: Vec<Vec<f32>> = data
        .iter()
        .map(|ex| Ok(model.encode_image(&ex.image)?.1.data().to_vec()))
        .collect::<Result<_>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(model.cfg.seed ^ 0x6e656761);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut per_epoch = Vec::with_capacity(epochs);
    let mut initial_loss = None;
    for _epoch in 0..epochs {
        for i in (1..order.len()).rev() {
            let j = rng.random_range(0..=i);
            order.swap(i, j);
        }
        let mut epoch_loss = 0.0f64;
        let mut batches = 0usize;
        for chunk in order.chunks(batch_size) {
            let n = chunk.len();
            let labels: Vec<usize> = chunk.iter().map(|&i| data[i].label).collect();
            let mut g = Graph::new();
            let bound = model.bind(&mut g, true);
            let class_rows: Vec<Var> = (0..classes)
                .map(|c| encode_text_graph(&mut g, &bound, prompts.class_prompt(c)))
                .collect::<Result<_>>()?;
            let class_mat = g.concat_rows(&class_rows)?;
            let non_rows: Vec<Var> = (0..classes)
                .map(|c| encode_text_graph(&mut g, &bound, prompts.non_class_prompt(c)))
                .collect::<Result<_>>()?;
            let non_mat = g.concat_rows(&non_rows)?;
            let img_rows: Vec<Var> = chunk
                .iter()
                .map(|&i| Ok(g.leaf(Tensor::new(embeds[i].clone(), &[d])?)))
                .collect::<Result<_>>()?;
            let img_mat = g.concat_rows(&img_rows)?;

            let mut onehot = vec![0.0f32; n * classes];
            for (row, &label) in labels.iter().enumerate() {
                onehot[row * classes + label] = 1.0;
            }

            // Relative anchor: the classifier stays calibrated.
            let class_ce =
                objectives::contrastive_ce_loss(&mut g, img_mat, class_mat, &labels, tau)?;
            // Absolute pull of positive (image, class prompt) pairs.
            let class_t = g.transpose(class_mat)?;
            let class_scores = g.matmul(img_mat, class_t)?;
            let mask = g.constant(onehot.clone(), &[n, classes])?;
            let picked_pos = g.hadamard(class_scores, mask)?;
            let mean_pos_raw = g.mean(picked_pos);
            let mean_pos = g.scale(mean_pos_raw, classes as f32);
            let one = g.leaf(Tensor::scalar(1.0));
            let pull = g.sub(one, mean_pos)?;
            // Absolute push of the definite negative (image, own non-class
            // prompt) pairs.
            let non_t = g.transpose(non_mat)?;
            let non_scores = g.matmul(img_mat, non_t)?;
            let mask_neg = g.constant(onehot, &[n, classes])?;
            let picked_neg = g.hadamard(non_scores, mask_neg)?;
            let mean_neg_raw = g.mean(picked_neg);
            let push = g.scale(mean_neg_raw, classes as f32);

            let anchored = g.add(class_ce, pull)?;
            let loss = g.add(anchored, push)?;
            let loss_val = g.scalar_value(loss);
            if initial_loss.is_none() {
                initial_loss = Some(loss_val);
            }
            epoch_loss += loss_val as f64;
            batches += 1;
            if lr > 0.0 {
                g.backward(loss)?;
                let text_grads: Vec<Option<Vec<f32>>> = bound
                    .text_vars()
                    .iter()
                    .map(|&v| g.grad(v).map(|s| s.to_vec()))
                    .collect();
                for (param, grad) in model.text_params_mut().into_iter().zip(&text_grads) {
                    if let Some(grad) = grad {
                        for (p, gv) in param.iter_mut().zip(grad) {
                            *p -= lr * gv;
                        }
                    }
                }
            }
        }
        per_epoch.push((epoch_loss / batches.max(1) as f64) as f32);
    }
    let final_loss = per_epoch.last().copied().unwrap_or(f32::NAN);
    Ok(PretrainReport {
        per_epoch_loss: per_epoch,
        initial_loss: initial_loss.unwrap_or(f32::NAN),
        final_loss,
    })
}
