//! Training losses and the adversarial fine-tuning loop: contrastive
//! cross-entropy over cosine logits, the local attention-refinement loss
//! (adversarial target maps vs clean original maps), the global
//! attention-constraint loss (clean target maps vs clean original maps), and
//! their weighted total.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::attacks::{self, AttackConfig, AttackObjective};
use crate::attention::{
    self, AttentionMethod, GraphMap, InputKind, MapTags, ModelSource,
};
use crate::encoders::{encode_image_graph, encode_text_graph, ModelPair};
use crate::error::{Error, Result};
use crate::evalkit::Example;
use crate::tensor::{Graph, Tensor, Var};

/// Weights of the attention-alignment terms in the total objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub alpha: f32,
    pub beta: f32,
    pub method: AttentionMethod,
}

impl LossWeights {
    /// Published defaults: 0.08/0.05 for the plain text-guided method,
    /// 0.10/0.10 for the complementary method.
    pub fn defaults_for(method: AttentionMethod) -> Self {
        match method {
            AttentionMethod::Tga => LossWeights {
                alpha: 0.08,
                beta: 0.05,
                method,
            },
            AttentionMethod::CompTga => LossWeights {
                alpha: 0.10,
                beta: 0.10,
                method,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.alpha.is_finite() || !self.beta.is_finite() || self.alpha < 0.0 || self.beta < 0.0
        {
            return Err(Error::Domain {
                op: "loss_weights",
                reason: format!(
                    "alpha and beta must be finite and non-negative, got {}/{}",
                    self.alpha, self.beta
                ),
            });
        }
        Ok(())
    }
}

/// Adversarial fine-tuning hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f32,
    pub momentum: f32,
    pub weight_decay: f32,
    /// Training-time attack (cross-entropy PGD).
    pub attack: AttackConfig,
    pub weights: LossWeights,
    pub seed: u64,
}

impl TrainConfig {
    /// Published protocol defaults for a given method: SGD momentum 0.9,
    /// weight decay 0, lr 1e-4, 2-step training attack at epsilon 1/255.
    pub fn defaults_for(method: AttentionMethod) -> Self {
        TrainConfig {
            epochs: 10,
            batch_size: 128,
            lr: 1e-4,
            momentum: 0.9,
            weight_decay: 0.0,
            attack: AttackConfig::train_default(),
            weights: LossWeights::defaults_for(method),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 1 {
            return Err(Error::Domain {
                op: "train_config",
                reason: "batch_size must be >= 1".into(),
            });
        }
        if self.lr < 0.0 || !self.lr.is_finite() {
            return Err(Error::Domain {
                op: "train_config",
                reason: format!("lr must be >= 0, got {}", self.lr),
            });
        }
        self.weights.validate()?;
        self.attack.validate()
    }
}

/// Mean over the batch of `-log softmax(cos/tau)` at the true class.
///
/// `image_embeds` is [N,d], `text_embeds` is [C,d]; both are expected to be
/// L2-normalized so the matrix product is the cosine similarity.
pub fn contrastive_ce_loss(
    g: &mut Graph,
    image_embeds: Var,
    text_embeds: Var,
    labels: &[usize],
    tau: f32,
) -> Result<Var> {
    let si = g.shape(image_embeds).to_vec();
    let st = g.shape(text_embeds).to_vec();
    if si.len() != 2 || st.len() != 2 || si[1] != st[1] {
        return Err(Error::ShapeMismatch {
            op: "contrastive_ce_loss",
            expected: "[N,d] and [C,d]".into(),
            got: format!("{si:?} and {st:?}"),
        });
    }
    let (n, c) = (si[0], st[0]);
    if labels.len() != n {
        return Err(Error::ShapeMismatch {
            op: "contrastive_ce_loss",
            expected: format!("{n} labels"),
            got: format!("{}", labels.len()),
        });
    }
    if !(tau > 0.0) {
        return Err(Error::Domain {
            op: "contrastive_ce_loss",
            reason: format!("tau must be > 0, got {tau}"),
        });
    }
    let mut onehot = vec![0.0f32; n * c];
    for (i, &y) in labels.iter().enumerate() {
        if y >= c {
            return Err(Error::LabelOutOfRange {
                label: y,
                classes: c,
            });
        }
        onehot[i * c + y] = 1.0;
    }
    let text_t = g.transpose(text_embeds)?;
    let scores = g.matmul(image_embeds, text_t)?;
    let logits = g.scale(scores, 1.0 / tau);
    // CE_i = lse(logits_i) - logits_i[y_i]; mean over the batch equals
    // mean(lse) - C * mean(logits .* onehot).
    let lse = g.log_sum_exp(logits, 1)?;
    let mean_lse = g.mean(lse);
    let mask = g.constant(onehot, &[n, c])?;
    let picked = g.hadamard(logits, mask)?;
    let mean_true = g.mean(picked);
    let scaled_true = g.scale(mean_true, c as f32);
    g.sub(mean_lse, scaled_true)
}

fn mean_map_distance(
    g: &mut Graph,
    op: &'static str,
    left: &[GraphMap],
    right: &[GraphMap],
    left_tags: (ModelSource, InputKind),
    right_tags: (ModelSource, InputKind),
) -> Result<Var> {
    if left.is_empty() || right.is_empty() {
        return Err(Error::EmptyInput("attention map lists"));
    }
    if left.len() != right.len() {
        return Err(Error::TagMismatch {
            reason: format!(
                "{op}: list lengths differ ({} vs {})",
                left.len(),
                right.len()
            ),
        });
    }
    let mut sum = None;
    for (a, b) in left.iter().zip(right) {
        if (a.meta.source, a.meta.input_kind) != left_tags {
            return Err(Error::TagMismatch {
                reason: format!(
                    "{op}: expected ({:?}, {:?}) on the first list, got ({:?}, {:?})",
                    left_tags.0, left_tags.1, a.meta.source, a.meta.input_kind
                ),
            });
        }
        if (b.meta.source, b.meta.input_kind) != right_tags {
            return Err(Error::TagMismatch {
                reason: format!(
                    "{op}: expected ({:?}, {:?}) on the second list, got ({:?}, {:?})",
                    right_tags.0, right_tags.1, b.meta.source, b.meta.input_kind
                ),
            });
        }
        if a.meta.kind != b.meta.kind {
            return Err(Error::TagMismatch {
                reason: format!(
                    "{op}: paired maps of different kinds ({:?} vs {:?})",
                    a.meta.kind, b.meta.kind
                ),
            });
        }
        if (a.height, a.width) != (b.height, b.width) {
            return Err(Error::ShapeMismatch {
                op,
                expected: format!("{}x{}", a.height, a.width),
                got: format!("{}x{}", b.height, b.width),
            });
        }
        let diff = g.sub(a.var, b.var)?;
        let dist = g.l2_norm(diff);
        sum = Some(match sum {
            None => dist,
            Some(acc) => g.add(acc, dist)?,
        });
    }
    let total = sum.expect("lists are non-empty");
    Ok(g.scale(total, 1.0 / left.len() as f32))
}

/// Local attention refinement: mean Euclidean distance between
/// adversarial-input target-model maps and clean-input original-model maps.
/// Gradients flow only into the target maps (original maps are detached by
/// construction).
pub fn larm_loss(g: &mut Graph, adv_target: &[GraphMap], clean_original: &[GraphMap]) -> Result<Var> {
    mean_map_distance(
        g,
        "larm_loss",
        adv_target,
        clean_original,
        (ModelSource::TargetModel, InputKind::Adversarial),
        (ModelSource::OriginalModel, InputKind::Clean),
    )
}

/// Global attention constraint: same distance computed between clean-input
/// target-model maps and clean-input original-model maps.
pub fn gacm_loss(
    g: &mut Graph,
    clean_target: &[GraphMap],
    clean_original: &[GraphMap],
) -> Result<Var> {
    mean_map_distance(
        g,
        "gacm_loss",
        clean_target,
        clean_original,
        (ModelSource::TargetModel, InputKind::Clean),
        (ModelSource::OriginalModel, InputKind::Clean),
    )
}

/// `ce + alpha * larm + beta * gacm`.
pub fn total_loss(g: &mut Graph, ce: Var, larm: Var, gacm: Var, w: &LossWeights) -> Result<Var> {
    w.validate()?;
    for (name, v) in [("ce", ce), ("larm", larm), ("gacm", gacm)] {
        if g.tensor(v).numel() != 1 {
            return Err(Error::NonScalarOutput {
                shape: g.shape(v).to_vec(),
            });
        }
        if !g.scalar_value(v).is_finite() {
            return Err(Error::NonFinite {
                context: format!("total_loss input {name}"),
            });
        }
    }
    let weighted_larm = g.scale(larm, w.alpha);
    let weighted_gacm = g.scale(gacm, w.beta);
    let partial = g.add(ce, weighted_larm)?;
    g.add(partial, weighted_gacm)
}

/// One row of the fine-tuning loss trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchTrace {
    pub epoch: usize,
    pub batch: usize,
    pub ce: f32,
    pub larm: f32,
    pub gacm: f32,
    pub total: f32,
}

struct SgdState {
    velocity: Vec<Vec<f32>>,
}

impl SgdState {
    fn new(sizes: &[usize]) -> Self {
        SgdState {
            velocity: sizes.iter().map(|&n| vec![0.0f32; n]).collect(),
        }
    }

    fn step(
        &mut self,
        params: Vec<&mut Vec<f32>>,
        grads: &[Option<Vec<f32>>],
        lr: f32,
        momentum: f32,
        weight_decay: f32,
    ) {
        for ((param, grad), vel) in params.into_iter().zip(grads).zip(&mut self.velocity) {
            let Some(grad) = grad else { continue };
            for i in 0..param.len() {
                let g = grad[i] + weight_decay * param[i];
                vel[i] = momentum * vel[i] + g;
                param[i] -= lr * vel[i];
            }
        }
    }
}

/// Adversarial fine-tuning of `pair.target`'s image branch: per batch,
/// generate adversarial examples against the current target, assemble the
/// attention-map families for the configured method, and take one SGD step on
/// the total objective. The original model and all text parameters are
/// untouched throughout.
pub fn finetune_adversarial(
    pair: &mut ModelPair,
    data: &[Example],
    prompts: &crate::encoders::PromptSet,
    cfg: &TrainConfig,
) -> Result<Vec<BatchTrace>> {
    if data.is_empty() {
        return Err(Error::EmptyInput("training data"));
    }
    cfg.validate()?;
    if cfg.attack.objective != AttackObjective::Ce {
        return Err(Error::Domain {
            op: "finetune_adversarial",
            reason: format!(
                "training attack must use the ce objective, got {}",
                cfg.attack.objective.name()
            ),
        });
    }
    if !pair.original.image_frozen() || !pair.original.text_frozen() {
        return Err(Error::Domain {
            op: "finetune_adversarial",
            reason: "original model must be fully frozen".into(),
        });
    }
    if !pair.target.text_frozen() {
        return Err(Error::Domain {
            op: "finetune_adversarial",
            reason: "target text branch must be frozen".into(),
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
    let method = cfg.weights.method;
    let cfg_enc = *pair.target.config();
    let (out_h, out_w) = (cfg_enc.height, cfg_enc.width);
    let param_sizes: Vec<usize> = pair
        .target
        .named_params()
        .iter()
        .filter(|(n, _, _)| n.starts_with("image."))
        .map(|(_, d, _)| d.len())
        .collect();
    let mut sgd = SgdState::new(&param_sizes);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x66696e65);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut traces = Vec::new();

    for epoch in 0..cfg.epochs {
        for i in (1..order.len()).rev() {
            let j = rng.random_range(0..=i);
            order.swap(i, j);
        }
        for (batch_idx, chunk) in order.chunks(cfg.batch_size).enumerate() {
            // Inner maximization: adversarial examples against the current
            // target parameters.
            let mut adv_images = Vec::with_capacity(chunk.len());
            for (k, &i) in chunk.iter().enumerate() {
                let seed = cfg.seed ^ ((epoch as u64) << 32) ^ ((batch_idx as u64) << 16) ^ k as u64;
                adv_images.push(attacks::pgd_attack(
                    &pair.target,
                    &data[i].image,
                    prompts,
                    data[i].label,
                    &cfg.attack,
                    seed,
                )?);
            }
            // Clean original-model maps, detached.
            let mut original_maps = Vec::with_capacity(chunk.len());
            for &i in chunk {
                original_maps.push(attention::attention_for_example(
                    pair,
                    &data[i].image,
                    data[i].label,
                    prompts,
                    method,
                    ModelSource::OriginalModel,
                    InputKind::Clean,
                )?);
            }

            let mut g = Graph::new();
            let bound = pair.target.bind(&mut g, true);
            let text_rows: Vec<Var> = (0..classes)
                .map(|c| encode_text_graph(&mut g, &bound, prompts.class_prompt(c)))
                .collect::<Result<_>>()?;
            let text_mat = g.concat_rows(&text_rows)?;

            let mut image_rows = Vec::with_capacity(chunk.len());
            let mut labels = Vec::with_capacity(chunk.len());
            let mut adv_target_maps = Vec::with_capacity(chunk.len());
            let mut clean_target_maps = Vec::with_capacity(chunk.len());
            let mut clean_original_maps = Vec::with_capacity(chunk.len());
            for (k, &i) in chunk.iter().enumerate() {
                let label = data[i].label;
                let class_emb = text_rows[label];
                let non_emb = match method {
                    AttentionMethod::Tga => None,
                    AttentionMethod::CompTga => Some(encode_text_graph(
                        &mut g,
                        &bound,
                        prompts.non_class_prompt(label),
                    )?),
                };
                let xa = g.leaf(Tensor::new(
                    adv_images[k].data().to_vec(),
                    adv_images[k].shape(),
                )?);
                let (fg_adv, f_adv) = encode_image_graph(&mut g, &bound, xa)?;
                image_rows.push(f_adv);
                labels.push(label);
                adv_target_maps.push(attention::method_map_graph(
                    &mut g,
                    fg_adv,
                    class_emb,
                    non_emb,
                    method,
                    out_h,
                    out_w,
                    MapTags {
                        class_id: label,
                        source: ModelSource::TargetModel,
                        input_kind: InputKind::Adversarial,
                    },
                )?);
                let xc = g.leaf(Tensor::new(
                    data[i].image.data().to_vec(),
                    data[i].image.shape(),
                )?);
                let (fg_clean, _f_clean) = encode_image_graph(&mut g, &bound, xc)?;
                clean_target_maps.push(attention::method_map_graph(
                    &mut g,
                    fg_clean,
                    class_emb,
                    non_emb,
                    method,
                    out_h,
                    out_w,
                    MapTags {
                        class_id: label,
                        source: ModelSource::TargetModel,
                        input_kind: InputKind::Clean,
                    },
                )?);
                clean_original_maps.push(GraphMap::constant_in(&mut g, &original_maps[k])?);
            }
            let image_mat = g.concat_rows(&image_rows)?;
            let ce = contrastive_ce_loss(&mut g, image_mat, text_mat, &labels, cfg_enc.tau)?;
            let larm = larm_loss(&mut g, &adv_target_maps, &clean_original_maps)?;
            let gacm = gacm_loss(&mut g, &clean_target_maps, &clean_original_maps)?;
            let total = total_loss(&mut g, ce, larm, gacm, &cfg.weights)?;
            traces.push(BatchTrace {
                epoch,
                batch: batch_idx,
                ce: g.scalar_value(ce),
                larm: g.scalar_value(larm),
                gacm: g.scalar_value(gacm),
                total: g.scalar_value(total),
            });
            if cfg.lr > 0.0 {
                g.backward(total)?;
                let grads: Vec<Option<Vec<f32>>> = bound
                    .image_vars()
                    .iter()
                    .map(|&v| g.grad(v).map(|s| s.to_vec()))
                    .collect();
                sgd.step(
                    pair.target.image_params_mut(),
                    &grads,
                    cfg.lr,
                    cfg.momentum,
                    cfg.weight_decay,
                );
            }
        }
    }
    Ok(traces)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::AttentionKind;

    fn scalar(g: &mut Graph, v: f32) -> Var {
        g.leaf(Tensor::scalar(v))
    }

    fn map_from(g: &mut Graph, data: Vec<f32>, h: usize, w: usize, tags: (ModelSource, InputKind)) -> GraphMap {
        let var = g.leaf(Tensor::new(data, &[h, w]).unwrap());
        GraphMap {
            var,
            height: h,
            width: w,
            meta: MapTags {
                class_id: 0,
                source: tags.0,
                input_kind: tags.1,
            }
            .into_meta(AttentionKind::Class),
        }
    }

    const ADV_TAR: (ModelSource, InputKind) = (ModelSource::TargetModel, InputKind::Adversarial);
    const CLEAN_TAR: (ModelSource, InputKind) = (ModelSource::TargetModel, InputKind::Clean);
    const CLEAN_ORI: (ModelSource, InputKind) = (ModelSource::OriginalModel, InputKind::Clean);

    #[test]
    fn ce_uniform_logits_is_ln_c() {
        // Identical embeddings for every class -> uniform logits -> ln C.
        let mut g = Graph::new();
        let img = g.constant(vec![1.0, 0.0], &[1, 2]).unwrap();
        let txt = g
            .constant(vec![0.6, 0.8, 0.6, 0.8, 0.6, 0.8], &[3, 2])
            .unwrap();
        let loss = contrastive_ce_loss(&mut g, img, txt, &[1], 0.5).unwrap();
        assert!((g.scalar_value(loss) - (3.0f32).ln()).abs() < 1e-6);
    }

    #[test]
    fn ce_two_class_hand_value() {
        // cos = (+1, -1) at tau = 1 -> loss = ln(1 + e^-2).
        let mut g = Graph::new();
        let img = g.constant(vec![1.0, 0.0], &[1, 2]).unwrap();
        let txt = g.constant(vec![1.0, 0.0, -1.0, 0.0], &[2, 2]).unwrap();
        let loss = contrastive_ce_loss(&mut g, img, txt, &[0], 1.0).unwrap();
        let expected = (1.0f32 + (-2.0f32).exp()).ln();
        assert!((g.scalar_value(loss) - expected).abs() < 1e-6, "{}", g.scalar_value(loss));
    }

    #[test]
    fn ce_batch_is_mean_of_singles() {
        let mut g = Graph::new();
        let txt = g.constant(vec![1.0, 0.0, 0.0, 1.0], &[2, 2]).unwrap();
        let single_a = {
            let img = g.constant(vec![0.8, 0.6], &[1, 2]).unwrap();
            let l = contrastive_ce_loss(&mut g, img, txt, &[0], 0.3).unwrap();
            g.scalar_value(l)
        };
        let single_b = {
            let img = g.constant(vec![0.0, 1.0], &[1, 2]).unwrap();
            let l = contrastive_ce_loss(&mut g, img, txt, &[1], 0.3).unwrap();
            g.scalar_value(l)
        };
        let both = {
            let img = g.constant(vec![0.8, 0.6, 0.0, 1.0], &[2, 2]).unwrap();
            let l = contrastive_ce_loss(&mut g, img, txt, &[0, 1], 0.3).unwrap();
            g.scalar_value(l)
        };
        assert!((both - 0.5 * (single_a + single_b)).abs() < 1e-6);
    }

    #[test]
    fn ce_rejects_out_of_range_label() {
        let mut g = Graph::new();
        let img = g.constant(vec![1.0, 0.0], &[1, 2]).unwrap();
        let txt = g.constant(vec![1.0, 0.0, 0.0, 1.0], &[2, 2]).unwrap();
        assert!(matches!(
            contrastive_ce_loss(&mut g, img, txt, &[2], 1.0),
            Err(Error::LabelOutOfRange { .. })
        ));
    }

    #[test]
    fn larm_identical_lists_is_zero() {
        let mut g = Graph::new();
        let a = map_from(&mut g, vec![0.25; 16], 4, 4, ADV_TAR);
        let b = map_from(&mut g, vec![0.25; 16], 4, 4, CLEAN_ORI);
        let loss = larm_loss(&mut g, &[a], &[b]).unwrap();
        assert_eq!(g.scalar_value(loss), 0.0);
    }

    #[test]
    fn larm_uniform_difference_hand_value() {
        // 0.1 in every cell of a 4x4 grid -> 0.1 * sqrt(16) = 0.4.
        let mut g = Graph::new();
        let a = map_from(&mut g, vec![0.6; 16], 4, 4, ADV_TAR);
        let b = map_from(&mut g, vec![0.5; 16], 4, 4, CLEAN_ORI);
        let loss = larm_loss(&mut g, &[a], &[b]).unwrap();
        assert!((g.scalar_value(loss) - 0.4).abs() < 1e-6);
    }

    #[test]
    fn larm_averages_per_pair_distances() {
        // Distances 0.4 and 0.2 -> mean 0.3.
        let mut g = Graph::new();
        let a1 = map_from(&mut g, vec![0.6; 16], 4, 4, ADV_TAR);
        let b1 = map_from(&mut g, vec![0.5; 16], 4, 4, CLEAN_ORI);
        let a2 = map_from(&mut g, vec![0.55; 16], 4, 4, ADV_TAR);
        let b2 = map_from(&mut g, vec![0.5; 16], 4, 4, CLEAN_ORI);
        let loss = larm_loss(&mut g, &[a1, a2], &[b1, b2]).unwrap();
        assert!((g.scalar_value(loss) - 0.3).abs() < 1e-6);
    }

    #[test]
    fn larm_rejects_wrong_tags() {
        let mut g = Graph::new();
        let a = map_from(&mut g, vec![0.5; 16], 4, 4, CLEAN_TAR);
        let b = map_from(&mut g, vec![0.5; 16], 4, 4, CLEAN_ORI);
        assert!(matches!(
            larm_loss(&mut g, &[a], &[b]),
            Err(Error::TagMismatch { .. })
        ));
    }

    #[test]
    fn larm_rejects_length_mismatch() {
        let mut g = Graph::new();
        let a1 = map_from(&mut g, vec![0.5; 16], 4, 4, ADV_TAR);
        let a2 = map_from(&mut g, vec![0.5; 16], 4, 4, ADV_TAR);
        let b = map_from(&mut g, vec![0.5; 16], 4, 4, CLEAN_ORI);
        assert!(matches!(
            larm_loss(&mut g, &[a1, a2], &[b]),
            Err(Error::TagMismatch { .. })
        ));
    }

    #[test]
    fn gacm_constant_difference_hand_value() {
        // 0.05 over an 8x8 grid -> 0.05 * 8 = 0.4.
        let mut g = Graph::new();
        let a = map_from(&mut g, vec![0.30; 64], 8, 8, CLEAN_TAR);
        let b = map_from(&mut g, vec![0.25; 64], 8, 8, CLEAN_ORI);
        let loss = gacm_loss(&mut g, &[a], &[b]).unwrap();
        assert!((g.scalar_value(loss) - 0.4).abs() < 1e-6);
    }

    #[test]
    fn gacm_is_symmetric_in_value() {
        let mut g = Graph::new();
        let a = map_from(&mut g, vec![0.7; 16], 4, 4, CLEAN_TAR);
        let b = map_from(&mut g, vec![0.3; 16], 4, 4, CLEAN_ORI);
        let ab = gacm_loss(&mut g, &[a.clone()], &[b.clone()]).unwrap();
        // Swap the grids but keep the tags valid.
        let a2 = map_from(&mut g, vec![0.3; 16], 4, 4, CLEAN_TAR);
        let b2 = map_from(&mut g, vec![0.7; 16], 4, 4, CLEAN_ORI);
        let ba = gacm_loss(&mut g, &[a2], &[b2]).unwrap();
        assert_eq!(g.scalar_value(ab), g.scalar_value(ba));
    }

    #[test]
    fn total_is_weighted_sum() {
        let mut g = Graph::new();
        let ce = scalar(&mut g, 1.0);
        let larm = scalar(&mut g, 0.5);
        let gacm = scalar(&mut g, 0.2);
        let w = LossWeights {
            alpha: 0.08,
            beta: 0.05,
            method: AttentionMethod::Tga,
        };
        let t = total_loss(&mut g, ce, larm, gacm, &w).unwrap();
        assert!((g.scalar_value(t) - 1.05).abs() < 1e-6);

        let w2 = LossWeights {
            alpha: 0.10,
            beta: 0.10,
            method: AttentionMethod::CompTga,
        };
        let t2 = total_loss(&mut g, ce, larm, gacm, &w2).unwrap();
        assert!((g.scalar_value(t2) - 1.07).abs() < 1e-6);
    }

    #[test]
    fn total_with_zero_weights_is_ce() {
        let mut g = Graph::new();
        let ce = scalar(&mut g, 0.875);
        let larm = scalar(&mut g, 123.0);
        let gacm = scalar(&mut g, -7.0);
        let w = LossWeights {
            alpha: 0.0,
            beta: 0.0,
            method: AttentionMethod::Tga,
        };
        let t = total_loss(&mut g, ce, larm, gacm, &w).unwrap();
        assert_eq!(g.scalar_value(t), 0.875);
    }

    #[test]
    fn total_rejects_non_finite() {
        let mut g = Graph::new();
        let ce = scalar(&mut g, f32::NAN);
        let larm = scalar(&mut g, 0.0);
        let gacm = scalar(&mut g, 0.0);
        let w = LossWeights::defaults_for(AttentionMethod::Tga);
        assert!(matches!(
            total_loss(&mut g, ce, larm, gacm, &w),
            Err(Error::NonFinite { .. })
        ));
    }

    #[test]
    fn default_weights_match_published_protocol() {
        let tga = LossWeights::defaults_for(AttentionMethod::Tga);
        assert_eq!((tga.alpha, tga.beta), (0.08, 0.05));
        let comp = LossWeights::defaults_for(AttentionMethod::CompTga);
        assert_eq!((comp.alpha, comp.beta), (0.10, 0.10));
    }
}
