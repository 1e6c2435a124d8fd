//! l-infinity adversarial example generation: cross-entropy PGD, the
//! log-sum-exp margin attack, and the attention-consistency-augmented
//! adaptive attacks that target the attention-alignment defenses directly.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::attention::{
    self, AttentionMethod, GraphMap, InputKind, MapTags, ModelSource,
};
use crate::encoders::{encode_image_graph, DualEncoder, ModelPair, PromptSet};
use crate::error::{Error, Result};
use crate::objectives;
use crate::tensor::{Graph, Tensor, Var};

/// Attack objective selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttackObjective {
    /// Maximize the contrastive cross-entropy (plain PGD).
    Ce,
    /// Maximize the temperature-scaled log-sum-exp margin over non-target
    /// cosine scores minus the target score.
    LseMargin,
    /// LseMargin plus lambda times the distance between the target model's
    /// class-attention map on the perturbed input and the original model's
    /// map on the clean input.
    AdaptiveTga,
    /// Same augmentation computed on complementary maps.
    AdaptiveCompTga,
}

impl AttackObjective {
    pub fn name(&self) -> &'static str {
        match self {
            AttackObjective::Ce => "ce",
            AttackObjective::LseMargin => "lse_margin",
            AttackObjective::AdaptiveTga => "adaptive_tga",
            AttackObjective::AdaptiveCompTga => "adaptive_comp_tga",
        }
    }

    pub fn is_adaptive(&self) -> bool {
        matches!(
            self,
            AttackObjective::AdaptiveTga | AttackObjective::AdaptiveCompTga
        )
    }
}

/// The l-infinity threat model plus objective parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackConfig {
    /// l-infinity radius in pixel units.
    pub epsilon: f32,
    /// Ascent step in pixel units.
    pub step_size: f32,
    pub iterations: usize,
    pub objective: AttackObjective,
    /// Weight of the attention-consistency term in adaptive objectives.
    pub lambda: f32,
    /// Temperature of the soft margin.
    pub tau_margin: f32,
    pub pixel_lo: f32,
    pub pixel_hi: f32,
    /// Start from a uniform perturbation in [-epsilon, epsilon] instead of 0.
    pub random_start: bool,
}

impl AttackConfig {
    /// Training-time default: 2 iterations at epsilon = step = 1/255.
    pub fn train_default() -> Self {
        AttackConfig {
            epsilon: 1.0 / 255.0,
            step_size: 1.0 / 255.0,
            iterations: 2,
            objective: AttackObjective::Ce,
            lambda: 1.0,
            tau_margin: 1.0,
            pixel_lo: 0.0,
            pixel_hi: 1.0,
            random_start: false,
        }
    }

    /// Evaluation default: 100 iterations at epsilon = step = 1/255.
    pub fn eval_default() -> Self {
        AttackConfig {
            iterations: 100,
            ..AttackConfig::train_default()
        }
    }

    pub fn with_objective(mut self, objective: AttackObjective) -> Self {
        self.objective = objective;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |reason: String| Err(Error::Domain {
            op: "attack_config",
            reason,
        });
        if !(self.epsilon >= 0.0) {
            return fail(format!("epsilon must be >= 0, got {}", self.epsilon));
        }
        if !(self.step_size >= 0.0) {
            return fail(format!("step_size must be >= 0, got {}", self.step_size));
        }
        if self.iterations < 1 {
            return fail("iterations must be >= 1".into());
        }
        if !(self.lambda >= 0.0) {
            return fail(format!("lambda must be >= 0, got {}", self.lambda));
        }
        if !(self.tau_margin > 0.0) {
            return fail(format!("tau_margin must be > 0, got {}", self.tau_margin));
        }
        if !(self.pixel_lo < self.pixel_hi) {
            return fail(format!(
                "pixel_lo {} must be < pixel_hi {}",
                self.pixel_lo, self.pixel_hi
            ));
        }
        Ok(())
    }
}

fn sign(v: f32) -> f32 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Project `x_adv` into the epsilon-ball around `x` intersected with the
/// pixel range: `clamp(clamp(x_adv, x - eps, x + eps), lo, hi)`. Idempotent.
pub fn project_linf(x_adv: &Tensor, x: &Tensor, cfg: &AttackConfig) -> Result<Tensor> {
    cfg.validate()?;
    if x_adv.shape() != x.shape() {
        return Err(Error::ShapeMismatch {
            op: "project_linf",
            expected: format!("{:?}", x.shape()),
            got: format!("{:?}", x_adv.shape()),
        });
    }
    let mut out = x_adv.data().to_vec();
    project_in_place(&mut out, x.data(), cfg);
    Tensor::new(out, x.shape())
}

fn project_in_place(x_adv: &mut [f32], x: &[f32], cfg: &AttackConfig) {
    for (a, &orig) in x_adv.iter_mut().zip(x) {
        let lo = orig - cfg.epsilon;
        let hi = orig + cfg.epsilon;
        *a = a.clamp(lo, hi).clamp(cfg.pixel_lo, cfg.pixel_hi);
    }
}

/// Cross-entropy PGD (the published training attack).
pub fn pgd_attack(
    model: &DualEncoder,
    x: &Tensor,
    prompts: &PromptSet,
    label: usize,
    cfg: &AttackConfig,
    seed: u64,
) -> Result<Tensor> {
    if cfg.objective != AttackObjective::Ce {
        return Err(Error::Domain {
            op: "pgd_attack",
            reason: format!("expects the ce objective, got {}", cfg.objective.name()),
        });
    }
    attack_core(model, None, x, prompts, label, cfg, seed, None)
}

/// PGD on the log-sum-exp margin objective.
pub fn lse_margin_attack(
    model: &DualEncoder,
    x: &Tensor,
    prompts: &PromptSet,
    label: usize,
    cfg: &AttackConfig,
    seed: u64,
) -> Result<Tensor> {
    if cfg.objective != AttackObjective::LseMargin {
        return Err(Error::Domain {
            op: "lse_margin_attack",
            reason: format!(
                "expects the lse_margin objective, got {}",
                cfg.objective.name()
            ),
        });
    }
    attack_core(model, None, x, prompts, label, cfg, seed, None)
}

/// PGD on the margin objective augmented with the attention-consistency term
/// between the target model (perturbed input) and the frozen original model
/// (clean input, computed once and held fixed).
pub fn adaptive_attack(
    pair: &ModelPair,
    x: &Tensor,
    prompts: &PromptSet,
    label: usize,
    cfg: &AttackConfig,
    seed: u64,
) -> Result<Tensor> {
    if !cfg.objective.is_adaptive() {
        return Err(Error::Domain {
            op: "adaptive_attack",
            reason: format!(
                "expects an adaptive objective, got {}",
                cfg.objective.name()
            ),
        });
    }
    attack_core(
        &pair.target,
        Some(&pair.original),
        x,
        prompts,
        label,
        cfg,
        seed,
        None,
    )
}

/// Dispatch on `cfg.objective` against `pair.target`, recording the
/// per-iteration objective values.
pub fn attack_with_trace(
    pair: &ModelPair,
    x: &Tensor,
    prompts: &PromptSet,
    label: usize,
    cfg: &AttackConfig,
    seed: u64,
) -> Result<(Tensor, Vec<f32>)> {
    let mut trace = Vec::with_capacity(cfg.iterations);
    let original = cfg.objective.is_adaptive().then_some(&pair.original);
    let x_adv = attack_core(
        &pair.target,
        original,
        x,
        prompts,
        label,
        cfg,
        seed,
        Some(&mut trace),
    )?;
    Ok((x_adv, trace))
}

/// Dispatch on `cfg.objective` evaluating `model`; adaptive objectives pull
/// the frozen original from `pair_original`.
pub fn run_attack(
    model: &DualEncoder,
    pair_original: Option<&DualEncoder>,
    x: &Tensor,
    prompts: &PromptSet,
    label: usize,
    cfg: &AttackConfig,
    seed: u64,
) -> Result<Tensor> {
    if cfg.objective.is_adaptive() && pair_original.is_none() {
        return Err(Error::Domain {
            op: "run_attack",
            reason: "adaptive objectives require the original model".into(),
        });
    }
    let original = cfg.objective.is_adaptive().then(|| pair_original.unwrap());
    attack_core(model, original, x, prompts, label, cfg, seed, None)
}

#[allow(clippy::too_many_arguments)]
fn attack_core(
    model: &DualEncoder,
    original: Option<&DualEncoder>,
    x: &Tensor,
    prompts: &PromptSet,
    label: usize,
    cfg: &AttackConfig,
    seed: u64,
    mut trace: Option<&mut Vec<f32>>,
) -> Result<Tensor> {
    cfg.validate()?;
    let classes = prompts.num_classes();
    if label >= classes {
        return Err(Error::LabelOutOfRange { label, classes });
    }
    if classes < 2 && cfg.objective != AttackObjective::Ce {
        return Err(Error::Domain {
            op: "attack",
            reason: "margin objectives need at least 2 classes".into(),
        });
    }
    let enc = *model.config();

    // The text branch is never attacked: embed all class prompts once.
    let mut class_embs = Vec::with_capacity(classes);
    for c in 0..classes {
        class_embs.push(model.encode_text(prompts.class_prompt(c))?);
    }
    // For adaptive objectives, the clean-input original-model map is computed
    // once up front and held fixed across iterations.
    let clean_reference = match (cfg.objective, original) {
        (AttackObjective::AdaptiveTga, Some(ori)) => Some(attention::map_for_model(
            ori,
            x,
            label,
            prompts,
            AttentionMethod::Tga,
            ModelSource::OriginalModel,
            InputKind::Clean,
        )?),
        (AttackObjective::AdaptiveCompTga, Some(ori)) => Some(attention::map_for_model(
            ori,
            x,
            label,
            prompts,
            AttentionMethod::CompTga,
            ModelSource::OriginalModel,
            InputKind::Clean,
        )?),
        _ => None,
    };
    let non_class_emb = match cfg.objective {
        AttackObjective::AdaptiveCompTga => {
            Some(model.encode_text(prompts.non_class_prompt(label))?)
        }
        _ => None,
    };

    let mut x_adv = x.data().to_vec();
    if cfg.random_start {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for v in &mut x_adv {
            *v += rng.random_range(-cfg.epsilon..=cfg.epsilon);
        }
        project_in_place(&mut x_adv, x.data(), cfg);
    }

    for _ in 0..cfg.iterations {
        let mut g = Graph::new();
        let mut probe = Tensor::new(x_adv.clone(), x.shape())?;
        probe.set_requires_grad(true);
        let xv = g.leaf(probe);
        let bound = model.bind(&mut g, false);
        let (f_g, f) = encode_image_graph(&mut g, &bound, xv)?;

        let objective = match cfg.objective {
            AttackObjective::Ce => {
                let rows: Vec<Var> = class_embs
                    .iter()
                    .map(|e| g.constant(e.data().to_vec(), e.shape()))
                    .collect::<Result<_>>()?;
                let text_mat = g.concat_rows(&rows)?;
                let img = g.reshape(f, &[1, enc.embed_dim])?;
                objectives::contrastive_ce_loss(&mut g, img, text_mat, &[label], enc.tau)?
            }
            _ => {
                let margin = margin_objective(&mut g, f, &class_embs, label, cfg.tau_margin)?;
                match &clean_reference {
                    Some(reference) if cfg.lambda > 0.0 => {
                        let method = if cfg.objective == AttackObjective::AdaptiveCompTga {
                            AttentionMethod::CompTga
                        } else {
                            AttentionMethod::Tga
                        };
                        let class_emb = g.constant(
                            class_embs[label].data().to_vec(),
                            class_embs[label].shape(),
                        )?;
                        let non_emb = non_class_emb
                            .as_ref()
                            .map(|e| g.constant(e.data().to_vec(), e.shape()))
                            .transpose()?;
                        let tags = MapTags {
                            class_id: label,
                            source: ModelSource::TargetModel,
                            input_kind: InputKind::Adversarial,
                        };
                        let adv_map = attention::method_map_graph(
                            &mut g, f_g, class_emb, non_emb, method, enc.height, enc.width, tags,
                        )?;
                        let ref_map = GraphMap::constant_in(&mut g, reference)?;
                        let diff = g.sub(adv_map.var, ref_map.var)?;
                        let dist = g.l2_norm(diff);
                        let weighted = g.scale(dist, cfg.lambda);
                        g.add(margin, weighted)?
                    }
                    _ => margin,
                }
            }
        };

        if let Some(t) = trace.as_deref_mut() {
            t.push(g.scalar_value(objective));
        }
        g.backward(objective)?;
        if let Some(grad) = g.grad(xv) {
            for (v, gr) in x_adv.iter_mut().zip(grad) {
                *v += cfg.step_size * sign(*gr);
            }
        }
        project_in_place(&mut x_adv, x.data(), cfg);
    }
    Tensor::new(x_adv, x.shape())
}

/// `tau * log sum_{n != m} exp(s_n / tau) - s_m` over raw cosine scores.
fn margin_objective(
    g: &mut Graph,
    f: Var,
    class_embs: &[Tensor],
    label: usize,
    tau_margin: f32,
) -> Result<Var> {
    let classes = class_embs.len();
    let d = class_embs[0].numel();
    let rows: Vec<Var> = class_embs
        .iter()
        .map(|e| g.constant(e.data().to_vec(), e.shape()))
        .collect::<Result<_>>()?;
    let text_mat = g.concat_rows(&rows)?;
    let f_col = g.reshape(f, &[d, 1])?;
    let scores_col = g.matmul(text_mat, f_col)?;
    let scores = g.reshape(scores_col, &[classes])?;
    // Select the non-target scores with a constant [C-1, C] matrix.
    let mut sel = vec![0.0f32; (classes - 1) * classes];
    let mut row = 0;
    for c in 0..classes {
        if c != label {
            sel[row * classes + c] = 1.0;
            row += 1;
        }
    }
    let sel = g.constant(sel, &[classes - 1, classes])?;
    let scores_col2 = g.reshape(scores, &[classes, 1])?;
    let non_target_col = g.matmul(sel, scores_col2)?;
    let non_target = g.reshape(non_target_col, &[classes - 1])?;
    let scaled = g.scale(non_target, 1.0 / tau_margin);
    let lse = g.log_sum_exp(scaled, 0)?;
    let soft_max = g.scale(lse, tau_margin);
    // Target score via a one-hot mask.
    let mut onehot = vec![0.0f32; classes];
    onehot[label] = 1.0;
    let mask = g.constant(onehot, &[classes])?;
    let picked = g.hadamard(scores, mask)?;
    let target_mean = g.mean(picked);
    let target = g.scale(target_mean, classes as f32);
    g.sub(soft_max, target)
}
