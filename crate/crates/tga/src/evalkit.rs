//! Synthetic benchmark generation and the evaluation protocol: clean/robust
//! zero-shot accuracy, soft Jaccard IoU of attention maps against
//! ground-truth masks, and the attention-shift statistic.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::attacks::{self, AttackConfig};
use crate::attention::{self, AttentionMap, AttentionMethod, InputKind, ModelSource};
use crate::encoders::{DualEncoder, ModelPair, PromptSet};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Geometric foreground classes of the synthetic benchmark.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShapeKind {
    Disk,
    Square,
    Triangle,
    Cross,
}

impl ShapeKind {
    pub fn name(&self) -> &'static str {
        match self {
            ShapeKind::Disk => "disk",
            ShapeKind::Square => "square",
            ShapeKind::Triangle => "triangle",
            ShapeKind::Cross => "cross",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "disk" => Ok(ShapeKind::Disk),
            "square" => Ok(ShapeKind::Square),
            "triangle" => Ok(ShapeKind::Triangle),
            "cross" => Ok(ShapeKind::Cross),
            other => Err(Error::Config {
                reason: format!("unknown shape kind {other:?}"),
            }),
        }
    }

    fn contains(&self, x: isize, y: isize, cx: isize, cy: isize, r: isize) -> bool {
        let (dx, dy) = (x - cx, y - cy);
        match self {
            ShapeKind::Disk => dx * dx + dy * dy <= r * r,
            ShapeKind::Square => dx.abs() <= r && dy.abs() <= r,
            // Isoceles triangle, apex up: half-width grows with depth.
            ShapeKind::Triangle => dy.abs() <= r && 2 * dx.abs() <= dy + r,
            ShapeKind::Cross => {
                let arm = (r / 2).max(1);
                (dx.abs() <= arm && dy.abs() <= r) || (dy.abs() <= arm && dx.abs() <= r)
            }
        }
    }
}

/// Parameters of one synthetic dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSpec {
    pub seed: u64,
    pub n: usize,
    pub classes: Vec<ShapeKind>,
    /// Per-pixel uniform noise amplitude, in [0, 0.3].
    pub noise: f32,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |reason: String| Err(Error::Config { reason });
        if self.n < 1 {
            return fail("dataset size n must be >= 1".into());
        }
        if self.classes.is_empty() {
            return fail("classes must be non-empty".into());
        }
        if self.n < self.classes.len() {
            return fail(format!(
                "n = {} is smaller than the class count {}",
                self.n,
                self.classes.len()
            ));
        }
        if !(0.0..=0.3).contains(&self.noise) {
            return fail(format!("noise must lie in [0, 0.3], got {}", self.noise));
        }
        if self.channels == 0 || self.height < 8 || self.width < 8 {
            return fail(format!(
                "image dims too small: {}x{}x{}",
                self.channels, self.height, self.width
            ));
        }
        Ok(())
    }
}

/// One labeled image with its pixel-exact foreground mask.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    /// [C,H,W] pixels in [0,1].
    pub image: Tensor,
    pub label: usize,
    /// H*W entries in {0,1}, at least one foreground pixel.
    pub mask: Vec<u8>,
}

/// Deterministic synthetic shapes on textured backgrounds, class-balanced up
/// to rounding (example i has class i mod C).
pub fn gen_synthetic(spec: &DatasetSpec) -> Result<Vec<Example>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (c, h, w) = (spec.channels, spec.height, spec.width);
    let min_side = h.min(w);
    let r_lo = (min_side / 5).max(2) as i64;
    let r_hi = (min_side / 3).max(r_lo as usize + 1) as i64;
    let mut out = Vec::with_capacity(spec.n);
    for i in 0..spec.n {
        let label = i % spec.classes.len();
        let shape = spec.classes[label];
        let r = rng.random_range(r_lo..=r_hi) as isize;
        // Positions jitter around the center; the margin keeps every shape
        // fully inside the frame.
        let jitter = (min_side / 8) as i64;
        let cx = (w as i64 / 2 + rng.random_range(-jitter..=jitter))
            .clamp(r as i64, w as i64 - 1 - r as i64) as isize;
        let cy = (h as i64 / 2 + rng.random_range(-jitter..=jitter))
            .clamp(r as i64, h as i64 - 1 - r as i64) as isize;
        // Dark striped background, bright flat foreground, small per-channel
        // tints: the intensity contrast is stable while color stays
        // uninformative about the class, and the texture gives background
        // patches feature content of their own.
        let bg_lum = rng.random_range(0.08..0.25);
        let fg_lum = rng.random_range(0.78..0.95);
        let bg: Vec<f32> = (0..c)
            .map(|_| (bg_lum + rng.random_range(-0.05..0.05f32)).clamp(0.0, 1.0))
            .collect();
        let fg: Vec<f32> = (0..c)
            .map(|_| (fg_lum + rng.random_range(-0.05..0.05f32)).clamp(0.0, 1.0))
            .collect();
        // Low-frequency luminance gradient plus a sinusoidal stripe pattern
        // with random orientation, wavelength, and phase.
        let angle = rng.random_range(0.0..std::f32::consts::TAU);
        let (gx, gy) = (angle.cos(), angle.sin());
        let grad_amp = rng.random_range(0.0..0.08);
        let stripe_angle = rng.random_range(0.0..std::f32::consts::TAU);
        let (sx, sy) = (stripe_angle.cos(), stripe_angle.sin());
        let wavelength = rng.random_range(4.0..10.0f32);
        let phase = rng.random_range(0.0..std::f32::consts::TAU);
        let stripe_amp = rng.random_range(0.08..0.18f32);

        let mut image = vec![0.0f32; c * h * w];
        let mut mask = vec![0u8; h * w];
        for y in 0..h {
            for x in 0..w {
                let inside = shape.contains(x as isize, y as isize, cx, cy, r);
                if inside {
                    mask[y * w + x] = 1;
                }
                let t = (gx * x as f32 / w as f32 + gy * y as f32 / h as f32) * grad_amp;
                let stripe = if inside {
                    0.0
                } else {
                    stripe_amp
                        * (std::f32::consts::TAU * (sx * x as f32 + sy * y as f32) / wavelength
                            + phase)
                            .sin()
                };
                for ch in 0..c {
                    let base = if inside { fg[ch] } else { bg[ch] } + t + stripe;
                    let noisy = base + rng.random_range(-spec.noise..=spec.noise);
                    image[ch * h * w + y * w + x] = noisy.clamp(0.0, 1.0);
                }
            }
        }
        debug_assert!(mask.iter().any(|&m| m == 1));
        out.push(Example {
            image: Tensor::new(image, &[c, h, w])?,
            label,
            mask,
        });
    }
    Ok(out)
}

fn argmax(values: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Fraction of examples classified correctly; with an attack configured, the
/// logits are computed on the white-box adversarial input instead.
pub fn zero_shot_accuracy(
    model: &DualEncoder,
    data: &[Example],
    prompts: &PromptSet,
    attack: Option<&AttackConfig>,
    seed: u64,
) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyInput("evaluation data"));
    }
    if let Some(cfg) = attack {
        if cfg.objective.is_adaptive() {
            return Err(Error::Domain {
                op: "zero_shot_accuracy",
                reason: "adaptive objectives need a model pair; use zero_shot_accuracy_adaptive"
                    .into(),
            });
        }
    }
    let mut correct = 0usize;
    for (i, ex) in data.iter().enumerate() {
        let logits = match attack {
            None => model.class_logits(&ex.image, prompts)?,
            Some(cfg) => {
                let xa = attacks::run_attack(
                    model,
                    None,
                    &ex.image,
                    prompts,
                    ex.label,
                    cfg,
                    seed.wrapping_add(i as u64),
                )?;
                model.class_logits(&xa, prompts)?
            }
        };
        if argmax(&logits) == ex.label {
            correct += 1;
        }
    }
    Ok(correct as f64 / data.len() as f64)
}

/// Robust accuracy of `pair.target` under an adaptive attack that sees both
/// models.
pub fn zero_shot_accuracy_adaptive(
    pair: &ModelPair,
    data: &[Example],
    prompts: &PromptSet,
    attack: &AttackConfig,
    seed: u64,
) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyInput("evaluation data"));
    }
    let mut correct = 0usize;
    for (i, ex) in data.iter().enumerate() {
        let xa = attacks::adaptive_attack(
            pair,
            &ex.image,
            prompts,
            ex.label,
            attack,
            seed.wrapping_add(i as u64),
        )?;
        let logits = pair.target.class_logits(&xa, prompts)?;
        if argmax(&logits) == ex.label {
            correct += 1;
        }
    }
    Ok(correct as f64 / data.len() as f64)
}

fn check_binary(op: &'static str, mask: &[u8]) -> Result<()> {
    if mask.iter().any(|&v| v > 1) {
        return Err(Error::Domain {
            op,
            reason: "mask values must be 0 or 1".into(),
        });
    }
    Ok(())
}

/// |intersection| / |union| of two binary masks.
pub fn hard_iou(pred: &[u8], truth: &[u8]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::ShapeMismatch {
            op: "hard_iou",
            expected: format!("{} cells", truth.len()),
            got: format!("{}", pred.len()),
        });
    }
    check_binary("hard_iou", pred)?;
    check_binary("hard_iou", truth)?;
    let mut inter = 0u64;
    let mut union = 0u64;
    for (&p, &t) in pred.iter().zip(truth) {
        inter += (p & t) as u64;
        union += (p | t) as u64;
    }
    if union == 0 {
        return Err(Error::Domain {
            op: "hard_iou",
            reason: "union is empty".into(),
        });
    }
    Ok(inter as f64 / union as f64)
}

/// Soft Jaccard IoU of a continuous attention map against a binary mask:
/// `sum(A * M) / sum(A + M - A * M)`.
pub fn soft_iou(attn: &AttentionMap, truth: &[u8]) -> Result<f64> {
    let cells = attn.height() * attn.width();
    if truth.len() != cells {
        return Err(Error::ShapeMismatch {
            op: "soft_iou",
            expected: format!("{cells} cells"),
            got: format!("{}", truth.len()),
        });
    }
    check_binary("soft_iou", truth)?;
    let mut num = 0.0f64;
    let mut den = 0.0f64;
    for (&a, &m) in attn.grid().data().iter().zip(truth) {
        let a = a as f64;
        let m = m as f64;
        num += a * m;
        den += a + m - a * m;
    }
    if den == 0.0 {
        return Err(Error::Domain {
            op: "soft_iou",
            reason: "attention and mask are both all-zero".into(),
        });
    }
    Ok(num / den)
}

/// Euclidean distance between two map grids of equal size.
pub(crate) fn map_distance(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = (*x - *y) as f64;
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

/// Mean Euclidean distance between clean-input and adversarial-input
/// attention maps of the same model (the measurable form of the
/// attention-shift observation).
pub fn attention_shift(
    model: &DualEncoder,
    data: &[Example],
    prompts: &PromptSet,
    attack: &AttackConfig,
    method: AttentionMethod,
    seed: u64,
) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyInput("evaluation data"));
    }
    if attack.objective.is_adaptive() {
        return Err(Error::Domain {
            op: "attention_shift",
            reason: "adaptive objectives need a model pair".into(),
        });
    }
    let mut total = 0.0f64;
    for (i, ex) in data.iter().enumerate() {
        let xa = attacks::run_attack(
            model,
            None,
            &ex.image,
            prompts,
            ex.label,
            attack,
            seed.wrapping_add(i as u64),
        )?;
        let clean = attention::map_for_model(
            model,
            &ex.image,
            ex.label,
            prompts,
            method,
            ModelSource::TargetModel,
            InputKind::Clean,
        )?;
        let adv = attention::map_for_model(
            model,
            &xa,
            ex.label,
            prompts,
            method,
            ModelSource::TargetModel,
            InputKind::Adversarial,
        )?;
        total += map_distance(clean.grid().data(), adv.grid().data());
    }
    Ok(total / data.len() as f64)
}

/// One evaluation run of a model under one attack configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub a_robust: f64,
    pub a_clean: f64,
    pub a_overall: f64,
    pub mean_soft_iou_clean: f64,
    pub mean_soft_iou_adv: f64,
    pub mean_attention_shift: f64,
    pub attack: AttackConfig,
    pub seed: u64,
}

impl MetricsReport {
    /// `a_overall` is derived, never stored independently.
    pub fn new(
        a_robust: f64,
        a_clean: f64,
        mean_soft_iou_clean: f64,
        mean_soft_iou_adv: f64,
        mean_attention_shift: f64,
        attack: AttackConfig,
        seed: u64,
    ) -> Self {
        MetricsReport {
            a_robust,
            a_clean,
            a_overall: (a_robust + a_clean) / 2.0,
            mean_soft_iou_clean,
            mean_soft_iou_adv,
            mean_attention_shift,
            attack,
            seed,
        }
    }
}

/// Full white-box evaluation of `pair.target` under one attack: clean and
/// robust accuracy, soft IoU of the method's maps against ground-truth masks
/// on clean and attacked inputs, and the attention shift. Adversarial inputs
/// are generated once per example and reused across the metrics.
pub fn evaluate(
    pair: &ModelPair,
    data: &[Example],
    prompts: &PromptSet,
    attack: &AttackConfig,
    method: AttentionMethod,
    seed: u64,
) -> Result<MetricsReport> {
    if data.is_empty() {
        return Err(Error::EmptyInput("evaluation data"));
    }
    attack.validate()?;
    let model = &pair.target;
    let mut correct_clean = 0usize;
    let mut correct_adv = 0usize;
    let mut iou_clean = 0.0f64;
    let mut iou_adv = 0.0f64;
    let mut shift = 0.0f64;
    for (i, ex) in data.iter().enumerate() {
        let logits = model.class_logits(&ex.image, prompts)?;
        if argmax(&logits) == ex.label {
            correct_clean += 1;
        }
        let xa = attacks::run_attack(
            model,
            Some(&pair.original),
            &ex.image,
            prompts,
            ex.label,
            attack,
            seed.wrapping_add(i as u64),
        )?;
        let logits_adv = model.class_logits(&xa, prompts)?;
        if argmax(&logits_adv) == ex.label {
            correct_adv += 1;
        }
        let clean_map = attention::map_for_model(
            model,
            &ex.image,
            ex.label,
            prompts,
            method,
            ModelSource::TargetModel,
            InputKind::Clean,
        )?;
        let adv_map = attention::map_for_model(
            model,
            &xa,
            ex.label,
            prompts,
            method,
            ModelSource::TargetModel,
            InputKind::Adversarial,
        )?;
        iou_clean += soft_iou(&clean_map, &ex.mask)?;
        iou_adv += soft_iou(&adv_map, &ex.mask)?;
        shift += map_distance(clean_map.grid().data(), adv_map.grid().data());
    }
    let n = data.len() as f64;
    Ok(MetricsReport::new(
        correct_adv as f64 / n,
        correct_clean as f64 / n,
        iou_clean / n,
        iou_adv / n,
        shift / n,
        attack.clone(),
        seed,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attacks::AttackObjective;
    use crate::attention::{AttentionKind, MapMeta};
    use crate::encoders::EncoderConfig;

    fn four_class_spec(seed: u64, n: usize) -> DatasetSpec {
        DatasetSpec {
            seed,
            n,
            classes: vec![
                ShapeKind::Disk,
                ShapeKind::Square,
                ShapeKind::Triangle,
                ShapeKind::Cross,
            ],
            noise: 0.1,
            channels: 3,
            height: 32,
            width: 32,
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = four_class_spec(7, 12);
        let a = gen_synthetic(&spec).unwrap();
        let b = gen_synthetic(&spec).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn generation_balances_classes_exactly_when_divisible() {
        let spec = four_class_spec(3, 400);
        let data = gen_synthetic(&spec).unwrap();
        let mut counts = [0usize; 4];
        for ex in &data {
            counts[ex.label] += 1;
        }
        assert_eq!(counts, [100; 4]);
    }

    #[test]
    fn masks_are_proper_subsets_of_the_image() {
        let spec = four_class_spec(11, 40);
        for ex in gen_synthetic(&spec).unwrap() {
            let fg: usize = ex.mask.iter().map(|&m| m as usize).sum();
            assert!(fg >= 1, "empty mask");
            assert!(fg < 32 * 32, "mask covers the whole image");
            assert!(ex.mask.iter().all(|&m| m <= 1));
            assert!(ex.image.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn rejects_empty_and_oversized_noise() {
        let mut spec = four_class_spec(1, 0);
        assert!(gen_synthetic(&spec).is_err());
        spec.n = 8;
        spec.noise = 0.5;
        assert!(gen_synthetic(&spec).is_err());
    }

    #[test]
    fn hard_iou_hand_values() {
        assert_eq!(hard_iou(&[1, 1, 0, 0], &[1, 1, 0, 0]).unwrap(), 1.0);
        assert_eq!(hard_iou(&[1, 0, 0, 0], &[0, 0, 0, 1]).unwrap(), 0.0);
        // pred = top half, truth = left half of a 2x2 grid.
        let pred = [1, 1, 0, 0];
        let truth = [1, 0, 1, 0];
        assert!((hard_iou(&pred, &truth).unwrap() - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn hard_iou_rejects_empty_union_and_nonbinary() {
        assert!(hard_iou(&[0, 0], &[0, 0]).is_err());
        assert!(hard_iou(&[2, 0], &[1, 0]).is_err());
    }

    fn attn(data: Vec<f32>, h: usize, w: usize) -> AttentionMap {
        AttentionMap::new(
            Tensor::new(data, &[h, w]).unwrap(),
            MapMeta {
                class_id: 0,
                kind: AttentionKind::Class,
                source: ModelSource::TargetModel,
                input_kind: InputKind::Clean,
            },
        )
        .unwrap()
    }

    #[test]
    fn soft_iou_hand_values() {
        // A = diag(0.5), M = e_00 -> 0.5 / 1.5.
        let a = attn(vec![0.5, 0.0, 0.0, 0.5], 2, 2);
        let m = [1u8, 0, 0, 0];
        assert!((soft_iou(&a, &m).unwrap() - 1.0 / 3.0).abs() < 1e-12);

        let zero = attn(vec![0.0; 4], 2, 2);
        assert_eq!(soft_iou(&zero, &[1, 0, 0, 1]).unwrap(), 0.0);
        assert!(soft_iou(&zero, &[0, 0, 0, 0]).is_err());
    }

    #[test]
    fn soft_iou_equals_hard_iou_on_binary_maps() {
        // Exhaustive over all 3x3 binary pairs with non-empty union.
        for a_bits in 0u32..512 {
            for m_bits in 0u32..512 {
                if a_bits | m_bits == 0 {
                    continue;
                }
                let a_mask: Vec<u8> = (0..9).map(|i| ((a_bits >> i) & 1) as u8).collect();
                let m_mask: Vec<u8> = (0..9).map(|i| ((m_bits >> i) & 1) as u8).collect();
                let a_map = attn(a_mask.iter().map(|&v| v as f32).collect(), 3, 3);
                let soft = soft_iou(&a_map, &m_mask).unwrap();
                let hard = hard_iou(&a_mask, &m_mask).unwrap();
                assert!(
                    (soft - hard).abs() < 1e-9,
                    "a={a_bits:b} m={m_bits:b}: {soft} vs {hard}"
                );
            }
        }
    }

    #[test]
    fn soft_iou_monotonicity() {
        let m = [1u8, 0, 0, 0];
        let base = soft_iou(&attn(vec![0.4, 0.3, 0.3, 0.3], 2, 2), &m).unwrap();
        // Raising an A-cell where M = 1 raises the score.
        let up_fg = soft_iou(&attn(vec![0.6, 0.3, 0.3, 0.3], 2, 2), &m).unwrap();
        assert!(up_fg > base);
        // Raising an A-cell where M = 0 lowers it.
        let up_bg = soft_iou(&attn(vec![0.4, 0.5, 0.3, 0.3], 2, 2), &m).unwrap();
        assert!(up_bg < base);
    }

    #[test]
    fn map_distance_hand_value() {
        // 0.1 difference in all 16 cells -> 0.4.
        let a = vec![0.6f32; 16];
        let b = vec![0.5f32; 16];
        assert!((map_distance(&a, &b) - 0.4).abs() < 1e-6);
    }

    fn tiny_setup() -> (ModelPair, PromptSet, Vec<Example>) {
        let cfg = EncoderConfig {
            height: 16,
            width: 16,
            channels: 3,
            patch: 4,
            embed_dim: 8,
            blocks: 1,
            vocab: 32,
            tau: 0.07,
            seed: 5,
        };
        let model = DualEncoder::init(cfg).unwrap();
        let pair = ModelPair::from_pretrained(&model);
        let prompts = PromptSet::new(&["disk", "square"]).unwrap();
        let data = gen_synthetic(&DatasetSpec {
            seed: 2,
            n: 6,
            classes: vec![ShapeKind::Disk, ShapeKind::Square],
            noise: 0.05,
            channels: 3,
            height: 16,
            width: 16,
        })
        .unwrap();
        (pair, prompts, data)
    }

    #[test]
    fn zero_epsilon_attack_equals_clean_accuracy() {
        let (pair, prompts, data) = tiny_setup();
        let clean = zero_shot_accuracy(&pair.target, &data, &prompts, None, 0).unwrap();
        let mut cfg = AttackConfig::train_default();
        cfg.epsilon = 0.0;
        cfg.step_size = 0.0;
        let robust = zero_shot_accuracy(&pair.target, &data, &prompts, Some(&cfg), 0).unwrap();
        assert_eq!(clean, robust);
    }

    #[test]
    fn zero_shot_accuracy_rejects_empty_data() {
        let (pair, prompts, _) = tiny_setup();
        assert!(matches!(
            zero_shot_accuracy(&pair.target, &[], &prompts, None, 0),
            Err(Error::EmptyInput(_))
        ));
    }

    #[test]
    fn attention_shift_zero_for_zero_epsilon() {
        let (pair, prompts, data) = tiny_setup();
        let mut cfg = AttackConfig::train_default();
        cfg.epsilon = 0.0;
        cfg.step_size = 0.0;
        let shift = attention_shift(
            &pair.target,
            &data[..2],
            &prompts,
            &cfg,
            AttentionMethod::Tga,
            0,
        )
        .unwrap();
        assert_eq!(shift, 0.0);
    }

    #[test]
    fn report_overall_is_mean_of_robust_and_clean() {
        let report = MetricsReport::new(
            0.25,
            0.875,
            0.4,
            0.3,
            0.1,
            AttackConfig::train_default(),
            7,
        );
        assert!((report.a_overall - (0.25 + 0.875) / 2.0).abs() < 1e-9);
    }

    #[test]
    fn evaluate_produces_consistent_report() {
        let (pair, prompts, data) = tiny_setup();
        let mut cfg = AttackConfig::train_default().with_objective(AttackObjective::Ce);
        cfg.epsilon = 8.0 / 255.0;
        cfg.step_size = 4.0 / 255.0;
        cfg.iterations = 2;
        let report = evaluate(&pair, &data, &prompts, &cfg, AttentionMethod::CompTga, 3).unwrap();
        assert!((0.0..=1.0).contains(&report.a_robust));
        assert!((0.0..=1.0).contains(&report.a_clean));
        assert!((report.a_overall - (report.a_robust + report.a_clean) / 2.0).abs() < 1e-9);
        assert!((0.0..=1.0).contains(&report.mean_soft_iou_clean));
        assert!((0.0..=1.0).contains(&report.mean_soft_iou_adv));
        assert!(report.mean_attention_shift >= 0.0);
    }
}
