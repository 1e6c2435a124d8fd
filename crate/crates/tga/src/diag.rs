//! Gradient diagnostics: a finite-difference sweep over the op catalog and a
//! check of the full training objective against central differences. Shared
//! by the `gradcheck` CLI command and the acceptance suite.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::attacks;
use crate::attention::{self, AttentionMethod, GraphMap, InputKind, MapTags, ModelSource};
use crate::encoders::{
    encode_image_graph, encode_text_graph, DualEncoder, EncoderConfig, ModelPair, PromptSet,
};
use crate::error::Result;
use crate::evalkit::{gen_synthetic, DatasetSpec, ShapeKind};
use crate::objectives::{self, LossWeights, TrainConfig};
use crate::tensor::{grad_check, grad_check_at, Graph, OpKind, Tensor, Var};

/// Per-op outcome of the catalog sweep.
#[derive(Debug, Clone)]
pub struct OpGradReport {
    pub name: String,
    pub max_err: f32,
}

fn rand_vec(rng: &mut ChaCha8Rng, n: usize, lo: f32, hi: f32) -> Vec<f32> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

/// Values with pairwise gaps large relative to the probe step, shuffled.
fn separated_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f32> {
    let mut vals: Vec<f32> = (0..n)
        .map(|i| i as f32 * 0.17 + rng.random_range(0.0..0.06))
        .collect();
    for i in (1..vals.len()).rev() {
        let j = rng.random_range(0..=i);
        vals.swap(i, j);
    }
    vals
}

/// Run `grad_check` for every op in the catalog, driving each through the
/// generic [`Graph::apply`] dispatch with a fixed random linear head.
pub fn op_catalog_gradcheck(seed: u64) -> Result<Vec<OpGradReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weights = rand_vec(&mut rng, 512, -2.0, 2.0);
    let h = 1e-3f32;

    struct Case {
        name: &'static str,
        op: OpKind,
        /// The probe point; extra constant operands are supplied around it.
        point: Tensor,
        /// Position of the probe among the op's inputs.
        probe_slot: usize,
        /// Constant co-operands (shape, data).
        others: Vec<(Vec<usize>, Vec<f32>)>,
    }

    let mut cases = Vec::new();
    cases.push(Case {
        name: "matmul_lhs",
        op: OpKind::MatMul,
        point: Tensor::new(rand_vec(&mut rng, 6, -1.0, 1.0), &[2, 3])?,
        probe_slot: 0,
        others: vec![(vec![3, 2], rand_vec(&mut rng, 6, -1.0, 1.0))],
    });
    cases.push(Case {
        name: "matmul_rhs",
        op: OpKind::MatMul,
        point: Tensor::new(rand_vec(&mut rng, 6, -1.0, 1.0), &[3, 2])?,
        probe_slot: 1,
        others: vec![(vec![2, 3], rand_vec(&mut rng, 6, -1.0, 1.0))],
    });
    cases.push(Case {
        name: "hadamard",
        op: OpKind::Hadamard,
        point: Tensor::new(rand_vec(&mut rng, 8, -1.0, 1.0), &[8])?,
        probe_slot: 0,
        others: vec![(vec![8], rand_vec(&mut rng, 8, -1.0, 1.0))],
    });
    cases.push(Case {
        name: "add",
        op: OpKind::Add,
        point: Tensor::new(rand_vec(&mut rng, 8, -1.0, 1.0), &[8])?,
        probe_slot: 1,
        others: vec![(vec![8], rand_vec(&mut rng, 8, -1.0, 1.0))],
    });
    cases.push(Case {
        name: "sub",
        op: OpKind::Sub,
        point: Tensor::new(rand_vec(&mut rng, 8, -1.0, 1.0), &[8])?,
        probe_slot: 1,
        others: vec![(vec![8], rand_vec(&mut rng, 8, -1.0, 1.0))],
    });
    cases.push(Case {
        name: "scale",
        op: OpKind::Scale(-2.25),
        point: Tensor::new(rand_vec(&mut rng, 8, -1.0, 1.0), &[8])?,
        probe_slot: 0,
        others: vec![],
    });
    cases.push(Case {
        name: "mean",
        op: OpKind::Mean,
        point: Tensor::new(rand_vec(&mut rng, 9, -1.0, 1.0), &[9])?,
        probe_slot: 0,
        others: vec![],
    });
    cases.push(Case {
        name: "softmax",
        op: OpKind::Softmax { axis: 1 },
        point: Tensor::new(rand_vec(&mut rng, 12, -2.0, 2.0), &[3, 4])?,
        probe_slot: 0,
        others: vec![],
    });
    cases.push(Case {
        name: "log_sum_exp",
        op: OpKind::LogSumExp { axis: 0 },
        point: Tensor::new(rand_vec(&mut rng, 12, -2.0, 2.0), &[4, 3])?,
        probe_slot: 0,
        others: vec![],
    });
    cases.push(Case {
        name: "l2_norm",
        op: OpKind::L2Norm,
        point: Tensor::new(rand_vec(&mut rng, 8, 0.2, 1.2), &[8])?,
        probe_slot: 0,
        others: vec![],
    });
    cases.push(Case {
        name: "cosine_sim_lhs",
        op: OpKind::CosineSim,
        point: Tensor::new(rand_vec(&mut rng, 6, 0.2, 1.0), &[6])?,
        probe_slot: 0,
        others: vec![(vec![6], rand_vec(&mut rng, 6, 0.2, 1.0))],
    });
    cases.push(Case {
        name: "cosine_sim_rhs",
        op: OpKind::CosineSim,
        point: Tensor::new(rand_vec(&mut rng, 6, 0.2, 1.0), &[6])?,
        probe_slot: 1,
        others: vec![(vec![6], rand_vec(&mut rng, 6, 0.2, 1.0))],
    });
    // Probes kept away from the clamp boundaries.
    let clamp_point: Vec<f32> = rand_vec(&mut rng, 8, -1.0, 1.0)
        .into_iter()
        .map(|v| if (v.abs() - 0.6).abs() < 0.02 { v + 0.05 } else { v })
        .collect();
    cases.push(Case {
        name: "clamp",
        op: OpKind::Clamp { lo: -0.6, hi: 0.6 },
        point: Tensor::new(clamp_point, &[8])?,
        probe_slot: 0,
        others: vec![],
    });
    cases.push(Case {
        name: "bilinear_resize",
        op: OpKind::BilinearResize { out_h: 9, out_w: 5 },
        point: Tensor::new(rand_vec(&mut rng, 16, -1.0, 1.0), &[4, 4])?,
        probe_slot: 0,
        others: vec![],
    });
    cases.push(Case {
        name: "minmax_norm",
        op: OpKind::MinMaxNorm,
        point: Tensor::new(separated_vec(&mut rng, 9), &[3, 3])?,
        probe_slot: 0,
        others: vec![],
    });
    cases.push(Case {
        name: "transpose",
        op: OpKind::Transpose,
        point: Tensor::new(rand_vec(&mut rng, 6, -1.0, 1.0), &[2, 3])?,
        probe_slot: 0,
        others: vec![],
    });
    cases.push(Case {
        name: "reshape",
        op: OpKind::Reshape { shape: vec![3, 2] },
        point: Tensor::new(rand_vec(&mut rng, 6, -1.0, 1.0), &[2, 3])?,
        probe_slot: 0,
        others: vec![],
    });
    cases.push(Case {
        name: "tanh",
        op: OpKind::Tanh,
        point: Tensor::new(rand_vec(&mut rng, 8, -2.0, 2.0), &[8])?,
        probe_slot: 0,
        others: vec![],
    });
    cases.push(Case {
        name: "l2_normalize",
        op: OpKind::L2Normalize,
        point: Tensor::new(rand_vec(&mut rng, 8, 0.2, 1.2), &[8])?,
        probe_slot: 0,
        others: vec![],
    });
    cases.push(Case {
        name: "concat_rows",
        op: OpKind::ConcatRows,
        point: Tensor::new(rand_vec(&mut rng, 4, -1.0, 1.0), &[4])?,
        probe_slot: 1,
        others: vec![(vec![4], rand_vec(&mut rng, 4, -1.0, 1.0))],
    });
    cases.push(Case {
        name: "patchify",
        op: OpKind::Patchify { patch: 2 },
        point: Tensor::new(rand_vec(&mut rng, 32, -1.0, 1.0), &[2, 4, 4])?,
        probe_slot: 0,
        others: vec![],
    });

    let mut reports = Vec::with_capacity(cases.len());
    for case in cases {
        let op = case.op.clone();
        let others = case.others.clone();
        let slot = case.probe_slot;
        let w = weights.clone();
        let err = grad_check(
            move |g: &mut Graph, x: Var| {
                let mut inputs = Vec::new();
                let mut other_iter = others.iter();
                let arity = 1 + others.len();
                for s in 0..arity {
                    if s == slot {
                        inputs.push(x);
                    } else {
                        let (shape, data) = other_iter.next().expect("co-operand available");
                        inputs.push(g.constant(data.clone(), shape)?);
                    }
                }
                let out = g.apply(&op, &inputs)?;
                if g.tensor(out).numel() == 1 {
                    return Ok(out);
                }
                let shape = g.shape(out).to_vec();
                let n = g.tensor(out).numel();
                let head = g.constant(w[..n].to_vec(), &shape)?;
                let weighted = g.hadamard(out, head)?;
                Ok(g.mean(weighted))
            },
            &case.point,
            h,
        )?;
        reports.push(OpGradReport {
            name: case.name.to_string(),
            max_err: err,
        });
    }
    Ok(reports)
}

fn tiny_pair(seed: u64) -> Result<(ModelPair, PromptSet, Vec<crate::evalkit::Example>)> {
    let cfg = EncoderConfig {
        height: 16,
        width: 16,
        channels: 3,
        patch: 4,
        embed_dim: 8,
        blocks: 2,
        vocab: 32,
        tau: 0.07,
        seed,
    };
    let model = DualEncoder::init(cfg)?;
    let pair = ModelPair::from_pretrained(&model);
    let prompts = PromptSet::new(&["disk", "square", "triangle", "cross"])?;
    let data = gen_synthetic(&DatasetSpec {
        seed: seed ^ 0x5a5a,
        n: 4,
        classes: vec![
            ShapeKind::Disk,
            ShapeKind::Square,
            ShapeKind::Triangle,
            ShapeKind::Cross,
        ],
        noise: 0.1,
        channels: 3,
        height: 16,
        width: 16,
    })?;
    Ok((pair, prompts, data))
}

/// Check the gradient of the full training objective (cross-entropy plus both
/// attention-alignment terms) against central differences, probing
/// `coords_per_param` random coordinates of every image-branch parameter of a
/// tiny model. Returns the maximum relative error seen.
pub fn objective_gradcheck(coords_per_param: usize, seed: u64) -> Result<f32> {
    let (pair, prompts, data) = tiny_pair(seed)?;
    let cfg_enc = *pair.target.config();
    let method = AttentionMethod::CompTga;
    let weights = LossWeights::defaults_for(method);
    let train = TrainConfig::defaults_for(method);

    // Fixed adversarial inputs: the objective's gradient is taken with the
    // perturbations held constant, exactly as in the training step.
    let mut adv_images = Vec::with_capacity(data.len());
    for (i, ex) in data.iter().enumerate() {
        adv_images.push(attacks::pgd_attack(
            &pair.target,
            &ex.image,
            &prompts,
            ex.label,
            &train.attack,
            seed ^ i as u64,
        )?);
    }
    let mut original_maps = Vec::with_capacity(data.len());
    for ex in &data {
        original_maps.push(attention::attention_for_example(
            &pair,
            &ex.image,
            ex.label,
            &prompts,
            method,
            ModelSource::OriginalModel,
            InputKind::Clean,
        )?);
    }

    let image_param_count = 2 + 2 * cfg_enc.blocks;
    let named = pair.target.named_params();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6f626a);
    let mut max_err = 0.0f32;
    for param_idx in 0..image_param_count {
        let (_, param_data, param_shape) = &named[param_idx];
        let point = Tensor::new(param_data.to_vec(), param_shape)?;
        let coords: Vec<usize> = (0..coords_per_param.min(point.numel()))
            .map(|_| rng.random_range(0..point.numel()))
            .collect();
        let target = pair.target.clone();
        let prompts_ref = &prompts;
        let data_ref = &data;
        let adv_ref = &adv_images;
        let maps_ref = &original_maps;
        let err = grad_check_at(
            move |g: &mut Graph, x: Var| {
                let bound = target.bind_with_override(g, param_idx, x)?;
                let classes = prompts_ref.num_classes();
                let text_rows: Vec<Var> = (0..classes)
                    .map(|c| encode_text_graph(g, &bound, prompts_ref.class_prompt(c)))
                    .collect::<Result<_>>()?;
                let text_mat = g.concat_rows(&text_rows)?;
                let mut image_rows = Vec::new();
                let mut labels = Vec::new();
                let mut adv_maps = Vec::new();
                let mut clean_maps = Vec::new();
                let mut ori_maps = Vec::new();
                for (k, ex) in data_ref.iter().enumerate() {
                    let label = ex.label;
                    let class_emb = text_rows[label];
                    let non_emb = Some(encode_text_graph(
                        g,
                        &bound,
                        prompts_ref.non_class_prompt(label),
                    )?);
                    let xa = g.leaf(Tensor::new(
                        adv_ref[k].data().to_vec(),
                        adv_ref[k].shape(),
                    )?);
                    let (fg_adv, f_adv) = encode_image_graph(g, &bound, xa)?;
                    image_rows.push(f_adv);
                    labels.push(label);
                    adv_maps.push(attention::method_map_graph(
                        g,
                        fg_adv,
                        class_emb,
                        non_emb,
                        method,
                        cfg_enc.height,
                        cfg_enc.width,
                        MapTags {
                            class_id: label,
                            source: ModelSource::TargetModel,
                            input_kind: InputKind::Adversarial,
                        },
                    )?);
                    let xc = g.leaf(Tensor::new(ex.image.data().to_vec(), ex.image.shape())?);
                    let (fg_clean, _) = encode_image_graph(g, &bound, xc)?;
                    clean_maps.push(attention::method_map_graph(
                        g,
                        fg_clean,
                        class_emb,
                        non_emb,
                        method,
                        cfg_enc.height,
                        cfg_enc.width,
                        MapTags {
                            class_id: label,
                            source: ModelSource::TargetModel,
                            input_kind: InputKind::Clean,
                        },
                    )?);
                    ori_maps.push(GraphMap::constant_in(g, &maps_ref[k])?);
                }
                let image_mat = g.concat_rows(&image_rows)?;
                let ce =
                    objectives::contrastive_ce_loss(g, image_mat, text_mat, &labels, cfg_enc.tau)?;
                let larm = objectives::larm_loss(g, &adv_maps, &ori_maps)?;
                let gacm = objectives::gacm_loss(g, &clean_maps, &ori_maps)?;
                objectives::total_loss(g, ce, larm, gacm, &weights)
            },
            &point,
            1e-3,
            &coords,
        )?;
        max_err = max_err.max(err);
    }
    Ok(max_err)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn catalog_sweep_stays_under_tolerance() {
        for report in op_catalog_gradcheck(7).unwrap() {
            assert!(
                report.max_err < 1e-3,
                "{}: {}",
                report.name,
                report.max_err
            );
        }
    }

    #[test]
    fn objective_gradient_matches_finite_differences() {
        let err = objective_gradcheck(6, 11).unwrap();
        assert!(err < 1e-3, "objective grad error {err}");
    }
}
