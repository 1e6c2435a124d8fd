// Scratch harness: negation-alignment phase, then the comp-vs-tga IoU trend.
use std::path::PathBuf;
use tga::attention::{attention_for_example, AttentionMethod, InputKind, ModelSource};
use tga::encoders::{pretrain_negation, ModelPair, PromptSet};
use tga::evalkit::{gen_synthetic, soft_iou, zero_shot_accuracy, DatasetSpec, ShapeKind};
use tga::io::{checkpoint_load, checkpoint_save};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let epochs: usize = args[1].parse().unwrap();
    let lr: f32 = args[2].parse().unwrap();
    let classes = vec![
        ShapeKind::Disk,
        ShapeKind::Square,
        ShapeKind::Triangle,
        ShapeKind::Cross,
    ];
    let prompts = PromptSet::new(&["disk", "square", "triangle", "cross"]).unwrap();
    for seed in [1u64, 2, 3] {
        let spec = DatasetSpec {
            seed: seed * 100,
            n: 500,
            classes: classes.clone(),
            noise: 0.1,
            channels: 3,
            height: 32,
            width: 32,
        };
        let train = gen_synthetic(&spec).unwrap();
        let test = gen_synthetic(&DatasetSpec { seed: seed * 100 + 1, n: 200, ..spec.clone() }).unwrap();
        let mut model = checkpoint_load(&PathBuf::from(format!("/tmp/pre_seed{seed}.tgac"))).unwrap();
        let clean0 = zero_shot_accuracy(&model, &test, &prompts, None, 0).unwrap();
        let rep = pretrain_negation(&mut model, &train, &prompts, epochs, 32, lr).unwrap();
        let clean1 = zero_shot_accuracy(&model, &test, &prompts, None, 0).unwrap();
        checkpoint_save(&model, &PathBuf::from(format!("/tmp/neg_seed{seed}.tgac"))).unwrap();
        let pair = ModelPair::from_pretrained(&model);
        let sample = &test[..50];
        let (mut iou_tga, mut iou_comp, mut iou_non) = (0.0, 0.0, 0.0);
        for ex in sample {
            let m_tga = attention_for_example(&pair, &ex.image, ex.label, &prompts, AttentionMethod::Tga, ModelSource::TargetModel, InputKind::Clean).unwrap();
            let m_comp = attention_for_example(&pair, &ex.image, ex.label, &prompts, AttentionMethod::CompTga, ModelSource::TargetModel, InputKind::Clean).unwrap();
            // Non-class map via the raw building blocks.
            let (f_g, _f) = pair.target.encode_image(&ex.image).unwrap();
            let g_non = pair.target.encode_text(prompts.non_class_prompt(ex.label)).unwrap();
            let m_non = tga::attention::non_class_attention(&f_g, &g_non, 32, 32, tga::attention::MapTags { class_id: ex.label, source: ModelSource::TargetModel, input_kind: InputKind::Clean }).unwrap();
            iou_tga += soft_iou(&m_tga, &ex.mask).unwrap();
            iou_comp += soft_iou(&m_comp, &ex.mask).unwrap();
            iou_non += soft_iou(&m_non, &ex.mask).unwrap();
        }
        // Mass decomposition: mean attention on object vs background cells.
        let (mut a_obj, mut a_bg, mut n_obj, mut n_bg) = (0.0f64, 0.0, 0.0, 0.0);
        for ex in sample {
            let m_tga = attention_for_example(&pair, &ex.image, ex.label, &prompts, AttentionMethod::Tga, ModelSource::TargetModel, InputKind::Clean).unwrap();
            let (f_g, _f) = pair.target.encode_image(&ex.image).unwrap();
            let g_non = pair.target.encode_text(prompts.non_class_prompt(ex.label)).unwrap();
            let m_non = tga::attention::non_class_attention(&f_g, &g_non, 32, 32, tga::attention::MapTags { class_id: ex.label, source: ModelSource::TargetModel, input_kind: InputKind::Clean }).unwrap();
            let (mut ao, mut ab, mut no, mut nb) = (0.0f64, 0.0, 0.0, 0.0);
            let (mut so, mut sb) = (0usize, 0usize);
            for (i, &m) in ex.mask.iter().enumerate() {
                if m == 1 {
                    ao += m_tga.grid().data()[i] as f64;
                    no += m_non.grid().data()[i] as f64;
                    so += 1;
                } else {
                    ab += m_tga.grid().data()[i] as f64;
                    nb += m_non.grid().data()[i] as f64;
                    sb += 1;
                }
            }
            a_obj += ao / so as f64;
            a_bg += ab / sb as f64;
            n_obj += no / so as f64;
            n_bg += nb / sb as f64;
        }
        eprintln!(
            "  A: obj {:.3} bg {:.3} | A_non: obj {:.3} bg {:.3}",
            a_obj / 50.0, a_bg / 50.0, n_obj / 50.0, n_bg / 50.0
        );
        // Embedding geometry: cosine between class and non-class embeddings.
        let gc = pair.target.encode_text(prompts.class_prompt(0)).unwrap();
        let gn = pair.target.encode_text(prompts.non_class_prompt(0)).unwrap();
        let cos: f32 = gc.data().iter().zip(gn.data()).map(|(a, b)| a * b).sum();
        eprintln!(
            "seed={seed} negation loss {:.3}->{:.3} clean {clean0:.3}->{clean1:.3} iou tga {:.4} comp {:.4} non {:.4} cos(gc,gn)={cos:.3}",
            rep.initial_loss, rep.final_loss, iou_tga / 50.0, iou_comp / 50.0, iou_non / 50.0
        );
    }
}
