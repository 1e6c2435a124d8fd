// Scratch harness: cache pretrained checkpoints per seed, then sweep
// fine-tuning hyperparameters.
use std::path::PathBuf;
use tga::attacks::{AttackConfig, AttackObjective};
use tga::attention::AttentionMethod;
use tga::encoders::{pretrain_clean, DualEncoder, EncoderConfig, ModelPair, PromptSet};
use tga::evalkit::{gen_synthetic, zero_shot_accuracy, DatasetSpec, ShapeKind};
use tga::io::{checkpoint_load, checkpoint_save};
use tga::objectives::{finetune_adversarial, LossWeights, TrainConfig};

fn data_for(seed: u64) -> (Vec<tga::evalkit::Example>, Vec<tga::evalkit::Example>) {
    let classes = vec![
        ShapeKind::Disk,
        ShapeKind::Square,
        ShapeKind::Triangle,
        ShapeKind::Cross,
    ];
    let spec = DatasetSpec {
        seed: seed * 100,
        n: 500,
        classes,
        noise: 0.1,
        channels: 3,
        height: 32,
        width: 32,
    };
    let train = gen_synthetic(&spec).unwrap();
    let test = gen_synthetic(&DatasetSpec { seed: seed * 100 + 1, n: 200, ..spec.clone() }).unwrap();
    (train, test)
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let stage = args.get(1).map(|s| s.as_str()).unwrap_or("finetune");
    let prompts = PromptSet::new(&["disk", "square", "triangle", "cross"]).unwrap();
    let eval_attack = AttackConfig {
        epsilon: 8.0 / 255.0,
        step_size: 1.0 / 255.0,
        iterations: 10,
        objective: AttackObjective::Ce,
        lambda: 1.0,
        tau_margin: 1.0,
        pixel_lo: 0.0,
        pixel_hi: 1.0,
        random_start: false,
    };

    if stage == "pretrain" {
        // args: pretrain <epochs> <batch> <lr>
        let epochs: usize = args[2].parse().unwrap();
        let batch: usize = args[3].parse().unwrap();
        let lr: f32 = args[4].parse().unwrap();
        for seed in [1u64, 2, 3] {
            let (train, test) = data_for(seed);
            let tau: f32 = args.get(5).map(|s| s.parse().unwrap()).unwrap_or(0.07);
            let cfg = EncoderConfig { seed, tau, ..EncoderConfig::default() };
            let mut model = DualEncoder::init(cfg).unwrap();
            pretrain_clean(&mut model, &train, &prompts, epochs, batch, lr).unwrap();
            let clean = zero_shot_accuracy(&model, &test, &prompts, None, 0).unwrap();
            let robust = zero_shot_accuracy(&model, &test, &prompts, Some(&eval_attack), 0).unwrap();
            let path = PathBuf::from(format!("/tmp/pre_seed{seed}.tgac"));
            checkpoint_save(&model, &path).unwrap();
            eprintln!("seed={seed} pretrain clean={clean:.3} robust={robust:.3}");
        }
        return;
    }

    // finetune sweep: finetune <epochs> <batch> <lr> <train_eps_num> <train_step_num>
    let epochs: usize = args[2].parse().unwrap();
    let batch: usize = args[3].parse().unwrap();
    let lr: f32 = args[4].parse().unwrap();
    let eps_num: f32 = args[5].parse().unwrap();
    let step_num: f32 = args[6].parse().unwrap();
    let alpha: f32 = args.get(7).map(|s| s.parse().unwrap()).unwrap_or(0.10);
    let beta: f32 = args.get(8).map(|s| s.parse().unwrap()).unwrap_or(0.10);
    let momentum: f32 = args.get(9).map(|s| s.parse().unwrap()).unwrap_or(0.9);
    let mut gains = Vec::new();
    let mut drops = Vec::new();
    for seed in [1u64, 2, 3] {
        let (train, test) = data_for(seed);
        let mut model = checkpoint_load(&PathBuf::from(format!("/tmp/pre_seed{seed}.tgac"))).unwrap();
        tga::encoders::pretrain_negation(&mut model, &train, &prompts, 80, 32, 0.05).unwrap();
        let model = model;
        let clean_before = zero_shot_accuracy(&model, &test, &prompts, None, 0).unwrap();
        let robust_before = zero_shot_accuracy(&model, &test, &prompts, Some(&eval_attack), 0).unwrap();
        let mut pair = ModelPair::from_pretrained(&model);
        let train_cfg = TrainConfig {
            epochs,
            batch_size: batch,
            lr,
            momentum,
            weight_decay: 0.0,
            attack: AttackConfig {
                epsilon: eps_num / 255.0,
                step_size: step_num / 255.0,
                iterations: 2,
                ..eval_attack.clone()
            },
            weights: LossWeights { alpha, beta, method: AttentionMethod::CompTga },
            seed,
        };
        finetune_adversarial(&mut pair, &train, &prompts, &train_cfg).unwrap();
        let clean_after = zero_shot_accuracy(&pair.target, &test, &prompts, None, 0).unwrap();
        let robust_after = zero_shot_accuracy(&pair.target, &test, &prompts, Some(&eval_attack), 0).unwrap();
        eprintln!(
            "seed={seed} clean {clean_before:.3}->{clean_after:.3} robust {robust_before:.3}->{robust_after:.3}"
        );
        {
            use tga::attention::{attention_for_example, AttentionMethod, InputKind, ModelSource};
            use tga::evalkit::{attention_shift, soft_iou};
            let sample = &test[..50];
            for method in [AttentionMethod::Tga, AttentionMethod::CompTga] {
                let shift_pre = attention_shift(&model, sample, &prompts, &eval_attack, method, 0).unwrap();
                let shift_post = attention_shift(&pair.target, sample, &prompts, &eval_attack, method, 0).unwrap();
                eprintln!("  shift[{}]: undefended {shift_pre:.4} vs tuned {shift_post:.4}", method.name());
            }
            let mut iou_tga = 0.0;
            let mut iou_comp = 0.0;
            for ex in sample {
                let tuned_pair = &pair;
                let m_tga = attention_for_example(tuned_pair, &ex.image, ex.label, &prompts, AttentionMethod::Tga, ModelSource::TargetModel, InputKind::Clean).unwrap();
                let m_comp = attention_for_example(tuned_pair, &ex.image, ex.label, &prompts, AttentionMethod::CompTga, ModelSource::TargetModel, InputKind::Clean).unwrap();
                iou_tga += soft_iou(&m_tga, &ex.mask).unwrap();
                iou_comp += soft_iou(&m_comp, &ex.mask).unwrap();
            }
            eprintln!("  soft_iou on tuned model: tga {:.4} comp {:.4}", iou_tga / 50.0, iou_comp / 50.0);
        }
        gains.push((robust_after - robust_before) * 100.0);
        drops.push((clean_before - clean_after) * 100.0);
    }
    let mg: f64 = gains.iter().sum::<f64>() / 3.0;
    let md: f64 = drops.iter().sum::<f64>() / 3.0;
    eprintln!("mean gain {mg:+.1} pts, mean drop {md:+.1} pts");
}
