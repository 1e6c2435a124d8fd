//! Command-line entry points tying the pipeline together:
//! `gen-data` → `pretrain` → `finetune` → `eval`, plus `attack`, `attn`, and
//! `gradcheck` utilities.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::attacks::AttackConfig;
use crate::attention::{attention_for_example, InputKind, ModelSource};
use crate::encoders::{pretrain_clean, DualEncoder, ModelPair, PromptSet};
use crate::error::{Error, Result};
use crate::evalkit::{self, gen_synthetic, DatasetSpec, Example};
use crate::io::{self, RunConfig};
use crate::objectives::{finetune_adversarial, BatchTrace};

#[derive(Parser)]
#[command(
    name = "tga",
    about = "Adversarial fine-tuning of a toy dual encoder with text-guided attention"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct CommonArgs {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides the config's `output`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed override.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct ModelArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Checkpoint to start from (defaults to pretrained.tgac in the output
    /// directory).
    #[arg(long)]
    model: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Checkpoint to evaluate (defaults to finetuned.tgac, falling back to
    /// pretrained.tgac).
    #[arg(long)]
    model: Option<PathBuf>,
    /// Restrict to one configured eval attack by name.
    #[arg(long)]
    attack: Option<String>,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Optional config; only the seed is consulted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write train.tgad and test.tgad from the dataset spec.
    GenData(CommonArgs),
    /// Clean contrastive pre-training; writes pretrained.tgac.
    Pretrain(CommonArgs),
    /// Adversarial fine-tuning; writes finetuned.tgac and a loss trace.
    Finetune(ModelArgs),
    /// Clean/robust metrics over every configured attack; writes metrics.csv.
    Eval(EvalArgs),
    /// Adversarial images and per-iteration objective traces for a sample of
    /// test examples.
    Attack(EvalArgs),
    /// Export the four attention-map families (clean/adv x original/target).
    Attn(EvalArgs),
    /// Gradient checks of the op catalog and the full training objective.
    Gradcheck(GradcheckArgs),
}

/// Run the CLI; returns the process exit status.
pub fn run(argv: impl Iterator<Item = String>) -> i32 {
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            // Help/version exit 0, usage errors exit 2 (clap convention).
            let _ = e.print();
            return e.exit_code();
        }
    };
    let outcome = match cli.cmd {
        Cmd::GenData(a) => cmd_gen_data(&a),
        Cmd::Pretrain(a) => cmd_pretrain(&a),
        Cmd::Finetune(a) => cmd_finetune(&a),
        Cmd::Eval(a) => cmd_eval(&a),
        Cmd::Attack(a) => cmd_attack(&a),
        Cmd::Attn(a) => cmd_attn(&a),
        Cmd::Gradcheck(a) => cmd_gradcheck(&a),
    };
    match outcome {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn load(common: &CommonArgs) -> Result<RunConfig> {
    let mut cfg = io::load_config_with_seed(&common.config, common.seed)?;
    if let Some(out) = &common.out {
        cfg.output = out.clone();
    }
    std::fs::create_dir_all(&cfg.output).map_err(|e| Error::io(&cfg.output, e))?;
    Ok(cfg)
}

fn prompts_for(cfg: &RunConfig) -> Result<PromptSet> {
    let names: Vec<&str> = cfg.dataset.classes.iter().map(|c| c.name()).collect();
    PromptSet::new(&names)
}

fn train_path(cfg: &RunConfig) -> PathBuf {
    cfg.output.join("train.tgad")
}

fn test_path(cfg: &RunConfig) -> PathBuf {
    cfg.output.join("test.tgad")
}

fn pretrained_path(cfg: &RunConfig) -> PathBuf {
    cfg.output.join("pretrained.tgac")
}

fn finetuned_path(cfg: &RunConfig) -> PathBuf {
    cfg.output.join("finetuned.tgac")
}

/// Held-out test set: two fifths of n (the 500-train / 200-test default
/// split), from a seed fanned out of the dataset seed.
fn test_spec(cfg: &RunConfig) -> DatasetSpec {
    DatasetSpec {
        seed: io::subseed(cfg.dataset.seed, "test"),
        n: ((cfg.dataset.n * 2) / 5).max(1),
        ..cfg.dataset.clone()
    }
}

fn cmd_gen_data(args: &CommonArgs) -> Result<()> {
    let cfg = load(args)?;
    let train = gen_synthetic(&cfg.dataset)?;
    io::dataset_save(&train, &train_path(&cfg))?;
    let test = gen_synthetic(&test_spec(&cfg))?;
    io::dataset_save(&test, &test_path(&cfg))?;
    println!(
        "wrote {} train and {} test examples to {}",
        train.len(),
        test.len(),
        cfg.output.display()
    );
    Ok(())
}

fn load_dataset(path: &Path) -> Result<Vec<Example>> {
    io::dataset_load(path)
}

fn cmd_pretrain(args: &CommonArgs) -> Result<()> {
    let cfg = load(args)?;
    let data = load_dataset(&train_path(&cfg))?;
    let prompts = prompts_for(&cfg)?;
    let mut model = DualEncoder::init(cfg.encoder)?;
    let report = pretrain_clean(
        &mut model,
        &data,
        &prompts,
        cfg.pretrain.epochs,
        cfg.pretrain.batch_size,
        cfg.pretrain.lr,
    )?;
    io::checkpoint_save(&model, &pretrained_path(&cfg))?;
    let trace: Vec<BatchTrace> = report
        .per_epoch_loss
        .iter()
        .enumerate()
        .map(|(epoch, &loss)| BatchTrace {
            epoch,
            batch: 0,
            ce: loss,
            larm: 0.0,
            gacm: 0.0,
            total: loss,
        })
        .collect();
    io::write_loss_trace(&trace, &cfg.output.join("pretrain_loss.csv"))?;
    println!(
        "pretrained {} epochs: mean CE {} -> {}",
        cfg.pretrain.epochs, report.initial_loss, report.final_loss
    );
    Ok(())
}

fn cmd_finetune(args: &ModelArgs) -> Result<()> {
    let cfg = load(&args.common)?;
    let data = load_dataset(&train_path(&cfg))?;
    let prompts = prompts_for(&cfg)?;
    let start = args
        .model
        .clone()
        .unwrap_or_else(|| pretrained_path(&cfg));
    let pretrained = io::checkpoint_load(&start)?;
    let mut pair = ModelPair::from_pretrained(&pretrained);
    let traces = finetune_adversarial(&mut pair, &data, &prompts, &cfg.train)?;
    io::checkpoint_save(&pair.target, &finetuned_path(&cfg))?;
    io::write_loss_trace(&traces, &cfg.output.join("finetune_loss.csv"))?;
    if let Some(last) = traces.last() {
        println!(
            "finetuned {} epochs ({} method): final total loss {}",
            cfg.train.epochs,
            cfg.method.name(),
            last.total
        );
    }
    Ok(())
}

/// Original (pretrained) model plus the checkpoint under evaluation.
fn load_pair(cfg: &RunConfig, model_flag: &Option<PathBuf>) -> Result<ModelPair> {
    let original = io::checkpoint_load(&pretrained_path(cfg))?;
    let target_path = match model_flag {
        Some(p) => p.clone(),
        None => {
            let finetuned = finetuned_path(cfg);
            if finetuned.exists() {
                finetuned
            } else {
                pretrained_path(cfg)
            }
        }
    };
    let target = io::checkpoint_load(&target_path)?;
    let mut pair = ModelPair::from_pretrained(&original);
    pair.target = target;
    Ok(pair)
}

fn selected_attacks(
    cfg: &RunConfig,
    which: &Option<String>,
) -> Result<Vec<(String, AttackConfig)>> {
    match which {
        None => Ok(cfg.eval_attacks.clone()),
        Some(name) => cfg
            .eval_attacks
            .iter()
            .find(|(n, _)| n == name)
            .cloned()
            .map(|pair| vec![pair])
            .ok_or_else(|| Error::Config {
                reason: format!(
                    "no eval_attack named {name:?} (configured: {})",
                    cfg.eval_attacks
                        .iter()
                        .map(|(n, _)| n.as_str())
                        .collect::<Vec<_>>()
                        .join(", ")
                ),
            }),
    }
}

fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let cfg = load(&args.common)?;
    let data = load_dataset(&test_path(&cfg))?;
    let prompts = prompts_for(&cfg)?;
    let pair = load_pair(&cfg, &args.model)?;
    let mut rows = Vec::new();
    for (name, attack) in selected_attacks(&cfg, &args.attack)? {
        let report = evalkit::evaluate(&pair, &data, &prompts, &attack, cfg.method, cfg.seed)?;
        println!(
            "{name}: a_clean={:.4} a_robust={:.4} a_overall={:.4} soft_iou(clean/adv)={:.4}/{:.4} shift={:.4}",
            report.a_clean,
            report.a_robust,
            report.a_overall,
            report.mean_soft_iou_clean,
            report.mean_soft_iou_adv,
            report.mean_attention_shift
        );
        rows.push(("target".to_string(), name, report));
    }
    io::write_metrics_csv(&rows, &io::config_echo(&cfg), &cfg.output.join("metrics.csv"))?;
    Ok(())
}

fn cmd_attack(args: &EvalArgs) -> Result<()> {
    let cfg = load(&args.common)?;
    let data = load_dataset(&test_path(&cfg))?;
    let prompts = prompts_for(&cfg)?;
    let pair = load_pair(&cfg, &args.model)?;
    let attacks = selected_attacks(&cfg, &args.attack)?;
    let (name, attack) = &attacks[0];
    let sample = data.iter().take(8).cloned().collect::<Vec<_>>();
    let mut adv = Vec::with_capacity(sample.len());
    let mut trace_rows = Vec::new();
    for (i, ex) in sample.iter().enumerate() {
        let (xa, trace) = crate::attacks::attack_with_trace(
            &pair,
            &ex.image,
            &prompts,
            ex.label,
            attack,
            cfg.seed.wrapping_add(i as u64),
        )?;
        for (it, v) in trace.iter().enumerate() {
            trace_rows.push((i, it, *v));
        }
        adv.push(Example {
            image: xa,
            label: ex.label,
            mask: ex.mask.clone(),
        });
    }
    io::dataset_save(&adv, &cfg.output.join("adv.tgad"))?;
    io::write_attack_trace(&trace_rows, &cfg.output.join("attack_trace.csv"))?;
    println!(
        "attacked {} examples with {name}; wrote adv.tgad and attack_trace.csv",
        adv.len()
    );
    Ok(())
}

fn cmd_attn(args: &EvalArgs) -> Result<()> {
    let cfg = load(&args.common)?;
    let data = load_dataset(&test_path(&cfg))?;
    let prompts = prompts_for(&cfg)?;
    let pair = load_pair(&cfg, &args.model)?;
    let attacks = selected_attacks(&cfg, &args.attack)?;
    let (_, attack) = &attacks[0];
    let dir = cfg.output.join("attn");
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    for (i, ex) in data.iter().take(4).enumerate() {
        let xa = crate::attacks::run_attack(
            &pair.target,
            Some(&pair.original),
            &ex.image,
            &prompts,
            ex.label,
            attack,
            cfg.seed.wrapping_add(i as u64),
        )?;
        let variants = [
            ("clean_original", &ex.image, ModelSource::OriginalModel, InputKind::Clean),
            ("clean_target", &ex.image, ModelSource::TargetModel, InputKind::Clean),
            ("adv_original", &xa, ModelSource::OriginalModel, InputKind::Adversarial),
            ("adv_target", &xa, ModelSource::TargetModel, InputKind::Adversarial),
        ];
        for (tag, image, source, input_kind) in variants {
            let map = attention_for_example(
                &pair, image, ex.label, &prompts, cfg.method, source, input_kind,
            )?;
            io::export_attention(&map, &dir.join(format!("ex{i}_{tag}.pgm")))?;
        }
    }
    println!("wrote attention maps to {}", dir.display());
    Ok(())
}

fn cmd_gradcheck(args: &GradcheckArgs) -> Result<()> {
    let seed = match (&args.config, args.seed) {
        (_, Some(seed)) => seed,
        (Some(path), None) => io::load_config(path)?.seed,
        (None, None) => 42,
    };
    let mut max_err = 0.0f32;
    for report in crate::diag::op_catalog_gradcheck(seed)? {
        println!("op {:<16} max_err {:.3e}", report.name, report.max_err);
        max_err = max_err.max(report.max_err);
    }
    let obj_err = crate::diag::objective_gradcheck(25, seed)?;
    println!("objective        max_err {obj_err:.3e}");
    max_err = max_err.max(obj_err);
    println!("overall          max_err {max_err:.3e}");
    if max_err < 1e-3 {
        Ok(())
    } else {
        Err(Error::NonFinite {
            context: format!("gradient check failed: max error {max_err} >= 1e-3"),
        })
    }
}
