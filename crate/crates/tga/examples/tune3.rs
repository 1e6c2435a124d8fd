// Scratch diagnostic: are maps along the dataset-mean feature direction
// (and its negation) object- or background-keyed?
use std::path::PathBuf;
use tga::attention::{InputKind, MapTags, ModelSource};
use tga::encoders::PromptSet;
use tga::evalkit::{gen_synthetic, soft_iou, DatasetSpec, ShapeKind};
use tga::io::checkpoint_load;
use tga::tensor::Tensor;

fn main() {
    let classes = vec![
        ShapeKind::Disk,
        ShapeKind::Square,
        ShapeKind::Triangle,
        ShapeKind::Cross,
    ];
    let _prompts = PromptSet::new(&["disk", "square", "triangle", "cross"]).unwrap();
    let tags = MapTags { class_id: 0, source: ModelSource::TargetModel, input_kind: InputKind::Clean };
    for seed in [1u64, 2, 3] {
        let spec = DatasetSpec {
            seed: seed * 100,
            n: 200,
            classes: classes.clone(),
            noise: 0.1,
            channels: 3,
            height: 32,
            width: 32,
        };
        let test = gen_synthetic(&DatasetSpec { seed: seed * 100 + 1, ..spec.clone() }).unwrap();
        let model = checkpoint_load(&PathBuf::from(format!("/tmp/pre_seed{seed}.tgac"))).unwrap();
        let d = model.config().embed_dim;
        // Dataset-mean pooled embedding direction.
        let mut u1 = vec![0.0f32; d];
        for ex in &test {
            let (_fg, f) = model.encode_image(&ex.image).unwrap();
            for (a, b) in u1.iter_mut().zip(f.data()) {
                *a += b;
            }
        }
        let norm: f32 = u1.iter().map(|v| v * v).sum::<f32>().sqrt();
        for v in &mut u1 {
            *v /= norm;
        }
        let neg_u1: Vec<f32> = u1.iter().map(|v| -v).collect();

        for (name, dir) in [("+u1", &u1), ("-u1", &neg_u1)] {
            let (mut m_obj, mut m_bg, mut iou) = (0.0f64, 0.0, 0.0);
            for ex in test.iter().take(50) {
                let (f_g, _f) = model.encode_image(&ex.image).unwrap();
                let emb = Tensor::new(dir.clone(), &[d]).unwrap();
                let map = tga::attention::text_guided_attention(&f_g, &emb, 32, 32, tags).unwrap();
                let (mut mo, mut mb) = (0.0f64, 0.0);
                let (mut so, mut sb) = (0usize, 0usize);
                for (i, &m) in ex.mask.iter().enumerate() {
                    if m == 1 {
                        mo += map.grid().data()[i] as f64;
                        so += 1;
                    } else {
                        mb += map.grid().data()[i] as f64;
                        sb += 1;
                    }
                }
                m_obj += mo / so as f64;
                m_bg += mb / sb as f64;
                iou += soft_iou(&map, &ex.mask).unwrap();
            }
            eprintln!(
                "seed={seed} dir={name}: obj {:.3} bg {:.3} iou {:.3}",
                m_obj / 50.0,
                m_bg / 50.0,
                iou / 50.0
            );
        }
    }
}
