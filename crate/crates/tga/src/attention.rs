//! Text-guided attention maps: per-patch dot products against a prompt
//! embedding, reshaped to the patch grid, bilinearly resized to image
//! resolution, and min-max normalized to [0,1]. The complementary variant
//! fuses the class map with the inverted non-class map.

use crate::encoders::{encode_image_graph, encode_text_graph, DualEncoder, ModelPair, PromptSet};
use crate::error::{Error, Result};
use crate::tensor::{Graph, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttentionKind {
    Class,
    NonClass,
    Complementary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelSource {
    OriginalModel,
    TargetModel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputKind {
    Clean,
    Adversarial,
}

/// Which attention construction a pipeline stage uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttentionMethod {
    Tga,
    CompTga,
}

impl AttentionMethod {
    pub fn name(&self) -> &'static str {
        match self {
            AttentionMethod::Tga => "tga",
            AttentionMethod::CompTga => "comp_tga",
        }
    }
}

/// Caller-supplied provenance for a map under construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MapTags {
    pub class_id: usize,
    pub source: ModelSource,
    pub input_kind: InputKind,
}

impl MapTags {
    pub fn into_meta(self, kind: AttentionKind) -> MapMeta {
        MapMeta {
            class_id: self.class_id,
            kind,
            source: self.source,
            input_kind: self.input_kind,
        }
    }
}

/// Full provenance of a finished map.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MapMeta {
    pub class_id: usize,
    pub kind: AttentionKind,
    pub source: ModelSource,
    pub input_kind: InputKind,
}

/// A detached H x W attention map with values in [0,1].
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMap {
    grid: Tensor,
    meta: MapMeta,
}

impl AttentionMap {
    pub fn new(grid: Tensor, meta: MapMeta) -> Result<Self> {
        if grid.shape().len() != 2 {
            return Err(Error::ShapeMismatch {
                op: "attention_map",
                expected: "a 2-D grid".into(),
                got: format!("{:?}", grid.shape()),
            });
        }
        if grid.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Domain {
                op: "attention_map",
                reason: "grid values must lie in [0,1]".into(),
            });
        }
        Ok(AttentionMap { grid, meta })
    }

    pub fn grid(&self) -> &Tensor {
        &self.grid
    }

    pub fn meta(&self) -> &MapMeta {
        &self.meta
    }

    pub fn height(&self) -> usize {
        self.grid.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.grid.shape()[1]
    }
}

/// An attention map still attached to a graph, usable inside losses.
#[derive(Debug, Clone, Copy)]
pub struct GraphMap {
    pub var: Var,
    pub height: usize,
    pub width: usize,
    pub meta: MapMeta,
}

impl GraphMap {
    /// Snapshot the current values as a detached [`AttentionMap`].
    pub fn snapshot(&self, g: &Graph) -> Result<AttentionMap> {
        AttentionMap::new(
            Tensor::new(g.data(self.var).to_vec(), &[self.height, self.width])?,
            self.meta,
        )
    }

    /// Re-insert a detached map into a graph as a constant (no gradient).
    pub fn constant_in(g: &mut Graph, map: &AttentionMap) -> Result<GraphMap> {
        let var = g.constant(map.grid.data().to_vec(), map.grid.shape())?;
        Ok(GraphMap {
            var,
            height: map.height(),
            width: map.width(),
            meta: *map.meta(),
        })
    }
}

fn integer_sqrt(p: usize) -> Option<usize> {
    let s = (p as f64).sqrt().round() as usize;
    (s * s == p).then_some(s)
}

/// The shared pipeline: raw = f_g . g_t^T (P x 1), reshape to sqrt(P) x
/// sqrt(P) in raster order, bilinear-resize to the output size, min-max
/// normalize. Differentiable end to end.
fn attention_pipeline(
    g: &mut Graph,
    f_g: Var,
    text_emb: Var,
    out_h: usize,
    out_w: usize,
) -> Result<Var> {
    let fs = g.shape(f_g).to_vec();
    let ts = g.shape(text_emb).to_vec();
    if fs.len() != 2 || ts.len() != 1 || fs[1] != ts[0] {
        return Err(Error::ShapeMismatch {
            op: "text_guided_attention",
            expected: "[P,d] features and [d] prompt embedding".into(),
            got: format!("{fs:?} and {ts:?}"),
        });
    }
    let p = fs[0];
    let side = integer_sqrt(p).ok_or(Error::Domain {
        op: "text_guided_attention",
        reason: format!("patch count {p} is not a perfect square"),
    })?;
    let d = ts[0];
    let col = g.reshape(text_emb, &[d, 1])?;
    let raw = g.matmul(f_g, col)?;
    let square = g.reshape(raw, &[side, side])?;
    let resized = g.bilinear_resize(square, out_h, out_w)?;
    Ok(g.minmax_norm(resized))
}

/// Class attention from per-patch features and a class-prompt embedding.
pub fn tga_map_graph(
    g: &mut Graph,
    f_g: Var,
    class_emb: Var,
    out_h: usize,
    out_w: usize,
    tags: MapTags,
) -> Result<GraphMap> {
    let var = attention_pipeline(g, f_g, class_emb, out_h, out_w)?;
    Ok(GraphMap {
        var,
        height: out_h,
        width: out_w,
        meta: tags.into_meta(AttentionKind::Class),
    })
}

/// Non-class attention: the same pipeline driven by the negated prompt.
pub fn non_class_map_graph(
    g: &mut Graph,
    f_g: Var,
    non_class_emb: Var,
    out_h: usize,
    out_w: usize,
    tags: MapTags,
) -> Result<GraphMap> {
    let var = attention_pipeline(g, f_g, non_class_emb, out_h, out_w)?;
    Ok(GraphMap {
        var,
        height: out_h,
        width: out_w,
        meta: tags.into_meta(AttentionKind::NonClass),
    })
}

/// Complementary fusion: class map Hadamard the inverted non-class map.
pub fn complementary_map_graph(
    g: &mut Graph,
    class_map: &GraphMap,
    non_class_map: &GraphMap,
) -> Result<GraphMap> {
    if class_map.meta.kind != AttentionKind::Class
        || non_class_map.meta.kind != AttentionKind::NonClass
    {
        return Err(Error::TagMismatch {
            reason: format!(
                "fusion needs (class, non_class) maps, got ({:?}, {:?})",
                class_map.meta.kind, non_class_map.meta.kind
            ),
        });
    }
    if class_map.meta.source != non_class_map.meta.source
        || class_map.meta.input_kind != non_class_map.meta.input_kind
    {
        return Err(Error::TagMismatch {
            reason: "fusion operands must share source and input kind".into(),
        });
    }
    if (class_map.height, class_map.width) != (non_class_map.height, non_class_map.width) {
        return Err(Error::ShapeMismatch {
            op: "complementary_attention",
            expected: format!("{}x{}", class_map.height, class_map.width),
            got: format!("{}x{}", non_class_map.height, non_class_map.width),
        });
    }
    let ones = g.constant(
        vec![1.0f32; class_map.height * class_map.width],
        &[class_map.height, class_map.width],
    )?;
    let inverted = g.sub(ones, non_class_map.var)?;
    let fused = g.hadamard(class_map.var, inverted)?;
    Ok(GraphMap {
        var: fused,
        height: class_map.height,
        width: class_map.width,
        meta: MapMeta {
            class_id: class_map.meta.class_id,
            kind: AttentionKind::Complementary,
            source: class_map.meta.source,
            input_kind: class_map.meta.input_kind,
        },
    })
}

/// The configured method's map: plain class attention, or complementary
/// fusion when a non-class embedding is supplied.
pub fn method_map_graph(
    g: &mut Graph,
    f_g: Var,
    class_emb: Var,
    non_class_emb: Option<Var>,
    method: AttentionMethod,
    out_h: usize,
    out_w: usize,
    tags: MapTags,
) -> Result<GraphMap> {
    let class_map = tga_map_graph(g, f_g, class_emb, out_h, out_w, tags)?;
    match method {
        AttentionMethod::Tga => Ok(class_map),
        AttentionMethod::CompTga => {
            let non_emb = non_class_emb.ok_or(Error::Domain {
                op: "method_map_graph",
                reason: "complementary method requires a non-class embedding".into(),
            })?;
            let non_map = non_class_map_graph(g, f_g, non_emb, out_h, out_w, tags)?;
            complementary_map_graph(g, &class_map, &non_map)
        }
    }
}

/// Detached class-attention map from raw features and a prompt embedding.
pub fn text_guided_attention(
    f_g: &Tensor,
    g_t: &Tensor,
    out_h: usize,
    out_w: usize,
    tags: MapTags,
) -> Result<AttentionMap> {
    let mut g = Graph::new();
    let f = g.leaf(Tensor::new(f_g.data().to_vec(), f_g.shape())?);
    let t = g.leaf(Tensor::new(g_t.data().to_vec(), g_t.shape())?);
    tga_map_graph(&mut g, f, t, out_h, out_w, tags)?.snapshot(&g)
}

/// Detached non-class attention map.
pub fn non_class_attention(
    f_g: &Tensor,
    g_t_non: &Tensor,
    out_h: usize,
    out_w: usize,
    tags: MapTags,
) -> Result<AttentionMap> {
    let mut g = Graph::new();
    let f = g.leaf(Tensor::new(f_g.data().to_vec(), f_g.shape())?);
    let t = g.leaf(Tensor::new(g_t_non.data().to_vec(), g_t_non.shape())?);
    non_class_map_graph(&mut g, f, t, out_h, out_w, tags)?.snapshot(&g)
}

/// Detached complementary fusion of two finished maps.
pub fn complementary_attention(a: &AttentionMap, a_non: &AttentionMap) -> Result<AttentionMap> {
    let mut g = Graph::new();
    let class_map = GraphMap::constant_in(&mut g, a)?;
    let non_map = GraphMap::constant_in(&mut g, a_non)?;
    complementary_map_graph(&mut g, &class_map, &non_map)?.snapshot(&g)
}

/// The ground-truth-class attention map for one example, routed through the
/// requested model of the pair, detached from any graph.
pub fn attention_for_example(
    pair: &ModelPair,
    x: &Tensor,
    label: usize,
    prompts: &PromptSet,
    method: AttentionMethod,
    source: ModelSource,
    input_kind: InputKind,
) -> Result<AttentionMap> {
    let model = match source {
        ModelSource::OriginalModel => &pair.original,
        ModelSource::TargetModel => &pair.target,
    };
    map_for_model(model, x, label, prompts, method, source, input_kind)
}

/// Single-model variant of [`attention_for_example`].
pub(crate) fn map_for_model(
    model: &DualEncoder,
    x: &Tensor,
    label: usize,
    prompts: &PromptSet,
    method: AttentionMethod,
    source: ModelSource,
    input_kind: InputKind,
) -> Result<AttentionMap> {
    if label >= prompts.num_classes() {
        return Err(Error::LabelOutOfRange {
            label,
            classes: prompts.num_classes(),
        });
    }
    let cfg = model.config();
    let mut g = Graph::new();
    let xv = g.leaf(Tensor::new(x.data().to_vec(), x.shape())?);
    let bound = model.bind(&mut g, false);
    let (f_g, _f) = encode_image_graph(&mut g, &bound, xv)?;
    let class_emb = encode_text_graph(&mut g, &bound, prompts.class_prompt(label))?;
    let non_emb = match method {
        AttentionMethod::Tga => None,
        AttentionMethod::CompTga => Some(encode_text_graph(
            &mut g,
            &bound,
            prompts.non_class_prompt(label),
        )?),
    };
    let tags = MapTags {
        class_id: label,
        source,
        input_kind,
    };
    method_map_graph(
        &mut g,
        f_g,
        class_emb,
        non_emb,
        method,
        cfg.height,
        cfg.width,
        tags,
    )?
    .snapshot(&g)
}
