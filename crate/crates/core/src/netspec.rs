//! Declarative network architectures.
//!
//! A [`NetworkSpec`] is an ordered list of layers. Convolution and skip
//! layers carry kernel/channel counts and are the only layers a learngene
//! can own; pool and fully-connected layers are structural. The
//! classification head is implicit: the last feature map is flattened and
//! fed to a dense layer with `head_classes` outputs.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::genome::LearngeneStructure;

pub const SPEC_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Conv,
    Pool,
    FullyConnected,
    SkipConnection,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolKind {
    /// 2×2 window, stride 2, floor on odd sizes.
    Max2x2,
    GlobalAvg,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Spatial {
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: usize,
}

impl Spatial {
    pub const fn same3x3() -> Self {
        Spatial {
            kernel_h: 3,
            kernel_w: 3,
            stride: 1,
            padding: 1,
        }
    }

    pub const fn pointwise(stride: usize) -> Self {
        Spatial {
            kernel_h: 1,
            kernel_w: 1,
            stride,
            padding: 0,
        }
    }

    pub fn area(&self) -> usize {
        self.kernel_h * self.kernel_w
    }

    fn output_hw(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        if self.stride == 0 {
            return None;
        }
        let ph = h + 2 * self.padding;
        let pw = w + 2 * self.padding;
        if ph < self.kernel_h || pw < self.kernel_w {
            return None;
        }
        Some((
            (ph - self.kernel_h) / self.stride + 1,
            (pw - self.kernel_w) / self.stride + 1,
        ))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SkipEndpoints {
    pub source: usize,
    pub target: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub layer_id: usize,
    pub kind: LayerKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel_count: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub channel_count: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spatial: Option<Spatial>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub skip_endpoints: Option<SkipEndpoints>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pool: Option<PoolKind>,
    /// Output width of a hidden fully-connected layer.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub units: Option<usize>,
    /// ReLU after the layer (conv and hidden fully-connected only).
    #[serde(default)]
    pub relu: bool,
}

impl LayerSpec {
    pub fn conv(layer_id: usize, kernels: usize, channels: usize, spatial: Spatial) -> Self {
        LayerSpec {
            layer_id,
            kind: LayerKind::Conv,
            kernel_count: Some(kernels),
            channel_count: Some(channels),
            spatial: Some(spatial),
            skip_endpoints: None,
            pool: None,
            units: None,
            relu: true,
        }
    }

    pub fn pool(layer_id: usize, pool: PoolKind) -> Self {
        LayerSpec {
            layer_id,
            kind: LayerKind::Pool,
            kernel_count: None,
            channel_count: None,
            spatial: None,
            skip_endpoints: None,
            pool: Some(pool),
            units: None,
            relu: false,
        }
    }

    pub fn fully_connected(layer_id: usize, units: usize) -> Self {
        LayerSpec {
            layer_id,
            kind: LayerKind::FullyConnected,
            kernel_count: None,
            channel_count: None,
            spatial: None,
            skip_endpoints: None,
            pool: None,
            units: Some(units),
            relu: true,
        }
    }

    pub fn skip(
        layer_id: usize,
        source: usize,
        target: usize,
        kernels: usize,
        channels: usize,
        stride: usize,
    ) -> Self {
        LayerSpec {
            layer_id,
            kind: LayerKind::SkipConnection,
            kernel_count: Some(kernels),
            channel_count: Some(channels),
            spatial: Some(Spatial::pointwise(stride)),
            skip_endpoints: Some(SkipEndpoints { source, target }),
            pool: None,
            units: None,
            relu: false,
        }
    }

    /// True for layers that own kernels (conv and skip).
    pub fn is_kernel_layer(&self) -> bool {
        matches!(self.kind, LayerKind::Conv | LayerKind::SkipConnection)
    }

    pub fn kernels(&self) -> usize {
        self.kernel_count.unwrap_or(0)
    }

    pub fn channels(&self) -> usize {
        self.channel_count.unwrap_or(0)
    }

    /// Weight count of a kernel layer (`n_K · n_C · kh · kw`), zero otherwise.
    pub fn weight_count(&self) -> usize {
        match (self.is_kernel_layer(), self.spatial) {
            (true, Some(s)) => self.kernels() * self.channels() * s.area(),
            _ => 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub name: String,
    pub layers: Vec<LayerSpec>,
    /// `(channels, height, width)`.
    pub input_shape: [usize; 3],
    pub head_classes: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub layer_id: usize,
    pub reason: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "layer {}: {}", self.layer_id, self.reason)
    }
}

/// Versioned JSON envelope for a spec.
#[derive(Serialize, Deserialize)]
struct SpecDocument {
    format_version: u32,
    spec: NetworkSpec,
}

impl NetworkSpec {
    pub fn layer(&self, layer_id: usize) -> Option<&LayerSpec> {
        self.layers.iter().find(|l| l.layer_id == layer_id)
    }

    pub fn position(&self, layer_id: usize) -> Option<usize> {
        self.layers.iter().position(|l| l.layer_id == layer_id)
    }

    /// Main-path conv layers in forward order.
    pub fn conv_layers(&self) -> impl Iterator<Item = &LayerSpec> {
        self.layers.iter().filter(|l| l.kind == LayerKind::Conv)
    }

    pub fn conv_ids(&self) -> Vec<usize> {
        self.conv_layers().map(|l| l.layer_id).collect()
    }

    pub fn skip_layers(&self) -> impl Iterator<Item = &LayerSpec> {
        self.layers
            .iter()
            .filter(|l| l.kind == LayerKind::SkipConnection)
    }

    pub fn kernel_layers(&self) -> impl Iterator<Item = &LayerSpec> {
        self.layers.iter().filter(|l| l.is_kernel_layer())
    }

    /// Kernel counts of the main-path conv layers.
    pub fn widths(&self) -> Vec<usize> {
        self.conv_layers().map(|l| l.kernels()).collect()
    }

    pub fn depth(&self) -> usize {
        self.conv_layers().count()
    }

    /// Total conv + skip weights; biases and the head are excluded.
    pub fn kernel_weight_count(&self) -> usize {
        self.kernel_layers().map(LayerSpec::weight_count).sum()
    }

    pub fn with_head_classes(&self, classes: usize) -> NetworkSpec {
        NetworkSpec {
            head_classes: classes,
            ..self.clone()
        }
    }

    /// Rewrites every kernel/channel count by mapping main-path widths
    /// through `f`; skip layers follow their endpoints.
    pub fn map_widths(&self, name: &str, f: impl Fn(usize) -> usize) -> NetworkSpec {
        let mut out = self.clone();
        out.name = name.to_string();
        let mut prev = self.input_shape[0];
        for layer in out.layers.iter_mut() {
            if layer.kind == LayerKind::Conv {
                let k = f(layer.kernels()).max(1);
                layer.channel_count = Some(prev);
                layer.kernel_count = Some(k);
                prev = k;
            } else if layer.kind == LayerKind::FullyConnected {
                if let Some(u) = layer.units {
                    layer.units = Some(f(u).max(1));
                }
            }
        }
        let kernels: Vec<(usize, usize)> = out
            .conv_layers()
            .map(|l| (l.layer_id, l.kernels()))
            .collect();
        let width_of = |id: usize| kernels.iter().find(|(l, _)| *l == id).map(|(_, k)| *k);
        for layer in out.layers.iter_mut() {
            if let Some(ep) = layer.skip_endpoints {
                layer.kernel_count = width_of(ep.target).or(layer.kernel_count);
                layer.channel_count = width_of(ep.source).or(layer.channel_count);
            }
        }
        out
    }

    /// Sets main-path conv widths in forward order; channel counts and skip
    /// layers follow.
    pub fn with_widths(&self, name: &str, widths: &[usize]) -> Result<NetworkSpec> {
        if widths.len() != self.depth() {
            return Err(Error::InvalidSpec(format!(
                "{} widths given for {} conv layers",
                widths.len(),
                self.depth()
            )));
        }
        let mut out = self.clone();
        out.name = name.to_string();
        let mut prev = self.input_shape[0];
        let mut next = widths.iter();
        for layer in out.layers.iter_mut().filter(|l| l.kind == LayerKind::Conv) {
            let k = *next.next().unwrap();
            layer.channel_count = Some(prev);
            layer.kernel_count = Some(k);
            prev = k;
        }
        let kernels: Vec<(usize, usize)> = out.conv_layers().map(|l| (l.layer_id, l.kernels())).collect();
        let width_of = |id: usize| kernels.iter().find(|(l, _)| *l == id).map(|(_, k)| *k);
        for layer in out.layers.iter_mut() {
            if let Some(ep) = layer.skip_endpoints {
                layer.kernel_count = width_of(ep.target).or(layer.kernel_count);
                layer.channel_count = width_of(ep.source).or(layer.channel_count);
            }
        }
        Ok(out)
    }

    /// Output `(c, h, w)` of each layer along the forward pass, indexed like
    /// `layers`. Skip layers report the shape of their contribution.
    pub fn feature_shapes(&self) -> Result<Vec<[usize; 3]>> {
        let mut shapes = Vec::with_capacity(self.layers.len());
        let mut cur = self.input_shape;
        for layer in &self.layers {
            let shape = match layer.kind {
                LayerKind::Conv => {
                    let s = layer.spatial.ok_or_else(|| shape_err(layer, "missing spatial"))?;
                    let (h, w) = s
                        .output_hw(cur[1], cur[2])
                        .ok_or_else(|| shape_err(layer, "kernel larger than feature map"))?;
                    cur = [layer.kernels(), h, w];
                    cur
                }
                LayerKind::Pool => {
                    cur = match layer.pool {
                        Some(PoolKind::Max2x2) => {
                            if cur[1] < 2 || cur[2] < 2 {
                                return Err(shape_err(layer, "feature map too small to pool"));
                            }
                            [cur[0], cur[1] / 2, cur[2] / 2]
                        }
                        Some(PoolKind::GlobalAvg) => [cur[0], 1, 1],
                        None => return Err(shape_err(layer, "pool kind missing")),
                    };
                    cur
                }
                LayerKind::FullyConnected => {
                    let u = layer.units.ok_or_else(|| shape_err(layer, "units missing"))?;
                    cur = [u, 1, 1];
                    cur
                }
                LayerKind::SkipConnection => {
                    let ep = layer
                        .skip_endpoints
                        .ok_or_else(|| shape_err(layer, "skip endpoints missing"))?;
                    let target = self
                        .position(ep.target)
                        .ok_or_else(|| shape_err(layer, "skip target missing"))?;
                    let target_layer = &self.layers[target];
                    // filled in below once the target shape is known
                    [target_layer.kernels(), 0, 0]
                }
            };
            shapes.push(shape);
        }
        for (i, layer) in self.layers.iter().enumerate() {
            if let Some(ep) = layer.skip_endpoints {
                if let Some(t) = self.position(ep.target) {
                    shapes[i] = shapes[t];
                }
            }
        }
        Ok(shapes)
    }

    /// Number of inputs to the classification head.
    pub fn head_inputs(&self) -> Result<usize> {
        let shapes = self.feature_shapes()?;
        let last = self
            .layers
            .iter()
            .zip(&shapes)
            .filter(|(l, _)| l.kind != LayerKind::SkipConnection)
            .last()
            .map(|(_, s)| *s)
            .unwrap_or(self.input_shape);
        Ok(last.iter().product())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&SpecDocument {
            format_version: SPEC_FORMAT_VERSION,
            spec: self.clone(),
        })?)
    }

    pub fn from_json(text: &str) -> Result<NetworkSpec> {
        let doc: SpecDocument = serde_json::from_str(text)?;
        if doc.format_version != SPEC_FORMAT_VERSION {
            return Err(Error::VersionMismatch {
                found: doc.format_version,
                expected: SPEC_FORMAT_VERSION,
            });
        }
        Ok(doc.spec)
    }

    /// Validates and returns the spec, or the violations joined as an error.
    pub fn checked(self) -> Result<NetworkSpec> {
        let violations = validate_network_spec(&self);
        if violations.is_empty() {
            Ok(self)
        } else {
            Err(Error::InvalidSpec(join_violations(&violations)))
        }
    }
}

fn shape_err(layer: &LayerSpec, reason: &str) -> Error {
    Error::Shape {
        layer_id: layer.layer_id,
        reason: reason.to_string(),
    }
}

pub(crate) fn join_violations(v: &[Violation]) -> String {
    v.iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}

/// Every violated architectural invariant, ordered by layer id.
pub fn validate_network_spec(spec: &NetworkSpec) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |layer_id: usize, reason: String| out.push(Violation { layer_id, reason });

    if spec.input_shape.iter().any(|&d| d == 0) {
        push(0, "input shape has a zero dimension".into());
    }
    if spec.head_classes == 0 {
        push(0, "head_classes must be positive".into());
    }
    for (i, layer) in spec.layers.iter().enumerate() {
        if layer.layer_id != i + 1 {
            push(
                layer.layer_id,
                format!("layer ids must be 1..n in order; expected {}", i + 1),
            );
        }
    }

    // Main-path walk: channel alignment and feature-map sizes.
    let mut prev_kernels = spec.input_shape[0];
    let mut prev_conv: Option<usize> = None;
    let mut flattened = false;
    let mut hw = (spec.input_shape[1], spec.input_shape[2]);
    let mut conv_out_hw: Vec<(usize, (usize, usize))> = Vec::new();
    for layer in &spec.layers {
        let id = layer.layer_id;
        match layer.kind {
            LayerKind::Conv => {
                if flattened {
                    push(id, "conv layer after a flattening layer".into());
                }
                if layer.kernels() == 0 || layer.channels() == 0 {
                    push(id, "kernel_count and channel_count must be positive".into());
                }
                if layer.channels() != prev_kernels {
                    let from = match prev_conv {
                        Some(p) => format!("n_K of layer {p}"),
                        None => "input channels".to_string(),
                    };
                    push(
                        id,
                        format!(
                            "channel_count {} does not match {} ({})",
                            layer.channels(),
                            from,
                            prev_kernels
                        ),
                    );
                }
                match layer.spatial.and_then(|s| s.output_hw(hw.0, hw.1)) {
                    Some(next) => hw = next,
                    None => push(id, "missing spatial or kernel larger than feature map".into()),
                }
                if layer.skip_endpoints.is_some() || layer.pool.is_some() || layer.units.is_some() {
                    push(id, "conv layer carries fields of another layer kind".into());
                }
                conv_out_hw.push((id, hw));
                prev_kernels = layer.kernels();
                prev_conv = Some(id);
            }
            LayerKind::Pool => {
                if layer.kernel_count.is_some() || layer.channel_count.is_some() {
                    push(id, "pool layers carry no kernel or channel counts".into());
                }
                match layer.pool {
                    Some(PoolKind::Max2x2) => {
                        if hw.0 < 2 || hw.1 < 2 {
                            push(id, "feature map too small for 2x2 pooling".into());
                        }
                        hw = (hw.0 / 2, hw.1 / 2);
                    }
                    Some(PoolKind::GlobalAvg) => {
                        hw = (1, 1);
                        flattened = true;
                    }
                    None => push(id, "pool kind missing".into()),
                }
            }
            LayerKind::FullyConnected => {
                if layer.kernel_count.is_some() || layer.channel_count.is_some() {
                    push(id, "fully-connected layers carry no kernel or channel counts".into());
                }
                match layer.units {
                    Some(u) if u > 0 => prev_kernels = u,
                    _ => push(id, "fully-connected layer needs positive units".into()),
                }
                hw = (1, 1);
                flattened = true;
            }
            LayerKind::SkipConnection => {}
        }
    }

    for layer in spec.skip_layers() {
        let id = layer.layer_id;
        let Some(ep) = layer.skip_endpoints else {
            push(id, "skip connection without endpoints".into());
            continue;
        };
        let find = |lid: usize| {
            spec.layer(lid)
                .filter(|l| l.kind == LayerKind::Conv)
                .map(|l| l.kernels())
        };
        let (Some(src_k), Some(tgt_k)) = (find(ep.source), find(ep.target)) else {
            push(
                id,
                format!(
                    "skip endpoints ({}, {}) must both be main-path conv layers",
                    ep.source, ep.target
                ),
            );
            continue;
        };
        if ep.target <= ep.source {
            push(id, "skip target must come after its source".into());
        }
        if layer.kernels() != tgt_k {
            push(
                id,
                format!(
                    "skip kernel_count {} must equal n_K of target layer {} ({})",
                    layer.kernels(),
                    ep.target,
                    tgt_k
                ),
            );
        }
        if layer.channels() != src_k {
            push(
                id,
                format!(
                    "skip channel_count {} must equal n_K of source layer {} ({})",
                    layer.channels(),
                    ep.source,
                    src_k
                ),
            );
        }
        let hw_of = |lid: usize| conv_out_hw.iter().find(|(l, _)| *l == lid).map(|(_, s)| *s);
        match (layer.spatial, hw_of(ep.source), hw_of(ep.target)) {
            (Some(s), Some(src), Some(tgt)) => {
                if s.output_hw(src.0, src.1) != Some(tgt) {
                    push(
                        id,
                        format!(
                            "skip output {:?} does not match target feature map {:?}",
                            s.output_hw(src.0, src.1),
                            tgt
                        ),
                    );
                }
            }
            (None, _, _) => push(id, "skip connection missing spatial".into()),
            _ => {}
        }
    }

    out.sort_by_key(|v| v.layer_id);
    out
}

pub const BUILTIN_NAMES: [&str; 8] = [
    "mini-vgg-6",
    "mini-vgg-6-N",
    "mini-vgg-6-W",
    "mini-vgg-8",
    "mini-res-6",
    "mini-res-6-N",
    "mini-res-6-W",
    "mini-res-8",
];

const BASE_WIDTHS: [usize; 6] = [16, 32, 64, 64, 128, 128];
const DEEP_WIDTHS: [usize; 8] = [16, 32, 32, 64, 64, 64, 128, 128];
const INPUT_SHAPE: [usize; 3] = [3, 16, 16];
const DEFAULT_HEAD: usize = 10;

/// Desk-scale architectures. Pools follow conv positions listed in `pools`
/// (1-based main-path positions); skips are `(source, target)` positions.
fn assemble(
    name: &str,
    widths: &[usize],
    pools: &[usize],
    skips: &[(usize, usize)],
) -> NetworkSpec {
    let mut layers: Vec<LayerSpec> = Vec::new();
    let mut conv_id_at: Vec<usize> = Vec::new();
    let mut prev = INPUT_SHAPE[0];
    for (pos, &w) in widths.iter().enumerate() {
        let pos = pos + 1;
        let id = layers.len() + 1;
        layers.push(LayerSpec::conv(id, w, prev, Spatial::same3x3()));
        conv_id_at.push(id);
        prev = w;
        for &(s, t) in skips.iter().filter(|(_, t)| *t == pos) {
            let stride = 1 << pools.iter().filter(|&&p| p >= s && p < t).count();
            let id = layers.len() + 1;
            layers.push(LayerSpec::skip(
                id,
                conv_id_at[s - 1],
                conv_id_at[t - 1],
                w,
                widths[s - 1],
                stride,
            ));
        }
        if pools.contains(&pos) {
            let id = layers.len() + 1;
            layers.push(LayerSpec::pool(id, PoolKind::Max2x2));
        }
    }
    let id = layers.len() + 1;
    layers.push(LayerSpec::pool(id, PoolKind::GlobalAvg));
    NetworkSpec {
        name: name.to_string(),
        layers,
        input_shape: INPUT_SHAPE,
        head_classes: DEFAULT_HEAD,
    }
}

pub fn builtin_spec(name: &str) -> Result<NetworkSpec> {
    let narrow = |w: usize| w / 2;
    let wide = |w: usize| (w as f64 * 1.25).round() as usize;
    let vgg6 = || assemble("mini-vgg-6", &BASE_WIDTHS, &[2, 4], &[]);
    let res6 = || assemble("mini-res-6", &BASE_WIDTHS, &[2, 4], &[(2, 4), (4, 6)]);
    let spec = match name {
        "mini-vgg-6" => vgg6(),
        "mini-vgg-6-N" => vgg6().map_widths(name, narrow),
        "mini-vgg-6-W" => vgg6().map_widths(name, wide),
        "mini-vgg-8" => assemble(name, &DEEP_WIDTHS, &[3, 6], &[]),
        "mini-res-6" => res6(),
        "mini-res-6-N" => res6().map_widths(name, narrow),
        "mini-res-6-W" => res6().map_widths(name, wide),
        "mini-res-8" => assemble(name, &DEEP_WIDTHS, &[3, 6], &[(2, 5), (5, 8)]),
        _ => {
            return Err(Error::UnknownSpec {
                name: name.to_string(),
                valid: BUILTIN_NAMES.join(", "),
            })
        }
    };
    Ok(spec)
}

/// Fraction of conv + skip weights owned by the gene (head excluded).
pub fn parameter_fraction(structure: &LearngeneStructure, spec: &NetworkSpec) -> Result<f64> {
    let violations = crate::genome::validate_structure(structure, spec);
    if !violations.is_empty() {
        return Err(Error::InvalidStructure(join_violations(&violations)));
    }
    let total = spec.kernel_weight_count();
    if total == 0 {
        return Ok(0.0);
    }
    let owned: usize = structure
        .layers
        .iter()
        .map(|g| {
            let area = spec
                .layer(g.layer_id)
                .and_then(|l| l.spatial)
                .map(|s| s.area())
                .unwrap_or(0);
            g.kernels.len() * g.channels.len() * area
        })
        .sum();
    Ok(owned as f64 / total as f64)
}

/// Options for [`random_spec`].
#[derive(Clone, Copy, Debug)]
pub struct RandomSpecOptions {
    pub max_convs: usize,
    pub max_width: usize,
    pub input: [usize; 3],
    pub allow_skips: bool,
    pub allow_hidden_fc: bool,
}

impl Default for RandomSpecOptions {
    fn default() -> Self {
        RandomSpecOptions {
            max_convs: 5,
            max_width: 6,
            input: [2, 8, 8],
            allow_skips: true,
            allow_hidden_fc: true,
        }
    }
}

/// A small random valid spec, used for fuzzing and gradient checks.
pub fn random_spec<R: Rng + ?Sized>(rng: &mut R, opts: RandomSpecOptions) -> NetworkSpec {
    let n_conv = rng.gen_range(1..=opts.max_convs.max(1));
    let mut layers = Vec::new();
    let mut prev = opts.input[0];
    let mut hw = opts.input[1].min(opts.input[2]);
    let mut conv_ids: Vec<(usize, usize, usize)> = Vec::new(); // (id, width, out hw)
    let mut pools_after: Vec<usize> = Vec::new();
    for pos in 0..n_conv {
        let width = rng.gen_range(1..=opts.max_width.max(1));
        let k = if rng.gen_bool(0.25) { 1 } else { 3 };
        let id = layers.len() + 1;
        let spatial = Spatial {
            kernel_h: k,
            kernel_w: k,
            stride: 1,
            padding: k / 2,
        };
        layers.push(LayerSpec::conv(id, width, prev, spatial));
        conv_ids.push((id, width, hw));
        if opts.allow_skips && pos >= 2 && rng.gen_bool(0.5) {
            let src_pos = rng.gen_range(0..pos - 1);
            let (src_id, src_w, src_hw) = conv_ids[src_pos];
            let stride = src_hw / hw;
            if stride >= 1 && (src_hw - 1) / stride + 1 == hw {
                let sid = layers.len() + 1;
                layers.push(LayerSpec::skip(sid, src_id, id, width, src_w, stride));
            }
        }
        prev = width;
        if hw >= 4 && rng.gen_bool(0.4) {
            let pid = layers.len() + 1;
            layers.push(LayerSpec::pool(pid, PoolKind::Max2x2));
            pools_after.push(pos);
            hw /= 2;
        }
    }
    if rng.gen_bool(0.5) {
        let id = layers.len() + 1;
        layers.push(LayerSpec::pool(id, PoolKind::GlobalAvg));
    }
    if opts.allow_hidden_fc && rng.gen_bool(0.4) {
        let id = layers.len() + 1;
        layers.push(LayerSpec::fully_connected(id, rng.gen_range(2..=5)));
    }
    NetworkSpec {
        name: "random".to_string(),
        layers,
        input_shape: [opts.input[0], opts.input[1], opts.input[2]],
        head_classes: rng.gen_range(2..=4),
    }
}
