//! Learngene structures, extraction from trained networks, and mutation.
//!
//! A learngene owns, for every kernel layer, a set of kernel indices `K`
//! and channel indices `C`. Consecutive main-path conv layers are tied by
//! `K_l = C_{l+1}`, the first layer sees every input channel, and a skip
//! projection from `l_i` to `l_j` owns `K_sc = K_{l_j}`, `C_sc = K_{l_i}`.
//! Indices are 0-based.

use std::collections::BTreeSet;

use rand::seq::IteratorRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::engine::NetworkWeights;
use crate::error::{Error, Result};
use crate::netspec::{join_violations, LayerKind, NetworkSpec, SkipEndpoints, Violation};

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GeneLayer {
    pub layer_id: usize,
    pub kind: LayerKind,
    /// `n_K` of the layer the gene was built against.
    pub kernel_count: usize,
    /// `n_C` of the layer the gene was built against.
    pub channel_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub skip_endpoints: Option<SkipEndpoints>,
    pub kernels: BTreeSet<usize>,
    pub channels: BTreeSet<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LearngeneStructure {
    pub spec_name: String,
    /// One entry per conv and skip layer, ordered by layer id.
    pub layers: Vec<GeneLayer>,
}

impl LearngeneStructure {
    pub fn layer(&self, layer_id: usize) -> Option<&GeneLayer> {
        self.layers.iter().find(|g| g.layer_id == layer_id)
    }

    pub fn layer_mut(&mut self, layer_id: usize) -> Option<&mut GeneLayer> {
        self.layers.iter_mut().find(|g| g.layer_id == layer_id)
    }

    /// Main-path conv entries in forward order.
    pub fn conv_layers(&self) -> impl Iterator<Item = &GeneLayer> {
        self.layers.iter().filter(|g| g.kind == LayerKind::Conv)
    }

    pub fn kernel_sizes(&self) -> Vec<usize> {
        self.conv_layers().map(|g| g.kernels.len()).collect()
    }

    /// Empty structure over every kernel layer of `spec`, with the first
    /// conv layer owning all input channels.
    pub fn empty(spec: &NetworkSpec) -> LearngeneStructure {
        let first = spec.conv_layers().next().map(|l| l.layer_id);
        let layers = spec
            .kernel_layers()
            .map(|l| GeneLayer {
                layer_id: l.layer_id,
                kind: l.kind,
                kernel_count: l.kernels(),
                channel_count: l.channels(),
                skip_endpoints: l.skip_endpoints,
                kernels: BTreeSet::new(),
                channels: if Some(l.layer_id) == first {
                    (0..l.channels()).collect()
                } else {
                    BTreeSet::new()
                },
            })
            .collect();
        LearngeneStructure {
            spec_name: spec.name.clone(),
            layers,
        }
    }

    /// Sets `K_l` of a main-path conv layer and propagates it to the next
    /// layer's channels.
    pub fn set_kernels(&mut self, layer_id: usize, kernels: BTreeSet<usize>) {
        let ids: Vec<usize> = self.conv_layers().map(|g| g.layer_id).collect();
        if let Some(i) = ids.iter().position(|&id| id == layer_id) {
            if let Some(next) = ids.get(i + 1) {
                self.layer_mut(*next).unwrap().channels = kernels.clone();
            }
            self.layer_mut(layer_id).unwrap().kernels = kernels;
        }
    }

    /// Recomputes every skip entry from its endpoints.
    pub fn rederive_skips(&mut self) {
        let derived: Vec<(usize, BTreeSet<usize>, BTreeSet<usize>)> = self
            .layers
            .iter()
            .filter_map(|g| {
                let ep = g.skip_endpoints?;
                let k = self.layer(ep.target)?.kernels.clone();
                let c = self.layer(ep.source)?.kernels.clone();
                Some((g.layer_id, k, c))
            })
            .collect();
        for (id, k, c) in derived {
            let g = self.layer_mut(id).unwrap();
            g.kernels = k;
            g.channels = c;
        }
    }

    /// Number of kernel weights owned, `Σ |K|·|C|·kh·kw`, given each layer's
    /// kernel area.
    pub fn weight_count_with(&self, area_of: impl Fn(usize) -> usize) -> usize {
        self.layers
            .iter()
            .map(|g| g.kernels.len() * g.channels.len() * area_of(g.layer_id))
            .sum()
    }
}

/// Every broken alignment, bound, or skip derivation, ordered by layer id.
pub fn validate_structure(structure: &LearngeneStructure, spec: &NetworkSpec) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |layer_id: usize, reason: String| out.push(Violation { layer_id, reason });

    for layer in spec.kernel_layers() {
        match structure.layer(layer.layer_id) {
            None => push(layer.layer_id, "no gene entry for kernel layer".into()),
            Some(g) => {
                if g.kind != layer.kind {
                    push(g.layer_id, format!("gene entry kind {:?} vs spec {:?}", g.kind, layer.kind));
                }
                if g.kernel_count != layer.kernels() || g.channel_count != layer.channels() {
                    push(
                        g.layer_id,
                        format!(
                            "gene built for {}x{} kernels/channels, spec has {}x{}",
                            g.kernel_count,
                            g.channel_count,
                            layer.kernels(),
                            layer.channels()
                        ),
                    );
                }
                if let Some(&k) = g.kernels.iter().find(|&&k| k >= layer.kernels()) {
                    push(g.layer_id, format!("kernel index {k} out of range 0..{}", layer.kernels()));
                }
                if let Some(&c) = g.channels.iter().find(|&&c| c >= layer.channels()) {
                    push(g.layer_id, format!("channel index {c} out of range 0..{}", layer.channels()));
                }
            }
        }
    }
    for g in &structure.layers {
        if spec.layer(g.layer_id).is_none_or(|l| !l.is_kernel_layer()) {
            push(g.layer_id, "gene entry has no matching kernel layer in spec".into());
        }
    }

    let convs: Vec<&GeneLayer> = spec
        .conv_ids()
        .into_iter()
        .filter_map(|id| structure.layer(id))
        .collect();
    if let Some(first) = convs.first() {
        if first.channels.len() != first.channel_count
            || first.channels.iter().enumerate().any(|(i, &c)| i != c)
        {
            push(first.layer_id, "first layer must own every input channel".into());
        }
    }
    for pair in convs.windows(2) {
        if pair[0].kernels != pair[1].channels {
            push(
                pair[1].layer_id,
                format!(
                    "K of layer {} differs from C of layer {} (layers {}, {})",
                    pair[0].layer_id, pair[1].layer_id, pair[0].layer_id, pair[1].layer_id
                ),
            );
        }
    }
    for skip in spec.skip_layers() {
        let (Some(g), Some(ep)) = (structure.layer(skip.layer_id), skip.skip_endpoints) else {
            continue;
        };
        let target = structure.layer(ep.target).map(|t| &t.kernels);
        let source = structure.layer(ep.source).map(|s| &s.kernels);
        if target != Some(&g.kernels) {
            push(g.layer_id, format!("skip K differs from K of target layer {}", ep.target));
        }
        if source != Some(&g.channels) {
            push(g.layer_id, format!("skip C differs from K of source layer {}", ep.source));
        }
    }
    out.sort_by_key(|v| v.layer_id);
    out
}

fn check_structure(structure: &LearngeneStructure, spec: &NetworkSpec) -> Result<()> {
    let v = validate_structure(structure, spec);
    if v.is_empty() {
        Ok(())
    } else {
        Err(Error::InvalidStructure(join_violations(&v)))
    }
}

/// Draws `⌈c·n_K⌉` kernels uniformly per conv layer.
pub fn init_random_structure<R: Rng + ?Sized>(
    spec: &NetworkSpec,
    fraction: f64,
    rng: &mut R,
) -> Result<LearngeneStructure> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config(format!("init fraction c must lie in (0, 1], got {fraction}")));
    }
    let mut s = LearngeneStructure::empty(spec);
    for layer in spec.conv_layers() {
        let n = layer.kernels();
        let size = ((fraction * n as f64).ceil() as usize).clamp(1, n);
        let picked: BTreeSet<usize> = rand::seq::index::sample(rng, n, size).into_iter().collect();
        s.set_kernels(layer.layer_id, picked);
    }
    s.rederive_skips();
    Ok(s)
}

/// Probability of adding a kernel to a layer holding `gene_size` of
/// `layer_width` kernels: `α·|K|/(n_K − |K|)`, clamped to `[0, 1]` and
/// defined as 1 for a saturated layer.
pub fn growth_probability(gene_size: usize, layer_width: usize, alpha: f64) -> Result<f64> {
    if layer_width == 0 {
        return Err(Error::Config("layer width must be positive".into()));
    }
    if gene_size > layer_width {
        return Err(Error::Config(format!(
            "gene size {gene_size} exceeds layer width {layer_width}"
        )));
    }
    if gene_size == layer_width {
        return Ok(1.0);
    }
    let raw = alpha * gene_size as f64 / (layer_width - gene_size) as f64;
    Ok(raw.clamp(0.0, 1.0))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MutationParams {
    /// Per-layer probability of entering (and continuing) the mutation loop.
    pub p_m: f64,
    pub alpha: f64,
    /// Lets shrink events empty a layer; otherwise a shrink at `|K| = 1` is a
    /// no-op.
    pub allow_empty_layers: bool,
}

impl Default for MutationParams {
    fn default() -> Self {
        MutationParams {
            p_m: 0.2,
            alpha: 0.9,
            allow_empty_layers: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum MutationOutcome {
    Grew(usize),
    Shrank(usize),
    /// Grow on a full layer or shrink on an empty (or minimal) one.
    NoOp,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MutationEvent {
    pub layer_id: usize,
    pub outcome: MutationOutcome,
}

pub fn mutate<R: Rng + ?Sized>(
    structure: &LearngeneStructure,
    params: &MutationParams,
    rng: &mut R,
) -> LearngeneStructure {
    mutate_traced(structure, params, rng).0
}

/// Kernel-level mutation: per main-path layer, while `r ≤ p_m` add a kernel
/// with probability `p⁺` or remove one otherwise, mirroring the change into
/// the next layer's channels. Skip entries are re-derived afterwards.
pub fn mutate_traced<R: Rng + ?Sized>(
    structure: &LearngeneStructure,
    params: &MutationParams,
    rng: &mut R,
) -> (LearngeneStructure, Vec<MutationEvent>) {
    let mut out = structure.clone();
    let mut events = Vec::new();
    let ids: Vec<usize> = out.conv_layers().map(|g| g.layer_id).collect();
    let min_size = usize::from(!params.allow_empty_layers);
    for &id in &ids {
        if params.p_m <= 0.0 {
            break;
        }
        let mut r: f64 = rng.gen();
        while r <= params.p_m {
            let g = out.layer(id).unwrap();
            let (size, width) = (g.kernels.len(), g.kernel_count);
            let p_grow = growth_probability(size, width, params.alpha).unwrap_or(1.0);
            let s: f64 = rng.gen();
            let outcome = if s <= p_grow {
                match (0..width).filter(|k| !g.kernels.contains(k)).choose(rng) {
                    Some(k) => {
                        let mut ks = g.kernels.clone();
                        ks.insert(k);
                        out.set_kernels(id, ks);
                        MutationOutcome::Grew(k)
                    }
                    None => MutationOutcome::NoOp,
                }
            } else if size > min_size {
                let k = *g.kernels.iter().choose(rng).expect("non-empty");
                let mut ks = g.kernels.clone();
                ks.remove(&k);
                out.set_kernels(id, ks);
                MutationOutcome::Shrank(k)
            } else {
                MutationOutcome::NoOp
            };
            events.push(MutationEvent { layer_id: id, outcome });
            r = rng.gen();
        }
    }
    out.rederive_skips();
    (out, events)
}

/// Weights of one gene layer: `|K| × |C| × kh × kw` values in ascending
/// index order, plus one bias per owned kernel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneLayerWeights {
    pub layer_id: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub weights: Vec<f32>,
    pub bias: Vec<f32>,
}

impl GeneLayerWeights {
    pub fn area(&self) -> usize {
        self.kernel_h * self.kernel_w
    }
}

/// A learngene with its values and lineage.
#[derive(Clone, Debug, PartialEq)]
pub struct LearngeneWeights {
    pub gene_id: String,
    pub parent_id: Option<String>,
    /// Architecture the gene was extracted from (or rewritten to).
    pub spec: NetworkSpec,
    pub structure: LearngeneStructure,
    /// Parallel to `structure.layers`.
    pub values: Vec<GeneLayerWeights>,
}

impl LearngeneWeights {
    pub fn with_ids(mut self, gene_id: impl Into<String>, parent_id: Option<String>) -> Self {
        self.gene_id = gene_id.into();
        self.parent_id = parent_id;
        self
    }

    pub fn layer_values(&self, layer_id: usize) -> Option<&GeneLayerWeights> {
        self.values.iter().find(|v| v.layer_id == layer_id)
    }

    /// The `kh × kw` slice of kernel `k`, channel `c` (network indices).
    pub fn slice(&self, layer_id: usize, k: usize, c: usize) -> Option<&[f32]> {
        let g = self.structure.layer(layer_id)?;
        let v = self.layer_values(layer_id)?;
        let kr = g.kernels.iter().position(|&x| x == k)?;
        let cr = g.channels.iter().position(|&x| x == c)?;
        let off = (kr * g.channels.len() + cr) * v.area();
        Some(&v.weights[off..off + v.area()])
    }

    /// Owned kernel weights (biases excluded).
    pub fn parameter_count(&self) -> usize {
        self.values.iter().map(|v| v.weights.len()).sum()
    }

    /// Verifies that the values cover the structure's index product exactly
    /// and are finite.
    pub fn check(&self) -> Result<()> {
        check_structure(&self.structure, &self.spec)?;
        if self.values.len() != self.structure.layers.len() {
            return Err(Error::InvalidStructure("value layers do not match structure".into()));
        }
        for (g, v) in self.structure.layers.iter().zip(&self.values) {
            let want = g.kernels.len() * g.channels.len() * v.area();
            if g.layer_id != v.layer_id || v.weights.len() != want || v.bias.len() != g.kernels.len() {
                return Err(Error::InvalidStructure(format!(
                    "values of layer {} do not cover its index sets",
                    g.layer_id
                )));
            }
            if v.weights.iter().chain(&v.bias).any(|x| !x.is_finite()) {
                return Err(Error::InvalidStructure(format!("non-finite value in layer {}", g.layer_id)));
            }
        }
        Ok(())
    }
}

/// Copies the `(k ∈ K_l, c ∈ C_l)` slices (and the biases of owned kernels)
/// out of a network.
pub fn extract_learngene(
    weights: &NetworkWeights<f32>,
    structure: &LearngeneStructure,
) -> Result<LearngeneWeights> {
    check_structure(structure, &weights.spec)?;
    if let Some(g) = structure.conv_layers().find(|g| g.kernels.is_empty()) {
        return Err(Error::InvalidStructure(format!("layer {} owns no kernels", g.layer_id)));
    }
    let mut values = Vec::with_capacity(structure.layers.len());
    for g in &structure.layers {
        let params = weights.conv(g.layer_id).ok_or_else(|| Error::Shape {
            layer_id: g.layer_id,
            reason: "no conv parameters".into(),
        })?;
        let mut w = Vec::with_capacity(g.kernels.len() * g.channels.len() * params.area());
        for &k in &g.kernels {
            for &c in &g.channels {
                w.extend_from_slice(params.slice(k, c));
            }
        }
        values.push(GeneLayerWeights {
            layer_id: g.layer_id,
            kernel_h: params.kernel_h,
            kernel_w: params.kernel_w,
            weights: w,
            bias: g.kernels.iter().map(|&k| params.bias[k]).collect(),
        });
    }
    Ok(LearngeneWeights {
        gene_id: String::new(),
        parent_id: None,
        spec: weights.spec.clone(),
        structure: structure.clone(),
        values,
    })
}
