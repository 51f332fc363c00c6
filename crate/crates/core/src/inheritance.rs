//! Injecting a learngene into descendant networks.
//!
//! The pipeline is: insert partial-identity (PIM) layers when the target is
//! deeper, rank-reindex the index sets when target widths differ, then place
//! the gene into a He-initialized target. Gene kernels get exact zeros on
//! every channel the gene does not own, so the owned circuit computes the
//! same features it did in the ancestor.

use std::collections::BTreeSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::engine::{fill_he_uniform, NetworkWeights};
use crate::error::{Error, Result};
use crate::genome::{GeneLayer, GeneLayerWeights, LearngeneStructure, LearngeneWeights};
use crate::netspec::{LayerKind, LayerSpec, NetworkSpec, SkipEndpoints, Spatial};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerMapping {
    /// Gene conv layer this target layer receives; `None` for PIM layers.
    pub source_layer: Option<usize>,
    pub target_layer: usize,
    /// `(gene index, target index)` pairs of owned kernels.
    pub kernel_map: Vec<(usize, usize)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum SkipAction {
    /// Gene skip values carried into a target skip layer.
    Carry { source_layer: usize, target_layer: usize },
    /// Target skip with no gene counterpart; its gene kernels are zeroed.
    ZeroFill { target_layer: usize },
    /// Gene skip with no counterpart in the target.
    Drop { source_layer: usize },
}

/// Audit record of one inheritance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InheritancePlan {
    pub source_gene_id: String,
    pub source_spec: String,
    pub target_spec: NetworkSpec,
    pub reindexed: bool,
    /// 1-based gene conv positions each PIM layer is inserted after.
    pub pim_positions: Vec<usize>,
    pub layers: Vec<LayerMapping>,
    pub skips: Vec<SkipAction>,
}

/// Rewrites every conv layer's `K` to `[0, |K|)` and moves the weights by
/// rank. `target_widths` lists the new main-path widths in forward order.
pub fn reindex_structure(gene: &LearngeneWeights, target_widths: &[usize]) -> Result<LearngeneWeights> {
    let convs: Vec<&GeneLayer> = gene.structure.conv_layers().collect();
    if target_widths.len() != convs.len() {
        return Err(Error::Inheritance(format!(
            "{} target widths for a gene with {} conv layers",
            target_widths.len(),
            convs.len()
        )));
    }
    for (g, &w) in convs.iter().zip(target_widths) {
        if g.kernels.len() > w {
            return Err(Error::Inheritance(format!(
                "layer {} owns {} kernels but the target layer has width {w}",
                g.layer_id,
                g.kernels.len()
            )));
        }
    }
    let spec = gene.spec.with_widths(&gene.spec.name, target_widths)?;
    let mut structure = LearngeneStructure::empty(&spec);
    structure.spec_name = gene.structure.spec_name.clone();
    for g in &convs {
        structure.set_kernels(g.layer_id, (0..g.kernels.len()).collect());
    }
    structure.rederive_skips();
    // values are stored in ascending index order, so the rank map leaves them in place
    let out = LearngeneWeights {
        gene_id: gene.gene_id.clone(),
        parent_id: gene.parent_id.clone(),
        spec,
        structure,
        values: gene.values.clone(),
    };
    out.check()?;
    Ok(out)
}

/// Weights of kernel `k` of a PIM layer over `channels` input channels:
/// a centered 1 on channel `k` when `k` is owned, fan-in uniform otherwise.
pub fn pim_kernel<R: Rng + ?Sized>(
    k: usize,
    owned: &BTreeSet<usize>,
    channels: usize,
    kernel_h: usize,
    kernel_w: usize,
    rng: &mut R,
) -> Result<Vec<f32>> {
    if kernel_h % 2 == 0 || kernel_w % 2 == 0 {
        return Err(Error::Inheritance(format!(
            "identity kernel needs odd spatial size, got {kernel_h}x{kernel_w}"
        )));
    }
    let area = kernel_h * kernel_w;
    let mut out = vec![0.0f32; channels * area];
    if owned.contains(&k) {
        if k >= channels {
            return Err(Error::Inheritance(format!("kernel {k} has no matching input channel")));
        }
        out[k * area + (kernel_h / 2) * kernel_w + kernel_w / 2] = 1.0;
    } else {
        fill_he_uniform(&mut out, channels * area, rng);
    }
    Ok(out)
}

/// Insert-after positions (1-based gene conv positions) spreading
/// `target_depth - depth` PIM layers evenly, rounding halves upward.
pub fn default_pim_positions(depth: usize, target_depth: usize) -> Vec<usize> {
    let extra = target_depth.saturating_sub(depth);
    (1..=extra)
        .map(|i| {
            let x = (i * depth) as f64 / (extra + 1) as f64;
            ((x + 0.5).floor() as usize).clamp(1, depth)
        })
        .collect()
}

/// Deepens a gene to `target_depth` conv layers. Each PIM layer copies the
/// width of the layer before it and owns `K_pim = C_pim = K_l`.
pub fn insert_pim_layers(
    gene: &LearngeneWeights,
    target_depth: usize,
    positions: Option<&[usize]>,
) -> Result<LearngeneWeights> {
    let depth = gene.spec.depth();
    if target_depth < depth {
        return Err(Error::Inheritance(format!(
            "cannot shrink a {depth}-layer gene to {target_depth} layers"
        )));
    }
    let mut positions = match positions {
        Some(p) => p.to_vec(),
        None => default_pim_positions(depth, target_depth),
    };
    if positions.len() != target_depth - depth {
        return Err(Error::Inheritance(format!(
            "{} PIM positions given for {} insertions",
            positions.len(),
            target_depth - depth
        )));
    }
    if let Some(&bad) = positions.iter().find(|&&p| p == 0 || p > depth) {
        return Err(Error::Inheritance(format!("PIM position {bad} outside 1..={depth}")));
    }
    positions.sort_unstable();
    if positions.is_empty() {
        return Ok(gene.clone());
    }

    let conv_ids = gene.spec.conv_ids();
    // Layer list with PIM layers placed just before the next conv (after any
    // skip or pool layers trailing the one they follow).
    let mut layers: Vec<(Option<usize>, LayerSpec)> = Vec::new(); // (old id, layer)
    let mut pending: Vec<usize> = Vec::new(); // old ids of convs awaiting a PIM
    let flush = |pending: &mut Vec<usize>, layers: &mut Vec<(Option<usize>, LayerSpec)>| {
        for src in pending.drain(..) {
            let width = gene.spec.layer(src).unwrap().kernels();
            let mut pim = LayerSpec::conv(0, width, width, Spatial::same3x3());
            pim.relu = gene.spec.layer(src).unwrap().relu;
            layers.push((None, pim));
        }
    };
    for layer in &gene.spec.layers {
        if layer.kind == LayerKind::Conv {
            flush(&mut pending, &mut layers);
        }
        if layer.kind == LayerKind::Pool || layer.kind == LayerKind::FullyConnected {
            // PIM layers after the final conv go before the head-side layers
            if conv_ids.last().is_some_and(|&last| gene.spec.position(last) < gene.spec.position(layer.layer_id)) {
                flush(&mut pending, &mut layers);
            }
        }
        layers.push((Some(layer.layer_id), layer.clone()));
        if layer.kind == LayerKind::Conv {
            let ord = conv_ids.iter().position(|&c| c == layer.layer_id).unwrap() + 1;
            for _ in positions.iter().filter(|&&p| p == ord) {
                pending.push(layer.layer_id);
            }
        }
    }
    flush(&mut pending, &mut layers);

    let renumber: Vec<(usize, usize)> = layers
        .iter()
        .enumerate()
        .filter_map(|(i, (old, _))| old.map(|o| (o, i + 1)))
        .collect();
    let new_id = |old: usize| renumber.iter().find(|(o, _)| *o == old).unwrap().1;

    let mut spec_layers = Vec::with_capacity(layers.len());
    let mut prev_width = gene.spec.input_shape[0];
    for (i, (_, layer)) in layers.iter().enumerate() {
        let mut l = layer.clone();
        l.layer_id = i + 1;
        if let Some(ep) = l.skip_endpoints {
            l.skip_endpoints = Some(SkipEndpoints {
                source: new_id(ep.source),
                target: new_id(ep.target),
            });
        }
        if l.kind == LayerKind::Conv {
            l.channel_count = Some(prev_width);
            prev_width = l.kernels();
        }
        spec_layers.push(l);
    }
    let spec = NetworkSpec {
        name: format!("{}+pim{}", gene.spec.name, positions.len()),
        layers: spec_layers,
        input_shape: gene.spec.input_shape,
        head_classes: gene.spec.head_classes,
    }
    .checked()?;

    let mut structure = LearngeneStructure::empty(&spec);
    structure.spec_name = gene.structure.spec_name.clone();
    let mut values = Vec::with_capacity(structure.layers.len());
    let mut last_k: BTreeSet<usize> = BTreeSet::new();
    let new_conv_ids = spec.conv_ids();
    for (i, (old, _)) in layers.iter().enumerate() {
        let id = i + 1;
        let Some(l) = spec.layer(id).filter(|l| l.is_kernel_layer()) else { continue };
        let (kernels, v) = match old {
            Some(old) => {
                let g = gene.structure.layer(*old).unwrap();
                let v = gene.layer_values(*old).unwrap();
                (g.kernels.clone(), GeneLayerWeights { layer_id: id, ..v.clone() })
            }
            None => {
                let s = l.spatial.unwrap();
                let area = s.area();
                let n = last_k.len();
                let mut w = vec![0.0f32; n * n * area];
                for r in 0..n {
                    w[(r * n + r) * area + (s.kernel_h / 2) * s.kernel_w + s.kernel_w / 2] = 1.0;
                }
                let v = GeneLayerWeights {
                    layer_id: id,
                    kernel_h: s.kernel_h,
                    kernel_w: s.kernel_w,
                    weights: w,
                    bias: vec![0.0; n],
                };
                (last_k.clone(), v)
            }
        };
        if l.kind == LayerKind::Conv {
            structure.set_kernels(id, kernels.clone());
            last_k = kernels;
            debug_assert!(new_conv_ids.contains(&id));
        }
        values.push(v);
    }
    structure.rederive_skips();
    let out = LearngeneWeights {
        gene_id: gene.gene_id.clone(),
        parent_id: gene.parent_id.clone(),
        spec,
        structure,
        values,
    };
    out.check()?;
    Ok(out)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct InheritOptions {
    /// Explicit PIM positions; the even spread is used when absent.
    pub pim_positions: Option<Vec<usize>>,
}

/// Builds a descendant of `target` carrying `gene`.
pub fn inherit<R: Rng + ?Sized>(
    gene: &LearngeneWeights,
    target: &NetworkSpec,
    rng: &mut R,
) -> Result<NetworkWeights<f32>> {
    Ok(inherit_with_plan(gene, target, &InheritOptions::default(), rng)?.0)
}

/// The gene rewritten to the target's depth and widths, plus the PIM
/// positions used. The result's layer ids still refer to the gene's own
/// (possibly deepened) spec.
pub fn adapt_gene(
    gene: &LearngeneWeights,
    target: &NetworkSpec,
    opts: &InheritOptions,
) -> Result<(LearngeneWeights, Vec<usize>, bool)> {
    gene.check()?;
    if gene.spec.input_shape[0] != target.input_shape[0] {
        return Err(Error::Inheritance(format!(
            "gene expects {} input channels, target has {}",
            gene.spec.input_shape[0], target.input_shape[0]
        )));
    }
    let (na, nd) = (gene.spec.depth(), target.depth());
    if nd < na {
        return Err(Error::Inheritance(format!(
            "target has {nd} conv layers but the gene spans {na}; depth reduction is unsupported"
        )));
    }
    let positions = match &opts.pim_positions {
        Some(p) => p.clone(),
        None => default_pim_positions(na, nd),
    };
    let deep = insert_pim_layers(gene, nd, Some(&positions))?;
    let widths = target.widths();
    let reindexed = deep.spec.widths() != widths;
    let adapted = if reindexed {
        reindex_structure(&deep, &widths)?
    } else {
        deep
    };
    let mut sorted = positions;
    sorted.sort_unstable();
    Ok((adapted, sorted, reindexed))
}

pub fn inherit_with_plan<R: Rng + ?Sized>(
    gene: &LearngeneWeights,
    target: &NetworkSpec,
    opts: &InheritOptions,
    rng: &mut R,
) -> Result<(NetworkWeights<f32>, InheritancePlan)> {
    let target = target.clone().checked()?;
    let (g, pim_positions, reindexed) = adapt_gene(gene, &target, opts)?;

    let src_convs = g.spec.conv_ids();
    let tgt_convs = target.conv_ids();
    let ordinal = |ids: &[usize], id: usize| ids.iter().position(|&x| x == id);

    // kernel sizes must agree layer by layer
    for (s, t) in src_convs.iter().zip(&tgt_convs) {
        let v = g.layer_values(*s).unwrap();
        let ts = target.layer(*t).unwrap().spatial.unwrap();
        if (v.kernel_h, v.kernel_w) != (ts.kernel_h, ts.kernel_w) {
            return Err(Error::Inheritance(format!(
                "gene layer {s} has {}x{} kernels, target layer {t} has {}x{}",
                v.kernel_h, v.kernel_w, ts.kernel_h, ts.kernel_w
            )));
        }
    }

    let mut structure = LearngeneStructure::empty(&target);
    for (s, t) in src_convs.iter().zip(&tgt_convs) {
        structure.set_kernels(*t, g.structure.layer(*s).unwrap().kernels.clone());
    }
    structure.rederive_skips();

    // target skip -> gene skip with the same endpoint ordinals
    let mut skips = Vec::new();
    let mut carried: Vec<(usize, usize)> = Vec::new(); // (gene skip id, target skip id)
    for ts in target.skip_layers() {
        let ep = ts.skip_endpoints.unwrap();
        let want = (ordinal(&tgt_convs, ep.source), ordinal(&tgt_convs, ep.target));
        let hit = g.spec.skip_layers().find(|gs| {
            let gep = gs.skip_endpoints.unwrap();
            (ordinal(&src_convs, gep.source), ordinal(&src_convs, gep.target)) == want
                && gs.spatial.map(|s| (s.kernel_h, s.kernel_w))
                    == ts.spatial.map(|s| (s.kernel_h, s.kernel_w))
        });
        match hit {
            Some(gs) => {
                carried.push((gs.layer_id, ts.layer_id));
                skips.push(SkipAction::Carry {
                    source_layer: gs.layer_id,
                    target_layer: ts.layer_id,
                });
            }
            None => skips.push(SkipAction::ZeroFill {
                target_layer: ts.layer_id,
            }),
        }
    }
    for gs in g.spec.skip_layers() {
        if !carried.iter().any(|(s, _)| *s == gs.layer_id) {
            skips.push(SkipAction::Drop {
                source_layer: gs.layer_id,
            });
        }
    }

    let mut weights = NetworkWeights::<f32>::he_init(&target, rng)?;
    let mut place = |target_id: usize, values: Option<&GeneLayerWeights>| {
        let tg = structure.layer(target_id).unwrap();
        let p = weights.conv_mut(target_id).unwrap();
        let area = p.area();
        for (kr, &k) in tg.kernels.iter().enumerate() {
            for c in 0..p.channels {
                p.slice_mut(k, c).fill(0.0);
            }
            p.bias[k] = 0.0;
            if let Some(v) = values {
                for (cr, &c) in tg.channels.iter().enumerate() {
                    let off = (kr * tg.channels.len() + cr) * area;
                    p.slice_mut(k, c).copy_from_slice(&v.weights[off..off + area]);
                }
                p.bias[k] = v.bias[kr];
            }
        }
    };
    let origins = conv_origins(gene, &pim_positions);
    let mut layers = Vec::new();
    for ((s, t), original) in src_convs.iter().zip(&tgt_convs).zip(origins) {
        place(*t, g.layer_values(*s));
        let kernel_map = match original {
            Some(o) => gene
                .structure
                .layer(o)
                .unwrap()
                .kernels
                .iter()
                .copied()
                .zip(structure.layer(*t).unwrap().kernels.iter().copied())
                .collect(),
            None => Vec::new(),
        };
        layers.push(LayerMapping {
            source_layer: original,
            target_layer: *t,
            kernel_map,
        });
    }
    for ts in target.skip_layers() {
        let values = carried
            .iter()
            .find(|(_, t)| *t == ts.layer_id)
            .and_then(|(s, _)| g.layer_values(*s));
        place(ts.layer_id, values);
    }

    let plan = InheritancePlan {
        source_gene_id: gene.gene_id.clone(),
        source_spec: gene.spec.name.clone(),
        target_spec: target,
        reindexed,
        pim_positions,
        layers,
        skips,
    };
    Ok((weights, plan))
}

/// Original gene conv id behind each conv of the deepened gene, in forward
/// order; `None` marks PIM layers.
fn conv_origins(original: &LearngeneWeights, sorted_positions: &[usize]) -> Vec<Option<usize>> {
    let mut out = Vec::new();
    for (ord, id) in original.spec.conv_ids().into_iter().enumerate() {
        out.push(Some(id));
        for _ in sorted_positions.iter().filter(|&&p| p == ord + 1) {
            out.push(None);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::Tensor;
    use crate::genome::{extract_learngene, init_random_structure};
    use crate::netspec::builtin_spec;
    use crate::seed;

    fn gene_for(spec: &NetworkSpec, fraction: f64, s: u64) -> LearngeneWeights {
        let w = NetworkWeights::<f32>::he_init(spec, &mut seed::from_seed(s)).unwrap();
        let st = init_random_structure(spec, fraction, &mut seed::from_seed(s + 1)).unwrap();
        extract_learngene(&w, &st).unwrap().with_ids("g", None)
    }

    fn input(spec: &NetworkSpec, n: usize, s: u64) -> Tensor<f32> {
        let mut rng = seed::from_seed(s);
        let [c, h, w] = spec.input_shape;
        Tensor::from_vec([n, c, h, w], (0..n * c * h * w).map(|_| rng.gen_range(0.0..1.0)).collect())
    }

    #[test]
    fn reindex_moves_by_rank() {
        let spec = builtin_spec("mini-vgg-6").unwrap();
        let mut g = gene_for(&spec, 0.25, 1);
        let mut st = g.structure.clone();
        st.set_kernels(1, [3, 7, 12].into_iter().collect());
        let w = NetworkWeights::<f32>::he_init(&spec, &mut seed::from_seed(1)).unwrap();
        g = extract_learngene(&w, &st).unwrap();
        let r = reindex_structure(&g, &spec.widths()).unwrap();
        assert_eq!(r.structure.layer(1).unwrap().kernels, (0..3).collect());
        assert_eq!(r.structure.layer(2).unwrap().channels, (0..3).collect());
        assert_eq!(r.slice(2, 0, 2), g.slice(2, g.structure.layer(2).unwrap().kernels.iter().next().copied().unwrap(), 12));
        let again = reindex_structure(&r, &spec.widths()).unwrap();
        assert_eq!(again, r);
    }

    #[test]
    fn reindex_rejects_too_narrow() {
        let spec = builtin_spec("mini-vgg-6").unwrap();
        let g = gene_for(&spec, 0.8, 2);
        let err = reindex_structure(&g, &[8, 16, 32, 32, 64, 64]).unwrap_err();
        assert!(err.to_string().contains("layer 1"), "{err}");
    }

    #[test]
    fn default_positions() {
        assert_eq!(default_pim_positions(6, 8), vec![2, 4]);
        assert_eq!(default_pim_positions(4, 5), vec![2]);
        assert_eq!(default_pim_positions(6, 6), Vec::<usize>::new());
    }

    #[test]
    fn pim_kernel_cases() {
        let owned: BTreeSet<usize> = [1, 3].into_iter().collect();
        let k = pim_kernel(3, &owned, 4, 3, 3, &mut seed::from_seed(0)).unwrap();
        for c in 0..4 {
            let want: Vec<f32> = if c == 3 {
                vec![0., 0., 0., 0., 1., 0., 0., 0., 0.]
            } else {
                vec![0.0; 9]
            };
            assert_eq!(&k[c * 9..c * 9 + 9], want.as_slice());
        }
        let r = pim_kernel(2, &owned, 4, 3, 3, &mut seed::from_seed(0)).unwrap();
        assert!(r.iter().all(|&v| v != 0.0 && v != 1.0));
        assert!(pim_kernel(1, &owned, 4, 2, 2, &mut seed::from_seed(0)).is_err());
    }

    #[test]
    fn identical_spec_zero_fills() {
        let spec = builtin_spec("mini-vgg-6").unwrap();
        let g = gene_for(&spec, 0.3, 3);
        let d = inherit(&g, &spec, &mut seed::from_seed(9)).unwrap();
        for gl in &g.structure.layers {
            let p = d.conv(gl.layer_id).unwrap();
            for k in 0..p.kernels {
                for c in 0..p.channels {
                    let slice = p.slice(k, c);
                    match (gl.kernels.contains(&k), gl.channels.contains(&c)) {
                        (true, true) => assert_eq!(Some(slice), g.slice(gl.layer_id, k, c)),
                        (true, false) => assert!(slice.iter().all(|&v| v == 0.0)),
                        (false, _) => assert!(slice.iter().all(|&v| v != 0.0)),
                    }
                }
            }
        }
        let again = inherit(&g, &spec, &mut seed::from_seed(9)).unwrap();
        assert_eq!(again, d);
    }

    #[test]
    fn plain_gene_into_residual_zeroes_skip_gene_kernels() {
        let g = gene_for(&builtin_spec("mini-vgg-6").unwrap(), 0.3, 4);
        let target = builtin_spec("mini-res-6").unwrap();
        let (d, plan) = inherit_with_plan(&g, &target, &InheritOptions::default(), &mut seed::from_seed(5)).unwrap();
        assert!(plan.skips.iter().all(|a| matches!(a, SkipAction::ZeroFill { .. })));
        for sk in target.skip_layers() {
            let ep = sk.skip_endpoints.unwrap();
            let kt = &g.structure.layer(g.spec.conv_ids()[target.conv_ids().iter().position(|&x| x == ep.target).unwrap()]).unwrap().kernels;
            let p = d.conv(sk.layer_id).unwrap();
            for &k in kt {
                for c in 0..p.channels {
                    assert!(p.slice(k, c).iter().all(|&v| v == 0.0));
                }
                assert_eq!(p.bias[k], 0.0);
            }
        }
    }

    #[test]
    fn residual_gene_carries_and_drops_skips() {
        let res = builtin_spec("mini-res-6").unwrap();
        let g = gene_for(&res, 0.3, 6);
        let (d, plan) = inherit_with_plan(&g, &res, &InheritOptions::default(), &mut seed::from_seed(1)).unwrap();
        assert!(plan.skips.iter().all(|a| matches!(a, SkipAction::Carry { .. })));
        for sk in res.skip_layers() {
            let gl = g.structure.layer(sk.layer_id).unwrap();
            for &k in &gl.kernels {
                for &c in &gl.channels {
                    assert_eq!(Some(d.conv(sk.layer_id).unwrap().slice(k, c)), g.slice(sk.layer_id, k, c));
                }
            }
        }
        let (_, plan) = inherit_with_plan(&g, &builtin_spec("mini-vgg-6").unwrap(), &InheritOptions::default(), &mut seed::from_seed(1)).unwrap();
        assert_eq!(plan.skips.iter().filter(|a| matches!(a, SkipAction::Drop { .. })).count(), 2);
    }

    #[test]
    fn pim_insertion_preserves_gene_channels() {
        let spec = builtin_spec("mini-vgg-6").unwrap();
        let g = gene_for(&spec, 0.3, 7);
        let deep = builtin_spec("mini-vgg-8").unwrap();
        let (dw, plan) = inherit_with_plan(&g, &deep, &InheritOptions::default(), &mut seed::from_seed(2)).unwrap();
        assert_eq!(plan.pim_positions, vec![2, 4]);
        assert!(plan.layers[2].source_layer.is_none() && plan.layers[5].source_layer.is_none());
        // compare with the same gene placed into an equally wide 6-layer net
        let shallow = spec.with_widths("s", &[16, 32, 64, 64, 128, 128]).unwrap();
        let sw = inherit(&g, &shallow, &mut seed::from_seed(3)).unwrap();
        let x = input(&spec, 2, 11);
        let a = sw.forward_trace(&x).unwrap();
        let b = dw.forward_trace(&x).unwrap();
        let last_s = *shallow.conv_ids().last().unwrap();
        let last_d = *deep.conv_ids().last().unwrap();
        let (ya, yb) = (a.output(&shallow, last_s).unwrap(), b.output(&deep, last_d).unwrap());
        let gk = &g.structure.layer(*spec.conv_ids().last().unwrap()).unwrap().kernels;
        // pools sit at different depths but max pooling commutes with the identity path
        for n in 0..2 {
            for (r, &k) in gk.iter().enumerate() {
                let _ = r;
                for h in 0..ya.shape[2] {
                    for w in 0..ya.shape[3] {
                        assert!((ya.at(n, k, h, w) - yb.at(n, k, h, w)).abs() <= 1e-5);
                    }
                }
            }
        }
    }

    #[test]
    fn shrinking_depth_is_rejected() {
        let g = gene_for(&builtin_spec("mini-vgg-8").unwrap(), 0.3, 8);
        assert!(matches!(inherit(&g, &builtin_spec("mini-vgg-6").unwrap(), &mut seed::from_seed(0)), Err(Error::Inheritance(_))));
    }

    #[test]
    fn reindex_composes() {
        let spec = builtin_spec("mini-vgg-6").unwrap();
        let g = gene_for(&spec, 0.2, 9);
        let w1 = [10, 20, 40, 40, 80, 80];
        let w2 = [8, 16, 32, 32, 64, 64];
        let a = reindex_structure(&reindex_structure(&g, &w1).unwrap(), &w2).unwrap();
        let b = reindex_structure(&g, &w2).unwrap();
        assert_eq!(a.structure, b.structure);
        assert_eq!(a.values, b.values);
    }
}
