//! The generational loop: world partition, tasks, population training,
//! critic scoring, tournaments, the gene pool and the gene tree.
//!
//! Every random draw comes from `seed::rng(master, [stream, generation,
//! individual, ..])`, so a generation's outcome does not depend on how
//! individuals are spread over worker threads.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{gene_from_parts, gene_parts, write_atomic, Checkpoint};
use crate::dataset::{ImageDataset, SampleSet};
use crate::engine::{evaluate, train, NetworkWeights, TrainBudget};
use crate::error::{Error, Result};
use crate::genome::{
    extract_learngene, init_random_structure, mutate, LearngeneStructure, LearngeneWeights, MutationParams,
};
use crate::inheritance::inherit;
use crate::netspec::{builtin_spec, parameter_fraction, NetworkSpec};
use crate::seed::{self, stream};

pub const RECORDS_FILE: &str = "generations.ndjson";
pub const CHECKPOINT_FILE: &str = "state.lgck";
pub const CONFIG_FILE: &str = "config.json";

/// Class partition plus a fixed per-class train/holdout split of records.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct World {
    pub train_classes: Vec<usize>,
    pub val_classes: Vec<usize>,
    /// Classes in neither partition, kept for novelty evaluation.
    pub novelty_classes: Vec<usize>,
    /// Indexed by global class id.
    pub train_split: Vec<Vec<usize>>,
    pub holdout_split: Vec<Vec<usize>>,
}

impl World {
    pub fn samples<'a>(&self, dataset: &'a ImageDataset, classes: &[usize], holdout: bool) -> SampleSet<'a> {
        let split = if holdout { &self.holdout_split } else { &self.train_split };
        let recs: Vec<Vec<usize>> = classes.iter().map(|&c| split[c].clone()).collect();
        SampleSet::from_classes(dataset, classes, &recs)
    }
}

/// Splits the dataset's classes into `n_t` training, `n_v` validation and
/// the remaining novelty classes, and every class's records into train and
/// holdout parts (`holdout_fraction` of each class, at least one record).
pub fn partition_world(
    dataset: &ImageDataset,
    n_t: usize,
    n_v: usize,
    holdout_fraction: f64,
    seed_value: u64,
) -> Result<World> {
    let classes = dataset.class_count();
    if n_t + n_v > classes {
        return Err(Error::Config(format!(
            "world needs {} classes, dataset has {classes}",
            n_t + n_v
        )));
    }
    if n_t == 0 || n_v == 0 {
        return Err(Error::Config("world needs at least one training and one validation class".into()));
    }
    if !(holdout_fraction > 0.0 && holdout_fraction < 1.0) {
        return Err(Error::Config(format!("holdout fraction must be in (0, 1), got {holdout_fraction}")));
    }
    let mut rng = seed::rng(seed_value, &[stream::WORLD]);
    let mut order: Vec<usize> = (0..classes).collect();
    order.shuffle(&mut rng);
    let by_class = dataset.indices_by_class();
    let mut train_split = Vec::with_capacity(classes);
    let mut holdout_split = Vec::with_capacity(classes);
    for (c, recs) in by_class.into_iter().enumerate() {
        if recs.len() < 2 {
            return Err(Error::EmptyDataset(format!("class {c} has fewer than 2 records")));
        }
        let mut recs = recs;
        recs.shuffle(&mut seed::rng(seed_value, &[stream::WORLD, 1, c as u64]));
        let n_hold = ((recs.len() as f64 * holdout_fraction).round() as usize).clamp(1, recs.len() - 1);
        let hold = recs.split_off(recs.len() - n_hold);
        train_split.push(recs);
        holdout_split.push(hold);
    }
    let mut train_classes = order[..n_t].to_vec();
    let mut val_classes = order[n_t..n_t + n_v].to_vec();
    let mut novelty_classes = order[n_t + n_v..].to_vec();
    train_classes.sort_unstable();
    val_classes.sort_unstable();
    novelty_classes.sort_unstable();
    Ok(World {
        train_classes,
        val_classes,
        novelty_classes,
        train_split,
        holdout_split,
    })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Task {
    /// Global class ids; task-local label `i` is `classes[i]`.
    pub classes: Vec<usize>,
    pub seed: u64,
}

/// `k` distinct training classes, uniform without replacement.
pub fn sample_task<R: Rng + ?Sized>(world: &World, k: usize, rng: &mut R) -> Result<Task> {
    if k < 2 {
        return Err(Error::Config(format!("task size must be at least 2, got {k}")));
    }
    if k > world.train_classes.len() {
        return Err(Error::Config(format!(
            "task size {k} exceeds the {} training classes",
            world.train_classes.len()
        )));
    }
    let mut classes: Vec<usize> = world.train_classes.choose_multiple(rng, k).copied().collect();
    classes.sort_unstable();
    Ok(Task {
        classes,
        seed: rng.gen(),
    })
}

/// Critic accuracy of a gene: inherit into a fresh `spec` network, train on
/// the validation classes' train split, evaluate on their holdout split.
/// Non-finite training scores 0.
pub fn score_learngene(
    gene: &LearngeneWeights,
    spec: &NetworkSpec,
    world: &World,
    dataset: &ImageDataset,
    budget: &TrainBudget,
    seed_value: u64,
) -> Result<f64> {
    if world.val_classes.is_empty() {
        return Err(Error::EmptyDataset("validation classes".into()));
    }
    let spec = spec.with_head_classes(world.val_classes.len());
    let net = inherit(gene, &spec, &mut seed::rng(seed_value, &[0]))?;
    let train_set = world.samples(dataset, &world.val_classes, false);
    let holdout = world.samples(dataset, &world.val_classes, true);
    let budget = TrainBudget {
        seed: seed::derive(seed_value, &[1]),
        ..*budget
    };
    match train(net, &train_set, &budget) {
        Ok((net, _)) => evaluate(&net, &holdout),
        Err(Error::NonFiniteLoss { .. }) => Ok(0.0),
        Err(e) => Err(e),
    }
}

/// What a tournament needs to know about a contestant.
#[derive(Clone, Debug, PartialEq)]
pub struct Contestant {
    pub gene_id: String,
    pub score: f64,
    pub parameter_count: usize,
}

/// Higher score wins, then fewer parameters, then the smaller gene id.
fn beats(a: &Contestant, b: &Contestant) -> bool {
    match a.score.partial_cmp(&b.score) {
        Some(std::cmp::Ordering::Greater) => true,
        Some(std::cmp::Ordering::Less) => false,
        _ => (a.parameter_count, &a.gene_id) < (b.parameter_count, &b.gene_id),
    }
}

/// Shuffles the population into `⌈n/δ⌉` groups and returns the index of
/// each group's winner, in group order. With `random_winners` the winner of
/// each group is drawn uniformly instead.
pub fn tournament_select<R: Rng + ?Sized>(
    contestants: &[Contestant],
    group_size: usize,
    random_winners: bool,
    rng: &mut R,
) -> Result<Vec<usize>> {
    if contestants.is_empty() {
        return Err(Error::Config("tournament needs at least one contestant".into()));
    }
    if group_size == 0 {
        return Err(Error::Config("tournament size must be positive".into()));
    }
    let mut order: Vec<usize> = (0..contestants.len()).collect();
    order.shuffle(rng);
    Ok(order
        .chunks(group_size)
        .map(|group| {
            if random_winners {
                group[rng.gen_range(0..group.len())]
            } else {
                group
                    .iter()
                    .copied()
                    .reduce(|best, i| if beats(&contestants[i], &contestants[best]) { i } else { best })
                    .unwrap()
            }
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeNode {
    pub gene_id: String,
    pub parent: Option<usize>,
    pub generation: usize,
    pub critic_score: f64,
}

/// Ancestry forest; a node's parent always has a smaller index.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GeneTree {
    pub nodes: Vec<TreeNode>,
}

impl GeneTree {
    pub fn add(&mut self, gene_id: &str, parent: Option<usize>, generation: usize, critic_score: f64) -> usize {
        debug_assert!(parent.is_none_or(|p| p < self.nodes.len()));
        self.nodes.push(TreeNode {
            gene_id: gene_id.to_string(),
            parent,
            generation,
            critic_score,
        });
        self.nodes.len() - 1
    }

    pub fn roots(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.nodes.len()).filter(|&i| self.nodes[i].parent.is_none())
    }

    /// Nodes from `node` up to its root.
    pub fn lineage(&self, node: usize) -> Vec<usize> {
        let mut out = vec![node];
        let mut cur = node;
        while let Some(p) = self.nodes[cur].parent {
            out.push(p);
            cur = p;
        }
        out
    }

    /// Parent links point backwards, which rules out cycles.
    pub fn is_well_formed(&self) -> bool {
        self.nodes
            .iter()
            .enumerate()
            .all(|(i, n)| n.parent.is_none_or(|p| p < i))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GenePoolEntry {
    pub gene: LearngeneWeights,
    /// Accumulated score `ŝ`, starting at the critic score.
    pub score: f64,
    pub critic_score: f64,
    pub tree_node: usize,
    pub generation_admitted: usize,
}

/// Credits `η^τ · s` to every pooled ancestor on the path from
/// `parent_node` (τ = 0) to its root. Returns `(entry index, increment)`
/// pairs in walk order.
pub fn update_ancestor_scores(
    pool: &mut [GenePoolEntry],
    tree: &GeneTree,
    parent_node: usize,
    score: f64,
    decay: f64,
) -> Vec<(usize, f64)> {
    let mut credited = Vec::new();
    if parent_node >= tree.nodes.len() {
        log::warn!("winner's parent node {parent_node} is not in the gene tree; skipping score update");
        return credited;
    }
    for (tau, node) in tree.lineage(parent_node).into_iter().enumerate() {
        if let Some(i) = pool.iter().position(|e| e.tree_node == node) {
            let inc = decay.powi(tau as i32) * score;
            pool[i].score += inc;
            credited.push((i, inc));
        }
    }
    credited
}

/// A scored gene leaving a tournament.
#[derive(Clone, Debug, PartialEq)]
pub struct Candidate {
    pub gene: LearngeneWeights,
    pub critic_score: f64,
    pub parent_node: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Admission {
    Pooled,
    Evicted { gene_slot: usize },
    TreeOnly,
}

/// Adds winners to the tree and pool. In generation 0 every winner (best
/// first) is pooled up to capacity; afterwards only the top `admissions`
/// winners are candidates and, with a full pool, each replaces the lowest
/// `ŝ` entry only if its critic score is higher. `random` picks candidates
/// and evicted entries uniformly instead.
pub fn admit_to_pool<R: Rng + ?Sized>(
    pool: &mut Vec<GenePoolEntry>,
    tree: &mut GeneTree,
    winners: &[Candidate],
    admissions: usize,
    capacity: usize,
    generation: usize,
    random: bool,
    rng: &mut R,
) -> Vec<(String, Admission)> {
    let mut order: Vec<usize> = (0..winners.len()).collect();
    if random {
        order.shuffle(rng);
    } else {
        let contestants: Vec<Contestant> = winners
            .iter()
            .map(|w| Contestant {
                gene_id: w.gene.gene_id.clone(),
                score: w.critic_score,
                parameter_count: w.gene.parameter_count(),
            })
            .collect();
        order.sort_by(|&a, &b| {
            if beats(&contestants[a], &contestants[b]) {
                std::cmp::Ordering::Less
            } else if beats(&contestants[b], &contestants[a]) {
                std::cmp::Ordering::Greater
            } else {
                std::cmp::Ordering::Equal
            }
        });
    }
    let take = if generation == 0 { capacity } else { admissions };
    let mut out = Vec::new();
    for &i in order.iter().take(take) {
        let w = &winners[i];
        let node = tree.add(&w.gene.gene_id, w.parent_node, generation, w.critic_score);
        let entry = GenePoolEntry {
            gene: w.gene.clone(),
            score: w.critic_score,
            critic_score: w.critic_score,
            tree_node: node,
            generation_admitted: generation,
        };
        let outcome = if pool.len() < capacity {
            pool.push(entry);
            Admission::Pooled
        } else if capacity == 0 {
            Admission::TreeOnly
        } else if random {
            let slot = rng.gen_range(0..pool.len());
            pool[slot] = entry;
            Admission::Evicted { gene_slot: slot }
        } else {
            let slot = (0..pool.len())
                .reduce(|m, j| if pool[j].score < pool[m].score { j } else { m })
                .unwrap();
            if w.critic_score > pool[slot].score {
                pool[slot] = entry;
                Admission::Evicted { gene_slot: slot }
            } else {
                Admission::TreeOnly
            }
        };
        out.push((w.gene.gene_id.clone(), outcome));
    }
    out
}

/// `ŝ_i / Σ ŝ`, or uniform when every score is zero.
pub fn parent_probabilities(scores: &[f64]) -> Result<Vec<f64>> {
    if scores.is_empty() {
        return Err(Error::Invariant("parent sampling from an empty pool".into()));
    }
    if let Some(s) = scores.iter().find(|s| !(s.is_finite() && **s >= 0.0)) {
        return Err(Error::Invariant(format!("pool score {s} is negative or non-finite")));
    }
    let total: f64 = scores.iter().sum();
    if total == 0.0 {
        return Ok(vec![1.0 / scores.len() as f64; scores.len()]);
    }
    Ok(scores.iter().map(|s| s / total).collect())
}

/// Inverse-CDF draw from `probs`.
pub fn sample_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

/// Task size per generation: linear from `start` to `end` over the run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct KSchedule {
    pub start: usize,
    pub end: usize,
}

impl KSchedule {
    pub fn constant(k: usize) -> Self {
        KSchedule { start: k, end: k }
    }

    pub fn at(&self, generation: usize, generations: usize) -> usize {
        if generations <= 1 || self.start == self.end {
            return self.start;
        }
        let t = generation.min(generations - 1) as f64 / (generations - 1) as f64;
        (self.start as f64 + t * (self.end as f64 - self.start as f64)).round() as usize
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ablations {
    pub no_mutation: bool,
    pub random_tournaments_and_pool: bool,
    pub population_one: bool,
    pub no_evolution: bool,
}

impl Ablations {
    pub fn set(&mut self, flag: &str) -> Result<()> {
        match flag {
            "no_mutation" => self.no_mutation = true,
            "random_tournaments_and_pool" => self.random_tournaments_and_pool = true,
            "population_one" => self.population_one = true,
            "no_evolution" => self.no_evolution = true,
            _ => {
                return Err(Error::Config(format!(
                    "unknown ablation `{flag}` (expected no_mutation, random_tournaments_and_pool, population_one, no_evolution)"
                )))
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvolutionConfig {
    pub spec: String,
    pub population: usize,
    pub tournament_size: usize,
    pub pool_capacity: usize,
    pub admissions: usize,
    pub decay: f64,
    pub mutation: MutationParams,
    pub init_fraction: f64,
    pub k_schedule: KSchedule,
    pub train: TrainBudget,
    pub critic: TrainBudget,
    pub generations: usize,
    pub seed: u64,
    pub train_classes: usize,
    pub val_classes: usize,
    pub holdout_fraction: f64,
    pub ablations: Ablations,
    /// Worker threads; results do not depend on it.
    pub workers: usize,
}

impl Default for EvolutionConfig {
    fn default() -> Self {
        let budget = TrainBudget {
            epochs: 3,
            lr: 0.05,
            batch_size: 16,
            seed: 0,
            momentum: 0.0,
        };
        EvolutionConfig {
            spec: "mini-vgg-6".into(),
            population: 8,
            tournament_size: 2,
            pool_capacity: 10,
            admissions: 2,
            decay: 0.5,
            mutation: MutationParams::default(),
            init_fraction: 0.5,
            k_schedule: KSchedule::constant(4),
            train: budget,
            critic: budget,
            generations: 15,
            seed: 0,
            train_classes: 8,
            val_classes: 2,
            holdout_fraction: 0.2,
            ablations: Ablations::default(),
            workers: 1,
        }
    }
}

impl EvolutionConfig {
    pub fn population_size(&self) -> usize {
        if self.ablations.population_one {
            1
        } else {
            self.population
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        builtin_spec(&self.spec)?;
        if self.population == 0 {
            return bad("population must be positive".into());
        }
        if self.tournament_size < 2 && !self.ablations.population_one {
            return bad("tournament size must be at least 2".into());
        }
        if self.tournament_size > self.population {
            return bad(format!(
                "tournament size {} exceeds population {}",
                self.tournament_size, self.population
            ));
        }
        let winners = self.population.div_ceil(self.tournament_size);
        if self.admissions > winners && !self.ablations.population_one {
            return bad(format!("admissions {} exceed the {winners} winners", self.admissions));
        }
        if self.pool_capacity == 0 {
            return bad("pool capacity must be positive".into());
        }
        if !(self.decay > 0.0 && self.decay < 1.0) {
            return bad(format!("decay must be in (0, 1), got {}", self.decay));
        }
        if !(0.0..=1.0).contains(&self.mutation.p_m) || !(self.mutation.alpha >= 0.0) {
            return bad("mutation probability must be in [0, 1] and alpha non-negative".into());
        }
        if self.mutation.allow_empty_layers {
            return bad("evolution cannot extract genes with empty layers; allow_empty_layers must be off".into());
        }
        if !(self.init_fraction > 0.0 && self.init_fraction <= 1.0) {
            return bad(format!("init fraction must be in (0, 1], got {}", self.init_fraction));
        }
        let (lo, hi) = (
            self.k_schedule.start.min(self.k_schedule.end),
            self.k_schedule.start.max(self.k_schedule.end),
        );
        if lo < 2 || hi > self.train_classes {
            return bad(format!("task sizes must lie in 2..={}", self.train_classes));
        }
        for b in [&self.train, &self.critic] {
            if !(b.lr > 0.0) || b.batch_size == 0 || !(0.0..1.0).contains(&b.momentum) {
                return bad("training budgets need lr > 0, batch_size > 0, momentum in [0, 1)".into());
            }
        }
        Ok(())
    }

    pub fn network_spec(&self) -> Result<NetworkSpec> {
        builtin_spec(&self.spec)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IndividualRecord {
    pub gene_id: String,
    pub parent_id: Option<String>,
    pub task: Vec<usize>,
    pub train_accuracy: f64,
    pub critic_score: f64,
    pub failed: bool,
    /// `|K_l|` per main-path conv layer.
    pub kernel_sizes: Vec<usize>,
    #[serde(default)]
    pub parameter_count: usize,
    pub parameter_fraction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoolRecord {
    pub gene_id: String,
    pub score: f64,
    pub critic_score: f64,
    pub tree_node: usize,
    pub generation_admitted: usize,
    pub kernel_sizes: Vec<usize>,
    #[serde(default)]
    pub parameter_count: usize,
    pub parameter_fraction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub generation: usize,
    pub k: usize,
    pub individuals: Vec<IndividualRecord>,
    pub winners: Vec<String>,
    pub admissions: Vec<(String, Admission)>,
    pub pool: Vec<PoolRecord>,
    pub critic_mean: f64,
    pub critic_max: f64,
    pub critic_min: f64,
    pub pool_critic_mean: f64,
    pub mean_parameter_count: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvolutionState {
    /// Next generation to run.
    pub generation: usize,
    pub pool: Vec<GenePoolEntry>,
    pub tree: GeneTree,
    pub records: Vec<GenerationRecord>,
    pub config: EvolutionConfig,
}

impl EvolutionState {
    pub fn new(config: &EvolutionConfig) -> Self {
        EvolutionState {
            generation: 0,
            pool: Vec::new(),
            tree: GeneTree::default(),
            records: Vec::new(),
            config: config.clone(),
        }
    }

    /// Pool entry with the highest `ŝ` (ties: smaller parameter count, id).
    pub fn best(&self) -> Option<&GenePoolEntry> {
        self.pool.iter().reduce(|best, e| {
            let a = Contestant {
                gene_id: e.gene.gene_id.clone(),
                score: e.score,
                parameter_count: e.gene.parameter_count(),
            };
            let b = Contestant {
                gene_id: best.gene.gene_id.clone(),
                score: best.score,
                parameter_count: best.gene.parameter_count(),
            };
            if beats(&a, &b) {
                e
            } else {
                best
            }
        })
    }

    /// Pool entry with the highest critic score (same tie rules as `best`).
    /// `ŝ` keeps growing for long-lived entries, so early roots tend to win
    /// `best` even when later genes score higher on the critic.
    pub fn best_by_critic(&self) -> Option<&GenePoolEntry> {
        let key = |e: &GenePoolEntry| Contestant {
            gene_id: e.gene.gene_id.clone(),
            score: e.critic_score,
            parameter_count: e.gene.parameter_count(),
        };
        self.pool
            .iter()
            .reduce(|best, e| if beats(&key(e), &key(best)) { e } else { best })
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut pool_meta = Vec::new();
        let mut tensors = Vec::new();
        for (i, e) in self.pool.iter().enumerate() {
            let (gene, t) = gene_parts(&e.gene, &format!("p{i}."));
            tensors.extend(t);
            pool_meta.push(serde_json::json!({
                "gene": gene,
                "score": e.score,
                "critic_score": e.critic_score,
                "tree_node": e.tree_node,
                "generation_admitted": e.generation_admitted,
            }));
        }
        let meta = serde_json::json!({
            "generation": self.generation,
            "config": self.config,
            "tree": self.tree,
            "records": self.records,
            "pool": pool_meta,
        });
        let mut ck = Checkpoint::new("evolution", meta);
        for (n, s, d) in tensors {
            ck.push(n, s, d);
        }
        Ok(ck)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.kind != "evolution" {
            return Err(Error::Checkpoint(format!("expected an evolution checkpoint, found {}", ck.kind)));
        }
        let field = |k: &str| {
            ck.meta
                .get(k)
                .cloned()
                .ok_or_else(|| Error::Checkpoint(format!("manifest missing `{k}`")))
        };
        let pool_meta: Vec<serde_json::Value> = serde_json::from_value(field("pool")?)?;
        let mut pool = Vec::with_capacity(pool_meta.len());
        for (i, m) in pool_meta.iter().enumerate() {
            let num = |k: &str| m.get(k).cloned().ok_or_else(|| Error::Checkpoint(format!("pool entry missing `{k}`")));
            pool.push(GenePoolEntry {
                gene: gene_from_parts(&num("gene")?, ck, &format!("p{i}."))?,
                score: serde_json::from_value(num("score")?)?,
                critic_score: serde_json::from_value(num("critic_score")?)?,
                tree_node: serde_json::from_value(num("tree_node")?)?,
                generation_admitted: serde_json::from_value(num("generation_admitted")?)?,
            });
        }
        let state = EvolutionState {
            generation: serde_json::from_value(field("generation")?)?,
            config: serde_json::from_value(field("config")?)?,
            tree: serde_json::from_value(field("tree")?)?,
            records: serde_json::from_value(field("records")?)?,
            pool,
        };
        if !state.tree.is_well_formed() || state.pool.iter().any(|e| e.tree_node >= state.tree.nodes.len()) {
            return Err(Error::Checkpoint("gene tree is inconsistent".into()));
        }
        Ok(state)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint()?.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

struct IndividualOutcome {
    gene: LearngeneWeights,
    parent_node: Option<usize>,
    record: IndividualRecord,
}

/// Read-only inputs shared by a generation's workers.
pub struct Context<'a> {
    pub config: &'a EvolutionConfig,
    pub spec: NetworkSpec,
    pub world: World,
    pub dataset: &'a ImageDataset,
}

impl<'a> Context<'a> {
    pub fn new(config: &'a EvolutionConfig, dataset: &'a ImageDataset) -> Result<Self> {
        config.validate()?;
        let spec = config.network_spec()?;
        if dataset.header.image_shape != spec.input_shape {
            return Err(Error::Config(format!(
                "dataset images are {:?}, spec `{}` expects {:?}",
                dataset.header.image_shape, spec.name, spec.input_shape
            )));
        }
        let world = partition_world(
            dataset,
            config.train_classes,
            config.val_classes,
            config.holdout_fraction,
            config.seed,
        )?;
        Ok(Context {
            config,
            spec,
            world,
            dataset,
        })
    }

    fn budget(&self, base: &TrainBudget, path: &[u64]) -> TrainBudget {
        TrainBudget {
            seed: seed::derive(self.config.seed, path),
            ..*base
        }
    }

    pub fn critic_score(&self, gene: &LearngeneWeights, generation: usize, index: usize) -> Result<f64> {
        let s = seed::derive(self.config.seed, &[stream::CRITIC, generation as u64, index as u64]);
        score_learngene(gene, &self.spec, &self.world, self.dataset, &self.config.critic, s)
    }

    fn individual(
        &self,
        generation: usize,
        index: usize,
        parent: Option<(&GenePoolEntry, &LearngeneStructure)>,
    ) -> Result<IndividualOutcome> {
        let (g, i) = (generation as u64, index as u64);
        let master = self.config.seed;
        let k = self.config.k_schedule.at(generation, self.config.generations);
        let task = sample_task(&self.world, k, &mut seed::rng(master, &[stream::TASK, g, i]))?;
        let spec = self.spec.with_head_classes(k);
        let (start, structure) = match parent {
            None => {
                let w = NetworkWeights::<f32>::he_init(&spec, &mut seed::rng(master, &[stream::ANCESTOR, i]))?;
                let s = init_random_structure(
                    &self.spec,
                    self.config.init_fraction,
                    &mut seed::rng(master, &[stream::STRUCTURE, i]),
                )?;
                (w, s)
            }
            Some((entry, mutated)) => {
                let carried = restrict(&entry.gene, mutated)?;
                let w = inherit(&carried, &spec, &mut seed::rng(master, &[stream::INHERIT, g, i]))?;
                (w, mutated.clone())
            }
        };
        let gene_id = format!("g{generation}-{index}");
        let parent_id = parent.map(|(e, _)| e.gene.gene_id.clone());
        let data = self.world.samples(self.dataset, &task.classes, false);
        let budget = self.budget(&self.config.train, &[stream::TRAIN, g, i]);
        let (trained, train_accuracy, failed) = match train(start.clone(), &data, &budget) {
            Ok((w, acc)) => (w, acc, false),
            Err(Error::NonFiniteLoss { loss }) => {
                log::warn!("{gene_id}: training diverged (loss {loss}); scoring 0");
                (start, 0.0, true)
            }
            Err(e) => return Err(e),
        };
        let gene = extract_learngene(&trained, &structure)?.with_ids(gene_id.clone(), parent_id.clone());
        let critic_score = if failed {
            0.0
        } else {
            self.critic_score(&gene, generation, index)?
        };
        let record = IndividualRecord {
            gene_id,
            parent_id,
            task: task.classes,
            train_accuracy,
            critic_score,
            failed,
            kernel_sizes: structure.kernel_sizes(),
            parameter_count: gene.parameter_count(),
            parameter_fraction: parameter_fraction(&structure, &self.spec)?,
        };
        Ok(IndividualOutcome {
            gene,
            parent_node: parent.map(|(e, _)| e.tree_node),
            record,
        })
    }
}

/// The gene restricted to kernels also present in `structure` (mutation
/// can only remove inherited kernels; added ones start random).
fn restrict(gene: &LearngeneWeights, structure: &LearngeneStructure) -> Result<LearngeneWeights> {
    let mut out = gene.clone();
    for (gl, v) in out.structure.layers.iter_mut().zip(out.values.iter_mut()) {
        let keep_k: BTreeSet<usize> = match structure.layer(gl.layer_id) {
            Some(t) => gl.kernels.intersection(&t.kernels).copied().collect(),
            None => BTreeSet::new(),
        };
        let keep_c: BTreeSet<usize> = match structure.layer(gl.layer_id) {
            Some(t) => gl.channels.intersection(&t.channels).copied().collect(),
            None => BTreeSet::new(),
        };
        let area = v.area();
        let mut weights = Vec::with_capacity(keep_k.len() * keep_c.len() * area);
        let mut bias = Vec::with_capacity(keep_k.len());
        for (kr, k) in gl.kernels.iter().enumerate() {
            if !keep_k.contains(k) {
                continue;
            }
            bias.push(v.bias[kr]);
            for (cr, c) in gl.channels.iter().enumerate() {
                if keep_c.contains(c) {
                    let off = (kr * gl.channels.len() + cr) * area;
                    weights.extend_from_slice(&v.weights[off..off + area]);
                }
            }
        }
        gl.kernels = keep_k;
        gl.channels = keep_c;
        v.weights = weights;
        v.bias = bias;
    }
    out.check()?;
    Ok(out)
}

/// Runs `f(0..n)` on up to `workers` threads; results come back in index
/// order.
fn run_parallel<T: Send>(n: usize, workers: usize, f: impl Fn(usize) -> Result<T> + Sync) -> Result<Vec<T>> {
    let workers = workers.clamp(1, n.max(1));
    if workers == 1 {
        return (0..n).map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<T>>>> = Mutex::new((0..n).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= n {
                    break;
                }
                let r = f(i);
                slots.lock().unwrap()[i] = Some(r);
            });
        }
    });
    slots.into_inner().unwrap().into_iter().map(|r| r.unwrap()).collect()
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// One generation: parents, mutation, inheritance, training, extraction,
/// critics, tournaments, ancestor credit and pool admission.
pub fn run_generation(state: &mut EvolutionState, ctx: &Context) -> Result<GenerationRecord> {
    let config = ctx.config;
    let generation = state.generation;
    let g = generation as u64;
    let n = config.population_size();
    let master = config.seed;

    let parents: Vec<Option<(usize, LearngeneStructure)>> = if generation == 0 {
        vec![None; n]
    } else {
        if state.pool.is_empty() {
            return Err(Error::Invariant(format!("generation {generation} starts with an empty pool")));
        }
        let scores: Vec<f64> = state.pool.iter().map(|e| e.score).collect();
        let probs = parent_probabilities(&scores)?;
        let mut rng = seed::rng(master, &[stream::PARENTS, g]);
        (0..n)
            .map(|i| {
                let p = sample_index(&probs, &mut rng);
                let base = &state.pool[p].gene.structure;
                let s = if config.ablations.no_mutation {
                    base.clone()
                } else {
                    mutate(base, &config.mutation, &mut seed::rng(master, &[stream::MUTATION, g, i as u64]))
                };
                Some((p, s))
            })
            .collect()
    };

    let pool = &state.pool;
    let outcomes = run_parallel(n, config.workers, |i| {
        let parent = parents[i].as_ref().map(|(p, s)| (&pool[*p], s));
        ctx.individual(generation, i, parent)
    })?;

    let contestants: Vec<Contestant> = outcomes
        .iter()
        .map(|o| Contestant {
            gene_id: o.gene.gene_id.clone(),
            score: o.record.critic_score,
            parameter_count: o.gene.parameter_count(),
        })
        .collect();
    let random = config.ablations.random_tournaments_and_pool;
    let mut rng = seed::rng(master, &[stream::TOURNAMENT, g]);
    let group = if n == 1 { 1 } else { config.tournament_size };
    let winner_idx = tournament_select(&contestants, group, random, &mut rng)?;

    for &w in &winner_idx {
        if let Some(node) = outcomes[w].parent_node {
            update_ancestor_scores(&mut state.pool, &state.tree, node, outcomes[w].record.critic_score, config.decay);
        }
    }
    let winners: Vec<Candidate> = winner_idx
        .iter()
        .map(|&w| Candidate {
            gene: outcomes[w].gene.clone(),
            critic_score: outcomes[w].record.critic_score,
            parent_node: outcomes[w].parent_node,
        })
        .collect();
    let admissions = admit_to_pool(
        &mut state.pool,
        &mut state.tree,
        &winners,
        config.admissions.min(winners.len()),
        config.pool_capacity,
        generation,
        random,
        &mut rng,
    );

    let critic: Vec<f64> = outcomes.iter().map(|o| o.record.critic_score).collect();
    let pool_records = state
        .pool
        .iter()
        .map(|e| {
            Ok(PoolRecord {
                gene_id: e.gene.gene_id.clone(),
                score: e.score,
                critic_score: e.critic_score,
                tree_node: e.tree_node,
                generation_admitted: e.generation_admitted,
                kernel_sizes: e.gene.structure.kernel_sizes(),
                parameter_count: e.gene.parameter_count(),
                parameter_fraction: parameter_fraction(&e.gene.structure, &ctx.spec)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let pool_critic: Vec<f64> = state.pool.iter().map(|e| e.critic_score).collect();
    let record = GenerationRecord {
        generation,
        k: config.k_schedule.at(generation, config.generations),
        winners: winner_idx.iter().map(|&w| contestants[w].gene_id.clone()).collect(),
        admissions,
        pool: pool_records,
        critic_mean: mean(&critic),
        critic_max: critic.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        critic_min: critic.iter().copied().fold(f64::INFINITY, f64::min),
        pool_critic_mean: mean(&pool_critic),
        mean_parameter_count: mean(&outcomes.iter().map(|o| o.record.parameter_count as f64).collect::<Vec<_>>()),
        individuals: outcomes.into_iter().map(|o| o.record).collect(),
    };
    state.records.push(record.clone());
    state.generation += 1;
    Ok(record)
}

/// Where a run persists its records and checkpoints.
#[derive(Clone, Debug)]
pub struct RunDir {
    pub path: PathBuf,
}

impl RunDir {
    pub fn records(&self) -> PathBuf {
        self.path.join(RECORDS_FILE)
    }

    pub fn checkpoint(&self) -> PathBuf {
        self.path.join(CHECKPOINT_FILE)
    }

    pub fn config(&self) -> PathBuf {
        self.path.join(CONFIG_FILE)
    }

    pub fn write_config(&self, config: &EvolutionConfig) -> Result<()> {
        std::fs::create_dir_all(&self.path).map_err(|e| Error::io(&self.path, e))?;
        write_atomic(&self.config(), &serde_json::to_vec_pretty(config)?)
    }

    pub fn read_config(&self) -> Result<EvolutionConfig> {
        let path = self.config();
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        Ok(serde_json::from_slice(&bytes)?)
    }

    fn write_records(&self, records: &[GenerationRecord]) -> Result<()> {
        let mut text = Vec::new();
        for r in records {
            serde_json::to_writer(&mut text, r)?;
            text.write_all(b"\n").map_err(|e| Error::io(self.records(), e))?;
        }
        write_atomic(&self.records(), &text)
    }
}

pub fn read_records(path: &Path) -> Result<Vec<GenerationRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(serde_json::from_str(l)?))
        .collect()
}

/// Runs generations until `config.generations` are done, starting from
/// `resume` when given. With a run directory, records and a checkpoint are
/// written after every generation.
pub fn evolve(
    config: &EvolutionConfig,
    dataset: &ImageDataset,
    run_dir: Option<&RunDir>,
    resume: Option<EvolutionState>,
) -> Result<EvolutionState> {
    let ctx = Context::new(config, dataset)?;
    if let Some(dir) = run_dir {
        dir.write_config(config)?;
    }
    if config.ablations.no_evolution {
        let state = extract_without_evolution(&ctx, None)?;
        if let Some(dir) = run_dir {
            dir.write_records(&state.records)?;
            state.save(&dir.checkpoint())?;
        }
        return Ok(state);
    }
    let mut state = match resume {
        Some(s) => {
            if s.config.seed != config.seed || s.config.spec != config.spec {
                return Err(Error::Checkpoint("checkpoint was written by a run with a different seed or spec".into()));
            }
            EvolutionState {
                config: config.clone(),
                ..s
            }
        }
        None => EvolutionState::new(config),
    };
    while state.generation < config.generations {
        let r = run_generation(&mut state, &ctx)?;
        log::info!(
            "generation {}: critic mean {:.3} max {:.3}, pool mean {:.3}, pool size {}",
            r.generation,
            r.critic_mean,
            r.critic_max,
            r.pool_critic_mean,
            r.pool.len()
        );
        if let Some(dir) = run_dir {
            dir.write_records(&state.records)?;
            state.save(&dir.checkpoint())?;
        }
    }
    Ok(state)
}

/// The "no evolution" baseline: one network trained on every training class
/// for `generations` budgets, with a gene cut from it using `structure` (or a
/// random structure at the initial fraction). The returned state holds that
/// gene alone.
pub fn extract_without_evolution(ctx: &Context, structure: Option<&LearngeneStructure>) -> Result<EvolutionState> {
    let config = ctx.config;
    let master = config.seed;
    let classes = ctx.world.train_classes.clone();
    let spec = ctx.spec.with_head_classes(classes.len());
    let net = NetworkWeights::<f32>::he_init(&spec, &mut seed::rng(master, &[stream::ANCESTOR, u64::MAX]))?;
    let data = ctx.world.samples(ctx.dataset, &classes, false);
    let budget = TrainBudget {
        epochs: config.train.epochs * config.generations.max(1),
        ..ctx.budget(&config.train, &[stream::TRAIN, u64::MAX])
    };
    let (trained, acc) = train(net, &data, &budget)?;
    let structure = match structure {
        Some(s) => s.clone(),
        None => init_random_structure(&ctx.spec, config.init_fraction, &mut seed::rng(master, &[stream::STRUCTURE, u64::MAX]))?,
    };
    let gene = extract_learngene(&trained, &structure)?.with_ids("pretrained", None);
    let score = ctx.critic_score(&gene, 0, usize::MAX)?;
    let mut state = EvolutionState::new(config);
    let node = state.tree.add(&gene.gene_id, None, 0, score);
    let record = GenerationRecord {
        generation: 0,
        k: classes.len(),
        individuals: vec![IndividualRecord {
            gene_id: gene.gene_id.clone(),
            parent_id: None,
            task: classes,
            train_accuracy: acc,
            critic_score: score,
            failed: false,
            kernel_sizes: structure.kernel_sizes(),
            parameter_count: gene.parameter_count(),
            parameter_fraction: parameter_fraction(&structure, &ctx.spec)?,
        }],
        winners: vec![gene.gene_id.clone()],
        admissions: vec![(gene.gene_id.clone(), Admission::Pooled)],
        pool: vec![PoolRecord {
            gene_id: gene.gene_id.clone(),
            score,
            critic_score: score,
            tree_node: node,
            generation_admitted: 0,
            kernel_sizes: structure.kernel_sizes(),
            parameter_count: gene.parameter_count(),
            parameter_fraction: parameter_fraction(&structure, &ctx.spec)?,
        }],
        critic_mean: score,
        critic_max: score,
        critic_min: score,
        pool_critic_mean: score,
        mean_parameter_count: gene.parameter_count() as f64,
    };
    state.pool.push(GenePoolEntry {
        gene,
        score,
        critic_score: score,
        tree_node: node,
        generation_admitted: 0,
    });
    state.records.push(record);
    state.generation = config.generations;
    Ok(state)
}
