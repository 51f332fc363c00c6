//! Evaluation protocols for a finished gene: held-out fine-tuning against a
//! scratch twin, early-iteration probes, and episodic few-shot runs.
//!
//! None of them modify the gene they are given.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dataset::{ImageDataset, SampleSet};
use crate::engine::{evaluate, train, train_iterations, NetworkWeights, TrainBudget};
use crate::error::{Error, Result};
use crate::evolution::World;
use crate::genome::LearngeneWeights;
use crate::inheritance::inherit;
use crate::netspec::NetworkSpec;
use crate::seed;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinetuneOutcome {
    pub seed: u64,
    pub inherited: f64,
    pub scratch: f64,
}

fn check_classes(world: &World, classes: &[usize]) -> Result<()> {
    if classes.len() < 2 {
        return Err(Error::Config(format!("need at least 2 classes, got {}", classes.len())));
    }
    for &c in classes {
        if c >= world.train_split.len() {
            return Err(Error::Config(format!("class {c} is not in the dataset")));
        }
        if world.train_split[c].is_empty() || world.holdout_split[c].is_empty() {
            return Err(Error::EmptyDataset(format!("class {c} has an empty train or holdout split")));
        }
    }
    Ok(())
}

/// The gene inherited into `spec` and a He-initialized twin drawn from the
/// same stream, both trained under `budget` on the classes' train split and
/// scored on their holdout split.
pub fn heldout_finetune(
    gene: &LearngeneWeights,
    spec: &NetworkSpec,
    dataset: &ImageDataset,
    world: &World,
    classes: &[usize],
    budget: &TrainBudget,
    seed_value: u64,
) -> Result<FinetuneOutcome> {
    check_classes(world, classes)?;
    let spec = spec.with_head_classes(classes.len());
    let inherited = inherit(gene, &spec, &mut seed::rng(seed_value, &[0]))?;
    let scratch = NetworkWeights::<f32>::he_init(&spec, &mut seed::rng(seed_value, &[0]))?;
    let budget = TrainBudget {
        seed: seed::derive(seed_value, &[1]),
        ..*budget
    };
    let train_set = world.samples(dataset, classes, false);
    let holdout = world.samples(dataset, classes, true);
    let score = |net| -> Result<f64> {
        match train(net, &train_set, &budget) {
            Ok((net, _)) => evaluate(&net, &holdout),
            Err(Error::NonFiniteLoss { .. }) => Ok(0.0),
            Err(e) => Err(e),
        }
    };
    Ok(FinetuneOutcome {
        seed: seed_value,
        inherited: score(inherited)?,
        scratch: score(scratch)?,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeOptions {
    /// Checkpoints at which holdout accuracy is recorded; ascending.
    pub iterations: Vec<usize>,
    pub seeds: Vec<u64>,
    /// Learning rate, batch size and momentum; epochs are ignored.
    pub budget: TrainBudget,
}

impl Default for ProbeOptions {
    fn default() -> Self {
        ProbeOptions {
            iterations: vec![0, 10, 30, 100],
            seeds: vec![0, 1, 2, 3, 4],
            budget: TrainBudget {
                epochs: 0,
                lr: 0.05,
                batch_size: 16,
                seed: 0,
                momentum: 0.0,
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeRow {
    pub iterations: usize,
    pub learngene_mean: f64,
    pub learngene_std: f64,
    pub random_mean: f64,
    pub random_std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeTable {
    pub classes: Vec<usize>,
    pub rows: Vec<ProbeRow>,
    /// `per_seed[s][j]` is `(learngene, random)` accuracy for seed `s` at
    /// `iterations[j]`.
    pub per_seed: Vec<Vec<(f64, f64)>>,
}

impl ProbeTable {
    pub fn to_text(&self) -> String {
        let mut out = String::from("iterations\tlearngene\trandom_init\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{}\t{:.4} ± {:.4}\t{:.4} ± {:.4}\n",
                r.iterations, r.learngene_mean, r.learngene_std, r.random_mean, r.random_std
            ));
        }
        out
    }
}

/// Mean and sample standard deviation.
pub fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (0.0, 0.0);
    }
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (m, 0.0);
    }
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (m, var.sqrt())
}

fn accuracy_curve(
    mut net: NetworkWeights<f32>,
    train_set: &SampleSet,
    holdout: &SampleSet,
    iterations: &[usize],
    budget: &TrainBudget,
) -> Result<Vec<f64>> {
    let last = *iterations.last().unwrap();
    let mut out = Vec::with_capacity(iterations.len());
    let mut next = 0;
    let run = train_iterations(&mut net, train_set, last, budget, |done, w| {
        while next < iterations.len() && iterations[next] == done {
            out.push(evaluate(w, holdout)?);
            next += 1;
        }
        Ok(())
    });
    match run {
        Ok(()) => {}
        // Checkpoints after a divergence score chance.
        Err(Error::NonFiniteLoss { .. }) => out.resize(iterations.len(), 1.0 / train_set.classes as f64),
        Err(e) => return Err(e),
    }
    Ok(out)
}

/// Holdout accuracy of the inherited network and a He-initialized baseline
/// after each listed number of updates on the classes' train split.
pub fn probe_instinct(
    gene: &LearngeneWeights,
    spec: &NetworkSpec,
    dataset: &ImageDataset,
    world: &World,
    classes: &[usize],
    opts: &ProbeOptions,
) -> Result<ProbeTable> {
    check_classes(world, classes)?;
    if opts.iterations.is_empty() || opts.iterations.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config("probe iterations must be non-empty and strictly ascending".into()));
    }
    if opts.seeds.is_empty() {
        return Err(Error::Config("probe needs at least one seed".into()));
    }
    let spec = spec.with_head_classes(classes.len());
    let train_set = world.samples(dataset, classes, false);
    let holdout = world.samples(dataset, classes, true);
    let mut per_seed = Vec::with_capacity(opts.seeds.len());
    for &s in &opts.seeds {
        let budget = TrainBudget {
            seed: seed::derive(s, &[1]),
            ..opts.budget
        };
        let inherited = inherit(gene, &spec, &mut seed::rng(s, &[0]))?;
        let random = NetworkWeights::<f32>::he_init(&spec, &mut seed::rng(s, &[0]))?;
        let a = accuracy_curve(inherited, &train_set, &holdout, &opts.iterations, &budget)?;
        let b = accuracy_curve(random, &train_set, &holdout, &opts.iterations, &budget)?;
        per_seed.push(a.into_iter().zip(b).collect::<Vec<_>>());
    }
    let rows = opts
        .iterations
        .iter()
        .enumerate()
        .map(|(j, &it)| {
            let a: Vec<f64> = per_seed.iter().map(|r: &Vec<(f64, f64)>| r[j].0).collect();
            let b: Vec<f64> = per_seed.iter().map(|r| r[j].1).collect();
            let (am, asd) = mean_std(&a);
            let (bm, bsd) = mean_std(&b);
            ProbeRow {
                iterations: it,
                learngene_mean: am,
                learngene_std: asd,
                random_mean: bm,
                random_std: bsd,
            }
        })
        .collect();
    Ok(ProbeTable {
        classes: classes.to_vec(),
        rows,
        per_seed,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodicOptions {
    pub n_way: usize,
    /// Support images per class; 0 takes the whole train split.
    pub k_shot: usize,
    /// Query images per class; 0 takes the whole holdout split.
    pub queries: usize,
    pub episodes: usize,
    pub budget: TrainBudget,
    pub seed: u64,
}

impl Default for EpisodicOptions {
    fn default() -> Self {
        EpisodicOptions {
            n_way: 2,
            k_shot: 5,
            queries: 15,
            episodes: 20,
            budget: TrainBudget {
                epochs: 10,
                lr: 0.05,
                batch_size: 16,
                seed: 0,
                momentum: 0.0,
            },
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodicResult {
    pub accuracies: Vec<f64>,
    pub mean: f64,
    /// Half-width of the normal-approximation 95% interval.
    pub ci95: f64,
}

/// Per-episode seed; episode `e` inherits with `rng(s, [0])` and trains with
/// `derive(s, [1])`, the same layout `heldout_finetune` uses.
pub fn episode_seed(master: u64, episode: usize) -> u64 {
    seed::derive(master, &[episode as u64])
}

/// Few-shot episodes over `classes`: each samples `n_way` classes, `k_shot`
/// support images from their train split and `queries` query images from
/// their holdout split, inherits the gene into `target`, fine-tunes on the
/// support set and scores the query set.
pub fn episodic_eval(
    gene: &LearngeneWeights,
    dataset: &ImageDataset,
    world: &World,
    classes: &[usize],
    target: &NetworkSpec,
    opts: &EpisodicOptions,
) -> Result<EpisodicResult> {
    if opts.episodes == 0 {
        return Err(Error::Config("episodic evaluation needs at least one episode".into()));
    }
    if opts.n_way < 2 || opts.n_way > classes.len() {
        return Err(Error::Config(format!(
            "n_way must be in 2..={} for {} candidate classes",
            classes.len(),
            classes.len()
        )));
    }
    check_classes(world, classes)?;
    for &c in classes {
        let (tr, ho) = (world.train_split[c].len(), world.holdout_split[c].len());
        if tr < opts.k_shot || ho < opts.queries {
            return Err(Error::EmptyDataset(format!(
                "class {c} has {tr} train and {ho} holdout records, episodes need {} and {}",
                opts.k_shot, opts.queries
            )));
        }
    }
    let spec = target.with_head_classes(opts.n_way);
    let mut accuracies = Vec::with_capacity(opts.episodes);
    for e in 0..opts.episodes {
        let s = episode_seed(opts.seed, e);
        let mut rng = seed::rng(s, &[2]);
        let mut chosen: Vec<usize> = classes.choose_multiple(&mut rng, opts.n_way).copied().collect();
        chosen.sort_unstable();
        let pick = |split: &[usize], n: usize, rng: &mut seed::Rng| -> Vec<usize> {
            if n == 0 || n >= split.len() {
                split.to_vec()
            } else {
                split.choose_multiple(rng, n).copied().collect()
            }
        };
        let support: Vec<Vec<usize>> = chosen
            .iter()
            .map(|&c| pick(&world.train_split[c], opts.k_shot, &mut rng))
            .collect();
        let query: Vec<Vec<usize>> = chosen
            .iter()
            .map(|&c| pick(&world.holdout_split[c], opts.queries, &mut rng))
            .collect();
        let support = SampleSet::from_classes(dataset, &chosen, &support);
        let query = SampleSet::from_classes(dataset, &chosen, &query);
        let net = inherit(gene, &spec, &mut seed::rng(s, &[0]))?;
        let budget = TrainBudget {
            seed: seed::derive(s, &[1]),
            ..opts.budget
        };
        let acc = match train(net, &support, &budget) {
            Ok((net, _)) => evaluate(&net, &query)?,
            Err(Error::NonFiniteLoss { .. }) => 0.0,
            Err(err) => return Err(err),
        };
        accuracies.push(acc);
    }
    let (mean, sd) = mean_std(&accuracies);
    Ok(EpisodicResult {
        mean,
        ci95: 1.96 * sd / (accuracies.len() as f64).sqrt(),
        accuracies,
    })
}
