//! Flat `key = value` run configuration.
//!
//! Every field has exactly one key; unknown keys, sections and repeated keys
//! are rejected. `RunConfig::to_ini` writes every key, and parsing that text
//! gives back the same configuration.

use std::path::{Path, PathBuf};

use ini::Ini;
use serde::{Deserialize, Serialize};

use crate::dataset::{load_dataset, DatasetFormat, ImageDataset};
use crate::engine::TrainBudget;
use crate::error::{Error, Result};
use crate::evolution::{Ablations, EvolutionConfig};
use crate::protocols::{EpisodicOptions, ProbeOptions};
use crate::synthetic::{generate, SyntheticOptions};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum DatasetSource {
    Synthetic(SyntheticOptions),
    File {
        path: PathBuf,
        format: DatasetFormat,
        /// Halve the image side (32x32 CIFAR to 16x16) after loading.
        downsample: bool,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub evolution: EvolutionConfig,
    pub dataset: DatasetSource,
    /// Records kept per class after loading; 0 keeps all.
    pub max_per_class: usize,
    pub output: PathBuf,
    pub finetune: TrainBudget,
    pub probe: ProbeOptions,
    pub episodic: EpisodicOptions,
    /// Seeds for the fine-tune comparison and other repeated protocols.
    pub seeds: Vec<u64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            evolution: EvolutionConfig::default(),
            dataset: DatasetSource::Synthetic(SyntheticOptions::default()),
            max_per_class: 0,
            output: PathBuf::from("run"),
            finetune: TrainBudget {
                epochs: 3,
                ..EvolutionConfig::default().critic
            },
            probe: ProbeOptions::default(),
            episodic: EpisodicOptions::default(),
            seeds: vec![0, 1, 2, 3, 4],
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{value}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(Error::Config(format!("`{key}`: expected true or false, got `{value}`"))),
    }
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

fn ablation_list(a: &Ablations) -> String {
    let mut out = Vec::new();
    if a.no_mutation {
        out.push("no_mutation");
    }
    if a.random_tournaments_and_pool {
        out.push("random_tournaments_and_pool");
    }
    if a.population_one {
        out.push("population_one");
    }
    if a.no_evolution {
        out.push("no_evolution");
    }
    out.join(",")
}

fn budget_entries(prefix: &str, b: &TrainBudget, with_epochs: bool, out: &mut Vec<(String, String)>) {
    if with_epochs {
        out.push((format!("{prefix}_epochs"), b.epochs.to_string()));
    }
    out.push((format!("{prefix}_lr"), b.lr.to_string()));
    out.push((format!("{prefix}_batch_size"), b.batch_size.to_string()));
    out.push((format!("{prefix}_momentum"), b.momentum.to_string()));
}

fn set_budget(b: &mut TrainBudget, field: &str, key: &str, value: &str) -> Result<bool> {
    match field {
        "epochs" => b.epochs = parse(key, value)?,
        "lr" => b.lr = parse(key, value)?,
        "batch_size" => b.batch_size = parse(key, value)?,
        "momentum" => b.momentum = parse(key, value)?,
        _ => return Ok(false),
    }
    Ok(true)
}

impl RunConfig {
    /// Every key with its current value, in a fixed order.
    pub fn entries(&self) -> Vec<(String, String)> {
        let e = &self.evolution;
        let mut out: Vec<(String, String)> = vec![
            ("spec".into(), e.spec.clone()),
            ("population".into(), e.population.to_string()),
            ("tournament_size".into(), e.tournament_size.to_string()),
            ("pool_capacity".into(), e.pool_capacity.to_string()),
            ("admissions".into(), e.admissions.to_string()),
            ("decay".into(), e.decay.to_string()),
            ("mutation_p".into(), e.mutation.p_m.to_string()),
            ("mutation_alpha".into(), e.mutation.alpha.to_string()),
            ("mutation_allow_empty".into(), e.mutation.allow_empty_layers.to_string()),
            ("init_fraction".into(), e.init_fraction.to_string()),
            ("task_classes_start".into(), e.k_schedule.start.to_string()),
            ("task_classes_end".into(), e.k_schedule.end.to_string()),
        ];
        budget_entries("train", &e.train, true, &mut out);
        budget_entries("critic", &e.critic, true, &mut out);
        out.extend([
            ("generations".into(), e.generations.to_string()),
            ("seed".into(), e.seed.to_string()),
            ("train_classes".into(), e.train_classes.to_string()),
            ("val_classes".into(), e.val_classes.to_string()),
            ("holdout_fraction".into(), e.holdout_fraction.to_string()),
            ("ablations".into(), ablation_list(&e.ablations)),
            ("workers".into(), e.workers.to_string()),
        ]);
        match &self.dataset {
            DatasetSource::Synthetic(s) => out.extend([
                ("dataset".into(), "synthetic".into()),
                ("synthetic_classes".into(), s.classes.to_string()),
                ("synthetic_per_class".into(), s.per_class.to_string()),
                ("synthetic_size".into(), s.size.to_string()),
                ("synthetic_shapes".into(), s.shapes.to_string()),
                ("synthetic_noise".into(), s.noise.to_string()),
                ("synthetic_contrast".into(), s.pattern_contrast.to_string()),
                ("synthetic_seed".into(), s.seed.to_string()),
            ]),
            DatasetSource::File {
                path,
                format,
                downsample,
            } => out.extend([
                ("dataset".into(), path.display().to_string()),
                (
                    "dataset_format".into(),
                    match format {
                        DatasetFormat::FlatRecords => "flat-records".into(),
                        DatasetFormat::Cifar10Binary => "cifar10-binary".into(),
                    },
                ),
                ("downsample".into(), downsample.to_string()),
            ]),
        }
        out.push(("max_per_class".into(), self.max_per_class.to_string()));
        out.push(("output".into(), self.output.display().to_string()));
        budget_entries("finetune", &self.finetune, true, &mut out);
        out.push(("probe_iterations".into(), join(&self.probe.iterations)));
        budget_entries("probe", &self.probe.budget, false, &mut out);
        let ep = &self.episodic;
        out.extend([
            ("episodic_n_way".into(), ep.n_way.to_string()),
            ("episodic_k_shot".into(), ep.k_shot.to_string()),
            ("episodic_queries".into(), ep.queries.to_string()),
            ("episodic_episodes".into(), ep.episodes.to_string()),
        ]);
        budget_entries("episodic", &ep.budget, true, &mut out);
        out.push(("seeds".into(), join(&self.seeds)));
        out
    }

    pub fn to_ini(&self) -> String {
        self.entries()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    /// Applies one `key = value` pair.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let e = &mut self.evolution;
        match key {
            "spec" => e.spec = v.to_string(),
            "population" => e.population = parse(key, v)?,
            "tournament_size" => e.tournament_size = parse(key, v)?,
            "pool_capacity" => e.pool_capacity = parse(key, v)?,
            "admissions" => e.admissions = parse(key, v)?,
            "decay" => e.decay = parse(key, v)?,
            "mutation_p" => e.mutation.p_m = parse(key, v)?,
            "mutation_alpha" => e.mutation.alpha = parse(key, v)?,
            "mutation_allow_empty" => e.mutation.allow_empty_layers = parse_bool(key, v)?,
            "init_fraction" => e.init_fraction = parse(key, v)?,
            "task_classes" => {
                let k = parse(key, v)?;
                e.k_schedule.start = k;
                e.k_schedule.end = k;
            }
            "task_classes_start" => e.k_schedule.start = parse(key, v)?,
            "task_classes_end" => e.k_schedule.end = parse(key, v)?,
            "generations" => e.generations = parse(key, v)?,
            "seed" => e.seed = parse(key, v)?,
            "train_classes" => e.train_classes = parse(key, v)?,
            "val_classes" => e.val_classes = parse(key, v)?,
            "holdout_fraction" => e.holdout_fraction = parse(key, v)?,
            "ablations" => {
                e.ablations = Ablations::default();
                for flag in v.split(',').map(str::trim).filter(|s| !s.is_empty()) {
                    e.ablations.set(flag)?;
                }
            }
            "workers" => e.workers = parse(key, v)?,
            "dataset" => {
                self.dataset = if v == "synthetic" {
                    match &self.dataset {
                        DatasetSource::Synthetic(_) => return Ok(()),
                        _ => DatasetSource::Synthetic(SyntheticOptions::default()),
                    }
                } else {
                    let (format, downsample) = match &self.dataset {
                        DatasetSource::File { format, downsample, .. } => (*format, *downsample),
                        _ => (DatasetFormat::FlatRecords, false),
                    };
                    DatasetSource::File {
                        path: PathBuf::from(v),
                        format,
                        downsample,
                    }
                }
            }
            "dataset_format" | "downsample" => match &mut self.dataset {
                DatasetSource::File { format, downsample, .. } => {
                    if key == "downsample" {
                        *downsample = parse_bool(key, v)?;
                    } else {
                        *format = v.parse()?;
                    }
                }
                _ => return Err(Error::Config(format!("`{key}` needs a dataset file (set `dataset` first)"))),
            },
            "max_per_class" => self.max_per_class = parse(key, v)?,
            "output" => self.output = PathBuf::from(v),
            "probe_iterations" => self.probe.iterations = parse_list(key, v)?,
            "episodic_n_way" => self.episodic.n_way = parse(key, v)?,
            "episodic_k_shot" => self.episodic.k_shot = parse(key, v)?,
            "episodic_queries" => self.episodic.queries = parse(key, v)?,
            "episodic_episodes" => self.episodic.episodes = parse(key, v)?,
            "seeds" => self.seeds = parse_list(key, v)?,
            _ => {
                if let Some(field) = key.strip_prefix("synthetic_") {
                    let s = match &mut self.dataset {
                        DatasetSource::Synthetic(s) => s,
                        _ => return Err(Error::Config(format!("`{key}` needs `dataset = synthetic`"))),
                    };
                    match field {
                        "classes" => s.classes = parse(key, v)?,
                        "per_class" => s.per_class = parse(key, v)?,
                        "size" => s.size = parse(key, v)?,
                        "shapes" => s.shapes = parse(key, v)?,
                        "noise" => s.noise = parse(key, v)?,
                        "contrast" => s.pattern_contrast = parse(key, v)?,
                        "seed" => s.seed = parse(key, v)?,
                        _ => return Err(Error::Config(format!("unknown key `{key}`"))),
                    }
                    return Ok(());
                }
                let (prefix, field) = key.split_once('_').unwrap_or((key, ""));
                let budget = match prefix {
                    "train" => Some(&mut e.train),
                    "critic" => Some(&mut e.critic),
                    "finetune" => Some(&mut self.finetune),
                    "probe" if field != "epochs" => Some(&mut self.probe.budget),
                    "episodic" => Some(&mut self.episodic.budget),
                    _ => None,
                };
                let known = match budget {
                    Some(b) => set_budget(b, field, key, v)?,
                    None => false,
                };
                if !known {
                    return Err(Error::Config(format!("unknown key `{key}`")));
                }
            }
        }
        Ok(())
    }

    /// Defaults overridden by the pairs in `text`, applied in file order.
    pub fn from_ini_str(text: &str) -> Result<RunConfig> {
        let ini = Ini::load_from_str(text).map_err(|e| Error::Config(format!("config syntax: {e}")))?;
        let mut cfg = RunConfig::default();
        let mut seen = std::collections::BTreeSet::new();
        for (section, props) in ini.iter() {
            if let Some(name) = section {
                return Err(Error::Config(format!(
                    "sections are not supported (found `[{name}]`); use flat keys"
                )));
            }
            for (k, v) in props.iter() {
                if !seen.insert(k.to_string()) {
                    return Err(Error::Config(format!("key `{k}` is set twice")));
                }
                cfg.set(k, v)?;
            }
        }
        Ok(cfg)
    }

    /// Reads and validates a config file; a dataset file it names must exist.
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg = RunConfig::from_ini_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.evolution.validate()?;
        if self.seeds.is_empty() {
            return Err(Error::Config("`seeds` must list at least one seed".into()));
        }
        if let DatasetSource::File { path, .. } = &self.dataset {
            if !path.exists() {
                return Err(Error::Config(format!("dataset `{}` does not exist", path.display())));
            }
        }
        Ok(())
    }

    pub fn load_dataset(&self) -> Result<ImageDataset> {
        let ds = match &self.dataset {
            DatasetSource::Synthetic(s) => generate(s)?,
            DatasetSource::File {
                path,
                format,
                downsample,
            } => {
                let ds = load_dataset(path, *format)?;
                if *downsample {
                    ds.downsample2()
                } else {
                    ds
                }
            }
        };
        Ok(if self.max_per_class > 0 {
            ds.truncate_per_class(self.max_per_class)
        } else {
            ds
        })
    }
}
