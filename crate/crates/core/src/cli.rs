//! Command-line front end. `dispatch` returns the process exit status:
//! 0 on success, 1 on usage errors, 2 on runtime errors.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::checkpoint::{write_atomic, Checkpoint};
use crate::config::RunConfig;
use crate::dataset::{load_dataset, DatasetFormat};
use crate::engine::grad_check;
use crate::error::{Error, Result};
use crate::evolution::{evolve, partition_world, EvolutionState, RunDir, World};
use crate::genome::{validate_structure, LearngeneWeights};
use crate::inheritance::{inherit_with_plan, InheritOptions};
use crate::netspec::{builtin_spec, NetworkSpec};
use crate::protocols::{episodic_eval, heldout_finetune, probe_instinct};
use crate::report::report;
use crate::seed;

#[derive(Parser, Debug)]
#[command(name = "learngene", version, about = "Evolve, inherit and evaluate learngenes")]
struct Cli {
    /// Run configuration (`key = value` lines, `#` comments).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Continue from the checkpoint in the output directory.
    #[arg(long, global = true)]
    resume: bool,
    /// Ablation flag; repeatable.
    #[arg(long, global = true)]
    ablation: Vec<String>,
    /// Output file or directory, depending on the command.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the generational loop and write records, checkpoint and best gene.
    Evolve {
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        generations: Option<usize>,
    },
    /// Write a descendant network initialized from a gene.
    Inherit {
        /// Learngene checkpoint, or an evolution checkpoint (its best gene).
        #[arg(long)]
        gene: PathBuf,
        /// Built-in spec name.
        #[arg(long)]
        target: String,
        /// Conv widths replacing the target's.
        #[arg(long, value_delimiter = ',')]
        widths: Vec<usize>,
        /// 1-based conv positions after which PIM layers are inserted.
        #[arg(long, value_delimiter = ',')]
        pim_positions: Vec<usize>,
    },
    /// Fine-tune inherited and scratch twins on held-out plus novelty classes.
    Eval {
        #[arg(long)]
        gene: PathBuf,
    },
    /// Accuracy after few updates on novelty classes, gene versus random init.
    Probe {
        #[arg(long)]
        gene: PathBuf,
        #[arg(long, value_delimiter = ',')]
        iterations: Vec<usize>,
    },
    /// Few-shot episodes on novelty classes.
    Episodic {
        #[arg(long)]
        gene: PathBuf,
        #[arg(long)]
        target: Option<String>,
        #[arg(long, value_delimiter = ',')]
        widths: Vec<usize>,
        #[arg(long)]
        n_way: Option<usize>,
        #[arg(long)]
        k_shot: Option<usize>,
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Summarize a run directory into report.csv and summary.txt.
    Report {
        /// Run directory (defaults to --out, then the configured output).
        run: Option<PathBuf>,
    },
    /// Compare analytic gradients with central differences.
    GradCheck {
        #[arg(long, default_values_t = vec!["mini-res-6".to_string()])]
        spec: Vec<String>,
        #[arg(long, default_value_t = 5)]
        seeds: u64,
        #[arg(long, default_value_t = 20)]
        coords: usize,
        #[arg(long, default_value_t = 2)]
        batch: usize,
        #[arg(long, default_value_t = 1e-3)]
        epsilon: f64,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
    },
    /// Check a gene, dataset or config file.
    Validate {
        #[arg(long)]
        gene: Option<PathBuf>,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long, default_value = "flat-records")]
        format: String,
    },
}

enum Failure {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Runtime(e)
    }
}

type Outcome = std::result::Result<(), Failure>;

/// Parses `argv` (program name first) and runs the command.
pub fn dispatch<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{text}");
                    0
                }
                _ => {
                    let _ = write!(err, "{text}");
                    1
                }
            };
        }
    };
    match run(cli, out) {
        Ok(()) => 0,
        Err(Failure::Usage(m)) => {
            let _ = writeln!(err, "error: {m}\n\nFor more information, try '--help'.");
            1
        }
        Err(Failure::Runtime(e)) => {
            let _ = writeln!(err, "error: {e}");
            2
        }
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.evolution.seed = s;
    }
    for a in &cli.ablation {
        cfg.evolution.ablations.set(a)?;
    }
    Ok(cfg)
}

/// A learngene checkpoint, or the best pool gene of an evolution checkpoint.
pub fn load_gene(path: &Path) -> Result<LearngeneWeights> {
    let ck = Checkpoint::load(path)?;
    match ck.kind.as_str() {
        "learngene" => LearngeneWeights::from_checkpoint(&ck),
        "evolution" => {
            let state = EvolutionState::from_checkpoint(&ck)?;
            state
                .best()
                .map(|e| e.gene.clone())
                .ok_or_else(|| Error::Checkpoint("evolution checkpoint has an empty pool".into()))
        }
        other => Err(Error::Checkpoint(format!("`{}` holds a {other} checkpoint, not a gene", path.display()))),
    }
}

fn target_spec(name: &str, widths: &[usize]) -> Result<NetworkSpec> {
    let spec = builtin_spec(name)?;
    if widths.is_empty() {
        Ok(spec)
    } else {
        spec.with_widths(&format!("{name}-custom"), widths)
    }
}

fn world_of(cfg: &RunConfig) -> Result<(crate::dataset::ImageDataset, World)> {
    let ds = cfg.load_dataset()?;
    let e = &cfg.evolution;
    let world = partition_world(&ds, e.train_classes, e.val_classes, e.holdout_fraction, e.seed)?;
    Ok((ds, world))
}

fn emit(out: &mut dyn Write, path: Option<&Path>, text: &str) -> Result<()> {
    if let Some(p) = path {
        write_atomic(p, text.as_bytes())?;
    }
    out.write_all(text.as_bytes()).map_err(|e| Error::io("<stdout>", e))
}

fn run(cli: Cli, out: &mut dyn Write) -> Outcome {
    match &cli.command {
        Command::Evolve { workers, generations } => {
            let mut cfg = load_config(&cli)?;
            if let Some(w) = workers {
                cfg.evolution.workers = *w;
            }
            if let Some(g) = generations {
                cfg.evolution.generations = *g;
            }
            if let Some(o) = &cli.out {
                cfg.output = o.clone();
            }
            cfg.validate()?;
            let dir = RunDir {
                path: cfg.output.clone(),
            };
            let resume = if cli.resume {
                let p = dir.checkpoint();
                if !p.exists() {
                    return Err(Failure::Usage(format!("--resume: no checkpoint at {}", p.display())));
                }
                Some(EvolutionState::load(&p)?)
            } else {
                None
            };
            let ds = cfg.load_dataset()?;
            std::fs::create_dir_all(&dir.path).map_err(|e| Error::io(&dir.path, e))?;
            write_atomic(&dir.path.join("config.ini"), cfg.to_ini().as_bytes())?;
            let state = evolve(&cfg.evolution, &ds, Some(&dir), resume)?;
            if let Some(best) = state.best() {
                best.gene.save(&dir.path.join("best.lgck"))?;
                let _ = writeln!(
                    out,
                    "{} generations; best gene {} (score {:.4}, critic {:.4}, {} parameters) -> {}",
                    state.generation,
                    best.gene.gene_id,
                    best.score,
                    best.critic_score,
                    best.gene.parameter_count(),
                    dir.path.join("best.lgck").display()
                );
            }
            Ok(())
        }
        Command::Inherit {
            gene,
            target,
            widths,
            pim_positions,
        } => {
            let path = cli
                .out
                .clone()
                .ok_or_else(|| Failure::Usage("inherit needs --out <file>".into()))?;
            let gene = load_gene(gene)?;
            let spec = target_spec(target, widths)?;
            let opts = InheritOptions {
                pim_positions: if pim_positions.is_empty() {
                    None
                } else {
                    Some(pim_positions.clone())
                },
            };
            let s = cli.seed.unwrap_or(0);
            let (net, plan) = inherit_with_plan(&gene, &spec, &opts, &mut seed::rng(s, &[0]))?;
            net.save(&path)?;
            let _ = writeln!(
                out,
                "{} -> {} ({} parameters, PIM at {:?}) -> {}",
                gene.gene_id,
                spec.name,
                net.parameter_count(),
                plan.pim_positions,
                path.display()
            );
            Ok(())
        }
        Command::Eval { gene } => {
            let cfg = load_config(&cli)?;
            let gene = load_gene(gene)?;
            let (ds, world) = world_of(&cfg)?;
            let mut classes = world.val_classes.clone();
            classes.extend(&world.novelty_classes);
            let spec = cfg.evolution.network_spec()?;
            let mut text = format!("classes {classes:?}\nseed\tinherited\tscratch\n");
            let mut wins = 0;
            for &s in &cfg.seeds {
                let r = heldout_finetune(&gene, &spec, &ds, &world, &classes, &cfg.finetune, s)?;
                wins += (r.inherited > r.scratch) as usize;
                text.push_str(&format!("{}\t{:.4}\t{:.4}\n", s, r.inherited, r.scratch));
            }
            text.push_str(&format!("inherited ahead in {wins} of {} seeds\n", cfg.seeds.len()));
            emit(out, cli.out.as_deref(), &text)?;
            Ok(())
        }
        Command::Probe { gene, iterations } => {
            let mut cfg = load_config(&cli)?;
            if !iterations.is_empty() {
                cfg.probe.iterations = iterations.clone();
            }
            cfg.probe.seeds = cfg.seeds.clone();
            let gene = load_gene(gene)?;
            let (ds, world) = world_of(&cfg)?;
            let spec = cfg.evolution.network_spec()?;
            let table = probe_instinct(&gene, &spec, &ds, &world, &world.novelty_classes, &cfg.probe)?;
            emit(out, cli.out.as_deref(), &table.to_text())?;
            Ok(())
        }
        Command::Episodic {
            gene,
            target,
            widths,
            n_way,
            k_shot,
            episodes,
        } => {
            let mut cfg = load_config(&cli)?;
            let ep = &mut cfg.episodic;
            ep.n_way = n_way.unwrap_or(ep.n_way);
            ep.k_shot = k_shot.unwrap_or(ep.k_shot);
            ep.episodes = episodes.unwrap_or(ep.episodes);
            ep.seed = cfg.evolution.seed;
            let gene = load_gene(gene)?;
            let (ds, world) = world_of(&cfg)?;
            let spec = target_spec(target.as_deref().unwrap_or(&cfg.evolution.spec), widths)?;
            let r = episodic_eval(&gene, &ds, &world, &world.novelty_classes, &spec, &cfg.episodic)?;
            let text = format!(
                "{}-way {}-shot, {} episodes on {}: {:.4} ± {:.4}\n",
                cfg.episodic.n_way, cfg.episodic.k_shot, cfg.episodic.episodes, spec.name, r.mean, r.ci95
            );
            emit(out, cli.out.as_deref(), &text)?;
            Ok(())
        }
        Command::Report { run } => {
            let path = match (run, &cli.out, &cli.config) {
                (Some(r), _, _) => r.clone(),
                (None, Some(o), _) => o.clone(),
                (None, None, Some(_)) => load_config(&cli)?.output,
                _ => return Err(Failure::Usage("report needs a run directory".into())),
            };
            let rep = report(&RunDir { path })?;
            let _ = write!(out, "{}", rep.summary);
            Ok(())
        }
        Command::GradCheck {
            spec,
            seeds,
            coords,
            batch,
            epsilon,
            tolerance,
        } => {
            let mut worst = 0.0f64;
            for name in spec {
                let s = builtin_spec(name)?;
                for sd in 0..*seeds {
                    let r = grad_check(&s, sd, *coords, *batch, *epsilon)?;
                    let _ = writeln!(
                        out,
                        "{name} seed {sd}: {} coordinates over {:?}, max relative error {:.3e} (f32 path {:.3e}), {} kinks redrawn",
                        r.entries.len(),
                        r.kinds(),
                        r.max_rel_error(),
                        r.entries.iter().map(|e| e.rel_error_f32).fold(0.0, f64::max),
                        r.kinks_skipped
                    );
                    worst = worst.max(r.max_rel_error());
                }
            }
            if worst > *tolerance {
                return Err(Error::Invariant(format!(
                    "gradient check failed: max relative error {worst:.3e} > {tolerance:e}"
                ))
                .into());
            }
            Ok(())
        }
        Command::Validate { gene, dataset, format } => {
            if gene.is_none() && dataset.is_none() && cli.config.is_none() {
                return Err(Failure::Usage("validate needs --gene, --dataset or --config".into()));
            }
            if let Some(p) = &cli.config {
                RunConfig::load(p)?;
                let _ = writeln!(out, "config {}: ok", p.display());
            }
            if let Some(p) = gene {
                let g = load_gene(p)?;
                let v = validate_structure(&g.structure, &g.spec);
                if !v.is_empty() {
                    let msg = v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ");
                    return Err(Error::InvalidStructure(msg).into());
                }
                let _ = writeln!(
                    out,
                    "gene {}: ok, kernel sizes {:?}, {} parameters",
                    g.gene_id,
                    g.structure.kernel_sizes(),
                    g.parameter_count()
                );
            }
            if let Some(p) = dataset {
                let fmt: DatasetFormat = format.parse().map_err(|e: Error| Failure::Usage(e.to_string()))?;
                let ds = load_dataset(p, fmt)?;
                let _ = writeln!(
                    out,
                    "dataset {}: ok, {} records, {} classes, images {:?}",
                    p.display(),
                    ds.len(),
                    ds.class_count(),
                    ds.header.image_shape
                );
            }
            Ok(())
        }
    }
}
