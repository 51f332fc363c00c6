//! Per-generation CSV and text summary for a run directory.

use std::fmt::Write as _;

use crate::checkpoint::write_atomic;
use crate::error::{Error, Result};
use crate::evolution::{read_records, GenerationRecord, PoolRecord, RunDir};
use crate::netspec::{builtin_spec, LayerKind, NetworkSpec};

pub const CSV_FILE: &str = "report.csv";
pub const SUMMARY_FILE: &str = "summary.txt";

pub const CSV_HEADER: &str = "generation,k,population,mean_parameter_count,critic_mean,critic_max,critic_min,\
pool_size,pool_score_max,pool_score_mean,pool_critic_mean,best_gene,best_parameter_count,best_parameter_fraction";

/// Gene share of conv and skip weights, from `|K_l|` per conv layer alone.
/// Conv layer `l` owns `|K_l|·|K_{l-1}|` slices (all input channels for
/// the first); a skip owns `|K_target|·|K_source|`.
pub fn fraction_from_kernel_sizes(kernel_sizes: &[usize], spec: &NetworkSpec) -> Result<f64> {
    let convs: Vec<usize> = spec
        .layers
        .iter()
        .filter(|l| l.kind == LayerKind::Conv)
        .map(|l| l.layer_id)
        .collect();
    if convs.len() != kernel_sizes.len() {
        return Err(Error::InvalidStructure(format!(
            "{} kernel sizes for {} conv layers",
            kernel_sizes.len(),
            convs.len()
        )));
    }
    let size_of = |id: usize| convs.iter().position(|&c| c == id).map(|p| kernel_sizes[p]);
    let mut owned = 0u64;
    let mut total = 0u64;
    let mut prev: Option<usize> = None;
    for l in &spec.layers {
        let area = match l.spatial {
            Some(s) => (s.kernel_h * s.kernel_w) as u64,
            None => continue,
        };
        match l.kind {
            LayerKind::Conv => {
                let k = size_of(l.layer_id).unwrap();
                let c = prev.unwrap_or(l.channel_count.unwrap_or(0));
                owned += (k * c) as u64 * area;
                prev = Some(k);
            }
            LayerKind::SkipConnection => {
                let ep = l
                    .skip_endpoints
                    .ok_or_else(|| Error::InvalidSpec(format!("skip layer {} has no endpoints", l.layer_id)))?;
                let (k, c) = match (size_of(ep.target), size_of(ep.source)) {
                    (Some(k), Some(c)) => (k, c),
                    _ => return Err(Error::InvalidSpec(format!("skip layer {} has bad endpoints", l.layer_id))),
                };
                owned += (k * c) as u64 * area;
            }
            _ => continue,
        }
        total += (l.kernel_count.unwrap_or(0) * l.channel_count.unwrap_or(0)) as u64 * area;
    }
    Ok(if total == 0 { 0.0 } else { owned as f64 / total as f64 })
}

/// Highest score, then fewer parameters, then smaller id.
pub fn best_pool_entry(pool: &[PoolRecord]) -> Option<&PoolRecord> {
    pool.iter().reduce(|best, e| {
        let better = match e.score.partial_cmp(&best.score) {
            Some(std::cmp::Ordering::Greater) => true,
            Some(std::cmp::Ordering::Less) => false,
            _ => (e.parameter_count, &e.gene_id) < (best.parameter_count, &best.gene_id),
        };
        if better {
            e
        } else {
            best
        }
    })
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0 + 1.0;
            for &k in &idx[i..=j] {
                r[k] = avg;
            }
            i = j + 1;
        }
        r
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = rx.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    if vx == 0.0 || vy == 0.0 {
        0.0
    } else {
        cov / (vx * vy).sqrt()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Report {
    pub csv: String,
    pub summary: String,
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

pub fn build_report(records: &[GenerationRecord], spec: &NetworkSpec) -> Result<Report> {
    if records.is_empty() {
        return Err(Error::EmptyDataset("run has no generation records".into()));
    }
    let mut csv = String::from(CSV_HEADER);
    csv.push('\n');
    for r in records {
        let best = best_pool_entry(&r.pool);
        let (best_id, best_count, best_fraction) = match best {
            Some(b) => (
                b.gene_id.clone(),
                b.parameter_count.to_string(),
                format!("{:.6}", fraction_from_kernel_sizes(&b.kernel_sizes, spec)?),
            ),
            None => (String::new(), String::new(), String::new()),
        };
        let score_max = r.pool.iter().map(|p| p.score).fold(f64::NEG_INFINITY, f64::max);
        writeln!(
            csv,
            "{},{},{},{:.1},{:.6},{:.6},{:.6},{},{:.6},{:.6},{:.6},{},{},{}",
            r.generation,
            r.k,
            r.individuals.len(),
            r.mean_parameter_count,
            r.critic_mean,
            r.critic_max,
            r.critic_min,
            r.pool.len(),
            if r.pool.is_empty() { 0.0 } else { score_max },
            mean(r.pool.iter().map(|p| p.score)),
            r.pool_critic_mean,
            best_id,
            best_count,
            best_fraction
        )
        .unwrap();
    }

    let first = &records[0];
    let last = records.last().unwrap();
    let gens: Vec<f64> = records.iter().map(|r| r.generation as f64).collect();
    let pool_means: Vec<f64> = records.iter().map(|r| r.pool_critic_mean).collect();
    let pop_means: Vec<f64> = records.iter().map(|r| r.critic_mean).collect();
    let mut summary = String::new();
    writeln!(summary, "spec: {}", spec.name).unwrap();
    writeln!(summary, "generations: {}", records.len()).unwrap();
    writeln!(
        summary,
        "population critic mean: {:.4} -> {:.4} (spearman vs generation {:+.3})",
        first.critic_mean,
        last.critic_mean,
        spearman(&gens, &pop_means)
    )
    .unwrap();
    writeln!(
        summary,
        "pool critic mean: {:.4} -> {:.4} (spearman vs generation {:+.3})",
        first.pool_critic_mean,
        last.pool_critic_mean,
        spearman(&gens, &pool_means)
    )
    .unwrap();
    match best_pool_entry(&last.pool) {
        Some(b) => {
            writeln!(
                summary,
                "best gene: {} (score {:.4}, critic {:.4}, admitted in generation {})",
                b.gene_id, b.score, b.critic_score, b.generation_admitted
            )
            .unwrap();
            writeln!(summary, "best gene kernel sizes: {:?}", b.kernel_sizes).unwrap();
            writeln!(
                summary,
                "best gene parameters: {} ({:.2}% of conv and skip weights)",
                b.parameter_count,
                100.0 * fraction_from_kernel_sizes(&b.kernel_sizes, spec)?
            )
            .unwrap();
        }
        None => writeln!(summary, "best gene: none (pool is empty)").unwrap(),
    }
    Ok(Report { csv, summary })
}

/// Builds the report for a run directory and writes `report.csv` and
/// `summary.txt` next to the records.
pub fn report(dir: &RunDir) -> Result<Report> {
    let records_path = dir.records();
    if !records_path.exists() {
        return Err(Error::EmptyDataset(format!(
            "no generation records at {}",
            records_path.display()
        )));
    }
    let records = read_records(&records_path)?;
    let spec = builtin_spec(&dir.read_config()?.spec)?;
    let rep = build_report(&records, &spec)?;
    write_atomic(&dir.path.join(CSV_FILE), rep.csv.as_bytes())?;
    write_atomic(&dir.path.join(SUMMARY_FILE), rep.summary.as_bytes())?;
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::genome::init_random_structure;
    use crate::netspec::parameter_fraction;
    use crate::seed;

    #[test]
    fn fraction_matches_netspec() {
        for name in ["mini-vgg-6", "mini-res-6", "mini-vgg-8", "mini-res-8", "mini-res-6-N"] {
            let spec = builtin_spec(name).unwrap();
            for s in 0..20 {
                let f = 0.05 + 0.9 * (s as f64 / 20.0);
                let st = init_random_structure(&spec, f, &mut seed::from_seed(s)).unwrap();
                let a = parameter_fraction(&st, &spec).unwrap();
                let b = fraction_from_kernel_sizes(&st.kernel_sizes(), &spec).unwrap();
                assert_eq!(a, b, "{name} seed {s}");
            }
        }
    }

    #[test]
    fn full_and_wrong_length_sizes() {
        let spec = builtin_spec("mini-res-6").unwrap();
        let full: Vec<usize> = spec.conv_layers().map(|l| l.kernels()).collect();
        assert_eq!(fraction_from_kernel_sizes(&full, &spec).unwrap(), 1.0);
        assert!(fraction_from_kernel_sizes(&full[1..], &spec).is_err());
    }

    #[test]
    fn spearman_hand_values() {
        assert!((spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]) - 1.0).abs() < 1e-12);
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]) + 1.0).abs() < 1e-12);
        // Ranks of y with ties: [1.5, 1.5, 3]; Pearson of [1,2,3] with that is sqrt(3)/2.
        let r = spearman(&[1.0, 2.0, 3.0], &[5.0, 5.0, 9.0]);
        assert!((r - 3f64.sqrt() / 2.0).abs() < 1e-12);
        assert_eq!(spearman(&[1.0, 2.0], &[4.0, 4.0]), 0.0);
    }
}
