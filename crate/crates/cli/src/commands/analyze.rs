//! Derives analysis tables from a trace archive. Needs no model: every
//! output is recomputed from the archive alone.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Args as ClapArgs;

use bftok_core::eval::{
    first_token_stats, length_histogram, paired_probabilities, tokens_vs_accuracy, ArchiveRecord,
};

use crate::config::RunConfig;
use crate::io::{self, csv};
use crate::{Global, UsageError};

#[derive(Debug, ClapArgs)]
pub struct Args {
    /// Trace archive from eval.
    #[arg(long)]
    pub archive: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Bucket width for the length histogram.
    #[arg(long, default_value_t = 16)]
    pub bucket_width: usize,
    /// Method pair to compare, as `first:second`; repeatable. Defaults
    /// to every unordered pair in the archive.
    #[arg(long = "pair")]
    pub pairs: Vec<String>,
}

/// Method names in first-appearance order.
fn methods_in(records: &[ArchiveRecord]) -> Vec<String> {
    let mut seen = Vec::new();
    for r in records {
        if !seen.contains(&r.method) {
            seen.push(r.method.clone());
        }
    }
    seen
}

pub fn run(args: Args, global: &Global) -> Result<()> {
    let cfg = RunConfig::load(global.config.as_deref())?;
    if args.bucket_width == 0 {
        bail!(UsageError("bucket_width must be positive".into()));
    }

    let records = io::read_archive(&args.archive)?;
    if records.is_empty() {
        bail!("archive {} holds no records", args.archive.display());
    }
    let methods = methods_in(&records);

    let pairs: Vec<(String, String)> = if args.pairs.is_empty() {
        let mut all = Vec::new();
        for i in 0..methods.len() {
            for j in i + 1..methods.len() {
                all.push((methods[i].clone(), methods[j].clone()));
            }
        }
        all
    } else {
        args.pairs
            .iter()
            .map(|p| {
                p.split_once(':')
                    .map(|(a, b)| (a.to_string(), b.to_string()))
                    .ok_or_else(|| {
                        anyhow::Error::new(UsageError(format!(
                            "pair {p:?} must look like first:second"
                        )))
                    })
            })
            .collect::<Result<_>>()?
    };

    let mut paired_rows = Vec::new();
    for (a, b) in &pairs {
        for name in [a, b] {
            if !methods.contains(name) {
                bail!("archive has no records for method {name:?}");
            }
        }
        let p = paired_probabilities(&records, a, b)
            .map_err(|e| anyhow::anyhow!("pair {a}:{b}: {e}"))?;
        paired_rows.push(vec![
            a.clone(),
            b.clone(),
            p.p_first_only.to_string(),
            p.p_second_only.to_string(),
            p.pass1_first.to_string(),
            p.pass1_second.to_string(),
        ]);
    }

    let mut histogram_rows = Vec::new();
    let mut first_token_rows = Vec::new();
    for m in &methods {
        let subset: Vec<&ArchiveRecord> = records.iter().filter(|r| &r.method == m).collect();
        let hist = length_histogram(subset.iter().copied(), args.bucket_width);
        for (i, &count) in hist.counts.iter().enumerate() {
            histogram_rows.push(vec![
                m.clone(),
                (i * hist.bucket_width).to_string(),
                ((i + 1) * hist.bucket_width).to_string(),
                count.to_string(),
            ]);
        }
        let stats = first_token_stats(subset.iter().copied());
        for (&token, &count) in &stats.counts {
            first_token_rows.push(vec![
                m.clone(),
                token.to_string(),
                count.to_string(),
                stats.injection_groups.to_string(),
            ]);
        }
    }

    let curve_rows: Vec<Vec<String>> = tokens_vs_accuracy(&records)
        .into_iter()
        .map(|p| {
            vec![
                p.method,
                p.c_max.to_string(),
                p.b_max.to_string(),
                p.avg_tokens.to_string(),
                p.pass1.to_string(),
            ]
        })
        .collect();

    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("failed to create {}", args.out.display()))?;
    io::write_text(
        &args.out.join("paired.csv"),
        &csv("method_a,method_b,p_a_only,p_b_only,pass1_a,pass1_b", paired_rows),
    )?;
    io::write_text(
        &args.out.join("histogram.csv"),
        &csv("method,bucket_start,bucket_end,count", histogram_rows),
    )?;
    io::write_text(
        &args.out.join("first_tokens.csv"),
        &csv("method,token_id,count,injection_groups", first_token_rows),
    )?;
    io::write_text(
        &args.out.join("curve.csv"),
        &csv("method,c_max,b_max,avg_tokens,pass1", curve_rows),
    )?;
    cfg.snapshot(&args.out)?;
    println!(
        "analyzed {} records over {} methods -> {}",
        records.len(),
        methods.len(),
        args.out.display()
    );
    Ok(())
}
