//! Renders one archived trace as annotated text.

use std::path::PathBuf;

use anyhow::{bail, Result};
use clap::Args as ClapArgs;

use bftok_core::bfdecode::{GenerationTrace, Origin};
use bftok_core::vocab::Vocab;

use crate::io;
use crate::Global;

#[derive(Debug, ClapArgs)]
pub struct Args {
    /// Trace archive from eval.
    #[arg(long)]
    pub archive: PathBuf,
    /// Checkpoint supplying the vocabulary.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Record index within the archive.
    #[arg(long, default_value_t = 0)]
    pub index: usize,
}

/// Decodes a trace into text, wrapping injected and forced spans in
/// visible markers.
fn annotate(trace: &GenerationTrace, vocab: &Vocab) -> Result<String> {
    let mut out = String::new();
    let mut i = trace.prompt_len;
    while i < trace.tokens.len() {
        let origin = trace.origin[i];
        let mut j = i;
        while j < trace.tokens.len() && trace.origin[j] == origin {
            j += 1;
        }
        let text = vocab
            .decode(&trace.tokens[i..j])
            .map_err(|e| anyhow::anyhow!("{e}"))?;
        match origin {
            Origin::Prompt | Origin::Sampled => out.push_str(&text),
            Origin::Injected => {
                out.push_str("[inject]");
                out.push_str(&text);
                out.push_str("[/inject]");
            }
            Origin::ForcedClose => {
                out.push_str("[forced]");
                out.push_str(&text);
                out.push_str("[/forced]");
            }
        }
        i = j;
    }
    Ok(out)
}

pub fn run(args: Args, _global: &Global) -> Result<()> {
    let records = io::read_archive(&args.archive)?;
    let (_, vocab, _) = io::load_checkpoint_file(&args.checkpoint)?;
    let Some(record) = records.get(args.index) else {
        bail!(
            "index {} out of range; archive {} holds {} records",
            args.index,
            args.archive.display(),
            records.len()
        );
    };

    let t = &record.trace;
    let prompt = vocab
        .decode(&t.tokens[..t.prompt_len])
        .map_err(|e| anyhow::anyhow!("{e}"))?;
    println!(
        "record {} of {}: question {} sample {} method {}",
        args.index,
        records.len(),
        record.question_id,
        record.sample_idx,
        record.method
    );
    println!(
        "correct: {}  judge_used: {}  judge_failed: {}  c_max: {}  b_max: {}",
        record.correct, record.judge_used, record.judge_failed, record.c_max, record.b_max
    );
    println!(
        "generated: {} tokens, {} injections, termination {:?}",
        t.generated_len(),
        t.injection_positions.len(),
        t.termination
    );
    println!("--- prompt ---");
    println!("{prompt}");
    println!("--- generation ---");
    println!("{}", annotate(t, &vocab)?);
    Ok(())
}
