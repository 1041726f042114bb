use std::path::{Path, PathBuf};

use clap::Args;
use slerpshield_core::io::{read_templates, to_templates};
use slerpshield_core::{identify as rank, verify as check, MatchResult, Template};

use crate::common::{calibrated_threshold, load_store, Failure};

#[derive(Args, Debug)]
pub struct VerifyArgs {
    #[arg(long)]
    store: PathBuf,
    /// Query templates; each line's label is its claimed identity.
    #[arg(long)]
    query: PathBuf,
    /// Claimed identity for every query, overriding line labels.
    #[arg(long)]
    claim: Option<String>,
    /// Acceptance threshold; calibrated for the store's parameters if omitted.
    #[arg(long, allow_negative_numbers = true)]
    threshold: Option<f64>,
}

#[derive(Args, Debug)]
pub struct IdentifyArgs {
    #[arg(long)]
    store: PathBuf,
    #[arg(long)]
    query: PathBuf,
    /// Acceptance threshold; calibrated for the store's parameters if omitted.
    #[arg(long, allow_negative_numbers = true)]
    threshold: Option<f64>,
    /// Ranked results to print per query.
    #[arg(long, default_value_t = 5)]
    top_k: usize,
}

fn queries(path: &Path, store: &slerpshield_core::store::TemplateStore) -> Result<Vec<(String, Template)>, Failure> {
    let lines = read_templates(path).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
    if lines.is_empty() {
        return Err(Failure::usage(format!("{} holds no templates", path.display())));
    }
    Ok(to_templates(&lines, store.params().layout)?)
}

fn threshold(given: Option<f64>, store: &slerpshield_core::store::TemplateStore) -> Result<f64, Failure> {
    match given {
        Some(t) => Ok(t),
        None => {
            let t = calibrated_threshold(store.params())?;
            eprintln!("threshold {t:.6} (calibrated)");
            Ok(t)
        }
    }
}

fn line(query: &str, rank: Option<usize>, r: &MatchResult) -> String {
    let verdict = match &r.failure {
        Some(f) => format!("REJECTED ({f})"),
        None if r.accepted => "ACCEPTED".to_string(),
        None => "REJECTED".to_string(),
    };
    match rank {
        Some(k) => format!("{query}\t{k}\t{}\t{:.6}\t{verdict}", r.identity_label, r.score),
        None => format!("{query}\t{}\t{:.6}\t{verdict}", r.identity_label, r.score),
    }
}

pub fn verify(args: VerifyArgs) -> Result<(), Failure> {
    let store = load_store(&args.store)?;
    if store.is_empty() {
        return Err(Failure::usage("store is empty"));
    }
    let threshold = threshold(args.threshold, &store)?;
    for (label, t) in queries(&args.query, &store)? {
        let claim = args.claim.clone().unwrap_or_else(|| label.clone());
        let records: Vec<_> = store.records().iter().filter(|r| r.identity_label == claim).collect();
        if records.is_empty() {
            return Err(Failure::usage(format!("no record enrolled as `{claim}`")));
        }
        for rec in records {
            let r = check(&t, rec, threshold, store.params())?;
            println!("{}", line(&label, None, &r));
        }
    }
    Ok(())
}

pub fn identify(args: IdentifyArgs) -> Result<(), Failure> {
    let store = load_store(&args.store)?;
    if store.is_empty() {
        return Err(Failure::usage("store is empty"));
    }
    let threshold = threshold(args.threshold, &store)?;
    for (label, t) in queries(&args.query, &store)? {
        let ranked = rank(&t, store.records(), threshold, store.params())?;
        for (k, r) in ranked.iter().take(args.top_k).enumerate() {
            println!("{}", line(&label, Some(k + 1), r));
        }
    }
    Ok(())
}
