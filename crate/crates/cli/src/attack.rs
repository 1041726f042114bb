use std::path::PathBuf;

use clap::{Args, ValueEnum};
use rayon::prelude::*;
use slerpshield_core::attacks::{delta_theta_experiment, full_template_attack, nr_invert_group, NRConfig, TrialRecord};
use slerpshield_core::io::{read_templates, to_templates};
use slerpshield_core::protection::slerp;
use slerpshield_core::report::write_csv;
use slerpshield_core::seed::derive_seed;
use slerpshield_core::stats;
use slerpshield_core::{sample_key, GroupLayout, Template};

use crate::common::{load_store, parse_list, Failure, SeedChoice};

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Mode {
    /// Newton–Raphson inversion of the records in a store.
    Nr,
    /// Δθ of the first accepted estimate versus dimension.
    DeltaTheta,
}

#[derive(Args, Debug)]
pub struct AttackArgs {
    #[arg(long, value_enum)]
    mode: Mode,
    /// Store to attack (nr mode).
    #[arg(long)]
    store: Option<PathBuf>,
    /// Records to attack, from the start of the store; 0 attacks all.
    #[arg(long, default_value_t = 10)]
    records: usize,
    /// Unprotected templates in store order, for scoring the recovery.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Comma-separated group dimensions (delta-theta mode).
    #[arg(long, default_value = "16,64,256,512")]
    d: String,
    /// Dropout ratio (delta-theta mode).
    #[arg(long, default_value_t = 0.5)]
    beta: f64,
    /// Interpolation amount (delta-theta mode).
    #[arg(long, default_value_t = 0.9)]
    alpha: f64,
    /// Trials per dimension (delta-theta mode).
    #[arg(long, default_value_t = 1000)]
    trials: usize,
    #[arg(long, default_value_t = 10_000)]
    max_reruns: usize,
    /// CSV output path.
    #[arg(long, default_value = "attack.csv")]
    out: PathBuf,
}

pub fn run(args: AttackArgs, seed: &SeedChoice) -> Result<(), Failure> {
    let cfg = NRConfig {
        max_reruns: args.max_reruns,
        ..NRConfig::default().with_seed(seed.seed)
    };
    cfg.validate()?;
    match args.mode {
        Mode::Nr => nr(&args, &cfg),
        Mode::DeltaTheta => delta_theta(&args, &cfg),
    }
}

fn quantiles_deg(values: &[f64]) -> String {
    let s = stats::sorted(values);
    match (s.first(), stats::quantile_sorted(&s, 0.5), s.last()) {
        (Some(lo), Some(med), Some(hi)) => format!(
            "min {:.4}° median {:.4}° max {:.4}°",
            lo.to_degrees(),
            med.to_degrees(),
            hi.to_degrees()
        ),
        _ => "none converged".to_string(),
    }
}

fn nr(args: &AttackArgs, cfg: &NRConfig) -> Result<(), Failure> {
    let path = args
        .store
        .as_ref()
        .ok_or_else(|| Failure::usage("--mode nr needs --store"))?;
    let store = load_store(path)?;
    if store.is_empty() {
        return Err(Failure::usage("store is empty"));
    }
    let params = *store.params();
    let layout = params.layout;
    let n = if args.records == 0 {
        store.len()
    } else {
        args.records.min(store.len())
    };
    let records = &store.records()[..n];
    let truth: Option<Vec<Template>> = match &args.truth {
        Some(p) => {
            let lines = read_templates(p).map_err(|e| Failure::usage(format!("{}: {e}", p.display())))?;
            let t = to_templates(&lines, layout)?;
            if t.len() < n {
                return Err(Failure::usage(format!(
                    "{} has {} templates, {n} needed",
                    p.display(),
                    t.len()
                )));
            }
            Some(t.into_iter().take(n).map(|(_, t)| t).collect())
        }
        None => None,
    };

    let reports = records
        .iter()
        .enumerate()
        .map(|(i, rec)| {
            let c = NRConfig {
                init_seed: derive_seed(cfg.init_seed, i as u64),
                ..*cfg
            };
            full_template_attack(rec, params.alpha, &c, truth.as_ref().map(|t| &t[i]))
        })
        .collect::<Result<Vec<_>, _>>()?;

    // the same keys and solver seeds with nothing dropped
    let g = layout.group_dim();
    let baseline = (0..n * layout.m())
        .into_par_iter()
        .map(|j| {
            let (i, grp) = (j / layout.m(), j % layout.m());
            let key = records[i].key.template().group(grp);
            let t = match &truth {
                Some(t) => t[i].group(grp).to_vec(),
                None => sample_key(
                    GroupLayout::whole(g)?,
                    derive_seed(derive_seed(cfg.init_seed, 0x7472), j as u64),
                )
                .values()
                .to_vec(),
            };
            let p = slerp(&t, key, params.alpha)?;
            let trial_cfg = NRConfig {
                init_seed: derive_seed(cfg.init_seed, j as u64),
                ..*cfg
            };
            nr_invert_group(&p, key, params.alpha, &vec![true; g], &trial_cfg, Some(&t))
        })
        .collect::<Result<Vec<_>, _>>()?;

    let rows: Vec<TrialRecord> = reports
        .iter()
        .enumerate()
        .flat_map(|(i, r)| {
            r.groups.iter().enumerate().map(move |(grp, a)| TrialRecord {
                d: g,
                beta: params.beta,
                trial: i * layout.m() + grp,
                reruns: a.reruns_used,
                converged: a.converged,
                delta_theta_rad: a.delta_theta,
            })
        })
        .collect();
    write_csv(&args.out, &rows)?;

    let groups = rows.len();
    let with: Vec<f64> = rows.iter().map(|r| r.reruns as f64).collect();
    let without: Vec<f64> = baseline.iter().map(|r| r.reruns_used as f64).collect();
    let mean_with = stats::mean(&with).unwrap_or(f64::NAN);
    let mean_without = stats::mean(&without).unwrap_or(f64::NAN);
    let converged = rows.iter().filter(|r| r.converged).count();
    let log_cost: Vec<f64> = reports.iter().map(|r| r.log10_mean_cost).collect();
    println!("records attacked: {n} ({groups} groups of {g})");
    println!("converged groups: {converged}/{groups}");
    println!("mean reruns per group: {mean_with:.4}");
    println!("mean reruns per group without dropout: {mean_without:.4}");
    println!("rerun inflation factor: {:.4}", mean_with / mean_without);
    println!(
        "estimated cost per template (r^m): 10^{:.2}",
        stats::mean(&log_cost).unwrap_or(f64::NAN)
    );
    if truth.is_some() {
        let deltas: Vec<f64> = rows.iter().filter_map(|r| r.delta_theta_rad).collect();
        println!("delta theta: {}", quantiles_deg(&deltas));
        let cos: Vec<f64> = reports.iter().filter_map(|r| r.cosine_to_truth).collect();
        match stats::mean(&cos) {
            Some(c) => println!("mean cosine to truth over {} recovered templates: {c:.6}", cos.len()),
            None => println!("no template fully recovered"),
        }
    }
    println!("wrote {}", args.out.display());
    Ok(())
}

fn delta_theta(args: &AttackArgs, cfg: &NRConfig) -> Result<(), Failure> {
    let dims: Vec<usize> = parse_list(&args.d, "dimension")?;
    if dims.is_empty() {
        return Err(Failure::usage("--d needs at least one dimension"));
    }
    let study = delta_theta_experiment(&dims, args.beta, args.trials, cfg.init_seed, args.alpha, cfg)?;
    write_csv(&args.out, &study.trials)?;
    for row in &study.rows {
        let deltas: Vec<f64> = study
            .trials
            .iter()
            .filter(|t| t.d == row.d)
            .filter_map(|t| t.delta_theta_rad)
            .collect();
        println!(
            "d={} beta={} trials={} censored={} mean reruns {:.4} delta theta: {}",
            row.d,
            row.beta,
            row.trials,
            row.censored,
            row.mean_reruns,
            quantiles_deg(&deltas)
        );
    }
    println!("wrote {}", args.out.display());
    Ok(())
}
