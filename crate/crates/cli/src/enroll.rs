use std::path::PathBuf;

use clap::Args;
use rayon::prelude::*;
use slerpshield_core::evaluation::{generate_population, SyntheticPopulation};
use slerpshield_core::io::{read_templates, to_templates, write_templates};
use slerpshield_core::seed::derive_seed;
use slerpshield_core::store::TemplateStore;
use slerpshield_core::template::GroupWeights;
use slerpshield_core::{protect, EnrollmentRecord, Template};

use crate::common::{load_store, Failure, ParamArgs, SeedChoice};

#[derive(Args, Debug)]
pub struct EnrollArgs {
    /// Store to create or append to.
    #[arg(long)]
    store: PathBuf,
    /// Template file: one template per line, optional leading label.
    #[arg(long, conflicts_with = "synthetic", required_unless_present = "synthetic")]
    input: Option<PathBuf>,
    /// Synthetic population, e.g. `identities=50 samples=4 intra=25`.
    #[arg(long, num_args = 1.., value_delimiter = ',')]
    synthetic: Vec<String>,
    /// Group weights file: m whitespace-separated nonnegative reals.
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Also write the unprotected input templates here.
    #[arg(long)]
    dump_templates: Option<PathBuf>,
    #[command(flatten)]
    params: ParamArgs,
}

fn synthetic_population(items: &[String], d: usize, m: usize, seed: u64) -> Result<SyntheticPopulation, Failure> {
    let mut cfg = SyntheticPopulation {
        layout: slerpshield_core::GroupLayout::new(d, m)?,
        seed,
        ..SyntheticPopulation::default()
    };
    for item in items.iter().flat_map(|s| s.split_whitespace()) {
        let (k, v) = item
            .split_once('=')
            .ok_or_else(|| Failure::usage(format!("synthetic option `{item}` is not key=value")))?;
        let bad = || Failure::usage(format!("bad value for `{k}`: `{v}`"));
        match k {
            "identities" => cfg.identities = v.parse().map_err(|_| bad())?,
            "samples" => cfg.samples_per_identity = v.parse().map_err(|_| bad())?,
            "intra" => cfg.intra_angle = v.parse::<f64>().map_err(|_| bad())?.to_radians(),
            _ => return Err(Failure::usage(format!("unknown synthetic key `{k}`"))),
        }
    }
    Ok(cfg)
}

pub fn run(args: EnrollArgs, seed: &SeedChoice) -> Result<(), Failure> {
    let params = args.params.params()?;
    let layout = params.layout;
    let inputs: Vec<(String, Template)> = match &args.input {
        Some(path) => {
            let lines = read_templates(path).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
            to_templates(&lines, layout)?
        }
        None => {
            let cfg = synthetic_population(
                &args.synthetic,
                layout.d(),
                layout.m(),
                derive_seed(seed.seed, crate::eval::POPULATION_STREAM),
            )?;
            generate_population(&cfg)?
                .samples
                .into_iter()
                .map(|s| (s.label, s.template))
                .collect()
        }
    };
    if inputs.is_empty() {
        return Err(Failure::usage("no templates to enroll"));
    }
    let weights = match &args.weights {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
            let raw = text
                .split_whitespace()
                .map(|t| {
                    t.parse::<f64>()
                        .map_err(|_| Failure::usage(format!("bad weight `{t}`")))
                })
                .collect::<Result<Vec<_>, _>>()?;
            GroupWeights::normalized(raw)?
        }
        None => GroupWeights::uniform(layout.m()),
    };

    let mut store = if args.store.exists() {
        let s = load_store(&args.store)?;
        if s.params().fingerprint() != params.fingerprint() {
            return Err(Failure::usage(format!(
                "{} was created with different parameters",
                args.store.display()
            )));
        }
        s
    } else {
        TemplateStore::new(&params, seed.created_utc())?
    };
    let offset = store.len() as u64;
    let records = inputs
        .par_iter()
        .enumerate()
        .map(|(i, (label, t))| {
            let (protected, key) = protect(t, &params, &weights, derive_seed(seed.seed, offset + i as u64))?;
            Ok(EnrollmentRecord {
                identity_label: label.clone(),
                protected,
                key,
            })
        })
        .collect::<Result<Vec<_>, slerpshield_core::Error>>()?;
    for r in records {
        store.push(r)?;
    }
    store.save(&args.store)?;
    if let Some(path) = &args.dump_templates {
        write_templates(path, inputs.iter().map(|(l, t)| (Some(l.as_str()), t.values())))?;
    }
    println!(
        "enrolled {} templates into {} ({} records)",
        inputs.len(),
        args.store.display(),
        store.len()
    );
    Ok(())
}
