use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use serde::Serialize;
use slerpshield_core::evaluation::{
    accuracy_sweep, alpha_ablation, default_thresholds, generate_population, revocability_study, sswl,
    unprotected_scores, LinkProtocol, Population, RocPoint, SyntheticPopulation, ABLATION_ALPHAS,
};
use slerpshield_core::report::{sswl_bins, write_csv};
use slerpshield_core::seed::derive_seed;
use slerpshield_core::ProtectionParams;

use crate::common::{Failure, ParamArgs, SeedChoice, EXIT_ACCEPTANCE};

/// Seed stream of the synthetic population, shared with `enroll --synthetic`.
pub const POPULATION_STREAM: u64 = 0x0070_6f70;

const EER_TOLERANCE: f64 = 0.03;
const SSWL_PROTECTED_MAX: f64 = 0.1;
const SSWL_UNPROTECTED_MIN: f64 = 0.8;
const KS_P_MIN: f64 = 0.01;
const ACCEPTANCE_MIN: f64 = 0.95;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Suite {
    Roc,
    Ablation,
    Sswl,
    Revocability,
    All,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long, value_enum)]
    suite: Suite,
    /// Directory for the CSV reports.
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 50)]
    identities: usize,
    #[arg(long, default_value_t = 4)]
    samples: usize,
    /// Mean angle between samples of one identity, degrees.
    #[arg(long, default_value_t = 25.0)]
    intra: f64,
    /// Sampled impostor pairs for ROC and ablation.
    #[arg(long, default_value_t = 2000)]
    impostor_pairs: usize,
    /// Mated and non-mated pairs for linkability.
    #[arg(long, default_value_t = 1000)]
    pairs: usize,
    #[arg(long, default_value_t = 100)]
    bins: usize,
    /// Templates re-enrolled in the revocability study.
    #[arg(long, default_value_t = 500)]
    templates: usize,
    #[command(flatten)]
    params: ParamArgs,
}

#[derive(Serialize)]
struct RocRow {
    system: &'static str,
    threshold: f64,
    fpr: f64,
    tpr: f64,
    accuracy: f64,
}

#[derive(Serialize)]
struct SswlRow {
    protocol: &'static str,
    bin: usize,
    low: f64,
    high: f64,
    mated: u64,
    nonmated: u64,
    local_linkability: f64,
}

fn verdict(pass: bool) -> &'static str {
    if pass {
        "PASS"
    } else {
        "FAIL"
    }
}

fn roc_rows<'a>(system: &'static str, pts: &'a [RocPoint]) -> impl Iterator<Item = RocRow> + 'a {
    pts.iter().map(move |p| RocRow {
        system,
        threshold: p.threshold,
        fpr: p.fpr,
        tpr: p.tpr,
        accuracy: p.accuracy,
    })
}

struct Ctx<'a> {
    args: &'a EvalArgs,
    pop: Population,
    params: ProtectionParams,
    seed: u64,
}

impl Ctx<'_> {
    fn out(&self, name: &str) -> PathBuf {
        self.args.out_dir.join(name)
    }

    fn roc(&self) -> Result<bool, Failure> {
        let thresholds = default_thresholds(201);
        let seed = derive_seed(self.seed, 1);
        let prot = accuracy_sweep(&self.pop, &self.params, &thresholds, self.args.impostor_pairs, seed)?;
        let base = unprotected_scores(&self.pop, self.args.impostor_pairs, seed)?;
        let base_roc = base.roc(&thresholds)?;
        let base_eer = base.eer()?;
        let rows: Vec<RocRow> = roc_rows("protected", &prot.roc)
            .chain(roc_rows("unprotected", &base_roc))
            .collect();
        write_csv(&self.out("roc.csv"), &rows)?;
        let pass = (prot.eer.eer - base_eer.eer).abs() <= EER_TOLERANCE;
        println!(
            "{} roc: eer protected {:.4} (threshold {:.6}) unprotected {:.4}, limit |diff| <= {EER_TOLERANCE}",
            verdict(pass),
            prot.eer.eer,
            prot.eer.threshold,
            base_eer.eer
        );
        Ok(pass)
    }

    fn ablation(&self) -> Result<bool, Failure> {
        let rows = alpha_ablation(
            &self.pop,
            &ABLATION_ALPHAS,
            &self.params,
            self.args.impostor_pairs,
            derive_seed(self.seed, 2),
        )?;
        write_csv(&self.out("ablation.csv"), &rows)?;
        for r in &rows {
            let alpha = r.alpha.map_or("none".to_string(), |a| a.to_string());
            println!(
                "  alpha {alpha:>5}: genuine {:.6} impostor {:.6} gap {:.6}",
                r.genuine_mean, r.impostor_mean, r.gap
            );
        }
        let gaps: Vec<f64> = rows.iter().filter(|r| r.alpha.is_some()).map(|r| r.gap).collect();
        let pass = gaps.windows(2).all(|w| w[0] > w[1]);
        println!("{} ablation: gap strictly decreasing in alpha", verdict(pass));
        Ok(pass)
    }

    fn sswl(&self) -> Result<bool, Failure> {
        let seed = derive_seed(self.seed, 3);
        let (a, b) = (self.args.pairs, self.args.bins);
        let raw = sswl(&self.pop, &self.params, LinkProtocol::Unprotected, a, b, seed)?;
        let prot = sswl(&self.pop, &self.params, LinkProtocol::Protected, a, b, seed)?;
        let mut rows = Vec::new();
        for (protocol, r) in [("unprotected", &raw), ("protected", &prot)] {
            rows.extend(sswl_bins(r).into_iter().map(|x| SswlRow {
                protocol,
                bin: x.bin,
                low: x.low,
                high: x.high,
                mated: x.mated,
                nonmated: x.nonmated,
                local_linkability: x.local_linkability,
            }));
        }
        write_csv(&self.out("sswl.csv"), &rows)?;
        let pass = prot.d_sys < SSWL_PROTECTED_MAX && raw.d_sys > SSWL_UNPROTECTED_MIN;
        println!(
            "{} sswl: d_sys protected {:.4} (limit < {SSWL_PROTECTED_MAX}) unprotected {:.4} (limit > {SSWL_UNPROTECTED_MIN})",
            verdict(pass),
            prot.d_sys,
            raw.d_sys
        );
        Ok(pass)
    }

    fn revocability(&self) -> Result<bool, Failure> {
        let s = revocability_study(
            &self.pop,
            &self.params,
            self.args.templates,
            self.args.impostor_pairs,
            derive_seed(self.seed, 4),
        )?;
        write_csv(&self.out("revocability.csv"), &s.trials)?;
        let pass = s.ks.p_value > KS_P_MIN && s.genuine_acceptance >= ACCEPTANCE_MIN;
        println!(
            "{} revocability: KS p {:.3e} (limit > {KS_P_MIN}), cross mean {:.6} impostor mean {:.6}, genuine acceptance {:.4} (limit >= {ACCEPTANCE_MIN})",
            verdict(pass),
            s.ks.p_value,
            s.cross_mean,
            s.impostor_mean,
            s.genuine_acceptance
        );
        Ok(pass)
    }
}

pub fn population_config(
    identities: usize,
    samples: usize,
    intra_deg: f64,
    params: &ProtectionParams,
    seed: u64,
) -> SyntheticPopulation {
    SyntheticPopulation {
        identities,
        samples_per_identity: samples,
        layout: params.layout,
        intra_angle: intra_deg.to_radians(),
        seed: derive_seed(seed, POPULATION_STREAM),
    }
}

fn ensure_dir(p: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(p).map_err(|e| Failure::usage(format!("{}: {e}", p.display())))
}

pub fn run(args: EvalArgs, seed: &SeedChoice) -> Result<(), Failure> {
    let params = args.params.params()?;
    ensure_dir(&args.out_dir)?;
    let pop = generate_population(&population_config(
        args.identities,
        args.samples,
        args.intra,
        &params,
        seed.seed,
    ))?;
    let ctx = Ctx {
        args: &args,
        pop,
        params,
        seed: seed.seed,
    };
    let suites: &[Suite] = match args.suite {
        Suite::All => &[Suite::Roc, Suite::Ablation, Suite::Sswl, Suite::Revocability],
        ref s => std::slice::from_ref(s),
    };
    let mut all = true;
    for s in suites {
        all &= match s {
            Suite::Roc => ctx.roc()?,
            Suite::Ablation => ctx.ablation()?,
            Suite::Sswl => ctx.sswl()?,
            Suite::Revocability => ctx.revocability()?,
            Suite::All => unreachable!(),
        };
    }
    if all {
        Ok(())
    } else {
        Err(Failure {
            code: EXIT_ACCEPTANCE,
            message: "acceptance check failed".into(),
        })
    }
}
