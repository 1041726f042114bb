use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::Args;
use slerpshield_core::evaluation::{accuracy_sweep, generate_population, SyntheticPopulation};
use slerpshield_core::store::TemplateStore;
use slerpshield_core::{DropoutMode, Error, GroupLayout, ProtectionParams};

pub const EXIT_DATA: u8 = 2;
pub const EXIT_DEGENERATE: u8 = 3;
pub const EXIT_ACCEPTANCE: u8 = 4;

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_DATA,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::DegenerateAngle { .. } => EXIT_DEGENERATE,
            _ => EXIT_DATA,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

pub struct SeedChoice {
    pub seed: u64,
    /// The seed came from the flag or the environment.
    pub fixed: bool,
}

impl SeedChoice {
    pub fn resolve(flag: Option<u64>) -> Result<Self, Failure> {
        if let Some(seed) = flag {
            return Ok(Self { seed, fixed: true });
        }
        match std::env::var("SLERPSHIELD_SEED") {
            Ok(v) => v
                .trim()
                .parse()
                .map(|seed| Self { seed, fixed: true })
                .map_err(|_| Failure::usage(format!("SLERPSHIELD_SEED `{v}` is not an unsigned integer"))),
            Err(_) => Ok(Self {
                seed: rand::random(),
                fixed: false,
            }),
        }
    }

    /// Store creation time: SOURCE_DATE_EPOCH if set, 0 under a fixed
    /// seed so output bytes are reproducible, else the wall clock.
    pub fn created_utc(&self) -> i64 {
        if let Some(t) = std::env::var("SOURCE_DATE_EPOCH")
            .ok()
            .and_then(|v| v.trim().parse().ok())
        {
            return t;
        }
        if self.fixed {
            return 0;
        }
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs() as i64)
            .unwrap_or(0)
    }
}

#[derive(Args, Debug, Clone)]
pub struct ParamArgs {
    /// Interpolation amount toward the key, in [0, 1).
    #[arg(long, default_value_t = 0.9)]
    pub alpha: f64,
    /// Dropout ratio, in [0, 1).
    #[arg(long, default_value_t = 0.5)]
    pub beta: f64,
    /// Template dimension.
    #[arg(long, default_value_t = 784)]
    pub d: usize,
    /// Number of groups; must divide d.
    #[arg(long, default_value_t = 49)]
    pub m: usize,
    /// random or weighted.
    #[arg(long, default_value = "random")]
    pub dropout: String,
}

impl ParamArgs {
    pub fn params(&self) -> Result<ProtectionParams, Failure> {
        let layout = GroupLayout::new(self.d, self.m)?;
        let mode: DropoutMode = self.dropout.parse()?;
        Ok(ProtectionParams::new(self.alpha, self.beta, layout, mode)?)
    }
}

pub fn load_store(path: &Path) -> Result<TemplateStore, Failure> {
    if !path.exists() {
        return Err(Failure::usage(format!("store {} does not exist", path.display())));
    }
    TemplateStore::load(path).map_err(|e| Failure::usage(format!("cannot load {}: {e}", path.display())))
}

pub fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>, Failure> {
    s.split(',')
        .filter(|x| !x.trim().is_empty())
        .map(|x| {
            x.trim()
                .parse()
                .map_err(|_| Failure::usage(format!("bad {what} `{x}`")))
        })
        .collect()
}

/// Operating point used when no `--threshold` is given: the EER threshold
/// of these parameters on the standard synthetic population, or the
/// midpoint of the gap when genuine and impostor scores separate.
pub fn calibrated_threshold(params: &ProtectionParams) -> Result<f64, Failure> {
    let pop = generate_population(&SyntheticPopulation {
        layout: params.layout,
        ..SyntheticPopulation::default()
    })?;
    let r = accuracy_sweep(&pop, params, &[], 2000, 0)?;
    if r.eer.eer > 0.0 {
        return Ok(r.eer.threshold);
    }
    let max_impostor = r.scores.impostor.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(0.5 * (max_impostor + r.eer.threshold))
}
