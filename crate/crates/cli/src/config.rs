use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use serde::{Deserialize, Serialize};
use ttpeid::eval::{DEFAULT_SAMPLE_COUNT, DEFAULT_SAMPLE_SEED};
use ttpeid::{AcaConfig, BenchSpec, Method, Oversampling};

/// Settings of one compression run. The JSON config file uses the same
/// field names as the flags (snake_case in JSON, kebab-case on the command line).
#[derive(Args, Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Tensor family, optionally with parameters: `matern:a0=2,a1=3`.
    #[arg(long)]
    pub family: Option<String>,
    /// Tensor order.
    #[arg(long)]
    pub d: Option<usize>,
    /// Mode size.
    #[arg(long)]
    pub n: Option<usize>,
    /// aca, peid-par, peid-seq, peid-par2, peid-seq2, peid-round, sketch or sketch-par.
    #[arg(long)]
    pub alg: Option<Method>,
    /// Relative ACA stopping tolerance.
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub max_rank: Option<usize>,
    /// Constant oversampling count per bond.
    #[arg(long, conflicts_with = "alpha")]
    pub p: Option<usize>,
    /// Scale of the logarithmic oversampling schedule.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Seed of the post-processing step.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Seed of the pivot search.
    #[arg(long)]
    pub aca_seed: Option<u64>,
    /// Number of sampled entries for the error estimate.
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub sample_seed: Option<u64>,
    /// Use pivots from this JSON file instead of searching.
    #[arg(long)]
    pub pivots: Option<PathBuf>,
    /// Write the pivots used to this JSON file.
    #[arg(long)]
    pub save_pivots: Option<PathBuf>,
    /// Write the resulting train to this JSON file.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Append the result row to this CSV file instead of printing it.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
        serde_json::from_reader(BufReader::new(f))
            .with_context(|| format!("parsing run config {}", path.display()))
    }

    /// Fields set in `self` win over those in `base`.
    pub fn over(self, base: RunConfig) -> RunConfig {
        RunConfig {
            family: self.family.or(base.family),
            d: self.d.or(base.d),
            n: self.n.or(base.n),
            alg: self.alg.or(base.alg),
            tol: self.tol.or(base.tol),
            max_rank: self.max_rank.or(base.max_rank),
            p: self.p.or(base.p),
            alpha: self.alpha.or(base.alpha),
            seed: self.seed.or(base.seed),
            aca_seed: self.aca_seed.or(base.aca_seed),
            samples: self.samples.or(base.samples),
            sample_seed: self.sample_seed.or(base.sample_seed),
            pivots: self.pivots.or(base.pivots),
            save_pivots: self.save_pivots.or(base.save_pivots),
            out: self.out.or(base.out),
            csv: self.csv.or(base.csv),
        }
    }

    pub fn resolve(self) -> Result<Run> {
        let family = self.family.context("missing required --family")?;
        let d = self.d.context("missing required --d")?;
        let n = self.n.context("missing required --n")?;
        let method = self.alg.context("missing required --alg")?;
        let oversampling = match (self.p, self.alpha) {
            (Some(_), Some(_)) => bail!("--p and --alpha are mutually exclusive"),
            (Some(p), None) => Some(Oversampling::P(p)),
            (None, Some(a)) => Some(Oversampling::Alpha(a)),
            (None, None) => None,
        };
        if matches!(method, Method::Peid(_)) && oversampling.is_none() {
            bail!("{method} needs --p or --alpha");
        }
        let defaults = AcaConfig::default();
        Ok(Run {
            tensor: BenchSpec::parse(&family, d, n)?,
            aca: AcaConfig {
                tolerance: self.tol.unwrap_or(defaults.tolerance),
                max_rank: self.max_rank.unwrap_or(defaults.max_rank),
                seed: self.aca_seed.unwrap_or(defaults.seed),
                ..defaults
            },
            method,
            oversampling: if matches!(method, Method::Peid(_)) { oversampling } else { None },
            seed: self.seed.unwrap_or(0),
            samples: self.samples.unwrap_or(DEFAULT_SAMPLE_COUNT),
            sample_seed: self.sample_seed.unwrap_or(DEFAULT_SAMPLE_SEED),
            pivots: self.pivots,
            save_pivots: self.save_pivots,
            out: self.out,
            csv: self.csv,
        })
    }
}

/// A fully specified run.
#[derive(Clone, Debug)]
pub struct Run {
    pub tensor: BenchSpec,
    pub aca: AcaConfig,
    pub method: Method,
    pub oversampling: Option<Oversampling>,
    pub seed: u64,
    pub samples: usize,
    pub sample_seed: u64,
    pub pivots: Option<PathBuf>,
    pub save_pivots: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub csv: Option<PathBuf>,
}
