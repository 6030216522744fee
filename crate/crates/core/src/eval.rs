//! Sampled error metrics, reduction factors, and parameter sweeps.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{tt_sketch, tt_sketch_par, SketchConfig};
use crate::benchgen::BenchSpec;
use crate::error::{PeidError, Result};
use crate::index::Shape;
use crate::oracle::{CountingOracle, TensorOracle};
use crate::peid::{tt_peid, PeidAlgorithm};
use crate::sampling::{derive_seed, OversamplePlan};
use crate::skeleton::{skeleton_tt, tt_aca, AcaConfig, PivotSets};
use crate::tt::TtTensor;

pub const DEFAULT_SAMPLE_COUNT: usize = 10_000;
pub const DEFAULT_SAMPLE_SEED: u64 = 20_240_917;

/// Uniformly drawn multi-indices with the reference values at each.
#[derive(Clone, Debug)]
pub struct SampleSet {
    shape: Shape,
    seed: u64,
    indices: Vec<Vec<usize>>,
    reference: Vec<f64>,
}

impl SampleSet {
    /// `count` indices drawn independently and uniformly (with replacement).
    pub fn draw(oracle: &dyn TensorOracle, count: usize, seed: u64) -> SampleSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dims = oracle.dims();
        let indices: Vec<Vec<usize>> = (0..count)
            .map(|_| dims.iter().map(|&n| rng.random_range(0..n)).collect())
            .collect();
        SampleSet::from_indices(oracle, indices, seed)
    }

    /// Sample set over explicit indices.
    pub fn from_indices(oracle: &dyn TensorOracle, indices: Vec<Vec<usize>>, seed: u64) -> Self {
        let reference = indices.par_iter().map(|i| oracle.eval(i)).collect();
        SampleSet { shape: oracle.shape().clone(), seed, indices, reference }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn indices(&self) -> &[Vec<usize>] {
        &self.indices
    }

    /// Identity used to refuse reduction factors across different samples.
    pub fn id(&self) -> SampleId {
        SampleId { seed: self.seed, count: self.len(), dims: self.shape.dims().to_vec() }
    }

    /// `sqrt(Σ (X(i) - A(i))² / Σ X(i)²)` over the samples.
    pub fn rel_err(&self, approx: &dyn TensorOracle) -> Result<SampledError> {
        if approx.shape() != &self.shape {
            return Err(PeidError::contract(format!(
                "approximation shape {:?} differs from sample shape {:?}",
                approx.dims(),
                self.shape.dims()
            )));
        }
        // Parallel evaluation, sequential sums: the result must not depend
        // on the worker count.
        let values: Vec<f64> = self.indices.par_iter().map(|i| approx.eval(i)).collect();
        let (num, den) = values
            .iter()
            .zip(&self.reference)
            .fold((0.0, 0.0), |(n, d), (&a, &x)| (n + (x - a).powi(2), d + x * x));
        if den == 0.0 {
            return Err(PeidError::UndefinedDenominator);
        }
        Ok(SampledError { value: (num / den).sqrt(), samples: self.id() })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SampleId {
    seed: u64,
    count: usize,
    dims: Vec<usize>,
}

/// A sampled relative error tagged with the samples it came from.
#[derive(Clone, Debug, PartialEq)]
pub struct SampledError {
    pub value: f64,
    pub samples: SampleId,
}

/// Relative error of `approx` against `oracle` on `samples`.
pub fn sampled_rel_err(
    oracle: &dyn TensorOracle,
    approx: &dyn TensorOracle,
    samples: &SampleSet,
) -> Result<f64> {
    if oracle.shape() != &samples.shape {
        return Err(PeidError::contract("oracle shape differs from sample shape"));
    }
    Ok(samples.rel_err(approx)?.value)
}

/// `err_aca / err_peid`; `+∞` when the PEID error is zero.
pub fn reduction_factor(err_aca: f64, err_peid: f64) -> f64 {
    if err_peid == 0.0 {
        f64::INFINITY
    } else {
        err_aca / err_peid
    }
}

/// Reduction factor that refuses errors measured on different samples.
pub fn reduction_factor_checked(aca: &SampledError, peid: &SampledError) -> Result<f64> {
    if aca.samples != peid.samples {
        return Err(PeidError::contract("reduction factor across different sample sets"));
    }
    Ok(reduction_factor(aca.value, peid.value))
}

/// Methods a sweep can run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Method {
    /// The plain skeleton train from the pivots.
    Aca,
    Peid(PeidAlgorithm),
    Sketch,
    SketchPar,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Aca => "aca",
            Method::Peid(a) => a.name(),
            Method::Sketch => "sketch",
            Method::SketchPar => "sketch-par",
        }
    }

    fn oversampled(&self) -> bool {
        matches!(self, Method::Peid(_))
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = PeidError;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "aca" => Method::Aca,
            "sketch" => Method::Sketch,
            "sketch-par" => Method::SketchPar,
            other => Method::Peid(other.parse()?),
        })
    }
}

impl Serialize for Method {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for Method {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Oversampling choice for a sweep cell.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Oversampling {
    /// The same count at every bond.
    P(usize),
    /// Counts from the logarithmic schedule with this scale.
    Alpha(f64),
}

impl Oversampling {
    pub fn plan(&self, shape: &Shape, seed: u64) -> Result<OversamplePlan> {
        match *self {
            Oversampling::P(p) => Ok(OversamplePlan::constant(shape.order(), p, seed)),
            Oversampling::Alpha(a) => OversamplePlan::scheduled(a, shape.dims(), seed),
        }
    }

    pub fn label(&self) -> String {
        match self {
            Oversampling::P(p) => format!("p={p}"),
            Oversampling::Alpha(a) => format!("alpha={a}"),
        }
    }
}

fn default_repetitions() -> usize {
    1
}

fn default_samples() -> usize {
    DEFAULT_SAMPLE_COUNT
}

fn default_sample_seed() -> u64 {
    DEFAULT_SAMPLE_SEED
}

/// A grid of runs over one tensor and one pivot search.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub tensor: BenchSpec,
    #[serde(default)]
    pub aca: AcaConfig,
    pub algorithms: Vec<Method>,
    #[serde(default)]
    pub oversampling: Vec<Oversampling>,
    pub seeds: Vec<u64>,
    #[serde(default = "default_repetitions")]
    pub repetitions: usize,
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default = "default_sample_seed")]
    pub sample_seed: u64,
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.repetitions == 0 {
            return Err(PeidError::Config("repetitions must be at least 1".into()));
        }
        if self.samples == 0 {
            return Err(PeidError::Config("sample count must be at least 1".into()));
        }
        if self.algorithms.iter().any(Method::oversampled) && self.oversampling.is_empty() {
            return Err(PeidError::Config("PEID algorithms need an oversampling grid".into()));
        }
        Ok(())
    }

    /// Cells in output order: algorithm, then oversampling, then seed, then
    /// repetition.
    pub fn cells(&self) -> Vec<Cell> {
        let mut out = Vec::new();
        for &method in &self.algorithms {
            let grid: Vec<Option<Oversampling>> = if method.oversampled() {
                self.oversampling.iter().copied().map(Some).collect()
            } else {
                vec![None]
            };
            for over in grid {
                for &seed in &self.seeds {
                    for rep in 0..self.repetitions {
                        out.push(Cell { method, oversampling: over, seed, rep });
                    }
                }
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Cell {
    pub method: Method,
    pub oversampling: Option<Oversampling>,
    pub seed: u64,
    pub rep: usize,
}

impl Cell {
    /// Seed actually used by the run; repetitions get independent streams.
    pub fn run_seed(&self) -> u64 {
        if self.rep == 0 {
            self.seed
        } else {
            derive_seed(self.seed, &[self.rep as u64])
        }
    }
}

/// Outcome of a single run.
#[derive(Clone, Debug, PartialEq)]
pub enum Outcome {
    Ok { err: f64, rf: f64 },
    Failed(&'static str),
}

/// One CSV row.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub family: String,
    pub d: usize,
    pub n: usize,
    pub algorithm: String,
    pub alpha_or_p: String,
    pub seed: u64,
    pub rep: usize,
    pub ranks: Vec<usize>,
    pub outcome: Outcome,
    pub touches: u64,
    pub t_pivot_s: f64,
    pub t_peid_s: f64,
}

pub const CSV_HEADER: [&str; 13] = [
    "family",
    "d",
    "n",
    "algorithm",
    "alpha_or_p",
    "seed",
    "rep",
    "ranks",
    "err",
    "rf",
    "touches",
    "t_pivot_s",
    "t_peid_s",
];

/// `1;13;14;13;1`.
pub fn format_ranks(r: &[usize]) -> String {
    r.iter().map(usize::to_string).collect::<Vec<_>>().join(";")
}

pub fn parse_ranks(s: &str) -> Result<Vec<usize>> {
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(';')
        .map(|t| t.parse().map_err(|_| PeidError::Config(format!("bad rank list '{s}'"))))
        .collect()
}

fn format_float(v: f64) -> String {
    if v.is_infinite() {
        "inf".into()
    } else {
        format!("{v:e}")
    }
}

impl SweepRow {
    pub fn err(&self) -> Option<f64> {
        match self.outcome {
            Outcome::Ok { err, .. } => Some(err),
            Outcome::Failed(_) => None,
        }
    }

    pub fn rf(&self) -> Option<f64> {
        match self.outcome {
            Outcome::Ok { rf, .. } => Some(rf),
            Outcome::Failed(_) => None,
        }
    }

    pub fn record(&self) -> Vec<String> {
        let (err, rf) = match &self.outcome {
            Outcome::Ok { err, rf } => (format_float(*err), format_float(*rf)),
            Outcome::Failed(code) => (format!("error:{code}"), String::new()),
        };
        vec![
            self.family.clone(),
            self.d.to_string(),
            self.n.to_string(),
            self.algorithm.clone(),
            self.alpha_or_p.clone(),
            self.seed.to_string(),
            self.rep.to_string(),
            format_ranks(&self.ranks),
            err,
            rf,
            self.touches.to_string(),
            format!("{:.6}", self.t_pivot_s),
            format!("{:.6}", self.t_peid_s),
        ]
    }

    /// Parses a record written by [`SweepRow::record`].
    pub fn from_record(rec: &csv::StringRecord) -> Result<SweepRow> {
        if rec.len() != CSV_HEADER.len() {
            return Err(PeidError::Config(format!("CSV row has {} fields", rec.len())));
        }
        let num = |k: usize| -> Result<f64> {
            let s = &rec[k];
            if s == "inf" {
                return Ok(f64::INFINITY);
            }
            s.parse().map_err(|_| PeidError::Config(format!("bad number '{s}' in column {k}")))
        };
        let int = |k: usize| -> Result<u64> {
            rec[k].parse().map_err(|_| PeidError::Config(format!("bad integer '{}'", &rec[k])))
        };
        let outcome = match rec[8].strip_prefix("error:") {
            Some(code) => Outcome::Failed(intern_code(code)),
            None => Outcome::Ok { err: num(8)?, rf: num(9)? },
        };
        Ok(SweepRow {
            family: rec[0].to_string(),
            d: int(1)? as usize,
            n: int(2)? as usize,
            algorithm: rec[3].to_string(),
            alpha_or_p: rec[4].to_string(),
            seed: int(5)?,
            rep: int(6)? as usize,
            ranks: parse_ranks(&rec[7])?,
            outcome,
            touches: int(10)?,
            t_pivot_s: num(11)?,
            t_peid_s: num(12)?,
        })
    }
}

fn intern_code(code: &str) -> &'static str {
    const CODES: [&str; 12] = [
        "range",
        "contract",
        "overflow",
        "not-found",
        "nestedness",
        "validation",
        "size-guard",
        "undefined-denominator",
        "config",
        "io",
        "json",
        "csv",
    ];
    CODES.iter().copied().find(|&c| c == code).unwrap_or("unknown")
}

pub fn write_csv<W: Write>(rows: &[SweepRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(CSV_HEADER)?;
    for r in rows {
        out.write_record(r.record())?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_csv<R: std::io::Read>(r: R) -> Result<Vec<SweepRow>> {
    let mut rdr = csv::Reader::from_reader(r);
    let header = rdr.headers()?.clone();
    if header.iter().ne(CSV_HEADER.iter().copied()) {
        return Err(PeidError::Config("unexpected CSV header".into()));
    }
    rdr.records().map(|rec| SweepRow::from_record(&rec?)).collect()
}

/// Pivots, skeleton train and its error, shared by all cells of a sweep.
pub struct Baseline {
    pub pivots: PivotSets,
    pub skeleton: TtTensor,
    pub err: f64,
    pub touches: u64,
    pub seconds: f64,
}

/// Pivot search plus skeleton evaluation.
pub fn baseline(oracle: &dyn TensorOracle, aca: &AcaConfig, samples: &SampleSet) -> Result<Baseline> {
    let counter = CountingOracle::new(oracle);
    let start = Instant::now();
    let found = tt_aca(&counter, aca)?;
    let skeleton = skeleton_tt(&counter, &found.pivots)?;
    let seconds = start.elapsed().as_secs_f64();
    let err = samples.rel_err(&skeleton)?.value;
    Ok(Baseline { pivots: found.pivots, skeleton, err, touches: counter.touches(), seconds })
}

/// Skeleton evaluation for pivots found elsewhere; `seconds` covers only the
/// skeleton build.
pub fn baseline_from_pivots(
    oracle: &dyn TensorOracle,
    pivots: PivotSets,
    samples: &SampleSet,
) -> Result<Baseline> {
    if pivots.shape() != oracle.shape() {
        return Err(PeidError::Config(format!(
            "pivots are for shape {:?}, tensor has {:?}",
            pivots.shape().dims(),
            oracle.dims()
        )));
    }
    pivots.validate()?;
    let counter = CountingOracle::new(oracle);
    let start = Instant::now();
    let skeleton = skeleton_tt(&counter, &pivots)?;
    let seconds = start.elapsed().as_secs_f64();
    let err = samples.rel_err(&skeleton)?.value;
    Ok(Baseline { pivots, skeleton, err, touches: counter.touches(), seconds })
}

/// Runs one method from fixed pivots; returns the train and its touches.
pub fn run_method(
    oracle: &dyn TensorOracle,
    pivots: &PivotSets,
    method: Method,
    oversampling: Option<Oversampling>,
    seed: u64,
) -> Result<(TtTensor, u64)> {
    let counter = CountingOracle::new(oracle);
    let tt = match method {
        Method::Aca => skeleton_tt(&counter, pivots)?,
        Method::Peid(alg) => {
            let over = oversampling
                .ok_or_else(|| PeidError::Config(format!("{alg} needs an oversampling choice")))?;
            let plan = over.plan(oracle.shape(), seed)?;
            tt_peid(&counter, pivots, &plan, alg)?.tt
        }
        Method::Sketch | Method::SketchPar => {
            let cfg = SketchConfig { ranks: pivots.bond_ranks(), seed };
            if method == Method::Sketch {
                tt_sketch(&counter, &cfg)?
            } else {
                tt_sketch_par(&counter, &cfg)?
            }
        }
    };
    Ok((tt, counter.touches()))
}

/// Runs every cell in order. Individual failures become error rows; a failed
/// pivot search fails every cell.
pub fn run_sweep(cfg: &SweepConfig) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    let cells = cfg.cells();
    if cells.is_empty() {
        return Ok(Vec::new());
    }
    let oracle = cfg.tensor.build()?;
    let samples = SampleSet::draw(oracle.as_ref(), cfg.samples, cfg.sample_seed);
    let base = baseline(oracle.as_ref(), &cfg.aca, &samples);
    let mut rows = Vec::with_capacity(cells.len());
    for cell in cells {
        let mut row = SweepRow {
            family: cfg.tensor.family.to_string(),
            d: cfg.tensor.d,
            n: cfg.tensor.n,
            algorithm: cell.method.to_string(),
            alpha_or_p: cell.oversampling.map_or_else(|| "-".into(), |o| o.label()),
            seed: cell.seed,
            rep: cell.rep,
            ranks: Vec::new(),
            outcome: Outcome::Failed("unknown"),
            touches: 0,
            t_pivot_s: 0.0,
            t_peid_s: 0.0,
        };
        match &base {
            Err(e) => row.outcome = Outcome::Failed(e.code()),
            Ok(b) => {
                row.t_pivot_s = b.seconds;
                row.ranks = b.pivots.ranks();
                let start = Instant::now();
                let run = if cell.method == Method::Aca {
                    Ok((b.skeleton.clone(), b.touches))
                } else {
                    run_method(oracle.as_ref(), &b.pivots, cell.method, cell.oversampling, cell.run_seed())
                };
                row.t_peid_s = if cell.method == Method::Aca { 0.0 } else { start.elapsed().as_secs_f64() };
                match run.and_then(|(tt, touches)| Ok((samples.rel_err(&tt)?.value, touches, tt))) {
                    Ok((err, touches, tt)) => {
                        row.ranks = tt.ranks();
                        row.touches = touches;
                        row.outcome = Outcome::Ok { err, rf: reduction_factor(b.err, err) };
                    }
                    Err(e) => {
                        log::warn!("{} seed {} rep {}: {e}", cell.method, cell.seed, cell.rep);
                        row.outcome = Outcome::Failed(e.code());
                    }
                }
            }
        }
        rows.push(row);
    }
    Ok(rows)
}

/// Per-cell aggregate over seeds and repetitions.
#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub algorithm: String,
    pub alpha_or_p: String,
    pub runs: usize,
    pub failures: usize,
    pub mean_err: f64,
    pub median_err: f64,
    pub mean_rf: f64,
    pub median_rf: f64,
}

pub fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn median(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let m = s.len() / 2;
    if s.len() % 2 == 1 {
        s[m]
    } else {
        0.5 * (s[m - 1] + s[m])
    }
}

/// Groups rows by `(algorithm, alpha_or_p)` in first-appearance order.
pub fn summarize(rows: &[SweepRow]) -> Vec<SummaryRow> {
    let mut order: Vec<(String, String)> = Vec::new();
    let mut groups: BTreeMap<(String, String), Vec<&SweepRow>> = BTreeMap::new();
    for r in rows {
        let key = (r.algorithm.clone(), r.alpha_or_p.clone());
        if !groups.contains_key(&key) {
            order.push(key.clone());
        }
        groups.entry(key).or_default().push(r);
    }
    order
        .into_iter()
        .map(|key| {
            let g = &groups[&key];
            let errs: Vec<f64> = g.iter().filter_map(|r| r.err()).collect();
            let rfs: Vec<f64> = g.iter().filter_map(|r| r.rf()).collect();
            SummaryRow {
                algorithm: key.0,
                alpha_or_p: key.1,
                runs: g.len(),
                failures: g.len() - errs.len(),
                mean_err: mean(&errs),
                median_err: median(&errs),
                mean_rf: mean(&rfs),
                median_rf: median(&rfs),
            }
        })
        .collect()
}

pub fn write_summary_csv<W: Write>(rows: &[SummaryRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "algorithm",
        "alpha_or_p",
        "runs",
        "failures",
        "mean_err",
        "median_err",
        "mean_rf",
        "median_rf",
    ])?;
    for r in rows {
        out.write_record([
            r.algorithm.clone(),
            r.alpha_or_p.clone(),
            r.runs.to_string(),
            r.failures.to_string(),
            format_float(r.mean_err),
            format_float(r.median_err),
            format_float(r.mean_rf),
            format_float(r.median_rf),
        ])?;
    }
    out.flush()?;
    Ok(())
}
