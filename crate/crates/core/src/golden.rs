//! Golden sweep records: a config, its CSV output, and per-column bands.

use std::fmt;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{PeidError, Result};
use crate::eval::{format_ranks, read_csv, run_sweep, write_csv, Outcome, SweepConfig, SweepRow};

/// Allowed drift per column.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bands {
    /// Relative band on `err`.
    pub err_rel: f64,
    /// Relative band on `rf`.
    pub rf_rel: f64,
    /// Absolute band on `touches`.
    pub touches_abs: u64,
    /// Absolute band per bond rank.
    pub ranks_abs: usize,
}

impl Default for Bands {
    fn default() -> Self {
        Bands { err_rel: 0.5, rf_rel: 0.5, touches_abs: 0, ranks_abs: 2 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GoldenRecord {
    pub name: String,
    pub config: SweepConfig,
    /// SHA-256 of the config's JSON encoding.
    pub config_hash: String,
    #[serde(default)]
    pub bands: Bands,
    /// Sweep output in the CSV schema.
    pub csv: String,
}

/// Hex SHA-256 of the JSON encoding of `cfg`.
pub fn config_hash(cfg: &SweepConfig) -> Result<String> {
    let bytes = serde_json::to_vec(cfg)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Runs `f` on a single worker so verification never depends on scheduling.
fn single_threaded<T: Send>(f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| PeidError::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

impl GoldenRecord {
    /// Runs `config` and snapshots its rows.
    pub fn generate(name: impl Into<String>, config: SweepConfig) -> Result<Self> {
        let rows = single_threaded(|| run_sweep(&config))??;
        let mut buf = Vec::new();
        write_csv(&rows, &mut buf)?;
        let csv = String::from_utf8(buf).map_err(|e| PeidError::Config(e.to_string()))?;
        Ok(GoldenRecord {
            name: name.into(),
            config_hash: config_hash(&config)?,
            config,
            bands: Bands::default(),
            csv,
        })
    }

    pub fn rows(&self) -> Result<Vec<SweepRow>> {
        read_csv(self.csv.as_bytes())
    }

    pub fn write_json<W: Write>(&self, w: W) -> Result<()> {
        serde_json::to_writer_pretty(w, self)?;
        Ok(())
    }

    pub fn read_json<R: Read>(r: R) -> Result<Self> {
        Ok(serde_json::from_reader(r)?)
    }
}

/// One out-of-band cell.
#[derive(Clone, Debug, PartialEq)]
pub struct Diff {
    /// 0-based data row; `None` for record-level mismatches.
    pub row: Option<usize>,
    pub column: &'static str,
    pub expected: String,
    pub actual: String,
}

impl fmt::Display for Diff {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.row {
            Some(r) => write!(f, "row {r} {}: expected {}, got {}", self.column, self.expected, self.actual),
            None => write!(f, "{}: expected {}, got {}", self.column, self.expected, self.actual),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GoldenReport {
    pub name: String,
    pub rows: usize,
    pub diffs: Vec<Diff>,
}

impl GoldenReport {
    pub fn passed(&self) -> bool {
        self.diffs.is_empty()
    }
}

fn within_rel(expected: f64, actual: f64, band: f64) -> bool {
    if expected == actual {
        return true;
    }
    if !expected.is_finite() || !actual.is_finite() {
        return false;
    }
    (actual - expected).abs() <= band * expected.abs()
}

/// Out-of-band cells of `actual` against `expected`. Timing columns are
/// never compared.
pub fn compare(expected: &[SweepRow], actual: &[SweepRow], bands: &Bands) -> Vec<Diff> {
    let mut diffs = Vec::new();
    if expected.len() != actual.len() {
        diffs.push(Diff {
            row: None,
            column: "rows",
            expected: expected.len().to_string(),
            actual: actual.len().to_string(),
        });
        return diffs;
    }
    for (i, (e, a)) in expected.iter().zip(actual).enumerate() {
        let mut push = |column, ev: String, av: String| {
            diffs.push(Diff { row: Some(i), column, expected: ev, actual: av })
        };
        let keys = [
            ("family", &e.family, &a.family),
            ("algorithm", &e.algorithm, &a.algorithm),
            ("alpha_or_p", &e.alpha_or_p, &a.alpha_or_p),
        ];
        for (col, ev, av) in keys {
            if ev != av {
                push(col, ev.clone(), av.clone());
            }
        }
        if (e.d, e.n, e.seed, e.rep) != (a.d, a.n, a.seed, a.rep) {
            push(
                "d/n/seed/rep",
                format!("{}/{}/{}/{}", e.d, e.n, e.seed, e.rep),
                format!("{}/{}/{}/{}", a.d, a.n, a.seed, a.rep),
            );
        }
        let ranks_ok = e.ranks.len() == a.ranks.len()
            && e.ranks.iter().zip(&a.ranks).all(|(x, y)| x.abs_diff(*y) <= bands.ranks_abs);
        if !ranks_ok {
            push("ranks", format_ranks(&e.ranks), format_ranks(&a.ranks));
        }
        if e.touches.abs_diff(a.touches) > bands.touches_abs {
            push("touches", e.touches.to_string(), a.touches.to_string());
        }
        match (&e.outcome, &a.outcome) {
            (Outcome::Ok { err: ee, rf: er }, Outcome::Ok { err: ae, rf: ar }) => {
                if !within_rel(*ee, *ae, bands.err_rel) {
                    push("err", format!("{ee:e}"), format!("{ae:e}"));
                }
                if !within_rel(*er, *ar, bands.rf_rel) {
                    push("rf", format!("{er:e}"), format!("{ar:e}"));
                }
            }
            (Outcome::Failed(x), Outcome::Failed(y)) if x == y => {}
            (x, y) => push("err", format!("{x:?}"), format!("{y:?}")),
        }
    }
    diffs
}

/// Reruns the record's config single-threaded and compares within bands.
///
/// A config that no longer matches its stored hash fails without rerunning.
pub fn verify_golden(record: &GoldenRecord) -> Result<GoldenReport> {
    let expected = record.rows()?;
    let hash = config_hash(&record.config)?;
    if hash != record.config_hash {
        return Ok(GoldenReport {
            name: record.name.clone(),
            rows: expected.len(),
            diffs: vec![Diff {
                row: None,
                column: "config_hash",
                expected: record.config_hash.clone(),
                actual: hash,
            }],
        });
    }
    let actual = single_threaded(|| run_sweep(&record.config))??;
    Ok(GoldenReport {
        name: record.name.clone(),
        rows: expected.len(),
        diffs: compare(&expected, &actual, &record.bands),
    })
}
