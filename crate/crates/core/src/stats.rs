//! Aggregation of per-record scores into before/after tables, order-bias
//! gaps and paired bootstrap significance.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Dimension, DimensionScores};

pub const DEFAULT_RESAMPLES: u64 = 10_000;
pub const SIGNIFICANCE_LEVEL: f64 = 0.05;
/// Largest n for which [`BootstrapMode::Auto`] enumerates every resample.
pub const EXHAUSTIVE_MAX_N: usize = 8;

const CHUNKS: u64 = 64;

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("series {0:?} is empty")]
    Empty(String),
    #[error("series have different lengths ({left} vs {right})")]
    LengthMismatch { left: usize, right: usize },
    #[error("series are misaligned at position {index}: {left:?} vs {right:?}")]
    Misaligned { index: usize, left: String, right: String },
    #[error("paired bootstrap needs at least 2 records, got {0}")]
    TooFew(usize),
    #[error("value {value} at position {index} is outside [0, 1]")]
    OutOfRange { index: usize, value: f64 },
    #[error("group key list has {got} entries for {expected} records")]
    GroupMismatch { expected: usize, got: usize },
}

/// Half-up rounding to one decimal. The epsilon absorbs binary
/// representation error so that 8.45 rounds to 8.5.
pub fn round1(x: f64) -> f64 {
    let r = (x.abs() * 10.0 + 0.5 + 1e-9).floor() / 10.0;
    if x < 0.0 && r != 0.0 {
        -r
    } else {
        r
    }
}

/// `+4.7`, `-1.2`, `+0.0`.
pub fn signed(x: f64) -> String {
    let r = round1(x);
    if r < 0.0 {
        format!("{r:.1}")
    } else {
        format!("+{:.1}", r.abs())
    }
}

/// Per-record fractions for one dimension, keyed by record id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSeries {
    pub label: String,
    pub ids: Vec<String>,
    pub values: Vec<f64>,
}

impl ScoreSeries {
    pub fn new(label: impl Into<String>, ids: Vec<String>, values: Vec<f64>) -> Result<Self, StatsError> {
        if ids.len() != values.len() {
            return Err(StatsError::LengthMismatch {
                left: ids.len(),
                right: values.len(),
            });
        }
        if let Some((index, &value)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(StatsError::OutOfRange { index, value });
        }
        Ok(Self {
            label: label.into(),
            ids,
            values,
        })
    }

    /// Ids `0..n` for series built in tests or from plain vectors.
    pub fn unkeyed(label: impl Into<String>, values: Vec<f64>) -> Result<Self, StatsError> {
        let ids = (0..values.len()).map(|i| i.to_string()).collect();
        Self::new(label, ids, values)
    }

    /// One series per dimension from `(record_id, scores)` pairs.
    pub fn from_scores<'a, I>(label: &str, rows: I) -> [ScoreSeries; 3]
    where
        I: IntoIterator<Item = (&'a str, &'a DimensionScores)>,
    {
        let rows: Vec<_> = rows.into_iter().collect();
        Dimension::ALL.map(|d| ScoreSeries {
            label: format!("{label}/{d}"),
            ids: rows.iter().map(|(id, _)| id.to_string()).collect(),
            values: rows
                .iter()
                .map(|(_, s)| crate::model::fraction_to_f64(s.get(d)))
                .collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `100 * mean`, unrounded.
    pub fn mean_raw(&self) -> Result<f64, StatsError> {
        if self.values.is_empty() {
            return Err(StatsError::Empty(self.label.clone()));
        }
        Ok(100.0 * self.values.iter().sum::<f64>() / self.values.len() as f64)
    }
}

/// `100 * mean`, rounded half-up to one decimal.
pub fn mean_scores(series: &ScoreSeries) -> Result<f64, StatsError> {
    series.mean_raw().map(round1)
}

/// Per-dimension mean percentages of one run. Values are kept unrounded;
/// rounding happens at display time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSummary {
    pub label: String,
    pub means: [f64; 3],
}

impl TrialSummary {
    pub fn new(label: impl Into<String>, faith: f64, comp: f64, conc: f64) -> Self {
        Self {
            label: label.into(),
            means: [faith, comp, conc],
        }
    }

    pub fn from_series(label: impl Into<String>, series: &[ScoreSeries; 3]) -> Result<Self, StatsError> {
        let mut means = [0.0; 3];
        for (m, s) in means.iter_mut().zip(series) {
            *m = s.mean_raw()?;
        }
        Ok(Self {
            label: label.into(),
            means,
        })
    }

    pub fn from_scores<'a, I>(label: impl Into<String>, scores: I) -> Result<Self, StatsError>
    where
        I: IntoIterator<Item = &'a DimensionScores>,
    {
        let label = label.into();
        let rows: Vec<[f64; 3]> = scores.into_iter().map(DimensionScores::as_f64).collect();
        if rows.is_empty() {
            return Err(StatsError::Empty(label));
        }
        let mut means = [0.0; 3];
        for row in &rows {
            for (m, v) in means.iter_mut().zip(row) {
                *m += v;
            }
        }
        Ok(Self {
            label,
            means: means.map(|m| 100.0 * m / rows.len() as f64),
        })
    }

    pub fn get(&self, dim: Dimension) -> f64 {
        self.means[dim as usize]
    }

    pub fn rounded(&self, dim: Dimension) -> f64 {
        round1(self.get(dim))
    }

    /// Composite of the unrounded means.
    pub fn avg(&self) -> f64 {
        self.means.iter().sum::<f64>() / 3.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeltaRow {
    pub dims: [f64; 3],
    pub avg: f64,
}

impl DeltaRow {
    pub fn get(&self, dim: Dimension) -> f64 {
        self.dims[dim as usize]
    }

    pub fn render(&self) -> [String; 4] {
        [signed(self.dims[0]), signed(self.dims[1]), signed(self.dims[2]), signed(self.avg)]
    }
}

/// `after - before` per dimension and for the composite, rounded.
pub fn delta_row(before: &TrialSummary, after: &TrialSummary) -> DeltaRow {
    DeltaRow {
        dims: [0, 1, 2].map(|i| round1(after.means[i] - before.means[i])),
        avg: round1(after.avg() - before.avg()),
    }
}

/// Spread of trial means, rounded.
pub fn max_min(values: &[f64]) -> Result<f64, StatsError> {
    if values.is_empty() {
        return Err(StatsError::Empty("trial means".into()));
    }
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(round1(max - min))
}

/// Trial rows plus the per-dimension Max–Min gap over their rounded means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialMatrix {
    pub trials: Vec<TrialSummary>,
    pub max_min: [f64; 3],
}

impl TrialMatrix {
    pub fn new(trials: Vec<TrialSummary>) -> Result<Self, StatsError> {
        let mut gaps = [0.0; 3];
        for d in Dimension::ALL {
            let col: Vec<f64> = trials.iter().map(|t| t.rounded(d)).collect();
            gaps[d as usize] = max_min(&col)?;
        }
        Ok(Self {
            trials,
            max_min: gaps,
        })
    }

    pub fn to_markdown(&self, title: &str) -> String {
        let mut out = format!("| {title} | Faith. | Comp. | Conc. |\n|---|---|---|---|\n");
        for t in &self.trials {
            let _ = writeln!(
                out,
                "| {} | {:.1} | {:.1} | {:.1} |",
                t.label,
                t.rounded(Dimension::Faithfulness),
                t.rounded(Dimension::Completeness),
                t.rounded(Dimension::Conciseness)
            );
        }
        let _ = writeln!(
            out,
            "| Max–Min | {:.1} | {:.1} | {:.1} |",
            self.max_min[0], self.max_min[1], self.max_min[2]
        );
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BootstrapMode {
    /// Exhaustive for n ≤ [`EXHAUSTIVE_MAX_N`], Monte Carlo above.
    #[default]
    Auto,
    MonteCarlo,
    Exhaustive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub resamples: u64,
    pub seed: u64,
    #[serde(default)]
    pub mode: BootstrapMode,
}

impl BootstrapConfig {
    pub fn new(resamples: u64, seed: u64) -> Self {
        Self {
            resamples,
            seed,
            mode: BootstrapMode::Auto,
        }
    }

    pub fn with_mode(mut self, mode: BootstrapMode) -> Self {
        self.mode = mode;
        self
    }
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self::new(DEFAULT_RESAMPLES, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignificanceResult {
    pub p_value: f64,
    pub significant: bool,
    /// Resamples actually drawn; `n^n` in exhaustive mode.
    pub resamples: u64,
    pub seed: u64,
    pub observed_mean: f64,
}

impl SignificanceResult {
    fn new(q: f64, resamples: u64, seed: u64, observed_mean: f64) -> Self {
        let p_value = (2.0 * q).min(1.0);
        Self {
            p_value,
            significant: p_value < SIGNIFICANCE_LEVEL,
            resamples,
            seed,
            observed_mean,
        }
    }
}

fn differences(baseline: &ScoreSeries, treatment: &ScoreSeries) -> Result<Vec<f64>, StatsError> {
    if baseline.len() != treatment.len() {
        return Err(StatsError::LengthMismatch {
            left: baseline.len(),
            right: treatment.len(),
        });
    }
    if let Some(index) = (0..baseline.len()).find(|&i| baseline.ids[i] != treatment.ids[i]) {
        return Err(StatsError::Misaligned {
            index,
            left: baseline.ids[index].clone(),
            right: treatment.ids[index].clone(),
        });
    }
    if baseline.len() < 2 {
        return Err(StatsError::TooFew(baseline.len()));
    }
    Ok(treatment
        .values
        .iter()
        .zip(&baseline.values)
        .map(|(t, b)| t - b)
        .collect())
}

/// Whether a resampled mean crosses zero against the observed sign.
/// Sums are compared with a tolerance so exact ties count as crossing.
fn crosses(sum: f64, observed_nonneg: bool) -> bool {
    const TOL: f64 = 1e-12;
    if observed_nonneg {
        sum <= TOL
    } else {
        sum >= -TOL
    }
}

/// Two-sided paired bootstrap over record-level differences
/// `treatment - baseline`.
pub fn paired_bootstrap(
    baseline: &ScoreSeries,
    treatment: &ScoreSeries,
    config: &BootstrapConfig,
) -> Result<SignificanceResult, StatsError> {
    let d = differences(baseline, treatment)?;
    let groups: Vec<Vec<f64>> = d.into_iter().map(|x| vec![x]).collect();
    Ok(bootstrap_groups(&groups, config))
}

/// Like [`paired_bootstrap`] but resamples whole groups (for example all
/// summaries of one document). `group_keys[i]` names the group of record i.
pub fn paired_bootstrap_grouped(
    baseline: &ScoreSeries,
    treatment: &ScoreSeries,
    group_keys: &[String],
    config: &BootstrapConfig,
) -> Result<SignificanceResult, StatsError> {
    let d = differences(baseline, treatment)?;
    if group_keys.len() != d.len() {
        return Err(StatsError::GroupMismatch {
            expected: d.len(),
            got: group_keys.len(),
        });
    }
    let mut order: Vec<&String> = Vec::new();
    let mut groups: Vec<Vec<f64>> = Vec::new();
    for (key, x) in group_keys.iter().zip(d) {
        match order.iter().position(|k| *k == key) {
            Some(i) => groups[i].push(x),
            None => {
                order.push(key);
                groups.push(vec![x]);
            }
        }
    }
    if groups.len() < 2 {
        return Err(StatsError::TooFew(groups.len()));
    }
    Ok(bootstrap_groups(&groups, config))
}

fn bootstrap_groups(groups: &[Vec<f64>], config: &BootstrapConfig) -> SignificanceResult {
    let sums: Vec<f64> = groups.iter().map(|g| g.iter().sum()).collect();
    let sizes: Vec<f64> = groups.iter().map(|g| g.len() as f64).collect();
    let total: f64 = sums.iter().sum();
    let observed_mean = total / sizes.iter().sum::<f64>();
    let nonneg = observed_mean >= 0.0;
    let k = groups.len();

    let exhaustive = match config.mode {
        BootstrapMode::Exhaustive => true,
        BootstrapMode::MonteCarlo => false,
        BootstrapMode::Auto => k <= EXHAUSTIVE_MAX_N,
    };
    if exhaustive {
        let (hits, total) = enumerate(&sums, nonneg);
        return SignificanceResult::new(hits as f64 / total as f64, total, config.seed, observed_mean);
    }

    let b = config.resamples.max(1);
    let hits: u64 = (0..CHUNKS)
        .into_par_iter()
        .map(|chunk| {
            let count = b / CHUNKS + u64::from(chunk < b % CHUNKS);
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(chunk);
            let mut hits = 0u64;
            for _ in 0..count {
                // the mean crosses zero exactly when the sum does
                let s: f64 = (0..k).map(|_| sums[rng.random_range(0..k)]).sum();
                if crosses(s, nonneg) {
                    hits += 1;
                }
            }
            hits
        })
        .sum();
    SignificanceResult::new(hits as f64 / b as f64, b, config.seed, observed_mean)
}

/// Counts every one of the `k^k` index tuples.
fn enumerate(sums: &[f64], nonneg: bool) -> (u64, u64) {
    let k = sums.len();
    let total = (k as u64).pow(k as u32);
    let mut idx = vec![0usize; k];
    let mut hits = 0u64;
    loop {
        let s: f64 = idx.iter().map(|&i| sums[i]).sum();
        if crosses(s, nonneg) {
            hits += 1;
        }
        let mut pos = 0;
        loop {
            if pos == k {
                return (hits, total);
            }
            idx[pos] += 1;
            if idx[pos] < k {
                break;
            }
            idx[pos] = 0;
            pos += 1;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TableFormat {
    #[default]
    Markdown,
    Csv,
}

impl std::str::FromStr for TableFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "markdown" | "md" => Ok(TableFormat::Markdown),
            "csv" => Ok(TableFormat::Csv),
            other => Err(format!("unknown table format {other:?} (expected markdown or csv)")),
        }
    }
}

/// One pipeline's before/after means with optional p-values per dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub pipeline: String,
    pub before: TrialSummary,
    pub after: TrialSummary,
    pub p_values: [Option<f64>; 3],
}

impl ReportRow {
    pub fn new(pipeline: impl Into<String>, before: TrialSummary, after: TrialSummary) -> Self {
        Self {
            pipeline: pipeline.into(),
            before,
            after,
            p_values: [None; 3],
        }
    }

    pub fn with_p_values(mut self, p: [Option<f64>; 3]) -> Self {
        self.p_values = p;
        self
    }

    /// `82.7* (+4.7)`.
    pub fn cell(&self, dim: Dimension) -> String {
        let i = dim as usize;
        let star = match self.p_values[i] {
            Some(p) if p < SIGNIFICANCE_LEVEL => "*",
            _ => "",
        };
        let delta = round1(self.after.means[i] - self.before.means[i]);
        format!("{:.1}{star} ({})", self.after.rounded(dim), signed(delta))
    }

    pub fn avg_cell(&self) -> String {
        let delta = delta_row(&self.before, &self.after).avg;
        format!("{:.1} ({})", round1(self.after.avg()), signed(delta))
    }
}

const CSV_HEADER: [&str; 7] = ["pipeline", "dimension", "before", "after", "delta", "p_value", "significant"];

pub fn emit_table(rows: &[ReportRow], format: TableFormat) -> String {
    match format {
        TableFormat::Markdown => markdown_table(rows),
        TableFormat::Csv => csv_table(rows),
    }
}

fn markdown_table(rows: &[ReportRow]) -> String {
    let mut out = String::from("| Pipeline | Faith. | Comp. | Conc. | Avg. |\n|---|---|---|---|---|\n");
    let mut last_before: Option<&TrialSummary> = None;
    for row in rows {
        if last_before != Some(&row.before) {
            let b = &row.before;
            let _ = writeln!(
                out,
                "| {} | {:.1} | {:.1} | {:.1} | {:.1} |",
                b.label,
                b.rounded(Dimension::Faithfulness),
                b.rounded(Dimension::Completeness),
                b.rounded(Dimension::Conciseness),
                round1(b.avg())
            );
            last_before = Some(b);
        }
        let _ = writeln!(
            out,
            "| {} | {} | {} | {} | {} |",
            row.pipeline,
            row.cell(Dimension::Faithfulness),
            row.cell(Dimension::Completeness),
            row.cell(Dimension::Conciseness),
            row.avg_cell()
        );
    }
    out
}

fn csv_table(rows: &[ReportRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER).expect("in-memory csv write");
    for row in rows {
        for d in Dimension::ALL {
            let i = d as usize;
            let (before, after) = (row.before.means[i], row.after.means[i]);
            let (p, sig) = match row.p_values[i] {
                Some(p) => (p.to_string(), (p < SIGNIFICANCE_LEVEL).to_string()),
                None => (String::new(), String::new()),
            };
            w.write_record([
                row.pipeline.clone(),
                d.as_str().to_string(),
                before.to_string(),
                after.to_string(),
                (after - before).to_string(),
                p,
                sig,
            ])
            .expect("in-memory csv write");
        }
        let (before, after) = (row.before.avg(), row.after.avg());
        w.write_record([
            row.pipeline.clone(),
            "average".to_string(),
            before.to_string(),
            after.to_string(),
            (after - before).to_string(),
            String::new(),
            String::new(),
        ])
        .expect("in-memory csv write");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv flush")).expect("csv output is utf-8")
}
