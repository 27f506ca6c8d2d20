//! Questionnaire scoring, hypothesis tests and cohort summaries.
//!
//! All p-values are two-sided. The rank tests compute exact p-values by
//! counting sign assignments (Wilcoxon, up to 20 non-zero differences) or
//! rank splits (Mann-Whitney, up to 16 observations in total); tied values
//! get average ranks and the exact distributions are taken over those tied
//! ranks. Larger samples use the normal approximation with tie and continuity
//! corrections.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use crate::error::{Error, Result};
use crate::session_io::{GameConfig, SessionLog, Summary};

pub const WILCOXON_EXACT_MAX: usize = 20;
pub const MANN_WHITNEY_EXACT_MAX: usize = 16;
pub const SUS_THRESHOLD: f64 = 68.0;
pub const SIGNIFICANCE: f64 = 0.05;

fn degenerate(msg: impl Into<String>) -> Error {
    Error::DegenerateSample(msg.into())
}

fn check_likert(items: &[u8]) -> Result<()> {
    if let Some((i, v)) = items.iter().enumerate().find(|(_, v)| !(1..=5).contains(*v)) {
        return Err(Error::invalid(format!("item {} is {v}, expected 1..=5", i + 1)));
    }
    Ok(())
}

/// One System Usability Scale questionnaire.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SusResponse {
    items: [u8; 10],
}

impl SusResponse {
    pub fn new(items: &[u8]) -> Result<Self> {
        let items: [u8; 10] = items
            .try_into()
            .map_err(|_| Error::invalid(format!("SUS needs 10 items, got {}", items.len())))?;
        check_likert(&items)?;
        Ok(Self { items })
    }

    pub fn items(&self) -> &[u8; 10] {
        &self.items
    }

    /// Odd items are positively worded (`item - 1`), even items negatively
    /// (`5 - item`); the sum is scaled by 2.5 onto 0..=100.
    pub fn score(&self) -> f64 {
        let sum: u32 = self
            .items
            .iter()
            .enumerate()
            .map(|(i, &v)| if i % 2 == 0 { v as u32 - 1 } else { 5 - v as u32 })
            .sum();
        sum as f64 * 2.5
    }
}

pub fn sus_score(items: &[u8]) -> Result<f64> {
    Ok(SusResponse::new(items)?.score())
}

/// Responses to a list of 1..=5 Likert items.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LikertSet {
    items: Vec<u8>,
}

impl LikertSet {
    pub fn new(items: Vec<u8>) -> Result<Self> {
        check_likert(&items)?;
        Ok(Self { items })
    }

    pub fn items(&self) -> &[u8] {
        &self.items
    }

    pub fn values(&self) -> Vec<f64> {
        self.items.iter().map(|&v| v as f64).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TestMethod {
    ExactEnumeration,
    NormalApprox,
    StudentT,
}

/// Which null distribution a rank test should use.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Distribution {
    /// Exact below the size cutoff, normal approximation above.
    Auto,
    Exact,
    Normal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: f64,
    pub p_value: f64,
    pub method: TestMethod,
    pub n: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n2: Option<usize>,
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (n - 1 denominator); 0 for a single value.
pub fn sample_sd(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    let ss: f64 = xs.iter().map(|x| (x - m).powi(2)).sum();
    (ss / (xs.len() - 1) as f64).sqrt()
}

fn check_finite(xs: &[f64]) -> Result<()> {
    if xs.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid("sample contains a non-finite value"));
    }
    Ok(())
}

pub fn one_sample_t(sample: &[f64], mu: f64) -> Result<TestResult> {
    check_finite(sample)?;
    let n = sample.len();
    if n < 2 {
        return Err(degenerate(format!("one-sample t needs n >= 2, got {n}")));
    }
    if sample.iter().all(|&x| x == sample[0]) {
        return Err(degenerate("sample has zero variance"));
    }
    let sd = sample_sd(sample);
    let t = (mean(sample) - mu) / (sd / (n as f64).sqrt());
    let dist = StudentsT::new(0.0, 1.0, (n - 1) as f64).expect("df >= 1");
    Ok(TestResult {
        statistic: t,
        p_value: (2.0 * dist.sf(t.abs())).min(1.0),
        method: TestMethod::StudentT,
        n,
        n2: None,
    })
}

/// Average ranks (1-based) of `values`, plus the sizes of tie groups.
fn average_ranks(values: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut ties = Vec::new();
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j + 2) as f64 / 2.0;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        ties.push(j - i + 1);
        i = j + 1;
    }
    (ranks, ties)
}

fn tie_term(ties: &[usize]) -> f64 {
    ties.iter().map(|&t| (t * t * t - t) as f64).sum()
}

/// Two-sided normal tail for a statistic with continuity correction.
fn normal_p(statistic: f64, mean: f64, var: f64) -> f64 {
    if var <= 0.0 {
        return 1.0;
    }
    let z = ((statistic - mean).abs() - 0.5).max(0.0) / var.sqrt();
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    (2.0 * normal.sf(z)).min(1.0)
}

pub fn wilcoxon_signed_rank(sample: &[f64], mu: f64) -> Result<TestResult> {
    wilcoxon_signed_rank_with(sample, mu, Distribution::Auto)
}

/// Wilcoxon signed-rank test of `sample` against location `mu`. Zero
/// differences are discarded.
pub fn wilcoxon_signed_rank_with(
    sample: &[f64],
    mu: f64,
    distribution: Distribution,
) -> Result<TestResult> {
    check_finite(sample)?;
    let diffs: Vec<f64> = sample.iter().map(|x| x - mu).filter(|d| *d != 0.0).collect();
    let m = diffs.len();
    if m == 0 {
        return Err(degenerate("all differences from mu are zero"));
    }
    let abs: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
    let (ranks, ties) = average_ranks(&abs);
    // Average ranks are multiples of 1/2, so doubled ranks are integers.
    let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
    let total: usize = doubled.iter().sum();
    let plus: usize = doubled
        .iter()
        .zip(&diffs)
        .filter(|(_, d)| **d > 0.0)
        .map(|(r, _)| r)
        .sum();
    let observed = plus.min(total - plus);
    let statistic = observed as f64 / 2.0;
    let exact = match distribution {
        Distribution::Auto => m <= WILCOXON_EXACT_MAX,
        Distribution::Exact => true,
        Distribution::Normal => false,
    };
    let (p_value, method) = if exact {
        // counts[s] = number of sign assignments with doubled W+ = s.
        let mut counts = vec![0f64; total + 1];
        counts[0] = 1.0;
        for &r in &doubled {
            for s in (r..=total).rev() {
                counts[s] += counts[s - r];
            }
        }
        let extreme: f64 = counts
            .iter()
            .enumerate()
            .filter(|(s, _)| (*s).min(total - s) <= observed)
            .map(|(_, c)| c)
            .sum();
        (extreme / 2f64.powi(m as i32), TestMethod::ExactEnumeration)
    } else {
        let mf = m as f64;
        let mean = mf * (mf + 1.0) / 4.0;
        let var = mf * (mf + 1.0) * (2.0 * mf + 1.0) / 24.0 - tie_term(&ties) / 48.0;
        (normal_p(statistic, mean, var), TestMethod::NormalApprox)
    };
    Ok(TestResult {
        statistic,
        p_value: p_value.min(1.0),
        method,
        n: m,
        n2: None,
    })
}

pub fn mann_whitney_u(a: &[f64], b: &[f64]) -> Result<TestResult> {
    mann_whitney_u_with(a, b, Distribution::Auto)
}

pub fn mann_whitney_u_with(a: &[f64], b: &[f64], distribution: Distribution) -> Result<TestResult> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::invalid("Mann-Whitney U needs two non-empty groups"));
    }
    check_finite(a)?;
    check_finite(b)?;
    let (na, nb) = (a.len(), b.len());
    let n = na + nb;
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let (ranks, ties) = average_ranks(&pooled);
    let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
    let ra: usize = doubled[..na].iter().sum();
    // Doubled U statistics.
    let ua = ra - na * (na + 1);
    let ub = 2 * na * nb - ua;
    let observed = ua.min(ub);
    let statistic = observed as f64 / 2.0;
    let exact = match distribution {
        Distribution::Auto => n <= MANN_WHITNEY_EXACT_MAX,
        Distribution::Exact => true,
        Distribution::Normal => false,
    };
    let (p_value, method) = if exact {
        // ways[k][s] = number of k-subsets of the pooled ranks with doubled sum s.
        let total: usize = doubled.iter().sum();
        let mut ways = vec![vec![0f64; total + 1]; na + 1];
        ways[0][0] = 1.0;
        for &r in &doubled {
            for k in (1..=na).rev() {
                for s in (r..=total).rev() {
                    ways[k][s] += ways[k - 1][s - r];
                }
            }
        }
        let offset = na * (na + 1);
        let mut extreme = 0.0;
        let mut all = 0.0;
        for (s, &c) in ways[na].iter().enumerate() {
            if c == 0.0 {
                continue;
            }
            all += c;
            let u = s - offset;
            if u.min(2 * na * nb - u) <= observed {
                extreme += c;
            }
        }
        (extreme / all, TestMethod::ExactEnumeration)
    } else {
        let (naf, nbf, nf) = (na as f64, nb as f64, n as f64);
        let mean = naf * nbf / 2.0;
        let var = naf * nbf / 12.0 * ((nf + 1.0) - tie_term(&ties) / (nf * (nf - 1.0)));
        (normal_p(statistic, mean, var), TestMethod::NormalApprox)
    };
    Ok(TestResult {
        statistic,
        p_value: p_value.min(1.0),
        method,
        n: na,
        n2: Some(nb),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub game: String,
    pub metric: String,
    pub n: usize,
    pub mean: f64,
    pub sd: f64,
}

impl ReportRow {
    fn new(game: &str, metric: String, values: &[f64]) -> Self {
        Self {
            game: game.to_string(),
            metric,
            n: values.len(),
            mean: mean(values),
            sd: sample_sd(values),
        }
    }

    pub fn result(&self) -> String {
        if self.n == 0 {
            return "n/a".into();
        }
        format!("{:.2} ± {:.2}", self.mean, self.sd)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CohortReport {
    pub rows: Vec<ReportRow>,
}

impl CohortReport {
    pub fn to_text(&self) -> String {
        let results: Vec<String> = self.rows.iter().map(ReportRow::result).collect();
        let game_w = self.rows.iter().map(|r| r.game.chars().count()).max().unwrap_or(0).max(4);
        let metric_w = self
            .rows
            .iter()
            .map(|r| r.metric.chars().count())
            .max()
            .unwrap_or(0)
            .max(6);
        let mut out = String::new();
        let _ = writeln!(out, "{:<game_w$}  {:<metric_w$}  {:>3}  Result", "Game", "Metric", "n");
        for (row, result) in self.rows.iter().zip(results) {
            let _ = writeln!(
                out,
                "{:<game_w$}  {:<metric_w$}  {:>3}  {}",
                row.game, row.metric, row.n, result
            );
        }
        out
    }
}

fn format_seconds(s: f64) -> String {
    if s.fract() == 0.0 {
        format!("{s:.0}")
    } else {
        format!("{s}")
    }
}

/// Mean ± sample SD per metric, in the order chin tuck levels, chin tuck
/// completion time, the six range-of-motion maxima, range-of-motion
/// completion time. Games without logs are omitted.
pub fn cohort_summary(logs: &[SessionLog]) -> CohortReport {
    let mut per_level: BTreeMap<usize, (String, Vec<f64>)> = BTreeMap::new();
    let mut chintuck_minutes = Vec::new();
    let mut rom: [Vec<f64>; 6] = Default::default();
    let mut rom_minutes = Vec::new();
    let mut seen_rom = false;
    for log in logs {
        match (&log.summary, &log.header.config) {
            (Summary::ChinTuck(s), GameConfig::ChinTuck(_)) => {
                for (i, level) in s.levels.iter().enumerate() {
                    let label = format!("# Perfect chin tucks ({} sec)", format_seconds(level.hold_duration));
                    per_level
                        .entry(i)
                        .or_insert_with(|| (label, Vec::new()))
                        .1
                        .push(level.perfect as f64);
                }
                chintuck_minutes.push(s.duration_minutes);
            }
            (Summary::Rom(s), _) => {
                seen_rom = true;
                if let Some(a) = s.angles {
                    let values = [
                        a.flexion,
                        a.extension,
                        a.rotation_left,
                        a.rotation_right,
                        a.lateral_flexion_left,
                        a.lateral_flexion_right,
                    ];
                    for (bucket, v) in rom.iter_mut().zip(values) {
                        bucket.push(v);
                    }
                }
                rom_minutes.push(s.duration_minutes);
            }
            _ => {}
        }
    }
    let mut rows = Vec::new();
    if !chintuck_minutes.is_empty() {
        for (label, values) in per_level.into_values() {
            rows.push(ReportRow::new("Chin tuck", label, &values));
        }
        rows.push(ReportRow::new(
            "Chin tuck",
            "Game completion time (min)".into(),
            &chintuck_minutes,
        ));
    }
    if seen_rom {
        let names = [
            "Max Flexion (degree)",
            "Max Extension (degree)",
            "Max Left Rotation (degree)",
            "Max Right Rotation (degree)",
            "Max Left Lateral Flexion (degree)",
            "Max Right Lateral Flexion (degree)",
        ];
        for (name, values) in names.iter().zip(&rom) {
            rows.push(ReportRow::new("Range of Motion", name.to_string(), values));
        }
        rows.push(ReportRow::new(
            "Range of Motion",
            "Game completion time (min)".into(),
            &rom_minutes,
        ));
    }
    CohortReport { rows }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThresholdReport {
    pub n: usize,
    pub mean: f64,
    pub sd: f64,
    pub threshold: f64,
    pub test: Option<TestResult>,
    /// Why no test could be run, if so.
    pub error: Option<String>,
    /// Mean above the threshold with p below 0.05.
    pub above_threshold: bool,
}

impl ThresholdReport {
    pub fn to_text(&self) -> String {
        let mut out = format!("mean {:.1}±{:.1} (n = {})\n", self.mean, self.sd, self.n);
        match (&self.test, &self.error) {
            (Some(t), _) => {
                let _ = writeln!(
                    out,
                    "one-sample t vs {}: t = {:.4}, p = {:.4}",
                    format_seconds(self.threshold),
                    t.statistic,
                    t.p_value
                );
            }
            (None, Some(e)) => {
                let _ = writeln!(out, "one-sample t vs {}: not computed ({e})", format_seconds(self.threshold));
            }
            (None, None) => {}
        }
        let _ = writeln!(
            out,
            "significantly above threshold: {}",
            if self.above_threshold { "yes" } else { "no" }
        );
        out
    }
}

pub fn threshold_report(scores: &[f64], threshold: f64) -> ThresholdReport {
    let (test, error) = match one_sample_t(scores, threshold) {
        Ok(t) => (Some(t), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let m = mean(scores);
    ThresholdReport {
        n: scores.len(),
        mean: m,
        sd: sample_sd(scores),
        threshold,
        above_threshold: test.is_some_and(|t| t.p_value < SIGNIFICANCE && m > threshold),
        test,
        error,
    }
}

/// Questionnaire responses read from CSV: one respondent per row, item
/// columns named `q1`, `q2`, … (case-insensitive). Other columns are ignored.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseTable {
    pub items: Vec<String>,
    pub rows: Vec<LikertSet>,
}

impl ResponseTable {
    pub fn from_reader(reader: impl Read) -> Result<Self> {
        let mut csv = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = csv.headers().map_err(csv_error)?.clone();
        let mut columns: Vec<(usize, usize, String)> = headers
            .iter()
            .enumerate()
            .filter_map(|(i, h)| {
                let lower = h.to_ascii_lowercase();
                let k: usize = lower.strip_prefix('q')?.parse().ok()?;
                Some((k, i, h.to_string()))
            })
            .collect();
        columns.sort();
        if columns.is_empty() {
            return Err(Error::invalid("CSV has no item columns (q1, q2, ...)"));
        }
        for (pos, (k, _, name)) in columns.iter().enumerate() {
            if *k != pos + 1 {
                return Err(Error::invalid(format!(
                    "item columns must be q1..qN without gaps (found {name})"
                )));
            }
        }
        let mut rows = Vec::new();
        for (r, record) in csv.records().enumerate() {
            let record = record.map_err(csv_error)?;
            let line = r + 2;
            let items = columns
                .iter()
                .map(|(_, i, name)| {
                    let cell = record.get(*i).unwrap_or("");
                    cell.parse::<u8>().map_err(|_| Error::Parse {
                        line,
                        column: i + 1,
                        message: format!("{name}: expected an integer 1..=5, got {cell:?}"),
                    })
                })
                .collect::<Result<Vec<u8>>>()?;
            rows.push(LikertSet::new(items).map_err(|e| Error::Parse {
                line,
                column: 1,
                message: e.to_string(),
            })?);
        }
        Ok(Self {
            items: columns.into_iter().map(|(_, _, name)| name).collect(),
            rows,
        })
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_reader(file)
    }

    pub fn sus(&self) -> Result<Vec<SusResponse>> {
        if self.items.len() != 10 {
            return Err(Error::invalid(format!(
                "SUS needs columns q1..q10, found {} item columns",
                self.items.len()
            )));
        }
        self.rows.iter().map(|r| SusResponse::new(r.items())).collect()
    }

    /// Per item: mean, SD and the Wilcoxon test against `neutral`.
    pub fn item_tests(&self, neutral: f64) -> Vec<ItemSummary> {
        (0..self.items.len())
            .map(|i| {
                let values: Vec<f64> = self.rows.iter().map(|r| r.items()[i] as f64).collect();
                let test = wilcoxon_signed_rank(&values, neutral);
                ItemSummary {
                    item: self.items[i].clone(),
                    mean: mean(&values),
                    sd: sample_sd(&values),
                    test: test.as_ref().ok().copied(),
                    error: test.err().map(|e| e.to_string()),
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ItemSummary {
    pub item: String,
    pub mean: f64,
    pub sd: f64,
    pub test: Option<TestResult>,
    pub error: Option<String>,
}

fn csv_error(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    Error::Parse {
        line,
        column: 1,
        message: e.to_string(),
    }
}
