//! Trial observables, the Wilcoxon signed-rank test and paired trial reports.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::events::{Event, EventKind};

/// Largest effective sample size for which p is computed by enumeration.
pub const EXACT_LIMIT: usize = 20;
pub const TABLE_N: std::ops::RangeInclusive<usize> = 5..=30;
pub const TABLE_ALPHAS: [f64; 3] = [0.01, 0.025, 0.05];

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("trial already finalized")]
    TrialClosed,
}

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("all paired differences are zero")]
    AllZeroDifferences,
    #[error("empty or non-finite sample")]
    InvalidSample,
    #[error("n={n}, alpha={alpha} outside the critical value table")]
    OutOfTableRange { n: usize, alpha: f64 },
    #[error("no rejection region for n={n} at alpha={alpha}")]
    NoRejectionRegion { n: usize, alpha: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Condition {
    /// Anticipated motion shown.
    C1,
    /// Real motion only.
    C2,
}

impl Condition {
    pub fn shows_anticipation(&self) -> bool {
        matches!(self, Condition::C1)
    }
}

impl std::str::FromStr for Condition {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "C1" => Ok(Condition::C1),
            "C2" => Ok(Condition::C2),
            _ => Err(format!("unknown condition {s:?}, expected C1 or C2")),
        }
    }
}

impl std::fmt::Display for Condition {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Condition::C1 => "C1",
            Condition::C2 => "C2",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollisionRecord {
    pub t: f64,
    pub link: usize,
    pub object_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterventionRecord {
    pub t: f64,
    pub object_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub condition: Condition,
    pub seed: u64,
    pub collisions: Vec<CollisionRecord>,
    pub interventions: Vec<InterventionRecord>,
    /// Dispatch to completion, one per plan step.
    pub step_durations: Vec<f64>,
    pub total_time: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Observable {
    Collisions,
    Interventions,
    TotalTime,
}

impl Observable {
    pub const ALL: [Observable; 3] = [Observable::Collisions, Observable::Interventions, Observable::TotalTime];

    pub fn as_str(&self) -> &'static str {
        match self {
            Observable::Collisions => "collisions",
            Observable::Interventions => "interventions",
            Observable::TotalTime => "total_time",
        }
    }

    /// Direction expected when the anticipated medium helps, for `d = C1 - C2`.
    pub fn alternative(&self) -> Alternative {
        match self {
            Observable::Collisions | Observable::TotalTime => Alternative::Less,
            Observable::Interventions => Alternative::Greater,
        }
    }
}

impl TrialRecord {
    pub fn value(&self, obs: Observable) -> f64 {
        match obs {
            Observable::Collisions => self.collisions.len() as f64,
            Observable::Interventions => self.interventions.len() as f64,
            Observable::TotalTime => self.total_time,
        }
    }
}

/// Accumulates one trial from the event stream.
#[derive(Debug, Clone)]
pub struct TrialRecorder {
    record: TrialRecord,
    open_step: Option<f64>,
    closed: bool,
}

impl TrialRecorder {
    pub fn new(condition: Condition, seed: u64) -> Self {
        Self {
            record: TrialRecord {
                condition,
                seed,
                collisions: Vec::new(),
                interventions: Vec::new(),
                step_durations: Vec::new(),
                total_time: 0.0,
            },
            open_step: None,
            closed: false,
        }
    }

    pub fn record(&mut self, event: &Event) -> Result<(), MetricsError> {
        if self.closed {
            return Err(MetricsError::TrialClosed);
        }
        let r = &mut self.record;
        match &event.kind {
            EventKind::Collision { link, object_id, .. } => {
                r.collisions.push(CollisionRecord { t: event.t, link: *link, object_id: object_id.clone() })
            }
            EventKind::Intervention { object_id, .. } => {
                r.interventions.push(InterventionRecord { t: event.t, object_id: object_id.clone() })
            }
            EventKind::ActDispatched { .. } => self.open_step = Some(event.t),
            EventKind::ActCompleted { .. } => {
                if let Some(start) = self.open_step.take() {
                    r.step_durations.push(event.t - start);
                }
            }
            EventKind::ActAborted { .. } => self.open_step = None,
            _ => {}
        }
        r.total_time = r.total_time.max(event.t);
        Ok(())
    }

    pub fn current(&self) -> &TrialRecord {
        &self.record
    }

    pub fn finalize(&mut self, total_time: f64) -> Result<TrialRecord, MetricsError> {
        if self.closed {
            return Err(MetricsError::TrialClosed);
        }
        self.closed = true;
        self.record.total_time = total_time;
        Ok(self.record.clone())
    }
}

pub fn write_trials<W: Write>(trials: &[TrialRecord], mut out: W) -> std::io::Result<()> {
    for t in trials {
        serde_json::to_writer(&mut out, t)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn read_trials<R: BufRead>(input: R) -> Result<Vec<TrialRecord>, serde_json::Error> {
    let mut out = Vec::new();
    for line in input.lines() {
        let line = line.map_err(serde_json::Error::io)?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

/// Per-subject `(c1, c2)` values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedSample {
    pub pairs: Vec<(f64, f64)>,
}

impl PairedSample {
    pub fn new(pairs: Vec<(f64, f64)>) -> Self {
        Self { pairs }
    }

    /// From differences `d = c1 - c2`.
    pub fn from_differences(d: &[f64]) -> Self {
        Self { pairs: d.iter().map(|&x| (x, 0.0)).collect() }
    }

    pub fn differences(&self) -> Vec<f64> {
        self.pairs.iter().map(|(a, b)| a - b).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Alternative {
    /// `c1 < c2`.
    Less,
    /// `c1 > c2`.
    Greater,
    TwoSided,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tails {
    One,
    Two,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    pub w_plus: f64,
    pub w_minus: f64,
    /// The rank sum that is small under the alternative: `W+` for less,
    /// `W-` for greater, `min(W+, W-)` for two-sided.
    pub statistic: f64,
    pub p_value: f64,
    pub n_effective: usize,
    pub exact: bool,
}

/// Absolute nonzero differences ranked with ties sharing their average rank.
///
/// Ranks are returned doubled so they stay integral.
pub fn signed_ranks(diffs: &[f64]) -> (Vec<u64>, Vec<bool>) {
    let mut nz: Vec<(f64, bool)> = diffs.iter().filter(|d| **d != 0.0).map(|&d| (d.abs(), d > 0.0)).collect();
    nz.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut ranks = vec![0u64; nz.len()];
    let mut i = 0;
    while i < nz.len() {
        let mut j = i;
        while j + 1 < nz.len() && nz[j + 1].0 == nz[i].0 {
            j += 1;
        }
        // Average of ranks i+1..=j+1, doubled.
        let r2 = (i + 1 + j + 1) as u64;
        ranks[i..=j].iter_mut().for_each(|r| *r = r2);
        i = j + 1;
    }
    (ranks, nz.into_iter().map(|x| x.1).collect())
}

/// Counts sign assignments with doubled positive rank sum `<= lo` and `>= hi`,
/// visiting all `2^n` patterns in Gray-code order.
fn enumerate_tails(ranks2: &[u64], lo: u64, hi: u64) -> (u64, u64) {
    let n = ranks2.len();
    let mut sum = 0u64;
    let (mut below, mut above) = (0u64, 0u64);
    let mut tally = |s: u64| {
        if s <= lo {
            below += 1;
        }
        if s >= hi {
            above += 1;
        }
    };
    tally(sum);
    let mut state = 0u64;
    for k in 1u64..(1u64 << n) {
        let bit = k.trailing_zeros() as usize;
        state ^= 1 << bit;
        if state & (1 << bit) != 0 {
            sum += ranks2[bit];
        } else {
            sum -= ranks2[bit];
        }
        tally(sum);
    }
    (below, above)
}

pub fn wilcoxon_signed_rank(sample: &PairedSample, alternative: Alternative) -> Result<WilcoxonResult, StatsError> {
    let d = sample.differences();
    if d.is_empty() || d.iter().any(|x| !x.is_finite()) {
        return Err(StatsError::InvalidSample);
    }
    let (ranks2, positive) = signed_ranks(&d);
    let n = ranks2.len();
    if n == 0 {
        return Err(StatsError::AllZeroDifferences);
    }
    let total2: u64 = ranks2.iter().sum();
    let plus2: u64 = ranks2.iter().zip(&positive).filter(|(_, p)| **p).map(|(r, _)| r).sum();
    let w_plus = plus2 as f64 / 2.0;
    let w_minus = (total2 - plus2) as f64 / 2.0;
    let statistic = match alternative {
        Alternative::Less => w_plus,
        Alternative::Greater => w_minus,
        Alternative::TwoSided => w_plus.min(w_minus),
    };

    let (p_less, p_greater, exact) = if n <= EXACT_LIMIT {
        let (below, above) = enumerate_tails(&ranks2, plus2, plus2);
        let total = (1u64 << n) as f64;
        (below as f64 / total, above as f64 / total, true)
    } else {
        let nf = n as f64;
        let mean = nf * (nf + 1.0) / 4.0;
        let mut tie_term = 0.0;
        let mut i = 0;
        while i < n {
            let j = ranks2[i..].iter().take_while(|r| **r == ranks2[i]).count();
            let t = j as f64;
            tie_term += t * t * t - t;
            i += j;
        }
        let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term / 48.0;
        let z = (w_plus - mean) / var.sqrt();
        let normal = Normal::standard();
        (normal.cdf(z), normal.cdf(-z), false)
    };
    let p_value = match alternative {
        Alternative::Less => p_less,
        Alternative::Greater => p_greater,
        Alternative::TwoSided => (2.0 * p_less.min(p_greater)).min(1.0),
    };
    Ok(WilcoxonResult { w_plus, w_minus, statistic, p_value, n_effective: n, exact })
}

/// Number of sign patterns of ranks `1..=n` for each positive rank sum.
pub fn null_distribution(n: usize) -> Vec<u64> {
    let max = n * (n + 1) / 2;
    let mut counts = vec![0u64; max + 1];
    counts[0] = 1;
    for k in 1..=n {
        for s in (k..=max).rev() {
            counts[s] += counts[s - k];
        }
    }
    counts
}

/// Largest `w` with `P(W <= w) <= alpha` (per tail) under the untied null.
pub fn critical_value(n: usize, alpha: f64, tails: Tails) -> Result<u32, StatsError> {
    if !TABLE_N.contains(&n) || !TABLE_ALPHAS.iter().any(|a| (a - alpha).abs() < 1e-12) {
        return Err(StatsError::OutOfTableRange { n, alpha });
    }
    let level = match tails {
        Tails::One => alpha,
        Tails::Two => alpha / 2.0,
    };
    let total = (1u64 << n) as f64;
    let mut cum = 0u64;
    let mut best = None;
    for (w, c) in null_distribution(n).into_iter().enumerate() {
        cum += c;
        if cum as f64 / total <= level {
            best = Some(w as u32);
        } else {
            break;
        }
    }
    best.ok_or(StatsError::NoRejectionRegion { n, alpha })
}

/// Box-plot summary with type-7 quantiles and 1.5 IQR outlier fences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxStats {
    pub n: usize,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub min: f64,
    pub max: f64,
    pub outliers: Vec<f64>,
}

fn quantile_sorted(v: &[f64], p: f64) -> f64 {
    let h = (v.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(v.len() - 1);
    v[lo] + (h - lo as f64) * (v[hi] - v[lo])
}

impl BoxStats {
    pub fn from_values(values: &[f64]) -> Option<BoxStats> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let q1 = quantile_sorted(&v, 0.25);
        let q3 = quantile_sorted(&v, 0.75);
        let iqr = q3 - q1;
        let (lo, hi) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
        Some(BoxStats {
            n: v.len(),
            median: quantile_sorted(&v, 0.5),
            q1,
            q3,
            min: v[0],
            max: v[v.len() - 1],
            outliers: v.iter().copied().filter(|x| *x < lo || *x > hi).collect(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionSummary {
    pub condition: Condition,
    pub trials: usize,
    pub observables: BTreeMap<Observable, BoxStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestRow {
    pub observable: Observable,
    pub alternative: Alternative,
    pub pairs: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<WilcoxonResult>,
    /// One-tailed critical value at `alpha` for the effective sample size.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub critical_value: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reject_null: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub alpha: f64,
    pub trials: usize,
    pub unpaired: usize,
    pub summaries: Vec<ConditionSummary>,
    pub tests: Vec<TestRow>,
}

pub const REPORT_ALPHA: f64 = 0.05;

/// C1/C2 trials sharing a seed, in seed order. Later duplicates win.
pub fn pair_by_seed(trials: &[TrialRecord]) -> (Vec<(&TrialRecord, &TrialRecord)>, usize) {
    let mut c1 = BTreeMap::new();
    let mut c2 = BTreeMap::new();
    for t in trials {
        match t.condition {
            Condition::C1 => c1.insert(t.seed, t),
            Condition::C2 => c2.insert(t.seed, t),
        };
    }
    let pairs: Vec<_> = c1.iter().filter_map(|(s, a)| c2.get(s).map(|b| (*a, *b))).collect();
    let unpaired = c1.len() + c2.len() - 2 * pairs.len();
    (pairs, unpaired)
}

pub fn test_observable(pairs: &[(&TrialRecord, &TrialRecord)], obs: Observable, alpha: f64) -> TestRow {
    let alternative = obs.alternative();
    let mut row = TestRow { observable: obs, alternative, pairs: pairs.len(), result: None, critical_value: None, reject_null: None, note: None };
    if pairs.is_empty() {
        row.note = Some("no paired trials".into());
        return row;
    }
    let sample = PairedSample::new(pairs.iter().map(|(a, b)| (a.value(obs), b.value(obs))).collect());
    match wilcoxon_signed_rank(&sample, alternative) {
        Ok(r) => {
            row.critical_value = critical_value(r.n_effective, alpha, Tails::One).ok();
            row.reject_null = Some(match row.critical_value {
                Some(wc) => r.statistic <= wc as f64,
                None => r.p_value <= alpha && r.n_effective > *TABLE_N.end(),
            });
            row.result = Some(r);
        }
        Err(StatsError::AllZeroDifferences) => row.note = Some("no difference".into()),
        Err(e) => row.note = Some(e.to_string()),
    }
    row
}

pub fn report(trials: &[TrialRecord]) -> Report {
    let mut summaries = Vec::new();
    for cond in [Condition::C1, Condition::C2] {
        let these: Vec<_> = trials.iter().filter(|t| t.condition == cond).collect();
        if these.is_empty() {
            continue;
        }
        let observables = Observable::ALL
            .iter()
            .map(|o| (*o, BoxStats::from_values(&these.iter().map(|t| t.value(*o)).collect::<Vec<_>>()).expect("non-empty")))
            .collect();
        summaries.push(ConditionSummary { condition: cond, trials: these.len(), observables });
    }
    let (pairs, unpaired) = pair_by_seed(trials);
    let tests = Observable::ALL.iter().map(|o| test_observable(&pairs, *o, REPORT_ALPHA)).collect();
    Report { alpha: REPORT_ALPHA, trials: trials.len(), unpaired, summaries, tests }
}

impl Report {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report is serializable")
    }

    pub fn to_csv(&self) -> Result<String, csv::Error> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "section", "condition", "observable", "n", "median", "q1", "q3", "min", "max", "outliers", "alternative",
            "w_plus", "w_minus", "statistic", "p_value", "n_effective", "critical_value", "reject_null", "note",
        ])?;
        let opt = |v: Option<String>| v.unwrap_or_default();
        for s in &self.summaries {
            for (obs, b) in &s.observables {
                let outliers = b.outliers.iter().map(f64::to_string).collect::<Vec<_>>().join(";");
                w.write_record([
                    "summary".into(),
                    s.condition.to_string(),
                    obs.as_str().into(),
                    b.n.to_string(),
                    b.median.to_string(),
                    b.q1.to_string(),
                    b.q3.to_string(),
                    b.min.to_string(),
                    b.max.to_string(),
                    outliers,
                    String::new(),
                    String::new(),
                    String::new(),
                    String::new(),
                    String::new(),
                    String::new(),
                    String::new(),
                    String::new(),
                    String::new(),
                ])?;
            }
        }
        for t in &self.tests {
            let r = t.result.as_ref();
            w.write_record([
                "test".into(),
                "C1-C2".into(),
                t.observable.as_str().into(),
                t.pairs.to_string(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                serde_json::to_value(t.alternative).ok().and_then(|v| v.as_str().map(str::to_owned)).unwrap_or_default(),
                opt(r.map(|r| r.w_plus.to_string())),
                opt(r.map(|r| r.w_minus.to_string())),
                opt(r.map(|r| r.statistic.to_string())),
                opt(r.map(|r| r.p_value.to_string())),
                opt(r.map(|r| r.n_effective.to_string())),
                opt(t.critical_value.map(|c| c.to_string())),
                opt(t.reject_null.map(|b| b.to_string())),
                opt(t.note.clone()),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| e.into_error())?;
        Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
    }

    /// Writes `report.json` and `report.csv` into `dir`.
    pub fn write_to(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("report.json"), self.to_json())?;
        let csv = self.to_csv().map_err(std::io::Error::other)?;
        std::fs::write(dir.join("report.csv"), csv)
    }
}
