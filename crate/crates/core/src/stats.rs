//! Detection rates by persona side, odds ratios and their significance.
//!
//! Each target yields a 2x2 table `[[left flagged, left not], [right flagged,
//! right not]]`. Significance is a two-sided Fisher exact test, and the
//! p-values of all rows (targets plus the pooled `Overall` row) are adjusted
//! together with Holm's step-down procedure.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::experiment::{ClassificationRecord, PersonaSpec, Side};

/// Label of the pooled row.
pub const OVERALL: &str = "Overall";

/// Relative slack when comparing point probabilities in the two-sided rule.
pub const FISHER_RELATIVE_TOLERANCE: f64 = 1e-7;

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("record for instance `{instance}` references unknown persona `{persona}`; known personas: {valid}")]
    UnknownPersona {
        persona: String,
        instance: String,
        valid: String,
    },
    #[error("odds ratio needs proportions strictly between 0 and 1 (got {p_left}, {p_right}); use the count-based continuity correction instead")]
    BoundaryProportion { p_left: f64, p_right: f64 },
    #[error("side with zero total in the 2x2 table for `{0}`")]
    ZeroTotal(String),
    #[error("p-value {0} is outside [0, 1]")]
    PValueOutOfRange(f64),
    #[error("nothing to report")]
    EmptyReport,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tally {
    pub flagged: u64,
    pub total: u64,
}

impl Tally {
    pub fn new(flagged: u64, total: u64) -> Self {
        assert!(flagged <= total, "flagged exceeds total");
        Self { flagged, total }
    }

    pub fn not_flagged(&self) -> u64 {
        self.total - self.flagged
    }

    pub fn rate(&self) -> Option<f64> {
        (self.total > 0).then(|| self.flagged as f64 / self.total as f64)
    }

    fn add(&mut self, other: Tally) {
        self.flagged += other.flagged;
        self.total += other.total;
    }
}

/// Flag counts for one target, pooled per side and broken down by persona.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SideCounts {
    pub target: String,
    pub left: Tally,
    pub right: Tally,
    pub left_personas: BTreeMap<String, Tally>,
    pub right_personas: BTreeMap<String, Tally>,
    /// Invalid records left out of the totals.
    pub excluded: u64,
}

impl SideCounts {
    pub fn from_tallies(target: impl Into<String>, left: Tally, right: Tally) -> Self {
        Self {
            target: target.into(),
            left,
            right,
            ..Default::default()
        }
    }

    fn side_mut(&mut self, side: Side) -> (&mut Tally, &mut BTreeMap<String, Tally>) {
        match side {
            Side::Left => (&mut self.left, &mut self.left_personas),
            Side::Right => (&mut self.right, &mut self.right_personas),
        }
    }

    /// `(p_left, p_right)` under the chosen averaging, `None` for an empty side.
    pub fn rates(&self, averaging: Averaging) -> (Option<f64>, Option<f64>) {
        match averaging {
            Averaging::Micro => (self.left.rate(), self.right.rate()),
            Averaging::Macro => (macro_rate(&self.left_personas), macro_rate(&self.right_personas)),
        }
    }
}

fn macro_rate(personas: &BTreeMap<String, Tally>) -> Option<f64> {
    let rates: Vec<f64> = personas.values().filter_map(Tally::rate).collect();
    (!rates.is_empty()).then(|| rates.iter().sum::<f64>() / rates.len() as f64)
}

/// How per-side rates are averaged.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Averaging {
    /// Pool every record of a side.
    #[default]
    Micro,
    /// Mean of per-persona rates.
    Macro,
}

/// What to do with records that never produced a valid verdict.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InvalidPolicy {
    #[default]
    Exclude,
    CountAsNotFlagged,
}

/// Counts flags per target and side, plus a pooled [`OVERALL`] row last.
///
/// Targets listed in `target_order` come first in that order; any other
/// target follows alphabetically.
pub fn detection_rates(
    records: &[ClassificationRecord],
    personas: &[PersonaSpec],
    target_order: &[String],
    invalid: InvalidPolicy,
) -> Result<Vec<SideCounts>, StatsError> {
    let sides: HashMap<&str, Side> = personas.iter().map(|p| (p.persona_id.as_str(), p.side)).collect();
    let mut by_target: BTreeMap<&str, SideCounts> = BTreeMap::new();
    let mut overall = SideCounts {
        target: OVERALL.into(),
        ..Default::default()
    };
    for r in records {
        let side = *sides
            .get(r.persona_id.as_str())
            .ok_or_else(|| StatsError::UnknownPersona {
                persona: r.persona_id.clone(),
                instance: r.instance_id.clone(),
                valid: personas.iter().map(|p| p.persona_id.as_str()).collect::<Vec<_>>().join(", "),
            })?;
        let counts = by_target.entry(r.target.as_str()).or_insert_with(|| SideCounts {
            target: r.target.clone(),
            ..Default::default()
        });
        let delta = match (r.verdict, invalid) {
            (Some(v), _) => Tally::new(v as u64, 1),
            (None, InvalidPolicy::CountAsNotFlagged) => Tally::new(0, 1),
            (None, InvalidPolicy::Exclude) => {
                counts.excluded += 1;
                overall.excluded += 1;
                continue;
            }
        };
        for c in [&mut *counts, &mut overall] {
            let (tally, per_persona) = c.side_mut(side);
            tally.add(delta);
            per_persona.entry(r.persona_id.clone()).or_default().add(delta);
        }
    }
    let mut out = Vec::with_capacity(by_target.len() + 1);
    for t in target_order {
        if let Some(c) = by_target.remove(t.as_str()) {
            out.push(c);
        }
    }
    out.extend(by_target.into_values());
    out.push(overall);
    Ok(out)
}

/// `odds(p_left) / odds(p_right)` with `odds(p) = p / (1 - p)`.
pub fn odds_ratio(p_left: f64, p_right: f64) -> Result<f64, StatsError> {
    let inside = |p: f64| p > 0.0 && p < 1.0;
    if !inside(p_left) || !inside(p_right) {
        return Err(StatsError::BoundaryProportion { p_left, p_right });
    }
    Ok((p_left / (1.0 - p_left)) / (p_right / (1.0 - p_right)))
}

/// Haldane-Anscombe odds ratio: adds 0.5 to every cell of the 2x2 table.
pub fn odds_ratio_corrected(left: Tally, right: Tally) -> f64 {
    let a = left.flagged as f64 + 0.5;
    let b = left.not_flagged() as f64 + 0.5;
    let c = right.flagged as f64 + 0.5;
    let d = right.not_flagged() as f64 + 0.5;
    (a * d) / (b * c)
}

/// Two-sided Fisher exact p-value for `[[a, b], [c, d]]`.
///
/// Sums the hypergeometric point probabilities (row and column margins
/// fixed) of every table at most as likely as the observed one, within a
/// relative slack of [`FISHER_RELATIVE_TOLERANCE`]. Probabilities are
/// computed relative to the mode with the exact ratio recurrence
/// `f(k+1)/f(k) = (n1-k)(m1-k) / ((k+1)(n2-m1+k+1))`, so no factorials are
/// formed and large tables stay finite.
pub fn fisher_exact(a: u64, b: u64, c: u64, d: u64) -> f64 {
    let n1 = a + b;
    let n2 = c + d;
    let m1 = a + c;
    let n = n1 + n2;
    let lo = m1.saturating_sub(n2);
    let hi = n1.min(m1);
    if lo == hi {
        return 1.0;
    }
    let len = (hi - lo + 1) as usize;
    let mode = (((n1 + 1) as u128 * (m1 + 1) as u128) / (n + 2) as u128) as u64;
    let mode = mode.clamp(lo, hi);
    let mut w = vec![0.0f64; len];
    w[(mode - lo) as usize] = 1.0;
    for k in mode..hi {
        let i = (k - lo) as usize;
        let ratio = ((n1 - k) as f64 * (m1 - k) as f64) / ((k + 1) as f64 * (n2 + k + 1 - m1) as f64);
        w[i + 1] = w[i] * ratio;
    }
    for k in (lo + 1..=mode).rev() {
        let i = (k - lo) as usize;
        // f(k-1)/f(k) = k (n2-m1+k) / ((n1-k+1)(m1-k+1))
        let ratio = (k as f64 * (n2 + k - m1) as f64) / ((n1 - k + 1) as f64 * (m1 - k + 1) as f64);
        w[i - 1] = w[i] * ratio;
    }
    let observed = w[(a - lo) as usize];
    let cutoff = observed * (1.0 + FISHER_RELATIVE_TOLERANCE);
    let total: f64 = w.iter().sum();
    let tail: f64 = w.iter().filter(|&&x| x <= cutoff).sum();
    (tail / total).min(1.0)
}

pub fn exact_test(counts: &SideCounts) -> Result<f64, StatsError> {
    if counts.left.total == 0 || counts.right.total == 0 {
        return Err(StatsError::ZeroTotal(counts.target.clone()));
    }
    Ok(fisher_exact(
        counts.left.flagged,
        counts.left.not_flagged(),
        counts.right.flagged,
        counts.right.not_flagged(),
    ))
}

/// Holm step-down adjustment, returned in input order.
///
/// With `p_(1) <= ... <= p_(m)`, the adjusted value of rank `i` is
/// `max_{j <= i} min(1, (m - j + 1) p_(j))`.
pub fn holm_adjust(p_values: &[f64]) -> Result<Vec<f64>, StatsError> {
    for &p in p_values {
        if !(0.0..=1.0).contains(&p) {
            return Err(StatsError::PValueOutOfRange(p));
        }
    }
    let m = p_values.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&i, &j| p_values[i].total_cmp(&p_values[j]));
    let mut adjusted = vec![0.0; m];
    let mut running = 0.0f64;
    for (rank, &i) in order.iter().enumerate() {
        let scaled = ((m - rank) as f64 * p_values[i]).min(1.0);
        running = running.max(scaled);
        adjusted[i] = running;
    }
    Ok(adjusted)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stars {
    #[serde(rename = "")]
    None,
    #[serde(rename = "*")]
    One,
    #[serde(rename = "**")]
    Two,
    #[serde(rename = "***")]
    Three,
}

impl Stars {
    pub fn from_p(p: f64) -> Self {
        if p < 0.001 {
            Stars::Three
        } else if p < 0.01 {
            Stars::Two
        } else if p < 0.05 {
            Stars::One
        } else {
            Stars::None
        }
    }
}

impl fmt::Display for Stars {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stars::None => "",
            Stars::One => "*",
            Stars::Two => "**",
            Stars::Three => "***",
        })
    }
}

/// One report row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrResult {
    pub target: String,
    pub p_left: f64,
    pub p_right: f64,
    pub odds_ratio: f64,
    /// Set when a boundary proportion forced the Haldane-Anscombe estimate.
    pub continuity_corrected: bool,
    pub p_raw: f64,
    pub p_adjusted: f64,
    pub stars: Stars,
    pub left: Tally,
    pub right: Tally,
    pub excluded: u64,
}

/// Rates, odds ratios and Holm-adjusted Fisher p-values for every row.
/// Rows with an empty side are dropped.
pub fn analyze(counts: &[SideCounts], averaging: Averaging) -> Result<Vec<OrResult>, StatsError> {
    let mut rows = Vec::new();
    for c in counts {
        let (Some(p_left), Some(p_right)) = c.rates(averaging) else {
            log::warn!("skipping `{}`: one side has no valid records", c.target);
            continue;
        };
        let (odds_ratio, continuity_corrected) = match odds_ratio(p_left, p_right) {
            Ok(or) => (or, false),
            Err(_) => (odds_ratio_corrected(c.left, c.right), true),
        };
        rows.push(OrResult {
            target: c.target.clone(),
            p_left,
            p_right,
            odds_ratio,
            continuity_corrected,
            p_raw: exact_test(c)?,
            p_adjusted: 0.0,
            stars: Stars::None,
            left: c.left,
            right: c.right,
            excluded: c.excluded,
        });
    }
    let raw: Vec<f64> = rows.iter().map(|r| r.p_raw).collect();
    for (row, adj) in rows.iter_mut().zip(holm_adjust(&raw)?) {
        row.p_adjusted = adj;
        row.stars = Stars::from_p(adj);
    }
    Ok(rows)
}

/// Results of one model, one column group of the report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelResults {
    pub model: String,
    pub results: Vec<OrResult>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ReportFormat {
    #[default]
    Table,
    Latex,
    Json,
}

/// Column maxima per side over the target rows (the pooled row excluded).
fn column_max(results: &[OrResult]) -> (f64, f64) {
    results
        .iter()
        .filter(|r| r.target != OVERALL)
        .fold((f64::NEG_INFINITY, f64::NEG_INFINITY), |(l, r), x| {
            (l.max(x.p_left), r.max(x.p_right))
        })
}

/// Row labels: the first model's order, then targets only other models
/// have, then [`OVERALL`] last.
fn row_labels(models: &[ModelResults]) -> Vec<String> {
    let mut labels: Vec<String> = Vec::new();
    for m in models {
        for r in &m.results {
            if r.target != OVERALL && !labels.contains(&r.target) {
                labels.push(r.target.clone());
            }
        }
    }
    if models.iter().any(|m| m.results.iter().any(|r| r.target == OVERALL)) {
        labels.push(OVERALL.into());
    }
    labels
}

struct Cells {
    left: String,
    right: String,
    or: String,
    left_bold: bool,
    right_bold: bool,
}

fn cells(row: Option<&OrResult>, max: (f64, f64)) -> Cells {
    match row {
        None => Cells {
            left: "-".into(),
            right: "-".into(),
            or: "-".into(),
            left_bold: false,
            right_bold: false,
        },
        Some(r) => Cells {
            left: format!("{:.3}", r.p_left),
            right: format!("{:.3}", r.p_right),
            or: format!("{:.3}{}", r.odds_ratio, r.stars),
            left_bold: r.target != OVERALL && r.p_left == max.0,
            right_bold: r.target != OVERALL && r.p_right == max.1,
        },
    }
}

/// Renders results as a plain table, LaTeX or JSON.
///
/// Bold (LaTeX `\textbf`, plain-text `[...]`) marks each model's highest
/// detection rate per side across targets.
pub fn build_report(models: &[ModelResults], format: ReportFormat) -> Result<String, StatsError> {
    if models.is_empty() || models.iter().all(|m| m.results.is_empty()) {
        return Err(StatsError::EmptyReport);
    }
    if format == ReportFormat::Json {
        return Ok(serde_json::to_string_pretty(models).expect("report serializes") + "\n");
    }
    let labels = row_labels(models);
    let maxima: Vec<(f64, f64)> = models.iter().map(|m| column_max(&m.results)).collect();
    let grid: Vec<Vec<Cells>> = labels
        .iter()
        .map(|label| {
            models
                .iter()
                .zip(&maxima)
                .map(|(m, max)| cells(m.results.iter().find(|r| &r.target == label), *max))
                .collect()
        })
        .collect();
    Ok(match format {
        ReportFormat::Latex => render_latex(models, &labels, &grid),
        _ => render_table(models, &labels, &grid),
    })
}

fn render_table(models: &[ModelResults], labels: &[String], grid: &[Vec<Cells>]) -> String {
    let bold = |s: &str, b: bool| if b { format!("[{s}]") } else { s.to_string() };
    let mut rows: Vec<Vec<String>> = Vec::new();
    let mut head1 = vec![String::new()];
    let mut head2 = vec!["Target".to_string()];
    for m in models {
        head1.extend([m.model.clone(), String::new(), String::new()]);
        head2.extend(["Left".into(), "Right".into(), "OR".into()]);
    }
    rows.push(head1);
    rows.push(head2);
    for (label, row) in labels.iter().zip(grid) {
        let mut r = vec![label.clone()];
        for c in row {
            r.push(bold(&c.left, c.left_bold));
            r.push(bold(&c.right, c.right_bold));
            r.push(c.or.clone());
        }
        rows.push(r);
    }
    let widths: Vec<usize> = (0..rows[0].len())
        .map(|i| rows.iter().map(|r| r[i].len()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for (i, r) in rows.iter().enumerate() {
        if i == 2 || (i == rows.len() - 1 && labels.last().is_some_and(|l| l == OVERALL)) {
            out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
            out.push('\n');
        }
        let line: Vec<String> = r
            .iter()
            .enumerate()
            .map(|(j, c)| if j == 0 { format!("{c:<w$}", w = widths[j]) } else { format!("{c:>w$}", w = widths[j]) })
            .collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
    }
    out.push_str("[x]: highest detection rate per model and side. * p<0.05, ** p<0.01, *** p<0.001 (Holm-adjusted Fisher exact test).\n");
    out
}

fn render_latex(models: &[ModelResults], labels: &[String], grid: &[Vec<Cells>]) -> String {
    use crate::latex::escape;
    let bold = |s: &str, b: bool| if b { format!("\\textbf{{{s}}}") } else { s.to_string() };
    let mut out = String::new();
    out.push_str("\\begin{table}[ht]\n\\centering\n");
    out.push_str(&format!("\\begin{{tabular}}{{l{}}}\n\\toprule\n", " | ccc".repeat(models.len())));
    let groups: Vec<String> = models
        .iter()
        .map(|m| format!("\\multicolumn{{3}}{{c}}{{\\textbf{{{}}}}}", escape(&m.model)))
        .collect();
    out.push_str(&format!("\\textbf{{Target}} & {} \\\\\n", groups.join(" & ")));
    let sub = vec!["Left & Right & \\textit{OR}"; models.len()].join(" & ");
    out.push_str(&format!(" & {sub} \\\\\n\\midrule\n"));
    for (label, row) in labels.iter().zip(grid) {
        if label == OVERALL {
            out.push_str("\\midrule\n");
        }
        let name = if label == OVERALL {
            format!("\\textbf{{{OVERALL}}}")
        } else {
            escape(label)
        };
        let cells: Vec<String> = row
            .iter()
            .map(|c| format!("{} & {} & {}", bold(&c.left, c.left_bold), bold(&c.right, c.right_bold), c.or))
            .collect();
        out.push_str(&format!("{name} & {} \\\\\n", cells.join(" & ")));
    }
    out.push_str("\\bottomrule\n\\end{tabular}\n");
    out.push_str("\\caption{Hate speech detection rates by target and persona side. Bold marks the highest rate per model and side. OR > 1: higher rate for left personas. Holm-adjusted Fisher exact test: * $p<0.05$, ** $p<0.01$, *** $p<0.001$.}\n");
    out.push_str("\\end{table}\n");
    out
}
