//! Dataset overview: instance counts and unique targets per dataset and
//! category, with a totals row.
//!
//! The totals row sums instance counts but takes the *union* of target sets,
//! so a category's total unique-target count can exceed the count of every
//! individual dataset when several datasets contribute distinct targets.

use std::collections::{BTreeMap, BTreeSet};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{Access, DatasetDescriptor, UnifiedInstance};
use crate::latex;
use crate::taxonomy::Taxonomy;

pub const DEFAULT_OVERVIEW: &str = "default";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CatalogError {
    #[error("dataset `{dataset}` has an instance with target `{target}`, which is not in taxonomy `{taxonomy}`")]
    UnknownTarget {
        dataset: String,
        target: String,
        taxonomy: String,
    },
    #[error("overview `{overview}` was built for taxonomy `{expected}`, not `{found}`")]
    TaxonomyMismatch {
        overview: String,
        expected: String,
        found: String,
    },
}

/// Counts for one `(dataset, category)` pair. Per-target counts are kept so
/// that the set of unique targets and per-target availability are both
/// recoverable.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cell {
    pub instances: u64,
    pub targets: BTreeMap<String, u64>,
}

impl Cell {
    pub fn unique_targets(&self) -> BTreeSet<&str> {
        self.targets.keys().map(String::as_str).collect()
    }

    /// Table cell text, `N (k)`.
    pub fn label(&self) -> String {
        format!("{} ({})", latex::thousands(self.instances), self.targets.len())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TotalCell {
    pub instances: u64,
    pub unique_targets: BTreeSet<String>,
}

impl TotalCell {
    pub fn label(&self) -> String {
        format!("{} ({})", latex::thousands(self.instances), self.unique_targets.len())
    }
}

/// A dataset that could not be read when the overview was built.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PendingDataset {
    pub dataset_id: String,
    pub access: Access,
    pub reason: String,
    pub notes: String,
}

impl PendingDataset {
    pub fn new(descriptor: &DatasetDescriptor, reason: impl Into<String>) -> Self {
        Self {
            dataset_id: descriptor.dataset_id.clone(),
            access: descriptor.access,
            reason: reason.into(),
            notes: descriptor.notes.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Overview {
    pub name: String,
    pub taxonomy: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mapping: Option<String>,
    /// Column order, copied from the taxonomy.
    pub categories: Vec<String>,
    /// dataset -> category -> cell. Every category is materialized.
    pub datasets: BTreeMap<String, IndexMap<String, Cell>>,
    #[serde(default)]
    pub pending: Vec<PendingDataset>,
}

/// Groups instances by `(dataset, category of target)`.
pub fn build_overview<'a, I>(name: &str, corpora: I, taxonomy: &Taxonomy) -> Result<Overview, CatalogError>
where
    I: IntoIterator<Item = (&'a str, &'a [UnifiedInstance])>,
{
    let mut overview = Overview::empty(name, taxonomy);
    for (dataset, instances) in corpora {
        overview.ensure_row(dataset);
        for inst in instances {
            let category = taxonomy
                .category_of(&inst.target)
                .ok_or_else(|| CatalogError::UnknownTarget {
                    dataset: dataset.to_string(),
                    target: inst.target.clone(),
                    taxonomy: taxonomy.name.clone(),
                })?;
            let cell = overview
                .datasets
                .get_mut(dataset)
                .and_then(|row| row.get_mut(category))
                .expect("row materialized");
            cell.instances += 1;
            *cell.targets.entry(inst.target.clone()).or_default() += 1;
        }
    }
    Ok(overview)
}

impl Overview {
    pub fn empty(name: &str, taxonomy: &Taxonomy) -> Self {
        Self {
            name: name.to_string(),
            taxonomy: taxonomy.name.clone(),
            mapping: None,
            categories: taxonomy.category_names().map(str::to_string).collect(),
            datasets: BTreeMap::new(),
            pending: Vec::new(),
        }
    }

    fn ensure_row(&mut self, dataset: &str) {
        let categories = &self.categories;
        self.datasets.entry(dataset.to_string()).or_insert_with(|| {
            categories.iter().map(|c| (c.clone(), Cell::default())).collect()
        });
    }

    /// Records an unreachable dataset with an all-zero row.
    pub fn add_pending(&mut self, pending: PendingDataset) {
        self.ensure_row(&pending.dataset_id);
        self.pending.push(pending);
    }

    pub fn ensure_taxonomy(&self, taxonomy: &Taxonomy) -> Result<(), CatalogError> {
        if self.taxonomy == taxonomy.name {
            Ok(())
        } else {
            Err(CatalogError::TaxonomyMismatch {
                overview: self.name.clone(),
                expected: self.taxonomy.clone(),
                found: taxonomy.name.clone(),
            })
        }
    }

    pub fn cell(&self, dataset: &str, category: &str) -> Option<&Cell> {
        self.datasets.get(dataset)?.get(category)
    }

    pub fn dataset_size(&self, dataset: &str) -> u64 {
        self.datasets
            .get(dataset)
            .map_or(0, |row| row.values().map(|c| c.instances).sum())
    }

    pub fn is_pending(&self, dataset: &str) -> bool {
        self.pending.iter().any(|p| p.dataset_id == dataset)
    }

    /// Per-category totals: summed instances, union of targets.
    pub fn totals(&self) -> IndexMap<String, TotalCell> {
        let mut totals: IndexMap<String, TotalCell> = self
            .categories
            .iter()
            .map(|c| (c.clone(), TotalCell::default()))
            .collect();
        for row in self.datasets.values() {
            for (category, cell) in row {
                let total = totals.entry(category.clone()).or_default();
                total.instances += cell.instances;
                total.unique_targets.extend(cell.targets.keys().cloned());
            }
        }
        totals
    }

    pub fn total_size(&self) -> u64 {
        self.datasets.keys().map(|d| self.dataset_size(d)).sum()
    }

    /// Instances of `target` per dataset (datasets with zero omitted).
    pub fn target_counts(&self, target: &str) -> BTreeMap<String, u64> {
        self.datasets
            .iter()
            .filter_map(|(d, row)| {
                let n: u64 = row.values().filter_map(|c| c.targets.get(target)).sum();
                (n > 0).then(|| (d.clone(), n))
            })
            .collect()
    }

    /// Checks the row-sum, subset and totals invariants against `taxonomy`.
    pub fn check_invariants(&self, taxonomy: &Taxonomy) -> Vec<String> {
        let mut problems = Vec::new();
        for (dataset, row) in &self.datasets {
            for (category, cell) in row {
                let per_target: u64 = cell.targets.values().sum();
                if per_target != cell.instances {
                    problems.push(format!("{dataset}/{category}: per-target counts do not sum to instances"));
                }
                let allowed = taxonomy.categories.get(category);
                for t in cell.targets.keys() {
                    if !allowed.is_some_and(|ts| ts.contains(t)) {
                        problems.push(format!("{dataset}/{category}: target {t} not in category"));
                    }
                }
            }
        }
        for (category, total) in self.totals() {
            let max_single = self
                .datasets
                .values()
                .filter_map(|row| row.get(&category))
                .map(|c| c.targets.len())
                .max()
                .unwrap_or(0);
            if total.unique_targets.len() < max_single {
                problems.push(format!("totals/{category}: union smaller than a single dataset"));
            }
        }
        problems
    }

    /// JSON document with derived sizes and totals alongside the cells.
    /// [`Overview::from_json`] ignores the derived parts.
    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct Document<'a> {
            #[serde(flatten)]
            overview: &'a Overview,
            dataset_sizes: BTreeMap<&'a str, u64>,
            totals: IndexMap<String, TotalCell>,
            total_size: u64,
        }
        let doc = Document {
            overview: self,
            dataset_sizes: self.datasets.keys().map(|d| (d.as_str(), self.dataset_size(d))).collect(),
            totals: self.totals(),
            total_size: self.total_size(),
        };
        serde_json::to_string_pretty(&doc).expect("overview serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }

    fn table_rows(&self) -> (Vec<String>, Vec<Vec<String>>, Vec<String>) {
        let mut header = vec!["Dataset \\ Category".to_string()];
        header.extend(self.categories.iter().cloned());
        header.push("Dataset size".into());
        let rows = self
            .datasets
            .iter()
            .map(|(d, row)| {
                let mut r = vec![d.clone()];
                r.extend(self.categories.iter().map(|c| row.get(c).cloned().unwrap_or_default().label()));
                r.push(latex::thousands(self.dataset_size(d)));
                r
            })
            .collect();
        let totals = self.totals();
        let mut total_row = vec!["All Datasets".to_string()];
        total_row.extend(self.categories.iter().map(|c| totals[c].label()));
        total_row.push(latex::thousands(self.total_size()));
        (header, rows, total_row)
    }

    /// Aligned plain-text table followed by any pending notices.
    pub fn render_text(&self) -> String {
        let (header, rows, total) = self.table_rows();
        let mut all = vec![header];
        all.extend(rows);
        all.push(total);
        let widths: Vec<usize> = (0..all[0].len())
            .map(|i| all.iter().map(|r| r[i].chars().count()).max().unwrap_or(0))
            .collect();
        let fmt_row = |r: &Vec<String>| {
            r.iter()
                .enumerate()
                .map(|(i, c)| {
                    if i == 0 {
                        format!("{c:<w$}", w = widths[i])
                    } else {
                        format!("{c:>w$}", w = widths[i])
                    }
                })
                .collect::<Vec<_>>()
                .join("  ")
        };
        let rule = "-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1));
        let mut out = format!("overview: {} (taxonomy: {})\n", self.name, self.taxonomy);
        let n = all.len();
        for (i, r) in all.iter().enumerate() {
            if i == 1 || i == n - 1 {
                out.push_str(&rule);
                out.push('\n');
            }
            out.push_str(&fmt_row(r));
            out.push('\n');
        }
        for p in &self.pending {
            out.push_str(&format!("pending: {} ({}): {}\n", p.dataset_id, p.access, p.reason));
            if !p.notes.is_empty() {
                out.push_str(&format!("  {}\n", p.notes));
            }
        }
        out
    }

    /// Booktabs table, one row per dataset plus the `All Datasets` row.
    pub fn render_latex(&self) -> String {
        let (header, rows, total) = self.table_rows();
        let esc = |r: Vec<String>| r.into_iter().map(|c| latex::escape(&c)).collect::<Vec<_>>();
        let mut header = esc(header);
        header[0] = "\\textbf{Dataset} \\textbackslash{} \\textbf{Category}".into();
        for h in header.iter_mut().skip(1) {
            *h = format!("\\textbf{{{h}}}");
        }
        let colspec = format!("l|{}|r", "r".repeat(self.categories.len()));
        latex::table(
            &colspec,
            &header,
            &[rows.into_iter().map(esc).collect(), vec![esc(total)]],
            &format!(
                "Instances and unique target groups (in parentheses) per target category (overview {}, taxonomy {}).",
                latex::escape(&self.name),
                latex::escape(&self.taxonomy)
            ),
        )
    }
}
