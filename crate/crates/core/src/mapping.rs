//! Per-dataset translation of raw target keywords into standardized targets.
//!
//! Keys are the exact, case-sensitive strings found in the source files.
//! `"JEWS"`, `"jewish"` and `"Kikes"` are distinct keys that may all map to
//! `jews`. A composite label such as `"bla, jew"` is one key mapped to
//! several targets; splitting happens on the mapped list, never on the raw
//! string.

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::latex;
use crate::taxonomy::Taxonomy;

pub const DEFAULT_MAPPING: &str = "default";

const DEFAULT_JSON: &str = include_str!("../resources/mapping_default.json");

/// Raw keyword -> target list for one dataset.
pub type KeywordTable = IndexMap<String, Vec<String>>;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MappingError {
    #[error("unknown dataset `{name}`; known datasets: {valid}")]
    UnknownDataset { name: String, valid: String },
    #[error("keyword `{keyword}` of dataset `{dataset}` maps to unknown target `{target}`; valid targets: {valid}")]
    UnknownTarget {
        dataset: String,
        keyword: String,
        target: String,
        valid: String,
    },
    #[error("keyword `{keyword}` of dataset `{dataset}` maps to an empty target list")]
    EmptyTargets { dataset: String, keyword: String },
    #[error("mapping `{mapping}` belongs to taxonomy `{expected}`, not `{found}`")]
    TaxonomyMismatch {
        mapping: String,
        expected: String,
        found: String,
    },
}

/// Outcome of looking up a raw keyword.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Resolution<'a> {
    Mapped(&'a [String]),
    Unmapped,
}

impl<'a> Resolution<'a> {
    pub fn targets(self) -> Option<&'a [String]> {
        match self {
            Resolution::Mapped(t) => Some(t),
            Resolution::Unmapped => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MappingTable {
    pub name: String,
    /// Name of the companion taxonomy every target must belong to.
    pub taxonomy: String,
    pub datasets: IndexMap<String, KeywordTable>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum DatasetSelection {
    #[default]
    All,
    Only(Vec<String>),
}

impl DatasetSelection {
    pub fn parse(s: &str) -> Self {
        if s.trim().eq_ignore_ascii_case("all") {
            return DatasetSelection::All;
        }
        DatasetSelection::Only(
            s.split(',')
                .map(|d| d.trim().to_string())
                .filter(|d| !d.is_empty())
                .collect(),
        )
    }
}

impl MappingTable {
    pub fn builtin_default() -> Self {
        serde_json::from_str(DEFAULT_JSON).expect("bundled default mapping is valid JSON")
    }

    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("mapping serializes")
    }

    pub fn dataset_ids(&self) -> impl Iterator<Item = &str> {
        self.datasets.keys().map(String::as_str)
    }

    pub fn ensure_dataset(&self, dataset: &str) -> Result<&KeywordTable, MappingError> {
        self.datasets.get(dataset).ok_or_else(|| self.unknown_dataset(dataset))
    }

    fn unknown_dataset(&self, dataset: &str) -> MappingError {
        MappingError::UnknownDataset {
            name: dataset.to_string(),
            valid: self.dataset_ids().collect::<Vec<_>>().join(", "),
        }
    }

    /// Looks up `keyword` for `dataset`. A missing keyword is not an error.
    pub fn resolve(&self, dataset: &str, keyword: &str) -> Result<Resolution<'_>, MappingError> {
        Ok(match self.ensure_dataset(dataset)?.get(keyword) {
            Some(targets) => Resolution::Mapped(targets),
            None => Resolution::Unmapped,
        })
    }

    /// Referential integrity against the companion taxonomy.
    pub fn check_against(&self, taxonomy: &Taxonomy) -> Result<(), MappingError> {
        if self.taxonomy != taxonomy.name {
            return Err(MappingError::TaxonomyMismatch {
                mapping: self.name.clone(),
                expected: self.taxonomy.clone(),
                found: taxonomy.name.clone(),
            });
        }
        for (dataset, table) in &self.datasets {
            check_table(dataset, table, taxonomy)?;
        }
        Ok(())
    }

    /// Replaces individual `(dataset, keyword)` entries. Datasets without a
    /// section yet get one.
    pub fn with_specific(
        &self,
        changes: &IndexMap<String, KeywordTable>,
        taxonomy: &Taxonomy,
        new_name: &str,
    ) -> Result<MappingTable, MappingError> {
        let mut next = self.clone();
        next.name = new_name.to_string();
        for (dataset, table) in changes {
            check_table(dataset, table, taxonomy)?;
            let section = next.datasets.entry(dataset.clone()).or_default();
            for (keyword, targets) in table {
                section.insert(keyword.clone(), targets.clone());
            }
        }
        next.check_against(taxonomy)?;
        Ok(next)
    }

    /// Replaces `keyword` in every dataset whose table already contains it.
    pub fn with_all(
        &self,
        changes: &KeywordTable,
        taxonomy: &Taxonomy,
        new_name: &str,
    ) -> Result<MappingTable, MappingError> {
        check_table("*", changes, taxonomy)?;
        let mut next = self.clone();
        next.name = new_name.to_string();
        for table in next.datasets.values_mut() {
            for (keyword, targets) in changes {
                if let Some(slot) = table.get_mut(keyword) {
                    slot.clone_from(targets);
                }
            }
        }
        next.check_against(taxonomy)?;
        Ok(next)
    }

    pub fn select(&self, selection: &DatasetSelection) -> Result<Vec<(&str, &KeywordTable)>, MappingError> {
        match selection {
            DatasetSelection::All => Ok(self.datasets.iter().map(|(d, t)| (d.as_str(), t)).collect()),
            DatasetSelection::Only(names) => names
                .iter()
                .map(|n| {
                    let (key, table) = self
                        .datasets
                        .get_key_value(n.as_str())
                        .ok_or_else(|| self.unknown_dataset(n))?;
                    Ok((key.as_str(), table))
                })
                .collect(),
        }
    }

    /// Plain-text listing: a `[dataset]` header followed by
    /// `"keyword" -> target, target` lines.
    pub fn render_text(&self, selection: &DatasetSelection) -> Result<String, MappingError> {
        let mut out = format!("mapping: {} (taxonomy: {})\n", self.name, self.taxonomy);
        for (dataset, table) in self.select(selection)? {
            out.push_str(&format!("[{dataset}]\n"));
            for (keyword, targets) in table {
                let quoted = serde_json::to_string(keyword).expect("string serializes");
                out.push_str(&format!("  {quoted} -> {}\n", targets.join(", ")));
            }
        }
        Ok(out)
    }

    /// One `tabular` per selected dataset.
    pub fn render_latex(&self, selection: &DatasetSelection) -> Result<String, MappingError> {
        let mut out = String::new();
        for (dataset, table) in self.select(selection)? {
            let rows: Vec<Vec<String>> = table
                .iter()
                .map(|(k, ts)| {
                    vec![
                        format!("``{}''", latex::escape(k)),
                        latex::escape(&ts.join(", ")),
                    ]
                })
                .collect();
            out.push_str(&latex::table(
                "ll",
                &["\\textbf{Original Keyword}".into(), "\\textbf{Target}".into()],
                &[rows],
                &format!(
                    "Keyword mapping for dataset {} (mapping {}).",
                    latex::escape(dataset),
                    latex::escape(&self.name)
                ),
            ));
            out.push('\n');
        }
        Ok(out)
    }

    /// Every `(dataset, keyword)` pair with its targets, in stored order.
    pub fn entries(&self) -> impl Iterator<Item = (&str, &str, &[String])> {
        self.datasets.iter().flat_map(|(d, t)| {
            t.iter()
                .map(move |(k, ts)| (d.as_str(), k.as_str(), ts.as_slice()))
        })
    }
}

fn check_table(dataset: &str, table: &KeywordTable, taxonomy: &Taxonomy) -> Result<(), MappingError> {
    for (keyword, targets) in table {
        if targets.is_empty() {
            return Err(MappingError::EmptyTargets {
                dataset: dataset.to_string(),
                keyword: keyword.clone(),
            });
        }
        for t in targets {
            if !taxonomy.contains_target(t) {
                return Err(MappingError::UnknownTarget {
                    dataset: dataset.to_string(),
                    keyword: keyword.clone(),
                    target: t.clone(),
                    valid: taxonomy.target_names().join(", "),
                });
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn default_pair() -> (MappingTable, Taxonomy) {
        (MappingTable::builtin_default(), Taxonomy::builtin_default())
    }

    fn targets(m: &MappingTable, d: &str, k: &str) -> Option<Vec<String>> {
        m.resolve(d, k).unwrap().targets().map(<[String]>::to_vec)
    }

    #[test]
    fn default_is_consistent_with_default_taxonomy() {
        let (m, t) = default_pair();
        m.check_against(&t).unwrap();
        assert_eq!(m.datasets.len(), 10);
    }

    #[test]
    fn resolve_examples() {
        let (m, _) = default_pair();
        assert_eq!(targets(&m, "fanton2021human", "JEWS"), Some(vec!["jews".into()]));
        assert_eq!(
            targets(&m, "vidgen2021learning", "bla, jew"),
            Some(vec!["jews".into(), "blacks".into()])
        );
        assert_eq!(
            m.resolve("rottger2021hatecheck", "totally_unknown_keyword").unwrap(),
            Resolution::Unmapped
        );
        // Case-sensitive.
        assert_eq!(m.resolve("fanton2021human", "jews").unwrap(), Resolution::Unmapped);
    }

    #[test]
    fn resolve_unknown_dataset_errors() {
        let (m, _) = default_pair();
        let err = m.resolve("nope", "JEWS").unwrap_err();
        assert!(err.to_string().contains("fanton2021human"));
    }

    #[test]
    fn update_specific_touches_only_named_pair() {
        let (m, t) = default_pair();
        let mut changes = IndexMap::new();
        changes.insert(
            "jigsaw2019".to_string(),
            KeywordTable::from([("black".to_string(), vec!["race_unspecified".to_string()])]),
        );
        let next = m.with_specific(&changes, &t, "m2").unwrap();
        assert_eq!(targets(&next, "jigsaw2019", "black"), Some(vec!["race_unspecified".into()]));
        assert_eq!(targets(&next, "jikeli2023general", "Blacks"), Some(vec!["blacks".into()]));
        let differing: Vec<_> = m
            .entries()
            .zip(next.entries())
            .filter(|(a, b)| a != b)
            .collect();
        assert_eq!(differing.len(), 1);
    }

    #[test]
    fn update_specific_empty_is_identity() {
        let (m, t) = default_pair();
        let next = m.with_specific(&IndexMap::new(), &t, "copy").unwrap();
        assert_eq!(next.datasets, m.datasets);
    }

    #[test]
    fn update_specific_rejects_unknown_target() {
        let (m, t) = default_pair();
        let mut changes = IndexMap::new();
        changes.insert(
            "jigsaw2019".to_string(),
            KeywordTable::from([("black".to_string(), vec!["martians".to_string()])]),
        );
        let err = m.with_specific(&changes, &t, "m2").unwrap_err();
        assert!(matches!(err, MappingError::UnknownTarget { ref target, .. } if target == "martians"));
    }

    #[test]
    fn update_all_changes_exact_keyword_only() {
        let (m, t) = default_pair();
        let changes = KeywordTable::from([("black".to_string(), vec!["race_unspecified".to_string()])]);
        let next = m.with_all(&changes, &t, "m3").unwrap();
        assert_eq!(targets(&next, "jigsaw2019", "black"), Some(vec!["race_unspecified".into()]));
        assert_eq!(targets(&next, "jikeli2023general", "Blacks"), Some(vec!["blacks".into()]));
        assert_eq!(
            targets(&next, "rottger2021hatecheck", "black people"),
            Some(vec!["blacks".into()])
        );
    }

    #[test]
    fn update_all_absent_keyword_is_identity() {
        let (m, t) = default_pair();
        let changes = KeywordTable::from([("nowhere".to_string(), vec!["jews".to_string()])]);
        assert_eq!(m.with_all(&changes, &t, "x").unwrap().datasets, m.datasets);
    }

    #[test]
    fn show_examples() {
        let (m, _) = default_pair();
        let one = m
            .render_text(&DatasetSelection::Only(vec!["fanton2021human".into()]))
            .unwrap();
        assert!(one.contains("\"JEWS\" -> jews"));
        let all = m.render_text(&DatasetSelection::All).unwrap();
        assert_eq!(all.lines().filter(|l| l.starts_with('[')).count(), 10);
        assert!(m.render_text(&DatasetSelection::Only(vec!["nope".into()])).is_err());
        let tex = m.render_latex(&DatasetSelection::All).unwrap();
        assert_eq!(tex.matches("\\begin{tabular}").count(), 10);
    }
}
