//! Target categories and the target groups they contain.
//!
//! A [`Taxonomy`] is an ordered association from category name to an ordered
//! list of target names. Category-generic targets carry the `_unspecified`
//! suffix (`race_unspecified`, `lgbtq_unspecified`, ...) so that source labels
//! naming a category without a subtype still land on a concrete target.

use std::collections::BTreeMap;
use std::fmt;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::latex;
use crate::mapping::{MappingError, MappingTable};

/// Suffix marking the catch-all target of a category.
pub const UNSPECIFIED_SUFFIX: &str = "_unspecified";

/// Name under which the shipped taxonomy is stored.
pub const DEFAULT_TAXONOMY: &str = "default";

const DEFAULT_JSON: &str = include_str!("../resources/taxonomy_default.json");

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TaxonomyError {
    #[error("unknown category `{name}`; valid categories: {valid}")]
    UnknownCategory { name: String, valid: String },
    #[error("unknown target `{name}`; valid targets: {valid}")]
    UnknownTarget { name: String, valid: String },
    #[error("target `{target}` is not in category `{category}`")]
    TargetNotInCategory { target: String, category: String },
    #[error("target `{target}` already exists in category `{category}`")]
    DuplicateTarget { target: String, category: String },
    #[error("invalid target name `{0}`: use lowercase letters, digits and underscores")]
    InvalidTargetName(String),
    #[error("taxonomy `{name}` violates its invariants: {}", join_violations(.violations))]
    Invalid { name: String, violations: Vec<Violation> },
    #[error(transparent)]
    Mapping(#[from] MappingError),
}

fn join_violations(v: &[Violation]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
}

/// A single target group together with the category it belongs to.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TargetGroup {
    pub name: String,
    pub category: String,
}

impl TargetGroup {
    pub fn is_unspecified(&self) -> bool {
        self.name.ends_with(UNSPECIFIED_SUFFIX)
    }
}

/// A broken taxonomy invariant. Returned as data by [`Taxonomy::validate`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    EmptyTaxonomyName,
    EmptyCategoryName,
    InvalidTargetName { target: String, category: String },
    DuplicateMembership { target: String, categories: Vec<String> },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::EmptyTaxonomyName => write!(f, "taxonomy name is empty"),
            Violation::EmptyCategoryName => write!(f, "a category has an empty name"),
            Violation::InvalidTargetName { target, category } => {
                write!(f, "target `{target}` in category `{category}` is not a lowercase token")
            }
            Violation::DuplicateMembership { target, categories } => {
                write!(f, "target `{target}` appears more than once (in {})", categories.join(", "))
            }
        }
    }
}

/// Which categories an operation applies to.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum CategorySelection {
    #[default]
    All,
    Only(Vec<String>),
}

impl CategorySelection {
    /// Parses `all` or a comma separated list of category names.
    pub fn parse(s: &str) -> Self {
        if s.trim().eq_ignore_ascii_case("all") {
            return CategorySelection::All;
        }
        CategorySelection::Only(
            s.split(',')
                .map(|c| c.trim().to_string())
                .filter(|c| !c.is_empty())
                .collect(),
        )
    }
}

/// Moves `target` from one category to another.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TargetMove {
    pub target: String,
    pub from: String,
    pub to: String,
}

impl TargetMove {
    pub fn new(target: impl Into<String>, from: impl Into<String>, to: impl Into<String>) -> Self {
        Self {
            target: target.into(),
            from: from.into(),
            to: to.into(),
        }
    }

    pub fn reversed(&self) -> Self {
        Self::new(self.target.clone(), self.to.clone(), self.from.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Taxonomy {
    pub name: String,
    pub categories: IndexMap<String, Vec<String>>,
}

pub fn is_target_token(s: &str) -> bool {
    !s.is_empty()
        && s
            .bytes()
            .all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'_')
}

impl Taxonomy {
    /// The shipped default taxonomy with the nine standard categories.
    pub fn builtin_default() -> Self {
        serde_json::from_str(DEFAULT_JSON).expect("bundled default taxonomy is valid JSON")
    }

    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("taxonomy serializes")
    }

    pub fn category_names(&self) -> impl Iterator<Item = &str> {
        self.categories.keys().map(String::as_str)
    }

    /// Every target group in category order, then insertion order.
    pub fn targets(&self) -> impl Iterator<Item = TargetGroup> + '_ {
        self.categories.iter().flat_map(|(cat, ts)| {
            ts.iter().map(move |t| TargetGroup {
                name: t.clone(),
                category: cat.clone(),
            })
        })
    }

    pub fn target_names(&self) -> Vec<&str> {
        self.categories
            .values()
            .flat_map(|ts| ts.iter().map(String::as_str))
            .collect()
    }

    pub fn category_of(&self, target: &str) -> Option<&str> {
        self.categories
            .iter()
            .find(|(_, ts)| ts.iter().any(|t| t == target))
            .map(|(c, _)| c.as_str())
    }

    pub fn contains_target(&self, target: &str) -> bool {
        self.category_of(target).is_some()
    }

    pub fn category(&self, name: &str) -> Result<&[String], TaxonomyError> {
        self.categories
            .get(name)
            .map(Vec::as_slice)
            .ok_or_else(|| self.unknown_category(name))
    }

    pub(crate) fn unknown_category(&self, name: &str) -> TaxonomyError {
        TaxonomyError::UnknownCategory {
            name: name.to_string(),
            valid: self.category_names().collect::<Vec<_>>().join(", "),
        }
    }

    pub(crate) fn unknown_target(&self, name: &str) -> TaxonomyError {
        TaxonomyError::UnknownTarget {
            name: name.to_string(),
            valid: self.target_names().join(", "),
        }
    }

    /// Looks up a target, failing with the list of valid targets.
    pub fn target(&self, name: &str) -> Result<TargetGroup, TaxonomyError> {
        self.category_of(name)
            .map(|c| TargetGroup {
                name: name.to_string(),
                category: c.to_string(),
            })
            .ok_or_else(|| self.unknown_target(name))
    }

    /// Checks every invariant. An empty result means the taxonomy is valid.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        if self.name.trim().is_empty() {
            out.push(Violation::EmptyTaxonomyName);
        }
        let mut seen: IndexMap<&str, Vec<String>> = IndexMap::new();
        for (cat, targets) in &self.categories {
            if cat.trim().is_empty() {
                out.push(Violation::EmptyCategoryName);
            }
            for t in targets {
                if !is_target_token(t) {
                    out.push(Violation::InvalidTargetName {
                        target: t.clone(),
                        category: cat.clone(),
                    });
                }
                seen.entry(t.as_str()).or_default().push(cat.clone());
            }
        }
        for (t, cats) in seen {
            if cats.len() > 1 {
                out.push(Violation::DuplicateMembership {
                    target: t.to_string(),
                    categories: cats,
                });
            }
        }
        out
    }

    pub fn ensure_valid(&self) -> Result<(), TaxonomyError> {
        let violations = self.validate();
        if violations.is_empty() {
            Ok(())
        } else {
            Err(TaxonomyError::Invalid {
                name: self.name.clone(),
                violations,
            })
        }
    }

    /// Resolves a selection into `(category, targets)` pairs in stored order.
    pub fn select(
        &self,
        selection: &CategorySelection,
    ) -> Result<Vec<(&str, &[String])>, TaxonomyError> {
        match selection {
            CategorySelection::All => Ok(self
                .categories
                .iter()
                .map(|(c, ts)| (c.as_str(), ts.as_slice()))
                .collect()),
            CategorySelection::Only(names) => {
                for n in names {
                    if !self.categories.contains_key(n) {
                        return Err(self.unknown_category(n));
                    }
                }
                // Stored order, regardless of request order.
                Ok(self
                    .categories
                    .iter()
                    .filter(|(c, _)| names.contains(c))
                    .map(|(c, ts)| (c.as_str(), ts.as_slice()))
                    .collect())
            }
        }
    }

    /// Plain-text listing, one `category (n): t1, t2` line per category.
    pub fn render_text(&self, selection: &CategorySelection) -> Result<String, TaxonomyError> {
        let mut out = format!("taxonomy: {}\n", self.name);
        for (cat, targets) in self.select(selection)? {
            out.push_str(&format!("{cat} ({}): {}\n", targets.len(), targets.join(", ")));
        }
        Ok(out)
    }

    /// One `tabular` per selected category.
    pub fn render_latex(&self, selection: &CategorySelection) -> Result<String, TaxonomyError> {
        let mut out = String::new();
        for (cat, targets) in self.select(selection)? {
            let rows: Vec<Vec<String>> = targets.iter().map(|t| vec![latex::escape(t)]).collect();
            out.push_str(&latex::table(
                "l",
                &[format!("\\textbf{{{}}}", latex::escape(cat))],
                &[rows],
                &format!(
                    "Target groups in category {} (taxonomy {}).",
                    latex::escape(cat),
                    latex::escape(&self.name)
                ),
            ));
            out.push('\n');
        }
        Ok(out)
    }

    /// Applies `changes` in order and returns the result under `new_name`.
    ///
    /// Moving a target into a category that does not exist creates it at the
    /// end of the category order. Categories emptied by a move are kept.
    pub fn with_moves(&self, changes: &[TargetMove], new_name: &str) -> Result<Taxonomy, TaxonomyError> {
        let mut next = self.clone();
        next.name = new_name.to_string();
        for m in changes {
            let from = next
                .categories
                .get_mut(&m.from)
                .ok_or_else(|| self.unknown_category(&m.from))?;
            let pos = from.iter().position(|t| *t == m.target).ok_or_else(|| {
                TaxonomyError::TargetNotInCategory {
                    target: m.target.clone(),
                    category: m.from.clone(),
                }
            })?;
            let target = from.remove(pos);
            next.categories.entry(m.to.clone()).or_default().push(target);
        }
        next.ensure_valid()?;
        Ok(next)
    }

    /// Appends a new target to an existing category.
    pub fn with_target(&self, target: &str, category: &str, new_name: &str) -> Result<Taxonomy, TaxonomyError> {
        if !is_target_token(target) {
            return Err(TaxonomyError::InvalidTargetName(target.to_string()));
        }
        if let Some(existing) = self.category_of(target) {
            return Err(TaxonomyError::DuplicateTarget {
                target: target.to_string(),
                category: existing.to_string(),
            });
        }
        let mut next = self.clone();
        next.name = new_name.to_string();
        next.categories
            .get_mut(category)
            .ok_or_else(|| self.unknown_category(category))?
            .push(target.to_string());
        next.ensure_valid()?;
        Ok(next)
    }

    /// Membership as `category -> sorted targets`, ignoring empty categories.
    pub fn membership(&self) -> BTreeMap<String, Vec<String>> {
        self.categories
            .iter()
            .filter(|(_, ts)| !ts.is_empty())
            .map(|(c, ts)| {
                let mut ts = ts.clone();
                ts.sort();
                (c.clone(), ts)
            })
            .collect()
    }
}

/// Adds a new target group and routes the given raw keywords to it.
///
/// Returns the modified taxonomy (named `taxonomy_out`) and mapping (named
/// `mapping_out`, companion of `taxonomy_out`). Each keyword is mapped to the
/// new target only, replacing any previous entry for that keyword.
pub fn add_target(
    taxonomy: &Taxonomy,
    mapping: &MappingTable,
    target: &str,
    category: &str,
    keywords: &[(String, String)],
    taxonomy_out: &str,
    mapping_out: &str,
) -> Result<(Taxonomy, MappingTable), TaxonomyError> {
    for (dataset, _) in keywords {
        mapping.ensure_dataset(dataset)?;
    }
    let taxonomy_next = taxonomy.with_target(target, category, taxonomy_out)?;
    let mut mapping_next = mapping.clone();
    mapping_next.name = mapping_out.to_string();
    mapping_next.taxonomy = taxonomy_out.to_string();
    for (dataset, keyword) in keywords {
        mapping_next
            .datasets
            .get_mut(dataset)
            .expect("checked above")
            .insert(keyword.clone(), vec![target.to_string()]);
    }
    mapping_next.check_against(&taxonomy_next)?;
    Ok((taxonomy_next, mapping_next))
}

#[cfg(test)]
mod tests {
    use super::*;

    const DEFAULT_CATEGORIES: [&str; 9] = [
        "age", "disabled", "gender", "migration", "origin", "political", "race", "religion", "sexuality",
    ];

    #[test]
    fn default_has_nine_categories_in_table_order() {
        let t = Taxonomy::builtin_default();
        assert_eq!(t.category_names().collect::<Vec<_>>(), DEFAULT_CATEGORIES);
        assert!(t.validate().is_empty());
    }

    #[test]
    fn default_has_one_unspecified_per_category() {
        let t = Taxonomy::builtin_default();
        for cat in DEFAULT_CATEGORIES {
            let name = format!("{cat}{UNSPECIFIED_SUFFIX}");
            assert_eq!(t.category_of(&name), Some(cat), "{name}");
        }
        for named in [
            "jews", "blacks", "muslims", "christians", "whites", "asians", "latin", "women", "men",
            "mexicans", "lgbtq_unspecified",
        ] {
            assert!(t.contains_target(named), "{named}");
        }
    }

    #[test]
    fn show_religion_lists_abrahamic_targets() {
        let t = Taxonomy::builtin_default();
        let sel = CategorySelection::Only(vec!["religion".into()]);
        let text = t.render_text(&sel).unwrap();
        for target in ["jews", "muslims", "christians"] {
            assert!(text.contains(target));
        }
        assert!(!text.contains("blacks"));
    }

    #[test]
    fn show_unknown_category_names_valid_ones() {
        let t = Taxonomy::builtin_default();
        let err = t
            .render_text(&CategorySelection::Only(vec!["nonexistent".into()]))
            .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("nonexistent"));
        for cat in DEFAULT_CATEGORIES {
            assert!(msg.contains(cat));
        }
    }

    #[test]
    fn latex_has_one_tabular_per_category() {
        let t = Taxonomy::builtin_default();
        let tex = t.render_latex(&CategorySelection::All).unwrap();
        assert_eq!(tex.matches("\\begin{tabular}").count(), 9);
        assert!(tex.contains("race\\_unspecified"));
    }

    #[test]
    fn move_mexicans_into_race() {
        let base = Taxonomy::builtin_default();
        let v2 = base
            .with_moves(&[TargetMove::new("mexicans", "origin", "race")], "tax_v2")
            .unwrap();
        assert_eq!(v2.name, "tax_v2");
        assert_eq!(v2.category_of("mexicans"), Some("race"));
        assert_eq!(base.category_of("mexicans"), Some("origin"));
    }

    #[test]
    fn empty_move_list_is_identity() {
        let base = Taxonomy::builtin_default();
        let copy = base.with_moves(&[], "copy").unwrap();
        assert_eq!(copy.categories, base.categories);
    }

    #[test]
    fn move_into_new_category_creates_it() {
        let base = Taxonomy::builtin_default();
        let t = base
            .with_moves(&[TargetMove::new("jews", "religion", "ethnoreligious")], "x")
            .unwrap();
        assert_eq!(t.categories["ethnoreligious"], vec!["jews".to_string()]);
        assert_eq!(t.categories.keys().last().unwrap(), "ethnoreligious");
    }

    #[test]
    fn move_from_wrong_category_fails() {
        let base = Taxonomy::builtin_default();
        let err = base
            .with_moves(&[TargetMove::new("jews", "race", "religion")], "x")
            .unwrap_err();
        assert!(matches!(err, TaxonomyError::TargetNotInCategory { .. }));
    }

    #[test]
    fn validate_flags_duplicate_membership() {
        let mut t = Taxonomy::builtin_default();
        t.categories.get_mut("race").unwrap().push("jews".into());
        let v = t.validate();
        assert_eq!(v.len(), 1);
        assert!(matches!(&v[0], Violation::DuplicateMembership { target, .. } if target == "jews"));
    }

    #[test]
    fn validate_flags_empty_category_name() {
        let mut t = Taxonomy::builtin_default();
        t.categories.insert(String::new(), vec!["someone".into()]);
        assert_eq!(t.validate(), vec![Violation::EmptyCategoryName]);
    }

    #[test]
    fn with_target_rejects_existing_name() {
        let t = Taxonomy::builtin_default();
        let err = t.with_target("jews", "race", "x").unwrap_err();
        assert!(matches!(err, TaxonomyError::DuplicateTarget { .. }));
    }

    #[test]
    fn selection_parse() {
        assert_eq!(CategorySelection::parse("all"), CategorySelection::All);
        assert_eq!(
            CategorySelection::parse("race, religion"),
            CategorySelection::Only(vec!["race".into(), "religion".into()])
        );
    }
}
