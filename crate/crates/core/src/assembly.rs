//! Target and category datasets, availability reports and balanced sampling.

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{Overview, PendingDataset};
use crate::ingest::UnifiedInstance;
use crate::mapping::MappingTable;
use crate::rng::SplitMix64;
use crate::taxonomy::{Taxonomy, TaxonomyError};

#[derive(Debug, Error)]
pub enum AssemblyError {
    #[error(transparent)]
    Taxonomy(#[from] TaxonomyError),
    #[error("target `{target}` has {available} instances, {requested} requested (short by {})", .requested - .available)]
    Insufficient {
        target: String,
        available: usize,
        requested: usize,
    },
    #[error("per-target sample size must be positive")]
    ZeroSampleSize,
    #[error("target `{0}` is listed more than once")]
    DuplicateTarget(String),
    #[error("sample manifest {path}: {message}")]
    Manifest { path: PathBuf, message: String },
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

/// Names of the configuration a dataset is assembled under.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfigNames {
    pub taxonomy: String,
    pub mapping: String,
    pub overview: String,
}

impl Default for ConfigNames {
    fn default() -> Self {
        Self {
            taxonomy: crate::taxonomy::DEFAULT_TAXONOMY.into(),
            mapping: crate::mapping::DEFAULT_MAPPING.into(),
            overview: crate::catalog::DEFAULT_OVERVIEW.into(),
        }
    }
}

/// Instances gathered for a request plus what could not be reached.
#[derive(Debug, Clone, Default)]
pub struct Assembled {
    pub instances: Vec<UnifiedInstance>,
    pub pending: Vec<PendingDataset>,
    pub warnings: Vec<String>,
}

/// Keeps the instances whose target is in `targets`, preserving corpus order.
pub fn select_targets<'a, I>(corpora: I, targets: &[&str]) -> Vec<UnifiedInstance>
where
    I: IntoIterator<Item = &'a [UnifiedInstance]>,
{
    let wanted: HashSet<&str> = targets.iter().copied().collect();
    corpora
        .into_iter()
        .flat_map(|c| c.iter())
        .filter(|i| wanted.contains(i.target.as_str()))
        .cloned()
        .collect()
}

/// Availability of one target according to an overview.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TargetInfo {
    pub target: String,
    pub category: String,
    pub total: u64,
    pub per_dataset: BTreeMap<String, u64>,
    /// Unreachable datasets whose mapping routes some keyword to the target.
    pub pending: Vec<PendingDataset>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CategoryInfo {
    pub category: String,
    pub total: u64,
    pub per_target: IndexMap<String, u64>,
    pub per_dataset: BTreeMap<String, u64>,
    pub pending: Vec<PendingDataset>,
}

fn pending_for(overview: &Overview, mapping: &MappingTable, targets: &[&str]) -> Vec<PendingDataset> {
    overview
        .pending
        .iter()
        .filter(|p| {
            mapping.datasets.get(&p.dataset_id).is_some_and(|table| {
                table
                    .values()
                    .any(|ts| ts.iter().any(|t| targets.contains(&t.as_str())))
            })
        })
        .cloned()
        .collect()
}

pub fn target_info(
    overview: &Overview,
    taxonomy: &Taxonomy,
    mapping: &MappingTable,
    target: &str,
) -> Result<TargetInfo, AssemblyError> {
    let group = taxonomy.target(target)?;
    let per_dataset = overview.target_counts(target);
    Ok(TargetInfo {
        target: group.name,
        category: group.category,
        total: per_dataset.values().sum(),
        per_dataset,
        pending: pending_for(overview, mapping, &[target]),
    })
}

pub fn category_info(
    overview: &Overview,
    taxonomy: &Taxonomy,
    mapping: &MappingTable,
    category: &str,
) -> Result<CategoryInfo, AssemblyError> {
    let targets = taxonomy.category(category)?;
    let mut per_target = IndexMap::new();
    let mut per_dataset: BTreeMap<String, u64> = BTreeMap::new();
    for t in targets {
        let counts = overview.target_counts(t);
        per_target.insert(t.clone(), counts.values().sum());
        for (d, n) in counts {
            *per_dataset.entry(d).or_default() += n;
        }
    }
    let names: Vec<&str> = targets.iter().map(String::as_str).collect();
    Ok(CategoryInfo {
        category: category.to_string(),
        total: per_target.values().sum(),
        per_target,
        per_dataset,
        pending: pending_for(overview, mapping, &names),
    })
}

fn render_pending(out: &mut String, pending: &[PendingDataset]) {
    for p in pending {
        out.push_str(&format!("  {}: pending ({})\n", p.dataset_id, p.access));
        if !p.notes.is_empty() {
            out.push_str(&format!("    {}\n", p.notes));
        }
    }
}

impl TargetInfo {
    pub fn render_text(&self) -> String {
        let mut out = format!(
            "target: {} (category: {})\ntotal instances: {}\n",
            self.target, self.category, self.total
        );
        for (d, n) in &self.per_dataset {
            out.push_str(&format!("  {d}: {n}\n"));
        }
        render_pending(&mut out, &self.pending);
        out
    }
}

impl CategoryInfo {
    pub fn render_text(&self) -> String {
        let mut out = format!("category: {}\ntotal instances: {}\nper target:\n", self.category, self.total);
        for (t, n) in &self.per_target {
            out.push_str(&format!("  {t}: {n}\n"));
        }
        out.push_str("per dataset:\n");
        for (d, n) in &self.per_dataset {
            out.push_str(&format!("  {d}: {n}\n"));
        }
        render_pending(&mut out, &self.pending);
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BalancedSample {
    pub seed: u64,
    pub per_target_n: usize,
    pub targets: Vec<String>,
    pub instances: Vec<UnifiedInstance>,
}

impl BalancedSample {
    pub fn instance_ids(&self) -> Vec<String> {
        self.instances.iter().map(|i| i.id.clone()).collect()
    }
}

/// Draws `per_target_n` instances per target, uniformly without replacement.
///
/// Candidates for each target are the distinct instances of that target
/// sorted by id, so the draw does not depend on corpus order. One
/// [`SplitMix64`] stream seeded with `seed` is consumed target by target in
/// the given order, each draw being a partial Fisher-Yates shuffle. Output is
/// grouped by target in request order, each group in draw order.
///
/// With `take_all`, a target with fewer than `per_target_n` instances
/// contributes all of them (shuffled) instead of failing.
pub fn sample_balanced(
    corpus: &[UnifiedInstance],
    targets: &[String],
    per_target_n: usize,
    seed: u64,
    take_all: bool,
) -> Result<BalancedSample, AssemblyError> {
    if per_target_n == 0 {
        return Err(AssemblyError::ZeroSampleSize);
    }
    let mut seen_targets = HashSet::new();
    for t in targets {
        if !seen_targets.insert(t.as_str()) {
            return Err(AssemblyError::DuplicateTarget(t.clone()));
        }
    }
    let mut by_target: IndexMap<&str, BTreeMap<&str, &UnifiedInstance>> =
        targets.iter().map(|t| (t.as_str(), BTreeMap::new())).collect();
    for inst in corpus {
        if let Some(group) = by_target.get_mut(inst.target.as_str()) {
            group.entry(inst.id.as_str()).or_insert(inst);
        }
    }
    // Check every target before drawing anything.
    for (target, group) in &by_target {
        if group.len() < per_target_n && !take_all {
            return Err(AssemblyError::Insufficient {
                target: target.to_string(),
                available: group.len(),
                requested: per_target_n,
            });
        }
    }
    let mut rng = SplitMix64::new(seed);
    let mut instances = Vec::with_capacity(per_target_n * targets.len());
    for group in by_target.values() {
        let mut candidates: Vec<&UnifiedInstance> = group.values().copied().collect();
        let k = per_target_n.min(candidates.len());
        rng.partial_shuffle(&mut candidates, k);
        instances.extend(candidates[..k].iter().map(|i| (*i).clone()));
    }
    Ok(BalancedSample {
        seed,
        per_target_n,
        targets: targets.to_vec(),
        instances,
    })
}

/// Audit record of a sample: how it was drawn and which instances it holds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleManifest {
    pub seed: u64,
    pub per_target_n: usize,
    pub take_all: bool,
    pub targets: Vec<String>,
    pub config: ConfigNames,
    /// JSONL file with the sampled instances, relative to the manifest.
    pub instances_file: PathBuf,
    pub instance_ids: Vec<String>,
}

impl SampleManifest {
    pub fn new(sample: &BalancedSample, take_all: bool, config: ConfigNames, instances_file: PathBuf) -> Self {
        Self {
            seed: sample.seed,
            per_target_n: sample.per_target_n,
            take_all,
            targets: sample.targets.clone(),
            config,
            instances_file,
            instance_ids: sample.instance_ids(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), AssemblyError> {
        let json = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(path, json + "\n").map_err(|source| AssemblyError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, AssemblyError> {
        let text = std::fs::read_to_string(path).map_err(|source| AssemblyError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|e| AssemblyError::Manifest {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    /// Loads the sampled instances and checks them against `instance_ids`.
    pub fn load_instances(&self, manifest_path: &Path) -> Result<Vec<UnifiedInstance>, AssemblyError> {
        let base = manifest_path.parent().unwrap_or(Path::new("."));
        let path = if self.instances_file.is_absolute() {
            self.instances_file.clone()
        } else {
            base.join(&self.instances_file)
        };
        let file = std::fs::File::open(&path).map_err(|source| AssemblyError::Io {
            path: path.clone(),
            source,
        })?;
        let instances = crate::ingest::read_jsonl(file).map_err(|e| AssemblyError::Manifest {
            path: path.clone(),
            message: e.to_string(),
        })?;
        let ids: Vec<&str> = instances.iter().map(|i| i.id.as_str()).collect();
        if ids != self.instance_ids.iter().map(String::as_str).collect::<Vec<_>>() {
            return Err(AssemblyError::Manifest {
                path: manifest_path.to_path_buf(),
                message: format!("instance ids in {} do not match the manifest", path.display()),
            });
        }
        Ok(instances)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corpus(targets: &[(&str, usize)]) -> Vec<UnifiedInstance> {
        targets
            .iter()
            .flat_map(|(t, n)| (0..*n).map(move |i| UnifiedInstance::new(format!("{t} #{i}"), *t, "fixture")))
            .collect()
    }

    fn names(ts: &[&str]) -> Vec<String> {
        ts.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn ten_targets_times_n() {
        let ts = [
            "blacks", "muslims", "lgbtq_unspecified", "jews", "asians", "latin", "women", "christians", "men",
            "whites",
        ];
        let c = corpus(&ts.iter().map(|t| (*t, 300)).collect::<Vec<_>>());
        let s = sample_balanced(&c, &names(&ts), 250, 0, false).unwrap();
        assert_eq!(s.instances.len(), 2500);
        for (i, t) in ts.iter().enumerate() {
            assert!(s.instances[i * 250..(i + 1) * 250].iter().all(|x| x.target == *t));
        }
    }

    #[test]
    fn same_seed_same_ids() {
        let c = corpus(&[("jews", 50), ("blacks", 50)]);
        let t = names(&["jews", "blacks"]);
        let a = sample_balanced(&c, &t, 10, 42, false).unwrap();
        let b = sample_balanced(&c, &t, 10, 42, false).unwrap();
        assert_eq!(a.instance_ids(), b.instance_ids());
        let other = sample_balanced(&c, &t, 10, 43, false).unwrap();
        assert_ne!(a.instance_ids(), other.instance_ids());
    }

    #[test]
    fn corpus_order_does_not_matter() {
        let c = corpus(&[("jews", 30)]);
        let mut rev = c.clone();
        rev.reverse();
        let t = names(&["jews"]);
        assert_eq!(
            sample_balanced(&c, &t, 5, 9, false).unwrap(),
            sample_balanced(&rev, &t, 5, 9, false).unwrap()
        );
    }

    #[test]
    fn exhaustive_draw_is_a_permutation() {
        let c = corpus(&[("jews", 20)]);
        let s = sample_balanced(&c, &names(&["jews"]), 20, 3, false).unwrap();
        let mut got = s.instance_ids();
        let mut all: Vec<String> = c.iter().map(|i| i.id.clone()).collect();
        let sorted_all = {
            all.sort();
            all
        };
        assert_ne!(got, sorted_all, "draw should be shuffled");
        got.sort();
        assert_eq!(got, sorted_all);
    }

    #[test]
    fn insufficient_names_target_and_shortfall() {
        let c = corpus(&[("jews", 3)]);
        let err = sample_balanced(&c, &names(&["jews"]), 5, 0, false).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("jews") && msg.contains("short by 2"), "{msg}");
        let s = sample_balanced(&c, &names(&["jews"]), 5, 0, true).unwrap();
        assert_eq!(s.instances.len(), 3);
    }

    #[test]
    fn rejects_zero_and_duplicates() {
        let c = corpus(&[("jews", 3)]);
        assert!(matches!(
            sample_balanced(&c, &names(&["jews"]), 0, 0, false),
            Err(AssemblyError::ZeroSampleSize)
        ));
        assert!(matches!(
            sample_balanced(&c, &names(&["jews", "jews"]), 1, 0, false),
            Err(AssemblyError::DuplicateTarget(_))
        ));
    }

    #[test]
    fn selection_frequency_is_uniform() {
        let c = corpus(&[("jews", 10)]);
        let t = names(&["jews"]);
        let mut hits: BTreeMap<String, usize> = BTreeMap::new();
        for seed in 0..1000 {
            let s = sample_balanced(&c, &t, 1, seed, false).unwrap();
            *hits.entry(s.instances[0].id.clone()).or_default() += 1;
        }
        assert_eq!(hits.len(), 10);
        for (_, n) in hits {
            let f = n as f64 / 1000.0;
            assert!((f - 0.1).abs() <= 0.03, "frequency {f}");
        }
    }
}
