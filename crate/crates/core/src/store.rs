//! The resources directory: named taxonomies, mappings, overviews and dataset
//! descriptors stored as human-editable JSON.
//!
//! ```text
//! <root>/
//!   taxonomies/<name>.json
//!   mappings/<name>.json
//!   overviews/<name>.json
//!   datasets/<dataset_id>.json
//!   raw/                      manually downloaded source files
//! ```
//!
//! Stored documents are immutable once written, except overviews which are
//! recomputed in place by [`ResourceStore::update_overview`]. Writers must be
//! serialized externally; concurrent readers are fine.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use rayon::prelude::*;
use thiserror::Error;

use crate::assembly::{self, Assembled, AssemblyError, CategoryInfo, ConfigNames, TargetInfo};
use crate::catalog::{build_overview, CatalogError, Overview, PendingDataset};
use crate::ingest::{self, DatasetDescriptor, IngestError, IngestReport, UnifiedInstance};
use crate::mapping::{DatasetSelection, KeywordTable, MappingError, MappingTable};
use crate::taxonomy::{self, CategorySelection, Taxonomy, TaxonomyError, TargetMove};

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("resources directory {0} does not exist; run `unitarget init` to create it")]
    MissingRoot(PathBuf),
    #[error("no {kind} named `{name}`; available: {available}")]
    NotFound {
        kind: &'static str,
        name: String,
        available: String,
    },
    #[error("a {kind} named `{name}` already exists")]
    NameTaken { kind: &'static str, name: String },
    #[error("invalid name `{0}`: use letters, digits, `_`, `-` and `.`")]
    InvalidName(String),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot parse {path}: {source}")]
    Parse {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error(transparent)]
    Taxonomy(#[from] TaxonomyError),
    #[error(transparent)]
    Mapping(#[from] MappingError),
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Assembly(#[from] AssemblyError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Taxonomy,
    Mapping,
    Overview,
    Dataset,
}

impl Kind {
    fn dir(self) -> &'static str {
        match self {
            Kind::Taxonomy => "taxonomies",
            Kind::Mapping => "mappings",
            Kind::Overview => "overviews",
            Kind::Dataset => "datasets",
        }
    }

    fn label(self) -> &'static str {
        match self {
            Kind::Taxonomy => "taxonomy",
            Kind::Mapping => "mapping",
            Kind::Overview => "overview",
            Kind::Dataset => "dataset",
        }
    }
}

fn valid_name(name: &str) -> bool {
    !name.is_empty()
        && !name.starts_with('.')
        && name
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'))
}

/// Every dataset's harmonized instances under one configuration.
#[derive(Debug, Default)]
pub struct Ingested {
    pub corpora: BTreeMap<String, Vec<UnifiedInstance>>,
    pub reports: Vec<IngestReport>,
    pub pending: Vec<PendingDataset>,
}

#[derive(Debug, Clone)]
pub struct ResourceStore {
    root: PathBuf,
}

impl ResourceStore {
    /// Opens an existing resources directory.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        if !root.is_dir() {
            return Err(StoreError::MissingRoot(root));
        }
        Ok(Self { root })
    }

    /// Creates the directory layout without seeding any documents.
    pub fn create_empty(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        for kind in [Kind::Taxonomy, Kind::Mapping, Kind::Overview, Kind::Dataset] {
            let dir = root.join(kind.dir());
            std::fs::create_dir_all(&dir).map_err(|source| StoreError::Io { path: dir, source })?;
        }
        let raw = root.join("raw");
        std::fs::create_dir_all(&raw).map_err(|source| StoreError::Io { path: raw, source })?;
        Ok(Self { root })
    }

    /// Creates the layout and writes the shipped default taxonomy, mapping
    /// and dataset descriptors, leaving existing files untouched.
    pub fn init(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let store = Self::create_empty(root)?;
        let tax = Taxonomy::builtin_default();
        if !store.exists(Kind::Taxonomy, &tax.name) {
            store.write(Kind::Taxonomy, &tax.name, &tax.to_json())?;
        }
        let map = MappingTable::builtin_default();
        if !store.exists(Kind::Mapping, &map.name) {
            store.write(Kind::Mapping, &map.name, &map.to_json())?;
        }
        for d in DatasetDescriptor::builtin_defaults() {
            if !store.exists(Kind::Dataset, &d.dataset_id) {
                store.put_descriptor(&d)?;
            }
        }
        Ok(store)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn path(&self, kind: Kind, name: &str) -> PathBuf {
        self.root.join(kind.dir()).join(format!("{name}.json"))
    }

    fn exists(&self, kind: Kind, name: &str) -> bool {
        self.path(kind, name).is_file()
    }

    fn list(&self, kind: Kind) -> Vec<String> {
        let Ok(entries) = std::fs::read_dir(self.root.join(kind.dir())) else {
            return Vec::new();
        };
        let mut names: Vec<String> = entries
            .filter_map(Result::ok)
            .filter_map(|e| {
                let p = e.path();
                (p.extension()? == "json").then(|| p.file_stem()?.to_str().map(str::to_string))?
            })
            .collect();
        names.sort();
        names
    }

    pub fn taxonomy_names(&self) -> Vec<String> {
        self.list(Kind::Taxonomy)
    }

    pub fn mapping_names(&self) -> Vec<String> {
        self.list(Kind::Mapping)
    }

    pub fn overview_names(&self) -> Vec<String> {
        self.list(Kind::Overview)
    }

    fn read<T: serde::de::DeserializeOwned>(&self, kind: Kind, name: &str) -> Result<T, StoreError> {
        let path = self.path(kind, name);
        let text = match std::fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(StoreError::NotFound {
                    kind: kind.label(),
                    name: name.to_string(),
                    available: match self.list(kind) {
                        names if names.is_empty() => "none".to_string(),
                        names => names.join(", "),
                    },
                })
            }
            Err(source) => return Err(StoreError::Io { path, source }),
        };
        serde_json::from_str(&text).map_err(|source| StoreError::Parse { path, source })
    }

    fn write(&self, kind: Kind, name: &str, json: &str) -> Result<(), StoreError> {
        if !valid_name(name) {
            return Err(StoreError::InvalidName(name.to_string()));
        }
        let path = self.path(kind, name);
        let tmp = path.with_extension("json.tmp");
        let io = |source| StoreError::Io {
            path: path.clone(),
            source,
        };
        std::fs::write(&tmp, format!("{json}\n")).map_err(io)?;
        std::fs::rename(&tmp, &path).map_err(io)
    }

    fn ensure_unused(&self, kind: Kind, name: &str) -> Result<(), StoreError> {
        if !valid_name(name) {
            return Err(StoreError::InvalidName(name.to_string()));
        }
        if self.exists(kind, name) {
            return Err(StoreError::NameTaken {
                kind: kind.label(),
                name: name.to_string(),
            });
        }
        Ok(())
    }

    pub fn taxonomy(&self, name: &str) -> Result<Taxonomy, StoreError> {
        let t: Taxonomy = self.read(Kind::Taxonomy, name)?;
        t.ensure_valid()?;
        Ok(t)
    }

    /// Stores a new taxonomy. Invalid taxonomies and taken names are refused.
    pub fn save_taxonomy(&self, taxonomy: &Taxonomy) -> Result<(), StoreError> {
        self.ensure_unused(Kind::Taxonomy, &taxonomy.name)?;
        taxonomy.ensure_valid()?;
        self.write(Kind::Taxonomy, &taxonomy.name, &taxonomy.to_json())
    }

    pub fn mapping(&self, name: &str) -> Result<MappingTable, StoreError> {
        self.read(Kind::Mapping, name)
    }

    /// Stores a new mapping after checking it against its companion taxonomy.
    pub fn save_mapping(&self, mapping: &MappingTable) -> Result<(), StoreError> {
        self.ensure_unused(Kind::Mapping, &mapping.name)?;
        let taxonomy = self.taxonomy(&mapping.taxonomy)?;
        mapping.check_against(&taxonomy)?;
        self.write(Kind::Mapping, &mapping.name, &mapping.to_json())
    }

    pub fn overview(&self, name: &str) -> Result<Overview, StoreError> {
        self.read(Kind::Overview, name)
    }

    /// Writes (or replaces) an overview.
    pub fn put_overview(&self, overview: &Overview) -> Result<(), StoreError> {
        self.write(Kind::Overview, &overview.name, &overview.to_json())
    }

    /// Registered datasets, sorted by id.
    pub fn descriptors(&self) -> Result<Vec<DatasetDescriptor>, StoreError> {
        self.list(Kind::Dataset)
            .iter()
            .map(|id| self.read(Kind::Dataset, id))
            .collect()
    }

    pub fn descriptor(&self, dataset_id: &str) -> Result<DatasetDescriptor, StoreError> {
        self.read(Kind::Dataset, dataset_id)
    }

    pub fn put_descriptor(&self, descriptor: &DatasetDescriptor) -> Result<(), StoreError> {
        descriptor.validate()?;
        let json = serde_json::to_string_pretty(descriptor).expect("descriptor serializes");
        self.write(Kind::Dataset, &descriptor.dataset_id, &json)
    }

    // Taxonomy operations.

    pub fn show_taxonomy(
        &self,
        name: &str,
        selection: &CategorySelection,
        latex_out: Option<&Path>,
    ) -> Result<String, StoreError> {
        let t = self.taxonomy(name)?;
        let text = t.render_text(selection)?;
        if let Some(path) = latex_out {
            write_file(path, &t.render_latex(selection)?)?;
        }
        Ok(text)
    }

    pub fn update_taxonomy(&self, base: &str, changes: &[TargetMove], new_name: &str) -> Result<Taxonomy, StoreError> {
        self.ensure_unused(Kind::Taxonomy, new_name)?;
        let next = self.taxonomy(base)?.with_moves(changes, new_name)?;
        self.save_taxonomy(&next)?;
        Ok(next)
    }

    /// Adds a target to a copy of `taxonomy_base` and routes keywords to it
    /// in a copy of `mapping_base`.
    #[allow(clippy::too_many_arguments)]
    pub fn add_target(
        &self,
        taxonomy_base: &str,
        mapping_base: &str,
        target: &str,
        category: &str,
        keywords: &[(String, String)],
        taxonomy_out: &str,
        mapping_out: &str,
    ) -> Result<(Taxonomy, MappingTable), StoreError> {
        self.ensure_unused(Kind::Taxonomy, taxonomy_out)?;
        self.ensure_unused(Kind::Mapping, mapping_out)?;
        let tax = self.taxonomy(taxonomy_base)?;
        let map = self.mapping(mapping_base)?;
        let (tax_next, map_next) =
            taxonomy::add_target(&tax, &map, target, category, keywords, taxonomy_out, mapping_out)?;
        self.save_taxonomy(&tax_next)?;
        self.save_mapping(&map_next)?;
        Ok((tax_next, map_next))
    }

    // Mapping operations.

    pub fn show_mapping(
        &self,
        name: &str,
        selection: &DatasetSelection,
        latex_out: Option<&Path>,
    ) -> Result<String, StoreError> {
        let m = self.mapping(name)?;
        let text = m.render_text(selection)?;
        if let Some(path) = latex_out {
            write_file(path, &m.render_latex(selection)?)?;
        }
        Ok(text)
    }

    pub fn update_mapping_specific(
        &self,
        base: &str,
        changes: &IndexMap<String, KeywordTable>,
        new_name: &str,
    ) -> Result<MappingTable, StoreError> {
        self.ensure_unused(Kind::Mapping, new_name)?;
        let m = self.mapping(base)?;
        let t = self.taxonomy(&m.taxonomy)?;
        let next = m.with_specific(changes, &t, new_name)?;
        self.save_mapping(&next)?;
        Ok(next)
    }

    pub fn update_mapping_all(
        &self,
        base: &str,
        changes: &KeywordTable,
        new_name: &str,
    ) -> Result<MappingTable, StoreError> {
        self.ensure_unused(Kind::Mapping, new_name)?;
        let m = self.mapping(base)?;
        let t = self.taxonomy(&m.taxonomy)?;
        let next = m.with_all(changes, &t, new_name)?;
        self.save_mapping(&next)?;
        Ok(next)
    }

    // Ingestion and overview.

    /// Loads the mapping and taxonomy and checks they belong together.
    pub fn config_pair(&self, mapping: &str, taxonomy: &str) -> Result<(MappingTable, Taxonomy), StoreError> {
        let m = self.mapping(mapping)?;
        let t = self.taxonomy(taxonomy)?;
        m.check_against(&t)?;
        Ok((m, t))
    }

    /// Harmonizes every registered dataset in parallel. Unavailable datasets
    /// become pending entries; any other failure is returned.
    pub fn ingest_all(
        &self,
        mapping: &MappingTable,
        taxonomy: &Taxonomy,
        token: Option<&str>,
    ) -> Result<Ingested, StoreError> {
        let descriptors = self.descriptors()?;
        let results: Vec<_> = descriptors
            .par_iter()
            .map(|d| (d, ingest::ingest_dataset(d, &self.root, mapping, taxonomy, token)))
            .collect();
        let mut out = Ingested::default();
        for (d, result) in results {
            match result {
                Ok((instances, report)) => {
                    out.corpora.insert(d.dataset_id.clone(), instances);
                    out.reports.push(report);
                }
                Err(IngestError::Unavailable { reason, .. }) => {
                    log::info!("{} pending: {reason}", d.dataset_id);
                    out.pending.push(PendingDataset::new(d, reason));
                }
                Err(e) => return Err(e.into()),
            }
        }
        Ok(out)
    }

    /// Re-ingests every dataset under `(mapping, taxonomy)` and stores the
    /// recomputed overview under `overview_name`.
    pub fn update_overview(
        &self,
        overview_name: &str,
        mapping_name: &str,
        taxonomy_name: &str,
        token: Option<&str>,
    ) -> Result<(Overview, Vec<IngestReport>), StoreError> {
        if !valid_name(overview_name) {
            return Err(StoreError::InvalidName(overview_name.to_string()));
        }
        let (m, t) = self.config_pair(mapping_name, taxonomy_name)?;
        let ingested = self.ingest_all(&m, &t, token)?;
        let mut overview = build_overview(
            overview_name,
            ingested.corpora.iter().map(|(d, c)| (d.as_str(), c.as_slice())),
            &t,
        )?;
        overview.mapping = Some(m.name.clone());
        for p in ingested.pending {
            overview.add_pending(p);
        }
        self.put_overview(&overview)?;
        Ok((overview, ingested.reports))
    }

    pub fn show_overview(
        &self,
        overview_name: &str,
        taxonomy_name: &str,
        json_out: Option<&Path>,
        latex_out: Option<&Path>,
    ) -> Result<(Overview, String), StoreError> {
        let o = self.overview(overview_name)?;
        let t = self.taxonomy(taxonomy_name)?;
        o.ensure_taxonomy(&t)?;
        if let Some(path) = json_out {
            write_file(path, &(o.to_json() + "\n"))?;
        }
        if let Some(path) = latex_out {
            write_file(path, &o.render_latex())?;
        }
        let text = o.render_text();
        Ok((o, text))
    }

    // Dataset assembly.

    /// All reachable instances of the given targets, across datasets.
    pub fn create_targets_dataset(
        &self,
        targets: &[&str],
        config: &ConfigNames,
        token: Option<&str>,
    ) -> Result<Assembled, StoreError> {
        let (m, t) = self.config_pair(&config.mapping, &config.taxonomy)?;
        for target in targets {
            t.target(target)?;
        }
        let ingested = self.ingest_all(&m, &t, token)?;
        let instances = assembly::select_targets(ingested.corpora.values().map(Vec::as_slice), targets);
        let relevant = |p: &PendingDataset| {
            m.datasets.get(&p.dataset_id).is_some_and(|table| {
                table
                    .values()
                    .any(|ts| ts.iter().any(|x| targets.contains(&x.as_str())))
            })
        };
        let pending: Vec<PendingDataset> = ingested.pending.into_iter().filter(relevant).collect();
        let mut warnings = Vec::new();
        if instances.is_empty() {
            warnings.push(format!("no reachable dataset contains {}", targets.join(", ")));
        }
        for p in &pending {
            warnings.push(format!("dataset {} is not available ({})", p.dataset_id, p.reason));
        }
        Ok(Assembled {
            instances,
            pending,
            warnings,
        })
    }

    /// All reachable instances of one target, across datasets.
    pub fn create_target_dataset(
        &self,
        target: &str,
        config: &ConfigNames,
        token: Option<&str>,
    ) -> Result<Assembled, StoreError> {
        self.create_targets_dataset(&[target], config, token)
    }

    /// All reachable instances of every target in `category`.
    pub fn create_category_dataset(
        &self,
        category: &str,
        config: &ConfigNames,
        token: Option<&str>,
    ) -> Result<Assembled, StoreError> {
        let t = self.taxonomy(&config.taxonomy)?;
        let targets: Vec<&str> = t.category(category)?.iter().map(String::as_str).collect();
        self.create_targets_dataset(&targets, config, token)
    }

    fn info_inputs(&self, config: &ConfigNames) -> Result<(Overview, Taxonomy, MappingTable), StoreError> {
        let o = self.overview(&config.overview)?;
        let (m, t) = self.config_pair(&config.mapping, &config.taxonomy)?;
        o.ensure_taxonomy(&t)?;
        Ok((o, t, m))
    }

    pub fn target_info(&self, target: &str, config: &ConfigNames) -> Result<TargetInfo, StoreError> {
        let (o, t, m) = self.info_inputs(config)?;
        Ok(assembly::target_info(&o, &t, &m, target)?)
    }

    pub fn category_info(&self, category: &str, config: &ConfigNames) -> Result<CategoryInfo, StoreError> {
        let (o, t, m) = self.info_inputs(config)?;
        Ok(assembly::category_info(&o, &t, &m, category)?)
    }
}

fn write_file(path: &Path, contents: &str) -> Result<(), StoreError> {
    std::fs::write(path, contents).map_err(|source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_seeds_defaults_once() {
        let dir = tempfile::tempdir().unwrap();
        let store = ResourceStore::init(dir.path()).unwrap();
        assert_eq!(store.taxonomy_names(), vec!["default"]);
        assert_eq!(store.mapping_names(), vec!["default"]);
        assert_eq!(store.descriptors().unwrap().len(), 10);
        ResourceStore::init(dir.path()).unwrap();
        assert_eq!(store.taxonomy("default").unwrap(), Taxonomy::builtin_default());
    }

    #[test]
    fn open_missing_root_hints_init() {
        let err = ResourceStore::open("/definitely/not/here").unwrap_err();
        assert!(err.to_string().contains("unitarget init"));
    }

    #[test]
    fn name_collision_and_invalid_names() {
        let dir = tempfile::tempdir().unwrap();
        let store = ResourceStore::init(dir.path()).unwrap();
        store.update_taxonomy("default", &[], "copy").unwrap();
        assert!(matches!(
            store.update_taxonomy("default", &[], "copy"),
            Err(StoreError::NameTaken { .. })
        ));
        assert!(matches!(
            store.update_taxonomy("default", &[], "../escape"),
            Err(StoreError::InvalidName(_))
        ));
    }

    #[test]
    fn invalid_taxonomy_refused_at_store_time() {
        let dir = tempfile::tempdir().unwrap();
        let store = ResourceStore::init(dir.path()).unwrap();
        let mut t = Taxonomy::builtin_default();
        t.name = "broken".into();
        t.categories.get_mut("race").unwrap().push("jews".into());
        assert!(matches!(store.save_taxonomy(&t), Err(StoreError::Taxonomy(_))));
        assert!(!store.taxonomy_names().contains(&"broken".to_string()));
    }

    #[test]
    fn mapping_with_dangling_target_refused() {
        let dir = tempfile::tempdir().unwrap();
        let store = ResourceStore::init(dir.path()).unwrap();
        let mut m = MappingTable::builtin_default();
        m.name = "dangling".into();
        m.datasets["jigsaw2019"].insert("x".into(), vec!["martians".into()]);
        assert!(matches!(store.save_mapping(&m), Err(StoreError::Mapping(_))));
    }

    #[test]
    fn unknown_names_list_alternatives() {
        let dir = tempfile::tempdir().unwrap();
        let store = ResourceStore::init(dir.path()).unwrap();
        let err = store.taxonomy("nope").unwrap_err().to_string();
        assert!(err.contains("default"), "{err}");
        assert!(store.overview("nope").is_err());
    }

    #[test]
    fn all_unreachable_gives_zero_overview() {
        let dir = tempfile::tempdir().unwrap();
        let store = ResourceStore::init(dir.path()).unwrap();
        let (o, _) = store.update_overview("default", "default", "default", None).unwrap();
        assert_eq!(o.pending.len(), 10);
        assert_eq!(o.total_size(), 0);
        assert_eq!(o.datasets.len(), 10);
        let pending = &o.pending[0];
        assert!(!pending.notes.is_empty());
    }
}
