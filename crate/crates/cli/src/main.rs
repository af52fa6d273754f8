use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use indexmap::IndexMap;
use unitarget_core::assembly::{self, Assembled, ConfigNames, SampleManifest};
use unitarget_core::experiment::ExperimentConfig;
use unitarget_core::ingest::{self, IngestReport};
use unitarget_core::mapping::{DatasetSelection, KeywordTable};
use unitarget_core::stats::{self, Averaging, InvalidPolicy, ReportFormat};
use unitarget_core::taxonomy::{CategorySelection, TargetMove};
use unitarget_core::ResourceStore;
use unitarget_eval::records::{read_all, RecordStore};
use unitarget_eval::runner::{load_sample, results_for};
use unitarget_eval::{run_experiment, MockConfig, MockServer, RunOptions};

mod config;
mod doctor;

use config::CliConfig;

/// Unified target-group taxonomy for hate speech corpora, plus persona
/// detection experiments on top of it.
#[derive(Debug, Parser)]
#[command(name = "unitarget", version)]
struct Cli {
    /// Resources directory holding taxonomies, mappings, overviews and datasets.
    #[arg(long, global = true, env = "UNITARGET_RESOURCES", default_value = "resources")]
    resources: PathBuf,
    /// Taxonomy name (default from `<resources>/config.json`).
    #[arg(long, global = true)]
    taxonomy: Option<String>,
    /// Mapping name (default from `<resources>/config.json`).
    #[arg(long, global = true)]
    mapping: Option<String>,
    /// Overview name (default from `<resources>/config.json`).
    #[arg(long, global = true)]
    overview: Option<String>,
    /// Environment variable holding the dataset access token.
    #[arg(long, global = true)]
    token_env: Option<String>,
    /// More log output; repeat for debug.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Create the resources directory with the bundled defaults.
    Init,
    #[command(subcommand)]
    Taxonomy(TaxonomyCmd),
    #[command(subcommand)]
    Mapping(MappingCmd),
    #[command(subcommand)]
    Overview(OverviewCmd),
    /// Write all reachable instances of a target or category.
    #[command(subcommand)]
    Dataset(DatasetCmd),
    /// Instance counts of a target or category.
    #[command(subcommand)]
    Info(InfoCmd),
    /// Draw a balanced seeded sample and write its manifest.
    Sample(SampleArgs),
    #[command(subcommand)]
    Experiment(ExperimentCmd),
    #[command(subcommand)]
    Stats(StatsCmd),
    /// Check resources, datasets and the chat endpoint.
    Doctor {
        /// Chat endpoint to health-check, e.g. http://localhost:8000/v1.
        #[arg(long)]
        endpoint: Option<String>,
    },
    /// Serve a deterministic chat endpoint for testing.
    MockServer {
        #[arg(long, default_value_t = 8089)]
        port: u16,
        /// JSON mock configuration (verdict rules, faults, delay).
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
enum TaxonomyCmd {
    /// Print categories and targets.
    Show {
        /// `all` or comma separated category names.
        #[arg(long, default_value = "all")]
        categories: String,
        /// Also write a LaTeX table here.
        #[arg(long)]
        latex: Option<PathBuf>,
    },
    /// Save a copy with targets moved between categories.
    Update {
        /// JSON array of `{"target", "from", "to"}` moves.
        #[arg(long)]
        changes: PathBuf,
        #[arg(long)]
        new_name: String,
    },
    /// Add a target and route dataset keywords to it.
    AddTarget {
        #[arg(long)]
        target: String,
        #[arg(long)]
        category: String,
        /// `dataset:keyword` pairs routed to the new target.
        #[arg(long = "keyword", value_parser = parse_dataset_keyword)]
        keywords: Vec<(String, String)>,
        #[arg(long)]
        new_taxonomy: String,
        #[arg(long)]
        new_mapping: String,
    },
    /// Report structural problems of a taxonomy.
    Validate,
}

#[derive(Debug, Subcommand)]
enum MappingCmd {
    /// Print keyword translations.
    Show {
        /// `all` or comma separated dataset ids.
        #[arg(long, default_value = "all")]
        datasets: String,
        #[arg(long)]
        latex: Option<PathBuf>,
    },
    /// Save a copy with per-dataset keyword changes.
    UpdateSpecific {
        /// JSON object `{dataset: {keyword: [targets]}}`.
        #[arg(long)]
        changes: PathBuf,
        #[arg(long)]
        new_name: String,
    },
    /// Save a copy with keyword changes applied to every dataset using them.
    UpdateAll {
        /// JSON object `{keyword: [targets]}`.
        #[arg(long)]
        changes: PathBuf,
        #[arg(long)]
        new_name: String,
    },
}

#[derive(Debug, Subcommand)]
enum OverviewCmd {
    /// Print a stored overview.
    Show {
        #[arg(long)]
        json: Option<PathBuf>,
        #[arg(long)]
        latex: Option<PathBuf>,
    },
    /// Re-ingest every dataset and store the recomputed overview.
    Update,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum DataFormat {
    Jsonl,
    Csv,
}

#[derive(Debug, Args)]
struct DatasetOut {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = DataFormat::Jsonl)]
    format: DataFormat,
}

#[derive(Debug, Subcommand)]
enum DatasetCmd {
    Target {
        #[arg(long)]
        target: String,
        #[command(flatten)]
        out: DatasetOut,
    },
    Category {
        #[arg(long)]
        category: String,
        #[command(flatten)]
        out: DatasetOut,
    },
}

#[derive(Debug, Subcommand)]
enum InfoCmd {
    Target {
        #[arg(long)]
        target: String,
    },
    Category {
        #[arg(long)]
        category: String,
    },
}

#[derive(Debug, Args)]
struct SampleArgs {
    /// Comma separated targets, sampled in this order.
    #[arg(long, value_delimiter = ',', required_unless_present = "category", conflicts_with = "category")]
    targets: Vec<String>,
    /// Sample every target of this category.
    #[arg(long)]
    category: Option<String>,
    #[arg(long)]
    per_target: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Keep targets with fewer instances than requested instead of failing.
    #[arg(long)]
    take_all: bool,
    /// JSONL file for the sampled instances.
    #[arg(long)]
    out: PathBuf,
    /// Manifest path; defaults to `<out stem>.manifest.json`.
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum ExperimentCmd {
    /// Classify every missing (persona, instance) pair. Resumable.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Stop after this many new pairs.
        #[arg(long)]
        max_pairs: Option<usize>,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum OutFormat {
    Table,
    Latex,
    Json,
}

#[derive(Debug, Subcommand)]
enum StatsCmd {
    /// Rates, odds ratios and adjusted significance per target and model.
    Report {
        /// Experiment config; repeat to compare models.
        #[arg(long = "config", required = true)]
        configs: Vec<PathBuf>,
        #[arg(long, value_enum, default_value_t = OutFormat::Table)]
        format: OutFormat,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Average per-persona rates instead of pooling records.
        #[arg(long = "macro")]
        macro_average: bool,
        /// Count invalid records as not flagged instead of excluding them.
        #[arg(long)]
        count_invalid: bool,
    },
}

fn parse_dataset_keyword(s: &str) -> Result<(String, String), String> {
    match s.split_once(':') {
        Some((d, k)) if !d.is_empty() && !k.is_empty() => Ok((d.to_string(), k.to_string())),
        _ => Err(format!("expected dataset:keyword, got `{s}`")),
    }
}

struct Ctx {
    resources: PathBuf,
    config: CliConfig,
    names: ConfigNames,
}

impl Ctx {
    fn new(cli: &Cli) -> anyhow::Result<Self> {
        let mut config = CliConfig::load(&cli.resources)?;
        if let Some(v) = &cli.token_env {
            config.token_env = v.clone();
        }
        let names = ConfigNames {
            taxonomy: cli.taxonomy.clone().unwrap_or_else(|| config.taxonomy.clone()),
            mapping: cli.mapping.clone().unwrap_or_else(|| config.mapping.clone()),
            overview: cli.overview.clone().unwrap_or_else(|| config.overview.clone()),
        };
        Ok(Self {
            resources: cli.resources.clone(),
            config,
            names,
        })
    }

    fn store(&self) -> anyhow::Result<ResourceStore> {
        Ok(ResourceStore::open(&self.resources)?)
    }

    fn token(&self) -> Option<String> {
        self.config.token()
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("cannot parse {}", path.display()))
}

fn print_warnings(assembled: &Assembled) {
    for w in &assembled.warnings {
        eprintln!("warning: {w}");
    }
}

fn print_reports(reports: &[IngestReport]) {
    for r in reports {
        eprintln!(
            "{}: {} rows, {} filtered, {} emitted, {} unmapped, {} duplicates removed",
            r.dataset_id, r.input_rows, r.filtered_out, r.emitted, r.skipped_unmapped, r.duplicates_removed
        );
        for (k, n) in &r.unmapped_keywords {
            log::info!("{}: unmapped keyword `{k}` ({n} rows)", r.dataset_id);
        }
    }
}

fn write_instances(path: &Path, format: DataFormat, instances: &[ingest::UnifiedInstance]) -> anyhow::Result<()> {
    let file = std::fs::File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    let w = std::io::BufWriter::new(file);
    match format {
        DataFormat::Jsonl => ingest::write_jsonl(instances, w)?,
        DataFormat::Csv => ingest::write_csv(instances, w)?,
    }
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let ctx = Ctx::new(&cli)?;
    let names = &ctx.names;
    match cli.command {
        Command::Init => {
            let store = ResourceStore::init(&ctx.resources)?;
            let wrote = CliConfig::default().write_if_missing(store.root())?;
            println!("resources ready at {}", store.root().display());
            if wrote {
                println!("wrote {}", store.root().join(config::CONFIG_FILE).display());
            }
        }
        Command::Taxonomy(cmd) => taxonomy(&ctx, cmd)?,
        Command::Mapping(cmd) => mapping(&ctx, cmd)?,
        Command::Overview(OverviewCmd::Show { json, latex }) => {
            let (_, text) =
                ctx.store()?
                    .show_overview(&names.overview, &names.taxonomy, json.as_deref(), latex.as_deref())?;
            print!("{text}");
        }
        Command::Overview(OverviewCmd::Update) => {
            let token = ctx.token();
            let (overview, reports) =
                ctx.store()?
                    .update_overview(&names.overview, &names.mapping, &names.taxonomy, token.as_deref())?;
            print_reports(&reports);
            print!("{}", overview.render_text());
        }
        Command::Dataset(cmd) => {
            let store = ctx.store()?;
            let token = ctx.token();
            let (assembled, out) = match cmd {
                DatasetCmd::Target { target, out } => {
                    (store.create_target_dataset(&target, names, token.as_deref())?, out)
                }
                DatasetCmd::Category { category, out } => {
                    (store.create_category_dataset(&category, names, token.as_deref())?, out)
                }
            };
            print_warnings(&assembled);
            write_instances(&out.out, out.format, &assembled.instances)?;
            println!("wrote {} instances to {}", assembled.instances.len(), out.out.display());
        }
        Command::Info(cmd) => {
            let store = ctx.store()?;
            let text = match cmd {
                InfoCmd::Target { target } => store.target_info(&target, names)?.render_text(),
                InfoCmd::Category { category } => store.category_info(&category, names)?.render_text(),
            };
            print!("{text}");
        }
        Command::Sample(args) => sample(&ctx, args)?,
        Command::Experiment(ExperimentCmd::Run { config, max_pairs }) => experiment(&config, max_pairs)?,
        Command::Stats(StatsCmd::Report {
            configs,
            format,
            out,
            macro_average,
            count_invalid,
        }) => {
            let averaging = if macro_average { Averaging::Macro } else { Averaging::Micro };
            let invalid = if count_invalid {
                InvalidPolicy::CountAsNotFlagged
            } else {
                InvalidPolicy::Exclude
            };
            let format = match format {
                OutFormat::Table => ReportFormat::Table,
                OutFormat::Latex => ReportFormat::Latex,
                OutFormat::Json => ReportFormat::Json,
            };
            let mut models = Vec::new();
            for path in &configs {
                let config = ExperimentConfig::load(path)?;
                let manifest = SampleManifest::load(&config.sample_manifest)?;
                let records = read_all(&config.records_path())?;
                models.push(results_for(&config, &records, &manifest.targets, averaging, invalid)?);
            }
            let report = stats::build_report(&models, format)?;
            match out {
                Some(path) => {
                    std::fs::write(&path, &report).with_context(|| format!("cannot write {}", path.display()))?;
                    println!("wrote {}", path.display());
                }
                None => print!("{report}"),
            }
        }
        Command::Doctor { endpoint } => {
            let doctor_names = doctor::Names {
                taxonomy: &names.taxonomy,
                mapping: &names.mapping,
                overview: &names.overview,
            };
            for c in doctor::run(&ctx.resources, &doctor_names, &ctx.config, endpoint.as_deref()) {
                println!("{c}");
            }
        }
        Command::MockServer { port, config } => {
            let mock: MockConfig = match config {
                Some(path) => read_json(&path)?,
                None => MockConfig::default(),
            };
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(async {
                let server = MockServer::start(mock, ([127, 0, 0, 1], port).into()).await?;
                println!("mock endpoint at {}", server.base_url());
                tokio::signal::ctrl_c().await?;
                server.stop().await;
                anyhow::Ok(())
            })?;
        }
    }
    Ok(())
}

fn taxonomy(ctx: &Ctx, cmd: TaxonomyCmd) -> anyhow::Result<()> {
    let store = ctx.store()?;
    let names = &ctx.names;
    match cmd {
        TaxonomyCmd::Show { categories, latex } => {
            let selection = CategorySelection::parse(&categories);
            print!("{}", store.show_taxonomy(&names.taxonomy, &selection, latex.as_deref())?);
        }
        TaxonomyCmd::Update { changes, new_name } => {
            let moves: Vec<TargetMove> = read_json(&changes)?;
            store.update_taxonomy(&names.taxonomy, &moves, &new_name)?;
            println!("saved taxonomy {new_name}");
        }
        TaxonomyCmd::AddTarget {
            target,
            category,
            keywords,
            new_taxonomy,
            new_mapping,
        } => {
            store.add_target(
                &names.taxonomy,
                &names.mapping,
                &target,
                &category,
                &keywords,
                &new_taxonomy,
                &new_mapping,
            )?;
            println!("saved taxonomy {new_taxonomy} and mapping {new_mapping}");
        }
        TaxonomyCmd::Validate => {
            let violations = store.taxonomy(&names.taxonomy)?.validate();
            if violations.is_empty() {
                println!("taxonomy {} is valid", names.taxonomy);
            } else {
                for v in &violations {
                    println!("{v}");
                }
                bail!("taxonomy {} has {} problem(s)", names.taxonomy, violations.len());
            }
        }
    }
    Ok(())
}

fn mapping(ctx: &Ctx, cmd: MappingCmd) -> anyhow::Result<()> {
    let store = ctx.store()?;
    let names = &ctx.names;
    match cmd {
        MappingCmd::Show { datasets, latex } => {
            let selection = DatasetSelection::parse(&datasets);
            print!("{}", store.show_mapping(&names.mapping, &selection, latex.as_deref())?);
        }
        MappingCmd::UpdateSpecific { changes, new_name } => {
            let changes: IndexMap<String, KeywordTable> = read_json(&changes)?;
            store.update_mapping_specific(&names.mapping, &changes, &new_name)?;
            println!("saved mapping {new_name}");
        }
        MappingCmd::UpdateAll { changes, new_name } => {
            let changes: KeywordTable = read_json(&changes)?;
            store.update_mapping_all(&names.mapping, &changes, &new_name)?;
            println!("saved mapping {new_name}");
        }
    }
    Ok(())
}

fn sample(ctx: &Ctx, args: SampleArgs) -> anyhow::Result<()> {
    let store = ctx.store()?;
    let targets: Vec<String> = match &args.category {
        Some(c) => store.taxonomy(&ctx.names.taxonomy)?.category(c)?.to_vec(),
        None => args.targets.clone(),
    };
    let token = ctx.token();
    let target_refs: Vec<&str> = targets.iter().map(String::as_str).collect();
    let assembled = store.create_targets_dataset(&target_refs, &ctx.names, token.as_deref())?;
    print_warnings(&assembled);
    let sample = assembly::sample_balanced(&assembled.instances, &targets, args.per_target, args.seed, args.take_all)?;
    write_instances(&args.out, DataFormat::Jsonl, &sample.instances)?;

    let manifest_path = args.manifest.clone().unwrap_or_else(|| {
        let stem = args.out.file_stem().unwrap_or_default().to_string_lossy();
        args.out.with_file_name(format!("{stem}.manifest.json"))
    });
    let same_dir = args.out.parent() == manifest_path.parent();
    let instances_file = match (same_dir, args.out.file_name()) {
        (true, Some(name)) => PathBuf::from(name),
        _ => std::path::absolute(&args.out)?,
    };
    SampleManifest::new(&sample, args.take_all, ctx.names.clone(), instances_file).save(&manifest_path)?;
    println!(
        "sampled {} instances over {} targets (seed {}) into {}; manifest {}",
        sample.instances.len(),
        targets.len(),
        args.seed,
        args.out.display(),
        manifest_path.display()
    );
    Ok(())
}

fn experiment(config_path: &Path, max_pairs: Option<usize>) -> anyhow::Result<()> {
    let config = ExperimentConfig::load(config_path)?;
    let instances = load_sample(&config)?;
    let mut store = RecordStore::open(config.records_path())?;
    let stop = Arc::new(AtomicBool::new(false));
    let options = RunOptions {
        max_new_pairs: max_pairs,
        stop: Some(stop.clone()),
    };
    let rt = tokio::runtime::Runtime::new()?;
    let summary = rt.block_on(async {
        let flag = stop.clone();
        tokio::spawn(async move {
            if tokio::signal::ctrl_c().await.is_ok() {
                eprintln!("interrupt: finishing requests in flight");
                flag.store(true, Ordering::SeqCst);
            }
        });
        run_experiment(&config, &instances, &mut store, &options).await
    })?;
    println!("{}", summary.line());
    println!("records: {}", config.records_path().display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
