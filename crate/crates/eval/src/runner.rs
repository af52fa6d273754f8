//! Runs every persona over every sampled instance and stores the verdicts.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

use futures::stream::{self, StreamExt};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use unitarget_core::assembly::{AssemblyError, SampleManifest};
use unitarget_core::experiment::ExperimentConfig;
use unitarget_core::stats::{self, Averaging, InvalidPolicy, ModelResults, StatsError};
use unitarget_core::{ClassificationRecord, PersonaSpec, UnifiedInstance};

use crate::client::{ChatClient, ClientError, ClientSettings};
use crate::prompt::{render_prompt, validate_response};
use crate::records::{RecordError, RecordStore};

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error(transparent)]
    Records(#[from] RecordError),
    #[error(transparent)]
    Sample(#[from] AssemblyError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error("the sample is empty")]
    EmptySample,
    #[error("environment variable {0} (api_key_env) is not set")]
    MissingApiKey(String),
}

/// Limits for a single invocation. A stopped run can be resumed later.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Send at most this many new pairs, then stop.
    pub max_new_pairs: Option<usize>,
    /// When set, no further pairs are started. Pairs in flight still finish.
    pub stop: Option<Arc<AtomicBool>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub total_pairs: usize,
    /// Pairs already in the store before this run.
    pub skipped_existing: usize,
    pub attempted: usize,
    /// Attempted pairs that ended with a valid verdict.
    pub completed: usize,
    /// Attempted pairs stored without a verdict after exhausting retries.
    pub failed: usize,
    pub mean_attempts: f64,
    /// Pairs still missing from the store.
    pub remaining: usize,
}

impl RunSummary {
    pub fn line(&self) -> String {
        format!(
            "pairs: {} total, {} already stored, {} attempted, {} completed, {} failed, {} remaining; mean attempts {:.2}",
            self.total_pairs,
            self.skipped_existing,
            self.attempted,
            self.completed,
            self.failed,
            self.remaining,
            self.mean_attempts
        )
    }
}

pub fn client_for(config: &ExperimentConfig) -> Result<ChatClient, RunError> {
    let api_key = match &config.api_key_env {
        Some(var) => Some(std::env::var(var).map_err(|_| RunError::MissingApiKey(var.clone()))?),
        None => None,
    };
    Ok(ChatClient::new(ClientSettings {
        endpoint: config.endpoint.clone(),
        model: config.model_id.clone(),
        api_key,
        temperature: config.temperature,
        max_tokens: config.max_tokens,
        json_response_format: config.json_response_format,
        timeout: Duration::from_secs(config.request_timeout_secs),
    })?)
}

/// Loads the instances listed by the config's sample manifest.
pub fn load_sample(config: &ExperimentConfig) -> Result<Vec<UnifiedInstance>, RunError> {
    let manifest = SampleManifest::load(&config.sample_manifest)?;
    Ok(manifest.load_instances(&config.sample_manifest)?)
}

struct Outcome {
    verdict: Option<bool>,
    raw: String,
    attempts: u32,
}

async fn classify(client: &ChatClient, prompt: &str, max_retries: u32, backoff: Duration) -> Outcome {
    let mut raw = String::new();
    let attempts_allowed = max_retries + 1;
    for attempt in 1..=attempts_allowed {
        match client.complete(prompt).await {
            Ok(content) => {
                if let Some(v) = validate_response(&content) {
                    return Outcome {
                        verdict: Some(v),
                        raw: content,
                        attempts: attempt,
                    };
                }
                raw = content;
            }
            Err(e) => {
                log::debug!("attempt {attempt} failed: {e}");
                raw = format!("error: {e}");
            }
        }
        if attempt < attempts_allowed {
            tokio::time::sleep(backoff * 2u32.saturating_pow(attempt - 1)).await;
        }
    }
    Outcome {
        verdict: None,
        raw,
        attempts: attempts_allowed,
    }
}

/// Classifies every `(persona, instance)` pair missing from `store`.
///
/// Pairs are visited persona by persona, instances in sample order. Up to
/// `max_in_flight` requests run concurrently, and records are appended in
/// visiting order, so an interrupted run followed by a resumed one leaves
/// the same lines as one uninterrupted run (timestamps aside).
pub async fn run_experiment(
    config: &ExperimentConfig,
    instances: &[UnifiedInstance],
    store: &mut RecordStore,
    options: &RunOptions,
) -> Result<RunSummary, RunError> {
    if instances.is_empty() {
        return Err(RunError::EmptySample);
    }
    let client = client_for(config)?;
    client.health().await?;

    let total_pairs = config.personas.len() * instances.len();
    let pending: Vec<(&PersonaSpec, &UnifiedInstance)> = config
        .personas
        .iter()
        .flat_map(|p| instances.iter().map(move |i| (p, i)))
        .filter(|(p, i)| !store.contains(&config.name, &p.persona_id, &i.id))
        .collect();
    let skipped_existing = total_pairs - pending.len();
    let budget = options.max_new_pairs.unwrap_or(usize::MAX);
    let backoff = Duration::from_millis(config.backoff_ms);
    let stop = options.stop.clone();

    let client = &client;
    let results = stream::iter(pending.into_iter().take(budget))
        .take_while(|_| {
            let go = stop.as_ref().is_none_or(|s| !s.load(Ordering::SeqCst));
            async move { go }
        })
        .map(|(persona, instance)| async move {
            let prompt = render_prompt(persona, &instance.text);
            let outcome = classify(client, &prompt, config.max_retries, backoff).await;
            ClassificationRecord {
                experiment: config.name.clone(),
                persona_id: persona.persona_id.clone(),
                instance_id: instance.id.clone(),
                target: instance.target.clone(),
                model_id: config.model_id.clone(),
                verdict: outcome.verdict,
                raw_response: outcome.raw,
                attempts: outcome.attempts,
                timestamp: chrono::Utc::now().to_rfc3339(),
            }
        })
        .buffered(config.max_in_flight);
    let mut results = std::pin::pin!(results);

    let mut summary = RunSummary {
        total_pairs,
        skipped_existing,
        ..Default::default()
    };
    let mut attempts_sum = 0u64;
    while let Some(record) = results.next().await {
        store.append(&record)?;
        summary.attempted += 1;
        attempts_sum += u64::from(record.attempts);
        if record.is_valid() {
            summary.completed += 1;
        } else {
            summary.failed += 1;
        }
    }
    summary.mean_attempts = if summary.attempted == 0 {
        0.0
    } else {
        attempts_sum as f64 / summary.attempted as f64
    };
    summary.remaining = total_pairs - skipped_existing - summary.attempted;
    Ok(summary)
}

/// Per-target rates and odds ratios for one experiment's records.
pub fn results_for(
    config: &ExperimentConfig,
    records: &[ClassificationRecord],
    target_order: &[String],
    averaging: Averaging,
    invalid: InvalidPolicy,
) -> Result<ModelResults, RunError> {
    let own: Vec<ClassificationRecord> = records.iter().filter(|r| r.experiment == config.name).cloned().collect();
    let counts = stats::detection_rates(&own, &config.personas, target_order, invalid)?;
    Ok(ModelResults {
        model: config.model_id.clone(),
        results: stats::analyze(&counts, averaging)?,
    })
}
