//! Environment report: resources, named configurations, dataset
//! reachability and endpoint health.

use std::fmt;
use std::path::Path;
use std::time::Duration;

use unitarget_core::ingest::Access;
use unitarget_core::ResourceStore;
use unitarget_eval::{ChatClient, ClientSettings};

use crate::config::CliConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Ok,
    Pending,
    Fail,
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Status::Ok => "[ok]     ",
            Status::Pending => "[pending]",
            Status::Fail => "[FAIL]   ",
        })
    }
}

#[derive(Debug, Clone)]
pub struct Check {
    pub status: Status,
    pub subject: String,
    pub detail: String,
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}: {}", self.status, self.subject, self.detail)
    }
}

fn check(status: Status, subject: impl Into<String>, detail: impl Into<String>) -> Check {
    Check {
        status,
        subject: subject.into(),
        detail: detail.into(),
    }
}

pub struct Names<'a> {
    pub taxonomy: &'a str,
    pub mapping: &'a str,
    pub overview: &'a str,
}

pub fn run(resources: &Path, names: &Names<'_>, config: &CliConfig, endpoint: Option<&str>) -> Vec<Check> {
    let mut out = Vec::new();
    let store = match ResourceStore::open(resources) {
        Ok(s) => {
            out.push(check(Status::Ok, "resources", resources.display().to_string()));
            Some(s)
        }
        Err(_) => {
            out.push(check(
                Status::Fail,
                "resources",
                format!(
                    "{} does not exist; create it with `unitarget --resources {} init`",
                    resources.display(),
                    resources.display()
                ),
            ));
            None
        }
    };

    if let Some(store) = &store {
        match store.taxonomy(names.taxonomy) {
            Ok(t) => out.push(check(
                Status::Ok,
                format!("taxonomy {}", names.taxonomy),
                format!("{} categories, {} targets", t.categories.len(), t.target_names().len()),
            )),
            Err(e) => out.push(check(Status::Fail, format!("taxonomy {}", names.taxonomy), e.to_string())),
        }
        match store.config_pair(names.mapping, names.taxonomy) {
            Ok((m, _)) => out.push(check(
                Status::Ok,
                format!("mapping {}", names.mapping),
                format!("{} datasets, {} keywords", m.datasets.len(), m.entries().count()),
            )),
            Err(e) => out.push(check(Status::Fail, format!("mapping {}", names.mapping), e.to_string())),
        }
        match store.overview(names.overview) {
            Ok(o) => out.push(check(
                Status::Ok,
                format!("overview {}", names.overview),
                format!("{} instances, {} datasets pending", o.total_size(), o.pending.len()),
            )),
            Err(_) => out.push(check(
                Status::Pending,
                format!("overview {}", names.overview),
                "not built yet; run `unitarget overview update`",
            )),
        }
        match store.descriptors() {
            Ok(descriptors) => {
                let has_token = config.token().is_some();
                for d in descriptors {
                    let subject = format!("dataset {}", d.dataset_id);
                    if d.is_remote() {
                        let c = match (d.access, has_token) {
                            (Access::ManualDownload, _) => {
                                check(Status::Pending, subject, format!("manual download required. {}", d.notes))
                            }
                            (Access::TokenRequired, false) => check(
                                Status::Pending,
                                subject,
                                format!("set {} to fetch {}. {}", config.token_env, d.location, d.notes),
                            ),
                            _ => check(Status::Ok, subject, format!("fetched from {}", d.location)),
                        };
                        out.push(c);
                        continue;
                    }
                    let path = d.local_path(store.root());
                    if path.is_file() {
                        out.push(check(Status::Ok, subject, path.display().to_string()));
                    } else {
                        out.push(check(
                            Status::Pending,
                            subject,
                            format!("{} file not found at {}. {}", d.access, path.display(), d.notes),
                        ));
                    }
                }
            }
            Err(e) => out.push(check(Status::Fail, "datasets", e.to_string())),
        }
    }

    match endpoint.or(config.endpoint.as_deref()) {
        None => out.push(check(Status::Pending, "endpoint", "none configured (pass --endpoint)")),
        Some(url) => out.push(endpoint_check(url)),
    }
    out
}

fn endpoint_check(url: &str) -> Check {
    let client = ChatClient::new(ClientSettings {
        endpoint: url.to_string(),
        model: String::new(),
        api_key: None,
        temperature: 0.0,
        max_tokens: 1,
        json_response_format: false,
        timeout: Duration::from_secs(5),
    });
    let result = match client {
        Ok(c) => tokio::runtime::Builder::new_current_thread()
            .enable_all()
            .build()
            .map_err(|e| e.to_string())
            .and_then(|rt| rt.block_on(c.health()).map_err(|e| e.to_string())),
        Err(e) => Err(e.to_string()),
    };
    match result {
        Ok(()) => check(Status::Ok, "endpoint", url),
        Err(e) => check(Status::Fail, "endpoint", format!("{url} is not healthy: {e}")),
    }
}
