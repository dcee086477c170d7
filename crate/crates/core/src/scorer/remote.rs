use std::time::Duration;

use serde::{Deserialize, Serialize};
use ureq::Agent;

use super::{NliDistribution, NliScorer, ScorePair};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct RemoteScorerConfig {
    /// Base URL, e.g. `http://127.0.0.1:8080`. `/v1/score` and `/v1/health`
    /// are appended.
    pub endpoint: String,
    pub timeout: Duration,
    /// Pairs per HTTP request.
    pub max_batch: usize,
    /// Requests in flight at once for one `score_pairs` call.
    pub parallelism: usize,
}

impl RemoteScorerConfig {
    pub fn new(endpoint: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into().trim_end_matches('/').to_string(),
            timeout: Duration::from_secs(60),
            max_batch: 32,
            parallelism: 4,
        }
    }
}

#[derive(Serialize)]
struct ScoreRequest<'a> {
    pairs: &'a [ScorePair],
}

#[derive(Deserialize)]
struct ScoreResponse {
    results: Vec<NliDistribution>,
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
pub struct Health {
    pub status: String,
    pub scorer_id: String,
}

/// Client for the HTTP scoring service (`POST /v1/score`, `GET /v1/health`).
///
/// Unreachable hosts, timeouts and 5xx answers are transport errors and may be
/// retried. Other non-200 answers and undecodable bodies are protocol errors.
pub struct RemoteScorer {
    config: RemoteScorerConfig,
    agent: Agent,
    scorer_id: String,
}

fn transport(e: ureq::Error) -> Error {
    Error::Transport(e.to_string())
}

impl RemoteScorer {
    /// Queries `/v1/health` to learn the scorer identity.
    pub fn connect(config: RemoteScorerConfig) -> Result<Self> {
        let agent = Self::agent(&config);
        let health = Self::fetch_health(&agent, &config.endpoint)?;
        if health.status != "ok" {
            return Err(Error::Transport(format!("service status is {:?}", health.status)));
        }
        Ok(Self {
            config,
            agent,
            scorer_id: health.scorer_id,
        })
    }

    /// Skips the health check and trusts the given identity.
    pub fn with_scorer_id(config: RemoteScorerConfig, scorer_id: impl Into<String>) -> Self {
        Self {
            agent: Self::agent(&config),
            config,
            scorer_id: scorer_id.into(),
        }
    }

    fn agent(config: &RemoteScorerConfig) -> Agent {
        Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .http_status_as_error(false)
            .build()
            .into()
    }

    pub fn health(&self) -> Result<Health> {
        Self::fetch_health(&self.agent, &self.config.endpoint)
    }

    fn fetch_health(agent: &Agent, endpoint: &str) -> Result<Health> {
        let mut resp = agent
            .get(format!("{endpoint}/v1/health"))
            .call()
            .map_err(transport)?;
        let status = resp.status().as_u16();
        let body = resp.body_mut().read_to_string().map_err(transport)?;
        check_status(status, &body)?;
        serde_json::from_str(&body).map_err(|e| Error::Protocol(format!("bad health body: {e}")))
    }

    fn post_chunk(&self, pairs: &[ScorePair]) -> Result<Vec<NliDistribution>> {
        let mut resp = self
            .agent
            .post(format!("{}/v1/score", self.config.endpoint))
            .send_json(ScoreRequest { pairs })
            .map_err(transport)?;
        let status = resp.status().as_u16();
        let body = resp.body_mut().read_to_string().map_err(transport)?;
        check_status(status, &body)?;
        let parsed: ScoreResponse = serde_json::from_str(&body)
            .map_err(|e| Error::Protocol(format!("bad score body: {e}")))?;
        if parsed.results.len() != pairs.len() {
            return Err(Error::Protocol(format!(
                "{} results for {} pairs",
                parsed.results.len(),
                pairs.len()
            )));
        }
        Ok(parsed.results)
    }
}

fn check_status(status: u16, body: &str) -> Result<()> {
    match status {
        200 => Ok(()),
        500..=599 => Err(Error::Transport(format!("HTTP {status}: {body}"))),
        _ => Err(Error::Protocol(format!("HTTP {status}: {body}"))),
    }
}

impl NliScorer for RemoteScorer {
    fn scorer_id(&self) -> &str {
        &self.scorer_id
    }

    fn score_pairs(&self, pairs: &[ScorePair]) -> Result<Vec<NliDistribution>> {
        let chunks: Vec<&[ScorePair]> = pairs.chunks(self.config.max_batch.max(1)).collect();
        let mut out = Vec::with_capacity(pairs.len());
        for wave in chunks.chunks(self.config.parallelism.max(1)) {
            let results: Vec<Result<Vec<NliDistribution>>> = std::thread::scope(|s| {
                let handles: Vec<_> = wave
                    .iter()
                    .map(|chunk| s.spawn(move || self.post_chunk(chunk)))
                    .collect();
                handles
                    .into_iter()
                    .map(|h| h.join().expect("scoring thread panicked"))
                    .collect()
            });
            for r in results {
                out.extend(r?);
            }
        }
        Ok(out)
    }
}
