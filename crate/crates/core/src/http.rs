//! Shared blocking HTTP plumbing for the embedding, completion and scorer clients.

use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Serialize;

#[derive(Debug, Clone)]
pub(crate) struct HttpFailure {
    pub retryable: bool,
    pub message: String,
}

impl std::fmt::Display for HttpFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

pub(crate) fn agent(timeout: Duration) -> ureq::Agent {
    ureq::Agent::config_builder()
        .timeout_global(Some(timeout))
        .http_status_as_error(true)
        .build()
        .into()
}

fn classify(err: ureq::Error) -> HttpFailure {
    let retryable = match &err {
        ureq::Error::StatusCode(code) => *code == 429 || *code >= 500,
        ureq::Error::Io(_)
        | ureq::Error::Timeout(_)
        | ureq::Error::ConnectionFailed
        | ureq::Error::HostNotFound => true,
        _ => false,
    };
    HttpFailure {
        retryable,
        message: err.to_string(),
    }
}

/// POSTs `body` as JSON and decodes the JSON response.
pub(crate) fn post_json<B: Serialize, R: DeserializeOwned>(
    agent: &ureq::Agent,
    url: &str,
    bearer: Option<&str>,
    body: &B,
) -> Result<R, HttpFailure> {
    let mut req = agent.post(url);
    if let Some(token) = bearer {
        req = req.header("Authorization", &format!("Bearer {token}"));
    }
    let mut resp = req.send_json(body).map_err(classify)?;
    resp.body_mut().read_json::<R>().map_err(|e| HttpFailure {
        retryable: false,
        message: format!("malformed response body: {e}"),
    })
}

pub(crate) fn get_json<R: DeserializeOwned>(
    agent: &ureq::Agent,
    url: &str,
) -> Result<R, HttpFailure> {
    let mut resp = agent.get(url).call().map_err(classify)?;
    resp.body_mut().read_json::<R>().map_err(|e| HttpFailure {
        retryable: false,
        message: format!("malformed response body: {e}"),
    })
}

/// Runs `op` up to `1 + retries` times, retrying only on retryable failures.
pub(crate) fn with_retries<T>(
    retries: u32,
    mut op: impl FnMut() -> Result<T, HttpFailure>,
) -> Result<T, HttpFailure> {
    let mut attempt = 0;
    loop {
        match op() {
            Ok(v) => return Ok(v),
            Err(e) if e.retryable && attempt < retries => {
                attempt += 1;
                log::debug!("retrying request (attempt {attempt}): {e}");
                std::thread::sleep(Duration::from_millis(50 * u64::from(attempt)));
            }
            Err(e) => return Err(e),
        }
    }
}

pub(crate) fn join_url(base: &str, path: &str) -> String {
    format!("{}/{}", base.trim_end_matches('/'), path.trim_start_matches('/'))
}
