//! Minimal blocking JSON-over-HTTP client shared by the external embedding
//! and generator backends.

use std::thread;
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Serialize;

/// Connection settings for an external JSON service.
#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct HttpSettings {
    pub endpoint: String,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: f64,
    #[serde(default = "default_retries")]
    pub retries: u32,
}

fn default_timeout_secs() -> f64 {
    30.0
}

fn default_retries() -> u32 {
    2
}

impl HttpSettings {
    pub fn new(endpoint: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            timeout_secs: default_timeout_secs(),
            retries: default_retries(),
        }
    }
}

pub(crate) struct JsonClient {
    agent: ureq::Agent,
    settings: HttpSettings,
}

impl JsonClient {
    pub(crate) fn new(settings: HttpSettings) -> Self {
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(
                settings.timeout_secs.max(0.001),
            )))
            .build();
        Self {
            agent: config.into(),
            settings,
        }
    }

    pub(crate) fn settings(&self) -> &HttpSettings {
        &self.settings
    }

    /// POSTs `body` to `{endpoint}/{route}` and decodes the JSON response,
    /// retrying transport failures and non-2xx statuses.
    pub(crate) fn post<B: Serialize, R: DeserializeOwned>(
        &self,
        route: &str,
        body: &B,
    ) -> Result<R, String> {
        let url = format!("{}/{}", self.settings.endpoint.trim_end_matches('/'), route);
        let mut last_err = String::new();
        for attempt in 0..=self.settings.retries {
            if attempt > 0 {
                thread::sleep(Duration::from_millis(50 * u64::from(attempt)));
            }
            match self.agent.post(&url).send_json(body) {
                Ok(mut resp) => match resp.body_mut().read_json::<R>() {
                    Ok(v) => return Ok(v),
                    // A malformed body will not improve on retry.
                    Err(e) => return Err(format!("{url}: invalid response body: {e}")),
                },
                Err(e) => last_err = format!("{url}: {e}"),
            }
        }
        Err(last_err)
    }
}
