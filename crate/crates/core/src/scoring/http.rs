use serde::{Deserialize, Serialize};

use super::{Embedding, EmbeddingProvider};
use crate::error::{Error, Result};
use crate::http_client::{HttpSettings, JsonClient};

pub type HttpEmbeddingConfig = HttpSettings;

#[derive(Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [&'a str],
}

#[derive(Deserialize)]
struct EmbedResponse {
    embeddings: Vec<Vec<f64>>,
}

/// Embedding provider backed by `POST {endpoint}/embed`.
pub struct HttpEmbeddingProvider {
    client: JsonClient,
}

impl HttpEmbeddingProvider {
    pub fn new(config: HttpEmbeddingConfig) -> Self {
        Self {
            client: JsonClient::new(config),
        }
    }
}

impl EmbeddingProvider for HttpEmbeddingProvider {
    fn identity(&self) -> String {
        format!("http:{}", self.client.settings().endpoint)
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Embedding>> {
        if texts.is_empty() {
            return Ok(Vec::new());
        }
        let resp: EmbedResponse = self
            .client
            .post("embed", &EmbedRequest { texts })
            .map_err(Error::Provider)?;
        if resp.embeddings.len() != texts.len() {
            return Err(Error::Provider(format!(
                "expected {} embeddings, got {}",
                texts.len(),
                resp.embeddings.len()
            )));
        }
        let dim = resp.embeddings[0].len();
        if resp.embeddings.iter().any(|e| e.len() != dim) {
            return Err(Error::Provider(
                "embeddings have inconsistent dimensions".into(),
            ));
        }
        resp.embeddings.into_iter().map(Embedding::new).collect()
    }
}
