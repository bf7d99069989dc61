use std::collections::{BTreeMap, HashMap, VecDeque};
use std::sync::Mutex;
use std::time::Duration;

use base64::Engine as _;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use super::schema::assignment_schema;
use super::Stage;
use crate::raster::{hex_lower, Bitmap};

#[derive(Debug, Clone, PartialEq)]
pub enum RequestPart {
    Text(String),
    Image(Bitmap),
}

/// One model call: interleaved text and images plus an optional response
/// schema.
#[derive(Debug, Clone, PartialEq)]
pub struct VlmRequest {
    pub stage: Stage,
    pub parts: Vec<RequestPart>,
    pub schema: Option<Value>,
}

impl VlmRequest {
    pub fn text_parts(&self) -> Vec<&str> {
        self.parts
            .iter()
            .filter_map(|p| match p {
                RequestPart::Text(t) => Some(t.as_str()),
                RequestPart::Image(_) => None,
            })
            .collect()
    }

    pub fn image_parts(&self) -> Vec<&Bitmap> {
        self.parts
            .iter()
            .filter_map(|p| match p {
                RequestPart::Image(b) => Some(b),
                RequestPart::Text(_) => None,
            })
            .collect()
    }

    pub fn image_digests(&self) -> Vec<String> {
        self.image_parts().iter().map(|b| b.digest()).collect()
    }

    /// Text parts joined by newlines, with `[image N]` where images sit.
    pub fn prompt_text(&self) -> String {
        let mut n = 0;
        self.parts
            .iter()
            .map(|p| match p {
                RequestPart::Text(t) => t.clone(),
                RequestPart::Image(_) => {
                    n += 1;
                    format!("[image {n}]")
                }
            })
            .collect::<Vec<_>>()
            .join("\n")
    }

    /// SHA-256 over the stage, every part in order and the schema.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.stage.to_string().as_bytes());
        for p in &self.parts {
            match p {
                RequestPart::Text(t) => {
                    h.update(b"\0T");
                    h.update((t.len() as u64).to_le_bytes());
                    h.update(t.as_bytes());
                }
                RequestPart::Image(b) => {
                    h.update(b"\0I");
                    h.update(b.digest().as_bytes());
                }
            }
        }
        h.update(b"\0S");
        if let Some(s) = &self.schema {
            h.update(s.to_string().as_bytes());
        }
        hex_lower(&h.finalize())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ClientError {
    #[error("no scripted response left for {0}")]
    Exhausted(Stage),
    #[error("no recorded response for request {0}")]
    NotRecorded(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("endpoint returned status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("missing configuration: {0}")]
    Config(String),
}

/// A vision-language model endpoint. Implementations hold no pipeline
/// state; retries are decided by the caller.
pub trait VlmClient: Send + Sync {
    fn request(&self, req: &VlmRequest) -> Result<String, ClientError>;
    fn identity(&self) -> &str;
}

impl<C: VlmClient + ?Sized> VlmClient for &C {
    fn request(&self, req: &VlmRequest) -> Result<String, ClientError> {
        (**self).request(req)
    }
    fn identity(&self) -> &str {
        (**self).identity()
    }
}

impl<C: VlmClient + ?Sized> VlmClient for Box<C> {
    fn request(&self, req: &VlmRequest) -> Result<String, ClientError> {
        (**self).request(req)
    }
    fn identity(&self) -> &str {
        (**self).identity()
    }
}

/// Response token that makes [`ScriptedClient`] answer an assignment stage
/// with a round-robin map derived from the request schema.
pub const AUTO_RESPONSE: &str = "@auto";

/// Answers from per-stage queues. The last response of a stage repeats once
/// the queue is down to one entry.
#[derive(Debug, Default)]
pub struct ScriptedClient {
    queues: Mutex<BTreeMap<Stage, VecDeque<String>>>,
    log: Mutex<Vec<VlmRequest>>,
}

impl ScriptedClient {
    pub fn new(script: BTreeMap<Stage, Vec<String>>) -> Self {
        Self { queues: Mutex::new(script.into_iter().map(|(k, v)| (k, v.into())).collect()), log: Mutex::default() }
    }

    /// Script from JSON: `{"step1": [...], ...}`; non-string entries are
    /// sent as their JSON text.
    pub fn from_json(v: &Value) -> Result<Self, String> {
        let obj = v.as_object().ok_or("script must be a JSON object")?;
        let mut script = BTreeMap::new();
        for (k, list) in obj {
            let stage: Stage = k.parse()?;
            let items = list.as_array().ok_or_else(|| format!("{k}: expected an array"))?;
            let texts = items.iter().map(|i| i.as_str().map(str::to_string).unwrap_or_else(|| i.to_string())).collect();
            script.insert(stage, texts);
        }
        Ok(Self::new(script))
    }

    pub fn with(mut self, stage: Stage, responses: impl IntoIterator<Item = impl Into<String>>) -> Self {
        self.queues.get_mut().unwrap().insert(stage, responses.into_iter().map(Into::into).collect());
        self
    }

    /// Every request received, in order.
    pub fn requests(&self) -> Vec<VlmRequest> {
        self.log.lock().unwrap().clone()
    }

    pub fn calls(&self) -> Vec<Stage> {
        self.log.lock().unwrap().iter().map(|r| r.stage).collect()
    }
}

fn auto_assignment(schema: Option<&Value>) -> Option<String> {
    let schema = schema?;
    let k = schema.get("required")?.as_array()?.len();
    let n = schema.get("properties")?.get("Path1")?.get("enum")?.as_array()?.len();
    let v: serde_json::Map<String, Value> =
        (1..=k).map(|i| (format!("Path{i}"), Value::String(format!("Part{}", (i - 1) % n.max(1) + 1)))).collect();
    debug_assert_eq!(schema, &assignment_schema(k, n));
    Some(Value::Object(v).to_string())
}

impl VlmClient for ScriptedClient {
    fn request(&self, req: &VlmRequest) -> Result<String, ClientError> {
        self.log.lock().unwrap().push(req.clone());
        let mut queues = self.queues.lock().unwrap();
        let q = queues.get_mut(&req.stage).ok_or(ClientError::Exhausted(req.stage))?;
        let text = match q.len() {
            0 => return Err(ClientError::Exhausted(req.stage)),
            1 => q[0].clone(),
            _ => q.pop_front().unwrap(),
        };
        if text == AUTO_RESPONSE {
            return auto_assignment(req.schema.as_ref()).ok_or(ClientError::Exhausted(req.stage));
        }
        Ok(text)
    }

    fn identity(&self) -> &str {
        "scripted"
    }
}

/// Replays responses recorded in stage traces, matched by request digest.
/// Repeated digests (retries) are answered in recording order.
#[derive(Debug, Default)]
pub struct ReplayClient {
    recorded: Mutex<HashMap<String, VecDeque<String>>>,
}

impl ReplayClient {
    pub fn new(entries: impl IntoIterator<Item = (String, String)>) -> Self {
        let mut map: HashMap<String, VecDeque<String>> = HashMap::new();
        for (digest, response) in entries {
            map.entry(digest).or_default().push_back(response);
        }
        Self { recorded: Mutex::new(map) }
    }

    pub fn from_trace(trace: &super::StageTrace) -> Self {
        Self::new(trace.entries.iter().filter_map(|e| e.raw_response.clone().map(|r| (e.request_digest.clone(), r))))
    }
}

impl VlmClient for ReplayClient {
    fn request(&self, req: &VlmRequest) -> Result<String, ClientError> {
        let digest = req.digest();
        let mut map = self.recorded.lock().unwrap();
        map.get_mut(&digest).and_then(VecDeque::pop_front).ok_or(ClientError::NotRecorded(digest))
    }

    fn identity(&self) -> &str {
        "replay"
    }
}

/// JSON-over-HTTP adapter.
///
/// Sends `POST {endpoint}` with bearer auth and a body
/// `{"model", "parts": [{"type": "text", "text"} | {"type": "image",
/// "mime_type": "image/png", "data": base64}], "schema"}`. The reply is
/// either `{"text": ...}` or a plain-text body.
pub struct HttpVlmClient {
    endpoint: String,
    api_key: Option<String>,
    model: String,
    agent: ureq::Agent,
}

impl HttpVlmClient {
    pub fn new(
        endpoint: impl Into<String>,
        api_key: Option<String>,
        model: impl Into<String>,
        timeout: Duration,
    ) -> Self {
        let agent =
            ureq::Agent::config_builder().timeout_global(Some(timeout)).http_status_as_error(false).build().into();
        Self { endpoint: endpoint.into(), api_key, model: model.into(), agent }
    }

    /// Reads `VLM_ENDPOINT`, `VLM_API_KEY` and optionally `VLM_MODEL`.
    pub fn from_env() -> Result<Self, ClientError> {
        let endpoint =
            std::env::var("VLM_ENDPOINT").map_err(|_| ClientError::Config("VLM_ENDPOINT is not set".into()))?;
        let api_key = std::env::var("VLM_API_KEY").ok();
        let model = std::env::var("VLM_MODEL").unwrap_or_else(|_| "default".into());
        Ok(Self::new(endpoint, api_key, model, Duration::from_secs(300)))
    }

    pub fn model(&self) -> &str {
        &self.model
    }

    pub fn body(&self, req: &VlmRequest) -> Result<Value, ClientError> {
        let parts = encode_parts(&req.parts)?;
        Ok(json!({"model": self.model, "stage": req.stage.to_string(), "parts": parts, "schema": req.schema}))
    }

    /// Posts a JSON body and returns the reply text.
    pub fn post(&self, body: &Value) -> Result<String, ClientError> {
        let mut call = self.agent.post(&self.endpoint).header("content-type", "application/json");
        if let Some(key) = &self.api_key {
            call = call.header("authorization", &format!("Bearer {key}"));
        }
        let mut resp = call.send(body.to_string()).map_err(|e| ClientError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp.body_mut().read_to_string().map_err(|e| ClientError::Transport(e.to_string()))?;
        if !(200..300).contains(&status) {
            return Err(ClientError::Status { status, body: text });
        }
        match serde_json::from_str::<Value>(&text) {
            Ok(Value::Object(o)) if o.get("text").is_some_and(Value::is_string) => {
                Ok(o["text"].as_str().unwrap_or_default().to_string())
            }
            _ => Ok(text),
        }
    }
}

/// Wire form of request parts; images travel as base64 PNG.
pub fn encode_parts(parts: &[RequestPart]) -> Result<Vec<Value>, ClientError> {
    let b64 = base64::engine::general_purpose::STANDARD;
    parts
        .iter()
        .map(|p| match p {
            RequestPart::Text(t) => Ok(json!({"type": "text", "text": t})),
            RequestPart::Image(img) => {
                let png = img.to_png().map_err(|e| ClientError::Transport(e.to_string()))?;
                Ok(json!({"type": "image", "mime_type": "image/png", "data": b64.encode(png)}))
            }
        })
        .collect()
}

impl VlmClient for HttpVlmClient {
    fn request(&self, req: &VlmRequest) -> Result<String, ClientError> {
        self.post(&self.body(req)?)
    }

    fn identity(&self) -> &str {
        &self.model
    }
}
