use std::time::Duration;

use base64::Engine as _;
use serde_json::{json, Value};

use crate::raster::Bitmap;

pub const BASELINE_SIDE: u32 = 32;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EmbedError {
    #[error("embedding service error: {0}")]
    Service(String),
    #[error("embedding service returned no vector")]
    BadResponse,
    #[error("unknown embedder {0:?}; use \"baseline\" or \"external:<url>\"")]
    UnknownName(String),
}

/// Maps an image to a fixed-length vector. Implementations are shared
/// across scoring threads, so equal bitmaps must embed equally and `embed`
/// must not mutate shared state.
pub trait Embedder: Send + Sync {
    fn embed(&self, img: &Bitmap) -> Result<Vec<f64>, EmbedError>;
    fn identity(&self) -> &str;
}

/// Builds an embedder from `"baseline"` or `"external:<url>"`.
pub fn from_name(name: &str) -> Result<Box<dyn Embedder>, EmbedError> {
    if name == "baseline" {
        Ok(Box::new(BaselineEmbedder::default()))
    } else if let Some(url) = name.strip_prefix("external:") {
        Ok(Box::new(ExternalEmbedder::new(url, Duration::from_secs(60))))
    } else {
        Err(EmbedError::UnknownName(name.to_string()))
    }
}

/// Cosine similarity, defined as 0 when either vector has zero norm.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0)
}

/// Block mean of the grayscale image on a `side x side` grid, scaled to
/// `[0, 1]` and shifted by `-0.5`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BaselineEmbedder {
    pub side: u32,
}

impl Default for BaselineEmbedder {
    fn default() -> Self {
        Self { side: BASELINE_SIDE }
    }
}

/// Row or column range covered by cell `i` of `n` over `len` pixels; never
/// empty when `len > 0`.
fn cell(i: u32, n: u32, len: u32) -> (u32, u32) {
    let lo = (u64::from(i) * u64::from(len) / u64::from(n)) as u32;
    let hi = (u64::from(i + 1) * u64::from(len) / u64::from(n)) as u32;
    let lo = lo.min(len.saturating_sub(1));
    (lo, hi.max(lo + 1).min(len))
}

impl BaselineEmbedder {
    pub fn embed_bitmap(&self, img: &Bitmap) -> Vec<f64> {
        let gray = img.to_grayscale();
        let (w, h) = (gray.width(), gray.height());
        let px = gray.pixels();
        let s = self.side;
        let mut out = Vec::with_capacity((s * s) as usize);
        if w == 0 || h == 0 {
            out.resize((s * s) as usize, 0.0);
            return out;
        }
        let cols: Vec<(u32, u32)> = (0..s).map(|j| cell(j, s, w)).collect();
        for i in 0..s {
            let (y0, y1) = cell(i, s, h);
            for &(x0, x1) in &cols {
                let mut sum = 0u64;
                for y in y0..y1 {
                    let row = &px[(y * w) as usize..((y + 1) * w) as usize];
                    sum += row[x0 as usize..x1 as usize].iter().map(|&p| u64::from(p)).sum::<u64>();
                }
                let count = f64::from((y1 - y0) * (x1 - x0));
                out.push(sum as f64 / count / 255.0 - 0.5);
            }
        }
        out
    }
}

impl Embedder for BaselineEmbedder {
    fn embed(&self, img: &Bitmap) -> Result<Vec<f64>, EmbedError> {
        Ok(self.embed_bitmap(img))
    }

    fn identity(&self) -> &str {
        "baseline"
    }
}

/// Remote embedding service: `POST {"image": <base64 png>}`, answered with
/// a JSON float array or `{"embedding": [...]}`.
pub struct ExternalEmbedder {
    url: String,
    agent: ureq::Agent,
}

impl ExternalEmbedder {
    pub fn new(url: impl Into<String>, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder().timeout_global(Some(timeout)).build().into();
        Self { url: url.into(), agent }
    }
}

impl Embedder for ExternalEmbedder {
    fn embed(&self, img: &Bitmap) -> Result<Vec<f64>, EmbedError> {
        let png = img.to_png().map_err(|e| EmbedError::Service(e.to_string()))?;
        let body = json!({"image": base64::engine::general_purpose::STANDARD.encode(png)});
        let v: Value = self
            .agent
            .post(&self.url)
            .send_json(&body)
            .map_err(|e| EmbedError::Service(e.to_string()))?
            .body_mut()
            .read_json()
            .map_err(|e| EmbedError::Service(e.to_string()))?;
        let arr = match &v {
            Value::Array(a) => a,
            Value::Object(o) => o.get("embedding").and_then(Value::as_array).ok_or(EmbedError::BadResponse)?,
            _ => return Err(EmbedError::BadResponse),
        };
        let vec: Option<Vec<f64>> = arr.iter().map(Value::as_f64).collect();
        vec.filter(|v| !v.is_empty()).ok_or(EmbedError::BadResponse)
    }

    fn identity(&self) -> &str {
        &self.url
    }
}
