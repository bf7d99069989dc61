use serde_json::{json, Value};

use crate::annopipe::{encode_parts, fill, ClientError, HttpVlmClient, RequestPart, Segment};
use crate::partdata::{AnnotatedSketch, PartSpec};
use crate::raster::Bitmap;
use crate::stroke::{emit_strokes, verify_response, CubicStroke, Rounding, SketchRng, StrokeSequence};

/// The five inputs of one drawing turn.
#[derive(Debug, Clone, PartialEq)]
pub struct TurnInput {
    pub canvas: Bitmap,
    pub caption: String,
    pub next_part: PartSpec,
    pub drawn: Vec<(PartSpec, StrokeSequence)>,
    /// Parts still to come after `next_part`.
    pub remaining: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BackendError {
    #[error("backend returned no usable strokes after {attempts} attempt(s): {detail}")]
    Invalid { attempts: usize, detail: String },
    #[error("record {record} has no part {part}")]
    NoSuchPart { record: String, part: String },
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error("unknown backend {0:?}; use \"random\", \"replay:<record-id>\" or \"vlm\"")]
    Unknown(String),
}

/// Produces the stroke text for the next part.
pub trait Backend: Send + Sync {
    fn name(&self) -> String;
    fn next_part(&self, input: &TurnInput) -> Result<String, BackendError>;
}

/// Parsed backend selector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BackendSpec {
    Random,
    Replay(String),
    Vlm,
}

impl std::str::FromStr for BackendSpec {
    type Err = BackendError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "random" => Ok(Self::Random),
            "vlm" => Ok(Self::Vlm),
            _ => match s.strip_prefix("replay:") {
                Some(id) if !id.is_empty() => Ok(Self::Replay(id.to_string())),
                _ => Err(BackendError::Unknown(s.to_string())),
            },
        }
    }
}

/// Emits a record's own strokes for the requested part label.
pub struct ReplayBackend {
    record: AnnotatedSketch,
}

impl ReplayBackend {
    pub fn new(record: AnnotatedSketch) -> Self {
        Self { record }
    }
}

impl Backend for ReplayBackend {
    fn name(&self) -> String {
        format!("replay:{}", self.record.id)
    }

    fn next_part(&self, input: &TurnInput) -> Result<String, BackendError> {
        let strokes = self.record.part_strokes(input.next_part.label);
        if strokes.is_empty() {
            return Err(BackendError::NoSuchPart {
                record: self.record.id.clone(),
                part: input.next_part.label.to_string(),
            });
        }
        Ok(emit_strokes(&strokes, Rounding::None))
    }
}

/// One to three uniform random strokes, a pure function of the seed and
/// the turn's caption, part and position.
pub struct RandomBackend {
    seed: u64,
}

impl RandomBackend {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    /// Seeded from a session id, so a session redraws the same strokes for
    /// the same inputs and each branch draws its own.
    pub fn for_session(id: &str) -> Self {
        Self::new(fnv(&[id.as_bytes()]))
    }
}

/// FNV-1a over the given byte strings, separated.
pub(crate) fn fnv(parts: &[&[u8]]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for p in parts {
        for &b in p.iter().chain(&[0xff]) {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    }
    h
}

impl Backend for RandomBackend {
    fn name(&self) -> String {
        "random".into()
    }

    fn next_part(&self, input: &TurnInput) -> Result<String, BackendError> {
        let h = fnv(&[
            &self.seed.to_le_bytes(),
            input.caption.as_bytes(),
            input.next_part.label.to_string().as_bytes(),
            input.next_part.description.as_bytes(),
            &(input.drawn.len() as u64).to_le_bytes(),
        ]);
        let mut rng = SketchRng::new(h);
        let (w, ht) = (u64::from(input.canvas.width()), u64::from(input.canvas.height()));
        let n = 1 + rng.below_inclusive(2) as usize;
        let strokes: Vec<CubicStroke> = (0..n)
            .map(|_| {
                let mut c = [0i32; 8];
                for (i, v) in c.iter_mut().enumerate() {
                    *v = rng.below_inclusive(if i % 2 == 0 { w } else { ht }) as i32;
                }
                CubicStroke::from_coords(c)
            })
            .collect();
        Ok(emit_strokes(&StrokeSequence(strokes), Rounding::None))
    }
}

/// Sends a request body and returns the reply text.
pub trait Transport: Send + Sync {
    fn send(&self, body: &Value) -> Result<String, ClientError>;
    fn model(&self) -> &str;
}

impl Transport for HttpVlmClient {
    fn send(&self, body: &Value) -> Result<String, ClientError> {
        self.post(body)
    }

    fn model(&self) -> &str {
        HttpVlmClient::model(self)
    }
}

pub const NEXT_PART_TEMPLATE: &str = include_str!("../../prompts/next_part.txt");

/// Remote model adapter. The request body carries the filled prompt with
/// the canvas as an image part, plus the five inputs as structured fields:
/// `{"model", "task": "next_part", "parts", "inputs": {"canvas",
/// "caption", "next_part", "drawn_parts", "remaining"}}`. A reply that is
/// not a valid stroke list is re-requested up to `max_retries` times.
pub struct VlmBackend<T: Transport> {
    transport: T,
    template: String,
    pub max_retries: usize,
}

impl<T: Transport> VlmBackend<T> {
    pub fn new(transport: T) -> Self {
        Self { transport, template: NEXT_PART_TEMPLATE.to_string(), max_retries: 2 }
    }

    pub fn with_template(mut self, template: impl Into<String>) -> Self {
        self.template = template.into();
        self
    }

    pub fn request_body(&self, input: &TurnInput) -> Result<Value, ClientError> {
        let drawn: Vec<Value> = input
            .drawn
            .iter()
            .map(|(spec, s)| json!({"label": spec.label, "description": spec.description, "paths": emit_strokes(s, Rounding::None)}))
            .collect();
        let drawn_json = serde_json::to_string_pretty(&drawn).unwrap_or_default();
        let next = format!("{}: {}", input.next_part.label, input.next_part.description);
        let (w, h, remaining) =
            (input.canvas.width().to_string(), input.canvas.height().to_string(), input.remaining.to_string());
        let vars = [
            ("caption", input.caption.as_str()),
            ("width", w.as_str()),
            ("height", h.as_str()),
            ("drawn_parts_json", drawn_json.as_str()),
            ("next_part", next.as_str()),
            ("remaining", remaining.as_str()),
        ];
        let parts: Vec<RequestPart> = fill(&self.template, &vars)
            .into_iter()
            .map(|seg| match seg {
                Segment::Text(t) => RequestPart::Text(t),
                Segment::Image(_) => RequestPart::Image(input.canvas.clone()),
            })
            .collect();
        let canvas = &encode_parts(&[RequestPart::Image(input.canvas.clone())])?[0];
        Ok(json!({
            "model": self.transport.model(),
            "task": "next_part",
            "parts": encode_parts(&parts)?,
            "inputs": {
                "canvas": {"mime_type": canvas["mime_type"], "data": canvas["data"]},
                "caption": input.caption,
                "next_part": input.next_part,
                "drawn_parts": drawn,
                "remaining": input.remaining,
            },
        }))
    }
}

impl<T: Transport> Backend for VlmBackend<T> {
    fn name(&self) -> String {
        format!("vlm:{}", self.transport.model())
    }

    fn next_part(&self, input: &TurnInput) -> Result<String, BackendError> {
        let body = self.request_body(input)?;
        let mut detail = String::new();
        for _ in 0..=self.max_retries {
            let reply = self.transport.send(&body)?;
            let verdict = verify_response(&reply);
            if verdict.is_valid() {
                return Ok(reply);
            }
            detail = format!("{verdict:?}");
        }
        Err(BackendError::Invalid { attempts: self.max_retries + 1, detail })
    }
}
