//! Newline-delimited message protocol shared by the sensorimotor link,
//! scripted clients and the session service.
//!
//! Every message is one JSON object on one line with keys in the order
//! `seq`, `t`, `kind`, `payload`, `src`. Payload keys follow the declaration
//! order of the variant fields below; optional fields are omitted when absent.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::engagement::Phase;
use crate::sensorimotor::Mode;
use crate::world::Actor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Client,
    Engine,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Expect {
    Speech,
    Grounding,
    Look,
    Action,
}

impl fmt::Display for Expect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Expect::Speech => "speech",
            Expect::Grounding => "grounding",
            Expect::Look => "look",
            Expect::Action => "action",
        })
    }
}

/// Message kinds with their payloads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", deny_unknown_fields)]
pub enum Body {
    Utterance {
        who: Actor,
        text: String,
    },
    /// Raw head pose (`yaw`/`pitch`), a fused semantic look (`object`), or a
    /// robot head record.
    LookAt {
        who: Actor,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        object: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        yaw: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        pitch: Option<f64>,
    },
    Nod {
        who: Actor,
        start: u64,
        end: u64,
        probability: f64,
    },
    FaceFound {
        yaw: f64,
        pitch: f64,
    },
    FaceLost {},
    Approach {},
    Leave {},
    Pour {
        from: String,
        to: String,
    },
    TableReading {
        fill: f64,
    },
    Say {
        text: String,
        act: String,
        end_of_turn: bool,
        duration: u64,
    },
    GlanceAt {
        target: String,
        duration: u64,
    },
    PointAt {
        target: String,
        duration: u64,
    },
    Beat {},
    LookAway {},
    ExpectationSet {
        id: u64,
        expect: Expect,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        object: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        deadline: Option<u64>,
    },
    ExpectationCleared {
        id: u64,
        reason: String,
    },
    EngagementPhase {
        phase: Phase,
        rule: String,
    },
    ModeSelect {
        mode: Mode,
    },
    Error {
        code: String,
        detail: String,
    },
}

pub const KINDS: &[&str] = &[
    "Utterance",
    "LookAt",
    "Nod",
    "FaceFound",
    "FaceLost",
    "Approach",
    "Leave",
    "Pour",
    "TableReading",
    "Say",
    "GlanceAt",
    "PointAt",
    "Beat",
    "LookAway",
    "ExpectationSet",
    "ExpectationCleared",
    "EngagementPhase",
    "ModeSelect",
    "Error",
];

impl Body {
    pub fn kind(&self) -> &'static str {
        match self {
            Body::Utterance { .. } => "Utterance",
            Body::LookAt { .. } => "LookAt",
            Body::Nod { .. } => "Nod",
            Body::FaceFound { .. } => "FaceFound",
            Body::FaceLost {} => "FaceLost",
            Body::Approach {} => "Approach",
            Body::Leave {} => "Leave",
            Body::Pour { .. } => "Pour",
            Body::TableReading { .. } => "TableReading",
            Body::Say { .. } => "Say",
            Body::GlanceAt { .. } => "GlanceAt",
            Body::PointAt { .. } => "PointAt",
            Body::Beat {} => "Beat",
            Body::LookAway {} => "LookAway",
            Body::ExpectationSet { .. } => "ExpectationSet",
            Body::ExpectationCleared { .. } => "ExpectationCleared",
            Body::EngagementPhase { .. } => "EngagementPhase",
            Body::ModeSelect { .. } => "ModeSelect",
            Body::Error { .. } => "Error",
        }
    }

    /// Kinds only the engine produces.
    pub fn is_engine_only(&self) -> bool {
        matches!(
            self,
            Body::TableReading { .. }
                | Body::Say { .. }
                | Body::GlanceAt { .. }
                | Body::PointAt { .. }
                | Body::Beat {}
                | Body::LookAway {}
                | Body::ExpectationSet { .. }
                | Body::ExpectationCleared { .. }
                | Body::EngagementPhase { .. }
                | Body::Error { .. }
        )
    }

    /// Head or wing command issued by the robot.
    pub fn is_motor(&self) -> bool {
        matches!(
            self,
            Body::LookAt { who: Actor::Robot, .. }
                | Body::Nod { who: Actor::Robot, .. }
                | Body::GlanceAt { .. }
                | Body::PointAt { .. }
                | Body::Beat {}
                | Body::LookAway {}
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Message {
    pub seq: u64,
    pub t: u64,
    #[serde(flatten)]
    pub body: Body,
    pub src: Source,
}

impl Message {
    pub fn new(seq: u64, t: u64, src: Source, body: Body) -> Self {
        Message { seq, t, body, src }
    }

    pub fn kind(&self) -> &'static str {
        self.body.kind()
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DecodeError {
    #[error("malformed line at byte {offset}: {msg}")]
    Syntax { offset: usize, msg: String },
    #[error("unknown message kind `{0}`")]
    UnknownKind(String),
    #[error("missing field `{0}`")]
    MissingField(String),
    #[error("invalid payload: {0}")]
    InvalidPayload(String),
    #[error("seq {got} does not follow {last} from {src:?}")]
    SeqRegression { src: Source, last: u64, got: u64 },
    #[error("time {got} precedes {last} from {src:?}")]
    TimeRegression { src: Source, last: u64, got: u64 },
}

impl DecodeError {
    /// Short code carried in `Error` messages.
    pub fn code(&self) -> &'static str {
        match self {
            DecodeError::Syntax { .. } => "syntax",
            DecodeError::UnknownKind(_) => "unknown_kind",
            DecodeError::MissingField(_) => "missing_field",
            DecodeError::InvalidPayload(_) => "invalid_payload",
            DecodeError::SeqRegression { .. } => "seq_regression",
            DecodeError::TimeRegression { .. } => "time_regression",
        }
    }
}

/// Encodes a message as one newline-terminated line.
pub fn encode(msg: &Message) -> String {
    let mut line = serde_json::to_string(msg).expect("message serialization is infallible");
    line.push('\n');
    line
}

fn missing_field(msg: &str) -> Option<String> {
    let rest = msg.strip_prefix("missing field `")?;
    Some(rest[..rest.find('`')?].to_string())
}

fn field<'a>(obj: &'a serde_json::Map<String, Value>, name: &str) -> Result<&'a Value, DecodeError> {
    obj.get(name).ok_or_else(|| DecodeError::MissingField(name.to_string()))
}

fn u64_field(obj: &serde_json::Map<String, Value>, name: &str) -> Result<u64, DecodeError> {
    field(obj, name)?
        .as_u64()
        .ok_or_else(|| DecodeError::InvalidPayload(format!("`{name}` must be a nonnegative integer")))
}

/// Decodes one line (trailing newline optional) without sequence checks.
pub fn decode(line: &str) -> Result<Message, DecodeError> {
    let line = line.strip_suffix('\n').unwrap_or(line);
    let line = line.strip_suffix('\r').unwrap_or(line);
    let value: Value = serde_json::from_str(line).map_err(|e| DecodeError::Syntax {
        offset: line
            .split_inclusive('\n')
            .take(e.line().saturating_sub(1))
            .map(str::len)
            .sum::<usize>()
            + e.column().saturating_sub(1),
        msg: e.to_string(),
    })?;
    let Value::Object(mut obj) = value else {
        return Err(DecodeError::Syntax { offset: 0, msg: "expected an object".into() });
    };
    if let Some(extra) = obj.keys().find(|k| !matches!(k.as_str(), "seq" | "t" | "kind" | "payload" | "src")) {
        return Err(DecodeError::InvalidPayload(format!("unknown envelope field `{extra}`")));
    }
    let seq = u64_field(&obj, "seq")?;
    let t = u64_field(&obj, "t")?;
    let kind = field(&obj, "kind")?
        .as_str()
        .ok_or_else(|| DecodeError::InvalidPayload("`kind` must be a string".into()))?
        .to_string();
    if !KINDS.contains(&kind.as_str()) {
        return Err(DecodeError::UnknownKind(kind));
    }
    let src: Source = serde_json::from_value(field(&obj, "src")?.clone())
        .map_err(|e| DecodeError::InvalidPayload(format!("`src`: {e}")))?;
    let payload = obj.remove("payload").ok_or_else(|| DecodeError::MissingField("payload".into()))?;
    let mut tagged = serde_json::Map::new();
    tagged.insert("kind".into(), Value::String(kind));
    tagged.insert("payload".into(), payload);
    let body: Body = serde_json::from_value(Value::Object(tagged)).map_err(|e| {
        let msg = e.to_string();
        match missing_field(&msg) {
            Some(f) => DecodeError::MissingField(f),
            None => DecodeError::InvalidPayload(msg),
        }
    })?;
    Ok(Message { seq, t, body, src })
}

impl FromStr for Message {
    type Err = DecodeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        decode(s)
    }
}

/// Stateful decoder enforcing strictly increasing `seq` and nondecreasing
/// `t` per sender.
#[derive(Debug, Default, Clone)]
pub struct Decoder {
    last: HashMap<Source, (u64, u64)>,
}

impl Decoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn decode(&mut self, line: &str) -> Result<Message, DecodeError> {
        let msg = decode(line)?;
        self.check(&msg)?;
        Ok(msg)
    }

    /// Validates ordering for an already-decoded message and records it.
    pub fn check(&mut self, msg: &Message) -> Result<(), DecodeError> {
        if let Some(&(seq, t)) = self.last.get(&msg.src) {
            if msg.seq <= seq {
                return Err(DecodeError::SeqRegression { src: msg.src, last: seq, got: msg.seq });
            }
            if msg.t < t {
                return Err(DecodeError::TimeRegression { src: msg.src, last: t, got: msg.t });
            }
        }
        self.last.insert(msg.src, (msg.seq, msg.t));
        Ok(())
    }
}

/// Parses a whole trace file, one message per nonblank line.
pub fn decode_trace(text: &str) -> Result<Vec<Message>, (usize, DecodeError)> {
    let mut dec = Decoder::new();
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| dec.decode(l).map_err(|e| (i + 1, e)))
        .collect()
}

pub fn encode_trace(msgs: &[Message]) -> String {
    msgs.iter().map(encode).collect()
}

/// Assigns consecutive sequence numbers for one sender.
#[derive(Debug, Clone)]
pub struct Sequencer {
    src: Source,
    next: u64,
}

impl Sequencer {
    pub fn new(src: Source) -> Self {
        Sequencer { src, next: 1 }
    }

    pub fn stamp(&mut self, t: u64, body: Body) -> Message {
        let msg = Message::new(self.next, t, self.src, body);
        self.next += 1;
        msg
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn say() -> Message {
        Message::new(
            7,
            1200,
            Source::Engine,
            Body::Say { text: "So long!".into(), act: "say".into(), end_of_turn: true, duration: 600 },
        )
    }

    #[test]
    fn canonical_key_order() {
        assert_eq!(
            encode(&say()),
            "{\"seq\":7,\"t\":1200,\"kind\":\"Say\",\"payload\":{\"text\":\"So long!\",\"act\":\"say\",\"end_of_turn\":true,\"duration\":600},\"src\":\"engine\"}\n"
        );
    }

    #[test]
    fn permuted_input_decodes_identically() {
        let line = r#"{"src":"engine","payload":{"duration":600,"end_of_turn":true,"text":"So long!","act":"say"},"kind":"Say","t":1200,"seq":7}"#;
        assert_eq!(decode(line).unwrap(), say());
    }

    #[test]
    fn syntax_error_offset() {
        let err = decode(r#"{"seq":1,"t":0,"kind":"Beat" "payload":{}}"#).unwrap_err();
        assert!(matches!(err, DecodeError::Syntax { offset: 29, .. }), "{err:?}");
    }

    #[test]
    fn unknown_kind() {
        let err = decode(r#"{"seq":1,"t":0,"kind":"Teleport","payload":{},"src":"client"}"#).unwrap_err();
        assert_eq!(err, DecodeError::UnknownKind("Teleport".into()));
    }

    #[test]
    fn missing_fields() {
        let err = decode(r#"{"seq":1,"t":0,"kind":"Nod","payload":{"who":"human","start":0,"end":500},"src":"client"}"#)
            .unwrap_err();
        assert_eq!(err, DecodeError::MissingField("probability".into()));
        let err = decode(r#"{"seq":1,"kind":"Beat","payload":{},"src":"client"}"#).unwrap_err();
        assert_eq!(err, DecodeError::MissingField("t".into()));
    }

    #[test]
    fn unknown_payload_field_rejected() {
        let err = decode(r#"{"seq":1,"t":0,"kind":"Beat","payload":{"x":1},"src":"client"}"#).unwrap_err();
        assert_eq!(err.code(), "invalid_payload");
    }

    #[test]
    fn seq_regression_per_sender() {
        let mut d = Decoder::new();
        d.decode(r#"{"seq":2,"t":0,"kind":"Beat","payload":{},"src":"engine"}"#).unwrap();
        d.decode(r#"{"seq":1,"t":0,"kind":"Approach","payload":{},"src":"client"}"#).unwrap();
        let err = d.decode(r#"{"seq":2,"t":5,"kind":"Beat","payload":{},"src":"engine"}"#).unwrap_err();
        assert_eq!(err, DecodeError::SeqRegression { src: Source::Engine, last: 2, got: 2 });
        let err = d.decode(r#"{"seq":3,"t":1,"kind":"Beat","payload":{},"src":"engine"}"#);
        assert!(err.is_ok());
        let err = d.decode(r#"{"seq":4,"t":0,"kind":"Beat","payload":{},"src":"engine"}"#).unwrap_err();
        assert_eq!(err.code(), "time_regression");
    }

    #[test]
    fn nod_window_fields() {
        let m = decode(r#"{"seq":3,"t":4100,"kind":"Nod","payload":{"who":"human","start":3600,"end":4100,"probability":0.93},"src":"client"}"#)
            .unwrap();
        assert_eq!(m.body, Body::Nod { who: Actor::Human, start: 3600, end: 4100, probability: 0.93 });
    }

    #[test]
    fn optional_fields_omitted() {
        let m = Message::new(
            1,
            0,
            Source::Client,
            Body::LookAt { who: Actor::Human, object: None, yaw: Some(-40.0), pitch: Some(-20.5) },
        );
        let line = encode(&m);
        assert!(!line.contains("object"));
        assert_eq!(decode(&line).unwrap(), m);
    }

    #[test]
    fn every_kind_is_listed() {
        let bodies = [
            Body::FaceLost {},
            Body::Approach {},
            Body::Leave {},
            Body::Beat {},
            Body::LookAway {},
        ];
        for b in bodies {
            assert!(KINDS.contains(&b.kind()));
        }
        assert_eq!(KINDS.len(), 19);
    }
}
