//! Wire vocabulary exchanged between agents and the world node.
//!
//! One frame is one JSON-encoded [`Envelope`] on its own line. Nothing on the
//! wire says whether an agent is human or artificial: the roster held by the
//! operator is the only source of that information.

mod token;

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::clock::Millis;

pub use token::{sign_token, verify_token, JoinToken, TokenError, TokenKey, DEFAULT_TOKEN_TTL_S, TOKEN_ALG};

pub type RoomId = String;

/// Identity of a connected agent. `display_name` never appears inside a room.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentId {
    pub id: String,
    pub display_name: String,
}

/// Anonymous per-round label: `A`, `B`, `C`, `D`, ... up to `Z`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ProxyLabel(char);

impl ProxyLabel {
    pub const MAX_ROOM_SIZE: usize = 26;

    /// The label for seat `index` (0 → `A`).
    pub fn from_index(index: usize) -> Option<Self> {
        (index < Self::MAX_ROOM_SIZE).then(|| Self((b'A' + index as u8) as char))
    }

    pub fn parse(s: &str) -> Option<Self> {
        let mut chars = s.chars();
        match (chars.next(), chars.next()) {
            (Some(c), None) if c.is_ascii_uppercase() => Some(Self(c)),
            _ => None,
        }
    }

    pub fn as_char(self) -> char {
        self.0
    }

    /// The first `n` labels in alphabetical order.
    pub fn first(n: usize) -> Vec<Self> {
        (0..n).filter_map(Self::from_index).collect()
    }
}

impl fmt::Display for ProxyLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl Serialize for ProxyLabel {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut buf = [0u8; 4];
        s.serialize_str(self.0.encode_utf8(&mut buf))
    }
}

impl<'de> Deserialize<'de> for ProxyLabel {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        ProxyLabel::parse(&s).ok_or_else(|| serde::de::Error::custom(format!("invalid proxy label {s:?}")))
    }
}

/// Self-reported disciplinary background.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Background {
    ComputingAndDigital,
    HumanitiesAndSocial,
    Medicine,
    FormalAndPhysical,
    Other(String),
}

impl Background {
    pub const NAMED: [&'static str; 4] = [
        "computing_and_digital",
        "humanities_and_social",
        "medicine",
        "formal_and_physical",
    ];

    /// Parses the wire form: one of [`Background::NAMED`] or `other:<text>`.
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "computing_and_digital" => Some(Self::ComputingAndDigital),
            "humanities_and_social" => Some(Self::HumanitiesAndSocial),
            "medicine" => Some(Self::Medicine),
            "formal_and_physical" => Some(Self::FormalAndPhysical),
            _ => {
                let rest = s.strip_prefix("other:")?.trim();
                (!rest.is_empty()).then(|| Self::Other(rest.to_owned()))
            }
        }
    }

    pub fn wire_name(&self) -> String {
        match self {
            Self::ComputingAndDigital => Self::NAMED[0].into(),
            Self::HumanitiesAndSocial => Self::NAMED[1].into(),
            Self::Medicine => Self::NAMED[2].into(),
            Self::FormalAndPhysical => Self::NAMED[3].into(),
            Self::Other(s) => format!("other:{s}"),
        }
    }

    /// Human-readable group name used in reports. All `Other` answers share a group.
    pub fn group_name(&self) -> &'static str {
        match self {
            Self::ComputingAndDigital => "Computing & Digital Technologies",
            Self::HumanitiesAndSocial => "Humanities & Social Sciences",
            Self::Medicine => "Medicine",
            Self::FormalAndPhysical => "Formal & Physical Sciences",
            Self::Other(_) => "Other",
        }
    }
}

impl Serialize for Background {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.wire_name())
    }
}

impl<'de> Deserialize<'de> for Background {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Background::parse(&s).ok_or_else(|| serde::de::Error::custom(format!("unknown background {s:?}")))
    }
}

/// Profile form as it travels on the wire, before validation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProfileSubmission {
    pub background: String,
    pub ai_experience: i64,
}

/// Validated profile.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProfileForm {
    pub background: Background,
    /// Self-reported experience with AI systems, 1 (none) to 5 (daily use).
    pub ai_experience: u8,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid profile form: {0}")]
pub struct InvalidForm(pub String);

impl ProfileForm {
    pub fn new(background: Background, ai_experience: u8) -> Self {
        Self { background, ai_experience }
    }

    pub fn validate(submission: &ProfileSubmission) -> Result<Self, InvalidForm> {
        let background = Background::parse(&submission.background)
            .ok_or_else(|| InvalidForm(format!("unknown background {:?}", submission.background)))?;
        if !(1..=5).contains(&submission.ai_experience) {
            return Err(InvalidForm(format!(
                "ai_experience {} outside 1..=5",
                submission.ai_experience
            )));
        }
        Ok(Self {
            background,
            ai_experience: submission.ai_experience as u8,
        })
    }

    pub fn to_submission(&self) -> ProfileSubmission {
        ProfileSubmission {
            background: self.background.wire_name(),
            ai_experience: self.ai_experience as i64,
        }
    }
}

/// A participant's end-of-round answer: the peers believed to be human.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Verdict {
    pub judged_human: BTreeSet<ProxyLabel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub comment: Option<String>,
}

impl Verdict {
    pub fn new(judged_human: impl IntoIterator<Item = ProxyLabel>) -> Self {
        Self {
            judged_human: judged_human.into_iter().collect(),
            comment: None,
        }
    }

    pub fn with_comment(mut self, comment: impl Into<String>) -> Self {
        self.comment = Some(comment.into());
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    AuthFailed,
    MalformedFrame,
    UnknownVariant,
    NotJoined,
    InvalidForm,
    NotInRoom,
    RoomClosed,
    MessageTruncated,
    SurveyClosed,
    Superseded,
    Unexpected,
    #[serde(other)]
    Unknown,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type")]
pub enum Payload {
    Join {
        agent_id: String,
        display_name: String,
    },
    Welcome {
        token: JoinToken,
        overview: String,
    },
    ProfileFormRequest {
        backgrounds: Vec<String>,
        ai_experience_min: u8,
        ai_experience_max: u8,
    },
    ProfileSubmit {
        form: ProfileSubmission,
    },
    EnterHall,
    RoomStart {
        room_id: RoomId,
        my_proxy: ProxyLabel,
        peer_proxies: Vec<ProxyLabel>,
        deadline: Millis,
    },
    ChatText {
        room_id: RoomId,
        text: String,
    },
    RoomRelay {
        room_id: RoomId,
        from_proxy: ProxyLabel,
        text: String,
    },
    SurveyPrompt {
        room_id: RoomId,
        options: Vec<ProxyLabel>,
    },
    SurveySubmit {
        room_id: RoomId,
        verdict: Verdict,
    },
    RoundResult {
        room_id: RoomId,
        recorded: bool,
    },
    Leave,
    Ping,
    Error {
        code: ErrorCode,
        message: String,
    },
}

/// Every variant tag this build understands.
pub const PAYLOAD_KINDS: [&str; 14] = [
    "Join",
    "Welcome",
    "ProfileFormRequest",
    "ProfileSubmit",
    "EnterHall",
    "RoomStart",
    "ChatText",
    "RoomRelay",
    "SurveyPrompt",
    "SurveySubmit",
    "RoundResult",
    "Leave",
    "Ping",
    "Error",
];

impl Payload {
    pub fn kind(&self) -> &'static str {
        match self {
            Payload::Join { .. } => "Join",
            Payload::Welcome { .. } => "Welcome",
            Payload::ProfileFormRequest { .. } => "ProfileFormRequest",
            Payload::ProfileSubmit { .. } => "ProfileSubmit",
            Payload::EnterHall => "EnterHall",
            Payload::RoomStart { .. } => "RoomStart",
            Payload::ChatText { .. } => "ChatText",
            Payload::RoomRelay { .. } => "RoomRelay",
            Payload::SurveyPrompt { .. } => "SurveyPrompt",
            Payload::SurveySubmit { .. } => "SurveySubmit",
            Payload::RoundResult { .. } => "RoundResult",
            Payload::Leave => "Leave",
            Payload::Ping => "Ping",
            Payload::Error { .. } => "Error",
        }
    }

    pub fn error(code: ErrorCode, message: impl Into<String>) -> Self {
        Payload::Error {
            code,
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Envelope {
    /// Strictly increasing per sender.
    pub seq: u64,
    pub sender: String,
    /// Absent only on a first-contact `Join`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token: Option<JoinToken>,
    pub payload: Payload,
    pub sent_at: Millis,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProtocolError {
    #[error("malformed frame: {0}")]
    MalformedFrame(String),
    #[error("unknown payload variant {0:?}")]
    UnknownVariant(String),
}

/// Serializes an envelope as one JSON line (without the trailing newline).
pub fn encode(envelope: &Envelope) -> Vec<u8> {
    serde_json::to_vec(envelope).expect("envelopes always serialize")
}

/// [`encode`] as a `String`, ready to be written followed by `\n`.
pub fn encode_line(envelope: &Envelope) -> String {
    serde_json::to_string(envelope).expect("envelopes always serialize")
}

pub fn decode(bytes: &[u8]) -> Result<Envelope, ProtocolError> {
    let text = std::str::from_utf8(bytes).map_err(|e| ProtocolError::MalformedFrame(e.to_string()))?;
    let text = text.trim_end_matches(['\n', '\r']);
    if text.trim().is_empty() {
        return Err(ProtocolError::MalformedFrame("empty frame".into()));
    }
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| ProtocolError::MalformedFrame(e.to_string()))?;
    let tag = value
        .get("payload")
        .and_then(|p| p.get("type"))
        .and_then(|t| t.as_str())
        .ok_or_else(|| ProtocolError::MalformedFrame("missing payload type".into()))?;
    if !PAYLOAD_KINDS.contains(&tag) {
        return Err(ProtocolError::UnknownVariant(tag.to_owned()));
    }
    serde_json::from_value(value).map_err(|e| ProtocolError::MalformedFrame(e.to_string()))
}
