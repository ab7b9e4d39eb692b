//! Append-only audit log of every message crossing the teacher channel.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    WhiteBox,
    BlackBox,
}

impl Scenario {
    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::WhiteBox => "white",
            Scenario::BlackBox => "black",
        }
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            Scenario::WhiteBox => 0,
            Scenario::BlackBox => 1,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Scenario::WhiteBox),
            1 => Some(Scenario::BlackBox),
            _ => None,
        }
    }
}

impl std::str::FromStr for Scenario {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "white" | "whitebox" | "white-box" | "white_box" => Ok(Scenario::WhiteBox),
            "black" | "blackbox" | "black-box" | "black_box" => Ok(Scenario::BlackBox),
            other => Err(format!("unknown scenario `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RiskTag {
    Low,
    Mid,
}

impl RiskTag {
    pub(crate) fn code(self) -> u8 {
        match self {
            RiskTag::Low => 0,
            RiskTag::Mid => 1,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(RiskTag::Low),
            1 => Some(RiskTag::Mid),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageKind {
    /// Generated batch uploaded by the client.
    FeedbackRequest,
    /// Softmax and regularizer feedback only.
    FeedbackResponse,
    /// Feedback that includes the cross-entropy gradient through the teacher.
    CeGrad,
    WeightRequest,
    WeightBlob,
    Refusal,
    Error,
}

impl MessageKind {
    pub fn risk(self) -> RiskTag {
        match self {
            MessageKind::CeGrad | MessageKind::WeightBlob => RiskTag::Mid,
            _ => RiskTag::Low,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Up,
    Down,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RiskEntry {
    /// Logical timestamp: position in the session.
    pub seq: u64,
    pub direction: Direction,
    pub kind: MessageKind,
    pub bytes: u64,
    pub risk: RiskTag,
    pub scenario: Scenario,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RiskLog {
    entries: Vec<RiskEntry>,
}

impl RiskLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, direction: Direction, kind: MessageKind, bytes: usize, scenario: Scenario) -> &RiskEntry {
        let seq = self.entries.len() as u64;
        self.entries.push(RiskEntry {
            seq,
            direction,
            kind,
            bytes: bytes as u64,
            risk: kind.risk(),
            scenario,
        });
        self.entries.last().unwrap()
    }

    pub fn entries(&self) -> &[RiskEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn mid_risk_count(&self) -> usize {
        self.entries.iter().filter(|e| e.risk == RiskTag::Mid).count()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("risk log serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    /// Reads either the JSON document written by `to_json` or one entry per
    /// line as streamed by a serving teacher.
    pub fn parse(text: &str) -> Result<Self, serde_json::Error> {
        let trimmed = text.trim_start();
        if trimmed.starts_with('{') && serde_json::from_str::<RiskLog>(text).is_ok() {
            return serde_json::from_str(text);
        }
        let entries = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<Result<Vec<RiskEntry>, _>>()?;
        Ok(RiskLog { entries })
    }
}
