//! Per-slot behaviour of a single process.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::model::PacketId;

/// What a transmitting process puts on the channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Content {
    /// Control chatter: occupies the channel, carries no packet.
    Garbage,
    Packet(PacketId),
}

impl Content {
    /// Integer content code: 0 for garbage, `k` for packet `k`.
    pub fn code(self) -> i64 {
        match self {
            Content::Garbage => 0,
            Content::Packet(k) => k as i64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Action {
    Sleep,
    Listen,
    Transmit(Content),
}

/// Action without its payload; used for liveness bookkeeping.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ActionKind {
    Sleep,
    Listen,
    Transmit,
}

impl ActionKind {
    pub const ALL: [ActionKind; 3] = [ActionKind::Sleep, ActionKind::Listen, ActionKind::Transmit];

    pub fn as_str(self) -> &'static str {
        match self {
            ActionKind::Sleep => "sleep",
            ActionKind::Listen => "listen",
            ActionKind::Transmit => "transmit",
        }
    }
}

impl Action {
    pub fn kind(self) -> ActionKind {
        match self {
            Action::Sleep => ActionKind::Sleep,
            Action::Listen => ActionKind::Listen,
            Action::Transmit(_) => ActionKind::Transmit,
        }
    }

    pub fn is_active(self) -> bool {
        !matches!(self, Action::Sleep)
    }

    pub fn is_transmit(self) -> bool {
        matches!(self, Action::Transmit(_))
    }

    pub fn packet(self) -> Option<PacketId> {
        match self {
            Action::Transmit(Content::Packet(k)) => Some(k),
            _ => None,
        }
    }

    /// The `transmit` function value: −1 when silent, otherwise the content code.
    pub fn transmit_code(self) -> i64 {
        match self {
            Action::Transmit(c) => c.code(),
            _ => -1,
        }
    }

    /// The full domain of a cell for `packets` packets, in canonical order:
    /// sleep, listen, garbage, then packets ascending.
    pub fn domain(packets: usize) -> Vec<Action> {
        let mut d = vec![
            Action::Sleep,
            Action::Listen,
            Action::Transmit(Content::Garbage),
        ];
        d.extend((1..=packets).map(|k| Action::Transmit(Content::Packet(k))));
        d
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Action::Sleep => f.write_str("sleep"),
            Action::Listen => f.write_str("listen"),
            Action::Transmit(c) => write!(f, "tx:{}", c.code()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown action '{0}'")]
pub struct ParseActionError(pub String);

/// Parses `sleep`, `listen`, `tx:0` or `tx:<k>`. Range checks against a packet
/// count happen at the caller.
impl FromStr for Action {
    type Err = ParseActionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sleep" => Ok(Action::Sleep),
            "listen" => Ok(Action::Listen),
            _ => {
                let code = s
                    .strip_prefix("tx:")
                    .and_then(|c| c.parse::<usize>().ok())
                    .ok_or_else(|| ParseActionError(s.to_string()))?;
                Ok(Action::Transmit(match code {
                    0 => Content::Garbage,
                    k => Content::Packet(k),
                }))
            }
        }
    }
}

impl Serialize for Action {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Action {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn domain_has_m_plus_three_values() {
        for m in 0..5 {
            assert_eq!(Action::domain(m).len(), m + 3);
        }
    }

    #[test]
    fn text_codes() {
        for a in Action::domain(3) {
            assert_eq!(a.to_string().parse::<Action>().unwrap(), a);
        }
        assert_eq!(Action::Transmit(Content::Garbage).to_string(), "tx:0");
        assert!("tx:-1".parse::<Action>().is_err());
        assert!("transmit".parse::<Action>().is_err());
        assert_eq!(Action::Listen.transmit_code(), -1);
        assert_eq!(Action::Transmit(Content::Packet(2)).transmit_code(), 2);
    }
}
