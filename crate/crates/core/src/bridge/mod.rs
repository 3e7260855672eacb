//! Newline-delimited JSON protocol that lets another process act as a
//! rollout oracle.
//!
//! Every message is one JSON object on one line:
//!
//! ```text
//! → {"type":"hello","version":1}
//! ← {"type":"spec","version":1,"n_actuators":8,"horizon":1000,"deterministic":false}
//! → {"type":"rollout","delta":[...],"episodes":100,"seed":12345}
//! ← {"type":"result","rewards":[...],"steps":[...]}
//! ← {"type":"error","message":"<text>"}
//! ```
//!
//! Unknown fields are ignored. Requests on one connection are answered in
//! order, one reply each.

mod client;
mod server;

use serde::{Deserialize, Serialize};

use crate::error::{AttackError, Result};

pub use client::{connect_remote_oracle, connect_remote_oracle_with_timeout, Endpoint, RemoteOracle};
pub use server::{handle_line, serve_connection, serve_oracle, serve_tcp, ListenEndpoint};

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Message {
    Hello {
        version: u32,
    },
    Spec {
        version: u32,
        n_actuators: usize,
        horizon: usize,
        deterministic: bool,
    },
    Rollout {
        delta: Vec<f64>,
        episodes: usize,
        seed: u64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        version: Option<u32>,
    },
    Result {
        rewards: Vec<f64>,
        steps: Vec<usize>,
    },
    Error {
        message: String,
    },
}

impl Message {
    pub fn error(message: impl Into<String>) -> Self {
        Message::Error {
            message: message.into(),
        }
    }

    /// One line of wire format, without the trailing newline.
    pub fn to_line(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| AttackError::Protocol(format!("encode: {e}")))
    }

    pub fn parse(line: &str) -> Result<Self> {
        serde_json::from_str(line.trim_end_matches(['\r', '\n']))
            .map_err(|e| AttackError::Protocol(format!("parse error: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wire_format_matches_documented_shapes() {
        let hello = Message::Hello { version: 1 };
        assert_eq!(hello.to_line().unwrap(), r#"{"type":"hello","version":1}"#);
        let spec = Message::Spec {
            version: 1,
            n_actuators: 8,
            horizon: 1000,
            deterministic: false,
        };
        assert_eq!(
            spec.to_line().unwrap(),
            r#"{"type":"spec","version":1,"n_actuators":8,"horizon":1000,"deterministic":false}"#
        );
        let req = Message::Rollout {
            delta: vec![0.5, -0.25],
            episodes: 100,
            seed: 12345,
            version: None,
        };
        assert_eq!(
            req.to_line().unwrap(),
            r#"{"type":"rollout","delta":[0.5,-0.25],"episodes":100,"seed":12345}"#
        );
        let res = Message::Result {
            rewards: vec![1.5],
            steps: vec![10],
        };
        assert_eq!(
            res.to_line().unwrap(),
            r#"{"type":"result","rewards":[1.5],"steps":[10]}"#
        );
        assert_eq!(
            Message::error("x").to_line().unwrap(),
            r#"{"type":"error","message":"x"}"#
        );
    }

    #[test]
    fn unknown_fields_are_ignored() {
        let m = Message::parse(r#"{"type":"hello","version":1,"client":"py"}"#).unwrap();
        assert_eq!(m, Message::Hello { version: 1 });
    }

    #[test]
    fn seeds_and_doubles_survive_exactly() {
        let delta = vec![0.1 + 0.2, -1.0 / 3.0, 5e-324, 0.49999999999999994];
        let req = Message::Rollout {
            delta: delta.clone(),
            episodes: 1,
            seed: u64::MAX,
            version: None,
        };
        match Message::parse(&req.to_line().unwrap()).unwrap() {
            Message::Rollout { delta: back, seed, .. } => {
                assert_eq!(seed, u64::MAX);
                for (a, b) in delta.iter().zip(&back) {
                    assert_eq!(a.to_bits(), b.to_bits());
                }
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn garbage_is_a_parse_error() {
        let err = Message::parse("not json").unwrap_err();
        assert!(err.to_string().contains("parse"));
    }
}
