use std::io::{self, BufRead, BufReader, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::{Arc, Mutex};
use std::thread;

use super::{Message, PROTOCOL_VERSION};
use crate::error::{AttackError, Result};
use crate::oracle::{rollout, RolloutOracle};
use crate::perturbation::TorquePerturbation;

/// Where a server listens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ListenEndpoint {
    /// `host:port`; each accepted connection gets its own thread.
    Tcp(String),
    /// This process's stdin/stdout, one connection.
    Stdio,
}

impl std::str::FromStr for ListenEndpoint {
    type Err = AttackError;

    /// Accepts `stdio`, `tcp:host:port` or bare `host:port`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "stdio" || s == "-" {
            return Ok(ListenEndpoint::Stdio);
        }
        let addr = s.strip_prefix("tcp:").unwrap_or(s);
        if addr
            .rsplit_once(':')
            .is_some_and(|(h, p)| !h.is_empty() && p.parse::<u16>().is_ok())
        {
            Ok(ListenEndpoint::Tcp(addr.to_owned()))
        } else {
            Err(AttackError::Config(format!(
                "listen address {s:?} is neither stdio nor host:port"
            )))
        }
    }
}

/// Serializes rollout calls for oracles that do not allow concurrency.
struct Gate(Option<Mutex<()>>);

impl Gate {
    fn for_oracle<O: RolloutOracle + ?Sized>(oracle: &O) -> Self {
        Gate((!oracle.spec().supports_concurrent_rollouts).then(|| Mutex::new(())))
    }

    fn run<T>(&self, f: impl FnOnce() -> T) -> T {
        match &self.0 {
            Some(m) => {
                let _guard = m.lock().unwrap_or_else(|p| p.into_inner());
                f()
            }
            None => f(),
        }
    }
}

/// Computes the reply to one request line.
pub fn handle_line<O: RolloutOracle + ?Sized>(oracle: &O, line: &str) -> Message {
    handle(oracle, line, &Gate(None))
}

fn handle<O: RolloutOracle + ?Sized>(oracle: &O, line: &str, gate: &Gate) -> Message {
    let msg = match Message::parse(line) {
        Ok(m) => m,
        Err(e) => return Message::error(e.to_string()),
    };
    match msg {
        Message::Hello { version } if version != PROTOCOL_VERSION => Message::error(format!(
            "unsupported protocol version {version} (server speaks {PROTOCOL_VERSION})"
        )),
        Message::Hello { .. } => {
            let spec = oracle.spec();
            Message::Spec {
                version: PROTOCOL_VERSION,
                n_actuators: spec.n_actuators,
                horizon: spec.horizon,
                deterministic: spec.deterministic,
            }
        }
        Message::Rollout { version: Some(v), .. } if v != PROTOCOL_VERSION => {
            Message::error(format!("unsupported protocol version {v}"))
        }
        Message::Rollout {
            delta, episodes, seed, ..
        } => {
            let result = TorquePerturbation::from_values(delta)
                .and_then(|pert| gate.run(|| rollout(oracle, &pert, episodes, seed)));
            match result {
                Ok(r) => Message::Result {
                    rewards: r.cumulative_rewards,
                    steps: r.episode_lengths,
                },
                Err(e) => Message::error(e.to_string()),
            }
        }
        other => Message::error(format!("unexpected message from client: {other:?}")),
    }
}

/// Answers requests from `reader` on `writer` until end of input.
pub fn serve_connection<O, R, W>(oracle: &O, reader: R, writer: W) -> Result<()>
where
    O: RolloutOracle + ?Sized,
    R: BufRead,
    W: Write,
{
    serve_gated(oracle, reader, writer, &Gate::for_oracle(oracle))
}

fn serve_gated<O, R, W>(oracle: &O, mut reader: R, mut writer: W, gate: &Gate) -> Result<()>
where
    O: RolloutOracle + ?Sized,
    R: BufRead,
    W: Write,
{
    let mut buf = Vec::new();
    loop {
        buf.clear();
        if reader.read_until(b'\n', &mut buf)? == 0 {
            return Ok(());
        }
        let reply = match std::str::from_utf8(&buf) {
            Ok(line) if line.trim().is_empty() => continue,
            Ok(line) => handle(oracle, line, gate),
            Err(e) => Message::error(format!("parse error: invalid UTF-8: {e}")),
        };
        writer.write_all(reply.to_line()?.as_bytes())?;
        writer.write_all(b"\n")?;
        writer.flush()?;
    }
}

/// Accepts connections forever, one thread per connection.
pub fn serve_tcp<O: RolloutOracle + 'static>(oracle: Arc<O>, listener: TcpListener) -> Result<()> {
    let gate = Arc::new(Gate::for_oracle(oracle.as_ref()));
    for stream in listener.incoming() {
        let stream = stream?;
        let oracle = Arc::clone(&oracle);
        let gate = Arc::clone(&gate);
        thread::spawn(move || {
            let _ = serve_stream(oracle.as_ref(), stream, &gate);
        });
    }
    Ok(())
}

fn serve_stream<O: RolloutOracle + ?Sized>(oracle: &O, stream: TcpStream, gate: &Gate) -> Result<()> {
    stream.set_nodelay(true)?;
    let reader = BufReader::new(stream.try_clone()?);
    serve_gated(oracle, reader, stream, gate)
}

/// Serves `oracle` on the endpoint until the connection (stdio) or the
/// listener (TCP) closes.
pub fn serve_oracle<O: RolloutOracle + 'static>(oracle: O, endpoint: &ListenEndpoint) -> Result<()> {
    match endpoint {
        ListenEndpoint::Stdio => {
            let stdin = io::stdin();
            let stdout = io::stdout();
            serve_connection(&oracle, stdin.lock(), stdout.lock())
        }
        ListenEndpoint::Tcp(addr) => {
            let listener =
                TcpListener::bind(addr).map_err(|e| AttackError::Connection(format!("cannot bind {addr}: {e}")))?;
            serve_tcp(Arc::new(oracle), listener)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::walker::{SurrogateWalker, WalkerConfig};

    #[test]
    fn listen_endpoints_parse() {
        assert_eq!("stdio".parse::<ListenEndpoint>().unwrap(), ListenEndpoint::Stdio);
        assert_eq!(
            "tcp:127.0.0.1:9000".parse::<ListenEndpoint>().unwrap(),
            ListenEndpoint::Tcp("127.0.0.1:9000".into())
        );
        assert_eq!(
            "0.0.0.0:1".parse::<ListenEndpoint>().unwrap(),
            ListenEndpoint::Tcp("0.0.0.0:1".into())
        );
        assert!("nowhere".parse::<ListenEndpoint>().is_err());
        assert!(":80".parse::<ListenEndpoint>().is_err());
    }

    fn walker() -> SurrogateWalker {
        SurrogateWalker::new(WalkerConfig::default()).unwrap()
    }

    #[test]
    fn hello_returns_walker_spec() {
        let reply = handle_line(&walker(), r#"{"type":"hello","version":1}"#);
        assert_eq!(
            reply,
            Message::Spec {
                version: 1,
                n_actuators: 8,
                horizon: 1000,
                deterministic: true
            }
        );
    }

    #[test]
    fn rollout_cardinality() {
        let line = r#"{"type":"rollout","delta":[0,0,0,0,0,0,0,0],"episodes":2,"seed":5}"#;
        match handle_line(&walker(), line) {
            Message::Result { rewards, steps } => {
                assert_eq!(rewards.len(), 2);
                assert_eq!(steps, vec![1000, 1000]);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn error_replies() {
        let w = walker();
        let msg = |m: Message| match m {
            Message::Error { message } => message,
            other => panic!("{other:?}"),
        };
        assert!(msg(handle_line(&w, "not json")).contains("parse"));
        assert!(msg(handle_line(&w, r#"{"type":"hello","version":2}"#)).contains("version"));
        assert!(msg(handle_line(
            &w,
            r#"{"type":"rollout","delta":[0.1],"episodes":1,"seed":0}"#
        ))
        .contains("dimension"));
        assert!(msg(handle_line(&w, r#"{"type":"result","rewards":[],"steps":[]}"#)).contains("unexpected"));
    }

    #[test]
    fn connection_survives_bad_lines() {
        let input = b"not json\n\n{\"type\":\"hello\",\"version\":1}\n\xff\xfe\n".to_vec();
        let mut out = Vec::new();
        serve_connection(&walker(), &input[..], &mut out).unwrap();
        let lines: Vec<Message> = String::from_utf8(out)
            .unwrap()
            .lines()
            .map(|l| Message::parse(l).unwrap())
            .collect();
        assert_eq!(lines.len(), 3);
        assert!(matches!(lines[0], Message::Error { .. }));
        assert!(matches!(lines[1], Message::Spec { .. }));
        assert!(matches!(&lines[2], Message::Error { message } if message.contains("parse")));
    }
}
