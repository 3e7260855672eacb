use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::process::{Child, Command, Stdio};
use std::str::FromStr;
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use super::{Message, PROTOCOL_VERSION};
use crate::error::{AttackError, Result};
use crate::oracle::{OracleSpec, RolloutOracle, RolloutResult};
use crate::perturbation::TorquePerturbation;

const DEFAULT_HANDSHAKE_TIMEOUT: Duration = Duration::from_secs(30);

/// A remote oracle to connect to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Endpoint {
    /// `host:port`.
    Tcp(String),
    /// Program and arguments of a server speaking the protocol on stdio.
    Command(Vec<String>),
}

impl FromStr for Endpoint {
    type Err = AttackError;

    /// Accepts `tcp:host:port`, bare `host:port`, or `exec:<command line>`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if let Some(cmd) = s.strip_prefix("exec:") {
            let argv: Vec<String> = cmd.split_whitespace().map(str::to_owned).collect();
            if argv.is_empty() {
                return Err(AttackError::Config("exec: endpoint needs a command".into()));
            }
            return Ok(Endpoint::Command(argv));
        }
        let addr = s.strip_prefix("tcp:").unwrap_or(s);
        if addr
            .rsplit_once(':')
            .is_some_and(|(h, p)| !h.is_empty() && p.parse::<u16>().is_ok())
        {
            Ok(Endpoint::Tcp(addr.to_owned()))
        } else {
            Err(AttackError::Config(format!(
                "endpoint {s:?} is neither host:port nor exec:<command>"
            )))
        }
    }
}

struct Connection {
    writer: Option<Box<dyn Write + Send>>,
    lines: Receiver<std::io::Result<String>>,
}

impl Connection {
    fn new<R: Read + Send + 'static>(reader: R, writer: Box<dyn Write + Send>) -> Self {
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            let mut reader = BufReader::new(reader);
            loop {
                let mut line = String::new();
                match reader.read_line(&mut line) {
                    Ok(0) => break,
                    Ok(_) => {
                        if tx.send(Ok(line)).is_err() {
                            break;
                        }
                    }
                    Err(e) => {
                        let _ = tx.send(Err(e));
                        break;
                    }
                }
            }
        });
        Self {
            writer: Some(writer),
            lines: rx,
        }
    }

    fn send(&mut self, msg: &Message) -> Result<()> {
        let writer = self
            .writer
            .as_mut()
            .ok_or_else(|| AttackError::Oracle("connection closed".into()))?;
        let mut line = msg.to_line()?;
        line.push('\n');
        writer
            .write_all(line.as_bytes())
            .and_then(|_| writer.flush())
            .map_err(|e| AttackError::Oracle(format!("connection lost while sending: {e}")))
    }

    fn recv(&self, deadline: Option<Instant>) -> Result<Message> {
        let line = match deadline {
            Some(d) => match self.lines.recv_timeout(d.saturating_duration_since(Instant::now())) {
                Ok(l) => l,
                Err(RecvTimeoutError::Timeout) => {
                    return Err(AttackError::Connection(
                        "timed out waiting for the remote oracle".into(),
                    ))
                }
                Err(RecvTimeoutError::Disconnected) => {
                    return Err(AttackError::Oracle("remote closed the connection".into()))
                }
            },
            None => self
                .lines
                .recv()
                .map_err(|_| AttackError::Oracle("remote closed the connection".into()))?,
        };
        let line = line.map_err(|e| AttackError::Oracle(format!("read failed: {e}")))?;
        Message::parse(&line)
    }
}

/// A [`RolloutOracle`] backed by a protocol server. Requests are serial per
/// connection.
pub struct RemoteOracle {
    conn: Mutex<Connection>,
    spec: OracleSpec,
    child: Option<Child>,
}

impl std::fmt::Debug for RemoteOracle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RemoteOracle")
            .field("spec", &self.spec)
            .finish_non_exhaustive()
    }
}

impl RemoteOracle {
    /// Performs the handshake over an already-open byte stream pair.
    pub fn from_streams<R, W>(reader: R, writer: W, timeout: Duration) -> Result<Self>
    where
        R: Read + Send + 'static,
        W: Write + Send + 'static,
    {
        Self::handshake(Connection::new(reader, Box::new(writer)), timeout, None)
    }

    fn handshake(mut conn: Connection, timeout: Duration, child: Option<Child>) -> Result<Self> {
        let deadline = Instant::now() + timeout;
        let reply = conn
            .send(&Message::Hello {
                version: PROTOCOL_VERSION,
            })
            .and_then(|_| conn.recv(Some(deadline)));
        let reply = match reply {
            Ok(r) => r,
            Err(e) => {
                kill(child);
                return Err(AttackError::Connection(format!("handshake failed: {e}")));
            }
        };
        let spec = match reply {
            Message::Spec {
                version,
                n_actuators,
                horizon,
                deterministic,
            } if version == PROTOCOL_VERSION => OracleSpec {
                n_actuators,
                horizon,
                deterministic,
                supports_concurrent_rollouts: false,
            },
            Message::Error { message } => {
                kill(child);
                return Err(AttackError::Connection(format!("remote refused handshake: {message}")));
            }
            other => {
                kill(child);
                return Err(AttackError::Connection(format!(
                    "unexpected handshake reply: {other:?}"
                )));
            }
        };
        if let Err(e) = spec.validate() {
            kill(child);
            return Err(e);
        }
        Ok(Self {
            conn: Mutex::new(conn),
            spec,
            child,
        })
    }
}

fn kill(child: Option<Child>) {
    if let Some(mut c) = child {
        let _ = c.kill();
        let _ = c.wait();
    }
}

pub fn connect_remote_oracle(endpoint: &Endpoint) -> Result<RemoteOracle> {
    connect_remote_oracle_with_timeout(endpoint, DEFAULT_HANDSHAKE_TIMEOUT)
}

pub fn connect_remote_oracle_with_timeout(endpoint: &Endpoint, timeout: Duration) -> Result<RemoteOracle> {
    match endpoint {
        Endpoint::Tcp(addr) => {
            let stream = TcpStream::connect(addr)
                .map_err(|e| AttackError::Connection(format!("cannot connect to {addr}: {e}")))?;
            stream.set_nodelay(true)?;
            let reader = stream.try_clone()?;
            RemoteOracle::from_streams(reader, stream, timeout)
        }
        Endpoint::Command(argv) => {
            let mut child = Command::new(&argv[0])
                .args(&argv[1..])
                .stdin(Stdio::piped())
                .stdout(Stdio::piped())
                .stderr(Stdio::inherit())
                .spawn()
                .map_err(|e| AttackError::Connection(format!("cannot start {:?}: {e}", argv[0])))?;
            let stdin = child.stdin.take().expect("piped stdin");
            let stdout = child.stdout.take().expect("piped stdout");
            RemoteOracle::handshake(Connection::new(stdout, Box::new(stdin)), timeout, Some(child))
        }
    }
}

impl RolloutOracle for RemoteOracle {
    fn spec(&self) -> OracleSpec {
        self.spec
    }

    fn rollout(&self, pert: &TorquePerturbation, episodes: usize, seed: u64) -> Result<RolloutResult> {
        let mut conn = self.conn.lock().unwrap_or_else(|p| p.into_inner());
        conn.send(&Message::Rollout {
            delta: pert.to_vec(),
            episodes,
            seed,
            version: None,
        })?;
        match conn.recv(None)? {
            Message::Result { rewards, steps } => {
                if rewards.len() != episodes || steps.len() != episodes {
                    return Err(AttackError::Oracle(format!(
                        "remote returned {} rewards for {episodes} episodes",
                        rewards.len()
                    )));
                }
                Ok(RolloutResult {
                    cumulative_rewards: rewards,
                    episode_lengths: steps,
                })
            }
            Message::Error { message } => Err(AttackError::Oracle(format!("remote: {message}"))),
            other => Err(AttackError::Oracle(format!("unexpected reply: {other:?}"))),
        }
    }
}

impl Drop for RemoteOracle {
    fn drop(&mut self) {
        // Closing our end tells a stdio server to exit.
        if let Ok(conn) = self.conn.get_mut() {
            conn.writer.take();
        }
        if let Some(mut child) = self.child.take() {
            let deadline = Instant::now() + Duration::from_secs(2);
            while Instant::now() < deadline {
                if let Ok(Some(_)) = child.try_wait() {
                    return;
                }
                thread::sleep(Duration::from_millis(10));
            }
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoint_parsing() {
        assert_eq!(
            "127.0.0.1:9000".parse::<Endpoint>().unwrap(),
            Endpoint::Tcp("127.0.0.1:9000".into())
        );
        assert_eq!(
            "tcp:localhost:1".parse::<Endpoint>().unwrap(),
            Endpoint::Tcp("localhost:1".into())
        );
        assert_eq!(
            "exec:python3 adapter.py --env quadruped".parse::<Endpoint>().unwrap(),
            Endpoint::Command(vec![
                "python3".into(),
                "adapter.py".into(),
                "--env".into(),
                "quadruped".into()
            ])
        );
        assert!("exec:".parse::<Endpoint>().is_err());
        assert!("nowhere".parse::<Endpoint>().is_err());
    }

    #[test]
    fn silent_server_times_out() {
        let (_keep, reader) = std::os::unix::net::UnixStream::pair().unwrap();
        let err =
            RemoteOracle::from_streams(reader.try_clone().unwrap(), reader, Duration::from_millis(50)).unwrap_err();
        assert!(matches!(err, AttackError::Connection(m) if m.contains("timed out")));
    }
}
