//! TCP transport: newline-delimited JSON, one connection per UAV. Reader
//! threads only parse; every session mutation happens on the tick loop.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::net::{TcpListener, TcpStream, ToSocketAddrs};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::thread;
use std::time::{Duration, Instant};

use serde_json::json;

use super::mission::Transport;
use super::{Kind, Message, Server, TICK_HZ};
use crate::error::{Error, Result};

pub const PORT_ENV: &str = "SWARM_SAR_PORT";

/// Port from the environment, else the default.
pub fn default_port() -> u16 {
    std::env::var(PORT_ENV).ok().and_then(|p| p.parse().ok()).unwrap_or(super::DEFAULT_PORT)
}

enum Event {
    Connected(usize, TcpStream),
    Line(usize, String),
    Closed(usize),
}

#[derive(Clone, Debug, Default)]
pub struct ServeOptions {
    /// Return once every session has landed or aborted.
    pub exit_when_finished: bool,
    /// Give up after this much wall time.
    pub max_duration: Option<Duration>,
}

#[derive(Clone, Debug)]
pub struct ServeSummary {
    pub ticks: u64,
    pub land_ticks: Vec<Option<u64>>,
    pub assignments: Vec<super::Assignment>,
    pub visited: Vec<bool>,
    pub finished: bool,
}

fn spawn_acceptor(listener: TcpListener, tx: Sender<Event>) {
    thread::spawn(move || {
        for (conn, stream) in listener.incoming().enumerate() {
            let Ok(stream) = stream else { continue };
            let Ok(reader) = stream.try_clone() else { continue };
            if tx.send(Event::Connected(conn, stream)).is_err() {
                return;
            }
            let tx = tx.clone();
            thread::spawn(move || {
                for line in BufReader::new(reader).lines() {
                    match line {
                        Ok(l) if l.trim().is_empty() => continue,
                        Ok(l) => {
                            if tx.send(Event::Line(conn, l)).is_err() {
                                return;
                            }
                        }
                        Err(_) => break,
                    }
                }
                let _ = tx.send(Event::Closed(conn));
            });
        }
    });
}

fn write_line(stream: &mut TcpStream, msg: &Message) -> std::io::Result<()> {
    let mut line = msg.to_line();
    line.push('\n');
    stream.write_all(line.as_bytes())
}

/// Runs the tick loop at 20 Hz on the calling thread.
pub fn serve(listener: TcpListener, mut server: Server, opts: ServeOptions) -> Result<ServeSummary> {
    let (tx, rx): (Sender<Event>, Receiver<Event>) = mpsc::channel();
    spawn_acceptor(listener, tx);
    let period = Duration::from_millis(1000 / TICK_HZ);
    let started = Instant::now();
    let mut next = started + period;
    let mut streams: HashMap<usize, TcpStream> = HashMap::new();
    let mut bound: HashMap<usize, usize> = HashMap::new();
    loop {
        // Collect everything that arrives before the tick deadline.
        loop {
            let wait = next.saturating_duration_since(Instant::now());
            match rx.recv_timeout(wait) {
                Ok(Event::Connected(c, s)) => {
                    streams.insert(c, s);
                }
                Ok(Event::Line(c, line)) => match Message::from_line(&line) {
                    Ok(msg) => {
                        match bound.get(&msg.uav_id) {
                            Some(&conn) if conn != c => {
                                let reply = Message::new(Kind::Error, msg.uav_id, msg.seq, json!({ "reason": "uav id bound to another connection" }));
                                if let Some(s) = streams.get_mut(&c) {
                                    let _ = write_line(s, &reply);
                                }
                            }
                            _ => {
                                bound.insert(msg.uav_id, c);
                                server.submit(msg);
                            }
                        }
                    }
                    Err(e) => {
                        let reply = Message::new(Kind::Error, 0, 0, json!({ "reason": e.to_string() }));
                        if let Some(s) = streams.get_mut(&c) {
                            let _ = write_line(s, &reply);
                        }
                    }
                },
                Ok(Event::Closed(c)) => {
                    streams.remove(&c);
                    let gone: Vec<usize> = bound.iter().filter(|(_, &conn)| conn == c).map(|(&u, _)| u).collect();
                    for u in gone {
                        bound.remove(&u);
                        let landed = server.sessions.get(u).map(|s| s.state == super::SessionState::Landed);
                        if landed == Some(false) {
                            server.fail(u);
                        }
                    }
                }
                Err(RecvTimeoutError::Timeout) => break,
                Err(RecvTimeoutError::Disconnected) => {
                    return Err(Error::Protocol("listener stopped".into()));
                }
            }
        }
        next += period;
        for out in server.tick() {
            let conn = bound.get(&out.uav_id).copied();
            if let Some(s) = conn.and_then(|c| streams.get_mut(&c)) {
                if write_line(s, &out.message).is_err() {
                    server.fail(out.uav_id);
                }
            }
        }
        let done = opts.exit_when_finished && server.is_finished();
        let expired = opts.max_duration.is_some_and(|d| started.elapsed() >= d);
        if done || expired {
            return Ok(ServeSummary {
                ticks: server.tick,
                land_ticks: server.land_ticks.clone(),
                assignments: server.assignments.clone(),
                visited: server.visited.clone(),
                finished: server.is_finished(),
            });
        }
    }
}

/// Client end of one connection.
pub struct TcpLink {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
}

impl TcpLink {
    /// Connects, retrying for up to `patience` while the server starts.
    pub fn connect<A: ToSocketAddrs + Clone>(addr: A, patience: Duration) -> Result<Self> {
        let start = Instant::now();
        loop {
            match TcpStream::connect(addr.clone()) {
                Ok(s) => {
                    s.set_nodelay(true)?;
                    let reader = BufReader::new(s.try_clone()?);
                    return Ok(Self { reader, writer: s });
                }
                Err(e) if start.elapsed() >= patience => return Err(e.into()),
                Err(_) => thread::sleep(Duration::from_millis(50)),
            }
        }
    }

    pub fn set_read_timeout(&self, t: Option<Duration>) -> Result<()> {
        self.writer.set_read_timeout(t)?;
        Ok(())
    }
}

impl Transport for TcpLink {
    fn send(&mut self, msg: &Message) -> Result<()> {
        write_line(&mut self.writer, msg)?;
        Ok(())
    }

    fn recv(&mut self) -> Result<Message> {
        let mut line = String::new();
        if self.reader.read_line(&mut line)? == 0 {
            return Err(Error::Protocol("server closed the connection".into()));
        }
        Message::from_line(&line)
    }
}
