//! Live protocol sessions over TCP, one visitor at a time.
//!
//! The session clock is wall time since the connection opened, scaled by
//! `speed`. Client timestamps are replaced by that clock on arrival. A closed
//! connection is treated as the visitor walking away.

use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::net::{TcpListener, TcpStream};
use std::path::PathBuf;
use std::sync::mpsc::{self, RecvTimeoutError};
use std::thread;
use std::time::{Duration, Instant};

use crate::engagement::Phase;
use crate::engine::{Engine, EngineConfig};
use crate::protocol::{decode, encode, Body, Message, Source};
use crate::recipe::RecipeLibrary;
use crate::sensorimotor::Mode;
use crate::world::World;

/// Simulated time allowed for the engine to wind down after a disconnect.
const WIND_DOWN_MS: u64 = 120_000;

#[derive(Debug, Clone)]
pub struct ServeConfig {
    pub engine: EngineConfig,
    pub library: RecipeLibrary,
    pub world: World,
    /// Overrides the mode a client asks for.
    pub mode: Option<Mode>,
    /// Simulated milliseconds per wall millisecond.
    pub speed: f64,
    /// Directory receiving one trace file per session.
    pub out_dir: Option<PathBuf>,
    /// Stop after this many sessions.
    pub max_sessions: Option<usize>,
}

impl ServeConfig {
    pub fn new(library: RecipeLibrary, world: World) -> Self {
        ServeConfig {
            engine: EngineConfig::default(),
            library,
            world,
            mode: None,
            speed: 1.0,
            out_dir: None,
            max_sessions: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SessionSummary {
    pub phase: Phase,
    pub trace: Vec<Message>,
    pub disconnected: bool,
}

/// Accepts clients one after another until `max_sessions` is reached.
pub fn serve(listener: &TcpListener, cfg: &ServeConfig) -> io::Result<Vec<SessionSummary>> {
    let mut done = Vec::new();
    for (n, stream) in listener.incoming().enumerate() {
        let stream = stream?;
        let trace_path = match &cfg.out_dir {
            Some(dir) => {
                fs::create_dir_all(dir)?;
                Some(dir.join(format!("session-{:03}.trace", n + 1)))
            }
            None => None,
        };
        done.push(run_session(stream, cfg, trace_path)?);
        if cfg.max_sessions.is_some_and(|m| done.len() >= m) {
            break;
        }
    }
    Ok(done)
}

struct Clock {
    start: Instant,
    speed: f64,
}

impl Clock {
    fn now(&self) -> u64 {
        (self.start.elapsed().as_secs_f64() * 1000.0 * self.speed) as u64
    }

    /// Wall time until simulated time `t`.
    fn until(&self, t: u64) -> Duration {
        let now = self.now();
        if t <= now {
            Duration::ZERO
        } else {
            Duration::from_secs_f64((t - now) as f64 / self.speed / 1000.0)
        }
    }
}

struct Session {
    engine: Engine,
    out: BufWriter<TcpStream>,
    log: Option<BufWriter<File>>,
    logged: usize,
    mode: Option<Mode>,
    last_client_seq: u64,
}

impl Session {
    /// Sends new engine output to the client and appends new trace records
    /// to the log.
    fn flush(&mut self) -> io::Result<()> {
        for m in self.engine.take_output() {
            // a vanished client still gets its trace written
            let _ = self.out.write_all(encode(&m).as_bytes());
        }
        let _ = self.out.flush();
        if let Some(log) = &mut self.log {
            for m in &self.engine.trace()[self.logged..] {
                log.write_all(encode(m).as_bytes())?;
            }
            log.flush()?;
        }
        self.logged = self.engine.trace().len();
        Ok(())
    }

    fn line(&mut self, line: &str, t: u64) {
        if line.trim().is_empty() {
            return;
        }
        let mut msg = match decode(line) {
            Ok(m) => m,
            Err(e) => {
                self.engine.reject(&e);
                return;
            }
        };
        self.last_client_seq = self.last_client_seq.max(msg.seq);
        msg.t = t.max(self.engine.now());
        if let (Some(mode), Body::ModeSelect { mode: asked }) = (self.mode, &mut msg.body) {
            *asked = mode;
        }
        let _ = self.engine.accept(msg);
    }
}

fn run_session(stream: TcpStream, cfg: &ServeConfig, trace_path: Option<PathBuf>) -> io::Result<SessionSummary> {
    let engine = Engine::new(cfg.engine.clone(), cfg.library.clone(), cfg.world.clone())
        .map_err(|e| io::Error::new(io::ErrorKind::InvalidInput, e))?;
    let reader = BufReader::new(stream.try_clone()?);
    let (tx, rx) = mpsc::channel::<String>();
    let reader_thread = thread::spawn(move || {
        for line in reader.lines() {
            let Ok(line) = line else { break };
            if tx.send(line).is_err() {
                break;
            }
        }
    });
    let log = trace_path.map(File::create).transpose()?.map(BufWriter::new);
    let mut s = Session {
        engine,
        out: BufWriter::new(stream.try_clone()?),
        log,
        logged: 0,
        mode: cfg.mode,
        last_client_seq: 0,
    };
    let clock = Clock { start: Instant::now(), speed: cfg.speed.max(1e-6) };
    let mut disconnected = false;
    while s.engine.phase() != Phase::Ended {
        let wait = s.engine.next_due().map_or(Duration::from_millis(200), |t| clock.until(t));
        match rx.recv_timeout(wait) {
            Ok(line) => {
                let now = clock.now();
                s.engine.advance_to(now);
                s.line(&line, now);
            }
            Err(RecvTimeoutError::Timeout) => {
                let now = clock.now();
                s.engine.advance_to(now);
            }
            Err(RecvTimeoutError::Disconnected) => {
                disconnected = true;
                break;
            }
        }
        s.flush()?;
    }
    if disconnected {
        wind_down(&mut s, clock.now());
    }
    s.engine.finish();
    s.flush()?;
    let _ = stream.shutdown(std::net::Shutdown::Both);
    let _ = reader_thread.join();
    Ok(SessionSummary { phase: s.engine.phase(), trace: s.engine.trace().to_vec(), disconnected })
}

/// Plays out a departure in simulated time.
fn wind_down(s: &mut Session, now: u64) {
    s.engine.advance_to(now);
    if s.engine.mode().is_some() {
        let t = now.max(s.engine.now());
        let leave = Message::new(s.last_client_seq + 1, t, Source::Client, Body::Leave {});
        let _ = s.engine.accept(leave);
    }
    let stop = s.engine.now() + WIND_DOWN_MS;
    while s.engine.phase() != Phase::Ended {
        match s.engine.next_due() {
            Some(t) if t <= stop => s.engine.advance_to(t),
            _ => break,
        }
    }
}
