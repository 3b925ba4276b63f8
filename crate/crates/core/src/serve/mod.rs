//! Frame streaming over TCP.
//!
//! A client opens a connection, announces its frame geometry with HELLO and
//! then sends one FRAME per time window. The server runs every frame through
//! its own event-driven engine, so membrane state persists for the lifetime
//! of the connection (or until RESET), and answers each FRAME with exactly
//! one RESULT in order. See [`wire`] for the byte layout.

pub mod wire;

use std::io::{self, BufReader, BufWriter};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::Arc;
use std::thread;

use thiserror::Error;

use crate::engine::{EngineError, EventEngine, SpikeTrace};
use crate::events::SpikeList;
use crate::model::{NetworkSpec, Shape};
use crate::perf::{simulate_latency, HardwareConfig};
use wire::{codes, pack_bits, read_raw, write_message, FramePayload, Message, RawMessage, ResultPayload, WireError};

/// What every connection of a server shares.
#[derive(Debug, Clone)]
pub struct ServerConfig {
    pub spec: NetworkSpec,
    pub hw: HardwareConfig,
    /// Attach packed extraction maps to every RESULT.
    pub send_maps: bool,
}

/// Replies to one incoming message.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Reply {
    pub messages: Vec<Message>,
    pub close: bool,
}

impl Reply {
    fn one(msg: Message) -> Self {
        Reply {
            messages: vec![msg],
            close: false,
        }
    }

    fn closing(msg: Message) -> Self {
        Reply {
            messages: vec![msg],
            close: true,
        }
    }
}

/// Protocol state of one connection, independent of the transport.
pub struct Session<'a> {
    cfg: &'a ServerConfig,
    engine: EventEngine,
    extraction: Vec<usize>,
    shapes: Vec<Shape>,
    greeted: bool,
}

impl<'a> Session<'a> {
    pub fn new(cfg: &'a ServerConfig) -> Result<Self, EngineError> {
        let shapes = cfg.spec.geometries()?.iter().map(|g| g.output).collect();
        Ok(Session {
            engine: EventEngine::new(&cfg.spec)?,
            extraction: cfg.spec.extraction_layers(),
            shapes,
            cfg,
            greeted: false,
        })
    }

    pub fn handle(&mut self, raw: &RawMessage) -> Reply {
        if raw.version != wire::VERSION {
            return Reply::closing(Message::error(
                codes::VERSION,
                format!("unsupported protocol version {}", raw.version),
            ));
        }
        let msg = match Message::decode(raw) {
            Ok(m) => m,
            Err(WireError::UnknownType(t)) => {
                return Reply::one(Message::error(codes::UNKNOWN_TYPE, format!("unknown message type {t}")))
            }
            Err(e) => return Reply::one(Message::error(codes::MALFORMED, e.to_string())),
        };
        let input = self.cfg.spec.input_shape;
        match msg {
            Message::Hello(shape) if shape != input => {
                Reply::closing(Message::error(codes::GEOMETRY, format!("network expects {input}, got {shape}")))
            }
            Message::Hello(_) => {
                self.greeted = true;
                Reply::one(Message::Hello(input))
            }
            Message::Frame(_) if !self.greeted => Reply::one(Message::error(codes::NO_HELLO, "FRAME before HELLO")),
            Message::Frame(f) if f.shape != input => {
                Reply::one(Message::error(codes::GEOMETRY, format!("network expects {input}, got {}", f.shape)))
            }
            Message::Frame(f) => match self.frame(&f) {
                Ok(result) => Reply::one(Message::Result(result)),
                Err(e) => Reply::one(Message::error(codes::ENGINE, e)),
            },
            Message::Reset => {
                self.engine.reset();
                Reply::default()
            }
            Message::End => Reply::closing(Message::End),
            Message::Result(_) | Message::Error { .. } => {
                Reply::one(Message::error(codes::PROTOCOL, "clients may not send RESULT or ERROR"))
            }
        }
    }

    fn frame(&mut self, f: &FramePayload) -> Result<ResultPayload, String> {
        let input = SpikeList {
            timestep: self.engine.timestep(),
            entries: f.spikes.clone(),
        };
        let mut trace = SpikeTrace::new(self.shapes.len());
        let out = self.engine.step(&input, Some(&mut trace)).map_err(|e| e.to_string())?;
        // a single-window trace: the estimate covers this frame alone
        trace.entries.iter_mut().for_each(|e| e.timestep = 0);
        trace.timesteps = 1;
        let latency = simulate_latency(&trace, &self.cfg.spec, &self.cfg.hw).map_err(|e| e.to_string())?;
        let counts = self.extraction.iter().map(|&l| out.spikes[l].len() as u32).collect();
        let maps = self.cfg.send_maps.then(|| {
            self.extraction
                .iter()
                .map(|&l| {
                    let shape = self.shapes[l];
                    let bits = pack_bits(
                        shape.len(),
                        out.spikes[l].entries.iter().map(|s| shape.index(s.c as usize, s.y as usize, s.x as usize)),
                    );
                    (shape.len() as u32, bits)
                })
                .collect()
        });
        Ok(ResultPayload {
            window: f.window,
            counts,
            latency_s: latency.end_to_end_s,
            maps,
        })
    }
}

fn handle_connection(stream: TcpStream, cfg: &ServerConfig) -> Result<(), WireError> {
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut writer = BufWriter::new(stream.try_clone()?);
    let mut session = Session::new(cfg).map_err(|e| io::Error::other(e.to_string()))?;
    loop {
        let raw = match read_raw(&mut reader) {
            Ok(Some(raw)) => raw,
            Ok(None) => break,
            Err(WireError::Io(e)) => return Err(e.into()),
            Err(e) => {
                // framing is lost; report and hang up
                let _ = write_message(&mut writer, &Message::error(codes::PROTOCOL, e.to_string()));
                break;
            }
        };
        let reply = session.handle(&raw);
        for m in &reply.messages {
            write_message(&mut writer, m)?;
        }
        if reply.close {
            break;
        }
    }
    let _ = stream.shutdown(Shutdown::Both);
    Ok(())
}

/// A listening server; each accepted connection gets its own thread and engine.
pub struct Server {
    listener: TcpListener,
    cfg: Arc<ServerConfig>,
}

impl Server {
    /// Binds and checks that the network can run on the event-driven engine.
    pub fn bind(addr: impl ToSocketAddrs, cfg: ServerConfig) -> Result<Self, ServeError> {
        Session::new(&cfg)?;
        Ok(Server {
            listener: TcpListener::bind(addr)?,
            cfg: Arc::new(cfg),
        })
    }

    pub fn local_addr(&self) -> io::Result<SocketAddr> {
        self.listener.local_addr()
    }

    /// Serves until the listener fails.
    pub fn run(self) -> io::Result<()> {
        self.serve(None)
    }

    /// Serves `connections` connections and waits for all of them to finish.
    pub fn run_for(self, connections: usize) -> io::Result<()> {
        self.serve(Some(connections))
    }

    fn serve(self, limit: Option<usize>) -> io::Result<()> {
        let mut handles = Vec::new();
        for (accepted, stream) in self.listener.incoming().enumerate() {
            let stream = stream?;
            let cfg = Arc::clone(&self.cfg);
            handles.push(thread::spawn(move || {
                let _ = handle_connection(stream, &cfg);
            }));
            if limit.is_some_and(|n| accepted + 1 >= n) {
                break;
            }
        }
        for h in handles {
            let _ = h.join();
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum ServeError {
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("server error {code}: {message}")]
    Server { code: u16, message: String },
    #[error("unexpected reply: {0}")]
    Unexpected(String),
    #[error("server closed the connection")]
    Closed,
}

impl From<io::Error> for ServeError {
    fn from(e: io::Error) -> Self {
        ServeError::Wire(WireError::Io(e))
    }
}

/// Client side of one streaming session.
pub struct Client {
    reader: BufReader<TcpStream>,
    writer: BufWriter<TcpStream>,
    shape: Shape,
}

impl Client {
    /// Connects and performs the HELLO exchange.
    pub fn connect(addr: impl ToSocketAddrs, shape: Shape) -> Result<Self, ServeError> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        let mut client = Client {
            reader: BufReader::new(stream.try_clone()?),
            writer: BufWriter::new(stream),
            shape,
        };
        client.send(&Message::Hello(shape))?;
        match client.recv()? {
            Message::Hello(_) => Ok(client),
            other => Err(unexpected(other)),
        }
    }

    pub fn send(&mut self, msg: &Message) -> Result<(), ServeError> {
        Ok(write_message(&mut self.writer, msg)?)
    }

    pub fn recv(&mut self) -> Result<Message, ServeError> {
        let raw = read_raw(&mut self.reader)?.ok_or(ServeError::Closed)?;
        Ok(Message::decode(&raw)?)
    }

    pub fn frame(&mut self, window: u32, spikes: &SpikeList) -> Result<ResultPayload, ServeError> {
        self.send(&Message::Frame(FramePayload::from_spikes(window, self.shape, spikes)))?;
        match self.recv()? {
            Message::Result(r) => Ok(r),
            other => Err(unexpected(other)),
        }
    }

    pub fn reset(&mut self) -> Result<(), ServeError> {
        self.send(&Message::Reset)
    }

    /// Sends END and waits for the server's END.
    pub fn end(mut self) -> Result<(), ServeError> {
        self.send(&Message::End)?;
        match self.recv()? {
            Message::End => Ok(()),
            other => Err(unexpected(other)),
        }
    }
}

fn unexpected(msg: Message) -> ServeError {
    match msg {
        Message::Error { code, message } => ServeError::Server { code, message },
        other => ServeError::Unexpected(format!("message type {}", other.kind())),
    }
}

/// Streams `frames` as windows `0..n` over one connection and collects the results.
pub fn stream_frames(addr: impl ToSocketAddrs, shape: Shape, frames: &[SpikeList]) -> Result<Vec<ResultPayload>, ServeError> {
    let mut client = Client::connect(addr, shape)?;
    let results = frames
        .iter()
        .enumerate()
        .map(|(i, f)| client.frame(i as u32, f))
        .collect::<Result<Vec<_>, _>>()?;
    client.end()?;
    Ok(results)
}
