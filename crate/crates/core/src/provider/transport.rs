// Copyright (c) 2026 The realmsim Authors.
// SPDX-License-Identifier: Apache-2.0

//! Carriers for provider frames. Both carry identical bytes.

use std::io;
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use thiserror::Error;

use super::protocol::{read_frame, write_frame, Message};
use super::Provider;

pub type SharedProvider = Arc<Mutex<Provider>>;

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("transport i/o: {0}")]
    Io(#[from] io::Error),
    #[error("provider sent an undecodable frame: {0}")]
    Frame(String),
}

pub trait Transport {
    /// Send frames to the provider and collect its replies up to the end of
    /// its turn.
    fn exchange(&mut self, frames: &[Vec<u8>]) -> Result<Vec<Vec<u8>>, TransportError>;
}

/// Direct calls into a provider in the same process.
pub struct InProcess {
    provider: SharedProvider,
}

impl InProcess {
    pub fn new(provider: SharedProvider) -> Self {
        provider.lock().expect("provider lock").connect();
        Self { provider }
    }
}

impl Transport for InProcess {
    fn exchange(&mut self, frames: &[Vec<u8>]) -> Result<Vec<Vec<u8>>, TransportError> {
        let mut p = self.provider.lock().expect("provider lock");
        Ok(frames.iter().flat_map(|f| p.handle(f).frames).collect())
    }
}

/// Serve a provider on a loopback socket. The server accepts one
/// connection, serves it until the client hangs up, and exits.
pub struct TcpServer {
    addr: SocketAddr,
    handle: JoinHandle<io::Result<()>>,
}

impl TcpServer {
    pub fn spawn(provider: SharedProvider) -> io::Result<Self> {
        let listener = TcpListener::bind("127.0.0.1:0")?;
        let addr = listener.local_addr()?;
        let handle = std::thread::spawn(move || -> io::Result<()> {
            let (mut stream, _) = listener.accept()?;
            stream.set_nodelay(true)?;
            provider.lock().expect("provider lock").connect();
            loop {
                let frame = match read_frame(&mut stream) {
                    Ok(f) => f,
                    Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(()),
                    Err(e) => return Err(e),
                };
                let reply = provider.lock().expect("provider lock").handle(&frame);
                for f in reply.frames {
                    write_frame(&mut stream, &f)?;
                }
            }
        });
        Ok(Self { addr, handle })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Wait for the server thread after the client disconnected.
    pub fn join(self) -> io::Result<()> {
        self.handle
            .join()
            .unwrap_or_else(|_| Err(io::Error::other("provider thread panicked")))
    }
}

pub struct TcpTransport {
    stream: TcpStream,
}

impl TcpTransport {
    pub fn connect(addr: SocketAddr) -> io::Result<Self> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        Ok(Self { stream })
    }
}

impl Transport for TcpTransport {
    fn exchange(&mut self, frames: &[Vec<u8>]) -> Result<Vec<Vec<u8>>, TransportError> {
        let mut replies = Vec::new();
        for f in frames {
            write_frame(&mut self.stream, f)?;
            loop {
                let frame = read_frame(&mut self.stream)?;
                let msg = Message::from_frame(&frame).map_err(|e| TransportError::Frame(e.to_string()))?;
                replies.push(frame);
                if msg.ends_turn() {
                    break;
                }
            }
        }
        Ok(replies)
    }
}
