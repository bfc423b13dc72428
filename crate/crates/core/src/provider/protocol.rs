// Copyright (c) 2026 The realmsim Authors.
// SPDX-License-Identifier: Apache-2.0

//! Provider wire protocol.
//!
//! Every message travels as one frame: a 4-byte big-endian body length
//! followed by a canonical CBOR body `{0: type, 1: payload}` (`UpToDate` has
//! no payload and encodes as a one-entry map).

use std::io::{self, Read, Write};

use crate::cbor::{DecodeError, Reader, Writer};

pub const MAX_FRAME: usize = 64 * 1024;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Message {
    /// Handshake. From the realm it carries the ephemeral channel public key;
    /// from the provider it carries the key confirmation value.
    Hello {
        key: [u8; 32],
    },
    Challenge {
        nonce: [u8; 64],
    },
    Report {
        report: Vec<u8>,
    },
    /// Sealed model package.
    Package {
        sealed: Vec<u8>,
    },
    Refused {
        reason: String,
    },
    UpdateQuery {
        current_version: u32,
    },
    /// Sealed model package for a newer version.
    Update {
        sealed: Vec<u8>,
    },
    UpToDate,
}

impl Message {
    pub fn type_code(&self) -> u64 {
        match self {
            Message::Hello { .. } => 0,
            Message::Challenge { .. } => 1,
            Message::Report { .. } => 2,
            Message::Package { .. } => 3,
            Message::Refused { .. } => 4,
            Message::UpdateQuery { .. } => 5,
            Message::Update { .. } => 6,
            Message::UpToDate => 7,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Message::Hello { .. } => "Hello",
            Message::Challenge { .. } => "Challenge",
            Message::Report { .. } => "Report",
            Message::Package { .. } => "Package",
            Message::Refused { .. } => "Refused",
            Message::UpdateQuery { .. } => "UpdateQuery",
            Message::Update { .. } => "Update",
            Message::UpToDate => "UpToDate",
        }
    }

    /// Whether the provider stops talking after sending this message and
    /// waits for the realm.
    pub fn ends_turn(&self) -> bool {
        !matches!(self, Message::Hello { .. })
    }

    pub fn encode_body(&self) -> Vec<u8> {
        let mut w = Writer::new();
        if let Message::UpToDate = self {
            w.map(1).uint(0).uint(self.type_code());
            return w.into_bytes();
        }
        w.map(2).uint(0).uint(self.type_code()).uint(1);
        match self {
            Message::Hello { key } => w.bytes(key),
            Message::Challenge { nonce } => w.bytes(nonce),
            Message::Report { report } => w.bytes(report),
            Message::Package { sealed } | Message::Update { sealed } => w.bytes(sealed),
            Message::Refused { reason } => w.text(reason),
            Message::UpdateQuery { current_version } => w.uint(*current_version as u64),
            Message::UpToDate => unreachable!(),
        };
        w.into_bytes()
    }

    pub fn decode_body(body: &[u8]) -> Result<Self, DecodeError> {
        let mut r = Reader::new(body);
        let entries_at = r.position();
        let entries = r.map()?;
        r.key(0)?;
        let type_at = r.position();
        let code = r.uint()?;
        let want = if code == 7 { 1 } else { 2 };
        if entries != want {
            return Err(DecodeError::new(entries_at, "wrong number of message fields"));
        }
        if code != 7 {
            r.key(1)?;
        }
        let msg = match code {
            0 => Message::Hello { key: r.bytes_fixed()? },
            1 => Message::Challenge {
                nonce: r.bytes_fixed()?,
            },
            2 => Message::Report {
                report: r.bytes()?.to_vec(),
            },
            3 => Message::Package {
                sealed: r.bytes()?.to_vec(),
            },
            4 => Message::Refused {
                reason: r.text()?.to_string(),
            },
            5 => {
                let at = r.position();
                let v = r.uint()?;
                Message::UpdateQuery {
                    current_version: u32::try_from(v).map_err(|_| DecodeError::new(at, "version out of range"))?,
                }
            }
            6 => Message::Update {
                sealed: r.bytes()?.to_vec(),
            },
            7 => Message::UpToDate,
            other => return Err(DecodeError::new(type_at, format!("unknown message type {other}"))),
        };
        r.finish()?;
        Ok(msg)
    }

    /// Length-prefixed frame.
    pub fn to_frame(&self) -> Vec<u8> {
        let body = self.encode_body();
        let mut frame = Vec::with_capacity(body.len() + 4);
        frame.extend_from_slice(&(body.len() as u32).to_be_bytes());
        frame.extend_from_slice(&body);
        frame
    }

    /// Parse exactly one frame.
    pub fn from_frame(frame: &[u8]) -> Result<Self, DecodeError> {
        let (body, used) = split_frame(frame)?;
        if used != frame.len() {
            return Err(DecodeError::new(used, "trailing bytes after frame"));
        }
        Self::decode_body(body).map_err(|e| DecodeError::new(e.offset + 4, e.reason))
    }
}

/// Split the first frame off `buf`, returning its body and the number of
/// bytes the whole frame occupies.
pub fn split_frame(buf: &[u8]) -> Result<(&[u8], usize), DecodeError> {
    if buf.len() < 4 {
        return Err(DecodeError::new(0, "truncated frame header"));
    }
    let len = u32::from_be_bytes(buf[..4].try_into().unwrap()) as usize;
    if len > MAX_FRAME {
        return Err(DecodeError::new(0, "frame too large"));
    }
    if buf.len() < 4 + len {
        return Err(DecodeError::new(4, "truncated frame body"));
    }
    Ok((&buf[4..4 + len], 4 + len))
}

pub fn write_frame(w: &mut impl Write, frame: &[u8]) -> io::Result<()> {
    w.write_all(frame)?;
    w.flush()
}

/// Read one complete frame (header included) from a stream.
pub fn read_frame(r: &mut impl Read) -> io::Result<Vec<u8>> {
    let mut header = [0u8; 4];
    r.read_exact(&mut header)?;
    let len = u32::from_be_bytes(header) as usize;
    if len > MAX_FRAME {
        return Err(io::Error::new(io::ErrorKind::InvalidData, "frame too large"));
    }
    let mut frame = vec![0u8; 4 + len];
    frame[..4].copy_from_slice(&header);
    r.read_exact(&mut frame[4..])?;
    Ok(frame)
}
