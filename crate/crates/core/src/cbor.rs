// Copyright (c) 2026 The realmsim Authors.
// SPDX-License-Identifier: Apache-2.0

//! Strict canonical CBOR subset.
//!
//! Supports unsigned and negative integers, byte and text strings, arrays,
//! maps with unsigned integer keys, and `null`. The writer always emits the
//! shortest head and definite lengths. The reader rejects anything else:
//! non-minimal heads, indefinite lengths, out-of-order or unexpected map
//! keys, and trailing bytes. Every valid buffer therefore has exactly one
//! decoding and re-encodes to the same bytes.

use thiserror::Error;

const MAJOR_UINT: u8 = 0;
const MAJOR_NINT: u8 = 1;
const MAJOR_BYTES: u8 = 2;
const MAJOR_TEXT: u8 = 3;
const MAJOR_ARRAY: u8 = 4;
const MAJOR_MAP: u8 = 5;
const MAJOR_SIMPLE: u8 = 7;
const SIMPLE_NULL: u64 = 22;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("decode error at byte {offset}: {reason}")]
pub struct DecodeError {
    pub offset: usize,
    pub reason: String,
}

impl DecodeError {
    pub fn new(offset: usize, reason: impl Into<String>) -> Self {
        Self {
            offset,
            reason: reason.into(),
        }
    }
}

type Result<T> = std::result::Result<T, DecodeError>;

#[derive(Default, Debug, Clone)]
pub struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn new() -> Self {
        Self::default()
    }

    fn head(&mut self, major: u8, arg: u64) -> &mut Self {
        let m = major << 5;
        if arg < 24 {
            self.buf.push(m | arg as u8);
        } else if arg <= u8::MAX as u64 {
            self.buf.push(m | 24);
            self.buf.push(arg as u8);
        } else if arg <= u16::MAX as u64 {
            self.buf.push(m | 25);
            self.buf.extend_from_slice(&(arg as u16).to_be_bytes());
        } else if arg <= u32::MAX as u64 {
            self.buf.push(m | 26);
            self.buf.extend_from_slice(&(arg as u32).to_be_bytes());
        } else {
            self.buf.push(m | 27);
            self.buf.extend_from_slice(&arg.to_be_bytes());
        }
        self
    }

    pub fn uint(&mut self, v: u64) -> &mut Self {
        self.head(MAJOR_UINT, v)
    }

    pub fn int(&mut self, v: i64) -> &mut Self {
        if v >= 0 {
            self.head(MAJOR_UINT, v as u64)
        } else {
            // -1 - n encoding; !v == -1 - v for two's complement.
            self.head(MAJOR_NINT, !v as u64)
        }
    }

    pub fn bytes(&mut self, b: &[u8]) -> &mut Self {
        self.head(MAJOR_BYTES, b.len() as u64);
        self.buf.extend_from_slice(b);
        self
    }

    pub fn text(&mut self, s: &str) -> &mut Self {
        self.head(MAJOR_TEXT, s.len() as u64);
        self.buf.extend_from_slice(s.as_bytes());
        self
    }

    pub fn array(&mut self, len: usize) -> &mut Self {
        self.head(MAJOR_ARRAY, len as u64)
    }

    pub fn map(&mut self, len: usize) -> &mut Self {
        self.head(MAJOR_MAP, len as u64)
    }

    pub fn null(&mut self) -> &mut Self {
        self.head(MAJOR_SIMPLE, SIMPLE_NULL)
    }

    /// Splice an already-encoded item.
    pub fn raw(&mut self, encoded: &[u8]) -> &mut Self {
        self.buf.extend_from_slice(encoded);
        self
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.buf
    }
}

#[derive(Debug, Clone)]
pub struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub fn position(&self) -> usize {
        self.pos
    }

    fn err<T>(&self, at: usize, reason: impl Into<String>) -> Result<T> {
        Err(DecodeError::new(at, reason))
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let start = self.pos;
        match start.checked_add(n) {
            Some(end) if end <= self.buf.len() => {
                self.pos = end;
                Ok(&self.buf[start..end])
            }
            _ => self.err(start, format!("truncated: need {n} bytes")),
        }
    }

    fn peek_major(&self) -> Option<u8> {
        self.buf.get(self.pos).map(|b| b >> 5)
    }

    fn head(&mut self) -> Result<(u8, u64, usize)> {
        let at = self.pos;
        let first = self.take(1)?[0];
        let major = first >> 5;
        let ai = first & 0x1f;
        let arg = match ai {
            0..=23 => ai as u64,
            24 => {
                let v = self.take(1)?[0] as u64;
                if v < 24 {
                    return self.err(at, "non-minimal integer head");
                }
                v
            }
            25 => {
                let v = u16::from_be_bytes(self.take(2)?.try_into().unwrap()) as u64;
                if v <= u8::MAX as u64 {
                    return self.err(at, "non-minimal integer head");
                }
                v
            }
            26 => {
                let v = u32::from_be_bytes(self.take(4)?.try_into().unwrap()) as u64;
                if v <= u16::MAX as u64 {
                    return self.err(at, "non-minimal integer head");
                }
                v
            }
            27 => {
                let v = u64::from_be_bytes(self.take(8)?.try_into().unwrap());
                if v <= u32::MAX as u64 {
                    return self.err(at, "non-minimal integer head");
                }
                v
            }
            31 => return self.err(at, "indefinite lengths are not allowed"),
            _ => return self.err(at, "reserved additional information"),
        };
        Ok((major, arg, at))
    }

    fn expect(&mut self, want: u8, what: &str) -> Result<(u64, usize)> {
        let (major, arg, at) = self.head()?;
        if major != want {
            return self.err(at, format!("expected {what}"));
        }
        Ok((arg, at))
    }

    pub fn uint(&mut self) -> Result<u64> {
        Ok(self.expect(MAJOR_UINT, "unsigned integer")?.0)
    }

    pub fn int(&mut self) -> Result<i64> {
        let (major, arg, at) = self.head()?;
        match major {
            MAJOR_UINT if arg <= i64::MAX as u64 => Ok(arg as i64),
            MAJOR_NINT if arg <= i64::MAX as u64 => Ok(!(arg as i64)),
            MAJOR_UINT | MAJOR_NINT => self.err(at, "integer out of range"),
            _ => self.err(at, "expected integer"),
        }
    }

    pub fn bytes(&mut self) -> Result<&'a [u8]> {
        let (len, at) = self.expect(MAJOR_BYTES, "byte string")?;
        let len = usize::try_from(len).or_else(|_| self.err(at, "length overflow"))?;
        self.take(len)
    }

    pub fn bytes_fixed<const N: usize>(&mut self) -> Result<[u8; N]> {
        let at = self.pos;
        let b = self.bytes()?;
        b.try_into()
            .or_else(|_| self.err(at, format!("expected {N}-byte string, got {}", b.len())))
    }

    pub fn text(&mut self) -> Result<&'a str> {
        let (len, at) = self.expect(MAJOR_TEXT, "text string")?;
        let len = usize::try_from(len).or_else(|_| self.err(at, "length overflow"))?;
        let raw = self.take(len)?;
        std::str::from_utf8(raw).or_else(|_| self.err(at, "invalid utf-8"))
    }

    /// Array head. Each element takes at least one byte, so longer claims are
    /// rejected before any allocation.
    pub fn array(&mut self) -> Result<usize> {
        let (len, at) = self.expect(MAJOR_ARRAY, "array")?;
        self.bounded_len(len, at)
    }

    pub fn array_exact(&mut self, n: usize) -> Result<()> {
        let at = self.pos;
        let len = self.array()?;
        if len != n {
            return self.err(at, format!("expected array of {n}, got {len}"));
        }
        Ok(())
    }

    pub fn map(&mut self) -> Result<usize> {
        let (len, at) = self.expect(MAJOR_MAP, "map")?;
        self.bounded_len(len, at)
    }

    pub fn map_exact(&mut self, n: usize) -> Result<()> {
        let at = self.pos;
        let len = self.map()?;
        if len != n {
            return self.err(at, format!("expected map of {n} entries, got {len}"));
        }
        Ok(())
    }

    fn bounded_len(&self, len: u64, at: usize) -> Result<usize> {
        let remaining = (self.buf.len() - self.pos) as u64;
        if len > remaining {
            return self.err(at, "length exceeds remaining input");
        }
        Ok(len as usize)
    }

    /// Next map key, which must equal `expected`.
    pub fn key(&mut self, expected: u64) -> Result<()> {
        let at = self.pos;
        let k = self.uint()?;
        if k != expected {
            return self.err(at, format!("expected key {expected}, found {k}"));
        }
        Ok(())
    }

    pub fn is_null(&self) -> bool {
        self.buf.get(self.pos) == Some(&0xf6)
    }

    pub fn null(&mut self) -> Result<()> {
        let (arg, at) = self.expect(MAJOR_SIMPLE, "null")?;
        if arg != SIMPLE_NULL {
            return self.err(at, "expected null");
        }
        Ok(())
    }

    /// Either `null` or an unsigned integer.
    pub fn opt_uint(&mut self) -> Result<Option<u64>> {
        if self.is_null() {
            self.null()?;
            Ok(None)
        } else {
            self.uint().map(Some)
        }
    }

    /// Skip one complete item and return its raw encoding.
    pub fn raw_item(&mut self) -> Result<&'a [u8]> {
        let start = self.pos;
        self.skip(0)?;
        Ok(&self.buf[start..self.pos])
    }

    fn skip(&mut self, depth: usize) -> Result<()> {
        if depth > 32 {
            return self.err(self.pos, "nesting too deep");
        }
        match self.peek_major() {
            Some(MAJOR_BYTES) => self.bytes().map(|_| ()),
            Some(MAJOR_TEXT) => self.text().map(|_| ()),
            Some(MAJOR_ARRAY) => {
                for _ in 0..self.array()? {
                    self.skip(depth + 1)?;
                }
                Ok(())
            }
            Some(MAJOR_MAP) => {
                let n = self.map()?;
                let mut prev = None;
                for _ in 0..n {
                    let at = self.pos;
                    let k = self.uint()?;
                    if prev.is_some_and(|p| k <= p) {
                        return self.err(at, "map keys not strictly ascending");
                    }
                    prev = Some(k);
                    self.skip(depth + 1)?;
                }
                Ok(())
            }
            Some(MAJOR_SIMPLE) => self.null(),
            Some(_) => self.int().map(|_| ()),
            None => self.err(self.pos, "truncated: need 1 bytes"),
        }
    }

    /// Require the whole buffer to have been consumed.
    pub fn finish(self) -> Result<()> {
        if self.pos != self.buf.len() {
            return self.err(self.pos, "trailing bytes");
        }
        Ok(())
    }
}
