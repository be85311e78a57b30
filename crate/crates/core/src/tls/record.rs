//! Record framing over a TCP stream with deadlines, plus handshake message
//! reassembly.

use std::io::{self, Read, Write};
use std::net::TcpStream;
use std::time::Instant;

use super::codec::{CT_ALERT, CT_APPLICATION_DATA, CT_CHANGE_CIPHER_SPEC, CT_HANDSHAKE};
use super::crypto::RecordCipher;

const MAX_RECORD: usize = 16384 + 2048;
const MAX_HANDSHAKE: usize = 1 << 20;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum IoFail {
    #[error("timed out")]
    Timeout,
    #[error("connection closed")]
    Eof,
    #[error("connection reset")]
    Reset,
    #[error("i/o error: {0}")]
    Other(String),
    #[error("record decryption failed")]
    BadMac,
    #[error("malformed record: {0}")]
    Malformed(&'static str),
}

impl IoFail {
    fn from_io(e: io::Error) -> Self {
        match e.kind() {
            io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut => IoFail::Timeout,
            io::ErrorKind::UnexpectedEof => IoFail::Eof,
            io::ErrorKind::ConnectionReset | io::ErrorKind::ConnectionAborted | io::ErrorKind::BrokenPipe => {
                IoFail::Reset
            }
            _ => IoFail::Other(e.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Incoming {
    Handshake { msg_type: u8, body: Vec<u8>, raw: Vec<u8> },
    Alert { level: u8, code: u8 },
    ChangeCipherSpec,
    AppData(Vec<u8>),
}

pub struct RecordIo {
    stream: TcpStream,
    deadline: Option<Instant>,
    inbuf: Vec<u8>,
    hs_buf: Vec<u8>,
    pub read_cipher: Option<RecordCipher>,
    pub write_cipher: Option<RecordCipher>,
}

impl RecordIo {
    pub fn new(stream: TcpStream) -> Self {
        RecordIo {
            stream,
            deadline: None,
            inbuf: Vec::new(),
            hs_buf: Vec::new(),
            read_cipher: None,
            write_cipher: None,
        }
    }

    pub fn set_deadline(&mut self, deadline: Option<Instant>) {
        self.deadline = deadline;
    }

    pub fn has_pending_handshake(&self) -> bool {
        !self.hs_buf.is_empty()
    }

    pub fn shutdown(&self) {
        let _ = self.stream.shutdown(std::net::Shutdown::Both);
    }

    fn fill(&mut self, want: usize) -> Result<(), IoFail> {
        let mut chunk = [0u8; 8192];
        while self.inbuf.len() < want {
            let timeout = match self.deadline {
                Some(d) => {
                    let now = Instant::now();
                    if now >= d {
                        return Err(IoFail::Timeout);
                    }
                    Some(d - now)
                }
                None => None,
            };
            self.stream.set_read_timeout(timeout).map_err(IoFail::from_io)?;
            match self.stream.read(&mut chunk) {
                Ok(0) => return Err(IoFail::Eof),
                Ok(n) => self.inbuf.extend_from_slice(&chunk[..n]),
                Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
                Err(e) => return Err(IoFail::from_io(e)),
            }
        }
        Ok(())
    }

    /// Reads one record, decrypting it when a read cipher is installed.
    /// Returns (content type, plaintext).
    pub fn read_record(&mut self) -> Result<(u8, Vec<u8>), IoFail> {
        self.fill(5)?;
        let ct = self.inbuf[0];
        let len = u16::from_be_bytes([self.inbuf[3], self.inbuf[4]]) as usize;
        if !(20..=24).contains(&ct) {
            return Err(IoFail::Malformed("unknown content type"));
        }
        if len > MAX_RECORD {
            return Err(IoFail::Malformed("record too large"));
        }
        self.fill(5 + len)?;
        let payload: Vec<u8> = self.inbuf[5..5 + len].to_vec();
        self.inbuf.drain(..5 + len);
        // CCS is never protected (TLS 1.3 compatibility mode sends it in clear)
        if ct == CT_CHANGE_CIPHER_SPEC {
            return Ok((ct, payload));
        }
        match self.read_cipher.as_mut() {
            Some(c) => c.open(ct, &payload).map_err(|_| IoFail::BadMac),
            None => Ok((ct, payload)),
        }
    }

    fn pop_handshake(&mut self) -> Result<Option<Incoming>, IoFail> {
        if self.hs_buf.len() < 4 {
            return Ok(None);
        }
        let len = ((self.hs_buf[1] as usize) << 16) | ((self.hs_buf[2] as usize) << 8) | self.hs_buf[3] as usize;
        if len > MAX_HANDSHAKE {
            return Err(IoFail::Malformed("handshake message too large"));
        }
        if self.hs_buf.len() < 4 + len {
            return Ok(None);
        }
        let raw: Vec<u8> = self.hs_buf.drain(..4 + len).collect();
        Ok(Some(Incoming::Handshake {
            msg_type: raw[0],
            body: raw[4..].to_vec(),
            raw,
        }))
    }

    pub fn next_incoming(&mut self) -> Result<Incoming, IoFail> {
        loop {
            if let Some(m) = self.pop_handshake()? {
                return Ok(m);
            }
            let (ct, data) = self.read_record()?;
            match ct {
                CT_HANDSHAKE => self.hs_buf.extend_from_slice(&data),
                CT_ALERT if self.hs_buf.is_empty() => {
                    if data.len() < 2 {
                        return Err(IoFail::Malformed("short alert"));
                    }
                    return Ok(Incoming::Alert {
                        level: data[0],
                        code: data[1],
                    });
                }
                CT_CHANGE_CIPHER_SPEC if self.hs_buf.is_empty() => return Ok(Incoming::ChangeCipherSpec),
                CT_APPLICATION_DATA if self.hs_buf.is_empty() => return Ok(Incoming::AppData(data)),
                _ => return Err(IoFail::Malformed("interleaved record during handshake message")),
            }
        }
    }

    pub fn write_record(&mut self, content_type: u8, data: &[u8]) -> Result<(), IoFail> {
        let mut out = Vec::with_capacity(data.len() + 64);
        for chunk in data
            .chunks(16384)
            .chain(if data.is_empty() { Some(&[][..]) } else { None })
        {
            let (ct, payload) = match self.write_cipher.as_mut() {
                Some(c) if content_type != CT_CHANGE_CIPHER_SPEC => c.seal(content_type, chunk),
                _ => (content_type, chunk.to_vec()),
            };
            out.push(ct);
            out.extend_from_slice(&[3, 3]);
            out.extend_from_slice(&(payload.len() as u16).to_be_bytes());
            out.extend_from_slice(&payload);
        }
        self.stream.write_all(&out).map_err(IoFail::from_io)
    }

    /// Writes the very first record with the 0x0301 legacy version some
    /// middleboxes expect.
    pub fn write_initial(&mut self, data: &[u8]) -> Result<(), IoFail> {
        let mut out = vec![CT_HANDSHAKE, 3, 1];
        out.extend_from_slice(&(data.len() as u16).to_be_bytes());
        out.extend_from_slice(data);
        self.stream.write_all(&out).map_err(IoFail::from_io)
    }
}
