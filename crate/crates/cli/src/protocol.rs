//! Binary framing of the block socket.
//!
//! ```text
//! request:  opcode u8 | volume u8 | block u64le [ | data [4096] for WRITE ]
//! response: status u8 [ | data [4096] for READ with status OK ]
//! ```
//!
//! Volume and block are ignored for FLUSH and CLOSE but still sent.

use sflc_core::{Block, Error, BLOCK_SIZE};

pub const HEADER_LEN: usize = 10;
pub const WRITE_FRAME_LEN: usize = HEADER_LEN + BLOCK_SIZE;

pub const OP_READ: u8 = 0x01;
pub const OP_WRITE: u8 = 0x02;
pub const OP_TRIM: u8 = 0x03;
pub const OP_FLUSH: u8 = 0x04;
pub const OP_CLOSE: u8 = 0x05;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Request {
    Read { volume: u8, block: u64 },
    Write { volume: u8, block: u64, data: Box<Block> },
    Trim { volume: u8, block: u64 },
    Flush,
    Close,
}

impl Request {
    pub fn opcode(&self) -> u8 {
        match self {
            Request::Read { .. } => OP_READ,
            Request::Write { .. } => OP_WRITE,
            Request::Trim { .. } => OP_TRIM,
            Request::Flush => OP_FLUSH,
            Request::Close => OP_CLOSE,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let (volume, block) = match self {
            Request::Read { volume, block } | Request::Trim { volume, block } => (*volume, *block),
            Request::Write { volume, block, .. } => (*volume, *block),
            Request::Flush | Request::Close => (0, 0),
        };
        let mut out = Vec::with_capacity(WRITE_FRAME_LEN);
        out.push(self.opcode());
        out.push(volume);
        out.extend_from_slice(&block.to_le_bytes());
        if let Request::Write { data, .. } = self {
            out.extend_from_slice(&data[..]);
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Status {
    Ok = 0x00,
    Range = 0x01,
    NoSpace = 0x02,
    NoVolume = 0x03,
    Io = 0x04,
    Protocol = 0x05,
}

impl Status {
    pub fn from_byte(b: u8) -> Option<Status> {
        Some(match b {
            0x00 => Status::Ok,
            0x01 => Status::Range,
            0x02 => Status::NoSpace,
            0x03 => Status::NoVolume,
            0x04 => Status::Io,
            0x05 => Status::Protocol,
            _ => return None,
        })
    }

    /// The status an engine error is reported as.
    pub fn for_error(e: &Error) -> Status {
        match e {
            Error::Range(_) => Status::Range,
            Error::NoSpace => Status::NoSpace,
            Error::VolumeNotOpen(_) => Status::NoVolume,
            _ => Status::Io,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Response {
    pub status: Status,
    /// Present only for a successful READ.
    pub data: Option<Box<Block>>,
}

impl Response {
    pub fn status(status: Status) -> Self {
        Response { status, data: None }
    }

    pub fn data(data: Block) -> Self {
        Response { status: Status::Ok, data: Some(Box::new(data)) }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(1 + BLOCK_SIZE);
        out.push(self.status as u8);
        if let Some(d) = &self.data {
            out.extend_from_slice(&d[..]);
        }
        out
    }
}

/// Result of looking at the front of a receive buffer.
#[derive(Debug, PartialEq, Eq)]
pub enum Decoded {
    /// Not enough bytes yet.
    Incomplete,
    /// A request and the number of bytes it used.
    Frame(Request, usize),
    /// A 10-byte frame with an opcode nobody knows.
    Unknown(usize),
}

pub fn decode(buf: &[u8]) -> Decoded {
    if buf.len() < HEADER_LEN {
        return Decoded::Incomplete;
    }
    let volume = buf[1];
    let block = u64::from_le_bytes(buf[2..HEADER_LEN].try_into().unwrap());
    let req = match buf[0] {
        OP_READ => Request::Read { volume, block },
        OP_TRIM => Request::Trim { volume, block },
        OP_FLUSH => Request::Flush,
        OP_CLOSE => Request::Close,
        OP_WRITE => {
            if buf.len() < WRITE_FRAME_LEN {
                return Decoded::Incomplete;
            }
            let data: Block = buf[HEADER_LEN..WRITE_FRAME_LEN].try_into().unwrap();
            return Decoded::Frame(Request::Write { volume, block, data: Box::new(data) }, WRITE_FRAME_LEN);
        }
        _ => return Decoded::Unknown(HEADER_LEN),
    };
    Decoded::Frame(req, HEADER_LEN)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips() {
        let reqs = [
            Request::Read { volume: 3, block: 0x0102030405060708 },
            Request::Write { volume: 1, block: 9, data: Box::new([0x5a; BLOCK_SIZE]) },
            Request::Trim { volume: 0, block: u64::MAX },
            Request::Flush,
            Request::Close,
        ];
        for r in reqs {
            let bytes = r.encode();
            assert_eq!(decode(&bytes), Decoded::Frame(r.clone(), bytes.len()));
            assert_eq!(decode(&bytes[..bytes.len() - 1]), Decoded::Incomplete);
        }
    }

    #[test]
    fn unknown_opcode_consumes_a_header() {
        let mut b = vec![0x09u8; 12];
        b[0] = 0x00;
        assert_eq!(decode(&b), Decoded::Unknown(10));
        assert_eq!(decode(&b[..9]), Decoded::Incomplete);
    }

    #[test]
    fn status_bytes() {
        for b in 0..=5u8 {
            assert_eq!(Status::from_byte(b).unwrap() as u8, b);
        }
        assert_eq!(Status::from_byte(6), None);
        assert_eq!(Status::for_error(&Error::NoSpace), Status::NoSpace);
        assert_eq!(Status::for_error(&Error::VolumeNotOpen(2)), Status::NoVolume);
        assert_eq!(Status::for_error(&Error::Range("x".into())), Status::Range);
        assert_eq!(Status::for_error(&Error::InstanceClosed), Status::Io);
    }
}
