//! Blocking client for the block socket.

use std::io::{self, Read, Write};
use std::os::unix::net::UnixStream;
use std::path::Path;

use sflc_core::{Block, BLOCK_SIZE};

use crate::protocol::{Request, Response, Status};

pub struct Client {
    stream: UnixStream,
}

impl Client {
    pub fn connect(socket: &Path) -> io::Result<Self> {
        Ok(Client { stream: UnixStream::connect(socket)? })
    }

    pub fn request(&mut self, req: &Request) -> io::Result<Response> {
        self.stream.write_all(&req.encode())?;
        self.response(matches!(req, Request::Read { .. }))
    }

    /// Reads one response; `read` says whether a data block may follow.
    pub fn response(&mut self, read: bool) -> io::Result<Response> {
        let mut status = [0u8; 1];
        self.stream.read_exact(&mut status)?;
        let status = Status::from_byte(status[0])
            .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidData, format!("unknown status {:#04x}", status[0])))?;
        if read && status == Status::Ok {
            let mut data = Box::new([0u8; BLOCK_SIZE]);
            self.stream.read_exact(&mut data[..])?;
            return Ok(Response { status, data: Some(data) });
        }
        Ok(Response::status(status))
    }

    pub fn read_block(&mut self, volume: u8, block: u64) -> io::Result<Response> {
        self.request(&Request::Read { volume, block })
    }

    pub fn write_block(&mut self, volume: u8, block: u64, data: &Block) -> io::Result<Status> {
        Ok(self.request(&Request::Write { volume, block, data: Box::new(*data) })?.status)
    }

    pub fn trim(&mut self, volume: u8, block: u64) -> io::Result<Status> {
        Ok(self.request(&Request::Trim { volume, block })?.status)
    }

    pub fn flush(&mut self) -> io::Result<Status> {
        Ok(self.request(&Request::Flush)?.status)
    }

    pub fn close(&mut self) -> io::Result<Status> {
        Ok(self.request(&Request::Close)?.status)
    }

    /// The underlying stream, for sending raw bytes.
    pub fn stream(&mut self) -> &mut UnixStream {
        &mut self.stream
    }
}
