//! Serves an unlocked instance on a Unix stream socket.
//!
//! Every connection gets a thread; requests from all connections run one at
//! a time under a single mutex. A frame that stays incomplete for
//! [`FRAME_TIMEOUT`] is answered with PROTO and dropped, and the connection
//! carries on.

use std::io::{self, ErrorKind, Read, Write};
use std::os::unix::net::{UnixListener, UnixStream};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use sflc_core::{BlockDevice, DeviceInstance, LogicalAddress};

use crate::protocol::{decode, Decoded, Request, Response, Status, WRITE_FRAME_LEN};

pub const FRAME_TIMEOUT: Duration = Duration::from_millis(200);
const ACCEPT_POLL: Duration = Duration::from_millis(20);

/// `<image>.sock`
pub fn socket_path(image: &Path) -> PathBuf {
    let mut p = image.as_os_str().to_owned();
    p.push(".sock");
    PathBuf::from(p)
}

struct Shared<D: BlockDevice> {
    instance: Mutex<Option<DeviceInstance<D>>>,
    stop: AtomicBool,
    socket: PathBuf,
}

impl<D: BlockDevice> Shared<D> {
    fn execute(&self, req: Request) -> Response {
        let mut guard = self.instance.lock().unwrap_or_else(|e| e.into_inner());
        let Some(inst) = guard.as_mut() else {
            return Response::status(Status::Io);
        };
        let addr = |volume: u8, block: u64| LogicalAddress::new(volume as usize, block);
        let result = match req {
            Request::Read { volume, block } => return inst.read(addr(volume, block)).map_or_else(err, Response::data),
            Request::Write { volume, block, data } => inst.write(addr(volume, block), &data),
            Request::Trim { volume, block } => inst.trim(addr(volume, block)),
            Request::Flush => inst.flush(),
            Request::Close => {
                let r = inst.close();
                // Dropping the instance releases the image lock.
                *guard = None;
                let _ = std::fs::remove_file(&self.socket);
                self.stop.store(true, Ordering::SeqCst);
                r
            }
        };
        result.map_or_else(err, |()| Response::status(Status::Ok))
    }
}

fn err(e: sflc_core::Error) -> Response {
    Response::status(Status::for_error(&e))
}

/// A bound socket ready to serve.
pub struct Server<D: BlockDevice> {
    listener: UnixListener,
    shared: Arc<Shared<D>>,
}

impl<D: BlockDevice + Send + 'static> Server<D> {
    /// Binds `socket`. A leftover socket file is replaced; callers are
    /// expected to hold the image lock, so no live server can own it.
    pub fn bind(instance: DeviceInstance<D>, socket: &Path) -> io::Result<Self> {
        match std::fs::remove_file(socket) {
            Err(e) if e.kind() != ErrorKind::NotFound => return Err(e),
            _ => {}
        }
        let listener = UnixListener::bind(socket)?;
        listener.set_nonblocking(true)?;
        Ok(Server {
            listener,
            shared: Arc::new(Shared {
                instance: Mutex::new(Some(instance)),
                stop: AtomicBool::new(false),
                socket: socket.to_owned(),
            }),
        })
    }

    /// Accepts connections until a CLOSE request has been served.
    pub fn run(self) -> io::Result<()> {
        while !self.shared.stop.load(Ordering::SeqCst) {
            match self.listener.accept() {
                Ok((stream, _)) => {
                    let shared = Arc::clone(&self.shared);
                    thread::spawn(move || {
                        let _ = serve_connection(stream, &shared);
                    });
                }
                Err(e) if e.kind() == ErrorKind::WouldBlock => thread::sleep(ACCEPT_POLL),
                Err(e) if e.kind() == ErrorKind::Interrupted => {}
                Err(e) => return Err(e),
            }
        }
        Ok(())
    }
}

fn serve_connection<D: BlockDevice>(mut stream: UnixStream, shared: &Shared<D>) -> io::Result<()> {
    stream.set_nonblocking(false)?;
    stream.set_read_timeout(Some(FRAME_TIMEOUT))?;
    let mut buf: Vec<u8> = Vec::with_capacity(2 * WRITE_FRAME_LEN);
    let mut chunk = vec![0u8; WRITE_FRAME_LEN];
    loop {
        loop {
            match decode(&buf) {
                Decoded::Incomplete => break,
                Decoded::Unknown(n) => {
                    buf.drain(..n);
                    stream.write_all(&Response::status(Status::Protocol).encode())?;
                }
                Decoded::Frame(req, n) => {
                    buf.drain(..n);
                    stream.write_all(&shared.execute(req).encode())?;
                }
            }
        }
        match stream.read(&mut chunk) {
            Ok(0) => {
                if !buf.is_empty() {
                    let _ = stream.write_all(&Response::status(Status::Protocol).encode());
                }
                return Ok(());
            }
            Ok(n) => buf.extend_from_slice(&chunk[..n]),
            Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {
                if !buf.is_empty() {
                    buf.clear();
                    stream.write_all(&Response::status(Status::Protocol).encode())?;
                }
            }
            Err(e) if e.kind() == ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
}
