#![allow(dead_code)]

use std::io::{Read, Write};
use std::os::unix::net::UnixStream;
use std::path::{Path, PathBuf};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use sflc_cli::server::Server;
use sflc_core::{init_device, DeviceInstance, InitOptions, InstanceOptions, KdfCost, MemDevice};

/// Serves a fresh 1000-block image (3 slices, 768 logical blocks per volume)
/// with volumes "decoy" and "hidden", unlocked with "hidden".
pub fn serve_small_image(dir: &Path) -> (PathBuf, JoinHandle<()>) {
    let mut dev = MemDevice::new(1000);
    let opts = InitOptions { skip_randfill: false, kdf: KdfCost::FAST };
    init_device(&mut dev, &["decoy", "hidden"], &opts, &mut ChaCha20Rng::seed_from_u64(12)).unwrap();
    let iopts = InstanceOptions { rng_seed: Some([12; 32]), ..InstanceOptions::with_kdf(KdfCost::FAST) };
    let inst = DeviceInstance::instantiate(dev, b"hidden", &iopts).unwrap();
    let socket = dir.join("small.img.sock");
    let server = Server::bind(inst, &socket).unwrap();
    let handle = thread::spawn(move || server.run().unwrap());
    (socket, handle)
}

pub fn header(op: u8, volume: u8, block: u64) -> Vec<u8> {
    let mut v = vec![op, volume];
    v.extend_from_slice(&block.to_le_bytes());
    v
}

fn with_block(mut head: Vec<u8>, fill: u8) -> Vec<u8> {
    head.extend(std::iter::repeat_n(fill, 4096));
    head
}

pub struct Step {
    pub name: &'static str,
    pub request: Vec<u8>,
    /// Pause after sending, for the truncated-frame case.
    pub pause: Duration,
    pub response: Vec<u8>,
}

fn step(name: &'static str, request: Vec<u8>, response: Vec<u8>) -> Step {
    Step { name, request, pause: Duration::ZERO, response }
}

/// The golden conversation with [`serve_small_image`], one connection.
pub fn golden_transcript() -> Vec<Step> {
    let ok = vec![0x00];
    vec![
        step("read unmapped", vec![0x01, 0x00, 0x05, 0, 0, 0, 0, 0, 0, 0], with_block(vec![0x00], 0x00)),
        step("write", with_block(vec![0x02, 0x00, 0x05, 0, 0, 0, 0, 0, 0, 0], 0xa5), ok.clone()),
        step("read back", vec![0x01, 0x00, 0x05, 0, 0, 0, 0, 0, 0, 0], with_block(vec![0x00], 0xa5)),
        step("trim", vec![0x03, 0x00, 0x05, 0, 0, 0, 0, 0, 0, 0], ok.clone()),
        step("read reclaimed", vec![0x01, 0x00, 0x05, 0, 0, 0, 0, 0, 0, 0], with_block(vec![0x00], 0x00)),
        step("read past end", vec![0x01, 0x00, 0x00, 0x03, 0, 0, 0, 0, 0, 0], vec![0x01]),
        step("write past end", with_block(vec![0x02, 0x01, 0xff, 0xff, 0xff, 0xff, 0xff, 0xff, 0xff, 0xff], 1), vec![0x01]),
        step("trim past end", vec![0x03, 0x00, 0x00, 0x03, 0, 0, 0, 0, 0, 0], vec![0x01]),
        step("read closed volume", vec![0x01, 0x02, 0, 0, 0, 0, 0, 0, 0, 0], vec![0x03]),
        step("write bad volume", with_block(vec![0x02, 0xc8, 0, 0, 0, 0, 0, 0, 0, 0], 2), vec![0x03]),
        step("fill slice 1", with_block(vec![0x02, 0x01, 0x00, 0x00, 0, 0, 0, 0, 0, 0], 0x11), ok.clone()),
        step("fill slice 2", with_block(vec![0x02, 0x01, 0x00, 0x01, 0, 0, 0, 0, 0, 0], 0x22), ok.clone()),
        step("fill slice 3", with_block(vec![0x02, 0x01, 0x00, 0x02, 0, 0, 0, 0, 0, 0], 0x33), ok.clone()),
        step("no space", with_block(vec![0x02, 0x00, 0x00, 0, 0, 0, 0, 0, 0, 0], 0x44), vec![0x02]),
        step("unknown opcode", vec![0x07, 0, 0, 0, 0, 0, 0, 0, 0, 0], vec![0x05]),
        Step {
            name: "truncated frame",
            request: vec![0x01, 0x00, 0x00, 0x00],
            pause: Duration::from_millis(600),
            response: vec![0x05],
        },
        step("usable after error", vec![0x01, 0x01, 0x00, 0x01, 0, 0, 0, 0, 0, 0], with_block(vec![0x00], 0x22)),
        step("flush", vec![0x04, 0, 0, 0, 0, 0, 0, 0, 0, 0], ok.clone()),
        step("close", vec![0x05, 0, 0, 0, 0, 0, 0, 0, 0, 0], ok),
        step("after close", vec![0x01, 0x00, 0x00, 0, 0, 0, 0, 0, 0, 0], vec![0x04]),
    ]
}

/// Plays the transcript on a fresh server. Returns, per step, whether the
/// response matched byte for byte.
pub fn play_golden_transcript() -> Vec<(&'static str, bool)> {
    let dir = tempfile::tempdir().unwrap();
    let (socket, server) = serve_small_image(dir.path());
    let mut stream = UnixStream::connect(&socket).unwrap();
    stream.set_read_timeout(Some(Duration::from_secs(5))).unwrap();
    let mut results = Vec::new();
    for s in golden_transcript() {
        stream.write_all(&s.request).unwrap();
        thread::sleep(s.pause);
        let mut got = vec![0u8; s.response.len()];
        let ok = stream.read_exact(&mut got).is_ok() && got == s.response;
        results.push((s.name, ok));
    }
    // Nothing beyond the expected bytes.
    stream.set_read_timeout(Some(Duration::from_millis(300))).unwrap();
    let mut extra = [0u8; 1];
    results.push(("no trailing bytes", !matches!(stream.read(&mut extra), Ok(n) if n > 0)));
    server.join().unwrap();
    results.push(("socket removed", !socket.exists()));
    results
}
