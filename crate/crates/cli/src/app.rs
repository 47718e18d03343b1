//! The `sflc` command line.

use std::fs::File;
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::rngs::OsRng;
use sflc_core::analyze::{random_refresh, snapshot_diff, RefreshPolicy};
use sflc_core::{
    changepwd, forget_volume, init_device, testpwd, BlockDevice, DeviceInstance, Error, FileDevice, Geometry, InitOptions,
    InstanceOptions, KdfCost, BLOCK_SIZE,
};
use zeroize::Zeroizing;

use crate::bench::{self, BenchConfig, BenchMode};
use crate::client::Client;
use crate::protocol::Status;
use crate::server::{socket_path, Server};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_NO_MATCH: i32 = 2;
pub const EXIT_LOCKED: i32 = 3;
pub const EXIT_NOT_OPEN: i32 = 4;
pub const EXIT_USAGE: i32 = 64;

#[derive(Debug, Parser)]
#[command(name = "sflc", version, about = "Deniable multi-volume encrypted disk images")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Secrets {
    /// Read passwords from this file descriptor, one per line, instead of
    /// prompting.
    #[arg(long, value_name = "FD")]
    pub password_fd: Option<u32>,
    /// Cheap key derivation, for tests only. Also enabled by SFLC_KDF_FAST=1.
    #[arg(long)]
    pub kdf_fast: bool,
}

impl Secrets {
    fn kdf(&self) -> KdfCost {
        let env = std::env::var("SFLC_KDF_FAST").is_ok_and(|v| v == "1");
        if self.kdf_fast || env {
            KdfCost::FAST
        } else {
            KdfCost::STANDARD
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Format an image with one or more volumes.
    Init {
        image: PathBuf,
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=15))]
        volumes: u8,
        /// Create the image with this size (e.g. 64M) instead of formatting an
        /// existing file.
        #[arg(long, value_parser = bench::parse_size)]
        size: Option<u64>,
        /// Replace an existing file when --size is given.
        #[arg(long)]
        force: bool,
        /// Only randomize the header region. Faster, but earlier contents of
        /// the file stay visible.
        #[arg(long)]
        skip_randfill: bool,
        #[command(flatten)]
        secrets: Secrets,
    },
    /// Unlock an image and serve its volumes on `<image>.sock` until closed.
    Open {
        image: PathBuf,
        /// IV blocks kept in memory.
        #[arg(long, default_value_t = sflc_core::engine::DEFAULT_IV_CACHE_CAPACITY)]
        cache: usize,
        #[command(flatten)]
        secrets: Secrets,
    },
    /// Persist and close an open image.
    Close { image: PathBuf },
    /// Report which volume a password unlocks.
    Testpwd {
        image: PathBuf,
        #[command(flatten)]
        secrets: Secrets,
    },
    /// Change the password of one volume (old password, then new).
    Changepwd {
        image: PathBuf,
        #[command(flatten)]
        secrets: Secrets,
    },
    /// Make a volume unreachable by overwriting its key slot with random bytes.
    WipeHeader {
        image: PathBuf,
        #[command(flatten)]
        secrets: Secrets,
    },
    /// Re-randomize free space and re-encrypt data blocks.
    Refresh {
        image: PathBuf,
        /// Probability of overwriting each block of a free slice.
        #[arg(long, default_value_t = 0.0)]
        p: f64,
        /// Probability of re-encrypting each data block of an open volume.
        #[arg(long, default_value_t = 0.0)]
        q: f64,
        #[command(flatten)]
        secrets: Secrets,
    },
    /// Run a benchmark on a scratch image at IMAGE.
    Bench {
        image: PathBuf,
        #[arg(long, value_enum)]
        mode: BenchMode,
        #[arg(long, value_parser = bench::parse_size, default_value = "64M")]
        size: u64,
        #[arg(long)]
        force: bool,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        kdf_fast: bool,
    },
    /// Show which blocks differ between two images, slice by slice.
    Diff {
        a: PathBuf,
        b: PathBuf,
        /// List unchanged slices too.
        #[arg(long)]
        all: bool,
    },
}

/// A failed command: message and exit status.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::NoMatch => EXIT_NO_MATCH,
            Error::Locked(_) => EXIT_LOCKED,
            _ => EXIT_FAILURE,
        };
        Failure { code, message: e.to_string() }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Error::Io(e).into()
    }
}

fn fail(code: i32, message: impl Into<String>) -> Failure {
    Failure { code, message: message.into() }
}

/// Where passwords come from: a descriptor read line by line, or the
/// terminal.
pub struct PasswordSource {
    reader: Option<BufReader<File>>,
}

impl PasswordSource {
    pub fn new(fd: Option<u32>) -> io::Result<Self> {
        let reader = match fd {
            Some(fd) => Some(BufReader::new(File::open(format!("/dev/fd/{fd}"))?)),
            None => None,
        };
        Ok(PasswordSource { reader })
    }

    pub fn next(&mut self, prompt: &str, confirm: bool) -> Result<Zeroizing<String>, Failure> {
        let pw = match &mut self.reader {
            Some(r) => {
                let mut line = Zeroizing::new(String::new());
                if r.read_line(&mut line)? == 0 {
                    return Err(fail(EXIT_FAILURE, "password input ended early"));
                }
                let end = line.trim_end_matches(['\n', '\r']).len();
                line.truncate(end);
                line
            }
            None => {
                let pw = Zeroizing::new(rpassword::prompt_password(prompt)?);
                if confirm {
                    let again = Zeroizing::new(rpassword::prompt_password("Repeat: ")?);
                    if *again != *pw {
                        return Err(fail(EXIT_FAILURE, "passwords do not match"));
                    }
                }
                pw
            }
        };
        if pw.is_empty() {
            return Err(Error::EmptyPassword.into());
        }
        Ok(pw)
    }
}

/// Parses `args` and runs the command. Returns the exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match run(cli.command) {
        Ok(()) => EXIT_OK,
        Err(f) => {
            eprintln!("sflc: {}", f.message);
            f.code
        }
    }
}

fn open_rw(image: &Path) -> Result<FileDevice, Failure> {
    Ok(FileDevice::open(image)?)
}

pub fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::Init { image, volumes, size, force, skip_randfill, secrets } => {
            let mut source = PasswordSource::new(secrets.password_fd)?;
            let mut passwords = Vec::with_capacity(volumes as usize);
            for i in 0..volumes {
                passwords.push(source.next(&format!("Password for volume {i}: "), true)?);
            }
            let mut dev = match size {
                Some(bytes) => {
                    if image.exists() && !force {
                        return Err(fail(EXIT_FAILURE, format!("{} exists; pass --force to replace it", image.display())));
                    }
                    Geometry::new(bytes / BLOCK_SIZE as u64)?;
                    FileDevice::create(&image, bytes / BLOCK_SIZE as u64)?
                }
                None => open_rw(&image)?,
            };
            let opts = InitOptions { skip_randfill, kdf: secrets.kdf() };
            init_device(&mut dev, &passwords.iter().map(|p| p.as_bytes()).collect::<Vec<_>>(), &opts, &mut OsRng)?;
            let g = Geometry::new(dev.block_count())?;
            println!("formatted {} with {volumes} volume(s), {} slices of 1 MiB each", image.display(), g.num_slices);
            Ok(())
        }
        Command::Open { image, cache, secrets } => {
            let dev = open_rw(&image)?;
            let pw = PasswordSource::new(secrets.password_fd)?.next("Password: ", false)?;
            let opts = InstanceOptions { iv_cache_capacity: cache, ..InstanceOptions::with_kdf(secrets.kdf()) };
            let inst = DeviceInstance::instantiate(dev, pw.as_bytes(), &opts)?;
            drop(pw);
            let socket = socket_path(&image);
            for v in inst.open_volumes() {
                println!("volume {v}: {} blocks", inst.logical_blocks());
            }
            let server = Server::bind(inst, &socket)?;
            println!("listening on {}", socket.display());
            io::stdout().flush()?;
            server.run()?;
            Ok(())
        }
        Command::Close { image } => {
            let socket = socket_path(&image);
            let mut client =
                Client::connect(&socket).map_err(|_| fail(EXIT_NOT_OPEN, format!("{} is not open", image.display())))?;
            match client.close()? {
                Status::Ok => Ok(()),
                s => Err(fail(EXIT_FAILURE, format!("server could not persist the image ({s:?})"))),
            }
        }
        Command::Testpwd { image, secrets } => {
            let pw = PasswordSource::new(secrets.password_fd)?.next("Password: ", false)?;
            let mut dev = FileDevice::open_read_only(&image)?;
            let v = testpwd(&mut dev, pw.as_bytes(), secrets.kdf())?;
            println!("password unlocks volume {v}");
            Ok(())
        }
        Command::Changepwd { image, secrets } => {
            let mut source = PasswordSource::new(secrets.password_fd)?;
            let old = source.next("Current password: ", false)?;
            let new = source.next("New password: ", true)?;
            let mut dev = open_rw(&image)?;
            let v = changepwd(&mut dev, old.as_bytes(), new.as_bytes(), secrets.kdf(), &mut OsRng)?;
            println!("password of volume {v} changed");
            Ok(())
        }
        Command::WipeHeader { image, secrets } => {
            let pw = PasswordSource::new(secrets.password_fd)?.next("Password: ", false)?;
            let mut dev = open_rw(&image)?;
            let v = forget_volume(&mut dev, pw.as_bytes(), secrets.kdf(), &mut OsRng)?;
            println!("key slot of volume {v} overwritten");
            Ok(())
        }
        Command::Refresh { image, p, q, secrets } => {
            let policy = RefreshPolicy::new(p, q).map_err(|e| fail(EXIT_USAGE, e.to_string()))?;
            let dev = open_rw(&image)?;
            let pw = PasswordSource::new(secrets.password_fd)?.next("Password: ", false)?;
            let mut inst = DeviceInstance::instantiate(dev, pw.as_bytes(), &InstanceOptions::with_kdf(secrets.kdf()))?;
            random_refresh(&mut inst, policy, &mut OsRng)?;
            inst.close()?;
            Ok(())
        }
        Command::Bench { image, mode, size, force, seed, kdf_fast } => {
            let kdf = Secrets { password_fd: None, kdf_fast }.kdf();
            let report = bench::run(&BenchConfig { image, mode, size_bytes: size, force, kdf, seed })?;
            print!("{report}");
            Ok(())
        }
        Command::Diff { a, b, all } => {
            let mut da = FileDevice::open_read_only(&a)?;
            let mut db = FileDevice::open_read_only(&b)?;
            let d = snapshot_diff(&mut da, &mut db)?;
            let mut out = io::stdout().lock();
            writeln!(out, "dmb\t{}", if d.header.dmb_changed { "changed" } else { "same" })?;
            for (v, n) in d.header.volume_headers.iter().enumerate() {
                writeln!(out, "header {v}\t{n} blocks changed")?;
            }
            writeln!(out, "tail\t{} blocks changed", d.header.tail_changed)?;
            for s in &d.slices {
                if all || !s.mask.is_zero() {
                    writeln!(out, "slice {}\t{}\t{}", s.psi, s.mask, s.mask.count())?;
                }
            }
            Ok(())
        }
    }
}
