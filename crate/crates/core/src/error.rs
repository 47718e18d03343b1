use std::io;
use std::path::PathBuf;

use thiserror::Error;

use crate::analyze::PdViolation;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("device of {0} blocks is too small to hold the header and one slice")]
    DeviceTooSmall(u64),
    #[error("device of {0} blocks has too many slices for 32-bit slice indices")]
    DeviceTooLarge(u64),
    #[error("image length {0} is not a multiple of the block size")]
    InvalidImageSize(u64),
    #[error("out of range: {0}")]
    Range(String),

    #[error("empty password")]
    EmptyPassword,
    #[error("two volumes were given the same password")]
    DuplicatePassword,
    #[error("between 1 and 15 volumes are supported, got {0}")]
    VolumeCount(usize),
    #[error("no volume unlocks with this password")]
    NoMatch,
    #[error("the new password already unlocks another volume")]
    SamePassword,
    #[error("authentication failed")]
    AuthFailure,
    #[error("unsupported format version {0:#04x}")]
    UnsupportedVersion(u8),
    #[error("corrupt volume header: {0}")]
    Corrupt(String),
    #[error("random number generator failure: {0}")]
    Rng(String),
    #[error("key derivation failed: {0}")]
    Kdf(String),

    #[error("device instance is closed")]
    InstanceClosed,
    #[error("volume {0} is not open")]
    VolumeNotOpen(usize),
    #[error("no free slices left on the device")]
    NoSpace,
    #[error("logical slice {lsi} of volume {volume} is not mapped")]
    NotMapped { volume: usize, lsi: u64 },
    #[error("logical slice {lsi} of volume {volume} is already mapped")]
    AlreadyMapped { volume: usize, lsi: u64 },

    #[error("snapshots differ in size ({0} vs {1} bytes)")]
    SizeMismatch(u64, u64),
    #[error("access patterns are not a legal pair: {0}")]
    ConstraintViolation(PdViolation),

    #[error("image is locked by another instance ({0})")]
    Locked(PathBuf),
    #[error(transparent)]
    Io(#[from] io::Error),
}
