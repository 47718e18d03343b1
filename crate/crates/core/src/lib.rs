//! Deniable multi-volume encrypted disk images.
//!
//! One image holds up to 15 volumes in a linear hierarchy. Each password
//! unlocks its own volume and every volume below it; nothing on disk reveals
//! how many volumes exist. Volumes grow lazily in slices of 256 blocks
//! scattered uniformly at random across the image, and every byte not
//! explained by an unlocked volume is indistinguishable from random.
//!
//! - [`layout`]: geometry of an image, recomputed from its size.
//! - [`crypto`]: Argon2id, AES-GCM key wrapping, AES-CTR block encryption.
//! - [`header`]: formatting, unlocking, password changes, closing.
//! - [`engine`]: logical block I/O, slice allocation and reclamation.
//! - [`analyze`]: snapshot diffs, random refresh, deniability test harness.

pub mod analyze;
pub mod crypto;
pub mod device;
pub mod engine;
pub mod error;
pub mod header;
pub mod layout;

pub use analyze::{
    check_pd_constraints, pd_structural_test, random_refresh, snapshot_diff, snapshot_diff_bytes, PdReport,
    PdTestConfig, PdTrace, RefreshPolicy, SliceDiff, SnapshotDiff,
};
pub use crypto::KdfCost;
pub use device::{BlockDevice, FileDevice, MemDevice};
pub use engine::{AllocationOrder, LogicalAddress};
pub use error::{Error, Result};
pub use header::{changepwd, forget_volume, init_device, testpwd, DeviceInstance, InitOptions, InstanceOptions};
pub use layout::{Block, Geometry, Psi, BLOCK_SIZE};
