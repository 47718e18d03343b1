//! On-disk format, version 1.
//!
//! An image of `N` blocks is laid out as
//!
//! ```text
//! [DMB][volume header 0] .. [volume header 14][slice 0] .. [slice S-1][tail]
//! ```
//!
//! Each volume header is one VMB block, followed by the position-map IV
//! blocks and the position-map payload blocks. Each physical slice is one IV
//! block followed by [`SLICE_LOGICAL_BLOCKS`] data blocks. Slice and volume
//! indices are 0-based everywhere.
//!
//! Nothing in this module is stored on disk: the geometry is recomputed from
//! the image length every time.

use std::ops::Range;

use crate::error::{Error, Result};

pub const BLOCK_SIZE: usize = 4096;
/// Data blocks per logical slice.
pub const SLICE_LOGICAL_BLOCKS: u64 = 256;
/// IV blocks at the head of every physical slice.
pub const SLICE_IV_BLOCKS: u64 = 1;
/// Blocks per physical slice.
pub const SLICE_PHYSICAL_BLOCKS: u64 = SLICE_LOGICAL_BLOCKS + SLICE_IV_BLOCKS;
pub const MAX_VOLUMES: usize = 15;
pub const IV_LEN: usize = 16;
pub const KEY_LEN: usize = 32;
pub const TAG_LEN: usize = 16;
pub const SALT_LEN: usize = 32;
/// Bytes per position-map entry.
pub const PSI_ENTRY_LEN: usize = 4;
/// Position-map entry for an unmapped logical slice.
pub const PSI_UNMAPPED: u32 = u32::MAX;
pub const FORMAT_VERSION: u8 = 1;

const PSI_ENTRIES_PER_BLOCK: u64 = (BLOCK_SIZE / PSI_ENTRY_LEN) as u64;
const IVS_PER_BLOCK: u64 = (BLOCK_SIZE / IV_LEN) as u64;

// One IV block must hold the IVs of a whole slice.
const _: () = assert!(SLICE_IV_BLOCKS as usize * BLOCK_SIZE >= SLICE_LOGICAL_BLOCKS as usize * IV_LEN);

/// A raw device block.
pub type Block = [u8; BLOCK_SIZE];

/// Physical slice index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Psi(pub u32);

impl Psi {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl std::fmt::Display for Psi {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        self.0.fmt(f)
    }
}

/// Derived layout constants for a device of `total_blocks` blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Geometry {
    pub total_blocks: u64,
    /// `floor(N / S_P)`; sizes the position maps and ignores the header.
    pub max_slices_bound: u64,
    pub pm_payload_blocks: u64,
    pub pm_iv_blocks: u64,
    pub volume_header_blocks: u64,
    pub header_blocks: u64,
    pub num_slices: u64,
    pub data_start_block: u64,
}

/// Kind of a contiguous on-disk region, see [`Geometry::regions`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegionKind {
    Dmb,
    VolumeHeader(usize),
    Slice(Psi),
    Tail,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Region {
    pub kind: RegionKind,
    pub blocks: Range<u64>,
}

impl Geometry {
    pub fn new(total_blocks: u64) -> Result<Self> {
        let max_slices_bound = total_blocks / SLICE_PHYSICAL_BLOCKS;
        if max_slices_bound >= PSI_UNMAPPED as u64 {
            return Err(Error::DeviceTooLarge(total_blocks));
        }
        let pm_payload_blocks = max_slices_bound.div_ceil(PSI_ENTRIES_PER_BLOCK);
        let pm_iv_blocks = pm_payload_blocks.div_ceil(IVS_PER_BLOCK);
        let volume_header_blocks = 1 + pm_iv_blocks + pm_payload_blocks;
        let header_blocks = 1 + MAX_VOLUMES as u64 * volume_header_blocks;
        let num_slices = total_blocks.saturating_sub(header_blocks) / SLICE_PHYSICAL_BLOCKS;
        if num_slices < 1 {
            return Err(Error::DeviceTooSmall(total_blocks));
        }
        Ok(Geometry {
            total_blocks,
            max_slices_bound,
            pm_payload_blocks,
            pm_iv_blocks,
            volume_header_blocks,
            header_blocks,
            num_slices,
            data_start_block: header_blocks,
        })
    }

    /// Geometry of an image file of `len` bytes. The length must be a whole
    /// number of blocks.
    pub fn from_image_len(len: u64) -> Result<Self> {
        if !len.is_multiple_of(BLOCK_SIZE as u64) {
            return Err(Error::InvalidImageSize(len));
        }
        Self::new(len / BLOCK_SIZE as u64)
    }

    /// Largest logical volume, in blocks. Every volume may grow to this size
    /// (overcommitment); only physical slices are a shared budget.
    pub fn logical_blocks(&self) -> u64 {
        self.num_slices * SLICE_LOGICAL_BLOCKS
    }

    /// Number of position-map entries stored on disk per volume.
    pub fn pm_entries(&self) -> u64 {
        self.pm_payload_blocks * PSI_ENTRIES_PER_BLOCK
    }

    pub fn image_len(&self) -> u64 {
        self.total_blocks * BLOCK_SIZE as u64
    }

    pub fn volume_header_start(&self, volume: usize) -> u64 {
        debug_assert!(volume < MAX_VOLUMES);
        1 + volume as u64 * self.volume_header_blocks
    }

    pub fn vmb_block(&self, volume: usize) -> u64 {
        self.volume_header_start(volume)
    }

    pub fn pm_iv_block(&self, volume: usize, i: u64) -> u64 {
        debug_assert!(i < self.pm_iv_blocks);
        self.volume_header_start(volume) + 1 + i
    }

    pub fn pm_payload_block(&self, volume: usize, i: u64) -> u64 {
        debug_assert!(i < self.pm_payload_blocks);
        self.volume_header_start(volume) + 1 + self.pm_iv_blocks + i
    }

    /// First block (the IV block) of physical slice `psi`.
    pub fn slice_start(&self, psi: Psi) -> u64 {
        self.data_start_block + psi.0 as u64 * SLICE_PHYSICAL_BLOCKS
    }

    pub fn slice_iv_block(&self, psi: Psi) -> u64 {
        self.slice_start(psi)
    }

    /// Absolute address of data block `offset` of slice `psi`.
    pub fn slice_block_address(&self, psi: Psi, offset: u64) -> Result<u64> {
        if psi.0 as u64 >= self.num_slices {
            return Err(Error::Range(format!(
                "slice {psi} out of range (device has {} slices)",
                self.num_slices
            )));
        }
        if offset >= SLICE_LOGICAL_BLOCKS {
            return Err(Error::Range(format!("offset {offset} outside slice")));
        }
        Ok(self.slice_start(psi) + SLICE_IV_BLOCKS + offset)
    }

    pub fn tail_start(&self) -> u64 {
        self.data_start_block + self.num_slices * SLICE_PHYSICAL_BLOCKS
    }

    /// The slice containing absolute block `block`, with the block's position
    /// inside the physical slice (0 is the IV block).
    pub fn locate_in_slice(&self, block: u64) -> Option<(Psi, u64)> {
        if block < self.data_start_block || block >= self.tail_start() {
            return None;
        }
        let rel = block - self.data_start_block;
        Some((
            Psi((rel / SLICE_PHYSICAL_BLOCKS) as u32),
            rel % SLICE_PHYSICAL_BLOCKS,
        ))
    }

    /// Every region of the image in on-disk order. The regions tile
    /// `0..total_blocks` exactly; the tail is omitted when empty.
    pub fn regions(&self) -> Vec<Region> {
        let mut out = Vec::with_capacity(2 + MAX_VOLUMES + self.num_slices as usize);
        out.push(Region { kind: RegionKind::Dmb, blocks: 0..1 });
        for v in 0..MAX_VOLUMES {
            let start = self.volume_header_start(v);
            out.push(Region {
                kind: RegionKind::VolumeHeader(v),
                blocks: start..start + self.volume_header_blocks,
            });
        }
        for s in 0..self.num_slices {
            let start = self.slice_start(Psi(s as u32));
            out.push(Region {
                kind: RegionKind::Slice(Psi(s as u32)),
                blocks: start..start + SLICE_PHYSICAL_BLOCKS,
            });
        }
        if self.tail_start() < self.total_blocks {
            out.push(Region { kind: RegionKind::Tail, blocks: self.tail_start()..self.total_blocks });
        }
        out
    }
}

/// Byte offset of DMB cell `i` within block 0.
pub const fn dmb_cell_offset(i: usize) -> usize {
    DMB_CELLS_OFFSET + i * DMB_CELL_LEN
}

pub const DMB_SALT_OFFSET: usize = 1;
pub const DMB_CELLS_OFFSET: usize = DMB_SALT_OFFSET + SALT_LEN;
pub const DMB_CELL_LEN: usize = IV_LEN + KEY_LEN + TAG_LEN;
/// First byte after the last cell; the rest of the DMB is random fill.
pub const DMB_PADDING_OFFSET: usize = dmb_cell_offset(MAX_VOLUMES);

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn one_tebibyte() {
        let g = Geometry::new(1 << 28).unwrap();
        assert_eq!(g.max_slices_bound, 1_044_495);
        assert_eq!(g.pm_payload_blocks, 1021);
        assert_eq!(g.pm_iv_blocks, 4);
        assert_eq!(g.volume_header_blocks, 1026);
        assert_eq!(g.header_blocks, 15_391);
        assert_eq!(g.num_slices, 1_044_436);
    }

    #[test]
    fn thousand_blocks() {
        let g = Geometry::new(1000).unwrap();
        assert_eq!(g.max_slices_bound, 3);
        assert_eq!(g.pm_payload_blocks, 1);
        assert_eq!(g.pm_iv_blocks, 1);
        assert_eq!(g.volume_header_blocks, 3);
        assert_eq!(g.header_blocks, 46);
        assert_eq!(g.num_slices, 3);
    }

    #[test]
    fn header_only_device_is_too_small() {
        assert!(matches!(Geometry::new(46), Err(Error::DeviceTooSmall(46))));
        assert!(matches!(Geometry::new(46 + 256), Err(Error::DeviceTooSmall(_))));
        assert_eq!(Geometry::new(46 + 257).unwrap().num_slices, 1);
        assert!(matches!(Geometry::new(0), Err(Error::DeviceTooSmall(0))));
    }

    #[test]
    fn image_len_must_be_block_multiple() {
        assert!(matches!(Geometry::from_image_len(4096 * 1000 + 1), Err(Error::InvalidImageSize(_))));
        assert_eq!(Geometry::from_image_len(4096 * 1000).unwrap(), Geometry::new(1000).unwrap());
    }

    #[test]
    fn block_addresses() {
        let g = Geometry::new(1000).unwrap();
        assert_eq!(g.slice_block_address(Psi(2), 44).unwrap(), 605);
        assert_eq!(g.slice_block_address(Psi(0), 0).unwrap(), 47);
        assert_eq!(g.slice_iv_block(Psi(2)), 46 + 2 * 257);
        assert!(matches!(g.slice_block_address(Psi(3), 0), Err(Error::Range(_))));
        assert!(matches!(g.slice_block_address(Psi(0), 256), Err(Error::Range(_))));
        assert_eq!(g.locate_in_slice(605), Some((Psi(2), 45)));
        assert_eq!(g.locate_in_slice(45), None);
        assert_eq!(g.locate_in_slice(g.tail_start()), None);
    }

    #[test]
    fn dmb_fits_in_a_block() {
        assert_eq!(DMB_CELL_LEN, 64);
        assert_eq!(DMB_PADDING_OFFSET, 33 + 15 * 64);
        const { assert!(DMB_PADDING_OFFSET <= BLOCK_SIZE) };
    }

    fn check_invariants(g: &Geometry) {
        let n = g.total_blocks;
        assert_eq!(g.max_slices_bound, n / SLICE_PHYSICAL_BLOCKS);
        assert_eq!(
            g.pm_payload_blocks,
            (g.max_slices_bound * PSI_ENTRY_LEN as u64).div_ceil(BLOCK_SIZE as u64)
        );
        assert_eq!(g.pm_iv_blocks, (g.pm_payload_blocks * IV_LEN as u64).div_ceil(BLOCK_SIZE as u64));
        assert_eq!(g.volume_header_blocks, 1 + g.pm_iv_blocks + g.pm_payload_blocks);
        assert_eq!(g.header_blocks, 1 + 15 * g.volume_header_blocks);
        assert!(g.num_slices >= 1 && g.num_slices <= g.max_slices_bound);
        assert!(g.pm_entries() >= g.max_slices_bound);
        assert!(g.data_start_block + g.num_slices * SLICE_PHYSICAL_BLOCKS <= n);
        assert!(n - g.tail_start() < SLICE_PHYSICAL_BLOCKS);
    }

    proptest! {
        #[test]
        fn geometry_invariants(n in 100u64..1_000_000_000) {
            match Geometry::new(n) {
                Ok(g) => {
                    check_invariants(&g);
                    prop_assert_eq!(g, Geometry::new(n).unwrap());
                }
                Err(Error::DeviceTooSmall(_)) => prop_assert!(n < 46 + 257),
                Err(e) => prop_assert!(false, "unexpected {e}"),
            }
        }

        #[test]
        fn regions_tile_the_device(n in 303u64..200_000) {
            let g = Geometry::new(n).unwrap();
            let mut next = 0;
            for r in g.regions() {
                prop_assert_eq!(r.blocks.start, next);
                prop_assert!(r.blocks.end > r.blocks.start);
                next = r.blocks.end;
            }
            prop_assert_eq!(next, n);
        }

        #[test]
        fn block_address_is_injective(n in 303u64..100_000, a in any::<(u32, u64)>(), b in any::<(u32, u64)>()) {
            let g = Geometry::new(n).unwrap();
            let pa = (Psi(a.0 % g.num_slices as u32), a.1 % SLICE_LOGICAL_BLOCKS);
            let pb = (Psi(b.0 % g.num_slices as u32), b.1 % SLICE_LOGICAL_BLOCKS);
            let xa = g.slice_block_address(pa.0, pa.1).unwrap();
            let xb = g.slice_block_address(pb.0, pb.1).unwrap();
            prop_assert_eq!(xa == xb, pa == pb);
            prop_assert_eq!(g.locate_in_slice(xa), Some((pa.0, pa.1 + 1)));
        }
    }
}
