//! The indirection layer: logical block reads and writes, lazy slice
//! allocation, slice reclamation and the write-back IV cache.
//!
//! A logical block `B` of a volume lives in logical slice `B / 256` at offset
//! `B % 256`. The volume's position map sends the logical slice to a physical
//! slice; the offset is kept. Unmapped slices read as zeros and reads never
//! allocate.
//!
//! Every data block has its own IV, stored in the IV block at the head of its
//! physical slice and replaced on every write. When a slice is allocated its
//! IV block is filled with per-block "unwritten" markers, pseudo-random values
//! derived from the volume key, so that blocks never written since
//! allocation read as zeros too.

use std::collections::HashMap;
use std::num::NonZeroUsize;

use lru::LruCache;
use rand::{CryptoRng, Rng, RngCore};

use crate::crypto::{derive_subkey, CtrCipher, Iv128, Key256};
use crate::device::BlockDevice;
use crate::error::{Error, Result};
use crate::header::DeviceInstance;
use crate::layout::{Block, Psi, BLOCK_SIZE, IV_LEN, SLICE_LOGICAL_BLOCKS};

pub const DEFAULT_IV_CACHE_CAPACITY: usize = 1024;

/// A block of one volume, addressed by its 0-based logical block number.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LogicalAddress {
    pub volume: usize,
    pub block: u64,
}

impl LogicalAddress {
    pub fn new(volume: usize, block: u64) -> Self {
        LogicalAddress { volume, block }
    }

    /// Logical slice index.
    pub fn lsi(&self) -> u64 {
        self.block / SLICE_LOGICAL_BLOCKS
    }

    pub fn offset(&self) -> u64 {
        self.block % SLICE_LOGICAL_BLOCKS
    }
}

/// How [`SliceAllocator`] picks free slices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AllocationOrder {
    /// Uniformly at random among the free slices.
    #[default]
    Shuffled,
    /// Always the lowest free slice. Leaks allocation history; exists so the
    /// statistical harness can be checked against a broken allocator.
    LowestFirst,
}

/// Session-local slice allocator.
///
/// `order` is a random permutation of all slice indices and `cursor` walks
/// it: every slice at a position before the cursor is occupied. Allocation
/// advances the cursor to the first free slice and takes it. Releasing a
/// slice that the cursor already passed moves it back into the unconsumed
/// tail at a uniformly random position (one Fisher-Yates step), so the next
/// allocation is again uniform over the free set.
#[derive(Debug, Clone)]
pub struct SliceAllocator {
    occupied: Vec<bool>,
    order: Vec<u32>,
    /// Inverse of `order`.
    position: Vec<u32>,
    cursor: usize,
    occupied_count: usize,
    mode: AllocationOrder,
}

impl SliceAllocator {
    pub fn new<R: RngCore + ?Sized>(num_slices: usize, mode: AllocationOrder, rng: &mut R) -> Self {
        let mut order: Vec<u32> = (0..num_slices as u32).collect();
        if mode == AllocationOrder::Shuffled {
            for i in (1..num_slices).rev() {
                let j = rng.gen_range(0..=i);
                order.swap(i, j);
            }
        }
        let mut position = vec![0u32; num_slices];
        for (k, &psi) in order.iter().enumerate() {
            position[psi as usize] = k as u32;
        }
        SliceAllocator {
            occupied: vec![false; num_slices],
            order,
            position,
            cursor: 0,
            occupied_count: 0,
            mode,
        }
    }

    pub fn num_slices(&self) -> usize {
        self.order.len()
    }

    /// Marks a slice found in a loaded position map.
    pub fn mark_occupied(&mut self, psi: Psi) {
        if !std::mem::replace(&mut self.occupied[psi.index()], true) {
            self.occupied_count += 1;
        }
    }

    pub fn is_occupied(&self, psi: Psi) -> bool {
        self.occupied[psi.index()]
    }

    pub fn occupied_count(&self) -> usize {
        self.occupied_count
    }

    pub fn free_count(&self) -> usize {
        self.num_slices() - self.occupied_count
    }

    /// The shuffled slice order (`prmslices`).
    pub fn permutation(&self) -> &[u32] {
        &self.order
    }

    /// Number of leading entries of [`Self::permutation`] known to be occupied.
    pub fn cursor(&self) -> usize {
        self.cursor
    }

    pub fn allocate(&mut self) -> Option<Psi> {
        let psi = match self.mode {
            AllocationOrder::Shuffled => {
                while self.cursor < self.order.len() && self.occupied[self.order[self.cursor] as usize] {
                    self.cursor += 1;
                }
                let psi = *self.order.get(self.cursor)?;
                self.cursor += 1;
                psi
            }
            AllocationOrder::LowestFirst => self.occupied.iter().position(|o| !o)? as u32,
        };
        self.occupied[psi as usize] = true;
        self.occupied_count += 1;
        Some(Psi(psi))
    }

    pub fn release<R: RngCore + ?Sized>(&mut self, psi: Psi, rng: &mut R) {
        if !std::mem::replace(&mut self.occupied[psi.index()], false) {
            return;
        }
        self.occupied_count -= 1;
        if self.mode == AllocationOrder::LowestFirst {
            return;
        }
        let k = self.position[psi.index()] as usize;
        if k >= self.cursor {
            return;
        }
        self.cursor -= 1;
        self.swap(k, self.cursor);
        let j = rng.gen_range(self.cursor..self.order.len());
        self.swap(self.cursor, j);
    }

    fn swap(&mut self, a: usize, b: usize) {
        self.order.swap(a, b);
        self.position[self.order[a] as usize] = a as u32;
        self.position[self.order[b] as usize] = b as u32;
    }

    /// Checks the internal invariants; for tests.
    pub fn check(&self) -> std::result::Result<(), String> {
        let n = self.order.len();
        let mut seen = vec![false; n];
        for (k, &psi) in self.order.iter().enumerate() {
            let p = psi as usize;
            if p >= n || std::mem::replace(&mut seen[p], true) {
                return Err(format!("order is not a permutation at position {k}"));
            }
            if self.position[p] as usize != k {
                return Err(format!("inverse map wrong for slice {psi}"));
            }
        }
        if self.mode == AllocationOrder::Shuffled {
            if let Some(k) = (0..self.cursor).find(|&k| !self.occupied[self.order[k] as usize]) {
                return Err(format!("free slice {} before the cursor", self.order[k]));
            }
        }
        let count = self.occupied.iter().filter(|&&o| o).count();
        if count != self.occupied_count {
            return Err(format!("occupied count {} != {count}", self.occupied_count));
        }
        Ok(())
    }
}

struct CachedIvBlock {
    data: Box<Block>,
    dirty: bool,
}

/// LRU cache of slice IV blocks. Not write-through: dirty blocks reach the
/// disk on eviction or [`IvCache::flush`].
pub struct IvCache {
    entries: LruCache<u64, CachedIvBlock>,
}

impl IvCache {
    pub fn new(capacity: usize) -> Self {
        IvCache { entries: LruCache::new(NonZeroUsize::new(capacity.max(1)).unwrap()) }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.entries.cap().get()
    }

    pub fn dirty_count(&self) -> usize {
        self.entries.iter().filter(|(_, e)| e.dirty).count()
    }

    fn insert<D: BlockDevice>(&mut self, dev: &mut D, block: u64, entry: CachedIvBlock) -> Result<()> {
        if let Some((evicted, old)) = self.entries.push(block, entry) {
            if evicted != block && old.dirty {
                dev.write_block(evicted, &old.data)?;
            }
        }
        Ok(())
    }

    fn load<D: BlockDevice>(&mut self, dev: &mut D, block: u64) -> Result<&mut CachedIvBlock> {
        if !self.entries.contains(&block) {
            let mut data = Box::new([0u8; BLOCK_SIZE]);
            dev.read_block(block, &mut data)?;
            self.insert(dev, block, CachedIvBlock { data, dirty: false })?;
        }
        Ok(self.entries.get_mut(&block).expect("just inserted"))
    }

    fn get_iv<D: BlockDevice>(&mut self, dev: &mut D, block: u64, slot: u64) -> Result<Iv128> {
        let e = self.load(dev, block)?;
        let off = slot as usize * IV_LEN;
        Ok(Iv128(e.data[off..off + IV_LEN].try_into().unwrap()))
    }

    fn set_iv<D: BlockDevice>(&mut self, dev: &mut D, block: u64, slot: u64, iv: &Iv128) -> Result<()> {
        let e = self.load(dev, block)?;
        let off = slot as usize * IV_LEN;
        e.data[off..off + IV_LEN].copy_from_slice(&iv.0);
        e.dirty = true;
        Ok(())
    }

    /// Drops a block without writing it back.
    fn discard(&mut self, block: u64) {
        self.entries.pop(&block);
    }

    pub(crate) fn clear(&mut self) {
        self.entries.clear();
    }

    /// Writes every dirty block, in block order.
    pub fn flush<D: BlockDevice>(&mut self, dev: &mut D) -> Result<()> {
        let mut dirty: Vec<u64> = self.entries.iter().filter(|(_, e)| e.dirty).map(|(k, _)| *k).collect();
        dirty.sort_unstable();
        for block in dirty {
            let e = self.entries.peek_mut(&block).unwrap();
            dev.write_block(block, &e.data)?;
            e.dirty = false;
        }
        Ok(())
    }
}

const WORDS: usize = (SLICE_LOGICAL_BLOCKS / 64) as usize;

/// Per-slice bookkeeping for the trim-to-reclaim trigger. Ephemeral.
#[derive(Debug, Default, Clone)]
struct SliceUsage {
    /// Allocated during this session.
    fresh: bool,
    written: [u64; WORDS],
    trimmed: [u64; WORDS],
}

impl SliceUsage {
    fn set(bits: &mut [u64; WORDS], i: u64, v: bool) {
        let (w, b) = ((i / 64) as usize, i % 64);
        if v {
            bits[w] |= 1 << b;
        } else {
            bits[w] &= !(1 << b);
        }
    }

    /// Every block is trimmed, or was never written since this session
    /// allocated the slice.
    fn is_empty(&self) -> bool {
        (0..WORDS).all(|w| {
            let clear = if self.fresh { self.trimmed[w] | !self.written[w] } else { self.trimmed[w] };
            clear == u64::MAX
        })
    }
}

pub(crate) struct OpenVolume {
    pub(crate) index: usize,
    pub(crate) cipher: CtrCipher,
    marker: CtrCipher,
    pub(crate) pos_map: Vec<Option<Psi>>,
    pub(crate) dirty: bool,
    usage: HashMap<u64, SliceUsage>,
}

impl OpenVolume {
    pub(crate) fn new(index: usize, vek: &Key256) -> Self {
        OpenVolume {
            index,
            cipher: CtrCipher::new(vek),
            marker: CtrCipher::new(&derive_subkey(vek, b"sflc/unwritten-iv/v1")),
            pos_map: Vec::new(),
            dirty: false,
            usage: HashMap::new(),
        }
    }

    pub(crate) fn with_map(mut self, map: Vec<Option<Psi>>) -> Self {
        self.pos_map = map;
        self
    }

    /// IV value meaning "not written since allocation" for one block.
    fn unwritten_marker(&self, psi: Psi, offset: u64) -> Iv128 {
        let mut input = [0u8; 16];
        input[..4].copy_from_slice(&psi.0.to_le_bytes());
        input[4..12].copy_from_slice(&offset.to_le_bytes());
        Iv128(self.marker.encrypt_one(input))
    }

    fn fresh_iv_block(&self, psi: Psi) -> Box<Block> {
        let mut b = Box::new([0u8; BLOCK_SIZE]);
        for m in 0..SLICE_LOGICAL_BLOCKS {
            let off = m as usize * IV_LEN;
            b[off..off + IV_LEN].copy_from_slice(&self.unwritten_marker(psi, m).0);
        }
        b
    }
}

fn random_iv<R: RngCore + CryptoRng>(rng: &mut R, avoid: &Iv128) -> Result<Iv128> {
    loop {
        let iv = Iv128::random(rng)?;
        if iv != *avoid {
            return Ok(iv);
        }
    }
}

impl<D: BlockDevice> DeviceInstance<D> {
    fn check_address(&self, addr: LogicalAddress) -> Result<()> {
        self.volume(addr.volume)?;
        if addr.block >= self.geometry.logical_blocks() {
            return Err(Error::Range(format!(
                "block {} beyond volume end ({} blocks)",
                addr.block,
                self.geometry.logical_blocks()
            )));
        }
        Ok(())
    }

    /// Maximal logical size of every volume, in blocks.
    pub fn logical_blocks(&self) -> u64 {
        self.geometry.logical_blocks()
    }

    pub fn read(&mut self, addr: LogicalAddress) -> Result<Block> {
        let mut out = [0u8; BLOCK_SIZE];
        self.read_into(addr, &mut out)?;
        Ok(out)
    }

    /// Reads a logical block. Never writes to the device.
    pub fn read_into(&mut self, addr: LogicalAddress, out: &mut Block) -> Result<()> {
        self.check_address(addr)?;
        let v = &self.volumes[addr.volume];
        let Some(psi) = v.pos_map[addr.lsi() as usize] else {
            out.fill(0);
            return Ok(());
        };
        let phys = self.geometry.slice_block_address(psi, addr.offset())?;
        let iv = self.iv_cache.get_iv(&mut self.dev, self.geometry.slice_iv_block(psi), addr.offset())?;
        let v = &self.volumes[addr.volume];
        if iv == v.unwritten_marker(psi, addr.offset()) {
            out.fill(0);
            return Ok(());
        }
        self.dev.read_block(phys, out)?;
        v.cipher.apply(&iv, out);
        Ok(())
    }

    pub fn write(&mut self, addr: LogicalAddress, data: &Block) -> Result<()> {
        self.check_address(addr)?;
        let lsi = addr.lsi();
        let psi = match self.volumes[addr.volume].pos_map[lsi as usize] {
            Some(psi) => psi,
            None => self.new_slice(addr.volume, lsi)?,
        };
        self.encrypt_to(addr.volume, psi, addr.offset(), data)?;
        let usage = self.volumes[addr.volume].usage.entry(lsi).or_default();
        SliceUsage::set(&mut usage.written, addr.offset(), true);
        SliceUsage::set(&mut usage.trimmed, addr.offset(), false);
        Ok(())
    }

    /// Encrypts `data` under a fresh IV into block `offset` of slice `psi`.
    pub(crate) fn encrypt_to(&mut self, volume: usize, psi: Psi, offset: u64, data: &Block) -> Result<()> {
        let phys = self.geometry.slice_block_address(psi, offset)?;
        let v = &self.volumes[volume];
        let iv = random_iv(&mut self.rng, &v.unwritten_marker(psi, offset))?;
        let mut ct = *data;
        v.cipher.apply(&iv, &mut ct);
        self.iv_cache.set_iv(&mut self.dev, self.geometry.slice_iv_block(psi), offset, &iv)?;
        self.dev.write_block(phys, &ct)?;
        Ok(())
    }

    /// Maps logical slice `lsi` of `volume` to a free physical slice chosen
    /// uniformly at random. Touches only memory; the new slice's IV block is
    /// written back later through the cache.
    pub fn new_slice(&mut self, volume: usize, lsi: u64) -> Result<Psi> {
        self.check_lsi(volume, lsi)?;
        if self.volumes[volume].pos_map[lsi as usize].is_some() {
            return Err(Error::AlreadyMapped { volume, lsi });
        }
        let psi = self.allocator.allocate().ok_or(Error::NoSpace)?;
        let v = &mut self.volumes[volume];
        v.pos_map[lsi as usize] = Some(psi);
        v.dirty = true;
        v.usage.insert(lsi, SliceUsage { fresh: true, ..Default::default() });
        let ivs = v.fresh_iv_block(psi);
        self.iv_cache.insert(
            &mut self.dev,
            self.geometry.slice_iv_block(psi),
            CachedIvBlock { data: ivs, dirty: true },
        )?;
        Ok(psi)
    }

    fn check_lsi(&self, volume: usize, lsi: u64) -> Result<()> {
        self.volume(volume)?;
        if lsi >= self.geometry.num_slices {
            return Err(Error::Range(format!("logical slice {lsi} beyond volume end")));
        }
        Ok(())
    }

    /// Marks a block as no longer holding data. Once every block of its slice
    /// is trimmed (or, for slices allocated this session, never written) the
    /// slice is reclaimed. Trimming an unmapped block does nothing.
    pub fn trim(&mut self, addr: LogicalAddress) -> Result<()> {
        self.check_address(addr)?;
        let lsi = addr.lsi();
        let v = &mut self.volumes[addr.volume];
        if v.pos_map[lsi as usize].is_none() {
            return Ok(());
        }
        let usage = v.usage.entry(lsi).or_default();
        SliceUsage::set(&mut usage.trimmed, addr.offset(), true);
        if usage.is_empty() {
            self.reclaim_slice(addr.volume, lsi)?;
        }
        Ok(())
    }

    /// Unmaps logical slice `lsi` of `volume` and returns its physical slice
    /// to the free pool at a random position of the allocation order.
    pub fn reclaim_slice(&mut self, volume: usize, lsi: u64) -> Result<()> {
        self.check_lsi(volume, lsi)?;
        let v = &mut self.volumes[volume];
        let psi = v.pos_map[lsi as usize].take().ok_or(Error::NotMapped { volume, lsi })?;
        v.dirty = true;
        v.usage.remove(&lsi);
        self.allocator.release(psi, &mut self.rng);
        self.iv_cache.discard(self.geometry.slice_iv_block(psi));
        Ok(())
    }

    /// Writes back dirty IV blocks and dirty position maps without closing.
    pub fn flush(&mut self) -> Result<()> {
        self.ensure_open()?;
        self.persist(false)
    }

    pub fn iv_cache(&self) -> &IvCache {
        &self.iv_cache
    }

    /// Whether a volume's position map has changes not yet on disk.
    pub fn is_dirty(&self, volume: usize) -> Result<bool> {
        Ok(self.volume(volume)?.dirty)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::KdfCost;
    use crate::device::MemDevice;
    use crate::header::{init_device, InitOptions, InstanceOptions};
    use crate::layout::Geometry;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;
    use std::collections::BTreeSet;

    fn rng(seed: u64) -> ChaCha20Rng {
        ChaCha20Rng::seed_from_u64(seed)
    }

    fn image(blocks: u64, pws: &[&str]) -> MemDevice {
        let mut dev = MemDevice::new(blocks);
        init_device(&mut dev, pws, &InitOptions { skip_randfill: false, kdf: KdfCost::FAST }, &mut rng(1)).unwrap();
        dev
    }

    fn opts(seed: u8) -> InstanceOptions {
        InstanceOptions { rng_seed: Some([seed; 32]), ..InstanceOptions::with_kdf(KdfCost::FAST) }
    }

    fn block(fill: u8) -> Block {
        [fill; BLOCK_SIZE]
    }

    #[test]
    fn allocator_first_pick_is_head_of_permutation() {
        let mut a = SliceAllocator::new(10, AllocationOrder::Shuffled, &mut rng(3));
        let head = a.permutation()[0];
        assert_eq!(a.allocate(), Some(Psi(head)));
        assert_eq!(a.occupied_count(), 1);
        a.check().unwrap();
    }

    #[test]
    fn allocator_exhausts() {
        let mut a = SliceAllocator::new(5, AllocationOrder::Shuffled, &mut rng(3));
        a.mark_occupied(Psi(2));
        let got: BTreeSet<u32> = std::iter::from_fn(|| a.allocate()).map(|p| p.0).collect();
        assert_eq!(got, [0, 1, 3, 4].into_iter().collect());
        assert_eq!(a.allocate(), None);
        a.check().unwrap();
    }

    #[test]
    fn release_beyond_cursor_leaves_order() {
        let mut r = rng(5);
        let mut a = SliceAllocator::new(16, AllocationOrder::Shuffled, &mut r);
        // A slice loaded from disk that the cursor has not reached yet.
        let late = Psi(a.permutation()[10]);
        a.mark_occupied(late);
        a.allocate().unwrap();
        let order = a.permutation().to_vec();
        let cursor = a.cursor();
        a.release(late, &mut r);
        assert_eq!(a.permutation(), &order[..]);
        assert_eq!(a.cursor(), cursor);
        assert!(!a.is_occupied(late));
        a.check().unwrap();
    }

    #[test]
    fn release_then_reallocate() {
        let mut r = rng(6);
        let mut a = SliceAllocator::new(8, AllocationOrder::Shuffled, &mut r);
        let p = a.allocate().unwrap();
        a.release(p, &mut r);
        assert_eq!(a.occupied_count(), 0);
        assert_eq!(a.cursor(), 0);
        a.check().unwrap();
        let all: BTreeSet<u32> = std::iter::from_fn(|| a.allocate()).map(|p| p.0).collect();
        assert_eq!(all.len(), 8);
    }

    #[test]
    fn lowest_first_is_deterministic() {
        let mut r = rng(7);
        let mut a = SliceAllocator::new(6, AllocationOrder::LowestFirst, &mut r);
        a.mark_occupied(Psi(1));
        assert_eq!(a.allocate(), Some(Psi(0)));
        assert_eq!(a.allocate(), Some(Psi(2)));
        a.release(Psi(0), &mut r);
        assert_eq!(a.allocate(), Some(Psi(0)));
    }

    #[test]
    fn unmapped_reads_are_zero_and_traceless() {
        let mut dev = image(1000, &["a"]);
        let before = dev.clone();
        let mut inst = DeviceInstance::instantiate(&mut dev, b"a", &opts(1)).unwrap();
        for b in [0, 5, 255, 256, 767] {
            assert_eq!(inst.read(LogicalAddress::new(0, b)).unwrap(), [0u8; BLOCK_SIZE]);
        }
        drop(inst);
        assert!(before == dev);
    }

    #[test]
    fn write_read_and_physical_placement() {
        let g = Geometry::new(1000).unwrap();
        let mut dev = image(1000, &["a"]);
        let mut inst = DeviceInstance::instantiate(&mut dev, b"a", &opts(2)).unwrap();
        let addr = LogicalAddress::new(0, 300);
        inst.write(addr, &block(0xab)).unwrap();
        assert_eq!(inst.read(addr).unwrap(), block(0xab));
        // Neighbours in the same fresh slice were never written.
        assert_eq!(inst.read(LogicalAddress::new(0, 301)).unwrap(), [0u8; BLOCK_SIZE]);
        let psi = inst.position_map(0).unwrap()[1].unwrap();
        assert_eq!(inst.allocator().occupied_count(), 1);
        inst.flush().unwrap();
        drop(inst);

        // Decrypt by hand at B_phys = data_start + psi * 257 + 1 + 300 % 256.
        let phys = g.data_start_block + psi.0 as u64 * 257 + 1 + 44;
        assert_eq!(phys, g.slice_block_address(psi, 44).unwrap());
        let ivb = &dev.as_bytes()[g.slice_iv_block(psi) as usize * BLOCK_SIZE..][44 * 16..45 * 16];
        let iv = Iv128(ivb.try_into().unwrap());
        let mut ct: Block = dev.as_bytes()[phys as usize * BLOCK_SIZE..][..BLOCK_SIZE].try_into().unwrap();
        let inst = DeviceInstance::instantiate(&mut dev, b"a", &opts(3)).unwrap();
        inst.volumes[0].cipher.apply(&iv, &mut ct);
        assert_eq!(ct, block(0xab));
    }

    #[test]
    fn second_write_wins_with_new_iv() {
        let g = Geometry::new(1000).unwrap();
        let mut dev = image(1000, &["a"]);
        let mut inst = DeviceInstance::instantiate(&mut dev, b"a", &opts(4)).unwrap();
        let addr = LogicalAddress::new(0, 7);
        inst.write(addr, &block(1)).unwrap();
        let psi = inst.position_map(0).unwrap()[0].unwrap();
        let iv_block = g.slice_iv_block(psi);
        let iv1 = inst.iv_cache.get_iv(&mut inst.dev, iv_block, 7).unwrap();
        inst.write(addr, &block(2)).unwrap();
        let iv2 = inst.iv_cache.get_iv(&mut inst.dev, iv_block, 7).unwrap();
        assert_ne!(iv1, iv2);
        assert_eq!(inst.read(addr).unwrap(), block(2));
        assert_eq!(inst.allocator().occupied_count(), 1);
    }

    #[test]
    fn writes_fail_when_device_is_full() {
        let mut dev = image(1000, &["a", "b"]);
        let mut inst = DeviceInstance::instantiate(&mut dev, b"b", &opts(5)).unwrap();
        inst.write(LogicalAddress::new(0, 0), &block(1)).unwrap();
        inst.write(LogicalAddress::new(1, 0), &block(2)).unwrap();
        inst.write(LogicalAddress::new(1, 256), &block(3)).unwrap();
        assert!(matches!(inst.write(LogicalAddress::new(0, 512), &block(4)), Err(Error::NoSpace)));
        // Already-mapped slices still accept writes.
        inst.write(LogicalAddress::new(0, 1), &block(5)).unwrap();
        assert_eq!(inst.read(LogicalAddress::new(1, 256)).unwrap(), block(3));
    }

    #[test]
    fn address_errors() {
        let mut dev = image(1000, &["a", "b"]);
        let mut inst = DeviceInstance::instantiate(&mut dev, b"a", &opts(6)).unwrap();
        assert!(matches!(inst.read(LogicalAddress::new(1, 0)), Err(Error::VolumeNotOpen(1))));
        assert!(matches!(inst.read(LogicalAddress::new(0, 768)), Err(Error::Range(_))));
        assert!(matches!(inst.write(LogicalAddress::new(0, 768), &block(0)), Err(Error::Range(_))));
        assert!(matches!(inst.new_slice(0, 3), Err(Error::Range(_))));
        inst.new_slice(0, 2).unwrap();
        assert!(matches!(inst.new_slice(0, 2), Err(Error::AlreadyMapped { .. })));
        assert!(matches!(inst.reclaim_slice(0, 1), Err(Error::NotMapped { .. })));
    }

    #[test]
    fn close_persists_and_double_close_fails() {
        let mut dev = image(2000, &["a", "b"]);
        let mut inst = DeviceInstance::instantiate(&mut dev, b"b", &opts(7)).unwrap();
        inst.write(LogicalAddress::new(1, 1000), &block(9)).unwrap();
        inst.write(LogicalAddress::new(0, 3), &block(8)).unwrap();
        inst.close().unwrap();
        assert!(matches!(inst.close(), Err(Error::InstanceClosed)));
        assert!(matches!(inst.read(LogicalAddress::new(0, 3)), Err(Error::InstanceClosed)));
        drop(inst);
        let mut inst = DeviceInstance::instantiate(&mut dev, b"b", &opts(8)).unwrap();
        assert_eq!(inst.read(LogicalAddress::new(1, 1000)).unwrap(), block(9));
        assert_eq!(inst.read(LogicalAddress::new(0, 3)).unwrap(), block(8));
        assert_eq!(inst.read(LogicalAddress::new(0, 4)).unwrap(), [0u8; BLOCK_SIZE]);
    }

    #[test]
    fn close_without_writes_refreshes_map_ciphertext_only() {
        let g = Geometry::new(1000).unwrap();
        let mut dev = image(1000, &["a"]);
        let mut inst = DeviceInstance::instantiate(&mut dev, b"a", &opts(9)).unwrap();
        inst.write(LogicalAddress::new(0, 0), &block(1)).unwrap();
        inst.close().unwrap();
        drop(inst);
        let before = dev.clone();
        let map_before = DeviceInstance::instantiate(&mut dev, b"a", &opts(10)).unwrap().position_map(0).unwrap().to_vec();
        let mut inst = DeviceInstance::instantiate(&mut dev, b"a", &opts(11)).unwrap();
        inst.close().unwrap();
        drop(inst);
        let pm = g.pm_iv_block(0, 0) as usize * BLOCK_SIZE..(g.pm_payload_block(0, 0) + 1) as usize * BLOCK_SIZE;
        assert_ne!(before.as_bytes()[pm.clone()], dev.as_bytes()[pm.clone()]);
        assert_eq!(before.as_bytes()[..pm.start], dev.as_bytes()[..pm.start]);
        assert_eq!(before.as_bytes()[pm.end..], dev.as_bytes()[pm.end..]);
        let map_after = DeviceInstance::instantiate(&mut dev, b"a", &opts(12)).unwrap().position_map(0).unwrap().to_vec();
        assert_eq!(map_before, map_after);
    }

    #[test]
    fn iv_cache_eviction_writes_back() {
        let mut dev = image(4000, &["a"]);
        let o = InstanceOptions { iv_cache_capacity: 2, ..opts(13) };
        let mut inst = DeviceInstance::instantiate(&mut dev, b"a", &o).unwrap();
        for lsi in 0..6u64 {
            inst.write(LogicalAddress::new(0, lsi * 256 + lsi), &block(lsi as u8 + 1)).unwrap();
            assert!(inst.iv_cache().len() <= 2);
        }
        for lsi in 0..6u64 {
            assert_eq!(inst.read(LogicalAddress::new(0, lsi * 256 + lsi)).unwrap(), block(lsi as u8 + 1));
        }
        inst.close().unwrap();
        drop(inst);
        let mut inst = DeviceInstance::instantiate(&mut dev, b"a", &opts(14)).unwrap();
        for lsi in 0..6u64 {
            assert_eq!(inst.read(LogicalAddress::new(0, lsi * 256 + lsi)).unwrap(), block(lsi as u8 + 1));
        }
    }

    #[test]
    fn flush_makes_copies_readable_and_is_idempotent() {
        let mut dev = image(2000, &["a"]);
        let mut inst = DeviceInstance::instantiate(&mut dev, b"a", &opts(15)).unwrap();
        inst.write(LogicalAddress::new(0, 42), &block(4)).unwrap();
        inst.flush().unwrap();
        assert_eq!(inst.iv_cache().dirty_count(), 0);
        assert!(!inst.is_dirty(0).unwrap());
        let snap = (**inst.device()).clone();
        inst.flush().unwrap();
        assert!(snap == **inst.device());
        drop(inst);
        let mut copy = snap;
        let mut c = DeviceInstance::instantiate(&mut copy, b"a", &opts(16)).unwrap();
        assert_eq!(c.read(LogicalAddress::new(0, 42)).unwrap(), block(4));
    }

    #[test]
    fn trim_reclaims_only_when_slice_is_empty() {
        let mut dev = image(2000, &["a"]);
        let mut inst = DeviceInstance::instantiate(&mut dev, b"a", &opts(17)).unwrap();
        for b in 0..256 {
            inst.write(LogicalAddress::new(0, b), &block(b as u8)).unwrap();
        }
        for b in 0..255 {
            inst.trim(LogicalAddress::new(0, b)).unwrap();
        }
        assert!(inst.position_map(0).unwrap()[0].is_some());
        inst.trim(LogicalAddress::new(0, 255)).unwrap();
        assert!(inst.position_map(0).unwrap()[0].is_none());
        assert_eq!(inst.allocator().occupied_count(), 0);
        inst.allocator().check().unwrap();

        // A fresh slice with one written block goes once that block is trimmed.
        inst.write(LogicalAddress::new(0, 600), &block(1)).unwrap();
        inst.trim(LogicalAddress::new(0, 601)).unwrap();
        assert!(inst.position_map(0).unwrap()[2].is_some());
        inst.trim(LogicalAddress::new(0, 600)).unwrap();
        assert!(inst.position_map(0).unwrap()[2].is_none());
    }

    #[test]
    fn trim_is_conservative_across_sessions() {
        let mut dev = image(2000, &["a"]);
        let mut inst = DeviceInstance::instantiate(&mut dev, b"a", &opts(18)).unwrap();
        inst.write(LogicalAddress::new(0, 0), &block(1)).unwrap();
        inst.close().unwrap();
        drop(inst);
        let mut inst = DeviceInstance::instantiate(&mut dev, b"a", &opts(19)).unwrap();
        inst.trim(LogicalAddress::new(0, 0)).unwrap();
        assert!(inst.position_map(0).unwrap()[0].is_some());
    }

    #[test]
    fn trim_unmapped_is_noop() {
        let mut dev = image(2000, &["a"]);
        let before = dev.clone();
        let mut inst = DeviceInstance::instantiate(&mut dev, b"a", &opts(20)).unwrap();
        inst.trim(LogicalAddress::new(0, 9)).unwrap();
        assert!(!inst.is_dirty(0).unwrap());
        drop(inst);
        assert!(before == dev);
    }

    #[test]
    fn reclaimed_slice_is_not_written_back() {
        let g = Geometry::new(2000).unwrap();
        let mut dev = image(2000, &["a"]);
        let mut inst = DeviceInstance::instantiate(&mut dev, b"a", &opts(21)).unwrap();
        inst.write(LogicalAddress::new(0, 0), &block(1)).unwrap();
        let psi = inst.position_map(0).unwrap()[0].unwrap();
        let iv_block = g.slice_iv_block(psi) as usize * BLOCK_SIZE;
        let snapshot = inst.device().as_bytes()[iv_block..iv_block + BLOCK_SIZE].to_vec();
        inst.reclaim_slice(0, 0).unwrap();
        inst.close().unwrap();
        assert_eq!(inst.device().as_bytes()[iv_block..iv_block + BLOCK_SIZE], snapshot[..]);
    }

    #[test]
    fn instantiations_differ_only_in_shuffle() {
        let mut dev = image(20000, &["a"]);
        let a = DeviceInstance::instantiate(&mut dev, b"a", &InstanceOptions::with_kdf(KdfCost::FAST)).unwrap();
        let pa = a.allocator().permutation().to_vec();
        let ma = a.position_map(0).unwrap().to_vec();
        drop(a);
        let b = DeviceInstance::instantiate(&mut dev, b"a", &InstanceOptions::with_kdf(KdfCost::FAST)).unwrap();
        assert_eq!(ma, b.position_map(0).unwrap());
        assert_ne!(pa, b.allocator().permutation());
    }
}
