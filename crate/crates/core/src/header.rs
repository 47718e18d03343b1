//! Device master block, volume headers and the device lifecycle.
//!
//! Byte layouts (format version 1):
//!
//! ```text
//! DMB (block 0):   version u8 | salt [32] | 15 x cell [64] | random
//! cell:            iv [16] | wrapped VMK [32] | GCM tag [16]
//! VMB block:       iv [16] | CTR_VMK( VEK [32] | prev VMK [32] | num_slices u64le | random ) [4080]
//! position map:    pm_iv_blocks x (packed 16-byte IVs, one per payload block)
//!                  pm_payload_blocks x CTR_VEK( u32le PSI entries, 0xffffffff = unmapped )
//! ```
//!
//! Cells and header slots of volumes that do not exist are random bytes, as
//! is every unused byte above.

use std::collections::HashMap;

use rand::{CryptoRng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use zeroize::Zeroize;

use crate::crypto::{
    fill_random, kdf_derive, unwrap_key, wrap_key, CtrCipher, Iv128, KdfCost, Key256, WrappedKey,
};
use crate::device::BlockDevice;
use crate::engine::{AllocationOrder, IvCache, OpenVolume, SliceAllocator, DEFAULT_IV_CACHE_CAPACITY};
use crate::error::{Error, Result};
use crate::layout::{
    dmb_cell_offset, Block, Geometry, Psi, BLOCK_SIZE, DMB_CELL_LEN, DMB_SALT_OFFSET, FORMAT_VERSION, IV_LEN,
    KEY_LEN, MAX_VOLUMES, PSI_ENTRY_LEN, PSI_UNMAPPED, SALT_LEN, TAG_LEN,
};

/// A DMB cell: the volume master key wrapped under the password's KEK.
pub type DmbCell = WrappedKey;

pub fn encode_cell(cell: &DmbCell) -> [u8; DMB_CELL_LEN] {
    let mut out = [0u8; DMB_CELL_LEN];
    out[..IV_LEN].copy_from_slice(&cell.iv.0);
    out[IV_LEN..IV_LEN + KEY_LEN].copy_from_slice(&cell.ciphertext);
    out[IV_LEN + KEY_LEN..].copy_from_slice(&cell.tag);
    out
}

pub fn decode_cell(bytes: &[u8; DMB_CELL_LEN]) -> DmbCell {
    let mut iv = [0u8; IV_LEN];
    let mut ciphertext = [0u8; KEY_LEN];
    let mut tag = [0u8; TAG_LEN];
    iv.copy_from_slice(&bytes[..IV_LEN]);
    ciphertext.copy_from_slice(&bytes[IV_LEN..IV_LEN + KEY_LEN]);
    tag.copy_from_slice(&bytes[IV_LEN + KEY_LEN..]);
    WrappedKey { iv: Iv128(iv), ciphertext, tag }
}

/// Parsed view of block 0. Keeps the raw block so re-encoding preserves the
/// random padding bit for bit.
#[derive(Clone)]
pub struct Dmb {
    raw: Box<Block>,
}

impl Dmb {
    pub fn parse(block: &Block) -> Result<Self> {
        if block[0] != FORMAT_VERSION {
            return Err(Error::UnsupportedVersion(block[0]));
        }
        Ok(Dmb { raw: Box::new(*block) })
    }

    pub fn version(&self) -> u8 {
        self.raw[0]
    }

    pub fn salt(&self) -> [u8; SALT_LEN] {
        self.raw[DMB_SALT_OFFSET..DMB_SALT_OFFSET + SALT_LEN].try_into().unwrap()
    }

    pub fn cell(&self, i: usize) -> DmbCell {
        let off = dmb_cell_offset(i);
        decode_cell(self.raw[off..off + DMB_CELL_LEN].try_into().unwrap())
    }

    pub fn set_cell(&mut self, i: usize, cell: &DmbCell) {
        let off = dmb_cell_offset(i);
        self.raw[off..off + DMB_CELL_LEN].copy_from_slice(&encode_cell(cell));
    }

    pub fn as_block(&self) -> &Block {
        &self.raw
    }

    fn read<D: BlockDevice>(dev: &mut D) -> Result<Self> {
        let mut b = [0u8; BLOCK_SIZE];
        dev.read_block(0, &mut b)?;
        Self::parse(&b)
    }
}

/// Decrypted volume master block.
pub struct VolumeHeader {
    pub vek: Key256,
    /// Master key of the previous volume; random for volume 0.
    pub prev_vmk: Key256,
    pub num_slices: u64,
}

const VMB_VEK: usize = 0;
const VMB_PREV: usize = VMB_VEK + KEY_LEN;
const VMB_NUM_SLICES: usize = VMB_PREV + KEY_LEN;
const VMB_USED: usize = VMB_NUM_SLICES + 8;

fn write_vmb<D: BlockDevice, R: RngCore + CryptoRng>(
    dev: &mut D,
    geometry: &Geometry,
    volume: usize,
    vmk: &Key256,
    header: &VolumeHeader,
    rng: &mut R,
) -> Result<()> {
    let mut block = [0u8; BLOCK_SIZE];
    fill_random(rng, &mut block)?;
    let iv = Iv128(block[..IV_LEN].try_into().unwrap());
    let body = &mut block[IV_LEN..];
    body[VMB_VEK..VMB_PREV].copy_from_slice(header.vek.as_bytes());
    body[VMB_PREV..VMB_NUM_SLICES].copy_from_slice(header.prev_vmk.as_bytes());
    body[VMB_NUM_SLICES..VMB_USED].copy_from_slice(&header.num_slices.to_le_bytes());
    CtrCipher::new(vmk).apply(&iv, body);
    dev.write_block(geometry.vmb_block(volume), &block)?;
    block.zeroize();
    Ok(())
}

fn read_vmb<D: BlockDevice>(dev: &mut D, geometry: &Geometry, volume: usize, vmk: &Key256) -> Result<VolumeHeader> {
    let mut block = [0u8; BLOCK_SIZE];
    dev.read_block(geometry.vmb_block(volume), &mut block)?;
    let iv = Iv128(block[..IV_LEN].try_into().unwrap());
    let body = &mut block[IV_LEN..];
    CtrCipher::new(vmk).apply(&iv, body);
    let header = VolumeHeader {
        vek: Key256::from_bytes(body[VMB_VEK..VMB_PREV].try_into().unwrap()),
        prev_vmk: Key256::from_bytes(body[VMB_PREV..VMB_NUM_SLICES].try_into().unwrap()),
        num_slices: u64::from_le_bytes(body[VMB_NUM_SLICES..VMB_USED].try_into().unwrap()),
    };
    block.zeroize();
    Ok(header)
}

const IVS_PER_BLOCK: usize = BLOCK_SIZE / IV_LEN;
const ENTRIES_PER_BLOCK: usize = BLOCK_SIZE / PSI_ENTRY_LEN;

/// Encrypts and writes a position map with fresh IVs. `map` covers the
/// `num_slices` valid LSIs; the remaining on-disk entries are unmapped.
pub(crate) fn write_position_map<D: BlockDevice, R: RngCore + CryptoRng>(
    dev: &mut D,
    geometry: &Geometry,
    volume: usize,
    cipher: &CtrCipher,
    map: &[Option<Psi>],
    rng: &mut R,
) -> Result<()> {
    debug_assert!(map.len() as u64 <= geometry.pm_entries());
    let payload_blocks = geometry.pm_payload_blocks as usize;
    let mut iv_region = vec![0u8; geometry.pm_iv_blocks as usize * BLOCK_SIZE];
    fill_random(rng, &mut iv_region)?;
    let mut payload = vec![0u8; payload_blocks * BLOCK_SIZE];
    for (i, chunk) in payload.chunks_exact_mut(PSI_ENTRY_LEN).enumerate() {
        let v = map.get(i).copied().flatten().map_or(PSI_UNMAPPED, |p| p.0);
        chunk.copy_from_slice(&v.to_le_bytes());
    }
    for (j, block) in payload.chunks_exact_mut(BLOCK_SIZE).enumerate() {
        let iv = Iv128(iv_region[j * IV_LEN..(j + 1) * IV_LEN].try_into().unwrap());
        cipher.apply(&iv, block);
    }
    dev.write_blocks(geometry.pm_iv_block(volume, 0), &iv_region)?;
    dev.write_blocks(geometry.pm_payload_block(volume, 0), &payload)?;
    Ok(())
}

/// Loads a position map, rejecting out-of-range or duplicate entries.
pub(crate) fn read_position_map<D: BlockDevice>(
    dev: &mut D,
    geometry: &Geometry,
    volume: usize,
    cipher: &CtrCipher,
) -> Result<Vec<Option<Psi>>> {
    let mut block = [0u8; BLOCK_SIZE];
    let mut ivs = Vec::with_capacity(geometry.pm_payload_blocks as usize);
    for i in 0..geometry.pm_iv_blocks {
        dev.read_block(geometry.pm_iv_block(volume, i), &mut block)?;
        for c in block.chunks_exact(IV_LEN).take(IVS_PER_BLOCK) {
            ivs.push(Iv128(c.try_into().unwrap()));
        }
    }
    let num_slices = geometry.num_slices as usize;
    let mut map = Vec::with_capacity(num_slices);
    let mut seen = vec![false; num_slices];
    for j in 0..geometry.pm_payload_blocks {
        dev.read_block(geometry.pm_payload_block(volume, j), &mut block)?;
        cipher.apply(&ivs[j as usize], &mut block);
        for (k, e) in block.chunks_exact(PSI_ENTRY_LEN).enumerate() {
            let lsi = j as usize * ENTRIES_PER_BLOCK + k;
            let v = u32::from_le_bytes(e.try_into().unwrap());
            if v == PSI_UNMAPPED {
                if lsi < num_slices {
                    map.push(None);
                }
                continue;
            }
            if lsi >= num_slices {
                return Err(Error::Corrupt(format!("volume {volume}: entry beyond the last slice is mapped")));
            }
            if v as usize >= num_slices {
                return Err(Error::Corrupt(format!("volume {volume}: slice {v} out of range")));
            }
            if std::mem::replace(&mut seen[v as usize], true) {
                return Err(Error::Corrupt(format!("volume {volume}: slice {v} mapped twice")));
            }
            map.push(Some(Psi(v)));
        }
    }
    Ok(map)
}

#[derive(Debug, Clone, Copy)]
pub struct InitOptions {
    /// Skip overwriting the whole image with random bytes first. Only the
    /// header region is randomized then, which leaks prior contents.
    pub skip_randfill: bool,
    pub kdf: KdfCost,
}

impl Default for InitOptions {
    fn default() -> Self {
        InitOptions { skip_randfill: false, kdf: KdfCost::STANDARD }
    }
}

/// Formats `dev` with one volume per password, in order: `passwords[0]` is
/// the least secret volume.
pub fn init_device<D, R, P>(dev: &mut D, passwords: &[P], opts: &InitOptions, rng: &mut R) -> Result<()>
where
    D: BlockDevice,
    R: RngCore + CryptoRng,
    P: AsRef<[u8]>,
{
    if passwords.is_empty() || passwords.len() > MAX_VOLUMES {
        return Err(Error::VolumeCount(passwords.len()));
    }
    format_device(dev, passwords, opts, rng)
}

/// Like [`init_device`] but also accepts zero volumes, which yields an image
/// that is all noise apart from the version byte and the salt.
pub(crate) fn format_device<D, R, P>(dev: &mut D, passwords: &[P], opts: &InitOptions, rng: &mut R) -> Result<()>
where
    D: BlockDevice,
    R: RngCore + CryptoRng,
    P: AsRef<[u8]>,
{
    if passwords.len() > MAX_VOLUMES {
        return Err(Error::VolumeCount(passwords.len()));
    }
    for (i, p) in passwords.iter().enumerate() {
        if p.as_ref().is_empty() {
            return Err(Error::EmptyPassword);
        }
        if passwords[..i].iter().any(|q| q.as_ref() == p.as_ref()) {
            return Err(Error::DuplicatePassword);
        }
    }
    let geometry = Geometry::new(dev.block_count())?;

    const CHUNK_BLOCKS: u64 = 256;
    let mut chunk = vec![0u8; CHUNK_BLOCKS as usize * BLOCK_SIZE];
    let fill_end = if opts.skip_randfill { geometry.header_blocks } else { geometry.total_blocks };
    let mut start = 0;
    while start < fill_end {
        let n = CHUNK_BLOCKS.min(fill_end - start);
        let buf = &mut chunk[..n as usize * BLOCK_SIZE];
        fill_random(rng, buf)?;
        dev.write_blocks(start, buf)?;
        start += n;
    }

    let mut dmb_block = [0u8; BLOCK_SIZE];
    fill_random(rng, &mut dmb_block)?;
    dmb_block[0] = FORMAT_VERSION;
    let mut dmb = Dmb::parse(&dmb_block)?;
    let salt = dmb.salt();

    let mut prev_vmk = Key256::generate(rng)?;
    for (i, password) in passwords.iter().enumerate() {
        let kek = kdf_derive(password.as_ref(), &salt, opts.kdf)?;
        let vmk = Key256::generate(rng)?;
        let header = VolumeHeader { vek: Key256::generate(rng)?, prev_vmk, num_slices: geometry.num_slices };
        dmb.set_cell(i, &wrap_key(&kek, &vmk, rng)?);
        write_vmb(dev, &geometry, i, &vmk, &header, rng)?;
        let unmapped = vec![None; geometry.num_slices as usize];
        write_position_map(dev, &geometry, i, &CtrCipher::new(&header.vek), &unmapped, rng)?;
        prev_vmk = vmk;
    }
    dev.write_block(0, dmb.as_block())?;
    dev.sync()?;
    Ok(())
}

/// Tries every cell with the KEK of `password`, most secret slot first.
fn find_cell(dmb: &Dmb, password: &[u8], cost: KdfCost) -> Result<(usize, Key256)> {
    let kek = kdf_derive(password, &dmb.salt(), cost)?;
    probe_cells(dmb, &kek, None)
}

fn probe_cells(dmb: &Dmb, kek: &Key256, skip: Option<usize>) -> Result<(usize, Key256)> {
    for i in (0..MAX_VOLUMES).rev() {
        if Some(i) == skip {
            continue;
        }
        match unwrap_key(kek, &dmb.cell(i)) {
            Ok(vmk) => return Ok((i, vmk)),
            Err(Error::AuthFailure) => {}
            Err(e) => return Err(e),
        }
    }
    Err(Error::NoMatch)
}

/// Index of the volume `password` unlocks. Only reads the DMB.
pub fn testpwd<D: BlockDevice>(dev: &mut D, password: &[u8], cost: KdfCost) -> Result<usize> {
    let dmb = Dmb::read(dev)?;
    find_cell(&dmb, password, cost).map(|(i, _)| i)
}

/// Re-wraps the master key of the volume `old` unlocks under `new`. Only that
/// volume's 64-byte DMB cell changes on disk.
pub fn changepwd<D, R>(dev: &mut D, old: &[u8], new: &[u8], cost: KdfCost, rng: &mut R) -> Result<usize>
where
    D: BlockDevice,
    R: RngCore + CryptoRng,
{
    if new.is_empty() {
        return Err(Error::EmptyPassword);
    }
    let mut dmb = Dmb::read(dev)?;
    let (i, vmk) = find_cell(&dmb, old, cost)?;
    let new_kek = kdf_derive(new, &dmb.salt(), cost)?;
    match probe_cells(&dmb, &new_kek, Some(i)) {
        Ok(_) => return Err(Error::SamePassword),
        Err(Error::NoMatch) => {}
        Err(e) => return Err(e),
    }
    dmb.set_cell(i, &wrap_key(&new_kek, &vmk, rng)?);
    dev.write_block(0, dmb.as_block())?;
    dev.sync()?;
    Ok(i)
}

/// Overwrites the cell `password` unlocks with random bytes. The volume stays
/// reachable through the chain of any more secret volume.
pub fn forget_volume<D, R>(dev: &mut D, password: &[u8], cost: KdfCost, rng: &mut R) -> Result<usize>
where
    D: BlockDevice,
    R: RngCore + CryptoRng,
{
    let mut dmb = Dmb::read(dev)?;
    let (i, _) = find_cell(&dmb, password, cost)?;
    let mut noise = [0u8; DMB_CELL_LEN];
    fill_random(rng, &mut noise)?;
    dmb.set_cell(i, &decode_cell(&noise));
    dev.write_block(0, dmb.as_block())?;
    dev.sync()?;
    Ok(i)
}

#[derive(Debug, Clone)]
pub struct InstanceOptions {
    pub kdf: KdfCost,
    pub iv_cache_capacity: usize,
    pub allocation: AllocationOrder,
    /// Seed for the session RNG (slice shuffling, IVs). `None` seeds from the
    /// operating system.
    pub rng_seed: Option<[u8; 32]>,
}

impl Default for InstanceOptions {
    fn default() -> Self {
        InstanceOptions {
            kdf: KdfCost::STANDARD,
            iv_cache_capacity: DEFAULT_IV_CACHE_CAPACITY,
            allocation: AllocationOrder::Shuffled,
            rng_seed: None,
        }
    }
}

impl InstanceOptions {
    pub fn with_kdf(kdf: KdfCost) -> Self {
        InstanceOptions { kdf, ..Default::default() }
    }
}

/// An unlocked device: every volume from 0 up to the one whose password was
/// given, plus the session allocator state.
///
/// All operations take `&mut self`; callers sharing an instance between
/// threads must serialize access themselves.
pub struct DeviceInstance<D: BlockDevice> {
    pub(crate) dev: D,
    pub(crate) geometry: Geometry,
    pub(crate) volumes: Vec<OpenVolume>,
    pub(crate) allocator: SliceAllocator,
    pub(crate) iv_cache: IvCache,
    pub(crate) rng: ChaCha20Rng,
    pub(crate) closed: bool,
}

impl<D: BlockDevice> DeviceInstance<D> {
    pub fn instantiate(mut dev: D, password: &[u8], opts: &InstanceOptions) -> Result<Self> {
        let geometry = Geometry::new(dev.block_count())?;
        let dmb = Dmb::read(&mut dev)?;
        let (top, mut vmk) = find_cell(&dmb, password, opts.kdf)?;

        let mut volumes = Vec::with_capacity(top + 1);
        for index in (0..=top).rev() {
            let header = read_vmb(&mut dev, &geometry, index, &vmk)?;
            if header.num_slices != geometry.num_slices {
                return Err(Error::Corrupt(format!(
                    "volume {index} records {} slices, device has {}",
                    header.num_slices, geometry.num_slices
                )));
            }
            let volume = OpenVolume::new(index, &header.vek);
            let map = read_position_map(&mut dev, &geometry, index, &volume.cipher)?;
            volumes.push(volume.with_map(map));
            vmk = header.prev_vmk;
        }
        volumes.reverse();

        let mut rng = match opts.rng_seed {
            Some(seed) => ChaCha20Rng::from_seed(seed),
            None => ChaCha20Rng::from_entropy(),
        };
        let mut allocator = SliceAllocator::new(geometry.num_slices as usize, opts.allocation, &mut rng);
        let mut owner: HashMap<Psi, usize> = HashMap::new();
        for v in &volumes {
            for psi in v.pos_map.iter().flatten() {
                if let Some(other) = owner.insert(*psi, v.index) {
                    return Err(Error::Corrupt(format!(
                        "slice {psi} claimed by volumes {other} and {}",
                        v.index
                    )));
                }
                allocator.mark_occupied(*psi);
            }
        }

        Ok(DeviceInstance {
            dev,
            geometry,
            volumes,
            allocator,
            iv_cache: IvCache::new(opts.iv_cache_capacity),
            rng,
            closed: false,
        })
    }

    /// Flushes the IV cache, rewrites every open position map under fresh IVs
    /// and drops the keys. Keys are dropped even when persisting fails.
    pub fn close(&mut self) -> Result<()> {
        self.ensure_open()?;
        let result = self.persist(true);
        self.volumes.clear();
        self.iv_cache.clear();
        self.closed = true;
        result
    }

    /// Writes back dirty IV blocks and position maps. With `all_maps` every
    /// open map is rewritten, dirty or not.
    pub(crate) fn persist(&mut self, all_maps: bool) -> Result<()> {
        self.iv_cache.flush(&mut self.dev)?;
        for v in self.volumes.iter_mut() {
            if all_maps || v.dirty {
                write_position_map(&mut self.dev, &self.geometry, v.index, &v.cipher, &v.pos_map, &mut self.rng)?;
                v.dirty = false;
            }
        }
        self.dev.sync()?;
        Ok(())
    }

    pub(crate) fn ensure_open(&self) -> Result<()> {
        if self.closed {
            Err(Error::InstanceClosed)
        } else {
            Ok(())
        }
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    /// Indices of the open volumes, ascending.
    pub fn open_volumes(&self) -> Vec<usize> {
        self.volumes.iter().map(|v| v.index).collect()
    }

    pub fn position_map(&self, volume: usize) -> Result<&[Option<Psi>]> {
        Ok(&self.volume(volume)?.pos_map)
    }

    pub fn allocator(&self) -> &SliceAllocator {
        &self.allocator
    }

    pub fn device(&self) -> &D {
        &self.dev
    }

    pub fn into_device(self) -> D {
        self.dev
    }

    pub(crate) fn volume(&self, volume: usize) -> Result<&OpenVolume> {
        self.ensure_open()?;
        self.volumes.get(volume).ok_or(Error::VolumeNotOpen(volume))
    }
}
