//! Adversary-side tooling: snapshot diffs, the random-refresh obfuscator and
//! a statistical harness for single-snapshot deniability.

pub mod stats;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::io;

use rand::{CryptoRng, Rng, RngCore};
use sha2::{Digest, Sha256};

use crate::crypto::{fill_random, KdfCost};
use crate::device::{BlockDevice, MemDevice};
use crate::engine::{AllocationOrder, LogicalAddress};
use crate::error::{Error, Result};
use crate::header::{format_device, DeviceInstance, InitOptions, InstanceOptions};
use crate::layout::{
    dmb_cell_offset, Block, Geometry, Psi, BLOCK_SIZE, DMB_PADDING_OFFSET, MAX_VOLUMES, SLICE_LOGICAL_BLOCKS,
    SLICE_PHYSICAL_BLOCKS,
};
use stats::{two_sample_chi2, RandomnessBattery};

const MASK_WORDS: usize = (SLICE_PHYSICAL_BLOCKS as usize).div_ceil(64);

/// One bit per block of a physical slice; bit 0 is the IV block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct SliceMask([u64; MASK_WORDS]);

impl SliceMask {
    pub const BITS: usize = SLICE_PHYSICAL_BLOCKS as usize;

    pub fn all() -> Self {
        let mut m = SliceMask::default();
        for i in 0..Self::BITS {
            m.set(i);
        }
        m
    }

    pub fn set(&mut self, i: usize) {
        assert!(i < Self::BITS);
        self.0[i / 64] |= 1 << (i % 64);
    }

    pub fn get(&self, i: usize) -> bool {
        i < Self::BITS && self.0[i / 64] & (1 << (i % 64)) != 0
    }

    pub fn count(&self) -> u32 {
        self.0.iter().map(|w| w.count_ones()).sum()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&w| w == 0)
    }

    pub fn iter_set(&self) -> impl Iterator<Item = usize> + '_ {
        (0..Self::BITS).filter(|&i| self.get(i))
    }
}

/// Hex, most significant block first (65 digits).
impl fmt::Display for SliceMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for nibble in (0..Self::BITS.div_ceil(4)).rev() {
            let v = (0..4).fold(0u8, |acc, k| acc | (self.get(nibble * 4 + k) as u8) << k);
            write!(f, "{v:x}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SliceDiff {
    pub psi: Psi,
    pub mask: SliceMask,
}

/// Changed-block counts outside the slice area.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct HeaderDiff {
    pub dmb_changed: bool,
    /// Changed blocks in each of the 15 volume header slots.
    pub volume_headers: Vec<u64>,
    pub tail_changed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SnapshotDiff {
    pub geometry: Geometry,
    pub header: HeaderDiff,
    /// One entry per physical slice, in order.
    pub slices: Vec<SliceDiff>,
}

impl SnapshotDiff {
    pub fn changed_slices(&self) -> impl Iterator<Item = &SliceDiff> {
        self.slices.iter().filter(|d| !d.mask.is_zero())
    }

    pub fn changed_blocks(&self) -> u64 {
        let h = &self.header;
        self.slices.iter().map(|d| d.mask.count() as u64).sum::<u64>()
            + h.dmb_changed as u64
            + h.volume_headers.iter().sum::<u64>()
            + h.tail_changed
    }
}

/// Block-level comparison of two images of the same size.
pub fn snapshot_diff<A: BlockDevice, B: BlockDevice>(a: &mut A, b: &mut B) -> Result<SnapshotDiff> {
    let (na, nb) = (a.block_count(), b.block_count());
    if na != nb {
        return Err(Error::SizeMismatch(na * BLOCK_SIZE as u64, nb * BLOCK_SIZE as u64));
    }
    let geometry = Geometry::new(na)?;
    let mut ba = [0u8; BLOCK_SIZE];
    let mut bb = [0u8; BLOCK_SIZE];
    let mut differs = |i: u64| -> io::Result<bool> {
        a.read_block(i, &mut ba)?;
        b.read_block(i, &mut bb)?;
        Ok(ba != bb)
    };

    let mut header = HeaderDiff { dmb_changed: differs(0)?, ..Default::default() };
    for v in 0..MAX_VOLUMES {
        let start = geometry.volume_header_start(v);
        let mut n = 0;
        for i in start..start + geometry.volume_header_blocks {
            n += differs(i)? as u64;
        }
        header.volume_headers.push(n);
    }
    let mut slices = Vec::with_capacity(geometry.num_slices as usize);
    for s in 0..geometry.num_slices as u32 {
        let psi = Psi(s);
        let start = geometry.slice_start(psi);
        let mut mask = SliceMask::default();
        for m in 0..SLICE_PHYSICAL_BLOCKS {
            if differs(start + m)? {
                mask.set(m as usize);
            }
        }
        slices.push(SliceDiff { psi, mask });
    }
    for i in geometry.tail_start()..geometry.total_blocks {
        header.tail_changed += differs(i)? as u64;
    }
    Ok(SnapshotDiff { geometry, header, slices })
}

/// [`snapshot_diff`] over two in-memory images.
pub fn snapshot_diff_bytes(a: &[u8], b: &[u8]) -> Result<SnapshotDiff> {
    if a.len() != b.len() {
        return Err(Error::SizeMismatch(a.len() as u64, b.len() as u64));
    }
    if !a.len().is_multiple_of(BLOCK_SIZE) {
        return Err(Error::InvalidImageSize(a.len() as u64));
    }
    snapshot_diff(&mut ByteView(a), &mut ByteView(b))
}

struct ByteView<'a>(&'a [u8]);

impl BlockDevice for ByteView<'_> {
    fn block_count(&self) -> u64 {
        (self.0.len() / BLOCK_SIZE) as u64
    }

    fn read_block(&mut self, index: u64, buf: &mut Block) -> io::Result<()> {
        let start = index as usize * BLOCK_SIZE;
        let src = self
            .0
            .get(start..start + BLOCK_SIZE)
            .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, "block out of range"))?;
        buf.copy_from_slice(src);
        Ok(())
    }

    fn write_block(&mut self, _: u64, _: &Block) -> io::Result<()> {
        Err(io::Error::new(io::ErrorKind::PermissionDenied, "read-only view"))
    }
}

/// Probabilities for [`random_refresh`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefreshPolicy {
    /// Chance that a block of a free slice is overwritten with random bytes.
    pub p: f64,
    /// Chance that a data block of an open volume is re-encrypted.
    pub q: f64,
}

impl RefreshPolicy {
    pub fn new(p: f64, q: f64) -> Result<Self> {
        let policy = RefreshPolicy { p, q };
        policy.validate()?;
        Ok(policy)
    }

    fn validate(&self) -> Result<()> {
        for (name, v) in [("p", self.p), ("q", self.q)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Range(format!("{name} = {v} is not a probability")));
            }
        }
        Ok(())
    }
}

/// Blurs the diff between two snapshots: random bytes over free slices and
/// fresh-IV re-encryptions over the open volumes' data blocks. Logical
/// contents and slice maps stay as they are.
///
/// "Free" means free for this instance. Slices of volumes that are not open
/// look free too and are overwritten, so refresh only with the topmost
/// password.
pub fn random_refresh<D, R>(instance: &mut DeviceInstance<D>, policy: RefreshPolicy, rng: &mut R) -> Result<()>
where
    D: BlockDevice,
    R: RngCore + CryptoRng,
{
    instance.ensure_open()?;
    policy.validate()?;
    let g = instance.geometry;
    let mut noise = [0u8; BLOCK_SIZE];
    if policy.p > 0.0 {
        for s in 0..g.num_slices as u32 {
            let psi = Psi(s);
            if instance.allocator.is_occupied(psi) {
                continue;
            }
            let start = g.slice_start(psi);
            for m in 0..SLICE_PHYSICAL_BLOCKS {
                if rng.gen_bool(policy.p) {
                    fill_random(rng, &mut noise)?;
                    instance.dev.write_block(start + m, &noise)?;
                }
            }
        }
    }
    if policy.q > 0.0 {
        let mut plain = [0u8; BLOCK_SIZE];
        for volume in instance.open_volumes() {
            let mapped: Vec<(u64, Psi)> = instance.volumes[volume]
                .pos_map
                .iter()
                .enumerate()
                .filter_map(|(lsi, p)| p.map(|p| (lsi as u64, p)))
                .collect();
            for (lsi, psi) in mapped {
                for offset in 0..SLICE_LOGICAL_BLOCKS {
                    if rng.gen_bool(policy.q) {
                        instance.read_into(LogicalAddress::new(volume, lsi * SLICE_LOGICAL_BLOCKS + offset), &mut plain)?;
                        instance.encrypt_to(volume, psi, offset, &plain)?;
                    }
                }
            }
        }
    }
    Ok(())
}

/// One access of an access pattern.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Access {
    Read { volume: usize, block: u64 },
    Write { volume: usize, block: u64, data: Box<Block> },
    /// The empty access.
    Empty,
}

/// A chronologically ordered access pattern.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PdTrace {
    pub accesses: Vec<Access>,
}

impl PdTrace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn read(&mut self, volume: usize, block: u64) -> &mut Self {
        self.accesses.push(Access::Read { volume, block });
        self
    }

    pub fn write(&mut self, volume: usize, block: u64, data: &Block) -> &mut Self {
        self.accesses.push(Access::Write { volume, block, data: Box::new(*data) });
        self
    }

    pub fn empty(&mut self) -> &mut Self {
        self.accesses.push(Access::Empty);
        self
    }

    /// Final content of every written block, by volume.
    fn final_writes(&self) -> BTreeMap<(usize, u64), &Block> {
        let mut out = BTreeMap::new();
        for a in &self.accesses {
            if let Access::Write { volume, block, data } = a {
                out.insert((*volume, *block), &**data);
            }
        }
        out
    }

    fn run<D: BlockDevice>(&self, inst: &mut DeviceInstance<D>) -> Result<()> {
        for a in &self.accesses {
            match a {
                Access::Read { volume, block } => {
                    inst.read(LogicalAddress::new(*volume, *block))?;
                }
                Access::Write { volume, block, data } => inst.write(LogicalAddress::new(*volume, *block), data)?,
                Access::Empty => {}
            }
        }
        Ok(())
    }
}

/// Why two access patterns do not form a legal pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PdViolation {
    VolumeCount(usize),
    /// Access `index` of trace `trace` names a volume that world does not have.
    NoSuchVolume { trace: u8, index: usize, volume: usize },
    ContentsDiffer { volume: usize, block: u64 },
    WrittenSetsDiffer { volume: usize, block: u64 },
}

impl fmt::Display for PdViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PdViolation::VolumeCount(l) => write!(f, "volume count {l} outside 1..=15"),
            PdViolation::NoSuchVolume { trace, index, volume } => {
                write!(f, "trace {trace}, access {index}: volume {volume} does not exist in that world")
            }
            PdViolation::ContentsDiffer { volume, block } => {
                write!(f, "decoy volume {volume} block {block} ends with different contents")
            }
            PdViolation::WrittenSetsDiffer { volume, block } => {
                write!(f, "decoy volume {volume} block {block} is written by only one trace")
            }
        }
    }
}

impl std::error::Error for PdViolation {}

/// Checks that `t0` (run with `volumes` volumes) and `t1` (run with one
/// fewer; the last volume is the hidden one) leave every decoy volume with
/// the same contents and the same set of written blocks.
pub fn check_pd_constraints(t0: &PdTrace, t1: &PdTrace, volumes: usize) -> Result<(), PdViolation> {
    if volumes == 0 || volumes > MAX_VOLUMES {
        return Err(PdViolation::VolumeCount(volumes));
    }
    for (trace, t, limit) in [(0u8, t0, volumes), (1, t1, volumes - 1)] {
        for (index, a) in t.accesses.iter().enumerate() {
            let volume = match a {
                Access::Read { volume, .. } | Access::Write { volume, .. } => *volume,
                Access::Empty => continue,
            };
            if volume >= limit {
                return Err(PdViolation::NoSuchVolume { trace, index, volume });
            }
        }
    }
    let hidden = volumes - 1;
    let w0: BTreeMap<_, _> = t0.final_writes().into_iter().filter(|((v, _), _)| *v != hidden).collect();
    let w1 = t1.final_writes();
    let zero = [0u8; BLOCK_SIZE];
    for key in w0.keys().chain(w1.keys()) {
        let a = w0.get(key).copied().unwrap_or(&zero);
        let b = w1.get(key).copied().unwrap_or(&zero);
        if a != b {
            return Err(PdViolation::ContentsDiffer { volume: key.0, block: key.1 });
        }
    }
    if let Some(&(volume, block)) = w0.keys().find(|k| !w1.contains_key(k)).or_else(|| w1.keys().find(|k| !w0.contains_key(k))) {
        return Err(PdViolation::WrittenSetsDiffer { volume, block });
    }
    Ok(())
}

/// Parameters of [`pd_structural_test`].
#[derive(Debug, Clone)]
pub struct PdTestConfig {
    pub total_blocks: u64,
    /// Volumes in the world with the hidden volume.
    pub volumes: usize,
    pub trials: usize,
    pub alpha: f64,
    pub kdf: KdfCost,
    /// Allocator used while running the traces.
    pub allocation: AllocationOrder,
    /// Bins of the decoy slice-position histogram.
    pub histogram_bins: usize,
}

impl PdTestConfig {
    pub fn new(total_blocks: u64, volumes: usize, trials: usize) -> Self {
        PdTestConfig {
            total_blocks,
            volumes,
            trials,
            alpha: 0.001,
            kdf: KdfCost::FAST,
            allocation: AllocationOrder::Shuffled,
            histogram_bins: 8,
        }
    }
}

/// How a check's statistic is compared with its threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rule {
    /// Pass when statistic <= threshold (mismatch counts).
    AtMost,
    /// Pass when statistic > threshold (p-values).
    Above,
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Rule::AtMost => "<=",
            Rule::Above => ">",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PdCheck {
    pub name: &'static str,
    pub statistic: f64,
    pub rule: Rule,
    pub threshold: f64,
    pub pass: bool,
}

impl PdCheck {
    fn new(name: &'static str, statistic: f64, rule: Rule, threshold: f64) -> Self {
        let pass = match rule {
            Rule::AtMost => statistic <= threshold,
            Rule::Above => statistic > threshold,
        };
        PdCheck { name, statistic, rule, threshold, pass }
    }
}

#[derive(Debug, Clone)]
pub struct PdReport {
    pub trials: usize,
    pub checks: Vec<PdCheck>,
}

impl PdReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn check(&self, name: &str) -> Option<&PdCheck> {
        self.checks.iter().find(|c| c.name == name)
    }

    /// Names of the failed checks.
    pub fn failures(&self) -> Vec<&'static str> {
        self.checks.iter().filter(|c| !c.pass).map(|c| c.name).collect()
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("pd structural test, {} trials\n", self.trials);
        for c in &self.checks {
            s += &format!(
                "{:<24} {} statistic={:.6e} {} {:.6e}\n",
                c.name,
                if c.pass { "PASS" } else { "FAIL" },
                c.statistic,
                c.rule,
                c.threshold
            );
        }
        s += if self.passed() { "result: PASS\n" } else { "result: FAIL\n" };
        s
    }

    /// One tab-separated record per check, with a header line.
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("name\tstatistic\trule\tthreshold\tpass\n");
        for c in &self.checks {
            s += &format!("{}\t{:e}\t{}\t{:e}\t{}\n", c.name, c.statistic, c.rule, c.threshold, c.pass);
        }
        s
    }
}

/// What an adversary holding one snapshot and the decoy passwords sees.
struct AdversaryView {
    geometry: Geometry,
    /// Mapped LSIs of each decoy volume with a digest of the slice contents.
    decoy_slices: Vec<BTreeMap<u64, [u8; 32]>>,
    decoy_psis: Vec<Psi>,
    monobit_p: f64,
    byte_chi2_p: f64,
}

fn observe(dev: &mut MemDevice, decoy_password: Option<&[u8]>, revealed: usize, kdf: KdfCost) -> Result<AdversaryView> {
    let geometry = Geometry::new(dev.block_count())?;
    let mut decoy_slices = Vec::new();
    let mut decoy_psis = Vec::new();
    if let Some(pw) = decoy_password {
        let opts = InstanceOptions { rng_seed: Some([0; 32]), ..InstanceOptions::with_kdf(kdf) };
        let mut inst = DeviceInstance::instantiate(&mut *dev, pw, &opts)?;
        for v in 0..revealed {
            let map = inst.position_map(v)?.to_vec();
            let mut slices = BTreeMap::new();
            for (lsi, psi) in map.iter().enumerate() {
                let Some(psi) = psi else { continue };
                decoy_psis.push(*psi);
                let mut h = Sha256::new();
                for off in 0..SLICE_LOGICAL_BLOCKS {
                    h.update(inst.read(LogicalAddress::new(v, lsi as u64 * SLICE_LOGICAL_BLOCKS + off))?);
                }
                slices.insert(lsi as u64, h.finalize().into());
            }
            decoy_slices.push(slices);
        }
    }

    let bytes = dev.as_bytes();
    let block = |i: u64| &bytes[i as usize * BLOCK_SIZE..(i + 1) as usize * BLOCK_SIZE];
    let mut battery = RandomnessBattery::new();
    battery.feed(&bytes[dmb_cell_offset(revealed)..DMB_PADDING_OFFSET]);
    battery.feed(&bytes[DMB_PADDING_OFFSET..BLOCK_SIZE]);
    for v in revealed..MAX_VOLUMES {
        let start = geometry.volume_header_start(v);
        for i in start..start + geometry.volume_header_blocks {
            battery.feed(block(i));
        }
    }
    let occupied: HashSet<Psi> = decoy_psis.iter().copied().collect();
    for s in 0..geometry.num_slices as u32 {
        if occupied.contains(&Psi(s)) {
            continue;
        }
        let start = geometry.slice_start(Psi(s));
        battery.feed(&bytes[start as usize * BLOCK_SIZE..(start + SLICE_PHYSICAL_BLOCKS) as usize * BLOCK_SIZE]);
    }
    battery.feed(&bytes[geometry.tail_start() as usize * BLOCK_SIZE..]);

    Ok(AdversaryView {
        geometry,
        decoy_slices,
        decoy_psis,
        monobit_p: battery.monobit_p(),
        byte_chi2_p: battery.byte_chi2_p(),
    })
}

fn random_password<R: RngCore>(rng: &mut R) -> Vec<u8> {
    let mut raw = [0u8; 12];
    rng.fill_bytes(&mut raw);
    raw.iter().map(|b| format!("{b:02x}")).collect::<String>().into_bytes()
}

/// Builds one world: formats with `passwords`, opens the last one, runs the
/// trace and closes.
fn build_world<R: RngCore + CryptoRng>(
    cfg: &PdTestConfig,
    passwords: &[Vec<u8>],
    trace: &PdTrace,
    rng: &mut R,
) -> Result<MemDevice> {
    let mut dev = MemDevice::new(cfg.total_blocks);
    format_device(&mut dev, passwords, &InitOptions { skip_randfill: false, kdf: cfg.kdf }, rng)?;
    if let Some(top) = passwords.last() {
        let opts = InstanceOptions {
            kdf: cfg.kdf,
            allocation: cfg.allocation,
            rng_seed: Some(rng.gen()),
            ..Default::default()
        };
        let mut inst = DeviceInstance::instantiate(&mut dev, top, &opts)?;
        trace.run(&mut inst)?;
        inst.close()?;
    }
    Ok(dev)
}

/// Runs the single-snapshot deniability experiment `cfg.trials` times.
///
/// World 0 has `cfg.volumes` volumes and runs `t0`; world 1 has one volume
/// fewer and runs `t1`. The adversary gets each final image together with
/// the decoy passwords and checks that
///
/// - (a) decoy contents and mapped logical slices agree,
/// - (b) both images have the same layout,
/// - (c) every byte the revealed keys do not explain passes the randomness
///   battery (Bonferroni-corrected over all trials and both worlds),
/// - (d) the number and positions of decoy slices are identically
///   distributed in both worlds (two-sample χ²).
pub fn pd_structural_test<R: RngCore + CryptoRng>(
    cfg: &PdTestConfig,
    t0: &PdTrace,
    t1: &PdTrace,
    rng: &mut R,
) -> Result<PdReport> {
    check_pd_constraints(t0, t1, cfg.volumes).map_err(Error::ConstraintViolation)?;
    let revealed = cfg.volumes - 1;
    let bins = cfg.histogram_bins.max(1);

    let mut content_mismatches = 0u64;
    let mut layout_mismatches = 0u64;
    let mut min_monobit = 1.0f64;
    let mut min_chi2 = 1.0f64;
    let mut counts: [BTreeMap<usize, u64>; 2] = Default::default();
    let mut psi_hist = [vec![0u64; bins], vec![0u64; bins]];

    for _ in 0..cfg.trials {
        let passwords: Vec<Vec<u8>> = (0..cfg.volumes).map(|_| random_password(rng)).collect();
        let decoy_pw = revealed.checked_sub(1).map(|i| passwords[i].as_slice());
        let mut views = Vec::with_capacity(2);
        for (world, (pws, trace)) in [(&passwords[..], t0), (&passwords[..revealed], t1)].into_iter().enumerate() {
            let mut dev = build_world(cfg, pws, trace, rng)?;
            let view = observe(&mut dev, decoy_pw, revealed, cfg.kdf)?;
            min_monobit = min_monobit.min(view.monobit_p);
            min_chi2 = min_chi2.min(view.byte_chi2_p);
            *counts[world].entry(view.decoy_psis.len()).or_default() += 1;
            for psi in &view.decoy_psis {
                psi_hist[world][psi.index() * bins / view.geometry.num_slices as usize] += 1;
            }
            views.push(view);
        }
        let (v0, v1) = (&views[0], &views[1]);
        if v0.geometry != v1.geometry || v0.geometry.regions() != v1.geometry.regions() {
            layout_mismatches += 1;
        }
        for (a, b) in v0.decoy_slices.iter().zip(&v1.decoy_slices) {
            let keys: BTreeSet<u64> = a.keys().chain(b.keys()).copied().collect();
            content_mismatches += keys.iter().filter(|k| a.get(k) != b.get(k)).count() as u64;
        }
    }

    let tests = (cfg.trials * 2 * 2).max(1) as f64;
    let count_keys: BTreeSet<usize> = counts.iter().flat_map(|c| c.keys().copied()).collect();
    let count_hist = |c: &BTreeMap<usize, u64>| -> Vec<u64> { count_keys.iter().map(|k| c.get(k).copied().unwrap_or(0)).collect() };
    let (_, _, count_p) = two_sample_chi2(&count_hist(&counts[0]), &count_hist(&counts[1]));
    let (_, _, psi_p) = two_sample_chi2(&psi_hist[0], &psi_hist[1]);

    Ok(PdReport {
        trials: cfg.trials,
        checks: vec![
            PdCheck::new("a.decoy_contents", content_mismatches as f64, Rule::AtMost, 0.0),
            PdCheck::new("b.layout", layout_mismatches as f64, Rule::AtMost, 0.0),
            PdCheck::new("c.monobit_min_p", min_monobit, Rule::Above, cfg.alpha / tests),
            PdCheck::new("c.byte_chi2_min_p", min_chi2, Rule::Above, cfg.alpha / tests),
            PdCheck::new("d.decoy_slice_count_p", count_p, Rule::Above, cfg.alpha),
            PdCheck::new("d.decoy_psi_histogram_p", psi_p, Rule::Above, cfg.alpha),
        ],
    })
}
