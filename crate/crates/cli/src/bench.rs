//! Throughput and space-efficiency benchmarks.
//!
//! Throughput modes push 4 KiB blocks through the engine on a scratch image.
//! `baseline` repeats sequential writes against a plain single-key CTR image
//! (IV = block number, no indirection) and reports the ratio. `frag` runs a
//! seeded synthetic filesystem workload and reports how much of the
//! allocated slice space holds data as the volume fills up.

use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use sflc_core::crypto::{CtrCipher, Iv128, Key256};
use sflc_core::{
    init_device, Block, BlockDevice, DeviceInstance, Error, FileDevice, InitOptions, InstanceOptions, KdfCost,
    LogicalAddress, Result, BLOCK_SIZE,
};

const SLICE_BYTES: u64 = 256 * BLOCK_SIZE as u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum BenchMode {
    Seqwrite,
    Seqread,
    Randwrite,
    Randread,
    Frag,
    Baseline,
}

/// Access pattern of a throughput run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pattern {
    SeqWrite,
    SeqRead,
    RandWrite,
    RandRead,
}

impl Pattern {
    fn is_read(self) -> bool {
        matches!(self, Pattern::SeqRead | Pattern::RandRead)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Throughput {
    pub bytes: u64,
    pub seconds: f64,
}

impl Throughput {
    pub fn mb_per_s(&self) -> f64 {
        self.bytes as f64 / 1e6 / self.seconds.max(1e-9)
    }
}

fn payload(block: &mut Block, n: u64) {
    block[..8].copy_from_slice(&n.to_le_bytes());
}

fn addresses(pattern: Pattern, blocks: u64, rng: &mut ChaCha20Rng) -> Vec<u64> {
    match pattern {
        Pattern::SeqWrite | Pattern::SeqRead => (0..blocks).collect(),
        Pattern::RandWrite | Pattern::RandRead => (0..blocks).map(|_| rng.gen_range(0..blocks)).collect(),
    }
}

/// Runs `blocks` block operations against volume 0 of `inst`. Read patterns
/// are preceded by an untimed sequential fill. Timed writes end with a flush.
pub fn engine_throughput<D: BlockDevice>(
    inst: &mut DeviceInstance<D>,
    pattern: Pattern,
    blocks: u64,
    seed: u64,
) -> Result<Throughput> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut buf = [0u8; BLOCK_SIZE];
    rng.fill_bytes(&mut buf);
    if pattern.is_read() {
        for b in 0..blocks {
            payload(&mut buf, b);
            inst.write(LogicalAddress::new(0, b), &buf)?;
        }
        inst.flush()?;
    }
    let addrs = addresses(pattern, blocks, &mut rng);
    let start = Instant::now();
    for (i, &b) in addrs.iter().enumerate() {
        let addr = LogicalAddress::new(0, b);
        if pattern.is_read() {
            inst.read_into(addr, &mut buf)?;
        } else {
            payload(&mut buf, i as u64);
            inst.write(addr, &buf)?;
        }
    }
    if !pattern.is_read() {
        inst.flush()?;
    }
    Ok(Throughput { bytes: blocks * BLOCK_SIZE as u64, seconds: start.elapsed().as_secs_f64() })
}

/// Plain CTR encryption under one key, IV = block number.
pub struct PlainCtr<D: BlockDevice> {
    dev: D,
    cipher: CtrCipher,
}

impl<D: BlockDevice> PlainCtr<D> {
    pub fn new(dev: D, key: &Key256) -> Self {
        PlainCtr { dev, cipher: CtrCipher::new(key) }
    }

    fn iv(block: u64) -> Iv128 {
        Iv128((block as u128).to_be_bytes())
    }

    pub fn write(&mut self, block: u64, data: &Block) -> Result<()> {
        let mut ct = *data;
        self.cipher.apply(&Self::iv(block), &mut ct);
        Ok(self.dev.write_block(block, &ct)?)
    }

    pub fn read(&mut self, block: u64, out: &mut Block) -> Result<()> {
        self.dev.read_block(block, out)?;
        self.cipher.apply(&Self::iv(block), out);
        Ok(())
    }

    pub fn sync(&mut self) -> Result<()> {
        Ok(self.dev.sync()?)
    }
}

/// [`engine_throughput`] against a [`PlainCtr`] device.
pub fn plain_throughput<D: BlockDevice>(dev: &mut PlainCtr<D>, pattern: Pattern, blocks: u64, seed: u64) -> Result<Throughput> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut buf = [0u8; BLOCK_SIZE];
    rng.fill_bytes(&mut buf);
    if pattern.is_read() {
        for b in 0..blocks {
            payload(&mut buf, b);
            dev.write(b, &buf)?;
        }
        dev.sync()?;
    }
    let addrs = addresses(pattern, blocks, &mut rng);
    let start = Instant::now();
    for (i, &b) in addrs.iter().enumerate() {
        if pattern.is_read() {
            dev.read(b, &mut buf)?;
        } else {
            payload(&mut buf, i as u64);
            dev.write(b, &buf)?;
        }
    }
    if !pattern.is_read() {
        dev.sync()?;
    }
    Ok(Throughput { bytes: blocks * BLOCK_SIZE as u64, seconds: start.elapsed().as_secs_f64() })
}

/// Synthetic filesystem fill.
///
/// The volume is cut into block groups. Each directory owns a region of one
/// group (directories are spread over groups first) and allocates file
/// blocks next-fit from its own cursor, wrapping over the whole volume when
/// its region is full. File sizes are log-uniform. A share of operations
/// rewrite a random already-written block in place instead of creating data.
#[derive(Debug, Clone)]
pub struct FragWorkload {
    pub seed: u64,
    pub group_blocks: u64,
    /// Defaults to one directory per block group.
    pub directories: Option<usize>,
    pub max_file_blocks: u64,
    pub overwrite_ratio: f64,
}

impl Default for FragWorkload {
    fn default() -> Self {
        FragWorkload { seed: 1, group_blocks: 8192, directories: None, max_file_blocks: 1024, overwrite_ratio: 0.25 }
    }
}

impl FragWorkload {
    /// A single writer filling the volume from the front.
    pub fn sequential(seed: u64) -> Self {
        FragWorkload { seed, directories: Some(1), overwrite_ratio: 0.0, ..Default::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FragPoint {
    /// Data blocks written / volume capacity.
    pub occupancy: f64,
    /// Data bytes / bytes of allocated slices; 0 when nothing is allocated.
    pub efficiency: f64,
    pub data_blocks: u64,
    pub slices: u64,
}

fn frag_point<D: BlockDevice>(inst: &DeviceInstance<D>, data_blocks: u64, capacity: u64) -> FragPoint {
    let slices = inst.allocator().occupied_count() as u64;
    let efficiency = if slices == 0 { 0.0 } else { (data_blocks * BLOCK_SIZE as u64) as f64 / (slices * SLICE_BYTES) as f64 };
    FragPoint { occupancy: data_blocks as f64 / capacity as f64, efficiency, data_blocks, slices }
}

/// Fills volume 0 with `workload` and samples the efficiency as occupancy
/// crosses each of `targets` (fractions in `[0, 1]`).
pub fn frag_curve<D: BlockDevice>(
    inst: &mut DeviceInstance<D>,
    workload: &FragWorkload,
    targets: &[f64],
) -> Result<Vec<FragPoint>> {
    let mut targets: Vec<f64> = targets.to_vec();
    targets.sort_by(f64::total_cmp);
    let capacity = inst.logical_blocks();
    let group = workload.group_blocks.max(1);
    let groups = capacity.div_ceil(group) as usize;
    let dirs = workload.directories.unwrap_or(groups).max(1);
    let per_group = dirs.div_ceil(groups);
    let mut cursors: Vec<u64> = (0..dirs)
        .map(|d| {
            let g = (d % groups) as u64;
            let len = group.min(capacity - g * group);
            g * group + (d / groups) as u64 * len / per_group as u64
        })
        .collect();

    let mut rng = ChaCha20Rng::seed_from_u64(workload.seed);
    let mut used = vec![false; capacity as usize];
    let mut written: Vec<u64> = Vec::new();
    let mut buf = [0u8; BLOCK_SIZE];
    rng.fill_bytes(&mut buf);
    let mut points = Vec::with_capacity(targets.len());
    let mut next = 0;
    let reached = |n: u64, t: f64| n as f64 >= t * capacity as f64;

    while next < targets.len() && reached(0, targets[next]) {
        points.push(frag_point(inst, 0, capacity));
        next += 1;
    }
    let max_size = workload.max_file_blocks.max(1);
    while next < targets.len() && (written.len() as u64) < capacity {
        if !written.is_empty() && rng.gen_bool(workload.overwrite_ratio.clamp(0.0, 1.0)) {
            let b = written[rng.gen_range(0..written.len())];
            payload(&mut buf, b);
            inst.write(LogicalAddress::new(0, b), &buf)?;
            continue;
        }
        let size = ((rng.gen::<f64>() * ((max_size + 1) as f64).ln()).exp() as u64).clamp(1, max_size);
        let d = rng.gen_range(0..dirs);
        let mut b = cursors[d];
        for _ in 0..size {
            if written.len() as u64 == capacity {
                break;
            }
            while used[b as usize] {
                b = (b + 1) % capacity;
            }
            used[b as usize] = true;
            written.push(b);
            payload(&mut buf, b);
            inst.write(LogicalAddress::new(0, b), &buf)?;
            b = (b + 1) % capacity;
            while next < targets.len() && reached(written.len() as u64, targets[next]) {
                points.push(frag_point(inst, written.len() as u64, capacity));
                next += 1;
            }
        }
        cursors[d] = b;
    }
    Ok(points)
}

/// Parses sizes such as `4096`, `512K`, `64M`, `1G` or `64MiB` (binary units).
pub fn parse_size(s: &str) -> std::result::Result<u64, String> {
    let t = s.trim();
    let t = t.strip_suffix("iB").or_else(|| t.strip_suffix('B')).unwrap_or(t);
    let (num, mult) = match t.chars().last() {
        Some('K' | 'k') => (&t[..t.len() - 1], 1u64 << 10),
        Some('M' | 'm') => (&t[..t.len() - 1], 1 << 20),
        Some('G' | 'g') => (&t[..t.len() - 1], 1 << 30),
        Some('T' | 't') => (&t[..t.len() - 1], 1 << 40),
        _ => (t, 1),
    };
    let n: u64 = num.trim().parse().map_err(|_| format!("invalid size {s:?}"))?;
    let bytes = n.checked_mul(mult).ok_or_else(|| format!("size {s:?} overflows"))?;
    if bytes == 0 || bytes % BLOCK_SIZE as u64 != 0 {
        return Err(format!("size {s:?} is not a positive multiple of {BLOCK_SIZE} bytes"));
    }
    Ok(bytes)
}

#[derive(Debug, Clone)]
pub struct BenchConfig {
    /// Scratch image path; created by the benchmark and removed afterwards.
    pub image: PathBuf,
    pub mode: BenchMode,
    pub size_bytes: u64,
    /// Overwrite an existing file at `image`.
    pub force: bool,
    pub kdf: KdfCost,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub enum BenchReport {
    Throughput { mode: BenchMode, result: Throughput },
    Baseline { engine: Throughput, plain: Throughput },
    Frag { points: Vec<FragPoint> },
}

impl BenchReport {
    /// Engine / plain sequential-write throughput, for `baseline` runs.
    pub fn ratio(&self) -> Option<f64> {
        match self {
            BenchReport::Baseline { engine, plain } => Some(engine.mb_per_s() / plain.mb_per_s()),
            _ => None,
        }
    }
}

impl fmt::Display for BenchReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BenchReport::Throughput { mode, result } => writeln!(
                f,
                "{mode:?}: {} bytes in {:.3} s, {:.1} MB/s",
                result.bytes,
                result.seconds,
                result.mb_per_s()
            ),
            BenchReport::Baseline { engine, plain } => {
                writeln!(f, "sflc seqwrite:  {:.1} MB/s", engine.mb_per_s())?;
                writeln!(f, "plain seqwrite: {:.1} MB/s", plain.mb_per_s())?;
                writeln!(f, "ratio: {:.3}", self.ratio().unwrap_or(0.0))
            }
            BenchReport::Frag { points } => {
                writeln!(f, "occupancy\tefficiency\tdata_blocks\tslices")?;
                for p in points {
                    writeln!(f, "{:.2}\t{:.4}\t{}\t{}", p.occupancy, p.efficiency, p.data_blocks, p.slices)?;
                }
                Ok(())
            }
        }
    }
}

struct Scratch(PathBuf);

impl Drop for Scratch {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.0);
    }
}

fn scratch(path: &Path, force: bool) -> Result<Scratch> {
    if path.exists() && !force {
        return Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::AlreadyExists,
            format!("{} exists; pass --force to overwrite it", path.display()),
        )));
    }
    Ok(Scratch(path.to_owned()))
}

fn fresh_engine(cfg: &BenchConfig) -> Result<DeviceInstance<FileDevice>> {
    let blocks = cfg.size_bytes / BLOCK_SIZE as u64;
    let mut dev = FileDevice::create(&cfg.image, blocks)?;
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    init_device(&mut dev, &["bench"], &InitOptions { skip_randfill: true, kdf: cfg.kdf }, &mut rng)?;
    let opts = InstanceOptions { rng_seed: Some(rng.gen()), ..InstanceOptions::with_kdf(cfg.kdf) };
    DeviceInstance::instantiate(dev, b"bench", &opts)
}

const BASELINE_ROUNDS: usize = 3;

pub fn run(cfg: &BenchConfig) -> Result<BenchReport> {
    let _guard = scratch(&cfg.image, cfg.force)?;
    let pattern = match cfg.mode {
        BenchMode::Seqwrite | BenchMode::Baseline => Pattern::SeqWrite,
        BenchMode::Seqread => Pattern::SeqRead,
        BenchMode::Randwrite => Pattern::RandWrite,
        BenchMode::Randread => Pattern::RandRead,
        BenchMode::Frag => {
            let mut inst = fresh_engine(cfg)?;
            let targets: Vec<f64> = (0..10).map(|i| i as f64 / 10.0).collect();
            let workload = FragWorkload { seed: cfg.seed, ..Default::default() };
            let points = frag_curve(&mut inst, &workload, &targets)?;
            inst.close()?;
            return Ok(BenchReport::Frag { points });
        }
    };
    let mut best_engine: Option<Throughput> = None;
    let mut best_plain: Option<Throughput> = None;
    let rounds = if cfg.mode == BenchMode::Baseline { BASELINE_ROUNDS } else { 1 };
    let faster = |best: Option<Throughput>, t: Throughput| match best {
        Some(b) if b.seconds <= t.seconds => b,
        _ => t,
    };
    for round in 0..rounds {
        let mut inst = fresh_engine(cfg)?;
        let blocks = inst.logical_blocks() * 3 / 4;
        let t = engine_throughput(&mut inst, pattern, blocks, cfg.seed + round as u64)?;
        inst.close()?;
        drop(inst);
        best_engine = Some(faster(best_engine, t));

        if cfg.mode == BenchMode::Baseline {
            let dev = FileDevice::create(&cfg.image, cfg.size_bytes / BLOCK_SIZE as u64)?;
            let key = Key256::generate(&mut ChaCha20Rng::seed_from_u64(cfg.seed))?;
            let mut plain = PlainCtr::new(dev, &key);
            let t = plain_throughput(&mut plain, pattern, blocks, cfg.seed + round as u64)?;
            best_plain = Some(faster(best_plain, t));
        }
    }
    let engine = best_engine.expect("at least one round");
    Ok(match best_plain {
        Some(plain) => BenchReport::Baseline { engine, plain },
        None => BenchReport::Throughput { mode: cfg.mode, result: engine },
    })
}
