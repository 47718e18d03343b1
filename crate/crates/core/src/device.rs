//! Block-addressed backing stores: a file image or an in-memory buffer.

use std::fs::{File, OpenOptions};
use std::io::{self, Write};
use std::os::unix::fs::FileExt;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::layout::{Block, BLOCK_SIZE};

pub trait BlockDevice {
    fn block_count(&self) -> u64;
    fn read_block(&mut self, index: u64, buf: &mut Block) -> io::Result<()>;
    fn write_block(&mut self, index: u64, buf: &Block) -> io::Result<()>;

    /// Writes a run of whole blocks starting at `start`.
    fn write_blocks(&mut self, start: u64, data: &[u8]) -> io::Result<()> {
        debug_assert_eq!(data.len() % BLOCK_SIZE, 0);
        for (i, chunk) in data.chunks_exact(BLOCK_SIZE).enumerate() {
            self.write_block(start + i as u64, chunk.try_into().unwrap())?;
        }
        Ok(())
    }

    fn sync(&mut self) -> io::Result<()> {
        Ok(())
    }
}

impl<T: BlockDevice + ?Sized> BlockDevice for &mut T {
    fn block_count(&self) -> u64 {
        (**self).block_count()
    }
    fn read_block(&mut self, index: u64, buf: &mut Block) -> io::Result<()> {
        (**self).read_block(index, buf)
    }
    fn write_block(&mut self, index: u64, buf: &Block) -> io::Result<()> {
        (**self).write_block(index, buf)
    }
    fn write_blocks(&mut self, start: u64, data: &[u8]) -> io::Result<()> {
        (**self).write_blocks(start, data)
    }
    fn sync(&mut self) -> io::Result<()> {
        (**self).sync()
    }
}

fn out_of_range(index: u64, count: u64) -> io::Error {
    io::Error::new(
        io::ErrorKind::InvalidInput,
        format!("block {index} beyond end of device ({count} blocks)"),
    )
}

/// An image held in RAM. Cloning it takes a snapshot.
#[derive(Clone, PartialEq, Eq)]
pub struct MemDevice {
    data: Vec<u8>,
}

impl MemDevice {
    pub fn new(blocks: u64) -> Self {
        MemDevice { data: vec![0u8; blocks as usize * BLOCK_SIZE] }
    }

    pub fn from_bytes(data: Vec<u8>) -> Result<Self> {
        if !data.len().is_multiple_of(BLOCK_SIZE) {
            return Err(Error::InvalidImageSize(data.len() as u64));
        }
        Ok(MemDevice { data })
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.data
    }

    pub fn as_bytes_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.data
    }

    fn range(&self, index: u64, blocks: usize) -> io::Result<std::ops::Range<usize>> {
        let start = index as usize * BLOCK_SIZE;
        let end = start + blocks * BLOCK_SIZE;
        if index >= self.block_count() || end > self.data.len() {
            return Err(out_of_range(index, self.block_count()));
        }
        Ok(start..end)
    }
}

impl std::fmt::Debug for MemDevice {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "MemDevice({} blocks)", self.block_count())
    }
}

impl BlockDevice for MemDevice {
    fn block_count(&self) -> u64 {
        (self.data.len() / BLOCK_SIZE) as u64
    }

    fn read_block(&mut self, index: u64, buf: &mut Block) -> io::Result<()> {
        let r = self.range(index, 1)?;
        buf.copy_from_slice(&self.data[r]);
        Ok(())
    }

    fn write_block(&mut self, index: u64, buf: &Block) -> io::Result<()> {
        let r = self.range(index, 1)?;
        self.data[r].copy_from_slice(buf);
        Ok(())
    }

    fn write_blocks(&mut self, start: u64, data: &[u8]) -> io::Result<()> {
        let r = self.range(start, data.len() / BLOCK_SIZE)?;
        self.data[r].copy_from_slice(data);
        Ok(())
    }
}

/// Advisory lock: the file `<image>.lock`, created exclusively and removed on
/// drop. A lock left behind by a crashed process must be deleted by hand.
#[derive(Debug)]
pub struct ImageLock {
    path: PathBuf,
}

impl ImageLock {
    pub fn path_for(image: &Path) -> PathBuf {
        let mut p = image.as_os_str().to_owned();
        p.push(".lock");
        PathBuf::from(p)
    }

    pub fn acquire(image: &Path) -> Result<Self> {
        let path = Self::path_for(image);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(ImageLock { path })
            }
            Err(e) if e.kind() == io::ErrorKind::AlreadyExists => Err(Error::Locked(path)),
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for ImageLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

/// An image file. Opening for writing takes the advisory lock.
#[derive(Debug)]
pub struct FileDevice {
    file: File,
    blocks: u64,
    _lock: Option<ImageLock>,
}

impl FileDevice {
    /// Creates (or truncates) an image of `blocks` blocks.
    pub fn create(path: &Path, blocks: u64) -> Result<Self> {
        let lock = ImageLock::acquire(path)?;
        let file = OpenOptions::new().read(true).write(true).create(true).truncate(true).open(path)?;
        file.set_len(blocks * BLOCK_SIZE as u64)?;
        Ok(FileDevice { file, blocks, _lock: Some(lock) })
    }

    pub fn open(path: &Path) -> Result<Self> {
        let lock = ImageLock::acquire(path)?;
        let file = OpenOptions::new().read(true).write(true).open(path)?;
        let blocks = Self::checked_blocks(&file)?;
        Ok(FileDevice { file, blocks, _lock: Some(lock) })
    }

    /// Read-only access without the lock. Writes fail with an I/O error.
    pub fn open_read_only(path: &Path) -> Result<Self> {
        let file = File::open(path)?;
        let blocks = Self::checked_blocks(&file)?;
        Ok(FileDevice { file, blocks, _lock: None })
    }

    fn checked_blocks(file: &File) -> Result<u64> {
        let len = file.metadata()?.len();
        if len % BLOCK_SIZE as u64 != 0 {
            return Err(Error::InvalidImageSize(len));
        }
        Ok(len / BLOCK_SIZE as u64)
    }
}

impl BlockDevice for FileDevice {
    fn block_count(&self) -> u64 {
        self.blocks
    }

    fn read_block(&mut self, index: u64, buf: &mut Block) -> io::Result<()> {
        if index >= self.blocks {
            return Err(out_of_range(index, self.blocks));
        }
        self.file.read_exact_at(buf, index * BLOCK_SIZE as u64)
    }

    fn write_block(&mut self, index: u64, buf: &Block) -> io::Result<()> {
        if index >= self.blocks {
            return Err(out_of_range(index, self.blocks));
        }
        self.file.write_all_at(buf, index * BLOCK_SIZE as u64)
    }

    fn write_blocks(&mut self, start: u64, data: &[u8]) -> io::Result<()> {
        let n = (data.len() / BLOCK_SIZE) as u64;
        if start + n > self.blocks {
            return Err(out_of_range(start + n - 1, self.blocks));
        }
        self.file.write_all_at(data, start * BLOCK_SIZE as u64)
    }

    fn sync(&mut self) -> io::Result<()> {
        self.file.sync_data()
    }
}
