//! Append-only ordered record store.
//!
//! File layout: an 8-byte header (`PXRS` + version `u32` BE), then records
//! `klen:u32 vlen:u32 key value`, all big-endian. Rewriting a key appends a
//! new record and the last one wins. Opening a store reads only record
//! headers and keys to rebuild the in-memory key order; values are fetched
//! with positional reads, so a shared handle serves concurrent readers.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{self, Read, Seek, SeekFrom};
use std::ops::Bound;
use std::os::unix::fs::FileExt;
use std::path::{Path, PathBuf};

const MAGIC: &[u8; 4] = b"PXRS";
const VERSION: u32 = 1;
const HEADER_LEN: u64 = 8;
const FLUSH_AT: usize = 1 << 20;

/// Where a value lives in the file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Loc {
    pub offset: u64,
    pub len: u32,
}

#[derive(Debug)]
pub struct RecordStore {
    path: PathBuf,
    file: File,
    index: BTreeMap<Vec<u8>, Loc>,
    /// Bytes already written to the file.
    flushed: u64,
    pending: Vec<u8>,
}

impl RecordStore {
    /// Creates an empty store, truncating any existing file.
    pub fn create(path: impl AsRef<Path>) -> io::Result<Self> {
        let path = path.as_ref().to_path_buf();
        let file = OpenOptions::new().read(true).write(true).create(true).truncate(true).open(&path)?;
        let mut header = Vec::with_capacity(HEADER_LEN as usize);
        header.extend_from_slice(MAGIC);
        header.extend_from_slice(&VERSION.to_be_bytes());
        file.write_all_at(&header, 0)?;
        Ok(Self { path, file, index: BTreeMap::new(), flushed: HEADER_LEN, pending: Vec::new() })
    }

    /// Opens an existing store read-only.
    pub fn open(path: impl AsRef<Path>) -> io::Result<Self> {
        Self::open_with(path.as_ref(), false)
    }

    /// Opens an existing store for further appends.
    pub fn open_rw(path: impl AsRef<Path>) -> io::Result<Self> {
        Self::open_with(path.as_ref(), true)
    }

    fn open_with(path: &Path, write: bool) -> io::Result<Self> {
        let path = path.to_path_buf();
        let mut file = OpenOptions::new().read(true).write(write).open(&path)?;
        let len = file.metadata()?.len();
        let mut header = [0u8; HEADER_LEN as usize];
        file.read_exact(&mut header).map_err(|_| corrupt("file too short for header"))?;
        if &header[..4] != MAGIC || u32::from_be_bytes(header[4..].try_into().unwrap()) != VERSION {
            return Err(corrupt("not a record store"));
        }
        let mut index = BTreeMap::new();
        let mut pos = HEADER_LEN;
        let mut rec = [0u8; 8];
        while pos < len {
            if pos + 8 > len {
                return Err(corrupt("truncated record header"));
            }
            file.read_exact(&mut rec)?;
            let klen = u32::from_be_bytes(rec[..4].try_into().unwrap()) as u64;
            let vlen = u32::from_be_bytes(rec[4..].try_into().unwrap());
            let value_at = pos + 8 + klen;
            if value_at + u64::from(vlen) > len {
                return Err(corrupt("truncated record"));
            }
            let mut key = vec![0u8; klen as usize];
            file.read_exact(&mut key)?;
            file.seek(SeekFrom::Current(i64::from(vlen)))?;
            index.insert(key, Loc { offset: value_at, len: vlen });
            pos = value_at + u64::from(vlen);
        }
        Ok(Self { path, file, index, flushed: len, pending: Vec::new() })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn put(&mut self, key: &[u8], value: &[u8]) -> io::Result<()> {
        let klen = u32::try_from(key.len()).map_err(|_| invalid("key too long"))?;
        let vlen = u32::try_from(value.len()).map_err(|_| invalid("value too long"))?;
        let at = self.flushed + self.pending.len() as u64;
        self.pending.extend_from_slice(&klen.to_be_bytes());
        self.pending.extend_from_slice(&vlen.to_be_bytes());
        self.pending.extend_from_slice(key);
        self.pending.extend_from_slice(value);
        self.index.insert(key.to_vec(), Loc { offset: at + 8 + u64::from(klen), len: vlen });
        if self.pending.len() >= FLUSH_AT {
            self.flush()?;
        }
        Ok(())
    }

    pub fn flush(&mut self) -> io::Result<()> {
        if !self.pending.is_empty() {
            self.file.write_all_at(&self.pending, self.flushed)?;
            self.flushed += self.pending.len() as u64;
            self.pending.clear();
        }
        Ok(())
    }

    /// Flushes and syncs to disk.
    pub fn sync(&mut self) -> io::Result<()> {
        self.flush()?;
        self.file.sync_all()
    }

    pub fn locate(&self, key: &[u8]) -> Option<Loc> {
        self.index.get(key).copied()
    }

    pub fn contains(&self, key: &[u8]) -> bool {
        self.index.contains_key(key)
    }

    pub fn read(&self, loc: Loc) -> io::Result<Vec<u8>> {
        let mut buf = vec![0u8; loc.len as usize];
        if loc.offset >= self.flushed {
            let start = (loc.offset - self.flushed) as usize;
            buf.copy_from_slice(&self.pending[start..start + loc.len as usize]);
        } else {
            self.file.read_exact_at(&mut buf, loc.offset)?;
        }
        Ok(buf)
    }

    pub fn get(&self, key: &[u8]) -> io::Result<Option<Vec<u8>>> {
        self.locate(key).map(|l| self.read(l)).transpose()
    }

    /// Keys in `[lo, hi)` with their locations, ascending.
    pub fn range<'a>(&'a self, lo: &[u8], hi: &[u8]) -> impl Iterator<Item = (&'a [u8], Loc)> + 'a {
        self.index
            .range::<[u8], _>((Bound::Included(lo), Bound::Excluded(hi)))
            .map(|(k, l)| (k.as_slice(), *l))
    }

    /// Keys starting with `prefix`, ascending.
    pub fn prefix<'a>(&'a self, prefix: &'a [u8]) -> impl Iterator<Item = (&'a [u8], Loc)> + 'a {
        self.index
            .range::<[u8], _>((Bound::Included(prefix), Bound::Unbounded))
            .take_while(move |(k, _)| k.starts_with(prefix))
            .map(|(k, l)| (k.as_slice(), *l))
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    /// Bytes persisted, including header, keys and record framing.
    pub fn size(&self) -> u64 {
        self.flushed + self.pending.len() as u64
    }
}

impl Drop for RecordStore {
    fn drop(&mut self) {
        let _ = self.flush();
    }
}

fn corrupt(msg: &str) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, msg)
}

fn invalid(msg: &str) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidInput, msg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn put_get_reopen() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.rs");
        {
            let mut s = RecordStore::create(&p).unwrap();
            s.put(&5u64.to_be_bytes(), b"five").unwrap();
            s.put(&1u64.to_be_bytes(), b"one").unwrap();
            s.put(&5u64.to_be_bytes(), b"FIVE").unwrap();
            assert_eq!(s.get(&5u64.to_be_bytes()).unwrap().unwrap(), b"FIVE");
        }
        let s = RecordStore::open(&p).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s.get(&5u64.to_be_bytes()).unwrap().unwrap(), b"FIVE");
        let keys: Vec<_> = s.range(&0u64.to_be_bytes(), &9u64.to_be_bytes()).map(|(k, _)| k.to_vec()).collect();
        assert_eq!(keys, vec![1u64.to_be_bytes().to_vec(), 5u64.to_be_bytes().to_vec()]);
        assert_eq!(s.size(), std::fs::metadata(&p).unwrap().len());
    }

    #[test]
    fn empty_store_is_tiny() {
        let dir = tempfile::tempdir().unwrap();
        let s = RecordStore::create(dir.path().join("e")).unwrap();
        assert!(s.size() < 64 * 1024);
        assert!(s.is_empty());
    }

    #[test]
    fn truncated_file_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t");
        {
            let mut s = RecordStore::create(&p).unwrap();
            s.put(b"k", &[7u8; 100]).unwrap();
        }
        let f = OpenOptions::new().write(true).open(&p).unwrap();
        f.set_len(50).unwrap();
        assert!(RecordStore::open(&p).is_err());
    }

    #[test]
    fn prefix_scan() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = RecordStore::create(dir.path().join("p")).unwrap();
        for k in [&b"a1"[..], b"b1", b"b2", b"c"] {
            s.put(k, k).unwrap();
        }
        let got: Vec<_> = s.prefix(b"b").map(|(k, _)| k.to_vec()).collect();
        assert_eq!(got, vec![b"b1".to_vec(), b"b2".to_vec()]);
    }
}
