//! Content-addressed blob store. The chain keeps only [`Cid`]s; model weights,
//! task descriptors and validation sets live here.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{sha256, Canonical, CodecError, Reader};

/// Content identifier: SHA-256 of the blob bytes.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub struct Cid(pub [u8; 32]);

impl Cid {
    pub fn of(blob: &[u8]) -> Self {
        Cid(sha256(blob))
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }
}

impl fmt::Display for Cid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl fmt::Debug for Cid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Cid({}…)", &self.to_hex()[..12])
    }
}

impl FromStr for Cid {
    type Err = StoreError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bytes = hex::decode(s).map_err(|_| StoreError::BadCid(s.to_string()))?;
        let digest: [u8; 32] = bytes
            .try_into()
            .map_err(|_| StoreError::BadCid(s.to_string()))?;
        Ok(Cid(digest))
    }
}

impl From<Cid> for String {
    fn from(c: Cid) -> String {
        c.to_hex()
    }
}

impl TryFrom<String> for Cid {
    type Error = StoreError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl Canonical for Cid {
    fn encode(&self, out: &mut Vec<u8>) {
        self.0.encode(out);
    }
    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok(Cid(<[u8; 32]>::decode(r)?))
    }
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("refusing to store an empty blob")]
    EmptyBlob,
    #[error("blob {0} not found")]
    NotFound(Cid),
    #[error("blob {cid} failed integrity check (content hashes to {actual})")]
    IntegrityMismatch { cid: Cid, actual: Cid },
    #[error("malformed cid {0:?}")]
    BadCid(String),
    #[error("blob {cid} does not decode: {source}")]
    Decode { cid: Cid, source: CodecError },
    #[error("store i/o: {0}")]
    Io(#[from] io::Error),
}

/// In-memory blob map with optional write-through persistence, one file per
/// blob named by the hex digest.
#[derive(Debug, Default, Clone)]
pub struct BlobStore {
    blobs: BTreeMap<Cid, Vec<u8>>,
    dir: Option<PathBuf>,
}

impl BlobStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Opens a persistent store rooted at `dir`, creating it if needed.
    /// Blobs already on disk are read lazily on `get`.
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, StoreError> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir)?;
        Ok(Self {
            blobs: BTreeMap::new(),
            dir: Some(dir),
        })
    }

    pub fn put(&mut self, blob: &[u8]) -> Result<Cid, StoreError> {
        if blob.is_empty() {
            return Err(StoreError::EmptyBlob);
        }
        let cid = Cid::of(blob);
        if self.blobs.contains_key(&cid) {
            return Ok(cid);
        }
        if let Some(dir) = &self.dir {
            let path = dir.join(cid.to_hex());
            if !path.exists() {
                fs::write(&path, blob)?;
            }
        }
        self.blobs.insert(cid, blob.to_vec());
        Ok(cid)
    }

    pub fn get(&self, cid: &Cid) -> Result<Vec<u8>, StoreError> {
        if let Some(b) = self.blobs.get(cid) {
            return Ok(b.clone());
        }
        let Some(dir) = &self.dir else {
            return Err(StoreError::NotFound(*cid));
        };
        let bytes = match fs::read(dir.join(cid.to_hex())) {
            Ok(b) => b,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Err(StoreError::NotFound(*cid)),
            Err(e) => return Err(e.into()),
        };
        let actual = Cid::of(&bytes);
        if actual != *cid {
            return Err(StoreError::IntegrityMismatch { cid: *cid, actual });
        }
        Ok(bytes)
    }

    pub fn contains(&self, cid: &Cid) -> bool {
        self.blobs.contains_key(cid)
            || self
                .dir
                .as_ref()
                .is_some_and(|d| d.join(cid.to_hex()).exists())
    }

    pub fn put_value<T: Canonical>(&mut self, value: &T) -> Result<Cid, StoreError> {
        self.put(&value.to_canonical_bytes())
    }

    pub fn get_value<T: Canonical>(&self, cid: &Cid) -> Result<T, StoreError> {
        let bytes = self.get(cid)?;
        T::from_canonical_bytes(&bytes).map_err(|source| StoreError::Decode { cid: *cid, source })
    }

    /// Number of blobs held in memory.
    pub fn len(&self) -> usize {
        self.blobs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blobs.is_empty()
    }

    /// Writes every in-memory blob to `dir`.
    pub fn persist_to(&self, dir: impl AsRef<Path>) -> Result<(), StoreError> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        for (cid, blob) in &self.blobs {
            fs::write(dir.join(cid.to_hex()), blob)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn put_is_idempotent() {
        let mut s = BlobStore::new();
        let a = s.put(b"weights").unwrap();
        let b = s.put(b"weights").unwrap();
        assert_eq!(a, b);
        assert_eq!(s.len(), 1);
    }

    #[test]
    fn distinct_blobs_distinct_cids() {
        let mut s = BlobStore::new();
        assert_ne!(s.put(b"a").unwrap(), s.put(b"b").unwrap());
    }

    #[test]
    fn empty_blob_rejected() {
        assert!(matches!(BlobStore::new().put(b""), Err(StoreError::EmptyBlob)));
    }

    #[test]
    fn unknown_cid_not_found() {
        let s = BlobStore::new();
        assert!(matches!(s.get(&Cid::of(b"x")), Err(StoreError::NotFound(_))));
    }

    #[test]
    fn descriptor_round_trips_through_store() {
        let mut s = BlobStore::new();
        let value = (3u64, vec![1.5f64, -2.0], "task".to_string());
        let cid = s.put_value(&value).unwrap();
        let back: (u64, Vec<f64>, String) = s.get_value(&cid).unwrap();
        assert_eq!(back, value);
    }

    #[test]
    fn tampered_file_detected() {
        let dir = tempfile::tempdir().unwrap();
        let cid = BlobStore::open(dir.path()).unwrap().put(b"model").unwrap();
        fs::write(dir.path().join(cid.to_hex()), b"poisoned").unwrap();
        let fresh = BlobStore::open(dir.path()).unwrap();
        assert!(matches!(
            fresh.get(&cid),
            Err(StoreError::IntegrityMismatch { .. })
        ));
    }

    #[test]
    fn persistent_store_reads_back_after_reopen() {
        let dir = tempfile::tempdir().unwrap();
        let cid = BlobStore::open(dir.path()).unwrap().put(b"abc").unwrap();
        assert_eq!(BlobStore::open(dir.path()).unwrap().get(&cid).unwrap(), b"abc");
    }

    #[test]
    fn cid_hex_round_trip() {
        let c = Cid::of(b"z");
        assert_eq!(c.to_hex().parse::<Cid>().unwrap(), c);
        assert!("zz".parse::<Cid>().is_err());
    }

    proptest! {
        #[test]
        fn arbitrary_bytes_round_trip(blob in proptest::collection::vec(any::<u8>(), 1..512)) {
            let mut s = BlobStore::new();
            let cid = s.put(&blob).unwrap();
            prop_assert_eq!(s.get(&cid).unwrap(), blob);
        }
    }
}
