//! On-disk ledger layout.
//!
//! ```text
//! <dir>/index.tsv            height<TAB>hex(block_hash), one line per block
//! <dir>/0000000000.block     canonical block bytes
//! <dir>/0000000001.block
//! ...
//! ```

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

use super::{Block, Ledger};
use crate::codec;
use crate::hash::Hash32;

pub const INDEX_FILE: &str = "index.tsv";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("malformed index line {line}: {reason}")]
    BadIndex { line: usize, reason: String },
    #[error("block file for height {height} is corrupt: {reason}")]
    CorruptBlock { height: u64, reason: String },
}

impl StoreError {
    /// Height of the offending block, when the failure is attributable to one.
    pub fn height(&self) -> Option<u64> {
        match self {
            StoreError::CorruptBlock { height, .. } => Some(*height),
            _ => None,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn block_file_name(height: u64) -> String {
    format!("{height:010}.block")
}

/// Writes every block and the index. Existing block files are overwritten,
/// so saving the same ledger twice yields byte-identical directories.
pub fn save(ledger: &Ledger, dir: &Path) -> Result<(), StoreError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut index = String::new();
    for block in ledger.blocks() {
        let path = dir.join(block_file_name(block.height));
        fs::write(&path, codec::to_bytes(block)).map_err(io_err(&path))?;
        index.push_str(&format!("{}\t{}\n", block.height, block.block_hash));
    }
    let path = dir.join(INDEX_FILE);
    fs::write(&path, index).map_err(io_err(&path))
}

/// Loads a ledger directory. Block files that fail to decode, or whose hash
/// disagrees with the index, are reported as corrupt at their height. Hash
/// chain consistency is left to [`Ledger::verify_chain`].
pub fn load(dir: &Path) -> Result<Ledger, StoreError> {
    let index_path = dir.join(INDEX_FILE);
    let index = fs::read_to_string(&index_path).map_err(io_err(&index_path))?;
    let mut blocks = Vec::new();
    for (n, line) in index.lines().enumerate() {
        let line_no = n + 1;
        let bad = |reason: &str| StoreError::BadIndex {
            line: line_no,
            reason: reason.to_string(),
        };
        let (height, hash) = line.split_once('\t').ok_or_else(|| bad("missing tab"))?;
        let height: u64 = height.parse().map_err(|_| bad("height is not an integer"))?;
        let hash: Hash32 = hash.parse().map_err(|_| bad("hash is not 64 hex digits"))?;
        if height != n as u64 {
            return Err(bad("heights are not contiguous from 0"));
        }

        let path = dir.join(block_file_name(height));
        let bytes = fs::read(&path).map_err(io_err(&path))?;
        let block: Block = codec::from_bytes(&bytes).map_err(|e| StoreError::CorruptBlock {
            height,
            reason: e.to_string(),
        })?;
        if block.block_hash != hash {
            return Err(StoreError::CorruptBlock {
                height,
                reason: "stored hash differs from index".into(),
            });
        }
        blocks.push(block);
    }
    Ok(Ledger::from_blocks(blocks))
}
