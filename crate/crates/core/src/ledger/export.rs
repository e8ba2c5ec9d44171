//! Ledger snapshot files: a concatenation of `u64` big-endian length
//! prefixed canonical block encodings. A JSON dump is available for
//! debugging and is never hashed.

use serde::Serialize;

use super::block::{validate_chain, Block, ChainViolation, TxValidity, ViolationKind};
use crate::codec;

pub fn export_ledger(blocks: &[Block]) -> Vec<u8> {
    let mut out = Vec::new();
    for block in blocks {
        let bytes = codec::encode(block);
        out.extend_from_slice(&(bytes.len() as u64).to_be_bytes());
        out.extend_from_slice(&bytes);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ImportError {
    #[error("ledger file truncated at byte {offset}")]
    Truncated { offset: usize },
    #[error("block {index} could not be decoded")]
    Undecodable { index: usize },
}

/// Splits a ledger file into per-block frames without decoding them.
pub fn frames(bytes: &[u8]) -> Result<Vec<&[u8]>, ImportError> {
    let mut out = Vec::new();
    let mut offset = 0;
    while offset < bytes.len() {
        let Some(prefix) = bytes.get(offset..offset + 8) else {
            return Err(ImportError::Truncated { offset });
        };
        let len = u64::from_be_bytes(prefix.try_into().unwrap()) as usize;
        let start = offset + 8;
        let Some(frame) = start.checked_add(len).and_then(|end| bytes.get(start..end)) else {
            return Err(ImportError::Truncated { offset });
        };
        out.push(frame);
        offset = start + len;
    }
    Ok(out)
}

pub fn import_ledger(bytes: &[u8]) -> Result<Vec<Block>, ImportError> {
    frames(bytes)?
        .into_iter()
        .enumerate()
        .map(|(index, frame)| codec::decode(frame).map_err(|_| ImportError::Undecodable { index }))
        .collect()
}

/// Validates an exported ledger. An undecodable frame is reported at its
/// own index; a truncated file at the index of the frame that runs short.
pub fn validate_export(bytes: &[u8]) -> Result<usize, ChainViolation> {
    let frames = match frames(bytes) {
        Ok(f) => f,
        Err(ImportError::Truncated { offset }) => {
            let index = frames(&bytes[..offset]).map(|f| f.len()).unwrap_or(0);
            return Err(ChainViolation { index, kind: ViolationKind::Undecodable });
        }
        Err(ImportError::Undecodable { index }) => {
            return Err(ChainViolation { index, kind: ViolationKind::Undecodable })
        }
    };
    let mut blocks = Vec::with_capacity(frames.len());
    for (index, frame) in frames.into_iter().enumerate() {
        match codec::decode::<Block>(frame) {
            Ok(b) => blocks.push(b),
            Err(_) => return Err(ChainViolation { index, kind: ViolationKind::Undecodable }),
        }
    }
    validate_chain(&blocks)?;
    Ok(blocks.len())
}

#[derive(Serialize)]
struct TxDump<'a> {
    id: String,
    creator: String,
    contract: &'a str,
    operation: &'a str,
    payload_len: usize,
    reads: Vec<String>,
    writes: Vec<String>,
    endorsements: usize,
    validity: TxValidity,
}

#[derive(Serialize)]
struct BlockDump<'a> {
    number: u64,
    hash: String,
    previous_hash: String,
    data_hash: String,
    transactions: Vec<TxDump<'a>>,
}

/// Human-readable JSON rendering of a chain.
pub fn dump_json(blocks: &[Block]) -> serde_json::Value {
    let dump: Vec<BlockDump> = blocks
        .iter()
        .map(|b| BlockDump {
            number: b.header.number,
            hash: b.hash().to_hex(),
            previous_hash: b.header.previous_hash.to_hex(),
            data_hash: b.header.data_hash.to_hex(),
            transactions: b
                .transactions
                .iter()
                .zip(&b.validity)
                .map(|(tx, v)| TxDump {
                    id: tx.id.to_string(),
                    creator: tx.creator.to_string(),
                    contract: &tx.call.contract,
                    operation: &tx.call.operation,
                    payload_len: tx.payload_len(),
                    reads: tx.rw_set.reads.iter().map(|(k, _)| k.clone()).collect(),
                    writes: tx.rw_set.writes.iter().map(|(k, _)| k.clone()).collect(),
                    endorsements: tx.endorsements.len(),
                    validity: *v,
                })
                .collect(),
        })
        .collect();
    serde_json::to_value(dump).expect("dump is plain data")
}
