//! Binary Merkle tree with domain-separated leaf and interior hashing.

use super::hash::Hash;

const LEAF_PREFIX: u8 = 0x00;
const NODE_PREFIX: u8 = 0x01;

fn leaf(h: &Hash) -> Hash {
    Hash::digest_parts([&[LEAF_PREFIX][..], h.as_bytes()])
}

fn node(left: &Hash, right: &Hash) -> Hash {
    Hash::digest_parts([&[NODE_PREFIX][..], left.as_bytes(), right.as_bytes()])
}

/// Root over ordered leaves. An odd node at any level is paired with
/// itself; the empty tree has the all-zero root.
pub fn merkle_root(leaves: &[Hash]) -> Hash {
    if leaves.is_empty() {
        return Hash::ZERO;
    }
    let mut level: Vec<Hash> = leaves.iter().map(leaf).collect();
    while level.len() > 1 {
        level = level
            .chunks(2)
            .map(|pair| match pair {
                [l, r] => node(l, r),
                [only] => node(only, only),
                _ => unreachable!(),
            })
            .collect();
    }
    level[0]
}
