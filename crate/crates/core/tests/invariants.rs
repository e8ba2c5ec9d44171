//! Property tests for the ledger, identity and simulator invariants.

mod common;

use std::collections::BTreeMap;
use std::time::Duration;

use bytes::Bytes;
use edgechain::codec;
use edgechain::contracts::{update_vehicle_info, ContractCall, GeoPoint, VehicleRecord};
use edgechain::fleet::{ContractMix, RequestPlan, SubmitMode, Workload};
use edgechain::identity::{ca_issue, sign, verify, verify_certificate, KeyPair, Pseudonym, Role, Signature};
use edgechain::ledger::{
    apply_block, merkle_root, validate_chain, Block, Hash, ReadWriteSet, SignedProposal, Transaction, TxValidity,
    Version, ViolationKind, WorldState,
};
use edgechain::ledger::{Proposal, StateView};
use edgechain::system::{NetworkConfig, System, VehicleSpec};
use proptest::prelude::*;
use sha2::{Digest, Sha256};

fn sha(parts: &[&[u8]]) -> [u8; 32] {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p);
    }
    h.finalize().into()
}

/// Top-down recursive definition: node `i` at height `k` covers leaves
/// `[i * 2^k, (i + 1) * 2^k)`; a missing right child is its left sibling.
fn oracle_root(leaves: &[Hash]) -> [u8; 32] {
    fn width(n: usize, k: u32) -> usize {
        (0..k).fold(n, |w, _| w.div_ceil(2))
    }
    fn at(leaves: &[Hash], k: u32, i: usize) -> [u8; 32] {
        if k == 0 {
            return sha(&[&[0], leaves[i].as_bytes()]);
        }
        let below = width(leaves.len(), k - 1);
        let left = at(leaves, k - 1, 2 * i);
        let right = if 2 * i + 1 < below { at(leaves, k - 1, 2 * i + 1) } else { left };
        sha(&[&[1], &left, &right])
    }
    if leaves.is_empty() {
        return [0; 32];
    }
    let mut height = 0;
    while width(leaves.len(), height) > 1 {
        height += 1;
    }
    at(leaves, height, 0)
}

fn keys(seed: u8) -> KeyPair {
    KeyPair::from_seed([seed; 32])
}

/// A self-contained transaction that writes the given keys.
fn tx(nonce: u64, writes: Vec<(String, Vec<u8>)>, payload: Vec<u8>) -> Transaction {
    let client = keys(1);
    let cert = ca_issue(&keys(0), &client.public_key, Role::Vehicle, 0, 1_000).unwrap();
    let proposal = Proposal {
        creator_cert: cert,
        call: ContractCall::new("test", "write", vec![Bytes::from(nonce.to_be_bytes().to_vec())], payload.into()),
        nonce,
        created_at: nonce,
    };
    let signature = client.sign(proposal.id().0.as_bytes());
    let rw_set =
        ReadWriteSet { reads: Vec::new(), writes: writes.into_iter().map(|(k, v)| (k, Bytes::from(v))).collect() };
    Transaction::from_endorsed(SignedProposal { proposal, signature }, rw_set, Vec::new())
}

fn arb_tx() -> impl Strategy<Value = Transaction> {
    (
        any::<u64>(),
        prop::collection::vec(("k[0-4]", prop::collection::vec(any::<u8>(), 0..8)), 0..3),
        prop::collection::vec(any::<u8>(), 0..64),
    )
        .prop_map(|(n, w, p)| tx(n, w, p))
}

fn arb_flag() -> impl Strategy<Value = TxValidity> {
    prop_oneof![
        3 => Just(TxValidity::Valid),
        1 => Just(TxValidity::ConflictInvalid),
        1 => Just(TxValidity::EndorsementInvalid),
    ]
}

/// Blocks of transactions with arbitrary flags, as a chain.
fn arb_chain() -> impl Strategy<Value = Vec<Block>> {
    prop::collection::vec(prop::collection::vec((arb_tx(), arb_flag()), 0..5), 0..6).prop_map(|blocks| {
        let mut chain: Vec<Block> = Vec::new();
        for txs in blocks {
            let (txs, flags): (Vec<_>, Vec<_>) = txs.into_iter().unzip();
            let mut b = Block::next_after(chain.last().map(|b| &b.header), txs);
            b.validity = flags;
            chain.push(b);
        }
        chain
    })
}

proptest! {
    #[test]
    fn merkle_root_matches_recursive_oracle(seeds in prop::collection::vec(any::<u64>(), 0..40)) {
        let leaves: Vec<Hash> = seeds.iter().map(|s| Hash::digest(&s.to_le_bytes())).collect();
        prop_assert_eq!(merkle_root(&leaves).0, oracle_root(&leaves));
    }

    #[test]
    fn merkle_root_commits_to_order_and_content(
        seeds in prop::collection::vec(any::<u64>(), 2..20),
        i in any::<prop::sample::Index>(),
    ) {
        let leaves: Vec<Hash> = seeds.iter().map(|s| Hash::digest(&s.to_le_bytes())).collect();
        let root = merkle_root(&leaves);
        let i = i.index(leaves.len());
        let mut changed = leaves.clone();
        changed[i].0[0] ^= 1;
        prop_assert_ne!(merkle_root(&changed), root);
        let mut swapped = leaves.clone();
        swapped.swap(i, (i + 1) % leaves.len());
        if swapped != leaves {
            prop_assert_ne!(merkle_root(&swapped), root);
        }
    }

    #[test]
    fn codec_roundtrips_and_rejects_trailing_bytes(chain in arb_chain(), extra in any::<u8>()) {
        let bytes = codec::encode(&chain);
        prop_assert_eq!(codec::encoded_len(&chain), bytes.len());
        let back: Vec<Block> = codec::decode(&bytes).unwrap();
        prop_assert_eq!(&back, &chain);
        prop_assert_eq!(codec::encode(&back), bytes.clone());
        let mut longer = bytes;
        longer.push(extra);
        prop_assert!(codec::decode::<Vec<Block>>(&longer).is_err());
    }

    #[test]
    fn chains_built_by_successor_validate(chain in arb_chain()) {
        prop_assert_eq!(validate_chain(&chain), Ok(()));
        if let Some(first) = chain.first() {
            prop_assert_eq!(first.header.number, 0);
            prop_assert!(first.header.previous_hash.is_zero());
        }
        for w in chain.windows(2) {
            prop_assert_eq!(w[1].header.previous_hash, w[0].hash());
        }
    }

    #[test]
    fn any_header_change_breaks_validation(chain in arb_chain(), i in any::<prop::sample::Index>(), field in 0..3u8) {
        prop_assume!(!chain.is_empty());
        let mut chain = chain;
        let i = i.index(chain.len());
        let h = &mut chain[i].header;
        match field {
            0 => h.number += 1,
            1 => h.previous_hash.0[7] ^= 0x10,
            _ => h.data_hash.0[31] ^= 0x01,
        }
        let v = validate_chain(&chain).unwrap_err();
        prop_assert_eq!(v.index, i);
        let expected = [ViolationKind::Number, ViolationKind::Link, ViolationKind::DataHash][field as usize];
        prop_assert_eq!(v.kind, expected);
    }

    #[test]
    fn replay_is_pure_and_matches_oracle(chain in arb_chain(), split in any::<prop::sample::Index>()) {
        let state = WorldState::replay(&chain);
        prop_assert_eq!(WorldState::replay(&chain).state_hash(), state.state_hash());

        // Incremental application from any prefix lands on the same state.
        let k = split.index(chain.len() + 1);
        let partial = WorldState::replay(&chain[..k]);
        let incremental = chain[k..].iter().fold(partial, apply_block);
        prop_assert_eq!(&incremental, &state);

        // Last valid writer wins; its position is the version.
        let mut oracle: BTreeMap<String, (Vec<u8>, Version)> = BTreeMap::new();
        for b in &chain {
            for (j, (t, f)) in b.transactions.iter().zip(&b.validity).enumerate() {
                if *f == TxValidity::Valid {
                    for (key, v) in &t.rw_set.writes {
                        oracle.insert(key.clone(), (v.to_vec(), Version::new(b.header.number, j as u64)));
                    }
                }
            }
        }
        prop_assert_eq!(state.len(), oracle.len());
        for (key, (v, ver)) in &oracle {
            let e = state.get(key).unwrap();
            prop_assert_eq!(&e.value[..], &v[..]);
            prop_assert_eq!(e.version, *ver);
        }
    }

    #[test]
    fn signatures_verify_and_mutations_fail(
        seed in any::<[u8; 32]>(),
        msg in prop::collection::vec(any::<u8>(), 0..128),
        at in any::<prop::sample::Index>(),
        bit in 0..8u8,
    ) {
        let kp = KeyPair::from_seed(seed);
        let sig = sign(&kp.secret_key, &msg);
        prop_assert_eq!(&sig, &kp.sign(&msg));
        prop_assert!(verify(&kp.public_key, &msg, &sig));

        if !msg.is_empty() {
            let mut bad = msg.clone();
            bad[at.index(msg.len())] ^= 1 << bit;
            prop_assert!(!verify(&kp.public_key, &bad, &sig));
        }
        let mut bad_sig = sig.clone();
        let i = at.index(bad_sig.0.len());
        bad_sig.0[i] ^= 1 << bit;
        prop_assert!(!verify(&kp.public_key, &msg, &bad_sig));
        prop_assert!(!verify(&kp.public_key, &msg, &Signature(sig.0[..63].to_vec())));
        prop_assert!(!verify(&KeyPair::from_seed(sha(&[&seed])).public_key, &msg, &sig));
    }

    #[test]
    fn pseudonyms_are_the_key_digest(a in any::<[u8; 32]>(), b in any::<[u8; 32]>()) {
        let (ka, kb) = (KeyPair::from_seed(a), KeyPair::from_seed(b));
        prop_assert_eq!(ka.pseudonym(), KeyPair::from_seed(a).pseudonym());
        prop_assert_eq!(ka.pseudonym().0 .0, sha(&[&ka.public_key.0]));
        prop_assert_eq!(ka.pseudonym(), Pseudonym::of(&ka.public_key));
        prop_assert_eq!(a == b, ka.pseudonym() == kb.pseudonym());
    }

    #[test]
    fn certificates_verify_within_their_window(
        ca_seed in any::<[u8; 32]>(),
        subject_seed in any::<[u8; 32]>(),
        from in 0..1_000_000u64,
        len in 0..1_000_000u64,
        now in 0..3_000_000u64,
        field in 0..5u8,
    ) {
        let ca = KeyPair::from_seed(ca_seed);
        let subject = KeyPair::from_seed(subject_seed);
        let cert = ca_issue(&ca, &subject.public_key, Role::Peer, from, from + len).unwrap();
        prop_assert_eq!(cert.subject, subject.pseudonym());
        let inside = (from..=from + len).contains(&now);
        prop_assert_eq!(verify_certificate(&cert, &ca.public_key, now), inside);
        prop_assert!(verify_certificate(&cert, &ca.public_key, from));

        let mut bad = cert.clone();
        match field {
            0 => bad.role = Role::Orderer,
            1 => bad.valid_to += 1,
            2 => bad.valid_from = bad.valid_from.wrapping_sub(1),
            3 => bad.subject_public_key = KeyPair::from_seed(sha(&[&subject_seed])).public_key,
            _ => bad.issuer_signature.0[0] ^= 0x80,
        }
        prop_assert!(!verify_certificate(&bad, &ca.public_key, from));
        if ca_seed != subject_seed {
            prop_assert!(!verify_certificate(&cert, &subject.public_key, from));
        }
        if len > 0 {
            prop_assert!(ca_issue(&ca, &subject.public_key, Role::Peer, from + len, from).is_err());
        }
    }

    #[test]
    fn vehicle_updates_require_gps_in_range(lat in -200.0..200.0f64, lon in -400.0..400.0f64) {
        let me = keys(3).pseudonym();
        let record = VehicleRecord {
            pseudonym: me,
            owners: vec![me],
            inspection_history: Vec::new(),
            gps: GeoPoint::new(lat, lon),
            connected_edge: "edge-0".into(),
            insurance_ref: "ins".into(),
        };
        let in_range = (-90.0..=90.0).contains(&lat) && (-180.0..=180.0).contains(&lon);
        prop_assert_eq!(record.gps.is_valid(), in_range);
        prop_assert_eq!(update_vehicle_info(&record, me).is_ok(), in_range);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn simulated_event_times_never_decrease(seed in any::<u64>(), vehicles in 1..4usize) {
        let specs = (0..vehicles)
            .map(|i| {
                let mix = ContractMix { update: 0.5, report: 0.5 };
                VehicleSpec::fleet_member(i, 3, Workload::Plan(RequestPlan::new(2, 1, SubmitMode::Single, mix)))
            })
            .collect();
        let system = System::new(NetworkConfig { seed, ..NetworkConfig::default() }, specs);
        let mut sim = system.simulation().unwrap();
        let mut last = sim.now();
        for _ in 0..20_000 {
            if !sim.step() {
                break;
            }
            prop_assert!(sim.now() >= last);
            last = sim.now();
        }
        sim.run_for(Duration::from_millis(10));
        let events = sim.events();
        prop_assert!(!events.is_empty());
        prop_assert!(events.windows(2).all(|w| w[0].at <= w[1].at));
        prop_assert!(events.last().unwrap().at <= sim.now());
    }
}

#[test]
fn committed_chains_satisfy_every_ledger_invariant() {
    let chain = common::committed_chain(11);
    assert!(chain.len() > 1);
    assert_eq!(validate_chain(&chain), Ok(()));
    for b in &chain {
        assert_eq!(b.validity.len(), b.transactions.len());
        let leaves: Vec<Hash> = b.transactions.iter().map(edgechain::ledger::tx_digest).collect();
        assert_eq!(b.header.data_hash.0, oracle_root(&leaves));
    }
    let bytes = codec::encode(&chain);
    assert_eq!(codec::decode::<Vec<Block>>(&bytes).unwrap(), chain);
}
