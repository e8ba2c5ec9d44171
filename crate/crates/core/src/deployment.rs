//! Identities, membership and zone assignment for one deployment.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::contracts::{ContractCall, ZoneId};
use crate::identity::{Identity, IdentityBundle, Millis};
use crate::ledger::{SignedProposal, Transaction};
use crate::peer::{sign_proposal, EndorsementPolicy, Membership, PeerError, PeerState};

pub const COMPANY_ZONES: [&str; 3] = ["red", "green", "blue"];

/// Zone served by peer `index`.
pub fn zone_for_peer(index: u32) -> ZoneId {
    match COMPANY_ZONES.get(index as usize) {
        Some(z) => ZoneId::new(*z),
        None => ZoneId::new(format!("zone-{index}")),
    }
}

#[derive(Debug, Clone)]
pub struct Deployment {
    pub bundle: IdentityBundle,
    pub membership: Arc<Membership>,
}

/// The identities a deployment generated from `seed` uses.
pub fn seeded_bundle(seed: u64, vehicles: usize, peers: usize, orderers: usize) -> IdentityBundle {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x1d3e_7a11);
    IdentityBundle::generate(&mut rng, vehicles, peers, orderers)
}

impl Deployment {
    pub fn generate(seed: u64, vehicles: usize, peers: usize, orderers: usize, policy: EndorsementPolicy) -> Self {
        Self::from_bundle(seeded_bundle(seed, vehicles, peers, orderers), policy)
    }

    pub fn from_bundle(bundle: IdentityBundle, policy: EndorsementPolicy) -> Self {
        let certs: Vec<_> = bundle.peers.iter().map(|p| p.certificate.clone()).collect();
        let membership = Arc::new(Membership::new(bundle.ca.public_key.clone(), &certs, policy));
        Deployment { bundle, membership }
    }

    pub fn vehicle(&self, i: usize) -> &Identity {
        &self.bundle.vehicles[i]
    }

    /// Fresh peer state with an empty chain.
    pub fn peer_state(&self, i: usize) -> PeerState {
        PeerState::new(i as u32, self.bundle.peers[i].clone(), zone_for_peer(i as u32), Arc::clone(&self.membership))
    }

    pub fn propose(&self, vehicle: usize, call: ContractCall, nonce: u64, at: Millis) -> SignedProposal {
        sign_proposal(self.vehicle(vehicle), call, nonce, at)
    }

    /// Endorses at each given peer and assembles the transaction using the
    /// first peer's read/write set.
    pub fn endorse(&self, signed: SignedProposal, endorsers: &[&PeerState]) -> Result<Transaction, PeerError> {
        let mut rw = None;
        let mut endorsements = Vec::new();
        for peer in endorsers {
            let (e, set) = peer.endorse(&signed)?;
            if rw.is_none() {
                rw = Some(set);
            }
            endorsements.push(e);
        }
        Ok(Transaction::from_endorsed(signed, rw.unwrap_or_default(), endorsements))
    }
}
