use std::any::Any;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::str::FromStr;
use std::time::Duration;

use bytes::Bytes;
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use super::graph::RouteState;
use crate::codec;
use crate::contracts::{ContractCall, GeoPoint, IncidentKind, IncidentReport, QueryTarget, VehicleRecord, ZoneId};
use crate::identity::Identity;
use crate::ledger::{Endorsement, Hash, ReadWriteSet, SignedProposal, Transaction, TransactionId, TxValidity};
use crate::message::{EndorseFailure, Event, Message, Notification};
use crate::netsim::{Context, NodeAddress, NodeKind, Process};
use crate::ordering::Envelope;
use crate::peer::sign_proposal;

const ENDORSE: u64 = 1 << 56;
const COLLECT: u64 = 2 << 56;
const SUBMIT: u64 = 3 << 56;
const COMMIT: u64 = 4 << 56;
const RETRY: u64 = 5 << 56;
const REGISTER: u64 = 6 << 56;
const SCRIPT: u64 = 7 << 56;
const KIND_MASK: u64 = 0xff << 56;

/// Where an unrouted vehicle claims to be.
pub const DEFAULT_GPS: GeoPoint = GeoPoint { lat: 35.68, lon: 139.76 };

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SubmitMode {
    /// Propose to the home peer only.
    Single,
    /// Propose to every peer.
    Multiple,
}

impl SubmitMode {
    pub fn as_str(self) -> &'static str {
        match self {
            SubmitMode::Single => "single",
            SubmitMode::Multiple => "multiple",
        }
    }
}

impl std::fmt::Display for SubmitMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SubmitMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "single" => Ok(SubmitMode::Single),
            "multiple" => Ok(SubmitMode::Multiple),
            other => Err(format!("unknown mode {other:?} (expected single or multiple)")),
        }
    }
}

/// Fractions of vehicle updates and incident reports in a plan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContractMix {
    pub update: f64,
    pub report: f64,
}

impl ContractMix {
    pub const UPDATES: ContractMix = ContractMix { update: 1.0, report: 0.0 };
    pub const REPORTS: ContractMix = ContractMix { update: 0.0, report: 1.0 };
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestPlan {
    pub payload_kib: u32,
    pub count: u64,
    pub mode: SubmitMode,
    pub contract_mix: ContractMix,
    /// Zone written by reports from each pipeline slot, round-robin.
    /// Empty means the vehicle's own zone.
    #[serde(default)]
    pub report_zones: Vec<ZoneId>,
}

impl RequestPlan {
    pub fn new(payload_kib: u32, count: u64, mode: SubmitMode, contract_mix: ContractMix) -> Self {
        RequestPlan { payload_kib, count, mode, contract_mix, report_zones: Vec::new() }
    }

    pub fn validate(&self) -> Result<(), String> {
        let ContractMix { update, report } = self.contract_mix;
        if self.count == 0 {
            return Err("request count must be positive".into());
        }
        if self.payload_kib == 0 {
            return Err("payload size must be positive".into());
        }
        if update < 0.0 || report < 0.0 || ((update + report) - 1.0).abs() > 1e-9 {
            return Err(format!("contract mix {update}/{report} must be non-negative and sum to 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ScriptedAction {
    Call(ContractCall),
    Query(QueryTarget),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Workload {
    Idle,
    Plan(RequestPlan),
    /// Actions fired at fixed times (ms after start), proposed to the home
    /// peer only.
    Script(Vec<(u64, ScriptedAction)>),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleTimeouts {
    pub endorse_ms: u64,
    /// Extra wait for further endorsements once the policy is met.
    pub collect_grace_ms: u64,
    pub submit_ms: u64,
    pub commit_ms: u64,
    pub backoff_ms: u64,
    pub register_ms: u64,
}

impl Default for VehicleTimeouts {
    fn default() -> Self {
        VehicleTimeouts {
            endorse_ms: 2000,
            collect_grace_ms: 5,
            submit_ms: 1000,
            commit_ms: 3000,
            backoff_ms: 50,
            register_ms: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleConfig {
    pub index: u32,
    pub company: String,
    pub zone: ZoneId,
    pub home_peer: u32,
    pub peers: u32,
    pub orderers: u32,
    /// Endorsements required by the network's policy.
    pub required_endorsements: usize,
    /// In-flight requests per targeted peer.
    pub window: usize,
    pub max_attempts: u32,
    /// Commit-status polls before giving up.
    pub max_polls: u32,
    pub timeouts: VehicleTimeouts,
}

impl VehicleConfig {
    pub fn new(
        index: u32,
        company: impl Into<String>,
        zone: ZoneId,
        home_peer: u32,
        peers: u32,
        orderers: u32,
    ) -> Self {
        VehicleConfig {
            index,
            company: company.into(),
            zone,
            home_peer,
            peers,
            orderers,
            required_endorsements: 1,
            window: 1,
            max_attempts: 5,
            max_polls: 10,
            timeouts: VehicleTimeouts::default(),
        }
    }
}

#[derive(Debug)]
enum Phase {
    Endorsing {
        targets: Vec<u32>,
        answered: BTreeSet<u32>,
        rw: Option<ReadWriteSet>,
        endorsements: Vec<Endorsement>,
        refusal: Option<String>,
        grace: bool,
        tries: u32,
    },
    Submitting {
        envelope: Envelope,
        orderer: u32,
    },
    Committing {
        envelope: Envelope,
    },
    /// Waiting out a backoff before proposing again.
    Backoff,
}

#[derive(Debug)]
struct InFlight {
    slot: usize,
    call: ContractCall,
    mode: SubmitMode,
    attempt: u32,
    signed: Option<SignedProposal>,
    txid: Option<TransactionId>,
    gen: u64,
    phase: Phase,
    polls: u32,
    resubmits: u32,
}

/// A virtual vehicle: registers with its home peer, runs its workload
/// through endorse/order/commit, and reacts to incident notifications.
pub struct VehicleNode {
    identity: Identity,
    config: VehicleConfig,
    workload: Workload,
    route: Option<RouteState>,
    registered: bool,
    started: bool,
    next_request: u64,
    nonce: u64,
    gen: u64,
    inflight: BTreeMap<u64, InFlight>,
    by_txid: HashMap<TransactionId, u64>,
    leader_hint: Option<u32>,
    /// Peer proposals go to in single mode; moves on after a timeout.
    endorser: u32,
    seen: BTreeSet<TransactionId>,
    inbox: Vec<Notification>,
    completed: u64,
    failed: u64,
    queries: u64,
}

type Ctx<'a> = Context<'a, Message, Event>;

impl VehicleNode {
    pub fn new(identity: Identity, config: VehicleConfig, workload: Workload) -> Self {
        VehicleNode {
            identity,
            workload,
            route: None,
            registered: false,
            started: false,
            next_request: 0,
            nonce: 0,
            gen: 0,
            inflight: BTreeMap::new(),
            by_txid: HashMap::new(),
            leader_hint: None,
            endorser: config.home_peer,
            seen: BTreeSet::new(),
            inbox: Vec::new(),
            completed: 0,
            failed: 0,
            queries: 0,
            config,
        }
    }

    pub fn with_route(mut self, route: RouteState) -> Self {
        self.route = Some(route);
        self
    }

    pub fn identity(&self) -> &Identity {
        &self.identity
    }

    pub fn config(&self) -> &VehicleConfig {
        &self.config
    }

    pub fn route(&self) -> Option<&RouteState> {
        self.route.as_ref()
    }

    pub fn inbox(&self) -> &[Notification] {
        &self.inbox
    }

    pub fn completed(&self) -> u64 {
        self.completed
    }

    pub fn failed(&self) -> u64 {
        self.failed
    }

    pub fn in_flight(&self) -> usize {
        self.inflight.len()
    }

    pub fn is_registered(&self) -> bool {
        self.registered
    }

    /// True once a planned workload has fully resolved.
    pub fn is_done(&self) -> bool {
        match &self.workload {
            Workload::Idle => true,
            Workload::Plan(p) => self.completed + self.failed >= p.count,
            Workload::Script(s) => {
                let calls = s.iter().filter(|(_, a)| matches!(a, ScriptedAction::Call(_))).count() as u64;
                self.completed + self.failed >= calls
            }
        }
    }

    fn gps(&self) -> GeoPoint {
        self.route.as_ref().map_or(DEFAULT_GPS, |r| r.graph.position(r.position))
    }

    fn peer_addr(i: u32) -> NodeAddress {
        NodeAddress::peer(i)
    }

    fn slots(&self, mode: SubmitMode) -> usize {
        let per_peer = self.config.window.max(1);
        match mode {
            SubmitMode::Single => per_peer,
            SubmitMode::Multiple => per_peer * self.config.peers as usize,
        }
    }

    fn fresh_gen(&mut self) -> u64 {
        self.gen = (self.gen + 1) & !KIND_MASK;
        self.gen
    }

    fn start_workload(&mut self, ctx: &mut Ctx<'_>) {
        if self.started {
            return;
        }
        self.started = true;
        match &self.workload {
            Workload::Idle => {}
            Workload::Plan(plan) => {
                let (count, slots) = (plan.count, self.slots(plan.mode));
                for slot in 0..slots.min(count as usize) {
                    self.issue_planned(ctx, slot);
                }
            }
            Workload::Script(actions) => {
                let now = ctx.now().as_millis();
                for (i, (at, _)) in actions.iter().enumerate() {
                    ctx.set_timer(Duration::from_millis(at.saturating_sub(now)), SCRIPT | i as u64);
                }
            }
        }
    }

    fn make_payload(&self, ctx: &mut Ctx<'_>, request: u64, kib: u32) -> Bytes {
        let len = kib as usize * 1024;
        let mut buf = codec::encode(&(self.config.index, request, ctx.now().as_millis()));
        buf.truncate(len);
        let header = buf.len();
        buf.resize(len, 0);
        ctx.rng().fill_bytes(&mut buf[header..]);
        buf.into()
    }

    fn issue_planned(&mut self, ctx: &mut Ctx<'_>, slot: usize) {
        let Workload::Plan(plan) = &self.workload else { return };
        if self.next_request >= plan.count {
            return;
        }
        let plan = plan.clone();
        let request = self.next_request;
        self.next_request += 1;
        let payload = self.make_payload(ctx, request, plan.payload_kib);
        let pseudonym = self.identity.pseudonym();
        let is_report = plan.contract_mix.update < 1.0 && ctx.rng().gen::<f64>() >= plan.contract_mix.update;
        let call = if is_report {
            let zone = if plan.report_zones.is_empty() {
                self.config.zone.clone()
            } else {
                plan.report_zones[slot % plan.report_zones.len()].clone()
            };
            let report = IncidentReport {
                reporter: pseudonym,
                gps: self.gps(),
                kind: IncidentKind::Accident,
                image_hash: Hash::digest(&payload),
                zone,
                reported_at: ctx.now().as_millis(),
            };
            ContractCall::report_incident(&report, payload)
        } else {
            let record = VehicleRecord {
                pseudonym,
                owners: vec![pseudonym],
                inspection_history: Vec::new(),
                gps: self.gps(),
                connected_edge: format!("peer-{}", self.config.home_peer),
                insurance_ref: format!("{}-{}", self.config.company, self.config.index),
            };
            ContractCall::update_vehicle(&record, payload)
        };
        self.begin(ctx, request, slot, call, plan.mode);
    }

    fn begin(&mut self, ctx: &mut Ctx<'_>, request: u64, slot: usize, call: ContractCall, mode: SubmitMode) {
        ctx.emit(Event::RequestStarted { request });
        let f = InFlight {
            slot,
            call,
            mode,
            attempt: 0,
            signed: None,
            txid: None,
            gen: 0,
            phase: Phase::Backoff,
            polls: 0,
            resubmits: 0,
        };
        self.inflight.insert(request, f);
        self.propose(ctx, request);
    }

    fn propose(&mut self, ctx: &mut Ctx<'_>, request: u64) {
        self.nonce += 1;
        let gen = self.fresh_gen();
        let nonce = self.nonce;
        let now = ctx.now().as_millis();
        let endorser = self.endorser;
        let all: Vec<u32> = (0..self.config.peers).collect();
        let Some(f) = self.inflight.get_mut(&request) else { return };
        f.attempt += 1;
        f.polls = 0;
        f.resubmits = 0;
        let signed = sign_proposal(&self.identity, f.call.clone(), nonce, now);
        let txid = signed.proposal.id();
        if let Some(old) = f.txid.replace(txid) {
            self.by_txid.remove(&old);
        }
        self.by_txid.insert(txid, request);
        let targets = match f.mode {
            SubmitMode::Single => vec![endorser],
            SubmitMode::Multiple => all,
        };
        let addrs: Vec<_> = targets.iter().map(|&p| Self::peer_addr(p)).collect();
        ctx.multicast(&addrs, Message::Proposal(signed.clone()));
        ctx.emit(Event::Proposed { request, txid, attempt: f.attempt });
        f.signed = Some(signed);
        f.gen = gen;
        f.phase = Phase::Endorsing {
            targets,
            answered: BTreeSet::new(),
            rw: None,
            endorsements: Vec::new(),
            refusal: None,
            grace: false,
            tries: 1,
        };
        ctx.set_timer(Duration::from_millis(self.config.timeouts.endorse_ms), ENDORSE | gen);
    }

    fn on_response(
        &mut self,
        ctx: &mut Ctx<'_>,
        from: NodeAddress,
        txid: TransactionId,
        outcome: Result<(Endorsement, ReadWriteSet), EndorseFailure>,
    ) {
        let Some(&request) = self.by_txid.get(&txid) else { return };
        let required = self.config.required_endorsements;
        let grace_ms = self.config.timeouts.collect_grace_ms;
        let (ready, exhausted) = {
            let Some(f) = self.inflight.get_mut(&request) else { return };
            let Phase::Endorsing { targets, answered, rw, endorsements, refusal, grace, .. } = &mut f.phase else {
                return;
            };
            if !answered.insert(from.index) {
                return;
            }
            match outcome {
                Ok((e, set)) => match rw {
                    None => {
                        *rw = Some(set);
                        endorsements.push(e);
                    }
                    // Peers at a different height simulate different reads;
                    // only matching endorsements can go in one envelope.
                    Some(first) if *first == set => endorsements.push(e),
                    Some(_) => {}
                },
                Err(EndorseFailure::AuthFailure(m) | EndorseFailure::EndorseRefused(m)) => *refusal = Some(m),
            }
            let all_in = targets.iter().all(|t| answered.contains(t));
            let enough = endorsements.len() >= required;
            if enough && !all_in && !*grace {
                *grace = true;
                ctx.set_timer(Duration::from_millis(grace_ms), COLLECT | f.gen);
            }
            (enough && all_in, all_in && !enough)
        };
        if ready {
            self.submit(ctx, request);
        } else if exhausted {
            let reason = match &self.inflight[&request].phase {
                Phase::Endorsing { refusal: Some(m), .. } => format!("EndorseRefused: {m}"),
                _ => "EndorseRefused: no matching endorsements".to_string(),
            };
            self.fail(ctx, request, reason);
        }
    }

    fn submit(&mut self, ctx: &mut Ctx<'_>, request: u64) {
        let gen = self.fresh_gen();
        let orderer = self.leader_hint.unwrap_or(request as u32 % self.config.orderers.max(1));
        let Some(f) = self.inflight.get_mut(&request) else { return };
        let Phase::Endorsing { rw, endorsements, .. } = std::mem::replace(&mut f.phase, Phase::Backoff) else {
            return;
        };
        let signed = f.signed.clone().expect("proposed");
        let tx = Transaction::from_endorsed(signed, rw.expect("policy met"), endorsements);
        let envelope = Envelope::new(tx, ctx.now().as_millis());
        ctx.send(NodeAddress::orderer(orderer), Message::SubmitEnvelope(envelope.clone()));
        f.phase = Phase::Submitting { envelope, orderer };
        f.gen = gen;
        ctx.set_timer(Duration::from_millis(self.config.timeouts.submit_ms), SUBMIT | gen);
    }

    fn resend_envelope(&mut self, ctx: &mut Ctx<'_>, request: u64, orderer: u32) {
        let gen = self.fresh_gen();
        let Some(f) = self.inflight.get_mut(&request) else { return };
        let envelope = match std::mem::replace(&mut f.phase, Phase::Backoff) {
            Phase::Submitting { envelope, .. } | Phase::Committing { envelope } => envelope,
            other => {
                f.phase = other;
                return;
            }
        };
        f.resubmits += 1;
        ctx.send(NodeAddress::orderer(orderer), Message::SubmitEnvelope(envelope.clone()));
        f.phase = Phase::Submitting { envelope, orderer };
        f.gen = gen;
        ctx.set_timer(Duration::from_millis(self.config.timeouts.submit_ms), SUBMIT | gen);
    }

    fn on_ack(&mut self, ctx: &mut Ctx<'_>, from: NodeAddress, txid: TransactionId) {
        let Some(&request) = self.by_txid.get(&txid) else { return };
        let gen = self.fresh_gen();
        let Some(f) = self.inflight.get_mut(&request) else { return };
        let Phase::Submitting { .. } = f.phase else { return };
        let Phase::Submitting { envelope, orderer } = std::mem::replace(&mut f.phase, Phase::Backoff) else {
            unreachable!()
        };
        self.leader_hint = Some(from.index);
        ctx.emit(Event::Submitted { request, txid, endorsements: envelope.transaction.endorsements.len(), orderer });
        f.phase = Phase::Committing { envelope };
        f.gen = gen;
        ctx.set_timer(Duration::from_millis(self.config.timeouts.commit_ms), COMMIT | gen);
    }

    fn on_redirect(&mut self, ctx: &mut Ctx<'_>, from: NodeAddress, txid: TransactionId, leader: Option<u32>) {
        let Some(&request) = self.by_txid.get(&txid) else { return };
        let Some(f) = self.inflight.get(&request) else { return };
        if !matches!(f.phase, Phase::Submitting { .. }) {
            return;
        }
        match leader {
            Some(l) if l != from.index && f.resubmits < 2 * self.config.orderers => {
                self.leader_hint = Some(l);
                self.resend_envelope(ctx, request, l);
            }
            _ => {
                // No leader known yet; try again shortly.
                self.leader_hint = None;
                let gen = self.fresh_gen();
                let f = self.inflight.get_mut(&request).expect("present");
                f.resubmits = 0;
                f.gen = gen;
                if let Phase::Submitting { orderer, .. } = &mut f.phase {
                    *orderer = (from.index + 1) % self.config.orderers;
                }
                ctx.set_timer(Duration::from_millis(self.config.timeouts.backoff_ms), RETRY | gen);
            }
        }
    }

    fn on_outcome(&mut self, ctx: &mut Ctx<'_>, txid: TransactionId, block: u64, validity: TxValidity) {
        let Some(&request) = self.by_txid.get(&txid) else { return };
        ctx.emit(Event::TxOutcome { request, txid, block, validity });
        self.by_txid.remove(&txid);
        match validity {
            TxValidity::Valid => {
                let f = self.inflight.remove(&request).expect("tracked");
                self.completed += 1;
                ctx.emit(Event::RequestCompleted { request, txid, block });
                self.issue_planned(ctx, f.slot);
            }
            TxValidity::ConflictInvalid if self.inflight[&request].attempt < self.config.max_attempts => {
                let gen = self.fresh_gen();
                let f = self.inflight.get_mut(&request).expect("tracked");
                f.phase = Phase::Backoff;
                f.gen = gen;
                let jitter = ctx.rng().gen_range(0..=self.config.timeouts.backoff_ms);
                ctx.set_timer(Duration::from_millis(jitter), RETRY | gen);
            }
            other => self.fail(ctx, request, format!("{other:?}")),
        }
    }

    fn fail(&mut self, ctx: &mut Ctx<'_>, request: u64, reason: String) {
        let Some(f) = self.inflight.remove(&request) else { return };
        if let Some(t) = f.txid {
            self.by_txid.remove(&t);
        }
        self.failed += 1;
        log::debug!("{}: request {request} failed: {reason}", ctx.me());
        ctx.emit(Event::RequestFailed { request, reason });
        self.issue_planned(ctx, f.slot);
    }

    fn on_notification(&mut self, ctx: &mut Ctx<'_>, from: NodeAddress, note: Notification) {
        ctx.emit(Event::NotificationReceived { txid: note.txid, peer: from.index });
        self.on_outcome(ctx, note.txid, note.block_number, TxValidity::Valid);
        if !self.seen.insert(note.txid) {
            return;
        }
        ctx.emit(Event::Notified {
            txid: note.txid,
            zone: note.zone.clone(),
            kind: note.kind,
            block: note.block_number,
            peer: from.index,
        });
        if let Some(route) = self.route.as_mut() {
            if let Some(r) = route.on_incident(note.gps) {
                ctx.emit(Event::Rerouted {
                    txid: note.txid,
                    edge: r.edge,
                    old_route: r.old_route,
                    new_route: r.new_route,
                });
            }
        }
        self.inbox.push(note);
    }

    fn on_timeout(&mut self, ctx: &mut Ctx<'_>, kind: u64, gen: u64) {
        let Some((&request, _)) = self.inflight.iter().find(|(_, f)| f.gen == gen) else { return };
        let peers = self.config.peers;
        match kind {
            ENDORSE => {
                let required = self.config.required_endorsements;
                let f = self.inflight.get_mut(&request).expect("found");
                let Phase::Endorsing { targets, answered, endorsements, tries, .. } = &mut f.phase else { return };
                if endorsements.len() >= required {
                    self.submit(ctx, request);
                    return;
                }
                if *tries >= peers {
                    self.fail(ctx, request, "EndorsementTimeout".into());
                    return;
                }
                *tries += 1;
                if f.mode == SubmitMode::Single {
                    // Fail over to the next peer and stay there.
                    self.endorser = (self.endorser + 1) % peers;
                    *targets = vec![self.endorser];
                    answered.clear();
                    // Commit events come from whichever peer we are registered with.
                    ctx.send(Self::peer_addr(self.endorser), Message::Register(self.identity.certificate.clone()));
                }
                let pending: Vec<_> =
                    targets.iter().filter(|t| !answered.contains(t)).map(|&t| Self::peer_addr(t)).collect();
                let signed = f.signed.clone().expect("proposed");
                ctx.multicast(&pending, Message::Proposal(signed));
                ctx.set_timer(Duration::from_millis(self.config.timeouts.endorse_ms), ENDORSE | gen);
            }
            COLLECT => self.submit(ctx, request),
            SUBMIT => {
                let f = &self.inflight[&request];
                if f.resubmits >= 4 * self.config.orderers {
                    self.fail(ctx, request, "CommitTimeout: ordering service unreachable".into());
                    return;
                }
                let Phase::Submitting { orderer, .. } = f.phase else { return };
                self.leader_hint = None;
                self.resend_envelope(ctx, request, (orderer + 1) % self.config.orderers);
            }
            COMMIT => {
                let f = self.inflight.get_mut(&request).expect("found");
                f.polls += 1;
                if f.polls > self.config.max_polls {
                    self.fail(ctx, request, "CommitTimeout".into());
                    return;
                }
                let txid = f.txid.expect("proposed");
                // Any peer can confirm; the home peer may be the one that is down.
                let targets: Vec<_> = (0..peers).map(Self::peer_addr).collect();
                ctx.multicast(&targets, Message::TxStatusQuery { txid });
                if f.polls >= 2 {
                    // The ack may have come from a leader that lost the
                    // entry; the leader dedups by txid, so resubmitting is safe.
                    let orderer = self.leader_hint.unwrap_or(request as u32 % self.config.orderers);
                    let polls = f.polls;
                    self.resend_envelope(ctx, request, orderer);
                    if let Some(f) = self.inflight.get_mut(&request) {
                        f.polls = polls;
                    }
                } else {
                    ctx.set_timer(Duration::from_millis(self.config.timeouts.commit_ms), COMMIT | gen);
                }
            }
            RETRY => match self.inflight[&request].phase {
                Phase::Backoff => self.propose(ctx, request),
                Phase::Submitting { orderer, .. } => self.resend_envelope(ctx, request, orderer),
                _ => {}
            },
            _ => {}
        }
    }

    fn run_script(&mut self, ctx: &mut Ctx<'_>, index: usize) {
        let Workload::Script(actions) = &self.workload else { return };
        let Some((_, action)) = actions.get(index).cloned() else { return };
        match action {
            ScriptedAction::Call(call) => {
                let request = self.next_request;
                self.next_request += 1;
                self.begin(ctx, request, index, call, SubmitMode::Single);
            }
            ScriptedAction::Query(target) => {
                self.queries += 1;
                let request = u64::MAX - self.queries;
                ctx.send(Self::peer_addr(self.config.home_peer), Message::Query { request, target });
            }
        }
    }
}

impl Process<Message, Event> for VehicleNode {
    fn on_start(&mut self, ctx: &mut Context<'_, Message, Event>) {
        ctx.send(Self::peer_addr(self.config.home_peer), Message::Register(self.identity.certificate.clone()));
        ctx.set_timer(Duration::from_millis(self.config.timeouts.register_ms), REGISTER);
    }

    fn on_message(&mut self, ctx: &mut Context<'_, Message, Event>, from: NodeAddress, msg: Message) {
        match (from.kind, msg) {
            (NodeKind::Peer, Message::Registered { ok }) => {
                if ok && from.index == self.endorser {
                    self.registered = true;
                    self.start_workload(ctx);
                }
            }
            (NodeKind::Peer, Message::ProposalResponse { txid, outcome }) => self.on_response(ctx, from, txid, outcome),
            (NodeKind::Orderer, Message::SubmitAck { txid }) => self.on_ack(ctx, from, txid),
            (NodeKind::Orderer, Message::SubmitRedirect { txid, leader }) => self.on_redirect(ctx, from, txid, leader),
            (NodeKind::Peer, Message::CommitEvent { txid, block_number, validity }) => {
                self.on_outcome(ctx, txid, block_number, validity)
            }
            (NodeKind::Peer, Message::TxStatus { txid, status: Some((block, validity)) }) => {
                self.on_outcome(ctx, txid, block, validity)
            }
            (NodeKind::Peer, Message::Notification(note)) => self.on_notification(ctx, from, note),
            (NodeKind::Peer, Message::QueryResponse { request, result }) => {
                ctx.emit(Event::QueryAnswered { request, empty: result.is_empty() })
            }
            _ => {}
        }
    }

    fn on_timer(&mut self, ctx: &mut Context<'_, Message, Event>, token: u64) {
        let (kind, rest) = (token & KIND_MASK, token & !KIND_MASK);
        match kind {
            REGISTER => {
                // Registrations are volatile at the peer; refresh them.
                ctx.send(Self::peer_addr(self.endorser), Message::Register(self.identity.certificate.clone()));
                ctx.set_timer(Duration::from_millis(self.config.timeouts.register_ms), REGISTER);
            }
            SCRIPT => self.run_script(ctx, rest as usize),
            _ => self.on_timeout(ctx, kind, rest),
        }
    }

    fn as_any(&self) -> &dyn Any {
        self
    }
}
