//! HTLC lifecycle along attack paths: create, withhold, fail at expiry.
//!
//! A path lock creates one HTLC per channel. Hop `i` (counted from the
//! sender) carries `amount - i * fee` and expires at
//! `expiry + (L - 1 - i) * cltv_delta`, so the final hop expires at the
//! path-level expiry and upstream hops later. When an HTLC fails, every
//! upstream HTLC of the same payment fails with it.

use std::collections::BTreeMap;
use std::io::Write;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::graph::{NodeId, PcnGraph, Sat};

/// CLTV deltas used by the common Lightning implementations.
pub const CLTV_DELTAS: [u64; 3] = [14, 40, 144];

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct HtlcId(pub u64);

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct PaymentId(pub u64);

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Preimage(pub [u8; 32]);

/// SHA-256 digest of a preimage.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Commitment(pub [u8; 32]);

impl Commitment {
    pub fn of(preimage: &Preimage) -> Commitment {
        Commitment(Sha256::digest(preimage.0).into())
    }

    pub fn verifies(&self, preimage: &Preimage) -> bool {
        Commitment::of(preimage) == *self
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum HtlcState {
    Pending,
    Failed,
    Fulfilled,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Htlc {
    pub id: HtlcId,
    pub payment: PaymentId,
    pub hop: usize,
    pub from: NodeId,
    pub to: NodeId,
    pub amount: Sat,
    pub commitment: Commitment,
    pub expiry: u64,
    pub state: HtlcState,
}

#[derive(Copy, Clone, Debug, Default, PartialEq, Eq)]
pub struct FeePolicy {
    pub flat_fee_per_hop: Sat,
}

impl FeePolicy {
    pub fn none() -> Self {
        FeePolicy { flat_fee_per_hop: 0 }
    }

    pub fn flat(fee: Sat) -> Self {
        FeePolicy { flat_fee_per_hop: fee }
    }

    /// Amount carried on hop `i`, or `None` when fees eat the whole payment.
    pub fn hop_amount(&self, amount: Sat, hop: usize) -> Option<Sat> {
        let fee = self.flat_fee_per_hop.checked_mul(hop as Sat)?;
        amount.checked_sub(fee).filter(|&a| a > 0)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LockError {
    #[error("hop {hop}: insufficient balance (need {needed}, have {available})")]
    InsufficientBalance { hop: usize, needed: Sat, available: Sat },
    #[error("hop {hop}: HTLC slots exhausted ({limit})")]
    SlotsExhausted { hop: usize, limit: u32 },
    #[error("hop {hop}: amount {amount} below HTLC minimum {minimum}")]
    BelowDust { hop: usize, amount: Sat, minimum: Sat },
    #[error("hop {hop}: no channel {from}->{to}")]
    BrokenPath { hop: usize, from: NodeId, to: NodeId },
    #[error("hop {hop}: fees consume the payment")]
    FeesExceedAmount { hop: usize },
    #[error("path has no channels")]
    EmptyPath,
}

impl LockError {
    pub fn hop(&self) -> Option<usize> {
        match *self {
            LockError::InsufficientBalance { hop, .. }
            | LockError::SlotsExhausted { hop, .. }
            | LockError::BelowDust { hop, .. }
            | LockError::BrokenPath { hop, .. }
            | LockError::FeesExceedAmount { hop } => Some(hop),
            LockError::EmptyPath => None,
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum EventKind {
    Create,
    Fail,
    Fulfill,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HtlcEvent {
    pub block_height: u64,
    pub kind: EventKind,
    pub from: NodeId,
    pub to: NodeId,
    pub amount: Sat,
    pub htlc_id: HtlcId,
}

/// Creates and resolves HTLCs against a graph and records every transition.
#[derive(Clone, Debug)]
pub struct HtlcEngine {
    cltv_delta: u64,
    next_htlc: u64,
    next_payment: u64,
    rng: ChaCha8Rng,
    preimages: BTreeMap<PaymentId, Preimage>,
    log: Vec<HtlcEvent>,
}

impl HtlcEngine {
    pub fn new(seed: u64) -> Self {
        Self::with_cltv_delta(seed, 0)
    }

    pub fn with_cltv_delta(seed: u64, cltv_delta: u64) -> Self {
        HtlcEngine {
            cltv_delta,
            next_htlc: 0,
            next_payment: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
            preimages: BTreeMap::new(),
            log: Vec::new(),
        }
    }

    pub fn cltv_delta(&self) -> u64 {
        self.cltv_delta
    }

    pub fn events(&self) -> &[HtlcEvent] {
        &self.log
    }

    /// The preimage behind a payment's commitment, as held by the receiver.
    pub fn preimage(&self, payment: PaymentId) -> Option<&Preimage> {
        self.preimages.get(&payment)
    }

    /// Checks every hop without touching the graph.
    pub fn check_path(graph: &PcnGraph, hops: &[NodeId], amount: Sat, fees: FeePolicy) -> Result<(), LockError> {
        if hops.len() < 2 {
            return Err(LockError::EmptyPath);
        }
        for (i, w) in hops.windows(2).enumerate() {
            let (from, to) = (w[0], w[1]);
            let ch = graph
                .channel(from, to)
                .ok_or(LockError::BrokenPath { hop: i, from, to })?;
            let hop_amount = fees
                .hop_amount(amount, i)
                .ok_or(LockError::FeesExceedAmount { hop: i })?;
            if hop_amount < ch.htlc_minimum {
                return Err(LockError::BelowDust {
                    hop: i,
                    amount: hop_amount,
                    minimum: ch.htlc_minimum,
                });
            }
            let available = ch.balance_from(from);
            if available < hop_amount {
                return Err(LockError::InsufficientBalance {
                    hop: i,
                    needed: hop_amount,
                    available,
                });
            }
            if ch.pending_from(from) >= ch.max_accepted_htlcs {
                return Err(LockError::SlotsExhausted {
                    hop: i,
                    limit: ch.max_accepted_htlcs,
                });
            }
        }
        Ok(())
    }

    /// Locks `amount` along `hops`. All-or-nothing: on error the graph is
    /// untouched.
    pub fn lock_path(
        &mut self,
        graph: &mut PcnGraph,
        hops: &[NodeId],
        amount: Sat,
        expiry: u64,
        fees: FeePolicy,
    ) -> Result<Vec<Htlc>, LockError> {
        Self::check_path(graph, hops, amount, fees)?;
        let mut bytes = [0u8; 32];
        self.rng.fill_bytes(&mut bytes);
        let preimage = Preimage(bytes);
        let commitment = Commitment::of(&preimage);
        let payment = PaymentId(self.next_payment);
        self.next_payment += 1;
        self.preimages.insert(payment, preimage);

        let len = hops.len() - 1;
        let height = graph.block_height();
        let mut out = Vec::with_capacity(len);
        for (i, w) in hops.windows(2).enumerate() {
            let hop_amount = fees.hop_amount(amount, i).expect("checked above");
            graph.lock(w[0], w[1], hop_amount).expect("checked above");
            let htlc = Htlc {
                id: HtlcId(self.next_htlc),
                payment,
                hop: i,
                from: w[0],
                to: w[1],
                amount: hop_amount,
                commitment,
                expiry: expiry + (len - 1 - i) as u64 * self.cltv_delta,
                state: HtlcState::Pending,
            };
            self.next_htlc += 1;
            self.record(height, EventKind::Create, &htlc);
            out.push(htlc);
        }
        Ok(out)
    }

    /// Advances the clock to `advance_to` and fails every pending HTLC whose
    /// expiry has passed, together with the upstream HTLCs of its payment.
    /// Returns the HTLCs that failed in this call.
    pub fn withhold_and_expire(&mut self, graph: &mut PcnGraph, htlcs: &mut [Htlc], advance_to: u64) -> Vec<Htlc> {
        graph.advance_to(advance_to);
        let height = graph.block_height();
        let mut cut: BTreeMap<PaymentId, usize> = BTreeMap::new();
        for h in htlcs.iter() {
            if h.state == HtlcState::Pending && h.expiry <= height {
                let e = cut.entry(h.payment).or_insert(h.hop);
                *e = (*e).max(h.hop);
            }
        }
        let mut failed = Vec::new();
        // downstream hops first, as failures travel back toward the sender
        let mut order: Vec<usize> = (0..htlcs.len()).collect();
        order.sort_by_key(|&i| (htlcs[i].payment, std::cmp::Reverse(htlcs[i].hop)));
        for i in order {
            let h = &mut htlcs[i];
            if h.state != HtlcState::Pending {
                continue;
            }
            if cut.get(&h.payment).is_some_and(|&c| h.hop <= c) {
                graph
                    .unlock(h.from, h.to, h.amount, false)
                    .expect("pending HTLC holds its funds");
                h.state = HtlcState::Failed;
                self.record(height, EventKind::Fail, h);
                failed.push(h.clone());
            }
        }
        failed
    }

    /// Settles a payment's HTLCs when `preimage` opens the commitment.
    /// Returns false (and changes nothing) otherwise.
    pub fn fulfill(&mut self, graph: &mut PcnGraph, htlcs: &mut [Htlc], preimage: &Preimage) -> bool {
        let height = graph.block_height();
        let mut any = false;
        for h in htlcs.iter_mut() {
            if h.state == HtlcState::Pending && h.commitment.verifies(preimage) {
                graph
                    .unlock(h.from, h.to, h.amount, true)
                    .expect("pending HTLC holds its funds");
                h.state = HtlcState::Fulfilled;
                self.record(height, EventKind::Fulfill, h);
                any = true;
            }
        }
        any
    }

    /// Repeatedly locks `dust_amount` along `hops` until `count` locks are
    /// made or a hop refuses, typically because its slots are full.
    pub fn slot_saturation(
        &mut self,
        graph: &mut PcnGraph,
        hops: &[NodeId],
        count: usize,
        dust_amount: Sat,
        expiry: u64,
    ) -> Vec<Htlc> {
        let mut out = Vec::new();
        for _ in 0..count {
            match self.lock_path(graph, hops, dust_amount, expiry, FeePolicy::none()) {
                Ok(h) => out.extend(h),
                Err(_) => break,
            }
        }
        out
    }

    fn record(&mut self, block_height: u64, kind: EventKind, h: &Htlc) {
        self.log.push(HtlcEvent {
            block_height,
            kind,
            from: h.from,
            to: h.to,
            amount: h.amount,
            htlc_id: h.id,
        });
    }

    /// `block_height, event, channel, amount, htlc_id` rows.
    pub fn write_log_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["block_height", "event", "channel", "amount", "htlc_id"])?;
        for e in &self.log {
            let kind = match e.kind {
                EventKind::Create => "create",
                EventKind::Fail => "fail",
                EventKind::Fulfill => "fulfill",
            };
            w.write_record([
                e.block_height.to_string(),
                kind.to_string(),
                format!("{}-{}", e.from, e.to),
                e.amount.to_string(),
                e.htlc_id.0.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Total amount currently locked by pending HTLCs in `htlcs`.
pub fn pending_total(htlcs: &[Htlc]) -> Sat {
    htlcs
        .iter()
        .filter(|h| h.state == HtlcState::Pending)
        .map(|h| h.amount)
        .sum()
}
