//! The fiber exchange: seller offerings with reserve prices, sealed bids,
//! and second-price auctions (GSP by default, VCG as the alternative).
//!
//! A round auctions a set of offerings as `slots` interchangeable items.
//! The everyday case is one slot per listed link; global control also opens
//! single-slot rounds over a whole link set when a buyer's path must be won
//! all-or-nothing.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::topology::LinkId;
use crate::units::{Money, SimTime};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct OfferingId(pub u64);

impl fmt::Display for OfferingId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "o{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RoundId(pub u64);

impl fmt::Display for RoundId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "round{}", self.0)
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ExchangeError {
    #[error("link `{0}` already has a live offering")]
    DuplicateOffering(LinkId),
    #[error("link `{0}` is not registered with the exchange")]
    UnknownLink(LinkId),
    #[error("offering {0} is not open for bidding")]
    UnknownOffering(OfferingId),
    #[error("bidder `{bidder}` already bid in round {round}")]
    DuplicateBid { bidder: String, round: RoundId },
    #[error("buyer `{0}` is not registered")]
    UnregisteredBuyer(String),
    #[error("buyer `{0}` is already registered")]
    DuplicateBuyer(String),
    #[error("no eligible bids in round")]
    EmptyRound,
    #[error("unknown round {0}")]
    UnknownRound(RoundId),
    #[error("round {0} is already closed")]
    RoundClosed(RoundId),
    #[error("offering {0} is already in an open round")]
    RoundBusy(OfferingId),
    #[error("bidder `{0}` did not participate")]
    UnknownBidder(String),
    #[error("bid amounts must be non-negative")]
    NegativeAmount,
}

/// A seller's listing of one link.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Offering {
    pub id: OfferingId,
    pub link: LinkId,
    pub seller: String,
    pub reserve: Money,
    pub listed_at: SimTime,
}

/// A sealed bid. `value` is the bidder's private valuation, carried only for
/// payoff accounting; it never influences winner selection or pricing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bid {
    pub bidder: String,
    pub offering: OfferingId,
    pub amount: Money,
    pub value: Money,
    pub submitted_at: SimTime,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mechanism {
    Gsp,
    Vcg,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WinnerEntry {
    pub bidder: String,
    pub payment: Money,
    pub bid: Money,
    pub value: Money,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuctionOutcome {
    pub round: RoundId,
    pub offerings: Vec<OfferingId>,
    pub mechanism: Mechanism,
    pub winners: Vec<WinnerEntry>,
    /// The marginal bid that set prices: highest losing eligible bid, or the
    /// reserve when every eligible bidder won.
    pub clearing_bid: Money,
    pub losers: Vec<String>,
}

impl AuctionOutcome {
    pub fn winner(&self, bidder: &str) -> Option<&WinnerEntry> {
        self.winners.iter().find(|w| w.bidder == bidder)
    }

    /// Winner's payoff is value minus payment; losers get zero.
    pub fn payoff(&self, bidder: &str) -> Result<Money, ExchangeError> {
        if let Some(w) = self.winner(bidder) {
            return Ok(w.value - w.payment);
        }
        if self.losers.iter().any(|l| l == bidder) {
            return Ok(Money::ZERO);
        }
        Err(ExchangeError::UnknownBidder(bidder.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BidReceipt {
    pub round: RoundId,
    pub bidder: String,
    pub accepted_at: SimTime,
}

#[derive(Debug, Clone)]
struct Round {
    offerings: Vec<OfferingId>,
    slots: u32,
    reserve: Money,
    bids: Vec<Bid>,
    outcome: Option<AuctionOutcome>,
}

#[derive(Debug, Clone, Default)]
pub struct Exchange {
    known_links: BTreeSet<LinkId>,
    offerings: BTreeMap<OfferingId, Offering>,
    live_by_link: BTreeMap<LinkId, OfferingId>,
    buyers: BTreeSet<String>,
    rounds: BTreeMap<RoundId, Round>,
    open_by_offering: BTreeMap<OfferingId, RoundId>,
    next_offering: u64,
    next_round: u64,
}

impl Exchange {
    pub fn new() -> Self {
        Self::default()
    }

    /// Make a link biddable. Sellers' registrations feed this before any
    /// offering can reference the link.
    pub fn register_link(&mut self, link: LinkId) {
        self.known_links.insert(link);
    }

    pub fn register_buyer(&mut self, name: &str) -> Result<(), ExchangeError> {
        if !self.buyers.insert(name.to_string()) {
            return Err(ExchangeError::DuplicateBuyer(name.to_string()));
        }
        Ok(())
    }

    pub fn is_registered_buyer(&self, name: &str) -> bool {
        self.buyers.contains(name)
    }

    /// List a link for auction. Re-registering identically is idempotent and
    /// returns the existing offering.
    pub fn register_offering(
        &mut self,
        seller: &str,
        link: LinkId,
        reserve: Money,
        listed_at: SimTime,
    ) -> Result<OfferingId, ExchangeError> {
        if !self.known_links.contains(&link) {
            return Err(ExchangeError::UnknownLink(link));
        }
        if let Some(existing) = self.live_by_link.get(&link) {
            let offering = &self.offerings[existing];
            if offering.seller == seller && offering.reserve == reserve {
                return Ok(*existing);
            }
            return Err(ExchangeError::DuplicateOffering(link));
        }
        let id = OfferingId(self.next_offering);
        self.next_offering += 1;
        self.offerings.insert(
            id,
            Offering { id, link: link.clone(), seller: seller.to_string(), reserve, listed_at },
        );
        self.live_by_link.insert(link, id);
        Ok(id)
    }

    pub fn offering(&self, id: OfferingId) -> Option<&Offering> {
        self.offerings.get(&id)
    }

    pub fn offering_for_link(&self, link: &LinkId) -> Option<&Offering> {
        self.live_by_link.get(link).and_then(|id| self.offerings.get(id))
    }

    /// Live listings, the advertised set `L`.
    pub fn live_offerings(&self) -> impl Iterator<Item = &Offering> {
        self.live_by_link.values().map(|id| &self.offerings[id])
    }

    /// Open a sealed-bid round over an offering set with `slots`
    /// interchangeable wins. With one slot per offering the reserve is the
    /// highest member reserve; a single slot bundling several offerings
    /// reserves their sum, since the winner takes every link.
    pub fn open_round(
        &mut self,
        offerings: &[OfferingId],
        slots: u32,
    ) -> Result<RoundId, ExchangeError> {
        assert!(slots >= 1, "a round needs at least one slot");
        assert!(!offerings.is_empty(), "a round needs at least one offering");
        for id in offerings {
            if !self.offerings.contains_key(id) {
                return Err(ExchangeError::UnknownOffering(*id));
            }
            if self.open_by_offering.contains_key(id) {
                return Err(ExchangeError::RoundBusy(*id));
            }
        }
        let reserves = offerings.iter().map(|id| self.offerings[id].reserve);
        let reserve = if (slots as usize) >= offerings.len() {
            reserves.max().unwrap_or(Money::ZERO)
        } else {
            reserves.sum()
        };
        let id = RoundId(self.next_round);
        self.next_round += 1;
        self.rounds.insert(
            id,
            Round { offerings: offerings.to_vec(), slots, reserve, bids: Vec::new(), outcome: None },
        );
        for o in offerings {
            self.open_by_offering.insert(*o, id);
        }
        Ok(id)
    }

    /// Accept a sealed bid into the open round covering its offering.
    pub fn submit_bid(&mut self, bid: Bid) -> Result<BidReceipt, ExchangeError> {
        if bid.amount.is_negative() {
            return Err(ExchangeError::NegativeAmount);
        }
        if !self.buyers.contains(&bid.bidder) {
            return Err(ExchangeError::UnregisteredBuyer(bid.bidder));
        }
        let round_id = *self
            .open_by_offering
            .get(&bid.offering)
            .ok_or(ExchangeError::UnknownOffering(bid.offering))?;
        let round = self.rounds.get_mut(&round_id).expect("open round exists");
        if round.bids.iter().any(|b| b.bidder == bid.bidder) {
            return Err(ExchangeError::DuplicateBid { bidder: bid.bidder, round: round_id });
        }
        let receipt =
            BidReceipt { round: round_id, bidder: bid.bidder.clone(), accepted_at: bid.submitted_at };
        round.bids.push(bid);
        Ok(receipt)
    }

    pub fn round_reserve(&self, round: RoundId) -> Option<Money> {
        self.rounds.get(&round).map(|r| r.reserve)
    }

    /// Close a round and determine winners and payments. The outcome is
    /// immutable; re-running a closed round is an error.
    pub fn run_auction(
        &mut self,
        round_id: RoundId,
        mechanism: Mechanism,
    ) -> Result<AuctionOutcome, ExchangeError> {
        let round = self.rounds.get_mut(&round_id).ok_or(ExchangeError::UnknownRound(round_id))?;
        if round.outcome.is_some() {
            return Err(ExchangeError::RoundClosed(round_id));
        }
        let result = match mechanism {
            Mechanism::Gsp => gsp_outcome(round.slots, round.reserve, &round.bids),
            Mechanism::Vcg => vcg_outcome(round.slots, round.reserve, &round.bids),
        };
        // The round closes whether or not anyone was eligible.
        for o in round.offerings.clone() {
            self.open_by_offering.remove(&o);
        }
        let (winners, clearing_bid, losers) = result?;
        let outcome = AuctionOutcome {
            round: round_id,
            offerings: round.offerings.clone(),
            mechanism,
            winners,
            clearing_bid,
            losers,
        };
        round.outcome = Some(outcome.clone());
        Ok(outcome)
    }

    pub fn outcome(&self, round: RoundId) -> Option<&AuctionOutcome> {
        self.rounds.get(&round).and_then(|r| r.outcome.as_ref())
    }
}

type MechanismResult = Result<(Vec<WinnerEntry>, Money, Vec<String>), ExchangeError>;

/// Rank bids at or above the reserve, best first. Ties go to the earlier
/// submission, then the lexicographically smaller bidder name.
fn rank_eligible(reserve: Money, bids: &[Bid]) -> Vec<&Bid> {
    let mut eligible: Vec<&Bid> = bids.iter().filter(|b| b.amount >= reserve).collect();
    eligible.sort_by(|a, b| {
        b.amount
            .cmp(&a.amount)
            .then(a.submitted_at.cmp(&b.submitted_at))
            .then(a.bidder.cmp(&b.bidder))
    });
    eligible
}

/// Generalized second price over `slots` interchangeable items: ranked
/// winners each pay the next-ranked bid, the last pays the highest losing
/// bid or the reserve when nobody lost.
pub fn gsp_outcome(slots: u32, reserve: Money, bids: &[Bid]) -> MechanismResult {
    let eligible = rank_eligible(reserve, bids);
    if eligible.is_empty() {
        return Err(ExchangeError::EmptyRound);
    }
    let winner_count = eligible.len().min(slots as usize);
    let winners = eligible[..winner_count]
        .iter()
        .enumerate()
        .map(|(rank, bid)| WinnerEntry {
            bidder: bid.bidder.clone(),
            payment: eligible.get(rank + 1).map(|next| next.amount).unwrap_or(reserve),
            bid: bid.amount,
            value: bid.value,
        })
        .collect();
    let clearing_bid = eligible.get(winner_count).map(|b| b.amount).unwrap_or(reserve);
    let losers = eligible[winner_count..].iter().map(|b| b.bidder.clone()).collect();
    Ok((winners, clearing_bid, losers))
}

/// Vickrey-Clarke-Groves over `slots` identical items with unit demand:
/// every winner pays the externality it imposes, the first displaced bid if
/// one exists and the reserve otherwise.
pub fn vcg_outcome(slots: u32, reserve: Money, bids: &[Bid]) -> MechanismResult {
    let eligible = rank_eligible(reserve, bids);
    if eligible.is_empty() {
        return Err(ExchangeError::EmptyRound);
    }
    let winner_count = eligible.len().min(slots as usize);
    let price = eligible.get(slots as usize).map(|b| b.amount).unwrap_or(reserve);
    let winners = eligible[..winner_count]
        .iter()
        .map(|bid| WinnerEntry {
            bidder: bid.bidder.clone(),
            payment: price,
            bid: bid.amount,
            value: bid.value,
        })
        .collect();
    let losers = eligible[winner_count..].iter().map(|b| b.bidder.clone()).collect();
    Ok((winners, price, losers))
}
