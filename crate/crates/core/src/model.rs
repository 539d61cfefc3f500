//! Problem setup (decks and communication topology) and the mutable group state.
//!
//! Agents are addressed by a zero-based index `0..n`. Cards carry a one-based
//! [`CardId`] in `1..=n+1`; agent `i` holds every card except `CardId(i + 1)`,
//! and `CardId(n + 1)` is the common card held by everybody. Inside an agent's
//! deck, cards are kept in ascending id order and addressed by their position
//! `0..n`.

use std::collections::BTreeSet;
use std::fmt;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CardId(pub u32);

impl CardId {
    #[inline]
    pub(crate) fn index(self) -> usize {
        self.0 as usize - 1
    }

    #[inline]
    pub(crate) fn from_index(index: usize) -> Self {
        CardId(index as u32 + 1)
    }
}

impl fmt::Display for CardId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Position of `card` inside the deck of `agent`, or `None` when the agent does
/// not hold it.
#[inline]
pub(crate) fn deck_position(agent: usize, card_index: usize) -> Option<usize> {
    use std::cmp::Ordering::*;
    match card_index.cmp(&agent) {
        Less => Some(card_index),
        Equal => None,
        Greater => Some(card_index - 1),
    }
}

/// Card index stored at `position` of the deck of `agent`.
#[inline]
pub(crate) fn card_at(agent: usize, position: usize) -> usize {
    if position < agent {
        position
    } else {
        position + 1
    }
}

/// The `n` decks of `n` cards drawn from `n + 1` card types.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeckSet {
    n: usize,
}

impl DeckSet {
    /// Canonical construction: deck `i` is `{1, ..., n+1} \ {i}`.
    pub fn build(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidSize(format!("N must be at least 2, got {n}")));
        }
        if n >= u32::MAX as usize {
            return Err(Error::InvalidSize(format!("N = {n} is too large")));
        }
        Ok(DeckSet { n })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn common_card(&self) -> CardId {
        CardId::from_index(self.n)
    }

    /// All card ids, `1..=n+1`.
    pub fn cards(&self) -> impl Iterator<Item = CardId> {
        (0..=self.n).map(CardId::from_index)
    }

    /// Cards of agent `agent` in deck-position order.
    pub fn deck(&self, agent: usize) -> Vec<CardId> {
        assert!(agent < self.n, "agent {agent} out of range");
        (0..self.n)
            .map(|p| CardId::from_index(card_at(agent, p)))
            .collect()
    }

    pub fn contains(&self, agent: usize, card: CardId) -> bool {
        self.position(agent, card).is_some()
    }

    pub fn position(&self, agent: usize, card: CardId) -> Option<usize> {
        if card.0 == 0 || card.index() > self.n || agent >= self.n {
            return None;
        }
        deck_position(agent, card.index())
    }

    pub fn card_at(&self, agent: usize, position: usize) -> CardId {
        assert!(agent < self.n && position < self.n);
        CardId::from_index(card_at(agent, position))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TopologyKind {
    Complete,
    Cycle,
    Custom,
}

impl TopologyKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            TopologyKind::Complete => "complete",
            TopologyKind::Cycle => "cycle",
            TopologyKind::Custom => "custom",
        }
    }
}

impl fmt::Display for TopologyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for TopologyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "complete" => Ok(TopologyKind::Complete),
            "cycle" => Ok(TopologyKind::Cycle),
            "custom" => Ok(TopologyKind::Custom),
            other => Err(Error::InvalidTopology(format!("unknown topology '{other}'"))),
        }
    }
}

/// Who may observe whom, as a set of ordered `(observer, observed)` pairs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Topology {
    n: usize,
    kind: TopologyKind,
    pairs: Vec<(usize, usize)>,
}

impl Topology {
    pub fn make(kind: TopologyKind, n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidTopology(format!("need at least 2 agents, got {n}")));
        }
        let pairs = match kind {
            TopologyKind::Complete => (0..n)
                .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
                .collect(),
            TopologyKind::Cycle => {
                if n < 3 {
                    return Err(Error::InvalidTopology(format!(
                        "a cycle needs at least 3 agents, got {n}"
                    )));
                }
                let mut pairs = Vec::with_capacity(2 * n);
                for i in 0..n {
                    pairs.push((i, (i + n - 1) % n));
                    pairs.push((i, (i + 1) % n));
                }
                pairs
            }
            TopologyKind::Custom => {
                return Err(Error::InvalidTopology(
                    "custom topologies are built from an explicit pair list".into(),
                ))
            }
        };
        Ok(Topology { n, kind, pairs })
    }

    pub fn complete(n: usize) -> Result<Self> {
        Self::make(TopologyKind::Complete, n)
    }

    pub fn cycle(n: usize) -> Result<Self> {
        Self::make(TopologyKind::Cycle, n)
    }

    /// Arbitrary ordered pair set. Duplicates are dropped; self-pairs and
    /// isolated agents are rejected.
    pub fn custom(n: usize, pairs: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidTopology(format!("need at least 2 agents, got {n}")));
        }
        let set: BTreeSet<(usize, usize)> = pairs.into_iter().collect();
        let mut seen = vec![false; n];
        for &(a, b) in &set {
            if a >= n || b >= n {
                return Err(Error::InvalidTopology(format!("pair ({a}, {b}) out of range")));
            }
            if a == b {
                return Err(Error::InvalidTopology(format!("self-pair ({a}, {a})")));
            }
            seen[a] = true;
            seen[b] = true;
        }
        if let Some(isolated) = seen.iter().position(|s| !s) {
            return Err(Error::InvalidTopology(format!("agent {isolated} is isolated")));
        }
        Ok(Topology {
            n,
            kind: TopologyKind::Custom,
            pairs: set.into_iter().collect(),
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn kind(&self) -> TopologyKind {
        self.kind
    }

    pub fn directed_pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn pair_set(&self) -> BTreeSet<(usize, usize)> {
        self.pairs.iter().copied().collect()
    }
}

/// Confidence tables of all agents plus the round counter.
///
/// Tables are stored densely, `n` entries per agent in deck-position order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupState {
    n: usize,
    tau: u64,
    confidences: Vec<u32>,
    observations: Vec<u64>,
}

impl GroupState {
    pub fn new(decks: &DeckSet) -> Self {
        let n = decks.n();
        GroupState {
            n,
            tau: 0,
            confidences: vec![0; n * n],
            observations: vec![0; n],
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn tau(&self) -> u64 {
        self.tau
    }

    pub(crate) fn tick(&mut self) {
        self.tau += 1;
    }

    /// Confidences of `agent`, indexed by deck position.
    pub fn confidences(&self, agent: usize) -> &[u32] {
        &self.confidences[agent * self.n..(agent + 1) * self.n]
    }

    pub(crate) fn confidences_mut(&mut self, agent: usize) -> &mut [u32] {
        &mut self.confidences[agent * self.n..(agent + 1) * self.n]
    }

    /// Number of interactions in which `agent` was the observer.
    pub fn observations(&self, agent: usize) -> u64 {
        self.observations[agent]
    }

    pub(crate) fn record_observations(&mut self, agent: usize, count: u64) {
        self.observations[agent] += count;
    }

    pub(crate) fn set_tau(&mut self, tau: u64) {
        self.tau = tau;
    }

    /// Confidence of `agent` in `card`, `None` if the card is not in its deck.
    pub fn confidence(&self, agent: usize, card: CardId) -> Option<u32> {
        if card.0 == 0 || card.index() > self.n {
            return None;
        }
        deck_position(agent, card.index()).map(|p| self.confidences(agent)[p])
    }

    pub fn table<'a>(&'a self, decks: &DeckSet, agent: usize) -> ConfidenceTable<'a> {
        ConfidenceTable {
            agent,
            cards: decks.deck(agent),
            values: self.confidences(agent),
        }
    }

    /// Sum of all confidences over all agents.
    pub fn total_mass(&self) -> u64 {
        self.confidences.iter().map(|&v| v as u64).sum()
    }
}

/// One agent's confidences keyed by the cards of its deck.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfidenceTable<'a> {
    pub agent: usize,
    pub cards: Vec<CardId>,
    pub values: &'a [u32],
}

impl<'a> ConfidenceTable<'a> {
    pub fn new(agent: usize, cards: Vec<CardId>, values: &'a [u32]) -> Result<Self> {
        if cards.len() != values.len() {
            return Err(Error::InvalidArgument(format!(
                "{} cards but {} confidence values",
                cards.len(),
                values.len()
            )));
        }
        Ok(ConfidenceTable { agent, cards, values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn position(&self, card: CardId) -> Option<usize> {
        self.cards.iter().position(|&c| c == card)
    }

    pub fn get(&self, card: CardId) -> Option<u32> {
        self.position(card).map(|p| self.values[p])
    }
}
