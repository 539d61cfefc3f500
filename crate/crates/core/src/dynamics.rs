//! Pairwise interactions, rounds, and individual/group decisions.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Binomial, Distribution};

use crate::config::SimConfig;
use crate::draws::below;
use crate::error::Result;
use crate::model::{card_at, CardId, DeckSet, GroupState, Topology};
use crate::samplers::{DrawMemo, SubsetSampler};
use crate::seeding::{stream_rng, SimRng, Stream};

/// What happened in one observer/observed interaction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Interaction {
    pub observer: usize,
    pub observed: usize,
    /// Number of observer cards whose confidence went up by one.
    pub incremented: usize,
}

/// One observer/observed interaction.
///
/// The ordered pair is drawn uniformly from the topology. The observed agent
/// displays a sample chosen by `sampler`; the observer adds one unit of
/// confidence to every displayed card it also holds.
pub fn interaction_step<R: Rng + ?Sized>(
    state: &mut GroupState,
    topology: &Topology,
    sampler: &mut SubsetSampler,
    rng: &mut R,
    buf: &mut Vec<usize>,
) -> Interaction {
    let pairs = topology.directed_pairs();
    let (observer, observed) = pairs[below(rng, pairs.len() as u64) as usize];
    interact(state, observer, observed, sampler, rng, buf)
}

/// The interaction for a given ordered pair.
#[inline]
pub fn interact<R: Rng + ?Sized>(
    state: &mut GroupState,
    observer: usize,
    observed: usize,
    sampler: &mut SubsetSampler,
    rng: &mut R,
    buf: &mut Vec<usize>,
) -> Interaction {
    sampler.draw(rng, state.confidences(observed), buf);
    let incremented = credit(state.confidences_mut(observer), observer, observed, buf, 1);
    state.record_observations(observer, 1);
    Interaction { observer, observed, incremented }
}

/// Adds `amount` to every card of `observer` that appears among `positions`
/// of the observed deck. Returns the number of cards credited.
#[inline]
fn credit(table: &mut [u32], observer: usize, observed: usize, positions: &[usize], amount: u32) -> usize {
    let mut credited = 0;
    for &pos in positions {
        let card = pos + usize::from(pos >= observed);
        if card != observer {
            table[card - usize::from(card > observer)] += amount;
            credited += 1;
        }
    }
    credited
}

/// `N` interactions with independently drawn pairs, then `tau += 1`.
pub fn advance_round<R: Rng + ?Sized>(
    state: &mut GroupState,
    topology: &Topology,
    sampler: &mut SubsetSampler,
    rng: &mut R,
    buf: &mut Vec<usize>,
) {
    for _ in 0..state.n() {
        interaction_step(state, topology, sampler, rng, buf);
    }
    state.tick();
}

/// The card `agent` currently believes is the common one: its highest
/// confidence, ties broken uniformly.
pub fn agent_choice<R: Rng + ?Sized>(state: &GroupState, agent: usize, rng: &mut R) -> CardId {
    let table = state.confidences(agent);
    let (mut max, mut tied) = (0, 0);
    for &f in table {
        if f > max {
            (max, tied) = (f, 1);
        } else if f == max {
            tied += 1;
        }
    }
    let mut pick = if tied > 1 { below(rng, tied as u64) as usize } else { 0 };
    for (p, &f) in table.iter().enumerate() {
        if f == max {
            if pick == 0 {
                return CardId::from_index(card_at(agent, p));
            }
            pick -= 1;
        }
    }
    unreachable!("max is attained")
}

/// Individual votes and the plurality outcome at one instant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Decision {
    pub votes: Vec<CardId>,
    pub group_choice: CardId,
}

impl Decision {
    /// Agents whose vote is not `common`.
    pub fn errors(&self, common: CardId) -> usize {
        self.votes.iter().filter(|&&v| v != common).count()
    }
}

/// Plurality winner of `votes` over cards `1..=n_cards`, ties broken uniformly.
pub fn plurality<R: Rng + ?Sized>(votes: &[CardId], n_cards: usize, rng: &mut R) -> CardId {
    plurality_with(votes, n_cards, rng, &mut Vec::new())
}

fn plurality_with<R: Rng + ?Sized>(
    votes: &[CardId],
    n_cards: usize,
    rng: &mut R,
    counts: &mut Vec<u32>,
) -> CardId {
    counts.clear();
    counts.resize(n_cards, 0);
    for v in votes {
        counts[v.index()] += 1;
    }
    let max = counts.iter().copied().max().unwrap_or(0);
    let tied = counts.iter().filter(|&&k| k == max).count();
    let pick = if tied > 1 { below(rng, tied as u64) as usize } else { 0 };
    let index = counts
        .iter()
        .enumerate()
        .filter(|&(_, &k)| k == max)
        .nth(pick)
        .map(|(i, _)| i)
        .expect("max is attained");
    CardId::from_index(index)
}

/// Every agent votes via [`agent_choice`]; the group takes the plurality.
pub fn group_decision<R: Rng + ?Sized>(state: &GroupState, rng: &mut R) -> Decision {
    let mut votes = Vec::with_capacity(state.n());
    let group_choice = vote(state, rng, &mut votes, &mut Vec::new());
    Decision { votes, group_choice }
}

fn vote<R: Rng + ?Sized>(
    state: &GroupState,
    rng: &mut R,
    votes: &mut Vec<CardId>,
    counts: &mut Vec<u32>,
) -> CardId {
    votes.clear();
    votes.extend((0..state.n()).map(|i| agent_choice(state, i, rng)));
    plurality_with(votes, state.n() + 1, rng, counts)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CheckpointRecord {
    pub tau: u64,
    pub group_choice: CardId,
    pub group_correct: bool,
    pub individual_errors: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct RunOutcome {
    pub records: Vec<CheckpointRecord>,
}

/// One run: the decks, topology, strategy and its random streams.
///
/// Dynamics and decisions draw from separate streams, so querying decisions
/// never changes the confidence trajectory.
///
/// With fast-forward enabled, [`Simulation::run`] skips ahead exactly (in
/// distribution) wherever it can. The number of times each ordered pair
/// interacts over a stretch of rounds is multinomial, and two situations make
/// the resulting state change cheap to draw from those counts:
///
/// * every agent's display is locked in: deterministic now, and provably still
///   deterministic after as many observations as the stretch can bring. The
///   state change is then linear in the counts. If the drawn counts would
///   break a lock, they are replayed one interaction at a time in a uniformly
///   shuffled order, which is again an exact draw.
/// * displays do not depend on confidences at all (uniform sampling). Each
///   pair then contributes a sum of independent uniform subsets, drawn card by
///   card from binomials.
///
/// Stretches never cross a checkpoint.
#[derive(Debug, Clone)]
pub struct Simulation {
    decks: DeckSet,
    topology: Topology,
    sampler: SubsetSampler,
    state: GroupState,
    dynamics: SimRng,
    decisions: SimRng,
    locks: Vec<DisplayLock>,
    fast_forward: FastForward,
    votes: Vec<CardId>,
    counts: Vec<u32>,
}

/// An agent's last display, reusable while it provably cannot change, and
/// its sampling table, reusable while its confidences stay put.
#[derive(Debug, Clone, Default)]
struct DisplayLock {
    display: Vec<usize>,
    /// Valid while the agent's observation count is at most this.
    until: Option<u64>,
    memo: DrawMemo,
}

impl DisplayLock {
    fn slack(&self, seen: u64) -> Option<u64> {
        self.until.and_then(|u| u.checked_sub(seen))
    }
}

#[derive(Debug, Clone)]
struct FastForward {
    enabled: bool,
    min_block: u64,
    retry_at: u64,
    backoff: u64,
    slack: Vec<u64>,
    /// Expected observations per round, per agent.
    rate: Vec<f64>,
    /// Cards shown by some locked display, indexed by card.
    live: Vec<bool>,
    counts: Vec<u64>,
    observed: Vec<u64>,
    order: Vec<u32>,
    groups: Vec<u64>,
    totals: Vec<u64>,
}

/// Longest stretch applied in one bulk step.
const MAX_BLOCK: u64 = 1 << 32;
/// Multinomials with at most this many draws per category are drawn directly.
const DIRECT_MULTINOMIAL_RATIO: u64 = 16;
/// Upper bound on rounds between lock checks after repeated failures.
const MAX_BACKOFF: u64 = 64;
/// Bulk uniform stretches are used once they replace this many interactions
/// per binomial draw they need.
const UNIFORM_BULK_RATIO: u64 = 2;

impl FastForward {
    fn new(enabled: bool, topology: &Topology) -> Self {
        let (n, pairs) = (topology.n(), topology.directed_pairs().len());
        let mut rate = vec![0.0; n];
        for &(observer, _) in topology.directed_pairs() {
            rate[observer] += n as f64 / pairs as f64;
        }
        FastForward {
            enabled,
            // bulk bookkeeping is O(pairs); only worth it beyond a few rounds
            min_block: (2 * pairs as u64).div_ceil(n as u64).max(4),
            retry_at: 0,
            backoff: 0,
            slack: vec![0; n],
            rate,
            live: vec![false; n + 1],
            counts: vec![0; pairs],
            observed: vec![0; n],
            order: Vec::new(),
            groups: Vec::new(),
            totals: vec![0; n],
        }
    }

    fn defer(&mut self, tau: u64) {
        self.backoff = (self.backoff * 2).clamp(1, MAX_BACKOFF);
        self.retry_at = tau + self.backoff;
    }
}

impl Simulation {
    pub fn new(config: &SimConfig, run_seed: u64) -> Result<Self> {
        config.validate()?;
        let decks = DeckSet::build(config.n)?;
        let topology = config.build_topology()?;
        let sampler = SubsetSampler::new(config.strategy, config.n, config.c)?;
        let state = GroupState::new(&decks);
        let fast_forward = FastForward::new(config.fast_forward, &topology);
        Ok(Simulation {
            decks,
            topology,
            sampler,
            state,
            dynamics: stream_rng(run_seed, Stream::Dynamics),
            decisions: stream_rng(run_seed, Stream::Decisions),
            locks: vec![DisplayLock::default(); config.n],
            fast_forward,
            votes: Vec::with_capacity(config.n),
            counts: Vec::with_capacity(config.n + 1),
        })
    }

    pub fn decks(&self) -> &DeckSet {
        &self.decks
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn state(&self) -> &GroupState {
        &self.state
    }

    /// Same law and random-stream use as [`interaction_step`].
    pub fn step(&mut self) -> Interaction {
        let pairs = self.topology.directed_pairs();
        let (observer, observed) = pairs[below(&mut self.dynamics, pairs.len() as u64) as usize];
        self.interact(observer, observed)
    }

    /// Same law and random-stream use as the free [`advance_round`].
    pub fn advance_round(&mut self) {
        for _ in 0..self.state.n() {
            self.step();
        }
        self.state.tick();
    }

    /// [`interact`], reusing the observed agent's display while it is locked.
    /// A locked display is exactly what the sampler would produce, without
    /// consuming randomness, so this changes nothing but the cost.
    fn interact(&mut self, observer: usize, observed: usize) -> Interaction {
        let lock = &mut self.locks[observed];
        let seen = self.state.observations(observed);
        if lock.slack(seen).is_none() {
            let table = self.state.confidences(observed);
            let slack = self.sampler.draw_memo(
                &mut self.dynamics,
                table,
                &mut lock.memo,
                seen,
                &mut lock.display,
            );
            lock.until = slack.map(|k| seen.saturating_add(k));
        }
        let table = self.state.confidences_mut(observer);
        let incremented = credit(table, observer, observed, &lock.display, 1);
        self.state.record_observations(observer, 1);
        Interaction { observer, observed, incremented }
    }

    pub fn decide(&mut self) -> Decision {
        group_decision(&self.state, &mut self.decisions)
    }

    fn record(&mut self) -> CheckpointRecord {
        let group_choice =
            vote(&self.state, &mut self.decisions, &mut self.votes, &mut self.counts);
        let common = self.decks.common_card();
        CheckpointRecord {
            tau: self.state.tau(),
            group_choice,
            group_correct: group_choice == common,
            individual_errors: self.votes.iter().filter(|&&v| v != common).count() as u32,
        }
    }

    /// Advances to `config.tau_max`, recording a decision at each checkpoint.
    pub fn run(&mut self, config: &SimConfig) -> RunOutcome {
        let mut out = Vec::with_capacity(config.checkpoints.len());
        let mut pending = config.checkpoints.as_slice();
        self.record_due(&mut pending, &mut out);
        while self.state.tau() < config.tau_max {
            let stop = pending.first().map_or(config.tau_max, |&t| t.min(config.tau_max));
            self.advance_towards(stop);
            self.record_due(&mut pending, &mut out);
        }
        RunOutcome { records: out }
    }

    /// Advances by at least one round and at most to `stop`.
    fn advance_towards(&mut self, stop: u64) {
        let remaining = stop - self.state.tau();
        if self.uniform_bulk_pays(remaining) {
            self.run_uniform_block(remaining);
            return;
        }
        // a block costs a draw per pair; short segments are cheaper stepped
        if remaining >= self.fast_forward.min_block {
            if let Some(rounds) = self.plan_block(remaining) {
                self.run_locked_block(rounds);
                return;
            }
        }
        self.advance_round();
    }

    fn record_due(&mut self, pending: &mut &[u64], out: &mut Vec<CheckpointRecord>) {
        while let Some((&t, rest)) = pending.split_first() {
            if t != self.state.tau() {
                break;
            }
            out.push(self.record());
            *pending = rest;
        }
    }

    fn uniform_bulk_pays(&self, rounds: u64) -> bool {
        let (n, c) = (self.state.n() as u64, self.sampler.sample_size() as u64);
        if !self.fast_forward.enabled || !self.sampler.is_state_independent() || c == n {
            return false;
        }
        let draws = self.fast_forward.counts.len() as u64 * n * (c.min(n - c) + 1);
        rounds.saturating_mul(n) >= UNIFORM_BULK_RATIO * draws
    }

    fn run_uniform_block(&mut self, rounds: u64) {
        let (n, c) = (self.state.n(), self.sampler.sample_size());
        let pairs = self.topology.directed_pairs();
        let ff = &mut self.fast_forward;
        multinomial_uniform(&mut self.dynamics, rounds * n as u64, &mut ff.counts);
        for (&(observer, observed), &m) in pairs.iter().zip(&ff.counts) {
            if m == 0 {
                continue;
            }
            uniform_subset_counts(&mut self.dynamics, m, n, c, &mut ff.groups, &mut ff.totals);
            let table = self.state.confidences_mut(observer);
            for (pos, &k) in ff.totals.iter().enumerate() {
                let card = pos + usize::from(pos >= observed);
                if card != observer {
                    table[card - usize::from(card > observer)] += k as u32;
                }
            }
            self.state.record_observations(observer, m);
        }
        self.state.set_tau(self.state.tau() + rounds);
    }

    /// Number of rounds to fast-forward with locked displays, if any.
    fn plan_block(&mut self, remaining: u64) -> Option<u64> {
        let ff = &mut self.fast_forward;
        let tau = self.state.tau();
        if !ff.enabled || tau < ff.retry_at {
            return None;
        }
        // cached slack only shrinks while the gaps behind it may grow, so
        // every lock is re-derived from the current confidences
        let n = self.state.n();
        ff.live.fill(false);
        for agent in 0..n {
            let lock = &mut self.locks[agent];
            let seen = self.state.observations(agent);
            let table = self.state.confidences(agent);
            let Some(slack) = self.sampler.fixed_display(table, &mut lock.display) else {
                lock.until = None;
                ff.defer(tau);
                return None;
            };
            lock.until = Some(seen.saturating_add(slack));
            for &pos in &lock.display {
                ff.live[pos + usize::from(pos >= agent)] = true;
            }
        }
        // within the block only displayed cards gain confidence
        let mut rounds = remaining.min(MAX_BLOCK);
        for agent in 0..n {
            let live = |pos: usize| ff.live[pos + usize::from(pos >= agent)];
            let table = self.state.confidences(agent);
            let slack = self
                .sampler
                .display_slack(table, &self.locks[agent].display, live)
                .expect("a locked display has slack");
            ff.slack[agent] = slack;
            rounds = rounds.min(affordable_rounds(slack, ff.rate[agent]));
        }
        if rounds < ff.min_block.min(remaining) {
            ff.defer(tau);
            return None;
        }
        ff.backoff = 0;
        Some(rounds)
    }

    fn run_locked_block(&mut self, rounds: u64) {
        let n = self.state.n();
        let pairs = self.topology.directed_pairs();
        let ff = &mut self.fast_forward;
        multinomial_uniform(&mut self.dynamics, rounds * n as u64, &mut ff.counts);
        ff.observed.fill(0);
        for (&(observer, _), &k) in pairs.iter().zip(&ff.counts) {
            ff.observed[observer] += k;
        }
        if ff.observed.iter().zip(&ff.slack).all(|(o, s)| o <= s) {
            for (&(observer, observed), &k) in pairs.iter().zip(&ff.counts) {
                if k > 0 {
                    let table = self.state.confidences_mut(observer);
                    credit(table, observer, observed, &self.locks[observed].display, k as u32);
                    self.state.record_observations(observer, k);
                }
            }
            self.state.set_tau(self.state.tau() + rounds);
        } else {
            self.replay_block(rounds);
        }
    }

    /// Plays the drawn pair counts one interaction at a time in random order.
    fn replay_block(&mut self, rounds: u64) {
        let n = self.state.n();
        let mut order = std::mem::take(&mut self.fast_forward.order);
        order.clear();
        for (idx, &k) in self.fast_forward.counts.iter().enumerate() {
            order.extend(std::iter::repeat_n(idx as u32, k as usize));
        }
        order.shuffle(&mut self.dynamics);
        for round in order.chunks(n).take(rounds as usize) {
            for &idx in round {
                let (observer, observed) = self.topology.directed_pairs()[idx as usize];
                self.interact(observer, observed);
            }
            self.state.tick();
        }
        self.fast_forward.order = order;
    }
}

/// Longest stretch whose expected observations, plus four standard
/// deviations, fit within `slack`. Overshoots are replayed exactly.
fn affordable_rounds(slack: u64, rate: f64) -> u64 {
    if rate == 0.0 {
        return u64::MAX;
    }
    let mean = ((slack as f64 + 4.0).sqrt() - 2.0).powi(2);
    (mean / rate) as u64
}

/// Counts of `total` uniform draws over `counts.len()` categories.
fn multinomial_uniform<R: Rng + ?Sized>(rng: &mut R, total: u64, counts: &mut [u64]) {
    let categories = counts.len();
    // a binomial costs about as much as a few dozen direct draws
    if total <= DIRECT_MULTINOMIAL_RATIO * categories as u64 {
        counts.fill(0);
        for _ in 0..total {
            counts[below(rng, categories as u64) as usize] += 1;
        }
        return;
    }
    let mut left = total;
    for (i, slot) in counts.iter_mut().enumerate() {
        let remaining = categories - i;
        *slot = if left == 0 {
            0
        } else if remaining == 1 {
            left
        } else {
            binomial(rng, left, 1.0 / remaining as f64)
        };
        left -= *slot;
    }
}

/// How often each of positions `0..n` appears among `m` independent uniform
/// `c`-subsets, written to `totals`.
///
/// Positions are scanned in order while tracking how many subsets still need
/// `r` more members for each `r`; a subset needing `r` of the `left` remaining
/// positions takes the current one with probability `r / left`.
fn uniform_subset_counts<R: Rng + ?Sized>(
    rng: &mut R,
    m: u64,
    n: usize,
    c: usize,
    groups: &mut Vec<u64>,
    totals: &mut [u64],
) {
    // track the smaller of the subsets and their complements
    let flip = 2 * c > n;
    let k = if flip { n - c } else { c };
    groups.clear();
    groups.resize(k + 1, 0);
    groups[k] = m;
    for (pos, total) in totals.iter_mut().enumerate().take(n) {
        let left = (n - pos) as u64;
        let mut hits = 0;
        for r in 1..=k {
            let g = groups[r];
            if g == 0 {
                continue;
            }
            let x = if r as u64 == left { g } else { binomial(rng, g, r as f64 / left as f64) };
            groups[r] -= x;
            groups[r - 1] += x;
            hits += x;
        }
        *total = if flip { m - hits } else { hits };
    }
}

#[inline]
fn binomial<R: Rng + ?Sized>(rng: &mut R, n: u64, p: f64) -> u64 {
    Binomial::new(n, p).expect("probability in [0, 1]").sample(rng)
}

/// Runs a single experiment of `config` with the given per-run seed.
pub fn run_single(config: &SimConfig, run_seed: u64) -> Result<RunOutcome> {
    let mut sim = Simulation::new(config, run_seed)?;
    Ok(sim.run(config))
}
