//! Card-display strategies of the observed agent.
//!
//! All three strategies pick a C-subset of the observed agent's deck:
//!
//! * uniform: every subset with probability `1 / binomial(N, C)`;
//! * top-C: the C highest-confidence cards, boundary ties broken uniformly;
//! * Gibbs: subset `S` with probability proportional to `exp(beta * sum_{a in S} F_a)`.
//!
//! The Gibbs draw never enumerates subsets. The target is a conditional
//! Poisson design with item weights `w_a = exp(beta * (F_a - F_max))`, so the
//! normalizer is the elementary symmetric polynomial `e_C(w)` and items can be
//! decided one at a time: with `k` items still needed from the suffix
//! `a..N`, item `a` is included with probability `w_a e_{k-1}(a+1..N) / e_k(a..N)`.
//! [`enumerate_distribution`] is the brute-force reference for all of this.

use rand::Rng;

use crate::config::Strategy;
use crate::draws::partial_shuffle;
use crate::error::{Error, Result};
use crate::model::{CardId, ConfidenceTable};

/// Extra log-margin, on top of `ln binomial(N, C)`, beyond which every subset
/// other than the unique top-C subset carries less than `exp(-40)` of the mass.
const DELEGATE_LOG_MARGIN: f64 = 40.0;
/// `exp(-x)` is exactly zero in f64 beyond this.
const EXP_UNDERFLOW: f64 = 746.0;

/// A set of distinct cards from one agent's deck, kept in ascending id order.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CardSample {
    cards: Vec<CardId>,
}

impl CardSample {
    pub fn new(mut cards: Vec<CardId>) -> Result<Self> {
        cards.sort_unstable();
        if cards.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidArgument("sample contains a repeated card".into()));
        }
        Ok(CardSample { cards })
    }

    pub(crate) fn from_positions(deck: &[CardId], positions: &[usize]) -> Self {
        let mut cards: Vec<CardId> = positions.iter().map(|&p| deck[p]).collect();
        cards.sort_unstable();
        CardSample { cards }
    }

    pub fn cards(&self) -> &[CardId] {
        &self.cards
    }

    pub fn len(&self) -> usize {
        self.cards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cards.is_empty()
    }

    pub fn contains(&self, card: CardId) -> bool {
        self.cards.binary_search(&card).is_ok()
    }
}

/// Exact Gibbs probabilities of every C-subset of one deck.
#[derive(Debug, Clone)]
pub struct SubsetDistribution {
    entries: Vec<(CardSample, f64)>,
    ln_z: f64,
}

impl SubsetDistribution {
    pub fn entries(&self) -> &[(CardSample, f64)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Natural log of the normalization `Z = sum_S exp(-beta E(S))`.
    pub fn ln_z(&self) -> f64 {
        self.ln_z
    }

    pub fn z(&self) -> f64 {
        self.ln_z.exp()
    }

    pub fn probability(&self, sample: &CardSample) -> Option<f64> {
        self.entries
            .iter()
            .find(|(s, _)| s == sample)
            .map(|&(_, p)| p)
    }

    /// Marginal probability that `card` is part of the drawn sample.
    pub fn inclusion(&self, card: CardId) -> f64 {
        self.entries
            .iter()
            .filter(|(s, _)| s.contains(card))
            .map(|&(_, p)| p)
            .sum()
    }
}

/// Energy of a displayed sample: minus the summed confidences of its cards.
pub fn sample_energy(sample: &CardSample, table: &ConfidenceTable<'_>) -> Result<i64> {
    sample.cards().iter().try_fold(0i64, |acc, &card| {
        table
            .get(card)
            .map(|f| acc - f as i64)
            .ok_or(Error::ForeignCard { card: card.0, agent: table.agent })
    })
}

/// `binomial(n, k)` as an exact integer, saturating at `u128::MAX`.
pub fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        // acc * (n - i) / (i + 1) stays integral at every step
        acc = match acc.checked_mul((n - i) as u128) {
            Some(v) => v / (i as u128 + 1),
            None => return u128::MAX,
        };
    }
    acc
}

fn ln_binomial(n: usize, k: usize) -> f64 {
    (0..k.min(n - k)).map(|i| ((n - i) as f64 / (i + 1) as f64).ln()).sum()
}

fn validate_size(n: usize, c: usize) -> Result<()> {
    if c < 1 || c > n {
        return Err(Error::InvalidSize(format!("sample size {c} must be in [1, {n}]")));
    }
    Ok(())
}

/// Exhaustive Gibbs distribution over all C-subsets of the table's deck.
///
/// Reference implementation for the sequential sampler: walks every subset in
/// lexicographic order and normalizes `exp(-beta (E - E_min))`.
pub fn enumerate_distribution(
    table: &ConfidenceTable<'_>,
    c: usize,
    beta: f64,
    cap: u64,
) -> Result<SubsetDistribution> {
    let n = table.len();
    validate_size(n, c)?;
    if !(beta >= 0.0 && beta.is_finite()) {
        return Err(Error::InvalidArgument(format!("beta must be finite and >= 0, got {beta}")));
    }
    let count = binomial(n, c);
    if count > cap as u128 {
        return Err(Error::EnumerationTooLarge { count, cap: cap as u128 });
    }

    let mut subsets: Vec<(Vec<usize>, i64)> = Vec::with_capacity(count as usize);
    let mut idx: Vec<usize> = (0..c).collect();
    loop {
        let energy: i64 = -idx.iter().map(|&p| table.values[p] as i64).sum::<i64>();
        subsets.push((idx.clone(), energy));
        // next combination
        let mut i = c;
        while i > 0 && idx[i - 1] == n - c + i - 1 {
            i -= 1;
        }
        if i == 0 {
            break;
        }
        idx[i - 1] += 1;
        for j in i..c {
            idx[j] = idx[j - 1] + 1;
        }
    }

    let min_energy = subsets.iter().map(|s| s.1).min().unwrap_or(0);
    let weights: Vec<f64> = subsets
        .iter()
        .map(|s| (-beta * (s.1 - min_energy) as f64).exp())
        .collect();
    let shifted_z: f64 = weights.iter().sum();
    let ln_z = shifted_z.ln() - beta * min_energy as f64;
    let entries = subsets
        .into_iter()
        .zip(weights)
        .map(|((pos, _), w)| (CardSample::from_positions(&table.cards, &pos), w / shifted_z))
        .collect();
    Ok(SubsetDistribution { entries, ln_z })
}

/// Elementary symmetric polynomial `e_k` of `weights`.
pub fn elementary_symmetric(weights: &[f64], k: usize) -> Result<f64> {
    if k > weights.len() {
        return Err(Error::InvalidArgument(format!(
            "k = {k} exceeds the number of weights ({})",
            weights.len()
        )));
    }
    if let Some(w) = weights.iter().find(|w| !(**w > 0.0) || !w.is_finite()) {
        return Err(Error::InvalidArgument(format!("weights must be positive and finite, got {w}")));
    }
    Ok(elementary_symmetric_all(weights, k)[k])
}

/// `e_0..=e_k` of `weights` by the one-item-at-a-time recurrence.
fn elementary_symmetric_all(weights: &[f64], k: usize) -> Vec<f64> {
    let mut e = vec![0.0; k + 1];
    e[0] = 1.0;
    for (j, &w) in weights.iter().enumerate() {
        for m in (1..=k.min(j + 1)).rev() {
            e[m] += w * e[m - 1];
        }
    }
    e
}

/// Inclusion probabilities `w_j e_{C-1}(w without j) / e_C(w)` of the
/// conditional Poisson design with the given item weights.
pub fn inclusion_probabilities(weights: &[f64], c: usize) -> Result<Vec<f64>> {
    validate_size(weights.len(), c)?;
    let total = elementary_symmetric(weights, c)?;
    let mut others = Vec::with_capacity(weights.len() - 1);
    Ok((0..weights.len())
        .map(|j| {
            others.clear();
            others.extend(weights.iter().enumerate().filter(|&(i, _)| i != j).map(|(_, &w)| w));
            weights[j] * elementary_symmetric_all(&others, c - 1)[c - 1] / total
        })
        .collect())
}

/// Max-shifted Gibbs item weights `exp(beta (F_a - F_max))`.
pub fn gibbs_weights(confidences: &[u32], beta: f64) -> Vec<f64> {
    let max = confidences.iter().copied().max().unwrap_or(0);
    confidences
        .iter()
        .map(|&f| (-beta * (max - f) as f64).exp())
        .collect()
}

/// Reusable subset sampler for one strategy and one `(N, C)`.
///
/// Draws write deck positions into a caller-provided buffer; scratch space and
/// the `exp(-beta d)` table are kept between draws. Output order is unspecified.
#[derive(Debug, Clone)]
pub struct SubsetSampler {
    strategy: Strategy,
    n: usize,
    c: usize,
    positions: Vec<usize>,
    values: Vec<u32>,
    tied: Vec<usize>,
    skip: Vec<f64>,
    memo: DrawMemo,
    decay: Vec<f64>,
    decay_cutoff: u32,
    delegate_margin: f64,
}

/// The Gibbs sampling table of one agent, reusable while that agent's
/// confidences stay the same.
///
/// Callers identify states with a stamp that changes whenever the
/// confidences may have changed, such as the agent's observation count.
#[derive(Debug, Clone, Default)]
pub struct DrawMemo {
    stamp: Option<u64>,
    /// Whether the table describes the complement of the sample.
    flip: bool,
    k: usize,
    take: Vec<f64>,
    suffix: Vec<f64>,
}

impl SubsetSampler {
    pub fn new(strategy: Strategy, n: usize, c: usize) -> Result<Self> {
        validate_size(n, c)?;
        let mut decay_cutoff = u32::MAX;
        if let Strategy::Gibbs { beta } = strategy {
            if !(beta >= 0.0 && beta.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "beta must be finite and >= 0, got {beta}"
                )));
            }
            if beta > 0.0 {
                decay_cutoff = (EXP_UNDERFLOW / beta).ceil().min(u32::MAX as f64) as u32;
            }
        }
        Ok(SubsetSampler {
            strategy,
            n,
            c,
            positions: (0..n).collect(),
            values: Vec::with_capacity(n),
            tied: Vec::with_capacity(n),
            skip: vec![0.0; n],
            memo: DrawMemo::default(),
            decay: vec![1.0],
            decay_cutoff,
            delegate_margin: ln_binomial(n, c) + DELEGATE_LOG_MARGIN,
        })
    }

    pub fn strategy(&self) -> Strategy {
        self.strategy
    }

    pub fn sample_size(&self) -> usize {
        self.c
    }

    /// Whether draws ignore the confidences entirely.
    pub fn is_state_independent(&self) -> bool {
        match self.strategy {
            Strategy::Uniform => true,
            Strategy::Gibbs { beta } => beta == 0.0,
            Strategy::TopC => self.c == self.n,
        }
    }

    /// Draws one sample from a table of `N` confidences into `out`.
    #[inline]
    pub fn draw<R: Rng + ?Sized>(&mut self, rng: &mut R, confidences: &[u32], out: &mut Vec<usize>) {
        self.draw_locking(rng, confidences, out);
    }

    /// [`draw`](Self::draw), additionally reporting when the sample was
    /// deterministic: `Some(k)` means the same sample is produced, without
    /// randomness, for as long as the displaying agent makes at most `k`
    /// further observations.
    ///
    /// Each observation raises any single confidence by at most one, so a
    /// boundary gap `g` between ranks `C` and `C + 1` survives `g - 1`
    /// observations under top-C, and `g - margin / beta` under Gibbs.
    pub fn draw_locking<R: Rng + ?Sized>(
        &mut self,
        rng: &mut R,
        confidences: &[u32],
        out: &mut Vec<usize>,
    ) -> Option<u64> {
        let mut memo = std::mem::take(&mut self.memo);
        let slack = self.draw_inner(rng, confidences, &mut memo, None, out);
        self.memo = memo;
        slack
    }

    /// [`draw_locking`](Self::draw_locking) for an agent whose Gibbs table
    /// is kept in `memo` and whose current state is identified by `stamp`.
    /// Consumes randomness exactly as the uncached draw does.
    pub fn draw_memo<R: Rng + ?Sized>(
        &mut self,
        rng: &mut R,
        confidences: &[u32],
        memo: &mut DrawMemo,
        stamp: u64,
        out: &mut Vec<usize>,
    ) -> Option<u64> {
        self.draw_inner(rng, confidences, memo, Some(stamp), out)
    }

    fn draw_inner<R: Rng + ?Sized>(
        &mut self,
        rng: &mut R,
        confidences: &[u32],
        memo: &mut DrawMemo,
        stamp: Option<u64>,
        out: &mut Vec<usize>,
    ) -> Option<u64> {
        debug_assert_eq!(confidences.len(), self.n);
        out.clear();
        if self.c == self.n {
            out.extend(0..self.n);
            return Some(u64::MAX);
        }
        if self.is_state_independent() {
            self.draw_uniform(rng, out);
            return None;
        }
        if stamp.is_some() && memo.stamp == stamp {
            self.sample_memo(rng, memo, out);
            return None;
        }
        let boundary = self.boundary(confidences);
        if let Some(slack) = self.lock_slack(&boundary) {
            push_at_least(confidences, boundary.last_in, out);
            return Some(slack);
        }
        match self.strategy {
            Strategy::Gibbs { beta } => {
                if self.fill_memo(confidences, beta, boundary.last_in, memo) {
                    memo.stamp = stamp;
                    self.sample_memo(rng, memo, out);
                } else {
                    memo.stamp = None;
                    self.draw_gibbs_log(rng, confidences, beta, boundary.max, memo, out);
                }
            }
            _ => self.draw_top_c(rng, confidences, boundary.last_in, out),
        }
        None
    }

    /// The sample these confidences display deterministically, with its
    /// slack as in [`draw_locking`](Self::draw_locking), or `None` when the
    /// display is random.
    pub fn fixed_display(&mut self, confidences: &[u32], out: &mut Vec<usize>) -> Option<u64> {
        out.clear();
        if self.c == self.n {
            out.extend(0..self.n);
            return Some(u64::MAX);
        }
        if self.is_state_independent() {
            return None;
        }
        let boundary = self.boundary(confidences);
        let slack = self.lock_slack(&boundary)?;
        push_at_least(confidences, boundary.last_in, out);
        Some(slack)
    }

    /// Values at ranks `C - 1` and `C` in descending order, and the maximum.
    fn boundary(&mut self, confidences: &[u32]) -> Boundary {
        self.values.clear();
        self.values.extend_from_slice(confidences);
        let (above, next, _) = self.values.select_nth_unstable_by(self.c, |a, b| b.cmp(a));
        let next = *next;
        let (last_in, max) = above
            .iter()
            .fold((u32::MAX, 0), |(lo, hi), &f| (lo.min(f), hi.max(f)));
        Boundary { last_in, next, max }
    }

    fn lock_slack(&self, boundary: &Boundary) -> Option<u64> {
        self.gap_slack(boundary.last_in - boundary.next)
    }

    /// Slack of a locked `display` when only cards accepted by `live` can
    /// gain confidence: cards that never move cannot close the gap.
    pub fn display_slack(
        &self,
        confidences: &[u32],
        display: &[usize],
        live: impl Fn(usize) -> bool,
    ) -> Option<u64> {
        if display.len() == self.n {
            return Some(u64::MAX);
        }
        let last_in = display.iter().map(|&p| confidences[p]).min()?;
        let rival = confidences
            .iter()
            .enumerate()
            .filter(|&(p, &f)| f < last_in && live(p))
            .map(|(_, &f)| f)
            .max();
        match rival {
            Some(f) => self.gap_slack(last_in - f),
            None => Some(u64::MAX),
        }
    }

    fn gap_slack(&self, gap: u32) -> Option<u64> {
        match self.strategy {
            Strategy::TopC if gap >= 1 => Some(u64::from(gap) - 1),
            Strategy::Gibbs { beta } if beta * gap as f64 >= self.delegate_margin => {
                Some((gap as f64 - self.delegate_margin / beta).floor().max(0.0) as u64)
            }
            _ => None,
        }
    }

    fn draw_uniform<R: Rng + ?Sized>(&mut self, rng: &mut R, out: &mut Vec<usize>) {
        // any arrangement of the positions is a valid starting point
        partial_shuffle(rng, &mut self.positions, self.c);
        out.extend_from_slice(&self.positions[..self.c]);
    }

    /// Top-C with ties at `threshold`, the value at rank `C - 1`, broken uniformly.
    fn draw_top_c<R: Rng + ?Sized>(
        &mut self,
        rng: &mut R,
        confidences: &[u32],
        threshold: u32,
        out: &mut Vec<usize>,
    ) {
        self.tied.clear();
        for (p, &f) in confidences.iter().enumerate() {
            if f > threshold {
                out.push(p);
            } else if f == threshold {
                self.tied.push(p);
            }
        }
        let missing = self.c - out.len();
        if missing == self.tied.len() {
            out.extend_from_slice(&self.tied);
            return;
        }
        partial_shuffle(rng, &mut self.tied, missing);
        out.extend_from_slice(&self.tied[..missing]);
    }

    #[inline]
    fn decay(&mut self, beta: f64, d: u32) -> f64 {
        if d >= self.decay_cutoff {
            return 0.0;
        }
        match self.decay.get(d as usize) {
            Some(&v) => v,
            None => self.extend_decay(beta, d),
        }
    }

    #[cold]
    fn extend_decay(&mut self, beta: f64, d: u32) -> f64 {
        for i in self.decay.len()..=d as usize {
            self.decay.push((-beta * i as f64).exp());
        }
        self.decay[d as usize]
    }

    /// Builds the sequential-sampling table for `confidences` into `memo`.
    /// Returns `false` if it does not fit the linear floating-point range.
    ///
    /// Weights are taken relative to the boundary value `last_in`: a card
    /// above it costs exp(-beta (F - last_in)) when left out, a card below
    /// costs exp(-beta (last_in - F)) when taken. Every subset then has weight
    /// at most one and the top-C subset exactly one, so the normalizer lies in
    /// [1, binomial(N, C)]. When C > N/2 the complement is tabulated instead,
    /// with the roles of the two weights swapped.
    fn fill_memo(&mut self, confidences: &[u32], beta: f64, last_in: u32, memo: &mut DrawMemo) -> bool {
        let (n, c) = (self.n, self.c);
        let flip = 2 * c > n;
        let k_total = if flip { n - c } else { c };
        let w = k_total + 1;
        memo.flip = flip;
        memo.k = k_total;
        memo.take.resize(n, 0.0);
        memo.suffix.resize((n + 1) * w, 0.0);

        for (p, &f) in confidences.iter().enumerate() {
            let (take, skip) = if f >= last_in {
                (1.0, self.decay(beta, f - last_in))
            } else {
                (self.decay(beta, last_in - f), 1.0)
            };
            let (take, skip) = if flip { (skip, take) } else { (take, skip) };
            memo.take[p] = take;
            self.skip[p] = skip;
        }

        // row p, column k: weight of all ways to take k of cards p..n
        let (rows, last) = memo.suffix.split_at_mut(n * w);
        last[0] = 1.0;
        last[1..].fill(0.0);
        let mut below: &[f64] = last;
        for ((row, &take), &skip) in rows
            .chunks_exact_mut(w)
            .zip(&memo.take)
            .zip(&self.skip)
            .rev()
        {
            row[0] = skip * below[0];
            for k in 1..w {
                row[k] = skip * below[k] + take * below[k - 1];
            }
            below = row;
        }
        memo.suffix[k_total].is_finite()
    }

    fn sample_memo<R: Rng + ?Sized>(&mut self, rng: &mut R, memo: &DrawMemo, out: &mut Vec<usize>) {
        let n = self.n;
        let w = memo.k + 1;
        let picked = if memo.flip { &mut self.tied } else { &mut *out };
        picked.clear();
        let mut k = memo.k;
        let rows = memo.suffix.windows(2 * w).step_by(w);
        for (p, (rows, &take)) in rows.zip(&memo.take).enumerate() {
            if k == 0 {
                break;
            }
            if n - p == k {
                picked.extend(p..n);
                break;
            }
            let prob = take * rows[w + k - 1] / rows[k];
            if rng.random::<f64>() < prob {
                picked.push(p);
                k -= 1;
            }
        }
        if memo.flip {
            let mut skipped = self.tied.iter();
            let mut next_skip = skipped.next();
            for p in 0..n {
                if next_skip == Some(&p) {
                    next_skip = skipped.next();
                } else {
                    out.push(p);
                }
            }
        }
    }

    /// Same sequential draw with the suffix table kept in log space, using
    /// `scratch` for storage.
    fn draw_gibbs_log<R: Rng + ?Sized>(
        &mut self,
        rng: &mut R,
        confidences: &[u32],
        beta: f64,
        max: u32,
        scratch: &mut DrawMemo,
        out: &mut Vec<usize>,
    ) {
        let (n, c) = (self.n, self.c);
        let w = c + 1;
        let weights = &mut scratch.take;
        weights.clear();
        weights.extend(confidences.iter().map(|&f| -beta * (max - f) as f64));
        let s = &mut scratch.suffix;
        s.resize((n + 1) * w, 0.0);
        s[n * w] = 0.0;
        for k in 1..=c {
            s[n * w + k] = f64::NEG_INFINITY;
        }
        for p in (0..n).rev() {
            let lw = weights[p];
            s[p * w] = 0.0;
            for k in 1..=c {
                s[p * w + k] = log_add_exp(s[(p + 1) * w + k], lw + s[(p + 1) * w + k - 1]);
            }
        }
        let mut k = c;
        for p in 0..n {
            if k == 0 {
                break;
            }
            if n - p == k {
                out.extend(p..n);
                break;
            }
            let prob = (weights[p] + s[(p + 1) * w + k - 1] - s[p * w + k]).exp();
            if rng.random::<f64>() < prob {
                out.push(p);
                k -= 1;
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Boundary {
    last_in: u32,
    next: u32,
    max: u32,
}

fn push_at_least(confidences: &[u32], threshold: u32, out: &mut Vec<usize>) {
    out.extend(
        confidences
            .iter()
            .enumerate()
            .filter(|&(_, &f)| f >= threshold)
            .map(|(p, _)| p),
    );
}

fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// Uniform C-subset of `deck`.
pub fn sample_subset_uniform<R: Rng + ?Sized>(
    rng: &mut R,
    deck: &[CardId],
    c: usize,
) -> Result<CardSample> {
    let mut sampler = SubsetSampler::new(Strategy::Uniform, deck.len(), c)?;
    let zeros = vec![0; deck.len()];
    let mut out = Vec::with_capacity(c);
    sampler.draw(rng, &zeros, &mut out);
    Ok(CardSample::from_positions(deck, &out))
}

/// The C highest-confidence cards, ties at the cutoff broken uniformly.
pub fn sample_subset_top_c<R: Rng + ?Sized>(
    rng: &mut R,
    table: &ConfidenceTable<'_>,
    c: usize,
) -> Result<CardSample> {
    let mut sampler = SubsetSampler::new(Strategy::TopC, table.len(), c)?;
    let mut out = Vec::with_capacity(c);
    sampler.draw(rng, table.values, &mut out);
    Ok(CardSample::from_positions(&table.cards, &out))
}

/// One exact draw from the Gibbs distribution at inverse temperature `beta`.
pub fn sample_subset_gibbs<R: Rng + ?Sized>(
    rng: &mut R,
    table: &ConfidenceTable<'_>,
    c: usize,
    beta: f64,
) -> Result<CardSample> {
    let mut sampler = SubsetSampler::new(Strategy::Gibbs { beta }, table.len(), c)?;
    let mut out = Vec::with_capacity(c);
    sampler.draw(rng, table.values, &mut out);
    Ok(CardSample::from_positions(&table.cards, &out))
}
