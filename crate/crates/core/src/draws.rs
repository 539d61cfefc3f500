//! Exact bounded integers packed into as few 64-bit draws as possible.
//!
//! A 64-bit word `r` times a bound product `P = b_0 b_1 ... b_{k-1}` splits
//! as `D·2^64 + l`, where the mixed-radix digits of `D` come out of repeated
//! multiply-shift steps. Rejecting `l < 2^64 mod P` makes `D` exactly uniform
//! on `[0, P)`, hence every digit exactly uniform and independent.

use rand::RngCore;

/// Largest bound product packed into one draw; keeps rejections below `2^-16`.
const BATCH_LIMIT: u64 = 1 << 48;

#[inline]
fn mul_split(l: u64, b: u64) -> (u64, u64) {
    let m = u128::from(l) * u128::from(b);
    ((m >> 64) as u64, m as u64)
}

/// Uniform integer in `[0, bound)`.
#[inline]
pub fn below<R: RngCore + ?Sized>(rng: &mut R, bound: u64) -> u64 {
    debug_assert!(bound > 0);
    let (mut hi, mut lo) = mul_split(rng.next_u64(), bound);
    if lo < bound {
        let threshold = bound.wrapping_neg() % bound;
        while lo < threshold {
            (hi, lo) = mul_split(rng.next_u64(), bound);
        }
    }
    hi
}

/// A word whose mixed-radix digits over bounds with product `product` are
/// exactly uniform. The low part left after peeling every digit is
/// `r·product mod 2^64`, so acceptance is decided before decoding.
#[inline]
fn accepted_word<R: RngCore + ?Sized>(rng: &mut R, product: u64) -> u64 {
    loop {
        let r = rng.next_u64();
        let lo = r.wrapping_mul(product);
        if lo >= product || lo >= product.wrapping_neg() % product {
            return r;
        }
    }
}

/// Partial Fisher-Yates: afterwards `items[..k]` is a uniformly random ordered
/// `k`-sample of the multiset in `items`, whatever its previous order.
pub fn partial_shuffle<T, R: RngCore + ?Sized>(rng: &mut R, items: &mut [T], k: usize) {
    let len = items.len();
    let k = k.min(len.saturating_sub(1));
    let mut i = 0;
    while i < k {
        let mut end = i;
        let mut product = 1u64;
        while end < k {
            let next = product.saturating_mul((len - end) as u64);
            if next > BATCH_LIMIT && end > i {
                break;
            }
            product = next;
            end += 1;
        }
        let mut lo = accepted_word(rng, product);
        for at in i..end {
            let (d, rest) = mul_split(lo, (len - at) as u64);
            lo = rest;
            items.swap(at, at + d as usize);
        }
        i = end;
    }
}
