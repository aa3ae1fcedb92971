//! Order-independent summation.
//!
//! Ensemble statistics are reduced with an exact accumulator (Shewchuk's
//! non-overlapping partials, rounded once at the end), so the mean and
//! covariance of an ensemble do not depend on particle order or on how a
//! reduction is scheduled across threads.

use crate::num::Real;

/// Running sum whose value is the correctly rounded exact sum of its inputs.
#[derive(Clone, Debug)]
pub struct ExactSum<T> {
    partials: Vec<T>,
    special: Option<T>,
}

impl<T: Real> Default for ExactSum<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> ExactSum<T> {
    pub fn new() -> Self {
        Self {
            partials: Vec::with_capacity(4),
            special: None,
        }
    }

    pub fn clear(&mut self) {
        self.partials.clear();
        self.special = None;
    }

    pub fn add(&mut self, value: T) {
        if !value.is_finite() {
            self.special = Some(match self.special {
                Some(s) => s + value,
                None => value,
            });
            return;
        }
        let mut x = value;
        let mut kept = 0;
        for j in 0..self.partials.len() {
            let mut y = self.partials[j];
            if x.abs() < y.abs() {
                std::mem::swap(&mut x, &mut y);
            }
            let hi = x + y;
            let lo = y - (hi - x);
            if lo != T::zero() {
                self.partials[kept] = lo;
                kept += 1;
            }
            x = hi;
        }
        if !x.is_finite() {
            // intermediate overflow
            self.special = Some(match self.special {
                Some(s) => s + x,
                None => x,
            });
            return;
        }
        self.partials.truncate(kept);
        self.partials.push(x);
    }

    pub fn value(&self) -> T {
        if let Some(s) = self.special {
            return s;
        }
        let mut n = self.partials.len();
        if n == 0 {
            return T::zero();
        }
        n -= 1;
        let mut hi = self.partials[n];
        let mut lo = T::zero();
        while n > 0 {
            let x = hi;
            let y = self.partials[n - 1];
            n -= 1;
            hi = x + y;
            let yr = hi - x;
            lo = y - yr;
            if lo != T::zero() {
                break;
            }
        }
        // Round-half-even correction when the remaining partials push the
        // tail past the halfway point.
        if n > 0 {
            let next = self.partials[n - 1];
            let zero = T::zero();
            if (lo < zero && next < zero) || (lo > zero && next > zero) {
                let y = lo + lo;
                let x = hi + y;
                let yr = x - hi;
                if y == yr {
                    hi = x;
                }
            }
        }
        hi
    }
}

impl<T: Real> Extend<T> for ExactSum<T> {
    fn extend<I: IntoIterator<Item = T>>(&mut self, iter: I) {
        for v in iter {
            self.add(v);
        }
    }
}

/// Correctly rounded sum of an iterator.
pub fn exact_sum<T: Real, I: IntoIterator<Item = T>>(values: I) -> T {
    let mut acc = ExactSum::new();
    acc.extend(values);
    acc.value()
}

const CHUNK_BITS: u32 = 32;
const CHUNKS: usize = (2046 >> 5) + 3;
const RENORM_EVERY: u32 = 1 << 30;

/// Fixed-point accumulator spanning the whole `f64` exponent range.
///
/// Each finite input is split into 32-bit integer chunks and added exactly, so
/// the state after any sequence of additions depends only on the multiset of
/// inputs. [`value`](Self::value) rounds the exact total once. Much faster than
/// [`ExactSum`] for long runs of similar-magnitude terms.
#[derive(Clone, Debug)]
pub struct LongAccumulator {
    chunks: [i64; CHUNKS],
    pending: u32,
    special: Option<f64>,
}

impl Default for LongAccumulator {
    fn default() -> Self {
        Self::new()
    }
}

fn ldexp(x: f64, mut e: i32) -> f64 {
    let pow2 = |k: i32| f64::from_bits(((k + 1023) as u64) << 52);
    let mut x = x;
    while e > 1000 {
        x *= pow2(1000);
        e -= 1000;
    }
    while e < -1000 {
        x *= pow2(-1000);
        e += 1000;
    }
    x * pow2(e)
}

impl LongAccumulator {
    pub fn new() -> Self {
        Self {
            chunks: [0; CHUNKS],
            pending: 0,
            special: None,
        }
    }

    pub fn clear(&mut self) {
        self.chunks = [0; CHUNKS];
        self.pending = 0;
        self.special = None;
    }

    #[inline]
    pub fn add(&mut self, value: f64) {
        let bits = value.to_bits();
        let exp = ((bits >> 52) & 0x7ff) as u32;
        if exp == 0x7ff {
            self.add_special(value);
            return;
        }
        let frac = bits & ((1u64 << 52) - 1);
        let (mant, pos) = if exp == 0 { (frac, 1) } else { (frac | (1u64 << 52), exp) };
        let idx = ((pos / CHUNK_BITS) as usize).min(CHUNKS - 3);
        let mut wide = (mant as i128) << (pos % CHUNK_BITS);
        if bits >> 63 == 1 {
            wide = -wide;
        }
        let mask = (1i128 << CHUNK_BITS) - 1;
        let c = &mut self.chunks[idx..idx + 3];
        c[0] += (wide & mask) as i64;
        c[1] += ((wide >> CHUNK_BITS) & mask) as i64;
        c[2] += (wide >> (2 * CHUNK_BITS)) as i64;
        self.pending += 1;
        if self.pending >= RENORM_EVERY {
            self.normalize();
        }
    }

    #[cold]
    fn add_special(&mut self, value: f64) {
        self.special = Some(self.special.map_or(value, |s| s + value));
    }

    fn normalize(&mut self) {
        for i in 0..CHUNKS - 1 {
            let carry = self.chunks[i] >> CHUNK_BITS;
            self.chunks[i] -= carry << CHUNK_BITS;
            self.chunks[i + 1] += carry;
        }
        self.pending = 0;
    }

    /// Correctly rounded value of the exact sum. Carries are propagated in place,
    /// which leaves the represented sum unchanged.
    pub fn value(&mut self) -> f64 {
        if let Some(s) = self.special {
            return s;
        }
        self.normalize();
        let mut exact = ExactSum::new();
        for (i, &c) in self.chunks.iter().enumerate() {
            if c != 0 {
                exact.add(ldexp(c as f64, (i as u32 * CHUNK_BITS) as i32 - 1075));
            }
        }
        exact.value()
    }
}

const ANCHOR_BITS: u32 = 56;

/// Correctly rounded exact sum of a slice.
///
/// Terms within 56 binades of the largest one are added in a single 128-bit
/// integer anchored at the largest exponent; anything smaller goes through a
/// [`LongAccumulator`]. Exact for slices shorter than 2^18.
pub fn exact_sum_slice(xs: &[f64]) -> f64 {
    let max_exp = xs
        .iter()
        .map(|x| ((x.to_bits() >> 52) & 0x7ff) as u32)
        .max()
        .unwrap_or(0);
    if max_exp == 0x7ff {
        return xs.iter().sum();
    }
    debug_assert!(xs.len() < 1 << 18);
    let anchor = max_exp.max(1);
    let mut fixed: i128 = 0;
    let mut tail: Option<LongAccumulator> = None;
    for &x in xs {
        let bits = x.to_bits();
        let exp = ((bits >> 52) & 0x7ff) as u32;
        let frac = bits & ((1u64 << 52) - 1);
        let (mant, pos) = if exp == 0 { (frac, 1) } else { (frac | (1u64 << 52), exp) };
        let gap = anchor - pos;
        if gap <= ANCHOR_BITS {
            let v = (mant as i128) << (ANCHOR_BITS - gap);
            fixed += if bits >> 63 == 1 { -v } else { v };
        } else {
            tail.get_or_insert_with(LongAccumulator::new).add(x);
        }
    }
    // fixed * 2^(anchor - 1075 - ANCHOR_BITS), split into exactly representable pieces
    let base = anchor as i32 - 1075 - ANCHOR_BITS as i32;
    let mut pieces = [0.0f64; 5];
    let mut count = 0;
    let mut rest = fixed;
    let mut shift = 0;
    while rest != 0 && rest != -1 {
        let piece = (rest & ((1i128 << 32) - 1)) as i64;
        pieces[count] = ldexp(piece as f64, base + shift);
        count += 1;
        rest >>= 32;
        shift += 32;
    }
    if rest == -1 {
        pieces[count] = ldexp(-1.0, base + shift);
        count += 1;
    }
    match tail {
        Some(mut t) => {
            for &p in &pieces[..count] {
                t.add(p);
            }
            t.value()
        }
        None => {
            let mut exact = ExactSum::new();
            exact.extend(pieces[..count].iter().copied());
            exact.value()
        }
    }
}
