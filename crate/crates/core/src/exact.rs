//! Exact accumulation of `f64` sums.
//!
//! [`ExactSum`] holds a running sum as a two's-complement fixed-point integer
//! wide enough to represent every finite `f64` (and 2^200 of them) without
//! rounding. Rounding happens once, in [`ExactSum::value`], so a sum's result
//! does not depend on how the terms were grouped. Sharded reductions rely on
//! this: the same logical dot product gives the same bits for any shard count.

use std::cmp::Ordering;

const LIMBS: usize = 36;
/// The integer held in the limbs is `sum * 2^SCALE_EXP`.
const SCALE_EXP: i32 = 1074;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExactSum {
    limbs: [u64; LIMBS],
    /// NaN or infinite terms are summed here in plain arithmetic and win.
    special: Option<u64>,
}

impl Default for ExactSum {
    fn default() -> Self {
        Self::new()
    }
}

impl ExactSum {
    pub fn new() -> Self {
        Self {
            limbs: [0; LIMBS],
            special: None,
        }
    }

    pub fn add(&mut self, x: f64) {
        if !x.is_finite() {
            let acc = self.special.map_or(x, |s| f64::from_bits(s) + x);
            self.special = Some(acc.to_bits());
            return;
        }
        if x == 0.0 {
            return;
        }
        let bits = x.to_bits();
        let negative = bits >> 63 == 1;
        let biased = ((bits >> 52) & 0x7ff) as usize;
        let fraction = bits & ((1u64 << 52) - 1);
        let (mantissa, shift) = if biased == 0 {
            (fraction, 0)
        } else {
            (fraction | (1u64 << 52), biased - 1)
        };
        let limb = shift / 64;
        let offset = shift % 64;
        let lo = mantissa << offset;
        let hi = if offset == 0 {
            0
        } else {
            mantissa >> (64 - offset)
        };
        if negative {
            self.sub_at(limb, lo, hi);
        } else {
            self.add_at(limb, lo, hi);
        }
    }

    /// Adds the exact product of two `f32` values; the `f64` product is exact.
    #[inline]
    pub fn add_product_f32(&mut self, a: f32, b: f32) {
        self.add(a as f64 * b as f64);
    }

    pub fn merge(&mut self, other: &ExactSum) {
        if let Some(s) = other.special {
            self.add(f64::from_bits(s));
        }
        let mut carry = false;
        for (mine, theirs) in self.limbs.iter_mut().zip(other.limbs.iter()) {
            let (s1, c1) = mine.overflowing_add(*theirs);
            let (s2, c2) = s1.overflowing_add(carry as u64);
            *mine = s2;
            carry = c1 || c2;
        }
    }

    fn add_at(&mut self, idx: usize, lo: u64, hi: u64) {
        let (s0, c0) = self.limbs[idx].overflowing_add(lo);
        self.limbs[idx] = s0;
        let (s1, c1a) = self.limbs[idx + 1].overflowing_add(hi);
        let (s1, c1b) = s1.overflowing_add(c0 as u64);
        self.limbs[idx + 1] = s1;
        let mut carry = c1a || c1b;
        let mut i = idx + 2;
        while carry && i < LIMBS {
            let (s, c) = self.limbs[i].overflowing_add(1);
            self.limbs[i] = s;
            carry = c;
            i += 1;
        }
    }

    fn sub_at(&mut self, idx: usize, lo: u64, hi: u64) {
        let (s0, b0) = self.limbs[idx].overflowing_sub(lo);
        self.limbs[idx] = s0;
        let (s1, b1a) = self.limbs[idx + 1].overflowing_sub(hi);
        let (s1, b1b) = s1.overflowing_sub(b0 as u64);
        self.limbs[idx + 1] = s1;
        let mut borrow = b1a || b1b;
        let mut i = idx + 2;
        while borrow && i < LIMBS {
            let (s, b) = self.limbs[i].overflowing_sub(1);
            self.limbs[i] = s;
            borrow = b;
            i += 1;
        }
    }

    pub fn signum(&self) -> Ordering {
        if self.limbs[LIMBS - 1] >> 63 == 1 {
            Ordering::Less
        } else if self.limbs.iter().all(|&l| l == 0) {
            Ordering::Equal
        } else {
            Ordering::Greater
        }
    }

    /// The sum rounded to the nearest `f64` (ties to even).
    pub fn value(&self) -> f64 {
        if let Some(s) = self.special {
            return f64::from_bits(s);
        }
        let negative = self.limbs[LIMBS - 1] >> 63 == 1;
        let mut mag = self.limbs;
        if negative {
            let mut carry = true;
            for limb in mag.iter_mut() {
                let (s, c) = (!*limb).overflowing_add(carry as u64);
                *limb = s;
                carry = c;
            }
        }
        let Some(top) = highest_bit(&mag) else {
            return 0.0;
        };
        let magnitude = if top < 53 {
            // Exactly representable as a multiple of the smallest subnormal.
            mag[0] as f64 * f64::from_bits(1)
        } else {
            let mut mantissa = extract_bits(&mag, top - 52, 53);
            let round = bit(&mag, top - 53);
            let sticky = any_below(&mag, top - 53);
            let mut top = top as i32;
            if round && (sticky || mantissa & 1 == 1) {
                mantissa += 1;
                if mantissa == 1u64 << 53 {
                    mantissa >>= 1;
                    top += 1;
                }
            }
            if top - SCALE_EXP > 1023 {
                f64::INFINITY
            } else {
                mantissa as f64 * pow2(top - 52 - SCALE_EXP)
            }
        };
        if negative {
            -magnitude
        } else {
            magnitude
        }
    }
}

fn highest_bit(mag: &[u64; LIMBS]) -> Option<usize> {
    mag.iter()
        .enumerate()
        .rev()
        .find(|(_, &l)| l != 0)
        .map(|(i, &l)| i * 64 + 63 - l.leading_zeros() as usize)
}

fn bit(mag: &[u64; LIMBS], pos: usize) -> bool {
    (mag[pos / 64] >> (pos % 64)) & 1 == 1
}

fn extract_bits(mag: &[u64; LIMBS], lo: usize, count: usize) -> u64 {
    debug_assert!(count <= 64);
    let limb = lo / 64;
    let offset = lo % 64;
    let mut v = mag[limb] >> offset;
    if offset != 0 && limb + 1 < LIMBS {
        v |= mag[limb + 1] << (64 - offset);
    }
    if count == 64 {
        v
    } else {
        v & ((1u64 << count) - 1)
    }
}

fn any_below(mag: &[u64; LIMBS], pos: usize) -> bool {
    let limb = pos / 64;
    let offset = pos % 64;
    if mag[..limb].iter().any(|&l| l != 0) {
        return true;
    }
    offset > 0 && mag[limb] & ((1u64 << offset) - 1) != 0
}

/// `2^e` for `e` in the representable range `[-1074, 1023]`.
fn pow2(e: i32) -> f64 {
    debug_assert!((-1074..=1023).contains(&e));
    if e >= -1022 {
        f64::from_bits(((e + 1023) as u64) << 52)
    } else {
        f64::from_bits(1u64 << (e + 1074))
    }
}

/// Correctly rounded sum of a slice.
pub fn exact_sum(values: &[f64]) -> f64 {
    let mut acc = ExactSum::new();
    for &v in values {
        acc.add(v);
    }
    acc.value()
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_bigint::BigInt;
    use num_rational::BigRational;
    use num_traits::{Signed, Zero};
    use proptest::prelude::*;

    fn to_rational(x: f64) -> BigRational {
        BigRational::from_float(x).unwrap()
    }

    #[test]
    fn simple_sums() {
        assert_eq!(exact_sum(&[]), 0.0);
        assert_eq!(exact_sum(&[1.0, 2.0, 3.0]), 6.0);
        assert_eq!(exact_sum(&[-1.5]), -1.5);
        assert_eq!(exact_sum(&[1e300, 1.0, -1e300]), 1.0);
        assert_eq!(exact_sum(&[0.1, 0.2]), 0.1 + 0.2);
        assert_eq!(exact_sum(&[f64::MAX, -f64::MAX, 5e-324]), 5e-324);
        assert_eq!(exact_sum(&[f64::MAX, f64::MAX]), f64::INFINITY);
        assert!(exact_sum(&[1.0, f64::NAN]).is_nan());
        assert_eq!(exact_sum(&[1.0, f64::NEG_INFINITY]), f64::NEG_INFINITY);
    }

    #[test]
    fn ties_round_to_even() {
        // 2^53 + 1 is a tie between 2^53 and 2^53 + 2.
        let big = 2f64.powi(53);
        assert_eq!(exact_sum(&[big, 1.0]), big);
        assert_eq!(exact_sum(&[big + 2.0, 1.0]), big + 4.0);
        assert_eq!(exact_sum(&[big, 1.0, 1e-300]), big + 2.0);
    }

    #[test]
    fn merge_matches_single_accumulator() {
        let values: Vec<f64> = (0..1000).map(|i| ((i * 7919) % 1013) as f64 * 1e-3 - 0.5).collect();
        let whole = exact_sum(&values);
        let mut a = ExactSum::new();
        let mut b = ExactSum::new();
        for v in &values[..377] {
            a.add(*v);
        }
        for v in &values[377..] {
            b.add(*v);
        }
        a.merge(&b);
        assert_eq!(a.value().to_bits(), whole.to_bits());
    }

    proptest! {
        #[test]
        fn within_half_ulp_of_rational_sum(values in prop::collection::vec(
            prop_oneof![-1e6f64..1e6, -1e-6f64..1e-6, -1e200f64..1e200], 0..64)) {
            let exact: BigRational = values.iter().fold(BigRational::zero(), |acc, &v| acc + to_rational(v));
            let got = exact_sum(&values);
            let err = (to_rational(got) - &exact).abs();
            let bound = exact.abs() * BigRational::new(BigInt::from(1), BigInt::from(2).pow(53u32));
            prop_assert!(err <= bound, "sum {got} not within half ulp");
        }

        #[test]
        fn grouping_invariant(values in prop::collection::vec(-1e3f64..1e3, 1..200), split in 0usize..200) {
            let split = split.min(values.len());
            let mut left = ExactSum::new();
            values[..split].iter().for_each(|&v| left.add(v));
            let mut right = ExactSum::new();
            values[split..].iter().for_each(|&v| right.add(v));
            left.merge(&right);
            prop_assert_eq!(left.value().to_bits(), exact_sum(&values).to_bits());
        }
    }
}
