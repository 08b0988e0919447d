//! Checked wide-integer helpers shared by the memory and communication
//! models. All byte accounting runs in u128 with explicit overflow
//! detection; fractional terms are kept as exact rationals and ceiled
//! once, at the byte level.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Overflow;

pub fn mul(a: u128, b: u128) -> Result<u128, Overflow> {
    a.checked_mul(b).ok_or(Overflow)
}

pub fn add(a: u128, b: u128) -> Result<u128, Overflow> {
    a.checked_add(b).ok_or(Overflow)
}

/// Product of a slice of factors, checked.
pub fn prod(factors: &[u128]) -> Result<u128, Overflow> {
    factors.iter().try_fold(1u128, |acc, &f| mul(acc, f))
}

/// ceil(num / den) in exact integer arithmetic. `den` must be nonzero.
pub fn ceil_div(num: u128, den: u128) -> u128 {
    debug_assert!(den != 0);
    num.div_euclid(den) + u128::from(num.rem_euclid(den) != 0)
}
