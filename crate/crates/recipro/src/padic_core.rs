use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use num_bigint::{BigInt, BigUint};
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub fn is_prime(n: u64) -> bool {
    if n < 2 {
        return false;
    }
    let mut d = 2;
    while d * d <= n {
        if n % d == 0 {
            return false;
        }
        d += 1;
    }
    true
}

/// p-adic valuation of a nonzero integer.
pub fn vp_i128(mut x: i128, p: u64) -> u32 {
    assert!(x != 0, "valuation of zero");
    let p = p as i128;
    let mut v = 0;
    while x % p == 0 {
        x /= p;
        v += 1;
    }
    v
}

pub fn vp_bigint(x: &BigInt, p: u64) -> Option<i64> {
    if x.is_zero() {
        return None;
    }
    let pb = BigInt::from(p);
    let mut x = x.clone();
    let mut v = 0;
    loop {
        let (q, r) = x.div_rem(&pb);
        if !r.is_zero() {
            return Some(v);
        }
        x = q;
        v += 1;
    }
}

/// Base-p digits of `i`, least significant first, exactly `len` of them.
pub fn digits(mut i: u64, p: u64, len: usize) -> Vec<u64> {
    let mut out = Vec::with_capacity(len);
    for _ in 0..len {
        out.push(i % p);
        i /= p;
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Valuation {
    Exact(i64),
    /// The value is zero at the working precision; the true valuation is at least this.
    AtLeast(i64),
}

impl Valuation {
    pub fn bound(self) -> i64 {
        match self {
            Valuation::Exact(v) | Valuation::AtLeast(v) => v,
        }
    }

    pub fn exact(self) -> Option<i64> {
        match self {
            Valuation::Exact(v) => Some(v),
            Valuation::AtLeast(_) => None,
        }
    }

    pub fn is_exact(self) -> bool {
        matches!(self, Valuation::Exact(_))
    }
}

impl fmt::Display for Valuation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Valuation::Exact(v) => write!(f, "{v}"),
            Valuation::AtLeast(v) => write!(f, ">={v}"),
        }
    }
}

/// Residue ring Z/p^n with the modulus stored in a machine word.
///
/// All hot loops run on this kernel; `PadicScalar` is the unbounded counterpart.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Zmod {
    p: u64,
    n: u32,
    m: u64,
}

impl Zmod {
    pub fn new(p: u64, n: u32) -> Result<Self> {
        let mut m: u64 = 1;
        for _ in 0..n {
            m = m
                .checked_mul(p)
                .filter(|&m| m < (1u64 << 62))
                .ok_or(Error::ModulusTooLarge { p, n })?;
        }
        Ok(Zmod { p, n, m })
    }

    pub fn p(&self) -> u64 {
        self.p
    }

    pub fn n(&self) -> u32 {
        self.n
    }

    pub fn modulus(&self) -> u64 {
        self.m
    }

    pub fn with_precision(&self, n: u32) -> Result<Self> {
        Zmod::new(self.p, n)
    }

    pub fn reduce(&self, x: i128) -> u64 {
        x.rem_euclid(self.m as i128) as u64
    }

    pub fn from_i64(&self, x: i64) -> u64 {
        self.reduce(x as i128)
    }

    /// Symmetric representative in (-m/2, m/2].
    pub fn signed(&self, a: u64) -> i64 {
        if a > self.m / 2 {
            a as i64 - self.m as i64
        } else {
            a as i64
        }
    }

    #[inline]
    pub fn add(&self, a: u64, b: u64) -> u64 {
        let s = a + b;
        if s >= self.m {
            s - self.m
        } else {
            s
        }
    }

    #[inline]
    pub fn sub(&self, a: u64, b: u64) -> u64 {
        if a >= b {
            a - b
        } else {
            a + self.m - b
        }
    }

    #[inline]
    pub fn neg(&self, a: u64) -> u64 {
        if a == 0 {
            0
        } else {
            self.m - a
        }
    }

    #[inline]
    pub fn mul(&self, a: u64, b: u64) -> u64 {
        if (a | b) >> 32 == 0 {
            return (a * b) % self.m;
        }
        ((a as u128 * b as u128) % self.m as u128) as u64
    }

    pub fn pow(&self, a: u64, mut e: u64) -> u64 {
        let mut base = a % self.m;
        let mut acc = 1 % self.m;
        while e > 0 {
            if e & 1 == 1 {
                acc = self.mul(acc, base);
            }
            base = self.mul(base, base);
            e >>= 1;
        }
        acc
    }

    pub fn inv(&self, a: u64) -> Option<u64> {
        if a % self.p == 0 {
            return None;
        }
        let (mut r0, mut r1) = (self.m as i128, a as i128);
        let (mut s0, mut s1) = (0i128, 1i128);
        while r1 != 0 {
            let q = r0 / r1;
            (r0, r1) = (r1, r0 - q * r1);
            (s0, s1) = (s1, s0 - q * s1);
        }
        debug_assert_eq!(r0, 1);
        Some(self.reduce(s0))
    }

    /// p^k reduced, which is 0 once k >= n.
    pub fn p_pow(&self, k: u32) -> u64 {
        if k >= self.n {
            0
        } else {
            self.p.pow(k)
        }
    }

    /// Valuation of a residue; zero reports n.
    pub fn val(&self, a: u64) -> u32 {
        if a == 0 {
            return self.n;
        }
        let mut v = 0;
        let mut a = a;
        while a % self.p == 0 {
            a /= self.p;
            v += 1;
        }
        v
    }

    pub fn valuation(&self, a: u64) -> Valuation {
        if a == 0 {
            Valuation::AtLeast(self.n as i64)
        } else {
            Valuation::Exact(self.val(a) as i64)
        }
    }

    /// Exact division by p^k of a residue divisible by p^k; the result is
    /// determined modulo p^(n-k) and returned as its least representative.
    pub fn div_p_pow(&self, a: u64, k: u32) -> u64 {
        debug_assert!(self.val(a) >= k);
        a / self.p.pow(k)
    }

    pub fn from_ratio(&self, num: i128, den: i128) -> Result<u64> {
        assert!(den != 0);
        if num == 0 {
            return Ok(0);
        }
        let vn = vp_i128(num, self.p) as i64;
        let vd = vp_i128(den, self.p) as i64;
        if vn < vd {
            return Err(Error::NotIntegral { valuation: vn - vd });
        }
        let pk = (self.p as i128).pow(vd as u32);
        let (num, den) = (num / pk, den / pk);
        let d = self.inv(self.reduce(den)).expect("unit denominator");
        Ok(self.mul(self.reduce(num), d))
    }

    pub fn from_bigint(&self, x: &BigInt) -> u64 {
        let m = BigInt::from(self.m);
        x.mod_floor(&m).to_u64().unwrap()
    }

    pub fn from_rational(&self, x: &BigRational) -> Result<u64> {
        if x.is_zero() {
            return Ok(0);
        }
        let vn = vp_bigint(x.numer(), self.p).unwrap();
        let vd = vp_bigint(x.denom(), self.p).unwrap();
        if vd > 0 {
            return Err(Error::NotIntegral { valuation: vn - vd });
        }
        let d = self.inv(self.from_bigint(x.denom())).unwrap();
        Ok(self.mul(self.from_bigint(x.numer()), d))
    }

    /// Generalized binomial C(a/b, k) for p not dividing b, accumulated as
    /// a valuation and a unit so that intermediate p-factors cancel exactly.
    pub fn binom_frac(&self, a: i64, b: i64, k: u64) -> Result<u64> {
        assert!(b != 0 && (b as i128) % (self.p as i128) != 0);
        let mut v: i64 = 0;
        let mut num_unit: u64 = 1 % self.m;
        let mut den_unit: u64 = 1 % self.m;
        let bb = self.from_i64(b);
        for i in 0..k as i64 {
            let t = a as i128 - i as i128 * b as i128;
            if t == 0 {
                return Ok(0);
            }
            let vt = vp_i128(t, self.p);
            v += vt as i64;
            num_unit = self.mul(num_unit, self.reduce(t / (self.p as i128).pow(vt)));
            let c = (i + 1) as i128;
            let vc = vp_i128(c, self.p);
            v -= vc as i64;
            den_unit = self.mul(
                den_unit,
                self.mul(bb, self.reduce(c / (self.p as i128).pow(vc))),
            );
        }
        if v < 0 {
            return Err(Error::NotIntegral { valuation: v });
        }
        let u = self.mul(num_unit, self.inv(den_unit).unwrap());
        Ok(self.mul(self.p_pow(v.min(self.n as i64) as u32), u))
    }
}

/// An element of Z/p^N carried with arbitrary-precision integers.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct PadicScalar {
    residue: BigUint,
    p: u64,
    n: u32,
}

impl PadicScalar {
    pub fn new(value: &BigInt, p: u64, n: u32) -> Self {
        let m = BigInt::from(p).pow(n);
        let r = value.mod_floor(&m);
        PadicScalar {
            residue: r.to_biguint().unwrap(),
            p,
            n,
        }
    }

    pub fn from_i64(value: i64, p: u64, n: u32) -> Self {
        Self::new(&BigInt::from(value), p, n)
    }

    pub fn zero(p: u64, n: u32) -> Self {
        Self::from_i64(0, p, n)
    }

    pub fn one(p: u64, n: u32) -> Self {
        Self::from_i64(1, p, n)
    }

    pub fn p(&self) -> u64 {
        self.p
    }

    pub fn precision(&self) -> u32 {
        self.n
    }

    pub fn residue(&self) -> &BigUint {
        &self.residue
    }

    pub fn modulus(&self) -> BigUint {
        BigUint::from(self.p).pow(self.n)
    }

    pub fn is_zero(&self) -> bool {
        self.residue.is_zero()
    }

    pub fn valuation(&self) -> Valuation {
        if self.residue.is_zero() {
            return Valuation::AtLeast(self.n as i64);
        }
        let v = vp_bigint(&BigInt::from(self.residue.clone()), self.p).unwrap();
        Valuation::Exact(v)
    }

    pub fn inverse(&self) -> Result<Self> {
        let m = BigInt::from(self.modulus());
        let a = BigInt::from(self.residue.clone());
        let g = a.extended_gcd(&m);
        if !g.gcd.is_one() {
            return Err(Error::NotInvertible);
        }
        Ok(Self::new(&g.x, self.p, self.n))
    }

    pub fn pow(&self, e: u64) -> Self {
        let r = self.residue.modpow(&BigUint::from(e), &self.modulus());
        PadicScalar {
            residue: r,
            p: self.p,
            n: self.n,
        }
    }

    pub fn to_u64(&self) -> Option<u64> {
        self.residue.to_u64()
    }

    fn check(&self, other: &Self) {
        assert!(
            self.p == other.p && self.n == other.n,
            "mixed moduli: {}^{} vs {}^{}",
            self.p,
            self.n,
            other.p,
            other.n
        );
    }

    fn wrap(&self, r: BigInt) -> Self {
        Self::new(&r, self.p, self.n)
    }
}

impl fmt::Display for PadicScalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} mod {}^{}", self.residue, self.p, self.n)
    }
}

impl Add for &PadicScalar {
    type Output = PadicScalar;
    fn add(self, rhs: &PadicScalar) -> PadicScalar {
        self.check(rhs);
        self.wrap(BigInt::from(&self.residue + &rhs.residue))
    }
}

impl Sub for &PadicScalar {
    type Output = PadicScalar;
    fn sub(self, rhs: &PadicScalar) -> PadicScalar {
        self.check(rhs);
        self.wrap(BigInt::from(self.residue.clone()) - BigInt::from(rhs.residue.clone()))
    }
}

impl Mul for &PadicScalar {
    type Output = PadicScalar;
    fn mul(self, rhs: &PadicScalar) -> PadicScalar {
        self.check(rhs);
        self.wrap(BigInt::from(&self.residue * &rhs.residue))
    }
}

impl Neg for &PadicScalar {
    type Output = PadicScalar;
    fn neg(self) -> PadicScalar {
        self.wrap(-BigInt::from(self.residue.clone()))
    }
}

/// A rational number viewed p-adically. The denominator may carry powers of
/// p (harmonic numbers past p need this); conversion to a residue checks
/// integrality.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct PadicRational {
    p: u64,
    value: BigRational,
}

impl PadicRational {
    pub fn new(p: u64, num: i64, den: i64) -> Self {
        assert!(den != 0);
        PadicRational {
            p,
            value: BigRational::new(BigInt::from(num), BigInt::from(den)),
        }
    }

    pub fn from_rational(p: u64, value: BigRational) -> Self {
        PadicRational { p, value }
    }

    pub fn value(&self) -> &BigRational {
        &self.value
    }

    pub fn numer(&self) -> &BigInt {
        self.value.numer()
    }

    pub fn denom(&self) -> &BigInt {
        self.value.denom()
    }

    pub fn p(&self) -> u64 {
        self.p
    }

    /// None for zero.
    pub fn valuation(&self) -> Option<i64> {
        let vn = vp_bigint(self.value.numer(), self.p)?;
        Some(vn - vp_bigint(self.value.denom(), self.p).unwrap())
    }

    pub fn is_p_integral(&self) -> bool {
        vp_bigint(self.value.denom(), self.p).unwrap() == 0
    }

    pub fn to_scalar(&self, n: u32) -> Result<PadicScalar> {
        if !self.is_p_integral() {
            return Err(Error::NotIntegral {
                valuation: self.valuation().unwrap(),
            });
        }
        let m = BigInt::from(self.p).pow(n);
        let d = self.value.denom().extended_gcd(&m).x;
        Ok(PadicScalar::new(&(self.value.numer() * d), self.p, n))
    }

    pub fn to_zmod(&self, zm: &Zmod) -> Result<u64> {
        zm.from_rational(&self.value)
    }
}

/// m(m-1)...(m-n+1)/n!
pub fn binom_rat(m: &PadicRational, n: u64) -> PadicRational {
    let mut acc = BigRational::one();
    let mut t = m.value.clone();
    for k in 1..=n {
        acc = acc * &t / BigInt::from(k);
        t -= BigRational::one();
    }
    PadicRational::from_rational(m.p, acc)
}

pub fn harmonic(p: u64, n: u64) -> PadicRational {
    let mut acc = BigRational::zero();
    for i in 1..=n {
        acc += BigRational::new(BigInt::one(), BigInt::from(i));
    }
    PadicRational::from_rational(p, acc)
}

pub fn frac_part(x: &BigRational) -> BigRational {
    x - x.floor()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn q(a: i64, b: i64) -> BigRational {
        BigRational::new(BigInt::from(a), BigInt::from(b))
    }

    #[test]
    fn binom_examples() {
        let m = PadicRational::new(5, 7, 3);
        assert_eq!(binom_rat(&m, 0).value(), &q(1, 1));
        assert_eq!(binom_rat(&PadicRational::new(5, 1, 2), 2).value(), &q(-1, 8));
        assert_eq!(binom_rat(&PadicRational::new(5, 5, 2), 2).value(), &q(15, 8));
    }

    #[test]
    fn harmonic_examples() {
        assert!(harmonic(5, 0).value().is_zero());
        let zm = Zmod::new(5, 3).unwrap();
        assert_eq!(harmonic(5, 4).to_zmod(&zm).unwrap() % 5, 0);
        assert_eq!(harmonic(5, 3).to_zmod(&zm).unwrap() % 5, 1);
        assert!(matches!(
            harmonic(5, 5).to_scalar(3),
            Err(Error::NotIntegral { valuation: -1 })
        ));
    }

    #[test]
    fn frac_part_examples() {
        assert_eq!(frac_part(&q(-1, 4)), q(3, 4));
        assert_eq!(frac_part(&q(7, 4)), q(3, 4));
        assert_eq!(frac_part(&q(2, 1)), q(0, 1));
    }

    #[test]
    fn zero_valuation_is_tagged() {
        let z = PadicScalar::zero(5, 4);
        assert_eq!(z.valuation(), Valuation::AtLeast(4));
        assert_ne!(z.valuation(), Valuation::Exact(4));
        let x = PadicScalar::from_i64(250, 5, 4);
        assert_eq!(x.valuation(), Valuation::Exact(3));
    }

    #[test]
    fn non_integral_binomial_reports_valuation() {
        let b = binom_rat(&PadicRational::new(5, 1, 5), 1);
        assert!(matches!(b.to_scalar(2), Err(Error::NotIntegral { valuation: -1 })));
    }

    #[test]
    fn modulus_cap() {
        assert!(Zmod::new(13, 16).is_ok());
        assert!(matches!(Zmod::new(13, 17), Err(Error::ModulusTooLarge { .. })));
    }

    #[test]
    fn wolstenholme_weak() {
        for p in [5u64, 7, 11, 13, 17] {
            let h = harmonic(p, p - 1);
            assert!(h.valuation().unwrap() >= 1);
        }
    }

    proptest! {
        #[test]
        fn pascal(num in -60i64..60, den in 1i64..12, n in 1u64..9) {
            prop_assume!(den % 5 != 0);
            let m = PadicRational::new(5, num, den);
            let m1 = PadicRational::from_rational(5, m.value() - BigRational::one());
            let lhs = binom_rat(&m, n);
            let rhs = binom_rat(&m1, n - 1).value() + binom_rat(&m1, n).value();
            prop_assert_eq!(lhs.value(), &rhs);
        }

        #[test]
        fn fast_binomial_matches_rational(num in -200i64..200, den in 1i64..9, k in 0u64..30) {
            prop_assume!(den % 5 != 0);
            let zm = Zmod::new(5, 6).unwrap();
            let exact = binom_rat(&PadicRational::new(5, num, den), k);
            prop_assert_eq!(zm.binom_frac(num, den, k).unwrap(), exact.to_zmod(&zm).unwrap());
        }

        #[test]
        fn valuation_multiplicative(a in 0i64..1_000_000, b in 0i64..1_000_000) {
            let n = 6;
            let x = PadicScalar::from_i64(a, 7, n);
            let y = PadicScalar::from_i64(b, 7, n);
            let prod = &x * &y;
            let expected = (x.valuation().bound() + y.valuation().bound()).min(n as i64);
            prop_assert_eq!(prod.valuation().bound(), expected);
            prop_assert_eq!(prod.valuation().is_exact(), expected < n as i64);
        }

        #[test]
        fn zmod_inverse(a in 1u64..1_000_000) {
            let zm = Zmod::new(13, 5).unwrap();
            let a = a % zm.modulus();
            if let Some(b) = zm.inv(a) {
                prop_assert_eq!(zm.mul(a, b), 1);
            } else {
                prop_assert_eq!(a % 13, 0);
            }
        }
    }
}
