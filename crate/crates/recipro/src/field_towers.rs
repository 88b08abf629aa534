//! The unramified ring O_F mod p^N, Eisenstein extensions of it (cyclotomic
//! levels and Kummer rings), and the level-2 over level-1 trace.

use std::sync::Arc;

use num_bigint::BigInt;
use num_integer::Integer;
use num_traits::{One, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, poly};
use crate::padic_core::{is_prime, Valuation, Zmod};

pub const MAX_F: usize = 8;

/// Coordinates of an element of O_F in the basis 1, t, ..., t^(f-1).
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, Default, Serialize, Deserialize)]
pub struct UnramElem(pub [u64; MAX_F]);

impl UnramElem {
    pub fn coords(&self, f: usize) -> &[u64] {
        &self.0[..f]
    }
}

#[derive(Clone, Debug)]
pub struct UnramContext {
    zm: Zmod,
    f: usize,
    g: Vec<u64>,
    red: Vec<[u64; MAX_F]>,
    frob: Vec<Vec<[u64; MAX_F]>>,
}

fn first_irreducible(p: u64, f: usize) -> Result<Vec<u64>> {
    let total = p.checked_pow(f as u32).ok_or_else(|| Error::Config("degree too large".into()))?;
    for idx in 0..total {
        let mut g: Vec<u64> = crate::padic_core::digits(idx, p, f);
        g.push(1);
        if poly::is_irreducible(&g, p) {
            return Ok(g);
        }
    }
    Err(Error::Internal(format!("no irreducible polynomial of degree {f} mod {p}")))
}

pub fn make_unram(p: u64, f: usize, n: u32) -> Result<Arc<UnramContext>> {
    UnramContext::new(p, f, n).map(Arc::new)
}

impl UnramContext {
    pub fn new(p: u64, f: usize, n: u32) -> Result<Self> {
        if p == 2 || !is_prime(p) {
            return Err(Error::Config(format!("{p} is not an odd prime")));
        }
        if f == 0 || f > MAX_F {
            return Err(Error::Config(format!("residue degree {f} outside 1..={MAX_F}")));
        }
        if n == 0 {
            return Err(Error::Config("precision must be positive".into()));
        }
        let zm = Zmod::new(p, n)?;
        let g = first_irreducible(p, f)?;
        let mut red = Vec::with_capacity(f);
        let mut cur = [0u64; MAX_F];
        for i in 0..f {
            cur[i] = zm.neg(g[i]);
        }
        for _ in 0..f.max(1) {
            red.push(cur);
            let top = cur[f - 1];
            let mut next = [0u64; MAX_F];
            for i in (1..f).rev() {
                next[i] = cur[i - 1];
            }
            for i in 0..f {
                next[i] = zm.sub(next[i], zm.mul(top, g[i]));
            }
            cur = next;
        }
        let mut ctx = UnramContext {
            zm,
            f,
            g,
            red,
            frob: Vec::new(),
        };
        ctx.frob = ctx.build_frobenius()?;
        Ok(ctx)
    }

    pub fn with_precision(&self, n: u32) -> Result<Arc<UnramContext>> {
        make_unram(self.p(), self.f, n)
    }

    fn build_frobenius(&self) -> Result<Vec<Vec<[u64; MAX_F]>>> {
        let t = self.gen();
        let mut s = self.pow(&t, self.p());
        let eval = |x: &UnramElem, c: &[u64]| {
            let mut acc = UnramElem::default();
            for &ci in c.iter().rev() {
                acc = self.add(&self.mul(&acc, x), &self.from_u64(ci));
            }
            acc
        };
        let dg: Vec<u64> = (1..self.g.len())
            .map(|i| self.zm.mul(self.g[i], i as u64 % self.zm.modulus()))
            .collect();
        let mut converged = false;
        for _ in 0..64 {
            let v = eval(&s, &self.g);
            if self.is_zero(&v) {
                converged = true;
                break;
            }
            let d = eval(&s, &dg);
            let dinv = self.inv(&d).ok_or_else(|| Error::Internal("inseparable modulus".into()))?;
            s = self.sub(&s, &self.mul(&v, &dinv));
        }
        if !converged {
            return Err(Error::Convergence("Frobenius lift".into()));
        }
        let mut images = vec![t];
        for _ in 1..self.f {
            let prev = *images.last().unwrap();
            images.push(self.compose(&prev, &s));
        }
        let mut frob = Vec::with_capacity(self.f);
        for img in &images {
            let mut cols = Vec::with_capacity(self.f);
            let mut pw = self.one();
            for _ in 0..self.f {
                cols.push(pw.0);
                pw = self.mul(&pw, img);
            }
            frob.push(cols);
        }
        let back = self.compose(&images[self.f - 1], &s);
        if back != t {
            return Err(Error::Internal("Frobenius does not have order f".into()));
        }
        Ok(frob)
    }

    /// Evaluate the coordinate polynomial of `x` at `y`.
    fn compose(&self, x: &UnramElem, y: &UnramElem) -> UnramElem {
        let mut acc = UnramElem::default();
        for i in (0..self.f).rev() {
            acc = self.add(&self.mul(&acc, y), &self.from_u64(x.0[i]));
        }
        acc
    }

    pub fn zm(&self) -> &Zmod {
        &self.zm
    }

    pub fn p(&self) -> u64 {
        self.zm.p()
    }

    pub fn f(&self) -> usize {
        self.f
    }

    pub fn n(&self) -> u32 {
        self.zm.n()
    }

    pub fn q(&self) -> u64 {
        self.p().pow(self.f as u32)
    }

    pub fn modulus_poly(&self) -> &[u64] {
        &self.g
    }

    pub fn zero(&self) -> UnramElem {
        UnramElem::default()
    }

    pub fn one(&self) -> UnramElem {
        self.from_u64(1)
    }

    pub fn gen(&self) -> UnramElem {
        if self.f == 1 {
            return self.from_u64(self.zm.neg(self.g[0]));
        }
        let mut x = UnramElem::default();
        x.0[1] = 1;
        x
    }

    pub fn from_u64(&self, c: u64) -> UnramElem {
        let mut x = UnramElem::default();
        x.0[0] = c % self.zm.modulus();
        x
    }

    pub fn from_i64(&self, c: i64) -> UnramElem {
        self.from_u64(self.zm.from_i64(c))
    }

    pub fn from_coords(&self, c: &[u64]) -> UnramElem {
        let mut x = UnramElem::default();
        for (i, &ci) in c.iter().enumerate().take(self.f) {
            x.0[i] = ci % self.zm.modulus();
        }
        x
    }

    /// Reduce an element of a context over the same residue field at any precision.
    pub fn coerce(&self, x: &UnramElem) -> UnramElem {
        self.from_coords(&x.0[..self.f])
    }

    pub fn is_zero(&self, x: &UnramElem) -> bool {
        x.0[..self.f].iter().all(|&c| c == 0)
    }

    pub fn add(&self, a: &UnramElem, b: &UnramElem) -> UnramElem {
        let mut x = UnramElem::default();
        for i in 0..self.f {
            x.0[i] = self.zm.add(a.0[i], b.0[i]);
        }
        x
    }

    pub fn sub(&self, a: &UnramElem, b: &UnramElem) -> UnramElem {
        let mut x = UnramElem::default();
        for i in 0..self.f {
            x.0[i] = self.zm.sub(a.0[i], b.0[i]);
        }
        x
    }

    pub fn neg(&self, a: &UnramElem) -> UnramElem {
        let mut x = UnramElem::default();
        for i in 0..self.f {
            x.0[i] = self.zm.neg(a.0[i]);
        }
        x
    }

    pub fn scale(&self, a: &UnramElem, c: u64) -> UnramElem {
        let mut x = UnramElem::default();
        for i in 0..self.f {
            x.0[i] = self.zm.mul(a.0[i], c);
        }
        x
    }

    #[inline]
    pub fn mul(&self, a: &UnramElem, b: &UnramElem) -> UnramElem {
        let f = self.f;
        let zm = &self.zm;
        if f == 1 {
            let mut x = UnramElem::default();
            x.0[0] = zm.mul(a.0[0], b.0[0]);
            return x;
        }
        let m = zm.modulus() as u128;
        let mut prod = [0u128; 2 * MAX_F];
        for i in 0..f {
            if a.0[i] == 0 {
                continue;
            }
            for j in 0..f {
                prod[i + j] = (prod[i + j] + a.0[i] as u128 * b.0[j] as u128) % m;
            }
        }
        let mut x = UnramElem::default();
        for i in 0..f {
            x.0[i] = prod[i] as u64;
        }
        for k in f..2 * f - 1 {
            let c = prod[k] as u64;
            if c == 0 {
                continue;
            }
            let r = &self.red[k - f];
            for i in 0..f {
                x.0[i] = zm.add(x.0[i], zm.mul(c, r[i]));
            }
        }
        x
    }

    pub fn pow(&self, a: &UnramElem, mut e: u64) -> UnramElem {
        let mut acc = self.one();
        let mut b = *a;
        while e > 0 {
            if e & 1 == 1 {
                acc = self.mul(&acc, &b);
            }
            b = self.mul(&b, &b);
            e >>= 1;
        }
        acc
    }

    pub fn is_unit(&self, a: &UnramElem) -> bool {
        a.0[..self.f].iter().any(|&c| c % self.p() != 0)
    }

    pub fn inv(&self, a: &UnramElem) -> Option<UnramElem> {
        if !self.is_unit(a) {
            return None;
        }
        let one = self.one();
        let two = self.from_u64(2);
        let mut y = self.pow(a, self.q() - 2);
        for _ in 0..64 {
            let ay = self.mul(a, &y);
            if ay == one {
                return Some(y);
            }
            y = self.mul(&y, &self.sub(&two, &ay));
        }
        None
    }

    pub fn frob(&self, a: &UnramElem, k: i64) -> UnramElem {
        let k = k.rem_euclid(self.f as i64) as usize;
        if k == 0 {
            return *a;
        }
        let cols = &self.frob[k];
        let mut x = UnramElem::default();
        for i in 0..self.f {
            let c = a.0[i];
            if c == 0 {
                continue;
            }
            for j in 0..self.f {
                x.0[j] = self.zm.add(x.0[j], self.zm.mul(c, cols[i][j]));
            }
        }
        x
    }

    /// Z_p-coordinate matrix (row-major, f x f) of x -> sigma^k(x).
    pub fn frob_matrix(&self, k: i64) -> Vec<u64> {
        let k = k.rem_euclid(self.f as i64) as usize;
        let f = self.f;
        let mut m = vec![0u64; f * f];
        for i in 0..f {
            for j in 0..f {
                m[j * f + i] = if k == 0 {
                    u64::from(i == j)
                } else {
                    self.frob[k][i][j]
                };
            }
        }
        m
    }

    /// Z_p-coordinate matrix (row-major) of multiplication by `a`.
    pub fn mul_matrix(&self, a: &UnramElem) -> Vec<u64> {
        let f = self.f;
        let mut m = vec![0u64; f * f];
        let mut basis = self.one();
        let t = self.gen();
        for i in 0..f {
            let col = self.mul(a, &basis);
            for j in 0..f {
                m[j * f + i] = col.0[j];
            }
            basis = self.mul(&basis, &t);
        }
        m
    }

    pub fn trace(&self, a: &UnramElem) -> u64 {
        let mut s = self.zero();
        for k in 0..self.f {
            s = self.add(&s, &self.frob(a, k as i64));
        }
        debug_assert!(s.0[1..self.f].iter().all(|&c| c == 0));
        s.0[0]
    }

    pub fn norm(&self, a: &UnramElem) -> u64 {
        let mut s = self.one();
        for k in 0..self.f {
            s = self.mul(&s, &self.frob(a, k as i64));
        }
        s.0[0]
    }

    pub fn valuation(&self, a: &UnramElem) -> Valuation {
        if self.is_zero(a) {
            return Valuation::AtLeast(self.n() as i64);
        }
        let v = a.0[..self.f].iter().map(|&c| self.zm.val(c)).min().unwrap();
        Valuation::Exact(v as i64)
    }

    pub fn val_u32(&self, a: &UnramElem) -> u32 {
        a.0[..self.f].iter().map(|&c| self.zm.val(c)).min().unwrap()
    }

    /// Divide an element divisible by p^k.
    pub fn div_p_pow(&self, a: &UnramElem, k: u32) -> UnramElem {
        let mut x = UnramElem::default();
        for i in 0..self.f {
            x.0[i] = self.zm.div_p_pow(a.0[i], k);
        }
        x
    }

    pub fn reduce_mod_p(&self, a: &UnramElem) -> UnramElem {
        let mut x = UnramElem::default();
        for i in 0..self.f {
            x.0[i] = a.0[i] % self.p();
        }
        x
    }

    /// The residue-field element with base-p digit index `idx`.
    pub fn residue_from_index(&self, idx: u64) -> UnramElem {
        self.from_coords(&crate::padic_core::digits(idx, self.p(), self.f))
    }

    pub fn residue_index(&self, a: &UnramElem) -> u64 {
        let p = self.p();
        (0..self.f).rev().fold(0, |acc, i| acc * p + a.0[i] % p)
    }

    pub fn teichmuller(&self, c: &UnramElem) -> UnramElem {
        let mut x = self.reduce_mod_p(c);
        if self.is_zero(&x) {
            return x;
        }
        for _ in 0..self.n() {
            x = self.pow(&x, self.q());
        }
        x
    }

    /// Smallest-index generator of the residue field's multiplicative group.
    pub fn residue_generator(&self) -> UnramElem {
        let q = self.q();
        let primes: Vec<u64> = (2..q)
            .filter(|&r| (q - 1) % r == 0 && is_prime(r))
            .collect();
        let red = UnramContext::new(self.p(), self.f, 1).expect("residue field");
        for idx in 1..q {
            let c = red.residue_from_index(idx);
            if primes
                .iter()
                .all(|&r| red.pow(&c, (q - 1) / r) != red.one())
            {
                return self.from_coords(&c.0[..self.f]);
            }
        }
        unreachable!("multiplicative group of a finite field is cyclic")
    }

    /// A fixed primitive d-th root of unity, the Teichmuller lift of a
    /// power of the residue generator.
    pub fn root_of_unity(&self, d: u64) -> Result<UnramElem> {
        if (self.q() - 1) % d != 0 {
            return Err(Error::Config(format!(
                "{d} does not divide q - 1 = {}",
                self.q() - 1
            )));
        }
        let g = self.teichmuller(&self.residue_generator());
        Ok(self.pow(&g, (self.q() - 1) / d))
    }

    pub fn is_normal_basis(&self, xi: &UnramElem) -> bool {
        let f = self.f;
        let mut m = vec![0u64; f * f];
        for k in 0..f {
            let c = self.frob(xi, k as i64);
            for j in 0..f {
                m[k * f + j] = c.0[j];
            }
        }
        linalg::det_mod_prime(self.p(), f, &m) != 0
    }

    /// The first `count` normal-basis elements in residue-index order, lifted by coordinates.
    pub fn normal_basis_candidates(&self, count: usize) -> Vec<UnramElem> {
        (1..self.q())
            .map(|i| self.residue_from_index(i))
            .filter(|x| self.is_normal_basis(x))
            .take(count)
            .collect()
    }
}

/// Element of an Eisenstein extension, coordinates in the basis x^j.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct RamElem {
    pub c: Vec<UnramElem>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum RamKind {
    /// Phi_{p^level}(1 + x^e).
    Cyclotomic { e: u64, level: u32 },
    /// w^d - p0.
    Kummer { d: u64 },
}

/// O_F[x]/(h) for an Eisenstein polynomial h with Z_p coefficients, so that
/// x^E = p u for a unit u.
#[derive(Clone, Debug)]
pub struct RamContext {
    base: Arc<UnramContext>,
    kind: RamKind,
    deg: usize,
    h: Vec<u64>,
    u: RamElem,
    u_inv: RamElem,
}

fn cyclotomic_shifted(p: u64, e: u64, level: u32) -> Vec<BigInt> {
    // Phi_{p^n}(1+y) = sum_{k<p} (1+y)^(k p^(n-1)), then y = x^e.
    let step = p.pow(level - 1);
    let degy = (step * (p - 1)) as usize;
    let mut cy = vec![BigInt::zero(); degy + 1];
    for k in 0..p {
        let m = k * step;
        let mut b = BigInt::one();
        for j in 0..=m {
            cy[j as usize] += &b;
            b = b * BigInt::from(m - j) / BigInt::from(j + 1);
        }
    }
    let mut hx = vec![BigInt::zero(); degy * e as usize + 1];
    for (j, c) in cy.into_iter().enumerate() {
        hx[j * e as usize] = c;
    }
    hx
}

pub fn make_ram(base: &Arc<UnramContext>, e: u64, level: u32) -> Result<Arc<RamContext>> {
    let p = base.p();
    if e == 0 || e % p == 0 {
        return Err(Error::Config(format!("ramification parameter {e} must be prime to {p}")));
    }
    if !(1..=2).contains(&level) {
        return Err(Error::Unsupported(format!("tower level {level}")));
    }
    let h = cyclotomic_shifted(p, e, level);
    RamContext::from_integer_poly(base, RamKind::Cyclotomic { e, level }, &h).map(Arc::new)
}

/// O_F[w]/(w^d - p0) with p0 = -p.
pub fn make_kummer(base: &Arc<UnramContext>, d: u64) -> Result<KummerContext> {
    make_kummer_with(base, d, -1)
}

/// Kummer ring with p0 = zeta p, where zeta is the Teichmuller lift of `p0_unit` mod p.
pub fn make_kummer_with(base: &Arc<UnramContext>, d: u64, p0_unit: i64) -> Result<KummerContext> {
    let p = base.p();
    if d == 0 || d % p == 0 {
        return Err(Error::Config(format!("Kummer degree {d} must be prime to {p}")));
    }
    let unit = p0_unit.rem_euclid(p as i64) as u64;
    if unit == 0 {
        return Err(Error::Config("p0 must be p times a root of unity".into()));
    }
    let (q, n) = (base.q(), base.n());
    if (q - 1) % d != 0 {
        return Err(Error::Config(format!("Kummer degree {d} does not divide q - 1 = {}", q - 1)));
    }
    // Teichmuller representative of the unit in Z_p, computed at precision n + 1.
    let zm1 = Zmod::new(p, n + 1)?;
    let mut t = unit;
    for _ in 0..n + 1 {
        t = zm1.pow(t, p);
    }
    let mut h = vec![BigInt::zero(); d as usize + 1];
    h[0] = -(BigInt::from(t) * BigInt::from(p));
    h[d as usize] = BigInt::one();
    let ring = Arc::new(RamContext::from_integer_poly(base, RamKind::Kummer { d }, &h)?);
    let zeta = base.root_of_unity(d)?;
    Ok(KummerContext {
        ring,
        d,
        zeta_d: zeta,
    })
}

impl RamContext {
    fn from_integer_poly(base: &Arc<UnramContext>, kind: RamKind, h: &[BigInt]) -> Result<Self> {
        let p = base.p();
        let zm = *base.zm();
        let deg = h.len() - 1;
        if !h[deg].is_one() {
            return Err(Error::Internal("modulus not monic".into()));
        }
        let pb = BigInt::from(p);
        for (j, c) in h.iter().enumerate().take(deg) {
            if !c.is_multiple_of(&pb) || (j == 0 && (c / &pb).is_multiple_of(&pb)) {
                return Err(Error::Internal("modulus not Eisenstein".into()));
            }
        }
        let hm: Vec<u64> = h[..deg].iter().map(|c| zm.from_bigint(c)).collect();
        let u = RamElem {
            c: h[..deg]
                .iter()
                .map(|c| base.from_u64(zm.from_bigint(&(-(c / &pb)))))
                .collect(),
        };
        let mut ring = RamContext {
            base: base.clone(),
            kind,
            deg,
            h: hm,
            u: u.clone(),
            u_inv: u.clone(),
        };
        ring.u_inv = ring
            .inv_unit(&u)
            .ok_or_else(|| Error::Internal("x^E / p is not a unit".into()))?;
        Ok(ring)
    }

    pub fn base(&self) -> &Arc<UnramContext> {
        &self.base
    }

    pub fn kind(&self) -> &RamKind {
        &self.kind
    }

    /// Absolute ramification index E = v_x(p).
    pub fn deg(&self) -> usize {
        self.deg
    }

    pub fn n(&self) -> u32 {
        self.base.n()
    }

    pub fn zero(&self) -> RamElem {
        RamElem {
            c: vec![UnramElem::default(); self.deg],
        }
    }

    pub fn one(&self) -> RamElem {
        self.from_base(&self.base.one())
    }

    pub fn from_base(&self, a: &UnramElem) -> RamElem {
        let mut r = self.zero();
        r.c[0] = *a;
        r
    }

    pub fn from_i64(&self, a: i64) -> RamElem {
        self.from_base(&self.base.from_i64(a))
    }

    pub fn gen(&self) -> RamElem {
        self.mul_x(&self.one())
    }

    /// x^E / p.
    pub fn u(&self) -> &RamElem {
        &self.u
    }

    pub fn u_inv(&self) -> &RamElem {
        &self.u_inv
    }

    pub fn is_zero(&self, a: &RamElem) -> bool {
        a.c.iter().all(|c| self.base.is_zero(c))
    }

    pub fn add(&self, a: &RamElem, b: &RamElem) -> RamElem {
        RamElem {
            c: a.c.iter().zip(&b.c).map(|(x, y)| self.base.add(x, y)).collect(),
        }
    }

    pub fn sub(&self, a: &RamElem, b: &RamElem) -> RamElem {
        RamElem {
            c: a.c.iter().zip(&b.c).map(|(x, y)| self.base.sub(x, y)).collect(),
        }
    }

    pub fn neg(&self, a: &RamElem) -> RamElem {
        RamElem {
            c: a.c.iter().map(|x| self.base.neg(x)).collect(),
        }
    }

    pub fn scale(&self, a: &RamElem, s: &UnramElem) -> RamElem {
        RamElem {
            c: a.c.iter().map(|x| self.base.mul(x, s)).collect(),
        }
    }

    pub fn scale_int(&self, a: &RamElem, s: u64) -> RamElem {
        RamElem {
            c: a.c.iter().map(|x| self.base.scale(x, s)).collect(),
        }
    }

    pub fn mul_x(&self, a: &RamElem) -> RamElem {
        let b = &self.base;
        let top = a.c[self.deg - 1];
        let mut c = Vec::with_capacity(self.deg);
        c.push(b.neg(&b.scale(&top, self.h[0])));
        for j in 1..self.deg {
            c.push(b.sub(&a.c[j - 1], &b.scale(&top, self.h[j])));
        }
        RamElem { c }
    }

    pub fn mul(&self, a: &RamElem, b: &RamElem) -> RamElem {
        let base = &self.base;
        let e = self.deg;
        let mut prod = vec![UnramElem::default(); 2 * e - 1];
        for (i, x) in a.c.iter().enumerate() {
            if base.is_zero(x) {
                continue;
            }
            for (j, y) in b.c.iter().enumerate() {
                if base.is_zero(y) {
                    continue;
                }
                prod[i + j] = base.add(&prod[i + j], &base.mul(x, y));
            }
        }
        for k in (e..2 * e - 1).rev() {
            let top = prod[k];
            if base.is_zero(&top) {
                continue;
            }
            for j in 0..e {
                if self.h[j] != 0 {
                    prod[k - e + j] = base.sub(&prod[k - e + j], &base.scale(&top, self.h[j]));
                }
            }
        }
        prod.truncate(e);
        RamElem { c: prod }
    }

    pub fn pow(&self, a: &RamElem, mut k: u64) -> RamElem {
        let mut acc = self.one();
        let mut b = a.clone();
        while k > 0 {
            if k & 1 == 1 {
                acc = self.mul(&acc, &b);
            }
            k >>= 1;
            if k > 0 {
                b = self.mul(&b, &b);
            }
        }
        acc
    }

    pub fn is_unit(&self, a: &RamElem) -> bool {
        self.base.is_unit(&a.c[0])
    }

    pub fn inv_unit(&self, a: &RamElem) -> Option<RamElem> {
        let c0 = self.base.inv(&a.c[0])?;
        let two = self.from_i64(2);
        let mut y = self.from_base(&c0);
        let one = self.one();
        for _ in 0..64 {
            let ay = self.mul(a, &y);
            if ay == one {
                return Some(y);
            }
            y = self.mul(&y, &self.sub(&two, &ay));
        }
        None
    }

    pub fn frob(&self, a: &RamElem, k: i64) -> RamElem {
        RamElem {
            c: a.c.iter().map(|x| self.base.frob(x, k)).collect(),
        }
    }

    /// v_x(a) = min_j (E v_p(a_j) + j), exact below E N.
    pub fn valuation(&self, a: &RamElem) -> Valuation {
        let cap = self.deg as i64 * self.n() as i64;
        let v = a
            .c
            .iter()
            .enumerate()
            .filter(|(_, c)| !self.base.is_zero(c))
            .map(|(j, c)| self.deg as i64 * self.base.val_u32(c) as i64 + j as i64)
            .min();
        match v {
            Some(v) if v < cap => Valuation::Exact(v),
            _ => Valuation::AtLeast(cap),
        }
    }

    /// Tr to O_F as the trace of multiplication on the basis x^j.
    pub fn trace_to_base(&self, a: &RamElem) -> UnramElem {
        let mut acc = self.base.zero();
        let mut y = a.clone();
        for j in 0..self.deg {
            acc = self.base.add(&acc, &y.c[j]);
            y = self.mul_x(&y);
        }
        acc
    }

    /// Horner evaluation of sum c_i y^i.
    pub fn eval_poly(&self, coeffs: &[UnramElem], y: &RamElem) -> RamElem {
        let mut acc = self.zero();
        for c in coeffs.iter().rev() {
            acc = self.mul(&acc, y);
            acc.c[0] = self.base.add(&acc.c[0], c);
        }
        acc
    }

    /// Horner evaluation for ring-element coefficients.
    pub fn eval_ram_poly(&self, coeffs: &[RamElem], y: &RamElem) -> RamElem {
        let mut acc = self.zero();
        for c in coeffs.iter().rev() {
            acc = self.add(&self.mul(&acc, y), c);
        }
        acc
    }

    /// Divide by p an element with all coordinates divisible by p; the top
    /// digit of the result is lost.
    pub fn div_p(&self, a: &RamElem) -> Result<RamElem> {
        let p = self.base.p();
        let mut c = Vec::with_capacity(self.deg);
        for x in &a.c {
            if x.0[..self.base.f()].iter().any(|&v| v % p != 0) {
                return Err(Error::NotIntegral { valuation: -1 });
            }
            c.push(self.base.div_p_pow(x, 1));
        }
        Ok(RamElem { c })
    }

    /// Coerce coordinates into this ring (same modulus, other precision).
    pub fn coerce(&self, a: &RamElem) -> RamElem {
        RamElem {
            c: a.c.iter().map(|x| self.base.coerce(x)).collect(),
        }
    }

    /// p^k x^s for s possibly negative, written as p^(k') body.
    pub fn x_pow(&self, s: i64) -> FracElem {
        let e = self.deg as i64;
        let k = s.div_euclid(e);
        let r = s.rem_euclid(e);
        let mut body = self.one();
        for _ in 0..r {
            body = self.mul_x(&body);
        }
        if k >= 0 {
            body = self.mul(&body, &self.pow(&self.u, k as u64));
        } else {
            body = self.mul(&body, &self.pow(&self.u_inv, (-k) as u64));
        }
        FracElem {
            pexp: k,
            body,
        }
    }

    pub fn frac(&self, a: RamElem) -> FracElem {
        FracElem { pexp: 0, body: a }
    }

    pub fn frac_add(&self, a: &FracElem, b: &FracElem) -> FracElem {
        let k = a.pexp.min(b.pexp);
        let lift = |x: &FracElem| {
            let d = (x.pexp - k) as u32;
            self.scale_int(&x.body, self.base.zm().p_pow(d))
        };
        FracElem {
            pexp: k,
            body: self.add(&lift(a), &lift(b)),
        }
    }

    pub fn frac_sub(&self, a: &FracElem, b: &FracElem) -> FracElem {
        let nb = FracElem {
            pexp: b.pexp,
            body: self.neg(&b.body),
        };
        self.frac_add(a, &nb)
    }

    pub fn frac_mul(&self, a: &FracElem, b: &FracElem) -> FracElem {
        FracElem {
            pexp: a.pexp + b.pexp,
            body: self.mul(&a.body, &b.body),
        }
    }

    /// Valuation in x-units of p^k body; the body is known mod p^N so the
    /// value is known mod x^(E (k + N)).
    pub fn frac_valuation(&self, a: &FracElem) -> Valuation {
        let e = self.deg as i64;
        match self.valuation(&a.body) {
            Valuation::Exact(v) => Valuation::Exact(v + e * a.pexp),
            Valuation::AtLeast(v) => Valuation::AtLeast(v + e * a.pexp),
        }
    }

    /// Integral representative when the value lies in the ring modulo the
    /// known precision; the result is known mod p^(N + pexp).
    pub fn frac_to_integral(&self, a: &FracElem) -> Result<RamElem> {
        if a.pexp >= 0 {
            return Ok(self.scale_int(&a.body, self.base.zm().p_pow(a.pexp as u32)));
        }
        let mut body = a.body.clone();
        for _ in 0..(-a.pexp) {
            body = self.div_p(&body)?;
        }
        Ok(body)
    }

    /// Evaluate sum_{i >= lo} a_i y^i at y = x v for a unit v, producing
    /// an element of the fraction field.
    pub fn eval_laurent(&self, coeffs: &[UnramElem], lo: i64, v: &RamElem) -> Result<FracElem> {
        let y = self.mul_x(v);
        if lo >= 0 {
            let mut body = self.eval_poly(coeffs, &y);
            body = self.mul(&body, &self.pow(&y, lo as u64));
            return Ok(self.frac(body));
        }
        let e = self.deg as i64;
        let k0 = (-lo + e - 1) / e;
        let shift = (lo + k0 * e) as u64;
        let mut body = self.eval_poly(coeffs, &y);
        body = self.mul(&body, &self.pow(&y, shift));
        // y^(-k0 E) = (p u v^E)^(-k0)
        let vinv = self
            .inv_unit(v)
            .ok_or_else(|| Error::Internal("evaluation point is not a uniformizer".into()))?;
        let w = self.mul(&self.pow(&self.u_inv, k0 as u64), &self.pow(&vinv, (k0 * e) as u64));
        Ok(FracElem {
            pexp: -k0,
            body: self.mul(&body, &w),
        })
    }
}

/// The element p^pexp * body of the fraction field.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FracElem {
    pub pexp: i64,
    pub body: RamElem,
}

/// Kummer ring O_F[w]/(w^d - p0) with the action of Delta = Z/d given by
/// delta_k(w) = zeta_d^k w.
#[derive(Clone, Debug)]
pub struct KummerContext {
    pub ring: Arc<RamContext>,
    pub d: u64,
    pub zeta_d: UnramElem,
}

impl KummerContext {
    pub fn base(&self) -> &Arc<UnramContext> {
        self.ring.base()
    }

    /// eta_0(delta_k) = zeta_d^k.
    pub fn eta0(&self, k: i64) -> UnramElem {
        let k = k.rem_euclid(self.d as i64) as u64;
        self.base().pow(&self.zeta_d, k)
    }

    /// delta_k acting on an element: w^j -> eta_0(delta_k)^j w^j.
    pub fn delta(&self, a: &RamElem, k: i64) -> RamElem {
        let b = self.base();
        let z = self.eta0(k);
        let mut s = b.one();
        let mut c = Vec::with_capacity(a.c.len());
        for x in &a.c {
            c.push(b.mul(x, &s));
            s = b.mul(&s, &z);
        }
        RamElem { c }
    }

    /// Solution z of Phi_p(1 + z^e) = 0 with z = w mod w^(e+1), where
    /// d = e (p - 1), returned as the unit v with z = w v.
    pub fn hensel_varpi_unit(&self) -> Result<RamElem> {
        let b = self.base();
        let p = b.p();
        let d = self.d;
        if d % (p - 1) != 0 {
            return Err(Error::Config(format!("Kummer degree {d} is not a multiple of p - 1")));
        }
        let e = d / (p - 1);
        let r = &self.ring;
        let zm = *b.zm();
        let cap = r.deg() * r.n() as usize;
        // U(Z) = 1 + sum_{j=2}^{p-1} (C(p,j)/p) Z^(e(j-1)); z^d = -p U(z).
        let mut binom = vec![BigInt::one()];
        for j in 1..=p {
            let prev = binom.last().unwrap().clone();
            binom.push(prev * BigInt::from(p - j + 1) / BigInt::from(j));
        }
        let ucoef: Vec<u64> = (2..p)
            .map(|j| zm.from_bigint(&(&binom[j as usize] / BigInt::from(p))))
            .collect();
        let root_coefs: Vec<u64> = (0..=cap as u64)
            .map(|k| zm.binom_frac(1, d as i64, k))
            .collect::<Result<_>>()?;
        let mut v = r.one();
        let mut prev: Option<RamElem> = None;
        for _ in 0..(cap + 2) {
            let z = r.mul_x(&v);
            let ze = r.pow(&z, e);
            let mut t = r.zero();
            let mut zpow = ze.clone();
            for &c in &ucoef {
                t = r.add(&t, &r.scale_int(&zpow, c));
                zpow = r.mul(&zpow, &ze);
            }
            // (1 + t)^(1/d) by the binomial series; v_x(t) >= e.
            let mut acc = r.zero();
            let mut tp = r.one();
            for (k, &c) in root_coefs.iter().enumerate() {
                if k as usize * e as usize > cap {
                    break;
                }
                acc = r.add(&acc, &r.scale_int(&tp, c));
                tp = r.mul(&tp, &t);
            }
            if prev.as_ref() == Some(&acc) {
                break;
            }
            prev = Some(acc.clone());
            v = acc;
        }
        let z = r.mul_x(&v);
        let one = r.one();
        let ze = r.add(&one, &r.pow(&z, e));
        let check = (0..p).fold(r.zero(), |s, k| r.add(&s, &r.pow(&ze, k)));
        if !r.is_zero(&check) {
            return Err(Error::Convergence("Hensel root of Phi_p(1 + z^e)".into()));
        }
        Ok(v)
    }
}

/// The level-2 cyclotomic ring over the level-1 ring, with the embedding
/// x1 -> x_img and the relative trace.
#[derive(Clone, Debug)]
pub struct TowerPair {
    pub k1: Arc<RamContext>,
    pub k2: Arc<RamContext>,
    pub x_img: RamElem,
    /// trace_z[k] = Tr_{K2/K1}(z^k) for k < E2, as level-1 elements.
    trace_z: Vec<RamElem>,
}

impl TowerPair {
    pub fn new(base: &Arc<UnramContext>, e: u64) -> Result<Self> {
        let k1 = make_ram(base, e, 1)?;
        let k2 = make_ram(base, e, 2)?;
        let p = base.p();
        let zm = *base.zm();
        let (e1, e2) = (k1.deg(), k2.deg());
        // V = sum_{j=1}^{p-1} C(p,j) z^(-e(p-j)); p z^(-k) = z^(E2-k) / u2.
        let mut vsum = k2.zero();
        let mut c = BigInt::one();
        for j in 1..p {
            c = c * BigInt::from(p - j + 1) / BigInt::from(j);
            let cj = zm.from_bigint(&(&c / BigInt::from(p)));
            let k = (e * (p - j)) as usize;
            let mut t = k2.u_inv().clone();
            for _ in 0..(e2 - k) {
                t = k2.mul_x(&t);
            }
            vsum = k2.add(&vsum, &k2.scale_int(&t, cj));
        }
        let cap = e2 * k2.n() as usize;
        let mut root = k2.zero();
        let mut tp = k2.one();
        let mut k = 0u64;
        loop {
            if k > 0 && (k as usize) > cap {
                break;
            }
            root = k2.add(&root, &k2.scale_int(&tp, zm.binom_frac(1, e as i64, k)?));
            tp = k2.mul(&tp, &vsum);
            if k2.is_zero(&tp) {
                break;
            }
            k += 1;
        }
        let z = k2.gen();
        let x_img = k2.mul(&k2.pow(&z, p), &root);
        // h1(x_img) = 0
        let one = k2.one();
        let xe = k2.add(&one, &k2.pow(&x_img, e));
        let chk = (0..p).fold(k2.zero(), |s, k| k2.add(&s, &k2.pow(&xe, k)));
        if !k2.is_zero(&chk) {
            return Err(Error::Internal("level-2 embedding fails the level-1 equation".into()));
        }
        // Basis x_img^a z^i (a < E1, i < p) in z-coordinates, over Z_p.
        let mut cols: Vec<RamElem> = vec![k2.zero(); e2];
        let mut xa = k2.one();
        for a in 0..e1 {
            let mut y = xa.clone();
            for i in 0..p as usize {
                cols[a * p as usize + i] = y.clone();
                y = k2.mul_x(&y);
            }
            xa = k2.mul(&xa, &x_img);
        }
        let mut mat = vec![0u64; e2 * e2];
        for (col, y) in cols.iter().enumerate() {
            for (row, c) in y.c.iter().enumerate() {
                debug_assert!(c.0[1..base.f()].iter().all(|&v| v == 0));
                mat[row * e2 + col] = c.0[0];
            }
        }
        let inv = linalg::inverse(&zm, e2, &mat)?;
        let decompose = |y: &RamElem| -> Vec<RamElem> {
            // returns the K1-components Y_i with y = sum Y_i(x_img) z^i
            let mut comps = vec![k1.zero(); p as usize];
            for a in 0..e1 {
                for i in 0..p as usize {
                    let col = a * p as usize + i;
                    let mut acc = base.zero();
                    for (row, c) in y.c.iter().enumerate() {
                        let m = inv[col * e2 + row];
                        if m != 0 {
                            acc = base.add(&acc, &base.scale(c, m));
                        }
                    }
                    comps[i].c[a] = acc;
                }
            }
            comps
        };
        let mut trace_z = Vec::with_capacity(e2);
        let mut zk = k2.one();
        for _ in 0..e2 {
            let mut t = k1.zero();
            let mut y = zk.clone();
            for i in 0..p as usize {
                t = k1.add(&t, &decompose(&y)[i]);
                y = k2.mul_x(&y);
            }
            trace_z.push(t);
            zk = k2.mul_x(&zk);
        }
        Ok(TowerPair {
            k1,
            k2,
            x_img,
            trace_z,
        })
    }

    pub fn embed(&self, a: &RamElem) -> RamElem {
        let k2 = &self.k2;
        let coeffs: Vec<RamElem> = a.c.iter().map(|c| k2.from_base(c)).collect();
        k2.eval_ram_poly(&coeffs, &self.x_img)
    }

    pub fn trace(&self, y: &RamElem) -> RamElem {
        let k1 = &self.k1;
        let mut acc = k1.zero();
        for (c, t) in y.c.iter().zip(&self.trace_z) {
            if !k1.base().is_zero(c) {
                acc = k1.add(&acc, &k1.scale(t, c));
            }
        }
        acc
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_unram(ctx: &UnramContext, rng: &mut ChaCha8Rng) -> UnramElem {
        let c: Vec<u64> = (0..ctx.f()).map(|_| rng.gen_range(0..ctx.zm().modulus())).collect();
        ctx.from_coords(&c)
    }

    fn rand_ram(r: &RamContext, rng: &mut ChaCha8Rng) -> RamElem {
        RamElem {
            c: (0..r.deg()).map(|_| rand_unram(r.base(), rng)).collect(),
        }
    }

    #[test]
    fn unramified_examples() {
        let c = make_unram(5, 1, 4).unwrap();
        assert_eq!(c.modulus_poly(), &[0, 1]);
        let x = c.from_u64(123);
        assert_eq!(c.frob(&x, 1), x);

        let c = make_unram(5, 2, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let x = rand_unram(&c, &mut rng);
            assert_eq!(c.frob(&c.frob(&x, 1), 1), x);
        }
        let t = c.teichmuller(&c.gen());
        assert_eq!(c.pow(&t, 24), c.one());

        let c = make_unram(13, 2, 3).unwrap();
        assert_eq!(c.trace(&c.one()), 2);
        assert_eq!(c.norm(&c.from_u64(13)), 169);
    }

    #[test]
    fn teichmuller_lift() {
        let c = make_unram(5, 1, 4).unwrap();
        assert_eq!(c.teichmuller(&c.one()), c.one());
        let t = c.teichmuller(&c.from_u64(2));
        // Independent oracle: Newton iteration on x^4 - 1 starting at 2.
        let zm = Zmod::new(5, 4).unwrap();
        let mut x = 2u64;
        for _ in 0..6 {
            let fx = zm.sub(zm.pow(x, 4), 1);
            let dfx = zm.mul(4, zm.pow(x, 3));
            x = zm.sub(x, zm.mul(fx, zm.inv(dfx).unwrap()));
        }
        assert_eq!(t.0[0], x);
        assert_eq!(zm.pow(x, 4), 1);
        assert_eq!(x % 5, 2);
        let c2 = make_unram(5, 2, 3).unwrap();
        for i in 1..25 {
            for j in 1..25 {
                let a = c2.residue_from_index(i);
                let b = c2.residue_from_index(j);
                let lhs = c2.mul(&c2.teichmuller(&a), &c2.teichmuller(&b));
                assert_eq!(lhs, c2.teichmuller(&c2.mul(&a, &b)));
            }
        }
    }

    #[test]
    fn frobenius_is_ring_hom_of_order_f() {
        let c = make_unram(5, 3, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let a = rand_unram(&c, &mut rng);
            let b = rand_unram(&c, &mut rng);
            assert_eq!(c.frob(&c.mul(&a, &b), 1), c.mul(&c.frob(&a, 1), &c.frob(&b, 1)));
            assert_eq!(c.frob(&c.add(&a, &b), 1), c.add(&c.frob(&a, 1), &c.frob(&b, 1)));
            assert_eq!(c.frob(&c.frob(&c.frob(&a, 1), 1), 1), a);
        }
        let t = c.gen();
        assert_ne!(c.frob(&t, 1), t);
        let tp = c.pow(&t, 5);
        assert_eq!(c.reduce_mod_p(&c.frob(&t, 1)), c.reduce_mod_p(&tp));
    }

    #[test]
    fn cyclotomic_level_one() {
        let base = make_unram(5, 1, 4).unwrap();
        let r = make_ram(&base, 1, 1).unwrap();
        assert_eq!(r.deg(), 4);
        assert_eq!(r.valuation(&r.from_i64(5)), Valuation::Exact(4));
        // Tr(zeta_5) = -1 and Tr(1) = 4
        let zeta = r.add(&r.one(), &r.gen());
        assert_eq!(r.trace_to_base(&zeta), base.from_i64(-1));
        assert_eq!(r.trace_to_base(&r.one()), base.from_u64(4));
        let r2 = make_ram(&base, 2, 1).unwrap();
        let zeta = r2.add(&r2.one(), &r2.pow(&r2.gen(), 2));
        assert_eq!(r2.valuation(&r2.sub(&zeta, &r2.one())), Valuation::Exact(2));
        assert_eq!(r2.pow(&zeta, 5), r2.one());
        assert_ne!(zeta, r2.one());
    }

    #[test]
    fn kummer_varpi() {
        let base = make_unram(5, 2, 4).unwrap();
        let k = make_kummer(&base, 8).unwrap();
        let r = &k.ring;
        let v = k.hensel_varpi_unit().unwrap();
        let z = r.mul_x(&v);
        // z^8 + 5 has valuation >= 9
        let t = r.add(&r.pow(&z, 8), &r.from_i64(5));
        assert!(r.valuation(&t).bound() >= 9);
        // z = w mod w^(e+1)
        let diff = r.sub(&z, &r.gen());
        assert!(r.valuation(&diff).bound() >= 3);
        // zeta_5 = 1 + z^2 has valuation 2 after subtracting 1
        assert_eq!(r.valuation(&r.pow(&z, 2)), Valuation::Exact(2));
    }

    #[test]
    fn tower_trace() {
        let base = make_unram(5, 1, 3).unwrap();
        let tp = TowerPair::new(&base, 1).unwrap();
        assert_eq!(tp.trace(&tp.k2.one()), tp.k1.from_i64(5));
        // The trace of an embedded element is p times it.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..5 {
            let a = rand_ram(&tp.k1, &mut rng);
            assert_eq!(tp.trace(&tp.embed(&a)), tp.k1.scale_int(&a, 5));
        }
        // The level-2 root of unity zeta_25 = 1 + z has trace 0 over level 1.
        let zeta = tp.k2.add(&tp.k2.one(), &tp.k2.gen());
        assert!(tp.k1.is_zero(&tp.trace(&zeta)));
        // Its p-th power is the level-1 zeta_5.
        let z5 = tp.k2.pow(&zeta, 5);
        let emb = tp.embed(&tp.k1.add(&tp.k1.one(), &tp.k1.gen()));
        assert_eq!(z5, emb);
    }

    #[test]
    fn trace_is_sigma_equivariant() {
        let base = make_unram(5, 2, 3).unwrap();
        let r = make_ram(&base, 2, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..10 {
            let a = rand_ram(&r, &mut rng);
            let fixed = r.add(&a, &r.frob(&a, 1));
            let t = r.trace_to_base(&fixed);
            assert_eq!(base.frob(&t, 1), t);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]
        #[test]
        fn valuation_additive(seed in 0u64..10_000) {
            let base = make_unram(5, 2, 6).unwrap();
            let r = make_ram(&base, 2, 1).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut a = rand_ram(&r, &mut rng);
            let mut b = rand_ram(&r, &mut rng);
            for _ in 0..rng.gen_range(0..6) { a = r.mul_x(&a); }
            for _ in 0..rng.gen_range(0..6) { b = r.mul_x(&b); }
            let bound = (r.deg() * r.n() as usize / 2) as i64;
            if let (Valuation::Exact(va), Valuation::Exact(vb)) = (r.valuation(&a), r.valuation(&b)) {
                if va < bound && vb < bound {
                    prop_assert_eq!(r.valuation(&r.mul(&a, &b)), Valuation::Exact(va + vb));
                }
            }
        }
    }
}
