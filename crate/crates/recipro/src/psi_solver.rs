//! The coefficients b_{m,n} and beta_{n,j}, the psi = 1 congruence system,
//! witnesses for it and the leading-term bounds.

use std::collections::BTreeMap;
use std::sync::Arc;

use num_bigint::BigInt;
use num_traits::{One, Zero};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field_towers::{UnramContext, UnramElem};
use crate::laurent_ring::{LaurentSeries, LeadIndex, SeriesContext, Tail};
use crate::linalg;
use crate::padic_core::Zmod;

fn binomial(n: u64, k: u64) -> BigInt {
    if k > n {
        return BigInt::zero();
    }
    let mut b = BigInt::one();
    for i in 0..k {
        b = b * BigInt::from(n - i) / BigInt::from(i + 1);
    }
    b
}

fn residue(m: i64, p: u64) -> u64 {
    m.rem_euclid(p as i64) as u64
}

/// b_{m,n} in closed form: (-1)^m' sum_t (-1)^t C(n, m' + t p) with
/// 0 <= m' < p the residue of m. For n < 2p only t = 0, 1 contribute.
pub fn b_closed(p: u64, m: i64, n: u64) -> BigInt {
    let mb = residue(m, p);
    let sign = |k: u64| if k % 2 == 0 { BigInt::one() } else { -BigInt::one() };
    if n < p {
        return sign(mb) * binomial(n, mb);
    }
    if n < 2 * p {
        return sign(mb) * binomial(n, mb) - sign(mb) * binomial(n, mb + p);
    }
    let mut acc = BigInt::zero();
    let mut t = 0;
    while mb + t * p <= n {
        acc += sign(t) * binomial(n, mb + t * p);
        t += 1;
    }
    sign(mb) * acc
}

/// b_{m,n} from p^{-1} sum over zeta in mu_p of zeta^m (1 - zeta^{-1})^n,
/// evaluated in Z[x]/Phi_p(x) with the trace of x^k being -1 for p not dividing k.
pub fn b_cyclotomic(p: u64, m: i64, n: u64) -> BigInt {
    let d = (p - 1) as usize;
    // reduce a polynomial in x modulo x^p - 1 first, then Phi_p
    let mut poly = vec![BigInt::zero(); p as usize];
    poly[residue(m, p) as usize] = BigInt::one();
    for _ in 0..n {
        // multiply by (1 - x^{p-1})
        let mut next = poly.clone();
        for (k, c) in poly.iter().enumerate() {
            let t = (k + p as usize - 1) % p as usize;
            next[t] -= c;
        }
        poly = next;
    }
    // x^{p-1} = -(1 + x + ... + x^{p-2})
    let top = poly[d].clone();
    let mut red: Vec<BigInt> = poly[..d].iter().map(|c| c - &top).collect();
    let tr = &red[0] * BigInt::from(p - 1) - red.drain(1..).fold(BigInt::zero(), |s, c| s + c);
    let at_one = if n == 0 { BigInt::one() } else { BigInt::zero() };
    let total = tr + at_one;
    assert!((&total % BigInt::from(p)).is_zero());
    total / BigInt::from(p)
}

pub fn b_coeff(p: u64, m: i64, n: u64) -> BigInt {
    if n < 2 * p {
        b_closed(p, m, n)
    } else {
        b_cyclotomic(p, m, n)
    }
}

/// Exponent of the guaranteed p-power dividing b_{m,n}, n >= 1.
pub fn b_divisibility(p: u64, n: u64) -> u32 {
    ((n + p - 2) / (p - 1)) as u32 - 1
}

/// beta_{n,j}: coefficients of (sum_{j=1}^{p-1} C(p,j)/p x^j)^n.
pub fn beta_row(p: u64, n: u64) -> Vec<BigInt> {
    let base: Vec<BigInt> = (0..p)
        .map(|j| if j == 0 { BigInt::zero() } else { binomial(p, j) / BigInt::from(p) })
        .collect();
    let mut row = vec![BigInt::one()];
    for _ in 0..n {
        let mut next = vec![BigInt::zero(); row.len() + base.len() - 1];
        for (i, a) in row.iter().enumerate() {
            if a.is_zero() {
                continue;
            }
            for (j, b) in base.iter().enumerate() {
                next[i + j] += a * b;
            }
        }
        row = next;
    }
    row
}

pub fn beta_coeff(p: u64, n: u64, j: u64) -> BigInt {
    beta_row(p, n).get(j as usize).cloned().unwrap_or_default()
}

#[derive(Clone, Debug)]
pub struct BCoeffTable {
    pub p: u64,
    pub n_max: u64,
    /// b[m mod p][n]
    pub b: Vec<Vec<BigInt>>,
}

impl BCoeffTable {
    pub fn new(p: u64, n_max: u64) -> Self {
        let b = (0..p)
            .map(|r| (0..=n_max).map(|n| b_coeff(p, r as i64, n)).collect())
            .collect();
        BCoeffTable { p, n_max, b }
    }

    pub fn get(&self, m: i64, n: u64) -> &BigInt {
        &self.b[residue(m, self.p) as usize][n as usize]
    }
}

#[derive(Clone, Debug)]
pub struct BetaCoeffTable {
    pub p: u64,
    pub n_max: u64,
    /// beta[n][j] for j <= n (p - 1)
    pub beta: Vec<Vec<BigInt>>,
}

impl BetaCoeffTable {
    pub fn new(p: u64, n_max: u64) -> Self {
        BetaCoeffTable {
            p,
            n_max,
            beta: (0..=n_max).map(|n| beta_row(p, n)).collect(),
        }
    }

    pub fn get(&self, n: u64, j: u64) -> BigInt {
        self.beta[n as usize].get(j as usize).cloned().unwrap_or_default()
    }
}

/// Residues of both tables modulo p^N, with n_max = N (p - 1) for b (the
/// first index with b = 0 mod p^N for all larger n) and n < N for beta.
#[derive(Clone, Debug)]
pub struct CoeffTables {
    pub zm: Zmod,
    pub b: Vec<Vec<u64>>,
    pub beta: Vec<Vec<u64>>,
}

impl CoeffTables {
    pub fn new(zm: Zmod) -> Self {
        let p = zm.p();
        let n = zm.n() as u64;
        let bt = BCoeffTable::new(p, n * (p - 1));
        let b = bt
            .b
            .iter()
            .map(|row| row.iter().map(|x| zm.from_bigint(x)).collect())
            .collect();
        let beta = BetaCoeffTable::new(p, n.saturating_sub(1))
            .beta
            .iter()
            .map(|row| row.iter().map(|x| zm.from_bigint(x)).collect())
            .collect();
        CoeffTables { zm, b, beta }
    }

    pub fn n_max(&self) -> u64 {
        self.zm.n() as u64 * (self.zm.p() - 1)
    }

    /// Largest j with beta_{n,j} p^n nonzero mod p^N.
    pub fn j_max(&self) -> u64 {
        (self.zm.n() as u64 - 1) * (self.zm.p() - 1)
    }

    /// b_{r,n} for the p-adic integer r = num/e, using num * e^{-1} mod p.
    pub fn b_frac(&self, num: i64, e: i64, n: u64) -> u64 {
        let p = self.zm.p();
        let einv = Zmod::new(p, 1).unwrap().inv(e.rem_euclid(p as i64) as u64).unwrap();
        let r = (residue(num, p) * einv) % p;
        self.b[r as usize][n as usize]
    }

    /// beta_{n,j} p^n mod p^N.
    pub fn beta_p(&self, n: u64, j: u64) -> u64 {
        if n >= self.zm.n() as u64 {
            return 0;
        }
        let row = &self.beta[n as usize];
        match row.get(j as usize) {
            Some(&b) => self.zm.mul(b, self.zm.p_pow(n as u32)),
            None => 0,
        }
    }
}

fn tables_at(ctx: &SeriesContext, nu: u32) -> Result<(Arc<UnramContext>, CoeffTables)> {
    if nu == 0 || nu > ctx.n() {
        return Err(Error::Precision(format!("nu = {nu} outside 1..={}", ctx.n())));
    }
    let base = ctx.base.with_precision(nu)?;
    let tables = CoeffTables::new(*base.zm());
    Ok((base, tables))
}

/// Weight of a_i in the coefficient N = i - e n of p^{-1} Tr(a):
/// C(i/e, n) b_{i/e, n}.
fn trace_weight(zm: &Zmod, t: &CoeffTables, i: i64, e: i64, n: u64) -> u64 {
    let b = t.b_frac(i, e, n);
    if b == 0 {
        return 0;
    }
    zm.mul(zm.binom_frac(i, e, n).expect("p-integral binomial"), b)
}

/// Weight of sigma(a_m) in the coefficient N = p m - e j of phi(a):
/// sum_n C(m/e, n) p^n beta_{n,j}.
fn frob_weight(zm: &Zmod, t: &CoeffTables, m: i64, e: i64, j: u64) -> u64 {
    let mut w = 0;
    for n in 0..zm.n() as u64 {
        let b = t.beta_p(n, j);
        if b != 0 {
            w = zm.add(w, zm.mul(zm.binom_frac(m, e, n).expect("p-integral binomial"), b));
        }
    }
    w
}

/// Residuals of p^{-1} Tr(a) - phi(a) modulo p^nu.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MonsterReport {
    pub nu: u32,
    /// Every coefficient entering the equation for N in this range is known.
    pub range: (i64, i64),
    pub checked: usize,
    pub checked_in_pz: usize,
    /// (N, v_p of the residual) for each nonzero residual.
    pub nonzero: Vec<(i64, u32)>,
    pub holds: bool,
    pub holds_on_pz: bool,
}

/// Indices N whose equation only involves known coefficients of `a`.
pub fn monster_range(ctx: &SeriesContext, a: &LaurentSeries, nu: u32) -> (i64, i64) {
    let p = ctx.p() as i64;
    let e = ctx.ei();
    let nmax = nu as i64 * (p - 1);
    let ej = e * (nu as i64 - 1) * (p - 1);
    let lo = match a.below {
        Tail::Zero => (a.lo - e * nmax).min(p * a.lo - ej),
        Tail::Unknown => a.lo.max(p * a.lo),
    };
    let hi = match a.above {
        Tail::Zero => a.hi.max(p * a.hi),
        Tail::Unknown => (a.hi - e * nmax).min(p * a.hi - ej),
    };
    (lo, hi)
}

/// Evaluate the psi = 1 equation coefficientwise modulo p^nu by scattering
/// each known coefficient into the residuals it touches.
pub fn monster_check(ctx: &SeriesContext, a: &LaurentSeries, nu: u32) -> Result<MonsterReport> {
    let (base, t) = tables_at(ctx, nu)?;
    let zm = *base.zm();
    let p = ctx.p() as i64;
    let e = ctx.ei();
    let nmax = t.n_max() as i64;
    let jmax = t.j_max() as i64;
    let (lo, hi) = monster_range(ctx, a, nu);
    if lo > hi {
        return Err(Error::Window {
            need_lo: a.lo,
            need_hi: a.lo + 2 * e * nmax,
            have_lo: a.lo,
            have_hi: a.hi,
        });
    }
    let mut res = vec![base.zero(); (hi - lo + 1) as usize];
    for (k, x) in a.c.iter().enumerate() {
        let x = base.coerce(x);
        if base.is_zero(&x) {
            continue;
        }
        let i = a.lo + k as i64;
        for n in 0..=nmax {
            let nn = i - e * n;
            if nn < lo || nn > hi {
                continue;
            }
            let w = trace_weight(&zm, &t, i, e, n as u64);
            if w != 0 {
                let r = &mut res[(nn - lo) as usize];
                *r = base.add(r, &base.scale(&x, w));
            }
        }
        let xs = base.frob(&x, 1);
        for j in 0..=jmax {
            let nn = p * i - e * j;
            if nn < lo || nn > hi {
                continue;
            }
            let w = frob_weight(&zm, &t, i, e, j as u64);
            if w != 0 {
                let r = &mut res[(nn - lo) as usize];
                *r = base.sub(r, &base.scale(&xs, w));
            }
        }
    }
    let nonzero: Vec<(i64, u32)> = res
        .iter()
        .enumerate()
        .filter(|(_, r)| !base.is_zero(r))
        .map(|(k, r)| (lo + k as i64, base.val_u32(r)))
        .collect();
    let checked = res.len();
    let checked_in_pz = (lo..=hi).filter(|n| n % p == 0).count();
    Ok(MonsterReport {
        nu,
        range: (lo, hi),
        checked,
        checked_in_pz,
        holds: nonzero.is_empty(),
        holds_on_pz: nonzero.iter().all(|(n, _)| n % p != 0),
        nonzero,
    })
}

/// An element of A_K^{psi=1} modulo p^nu on a window.
#[derive(Clone, Debug)]
pub struct PsiOneWitness {
    pub series: LaurentSeries,
    pub nu: u32,
    /// l_1, ..., l_min(nu, 3).
    pub lead: Vec<LeadIndex>,
    pub report: MonsterReport,
}

impl PsiOneWitness {
    /// Check a series and record its leading data; fails unless every
    /// residual vanishes mod p^nu.
    pub fn certify(ctx: &SeriesContext, series: LaurentSeries, nu: u32) -> Result<Self> {
        let report = monster_check(ctx, &series, nu)?;
        if !report.holds {
            let (n, v) = report.nonzero[0];
            return Err(Error::Internal(format!(
                "psi = 1 residual at N = {n} has valuation {v} < {nu}"
            )));
        }
        let lead = (1..=nu.min(3)).map(|v| ctx.l_nu(&series, v)).collect();
        Ok(PsiOneWitness {
            series,
            nu,
            lead,
            report,
        })
    }

    pub fn l(&self) -> LeadIndex {
        self.lead[0]
    }

    pub fn leading_coeff(&self) -> Option<UnramElem> {
        self.l().exact().and_then(|i| self.series.get(i))
    }

    pub fn to_json(&self, ctx: &SeriesContext) -> serde_json::Value {
        ctx.to_json(&self.series, Some(self.nu))
    }

    /// Import a fixture and re-verify it at its recorded precision.
    pub fn from_json(ctx: &SeriesContext, v: &serde_json::Value) -> Result<Self> {
        let (series, nu) = ctx.from_json(v)?;
        let nu = nu.ok_or_else(|| Error::Config("witness without verified_mod".into()))?;
        Self::certify(ctx, series, nu)
    }
}

/// Congruence conditions imposed on a solution.
#[derive(Clone, Debug, Default)]
pub struct Pins {
    /// (bound, s): a_i = 0 mod p^s for every i < bound.
    pub floors: Vec<(i64, u32)>,
    /// a_i = value mod p^s at single indices, overriding the floors.
    pub points: BTreeMap<i64, (UnramElem, u32)>,
}

impl Pins {
    /// a_i = 0 mod p for i < n and a_n = c mod p.
    pub fn leading(n: i64, c: UnramElem) -> Self {
        let mut pins = Pins::default();
        pins.floors.push((n, 1));
        pins.points.insert(n, (c, 1));
        pins
    }

    fn at(&self, i: i64) -> Option<(UnramElem, u32)> {
        if let Some(&v) = self.points.get(&i) {
            return Some(v);
        }
        self.floors
            .iter()
            .filter(|(b, _)| i < *b)
            .map(|&(_, s)| s)
            .max()
            .map(|s| (UnramElem::default(), s))
    }

    fn top(&self) -> i64 {
        let a = self.points.keys().next_back().copied();
        let b = self.floors.iter().map(|(b, _)| *b).max();
        a.into_iter().chain(b).max().unwrap_or(0)
    }

    fn bottom(&self) -> Option<i64> {
        self.points.keys().next().copied()
    }
}

/// Default unknown window [-3ep, nu 2e(p-1) + top].
pub fn psi_window(ctx: &SeriesContext, nu: u32, top: i64) -> (i64, i64) {
    let e = ctx.ei();
    let p = ctx.p() as i64;
    (-3 * e * p, nu as i64 * 2 * ctx.d as i64 + top.max(0))
}

/// Dense solve of the equations for all N over Z/p^nu for the coordinates of
/// a_i, i in [wlo, whi], with a_i = 0 below and pins substituted as
/// x = v + p^s z.
fn solve_window<R: Rng>(
    ctx: &SeriesContext,
    nu: u32,
    (wlo, whi): (i64, i64),
    pins: &Pins,
    rng: Option<&mut R>,
) -> Result<LaurentSeries> {
    let (base, t) = tables_at(ctx, nu)?;
    let zm = *base.zm();
    let f = base.f();
    let p = ctx.p() as i64;
    let e = ctx.ei();
    let nmax = t.n_max() as i64;
    let jmax = t.j_max() as i64;
    let width = (whi - wlo + 1) as usize;
    let cols = width * f;
    let col = |i: i64, s: usize| (i - wlo) as usize * f + s;
    let frob = base.frob_matrix(1);

    let mut shift = vec![0u64; cols];
    let mut step = vec![1u64; cols];
    for i in wlo..=whi {
        if let Some((v, s)) = pins.at(i) {
            let ps = if s >= nu { 0 } else { zm.p_pow(s) };
            for r in 0..f {
                shift[col(i, r)] = v.0[r] % zm.modulus();
                step[col(i, r)] = ps;
            }
        }
    }

    let n_lo = (wlo - e * nmax).min(p * wlo - e * jmax);
    let n_hi = (whi - e * nmax).min(p * whi - e * jmax);
    let mut mat: Vec<u64> = Vec::new();
    let mut rhs: Vec<u64> = Vec::new();
    let mut rows = 0usize;
    let mut block = vec![0u64; f * cols];
    for nn in n_lo..=n_hi {
        block.iter_mut().for_each(|x| *x = 0);
        let mut touched = false;
        for n in 0..=nmax {
            let i = nn + e * n;
            if i < wlo {
                continue;
            }
            if i > whi {
                break;
            }
            let w = trace_weight(&zm, &t, i, e, n as u64);
            if w == 0 {
                continue;
            }
            touched = true;
            for r in 0..f {
                let c = &mut block[r * cols + col(i, r)];
                *c = zm.add(*c, w);
            }
        }
        for j in 0..=jmax {
            if (nn + e * j) % p != 0 {
                continue;
            }
            let m = (nn + e * j) / p;
            if m < wlo || m > whi {
                continue;
            }
            let w = frob_weight(&zm, &t, m, e, j as u64);
            if w == 0 {
                continue;
            }
            touched = true;
            for r in 0..f {
                for s in 0..f {
                    let fr = frob[r * f + s];
                    if fr != 0 {
                        let c = &mut block[r * cols + col(m, s)];
                        *c = zm.sub(*c, zm.mul(w, fr));
                    }
                }
            }
        }
        if !touched {
            continue;
        }
        for r in 0..f {
            let row = &mut block[r * cols..(r + 1) * cols];
            let mut b = 0u64;
            for (j, x) in row.iter_mut().enumerate() {
                if *x != 0 {
                    b = zm.sub(b, zm.mul(*x, shift[j]));
                    *x = zm.mul(*x, step[j]);
                }
            }
            if row.iter().all(|&x| x == 0) {
                if b != 0 {
                    return Err(Error::Inconsistent(format!(
                        "pinned coefficients violate the equation at N = {nn}"
                    )));
                }
                continue;
            }
            mat.extend_from_slice(row);
            rhs.push(b);
            rows += 1;
        }
    }
    let z = if rows == 0 {
        vec![0u64; cols]
    } else {
        linalg::solve(&zm, rows, cols, &mat, &rhs, rng)?.x
    };
    let mut out = LaurentSeries::zeros(wlo, whi, Tail::Zero, Tail::Unknown);
    let mut coords = vec![0u64; f];
    for i in wlo..=whi {
        for (r, c) in coords.iter_mut().enumerate() {
            let j = col(i, r);
            *c = zm.add(shift[j], zm.mul(step[j], z[j]));
        }
        out.set(i, ctx.base.from_coords(&coords));
    }
    Ok(out)
}

fn trim_below(ctx: &SeriesContext, mut s: LaurentSeries) -> LaurentSeries {
    if s.below == Tail::Zero {
        let cut = s
            .c
            .iter()
            .position(|x| !ctx.base.is_zero(x))
            .unwrap_or(s.c.len().saturating_sub(1));
        s.c.drain(..cut);
        s.lo += cut as i64;
    }
    s
}

/// Solve the psi = 1 system mod p^nu subject to the pins, retrying once with
/// the doubled window when the windowed system is inconsistent.
pub fn solve_pinned<R: Rng>(
    ctx: &SeriesContext,
    nu: u32,
    pins: &Pins,
    top: Option<i64>,
    mut rng: Option<&mut R>,
) -> Result<PsiOneWitness> {
    let (mut wlo, whi) = psi_window(ctx, nu, top.unwrap_or_else(|| pins.top()));
    if let Some(b) = pins.bottom() {
        wlo = wlo.min(b);
    }
    let whi = whi.max(pins.top());
    let series = match solve_window(ctx, nu, (wlo, whi), pins, rng.as_deref_mut()) {
        Ok(s) => s,
        Err(Error::Inconsistent(_)) => solve_window(ctx, nu, (2 * wlo, 2 * whi), pins, rng)?,
        Err(e) => return Err(e),
    };
    PsiOneWitness::certify(ctx, trim_below(ctx, series), nu)
}

fn check_unit(ctx: &SeriesContext, c: &UnramElem) -> Result<()> {
    if ctx.base.is_unit(c) {
        Ok(())
    } else {
        Err(Error::Config("leading coefficient must be a unit".into()))
    }
}

fn infeasible(n: i64, nu: u32, e: Error) -> Error {
    match e {
        Error::Inconsistent(msg) => Error::Infeasible(format!(
            "no psi = 1 element mod p^{nu} with l = {n} and the given leading coefficient ({msg})"
        )),
        other => other,
    }
}

/// Witness mod p with l(a) = n and leading coefficient c mod p.
pub fn solve_mod_p<R: Rng>(
    ctx: &SeriesContext,
    n: i64,
    c: &UnramElem,
    rng: Option<&mut R>,
) -> Result<PsiOneWitness> {
    solve_leading(ctx, 1, n, c, rng)
}

/// Witness mod p^nu with l(a) = n and leading coefficient c mod p.
pub fn solve_leading<R: Rng>(
    ctx: &SeriesContext,
    nu: u32,
    n: i64,
    c: &UnramElem,
    rng: Option<&mut R>,
) -> Result<PsiOneWitness> {
    check_unit(ctx, c)?;
    solve_pinned(ctx, nu, &Pins::leading(n, *c), None, rng).map_err(|e| infeasible(n, nu, e))
}

/// nabla log(1 + c pi_K^m), an element of E_K^{psi=1} with leading term
/// (c m / e) pi_K^(m - e).
pub fn nabla_log_witness(ctx: &SeriesContext, m: i64, c: &UnramElem) -> Result<PsiOneWitness> {
    if m <= 0 {
        return Err(Error::Config(format!("exponent {m} must be positive")));
    }
    let hi = ctx.hi;
    let mut u = LaurentSeries::zeros(0, hi, Tail::Zero, Tail::Zero);
    u.set(0, ctx.base.one());
    u.set(m, *c);
    let a = ctx.nabla_log(&u)?;
    PsiOneWitness::certify(ctx, trim_below(ctx, a), 1)
}

/// nabla log(pi^j) = j pi_K^(-e) + j.
pub fn nabla_log_pi_pow(ctx: &SeriesContext, j: i64) -> Result<PsiOneWitness> {
    let e = ctx.ei();
    let mut a = LaurentSeries::zeros(-e, ctx.hi, Tail::Zero, Tail::Zero);
    a.set(-e, ctx.base.from_i64(j));
    a.set(0, ctx.base.from_i64(j));
    PsiOneWitness::certify(ctx, a, 1)
}

/// Lift a witness mod p^nu0 to one mod p^nu with the same reduction.
pub fn lift_mod_pnu<R: Rng>(
    ctx: &SeriesContext,
    w: &PsiOneWitness,
    nu: u32,
    rng: Option<&mut R>,
) -> Result<PsiOneWitness> {
    if nu < w.nu {
        return Err(Error::Precision(format!("cannot lift from p^{} to p^{nu}", w.nu)));
    }
    let mut pins = Pins::default();
    if w.series.below == Tail::Zero {
        pins.floors.push((w.series.lo, w.nu));
    }
    for (k, x) in w.series.c.iter().enumerate() {
        pins.points.insert(w.series.lo + k as i64, (*x, w.nu));
    }
    let top = w.series.hi - 2 * ctx.d as i64 * w.nu as i64;
    solve_pinned(ctx, nu, &pins, Some(top), rng)
}

pub fn lift_mod_p2<R: Rng>(
    ctx: &SeriesContext,
    w: &PsiOneWitness,
    rng: Option<&mut R>,
) -> Result<PsiOneWitness> {
    lift_mod_pnu(ctx, w, 2, rng)
}

/// The admissible mu for l(a) = mu p - e + e(p-1): 1 <= mu < e(p-1)/p.
pub fn notsoeasy_mus(ctx: &SeriesContext) -> Vec<i64> {
    let p = ctx.p() as i64;
    (1..).take_while(|mu| mu * p < ctx.d as i64).collect()
}

/// Witness mod p^nu with l(a) = mu p - e + e(p-1), leading coefficient c and
/// l_2(a) >= mu p - e, obtained directly as a pinned solve.
pub fn solve_notsoeasy<R: Rng>(
    ctx: &SeriesContext,
    mu: i64,
    c: &UnramElem,
    nu: u32,
    rng: Option<&mut R>,
) -> Result<PsiOneWitness> {
    let p = ctx.p() as i64;
    let e = ctx.ei();
    if !notsoeasy_mus(ctx).contains(&mu) || nu < 2 {
        return Err(Error::Config(format!("mu = {mu} with nu = {nu} outside the admissible range")));
    }
    check_unit(ctx, c)?;
    let l = mu * p - e + ctx.d as i64;
    let mut pins = Pins::leading(l, *c);
    pins.floors.push((mu * p - e, 2));
    solve_pinned(ctx, nu, &pins, None, rng).map_err(|err| infeasible(l, nu, err))
}

/// Raise l_2 of a witness mod p^2 by adding p b for witnesses b mod p with
/// l(b) = l_2, until l_2 >= target or no such b exists.
pub fn raise_l2<R: Rng>(
    ctx: &SeriesContext,
    w: &PsiOneWitness,
    target: i64,
    rng: &mut R,
) -> Result<PsiOneWitness> {
    if w.nu < 2 {
        return Err(Error::Precision("the l_2 pass needs a witness mod p^2".into()));
    }
    let base2 = ctx.base.with_precision(2)?;
    let p = ctx.p();
    let mut cur = w.series.clone();
    for _ in 0..(4 * ctx.d as usize + 8) {
        let (Some(l1), Some(l2)) = (ctx.l_nu(&cur, 1).exact(), ctx.l_nu(&cur, 2).exact()) else {
            break;
        };
        if l2 >= target || l2 >= l1 {
            break;
        }
        let c = base2.coerce(&cur.at(l2));
        let c1 = ctx.base.coerce(&base2.div_p_pow(&c, 1));
        let neg = ctx.base.neg(&ctx.base.reduce_mod_p(&c1));
        let b = match solve_mod_p(ctx, l2, &neg, Some(&mut *rng)) {
            Ok(b) => b,
            Err(Error::Infeasible(_)) => break,
            Err(e) => return Err(e),
        };
        let pb = ctx.scale_int(&b.series, p as i64);
        cur = trim_below(ctx, ctx.add(&cur, &pb)?);
        cur = ctx.map(&cur, |x| ctx.base.coerce(&base2.coerce(x)));
    }
    PsiOneWitness::certify(ctx, cur, 2)
}

/// Witness mod p^nu for l(a) = mu p with a = pi_K^(mu p) c - pi_K^(mu p + e(p-1)) c + ...
/// mod p^2 and all other a_i = 0 mod p^2 below mu p + e(p-1), before projection.
pub fn solve_divbyp_seed<R: Rng>(
    ctx: &SeriesContext,
    mu: i64,
    c: &UnramElem,
    nu: u32,
    rng: Option<&mut R>,
) -> Result<PsiOneWitness> {
    let p = ctx.p() as i64;
    let e = ctx.ei();
    let d = ctx.d as i64;
    if 4 * e >= p || mu <= 0 || mu * p >= d - e || nu < 2 {
        return Err(Error::Config(format!(
            "mu p = {} outside (0, -e + e(p-1)) or e >= p/4",
            mu * p
        )));
    }
    check_unit(ctx, c)?;
    let l = mu * p;
    let mut pins = Pins::default();
    pins.floors.push((l + d, 2));
    pins.points.insert(l, (*c, 2));
    pins.points.remove(&(l + d));
    solve_pinned(ctx, nu, &pins, Some(l + d), rng).map_err(|err| infeasible(l, nu, err))
}

/// One check of a leading-term bound, with the hypothesis branch it used.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundCheck {
    pub name: String,
    pub branch: String,
    pub holds: bool,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundsReport {
    pub lead: Vec<LeadIndex>,
    pub checks: Vec<BoundCheck>,
}

impl BoundsReport {
    pub fn all_hold(&self) -> bool {
        self.checks.iter().all(|c| c.holds)
    }
}

pub fn l_nu(ctx: &SeriesContext, a: &LaurentSeries, nu: u32) -> LeadIndex {
    ctx.l_nu(a, nu)
}

/// Whether an index is at least x, given what is known about l_nu.
fn lead_at_least(l: LeadIndex, x: i64) -> bool {
    match l {
        LeadIndex::Exact(v) => v >= x,
        LeadIndex::AtLeast(v) => v >= x,
        LeadIndex::Vanishes => true,
        LeadIndex::AtMost(_) => false,
    }
}

/// Check l(a) >= -e, the congruence l(a) != -e mod p, part a) for every
/// nu up to the witness precision, parts b) and c) on their hypothesis
/// domains and the growth estimate for the known coefficients.
pub fn bounds_report(ctx: &SeriesContext, w: &PsiOneWitness) -> BoundsReport {
    let p = ctx.p() as i64;
    let e = ctx.ei();
    let d = ctx.d as i64;
    let a = &w.series;
    let lead: Vec<LeadIndex> = (1..=w.nu).map(|v| ctx.l_nu(a, v)).collect();
    let mut checks = Vec::new();
    let mut push = |name: &str, branch: String, holds: bool, detail: String| {
        checks.push(BoundCheck {
            name: name.into(),
            branch,
            holds,
            detail,
        })
    };
    let l1 = lead[0];
    push(
        "l >= -e",
        "always".into(),
        lead_at_least(l1, -e),
        format!("l = {l1:?}"),
    );
    if let Some(l) = l1.exact() {
        if l > -e {
            push(
                "l != -e mod p",
                "l > -e".into(),
                (l + e).rem_euclid(p) != 0,
                format!("l = {l}"),
            );
        }
    }
    for (k, &lv) in lead.iter().enumerate() {
        let nu = k as i64 + 1;
        // p l_nu >= -(nu (p-1) + 1) e
        let ok = match lv {
            LeadIndex::Exact(v) | LeadIndex::AtLeast(v) => p * v >= -(nu * (p - 1) + 1) * e,
            LeadIndex::Vanishes => true,
            LeadIndex::AtMost(_) => false,
        };
        push(
            "mainestimate a",
            format!("nu = {nu}"),
            ok,
            format!("l_{nu} = {lv:?}, bound -{}e/{p}", nu * (p - 1) + 1),
        );
    }
    if let (Some(l), Some(&l2)) = (l1.exact(), lead.get(1)) {
        if l < -e + d {
            let ok = match l2 {
                LeadIndex::Exact(v) | LeadIndex::AtLeast(v) => v > l - d,
                LeadIndex::Vanishes => true,
                LeadIndex::AtMost(_) => false,
            };
            push("mainestimate b", "l < -e + e(p-1)".into(), ok, format!("l = {l}, l_2 = {l2:?}"));
        } else {
            push(
                "mainestimate b",
                "l >= -e + e(p-1)".into(),
                lead_at_least(l2, -e),
                format!("l = {l}, l_2 = {l2:?}"),
            );
        }
        if let Some(&l3) = lead.get(2) {
            if lead_at_least(l2, l - d) {
                if l < -e + 2 * d {
                    let ok = match l3 {
                        LeadIndex::Exact(v) | LeadIndex::AtLeast(v) => v > l - 2 * d,
                        LeadIndex::Vanishes => true,
                        LeadIndex::AtMost(_) => false,
                    };
                    push(
                        "mainestimate c",
                        "l < -e + 2e(p-1), l_2 >= l - e(p-1)".into(),
                        ok,
                        format!("l = {l}, l_2 = {l2:?}, l_3 = {l3:?}"),
                    );
                } else {
                    push(
                        "mainestimate c",
                        "l >= -e + 2e(p-1), l_2 >= l - e(p-1)".into(),
                        lead_at_least(l3, -e),
                        format!("l = {l}, l_2 = {l2:?}, l_3 = {l3:?}"),
                    );
                }
            }
        }
    }
    // v(a_i pi^i) >= -(p-1) i - p e with v = e(p-1) v_p(a_i) + i; a coefficient
    // zero mod p^nu only certifies v_p >= nu.
    let mut violations = Vec::new();
    let mut unresolved = 0usize;
    for (k, x) in a.c.iter().enumerate() {
        let i = a.lo + k as i64;
        if i >= -e {
            break;
        }
        let vp = ctx.base.val_u32(x).min(w.nu) as i64;
        if d * vp + i >= -(p - 1) * i - p * e {
            continue;
        }
        if vp >= w.nu as i64 {
            unresolved += 1;
        } else {
            violations.push(i);
        }
    }
    push(
        "growth",
        "i < -e".into(),
        violations.is_empty(),
        format!("violations {violations:?}, below precision {unresolved}"),
    );
    BoundsReport { lead, checks }
}

/// The l(a) with p not dividing l(a) and l((gamma_1 - 1) a) = l, if such
/// an a can exist in E_K^{psi=1}: l(a) = l - e(p-1), where l(a) >= -e and
/// l(a) != -e mod p unless l(a) = -e.
pub fn gamma_preimage_exponent(ctx: &SeriesContext, l: i64) -> Option<i64> {
    let p = ctx.p() as i64;
    let e = ctx.ei();
    let la = l - ctx.d as i64;
    let feasible = la == -e || (la > -e && (la + e).rem_euclid(p) != 0);
    (feasible && la % p != 0).then_some(la)
}

/// Representatives normalized to 0 < n_i < e(p-1), checked to form one
/// orbit under multiplication by p with e not dividing n_i.
pub fn normalize_orbit(ctx: &SeriesContext, orbit: &[i64]) -> Result<Vec<i64>> {
    let d = ctx.d as i64;
    let e = ctx.ei();
    let p = ctx.p() as i64;
    if orbit.is_empty() {
        return Err(Error::Config("empty orbit".into()));
    }
    let ns: Vec<i64> = orbit.iter().map(|n| n.rem_euclid(d)).collect();
    if ns.iter().any(|n| n % e == 0) {
        return Err(Error::Unsupported(
            "orbit with trivial restriction to Delta_e".into(),
        ));
    }
    for k in 0..ns.len() {
        if (ns[k] * p).rem_euclid(d) != ns[(k + 1) % ns.len()] {
            return Err(Error::Config(format!("{orbit:?} is not an orbit under multiplication by p")));
        }
    }
    if ctx.orbit_of(ns[0]).len() != ns.len() {
        return Err(Error::Config(format!("{orbit:?} is not a full orbit")));
    }
    Ok(ns)
}

/// Prescribed l(alpha_i): n_i - e, or n_i - e + e(p-1) when p divides n_i.
pub fn tame_exponent(ctx: &SeriesContext, n: i64) -> i64 {
    let p = ctx.p() as i64;
    if n % p == 0 {
        n - ctx.ei() + ctx.d as i64
    } else {
        n - ctx.ei()
    }
}

/// How a basis element was prepared.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Preparation {
    Plain,
    /// l_2 >= l - e(p-1).
    RaisedL2,
    /// Seeded as pi_K^(mu p) - pi_K^(mu p + e(p-1)) mod p^2.
    DivByP,
}

#[derive(Clone, Debug)]
pub struct TameBasisElement {
    pub n: i64,
    pub l: i64,
    pub prep: Preparation,
    pub witness: PsiOneWitness,
}

/// Witnesses alpha_i = xi pi_K^(l_i) + ... in the [n_1 - e]-isotypic
/// component; with `for_nabla` the elements with p | n_i - e are seeded for
/// the nabla-valuation law.
pub fn basis_tame<R: Rng>(
    ctx: &SeriesContext,
    orbit: &[i64],
    xi: &UnramElem,
    nu: u32,
    for_nabla: bool,
    rng: &mut R,
) -> Result<Vec<TameBasisElement>> {
    let ns = normalize_orbit(ctx, orbit)?;
    let p = ctx.p() as i64;
    let e = ctx.ei();
    let d = ctx.d as i64;
    let comp = ctx.orbit_of(ns[0] - e);
    let mut out: Vec<TameBasisElement> = Vec::new();
    for &n in &ns {
        let l = tame_exponent(ctx, n);
        let (seed, prep) = if n % p == 0 {
            let mu = n / p;
            (solve_notsoeasy(ctx, mu, xi, nu, Some(&mut *rng))?, Preparation::RaisedL2)
        } else if for_nabla && (n - e) % p == 0 && 4 * e < p && n - e > 0 && n - e < d - e {
            let mu = (n - e) / p;
            (solve_divbyp_seed(ctx, mu, xi, nu, Some(&mut *rng))?, Preparation::DivByP)
        } else {
            (solve_leading(ctx, nu, l, xi, Some(&mut *rng))?, Preparation::Plain)
        };
        let wctx = ctx.with_window(seed.series.lo.min(ctx.lo), seed.series.hi.max(ctx.hi));
        let proj = trim_below(ctx, wctx.idem_orbit(&seed.series, &comp)?);
        let witness = PsiOneWitness::certify(ctx, proj, nu)?;
        if witness.l().exact() != Some(l) || witness.leading_coeff().map(|c| ctx.base.reduce_mod_p(&c)) != Some(ctx.base.reduce_mod_p(xi)) {
            return Err(Error::Internal(format!(
                "projection changed the leading term of the element with l = {l}"
            )));
        }
        if out.iter().any(|b| b.l == l) {
            return Err(Error::Internal(format!("repeated leading exponent {l}")));
        }
        out.push(TameBasisElement {
            n,
            l,
            prep,
            witness,
        });
    }
    for b in &out {
        if let Some(la) = gamma_preimage_exponent(ctx, b.l) {
            return Err(Error::Internal(format!(
                "leading exponent {} is l((gamma_1 - 1) a) for l(a) = {la}",
                b.l
            )));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::padic_core::vp_bigint;

    #[test]
    fn b_examples() {
        assert_eq!(b_coeff(5, 0, 0), BigInt::one());
        assert_eq!(b_coeff(5, 1, 0), BigInt::zero());
        assert_eq!(b_coeff(5, 2, 3), BigInt::from(3));
        assert_eq!(b_cyclotomic(5, 2, 3), BigInt::from(3));
        for m in 0..5 {
            let b = b_coeff(5, m, 5);
            assert!(b.is_zero() || vp_bigint(&b, 5).unwrap() >= 1);
        }
    }

    #[test]
    fn closed_form_matches_cyclotomic() {
        for p in [5u64, 13] {
            for m in 0..p as i64 {
                for n in 0..=3 * (p - 1) {
                    assert_eq!(b_closed(p, m, n), b_cyclotomic(p, m, n), "p={p} m={m} n={n}");
                    if n >= 1 {
                        let b = b_closed(p, m, n);
                        if !b.is_zero() {
                            assert!(vp_bigint(&b, p).unwrap() >= b_divisibility(p, n) as i64);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn beta_rows() {
        assert_eq!(beta_row(5, 1), vec![0, 1, 2, 2, 1].into_iter().map(BigInt::from).collect::<Vec<_>>());
        let r2 = beta_row(5, 2);
        assert_eq!(r2.len(), 9);
        assert_eq!(r2[2], BigInt::one());
        assert_eq!(r2[8], BigInt::one());
        assert_eq!(r2[3], BigInt::from(4));
        assert_eq!(beta_coeff(5, 0, 0), BigInt::one());
    }

    use crate::field_towers::make_unram;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sctx(p: u64, e: u64, f: usize, n: u32) -> SeriesContext {
        SeriesContext::new(&make_unram(p, f, n).unwrap(), e, None).unwrap()
    }

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn monster_examples() {
        let ctx = sctx(5, 2, 2, 4);
        let one = ctx.constant(1);
        for nu in 1..=4 {
            assert!(monster_check(&ctx, &one, nu).unwrap().holds);
        }
        for m in [1i64, 3, 5] {
            let w = nabla_log_witness(&ctx, m, &ctx.base.one()).unwrap();
            assert!(w.report.holds && w.report.checked > 0);
        }
        let pik = ctx.monomial(ctx.base.one(), 1);
        let r = monster_check(&ctx, &pik, 1).unwrap();
        assert!(!r.holds && !r.holds_on_pz);
        let short = LaurentSeries::zeros(0, 3, Tail::Unknown, Tail::Unknown);
        assert!(matches!(monster_check(&ctx, &short, 2), Err(Error::Window { .. })));
    }

    #[test]
    fn solve_mod_p_examples() {
        let ctx = sctx(5, 2, 2, 4);
        let b = &ctx.base;
        let w = nabla_log_witness(&ctx, 1, &b.one()).unwrap();
        assert_eq!(w.l(), LeadIndex::Exact(-1));
        // 1/2 mod 5
        assert_eq!(b.reduce_mod_p(&w.leading_coeff().unwrap()), b.from_i64(3));
        let s = solve_mod_p(&ctx, -1, &b.from_i64(3), Some(&mut rng(1))).unwrap();
        assert_eq!(s.l(), LeadIndex::Exact(-1));
        let pij = nabla_log_pi_pow(&ctx, 2).unwrap();
        assert_eq!(pij.l(), LeadIndex::Exact(-2));
        assert!(solve_mod_p(&ctx, -2, &b.from_i64(2), Some(&mut rng(2))).is_ok());
        let t = b.gen();
        assert!(matches!(solve_mod_p(&ctx, -2, &t, Some(&mut rng(3))), Err(Error::Infeasible(_))));
        assert!(matches!(solve_mod_p(&ctx, -3, &b.one(), Some(&mut rng(4))), Err(Error::Infeasible(_))));
        assert!(matches!(solve_mod_p(&ctx, 3, &b.one(), Some(&mut rng(5))), Err(Error::Infeasible(_))));
    }

    #[test]
    fn infeasibility_scan_small() {
        let ctx = sctx(5, 2, 2, 4);
        let (p, e, d) = (5i64, 2i64, 8i64);
        let b = &ctx.base;
        let mut r = rng(7);
        for n in -e..=3 * d {
            for c in [b.one(), b.gen()] {
                let in_fp = b.reduce_mod_p(&c) == b.one();
                let expected = (n > -e && (n + e) % p != 0) || (n == -e && in_fp);
                let got = solve_mod_p(&ctx, n, &c, Some(&mut r));
                assert_eq!(got.is_ok(), expected, "n = {n}, c in F_p: {in_fp}");
                if let Ok(w) = got {
                    assert_eq!(w.l(), LeadIndex::Exact(n));
                    assert_eq!(b.reduce_mod_p(&w.leading_coeff().unwrap()), b.reduce_mod_p(&c));
                }
            }
        }
    }

    #[test]
    fn lift_examples() {
        let ctx = sctx(5, 2, 2, 4);
        let one = PsiOneWitness::certify(&ctx, ctx.constant(1), 1).unwrap();
        let lifted = lift_mod_p2(&ctx, &one, None::<&mut ChaCha8Rng>).unwrap();
        assert_eq!(lifted.series.lo, 0);
        assert_eq!(lifted.series.at(0), ctx.base.one());
        assert!(lifted.series.c[1..].iter().all(|x| ctx.base.is_zero(x)));

        let mut r = rng(11);
        let w1 = solve_mod_p(&ctx, 1, &ctx.base.gen(), Some(&mut r)).unwrap();
        let w3 = lift_mod_pnu(&ctx, &w1, 3, Some(&mut r)).unwrap();
        assert_eq!(w3.nu, 3);
        let base1 = ctx.base.with_precision(1).unwrap();
        for i in w1.series.lo..=w1.series.hi {
            assert_eq!(base1.coerce(&w1.series.at(i)), base1.coerce(&w3.series.get(i).unwrap()));
        }
        assert!(bounds_report(&ctx, &w3).all_hold());
    }

    #[test]
    fn notsoeasy_cfg_c() {
        let ctx = sctx(13, 2, 2, 3);
        let (p, e, d) = (13i64, 2i64, 24i64);
        assert_eq!(notsoeasy_mus(&ctx), vec![1]);
        let mu = 1;
        let w = solve_notsoeasy(&ctx, mu, &ctx.base.one(), 3, Some(&mut rng(3))).unwrap();
        let l = mu * p - e + d;
        assert_eq!(w.l(), LeadIndex::Exact(35));
        assert!(matches!(w.lead[1], LeadIndex::Exact(v) if v >= 11));
        // a_{l - e(p-1)} = a_l p mu / e mod p^2
        let b2 = ctx.base.with_precision(2).unwrap();
        let zm2 = *b2.zm();
        let k = zm2.mul(zm2.from_i64(p * mu), zm2.inv(2).unwrap());
        assert_eq!(b2.coerce(&w.series.at(l - d)), b2.scale(&b2.coerce(&w.series.at(l)), k));
        assert!(bounds_report(&ctx, &w).all_hold());

        // the additive pass from an unprepared witness
        let mut r = rng(5);
        let plain = solve_leading(&ctx, 2, l, &ctx.base.one(), Some(&mut r)).unwrap();
        let raised = raise_l2(&ctx, &plain, mu * p - e, &mut r).unwrap();
        assert_eq!(raised.l(), LeadIndex::Exact(l));
        assert!(matches!(raised.lead[1], LeadIndex::Exact(v) if v >= mu * p - e));
    }

    #[test]
    fn bounds_on_random_witnesses() {
        for (p, e, f, n) in [(5u64, 2u64, 2usize, 4u32), (13, 2, 2, 3)] {
            let ctx = sctx(p, e, f, n);
            let mut r = rng(p);
            let d = ctx.d as i64;
            let mut count = 0;
            for l in (-(e as i64) + 1)..(2 * d) {
                if (l + e as i64) % p as i64 == 0 || l % 3 != 0 {
                    continue;
                }
                let c = ctx.base.residue_from_index(1 + r.gen_range(0..ctx.base.q() - 1));
                let w = solve_leading(&ctx, 3, l, &c, Some(&mut r)).unwrap();
                let rep = bounds_report(&ctx, &w);
                assert!(rep.all_hold(), "{:?}", rep.checks);
                count += 1;
            }
            assert!(count > 3);
        }
    }

    #[test]
    fn gamma_filtration() {
        let ctx = sctx(5, 2, 2, 4);
        let wctx = ctx.with_window(-20, 80);
        let (p, e, d) = (5i64, 2i64, 8i64);
        let mut r = rng(9);
        let lead_of_diff = |a: &LaurentSeries| {
            let g = wctx.gamma_act(a, 1 + p as u64).unwrap();
            wctx.l_nu(&wctx.sub(&g, a).unwrap(), 1).exact().unwrap()
        };
        for l in [-1i64, 1, 2, 4, 5, 10, 6, 7] {
            let w = solve_mod_p(&wctx, l, &ctx.base.one(), Some(&mut r)).unwrap();
            let lg = lead_of_diff(&w.series);
            if l % p != 0 {
                assert_eq!(lg, l + d, "l = {l}");
                assert_eq!(gamma_preimage_exponent(&ctx, lg), Some(l));
            } else {
                assert!(lg > l + d, "l = {l}");
            }
            assert!(lg >= -e + d);
        }
        // l(a) = 5 but a has a pi_K^7 term: l((gamma_1 - 1) a) = 7 + e(p-1), not (1 + e(p-1)) 5
        let a = nabla_log_witness(&wctx, 7, &ctx.base.one()).unwrap();
        assert_eq!(a.l(), LeadIndex::Exact(5));
        assert_eq!(lead_of_diff(&a.series), 15);
        assert_eq!(gamma_preimage_exponent(&ctx, -1), None);
        assert_eq!(gamma_preimage_exponent(&sctx(13, 2, 2, 3), 35), None);
    }

    #[test]
    fn tame_basis_cfg_c() {
        let ctx = sctx(13, 2, 2, 3);
        assert_eq!(tame_exponent(&ctx, 1), -1);
        assert_eq!(tame_exponent(&ctx, 13), 35);
        assert!(normalize_orbit(&ctx, &[1, 12]).is_err());
        assert!(matches!(normalize_orbit(&ctx, &[2, 2]), Err(Error::Unsupported(_))));
        let xi = ctx.base.normal_basis_candidates(1)[0];
        let basis = basis_tame(&ctx, &[1, 13], &xi, 2, false, &mut rng(1)).unwrap();
        let ls: Vec<i64> = basis.iter().map(|b| b.l).collect();
        assert_eq!(ls, vec![-1, 35]);
        assert_eq!(basis[1].prep, Preparation::RaisedL2);
        for b in &basis {
            // eigen-congruence: p l = n_i - e + ... lies in the orbit of n_1 - e
            let comp = ctx.orbit_of(1 - 2);
            assert!(comp.contains(&(13 * b.l).rem_euclid(24)));
        }
    }

    #[test]
    fn witness_json_round_trip() {
        let ctx = sctx(5, 2, 2, 4);
        let w = solve_leading(&ctx, 2, 1, &ctx.base.gen(), Some(&mut rng(2))).unwrap();
        let js = w.to_json(&ctx);
        assert_eq!(js["verified_mod"], 2);
        let back = PsiOneWitness::from_json(&ctx, &js).unwrap();
        assert_eq!(back.series, w.series);
        let mut bad = js.clone();
        let first = bad["coeffs"][0][1][0].as_u64().unwrap();
        bad["coeffs"][0][1][0] = serde_json::json!((first + 1) % 25);
        assert!(PsiOneWitness::from_json(&ctx, &bad).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn nabla_log_of_units_passes_mod_p(coeffs in proptest::collection::vec(0u64..25, 1..10), c0 in 1u64..25) {
            let ctx = sctx(5, 2, 2, 2);
            let mut u = LaurentSeries::zeros(0, 24, Tail::Zero, Tail::Zero);
            u.set(0, ctx.base.residue_from_index(c0));
            for (k, &c) in coeffs.iter().enumerate() {
                u.set(k as i64 + 1, ctx.base.residue_from_index(c));
            }
            let a = ctx.nabla_log(&u).unwrap();
            prop_assert!(monster_check(&ctx, &a, 1).unwrap().holds);
        }
    }
}
