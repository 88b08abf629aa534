//! Unramified machinery: denominator-bounded power series, the log
//! condition, psi-stabilization, the Coleman solve for the Perrin-Riou
//! element and the dual-exponential identities built from it.

use num_bigint::BigInt;
use num_rational::{BigRational, Rational64};
use num_traits::{One, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::field_towers::{make_ram, make_unram, UnramContext, UnramElem};
use crate::laurent_ring::{LaurentSeries, PContext, PSeries, SeriesContext, Tail};
use crate::linalg;
use crate::padic_core::{vp_i128, Zmod};
use crate::psi_solver::monster_check;

/// A series in P_F mode together with the flag (p - phi) f in p O_F[[pi]].
#[derive(Clone, Debug)]
pub struct PLogElem {
    pub series: PSeries,
    pub log_condition: bool,
}

impl PLogElem {
    pub fn new(pc: &PContext, series: PSeries) -> PLogElem {
        let log_condition = p_minus_phi(pc, &series)
            .map(|g| pc.base.is_zero_mod(&g, 1))
            .unwrap_or(false);
        PLogElem { series, log_condition }
    }
}

/// (p - phi) f as an integral series.
pub fn p_minus_phi(pc: &PContext, f: &PSeries) -> Result<LaurentSeries> {
    let d = pc.sub(&pc.mul_p_pow(f, 1), &pc.phi(f)?)?;
    pc.to_integral(&d)
}

/// n a_n integral for every known n >= 0, and no negative exponents.
pub fn in_p_f(pc: &PContext, f: &PSeries) -> bool {
    let wb = &pc.wide.base;
    let p = pc.base.p();
    f.num.c.iter().enumerate().all(|(i, c)| {
        let n = f.num.lo + i as i64;
        if wb.is_zero(c) {
            return true;
        }
        if n < 0 {
            return false;
        }
        let vn = if n == 0 { 0 } else { vp_i128(n as i128, p) };
        wb.val_u32(c) + vn >= pc.k
    })
}

fn pk_over_j(zm: &Zmod, k: u32, j: u64) -> Result<u64> {
    let v = vp_i128(j as i128, zm.p());
    if v > k {
        return Err(Error::NotIntegral { valuation: k as i64 - v as i64 });
    }
    let u = j / zm.p().pow(v);
    Ok(zm.mul(zm.p_pow(k - v), zm.inv(u % zm.modulus()).unwrap()))
}

/// c log(1 + beta pi^step) from the closed-form coefficients, on the window of `pc`.
pub fn log_one_plus_monomial(pc: &PContext, beta: &UnramElem, step: u64, c: i64) -> Result<PSeries> {
    let w = &pc.wide;
    let wb = &w.base;
    let zm = *wb.zm();
    let hi = pc.base.hi;
    let mut num = LaurentSeries::zeros(0, hi, Tail::Zero, Tail::Unknown);
    let b = wb.coerce(beta);
    let mut bj = wb.one();
    let mut j = 1u64;
    while (step * j) as i64 <= hi {
        bj = wb.mul(&bj, &b);
        let mut s = zm.mul(pk_over_j(&zm, pc.k, j)?, zm.from_i64(c));
        if j % 2 == 0 {
            s = zm.neg(s);
        }
        num.set((step * j) as i64, wb.scale(&bj, s));
        j += 1;
    }
    Ok(PSeries { k: pc.k, num })
}

pub fn log_one_plus_pi(pc: &PContext) -> Result<PSeries> {
    log_one_plus_monomial(pc, &pc.base.base.one(), 1, 1)
}

/// A polynomial with random coordinates mod p^N.
pub fn random_poly(base: &UnramContext, rng: &mut impl Rng, deg: i64) -> LaurentSeries {
    let m = base.zm().modulus();
    let mut s = LaurentSeries::zeros(0, deg, Tail::Zero, Tail::Zero);
    for i in 0..=deg {
        let coords: Vec<u64> = (0..base.f()).map(|_| rng.gen_range(0..m)).collect();
        s.set(i, base.from_coords(&coords));
    }
    s
}

/// A random element of P_F,log: a Z-combination of log(1 + beta pi^k) plus p times a polynomial.
pub fn random_plog(pc: &PContext, rng: &mut impl Rng) -> Result<PSeries> {
    let base = &pc.base.base;
    let m = base.zm().modulus();
    let p = base.p();
    let mut acc = pc.embed(&pc.base.zero());
    acc.num.above = Tail::Unknown;
    acc.num = acc.num.restrict(0, pc.base.hi);
    for _ in 0..rng.gen_range(1..=3) {
        let coords: Vec<u64> = (0..base.f()).map(|_| rng.gen_range(0..m)).collect();
        let beta = base.from_coords(&coords);
        let step = rng.gen_range(1..=3);
        let c = rng.gen_range(1..p as i64);
        acc = pc.add(&acc, &log_one_plus_monomial(pc, &beta, step, c)?)?;
    }
    let h = random_poly(base, rng, 6);
    acc = pc.add(&acc, &pc.embed(&pc.base.scale_int(&h, p as i64)))?;
    Ok(acc)
}

#[derive(Clone, Debug)]
pub struct Stabilized {
    pub limit: PLogElem,
    /// Number of telescoping terms summed before they vanish mod p^N.
    pub iterations: usize,
    pub window: (i64, i64),
}

/// The limit of p^m psi^m f, as f + sum_j p^j psi^j(psi((p - phi) f)).
pub fn stabilize(pc: &PContext, f: &PLogElem) -> Result<Stabilized> {
    let ctx = &pc.base;
    let n = ctx.n() as usize;
    let g = p_minus_phi(pc, &f.series)?;
    if !ctx.is_zero_mod(&g, 1) {
        return Err(Error::Convergence(
            "(p - phi) f is not divisible by p; input is not in P_F,log".into(),
        ));
    }
    let mut term = ctx.psi(&g)?;
    let mut acc = term.clone();
    let mut iterations = 1;
    loop {
        let vanished = iterations + 1 >= n
            || (term.above == Tail::Zero && ctx.is_zero_mod(&term, ctx.n()));
        if vanished {
            break;
        }
        if iterations > 2 * n {
            return Err(Error::Convergence(format!("no convergence after {iterations} steps")));
        }
        term = ctx.scale_int(&ctx.psi(&term)?, ctx.p() as i64);
        acc = ctx.add(&acc, &term)?;
        iterations += 1;
    }
    let series = pc.add(&f.series, &pc.embed(&acc))?;
    let window = (series.num.lo, series.num.hi);
    Ok(Stabilized {
        limit: PLogElem::new(pc, series),
        iterations,
        window,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct StabilizeReport {
    pub window: (i64, i64),
    pub iterations: usize,
    pub in_plog: bool,
    pub congruent_mod_p: bool,
    pub psi_eigen: bool,
    pub one_minus_phi_integral: bool,
    pub integral_vanishes: bool,
    pub lift_independent: bool,
}

impl StabilizeReport {
    pub fn holds(&self) -> bool {
        self.in_plog
            && self.congruent_mod_p
            && self.psi_eigen
            && self.one_minus_phi_integral
            && self.integral_vanishes
            && self.lift_independent
    }
}

/// The five stabilization properties for f, with h an integral series used
/// for the p h and f + p h comparisons.
pub fn stabilize_report(pc: &PContext, f: &PSeries, h: &LaurentSeries) -> Result<StabilizeReport> {
    let ctx = &pc.base;
    let p = ctx.p() as i64;
    let ph = pc.embed(&ctx.scale_int(h, p));
    let st = stabilize(pc, &PLogElem::new(pc, f.clone()))?;
    let lim = &st.limit.series;
    let diff = pc.to_integral(&pc.sub(lim, f)?)?;
    let congruent_mod_p = ctx.is_zero_mod(&diff, 1);
    let psi_eigen = pc.eq_on_window(&pc.mul_p_pow(&pc.psi(lim)?, 1), lim);
    let one_minus_phi_integral = p_minus_phi(pc, lim)
        .map(|g| ctx.is_zero_mod(&g, 1))
        .unwrap_or(false);
    let zero_lim = stabilize(pc, &PLogElem::new(pc, ph.clone()))?;
    let integral_vanishes = pc
        .to_integral(&zero_lim.limit.series)
        .map(|z| ctx.is_zero_mod(&z, ctx.n()))
        .unwrap_or(false);
    let g = pc.add(f, &ph)?;
    let g_lim = stabilize(pc, &PLogElem::new(pc, g))?;
    let lift_independent = pc.eq_on_window(lim, &g_lim.limit.series);
    Ok(StabilizeReport {
        window: st.window,
        iterations: st.iterations,
        in_plog: st.limit.log_condition && in_p_f(pc, lim),
        congruent_mod_p,
        psi_eigen,
        one_minus_phi_integral,
        integral_vanishes,
        lift_independent,
    })
}

/// Window on which stabilization leaves a usable result after N psi steps.
pub fn stabilization_window(p: u64, n: u32) -> i64 {
    (p as i64).pow(n) * (4 * n as i64 + 16)
}

pub fn stabilization_context(p: u64, f: usize, n: u32) -> Result<PContext> {
    let base = make_unram(p, f, n)?;
    let hi = stabilization_window(p, n);
    let ctx = SeriesContext::new(&base, 1, Some((-(8 * p as i64 * n as i64), hi)))?;
    PContext::for_log(&ctx)
}

#[derive(Clone, Debug, Serialize)]
pub struct StabilizeSummary {
    pub cases: usize,
    pub passed: usize,
    pub min_window: i64,
    pub log_fixed: bool,
}

/// The stabilization properties on random P_F,log inputs, plus log(1 + pi) being fixed.
pub fn stabilization_suite(pc: &PContext, cases: usize, seed: u64) -> Result<StabilizeSummary> {
    let inputs: Vec<(PSeries, LaurentSeries)> = {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..cases)
            .map(|_| {
                let f = random_plog(pc, &mut rng)?;
                let h = random_poly(&pc.base.base, &mut rng, 5);
                Ok((f, h))
            })
            .collect::<Result<_>>()?
    };
    let reports: Vec<StabilizeReport> = inputs
        .par_iter()
        .map(|(f, h)| stabilize_report(pc, f, h))
        .collect::<Result<_>>()?;
    let lg = log_one_plus_pi(pc)?;
    let st = stabilize(pc, &PLogElem::new(pc, lg.clone()))?;
    Ok(StabilizeSummary {
        cases,
        passed: reports.iter().filter(|r| r.holds()).count(),
        min_window: reports.iter().map(|r| r.window.1).min().unwrap_or(0),
        log_fixed: pc.eq_on_window(&st.limit.series, &lg),
    })
}

/// sum of coeff * sigma^s acting on xi, times (1 + pi)^c.
#[derive(Clone, Debug, PartialEq)]
pub struct LambdaElem {
    pub terms: Vec<(usize, u64, Rational64)>,
}

impl LambdaElem {
    pub fn basis_vector() -> Self {
        LambdaElem { terms: vec![(0, 1, Rational64::one())] }
    }

    /// (1 - e_1) + (twist gamma - chi) e_1 with gamma acting through (1 + pi) -> (1 + pi)^chi.
    pub fn coleman_generator(f: usize, chi: u64, twist: i64) -> Self {
        let fi = f as i64;
        let mut terms = vec![(0, 1, Rational64::one())];
        for s in 0..f {
            terms.push((s, 1, Rational64::new(-1 - chi as i64, fi)));
            terms.push((s, chi, Rational64::new(twist, fi)));
        }
        LambdaElem { terms }
    }

    /// (1 - e_1) + c e_1 with no gamma part.
    pub fn idempotent_combination(f: usize, c: Rational64) -> Self {
        let fi = f as i64;
        let mut terms = vec![(0, 1, Rational64::one())];
        for s in 0..f {
            terms.push((s, 1, (c - Rational64::one()) / fi));
        }
        LambdaElem { terms }
    }

    pub fn sigma_minus_one() -> Self {
        LambdaElem { terms: vec![(1, 1, Rational64::one()), (0, 1, -Rational64::one())] }
    }

    pub fn gamma_minus_chi(chi: u64) -> Self {
        LambdaElem {
            terms: vec![(0, chi, Rational64::one()), (0, 1, Rational64::from(-(chi as i64)))],
        }
    }

    /// The exponential sum sum_j beta_j (1 + pi)^(c_j) obtained by acting on xi (1 + pi).
    pub fn apply(&self, base: &UnramContext, xi: &UnramElem) -> Result<Vec<(UnramElem, u64)>> {
        let zm = base.zm();
        let xi = base.coerce(xi);
        let mut out: Vec<(UnramElem, u64)> = Vec::new();
        for &(s, c, q) in &self.terms {
            let k = zm.from_ratio(*q.numer() as i128, *q.denom() as i128)?;
            let b = base.scale(&base.frob(&xi, s as i64), k);
            match out.iter_mut().find(|(_, cc)| *cc == c) {
                Some(t) => t.0 = base.add(&t.0, &b),
                None => out.push((b, c)),
            }
        }
        out.sort_by_key(|t| t.1);
        Ok(out)
    }
}

/// sum_j beta_j (1 + pi)^(c_j) as an exact polynomial.
pub fn exp_sum_series(ctx: &SeriesContext, terms: &[(UnramElem, u64)]) -> Result<LaurentSeries> {
    let base = &ctx.base;
    let zm = ctx.zm();
    let deg = terms.iter().map(|t| t.1).max().unwrap_or(0) as i64;
    let mut s = LaurentSeries::zeros(0, deg, Tail::Zero, Tail::Zero);
    for n in 0..=deg {
        let mut acc = base.zero();
        for (b, c) in terms {
            let bin = zm.binom_frac(*c as i64, 1, n as u64)?;
            acc = base.add(&acc, &base.scale(&base.coerce(b), bin));
        }
        s.set(n, acc);
    }
    Ok(s)
}

fn vp_factorial(p: u64, n: u64) -> u32 {
    let mut v = 0;
    let mut q = n / p;
    while q > 0 {
        v += q as u32;
        q /= p;
    }
    v
}

fn max_vp_upto(p: u64, hi: u64) -> u32 {
    let mut k = 0;
    let mut pk = p;
    while pk <= hi {
        k += 1;
        pk *= p;
    }
    k
}

/// Largest window on which the Coleman solve fits machine-word moduli, capped at 40 p.
pub fn coleman_window(p: u64, n: u32) -> i64 {
    let mut hi = 40 * p;
    while hi > 1 && Zmod::new(p, n + 1 + vp_factorial(p, hi)).is_err() {
        hi -= 1;
    }
    hi as i64
}

/// Solve (1 - phi/p) alpha = g for g = lambda xi (1 + pi), through the
/// coordinate t = log(1 + pi) where (1 - phi/p) acts diagonally. The output
/// lives in a PContext over `ctx` truncated at `hi`.
pub fn solve_lambda(
    ctx: &SeriesContext,
    lam: &LambdaElem,
    xi: &UnramElem,
    hi: i64,
) -> Result<(PContext, PSeries)> {
    if ctx.e != 1 {
        return Err(Error::Config("the Coleman solve needs e = 1".into()));
    }
    let p = ctx.p();
    let f = ctx.base.f();
    if f as u64 % p == 0 {
        return Err(Error::Unsupported(format!("p divides f = {f}")));
    }
    let hu = hi.max(0) as u64;
    let k = max_vp_upto(p, hu);
    let pc = PContext::new(&ctx.with_window(ctx.lo, hi), k)?;
    let w = ctx.n() + vp_factorial(p, hu);
    let wb = ctx.base.with_precision(w)?;
    let zm = *wb.zm();
    let beta = lam.apply(&wb, xi)?;
    let g_m = |m: u64| -> UnramElem {
        beta.iter().fold(wb.zero(), |acc, (b, c)| {
            wb.add(&acc, &wb.scale(b, zm.pow(*c % zm.modulus(), m)))
        })
    };
    let mut big_m: Vec<UnramElem> = Vec::with_capacity(hu as usize + 1);
    for m in 0..=hu {
        let g = g_m(m);
        let v = match m {
            0 => {
                let mut acc = wb.zero();
                for i in 1..=w {
                    let t = wb.scale(&wb.frob(&g, -(i as i64)), zm.p_pow(i));
                    acc = wb.sub(&acc, &t);
                }
                acc
            }
            1 => {
                if zm.reduce(wb.trace(&g) as i128) != 0 {
                    return Err(Error::Infeasible(
                        "(1 - phi/p) misses this target: the linear coefficient has nonzero trace"
                            .into(),
                    ));
                }
                let finv = zm.inv(f as u64 % zm.modulus()).unwrap();
                let mut acc = wb.zero();
                for j in 0..f {
                    acc = wb.add(&acc, &wb.scale(&wb.frob(&g, j as i64), (j + 1) as u64 % zm.modulus()));
                }
                wb.neg(&wb.scale(&acc, finv))
            }
            _ => {
                let mut acc = wb.zero();
                let mut i = 0u32;
                while (i as u64) * (m - 1) < w as u64 {
                    let t = wb.scale(&wb.frob(&g, i as i64), zm.p_pow(i * (m as u32 - 1)));
                    acc = wb.add(&acc, &t);
                    i += 1;
                }
                acc
            }
        };
        big_m.push(v);
    }
    let out_b = &pc.wide.base;
    let mut num = LaurentSeries::zeros(0, hi, Tail::Zero, Tail::Unknown);
    let mut stirling: Vec<u64> = vec![1];
    let mut fact_v = 0u32;
    let mut fact_u = 1u64;
    for n in 0..=hu {
        if n > 0 {
            let vn = vp_i128(n as i128, p);
            fact_v += vn;
            fact_u = zm.mul(fact_u, (n / p.pow(vn)) % zm.modulus());
        }
        let s_n = stirling
            .iter()
            .zip(&big_m)
            .fold(wb.zero(), |acc, (&s, mm)| wb.add(&acc, &wb.scale(mm, s)));
        let uinv = zm.inv(fact_u).unwrap();
        let a = if fact_v <= k {
            wb.scale(&s_n, zm.mul(zm.p_pow(k - fact_v), uinv))
        } else {
            let need = fact_v - k;
            let have = wb.val_u32(&s_n);
            if have < need {
                return Err(Error::NotIntegral { valuation: have as i64 - need as i64 });
            }
            wb.scale(&wb.div_p_pow(&s_n, need), uinv)
        };
        num.set(n as i64, out_b.coerce(&a));
        let mut next = vec![0u64; stirling.len() + 1];
        let nn = n % zm.modulus();
        for (m, &s) in stirling.iter().enumerate() {
            next[m] = zm.sub(next[m], zm.mul(nn, s));
            next[m + 1] = zm.add(next[m + 1], s);
        }
        stirling = next;
    }
    Ok((pc.clone(), PSeries { k, num }))
}

pub fn chi(p: u64) -> u64 {
    1 + p
}

#[derive(Clone, Debug)]
pub struct ColemanSolution {
    /// Context one digit wider than the requested precision.
    pub pc: PContext,
    pub alpha: PSeries,
    pub g: LaurentSeries,
    pub xi: UnramElem,
    pub hi: i64,
}

/// The Perrin-Riou element: (1 - phi/p) alpha = ((1 - e_1) + (gamma - chi) e_1) xi (1 + pi).
pub fn solve_coleman(ctx: &SeriesContext, xi: &UnramElem, hi: i64) -> Result<ColemanSolution> {
    if !ctx.base.is_normal_basis(xi) {
        return Err(Error::Config("xi is not a normal basis element".into()));
    }
    let ctx1 = ctx.widen(1)?;
    let lam = LambdaElem::coleman_generator(ctx.base.f(), chi(ctx.p()), 1);
    let terms = lam.apply(&ctx1.base, xi)?;
    let (pc, alpha) = solve_lambda(&ctx1, &lam, xi, hi)?;
    let g = exp_sum_series(&pc.base, &terms)?;
    Ok(ColemanSolution { pc, alpha, g, xi: *xi, hi })
}

#[derive(Clone, Debug, Serialize)]
pub struct ColemanReport {
    pub window: (i64, i64),
    pub equation: bool,
    pub psi_eigen: bool,
    pub in_p_f: bool,
    pub in_p_f_log: bool,
    pub nabla_integral: bool,
    pub nabla_psi_fixed: bool,
    pub nabla_monster: bool,
}

impl ColemanReport {
    pub fn holds(&self) -> bool {
        self.equation
            && self.psi_eigen
            && self.in_p_f
            && self.in_p_f_log
            && self.nabla_integral
            && self.nabla_psi_fixed
            && self.nabla_monster
    }
}

/// nabla alpha as an integral series over `ctx`.
pub fn nabla_alpha(ctx: &SeriesContext, sol: &ColemanSolution) -> Result<LaurentSeries> {
    let d = sol.pc.nabla(&sol.alpha)?;
    Ok(ctx.coerce_series(&sol.pc.to_integral(&d)?))
}

pub fn coleman_checks(ctx: &SeriesContext, sol: &ColemanSolution) -> Result<ColemanReport> {
    let pc = &sol.pc;
    let a = &sol.alpha;
    let lhs = pc.sub(&pc.mul_p_pow(a, 1), &pc.phi(a)?)?;
    let rhs = pc.mul_p_pow(&pc.embed(&sol.g), 1);
    let equation = pc.eq_on_window(&lhs, &rhs);
    let psi_eigen = pc.eq_on_window(&pc.mul_p_pow(&pc.psi(a)?, 1), a);
    let in_plog = p_minus_phi(pc, a).map(|g| pc.base.is_zero_mod(&g, 1)).unwrap_or(false);
    let d = pc.nabla(a)?;
    let nabla_integral = pc.is_integral(&d);
    let (nabla_psi_fixed, nabla_monster) = if nabla_integral {
        let q = pc.to_integral(&d)?;
        let fixed = pc.base.eq_on_window(&pc.base.psi(&q)?, &q);
        let qn = ctx.coerce_series(&q);
        (fixed, monster_check(ctx, &qn, ctx.n())?.holds)
    } else {
        (false, false)
    };
    Ok(ColemanReport {
        window: (a.num.lo, a.num.hi),
        equation,
        psi_eigen,
        in_p_f: in_p_f(pc, a),
        in_p_f_log: in_plog,
        nabla_integral,
        nabla_psi_fixed,
        nabla_monster,
    })
}

/// p^{-r} coords as an element of F.
#[derive(Clone, Debug, Serialize, PartialEq, Eq)]
pub struct FValue {
    pub p_exponent: i64,
    pub coords: Vec<i64>,
}

fn fvalue(base: &UnramContext, x: &UnramElem, p_exponent: i64) -> FValue {
    let zm = base.zm();
    FValue {
        p_exponent,
        coords: x.coords(base.f()).iter().map(|&c| zm.signed(c)).collect(),
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct UnramExpstarReport {
    pub r: u32,
    pub precision: u32,
    pub window: (i64, i64),
    pub identity_series: bool,
    pub evaluation: bool,
    pub closed_form: bool,
    pub t0_relation: bool,
    pub t0_nabla: bool,
    pub del_is_dt: bool,
    /// p^r (r-1)! exp*(u) for the twisted generator u.
    pub expstar_u: FValue,
    /// p^r (r-1)! exp*(beta).
    pub expstar_beta: FValue,
}

impl UnramExpstarReport {
    pub fn holds(&self) -> bool {
        self.identity_series
            && self.evaluation
            && self.closed_form
            && self.t0_relation
            && self.t0_nabla
            && self.del_is_dt
    }
}

fn inverse_one_minus(base: &UnramContext, y: &UnramElem, r: u32) -> Result<UnramElem> {
    if r < 2 {
        return Err(Error::Infeasible(
            "1 - p^(r-1) sigma is not invertible on the trivial component for r = 1".into(),
        ));
    }
    let zm = base.zm();
    let mut acc = base.zero();
    let mut k = 0u32;
    while k * (r - 1) < base.n() {
        let t = base.scale(&base.frob(y, k as i64), zm.p_pow(k * (r - 1)));
        acc = base.add(&acc, &t);
        k += 1;
    }
    Ok(acc)
}

fn factorial_inv(zm: &Zmod, n: u32) -> Result<u64> {
    let f: u64 = (1..=n as u64).fold(1 % zm.modulus(), |a, b| zm.mul(a, b % zm.modulus()));
    zm.inv(f).ok_or(Error::NotIntegral { valuation: -1 })
}

/// (p^r - sigma^{-1}) x / (r-1)!.
fn scaled_expstar(base: &UnramContext, x: &UnramElem, r: u32) -> Result<UnramElem> {
    let zm = base.zm();
    let t = base.sub(&base.scale(x, zm.p_pow(r)), &base.frob(x, -1));
    Ok(base.scale(&t, factorial_inv(zm, r - 1)?))
}

/// Tr_{F(zeta_p)/F}(q^{sigma^{-1}}(zeta_p - 1)) = p^r q(0) - sigma^{-1} q(0).
pub fn t0_relation(ctx: &SeriesContext, q: &LaurentSeries, r: u32) -> Result<bool> {
    let p = ctx.p() as i64;
    let need = ctx.n() as i64 * (p - 1) - 1;
    if q.lo > 0 || q.hi < need || q.below != Tail::Zero {
        return Err(Error::Window { need_lo: 0, need_hi: need, have_lo: q.lo, have_hi: q.hi });
    }
    let base = &ctx.base;
    let ring = make_ram(base, 1, 1)?;
    let coeffs: Vec<UnramElem> = (0..=q.hi).map(|n| base.frob(&q.at(n), -1)).collect();
    let v = ring.eval_poly(&coeffs, &ring.gen());
    let lhs = ring.trace_to_base(&v);
    let q0 = q.at(0);
    let rhs = base.sub(&base.scale(&q0, ctx.zm().p_pow(r)), &base.frob(&q0, -1));
    Ok(lhs == rhs)
}

/// Taylor coefficients in t of phi^{-n} nabla (1 + pi)^j against p^n d/dt phi^{-n} (1 + pi)^j;
/// both are zeta^j times the rationals compared here.
pub fn del_is_dt_check(p: u64, n: u32, j: i64, terms: usize) -> bool {
    let pn = BigRational::from_integer(BigInt::from(p).pow(n));
    let x = BigRational::from_integer(BigInt::from(j)) / &pn;
    let mut fact = BigRational::one();
    let mut xk = BigRational::one();
    let mut rows = Vec::with_capacity(terms);
    for k in 0..terms {
        if k > 0 {
            fact *= BigRational::from_integer(BigInt::from(k as u64));
            xk *= &x;
        }
        let lhs = BigRational::from_integer(BigInt::from(j)) * &xk / &fact;
        let k1 = BigRational::from_integer(BigInt::from(k as u64 + 1));
        let rhs = &pn * &k1 * (&xk * &x) / (&fact * &k1);
        rows.push(lhs - rhs);
    }
    rows.iter().all(|d| d.is_zero())
}

pub fn verify_unram_expstar(
    ctx: &SeriesContext,
    sol: &ColemanSolution,
    r: u32,
) -> Result<UnramExpstarReport> {
    if r == 0 {
        return Err(Error::Config("r must be at least 1".into()));
    }
    let base = &ctx.base;
    let zm = *ctx.zm();
    let p = ctx.p();
    let f = base.f();
    let ch = chi(p);
    let p_nabla = nabla_alpha(ctx, sol)?;
    let mut q = p_nabla.clone();
    for _ in 1..r {
        q = ctx.nabla(&q)?;
    }
    let twist = (ch as i64).pow(r);
    let lam = LambdaElem::coleman_generator(f, ch, twist);
    let terms = lam.apply(base, &sol.xi)?;
    let rhs = exp_sum_series(ctx, &terms)?;
    let pr1 = zm.p_pow(r - 1);
    let lhs = ctx.sub(&q, &ctx.scale(&ctx.phi(&q)?, &base.from_u64(pr1)))?;
    let identity_series = ctx.eq_on_window(&lhs, &rhs);

    let x = q.at(0);
    let y = terms.iter().fold(base.zero(), |a, (b, _)| base.add(&a, b));
    let evaluation = base.sub(&x, &base.scale(&base.frob(&x, 1), pr1)) == y;

    let w = inverse_one_minus(base, &y, r)?;
    let from_series = scaled_expstar(base, &x, r)?;
    let closed = scaled_expstar(base, &w, r)?;
    let closed_form = from_series == closed;

    let ratio = Rational64::new(twist - ch as i64, twist - 1);
    let yb = LambdaElem::idempotent_combination(f, ratio)
        .apply(base, &sol.xi)?
        .iter()
        .fold(base.zero(), |a, (b, _)| base.add(&a, b));
    let beta = scaled_expstar(base, &inverse_one_minus(base, &yb, r)?, r)?;

    Ok(UnramExpstarReport {
        r,
        precision: ctx.n(),
        window: (q.lo, q.hi),
        identity_series,
        evaluation,
        closed_form,
        t0_relation: t0_relation(ctx, &q, r)?,
        t0_nabla: t0_relation(ctx, &p_nabla, 1)?,
        del_is_dt: (1..=2).all(|n| (1..=3).all(|j| del_is_dt_check(p, n, j, 8))),
        expstar_u: fvalue(base, &from_series, -(r as i64)),
        expstar_beta: fvalue(base, &beta, -(r as i64)),
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct CokernelReport {
    pub dim: usize,
    pub image_rank: usize,
    pub functional_vanishes: bool,
    pub functional_nonzero: bool,
    pub solvable_sigma_minus_one: bool,
    pub solvable_gamma_minus_chi: bool,
    pub solvable_generator: bool,
    pub rejects_basis_vector: bool,
    pub log_in_kernel: bool,
}

impl CokernelReport {
    pub fn holds(&self) -> bool {
        self.image_rank + 1 == self.dim
            && self.functional_vanishes
            && self.functional_nonzero
            && self.solvable_sigma_minus_one
            && self.solvable_gamma_minus_chi
            && self.solvable_generator
            && self.rejects_basis_vector
            && self.log_in_kernel
    }
}

/// The image of (1 - phi/p) against the ideal (sigma - 1, gamma - chi): a rank
/// computation in Lambda_F / (p, (gamma - 1)^m), where gamma - chi = gamma - 1,
/// and solvability of the Coleman equation on the generators.
pub fn cokernel_check(ctx: &SeriesContext, xi: &UnramElem, m: usize) -> Result<CokernelReport> {
    let p = ctx.p();
    let f = ctx.base.f();
    let dim = f * m;
    let idx = |s: usize, k: usize| k * f + s;
    let mut cols: Vec<Vec<u64>> = Vec::new();
    for k in 0..m {
        for s in 0..f {
            let mut a = vec![0u64; dim];
            a[idx((s + 1) % f, k)] = 1;
            a[idx(s, k)] = (a[idx(s, k)] + p - 1) % p;
            cols.push(a);
            let mut b = vec![0u64; dim];
            if k + 1 < m {
                b[idx(s, k + 1)] = 1;
            }
            cols.push(b);
        }
    }
    let zm1 = Zmod::new(p, 1)?;
    let ncols = cols.len();
    let mut mat = vec![0u64; dim * ncols];
    for (j, c) in cols.iter().enumerate() {
        for i in 0..dim {
            mat[i * ncols + j] = c[i];
        }
    }
    let solved = linalg::solve(&zm1, dim, ncols, &mat, &vec![0u64; dim], None::<&mut ChaCha8Rng>)?;
    let tr = ctx.base.trace(xi) % p;
    let functional = |v: &[u64]| -> u64 { (0..f).map(|s| v[idx(s, 0)] * tr % p).sum::<u64>() % p };
    let functional_vanishes = cols.iter().all(|c| functional(c) == 0);
    let functional_nonzero = tr != 0;

    let hi = 2 * p as i64;
    let small = ctx.with_window(ctx.lo, hi);
    let ch = chi(p);
    let solvable = |lam: &LambdaElem| -> Result<bool> {
        match solve_lambda(&small, lam, xi, hi) {
            Ok(_) => Ok(true),
            Err(Error::Infeasible(_)) => Ok(false),
            Err(e) => Err(e),
        }
    };
    let pc = PContext::for_log(&small)?;
    let lg = log_one_plus_pi(&pc)?;
    let d = pc.sub(&pc.mul_p_pow(&lg, 1), &pc.phi(&lg)?)?;
    let log_in_kernel = pc.wide.is_zero_mod(&d.num, pc.wide.n());
    Ok(CokernelReport {
        dim,
        image_rank: solved.rank,
        functional_vanishes,
        functional_nonzero,
        solvable_sigma_minus_one: solvable(&LambdaElem::sigma_minus_one())?,
        solvable_gamma_minus_chi: solvable(&LambdaElem::gamma_minus_chi(ch))?,
        solvable_generator: solvable(&LambdaElem::coleman_generator(f, ch, 1))?,
        rejects_basis_vector: !solvable(&LambdaElem::basis_vector())?,
        log_in_kernel,
    })
}

/// exp then log on p x, and log then exp on 1 + p x, on the window of `ctx`.
pub fn log_exp_round_trip(ctx: &SeriesContext, x: &LaurentSeries) -> Result<bool> {
    let p = ctx.p() as i64;
    let px = ctx.scale_int(x, p);
    let pc = PContext::for_log(ctx)?;
    let u = ctx.exp_series(&px)?;
    let back = pc.log_series(&u)?;
    let first = pc.eq_on_window(&back, &pc.embed(&px));
    let one_plus = ctx.add(&ctx.constant(1), &px)?;
    let l = pc.to_integral(&pc.log_series(&one_plus)?)?;
    let again = ctx.exp_series(&l)?;
    Ok(first && ctx.eq_on_window(&again, &one_plus))
}

#[derive(Clone, Debug, Serialize)]
pub struct UnramReport {
    pub p: u64,
    pub f: usize,
    pub n: u32,
    pub xi: Vec<i64>,
    pub coleman: ColemanReport,
    pub expstar: Vec<UnramExpstarReport>,
    pub cokernel: CokernelReport,
    pub all_hold: bool,
}

pub fn unram_context(p: u64, f: usize, n: u32) -> Result<SeriesContext> {
    let base = make_unram(p, f, n)?;
    let hi = coleman_window(p, n);
    SeriesContext::new(&base, 1, Some((-(8 * p as i64 * (n as i64 + 4)), hi)))
}

/// Coleman solution checks and the dual-exponential identities for each r.
pub fn unram_report(p: u64, f: usize, rs: &[u32], n: u32) -> Result<UnramReport> {
    let ctx = unram_context(p, f, n)?;
    let xi = ctx.base.normal_basis_candidates(1)[0];
    let sol = solve_coleman(&ctx, &xi, ctx.hi)?;
    let coleman = coleman_checks(&ctx, &sol)?;
    let expstar: Vec<UnramExpstarReport> = rs
        .par_iter()
        .map(|&r| verify_unram_expstar(&ctx, &sol, r))
        .collect::<Result<_>>()?;
    let cokernel = cokernel_check(&ctx, &xi, 4)?;
    let all_hold = coleman.holds() && expstar.iter().all(|e| e.holds()) && cokernel.holds();
    Ok(UnramReport {
        p,
        f,
        n,
        xi: fvalue(&ctx.base, &xi, 0).coords,
        coleman,
        expstar,
        cokernel,
        all_hold,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg_a() -> SeriesContext {
        unram_context(5, 2, 4).unwrap()
    }

    #[test]
    fn closed_form_logs() {
        let ctx = cfg_a().with_window(-40, 60);
        let pc = PContext::for_log(&ctx).unwrap();
        let lg = log_one_plus_pi(&pc).unwrap();
        let u = ctx.one_plus_pi_pow(1);
        let direct = pc.log_series(&u).unwrap();
        assert!(pc.eq_on_window(&lg, &direct));
        let beta = ctx.base.gen();
        let l2 = log_one_plus_monomial(&pc, &beta, 2, 1).unwrap();
        let mut u2 = LaurentSeries::zeros(0, 2, Tail::Zero, Tail::Zero);
        u2.set(0, ctx.base.one());
        u2.set(2, beta);
        assert!(pc.eq_on_window(&l2, &pc.log_series(&u2).unwrap()));
        assert!(PLogElem::new(&pc, lg.clone()).log_condition);
        assert!(in_p_f(&pc, &lg));
        let not_log = pc.embed(&ctx.one_plus_pi_pow(1));
        assert!(!PLogElem::new(&pc, not_log).log_condition);
    }

    #[test]
    fn exp_sums_and_lambda() {
        let ctx = cfg_a();
        let b = &ctx.base;
        let xi = b.normal_basis_candidates(1)[0];
        let t = LambdaElem::gamma_minus_chi(6).apply(b, &xi).unwrap();
        let s = exp_sum_series(&ctx, &t).unwrap();
        // xi ((1+pi)^6 - 6 (1+pi)): constant -5 xi, linear 0, pi^2 coefficient 15 xi
        assert_eq!(s.at(0), b.scale(&xi, b.zm().from_i64(-5)));
        assert!(b.is_zero(&s.at(1)));
        assert_eq!(s.at(2), b.scale(&xi, 15));
        let g = LambdaElem::coleman_generator(2, 6, 1).apply(b, &xi).unwrap();
        let tr = b.from_u64(b.trace(&xi));
        let half = b.zm().inv(2).unwrap();
        assert_eq!(g[1].0, b.scale(&tr, half));
    }

    #[test]
    fn coleman_solution_cfg_a() {
        let ctx = cfg_a();
        let xi = ctx.base.normal_basis_candidates(1)[0];
        let sol = solve_coleman(&ctx, &xi, ctx.hi).unwrap();
        let rep = coleman_checks(&ctx, &sol).unwrap();
        assert!(rep.holds(), "{rep:?}");
        assert!(rep.window.1 >= 40);
        let mut bad = sol.clone();
        let one = bad.pc.wide.base.from_u64(bad.pc.wide.zm().p_pow(bad.pc.k));
        let v = bad.pc.wide.base.add(&bad.alpha.num.at(3), &one);
        bad.alpha.num.set(3, v);
        assert!(!coleman_checks(&ctx, &bad).unwrap().equation);
    }

    #[test]
    fn expstar_cfg_a() {
        let ctx = cfg_a();
        let xi = ctx.base.normal_basis_candidates(1)[0];
        let sol = solve_coleman(&ctx, &xi, ctx.hi).unwrap();
        for r in [2u32, 3] {
            let rep = verify_unram_expstar(&ctx, &sol, r).unwrap();
            assert!(rep.holds(), "{rep:?}");
            assert_eq!(rep.expstar_u.p_exponent, -(r as i64));
        }
        assert!(matches!(verify_unram_expstar(&ctx, &sol, 1), Err(Error::Infeasible(_))));
    }

    #[test]
    fn expstar_detects_wrong_twist() {
        let ctx = cfg_a();
        let b = &ctx.base;
        let xi = b.normal_basis_candidates(1)[0];
        let sol = solve_coleman(&ctx, &xi, ctx.hi).unwrap();
        let q = ctx.nabla(&nabla_alpha(&ctx, &sol).unwrap()).unwrap();
        let wrong = LambdaElem::coleman_generator(2, 6, 6).apply(b, &xi).unwrap();
        let rhs = exp_sum_series(&ctx, &wrong).unwrap();
        let lhs = ctx.sub(&q, &ctx.scale_int(&ctx.phi(&q).unwrap(), 5)).unwrap();
        assert!(!ctx.eq_on_window(&lhs, &rhs));
        assert!(!t0_relation(&ctx, &q, 1).unwrap());
    }

    #[test]
    fn del_is_dt() {
        for (p, n, j) in [(5u64, 1u32, 1i64), (5, 2, 7), (13, 1, 3)] {
            assert!(del_is_dt_check(p, n, j, 10));
        }
    }

    #[test]
    fn cokernel_cfg_a() {
        let ctx = cfg_a();
        let xi = ctx.base.normal_basis_candidates(1)[0];
        let rep = cokernel_check(&ctx, &xi, 4).unwrap();
        assert_eq!(rep.dim, 8);
        assert_eq!(rep.image_rank, 7);
        assert!(rep.holds(), "{rep:?}");
        let not_normal = ctx.base.from_i64(5);
        assert!(solve_coleman(&ctx, &not_normal, 20).is_err());
    }

    #[test]
    fn stabilize_examples() {
        let pc = stabilization_context(5, 2, 4).unwrap();
        let lg = log_one_plus_pi(&pc).unwrap();
        let st = stabilize(&pc, &PLogElem::new(&pc, lg.clone())).unwrap();
        assert!(pc.eq_on_window(&st.limit.series, &lg));
        assert!(st.window.1 >= 20, "{:?}", st.window);
        let not_log = pc.embed(&pc.base.one_plus_pi_pow(2));
        assert!(matches!(
            stabilize(&pc, &PLogElem::new(&pc, not_log)),
            Err(Error::Convergence(_))
        ));
    }

    #[test]
    fn stabilize_fifty_random() {
        let pc = stabilization_context(5, 2, 4).unwrap();
        let s = stabilization_suite(&pc, 50, 17).unwrap();
        assert_eq!(s.passed, 50, "{s:?}");
        assert!(s.log_fixed);
    }

    #[test]
    fn unram_report_serializes() {
        let rep = unram_report(5, 2, &[2, 3], 4).unwrap();
        assert!(rep.all_hold);
        let js = serde_json::to_value(&rep).unwrap();
        assert_eq!(js["expstar"][1]["r"], 3);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]
        #[test]
        fn log_exp_round_trips(coeffs in proptest::collection::vec(0u64..625, 1..6)) {
            let base = make_unram(5, 2, 3).unwrap();
            let ctx = SeriesContext::new(&base, 1, Some((-40, 16))).unwrap();
            let mut x = LaurentSeries::zeros(1, coeffs.len() as i64, Tail::Zero, Tail::Zero);
            for (i, &c) in coeffs.iter().enumerate() {
                x.set(i as i64 + 1, base.from_coords(&[c % 125, c / 5]));
            }
            prop_assert!(log_exp_round_trip(&ctx, &x).unwrap());
        }
    }
}
