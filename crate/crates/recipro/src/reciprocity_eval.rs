//! Evaluation of psi = 1 elements at the level-1 and level-2 uniformizers,
//! the nabla valuation laws, normalized-trace relations and the
//! group-ring volume test for tame isotypic components.

use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::field_towers::{
    make_kummer_with, FracElem, KummerContext, RamContext, RamElem, TowerPair, UnramContext,
    UnramElem,
};
use crate::laurent_ring::{LaurentSeries, SeriesContext, Tail};
use crate::linalg::{self, CyclicGroupRing};
use crate::padic_core::{Valuation, Zmod};
use crate::psi_solver::{basis_tame, notsoeasy_mus, normalize_orbit, Preparation, PsiOneWitness};

/// Largest nu with p^nu | a_i forced for every psi = 1 element:
/// p i < -(nu (p-1) + 1) e.
pub fn growth_exponent(p: u64, e: u64, i: i64) -> u32 {
    let num = -(p as i64) * i - e as i64;
    if num <= 0 {
        0
    } else {
        ((num - 1) / (e as i64 * (p as i64 - 1))) as u32
    }
}

/// What is known about the true series behind a truncated one.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum TailBound {
    /// The truth agrees with the series mod p^nu and vanishes outside its window.
    Exact { nu: u32 },
    /// The truth agrees with the series mod p^nu and satisfies
    /// v_p(a_i) >= growth_exponent(i + shift); shift is e per application of nabla.
    Growth { nu: u32, shift: i64 },
}

impl TailBound {
    pub fn psi_one(w: &PsiOneWitness) -> Self {
        TailBound::Growth { nu: w.nu, shift: 0 }
    }

    pub fn nu(self) -> u32 {
        match self {
            TailBound::Exact { nu } | TailBound::Growth { nu, .. } => nu,
        }
    }

    /// The bound for nabla^k of a series with this bound.
    pub fn after_nabla(self, e: u64, k: u32) -> Self {
        match self {
            TailBound::Exact { nu } => TailBound::Exact { nu },
            TailBound::Growth { nu, shift } => TailBound::Growth {
                nu,
                shift: shift + e as i64 * k as i64,
            },
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum FloorSource {
    /// The error term of the coefficient at this index.
    Term(i64),
    /// Coefficients above the window are only known to be integral.
    WindowTop,
    /// The working precision of the target ring.
    RingPrecision,
}

/// The value is correct modulo varpi^floor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct EvalCertificate {
    pub bound: TailBound,
    pub floor: i64,
    pub source: FloorSource,
}

#[derive(Clone, Debug)]
pub struct EvalResult {
    pub level: u32,
    pub value: FracElem,
    pub v_varpi: Valuation,
    pub certificate: EvalCertificate,
}

#[derive(Clone, Debug, Serialize)]
pub struct EvalSummary {
    pub level: u32,
    pub v_varpi: Valuation,
    pub certificate: EvalCertificate,
}

impl EvalResult {
    pub fn summary(&self) -> EvalSummary {
        EvalSummary {
            level: self.level,
            v_varpi: self.v_varpi,
            certificate: self.certificate,
        }
    }

    pub fn floor(&self) -> i64 {
        self.certificate.floor
    }
}

/// Substitution pi_K -> x * unit into a ramified ring, with sigma^(-k) on coefficients.
#[derive(Clone, Debug)]
pub struct Evaluator {
    pub ring: Arc<RamContext>,
    pub unit: RamElem,
    pub level: u32,
    pub kummer: Option<KummerContext>,
}

/// Largest n with p^n below 2^62.
fn max_precision(p: u64) -> u32 {
    let mut n = 0u32;
    let mut q: u128 = 1;
    while q * p as u128 <= 1u128 << 62 {
        q *= p as u128;
        n += 1;
    }
    n
}

/// Ring precision used for evaluations over a series context.
pub fn eval_precision(ctx: &SeriesContext) -> u32 {
    (ctx.n() + 6).min(max_precision(ctx.p()))
}

impl Evaluator {
    /// Level 1 in the Kummer model O_F[w]/(w^(e(p-1)) + p), pi_K -> the Hensel root varpi.
    pub fn kummer(base: &Arc<UnramContext>, e: u64, precision: u32) -> Result<Self> {
        let wide = base.with_precision(precision)?;
        let d = e * (wide.p() - 1);
        let k = make_kummer_with(&wide, d, -1)?;
        let unit = k.hensel_varpi_unit()?;
        Ok(Evaluator {
            ring: k.ring.clone(),
            unit,
            level: 1,
            kummer: Some(k),
        })
    }

    pub fn level_one(ctx: &SeriesContext) -> Result<Self> {
        Self::kummer(&ctx.base, ctx.e, eval_precision(ctx))
    }

    /// A cyclotomic ring Phi_{p^level}(1 + x^e) whose generator is the uniformizer.
    pub fn cyclotomic(ring: Arc<RamContext>, level: u32) -> Self {
        let unit = ring.one();
        Evaluator {
            ring,
            unit,
            level,
            kummer: None,
        }
    }

    /// v_varpi(p) in the target ring.
    pub fn degree(&self) -> i64 {
        self.ring.deg() as i64
    }

    pub fn varpi(&self) -> RamElem {
        self.ring.mul_x(&self.unit)
    }

    pub fn precision(&self) -> u32 {
        self.ring.n()
    }

    /// sum_i sigma^(-twist)(a_i) varpi^i with the certified floor.
    pub fn eval(
        &self,
        ctx: &SeriesContext,
        a: &LaurentSeries,
        bound: TailBound,
        twist: i64,
    ) -> Result<EvalResult> {
        let p = ctx.p();
        let e = ctx.e;
        let big_e = self.degree();
        let e1 = ctx.d as i64;
        let nu = bound.nu();
        if nu == 0 || nu > ctx.n() {
            return Err(Error::Precision(format!(
                "series known mod p^{nu} in a context of precision {}",
                ctx.n()
            )));
        }
        let shift = match bound {
            TailBound::Exact { .. } => {
                if a.below != Tail::Zero || a.above != Tail::Zero {
                    return Err(Error::Precision(
                        "an exact series needs zero tails on both sides".into(),
                    ));
                }
                None
            }
            TailBound::Growth { shift, .. } => Some(shift),
        };
        let wide = self.ring.base().clone();
        let basenu = ctx.base.with_precision(nu)?;
        let reps: Vec<UnramElem> = a
            .c
            .iter()
            .map(|x| wide.frob(&wide.coerce(&basenu.coerce(x)), -twist))
            .collect();
        let growth = |i: i64, s: i64| growth_exponent(p, e, i + s) as i64;
        let mut floor = i64::MAX;
        let mut source = FloorSource::WindowTop;
        if a.above == Tail::Unknown {
            floor = a.hi + 1;
        }
        for (k, r) in reps.iter().enumerate() {
            let i = a.lo + k as i64;
            let v = match shift {
                Some(s) if wide.is_zero(r) => (nu as i64).max(growth(i, s)),
                _ => nu as i64,
            };
            if big_e * v + i < floor {
                floor = big_e * v + i;
                source = FloorSource::Term(i);
            }
        }
        if let Some(s) = shift {
            let nu_below = if a.below == Tail::Zero { nu as i64 } else { 0 };
            let mut i = a.lo - 1;
            loop {
                let num = -(p as i64) * (i + s) - e as i64;
                if (big_e / e1) * (num - e1) + i > floor {
                    break;
                }
                let f = big_e * nu_below.max(growth(i, s)) + i;
                if f < floor {
                    floor = f;
                    source = FloorSource::Term(i);
                }
                i -= 1;
            }
        }
        let k0 = if a.lo >= 0 { 0 } else { (-a.lo + big_e - 1) / big_e };
        let cap = big_e * (self.precision() as i64 - k0);
        if cap < floor {
            floor = cap;
            source = FloorSource::RingPrecision;
        }
        let top = a.hi.min(floor - 1);
        let value = if top < a.lo {
            let r = &self.ring;
            r.frac(r.zero())
        } else {
            let n = (top - a.lo + 1) as usize;
            self.ring.eval_laurent(&reps[..n], a.lo, &self.unit)?
        };
        let v_varpi = match self.ring.frac_valuation(&value) {
            Valuation::Exact(v) if v < floor => Valuation::Exact(v),
            _ => Valuation::AtLeast(floor),
        };
        Ok(EvalResult {
            level: self.level,
            value,
            v_varpi,
            certificate: EvalCertificate {
                bound,
                floor,
                source,
            },
        })
    }

    /// Whether two values agree modulo varpi^floor.
    pub fn agree(&self, x: &FracElem, y: &FracElem, floor: i64) -> bool {
        let d = self.ring.frac_sub(x, y);
        self.ring.frac_valuation(&d).bound() >= floor
    }
}

/// phi^(-1)(a) at t = 0 for a psi = 1 witness: sum sigma^(-twist)(a_i) varpi^i.
pub fn eval_phi_inv(
    ev: &Evaluator,
    ctx: &SeriesContext,
    a: &PsiOneWitness,
    twist: i64,
) -> Result<EvalResult> {
    ev.eval(ctx, &a.series, TailBound::psi_one(a), twist)
}

/// eval_phi_inv, failing unless the value is certified modulo varpi^want.
pub fn eval_phi_inv_to(
    ev: &Evaluator,
    ctx: &SeriesContext,
    a: &PsiOneWitness,
    twist: i64,
    want: i64,
) -> Result<EvalResult> {
    let r = eval_phi_inv(ev, ctx, a, twist)?;
    if r.floor() < want {
        return Err(Error::Precision(format!(
            "value certified modulo varpi^{} ({:?}), requested varpi^{want}",
            r.floor(),
            r.certificate.source
        )));
    }
    Ok(r)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub enum CheckStatus {
    Pass,
    Fail,
    Skipped(String),
    Degenerate,
}

#[derive(Clone, Debug, Serialize)]
pub struct NablaReport {
    pub r: u32,
    pub l: Option<i64>,
    pub l2: Option<i64>,
    pub law: Option<String>,
    pub predicted: Option<i64>,
    pub l_derived: Option<i64>,
    pub observed: Option<Valuation>,
    pub floor: Option<i64>,
    pub status: CheckStatus,
}

/// The valuation law covering a, as (name, predicted v_varpi(nabla^(r-1) a)).
fn valuation_law(
    ctx: &SeriesContext,
    l: i64,
    l2: Option<i64>,
    r: u32,
    prep: Option<Preparation>,
) -> std::result::Result<(&'static str, i64), String> {
    let p = ctx.p() as i64;
    let e = ctx.ei();
    let d = ctx.d as i64;
    let notsoeasy = notsoeasy_mus(ctx)
        .into_iter()
        .find(|mu| mu * p - e + d == l)
        .filter(|mu| l2.is_some_and(|v| v >= mu * p - e));
    match r {
        1 => {
            if l < -e + d {
                Ok(("easy", l))
            } else if let Some(mu) = notsoeasy {
                if (mu - e) % p != 0 {
                    Ok(("notsoeasy", l))
                } else {
                    Err(format!("p divides mu - e for mu = {mu}"))
                }
            } else {
                Err(format!("no valuation law for l(a) = {l}"))
            }
        }
        2 => {
            if 2 * e >= p {
                return Err(format!("needs 2e < p, have e = {e}, p = {p}"));
            }
            if l % p != 0 && l < -e + d {
                Ok(("notdivbyp", l - e))
            } else if notsoeasy.is_some() {
                Ok(("notdivbyp", l - e))
            } else if l % p == 0 && l > 0 && l < -e + d {
                if 4 * e >= p {
                    Err(format!("needs 4e < p, have e = {e}, p = {p}"))
                } else if prep != Some(Preparation::DivByP) {
                    Err("a is not prepared as pi_K^(mu p) - pi_K^(mu p + e(p-1)) mod p^2".into())
                } else {
                    Ok(("divbyp", l - e + d))
                }
            } else {
                Err(format!("no valuation law for l(a) = {l}"))
            }
        }
        _ => Err(format!("no valuation law for r = {r}")),
    }
}

/// Compare v_varpi(nabla^(r-1) a) with the valuation law covering l(a).
pub fn nabla_valuation_check(
    ev: &Evaluator,
    ctx: &SeriesContext,
    a: &PsiOneWitness,
    r: u32,
    prep: Option<Preparation>,
) -> Result<NablaReport> {
    if r == 0 {
        return Err(Error::Config("r must be positive".into()));
    }
    let mut s = a.series.clone();
    for _ in 1..r {
        s = ctx.nabla(&s)?;
    }
    let mut report = NablaReport {
        r,
        l: a.l().exact(),
        l2: if a.nu >= 2 { ctx.l_nu(&a.series, 2).exact() } else { None },
        law: None,
        predicted: None,
        l_derived: ctx.l_nu(&s, 1).exact(),
        observed: None,
        floor: None,
        status: CheckStatus::Degenerate,
    };
    let zero = s.below == Tail::Zero
        && s.above == Tail::Zero
        && s.c.iter().all(|x| ctx.base.val_u32(x) >= a.nu);
    if zero {
        return Ok(report);
    }
    let Some(l) = report.l else {
        report.status = CheckStatus::Skipped("l(a) is not determined on the window".into());
        return Ok(report);
    };
    let (law, predicted) = match valuation_law(ctx, l, report.l2, r, prep) {
        Ok(v) => v,
        Err(reason) => {
            report.status = CheckStatus::Skipped(reason);
            return Ok(report);
        }
    };
    report.law = Some(law.into());
    report.predicted = Some(predicted);
    let bound = TailBound::psi_one(a).after_nabla(ctx.e, r - 1);
    let val = ev.eval(ctx, &s, bound, 1)?;
    if val.floor() <= predicted {
        return Err(Error::Precision(format!(
            "value certified modulo varpi^{}, predicted valuation {predicted}",
            val.floor()
        )));
    }
    report.observed = Some(val.v_varpi);
    report.floor = Some(val.floor());
    let ok = val.v_varpi == Valuation::Exact(predicted) && report.l_derived == Some(predicted);
    report.status = if ok { CheckStatus::Pass } else { CheckStatus::Fail };
    Ok(report)
}

/// Level-1 and level-2 cyclotomic rings with the relative trace.
#[derive(Clone, Debug)]
pub struct TraceTower {
    pub pair: TowerPair,
    pub ev1: Evaluator,
    pub ev2: Evaluator,
}

impl TraceTower {
    pub fn new(ctx: &SeriesContext, precision: u32) -> Result<Self> {
        let p = ctx.p();
        if p != 5 || ctx.e > 2 {
            return Err(Error::Unsupported(format!(
                "level-2 trace checks run for p = 5 and e <= 2, have p = {p}, e = {}",
                ctx.e
            )));
        }
        let base = ctx.base.with_precision(precision)?;
        let pair = TowerPair::new(&base, ctx.e)?;
        let ev1 = Evaluator::cyclotomic(pair.k1.clone(), 1);
        let ev2 = Evaluator::cyclotomic(pair.k2.clone(), 2);
        Ok(TraceTower { pair, ev1, ev2 })
    }

    /// T_1(x) = p^(-m) Tr_{K_m/K_1}(x) for x in K_m, m = 1 or 2.
    pub fn normalized_trace(&self, x: &FracElem, m: u32) -> FracElem {
        match m {
            1 => FracElem {
                pexp: x.pexp - 1,
                body: x.body.clone(),
            },
            _ => FracElem {
                pexp: x.pexp - 2,
                body: self.pair.trace(&x.body),
            },
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct TraceReport {
    pub r: u32,
    pub level: u32,
    pub psi_eigen: bool,
    pub floor_level1: i64,
    pub floor_level2: i64,
    /// Both sides compared modulo varpi_1^compared.
    pub compared: i64,
    pub p_digits: i64,
    /// p^(-r) sum over the conjugates at level 2 equals the level-1 evaluation.
    pub conjugate_sum: bool,
    /// (T_1 phi^(-m) P)(0) = p^((r-1)m - r) (phi^(-1) P)(0) for m = 1, 2.
    pub normalized_same_level: bool,
    pub normalized_next_level: bool,
    pub holds: bool,
}

/// Check the conjugate-sum relation and the normalized-trace identity at
/// level 1 for P with psi(P) = p^(r-1) P.
pub fn trace_relation_check(
    tower: &TraceTower,
    ctx: &SeriesContext,
    pser: &LaurentSeries,
    bound: TailBound,
    r: u32,
) -> Result<TraceReport> {
    if r == 0 {
        return Err(Error::Config("r must be positive".into()));
    }
    let p = ctx.p();
    let e1 = tower.ev1.degree();
    let nu = bound.nu();
    let psi_eigen = {
        let ps = ctx.psi(pser)?;
        let target = ctx.scale_int(pser, p.pow(r - 1) as i64);
        let bnu = ctx.base.with_precision(nu)?;
        (ps.lo..=ps.hi)
            .filter(|&i| target.is_known(i))
            .all(|i| bnu.coerce(&ps.at(i)) == bnu.coerce(&target.at(i)))
    };
    let v1 = tower.ev1.eval(ctx, pser, bound, 1)?;
    let v2 = tower.ev2.eval(ctx, pser, bound, 2)?;
    let p_r = |x: &FracElem, k: i64| FracElem {
        pexp: x.pexp + k,
        body: x.body.clone(),
    };
    // Tr(varpi_2^B O) lies in varpi_1^floor(B/p) O since varpi_2^p / varpi_1 is a unit.
    let tr_floor = v2.floor().div_euclid(p as i64);
    let tr = FracElem {
        pexp: v2.value.pexp,
        body: tower.pair.trace(&v2.value.body),
    };
    let lhs = p_r(&tr, -(r as i64));
    let lhs_floor = (tr_floor - r as i64 * e1).min(e1 * (tower.ev1.precision() as i64 + lhs.pexp));
    let compared = lhs_floor.min(v1.floor());
    if compared <= 0 {
        return Err(Error::Precision(format!(
            "level-2 value certified modulo varpi_2^{}, level-1 modulo varpi_1^{}",
            v2.floor(),
            v1.floor()
        )));
    }
    let conjugate_sum = tower.ev1.agree(&lhs, &v1.value, compared);
    let rr = r as i64;
    let same_l = tower.normalized_trace(&v1.value, 1);
    let same_r = p_r(&v1.value, (rr - 1) - rr);
    let normalized_same_level = tower.ev1.agree(&same_l, &same_r, compared - e1);
    let next_l = tower.normalized_trace(&v2.value, 2);
    let next_r = p_r(&v1.value, 2 * (rr - 1) - rr);
    let normalized_next_level = tower.ev1.agree(&next_l, &next_r, compared + (rr - 2) * e1);
    Ok(TraceReport {
        r,
        level: 1,
        psi_eigen,
        floor_level1: v1.floor(),
        floor_level2: v2.floor(),
        compared,
        p_digits: compared.div_euclid(e1),
        conjugate_sum,
        normalized_same_level,
        normalized_next_level,
        holds: psi_eigen && conjugate_sum && normalized_same_level && normalized_next_level,
    })
}

/// trace_relation_check for P = nabla^(r-1) a with a psi = 1 witness.
pub fn trace_relation_for_witness(
    tower: &TraceTower,
    ctx: &SeriesContext,
    a: &PsiOneWitness,
    r: u32,
) -> Result<TraceReport> {
    let mut s = a.series.clone();
    for _ in 1..r {
        s = ctx.nabla(&s)?;
    }
    let bound = TailBound::psi_one(a).after_nabla(ctx.e, r.saturating_sub(1));
    trace_relation_check(tower, ctx, &s, bound, r)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Verdict {
    Pass,
    Fail,
}

#[derive(Clone, Debug, Serialize)]
pub struct VolumeRow {
    pub n: i64,
    pub l: i64,
    pub prep: Option<Preparation>,
    /// n_{i,r} in (0, e(p-1)).
    pub target: i64,
    pub predicted: i64,
    pub observed: Valuation,
    /// q_i is rescaled by p^scaling.
    pub scaling: i64,
    pub floor: i64,
    pub off_component_vanishes: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct VolumeReport {
    pub p: u64,
    pub e: u64,
    pub f: usize,
    pub orbit: Vec<i64>,
    pub r: u32,
    pub nu: u32,
    pub hypothesis: String,
    pub rows: Vec<VolumeRow>,
    /// lambda_{ij} = p^row_exponents[i] times these entries of (Z/p^precision)[Sigma].
    pub lambda: Vec<Vec<Vec<u64>>>,
    pub row_exponents: Vec<i64>,
    pub precision: u32,
    /// det = p^det_exponent times det_unit_part, known mod p^det_precision.
    pub det_unit_part: Vec<u64>,
    pub det_exponent: i64,
    pub det_precision: u32,
    pub integral: bool,
    pub unit: bool,
    pub predicted_valuations_hold: bool,
    pub verdict: Verdict,
    pub conditional_on: String,
}

/// Predicted v_varpi(nabla^(r-1) alpha_i) for the tame basis.
pub fn predicted_valuation(ctx: &SeriesContext, n: i64, r: u32) -> Result<i64> {
    let p = ctx.p() as i64;
    let e = ctx.ei();
    let d = ctx.d as i64;
    match r {
        1 => Ok(n - e + if n % p == 0 { d } else { 0 }),
        2 => Ok(n - 2 * e + if n % p == 0 || (n - e) % p == 0 { d } else { 0 }),
        _ => Err(Error::Unsupported(format!("no valuation prediction for r = {r}"))),
    }
}

struct RowData {
    row: VolumeRow,
    /// Scaled coordinates p^pexp * body along each target, with absolute precisions.
    pexp: i64,
    bodies: Vec<UnramElem>,
    precisions: Vec<i64>,
}

/// Coordinates over Z/p^prec[Sigma] of c = lambda . xi.
fn group_ring_coords(
    base: &UnramContext,
    zm: &Zmod,
    xi: &UnramElem,
    c: &[u64],
) -> Result<Vec<u64>> {
    let f = base.f();
    let mut mat = vec![0u64; f * f];
    for k in 0..f {
        let s = base.frob(xi, k as i64);
        for row in 0..f {
            mat[row * f + k] = s.0[row] % zm.modulus();
        }
    }
    let inv = linalg::inverse(zm, f, &mat)
        .map_err(|_| Error::Config("xi is not a normal basis element".into()))?;
    Ok((0..f)
        .map(|k| {
            (0..f).fold(0u64, |acc, row| {
                zm.add(acc, zm.mul(inv[k * f + row], c[row] % zm.modulus()))
            })
        })
        .collect())
}

/// The volume test for witnesses alpha_i in one isotypic component: rows
/// nabla^(r-1) alpha_i^(sigma^-1)(varpi) rescaled by the predicted p-powers,
/// coordinates along w^(n_{j,r}) converted to Z_p[Sigma] via xi.
pub fn volume_from_basis(
    ev: &Evaluator,
    ctx: &SeriesContext,
    basis: &[(i64, Option<Preparation>, PsiOneWitness)],
    r: u32,
    xi: &UnramElem,
) -> Result<VolumeReport> {
    let p = ctx.p();
    let e = ctx.ei();
    let d = ctx.d as i64;
    let f = ctx.base.f();
    if ev.kummer.is_none() || ev.degree() != d {
        return Err(Error::Config("volume rows need the level-1 Kummer evaluator".into()));
    }
    if !ctx.base.is_normal_basis(xi) {
        return Err(Error::Config("xi is not a normal basis element".into()));
    }
    let ns: Vec<i64> = basis.iter().map(|b| b.0).collect();
    let targets: Vec<i64> = ns.iter().map(|n| (n - r as i64 * e).rem_euclid(d)).collect();
    let wide = ev.ring.base().clone();
    let nw = ev.precision() as i64;
    let rows: Vec<RowData> = basis
        .par_iter()
        .map(|(n, prep, w)| -> Result<RowData> {
            let mut s = w.series.clone();
            for _ in 1..r {
                s = ctx.nabla(&s)?;
            }
            let bound = TailBound::psi_one(w).after_nabla(ctx.e, r - 1);
            let val = ev.eval(ctx, &s, bound, 1)?;
            let target = (n - r as i64 * e).rem_euclid(d);
            let predicted = predicted_valuation(ctx, *n, r)?;
            let scaling = (target - predicted).div_euclid(d);
            let floor = val.floor();
            let body = &val.value.body;
            let off = (0..d as usize)
                .filter(|j| !targets.contains(&(*j as i64)))
                .all(|j| {
                    let v = wide.val_u32(&body.c[j]) as i64;
                    v >= nw || d * (v + val.value.pexp) + j as i64 >= floor
                });
            let pexp = val.value.pexp + scaling;
            let bodies: Vec<UnramElem> = targets.iter().map(|&t| body.c[t as usize]).collect();
            let precisions: Vec<i64> = targets
                .iter()
                .map(|&t| (floor - t + d - 1).div_euclid(d) + scaling)
                .collect();
            Ok(RowData {
                row: VolumeRow {
                    n: *n,
                    l: w.l().exact().unwrap_or(i64::MIN),
                    prep: *prep,
                    target,
                    predicted,
                    observed: val.v_varpi,
                    scaling,
                    floor,
                    off_component_vanishes: off,
                },
                pexp,
                bodies,
                precisions,
            })
        })
        .collect::<Result<_>>()?;
    // Row i is p^t_i times a row of integral entries with a unit content.
    let shifts: Vec<i64> = rows
        .iter()
        .map(|rd| {
            let known = rd.bodies.iter().zip(&rd.precisions).map(|(b, &a)| {
                (rd.pexp + (wide.val_u32(b) as i64).min(nw)).min(a)
            });
            known.min().unwrap_or(0)
        })
        .collect();
    let prec = rows
        .iter()
        .zip(&shifts)
        .flat_map(|(rd, &t)| rd.precisions.iter().map(move |a| a - t))
        .min()
        .unwrap_or(0)
        .min(nw);
    let size = rows.len();
    let shift_sum: i64 = shifts.iter().sum();
    let rows_out: Vec<VolumeRow> = rows.iter().map(|r| r.row.clone()).collect();
    if prec < 1 {
        if shift_sum < 1 {
            return Err(Error::Precision(format!(
                "a row of group-ring coordinates vanishes modulo p^{}",
                shift_sum
            )));
        }
    }
    let prec = prec.max(0) as u32;
    let mut lambda: Vec<Vec<Vec<u64>>> = Vec::with_capacity(size);
    let mut det = Vec::new();
    let mut exponent = shift_sum;
    let mut det_prec = prec;
    if prec > 0 {
        let zm = Zmod::new(p, prec)?;
        let xi_w = wide.coerce(xi);
        for (rd, &t) in rows.iter().zip(&shifts) {
            let k = rd.pexp - t;
            let mut line = Vec::with_capacity(rd.bodies.len());
            for b in &rd.bodies {
                let x = if k >= 0 {
                    let scale = if k >= prec as i64 { 0 } else { zm.p_pow(k as u32) };
                    b.0[..f].iter().map(|&x| zm.mul(x % zm.modulus(), scale)).collect::<Vec<u64>>()
                } else {
                    let y = wide.div_p_pow(b, (-k) as u32);
                    y.0[..f].iter().map(|&x| x % zm.modulus()).collect()
                };
                line.push(group_ring_coords(&wide, &zm, &xi_w, &x)?);
            }
            lambda.push(line);
        }
        let g = CyclicGroupRing::new(zm, f);
        let flat: Vec<Vec<u64>> = lambda.iter().flatten().cloned().collect();
        det = g.det(size, &flat);
        while det_prec > 0 && det.iter().all(|x| x % p == 0) {
            det = det.iter().map(|x| x / p).collect();
            det_prec -= 1;
            exponent += 1;
        }
    }
    let (integral, unit) = if det_prec == 0 {
        if exponent >= 1 {
            (true, false)
        } else {
            return Err(Error::Precision(format!(
                "determinant vanishes modulo the certified precision p^{prec}"
            )));
        }
    } else {
        let reduced = Zmod::new(p, det_prec)?;
        det = det.iter().map(|x| x % reduced.modulus()).collect();
        let g1 = CyclicGroupRing::new(reduced, f);
        (exponent >= 0, exponent == 0 && g1.is_unit(&det))
    };
    let predicted_valuations_hold = rows_out
        .iter()
        .all(|r| r.observed == Valuation::Exact(r.predicted) && r.off_component_vanishes);
    let hypothesis = match r {
        1 if ctx.e < p => "e < p".to_string(),
        2 if 4 * ctx.e < p => "e < p/4".to_string(),
        _ => format!("outside the proven range (r = {r}, e = {}, p = {p})", ctx.e),
    };
    Ok(VolumeReport {
        p,
        e: ctx.e,
        f,
        orbit: ns,
        r,
        nu: basis.iter().map(|b| b.2.nu).min().unwrap_or(0),
        hypothesis,
        rows: rows_out,
        lambda,
        row_exponents: shifts,
        precision: prec,
        det_unit_part: det,
        det_exponent: exponent,
        det_precision: det_prec,
        integral,
        unit,
        predicted_valuations_hold,
        verdict: if unit { Verdict::Pass } else { Verdict::Fail },
        conditional_on: "basis property certified modulo (p, gamma_1 - 1) only".into(),
    })
}

/// Tame basis for the orbit and its volume report, raising the witness
/// precision by up to two digits when the coordinates are not certified.
pub fn volume_check<R: Rng>(
    ctx: &SeriesContext,
    orbit: &[i64],
    r: u32,
    xi: Option<UnramElem>,
    rng: &mut R,
) -> Result<VolumeReport> {
    if !(1..=2).contains(&r) {
        return Err(Error::Unsupported(format!("volume rows for r = {r}")));
    }
    normalize_orbit(ctx, orbit)?;
    let xi = match xi {
        Some(x) => x,
        None => ctx.base.normal_basis_candidates(1)[0],
    };
    if !ctx.base.is_normal_basis(&xi) {
        return Err(Error::Config("xi is not a normal basis element".into()));
    }
    let mut last = None;
    for extra in 0..3u32 {
        let wctx = ctx.widen(extra)?;
        let nu = wctx.n();
        let xw = wctx.base.coerce(&xi);
        let basis = basis_tame(&wctx, orbit, &xw, nu, r == 2, rng)?;
        let items: Vec<(i64, Option<Preparation>, PsiOneWitness)> = basis
            .into_iter()
            .map(|b| (b.n, Some(b.prep), b.witness))
            .collect();
        let ev = Evaluator::level_one(&wctx)?;
        match volume_from_basis(&ev, &wctx, &items, r, &xw) {
            Err(Error::Precision(msg)) => last = Some(Error::Precision(msg)),
            other => return other,
        }
    }
    Err(last.unwrap())
}

/// alpha_i + p alpha_j + (gamma_1 - 1) alpha_k for random j, k, recertified.
pub fn perturb_basis<R: Rng>(
    ctx: &SeriesContext,
    basis: &[(i64, Option<Preparation>, PsiOneWitness)],
    rng: &mut R,
) -> Result<Vec<(i64, Option<Preparation>, PsiOneWitness)>> {
    let p = ctx.p();
    let lo = basis.iter().map(|b| b.2.series.lo).min().unwrap_or(ctx.lo);
    let hi = basis.iter().map(|b| b.2.series.hi).max().unwrap_or(ctx.hi);
    let wctx = ctx.with_window(lo.min(ctx.lo), hi.max(ctx.hi));
    let mut out = Vec::with_capacity(basis.len());
    for (n, prep, w) in basis {
        let j = rng.gen_range(0..basis.len());
        let k = rng.gen_range(0..basis.len());
        let pa = wctx.scale_int(&basis[j].2.series, p as i64);
        let ak = &basis[k].2.series;
        let ga = wctx.gamma_act(ak, 1 + p)?;
        let g1 = wctx.sub(&ga, ak)?;
        let s = wctx.add(&wctx.add(&w.series, &pa)?, &g1)?;
        out.push((*n, *prep, PsiOneWitness::certify(ctx, s, w.nu)?));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field_towers::make_unram;
    use crate::psi_solver::{
        lift_mod_pnu, nabla_log_pi_pow, nabla_log_witness, solve_divbyp_seed, solve_leading, solve_notsoeasy,
    };
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sctx(p: u64, e: u64, f: usize, n: u32) -> SeriesContext {
        SeriesContext::new(&make_unram(p, f, n).unwrap(), e, None).unwrap()
    }

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn exact(ctx: &SeriesContext) -> TailBound {
        TailBound::Exact { nu: ctx.n() }
    }

    #[test]
    fn growth_exponents() {
        assert_eq!(growth_exponent(5, 2, -2), 0);
        assert_eq!(growth_exponent(5, 2, -3), 1);
        assert_eq!(growth_exponent(5, 2, -8), 4);
        for i in -200..0 {
            let nu = growth_exponent(13, 2, i) as i64;
            assert!(13 * i < -(nu * 12 + 1) * 2);
            assert!(13 * i >= -((nu + 1) * 12 + 1) * 2);
        }
    }

    #[test]
    fn eval_pi_is_zeta_minus_one() {
        let ctx = sctx(5, 2, 2, 4);
        let ev = Evaluator::level_one(&ctx).unwrap();
        let r = &ev.ring;
        let a = ctx.monomial(ctx.base.one(), 2);
        let v = ev.eval(&ctx, &a, exact(&ctx), 1).unwrap();
        assert_eq!(v.v_varpi, Valuation::Exact(2));
        // Phi_5(1 + value) = 0 up to the certified floor
        let z = r.frac_to_integral(&v.value).unwrap();
        let one = r.one();
        let y = r.add(&one, &z);
        let phi = (0..5).fold(r.zero(), |s, k| r.add(&s, &r.pow(&y, k)));
        assert!(r.valuation(&phi).bound() >= v.floor().min(8 * 4));
        let pik = ctx.monomial(ctx.base.one(), 1);
        assert_eq!(ev.eval(&ctx, &pik, exact(&ctx), 1).unwrap().v_varpi, Valuation::Exact(1));
        let pc = ctx.constant(5);
        assert_eq!(ev.eval(&ctx, &pc, exact(&ctx), 1).unwrap().v_varpi, Valuation::Exact(8));
    }

    #[test]
    fn easy_and_notsoeasy_valuations() {
        let ctx = sctx(13, 2, 2, 3);
        let ev = Evaluator::level_one(&ctx).unwrap();
        let mut r = rng(3);
        for l in [-1i64, 1, 3, 5, 10, 17] {
            let w = solve_leading(&ctx, 3, l, &ctx.base.gen(), Some(&mut r)).unwrap();
            let v = eval_phi_inv(&ev, &ctx, &w, 1).unwrap();
            assert_eq!(v.v_varpi, Valuation::Exact(l), "l = {l}");
            let rep = nabla_valuation_check(&ev, &ctx, &w, 1, None).unwrap();
            assert_eq!(rep.status, CheckStatus::Pass);
        }
        let w = solve_notsoeasy(&ctx, 1, &ctx.base.one(), 3, Some(&mut r)).unwrap();
        let v = eval_phi_inv(&ev, &ctx, &w, 1).unwrap();
        assert_eq!(v.v_varpi, Valuation::Exact(35));
        let rep = nabla_valuation_check(&ev, &ctx, &w, 1, None).unwrap();
        assert_eq!(rep.law.as_deref(), Some("notsoeasy"));
        assert_eq!(rep.status, CheckStatus::Pass);
    }

    #[test]
    fn requested_precision_is_enforced() {
        let ctx = sctx(5, 2, 2, 4);
        let ev = Evaluator::level_one(&ctx).unwrap();
        let w = solve_leading(&ctx, 1, 1, &ctx.base.one(), Some(&mut rng(1))).unwrap();
        let v = eval_phi_inv(&ev, &ctx, &w, 1).unwrap();
        assert!(v.floor() > 1 && v.floor() <= 8);
        assert!(eval_phi_inv_to(&ev, &ctx, &w, 1, v.floor()).is_ok());
        assert!(matches!(
            eval_phi_inv_to(&ev, &ctx, &w, 1, v.floor() + 1),
            Err(Error::Precision(_))
        ));
    }

    #[test]
    fn nabla_laws_cfg_c() {
        let ctx = sctx(13, 2, 2, 3);
        let ev = Evaluator::level_one(&ctx).unwrap();
        let mut r = rng(5);
        let w = solve_leading(&ctx, 3, 5, &ctx.base.one(), Some(&mut r)).unwrap();
        let rep = nabla_valuation_check(&ev, &ctx, &w, 2, None).unwrap();
        assert_eq!(rep.law.as_deref(), Some("notdivbyp"));
        assert_eq!(rep.predicted, Some(3));
        assert_eq!(rep.status, CheckStatus::Pass);

        let seed = solve_divbyp_seed(&ctx, 1, &ctx.base.one(), 3, Some(&mut r)).unwrap();
        let wctx = ctx.with_window(seed.series.lo.min(ctx.lo), seed.series.hi.max(ctx.hi));
        let proj = wctx.idem_orbit(&seed.series, &ctx.orbit_of(13)).unwrap();
        let a = PsiOneWitness::certify(&ctx, proj, 3).unwrap();
        assert_eq!(a.l().exact(), Some(13));
        let rep = nabla_valuation_check(&ev, &ctx, &a, 2, Some(Preparation::DivByP)).unwrap();
        assert_eq!(rep.law.as_deref(), Some("divbyp"));
        assert_eq!(rep.predicted, Some(35));
        assert_eq!(rep.status, CheckStatus::Pass, "{rep:?}");
        let rep = nabla_valuation_check(&ev, &ctx, &a, 2, None).unwrap();
        assert!(matches!(rep.status, CheckStatus::Skipped(_)));

        let one = PsiOneWitness::certify(&ctx, ctx.constant(1), 3).unwrap();
        let rep = nabla_valuation_check(&ev, &ctx, &one, 2, None).unwrap();
        assert_eq!(rep.status, CheckStatus::Degenerate);
    }

    #[test]
    fn nabla_law_hypothesis_skips() {
        let ctx = sctx(7, 4, 2, 2);
        let ev = Evaluator::level_one(&ctx).unwrap();
        let w = solve_leading(&ctx, 2, 1, &ctx.base.one(), Some(&mut rng(2))).unwrap();
        let rep = nabla_valuation_check(&ev, &ctx, &w, 2, None).unwrap();
        assert!(matches!(rep.status, CheckStatus::Skipped(ref s) if s.contains("2e < p")));
    }

    #[test]
    fn delta_and_sigma_equivariance() {
        let ctx = sctx(5, 2, 2, 4);
        let ev = Evaluator::level_one(&ctx).unwrap();
        let k = ev.kummer.as_ref().unwrap();
        let w = solve_leading(&ctx, 3, 1, &ctx.base.gen(), Some(&mut rng(4))).unwrap();
        let wctx = ctx.with_window(w.series.lo, w.series.hi);
        let base = eval_phi_inv(&ev, &ctx, &w, 1).unwrap();
        for j in [1i64, 3] {
            let moved = wctx.delta_act(&w.series, j).unwrap();
            let v = ev.eval(&ctx, &moved, TailBound::psi_one(&w), 1).unwrap();
            let img = FracElem {
                pexp: base.value.pexp,
                body: k.delta(&base.value.body, j),
            };
            assert!(ev.agree(&v.value, &img, v.floor().min(base.floor())), "delta_{j}");
        }
        let sw = ctx.frob(&w.series, 1);
        let v = ev.eval(&ctx, &sw, TailBound::psi_one(&w), 1).unwrap();
        let img = FracElem {
            pexp: base.value.pexp,
            body: ev.ring.frob(&base.value.body, 1),
        };
        assert!(ev.agree(&v.value, &img, v.floor().min(base.floor())));
    }

    #[test]
    fn trace_relation_examples() {
        let ctx = sctx(5, 2, 2, 4).with_window(-60, 160);
        let tower = TraceTower::new(&ctx, 8).unwrap();
        let one = ctx.constant(1);
        let rep = trace_relation_check(&tower, &ctx, &one, exact(&ctx), 1).unwrap();
        assert!(rep.holds, "{rep:?}");
        let w = nabla_log_pi_pow(&ctx, 3).unwrap();
        let w = PsiOneWitness::certify(&ctx, w.series, 4).unwrap();
        let rep = trace_relation_for_witness(&tower, &ctx, &w, 1).unwrap();
        assert!(rep.holds && rep.p_digits >= 2, "{rep:?}");
        let seed = nabla_log_witness(&ctx, 1, &ctx.base.gen()).unwrap();
        let w = lift_mod_pnu(&ctx, &seed, 4, Some(&mut rng(6))).unwrap();
        let rep = trace_relation_for_witness(&tower, &ctx, &w, 1).unwrap();
        assert!(rep.holds && rep.p_digits >= 2, "{rep:?}");
        let rep = trace_relation_for_witness(&tower, &ctx, &w, 2).unwrap();
        assert!(rep.holds && rep.psi_eigen && rep.p_digits >= 1, "{rep:?}");
        let bad = ctx.monomial(ctx.base.one(), 1);
        let rep = trace_relation_check(&tower, &ctx, &bad, exact(&ctx), 1).unwrap();
        assert!(!rep.psi_eigen && !rep.holds);
    }

    #[test]
    fn volume_cfg_b_r1() {
        let ctx = sctx(5, 2, 2, 4);
        let mut r = rng(1);
        let rep = volume_check(&ctx, &[1, 5], 1, None, &mut r).unwrap();
        let s: Vec<i64> = rep.rows.iter().map(|x| x.scaling).collect();
        assert_eq!(s, vec![1, -1]);
        assert!(rep.predicted_valuations_hold, "{rep:?}");
        assert!(rep.unit && rep.verdict == Verdict::Pass, "{rep:?}");
        let rep = volume_check(&ctx, &[3, 7], 1, None, &mut r).unwrap();
        assert!(rep.rows.iter().all(|x| x.scaling == 0));
        assert!(rep.predicted_valuations_hold && rep.unit, "{rep:?}");
    }

    #[test]
    fn volume_perturbation_invariance() {
        let ctx = sctx(5, 2, 2, 4);
        let mut r = rng(8);
        let xi = ctx.base.normal_basis_candidates(1)[0];
        let basis = basis_tame(&ctx, &[1, 5], &xi, 4, false, &mut r).unwrap();
        let items: Vec<_> = basis.into_iter().map(|b| (b.n, Some(b.prep), b.witness)).collect();
        let ev = Evaluator::level_one(&ctx).unwrap();
        let rep = volume_from_basis(&ev, &ctx, &items, 1, &xi).unwrap();
        let moved = perturb_basis(&ctx, &items, &mut r).unwrap();
        let rep2 = volume_from_basis(&ev, &ctx, &moved, 1, &xi);
        let rep2 = rep2.unwrap();
        assert_eq!(rep.unit, rep2.unit);
        assert_eq!(rep.verdict, rep2.verdict);
    }

    #[test]
    fn volume_rejects_bad_inputs() {
        let ctx = sctx(5, 2, 2, 4);
        let mut r = rng(2);
        assert!(matches!(volume_check(&ctx, &[2, 2], 1, None, &mut r), Err(Error::Unsupported(_))));
        let bad = ctx.base.one();
        assert!(matches!(
            volume_check(&ctx, &[1, 5], 1, Some(bad), &mut r),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn volume_cfg_c_r2() {
        let ctx = sctx(13, 2, 2, 3);
        let mut r = rng(13);
        for orbit in [[1i64, 13], [3, 15], [5, 17]] {
            let rep = volume_check(&ctx, &orbit, 2, None, &mut r).unwrap();
            assert!(rep.predicted_valuations_hold, "{rep:?}");
            assert!(rep.unit, "{orbit:?}: {rep:?}");
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]
        #[test]
        fn eval_is_multiplicative(l in 1i64..12, coeffs in proptest::collection::vec(0u64..25, 1..6), seed in 0u64..1000) {
            let ctx = sctx(5, 2, 2, 4);
            prop_assume!((l + 2) % 5 != 0);
            let ev = Evaluator::level_one(&ctx).unwrap();
            let w = solve_leading(&ctx, 3, l, &ctx.base.one(), Some(&mut rng(seed))).unwrap();
            let mut b = LaurentSeries::zeros(0, coeffs.len() as i64 - 1, Tail::Zero, Tail::Zero);
            for (k, &c) in coeffs.iter().enumerate() {
                b.set(k as i64, ctx.base.residue_from_index(c));
            }
            let ab = ctx.mul(&w.series, &b).unwrap();
            let va = eval_phi_inv(&ev, &ctx, &w, 1).unwrap();
            let vb = ev.eval(&ctx, &b, exact(&ctx), 1).unwrap();
            let vab = ev.eval(&ctx, &ab, TailBound::psi_one(&w), 1).unwrap();
            let prod = ev.ring.frac_mul(&va.value, &vb.value);
            let floor = vab.floor()
                .min(va.floor() + vb.v_varpi.bound().min(vb.floor()))
                .min(vb.floor() + va.v_varpi.bound().min(va.floor()));
            prop_assert!(ev.agree(&vab.value, &prod, floor));
        }
    }
}
