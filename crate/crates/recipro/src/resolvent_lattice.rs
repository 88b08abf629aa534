//! Tame Galois-module checks: resolvents of an integral normal basis of the
//! inverse different of K = F(p0^(1/e)), their eigenspace factorization and
//! the principal generator of the augmentation ideal of Z_p[Sigma][[gamma - 1]].

use std::sync::Arc;

use num_rational::Rational64;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::field_towers::{make_kummer_with, make_unram, FracElem, KummerContext, RamContext, UnramContext, UnramElem};
use crate::gauss_eps::{self, EpsilonData};
use crate::padic_core::{Valuation, Zmod};

/// K = F(w), w^e = p0 with p0 = zeta p, and G = Sigma x| Delta acting by
/// delta_k(w) = zeta_e^k w, sigma = Frobenius on O_F fixing w.
#[derive(Clone, Debug)]
pub struct TameField {
    pub kummer: KummerContext,
    pub e: u64,
    pub f: usize,
    /// A primitive f-th root of unity in O_F, for characters of Sigma.
    pub zeta_f: UnramElem,
}

impl TameField {
    pub fn new(p: u64, e: u64, f: usize, n: u32, p0_unit: i64) -> Result<Self> {
        if (e * f as u64) % p == 0 {
            return Err(Error::Config(format!("[K : Q_p] = {e} * {f} must be prime to {p}")));
        }
        let base = make_unram(p, f, n)?;
        if (base.q() - 1) % f as u64 != 0 {
            return Err(Error::Unsupported(format!("f = {f} does not divide q - 1")));
        }
        let zeta_f = base.root_of_unity(f as u64)?;
        let kummer = make_kummer_with(&base, e, p0_unit)?;
        Ok(TameField { kummer, e, f, zeta_f })
    }

    pub fn ring(&self) -> &Arc<RamContext> {
        &self.kummer.ring
    }

    pub fn base(&self) -> &Arc<UnramContext> {
        self.kummer.base()
    }

    pub fn p(&self) -> u64 {
        self.base().p()
    }

    /// sigma^s.
    pub fn sigma(&self, a: &FracElem, s: i64) -> FracElem {
        FracElem {
            pexp: a.pexp,
            body: self.ring().frob(&a.body, s),
        }
    }

    /// delta_k.
    pub fn delta(&self, a: &FracElem, k: i64) -> FracElem {
        FracElem {
            pexp: a.pexp,
            body: self.kummer.delta(&a.body, k),
        }
    }

    /// g = delta_k sigma^s.
    pub fn act(&self, a: &FracElem, s: i64, k: i64) -> FracElem {
        self.delta(&self.sigma(a, s), k)
    }

    pub fn w_pow(&self, j: i64) -> FracElem {
        self.ring().x_pow(j)
    }

    pub fn frac_eq(&self, a: &FracElem, b: &FracElem) -> bool {
        let r = self.ring();
        !r.frac_valuation(&r.frac_sub(a, b)).is_exact()
    }

    /// v_p of an element, exact or None.
    pub fn vp(&self, a: &FracElem) -> Option<Rational64> {
        self.ring()
            .frac_valuation(a)
            .exact()
            .map(|v| Rational64::new(v, self.e as i64))
    }

    fn scalar(&self, a: &FracElem, c: &UnramElem) -> FracElem {
        FracElem {
            pexp: a.pexp,
            body: self.ring().scale(&a.body, c),
        }
    }

    fn sum(&self, terms: impl Iterator<Item = FracElem>) -> FracElem {
        let r = self.ring();
        terms.fold(r.frac(r.zero()), |acc, t| r.frac_add(&acc, &t))
    }

    /// The action is faithful on t + w, and sigma delta_k sigma^(-1) = delta_(kp).
    pub fn check_group_action(&self) -> bool {
        let r = self.ring();
        let (e, f) = (self.e as i64, self.f as i64);
        let t = r.frac(r.from_base(&self.base().gen()));
        let probe = r.frac_add(&t, &self.w_pow(1));
        let probe2 = r.frac_add(&probe, &r.frac_mul(&t, &self.w_pow(2)));
        for s in 0..f {
            for k in 0..e {
                let moved = self.act(&probe, s, k);
                if (s, k) != (0, 0) && self.frac_eq(&moved, &probe) {
                    return false;
                }
                let lhs = self.sigma(&self.delta(&self.sigma(&probe2, -s), k), s);
                let rhs = self.delta(&probe2, k * self.p().pow(s as u32) as i64);
                if !self.frac_eq(&lhs, &rhs) {
                    return false;
                }
            }
        }
        true
    }

    /// (1/e) sum_k eta(delta_k)^(-1) delta_k(a) for eta = eta_0^m.
    pub fn eigen_projection(&self, a: &FracElem, m: i64) -> Result<FracElem> {
        let b = self.base();
        let e = self.e as i64;
        let inv_e = b.zm().inv(self.e).ok_or_else(|| Error::Internal("e not invertible".into()))?;
        let s = self.sum((0..e).map(|k| self.scalar(&self.delta(a, k), &self.kummer.eta0(-m * k))));
        Ok(self.scalar(&s, &b.from_u64(inv_e)))
    }
}

/// x = sum_{j < e} w^(-j) and b = xi x.
#[derive(Clone, Debug)]
pub struct InverseDifferentBasis {
    pub xi: UnramElem,
    pub x: FracElem,
    pub b: FracElem,
}

/// b = xi x for the first normal-basis candidate xi; the basis property is
/// checked through the unit eigenprojections of x.
pub fn inverse_different_basis(tf: &TameField) -> Result<InverseDifferentBasis> {
    for xi in tf.base().normal_basis_candidates(tf.f + 2) {
        if let Ok(b) = inverse_different_basis_with(tf, &xi) {
            return Ok(b);
        }
    }
    Err(Error::Infeasible("no normal basis element among the candidates".into()))
}

pub fn inverse_different_basis_with(tf: &TameField, xi: &UnramElem) -> Result<InverseDifferentBasis> {
    if !tf.base().is_normal_basis(xi) {
        return Err(Error::Config("xi is not a normal basis element of O_F".into()));
    }
    let r = tf.ring();
    let e = tf.e as i64;
    let x = tf.sum((0..e).map(|j| tf.w_pow(-j)));
    for j in 0..e {
        let proj = tf.eigen_projection(&x, -j)?;
        let unit = r.frac_mul(&proj, &tf.w_pow(j));
        if r.frac_valuation(&unit) != Valuation::Exact(0) {
            return Err(Error::Internal(format!("eigenprojection {j} of x is not a unit times w^-{j}")));
        }
    }
    let b = FracElem {
        pexp: x.pexp,
        body: r.scale(&x.body, xi),
    };
    Ok(InverseDifferentBasis { xi: *xi, x, b })
}

/// x_eta = prod_{i < f_eta} sum_delta sigma^(-i) delta sigma^i (x) eta(delta)^(-1).
pub fn x_eta(tf: &TameField, x: &FracElem, m: u64) -> FracElem {
    let r = tf.ring();
    let e = tf.e as i64;
    let f_eta = gauss_eps::sigma_orbit(tf.p(), tf.e, m).len() as i64;
    let mut acc = r.frac(r.one());
    for i in 0..f_eta {
        let s = tf.sum((0..e).map(|k| {
            let y = tf.sigma(&tf.delta(&tf.sigma(x, i), k), -i);
            tf.scalar(&y, &tf.kummer.eta0(-(m as i64) * k))
        }));
        acc = r.frac_mul(&acc, &s);
    }
    acc
}

/// The exponents a mod f of the characters kappa_a(sigma) = zeta_f^a of Sigma
/// restricting to eta'(sigma^(f_eta)) = zeta_f^(f_eta k) on Sigma_eta.
fn kappa_exponents(f: usize, f_eta: usize, k: u64) -> Vec<u64> {
    let step = (f / f_eta) as u64;
    (0..f_eta as u64).map(|t| k + t * step).collect()
}

/// xi_eta' = prod_kappa sum_sigma sigma(xi) kappa(sigma)^(-1).
pub fn xi_eta_prime(tf: &TameField, xi: &UnramElem, f_eta: usize, k: u64) -> UnramElem {
    let b = tf.base();
    let f = tf.f as i64;
    kappa_exponents(tf.f, f_eta, k).into_iter().fold(b.one(), |acc, a| {
        let s = (0..f).fold(b.zero(), |s, j| {
            let kap = b.pow(&tf.zeta_f, ((tf.f as u64 - a % tf.f as u64) * j as u64) % tf.f as u64);
            b.add(&s, &b.mul(&b.frob(xi, j), &kap))
        });
        b.mul(&acc, &s)
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct ResolventRow {
    pub orbit: Vec<u64>,
    pub m_eta: u64,
    pub f_eta: usize,
    pub eta_prime: u64,
    #[serde(serialize_with = "ser_opt_rat")]
    pub x_valuation: Option<Rational64>,
    #[serde(serialize_with = "ser_rat")]
    pub x_predicted: Rational64,
    #[serde(serialize_with = "ser_opt_rat")]
    pub xi_valuation: Option<Rational64>,
    #[serde(serialize_with = "ser_rat")]
    pub eps_valuation: Rational64,
    #[serde(serialize_with = "ser_opt_rat")]
    pub gauss_valuation: Option<Rational64>,
    #[serde(serialize_with = "ser_opt_rat")]
    pub combined: Option<Rational64>,
    #[serde(serialize_with = "ser_opt_rat")]
    pub twisted_combined: Option<Rational64>,
    /// Full resolvent equals xi_eta' x_eta (one-dimensional chi, or the
    /// determinant of the induced matrix when Sigma_eta is trivial).
    pub resolvent_factorization: Option<bool>,
    pub holds: bool,
}

fn ser_rat<S: serde::Serializer>(x: &Rational64, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_str(&x.to_string())
}

fn ser_opt_rat<S: serde::Serializer>(x: &Option<Rational64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    match x {
        Some(v) => s.serialize_str(&v.to_string()),
        None => s.serialize_none(),
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ResolventReport {
    pub p: u64,
    pub e: u64,
    pub f: usize,
    pub r: i64,
    pub xi_index: u64,
    pub rows: Vec<ResolventRow>,
    pub all_hold: bool,
}

/// v_p(x_eta) = -sum_i <-m p^i / e>.
pub fn x_eta_predicted(p: u64, e: u64, m: u64) -> Rational64 {
    let f_eta = gauss_eps::sigma_orbit(p, e, m).len();
    -gauss_eps::m_eta_fractional(p, e, -(m as i64), f_eta)
}

/// sum_g g(b) chi(g)^(-1) for chi(delta_k sigma^s) = eta_0^m(delta_k) zeta_f^(a s).
fn one_dim_resolvent(tf: &TameField, b: &FracElem, m: u64, a: u64) -> FracElem {
    let base = tf.base();
    let f = tf.f as u64;
    let terms = (0..f as i64).flat_map(|s| (0..tf.e as i64).map(move |k| (s, k)));
    tf.sum(terms.map(|(s, k)| {
        let chi_inv = base.mul(
            &tf.kummer.eta0(-(m as i64) * k),
            &base.pow(&tf.zeta_f, ((f - a % f) * s as u64) % f),
        );
        tf.scalar(&tf.act(b, s, k), &chi_inv)
    }))
}

/// det (sum_delta tau^(-1) delta sigma (b) eta(delta)^(-1))_(sigma, tau) over Sigma.
fn induced_determinant(tf: &TameField, b: &FracElem, m: u64) -> FracElem {
    let f = tf.f;
    let e = tf.e as i64;
    let mut mat = vec![vec![]; f];
    for (s, row) in mat.iter_mut().enumerate() {
        for t in 0..f {
            let entry = tf.sum((0..e).map(|k| {
                let y = tf.sigma(&tf.delta(&tf.sigma(b, s as i64), k), -(t as i64));
                tf.scalar(&y, &tf.kummer.eta0(-(m as i64) * k))
            }));
            row.push(entry);
        }
    }
    leibniz_det(tf, &mat)
}

fn leibniz_det(tf: &TameField, mat: &[Vec<FracElem>]) -> FracElem {
    let r = tf.ring();
    let n = mat.len();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut acc = r.frac(r.zero());
    loop {
        let inversions = (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .filter(|&(i, j)| perm[i] > perm[j])
            .count();
        let term = (0..n).fold(r.frac(r.one()), |t, i| r.frac_mul(&t, &mat[i][perm[i]]));
        acc = if inversions % 2 == 0 {
            r.frac_add(&acc, &term)
        } else {
            r.frac_sub(&acc, &term)
        };
        // next permutation in lexicographic order
        let Some(i) = (0..n.saturating_sub(1)).rev().find(|&i| perm[i] < perm[i + 1]) else {
            break;
        };
        let j = (i + 1..n).rev().find(|&j| perm[j] > perm[i]).unwrap();
        perm.swap(i, j);
        perm[i + 1..].reverse();
    }
    acc
}

/// Per-character valuation check of the unit statement for eps(r_chibar) per(b):
/// v_p(tau(r_etabar)) + v_p(x_eta) = 0 and xi_eta' a unit.
pub fn froehlich_check(tf: &TameField, basis: &InverseDifferentBasis, r: i64) -> Result<ResolventReport> {
    let (p, e, f) = (tf.p(), tf.e, tf.f);
    let table: Vec<EpsilonData> = gauss_eps::epsilon_table(p, e, f, r)?;
    let rows = table
        .par_iter()
        .map(|eps| froehlich_row(tf, basis, eps))
        .collect::<Result<Vec<_>>>()?;
    let all_hold = rows.iter().all(|r| r.holds);
    Ok(ResolventReport {
        p,
        e,
        f,
        r,
        xi_index: tf.base().residue_index(&basis.xi),
        rows,
        all_hold,
    })
}

fn froehlich_row(tf: &TameField, basis: &InverseDifferentBasis, eps: &EpsilonData) -> Result<ResolventRow> {
    let (p, e) = (tf.p(), tf.e);
    let rg = tf.ring();
    let m = eps.m_eta;
    let xe = x_eta(tf, &basis.x, m);
    let x_valuation = tf.vp(&xe);
    let x_predicted = x_eta_predicted(p, e, m);
    let xi = xi_eta_prime(tf, &basis.xi, eps.f_eta, eps.eta_prime);
    let xi_valuation = tf.base().valuation(&xi).exact().map(Rational64::from);
    let gauss_valuation = if m == 0 {
        Some(Rational64::from(0))
    } else {
        let i = gauss_eps::m_eta_exponent(p, e, -(m as i64), eps.f_eta)?;
        gauss_eps::gauss_sum(p, eps.f_eta, i, eps.f_eta as u32 + 1)?.valuation()
    };
    let combined = match (x_valuation, xi_valuation) {
        (Some(a), Some(b)) => Some(a + b + eps.eps_valuation),
        _ => None,
    };
    let twisted_combined = combined.map(|c| c - eps.eps_valuation + eps.twisted_valuation);
    let scaled = |a: &FracElem| FracElem {
        pexp: a.pexp,
        body: rg.scale(&a.body, &xi),
    };
    let resolvent_factorization = if eps.f_eta == 1 {
        let a = kappa_exponents(tf.f, 1, eps.eta_prime)[0];
        Some(tf.frac_eq(&one_dim_resolvent(tf, &basis.b, m, a), &scaled(&xe)))
    } else if eps.f_eta == tf.f {
        Some(tf.frac_eq(&induced_determinant(tf, &basis.b, m), &scaled(&xe)))
    } else {
        None
    };
    let holds = combined == Some(Rational64::from(0))
        && x_valuation == Some(x_predicted)
        && xi_valuation == Some(Rational64::from(0))
        && gauss_valuation == Some(eps.eps_valuation)
        && resolvent_factorization != Some(false);
    Ok(ResolventRow {
        orbit: eps.orbit.clone(),
        m_eta: m,
        f_eta: eps.f_eta,
        eta_prime: eps.eta_prime,
        x_valuation,
        x_predicted,
        xi_valuation,
        eps_valuation: eps.eps_valuation,
        gauss_valuation,
        combined,
        twisted_combined,
        resolvent_factorization,
        holds,
    })
}

/// Elements of Z/p^N[Sigma][u]/(u^M) with u = gamma - 1, stored as
/// c[k * f + s] for u^k sigma^s.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SigmaGammaElem(pub Vec<u64>);

#[derive(Clone, Debug)]
pub struct SigmaGammaRing {
    pub zm: Zmod,
    pub f: usize,
    pub m: usize,
}

impl SigmaGammaRing {
    pub fn new(p: u64, f: usize, n: u32, m: usize) -> Result<Self> {
        if f as u64 % p == 0 {
            return Err(Error::Config(format!("|Sigma| = {f} must be prime to {p}")));
        }
        Ok(SigmaGammaRing {
            zm: Zmod::new(p, n)?,
            f,
            m,
        })
    }

    pub fn zero(&self) -> SigmaGammaElem {
        SigmaGammaElem(vec![0; self.f * self.m])
    }

    pub fn one(&self) -> SigmaGammaElem {
        self.sigma_pow(0)
    }

    pub fn sigma_pow(&self, s: usize) -> SigmaGammaElem {
        let mut a = self.zero();
        a.0[s % self.f] = 1;
        a
    }

    /// gamma - 1.
    pub fn u(&self) -> SigmaGammaElem {
        let mut a = self.zero();
        if self.m > 1 {
            a.0[self.f] = 1;
        }
        a
    }

    /// e_1 = (1/f) sum_s sigma^s.
    pub fn e1(&self) -> Result<SigmaGammaElem> {
        let inv = self.zm.inv(self.f as u64).ok_or_else(|| Error::Internal("f not invertible".into()))?;
        let mut a = self.zero();
        for s in 0..self.f {
            a.0[s] = inv;
        }
        Ok(a)
    }

    pub fn add(&self, a: &SigmaGammaElem, b: &SigmaGammaElem) -> SigmaGammaElem {
        SigmaGammaElem(a.0.iter().zip(&b.0).map(|(&x, &y)| self.zm.add(x, y)).collect())
    }

    pub fn sub(&self, a: &SigmaGammaElem, b: &SigmaGammaElem) -> SigmaGammaElem {
        SigmaGammaElem(a.0.iter().zip(&b.0).map(|(&x, &y)| self.zm.sub(x, y)).collect())
    }

    pub fn mul(&self, a: &SigmaGammaElem, b: &SigmaGammaElem) -> SigmaGammaElem {
        let (f, m) = (self.f, self.m);
        let mut out = self.zero();
        for (i, &x) in a.0.iter().enumerate() {
            if x == 0 {
                continue;
            }
            for (j, &y) in b.0.iter().enumerate() {
                if y == 0 {
                    continue;
                }
                let k = i / f + j / f;
                if k >= m {
                    continue;
                }
                let idx = k * f + (i % f + j % f) % f;
                out.0[idx] = self.zm.add(out.0[idx], self.zm.mul(x, y));
            }
        }
        out
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct PrincipalReport {
    pub f: usize,
    pub e1_idempotent: bool,
    pub generator_in_ideal: bool,
    pub sigma_factorization: bool,
    pub gamma_factorization: bool,
}

impl PrincipalReport {
    pub fn holds(&self) -> bool {
        self.e1_idempotent && self.generator_in_ideal && self.sigma_factorization && self.gamma_factorization
    }
}

/// With g = (1 - e_1) + (gamma - 1) e_1: sigma - 1 = (sigma - 1)(1 - e_1) g and
/// gamma - 1 = ((gamma - 1)(1 - e_1) + e_1) g, and g lies in (sigma - 1, gamma - 1).
pub fn principal_generator_check(p: u64, f: usize, n: u32, m: usize) -> Result<PrincipalReport> {
    let ring = SigmaGammaRing::new(p, f, n, m)?;
    let one = ring.one();
    let e1 = ring.e1()?;
    let u = ring.u();
    let ne1 = ring.sub(&one, &e1);
    let g = ring.add(&ne1, &ring.mul(&u, &e1));
    let sm1 = ring.sub(&ring.sigma_pow(1), &one);
    let sigma_factorization = ring.mul(&ring.mul(&sm1, &ne1), &g) == sm1;
    let left = ring.add(&ring.mul(&u, &ne1), &e1);
    let gamma_factorization = ring.mul(&left, &g) == u;
    // 1 - e_1 = -(1/f) sum_s (sigma^s - 1) and sigma^s - 1 = (sigma - 1)(1 + ... + sigma^(s-1))
    let inv_f = ring.zm.inv(f as u64).ok_or_else(|| Error::Internal("f not invertible".into()))?;
    let mut coeff = ring.zero();
    for s in 1..f {
        for t in 0..s {
            let idx = t;
            coeff.0[idx] = ring.zm.add(coeff.0[idx], ring.zm.neg(inv_f));
        }
    }
    let via_ideal = ring.add(&ring.mul(&coeff, &sm1), &ring.mul(&e1, &u));
    Ok(PrincipalReport {
        f,
        e1_idempotent: ring.mul(&e1, &e1) == e1,
        generator_in_ideal: via_ideal == g,
        sigma_factorization,
        gamma_factorization,
    })
}
