//! Dense linear algebra over Z/p^n, small polynomial arithmetic over F_p and
//! the cyclic group ring (Z/p^n)[x]/(x^f - 1).

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::padic_core::Zmod;

/// Polynomials over F_p as coefficient vectors, lowest degree first.
pub mod poly {
    pub fn trim(a: &mut Vec<u64>) {
        while a.last() == Some(&0) {
            a.pop();
        }
    }

    fn inv_mod(a: u64, p: u64) -> u64 {
        let mut r = 1u64;
        let mut b = a % p;
        let mut e = p - 2;
        while e > 0 {
            if e & 1 == 1 {
                r = r * b % p;
            }
            b = b * b % p;
            e >>= 1;
        }
        r
    }

    pub fn rem(a: &[u64], b: &[u64], p: u64) -> Vec<u64> {
        let mut a = a.to_vec();
        let mut b = b.to_vec();
        trim(&mut a);
        trim(&mut b);
        assert!(!b.is_empty(), "division by zero polynomial");
        let lead_inv = inv_mod(*b.last().unwrap(), p);
        while a.len() >= b.len() {
            let c = a.last().unwrap() * lead_inv % p;
            let shift = a.len() - b.len();
            for (i, &bi) in b.iter().enumerate() {
                a[shift + i] = (a[shift + i] + p - c * bi % p) % p;
            }
            trim(&mut a);
        }
        a
    }

    pub fn mul(a: &[u64], b: &[u64], p: u64) -> Vec<u64> {
        if a.is_empty() || b.is_empty() {
            return vec![];
        }
        let mut out = vec![0u64; a.len() + b.len() - 1];
        for (i, &x) in a.iter().enumerate() {
            for (j, &y) in b.iter().enumerate() {
                out[i + j] = (out[i + j] + x * y) % p;
            }
        }
        trim(&mut out);
        out
    }

    pub fn sub(a: &[u64], b: &[u64], p: u64) -> Vec<u64> {
        let n = a.len().max(b.len());
        let mut out = vec![0u64; n];
        for (i, o) in out.iter_mut().enumerate() {
            let x = a.get(i).copied().unwrap_or(0);
            let y = b.get(i).copied().unwrap_or(0);
            *o = (x + p - y % p) % p;
        }
        trim(&mut out);
        out
    }

    pub fn powmod(base: &[u64], mut e: u64, m: &[u64], p: u64) -> Vec<u64> {
        let mut acc = vec![1u64];
        let mut b = rem(base, m, p);
        while e > 0 {
            if e & 1 == 1 {
                acc = rem(&mul(&acc, &b, p), m, p);
            }
            b = rem(&mul(&b, &b, p), m, p);
            e >>= 1;
        }
        acc
    }

    pub fn gcd(a: &[u64], b: &[u64], p: u64) -> Vec<u64> {
        let mut a = a.to_vec();
        let mut b = b.to_vec();
        trim(&mut a);
        trim(&mut b);
        while !b.is_empty() {
            let r = rem(&a, &b, p);
            a = b;
            b = r;
        }
        if let Some(&l) = a.last() {
            let li = inv_mod(l, p);
            for c in a.iter_mut() {
                *c = *c * li % p;
            }
        }
        a
    }

    /// A monic g of degree f is irreducible iff it has no factor of degree
    /// at most f/2, i.e. gcd(g, x^(p^i) - x) = 1 for i <= f/2.
    pub fn is_irreducible(g: &[u64], p: u64) -> bool {
        let f = g.len() - 1;
        let x = vec![0, 1];
        let mut xp = x.clone();
        for _ in 1..=f / 2 {
            xp = powmod(&xp, p, g, p);
            if gcd(g, &sub(&xp, &x, p), p).len() > 1 {
                return false;
            }
        }
        true
    }
}

/// Outcome of a dense solve: one particular solution plus structure data.
#[derive(Clone, Debug)]
pub struct Solved {
    pub x: Vec<u64>,
    pub rank: usize,
    /// Pivot valuations in elimination order.
    pub pivot_vals: Vec<u32>,
    pub free_cols: Vec<usize>,
}

/// Solve A x = b over Z/p^n by elimination with full pivoting on minimal
/// valuation. Free variables are filled from `rng` when given, else zero.
pub fn solve<R: Rng>(
    zm: &Zmod,
    rows: usize,
    cols: usize,
    a: &[u64],
    b: &[u64],
    rng: Option<&mut R>,
) -> Result<Solved> {
    assert_eq!(a.len(), rows * cols);
    assert_eq!(b.len(), rows);
    let n = zm.n();
    let mut m: Vec<Vec<u64>> = (0..rows).map(|i| a[i * cols..(i + 1) * cols].to_vec()).collect();
    let mut rhs = b.to_vec();
    let mut perm: Vec<usize> = (0..cols).collect();
    let mut pivot_vals = Vec::new();
    let mut rank = 0;
    while rank < rows.min(cols) {
        let best = (rank..rows)
            .into_par_iter()
            .filter_map(|i| {
                let row = &m[i];
                let mut best: Option<(u32, usize)> = None;
                for (j, &x) in row.iter().enumerate().skip(rank) {
                    if x != 0 {
                        let v = zm.val(x);
                        if best.map_or(true, |(bv, _)| v < bv) {
                            best = Some((v, j));
                            if v == 0 {
                                break;
                            }
                        }
                    }
                }
                best.map(|(v, j)| (v, i, j))
            })
            .min();
        let Some((v, pi, pj)) = best else { break };
        m.swap(rank, pi);
        rhs.swap(rank, pi);
        if pj != rank {
            for row in m.iter_mut() {
                row.swap(rank, pj);
            }
            perm.swap(rank, pj);
        }
        let piv = m[rank][rank];
        let pk = zm.p().pow(v);
        let uinv = zm.inv(piv / pk).expect("unit part");
        let (top, bottom) = m.split_at_mut(rank + 1);
        let prow = &top[rank];
        let prhs = rhs[rank];
        let updates: Vec<u64> = bottom
            .par_iter_mut()
            .map(|row| {
                let x = row[rank];
                if x == 0 {
                    return 0;
                }
                let t = zm.mul(x / pk, uinv);
                for j in rank..cols {
                    if prow[j] != 0 {
                        row[j] = zm.sub(row[j], zm.mul(t, prow[j]));
                    }
                }
                debug_assert_eq!(row[rank], 0);
                zm.mul(t, prhs)
            })
            .collect();
        for (k, u) in updates.into_iter().enumerate() {
            let i = rank + 1 + k;
            rhs[i] = zm.sub(rhs[i], u);
        }
        pivot_vals.push(v);
        rank += 1;
    }
    for (i, &r) in rhs.iter().enumerate().skip(rank) {
        if r != 0 {
            return Err(Error::Inconsistent(format!(
                "row {i} reduces to 0 = {r} (valuation {})",
                zm.val(r)
            )));
        }
    }
    let mut y = vec![0u64; cols];
    if let Some(rng) = rng {
        for yj in y.iter_mut().skip(rank) {
            *yj = rng.gen_range(0..zm.modulus());
        }
    }
    for k in (0..rank).rev() {
        let mut s = rhs[k];
        for j in k + 1..cols {
            if m[k][j] != 0 && y[j] != 0 {
                s = zm.sub(s, zm.mul(m[k][j], y[j]));
            }
        }
        let v = pivot_vals[k];
        if zm.val(s) < v {
            return Err(Error::Inconsistent(format!(
                "pivot {k} has valuation {v} but right side has valuation {}",
                zm.val(s)
            )));
        }
        let pk = zm.p().pow(v);
        let uinv = zm.inv(m[k][k] / pk).unwrap();
        // s / p^v is only defined mod p^(n-v); any lift works.
        let q = if v >= n { 0 } else { s / pk };
        y[k] = zm.mul(q, uinv);
    }
    let mut x = vec![0u64; cols];
    for (k, &c) in perm.iter().enumerate() {
        x[c] = y[k];
    }
    let free_cols = perm[rank..].to_vec();
    Ok(Solved {
        x,
        rank,
        pivot_vals,
        free_cols,
    })
}

/// Inverse of a square matrix over Z/p^n whose determinant is a unit.
pub fn inverse(zm: &Zmod, n: usize, a: &[u64]) -> Result<Vec<u64>> {
    let w = 2 * n;
    let mut m = vec![0u64; n * w];
    for i in 0..n {
        m[i * w..i * w + n].copy_from_slice(&a[i * n..(i + 1) * n]);
        m[i * w + n + i] = 1 % zm.modulus();
    }
    for c in 0..n {
        let r = (c..n)
            .find(|&r| m[r * w + c] % zm.p() != 0)
            .ok_or(Error::NotInvertible)?;
        if r != c {
            for j in 0..w {
                m.swap(r * w + j, c * w + j);
            }
        }
        let inv = zm.inv(m[c * w + c]).unwrap();
        for j in 0..w {
            m[c * w + j] = zm.mul(m[c * w + j], inv);
        }
        let pivot_row: Vec<u64> = m[c * w..(c + 1) * w].to_vec();
        m.par_chunks_mut(w).enumerate().for_each(|(r, row)| {
            if r != c && row[c] != 0 {
                let t = row[c];
                for j in 0..w {
                    if pivot_row[j] != 0 {
                        row[j] = zm.sub(row[j], zm.mul(t, pivot_row[j]));
                    }
                }
            }
        });
    }
    Ok((0..n)
        .flat_map(|i| m[i * w + n..(i + 1) * w].to_vec())
        .collect())
}

/// Determinant mod p of a square matrix over F_p.
pub fn det_mod_prime(p: u64, n: usize, a: &[u64]) -> u64 {
    let mut m: Vec<u64> = a.iter().map(|x| x % p).collect();
    let mut det = 1u64;
    for c in 0..n {
        let Some(r) = (c..n).find(|&r| m[r * n + c] != 0) else {
            return 0;
        };
        if r != c {
            for j in 0..n {
                m.swap(r * n + j, c * n + j);
            }
            det = (p - det) % p;
        }
        let piv = m[c * n + c];
        det = det * piv % p;
        let inv = Zmod::new(p, 1).unwrap().inv(piv).unwrap();
        for r in c + 1..n {
            let t = m[r * n + c] * inv % p;
            if t != 0 {
                for j in c..n {
                    m[r * n + j] = (m[r * n + j] + p * p - t * m[c * n + j] % p) % p;
                }
            }
        }
    }
    det
}

/// Elements of (Z/p^n)[x]/(x^f - 1), i.e. the group ring of a cyclic group of order f.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CyclicGroupRing {
    pub zm: Zmod,
    pub f: usize,
}

impl CyclicGroupRing {
    pub fn new(zm: Zmod, f: usize) -> Self {
        CyclicGroupRing { zm, f }
    }

    pub fn zero(&self) -> Vec<u64> {
        vec![0; self.f]
    }

    pub fn one(&self) -> Vec<u64> {
        let mut v = self.zero();
        v[0] = 1 % self.zm.modulus();
        v
    }

    pub fn add(&self, a: &[u64], b: &[u64]) -> Vec<u64> {
        a.iter().zip(b).map(|(&x, &y)| self.zm.add(x, y)).collect()
    }

    pub fn sub(&self, a: &[u64], b: &[u64]) -> Vec<u64> {
        a.iter().zip(b).map(|(&x, &y)| self.zm.sub(x, y)).collect()
    }

    pub fn mul(&self, a: &[u64], b: &[u64]) -> Vec<u64> {
        let mut out = self.zero();
        for i in 0..self.f {
            if a[i] == 0 {
                continue;
            }
            for j in 0..self.f {
                let k = (i + j) % self.f;
                out[k] = self.zm.add(out[k], self.zm.mul(a[i], b[j]));
            }
        }
        out
    }

    /// Determinant by cofactor expansion; matrices here are at most a few rows.
    pub fn det(&self, n: usize, m: &[Vec<u64>]) -> Vec<u64> {
        if n == 1 {
            return m[0].clone();
        }
        let mut acc = self.zero();
        for c in 0..n {
            let minor: Vec<Vec<u64>> = (1..n)
                .flat_map(|r| (0..n).filter(move |&j| j != c).map(move |j| (r, j)))
                .map(|(r, j)| m[r * n + j].clone())
                .collect();
            let term = self.mul(&m[c], &self.det(n - 1, &minor));
            acc = if c % 2 == 0 {
                self.add(&acc, &term)
            } else {
                self.sub(&acc, &term)
            };
        }
        acc
    }

    /// A group-ring element is a unit iff it is coprime to x^f - 1 over F_p.
    pub fn is_unit(&self, a: &[u64]) -> bool {
        let p = self.zm.p();
        let mut am: Vec<u64> = a.iter().map(|x| x % p).collect();
        poly::trim(&mut am);
        if am.is_empty() {
            return false;
        }
        let mut modulus = vec![0u64; self.f + 1];
        modulus[0] = p - 1;
        modulus[self.f] = 1;
        poly::gcd(&modulus, &am, p).len() == 1
    }
}

#[cfg(test)]
mod tests {
    use super::{poly, solve, CyclicGroupRing, Error, Result, Solved, Zmod};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn irreducibility() {
        assert!(poly::is_irreducible(&[2, 0, 1], 5));
        assert!(!poly::is_irreducible(&[1, 0, 1], 5));
        assert!(!poly::is_irreducible(&[4, 0, 1], 5));
        assert!(poly::is_irreducible(&[1, 2, 0, 1], 3));
        assert!(!poly::is_irreducible(&[2, 1, 0, 1], 3));
        assert!(!poly::is_irreducible(&[1, 0, 0, 0, 1], 3));
    }

    #[test]
    fn group_ring_units() {
        let g = CyclicGroupRing::new(Zmod::new(5, 3).unwrap(), 2);
        assert!(g.is_unit(&[1, 0]));
        assert!(!g.is_unit(&[1, 1]));
        assert!(!g.is_unit(&[1, 4]));
        assert!(g.is_unit(&[2, 1]));
        let m = vec![vec![1, 0], vec![0, 0], vec![0, 0], vec![1, 0]];
        assert_eq!(g.det(2, &m), vec![1, 0]);
    }

    proptest! {
        #[test]
        fn solve_round_trip(seed in 0u64..1000, rows in 1usize..9, cols in 1usize..9) {
            let zm = Zmod::new(5, 4).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a: Vec<u64> = (0..rows * cols)
                .map(|_| {
                    let x = rng.gen_range(0..zm.modulus());
                    x * zm.p_pow(rng.gen_range(0..3)) % zm.modulus()
                })
                .collect();
            let x0: Vec<u64> = (0..cols).map(|_| rng.gen_range(0..zm.modulus())).collect();
            let b: Vec<u64> = (0..rows)
                .map(|i| (0..cols).fold(0, |s, j| zm.add(s, zm.mul(a[i * cols + j], x0[j]))))
                .collect();
            let sol = solve(&zm, rows, cols, &a, &b, Some(&mut rng)).unwrap();
            for i in 0..rows {
                let s = (0..cols).fold(0, |s, j| zm.add(s, zm.mul(a[i * cols + j], sol.x[j])));
                prop_assert_eq!(s, b[i]);
            }
        }
    }

    #[test]
    fn detects_inconsistency() {
        let zm = Zmod::new(5, 3).unwrap();
        let a = vec![5, 0, 0, 25];
        let b = vec![1, 0];
        let r: Result<Solved> = solve::<ChaCha8Rng>(&zm, 2, 2, &a, &b, None);
        assert!(matches!(r, Err(Error::Inconsistent(_))));
    }
}
