use std::collections::BTreeSet;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use recipro::harness::{run_suite, suite_info, Config, SuiteReport, SuiteVerdict};
use serde_json::Value;

const SEED: u64 = 20;
const TRACE_P_DIGITS: i64 = 2;
const UNRAM_P_DIGITS: u32 = 3;
const MIN_WITNESSES: usize = 200;
const PSI_PHI_CASES: u64 = 500;
const COMMUTE_CASES: u64 = 100;
const GAUSS_SAMPLES_169: u64 = 50;

struct Criterion {
    id: u32,
    name: &'static str,
    limit: Duration,
    body: fn() -> Result<String, String>,
}

fn cfg(name: &str) -> Config {
    Config {
        seed: SEED,
        ..Config::named(name).unwrap()
    }
}

fn suite(c: &Config, id: &str) -> Result<SuiteReport, String> {
    let info = suite_info(id).map_err(|e| e.to_string())?;
    let rep = run_suite(c, info, false);
    if rep.verdict != SuiteVerdict::Pass {
        return Err(format!(
            "{id} on p={} e={} f={}: {:?} {}",
            c.p,
            c.e,
            c.f,
            rep.verdict,
            rep.reason.clone().unwrap_or_default()
        ));
    }
    Ok(rep)
}

fn u(v: &Value) -> u64 {
    v.as_u64().unwrap_or(0)
}

fn empty(v: &Value) -> bool {
    v.as_array().is_some_and(|a| a.is_empty())
}

fn coefficient_oracle() -> Result<String, String> {
    let mut compared = 0;
    for p in [5, 13] {
        let rep = suite(&Config::new(p, 1, 1, 2), "coeffs")?;
        let c = &rep.certificates;
        if u(&c["n_max"]) != 3 * (p - 1) || !empty(&c["mismatches"]) || !empty(&c["divisibility_failures"]) {
            return Err(format!("p = {p}: {c}"));
        }
        compared += u(&c["compared"]);
    }
    Ok(format!("{compared} (m, n) pairs, zero mismatches, zero divisibility exceptions"))
}

fn psi_left_inverse() -> Result<String, String> {
    let mut total = 0;
    for name in ["CFG-B", "CFG-C"] {
        let rep = suite(&cfg(name), "psi-phi")?;
        let c = &rep.certificates;
        if u(&c["cases"]) != PSI_PHI_CASES || !empty(&c["failures"]) || u(&c["coefficients_compared"]) == 0 {
            return Err(format!("{name}: {c}"));
        }
        total += u(&c["cases"]);
    }
    Ok(format!("{total} random series, exact mod p^N on the window"))
}

fn commutation() -> Result<String, String> {
    for name in ["CFG-B", "CFG-C"] {
        let rep = suite(&cfg(name), "commute")?;
        let c = &rep.certificates;
        for law in ["nabla_gamma", "nabla_phi", "nabla_psi"] {
            if u(&c[law]) != COMMUTE_CASES {
                return Err(format!("{name} {law}: {}", c[law]));
            }
        }
    }
    Ok(format!("{COMMUTE_CASES} series per law and configuration, CFG-B and CFG-C"))
}

fn leading_terms() -> Result<String, String> {
    let mut witnesses = 0;
    let mut scanned = 0;
    for name in ["CFG-B", "CFG-C"] {
        let rep = suite(&cfg(name), "psi")?;
        let c = &rep.certificates;
        witnesses += u(&c["witnesses"]) as usize;
        if !empty(&c["failures"]) || !empty(&c["existence_scan"]["mismatches"]) {
            return Err(format!("{name}: {}", c["failures"]));
        }
        scanned += u(&c["existence_scan"]["targets"]);
        let checks = c["checks"].as_array().cloned().unwrap_or_default();
        for needed in ["l >= -e", "l != -e mod p", "mainestimate a [nu = 3]", "mainestimate b", "mainestimate c"] {
            let hit = checks.iter().any(|k| {
                k["check"].as_str().is_some_and(|s| s.starts_with(needed))
                    && u(&k["evaluated"]) > 0
                    && k["evaluated"] == k["held"]
            });
            if !hit {
                return Err(format!("{name}: no evaluation of {needed}"));
            }
        }
    }
    if witnesses < 2 * MIN_WITNESSES {
        return Err(format!("only {witnesses} witnesses"));
    }
    Ok(format!("{witnesses} witnesses, {scanned} existence targets, all bounds hold"))
}

fn law_passes(rows: &Value, law: &str, r: u64) -> usize {
    rows.as_array()
        .map(|rs| {
            rs.iter()
                .flat_map(|row| row["laws"].as_array().cloned().unwrap_or_default())
                .filter(|l| {
                    u(&l["r"]) == r
                        && l["status"] == "pass"
                        && l["detail"].as_str().is_some_and(|d| d.split(' ').next() == Some(law))
                })
                .count()
        })
        .unwrap_or(0)
}

fn evaluation_valuations() -> Result<String, String> {
    let mut parts = Vec::new();
    for name in ["CFG-B", "CFG-C"] {
        let rep = suite(&cfg(name), "eval")?;
        let c = &rep.certificates;
        if !empty(&c["failures"]) {
            return Err(format!("{name}: {}", c["failures"]));
        }
        let easy = law_passes(&c["rows"], "easy", 1);
        let notsoeasy = law_passes(&c["rows"], "notsoeasy", 1);
        if easy == 0 || notsoeasy == 0 {
            return Err(format!("{name}: easy {easy}, notsoeasy {notsoeasy}"));
        }
        parts.push(format!("{name}: easy {easy}, notsoeasy {notsoeasy}"));
        if name == "CFG-C" {
            let nd = law_passes(&c["rows"], "notdivbyp", 2);
            let dp = law_passes(&c["rows"], "divbyp", 2);
            if nd == 0 || dp == 0 {
                return Err(format!("CFG-C nabla laws: notdivbyp {nd}, divbyp {dp}"));
            }
            parts.push(format!("nabla laws notdivbyp {nd}, divbyp {dp}"));
        }
    }
    Ok(parts.join("; "))
}

fn gauss_suite() -> Result<String, String> {
    let mut parts = Vec::new();
    for (p, f) in [(5u64, 1usize), (5, 2), (13, 2)] {
        let rep = suite(&Config::new(p, 1, f, 3), "gauss")?;
        let c = &rep.certificates;
        let q = p.pow(f as u32);
        let want = if q == 169 { GAUSS_SAMPLES_169 } else { q - 1 };
        if u(&c["tested"]) != want || !empty(&c["valuation_mismatches"]) || !empty(&c["twist_failures"]) {
            return Err(format!("q = {q}: {c}"));
        }
        parts.push(format!("q = {q}: {want}"));
    }
    Ok(format!("exponents tested {}", parts.join(", ")))
}

fn resolvent_suite() -> Result<String, String> {
    let mut rows = 0;
    for name in ["CFG-D", "CFG-D2"] {
        let rep = suite(&cfg(name), "resolvents")?;
        let c = &rep.certificates;
        for flag in ["xi_units", "x_eta_matches", "valuation_sums_vanish"] {
            if c[flag] != true {
                return Err(format!("{name}: {flag} false"));
            }
        }
        rows += c["report"]["rows"].as_array().map_or(0, |r| r.len());
    }
    Ok(format!("{rows} characters over CFG-D and CFG-D2, exact rational valuations"))
}

fn unramified_closed_form() -> Result<String, String> {
    let rep = suite(&cfg("CFG-A"), "unram")?;
    let c = &rep.certificates["report"];
    let n = u(&c["n"]) as u32;
    if n < UNRAM_P_DIGITS {
        return Err(format!("precision p^{n} below p^{UNRAM_P_DIGITS}"));
    }
    let mut seen = Vec::new();
    for x in c["expstar"].as_array().cloned().unwrap_or_default() {
        for k in ["identity_series", "evaluation", "closed_form"] {
            if x[k] != true {
                return Err(format!("r = {}: {k} fails", x["r"]));
            }
        }
        seen.push(u(&x["r"]));
    }
    if seen != [2, 3] {
        return Err(format!("checked r = {seen:?}"));
    }
    Ok(format!("r = 2, 3: series identity, evaluation and closed form mod p^{n}"))
}

fn trace_relation() -> Result<String, String> {
    let mut parts = Vec::new();
    for name in ["CFG-A", "CFG-B"] {
        let mut c = cfg(name);
        c.slow = true;
        let rep = suite(&c, "trace")?;
        let checks = rep.certificates["checks"].as_array().cloned().unwrap_or_default();
        let mut digits = i64::MAX;
        for x in &checks {
            let r = &x["report"];
            if r["holds"] != true || r["conjugate_sum"] != true || r["normalized_next_level"] != true {
                return Err(format!("{name}: {x}"));
            }
            if u(&r["r"]) == 1 {
                digits = digits.min(r["p_digits"].as_i64().unwrap_or(0));
            }
        }
        if digits < TRACE_P_DIGITS {
            return Err(format!("{name}: agreement mod p^{digits}"));
        }
        parts.push(format!("e = {}: mod p^{digits}", c.e));
    }
    Ok(format!("level 1 with Tr(K_2/K_1), {}", parts.join(", ")))
}

/// Orbits of n in (0, e(p-1)) under multiplication by p, e not dividing n.
fn orbits(p: i64, e: i64) -> BTreeSet<Vec<i64>> {
    let d = e * (p - 1);
    (1..d)
        .filter(|n| n % e != 0)
        .map(|n| {
            let mut o = vec![n];
            let mut x = n * p % d;
            while x != n {
                o.push(x);
                x = x * p % d;
            }
            o.sort();
            o
        })
        .collect()
}

fn volume_verdicts() -> Result<String, String> {
    let mut parts = Vec::new();
    for (name, rs) in [("CFG-B", vec![1u64]), ("CFG-C", vec![1, 2])] {
        let c = cfg(name);
        let (p, e) = (c.p as i64, c.e as i64);
        let rep = suite(&c, "volume")?;
        let entries = rep.certificates["orbits"].as_array().cloned().unwrap_or_default();
        for &r in &rs {
            let mut covered = BTreeSet::new();
            for x in entries.iter().filter(|x| u(&x["r"]) == r) {
                let orbit: Vec<i64> = x["orbit"].as_array().unwrap().iter().map(|v| v.as_i64().unwrap()).collect();
                // p q_i for n_i < re, p^-1 q_i when p | n_i, and for r = 2 also when p | n_i - e
                let want: Vec<i64> = orbit
                    .iter()
                    .map(|&n| {
                        let up = (n < r as i64 * e) as i64;
                        let down = (n % p == 0 || (r == 2 && (n - e) % p == 0)) as i64;
                        up - down
                    })
                    .collect();
                let got: Vec<i64> = x["scaling"].as_array().unwrap().iter().map(|v| v.as_i64().unwrap()).collect();
                if x["verdict"] != "PASS" || x["report"]["unit"] != true || got != want {
                    return Err(format!("{name} orbit {orbit:?} r = {r}: verdict {} scaling {got:?} want {want:?}", x["verdict"]));
                }
                if x["stable_under_perturbation"] != true {
                    return Err(format!("{name} orbit {orbit:?} r = {r}: unstable under perturbation"));
                }
                let mut sorted = orbit.clone();
                sorted.sort();
                covered.insert(sorted);
            }
            if covered != orbits(p, e) {
                return Err(format!("{name} r = {r}: orbits covered {covered:?}"));
            }
            parts.push(format!("{name} r = {r}: {} orbits", covered.len()));
        }
    }
    Ok(format!("unit determinants with the predicted scaling, perturbation stable; {}", parts.join(", ")))
}

fn main() -> ExitCode {
    let criteria = [
        Criterion { id: 1, name: "coefficient oracle equivalence", limit: Duration::from_secs(1), body: coefficient_oracle },
        Criterion { id: 2, name: "psi left inverse", limit: Duration::from_secs(30), body: psi_left_inverse },
        Criterion { id: 3, name: "commutation suite", limit: Duration::from_secs(30), body: commutation },
        Criterion { id: 4, name: "psi = 1 leading-term laws", limit: Duration::from_secs(300), body: leading_terms },
        Criterion { id: 5, name: "evaluation valuations", limit: Duration::from_secs(300), body: evaluation_valuations },
        Criterion { id: 6, name: "Gauss sums", limit: Duration::from_secs(120), body: gauss_suite },
        Criterion { id: 7, name: "resolvents", limit: Duration::from_secs(120), body: resolvent_suite },
        Criterion { id: 8, name: "unramified closed form", limit: Duration::from_secs(120), body: unramified_closed_form },
        Criterion { id: 9, name: "trace relation", limit: Duration::from_secs(600), body: trace_relation },
        Criterion { id: 10, name: "volume verdicts", limit: Duration::from_secs(900), body: volume_verdicts },
    ];
    let mut failed = 0;
    for c in &criteria {
        let start = Instant::now();
        let result = (c.body)();
        let elapsed = start.elapsed();
        let (ok, detail) = match result {
            Ok(d) if elapsed <= c.limit => (true, d),
            Ok(d) => (false, format!("{d}; over the time limit")),
            Err(e) => (false, e),
        };
        failed += (!ok) as usize;
        println!(
            "criterion {:>2} {}: {} ({}; {:.2} s of {} s)",
            c.id,
            c.name,
            if ok { "PASS" } else { "FAIL" },
            detail,
            elapsed.as_secs_f64(),
            c.limit.as_secs()
        );
    }
    println!("acceptance: {} of {} criteria pass", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
