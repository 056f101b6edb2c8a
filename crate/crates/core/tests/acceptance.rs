//! Acceptance gate: runs criteria 1 to 10 and prints one PASS/FAIL line each.
//! The process exits with status 1 when any criterion fails.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::time::{Duration, Instant};

use num_rational::Ratio;
use rand::{Rng, SeedableRng};
use rayon::prelude::*;

use shapevar::cli_reports::cmd_errata;
use shapevar::closed_forms::{self, EvaluationMode, ProblemParams};
use shapevar::fields::{sample_points, PolynomialField};
use shapevar::numeric_oracle::{
    check_aij_lemma, check_jacobian_coefficients, exterior_capacity_p2, fd_first_derivative, fd_second_derivative,
    normalized_family, perturbed_area, perturbed_volume, torsion_q2, zonal_mode, PerturbedBall, SpectralSolveConfig,
    DEFAULT_AMPLITUDE, GEOMETRY_AMPLITUDE,
};
use shapevar::regime_classifier::{
    capacity_threshold, capacity_unstable_modes, classify_product, example_exponent, find_product_thresholds,
    verify_z_monotone_in_p, ThresholdGrids, Verdict, DEFAULT_K_MAX,
};
use shapevar::sphere_harmonics::HarmonicIndex;
use shapevar::variation_engine::{second_variation_capacity, second_variation_torsion, ModeSpectrum};

type Criterion = (&'static str, Duration, fn() -> Outcome);

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn params(d: usize, p: f64, q: f64, r: f64) -> ProblemParams {
    ProblemParams::new(d, p, q, r).expect("admissible parameters")
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

fn criterion_1() -> Outcome {
    let mut worst_zero: f64 = 0.0;
    let mut failures = Vec::new();
    for d in 3..=10usize {
        let p_star = capacity_threshold(d);
        if p_star != 1.0 + (d as f64 - 1.0) / d as f64 {
            failures.push(format!("p*({d})"));
        }
        let rho = ModeSpectrum::zonal(1.0, &(2..=60).map(|k| (k, 1.0)).collect::<Vec<_>>());
        let at = second_variation_capacity(&params(d, p_star, 2.0, 1.0), &rho).unwrap();
        worst_zero = worst_zero.max(at.per_mode_terms[&2].abs());
        let above = second_variation_capacity(&params(d, p_star + 1e-6, 2.0, 1.0), &rho).unwrap();
        if above.per_mode_terms.values().any(|&t| !(t > 0.0)) {
            failures.push(format!("d={d}: p*+1e-6 has a nonpositive mode"));
        }
        let below = second_variation_capacity(&params(d, p_star - 1e-6, 2.0, 1.0), &rho).unwrap();
        if !(below.per_mode_terms[&2] < 0.0) {
            failures.push(format!("d={d}: p*-1e-6 mode 2 not negative"));
        }
    }
    let pass = failures.is_empty() && worst_zero <= 1e-13;
    outcome(pass, format!("max |k=2 term at p*| = {worst_zero:.1e}; {} failure(s) {:?}", failures.len(), failures))
}

fn criterion_2() -> Outcome {
    let mut mismatches = Vec::new();
    for d in [3i64, 5, 7] {
        for eps in [Ratio::new(1i64, 4), Ratio::new(1, 2), Ratio::new(3, 4)] {
            let p = Ratio::from_integer(1) + eps * Ratio::new(d - 1, d);
            let brute: BTreeSet<usize> = (2..=200i64)
                .filter(|&k| (p - 1) * Ratio::from_integer(d - 2 + k) < Ratio::from_integer(d - 1))
                .map(|k| k as usize)
                .collect();
            let bound = (Ratio::from_integer(d) - eps * (d - 2)) / eps;
            let formula: BTreeSet<usize> =
                (2..=200i64).filter(|&k| Ratio::from_integer(k) < bound).map(|k| k as usize).collect();
            let eps_f = *eps.numer() as f64 / *eps.denom() as f64;
            let computed = capacity_unstable_modes(&params(d as usize, example_exponent(d as usize, eps_f), 2.0, 1.0));
            if brute != formula || computed != brute {
                mismatches.push(format!("(d={d}, eps={eps})"));
            }
        }
    }
    outcome(mismatches.is_empty(), format!("9 (d, eps) cases, mismatches {mismatches:?}"))
}

fn random_spectrum(rng: &mut impl Rng, radius: f64) -> ModeSpectrum {
    let mut spec = ModeSpectrum::zonal(radius, &[]);
    for _ in 0..rng.gen_range(1..=6) {
        let k = rng.gen_range(2..=30i64);
        let m = rng.gen_range(-k..=k);
        spec.add(HarmonicIndex::new(k, m).unwrap(), rng.gen_range(-2.0..2.0));
    }
    spec
}

fn criterion_3() -> Outcome {
    let mut rng = rand::rngs::StdRng::seed_from_u64(3);
    let mut worst = f64::NEG_INFINITY;
    let mut bad = 0;
    for _ in 0..1000 {
        let d = rng.gen_range(3..=12usize);
        let p = rng.gen_range(1.01..d as f64 - 0.01);
        let q = rng.gen_range(1.01..10.0);
        let r = rng.gen_range(0.1..10.0);
        let spec = random_spectrum(&mut rng, r);
        if spec.is_zero() {
            continue;
        }
        let t = second_variation_torsion(&params(d, p, q, r), &spec).unwrap().second;
        worst = worst.max(t);
        if !(t < 0.0) {
            bad += 1;
        }
    }
    outcome(bad == 0, format!("1000 samples, {bad} nonnegative, largest {worst:.3e}"))
}

fn grid(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let n = ((hi - lo) / step + 1e-9).floor() as usize;
    (0..=n).map(|i| lo + i as f64 * step).filter(|&x| x <= hi).collect()
}

fn criterion_4() -> Outcome {
    let margin = 1e-3;
    let qs = grid(1.0 + margin, 10.0, 1e-2);
    let mut notes = Vec::new();
    let mut pass = true;
    for d in 3..=7usize {
        let ps = grid(1.0 + margin, d as f64 - margin, 1e-2);
        let counts = ps
            .par_iter()
            .map(|&p| {
                let mut c = [0usize; 4];
                for &q in &qs {
                    let v = classify_product(&params(d, p, q, 1.0), EvaluationMode::Paper, DEFAULT_K_MAX).unwrap();
                    c[v.verdict as usize] += 1;
                }
                c
            })
            .reduce(|| [0; 4], |a, b| [a[0] + b[0], a[1] + b[1], a[2] + b[2], a[3] + b[3]]);
        let cells: usize = counts.iter().sum();
        let local_max = counts[Verdict::LocalMax as usize];
        let indefinite = counts[Verdict::Indefinite as usize];
        if d <= 6 {
            pass &= local_max == cells;
            notes.push(format!("d={d}: {local_max}/{cells} local_max"));
        } else {
            pass &= indefinite > 0;
            let th = find_product_thresholds(d, EvaluationMode::Paper, &ThresholdGrids::default()).unwrap();
            match th {
                Some(t) => {
                    let first = t.intervals.first();
                    let ok = t.p_star > 1.0
                        && t.p_star < 7.0
                        && first.is_some_and(|i| i.q_minus > 1.0 && i.q_plus > i.q_minus);
                    pass &= ok;
                    notes.push(format!(
                        "d=7: {indefinite}/{cells} indefinite, p* = {:.10}, first interval q in ({:.10}, {:.10}){}",
                        t.p_star,
                        first.map_or(f64::NAN, |i| i.q_minus),
                        first.map_or(f64::NAN, |i| i.q_plus),
                        if first.is_some_and(|i| i.open_above) { " open above" } else { "" }
                    ));
                }
                None => {
                    pass = false;
                    notes.push("d=7: no thresholds found".into());
                }
            }
        }
    }
    outcome(pass, notes.join("; "))
}

fn criterion_5() -> Outcome {
    let mut rng = rand::rngs::StdRng::seed_from_u64(5);
    let samples: Vec<(usize, f64, usize)> = (0..1000)
        .map(|_| (rng.gen_range(3..=10usize), rng.gen_range(1.001..=10.0), rng.gen_range(2..=64usize)))
        .collect();
    let results: Vec<_> = samples
        .par_iter()
        .map(|&(d, q, k)| {
            let lo = 1.0 + 1e-3;
            let hi = d as f64 - 1e-3;
            let p_grid: Vec<f64> = (0..1000).map(|i| lo + (hi - lo) * i as f64 / 999.0).collect();
            (d, q, k, verify_z_monotone_in_p(d, q, k, &p_grid).unwrap())
        })
        .collect();
    let failures: Vec<_> = results.iter().filter(|r| !r.3.monotone).collect();
    let detail = match failures.first() {
        None => "1000 samples, all monotone".to_string(),
        Some((d, q, k, m)) => format!(
            "{} of 1000 not monotone, e.g. d={d} q={q:.4} k={k} at p in ({:.4}, {:.4}) increment {:.3e}",
            failures.len(),
            m.worst_pair.0,
            m.worst_pair.1,
            m.worst_increment
        ),
    };
    outcome(failures.is_empty(), detail)
}

fn criterion_6() -> Outcome {
    let mut worst_v: f64 = 0.0;
    let mut worst_s: f64 = 0.0;
    for k in 1..=3usize {
        let rho = zonal_mode(1.0, k);
        let steps = SpectralSolveConfig::for_spectrum(&rho, GEOMETRY_AMPLITUDE).fd_steps;
        let v1 = fd_first_derivative(normalized_family(&rho, perturbed_volume), &steps, None).unwrap();
        let v2 = fd_second_derivative(normalized_family(&rho, perturbed_volume), &steps, None).unwrap();
        let s2 = fd_second_derivative(normalized_family(&rho, perturbed_area), &steps, None).unwrap();
        worst_v = worst_v.max(v1.value.abs()).max(v2.value.abs());
        worst_s = worst_s.max((s2.value - (k * (k + 1)) as f64 + 2.0).abs());
    }
    outcome(
        worst_v <= 1e-10 && worst_s <= 1e-6,
        format!("max |V'|,|V''| = {worst_v:.1e}; max area error {worst_s:.1e}"),
    )
}

fn oracle_second_variation(k: usize, torsion: bool) -> f64 {
    let rho = zonal_mode(1.0, k);
    let cfg = SpectralSolveConfig::for_spectrum(&rho, DEFAULT_AMPLITUDE);
    let est = if torsion {
        fd_second_derivative(normalized_family(&rho, |b| torsion_q2(b, &cfg).map(|s| s.value)), &cfg.fd_steps, None)
    } else {
        fd_second_derivative(
            normalized_family(&rho, |b| exterior_capacity_p2(b, &cfg).map(|s| s.value)),
            &cfg.fd_steps,
            None,
        )
    };
    est.expect("oracle solve").value
}

fn criterion_7() -> Outcome {
    let p = params(3, 2.0, 2.0, 1.0);
    let mut worst: f64 = 0.0;
    let mut parts = Vec::new();
    for (k, expected) in [(2usize, 2.0), (3, 4.0), (4, 6.0)] {
        let series = second_variation_capacity(&p, &zonal_mode(1.0, k)).unwrap().second;
        let oracle = oracle_second_variation(k, false);
        worst = worst.max(rel(oracle, expected)).max(rel(series, expected));
        parts.push(format!("k={k}: series {series:.6} oracle {oracle:.6}"));
    }
    outcome(worst <= 1e-3, format!("{}; max rel error {worst:.1e}", parts.join(", ")))
}

fn criterion_8() -> Outcome {
    let p = params(3, 2.0, 2.0, 1.0);
    let mut worst: f64 = 0.0;
    let mut parts = Vec::new();
    for (k, expected) in [(2usize, -8.0 / 9.0), (3, -10.0 / 9.0), (4, -4.0 / 3.0)] {
        let series = second_variation_torsion(&p, &zonal_mode(1.0, k)).unwrap().second;
        let oracle = oracle_second_variation(k, true);
        worst = worst.max(rel(oracle, expected)).max(rel(series, expected));
        parts.push(format!("k={k}: series {series:.6} oracle {oracle:.6}"));
    }
    outcome(worst <= 1e-3, format!("{}; max rel error {worst:.1e}", parts.join(", ")))
}

fn criterion_9() -> Outcome {
    let p = params(3, 2.0, 2.0, 1.0);
    let cap = closed_forms::ball_capacity(&p);
    let tor = closed_forms::ball_torsion_derived(&p);
    let ball = PerturbedBall::new(zonal_mode(1.0, 2), 0.0, true).unwrap();
    let cfg = SpectralSolveConfig::for_spectrum(&zonal_mode(1.0, 2), DEFAULT_AMPLITUDE);
    let cap0 = exterior_capacity_p2(&ball, &cfg).unwrap().value;
    let tor0 = torsion_q2(&ball, &cfg).unwrap().value;
    let errs = [
        (cap - 4.0 * PI).abs(),
        (cap0 - 4.0 * PI).abs(),
        (tor - 4.0 * PI / 45.0).abs(),
        (tor0 - 4.0 * PI / 45.0).abs(),
    ];
    let worst = errs.iter().cloned().fold(0.0, f64::max);
    let flags = cmd_errata().unwrap().envelope.flags;
    let flagged = flags.iter().any(|f| f.starts_with("torsion constant"));
    outcome(
        worst <= 1e-12 && flagged,
        format!(
            "max anchor error {worst:.1e}; errata torsion-constant flag {}",
            if flagged { "fired" } else { "missing" }
        ),
    )
}

fn criterion_10() -> Outcome {
    let mut rng = rand::rngs::StdRng::seed_from_u64(10);
    let steps = [4e-3, 2e-3, 1e-3];
    let (mut aij, mut jac): (f64, f64) = (0.0, 0.0);
    for _ in 0..20 {
        let v = PolynomialField::random(&mut rng, 3, 3, 1.0);
        let w = PolynomialField::random(&mut rng, 3, 3, 1.0);
        let pts = sample_points(&mut rng, 3, 5, 0.5);
        aij = aij.max(check_aij_lemma(&v, &w, &pts, &steps).unwrap().max());
        jac = jac.max(check_jacobian_coefficients(&v, &w, &pts, &steps).unwrap().max());
    }
    outcome(aij <= 1e-7 && jac <= 1e-7, format!("20 fields: A_ij residual {aij:.1e}, Jacobian residual {jac:.1e}"))
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("threshold reproduction", Duration::from_secs(1), criterion_1),
        ("example reproduction", Duration::from_secs(1), criterion_2),
        ("torsion negativity", Duration::from_secs(1), criterion_3),
        ("theorem reproduction", Duration::from_secs(60), criterion_4),
        ("monotonicity certification", Duration::from_secs(5), criterion_5),
        ("oracle equivalence, geometry", Duration::from_secs(5), criterion_6),
        ("oracle equivalence, capacity", Duration::from_secs(30), criterion_7),
        ("oracle equivalence, torsion", Duration::from_secs(30), criterion_8),
        ("closed-form anchors", Duration::from_secs(60), criterion_9),
        ("A_ij and Jacobian residuals", Duration::from_secs(5), criterion_10),
    ];
    let mut failed = 0;
    for (i, (name, budget, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let out = run();
        let elapsed = start.elapsed();
        let in_time = elapsed <= *budget;
        let pass = out.pass && in_time;
        if !pass {
            failed += 1;
        }
        let time_note = if in_time { String::new() } else { format!(" [over budget {budget:?}]") };
        println!(
            "{} criterion {:>2} {name} ({:.2} s){time_note}: {}",
            if pass { "PASS" } else { "FAIL" },
            i + 1,
            elapsed.as_secs_f64(),
            out.detail
        );
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
