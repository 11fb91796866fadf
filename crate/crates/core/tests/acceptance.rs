//! Acceptance suite. Runs every criterion at its stated tolerance, prints one
//! PASS/FAIL line each, and exits nonzero if any criterion fails.

use std::process::ExitCode;
use std::sync::OnceLock;
use std::time::Instant;

use jordan_lab::deflation::{
    deflated_search, deflated_system, deflation_doubling_check, preconditioned_spectrum_check,
    random_saddle_jacobian, schur_preconditioner, DeflationState, KktProblem, NewtonOptions,
    SaddleProblem, DEFAULT_POWER,
};
use jordan_lab::jordan::build_matrix;
use jordan_lab::krylov::{
    gmres, jordan_block_bound_check, perturbed_pair, theorem2_check, DEFAULT_COND_CAP,
};
use jordan_lab::matrix::singular_values;
use jordan_lab::perturb::{
    measure_tightness, random_bound_trial, random_suite_spec, BoundReport, SuiteRanges,
};
use jordan_lab::rng;
use jordan_lab::structure::{analyze, AnalyzeOptions};
use nalgebra::DVector;

const DEFAULT_SEED: u64 = 20240601;

/// Base seed; `ACCEPTANCE_SEED` overrides it for robustness sweeps.
fn seed() -> u64 {
    static SEED: OnceLock<u64> = OnceLock::new();
    *SEED.get_or_init(|| {
        std::env::var("ACCEPTANCE_SEED")
            .ok()
            .and_then(|s| s.parse().ok())
            .unwrap_or(DEFAULT_SEED)
    })
}

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn suite_trials() -> Vec<Result<BoundReport, String>> {
    let ranges = SuiteRanges::default();
    (0..500)
        .map(|i| {
            random_bound_trial(seed(), i, &ranges)
                .map(|(_, r)| r)
                .map_err(|e| e.to_string())
        })
        .collect()
}

fn criterion_1(trials: &[Result<BoundReport, String>]) -> Verdict {
    let errors = trials.iter().filter(|t| t.is_err()).count();
    let violations = trials
        .iter()
        .filter(|t| matches!(t, Ok(r) if !r.bound_holds))
        .count();
    let tight = trials
        .iter()
        .filter(|t| matches!(t, Ok(r) if r.measured_distinct_c == r.bound))
        .count();
    let ranks: Vec<usize> = (0..=3)
        .map(|r| {
            trials
                .iter()
                .filter(|t| matches!(t, Ok(x) if x.rank_used == r))
                .count()
        })
        .collect();
    verdict(
        errors == 0 && violations == 0,
        format!(
            "{} trials, {violations} violations, {errors} errors, {tight} at the bound, trials per rank 0..3 {ranks:?}",
            trials.len()
        ),
    )
}

fn criterion_2(trials: &[Result<BoundReport, String>]) -> Verdict {
    let errors = trials.iter().filter(|t| t.is_err()).count();
    let checked: usize = trials.iter().flatten().map(|r| r.mg_drops.len()).sum();
    let violations: usize = trials
        .iter()
        .flatten()
        .map(|r| r.mg_drops.iter().filter(|m| !m.holds(r.rank_used)).count())
        .sum();
    verdict(
        errors == 0 && violations == 0,
        format!("{checked} eigenvalue checks, {violations} violations, {errors} errors"),
    )
}

fn criterion_3() -> Verdict {
    let mut ok = true;
    let mut parts = Vec::new();
    for k in 1..=5usize {
        let mut attained = 0;
        let mut within = 0;
        for i in 0..100u64 {
            match measure_tightness(k, rng::derive_seed(seed(), ((k as u64) << 32) | i)) {
                Ok(r) => {
                    attained += usize::from(r.attained);
                    within += usize::from(r.within_bound);
                }
                Err(_) => ok = false,
            }
        }
        ok &= attained >= 95 && within == 100;
        parts.push(format!("k={k}: {attained}/100 exact, {within}/100 within"));
    }
    verdict(ok, parts.join("; "))
}

fn criterion_4() -> Verdict {
    let ranges = SuiteRanges::default();
    let mut matched = 0;
    let mut failures = Vec::new();
    for i in 0..200u64 {
        let mut r = rng::trial_rng(seed() ^ 4, i);
        let outcome = random_suite_spec(&mut r, &ranges, false).and_then(|spec| {
            let a = build_matrix(&spec, DEFAULT_COND_CAP, rng::derive_seed(seed(), i))?.a;
            let opts = if spec.is_diagonalizable() {
                AnalyzeOptions::default()
            } else {
                AnalyzeOptions::for_defective(&a)
            };
            Ok(spec.mismatches(&analyze(&a, &opts)?))
        });
        match outcome {
            Ok(m) if m.is_empty() => matched += 1,
            Ok(m) => failures.push(format!("#{i}: {}", m.join(", "))),
            Err(e) => failures.push(format!("#{i}: {e}")),
        }
    }
    let mut detail = format!("{matched}/200 exact");
    if let Some(first) = failures.first() {
        detail += &format!(", first mismatch {first}");
    }
    verdict(matched == 200, detail)
}

fn diagonalizable_ranges() -> SuiteRanges {
    SuiteRanges {
        defect: (0, 0),
        ..SuiteRanges::default()
    }
}

fn criterion_5() -> Verdict {
    let mut exact = 0;
    let mut within = 0;
    let mut errors = 0;
    for i in 0..100u64 {
        let mut r = rng::trial_rng(seed() ^ 5, i);
        let outcome = random_suite_spec(&mut r, &diagonalizable_ranges(), true).and_then(|spec| {
            let a = build_matrix(&spec, DEFAULT_COND_CAP, rng::derive_seed(seed(), i))?.a;
            let b = rng::normal_complex_vector(&mut r, spec.n());
            let out = gmres(&a, &b, 1e-10, spec.n())?;
            Ok((out.trace.converged_at, spec.distinct()))
        });
        match outcome {
            Ok((Some(k), distinct)) => {
                exact += usize::from(k == distinct);
                within += usize::from(k <= distinct);
            }
            _ => errors += 1,
        }
    }
    verdict(
        exact >= 98 && within == 100,
        format!("{exact}/100 convergedAt = |Λ(A)|, {within}/100 within, {errors} errors"),
    )
}

fn criterion_6() -> Verdict {
    let mut doubled = 0;
    let mut block_ok = 0;
    let mut stagnation = 0;
    let mut worst_ratio: f64 = 0.0;
    for i in 0..200u64 {
        let mut r = rng::trial_rng(seed() ^ 6, i);
        let seed_b = rng::derive_seed(seed() ^ 6, 2 * i);
        let seed_rhs = rng::derive_seed(seed() ^ 6, 2 * i + 1);
        let outcome = random_suite_spec(&mut r, &diagonalizable_ranges(), true).and_then(|spec| {
            let rep = theorem2_check(&spec, 1, seed_b, seed_rhs, 1e-10)?;
            let pair = perturbed_pair(&spec, 1, seed_b)?;
            let bound =
                jordan_block_bound_check(&pair.c, spec.distinct(), &AnalyzeOptions::default())?;
            Ok((rep, bound))
        });
        if let Ok((rep, bound)) = outcome {
            doubled += usize::from(rep.pass);
            block_ok += usize::from(bound);
            stagnation += usize::from(rep.iters_a.is_none() || rep.iters_c.is_none());
            worst_ratio = worst_ratio.max(rep.ratio.unwrap_or(f64::INFINITY));
        }
    }
    verdict(
        doubled == 200 && block_ok == 200,
        format!(
            "{doubled}/200 itersC <= 2 itersA (max ratio {worst_ratio:.3}, {stagnation} stagnated), {block_ok}/200 block bound"
        ),
    )
}

fn criterion_7() -> Verdict {
    let counts: Vec<usize> = (0..50u64)
        .map(|i| {
            let j = random_saddle_jacobian(6, 2, rng::derive_seed(seed() ^ 7, i)).ok()?;
            let p = schur_preconditioner(&j, (6, 2)).ok()?;
            preconditioned_spectrum_check(&j, &p)
                .ok()
                .map(|s| s.distinct)
        })
        .map(|c| c.unwrap_or(0))
        .collect();
    let three = counts.iter().filter(|&&c| c == 3).count();
    verdict(
        three == 50,
        format!("{three}/50 instances with 3 distinct eigenvalues"),
    )
}

fn criterion_8() -> Verdict {
    let problem = KktProblem::default_toy();
    let n = problem.dim();
    let search = match deflated_search(
        &problem,
        &problem.default_guess(),
        10,
        DEFAULT_POWER,
        &NewtonOptions::default(),
    ) {
        Ok(s) => s,
        Err(e) => return verdict(false, format!("search failed: {e}")),
    };
    let roots = search.states();
    let residual_ok = roots.iter().all(|r| problem.residual(r).norm() <= 1e-10);
    let mut min_sep = f64::INFINITY;
    for (i, a) in roots.iter().enumerate() {
        for b in &roots[..i] {
            min_sep = min_sep.min((a - b).norm());
        }
    }
    let Some(root) = roots.first() else {
        return verdict(false, "no roots found".into());
    };
    let state =
        DeflationState::with_roots(DEFAULT_POWER, true, std::slice::from_ref(root)).unwrap();
    let mut r = rng::seeded(seed() ^ 8);
    let mut worst_j: f64 = 0.0;
    for _ in 0..100 {
        let u = rng::normal_vector(&mut r, n);
        match deflated_system(&problem, &state, &u) {
            Ok(sys) => {
                let diff = &sys.j_tilde - &sys.j.scale_real(sys.m);
                worst_j = worst_j.max(singular_values(&diff).second_ratio());
            }
            Err(_) => worst_j = f64::INFINITY,
        }
    }
    let mut doubling = 0;
    let mut worst_c: f64 = 0.0;
    for _ in 0..50 {
        let u = rng::normal_vector(&mut r, n);
        let rhs = rng::normal_complex_vector(&mut r, n);
        match deflation_doubling_check(&problem, &u, root, &rhs, 1e-10) {
            Ok(rep) => {
                worst_c = worst_c.max(rep.update_sigma_ratio);
                doubling += usize::from(rep.pass && rep.rank_one);
            }
            Err(_) => worst_c = f64::INFINITY,
        }
    }
    let pass =
        roots.len() >= 2 && residual_ok && min_sep > 0.1 && worst_j < 1e-12 && doubling == 50;
    verdict(
        pass,
        format!(
            "{} roots (min separation {min_sep:.3}), max σ₂/σ₁ of J̃ − MJ {worst_j:.1e}, of C − A {worst_c:.1e}, {doubling}/50 doubling",
            roots.len()
        ),
    )
}

fn criterion_9() -> Verdict {
    let problem = KktProblem::default_toy();
    let n = problem.dim();
    let found = deflated_search(
        &problem,
        &problem.default_guess(),
        2,
        DEFAULT_POWER,
        &NewtonOptions::default(),
    )
    .map(|s| s.states())
    .unwrap_or_default();
    if found.len() < 2 {
        return verdict(false, "toy problem did not yield two roots".into());
    }
    let mut r = rng::seeded(seed() ^ 9);
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for count in [1usize, 2] {
        let state = DeflationState::with_roots(DEFAULT_POWER, true, &found[..count]).unwrap();
        for _ in 0..100 {
            let u = rng::normal_vector(&mut r, n);
            let Ok(e) = state.gradient(&u) else {
                worst = f64::INFINITY;
                continue;
            };
            let h = 1e-6;
            let fd = DVector::from_fn(n, |k, _| {
                let mut up = u.clone();
                let mut dn = u.clone();
                up[k] += h;
                dn[k] -= h;
                (state.value(&up).unwrap() - state.value(&dn).unwrap()) / (2.0 * h)
            });
            worst = worst.max((fd - &e).norm() / e.norm());
            checked += 1;
        }
    }
    verdict(
        worst <= 1e-6,
        format!("{checked} points, max relative error {worst:.1e}"),
    )
}

fn main() -> ExitCode {
    let start = Instant::now();
    println!("acceptance seed {}", seed());
    let trials = suite_trials();
    let results: Vec<(&str, Verdict)> = vec![
        ("1 distinct-eigenvalue bound", criterion_1(&trials)),
        ("2 geometric multiplicity drop", criterion_2(&trials)),
        ("3 bound tightness", criterion_3()),
        ("4 eigenstructure round trip", criterion_4()),
        ("5 GMRES finite termination", criterion_5()),
        ("6 iteration doubling", criterion_6()),
        ("7 preconditioned spectrum", criterion_7()),
        ("8 deflation end to end", criterion_8()),
        ("9 deflation gradient", criterion_9()),
    ];
    let mut failed = 0;
    for (name, v) in &results {
        println!(
            "criterion {name}: {} ({})",
            if v.pass { "PASS" } else { "FAIL" },
            v.detail
        );
        failed += usize::from(!v.pass);
    }
    println!(
        "acceptance: {}/{} criteria passed in {:.1}s",
        results.len() - failed,
        results.len(),
        start.elapsed().as_secs_f64()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
