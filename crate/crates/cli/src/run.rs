//! Experiment execution and report writing.

use std::fs;
use std::path::Path;

use jordan_lab::deflation::{
    deflated_search, deflation_doubling_check, preconditioned_spectrum_check, schur_preconditioner,
    DeflationDoublingReport, KktProblem, NewtonOptions, SaddleProblem, DEFAULT_POWER,
    DEFLATION_GMRES_TOL,
};
use jordan_lab::error::LabError;
use jordan_lab::jordan::{build_matrix, JordanSpec};
use jordan_lab::krylov::{
    jordan_block_bound_check, perturbed_pair, theorem2_check, DEFAULT_COND_CAP, DEFAULT_GMRES_TOL,
};
use jordan_lab::mtx::read_matrix;
use jordan_lab::perturb::{
    check_bound_with, measure_tightness_with, random_bound_trial_with, random_suite_spec,
    theorem1_bound, BoundOptions, BoundReport, SuiteRanges, MG_RANK_FACTOR,
};
use jordan_lab::rng;
use jordan_lab::structure::{
    analyze, AnalyzeOptions, DEFAULT_WEYR_RANK_FACTOR, DEFECTIVE_CLUSTER_FACTOR,
};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{ExperimentConfig, Mode};
use crate::CliError;

/// Maximum roots sought by the deflate experiment.
pub const DEFLATE_MAX_ROOTS: usize = 10;
/// Share of seeds per k that must attain `2k` exactly.
pub const TIGHTNESS_ATTAIN_SHARE: f64 = 0.95;

pub const SUMMARY_FILE: &str = "summary.json";
pub const TRIALS_FILE: &str = "trials.csv";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Pass,
    CheckFailed,
    /// Some trial raised an error; reports are still written.
    Errored,
}

impl Verdict {
    pub fn exit_code(self) -> u8 {
        match self {
            Verdict::Pass => 0,
            Verdict::CheckFailed => 2,
            Verdict::Errored => 1,
        }
    }

    fn label(self) -> &'static str {
        match self {
            Verdict::Pass => "pass",
            Verdict::CheckFailed => "fail",
            Verdict::Errored => "error",
        }
    }
}

#[derive(Debug, Clone, Copy, Default, Serialize)]
struct Tally {
    total: usize,
    passed: usize,
    failed: usize,
    errors: usize,
}

impl Tally {
    fn record(&mut self, outcome: Option<bool>) {
        self.total += 1;
        match outcome {
            Some(true) => self.passed += 1,
            Some(false) => self.failed += 1,
            None => self.errors += 1,
        }
    }

    fn verdict(&self, extra_ok: bool) -> Verdict {
        if self.errors > 0 {
            Verdict::Errored
        } else if self.failed > 0 || !extra_ok {
            Verdict::CheckFailed
        } else {
            Verdict::Pass
        }
    }
}

struct Report {
    verdict: Verdict,
    tally: Tally,
    bound_inputs: Value,
    details: Value,
    csv: String,
    extra_files: Vec<(&'static str, String)>,
}

fn csv_field(message: &str) -> String {
    format!("\"{}\"", message.replace('"', "'"))
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

fn bound_inputs(distinct_a: usize, defect_a: usize, rank: usize) -> Value {
    json!({
        "distinctA": distinct_a,
        "defectA": defect_a,
        "rank": rank,
        "bound": theorem1_bound(distinct_a, defect_a, rank),
    })
}

/// Runs the configured experiment, writes `summary.json`, `trials.csv` and
/// any mode-specific files into `cfg.out`, and returns the verdict.
pub fn run(cfg: &ExperimentConfig) -> Result<Verdict, CliError> {
    let report = match cfg.mode {
        Mode::Analyze => run_analyze(cfg)?,
        Mode::Perturb => run_perturb(cfg)?,
        Mode::Krylov => run_krylov(cfg)?,
        Mode::Deflate => run_deflate(cfg)?,
        Mode::Tightness => run_tightness(cfg)?,
    };
    write_report(cfg, &report)?;
    Ok(report.verdict)
}

fn write_report(cfg: &ExperimentConfig, report: &Report) -> Result<(), CliError> {
    fs::create_dir_all(&cfg.out)?;
    let summary = json!({
        "tool": env!("CARGO_PKG_NAME"),
        "version": env!("CARGO_PKG_VERSION"),
        "config": cfg,
        "boundInputs": report.bound_inputs,
        "checks": report.tally,
        "verdict": report.verdict.label(),
        "details": report.details,
    });
    let text = serde_json::to_string_pretty(&summary).expect("summary serializes");
    fs::write(cfg.out.join(SUMMARY_FILE), text + "\n")?;
    fs::write(cfg.out.join(TRIALS_FILE), &report.csv)?;
    for (name, body) in &report.extra_files {
        fs::write(Path::new(&cfg.out).join(name), body)?;
    }
    Ok(())
}

fn run_analyze(cfg: &ExperimentConfig) -> Result<Report, CliError> {
    let (a, spec) = match (&cfg.matrix, &cfg.spec) {
        (Some(path), _) => (read_matrix(path)?, None),
        (None, Some(spec)) => (
            build_matrix(spec, DEFAULT_COND_CAP, cfg.seed)?.a,
            Some(spec),
        ),
        (None, None) => unreachable!("validated in config"),
    };
    let defective_hint = spec.is_some_and(|s| !s.is_diagonalizable());
    let cluster_tol = cfg
        .cluster_tol
        .or_else(|| defective_hint.then(|| DEFECTIVE_CLUSTER_FACTOR * a.frobenius_norm().max(1.0)));
    let opts = AnalyzeOptions {
        cluster_tol,
        rank_factor: cfg.rank_tol.unwrap_or(DEFAULT_WEYR_RANK_FACTOR),
    };
    let structure = analyze(&a, &opts)?;
    let mismatches = spec.map(|s| s.mismatches(&structure)).unwrap_or_default();
    let mut tally = Tally::default();
    tally.record(Some(mismatches.is_empty()));

    let mut csv = String::from("cluster,re,im,algebraic,geometric,defect,blockSizes,weyr\n");
    for (i, c) in structure.clusters.iter().enumerate() {
        let join = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(";");
        csv += &format!(
            "{i},{:.16e},{:.16e},{},{},{},{},{}\n",
            c.value.re,
            c.value.im,
            c.algebraic,
            c.geometric,
            c.defect,
            join(&c.block_sizes),
            join(&c.weyr)
        );
    }
    Ok(Report {
        verdict: tally.verdict(true),
        tally,
        bound_inputs: bound_inputs(
            structure.distinct(),
            structure.total_defect,
            cfg.rank.unwrap_or(0),
        ),
        details: json!({
            "structure": structure,
            "specMismatches": mismatches,
        }),
        csv,
        extra_files: Vec::new(),
    })
}

fn bound_row(outcome: &Result<BoundReport, LabError>, index: usize) -> String {
    match outcome {
        Ok(r) => format!("{},\n", r.csv_row()),
        Err(e) => format!("{index},,,,,,,,,,,false,{}\n", csv_field(&e.to_string())),
    }
}

fn run_perturb(cfg: &ExperimentConfig) -> Result<Report, CliError> {
    let opts = BoundOptions {
        cluster_tol: cfg.cluster_tol,
        mg_rank_factor: cfg.rank_tol.unwrap_or(MG_RANK_FACTOR),
    };
    let mut csv = format!("{},error\n", BoundReport::CSV_HEADER);
    let mut tally = Tally::default();
    let bound_inputs_value;
    let details;
    match &cfg.spec {
        Some(spec) => {
            let r = cfg.rank.unwrap_or(1);
            let outcomes = check_bound_with(spec, r, cfg.trials, cfg.seed, &opts)?;
            for (i, o) in outcomes.iter().enumerate() {
                tally.record(o.as_ref().ok().map(|r| r.pass));
                csv += &bound_row(o, i);
            }
            bound_inputs_value = bound_inputs(spec.distinct(), spec.defect(), r);
            details = json!({ "suite": "fixedSpec", "spec": spec.summary() });
        }
        None => {
            let mut ranges = SuiteRanges::default();
            if let Some(r) = cfg.rank {
                ranges.rank = (r, r);
            }
            let mut max_bound = 0;
            for i in 0..cfg.trials {
                let outcome =
                    random_bound_trial_with(cfg.seed, i, &ranges, &opts).map(|(_, rep)| rep);
                if let Ok(rep) = &outcome {
                    max_bound = max_bound.max(rep.bound);
                }
                tally.record(outcome.as_ref().ok().map(|r| r.pass));
                csv += &bound_row(&outcome, i);
            }
            bound_inputs_value =
                json!({ "perTrial": true, "columns": ["distinctA", "defectA", "rank"] });
            details = json!({ "suite": "random", "ranges": ranges, "maxBound": max_bound });
        }
    }
    Ok(Report {
        verdict: tally.verdict(true),
        tally,
        bound_inputs: bound_inputs_value,
        details,
        csv,
        extra_files: Vec::new(),
    })
}

fn run_krylov(cfg: &ExperimentConfig) -> Result<Report, CliError> {
    let tol = cfg.gmres_tol.unwrap_or(DEFAULT_GMRES_TOL);
    let rank = cfg.rank.unwrap_or(1);
    let opts = AnalyzeOptions {
        cluster_tol: cfg.cluster_tol,
        rank_factor: cfg.rank_tol.unwrap_or(DEFAULT_WEYR_RANK_FACTOR),
    };
    if let Some(spec) = &cfg.spec {
        if !spec.is_diagonalizable() {
            return Err(CliError::Config {
                field: "spec".into(),
                message: "krylov needs a diagonalizable spec".into(),
            });
        }
    }
    let ranges = SuiteRanges {
        defect: (0, 0),
        ..SuiteRanges::default()
    };
    let mut csv = String::from(
        "trial,n,distinctA,rank,itersA,itersC,ratio,exactTermination,blockBound,pass,error\n",
    );
    let mut tally = Tally::default();
    let mut exact = 0usize;
    for i in 0..cfg.trials {
        let seed_b = rng::derive_seed(cfg.seed, 2 * i as u64);
        let seed_rhs = rng::derive_seed(cfg.seed, 2 * i as u64 + 1);
        let trial = (|| -> Result<(JordanSpec, String, bool, bool), LabError> {
            let spec = match &cfg.spec {
                Some(s) => s.clone(),
                None => random_suite_spec(&mut rng::trial_rng(cfg.seed, i as u64), &ranges, true)?,
            };
            let rep = theorem2_check(&spec, rank, seed_b, seed_rhs, tol)?;
            let pair = perturbed_pair(&spec, rank, seed_b)?;
            let block_bound = jordan_block_bound_check(&pair.c, spec.distinct(), &opts)?;
            let terminated = rep.iters_a.is_some_and(|k| k <= spec.distinct());
            let is_exact = rep.iters_a == Some(spec.distinct());
            let pass = rep.pass && block_bound && terminated;
            let row = format!(
                "{i},{},{},{rank},{},{},{},{is_exact},{block_bound},{pass},\n",
                spec.n(),
                spec.distinct(),
                opt(rep.iters_a),
                opt(rep.iters_c),
                opt(rep.ratio)
            );
            Ok((spec, row, pass, is_exact))
        })();
        match trial {
            Ok((_, row, pass, is_exact)) => {
                tally.record(Some(pass));
                exact += usize::from(is_exact);
                csv += &row;
            }
            Err(e) => {
                tally.record(None);
                csv += &format!("{i},,,{rank},,,,,,false,{}\n", csv_field(&e.to_string()));
            }
        }
    }
    let bound_inputs_value = match &cfg.spec {
        Some(s) => bound_inputs(s.distinct(), 0, rank),
        None => json!({ "perTrial": true, "columns": ["distinctA", "rank"] }),
    };
    Ok(Report {
        verdict: tally.verdict(true),
        tally,
        bound_inputs: bound_inputs_value,
        details: json!({ "gmresTol": tol, "exactTermination": exact }),
        csv,
        extra_files: Vec::new(),
    })
}

fn run_deflate(cfg: &ExperimentConfig) -> Result<Report, CliError> {
    let tol = cfg.gmres_tol.unwrap_or(DEFLATION_GMRES_TOL);
    let problem = KktProblem::default_toy();
    let newton = NewtonOptions::default();
    let search = deflated_search(
        &problem,
        &problem.default_guess(),
        DEFLATE_MAX_ROOTS,
        DEFAULT_POWER,
        &newton,
    )?;
    let roots = search.states();
    let n = problem.dim();

    let mut csv = format!("{},distinctA,error\n", DeflationDoublingReport::CSV_HEADER);
    let mut tally = Tally::default();
    let mut max_distinct = 0;
    if let Some(root) = roots.first() {
        for i in 0..cfg.trials {
            let mut r = rng::trial_rng(cfg.seed, i as u64);
            let u = rng::normal_vector(&mut r, n);
            let rhs = rng::normal_complex_vector(&mut r, n);
            let outcome = deflation_doubling_check(&problem, &u, root, &rhs, tol).and_then(|rep| {
                let j = problem.jacobian(&u);
                let p = schur_preconditioner(&j, problem.block_sizes())?;
                Ok((rep, preconditioned_spectrum_check(&j, &p)?.distinct))
            });
            match outcome {
                Ok((rep, distinct)) => {
                    max_distinct = max_distinct.max(distinct);
                    tally.record(Some(rep.pass && rep.rank_one));
                    csv += &format!("{},{distinct},\n", rep.csv_row(i));
                }
                Err(e) => {
                    tally.record(None);
                    csv += &format!("{i},,,,,,,false,,{}\n", csv_field(&e.to_string()));
                }
            }
        }
    }
    let enough_roots = roots.len() >= 2;
    Ok(Report {
        verdict: tally.verdict(enough_roots),
        tally,
        bound_inputs: bound_inputs(max_distinct, 0, 1),
        details: json!({
            "rootsFound": roots.len(),
            "searchStopped": search.stopped,
            "power": DEFAULT_POWER,
            "shifted": true,
            "newton": newton,
            "gmresTol": tol,
        }),
        csv,
        extra_files: vec![
            ("problem.json", problem.to_json() + "\n"),
            (
                "roots.json",
                serde_json::to_string_pretty(&search).expect("roots serialize") + "\n",
            ),
        ],
    })
}

fn run_tightness(cfg: &ExperimentConfig) -> Result<Report, CliError> {
    let max_k = cfg.k.unwrap_or(crate::config::DEFAULT_MAX_K);
    let mut csv = String::from("k,seed,measured,expected,bound,attained,withinBound,error\n");
    let mut tally = Tally::default();
    let mut per_k = Vec::new();
    let mut shares_ok = true;
    for k in 1..=max_k {
        let mut attained = 0usize;
        let mut within = 0usize;
        for i in 0..cfg.trials {
            let seed = rng::derive_seed(cfg.seed, ((k as u64) << 32) | i as u64);
            match measure_tightness_with(k, seed, cfg.cluster_tol) {
                Ok(rep) => {
                    attained += usize::from(rep.attained);
                    within += usize::from(rep.within_bound);
                    tally.record(Some(rep.within_bound));
                    csv += &format!(
                        "{k},{seed},{},{},{},{},{},\n",
                        rep.measured, rep.expected, rep.bound, rep.attained, rep.within_bound
                    );
                }
                Err(e) => {
                    tally.record(None);
                    csv += &format!("{k},{seed},,,,,false,{}\n", csv_field(&e.to_string()));
                }
            }
        }
        let share = attained as f64 / cfg.trials as f64;
        shares_ok &= share >= TIGHTNESS_ATTAIN_SHARE;
        per_k.push(json!({
            "k": k,
            "attained": attained,
            "withinBound": within,
            "trials": cfg.trials,
            "attainedShare": share,
            "boundInputs": bound_inputs(k, 0, 1),
        }));
    }
    Ok(Report {
        verdict: tally.verdict(shares_ok),
        tally,
        bound_inputs: json!({ "perK": true, "defectA": 0, "rank": 1 }),
        details: json!({ "requiredAttainedShare": TIGHTNESS_ATTAIN_SHARE, "perK": per_k }),
        csv,
        extra_files: Vec::new(),
    })
}
