//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line.
//!
//! Run with `cargo test --test acceptance -- --nocapture` to see the report.

use std::time::{Duration, Instant};

use proptest::prelude::*;
use proptest::test_runner::{Config as PropConfig, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use smart_exam::effect::{bin, normalize, EffectEstimates};
use smart_exam::estimate::{asymptotic_variance, dtr_covariance, weight, TheoreticalMoments};
use smart_exam::harness::{run_replicate_results, run_replicates, sample_sd, MetricSet};
use smart_exam::market::{clear_market, MarketInputs, MarketState};
use smart_exam::ols::{least_squares, Matrix};
use smart_exam::rng::stream;
use smart_exam::sim::{
    adhd_features, adhd_model, gen_trial, simulate_trial, table1_features, table1_model,
    AdhdScenario, Association, ScenarioConfig,
};
use smart_exam::trial::{realize_capacities, Capacities, DesignSpec, Dtr};

struct Outcome {
    pass: bool,
    detail: String,
}

fn report(id: u32, title: &str, limit: Option<Duration>, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let out = f();
    let elapsed = start.elapsed();
    let in_time = limit.is_none_or(|l| elapsed <= l);
    let pass = out.pass && in_time;
    let limit_text = limit.map_or(String::new(), |l| format!(" (limit {:.0} s)", l.as_secs_f64()));
    println!(
        "criterion {id} [{}] {title}: {}; runtime {:.2} s{limit_text}",
        if pass { "PASS" } else { "FAIL" },
        out.detail,
        elapsed.as_secs_f64(),
    );
    pass
}

fn within(x: f64, target: f64, tol: f64) -> bool {
    (x - target).abs() <= tol
}

fn table1_config(design: DesignSpec, n: usize, reps: usize, seed: u64) -> ScenarioConfig {
    ScenarioConfig {
        model: table1_model(Association::Negative),
        design,
        n,
        n_pilot: 200,
        features: table1_features(),
        reps,
        seed,
    }
}

// ---------------------------------------------------------------------------
// 1. homogeneous inputs reduce to the balanced probability

fn homogeneous_reduction() -> Outcome {
    let mut worst = 0.0_f64;
    let mut cases = 0;
    for c in [0.5, 0.6, 0.7] {
        for n in [10usize, 99, 100] {
            let caps = realize_capacities(c, n).unwrap();
            for lambda in [0u8, 1] {
                for (eps, zeta) in [(0.0, 0.0), (0.1, 1.3), (0.3, -0.7)] {
                    let inputs = MarketInputs::from_design(
                        &DesignSpec::exam(c, eps, -1.0),
                        vec![lambda; n],
                        vec![zeta; n],
                        caps,
                    );
                    let state = clear_market(&inputs).unwrap();
                    let expect = caps.plus as f64 / n as f64;
                    for i in 0..n {
                        worst = worst.max((state.p_plus(i) - expect).abs());
                    }
                    cases += 1;
                }
            }
        }
    }
    Outcome {
        pass: worst <= 1e-9,
        detail: format!("{cases} markets, max |p - C/N| = {worst:.2e} (tol 1e-9)"),
    }
}

// ---------------------------------------------------------------------------
// 2. market clearing on random instances, and beta against a grid oracle

/// Independent evaluation of the clearing error at `beta`.
fn oracle_error(lambdas: &[u8], zetas: &[f64], caps: Capacities, eps: f64, eta: f64, m: f64, beta: f64) -> f64 {
    let n = lambdas.len();
    let demand_plus = lambdas.iter().filter(|&&l| l == 1).count();
    let a2e: i8 = if demand_plus >= caps.plus { 1 } else { -1 };
    let cap_e = if a2e == 1 { caps.plus } else { caps.minus } as f64;
    let p0 = cap_e / n as f64;
    let raw: Vec<f64> = lambdas
        .iter()
        .zip(zetas)
        .map(|(&l, &z)| {
            let wants = (l == 1) == (a2e == 1);
            let price = eta * z + beta;
            if !wants {
                0.0
            } else if price <= 0.0 {
                1.0
            } else {
                (m / price).min(1.0)
            }
        })
        .collect();
    let mut q = 0.0_f64;
    for &p in &raw {
        if p < eps {
            q = q.max((eps - p) / (p0 - p));
        } else if p > 1.0 - eps {
            q = q.max((p - (1.0 - eps)) / (p - p0));
        }
    }
    let total: f64 = raw.iter().map(|p| (1.0 - q) * p + q * p0).sum();
    let de = total - cap_e;
    2.0 * de * de / n as f64
}

fn random_instance(rng: &mut ChaCha8Rng, n: usize) -> (Vec<u8>, Vec<f64>, DesignSpec) {
    let c = [0.5, 0.6, 0.7][rng.random_range(0..3)];
    let eps = [0.0, 0.1, 0.2, 0.3][rng.random_range(0..4)];
    let eta = -rng.random_range(0.1..=1.0);
    let rate = rng.random_range(0.1..0.9);
    let lambdas: Vec<u8> = (0..n).map(|_| u8::from(rng.random::<f64>() < rate)).collect();
    let raw: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
    (lambdas, raw, DesignSpec::exam(c, eps, eta))
}

fn market_clearing() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2002);
    let mut failures = Vec::new();
    for k in 0..200 {
        let n = 100;
        let (lambdas, raw, spec) = random_instance(&mut rng, n);
        let caps = realize_capacities(spec.capacity_fraction.a1_plus, n).unwrap();
        let zetas = EffectEstimates::from_raw(raw, 5).binned;
        let state: MarketState =
            match clear_market(&MarketInputs::from_design(&spec, lambdas.clone(), zetas.clone(), caps)) {
                Ok(s) => s,
                Err(e) => {
                    failures.push(format!("instance {k}: {e}"));
                    continue;
                }
            };
        let band = state
            .p_final
            .iter()
            .all(|&p| p >= spec.epsilon - 1e-12 && p <= 1.0 - spec.epsilon + 1e-12);
        let mut equal = true;
        for i in 0..n {
            for j in 0..n {
                if lambdas[i] == lambdas[j] && zetas[i] == zetas[j] && state.p_final[i] != state.p_final[j] {
                    equal = false;
                }
            }
        }
        if state.error > state.kappa_used || !band || !equal {
            failures.push(format!(
                "instance {k}: error {} kappa {} band {band} equal {equal}",
                state.error, state.kappa_used
            ));
        }
    }

    let mut worst_gap = 0.0_f64;
    for k in 0..20 {
        let n = 10;
        let (lambdas, raw, mut spec) = random_instance(&mut rng, n);
        spec.kappa0 = 1e-14;
        spec.max_iter_m = 200_000;
        let caps = realize_capacities(spec.capacity_fraction.a1_plus, n).unwrap();
        let zetas = EffectEstimates::from_raw(raw, 5).binned;
        let state = match clear_market(&MarketInputs::from_design(&spec, lambdas.clone(), zetas.clone(), caps)) {
            Ok(s) => s,
            Err(e) => {
                failures.push(format!("small instance {k}: {e}"));
                continue;
            }
        };
        // grid over beta, then the set of near-minimizers
        let zmax = zetas.iter().fold(0.0_f64, |a, z| a.max(z.abs()));
        let (lo, hi) = (-zmax - 1.0, zmax + 20.0);
        let step = 1e-4;
        let steps = ((hi - lo) / step) as usize;
        let errs: Vec<(f64, f64)> = (0..=steps)
            .map(|s| {
                let b = lo + s as f64 * step;
                (b, oracle_error(&lambdas, &zetas, caps, spec.epsilon, spec.eta, spec.budget_m, b))
            })
            .collect();
        let best = errs.iter().fold(f64::INFINITY, |a, e| a.min(e.1));
        let gap = errs
            .iter()
            .filter(|e| e.1 <= best + 1e-9)
            .map(|e| (e.0 - state.beta).abs())
            .fold(f64::INFINITY, f64::min);
        worst_gap = worst_gap.max(gap);
        if gap > 1e-3 {
            failures.push(format!("small instance {k}: beta {} is {gap:.2e} from the oracle minimizers", state.beta));
        }
    }
    Outcome {
        pass: failures.is_empty(),
        detail: format!(
            "200 instances N=100 B=5 and 20 instances N=10; worst beta gap {worst_gap:.2e} (tol 1e-3); {} failures{}",
            failures.len(),
            failures.first().map_or(String::new(), |f| format!(", first: {f}"))
        ),
    }
}

// ---------------------------------------------------------------------------
// 3. IPW on a large balanced trial

const TABLE1_TRUTH: [f64; 4] = [2.25, 2.75, 1.75, 3.25];

fn ipw_large_trial() -> Outcome {
    let cfg = table1_config(DesignSpec::smart(0.5), 100_000, 1, 3003);
    let data = gen_trial(&cfg, None, &mut stream(cfg.seed, 0)).unwrap();
    let est = smart_exam::estimate::estimate_all(&data).unwrap();
    let mut ok = true;
    let mut parts = Vec::new();
    for (e, t) in est.iter().zip(TABLE1_TRUTH) {
        ok &= within(e.mean, t, 0.05);
        parts.push(format!("{} {:.3} (truth {t})", e.dtr, e.mean));
    }
    Outcome {
        pass: ok,
        detail: format!("{} (tol 0.05)", parts.join(", ")),
    }
}

// ---------------------------------------------------------------------------
// 4. balanced SMART operating characteristics at N = 200

fn smart_row(m: &MetricSet) -> Outcome {
    let d = &m.per_dtr[Dtr::new(1, 1).unwrap().index()];
    let checks = [
        within(d.mean_estimate.value, 3.28, 0.06),
        within(d.empirical_se, 0.382, 0.06),
        within(d.selection_prob.value, 0.824, 0.05),
        within(d.mean_count.value, 75.2, 2.0),
    ];
    Outcome {
        pass: checks.iter().all(|&c| c),
        detail: format!(
            "E[mu(1,1)] {:.3} (3.28 +- 0.06), SE {:.3} (0.382 +- 0.06), Pr(select) {:.3} (0.824 +- 0.05), mean count {:.1} (75.2 +- 2)",
            d.mean_estimate.value, d.empirical_se, d.selection_prob.value, d.mean_count.value
        ),
    }
}

// ---------------------------------------------------------------------------
// 5. SMART-EXAM welfare against the matched SMART

fn exam_welfare(exam: &MetricSet, smart: &MetricSet) -> Outcome {
    let d = &exam.per_dtr[Dtr::new(1, 1).unwrap().index()];
    let u = exam.mean_utility;
    let checks = [
        within(d.selection_prob.value, 0.742, 0.06),
        u.value > 0.55 + 3.0 * u.mc_se,
        exam.mean_outcome_nonresp.value > smart.mean_outcome_nonresp.value,
    ];
    Outcome {
        pass: checks.iter().all(|&c| c),
        detail: format!(
            "Pr(select (1,1)) {:.3} (0.742 +- 0.06), E[u] {:.3} (> 0.55 + 3 x {:.4}), E[Y] {:.3} vs SMART {:.3}, {} failed reps",
            d.selection_prob.value,
            u.value,
            u.mc_se,
            exam.mean_outcome_nonresp.value,
            smart.mean_outcome_nonresp.value,
            exam.reps_failed
        ),
    }
}

// ---------------------------------------------------------------------------
// 6. ADHD application, scenario S1

fn adhd_cells() -> Vec<(f64, MetricSet)> {
    let base = ScenarioConfig {
        model: adhd_model(AdhdScenario::S1),
        design: DesignSpec::smart(0.5),
        n: 150,
        n_pilot: 150,
        features: adhd_features(),
        reps: 500,
        seed: 6006,
    };
    let mut out = vec![(0.0, run_replicates(&base).unwrap())];
    for eps in [0.1, 0.2, 0.3] {
        let cfg = ScenarioConfig {
            design: DesignSpec::exam(0.5, eps, -1.0),
            ..base.clone()
        };
        out.push((eps, run_replicates(&cfg).unwrap()));
    }
    out
}

fn adhd_application() -> Outcome {
    let cells = adhd_cells();
    let (smart, e1, e2, e3) = (&cells[0].1, &cells[1].1, &cells[2].1, &cells[3].1);
    let pc = |m: &MetricSet| m.prob_correct_selection.value;
    let u = |m: &MetricSet| m.mean_utility.value;
    let y = |m: &MetricSet| m.mean_outcome_nonresp.value;
    let numeric = [
        within(pc(smart), 0.984, 0.02),
        within(u(smart), 0.500, 0.01),
        within(y(smart), 3.002, 0.06),
        within(pc(e1), 0.922, 0.04),
        within(u(e1), 0.817, 0.03),
        within(y(e1), 3.263, 0.06),
        within(pc(e3), 0.984, 0.02),
        within(u(e3), 0.664, 0.03),
    ];
    let numeric_ok = numeric.iter().all(|&c| c);
    let exams = [e1, e2, e3];
    let ordinal_ok = exams.windows(2).all(|w| {
        u(w[1]) < u(w[0]) && y(w[1]) < y(w[0]) && pc(w[1]) >= pc(w[0])
    }) && exams.iter().all(|m| u(m) > u(smart) && y(m) > y(smart));
    let table: Vec<String> = cells
        .iter()
        .map(|(eps, m)| {
            let name = if *eps == 0.0 { "SMART".to_string() } else { format!("EXAM eps={eps}") };
            format!("{name}: Pr {:.3} u {:.3} Y {:.3}", pc(m), u(m), y(m))
        })
        .collect();
    Outcome {
        pass: numeric_ok || ordinal_ok,
        detail: format!(
            "{}; numeric targets {}, ordinal pattern {}",
            table.join(" | "),
            if numeric_ok { "met" } else { "missed" },
            if ordinal_ok { "holds" } else { "broken" }
        ),
    }
}

// ---------------------------------------------------------------------------
// 7. large-sample variance and covariance

fn variance_property() -> Outcome {
    let n = 2000;
    let cfg = table1_config(DesignSpec::smart(0.5), n, 2000, 7007);
    let (results, failed) = run_replicate_results(&cfg).unwrap();
    let i11 = Dtr::new(1, 1).unwrap().index();
    let i1m = Dtr::new(1, -1).unwrap().index();
    let a: Vec<f64> = results.iter().map(|r| r.estimates[i11].mean).collect();
    let b: Vec<f64> = results.iter().map(|r| r.estimates[i1m].mean).collect();
    let var_emp = sample_sd(&a).powi(2);
    let ma = a.iter().sum::<f64>() / a.len() as f64;
    let mb = b.iter().sum::<f64>() / b.len() as f64;
    let cov_emp = a.iter().zip(&b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / (a.len() - 1) as f64;

    // Two-covariate model moments under A1 = 1: responders N(4, 9); non-responders under
    // A2 = +1 have mean 2.5 and variance 0.25 + 0.25 + 9, under A2 = -1 mean -0.5.
    let moments = |d2: i8, mu_nr: f64| TheoreticalMoments {
        dtr: Dtr::new(1, d2).unwrap(),
        p1: 0.5,
        pi_resp: 0.5,
        group_probs: vec![1.0],
        p2_by_group: vec![0.5],
        mu_resp: 4.0,
        sigma2_resp: 9.0,
        mu_by_group: vec![mu_nr],
        sigma2_by_group: vec![9.5],
    };
    let m11 = moments(1, 2.5);
    let m1m = moments(-1, -0.5);
    let var_theory = asymptotic_variance(&m11, 3.25).unwrap() / n as f64;
    let cov_theory = dtr_covariance(&m11, &m1m, 3.25, 1.75).unwrap() / n as f64;
    let rv = (var_emp - var_theory).abs() / var_theory;
    let rc = (cov_theory - cov_emp).abs() / cov_emp.abs();
    Outcome {
        pass: rv <= 0.10 && rc <= 0.15 && failed == 0,
        detail: format!(
            "Var {var_emp:.5} vs {var_theory:.5} (rel {rv:.3}, tol 0.10); Cov {cov_emp:.5} vs {cov_theory:.5} (rel {rc:.3}, tol 0.15)"
        ),
    }
}

// ---------------------------------------------------------------------------
// 8. consistency under SMART-EXAM allocation

fn consistency() -> Outcome {
    let i11 = Dtr::new(1, 1).unwrap().index();
    let mut rows = Vec::new();
    for (k, n) in [500usize, 2000, 8000].into_iter().enumerate() {
        let cfg = table1_config(DesignSpec::exam(0.5, 0.1, -1.0), n, 400, 8008 + k as u64);
        let m = run_replicates(&cfg).unwrap();
        rows.push((n, m.per_dtr[i11].bias));
    }
    let mono = rows
        .windows(2)
        .all(|w| w[1].1.value.abs() <= w[0].1.value.abs() + 2.0 * w[1].1.mc_se.hypot(w[0].1.mc_se));
    let last = rows[2].1;
    let near_zero = last.value.abs() <= 2.0 * last.mc_se;
    Outcome {
        pass: mono && near_zero,
        detail: format!(
            "{}; monotone within 2 MC SE: {mono}; |bias| at N=8000 within 2 MC SE of 0: {near_zero}",
            rows.iter()
                .map(|(n, b)| format!("N={n} bias {:+.4} (MC SE {:.4})", b.value, b.mc_se))
                .collect::<Vec<_>>()
                .join(", ")
        ),
    }
}

// ---------------------------------------------------------------------------
// 9. property-based invariants

fn run_prop<S: Strategy>(cases: u32, strategy: S, test: impl Fn(S::Value) -> Result<(), TestCaseError>) -> Result<(), String> {
    let mut runner = TestRunner::new_with_rng(
        PropConfig {
            cases,
            failure_persistence: None,
            ..PropConfig::default()
        },
        proptest::test_runner::TestRng::deterministic_rng(proptest::test_runner::RngAlgorithm::ChaCha),
    );
    runner.run(&strategy, test).map_err(|e| e.to_string())
}

fn invariants() -> Outcome {
    let mut failures: Vec<String> = Vec::new();
    let mut record = |name: &str, r: Result<(), String>| {
        if let Err(e) = r {
            failures.push(format!("{name}: {e}"));
        }
    };

    // mean IPW weight tends to one
    let cfg = table1_config(DesignSpec::exam(0.5, 0.1, -1.0), 20_000, 1, 9009);
    let data = simulate_trial(&cfg, &mut stream(cfg.seed, 0)).unwrap().data;
    let mut worst_w = 0.0_f64;
    for d in Dtr::ALL {
        let mean_w = data.rows.iter().map(|t| weight(t, d)).sum::<f64>() / data.len() as f64;
        worst_w = worst_w.max((mean_w - 1.0).abs());
    }
    record(
        "mean weight",
        if worst_w < 0.05 { Ok(()) } else { Err(format!("max |mean W - 1| = {worst_w}")) },
    );

    // weight is positive exactly when the trajectory is consistent
    let consistent = data.rows.iter().all(|t| {
        Dtr::ALL
            .iter()
            .all(|&d| (weight(t, d) > 0.0) == smart_exam::trial::consistent_with(t, d))
    });
    let responders_double = data
        .rows
        .iter()
        .filter(|t| t.r)
        .all(|t| Dtr::ALL.iter().filter(|&&d| weight(t, d) > 0.0).count() == 2);
    record(
        "weight identities",
        if consistent && responders_double { Ok(()) } else { Err("weight/consistency mismatch".into()) },
    );

    record(
        "normalization",
        run_prop(256, proptest::collection::vec(-1e3f64..1e3, 2..200), |xs| {
            let z = normalize(&xs);
            let n = z.len() as f64;
            let mean = z.iter().sum::<f64>() / n;
            let var = z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
            prop_assert!(mean.abs() < 1e-9);
            prop_assert!(var < 1e-9 || (var - 1.0).abs() < 1e-9);
            Ok(())
        }),
    );

    record(
        "binning",
        run_prop(256, (proptest::collection::vec(-5.0f64..5.0, 1..150), 1usize..8), |(xs, b)| {
            let out = bin(&xs, b);
            prop_assert!(out.means.len() <= b);
            prop_assert!(out.means.windows(2).all(|w| w[0] < w[1]));
            for (x, v) in xs.iter().zip(&out.values) {
                prop_assert!(out.means.contains(v));
                for (y, w) in xs.iter().zip(&out.values) {
                    if x < y {
                        prop_assert!(v <= w);
                    }
                }
            }
            let again = bin(&out.values, b);
            prop_assert_eq!(again.values, out.values);
            Ok(())
        }),
    );

    record(
        "ols orthogonality",
        run_prop(
            256,
            proptest::collection::vec((-3.0f64..3.0, -3.0f64..3.0, -10.0f64..10.0), 8..80),
            |rows| {
                let x = Matrix::from_rows(&rows.iter().map(|(a, b, _)| vec![1.0, *a, *b, a * b]).collect::<Vec<_>>());
                let y: Vec<f64> = rows.iter().map(|r| r.2).collect();
                let names: Vec<String> = (0..4).map(|i| format!("c{i}")).collect();
                if let Ok(theta) = least_squares(&x, &y, &names) {
                    let fit = x.mul_vec(&theta);
                    let resid: Vec<f64> = y.iter().zip(&fit).map(|(a, b)| a - b).collect();
                    let ynorm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
                    for g in x.t_mul_vec(&resid) {
                        prop_assert!(g.abs() <= 1e-8 * ynorm + 1e-12);
                    }
                }
                Ok(())
            },
        ),
    );

    let small = table1_config(DesignSpec::exam(0.5, 0.2, -1.0), 200, 8, 99);
    let first = run_replicates(&small).unwrap();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(2).build().unwrap();
    let second = pool.install(|| run_replicates(&small)).unwrap();
    let t1 = simulate_trial(&small, &mut stream(5, 5)).unwrap();
    let t2 = simulate_trial(&small, &mut stream(5, 5)).unwrap();
    record(
        "determinism",
        if first == second && t1 == t2 { Ok(()) } else { Err("reruns differ".into()) },
    );

    Outcome {
        pass: failures.is_empty(),
        detail: if failures.is_empty() {
            format!("mean weight within {worst_w:.4} of 1, weight identities, normalization, binning, OLS orthogonality, determinism all hold")
        } else {
            failures.join("; ")
        },
    }
}

fn main() {
    let secs = Duration::from_secs;
    let mut results = Vec::new();
    results.push(report(1, "homogeneous reduction", Some(secs(1)), homogeneous_reduction));
    results.push(report(2, "market clearing", Some(secs(30)), market_clearing));
    results.push(report(3, "IPW on N=100000 SMART", Some(secs(30)), ipw_large_trial));

    let mut smart = None;
    results.push(report(4, "SMART operating characteristics", Some(secs(120)), || {
        let m = run_replicates(&table1_config(DesignSpec::smart(0.5), 200, 500, 4004)).unwrap();
        let out = smart_row(&m);
        smart = Some(m);
        out
    }));
    let smart = smart.expect("criterion 4 ran");
    results.push(report(5, "SMART-EXAM welfare", Some(secs(300)), || {
        let exam = run_replicates(&table1_config(DesignSpec::exam(0.5, 0.1, -1.0), 200, 500, 5005)).unwrap();
        exam_welfare(&exam, &smart)
    }));
    results.push(report(6, "ADHD application S1", Some(secs(300)), adhd_application));
    results.push(report(7, "asymptotic variance and covariance", Some(secs(300)), variance_property));
    results.push(report(8, "consistency under SMART-EXAM", None, consistency));
    results.push(report(9, "invariant suite", None, invariants));

    let failed: Vec<usize> = results
        .iter()
        .enumerate()
        .filter(|(_, &p)| !p)
        .map(|(i, _)| i + 1)
        .collect();
    if !failed.is_empty() {
        eprintln!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
    println!("all {} criteria passed", results.len());
}
