//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

use std::process::ExitCode;
use std::time::Instant;

use lro::estimation::active_set_oracle;
use lro::hypothesis::DEFAULT_LAMBDAS;
use lro::simulation::{estimate_size_power, Design, Scenario, Statistic};
use lro::{
    build_design_matrices, fisher_information, h_matrix, hellinger_sq, mle_null, mle_restricted, weights_closed_form,
    weights_monte_carlo, wilcoxon_midrank, Analysis, AnalysisOptions, ContingencyTable, PowerDivergenceIndex, Sided,
    SolverOptions, ThetaVector,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const T_VALUES: [f64; 9] = [6.5323, 6.3215, 6.1562, 6.0323, 5.9261, 5.8965, 5.8803, 5.8965, 6.0244];
const T_PVALUES: [f64; 9] = [0.0175, 0.0194, 0.0211, 0.0225, 0.0238, 0.0241, 0.0243, 0.0241, 0.0226];
const S_VALUES: [f64; 9] = [6.5277, 6.3189, 6.1551, 6.0323, 5.9270, 5.8977, 5.8815, 5.8977, 6.0244];
const S_PVALUES: [f64; 9] = [0.0175, 0.0195, 0.0212, 0.0225, 0.0238, 0.0241, 0.0243, 0.0241, 0.0226];

fn example() -> ContingencyTable {
    ContingencyTable::new(vec![11, 8, 8, 5], vec![6, 4, 10, 12]).unwrap()
}

struct Outcome {
    ok: bool,
    detail: String,
}

fn outcome(problems: Vec<String>, summary: String) -> Outcome {
    if problems.is_empty() {
        Outcome { ok: true, detail: summary }
    } else {
        Outcome {
            ok: false,
            detail: format!("{summary}; {}", problems.join("; ")),
        }
    }
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let a = Analysis::new(&example(), &AnalysisOptions::default()).unwrap();
    let mut problems = Vec::new();
    let mut worst_stat: f64 = 0.0;
    let mut worst_p: f64 = 0.0;
    for (i, &l) in DEFAULT_LAMBDAS.iter().enumerate() {
        let l = PowerDivergenceIndex(l);
        for (name, stat, want, want_p) in [
            ("T", a.t_statistic(l), T_VALUES[i], T_PVALUES[i]),
            ("S", a.s_statistic(l), S_VALUES[i], S_PVALUES[i]),
        ] {
            let p = a.pvalue(stat);
            worst_stat = worst_stat.max((stat - want).abs());
            worst_p = worst_p.max((p - want_p).abs());
            if (stat - want).abs() > 1e-3 || (p - want_p).abs() > 5e-4 {
                problems.push(format!("{name}_{} = {stat:.4} (p {p:.4})", l.0));
            }
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    if elapsed >= 1.0 {
        problems.push(format!("took {elapsed:.3}s"));
    }
    outcome(
        problems,
        format!("max |stat err| {worst_stat:.1e}, max |p err| {worst_p:.1e}, {elapsed:.3}s"),
    )
}

fn criterion_2() -> Outcome {
    let t = example();
    let opts = SolverOptions::default();
    let restricted = mle_restricted(&t, &opts).unwrap();
    let null = mle_null(&t, &opts).unwrap();
    let mut problems = Vec::new();
    let theta = [-0.7164, -1.0647, -0.1823, 1.5173, 1.5173, 0.6523];
    for (a, b) in restricted.theta.to_vec().iter().zip(theta) {
        if (a - b).abs() > 1e-3 {
            problems.push(format!("theta component {a:.4} vs {b}"));
        }
    }
    let p_til = [0.1740, 0.1228, 0.1250, 0.0781, 0.0916, 0.0647, 0.1563, 0.1875];
    let p_hat = [0.1328, 0.0938, 0.1406, 0.1328, 0.1328, 0.0938, 0.1406, 0.1328];
    for (a, b) in restricted.p.as_slice().iter().zip(p_til) {
        if (a - b).abs() > 5e-4 {
            problems.push(format!("restricted p {a:.4} vs {b}"));
        }
    }
    for (a, b) in null.p.as_slice().iter().zip(p_hat) {
        if (a - b).abs() > 5e-4 {
            problems.push(format!("null p {a:.4} vs {b}"));
        }
    }
    let a = Analysis::new(&t, &AnalysisOptions::default()).unwrap();
    for (x, y) in a.weights.w.iter().zip([0.0381, 0.2420, 0.4618, 0.2580]) {
        if (x - y).abs() > 1e-3 {
            problems.push(format!("weight {x:.4} vs {y}"));
        }
    }
    outcome(problems, format!("weights {:.4?}", a.weights.w))
}

fn criterion_3() -> Outcome {
    let r = wilcoxon_midrank(&example(), Sided::One).unwrap();
    let p = r.pvalue.unwrap();
    let mut problems = Vec::new();
    if r.statistic != 875.0 {
        problems.push(format!("W = {}", r.statistic));
    }
    if (p - 0.01094).abs() > 2e-4 {
        problems.push(format!("p = {p:.5}"));
    }
    outcome(problems, format!("W = {}, one-sided p = {p:.5}", r.statistic))
}

fn random_table(rng: &mut ChaCha8Rng, j: usize, lo: u64, hi: u64) -> ContingencyTable {
    loop {
        let r1 = (0..j).map(|_| rng.random_range(lo..=hi)).collect();
        let r2 = (0..j).map(|_| rng.random_range(lo..=hi)).collect();
        if let Ok(t) = ContingencyTable::new(r1, r2) {
            return t;
        }
    }
}

fn empirical_log_odds(t: &ContingencyTable, eps: f64) -> Vec<f64> {
    let j = t.categories();
    let c = t.smoothed_counts(eps);
    (0..j - 1)
        .map(|m| (c[m] * c[j + m + 1] / (c[j + m] * c[m + 1])).ln())
        .collect()
}

fn criterion_4() -> Outcome {
    let start = Instant::now();
    let opts = SolverOptions::default();
    let mut rng = ChaCha8Rng::seed_from_u64(20_240_404);
    let mut problems = Vec::new();
    let mut compared = 0;
    let mut worst: f64 = 0.0;
    for j in 2..=4 {
        for _ in 0..200 {
            let t = random_table(&mut rng, j, 0, 30);
            let fit = mle_restricted(&t, &opts).unwrap();
            let oracle = active_set_oracle(&t, &opts).unwrap();
            let gap = (fit.loglik - oracle.loglik).abs();
            worst = worst.max(gap);
            if !fit.converged || gap > 1e-6 {
                problems.push(format!("{:?}: loglik gap {gap:.2e}", t.row(0)));
            }
            if empirical_log_odds(&t, opts.zero_cell_eps).iter().all(|x| x.abs() >= 1e-3) {
                compared += 1;
                if fit.active_set != oracle.active_set {
                    problems.push(format!(
                        "{:?}/{:?}: active set {:?} vs oracle {:?}",
                        t.row(0),
                        t.row(1),
                        fit.active_set,
                        oracle.active_set
                    ));
                }
            }
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    if elapsed >= 60.0 {
        problems.push(format!("took {elapsed:.1}s"));
    }
    outcome(
        problems,
        format!("600 tables, max loglik gap {worst:.1e}, {compared} active sets compared, {elapsed:.2}s"),
    )
}

fn random_pi(rng: &mut ChaCha8Rng, j: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..j).map(|_| rng.random_range(0.05..1.0)).collect();
    let s: f64 = raw.iter().sum();
    raw.iter().map(|x| x / s).collect()
}

fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut problems = Vec::new();
    let mut worst_identity: f64 = 0.0;
    for draw in 0..100 {
        let j = 2 + draw % 4;
        let pi = random_pi(&mut rng, j);
        let nu1 = rng.random_range(0.1..0.9);
        let nu2 = 1.0 - nu1;
        let theta2 = (0..j - 1).map(|m| (pi[m] / pi[j - 1]).ln()).collect();
        let theta = ThetaVector::new(theta2, vec![0.0; j - 1]).unwrap();
        let f = fisher_information(&theta, nu1, nu2).unwrap();
        let r = build_design_matrices(j).unwrap().r;
        let projected = &r * f.try_inverse().unwrap() * r.transpose();
        let h = h_matrix(&pi, nu1, nu2).unwrap();
        let err = (projected - &h.h).amax();
        worst_identity = worst_identity.max(err);
        if err > 1e-8 {
            problems.push(format!("identity error {err:.2e} at J = {j}"));
        }
        if j <= 4 {
            let w = weights_closed_form(&h).unwrap();
            if (w.w.iter().sum::<f64>() - 1.0).abs() > 1e-10 || w.w.iter().any(|&x| x < 0.0) {
                problems.push(format!("bad closed-form weights {:?}", w.w));
            }
            if j == 2 && w.w != [0.5, 0.5] {
                problems.push(format!("J = 2 weights {:?}", w.w));
            }
            if j == 3 && w.w[1] != 0.5 {
                problems.push(format!("J = 3 middle weight {}", w.w[1]));
            }
        }
    }
    let mut worst_mc: f64 = 0.0;
    let cases = [
        (vec![0.2, 0.5, 0.3], 0.5),
        (vec![1.0 / 3.0; 3], 0.3),
        (vec![17.0 / 64.0, 12.0 / 64.0, 18.0 / 64.0, 17.0 / 64.0], 0.5),
        (vec![0.25; 4], 0.5),
        (vec![0.1, 0.4, 0.2, 0.3], 0.7),
    ];
    for (seed, (pi, nu1)) in cases.into_iter().enumerate() {
        let h = h_matrix(&pi, nu1, 1.0 - nu1).unwrap();
        let exact = weights_closed_form(&h).unwrap();
        let mc = weights_monte_carlo(&h, 1_000_000, seed as u64).unwrap();
        if (mc.w.iter().sum::<f64>() - 1.0).abs() > 1e-10 {
            problems.push("Monte Carlo weights do not sum to one".into());
        }
        for (a, b) in exact.w.iter().zip(&mc.w) {
            worst_mc = worst_mc.max((a - b).abs());
            if (a - b).abs() > 0.002 {
                problems.push(format!("closed {a:.4} vs MC {b:.4} for pi {pi:?}"));
            }
        }
    }
    outcome(
        problems,
        format!("max identity error {worst_identity:.1e}, max |closed - MC| {worst_mc:.1e}"),
    )
}

fn criterion_6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let opts = AnalysisOptions::default();
    let mut problems = Vec::new();
    let mut worst: f64 = 0.0;
    let mut worst_hel: f64 = 0.0;
    for i in 0..50 {
        let j = 2 + i % 4;
        let t = random_table(&mut rng, j, 1, 30);
        let a = Analysis::new(&t, &opts).unwrap();
        for limit in [0.0, -1.0] {
            let (t0, s0) = (a.t_statistic(limit.into()), a.s_statistic(limit.into()));
            for d in [1e-6, -1e-6] {
                let l = PowerDivergenceIndex(limit + d);
                let dt = (a.t_statistic(l) - t0).abs();
                let ds = (a.s_statistic(l) - s0).abs();
                worst = worst.max(dt).max(ds);
                if dt > 1e-4 || ds > 1e-4 {
                    problems.push(format!("jump {dt:.1e}/{ds:.1e} near {limit}"));
                }
            }
        }
        let hel = hellinger_sq(a.fit_restricted.p.as_slice(), a.fit_null.p.as_slice()).unwrap();
        let gap = (a.s_statistic((-0.5).into()) - 4.0 * t.total() as f64 * hel).abs();
        worst_hel = worst_hel.max(gap);
        if gap > 1e-10 {
            problems.push(format!("Hellinger gap {gap:.1e}"));
        }
    }
    outcome(problems, format!("max jump {worst:.1e}, max Hellinger gap {worst_hel:.1e}"))
}

fn check_rate(problems: &mut Vec<String>, label: &str, got: Option<f64>, want: f64, tol: f64) -> String {
    let got = got.unwrap_or(f64::NAN);
    if !((got - want).abs() <= tol) {
        problems.push(format!("{label} = {got:.4}, expected {want} +/- {tol}"));
    }
    format!("{label} {got:.4}")
}

fn criterion_7() -> Outcome {
    let start = Instant::now();
    let opts = AnalysisOptions::default();
    let mut problems = Vec::new();
    let mut notes = Vec::new();

    let d = Scenario::standard("D", 0.0, 25_000, 0.05, 1).unwrap();
    let stats = [Statistic::T(0.0), Statistic::S(1.0), Statistic::Wilcoxon(Sided::One)];
    let est = estimate_size_power(&d, &stats, &opts, None).unwrap();
    notes.push(check_rate(&mut problems, "D: T_0", est.rate(stats[0]), 0.0577, 0.006));
    notes.push(check_rate(&mut problems, "S_1", est.rate(stats[1]), 0.0543, 0.006));
    notes.push(check_rate(&mut problems, "W", est.rate(stats[2]), 0.0495, 0.006));

    let two_by_two = |name: &str, pi1: Vec<f64>, pi2: Vec<f64>| Scenario {
        name: name.into(),
        n1: 40,
        n2: 20,
        design: Design::Explicit { pi1, pi2 },
        reps: 100_000,
        alpha: 0.05,
        seed: 2,
    };
    let stats = [Statistic::G2, Statistic::Gbar2, Statistic::S(-0.5)];
    let size = two_by_two("size", vec![0.35, 0.65], vec![0.35, 0.65]);
    let est = estimate_size_power(&size, &stats, &opts, None).unwrap();
    notes.push(check_rate(&mut problems, "2x2 size G2", est.rate(Statistic::G2), 0.0559, 0.004));
    let power = two_by_two("power", vec![0.45, 0.55], vec![0.35, 0.65]);
    let est = estimate_size_power(&power, &stats, &opts, None).unwrap();
    notes.push(check_rate(&mut problems, "power G2", est.rate(Statistic::G2), 0.2025, 0.010));
    notes.push(check_rate(&mut problems, "Gbar2", est.rate(Statistic::Gbar2), 0.1186, 0.010));
    notes.push(check_rate(&mut problems, "S_-0.5", est.rate(Statistic::S(-0.5)), 0.2027, 0.010));

    let elapsed = start.elapsed().as_secs_f64();
    if elapsed >= 600.0 {
        problems.push(format!("took {elapsed:.0}s"));
    }
    notes.push(format!("{elapsed:.1}s"));
    outcome(problems, notes.join(", "))
}

fn criterion_8() -> Outcome {
    // seeded runs must not depend on the worker count
    let s = Scenario::standard("C", 0.5, 3000, 0.05, 8).unwrap();
    let stats = [Statistic::T(0.0), Statistic::S(2.0 / 3.0), Statistic::Wilcoxon(Sided::Two)];
    let opts = AnalysisOptions::default();
    let many = estimate_size_power(&s, &stats, &opts, None).unwrap();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let one = pool.install(|| estimate_size_power(&s, &stats, &opts, None).unwrap());
    let h = h_matrix(&[0.1, 0.2, 0.3, 0.15, 0.25], 0.5, 0.5).unwrap();
    let w1 = weights_monte_carlo(&h, 50_000, 9).unwrap();
    let w2 = pool.install(|| weights_monte_carlo(&h, 50_000, 9).unwrap());
    let mut problems = Vec::new();
    if many != one {
        problems.push("simulation depends on thread count".into());
    }
    if w1 != w2 {
        problems.push("Monte Carlo weights depend on thread count".into());
    }
    outcome(problems, "seeded results identical across thread counts, no network used".into())
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("reference table statistics and p-values", criterion_1),
        ("reference table estimates and weights", criterion_2),
        ("Wilcoxon mid-rank test", criterion_3),
        ("solver agrees with enumeration oracle", criterion_4),
        ("H identity and chi-bar weights", criterion_5),
        ("lambda-limit continuity and Hellinger identity", criterion_6),
        ("simulated sizes and powers", criterion_7),
        ("offline, seed-pinned and reproducible", criterion_8),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let o = run();
        if !o.ok {
            failed += 1;
        }
        println!(
            "criterion {}: {} {name}: {}",
            i + 1,
            if o.ok { "PASS" } else { "FAIL" },
            o.detail
        );
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
