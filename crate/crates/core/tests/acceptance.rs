use fedlin::algorithms::{
    run, AlgorithmSpec, ClientSchedule, CompressionPlan, Preset, RunConfig, Runner, StepPolicy,
};
use fedlin::compression::{top_k, SparsityLevel};
use fedlin::harness::{
    bound_for_trace, check_lower_bound, fixed_point, rounds_to_tolerance, verify_bound,
};
use fedlin::linalg::Vector;
use fedlin::objectives::{
    fedsplit_instance, identical_clients, indefinite_quadratics, random_spd_quadratics,
    rank_deficient_least_squares, synth_least_squares, two_client_scalar, FederationProblem,
    SynthConfig,
};
use fedlin::oracle::{
    fednova_scalar_error, fedprox_scalar_error, surrogate_fednova, surrogate_fedprox, TheoremId,
    FEDNOVA_SCALAR_TAUS,
};
use fedlin::rng::SeededRng;
use std::process::ExitCode;

const SEED: u64 = 7;

fn verdict(id: u32, name: &str, ok: bool, detail: &str) {
    println!(
        "{} criterion {id} ({name}): {detail}",
        if ok { "PASS" } else { "FAIL" }
    );
    assert!(ok, "criterion {id} failed");
}

fn config(
    algorithm: AlgorithmSpec,
    schedule: ClientSchedule,
    steps: StepPolicy,
    rounds: usize,
) -> RunConfig {
    RunConfig {
        algorithm,
        schedule,
        steps,
        rounds,
        initial: None,
    }
}

fn preset(p: Preset) -> StepPolicy {
    StepPolicy::Preset { preset: p }
}

fn spread(lo: usize, hi: usize, seed: u64) -> ClientSchedule {
    ClientSchedule::SeededUniformRange {
        lo,
        hi,
        seed,
        per_round: false,
    }
}

fn least_squares(alpha: f64) -> FederationProblem {
    synth_least_squares(&SynthConfig {
        m: 20,
        n_i: 500,
        d: 100,
        alpha,
        noise_std: 0.5f64.sqrt(),
        seed: SEED,
    })
    .unwrap()
}

fn error_to_optimum(problem: &FederationProblem, x: &Vector) -> f64 {
    (x - problem.x_star().unwrap()).norm()
}

fn criterion_01_surrogate_equivalence() {
    let p = two_client_scalar();
    let eta = 0.1;

    let prox = config(
        AlgorithmSpec::FedProx { beta: 0.0 },
        ClientSchedule::Uniform { h: 2 },
        StepPolicy::Uniform { eta },
        0,
    );
    let x_prox = fixed_point(&prox, &p, 100_000).unwrap();
    let prox_err = error_to_optimum(&p, &x_prox);
    let prox_formula = fedprox_scalar_error(eta, 0.0).unwrap();
    let prox_matrix = surrogate_fedprox(&p, eta, 0.0, 2).unwrap();

    let nova = config(
        AlgorithmSpec::FedNova,
        ClientSchedule::PerClient {
            taus: FEDNOVA_SCALAR_TAUS.to_vec(),
        },
        StepPolicy::Uniform { eta },
        0,
    );
    let x_nova = fixed_point(&nova, &p, 100_000).unwrap();
    let nova_err = error_to_optimum(&p, &x_nova);
    let nova_formula = fednova_scalar_error(eta).unwrap();
    let nova_matrix = surrogate_fednova(&p, eta, &FEDNOVA_SCALAR_TAUS).unwrap();

    let ok = (prox_err - prox_formula).abs() <= 1e-8
        && (prox_err - 0.569697).abs() <= 1e-6
        && (x_prox - &prox_matrix.surrogate_minimizer).norm() <= 1e-8
        && (nova_err - nova_formula).abs() <= 1e-8
        && (nova_err - 0.038635).abs() <= 1e-6
        && (x_nova - &nova_matrix.surrogate_minimizer).norm() <= 1e-8;
    verdict(
        1,
        "surrogate equivalence",
        ok,
        &format!(
            "FedProx error {prox_err:.12} vs closed form {prox_formula:.12}; FedNova tau=(3,2) error {nova_err:.12} vs closed form {nova_formula:.12}"
        ),
    );
}

fn criterion_02_speed_accuracy_resolution() {
    let p = two_client_scalar();
    let fedlin = config(
        AlgorithmSpec::fedlin_uncompressed(1),
        ClientSchedule::Uniform { h: 50 },
        preset(Preset::Thm1),
        2000,
    );
    let reached = rounds_to_tolerance(&fedlin, &p, 1e-20).unwrap();

    let eta = 1e-2;
    let mut worst_plateau_gap = 0.0_f64;
    let mut smallest_distortion = f64::INFINITY;
    let mut baselines = Vec::new();
    for beta in [0.0, 0.1] {
        let c = config(
            AlgorithmSpec::FedProx { beta },
            ClientSchedule::Uniform { h: 50 },
            StepPolicy::Uniform { eta },
            2000,
        );
        baselines.push((c, surrogate_fedprox(&p, eta, beta, 50).unwrap()));
    }
    for taus in [vec![50, 50], vec![50, 30]] {
        let oracle = surrogate_fednova(&p, eta, &taus).unwrap();
        let c = config(
            AlgorithmSpec::FedNova,
            ClientSchedule::PerClient { taus },
            StepPolicy::Uniform { eta },
            2000,
        );
        baselines.push((c, oracle));
    }
    for (c, oracle) in &baselines {
        let trace = run(c, &p).unwrap();
        let x = Vector::from_row_slice(&trace.meta.final_iterate);
        worst_plateau_gap = worst_plateau_gap.max((x - &oracle.surrogate_minimizer).norm());
        smallest_distortion = smallest_distortion.min(oracle.distortion);
    }
    let ok = reached.is_some_and(|t| t <= 2001)
        && worst_plateau_gap <= 1e-6
        && smallest_distortion > 1e-2;
    verdict(
        2,
        "speed-accuracy resolution",
        ok,
        &format!(
            "FedLin |x-x*| <= 1e-10 at round {reached:?}; baselines end within {worst_plateau_gap:e} of their surrogate minimizers, which sit at least {smallest_distortion:.6} from x*"
        ),
    );
}

fn criterion_03_theorem_1_and_3_bounds() {
    let mut failures = Vec::new();
    let mut worst_ratio = 0.0_f64;
    for seed in 0..10u64 {
        let p = random_spd_quadratics(20, 20, 1.0, 10.0, 1.0, seed).unwrap();
        let d = p.dim();
        let runs = [
            (
                TheoremId::T1,
                Preset::Thm1,
                ClientSchedule::Uniform { h: 10 },
            ),
            (TheoremId::T3, Preset::Thm3, spread(2, 100, seed)),
            (
                TheoremId::T3,
                Preset::Thm3,
                ClientSchedule::Uniform { h: 10 },
            ),
        ];
        for (theorem, step, schedule) in runs {
            let c = config(
                AlgorithmSpec::fedlin_uncompressed(d),
                schedule.clone(),
                preset(step),
                200,
            );
            let trace = run(&c, &p).unwrap();
            let report =
                verify_bound(&trace, &bound_for_trace(&trace, theorem, None).unwrap()).unwrap();
            worst_ratio = worst_ratio.max(report.max_ratio);
            if !report.passed || report.rounds.len() != 200 {
                failures.push(format!("seed {seed} {} {schedule:?}", theorem.name()));
            }
        }
    }
    verdict(
        3,
        "Theorem 1/3 bound",
        failures.is_empty(),
        &format!("30 runs over 10 seeds, T = 1..200, largest measured/bound ratio {worst_ratio:.3e}; failures {failures:?}"),
    );
}

fn criterion_04_homogeneous_exactness() {
    let base = random_spd_quadratics(1, 10, 1.0, 20.0, 3.0, SEED).unwrap();
    let p = identical_clients(base.clients()[0].clone(), 5).unwrap();
    let d = p.dim();
    let h = 20;
    let rounds = 30;
    let eta = 1.0 / p.smoothness();
    let fedlin = config(
        AlgorithmSpec::fedlin_uncompressed(d),
        ClientSchedule::Uniform { h },
        preset(Preset::P3),
        rounds,
    );
    let gd = config(
        AlgorithmSpec::CentralizedGd,
        ClientSchedule::Uniform { h },
        StepPolicy::Uniform { eta },
        rounds,
    );
    let mut a = Runner::new(fedlin.clone(), &p).unwrap();
    let mut b = Runner::new(gd, &p).unwrap();
    let mut worst = 0.0_f64;
    for _ in 0..rounds {
        a.step().unwrap();
        b.step().unwrap();
        let scale = b.x_bar().norm().max(p.x_star().unwrap().norm());
        worst = worst.max((a.x_bar() - b.x_bar()).norm() / scale);
    }
    let trace = run(&fedlin, &p).unwrap();
    let report = verify_bound(
        &trace,
        &bound_for_trace(&trace, TheoremId::P3, None).unwrap(),
    )
    .unwrap();
    verdict(
        4,
        "homogeneous exactness",
        worst <= 1e-12 && report.passed,
        &format!("max relative iterate gap vs centralized GD {worst:e}; (1-1/kappa)^(TH) bound passed: {}", report.passed),
    );
}

fn criterion_05_lower_bound() {
    let mut checked = 0;
    let mut failures = Vec::new();
    for h in [2usize, 10, 50] {
        for j in 1..=20 {
            let eta = j as f64 / (21.0 * h as f64);
            let check = check_lower_bound(14.0, h, eta, 10).unwrap();
            checked += 1;
            if !check.passed {
                failures.push((h, eta));
            }
        }
    }
    verdict(
        5,
        "lower bound",
        failures.is_empty(),
        &format!("{checked} (H, eta) pairs with eta in (0, 1/H), T = 1..10, distance and gap ratios >= exp(-4T); failures {failures:?}"),
    );
}

fn criterion_06_top_k_lemma() {
    let d = 40;
    let mut rng = SeededRng::new(SEED);
    let mut worst = [0.0_f64; 3];
    let mut count = 0;
    for n in 0..1000 {
        let scale = 10f64.powi(n % 7 - 3);
        let x = rng.normal_vector(d) * scale;
        let norm_sq = x.norm_squared();
        for k in [1, d / 4, d / 2, d] {
            let level = SparsityLevel::new(k, d).unwrap();
            let delta = level.delta();
            let c = top_k(&x, level).unwrap();
            let c_sq = c.norm_squared();
            worst[0] = worst[0].max((c.dot(&x) - c_sq).abs() / c_sq);
            worst[1] = worst[1].max(norm_sq / delta - c_sq) / norm_sq;
            worst[2] =
                worst[2].max(((&x - &c).norm_squared() - (1.0 - 1.0 / delta) * norm_sq) / norm_sq);
            count += 1;
        }
    }
    let ok = worst.iter().all(|w| *w <= 1e-12);
    verdict(
        6,
        "TOP-k lemma",
        ok,
        &format!("{count} (vector, k) cases, k in {{1, d/4, d/2, d}}; worst relative violations P1 {:e}, P2 {:e}, P3 {:e}", worst[0], worst[1], worst[2]),
    );
}

fn criterion_07_server_sparsification() {
    let mut notes = Vec::new();
    let mut ok = true;
    for alpha in [10.0, 50.0] {
        let p = least_squares(alpha);
        let d = p.dim();
        let l = p.smoothness();
        let schedule = spread(2, 100, SEED);
        let fedlin = |k: usize, ef: bool| AlgorithmSpec::FedLin {
            plan: CompressionPlan::server(k, d, ef).unwrap(),
        };

        // no error feedback, k = 25 and k = 1, run until dist_sq <= 1e-12
        for k in [25, 1] {
            let c = config(
                fedlin(k, false),
                schedule.clone(),
                StepPolicy::InverseTau { eta_bar: 2.0 / l },
                3000,
            );
            let r = rounds_to_tolerance(&c, &p, 1e-12).unwrap();
            ok &= r.is_some();
            notes.push(format!("alpha {alpha} k {k} no-EF dist_sq<=1e-12 at {r:?}"));
        }

        // Theorem 6 factor under its preset
        for k in [25, 1] {
            let c = config(
                fedlin(k, false),
                schedule.clone(),
                preset(Preset::Thm6),
                200,
            );
            let trace = run(&c, &p).unwrap();
            let report = verify_bound(
                &trace,
                &bound_for_trace(&trace, TheoremId::T6, None).unwrap(),
            )
            .unwrap();
            ok &= report.passed;
            notes.push(format!(
                "alpha {alpha} k {k} T6 bound {}",
                if report.passed { "holds" } else { "violated" }
            ));
        }

        // EF needs no more rounds than no-EF at equal delta_s
        for k in [50, 25] {
            let run_to = |ef: bool| {
                let c = config(
                    fedlin(k, ef),
                    schedule.clone(),
                    StepPolicy::InverseTau { eta_bar: 1.0 / l },
                    2000,
                );
                rounds_to_tolerance(&c, &p, 1e-8).unwrap()
            };
            let (with_ef, without) = (run_to(true), run_to(false));
            let better = matches!((with_ef, without), (Some(a), Some(b)) if a <= b);
            ok &= better;
            notes.push(format!(
                "alpha {alpha} k {k} rounds to 1e-8: EF {with_ef:?}, no-EF {without:?}"
            ));
        }
    }

    // time to 1e-8 is nondecreasing in delta_s in {1, 2, 4, d}
    let p = least_squares(10.0);
    let d = p.dim();
    let counts: Vec<Option<usize>> = [100, 50, 25, 1]
        .into_iter()
        .map(|k| {
            let c = config(
                AlgorithmSpec::FedLin {
                    plan: CompressionPlan::server(k, d, false).unwrap(),
                },
                spread(2, 100, SEED),
                StepPolicy::InverseTau {
                    eta_bar: 2.0 / p.smoothness(),
                },
                3000,
            );
            rounds_to_tolerance(&c, &p, 1e-8).unwrap()
        })
        .collect();
    let monotone = counts.iter().all(Option::is_some) && counts.windows(2).all(|w| w[0] <= w[1]);
    ok &= monotone;
    notes.push(format!(
        "rounds to 1e-8 for delta_s = 1, 2, 4, 100: {counts:?}"
    ));
    verdict(7, "server sparsification", ok, &notes.join("; "));
}

fn criterion_08_client_sparsification_floor() {
    let mut finals = Vec::new();
    for alpha in [1.0, 10.0] {
        let p = least_squares(alpha);
        let d = p.dim();
        for k in [75, 50] {
            let c = config(
                AlgorithmSpec::FedLin {
                    plan: CompressionPlan::client(k, d).unwrap(),
                },
                spread(2, 100, SEED),
                StepPolicy::InverseTau { eta_bar: 5e-4 },
                500,
            );
            let trace = run(&c, &p).unwrap();
            finals.push((
                alpha,
                k,
                if trace.diverged() {
                    f64::NAN
                } else {
                    trace.last().f_gap
                },
            ));
        }
    }
    let gap = |alpha: f64, k: usize| finals.iter().find(|f| f.0 == alpha && f.1 == k).unwrap().2;
    let positive = finals.iter().all(|f| f.2 > 0.0);
    let in_delta = gap(1.0, 75) <= gap(1.0, 50) && gap(10.0, 75) <= gap(10.0, 50);
    let in_alpha = gap(1.0, 75) <= gap(10.0, 75) && gap(1.0, 50) <= gap(10.0, 50);

    let one = synth_least_squares(&SynthConfig {
        m: 1,
        n_i: 500,
        d: 100,
        alpha: 10.0,
        noise_std: 0.5f64.sqrt(),
        seed: SEED,
    })
    .unwrap();
    let same = identical_clients(one.clients()[0].clone(), 5).unwrap();
    let c = config(
        AlgorithmSpec::FedLin {
            plan: CompressionPlan::client(50, 100).unwrap(),
        },
        spread(2, 100, SEED),
        StepPolicy::InverseTau { eta_bar: 5e-4 },
        3000,
    );
    let identical = rounds_to_tolerance(&c, &same, 1e-16).unwrap();

    let ok = positive && in_delta && in_alpha && identical.is_some();
    let table: Vec<String> = finals
        .iter()
        .map(|(a, k, g)| format!("alpha {a} k {k}: {g:.4e}"))
        .collect();
    verdict(
        8,
        "client sparsification floor",
        ok,
        &format!(
            "final gaps after 500 rounds [{}]; identical clients reach |x-x*| <= 1e-8 at round {identical:?}",
            table.join(", ")
        ),
    );
}

fn criterion_09_theorem_4_and_5() {
    let mut notes = Vec::new();
    let mut ok = true;
    for seed in [SEED, SEED + 1] {
        let p = rank_deficient_least_squares(10, 5, 20, seed).unwrap();
        let d = p.dim();
        for (theorem, step) in [
            (TheoremId::T4a, Preset::Thm4a),
            (TheoremId::T4b, Preset::Thm4b),
        ] {
            let c = config(
                AlgorithmSpec::fedlin_uncompressed(d),
                spread(2, 20, seed),
                preset(step),
                300,
            );
            let trace = run(&c, &p).unwrap();
            let report =
                verify_bound(&trace, &bound_for_trace(&trace, theorem, None).unwrap()).unwrap();
            ok &= report.passed;
            notes.push(format!(
                "seed {seed} {}: ratio <= {:.3e}",
                theorem.name(),
                report.max_ratio
            ));
        }

        let q = indefinite_quadratics(5, 10, 1.0, 10.0, seed).unwrap();
        let c = config(
            AlgorithmSpec::fedlin_uncompressed(10),
            spread(2, 20, seed),
            preset(Preset::Thm5),
            300,
        );
        let trace = run(&c, &q).unwrap();
        let report = verify_bound(
            &trace,
            &bound_for_trace(&trace, TheoremId::T5, None).unwrap(),
        )
        .unwrap();
        ok &= report.passed;
        notes.push(format!("seed {seed} T5: ratio <= {:.3e}", report.max_ratio));
    }
    verdict(9, "Theorem 4/5 property checks", ok, &notes.join("; "));
}

fn criterion_10_fedsplit_divergence() {
    let p = fedsplit_instance(1000.0, 1.0).unwrap();
    let (l, mu) = (p.smoothness(), p.strong_convexity());
    let s = 1.0 / (l * mu).sqrt();
    let alpha = 2.0 / (l + mu + 2.0 / s);
    let mut outcomes = Vec::new();
    for e_steps in [1, 3, 5] {
        let c = config(
            AlgorithmSpec::FedSplit { s, alpha, e_steps },
            ClientSchedule::Uniform { h: 1 },
            StepPolicy::Uniform { eta: alpha },
            200,
        );
        let trace = run(&c, &p).unwrap();
        outcomes.push((e_steps, trace.diverged(), trace.rows.len() - 1));
    }
    verdict(
        10,
        "FedSplit divergence",
        outcomes.iter().all(|o| o.1),
        &format!(
            "(e, diverged, rounds before the blow-up) = {outcomes:?}; inexact prox with s = 1/sqrt(L mu), alpha = 2/(L + mu + 2/s), behaviour depends on these choices"
        ),
    );
}

fn main() -> ExitCode {
    let criteria: [(&str, fn()); 10] = [
        (
            "criterion_01_surrogate_equivalence",
            criterion_01_surrogate_equivalence,
        ),
        (
            "criterion_02_speed_accuracy_resolution",
            criterion_02_speed_accuracy_resolution,
        ),
        (
            "criterion_03_theorem_1_and_3_bounds",
            criterion_03_theorem_1_and_3_bounds,
        ),
        (
            "criterion_04_homogeneous_exactness",
            criterion_04_homogeneous_exactness,
        ),
        ("criterion_05_lower_bound", criterion_05_lower_bound),
        ("criterion_06_top_k_lemma", criterion_06_top_k_lemma),
        (
            "criterion_07_server_sparsification",
            criterion_07_server_sparsification,
        ),
        (
            "criterion_08_client_sparsification_floor",
            criterion_08_client_sparsification_floor,
        ),
        ("criterion_09_theorem_4_and_5", criterion_09_theorem_4_and_5),
        (
            "criterion_10_fedsplit_divergence",
            criterion_10_fedsplit_divergence,
        ),
    ];
    let mut failed = 0;
    for (name, criterion) in criteria {
        if std::panic::catch_unwind(criterion).is_err() {
            println!("FAIL {name}: see panic above");
            failed += 1;
        }
    }
    println!(
        "acceptance: {} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
