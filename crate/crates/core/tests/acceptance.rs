//! Acceptance suite. Runs without the libtest harness so that every
//! criterion prints exactly one PASS/FAIL line, then exits nonzero if any
//! criterion failed.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use adicflow::cocycle::{lyapunov_spectrum, oseledets_split, solve_drifted_recurrence};
use adicflow::cohomology::{
    birkhoff_trace, dual_setup, log_grid, obstructions, transfer_function, CylinderFunction,
    CylinderIndex, FlowContext, Verdict,
};
use adicflow::diagram::{cylinders, fibonacci_graph, Diagram, DiagramEnsemble, LevelGraph};
use adicflow::measures::{pairing, pf_measures, DualSystem};
use adicflow::ordering::{successor, PathWindow};
use adicflow::cocycle::OseledetsField;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const GOLDEN_LOG: f64 = 0.481_211_825_059_603_4;

struct Outcome {
    pass: bool,
    detail: String,
}

fn check(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn big_oracle() -> Diagram {
    Diagram::stationary_matrix(&[vec![2, 1], vec![1, 3]], (-2, 18)).unwrap()
}

fn ln_eig(sign: f64) -> f64 {
    ((5.0 + sign * 5f64.sqrt()) / 2.0).ln()
}

fn lyapunov_oracle() -> Outcome {
    let d = Diagram::stationary(fibonacci_graph(), (0, 200)).unwrap();
    let s = lyapunov_spectrum(&d, 200).unwrap();
    let e1 = (s.exponents[0] - GOLDEN_LOG).abs();
    let e2 = (s.exponents[1] + GOLDEN_LOG).abs();
    check(
        e1 < 1e-6 && e2 < 1e-6,
        format!(
            "theta = ({:.7}, {:.7}), errors ({e1:.1e}, {e2:.1e}), tol 1e-6",
            s.exponents[0], s.exponents[1]
        ),
    )
}

fn splitting_oracle() -> Outcome {
    let s = oseledets_split(&big_oracle(), 0, 120).unwrap();
    let d1 = s.unstable.ncols();
    let e1 = (s.exponents[0] - ln_eig(1.0)).abs();
    let e2 = (s.exponents[1] - ln_eig(-1.0)).abs();
    let fib = oseledets_split(&Diagram::stationary(fibonacci_graph(), (0, 10)).unwrap(), 0, 120).unwrap();
    let phi = (1.0 + 5f64.sqrt()) / 2.0;
    let target = DVector::from_vec(vec![phi, 1.0]).normalize();
    let col = fib.unstable.column(0).into_owned();
    let angle = (col.dot(&target).abs().min(1.0)).acos();
    check(
        d1 == 2 && e1 < 1e-6 && e2 < 1e-6 && fib.unstable.ncols() == 1 && angle < 1e-6,
        format!(
            "dim E^u = {d1} / {}, exponent errors ({e1:.1e}, {e2:.1e}), angle to (phi,1) {angle:.1e}, tol 1e-6",
            fib.unstable.ncols()
        ),
    )
}

/// Fraction of flow time an adic orbit of `steps` paths spends in each
/// cylinder on levels `1..=k`, next to `ν` of that cylinder.
fn orbit_frequency_error(d: &Diagram, k: usize, steps: usize) -> f64 {
    let m = pf_measures(d).unwrap();
    let (_, hi) = d.window();
    let mut x = PathWindow::minimal(d, 1, hi, 0).unwrap();
    let index = CylinderIndex::new(d, 0, k).unwrap();
    let mut time = vec![0.0; index.len()];
    let mut total = 0.0;
    for _ in 0..steps {
        let word: Vec<usize> = (1..=k as i64).map(|t| x.edge(t)).collect();
        let atom = m.plus_value(1, x.bottom_vertex(d)).unwrap();
        time[index.rank(d, &word)] += atom;
        total += atom;
        x = successor(d, &x).expect("leaf long enough for the orbit");
    }
    cylinders(d, 0, k)
        .unwrap()
        .iter()
        .enumerate()
        .map(|(r, c)| (time[r] / total - m.nu(c).unwrap()).abs())
        .fold(0.0, f64::max)
}

fn measure_suite() -> Outcome {
    let mut worst_add: f64 = 0.0;
    for d in [
        Diagram::stationary(fibonacci_graph(), (-8, 8)).unwrap(),
        Diagram::stationary_matrix(&[vec![2, 1], vec![1, 3]], (-8, 8)).unwrap(),
    ] {
        let m = pf_measures(&d).unwrap();
        for k in 1..=6 {
            for c in cylinders(&d, 0, k).unwrap() {
                let nu = m.nu(&c).unwrap();
                let up: f64 = c.extend_up(&d).iter().map(|e| m.nu(e).unwrap()).sum();
                let down: f64 = c.extend_down(&d).iter().map(|e| m.nu(e).unwrap()).sum();
                worst_add = worst_add.max((up - nu).abs()).max((down - nu).abs());
            }
        }
    }
    let mut worst_freq: f64 = 0.0;
    for d in [
        Diagram::stationary(fibonacci_graph(), (1, 30)).unwrap(),
        Diagram::stationary_matrix(&[vec![2, 1], vec![1, 3]], (1, 12)).unwrap(),
    ] {
        for k in 1..=2 {
            worst_freq = worst_freq.max(orbit_frequency_error(&d, k, 100_000));
        }
    }
    check(
        worst_add < 1e-12 && worst_freq < 0.01,
        format!("additivity defect {worst_add:.1e} (tol 1e-12), orbit frequency error {worst_freq:.1e} (tol 0.01)"),
    )
}

fn duality_suite() -> Outcome {
    // the span runs 10 levels either way of the level where ν is normalized
    const MID: i64 = 0;
    let mut invariance: f64 = 0.0;
    let mut kronecker: f64 = 0.0;
    for d in [
        Diagram::stationary(fibonacci_graph(), (-14, 14)).unwrap(),
        Diagram::stationary_matrix(&[vec![2, 1], vec![1, 3]], (-14, 14)).unwrap(),
    ] {
        let m = pf_measures(&d).unwrap();
        let field = OseledetsField::new(&d, -12, 12, 120).unwrap();
        let duals = DualSystem::new(&d, &m, &field, MID).unwrap();
        for (i, p) in duals.plus.iter().enumerate() {
            for (j, q) in duals.minus.iter().enumerate() {
                let at_base = pairing(p, q, MID).unwrap();
                let delta = if i == j { 1.0 } else { 0.0 };
                kronecker = kronecker.max((at_base - delta).abs());
                for n in MID - 10..=MID + 10 {
                    invariance = invariance.max((pairing(p, q, n).unwrap() - at_base).abs());
                }
            }
        }
    }
    check(
        invariance < 1e-10 && kronecker < 1e-9,
        format!("pairing drift over 20 levels {invariance:.1e} (tol 1e-10), |pairing - I| {kronecker:.1e} (tol 1e-9)"),
    )
}

fn ensemble() -> DiagramEnsemble {
    let g = |rows: &[Vec<u64>]| adicflow::diagram::IncidenceMatrix::from_rows(rows).to_graph().unwrap();
    let alphabet: Vec<LevelGraph> = vec![
        g(&[vec![2, 1], vec![1, 1]]),
        g(&[vec![1, 0], vec![1, 1]]),
        g(&[vec![1, 1], vec![0, 1]]),
    ];
    DiagramEnsemble::new(alphabet, vec![0.2, 0.4, 0.4], 0).unwrap()
}

/// `w_n = A_{n-1} ⋯ A_1 v + e_n` with `|e_n| = e^{-0.4 n}`.
fn drifted_family(d: &Diagram, rng: &mut ChaCha8Rng, len: usize) -> Vec<Vec<f64>> {
    let unit = |rng: &mut ChaCha8Rng| {
        let a: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        DVector::from_vec(vec![a.cos(), a.sin()])
    };
    let mut orbit = unit(rng);
    let mut out = Vec::with_capacity(len);
    for n in 1..=len {
        let e = unit(rng) * (-0.4 * n as f64).exp();
        out.push((&orbit + e).iter().copied().collect());
        let a: DMatrix<f64> = d.incidence_at(n as i64).to_f64();
        orbit = a * orbit;
    }
    out
}

fn drifted_solver() -> Outcome {
    let mut worst_residual: f64 = 0.0;
    let mut ratio_lo = f64::INFINITY;
    let mut ratio_hi: f64 = 0.0;
    let mut failures = 0;
    let ens = ensemble();
    for i in 0..50u64 {
        let d = if i % 2 == 0 {
            Diagram::stationary(fibonacci_graph(), (1, 60)).unwrap()
        } else {
            ens.sample(1000 + i, (1, 60)).unwrap()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(i);
        let w = drifted_family(&d, &mut rng, 60);
        match (
            solve_drifted_recurrence(&d, &w, 0.4),
            solve_drifted_recurrence(&d, &w[..30], 0.4),
        ) {
            (Ok(long), Ok(short)) => {
                worst_residual = worst_residual.max(long.residual);
                let ratio = long.bound / short.bound;
                ratio_lo = ratio_lo.min(ratio);
                ratio_hi = ratio_hi.max(ratio);
            }
            _ => failures += 1,
        }
    }
    check(
        failures == 0 && worst_residual < 1e-9 && ratio_lo >= 0.5 && ratio_hi <= 2.0,
        format!(
            "50 instances, {failures} solver errors, residual {worst_residual:.1e} (tol 1e-9), bound ratio N=60/N=30 in [{ratio_lo:.3}, {ratio_hi:.3}] (allowed [0.5, 2])"
        ),
    )
}

fn mean_zero_depth_one(ctx: &FlowContext, values: Vec<f64>) -> CylinderFunction {
    let f = CylinderFunction::from_values(&ctx.diagram, 0, 1, values).unwrap();
    ctx.centered(&f).unwrap()
}

fn dichotomy() -> Outcome {
    let grid = log_grid(10.0, 1e6, 20);
    let fib = FlowContext::new(Diagram::stationary(fibonacci_graph(), (-2, 44)).unwrap()).unwrap();
    let f_a = mean_zero_depth_one(&fib, vec![1.0, -0.5, 0.3]);
    let x_a = PathWindow::minimal(&fib.diagram, 1, fib.top, 0).unwrap();
    let exp_a = birkhoff_trace(&fib, &f_a, &x_a, &grid).unwrap().exponent.unwrap();

    let big = FlowContext::new(big_oracle()).unwrap();
    let f_b = mean_zero_depth_one(&big, vec![1.0, -2.0, 0.0, 2.0, -1.0, 1.0, -2.0]);
    let (field, duals) = dual_setup(&big, 120).unwrap();
    let report = obstructions(&big, &f_b, &field, &duals).unwrap();
    let x_b = PathWindow::minimal(&big.diagram, 1, big.top, 0).unwrap();
    let exp_b = birkhoff_trace(&big, &f_b, &x_b, &grid).unwrap().exponent.unwrap();
    let target = ln_eig(-1.0) / ln_eig(1.0);

    let one = CylinderFunction::constant(&fib.diagram, 0, 1, 1.0).unwrap();
    let exp_c = birkhoff_trace(&fib, &one, &x_a, &grid).unwrap().exponent.unwrap();
    check(
        exp_a < 0.05
            && report.verdict == (Verdict::Nonzero { index: 2 })
            && (exp_b - target).abs() <= 0.05
            && (exp_c - 1.0).abs() <= 0.01,
        format!(
            "(a) {exp_a:.4} < 0.05; (b) {exp_b:.4} vs {target:.4} +- 0.05, verdict {:?}; (c) {exp_c:.4} vs 1 +- 0.01",
            report.verdict
        ),
    )
}

fn defect_rate() -> Outcome {
    let ctx = FlowContext::new(Diagram::stationary(fibonacci_graph(), (-2, 44)).unwrap()).unwrap();
    let f = CylinderFunction::from_values(&ctx.diagram, 0, 1, vec![1.0, -0.5, 0.3])
        .unwrap()
        .with_companion(&ctx.diagram, &ctx.measure, vec![0.7, -0.2, 0.4])
        .unwrap();
    let f = ctx.centered(&f).unwrap();
    let cv = ctx.canonical_vectors(&f, 1, 41).unwrap();
    let rate = cv.defect_rate(5, 40).unwrap_or(f64::NAN);
    let allowed = 2.0 * GOLDEN_LOG - 0.05;
    check(
        rate >= allowed,
        format!("fitted defect rate over levels 5..40 = {rate:.4} (needs >= {allowed:.4})"),
    )
}

fn transfer() -> Outcome {
    let ctx = FlowContext::new(Diagram::stationary(fibonacci_graph(), (-2, 44)).unwrap()).unwrap();
    let f = mean_zero_depth_one(&ctx, vec![1.0, -0.5, 0.3]);
    let (field, duals) = dual_setup(&ctx, 120).unwrap();
    let report = obstructions(&ctx, &f, &field, &duals).unwrap();
    let x0 = PathWindow::minimal(&ctx.diagram, 1, ctx.top, 0).unwrap();
    let base = transfer_function(&ctx, &f, &x0, &log_grid(1.0, 1e5, 20), Some(&report)).unwrap();
    let wide = transfer_function(&ctx, &f, &x0, &log_grid(1.0, 1e6, 20), Some(&report)).unwrap();
    let ratio = wide.sup_norm / base.sup_norm;

    let one = CylinderFunction::constant(&ctx.diagram, 0, 1, 1.0).unwrap();
    let lin_base = transfer_function(&ctx, &one, &x0, &log_grid(1.0, 1e5, 20), None).unwrap();
    let lin_wide = transfer_function(&ctx, &one, &x0, &log_grid(1.0, 1e6, 20), None).unwrap();
    let slope = |s: &adicflow::cohomology::TransferSample| s.sup_norm / s.times.iter().fold(0.0f64, |a, &t| a.max(t));
    let (s1, s2) = (slope(&lin_base), slope(&lin_wide));
    check(
        report.verdict == Verdict::Zero
            && (0.5..=2.0).contains(&ratio)
            && (s1 - 1.0).abs() < 0.01
            && (s2 - 1.0).abs() < 0.01,
        format!(
            "zero-obstruction sup ratio 10x grid / base = {ratio:.3} (allowed [0.5, 2]); f = 1: sup/T = {s1:.4}, {s2:.4} (tol 0.01)"
        ),
    )
}

fn main() -> ExitCode {
    type Criterion = (&'static str, fn() -> Outcome, Option<Duration>);
    let criteria: [Criterion; 8] = [
        ("lyapunov oracle", lyapunov_oracle, Some(Duration::from_secs(1))),
        ("splitting oracle", splitting_oracle, Some(Duration::from_secs(1))),
        ("measure suite", measure_suite, Some(Duration::from_secs(10))),
        ("duality suite", duality_suite, None),
        ("drifted recurrence solver", drifted_solver, Some(Duration::from_secs(5))),
        ("boundedness / growth dichotomy", dichotomy, Some(Duration::from_secs(60))),
        ("canonical vector defect rate", defect_rate, None),
        ("transfer function", transfer, None),
    ];
    let mut failed = 0;
    for (i, (name, run, limit)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(run).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            check(false, format!("panicked: {msg}"))
        });
        let elapsed = start.elapsed();
        let in_time = limit.is_none_or(|l| elapsed <= l);
        let pass = outcome.pass && in_time;
        if !pass {
            failed += 1;
        }
        let budget = limit.map_or(String::new(), |l| format!(" (limit {:.0?})", l));
        println!(
            "criterion {} {}: {} | {} | {:.2?}{}",
            i + 1,
            name,
            if pass { "PASS" } else { "FAIL" },
            outcome.detail,
            elapsed,
            budget
        );
    }
    println!("acceptance: {} of 8 criteria passed", 8 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
