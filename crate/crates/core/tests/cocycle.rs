use adicflow::cocycle::{
    cocycle, lyapunov_spectrum, oseledets_split, product, solve_drifted_recurrence, solve_drifted_with,
    OseledetsField, SummationOrder, DEFAULT_HORIZON,
};
use adicflow::diagram::{Diagram, DiagramEnsemble, IncidenceMatrix, LevelGraph};
use adicflow::Error;
use nalgebra::{DMatrix, DVector};
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Zero};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn stationary(rows: &[Vec<u64>]) -> Diagram {
    Diagram::stationary_matrix(rows, (-600, 600)).unwrap()
}

fn fib() -> Diagram {
    stationary(&[vec![1, 1], vec![1, 0]])
}

fn graph(rows: &[Vec<u64>]) -> LevelGraph {
    IncidenceMatrix::from_rows(rows).to_graph().unwrap()
}

fn unimodular_ensemble() -> DiagramEnsemble {
    DiagramEnsemble::new(
        vec![
            graph(&[vec![2, 1], vec![1, 1]]),
            graph(&[vec![1, 0], vec![1, 1]]),
            graph(&[vec![1, 1], vec![0, 1]]),
        ],
        vec![0.2, 0.4, 0.4],
        0,
    )
    .unwrap()
}

fn int_rows(rows: &[Vec<u64>]) -> Vec<Vec<BigInt>> {
    rows.iter().map(|r| r.iter().map(|&x| BigInt::from(x)).collect()).collect()
}

fn big_mul(a: &[Vec<BigInt>], b: &[Vec<BigInt>]) -> Vec<Vec<BigInt>> {
    (0..a.len())
        .map(|i| {
            (0..b[0].len())
                .map(|j| (0..b.len()).map(|k| &a[i][k] * &b[k][j]).sum())
                .collect()
        })
        .collect()
}

fn rat_mul(a: &[Vec<BigRational>], b: &[Vec<BigRational>]) -> Vec<Vec<BigRational>> {
    (0..a.len())
        .map(|i| {
            (0..b[0].len())
                .map(|j| (0..b.len()).fold(BigRational::zero(), |s, k| s + &a[i][k] * &b[k][j]))
                .collect()
        })
        .collect()
}

fn is_rational_identity(m: &[Vec<BigRational>]) -> bool {
    m.iter().enumerate().all(|(i, row)| {
        row.iter()
            .enumerate()
            .all(|(j, x)| if i == j { x.is_one() } else { x.is_zero() })
    })
}

/// Product of incidence matrices built level by level in test code.
fn oracle_product(d: &Diagram, from: i64, to: i64) -> Vec<Vec<BigInt>> {
    let m = d.layer_size(from);
    let mut acc: Vec<Vec<BigInt>> = (0..m)
        .map(|i| (0..m).map(|j| BigInt::from((i == j) as u8)).collect())
        .collect();
    for n in from..to {
        acc = big_mul(&int_rows(&d.incidence_at(n).to_rows()), &acc);
    }
    acc
}

#[test]
fn empty_range_is_identity() {
    let d = fib();
    let p = product(&d, 4, 4).unwrap();
    let rows = p.as_integer().unwrap();
    assert_eq!(rows, &int_rows(&[vec![1, 0], vec![0, 1]]));
    assert_eq!(cocycle(&d, 0).unwrap().to_f64(), DMatrix::identity(2, 2));
}

#[test]
fn fibonacci_fifth_power() {
    let d = fib();
    let p = product(&d, 1, 6).unwrap();
    assert_eq!(p.as_integer().unwrap(), &int_rows(&[vec![8, 5], vec![5, 3]]));
    assert_eq!(p.as_integer().unwrap(), &oracle_product(&d, 1, 6));
}

#[test]
fn forward_then_backward_is_identity() {
    let d = fib();
    let fwd = product(&d, 1, 21).unwrap();
    let bwd = product(&d, 21, 1).unwrap();
    let p = bwd.to_f64() * fwd.to_f64();
    assert!((p - DMatrix::identity(2, 2)).amax() < 1e-10);
    let exact = rat_mul(&bwd.as_rational().unwrap(), &fwd.as_rational().unwrap());
    assert!(is_rational_identity(&exact));
}

#[test]
fn negative_cocycle_inverts_the_past() {
    let e = unimodular_ensemble();
    let d = e.sample(3, (-50, 50)).unwrap();
    let back = cocycle(&d, -4).unwrap().as_rational().unwrap();
    let past: Vec<Vec<BigRational>> = oracle_product(&d, -3, 1)
        .into_iter()
        .map(|r| r.into_iter().map(BigRational::from_integer).collect())
        .collect();
    assert!(is_rational_identity(&rat_mul(&back, &past)));
}

#[test]
fn singular_backward_range_is_an_error() {
    let d = stationary(&[vec![1, 1], vec![1, 1]]);
    assert!(matches!(product(&d, 5, 2), Err(Error::Singular(_))));
    assert!(product(&d, 2, 5).is_ok());
}

#[test]
fn range_outside_window_is_an_error() {
    let d = Diagram::stationary_matrix(&[vec![1, 1], vec![1, 0]], (0, 10)).unwrap();
    assert!(matches!(product(&d, 0, 20), Err(Error::WindowOverflow { .. })));
}

#[test]
fn long_products_switch_to_scaled_frames() {
    let d = Diagram::stationary_matrix(&[vec![1, 1], vec![1, 0]], (-1200, 1200)).unwrap();
    let whole = product(&d, -1000, 1000).unwrap();
    assert!(whole.as_integer().is_none());
    let (s0, m0) = whole.to_scaled();
    let (s1, m1) = product(&d, -1000, 0).unwrap().to_scaled();
    let (s2, m2) = product(&d, 0, 1000).unwrap().to_scaled();
    let (n1, n2) = (m1.amax(), m2.amax());
    let split = (m2 / n2) * (m1 / n1);
    let shift = (s1 + s2 + n1.ln() + n2.ln() - s0).exp();
    let err = (split * shift - &m0).amax() / m0.amax();
    assert!(err < 1e-12, "relative mismatch {err:e}");
    let phi = (1.0 + 5f64.sqrt()) / 2.0;
    let log_norm = s0 + m0.amax().ln();
    assert!((log_norm / 2000.0 - phi.ln()).abs() < 1e-3);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn cocycle_identity_is_exact(seed in 0u64..1000, a in -30i64..0, k in 0i64..25, l in 0i64..25) {
        let d = unimodular_ensemble().sample(seed, (-40, 60)).unwrap();
        let b = a + k;
        let c = b + l;
        let ac = product(&d, a, c).unwrap();
        let ab = product(&d, a, b).unwrap();
        let bc = product(&d, b, c).unwrap();
        let composed = big_mul(bc.as_integer().unwrap(), ab.as_integer().unwrap());
        prop_assert_eq!(ac.as_integer().unwrap(), &composed);
        prop_assert_eq!(ac.as_integer().unwrap(), &oracle_product(&d, a, c));
    }

    #[test]
    fn stationary_spectrum_matches_eigenvalues(
        a in 1u64..6, b in 1u64..6, c in 1u64..6, e in 1u64..6,
    ) {
        prop_assume!(a * e != b * c);
        let d = Diagram::stationary_matrix(&[vec![a, b], vec![c, e]], (0, 400)).unwrap();
        let s = lyapunov_spectrum(&d, 200).unwrap();
        let (a, b, c, e) = (a as f64, b as f64, c as f64, e as f64);
        let half_trace = (a + e) / 2.0;
        let disc = (half_trace * half_trace - (a * e - b * c)).sqrt();
        let expected = [(half_trace + disc).abs().ln(), (half_trace - disc).abs().ln()];
        for (got, want) in s.exponents.iter().zip(expected) {
            prop_assert!((got - want).abs() < 1e-6, "{} vs {}", got, want);
        }
    }
}

#[test]
fn spectrum_of_two_one_one_three() {
    let d = stationary(&[vec![2, 1], vec![1, 3]]);
    let s = lyapunov_spectrum(&d, 200).unwrap();
    let r5 = 5f64.sqrt();
    assert!((s.exponents[0] - ((5.0 + r5) / 2.0).ln()).abs() < 1e-6);
    assert!((s.exponents[1] - ((5.0 - r5) / 2.0).ln()).abs() < 1e-6);
    assert!(s.errors.iter().all(|e| *e < 1e-6));
}

#[test]
fn identity_diagram_has_zero_spectrum_and_no_unstable_part() {
    let d = stationary(&[vec![1, 0], vec![0, 1]]);
    let s = lyapunov_spectrum(&d, 50).unwrap();
    assert_eq!(s.exponents, vec![0.0, 0.0]);
    let split = oseledets_split(&d, 0, 60).unwrap();
    assert_eq!(split.unstable.ncols(), 0);
    assert_eq!(split.central_stable.ncols(), 2);
}

#[test]
fn short_spectrum_is_rejected() {
    assert!(matches!(lyapunov_spectrum(&fib(), 9), Err(Error::InvalidArgument(_))));
}

#[test]
fn spectrum_csv_lists_running_estimates() {
    let s = lyapunov_spectrum(&fib(), 20).unwrap();
    let csv = s.to_csv();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "n,theta_1,theta_2");
    assert_eq!(lines.len(), 21);
    let last: Vec<f64> = lines[20].split(',').skip(1).map(|x| x.parse().unwrap()).collect();
    assert!((last[0] - 0.4812118).abs() < 1e-6);
}

#[test]
fn fibonacci_unstable_direction_is_golden() {
    let split = oseledets_split(&fib(), 0, DEFAULT_HORIZON).unwrap();
    assert_eq!(split.unstable.ncols(), 1);
    let phi = (1.0 + 5f64.sqrt()) / 2.0;
    let u = split.unstable.column(0);
    let cross = u[0] * 1.0 - u[1] * phi;
    assert!(cross.abs() < 1e-10);
    assert!(split.defect < 1e-10);
}

#[test]
fn two_one_one_three_is_fully_expanding() {
    let split = oseledets_split(&stationary(&[vec![2, 1], vec![1, 3]]), 0, DEFAULT_HORIZON).unwrap();
    assert_eq!(split.unstable.ncols(), 2);
    assert_eq!(split.central_stable.ncols(), 0);
}

#[test]
fn random_splits_are_invariant_and_span() {
    for seed in 0..4 {
        let d = unimodular_ensemble().sample(seed, (-400, 400)).unwrap();
        let field = OseledetsField::new(&d, -5, 5, DEFAULT_HORIZON).unwrap();
        assert_eq!(field.unstable_dim, 1);
        for n in -5..5 {
            let split = field.split(n).unwrap();
            assert!(split.defect < 1e-6, "seed {seed} level {n}: {:e}", split.defect);
            let mut both = split.unstable.clone().resize_horizontally(2, 0.0);
            both.set_column(1, &split.central_stable.column(0));
            let s = both.svd(false, false).singular_values;
            assert!(s.min() > 1e-6);
            let x = split.unstable.column(0).into_owned();
            let image = d.incidence_at(n).to_f64() * &x;
            let next = field.unstable(n + 1).unwrap().column(0).into_owned();
            let sine = (image.normalize() - next.clone() * next.dot(&image.normalize())).norm();
            assert!(sine < 1e-6);
        }
    }
}

#[test]
fn split_json_has_level_bases_exponents_and_defect() {
    let split = oseledets_split(&fib(), 2, DEFAULT_HORIZON).unwrap();
    let v = serde_json::to_value(&split).unwrap();
    assert_eq!(v["level"], 2);
    assert_eq!(v["unstable"].as_array().unwrap().len(), 1);
    assert_eq!(v["central_stable"].as_array().unwrap().len(), 1);
    assert_eq!(v["exponents"].as_array().unwrap().len(), 2);
    assert!(v["defect"].is_number());
}

#[test]
fn short_horizon_leaves_the_gap_unresolved() {
    assert!(matches!(oseledets_split(&fib(), 0, 10), Err(Error::GapUnresolved(_))));
}

fn orbit(d: &Diagram, v: &DVector<f64>, len: usize) -> Vec<DVector<f64>> {
    let mut out = vec![v.clone()];
    for n in 1..len as i64 {
        let next = d.incidence_at(n).to_f64() * out.last().unwrap();
        out.push(next);
    }
    out
}

fn to_seq(xs: &[DVector<f64>]) -> Vec<Vec<f64>> {
    xs.iter().map(|x| x.iter().copied().collect()).collect()
}

fn with_noise(clean: &[DVector<f64>], rate: f64, seed: u64) -> Vec<DVector<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    clean
        .iter()
        .enumerate()
        .map(|(i, x)| {
            let angle: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            let size = (-rate * (i + 1) as f64).exp();
            x + DVector::from_vec(vec![angle.cos(), angle.sin()]) * size
        })
        .collect()
}

#[test]
fn exact_orbit_is_returned_unchanged() {
    let d = fib();
    let phi = (1.0 + 5f64.sqrt()) / 2.0;
    let v = DVector::from_vec(vec![phi, 1.0]).normalize();
    let clean = orbit(&d, &v, 30);
    let sol = solve_drifted_recurrence(&d, &to_seq(&clean), 0.5).unwrap();
    let w = DVector::from_vec(sol.w_hat.clone());
    assert!((w - &v).norm() < 1e-12);
    let scale = clean.last().unwrap().norm();
    assert!(sol.bound <= 1e-12 * scale, "bound {:e}", sol.bound);
}

#[test]
fn noisy_fibonacci_orbit_recovers_the_clean_vector() {
    let d = fib();
    let phi = (1.0 + 5f64.sqrt()) / 2.0;
    let v = DVector::from_vec(vec![phi, 1.0]).normalize();
    let clean = orbit(&d, &v, 60);
    for seed in 0..5 {
        let noisy = with_noise(&clean, 0.4, seed);
        let sol = solve_drifted_recurrence(&d, &to_seq(&noisy), 0.4).unwrap();
        let w = DVector::from_vec(sol.w_hat.clone());
        assert!((w - &v).norm() < 1e-3, "seed {seed}");
        assert!(sol.bound <= 10.0 * noisy[0].amax(), "seed {seed}: bound {}", sol.bound);
    }
}

#[test]
fn random_ensemble_solution_lies_in_the_unstable_line() {
    for seed in 0..4 {
        let d = unimodular_ensemble().sample(100 + seed, (-400, 400)).unwrap();
        let field = OseledetsField::new(&d, 1, 40, DEFAULT_HORIZON).unwrap();
        let v = field.unstable(1).unwrap().column(0).into_owned();
        let noisy = with_noise(&orbit(&d, &v, 40), 0.4, seed);
        let sol = solve_drifted_with(&d, &field, &to_seq(&noisy), 0.4, SummationOrder::Forward).unwrap();
        assert!(sol.residual < 1e-9);
        let w = DVector::from_vec(sol.w_hat.clone());
        let off_line = (&w - &v * v.dot(&w)).norm();
        assert!(off_line < 1e-9 * w.norm().max(1.0));
    }
}

#[test]
fn summation_order_does_not_change_the_solution() {
    let d = unimodular_ensemble().sample(7, (-400, 400)).unwrap();
    let field = OseledetsField::new(&d, 1, 50, DEFAULT_HORIZON).unwrap();
    let v = field.unstable(1).unwrap().column(0).into_owned() * 3.0;
    let seq = to_seq(&with_noise(&orbit(&d, &v, 50), 0.3, 11));
    let a = solve_drifted_with(&d, &field, &seq, 0.3, SummationOrder::Forward).unwrap();
    let b = solve_drifted_with(&d, &field, &seq, 0.3, SummationOrder::Reverse).unwrap();
    for (x, y) in a.w_hat.iter().zip(&b.w_hat) {
        assert!((x - y).abs() < 1e-9);
    }
}

#[test]
fn growing_defects_violate_the_declared_decay() {
    let d = fib();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let seq: Vec<Vec<f64>> = (0..40)
        .map(|i| {
            let s = (0.3 * i as f64).exp();
            vec![s * rng.gen_range(-1.0..1.0), s * rng.gen_range(-1.0..1.0)]
        })
        .collect();
    assert!(matches!(
        solve_drifted_recurrence(&d, &seq, 0.5),
        Err(Error::DecayViolated { .. })
    ));
}

#[test]
fn solver_rejects_bad_arguments() {
    let d = fib();
    assert!(solve_drifted_recurrence(&d, &[], 0.5).is_err());
    assert!(solve_drifted_recurrence(&d, &vec![vec![1.0, 0.0]; 4], 0.0).is_err());
    assert!(matches!(
        solve_drifted_recurrence(&d, &vec![vec![1.0]; 4], 0.5),
        Err(Error::Dimension(_))
    ));
}
