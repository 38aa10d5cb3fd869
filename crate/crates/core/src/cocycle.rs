//! The renormalization cocycle: exact products of incidence matrices,
//! Lyapunov spectra, Oseledets splittings, and the solver that lifts an
//! approximately equivariant vector sequence to a vector of the unstable
//! subspace.
//!
//! Layer conventions follow [`crate::diagram`]: `A_n` maps layer `n` to layer
//! `n + 1`, so `product(d, from, to)` for `to >= from` is
//! `A_{to-1} ⋯ A_{from}` and the cocycle `𝔸(n, ω) = A_n ⋯ A_1` is
//! `product(d, 1, n + 1)`.

use nalgebra::DVector;
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};
use serde::Serialize;

use crate::diagram::Diagram;
use crate::error::{Error, Result};
use crate::linalg::{self, Mat, Vector};

/// Entries beyond this many bits (about 10^300) trigger the switch to
/// log-scaled floating frames.
const EXACT_BIT_LIMIT: u64 = 997;

/// Levels spent forgetting the initial frame before exponents are averaged.
pub const WARMUP_LEVELS: i64 = 64;

#[derive(Clone, Debug, PartialEq)]
pub enum ProductValue {
    Integer(Vec<Vec<BigInt>>),
    Rational(Vec<Vec<BigRational>>),
    /// `exp(log_scale) * matrix`.
    Scaled { log_scale: f64, matrix: Mat },
}

#[derive(Clone, Debug, PartialEq)]
pub struct CocycleProduct {
    pub from: i64,
    pub to: i64,
    pub value: ProductValue,
}

impl CocycleProduct {
    /// Floating-point value and the log of the scale it was divided by.
    pub fn to_scaled(&self) -> (f64, Mat) {
        fn rows_to_mat<T>(rows: &[Vec<T>], f: impl Fn(&T) -> f64) -> Mat {
            let r = rows.len();
            let c = rows.first().map_or(0, |x| x.len());
            Mat::from_fn(r, c, |i, j| f(&rows[i][j]))
        }
        match &self.value {
            ProductValue::Integer(rows) => (0.0, rows_to_mat(rows, |x| x.to_f64().unwrap_or(f64::INFINITY))),
            ProductValue::Rational(rows) => (0.0, rows_to_mat(rows, |x| x.to_f64().unwrap_or(f64::NAN))),
            ProductValue::Scaled { log_scale, matrix } => (*log_scale, matrix.clone()),
        }
    }

    pub fn to_f64(&self) -> Mat {
        let (s, m) = self.to_scaled();
        m * s.exp()
    }

    pub fn as_integer(&self) -> Option<&Vec<Vec<BigInt>>> {
        match &self.value {
            ProductValue::Integer(rows) => Some(rows),
            _ => None,
        }
    }

    pub fn as_rational(&self) -> Option<Vec<Vec<BigRational>>> {
        match &self.value {
            ProductValue::Integer(rows) => Some(
                rows.iter()
                    .map(|r| r.iter().map(|x| BigRational::from_integer(x.clone())).collect())
                    .collect(),
            ),
            ProductValue::Rational(rows) => Some(rows.clone()),
            ProductValue::Scaled { .. } => None,
        }
    }
}

fn int_mul(a: &[Vec<BigInt>], b: &[Vec<BigInt>]) -> Vec<Vec<BigInt>> {
    let inner = b.len();
    let cols = b.first().map_or(0, |r| r.len());
    a.iter()
        .map(|row| {
            (0..cols)
                .map(|j| (0..inner).fold(BigInt::zero(), |acc, k| acc + &row[k] * &b[k][j]))
                .collect()
        })
        .collect()
}

fn identity_int(m: usize) -> Vec<Vec<BigInt>> {
    (0..m)
        .map(|i| (0..m).map(|j| BigInt::from((i == j) as u8)).collect())
        .collect()
}

fn max_bits(rows: &[Vec<BigInt>]) -> u64 {
    rows.iter().flatten().map(|x| x.bits()).max().unwrap_or(0)
}

fn forward_product(d: &Diagram, from: i64, to: i64) -> ProductValue {
    let m = d.layer_size(from);
    let mut acc = identity_int(m);
    let mut n = from;
    while n < to {
        let a = d.incidence_at(n);
        let rows: Vec<Vec<BigInt>> = a
            .to_rows()
            .into_iter()
            .map(|r| r.into_iter().map(BigInt::from).collect())
            .collect();
        acc = int_mul(&rows, &acc);
        n += 1;
        if max_bits(&acc) > EXACT_BIT_LIMIT {
            break;
        }
    }
    if n == to {
        return ProductValue::Integer(acc);
    }
    // rescaling by exact powers of two keeps the log scale an integer
    let top = max_bits(&acc);
    let shift = top.saturating_sub(60);
    let mut bits = shift as i64;
    let mut mat = Mat::from_fn(acc.len(), acc[0].len(), |i, j| {
        (&acc[i][j] >> shift).to_f64().unwrap_or(0.0)
    });
    while n < to {
        mat = d.incidence_at(n).to_f64() * mat;
        let s = mat.amax();
        if s > 0.0 {
            let e = s.log2().floor() as i32;
            mat *= 2f64.powi(-e);
            bits += e as i64;
        }
        n += 1;
    }
    ProductValue::Scaled {
        log_scale: bits as f64 * std::f64::consts::LN_2,
        matrix: mat,
    }
}

/// Product carrying layer `from` to layer `to`. Forward ranges are exact
/// integers (log-scaled floats once entries pass 10^300); backward ranges
/// are exact rational inverses.
pub fn product(d: &Diagram, from: i64, to: i64) -> Result<CocycleProduct> {
    let lo = from.min(to);
    let hi = from.max(to);
    if hi > lo {
        d.check_levels(lo, hi - 1)?;
    }
    let value = if to >= from {
        forward_product(d, from, to)
    } else {
        for n in to..from {
            if !d.incidence_at(n).is_invertible() {
                return Err(Error::Singular(n));
            }
        }
        match forward_product(d, to, from) {
            ProductValue::Integer(rows) => {
                let r: Vec<Vec<BigRational>> = rows
                    .into_iter()
                    .map(|row| row.into_iter().map(BigRational::from_integer).collect())
                    .collect();
                ProductValue::Rational(linalg::rational_inverse(&r).ok_or(Error::Singular(to))?)
            }
            ProductValue::Scaled { log_scale, matrix } => {
                let inv = matrix.try_inverse().ok_or(Error::Singular(to))?;
                ProductValue::Scaled {
                    log_scale: -log_scale,
                    matrix: inv,
                }
            }
            ProductValue::Rational(_) => unreachable!("forward products are integral"),
        }
    };
    Ok(CocycleProduct { from, to, value })
}

/// `𝔸(n, ω)`: `A_n ⋯ A_1` for `n > 0`, `A_{n+1}^{-1} ⋯ A_0^{-1}` for `n < 0`.
pub fn cocycle(d: &Diagram, n: i64) -> Result<CocycleProduct> {
    product(d, 1, 1 + n)
}

fn constant_dimension(d: &Diagram, lo: i64, hi: i64) -> Result<usize> {
    let m = d.layer_size(lo);
    for n in lo..=hi {
        let a = d.incidence_at(n);
        if a.rows() != m || a.cols() != m {
            return Err(Error::Dimension(format!(
                "spectral operations need square incidence matrices of constant size; level {n} is {}x{}",
                a.rows(),
                a.cols()
            )));
        }
    }
    Ok(m)
}

#[derive(Clone, Debug, Serialize)]
pub struct LyapunovSpectrum {
    pub start: i64,
    pub levels: usize,
    /// Exponents in decreasing order, nats per level.
    pub exponents: Vec<f64>,
    /// Standard errors from batch means.
    pub errors: Vec<f64>,
    /// `(levels averaged so far, running estimates)` after every level.
    pub running: Vec<(usize, Vec<f64>)>,
}

impl LyapunovSpectrum {
    /// Rows `n,theta_1,...,theta_m` of running estimates.
    pub fn to_csv(&self) -> String {
        use std::fmt::Write;
        let mut s = String::from("n");
        for i in 1..=self.exponents.len() {
            write!(s, ",theta_{i}").expect("write to string");
        }
        s.push('\n');
        for (n, est) in &self.running {
            write!(s, "{n}").expect("write to string");
            for x in est {
                write!(s, ",{x:.12e}").expect("write to string");
            }
            s.push('\n');
        }
        s
    }
}

/// Re-orthonormalizes a full frame after every level of `mats` and returns
/// the per-level logs of the diagonal of `R` together with the final frame.
fn qr_sweep(frame: Mat, mats: impl Iterator<Item = Mat>) -> (Vec<Vec<f64>>, Mat) {
    let mut q = frame;
    let mut logs = Vec::new();
    for a in mats {
        let (q2, r) = linalg::qr_positive(&(a * &q));
        logs.push((0..r.nrows()).map(|i| r[(i, i)].ln()).collect());
        q = q2;
    }
    (logs, q)
}

/// Lyapunov exponents of the cocycle over levels `start .. start + n_max`
/// of the window, after [`WARMUP_LEVELS`] levels of the extension below it.
pub fn lyapunov_spectrum(d: &Diagram, n_max: usize) -> Result<LyapunovSpectrum> {
    lyapunov_spectrum_from(d, d.window().0, n_max)
}

pub fn lyapunov_spectrum_from(d: &Diagram, start: i64, n_max: usize) -> Result<LyapunovSpectrum> {
    if n_max < 10 {
        return Err(Error::InvalidArgument("n_max must be at least 10".into()));
    }
    let end = start + n_max as i64;
    let m = constant_dimension(d, start - WARMUP_LEVELS, end)?;
    let (_, frame) = qr_sweep(
        Mat::identity(m, m),
        (start - WARMUP_LEVELS..start).map(|n| d.incidence_at(n).to_f64()),
    );
    let (logs, _) = qr_sweep(frame, (start..end).map(|n| d.incidence_at(n).to_f64()));
    Ok(summarize(start, &logs))
}

fn summarize(start: i64, logs: &[Vec<f64>]) -> LyapunovSpectrum {
    let m = logs.first().map_or(0, |l| l.len());
    let n = logs.len();
    let mut running = Vec::with_capacity(n);
    let mut sums = vec![0.0; m];
    for (k, l) in logs.iter().enumerate() {
        for i in 0..m {
            sums[i] += l[i];
        }
        running.push((k + 1, sums.iter().map(|s| s / (k + 1) as f64).collect()));
    }
    let exponents: Vec<f64> = sums.iter().map(|s| s / n as f64).collect();
    let batches = 10.min(n);
    let size = n / batches;
    let errors = (0..m)
        .map(|i| {
            let means: Vec<f64> = (0..batches)
                .map(|b| logs[b * size..(b + 1) * size].iter().map(|l| l[i]).sum::<f64>() / size as f64)
                .collect();
            let mu = means.iter().sum::<f64>() / batches as f64;
            let var = means.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (batches as f64 - 1.0).max(1.0);
            (var / batches as f64).sqrt()
        })
        .collect();
    LyapunovSpectrum {
        start,
        levels: n,
        exponents,
        errors,
        running,
    }
}

/// Exponents with magnitude below this count as zero.
pub const ZERO_EXPONENT: f64 = 1e-6;

/// Finite-horizon Oseledets frames over a range of layers.
///
/// `forward[k]` is the QR frame at layer `lo + k` obtained by pushing the
/// identity frame through `horizon` levels of the past; its leading columns
/// span the fast subspaces. `backward[k]` is the analogous frame of the
/// transpose cocycle pulled down from `horizon` levels above; its leading
/// `d` columns span the unstable subspace of the transpose cocycle, whose
/// orthogonal complement is the central-stable subspace of `𝔸`.
#[derive(Clone, Debug)]
pub struct OseledetsField {
    pub lo: i64,
    pub hi: i64,
    pub horizon: usize,
    pub dim: usize,
    pub unstable_dim: usize,
    pub spectrum: LyapunovSpectrum,
    forward: Vec<Mat>,
    backward: Vec<Mat>,
    steps: Vec<Mat>,
}

#[derive(Clone, Debug, Serialize)]
pub struct OseledetsSplit {
    pub level: i64,
    /// Orthonormal basis of `E^u`, one column per direction.
    #[serde(serialize_with = "ser_mat")]
    pub unstable: Mat,
    /// Orthonormal basis of `E^cs`.
    #[serde(serialize_with = "ser_mat")]
    pub central_stable: Mat,
    /// Orthonormal basis of the unstable subspace of the transpose cocycle.
    #[serde(serialize_with = "ser_mat")]
    pub dual_unstable: Mat,
    pub exponents: Vec<f64>,
    pub errors: Vec<f64>,
    /// Sine of the angle between `A_level E^u_level` and `E^u_{level+1}`.
    pub defect: f64,
}

fn ser_mat<S: serde::Serializer>(m: &Mat, s: S) -> std::result::Result<S::Ok, S::Error> {
    use serde::ser::SerializeSeq;
    let mut seq = s.serialize_seq(Some(m.ncols()))?;
    for c in m.column_iter() {
        seq.serialize_element(&c.iter().copied().collect::<Vec<f64>>())?;
    }
    seq.end()
}

impl OseledetsField {
    pub fn new(d: &Diagram, lo: i64, hi: i64, horizon: usize) -> Result<Self> {
        let h = horizon as i64;
        let m = constant_dimension(d, lo - h - WARMUP_LEVELS, hi + h)?;
        let spectrum = lyapunov_spectrum_from(d, lo - h, horizon.max(10))?;
        let unstable_dim = resolve_unstable_dim(&spectrum, horizon)?;

        let mut forward = Vec::with_capacity((hi - lo + 1) as usize);
        let (_, mut q) = qr_sweep(
            Mat::identity(m, m),
            (lo - h..lo).map(|n| d.incidence_at(n).to_f64()),
        );
        forward.push(q.clone());
        let steps: Vec<Mat> = (lo..hi).map(|n| d.incidence_at(n).to_f64()).collect();
        for a in &steps {
            q = linalg::qr_positive(&(a * &q)).0;
            forward.push(q.clone());
        }

        let mut backward = vec![Mat::zeros(m, m); (hi - lo + 1) as usize];
        let (_, mut qt) = qr_sweep(
            Mat::identity(m, m),
            (hi..hi + h).rev().map(|n| d.incidence_at(n).to_f64().transpose()),
        );
        backward[(hi - lo) as usize] = qt.clone();
        for n in (lo..hi).rev() {
            qt = linalg::qr_positive(&(d.incidence_at(n).to_f64().transpose() * &qt)).0;
            backward[(n - lo) as usize] = qt.clone();
        }
        Ok(OseledetsField {
            lo,
            hi,
            horizon,
            dim: m,
            unstable_dim,
            spectrum,
            forward,
            backward,
            steps,
        })
    }

    fn index(&self, n: i64) -> Result<usize> {
        if n < self.lo || n > self.hi {
            return Err(Error::LevelMismatch(n));
        }
        Ok((n - self.lo) as usize)
    }

    pub fn forward_frame(&self, n: i64) -> Result<&Mat> {
        Ok(&self.forward[self.index(n)?])
    }

    pub fn backward_frame(&self, n: i64) -> Result<&Mat> {
        Ok(&self.backward[self.index(n)?])
    }

    pub fn unstable(&self, n: i64) -> Result<Mat> {
        Ok(self.forward_frame(n)?.columns(0, self.unstable_dim).into_owned())
    }

    pub fn dual_unstable(&self, n: i64) -> Result<Mat> {
        Ok(self.backward_frame(n)?.columns(0, self.unstable_dim).into_owned())
    }

    pub fn central_stable(&self, n: i64) -> Result<Mat> {
        Ok(linalg::complement(&self.dual_unstable(n)?))
    }

    /// Projection onto `E^u_n` along `E^cs_n`.
    pub fn project_unstable(&self, n: i64, x: &Vector) -> Result<Vector> {
        let u = self.unstable(n)?;
        if u.ncols() == 0 {
            return Ok(Vector::zeros(x.len()));
        }
        let w = self.dual_unstable(n)?;
        let g = w.transpose() * &u;
        let c = g
            .lu()
            .solve(&(w.transpose() * x))
            .ok_or_else(|| Error::GapUnresolved(format!("splitting degenerate at level {n}")))?;
        Ok(u * c)
    }

    pub fn split(&self, n: i64) -> Result<OseledetsSplit> {
        let unstable = self.unstable(n)?;
        let dual = self.dual_unstable(n)?;
        let defect = if n < self.hi && unstable.ncols() > 0 {
            let pushed = linalg::orthonormalize(&(&self.steps[self.index(n)?] * &unstable));
            linalg::subspace_distance(&pushed, &self.unstable(n + 1)?)
        } else {
            0.0
        };
        Ok(OseledetsSplit {
            level: n,
            central_stable: linalg::complement(&dual),
            unstable,
            dual_unstable: dual,
            exponents: self.spectrum.exponents.clone(),
            errors: self.spectrum.errors.clone(),
            defect,
        })
    }
}

fn resolve_unstable_dim(spec: &LyapunovSpectrum, horizon: usize) -> Result<usize> {
    let th = &spec.exponents;
    let err = &spec.errors;
    for i in 0..th.len() {
        let band = 3.0 * err[i];
        if th[i].abs() <= band && band > ZERO_EXPONENT {
            return Err(Error::GapUnresolved(format!(
                "exponent {} = {:.6} ± {:.2e} cannot be separated from zero",
                i + 1,
                th[i],
                err[i]
            )));
        }
    }
    let d = th
        .iter()
        .zip(err)
        .filter(|(t, e)| **t > ZERO_EXPONENT.max(3.0 * **e))
        .count();
    if d > 0 {
        let below = th.get(d).copied().unwrap_or(f64::NEG_INFINITY).max(0.0);
        let sep = th[d - 1] - below;
        if d < th.len() && th[d - 1] - 3.0 * err[d - 1] <= th[d] + 3.0 * err[d] {
            return Err(Error::GapUnresolved(format!(
                "exponents {} and {} overlap within error bars",
                d,
                d + 1
            )));
        }
        if sep * horizon as f64 + 1e-9 < 30.0 {
            return Err(Error::GapUnresolved(format!(
                "gap {sep:.4} times horizon {horizon} is below 30 nats"
            )));
        }
    }
    Ok(d)
}

/// Oseledets splitting at `level` resolved over `horizon` levels on each
/// side.
pub fn oseledets_split(d: &Diagram, level: i64, horizon: usize) -> Result<OseledetsSplit> {
    OseledetsField::new(d, level, level + 1, horizon)?.split(level)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SummationOrder {
    Forward,
    Reverse,
}

#[derive(Clone, Debug, Serialize)]
pub struct DriftedSolution {
    /// `ŵ` at layer 1, in `E^u_1`.
    pub w_hat: Vec<f64>,
    /// `max_n |𝔸(n) ŵ - w_{n+1}|` over the supplied sequence.
    pub bound: f64,
    /// Number of series terms kept.
    pub truncation_index: usize,
    /// Distance of `ŵ` from `E^u_1`, relative to `|ŵ|`.
    pub residual: f64,
    pub delta: f64,
}

/// Horizon used when the solver builds its own splitting.
pub const DEFAULT_HORIZON: usize = 120;

/// Given `w_1, …, w_N` (layers `1..=N`) with `|A_n w_n - w_{n+1}|` decaying
/// like `e^{-θ n}`, returns the unique `ŵ ∈ E^u_1` whose orbit stays within
/// bounded distance of the sequence.
pub fn solve_drifted_recurrence(d: &Diagram, w_seq: &[Vec<f64>], theta: f64) -> Result<DriftedSolution> {
    let n = w_seq.len() as i64;
    let field = OseledetsField::new(d, 1, n.max(2), DEFAULT_HORIZON)?;
    solve_drifted_with(d, &field, w_seq, theta, SummationOrder::Forward)
}

pub fn solve_drifted_with(
    d: &Diagram,
    field: &OseledetsField,
    w_seq: &[Vec<f64>],
    theta: f64,
    order: SummationOrder,
) -> Result<DriftedSolution> {
    if w_seq.is_empty() {
        return Err(Error::InvalidArgument("empty vector sequence".into()));
    }
    if !(theta > 0.0) {
        return Err(Error::InvalidArgument("decay rate must be positive".into()));
    }
    let big_n = w_seq.len();
    let m = field.dim;
    if w_seq.iter().any(|w| w.len() != m) {
        return Err(Error::Dimension(format!("vectors must have length {m}")));
    }
    let w: Vec<Vector> = w_seq.iter().map(|x| DVector::from_column_slice(x)).collect();
    let a = |k: i64| d.incidence_at(k).to_f64();

    // u_1 = w_1, u_{k+1} = w_{k+1} - A_k w_k
    let mut defects = vec![w[0].clone()];
    let mut floors = vec![0.0];
    for k in 1..big_n {
        let aw = a(k as i64) * &w[k - 1];
        floors.push(64.0 * f64::EPSILON * (aw.norm() + w[k].norm()));
        defects.push(&w[k] - aw);
    }

    // declared decay, with the constant fitted on the first quarter
    let head = (big_n / 4).max(2).min(big_n);
    let c = (1..head)
        .map(|k| defects[k].norm() * (theta * k as f64).exp())
        .fold(0.0, f64::max);
    for k in 1..big_n {
        let allowed = 10.0 * c * (-theta * k as f64).exp() + floors[k];
        let observed = defects[k].norm();
        if observed > allowed {
            return Err(Error::DecayViolated {
                level: k as i64 + 1,
                observed,
                allowed,
            });
        }
    }

    let positive_min = field
        .spectrum
        .exponents
        .iter()
        .copied()
        .filter(|&t| t > ZERO_EXPONENT)
        .fold(f64::INFINITY, f64::min);
    let delta = if positive_min.is_finite() {
        theta.min(positive_min) / 2.0
    } else {
        theta / 2.0
    };

    // ŵ = Σ_k (B_k ⋯ B_1)^{-1} P^u ũ_{k+1}, B_k = e^{-δ} A_k, ũ_{k+1} = e^{-δk} u_{k+1}
    let mut terms: Vec<Vector> = Vec::with_capacity(big_n);
    for k in 0..big_n {
        let layer = k as i64 + 1;
        let scaled = &defects[k] * (-delta * k as f64).exp();
        let mut x = field.project_unstable(layer, &scaled)?;
        for j in (1..layer).rev() {
            let lu = (a(j) * (-delta).exp()).lu();
            x = lu.solve(&x).ok_or(Error::Singular(j))?;
            x = field.project_unstable(j, &x)?;
        }
        terms.push(x);
    }
    let sum = |ts: &mut dyn Iterator<Item = &Vector>| ts.fold(Vector::zeros(m), |acc, t| acc + t);
    let mut w_hat = match order {
        SummationOrder::Forward => sum(&mut terms.iter()),
        SummationOrder::Reverse => sum(&mut terms.iter().rev()),
    };
    let scale = w_hat.norm();
    let truncation_index = terms
        .iter()
        .rposition(|t| t.norm() >= 1e-14 * scale)
        .map_or(0, |i| i + 1);
    if truncation_index < terms.len() {
        w_hat = match order {
            SummationOrder::Forward => sum(&mut terms[..truncation_index].iter()),
            SummationOrder::Reverse => sum(&mut terms[..truncation_index].iter().rev()),
        };
    }

    // summation roundoff can leave E^u when the sum nearly cancels
    w_hat = field.project_unstable(1, &w_hat)?;
    let basis = field.unstable(1)?;
    let residual = linalg::relative_residual(&basis, &w_hat);

    let mut x = w_hat.clone();
    let mut bound = (&x - &w[0]).norm();
    for k in 1..big_n {
        x = a(k as i64) * x;
        bound = bound.max((&x - &w[k]).norm());
    }
    Ok(DriftedSolution {
        w_hat: w_hat.iter().copied().collect(),
        bound,
        truncation_index,
        residual,
        delta,
    })
}

