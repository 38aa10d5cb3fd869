//! Finitely-additive measures on Markovian arcs, represented as
//! cocycle-equivariant vector families, and the invariant measure they
//! produce on cylinders.
//!
//! A `+` family assigns to layer `n` the vector `v_n` with `(v_n)_i` the
//! value on arcs `γ_n^+(x)` whose edge `x_n` ends at vertex `i`; it satisfies
//! `v_{n+1} = A_n v_n`. A `-` family assigns to layer `n` the values on arcs
//! `γ_{n-1}^-(x)` whose edge `x_{n-1}` starts at vertex `i`, and satisfies
//! `u_n = A_n^t u_{n+1}`. With both indexed by layer, the pairing
//! `⟨v_n, u_n⟩` does not depend on `n`.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::cocycle::OseledetsField;
use crate::diagram::{Cylinder, Diagram};
use crate::error::{Error, Result};
use crate::linalg::{self, Mat, Vector};

/// Levels of the extension used to forget the starting vector when the
/// Perron–Frobenius directions are found by iteration.
pub const BURN_IN: i64 = 256;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    #[serde(rename = "+")]
    Plus,
    #[serde(rename = "-")]
    Minus,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinAddMeasure {
    pub side: Side,
    /// First layer covered.
    pub lo: i64,
    pub vectors: Vec<Vec<f64>>,
    /// Fitted exponential decay rate toward the far end (`-∞` for `+`,
    /// `+∞` for `-`); `None` for the zero measure.
    pub decay_rate: Option<f64>,
}

impl FinAddMeasure {
    pub fn hi(&self) -> i64 {
        self.lo + self.vectors.len() as i64 - 1
    }

    pub fn covers(&self, n: i64) -> bool {
        n >= self.lo && n <= self.hi()
    }

    pub fn vector(&self, n: i64) -> Result<&[f64]> {
        if !self.covers(n) {
            return Err(Error::LevelMismatch(n));
        }
        Ok(&self.vectors[(n - self.lo) as usize])
    }

    /// Value on any Markovian arc of layer `n` ending at `vertex`. For the
    /// `+` side this is `Φ(γ_n^+(x))` with `F(x_n) = vertex`.
    pub fn value(&self, n: i64, vertex: usize) -> Result<f64> {
        Ok(self.vector(n)?[vertex])
    }

    pub fn levels(&self) -> Vec<i64> {
        (self.lo..=self.hi()).collect()
    }

    pub fn scaled(&self, c: f64) -> FinAddMeasure {
        FinAddMeasure {
            side: self.side,
            lo: self.lo,
            vectors: self
                .vectors
                .iter()
                .map(|v| v.iter().map(|x| c * x).collect())
                .collect(),
            decay_rate: if c == 0.0 { None } else { self.decay_rate },
        }
    }

    /// Sum of `c_i * family_i` over families sharing side and layers.
    pub fn combination(families: &[&FinAddMeasure], coeffs: &[f64]) -> Result<FinAddMeasure> {
        let first = families
            .first()
            .ok_or_else(|| Error::InvalidArgument("no families to combine".into()))?;
        let mut vectors = vec![vec![0.0; first.vectors[0].len()]; first.vectors.len()];
        for (f, &c) in families.iter().zip(coeffs) {
            if f.side != first.side || f.lo != first.lo || f.vectors.len() != first.vectors.len() {
                return Err(Error::LevelMismatch(f.lo));
            }
            for (acc, v) in vectors.iter_mut().zip(&f.vectors) {
                for (a, x) in acc.iter_mut().zip(v) {
                    *a += c * x;
                }
            }
        }
        let mut out = FinAddMeasure {
            side: first.side,
            lo: first.lo,
            vectors,
            decay_rate: None,
        };
        out.decay_rate = fit_decay(&out);
        Ok(out)
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "side": self.side,
            "levels": self.levels(),
            "vectors": self.vectors,
            "decay_rate": self.decay_rate,
        })
    }
}

/// Least-squares decay rate of `log|v_n|` over the half of the window where
/// the family is supposed to decay.
fn fit_decay(f: &FinAddMeasure) -> Option<f64> {
    let n = f.vectors.len();
    let half: Vec<usize> = match f.side {
        Side::Plus => (0..n.div_ceil(2)).collect(),
        Side::Minus => (n / 2..n).collect(),
    };
    let pts: Vec<(f64, f64)> = half
        .iter()
        .filter_map(|&i| {
            let norm = linalg::norm(&f.vectors[i]);
            (norm > 0.0).then(|| ((f.lo + i as i64) as f64, norm.ln()))
        })
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let (x, y): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
    let (slope, _) = linalg::fit_line(&x, &y);
    Some(match f.side {
        Side::Plus => slope,
        Side::Minus => -slope,
    })
}

/// The positive measures `Φ_1^±` and the invariant probability measure
/// `ν = Φ_1^+ × Φ_1^-` they define on cylinders.
#[derive(Clone, Debug)]
pub struct InvariantMeasure {
    pub plus: FinAddMeasure,
    pub minus: FinAddMeasure,
}

fn positive_product_exists(d: &Diagram) -> bool {
    let (lo, hi) = d.window();
    let m = d.layer_size(lo);
    let mut pattern = vec![vec![false; m]; m];
    for (i, row) in pattern.iter_mut().enumerate() {
        row[i] = true;
    }
    for n in lo..=hi {
        let a = d.incidence_at(n);
        pattern = (0..a.rows())
            .map(|i| {
                (0..pattern[0].len())
                    .map(|j| (0..a.cols()).any(|k| a.get(i, k) > 0 && pattern[k][j]))
                    .collect()
            })
            .collect();
        if pattern.iter().flatten().all(|&b| b) {
            return true;
        }
    }
    false
}

/// Perron–Frobenius families covering layers `min(lo, 0) ..= max(hi + 1, 1)`
/// of the window, scaled so that `Σ_i (v_0)_i = 1` and `⟨v_0, u_0⟩ = 1`.
pub fn pf_measures(d: &Diagram) -> Result<InvariantMeasure> {
    if !positive_product_exists(d) {
        return Err(Error::NoPositivityWindow);
    }
    let (wlo, whi) = d.window();
    let lo = wlo.min(0);
    let hi = (whi + 1).max(1);
    let count = (hi - lo + 1) as usize;

    // plus side: iterate up from far below
    let mut dir = DVector::from_element(d.layer_size(lo - BURN_IN), 1.0);
    for n in lo - BURN_IN..lo {
        dir = d.incidence_at(n).to_f64() * dir;
        dir /= dir.sum();
    }
    let mut dirs = vec![dir.clone()];
    let mut growth = Vec::new();
    for n in lo..hi {
        let next = d.incidence_at(n).to_f64() * dirs.last().unwrap();
        let c = next.sum();
        growth.push(c);
        dirs.push(next / c);
    }
    let mut scale = vec![0.0; count];
    let zero = (0 - lo) as usize;
    scale[zero] = 1.0 / dirs[zero].sum();
    for k in zero + 1..count {
        scale[k] = scale[k - 1] * growth[k - 1];
    }
    for k in (0..zero).rev() {
        scale[k] = scale[k + 1] / growth[k];
    }
    let plus: Vec<Vec<f64>> = dirs
        .iter()
        .zip(&scale)
        .map(|(v, s)| v.iter().map(|x| x * s).collect())
        .collect();

    // minus side: iterate down from far above
    let mut dir = DVector::from_element(d.layer_size(hi + BURN_IN), 1.0);
    for n in (hi..hi + BURN_IN).rev() {
        dir = d.incidence_at(n).to_f64().transpose() * dir;
        dir /= dir.sum();
    }
    let mut mdirs = vec![DVector::zeros(0); count];
    mdirs[count - 1] = dir;
    let mut mgrowth = vec![0.0; count - 1];
    for n in (lo..hi).rev() {
        let k = (n - lo) as usize;
        let next = d.incidence_at(n).to_f64().transpose() * &mdirs[k + 1];
        let c = next.sum();
        mgrowth[k] = c;
        mdirs[k] = next / c;
    }
    let mut mscale = vec![0.0; count];
    mscale[zero] = 1.0 / linalg::dot(plus[zero].as_slice(), mdirs[zero].as_slice());
    for k in (0..zero).rev() {
        mscale[k] = mscale[k + 1] * mgrowth[k];
    }
    for k in zero + 1..count {
        mscale[k] = mscale[k - 1] / mgrowth[k - 1];
    }
    let minus: Vec<Vec<f64>> = mdirs
        .iter()
        .zip(&mscale)
        .map(|(v, s)| v.iter().map(|x| x * s).collect())
        .collect();

    let mut plus = FinAddMeasure {
        side: Side::Plus,
        lo,
        vectors: plus,
        decay_rate: None,
    };
    plus.decay_rate = fit_decay(&plus);
    let mut minus = FinAddMeasure {
        side: Side::Minus,
        lo,
        vectors: minus,
        decay_rate: None,
    };
    minus.decay_rate = fit_decay(&minus);
    Ok(InvariantMeasure { plus, minus })
}

impl InvariantMeasure {
    /// `Φ_1^+` value of the arcs of layer `n` ending at `vertex`.
    pub fn plus_value(&self, n: i64, vertex: usize) -> Result<f64> {
        self.plus.value(n, vertex)
    }

    pub fn minus_value(&self, n: i64, vertex: usize) -> Result<f64> {
        self.minus.value(n, vertex)
    }

    pub fn nu(&self, c: &Cylinder) -> Result<f64> {
        nu_of_cylinder(self, c)
    }
}

/// `ν(C) = Φ_1^+(lower tail of C) · Φ_1^-(upper tail of C)`.
pub fn nu_of_cylinder(m: &InvariantMeasure, c: &Cylinder) -> Result<f64> {
    m_functional_with(&m.plus, &m.minus, c)
}

/// `m_{Φ^-}(C) = Φ_1^+(lower tail of C) · Φ^-(upper tail of C)`.
pub fn m_functional(m: &InvariantMeasure, q: &FinAddMeasure, c: &Cylinder) -> Result<f64> {
    m_functional_with(&m.plus, q, c)
}

fn m_functional_with(plus: &FinAddMeasure, minus: &FinAddMeasure, c: &Cylinder) -> Result<f64> {
    if minus.side != Side::Minus || plus.side != Side::Plus {
        return Err(Error::InvalidArgument("expected a + family and a - family".into()));
    }
    let bottom_layer = c.level + 1;
    let top_layer = c.level + c.depth() as i64 + 1;
    Ok(plus.value(bottom_layer, c.bottom)? * minus.value(top_layer, c.top)?)
}

/// `Φ_1^+ × Φ^-` on cylinders.
#[derive(Clone, Debug)]
pub struct ProductFunctional<'a> {
    pub plus: &'a FinAddMeasure,
    pub minus_measure: &'a FinAddMeasure,
}

impl ProductFunctional<'_> {
    pub fn eval(&self, c: &Cylinder) -> Result<f64> {
        m_functional_with(self.plus, self.minus_measure, c)
    }
}

/// `⟨v_n, u_n⟩ = Σ_j (v_n)_j (u_n)_j`.
pub fn pairing(p: &FinAddMeasure, q: &FinAddMeasure, n: i64) -> Result<f64> {
    if p.side != Side::Plus || q.side != Side::Minus {
        return Err(Error::InvalidArgument("pairing takes a + family and a - family".into()));
    }
    Ok(linalg::dot(p.vector(n)?, q.vector(n)?))
}

fn project_along(basis: &Mat, annihilator: &Mat, x: &Vector) -> Vector {
    if basis.ncols() == 0 {
        return Vector::zeros(x.len());
    }
    let g = annihilator.transpose() * basis;
    match g.lu().solve(&(annihilator.transpose() * x)) {
        Some(c) => basis * c,
        None => x.clone(),
    }
}

/// Transports `v` from layer `level` across the layers of `field`. For the
/// `+` side `v` must lie in `E^u`; for the `-` side in the unstable subspace
/// of the transpose cocycle.
pub fn finadd_from_vector(
    d: &Diagram,
    field: &OseledetsField,
    level: i64,
    v: &[f64],
    side: Side,
) -> Result<FinAddMeasure> {
    let x = DVector::from_column_slice(v);
    let (basis_at, other_at): (
        Box<dyn Fn(i64) -> Result<Mat>>,
        Box<dyn Fn(i64) -> Result<Mat>>,
    ) = match side {
        Side::Plus => (
            Box::new(|n| field.unstable(n)),
            Box::new(|n| field.dual_unstable(n)),
        ),
        Side::Minus => (
            Box::new(|n| field.dual_unstable(n)),
            Box::new(|n| field.unstable(n)),
        ),
    };
    let residual = linalg::relative_residual(&basis_at(level)?, &x);
    if residual > 1e-9 {
        return Err(Error::NotInUnstable(residual));
    }
    let count = (field.hi - field.lo + 1) as usize;
    let mut vectors = vec![Vector::zeros(x.len()); count];
    let at = |n: i64| (n - field.lo) as usize;
    vectors[at(level)] = x.clone();
    // the transport is re-projected onto the invariant subspace at each step
    for n in level..field.hi {
        let a = d.incidence_at(n).to_f64();
        let prev = &vectors[at(n)];
        let next = match side {
            Side::Plus => a * prev,
            Side::Minus => a
                .transpose()
                .lu()
                .solve(prev)
                .ok_or(Error::Singular(n))?,
        };
        vectors[at(n + 1)] = project_along(&basis_at(n + 1)?, &other_at(n + 1)?, &next);
    }
    for n in (field.lo..level).rev() {
        let a = d.incidence_at(n).to_f64();
        let prev = &vectors[at(n + 1)];
        let next = match side {
            Side::Plus => a.lu().solve(prev).ok_or(Error::Singular(n))?,
            Side::Minus => a.transpose() * prev,
        };
        vectors[at(n)] = project_along(&basis_at(n)?, &other_at(n)?, &next);
    }
    let mut out = FinAddMeasure {
        side,
        lo: field.lo,
        vectors: vectors.iter().map(|v| v.iter().copied().collect()).collect(),
        decay_rate: None,
    };
    out.decay_rate = fit_decay(&out);
    Ok(out)
}

/// Biorthogonal bases `{Φ_i^+}` and `{Φ_i^-}` adapted to the Oseledets
/// flags, with `Φ_1^±` the Perron–Frobenius families and
/// `⟨Φ_i^+, Φ_j^-⟩ = δ_ij`.
#[derive(Clone, Debug)]
pub struct DualSystem {
    pub level: i64,
    pub plus: Vec<FinAddMeasure>,
    pub minus: Vec<FinAddMeasure>,
    /// `⟨Φ_i^+, Φ_j^-⟩` at `level`.
    pub pairing_matrix: Vec<Vec<f64>>,
    /// Condition number of the pairing between the unit-normalized bases.
    pub condition: f64,
}

/// Unit vector in `span(a)` orthogonal to `span(b)` (`b` may be empty).
fn flag_vector(a: &Mat, b: &Mat) -> Vector {
    if b.ncols() == 0 {
        return a.column(0).normalize();
    }
    // the coefficient vector spans the null space of b^t a, i.e. the
    // complement of its row space
    let c = b.transpose() * a;
    let vt = c.svd(false, true).v_t.expect("right singular vectors");
    let rows = linalg::orthonormalize(&vt.transpose());
    let coeffs = linalg::complement(&rows).column(0).into_owned();
    (a * coeffs).normalize()
}

fn fix_sign(v: Vector) -> Vector {
    let s = v.iter().copied().find(|x| x.abs() > 1e-12).unwrap_or(1.0);
    if s < 0.0 {
        -v
    } else {
        v
    }
}

impl DualSystem {
    pub fn new(d: &Diagram, measure: &InvariantMeasure, field: &OseledetsField, level: i64) -> Result<Self> {
        let dim = field.unstable_dim;
        let f = field.forward_frame(level)?;
        let g = field.backward_frame(level)?;
        let mut plus_vecs = Vec::with_capacity(dim);
        let mut minus_vecs = Vec::with_capacity(dim);
        for i in 0..dim {
            let p = flag_vector(&f.columns(0, i + 1).into_owned(), &g.columns(0, i).into_owned());
            let q = flag_vector(&g.columns(0, i + 1).into_owned(), &f.columns(0, i).into_owned());
            plus_vecs.push(fix_sign(p));
            minus_vecs.push(fix_sign(q));
        }
        let raw = Mat::from_fn(dim, dim, |i, j| plus_vecs[i].dot(&minus_vecs[j]));
        let condition = if dim == 0 {
            1.0
        } else {
            let s = raw.clone().svd(false, false).singular_values;
            s.max() / s.min()
        };
        if !(condition <= 1e8) {
            return Err(Error::DegenerateDuals(condition));
        }
        if dim > 0 {
            // Φ_1^± keep the Perron–Frobenius normalization
            plus_vecs[0] = DVector::from_column_slice(measure.plus.vector(level)?);
            minus_vecs[0] = DVector::from_column_slice(measure.minus.vector(level)?);
        }
        for i in 0..dim {
            let s = plus_vecs[i].dot(&minus_vecs[i]);
            minus_vecs[i] /= s;
        }
        let plus = plus_vecs
            .iter()
            .map(|v| finadd_from_vector(d, field, level, v.as_slice(), Side::Plus))
            .collect::<Result<Vec<_>>>()?;
        let minus = minus_vecs
            .iter()
            .map(|v| finadd_from_vector(d, field, level, v.as_slice(), Side::Minus))
            .collect::<Result<Vec<_>>>()?;
        let pairing_matrix = (0..dim)
            .map(|i| (0..dim).map(|j| plus_vecs[i].dot(&minus_vecs[j])).collect())
            .collect();
        Ok(DualSystem {
            level,
            plus,
            minus,
            pairing_matrix,
            condition,
        })
    }

    pub fn dim(&self) -> usize {
        self.plus.len()
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct BaseDecomposition {
    pub coefficients: Vec<f64>,
    /// Largest relative reconstruction error over the layers.
    pub reconstruction_error: f64,
}

/// Coefficients `c_i = ⟨Φ^+, Φ_i^-⟩` of `Φ^+ = Σ c_i Φ_i^+`.
pub fn base_decomposition(p: &FinAddMeasure, duals: &DualSystem) -> Result<BaseDecomposition> {
    if duals.condition > 1e8 {
        return Err(Error::DegenerateDuals(duals.condition));
    }
    let coefficients = duals
        .minus
        .iter()
        .map(|q| pairing(p, q, duals.level))
        .collect::<Result<Vec<_>>>()?;
    let mut reconstruction_error: f64 = 0.0;
    for n in p.lo.max(duals.plus.first().map_or(p.lo, |f| f.lo))..=p.hi() {
        let target = p.vector(n)?;
        let mut rebuilt = vec![0.0; target.len()];
        for (f, c) in duals.plus.iter().zip(&coefficients) {
            if !f.covers(n) {
                continue;
            }
            for (r, x) in rebuilt.iter_mut().zip(f.vector(n)?) {
                *r += c * x;
            }
        }
        let diff: Vec<f64> = target.iter().zip(&rebuilt).map(|(a, b)| a - b).collect();
        let scale = linalg::norm(target).max(1e-300);
        reconstruction_error = reconstruction_error.max(linalg::norm(&diff) / scale);
    }
    Ok(BaseDecomposition {
        coefficients,
        reconstruction_error,
    })
}
