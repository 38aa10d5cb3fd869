//! Cylinder test functions, their integrals along vertical-flow arcs, the
//! canonical vectors and the obstructions to solving the cohomological
//! equation `d/dt u(h_t^+ x) = f(x)`.
//!
//! A [`CylinderFunction`] of depth `k` anchored at level `a` depends on the
//! edges `x_{a+1}, ..., x_{a+k}`. It may carry a horizontal-derivative
//! companion `φ` on the same cylinders, in which case it stands for
//!
//! ```text
//! f(x) = base(x_{a+1..a+k}) + φ(x_{a+1..a+k}) · H(x)
//! ```
//!
//! where `H(x) = Σ_{t ≥ 1} h_t(x_t)` is the `Φ_1^-`-position of `x` along
//! its horizontal leaf, measured in the reversed ordering with the path
//! continuing `down_rank`-minimally above the window. Along the horizontal
//! flow `H` grows at unit speed, so `φ` is the horizontal derivative of `f`.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use nalgebra::DVector;
use serde::Serialize;

use crate::cocycle::{solve_drifted_with, DriftedSolution, OseledetsField, SummationOrder};
use crate::diagram::Diagram;
use crate::error::{Error, Result};
use crate::linalg::{self, Vector};
use crate::measures::{finadd_from_vector, pairing, DualSystem, FinAddMeasure, InvariantMeasure, Side};
use crate::ordering::{arc_decompose, flow_advance, FlowArc, MarkovArc, PathWindow, Tail};

/// Position of edge words in the lexicographic enumeration of the cylinders
/// `{x_{n+1} = e_1, ..., x_{n+k} = e_k}`, without materializing the words.
#[derive(Clone, Debug, PartialEq)]
pub struct CylinderIndex {
    pub level: i64,
    pub depth: usize,
    // completions[t][w]: words (e_{t+1}, ..., e_k) whose bottom vertex is w
    completions: Vec<Vec<u64>>,
    // choices[t][w]: edges allowed at position t above vertex w, by index
    choices: Vec<Vec<Vec<usize>>>,
    len: usize,
}

impl CylinderIndex {
    pub fn new(d: &Diagram, level: i64, depth: usize) -> Result<Self> {
        if depth == 0 {
            return Err(Error::InvalidArgument("cylinder depth must be at least 1".into()));
        }
        d.check_levels(level + 1, level + depth as i64)?;
        let too_many = || Error::InvalidArgument("too many cylinders to index".into());
        let mut completions = vec![Vec::new(); depth + 1];
        completions[depth] = vec![1u64; d.graph_at(level + depth as i64).m_top()];
        let mut choices = vec![Vec::new(); depth];
        for t in (0..depth).rev() {
            // position t holds the edge of level `level + t + 1`
            let g = d.graph_at(level + t as i64 + 1);
            choices[t] = (0..g.m_bot())
                .map(|w| {
                    let mut c = g.in_edges(w).to_vec();
                    c.sort_unstable();
                    c
                })
                .collect();
            let above = &completions[t + 1];
            let row: Option<Vec<u64>> = (0..g.m_bot())
                .map(|w| {
                    g.in_edges(w)
                        .iter()
                        .try_fold(0u64, |acc, &e| acc.checked_add(above[g.edge(e).source]))
                })
                .collect();
            completions[t] = row.ok_or_else(too_many)?;
        }
        let total = completions[0]
            .iter()
            .try_fold(0u64, |acc, &c| acc.checked_add(c))
            .ok_or_else(too_many)?;
        Ok(CylinderIndex {
            level,
            depth,
            completions,
            choices,
            len: usize::try_from(total).map_err(|_| too_many())?,
        })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    fn graph<'d>(&self, d: &'d Diagram, t: usize) -> &'d crate::diagram::LevelGraph {
        d.graph_at(self.level + t as i64 + 1)
    }

    // the first position ranges over all edges, grouped by bottom vertex
    // only through the edge index
    fn first_choices(&self, d: &Diagram) -> std::ops::Range<usize> {
        0..self.graph(d, 0).edge_count()
    }

    fn weight(&self, d: &Diagram, t: usize, e: usize) -> u64 {
        self.completions[t + 1][self.graph(d, t).edge(e).source]
    }

    pub fn rank(&self, d: &Diagram, word: &[usize]) -> usize {
        let mut r: u64 = (0..word[0]).map(|c| self.weight(d, 0, c)).sum();
        for t in 1..word.len() {
            let below = self.graph(d, t - 1).edge(word[t - 1]).source;
            for &c in &self.choices[t][below] {
                if c == word[t] {
                    break;
                }
                r += self.weight(d, t, c);
            }
        }
        r as usize
    }

    pub fn word(&self, d: &Diagram, rank: usize) -> Vec<usize> {
        let mut r = rank as u64;
        let mut word = Vec::with_capacity(self.depth);
        for c in self.first_choices(d) {
            let w = self.weight(d, 0, c);
            if r < w {
                word.push(c);
                break;
            }
            r -= w;
        }
        for t in 1..self.depth {
            let below = self.graph(d, t - 1).edge(word[t - 1]).source;
            for &c in &self.choices[t][below] {
                let w = self.weight(d, t, c);
                if r < w {
                    word.push(c);
                    break;
                }
                r -= w;
            }
        }
        word
    }

    /// Calls `visit(rank, word)` for every word in increasing rank.
    pub fn for_each_word(&self, d: &Diagram, mut visit: impl FnMut(usize, &[usize])) {
        let mut word = vec![0usize; self.depth];
        // slot[t]: position of word[t] within its choice list
        let mut slot = vec![0usize; self.depth];
        let options = |t: usize, word: &[usize]| -> &[usize] {
            let below = self.graph(d, t - 1).edge(word[t - 1]).source;
            &self.choices[t][below]
        };
        let n0 = self.graph(d, 0).edge_count();
        if n0 == 0 {
            return;
        }
        let mut t = 0;
        let mut rank = 0;
        loop {
            // descend with first choices
            while t + 1 < self.depth {
                t += 1;
                slot[t] = 0;
                word[t] = options(t, &word)[0];
            }
            visit(rank, &word);
            rank += 1;
            // advance the last position that still has a next choice
            loop {
                slot[t] += 1;
                let next = if t == 0 {
                    (slot[0] < n0).then_some(slot[0])
                } else {
                    options(t, &word).get(slot[t]).copied()
                };
                if let Some(e) = next {
                    word[t] = e;
                    break;
                }
                if t == 0 {
                    return;
                }
                t -= 1;
            }
        }
    }

    /// Bottom vertex (layer `level + 1`) and top vertex (layer
    /// `level + depth + 1`) of a word.
    pub fn ends(&self, d: &Diagram, word: &[usize]) -> (usize, usize) {
        let bottom = self.graph(d, 0).edge(word[0]).target;
        let top = self.graph(d, self.depth - 1).edge(word[self.depth - 1]).source;
        (bottom, top)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CylinderFunction {
    pub anchor: i64,
    pub depth: usize,
    /// One value per cylinder, in the order of [`crate::diagram::cylinders`].
    pub values: Vec<f64>,
    /// Horizontal derivative on the same cylinders, centered so that
    /// `∫ φ dν = 0`.
    pub companion: Option<Vec<f64>>,
    pub index: CylinderIndex,
}

/// JSON form of a cylinder function.
#[derive(Clone, Debug, Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FunctionSpec {
    #[serde(default)]
    pub anchor: i64,
    pub depth: usize,
    pub values: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub companion: Option<Vec<f64>>,
    /// Subtract `∫ f dν` from the values.
    #[serde(default)]
    pub center: bool,
}

impl CylinderFunction {
    pub fn from_values(d: &Diagram, anchor: i64, depth: usize, values: Vec<f64>) -> Result<Self> {
        let index = CylinderIndex::new(d, anchor, depth)?;
        if values.len() != index.len() {
            return Err(Error::Dimension(format!(
                "{} values for {} cylinders",
                values.len(),
                index.len()
            )));
        }
        Ok(CylinderFunction {
            anchor,
            depth,
            values,
            companion: None,
            index,
        })
    }

    pub fn from_fn(d: &Diagram, anchor: i64, depth: usize, f: impl Fn(&[usize]) -> f64) -> Result<Self> {
        let index = CylinderIndex::new(d, anchor, depth)?;
        let mut values = Vec::with_capacity(index.len());
        index.for_each_word(d, |_, w| values.push(f(w)));
        Self::from_values(d, anchor, depth, values)
    }

    pub fn constant(d: &Diagram, anchor: i64, depth: usize, c: f64) -> Result<Self> {
        let index = CylinderIndex::new(d, anchor, depth)?;
        let n = index.len();
        Self::from_values(d, anchor, depth, vec![c; n])
    }

    /// Attaches a horizontal derivative, centered against `ν`.
    pub fn with_companion(mut self, d: &Diagram, m: &InvariantMeasure, phi: Vec<f64>) -> Result<Self> {
        if phi.len() != self.values.len() {
            return Err(Error::Dimension(format!(
                "companion has {} values for {} cylinders",
                phi.len(),
                self.values.len()
            )));
        }
        if self.anchor != 0 {
            return Err(Error::Unresolvable(
                "a horizontal companion requires the function to be anchored at level 0".into(),
            ));
        }
        let mean = cylinder_mean(d, m, &self.index, &phi)?;
        self.companion = Some(phi.into_iter().map(|x| x - mean).collect());
        Ok(self)
    }

    pub fn from_spec(d: &Diagram, m: &InvariantMeasure, spec: &FunctionSpec) -> Result<Self> {
        let mut f = Self::from_values(d, spec.anchor, spec.depth, spec.values.clone())?;
        if let Some(phi) = &spec.companion {
            f = f.with_companion(d, m, phi.clone())?;
        }
        if spec.center {
            f = FlowContext::new(d.clone())?.centered(&f)?;
        }
        Ok(f)
    }

    pub fn to_spec(&self) -> FunctionSpec {
        FunctionSpec {
            anchor: self.anchor,
            depth: self.depth,
            values: self.values.clone(),
            companion: self.companion.clone(),
            center: false,
        }
    }

    pub fn value(&self, d: &Diagram, word: &[usize]) -> f64 {
        self.values[self.index.rank(d, word)]
    }

    pub fn companion_value(&self, d: &Diagram, word: &[usize]) -> f64 {
        self.companion
            .as_ref()
            .map_or(0.0, |phi| phi[self.index.rank(d, word)])
    }

    /// `a·self + b·other` for functions on the same cylinders.
    pub fn combine(&self, a: f64, other: &CylinderFunction, b: f64) -> Result<Self> {
        if self.anchor != other.anchor || self.depth != other.depth {
            return Err(Error::Dimension("functions live on different cylinders".into()));
        }
        let mix = |x: &[f64], y: &[f64]| -> Vec<f64> { x.iter().zip(y).map(|(p, q)| a * p + b * q).collect() };
        let companion = match (&self.companion, &other.companion) {
            (None, None) => None,
            (p, q) => {
                let zeros = vec![0.0; self.values.len()];
                Some(mix(p.as_deref().unwrap_or(&zeros), q.as_deref().unwrap_or(&zeros)))
            }
        };
        Ok(CylinderFunction {
            anchor: self.anchor,
            depth: self.depth,
            values: mix(&self.values, &other.values),
            companion,
            index: self.index.clone(),
        })
    }

    pub fn scaled(&self, c: f64) -> Self {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|x| *x *= c);
        if let Some(phi) = &mut out.companion {
            phi.iter_mut().for_each(|x| *x *= c);
        }
        out
    }

    /// First layer whose Markovian arcs contain whole cylinders.
    pub fn resolved_level(&self) -> i64 {
        self.anchor + self.depth as i64 + 1
    }
}

/// `Σ_C g(C) ν(C)` over the cylinders of `index`.
pub fn cylinder_mean(d: &Diagram, m: &InvariantMeasure, index: &CylinderIndex, g: &[f64]) -> Result<f64> {
    let lo_layer = index.level + 1;
    let hi_layer = index.level + index.depth as i64 + 1;
    let v = m.plus.vector(lo_layer)?;
    let u = m.minus.vector(hi_layer)?;
    let mut total = 0.0;
    index.for_each_word(d, |r, w| {
        let (b, t) = index.ends(d, w);
        total += g[r] * v[b] * u[t];
    });
    Ok(total)
}

/// Diagram, invariant measure and the horizontal increments `h_t(e)` used by
/// every flow computation. Paths live on the levels `1..=top` where `top` is
/// the top of the diagram window.
#[derive(Clone, Debug)]
pub struct FlowContext {
    pub diagram: Diagram,
    pub measure: InvariantMeasure,
    pub top: i64,
    // h[t - 1][e] for t in 1..=top
    h: Vec<Vec<f64>>,
    // largest upper horizontal coordinate from each vertex of layer n, n in 1..=top+1
    h_max: Vec<Vec<f64>>,
    // Φ_1^- weighted upper horizontal coordinate, layers 1..=top+1
    mu: Vec<Vec<f64>>,
}

impl FlowContext {
    pub fn new(diagram: Diagram) -> Result<Self> {
        let (lo, top) = diagram.window();
        if lo > 1 || top < 2 {
            return Err(Error::InvalidArgument(
                "flow computations need a window containing levels 1 and 2".into(),
            ));
        }
        let measure = crate::measures::pf_measures(&diagram)?;
        let mut h = Vec::with_capacity(top as usize);
        for t in 1..=top {
            let g = diagram.graph_at(t);
            let u = measure.minus.vector(t + 1)?;
            let mut row = vec![0.0; g.edge_count()];
            for w in 0..g.m_bot() {
                let mut acc = 0.0;
                for &e in g.in_edges(w) {
                    row[e] = acc;
                    acc += u[g.edge(e).source];
                }
            }
            h.push(row);
        }
        let layers = top as usize + 1;
        let mut h_max = vec![Vec::new(); layers];
        let mut mu = vec![Vec::new(); layers];
        h_max[layers - 1] = vec![0.0; diagram.layer_size(top + 1)];
        mu[layers - 1] = vec![0.0; diagram.layer_size(top + 1)];
        for n in (1..=top).rev() {
            let g = diagram.graph_at(n);
            let i = (n - 1) as usize;
            let u = measure.minus.vector(n + 1)?;
            let mut hm = vec![0.0f64; g.m_bot()];
            let mut mm = vec![0.0; g.m_bot()];
            for (w, (hmw, mmw)) in hm.iter_mut().zip(mm.iter_mut()).enumerate() {
                for &e in g.in_edges(w) {
                    let s = g.edge(e).source;
                    *hmw = hmw.max(h[i][e] + h_max[i + 1][s]);
                    *mmw += h[i][e] * u[s] + mu[i + 1][s];
                }
            }
            h_max[i] = hm;
            mu[i] = mm;
        }
        Ok(FlowContext {
            diagram,
            measure,
            top,
            h,
            h_max,
            mu,
        })
    }

    pub fn h(&self, t: i64, e: usize) -> f64 {
        if t < 1 || t > self.top {
            0.0
        } else {
            self.h[(t - 1) as usize][e]
        }
    }

    /// `Σ_{t ≥ n} h_t(x_t)` over the levels of the path.
    pub fn upper_horizontal(&self, x: &PathWindow, n: i64) -> f64 {
        (n.max(x.lo).max(1)..=x.hi().min(self.top))
            .map(|t| self.h(t, x.edge(t)))
            .sum()
    }

    /// `H(x)`.
    pub fn horizontal_coordinate(&self, x: &PathWindow) -> f64 {
        self.upper_horizontal(x, 1)
    }

    fn v(&self, n: i64) -> Result<Vector> {
        Ok(DVector::from_column_slice(self.measure.plus.vector(n)?))
    }

    fn u(&self, n: i64) -> Result<Vector> {
        Ok(DVector::from_column_slice(self.measure.minus.vector(n)?))
    }

    fn check_function(&self, f: &CylinderFunction) -> Result<()> {
        if f.anchor < 0 || f.resolved_level() > self.top + 1 {
            return Err(Error::Unresolvable(format!(
                "cylinders on levels {}..={} do not fit the flow levels 1..={}",
                f.anchor + 1,
                f.anchor + f.depth as i64,
                self.top
            )));
        }
        Ok(())
    }

    /// `f(x)` at a path covering the levels of the flow window.
    pub fn eval(&self, f: &CylinderFunction, x: &PathWindow) -> Result<f64> {
        self.check_function(f)?;
        let word: Vec<usize> = (f.anchor + 1..=f.anchor + f.depth as i64).map(|t| x.edge(t)).collect();
        let r = f.index.rank(&self.diagram, &word);
        let phi = f.companion.as_ref().map_or(0.0, |p| p[r]);
        Ok(f.values[r] + if phi != 0.0 { phi * self.horizontal_coordinate(x) } else { 0.0 })
    }

    /// `∫ f dν`.
    pub fn mean(&self, f: &CylinderFunction) -> Result<f64> {
        self.check_function(f)?;
        let d = &self.diagram;
        let mut total = cylinder_mean(d, &self.measure, &f.index, &f.values)?;
        if let Some(phi) = &f.companion {
            let r = f.resolved_level();
            let v = self.measure.plus.vector(1)?;
            let u = self.measure.minus.vector(r)?;
            let mu = &self.mu[(r - 1) as usize];
            f.index.for_each_word(d, |rank, word| {
                let (b, t) = f.index.ends(d, word);
                let low: f64 = word.iter().enumerate().map(|(i, &e)| self.h(i as i64 + 1, e)).sum();
                total += phi[rank] * v[b] * (low * u[t] + mu[t]);
            });
        }
        Ok(total)
    }

    /// `f - ∫ f dν`.
    pub fn centered(&self, f: &CylinderFunction) -> Result<CylinderFunction> {
        let c = self.mean(f)?;
        let mut out = f.clone();
        out.values.iter_mut().for_each(|x| *x -= c);
        Ok(out)
    }

    /// `sup |f|` over paths.
    pub fn sup_norm(&self, f: &CylinderFunction) -> Result<f64> {
        let base = f.values.iter().fold(0.0f64, |a, x| a.max(x.abs()));
        let phi = f
            .companion
            .as_ref()
            .map_or(0.0, |p| p.iter().fold(0.0f64, |a, x| a.max(x.abs())));
        let hmax = self.measure.minus.vector(1)?.iter().fold(0.0f64, |a, &x| a.max(x));
        Ok(base + phi * hmax)
    }

    /// The canonical path into vertex `j` of layer `n`: `x_n` and every edge
    /// above it are `down_rank`-minimal, and the edges below are
    /// `up_rank`-minimal.
    pub fn canonical_path(&self, n: i64, j: usize) -> Result<PathWindow> {
        let d = &self.diagram;
        if n < 1 || n > self.top {
            return Err(Error::LevelMismatch(n));
        }
        let mut edges = vec![0; self.top as usize];
        let mut w = j;
        for t in n..=self.top {
            let e = d.graph_at(t).in_edges(w)[0];
            edges[(t - 1) as usize] = e;
            w = d.graph_at(t).edge(e).source;
        }
        let mut w = j;
        for t in (1..n).rev() {
            let e = d.graph_at(t).out_edges(w)[0];
            edges[(t - 1) as usize] = e;
            w = d.graph_at(t).edge(e).target;
        }
        PathWindow::new(d, 1, edges, Tail::Minimal, Tail::Minimal)
    }

    /// Canonical-vector families of the base values and the companion from
    /// the resolved level up, transported with the Perron direction split
    /// off so that small families keep their relative precision.
    pub fn resolve(&self, f: &CylinderFunction) -> Result<Resolved> {
        self.check_function(f)?;
        let d = &self.diagram;
        let r = f.resolved_level();
        let m_r = d.layer_size(r);
        let v1 = self.measure.plus.vector(f.anchor + 1)?;
        let mut b0 = Vector::zeros(m_r);
        let mut p0 = Vector::zeros(m_r);
        let mut l0 = Vector::zeros(m_r);
        f.index.for_each_word(d, |rank, word| {
            let (bot, top) = f.index.ends(d, word);
            b0[top] += f.values[rank] * v1[bot];
            if let Some(phi) = &f.companion {
                let low: f64 = word
                    .iter()
                    .enumerate()
                    .map(|(i, &e)| self.h(f.anchor + i as i64 + 1, e))
                    .sum();
                p0[top] += phi[rank] * v1[bot];
                l0[top] += phi[rank] * low * v1[bot];
            }
        });
        let count = (self.top + 1 - r + 1).max(1) as usize;
        let p = self.deflated_orbit(r, p0, count, None, true)?;
        let b = self.deflated_orbit(r, b0, count, None, false)?;
        let drives = if f.companion.is_some() {
            Some(
                (0..count.saturating_sub(1))
                    .map(|i| self.drive(r + i as i64, &p[i]))
                    .collect::<Vec<_>>(),
            )
        } else {
            None
        };
        let l = self.deflated_orbit(r, l0, count, drives.as_deref(), false)?;
        Ok(Resolved { level: r, base: b, lower: l, companion: p })
    }

    /// `D_n P_n` with `(D_n)_{ij} = Σ_{e: i → j} h_n(e)`.
    fn drive(&self, n: i64, p: &Vector) -> Vector {
        let g = self.diagram.graph_at(n);
        let mut out = Vector::zeros(g.m_top());
        for (idx, e) in g.edges().iter().enumerate() {
            out[e.source] += self.h(n, idx) * p[e.target];
        }
        out
    }

    fn deflated_orbit(
        &self,
        start: i64,
        x0: Vector,
        count: usize,
        drives: Option<&[Vector]>,
        centered: bool,
    ) -> Result<Vec<Vector>> {
        let mut kappa = if centered { 0.0 } else { x0.dot(&self.u(start)?) };
        let mut rest = &x0 - &self.v(start)? * x0.dot(&self.u(start)?);
        let mut out = Vec::with_capacity(count);
        out.push(&self.v(start)? * kappa + &rest);
        for i in 1..count {
            let n = start + i as i64 - 1;
            let v_next = self.v(n + 1)?;
            let u_next = self.u(n + 1)?;
            let a = self.diagram.incidence_at(n).to_f64();
            rest = a * rest;
            if let Some(dr) = drives {
                rest += &dr[i - 1];
            }
            let c = rest.dot(&u_next);
            rest -= &v_next * c;
            if !centered {
                kappa += c;
            }
            out.push(&v_next * kappa + &rest);
        }
        Ok(out)
    }

    /// Splits `∫_{γ_n^+(x)} f dΦ_1^+ = α + β · Σ_{t ≥ cut} h_t(x_t)` and
    /// returns `(α, β, cut)`.
    fn arc_parts(&self, f: &CylinderFunction, res: &Resolved, x: &PathWindow, n: i64) -> Result<(f64, f64, i64)> {
        let d = &self.diagram;
        let r = res.level;
        if n >= r {
            let j = x.vertex_below(d, n);
            let k = (n - r) as usize;
            return Ok((res.base[k][j] + res.lower[k][j], res.companion[k][j], n));
        }
        // enumerate the free levels below n that f or H can see
        let floor = if f.companion.is_some() { 1 } else { f.anchor + 1 };
        let mut alpha = 0.0;
        let mut beta = 0.0;
        let mid: f64 = (n.max(1)..r).map(|t| self.h(t, x.edge(t))).sum();
        let mut y = x.clone();
        let mut visit = |y: &PathWindow| -> Result<()> {
            let low_level = floor.min(n);
            let mass = self.measure.plus_value(low_level, y.vertex_below(d, low_level))?;
            let word: Vec<usize> = (f.anchor + 1..r).map(|t| y.edge(t)).collect();
            let rank = f.index.rank(d, &word);
            alpha += mass * f.values[rank];
            if let Some(phi) = &f.companion {
                let low: f64 = (1..n).map(|t| self.h(t, y.edge(t))).sum();
                alpha += mass * phi[rank] * (low + mid);
                beta += mass * phi[rank];
            }
            Ok(())
        };
        if floor >= n {
            visit(&y)?;
        } else {
            enumerate_below(d, &mut y, n - 1, floor, &mut visit)?;
        }
        Ok((alpha, beta, r))
    }

    /// `∫_{γ_n^+(x)} f dΦ_1^+`.
    pub fn markov_integral(&self, f: &CylinderFunction, res: &Resolved, arc: &MarkovArc) -> Result<f64> {
        let (alpha, beta, cut) = self.arc_parts(f, res, &arc.representative, arc.level)?;
        Ok(if beta != 0.0 {
            alpha + beta * self.upper_horizontal(&arc.representative, cut)
        } else {
            alpha
        })
    }

    /// Integral over a Markovian arc or a flow arc.
    pub fn arc_integral(&self, f: &CylinderFunction, arc: &ArcRef<'_>) -> Result<f64> {
        let res = self.resolve(f)?;
        match arc {
            ArcRef::Markov(a) => self.markov_integral(f, &res, a),
            ArcRef::Flow(a) => arc_decompose(&self.diagram, a)?
                .iter()
                .map(|p| self.markov_integral(f, &res, p))
                .sum(),
        }
    }

    /// `(w_n)_j = ∫_{γ_{j,n}^+} f dΦ_1^+` for `n` in `n_lo..=n_hi`.
    pub fn canonical_vectors(&self, f: &CylinderFunction, n_lo: i64, n_hi: i64) -> Result<CanonicalVectors> {
        if n_lo < 1 || n_hi > self.top || n_lo > n_hi {
            return Err(Error::WindowOverflow {
                lo: n_lo,
                hi: n_hi,
                window_lo: 1,
                window_hi: self.top,
            });
        }
        let res = self.resolve(f)?;
        let d = &self.diagram;
        let mut vectors = Vec::new();
        for n in n_lo..=n_hi {
            let w: Vec<f64> = if n >= res.level {
                let k = (n - res.level) as usize;
                (res.base[k].clone() + &res.lower[k]).iter().copied().collect()
            } else {
                (0..d.layer_size(n))
                    .map(|j| {
                        let arc = MarkovArc::new(d, n, self.canonical_path(n, j)?)?;
                        self.markov_integral(f, &res, &arc)
                    })
                    .collect::<Result<_>>()?
            };
            vectors.push(w);
        }
        let mut defects = Vec::new();
        for n in n_lo..n_hi {
            let defect = if n >= res.level {
                // holonomy-invariant parts cancel; what remains is D_n P_n
                self.drive(n, &res.companion[(n - res.level) as usize]).norm()
            } else {
                let a = d.incidence_at(n).to_f64();
                let w = DVector::from_column_slice(&vectors[(n - n_lo) as usize]);
                let next = DVector::from_column_slice(&vectors[(n - n_lo + 1) as usize]);
                (a * w - next).norm()
            };
            defects.push(defect);
        }
        Ok(CanonicalVectors { lo: n_lo, vectors, defects })
    }

    /// Largest difference of `∫_{γ_n^+} g dΦ_1^+` between arcs ending at a
    /// common vertex, over the levels `n_lo..=n_hi`.
    pub fn weak_lipschitz_constant(&self, g: &CylinderFunction, n_lo: i64, n_hi: i64) -> Result<WeakLipschitz> {
        let res = self.resolve(g)?;
        let d = &self.diagram;
        let mut per_level = Vec::new();
        for n in n_lo.max(1)..=n_hi.min(self.top) {
            let mut worst: f64 = 0.0;
            for j in 0..d.layer_size(n) {
                if n >= res.level {
                    let k = (n - res.level) as usize;
                    worst = worst.max(self.h_max[(n - 1) as usize][j] * res.companion[k][j].abs());
                    continue;
                }
                let mut lo = f64::INFINITY;
                let mut hi = f64::NEG_INFINITY;
                for upper in upper_paths(d, n, j, res.level - 1) {
                    let x = self.extend_upper(n, &upper)?;
                    let (alpha, beta, cut) = self.arc_parts(g, &res, &x, n)?;
                    let above = d.graph_at(cut - 1).edge(x.edge(cut - 1)).source;
                    let span = self.h_max[(cut - 1) as usize][above];
                    for val in [alpha, alpha + beta * span] {
                        lo = lo.min(val);
                        hi = hi.max(val);
                    }
                }
                worst = worst.max(hi - lo);
            }
            per_level.push((n, worst));
        }
        let constant = per_level.iter().fold(0.0f64, |a, p| a.max(p.1));
        Ok(WeakLipschitz { constant, per_level })
    }

    /// A full path with the given edges on levels `n..`, continued
    /// `down_rank`-minimally above and `up_rank`-minimally below.
    fn extend_upper(&self, n: i64, upper: &[usize]) -> Result<PathWindow> {
        let d = &self.diagram;
        let mut edges = vec![0; self.top as usize];
        for (i, &e) in upper.iter().enumerate() {
            edges[(n - 1) as usize + i] = e;
        }
        let last = n + upper.len() as i64 - 1;
        let mut w = d.graph_at(last).edge(upper[upper.len() - 1]).source;
        for t in last + 1..=self.top {
            let e = d.graph_at(t).in_edges(w)[0];
            edges[(t - 1) as usize] = e;
            w = d.graph_at(t).edge(e).source;
        }
        let mut w = d.graph_at(n).edge(upper[0]).target;
        for t in (1..n).rev() {
            let e = d.graph_at(t).out_edges(w)[0];
            edges[(t - 1) as usize] = e;
            w = d.graph_at(t).edge(e).target;
        }
        PathWindow::new(d, 1, edges, Tail::Minimal, Tail::Minimal)
    }
}

/// Calls `visit` on every path obtained by replacing the edges on levels
/// `floor..=level` with a path hanging from the vertex above.
fn enumerate_below(
    d: &Diagram,
    y: &mut PathWindow,
    level: i64,
    floor: i64,
    visit: &mut dyn FnMut(&PathWindow) -> Result<()>,
) -> Result<()> {
    let w = d.graph_at(level + 1).edge(y.edge(level + 1)).target;
    for &e in d.graph_at(level).out_edges(w) {
        y.edges[(level - y.lo) as usize] = e;
        if level == floor {
            visit(y)?;
        } else {
            enumerate_below(d, y, level - 1, floor, visit)?;
        }
    }
    Ok(())
}

/// Edge sequences `x_n, ..., x_last` with `x_n` ending at `j`.
fn upper_paths(d: &Diagram, n: i64, j: usize, last: i64) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = d.graph_at(n).in_edges(j).iter().map(|&e| vec![e]).collect();
    for t in n + 1..=last.max(n) {
        out = out
            .into_iter()
            .flat_map(|p| {
                let w = d.graph_at(t - 1).edge(p[p.len() - 1]).source;
                d.graph_at(t).in_edges(w).iter().map(move |&e| {
                    let mut q = p.clone();
                    q.push(e);
                    q
                }).collect::<Vec<_>>()
            })
            .collect();
    }
    out
}

pub enum ArcRef<'a> {
    Markov(&'a MarkovArc),
    Flow(&'a FlowArc),
}

/// Canonical-vector families of a function from its resolved level up to
/// `top + 1`.
#[derive(Clone, Debug)]
pub struct Resolved {
    pub level: i64,
    pub base: Vec<Vector>,
    pub lower: Vec<Vector>,
    pub companion: Vec<Vector>,
}

#[derive(Clone, Debug, Serialize)]
pub struct CanonicalVectors {
    pub lo: i64,
    pub vectors: Vec<Vec<f64>>,
    /// `|A_n w_n - w_{n+1}|` for `n = lo, lo + 1, ...`.
    pub defects: Vec<f64>,
}

impl CanonicalVectors {
    /// Least-squares decay rate of the defect over `n_lo..=n_hi`, ignoring
    /// levels where it vanishes.
    pub fn defect_rate(&self, n_lo: i64, n_hi: i64) -> Option<f64> {
        let pts: Vec<(f64, f64)> = self
            .defects
            .iter()
            .enumerate()
            .map(|(i, &x)| (self.lo + i as i64, x))
            .filter(|&(n, x)| n >= n_lo && n <= n_hi && x > 0.0)
            .map(|(n, x)| (n as f64, x.ln()))
            .collect();
        if pts.len() < 2 {
            return None;
        }
        let (x, y): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
        Some(-linalg::fit_line(&x, &y).0)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct WeakLipschitz {
    pub constant: f64,
    pub per_level: Vec<(i64, f64)>,
}

/// The finitely-additive measure `Φ_f^+` tracking the canonical vectors of
/// `f`, with the distance between the two.
#[derive(Clone, Debug)]
pub struct PhiF {
    pub measure: FinAddMeasure,
    pub solution: DriftedSolution,
    /// `max_n max_j |(w_n)_j - Φ_f^+(γ_{j,n}^+)|` over the levels used.
    pub bound: f64,
    pub theta: f64,
}

pub fn build_phi_f(ctx: &FlowContext, f: &CylinderFunction, field: &OseledetsField) -> Result<PhiF> {
    let top = ctx.top.min(field.hi);
    let cv = ctx.canonical_vectors(f, 1, top)?;
    let resolved = f.resolved_level();
    let theta = match cv.defect_rate(resolved.max(1), top) {
        Some(rate) if rate > 0.0 => rate,
        Some(rate) => {
            return Err(Error::DecayViolated {
                level: resolved,
                observed: rate,
                allowed: 0.0,
            })
        }
        None => field
            .spectrum
            .exponents
            .first()
            .copied()
            .filter(|t| *t > 0.0)
            .unwrap_or(1.0),
    };
    let solution = solve_drifted_with(&ctx.diagram, field, &cv.vectors, theta, SummationOrder::Forward)?;
    let measure = finadd_from_vector(&ctx.diagram, field, 1, &solution.w_hat, Side::Plus)?;
    let mut bound: f64 = 0.0;
    for (i, w) in cv.vectors.iter().enumerate() {
        let phi = measure.vector(1 + i as i64)?;
        for (a, b) in w.iter().zip(phi) {
            bound = bound.max((a - b).abs());
        }
    }
    Ok(PhiF {
        measure,
        solution,
        bound,
        theta,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Verdict {
    Zero,
    /// 1-based index of the first nonzero coefficient.
    Nonzero { index: usize },
}

#[derive(Clone, Debug, Serialize)]
pub struct ObstructionReport {
    /// `⟨Φ_f^+, Φ_i^-⟩`, `i = 1, ..., dim E^u`.
    pub coefficients: Vec<f64>,
    /// `∫ f dν`.
    pub mean: f64,
    pub tolerance: f64,
    pub verdict: Verdict,
    pub bound: f64,
}

impl ObstructionReport {
    pub fn summary(&self) -> String {
        match self.verdict {
            Verdict::Zero => format!("verdict: zero (all |coefficients| < {:e})", self.tolerance),
            Verdict::Nonzero { index } => format!(
                "verdict: nonzero at index {index} (coefficient {:e})",
                self.coefficients[index - 1]
            ),
        }
    }
}

pub fn obstructions(ctx: &FlowContext, f: &CylinderFunction, field: &OseledetsField, duals: &DualSystem) -> Result<ObstructionReport> {
    let phi_f = build_phi_f(ctx, f, field)?;
    let coefficients = duals
        .minus
        .iter()
        .map(|q| pairing(&phi_f.measure, q, duals.level))
        .collect::<Result<Vec<_>>>()?;
    let tolerance = 1e-8 * ctx.sup_norm(f)?;
    let verdict = coefficients
        .iter()
        .position(|c| c.abs() > tolerance)
        .map_or(Verdict::Zero, |i| Verdict::Nonzero { index: i + 1 });
    Ok(ObstructionReport {
        coefficients,
        mean: ctx.mean(f)?,
        tolerance,
        verdict,
        bound: phi_f.bound,
    })
}

/// Oseledets field over the flow levels and the dual system at level 1.
pub fn dual_setup(ctx: &FlowContext, horizon: usize) -> Result<(OseledetsField, DualSystem)> {
    let field = OseledetsField::new(&ctx.diagram, 1, ctx.top, horizon)?;
    let duals = DualSystem::new(&ctx.diagram, &ctx.measure, &field, 1)?;
    Ok((field, duals))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TracePoint {
    pub t: f64,
    pub integral: f64,
    pub running_sup: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct BirkhoffTrace {
    pub points: Vec<TracePoint>,
    /// Least-squares slope of `log(running sup)` against `log T` over the
    /// last two decades of `T`.
    pub exponent: Option<f64>,
}

impl BirkhoffTrace {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("t,integral,running_sup\n");
        for p in &self.points {
            writeln!(s, "{},{},{}", p.t, p.integral, p.running_sup).expect("write to string");
        }
        s
    }
}

/// `n` points per decade from `t_min` to `t_max`, log-spaced.
pub fn log_grid(t_min: f64, t_max: f64, per_decade: usize) -> Vec<f64> {
    let decades = (t_max / t_min).log10();
    let n = (decades * per_decade as f64).ceil().max(1.0) as usize;
    (0..=n)
        .map(|i| t_min * 10f64.powf(decades * i as f64 / n as f64))
        .collect()
}

pub fn growth_exponent(points: &[TracePoint]) -> Option<f64> {
    let t_max = points.iter().map(|p| p.t).fold(0.0, f64::max);
    let pts: Vec<(f64, f64)> = points
        .iter()
        .filter(|p| p.t >= t_max / 100.0 && p.t > 0.0 && p.running_sup > 0.0)
        .map(|p| (p.t.ln(), p.running_sup.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let (x, y): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
    Some(linalg::fit_line(&x, &y).0)
}

/// `∫_0^T f(h_t^+ x_0) dt` for every `T` in `times`, with the running
/// supremum over all arc boundaries met on the way.
/// Integral of `f` along the flow arc of length `t` from `x_0`, together with
/// the partial integrals at the Markovian breakpoints of that arc.
#[derive(Clone, Debug)]
pub struct ArcIntegral {
    pub elapsed: f64,
    pub integral: f64,
    pub breakpoints: Vec<(f64, f64)>,
}

pub fn arc_integral(ctx: &FlowContext, f: &CylinderFunction, res: &Resolved, x0: &PathWindow, t: f64) -> Result<ArcIntegral> {
    let d = &ctx.diagram;
    let adv = flow_advance(d, &ctx.measure, x0, t)?;
    let arc = FlowArc::new(d, x0.clone(), Some(adv.path.clone()))?;
    let mut elapsed = 0.0;
    let mut sum = 0.0;
    let mut breakpoints = Vec::new();
    for piece in arc_decompose(d, &arc)? {
        elapsed += piece.mass(&ctx.measure)?;
        sum += ctx.markov_integral(f, res, &piece)?;
        breakpoints.push((elapsed, sum));
    }
    Ok(ArcIntegral {
        elapsed: adv.elapsed,
        integral: sum,
        breakpoints,
    })
}

/// Merges arc integrals, given in increasing order of requested time, into
/// a trace. The running sup at `T` ranges over every breakpoint at or
/// before `T`, whichever arc it came from.
pub fn assemble_trace(arcs: &[ArcIntegral]) -> BirkhoffTrace {
    let mut boundaries: BTreeMap<u64, f64> = BTreeMap::new();
    for a in arcs {
        for &(e, s) in &a.breakpoints {
            boundaries.insert(e.to_bits(), s);
        }
    }
    let mut points = Vec::with_capacity(arcs.len());
    let mut sup: f64 = 0.0;
    let mut iter = boundaries.iter().peekable();
    for a in arcs {
        let t = a.elapsed;
        while let Some((&bits, &s)) = iter.peek() {
            if f64::from_bits(bits) > t * (1.0 + 1e-12) {
                break;
            }
            sup = sup.max(s.abs());
            iter.next();
        }
        sup = sup.max(a.integral.abs());
        points.push(TracePoint {
            t,
            integral: a.integral,
            running_sup: sup,
        });
    }
    let exponent = growth_exponent(&points);
    BirkhoffTrace { points, exponent }
}

pub fn birkhoff_trace(ctx: &FlowContext, f: &CylinderFunction, x0: &PathWindow, times: &[f64]) -> Result<BirkhoffTrace> {
    let res = ctx.resolve(f)?;
    let mut times: Vec<f64> = times.to_vec();
    times.sort_by(f64::total_cmp);
    let arcs = times
        .iter()
        .map(|&t| arc_integral(ctx, f, &res, x0, t))
        .collect::<Result<Vec<_>>>()?;
    Ok(assemble_trace(&arcs))
}

/// `(∫_0^T f(h_t^+ x_0) dt, running sup)`.
pub fn birkhoff_integral(ctx: &FlowContext, f: &CylinderFunction, x0: &PathWindow, t: f64) -> Result<(f64, f64)> {
    let trace = birkhoff_trace(ctx, f, x0, &[t])?;
    let p = trace.points[0];
    Ok((p.integral, p.running_sup))
}

#[derive(Clone, Debug, Serialize)]
pub struct TransferSample {
    pub anchor: serde_json::Value,
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub sup_norm: f64,
    pub warning: Option<String>,
}

impl TransferSample {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("t,u\n");
        for (t, u) in self.times.iter().zip(&self.values) {
            writeln!(s, "{t},{u}").expect("write to string");
        }
        s
    }
}

/// `u(h_t^+ x_0) = ∫_0^t f(h_s^+ x_0) ds` on a grid, anchored at `u(x_0) = 0`.
pub fn transfer_function(
    ctx: &FlowContext,
    f: &CylinderFunction,
    x0: &PathWindow,
    grid: &[f64],
    report: Option<&ObstructionReport>,
) -> Result<TransferSample> {
    let trace = birkhoff_trace(ctx, f, x0, grid)?;
    Ok(transfer_from_trace(x0, &trace, report))
}

pub fn transfer_from_trace(x0: &PathWindow, trace: &BirkhoffTrace, report: Option<&ObstructionReport>) -> TransferSample {
    let warning = match report.map(|r| &r.verdict) {
        Some(Verdict::Nonzero { index }) => Some(format!(
            "obstruction {index} does not vanish; u is not expected to stay bounded"
        )),
        _ => None,
    };
    TransferSample {
        anchor: x0.to_json(),
        times: trace.points.iter().map(|p| p.t).collect(),
        values: trace.points.iter().map(|p| p.integral).collect(),
        sup_norm: trace.points.iter().fold(0.0f64, |a, p| a.max(p.integral.abs())),
        warning,
    }
}

/// Horizontal difference quotient of a cylinder function `f` at the
/// resolution of its top level: on the cylinder of `(x_lo, ..., x_{a+k})`,
/// `(f(succ̃ x) - f(x)) / Φ_1^-(γ^-(x))`, and `0` where the reversed
/// successor leaves the window.
pub fn horizontal_difference_quotient(
    d: &Diagram,
    m: &InvariantMeasure,
    f: &CylinderFunction,
    lo: i64,
) -> Result<CylinderFunction> {
    let top = f.anchor + f.depth as i64;
    if lo > f.anchor + 1 {
        return Err(Error::InvalidArgument("the quotient must reach below the function".into()));
    }
    let depth = (top - lo + 1) as usize;
    let index = CylinderIndex::new(d, lo - 1, depth)?;
    let u = m.minus.vector(top + 1)?;
    let offset = (f.anchor + 1 - lo) as usize;
    let mut values = vec![0.0; index.len()];
    let mut next = vec![0usize; depth];
    index.for_each_word(d, |rank, word| {
        next.copy_from_slice(word);
        if reversed_successor_in_place(d, lo, &mut next) {
            let here = f.value(d, &word[offset..]);
            let there = f.value(d, &next[offset..]);
            let (_, t) = index.ends(d, word);
            values[rank] = (there - here) / u[t];
        }
    });
    Ok(CylinderFunction {
        anchor: lo - 1,
        depth,
        values,
        companion: None,
        index,
    })
}

/// The `𝔬̃`-successor of the word on levels `lo..` written over `word`;
/// `false` when the word is maximal.
fn reversed_successor_in_place(d: &Diagram, lo: i64, word: &mut [usize]) -> bool {
    let Some(i) = (0..word.len()).rev().find(|&i| {
        let g = d.graph_at(lo + i as i64);
        let e = g.edge(word[i]);
        e.down_rank + 1 < g.in_edges(e.target).len()
    }) else {
        return false;
    };
    let g = d.graph_at(lo + i as i64);
    let e = g.edge(word[i]);
    word[i] = g.in_edges(e.target)[e.down_rank + 1];
    for j in i + 1..word.len() {
        let below = d.graph_at(lo + j as i64 - 1).edge(word[j - 1]).source;
        word[j] = d.graph_at(lo + j as i64).in_edges(below)[0];
    }
    true
}

/// Obstruction reports as JSON.
pub fn report_json(r: &ObstructionReport) -> serde_json::Value {
    serde_json::to_value(r).expect("serializable report")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diagram::{cylinders, fibonacci_graph};

    #[test]
    fn index_matches_enumeration() {
        let d = Diagram::stationary(fibonacci_graph(), (-3, 8)).unwrap();
        for k in 1..6 {
            let idx = CylinderIndex::new(&d, 0, k).unwrap();
            let cyl = cylinders(&d, 0, k).unwrap();
            assert_eq!(idx.len(), cyl.len());
            for (r, c) in cyl.iter().enumerate() {
                assert_eq!(idx.word(&d, r), c.edges);
                assert_eq!(idx.rank(&d, &c.edges), r);
            }
            let mut seen = Vec::new();
            idx.for_each_word(&d, |r, w| seen.push((r, w.to_vec())));
            let expected: Vec<_> = cyl.iter().enumerate().map(|(r, c)| (r, c.edges.clone())).collect();
            assert_eq!(seen, expected);
        }
    }

    #[test]
    fn in_place_successor_agrees_with_paths() {
        let d = Diagram::stationary_matrix(&[vec![2, 1], vec![1, 3]], (-4, 4)).unwrap();
        let idx = CylinderIndex::new(&d, -3, 5).unwrap();
        idx.for_each_word(&d, |_, w| {
            let x = PathWindow::new(&d, -2, w.to_vec(), Tail::Vertex, Tail::Vertex).unwrap();
            let mut y = w.to_vec();
            match crate::ordering::successor_reversed(&d, &x) {
                Some(s) => {
                    assert!(reversed_successor_in_place(&d, -2, &mut y));
                    assert_eq!(y, s.edges);
                }
                None => assert!(!reversed_successor_in_place(&d, -2, &mut y)),
            }
        });
    }
}
