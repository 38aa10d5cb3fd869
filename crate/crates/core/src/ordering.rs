//! Vershik and reversed-Vershik orderings on finite windows of paths, the
//! adic successor map, vertical-flow arcs and their decomposition into
//! Markovian arcs.
//!
//! A [`PathWindow`] stores the edges `x_lo, ..., x_hi` of a path. Viewed as
//! a point of the path space it stands for the atom `γ_lo^+(x)`: all paths
//! sharing those edges. The Vershik ordering compares two paths at the
//! highest level where they differ, by `up_rank`; the reversed ordering
//! compares at the lowest level, by `down_rank`.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::diagram::{Diagram, LevelGraph};
use crate::error::{Error, Result};
use crate::measures::InvariantMeasure;

/// How a path continues beyond an end of its window.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Tail {
    Minimal,
    Maximal,
    /// Continues through the end vertex of the window, otherwise unspecified.
    Vertex,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct PathWindow {
    pub lo: i64,
    /// `edges[i]` indexes an edge of `Γ_{lo+i}`.
    pub edges: Vec<usize>,
    pub top: Tail,
    pub bottom: Tail,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Comparison {
    Less,
    Equal,
    Greater,
    Incomparable,
}

impl From<Ordering> for Comparison {
    fn from(o: Ordering) -> Self {
        match o {
            Ordering::Less => Comparison::Less,
            Ordering::Equal => Comparison::Equal,
            Ordering::Greater => Comparison::Greater,
        }
    }
}

fn up_rank(d: &Diagram, level: i64, e: usize) -> usize {
    d.graph_at(level).edge(e).up_rank
}

fn is_up_minimal(g: &LevelGraph, e: usize) -> bool {
    g.edge(e).up_rank == 0
}

fn is_up_maximal(g: &LevelGraph, e: usize) -> bool {
    let edge = g.edge(e);
    edge.up_rank + 1 == g.out_edges(edge.source).len()
}

fn is_down_maximal(g: &LevelGraph, e: usize) -> bool {
    let edge = g.edge(e);
    edge.down_rank + 1 == g.in_edges(edge.target).len()
}

impl PathWindow {
    pub fn new(d: &Diagram, lo: i64, edges: Vec<usize>, top: Tail, bottom: Tail) -> Result<Self> {
        if edges.is_empty() {
            return Err(Error::InvalidArgument("a path window needs at least one level".into()));
        }
        let p = PathWindow { lo, edges, top, bottom };
        d.check_levels(p.lo, p.hi())?;
        for (i, &e) in p.edges.iter().enumerate() {
            let level = lo + i as i64;
            let g = d.graph_at(level);
            if e >= g.edge_count() {
                return Err(Error::BadPath {
                    level,
                    detail: format!("edge index {e} out of range"),
                });
            }
            if i > 0 {
                let below = d.graph_at(level - 1).edge(p.edges[i - 1]);
                if g.edge(e).target != below.source {
                    return Err(Error::BadPath {
                        level,
                        detail: "target of the edge differs from the source of the edge below".into(),
                    });
                }
            }
        }
        Ok(p)
    }

    /// The `𝔬`-minimal path of levels `lo..=hi` through `top_vertex`, a vertex
    /// of layer `hi + 1`.
    pub fn minimal(d: &Diagram, lo: i64, hi: i64, top_vertex: usize) -> Result<Self> {
        Self::extremal(d, lo, hi, top_vertex, false)
    }

    pub fn maximal(d: &Diagram, lo: i64, hi: i64, top_vertex: usize) -> Result<Self> {
        Self::extremal(d, lo, hi, top_vertex, true)
    }

    fn extremal(d: &Diagram, lo: i64, hi: i64, top_vertex: usize, max: bool) -> Result<Self> {
        d.check_levels(lo, hi)?;
        if hi < lo {
            return Err(Error::InvalidArgument("empty level range".into()));
        }
        if top_vertex >= d.graph_at(hi).m_top() {
            return Err(Error::InvalidArgument(format!("no vertex {top_vertex} at the top")));
        }
        let mut edges = vec![0; (hi - lo + 1) as usize];
        let mut v = top_vertex;
        for level in (lo..=hi).rev() {
            let out = d.graph_at(level).out_edges(v);
            let e = if max { out[out.len() - 1] } else { out[0] };
            edges[(level - lo) as usize] = e;
            v = d.graph_at(level).edge(e).target;
        }
        let tail = if max { Tail::Maximal } else { Tail::Minimal };
        Ok(PathWindow {
            lo,
            edges,
            top: Tail::Vertex,
            bottom: tail,
        })
    }

    pub fn hi(&self) -> i64 {
        self.lo + self.edges.len() as i64 - 1
    }

    pub fn edge(&self, level: i64) -> usize {
        self.edges[(level - self.lo) as usize]
    }

    /// Source of `x_hi`, a vertex of layer `hi + 1`.
    pub fn top_vertex(&self, d: &Diagram) -> usize {
        d.graph_at(self.hi()).edge(self.edge(self.hi())).source
    }

    /// Target of `x_lo`, a vertex of layer `lo`.
    pub fn bottom_vertex(&self, d: &Diagram) -> usize {
        d.graph_at(self.lo).edge(self.edges[0]).target
    }

    /// Target of `x_level`, the vertex of layer `level` on the path.
    pub fn vertex_below(&self, d: &Diagram, level: i64) -> usize {
        d.graph_at(level).edge(self.edge(level)).target
    }

    /// Lowest level whose edge is not `up_rank`-minimal, `hi + 1` if none.
    fn first_non_minimal(&self, d: &Diagram) -> i64 {
        (self.lo..=self.hi())
            .find(|&t| !is_up_minimal(d.graph_at(t), self.edge(t)))
            .unwrap_or(self.hi() + 1)
    }

    /// Replaces the edges below `level` by the minimal or maximal
    /// continuation of the vertex the path has at layer `level`.
    fn fill_below(&mut self, d: &Diagram, level: i64, max: bool) {
        for t in (self.lo..level).rev() {
            let v = d.graph_at(t + 1).edge(self.edge(t + 1)).target;
            let out = d.graph_at(t).out_edges(v);
            self.edges[(t - self.lo) as usize] = if max { out[out.len() - 1] } else { out[0] };
        }
    }

    fn fill_above(&mut self, d: &Diagram, level: i64, max: bool) {
        for t in level + 1..=self.hi() {
            let v = d.graph_at(t - 1).edge(self.edge(t - 1)).source;
            let inc = d.graph_at(t).in_edges(v);
            self.edges[(t - self.lo) as usize] = if max { inc[inc.len() - 1] } else { inc[0] };
        }
    }

    /// JSON array of `[level, edge]` pairs.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::Value::Array(
            self.edges
                .iter()
                .enumerate()
                .map(|(i, &e)| serde_json::json!([self.lo + i as i64, e]))
                .collect(),
        )
    }

    pub fn from_json(d: &Diagram, value: &serde_json::Value, top: Tail, bottom: Tail) -> Result<Self> {
        let pairs: Vec<(i64, usize)> = serde_json::from_value(value.clone())
            .map_err(|e| Error::InvalidArgument(format!("path json: {e}")))?;
        let mut pairs = pairs;
        pairs.sort_by_key(|p| p.0);
        let lo = pairs
            .first()
            .map(|p| p.0)
            .ok_or_else(|| Error::InvalidArgument("empty path".into()))?;
        if pairs.iter().enumerate().any(|(i, p)| p.0 != lo + i as i64) {
            return Err(Error::InvalidArgument("path levels must be consecutive".into()));
        }
        PathWindow::new(d, lo, pairs.into_iter().map(|p| p.1).collect(), top, bottom)
    }
}

fn tail_order(a: Tail, b: Tail) -> Comparison {
    match (a, b) {
        _ if a == b => Comparison::Equal,
        (Tail::Minimal, _) | (_, Tail::Maximal) => Comparison::Less,
        _ => Comparison::Greater,
    }
}

/// Vershik ordering `𝔬`.
pub fn compare(d: &Diagram, x: &PathWindow, y: &PathWindow) -> Result<Comparison> {
    if x.lo != y.lo || x.edges.len() != y.edges.len() {
        return Err(Error::WindowMismatch);
    }
    if x.top != y.top || x.top_vertex(d) != y.top_vertex(d) {
        return Ok(Comparison::Incomparable);
    }
    for t in (x.lo..=x.hi()).rev() {
        let (a, b) = (x.edge(t), y.edge(t));
        if a != b {
            return Ok(up_rank(d, t, a).cmp(&up_rank(d, t, b)).into());
        }
    }
    Ok(tail_order(x.bottom, y.bottom))
}

/// Reversed ordering `𝔬̃`: paths sharing their lower part compare at the
/// lowest level where they differ, by `down_rank`.
pub fn compare_reversed(d: &Diagram, x: &PathWindow, y: &PathWindow) -> Result<Comparison> {
    if x.lo != y.lo || x.edges.len() != y.edges.len() {
        return Err(Error::WindowMismatch);
    }
    if x.bottom != y.bottom || x.bottom_vertex(d) != y.bottom_vertex(d) {
        return Ok(Comparison::Incomparable);
    }
    for t in x.lo..=x.hi() {
        let (a, b) = (x.edge(t), y.edge(t));
        if a != b {
            let g = d.graph_at(t);
            return Ok(g.edge(a).down_rank.cmp(&g.edge(b).down_rank).into());
        }
    }
    Ok(tail_order(x.top, y.top))
}

/// The adic successor within the window, `None` when `x` is maximal.
pub fn successor(d: &Diagram, x: &PathWindow) -> Option<PathWindow> {
    let t = (x.lo..=x.hi()).find(|&t| !is_up_maximal(d.graph_at(t), x.edge(t)))?;
    let g = d.graph_at(t);
    let edge = g.edge(x.edge(t));
    let mut y = x.clone();
    y.edges[(t - x.lo) as usize] = g.out_edges(edge.source)[edge.up_rank + 1];
    y.fill_below(d, t, false);
    Some(y)
}

pub fn predecessor(d: &Diagram, x: &PathWindow) -> Option<PathWindow> {
    let t = (x.lo..=x.hi()).find(|&t| !is_up_minimal(d.graph_at(t), x.edge(t)))?;
    let g = d.graph_at(t);
    let edge = g.edge(x.edge(t));
    let mut y = x.clone();
    y.edges[(t - x.lo) as usize] = g.out_edges(edge.source)[edge.up_rank - 1];
    y.fill_below(d, t, true);
    Some(y)
}

/// Successor for `𝔬̃`: the highest level whose edge is not
/// `down_rank`-maximal is incremented and the levels above are reset.
pub fn successor_reversed(d: &Diagram, x: &PathWindow) -> Option<PathWindow> {
    let t = (x.lo..=x.hi())
        .rev()
        .find(|&t| !is_down_maximal(d.graph_at(t), x.edge(t)))?;
    let g = d.graph_at(t);
    let edge = g.edge(x.edge(t));
    let mut y = x.clone();
    y.edges[(t - x.lo) as usize] = g.in_edges(edge.target)[edge.down_rank + 1];
    y.fill_above(d, t, false);
    Some(y)
}

pub fn predecessor_reversed(d: &Diagram, x: &PathWindow) -> Option<PathWindow> {
    let t = (x.lo..=x.hi())
        .rev()
        .find(|&t| d.graph_at(t).edge(x.edge(t)).down_rank > 0)?;
    let g = d.graph_at(t);
    let edge = g.edge(x.edge(t));
    let mut y = x.clone();
    y.edges[(t - x.lo) as usize] = g.in_edges(edge.target)[edge.down_rank - 1];
    y.fill_above(d, t, true);
    Some(y)
}

/// All window paths through `top_vertex`, in increasing `𝔬` order.
pub fn leaf_paths(d: &Diagram, lo: i64, hi: i64, top_vertex: usize) -> Result<Vec<PathWindow>> {
    let mut out = vec![PathWindow::minimal(d, lo, hi, top_vertex)?];
    while let Some(next) = successor(d, out.last().unwrap()) {
        out.push(next);
    }
    Ok(out)
}

/// The Markovian arc `γ_n^+(x)`: paths agreeing with the representative at
/// every level `≥ n`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MarkovArc {
    pub level: i64,
    /// Vertex of layer `level` (target of `x_level`).
    pub vertex: usize,
    pub representative: PathWindow,
}

impl MarkovArc {
    pub fn new(d: &Diagram, level: i64, representative: PathWindow) -> Result<Self> {
        if level < representative.lo || level > representative.hi() {
            return Err(Error::LevelMismatch(level));
        }
        Ok(MarkovArc {
            level,
            vertex: representative.vertex_below(d, level),
            representative,
        })
    }

    pub fn first(&self, d: &Diagram) -> PathWindow {
        let mut p = self.representative.clone();
        p.fill_below(d, self.level, false);
        p
    }

    pub fn last(&self, d: &Diagram) -> PathWindow {
        let mut p = self.representative.clone();
        p.fill_below(d, self.level, true);
        p
    }

    /// `Φ_1^+(γ_n^+(x))`.
    pub fn mass(&self, m: &InvariantMeasure) -> Result<f64> {
        m.plus_value(self.level, self.vertex)
    }

    /// Window paths contained in the arc, in order.
    pub fn paths(&self, d: &Diagram) -> Vec<PathWindow> {
        let last = self.last(d);
        let mut out = vec![self.first(d)];
        while *out.last().unwrap() != last {
            match successor(d, out.last().unwrap()) {
                Some(p) => out.push(p),
                None => break,
            }
        }
        out
    }
}

/// The half-open order interval `[start, end)` of window atoms; `end = None`
/// runs through the last path of the leaf.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FlowArc {
    pub start: PathWindow,
    pub end: Option<PathWindow>,
}

impl FlowArc {
    pub fn new(d: &Diagram, start: PathWindow, end: Option<PathWindow>) -> Result<Self> {
        if let Some(e) = &end {
            match compare(d, &start, e)? {
                Comparison::Less | Comparison::Equal => {}
                Comparison::Greater => return Err(Error::ReversedArc),
                Comparison::Incomparable => return Err(Error::Incomparable),
            }
        }
        Ok(FlowArc { start, end })
    }

    /// The whole leaf through `top_vertex`.
    pub fn leaf(d: &Diagram, lo: i64, hi: i64, top_vertex: usize) -> Result<Self> {
        Ok(FlowArc {
            start: PathWindow::minimal(d, lo, hi, top_vertex)?,
            end: None,
        })
    }

    /// `Φ_1^+` of the arc.
    pub fn mass(&self, d: &Diagram, m: &InvariantMeasure) -> Result<f64> {
        arc_decompose(d, self)?.iter().map(|a| a.mass(m)).sum()
    }
}

fn same_edges(x: &PathWindow, y: &PathWindow) -> bool {
    x.lo == y.lo && x.edges == y.edges
}

/// Greedy decomposition: repeatedly peels the largest Markovian arc that
/// starts at the left end and fits in what remains.
pub fn arc_decompose(d: &Diagram, a: &FlowArc) -> Result<Vec<MarkovArc>> {
    let mut out = Vec::new();
    let mut cur = a.start.clone();
    loop {
        let limit = match &a.end {
            Some(end) => {
                if same_edges(&cur, end) {
                    break;
                }
                // highest level where cur and end differ
                (cur.lo..=cur.hi())
                    .rev()
                    .find(|&t| cur.edge(t) != end.edge(t))
                    .expect("distinct paths differ somewhere")
            }
            None => cur.hi(),
        };
        let level = cur.first_non_minimal(d).min(limit);
        let arc = MarkovArc::new(d, level, cur.clone())?;
        let next = successor(d, &arc.last(d));
        out.push(arc);
        match next {
            Some(p) => cur = p,
            None if a.end.is_none() => break,
            None => return Err(Error::Incomparable),
        }
    }
    Ok(out)
}

/// CSV rows `level,vertex,count` (vertices 1-based), grouped by level and
/// vertex in increasing order.
pub fn decomposition_csv(arcs: &[MarkovArc]) -> String {
    let mut counts: BTreeMap<(i64, usize), usize> = BTreeMap::new();
    for a in arcs {
        *counts.entry((a.level, a.vertex)).or_default() += 1;
    }
    let mut s = String::from("level,vertex,count\n");
    for ((level, vertex), count) in counts {
        writeln!(s, "{level},{},{count}", vertex + 1).expect("write to string");
    }
    s
}

#[derive(Clone, Debug)]
pub struct FlowAdvance {
    pub path: PathWindow,
    /// Flow time actually travelled, a sum of atom masses.
    pub elapsed: f64,
    /// `|t - elapsed|`, at most half of the last atom crossed or skipped.
    pub residual: f64,
}

/// Moves the atom boundary `x` forward by `Φ_1^+`-time `t`, rounding to the
/// nearest atom boundary at the bottom of the window.
pub fn flow_advance(d: &Diagram, m: &InvariantMeasure, x: &PathWindow, t: f64) -> Result<FlowAdvance> {
    if !(t >= 0.0) {
        return Err(Error::InvalidArgument(format!("flow time {t} must be nonnegative")));
    }
    let mut cur = x.clone();
    let mut remaining = t;
    // absorbs summation roundoff only; a larger slack would skip atoms
    let slack = 16.0 * f64::EPSILON * t;
    loop {
        let top = cur.first_non_minimal(d).min(cur.hi());
        let mut jump = None;
        for level in (cur.lo..=top).rev() {
            let mass = m.plus_value(level, cur.vertex_below(d, level))?;
            if mass <= remaining + slack {
                jump = Some((level, mass));
                break;
            }
        }
        let (level, mass) = match jump {
            Some(j) => j,
            None => {
                let atom = m.plus_value(cur.lo, cur.bottom_vertex(d))?;
                if remaining > atom / 2.0 {
                    (cur.lo, atom)
                } else {
                    break;
                }
            }
        };
        let arc = MarkovArc::new(d, level, cur.clone())?;
        match successor(d, &arc.last(d)) {
            Some(next) => {
                cur = next;
                remaining -= mass;
            }
            None => {
                return Err(Error::WindowExhausted {
                    reached: t - remaining + mass,
                    requested: t,
                })
            }
        }
        if remaining.abs() <= slack {
            break;
        }
    }
    Ok(FlowAdvance {
        path: cur,
        elapsed: t - remaining,
        residual: remaining.abs(),
    })
}
