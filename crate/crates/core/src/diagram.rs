//! Level graphs, incidence matrices and bi-infinite diagrams seen through a
//! finite window of levels.
//!
//! Orientation: the edge `x_n` of a path lives in the graph `Γ_n`. It runs
//! from a top vertex of `Γ_n` to a bottom vertex of `Γ_n`, and its bottom
//! vertex is the top vertex of the next lower edge `x_{n-1}`. Consequently
//! the bottom vertex set of `Γ_{n+1}` is the top vertex set of `Γ_n`. We call
//! the bottom vertex set of `Γ_n` *layer n*; a `+` vector at layer `n` is
//! indexed by the bottom vertices of `Γ_n` and `A_n` maps layer `n` to layer
//! `n + 1`.

use std::collections::HashMap;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Edge {
    pub source: usize,
    pub target: usize,
    pub up_rank: usize,
    pub down_rank: usize,
}

/// A bipartite graph between a top level of `m_top` vertices and a bottom
/// level of `m_bot` vertices. Vertex indices are 0-based in memory.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LevelGraph {
    m_top: usize,
    m_bot: usize,
    edges: Vec<Edge>,
    // edge indices per source ordered by up_rank, per target ordered by down_rank
    by_source: Vec<Vec<usize>>,
    by_target: Vec<Vec<usize>>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Violation {
    IsolatedTop(usize),
    IsolatedBottom(usize),
    VertexOutOfRange { edge: usize },
    UpRanks { source: usize },
    DownRanks { target: usize },
    EmptyLevel,
}

impl fmt::Display for Violation {
    // 1-based vertex labels, as in the spec files
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::IsolatedTop(v) => write!(f, "top vertex {} isolated", v + 1),
            Violation::IsolatedBottom(v) => write!(f, "bottom vertex {} isolated", v + 1),
            Violation::VertexOutOfRange { edge } => {
                write!(f, "edge {} references a vertex out of range", edge + 1)
            }
            Violation::UpRanks { source } => write!(
                f,
                "up ranks at top vertex {} are not a permutation of 0..deg",
                source + 1
            ),
            Violation::DownRanks { target } => write!(
                f,
                "down ranks at bottom vertex {} are not a permutation of 0..deg",
                target + 1
            ),
            Violation::EmptyLevel => write!(f, "level has no vertices"),
        }
    }
}

impl LevelGraph {
    /// Builds a graph from `(source, target)` pairs with the default rank
    /// labels: among edges sharing a source, `up_rank` orders by
    /// `(target, insertion order)`; among edges sharing a target,
    /// `down_rank` orders by `(source, insertion order)`.
    pub fn new(m_top: usize, m_bot: usize, pairs: &[(usize, usize)]) -> Result<Self> {
        let mut edges: Vec<Edge> = pairs
            .iter()
            .map(|&(source, target)| Edge {
                source,
                target,
                up_rank: 0,
                down_rank: 0,
            })
            .collect();
        if let Some(i) = edges
            .iter()
            .position(|e| e.source >= m_top || e.target >= m_bot)
        {
            return Err(Error::InvalidGraph(
                Violation::VertexOutOfRange { edge: i }.to_string(),
            ));
        }
        for v in 0..m_top {
            let mut idx: Vec<usize> = (0..edges.len()).filter(|&i| edges[i].source == v).collect();
            idx.sort_by_key(|&i| (edges[i].target, i));
            for (r, &i) in idx.iter().enumerate() {
                edges[i].up_rank = r;
            }
        }
        for v in 0..m_bot {
            let mut idx: Vec<usize> = (0..edges.len()).filter(|&i| edges[i].target == v).collect();
            idx.sort_by_key(|&i| (edges[i].source, i));
            for (r, &i) in idx.iter().enumerate() {
                edges[i].down_rank = r;
            }
        }
        Self::with_ranks(m_top, m_bot, edges)
    }

    /// Builds a graph with explicit rank labels and rejects it if any
    /// invariant fails.
    pub fn with_ranks(m_top: usize, m_bot: usize, edges: Vec<Edge>) -> Result<Self> {
        let g = Self::from_parts(m_top, m_bot, edges);
        let violations = g.validate();
        if violations.is_empty() {
            Ok(g)
        } else {
            let msg: Vec<String> = violations.iter().map(|v| v.to_string()).collect();
            Err(Error::InvalidGraph(msg.join("; ")))
        }
    }

    /// Unchecked constructor; pair with [`LevelGraph::validate`].
    pub fn from_parts(m_top: usize, m_bot: usize, edges: Vec<Edge>) -> Self {
        let mut by_source = vec![Vec::new(); m_top];
        let mut by_target = vec![Vec::new(); m_bot];
        for (i, e) in edges.iter().enumerate() {
            if e.source < m_top {
                by_source[e.source].push(i);
            }
            if e.target < m_bot {
                by_target[e.target].push(i);
            }
        }
        for list in &mut by_source {
            list.sort_by_key(|&i| (edges[i].up_rank, i));
        }
        for list in &mut by_target {
            list.sort_by_key(|&i| (edges[i].down_rank, i));
        }
        LevelGraph {
            m_top,
            m_bot,
            edges,
            by_source,
            by_target,
        }
    }

    pub fn m_top(&self) -> usize {
        self.m_top
    }

    pub fn m_bot(&self) -> usize {
        self.m_bot
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn edge(&self, i: usize) -> &Edge {
        &self.edges[i]
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Edges leaving top vertex `v`, in increasing `up_rank`.
    pub fn out_edges(&self, v: usize) -> &[usize] {
        &self.by_source[v]
    }

    /// Edges entering bottom vertex `v`, in increasing `down_rank`.
    pub fn in_edges(&self, v: usize) -> &[usize] {
        &self.by_target[v]
    }

    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        if self.m_top == 0 || self.m_bot == 0 {
            out.push(Violation::EmptyLevel);
        }
        for (i, e) in self.edges.iter().enumerate() {
            if e.source >= self.m_top || e.target >= self.m_bot {
                out.push(Violation::VertexOutOfRange { edge: i });
            }
        }
        for v in 0..self.m_top {
            if self.by_source[v].is_empty() {
                out.push(Violation::IsolatedTop(v));
            } else if !is_permutation(self.by_source[v].iter().map(|&i| self.edges[i].up_rank)) {
                out.push(Violation::UpRanks { source: v });
            }
        }
        for v in 0..self.m_bot {
            if self.by_target[v].is_empty() {
                out.push(Violation::IsolatedBottom(v));
            } else if !is_permutation(self.by_target[v].iter().map(|&i| self.edges[i].down_rank)) {
                out.push(Violation::DownRanks { target: v });
            }
        }
        out
    }

    pub fn incidence(&self) -> IncidenceMatrix {
        let mut entries = vec![0u64; self.m_top * self.m_bot];
        for e in &self.edges {
            entries[e.source * self.m_bot + e.target] += 1;
        }
        IncidenceMatrix {
            rows: self.m_top,
            cols: self.m_bot,
            entries,
        }
    }
}

fn is_permutation(ranks: impl Iterator<Item = usize>) -> bool {
    let mut r: Vec<usize> = ranks.collect();
    r.sort_unstable();
    r.iter().enumerate().all(|(i, &x)| i == x)
}

pub fn validate_graph(g: &LevelGraph) -> Vec<Violation> {
    g.validate()
}

/// `A_ij` = number of edges from top vertex `i` to bottom vertex `j`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct IncidenceMatrix {
    rows: usize,
    cols: usize,
    entries: Vec<u64>,
}

impl IncidenceMatrix {
    pub fn from_rows(rows: &[Vec<u64>]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, |x| x.len());
        IncidenceMatrix {
            rows: r,
            cols: c,
            entries: rows.iter().flatten().copied().collect(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> u64 {
        self.entries[i * self.cols + j]
    }

    pub fn to_rows(&self) -> Vec<Vec<u64>> {
        self.entries.chunks(self.cols).map(|c| c.to_vec()).collect()
    }

    pub fn total(&self) -> u64 {
        self.entries.iter().sum()
    }

    pub fn is_positive(&self) -> bool {
        self.entries.iter().all(|&x| x > 0)
    }

    pub fn to_f64(&self) -> nalgebra::DMatrix<f64> {
        nalgebra::DMatrix::from_fn(self.rows, self.cols, |i, j| self.get(i, j) as f64)
    }

    /// Rebuilds a graph with canonical rank labels; inverse of
    /// [`LevelGraph::incidence`] on canonically labelled graphs.
    pub fn to_graph(&self) -> Result<LevelGraph> {
        let mut pairs = Vec::new();
        for i in 0..self.rows {
            for j in 0..self.cols {
                for _ in 0..self.get(i, j) {
                    pairs.push((i, j));
                }
            }
        }
        LevelGraph::new(self.rows, self.cols, &pairs)
    }

    pub fn is_invertible(&self) -> bool {
        self.rows == self.cols && !num_traits::Zero::is_zero(&linalg::rational_det(&self.to_rows()))
    }
}

pub fn incidence(g: &LevelGraph) -> IncidenceMatrix {
    g.incidence()
}

/// How the level sequence continues beyond (and inside) the window.
#[derive(Clone, Debug, PartialEq)]
pub enum Extension {
    Stationary { letter: usize },
    Periodic { word: Vec<usize> },
    Iid { probs: Vec<f64>, seed: u64 },
}

/// A bi-infinite sequence of level graphs drawn from a finite alphabet,
/// together with the window of levels the caller declared to work on.
#[derive(Clone, Debug)]
pub struct Diagram {
    alphabet: Vec<LevelGraph>,
    incidences: Vec<IncidenceMatrix>,
    extension: Extension,
    window: (i64, i64),
    offset: i64,
    cumulative: Vec<f64>,
}

impl Diagram {
    pub fn new(alphabet: Vec<LevelGraph>, extension: Extension, window: (i64, i64)) -> Result<Self> {
        if alphabet.is_empty() {
            return Err(Error::InvalidEnsemble("empty alphabet".into()));
        }
        if window.0 > window.1 {
            return Err(Error::InvalidArgument(format!(
                "window [{}, {}] is empty",
                window.0, window.1
            )));
        }
        for (i, g) in alphabet.iter().enumerate() {
            let v = g.validate();
            if !v.is_empty() {
                let msg: Vec<String> = v.iter().map(|x| x.to_string()).collect();
                return Err(Error::InvalidGraph(format!("letter {i}: {}", msg.join("; "))));
            }
        }
        let check_letter = |l: usize| {
            if l >= alphabet.len() {
                Err(Error::InvalidEnsemble(format!("letter {l} not in alphabet")))
            } else {
                Ok(())
            }
        };
        let mut cumulative = Vec::new();
        // pairs (upper, lower) of letters that may sit on adjacent levels
        let adjacent: Vec<(usize, usize)> = match &extension {
            Extension::Stationary { letter } => {
                check_letter(*letter)?;
                vec![(*letter, *letter)]
            }
            Extension::Periodic { word } => {
                if word.is_empty() {
                    return Err(Error::InvalidEnsemble("empty periodic word".into()));
                }
                for &l in word {
                    check_letter(l)?;
                }
                (0..word.len())
                    .map(|i| (word[(i + 1) % word.len()], word[i]))
                    .collect()
            }
            Extension::Iid { probs, .. } => {
                if probs.len() != alphabet.len() {
                    return Err(Error::InvalidEnsemble(format!(
                        "{} weights for {} letters",
                        probs.len(),
                        alphabet.len()
                    )));
                }
                check_weights(probs)?;
                let mut acc = 0.0;
                for p in probs {
                    acc += p;
                    cumulative.push(acc);
                }
                let live: Vec<usize> = (0..probs.len()).filter(|&i| probs[i] > 0.0).collect();
                live.iter()
                    .flat_map(|&a| live.iter().map(move |&b| (a, b)))
                    .collect()
            }
        };
        for (up, low) in adjacent {
            if alphabet[low].m_top() != alphabet[up].m_bot() {
                return Err(Error::NotComposable {
                    upper: up as i64,
                    lower: low as i64,
                    detail: format!(
                        "letter {up} has {} bottom vertices, letter {low} has {} top vertices",
                        alphabet[up].m_bot(),
                        alphabet[low].m_top()
                    ),
                });
            }
        }
        let incidences = alphabet.iter().map(|g| g.incidence()).collect();
        Ok(Diagram {
            alphabet,
            incidences,
            extension,
            window,
            offset: 0,
            cumulative,
        })
    }

    pub fn stationary(graph: LevelGraph, window: (i64, i64)) -> Result<Self> {
        Self::new(vec![graph], Extension::Stationary { letter: 0 }, window)
    }

    /// Stationary diagram whose graph is the canonical realization of `rows`.
    pub fn stationary_matrix(rows: &[Vec<u64>], window: (i64, i64)) -> Result<Self> {
        Self::stationary(IncidenceMatrix::from_rows(rows).to_graph()?, window)
    }

    pub fn alphabet(&self) -> &[LevelGraph] {
        &self.alphabet
    }

    pub fn extension(&self) -> &Extension {
        &self.extension
    }

    pub fn window(&self) -> (i64, i64) {
        self.window
    }

    pub fn with_window(&self, lo: i64, hi: i64) -> Self {
        let mut d = self.clone();
        d.window = (lo, hi);
        d
    }

    /// The shift on diagram sequences: level `n` of the result is level
    /// `n + k` of `self`. The window is kept.
    pub fn shifted(&self, k: i64) -> Self {
        let mut d = self.clone();
        d.offset += k;
        d
    }

    pub fn letter_at(&self, n: i64) -> usize {
        let n = n + self.offset;
        match &self.extension {
            Extension::Stationary { letter } => *letter,
            Extension::Periodic { word } => word[n.rem_euclid(word.len() as i64) as usize],
            Extension::Iid { seed, .. } => {
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                rng.set_stream(n as u64);
                let r: f64 = rng.gen();
                self.cumulative
                    .iter()
                    .position(|&c| r < c)
                    .unwrap_or(self.cumulative.len() - 1)
            }
        }
    }

    /// Graph at level `n`, following the extension rule outside the window.
    pub fn graph_at(&self, n: i64) -> &LevelGraph {
        &self.alphabet[self.letter_at(n)]
    }

    pub fn incidence_at(&self, n: i64) -> &IncidenceMatrix {
        &self.incidences[self.letter_at(n)]
    }

    /// Graph at level `n`, which must lie in the window.
    pub fn graph(&self, n: i64) -> Result<&LevelGraph> {
        self.check_levels(n, n)?;
        Ok(self.graph_at(n))
    }

    pub fn check_levels(&self, lo: i64, hi: i64) -> Result<()> {
        if lo < self.window.0 || hi > self.window.1 {
            return Err(Error::WindowOverflow {
                lo,
                hi,
                window_lo: self.window.0,
                window_hi: self.window.1,
            });
        }
        Ok(())
    }

    /// Number of vertices in layer `n` (bottom vertices of `Γ_n`).
    pub fn layer_size(&self, n: i64) -> usize {
        self.graph_at(n).m_bot()
    }
}

fn check_weights(probs: &[f64]) -> Result<()> {
    if probs.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
        return Err(Error::InvalidEnsemble("weights must be nonnegative".into()));
    }
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidEnsemble(format!(
            "weights sum to {total}, not 1"
        )));
    }
    Ok(())
}

/// An i.i.d. product measure on sequences of level graphs.
#[derive(Clone, Debug)]
pub struct DiagramEnsemble {
    alphabet: Vec<LevelGraph>,
    probabilities: Vec<f64>,
    positivity_witness: usize,
}

impl DiagramEnsemble {
    pub fn new(
        alphabet: Vec<LevelGraph>,
        probabilities: Vec<f64>,
        positivity_witness: usize,
    ) -> Result<Self> {
        if alphabet.is_empty() || alphabet.len() != probabilities.len() {
            return Err(Error::InvalidEnsemble(
                "alphabet and weights must be nonempty and of equal length".into(),
            ));
        }
        check_weights(&probabilities)?;
        for (i, g) in alphabet.iter().enumerate() {
            if !g.incidence().is_invertible() {
                return Err(Error::InvalidEnsemble(format!(
                    "letter {i} has a singular incidence matrix"
                )));
            }
        }
        let w = alphabet.get(positivity_witness).ok_or_else(|| {
            Error::InvalidEnsemble(format!("witness {positivity_witness} out of range"))
        })?;
        if !w.incidence().is_positive() {
            return Err(Error::InvalidEnsemble(format!(
                "witness {positivity_witness} is not strictly positive"
            )));
        }
        if probabilities[positivity_witness] <= 0.0 {
            return Err(Error::InvalidEnsemble("witness has zero weight".into()));
        }
        Ok(DiagramEnsemble {
            alphabet,
            probabilities,
            positivity_witness,
        })
    }

    pub fn alphabet(&self) -> &[LevelGraph] {
        &self.alphabet
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    pub fn positivity_witness(&self) -> usize {
        self.positivity_witness
    }

    pub fn sample(&self, seed: u64, window: (i64, i64)) -> Result<Diagram> {
        Diagram::new(
            self.alphabet.clone(),
            Extension::Iid {
                probs: self.probabilities.clone(),
                seed,
            },
            window,
        )
    }
}

pub fn sample_diagram(e: &DiagramEnsemble, seed: u64, window: (i64, i64)) -> Result<Diagram> {
    e.sample(seed, window)
}

/// The cylinder `{x : x_{level+1} = e_1, ..., x_{level+k} = e_k}`. For
/// `k = 0` it is the set of paths through `bottom` on layer `level + 1`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Cylinder {
    pub level: i64,
    pub edges: Vec<usize>,
    /// Bottom vertex of `e_1`, a vertex of layer `level + 1`.
    pub bottom: usize,
    /// Top vertex of `e_k`, a vertex of layer `level + k + 1`.
    pub top: usize,
}

impl Cylinder {
    pub fn depth(&self) -> usize {
        self.edges.len()
    }

    /// Cylinders obtained by appending one edge above the current top.
    pub fn extend_up(&self, d: &Diagram) -> Vec<Cylinder> {
        let g = d.graph_at(self.level + self.edges.len() as i64 + 1);
        g.in_edges(self.top)
            .iter()
            .map(|&e| {
                let mut edges = self.edges.clone();
                edges.push(e);
                Cylinder {
                    level: self.level,
                    edges,
                    bottom: self.bottom,
                    top: g.edge(e).source,
                }
            })
            .collect()
    }

    /// Cylinders obtained by prepending one edge below the current bottom.
    pub fn extend_down(&self, d: &Diagram) -> Vec<Cylinder> {
        let g = d.graph_at(self.level);
        g.out_edges(self.bottom)
            .iter()
            .map(|&e| {
                let mut edges = vec![e];
                edges.extend_from_slice(&self.edges);
                Cylinder {
                    level: self.level - 1,
                    edges,
                    bottom: g.edge(e).target,
                    top: self.top,
                }
            })
            .collect()
    }
}

/// All edge words `(e_1, ..., e_k)` with `e_t ∈ Γ_{n+t}` forming a path,
/// in depth-first order from the bottom edge up.
pub fn cylinders(d: &Diagram, n: i64, k: usize) -> Result<Vec<Cylinder>> {
    d.check_levels(n + 1, n + k as i64)?;
    let m = d.layer_size(n + 1);
    let mut out: Vec<Cylinder> = (0..m)
        .map(|v| Cylinder {
            level: n,
            edges: Vec::new(),
            bottom: v,
            top: v,
        })
        .collect();
    if k == 0 {
        return Ok(out);
    }
    let g = d.graph_at(n + 1);
    out = (0..g.edge_count())
        .map(|e| Cylinder {
            level: n,
            edges: vec![e],
            bottom: g.edge(e).target,
            top: g.edge(e).source,
        })
        .collect();
    for _ in 1..k {
        out = out.iter().flat_map(|c| c.extend_up(d)).collect();
    }
    // depth-first order: sort lexicographically by the edge word
    out.sort_by(|a, b| a.edges.cmp(&b.edges));
    Ok(out)
}

/// Lookup table from edge words to their position in [`cylinders`].
pub fn cylinder_index(cyls: &[Cylinder]) -> HashMap<Vec<usize>, usize> {
    cyls.iter()
        .enumerate()
        .map(|(i, c)| (c.edges.clone(), i))
        .collect()
}

// ---------------------------------------------------------------------------
// JSON spec files (1-based vertices)

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphSpec {
    pub m_top: usize,
    pub m_bot: usize,
    /// `[src, tgt]` or `[src, tgt, up_rank, down_rank]`, vertices 1-based.
    pub edges: Vec<Vec<usize>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExtensionSpec {
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub word: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probs: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub letter: Option<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagramSpec {
    pub alphabet: Vec<GraphSpec>,
    pub extension: ExtensionSpec,
    pub window: [i64; 2],
}

impl GraphSpec {
    pub fn to_graph(&self) -> Result<LevelGraph> {
        let explicit = self.edges.iter().any(|e| e.len() == 4);
        let mut pairs = Vec::new();
        let mut edges = Vec::new();
        for (i, e) in self.edges.iter().enumerate() {
            if !(e.len() == 2 || e.len() == 4) || (explicit && e.len() != 4) {
                return Err(Error::InvalidGraph(format!(
                    "edges[{i}] must be [src, tgt] or [src, tgt, up_rank, down_rank] consistently"
                )));
            }
            if e[0] == 0 || e[1] == 0 {
                return Err(Error::InvalidGraph(format!(
                    "edges[{i}]: vertices are 1-based"
                )));
            }
            pairs.push((e[0] - 1, e[1] - 1));
            if explicit {
                edges.push(Edge {
                    source: e[0] - 1,
                    target: e[1] - 1,
                    up_rank: e[2],
                    down_rank: e[3],
                });
            }
        }
        if explicit {
            if let Some(i) = edges
                .iter()
                .position(|e| e.source >= self.m_top || e.target >= self.m_bot)
            {
                return Err(Error::InvalidGraph(
                    Violation::VertexOutOfRange { edge: i }.to_string(),
                ));
            }
            LevelGraph::with_ranks(self.m_top, self.m_bot, edges)
        } else {
            LevelGraph::new(self.m_top, self.m_bot, &pairs)
        }
    }

    pub fn from_graph(g: &LevelGraph) -> Self {
        GraphSpec {
            m_top: g.m_top(),
            m_bot: g.m_bot(),
            edges: g
                .edges()
                .iter()
                .map(|e| vec![e.source + 1, e.target + 1, e.up_rank, e.down_rank])
                .collect(),
        }
    }
}

impl DiagramSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::InvalidArgument(format!("diagram spec: {e}")))
    }

    pub fn to_diagram(&self) -> Result<Diagram> {
        let alphabet = self
            .alphabet
            .iter()
            .enumerate()
            .map(|(i, g)| {
                g.to_graph()
                    .map_err(|e| Error::InvalidGraph(format!("alphabet[{i}]: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let x = &self.extension;
        let extension = match x.kind.as_str() {
            "stationary" => Extension::Stationary {
                letter: x.letter.unwrap_or(0),
            },
            "periodic" => Extension::Periodic {
                word: x.word.clone().ok_or_else(|| {
                    Error::InvalidArgument("extension.word is required for kind periodic".into())
                })?,
            },
            "iid" => Extension::Iid {
                probs: x.probs.clone().ok_or_else(|| {
                    Error::InvalidArgument("extension.probs is required for kind iid".into())
                })?,
                seed: x.seed.ok_or_else(|| {
                    Error::InvalidArgument("extension.seed is required for kind iid".into())
                })?,
            },
            other => {
                return Err(Error::InvalidArgument(format!(
                    "extension.kind: unknown kind {other:?}"
                )))
            }
        };
        Diagram::new(alphabet, extension, (self.window[0], self.window[1]))
    }

    pub fn from_diagram(d: &Diagram) -> Self {
        let extension = match d.extension() {
            Extension::Stationary { letter } => ExtensionSpec {
                kind: "stationary".into(),
                word: None,
                probs: None,
                seed: None,
                letter: Some(*letter),
            },
            Extension::Periodic { word } => ExtensionSpec {
                kind: "periodic".into(),
                word: Some(word.clone()),
                probs: None,
                seed: None,
                letter: None,
            },
            Extension::Iid { probs, seed } => ExtensionSpec {
                kind: "iid".into(),
                word: None,
                probs: Some(probs.clone()),
                seed: Some(*seed),
                letter: None,
            },
        };
        DiagramSpec {
            alphabet: d.alphabet().iter().map(GraphSpec::from_graph).collect(),
            extension,
            window: [d.window().0, d.window().1],
        }
    }
}

/// The golden-mean graph: edges a→a, a→b, b→a.
pub fn fibonacci_graph() -> LevelGraph {
    LevelGraph::new(2, 2, &[(0, 0), (0, 1), (1, 0)]).expect("valid graph")
}
