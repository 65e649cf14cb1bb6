//! Undirected skeletons, DAGs, Markov blankets and d-separation.

use std::collections::{BTreeSet, VecDeque};
use std::fmt::Write as _;

use crate::citest::CiOracle;
use crate::error::{Error, Result};

/// Undirected graph over vertices `0..p`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Skeleton {
    adj: Vec<BTreeSet<usize>>,
}

impl Skeleton {
    pub fn new(p: usize) -> Self {
        Self { adj: vec![BTreeSet::new(); p] }
    }

    pub fn p(&self) -> usize {
        self.adj.len()
    }

    /// # Panics
    /// On self-edges or out-of-range vertices.
    pub fn add_edge(&mut self, a: usize, b: usize) {
        assert!(a != b, "self-edge on vertex {a}");
        self.adj[a].insert(b);
        self.adj[b].insert(a);
    }

    pub fn remove_edge(&mut self, a: usize, b: usize) {
        self.adj[a].remove(&b);
        self.adj[b].remove(&a);
    }

    pub fn adjacent(&self, a: usize, b: usize) -> bool {
        self.adj[a].contains(&b)
    }

    pub fn neighbors(&self, v: usize) -> &BTreeSet<usize> {
        &self.adj[v]
    }

    /// Edges as `(low, high)` pairs in lexicographic order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        self.adj
            .iter()
            .enumerate()
            .flat_map(|(a, nb)| nb.iter().filter(move |&&b| b > a).map(move |&b| (a, b)))
            .collect()
    }

    pub fn n_edges(&self) -> usize {
        self.adj.iter().map(BTreeSet::len).sum::<usize>() / 2
    }
}

/// Markov blanket of `v` in an undirected graph: its neighbors.
pub fn markov_blanket_undirected(s: &Skeleton, v: usize) -> BTreeSet<usize> {
    s.neighbors(v).clone()
}

/// Directed acyclic graph with named vertices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dag {
    names: Vec<String>,
    parents: Vec<BTreeSet<usize>>,
    children: Vec<BTreeSet<usize>>,
}

impl Dag {
    pub fn new<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Self {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        let p = names.len();
        Self { names, parents: vec![BTreeSet::new(); p], children: vec![BTreeSet::new(); p] }
    }

    /// Vertices named `V0..V{p-1}`.
    pub fn with_size(p: usize) -> Self {
        Self::new((0..p).map(|i| format!("V{i}")))
    }

    pub fn p(&self) -> usize {
        self.names.len()
    }

    pub fn name(&self, v: usize) -> &str {
        &self.names[v]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Vertex index by name.
    ///
    /// # Panics
    /// If no vertex has that name.
    pub fn vertex(&self, name: &str) -> usize {
        self.index(name).unwrap_or_else(|| panic!("no vertex named {name}"))
    }

    pub fn parents(&self, v: usize) -> &BTreeSet<usize> {
        &self.parents[v]
    }

    pub fn children(&self, v: usize) -> &BTreeSet<usize> {
        &self.children[v]
    }

    pub fn has_edge(&self, from: usize, to: usize) -> bool {
        self.parents[to].contains(&from)
    }

    /// Add `from -> to`, rejecting self-edges and edges that would close a cycle.
    pub fn add_edge(&mut self, from: usize, to: usize) -> Result<()> {
        if from == to {
            return Err(Error::Graph(format!("self-edge on {}", self.names[from])));
        }
        if self.has_path(to, from) {
            return Err(Error::Graph(format!("edge {} -> {} would create a cycle", self.names[from], self.names[to])));
        }
        self.parents[to].insert(from);
        self.children[from].insert(to);
        Ok(())
    }

    pub fn remove_edge(&mut self, from: usize, to: usize) {
        self.parents[to].remove(&from);
        self.children[from].remove(&to);
    }

    /// Directed path `from ~> to` (a vertex reaches itself).
    pub fn has_path(&self, from: usize, to: usize) -> bool {
        if from == to {
            return true;
        }
        let mut seen = vec![false; self.p()];
        let mut stack = vec![from];
        seen[from] = true;
        while let Some(v) = stack.pop() {
            for &c in &self.children[v] {
                if c == to {
                    return true;
                }
                if !seen[c] {
                    seen[c] = true;
                    stack.push(c);
                }
            }
        }
        false
    }

    pub fn edges(&self) -> Vec<(usize, usize)> {
        (0..self.p()).flat_map(|v| self.children[v].iter().map(move |&c| (v, c))).collect()
    }

    pub fn n_edges(&self) -> usize {
        self.parents.iter().map(BTreeSet::len).sum()
    }

    pub fn topological_order(&self) -> Option<Vec<usize>> {
        let mut indeg: Vec<usize> = self.parents.iter().map(BTreeSet::len).collect();
        let mut queue: VecDeque<usize> = (0..self.p()).filter(|&v| indeg[v] == 0).collect();
        let mut order = Vec::with_capacity(self.p());
        while let Some(v) = queue.pop_front() {
            order.push(v);
            for &c in &self.children[v] {
                indeg[c] -= 1;
                if indeg[c] == 0 {
                    queue.push_back(c);
                }
            }
        }
        (order.len() == self.p()).then_some(order)
    }

    pub fn is_acyclic(&self) -> bool {
        self.topological_order().is_some()
    }

    pub fn skeleton(&self) -> Skeleton {
        let mut s = Skeleton::new(self.p());
        for (a, b) in self.edges() {
            s.add_edge(a, b);
        }
        s
    }

    /// Parents, children and the children's other parents.
    pub fn markov_blanket(&self, v: usize) -> BTreeSet<usize> {
        let mut mb: BTreeSet<usize> = self.parents[v].iter().chain(&self.children[v]).copied().collect();
        for &c in &self.children[v] {
            mb.extend(self.parents[c].iter().copied().filter(|&u| u != v));
        }
        mb
    }

    /// Vertices with a directed path into some member of `set`, plus `set` itself.
    pub fn ancestors_of(&self, set: &[usize]) -> Vec<bool> {
        let mut anc = vec![false; self.p()];
        let mut stack: Vec<usize> = set.to_vec();
        for &v in set {
            anc[v] = true;
        }
        while let Some(v) = stack.pop() {
            for &u in &self.parents[v] {
                if !anc[u] {
                    anc[u] = true;
                    stack.push(u);
                }
            }
        }
        anc
    }

    /// Serialize as one vertex name per line followed by `parent -> child` lines.
    pub fn to_edge_list(&self) -> String {
        let mut out = String::new();
        for n in &self.names {
            let _ = writeln!(out, "{n}");
        }
        for (a, b) in self.edges() {
            let _ = writeln!(out, "{} -> {}", self.names[a], self.names[b]);
        }
        out
    }

    /// Parse the edge-list format. Bare names declare vertices; `#` starts a
    /// comment. Vertices are indexed in order of first appearance.
    pub fn from_edge_list(text: &str) -> Result<Self> {
        let mut names: Vec<String> = Vec::new();
        let mut edges = Vec::new();
        let intern = |name: &str, names: &mut Vec<String>| -> Result<usize> {
            if name.is_empty() || name.contains(char::is_whitespace) {
                return Err(Error::Graph(format!("invalid vertex name {name:?}")));
            }
            Ok(match names.iter().position(|n| n == name) {
                Some(i) => i,
                None => {
                    names.push(name.to_string());
                    names.len() - 1
                }
            })
        };
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            match line.split_once("->") {
                Some((a, b)) => {
                    let a = intern(a.trim(), &mut names)?;
                    let b = intern(b.trim(), &mut names)?;
                    edges.push((a, b, lineno + 1));
                }
                None => {
                    intern(line, &mut names)?;
                }
            }
        }
        let mut dag = Dag::new(names);
        for (a, b, lineno) in edges {
            dag.add_edge(a, b).map_err(|e| Error::Graph(format!("line {lineno}: {e}")))?;
        }
        Ok(dag)
    }
}

/// `true` iff every path between `i` and `j` is blocked by `cond`.
///
/// Reachability ("Bayes-ball") traversal over (vertex, direction) states:
/// a trail may pass a non-collider that is not conditioned on, and a collider
/// that is conditioned on or has a conditioned descendant.
pub fn d_separated(dag: &Dag, i: usize, j: usize, cond: &[usize]) -> bool {
    assert!(i != j, "d_separated requires i != j");
    assert!(!cond.contains(&i) && !cond.contains(&j), "i and j must not be conditioned on");
    !reachable(dag, i, cond)[j]
}

/// Vertices d-connected to `source` given `cond`.
pub fn reachable(dag: &Dag, source: usize, cond: &[usize]) -> Vec<bool> {
    let p = dag.p();
    let mut in_cond = vec![false; p];
    for &k in cond {
        in_cond[k] = true;
    }
    let anc = dag.ancestors_of(cond);
    // visited[v][0]: arrived from a child (moving up), [1]: from a parent (moving down)
    let mut visited = vec![[false; 2]; p];
    let mut reach = vec![false; p];
    let mut queue = VecDeque::new();
    queue.push_back((source, 0usize));
    while let Some((v, dir)) = queue.pop_front() {
        if visited[v][dir] {
            continue;
        }
        visited[v][dir] = true;
        if !in_cond[v] {
            reach[v] = true;
        }
        if dir == 0 {
            if !in_cond[v] {
                queue.extend(dag.parents(v).iter().map(|&u| (u, 0)));
                queue.extend(dag.children(v).iter().map(|&c| (c, 1)));
            }
        } else {
            if !in_cond[v] {
                queue.extend(dag.children(v).iter().map(|&c| (c, 1)));
            }
            if anc[v] {
                queue.extend(dag.parents(v).iter().map(|&u| (u, 0)));
            }
        }
    }
    reach[source] = false;
    reach
}

/// Perfect CI oracle: reports exactly the independencies entailed by a DAG
/// among its observed vertices. Latent vertices are never conditioned on.
#[derive(Debug, Clone)]
pub struct DsepOracle {
    dag: Dag,
    observed: Vec<bool>,
}

impl DsepOracle {
    /// Every vertex observed.
    pub fn new(dag: Dag) -> Self {
        let observed = vec![true; dag.p()];
        Self { dag, observed }
    }

    /// Only `observed` vertices may appear in queries.
    pub fn with_observed(dag: Dag, observed: &[usize]) -> Self {
        let mut mask = vec![false; dag.p()];
        for &v in observed {
            mask[v] = true;
        }
        Self { dag, observed: mask }
    }

    pub fn dag(&self) -> &Dag {
        &self.dag
    }

    pub fn is_observed(&self, v: usize) -> bool {
        self.observed[v]
    }

    pub fn check(&self, i: usize, j: usize, cond: &[usize]) -> Result<bool> {
        if let Some(&v) = [i, j].iter().chain(cond).find(|&&v| v >= self.dag.p() || !self.observed[v]) {
            return Err(Error::Graph(format!("query mentions unobserved vertex {v}")));
        }
        if i == j || cond.contains(&i) || cond.contains(&j) {
            return Err(Error::InvalidArgument("query requires i != j and i, j not conditioned on".into()));
        }
        Ok(d_separated(&self.dag, i, j, cond))
    }
}

impl CiOracle for DsepOracle {
    /// # Panics
    /// If the query mentions a latent vertex.
    fn independent(&self, i: usize, j: usize, cond: &[usize]) -> bool {
        self.check(i, j, cond).unwrap_or_else(|e| panic!("{e}"))
    }
}

/// Causal DAG over `X1..X10, T, Y` with no unobserved variables.
///
/// `Y` stands for the potential outcome `Y(t)`; there is no `T -> Y` edge.
pub fn figure1_dag() -> Dag {
    let mut names: Vec<String> = (1..=10).map(|i| format!("X{i}")).collect();
    names.push("T".into());
    names.push("Y".into());
    let mut dag = Dag::new(names);
    add_core_edges(&mut dag);
    dag
}

/// [`figure1_dag`] plus latent `U1, U2, U3`: `U1 -> T`, `U1 -> X9`,
/// `U2 -> X9`, `U2 -> Y`, `U3 -> X4`, `U3 -> Y`.
pub fn figure2_dag() -> Dag {
    let mut names: Vec<String> = (1..=10).map(|i| format!("X{i}")).collect();
    names.extend(["T", "Y", "U1", "U2", "U3"].map(String::from));
    let mut dag = Dag::new(names);
    add_core_edges(&mut dag);
    for (a, b) in [("U1", "T"), ("U1", "X9"), ("U2", "X9"), ("U2", "Y"), ("U3", "X4"), ("U3", "Y")] {
        let (a, b) = (dag.vertex(a), dag.vertex(b));
        dag.add_edge(a, b).expect("figure 2 is acyclic");
    }
    dag
}

fn add_core_edges(dag: &mut Dag) {
    const EDGES: [(&str, &str); 13] = [
        ("X2", "X1"),
        ("X6", "X5"),
        ("X7", "X8"),
        ("X1", "T"),
        ("X2", "T"),
        ("X3", "T"),
        ("X4", "T"),
        ("X7", "T"),
        ("X1", "Y"),
        ("X2", "Y"),
        ("X5", "Y"),
        ("X6", "Y"),
        ("X8", "Y"),
    ];
    for (a, b) in EDGES {
        let (a, b) = (dag.vertex(a), dag.vertex(b));
        dag.add_edge(a, b).expect("figure 1 is acyclic");
    }
}
