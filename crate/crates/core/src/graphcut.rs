//! Multi-label energy minimization by alpha-expansion over a Potts
//! pairwise model, with an augmenting-path (Dinic) max-flow solver for the
//! binary expansion moves.

/// Max-flow network on `n` regular nodes plus source/sink terminals.
struct FlowGraph {
    // adjacency: per node, indices into `edges`
    adj: Vec<Vec<usize>>,
    // edges stored as (to, capacity); reverse edge at index ^ 1
    to: Vec<usize>,
    cap: Vec<f64>,
    level: Vec<i32>,
    iter: Vec<usize>,
}

impl FlowGraph {
    fn new(n: usize) -> Self {
        FlowGraph {
            adj: vec![Vec::new(); n],
            to: Vec::new(),
            cap: Vec::new(),
            level: vec![0; n],
            iter: vec![0; n],
        }
    }

    fn add_edge(&mut self, u: usize, v: usize, cap_uv: f64, cap_vu: f64) {
        let e = self.to.len();
        self.to.push(v);
        self.cap.push(cap_uv);
        self.adj[u].push(e);
        self.to.push(u);
        self.cap.push(cap_vu);
        self.adj[v].push(e + 1);
    }

    fn bfs(&mut self, s: usize, t: usize) -> bool {
        self.level.iter_mut().for_each(|l| *l = -1);
        let mut queue = std::collections::VecDeque::new();
        self.level[s] = 0;
        queue.push_back(s);
        while let Some(u) = queue.pop_front() {
            for &e in &self.adj[u] {
                let v = self.to[e];
                if self.cap[e] > 1e-12 && self.level[v] < 0 {
                    self.level[v] = self.level[u] + 1;
                    queue.push_back(v);
                }
            }
        }
        self.level[t] >= 0
    }

    fn dfs(&mut self, u: usize, t: usize, f: f64) -> f64 {
        if u == t {
            return f;
        }
        while self.iter[u] < self.adj[u].len() {
            let e = self.adj[u][self.iter[u]];
            let v = self.to[e];
            if self.cap[e] > 1e-12 && self.level[v] == self.level[u] + 1 {
                let d = self.dfs(v, t, f.min(self.cap[e]));
                if d > 0.0 {
                    self.cap[e] -= d;
                    self.cap[e ^ 1] += d;
                    return d;
                }
            }
            self.iter[u] += 1;
        }
        0.0
    }

    fn max_flow(&mut self, s: usize, t: usize) -> f64 {
        let mut flow = 0.0;
        while self.bfs(s, t) {
            self.iter.iter_mut().for_each(|i| *i = 0);
            loop {
                let f = self.dfs(s, t, f64::INFINITY);
                if f <= 0.0 {
                    break;
                }
                flow += f;
            }
        }
        flow
    }

    /// Nodes reachable from `s` in the residual graph (source side of the cut).
    fn source_side(&self, s: usize) -> Vec<bool> {
        let mut seen = vec![false; self.adj.len()];
        let mut stack = vec![s];
        seen[s] = true;
        while let Some(u) = stack.pop() {
            for &e in &self.adj[u] {
                let v = self.to[e];
                if self.cap[e] > 1e-12 && !seen[v] {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
        seen
    }
}

/// Multi-label problem with per-node data costs and Potts pairwise costs.
///
/// Pairwise energy between neighbors i, j is `weight * [label_i != label_j]`
/// where `weight` already folds in the smoothness multiplier.
#[derive(Debug, Clone)]
pub struct GcProblem {
    pub num_nodes: usize,
    pub num_labels: usize,
    /// Row-major: data[node * num_labels + label].
    data: Vec<f64>,
    /// (i, j, weight), i < j, no duplicates.
    edges: Vec<(usize, usize, f64)>,
}

impl GcProblem {
    pub fn new(num_nodes: usize, num_labels: usize) -> Self {
        GcProblem {
            num_nodes,
            num_labels,
            data: vec![0.0; num_nodes * num_labels],
            edges: Vec::new(),
        }
    }

    pub fn set_data_cost(&mut self, node: usize, label: usize, cost: f64) {
        assert!(cost.is_finite() && cost >= 0.0, "costs must be finite and >= 0");
        self.data[node * self.num_labels + label] = cost;
    }

    pub fn data_cost(&self, node: usize, label: usize) -> f64 {
        self.data[node * self.num_labels + label]
    }

    pub fn add_edge(&mut self, i: usize, j: usize, weight: f64) {
        assert!(i != j, "self loops are not allowed");
        assert!(weight >= 0.0 && weight.is_finite());
        let (i, j) = if i < j { (i, j) } else { (j, i) };
        self.edges.push((i, j, weight));
    }

    pub fn edges(&self) -> &[(usize, usize, f64)] {
        &self.edges
    }

    /// Total energy of a labeling.
    pub fn energy(&self, labels: &[usize]) -> f64 {
        let mut e = 0.0;
        for (n, &l) in labels.iter().enumerate() {
            e += self.data_cost(n, l);
        }
        for &(i, j, w) in &self.edges {
            if labels[i] != labels[j] {
                e += w;
            }
        }
        e
    }

    /// Per-node data-optimal labeling (ties -> lower label); the starting
    /// point of the expansion schedule.
    pub fn initial_labeling(&self) -> Vec<usize> {
        (0..self.num_nodes)
            .map(|n| {
                let mut best = 0;
                for l in 1..self.num_labels {
                    if self.data_cost(n, l) < self.data_cost(n, best) {
                        best = l;
                    }
                }
                best
            })
            .collect()
    }
}

/// Alpha-expansion: sweep labels in ascending order, solving each binary
/// expansion exactly by min-cut, until a full sweep yields no improvement.
/// Deterministic for a fixed problem.
pub fn solve_multilabel(p: &GcProblem) -> Vec<usize> {
    let mut labels = p.initial_labeling();
    if p.num_nodes == 0 {
        return labels;
    }
    let mut energy = p.energy(&labels);
    loop {
        let mut improved = false;
        for alpha in 0..p.num_labels {
            let candidate = expand(p, &labels, alpha);
            let e = p.energy(&candidate);
            if e < energy - 1e-12 {
                energy = e;
                labels = candidate;
                improved = true;
            }
        }
        if !improved {
            return labels;
        }
    }
}

/// One expansion move: every node either keeps its label or switches to
/// `alpha`; optimal under the (metric) Potts pairwise cost.
fn expand(p: &GcProblem, labels: &[usize], alpha: usize) -> Vec<usize> {
    let n = p.num_nodes;
    let source = n; // represents keeping the current label
    let sink = n + 1; // represents switching to alpha
    let mut g = FlowGraph::new(n + 2);
    // t-links from data terms: cost of keeping vs switching
    let mut keep_cost = vec![0.0f64; n];
    let mut switch_cost = vec![0.0f64; n];
    for i in 0..n {
        keep_cost[i] += p.data_cost(i, labels[i]);
        switch_cost[i] += p.data_cost(i, alpha);
    }
    let mut extra_edges: Vec<(usize, usize, f64)> = Vec::new();
    for &(i, j, w) in p.edges() {
        let (li, lj) = (labels[i], labels[j]);
        // pairwise table for binary variables x in {keep=0, switch=1}
        let e00 = if li != lj { w } else { 0.0 };
        let e01 = if li != alpha { w } else { 0.0 };
        let e10 = if alpha != lj { w } else { 0.0 };
        let e11 = 0.0;
        // reparameterize into t-links plus one n-link (submodular: e01+e10 >= e00+e11)
        // node i absorbs (e10 - e00) on switching, node j absorbs (e11 - e10)
        let di = e10 - e00;
        if di >= 0.0 {
            switch_cost[i] += di;
        } else {
            keep_cost[i] += -di;
        }
        let dj = e11 - e10;
        if dj >= 0.0 {
            switch_cost[j] += dj;
        } else {
            keep_cost[j] += -dj;
        }
        let rem = e01 + e10 - e00 - e11;
        debug_assert!(rem >= -1e-9);
        if rem > 0.0 {
            extra_edges.push((i, j, rem));
        }
    }
    for i in 0..n {
        // source side = keep: a source-side node cuts its i->sink link and
        // pays keep_cost, a sink-side node cuts source->i and pays switch_cost
        g.add_edge(source, i, switch_cost[i], 0.0);
        g.add_edge(i, sink, keep_cost[i], 0.0);
    }
    for (i, j, w) in extra_edges {
        g.add_edge(i, j, w, 0.0);
    }
    g.max_flow(source, sink);
    let on_source = g.source_side(source);
    let mut out = labels.to_vec();
    for i in 0..n {
        // nodes severed from the source pay switch_cost: they take alpha
        if !on_source[i] {
            out[i] = alpha;
        }
    }
    out
}

/// Exhaustive minimum over all labelings; test oracle for small problems.
pub fn brute_force_optimum(p: &GcProblem) -> (Vec<usize>, f64) {
    assert!(p.num_labels.pow(p.num_nodes as u32) <= 100_000_000);
    let mut best: Option<(Vec<usize>, f64)> = None;
    let mut labels = vec![0usize; p.num_nodes];
    loop {
        let e = p.energy(&labels);
        if best.as_ref().map_or(true, |(_, be)| e < *be) {
            best = Some((labels.clone(), e));
        }
        // increment odometer
        let mut k = 0;
        loop {
            if k == p.num_nodes {
                return best.unwrap();
            }
            labels[k] += 1;
            if labels[k] < p.num_labels {
                break;
            }
            labels[k] = 0;
            k += 1;
        }
    }
}
