//! Successive shortest paths with node potentials over real-valued capacities.

use crate::scalar::Scalar;

pub(crate) struct MinCostFlow<T> {
    adjacency: Vec<Vec<usize>>,
    head: Vec<usize>,
    capacity: Vec<T>,
    cost: Vec<T>,
}

impl<T: Scalar> MinCostFlow<T> {
    pub(crate) fn new(nodes: usize) -> Self {
        Self { adjacency: vec![Vec::new(); nodes], head: Vec::new(), capacity: Vec::new(), cost: Vec::new() }
    }

    /// Adds `from -> to` and its zero-capacity reverse arc. Returns the id of
    /// the forward arc; the reverse arc is `id ^ 1`.
    pub(crate) fn add_edge(&mut self, from: usize, to: usize, capacity: T, cost: T) -> usize {
        let id = self.head.len();
        self.adjacency[from].push(id);
        self.head.push(to);
        self.capacity.push(capacity);
        self.cost.push(cost);
        self.adjacency[to].push(id + 1);
        self.head.push(from);
        self.capacity.push(T::zero());
        self.cost.push(-cost);
        id
    }

    /// Flow currently carried by a forward arc.
    pub(crate) fn flow_on(&self, edge: usize) -> T {
        self.capacity[edge ^ 1]
    }

    /// Sends up to `limit` units from `source` to `sink` at minimum cost.
    ///
    /// All arc costs must be nonnegative on entry. Residual capacities at or
    /// below `cap_eps` are treated as exhausted. Returns `(flow, cost)`.
    pub(crate) fn run(&mut self, source: usize, sink: usize, limit: T, cap_eps: T) -> (T, T) {
        let n = self.adjacency.len();
        let mut potential = vec![T::zero(); n];
        let mut dist = vec![T::infinity(); n];
        let mut parent = vec![usize::MAX; n];
        let mut done = vec![false; n];
        let mut flow = T::zero();
        let mut total_cost = T::zero();

        while limit - flow > cap_eps {
            dist.fill(T::infinity());
            parent.fill(usize::MAX);
            done.fill(false);
            dist[source] = T::zero();

            // Dense Dijkstra; the graphs here have a few dozen nodes.
            loop {
                let mut u = usize::MAX;
                for v in 0..n {
                    if !done[v] && dist[v].is_finite() && (u == usize::MAX || dist[v] < dist[u]) {
                        u = v;
                    }
                }
                if u == usize::MAX || u == sink {
                    break;
                }
                done[u] = true;
                for &e in &self.adjacency[u] {
                    if self.capacity[e] <= cap_eps {
                        continue;
                    }
                    let v = self.head[e];
                    let reduced = (self.cost[e] + potential[u] - potential[v]).max(T::zero());
                    let candidate = dist[u] + reduced;
                    if candidate < dist[v] {
                        dist[v] = candidate;
                        parent[v] = e;
                    }
                }
            }

            if !dist[sink].is_finite() {
                break;
            }
            let reach = dist[sink];
            for v in 0..n {
                potential[v] += dist[v].min(reach);
            }

            let mut push = limit - flow;
            let mut v = sink;
            while v != source {
                let e = parent[v];
                push = push.min(self.capacity[e]);
                v = self.head[e ^ 1];
            }
            let mut v = sink;
            while v != source {
                let e = parent[v];
                self.capacity[e] -= push;
                self.capacity[e ^ 1] += push;
                total_cost += push * self.cost[e];
                v = self.head[e ^ 1];
            }
            flow += push;
        }
        (flow, total_cost)
    }
}
