//! Augmenting-path max-flow with two persistent search trees (Boykov–Kolmogorov).
//!
//! Search trees grown from the source and sink are kept between augmentations;
//! only the subtrees cut off by saturated arcs are repaired (orphan adoption).

const NONE: usize = usize::MAX;
const TERMINAL: usize = usize::MAX - 1;
const ORPHAN: usize = usize::MAX - 2;

#[derive(Clone, Debug)]
struct Node {
    first: usize,
    /// Arc towards the parent, or one of `NONE`, `TERMINAL`, `ORPHAN`.
    parent: usize,
    next_active: usize,
    in_queue: bool,
    is_sink: bool,
    /// Residual terminal capacity: positive towards the source, negative towards the sink.
    tr_cap: f64,
    ts: u64,
    dist: u32,
}

#[derive(Clone, Debug)]
struct Arc {
    head: usize,
    next: usize,
    r_cap: f64,
}

/// Directed graph with terminal capacities. Arcs `2k` and `2k + 1` are sisters.
#[derive(Clone, Debug)]
pub struct FlowGraph {
    nodes: Vec<Node>,
    arcs: Vec<Arc>,
    flow: f64,
    queue_first: usize,
    queue_last: usize,
    orphans: Vec<usize>,
    time: u64,
}

/// Which side of the minimum cut a node falls on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Segment {
    Source,
    Sink,
}

impl FlowGraph {
    pub fn new(n: usize) -> Self {
        let node = Node {
            first: NONE,
            parent: NONE,
            next_active: NONE,
            in_queue: false,
            is_sink: false,
            tr_cap: 0.0,
            ts: 0,
            dist: 0,
        };
        FlowGraph {
            nodes: vec![node; n],
            arcs: Vec::new(),
            flow: 0.0,
            queue_first: NONE,
            queue_last: NONE,
            orphans: Vec::new(),
            time: 0,
        }
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Edge `i → j` with capacity `cap` and `j → i` with `rev_cap`.
    pub fn add_edge(&mut self, i: usize, j: usize, cap: f64, rev_cap: f64) {
        debug_assert!(i != j && cap >= 0.0 && rev_cap >= 0.0);
        let a = self.arcs.len();
        self.arcs.push(Arc { head: j, next: self.nodes[i].first, r_cap: cap });
        self.arcs.push(Arc { head: i, next: self.nodes[j].first, r_cap: rev_cap });
        self.nodes[i].first = a;
        self.nodes[j].first = a + 1;
    }

    /// Adds `source → i` and `i → sink` capacities; opposing terminal flow is cancelled immediately.
    pub fn add_tweights(&mut self, i: usize, cap_source: f64, cap_sink: f64) {
        debug_assert!(cap_source >= 0.0 && cap_sink >= 0.0);
        let delta = self.nodes[i].tr_cap;
        let (mut s, mut t) = (cap_source, cap_sink);
        if delta > 0.0 {
            s += delta;
        } else {
            t -= delta;
        }
        self.flow += s.min(t);
        self.nodes[i].tr_cap = s - t;
    }

    pub fn flow(&self) -> f64 {
        self.flow
    }

    pub fn segment(&self, i: usize) -> Segment {
        let n = &self.nodes[i];
        if n.parent != NONE && !n.is_sink {
            Segment::Source
        } else {
            Segment::Sink
        }
    }

    fn set_active(&mut self, i: usize) {
        if self.nodes[i].in_queue {
            return;
        }
        self.nodes[i].in_queue = true;
        self.nodes[i].next_active = NONE;
        if self.queue_last == NONE {
            self.queue_first = i;
        } else {
            self.nodes[self.queue_last].next_active = i;
        }
        self.queue_last = i;
    }

    fn next_active(&mut self) -> Option<usize> {
        loop {
            let i = self.queue_first;
            if i == NONE {
                return None;
            }
            self.queue_first = self.nodes[i].next_active;
            if self.queue_first == NONE {
                self.queue_last = NONE;
            }
            self.nodes[i].in_queue = false;
            self.nodes[i].next_active = NONE;
            if self.nodes[i].parent != NONE {
                return Some(i);
            }
        }
    }

    /// Runs to completion and returns the maximum flow value.
    pub fn maxflow(&mut self) -> f64 {
        for i in 0..self.nodes.len() {
            let n = &mut self.nodes[i];
            n.next_active = NONE;
            n.in_queue = false;
            n.ts = 0;
            if n.tr_cap > 0.0 {
                n.is_sink = false;
                n.parent = TERMINAL;
                n.dist = 1;
            } else if n.tr_cap < 0.0 {
                n.is_sink = true;
                n.parent = TERMINAL;
                n.dist = 1;
            } else {
                n.parent = NONE;
                continue;
            }
            self.set_active(i);
        }
        self.time = 0;

        let mut current: Option<usize> = None;
        loop {
            let i = match current.filter(|&i| self.nodes[i].parent != NONE) {
                Some(i) => i,
                None => match self.next_active() {
                    Some(i) => i,
                    None => break,
                },
            };
            current = None;

            let mut bridge = NONE;
            let mut a = self.nodes[i].first;
            if !self.nodes[i].is_sink {
                while a != NONE {
                    if self.arcs[a].r_cap > 0.0 {
                        let j = self.arcs[a].head;
                        if self.nodes[j].parent == NONE {
                            self.adopt_into(j, a ^ 1, i, false);
                        } else if self.nodes[j].is_sink {
                            bridge = a;
                            break;
                        } else if self.closer(j, i) {
                            self.reparent(j, a ^ 1, i);
                        }
                    }
                    a = self.arcs[a].next;
                }
            } else {
                while a != NONE {
                    if self.arcs[a ^ 1].r_cap > 0.0 {
                        let j = self.arcs[a].head;
                        if self.nodes[j].parent == NONE {
                            self.adopt_into(j, a ^ 1, i, true);
                        } else if !self.nodes[j].is_sink {
                            bridge = a ^ 1;
                            break;
                        } else if self.closer(j, i) {
                            self.reparent(j, a ^ 1, i);
                        }
                    }
                    a = self.arcs[a].next;
                }
            }

            self.time += 1;
            if bridge != NONE {
                // Keep growing from this node after the trees are repaired.
                self.nodes[i].in_queue = true;
                current = Some(i);
                self.augment(bridge);
                while let Some(o) = self.orphans.pop() {
                    if self.nodes[o].is_sink {
                        self.process_sink_orphan(o);
                    } else {
                        self.process_source_orphan(o);
                    }
                }
                self.nodes[i].in_queue = false;
            }
        }
        self.flow
    }

    fn adopt_into(&mut self, j: usize, parent_arc: usize, from: usize, sink: bool) {
        let (ts, dist) = (self.nodes[from].ts, self.nodes[from].dist);
        let n = &mut self.nodes[j];
        n.is_sink = sink;
        n.parent = parent_arc;
        n.ts = ts;
        n.dist = dist + 1;
        self.set_active(j);
    }

    fn closer(&self, j: usize, i: usize) -> bool {
        self.nodes[j].ts <= self.nodes[i].ts && self.nodes[j].dist > self.nodes[i].dist
    }

    fn reparent(&mut self, j: usize, parent_arc: usize, from: usize) {
        let (ts, dist) = (self.nodes[from].ts, self.nodes[from].dist);
        let n = &mut self.nodes[j];
        n.parent = parent_arc;
        n.ts = ts;
        n.dist = dist + 1;
    }

    fn augment(&mut self, middle: usize) {
        let mut bottleneck = self.arcs[middle].r_cap;
        // Source side: from the tail of `middle` up to the source.
        let mut i = self.arcs[middle ^ 1].head;
        loop {
            let a = self.nodes[i].parent;
            if a == TERMINAL {
                break;
            }
            bottleneck = bottleneck.min(self.arcs[a ^ 1].r_cap);
            i = self.arcs[a].head;
        }
        bottleneck = bottleneck.min(self.nodes[i].tr_cap);
        // Sink side.
        let mut i = self.arcs[middle].head;
        loop {
            let a = self.nodes[i].parent;
            if a == TERMINAL {
                break;
            }
            bottleneck = bottleneck.min(self.arcs[a].r_cap);
            i = self.arcs[a].head;
        }
        bottleneck = bottleneck.min(-self.nodes[i].tr_cap);

        self.arcs[middle ^ 1].r_cap += bottleneck;
        self.arcs[middle].r_cap -= bottleneck;

        let mut i = self.arcs[middle ^ 1].head;
        loop {
            let a = self.nodes[i].parent;
            if a == TERMINAL {
                break;
            }
            self.arcs[a].r_cap += bottleneck;
            self.arcs[a ^ 1].r_cap -= bottleneck;
            if self.arcs[a ^ 1].r_cap <= 0.0 {
                self.arcs[a ^ 1].r_cap = 0.0;
                self.make_orphan(i);
            }
            i = self.arcs[a].head;
        }
        self.nodes[i].tr_cap -= bottleneck;
        if self.nodes[i].tr_cap <= 0.0 {
            self.nodes[i].tr_cap = 0.0;
            self.make_orphan(i);
        }

        let mut i = self.arcs[middle].head;
        loop {
            let a = self.nodes[i].parent;
            if a == TERMINAL {
                break;
            }
            self.arcs[a ^ 1].r_cap += bottleneck;
            self.arcs[a].r_cap -= bottleneck;
            if self.arcs[a].r_cap <= 0.0 {
                self.arcs[a].r_cap = 0.0;
                self.make_orphan(i);
            }
            i = self.arcs[a].head;
        }
        self.nodes[i].tr_cap += bottleneck;
        if self.nodes[i].tr_cap >= 0.0 {
            self.nodes[i].tr_cap = 0.0;
            self.make_orphan(i);
        }
        self.flow += bottleneck;
    }

    fn make_orphan(&mut self, i: usize) {
        self.nodes[i].parent = ORPHAN;
        self.orphans.push(i);
    }

    /// Distance from `j` to its terminal if `j`'s path to it is intact, caching results with `time`.
    fn origin_distance(&mut self, j: usize) -> Option<u32> {
        let mut d = 0u32;
        let mut k = j;
        loop {
            if self.nodes[k].ts == self.time {
                d += self.nodes[k].dist;
                break;
            }
            let a = self.nodes[k].parent;
            d += 1;
            if a == TERMINAL {
                self.nodes[k].ts = self.time;
                self.nodes[k].dist = 1;
                break;
            }
            if a == ORPHAN || a == NONE {
                return None;
            }
            k = self.arcs[a].head;
        }
        // Cache distances along the verified path.
        let mut k = j;
        let mut dd = d;
        while self.nodes[k].ts != self.time {
            self.nodes[k].ts = self.time;
            self.nodes[k].dist = dd;
            dd -= 1;
            k = self.arcs[self.nodes[k].parent].head;
        }
        Some(d)
    }

    fn process_source_orphan(&mut self, i: usize) {
        self.process_orphan(i, false);
    }

    fn process_sink_orphan(&mut self, i: usize) {
        self.process_orphan(i, true);
    }

    fn process_orphan(&mut self, i: usize, sink: bool) {
        let mut best_arc = NONE;
        let mut best_dist = u32::MAX;
        let mut a = self.nodes[i].first;
        while a != NONE {
            // Residual capacity from the candidate parent towards `i` (source tree) or from `i` (sink tree).
            let cap = if sink { self.arcs[a].r_cap } else { self.arcs[a ^ 1].r_cap };
            if cap > 0.0 {
                let j = self.arcs[a].head;
                if self.nodes[j].is_sink == sink && self.nodes[j].parent != NONE {
                    if let Some(d) = self.origin_distance(j) {
                        if d < best_dist {
                            best_arc = a;
                            best_dist = d;
                        }
                    }
                }
            }
            a = self.arcs[a].next;
        }
        if best_arc != NONE {
            let n = &mut self.nodes[i];
            n.parent = best_arc;
            n.ts = self.time;
            n.dist = best_dist + 1;
            return;
        }
        self.nodes[i].parent = NONE;
        let mut a = self.nodes[i].first;
        while a != NONE {
            let j = self.arcs[a].head;
            let pj = self.nodes[j].parent;
            if self.nodes[j].is_sink == sink && pj != NONE {
                let cap = if sink { self.arcs[a].r_cap } else { self.arcs[a ^ 1].r_cap };
                if cap > 0.0 {
                    self.set_active(j);
                }
                if pj != TERMINAL && pj != ORPHAN && self.arcs[pj].head == i {
                    self.make_orphan(j);
                }
            }
            a = self.arcs[a].next;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn series_bottleneck() {
        let mut g = FlowGraph::new(1);
        g.add_tweights(0, 3.0, 2.0);
        assert_eq!(g.maxflow(), 2.0);
    }

    #[test]
    fn diamond() {
        // s→a 3, s→b 2, a→b 1, a→t 1, b→t 3.
        let mut g = FlowGraph::new(2);
        g.add_tweights(0, 3.0, 1.0);
        g.add_tweights(1, 2.0, 3.0);
        g.add_edge(0, 1, 1.0, 0.0);
        assert_eq!(g.maxflow(), 4.0);
        assert_eq!(g.segment(0), Segment::Source);
        assert_eq!(g.segment(1), Segment::Sink);
    }

    fn brute_min_cut(n: usize, src: &[f64], snk: &[f64], edges: &[(usize, usize, f64)]) -> f64 {
        (0..1u32 << n)
            .map(|mask| {
                // bit set: node on the sink side.
                let t = |i: usize| mask >> i & 1 == 1;
                let mut c = 0.0;
                for i in 0..n {
                    c += if t(i) { src[i] } else { snk[i] };
                }
                for &(i, j, w) in edges {
                    if !t(i) && t(j) {
                        c += w;
                    }
                }
                c
            })
            .fold(f64::INFINITY, f64::min)
    }

    #[test]
    fn random_graphs_match_exhaustive_cut() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        for _ in 0..200 {
            let n = rng.gen_range(2..=10);
            let src: Vec<f64> = (0..n).map(|_| rng.gen_range(0..6) as f64).collect();
            let snk: Vec<f64> = (0..n).map(|_| rng.gen_range(0..6) as f64).collect();
            let mut g = FlowGraph::new(n);
            let mut edges = Vec::new();
            for i in 0..n {
                g.add_tweights(i, src[i], snk[i]);
                for j in i + 1..n {
                    if rng.gen_bool(0.4) {
                        let (a, b) = (rng.gen_range(0..5) as f64, rng.gen_range(0..5) as f64);
                        g.add_edge(i, j, a, b);
                        edges.push((i, j, a));
                        edges.push((j, i, b));
                    }
                }
            }
            let flow = g.maxflow();
            assert_eq!(flow, brute_min_cut(n, &src, &snk, &edges));
            let mut cut = 0.0;
            let t = |i: usize| g.segment(i) == Segment::Sink;
            for i in 0..n {
                cut += if t(i) { src[i] } else { snk[i] };
            }
            for &(i, j, w) in &edges {
                if !t(i) && t(j) {
                    cut += w;
                }
            }
            assert_eq!(cut, flow);
        }
    }
}
