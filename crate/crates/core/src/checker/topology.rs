//! Dataflow-graph shape: linear, forked, joined, cyclic.

use std::collections::BTreeSet;

use serde::Serialize;

use crate::model::{Architecture, PIPE};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Topology {
    Linear,
    Fork,
    Join,
    Cyclic,
}

/// Instances as nodes; one directed edge per pipe whose source and sink are
/// both filled by instances. Parallel edges are kept.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DataflowGraph {
    pub nodes: Vec<String>,
    pub edges: Vec<(usize, usize)>,
}

impl DataflowGraph {
    pub fn from_arch(arch: &Architecture) -> Self {
        let nodes: Vec<String> = arch.instances.keys().cloned().collect();
        let index = |name: &str| nodes.binary_search_by(|n| n.as_str().cmp(name)).ok();
        let mut edges = Vec::new();
        for conn in arch.connectors.values().filter(|c| c.type_name == PIPE) {
            for src in arch.attachments_of(&conn.name, "source") {
                for dst in arch.attachments_of(&conn.name, "sink") {
                    if let (Some(a), Some(b)) = (index(&src.instance), index(&dst.instance)) {
                        edges.push((a, b));
                    }
                }
            }
        }
        DataflowGraph { nodes, edges }
    }

    pub fn successors(&self) -> Vec<Vec<usize>> {
        let mut succ = vec![Vec::new(); self.nodes.len()];
        for &(a, b) in &self.edges {
            succ[a].push(b);
        }
        for s in &mut succ {
            s.sort_unstable();
        }
        succ
    }

    /// Strongly connected components (Tarjan), each sorted, in discovery order.
    pub fn sccs(&self) -> Vec<Vec<usize>> {
        struct State<'a> {
            succ: &'a [Vec<usize>],
            index: Vec<Option<usize>>,
            low: Vec<usize>,
            on_stack: Vec<bool>,
            stack: Vec<usize>,
            next: usize,
            out: Vec<Vec<usize>>,
        }

        fn visit(s: &mut State<'_>, v: usize) {
            s.index[v] = Some(s.next);
            s.low[v] = s.next;
            s.next += 1;
            s.stack.push(v);
            s.on_stack[v] = true;
            for i in 0..s.succ[v].len() {
                let w = s.succ[v][i];
                match s.index[w] {
                    None => {
                        visit(s, w);
                        s.low[v] = s.low[v].min(s.low[w]);
                    }
                    Some(iw) if s.on_stack[w] => s.low[v] = s.low[v].min(iw),
                    Some(_) => {}
                }
            }
            if Some(s.low[v]) == s.index[v] {
                let mut comp = Vec::new();
                loop {
                    let w = s.stack.pop().unwrap();
                    s.on_stack[w] = false;
                    comp.push(w);
                    if w == v {
                        break;
                    }
                }
                comp.sort_unstable();
                s.out.push(comp);
            }
        }

        let succ = self.successors();
        let n = self.nodes.len();
        let mut s = State {
            succ: &succ,
            index: vec![None; n],
            low: vec![0; n],
            on_stack: vec![false; n],
            stack: Vec::new(),
            next: 0,
            out: Vec::new(),
        };
        for v in 0..n {
            if s.index[v].is_none() {
                visit(&mut s, v);
            }
        }
        s.out
    }

    /// Components that contain a cycle: more than one node, or a self-loop.
    pub fn cyclic_components(&self) -> Vec<Vec<usize>> {
        let mut comps: Vec<Vec<usize>> = self
            .sccs()
            .into_iter()
            .filter(|c| c.len() > 1 || self.edges.contains(&(c[0], c[0])))
            .collect();
        comps.sort();
        comps
    }

    /// A simple cycle through the smallest node of a cyclic component.
    fn cycle_in(&self, comp: &[usize], succ: &[Vec<usize>]) -> Vec<usize> {
        let start = comp[0];
        let inside = |v: usize| comp.binary_search(&v).is_ok();
        let mut path = vec![start];
        let mut visited = vec![false; self.nodes.len()];
        visited[start] = true;
        fn dfs(
            v: usize,
            start: usize,
            succ: &[Vec<usize>],
            inside: &dyn Fn(usize) -> bool,
            visited: &mut [bool],
            path: &mut Vec<usize>,
        ) -> bool {
            for &w in &succ[v] {
                if w == start {
                    return true;
                }
                if inside(w) && !visited[w] {
                    visited[w] = true;
                    path.push(w);
                    if dfs(w, start, succ, inside, visited, path) {
                        return true;
                    }
                    path.pop();
                }
            }
            false
        }
        let found = dfs(start, start, succ, &inside, &mut visited, &mut path);
        debug_assert!(found, "cyclic component without a cycle");
        path
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct TopologyReport {
    pub classification: BTreeSet<Topology>,
    pub fork_points: Vec<String>,
    pub join_points: Vec<String>,
    /// One simple cycle per strongly connected component that has one.
    pub cycles: Vec<Vec<String>>,
}

impl TopologyReport {
    pub fn is(&self, t: Topology) -> bool {
        self.classification.contains(&t)
    }
}

pub fn classify_topology(arch: &Architecture) -> TopologyReport {
    classify_graph(&DataflowGraph::from_arch(arch))
}

pub fn classify_graph(g: &DataflowGraph) -> TopologyReport {
    let n = g.nodes.len();
    let mut out_deg = vec![0usize; n];
    let mut in_deg = vec![0usize; n];
    for &(a, b) in &g.edges {
        out_deg[a] += 1;
        in_deg[b] += 1;
    }
    let names = |pred: &dyn Fn(usize) -> bool| -> Vec<String> {
        (0..n)
            .filter(|&v| pred(v))
            .map(|v| g.nodes[v].clone())
            .collect()
    };
    let fork_points = names(&|v| out_deg[v] > 1);
    let join_points = names(&|v| in_deg[v] > 1);

    let succ = g.successors();
    let cycles: Vec<Vec<String>> = g
        .cyclic_components()
        .iter()
        .map(|comp| {
            g.cycle_in(comp, &succ)
                .into_iter()
                .map(|v| g.nodes[v].clone())
                .collect()
        })
        .collect();

    let mut classification = BTreeSet::new();
    let acyclic = cycles.is_empty();
    if n > 0
        && acyclic
        && fork_points.is_empty()
        && join_points.is_empty()
        && g.edges.len() == n - 1
    {
        // in/out degree ≤ 1, no cycle and n-1 edges leaves exactly one path
        classification.insert(Topology::Linear);
    } else {
        if !fork_points.is_empty() {
            classification.insert(Topology::Fork);
        }
        if !join_points.is_empty() {
            classification.insert(Topology::Join);
        }
        if !acyclic {
            classification.insert(Topology::Cyclic);
        }
    }

    TopologyReport {
        classification,
        fork_points,
        join_points,
        cycles,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn graph(names: &[&str], edges: &[(usize, usize)]) -> DataflowGraph {
        DataflowGraph {
            nodes: names.iter().map(|s| s.to_string()).collect(),
            edges: edges.to_vec(),
        }
    }

    fn set(ts: &[Topology]) -> BTreeSet<Topology> {
        ts.iter().copied().collect()
    }

    #[test]
    fn chain_is_linear() {
        let r = classify_graph(&graph(&["A", "B", "C"], &[(0, 1), (1, 2)]));
        assert_eq!(r.classification, set(&[Topology::Linear]));
    }

    #[test]
    fn diamond_forks_and_joins() {
        // A→B, A→C, B→D, C→D. Expected values follow from counting degrees:
        // out(A)=2, in(D)=2, every other degree ≤ 1; no path revisits a node.
        let r = classify_graph(&graph(
            &["A", "B", "C", "D"],
            &[(0, 1), (0, 2), (1, 3), (2, 3)],
        ));
        assert_eq!(r.classification, set(&[Topology::Fork, Topology::Join]));
        assert_eq!(r.fork_points, ["A"]);
        assert_eq!(r.join_points, ["D"]);
        assert!(r.cycles.is_empty());
    }

    #[test]
    fn two_cycle() {
        let r = classify_graph(&graph(&["A", "B"], &[(0, 1), (1, 0)]));
        assert_eq!(r.classification, set(&[Topology::Cyclic]));
        assert_eq!(r.cycles, vec![vec!["A".to_string(), "B".to_string()]]);
    }

    #[test]
    fn self_loop_is_cyclic() {
        let r = classify_graph(&graph(&["A"], &[(0, 0)]));
        assert_eq!(r.classification, set(&[Topology::Cyclic]));
        assert_eq!(r.cycles, vec![vec!["A".to_string()]]);
    }

    #[test]
    fn parallel_pipes_count_twice() {
        let r = classify_graph(&graph(&["A", "B"], &[(0, 1), (0, 1)]));
        assert_eq!(r.classification, set(&[Topology::Fork, Topology::Join]));
    }

    #[test]
    fn degenerate_graphs() {
        assert_eq!(
            classify_graph(&graph(&["A"], &[])).classification,
            set(&[Topology::Linear])
        );
        assert!(classify_graph(&graph(&[], &[])).classification.is_empty());
        // two disjoint chains are neither linear nor forked
        assert!(
            classify_graph(&graph(&["A", "B", "C", "D"], &[(0, 1), (2, 3)]))
                .classification
                .is_empty()
        );
    }

    #[test]
    fn listed_cycles_are_closed_walks() {
        let g = graph(
            &["A", "B", "C", "D", "E"],
            &[(0, 1), (1, 2), (2, 0), (2, 3), (3, 4), (4, 3)],
        );
        let r = classify_graph(&g);
        assert_eq!(r.cycles.len(), 2);
        for cycle in &r.cycles {
            let idx: Vec<usize> = cycle
                .iter()
                .map(|n| g.nodes.iter().position(|m| m == n).unwrap())
                .collect();
            for w in 0..idx.len() {
                let edge = (idx[w], idx[(w + 1) % idx.len()]);
                assert!(g.edges.contains(&edge), "{edge:?} missing");
            }
        }
    }
}
