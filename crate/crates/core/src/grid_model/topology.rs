use serde::{Deserialize, Serialize};

use super::{Branch, GridCase};

/// One operating state: the intact network (`outaged == None`) or the
/// network with exactly one branch removed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Contingency {
    pub outaged: Option<usize>,
    /// In-service branch ids, in file order.
    pub in_service: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedOutage {
    pub branch: usize,
    pub reason: String,
}

/// Case 0 is the intact network; every later case removes one branch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContingencySet {
    pub cases: Vec<Contingency>,
    pub skipped: Vec<SkippedOutage>,
}

impl ContingencySet {
    pub fn len(&self) -> usize {
        self.cases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cases.is_empty()
    }

    /// Number of post-contingency cases (excludes the intact network).
    pub fn n_outages(&self) -> usize {
        self.cases.len() - 1
    }

    /// Intact network only.
    pub fn intact_only(case: &GridCase) -> Self {
        ContingencySet {
            cases: vec![Contingency {
                outaged: None,
                in_service: (0..case.branches.len()).collect(),
            }],
            skipped: Vec::new(),
        }
    }
}

/// Builds the N-1 set. Branches whose removal splits the network are left
/// out and reported in `skipped`.
pub fn enumerate_contingencies(case: &GridCase) -> ContingencySet {
    let n_branches = case.branches.len();
    let bridges = find_bridges(case.n_buses(), &case.branches);
    let mut cases = vec![Contingency {
        outaged: None,
        in_service: (0..n_branches).collect(),
    }];
    let mut skipped = Vec::new();
    for k in 0..n_branches {
        if bridges[k] {
            let b = &case.branches[k];
            let reason = format!(
                "outage of branch {k} ({}-{}) disconnects the network",
                case.buses[b.from].id, case.buses[b.to].id
            );
            log::warn!("skipping contingency: {reason}");
            skipped.push(SkippedOutage { branch: k, reason });
        } else {
            cases.push(Contingency {
                outaged: Some(k),
                in_service: (0..n_branches).filter(|&j| j != k).collect(),
            });
        }
    }
    ContingencySet { cases, skipped }
}

/// Whether the graph on `n` buses formed by the listed branches is connected.
pub fn is_connected(n: usize, branches: &[Branch], in_service: &[usize]) -> bool {
    if n == 0 {
        return true;
    }
    let mut parent: Vec<usize> = (0..n).collect();
    fn root(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    let mut components = n;
    for &k in in_service {
        let (a, b) = (root(&mut parent, branches[k].from), root(&mut parent, branches[k].to));
        if a != b {
            parent[a] = b;
            components -= 1;
        }
    }
    components == 1
}

/// Flags every bridge branch (iterative low-link search; parallel branches
/// are never bridges).
pub fn find_bridges(n: usize, branches: &[Branch]) -> Vec<bool> {
    let mut adjacency = vec![Vec::new(); n];
    for (k, b) in branches.iter().enumerate() {
        adjacency[b.from].push((b.to, k));
        adjacency[b.to].push((b.from, k));
    }
    let mut is_bridge = vec![false; branches.len()];
    let mut order = vec![usize::MAX; n];
    let mut low = vec![0usize; n];
    let mut counter = 0;

    for start in 0..n {
        if order[start] != usize::MAX {
            continue;
        }
        // (vertex, edge used to reach it, next adjacency position)
        let mut stack: Vec<(usize, usize, usize)> = vec![(start, usize::MAX, 0)];
        order[start] = counter;
        low[start] = counter;
        counter += 1;
        while let Some(&mut (v, via, ref mut pos)) = stack.last_mut() {
            if *pos < adjacency[v].len() {
                let (w, edge) = adjacency[v][*pos];
                *pos += 1;
                if edge == via {
                    continue;
                }
                if order[w] == usize::MAX {
                    order[w] = counter;
                    low[w] = counter;
                    counter += 1;
                    stack.push((w, edge, 0));
                } else {
                    low[v] = low[v].min(order[w]);
                }
            } else {
                stack.pop();
                if let Some(&(parent, _, _)) = stack.last() {
                    low[parent] = low[parent].min(low[v]);
                    if low[v] > order[parent] {
                        is_bridge[via] = true;
                    }
                }
            }
        }
    }
    is_bridge
}
