//! Primal network simplex for the balanced transportation problem.
//!
//! The bipartite network (sources `0..n`, sinks `n..n+m`) is augmented with
//! an artificial root joined to every node by a high-cost arc, which gives a
//! feasible starting tree. Pivots use block search pricing and the
//! strongly-feasible leaving-arc rule, both with fixed scan order, so the
//! returned vertex is deterministic.

use crate::error::{Error, Result};

struct Network {
    n: usize,
    m: usize,
    root: usize,
    cost: Vec<f64>,
    flow: Vec<f64>,
    parent: Vec<usize>,
    pred: Vec<usize>,
    /// `true` when the tree arc into this node points from the node to its parent.
    up: Vec<bool>,
    depth: Vec<usize>,
    pot: Vec<f64>,
    children: Vec<Vec<usize>>,
}

const NONE: usize = usize::MAX;

impl Network {
    fn real_arcs(&self) -> usize {
        self.n * self.m
    }

    fn source(&self, arc: usize) -> usize {
        if arc < self.real_arcs() {
            arc / self.m
        } else {
            let u = arc - self.real_arcs();
            if u < self.n {
                u
            } else {
                self.root
            }
        }
    }

    fn target(&self, arc: usize) -> usize {
        if arc < self.real_arcs() {
            self.n + arc % self.m
        } else {
            let u = arc - self.real_arcs();
            if u < self.n {
                self.root
            } else {
                u
            }
        }
    }

    fn reduced_cost(&self, arc: usize) -> f64 {
        self.cost[arc] + self.pot[self.source(arc)] - self.pot[self.target(arc)]
    }

    fn join(&self, mut a: usize, mut b: usize) -> usize {
        while a != b {
            if self.depth[a] >= self.depth[b] {
                a = self.parent[a];
            } else {
                b = self.parent[b];
            }
        }
        a
    }

    fn detach(&mut self, child: usize, from: usize) {
        let kids = &mut self.children[from];
        if let Some(pos) = kids.iter().position(|&c| c == child) {
            kids.swap_remove(pos);
        }
    }

    /// Pushes flow around the cycle closed by `entering` and re-hangs the tree.
    fn pivot(&mut self, entering: usize) -> Result<()> {
        let first = self.source(entering);
        let second = self.target(entering);
        let join = self.join(first, second);

        let mut delta = f64::INFINITY;
        let mut leaving_node = NONE;
        let mut side = 0u8;
        let mut u = first;
        while u != join {
            if self.up[u] {
                let d = self.flow[self.pred[u]];
                if d < delta {
                    delta = d;
                    leaving_node = u;
                    side = 1;
                }
            }
            u = self.parent[u];
        }
        let mut u = second;
        while u != join {
            if !self.up[u] {
                let d = self.flow[self.pred[u]];
                if d <= delta {
                    delta = d;
                    leaving_node = u;
                    side = 2;
                }
            }
            u = self.parent[u];
        }
        if side == 0 {
            return Err(Error::Numeric("transport problem is unbounded".into()));
        }

        if delta > 0.0 {
            self.flow[entering] += delta;
            let mut u = first;
            while u != join {
                let a = self.pred[u];
                self.flow[a] += if self.up[u] { -delta } else { delta };
                u = self.parent[u];
            }
            let mut u = second;
            while u != join {
                let a = self.pred[u];
                self.flow[a] += if self.up[u] { delta } else { -delta };
                u = self.parent[u];
            }
        }

        let (u_in, v_in) = if side == 1 {
            (first, second)
        } else {
            (second, first)
        };
        let shift = if u_in == self.source(entering) {
            -self.reduced_cost(entering)
        } else {
            self.reduced_cost(entering)
        };

        // Reverse the stem from u_in up to leaving_node and hang it below v_in.
        let mut new_parent = v_in;
        let mut new_arc = entering;
        let mut u = u_in;
        loop {
            let old_parent = self.parent[u];
            let old_arc = self.pred[u];
            self.detach(u, old_parent);
            self.children[new_parent].push(u);
            self.parent[u] = new_parent;
            self.pred[u] = new_arc;
            self.up[u] = self.source(new_arc) == u;
            if u == leaving_node {
                break;
            }
            new_parent = u;
            new_arc = old_arc;
            u = old_parent;
        }

        let mut stack = vec![u_in];
        while let Some(x) = stack.pop() {
            self.pot[x] += shift;
            self.depth[x] = self.depth[self.parent[x]] + 1;
            stack.extend_from_slice(&self.children[x]);
        }
        Ok(())
    }
}

/// Solves `min <C, P>` over couplings of `a` (length `n`) and `b` (length `m`).
///
/// `cost` is row-major `n x m`. Returns the coupling, row-major.
pub fn network_simplex(a: &[f64], b: &[f64], cost: &[f64]) -> Result<Vec<f64>> {
    let n = a.len();
    let m = b.len();
    debug_assert_eq!(cost.len(), n * m);
    let nodes = n + m + 1;
    let root = n + m;
    let max_cost = cost.iter().cloned().fold(0.0f64, f64::max);
    let art_cost = (max_cost + 1.0) * (n + m) as f64;

    let mut all_cost = Vec::with_capacity(n * m + n + m);
    all_cost.extend_from_slice(cost);
    all_cost.extend(std::iter::repeat_n(art_cost, n + m));

    let mut flow = vec![0.0; n * m + n + m];
    let mut pot = vec![0.0; nodes];
    let mut parent = vec![root; nodes];
    let mut pred = vec![NONE; nodes];
    let mut up = vec![false; nodes];
    let mut depth = vec![1usize; nodes];
    parent[root] = NONE;
    depth[root] = 0;
    for u in 0..n + m {
        pred[u] = n * m + u;
        if u < n {
            flow[n * m + u] = a[u];
            up[u] = true;
            pot[u] = -art_cost;
        } else {
            flow[n * m + u] = b[u - n];
            pot[u] = art_cost;
        }
    }
    let mut children = vec![Vec::new(); nodes];
    children[root] = (0..n + m).collect();

    let mut net = Network {
        n,
        m,
        root,
        cost: all_cost,
        flow,
        parent,
        pred,
        up,
        depth,
        pot,
        children,
    };

    let arcs = n * m;
    let block = ((arcs as f64).sqrt().ceil() as usize)
        .max(10)
        .min(arcs.max(1));
    let tol = 1e-12 * max_cost.max(1.0);
    let max_pivots = 200 * (n + m) * (n + m) + 10_000;
    let mut next = 0usize;
    let mut pivots = 0usize;

    loop {
        // Block search: scan blocks cyclically, take the best candidate of
        // the first block that contains an improving arc.
        let mut best = NONE;
        let mut best_rc = -tol;
        let mut scanned = 0usize;
        let mut in_block = 0usize;
        let mut k = next;
        while scanned < arcs {
            let rc = net.reduced_cost(k);
            if rc < best_rc {
                best_rc = rc;
                best = k;
            }
            scanned += 1;
            in_block += 1;
            k += 1;
            if k == arcs {
                k = 0;
            }
            if in_block == block {
                if best != NONE {
                    break;
                }
                in_block = 0;
            }
        }
        if best == NONE {
            break;
        }
        next = k;
        net.pivot(best)?;
        pivots += 1;
        if pivots > max_pivots {
            return Err(Error::Numeric(format!(
                "network simplex did not converge within {max_pivots} pivots"
            )));
        }
    }

    let residual: f64 = net.flow[arcs..].iter().map(|f| f.abs()).sum();
    if residual > 1e-9 {
        return Err(Error::Numeric(format!(
            "artificial arcs still carry {residual} units; marginals inconsistent"
        )));
    }
    let mut plan = net.flow;
    plan.truncate(arcs);
    plan.iter_mut().for_each(|f| {
        if *f < 0.0 {
            *f = 0.0;
        }
    });
    Ok(plan)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_by_two() {
        // cheap diagonal
        let plan = network_simplex(&[0.5, 0.5], &[0.5, 0.5], &[0.0, 1.0, 1.0, 0.0]).unwrap();
        assert_eq!(plan, vec![0.5, 0.0, 0.0, 0.5]);
        // cheap anti-diagonal
        let plan = network_simplex(&[0.5, 0.5], &[0.5, 0.5], &[1.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(plan, vec![0.0, 0.5, 0.5, 0.0]);
    }

    #[test]
    fn unequal_sizes_feasible() {
        let a = [0.2, 0.3, 0.5];
        let b = [0.6, 0.4];
        let cost = [1.0, 2.0, 3.0, 1.0, 0.5, 4.0];
        let plan = network_simplex(&a, &b, &cost).unwrap();
        for i in 0..3 {
            assert!((plan[i * 2] + plan[i * 2 + 1] - a[i]).abs() < 1e-12);
        }
        for j in 0..2 {
            assert!((plan[j] + plan[2 + j] + plan[4 + j] - b[j]).abs() < 1e-12);
        }
        // row 2 all to column 0, row 1 all to column 1, row 0 split 0.1 / 0.1
        let total: f64 = plan.iter().zip(cost).map(|(p, c)| p * c).sum();
        assert!((total - (0.1 + 0.2 + 0.3 + 0.25)).abs() < 1e-12);
    }

    #[test]
    fn single_source() {
        let plan = network_simplex(&[1.0], &[0.25, 0.75], &[3.0, 1.0]).unwrap();
        assert_eq!(plan, vec![0.25, 0.75]);
    }
}
