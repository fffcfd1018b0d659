//! Brute-force reference computations, written independently of the
//! library's enumeration and counterfactual code.

#![allow(dead_code)]

use causalbench::{Motif, NodeId, Scm};

pub const MOTIFS: [Motif; 5] = [
    Motif::Chain,
    Motif::Fork,
    Motif::Collider,
    Motif::MultiParent,
    Motif::Mixed,
];

pub fn random_scm(seed: u64, nodes: usize, motif: usize) -> Scm {
    causalbench::scm::random_binary_scm(seed, nodes, MOTIFS[motif % MOTIFS.len()]).unwrap()
}

fn cards(scm: &Scm) -> Vec<usize> {
    (0..scm.node_count())
        .map(|v| scm.cardinality(NodeId(v)))
        .collect()
}

/// Every complete world, first node fastest.
pub fn worlds(scm: &Scm) -> Vec<Vec<usize>> {
    let cards = cards(scm);
    let mut out = vec![vec![]];
    for &c in &cards {
        out = out
            .into_iter()
            .flat_map(|w| {
                (0..c).map(move |v| {
                    let mut w = w.clone();
                    w.push(v);
                    w
                })
            })
            .collect();
    }
    out
}

/// The table row of `node` whose `given` tuple matches `world`.
fn row<'a>(scm: &'a Scm, node: usize, world: &[usize]) -> &'a [f64] {
    let cpt = scm.cpt(NodeId(node));
    let given: Vec<usize> = cpt.parents.iter().map(|p| world[p.0]).collect();
    &cpt.rows
        .iter()
        .find(|r| r.given == given)
        .expect("row exists")
        .probs
}

/// Product of table entries, skipping clamped nodes.
pub fn weight(scm: &Scm, world: &[usize], clamp: &[Option<usize>]) -> f64 {
    let mut p = 1.0;
    for v in 0..world.len() {
        match clamp[v] {
            Some(x) if x != world[v] => return 0.0,
            Some(_) => {}
            None => p *= row(scm, v, world)[world[v]],
        }
    }
    p
}

pub fn holds(world: &[usize], pairs: &[(usize, usize)]) -> bool {
    pairs.iter().all(|&(n, v)| world[n] == v)
}

/// `P(target | do(clamp), evidence)`; `None` when the evidence has no mass.
pub fn conditional(
    scm: &Scm,
    target: &[(usize, usize)],
    evidence: &[(usize, usize)],
    clamp: &[(usize, usize)],
) -> Option<f64> {
    let mut c = vec![None; scm.node_count()];
    for &(n, v) in clamp {
        c[n] = Some(v);
    }
    let (mut num, mut den) = (0.0, 0.0);
    for w in worlds(scm) {
        if !holds(&w, evidence) {
            continue;
        }
        let p = weight(scm, &w, &c);
        den += p;
        if holds(&w, target) {
            num += p;
        }
    }
    (den > 0.0).then(|| num / den)
}

fn inverse_cdf(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Counterfactual probability with one shared uniform noise per node.
///
/// Each node's unit interval is cut at every cumulative sum of every row;
/// the full product of the resulting cells is enumerated, evaluating each
/// cell at its midpoint in a factual and a clamped copy.
pub fn counterfactual(
    scm: &Scm,
    evidence: &[(usize, usize)],
    action: &[(usize, usize)],
    target: &[(usize, usize)],
) -> Option<f64> {
    let n = scm.node_count();
    let cells: Vec<Vec<(f64, f64)>> = (0..n)
        .map(|v| {
            let mut cuts = vec![0.0, 1.0];
            for r in &scm.cpt(NodeId(v)).rows {
                let mut acc = 0.0;
                for p in &r.probs {
                    acc += p;
                    cuts.push(acc.min(1.0));
                }
            }
            cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
            cuts.dedup();
            cuts.windows(2)
                .filter(|w| w[1] > w[0])
                .map(|w| ((w[0] + w[1]) / 2.0, w[1] - w[0]))
                .collect()
        })
        .collect();
    let topo = scm.graph().topo_order().unwrap();
    let mut clamp = vec![None; n];
    for &(a, x) in action {
        clamp[a] = Some(x);
    }
    let (mut num, mut den) = (0.0, 0.0);
    let mut idx = vec![0usize; n];
    loop {
        let mut fact = vec![0; n];
        let mut cf = vec![0; n];
        let mut w = 1.0;
        for &v in &topo {
            let (u, len) = cells[v.0][idx[v.0]];
            w *= len;
            fact[v.0] = inverse_cdf(row(scm, v.0, &fact), u);
            cf[v.0] = match clamp[v.0] {
                Some(x) => x,
                None => inverse_cdf(row(scm, v.0, &cf), u),
            };
        }
        if holds(&fact, evidence) {
            den += w;
            if holds(&cf, target) {
                num += w;
            }
        }
        let mut k = 0;
        loop {
            if k == n {
                return (den > 0.0).then(|| num / den);
            }
            idx[k] += 1;
            if idx[k] < cells[k].len() {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
    }
}
