//! Independent oracles and helpers shared by the integration tests.
#![allow(dead_code)]

use std::path::PathBuf;

use opinion_dist::{Distribution, Question};
use rand::Rng;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

/// Minimum-cost transport between `supply` and `demand` on points `pos`
/// with cost `|pos_i - pos_j|`, by successive shortest paths over the full
/// bipartite graph. Knows nothing about CDFs.
pub fn transport_cost(supply: &[f64], demand: &[f64], pos: &[f64]) -> f64 {
    let n = supply.len();
    // Nodes: 0 source, 1..=n supply, n+1..=2n demand, 2n+1 sink.
    let sink = 2 * n + 1;
    let nodes = sink + 1;
    struct Edge {
        to: usize,
        cap: f64,
        cost: f64,
    }
    let mut edges: Vec<Edge> = Vec::new();
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); nodes];
    let add = |edges: &mut Vec<Edge>, adj: &mut Vec<Vec<usize>>, a: usize, b: usize, cap: f64, cost: f64| {
        adj[a].push(edges.len());
        edges.push(Edge { to: b, cap, cost });
        adj[b].push(edges.len());
        edges.push(Edge { to: a, cap: 0.0, cost: -cost });
    };
    for i in 0..n {
        add(&mut edges, &mut adj, 0, 1 + i, supply[i], 0.0);
        add(&mut edges, &mut adj, 1 + n + i, sink, demand[i], 0.0);
        for j in 0..n {
            add(&mut edges, &mut adj, 1 + i, 1 + n + j, f64::INFINITY, (pos[i] - pos[j]).abs());
        }
    }

    let mut total = 0.0;
    loop {
        // Bellman-Ford, since residual edges carry negative costs.
        let mut dist = vec![f64::INFINITY; nodes];
        let mut via: Vec<Option<usize>> = vec![None; nodes];
        dist[0] = 0.0;
        for _ in 0..nodes {
            let mut changed = false;
            for u in 0..nodes {
                if dist[u].is_infinite() {
                    continue;
                }
                for &e in &adj[u] {
                    let edge = &edges[e];
                    if edge.cap > 1e-15 && dist[u] + edge.cost < dist[edge.to] - 1e-15 {
                        dist[edge.to] = dist[u] + edge.cost;
                        via[edge.to] = Some(e);
                        changed = true;
                    }
                }
            }
            if !changed {
                break;
            }
        }
        if dist[sink].is_infinite() {
            break;
        }
        let mut bottleneck = f64::INFINITY;
        let mut v = sink;
        while let Some(e) = via[v] {
            bottleneck = bottleneck.min(edges[e].cap);
            v = edges[e ^ 1].to;
        }
        let mut v = sink;
        while let Some(e) = via[v] {
            edges[e].cap -= bottleneck;
            edges[e ^ 1].cap += bottleneck;
            v = edges[e ^ 1].to;
        }
        total += bottleneck * dist[sink];
    }
    total
}

/// Oracle WD: drop refusals, renormalize, transport on the declared ordinals.
pub fn wd_oracle(p: &Distribution, q: &Distribution, question: &Question, normalize: bool) -> f64 {
    let keep: Vec<usize> = (0..question.n_options())
        .filter(|&i| !question.options[i].is_refusal)
        .collect();
    let restrict = |d: &Distribution| {
        let m: Vec<f64> = keep.iter().map(|&i| d.probs()[i]).collect();
        let s: f64 = m.iter().sum();
        m.into_iter().map(|x| x / s).collect::<Vec<_>>()
    };
    let pos: Vec<f64> = keep
        .iter()
        .map(|&i| f64::from(question.options[i].ordinal.unwrap()))
        .collect();
    let cost = transport_cost(&restrict(p), &restrict(q), &pos);
    if normalize {
        cost / (keep.len() - 1) as f64
    } else {
        cost
    }
}

pub fn random_simplex(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    // Occasionally plant exact zeros.
    let raw: Vec<f64> = (0..n)
        .map(|_| if rng.gen_bool(0.15) { 0.0 } else { rng.gen::<f64>() })
        .collect();
    let s: f64 = raw.iter().sum();
    if s == 0.0 {
        let mut v = vec![0.0; n];
        v[rng.gen_range(0..n)] = 1.0;
        return v;
    }
    raw.into_iter().map(|x| x / s).collect()
}

/// Ordinal question with `n` substantive options listed in a shuffled
/// ordinal order.
pub fn shuffled_question(rng: &mut impl Rng, id: &str, n: usize) -> Question {
    use rand::seq::SliceRandom;
    let mut ords: Vec<u32> = (1..=n as u32).collect();
    ords.shuffle(rng);
    Question {
        id: id.into(),
        wave: "W1".into(),
        text: "t".into(),
        options: ords
            .iter()
            .enumerate()
            .map(|(i, o)| {
                opinion_dist::AnswerOption::substantive(opinion_dist::survey::letter_at(i), format!("o{o}"), *o)
            })
            .collect(),
    }
}

pub fn dist(id: &str, p: Vec<f64>) -> Distribution {
    Distribution::new(id, p).unwrap()
}
