use rand::seq::SliceRandom;
use rand::Rng;

use super::rng::{stream, TAG_NETWORK};

/// Undirected static contact graph in compressed adjacency form.
#[derive(Debug, Clone, PartialEq)]
pub struct ContactNetwork {
    offsets: Vec<usize>,
    neighbors: Vec<u32>,
}

impl ContactNetwork {
    /// Builds a network from an undirected edge list; self-loops and repeated
    /// edges are dropped.
    pub fn from_edges(n_agents: usize, edges: &[(u32, u32)]) -> Self {
        let mut directed: Vec<(u32, u32)> = Vec::with_capacity(edges.len() * 2);
        for &(a, b) in edges {
            if a != b && (a as usize) < n_agents && (b as usize) < n_agents {
                directed.push((a, b));
                directed.push((b, a));
            }
        }
        directed.sort_unstable();
        directed.dedup();
        let mut offsets = vec![0usize; n_agents + 1];
        for &(a, _) in &directed {
            offsets[a as usize + 1] += 1;
        }
        for i in 0..n_agents {
            offsets[i + 1] += offsets[i];
        }
        let neighbors = directed.into_iter().map(|(_, b)| b).collect();
        ContactNetwork { offsets, neighbors }
    }

    /// Near-regular random graph: each agent gets `floor(mean)` stubs plus one
    /// more with probability `frac(mean)`, and stubs are paired at random.
    pub fn random_regular(n_agents: usize, mean_degree: f64, seed: u64, layer: u64) -> Self {
        let mut rng = stream(seed, layer, 0, TAG_NETWORK);
        let base = mean_degree.floor() as usize;
        let frac = mean_degree - base as f64;
        let mut stubs: Vec<u32> = Vec::with_capacity(n_agents * (base + 1));
        for agent in 0..n_agents as u32 {
            let extra = usize::from(frac > 0.0 && rng.random::<f64>() < frac);
            for _ in 0..base + extra {
                stubs.push(agent);
            }
        }
        stubs.shuffle(&mut rng);
        let edges: Vec<(u32, u32)> = stubs.chunks_exact(2).map(|p| (p[0], p[1])).collect();
        ContactNetwork::from_edges(n_agents, &edges)
    }

    pub fn n_agents(&self) -> usize {
        self.offsets.len() - 1
    }

    #[inline]
    pub fn contacts(&self, agent: usize) -> &[u32] {
        &self.neighbors[self.offsets[agent]..self.offsets[agent + 1]]
    }

    pub fn n_edges(&self) -> usize {
        self.neighbors.len() / 2
    }

    pub fn mean_degree(&self) -> f64 {
        self.neighbors.len() as f64 / self.n_agents().max(1) as f64
    }
}
