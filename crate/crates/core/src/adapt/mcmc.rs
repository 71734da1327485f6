//! Multi-chain Metropolis–Hastings over knowledge-source constructs.
//!
//! The target density is the provider's score. Rejected proposals go to a
//! bounded buffer; when a chain has rejected `stall_limit` proposals in a row
//! the most recent buffered proposal is offered once more, unchanged.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::construct::ConstructKey;
use crate::knowledge::{ConstructSample, KnowledgeError, KnowledgeSource, QueryContext, SampleOrigin};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McmcConfig {
    pub m_chains: usize,
    pub n_steps: usize,
    pub buffer_capacity: usize,
    pub stall_limit: usize,
    pub seed: u64,
}

impl Default for McmcConfig {
    fn default() -> Self {
        McmcConfig { m_chains: 16, n_steps: 8, buffer_capacity: 32, stall_limit: 5, seed: 0 }
    }
}

#[derive(Debug, Error)]
pub enum McmcError {
    #[error("at least one chain is required")]
    NoChains,
    #[error("knowledge provider failed after {} samples: {source}", partial.samples.len())]
    Provider {
        #[source]
        source: KnowledgeError,
        partial: Box<McmcRun>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainState {
    pub chain_id: usize,
    pub current: ConstructSample,
    /// Accepted samples, in order.
    pub history: Vec<ConstructSample>,
    pub rejected: VecDeque<ConstructSample>,
    /// Consecutive rejections since the last acceptance or re-proposal.
    pub stall: usize,
    /// Key of the current state after every step.
    pub trace: Vec<ConstructKey>,
    pub proposed: usize,
    pub accepted: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct McmcRun {
    /// Seeds followed by every accepted sample, chain by chain.
    pub samples: Vec<ConstructSample>,
    pub traces: Vec<Vec<ConstructKey>>,
    pub proposed: usize,
    pub accepted: usize,
}

impl McmcRun {
    pub fn acceptance_rate(&self) -> f64 {
        if self.proposed == 0 {
            0.0
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }
}

/// Metropolis acceptance probability for a symmetric proposal.
pub fn acceptance(current: f64, proposed: f64) -> f64 {
    (proposed / current).min(1.0)
}

/// Per-chain RNG: the run seed on its own stream.
pub fn chain_rng(seed: u64, chain: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chain as u64 + 1);
    rng
}

impl ChainState {
    pub fn new(chain_id: usize, seed: ConstructSample) -> Self {
        ChainState {
            chain_id,
            current: seed,
            history: Vec::new(),
            rejected: VecDeque::new(),
            stall: 0,
            trace: Vec::new(),
            proposed: 0,
            accepted: 0,
        }
    }

    /// One MH step.
    pub fn step(
        &mut self,
        ks: &dyn KnowledgeSource,
        domain: &str,
        ctx: &QueryContext,
        cfg: &McmcConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<(), KnowledgeError> {
        let step = self.trace.len() + 1;
        let replay = self.stall >= cfg.stall_limit && !self.rejected.is_empty();
        let mut proposal = if replay {
            self.stall = 0;
            self.rejected.pop_back().expect("buffer is non-empty")
        } else {
            ks.propose(domain, &self.current, ctx, rng)?
        };
        proposal.origin = SampleOrigin { chain: self.chain_id, step };
        self.proposed += 1;
        let u: f64 = rng.gen();
        if u < acceptance(self.current.score, proposal.score) {
            self.current = proposal.clone();
            self.history.push(proposal);
            self.accepted += 1;
            self.stall = 0;
        } else {
            if !replay {
                if self.rejected.len() == cfg.buffer_capacity.max(1) {
                    self.rejected.pop_front();
                }
                self.rejected.push_back(proposal);
            }
            self.stall += 1;
        }
        self.trace.push(self.current.key());
        Ok(())
    }
}

fn collect(chains: Vec<ChainState>, seeds: &[ConstructSample]) -> McmcRun {
    let mut run = McmcRun { samples: seeds.to_vec(), ..Default::default() };
    for c in chains {
        run.proposed += c.proposed;
        run.accepted += c.accepted;
        run.samples.extend(c.history);
        run.traces.push(c.trace);
    }
    run
}

/// Seeds `m_chains` chains from the knowledge source and advances each by
/// `n_steps`, in parallel. Chains are independent and individually seeded, so
/// the result does not depend on the worker count.
pub fn run_mcmc(
    ks: &dyn KnowledgeSource,
    domain: &str,
    ctx: &QueryContext,
    cfg: &McmcConfig,
) -> Result<McmcRun, McmcError> {
    if cfg.m_chains == 0 {
        return Err(McmcError::NoChains);
    }
    let mut master = chain_rng(cfg.seed, usize::MAX - 1);
    let seeds = ks
        .sample_seeds(domain, cfg.m_chains, ctx, &mut master)
        .map_err(|source| McmcError::Provider { source, partial: Box::default() })?
        .into_iter()
        .enumerate()
        .map(|(i, mut s)| {
            s.origin = SampleOrigin { chain: i, step: 0 };
            s
        })
        .collect::<Vec<_>>();
    let results: Vec<(ChainState, Option<KnowledgeError>)> = seeds
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let mut chain = ChainState::new(i, s.clone());
            let mut rng = chain_rng(cfg.seed, i);
            for _ in 0..cfg.n_steps {
                if let Err(e) = chain.step(ks, domain, ctx, cfg, &mut rng) {
                    return (chain, Some(e));
                }
            }
            (chain, None)
        })
        .collect();
    let mut error = None;
    let mut chains = Vec::with_capacity(results.len());
    for (c, e) in results {
        if error.is_none() {
            error = e;
        }
        chains.push(c);
    }
    let run = collect(chains, &seeds);
    match error {
        Some(source) => Err(McmcError::Provider { source, partial: Box::new(run) }),
        None => Ok(run),
    }
}
