//! Cooperation between RL agents: neighbor graph, critic consensus penalty,
//! parameter averaging and trajectory pooling, plus a trainer that runs
//! agents against shared simulators.

use std::net::TcpListener;
use std::thread::JoinHandle;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::host::HostRuntime;
use super::remote::RemoteEnv;
use super::transport::{mem_pair, TcpTransport, Transport, TransportKind};
use super::AgentError;
use crate::env::{EnvConfig, EpisodeSource};
use crate::netsim::TraceLog;
use crate::rl::{consensus_term, IterStats, Layout, PolicyParams, Ppo, PpoHyper, Samples, Trajectory, ValuePenalty};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Topology {
    #[default]
    Ring,
    Mesh,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NeighborSet {
    neighbors: Vec<Vec<usize>>,
    pub kappa: f64,
}

impl NeighborSet {
    pub fn new(agents: usize, topology: Topology, kappa: f64) -> Result<Self, AgentError> {
        if agents == 0 {
            return Err(AgentError::Config("at least one agent is required".into()));
        }
        if !(kappa >= 0.0 && kappa.is_finite()) {
            return Err(AgentError::Config(format!("kappa {kappa} must be non-negative")));
        }
        let neighbors = (0..agents)
            .map(|i| {
                let mut nb: Vec<usize> = match topology {
                    Topology::Mesh => (0..agents).filter(|&j| j != i).collect(),
                    Topology::Ring => [(i + agents - 1) % agents, (i + 1) % agents]
                        .into_iter()
                        .filter(|&j| j != i)
                        .collect(),
                };
                nb.sort_unstable();
                nb.dedup();
                nb
            })
            .collect();
        Ok(Self { neighbors, kappa })
    }

    pub fn agents(&self) -> usize {
        self.neighbors.len()
    }

    pub fn of(&self, agent: usize) -> &[usize] {
        &self.neighbors[agent]
    }

    pub fn is_connected(&self) -> bool {
        let mut seen = vec![false; self.agents()];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(i) = stack.pop() {
            for &j in &self.neighbors[i] {
                if !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }
}

pub fn consensus_penalty(v_self: &[f64], v_neighbors: &[Vec<f64>], kappa: f64) -> Result<f64, AgentError> {
    Ok(consensus_term(v_self, v_neighbors, kappa)?.0)
}

/// Each agent's parameters become the equal-weight mean of its own and its
/// neighbors' current parameters.
pub fn share_merge(params: &[PolicyParams], set: &NeighborSet) -> Result<Vec<PolicyParams>, AgentError> {
    if params.len() != set.agents() {
        return Err(AgentError::Config(format!(
            "{} parameter sets for {} agents",
            params.len(),
            set.agents()
        )));
    }
    let layout = params[0].layout();
    if let Some(p) = params.iter().find(|p| p.layout() != layout) {
        return Err(AgentError::Config(format!("incompatible model shapes {:?} and {:?}", layout, p.layout())));
    }
    params
        .iter()
        .enumerate()
        .map(|(i, own)| {
            let group: Vec<&PolicyParams> = std::iter::once(own).chain(set.of(i).iter().map(|&j| &params[j])).collect();
            if group.len() == 1 {
                return Ok(own.clone());
            }
            let w = 1.0 / group.len() as f64;
            let data = (0..own.len())
                .map(|k| group.iter().map(|p| p.as_slice()[k]).sum::<f64>() * w)
                .collect();
            Ok(PolicyParams::from_vec(layout.clone(), data)?)
        })
        .collect()
}

pub fn pool_samples(own: &Samples, neighbors: &[&Samples]) -> Samples {
    let mut out = own.clone();
    for n in neighbors {
        out.append(n);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoopConfig {
    pub agents: usize,
    pub kappa: f64,
    pub topology: Topology,
    /// Iterations between parameter averaging rounds.
    pub share_every_iters: u64,
    pub pool_trajectories: bool,
    pub average_params: bool,
    pub probe_states: usize,
    pub probe_seed: u64,
    pub team_reward: bool,
    pub transport: TransportKind,
}

impl Default for CoopConfig {
    fn default() -> Self {
        Self {
            agents: 1,
            kappa: 0.1,
            topology: Topology::Ring,
            share_every_iters: 1,
            pool_trajectories: true,
            average_params: true,
            probe_states: 512,
            probe_seed: 0x0bb5_eed5,
            team_reward: true,
            transport: TransportKind::Mem,
        }
    }
}

impl CoopConfig {
    pub fn validate(&self) -> Result<(), AgentError> {
        let set = NeighborSet::new(self.agents, self.topology, self.kappa)?;
        if !set.is_connected() {
            return Err(AgentError::Config("neighbor graph is not connected".into()));
        }
        if self.share_every_iters == 0 {
            return Err(AgentError::Config("share_every_iters must be positive".into()));
        }
        Ok(())
    }
}

/// Seed of agent `i`; agent 0 uses the base seed.
pub fn agent_seed(base: u64, agent: usize) -> u64 {
    base.wrapping_add(agent as u64)
}

pub fn probe_states(n: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| (0..dim).map(|_| rng.random::<f64>()).collect()).collect()
}

/// Connects `agents` RL-side links to one host runtime.
fn connect(
    kind: TransportKind,
    agents: usize,
) -> Result<(Vec<Box<dyn Transport>>, Box<dyn FnOnce() -> Result<Vec<Box<dyn Transport>>, AgentError> + Send>), AgentError> {
    match kind {
        TransportKind::Mem => {
            let (rl, host): (Vec<_>, Vec<_>) = (0..agents).map(|_| mem_pair()).unzip();
            let rl = rl.into_iter().map(|t| Box::new(t) as Box<dyn Transport>).collect();
            let host: Vec<Box<dyn Transport>> = host.into_iter().map(|t| Box::new(t) as Box<dyn Transport>).collect();
            Ok((rl, Box::new(move || Ok(host))))
        }
        TransportKind::Tcp => {
            let listener = TcpListener::bind("127.0.0.1:0")?;
            let addr = listener.local_addr()?;
            let accept = move || -> Result<Vec<Box<dyn Transport>>, AgentError> {
                (0..agents)
                    .map(|_| {
                        let (s, _) = listener.accept()?;
                        Ok(Box::new(TcpTransport::from_stream(s)?) as Box<dyn Transport>)
                    })
                    .collect()
            };
            let rl = (0..agents)
                .map(|_| Ok(Box::new(TcpTransport::connect(addr)?) as Box<dyn Transport>))
                .collect::<Result<Vec<_>, AgentError>>()?;
            Ok((rl, Box::new(accept)))
        }
    }
}

/// Starts one host runtime per source on its own thread and returns, per
/// agent, the RL-side environments (one per runtime).
pub fn spawn_runtimes(
    env: &EnvConfig,
    coop: &CoopConfig,
    sources: Vec<Box<dyn EpisodeSource>>,
    keep_trace: bool,
) -> Result<(Vec<Vec<RemoteEnv>>, Vec<JoinHandle<Result<TraceLog, AgentError>>>), AgentError> {
    let mut envs: Vec<Vec<RemoteEnv>> = (0..coop.agents).map(|_| Vec::new()).collect();
    let mut servers = Vec::new();
    for source in sources {
        let (rl, host) = connect(coop.transport, coop.agents)?;
        let cfg = env.clone();
        let team = coop.team_reward;
        servers.push(std::thread::spawn(move || {
            let mut rt = HostRuntime::new(cfg, source, host()?)?;
            if !team {
                rt = rt.with_local_reward();
            }
            if keep_trace {
                rt = rt.with_trace();
            }
            rt.serve()
        }));
        for (i, link) in rl.into_iter().enumerate() {
            envs[i].push(RemoteEnv::new(env.clone(), i as u32, link)?);
        }
    }
    Ok((envs, servers))
}

pub struct CoopTrainer {
    coop: CoopConfig,
    neighbors: NeighborSet,
    agents: Vec<Ppo>,
    envs: Vec<Vec<RemoteEnv>>,
    servers: Vec<JoinHandle<Result<TraceLog, AgentError>>>,
    probes: Vec<Vec<f64>>,
}

impl CoopTrainer {
    /// `make_source(actor)` supplies the scenario stream of rollout actor
    /// `actor`; all agents share that actor's simulator.
    pub fn new(
        env: EnvConfig,
        hyper: PpoHyper,
        coop: CoopConfig,
        seed: u64,
        mut make_source: impl FnMut(usize) -> Box<dyn EpisodeSource>,
    ) -> Result<Self, AgentError> {
        env.validate()?;
        hyper.validate()?;
        coop.validate()?;
        let neighbors = NeighborSet::new(coop.agents, coop.topology, coop.kappa)?;
        let (k1, k2) = env.grid.dims();
        let layout = Layout::new(env.observation_dim(), &hyper.hidden, k1, k2);
        let agents = (0..coop.agents)
            .map(|i| Ppo::new(layout.clone(), hyper.clone(), agent_seed(seed, i)))
            .collect::<Result<Vec<_>, _>>()?;
        let sources = (0..hyper.n_actors).map(&mut make_source).collect();
        let (envs, servers) = spawn_runtimes(&env, &coop, sources, false)?;
        let probes = if coop.kappa > 0.0 && coop.agents > 1 {
            probe_states(coop.probe_states, env.observation_dim(), coop.probe_seed)
        } else {
            Vec::new()
        };
        Ok(Self {
            coop,
            neighbors,
            agents,
            envs,
            servers,
            probes,
        })
    }

    pub fn agents(&self) -> &[Ppo] {
        &self.agents
    }

    pub fn neighbors(&self) -> &NeighborSet {
        &self.neighbors
    }

    /// One PPO iteration for every agent; returns per-agent statistics.
    pub fn iterate(&mut self) -> Result<Vec<IterStats>, AgentError> {
        let rollouts: Vec<Result<Vec<Trajectory>, _>> = std::thread::scope(|s| {
            let handles: Vec<_> = self
                .agents
                .iter_mut()
                .zip(self.envs.iter_mut())
                .map(|(ppo, envs)| s.spawn(move || ppo.collect(envs)))
                .collect();
            handles.into_iter().map(|h| h.join().expect("agent thread panicked")).collect()
        });
        let trajs = rollouts.into_iter().collect::<Result<Vec<_>, _>>()?;
        let samples = self
            .agents
            .iter()
            .zip(&trajs)
            .map(|(p, t)| p.samples(t))
            .collect::<Result<Vec<_>, _>>()?;
        let values: Vec<Vec<f64>> = if self.probes.is_empty() {
            Vec::new()
        } else {
            self.agents
                .iter()
                .map(|p| {
                    self.probes
                        .iter()
                        .map(|s| p.params().forward(s).map(|f| f.value))
                        .collect::<Result<Vec<_>, _>>()
                })
                .collect::<Result<Vec<_>, _>>()?
        };
        let mut out = Vec::with_capacity(self.agents.len());
        for i in 0..self.agents.len() {
            let nb = self.neighbors.of(i);
            let batch = if self.coop.pool_trajectories && !nb.is_empty() {
                let others: Vec<&Samples> = nb.iter().map(|&j| &samples[j]).collect();
                pool_samples(&samples[i], &others)
            } else {
                samples[i].clone()
            };
            let nb_values: Vec<Vec<f64>> = if values.is_empty() {
                Vec::new()
            } else {
                nb.iter().map(|&j| values[j].clone()).collect()
            };
            let penalty = (!nb_values.is_empty()).then_some(ValuePenalty {
                probe_states: &self.probes,
                neighbor_values: &nb_values,
                kappa: self.coop.kappa,
            });
            let mut stats = self.agents[i].update(&batch, penalty.as_ref())?;
            self.agents[i].finish_iteration(&trajs[i], &mut stats);
            out.push(stats);
        }
        let iteration = self.agents[0].iteration();
        if self.coop.average_params && self.agents.len() > 1 && iteration % self.coop.share_every_iters == 0 {
            let current: Vec<PolicyParams> = self.agents.iter().map(|p| p.params().clone()).collect();
            for (p, merged) in self.agents.iter_mut().zip(share_merge(&current, &self.neighbors)?) {
                *p.params_mut() = merged;
            }
        }
        Ok(out)
    }

    /// Hangs up on the host runtimes and waits for them.
    pub fn shutdown(mut self) -> Result<Vec<Ppo>, AgentError> {
        self.envs.clear();
        for s in self.servers.drain(..) {
            s.join().map_err(|_| AgentError::Protocol("host runtime panicked".into()))??;
        }
        Ok(std::mem::take(&mut self.agents))
    }
}

impl Drop for CoopTrainer {
    fn drop(&mut self) {
        self.envs.clear();
        for s in self.servers.drain(..) {
            let _ = s.join();
        }
    }
}

#[cfg(test)]
mod tests;
