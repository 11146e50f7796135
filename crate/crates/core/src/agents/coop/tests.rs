use super::*;
use crate::env::{CcEnv, EnvError, Episode};
use crate::netsim::{EventKind, LinkSpec, NetworkEvent, SimConfig, SimTime, Simulator};
use proptest::prelude::*;

fn params(seed: u64) -> PolicyParams {
    PolicyParams::init(Layout::new(4, &[3], 2, 2), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

fn distance(a: &PolicyParams, b: &PolicyParams) -> f64 {
    a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn ring_and_mesh() {
    assert!(NeighborSet::new(1, Topology::Ring, 0.1).unwrap().of(0).is_empty());
    let two = NeighborSet::new(2, Topology::Ring, 0.1).unwrap();
    assert_eq!((two.of(0), two.of(1)), (&[1][..], &[0][..]));
    let five = NeighborSet::new(5, Topology::Ring, 0.1).unwrap();
    assert_eq!(five.of(0), &[1, 4]);
    assert!(five.is_connected());
    assert_eq!(NeighborSet::new(4, Topology::Mesh, 0.1).unwrap().of(2), &[0, 1, 3]);
    assert!(NeighborSet::new(3, Topology::Ring, -1.0).is_err());
}

#[test]
fn penalty_examples() {
    assert_eq!(consensus_penalty(&[0.3, 0.7], &[vec![0.3, 0.7]], 1.0).unwrap(), 0.0);
    assert_eq!(consensus_penalty(&[1.0, 1.0], &[vec![0.0, 0.0]], 1.0).unwrap(), 1.0);
    assert_eq!(consensus_penalty(&[5.0, -2.0], &[vec![0.0, 0.0]], 0.0).unwrap(), 0.0);
    assert!(consensus_penalty(&[1.0], &[vec![0.0, 0.0]], 1.0).is_err());
}

#[test]
fn merge_examples() {
    let solo = NeighborSet::new(1, Topology::Ring, 0.1).unwrap();
    let p = params(1);
    assert_eq!(share_merge(&[p.clone()], &solo).unwrap(), vec![p.clone()]);

    let q = params(2);
    let pair = NeighborSet::new(2, Topology::Ring, 0.1).unwrap();
    let merged = share_merge(&[p.clone(), q.clone()], &pair).unwrap();
    assert_eq!(merged[0], merged[1]);
    for k in 0..p.len() {
        assert_eq!(merged[0].as_slice()[k], (p.as_slice()[k] + q.as_slice()[k]) * 0.5);
    }

    let other = PolicyParams::zeros(Layout::new(5, &[3], 2, 2)).unwrap();
    assert!(share_merge(&[p, other], &pair).is_err());
}

#[test]
fn pooled_size_is_sum() {
    let s = |n: usize| Samples {
        states: vec![vec![0.0]; n],
        actions: vec![(0, 0); n],
        old_log_probs: vec![0.0; n],
        advantages: vec![0.0; n],
        value_targets: vec![0.0; n],
    };
    assert_eq!(pool_samples(&s(3), &[&s(4), &s(5)]).len(), 12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]
    #[test]
    fn averaging_contracts(agents in 2usize..7, seed in any::<u64>(), mesh in any::<bool>()) {
        let topo = if mesh { Topology::Mesh } else { Topology::Ring };
        let set = NeighborSet::new(agents, topo, 0.1).unwrap();
        let mut ps: Vec<PolicyParams> = (0..agents as u64).map(|i| params(seed.wrapping_add(i))).collect();
        let spread = |ps: &[PolicyParams]| {
            let mut m = 0.0f64;
            for a in ps { for b in ps { m = m.max(distance(a, b)); } }
            m
        };
        let mut last = spread(&ps);
        for _ in 0..10 {
            ps = share_merge(&ps, &set).unwrap();
            prop_assert!(ps.iter().all(|p| p.as_slice().iter().all(|v| v.is_finite())));
            prop_assert!(ps.iter().all(|p| p.len() == ps[0].len()));
            let now = spread(&ps);
            prop_assert!(now <= last + 1e-12);
            last = now;
        }
    }
}

fn short_episode(seed: u64) -> Result<Episode, EnvError> {
    let link = LinkSpec::with_bdp_buffer(6_000_000, 30_000, 2.0);
    let mut sim = Simulator::new(SimConfig::new(seed, link))?;
    for f in 0..4 {
        sim.schedule(NetworkEvent::new(SimTime::from_millis(500 * f as u64), EventKind::FlowJoin { flow: f }))?;
    }
    sim.schedule(NetworkEvent::new(SimTime::from_secs(5), EventKind::SetLatency { rtt_us: 60_000 }))?;
    Ok(Episode {
        sim,
        end: SimTime::from_secs(12),
    })
}

fn source(actor: usize) -> Box<dyn EpisodeSource> {
    let mut k = 0u64;
    Box::new(move || {
        k += 1;
        short_episode(actor as u64 * 1000 + k)
    })
}

fn hyper() -> PpoHyper {
    PpoHyper {
        horizon: 8,
        minibatch_size: 8,
        n_actors: 2,
        hidden: vec![16],
        ..Default::default()
    }
}

#[test]
fn single_agent_reduces_to_plain_ppo() {
    let env = EnvConfig::default();
    let coop = CoopConfig {
        kappa: 0.0,
        ..Default::default()
    };
    let mut trainer = CoopTrainer::new(env.clone(), hyper(), coop, 77, source).unwrap();
    let via_agents: Vec<IterStats> = (0..3).map(|_| trainer.iterate().unwrap().remove(0)).collect();
    let agents = trainer.shutdown().unwrap();

    let (k1, k2) = env.grid.dims();
    let mut ppo = Ppo::new(Layout::new(env.observation_dim(), &hyper().hidden, k1, k2), hyper(), 77).unwrap();
    let mut envs: Vec<CcEnv> = (0..2).map(|a| CcEnv::new(env.clone(), source(a)).unwrap()).collect();
    let direct: Vec<IterStats> = (0..3).map(|_| ppo.iterate(&mut envs).unwrap()).collect();

    assert_eq!(via_agents, direct);
    assert_eq!(agents[0].params(), ppo.params());
}

#[test]
fn two_agents_share_one_simulator() {
    let coop = CoopConfig {
        agents: 2,
        ..Default::default()
    };
    let mut trainer = CoopTrainer::new(EnvConfig::default(), hyper(), coop, 5, source).unwrap();
    let stats = trainer.iterate().unwrap();
    assert_eq!(stats.len(), 2);
    // pooled batches: own plus the neighbor's rollouts
    assert!(stats.iter().all(|s| s.samples == 2 * 2 * 8));
    assert!(stats.iter().all(|s| s.penalty >= 0.0));
    let a = trainer.agents();
    assert_eq!(a[0].params(), a[1].params());
    let s = vec![0.5; EnvConfig::default().observation_dim()];
    let (i, j) = a[0].greedy(&s).unwrap();
    assert!(i < 5 && j < 5);
    trainer.shutdown().unwrap();
}

#[test]
fn tcp_transport_matches_mem() {
    let run = |transport| {
        let coop = CoopConfig {
            kappa: 0.0,
            transport,
            ..Default::default()
        };
        let mut t = CoopTrainer::new(EnvConfig::default(), hyper(), coop, 3, source).unwrap();
        let s = t.iterate().unwrap();
        (s, t.shutdown().unwrap().remove(0).params().clone())
    };
    assert_eq!(run(TransportKind::Tcp), run(TransportKind::Mem));
}
