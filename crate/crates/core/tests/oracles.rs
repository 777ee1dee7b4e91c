use proptest::prelude::*;

use intent_forge::analysis::evaluate_policy;
use intent_forge::dataset::{self, collect_control, strip_rewards, BehaviorPolicySpec};
use intent_forge::intent::{relabel, RewardSource};
use intent_forge::mdp::{make_env, policy_evaluation, DeterministicPolicy, EnvSpec, Environment, GridWorld};
use intent_forge::neural::{InitScheme, Mlp, OutputActivation};
use intent_forge::offline::BehaviorPolicy;
use intent_forge::rng;

fn grid(spec: &EnvSpec) -> (Environment, GridWorld) {
    let env = make_env(spec).unwrap();
    let Environment::Grid(g) = &env else { panic!("not a grid") };
    let g = g.clone();
    (env, g)
}

/// The actor as a table: one move per (step, cell), read off the network.
fn tabulate(g: &GridWorld, actor: &Mlp) -> DeterministicPolicy {
    let mdp = g.tabular();
    let cells = mdp.num_states();
    let per_cell: Vec<usize> = (0..cells)
        .map(|c| GridWorld::discretize(&actor.forward_one(&g.observation(c)).unwrap()))
        .collect();
    let actions = (0..mdp.horizon()).flat_map(|_| per_cell.iter().copied()).collect();
    DeterministicPolicy::new(mdp.horizon(), cells, actions).unwrap()
}

fn random_actor(seed: u64) -> Mlp {
    let mut r = rng::stream(seed, "oracle-actor", 0);
    Mlp::new(&[2, 16, 2], OutputActivation::Tanh, 1.0, InitScheme::HeNormal, &mut r).unwrap()
}

fn dp_value(g: &GridWorld, policy: DeterministicPolicy) -> f64 {
    let mdp = g.tabular();
    let v = policy_evaluation(mdp, &policy.into(), mdp.true_reward()).unwrap();
    v[0].iter().zip(mdp.initial_distribution()).map(|(v, p)| v * p).sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn grid_rollouts_match_exact_evaluation(seed in 0u64..10_000, w in 2usize..6, h in 2usize..6, goal in (0usize..6, 0usize..6), horizon in 1usize..12) {
        let spec = EnvSpec::gridworld(w, h, (goal.0 % w, goal.1 % h), 0.0, horizon);
        let (env, g) = grid(&spec);
        let actor = random_actor(seed);
        let rollout = evaluate_policy(&env, &BehaviorPolicy::Actor(actor.clone()), 1, seed, 0).unwrap();
        let exact = dp_value(&g, tabulate(&g, &actor));
        prop_assert!((rollout - exact).abs() < 1e-9, "rollout {} exact {}", rollout, exact);
    }

    #[test]
    fn stripped_file_relabels_to_the_original(seed in 0u64..10_000, point in any::<bool>()) {
        let spec = if point { EnvSpec::point_reach_2d() } else { EnvSpec::gridworld(4, 3, (3, 2), 0.2, 7) };
        let env = make_env(&spec).unwrap();
        let labeled = collect_control(env.control().unwrap(), &BehaviorPolicySpec::tier("medium").unwrap(), 4, seed).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("free.jsonl");
        dataset::save(&strip_rewards(&labeled).0, &path).unwrap();
        let free = dataset::load_expecting(&path, &env.fingerprint()).unwrap();
        prop_assert!(!free.labeled);
        let restored = relabel(&free, &RewardSource::TrueEnv(&env)).unwrap();
        prop_assert_eq!(restored.rewards().unwrap(), labeled.rewards().unwrap());
        prop_assert_eq!(&restored.transitions, &labeled.transitions);
    }
}

#[test]
fn slippery_grid_monte_carlo_agrees_with_exact_evaluation() {
    let (env, g) = grid(&EnvSpec::gridworld(4, 4, (3, 3), 0.3, 10));
    let actor = random_actor(7);
    let exact = dp_value(&g, tabulate(&g, &actor));
    let episodes = 4000;
    let mc = evaluate_policy(&env, &BehaviorPolicy::Actor(actor), episodes, 1, 0).unwrap();
    // returns lie in [0, 10]; four standard errors of a bounded mean
    let tolerance = 4.0 * 5.0 / (episodes as f64).sqrt();
    assert!((mc - exact).abs() < tolerance, "monte carlo {mc} exact {exact}");
}
