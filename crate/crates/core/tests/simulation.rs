//! Monte Carlo estimates against exact joint-chain evaluation, policy
//! rules against direct enumeration, and reproducibility.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use restart_bandit::dp::{evaluate_joint_policy, joint_optimal_policy, JointOptions, JointSpace};
use restart_bandit::sim::{
    simulate, simulate_paths, structured_fleet, summarize, Fleet, MypPolicy, OptPolicy, Policy, SimConfig, WipPolicy,
};
use restart_bandit::{Discount, InfoChain, Model};

/// Exact value of `policy` (built for truncation `cap`) on a chain
/// truncated at `big_cap`, where the policy sees `k` capped at `cap`.
fn exact_value(fleet: &Fleet, policy: &dyn Policy, cap: usize, big_cap: usize, beta: Discount) -> f64 {
    let chains: Vec<InfoChain> = fleet.chains(big_cap).unwrap();
    let n = fleet.n();
    let values = evaluate_joint_policy(
        &chains,
        |space, j| {
            let infos: Vec<usize> = (0..n)
                .map(|i| {
                    let x = space.component(j, i);
                    let (row, k) = (x / (big_cap + 1), x % (big_cap + 1));
                    row * (cap + 1) + k.min(cap)
                })
                .collect();
            let mut active = vec![false; n];
            policy.select(&infos, &mut active);
            active.iter().enumerate().map(|(i, &a)| (a as u64) << i).sum()
        },
        beta,
        1e-11,
    )
    .unwrap();
    JointSpace::new(&chains, usize::MAX).unwrap().initial_value(&values)
}

#[test]
fn simulation_matches_exact_evaluation() {
    let beta = Discount::new(0.85).unwrap();
    let cap = 3;
    for model in [Model::A, Model::B] {
        let fleet = structured_fleet(2, 1, model, 3, 2, 17).unwrap();
        let chains = fleet.chains(cap).unwrap();
        let joint = joint_optimal_policy(&chains, 1, beta, JointOptions::default()).unwrap();
        let policies: Vec<Box<dyn Policy>> = vec![
            Box::new(WipPolicy::for_fleet(&fleet, cap, beta).unwrap()),
            Box::new(MypPolicy::new(&chains, 1)),
            Box::new(OptPolicy::new(joint, cap)),
        ];
        let config = SimConfig { horizon: 300, paths: 4000, beta, seed: 5, cap };
        for policy in &policies {
            let exact = exact_value(&fleet, policy.as_ref(), cap, 60, beta);
            let r = simulate(&fleet, policy.as_ref(), &config).unwrap();
            let z = (r.j_hat - exact).abs() / r.std_err;
            assert!(z < 4.0, "{model} {}: simulated {} ± {} vs exact {exact}", r.policy, r.j_hat, r.std_err);
        }
    }
}

#[test]
fn standard_error_shrinks_like_inverse_sqrt_paths() {
    let beta = Discount::new(0.9).unwrap();
    let fleet = structured_fleet(3, 1, Model::B, 4, 1, 3).unwrap();
    let wip = WipPolicy::for_fleet(&fleet, 4, beta).unwrap();
    let small = simulate(&fleet, &wip, &SimConfig { horizon: 200, paths: 1000, beta, seed: 1, cap: 4 }).unwrap();
    let large = simulate(&fleet, &wip, &SimConfig { horizon: 200, paths: 16000, beta, seed: 2, cap: 4 }).unwrap();
    let ratio = large.std_err / small.std_err;
    assert!((0.18..0.32).contains(&ratio), "ratio {ratio}");
}

#[test]
fn budgets_are_respected() {
    let beta = Discount::new(0.9).unwrap();
    let cap = 3;
    let fleet = structured_fleet(4, 2, Model::B, 3, 3, 8).unwrap();
    let chains = fleet.chains(cap).unwrap();
    let wip = WipPolicy::for_fleet(&fleet, cap, beta).unwrap();
    let myp = MypPolicy::new(&chains, 2);
    let opt = OptPolicy::new(joint_optimal_policy(&chains, 2, beta, JointOptions::default()).unwrap(), cap);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..500 {
        let infos: Vec<usize> = chains.iter().map(|c| rng.random_range(0..c.len())).collect();
        for (policy, exact) in [(&wip as &dyn Policy, true), (&myp, true), (&opt, false)] {
            let mut active = vec![false; 4];
            policy.select(&infos, &mut active);
            let used = active.iter().filter(|&&a| a).count();
            if exact {
                assert_eq!(used, 2, "{}", policy.name());
            } else {
                assert!(used <= 2);
            }
        }
    }
}

/// The sequential myopic rule evaluated with literal pool sums.
fn myopic_by_enumeration(chains: &[InfoChain], infos: &[usize], m: usize) -> Vec<bool> {
    let n = chains.len();
    let mut selected = vec![false; n];
    for _ in 0..m {
        let pool: Vec<usize> = (0..n).filter(|&i| !selected[i]).collect();
        let mut best = (usize::MAX, f64::INFINITY);
        for &i in &pool {
            let mut total = 0.0;
            for &j in &pool {
                let (row, k) = (infos[j] / chains[j].width(), infos[j] % chains[j].width());
                total += chains[j].cost(row, k, j == i);
            }
            if total < best.1 {
                best = (i, total);
            }
        }
        selected[best.0] = true;
    }
    selected
}

#[test]
fn myopic_matches_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for trial in 0..50 {
        let model = if trial % 2 == 0 { Model::A } else { Model::B };
        let fleet = structured_fleet(3, 2, model, 4, (trial % 4) as u8 + 1, trial).unwrap();
        let chains = fleet.chains(5).unwrap();
        let myp = MypPolicy::new(&chains, 2);
        let infos: Vec<usize> = chains.iter().map(|c| rng.random_range(0..c.len())).collect();
        let mut active = vec![false; 3];
        myp.select(&infos, &mut active);
        assert_eq!(active, myopic_by_enumeration(&chains, &infos, 2), "infos {infos:?}");
    }
}

#[test]
fn myopic_single_budget_picks_largest_saving() {
    let fleet = structured_fleet(5, 1, Model::B, 4, 4, 21).unwrap();
    let chains = fleet.chains(6).unwrap();
    let myp = MypPolicy::new(&chains, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..100 {
        let infos: Vec<usize> = chains.iter().map(|c| rng.random_range(0..c.len())).collect();
        let delta = |i: usize| {
            let c = &chains[i];
            let (row, k) = (infos[i] / c.width(), infos[i] % c.width());
            c.cost(row, k, true) - c.cost(row, k, false)
        };
        let expected = (0..5).fold(0, |b, i| if delta(i) < delta(b) { i } else { b });
        let mut active = vec![false; 5];
        myp.select(&infos, &mut active);
        assert_eq!(active.iter().position(|&a| a), Some(expected));
    }
}

#[test]
fn wip_keeps_an_arm_selected_as_its_k_grows() {
    // freeze the other arms; once selected, an arm stays selected while its
    // own information state ages
    let beta = Discount::new(0.95).unwrap();
    let cap = 8;
    let fleet = structured_fleet(4, 1, Model::B, 4, 2, 6).unwrap();
    let chains = fleet.chains(cap).unwrap();
    let wip = WipPolicy::for_fleet(&fleet, cap, beta).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..200 {
        let mut infos: Vec<usize> = chains.iter().map(|c| rng.random_range(0..c.len())).collect();
        let arm = rng.random_range(0..4);
        let row = infos[arm] / (cap + 1);
        let mut was_selected = false;
        for k in 0..=cap {
            infos[arm] = row * (cap + 1) + k;
            let mut active = vec![false; 4];
            wip.select(&infos, &mut active);
            assert!(!was_selected || active[arm], "arm {arm} dropped at k = {k}");
            was_selected |= active[arm];
        }
    }
}

#[test]
fn results_are_reproducible_across_thread_counts() {
    let beta = Discount::new(0.99).unwrap();
    let fleet = structured_fleet(6, 2, Model::A, 5, 3, 77).unwrap();
    let wip = WipPolicy::for_fleet(&fleet, 6, beta).unwrap();
    let config = SimConfig { horizon: 150, paths: 300, beta, seed: 11, cap: 6 };
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| simulate(&fleet, &wip, &config).unwrap().to_json().unwrap())
    };
    let one = run(1);
    assert_eq!(one, run(3));
    assert_eq!(one, run(1));
}

#[test]
fn identical_seeds_give_identical_paths() {
    let beta = Discount::new(0.9).unwrap();
    let fleet = structured_fleet(3, 1, Model::B, 3, 1, 2).unwrap();
    let config = SimConfig { horizon: 1, paths: 50, beta, seed: 3, cap: 4 };
    let wip = WipPolicy::for_fleet(&fleet, 4, beta).unwrap();
    let a = simulate_paths(&fleet, &wip, &config).unwrap();
    let b = simulate_paths(&fleet, &wip, &config).unwrap();
    assert_eq!(a, b);
    let (mean, se) = summarize(&a);
    assert!(mean >= 0.0 && se >= 0.0);
}
