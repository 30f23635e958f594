//! Shared test fixtures.

use rand::Rng;

use crate::concepts::ConceptBank;
use crate::mdp::TabularMdp;

/// Four states on a ring, actions [back, stay, forward], reward 1 in states
/// 0 and 2, discount 0.9, uniform start. Exact solution by hand:
/// Q rows are (9.1, 10, 9.1) for states 0 and 2 and (9, 8.1, 9) for states
/// 1 and 3, so V* = (10, 9, 10, 9) and the optimal start-weighted value is
/// 9.5.
pub fn ring4() -> TabularMdp {
    let n = 4;
    let mut transitions = vec![vec![vec![0.0; n]; 3]; n];
    for s in 0..n {
        transitions[s][0][(s + n - 1) % n] = 1.0;
        transitions[s][1][s] = 1.0;
        transitions[s][2][(s + 1) % n] = 1.0;
    }
    let rewards: Vec<Vec<f64>> =
        (0..n).map(|s| vec![if s % 2 == 0 { 1.0 } else { 0.0 }; 3]).collect();
    TabularMdp::new(0.9, vec![0.25; n], rewards, transitions, vec![]).unwrap()
}

/// The two-concept bank that goes with [`ring4`], indexing ring positions
/// 1..4 stored 0-based: "even position" marks positions 2 and 4 (states 1
/// and 3), "third position" marks position 3 (state 2). Codes over both
/// concepts collapse states 1 and 3, which have identical Q rows.
pub fn ring4_bank() -> ConceptBank {
    ConceptBank::new(
        vec!["even_position".into(), "third_position".into()],
        vec![vec![0, 1, 0, 1], vec![0, 0, 1, 0]],
    )
    .unwrap()
}

/// Random dense MDP with 2..=max_states states and 2..=max_actions actions.
pub fn random_mdp(seed: u64, max_states: usize, max_actions: usize, gamma: f64) -> TabularMdp {
    let mut rng = crate::rng::seeded(seed);
    let n = rng.gen_range(2..=max_states);
    let a = rng.gen_range(2..=max_actions);
    let transitions: Vec<Vec<Vec<f64>>> = (0..n)
        .map(|_| {
            (0..a)
                .map(|_| {
                    let mut row: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() + 1e-3).collect();
                    let sum: f64 = row.iter().sum();
                    row.iter_mut().for_each(|p| *p /= sum);
                    row
                })
                .collect()
        })
        .collect();
    let rewards = (0..n).map(|_| (0..a).map(|_| rng.gen::<f64>()).collect()).collect();
    TabularMdp::new(gamma, vec![1.0 / n as f64; n], rewards, transitions, vec![]).unwrap()
}

/// Random bank of `k` concepts over `n` states.
pub fn random_bank(seed: u64, k: usize, n: usize) -> ConceptBank {
    let mut rng = crate::rng::seeded(seed ^ 0x5eed_ba9c);
    let matrix = (0..k)
        .map(|_| (0..n).map(|_| u8::from(rng.gen::<bool>())).collect())
        .collect();
    ConceptBank::new((0..k).map(|j| format!("c{j}")).collect(), matrix).unwrap()
}
