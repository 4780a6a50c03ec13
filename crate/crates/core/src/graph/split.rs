use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::GraphError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.70,
            validation: 0.15,
            test: 0.15,
        }
    }
}

/// Disjoint train / validation / test node index sets, each sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitMasks {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
    pub seed: u64,
}

/// Shuffles `0..num_nodes` under `seed` and cuts it proportionally.
pub fn split(num_nodes: usize, ratios: SplitRatios, seed: u64) -> Result<SplitMasks, GraphError> {
    let SplitRatios { train, validation, test } = ratios;
    if [train, validation, test].iter().any(|r| !(0.0..=1.0).contains(r)) {
        return Err(GraphError::Config(format!("split ratios must lie in [0, 1]: {ratios:?}")));
    }
    if (train + validation + test - 1.0).abs() > 1e-9 {
        return Err(GraphError::Config(format!(
            "split ratios must sum to 1, got {}",
            train + validation + test
        )));
    }
    let mut order: Vec<usize> = (0..num_nodes).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = ((train * num_nodes as f64).round() as usize).min(num_nodes);
    let n_val = ((validation * num_nodes as f64).round() as usize).min(num_nodes - n_train);
    let sorted = |s: &[usize]| {
        let mut v = s.to_vec();
        v.sort_unstable();
        v
    };
    Ok(SplitMasks {
        train: sorted(&order[..n_train]),
        validation: sorted(&order[n_train..n_train + n_val]),
        test: sorted(&order[n_train + n_val..]),
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hundred_nodes_default_ratios() {
        let m = split(100, SplitRatios::default(), 7).unwrap();
        assert_eq!((m.train.len(), m.validation.len(), m.test.len()), (70, 15, 15));
        let mut all: Vec<usize> = m.train.iter().chain(&m.validation).chain(&m.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
    }

    #[test]
    fn seeded_determinism() {
        let a = split(100, SplitRatios::default(), 1).unwrap();
        assert_eq!(a, split(100, SplitRatios::default(), 1).unwrap());
        assert_ne!(a.train, split(100, SplitRatios::default(), 2).unwrap().train);
    }

    #[test]
    fn bad_ratios() {
        let r = SplitRatios { train: 0.7, validation: 0.2, test: 0.2 };
        assert!(matches!(split(10, r, 0), Err(GraphError::Config(_))));
    }
}
