use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::policy::{init_params, HeadMode, PolicyConfig, PolicyParameters};

use super::Episode;

/// Tiny dropout-free policy trading `traded` stocks from `feature_dim` inputs.
pub(crate) fn small_policy(seed: u64, mode: HeadMode, traded: usize, feature_dim: usize) -> (PolicyConfig, PolicyParameters) {
    let cfg = PolicyConfig {
        mode,
        dropout_rate: 0.0,
        hidden_sizes: vec![4, 4, 4],
        seed,
        ..PolicyConfig::default()
    };
    let mut params = init_params(&cfg, feature_dim, traded).unwrap();
    // non-zero biases keep most ReLUs away from their kink
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    for b in std::iter::once(&mut params.recurrent.bias)
        .chain(params.hidden.iter_mut().map(|l| &mut l.bias))
        .chain(std::iter::once(&mut params.output.bias))
    {
        b.iter_mut().for_each(|v| *v = rng.gen_range(-0.5..0.5));
    }
    (cfg, params)
}

/// Random features, gross returns in `[0.97, 1.03]` and prices in `[200, 600]`.
pub(crate) fn small_episode(seed: u64, m: usize, len: usize, feature_dim: usize, slots: Option<Vec<Vec<usize>>>) -> Episode {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let features = (0..len)
        .map(|_| (0..feature_dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let gross = (0..len)
        .map(|_| {
            std::iter::once(1.0001)
                .chain((0..m).map(|_| rng.gen_range(0.97..1.03)))
                .collect()
        })
        .collect();
    let prices = (0..len)
        .map(|_| (0..m).map(|_| rng.gen_range(200.0..600.0)).collect())
        .collect();
    Episode {
        features,
        gross,
        prices,
        slots,
    }
}
