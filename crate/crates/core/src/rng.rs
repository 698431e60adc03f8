//! Counter-based replica streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// RNG for replica `r` under `master`. Streams of different replicas are
/// independent and do not depend on the order in which replicas run.
pub fn replica_rng(master: u64, replica: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(replica);
    rng
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let draw = |stream| {
            let mut r = replica_rng(7, stream);
            (0..4).map(|_| r.random::<u64>()).collect::<Vec<_>>()
        };
        assert_eq!(draw(3), draw(3));
        assert_ne!(draw(3), draw(4));
    }
}
