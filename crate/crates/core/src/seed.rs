//! Seed derivation.
//!
//! Every random stream in the pipeline is derived from one root seed by
//! hashing a path of labels and indices, e.g. `root → "task" → step → j`.
//! Streams derived from different paths are independent, and a component
//! can be re-run in isolation with exactly the randomness it saw inside a
//! full run.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// One element of a derivation path.
#[derive(Debug, Clone, Copy)]
pub enum Part<'a> {
    Label(&'a str),
    Index(u64),
}

impl<'a> From<&'a str> for Part<'a> {
    fn from(s: &'a str) -> Self {
        Part::Label(s)
    }
}

impl From<u64> for Part<'_> {
    fn from(i: u64) -> Self {
        Part::Index(i)
    }
}

impl From<usize> for Part<'_> {
    fn from(i: usize) -> Self {
        Part::Index(i as u64)
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn absorb(state: u64, word: u64) -> u64 {
    splitmix64(state ^ splitmix64(word))
}

/// Derives a child seed from `root` and a path of labels and indices.
pub fn derive(root: u64, path: &[Part<'_>]) -> u64 {
    let mut state = splitmix64(root);
    for part in path {
        match *part {
            Part::Label(s) => {
                // length prefix keeps ("ab","c") distinct from ("a","bc")
                state = absorb(state, 0x4c41_4245_4c00_0000 ^ s.len() as u64);
                for chunk in s.as_bytes().chunks(8) {
                    let mut buf = [0u8; 8];
                    buf[..chunk.len()].copy_from_slice(chunk);
                    state = absorb(state, u64::from_le_bytes(buf));
                }
            }
            Part::Index(i) => {
                state = absorb(state, 0x494e_4458_0000_0000);
                state = absorb(state, i);
            }
        }
    }
    state
}

pub fn rng(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

/// Shorthand for `rng(derive(root, path))`.
pub fn derived_rng(root: u64, path: &[Part<'_>]) -> Rng {
    rng(derive(root, path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng as _;

    #[test]
    fn derivation_is_stable_and_path_sensitive() {
        let a = derive(7, &["task".into(), 3u64.into(), 1u64.into()]);
        assert_eq!(a, derive(7, &["task".into(), 3u64.into(), 1u64.into()]));
        assert_ne!(a, derive(7, &["task".into(), 1u64.into(), 3u64.into()]));
        assert_ne!(a, derive(8, &["task".into(), 3u64.into(), 1u64.into()]));
        assert_ne!(derive(0, &["ab".into(), "c".into()]), derive(0, &["a".into(), "bc".into()]));
        assert_ne!(derive(0, &["x".into()]), derive(0, &[]));
    }

    #[test]
    fn rng_streams_reproduce() {
        let mut r1 = derived_rng(1, &["eval".into()]);
        let mut r2 = derived_rng(1, &["eval".into()]);
        let a: Vec<u64> = (0..5).map(|_| r1.random()).collect();
        let b: Vec<u64> = (0..5).map(|_| r2.random()).collect();
        assert_eq!(a, b);
    }
}
