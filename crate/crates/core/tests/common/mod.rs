#![allow(dead_code)]

use dqtraj::channels::KrausSet;
use dqtraj::environment::{EnvPoint, EnvSystem, ParametricFamily};
use dqtraj::rng::stream_rng;
use rand::Rng;

pub const KINDS: [&str; 5] = ["constant", "periodic", "quasiperiodic", "iid", "markov"];

fn stochastic_row<R: Rng>(k: usize, rng: &mut R) -> Vec<f64> {
    let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.1..1.0)).collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / s).collect()
}

/// A random environment of the given kind, with `outcomes` Kraus operators per fiber.
pub fn random_env(kind: &str, dim: usize, outcomes: usize, seed: u64) -> EnvSystem {
    let mut rng = stream_rng(seed, 0);
    let mut fibers = |n: usize| -> Vec<KrausSet> { (0..n).map(|_| KrausSet::random(dim, outcomes, &mut rng)).collect() };
    match kind {
        "constant" => EnvSystem::constant(fibers(1).remove(0)).unwrap(),
        "periodic" => EnvSystem::periodic(fibers(3)).unwrap(),
        "quasiperiodic" => {
            let base = fibers(1).remove(0);
            EnvSystem::quasiperiodic(None, ParametricFamily::SpinX, 0.3, base).unwrap()
        }
        "iid" => {
            let f = fibers(3);
            EnvSystem::iid(stochastic_row(3, &mut stream_rng(seed, 1)), f).unwrap()
        }
        "markov" => {
            let f = fibers(2);
            let mut r = stream_rng(seed, 1);
            let p = vec![stochastic_row(2, &mut r), stochastic_row(2, &mut r)];
            EnvSystem::markov(p, f, None).unwrap()
        }
        other => panic!("unknown kind {other}"),
    }
}

pub fn random_point(env: &EnvSystem, seed: u64) -> EnvPoint {
    env.sample_invariant(&mut stream_rng(seed, 2))
}

/// All words of length `n` over `k` letters, in lexicographic order.
pub fn all_words(k: usize, n: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    for _ in 0..n {
        out = out.into_iter().flat_map(|w| (0..k).map(move |b| [w.clone(), vec![b]].concat())).collect();
    }
    out
}
