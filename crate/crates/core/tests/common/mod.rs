#![allow(dead_code)]

use bpme::model::{build_model, offspring_from_pmf, validate_chain, OffspringDist};
use bpme::{Mat, Model};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn labels(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("s{i}")).collect()
}

/// Two states alternating deterministically; uniform{0..5} offspring in `a`,
/// none in `b`.
pub fn flip_flop() -> Model {
    let c = validate_chain(
        Mat::from_rows(vec![vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap(),
        vec!["a".into(), "b".into()],
    )
    .unwrap();
    let a = offspring_from_pmf(&(0..=5).map(|n| (n, 1.0)).collect::<Vec<_>>()).unwrap();
    build_model(c, vec![a, OffspringDist::point_mass(0)]).unwrap()
}

pub fn single(pairs: &[(usize, f64)]) -> Model {
    let c = validate_chain(Mat::identity(1), labels(1)).unwrap();
    build_model(c, vec![offspring_from_pmf(pairs).unwrap()]).unwrap()
}

/// Random irreducible chain: a Hamiltonian cycle guarantees strong
/// connectivity, other entries are sparse random weights.
pub fn random_transition(rng: &mut ChaCha8Rng, n: usize) -> Mat {
    let mut rows = vec![vec![0.0; n]; n];
    for i in 0..n {
        rows[i][(i + 1) % n] = rng.random_range(0.05..1.0);
        for j in 0..n {
            if rng.random_bool(0.5) {
                rows[i][j] += rng.random_range(0.0..1.0);
            }
        }
        let s: f64 = rows[i].iter().sum();
        for x in rows[i].iter_mut() {
            *x /= s;
        }
    }
    Mat::from_rows(rows).unwrap()
}

pub fn random_pmf(rng: &mut ChaCha8Rng, max_support: usize, deterministic: bool) -> Vec<(usize, f64)> {
    if deterministic {
        return vec![(rng.random_range(0..=max_support), 1.0)];
    }
    let mut pairs: Vec<(usize, f64)> = Vec::new();
    for k in 0..=max_support {
        if rng.random_bool(0.7) {
            pairs.push((k, rng.random_range(0.01..1.0)));
        }
    }
    if pairs.is_empty() {
        pairs.push((rng.random_range(0..=max_support), 1.0));
    }
    pairs
}

pub fn random_model(seed: u64, max_states: usize, max_support: usize, deterministic: bool) -> Model {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..=max_states);
    let p = random_transition(&mut rng, n);
    let chain = validate_chain(p, labels(n)).unwrap();
    let offspring = (0..n)
        .map(|_| offspring_from_pmf(&random_pmf(&mut rng, max_support, deterministic)).unwrap())
        .collect();
    build_model(chain, offspring).unwrap()
}

pub fn random_model_sized(seed: u64, n: usize, max_support: usize) -> Model {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = random_transition(&mut rng, n);
    let chain = validate_chain(p, labels(n)).unwrap();
    let offspring = (0..n)
        .map(|_| offspring_from_pmf(&random_pmf(&mut rng, max_support, false)).unwrap())
        .collect();
    build_model(chain, offspring).unwrap()
}

/// Smallest root of `q = g(q)` on [0, 1] by bisection, `g` the offspring pgf.
/// `g(q) - q` is convex with `g(1) - 1 = 0`, positive at 0 unless `p0 = 0`.
pub fn gw_extinction_bisection(pmf: &[(usize, f64)]) -> f64 {
    let g = |q: f64| pmf.iter().map(|&(n, p)| p * q.powi(n as i32)).sum::<f64>();
    let mean: f64 = pmf.iter().map(|&(n, p)| n as f64 * p).sum();
    if mean <= 1.0 {
        return 1.0;
    }
    // h(q) = g(q) - q: h(0) >= 0, h < 0 just below 1 for mean > 1
    let (mut lo, mut hi) = (0.0f64, 1.0 - 1e-9);
    while g(hi) - hi >= 0.0 {
        hi = 1.0 - (1.0 - hi) / 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if g(mid) - mid > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Exhaustive forward propagation over total states `n.i` with
/// `1 <= n <= cap`. Mass hitting population 0 in state `j` is absorbed into
/// the answer; mass exceeding `cap` is dropped (counted as survival).
/// Propagation stops when the live mass is below `live_tol`.
///
/// Returns (row of extinction probabilities from `1.start`, escaped mass).
pub fn brute_force_extinction_row(model: &Model, start: usize, cap: usize, live_tol: f64) -> (Vec<f64>, f64) {
    let s = model.num_states();
    let p = model.transition();
    let laws: Vec<Vec<(usize, f64)>> = model.offspring().iter().map(|o| o.pmf().to_vec()).collect();
    // mass[n * s + i]
    let mut mass = vec![0.0f64; (cap + 1) * s];
    mass[s + start] = 1.0;
    let mut absorbed = vec![0.0f64; s];
    let mut escaped = 0.0;
    for _ in 0..10_000_000 {
        let live: f64 = mass.iter().sum();
        if live < live_tol {
            break;
        }
        let mut next = vec![0.0f64; (cap + 1) * s];
        for n in 1..=cap {
            for i in 0..s {
                let m = mass[n * s + i];
                if m == 0.0 {
                    continue;
                }
                for j in 0..s {
                    let pij = p[(i, j)];
                    if pij == 0.0 {
                        continue;
                    }
                    for &(xi, r) in &laws[j] {
                        let w = m * pij * r;
                        let n2 = n - 1 + xi;
                        if n2 == 0 {
                            absorbed[j] += w;
                        } else if n2 > cap {
                            escaped += w;
                        } else {
                            next[n2 * s + j] += w;
                        }
                    }
                }
            }
        }
        mass = next;
    }
    (absorbed, escaped)
}
