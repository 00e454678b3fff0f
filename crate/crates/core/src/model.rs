//! Environment chain, offspring laws and the composite branching model.

use std::collections::{BTreeMap, HashMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::ModelError;
use crate::matrix::{lu_solve, Matrix, SubstochasticMatrix};
use crate::scalar::Scalar;

/// Finite irreducible Markov chain driving the environment.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvChain<T> {
    labels: Vec<String>,
    transition: Matrix<T>,
    stationary: Vec<T>,
    period: usize,
}

impl<T: Scalar> EnvChain<T> {
    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn transition(&self) -> &Matrix<T> {
        &self.transition
    }

    pub fn stationary(&self) -> &[T] {
        &self.stationary
    }

    pub fn period(&self) -> usize {
        self.period
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }
}

/// Every structural problem with a candidate transition matrix, in row order.
pub fn chain_issues<T: Scalar>(p: &Matrix<T>, labels: &[String]) -> Vec<ModelError> {
    let mut issues = Vec::new();
    let dim = p.dim();
    if dim == 0 {
        issues.push(ModelError::Empty);
        return issues;
    }
    if labels.len() != dim {
        issues.push(ModelError::LabelMismatch { labels: labels.len(), dim });
        return issues;
    }
    for (k, l) in labels.iter().enumerate() {
        if labels[..k].contains(l) {
            issues.push(ModelError::DuplicateLabel(l.clone()));
        }
    }
    let tol = T::exact_tol();
    for i in 0..dim {
        let row = p.row(i);
        let mut bad_entry = false;
        for (j, &x) in row.iter().enumerate() {
            if !x.is_finite() || x < T::zero() || x > T::one() {
                issues.push(ModelError::InvalidEntry { state: labels[i].clone(), col: j, value: x.as_f64() });
                bad_entry = true;
            }
        }
        let sum: T = row.iter().copied().sum();
        if !bad_entry && (sum - T::one()).abs() > tol {
            issues.push(ModelError::NotStochastic { state: labels[i].clone(), sum: sum.as_f64() });
        }
    }
    if issues.is_empty() {
        let fwd = p.unreachable_from_zero();
        let back = p.transpose().unreachable_from_zero();
        let name = |v: &Vec<usize>| v.iter().map(|&k| labels[k].as_str()).collect::<Vec<_>>().join(", ");
        if !fwd.is_empty() {
            issues.push(ModelError::NotIrreducible {
                detail: format!("states [{}] are unreachable from `{}`", name(&fwd), labels[0]),
            });
        } else if !back.is_empty() {
            issues.push(ModelError::NotIrreducible {
                detail: format!("states [{}] cannot reach `{}`", name(&back), labels[0]),
            });
        }
    }
    issues
}

/// Validates a transition matrix and computes its stationary law and period.
///
/// The stationary vector comes from a direct solve of `(I - P^T) x = 0` with
/// the last equation replaced by `sum(x) = 1`, so periodic chains are handled
/// exactly.
pub fn validate_chain<T: Scalar>(p: Matrix<T>, labels: Vec<String>) -> Result<EnvChain<T>, ModelError> {
    if let Some(first) = chain_issues(&p, &labels).into_iter().next() {
        return Err(first);
    }
    let stationary = stationary_distribution(&p)?;
    let period = chain_period(&p);
    Ok(EnvChain { labels, transition: p, stationary, period })
}

fn stationary_distribution<T: Scalar>(p: &Matrix<T>) -> Result<Vec<T>, ModelError> {
    let n = p.dim();
    let mut a = Matrix::from_fn(n, |i, j| {
        let id = if i == j { T::one() } else { T::zero() };
        id - p[(j, i)]
    });
    for j in 0..n {
        a[(n - 1, j)] = T::one();
    }
    let mut b = vec![T::zero(); n];
    b[n - 1] = T::one();
    let pi = lu_solve(&a, &b, T::epsilon())
        .ok_or_else(|| ModelError::StationarySolve("singular system".into()))?;
    if let Some(k) = pi.iter().position(|&x| !(x > T::zero())) {
        return Err(ModelError::StationarySolve(format!("non-positive stationary mass at state {k}")));
    }
    let residual = p
        .left_mul(&pi)
        .iter()
        .zip(&pi)
        .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs()));
    if residual > T::solve_tol() {
        return Err(ModelError::StationarySolve(format!("residual {residual} too large")));
    }
    Ok(pi)
}

/// gcd of cycle lengths through state 0, from BFS levels: every positive edge
/// `u -> v` contributes `level(u) + 1 - level(v)`.
fn chain_period<T: Scalar>(p: &Matrix<T>) -> usize {
    let n = p.dim();
    let mut level = vec![usize::MAX; n];
    level[0] = 0;
    let mut queue = VecDeque::from([0usize]);
    while let Some(u) = queue.pop_front() {
        for v in 0..n {
            if p[(u, v)] > T::zero() && level[v] == usize::MAX {
                level[v] = level[u] + 1;
                queue.push_back(v);
            }
        }
    }
    let mut g = 0usize;
    for u in 0..n {
        for v in 0..n {
            if p[(u, v)] > T::zero() {
                let d = (level[u] as i64 + 1 - level[v] as i64).unsigned_abs() as usize;
                g = gcd(g, d);
            }
        }
    }
    g.max(1)
}

fn gcd(mut a: usize, mut b: usize) -> usize {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Finite-support offspring law.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(bound(serialize = "T: Scalar + Serialize"))]
pub struct OffspringDist<T> {
    pmf: Vec<(usize, T)>,
    mean: T,
    variance: T,
}

impl<T: Scalar> OffspringDist<T> {
    /// Normalizes nonnegative weights into a pmf. Repeated counts are merged
    /// and zero weights dropped, so the support is exactly the positive part.
    pub fn from_weights(pairs: &[(usize, T)]) -> Result<Self, ModelError> {
        let mut merged: BTreeMap<usize, T> = BTreeMap::new();
        for &(n, w) in pairs {
            if !w.is_finite() || w < T::zero() {
                return Err(ModelError::EmptyOrNegative(format!("weight {w} for count {n}")));
            }
            let e = merged.entry(n).or_insert(T::zero());
            *e = *e + w;
        }
        let total: T = merged.values().copied().sum();
        if !(total > T::zero()) {
            return Err(ModelError::EmptyOrNegative("no positive weight".into()));
        }
        let pmf: Vec<(usize, T)> = merged
            .into_iter()
            .filter(|&(_, w)| w > T::zero())
            .map(|(n, w)| (n, w / total))
            .collect();
        let mean: T = pmf.iter().map(|&(n, p)| T::from_count(n) * p).sum();
        let variance: T = pmf
            .iter()
            .map(|&(n, p)| {
                let d = T::from_count(n) - mean;
                d * d * p
            })
            .sum();
        Ok(Self { pmf, mean, variance })
    }

    /// Strict constructor for user-supplied probabilities: they must already
    /// sum to one.
    pub fn from_probabilities(state: &str, pairs: &[(usize, T)]) -> Result<Self, ModelError> {
        let sum: T = pairs.iter().map(|&(_, p)| p).sum();
        if pairs.iter().any(|&(_, p)| !p.is_finite() || p < T::zero()) {
            return Err(ModelError::EmptyOrNegative(format!("state `{state}` has a negative probability")));
        }
        if (sum - T::one()).abs() > T::exact_tol() {
            return Err(ModelError::NotNormalized { state: state.to_string(), sum: sum.as_f64() });
        }
        Self::from_weights(pairs)
    }

    pub fn point_mass(n: usize) -> Self {
        Self { pmf: vec![(n, T::one())], mean: T::from_count(n), variance: T::zero() }
    }

    pub fn pmf(&self) -> &[(usize, T)] {
        &self.pmf
    }

    pub fn mean(&self) -> T {
        self.mean
    }

    pub fn variance(&self) -> T {
        self.variance
    }

    pub fn prob(&self, n: usize) -> T {
        self.pmf
            .binary_search_by_key(&n, |&(k, _)| k)
            .map(|i| self.pmf[i].1)
            .unwrap_or_else(|_| T::zero())
    }

    pub fn max_count(&self) -> usize {
        self.pmf.last().map(|&(n, _)| n).unwrap_or(0)
    }

    pub fn is_deterministic(&self) -> bool {
        self.pmf.len() == 1
    }
}

/// Shorthand for [`OffspringDist::from_weights`].
pub fn offspring_from_pmf<T: Scalar>(pairs: &[(usize, T)]) -> Result<OffspringDist<T>, ModelError> {
    OffspringDist::from_weights(pairs)
}

/// Environment chain plus one offspring law per state.
#[derive(Debug, Clone, PartialEq)]
pub struct BpmeModel<T> {
    chain: EnvChain<T>,
    offspring: Vec<OffspringDist<T>>,
    mu: T,
    max_support: usize,
    step_matrices: Vec<Matrix<T>>,
}

pub fn build_model<T: Scalar>(chain: EnvChain<T>, offspring: Vec<OffspringDist<T>>) -> Result<BpmeModel<T>, ModelError> {
    if offspring.len() != chain.len() {
        return Err(ModelError::DimensionMismatch { expected: chain.len(), found: offspring.len() });
    }
    let mu = chain.stationary().iter().zip(&offspring).map(|(&p, o)| p * o.mean()).sum();
    let max_support = offspring.iter().map(OffspringDist::max_count).max().unwrap_or(0);
    let p = chain.transition();
    let step_matrices = (0..=max_support)
        .map(|n| Matrix::from_fn(p.dim(), |i, j| p[(i, j)] * offspring[j].prob(n)))
        .collect();
    Ok(BpmeModel { chain, offspring, mu, max_support, step_matrices })
}

impl<T: Scalar> BpmeModel<T> {
    pub fn chain(&self) -> &EnvChain<T> {
        &self.chain
    }

    pub fn offspring(&self) -> &[OffspringDist<T>] {
        &self.offspring
    }

    /// Stationary mean offspring `sum_i pi_i mu_i`.
    pub fn mu(&self) -> T {
        self.mu
    }

    pub fn max_support(&self) -> usize {
        self.max_support
    }

    pub fn num_states(&self) -> usize {
        self.chain.len()
    }

    pub fn means(&self) -> Vec<T> {
        self.offspring.iter().map(OffspringDist::mean).collect()
    }

    pub fn variances(&self) -> Vec<T> {
        self.offspring.iter().map(OffspringDist::variance).collect()
    }

    pub fn transition(&self) -> &Matrix<T> {
        self.chain.transition()
    }

    pub fn stationary(&self) -> &[T] {
        self.chain.stationary()
    }

    /// `(P_n)_{ij} = P_{ij} R_{jn}`: move to `j` and produce `n` offspring there.
    pub fn step_matrix(&self, n: usize) -> SubstochasticMatrix<T> {
        let m = self
            .step_matrices
            .get(n)
            .cloned()
            .unwrap_or_else(|| Matrix::zeros(self.num_states()));
        SubstochasticMatrix::new_unchecked(m)
    }

    pub(crate) fn step_matrices(&self) -> &[Matrix<T>] {
        &self.step_matrices
    }

    pub fn default_depth_cap(&self) -> usize {
        3 * self.num_states() * (self.max_support + 1)
    }

    /// Same model in another scalar type.
    pub fn cast<U: Scalar>(&self) -> Result<BpmeModel<U>, ModelError> {
        let chain = validate_chain(self.chain.transition.cast(), self.chain.labels.clone())?;
        let offspring = self
            .offspring
            .iter()
            .map(|o| {
                let pairs: Vec<(usize, U)> = o.pmf.iter().map(|&(n, p)| (n, U::lit(p.as_f64()))).collect();
                OffspringDist::from_weights(&pairs)
            })
            .collect::<Result<Vec<_>, _>>()?;
        build_model(chain, offspring)
    }
}

/// Population paired with an environment state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TotalState {
    pub population: i64,
    pub state: usize,
}

impl TotalState {
    pub fn new(population: i64, state: usize) -> Self {
        Self { population, state }
    }
}

/// Whether excursion net gains have positive variance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum DeltaVariance {
    #[serde(rename = "true")]
    Positive,
    #[serde(rename = "false")]
    Zero,
    #[serde(rename = "unknown")]
    Unknown,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "class")]
pub enum Criticality {
    Subcritical,
    Critical { delta_variance_positive: DeltaVariance },
    Supercritical,
}

pub fn classify<T: Scalar>(model: &BpmeModel<T>) -> Criticality {
    let tol = T::exact_tol();
    if model.mu < T::one() - tol {
        Criticality::Subcritical
    } else if model.mu > T::one() + tol {
        Criticality::Supercritical
    } else {
        Criticality::Critical { delta_variance_positive: delta_variance(model) }
    }
}

/// Structural decision of `Var(Delta) > 0` for a critical model.
///
/// Any random offspring law makes the gain random. With all laws
/// deterministic, the gain of an excursion is a sum of edge weights
/// `d_v - 1` along a cycle through the anchor, and every excursion nets the
/// same (necessarily zero) amount iff those weights admit a potential.
fn delta_variance<T: Scalar>(model: &BpmeModel<T>) -> DeltaVariance {
    if model.offspring.iter().any(|o| !o.is_deterministic()) {
        return DeltaVariance::Positive;
    }
    let n = model.num_states();
    let weight: Vec<i64> = model.offspring.iter().map(|o| o.max_count() as i64 - 1).collect();
    let p = model.transition();
    let mut potential: Vec<Option<i64>> = vec![None; n];
    potential[0] = Some(0);
    let mut queue = VecDeque::from([0usize]);
    while let Some(u) = queue.pop_front() {
        let hu = potential[u].expect("visited");
        for v in 0..n {
            if p[(u, v)] > T::zero() {
                let hv = hu + weight[v];
                match potential[v] {
                    None => {
                        potential[v] = Some(hv);
                        queue.push_back(v);
                    }
                    Some(h) if h != hv => return DeltaVariance::Positive,
                    Some(_) => {}
                }
            }
        }
    }
    if potential.iter().all(Option::is_some) {
        DeltaVariance::Zero
    } else {
        DeltaVariance::Unknown
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ExcursionStep {
    pub state: usize,
    pub offspring: usize,
}

/// Witness that `population.start_state` is viable: an excursion with
/// positive probability, net gain at least one, population never below one.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ViabilityCertificate {
    pub start_state: usize,
    pub population: u64,
    pub excursion: Vec<ExcursionStep>,
}

impl ViabilityCertificate {
    pub fn net_gain(&self) -> i64 {
        self.excursion.iter().map(|s| s.offspring as i64 - 1).sum()
    }

    /// Re-checks every certificate invariant against the model.
    pub fn verify<T: Scalar>(&self, model: &BpmeModel<T>) -> Result<(), String> {
        let Some(last) = self.excursion.last() else {
            return Err("empty excursion".into());
        };
        if last.state != self.start_state {
            return Err("excursion does not return to the start state".into());
        }
        if self.excursion[..self.excursion.len() - 1].iter().any(|s| s.state == self.start_state) {
            return Err("excursion revisits the start state early".into());
        }
        if self.population < 1 {
            return Err("population must be at least one".into());
        }
        let mut prev = self.start_state;
        let mut pop = self.population as i64;
        for (t, s) in self.excursion.iter().enumerate() {
            if !(model.transition()[(prev, s.state)] > T::zero()) {
                return Err(format!("step {t}: transition has zero probability"));
            }
            if !(model.offspring[s.state].prob(s.offspring) > T::zero()) {
                return Err(format!("step {t}: offspring count has zero probability"));
            }
            pop += s.offspring as i64 - 1;
            if pop < 1 {
                return Err(format!("step {t}: population drops to {pop}"));
            }
            prev = s.state;
        }
        if self.net_gain() < 1 {
            return Err("net gain below one".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "result")]
pub enum ViabilitySearch {
    Found(ViabilityCertificate),
    NotFoundWithinCap { depth_cap: usize },
}

struct SearchNode {
    state: usize,
    net: i64,
    min_net: i64,
    offspring: usize,
    parent: Option<usize>,
}

/// Breadth-first search over excursions from `start` of length at most
/// `depth_cap`, returning the certificate with the smallest population.
///
/// Partial paths are keyed by `(state, lowest running net)`; of two paths
/// with the same key only the one with the larger net is kept, since it
/// dominates every continuation.
pub fn viability_certificate<T: Scalar>(model: &BpmeModel<T>, start: usize, depth_cap: usize) -> ViabilitySearch {
    let p = model.transition();
    let n = model.num_states();
    let mut arena = vec![SearchNode { state: start, net: 0, min_net: 0, offspring: 0, parent: None }];
    let mut frontier = vec![0usize];
    let mut best_net: HashMap<(usize, i64), i64> = HashMap::new();
    // (min_net, parent index, final offspring)
    let mut best: Option<(i64, usize, usize)> = None;

    for _ in 0..depth_cap {
        let mut next = Vec::new();
        for &idx in &frontier {
            let (u, net, min_net) = (arena[idx].state, arena[idx].net, arena[idx].min_net);
            if best.is_some_and(|(m, _, _)| min_net <= m) {
                continue;
            }
            for v in 0..n {
                if !(p[(u, v)] > T::zero()) {
                    continue;
                }
                for &(xi, _) in model.offspring[v].pmf() {
                    let net2 = net + xi as i64 - 1;
                    let min2 = min_net.min(net2);
                    if best.is_some_and(|(m, _, _)| min2 <= m) {
                        continue;
                    }
                    if v == start {
                        if net2 >= 1 {
                            best = Some((min2, idx, xi));
                        }
                        continue;
                    }
                    let key = (v, min2);
                    if best_net.get(&key).is_some_and(|&b| b >= net2) {
                        continue;
                    }
                    best_net.insert(key, net2);
                    arena.push(SearchNode { state: v, net: net2, min_net: min2, offspring: xi, parent: Some(idx) });
                    next.push(arena.len() - 1);
                }
            }
        }
        if best.is_some_and(|(m, _, _)| m >= 0) || next.is_empty() {
            break;
        }
        frontier = next;
    }

    match best {
        None => ViabilitySearch::NotFoundWithinCap { depth_cap },
        Some((min_net, parent, xi)) => {
            let mut excursion = vec![ExcursionStep { state: start, offspring: xi }];
            let mut cur = Some(parent);
            while let Some(i) = cur {
                if arena[i].parent.is_some() {
                    excursion.push(ExcursionStep { state: arena[i].state, offspring: arena[i].offspring });
                }
                cur = arena[i].parent;
            }
            excursion.reverse();
            ViabilitySearch::Found(ViabilityCertificate {
                start_state: start,
                population: (1 - min_net).max(1) as u64,
                excursion,
            })
        }
    }
}
