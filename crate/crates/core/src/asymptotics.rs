//! First- and second-order asymptotics computed in closed form.

use serde::Serialize;

use crate::error::AsymptoticsError;
use crate::matrix::{lu_solve, Matrix};
use crate::model::BpmeModel;
use crate::scalar::Scalar;

/// Long-term excess fertility of each environment state.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(bound(serialize = "T: Scalar + Serialize"))]
pub struct FertilityVector<T> {
    pub phi: Vec<T>,
}

/// Solves `(I - P) phi = mu_vec - mu 1` subject to `<pi, phi> = 0`.
///
/// `I - P` has rank `|S| - 1` and its left kernel is spanned by `pi`, which
/// is strictly positive, so any single row is redundant; the last one is
/// replaced by the normalization.
pub fn phi_vector<T: Scalar>(model: &BpmeModel<T>) -> Result<FertilityVector<T>, AsymptoticsError> {
    let p = model.transition();
    let pi = model.stationary();
    let n = p.dim();
    let mu = model.mu();
    let mut a = Matrix::from_fn(n, |i, j| if i == j { T::one() } else { T::zero() } - p[(i, j)]);
    let mut rhs: Vec<T> = model.means().into_iter().map(|m| m - mu).collect();
    for j in 0..n {
        a[(n - 1, j)] = pi[j];
    }
    rhs[n - 1] = T::zero();
    let phi = lu_solve(&a, &rhs, T::epsilon()).ok_or(AsymptoticsError::SingularBeyondExpected)?;
    Ok(FertilityVector { phi })
}

impl<T: Scalar> FertilityVector<T> {
    /// `sup |(I - P) phi - (mu_vec - mu 1)|`.
    pub fn equation_residual(&self, model: &BpmeModel<T>) -> T {
        let pphi = model.transition().right_mul(&self.phi);
        let mu = model.mu();
        model
            .means()
            .iter()
            .zip(self.phi.iter().zip(pphi))
            .fold(T::zero(), |r, (&mi, (&f, pf))| r.max((f - pf - (mi - mu)).abs()))
    }

    pub fn stationary_mean(&self, model: &BpmeModel<T>) -> T {
        model.stationary().iter().zip(&self.phi).map(|(&p, &f)| p * f).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(bound(serialize = "T: Scalar + Serialize"))]
pub struct VarianceReport<T> {
    /// `sum_i pi_i sigma_i^2`
    pub sigma2: T,
    /// `sum_i pi_i (mu - mu_i)^2`
    pub tau2: T,
    /// `2 <pi, mu phi>`
    pub cross: T,
    /// CLT variance `sigma2 - tau2 + cross`.
    pub sigma2_m: T,
}

pub fn sigma_m_squared<T: Scalar>(model: &BpmeModel<T>) -> Result<VarianceReport<T>, AsymptoticsError> {
    let phi = phi_vector(model)?.phi;
    Ok(variance_report(model, &phi))
}

pub fn variance_report<T: Scalar>(model: &BpmeModel<T>, phi: &[T]) -> VarianceReport<T> {
    let pi = model.stationary();
    let mu = model.mu();
    let means = model.means();
    let vars = model.variances();
    let two = T::lit(2.0);
    let mut sigma2 = T::zero();
    let mut tau2 = T::zero();
    let mut cross = T::zero();
    for i in 0..pi.len() {
        let d = mu - means[i];
        sigma2 = sigma2 + pi[i] * vars[i];
        tau2 = tau2 + pi[i] * d * d;
        cross = cross + two * pi[i] * means[i] * phi[i];
    }
    VarianceReport { sigma2, tau2, cross, sigma2_m: sigma2 - tau2 + cross }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(bound(serialize = "T: Scalar + Serialize"))]
pub struct PopulationCurve<T> {
    pub start_state: usize,
    /// Exact `E_{0.i}[Y_t]` for `t = 0..=T`.
    pub expected: Vec<T>,
    pub drift: T,
    pub aperiodic: bool,
    /// Limit of `E_{0.i}[Y_t] - (mu - 1) t` for aperiodic chains:
    /// `(P phi)_i = phi_i + mu - mu_i`, since the first offspring is drawn
    /// after the first environment move.
    pub excess_limit: Option<T>,
}

impl<T: Scalar> PopulationCurve<T> {
    /// `E[Y_t] - (mu - 1) t` for each `t`.
    pub fn centered(&self) -> Vec<T> {
        self.expected
            .iter()
            .enumerate()
            .map(|(t, &y)| y - self.drift * T::from_count(t))
            .collect()
    }
}

/// `E_{0.i}[Y_t] = sum_{s=1..t} sum_j (P^s)_{ij} (mu_j - 1)`, via iterated
/// row-vector products.
pub fn expected_population_curve<T: Scalar>(
    model: &BpmeModel<T>,
    i: usize,
    horizon: usize,
) -> Result<PopulationCurve<T>, AsymptoticsError> {
    let p = model.transition();
    let gain: Vec<T> = model.means().into_iter().map(|m| m - T::one()).collect();
    let mut dist = vec![T::zero(); p.dim()];
    dist[i] = T::one();
    let mut expected = Vec::with_capacity(horizon + 1);
    let mut y = T::zero();
    expected.push(y);
    for _ in 0..horizon {
        dist = p.left_mul(&dist);
        y = y + dist.iter().zip(&gain).map(|(&d, &g)| d * g).sum();
        expected.push(y);
    }
    let aperiodic = model.chain().period() == 1;
    let excess_limit = if aperiodic {
        let phi = phi_vector(model)?.phi;
        Some(p.right_mul(&phi)[i])
    } else {
        None
    };
    Ok(PopulationCurve { start_state: i, expected, drift: model.mu() - T::one(), aperiodic, excess_limit })
}

/// Mean net gain of one excursion from `i`: `E_i[tau] (mu - 1) = (mu - 1) / pi_i`.
pub fn excursion_mean<T: Scalar>(model: &BpmeModel<T>, i: usize) -> T {
    (model.mu() - T::one()) / model.stationary()[i]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_model, offspring_from_pmf, validate_chain, OffspringDist};

    fn two_state(p: Vec<Vec<f64>>) -> BpmeModel<f64> {
        let c = validate_chain(Matrix::from_rows(p).unwrap(), vec!["a".into(), "b".into()]).unwrap();
        let a = offspring_from_pmf(&(0..=5).map(|n| (n, 1.0)).collect::<Vec<_>>()).unwrap();
        build_model(c, vec![a, OffspringDist::point_mass(0)]).unwrap()
    }

    fn flip_flop() -> BpmeModel<f64> {
        two_state(vec![vec![0.0, 1.0], vec![1.0, 0.0]])
    }

    fn lazy_flip_flop() -> BpmeModel<f64> {
        two_state(vec![vec![0.5, 0.5], vec![0.5, 0.5]])
    }

    #[test]
    fn flip_flop_phi() {
        let m = flip_flop();
        let f = phi_vector(&m).unwrap();
        assert!((f.phi[0] - 0.625).abs() < 1e-12);
        assert!((f.phi[1] + 0.625).abs() < 1e-12);
        assert!(f.equation_residual(&m) < 1e-12);
        assert!(f.stationary_mean(&m).abs() < 1e-12);
    }

    #[test]
    fn equal_means_give_zero_phi() {
        let c = validate_chain(
            Matrix::from_rows(vec![vec![0.2, 0.8], vec![0.6, 0.4]]).unwrap(),
            vec!["a".into(), "b".into()],
        )
        .unwrap();
        let m = build_model(
            c,
            vec![offspring_from_pmf(&[(0, 1.0), (2, 1.0)]).unwrap(), OffspringDist::point_mass(1)],
        )
        .unwrap();
        assert!(phi_vector(&m).unwrap().phi.iter().all(|x: &f64| x.abs() < 1e-14));
    }

    #[test]
    fn flip_flop_variance_parts() {
        let v = sigma_m_squared(&flip_flop()).unwrap();
        assert!((v.sigma2 - 35.0 / 24.0).abs() < 1e-12);
        assert!((v.tau2 - 25.0 / 16.0).abs() < 1e-12);
        assert!((v.cross - 25.0 / 16.0).abs() < 1e-12);
        assert!((v.sigma2_m - 35.0 / 24.0).abs() < 1e-12);
    }

    #[test]
    fn single_state_variance_is_offspring_variance() {
        let c = validate_chain(Matrix::identity(1), vec!["x".into()]).unwrap();
        let m: BpmeModel<f64> = build_model(c, vec![offspring_from_pmf(&[(0, 0.25), (2, 0.75)]).unwrap()]).unwrap();
        let v = sigma_m_squared(&m).unwrap();
        assert_eq!((v.tau2, v.cross), (0.0, 0.0));
        assert!((v.sigma2_m - 0.75).abs() < 1e-12);
        assert!((excursion_mean(&m, 0) - 0.5).abs() < 1e-12);
        let curve = expected_population_curve(&m, 0, 50).unwrap();
        for (t, y) in curve.expected.iter().enumerate() {
            assert!((y - 0.5 * t as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn excursion_means() {
        assert!((excursion_mean(&flip_flop(), 0) - 0.5).abs() < 1e-12);
        assert!((excursion_mean(&flip_flop(), 1) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn periodic_curve_has_no_limit() {
        let c = expected_population_curve(&flip_flop(), 0, 10).unwrap();
        assert_eq!(c.expected[0], 0.0);
        assert!(!c.aperiodic);
        assert!(c.excess_limit.is_none());
        // 0.a -> b (gain -1) -> a (gain 1.5) -> ...
        assert_eq!(&c.expected[..4], &[0.0, -1.0, 0.5, -0.5]);
    }

    #[test]
    fn lazy_curve_converges_to_p_phi() {
        let m = lazy_flip_flop();
        let phi = phi_vector(&m).unwrap().phi;
        for i in 0..2 {
            let c = expected_population_curve(&m, i, 200).unwrap();
            let lim = c.excess_limit.unwrap();
            let pphi = m.transition().right_mul(&phi)[i];
            assert!((lim - pphi).abs() < 1e-15);
            assert!((lim - (phi[i] + m.mu() - m.means()[i])).abs() < 1e-12);
            assert!((c.centered()[200] - lim).abs() < 1e-8);
        }
    }
}
