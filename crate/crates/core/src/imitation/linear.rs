// SPDX-License-Identifier: Apache-2.0

//! Linear behavior cloning: the closed-form minimizer of
//! sum ||a - (W o + b)||^2 + ridge * ||W||^2.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{check_rows, ImitationError, Policy};

/// Relative singular-value cutoff below which unregularized data counts as
/// rank-deficient.
const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearPolicy {
    /// Row-major, action_dim x obs_dim.
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
    pub ridge: f64,
}

impl LinearPolicy {
    pub(crate) fn check(&self) -> Result<(), ImitationError> {
        if self.bias.len() != self.weights.len() {
            return Err(ImitationError::DimensionMismatch {
                expected: self.weights.len(),
                got: self.bias.len(),
            });
        }
        if !self.weights.is_empty() {
            check_rows(&self.weights)?;
        }
        if !self.bias.iter().all(|v| v.is_finite()) {
            return Err(ImitationError::NonFinite);
        }
        Ok(())
    }
}

impl Policy for LinearPolicy {
    fn obs_dim(&self) -> usize {
        self.weights.first().map_or(0, |r| r.len())
    }

    fn action_dim(&self) -> usize {
        self.bias.len()
    }

    fn act(&self, obs: &[f64]) -> Result<Vec<f64>, ImitationError> {
        if obs.len() != self.obs_dim() {
            return Err(ImitationError::DimensionMismatch {
                expected: self.obs_dim(),
                got: obs.len(),
            });
        }
        Ok(self
            .weights
            .iter()
            .zip(&self.bias)
            .map(|(row, b)| row.iter().zip(obs).map(|(w, o)| w * o).sum::<f64>() + b)
            .collect())
    }
}

/// Mean over samples of the squared action error.
pub fn mse(p: &dyn Policy, obs: &[Vec<f64>], act: &[Vec<f64>]) -> Result<f64, ImitationError> {
    let mut total = 0.0;
    for (o, a) in obs.iter().zip(act) {
        let y = p.act(o)?;
        total += y.iter().zip(a).map(|(u, v)| (u - v).powi(2)).sum::<f64>();
    }
    Ok(total / obs.len().max(1) as f64)
}

/// Fits W and b. The problem is solved as the least-squares system
/// [X 1; sqrt(ridge) D] theta = [A; 0] (D selects the weight rows), whose
/// solution satisfies the regularized normal equations; the SVD keeps it
/// accurate when features are nearly collinear.
pub fn bc_fit_linear(obs: &[Vec<f64>], act: &[Vec<f64>], ridge: f64) -> Result<LinearPolicy, ImitationError> {
    if !(ridge >= 0.0 && ridge.is_finite()) {
        return Err(ImitationError::BadRidge(ridge));
    }
    if obs.len() != act.len() {
        return Err(ImitationError::DimensionMismatch {
            expected: obs.len(),
            got: act.len(),
        });
    }
    let d = check_rows(obs)?;
    let m = check_rows(act)?;
    let n = obs.len();
    let extra = if ridge > 0.0 { d } else { 0 };
    let mut a = DMatrix::<f64>::zeros(n + extra, d + 1);
    let mut y = DMatrix::<f64>::zeros(n + extra, m);
    for (i, (o, t)) in obs.iter().zip(act).enumerate() {
        for j in 0..d {
            a[(i, j)] = o[j];
        }
        a[(i, d)] = 1.0;
        for k in 0..m {
            y[(i, k)] = t[k];
        }
    }
    let s = ridge.sqrt();
    for j in 0..extra {
        a[(n + j, j)] = s;
    }
    let svd = a.svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if svd.singular_values.len() < d + 1 || !(smin > RANK_TOL * smax) {
        return Err(ImitationError::DegenerateData);
    }
    let theta = svd.solve(&y, 0.0).map_err(|_| ImitationError::DegenerateData)?;
    if !theta.iter().all(|v| v.is_finite()) {
        return Err(ImitationError::NonFinite);
    }
    let weights = (0..m).map(|k| (0..d).map(|j| theta[(j, k)]).collect()).collect();
    let bias = (0..m).map(|k| theta[(d, k)]).collect();
    Ok(LinearPolicy { weights, bias, ridge })
}

/// Objective value for (W, b) stacked as theta (obs_dim + 1 rows).
#[cfg(test)]
fn objective(obs: &[Vec<f64>], act: &[Vec<f64>], ridge: f64, theta: &DMatrix<f64>) -> f64 {
    use nalgebra::DVector;
    let d = obs[0].len();
    let mut f = 0.0;
    for (o, a) in obs.iter().zip(act) {
        let x = DVector::from_iterator(d + 1, o.iter().copied().chain([1.0]));
        let pred = theta.transpose() * x;
        f += pred.iter().zip(a).map(|(p, t)| (p - t).powi(2)).sum::<f64>();
    }
    f + ridge * theta.rows(0, d).iter().map(|w| w * w).sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_data(seed: u64, n: usize, d: usize, m: usize) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let obs: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let act = (0..n)
            .map(|_| (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        (obs, act)
    }

    /// Plain gradient descent with the exact Lipschitz step.
    fn gradient_descent(obs: &[Vec<f64>], act: &[Vec<f64>], ridge: f64, iters: usize) -> DMatrix<f64> {
        let (n, d, m) = (obs.len(), obs[0].len(), act[0].len());
        let x = DMatrix::from_fn(n, d + 1, |i, j| if j < d { obs[i][j] } else { 1.0 });
        let y = DMatrix::from_fn(n, m, |i, k| act[i][k]);
        let mut reg = DMatrix::<f64>::identity(d + 1, d + 1) * ridge;
        reg[(d, d)] = 0.0;
        let h = x.transpose() * &x * 2.0 + &reg * 2.0;
        let lip = h.symmetric_eigenvalues().max();
        let step = 1.0 / lip;
        let mut theta = DMatrix::<f64>::zeros(d + 1, m);
        for _ in 0..iters {
            let grad = x.transpose() * (&x * &theta - &y) * 2.0 + &reg * &theta * 2.0;
            theta -= grad * step;
        }
        theta
    }

    fn stacked(p: &LinearPolicy) -> DMatrix<f64> {
        let d = p.obs_dim();
        DMatrix::from_fn(
            d + 1,
            p.action_dim(),
            |j, k| if j < d { p.weights[k][j] } else { p.bias[k] },
        )
    }

    #[test]
    fn two_points_interpolate_exactly() {
        let p = bc_fit_linear(&[vec![0.0], vec![1.0]], &[vec![0.0], vec![2.0]], 0.0).unwrap();
        assert!((p.weights[0][0] - 2.0).abs() < 1e-12);
        assert!(p.bias[0].abs() < 1e-12);
    }

    #[test]
    fn single_step_needs_ridge() {
        let obs = [vec![0.3, -0.7]];
        let act = [vec![1.5, 2.5]];
        assert!(matches!(
            bc_fit_linear(&obs, &act, 0.0),
            Err(ImitationError::DegenerateData)
        ));
        let p = bc_fit_linear(&obs, &act, 1e-6).unwrap();
        // Minimum-norm fit: the bias carries the action, the weights vanish.
        let out = p.act(&obs[0]).unwrap();
        assert!((out[0] - 1.5).abs() < 1e-9 && (out[1] - 2.5).abs() < 1e-9);
        assert!(p.weights.iter().flatten().all(|w| w.abs() < 1e-6));
    }

    #[test]
    fn matches_gradient_descent_oracle() {
        for seed in 0..5 {
            let (obs, act) = random_data(seed, 50, 4, 3);
            let p = bc_fit_linear(&obs, &act, 1e-6).unwrap();
            let gd = gradient_descent(&obs, &act, 1e-6, 20_000);
            let diff = (stacked(&p) - gd).abs().max();
            assert!(diff < 1e-6, "seed {seed}: max parameter difference {diff}");
        }
    }

    #[test]
    fn errors() {
        assert!(matches!(
            bc_fit_linear(&[], &[], 0.1),
            Err(ImitationError::EmptyDataset)
        ));
        assert!(matches!(
            bc_fit_linear(&[vec![1.0]], &[vec![1.0]], -1.0),
            Err(ImitationError::BadRidge(_))
        ));
        assert!(matches!(
            bc_fit_linear(&[vec![1.0], vec![1.0, 2.0]], &[vec![1.0], vec![1.0]], 0.1),
            Err(ImitationError::DimensionMismatch { .. })
        ));
        let p = bc_fit_linear(&[vec![1.0], vec![2.0]], &[vec![1.0], vec![1.0]], 0.1).unwrap();
        assert!(p.act(&[1.0, 2.0]).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn closed_form_is_never_beaten_by_descent(seed in any::<u64>(), ridge in 0.0f64..1.0) {
            let (obs, act) = random_data(seed, 30, 3, 2);
            let p = bc_fit_linear(&obs, &act, ridge).unwrap();
            let gd = gradient_descent(&obs, &act, ridge, 10_000);
            let ours = objective(&obs, &act, ridge, &stacked(&p));
            let theirs = objective(&obs, &act, ridge, &gd);
            prop_assert!(ours <= theirs + 1e-9 * theirs.max(1.0), "{} > {}", ours, theirs);
            if ridge == 0.0 {
                let gd_policy = LinearPolicy {
                    weights: (0..2).map(|k| (0..3).map(|j| gd[(j, k)]).collect()).collect(),
                    bias: (0..2).map(|k| gd[(3, k)]).collect(),
                    ridge,
                };
                prop_assert!(mse(&p, &obs, &act).unwrap() <= mse(&gd_policy, &obs, &act).unwrap() + 1e-12);
            }
        }
    }
}
