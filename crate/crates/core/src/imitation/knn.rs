// SPDX-License-Identifier: Apache-2.0

//! Non-parametric policy: mean action of the k nearest stored observations.

use serde::{Deserialize, Serialize};

use super::{check_rows, ImitationError, Policy};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnPolicy {
    pub obs: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    pub k: usize,
}

impl KnnPolicy {
    pub fn new(obs: Vec<Vec<f64>>, actions: Vec<Vec<f64>>, k: usize) -> Result<Self, ImitationError> {
        let p = Self { obs, actions, k };
        p.check()?;
        Ok(p)
    }

    pub(crate) fn check(&self) -> Result<(), ImitationError> {
        check_rows(&self.obs)?;
        check_rows(&self.actions)?;
        if self.obs.len() != self.actions.len() {
            return Err(ImitationError::DimensionMismatch {
                expected: self.obs.len(),
                got: self.actions.len(),
            });
        }
        if self.k == 0 || self.k > self.obs.len() {
            return Err(ImitationError::BadK {
                k: self.k,
                n: self.obs.len(),
            });
        }
        Ok(())
    }

    /// Dataset indices of the k nearest observations, nearest first; equal
    /// distances go to the lower index.
    pub fn neighbors(&self, obs: &[f64]) -> Result<Vec<usize>, ImitationError> {
        if obs.len() != self.obs_dim() {
            return Err(ImitationError::DimensionMismatch {
                expected: self.obs_dim(),
                got: obs.len(),
            });
        }
        let mut d: Vec<(f64, usize)> = self
            .obs
            .iter()
            .enumerate()
            .map(|(i, o)| (o.iter().zip(obs).map(|(a, b)| (a - b).powi(2)).sum::<f64>(), i))
            .collect();
        d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        Ok(d.iter().take(self.k).map(|&(_, i)| i).collect())
    }
}

impl Policy for KnnPolicy {
    fn obs_dim(&self) -> usize {
        self.obs.first().map_or(0, |o| o.len())
    }

    fn action_dim(&self) -> usize {
        self.actions.first().map_or(0, |a| a.len())
    }

    fn act(&self, obs: &[f64]) -> Result<Vec<f64>, ImitationError> {
        let idx = self.neighbors(obs)?;
        let mut out = vec![0.0; self.action_dim()];
        for &i in &idx {
            for (o, a) in out.iter_mut().zip(&self.actions[i]) {
                *o += a;
            }
        }
        out.iter_mut().for_each(|v| *v /= idx.len() as f64);
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dataset() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<Vec<f64>>)> {
        (1usize..40).prop_flat_map(|n| {
            (
                prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 3), n),
                prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 2), n),
            )
        })
    }

    /// Exhaustive scan keeping the first strictly closer sample.
    fn brute(obs: &[Vec<f64>], q: &[f64]) -> usize {
        let mut best = (f64::INFINITY, 0);
        for (i, o) in obs.iter().enumerate() {
            let d: f64 = o.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum();
            if d < best.0 {
                best = (d, i);
            }
        }
        best.1
    }

    #[test]
    fn exact_member_returns_its_action() {
        let p = KnnPolicy::new(vec![vec![0.0, 0.0], vec![1.0, 1.0]], vec![vec![5.0], vec![7.0]], 1).unwrap();
        assert_eq!(p.act(&[1.0, 1.0]).unwrap(), vec![7.0]);
    }

    #[test]
    fn ties_go_to_lower_index() {
        let p = KnnPolicy::new(
            vec![vec![1.0], vec![-1.0], vec![1.0]],
            vec![vec![1.0], vec![2.0], vec![3.0]],
            1,
        )
        .unwrap();
        assert_eq!(p.act(&[0.0]).unwrap(), vec![1.0]);
        assert_eq!(p.neighbors(&[1.0]).unwrap(), vec![0]);
    }

    #[test]
    fn invalid_policies_rejected() {
        assert!(matches!(
            KnnPolicy::new(vec![], vec![], 1),
            Err(ImitationError::EmptyDataset)
        ));
        assert!(matches!(
            KnnPolicy::new(vec![vec![0.0]], vec![vec![0.0]], 2),
            Err(ImitationError::BadK { k: 2, n: 1 })
        ));
        let p = KnnPolicy::new(vec![vec![0.0]], vec![vec![0.0]], 1).unwrap();
        assert!(p.act(&[0.0, 1.0]).is_err());
    }

    proptest! {
        #[test]
        fn one_nn_matches_exhaustive_scan((obs, act) in dataset(), q in prop::collection::vec(-1.2f64..1.2, 3)) {
            let p = KnnPolicy::new(obs.clone(), act.clone(), 1).unwrap();
            prop_assert_eq!(p.act(&q).unwrap(), act[brute(&obs, &q)].clone());
        }

        #[test]
        fn k_equal_to_size_is_global_mean((obs, act) in dataset(), q in prop::collection::vec(-1.0f64..1.0, 3)) {
            let n = obs.len();
            let p = KnnPolicy::new(obs, act.clone(), n).unwrap();
            let got = p.act(&q).unwrap();
            for c in 0..2 {
                let mean = act.iter().map(|a| a[c]).sum::<f64>() / n as f64;
                prop_assert!((got[c] - mean).abs() < 1e-9);
            }
        }

        #[test]
        fn permutation_invariant((obs, act) in dataset(), q in prop::collection::vec(-1.0f64..1.0, 3), k in 1usize..5, rot in 0usize..40) {
            let n = obs.len();
            let k = k.min(n);
            let p = KnnPolicy::new(obs.clone(), act.clone(), k).unwrap();
            let r = rot % n;
            let mut po = obs.clone();
            let mut pa = act.clone();
            po.rotate_left(r);
            pa.rotate_left(r);
            po.reverse();
            pa.reverse();
            let shuffled = KnnPolicy::new(po, pa, k).unwrap();
            // Continuous random data has no distance ties, so the tie-break
            // never applies and the neighbor sets coincide.
            let a = p.act(&q).unwrap();
            let b = shuffled.act(&q).unwrap();
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }
    }
}
