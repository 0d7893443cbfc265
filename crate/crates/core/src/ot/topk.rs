use crate::error::{Error, Result};

use super::sinkhorn::Coupling;

/// Per-row sparsification of a plan to its `K` heaviest entries.
#[derive(Clone, Debug, PartialEq)]
pub struct TopKCoupling {
    k: usize,
    /// `rows[i]` holds `(j, π_ij)` for `j ∈ N_K(i)`, heaviest first.
    rows: Vec<Vec<(usize, f64)>>,
    retained_mass: f64,
}

impl TopKCoupling {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn row(&self, i: usize) -> &[(usize, f64)] {
        &self.rows[i]
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    /// Sum of every retained weight (`m`).
    pub fn retained_mass(&self) -> f64 {
        self.retained_mass
    }

    /// Flattened `(i, j, w_ij)` triples in row order.
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.rows
            .iter()
            .enumerate()
            .flat_map(|(i, r)| r.iter().map(move |&(j, w)| (i, j, w)))
    }

    /// Reorders rows: row `i` of the result is row `perm[i]` of `self`.
    pub fn permute_rows(&self, perm: &[usize]) -> TopKCoupling {
        TopKCoupling {
            k: self.k,
            rows: perm.iter().map(|&p| self.rows[p].clone()).collect(),
            retained_mass: self.retained_mass,
        }
    }
}

/// Keeps the `k` largest entries of each row of the plan. Ties go to the lower column index.
pub fn topk_truncate(pi: &Coupling, k: usize) -> Result<TopKCoupling> {
    let plan = pi.plan();
    let cols = plan.cols();
    if k == 0 || k > cols {
        return Err(Error::invalid(
            "topk_truncate",
            format!("K must lie in 1..={cols}, got {k}"),
        ));
    }
    let mut rows = Vec::with_capacity(plan.rows());
    let mut mass = 0.0;
    for r in plan.iter_rows() {
        let mut idx: Vec<usize> = (0..cols).collect();
        // stable sort on descending weight keeps lower indices first among ties
        idx.sort_by(|&a, &b| r[b].total_cmp(&r[a]));
        let kept: Vec<(usize, f64)> = idx[..k].iter().map(|&j| (j, r[j])).collect();
        mass += kept.iter().map(|(_, w)| w).sum::<f64>();
        rows.push(kept);
    }
    Ok(TopKCoupling {
        k,
        rows,
        retained_mass: mass,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ot::{sinkhorn_uniform, CostKind, CostMatrix, SinkhornOptions};
    use crate::tensor::Tensor;
    use rand::{Rng, SeedableRng};

    fn random_plan(seed: u64, n: usize) -> Coupling {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let c = CostMatrix::new(Tensor::from_fn(n, n, |_, _| rng.random_range(0.0..2.0)), CostKind::Euclidean)
            .unwrap();
        sinkhorn_uniform(&c, 0.1, &SinkhornOptions::default()).unwrap()
    }

    #[test]
    fn full_k_keeps_everything() {
        let pi = random_plan(4, 6);
        let t = topk_truncate(&pi, 6).unwrap();
        assert!((t.retained_mass() - 1.0).abs() < 1e-9);
        for (i, j, w) in t.pairs() {
            assert_eq!(w, pi.plan().get(i, j));
        }
        assert_eq!(t.pairs().count(), 36);
    }

    #[test]
    fn diagonal_plan_k1() {
        let plan = Tensor::from_fn(4, 4, |i, j| if i == j { 0.25 } else { 0.0 });
        let t = topk_truncate(&Coupling::from_plan(plan).unwrap(), 1).unwrap();
        for i in 0..4 {
            assert_eq!(t.row(i), &[(i, 0.25)]);
        }
        assert_eq!(t.retained_mass(), 1.0);
    }

    #[test]
    fn keeps_largest_in_order() {
        let plan = Tensor::new(1, 3, vec![0.2, 0.5, 0.3]).unwrap();
        let t = topk_truncate(&Coupling::from_plan(plan).unwrap(), 2).unwrap();
        let kept: Vec<usize> = t.row(0).iter().map(|p| p.0).collect();
        assert_eq!(kept, vec![1, 2]);
    }

    #[test]
    fn ties_prefer_lower_column() {
        let plan = Tensor::new(1, 4, vec![0.25; 4]).unwrap();
        let t = topk_truncate(&Coupling::from_plan(plan).unwrap(), 2).unwrap();
        assert_eq!(t.row(0).iter().map(|p| p.0).collect::<Vec<_>>(), vec![0, 1]);
    }

    #[test]
    fn k_out_of_range() {
        let pi = random_plan(1, 3);
        assert!(topk_truncate(&pi, 0).is_err());
        assert!(topk_truncate(&pi, 4).is_err());
    }

    #[test]
    fn mass_is_monotone_in_k() {
        let pi = random_plan(7, 10);
        let masses: Vec<f64> = (1..=10).map(|k| topk_truncate(&pi, k).unwrap().retained_mass()).collect();
        assert!(masses.windows(2).all(|w| w[0] <= w[1]));
        assert!(masses[0] > 0.0);
    }
}
