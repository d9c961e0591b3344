#![allow(dead_code)]

use delta_scope::{
    make_synthetic, split_for_update, train, Instances, LossKind, SparseDataset, SparseVector,
    TrainedModel, UpdatePlan,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Tolerance for solves that stand in for exact optima.
pub const ORACLE_TOL: f64 = 1e-12;

pub struct Case {
    pub seed: u64,
    pub kind: LossKind,
    pub lambda: f64,
    pub base: SparseDataset,
    pub plan: UpdatePlan,
    pub updated: SparseDataset,
    pub old: TrainedModel,
    /// Exact optimum of the updated problem.
    pub new_opt: Vec<f64>,
    /// A fresh input from the same distribution.
    pub test_x: SparseVector,
}

impl Case {
    pub fn n_modified(&self) -> usize {
        self.plan.n_added() + self.plan.n_removed()
    }

    /// Directions exercised per case: every unit vector, a test input and
    /// one signed training input.
    pub fn directions(&self) -> Vec<Vec<f64>> {
        let d = self.base.dim();
        let mut out: Vec<Vec<f64>> = (0..d)
            .map(|j| {
                let mut e = vec![0.0; d];
                e[j] = 1.0;
                e
            })
            .collect();
        out.push(self.test_x.to_dense(d));
        let h = (self.seed as usize) % self.base.len();
        out.push(self.base.row(h).scaled(self.base.label(h)).to_dense(d));
        out
    }
}

fn sparsify(ds: &SparseDataset, rng: &mut ChaCha8Rng, keep: f64) -> SparseDataset {
    let rows = ds
        .rows()
        .iter()
        .map(|r| {
            let pairs: Vec<(usize, f64)> = r.iter().filter(|_| rng.gen_bool(keep)).collect();
            SparseVector::from_pairs(&pairs).unwrap()
        })
        .collect();
    SparseDataset::new(ds.dim(), rows, ds.labels().to_vec()).unwrap()
}

/// A seeded problem/update pair with n in [50, 500], d in [2, 50],
/// lambda in {0.01, 0.1, 1}, both losses and 1..=10 modified instances.
pub fn random_case(seed: u64) -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E37_79B9).wrapping_add(7));
    let n = rng.gen_range(50..=500);
    let d = rng.gen_range(2..=50);
    let lambda = [0.01, 0.1, 1.0][rng.gen_range(0..3)];
    let kind = if seed % 2 == 0 {
        LossKind::Logistic
    } else {
        LossKind::L2Hinge
    };
    let k = rng.gen_range(1..=10);
    let n_add = rng.gen_range(0..=k);
    let n_remove = k - n_add;
    let separation = rng.gen_range(0.0..3.0);
    let mut all = make_synthetic(seed, n + n_add + 1, d, separation).unwrap();
    if rng.gen_bool(0.5) {
        all = sparsify(&all, &mut rng, 0.4);
    }
    let test_idx = all.len() - 1;
    let test_x = all.row(test_idx).clone();
    let pool = all.subset(&(0..test_idx).collect::<Vec<_>>()).unwrap();
    let (base, plan) = split_for_update(&pool, n_add, n_remove, &mut rng).unwrap();
    let updated = base.apply_update(&plan).unwrap();
    let (old, _) = train(&base, lambda, kind, ORACLE_TOL, None).unwrap();
    let (new, _) = train(&updated, lambda, kind, ORACLE_TOL, None).unwrap();
    Case {
        seed,
        kind,
        lambda,
        base,
        plan,
        updated,
        old,
        new_opt: new.beta,
        test_x,
    }
}

pub fn exact_optimum(data: &impl Instances, lambda: f64, kind: LossKind) -> Vec<f64> {
    train(data, lambda, kind, ORACLE_TOL, None).unwrap().0.beta
}

pub fn report(name: &str, pass: bool, detail: &str) {
    println!(
        "[{}] {name}: {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
}
