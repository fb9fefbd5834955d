//! Fixtures shared by the criterion benchmarks.

use dm2l_core::dataset::{apply_mask, generate_mask, generate_synthetic, SyntheticSpec};
use dm2l_core::objective::{build_label_groups, ObjectiveSpec};
use dm2l_core::{Matrix, ObservedLabelMatrix};

pub struct Problem {
    pub features: Matrix,
    pub labels: Matrix,
    pub observed: ObservedLabelMatrix,
}

/// Rank-3 synthetic problem with a fraction `rho` of labels observed.
pub fn problem(n: usize, d: usize, c: usize, rho: f64, seed: u64) -> Problem {
    let ds = generate_synthetic(&SyntheticSpec {
        n,
        d,
        c,
        rank: 3.min(d).min(c),
        noise: 0.1,
        seed,
    })
    .expect("valid synthetic spec");
    let mask = generate_mask(n, c, rho, seed ^ 0x5eed).expect("valid rho");
    let observed = apply_mask(ds.labels(), &mask).expect("labels are ±1");
    Problem {
        features: ds.features().clone(),
        labels: ds.labels().clone(),
        observed,
    }
}

/// Linear-model objective over `p`.
pub fn linear_objective(p: &Problem, lambda: f64) -> ObjectiveSpec {
    let groups = build_label_groups(&p.observed);
    ObjectiveSpec::new(p.features.clone(), p.observed.clone(), groups, lambda).expect("consistent shapes")
}
