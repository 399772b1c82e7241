//! Exact Euclidean projection onto the probability simplex.

/// Projection of `v` onto `{a >= 0, sum(a) = 1}` (sort-based, O(P log P)).
pub fn simplex_project(v: &[f64]) -> Vec<f64> {
    project_with_support(v).0
}

/// Projection plus the mask of strictly positive output entries.
pub fn project_with_support(v: &[f64]) -> (Vec<f64>, Vec<bool>) {
    assert!(!v.is_empty(), "simplex projection of an empty vector");
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.partial_cmp(a).expect("NaN in simplex projection"));
    let mut css = 0.0;
    let mut tau = 0.0;
    for (j, uj) in u.iter().enumerate() {
        css += uj;
        let t = (css - 1.0) / (j + 1) as f64;
        if uj - t > 0.0 {
            tau = t;
        }
    }
    let out: Vec<f64> = v.iter().map(|x| (x - tau).max(0.0)).collect();
    let support = v.iter().map(|x| x - tau > 0.0).collect();
    (out, support)
}

/// Vector-Jacobian product of the projection given its support set.
pub fn simplex_jacobian_vjp(support: &[bool], g: &[f64]) -> Vec<f64> {
    let k = support.iter().filter(|s| **s).count();
    if k == 0 {
        return vec![0.0; g.len()];
    }
    let gm: f64 = g
        .iter()
        .zip(support)
        .filter(|(_, s)| **s)
        .map(|(g, _)| g)
        .sum::<f64>()
        / k as f64;
    g.iter()
        .zip(support)
        .map(|(g, s)| if *s { g - gm } else { 0.0 })
        .collect()
}
