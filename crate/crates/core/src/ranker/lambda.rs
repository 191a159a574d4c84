use crate::eval::dcg_at_k;

/// First- and second-order LambdaRank statistics for one list.
///
/// `lambdas[i]` is the direction in which item `i`'s score should move: the
/// negative gradient of the NDCG-weighted pairwise logistic cost.
#[derive(Debug, Clone, PartialEq)]
pub struct LambdaStats {
    pub lambdas: Vec<f64>,
    pub hessians: Vec<f64>,
}

/// |ΔNDCG@k| of swapping every pair of items in the current score order.
pub(crate) struct SwapDeltas {
    position: Vec<usize>,
    gains: Vec<f64>,
    inv_ideal: f64,
    k: usize,
}

impl SwapDeltas {
    pub(crate) fn new(scores: &[f64], gains: &[u32], k: usize) -> Self {
        let n = scores.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
        let mut position = vec![0; n];
        for (pos, &item) in order.iter().enumerate() {
            position[item] = pos;
        }
        let mut ideal = gains.to_vec();
        ideal.sort_unstable_by(|a, b| b.cmp(a));
        let ideal_dcg = dcg_at_k(&ideal, k);
        SwapDeltas {
            position,
            gains: gains.iter().map(|&g| 2f64.powi(g as i32) - 1.0).collect(),
            inv_ideal: if ideal_dcg > 0.0 {
                1.0 / ideal_dcg
            } else {
                0.0
            },
            k,
        }
    }

    fn discount(&self, pos: usize) -> f64 {
        if pos < self.k {
            1.0 / ((pos + 2) as f64).log2()
        } else {
            0.0
        }
    }

    pub(crate) fn get(&self, i: usize, j: usize) -> f64 {
        let gain_diff = self.gains[i] - self.gains[j];
        let disc_diff = self.discount(self.position[i]) - self.discount(self.position[j]);
        (gain_diff * disc_diff * self.inv_ideal).abs()
    }
}

/// For each pair with `gains[i] > gains[j]`, with
/// `ρ = 1 / (1 + exp(σ(s_i - s_j)))` and `Δ = |ΔNDCG@k(i, j)|`:
/// `λ_i += σρΔ`, `λ_j -= σρΔ`, and both hessians gain `σ²ρ(1-ρ)Δ`.
pub fn compute_lambdas(scores: &[f64], gains: &[u32], sigma: f64, k: usize) -> LambdaStats {
    assert_eq!(scores.len(), gains.len(), "scores and gains must align");
    let n = scores.len();
    let mut stats = LambdaStats {
        lambdas: vec![0.0; n],
        hessians: vec![0.0; n],
    };
    let deltas = SwapDeltas::new(scores, gains, k);
    for i in 0..n {
        for j in 0..n {
            if gains[i] <= gains[j] {
                continue;
            }
            let delta = deltas.get(i, j);
            if delta == 0.0 {
                continue;
            }
            let rho = 1.0 / (1.0 + (sigma * (scores[i] - scores[j])).exp());
            let lambda = sigma * rho * delta;
            let hessian = sigma * sigma * rho * (1.0 - rho) * delta;
            stats.lambdas[i] += lambda;
            stats.lambdas[j] -= lambda;
            stats.hessians[i] += hessian;
            stats.hessians[j] += hessian;
        }
    }
    stats
}
