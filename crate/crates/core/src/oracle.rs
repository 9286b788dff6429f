//! Slow reference implementations used by `verify`.

use crate::error::Result;
use crate::head::BBox;
use crate::memory::cosine;
use crate::numerics::Tensor;
use crate::ssm::ContinuousSsm;

/// `Σ_{k<terms} Mᵏ/k!` with no scaling.
pub fn taylor_expm(m: &Tensor, terms: usize) -> Tensor {
    let n = m.rows();
    let mut sum = Tensor::eye(n);
    let mut term = Tensor::eye(n);
    for k in 1..terms {
        term = term.matmul(m).expect("square").scale(1.0 / k as f64);
        sum.add_assign(&term);
    }
    sum
}

/// `(Ā, B̄)` from the truncated series `Σ (ΔA)ᵏ/k!` and `Σ (ΔA)ᵏ/(k+1)! · ΔB`.
pub fn taylor_discretize(ssm: &ContinuousSsm, terms: usize) -> (Tensor, Tensor) {
    let da = ssm.a.scale(ssm.delta);
    let db = ssm.b.scale(ssm.delta);
    let n = da.rows();
    let a_bar = taylor_expm(&da, terms);
    let mut series = Tensor::eye(n);
    let mut power = Tensor::eye(n);
    for k in 1..terms {
        power = power.matmul(&da).expect("square").scale(1.0 / (k + 1) as f64);
        series.add_assign(&power);
    }
    (a_bar, series.matmul(&db).expect("shapes"))
}

/// Indices of the `k` most similar entries by full sort; ties keep the
/// earlier index.
pub fn brute_force_top_k(entries: &[Vec<f64>], query: &[f64], k: usize) -> Result<Vec<usize>> {
    let mut scored = entries
        .iter()
        .enumerate()
        .map(|(i, e)| Ok((cosine(e, query)?, i)))
        .collect::<Result<Vec<_>>>()?;
    scored.sort_by(|a, b| b.0.partial_cmp(&a.0).expect("finite").then(a.1.cmp(&b.1)));
    Ok(scored.into_iter().take(k).map(|(_, i)| i).collect())
}

/// A five-frame trajectory whose IoUs against its ground truth are
/// `1.0, 0.8, 0.5, 0.2, 0.0` and whose center errors are `0, 1, 2.5, 4, √800`.
pub fn toy_trajectory() -> (Vec<BBox>, Vec<BBox>) {
    let gt = vec![BBox::new(0.0, 0.0, 10.0, 10.0); 5];
    let pred = vec![
        BBox::new(0.0, 0.0, 10.0, 10.0),
        BBox::new(0.0, 0.0, 8.0, 10.0),
        BBox::new(0.0, 0.0, 5.0, 10.0),
        BBox::new(0.0, 0.0, 2.0, 10.0),
        BBox::new(20.0, 20.0, 10.0, 10.0),
    ];
    (pred, gt)
}

/// Hand-counted curves for [`toy_trajectory`]: precision counts at
/// `0..=50` px, success counts at `0..=100` hundredths, success AUC.
pub fn toy_table() -> (Vec<usize>, Vec<usize>, f64) {
    let precision = (0..=50)
        .map(|px| match px {
            0 => 1,
            1 | 2 => 2,
            3 => 3,
            4..=28 => 4,
            _ => 5,
        })
        .collect();
    let success = (0..=100)
        .map(|i| match i {
            0..=19 => 4,
            20..=49 => 3,
            50..=79 => 2,
            80..=99 => 1,
            _ => 0,
        })
        .collect();
    (precision, success, 248.0 / 500.0)
}
