//! Zero-order-hold discretization of a small continuous system, checked
//! against the scalar closed form and the `A → 0` limit.
//!
//! `cargo run --release --example discretize`

use mimtrack::numerics::Tensor;
use mimtrack::ssm::{discretize, ContinuousSsm};

fn main() -> mimtrack::Result<()> {
    let a = Tensor::from_rows(&[vec![-1.0, 0.0], vec![0.0, -3.0]])?;
    let b = Tensor::from_rows(&[vec![1.0], vec![2.0]])?;
    let c = Tensor::from_rows(&[vec![1.0, 1.0]])?;
    let d = Tensor::from_rows(&[vec![0.0]])?;
    let delta = 0.5;
    let sys = discretize(&ContinuousSsm::new(a, b, c, d, delta)?)?;

    println!("A_bar = {:?}", sys.a_bar.data());
    println!("B_bar = {:?}", sys.b_bar.data());
    for (i, (ai, bi)) in [(-1.0f64, 1.0), (-3.0, 2.0)].into_iter().enumerate() {
        let a_bar = (delta * ai).exp();
        let b_bar = (a_bar - 1.0) / ai * bi;
        println!(
            "state {i}: closed form A_bar {a_bar:.15} B_bar {b_bar:.15} | diff {:.1e} {:.1e}",
            (sys.a_bar.at(i, i) - a_bar).abs(),
            (sys.b_bar.at(i, 0) - b_bar).abs()
        );
    }

    // a vanishing state matrix leaves B_bar = delta * B exactly
    let zero = ContinuousSsm::new(
        Tensor::zeros(&[1, 1]),
        Tensor::from_rows(&[vec![3.0]])?,
        Tensor::from_rows(&[vec![1.0]])?,
        Tensor::zeros(&[1, 1]),
        0.25,
    )?;
    println!("A = 0: B_bar = {} (delta * B = 0.75)", discretize(&zero)?.b_bar.data()[0]);
    Ok(())
}
