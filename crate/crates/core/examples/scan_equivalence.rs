//! The recurrent and convolutional forms of one discretized system give
//! the same outputs; the selective scan with input-independent
//! projections reduces to per-channel LTI systems.
//!
//! `cargo run --release --example scan_equivalence`

use mimtrack::harness::verify::{frozen_selective_case, random_system};
use mimtrack::numerics::nn::normal_tensor;
use mimtrack::numerics::Tensor;
use mimtrack::ssm::{conv_scan, discretize, recurrent_scan, ConvKernel};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> mimtrack::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for m in [1, 16, 128, 256] {
        let mut ssm = random_system(&mut rng, 4, 2)?;
        ssm.a = ssm.a.scale(0.5).sub(&Tensor::eye(4))?;
        let d = discretize(&ssm)?;
        let x = normal_tensor(&mut rng, &[m, 2], 1.0);
        let rec = recurrent_scan(&d, &x, &[0.0; 4])?;
        let kernel = ConvKernel::new(&d, m)?;
        let conv = conv_scan(&kernel, &d, &x)?;
        println!("m = {m:>3}: max |recurrent - conv| = {:.2e}", rec.max_abs_diff(&conv));
    }
    for (dm, n, len) in [(1, 1, 8), (4, 3, 32), (6, 6, 64)] {
        let err = frozen_selective_case(&mut rng, dm, n, len)?;
        println!("frozen selective scan D={dm} N={n} len={len}: max diff from LTI {err:.2e}");
    }
    Ok(())
}
