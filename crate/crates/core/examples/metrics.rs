//! Precision and success curves of a five-frame toy trajectory.
//!
//! `cargo run --release --example metrics`

use mimtrack::harness::evaluate;
use mimtrack::oracle::toy_trajectory;

fn main() -> mimtrack::Result<()> {
    let (pred, gt) = toy_trajectory();
    for (p, g) in pred.iter().zip(&gt) {
        println!("pred {p}  gt {g}  IoU {:.2}  center error {:.2}", p.iou(g), p.center_error(g));
    }
    let r = evaluate(&pred, &gt)?;
    println!("precision@20 {:.2}", r.precision_at_20);
    println!("success AUC {:.3}, precision AUC {:.3}, mean IoU {:.2}", r.success_auc, r.precision_auc, r.mean_iou);
    for theta in [0, 20, 50, 80, 100] {
        println!("success(IoU > {:.2}) = {:.1}", theta as f64 / 100.0, r.success[theta]);
    }
    std::fs::write("curves.svg", r.to_svg())?;
    println!("wrote curves.svg");
    Ok(())
}
