//! Evaluates the supervised contrastive loss on a tiny batch and checks the
//! analytic gradient against a central difference.

use scda::loss::{supcon_objective, LossBatch};
use scda::{supcon_loss, Matrix};

fn main() -> scda::Result<()> {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let reps = Matrix::from_rows(&[[1.0, 0.0], [s, s], [0.0, 1.0], [-s, s]])?;
    let labels = [0, 0, 1, 1];

    for tau in [0.05, 0.1, 0.5, 1.0] {
        let r = supcon_loss(&LossBatch { reps: &reps, labels: &labels, temperature: tau })?;
        println!("tau={tau:<5} loss={:.6} anchors={}", r.loss, r.anchors_used);
    }

    let tau = 0.1;
    let r = supcon_loss(&LossBatch { reps: &reps, labels: &labels, temperature: tau })?;
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for i in 0..reps.rows() {
        for j in 0..reps.cols() {
            let mut plus = reps.clone();
            let mut minus = reps.clone();
            plus.row_mut(i)[j] += h;
            minus.row_mut(i)[j] -= h;
            let f = |m: &Matrix| {
                supcon_objective(&LossBatch { reps: m, labels: &labels, temperature: tau }).map(|r| r.loss)
            };
            let fd = (f(&plus)? - f(&minus)?) / (2.0 * h);
            worst = worst.max((fd - r.grad[(i, j)]).abs());
        }
    }
    println!("max |analytic - finite difference| = {worst:.2e}");
    Ok(())
}
