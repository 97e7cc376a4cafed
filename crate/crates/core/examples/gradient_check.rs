//! Finite-difference checks: every differentiable op, then the whole toy
//! model end to end in f64.

use surgdepth::{verify, ModelConfig};

fn main() -> surgdepth::Result<()> {
    let ops = verify::op_gradient_checks();
    print!("{}", verify::format_table(&ops));
    let report = verify::model_grad_check(&ModelConfig::grad_check_toy(), 8, 0)?;
    println!(
        "end-to-end: {} sampled entries, max relative error {:.3e} (tolerance {:.0e}) -> {}",
        report.checked(),
        report.max_rel_error,
        verify::MODEL_GRAD_TOL,
        if report.passed { "ok" } else { "FAILED" }
    );
    Ok(())
}
