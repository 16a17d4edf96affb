//! The optimizer on its own: 2-D Rosenbrock from the classic start point.
//!
//! ```text
//! cargo run --example lbfgs_rosenbrock
//! ```

use crossgram::lbfgs::{minimize, Evaluation, LbfgsConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = minimize(
        |x: &[f64]| {
            let (a, b) = (x[0], x[1]);
            Ok(Evaluation {
                value: (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2),
                gradient: vec![
                    -2.0 * (1.0 - a) - 400.0 * a * (b - a * a),
                    200.0 * (b - a * a),
                ],
                aux: (),
            })
        },
        vec![-1.2, 1.0],
        &LbfgsConfig::default(),
    )?;
    for r in out.history.iter().step_by(5) {
        println!("iter {:>3}  f = {:.6e}", r.iteration, r.value);
    }
    println!(
        "{:?} after {} iterations, {} evaluations: x = {:?}, f = {:.3e}",
        out.status, out.iterations, out.evaluations, out.x, out.value
    );
    Ok(())
}
