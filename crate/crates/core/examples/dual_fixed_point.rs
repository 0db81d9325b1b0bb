//! The dual step against a known usage curve: λ converges to the value
//! where usage equals the target, and a large step makes it oscillate.
//!
//!     cargo run --example dual_fixed_point

use dagrpo::dual::{dual_update, DualState, LogisticUsage};

fn main() -> dagrpo::Result<()> {
    let curve = LogisticUsage { lambda0: 1.0, steepness: 4.0 };
    for eta in [0.01, 0.5, 2.0] {
        for tau in [0.1, 0.3, 0.5, 0.7] {
            let mut state = DualState::new(0.5, eta, tau)?;
            for _ in 0..10_000 {
                let usage = curve.usage(state.lambda);
                dual_update(&mut state, usage)?;
            }
            let last: Vec<f64> = state.history.iter().rev().take(200).map(|r| r.lambda).collect();
            let lo = last.iter().cloned().fold(f64::MAX, f64::min);
            let hi = last.iter().cloned().fold(f64::MIN, f64::max);
            println!(
                "eta {eta:<4} tau {tau}: lambda {:.4}, usage {:.4}, range over last 200 steps {:.2e}",
                state.lambda,
                curve.usage(state.lambda),
                hi - lo
            );
        }
    }
    Ok(())
}
