//! Compare the exact expectation of the group estimator with the exact
//! policy gradient on a tiny world, for several group sizes and λ.
//!
//!     cargo run --example estimator_check

use ndarray::array;

use dagrpo::environment::{CloudOracle, RewardParams, TaskSpec};
use dagrpo::estimator::{brute_force_policy_gradient, enumerate_estimator_expectation};
use dagrpo::policy::{ActionId, PolicyParams, PromptId};

fn main() -> dagrpo::Result<()> {
    // two prompts, three answers plus HELP; prompt 1 is beyond the local model
    let params = PolicyParams::from_logits(array![[0.3, -0.5, 0.1, 0.0], [0.0, 0.4, -1.0, 0.7]])?;
    let task = TaskSpec::new(0, 3, vec![ActionId(0), ActionId(2)], vec![true, false], 1, 0.3, 0.1)?;
    let oracle = CloudOracle::new(0.9)?;
    let rewards = RewardParams::default();

    for prompt in [PromptId(0), PromptId(1)] {
        for lambda in [0.0, 0.5, 2.0] {
            let exact = brute_force_policy_gradient(&params, &task, &oracle, prompt, lambda, &rewards)?;
            println!("prompt {} lambda {lambda}: exact {:.5}", prompt.0, exact);
            for g in 2..=4 {
                let expected = enumerate_estimator_expectation(&params, &task, &oracle, prompt, lambda, g, &rewards)?;
                let gap = (&expected - &exact).iter().fold(0.0f64, |m, v| m.max(v.abs()));
                println!("    G = {g}: max gap {gap:.2e}");
            }
        }
    }
    Ok(())
}
