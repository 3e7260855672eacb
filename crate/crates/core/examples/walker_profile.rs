//! Prints reward, episode length and peak effort imbalance of the default
//! surrogate walker under a few hand-picked perturbations.
//!
//!     cargo run -p jointattack --example walker_profile

use jointattack::walker::{nominal_action, WalkerConfig, WalkerState};
use jointattack::{apply_perturbation, SeededRng, TorquePerturbation};

fn main() -> jointattack::Result<()> {
    let cfg = WalkerConfig::default();
    let cases: [(&str, [f64; 8]); 6] = [
        ("none", [0.0; 8]),
        ("boost legs 2-4 by 0.5", [0.0, 0.0, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5]),
        ("alternate legs +-0.2", [0.2, 0.2, -0.2, -0.2, 0.2, 0.2, -0.2, -0.2]),
        ("alternate legs +-0.3", [0.3, 0.3, -0.3, -0.3, 0.3, 0.3, -0.3, -0.3]),
        ("all -0.1", [-0.1; 8]),
        ("all -0.5", [-0.5; 8]),
    ];
    println!("{:<24} {:>9} {:>6} {:>9}", "perturbation", "reward", "steps", "max var");
    for (name, delta) in cases {
        let pert = TorquePerturbation::from_values(delta.to_vec())?;
        let mut state = WalkerState::reset(&cfg);
        let mut rng = SeededRng::new(0, 0);
        let (mut total, mut peak) = (0.0, 0.0f64);
        loop {
            let action = apply_perturbation(&nominal_action(&cfg, state.t()), &pert)?;
            let out = state.step(&cfg, &action, &mut rng)?;
            total += out.reward;
            peak = peak.max(state.imbalance());
            if out.done {
                break;
            }
        }
        println!("{name:<24} {total:>9.1} {:>6} {peak:>9.4}", state.t());
    }
    Ok(())
}
