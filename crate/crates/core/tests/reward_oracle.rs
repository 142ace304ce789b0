#[path = "support/reward_oracle.rs"]
mod oracle;

use fallguard::default_model;

#[test]
fn thousand_readouts_match_the_oracle() {
    let worst = oracle::max_reward_disagreement(&default_model(), 1000, 11);
    for (name, w) in ["contact", "joint", "torque", "total"].iter().zip(worst) {
        assert!(w <= 1e-9, "{name}: relative error {w:e}");
    }
}
