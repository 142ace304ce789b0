#[path = "support/gradcheck.rs"]
mod gradcheck;

#[test]
fn gru_bptt_matches_finite_differences() {
    for seed in 0..60 {
        let e = gradcheck::gru_case(seed);
        assert!(e < 1e-4, "seed {seed}: relative error {e:e}");
    }
}

#[test]
fn mlp_backward_matches_finite_differences() {
    for seed in 0..60 {
        let e = gradcheck::mlp_case(1000 + seed);
        assert!(e < 1e-4, "seed {seed}: relative error {e:e}");
    }
}
