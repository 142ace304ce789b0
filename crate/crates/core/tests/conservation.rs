#[path = "support/conservation.rs"]
mod conservation;

#[test]
fn free_flight_energy_drift_is_small() {
    let d = conservation::free_flight_drift();
    assert!(d < 1e-3, "drift {d:e}");
}

#[test]
fn drop_impulse_matches_momentum_change() {
    for (h, m) in [(0.2, 1.0), (0.5, 3.0), (1.0, 0.5)] {
        let (j, dp, oracle) = conservation::drop_impulse(h, m);
        assert!((j - dp).abs() / dp.abs() < 0.02, "h {h}: impulse {j} vs momentum change {dp}");
        assert!((j - oracle).abs() / oracle < 0.1, "h {h}: impulse {j} vs oracle {oracle}");
    }
}
