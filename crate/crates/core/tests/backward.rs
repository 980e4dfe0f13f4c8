//! Backward hitting times: linear in 1/ε when the mesh is tied to ε, and
//! shrinking with the reward support.

use bars_core::experiments::{backward_scaling, ratio_run};
use bars_core::fixtures::RATIO_WIDTHS;

#[test]
fn backward_hitting_time_grows_like_inverse_tolerance() {
    let r = backward_scaling(0.5, &[0.2, 0.1, 0.05], 4.0, 100.0, 1).unwrap();
    assert!(r.taus.iter().all(Option::is_some), "{:?}", r.taus);
    assert!(r.taus.windows(2).all(|w| w[0] < w[1]), "{:?}", r.taus);
    assert!((r.slope - 1.0).abs() <= 0.5, "slope {} taus {:?}", r.slope, r.taus);
}

#[test]
fn backward_hitting_time_falls_with_the_support() {
    let taus: Vec<usize> = RATIO_WIDTHS.iter().map(|&w| ratio_run(w, 0.2, 1).unwrap().tau_backward.unwrap()).collect();
    assert!(taus.windows(2).all(|w| w[1] < w[0]), "{taus:?}");
}
