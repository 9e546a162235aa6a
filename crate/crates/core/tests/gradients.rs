mod common;

use w2s_core::losses::LossId;

const DRAWS: usize = 100;
const TOL: f64 = 1e-4;

#[test]
fn every_loss_matches_central_differences() {
    for (k, id) in LossId::ALL.into_iter().enumerate() {
        let worst = common::loss_fd_worst(id, DRAWS, 1000 + k as u64);
        assert!(worst < TOL, "{}: worst relative error {worst:e}", id.as_str());
    }
}

#[test]
fn joint_loss_matches_central_differences() {
    let worst = common::joint_fd_worst(DRAWS, 77);
    assert!(worst < TOL, "joint loss: worst relative error {worst:e}");
}
