//! Finite-difference checks of every differentiable op.

use panoecg::autodiff::gradcheck::{catalogue, rand_tensor, relative_error, run_check};
use panoecg::Seed;

#[test]
fn every_op_matches_finite_differences() {
    let mut failures = Vec::new();
    for check in catalogue() {
        let worst = run_check(&check, 6, 0xfd);
        if !(worst < check.tolerance) {
            failures.push(format!("{}: {worst:e} >= {:e}", check.name, check.tolerance));
        }
    }
    assert!(failures.is_empty(), "{failures:?}");
}

#[test]
fn composite_expression() {
    // a small attention-like chain exercises accumulation across ops
    for i in 0..5 {
        let mut rng = Seed(9).child(i).rng();
        let q = rand_tensor(&mut rng, &[3, 4], -1.0, 1.0);
        let k = rand_tensor(&mut rng, &[2, 4], -1.0, 1.0);
        let x = rand_tensor(&mut rng, &[2, 5], -1.0, 1.0);
        let err = relative_error(&[q, k, x], &mut rng, |g, v| {
            let kt = g.transpose(v[1]).unwrap();
            let s = g.matmul(v[0], kt).unwrap();
            let a = g.softmax(s, 1).unwrap();
            let y = g.matmul(a, v[2]).unwrap();
            g.gelu(y)
        });
        assert!(err < 1e-4, "relative error {err:e}");
    }
}

#[test]
fn catalogue_covers_the_op_set() {
    let names: Vec<&str> = catalogue().iter().map(|c| c.name).collect();
    for op in ["conv1d", "upsample_linear", "softmax", "layer_norm", "spectral_normalize", "mae", "gather_rows"] {
        assert!(names.contains(&op), "{op} missing");
    }
}
