mod common;

#[test]
fn full_model_matches_central_differences() {
    for &lambda in &[0.0, 0.3, 1.0] {
        let check = common::full_model_gradcheck(lambda, 17);
        for (n, e) in check.names.iter().zip(&check.rel_errors) {
            assert!(*e <= 1e-4, "lambda={lambda} {n}: relative error {e:e}");
        }
    }
}
