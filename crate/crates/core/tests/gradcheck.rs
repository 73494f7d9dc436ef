use punet::gradcheck::{composite_check, primitive_suite};

#[test]
fn every_primitive_matches_central_differences() {
    for seed in [1, 2] {
        for r in primitive_suite(seed).unwrap() {
            assert!(r.passed(), "{}: rel err {:.3e} over {} entries", r.name, r.max_rel_err, r.checked);
        }
    }
}

#[test]
fn composite_forward_and_dice_matches_central_differences() {
    for seed in [3, 4] {
        let r = composite_check(seed).unwrap();
        assert!(r.passed(), "seed {seed}: rel err {:.3e}", r.max_rel_err);
    }
}
