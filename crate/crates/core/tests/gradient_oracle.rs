mod common;

#[test]
fn thousand_derivatives_match_finite_differences() {
    common::checks::gradient_oracle(1000, 0x6AAD).unwrap();
}

#[test]
fn second_seed_also_matches() {
    common::checks::gradient_oracle(1000, 0x1234).unwrap();
}
