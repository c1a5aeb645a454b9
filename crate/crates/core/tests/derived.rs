mod common;

use malleable_core::model::{attr, recompute_derived, AttributeValue, Combiner};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::{add_decimal_strings, total_cost_descriptor, total_cost_fixture};

#[test]
fn oracle_self_check() {
    assert_eq!(add_decimal_strings("35.00", "4.5"), "39.50");
    assert_eq!(add_decimal_strings("0.05", "0.07"), "0.12");
    assert_eq!(add_decimal_strings("10", "0.99"), "10.99");
}

#[test]
fn total_cost_matches_string_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(50);
    let (c, expected) = total_cost_fixture(&mut rng);
    let values = recompute_derived(&c, &total_cost_descriptor(), Combiner::Sum).unwrap();
    assert_eq!(values, expected);
    assert!(expected.values().any(AttributeValue::is_not_specified));
    for (id, v) in &values {
        if let (AttributeValue::Money { amount, .. }, AttributeValue::Money { amount: want, .. }) = (v, &expected[id]) {
            assert_eq!(amount.to_string(), want.to_string(), "{id}");
        }
    }
    let c = c.with_column(total_cost_descriptor(), &values, false).unwrap();
    assert!(c.has_attribute(&attr("Total Cost")));
}
