//! Cut selection against exhaustive search over every covering antichain of
//! small random hierarchies.

mod common;

use common::{check_cut, random_instance, worst_ratio};
use proptest::prelude::*;
use seqlens::stats::select_cut;

#[test]
fn selected_cut_is_near_optimal_and_valid() {
    let (worst, checked) = worst_ratio(1500).unwrap();
    assert!(checked > 5000, "{checked}");
    assert!(worst >= 0.9, "worst ratio {worst}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]
    #[test]
    fn cut_is_valid_for_any_budget(seed in 0u64..1_000_000, budget in 1usize..15) {
        if let Some(inst) = random_instance(seed) {
            match select_cut(&inst.h, &inst.table, budget) {
                Ok(cut) => prop_assert!(check_cut(&inst, &cut, budget).is_ok()),
                Err(seqlens::Error::BudgetTooSmall { minimum }) => prop_assert!(budget < minimum),
                Err(e) => prop_assert!(false, "{e}"),
            }
        }
    }
}
