//! Split and label-grouping invariants over generated cohorts.

use std::collections::BTreeSet;

use morphoml_core::cohort::{
    group_label, split_quotas, stratified_split, CaseRecord, Cohort, DiagnosisLabel, LabelScheme, Split,
};
use proptest::prelude::*;

fn cohort_from_counts(counts: &[usize]) -> Cohort {
    let mut records = Vec::new();
    for (label, &n) in DiagnosisLabel::ALL.iter().zip(counts) {
        for i in 0..n {
            let id = format!("{}-{i}", label.name());
            records.push(CaseRecord::new(id.clone(), *label, vec![format!("{id}-core")]).unwrap());
        }
    }
    Cohort::from_records(records).unwrap()
}

prop_compose! {
    fn arb_fractions()(a in 1u32..100, b in 0u32..100, c in 0u32..100) -> [f64; 3] {
        let t = f64::from(a + b + c);
        let (fa, fb) = (f64::from(a) / t, f64::from(b) / t);
        [fa, fb, 1.0 - fa - fb]
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn split_is_a_stratified_partition(
        counts in proptest::collection::vec(0usize..40, 8),
        fractions in arb_fractions(),
        seed in any::<u64>(),
    ) {
        prop_assume!(counts.iter().sum::<usize>() > 0);
        let cohort = cohort_from_counts(&counts);
        let split = stratified_split(&cohort, fractions, seed).unwrap();
        let ids: BTreeSet<&str> = split.assignments.iter().map(|(c, _)| c.as_str()).collect();
        prop_assert_eq!(ids.len(), cohort.len());
        prop_assert!(cohort.cases().iter().all(|c| ids.contains(c.case_id.as_str())));
        for label in DiagnosisLabel::ALL {
            let n_c = counts[label.code()];
            for (s, split_kind) in Split::ALL.iter().enumerate() {
                let got = cohort
                    .cases()
                    .iter()
                    .filter(|c| c.diagnosis == label && split.get(&c.case_id) == Some(*split_kind))
                    .count();
                prop_assert!((got as f64 - fractions[s] * n_c as f64).abs() < 1.0);
            }
        }
        let again = stratified_split(&cohort, fractions, seed).unwrap();
        prop_assert_eq!(format!("{split:?}"), format!("{again:?}"));
    }

    #[test]
    fn quotas_sum_to_n(n in 0usize..1000, fractions in arb_fractions()) {
        let q = split_quotas(n, fractions);
        prop_assert_eq!(q.iter().sum::<usize>(), n);
    }
}

#[test]
fn grouping_is_total_and_surjective() {
    for scheme in [LabelScheme::EightWay, LabelScheme::FiveWay, LabelScheme::DlbclBinary] {
        let image: BTreeSet<usize> = DiagnosisLabel::ALL.iter().map(|&l| group_label(l, scheme).index()).collect();
        assert_eq!(image, (0..scheme.num_classes()).collect());
    }
}
