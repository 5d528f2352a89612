mod common;

use common::{ancestor_path, check_wup_all_pairs, node, taxonomy, tree};
use kgzsl::taxonomy::Taxonomy;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn wup_matches_ancestor_enumeration(parents in tree(2, 200)) {
        check_wup_all_pairs(&parents)?;
    }

    #[test]
    fn tsv_round_trip(parents in tree(2, 120)) {
        let tax = taxonomy(&parents);
        let back = Taxonomy::parse(&tax.to_tsv(), "<round trip>").unwrap();
        prop_assert_eq!(back.root(), "n0");
        prop_assert_eq!(&back, &tax);
    }

    #[test]
    fn lcs_is_a_common_ancestor(parents in tree(2, 60), a in any::<prop::sample::Index>(), b in any::<prop::sample::Index>()) {
        let tax = taxonomy(&parents);
        let n = parents.len() + 1;
        let (a, b) = (a.index(n), b.index(n));
        let l: usize = tax.lcs(&node(a), &node(b)).unwrap()[1..].parse().unwrap();
        prop_assert!(ancestor_path(&parents, a).contains(&l));
        prop_assert!(ancestor_path(&parents, b).contains(&l));
    }
}
