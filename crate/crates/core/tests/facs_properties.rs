use std::collections::HashSet;

use proptest::prelude::*;
use xmodal_core::facs::{describe, format_au_string, parse_au_string, tokenize, Vocabulary, CODEBOOK, PAD_ID};

fn au_set() -> impl Strategy<Value = Vec<u32>> {
    prop::sample::subsequence(CODEBOOK.iter().map(|&(id, _)| id).collect::<Vec<_>>(), 1..5).prop_shuffle()
}

proptest! {
    #[test]
    fn parse_inverts_format(ids in au_set()) {
        prop_assert_eq!(parse_au_string(&format_au_string(&ids)).unwrap(), ids);
    }

    #[test]
    fn parse_ignores_case_and_spacing(ids in au_set(), lower in any::<bool>()) {
        let s = ids.iter().map(|id| format!(" {}{id} ", if lower { "au" } else { "Au" })).collect::<Vec<_>>().join("+");
        prop_assert_eq!(parse_au_string(&s).unwrap(), ids);
    }

    #[test]
    fn distinct_sets_describe_differently(a in au_set(), b in au_set()) {
        let (ta, tb) = (describe(&a).unwrap().text, describe(&b).unwrap().text);
        prop_assert_eq!(a == b, ta == tb);
    }

    #[test]
    fn tokens_are_padded_to_length(ids in au_set(), len in 1usize..24) {
        let vocab = Vocabulary::from_codebook();
        let toks = tokenize(&describe(&ids).unwrap(), &vocab, len);
        prop_assert_eq!(toks.len(), len);
        prop_assert!(toks[0] != PAD_ID);
        prop_assert!(toks.iter().all(|&t| (t as usize) < vocab.len()));
    }
}

#[test]
fn single_unit_descriptions_are_distinct() {
    let texts: HashSet<String> = CODEBOOK.iter().map(|&(id, _)| describe(&[id]).unwrap().text).collect();
    assert_eq!(texts.len(), 30);
}
