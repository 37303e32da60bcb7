use proptest::prelude::*;
use rolespeak_core::types::Language;
use rolespeak_forge::clients::{StubAsr, StubChat, StubSimilarity};
use rolespeak_forge::dialogue::{generate_dialogue, Speaker};
use rolespeak_forge::filters::{edit_distance, filter_pattern, wer};
use rolespeak_forge::fixture::clean_fixture;
use rolespeak_forge::pipeline::male_fraction;
use rolespeak_forge::profile::{create_profile, SeedInfo};
use rolespeak_forge::verify::{verify_corpus, Verdict, VerifyClients, VerifyConfig};

/// Minimum over every edit path, without memoization.
fn all_paths(a: &[u8], b: &[u8]) -> usize {
    match (a, b) {
        ([], _) => b.len(),
        (_, []) => a.len(),
        ([x, ra @ ..], [y, rb @ ..]) => {
            let sub = all_paths(ra, rb) + usize::from(x != y);
            sub.min(all_paths(ra, b) + 1).min(all_paths(a, rb) + 1)
        }
    }
}

fn seq(max: usize) -> impl Strategy<Value = Vec<u8>> {
    prop::collection::vec(0u8..4, 0..=max)
}

proptest! {
    #[test]
    fn dp_matches_exhaustive_paths(a in seq(6), b in seq(6)) {
        prop_assert_eq!(edit_distance(&a, &b), all_paths(&a, &b));
    }

    #[test]
    fn edit_distance_is_a_metric(a in seq(8), b in seq(8), c in seq(8)) {
        prop_assert_eq!(edit_distance(&a, &b) == 0, a == b);
        prop_assert_eq!(edit_distance(&a, &b), edit_distance(&b, &a));
        prop_assert!(edit_distance(&a, &c) <= edit_distance(&a, &b) + edit_distance(&b, &c));
    }

    #[test]
    fn equal_length_wer_is_symmetric(a in prop::collection::vec("[a-d]", 1..8), seed in any::<u64>()) {
        let mut b = a.clone();
        if !b.is_empty() {
            let i = (seed as usize) % b.len();
            b[i] = "z".into();
        }
        let (ra, rb) = (a.join(" "), b.join(" "));
        prop_assert_eq!(wer(&ra, &rb, Language::En).unwrap(), wer(&rb, &ra, Language::En).unwrap());
        prop_assert_eq!(wer(&ra, &ra, Language::En).unwrap(), 0.0);
    }

    #[test]
    fn generated_dialogues_alternate(budget in 4usize..16, name in "[A-Z][a-z]{2,8}") {
        let seed = SeedInfo {
            role_id: name.to_lowercase(),
            name: name.clone(),
            traits: vec!["calm".into()],
            language: Language::En,
            reference_audio_ids: vec![],
        };
        let c = Speaker::Character(create_profile(&seed, &StubChat).unwrap());
        let u = Speaker::User { user_id: "user1".into(), persona: "Curious.".into() };
        let r = generate_dialogue("p", &u, &c, &StubChat, budget).unwrap();
        prop_assert_eq!(r.turns.len(), budget);
        prop_assert!(filter_pattern(&r));
    }
}

#[test]
fn user_voice_is_balanced() {
    let f = male_fraction(0, 10_000);
    assert!((0.48..=0.52).contains(&f), "{f}");
}

#[test]
fn verification_is_idempotent_on_kept_records() {
    let fx = clean_fixture(6).unwrap();
    let asr = StubAsr { ledger: fx.ledger.clone() };
    let sim = StubSimilarity::default();
    let vc = VerifyClients { asr: &asr, sim: &sim, assets: &fx.assets, refs: &fx.refs };
    let cfg = VerifyConfig::default();
    let mut records = fx.records.clone();
    records[1].turns.truncate(3);
    let first = verify_corpus(&records, &vc, &cfg).unwrap();
    let kept: Vec<_> = records
        .iter()
        .zip(&first.verdicts)
        .filter(|(_, v)| v.verdict == Verdict::Keep)
        .map(|(r, _)| r.clone())
        .collect();
    assert_eq!(kept.len(), 5);
    let second = verify_corpus(&kept, &vc, &cfg).unwrap();
    assert_eq!(second.kept, kept.len());
}
