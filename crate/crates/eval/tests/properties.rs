use std::collections::HashMap;

use proptest::prelude::*;
use rolespeak_core::types::{AudioAsset, DialogueRecord, ModalityPayload, Turn};
use rolespeak_eval::corpus_stats;
use rolespeak_eval::similarity::{SimilarityMatrix, VOICE_MATCH_THRESHOLD};

fn corpus(spec: &[(u8, Vec<u16>)], prefix: &str, assets: &mut HashMap<String, AudioAsset>) -> Vec<DialogueRecord> {
    spec.iter()
        .enumerate()
        .map(|(d, (c, lens))| {
            let character = format!("c{c}");
            let turns = lens
                .iter()
                .enumerate()
                .map(|(k, n)| {
                    let id = format!("{prefix}{d}-{k}");
                    assets.insert(id.clone(), AudioAsset::new(&id, vec![0.0; *n as usize + 1]).unwrap());
                    let who = if k % 2 == 0 { "u".to_owned() } else { character.clone() };
                    Turn::new(k, who, ModalityPayload::speech_and_text("x", id))
                })
                .collect();
            DialogueRecord {
                dialogue_id: format!("{prefix}{d}"),
                participants: ["u".into(), character.clone()],
                turns,
                profile_refs: vec![character],
            }
        })
        .collect()
}

fn spec() -> impl Strategy<Value = Vec<(u8, Vec<u16>)>> {
    prop::collection::vec((0u8..5, prop::collection::vec(0u16..2000, 1..6)), 0..6)
}

proptest! {
    #[test]
    fn stats_are_additive(a in spec(), b in spec()) {
        let mut assets = HashMap::new();
        let ra = corpus(&a, "a", &mut assets);
        let rb = corpus(&b, "b", &mut assets);
        let both: Vec<_> = ra.iter().chain(&rb).cloned().collect();
        let sa = corpus_stats(&ra, &assets).unwrap();
        let sb = corpus_stats(&rb, &assets).unwrap();
        prop_assert_eq!(corpus_stats(&both, &assets).unwrap(), sa.combine(&sb));
    }

    #[test]
    fn matrices_are_symmetric_with_unit_diagonal(vs in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 4), 1..7)) {
        prop_assume!(vs.iter().all(|v| v.iter().map(|x| x * x).sum::<f64>() > 1e-6));
        let labels = (0..vs.len()).map(|i| i.to_string()).collect();
        let m = SimilarityMatrix::from_vectors(labels, &vs).unwrap();
        for i in 0..vs.len() {
            prop_assert!((m.get(i, i) - 1.0).abs() < 1e-6);
            for j in 0..vs.len() {
                prop_assert!((m.get(i, j) - m.get(j, i)).abs() < 1e-6);
                prop_assert!(m.get(i, j).abs() <= 1.0 + 1e-12);
            }
        }
    }

    #[test]
    fn voice_match_is_symmetric(a in prop::collection::vec(-1.0f64..1.0, 6), b in prop::collection::vec(-1.0f64..1.0, 6)) {
        let ea = rolespeak_core::synthesis::SpeakerEmbedding { vector: a };
        let eb = rolespeak_core::synthesis::SpeakerEmbedding { vector: b };
        prop_assert_eq!(
            rolespeak_eval::similarity::voice_match_embeddings(&ea, &eb),
            rolespeak_eval::similarity::voice_match_embeddings(&eb, &ea)
        );
        prop_assert_eq!(
            rolespeak_eval::similarity::voice_match_embeddings(&ea, &eb),
            ea.cosine(&eb) > VOICE_MATCH_THRESHOLD
        );
    }
}
