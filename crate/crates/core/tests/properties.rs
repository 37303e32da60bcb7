use proptest::prelude::*;
use rolespeak_core::frontend::group_frames;
use rolespeak_core::language::splice_layout;
use rolespeak_core::params::ParamSet;
use rolespeak_core::speech_decoder::repetition_rate;
use rolespeak_core::synthesis::{cfm_path, cosine, initial_noise, Codebook};
use rolespeak_core::tokenizer::Tokenizer;
use rolespeak_core::training::TrainConfig;
use rolespeak_core::Matrix;

fn bpe() -> Tokenizer {
    Tokenizer::train(
        [
            "the keeper climbs the tower",
            "the smith works the forge",
            "storms and ships and the sea",
        ],
        40,
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn grouping_matches_index_oracle(n in 1usize..40, d in 1usize..9, k in 1usize..7) {
        let m = Matrix::from_fn(n, d, |r, c| (r * 100 + c) as f64);
        match group_frames(&m, k) {
            Ok(g) => {
                prop_assert!(n >= k);
                prop_assert_eq!(g.frames.shape(), (n / k, k * d));
                for j in 0..n / k {
                    for c in 0..k * d {
                        prop_assert_eq!(g.frames.get(j, c), m.get(j * k + c / d, c % d));
                    }
                }
            }
            Err(_) => prop_assert!(n < k),
        }
    }

    #[test]
    fn schedule_is_piecewise_linear(max in 2usize..500, ratio in 0.01f64..0.99, peak in 1e-5f64..1e-2) {
        let mut c = TrainConfig::stage1();
        c.max_steps = max;
        c.warmup_ratio = ratio;
        c.peak_lr = peak;
        let w = c.warmup_steps();
        prop_assert!(w >= 1 && w < max);
        prop_assert_eq!(c.lr_at(0), 0.0);
        prop_assert_eq!(c.lr_at(max), 0.0);
        prop_assert!((c.lr_at(w) - peak).abs() < 1e-12);
        for s in 0..max {
            let (a, b) = (c.lr_at(s), c.lr_at(s + 1));
            if s < w {
                prop_assert!(b >= a);
                prop_assert!((b - a - peak / w as f64).abs() < 1e-12);
            } else {
                prop_assert!(b <= a);
                prop_assert!((a - b - peak / (max - w) as f64).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn tokenizer_round_trips_over_its_alphabet(picks in proptest::collection::vec(0usize..64, 0..60)) {
        let t = bpe();
        let alphabet: Vec<char> = "the keeper climbs tower smith works forge storms and ships sea"
            .chars()
            .collect::<std::collections::BTreeSet<_>>()
            .into_iter()
            .collect();
        let s: String = picks.iter().map(|&i| alphabet[i % alphabet.len()]).collect();
        let ids = t.encode(&s).tokens;
        prop_assert!(ids.iter().all(|&i| i != rolespeak_core::tokenizer::UNK_ID));
        prop_assert_eq!(t.decode(&ids), s);
    }

    #[test]
    fn splice_layout_row_count(n_text in 1usize..30, lens in proptest::collection::vec(1usize..6, 0..4)) {
        let count = lens.len().min(n_text);
        let lens = &lens[..count];
        let placeholders: Vec<usize> = (0..count).map(|i| i * (n_text / count.max(1))).collect();
        let slots = splice_layout(&placeholders, n_text, lens).unwrap();
        prop_assert_eq!(slots.len(), n_text - count + lens.iter().sum::<usize>());
    }

    #[test]
    fn codebook_inverts_its_own_centroids(tokens in proptest::collection::vec(0u32..6, 1..30)) {
        let cents = Matrix::from_fn(6, 3, |r, c| (r * 3 + c) as f64 * 0.7 - 2.0);
        let cb = Codebook::new(cents, "prop".into()).unwrap();
        let frames = cb.detokenize(&tokens).unwrap();
        prop_assert_eq!(cb.tokenize(&frames).unwrap().tokens, tokens);
    }

    #[test]
    fn param_blobs_round_trip(vals in proptest::collection::vec(-1e6f64..1e6, 1..40)) {
        let mut ps = ParamSet::new();
        ps.insert("w", Matrix::from_vec(1, vals.len(), vals.clone()).unwrap());
        let back = ParamSet::<f64>::from_bytes(&ps.to_bytes()).unwrap();
        prop_assert_eq!(back.content_hash(), ps.content_hash());
        prop_assert_eq!(back, ps);
    }

    #[test]
    fn path_endpoints_are_exact(seed in 0u64..1000, frames in 1usize..12) {
        let x0 = initial_noise::<f64>(frames, 5, seed);
        let x1 = initial_noise::<f64>(frames, 5, seed + 1);
        prop_assert_eq!(cfm_path(&x0, &x1, 0.0, 0.0), x0.clone());
        prop_assert_eq!(cfm_path(&x0, &x1, 0.0, 1e-4), x0.clone());
        prop_assert_eq!(cfm_path(&x0, &x1, 1.0, 0.0), x1);
    }

    #[test]
    fn cosine_is_symmetric_and_bounded(a in proptest::collection::vec(-5f64..5.0, 8), b in proptest::collection::vec(-5f64..5.0, 8)) {
        let (x, y) = (cosine(&a, &b), cosine(&b, &a));
        prop_assert_eq!(x, y);
        prop_assert!((-1.0..=1.0).contains(&x));
    }

    #[test]
    fn repetition_rate_bounds(tokens in proptest::collection::vec(0u32..5, 1..40)) {
        let r = repetition_rate(&tokens, 1).unwrap();
        prop_assert!((0.0..1.0).contains(&r));
        let distinct: std::collections::HashSet<_> = tokens.iter().collect();
        prop_assert!((r - (tokens.len() - distinct.len()) as f64 / tokens.len() as f64).abs() < 1e-12);
    }
}
