use rolespeak_core::checkpoint::{load_checkpoint, save_checkpoint, Artifacts, MANIFEST};
use rolespeak_core::data::{codebook_frames, response_pairs, DataBuilder};
use rolespeak_core::decode::DecodeConfig;
use rolespeak_core::frontend::SpeechEncoder;
use rolespeak_core::language::{self, placeholder_positions, splice};
use rolespeak_core::model::Module;
use rolespeak_core::respond::{collect_events, measure_latency, transcript, RespondRequest, ResponseEvent, RoleEngine, StubResponder};
use rolespeak_core::synthesis::{fit_codebook, Codebook};
use rolespeak_core::tokenizer::Tokenizer;
use rolespeak_core::toy::{toy_model, toy_train, write_fixture, ToyWorld};
use rolespeak_core::training::{eval_cfm, train_cfm, train_stage1, train_stage2, Checkpoint, Stage};
use rolespeak_core::types::ModalityPayload;
use rolespeak_core::config::load_config;
use rolespeak_core::CoreError;

struct Setup {
    world: ToyWorld,
    tok: Tokenizer,
    codebook: Codebook,
    ckpt: Checkpoint<f64>,
}

fn setup(steps: usize) -> Setup {
    let world = ToyWorld::build(6, 4).unwrap();
    let tok = world.train_tokenizer(120).unwrap();
    let model = toy_model(tok.vocab_size(), 16);
    let pairs = response_pairs(&world.records, &world.profiles, 2).unwrap();
    let codebook = fit_codebook(&codebook_frames(&pairs, &world.assets, 2).unwrap(), 16, 3, 20).unwrap();
    let mut ckpt = Checkpoint::<f64>::init(model).unwrap();
    let tr = toy_train(steps);
    let enc = SpeechEncoder::new(model.encoder).unwrap();
    let mut b = DataBuilder::new(model, enc, &tok, &world.assets);
    let tx = b.text_examples(&pairs).unwrap();
    train_stage1(&mut ckpt, &tx, &tr.stage1).unwrap();
    let sx = b.speech_examples(&pairs, &ckpt.params, &codebook).unwrap();
    train_stage2(&mut ckpt, &sx, &tr.stage2).unwrap();
    let fx = b.flow_examples(&pairs, &ckpt.params, &codebook).unwrap();
    train_cfm(&mut ckpt, &fx, &tr.cfm).unwrap();
    Setup { world, tok, codebook, ckpt }
}

#[test]
fn stage_one_freezes_speech_side_and_stage_two_needs_stage_one() {
    let world = ToyWorld::build(4, 2).unwrap();
    let tok = world.train_tokenizer(80).unwrap();
    let model = toy_model(tok.vocab_size(), 16);
    let pairs = response_pairs(&world.records, &world.profiles, 2).unwrap();
    let mut ckpt = Checkpoint::<f64>::init(model).unwrap();
    let before = ckpt.params.hashes();
    let enc = SpeechEncoder::new(model.encoder).unwrap();
    let mut b = DataBuilder::new(model, enc, &tok, &world.assets);
    let tx = b.text_examples(&pairs).unwrap();
    let cb = fit_codebook(&codebook_frames(&pairs, &world.assets, 2).unwrap(), 16, 1, 10).unwrap();
    let sx = b.speech_examples(&pairs, &ckpt.params, &cb).unwrap();
    let tr = toy_train(5);
    let mut fresh = ckpt.clone();
    assert!(matches!(train_stage2(&mut fresh, &sx, &tr.stage2), Err(CoreError::Training(_))));
    let report = train_stage1(&mut ckpt, &tx, &tr.stage1).unwrap();
    assert_eq!(report.losses.len(), 5);
    let after = ckpt.params.hashes();
    for ((m, h0), (_, h1)) in before.iter().zip(&after) {
        if Stage::One.trainable().contains(m) {
            assert_ne!(h0, h1, "{m:?} should have been trained");
        } else {
            assert_eq!(h0, h1, "{m:?} must stay frozen");
        }
    }
    assert!(train_stage1(&mut ckpt, &[], &tr.stage1).is_err());
    assert!(train_stage1(&mut ckpt, &tx, &tr.stage2).is_err());
}

#[test]
fn cfm_training_is_deterministic() {
    let world = ToyWorld::build(4, 9).unwrap();
    let tok = world.train_tokenizer(60).unwrap();
    let model = toy_model(tok.vocab_size(), 16);
    let pairs = response_pairs(&world.records, &world.profiles, 2).unwrap();
    let cb = fit_codebook(&codebook_frames(&pairs, &world.assets, 2).unwrap(), 16, 1, 10).unwrap();
    let base = Checkpoint::<f64>::init(model).unwrap();
    let enc = SpeechEncoder::new(model.encoder).unwrap();
    let mut b = DataBuilder::new(model, enc, &tok, &world.assets);
    let fx = b.flow_examples(&pairs, &base.params, &cb).unwrap();
    let tr = toy_train(20);
    let (mut a, mut c) = (base.clone(), base);
    let ra = train_cfm(&mut a, &fx, &tr.cfm).unwrap();
    let rc = train_cfm(&mut c, &fx, &tr.cfm).unwrap();
    assert!((ra.final_eval - rc.final_eval).abs() < 1e-6);
    assert_eq!(a.content_hash(), c.content_hash());
}

#[test]
fn zeroing_the_speaker_raises_held_out_flow_loss() {
    let world = ToyWorld::build(12, 5).unwrap();
    let tok = world.train_tokenizer(60).unwrap();
    let model = toy_model(tok.vocab_size(), 16);
    let pairs = response_pairs(&world.records, &world.profiles, 2).unwrap();
    let cb = fit_codebook(&codebook_frames(&pairs, &world.assets, 2).unwrap(), 16, 1, 15).unwrap();
    let mut ckpt = Checkpoint::<f32>::init(model).unwrap();
    let enc = SpeechEncoder::new(model.encoder).unwrap();
    let mut b = DataBuilder::new(model, enc, &tok, &world.assets);
    let all = b.flow_examples(&pairs, &ckpt.params, &cb).unwrap();
    let (train, held) = all.split_at(all.len() - 4);
    train_cfm(&mut ckpt, train, &toy_train(300).cfm).unwrap();
    let zeroed: Vec<_> = held
        .iter()
        .map(|e| rolespeak_core::model::FlowExample {
            x1: e.x1.clone(),
            cond: e.cond.with_speaker(vec![0.0; e.cond.speaker.len()]),
        })
        .collect();
    let with_v = eval_cfm(&ckpt.params, &model, held, 1).unwrap();
    let without = eval_cfm(&ckpt.params, &model, &zeroed, 1).unwrap();
    assert!(without - with_v > 0.0, "with v {with_v}, zeroed {without}");
}

fn request(s: &Setup) -> RespondRequest {
    let rec = &s.world.records[0];
    let profile = s.world.profiles.iter().find(|p| p.role_id == rec.profile_refs[0]).unwrap().clone();
    RespondRequest {
        profile,
        context: Vec::new(),
        input: ModalityPayload::text("hello there"),
        input_audio: None,
    }
}

#[test]
fn streaming_contracts_and_checkpoint_round_trip() {
    let s = setup(40);
    let mut respond = rolespeak_core::config::RespondSection {
        chunk_tokens: 5,
        vocoder_iterations: 4,
        max_speech_tokens: 20,
        ..Default::default()
    };
    let mut text = DecodeConfig::greedy(12);
    text.min_len = 3;
    let req = request(&s);
    let mut engine = RoleEngine::new(&s.ckpt, &s.tok, &s.codebook, &s.world.assets, text, respond).unwrap();
    let events = collect_events(&mut engine, &req).unwrap();
    let final_pos = events.iter().position(|e| matches!(e, ResponseEvent::Final { .. })).unwrap();
    assert_eq!(final_pos, events.len() - 1);
    let first_audio = events.iter().position(ResponseEvent::is_audio).expect("audio");
    assert!(first_audio < final_pos);
    let ResponseEvent::Final { text: full, tokens, speech_tokens, audio } = &events[final_pos] else { unreachable!() };
    assert_eq!(&transcript(&events), full);
    assert!(speech_tokens.len() > 5);
    let chunks = events.iter().filter(|e| e.is_audio()).count();
    assert_eq!(chunks, speech_tokens.len().div_ceil(5));
    assert_eq!(audio.as_ref().unwrap().samples.len(), speech_tokens.len() * 2 * 256);

    // The streamed transcript equals a plain generate_text run on the same prompt.
    let model = s.ckpt.model;
    let enc = SpeechEncoder::with_params(model.encoder, s.ckpt.params.encoder.clone()).unwrap();
    let mut b = DataBuilder::new(model, enc, &s.tok, &s.world.assets);
    let (ptoks, speech) = b.prompt_input(&req.profile, &[], &req.input, None).unwrap();
    assert!(speech.is_empty());
    let emb = language::embed_tokens(&s.ckpt.params.language, &ptoks).unwrap();
    let seq = splice(&emb, &[], &placeholder_positions(&ptoks)).unwrap();
    let gen = language::generate_text(&seq, &s.ckpt.params.language, &model.language, &text, |_, _| {}).unwrap();
    assert_eq!(&gen.tokens.tokens, tokens);

    // Text-only output.
    respond.speech_output = false;
    let mut quiet = RoleEngine::new(&s.ckpt, &s.tok, &s.codebook, &s.world.assets, text, respond).unwrap();
    let ev = collect_events(&mut quiet, &req).unwrap();
    assert!(ev.iter().all(|e| !e.is_audio()));
    assert!(ev.iter().any(|e| matches!(e, ResponseEvent::Truncated { .. })) || ev.len() > 1);

    // Truncation is reported as an event.
    let mut short = RoleEngine::new(&s.ckpt, &s.tok, &s.codebook, &s.world.assets, DecodeConfig { min_len: 1, ..DecodeConfig::greedy(1) }, respond).unwrap();
    let ev = collect_events(&mut short, &req).unwrap();
    assert!(matches!(ev[1], ResponseEvent::Truncated { .. }));

    // Checkpoint directory round trip with hash verification.
    let dir = tempfile::tempdir().unwrap();
    let fix = write_fixture(&dir.path().join("fx"), &s.world, 120, 16, 5).unwrap();
    let loaded = load_config(&fix.config).unwrap();
    let mut cfg = loaded.config.clone();
    cfg.model = s.ckpt.model;
    let art = Artifacts::new(cfg.to_toml().unwrap(), s.tok.clone(), Some(s.codebook.clone())).unwrap();
    let out = dir.path().join("ckpt");
    let manifest = save_checkpoint(&out, &s.ckpt, &art).unwrap();
    let (back, art2, m2) = load_checkpoint::<f64>(&out).unwrap();
    assert_eq!(back, s.ckpt);
    assert_eq!(m2, manifest);
    assert_eq!(art2.codebook.unwrap().content_hash(), s.codebook.content_hash());
    let (as32, _, _) = load_checkpoint::<f32>(&out).unwrap();
    assert_eq!(as32.history, s.ckpt.history);
    let blob = out.join(format!("{}.bin", Module::Flow.name()));
    let mut bytes = std::fs::read(&blob).unwrap();
    let last = bytes.len() - 1;
    bytes[last] ^= 1;
    std::fs::write(&blob, bytes).unwrap();
    assert!(matches!(load_checkpoint::<f64>(&out), Err(CoreError::Checkpoint(_))));
    assert!(out.join(MANIFEST).exists());
}

#[test]
fn latency_grows_with_chunk_size() {
    let s = setup(10);
    let req = request(&s);
    let mut text = DecodeConfig::greedy(6);
    text.min_len = 6;
    let mut medians = Vec::new();
    for chunk in [5, 25, 50] {
        let respond = rolespeak_core::config::RespondSection {
            chunk_tokens: chunk,
            vocoder_iterations: 8,
            max_speech_tokens: 60,
            ..Default::default()
        };
        let mut e = RoleEngine::new(&s.ckpt, &s.tok, &s.codebook, &s.world.assets, text, respond).unwrap();
        e.speech_decode.min_len = 60;
        let r = measure_latency(&mut e, &req, 5).unwrap();
        assert_eq!(r.chunk_tokens, chunk);
        medians.push(r.median_ms);
    }
    assert!(medians.windows(2).all(|w| w[0] <= w[1]), "{medians:?}");
}

#[test]
fn stub_latency_report() {
    let mut stub = StubResponder::default();
    let s = ToyWorld::build(1, 0).unwrap();
    let req = RespondRequest {
        profile: s.profiles[0].clone(),
        context: Vec::new(),
        input: ModalityPayload::text("hi"),
        input_audio: None,
    };
    let r = measure_latency(&mut stub, &req, 5).unwrap();
    assert_eq!(r.trials, 5);
    assert_eq!(r.samples_ms.len(), 5);
    assert!(r.median_ms < 50.0);
    assert!(measure_latency(&mut stub, &req, 4).is_err());
    let json = serde_json::to_value(&r).unwrap();
    for k in ["median_ms", "trials", "chunk_tokens"] {
        assert!(json.get(k).is_some());
    }
}
