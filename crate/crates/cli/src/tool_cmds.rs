use std::path::Path;

use anyhow::Result;
use rolespeak_core::toy::{write_fixture, ToyWorld};
use rolespeak_eval::run as eval_run;
use rolespeak_forge::pipeline::{self as forge_run, Clients, ForgeConfig};

use crate::{EvalWhat, ForgeStage};

fn print<T: serde::Serialize>(v: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

pub fn forge(stage: ForgeStage, config: &Path) -> Result<()> {
    let cfg = ForgeConfig::load(config)?;
    let clients = Clients::new(&cfg)?;
    let summary = |s: &forge_run::StageSummary| -> Result<()> {
        print(s)?;
        for f in &s.failed {
            eprintln!("{f}");
        }
        Ok(())
    };
    match stage {
        ForgeStage::Profiles => print(&forge_run::run_profiles(&cfg, &clients)?.len())?,
        ForgeStage::Dialogues => summary(&forge_run::run_dialogues(&cfg, &clients)?)?,
        ForgeStage::Speech => summary(&forge_run::run_speech(&cfg, &clients)?)?,
        ForgeStage::Verify => print(&forge_run::run_verify(&cfg, &clients)?.summary())?,
        ForgeStage::All => {
            forge_run::run_profiles(&cfg, &clients)?;
            summary(&forge_run::run_dialogues(&cfg, &clients)?)?;
            summary(&forge_run::run_speech(&cfg, &clients)?)?;
            print(&forge_run::run_verify(&cfg, &clients)?.summary())?;
        }
    }
    Ok(())
}

pub fn eval(what: EvalWhat, config: &Path, out: &Path) -> Result<()> {
    let cfg = eval_run::EvalConfig::load(config)?;
    match what {
        EvalWhat::SimMatrix => {
            for m in eval_run::run_sim_matrix(&cfg, out)? {
                print!("{}", m.to_text());
                println!();
            }
        }
        EvalWhat::VoiceMatch => print(&eval_run::run_voice_match(&cfg, out)?)?,
        EvalWhat::Stats => print(&eval_run::run_stats(&cfg, out)?.row())?,
        EvalWhat::AsrWer => print(&eval_run::run_asr_wer(&cfg, out)?)?,
        EvalWhat::TtsWer => print(&eval_run::run_tts_wer(&cfg, out)?)?,
    }
    Ok(())
}

pub fn demo(out: &Path, records: usize, merges: usize, speech_vocab: usize, steps: usize, seed: u64) -> Result<()> {
    let world = ToyWorld::build(records, seed)?;
    let paths = write_fixture(out, &world, merges, speech_vocab, steps)?;
    print(&serde_json::json!({ "config": paths.config, "corpus": paths.corpus }))
}
