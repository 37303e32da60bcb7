mod model_cmds;
mod tool_cmds;

use std::path::PathBuf;

use anyhow::Result;
use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "rolespeak", version, about = "Speech-language role-play: train, chat, forge corpora, evaluate")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Precision {
    F32,
    F64,
}

#[derive(Subcommand)]
enum Command {
    /// Train one stage and write a checkpoint directory.
    Train {
        /// 1, 2 or cfm.
        #[arg(long)]
        stage: String,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Checkpoint to continue from.
        #[arg(long)]
        init: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "f32")]
        precision: Precision,
    },
    /// One role-play turn from a checkpoint; events are printed as JSON lines.
    Chat {
        #[arg(long)]
        ckpt_dir: PathBuf,
        /// Character role id.
        #[arg(long)]
        profile: String,
        #[arg(long)]
        text: Option<String>,
        #[arg(long)]
        wav: Option<PathBuf>,
        /// Write the full response audio here.
        #[arg(long)]
        emit_audio: Option<PathBuf>,
        /// Skip speech output.
        #[arg(long)]
        text_only: bool,
    },
    /// Median time to first audio chunk.
    BenchLatency {
        #[arg(long, required_unless_present = "stub")]
        ckpt_dir: Option<PathBuf>,
        #[arg(long, default_value_t = 5)]
        trials: usize,
        #[arg(long)]
        chunk_tokens: Option<usize>,
        #[arg(long)]
        profile: Option<String>,
        #[arg(long, default_value = "hello there")]
        text: String,
        /// Measure the fixed-reply stub instead of a model.
        #[arg(long)]
        stub: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Byte-level BPE over the prompts and responses of a corpus.
    Tokenizer {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the speech-token codebook on the corpus's response audio.
    Codebook {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
    },
    /// Corpus construction stages.
    Forge {
        #[arg(value_enum)]
        stage: ForgeStage,
        #[arg(long)]
        config: PathBuf,
    },
    /// Evaluation commands.
    Eval {
        #[arg(value_enum)]
        what: EvalWhat,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a small synthetic world (profiles, corpus, audio, tokenizer, config).
    Demo {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 10)]
        records: usize,
        #[arg(long, default_value_t = 200)]
        merges: usize,
        #[arg(long, default_value_t = 32)]
        speech_vocab: usize,
        #[arg(long, default_value_t = 300)]
        steps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ForgeStage {
    Profiles,
    Dialogues,
    Speech,
    Verify,
    All,
}

#[derive(Clone, Copy, ValueEnum)]
enum EvalWhat {
    SimMatrix,
    VoiceMatch,
    Stats,
    AsrWer,
    TtsWer,
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Train {
            stage,
            config,
            corpus,
            out,
            init,
            precision,
        } => match precision {
            Precision::F32 => model_cmds::train::<f32>(&stage, &config, &corpus, &out, init.as_deref()),
            Precision::F64 => model_cmds::train::<f64>(&stage, &config, &corpus, &out, init.as_deref()),
        },
        Command::Chat {
            ckpt_dir,
            profile,
            text,
            wav,
            emit_audio,
            text_only,
        } => model_cmds::chat(&ckpt_dir, &profile, text, wav, emit_audio, text_only),
        Command::BenchLatency {
            ckpt_dir,
            trials,
            chunk_tokens,
            profile,
            text,
            stub,
            out,
        } => model_cmds::bench_latency(ckpt_dir.as_deref(), trials, chunk_tokens, profile, &text, stub, out),
        Command::Tokenizer { config, corpus, out } => model_cmds::tokenizer(&config, &corpus, &out),
        Command::Codebook { config, corpus } => model_cmds::codebook(&config, &corpus),
        Command::Forge { stage, config } => tool_cmds::forge(stage, &config),
        Command::Eval { what, config, out } => tool_cmds::eval(what, &config, &out),
        Command::Demo {
            out,
            records,
            merges,
            speech_vocab,
            steps,
            seed,
        } => tool_cmds::demo(&out, records, merges, speech_vocab, steps, seed),
    }
}
