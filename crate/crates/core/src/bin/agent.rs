//! Runs one participant against a hotel.

use std::io::BufRead;
use std::path::PathBuf;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use turinghotel::agent::{
    DelayPolicy, HumanBridge, HumanFeed, LlmConfig, LlmProcessor, Participant, ParticipantConfig, Processor, Script,
    ScriptedProcessor,
};
use turinghotel::net::{run_client, ClientOptions};
use turinghotel::protocol::{Envelope, Payload, ProfileSubmission};

#[derive(Parser)]
#[command(name = "agent", about = "Turing hotel participant")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Join a world and take part in rounds.
    Run(RunArgs),
}

#[derive(Parser)]
struct RunArgs {
    /// Agent id; must appear in the hotel's roster.
    #[arg(long)]
    name: String,
    #[arg(long)]
    display_name: Option<String>,
    /// `host:port` of the hotel.
    #[arg(long)]
    world: String,
    /// `scripted:<file>`, `llm` or `human-bridge`.
    #[arg(long)]
    processor: String,
    #[arg(long)]
    model: Option<String>,
    /// Chat-completions base URL.
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long)]
    system_prompt: Option<PathBuf>,
    /// Replaces the built-in survey question; `{options}` lists the peer letters.
    #[arg(long)]
    survey_template: Option<PathBuf>,
    #[arg(long, env = "TURINGHOTEL_API_KEY", hide_env_values = true)]
    api_key: Option<String>,
    #[arg(long, default_value_t = 30.0)]
    llm_timeout_s: f64,
    #[arg(long, default_value_t = 0.0)]
    wait_s: f64,
    #[arg(long, default_value_t = 0.0)]
    add_random_up_to: f64,
    #[arg(long, default_value = "other:unspecified")]
    background: String,
    #[arg(long, default_value_t = 3)]
    ai_experience: i64,
    /// Leave after this many rounds.
    #[arg(long)]
    rounds: Option<u32>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 8)]
    max_attempts: u32,
}

fn processor(args: &RunArgs) -> anyhow::Result<(Box<dyn Processor>, Option<HumanFeed>)> {
    if let Some(file) = args.processor.strip_prefix("scripted:") {
        let script = Script::load(file).with_context(|| format!("loading script {file}"))?;
        return Ok((Box::new(ScriptedProcessor::new(script, args.seed)), None));
    }
    match args.processor.as_str() {
        "llm" => {
            let (Some(endpoint), Some(model)) = (&args.endpoint, &args.model) else {
                bail!("--processor llm needs --endpoint and --model");
            };
            let mut cfg = LlmConfig::new(endpoint, model, "");
            if let Some(p) = &args.system_prompt {
                cfg = cfg
                    .with_system_prompt_file(p)
                    .with_context(|| format!("reading {}", p.display()))?;
            }
            if let Some(p) = &args.survey_template {
                cfg.survey_template = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            }
            cfg.api_key = args.api_key.clone();
            cfg.timeout_s = args.llm_timeout_s;
            Ok((Box::new(LlmProcessor::new(cfg)), None))
        }
        "human-bridge" => {
            let feed = HumanFeed::default();
            Ok((Box::new(HumanBridge::new(feed.clone())), Some(feed)))
        }
        other => bail!("unknown processor {other:?}; expected scripted:<file>, llm or human-bridge"),
    }
}

fn show(env: &Envelope) {
    match &env.payload {
        Payload::Welcome { overview, .. } => println!("{overview}"),
        Payload::EnterHall => println!("-- waiting in the hall"),
        Payload::RoomStart {
            my_proxy, peer_proxies, ..
        } => {
            let peers: Vec<String> = peer_proxies.iter().map(|p| p.to_string()).collect();
            println!("-- room open; you are {my_proxy}, with {}", peers.join(", "));
        }
        Payload::RoomRelay { from_proxy, text, .. } => println!("{from_proxy}: {text}"),
        Payload::SurveyPrompt { options, .. } => {
            let opts: Vec<String> = options.iter().map(|p| p.to_string()).collect();
            println!("-- time is up. Which of {} are human? Answer with /vote <letters>", opts.join(", "));
        }
        Payload::RoundResult { recorded, .. } => {
            println!("-- round over{}", if *recorded { "" } else { " (no verdict recorded)" })
        }
        Payload::Error { code, message } => println!("-- {code:?}: {message}"),
        _ => {}
    }
}

fn main() -> anyhow::Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .with_writer(std::io::stderr)
        .init();
    let Cmd::Run(args) = Cli::parse().cmd;
    let (processor, feed) = processor(&args)?;
    let mut cfg = ParticipantConfig::new(&args.name);
    if let Some(d) = &args.display_name {
        cfg.display_name = d.clone();
    }
    cfg.profile = ProfileSubmission {
        background: args.background.clone(),
        ai_experience: args.ai_experience,
    };
    cfg.delay = DelayPolicy::new(args.wait_s, args.add_random_up_to);
    cfg.max_rounds = args.rounds;
    cfg.seed = args.seed;
    let mut participant = Participant::new(cfg, processor);

    let interactive = feed.is_some();
    if let Some(feed) = feed {
        std::thread::spawn(move || {
            for line in std::io::stdin().lock().lines().map_while(Result::ok) {
                feed.push_line(&line);
            }
        });
    }
    let mut opts = ClientOptions::new(&args.world);
    opts.max_attempts = args.max_attempts;
    run_client(&mut participant, &opts, |env| {
        if interactive {
            show(env)
        }
    })?;
    eprintln!("{} left after {} rounds", args.name, participant.rounds_done());
    Ok(())
}
