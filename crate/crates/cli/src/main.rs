use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use detective::harness::bench::{
    evaluate_with_workers, metrics_csv, summarize, summary_text, BenchConfig, Variant,
};
use detective::harness::output::{stable_json, write_error, write_file};
use detective::harness::pipeline::inspect_graph;
use detective::harness::{run_query, DetectiveConfig, ProviderMode, RunRequest};
use detective::{Error, Result};

#[derive(Parser)]
#[command(name = "detective", version, about = "Query-driven evidence search over long-video feature bundles")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Flat `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one config key, e.g. `--set beta=0.5`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<DetectiveConfig> {
        DetectiveConfig::load(self.config.as_deref(), &self.overrides)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Answer one question against a feature bundle.
    Run {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        query: String,
        /// Comma-separated answer options, lettered A, B, C, ...
        #[arg(long, value_delimiter = ',')]
        options: Vec<String>,
        #[command(flatten)]
        config: ConfigArgs,
        /// Use deterministic in-process providers instead of HTTP.
        #[arg(long)]
        mock: bool,
        /// Mock script (defaults to mock.json inside the bundle directory).
        #[arg(long)]
        mock_script: Option<PathBuf>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Synthetic planted-clue benchmark over seeded instances.
    Bench {
        /// Number of instances; seeds are `seed_start..seed_start + seeds`.
        #[arg(long, default_value_t = 200)]
        seeds: u64,
        #[arg(long, default_value_t = 0)]
        seed_start: u64,
        #[arg(long, default_value_t = 120)]
        k: usize,
        #[arg(long, default_value_t = 6)]
        clues: usize,
        #[arg(long, default_value_t = 2)]
        clusters: usize,
        #[arg(long, default_value_t = 0.1)]
        noise: f64,
        #[arg(long, default_value_t = 10)]
        budget: usize,
        #[arg(long, default_value_t = 8)]
        m: usize,
        #[arg(long, value_delimiter = ',', default_value = "full,no_diffusion,no_facets,prior_only,uniform")]
        variants: Vec<String>,
        /// Worker threads; 0 uses all cores.
        #[arg(long, default_value_t = 0)]
        workers: usize,
        #[arg(long, default_value = "bench_out")]
        out: PathBuf,
    },
    /// Segment a bundle and export its affinity graph.
    Graph {
        #[arg(long)]
        bundle: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, default_value = "graph_out")]
        out: PathBuf,
    },
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Run {
            bundle,
            query,
            options,
            config,
            mock,
            mock_script,
            out,
        } => {
            let result = config.load().and_then(|config| {
                let req = RunRequest {
                    bundle,
                    question: query,
                    options: options.into_iter().map(|o| o.trim().to_string()).filter(|o| !o.is_empty()).collect(),
                    config,
                    mode: if mock { ProviderMode::Mock } else { ProviderMode::Http },
                    mock_script,
                };
                run_query(&req)
            });
            match result {
                Ok(run) => {
                    run.write(&out)?;
                    println!("{}", run.answer);
                    Ok(())
                }
                Err(e) => {
                    if let Err(w) = write_error(&out, &e) {
                        log::warn!("could not write error.json: {w}");
                    }
                    Err(e)
                }
            }
        }
        Command::Bench {
            seeds,
            seed_start,
            k,
            clues,
            clusters,
            noise,
            budget,
            m,
            variants,
            workers,
            out,
        } => {
            let cfg = BenchConfig {
                k,
                clue_count: clues,
                clusters,
                noise,
                budget,
                m,
                ..BenchConfig::default()
            };
            let variants = variants.iter().map(|v| v.parse()).collect::<Result<Vec<Variant>>>()?;
            let seeds: Vec<u64> = (seed_start..seed_start + seeds).collect();
            let rows = evaluate_with_workers(&seeds, &variants, &cfg, workers)?;
            let summary = summarize(&rows);
            let text = summary_text(&summary, &cfg);
            write_file(&out, "metrics.csv", metrics_csv(&rows).as_bytes())?;
            write_file(&out, "summary.txt", text.as_bytes())?;
            write_file(&out, "summary.json", stable_json(&summary)?.as_bytes())?;
            print!("{text}");
            Ok(())
        }
        Command::Graph { bundle, config, out } => {
            let cfg = config.load()?;
            let (k, nnz) = inspect_graph(&bundle, &cfg, &out)?;
            println!("{k} nodes, {nnz} stored edges -> {}", out.display());
            Ok(())
        }
    }
}

fn exit_code(e: &Error) -> ExitCode {
    ExitCode::from(u8::try_from(e.exit_code()).unwrap_or(4))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
