use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;

use agesim::bitstats::{bit_distribution, mean_rho};
use agesim::probmodel::{deviation_curve, ln_duty_deviation, ln_p_at_least_n};
use agesim::report::{self, to_json};
use agesim::sim::{self, RunConfig};
use agesim::weights::{self, parse_layer_list, QuantFormat, WeightDistribution};
use agesim::Error;

#[derive(Parser)]
#[command(name = "agesim", version, about = "SRAM weight-memory aging simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one simulation described by a TOML config.
    Run {
        config: PathBuf,
        /// Output directory; defaults to the config's `output_dir`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write the block partition as `blocks.csv`.
        #[arg(long)]
        block_map: bool,
    },
    /// Run every `*.toml` config in a directory and write a comparison matrix.
    Matrix {
        config_dir: PathBuf,
        /// Where `matrix.csv` and `matrix.json` go; defaults to the config directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-bit probability of '1' over a network's weights.
    Bits {
        manifest: PathBuf,
        #[arg(long, default_value = "int8-sym")]
        format: QuantFormat,
        /// Write `bits.csv` here instead of printing it.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Binomial duty-cycle deviation probabilities.
    Prob {
        #[arg(long = "K")]
        k: u64,
        #[arg(long)]
        rho: f64,
        #[arg(long)]
        b: Option<u64>,
        #[arg(long)]
        cells: Option<u64>,
        #[arg(long)]
        n: Option<u64>,
        /// Print the whole `b = 0..=K/2` curve as CSV.
        #[arg(long)]
        curve: bool,
        /// Write `curve.csv` here (implies `--curve`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare a run's duty-cycles against the binomial model.
    Compare {
        result: PathBuf,
        #[arg(long = "K")]
        k: u64,
        #[arg(long)]
        rho: f64,
        /// Also write `compare.json` into the result directory.
        #[arg(long)]
        save: bool,
    },
    /// Write a manifest of synthesized weights.
    Synth {
        /// Layer list, e.g. `CONV(16,1,5,5),FC(10,256)`.
        #[arg(long)]
        layers: String,
        #[arg(long, default_value = "synthetic")]
        name: String,
        #[arg(long, default_value_t = 0.0)]
        mean: f64,
        #[arg(long, default_value_t = 0.05)]
        std: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn fail(kind: &str, message: impl Into<String>, code: u8) -> ExitCode {
    eprintln!("{}", json!({ "error": { "kind": kind, "message": message.into() } }));
    ExitCode::from(code)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion) => {
            e.exit()
        }
        Err(e) => return fail("usage", e.render().to_string().trim_end(), 2),
    };
    match execute(cli.command) {
        Ok(code) => code,
        Err(e) => fail(e.kind(), e.to_string(), 1),
    }
}

fn execute(cmd: Command) -> agesim::Result<ExitCode> {
    match cmd {
        Command::Run { config, out, block_map } => {
            let cfg = RunConfig::load(&config)?;
            let result = sim::run(&cfg)?;
            let mut files = Vec::new();
            if let Some(dir) = out.or_else(|| cfg.output_path()) {
                files = report::emit_run(&result, &dir)?;
                if block_map {
                    if let Some(plan) = sim::block_plan(&cfg)? {
                        files.push(report::emit_block_map(&plan, &dir)?);
                    }
                }
            }
            print!(
                "{}",
                to_json(&json!({
                    "label": result.label,
                    "config_hash": result.config_hash,
                    "k_inf": result.k_inf,
                    "total_k": result.total_k,
                    "summary": result.summary,
                    "pct_best_bin": result.histogram.best_bin_pct(),
                    "pct_worst_bin": result.histogram.worst_bin_pct(),
                    "wall_time_s": result.wall_time.as_secs_f64(),
                    "files": files,
                }))
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Matrix { config_dir, out } => {
            let configs = sim::load_config_dir(&config_dir)?;
            let matrix = sim::run_matrix(&configs)?;
            for (cfg, entry) in configs.iter().zip(&matrix.entries) {
                if let (Some(dir), Ok(r)) = (cfg.output_path(), &entry.result) {
                    report::emit_run(r, &dir)?;
                }
            }
            let files = report::emit_matrix(&matrix, out.as_deref().unwrap_or(&config_dir))?;
            let failures: Vec<_> = matrix
                .entries
                .iter()
                .filter_map(|e| e.result.as_ref().err().map(|f| json!({ "label": e.label, "kind": f.kind, "message": f.message })))
                .collect();
            print!("{}", to_json(&json!({ "runs": matrix.entries.len(), "failed": failures.len(), "files": files })));
            if failures.is_empty() {
                Ok(ExitCode::SUCCESS)
            } else {
                eprintln!("{}", json!({ "error": { "kind": "matrix_entries_failed", "message": format!("{} of {} runs failed", failures.len(), matrix.entries.len()), "entries": failures } }));
                Ok(ExitCode::from(3))
            }
        }
        Command::Bits { manifest, format, out } => {
            let net = weights::load_network(&manifest)?;
            let scheme = weights::fit_quantization(&net, format)?;
            let words: Vec<u32> = weights::quantize_to_words(&net, &scheme)?.all().collect();
            let dist = bit_distribution(&words, format.bits_per_weight())?;
            match out {
                Some(dir) => {
                    let path = report::emit_bits(&dist, &dir)?;
                    print!("{}", to_json(&json!({ "n_words": dist.n_words, "mean_rho": mean_rho(&dist), "file": path })));
                }
                None => print!("{}", String::from_utf8_lossy(&report::bits_csv(&dist))),
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Prob { k, rho, b, cells, n, curve, out } => {
            if curve || out.is_some() {
                let points = deviation_curve(k, rho)?;
                match out {
                    Some(dir) => {
                        let path = report::emit_curve(&points, &dir)?;
                        print!("{}", to_json(&json!({ "K": k, "rho": rho, "points": points.len(), "file": path })));
                    }
                    None => print!("{}", String::from_utf8_lossy(&report::curve_csv(&points))),
                }
                return Ok(ExitCode::SUCCESS);
            }
            let b = b.ok_or_else(|| Error::InvalidParam("--b is required unless --curve is given".into()))?;
            let (ln_p, ln_q) = ln_duty_deviation(k, rho, b)?;
            let mut body = json!({ "K": k, "rho": rho, "b": b, "P": ln_p.exp(), "ln_P": ln_p, "ln_Q": ln_q });
            match (cells, n) {
                (Some(cells), Some(n)) => {
                    let ln = ln_p_at_least_n(k, rho, b, cells, n)?;
                    body["cells"] = json!(cells);
                    body["n"] = json!(n);
                    body["P_at_least_n"] = json!(ln.exp());
                    body["ln_P_at_least_n"] = json!(ln);
                }
                (None, None) => {}
                _ => return Err(Error::InvalidParam("--cells and --n go together".into())),
            }
            print!("{}", to_json(&body));
            Ok(ExitCode::SUCCESS)
        }
        Command::Compare { result, k, rho, save } => {
            let run = report::load_run(&result)?;
            let rep = sim::compare_result(&run, k, rho)?;
            if save {
                report::emit_comparison(&rep, &result)?;
            }
            print!("{}", to_json(&rep));
            Ok(ExitCode::SUCCESS)
        }
        Command::Synth { layers, name, mean, std, seed, out } => {
            let layers = parse_layer_list(&layers)?;
            let net = weights::synthesize_network(name, &layers, WeightDistribution::Gaussian { mean, std }, seed)?;
            let manifest = weights::save_network(&net, &out)?;
            print!("{}", to_json(&json!({ "manifest": manifest, "weights": net.weight_count() })));
            Ok(ExitCode::SUCCESS)
        }
    }
}

