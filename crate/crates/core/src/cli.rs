//! The `coprune` command line.
//!
//! Exit codes: 0 success, 1 validation or runtime failure (including oracle
//! mismatches), 2 usage errors.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use crate::cost::{CostReport, FlopsConfig};
use crate::io::{decode, encode_result, load_bundle, read_manifest, save_bundle, KIND_ACTIVATION};
use crate::model::validate_bundle;
use crate::oracle;
use crate::pipeline::{run_pipeline, PruneStrategy};
use crate::report::{cost_table, mean_tokens, trace_table, Record, FIDELITY_NOTE};
use crate::schedule::PruneSchedule;
use crate::synth::{synth_bundle, SynthConfig};
use crate::Error;

const RESULT_SUFFIX: &str = ".result.bundle";
const REPORT_NAME: &str = "report.jsonl";

#[derive(Debug, Parser)]
#[command(name = "coprune", version, about = "Three-stage visual token pruning over captured activations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FfnModeArg {
    Paper,
    Intermediate,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Prune one bundle or every `*.bundle` in a directory.
    Prune {
        input: PathBuf,
        /// Preset name (p667, p778, p889, p944) or TOML schedule file.
        #[arg(long)]
        schedule: String,
        #[arg(long, default_value = "vitcop")]
        strategy: String,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the analytic cost report for a schedule.
    Analyze {
        #[arg(long)]
        schedule: String,
        #[arg(long, value_enum, default_value = "paper")]
        ffn_mode: FfnModeArg,
    },
    /// Compare every engine operation against brute-force references.
    OracleCheck {
        #[arg(long, default_value_t = 64)]
        n: usize,
        #[arg(long, default_value_t = 200)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Print a bundle's manifest, meta and validation results.
    Inspect { bundle: PathBuf },
    /// Write a seeded synthetic activation bundle.
    Synth {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 64)]
        m: usize,
        #[arg(long, default_value_t = 32)]
        n_layers: usize,
        /// Comma-separated LLM layers to dump keys for.
        #[arg(long, value_delimiter = ',', default_values_t = [2usize, 22])]
        layers: Vec<usize>,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Parses `argv` (including the program name) and runs the subcommand.
pub fn cli_main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let res = match cli.command {
        Command::Prune {
            input,
            schedule,
            strategy,
            seed,
            out,
        } => prune(&input, &schedule, &strategy, seed, &out),
        Command::Analyze { schedule, ffn_mode } => analyze(&schedule, ffn_mode),
        Command::OracleCheck { n, trials, seed } => Ok(oracle_check(n, trials, seed)),
        Command::Inspect { bundle } => Ok(inspect(&bundle)),
        Command::Synth {
            seed,
            m,
            n_layers,
            layers,
            out,
        } => synth(seed, m, n_layers, layers, &out),
    };
    match res {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error [{}]: {e}", e.code());
            1
        }
    }
}

fn collect_inputs(input: &Path) -> Result<Vec<PathBuf>, Error> {
    if !input.is_dir() {
        return Ok(vec![input.to_path_buf()]);
    }
    let mut files = Vec::new();
    for entry in fs::read_dir(input).map_err(crate::BundleError::from)? {
        let p = entry.map_err(crate::BundleError::from)?.path();
        let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
        if p.is_file() && name.ends_with(".bundle") && !name.ends_with(RESULT_SUFFIX) {
            files.push(p);
        }
    }
    files.sort();
    if files.is_empty() {
        return Err(Error::InvalidParameter(format!(
            "no .bundle files in {}",
            input.display()
        )));
    }
    Ok(files)
}

fn bundle_id(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

struct PruneOutcome {
    records: Vec<Record>,
    table: String,
    result: Option<(String, Vec<u8>)>,
}

fn prune_one(path: &Path, schedule: &PruneSchedule, strategy: PruneStrategy) -> PruneOutcome {
    let id = bundle_id(path);
    let run = || -> Result<_, Error> {
        let bundle = load_bundle(path)?;
        let sched = schedule.for_depth(bundle.meta.n_layers);
        let out = run_pipeline(&bundle, &sched, strategy)?;
        let bytes = encode_result(&out.tokens, &bundle.meta.model, bundle.meta.m, strategy.name());
        Ok((out, bytes))
    };
    match run() {
        Ok((out, bytes)) => {
            let mut table = trace_table(&id, &out.traces);
            table.push_str(&format!(
                "{id}  final {}  mean/layer {:.2}  cr_int {:.4}  flops {:.6e}\n",
                out.tokens.len(),
                mean_tokens(&out.cost),
                out.cost.cr_int,
                out.cost.flops_total
            ));
            let mut records: Vec<Record> = out
                .traces
                .into_iter()
                .map(|trace| Record::Stage {
                    bundle: id.clone(),
                    trace,
                })
                .collect();
            records.push(Record::cost(&id, &out.cost));
            let stem = id.strip_suffix(".bundle").unwrap_or(&id);
            PruneOutcome {
                records,
                table,
                result: Some((format!("{stem}{RESULT_SUFFIX}"), bytes)),
            }
        }
        Err(e) => PruneOutcome {
            table: format!("{id}  error [{}]: {e}\n", e.code()),
            records: vec![Record::Error {
                bundle: id,
                code: e.code().into(),
                message: e.to_string(),
            }],
            result: None,
        },
    }
}

fn prune(input: &Path, schedule: &str, strategy: &str, seed: Option<u64>, out: &Path) -> Result<i32, Error> {
    let schedule = PruneSchedule::load(schedule)?;
    schedule.validate()?;
    let strategy = PruneStrategy::parse(strategy, seed)?;
    let inputs = collect_inputs(input)?;

    // order of results follows the sorted inputs regardless of scheduling
    let outcomes: Vec<PruneOutcome> = inputs
        .par_iter()
        .map(|p| prune_one(p, &schedule, strategy))
        .collect();

    fs::create_dir_all(out).map_err(crate::BundleError::from)?;
    let mut report = Record::Header {
        tool: "coprune".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        strategy: strategy.name().into(),
        seed,
        schedule: schedule.clone(),
        bundles: inputs.iter().map(|p| bundle_id(p)).collect(),
        fidelity_note: FIDELITY_NOTE.into(),
    }
    .to_line();
    let mut failed = false;
    let stdout = std::io::stdout();
    let mut stdout = stdout.lock();
    for o in &outcomes {
        for r in &o.records {
            report.push_str(&r.to_line());
        }
        let _ = stdout.write_all(o.table.as_bytes());
        match &o.result {
            Some((name, bytes)) => fs::write(out.join(name), bytes).map_err(crate::BundleError::from)?,
            None => failed = true,
        }
    }
    fs::write(out.join(REPORT_NAME), report).map_err(crate::BundleError::from)?;
    Ok(if failed { 1 } else { 0 })
}

fn analyze(schedule: &str, mode: FfnModeArg) -> Result<i32, Error> {
    let s = PruneSchedule::load(schedule)?;
    s.validate()?;
    let mode = match mode {
        FfnModeArg::Paper => "paper",
        FfnModeArg::Intermediate => "intermediate",
    };
    let cfg = FlopsConfig::from_schedule(&s, mode)?;
    let cost = CostReport::analytic(&s, &cfg)?;
    let m = s.model.m;
    let counts = [s.stage1_count(m), s.budget(m), s.stage3_count(m)];
    println!(
        "schedule     pi1 {} pi2 {} pi3 {} l_s {} l_d {}",
        s.pi1, s.pi2, s.pi3, s.l_s, s.l_d
    );
    println!("stage counts {} / {} / {}", counts[0], counts[1], counts[2]);
    print!("{}", cost_table(&cost));
    let mean = mean_tokens(&cost);
    print!(
        "{}",
        Record::Analysis {
            schedule: s,
            stage_counts: counts,
            mean_tokens_per_layer: mean,
            cost,
        }
        .to_line()
    );
    Ok(0)
}

fn oracle_check(n: usize, trials: usize, seed: u64) -> i32 {
    let results = oracle::run_all(n, trials, seed);
    print!("{}", oracle::render(&results));
    let ok = results.iter().all(|r| r.passed());
    for r in results {
        print!(
            "{}",
            Record::Oracle {
                result: r,
                seed,
                n_max: n,
            }
            .to_line()
        );
    }
    if ok {
        0
    } else {
        1
    }
}

fn inspect(path: &Path) -> i32 {
    let bytes = match fs::read(path) {
        Ok(b) => b,
        Err(e) => {
            eprintln!("error [E_IO]: {}: {e}", path.display());
            return 1;
        }
    };
    let manifest = match read_manifest(&bytes) {
        Ok(m) => m,
        Err(e) => {
            eprintln!("error [{}]: {e}", e.code());
            return 1;
        }
    };
    println!("{}", serde_json::to_string_pretty(&manifest).expect("manifest serializes"));
    if let Err(e) = decode(&bytes) {
        eprintln!("error [{}]: {e}", e.code());
        return 1;
    }
    if manifest.kind != KIND_ACTIVATION {
        println!("validation: not an activation bundle (kind {})", manifest.kind);
        return 0;
    }
    match crate::io::decode_bundle(&bytes) {
        Ok(b) => {
            println!("tokens {}  d_feat {}  layers {:?}", b.n_tokens(), b.d_feat(), b.key_vectors.keys().collect::<Vec<_>>());
            let v = validate_bundle(&b);
            println!("validation: {} violation(s)", v.len());
            0
        }
        Err(crate::BundleError::Invalid(v)) => {
            println!("validation: {} violation(s)", v.len());
            for x in &v {
                println!("  {x}");
            }
            1
        }
        Err(e) => {
            eprintln!("error [{}]: {e}", e.code());
            1
        }
    }
}

fn synth(seed: u64, m: usize, n_layers: usize, layers: Vec<usize>, out: &Path) -> Result<i32, Error> {
    if m == 0 {
        return Err(Error::InvalidParameter("m must be at least 1".into()));
    }
    if let Some(&bad) = layers.iter().find(|&&l| l == 0 || l > n_layers) {
        return Err(Error::InvalidParameter(format!("layer {bad} outside 1..={n_layers}")));
    }
    let cfg = SynthConfig {
        m,
        n_layers,
        layers,
        ..SynthConfig::small()
    };
    save_bundle(&synth_bundle(&cfg, seed), out)?;
    Ok(0)
}
