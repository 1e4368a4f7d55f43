use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use cfa_core::attack::{attest_with_attack, AttackSpec};
use cfa_core::corpus;
use cfa_core::exec::{parse_input, Inputs, RunOptions, DEFAULT_FUEL};
use cfa_core::instrument::{scan_code, IndirectTargetList, LintConfig};
use cfa_core::ir::Reg;
use cfa_core::prepared::PreparedProgram;
use cfa_core::protocol::{spawn_server, Client, ClientError, VerifierService, ADDR_ENV};
use cfa_core::prover::{seeded_nonce, Keys, Nonce, ProverConfig, DEFAULT_MAX_ILLEGAL};
use cfa_core::schemes::{size_report, write_csv};
use cfa_core::verifier::{verify, DataMode, Reason, Verdict, VerifyOptions, DEFAULT_BUDGET};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

const EXIT_REJECTED: u8 = 1;
const EXIT_LINT: u8 = 2;
const EXIT_EXHAUSTED: u8 = 3;
const EXIT_FAULT: u8 = 4;
const EXIT_ERROR: u8 = 5;

#[derive(Parser)]
#[command(name = "cfa", version, about = "Control-flow attestation lab")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the instrumentation plan, indirect target list and code-scan result.
    Instrument(InstrumentArgs),
    /// Run the prover and write the signed report.
    Attest(AttestArgs),
    /// Check a report and print the verdict.
    Verify(VerifyArgs),
    /// Compare authenticator sizes across schemes as CSV.
    Compare(CompareArgs),
    /// Run the verifier service.
    Serve(ServeArgs),
    /// Request a challenge, attest and submit the report to a running service.
    Challenge(ChallengeArgs),
    /// Write a random 48-byte key file.
    Keygen(KeygenArgs),
}

#[derive(Args)]
struct ProgramArgs {
    /// Program file, or `builtin:NAME` (crc32, syringe, dispatch, unique-U, scaling-K, alternating-K).
    program: String,
    /// Training inputs (`rK=V,...`) whose indirect destinations widen the target list.
    #[arg(long = "train", value_name = "INPUTS")]
    train: Vec<String>,
}

#[derive(Args)]
struct InstrumentArgs {
    #[command(flatten)]
    program: ProgramArgs,
    /// Emit the plan even when the code scan has findings.
    #[arg(long)]
    allow_dirty: bool,
    /// Reserved registers checked by the code scan.
    #[arg(long, value_delimiter = ',', default_value = "r10,r11")]
    reserved: Vec<String>,
}

#[derive(Args)]
struct NonceArgs {
    /// Challenge nonce as 32 hex digits; overrides `--seed`.
    #[arg(long)]
    nonce: Option<String>,
    /// Seed for the nonce (and any other randomness).
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct ExecArgs {
    /// Register inputs, `rK=V`.
    #[arg(long = "input", short = 'i', value_name = "rK=V")]
    inputs: Vec<String>,
    #[arg(long, default_value_t = DEFAULT_MAX_ILLEGAL)]
    max_illegal: usize,
    #[arg(long, default_value_t = DEFAULT_FUEL)]
    fuel: u64,
    /// Attack to apply, e.g. `loop-count-delta(inner_body,+7)`.
    #[arg(long)]
    attack: Option<AttackSpec>,
}

#[derive(Args)]
struct AttestArgs {
    #[command(flatten)]
    program: ProgramArgs,
    #[arg(long)]
    keys: PathBuf,
    #[command(flatten)]
    nonce: NonceArgs,
    #[command(flatten)]
    exec: ExecArgs,
    /// Where to write the report bytes.
    #[arg(long, short = 'o')]
    out: PathBuf,
}

#[derive(Args)]
struct SearchArgs {
    /// Inputs known to the verifier; when given, every register value is known.
    #[arg(long = "input", short = 'i', value_name = "rK=V")]
    inputs: Vec<String>,
    /// Treat every conditional branch as a free choice.
    #[arg(long, conflicts_with = "inputs")]
    cfg_only: bool,
    /// Maximum number of block entries explored.
    #[arg(long, default_value_t = DEFAULT_BUDGET)]
    budget: u64,
}

#[derive(Args)]
struct VerifyArgs {
    report: PathBuf,
    #[command(flatten)]
    program: ProgramArgs,
    #[arg(long)]
    keys: PathBuf,
    /// Output of `cfa instrument`; its digest must match and its target list is used.
    #[arg(long)]
    plan: Option<PathBuf>,
    #[command(flatten)]
    nonce: NonceArgs,
    #[command(flatten)]
    search: SearchArgs,
}

#[derive(Args)]
struct CompareArgs {
    /// Program files or `builtin:NAME`.
    #[arg(required = true)]
    programs: Vec<String>,
    /// Inputs for every program (builtins default to their own).
    #[arg(long = "input", short = 'i', value_name = "rK=V")]
    inputs: Vec<String>,
    #[arg(long, default_value_t = DEFAULT_FUEL)]
    fuel: u64,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, env = ADDR_ENV, default_value = "127.0.0.1:7878")]
    addr: String,
    #[arg(long)]
    keys: PathBuf,
    /// Programs to register (files or `builtin:NAME`).
    #[arg(long = "program", required = true)]
    programs: Vec<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// JSON-lines session log.
    #[arg(long)]
    log: Option<PathBuf>,
    #[command(flatten)]
    search: SearchArgs,
}

#[derive(Args)]
struct ChallengeArgs {
    #[command(flatten)]
    program: ProgramArgs,
    #[arg(long, env = ADDR_ENV, default_value = "127.0.0.1:7878")]
    addr: String,
    #[arg(long)]
    keys: PathBuf,
    #[command(flatten)]
    exec: ExecArgs,
    /// Also write the submitted report bytes here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct KeygenArgs {
    #[arg(long, short = 'o')]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
}

fn read_program(spec: &str) -> Result<(String, String, Inputs)> {
    if let Some(name) = spec.strip_prefix("builtin:") {
        let (text, inputs) = corpus::builtin(name).with_context(|| format!("unknown builtin program `{name}`"))?;
        return Ok((name.to_string(), text, inputs));
    }
    let text = fs::read_to_string(spec).with_context(|| format!("reading {spec}"))?;
    let name = Path::new(spec).file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| spec.to_string());
    Ok((name, text, Inputs::new()))
}

fn parse_inputs(items: &[String]) -> Result<Inputs> {
    let mut out = Inputs::new();
    for item in items {
        for part in item.split(',').filter(|p| !p.trim().is_empty()) {
            let (r, v) = parse_input(part).map_err(anyhow::Error::msg)?;
            out.insert(r, v);
        }
    }
    Ok(out)
}

fn parse_reg(s: &str) -> Result<Reg> {
    let (r, _) = parse_input(&format!("{s}=0")).map_err(anyhow::Error::msg)?;
    Ok(r)
}

fn prepare(args: &ProgramArgs) -> Result<(String, PreparedProgram, Inputs)> {
    let (name, text, defaults) = read_program(&args.program)?;
    let training: Vec<Inputs> = args.train.iter().map(|t| parse_inputs(std::slice::from_ref(t))).collect::<Result<_>>()?;
    let prepared = PreparedProgram::load(&text, &training).with_context(|| format!("loading {}", args.program))?;
    Ok((name, prepared, defaults))
}

fn read_keys(path: &Path) -> Result<Keys> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Keys::from_bytes(&bytes).with_context(|| format!("key file {}", path.display()))
}

fn resolve_nonce(args: &NonceArgs) -> Result<Nonce> {
    match &args.nonce {
        Some(h) => {
            let bytes = hex::decode(h).context("nonce must be hex")?;
            bytes.try_into().map_err(|_| anyhow::anyhow!("nonce must be 16 bytes"))
        }
        None => Ok(seeded_nonce(args.seed)),
    }
}

fn prover_config(exec: &ExecArgs) -> ProverConfig {
    ProverConfig {
        max_illegal: exec.max_illegal,
        run: RunOptions { fuel: exec.fuel, record_events: false, ..RunOptions::default() },
        ..ProverConfig::default()
    }
}

fn verify_options(search: &SearchArgs) -> Result<VerifyOptions> {
    let data = if search.cfg_only {
        DataMode::CfgOnly
    } else if search.inputs.is_empty() {
        DataMode::Constants
    } else {
        DataMode::Inputs(parse_inputs(&search.inputs)?)
    };
    Ok(VerifyOptions { data, budget: search.budget, ..VerifyOptions::default() })
}

fn verdict_exit(v: &Verdict) -> u8 {
    match v.reason {
        Reason::Ok => 0,
        Reason::SearchExhausted => EXIT_EXHAUSTED,
        _ => EXIT_REJECTED,
    }
}

fn print_json(v: &serde_json::Value) -> Result<()> {
    let mut out = io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, v)?;
    writeln!(out)?;
    Ok(())
}

fn cmd_instrument(args: InstrumentArgs) -> Result<u8> {
    let (_, p, _) = prepare(&args.program)?;
    let reserved: Vec<Reg> = args.reserved.iter().map(|r| parse_reg(r)).collect::<Result<_>>()?;
    let reserved: [Reg; 2] = reserved.try_into().map_err(|_| anyhow::anyhow!("--reserved takes exactly two registers"))?;
    let lint = scan_code(&p.cfg, &LintConfig { reserved });
    if !lint.clean && !args.allow_dirty {
        print_json(&json!({ "lint": lint }))?;
        return Ok(EXIT_LINT);
    }
    let itl: serde_json::Value = serde_json::from_str(&p.itl.to_json())?;
    print_json(&json!({
        "digest": hex::encode(p.digest()),
        "plan": p.plan.to_json_value(&p.cfg),
        "itl": itl,
        "lint": lint,
    }))?;
    Ok(0)
}

fn cmd_attest(args: AttestArgs) -> Result<u8> {
    let (_, p, defaults) = prepare(&args.program)?;
    let keys = read_keys(&args.keys)?;
    let nonce = resolve_nonce(&args.nonce)?;
    let inputs = if args.exec.inputs.is_empty() { defaults } else { parse_inputs(&args.exec.inputs)? };
    let config = prover_config(&args.exec);
    let run = match attest_with_attack(&p.attestation(&keys), nonce, &inputs, &config, args.exec.attack.as_ref()) {
        Ok(run) => run,
        Err(cfa_core::attack::AttackError::Prover(cfa_core::prover::ProverError::DirtyProgram(lint))) => {
            print_json(&json!({ "lint": lint }))?;
            return Ok(EXIT_LINT);
        }
        Err(e) => return Err(e.into()),
    };
    fs::write(&args.out, run.report.to_bytes()).with_context(|| format!("writing {}", args.out.display()))?;
    let r = &run.report;
    let counts: serde_json::Map<String, serde_json::Value> =
        r.trace.counts.iter().map(|(a, c)| (format!("{a:#010x}"), json!(c))).collect();
    print_json(&json!({
        "nonce": hex::encode(r.nonce),
        "counts": counts,
        "illegal": r.trace.illegal.iter().map(|a| format!("{a:#010x}")).collect::<Vec<_>>(),
        "m_f": format!("{:#010x}", r.m_f),
        "m_b": format!("{:#010x}", r.m_b),
        "fault": run.fault.as_ref().map(|f| f.code()),
        "report": args.out.display().to_string(),
    }))?;
    Ok(if run.fault.is_some() { EXIT_FAULT } else { 0 })
}

fn cmd_verify(args: VerifyArgs) -> Result<u8> {
    let (_, mut p, _) = prepare(&args.program)?;
    if let Some(plan_path) = &args.plan {
        let text = fs::read_to_string(plan_path).with_context(|| format!("reading {}", plan_path.display()))?;
        let doc: serde_json::Value = serde_json::from_str(&text).context("plan file is not JSON")?;
        if doc["digest"].as_str() != Some(hex::encode(p.digest()).as_str()) {
            bail!("plan {} was produced for a different program", plan_path.display());
        }
        p.itl = IndirectTargetList::from_json(&doc["itl"].to_string()).context("plan file target list")?;
    }
    let keys = read_keys(&args.keys)?;
    let nonce = resolve_nonce(&args.nonce)?;
    let bytes = fs::read(&args.report).with_context(|| format!("reading {}", args.report.display()))?;
    let report = cfa_core::AttestationReport::from_bytes(&bytes).context("decoding report")?;
    let verdict = verify(&report, &p.verifier(&keys, nonce, verify_options(&args.search)?));
    println!("{}", verdict.to_json());
    Ok(verdict_exit(&verdict))
}

fn cmd_compare(args: CompareArgs) -> Result<u8> {
    let keys = Keys::from_bytes(&[0u8; 48]).expect("fixed length");
    let mut reports = Vec::new();
    for spec in &args.programs {
        let (name, text, defaults) = read_program(spec)?;
        let p = PreparedProgram::load(&text, &[]).with_context(|| format!("loading {spec}"))?;
        let inputs = if args.inputs.is_empty() { defaults } else { parse_inputs(&args.inputs)? };
        let config = ProverConfig { run: RunOptions { fuel: args.fuel, ..RunOptions::default() }, ..ProverConfig::default() };
        let run = cfa_core::prover::execute(&p.attestation(&keys), [0; 16], &inputs, &config)?;
        if let Some(f) = run.fault {
            bail!("{spec}: execution fault {}", f.code());
        }
        reports.push(size_report(&name, &p.cfg, &p.dom, &run.log, &run.report.trace)?);
    }
    write_csv(io::stdout().lock(), &reports)?;
    Ok(0)
}

fn cmd_serve(args: ServeArgs) -> Result<u8> {
    let keys = read_keys(&args.keys)?;
    let options = verify_options(&args.search)?;
    let mut service = VerifierService::new(keys, args.seed);
    if let Some(log) = &args.log {
        service = service.with_log(log).with_context(|| format!("opening {}", log.display()))?;
    }
    for spec in &args.programs {
        let (name, text, _) = read_program(spec)?;
        let p = PreparedProgram::load(&text, &[]).with_context(|| format!("loading {spec}"))?;
        let digest = service.register(p, options.clone());
        println!("registered {name} {}", hex::encode(digest));
    }
    let (addr, handle) = spawn_server(args.addr.as_str(), Arc::new(service)).with_context(|| format!("binding {}", args.addr))?;
    println!("listening on {addr}");
    io::stdout().flush()?;
    handle.join().map_err(|_| anyhow::anyhow!("server thread panicked"))??;
    Ok(0)
}

fn cmd_challenge(args: ChallengeArgs) -> Result<u8> {
    let (_, p, defaults) = prepare(&args.program)?;
    let keys = read_keys(&args.keys)?;
    let inputs = if args.exec.inputs.is_empty() { defaults } else { parse_inputs(&args.exec.inputs)? };
    let mut client = Client::connect(args.addr.as_str()).with_context(|| format!("connecting to {}", args.addr))?;
    let server_error = |e: ClientError| -> Result<u8> {
        match e {
            ClientError::Server { code, message } => {
                println!("{}", json!({ "error": code, "message": message }));
                Ok(EXIT_REJECTED)
            }
            other => Err(other.into()),
        }
    };
    let challenge = match client.challenge(&p.digest()) {
        Ok(c) => c,
        Err(e) => return server_error(e),
    };
    let run = attest_with_attack(&p.attestation(&keys), challenge.nonce, &inputs, &prover_config(&args.exec), args.exec.attack.as_ref())?;
    let bytes = run.report.to_bytes();
    if let Some(out) = &args.out {
        fs::write(out, &bytes).with_context(|| format!("writing {}", out.display()))?;
    }
    match client.submit_bytes(&bytes) {
        Ok(remote) => {
            println!("{}", remote.json);
            Ok(verdict_exit(&remote.verdict))
        }
        Err(e) => server_error(e),
    }
}

fn cmd_keygen(args: KeygenArgs) -> Result<u8> {
    use rand::SeedableRng;
    let keys = match args.seed {
        Some(s) => Keys::random(&mut rand_chacha::ChaCha20Rng::seed_from_u64(s)),
        None => Keys::random(&mut rand::rngs::OsRng),
    };
    fs::write(&args.out, keys.to_bytes()).with_context(|| format!("writing {}", args.out.display()))?;
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Instrument(a) => cmd_instrument(a),
        Command::Attest(a) => cmd_attest(a),
        Command::Verify(a) => cmd_verify(a),
        Command::Compare(a) => cmd_compare(a),
        Command::Serve(a) => cmd_serve(a),
        Command::Challenge(a) => cmd_challenge(a),
        Command::Keygen(a) => cmd_keygen(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_ERROR)
        }
    }
}
