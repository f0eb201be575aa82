//! `sq8`: run three-party secure inference on SQ8 models.
//!
//! Exit codes: 0 success, 1 verification mismatch, 2 configuration error,
//! 3 transport error. Failures print one JSON object to stderr:
//! `{"error":{"kind":"...","message":"...","exit_code":N}}`.

mod bench;
mod config;

use std::io::Write;
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::rngs::OsRng;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use sq8_core::engine::{self, InferenceReport};
use sq8_core::model::{InputImage, Sq8Model};
use sq8_core::oracle::reference::{golden_bytes, golden_file_name};
use sq8_core::oracle::{reference_infer, Inference};
use sq8_core::session::PartySession;
use sq8_core::shared::{deal, SharedModel};
use sq8_core::transport::{connect_tcp, local_mesh, loopback_tcp_mesh, Handshake, PROTOCOL_VERSION};
use sq8_core::trunc::TruncKind;
use sq8_core::{fixture, PartyId, Ring, SessionSeeds};

use config::NetConfig;

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub kind: String,
    pub message: String,
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        CliError {
            code: 2,
            kind: "config".into(),
            message: message.into(),
        }
    }

    fn mismatch(message: impl Into<String>) -> Self {
        CliError {
            code: 1,
            kind: "verification_mismatch".into(),
            message: message.into(),
        }
    }

    fn to_json(&self) -> serde_json::Value {
        json!({"error": {"kind": self.kind, "message": self.message, "exit_code": self.code}})
    }
}

impl From<sq8_core::Error> for CliError {
    fn from(e: sq8_core::Error) -> Self {
        use sq8_core::Error as E;
        let code = match e {
            E::Transport { .. } | E::Framing(_) => 3,
            E::Consistency(_) => 1,
            _ => 2,
        };
        CliError {
            code,
            kind: e.kind().into(),
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError {
            code: 2,
            kind: "io".into(),
            message: e.to_string(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Deserialize, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Probabilistic truncation with the dealer-assisted protocol (default)
    Prob,
    /// Probabilistic truncation from shared random bits
    Pr,
    /// Same as `prob`
    Prsp,
    /// Exact floor truncation; bit-identical to the reference
    Exact,
}

impl Mode {
    fn kind(self) -> TruncKind {
        match self {
            Mode::Prob | Mode::Prsp => TruncKind::SpecialProbabilistic,
            Mode::Pr => TruncKind::Probabilistic,
            Mode::Exact => TruncKind::Exact,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Proto {
    Pr,
    Prsp,
    Exact,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum FixtureKind {
    /// conv, conv, max pool, fully connected
    Conv,
    /// depthwise, pointwise, average pool, max pool, reshape, fully connected
    Mixed,
}

#[derive(Parser)]
#[command(name = "sq8", version, about = "Three-party secure inference for quantized CNNs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Copy)]
struct Determinism {
    /// Derive all randomness from --seed. Reproducible and NOT secure.
    #[arg(long)]
    insecure_deterministic: bool,
    /// Master seed; requires --insecure-deterministic
    #[arg(long, requires = "insecure_deterministic")]
    seed: Option<u64>,
}

impl Determinism {
    fn seed(self) -> Result<u64, CliError> {
        match (self.insecure_deterministic, self.seed) {
            (true, Some(s)) => Ok(s),
            (true, None) => Err(CliError::config("--insecure-deterministic needs --seed")),
            (false, _) => Ok(OsRng.next_u64()),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Split a model into three per-party share files
    ShareModel {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        /// Ring width; defaults to the model header's value
        #[arg(long)]
        k: Option<u32>,
        #[command(flatten)]
        det: Determinism,
    },
    /// Run one party over TCP; prints the label, then a JSON report
    RunParty {
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=3))]
        id: u8,
        #[arg(long)]
        config: PathBuf,
        /// Directory written by share-model
        #[arg(long)]
        shares: PathBuf,
        /// Input image; required for party 1, ignored elsewhere
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long, value_enum)]
        mode: Option<Mode>,
        /// Take PRG seeds from the config's [seeds] table. NOT secure.
        #[arg(long)]
        insecure_deterministic: bool,
    },
    /// Run all three parties in this process; prints the label
    RunLocal {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value = "prob")]
        mode: Mode,
        #[arg(long)]
        k: Option<u32>,
        /// Connect the parties over loopback TCP instead of in-memory channels
        #[arg(long)]
        tcp: bool,
        /// After the label, print each party's report as one JSON line
        #[arg(long)]
        json: bool,
        #[command(flatten)]
        det: Determinism,
    },
    /// Compare exact-mode secure inference with the reference, layer by layer
    Verify {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        /// Also write the reference activations as a golden dump here
        #[arg(long)]
        dump_dir: Option<PathBuf>,
        #[command(flatten)]
        det: Determinism,
    },
    /// Microbenchmarks, CSV on stdout
    Bench {
        #[command(subcommand)]
        which: BenchCommand,
    },
    /// Write a random fixture model
    GenModel {
        #[arg(long, value_enum, default_value = "conv")]
        kind: FixtureKind,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Also write the JSON form next to it
        #[arg(long)]
        json: bool,
    },
    /// Write a random input image for a model
    GenInput {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum BenchCommand {
    /// Sums of products: bytes and time for COUNT dot products of LENGTH terms
    Sops {
        #[arg(long, value_delimiter = ',', default_value = "1000")]
        count: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "256,1024")]
        length: Vec<usize>,
        #[arg(long, default_value_t = 72)]
        k: u32,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Truncation cost against the ring width
    Trunc {
        #[arg(long, value_enum)]
        proto: Proto,
        #[arg(long, value_delimiter = ',', default_value = "16,32,64")]
        k_list: Vec<u32>,
        #[arg(long, default_value_t = 8)]
        shift: u32,
        #[arg(long, default_value_t = 1000)]
        count: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

/// Loads a file through `load`, naming the path in any error.
fn load<T>(path: &Path, load: impl FnOnce(&Path) -> sq8_core::Result<T>) -> Result<T, CliError> {
    load(path).map_err(|e| {
        let mut err = CliError::from(e);
        err.message = format!("{}: {}", path.display(), err.message);
        err
    })
}

pub fn share_file(dir: &Path, party: PartyId) -> PathBuf {
    dir.join(format!("party{}.sq8s", party.id()))
}

fn model_ring(model: &Sq8Model, k: Option<u32>) -> Result<Ring, CliError> {
    let ring = Ring::new(k.unwrap_or(model.header.ring_bits))?;
    model.check_ring(ring)?;
    Ok(ring)
}

fn share_model(model: &Path, out_dir: &Path, k: Option<u32>, det: Determinism) -> Result<(), CliError> {
    let model = load(model, Sq8Model::load)?;
    let ring = model_ring(&model, k)?;
    let shares = deal(&model, ring, &mut ChaCha20Rng::seed_from_u64(det.seed()?))?;
    std::fs::create_dir_all(out_dir)?;
    let mut files = Vec::new();
    for s in &shares {
        let p = share_file(out_dir, s.party);
        s.save(&p)?;
        files.push(p.display().to_string());
    }
    println!("{}", json!({"ring_bits": ring.bits(), "files": files}));
    Ok(())
}

fn print_report(label: usize, reports: &[&InferenceReport]) -> Result<(), CliError> {
    let mut out = std::io::stdout().lock();
    writeln!(out, "{label}")?;
    for r in reports {
        writeln!(out, "{}", serde_json::to_string(r).expect("report serializes"))?;
    }
    Ok(())
}

fn run_party(
    id: u8,
    config: &Path,
    shares_dir: &Path,
    input: Option<&Path>,
    mode: Option<Mode>,
    insecure_deterministic: bool,
) -> Result<(), CliError> {
    let me = PartyId::new(id)?;
    let cfg = NetConfig::load(config)?;
    let master = cfg.master_seed(insecure_deterministic)?;
    let mode = mode.or(cfg.mode).unwrap_or(Mode::Prob);
    let shares = load(&share_file(shares_dir, me), SharedModel::load)?;
    if shares.party != me {
        return Err(CliError::config(format!("share file belongs to {}, not {me}", shares.party)));
    }
    if let Some(k) = cfg.k {
        if k != shares.ring.bits() {
            return Err(CliError::config(format!("config k = {k}, shares use {}", shares.ring.bits())));
        }
    }
    let image = match (me, input) {
        (PartyId::P1, Some(p)) => Some(load(p, InputImage::load)?),
        (PartyId::P1, None) => return Err(CliError::config("party 1 owns the input: pass --input")),
        _ => None,
    };
    let listener = TcpListener::bind(cfg.parties[me.index()])
        .map_err(|e| CliError::from(sq8_core::Error::Transport { peer: me, message: format!("bind: {e}") }))?;
    let handshake = Handshake {
        party: me,
        ring_bits: shares.ring.bits(),
        version: PROTOCOL_VERSION,
    };
    let net = connect_tcp(listener, &cfg.parties, handshake, cfg.timeout())?;
    let mut sess = match master {
        Some(m) => PartySession::new(shares.ring, net, &SessionSeeds::from_master(m)),
        None => PartySession::with_random_setup(shares.ring, net)?,
    };
    let report = engine::run_party(&mut sess, &shares, image.as_ref(), mode.kind(), false)?;
    print_report(report.label, &[&report])
}

fn run_local(model: &Path, input: &Path, mode: Mode, k: Option<u32>, tcp: bool, json: bool, det: Determinism) -> Result<(), CliError> {
    let model = load(model, Sq8Model::load)?;
    let image = load(input, InputImage::load)?;
    let ring = model_ring(&model, k)?;
    let nets = if tcp { loopback_tcp_mesh(ring.bits())? } else { local_mesh() };
    let reports = engine::run_local_inference(&model, &image, ring, mode.kind(), det.seed()?, false, nets)?;
    if reports.iter().any(|r| r.label != reports[0].label) {
        return Err(CliError::mismatch("parties opened different labels"));
    }
    let shown: Vec<&InferenceReport> = if json { reports.iter().collect() } else { Vec::new() };
    print_report(reports[0].label, &shown)
}

fn first_differences(want: &Inference, got: &[Vec<u8>], limit: usize) -> Vec<serde_json::Value> {
    let mut out = Vec::new();
    for (layer, (w, g)) in want.activations.iter().zip(got).enumerate() {
        if w.len() != g.len() {
            out.push(json!({"layer": layer, "reference_len": w.len(), "secure_len": g.len()}));
        }
        for (i, (a, b)) in w.iter().zip(g).enumerate() {
            if a != b && out.len() < limit {
                out.push(json!({"layer": layer, "index": i, "reference": a, "secure": b}));
            }
        }
    }
    out
}

fn verify(model: &Path, input: &Path, dump_dir: Option<&Path>, det: Determinism) -> Result<(), CliError> {
    let model = load(model, Sq8Model::load)?;
    let image = load(input, InputImage::load)?;
    let want = reference_infer(&model, &image)?;
    if let Some(dir) = dump_dir {
        std::fs::create_dir_all(dir)?;
        let bytes = golden_bytes(&want);
        std::fs::write(dir.join(golden_file_name(&bytes)), &bytes)?;
    }
    let ring = model_ring(&model, None)?;
    let reports = engine::run_local_inference(&model, &image, ring, TruncKind::Exact, det.seed()?, true, local_mesh())?;
    let got = reports[0].activations.as_deref().unwrap_or_default();
    let mut diffs = first_differences(&want, got, 20);
    if got.len() != want.activations.len() {
        diffs.push(json!({"reference_layers": want.activations.len(), "secure_layers": got.len()}));
    }
    let labels_agree = reports.iter().all(|r| r.label == want.label);
    let identical = diffs.is_empty() && labels_agree && reports.iter().all(|r| r.activations == reports[0].activations);
    println!(
        "{}",
        json!({
            "identical": identical,
            "reference_label": want.label,
            "secure_labels": reports.iter().map(|r| r.label).collect::<Vec<_>>(),
            "layers": want.activations.len(),
            "differences": diffs,
        })
    );
    if identical {
        Ok(())
    } else {
        Err(CliError::mismatch("secure activations differ from the reference"))
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::ShareModel { model, out_dir, k, det } => share_model(&model, &out_dir, k, det),
        Command::RunParty {
            id,
            config,
            shares,
            input,
            mode,
            insecure_deterministic,
        } => run_party(id, &config, &shares, input.as_deref(), mode, insecure_deterministic),
        Command::RunLocal {
            model,
            input,
            mode,
            k,
            tcp,
            json,
            det,
        } => run_local(&model, &input, mode, k, tcp, json, det),
        Command::Verify {
            model,
            input,
            dump_dir,
            det,
        } => verify(&model, &input, dump_dir.as_deref(), det),
        Command::Bench { which } => {
            let mut out = std::io::stdout().lock();
            match which {
                BenchCommand::Sops { count, length, k, seed } => bench::write_sops(&mut out, &count, &length, k, seed),
                BenchCommand::Trunc {
                    proto,
                    k_list,
                    shift,
                    count,
                    seed,
                } => {
                    let (name, kind) = match proto {
                        Proto::Pr => ("pr", TruncKind::Probabilistic),
                        Proto::Prsp => ("prsp", TruncKind::SpecialProbabilistic),
                        Proto::Exact => ("exact", TruncKind::Exact),
                    };
                    bench::write_trunc(&mut out, name, kind, &k_list, shift, count, seed)
                }
            }
        }
        Command::GenModel { kind, seed, out, json } => {
            let model = match kind {
                FixtureKind::Conv => fixture::random_model(seed),
                FixtureKind::Mixed => fixture::random_mixed_model(seed),
            };
            model.save(&out)?;
            if json {
                std::fs::write(out.with_extension("json"), model.to_json()?)?;
            }
            Ok(())
        }
        Command::GenInput { model, seed, out } => {
            let model = load(&model, Sq8Model::load)?;
            fixture::random_input(&model, seed).save(&out)?;
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => CliError::config(e.to_string().trim().to_string()).exit(),
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => e.exit(),
    }
}

impl CliError {
    fn exit(self) -> ! {
        eprintln!("{}", self.to_json());
        std::process::exit(self.code as i32)
    }
}
