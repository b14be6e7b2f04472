mod analyze;
mod node;
mod sim;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::Serialize;
use std::error::Error;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use loopmix::topology::{generate_network, NetworkShape};
use loopmix::vectors::{default_vectors, verify_vector, VectorFile};

pub type CliResult = Result<(), Box<dyn Error>>;

#[derive(Parser)]
#[command(name = "loopmix", version, about = "Continuous-time mix network nodes, simulations and calculators")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a mix node.
    Mix(node::MixArgs),
    /// Run a provider.
    Provider(node::ProviderArgs),
    /// Run a client.
    Client(node::ClientArgs),
    /// Discrete-event simulations.
    #[command(subcommand)]
    Sim(sim::SimCommand),
    /// Closed-form calculators.
    #[command(subcommand)]
    Analyze(analyze::AnalyzeCommand),
    /// Emit or check packet test vectors.
    Vectors(VectorsArgs),
    /// Generate a directory and matching secrets file.
    GenDirectory(GenDirectoryArgs),
}

#[derive(Args)]
struct VectorsArgs {
    /// Write vectors here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Verify an existing vector file instead of emitting one.
    #[arg(long, conflicts_with = "out")]
    check: Option<PathBuf>,
}

#[derive(Args)]
struct GenDirectoryArgs {
    #[arg(long, default_value_t = 3)]
    layers: usize,
    #[arg(long, default_value_t = 2)]
    per_layer: usize,
    #[arg(long, default_value_t = 4)]
    providers: usize,
    #[arg(long, default_value_t = 4)]
    clients: usize,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    /// Nodes listen on consecutive ports from here.
    #[arg(long, default_value_t = 9000)]
    base_port: u16,
    #[arg(long)]
    seed: Option<u64>,
    /// Writes directory.toml and secrets.toml into this directory.
    #[arg(long)]
    out_dir: PathBuf,
}

pub fn rng_from(seed: Option<u64>) -> ChaCha20Rng {
    match seed {
        Some(s) => ChaCha20Rng::seed_from_u64(s),
        None => ChaCha20Rng::from_os_rng(),
    }
}

pub fn print_json(value: &impl Serialize) -> CliResult {
    println!("{}", serde_json::to_string(value)?);
    Ok(())
}

pub fn write_file(path: &Path, contents: &str) -> CliResult {
    std::fs::write(path, contents).map_err(|e| format!("cannot write {}: {e}", path.display()))?;
    Ok(())
}

fn vectors(args: VectorsArgs) -> CliResult {
    if let Some(path) = args.check {
        let text = std::fs::read_to_string(&path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
        let file = VectorFile::from_toml_str(&text)?;
        for v in &file.vector {
            verify_vector(v)?;
        }
        return print_json(&serde_json::json!({ "verified": file.vector.len() }));
    }
    let text = default_vectors().to_toml_string();
    match args.out {
        Some(path) => write_file(&path, &text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn gen_directory(args: GenDirectoryArgs) -> CliResult {
    if args.layers == 0 || args.per_layer == 0 || args.providers == 0 {
        return Err("need at least one layer, one mix per layer and one provider".into());
    }
    let shape = NetworkShape {
        layers: args.layers,
        per_layer: args.per_layer,
        providers: args.providers,
        clients: args.clients,
    };
    let mut port = args.base_port;
    let mut next_addr = |_: &str| {
        let a = format!("{}:{port}", args.host);
        port = port.wrapping_add(1);
        a
    };
    let (topology, secrets) = generate_network(shape, &mut next_addr, &mut rng_from(args.seed));
    std::fs::create_dir_all(&args.out_dir)?;
    write_file(&args.out_dir.join("directory.toml"), &topology.to_toml_string())?;
    write_file(&args.out_dir.join("secrets.toml"), &secrets.to_toml_string())?;
    print_json(&serde_json::json!({
        "mixes": topology.n_mixes(),
        "providers": topology.providers.len(),
        "clients": topology.clients.len(),
    }))
}

fn run(cli: Cli) -> CliResult {
    match cli.command {
        Command::Mix(a) => node::mix(a),
        Command::Provider(a) => node::provider(a),
        Command::Client(a) => node::client(a),
        Command::Sim(c) => sim::run(c),
        Command::Analyze(c) => analyze::run(c),
        Command::Vectors(a) => vectors(a),
        Command::GenDirectory(a) => gen_directory(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("LOOPMIX_LOG", "warn")).init();
    // Usage errors exit with status 2 from inside `parse`.
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
