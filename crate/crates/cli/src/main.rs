//! `zooc`: run and check composition programs, manage the package store,
//! publish and serve services, query the discovery registry and run the
//! benchmark suite.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;
use zoo_core::bench::BenchError;
use zoo_core::discovery::DiscoveryError;
use zoo_core::dsl::DslError;
use zoo_core::publish::{BackendKind, InvokeError, PublishError};
use zoo_core::runtime::ExecError;
use zoo_core::service::DataType;
use zoo_core::store::{StoreError, VersionRef};
use zoo_core::typecheck::TypecheckError;

use crate::config::{CliConfig, Overrides};

#[derive(Debug, Parser)]
#[command(name = "zooc", version, about = "Compose, publish and serve typed services")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct GlobalArgs {
    /// Package store root [env: ZOOC_STORE]
    #[arg(long, global = true, value_name = "PATH")]
    store: Option<PathBuf>,
    /// Discovery registry base URL [env: ZOOC_REGISTRY]
    #[arg(long, global = true, value_name = "URL")]
    registry: Option<String>,
    /// Upstream package source, URL or directory [env: ZOOC_REMOTE]
    #[arg(long, global = true, value_name = "URL|DIR")]
    remote: Option<String>,
    /// Seconds a cached `latest` answer stays fresh [env: ZOOC_TTL]
    #[arg(long, global = true, value_name = "SECS")]
    ttl: Option<u64>,
    /// error, warn, info, debug or trace
    #[arg(long, global = true, value_name = "LEVEL")]
    log_level: Option<String>,
    /// Machine-readable output
    #[arg(long, global = true)]
    json: bool,
}

/// `<gist-ref>#<name>`
#[derive(Debug, Clone)]
pub struct ServiceRef {
    pub package: VersionRef,
    pub name: String,
}

fn parse_service_ref(s: &str) -> Result<ServiceRef, String> {
    let (r, name) = s
        .rsplit_once('#')
        .ok_or_else(|| format!("expected <gist-ref>#<name>, got `{s}`"))?;
    if name.is_empty() {
        return Err(format!("missing service name after `#` in `{s}`"));
    }
    let package = r.parse::<VersionRef>().map_err(|e| e.to_string())?;
    Ok(ServiceRef {
        package,
        name: name.to_string(),
    })
}

fn parse_version_ref(s: &str) -> Result<VersionRef, String> {
    s.parse().map_err(|e: StoreError| e.to_string())
}

fn parse_backend(s: &str) -> Result<BackendKind, String> {
    s.parse().map_err(|e: PublishError| e.to_string())
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Evaluate a program, publishing its deployments
    Run {
        file: PathBuf,
        /// Where published artifacts are written
        #[arg(long, default_value = "zoo-out")]
        out: PathBuf,
    },
    /// Parse and type-check a program without publishing
    Check { file: PathBuf },
    /// Publish one service to a backend
    Publish {
        #[arg(value_name = "GIST-REF#NAME", value_parser = parse_service_ref)]
        service: ServiceRef,
        #[arg(long, value_parser = parse_backend)]
        backend: BackendKind,
        #[arg(long)]
        target: String,
        #[arg(long, default_value = "zoo-out")]
        out: PathBuf,
        /// Also record the service in the discovery registry
        #[arg(long)]
        register: bool,
        #[arg(long, default_value = "")]
        description: String,
    },
    /// Serve a script bundle or container directory over HTTP
    ServeBundle {
        path: PathBuf,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
    },
    /// Serve a service straight from the store over HTTP
    Serve {
        #[arg(value_name = "GIST-REF#NAME", value_parser = parse_service_ref)]
        service: ServiceRef,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
    },
    /// Start the discovery registry
    Registry {
        #[arg(long, default_value_t = 8700)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Record log (default: registry.log beside the store)
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Search the discovery registry by type and text
    Discover {
        #[arg(long)]
        input: Option<DataType>,
        #[arg(long)]
        output: Option<DataType>,
        #[arg(long)]
        q: Option<String>,
    },
    /// Run the microbenchmark suite
    Bench(commands::BenchArgs),
    /// Package store operations
    #[command(subcommand)]
    Pkg(PkgCommand),
}

#[derive(Debug, Subcommand)]
enum PkgCommand {
    /// Publish the files of a directory as a new package version
    Publish {
        dir: PathBuf,
        #[arg(long)]
        gid: Option<String>,
        /// Plain library: no zoo.json required
        #[arg(long)]
        library: bool,
    },
    /// Resolve a reference and list the package files
    Resolve {
        #[arg(value_parser = parse_version_ref)]
        reference: VersionRef,
    },
    /// List cached packages and their versions
    List,
    /// Publish the built-in example packages
    Seed,
    /// Serve the store to other stores over HTTP
    Serve {
        #[arg(long, default_value_t = 8600)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
    },
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}:{}", .1.display(), .0)]
    Program(DslError, PathBuf),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Typecheck(#[from] TypecheckError),
    #[error(transparent)]
    Publish(#[from] PublishError),
    #[error(transparent)]
    Exec(#[from] ExecError),
    #[error(transparent)]
    Discovery(#[from] DiscoveryError),
    #[error(transparent)]
    Bench(#[from] BenchError),
    #[error(transparent)]
    Invoke(#[from] InvokeError),
    #[error("package {package} has no service `{name}`")]
    NoSuchService { package: String, name: String },
    #[error("no discovery registry configured (use --registry or ZOOC_REGISTRY)")]
    NoRegistry,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let g = cli.global;
    let flags = Overrides {
        store: g.store,
        registry: g.registry,
        remote: g.remote,
        ttl: g.ttl,
        log_level: g.log_level,
    };
    let result = CliConfig::load(flags).and_then(|cfg| {
        env_logger::Builder::new()
            .parse_filters(&cfg.log_level)
            .format_timestamp(None)
            .init();
        commands::dispatch(cli.command, &cfg, g.json)
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
