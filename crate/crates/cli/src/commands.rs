use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use clap::Args;
use log::info;
use serde_json::{json, Value as Json};
use zoo_core::bench::{self, BenchConfig, BenchResult};
use zoo_core::discovery::{serve_registry, DiscoveryRecord, Query, Registry, RegistryClient, StoredRecord};
use zoo_core::dsl::{self, Env, Value};
use zoo_core::http::ServerHandle;
use zoo_core::publish::{
    self, artifact_size_report, load_bundle, size_report_csv, BackendKind, BackendSpec, Publisher,
};
use zoo_core::runtime::PrimitiveRegistry;
use zoo_core::service::Service;
use zoo_core::store::{serve_packages, DirRemote, Files, HttpRemote, PackageRepo, PackageStore, VersionRef};
use zoo_core::typecheck::create_service;
use zoo_core::usecase;

use crate::config::CliConfig;
use crate::{CliError, Command, PkgCommand, ServiceRef};

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// `all` or a comma-separated list (map, fold, gd_sin, gd_cubic, conv_toy, invoke)
    #[arg(long, default_value = "all")]
    suite: String,
    /// CSV destination; printed to stdout when omitted
    #[arg(long)]
    out: Option<PathBuf>,
    /// Log-log SVG chart destination
    #[arg(long)]
    plot: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    trials: usize,
    #[arg(long, default_value_t = 3)]
    warmup: usize,
    /// Smallest array length as a power of ten
    #[arg(long, default_value_t = 1)]
    min_exp: u32,
    /// Largest array length as a power of ten
    #[arg(long, default_value_t = 6)]
    max_exp: u32,
    #[arg(long, default_value_t = 4)]
    per_decade: u32,
    /// Report the log-log slope of map timings
    #[arg(long)]
    fit: bool,
    /// Also publish the example pipeline to every backend and write the
    /// artifact sizes to this CSV
    #[arg(long)]
    artifacts: Option<PathBuf>,
}

pub fn dispatch(cmd: Command, cfg: &CliConfig, json: bool) -> Result<(), CliError> {
    let out = Out { json };
    match cmd {
        Command::Run { file, out: dir } => {
            let store = open_store(cfg)?;
            let publisher = Publisher::new(&store, dir);
            let env = eval_file(&file, &store, Some(&publisher))?;
            out.env(&env);
        }
        Command::Check { file } => {
            let store = open_store(cfg)?;
            let env = eval_file(&file, &store, None)?;
            out.env(&env);
        }
        Command::Publish {
            service,
            backend,
            target,
            out: dir,
            register,
            description,
        } => {
            let store = open_store(cfg)?;
            let s = lookup(&store, &service)?;
            let spec = BackendSpec::new(backend, target)?;
            let art = Publisher::new(&store, dir).publish(&s, &spec)?;
            let mut id = None;
            if register {
                let url = cfg.registry_url.as_deref().ok_or(CliError::NoRegistry)?;
                let rec = DiscoveryRecord::new(
                    &service.package.gid,
                    &description,
                    &s.type_string(),
                    &art.uri,
                    unix_now(),
                );
                id = Some(RegistryClient::new(url).register(&rec)?);
            }
            if out.json {
                out.value(&json!({
                    "uri": art.uri,
                    "backend": art.kind.as_str(),
                    "path": art.output_path,
                    "type": s.type_string(),
                    "record_id": id,
                }));
            } else {
                println!("{}", art.uri);
                if let Some(id) = id {
                    println!("registered as record {id}");
                }
            }
        }
        Command::ServeBundle { path, port, host } => {
            let bundle = load_bundle(&path)?;
            let reg = PrimitiveRegistry::builtin();
            bundle.verify(&reg)?;
            let h = publish::serve(bundle.service, reg, &format!("{host}:{port}")).map_err(io_at(&path))?;
            block_on(h, &out);
        }
        Command::Serve { service, port, host } => {
            let store = open_store(cfg)?;
            let s = lookup(&store, &service)?;
            let h = publish::serve(s, PrimitiveRegistry::builtin(), &format!("{host}:{port}"))
                .map_err(io_at(Path::new(&host)))?;
            block_on(h, &out);
        }
        Command::Registry { port, host, data } => {
            let data = data.unwrap_or_else(|| cfg.registry_data());
            if let Some(dir) = data.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).map_err(io_at(dir))?;
            }
            let reg = Registry::file(&data)?;
            info!("loaded {} records from {}", reg.len(), data.display());
            let h = serve_registry(Arc::new(reg), &format!("{host}:{port}")).map_err(io_at(&data))?;
            block_on(h, &out);
        }
        Command::Discover { input, output, q } => {
            let url = cfg.registry_url.as_deref().ok_or(CliError::NoRegistry)?;
            let query = Query { input, output, text: q };
            out.records(&RegistryClient::new(url).search(&query)?);
        }
        Command::Bench(args) => bench_cmd(&args, &out)?,
        Command::Pkg(p) => pkg(p, cfg, &out)?,
    }
    Ok(())
}

fn pkg(cmd: PkgCommand, cfg: &CliConfig, out: &Out) -> Result<(), CliError> {
    let store = open_store(cfg)?;
    match cmd {
        PkgCommand::Publish { dir, gid, library } => {
            let files = read_dir_files(&dir)?;
            let r = store.publish_package(files, gid.as_deref(), !library)?;
            if out.json {
                out.value(&json!({ "gid": r.gid, "vid": r.vid() }));
            } else {
                println!("{r}");
            }
        }
        PkgCommand::Resolve { reference } => {
            let m = store.fetch(&reference)?;
            if out.json {
                let files: Vec<Json> = m
                    .files
                    .iter()
                    .map(|(name, bytes)| json!({ "name": name, "bytes": bytes.len() }))
                    .collect();
                out.value(&json!({
                    "gid": m.gid,
                    "vid": m.vid,
                    "content_hash": m.content_hash(),
                    "fetched_at": m.fetched_at,
                    "files": files,
                }));
            } else {
                println!("{}", m.version_ref());
                println!("hash {}", m.content_hash());
                for (name, bytes) in &m.files {
                    println!("{name}\t{}", bytes.len());
                }
            }
        }
        PkgCommand::List => {
            let rows: Vec<(String, Vec<String>)> = store
                .packages()
                .into_iter()
                .map(|g| (g.clone(), store.versions(&g)))
                .collect();
            if out.json {
                out.value(&json!(rows
                    .iter()
                    .map(|(g, vs)| json!({ "gid": g, "versions": vs }))
                    .collect::<Vec<_>>()));
            } else {
                for (g, vs) in rows {
                    println!("{g}\t{}", vs.join(" "));
                }
            }
        }
        PkgCommand::Seed => {
            let refs = usecase::seed(&store)?;
            if out.json {
                let map: serde_json::Map<String, Json> =
                    refs.iter().map(|(g, r)| (g.clone(), json!(r.to_string()))).collect();
                out.value(&Json::Object(map));
            } else {
                for r in refs.values() {
                    println!("{r}");
                }
            }
        }
        PkgCommand::Serve { port, host } => {
            let root = store.root().to_path_buf();
            let h = serve_packages(Arc::new(store), &format!("{host}:{port}")).map_err(io_at(&root))?;
            block_on(h, out);
        }
    }
    Ok(())
}

fn bench_cmd(args: &BenchArgs, out: &Out) -> Result<(), CliError> {
    if args.min_exp > args.max_exp || args.per_decade == 0 {
        return Err(CliError::Config(
            "need --min-exp <= --max-exp and --per-decade > 0".into(),
        ));
    }
    let cfg = BenchConfig {
        workloads: bench::parse_suite(&args.suite)?,
        sizes: bench::log_sizes(args.min_exp, args.max_exp, args.per_decade),
        trials: args.trials,
        warmup: args.warmup,
        ..BenchConfig::default()
    };
    let results = bench::run_suite(&cfg)?;
    let csv = bench::to_csv(&results);
    match &args.out {
        Some(p) => write_file(p, csv.as_bytes())?,
        None if !out.json => print!("{csv}"),
        None => {}
    }
    if let Some(p) = &args.plot {
        write_file(p, bench::plot_svg(&results).as_bytes())?;
    }
    let fit = if args.fit {
        let map: Vec<BenchResult> = results.iter().filter(|r| r.workload == "map").cloned().collect();
        Some(bench::scaling_fit(&map)?)
    } else {
        None
    };
    let sizes = match &args.artifacts {
        Some(p) => {
            let rows = artifact_sizes()?;
            write_file(p, size_report_csv(&rows).as_bytes())?;
            rows
        }
        None => Vec::new(),
    };
    if out.json {
        let rows: Vec<Json> = results
            .iter()
            .map(|r| {
                json!({
                    "workload": r.workload, "param": r.param, "trials": r.trials,
                    "mean_ns": r.mean_ns, "std_ns": r.std_ns,
                })
            })
            .collect();
        out.value(&json!({
            "results": rows,
            "fit": fit.map(|f| json!({ "slope": f.slope, "intercept": f.intercept, "r2": f.r2 })),
            "artifacts": sizes.iter().map(|r| json!({ "backend": r.backend.as_str(), "bytes": r.bytes })).collect::<Vec<_>>(),
        }));
    } else {
        if let Some(p) = &args.out {
            eprintln!("wrote {} rows to {}", results.len(), p.display());
        }
        if let Some(f) = fit {
            println!("map scaling: slope {:.3}, R^2 {:.4}", f.slope, f.r2);
        }
        for r in &sizes {
            println!("{}\t{} bytes", r.backend, r.bytes);
        }
    }
    Ok(())
}

/// Publishes the example pipeline to each backend in a scratch directory.
fn artifact_sizes() -> Result<Vec<publish::SizeRow>, CliError> {
    let repo = zoo_core::store::MemoryStore::new();
    usecase::seed(&repo)?;
    let env = dsl::check(usecase::PROGRAM, &repo).map_err(|e| CliError::Program(e, "<example>".into()))?;
    let s = env["s"].as_service().expect("pipeline binding is a service");
    let scratch = std::env::temp_dir().join(format!("zooc-artifacts-{}", std::process::id()));
    let publisher = Publisher::new(&repo, &scratch);
    let sizes = || -> Result<Vec<publish::SizeRow>, CliError> {
        let arts = BackendKind::ALL
            .into_iter()
            .map(|k| publisher.publish(s, &BackendSpec::new(k, "size-report")?))
            .collect::<Result<Vec<_>, _>>()?;
        artifact_size_report(&arts).map_err(io_at(&scratch))
    };
    let rows = sizes();
    let _ = std::fs::remove_dir_all(&scratch);
    rows
}

fn open_store(cfg: &CliConfig) -> Result<PackageStore, CliError> {
    let store = PackageStore::open(&cfg.store_root)?.with_ttl(cfg.ttl_seconds);
    Ok(match cfg.remote.as_deref() {
        Some(r) if r.starts_with("http://") || r.starts_with("https://") => store.with_remote(HttpRemote::new(r)),
        Some(dir) => store.with_remote(DirRemote::new(dir)),
        None => store,
    })
}

fn eval_file(file: &Path, repo: &dyn PackageRepo, publisher: Option<&Publisher<'_>>) -> Result<Env, CliError> {
    let src = std::fs::read_to_string(file).map_err(io_at(file))?;
    let program = dsl::parse(&src).map_err(|e| CliError::Program(e.into(), file.to_path_buf()))?;
    dsl::eval(&program, Env::new(), repo, publisher).map_err(|e| CliError::Program(e.into(), file.to_path_buf()))
}

fn lookup(repo: &dyn PackageRepo, r: &ServiceRef) -> Result<Service, CliError> {
    let dict = create_service(&r.package, repo)?;
    dict.get(&r.name).cloned().ok_or_else(|| CliError::NoSuchService {
        package: dict
            .source()
            .map_or_else(|| r.package.to_string(), VersionRef::to_string),
        name: r.name.clone(),
    })
}

fn read_dir_files(dir: &Path) -> Result<Files, CliError> {
    let mut files = Files::new();
    for entry in std::fs::read_dir(dir).map_err(io_at(dir))? {
        let path = entry.map_err(io_at(dir))?.path();
        if path.is_file() {
            let name = path.file_name().and_then(|n| n.to_str()).map(str::to_string);
            let name = name.ok_or_else(|| CliError::Config(format!("non UTF-8 file name in {}", dir.display())))?;
            files.insert(name, std::fs::read(&path).map_err(io_at(&path))?);
        }
    }
    Ok(files)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io_at(dir))?;
    }
    std::fs::write(path, bytes).map_err(io_at(path))
}

fn io_at(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .unwrap_or(Duration::ZERO)
        .as_secs()
}

/// Announces the bound address, then serves until the process is killed.
fn block_on(h: ServerHandle, out: &Out) {
    if out.json {
        out.value(&json!({ "listening": h.url() }));
    } else {
        println!("listening on {}", h.url());
    }
    let _ = std::io::stdout().flush();
    h.join();
}

struct Out {
    json: bool,
}

impl Out {
    fn value(&self, v: &Json) {
        println!("{}", serde_json::to_string_pretty(v).expect("JSON values serialize"));
    }

    fn env(&self, env: &Env) {
        if !self.json {
            for (name, v) in env {
                println!("{name} = {v}");
            }
            return;
        }
        let obj: serde_json::Map<String, Json> = env
            .iter()
            .map(|(name, v)| {
                let mut o = json!({ "kind": v.describe(), "value": v.to_string() });
                match v {
                    Value::Service(s) | Value::Planned { service: s, .. } => o["type"] = json!(s.type_string()),
                    Value::Uri(u) => o["uri"] = json!(u),
                    Value::Dict(_) => {}
                }
                (name.clone(), o)
            })
            .collect();
        self.value(&Json::Object(obj));
    }

    fn records(&self, recs: &[StoredRecord]) {
        if self.json {
            self.value(&serde_json::to_value(recs).expect("records serialize"));
            return;
        }
        for r in recs {
            println!(
                "{}\t{}\t{}\t{}\t{}",
                r.id, r.record.gist_id, r.record.type_string, r.record.uri, r.record.description
            );
        }
    }
}
