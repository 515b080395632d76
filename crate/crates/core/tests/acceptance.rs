//! End-to-end acceptance suite. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any criterion fails.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use zoo_core::bench::{log_sizes, run_suite, scaling_fit, BenchConfig, Workload};
use zoo_core::discovery::{serve_registry, DiscoveryRecord, Query, Registry, RegistryClient};
use zoo_core::dsl::{eval, parse, Env, Value};
use zoo_core::publish::{
    artifact_size_report, decode_script, load_bundle, serve, size_report_csv, BackendKind, BackendSpec, Publisher,
    ServiceClient,
};
use zoo_core::runtime::{conv2d_valid, execute, gradient_descent, nd_fold, GdConfig, Ndarray, PrimitiveRegistry};
use zoo_core::service::{DataType, Service, ServiceSignature, TypedValue};
use zoo_core::store::{
    Files, MemoryStore, PackageRepo, PackageStore, Remote, RemoteError, StoreError, VersionRef, CONFIG_FILE,
};
use zoo_core::typecheck::{compose, TypeError, TypecheckError};
use zoo_core::usecase;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

const TOKENS: [&str; 11] = [
    "int", "float", "bool", "string", "ndarray", "png_img", "jpeg_img", "en_text", "fr_text", "en_voice", "fr_voice",
];

fn rand_type(rng: &mut ChaCha8Rng) -> DataType {
    TOKENS.choose(rng).unwrap().parse().unwrap()
}

// ---------------------------------------------------------------- 1

/// A service of the requested output type together with its independently
/// tracked input list.
fn gen_service(rng: &mut ChaCha8Rng, out: DataType, depth: u32, ids: &mut usize) -> (Service, Vec<DataType>) {
    *ids += 1;
    let pkg = VersionRef::explicit(&format!("p{ids}"), "v1");
    if depth > 0 && rng.random_bool(0.3) {
        let n = rng.random_range(1..=3);
        let g_inputs: Vec<DataType> = (0..n).map(|_| rand_type(rng)).collect();
        let g = Service::basic("g", pkg, ServiceSignature::new(g_inputs.clone(), out));
        let mut fs = Vec::new();
        let mut inputs = Vec::new();
        for t in g_inputs {
            let (f, ins) = gen_service(rng, t, depth - 1, ids);
            fs.push(f);
            inputs.extend(ins);
        }
        (compose(&fs, &g).expect("generator builds well-typed nests"), inputs)
    } else {
        let m = rng.random_range(0..=3);
        let inputs: Vec<DataType> = (0..m).map(|_| rand_type(rng)).collect();
        (
            Service::basic("f", pkg, ServiceSignature::new(inputs.clone(), out)),
            inputs,
        )
    }
}

fn criterion_type_safety() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for case in 0..1000 {
        let mut ids = 0;
        let n = rng.random_range(1..=4);
        let g_inputs: Vec<DataType> = (0..n).map(|_| rand_type(&mut rng)).collect();
        let g_out = rand_type(&mut rng);
        ids += 1;
        let g = Service::basic(
            "g",
            VersionRef::explicit("g", "v1"),
            ServiceSignature::new(g_inputs.clone(), g_out.clone()),
        );
        let mut fs = Vec::new();
        let mut expected_inputs = Vec::new();
        for t in &g_inputs {
            let (f, ins) = gen_service(&mut rng, t.clone(), 2, &mut ids);
            fs.push(f);
            expected_inputs.extend(ins);
        }
        let s = compose(&fs, &g).map_err(|e| format!("case {case}: well-typed instance rejected: {e}"))?;
        ensure(s.arity() == expected_inputs.len(), || {
            format!("case {case}: arity {} != sum {}", s.arity(), expected_inputs.len())
        })?;
        ensure(s.inputs() == expected_inputs.as_slice() && *s.output() == g_out, || {
            format!("case {case}: signature {} is not the concatenation", s.type_string())
        })?;

        let p = rng.random_range(0..n);
        let wrong = loop {
            let t = rand_type(&mut rng);
            if t != g_inputs[p] {
                break t;
            }
        };
        let mut bad = fs.clone();
        bad[p] = Service::basic(
            "bad",
            VersionRef::explicit("bad", "v1"),
            ServiceSignature::new(vec![], wrong.clone()),
        );
        let want = TypecheckError::TypeMismatch(TypeError {
            position: p,
            expected: g_inputs[p].clone(),
            found: wrong,
        });
        match compose(&bad, &g) {
            Err(e) if e == want => {}
            other => return Err(format!("case {case}: perturbed position {p} gave {other:?}")),
        }
    }
    let took = start.elapsed();
    ensure(took < Duration::from_secs(10), || format!("took {took:?}"))?;
    Ok(format!(
        "1000 instances, exact arity and positioned rejections in {took:.2?}"
    ))
}

// ---------------------------------------------------------------- 2

fn fnv1a32(bytes: &[u8]) -> u32 {
    let mut h: u32 = 2166136261;
    for &b in bytes {
        h ^= b as u32;
        h = h.wrapping_mul(16777619);
    }
    h
}

/// The use-case pipeline computed directly from the fixture definitions.
fn pipeline_oracle(img: &[u8]) -> String {
    let style = b"\x89PNG\r\n\x1a\nSTYLE:starry-night";
    // spelled out rather than rotate_left to stay independent of the fixture code
    #[allow(clippy::manual_rotate)]
    let seg: Vec<u8> = img.iter().map(|b| (b << 1) | (b >> 7)).collect();
    let styled: Vec<u8> = seg
        .iter()
        .enumerate()
        .map(|(i, b)| b ^ style[i % style.len()])
        .collect();
    let labels = [
        "chat", "chien", "oiseau", "voiture", "arbre", "maison", "bateau", "fleur",
    ];
    labels[(fnv1a32(&styled) % 8) as usize].to_string()
}

fn criterion_use_case() -> Outcome {
    let start = Instant::now();
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let store = PackageStore::open(tmp.path().join("store")).map_err(|e| e.to_string())?;
    usecase::seed(&store).map_err(|e| e.to_string())?;
    let program = parse(usecase::PROGRAM).map_err(|e| e.to_string())?;
    let publisher = Publisher::new(&store, tmp.path().join("out"));
    let env = eval(&program, Env::new(), &store, Some(&publisher)).map_err(|e| e.to_string())?;
    let s = env["s"].as_service().ok_or("`s` is not a service")?;
    ensure(*s.output() == DataType::fr_text(), || {
        format!("pipeline output is {}", s.output())
    })?;
    let uri = env["pub"].as_uri().ok_or("`pub` is not a URI")?;
    ensure(uri == "container://alice/image_service:latest", || format!("uri {uri}"))?;
    let dir = publisher.container_dir("alice/image_service:latest");
    ensure(dir.join("Dockerfile").is_file(), || {
        "container build file missing".into()
    })?;

    // serve from the bundle alone
    drop(store);
    std::fs::remove_dir_all(tmp.path().join("store")).map_err(|e| e.to_string())?;
    let bundle = load_bundle(&dir).map_err(|e| e.to_string())?;
    let reg = PrimitiveRegistry::builtin();
    bundle.verify(&reg).map_err(|e| e.to_string())?;
    let server = serve(bundle.service, reg, "127.0.0.1:0").map_err(|e| e.to_string())?;
    let client = ServiceClient::new(&server.url());
    let sig = client.signature().map_err(|e| e.to_string())?;
    ensure(sig == "png_img -> fr_text", || format!("signature {sig}"))?;
    let out = client
        .invoke(&[TypedValue::media(DataType::png_img(), usecase::SAMPLE_PNG)])
        .map_err(|e| e.to_string())?;
    let want = pipeline_oracle(usecase::SAMPLE_PNG);
    ensure(
        *out.dtype() == DataType::fr_text() && out.text().as_deref() == Some(want.as_str()),
        || format!("got {out:?}, want fr_text {want:?}"),
    )?;
    let took = start.elapsed();
    ensure(took < Duration::from_secs(5), || format!("took {took:?}"))?;
    Ok(format!("{uri} answered {want:?} in {took:.2?}"))
}

// ---------------------------------------------------------------- 3

struct Prim {
    gid: String,
    name: String,
    sig: ServiceSignature,
}

fn random_pipeline(
    rng: &mut ChaCha8Rng,
    prims: &[Prim],
    refs: &BTreeMap<String, VersionRef>,
    out: &DataType,
    depth: u32,
) -> Option<Service> {
    let candidates: Vec<&Prim> = prims.iter().filter(|p| p.sig.output == *out).collect();
    let p = *candidates.choose(rng)?;
    let basic = Service::basic(p.name.clone(), refs[&p.gid].clone(), p.sig.clone());
    if depth == 0 || p.sig.inputs.is_empty() || rng.random_bool(0.35) {
        return Some(basic);
    }
    let fs: Option<Vec<Service>> = p
        .sig
        .inputs
        .iter()
        .map(|t| random_pipeline(rng, prims, refs, t, depth - 1))
        .collect();
    match fs {
        Some(fs) => Some(compose(&fs, &basic).expect("typed by construction")),
        None => Some(basic),
    }
}

fn random_input(rng: &mut ChaCha8Rng, t: &DataType) -> TypedValue {
    match t.to_string().as_str() {
        "int" => TypedValue::int(rng.random_range(-50..50)),
        "float" => TypedValue::float(rng.random_range(-10.0..10.0)),
        "bool" => TypedValue::bool(rng.random_bool(0.5)),
        "string" => TypedValue::string(
            (0..rng.random_range(0..12))
                .map(|_| rng.random_range('a'..='z'))
                .collect::<String>(),
        ),
        "ndarray" => {
            let n = rng.random_range(1..8);
            TypedValue::array(Ndarray::vector((0..n).map(|_| rng.random_range(-5.0..5.0)).collect()).unwrap())
        }
        "en_text" => {
            let words = ["cat", "dog", "boat", "zebra"];
            TypedValue::media(t.clone(), words.choose(rng).unwrap().as_bytes())
        }
        _ => TypedValue::media(
            t.clone(),
            (0..rng.random_range(0..48))
                .map(|_| rng.random::<u8>())
                .collect::<Vec<u8>>(),
        ),
    }
}

fn criterion_backend_equivalence() -> Outcome {
    let repo = MemoryStore::new();
    let refs = usecase::seed(&repo).map_err(|e| e.to_string())?;
    let reg = PrimitiveRegistry::builtin();
    let prims: Vec<Prim> = refs
        .keys()
        .flat_map(|gid| {
            reg.functions(gid).map(move |(name, p)| Prim {
                gid: gid.clone(),
                name: name.to_string(),
                sig: p.signature.clone(),
            })
        })
        .collect();
    let outputs: Vec<DataType> = prims.iter().map(|p| p.sig.output.clone()).collect();
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let publisher = Publisher::new(&repo, tmp.path());
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut composed = 0;
    for case in 0..50 {
        let out = outputs.choose(&mut rng).unwrap().clone();
        let s = random_pipeline(&mut rng, &prims, &refs, &out, 3).expect("output drawn from producers");
        composed += usize::from(s.graph().nodes().len() > 1);
        let inputs: Vec<TypedValue> = s.inputs().iter().map(|t| random_input(&mut rng, t)).collect();

        let direct = execute(&s, &inputs, &reg).map_err(|e| format!("case {case}: {e}"))?;
        let direct = serde_json::to_vec(&json!({ "output": direct.to_wire() })).unwrap();

        let target = format!("case{case}");
        let container = publisher
            .publish(&s, &BackendSpec::new(BackendKind::Container, &target).unwrap())
            .map_err(|e| e.to_string())?;
        let script = publisher
            .publish(&s, &BackendSpec::new(BackendKind::Script, &target).unwrap())
            .map_err(|e| e.to_string())?;

        let loaded = load_bundle(&container.output_path).map_err(|e| e.to_string())?;
        let server = serve(loaded.service, reg.clone(), "127.0.0.1:0").map_err(|e| e.to_string())?;
        let (status, served) = ServiceClient::new(&server.url())
            .invoke_body(&inputs)
            .map_err(|e| e.to_string())?;
        server.shutdown();

        let bundle = decode_script(&std::fs::read(&script.output_path).map_err(|e| e.to_string())?)?;
        bundle.verify(&reg).map_err(|e| e.to_string())?;
        let interpreted = execute(&bundle.service, &inputs, &reg).map_err(|e| e.to_string())?;
        let interpreted = serde_json::to_vec(&json!({ "output": interpreted.to_wire() })).unwrap();

        ensure(status == 200 && served == direct && interpreted == direct, || {
            format!(
                "case {case} ({}): in-process {} / http {status} {} / bundle {}",
                s.type_string(),
                String::from_utf8_lossy(&direct),
                String::from_utf8_lossy(&served),
                String::from_utf8_lossy(&interpreted)
            )
        })?;
    }
    Ok(format!(
        "50 pairs byte-identical across in-process, HTTP and bundle ({composed} composed)"
    ))
}

// ---------------------------------------------------------------- 4

#[derive(Default)]
struct FakeState {
    versions: BTreeMap<String, Vec<(String, Files)>>,
}

#[derive(Clone, Default)]
struct FakeRemote {
    state: Arc<Mutex<FakeState>>,
    calls: Arc<AtomicUsize>,
}

impl FakeRemote {
    fn push(&self, gid: &str, vid: &str, body: &str) {
        let files: Files = [
            (CONFIG_FILE.to_string(), br#"{"f": "int"}"#.to_vec()),
            ("main.ml".to_string(), body.as_bytes().to_vec()),
        ]
        .into();
        self.state
            .lock()
            .unwrap()
            .versions
            .entry(gid.into())
            .or_default()
            .push((vid.into(), files));
    }

    fn take_calls(&self) -> usize {
        self.calls.swap(0, Ordering::SeqCst)
    }
}

impl Remote for FakeRemote {
    fn latest(&self, gid: &str) -> Result<Option<String>, RemoteError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        Ok(self
            .state
            .lock()
            .unwrap()
            .versions
            .get(gid)
            .and_then(|v| v.last())
            .map(|(vid, _)| vid.clone()))
    }

    fn fetch(&self, gid: &str, vid: &str) -> Result<Option<Files>, RemoteError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        Ok(self
            .state
            .lock()
            .unwrap()
            .versions
            .get(gid)
            .and_then(|v| v.iter().find(|(x, _)| x == vid))
            .map(|(_, f)| f.clone()))
    }
}

fn criterion_versioning() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let remote = FakeRemote::default();
    remote.push("abc12", "1", "v1");
    remote.push("abc12", "3", "v3");
    let ttl = 600;
    let store = PackageStore::open(tmp.path())
        .map_err(|e| e.to_string())?
        .with_remote(remote.clone())
        .with_ttl(ttl);
    let t0 = 1_000_000;

    // (a)
    let explicit = VersionRef::explicit("abc12", "1");
    let first = store.resolve(&explicit, t0).map_err(|e| e.to_string())?;
    ensure(remote.take_calls() > 0, || {
        "first explicit fetch did not reach the remote".into()
    })?;
    let again = store.resolve(&explicit, t0 + 10 * ttl).map_err(|e| e.to_string())?;
    let a = remote.take_calls();
    ensure(a == 0 && again.files == first.files, || {
        format!("(a) {a} remote calls on cached explicit version")
    })?;

    // (b)
    let latest = VersionRef::latest("abc12");
    let m = store.resolve(&latest, t0).map_err(|e| e.to_string())?;
    ensure(m.vid == "3", || format!("latest resolved to {}", m.vid))?;
    remote.take_calls();
    for dt in [0, 1, ttl / 2, ttl - 1] {
        let m = store.resolve(&latest, t0 + dt).map_err(|e| e.to_string())?;
        ensure(m.vid == "3", || format!("(b) latest within TTL moved to {}", m.vid))?;
    }
    let b = remote.take_calls();
    ensure(b == 0, || format!("(b) {b} remote calls within TTL"))?;

    // (c)
    remote.push("abc12", "5", "v5");
    let stale = store.resolve(&latest, t0 + ttl - 1).map_err(|e| e.to_string())?;
    ensure(stale.vid == "3", || "(c) advanced before TTL expiry".into())?;
    let fresh = store.resolve(&latest, t0 + ttl).map_err(|e| e.to_string())?;
    ensure(fresh.vid == "5" && fresh.files["main.ml"] == b"v5", || {
        format!("(c) after TTL got {}", fresh.vid)
    })?;

    // (d)
    let pinned_latest = VersionRef::latest("abc12").pinned();
    let d1 = matches!(store.resolve(&pinned_latest, t0), Err(StoreError::PinOnLatest(_)));
    let d2 = matches!(
        store.save_dependency_graph(
            &VersionRef::latest("abc12"),
            Service::basic("f", explicit.clone(), "int".parse().unwrap()).graph()
        ),
        Err(StoreError::PinOnLatest(_))
    );
    let d3 = matches!(
        "abc12/latest/pin".parse::<VersionRef>().map(|r| store.resolve(&r, t0)),
        Ok(Err(StoreError::PinOnLatest(_)))
    );
    ensure(d1 && d2 && d3, || {
        format!("(d) pin-on-latest accepted: resolve={d1} save={d2} parsed={d3}")
    })?;
    Ok("explicit: 0 calls; latest in TTL: 0 calls; after TTL: v5; pin-on-latest rejected".into())
}

// ---------------------------------------------------------------- 5

fn naive_conv(x: &[f64], h: usize, w: usize, k: &[f64], kh: usize, kw: usize) -> Vec<f64> {
    let mut out = vec![];
    for i in 0..h - kh + 1 {
        for j in 0..w - kw + 1 {
            let mut acc = 0.0;
            for u in 0..kh {
                for v in 0..kw {
                    acc += x[(i + u) * w + (j + v)] * k[u * kw + v];
                }
            }
            out.push(acc);
        }
    }
    out
}

fn criterion_numerics() -> Outcome {
    let cubic =
        gradient_descent(|x| x * x * x - 2.0 * x * x + 2.0, &GdConfig::starting_at(4.0)).map_err(|e| e.to_string())?;
    ensure((cubic.x - 4.0 / 3.0).abs() <= 1e-4, || {
        format!("cubic argmin {}", cubic.x)
    })?;
    let sine = gradient_descent(f64::sin, &GdConfig::starting_at(5.0)).map_err(|e| e.to_string())?;
    ensure((sine.x - 1.5 * std::f64::consts::PI).abs() <= 1e-4, || {
        format!("sin argmin {}", sine.x)
    })?;

    let mut sizes = log_sizes(0, 6, 4);
    sizes.extend([999_999, 1_000_000]);
    for n in sizes {
        // 1..=n, each element an integer <= 10^6
        let a = Ndarray::vector((1..=n).map(|i| i as f64).collect()).unwrap();
        let got = nd_fold(|s, x| s + x, 0.0, &a);
        let want = (n as u64) * (n as u64 + 1) / 2;
        ensure(got == want as f64, || format!("fold of 1..={n}: {got} != {want}"))?;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for case in 0..200 {
        let (h, w) = (rng.random_range(1..=20), rng.random_range(1..=20));
        let (kh, kw) = (rng.random_range(1..=h.min(5)), rng.random_range(1..=w.min(5)));
        let x: Vec<f64> = (0..h * w).map(|_| rng.random_range(-1.0..1.0)).collect();
        let k: Vec<f64> = (0..kh * kw).map(|_| rng.random_range(-1.0..1.0)).collect();
        let got = conv2d_valid(
            &Ndarray::from_vec(vec![h, w], x.clone()).unwrap(),
            &Ndarray::from_vec(vec![kh, kw], k.clone()).unwrap(),
        )
        .map_err(|e| e.to_string())?;
        let want = naive_conv(&x, h, w, &k, kh, kw);
        ensure(got.shape() == [h - kh + 1, w - kw + 1], || {
            format!("conv case {case}: shape {:?}", got.shape())
        })?;
        if let Some(i) = got.data().iter().zip(&want).position(|(a, b)| (a - b).abs() > 1e-12) {
            return Err(format!(
                "conv case {case}: element {i} off by {}",
                (got.data()[i] - want[i]).abs()
            ));
        }
    }
    Ok(format!(
        "argmins {:.6} / {:.6}; fold exact to 10^6; 200 conv instances within 1e-12",
        cubic.x, sine.x
    ))
}

// ---------------------------------------------------------------- 6

fn criterion_scaling() -> Outcome {
    let start = Instant::now();
    let cfg = BenchConfig {
        workloads: vec![Workload::Map],
        sizes: log_sizes(3, 6, 4),
        ..BenchConfig::default()
    };
    let mut fits = Vec::new();
    for _ in 0..3 {
        let rows = run_suite(&cfg).map_err(|e| e.to_string())?;
        fits.push(scaling_fit(&rows).map_err(|e| e.to_string())?);
    }
    let median = |mut v: Vec<f64>| {
        v.sort_by(f64::total_cmp);
        v[v.len() / 2]
    };
    let slope = median(fits.iter().map(|f| f.slope).collect());
    let r2 = median(fits.iter().map(|f| f.r2).collect());
    let took = start.elapsed();
    ensure((0.7..=1.3).contains(&slope) && r2 >= 0.95, || {
        format!("median slope {slope:.3}, R2 {r2:.4}")
    })?;
    ensure(took < Duration::from_secs(120), || format!("took {took:?}"))?;
    Ok(format!("median slope {slope:.3}, R2 {r2:.4} over 3 runs in {took:.1?}"))
}

// ---------------------------------------------------------------- 7

fn criterion_artifact_sizes() -> Outcome {
    let repo = MemoryStore::new();
    usecase::seed(&repo).map_err(|e| e.to_string())?;
    let env = zoo_core::dsl::check(usecase::PROGRAM, &repo).map_err(|e| e.to_string())?;
    let Some(Value::Service(s)) = env.get("s") else {
        return Err("pipeline missing".into());
    };
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let publisher = Publisher::new(&repo, tmp.path());
    let arts = [BackendKind::Container, BackendKind::Script]
        .into_iter()
        .map(|k| publisher.publish(s, &BackendSpec::new(k, "image_service").unwrap()))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| e.to_string())?;
    let rows = artifact_size_report(&arts).map_err(|e| e.to_string())?;
    let csv = size_report_csv(&rows);
    let lines: Vec<&str> = csv.lines().collect();
    let container = rows
        .iter()
        .find(|r| r.backend == BackendKind::Container)
        .ok_or("no container row")?
        .bytes;
    let script = rows
        .iter()
        .find(|r| r.backend == BackendKind::Script)
        .ok_or("no script row")?
        .bytes;
    ensure(
        lines.len() == 3
            && lines[0] == "backend,bytes"
            && lines.contains(&format!("container,{container}").as_str())
            && lines.contains(&format!("script,{script}").as_str()),
        || format!("csv: {csv:?}"),
    )?;
    ensure(script < container, || {
        format!("script {script} >= container {container}")
    })?;
    Ok(format!("script {script} B < container {container} B"))
}

// ---------------------------------------------------------------- 8

fn criterion_discovery() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let reg = Arc::new(Registry::file(tmp.path().join("records.log")).map_err(|e| e.to_string())?);
    let server = serve_registry(reg, "127.0.0.1:0").map_err(|e| e.to_string())?;
    let client = RegistryClient::new(&server.url());
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let words = ["style", "photo", "translate", "label", "voice", "matrix", "sum"];
    let mut registered = Vec::new();
    for i in 0..100 {
        let sig = ServiceSignature::new(
            (0..rng.random_range(0..4)).map(|_| rand_type(&mut rng)).collect(),
            rand_type(&mut rng),
        );
        let desc = format!(
            "{} {}",
            words.choose(&mut rng).unwrap(),
            words.choose(&mut rng).unwrap()
        );
        let rec = DiscoveryRecord::new(
            &format!("g{:03}", i % 37),
            &desc,
            &sig.to_string(),
            &format!("container://svc/{i}"),
            rng.random_range(0..1000),
        );
        let id = client.register(&rec).map_err(|e| e.to_string())?;
        registered.push((id, sig, rec));
    }
    let satisfies = |q: &Query, r: &DiscoveryRecord| {
        let sig: ServiceSignature = r.type_string.parse().unwrap();
        q.input.as_ref().is_none_or(|t| sig.inputs.contains(t))
            && q.output.as_ref().is_none_or(|t| sig.output == *t)
            && q.text.as_deref().is_none_or(|x| r.description.contains(x))
    };
    for (id, sig, _) in &registered {
        let q = Query {
            output: Some(sig.output.clone()),
            ..Query::default()
        };
        let hits = client.search(&q).map_err(|e| e.to_string())?;
        ensure(hits.iter().any(|h| h.id == *id), || {
            format!("record {id} not found by output {}", sig.output)
        })?;
        ensure(hits.iter().all(|h| satisfies(&q, &h.record)), || {
            format!("output query {} returned a non-match", sig.output)
        })?;
    }
    for _ in 0..50 {
        let q = Query {
            input: rng.random_bool(0.5).then(|| rand_type(&mut rng)),
            output: rng.random_bool(0.5).then(|| rand_type(&mut rng)),
            text: rng
                .random_bool(0.5)
                .then(|| words.choose(&mut rng).unwrap().to_string()),
        };
        let hits = client.search(&q).map_err(|e| e.to_string())?;
        ensure(hits.iter().all(|h| satisfies(&q, &h.record)), || {
            format!("query {q:?} returned a non-match")
        })?;
        let expected = registered.iter().filter(|(_, _, r)| satisfies(&q, r)).count();
        ensure(hits.len() == expected, || {
            format!("query {q:?}: {} hits, {expected} expected", hits.len())
        })?;
    }
    Ok("100 records found by exact output type; 150 queries all predicate-consistent".into())
}

fn main() {
    let criteria: [Criterion; 8] = [
        ("type-safety suite", criterion_type_safety),
        ("use-case end-to-end", criterion_use_case),
        ("backend equivalence", criterion_backend_equivalence),
        ("versioning semantics", criterion_versioning),
        ("numerical oracles", criterion_numerics),
        ("scaling property", criterion_scaling),
        ("artifact-size ordering", criterion_artifact_sizes),
        ("discovery round-trip", criterion_discovery),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let outcome = std::panic::catch_unwind(run).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match outcome {
            Ok(detail) => println!("criterion {}: PASS  {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {}: FAIL  {name}: {detail}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
