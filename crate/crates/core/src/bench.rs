//! Timing harness for the numerical kernels.
//!
//! Each point runs warmup repetitions, then a fixed number of timed trials.
//! Fast operations are batched so a trial lasts long enough to time
//! reliably; reported figures are per operation. Every timed operation is
//! checked against an independent oracle before it is timed.

use std::fmt;
use std::hint::black_box;
use std::str::FromStr;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::runtime::{conv2d_valid, gradient_descent, nd_fold, nd_map, GdConfig, Ndarray};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Workload {
    Map,
    Fold,
    GdSin,
    GdCubic,
    ConvToy,
    /// Service invocation per strategy: in-process, bundle, HTTP.
    Invoke,
}

impl Workload {
    /// The default suite; `invoke` is opt-in.
    pub const SUITE: [Workload; 5] = [
        Workload::Map,
        Workload::Fold,
        Workload::GdSin,
        Workload::GdCubic,
        Workload::ConvToy,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Workload::Map => "map",
            Workload::Fold => "fold",
            Workload::GdSin => "gd_sin",
            Workload::GdCubic => "gd_cubic",
            Workload::ConvToy => "conv_toy",
            Workload::Invoke => "invoke",
        }
    }
}

impl fmt::Display for Workload {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Workload {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self, BenchError> {
        Self::SUITE
            .into_iter()
            .chain([Workload::Invoke])
            .find(|w| w.name() == s)
            .ok_or_else(|| BenchError::UnknownWorkload(s.to_string()))
    }
}

/// Parses `all` or a comma-separated workload list.
pub fn parse_suite(s: &str) -> Result<Vec<Workload>, BenchError> {
    match s.trim() {
        "all" => Ok(Workload::SUITE.to_vec()),
        "" => Ok(Vec::new()),
        list => list.split(',').map(|w| w.trim().parse()).collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BenchError {
    #[error("unknown workload `{0}`")]
    UnknownWorkload(String),
    #[error("a benchmark is already running in this process")]
    Busy,
    #[error("{workload} at {param}: result disagrees with oracle: {detail}")]
    OracleMismatch {
        workload: String,
        param: String,
        detail: String,
    },
    #[error("scaling fit needs at least 3 distinct sizes spanning 2 decades")]
    InsufficientData,
    #[error("invalid bench config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub workloads: Vec<Workload>,
    /// Array lengths for `map` and `fold`.
    pub sizes: Vec<usize>,
    /// Image sides for `conv_toy` (3x3 kernel).
    pub conv_sides: Vec<usize>,
    pub trials: usize,
    pub warmup: usize,
    /// Minimum duration of one timed trial; fast operations repeat until
    /// they fill it.
    pub min_trial: Duration,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            workloads: Workload::SUITE.to_vec(),
            sizes: log_sizes(1, 6, 4),
            conv_sides: vec![8, 16, 32, 64],
            trials: 10,
            warmup: 3,
            min_trial: Duration::from_millis(2),
        }
    }
}

impl BenchConfig {
    fn validate(&self) -> Result<(), BenchError> {
        if self.trials < 3 {
            return Err(BenchError::InvalidConfig("at least 3 trials are required".into()));
        }
        if self.sizes.contains(&0) || self.conv_sides.iter().any(|&s| s < 3) {
            return Err(BenchError::InvalidConfig(
                "sizes must be positive and conv sides at least 3".into(),
            ));
        }
        Ok(())
    }
}

/// `per_decade` log-spaced sizes from 10^lo to 10^hi inclusive.
pub fn log_sizes(lo: u32, hi: u32, per_decade: u32) -> Vec<usize> {
    let mut out: Vec<usize> = (lo * per_decade..=hi * per_decade)
        .map(|k| 10f64.powf(f64::from(k) / f64::from(per_decade)).round() as usize)
        .collect();
    out.dedup();
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchResult {
    pub workload: String,
    pub param: String,
    pub trials: usize,
    pub mean_ns: f64,
    pub std_ns: f64,
    /// Functional result checked by the harness (e.g. the argmin).
    pub outcome: Option<f64>,
}

pub const CSV_HEADER: &str = "workload,param,trials,mean_ns,std_ns";

pub fn to_csv(results: &[BenchResult]) -> String {
    let mut out = format!("{CSV_HEADER}\n");
    for r in results {
        out.push_str(&format!(
            "{},{},{},{:.1},{:.1}\n",
            r.workload, r.param, r.trials, r.mean_ns, r.std_ns
        ));
    }
    out
}

/// Mean and sample standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn time_op(cfg: &BenchConfig, mut op: impl FnMut()) -> (f64, f64) {
    for _ in 0..cfg.warmup.max(1) {
        op();
    }
    let start = Instant::now();
    op();
    let one = start.elapsed().max(Duration::from_nanos(1));
    let reps = (cfg.min_trial.as_nanos() / one.as_nanos()).clamp(1, 1_000_000) as u32;
    let per_op: Vec<f64> = (0..cfg.trials)
        .map(|_| {
            let start = Instant::now();
            for _ in 0..reps {
                op();
            }
            start.elapsed().as_nanos() as f64 / f64::from(reps)
        })
        .collect();
    mean_std(&per_op)
}

fn mismatch(w: Workload, param: &str, detail: String) -> BenchError {
    BenchError::OracleMismatch {
        workload: w.name().into(),
        param: param.into(),
        detail,
    }
}

fn result(
    w: Workload,
    param: String,
    cfg: &BenchConfig,
    (mean_ns, std_ns): (f64, f64),
    outcome: Option<f64>,
) -> BenchResult {
    BenchResult {
        workload: w.name().into(),
        param,
        trials: cfg.trials,
        mean_ns,
        std_ns,
        outcome,
    }
}

/// Direct four-loop convolution used to validate the kernel.
fn conv_oracle(x: &Ndarray, k: &Ndarray) -> Vec<f64> {
    let (h, w) = (x.shape()[0], x.shape()[1]);
    let (kh, kw) = (k.shape()[0], k.shape()[1]);
    let mut out = Vec::with_capacity((h - kh + 1) * (w - kw + 1));
    for i in 0..=h - kh {
        for j in 0..=w - kw {
            let mut acc = 0.0;
            for u in 0..kh {
                for v in 0..kw {
                    acc += x.data()[(i + u) * w + j + v] * k.data()[u * kw + v];
                }
            }
            out.push(acc);
        }
    }
    out
}

fn run_workload(w: Workload, cfg: &BenchConfig, out: &mut Vec<BenchResult>) -> Result<(), BenchError> {
    match w {
        Workload::Map => {
            for &n in &cfg.sizes {
                let a = Ndarray::arange(n).expect("positive size");
                let param = n.to_string();
                let mapped = nd_map(|x| 2.0 * x + 1.0, &a);
                if let Some(i) = mapped
                    .data()
                    .iter()
                    .enumerate()
                    .position(|(i, &y)| y != 2.0 * i as f64 + 1.0)
                {
                    return Err(mismatch(w, &param, format!("element {i}")));
                }
                let t = time_op(cfg, || {
                    black_box(nd_map(|x| 2.0 * x + 1.0, black_box(&a)));
                });
                out.push(result(w, param, cfg, t, None));
            }
        }
        Workload::Fold => {
            for &n in &cfg.sizes {
                let a = Ndarray::arange(n).expect("positive size");
                let param = n.to_string();
                let got = nd_fold(|s, x| s + x, 0.0, &a);
                // integer closed form; exact in f64 below 2^53
                let want = (n as u64 * (n as u64 - 1) / 2) as f64;
                if got != want {
                    return Err(mismatch(w, &param, format!("sum {got} != {want}")));
                }
                let t = time_op(cfg, || {
                    black_box(nd_fold(|s, x| s + x, 0.0, black_box(&a)));
                });
                out.push(result(w, param, cfg, t, Some(got)));
            }
        }
        Workload::GdSin | Workload::GdCubic => {
            let (f, init, argmin): (fn(f64) -> f64, f64, f64) = if w == Workload::GdSin {
                (f64::sin, 5.0, 1.5 * std::f64::consts::PI)
            } else {
                (|x| x * x * x - 2.0 * x * x + 2.0, 4.0, 4.0 / 3.0)
            };
            let gd = GdConfig::starting_at(init);
            let param = format!("init={init}");
            let x = gradient_descent(f, &gd)
                .map_err(|e| mismatch(w, &param, e.to_string()))?
                .x;
            if (x - argmin).abs() > 1e-4 {
                return Err(mismatch(w, &param, format!("argmin {x} != {argmin}")));
            }
            let t = time_op(cfg, || {
                black_box(gradient_descent(f, black_box(&gd)).ok());
            });
            out.push(result(w, param, cfg, t, Some(x)));
        }
        Workload::ConvToy => {
            let k = Ndarray::from_vec(vec![3, 3], vec![0.0, -1.0, 0.0, -1.0, 4.0, -1.0, 0.0, -1.0, 0.0]).expect("3x3");
            for &side in &cfg.conv_sides {
                let x = Ndarray::from_vec(
                    vec![side, side],
                    (0..side * side).map(|i| ((i * 7919) % 101) as f64 / 10.0).collect(),
                )
                .expect("square");
                let param = format!("{side}x{side}");
                let got = conv2d_valid(&x, &k).map_err(|e| mismatch(w, &param, e.to_string()))?;
                let want = conv_oracle(&x, &k);
                if let Some(i) = got.data().iter().zip(&want).position(|(a, b)| (a - b).abs() > 1e-12) {
                    return Err(mismatch(w, &param, format!("element {i}")));
                }
                let t = time_op(cfg, || {
                    black_box(conv2d_valid(black_box(&x), &k).ok());
                });
                out.push(result(w, param, cfg, t, None));
            }
        }
        Workload::Invoke => invoke::run(cfg, out)?,
    }
    Ok(())
}

mod invoke {
    use super::*;
    use crate::publish::{decode_script, BackendKind, BackendSpec, Publisher};
    use crate::runtime::{execute, PrimitiveRegistry};
    use crate::service::{DataType, TypedValue};
    use crate::store::MemoryStore;
    use crate::usecase;

    pub(super) fn run(cfg: &BenchConfig, out: &mut Vec<BenchResult>) -> Result<(), BenchError> {
        let w = Workload::Invoke;
        let fail = |p: &str, e: String| mismatch(w, p, e);
        let repo = MemoryStore::new();
        usecase::seed(&repo).map_err(|e| fail("setup", e.to_string()))?;
        let env = crate::dsl::check(usecase::PROGRAM, &repo).map_err(|e| fail("setup", e.to_string()))?;
        let s = env["s"].as_service().expect("pipeline is a service").clone();
        let reg = PrimitiveRegistry::builtin();
        let input = vec![TypedValue::media(DataType::png_img(), usecase::SAMPLE_PNG)];
        let want = execute(&s, &input, &reg).map_err(|e| fail("in_process", e.to_string()))?;

        let t = time_op(cfg, || {
            black_box(execute(&s, black_box(&input), &reg).ok());
        });
        out.push(result(w, "in_process".into(), cfg, t, None));

        let tmp = std::env::temp_dir().join(format!("zoo-bench-{}", std::process::id()));
        let art = Publisher::new(&repo, &tmp)
            .publish(
                &s,
                &BackendSpec::new(BackendKind::Script, "bench").expect("valid target"),
            )
            .map_err(|e| fail("bundle", e.to_string()))?;
        let bytes = std::fs::read(&art.output_path).map_err(|e| fail("bundle", e.to_string()))?;
        let _ = std::fs::remove_dir_all(&tmp);
        let interpret = |b: &[u8]| -> Result<TypedValue, String> {
            let bundle = decode_script(b)?;
            bundle.verify(&reg).map_err(|e| e.to_string())?;
            execute(&bundle.service, &input, &reg).map_err(|e| e.to_string())
        };
        if interpret(&bytes).map_err(|e| fail("bundle", e))? != want {
            return Err(fail("bundle", "output differs from in-process".into()));
        }
        let t = time_op(cfg, || {
            black_box(interpret(black_box(&bytes)).ok());
        });
        out.push(result(w, "bundle".into(), cfg, t, None));

        #[cfg(feature = "http")]
        {
            let server = crate::publish::serve(s.clone(), reg.clone(), "127.0.0.1:0")
                .map_err(|e| fail("http", e.to_string()))?;
            let client = crate::publish::ServiceClient::new(&server.url());
            let call = || client.invoke(&input).map_err(|e| e.to_string());
            if call().map_err(|e| fail("http", e))? != want {
                return Err(fail("http", "output differs from in-process".into()));
            }
            let t = time_op(cfg, || {
                black_box(call().ok());
            });
            out.push(result(w, "http".into(), cfg, t, None));
        }
        Ok(())
    }
}

static RUNNING: Mutex<()> = Mutex::new(());

/// Runs the configured workloads in order. Refuses to start while another
/// suite is running in this process.
pub fn run_suite(cfg: &BenchConfig) -> Result<Vec<BenchResult>, BenchError> {
    cfg.validate()?;
    let _guard = match RUNNING.try_lock() {
        Ok(g) => g,
        Err(std::sync::TryLockError::Poisoned(p)) => p.into_inner(),
        Err(std::sync::TryLockError::WouldBlock) => return Err(BenchError::Busy),
    };
    let mut out = Vec::new();
    for &w in &cfg.workloads {
        run_workload(w, cfg, &mut out)?;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalingFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

/// Least-squares fit of ln(mean_ns) against ln(size).
pub fn scaling_fit(results: &[BenchResult]) -> Result<ScalingFit, BenchError> {
    let pts: Vec<(f64, f64)> = results
        .iter()
        .filter_map(|r| {
            Some((
                (r.param.parse::<f64>().ok()?).ln(),
                r.mean_ns.max(f64::MIN_POSITIVE).ln(),
            ))
        })
        .collect();
    let mut xs: Vec<f64> = pts.iter().map(|p| p.0).collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    if xs.len() < 3 || xs[xs.len() - 1] - xs[0] < 100f64.ln() - 1e-9 {
        return Err(BenchError::InsufficientData);
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Ok(ScalingFit {
        slope,
        intercept: my - slope * mx,
        r2,
    })
}

/// True when each mean is at least `1 - slack` times the previous one.
pub fn is_monotone(results: &[BenchResult], slack: f64) -> bool {
    results.windows(2).all(|w| w[1].mean_ns >= w[0].mean_ns * (1.0 - slack))
}

/// Log-log chart of every workload with numeric params.
pub fn plot_svg(results: &[BenchResult]) -> String {
    const W: f64 = 640.0;
    const H: f64 = 400.0;
    const M: f64 = 50.0;
    const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];
    let pts: Vec<(&str, f64, f64)> = results
        .iter()
        .filter_map(|r| {
            Some((
                r.workload.as_str(),
                r.param.parse::<f64>().ok()?.log10(),
                r.mean_ns.max(1.0).log10(),
            ))
        })
        .collect();
    let mut svg = format!("<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" font-family=\"sans-serif\" font-size=\"12\">\n");
    svg.push_str(&format!("<rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>\n"));
    if pts.is_empty() {
        svg.push_str("</svg>\n");
        return svg;
    }
    let (x0, x1) = pts
        .iter()
        .fold((f64::MAX, f64::MIN), |(a, b), p| (a.min(p.1), b.max(p.1)));
    let (y0, y1) = pts
        .iter()
        .fold((f64::MAX, f64::MIN), |(a, b), p| (a.min(p.2), b.max(p.2)));
    let sx = |x: f64| M + (x - x0) / (x1 - x0).max(1e-9) * (W - 2.0 * M);
    let sy = |y: f64| H - M - (y - y0) / (y1 - y0).max(1e-9) * (H - 2.0 * M);
    svg.push_str(&format!(
        "<line x1=\"{M}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>\n<line x1=\"{M}\" y1=\"{M}\" x2=\"{M}\" y2=\"{b}\" stroke=\"black\"/>\n",
        b = H - M,
        r = W - M
    ));
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">log10(size)</text>\n<text x=\"12\" y=\"{}\" transform=\"rotate(-90 12 {})\" text-anchor=\"middle\">log10(ns)</text>\n",
        W / 2.0,
        H - 12.0,
        H / 2.0,
        H / 2.0
    ));
    let mut names: Vec<&str> = pts.iter().map(|p| p.0).collect();
    names.dedup();
    for (i, name) in names.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let line: Vec<String> = pts
            .iter()
            .filter(|p| p.0 == *name)
            .map(|p| format!("{:.1},{:.1}", sx(p.1), sy(p.2)))
            .collect();
        svg.push_str(&format!(
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"2\" points=\"{}\"/>\n<text x=\"{}\" y=\"{}\" fill=\"{color}\">{name}</text>\n",
            line.join(" "),
            M + 10.0,
            M + 14.0 * i as f64
        ));
    }
    svg.push_str("</svg>\n");
    svg
}
