use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use dmmix::density::{ise, kernel_moments, kernel_row, smoothed_pmf, Bandwidth};
use dmmix::dm::{default_estimate, fit_multistart, to_counts, FitConfig, Init, PiUpdate, Target};
use dmmix::inference::{clt_harness, report, CltConfig};
use dmmix::io::{from_json, parse_observations, read_observations, read_pgm, to_json, write_pgm, GrayImage};
use dmmix::robustness::{bias_curve, contaminate, param_names, BiasConfig, BiasTable, ContaminationSpec, Mechanism, Method};
use dmmix::segment::{contaminate_image, display_values, segment as segment_image};
use dmmix::selection::{split_select_estimate, SelectionConfig};
use dmmix::{DiscreteKernel, Divergence, Error, Family, FitResult, MixtureSpec};

use crate::config::{self, FitSection};
use crate::FitArgs;

/// 0 ok, 2 bad input, 3 numerical failure.
pub fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if let Some(err) = cause.downcast_ref::<Error>() {
            return match err {
                Error::Parse { .. }
                | Error::Io(_)
                | Error::Json(_)
                | Error::Parameter(_)
                | Error::Domain(_)
                | Error::EmptyData
                | Error::Unsupported(_) => 2,
                _ => 3,
            };
        }
    }
    2
}

fn input(msg: impl Into<String>) -> anyhow::Error {
    anyhow!(Error::Parameter(msg.into()))
}

fn emit(path: Option<&Path>, text: &str) -> anyhow::Result<()> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(Error::from).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn read_mixture(path: &Path) -> anyhow::Result<MixtureSpec> {
    let text = std::fs::read_to_string(path).map_err(Error::from).with_context(|| format!("reading {}", path.display()))?;
    from_json(&text).with_context(|| format!("parsing mixture {}", path.display()))
}

fn mixture_arg(flag: Option<PathBuf>, cfg: Option<MixtureSpec>) -> anyhow::Result<Option<MixtureSpec>> {
    match flag {
        Some(p) => Ok(Some(read_mixture(&p)?)),
        None => Ok(cfg),
    }
}

fn read_data(flag: Option<PathBuf>, cfg: Option<PathBuf>) -> anyhow::Result<Vec<f64>> {
    let p = flag.or(cfg).ok_or_else(|| input("no data file given"))?;
    read_observations(&p).with_context(|| format!("reading {}", p.display()))
}

fn parse_enum<T: serde::de::DeserializeOwned>(what: &str, s: &str) -> anyhow::Result<T> {
    serde_json::from_value(serde_json::Value::String(s.to_string()))
        .map_err(|_| input(format!("unknown {what} '{s}'")))
}

/// Resolved fit settings: family, engine config and restart count.
struct Resolved {
    family: Family,
    cfg: FitConfig,
    restarts: usize,
}

fn resolve_fit(args: &FitArgs, file: &FitSection, default_div: &str, default_restarts: usize) -> anyhow::Result<Resolved> {
    let family: Family = args.family.as_deref().or(file.family.as_deref()).unwrap_or("poisson").parse()?;
    let mut cfg = file.engine.clone().unwrap_or_default();
    let div_id = args.div.as_deref().or(file.div.as_deref());
    let param = args.div_param.or(file.div_param);
    match div_id {
        Some(id) => cfg.divergence = Divergence::from_id(id, param)?,
        None if file.engine.is_none() => cfg.divergence = Divergence::from_id(default_div, param)?,
        None => {}
    }
    if let Some(p) = args.pi_update.as_deref().or(file.pi_update.as_deref()) {
        cfg.pi_update = Some(parse_enum::<PiUpdate>("pi update", p)?);
    }
    if let Some(v) = args.max_iters.or(file.max_iters) {
        cfg.max_iters = v;
    }
    if let Some(v) = args.tol.or(file.tol) {
        cfg.tol = v;
    }
    if let Some(v) = args.seed.or(file.seed) {
        cfg.seed = v;
    }
    cfg.validate(family)?;
    Ok(Resolved { family, cfg, restarts: args.restarts.or(file.restarts).unwrap_or(default_restarts) })
}

fn parse_kernel(name: &str, a: Option<u32>) -> anyhow::Result<DiscreteKernel> {
    Ok(match name.to_ascii_lowercase().as_str() {
        "empirical" => DiscreteKernel::Empirical,
        "triangular" => DiscreteKernel::Triangular { a: a.unwrap_or(1) },
        "poisson" => DiscreteKernel::Poisson,
        "binomial" => DiscreteKernel::Binomial,
        "negbinomial" | "negative_binomial" | "nb" => DiscreteKernel::NegBinomial,
        other => return Err(input(format!("unknown kernel '{other}'"))),
    })
}

// ---- fit ------------------------------------------------------------------

pub struct FitOpts {
    pub data: Option<PathBuf>,
    pub config: Option<PathBuf>,
    pub fit: FitArgs,
    pub k: Option<usize>,
    pub kernel: Option<String>,
    pub kernel_a: Option<u32>,
    pub bandwidth: Option<f64>,
    pub init: Option<String>,
    pub theta0: Option<PathBuf>,
    pub output: Option<PathBuf>,
}

pub fn fit(o: FitOpts) -> anyhow::Result<()> {
    let file: config::FitFile = config::load(o.config.as_deref())?;
    let mut r = resolve_fit(&o.fit, &file.fit, "kl", 1)?;
    let k = o.k.or(file.k).unwrap_or(2);
    let data = read_data(o.data, file.data)?;
    let theta0 = mixture_arg(o.theta0, file.theta0)?;
    let init = o.init.as_deref().unwrap_or(if theta0.is_some() { "user" } else { "kmeans" });
    match init {
        "kmeans" => r.cfg.init = Init::Kmeans,
        "user" => {
            let theta0 = theta0.ok_or_else(|| input("--init user needs --theta0"))?;
            r.cfg.init = Init::User { theta0 };
        }
        other => bail!(input(format!("unknown init '{other}'"))),
    }
    r.cfg.validate(r.family)?;
    let kernel = parse_kernel(o.kernel.as_deref().or(file.kernel.as_deref()).unwrap_or("empirical"), o.kernel_a.or(file.kernel_a))?;
    let est = if r.family.is_count() {
        let counts = to_counts(&data)?;
        let c = o.bandwidth.or(file.bandwidth).unwrap_or_else(|| Bandwidth::default().value(counts.len()));
        smoothed_pmf(&counts, kernel, c)?
    } else {
        default_estimate(&data, r.family)?
    };
    let res: FitResult = fit_multistart(&est, r.family, k, &r.cfg, r.restarts)?;
    emit(o.output.or(file.output).as_deref(), &(to_json(&res)? + "\n"))
}

// ---- simulate / robust ------------------------------------------------------

fn methods_from(ids: &[String]) -> anyhow::Result<Vec<Method>> {
    if ids.is_empty() {
        bail!(input("no methods given"));
    }
    ids.iter().map(|id| Ok(Method::new(id, FitConfig::new(Divergence::from_id(id, None)?)))).collect()
}

/// One row per method and ε, each cell `Ave (StD)`.
fn ave_std_table(table: &BiasTable, truth: &MixtureSpec, methods: &[Method], eps: &[f64]) -> String {
    let names = param_names(truth.k(), truth.family());
    let mut s = format!("method,epsilon,{}\n", names.join(","));
    for m in methods {
        for &e in eps {
            let _ = write!(s, "{},{e}", m.name);
            for p in &names {
                match table.get(&m.name, e, p) {
                    Some(r) => {
                        let _ = write!(s, ",{:.3} ({:.3})", r.mean, r.sd);
                    }
                    None => s.push_str(",NA"),
                }
            }
            s.push('\n');
        }
    }
    s
}

pub struct SimOpts {
    pub config: Option<PathBuf>,
    pub truth: Option<PathBuf>,
    pub n: Option<usize>,
    pub reps: Option<usize>,
    pub methods: Option<Vec<String>>,
    pub eps: Option<Vec<f64>>,
    pub value: Option<f64>,
    pub seed: Option<u64>,
    pub restarts: Option<usize>,
    pub out_dir: Option<PathBuf>,
}

pub fn simulate(o: SimOpts) -> anyhow::Result<()> {
    let file: config::SimulateFile = config::load(o.config.as_deref())?;
    let truth = mixture_arg(o.truth, file.truth)?.ok_or_else(|| input("simulate needs a truth"))?;
    let n = o.n.or(file.n).unwrap_or(200);
    let reps = o.reps.or(file.reps).unwrap_or(200);
    let eps = o.eps.or(file.eps).unwrap_or_else(|| vec![0.0]);
    let value = o.value.or(file.value).unwrap_or(50.0);
    let seed = o.seed.or(file.seed).unwrap_or(0);
    let dir = o.out_dir.or(file.out_dir).unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&dir).map_err(Error::from)?;
    if reps == 0 || n == 0 {
        bail!(input("reps and n must be positive"));
    }
    if reps == 1 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let clean = truth.sample(n, &mut rng);
        let e = eps.first().copied().unwrap_or(0.0);
        let spec = ContaminationSpec { epsilon: e, mechanism: Mechanism::PointMass { value }, seed };
        let data = contaminate(&clean, &spec)?;
        return emit(Some(&dir.join("data.csv")), &dmmix::io::format_observations(&data));
    }
    let methods = methods_from(&o.methods.or(file.methods).unwrap_or_else(|| vec!["em".into()]))?;
    let cfg = BiasConfig {
        eps_grid: eps.clone(),
        n,
        reps,
        seed,
        value,
        restarts: o.restarts.or(file.restarts).unwrap_or(1),
    };
    let table = bias_curve(&truth, &methods, &cfg)?;
    emit(Some(&dir.join("estimates.csv")), &table.to_csv())?;
    emit(Some(&dir.join("summary.csv")), &ave_std_table(&table, &truth, &methods, &eps))
}

pub struct RobustOpts {
    pub config: Option<PathBuf>,
    pub truth: Option<PathBuf>,
    pub n: Option<usize>,
    pub reps: Option<usize>,
    pub methods: Option<Vec<String>>,
    pub eps: Option<Vec<f64>>,
    pub value: Option<f64>,
    pub seed: Option<u64>,
    pub restarts: Option<usize>,
    pub output: Option<PathBuf>,
}

pub fn robust(o: RobustOpts) -> anyhow::Result<()> {
    let file: config::SimulateFile = config::load(o.config.as_deref())?;
    if file.out_dir.is_some() {
        bail!(input("robust writes a single table; use output instead of out_dir"));
    }
    let truth = mixture_arg(o.truth, file.truth)?.ok_or_else(|| input("robust needs a truth"))?;
    let d = BiasConfig::default();
    let cfg = BiasConfig {
        eps_grid: o.eps.or(file.eps).unwrap_or(d.eps_grid),
        n: o.n.or(file.n).unwrap_or(d.n),
        reps: o.reps.or(file.reps).unwrap_or(d.reps),
        seed: o.seed.or(file.seed).unwrap_or(d.seed),
        value: o.value.or(file.value).unwrap_or(d.value),
        restarts: o.restarts.or(file.restarts).unwrap_or(d.restarts),
    };
    let ids = o.methods.or(file.methods).unwrap_or_else(|| vec!["em".into(), "hd".into(), "vned".into()]);
    let table = bias_curve(&truth, &methods_from(&ids)?, &cfg)?;
    emit(o.output.as_deref(), &table.to_csv())
}

// ---- select -----------------------------------------------------------------

pub struct SelectOpts {
    pub data: Option<PathBuf>,
    pub config: Option<PathBuf>,
    pub fit: FitArgs,
    pub k_max: Option<usize>,
    pub splits: Option<usize>,
    pub split_ratio: Option<f64>,
    pub output: Option<PathBuf>,
    pub table: Option<PathBuf>,
}

pub fn select(o: SelectOpts) -> anyhow::Result<()> {
    let file: config::SelectFile = config::load(o.config.as_deref())?;
    let d = SelectionConfig::default();
    let r = resolve_fit(&o.fit, &file.fit, "kl", d.restarts)?;
    let data = read_data(o.data, file.data)?;
    let cfg = SelectionConfig {
        k_max: o.k_max.or(file.k_max).unwrap_or(d.k_max),
        penalty: file.penalty.unwrap_or(d.penalty),
        splits: o.splits.or(file.splits).unwrap_or(d.splits),
        split_ratio: o.split_ratio.or(file.split_ratio).unwrap_or(d.split_ratio),
        seed: r.cfg.seed,
        restarts: r.restarts,
        fit: r.cfg,
    };
    let res = split_select_estimate(&data, r.family, &cfg)?;
    if let Some(t) = o.table.or(file.table) {
        emit(Some(&t), &res.table_csv())?;
    }
    emit(o.output.or(file.output).as_deref(), &(to_json(&res)? + "\n"))
}

// ---- infer ------------------------------------------------------------------

pub struct InferOpts {
    pub data: Option<PathBuf>,
    pub config: Option<PathBuf>,
    pub fit: FitArgs,
    pub k: Option<usize>,
    pub theta: Option<PathBuf>,
    pub wilks: bool,
    pub theta_ref: Option<PathBuf>,
    pub grad_tol: Option<f64>,
    pub truth: Option<PathBuf>,
    pub n: Option<usize>,
    pub reps: Option<usize>,
    pub output: Option<PathBuf>,
}

pub fn infer(o: InferOpts) -> anyhow::Result<()> {
    let file: config::InferFile = config::load(o.config.as_deref())?;
    let r = resolve_fit(&o.fit, &file.fit, "kl", 1)?;
    let out = o.output.or(file.output);
    let data_path = o.data.or(file.data);
    let truth = mixture_arg(o.truth, file.truth)?;
    if data_path.is_none() {
        let truth = truth.ok_or_else(|| input("infer needs data or a truth for the Monte Carlo harness"))?;
        let d = CltConfig::default();
        let cfg = CltConfig {
            n: o.n.or(file.n).unwrap_or(d.n),
            reps: o.reps.or(file.reps).unwrap_or(d.reps),
            seed: r.cfg.seed,
            fit: r.cfg,
            ..d
        };
        let s = clt_harness(&truth, &cfg)?;
        return emit(out.as_deref(), &(to_json(&s)? + "\n"));
    }
    let data = read_data(data_path, None)?;
    let est = default_estimate(&data, r.family)?;
    let theta = match mixture_arg(o.theta, file.theta)? {
        Some(t) => t,
        None => fit_multistart(&est, r.family, o.k.or(file.k).unwrap_or(2), &r.cfg, r.restarts)?.theta_hat,
    };
    let theta_ref = mixture_arg(o.theta_ref, file.theta_ref)?;
    if o.wilks && theta_ref.is_none() {
        bail!(input("--wilks needs --theta-ref"));
    }
    let target = Target::new(&est, r.family, theta_ref.as_ref().or(Some(&theta)), r.cfg.tail_mass)?;
    let rep = report(&theta, &target, r.cfg.divergence, theta_ref.as_ref(), data.len(), o.grad_tol.or(file.grad_tol).unwrap_or(1e-3))?;
    emit(out.as_deref(), &(to_json(&rep)? + "\n"))
}

// ---- segment ----------------------------------------------------------------

pub struct SegmentOpts {
    pub image: Option<PathBuf>,
    pub config: Option<PathBuf>,
    pub fit: FitArgs,
    pub k: Option<usize>,
    pub contamination: Option<f64>,
    pub contamination_mean: Option<f64>,
    pub display: Option<Vec<u8>>,
    pub output: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub recolored: Option<PathBuf>,
}

#[derive(Serialize)]
struct SegmentReport<'a> {
    theta: &'a MixtureSpec,
    display: &'a [u8],
    class_counts: Vec<usize>,
    fit: &'a FitResult,
}

fn read_image(path: &Path) -> anyhow::Result<GrayImage> {
    let is_csv = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    if !is_csv {
        return read_pgm(path).with_context(|| format!("reading {}", path.display()));
    }
    let text = std::fs::read_to_string(path).map_err(Error::from)?;
    let px = parse_observations(&text)?
        .into_iter()
        .map(|v| {
            if v.fract() == 0.0 && (0.0..=255.0).contains(&v) {
                Ok(v as u8)
            } else {
                Err(input(format!("pixel value {v} is not an integer in 0..=255")))
            }
        })
        .collect::<anyhow::Result<Vec<u8>>>()?;
    Ok(GrayImage::new(px.len(), 1, px)?)
}

pub fn segment(o: SegmentOpts) -> anyhow::Result<()> {
    let file: config::SegmentFile = config::load(o.config.as_deref())?;
    let r = resolve_fit(&o.fit, &file.fit, "kl", 1)?;
    if r.family != Family::Poisson {
        bail!(input("segmentation uses the Poisson family"));
    }
    let k = o.k.or(file.k).unwrap_or(3);
    let path = o.image.or(file.image).ok_or_else(|| input("no image given"))?;
    let mut img = read_image(&path)?;
    if let Some(p) = o.contamination.or(file.contamination) {
        let mean = o.contamination_mean.or(file.contamination_mean).unwrap_or(250.0);
        img = contaminate_image(&img, p, mean, r.cfg.seed)?;
    }
    let display = o.display.or(file.display).unwrap_or_else(|| display_values(k));
    if display.len() != k {
        bail!(input(format!("{} display values for {k} classes", display.len())));
    }
    let seg = segment_image(&img, k, &r.cfg)?;
    let mut class_counts = vec![0; k];
    for &l in &seg.labels.labels {
        class_counts[usize::from(l) - 1] += 1;
    }
    if let Some(p) = o.labels.or(file.labels) {
        emit(Some(&p), &seg.labels.to_csv())?;
    }
    if let Some(p) = o.recolored.or(file.recolored) {
        write_pgm(&p, &seg.labels.render(&display)?, true)?;
    }
    let rep = SegmentReport { theta: &seg.theta, display: &display, class_counts, fit: &seg.fit };
    emit(o.output.or(file.output).as_deref(), &(serde_json::to_string_pretty(&rep).map_err(Error::from)? + "\n"))
}

// ---- kernels ----------------------------------------------------------------

pub struct KernelOpts {
    pub config: Option<PathBuf>,
    pub kernel: Option<String>,
    pub kernel_a: Option<u32>,
    pub c: Option<Vec<f64>>,
    pub center_max: Option<i64>,
    pub data: Option<PathBuf>,
    pub truth: Option<PathBuf>,
    pub output: Option<PathBuf>,
}

pub fn kernels(o: KernelOpts) -> anyhow::Result<()> {
    let file: config::KernelsFile = config::load(o.config.as_deref())?;
    let name = o.kernel.or(file.kernel).unwrap_or_else(|| "poisson".into());
    let kernel = parse_kernel(&name, o.kernel_a.or(file.kernel_a))?;
    let cs = o.c.or(file.c).unwrap_or_else(|| vec![0.2, 0.1, 0.05]);
    let out = o.output.or(file.output);
    let data_path = o.data.or(file.data);
    if data_path.is_some() {
        let data = read_data(data_path, None)?;
        let truth = mixture_arg(o.truth, file.truth)?.ok_or_else(|| input("an ISE report needs a truth"))?;
        let counts = to_counts(&data)?;
        let mut s = String::from("kernel,c,ise\n");
        for &c in &cs {
            let est = smoothed_pmf(&counts, kernel, c)?;
            let _ = writeln!(s, "{name},{c},{}", ise(&est, &truth)?);
        }
        return emit(out.as_deref(), &s);
    }
    let center_max = o.center_max.or(file.center_max).unwrap_or(10);
    if center_max < 0 {
        bail!(input("center_max must be nonnegative"));
    }
    let mut s = String::from("kernel,center,c,start,row_sum,mean,variance\n");
    for y in 0..=center_max {
        for &c in &cs {
            let (start, row) = kernel_row(kernel, y, c)?;
            let (m, v) = kernel_moments(kernel, y, c)?;
            let _ = writeln!(s, "{name},{y},{c},{start},{},{m},{v}", row.iter().sum::<f64>());
        }
    }
    emit(out.as_deref(), &s)
}
