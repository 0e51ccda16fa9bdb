use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use vbpp::baseline::{fit_bandwidth, ks_log_predictive, KsModel};
use vbpp::bound::kl_qu_pu;
use vbpp::optimizer::{FitConfig, InitSpec, InducingSpec, MapPrior};
use vbpp::pointdata::midpoint_grid;
use vbpp::predictive::{default_grid, posterior_intensity, predictive_report, PredictiveReport};
use vbpp::rng::Purpose;
use vbpp::simulate::{self, GroundTruth, Link, TruthGrid};
use vbpp::{load_events, save_events, Domain, EventSet, HyperParams, Model, VbppError};

use crate::args::*;
use crate::CliError;

type Result<T> = std::result::Result<T, CliError>;

#[derive(Serialize)]
struct Manifest<'a, A: Serialize> {
    tool: &'static str,
    version: &'static str,
    command: &'static str,
    output: &'a Path,
    args: &'a A,
}

fn manifest_path(out: &Path) -> PathBuf {
    out.with_extension("manifest.json")
}

/// Writes `<out stem>.manifest.json` beside each output.
fn write_manifests<A: Serialize>(command: &'static str, args: &A, outputs: &[&Path]) -> Result<()> {
    for out in outputs {
        let m = Manifest {
            tool: "vbpp",
            version: env!("CARGO_PKG_VERSION"),
            command,
            output: out,
            args,
        };
        write_text(&manifest_path(out), &(serde_json::to_string_pretty(&m).map_err(VbppError::from)? + "\n"))?;
    }
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| CliError::Failed(format!("{}: {e}", path.display())))
}

fn sibling(out: &Path, suffix: &str) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    out.with_file_name(format!("{stem}.{suffix}"))
}

fn parse_domain(spec: &str) -> Result<Domain> {
    Domain::parse(spec).map_err(|e| CliError::Usage(format!("--domain: {e}")))
}

fn per_dim(arg: &Option<Vec<usize>>, dims: usize, default: Vec<usize>) -> Result<Vec<usize>> {
    match arg {
        None => Ok(default),
        Some(v) if v.len() == 1 => Ok(vec![v[0]; dims]),
        Some(v) if v.len() == dims => Ok(v.clone()),
        Some(_) => Err(CliError::Usage(format!("grid needs 1 or {dims} values"))),
    }
}

fn load(path: &Path, d: &Domain) -> Result<EventSet> {
    load_events(path, d).map_err(|e| CliError::Failed(format!("{}: {e}", path.display())))
}

fn check_split(p: Option<f64>) -> Result<()> {
    if let Some(p) = p {
        if !(0.0..=1.0).contains(&p) {
            return Err(CliError::Usage("--split must lie in [0, 1]".into()));
        }
    }
    Ok(())
}

fn fmt(v: f64) -> String {
    format!("{v:?}")
}

pub fn simulate(a: &SimulateArgs) -> Result<()> {
    let d = parse_domain(&a.domain)?;
    let r = d.dims();
    let alpha = match a.alpha.len() {
        1 => vec![a.alpha[0]; r],
        n if n == r => a.alpha.clone(),
        _ => return Err(CliError::Usage(format!("--alpha needs 1 or {r} values"))),
    };
    let h = HyperParams::new(a.gamma, alpha, 0.0).map_err(|e| CliError::Usage(e.to_string()))?;
    let grid = per_dim(&a.grid, r, simulate::default_grid(r))?;
    let link = match a.link {
        LinkArg::Square => Link::Square,
        LinkArg::Sigmoid => Link::Sigmoid {
            lambda_star: a.lambda_star.ok_or_else(|| CliError::Usage("--lambda-star is required".into()))?,
        },
    };
    let truth = GroundTruth::generate(&h, &d, &grid, link, a.seed)?;
    let events = simulate::thin_sample_stream(&truth.grid, a.seed, Purpose::Thinning)?;
    save_events(&a.out, &events)?;
    simulate::save_truth(&a.truth_out, &truth)?;
    let mut outs: Vec<&Path> = vec![&a.out, &a.truth_out];
    if let Some(t) = &a.test_out {
        let test = simulate::thin_sample_stream(&truth.grid, a.seed, Purpose::TestThinning)?;
        save_events(t, &test)?;
        outs.push(t);
    }
    write_manifests("simulate", a, &outs)?;
    eprintln!(
        "simulated {} events (expected {:.3}) on {}",
        events.len(),
        truth.grid.integral(),
        d.to_spec()
    );
    Ok(())
}

fn inducing_spec(a: &FitArgs, dims: usize) -> Result<InducingSpec> {
    let spec = match (&a.inducing, &a.inducing_per_dim) {
        (Some(m), None) => InducingSpec::Total(*m),
        (None, Some(v)) => InducingSpec::PerDim(v.clone()),
        _ => return Err(CliError::Usage("one of --inducing or --inducing-per-dim is required".into())),
    };
    spec.per_dim(dims).map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(spec)
}

pub fn fit(a: &FitArgs) -> Result<()> {
    let d = parse_domain(&a.domain)?;
    let spec = inducing_spec(a, d.dims())?;
    check_split(a.split.split)?;
    let cfg = FitConfig {
        max_iters: a.max_iters,
        grad_tol: a.grad_tol,
        optimize_z: a.optimize_z,
        map_prior: a.map.then_some(MapPrior::Default),
        init: InitSpec::default(),
        seed: a.split.seed,
    };
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let all = load(&a.data, &d)?;
    let train = match a.split.split {
        Some(p) => all.split(p, a.split.seed).0,
        None => all,
    };
    let model = vbpp::fit(&train, &d, &spec, &cfg).map_err(|e| CliError::Failed(format!("fit failed: {e}")))?;
    write_text(&a.out, &(model.to_json()? + "\n"))?;
    let trace_path = a.trace.clone().unwrap_or_else(|| sibling(&a.out, "trace.csv"));
    let meta = model.fit_metadata().expect("fit records metadata");
    let mut csv = String::from("iteration,objective,grad_norm\n");
    for t in &meta.trace {
        csv.push_str(&format!("{},{},{}\n", t.iteration, fmt(t.objective), fmt(t.grad_norm)));
    }
    write_text(&trace_path, &csv)?;
    write_manifests("fit", a, &[&a.out, &trace_path])?;
    eprintln!(
        "fitted M = {} to {} events: elbo {:.6}, {} iterations{}",
        model.num_inducing(),
        train.len(),
        meta.elbo,
        meta.iterations,
        if meta.converged { "" } else { " (not converged)" }
    );
    Ok(())
}

fn load_model(path: &Path) -> Result<Model> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Failed(format!("{}: {e}", path.display())))?;
    Model::from_json(&text).map_err(|e| CliError::Failed(format!("{}: {e}", path.display())))
}

fn intensity_csv(model: &Model, query: &vbpp::nalgebra::DMatrix<f64>) -> Result<String> {
    let s = posterior_intensity(model, query)?;
    let r = query.ncols();
    let mut out: Vec<String> = (1..=r).map(|k| format!("x{k}")).collect();
    out.extend(["mean", "lower", "upper"].map(String::from));
    let mut text = out.join(",") + "\n";
    for (i, p) in s.iter().enumerate() {
        let mut row: Vec<String> = (0..r).map(|k| fmt(query[(i, k)])).collect();
        row.extend([fmt(p.mean), fmt(p.lower), fmt(p.upper)]);
        text.push_str(&(row.join(",") + "\n"));
    }
    Ok(text)
}

fn plot_grid(d: &Domain, arg: &Option<Vec<usize>>) -> Result<Vec<usize>> {
    let def = match d.dims() {
        1 => vec![512],
        2 => vec![64, 64],
        r => vec![16; r],
    };
    per_dim(arg, d.dims(), def)
}

pub fn predict(a: &PredictArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let d = model.domain().clone();
    let query = match &a.query {
        Some(p) => load(p, &d)?.points().clone(),
        None => midpoint_grid(&d, &plot_grid(&d, &a.grid)?)?,
    };
    write_text(&a.out, &intensity_csv(&model, &query)?)?;
    write_manifests("predict", a, &[&a.out])?;
    Ok(())
}

#[derive(Serialize)]
struct KsSummary {
    log_predictive: f64,
    sigma: Vec<f64>,
    end_correction: bool,
}

#[derive(Serialize)]
struct Rmse {
    vbpp: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    ks: Option<f64>,
}

#[derive(Serialize)]
struct EvaluateReport {
    n_test: usize,
    #[serde(flatten)]
    predictive: PredictiveReport,
    /// KL(q(u) || p(u)); on the training data `l_p` equals the bound plus this.
    kl: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    ks: Option<KsSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    rmse: Option<Rmse>,
}

fn ks_intensity_on(truth: &TruthGrid, ks: &KsModel) -> Vec<f64> {
    (0..truth.points.nrows())
        .map(|i| ks.intensity(&truth.points.row(i).iter().copied().collect::<Vec<_>>()))
        .collect()
}

pub fn evaluate(a: &EvaluateArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let d = model.domain().clone();
    if let Some(spec) = &a.domain {
        let given = parse_domain(spec)?;
        if given != d {
            return Err(CliError::Failed(format!(
                "model/domain mismatch: model is on {}, --domain is {}",
                d.to_spec(),
                given.to_spec()
            )));
        }
    }
    check_split(a.split.split)?;
    let (train, test) = match (&a.test, &a.data, a.split.split) {
        (Some(t), None, _) => (None, load(t, &d)?),
        (None, Some(p), Some(s)) => {
            let (tr, te) = load(p, &d)?.split(s, a.split.seed);
            (Some(tr), te)
        }
        _ => return Err(CliError::Usage("give --test, or --data with --split".into())),
    };
    let train = match &a.train {
        Some(p) => Some(load(p, &d)?),
        None => train,
    };
    let mc_grid = per_dim(&a.mc_grid, d.dims(), default_grid(d.dims()))?;
    let predictive = predictive_report(&model, &test, a.samples, &mc_grid, a.mc_seed)?;
    let ks_model = if a.baseline {
        let tr = train.ok_or_else(|| CliError::Usage("--baseline needs --train or --data with --split".into()))?;
        Some(fit_bandwidth(&tr, &d, true)?)
    } else {
        None
    };
    let ks = match &ks_model {
        Some(k) => Some(KsSummary {
            log_predictive: ks_log_predictive(k, &test)?,
            sigma: k.sigma.clone(),
            end_correction: k.end_correction,
        }),
        None => None,
    };
    let rmse = match &a.truth {
        Some(p) => {
            let truth = simulate::load_truth(p, &d)?;
            let mean: Vec<f64> = posterior_intensity(&model, &truth.points)?.iter().map(|s| s.mean).collect();
            Some(Rmse {
                vbpp: simulate::rmse(&truth, &mean)?,
                ks: match &ks_model {
                    Some(k) => Some(simulate::rmse(&truth, &ks_intensity_on(&truth, k))?),
                    None => None,
                },
            })
        }
        None => None,
    };
    let report = EvaluateReport {
        n_test: test.len(),
        predictive,
        kl: kl_qu_pu(&model)?,
        ks,
        rmse,
    };
    write_text(&a.out, &(serde_json::to_string_pretty(&report).map_err(VbppError::from)? + "\n"))?;
    let ipath = a.intensity_out.clone().unwrap_or_else(|| sibling(&a.out, "intensity.csv"));
    let grid = midpoint_grid(&d, &plot_grid(&d, &a.grid)?)?;
    write_text(&ipath, &intensity_csv(&model, &grid)?)?;
    write_manifests("evaluate", a, &[&a.out, &ipath])?;
    let mut err = std::io::stderr();
    let _ = writeln!(
        err,
        "l_p {:.4}  l_0 {:.4}  M_p {:.4} ± {:.4}  M_0 {:.4} ± {:.4}",
        report.predictive.l_p,
        report.predictive.l_0,
        report.predictive.m_p_hat.estimate,
        report.predictive.m_p_hat.stderr,
        report.predictive.m_0_hat.estimate,
        report.predictive.m_0_hat.stderr
    );
    Ok(())
}

#[derive(Serialize)]
struct BaselineReport {
    #[serde(flatten)]
    model: vbpp::baseline::KsDoc,
    #[serde(skip_serializing_if = "Option::is_none")]
    n_test: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    log_predictive: Option<f64>,
}

pub fn baseline(a: &BaselineArgs) -> Result<()> {
    let d = parse_domain(&a.domain)?;
    check_split(a.split.split)?;
    let all = load(&a.data, &d)?;
    let (train, split_test) = match a.split.split {
        Some(p) => {
            let (tr, te) = all.split(p, a.split.seed);
            (tr, Some(te))
        }
        None => (all, None),
    };
    let test = match &a.test {
        Some(p) => Some(load(p, &d)?),
        None => split_test,
    };
    let ks = fit_bandwidth(&train, &d, !a.no_end_correction)?;
    let log_predictive = match &test {
        Some(t) => Some(ks_log_predictive(&ks, t)?),
        None => None,
    };
    let report = BaselineReport {
        model: ks.to_doc(&a.data.display().to_string()),
        n_test: test.as_ref().map(|t| t.len()),
        log_predictive,
    };
    write_text(&a.out, &(serde_json::to_string_pretty(&report).map_err(VbppError::from)? + "\n"))?;
    let ipath = a.intensity_out.clone().unwrap_or_else(|| sibling(&a.out, "intensity.csv"));
    let grid = midpoint_grid(&d, &plot_grid(&d, &a.grid)?)?;
    let r = d.dims();
    let mut head: Vec<String> = (1..=r).map(|k| format!("x{k}")).collect();
    head.push("lambda".into());
    let mut text = head.join(",") + "\n";
    for i in 0..grid.nrows() {
        let x: Vec<f64> = grid.row(i).iter().copied().collect();
        let mut row: Vec<String> = x.iter().map(|v| fmt(*v)).collect();
        row.push(fmt(ks.intensity(&x)));
        text.push_str(&(row.join(",") + "\n"));
    }
    write_text(&ipath, &text)?;
    write_manifests("baseline", a, &[&a.out, &ipath])?;
    Ok(())
}
