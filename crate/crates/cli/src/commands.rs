use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use serde::Serialize;
use serde_json::{json, Value};

use preavg::estimate::{build_report, load_series_csv, QuantileSource, ReportOptions};
use preavg::expansion::{expansion_coefficients, EdgeworthLaw, ExpansionCoefficients, ExpansionConstants, MonteCarloSpec};
use preavg::experiments::{density_table, run_study_with_records, GridReport, ReplicationRecord, StudyReport};
use preavg::rng::SeedKey;
use preavg::simulate::{add_noise, fmt17, simulate_latent, write_path_csv, ModelSpec, SimOptions};
use preavg::weights::{
    psi_discrete, psi_limits, tent_psi_discrete_exact, tent_psi_limits_exact, validate_grid, WeightFunction,
    WeightKind, WeightScheme,
};
use preavg::{Error, Result};

use crate::config::{self, parse_study, ModelKind};
use crate::{EstimateArgs, ExpandArgs, Format, Globals, ModelArg, ModelParams, PsiArgs, SimulateArgs, StudyArgs};

fn sink(out: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match out {
        Some(p) => Box::new(BufWriter::new(File::create(p).map_err(|e| Error::Io(format!("{}: {e}", p.display())))?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn write_json<T: Serialize>(w: &mut dyn Write, value: &T) -> Result<()> {
    serde_json::to_writer_pretty(&mut *w, value).map_err(|e| Error::Io(e.to_string()))?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn write_pairs(w: &mut dyn Write, rows: &[(&str, String)]) -> Result<()> {
    writeln!(w, "field,value")?;
    for (k, v) in rows {
        writeln!(w, "{k},{v}")?;
    }
    w.flush()?;
    Ok(())
}

fn opt17(v: Option<f64>) -> String {
    v.map(fmt17).unwrap_or_default()
}

/// Reads `x,g(x)` knots; blank lines and `#` comments are skipped, a
/// leading `x,g` header is tolerated.
fn read_weight_table(path: &Path) -> Result<WeightFunction> {
    let text = fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    let mut knots = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(|c: char| c == ',' || c.is_whitespace()).filter(|s| !s.is_empty()).collect();
        let parsed: Option<Vec<f64>> = fields.iter().map(|s| s.parse().ok()).collect();
        match parsed {
            Some(v) if v.len() == 2 => knots.push((v[0], v[1])),
            None if knots.is_empty() && fields.len() == 2 => continue,
            _ => {
                return Err(Error::InvalidWeight(format!(
                    "{} line {}: expected two numbers `x,g`, found `{line}`",
                    path.display(),
                    idx + 1
                )))
            }
        }
    }
    WeightFunction::from_table(&knots)
}

pub fn psi(args: &PsiArgs, g: &Globals) -> Result<()> {
    let weight = if args.weight == "tent" {
        WeightFunction::tent()
    } else {
        read_weight_table(Path::new(&args.weight))?
    };
    if args.exact && weight.kind() != WeightKind::Tent {
        return Err(Error::InvalidConfig("--exact is only available for the tent".into()));
    }
    let show_limits = args.limits || args.kn.is_empty();
    let discrete = args
        .kn
        .iter()
        .map(|&k| psi_discrete(&weight, k))
        .collect::<Result<Vec<_>>>()?;
    let exact = if args.exact {
        args.kn.iter().map(|&k| tent_psi_discrete_exact(k)).collect::<Result<Vec<_>>>()?
    } else {
        Vec::new()
    };
    let limits = if show_limits { Some(psi_limits(&weight, args.panels)?) } else { None };
    let limits_exact = args.exact.then(tent_psi_limits_exact);

    let mut w = sink(g.out.as_deref())?;
    match g.format.unwrap_or(Format::Csv) {
        Format::Csv => {
            if !discrete.is_empty() {
                write!(w, "k_n,psi1n,psi2n,psi3n,psi4n")?;
                if args.exact {
                    write!(w, ",psi1n_exact,psi2n_exact,psi3n_exact,psi4n_exact")?;
                }
                writeln!(w)?;
                for (i, d) in discrete.iter().enumerate() {
                    write!(w, "{},{},{},{},{}", d.k_n, fmt17(d.psi1n), fmt17(d.psi2n), fmt17(d.psi3n), fmt17(d.psi4n))?;
                    if let Some(ex) = exact.get(i) {
                        write!(w, ",{},{},{},{}", ex[0], ex[1], ex[2], ex[3])?;
                    }
                    writeln!(w)?;
                }
            }
            if let Some(l) = limits {
                if !discrete.is_empty() {
                    writeln!(w)?;
                }
                write!(w, "constant,value")?;
                if args.exact {
                    write!(w, ",exact")?;
                }
                writeln!(w)?;
                for (i, v) in l.as_array().iter().enumerate() {
                    write!(w, "psi{},{}", i + 1, fmt17(*v))?;
                    if let Some(ex) = limits_exact {
                        write!(w, ",{}", ex[i])?;
                    }
                    writeln!(w)?;
                }
            }
            w.flush()?;
        }
        Format::Json => {
            let mut doc = serde_json::Map::new();
            doc.insert("weight".into(), json!(weight.label()));
            if !discrete.is_empty() {
                let rows: Vec<Value> = discrete
                    .iter()
                    .enumerate()
                    .map(|(i, d)| {
                        let mut v = serde_json::to_value(d).expect("plain struct");
                        if let Some(ex) = exact.get(i) {
                            v["exact"] = json!(ex.iter().map(|r| r.to_string()).collect::<Vec<_>>());
                        }
                        v
                    })
                    .collect();
                doc.insert("discrete".into(), Value::Array(rows));
            }
            if let Some(l) = limits {
                let mut v = serde_json::to_value(l).expect("plain struct");
                if let Some(ex) = limits_exact {
                    v["exact"] = json!(ex.iter().map(|r| r.to_string()).collect::<Vec<_>>());
                }
                doc.insert("limits".into(), v);
            }
            write_json(&mut *w, &Value::Object(doc))?;
        }
    }
    Ok(())
}

fn model_kind(m: ModelArg) -> ModelKind {
    match m {
        ModelArg::Gbm => ModelKind::Gbm,
        ModelArg::ConstantVol => ModelKind::ConstantVol,
    }
}

/// Model from command-line parameters; `omega` defaults to the noise-ratio rule at `theta`.
fn build_model(kind: ModelArg, p: &ModelParams, x0: f64, omega_default: Option<f64>, theta: f64) -> Result<ModelSpec> {
    let kind = model_kind(kind);
    let omega = match (p.omega, omega_default) {
        (Some(w), _) => w,
        (None, Some(w)) if p.noise_ratio.is_none() => w,
        _ => config::resolve_omega(kind, (p.a, p.sigma, x0, p.b), None, p.noise_ratio, theta)?,
    };
    Ok(match kind {
        ModelKind::Gbm => ModelSpec::gbm(p.a, p.sigma, x0, omega),
        ModelKind::ConstantVol => ModelSpec::constant_vol(p.b, p.drift, x0, omega),
    })
}

pub fn simulate(args: &SimulateArgs, g: &Globals) -> Result<()> {
    let grid = validate_grid(args.n, 2, false)?;
    let theta = args.kn.map_or(1.0, |k| k as f64 / (args.n as f64).sqrt());
    let model = build_model(args.model, &args.params, args.params.x0.unwrap_or(1.0), None, theta)?;
    if args.oversampling == 0 {
        return Err(Error::InvalidConfig("oversampling must be ≥ 1".into()));
    }
    let key = SeedKey::new(g.seed.unwrap_or(0), 0);
    let path = simulate_latent(&model, &grid, key, SimOptions { oversampling: args.oversampling })?;
    let series = add_noise(&path, model.omega, key);
    let mut w = sink(g.out.as_deref())?;
    match g.format.unwrap_or(Format::Csv) {
        Format::Csv => {
            write_path_csv(&mut w, &path, &series)?;
            eprintln!("true_v={} omega={}", fmt17(path.true_v), fmt17(model.omega));
        }
        Format::Json => {
            let dt = grid.delta();
            let t: Vec<f64> = (0..path.x.len()).map(|i| i as f64 * dt).collect();
            write_json(
                &mut *w,
                &json!({
                    "model": model,
                    "seed": key.master,
                    "true_v": path.true_v,
                    "t": t,
                    "x": path.x,
                    "w": path.w,
                    "y": series.y,
                }),
            )?;
        }
    }
    Ok(())
}

fn coefficients_for(
    model: &ModelSpec,
    grid: &preavg::weights::GridSpec,
    paths: usize,
    seed: u64,
    oversampling: usize,
) -> Result<ExpansionCoefficients> {
    let scheme = WeightScheme::tent(grid.k_n)?;
    let constants = ExpansionConstants::new(grid.theta(), model.omega, *scheme.limits());
    let mut mc = MonteCarloSpec::new(paths, seed);
    mc.oversampling = Some(oversampling);
    expansion_coefficients(model, grid, constants, &mc)
}

#[derive(Serialize)]
struct EstimateOutput<'a> {
    #[serde(flatten)]
    report: &'a preavg::estimate::EstimateReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    coefficients: Option<ExpansionCoefficients>,
}

pub fn estimate(args: &EstimateArgs, g: &Globals) -> Result<()> {
    let file = File::open(&args.input).map_err(|e| Error::Io(format!("{}: {e}", args.input.display())))?;
    let series = load_series_csv(io::BufReader::new(file))?;
    let grid = validate_grid(series.n(), args.kn, args.strict)?;
    let scheme = WeightScheme::tent(args.kn)?;
    let mut opts = ReportOptions::with_alpha(args.alpha);
    opts.true_v = args.true_v;
    opts.p_n = args.pn;
    let mut coefficients = None;
    match args.model {
        Some(kind) => {
            let omega_hat = preavg::estimate::estimate_noise_variance(&series)?.sqrt();
            let model = build_model(kind, &args.params, args.params.x0.unwrap_or(series.y[0]), Some(omega_hat), grid.theta())?;
            if let Some(w) = g.workers {
                rayon_pool(w);
            }
            let c = coefficients_for(&model, &grid, args.paths, g.seed.unwrap_or(0), 1)?;
            opts.quantiles = QuantileSource::Edgeworth(EdgeworthLaw::from_coefficients(&c, grid.delta())?);
            coefficients = Some(c);
        }
        None => eprintln!("notice: no --model given; the interval uses normal quantiles"),
    }
    let report = build_report(&series, &scheme, &grid, &opts)?;
    let mut w = sink(g.out.as_deref())?;
    match g.format.unwrap_or(Format::Csv) {
        Format::Json => write_json(&mut *w, &EstimateOutput { report: &report, coefficients })?,
        Format::Csv => {
            let mut rows = vec![
                ("n", report.n.to_string()),
                ("k_n", report.k_n.to_string()),
                ("d_n", report.d_n.to_string()),
                ("v_n", fmt17(report.v_n)),
                ("f_n", fmt17(report.f_n)),
                ("omega2_hat", fmt17(report.omega2_hat)),
                ("b2_edge", opt17(report.b2_edge)),
                ("p_n", report.p_n.map(|p| p.to_string()).unwrap_or_default()),
                ("correction_length", fmt17(report.correction_length)),
                ("v_corrected", fmt17(report.v_corrected)),
                ("z_star", opt17(report.z_star)),
                ("t_stat", opt17(report.t_stat)),
                ("alpha", fmt17(report.ci.alpha)),
                ("ci_lower", fmt17(report.ci.lower)),
                ("ci_upper", fmt17(report.ci.upper)),
                ("q_lower", fmt17(report.ci.quantiles.0)),
                ("q_upper", fmt17(report.ci.quantiles.1)),
                ("corrected", report.ci.corrected.to_string()),
                ("negative_v", report.negative_v.to_string()),
            ];
            if let Some(c) = coefficients {
                rows.push(("lin", fmt17(c.lin)));
                rows.push(("cub", fmt17(c.cub)));
            }
            write_pairs(&mut *w, &rows)?;
        }
    }
    Ok(())
}

/// Sizes the global pool used by the coefficient ensemble.
fn rayon_pool(workers: usize) {
    // fails only if a pool already exists, which then stays in use
    let _ = rayon::ThreadPoolBuilder::new().num_threads(workers).build_global();
}

pub fn expand(args: &ExpandArgs, g: &Globals) -> Result<()> {
    if let Some(w) = g.workers {
        rayon_pool(w);
    }
    let grid = validate_grid(args.n, args.kn, false)?;
    let model = build_model(args.model, &args.params, args.params.x0.unwrap_or(1.0), None, grid.theta())?;
    if args.oversampling == 0 {
        return Err(Error::InvalidConfig("oversampling must be ≥ 1".into()));
    }
    let c = coefficients_for(&model, &grid, args.paths, g.seed.unwrap_or(0), args.oversampling)?;
    let mut w = sink(g.out.as_deref())?;
    match g.format.unwrap_or(Format::Json) {
        Format::Json => write_json(
            &mut *w,
            &json!({
                "n": grid.n,
                "k_n": grid.k_n,
                "theta": grid.theta(),
                "model": model,
                "coefficients": c,
            }),
        )?,
        Format::Csv => {
            let rows = [
                ("n", grid.n.to_string()),
                ("k_n", grid.k_n.to_string()),
                ("theta", fmt17(grid.theta())),
                ("omega", fmt17(model.omega)),
                ("e_h1", fmt17(c.e_h1)),
                ("e_h2", fmt17(c.e_h2)),
                ("e_h3", fmt17(c.e_h3)),
                ("e_h4", fmt17(c.e_h4)),
                ("e_h5", fmt17(c.e_h5)),
                ("lin", fmt17(c.lin)),
                ("cub", fmt17(c.cub)),
                ("lin_stderr", fmt17(c.lin_stderr)),
                ("cub_stderr", fmt17(c.cub_stderr)),
                ("n_paths", c.n_paths.to_string()),
            ];
            write_pairs(&mut *w, &rows)?;
        }
    }
    Ok(())
}

fn grid_tag(r: &GridReport) -> String {
    format!("n{}_k{}", r.n, r.k_n)
}

fn write_replications(path: &Path, records: &[ReplicationRecord], alpha_idx: Option<usize>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "rep_id,v_n,f_n,z_star,t_stat,c_path,covered_95")?;
    for r in records {
        let covered = alpha_idx.map(|j| u8::from(r.covered[j].corrected).to_string()).unwrap_or_default();
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            r.rep_id,
            fmt17(r.v_n),
            fmt17(r.f_n),
            fmt17(r.z_star),
            fmt17(r.t_stat),
            fmt17(r.c_path),
            covered
        )?;
    }
    w.flush()?;
    Ok(())
}

fn write_density(path: &Path, report: &GridReport, records: &[ReplicationRecord], opts: config::DensityOptions) -> Result<()> {
    let law = EdgeworthLaw::from_coefficients(&report.coefficients, 1.0 / report.n as f64)?;
    let t: Vec<f64> = records.iter().map(|r| r.t_stat).collect();
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "y,empirical,normal,edgeworth")?;
    for row in density_table(&t, &law, -opts.range, opts.range, opts.bins) {
        writeln!(w, "{},{},{},{}", fmt17(row.y), fmt17(row.empirical), fmt17(row.normal), fmt17(row.edgeworth))?;
    }
    w.flush()?;
    Ok(())
}

fn write_summary(w: &mut dyn Write, report: &StudyReport) -> Result<()> {
    write!(w, "n,k_n,replications,tainted,t_mean,t_variance,t_skewness,ks_normal,ks_edgeworth,v_rmse")?;
    if let Some(first) = report.grids.first() {
        for c in &first.coverage {
            write!(w, ",normal_{a},corrected_{a},oracle_{a}", a = c.alpha)?;
        }
    }
    writeln!(w)?;
    for r in &report.grids {
        write!(
            w,
            "{},{},{},{},{},{},{},{},{},{}",
            r.n,
            r.k_n,
            r.replications,
            r.tainted,
            fmt17(r.t_mean),
            fmt17(r.t_variance),
            fmt17(r.t_skewness),
            fmt17(r.ks_normal),
            fmt17(r.ks_edgeworth),
            fmt17(r.v_rmse)
        )?;
        for c in &r.coverage {
            write!(w, ",{},{},{}", fmt17(c.normal), fmt17(c.corrected), fmt17(c.oracle))?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

pub fn study(args: &StudyArgs, g: &Globals) -> Result<()> {
    let text = fs::read_to_string(&args.config).map_err(|e| Error::Io(format!("{}: {e}", args.config.display())))?;
    let mut file = parse_study(&text)?;
    if let Some(s) = g.seed {
        file.seed = s;
    }
    if let Some(w) = g.workers {
        file.workers = w;
    }
    if let Some(r) = args.replications {
        file.replications = r;
    }
    let (config, density) = file.into_config()?;
    let dir = g.out.clone().unwrap_or_else(|| "study-output".into());
    fs::create_dir_all(&dir).map_err(|e| Error::Io(format!("{}: {e}", dir.display())))?;

    let start = Instant::now();
    let (report, records) = run_study_with_records(&config)?;
    let alpha_idx = config.alphas.iter().position(|&a| (a - 0.05).abs() < 1e-12);
    for (r, recs) in report.grids.iter().zip(&records) {
        let tag = grid_tag(r);
        write_replications(&dir.join(format!("replications_{tag}.csv")), recs, alpha_idx)?;
        write_density(&dir.join(format!("density_{tag}.csv")), r, recs, density)?;
        eprintln!("grid {tag}: {:.2} s, {} tainted", r.wall_clock.as_secs_f64(), r.tainted);
    }
    let mut rw = BufWriter::new(File::create(dir.join("report.json"))?);
    write_json(&mut rw, &report)?;
    eprintln!("study finished in {:.2} s; outputs in {}", start.elapsed().as_secs_f64(), dir.display());

    let mut w: Box<dyn Write> = Box::new(BufWriter::new(io::stdout().lock()));
    match g.format.unwrap_or(Format::Csv) {
        Format::Csv => write_summary(&mut *w, &report),
        Format::Json => write_json(&mut *w, &report),
    }
}
