//! CSV formats.
//!
//! * sites: `site_id,x,y[,covariate…]`
//! * maxima: `site_id,year,value`, one row per site-year, no gaps
//! * knots: `knot_id,x,y`
//! * sample store: a directory of CSV files plus `model.toml`

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use maxstable::basis::{KnotGrid, Point};
use maxstable::dataset::{Dataset, Site};
use maxstable::mcmc::{AcceptCount, ChainDiagnostics, Draw, FieldKind, HyperDraw, PosteriorSamples, Which};
use serde::{Deserialize, Serialize};

use crate::error::{AppError, Result};

/// Shortest text that parses back to the same f64.
pub fn fmt_f64(x: f64) -> String {
    let a = x.abs();
    if x == 0.0 || (1e-5..1e16).contains(&a) {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

fn parse_err(path: &Path, line: u64, msg: impl Into<String>) -> AppError {
    AppError::Parse { path: path.display().to_string(), line, msg: msg.into() }
}

fn reader(path: &Path) -> Result<csv::Reader<File>> {
    let f = File::open(path).map_err(|e| AppError::io(path, e))?;
    Ok(csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(f))
}

fn writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    let f = File::create(path).map_err(|e| AppError::io(path, e))?;
    Ok(csv::Writer::from_writer(BufWriter::new(f)))
}

fn field<'a>(path: &Path, rec: &'a csv::StringRecord, k: usize, line: u64, name: &str) -> Result<&'a str> {
    rec.get(k).filter(|s| !s.is_empty()).ok_or_else(|| parse_err(path, line, format!("missing `{name}`")))
}

fn num(path: &Path, rec: &csv::StringRecord, k: usize, line: u64, name: &str) -> Result<f64> {
    let s = field(path, rec, k, line, name)?;
    let v: f64 = s.parse().map_err(|_| parse_err(path, line, format!("`{name}` = {s:?} is not a number")))?;
    if !v.is_finite() {
        return Err(parse_err(path, line, format!("`{name}` is not finite")));
    }
    Ok(v)
}

fn check_header(path: &Path, rdr: &mut csv::Reader<File>, expect: &[&str]) -> Result<csv::StringRecord> {
    let h = rdr.headers().map_err(|e| parse_err(path, 1, e.to_string()))?.clone();
    for (k, e) in expect.iter().enumerate() {
        if h.get(k) != Some(*e) {
            return Err(parse_err(path, 1, format!("expected column {} to be `{e}`", k + 1)));
        }
    }
    Ok(h)
}

fn line_of(rec: &csv::StringRecord) -> u64 {
    rec.position().map(|p| p.line()).unwrap_or(0)
}

/// Read a sites file; extra columns after `y` are covariates.
pub fn read_sites(path: &Path) -> Result<Vec<Site>> {
    let mut rdr = reader(path)?;
    let h = check_header(path, &mut rdr, &["site_id", "x", "y"])?;
    let n_cov = h.len() - 3;
    let mut out = Vec::new();
    let mut seen = HashMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| parse_err(path, e.position().map(|p| p.line()).unwrap_or(0), e.to_string()))?;
        let line = line_of(&rec);
        let id = field(path, &rec, 0, line, "site_id")?.to_string();
        if let Some(prev) = seen.insert(id.clone(), line) {
            return Err(parse_err(path, line, format!("site `{id}` already defined on line {prev}")));
        }
        let x = num(path, &rec, 1, line, "x")?;
        let y = num(path, &rec, 2, line, "y")?;
        let covariates = (0..n_cov)
            .map(|k| num(path, &rec, 3 + k, line, h.get(3 + k).unwrap_or("covariate")))
            .collect::<Result<Vec<_>>>()?;
        out.push(Site { id, location: Point::new(x, y), covariates });
    }
    if out.is_empty() {
        return Err(parse_err(path, 1, "no sites"));
    }
    Ok(out)
}

pub fn write_sites(path: &Path, sites: &[Site]) -> Result<()> {
    let mut w = writer(path)?;
    let n_cov = sites.first().map_or(0, |s| s.covariates.len());
    let mut header = vec!["site_id".to_string(), "x".into(), "y".into()];
    header.extend((1..=n_cov).map(|k| format!("covariate_{k}")));
    w.write_record(&header).map_err(|e| AppError::csv(path, e))?;
    for s in sites {
        let mut row = vec![s.id.clone(), fmt_f64(s.location.x), fmt_f64(s.location.y)];
        row.extend(s.covariates.iter().map(|c| fmt_f64(*c)));
        w.write_record(&row).map_err(|e| AppError::csv(path, e))?;
    }
    w.flush().map_err(|e| AppError::io(path, e))
}

/// Combine a sites file and a maxima file into a complete dataset.
pub fn load_dataset(sites_path: &Path, maxima_path: &Path) -> Result<Dataset> {
    let sites = read_sites(sites_path)?;
    let index: HashMap<&str, usize> = sites.iter().enumerate().map(|(i, s)| (s.id.as_str(), i)).collect();
    let mut rdr = reader(maxima_path)?;
    check_header(maxima_path, &mut rdr, &["site_id", "year", "value"])?;
    let mut cells: BTreeMap<(usize, i64), (f64, u64)> = BTreeMap::new();
    let mut years = std::collections::BTreeSet::new();
    for rec in rdr.records() {
        let rec =
            rec.map_err(|e| parse_err(maxima_path, e.position().map(|p| p.line()).unwrap_or(0), e.to_string()))?;
        let line = line_of(&rec);
        let id = field(maxima_path, &rec, 0, line, "site_id")?;
        let i = *index
            .get(id)
            .ok_or_else(|| parse_err(maxima_path, line, format!("site `{id}` is not in the sites file")))?;
        let ys = field(maxima_path, &rec, 1, line, "year")?;
        let year: i64 = ys.parse().map_err(|_| parse_err(maxima_path, line, format!("year {ys:?} is not an integer")))?;
        if year < 0 {
            return Err(parse_err(maxima_path, line, format!("negative year {year}")));
        }
        let v = num(maxima_path, &rec, 2, line, "value")?;
        if let Some((_, prev)) = cells.insert((i, year), (v, line)) {
            return Err(parse_err(maxima_path, line, format!("site `{id}` year {year} repeats line {prev}")));
        }
        years.insert(year);
    }
    let years: Vec<i64> = years.into_iter().collect();
    let mut values = Vec::with_capacity(sites.len() * years.len());
    for (i, s) in sites.iter().enumerate() {
        for &y in &years {
            match cells.get(&(i, y)) {
                Some((v, _)) => values.push(*v),
                None => {
                    return Err(AppError::Invalid(format!(
                        "{}: missing value for site `{}` year {y}",
                        maxima_path.display(),
                        s.id
                    )))
                }
            }
        }
    }
    Ok(Dataset::new(sites, years, values)?)
}

pub fn save_dataset(data: &Dataset, sites_path: &Path, maxima_path: &Path) -> Result<()> {
    write_sites(sites_path, &data.sites)?;
    let mut w = writer(maxima_path)?;
    w.write_record(["site_id", "year", "value"]).map_err(|e| AppError::csv(maxima_path, e))?;
    for (i, s) in data.sites.iter().enumerate() {
        for (t, y) in data.years.iter().enumerate() {
            w.write_record([s.id.clone(), y.to_string(), fmt_f64(data.value(i, t))])
                .map_err(|e| AppError::csv(maxima_path, e))?;
        }
    }
    w.flush().map_err(|e| AppError::io(maxima_path, e))
}

pub fn read_knots(path: &Path) -> Result<KnotGrid> {
    let mut rdr = reader(path)?;
    check_header(path, &mut rdr, &["knot_id", "x", "y"])?;
    let mut pts = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| parse_err(path, e.position().map(|p| p.line()).unwrap_or(0), e.to_string()))?;
        let line = line_of(&rec);
        pts.push(Point::new(num(path, &rec, 1, line, "x")?, num(path, &rec, 2, line, "y")?));
    }
    Ok(KnotGrid::from_points(pts)?)
}

pub fn write_knots(path: &Path, grid: &KnotGrid) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["knot_id", "x", "y"]).map_err(|e| AppError::csv(path, e))?;
    for (k, p) in grid.knots().iter().enumerate() {
        w.write_record([k.to_string(), fmt_f64(p.x), fmt_f64(p.y)]).map_err(|e| AppError::csv(path, e))?;
    }
    w.flush().map_err(|e| AppError::io(path, e))
}

/// Write rows of already-formatted cells under a header.
pub fn write_table(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(header).map_err(|e| AppError::csv(path, e))?;
    for r in rows {
        w.write_record(&r).map_err(|e| AppError::csv(path, e))?;
    }
    w.flush().map_err(|e| AppError::io(path, e))
}

#[derive(Serialize, Deserialize, Debug, Clone, PartialEq)]
struct FieldMeta {
    name: String,
    kind: String,
    use_covariates: bool,
}

#[derive(Serialize, Deserialize, Debug, Clone, PartialEq)]
struct StoreMeta {
    years: Vec<i64>,
    alpha_fixed: Option<f64>,
    fields: Vec<FieldMeta>,
    /// Knot grid layout when regular: [m, lower, upper].
    regular_knots: Option<(usize, f64, f64)>,
}

const STORE_FILES: [&str; 8] =
    ["model.toml", "sites.csv", "knots.csv", "scalars.csv", "fields.csv", "effects.csv", "acceptance.csv", "chains.csv"];

/// Files making up a sample store.
pub fn store_files() -> &'static [&'static str] {
    &STORE_FILES
}

fn scalar_header(s: &PosteriorSamples) -> Vec<String> {
    let mut h = vec!["iter".to_string(), "chain".into(), "alpha".into(), "tau".into()];
    if let Some(d) = s.draws.first() {
        for w in Which::ALL {
            if let Some(hd) = &d.hyper[w.index()] {
                for k in 0..hd.beta.len() {
                    h.push(format!("{}_beta_{k}", w.name()));
                }
                for n in ["delta2", "rho", "nu", "g"] {
                    h.push(format!("{}_{n}", w.name()));
                }
            }
        }
    }
    h
}

/// Persist posterior samples into `dir`.
pub fn write_samples(dir: &Path, s: &PosteriorSamples) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| AppError::io(dir, e))?;
    let meta = StoreMeta {
        years: s.years.clone(),
        alpha_fixed: s.alpha_fixed,
        fields: Which::ALL
            .iter()
            .map(|w| {
                let (kind, cov) = match s.fields[w.index()] {
                    FieldKind::Constant => ("constant", false),
                    FieldKind::Spatial { use_covariates } => ("spatial", use_covariates),
                };
                FieldMeta { name: w.name().into(), kind: kind.into(), use_covariates: cov }
            })
            .collect(),
        regular_knots: s.knots.m().zip(s.knots.bounds()).map(|(m, (lo, hi))| (m, lo, hi)),
    };
    let text = toml::to_string(&meta).map_err(|e| AppError::Invalid(e.to_string()))?;
    let p = dir.join("model.toml");
    std::fs::write(&p, text).map_err(|e| AppError::io(&p, e))?;
    write_sites(&dir.join("sites.csv"), &s.sites)?;
    write_knots(&dir.join("knots.csv"), &s.knots)?;

    let header = scalar_header(s);
    let hr: Vec<&str> = header.iter().map(|x| x.as_str()).collect();
    write_table(
        &dir.join("scalars.csv"),
        &hr,
        s.draws.iter().map(|d| {
            let mut r = vec![d.iter.to_string(), d.chain.to_string(), fmt_f64(d.alpha), fmt_f64(d.tau)];
            for h in d.hyper.iter().flatten() {
                r.extend(h.beta.iter().map(|b| fmt_f64(*b)));
                r.extend([fmt_f64(h.delta2), fmt_f64(h.rho), fmt_f64(h.nu)]);
                r.push(h.g.map(|g| (g as u8).to_string()).unwrap_or_default());
            }
            r
        }),
    )?;
    write_table(
        &dir.join("fields.csv"),
        &["iter", "chain", "site_id", "mu", "gamma", "xi"],
        s.draws.iter().flat_map(|d| {
            s.sites.iter().enumerate().map(move |(i, site)| {
                vec![
                    d.iter.to_string(),
                    d.chain.to_string(),
                    site.id.clone(),
                    fmt_f64(d.mu[i]),
                    fmt_f64(d.gamma[i]),
                    fmt_f64(d.xi[i]),
                ]
            })
        }),
    )?;
    let l = s.knots.len();
    let mut eh = vec!["iter".to_string(), "chain".into(), "year".into()];
    eh.extend((0..l).map(|k| format!("a_{k}")));
    let ehr: Vec<&str> = eh.iter().map(|x| x.as_str()).collect();
    write_table(
        &dir.join("effects.csv"),
        &ehr,
        s.draws.iter().flat_map(|d| {
            s.years.iter().enumerate().map(move |(t, y)| {
                let mut r = vec![d.iter.to_string(), d.chain.to_string(), y.to_string()];
                r.extend(d.effects(t, l).iter().map(|a| fmt_f64(*a)));
                r
            })
        }),
    )?;
    write_table(
        &dir.join("acceptance.csv"),
        &["chain", "block", "accepted", "proposed", "rate", "step"],
        s.diagnostics.iter().flat_map(|c| {
            c.acceptance.iter().zip(&c.steps).map(move |((name, a), step)| {
                vec![
                    c.chain.to_string(),
                    name.clone(),
                    a.accepted.to_string(),
                    a.proposed.to_string(),
                    a.rate().map(fmt_f64).unwrap_or_default(),
                    fmt_f64(*step),
                ]
            })
        }),
    )?;
    write_table(
        &dir.join("chains.csv"),
        &["chain", "audits", "audit_failures", "max_audit_error", "nan_rejections", "initial_log_lik"],
        s.diagnostics.iter().map(|c| {
            vec![
                c.chain.to_string(),
                c.audits.to_string(),
                c.audit_failures.to_string(),
                fmt_f64(c.max_audit_error),
                c.nan_rejections.to_string(),
                fmt_f64(c.initial_log_lik),
            ]
        }),
    )
}

fn all_records(path: &Path) -> Result<(csv::StringRecord, Vec<csv::StringRecord>)> {
    let mut rdr = reader(path)?;
    let h = rdr.headers().map_err(|e| parse_err(path, 1, e.to_string()))?.clone();
    let recs = rdr
        .records()
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| parse_err(path, e.position().map(|p| p.line()).unwrap_or(0), e.to_string()))?;
    Ok((h, recs))
}

fn int<T: std::str::FromStr>(path: &Path, rec: &csv::StringRecord, k: usize, name: &str) -> Result<T> {
    let line = line_of(rec);
    let s = field(path, rec, k, line, name)?;
    s.parse().map_err(|_| parse_err(path, line, format!("`{name}` = {s:?} is not an integer")))
}

/// Load a sample store written by [`write_samples`].
pub fn read_samples(dir: &Path) -> Result<PosteriorSamples> {
    let p = dir.join("model.toml");
    let text = std::fs::read_to_string(&p).map_err(|e| AppError::io(&p, e))?;
    let meta: StoreMeta = toml::from_str(&text).map_err(|e| parse_err(&p, 0, e.to_string()))?;
    let sites = read_sites(&dir.join("sites.csv"))?;
    let knots = match meta.regular_knots {
        Some((m, lo, hi)) => KnotGrid::regular(m, lo, hi)?,
        None => read_knots(&dir.join("knots.csv"))?,
    };
    let mut fields = [FieldKind::Constant; 3];
    for f in &meta.fields {
        let w = Which::ALL
            .into_iter()
            .find(|w| w.name() == f.name)
            .ok_or_else(|| parse_err(&p, 0, format!("unknown field {}", f.name)))?;
        fields[w.index()] = match f.kind.as_str() {
            "constant" => FieldKind::Constant,
            "spatial" => FieldKind::Spatial { use_covariates: f.use_covariates },
            k => return Err(parse_err(&p, 0, format!("unknown field kind {k}"))),
        };
    }
    let (n, t_n, l) = (sites.len(), meta.years.len(), knots.len());

    let sp = dir.join("scalars.csv");
    let (h, recs) = all_records(&sp)?;
    let col = |name: &str| h.iter().position(|c| c == name);
    let mut draws = Vec::with_capacity(recs.len());
    let mut index = HashMap::new();
    for rec in &recs {
        let line = line_of(rec);
        let iter: usize = int(&sp, rec, 0, "iter")?;
        let chain: usize = int(&sp, rec, 1, "chain")?;
        let mut hyper: [Option<HyperDraw>; 3] = Default::default();
        for w in Which::ALL {
            if let FieldKind::Spatial { .. } = fields[w.index()] {
                let mut beta = Vec::new();
                while let Some(k) = col(&format!("{}_beta_{}", w.name(), beta.len())) {
                    beta.push(num(&sp, rec, k, line, "beta")?);
                }
                let get = |n: &str| -> Result<f64> {
                    let k = col(&format!("{}_{n}", w.name())).ok_or_else(|| parse_err(&sp, 1, format!("no {n} column")))?;
                    num(&sp, rec, k, line, n)
                };
                let gk = col(&format!("{}_g", w.name())).ok_or_else(|| parse_err(&sp, 1, "no g column"))?;
                let g = match rec.get(gk).unwrap_or("") {
                    "" => None,
                    "0" => Some(false),
                    "1" => Some(true),
                    other => return Err(parse_err(&sp, line, format!("bad indicator {other:?}"))),
                };
                hyper[w.index()] = Some(HyperDraw { beta, delta2: get("delta2")?, rho: get("rho")?, nu: get("nu")?, g });
            }
        }
        index.insert((chain, iter), draws.len());
        draws.push(Draw {
            chain,
            iter,
            alpha: num(&sp, rec, 2, line, "alpha")?,
            tau: num(&sp, rec, 3, line, "tau")?,
            mu: vec![f64::NAN; n],
            gamma: vec![f64::NAN; n],
            xi: vec![f64::NAN; n],
            hyper,
            aux_a: vec![f64::NAN; t_n * l],
        });
    }

    let site_index: HashMap<&str, usize> = sites.iter().enumerate().map(|(i, s)| (s.id.as_str(), i)).collect();
    let fp = dir.join("fields.csv");
    let (_, recs) = all_records(&fp)?;
    for rec in &recs {
        let line = line_of(rec);
        let key = (int(&fp, rec, 1, "chain")?, int(&fp, rec, 0, "iter")?);
        let d = *index.get(&key).ok_or_else(|| parse_err(&fp, line, "draw not in scalars.csv"))?;
        let sid = field(&fp, rec, 2, line, "site_id")?;
        let i = *site_index.get(sid).ok_or_else(|| parse_err(&fp, line, format!("unknown site {sid}")))?;
        draws[d].mu[i] = num(&fp, rec, 3, line, "mu")?;
        draws[d].gamma[i] = num(&fp, rec, 4, line, "gamma")?;
        draws[d].xi[i] = num(&fp, rec, 5, line, "xi")?;
    }
    let year_index: HashMap<i64, usize> = meta.years.iter().enumerate().map(|(t, y)| (*y, t)).collect();
    let ep = dir.join("effects.csv");
    let (_, recs) = all_records(&ep)?;
    for rec in &recs {
        let line = line_of(rec);
        let key = (int(&ep, rec, 1, "chain")?, int(&ep, rec, 0, "iter")?);
        let d = *index.get(&key).ok_or_else(|| parse_err(&ep, line, "draw not in scalars.csv"))?;
        let y: i64 = int(&ep, rec, 2, "year")?;
        let t = *year_index.get(&y).ok_or_else(|| parse_err(&ep, line, format!("unknown year {y}")))?;
        for k in 0..l {
            draws[d].aux_a[t * l + k] = num(&ep, rec, 3 + k, line, "a")?;
        }
    }
    if draws.iter().any(|d| d.mu.iter().chain(&d.aux_a).any(|x| x.is_nan())) {
        return Err(AppError::Invalid(format!("{}: sample store is incomplete", dir.display())));
    }

    let mut diagnostics: Vec<ChainDiagnostics> = Vec::new();
    let cp = dir.join("chains.csv");
    let (_, recs) = all_records(&cp)?;
    for rec in &recs {
        let line = line_of(rec);
        diagnostics.push(ChainDiagnostics {
            chain: int(&cp, rec, 0, "chain")?,
            acceptance: Vec::new(),
            steps: Vec::new(),
            audits: int(&cp, rec, 1, "audits")?,
            audit_failures: int(&cp, rec, 2, "audit_failures")?,
            max_audit_error: num(&cp, rec, 3, line, "max_audit_error")?,
            nan_rejections: int(&cp, rec, 4, "nan_rejections")?,
            initial_log_lik: num(&cp, rec, 5, line, "initial_log_lik")?,
        });
    }
    let ap = dir.join("acceptance.csv");
    let (_, recs) = all_records(&ap)?;
    for rec in &recs {
        let line = line_of(rec);
        let chain: usize = int(&ap, rec, 0, "chain")?;
        let c = diagnostics
            .iter_mut()
            .find(|c| c.chain == chain)
            .ok_or_else(|| parse_err(&ap, line, format!("chain {chain} not in chains.csv")))?;
        c.acceptance.push((
            field(&ap, rec, 1, line, "block")?.to_string(),
            AcceptCount { accepted: int(&ap, rec, 2, "accepted")?, proposed: int(&ap, rec, 3, "proposed")? },
        ));
        c.steps.push(num(&ap, rec, 5, line, "step")?);
    }

    Ok(PosteriorSamples { draws, sites, years: meta.years, knots, fields, alpha_fixed: meta.alpha_fixed, diagnostics })
}

/// Write the text of `lines` to `path`.
pub fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut f = File::create(path).map_err(|e| AppError::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| AppError::io(path, e))
}
