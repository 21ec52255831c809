//! Observation records, the canonical delimited series format, raw sensor
//! ingestion with hourly averaging, and synthetic data generation.

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};
use std::path::Path;

use chrono::{DateTime, NaiveDateTime};
use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::filter::StatePrior;
use crate::linalg::psd_sqrt;
use crate::model::{
    build_spatial_k, obs_row, transition_matrix, DlmSpec, Family, Location, StaticParams,
};

/// Hour-averaged measurements at every site for one time point.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationRecord {
    /// Hours since the first record.
    pub time: f64,
    pub temperature: Vec<Option<f64>>,
    pub humidity: Vec<Option<f64>>,
}

impl ObservationRecord {
    pub fn temperature_only(time: f64, temperature: Vec<Option<f64>>) -> Self {
        let humidity = vec![None; temperature.len()];
        Self {
            time,
            temperature,
            humidity,
        }
    }

    pub fn n_sites(&self) -> usize {
        self.temperature.len()
    }

    /// Sites with a temperature reading.
    pub fn mask(&self) -> Vec<bool> {
        self.temperature.iter().map(Option::is_some).collect()
    }

    pub fn is_empty(&self) -> bool {
        self.temperature.iter().all(Option::is_none) && self.humidity.iter().all(Option::is_none)
    }

    /// Humidity may only be present where temperature is.
    pub fn check(&self) -> Result<()> {
        if self.humidity.len() != self.temperature.len() {
            return Err(Error::Input(
                "temperature and humidity site counts differ".into(),
            ));
        }
        for (j, (t, h)) in self.temperature.iter().zip(&self.humidity).enumerate() {
            if h.is_some() && t.is_none() {
                return Err(Error::Input(format!(
                    "humidity without temperature at site {j}, t={}",
                    self.time
                )));
            }
        }
        Ok(())
    }

    /// Keeps only the listed sites, in the given order.
    pub fn select_sites(&self, sites: &[usize]) -> Self {
        Self {
            time: self.time,
            temperature: sites.iter().map(|&j| self.temperature[j]).collect(),
            humidity: sites.iter().map(|&j| self.humidity[j]).collect(),
        }
    }
}

/// Checks record-level invariants and strictly increasing times.
pub fn validate_series(records: &[ObservationRecord]) -> Result<()> {
    let mut last: Option<f64> = None;
    let l = records.first().map(|r| r.n_sites()).unwrap_or(0);
    for r in records {
        r.check()?;
        if r.n_sites() != l {
            return Err(Error::Input(
                "records disagree on the number of sites".into(),
            ));
        }
        if let Some(t0) = last {
            if !(r.time > t0) {
                return Err(Error::Ordering {
                    last: t0,
                    next: r.time,
                });
            }
        }
        last = Some(r.time);
    }
    Ok(())
}

/// Rebases times so that the first record is at `t = 0`.
pub fn rebase_times(records: &mut [ObservationRecord]) {
    if let Some(t0) = records.first().map(|r| r.time) {
        for r in records.iter_mut() {
            r.time -= t0;
        }
    }
}

const CANONICAL_HEADER: [&str; 6] = [
    "t_hours",
    "site",
    "temp",
    "humidity",
    "temp_missing",
    "humidity_missing",
];

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes records in the canonical format: one row per (time, site), with
/// `#`-prefixed provenance lines ahead of the header.
pub fn write_series<W: Write>(
    records: &[ObservationRecord],
    mut out: W,
    comments: &[String],
) -> Result<()> {
    for c in comments {
        writeln!(out, "# {c}")?;
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CANONICAL_HEADER)?;
    for r in records {
        for j in 0..r.n_sites() {
            w.write_record([
                r.time.to_string(),
                j.to_string(),
                fmt_opt(r.temperature[j]),
                fmt_opt(r.humidity[j]),
                u8::from(r.temperature[j].is_none()).to_string(),
                u8::from(r.humidity[j].is_none()).to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn emit_series(
    records: &[ObservationRecord],
    path: impl AsRef<Path>,
    comments: &[String],
) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_series(records, std::io::BufWriter::new(file), comments)
}

fn parse_flag(s: &str, row: usize) -> Result<bool> {
    match s.trim() {
        "0" => Ok(false),
        "1" => Ok(true),
        other => Err(Error::InputRow {
            row,
            message: format!("missing flag must be 0 or 1, got `{other}`"),
        }),
    }
}

fn parse_value(s: &str, missing: bool, row: usize, what: &str) -> Result<Option<f64>> {
    if missing {
        return Ok(None);
    }
    s.trim()
        .parse::<f64>()
        .map(Some)
        .map_err(|_| Error::InputRow {
            row,
            message: format!("non-numeric {what} `{s}`"),
        })
}

/// Reads the canonical format. Rows sharing a `t_hours` value form one
/// record; sites absent from a time are treated as missing.
pub fn read_series<R: Read>(input: R) -> Result<Vec<ObservationRecord>> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(input);
    let headers = rdr.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != CANONICAL_HEADER {
        return Err(Error::Input(format!(
            "expected header `{}`",
            CANONICAL_HEADER.join(",")
        )));
    }
    let mut rows: Vec<(f64, usize, Option<f64>, Option<f64>)> = Vec::new();
    let mut max_site = 0usize;
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 2;
        let rec = rec?;
        let t: f64 = rec[0].parse().map_err(|_| Error::InputRow {
            row,
            message: format!("bad time `{}`", &rec[0]),
        })?;
        let site: usize = rec[1].parse().map_err(|_| Error::InputRow {
            row,
            message: format!("bad site `{}`", &rec[1]),
        })?;
        let tm = parse_flag(&rec[4], row)?;
        let hm = parse_flag(&rec[5], row)?;
        let temp = parse_value(&rec[2], tm, row, "temperature")?;
        let hum = parse_value(&rec[3], hm, row, "humidity")?;
        max_site = max_site.max(site);
        rows.push((t, site, temp, hum));
    }
    let l = if rows.is_empty() { 0 } else { max_site + 1 };
    let mut records: Vec<ObservationRecord> = Vec::new();
    for (t, site, temp, hum) in rows {
        let need_new = records.last().map(|r| r.time != t).unwrap_or(true);
        if need_new {
            if let Some(last) = records.last() {
                if !(t > last.time) {
                    return Err(Error::Ordering {
                        last: last.time,
                        next: t,
                    });
                }
            }
            records.push(ObservationRecord {
                time: t,
                temperature: vec![None; l],
                humidity: vec![None; l],
            });
        }
        let r = records.last_mut().unwrap();
        r.temperature[site] = temp;
        r.humidity[site] = hum;
    }
    validate_series(&records)?;
    Ok(records)
}

pub fn load_series(path: impl AsRef<Path>) -> Result<Vec<ObservationRecord>> {
    let file = std::fs::File::open(path)?;
    read_series(std::io::BufReader::new(file))
}

/// Options for raw sensor ingestion.
#[derive(Debug, Clone, Copy, Default)]
pub struct IngestOptions {
    /// Retain hours with no usable reading as all-missing records.
    pub keep_empty: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IngestReport {
    pub records: Vec<ObservationRecord>,
    /// Unix hour of the record at `t = 0`.
    pub origin_hour: i64,
    pub readings: usize,
    /// Site-hours where humidity arrived without temperature and both were
    /// dropped.
    pub co_missing_masked: usize,
}

fn parse_timestamp(s: &str) -> Option<i64> {
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Some(dt.timestamp());
    }
    for fmt in [
        "%Y-%m-%dT%H:%M:%S",
        "%Y-%m-%d %H:%M:%S",
        "%Y-%m-%dT%H:%M",
        "%Y-%m-%d %H:%M",
    ] {
        if let Ok(dt) = NaiveDateTime::parse_from_str(s, fmt) {
            return Some(dt.and_utc().timestamp());
        }
    }
    None
}

/// Reads raw readings (`timestamp,site,variable,value`), averages them over
/// each clock hour per site and variable, and emits one record per hour.
///
/// `sites` maps labels to location ids. Variables are `temperature` or
/// `humidity`. Naive timestamps are taken as UTC.
pub fn ingest_raw<R: Read>(
    input: R,
    sites: &[Location],
    opts: IngestOptions,
) -> Result<IngestReport> {
    let lookup: HashMap<&str, usize> = sites.iter().map(|l| (l.name.as_str(), l.id)).collect();
    let l = sites.len();
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(input);
    // hour -> per site (temp sum, temp count, hum sum, hum count)
    let mut buckets: BTreeMap<i64, Vec<[f64; 4]>> = BTreeMap::new();
    let mut readings = 0;
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 2;
        let rec = rec?;
        if rec.len() != 4 {
            return Err(Error::InputRow {
                row,
                message: format!("expected 4 fields, found {}", rec.len()),
            });
        }
        let ts = parse_timestamp(&rec[0]).ok_or_else(|| Error::InputRow {
            row,
            message: format!("unparseable timestamp `{}`", &rec[0]),
        })?;
        let site = *lookup.get(&rec[1]).ok_or_else(|| Error::InputRow {
            row,
            message: format!("unknown site `{}`", &rec[1]),
        })?;
        let value: f64 = rec[3].parse().map_err(|_| Error::InputRow {
            row,
            message: format!("non-numeric value `{}`", &rec[3]),
        })?;
        if !value.is_finite() {
            return Err(Error::InputRow {
                row,
                message: "non-finite value".into(),
            });
        }
        let slot = match &rec[2] {
            "temperature" | "temp" => 0,
            "humidity" => 2,
            other => {
                return Err(Error::InputRow {
                    row,
                    message: format!("unknown variable `{other}`"),
                })
            }
        };
        let hour = ts.div_euclid(3600);
        let b = buckets.entry(hour).or_insert_with(|| vec![[0.0; 4]; l]);
        b[site][slot] += value;
        b[site][slot + 1] += 1.0;
        readings += 1;
    }

    let mut co_missing_masked = 0;
    let mut hourly: Vec<(i64, ObservationRecord)> = Vec::new();
    if let (Some(&first), Some(&last)) = (buckets.keys().next(), buckets.keys().next_back()) {
        let empty = vec![[0.0; 4]; l];
        for hour in first..=last {
            let b = buckets.get(&hour).unwrap_or(&empty);
            let mut temperature = vec![None; l];
            let mut humidity = vec![None; l];
            for j in 0..l {
                let [ts, tc, hs, hc] = b[j];
                let t = (tc > 0.0).then(|| ts / tc);
                let h = (hc > 0.0).then(|| hs / hc);
                match (t, h) {
                    (None, Some(_)) => co_missing_masked += 1,
                    _ => {
                        temperature[j] = t;
                        humidity[j] = h;
                    }
                }
            }
            let rec = ObservationRecord {
                time: 0.0,
                temperature,
                humidity,
            };
            if !rec.is_empty() || opts.keep_empty {
                hourly.push((hour, rec));
            }
        }
    }
    let origin_hour = hourly.first().map(|(h, _)| *h).unwrap_or(0);
    let records = hourly
        .into_iter()
        .map(|(h, mut r)| {
            r.time = (h - origin_hour) as f64;
            r
        })
        .collect();
    Ok(IngestReport {
        records,
        origin_hour,
        readings,
        co_missing_masked,
    })
}

pub fn ingest_csv(
    path: impl AsRef<Path>,
    sites: &[Location],
    opts: IngestOptions,
) -> Result<IngestReport> {
    let file = std::fs::File::open(path)?;
    ingest_raw(std::io::BufReader::new(file), sites, opts)
}

/// A contiguous outage: `site` is unobserved for record indices
/// `start..end`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Outage {
    pub site: usize,
    pub start: usize,
    pub end: usize,
}

/// Missingness applied to simulated series.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Missingness {
    /// Per-site independent probability of a missing hour.
    pub bernoulli: Vec<f64>,
    pub outages: Vec<Outage>,
}

/// Truth for the conditional humidity model.
#[derive(Debug, Clone)]
pub struct HumidityTruth {
    pub params: StaticParams,
    pub prior: StatePrior,
}

/// Configuration of a synthetic data set.
#[derive(Debug, Clone)]
pub struct SyntheticConfig {
    pub spec: DlmSpec,
    pub truths: StaticParams,
    pub state_prior: StatePrior,
    pub n: usize,
    pub step_hours: f64,
    pub missingness: Missingness,
    pub humidity: Option<HumidityTruth>,
}

impl SyntheticConfig {
    /// Two sites 20 km apart, 1300 hourly observations, every system
    /// variance 0.01, observation and GP variances 1, GP decays 0.01.
    pub fn reference_study() -> Self {
        let spec = DlmSpec::new(
            Family::Sinusoid,
            vec![
                Location::new(0, "site1", 0.0, 0.0),
                Location::new(1, "site2", 20.0, 0.0),
            ],
        )
        .expect("static spec");
        let truths = StaticParams::uniform(&spec, 0.01, 1.0, 1.0, 0.01);
        let state_prior = StatePrior::default_for(&spec);
        Self {
            spec,
            truths,
            state_prior,
            n: 1300,
            step_hours: 1.0,
            missingness: Missingness::default(),
            humidity: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::config("n", "series length must be at least 1"));
        }
        if !(self.step_hours > 0.0) {
            return Err(Error::config("step_hours", "must be positive"));
        }
        if self.spec.family() == Family::HumidityConditional {
            return Err(Error::config(
                "model",
                "simulate a temperature family; humidity is attached via its own truth block",
            ));
        }
        self.truths.validate(&self.spec, f64::INFINITY, false)?;
        if self.state_prior.m0.len() != self.spec.state_dim() {
            return Err(Error::config(
                "state_prior",
                "dimension does not match model",
            ));
        }
        for &p in &self.missingness.bernoulli {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::config(
                    "missing_prob",
                    "probabilities must lie in [0, 1]",
                ));
            }
        }
        if !self.missingness.bernoulli.is_empty()
            && self.missingness.bernoulli.len() != self.spec.n_sites()
        {
            return Err(Error::config(
                "missing_prob",
                "need one probability per site",
            ));
        }
        Ok(())
    }
}

/// Latent states and observations of a simulated series.
#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub states: Vec<DVector<f64>>,
    pub humidity_states: Option<Vec<DVector<f64>>>,
    pub records: Vec<ObservationRecord>,
}

fn gaussian<R: Rng + ?Sized>(rng: &mut R, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

struct Evolution {
    g: nalgebra::DMatrix<f64>,
    noise_sqrt: nalgebra::DMatrix<f64>,
}

impl Evolution {
    fn new(spec: &DlmSpec, params: &StaticParams, dt: f64) -> Self {
        let mut cov = build_spatial_k(spec, params);
        for (p, w) in params.w.iter().enumerate() {
            cov[(p, p)] += dt * w;
        }
        Self {
            g: transition_matrix(spec, dt),
            noise_sqrt: psd_sqrt(&cov),
        }
    }
}

/// Runs the generative model forward: `θ₁ ~ N(m₀, C₀)`, then
/// `θᵢ = G θᵢ₋₁ + kᵢ wᵢ + pᵢ` and `xᵢ = Fᵢ θᵢ + vᵢ`. Missingness masks
/// observations after generation; the latent path is complete.
pub fn simulate<R: Rng + ?Sized>(config: &SyntheticConfig, rng: &mut R) -> Result<SyntheticData> {
    config.validate()?;
    let spec = &config.spec;
    let l = spec.n_sites();
    let d = spec.state_dim_per_site();
    let n_state = spec.state_dim();
    let evo = Evolution::new(spec, &config.truths, config.step_hours);
    let prior_sqrt = psd_sqrt(&config.state_prior.c0);

    let hum = config.humidity.as_ref().map(|h| {
        let hspec = spec.with_family(Family::HumidityConditional);
        let evo = Evolution::new(&hspec, &h.params, config.step_hours);
        let prior_sqrt = psd_sqrt(&h.prior.c0);
        (hspec, evo, prior_sqrt, h)
    });

    let mut states = Vec::with_capacity(config.n);
    let mut hstates = Vec::new();
    let mut records = Vec::with_capacity(config.n);
    let mut theta = &config.state_prior.m0 + &prior_sqrt * gaussian(rng, n_state);
    let mut htheta = hum
        .as_ref()
        .map(|(hs, _, ps, h)| &h.prior.m0 + ps * gaussian(rng, hs.state_dim()));

    for i in 0..config.n {
        let t = i as f64 * config.step_hours;
        if i > 0 {
            theta = &evo.g * &theta + &evo.noise_sqrt * gaussian(rng, n_state);
            if let (Some((hs, hevo, _, _)), Some(ht)) = (hum.as_ref(), htheta.as_mut()) {
                *ht = &hevo.g * &*ht + &hevo.noise_sqrt * gaussian(rng, hs.state_dim());
            }
        }
        let mut temperature = Vec::with_capacity(l);
        for j in 0..l {
            let row = obs_row(spec.family(), t, None)?;
            let mean: f64 = row
                .iter()
                .enumerate()
                .map(|(p, f)| f * theta[j * d + p])
                .sum();
            let z: f64 = rng.sample(StandardNormal);
            temperature.push(mean + config.truths.v[j].sqrt() * z);
        }
        let humidity: Vec<Option<f64>> = match (hum.as_ref(), htheta.as_ref()) {
            (Some((_, _, _, h)), Some(ht)) => (0..l)
                .map(|j| {
                    let z: f64 = rng.sample(StandardNormal);
                    Some(temperature[j] * ht[2 * j] + ht[2 * j + 1] + h.params.v[j].sqrt() * z)
                })
                .collect(),
            _ => vec![None; l],
        };
        states.push(theta.clone());
        if let Some(ht) = &htheta {
            hstates.push(ht.clone());
        }
        records.push(ObservationRecord {
            time: t,
            temperature: temperature.into_iter().map(Some).collect(),
            humidity,
        });
    }

    let miss = &config.missingness;
    for (i, rec) in records.iter_mut().enumerate() {
        for j in 0..l {
            let mut missing = miss
                .bernoulli
                .get(j)
                .is_some_and(|&p| rng.random::<f64>() < p);
            missing |= miss
                .outages
                .iter()
                .any(|o| o.site == j && (o.start..o.end).contains(&i));
            if missing {
                rec.temperature[j] = None;
                rec.humidity[j] = None;
            }
        }
    }

    Ok(SyntheticData {
        states,
        humidity_states: hum.map(|_| hstates),
        records,
    })
}
