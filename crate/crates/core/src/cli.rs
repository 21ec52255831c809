//! Command implementations behind the `dlm-ibis` binary. Each command takes
//! a resolved [`RunConfig`], computes everything in memory, and only then
//! writes `<out>/<artifact>.csv` files plus `<out>/run.meta`.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{Mode, RunConfig};
use crate::data::{
    load_series, rebase_times, simulate, write_series, HumidityTruth, Missingness,
    ObservationRecord, SyntheticConfig,
};
use crate::error::{Error, Result};
use crate::filter::{
    forecast, predict_within_sample, CompiledModel, FilterState, PreparedSeries, Smoother,
    StatePrior, Workspace,
};
use crate::model::{DlmSpec, Family, StaticParams};
use crate::parallel::{run_batched, BatchDiagnostics, BatchPlan};
use crate::smc::{
    log_bayes_factor, run_online_ibis, EvidencePoint, ParticleSet, PriorSpec, TriggerEvent,
};
use crate::stats::{weighted_mean, weighted_quantiles};

/// Quantile levels reported in every summary table.
pub const SUMMARY_PROBS: [f64; 3] = [0.5, 0.025, 0.975];

/// Humidity truths used when `simulate` also generates humidity.
pub fn default_humidity_truth(spec: &DlmSpec) -> HumidityTruth {
    let hspec = spec.with_family(Family::HumidityConditional);
    HumidityTruth {
        params: StaticParams::uniform(&hspec, 1e-4, 0.25, 1e-4, 0.05),
        prior: StatePrior::default_for(&hspec),
    }
}

/// A delimited table held in memory until the command succeeds.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    fn new(name: &str, columns: &[&str]) -> Self {
        Self {
            name: name.into(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    fn push(&mut self, row: Vec<String>) {
        self.rows.push(row);
    }

    fn write(&self, dir: &Path, header: &[String]) -> Result<PathBuf> {
        use std::io::Write;
        let path = dir.join(format!("{}.csv", self.name));
        let mut file = std::io::BufWriter::new(fs::File::create(&path)?);
        for h in header {
            writeln!(file, "# {h}")?;
        }
        let mut w = csv::Writer::from_writer(file);
        w.write_record(&self.columns)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        w.flush()?;
        Ok(path)
    }
}

fn f(x: f64) -> String {
    x.to_string()
}

/// Everything a command produces, written in one go.
#[derive(Debug, Clone, Default)]
pub struct Outputs {
    pub tables: Vec<Table>,
    pub series: Option<Vec<ObservationRecord>>,
}

impl Outputs {
    fn persist(&self, cfg: &RunConfig) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(&cfg.out)?;
        let header = cfg.header();
        let mut paths = Vec::new();
        if let Some(recs) = &self.series {
            let p = cfg.out.join("series.csv");
            let file = std::io::BufWriter::new(fs::File::create(&p)?);
            write_series(recs, file, &header)?;
            paths.push(p);
        }
        for t in &self.tables {
            paths.push(t.write(&cfg.out, &header)?);
        }
        let meta = cfg.out.join("run.meta");
        fs::write(&meta, cfg.to_meta())?;
        paths.push(meta);
        Ok(paths)
    }
}

/// Runs a resolved command and writes its outputs.
pub fn run(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let out = match cfg.mode {
        Mode::Simulate => cmd_simulate(cfg)?,
        Mode::Fit => cmd_fit(cfg)?,
        Mode::Forecast => cmd_forecast(cfg)?,
        Mode::Predict => cmd_predict(cfg)?,
        Mode::Compare => cmd_compare(cfg)?,
    };
    out.persist(cfg)
}

fn spec_for(cfg: &RunConfig, family: Family) -> Result<DlmSpec> {
    DlmSpec::new(family, cfg.locations())
}

pub fn prior_for(cfg: &RunConfig, spec: &DlmSpec) -> Result<PriorSpec> {
    Ok(
        PriorSpec::inverse_gamma(spec, cfg.prior.shape, cfg.prior.scale, cfg.prior.upper)?
            .with_constraint(cfg.prior.constrain_w_lt_v),
    )
}

pub fn cmd_simulate(cfg: &RunConfig) -> Result<Outputs> {
    let sim = cfg
        .simulate
        .as_ref()
        .ok_or_else(|| Error::config("mode", "not a simulate configuration"))?;
    let spec = spec_for(cfg, cfg.family())?;
    let truths = StaticParams::uniform(
        &spec,
        sim.truth_w,
        sim.truth_v,
        sim.truth_sigma2,
        sim.truth_psi,
    );
    let synth = SyntheticConfig {
        state_prior: StatePrior::default_for(&spec),
        truths: truths.clone(),
        n: sim.n,
        step_hours: cfg.step_hours,
        missingness: Missingness {
            bernoulli: if sim.missing_prob > 0.0 {
                vec![sim.missing_prob; spec.n_sites()]
            } else {
                Vec::new()
            },
            outages: Vec::new(),
        },
        humidity: sim.humidity.then(|| default_humidity_truth(&spec)),
        spec: spec.clone(),
    };
    let data = simulate(&synth, &mut ChaCha8Rng::seed_from_u64(cfg.seed))?;

    let mut truth = Table::new("truth", &["model", "parameter", "value"]);
    for (name, v) in spec.param_names().iter().zip(truths.flatten()) {
        truth.push(vec![spec.family().to_string(), name.clone(), f(v)]);
    }
    if let Some(h) = &synth.humidity {
        let hspec = spec.with_family(Family::HumidityConditional);
        for (name, v) in hspec.param_names().iter().zip(h.params.flatten()) {
            truth.push(vec!["humidity".into(), name.clone(), f(v)]);
        }
    }
    let d = spec.state_dim_per_site();
    let mut cols = vec!["t_hours".to_string()];
    for j in 0..spec.n_sites() {
        for k in 0..d {
            cols.push(format!("theta{k}.{j}"));
        }
    }
    let mut states = Table {
        name: "states".into(),
        columns: cols,
        rows: Vec::new(),
    };
    for (r, s) in data.records.iter().zip(&data.states) {
        let mut row = vec![f(r.time)];
        row.extend(s.iter().map(|x| f(*x)));
        states.push(row);
    }
    Ok(Outputs {
        tables: vec![truth, states],
        series: Some(data.records),
    })
}

/// Posterior and logs from one fit, serial or batched.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub particles: ParticleSet,
    pub evidence: Vec<EvidencePoint>,
    /// `(batch, event)` pairs.
    pub triggers: Vec<(usize, TriggerEvent)>,
    pub diagnostics: Vec<BatchDiagnostics>,
}

/// Fits `spec` to `records` with the run's sampler settings and `seed`.
pub fn fit_series(
    cfg: &RunConfig,
    spec: &DlmSpec,
    records: &[ObservationRecord],
    seed: u64,
) -> Result<FitResult> {
    let series = PreparedSeries::new(spec, records)?;
    let prior = prior_for(cfg, spec)?;
    let state_prior = StatePrior::default_for(spec);
    if cfg.batches <= 1 {
        let start = Instant::now();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let out = run_online_ibis(&cfg.ibis(), &series, &prior, &state_prior, spec, &mut rng)?;
        let diag = BatchDiagnostics {
            batch: 0,
            triggers: out.triggers.len(),
            acceptance_rate: out.acceptance_rate(),
            filter_evaluations: out.filter_evaluations,
            wall_seconds: start.elapsed().as_secs_f64(),
        };
        Ok(FitResult {
            triggers: out.triggers.iter().map(|t| (0, *t)).collect(),
            particles: out.particles,
            evidence: out.evidence,
            diagnostics: vec![diag],
        })
    } else {
        let plan = BatchPlan::new(
            cfg.particles,
            cfg.batches,
            cfg.rejuvenation_period,
            seed,
            cfg.batch_floor,
        )?;
        let out = run_batched(
            &cfg.ibis(),
            &plan,
            &series,
            &prior,
            &state_prior,
            spec,
            cfg.workers,
        )?;
        let triggers = out
            .batches
            .iter()
            .enumerate()
            .flat_map(|(b, o)| o.triggers.iter().map(move |t| (b, *t)))
            .collect();
        Ok(FitResult {
            particles: out.merged,
            evidence: out.evidence,
            triggers,
            diagnostics: out.diagnostics,
        })
    }
}

fn evidence_table(name: &str, evidence: &[EvidencePoint]) -> Table {
    let mut t = Table::new(
        name,
        &["index", "t_hours", "log_increment", "log_cumulative"],
    );
    for e in evidence {
        t.push(vec![
            e.index.to_string(),
            f(e.time),
            f(e.log_increment),
            f(e.log_cumulative),
        ]);
    }
    t
}

/// Median and equal-tailed 95% interval per parameter.
pub fn summary_table(spec: &DlmSpec, set: &ParticleSet) -> Result<Table> {
    let w = set.weights()?;
    let mut t = Table::new("summary", &["parameter", "median", "q2.5", "q97.5", "mean"]);
    for (i, name) in spec.param_names().iter().enumerate() {
        let x = set.component(i);
        let q = weighted_quantiles(&x, &w, &SUMMARY_PROBS)?;
        t.push(vec![
            name.clone(),
            f(q[0]),
            f(q[1]),
            f(q[2]),
            f(weighted_mean(&x, &w)?),
        ]);
    }
    Ok(t)
}

pub fn cmd_fit(cfg: &RunConfig) -> Result<Outputs> {
    let spec = spec_for(cfg, cfg.family())?;
    let records = load_series(cfg.data.as_ref().expect("validated"))?;
    let fit = fit_series(cfg, &spec, &records, cfg.seed)?;

    let names = spec.param_names();
    let mut cols = vec!["log_weight", "weight"];
    cols.extend(names.iter().map(String::as_str));
    let mut posterior = Table::new("posterior", &cols);
    let w = fit.particles.weights()?;
    for (p, wk) in fit.particles.particles.iter().zip(&w) {
        let mut row = vec![f(p.log_weight), f(*wk)];
        row.extend(p.params.flatten().into_iter().map(f));
        posterior.push(row);
    }
    let mut triggers = Table::new(
        "triggers",
        &[
            "batch",
            "index",
            "t_hours",
            "window",
            "ess",
            "scheduled",
            "proposals",
            "accepted",
            "acceptance_rate",
        ],
    );
    for (b, t) in &fit.triggers {
        triggers.push(vec![
            b.to_string(),
            t.index.to_string(),
            f(t.time),
            t.window.to_string(),
            f(t.ess),
            u8::from(t.scheduled).to_string(),
            t.proposals.to_string(),
            t.accepted.to_string(),
            f(t.acceptance_rate()),
        ]);
    }
    let mut batches = Table::new(
        "batches",
        &[
            "batch",
            "triggers",
            "acceptance_rate",
            "filter_evaluations",
            "wall_seconds",
        ],
    );
    for d in &fit.diagnostics {
        batches.push(vec![
            d.batch.to_string(),
            d.triggers.to_string(),
            f(d.acceptance_rate),
            d.filter_evaluations.to_string(),
            f(d.wall_seconds),
        ]);
    }
    Ok(Outputs {
        tables: vec![
            posterior,
            summary_table(&spec, &fit.particles)?,
            evidence_table("evidence", &fit.evidence),
            triggers,
            batches,
        ],
        series: None,
    })
}

/// Reads a posterior dump, checking its parameter names against `spec`.
pub fn read_posterior(path: &Path, spec: &DlmSpec) -> Result<Vec<(f64, StaticParams)>> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)?;
    let names = spec.param_names();
    let header: Vec<String> = rdr.headers()?.iter().map(String::from).collect();
    if header.len() != names.len() + 2 || header[0] != "log_weight" || header[2..] != names[..] {
        return Err(Error::Input(format!(
            "posterior columns do not match model {}",
            spec.family()
        )));
    }
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let parse = |k: usize| -> Result<f64> {
            rec[k].parse().map_err(|_| Error::InputRow {
                row: i + 2,
                message: format!("bad number `{}`", &rec[k]),
            })
        };
        let lw = parse(0)?;
        let flat = (2..rec.len()).map(parse).collect::<Result<Vec<_>>>()?;
        out.push((lw, StaticParams::from_flat(spec, &flat)?));
    }
    if out.is_empty() {
        return Err(Error::Input("posterior dump is empty".into()));
    }
    Ok(out)
}

fn terminal_state(
    spec: &DlmSpec,
    params: &StaticParams,
    series: &PreparedSeries,
    prior: &StatePrior,
) -> Result<FilterState> {
    let model = CompiledModel::new(spec, params);
    let mut ws = Workspace::new(&model);
    let mut state = FilterState::from_prior(prior);
    for s in series.steps() {
        model.assimilate(&mut state, s, &mut ws)?;
    }
    Ok(state)
}

pub fn cmd_forecast(cfg: &RunConfig) -> Result<Outputs> {
    let spec = spec_for(cfg, cfg.family())?;
    let posterior = read_posterior(cfg.posterior.as_ref().expect("validated"), &spec)?;
    let records = load_series(cfg.data.as_ref().expect("validated"))?;
    let series = PreparedSeries::new(&spec, &records)?;
    let prior = StatePrior::default_for(&spec);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let l = spec.n_sites();
    let h = cfg.horizon;
    let mut samples = vec![vec![Vec::with_capacity(posterior.len()); l]; h];
    let mut lw = Vec::with_capacity(posterior.len());
    let mut times = Vec::new();
    for (w, params) in &posterior {
        let state = terminal_state(&spec, params, &series, &prior)?;
        let draw = forecast(&state, h, cfg.step_hours, params, &spec, &mut rng)?;
        for (k, row) in draw.values.iter().enumerate() {
            for j in 0..l {
                samples[k][j].push(row[j]);
            }
        }
        times = draw.times;
        lw.push(*w);
    }
    let weights = crate::smc::normalized_weights(&lw)?;
    let mut t = Table::new(
        "forecast",
        &["horizon", "t_hours", "site", "mean", "q2.5", "q97.5"],
    );
    for k in 0..h {
        for j in 0..l {
            let x = &samples[k][j];
            let q = weighted_quantiles(x, &weights, &[0.025, 0.975])?;
            t.push(vec![
                (k + 1).to_string(),
                f(times[k]),
                spec.locations()[j].name.clone(),
                f(weighted_mean(x, &weights)?),
                f(q[0]),
                f(q[1]),
            ]);
        }
    }
    Ok(Outputs {
        tables: vec![t],
        series: None,
    })
}

pub fn cmd_predict(cfg: &RunConfig) -> Result<Outputs> {
    let spec = spec_for(cfg, cfg.family())?;
    let posterior = match &cfg.posterior {
        Some(p) => read_posterior(p, &spec)?,
        None => {
            return Err(Error::config(
                "posterior",
                "a posterior dump from `fit` is required",
            ))
        }
    };
    let records = load_series(cfg.data.as_ref().expect("validated"))?;
    let series = PreparedSeries::new(&spec, &records)?;
    let prior = StatePrior::default_for(&spec);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let lw: Vec<f64> = posterior.iter().map(|(w, _)| *w).collect();
    let weights = crate::smc::normalized_weights(&lw)?;
    let pick = rand::distr::weighted::WeightedIndex::new(&weights)
        .map_err(|_| Error::DegenerateWeights)?;
    let l = spec.n_sites();
    let n = records.len();
    let mut samples = vec![vec![Vec::with_capacity(cfg.draws); l]; n];
    for _ in 0..cfg.draws {
        let (_, params) = &posterior[rng.sample(&pick)];
        let model = CompiledModel::new(&spec, params);
        let history = crate::filter::filter_history(&model, &prior, &series)?;
        let draw = Smoother::new(&history, &spec, params)?.draw(&mut rng);
        let pred = predict_within_sample(&draw, &records, &spec, params, &mut rng)?;
        for (i, row) in pred.iter().enumerate() {
            for j in 0..l {
                if let Some(x) = row[j] {
                    samples[i][j].push(x);
                }
            }
        }
    }
    let target = spec.family().target();
    let mut t = Table::new(
        "predict",
        &["t_hours", "site", "observed", "mean", "q2.5", "q97.5"],
    );
    for (i, r) in records.iter().enumerate() {
        for j in 0..l {
            let x = &samples[i][j];
            if x.is_empty() {
                continue;
            }
            let w = vec![1.0; x.len()];
            let q = weighted_quantiles(x, &w, &[0.025, 0.975])?;
            let obs = match target {
                crate::model::Variable::Temperature => r.temperature[j],
                crate::model::Variable::Humidity => r.humidity[j],
            };
            t.push(vec![
                f(r.time),
                spec.locations()[j].name.clone(),
                obs.map(f).unwrap_or_default(),
                f(weighted_mean(x, &w)?),
                f(q[0]),
                f(q[1]),
            ]);
        }
    }
    Ok(Outputs {
        tables: vec![t],
        series: None,
    })
}

/// Draws the sites and the block of consecutive records for one replicate.
pub fn subsample<R: Rng + ?Sized>(
    records: &[ObservationRecord],
    n_sites: usize,
    sites: Option<usize>,
    length: Option<usize>,
    rng: &mut R,
) -> Result<(Vec<usize>, Vec<ObservationRecord>)> {
    let mut chosen: Vec<usize> = match sites {
        Some(k) if k < n_sites => sample_indices(rng, n_sites, k).into_vec(),
        _ => (0..n_sites).collect(),
    };
    chosen.sort_unstable();
    let len = length.unwrap_or(records.len());
    if len > records.len() {
        return Err(Error::config(
            "subsample_length",
            format!("series has only {} records", records.len()),
        ));
    }
    let start = rng.random_range(0..=records.len() - len);
    let mut block: Vec<ObservationRecord> = records[start..start + len]
        .iter()
        .map(|r| r.select_sites(&chosen))
        .collect();
    rebase_times(&mut block);
    Ok((chosen, block))
}

pub fn cmd_compare(cfg: &RunConfig) -> Result<Outputs> {
    let cmp = cfg
        .compare
        .as_ref()
        .ok_or_else(|| Error::config("mode", "not a compare configuration"))?;
    let families: Vec<Family> = cmp
        .models
        .iter()
        .map(|m| m.parse())
        .collect::<Result<_>>()?;
    let records = load_series(cfg.data.as_ref().expect("validated"))?;
    let base = spec_for(cfg, families[0])?;
    if records.first().map(|r| r.n_sites()) != Some(base.n_sites()) {
        return Err(Error::Input(
            "data and sites table disagree on the number of sites".into(),
        ));
    }
    let mut seeds = ChaCha8Rng::seed_from_u64(cfg.seed);
    let reference = families.len() - 1;
    let mut trace = Table::new(
        "compare",
        &[
            "replicate",
            "model",
            "reference",
            "index",
            "t_hours",
            "log_bf",
        ],
    );
    let mut ev = Table::new(
        "evidence",
        &[
            "replicate",
            "model",
            "index",
            "t_hours",
            "log_increment",
            "log_cumulative",
        ],
    );
    let mut bf: Vec<Vec<Vec<f64>>> = vec![Vec::new(); reference];
    let mut bf_times = Vec::new();
    for rep in 0..cmp.replicates {
        let rep_seed = if rep == 0 { cfg.seed } else { seeds.random() };
        let mut rng = ChaCha8Rng::seed_from_u64(rep_seed);
        let (sites, block) = subsample(
            &records,
            base.n_sites(),
            cmp.subsample_sites,
            cmp.subsample_length,
            &mut rng,
        )?;
        let mut traces = Vec::with_capacity(families.len());
        for (m, fam) in families.iter().enumerate() {
            let spec = base.with_family(*fam).subset(&sites)?;
            let fit = fit_series(cfg, &spec, &block, rep_seed)?;
            for e in &fit.evidence {
                ev.push(vec![
                    rep.to_string(),
                    cmp.models[m].clone(),
                    e.index.to_string(),
                    f(e.time),
                    f(e.log_increment),
                    f(e.log_cumulative),
                ]);
            }
            traces.push(fit.evidence);
        }
        for m in 0..reference {
            let lbf = log_bayes_factor(&traces[m], &traces[reference])?;
            for (i, (t, b)) in lbf.iter().enumerate() {
                trace.push(vec![
                    rep.to_string(),
                    cmp.models[m].clone(),
                    cmp.models[reference].clone(),
                    i.to_string(),
                    f(*t),
                    f(*b),
                ]);
            }
            bf[m].push(lbf.iter().map(|(_, b)| *b).collect());
            if bf_times.is_empty() {
                bf_times = lbf.iter().map(|(t, _)| *t).collect();
            }
        }
    }
    let mut summary = Table::new(
        "compare_summary",
        &[
            "model",
            "reference",
            "index",
            "t_hours",
            "mean",
            "q2.5",
            "q97.5",
        ],
    );
    for m in 0..reference {
        let len = bf[m].iter().map(Vec::len).min().unwrap_or(0);
        for i in 0..len {
            let x: Vec<f64> = bf[m].iter().map(|r| r[i]).collect();
            let w = vec![1.0; x.len()];
            let q = weighted_quantiles(&x, &w, &[0.025, 0.975])?;
            summary.push(vec![
                cmp.models[m].clone(),
                cmp.models[reference].clone(),
                i.to_string(),
                f(bf_times.get(i).copied().unwrap_or(f64::NAN)),
                f(weighted_mean(&x, &w)?),
                f(q[0]),
                f(q[1]),
            ]);
        }
    }
    Ok(Outputs {
        tables: vec![trace, summary, ev],
        series: None,
    })
}
