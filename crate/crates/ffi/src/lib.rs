//! C ABI over `dlm_ibis`.
//!
//! Objects cross the boundary as opaque handles created by `*_new` or
//! `*_load` functions and released by the matching `*_free`. Every fallible
//! call returns a [`DlmStatus`]; on failure a description is available from
//! [`dlm_last_error_message`] on the same thread until the next failing
//! call. Missing observations are passed as NaN.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use dlm_ibis::data::{load_series, ObservationRecord};
use dlm_ibis::filter::{log_likelihood, CompiledModel, PreparedSeries, StatePrior};
use dlm_ibis::model::{DlmSpec, Family, Location, StaticParams};
use dlm_ibis::parallel::{run_batched, BatchPlan, DEFAULT_BATCH_FLOOR};
use dlm_ibis::smc::{run_online_ibis, EvidencePoint, IbisConfig, ParticleSet, PriorSpec};
use dlm_ibis::stats::weighted_quantiles;
use dlm_ibis::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Result codes returned by every fallible function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DlmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Input = 4,
    Domain = 5,
    Numerical = 6,
    DegenerateWeights = 7,
    State = 8,
    Io = 9,
    Panic = 10,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> DlmStatus {
    match e {
        Error::Domain(_) => DlmStatus::Domain,
        Error::Input(_) | Error::InputRow { .. } | Error::Ordering { .. } | Error::Csv(_) => {
            DlmStatus::Input
        }
        Error::Numerical { .. } => DlmStatus::Numerical,
        Error::DegenerateWeights => DlmStatus::DegenerateWeights,
        Error::State(_) => DlmStatus::State,
        Error::Config { .. } => DlmStatus::Config,
        Error::Io(_) => DlmStatus::Io,
    }
}

struct Failure(DlmStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(DlmStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(DlmStatus::InvalidArgument, msg.into())
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> DlmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => DlmStatus::Ok,
        Ok(Err(Failure(code, msg))) => {
            set_error(msg);
            code
        }
        Err(_) => {
            set_error("internal panic".into());
            DlmStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(format!("{what} is not valid UTF-8")))
}

unsafe fn slice_arg<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn out_slice<'a>(p: *mut f64, len: usize, need: usize) -> Result<&'a mut [f64], Failure> {
    if p.is_null() {
        return Err(null("output buffer"));
    }
    if len < need {
        return Err(invalid(format!(
            "output buffer holds {len} values, need {need}"
        )));
    }
    Ok(std::slice::from_raw_parts_mut(p, need))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn handle_mut<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("output handle"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

/// Description of the most recent failure on this thread, or NULL. The
/// pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn dlm_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn dlm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// A model structure: family plus site coordinates.
pub struct DlmModel {
    spec: DlmSpec,
}

/// Creates a model. `family` is `sinusoid`, `fourier:q` or `humidity`;
/// `east_km` and `north_km` hold one coordinate per site.
///
/// # Safety
/// Pointers must be valid for the given lengths; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dlm_model_new(
    family: *const c_char,
    east_km: *const f64,
    north_km: *const f64,
    n_sites: usize,
    out: *mut *mut DlmModel,
) -> DlmStatus {
    guard(|| {
        let family: Family = str_arg(family, "family")?.parse()?;
        let east = slice_arg(east_km, n_sites, "east_km")?;
        let north = slice_arg(north_km, n_sites, "north_km")?;
        let locations = (0..n_sites)
            .map(|j| Location::new(j, format!("site{}", j + 1), east[j], north[j]))
            .collect();
        put(
            out,
            DlmModel {
                spec: DlmSpec::new(family, locations)?,
            },
        )
    })
}

/// Number of static parameters, or 0 for a NULL handle.
///
/// # Safety
/// `model` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn dlm_model_n_params(model: *const DlmModel) -> usize {
    model.as_ref().map_or(0, |m| m.spec.n_params())
}

/// # Safety
/// `model` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dlm_model_free(model: *mut DlmModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// An observation series.
pub struct DlmSeries {
    n_sites: usize,
    records: Vec<ObservationRecord>,
}

/// Creates an empty series over `n_sites` sites.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dlm_series_new(n_sites: usize, out: *mut *mut DlmSeries) -> DlmStatus {
    guard(|| {
        if n_sites == 0 {
            return Err(invalid("a series needs at least one site"));
        }
        put(
            out,
            DlmSeries {
                n_sites,
                records: Vec::new(),
            },
        )
    })
}

/// Reads a series in the canonical delimited format.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dlm_series_load(
    path: *const c_char,
    out: *mut *mut DlmSeries,
) -> DlmStatus {
    guard(|| {
        let records = load_series(str_arg(path, "path")?)?;
        let n_sites = records
            .first()
            .map(ObservationRecord::n_sites)
            .ok_or_else(|| invalid("series file holds no records"))?;
        put(out, DlmSeries { n_sites, records })
    })
}

/// Appends one record. NaN marks a missing value; `humidity` may be NULL.
/// Times must increase strictly.
///
/// # Safety
/// `temperature` (and `humidity` if not NULL) must hold `n_sites` values.
#[no_mangle]
pub unsafe extern "C" fn dlm_series_push(
    series: *mut DlmSeries,
    time: f64,
    temperature: *const f64,
    humidity: *const f64,
    n_sites: usize,
) -> DlmStatus {
    guard(|| {
        let s = handle_mut(series, "series")?;
        if n_sites != s.n_sites {
            return Err(invalid(format!(
                "series has {} sites, got {n_sites}",
                s.n_sites
            )));
        }
        let opt = |x: f64| (!x.is_nan()).then_some(x);
        let temperature: Vec<Option<f64>> = slice_arg(temperature, n_sites, "temperature")?
            .iter()
            .map(|&x| opt(x))
            .collect();
        let humidity: Vec<Option<f64>> = if humidity.is_null() {
            vec![None; n_sites]
        } else {
            slice_arg(humidity, n_sites, "humidity")?
                .iter()
                .map(|&x| opt(x))
                .collect()
        };
        if !time.is_finite() {
            return Err(invalid("time must be finite"));
        }
        if let Some(last) = s.records.last() {
            if !(time > last.time) {
                return Err(Error::Ordering {
                    last: last.time,
                    next: time,
                }
                .into());
            }
        }
        let rec = ObservationRecord {
            time,
            temperature,
            humidity,
        };
        rec.check()?;
        s.records.push(rec);
        Ok(())
    })
}

/// Number of records, or 0 for a NULL handle.
///
/// # Safety
/// `series` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn dlm_series_len(series: *const DlmSeries) -> usize {
    series.as_ref().map_or(0, |s| s.records.len())
}

/// # Safety
/// `series` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dlm_series_free(series: *mut DlmSeries) {
    if !series.is_null() {
        drop(Box::from_raw(series));
    }
}

/// Sampler settings. Defaults: 10000 particles, δ = 0.5, infinite window,
/// one batch, no scheduled rejuvenation, one move per trigger, seed 0,
/// default inverse-Gamma prior without the W < V constraint.
pub struct DlmConfig {
    ibis: IbisConfig,
    seed: u64,
    batches: usize,
    batch_floor: usize,
    workers: usize,
    constrain_w_lt_v: bool,
}

/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dlm_config_new(out: *mut *mut DlmConfig) -> DlmStatus {
    guard(|| {
        put(
            out,
            DlmConfig {
                ibis: IbisConfig::default(),
                seed: 0,
                batches: 1,
                batch_floor: DEFAULT_BATCH_FLOOR,
                workers: 0,
                constrain_w_lt_v: false,
            },
        )
    })
}

/// # Safety
/// `config` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dlm_config_free(config: *mut DlmConfig) {
    if !config.is_null() {
        drop(Box::from_raw(config));
    }
}

/// # Safety
/// `config` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn dlm_config_set_seed(config: *mut DlmConfig, seed: u64) -> DlmStatus {
    guard(|| {
        handle_mut(config, "config")?.seed = seed;
        Ok(())
    })
}

/// # Safety
/// `config` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn dlm_config_set_particles(config: *mut DlmConfig, n: usize) -> DlmStatus {
    guard(|| {
        handle_mut(config, "config")?.ibis.n_particles = n;
        Ok(())
    })
}

/// # Safety
/// `config` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn dlm_config_set_delta(config: *mut DlmConfig, delta: f64) -> DlmStatus {
    guard(|| {
        handle_mut(config, "config")?.ibis.delta = delta;
        Ok(())
    })
}

/// Window width in hours; pass `INFINITY` for full IBIS.
///
/// # Safety
/// `config` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn dlm_config_set_window(config: *mut DlmConfig, hours: f64) -> DlmStatus {
    guard(|| {
        handle_mut(config, "config")?.ibis.window = (!hours.is_infinite()).then_some(hours);
        Ok(())
    })
}

/// Batch count and the forced rejuvenation period (0 disables).
///
/// # Safety
/// `config` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn dlm_config_set_batches(
    config: *mut DlmConfig,
    batches: usize,
    rejuvenation_period: usize,
) -> DlmStatus {
    guard(|| {
        let c = handle_mut(config, "config")?;
        c.batches = batches;
        c.ibis.rejuvenation_period = rejuvenation_period;
        Ok(())
    })
}

/// Worker threads for batched runs; 0 picks the default.
///
/// # Safety
/// `config` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn dlm_config_set_workers(
    config: *mut DlmConfig,
    workers: usize,
) -> DlmStatus {
    guard(|| {
        handle_mut(config, "config")?.workers = workers;
        Ok(())
    })
}

/// # Safety
/// `config` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn dlm_config_set_moves_per_trigger(
    config: *mut DlmConfig,
    moves: usize,
) -> DlmStatus {
    guard(|| {
        handle_mut(config, "config")?.ibis.moves_per_trigger = moves;
        Ok(())
    })
}

/// # Safety
/// `config` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn dlm_config_set_constraint(
    config: *mut DlmConfig,
    enabled: bool,
) -> DlmStatus {
    guard(|| {
        handle_mut(config, "config")?.constrain_w_lt_v = enabled;
        Ok(())
    })
}

/// A fitted posterior: weighted particles plus the evidence trace.
pub struct DlmPosterior {
    n_params: usize,
    particles: ParticleSet,
    evidence: Vec<EvidencePoint>,
}

/// Runs IBIS for `model` on `series` with `config`.
///
/// # Safety
/// Handles must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dlm_fit(
    model: *const DlmModel,
    series: *const DlmSeries,
    config: *const DlmConfig,
    out: *mut *mut DlmPosterior,
) -> DlmStatus {
    guard(|| {
        let spec = &handle(model, "model")?.spec;
        let s = handle(series, "series")?;
        let c = handle(config, "config")?;
        let data = PreparedSeries::new(spec, &s.records)?;
        let prior = PriorSpec::new(spec).with_constraint(c.constrain_w_lt_v);
        let state_prior = StatePrior::default_for(spec);
        let (particles, evidence) = if c.batches <= 1 {
            let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
            let o = run_online_ibis(&c.ibis, &data, &prior, &state_prior, spec, &mut rng)?;
            (o.particles, o.evidence)
        } else {
            let plan = BatchPlan::new(
                c.ibis.n_particles,
                c.batches,
                c.ibis.rejuvenation_period,
                c.seed,
                c.batch_floor,
            )?;
            let workers = (c.workers > 0).then_some(c.workers);
            let o = run_batched(&c.ibis, &plan, &data, &prior, &state_prior, spec, workers)?;
            (o.merged, o.evidence)
        };
        put(
            out,
            DlmPosterior {
                n_params: spec.n_params(),
                particles,
                evidence,
            },
        )
    })
}

/// # Safety
/// `posterior` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn dlm_posterior_len(posterior: *const DlmPosterior) -> usize {
    posterior.as_ref().map_or(0, |p| p.particles.len())
}

/// Total log evidence; NaN for a NULL handle.
///
/// # Safety
/// `posterior` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn dlm_posterior_log_evidence(posterior: *const DlmPosterior) -> f64 {
    posterior
        .as_ref()
        .map_or(f64::NAN, |p| p.particles.log_evidence)
}

/// Copies normalised weights into `out` (length ≥ number of particles).
///
/// # Safety
/// `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn dlm_posterior_weights(
    posterior: *const DlmPosterior,
    out: *mut f64,
    len: usize,
) -> DlmStatus {
    guard(|| {
        let p = handle(posterior, "posterior")?;
        let w = p.particles.weights()?;
        out_slice(out, len, w.len())?.copy_from_slice(&w);
        Ok(())
    })
}

/// Copies particle parameters row-major (one row per particle, columns in
/// the model's flattened parameter order).
///
/// # Safety
/// `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn dlm_posterior_params(
    posterior: *const DlmPosterior,
    out: *mut f64,
    len: usize,
) -> DlmStatus {
    guard(|| {
        let p = handle(posterior, "posterior")?;
        let dst = out_slice(out, len, p.particles.len() * p.n_params)?;
        for (row, part) in dst.chunks_mut(p.n_params).zip(&p.particles.particles) {
            row.copy_from_slice(&part.params.flatten());
        }
        Ok(())
    })
}

/// Weighted quantile of parameter `index` at probability `prob`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dlm_posterior_quantile(
    posterior: *const DlmPosterior,
    index: usize,
    prob: f64,
    out: *mut f64,
) -> DlmStatus {
    guard(|| {
        let p = handle(posterior, "posterior")?;
        if index >= p.n_params {
            return Err(invalid(format!("parameter index {index} out of range")));
        }
        let q = weighted_quantiles(
            &p.particles.component(index),
            &p.particles.weights()?,
            &[prob],
        )?;
        *out.as_mut().ok_or_else(|| null("out"))? = q[0];
        Ok(())
    })
}

/// Copies the cumulative log evidence after each record.
///
/// # Safety
/// `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn dlm_posterior_evidence_trace(
    posterior: *const DlmPosterior,
    out: *mut f64,
    len: usize,
) -> DlmStatus {
    guard(|| {
        let p = handle(posterior, "posterior")?;
        let dst = out_slice(out, len, p.evidence.len())?;
        for (d, e) in dst.iter_mut().zip(&p.evidence) {
            *d = e.log_cumulative;
        }
        Ok(())
    })
}

/// # Safety
/// `posterior` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dlm_posterior_free(posterior: *mut DlmPosterior) {
    if !posterior.is_null() {
        drop(Box::from_raw(posterior));
    }
}

/// Exact Kalman log-likelihood of `series` at the flattened `params`, with
/// the default state prior.
///
/// # Safety
/// `params` must hold `n_params` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dlm_log_likelihood(
    model: *const DlmModel,
    series: *const DlmSeries,
    params: *const f64,
    n_params: usize,
    out: *mut f64,
) -> DlmStatus {
    guard(|| {
        let spec = &handle(model, "model")?.spec;
        let s = handle(series, "series")?;
        let flat = slice_arg(params, n_params, "params")?;
        let params = StaticParams::from_flat(spec, flat)?;
        params.validate(spec, f64::INFINITY, false)?;
        let data = PreparedSeries::new(spec, &s.records)?;
        let ll = log_likelihood(
            &CompiledModel::new(spec, &params),
            &StatePrior::default_for(spec),
            &data,
        )?;
        *out.as_mut().ok_or_else(|| null("out"))? = ll;
        Ok(())
    })
}
