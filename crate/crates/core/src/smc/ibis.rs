use nalgebra::{DMatrix, DVector};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_distr::StandardNormal;

use super::{
    gamma_scale, log_sum_exp, normalized_weights, proposal_factor, weighted_covariance,
    window_partition, KdeProposal, PriorSpec,
};
use crate::error::{Error, Result};
use crate::filter::{
    CompiledModel, FilterState, PreparedSeries, PreparedStep, StatePrior, Workspace,
};
use crate::model::{DlmSpec, StaticParams};

/// Run settings shared by the full and windowed samplers.
#[derive(Debug, Clone, PartialEq)]
pub struct IbisConfig {
    pub n_particles: usize,
    /// Resample-move fires when `ESS < δN`.
    pub delta: f64,
    /// Window width in hours; `None` runs full IBIS.
    pub window: Option<f64>,
    /// Also fire every this many records; 0 disables.
    pub rejuvenation_period: usize,
    /// MH steps per particle per trigger.
    pub moves_per_trigger: usize,
}

impl Default for IbisConfig {
    fn default() -> Self {
        Self {
            n_particles: 10_000,
            delta: 0.5,
            window: None,
            rejuvenation_period: 0,
            moves_per_trigger: 1,
        }
    }
}

impl IbisConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_particles < 2 {
            return Err(Error::config("particles", "need at least 2 particles"));
        }
        if !(self.delta > 0.0 && self.delta <= 1.0) {
            return Err(Error::config("delta", "must lie in (0, 1]"));
        }
        if let Some(t) = self.window {
            if !(t > 0.0) {
                return Err(Error::config("window", "width must be positive or inf"));
            }
        }
        if self.moves_per_trigger == 0 {
            return Err(Error::config("moves_per_trigger", "must be at least 1"));
        }
        Ok(())
    }
}

/// Filter summaries kept at the start of the current window.
#[derive(Debug, Clone, PartialEq)]
pub struct Anchor {
    pub m: DVector<f64>,
    pub c: DMatrix<f64>,
    pub t_last: Option<f64>,
    pub loglik_total: f64,
}

impl Anchor {
    fn of(state: &FilterState) -> Self {
        Self {
            m: state.m.clone(),
            c: state.c.clone(),
            t_last: state.t_last,
            loglik_total: state.loglik_total,
        }
    }

    fn restore(&self) -> FilterState {
        FilterState {
            m: self.m.clone(),
            c: self.c.clone(),
            loglik_total: self.loglik_total,
            loglik_window: 0.0,
            t_last: self.t_last,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Particle {
    pub params: StaticParams,
    pub filter: FilterState,
    /// Normalised across the set after every reweight.
    pub log_weight: f64,
    pub anchor: Option<Anchor>,
    model: CompiledModel,
}

impl Particle {
    pub fn new(spec: &DlmSpec, params: StaticParams, prior: &StatePrior, log_weight: f64) -> Self {
        Self {
            model: CompiledModel::new(spec, &params),
            params,
            filter: FilterState::from_prior(prior),
            log_weight,
            anchor: None,
        }
    }

    pub fn model(&self) -> &CompiledModel {
        &self.model
    }
}

#[derive(Debug, Clone)]
pub struct ParticleSet {
    pub particles: Vec<Particle>,
    /// Running log evidence `Σ log L_{tᵢ}`.
    pub log_evidence: f64,
}

impl ParticleSet {
    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn log_weights(&self) -> Vec<f64> {
        self.particles.iter().map(|p| p.log_weight).collect()
    }

    pub fn weights(&self) -> Result<Vec<f64>> {
        normalized_weights(&self.log_weights())
    }

    pub fn ess(&self) -> Result<f64> {
        super::ess(&self.log_weights())
    }

    /// Column `i` of the flattened parameters.
    pub fn component(&self, i: usize) -> Vec<f64> {
        self.particles
            .iter()
            .map(|p| p.params.flatten()[i])
            .collect()
    }

    pub fn flat_params(&self) -> Vec<Vec<f64>> {
        self.particles.iter().map(|p| p.params.flatten()).collect()
    }

    fn log_free(&self, free: &[usize]) -> Vec<Vec<f64>> {
        self.particles
            .iter()
            .map(|p| {
                let flat = p.params.flatten();
                free.iter().map(|&i| flat[i].ln()).collect()
            })
            .collect()
    }
}

/// One entry of the evidence trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvidencePoint {
    pub index: usize,
    pub time: f64,
    pub log_increment: f64,
    pub log_cumulative: f64,
}

/// A resample-move event.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TriggerEvent {
    pub index: usize,
    pub time: f64,
    pub window: usize,
    pub ess: f64,
    /// Fired by the rejuvenation schedule while ESS was above threshold.
    pub scheduled: bool,
    pub proposals: u64,
    pub accepted: u64,
}

impl TriggerEvent {
    pub fn acceptance_rate(&self) -> f64 {
        if self.proposals == 0 {
            f64::NAN
        } else {
            self.accepted as f64 / self.proposals as f64
        }
    }
}

#[derive(Debug, Clone)]
pub struct IbisOutput {
    pub particles: ParticleSet,
    pub evidence: Vec<EvidencePoint>,
    pub triggers: Vec<TriggerEvent>,
    /// Filter steps spent replaying data inside moves.
    pub filter_evaluations: u64,
}

impl IbisOutput {
    pub fn acceptance_rate(&self) -> f64 {
        let (p, a) = self
            .triggers
            .iter()
            .fold((0, 0), |(p, a), t| (p + t.proposals, a + t.accepted));
        if p == 0 {
            f64::NAN
        } else {
            a as f64 / p as f64
        }
    }

    pub fn log_evidence(&self) -> f64 {
        self.particles.log_evidence
    }
}

/// Adds per-particle log-likelihood increments to normalised log-weights,
/// renormalises, and returns `log L = log Σ ω̃ₖ exp(ℓₖ)` computed with the
/// weights as they were before the update.
pub fn apply_increments(log_weights: &mut [f64], increments: &[f64]) -> Result<f64> {
    if log_weights.len() != increments.len() {
        return Err(Error::Input("one increment per particle required".into()));
    }
    let prior_norm = log_sum_exp(log_weights);
    if !prior_norm.is_finite() {
        return Err(Error::DegenerateWeights);
    }
    for (w, inc) in log_weights.iter_mut().zip(increments) {
        *w += inc - prior_norm;
    }
    let log_l = log_sum_exp(log_weights);
    if !log_l.is_finite() {
        return Err(Error::DegenerateWeights);
    }
    for w in log_weights.iter_mut() {
        *w -= log_l;
    }
    Ok(log_l)
}

/// Advances every particle's filter by one record and updates the weights
/// and running evidence. Returns the evidence factor `log L_{tᵢ}`.
pub fn reweight(set: &mut ParticleSet, step: &PreparedStep, ws: &mut Workspace) -> Result<f64> {
    let mut inc = Vec::with_capacity(set.len());
    for (k, p) in set.particles.iter_mut().enumerate() {
        let ll = p
            .model
            .assimilate(&mut p.filter, step, ws)
            .map_err(|e| match e {
                Error::Numerical { message, .. } => Error::Numerical {
                    index: k,
                    message: format!("particle {k} at record {}: {message}", step.index),
                },
                other => other,
            })?;
        inc.push(ll);
    }
    let mut lw = set.log_weights();
    let log_l = apply_increments(&mut lw, &inc)?;
    for (p, w) in set.particles.iter_mut().zip(lw) {
        p.log_weight = w;
    }
    set.log_evidence += log_l;
    Ok(log_l)
}

/// `n` independent ancestor draws with probabilities proportional to
/// `weights`.
pub fn resample_indices<R: Rng + ?Sized>(
    weights: &[f64],
    n: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    let dist = WeightedIndex::new(weights).map_err(|_| Error::DegenerateWeights)?;
    Ok((0..n).map(|_| dist.sample(rng)).collect())
}

/// Draws `N` ancestors from the normalised weights and resets the weights
/// to uniform. Filter states and anchors travel with their ancestors.
pub fn multinomial_resample<R: Rng + ?Sized>(set: &mut ParticleSet, rng: &mut R) -> Result<()> {
    let n = set.len();
    let ancestors = resample_indices(&set.weights()?, n, rng)?;
    let uniform = -(n as f64).ln();
    let old = std::mem::take(&mut set.particles);
    set.particles = ancestors
        .into_iter()
        .map(|a| {
            let mut p = old[a].clone();
            p.log_weight = uniform;
            p
        })
        .collect();
    Ok(())
}

/// Everything an MH move needs besides the particle and the data.
#[derive(Debug, Clone, Copy)]
pub struct MoveContext<'a> {
    pub spec: &'a DlmSpec,
    pub prior: &'a PriorSpec,
    pub state_prior: &'a StatePrior,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MoveOutcome {
    pub proposed: bool,
    pub accepted: bool,
    pub filter_evaluations: u64,
}

fn replay(
    model: &CompiledModel,
    mut state: FilterState,
    steps: &[PreparedStep],
    ws: &mut Workspace,
) -> Option<FilterState> {
    for s in steps {
        model.assimilate(&mut state, s, ws).ok()?;
    }
    Some(state)
}

fn propose_flat(current: &[f64], free: &[usize], log_step: &[f64]) -> Vec<f64> {
    let mut flat = current.to_vec();
    for (&i, dz) in free.iter().zip(log_step) {
        flat[i] = (flat[i].ln() + dz).exp();
    }
    flat
}

/// Log-normal random-walk MH step with replay of all data `steps` from the
/// first record. `factor` is a square root of the log-space proposal
/// covariance. The log acceptance ratio is
/// `Δ log prior + Δ log lik + Σ log φ* − Σ log φ` over free components.
pub fn mh_move_full<R: Rng + ?Sized>(
    particle: &mut Particle,
    steps: &[PreparedStep],
    ctx: &MoveContext<'_>,
    factor: &DMatrix<f64>,
    ws: &mut Workspace,
    rng: &mut R,
) -> MoveOutcome {
    let free = ctx.prior.free_indices();
    if free.is_empty() {
        return MoveOutcome::default();
    }
    let z = DVector::from_fn(free.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
    let step = factor * z;
    let current = particle.params.flatten();
    let proposal = propose_flat(&current, free, step.as_slice());
    let u: f64 = rng.random();
    let mut out = MoveOutcome {
        proposed: true,
        ..Default::default()
    };
    let lp_new = ctx.prior.log_density(&proposal);
    if !lp_new.is_finite() {
        return out;
    }
    let lp_old = ctx.prior.log_density(&current);
    let Ok(params) = StaticParams::from_flat(ctx.spec, &proposal) else {
        return out;
    };
    let model = CompiledModel::new(ctx.spec, &params);
    out.filter_evaluations = steps.len() as u64;
    let Some(state) = replay(&model, FilterState::from_prior(ctx.state_prior), steps, ws) else {
        return out;
    };
    let jac: f64 = free
        .iter()
        .map(|&i| proposal[i].ln() - current[i].ln())
        .sum();
    let log_alpha = lp_new - lp_old + state.loglik_total - particle.filter.loglik_total + jac;
    if u.ln() < log_alpha {
        particle.params = params;
        particle.model = model;
        particle.filter = state;
        out.accepted = true;
    }
    out
}

/// The weighted set as it stood when the current window opened: the kernel
/// density of its log-parameters and each particle's filter anchor.
#[derive(Debug, Clone)]
pub struct WindowStart {
    pub kde: KdeProposal,
    pub anchors: Vec<Anchor>,
}

impl WindowStart {
    /// `None` when the set cannot support a kernel density (fewer than two
    /// particles, no free parameters or degenerate weights).
    pub fn capture(set: &ParticleSet, free: &[usize]) -> Result<Option<Self>> {
        if free.is_empty() || set.particles.len() < 2 {
            return Ok(None);
        }
        let weights = set.weights()?;
        let kde = match KdeProposal::from_weighted(set.log_free(free), &weights) {
            Ok(k) => k,
            Err(Error::DegenerateWeights) => return Ok(None),
            Err(e) => return Err(e),
        };
        let anchors = set
            .particles
            .iter()
            .map(|p| p.anchor.clone().unwrap_or_else(|| Anchor::of(&p.filter)))
            .collect();
        Ok(Some(Self { kde, anchors }))
    }
}

/// Independence MH step for later windows. The proposal is the window-start
/// kernel density: a centre `j` is drawn by weight, kernel noise is added on
/// the log scale and the filter is replayed over `window_steps` from anchor
/// `j`. Because the proposal equals the prior for the window, the
/// acceptance ratio is the window likelihood ratio alone.
pub fn mh_move_windowed<R: Rng + ?Sized>(
    particle: &mut Particle,
    window_steps: &[PreparedStep],
    ctx: &MoveContext<'_>,
    start: &WindowStart,
    ws: &mut Workspace,
    rng: &mut R,
) -> MoveOutcome {
    let free = ctx.prior.free_indices();
    if free.is_empty() || window_steps.iter().all(|s| s.sites.is_empty()) {
        return MoveOutcome::default();
    }
    let (j, point) = start.kde.sample(rng);
    let mut proposal = particle.params.flatten();
    for (&i, x) in free.iter().zip(&point) {
        proposal[i] = x.exp();
    }
    let u: f64 = rng.random();
    let mut out = MoveOutcome {
        proposed: true,
        ..Default::default()
    };
    if !ctx.prior.in_support(&proposal) {
        return out;
    }
    let Ok(params) = StaticParams::from_flat(ctx.spec, &proposal) else {
        return out;
    };
    let model = CompiledModel::new(ctx.spec, &params);
    let anchor = &start.anchors[j];
    out.filter_evaluations = window_steps.len() as u64;
    let Some(state) = replay(&model, anchor.restore(), window_steps, ws) else {
        return out;
    };
    let log_alpha = state.loglik_window - particle.filter.loglik_window;
    if u.ln() < log_alpha {
        particle.params = params;
        particle.model = model;
        particle.filter = state;
        particle.anchor = Some(anchor.clone());
        out.accepted = true;
    }
    out
}

fn initial_set<R: Rng + ?Sized>(
    n: usize,
    ctx: &MoveContext<'_>,
    rng: &mut R,
) -> Result<ParticleSet> {
    let uniform = -(n as f64).ln();
    let particles = (0..n)
        .map(|_| {
            let flat = ctx.prior.sample(rng)?;
            let params = StaticParams::from_flat(ctx.spec, &flat)?;
            Ok(Particle::new(ctx.spec, params, ctx.state_prior, uniform))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ParticleSet {
        particles,
        log_evidence: 0.0,
    })
}

/// Full IBIS: resample-move with full-data replay whenever `ESS < δN` (or on
/// the rejuvenation schedule). Any window setting in `config` is ignored.
pub fn run_ibis<R: Rng + ?Sized>(
    config: &IbisConfig,
    data: &PreparedSeries,
    prior: &PriorSpec,
    state_prior: &StatePrior,
    spec: &DlmSpec,
    rng: &mut R,
) -> Result<IbisOutput> {
    let config = IbisConfig {
        window: None,
        ..config.clone()
    };
    run_online_ibis(&config, data, prior, state_prior, spec, rng)
}

/// Online IBIS. The first window runs standard IBIS moves; in later
/// windows each particle keeps its filter state at the window start and
/// moves replay only the current window. With `window = None` this is
/// exactly [`run_ibis`].
pub fn run_online_ibis<R: Rng + ?Sized>(
    config: &IbisConfig,
    data: &PreparedSeries,
    prior: &PriorSpec,
    state_prior: &StatePrior,
    spec: &DlmSpec,
    rng: &mut R,
) -> Result<IbisOutput> {
    config.validate()?;
    if data.family() != spec.family() || data.n_sites() != spec.n_sites() {
        return Err(Error::Input(
            "data were prepared for a different model".into(),
        ));
    }
    if prior.n_params() != spec.n_params() {
        return Err(Error::Input(
            "prior does not match the model's parameter count".into(),
        ));
    }
    if state_prior.m0.len() != spec.state_dim() {
        return Err(Error::Input(
            "state prior does not match the model's state size".into(),
        ));
    }
    let ctx = MoveContext {
        spec,
        prior,
        state_prior,
    };
    let steps = data.steps();
    let windows = window_partition(&data.times(), config.window.unwrap_or(f64::INFINITY))?;
    let n = config.n_particles;
    let free = prior.free_indices();
    let mut set = initial_set(n, &ctx, rng)?;
    let mut ws = Workspace::with_dims(spec.state_dim(), spec.n_sites());
    let mut evidence = Vec::with_capacity(steps.len());
    let mut triggers = Vec::new();
    let mut filter_evaluations = 0u64;
    let mut window_start = 0usize;
    let mut window: Option<WindowStart> = None;

    for (i, step) in steps.iter().enumerate() {
        if i > 0 && windows[i] != windows[i - 1] {
            window_start = i;
            for p in &mut set.particles {
                p.anchor = Some(Anchor::of(&p.filter));
                p.filter.loglik_window = 0.0;
            }
            window = WindowStart::capture(&set, free)?;
        }
        let log_l = reweight(&mut set, step, &mut ws)?;
        evidence.push(EvidencePoint {
            index: i,
            time: step.time,
            log_increment: log_l,
            log_cumulative: set.log_evidence,
        });

        let ess = set.ess()?;
        let below = ess < config.delta * n as f64;
        let scheduled = config.rejuvenation_period > 0 && (i + 1) % config.rejuvenation_period == 0;
        if !(below || scheduled) {
            continue;
        }
        let mut event = TriggerEvent {
            index: i,
            time: step.time,
            window: windows[i],
            ess,
            scheduled: !below,
            proposals: 0,
            accepted: 0,
        };
        enum Kernel<'a> {
            Full(DMatrix<f64>),
            Windowed(&'a WindowStart),
            Skip,
        }
        let kernel = if free.is_empty() {
            Kernel::Skip
        } else if windows[i] == 1 {
            let cov = weighted_covariance(&set.log_free(free), &set.weights()?)?;
            Kernel::Full(proposal_factor(&cov, gamma_scale(free.len())))
        } else if steps[window_start..=i].iter().all(|s| s.sites.is_empty()) {
            Kernel::Skip
        } else {
            match &window {
                Some(start) => Kernel::Windowed(start),
                None => Kernel::Skip,
            }
        };
        multinomial_resample(&mut set, rng)?;
        for p in &mut set.particles {
            for _ in 0..config.moves_per_trigger {
                let outcome = match &kernel {
                    Kernel::Full(factor) => {
                        mh_move_full(p, &steps[..=i], &ctx, factor, &mut ws, rng)
                    }
                    Kernel::Windowed(start) => {
                        mh_move_windowed(p, &steps[window_start..=i], &ctx, start, &mut ws, rng)
                    }
                    Kernel::Skip => MoveOutcome::default(),
                };
                event.proposals += u64::from(outcome.proposed);
                event.accepted += u64::from(outcome.accepted);
                filter_evaluations += outcome.filter_evaluations;
            }
        }
        triggers.push(event);
    }

    Ok(IbisOutput {
        particles: set,
        evidence,
        triggers,
        filter_evaluations,
    })
}

/// Cumulative log Bayes factor of model 1 against model 2 at each time.
pub fn log_bayes_factor(m1: &[EvidencePoint], m2: &[EvidencePoint]) -> Result<Vec<(f64, f64)>> {
    if m1.len() != m2.len() {
        return Err(Error::Input(format!(
            "evidence traces differ in length ({} vs {})",
            m1.len(),
            m2.len()
        )));
    }
    let mut acc = 0.0;
    m1.iter()
        .zip(m2)
        .map(|(a, b)| {
            if a.time != b.time {
                return Err(Error::Input(format!(
                    "evidence traces disagree on time ({} vs {})",
                    a.time, b.time
                )));
            }
            acc += a.log_increment - b.log_increment;
            Ok((a.time, acc))
        })
        .collect()
}
