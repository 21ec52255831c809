//! Batched IBIS: particles split into disjoint batches that run
//! independently (local weights, triggers, resampling and proposals) and
//! are merged once at the end.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::filter::{PreparedSeries, StatePrior};
use crate::model::DlmSpec;
use crate::smc::{run_online_ibis, EvidencePoint, IbisConfig, IbisOutput, ParticleSet, PriorSpec};
use crate::stats::log_mean_exp;

pub const DEFAULT_REJUVENATION_PERIOD: usize = 20;
pub const DEFAULT_BATCH_FLOOR: usize = 50;

/// How particles are split across batches, and each batch's seed.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchPlan {
    pub n_batches: usize,
    pub particles_per_batch: usize,
    pub rejuvenation_period: usize,
    pub seeds: Vec<u64>,
}

impl BatchPlan {
    /// Splits `n_particles` into `n_batches` equal batches. Batch 0 uses the
    /// master seed, so a single batch reproduces the serial engine; later
    /// seeds are drawn from a generator keyed by the master seed.
    pub fn new(
        n_particles: usize,
        n_batches: usize,
        rejuvenation_period: usize,
        master_seed: u64,
        floor: usize,
    ) -> Result<Self> {
        if n_batches == 0 {
            return Err(Error::config("batches", "need at least one batch"));
        }
        if n_particles % n_batches != 0 {
            return Err(Error::config(
                "batches",
                format!("{n_particles} particles do not split evenly into {n_batches} batches"),
            ));
        }
        let per = n_particles / n_batches;
        if per < floor.max(2) {
            return Err(Error::config(
                "batches",
                format!(
                    "{per} particles per batch is below the floor of {}",
                    floor.max(2)
                ),
            ));
        }
        let mut seeds = vec![master_seed];
        let mut gen = ChaCha8Rng::seed_from_u64(master_seed);
        while seeds.len() < n_batches {
            let s: u64 = gen.random();
            if !seeds.contains(&s) {
                seeds.push(s);
            }
        }
        Ok(Self {
            n_batches,
            particles_per_batch: per,
            rejuvenation_period,
            seeds,
        })
    }

    pub fn n_particles(&self) -> usize {
        self.n_batches * self.particles_per_batch
    }
}

/// Per-batch load and mixing diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchDiagnostics {
    pub batch: usize,
    pub triggers: usize,
    pub acceptance_rate: f64,
    pub filter_evaluations: u64,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone)]
pub struct BatchedOutput {
    pub merged: ParticleSet,
    pub evidence: Vec<EvidencePoint>,
    pub batches: Vec<IbisOutput>,
    pub diagnostics: Vec<BatchDiagnostics>,
}

/// Runs every batch as its own IBIS instance on a pool of `workers`
/// threads (`None` uses rayon's default), then merges.
///
/// Each batch sees the same `config` except for its particle count and the
/// plan's rejuvenation period. Outputs depend only on the plan's seeds,
/// never on scheduling.
#[allow(clippy::too_many_arguments)]
pub fn run_batched(
    config: &IbisConfig,
    plan: &BatchPlan,
    data: &PreparedSeries,
    prior: &PriorSpec,
    state_prior: &StatePrior,
    spec: &DlmSpec,
    workers: Option<usize>,
) -> Result<BatchedOutput> {
    let batch_config = IbisConfig {
        n_particles: plan.particles_per_batch,
        rejuvenation_period: plan.rejuvenation_period,
        ..config.clone()
    };
    batch_config.validate()?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(w) = workers {
        if w == 0 {
            return Err(Error::config("workers", "need at least one worker"));
        }
        builder = builder.num_threads(w);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::config("workers", e.to_string()))?;
    let runs: Vec<Result<(IbisOutput, f64)>> = pool.install(|| {
        plan.seeds
            .par_iter()
            .map(|&seed| {
                let start = Instant::now();
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let out = run_online_ibis(&batch_config, data, prior, state_prior, spec, &mut rng)?;
                Ok((out, start.elapsed().as_secs_f64()))
            })
            .collect()
    });
    let mut batches = Vec::with_capacity(runs.len());
    let mut diagnostics = Vec::with_capacity(runs.len());
    for (b, r) in runs.into_iter().enumerate() {
        let (out, secs) = r?;
        diagnostics.push(BatchDiagnostics {
            batch: b,
            triggers: out.triggers.len(),
            acceptance_rate: out.acceptance_rate(),
            filter_evaluations: out.filter_evaluations,
            wall_seconds: secs,
        });
        batches.push(out);
    }
    let sets: Vec<ParticleSet> = batches.iter().map(|b| b.particles.clone()).collect();
    let merged = final_merge(&sets)?;
    let evidence = merge_evidence(&batches);
    Ok(BatchedOutput {
        merged,
        evidence,
        batches,
        diagnostics,
    })
}

/// Equal-weight average of the batch evidence traces, on the natural scale.
fn merge_evidence(batches: &[IbisOutput]) -> Vec<EvidencePoint> {
    let Some(first) = batches.first() else {
        return Vec::new();
    };
    let mut prev = 0.0;
    first
        .evidence
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let cum: Vec<f64> = batches
                .iter()
                .map(|b| b.evidence[i].log_cumulative)
                .collect();
            let c = log_mean_exp(&cum);
            let point = EvidencePoint {
                index: e.index,
                time: e.time,
                log_increment: c - prev,
                log_cumulative: c,
            };
            prev = c;
            point
        })
        .collect()
}

/// Concatenates batches, giving each batch equal total mass, and
/// renormalises the weights jointly. Evidence is the log of the mean of the
/// batch evidences.
pub fn final_merge(batches: &[ParticleSet]) -> Result<ParticleSet> {
    if batches.is_empty() {
        return Err(Error::Input("nothing to merge".into()));
    }
    let t_end = batches[0].particles.first().and_then(|p| p.filter.t_last);
    if batches
        .iter()
        .flat_map(|b| &b.particles)
        .any(|p| p.filter.t_last != t_end)
    {
        return Err(Error::State(
            "batches are not at the same terminal time".into(),
        ));
    }
    let mut particles = Vec::with_capacity(batches.iter().map(ParticleSet::len).sum());
    for b in batches {
        let lw = b.log_weights();
        let norm = crate::smc::log_sum_exp(&lw);
        if !norm.is_finite() {
            return Err(Error::DegenerateWeights);
        }
        for p in &b.particles {
            let mut p = p.clone();
            p.log_weight -= norm;
            particles.push(p);
        }
    }
    let mut lw: Vec<f64> = particles.iter().map(|p| p.log_weight).collect();
    crate::smc::normalize_log_weights(&mut lw)?;
    for (p, w) in particles.iter_mut().zip(lw) {
        p.log_weight = w;
    }
    let evs: Vec<f64> = batches.iter().map(|b| b.log_evidence).collect();
    Ok(ParticleSet {
        particles,
        log_evidence: log_mean_exp(&evs),
    })
}
