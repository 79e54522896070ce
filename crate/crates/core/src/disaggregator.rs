//! Reference disaggregator: a bootstrap particle filter over a factorial HMM.
//!
//! Each appliance is an independent Markov chain over its power states; the
//! observation is the sum of the chains' state powers plus Gaussian noise.
//! The filter is a difficulty probe for the complexity measures, not a
//! state-of-the-art disaggregator.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::complexity::DEFAULT_SIGMA;
use crate::domain::{ApplianceEstimate, ApplianceSet, DisaggregationResult, PowerTrace};

#[derive(Debug, Error, PartialEq)]
pub enum DisaggError {
    #[error("invalid particle filter config: {0}")]
    InvalidConfig(String),
    #[error("no appliances to track")]
    NoAppliances,
    #[error("observation sequence is empty")]
    EmptyTrace,
    #[error("observation {index} is not finite")]
    NonFiniteObservation { index: usize },
    #[error("no ground-truth channel for appliance `{0}`")]
    MissingGroundTruth(String),
    #[error("ground truth has {truth} samples, result has {result}")]
    LengthMismatch { truth: usize, result: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PfConfig {
    pub particle_count: usize,
    /// Observation noise in watts.
    pub sigma_obs: f64,
    /// Probability that an appliance keeps its state between samples.
    pub p_stay: f64,
    /// Resample when the effective sample size drops below this fraction of
    /// the particle count.
    pub ess_fraction: f64,
    /// Marginal probability above which a state is decided outright.
    pub decision_threshold: f64,
    pub seed: u64,
}

impl Default for PfConfig {
    fn default() -> Self {
        PfConfig {
            particle_count: 1000,
            sigma_obs: DEFAULT_SIGMA,
            p_stay: 0.95,
            ess_fraction: 0.5,
            decision_threshold: 0.5,
            seed: 42,
        }
    }
}

impl PfConfig {
    pub fn validate(&self) -> Result<(), DisaggError> {
        let bad = |m: String| Err(DisaggError::InvalidConfig(m));
        if self.particle_count == 0 {
            return bad("particle_count must be >= 1".into());
        }
        if !(self.sigma_obs.is_finite() && self.sigma_obs > 0.0) {
            return bad(format!("sigma_obs must be > 0, got {}", self.sigma_obs));
        }
        for (name, p) in [
            ("p_stay", self.p_stay),
            ("ess_fraction", self.ess_fraction),
            ("decision_threshold", self.decision_threshold),
        ] {
            if !(p > 0.0 && p <= 1.0) {
                return bad(format!("{name} must be in (0, 1], got {p}"));
            }
        }
        Ok(())
    }
}

/// Markov chain of one appliance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApplianceHmm {
    pub name: String,
    pub state_powers: Vec<f64>,
    /// Row-stochastic transition matrix.
    pub transition: Vec<Vec<f64>>,
    pub initial: Vec<f64>,
}

impl ApplianceHmm {
    pub fn state_count(&self) -> usize {
        self.state_powers.len()
    }
}

/// One chain per appliance: `p_stay` on the diagonal, the remainder spread
/// uniformly over the other states, and a uniform initial distribution.
pub fn build_fhmm(set: &ApplianceSet, config: &PfConfig) -> Result<Vec<ApplianceHmm>, DisaggError> {
    config.validate()?;
    if set.is_empty() {
        return Err(DisaggError::NoAppliances);
    }
    if config.p_stay >= 1.0 {
        log::warn!("p_stay = 1: transition matrices are the identity and states can never change");
    }
    Ok(set
        .appliances
        .iter()
        .map(|a| {
            let z = a.state_count();
            let off = (1.0 - config.p_stay) / (z - 1) as f64;
            let transition = (0..z)
                .map(|i| (0..z).map(|j| if i == j { config.p_stay } else { off }).collect())
                .collect();
            ApplianceHmm {
                name: a.name.clone(),
                state_powers: a.state_powers.iter().map(|p| p.watts()).collect(),
                transition,
                initial: vec![1.0 / z as f64; z],
            }
        })
        .collect())
}

fn cumulative(row: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    let mut out: Vec<f64> = row
        .iter()
        .map(|p| {
            acc += p;
            acc
        })
        .collect();
    if let Some(last) = out.last_mut() {
        *last = f64::INFINITY;
    }
    out
}

fn draw(cdf: &[f64], u: f64) -> usize {
    cdf.partition_point(|&c| c <= u).min(cdf.len() - 1)
}

/// Bootstrap particle filter over the joint appliance state.
pub struct ParticleFilter {
    hmms: Vec<ApplianceHmm>,
    transition_cdf: Vec<Vec<Vec<f64>>>,
    config: PfConfig,
    rng: ChaCha8Rng,
    /// `particles[p * appliances + a]` is appliance `a`'s state in particle `p`.
    particles: Vec<usize>,
    weights: Vec<f64>,
    scratch: Vec<usize>,
    started: bool,
    degenerate_steps: usize,
}

impl ParticleFilter {
    pub fn new(hmms: Vec<ApplianceHmm>, config: PfConfig) -> Result<Self, DisaggError> {
        config.validate()?;
        if hmms.is_empty() {
            return Err(DisaggError::NoAppliances);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let n = config.particle_count;
        let mut particles = Vec::with_capacity(n * hmms.len());
        let initial: Vec<Vec<f64>> = hmms.iter().map(|h| cumulative(&h.initial)).collect();
        for _ in 0..n {
            for cdf in &initial {
                particles.push(draw(cdf, rng.random::<f64>()));
            }
        }
        let transition_cdf = hmms
            .iter()
            .map(|h| h.transition.iter().map(|r| cumulative(r)).collect())
            .collect();
        Ok(ParticleFilter {
            transition_cdf,
            rng,
            scratch: vec![0; particles.len()],
            particles,
            weights: vec![1.0 / n as f64; n],
            hmms,
            config,
            started: false,
            degenerate_steps: 0,
        })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn degenerate_steps(&self) -> usize {
        self.degenerate_steps
    }

    fn appliance_count(&self) -> usize {
        self.hmms.len()
    }

    fn predict(&mut self) {
        let na = self.appliance_count();
        for (i, state) in self.particles.iter_mut().enumerate() {
            let cdf = &self.transition_cdf[i % na][*state];
            *state = draw(cdf, self.rng.random::<f64>());
        }
    }

    fn update(&mut self, observation: f64) {
        let na = self.appliance_count();
        let inv_two_var = 0.5 / (self.config.sigma_obs * self.config.sigma_obs);
        let log_lik: Vec<f64> = self
            .particles
            .chunks_exact(na)
            .map(|p| {
                let predicted: f64 = p
                    .iter()
                    .zip(&self.hmms)
                    .map(|(&s, h)| h.state_powers[s])
                    .sum();
                let r = observation - predicted;
                -r * r * inv_two_var
            })
            .collect();
        let unnormalized: f64 = self
            .weights
            .iter()
            .zip(&log_lik)
            .map(|(w, l)| w * l.exp())
            .sum();
        if unnormalized <= 0.0 || !unnormalized.is_finite() {
            self.degenerate_steps += 1;
            log::warn!("all particle weights vanished at observation {observation} W; resetting to uniform");
            let n = self.weights.len() as f64;
            self.weights.iter_mut().for_each(|w| *w = 1.0 / n);
            return;
        }
        // Shift by the best log-likelihood before exponentiating.
        let best = log_lik.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for (w, l) in self.weights.iter_mut().zip(&log_lik) {
            *w *= (l - best).exp();
            total += *w;
        }
        self.weights.iter_mut().for_each(|w| *w /= total);
    }

    fn effective_sample_size(&self) -> f64 {
        1.0 / self.weights.iter().map(|w| w * w).sum::<f64>()
    }

    fn resample_systematic(&mut self) {
        let n = self.weights.len();
        let na = self.appliance_count();
        let step = 1.0 / n as f64;
        let mut u = self.rng.random::<f64>() * step;
        let mut cum = self.weights[0];
        let mut j = 0;
        for i in 0..n {
            while u > cum && j + 1 < n {
                j += 1;
                cum += self.weights[j];
            }
            self.scratch[i * na..(i + 1) * na].copy_from_slice(&self.particles[j * na..(j + 1) * na]);
            u += step;
        }
        std::mem::swap(&mut self.particles, &mut self.scratch);
        self.weights.iter_mut().for_each(|w| *w = step);
    }

    /// Weighted marginal state probabilities of every appliance.
    pub fn marginals(&self) -> Vec<Vec<f64>> {
        let na = self.appliance_count();
        let mut out: Vec<Vec<f64>> = self.hmms.iter().map(|h| vec![0.0; h.state_count()]).collect();
        for (p, w) in self.particles.chunks_exact(na).zip(&self.weights) {
            for (a, &s) in p.iter().enumerate() {
                out[a][s] += w;
            }
        }
        out
    }

    /// A state whose marginal exceeds the threshold is taken (the likeliest
    /// if several do); otherwise the argmax marginal.
    fn decide(&self, marginals: &[f64]) -> usize {
        let argmax = |it: &mut dyn Iterator<Item = (usize, f64)>| {
            it.fold(None::<(usize, f64)>, |best, (z, p)| match best {
                Some((_, bp)) if bp >= p => best,
                _ => Some((z, p)),
            })
            .map(|(z, _)| z)
        };
        let threshold = self.config.decision_threshold;
        let mut over = marginals
            .iter()
            .copied()
            .enumerate()
            .filter(|&(_, p)| p > threshold);
        argmax(&mut over)
            .or_else(|| argmax(&mut marginals.iter().copied().enumerate()))
            .unwrap_or(0)
    }

    /// Processes one observation and returns the decided state per appliance.
    pub fn step(&mut self, observation: f64) -> Vec<usize> {
        if self.started {
            self.predict();
        }
        self.started = true;
        self.update(observation);
        let decisions = self.marginals().iter().map(|m| self.decide(m)).collect();
        let n = self.weights.len() as f64;
        if self.effective_sample_size() < self.config.ess_fraction * n {
            self.resample_systematic();
        }
        decisions
    }
}

/// Runs the filter over an aggregate signal and integrates the decided
/// states into per-appliance energy.
pub fn disaggregate(
    samples: &[f64],
    sample_period: f64,
    hmms: &[ApplianceHmm],
    config: &PfConfig,
) -> Result<DisaggregationResult, DisaggError> {
    if samples.is_empty() {
        return Err(DisaggError::EmptyTrace);
    }
    if let Some(index) = samples.iter().position(|x| !x.is_finite()) {
        return Err(DisaggError::NonFiniteObservation { index });
    }
    let mut pf = ParticleFilter::new(hmms.to_vec(), config.clone())?;
    let mut states: Vec<Vec<usize>> = vec![Vec::with_capacity(samples.len()); hmms.len()];
    for &y in samples {
        for (row, s) in states.iter_mut().zip(pf.step(y)) {
            row.push(s);
        }
    }
    let appliances: Vec<ApplianceEstimate> = hmms
        .iter()
        .zip(states)
        .map(|(h, states)| {
            let watts: f64 = states.iter().map(|&s| h.state_powers[s]).sum();
            ApplianceEstimate {
                name: h.name.clone(),
                states,
                estimated_kwh: watts * sample_period / 3.6e6,
                real_kwh: None,
            }
        })
        .collect();
    let total = appliances.iter().map(|a| a.estimated_kwh).sum();
    Ok(DisaggregationResult {
        sample_period,
        appliances,
        total_estimated_kwh: total,
        total_real_kwh: None,
        degenerate_steps: pf.degenerate_steps(),
    })
}

/// Fills in real energies from ground-truth channels named like the appliances.
pub fn score(
    result: &DisaggregationResult,
    truth: &PowerTrace,
) -> Result<DisaggregationResult, DisaggError> {
    let mut scored = result.clone();
    let mut total = 0.0;
    for a in &mut scored.appliances {
        let channel = truth
            .channel(&a.name)
            .ok_or_else(|| DisaggError::MissingGroundTruth(a.name.clone()))?;
        if channel.samples.len() != a.states.len() {
            return Err(DisaggError::LengthMismatch {
                truth: channel.samples.len(),
                result: a.states.len(),
            });
        }
        let real = truth.channel_energy_kwh(channel);
        a.real_kwh = Some(real);
        total += real;
    }
    scored.total_real_kwh = Some(total);
    Ok(scored)
}

/// Mean over appliances of `|estimated - real| / real`; appliances with no
/// real consumption are skipped.
pub fn mean_relative_energy_error(scored: &DisaggregationResult) -> Option<f64> {
    let errs: Vec<f64> = scored
        .appliances
        .iter()
        .filter_map(|a| {
            let real = a.real_kwh?;
            (real > 0.0).then(|| (a.estimated_kwh - real).abs() / real)
        })
        .collect();
    (!errs.is_empty()).then(|| errs.iter().sum::<f64>() / errs.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::ApplianceModel;
    use crate::ingestion::{synthesize, Schedule};

    fn set(levels: &[(&str, &[f64])]) -> ApplianceSet {
        ApplianceSet::new(
            levels
                .iter()
                .map(|(n, l)| ApplianceModel::from_watts(*n, l).unwrap())
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn two_state_transition_matrix() {
        let h = build_fhmm(&set(&[("a", &[0.0, 100.0])]), &PfConfig::default()).unwrap();
        let expected = [[0.95, 0.05], [0.05, 0.95]];
        for (row, want) in h[0].transition.iter().zip(expected) {
            for (p, w) in row.iter().zip(want) {
                assert!((p - w).abs() < 1e-12);
            }
        }
        assert_eq!(h[0].initial, vec![0.5, 0.5]);
    }

    #[test]
    fn three_state_transition_matrix() {
        let h = build_fhmm(&set(&[("a", &[0.0, 100.0, 200.0])]), &PfConfig::default()).unwrap();
        for (i, row) in h[0].transition.iter().enumerate() {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            for (j, &p) in row.iter().enumerate() {
                let expected = if i == j { 0.95 } else { 0.025 };
                assert!((p - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sticky_chain_is_identity() {
        let cfg = PfConfig {
            p_stay: 1.0,
            ..Default::default()
        };
        let h = build_fhmm(&set(&[("a", &[0.0, 100.0])]), &cfg).unwrap();
        assert_eq!(h[0].transition, vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
    }

    #[test]
    fn config_validation() {
        for cfg in [
            PfConfig {
                particle_count: 0,
                ..Default::default()
            },
            PfConfig {
                p_stay: 0.0,
                ..Default::default()
            },
            PfConfig {
                sigma_obs: -1.0,
                ..Default::default()
            },
        ] {
            assert!(matches!(cfg.validate(), Err(DisaggError::InvalidConfig(_))));
        }
    }

    #[test]
    fn square_wave_is_tracked_exactly() {
        let s = set(&[("heater", &[0.0, 1000.0])]);
        let mut sched = Schedule::all_off(1, 400);
        for k in 0..4 {
            sched.set(0, 100 * k + 20..100 * k + 70, 1);
        }
        let house = synthesize(&s, &sched, 0.0, 1.0, 0).unwrap();
        let cfg = PfConfig {
            sigma_obs: 10.0,
            ..Default::default()
        };
        let hmms = build_fhmm(&s, &cfg).unwrap();
        let r = disaggregate(&house.aggregate.channels()[0].samples, 1.0, &hmms, &cfg).unwrap();
        assert_eq!(r.appliances[0].states, sched.states[0]);
        let scored = score(&r, &house.submetered).unwrap();
        let real = scored.appliances[0].real_kwh.unwrap();
        assert!((scored.appliances[0].estimated_kwh - real).abs() <= 0.01 * real);
    }

    #[test]
    fn separated_appliances_are_attributed() {
        let s = set(&[("lamp", &[0.0, 100.0]), ("kettle", &[0.0, 1000.0])]);
        let mut sched = Schedule::all_off(2, 600);
        sched.set(0, 50..150, 1);
        sched.set(1, 250..330, 1);
        sched.set(0, 400..520, 1);
        let house = synthesize(&s, &sched, 2.0, 1.0, 1).unwrap();
        let cfg = PfConfig::default();
        let hmms = build_fhmm(&s, &cfg).unwrap();
        let r = disaggregate(&house.aggregate.channels()[0].samples, 1.0, &hmms, &cfg).unwrap();
        let scored = score(&r, &house.submetered).unwrap();
        for a in &scored.appliances {
            let real = a.real_kwh.unwrap();
            assert!((a.estimated_kwh - real).abs() <= 0.05 * real, "{a:?}");
        }
    }

    #[test]
    fn identical_appliances_keep_total_but_not_attribution() {
        let s = set(&[("a", &[0.0, 500.0]), ("b", &[0.0, 500.0])]);
        let mut sched = Schedule::all_off(2, 800);
        sched.set(0, 100..400, 1);
        sched.set(1, 250..600, 1);
        let house = synthesize(&s, &sched, 2.0, 1.0, 5).unwrap();
        let cfg = PfConfig::default();
        let hmms = build_fhmm(&s, &cfg).unwrap();
        let r = disaggregate(&house.aggregate.channels()[0].samples, 1.0, &hmms, &cfg).unwrap();
        let scored = score(&r, &house.submetered).unwrap();
        let real_total = scored.total_real_kwh.unwrap();
        assert!((scored.total_estimated_kwh - real_total).abs() <= 0.05 * real_total);
    }

    #[test]
    fn weights_stay_normalized_and_runs_repeat() {
        let s = set(&[("a", &[0.0, 100.0, 250.0]), ("b", &[0.0, 700.0])]);
        let cfg = PfConfig {
            particle_count: 300,
            ..Default::default()
        };
        let hmms = build_fhmm(&s, &cfg).unwrap();
        let obs: Vec<f64> = (0..300).map(|t| [0.0, 100.0, 800.0, 950.0, 250.0][(t / 37) % 5]).collect();
        let mut pf = ParticleFilter::new(hmms.clone(), cfg.clone()).unwrap();
        for &y in &obs {
            pf.step(y);
            assert!((pf.weights().iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        let a = disaggregate(&obs, 1.0, &hmms, &cfg).unwrap();
        let b = disaggregate(&obs, 1.0, &hmms, &cfg).unwrap();
        assert_eq!(a, b);
        let sum: f64 = a.appliances.iter().map(|x| x.estimated_kwh).sum();
        assert!((a.total_estimated_kwh - sum).abs() < 1e-9);
    }

    #[test]
    fn impossible_observation_resets_weights() {
        let s = set(&[("a", &[0.0, 10.0])]);
        let cfg = PfConfig {
            sigma_obs: 1.0,
            particle_count: 50,
            ..Default::default()
        };
        let hmms = build_fhmm(&s, &cfg).unwrap();
        let r = disaggregate(&[0.0, 1e6, 0.0], 1.0, &hmms, &cfg).unwrap();
        assert_eq!(r.degenerate_steps, 1);
    }

    #[test]
    fn errors_and_scoring_edges() {
        let s = set(&[("a", &[0.0, 10.0])]);
        let cfg = PfConfig::default();
        let hmms = build_fhmm(&s, &cfg).unwrap();
        assert_eq!(disaggregate(&[], 1.0, &hmms, &cfg), Err(DisaggError::EmptyTrace));
        assert_eq!(
            disaggregate(&[1.0], 1.0, &[], &cfg),
            Err(DisaggError::NoAppliances)
        );

        let all_off = DisaggregationResult {
            sample_period: 1.0,
            appliances: vec![ApplianceEstimate {
                name: "a".into(),
                states: vec![0; 3],
                estimated_kwh: 0.0,
                real_kwh: None,
            }],
            total_estimated_kwh: 0.0,
            total_real_kwh: None,
            degenerate_steps: 0,
        };
        let other = PowerTrace::single("b", 1.0, 0.0, vec![1.0; 3]).unwrap();
        assert_eq!(
            score(&all_off, &other),
            Err(DisaggError::MissingGroundTruth("a".into()))
        );
        let truth = PowerTrace::single("a", 1.0, 0.0, vec![3600.0; 3]).unwrap();
        let scored = score(&all_off, &truth).unwrap();
        assert_eq!(scored.appliances[0].estimated_kwh, 0.0);
        assert!((scored.appliances[0].real_kwh.unwrap() - 0.003).abs() < 1e-12);
    }
}
