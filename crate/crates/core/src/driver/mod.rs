//! Inner/outer loop orchestration for the local, greedy-global, and glocal strategies.

mod outer;
mod runlog;
mod schedule;

pub use outer::{outer_update, OuterOptimizer, OuterState};
pub use runlog::{
    DmdSummary, HypergradRecord, InnerRecord, OuterRecord, RunLog, RunStatus, Source, SpectrumRow,
    Strategy,
};
pub use schedule::Schedule;

use std::hash::{Hash, Hasher};
use std::time::Instant;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::dmd::{glocal_estimate, HypergradTrajectory};
use crate::tangent::{
    local_hypergradient_with_loss, HpEval, HyperParams, InnerOptimizer, OptimizerState,
    TangentError, TangentState, Transform,
};
use crate::tasks::Task;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DriverError {
    #[error("invalid schedule: {0}")]
    Schedule(String),
    #[error("invalid optimizer: {0}")]
    Optimizer(#[from] TangentError),
    #[error("task has {task} parameters but the run expects {expected}")]
    ParamCount { task: usize, expected: usize },
    #[error("outer step {s}: restored state hash {restored:016x} differs from checkpoint {checkpoint:016x}")]
    RestoreMismatch {
        s: u64,
        checkpoint: u64,
        restored: u64,
    },
}

/// Everything that defines a run apart from the task and initial hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    pub strategy: Strategy,
    pub schedule: Schedule,
    pub inner: InnerOptimizer,
    pub outer: OuterOptimizer,
}

/// Parameters, optimizer buffers, and (for hyperparameter strategies) the tangent.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub theta: DVector<f64>,
    pub opt: OptimizerState,
    pub tangent: Option<TangentState>,
}

impl TrainState {
    pub fn new(task: &dyn Task, inner: &InnerOptimizer, q: usize, with_tangent: bool) -> Self {
        let theta = task.initial_params();
        let p = theta.len();
        Self {
            opt: inner.init_state(p),
            tangent: with_tangent.then(|| inner.init_tangent(p, q)),
            theta,
        }
    }

    /// Hash over the exact bit patterns of every stored number.
    pub fn fingerprint(&self) -> u64 {
        let mut h = std::collections::hash_map::DefaultHasher::new();
        hash_floats(&mut h, self.theta.iter());
        for b in &self.opt.buffers {
            hash_floats(&mut h, b.iter());
        }
        self.opt.step.hash(&mut h);
        if let Some(t) = &self.tangent {
            hash_floats(&mut h, t.z_theta.iter());
            for z in &t.z_buffers {
                hash_floats(&mut h, z.iter());
            }
        }
        h.finish()
    }
}

fn hash_floats<'a>(h: &mut impl Hasher, values: impl Iterator<Item = &'a f64>) {
    for v in values {
        v.to_bits().hash(h);
    }
}

pub fn theta_fingerprint(theta: &DVector<f64>) -> u64 {
    let mut h = std::collections::hash_map::DefaultHasher::new();
    hash_floats(&mut h, theta.iter());
    h.finish()
}

/// Last validation loss and local hypergradient seen by [`Runner::advance`].
struct Observed {
    val_loss: f64,
    h: Option<DVector<f64>>,
}

struct Runner<'a> {
    task: &'a dyn Task,
    spec: &'a RunSpec,
    hp: HyperParams,
    outer_state: OuterState,
    log: RunLog,
    start: Instant,
}

impl<'a> Runner<'a> {
    /// Take `steps` inner steps. With `record`, inner losses and every local
    /// hypergradient are logged and pushed onto `traj`.
    fn advance(
        &mut self,
        st: &mut TrainState,
        steps: u64,
        eval: &HpEval,
        mut traj: Option<&mut HypergradTrajectory>,
        record: bool,
    ) -> Result<Observed, TangentError> {
        let stride = self.spec.schedule.log_stride;
        let mut observed = Observed {
            val_loss: f64::NAN,
            h: None,
        };
        for _ in 0..steps {
            let batch = self.task.batch(st.opt.step);
            self.spec.inner.step(
                &mut st.theta,
                &mut st.opt,
                st.tangent.as_mut(),
                eval,
                &batch,
                self.task,
            )?;
            self.log.inner_steps_executed += 1;
            let t = st.opt.step;
            if let Some(tangent) = &st.tangent {
                let (val_loss, h) = local_hypergradient_with_loss(&st.theta, tangent, self.task);
                if h.iter().any(|v| !v.is_finite()) || !val_loss.is_finite() {
                    return Err(TangentError::Diverged { step: t });
                }
                if record {
                    self.log.hypergrads.push(HypergradRecord {
                        step: t,
                        h: h.as_slice().to_vec(),
                    });
                    if let Some(traj) = traj.as_deref_mut() {
                        traj.push(h.clone())
                            .map_err(|_| TangentError::Diverged { step: t })?;
                    }
                }
                observed.val_loss = val_loss;
                observed.h = Some(h);
            }
            if record && t % stride == 0 {
                let val_loss = if st.tangent.is_some() {
                    observed.val_loss
                } else {
                    self.task.val_loss(&st.theta)
                };
                observed.val_loss = val_loss;
                self.log.inner.push(InnerRecord {
                    step: t,
                    train_loss: self.task.train_loss(&st.theta, &eval.values, &batch),
                    val_loss,
                });
            }
        }
        Ok(observed)
    }

    fn diverged(&mut self, err: TangentError) {
        let step = match err {
            TangentError::Diverged { step } => step,
            _ => 0,
        };
        self.log.status = RunStatus::Diverged {
            step,
            message: err.to_string(),
        };
    }

    fn check_ranges(&self) -> Result<(), String> {
        let values = self.hp.values();
        for ((v, t), name) in values.iter().zip(self.hp.transforms()).zip(self.hp.names()) {
            if *t == Transform::Sigmoid && !(*v > 0.0 && *v < 1.0) {
                return Err(format!("hyperparameter `{name}` left (0, 1): {v}"));
            }
        }
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    fn update(
        &mut self,
        s: u64,
        st: &TrainState,
        h: DVector<f64>,
        source: Source,
        val_loss: f64,
        dmd: Option<DmdSummary>,
        note: Option<String>,
        hashes: (Option<u64>, Option<u64>),
    ) -> Result<(), String> {
        let before = self.hp.raw().to_vec();
        let applied = outer_update(&self.spec.outer, &mut self.hp, &h, &mut self.outer_state);
        let note = match (applied, note) {
            (false, Some(n)) => Some(format!("{n}; update skipped: non-finite hypergradient")),
            (false, None) => Some("update skipped: non-finite hypergradient".into()),
            (true, n) => n,
        };
        self.log.outer.push(OuterRecord {
            s,
            step: st.opt.step,
            phi_raw_before: before,
            phi_raw_after: self.hp.raw().to_vec(),
            phi_after: self.hp.values(),
            hypergrad: h.as_slice().to_vec(),
            source,
            applied,
            val_loss,
            dmd,
            note,
            theta_hash: theta_fingerprint(&st.theta),
            checkpoint_hash: hashes.0,
            restored_hash: hashes.1,
            wall_time_s: self.start.elapsed().as_secs_f64(),
        });
        self.check_ranges()
    }

    fn finish(mut self, st: &TrainState) -> RunLog {
        if self.log.completed() {
            self.log.final_metrics = self.task.evaluate(&st.theta, &self.hp.values());
        }
        self.log.final_phi_raw = self.hp.raw().to_vec();
        self.log.final_phi = self.hp.values();
        self.log.final_theta_hash = theta_fingerprint(&st.theta);
        self.log.wall_time_s = self.start.elapsed().as_secs_f64();
        self.log
    }

    fn run_intervals(mut self) -> Result<RunLog, DriverError> {
        let sched = self.spec.schedule;
        let q = self.hp.len();
        let strategy = self.spec.strategy;
        let mut st = TrainState::new(self.task, &self.spec.inner, q, strategy != Strategy::NoHpo);

        if strategy == Strategy::NoHpo {
            let eval = self.hp.transform();
            if let Err(e) = self.advance(&mut st, sched.total_steps, &eval, None, true) {
                self.diverged(e);
            }
            return Ok(self.finish(&st));
        }

        for s in 1..=sched.outer_steps() {
            if sched.reset_tangent {
                if let Some(t) = st.tangent.as_mut() {
                    t.reset();
                }
            }
            let eval = self.hp.transform();
            let mut traj = HypergradTrajectory::new(q);
            let observed = match self.advance(&mut st, sched.tau, &eval, Some(&mut traj), true) {
                Ok(o) => o,
                Err(e) => {
                    self.diverged(e);
                    break;
                }
            };
            let last_h = observed.h.expect("hypergradient strategies carry a tangent");
            let mut hashes = (None, None);
            let (h, source, dmd, note) = match strategy {
                Strategy::Local => (last_h, Source::Local, None, None),
                Strategy::Glocal => {
                    let window = traj.trailing(sched.sigma as usize);
                    match glocal_estimate(&window, &sched.glocal_settings()) {
                        Ok(fit) => {
                            let summary = DmdSummary::from(&fit);
                            if fit.estimate.diverging {
                                let note = format!(
                                    "spectral radius {:.4} exceeds 1 + {}",
                                    fit.model.spectral_radius, sched.divergence_tol
                                );
                                (last_h, Source::FallbackLocal, Some(summary), Some(note))
                            } else if fit.estimate.kept_mode_count == 0 {
                                let note = "no eigenvalue near 1".to_string();
                                (last_h, Source::FallbackLocal, Some(summary), Some(note))
                            } else {
                                (fit.estimate.value, Source::Glocal, Some(summary), None)
                            }
                        }
                        Err(e) => (last_h, Source::FallbackLocal, None, Some(e.to_string())),
                    }
                }
                Strategy::Global => {
                    let remaining = sched.total_steps - s * sched.tau;
                    if remaining == 0 {
                        (last_h, Source::GlobalPlayout, None, None)
                    } else {
                        let checkpoint_hash = st.fingerprint();
                        let checkpoint = st.clone();
                        let playout = self.advance(&mut st, remaining, &eval, None, false);
                        st = checkpoint;
                        let restored_hash = st.fingerprint();
                        if restored_hash != checkpoint_hash {
                            return Err(DriverError::RestoreMismatch {
                                s,
                                checkpoint: checkpoint_hash,
                                restored: restored_hash,
                            });
                        }
                        hashes = (Some(checkpoint_hash), Some(restored_hash));
                        match playout {
                            Ok(o) => (
                                o.h.expect("playout carries a tangent"),
                                Source::GlobalPlayout,
                                None,
                                None,
                            ),
                            Err(e) => (
                                last_h,
                                Source::FallbackLocal,
                                None,
                                Some(format!("playout failed: {e}")),
                            ),
                        }
                    }
                }
                Strategy::GlobalFull | Strategy::NoHpo => unreachable!(),
            };
            if let Err(msg) = self.update(s, &st, h, source, observed.val_loss, dmd, note, hashes) {
                self.log.status = RunStatus::Diverged {
                    step: st.opt.step,
                    message: msg,
                };
                break;
            }
        }
        Ok(self.finish(&st))
    }

    /// Non-greedy reference: each outer step trains from scratch for `T` steps
    /// and uses `h_T`; a final run reports metrics for the last hyperparameters.
    fn run_full_restarts(mut self) -> Result<RunLog, DriverError> {
        let sched = self.spec.schedule;
        let q = self.hp.len();
        for s in 1..=sched.outer_steps() {
            let eval = self.hp.transform();
            let mut st = TrainState::new(self.task, &self.spec.inner, q, true);
            match self.advance(&mut st, sched.total_steps, &eval, None, false) {
                Ok(o) => {
                    let h = o.h.expect("full restart carries a tangent");
                    if let Err(msg) =
                        self.update(s, &st, h, Source::GlobalFull, o.val_loss, None, None, (None, None))
                    {
                        self.log.status = RunStatus::Diverged {
                            step: st.opt.step,
                            message: msg,
                        };
                        return Ok(self.finish(&st));
                    }
                }
                Err(e) => {
                    self.diverged(e);
                    return Ok(self.finish(&st));
                }
            }
        }
        let eval = self.hp.transform();
        let mut st = TrainState::new(self.task, &self.spec.inner, q, true);
        let mut traj = HypergradTrajectory::new(q);
        if let Err(e) = self.advance(&mut st, sched.total_steps, &eval, Some(&mut traj), true) {
            self.diverged(e);
        }
        Ok(self.finish(&st))
    }
}

/// Run one strategy on `task` starting from `hp0`.
pub fn run(task: &dyn Task, hp0: &HyperParams, spec: &RunSpec) -> Result<RunLog, DriverError> {
    spec.schedule.validate()?;
    spec.inner.validate(hp0.len())?;
    let runner = Runner {
        task,
        spec,
        hp: hp0.clone(),
        outer_state: OuterState::new(hp0.len()),
        log: RunLog {
            strategy: spec.strategy,
            hp_names: hp0.names().to_vec(),
            status: RunStatus::Completed,
            inner: Vec::new(),
            outer: Vec::new(),
            hypergrads: Vec::new(),
            final_metrics: Vec::new(),
            final_phi_raw: Vec::new(),
            final_phi: Vec::new(),
            final_theta_hash: 0,
            inner_steps_executed: 0,
            wall_time_s: 0.0,
        },
        start: Instant::now(),
    };
    match spec.strategy {
        Strategy::GlobalFull => runner.run_full_restarts(),
        _ => runner.run_intervals(),
    }
}

pub fn run_local(task: &dyn Task, hp0: &HyperParams, spec: &RunSpec) -> Result<RunLog, DriverError> {
    run(task, hp0, &RunSpec { strategy: Strategy::Local, ..*spec })
}

pub fn run_global_greedy(
    task: &dyn Task,
    hp0: &HyperParams,
    spec: &RunSpec,
) -> Result<RunLog, DriverError> {
    run(task, hp0, &RunSpec { strategy: Strategy::Global, ..*spec })
}

pub fn run_glocal(task: &dyn Task, hp0: &HyperParams, spec: &RunSpec) -> Result<RunLog, DriverError> {
    run(task, hp0, &RunSpec { strategy: Strategy::Glocal, ..*spec })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tangent::{HpSource, SgdConfig};
    use crate::tasks::{quadratic_oracle_hypergradient, QuadraticTask};

    fn setup(lr: f64) -> (QuadraticTask, HyperParams, SgdConfig) {
        let task = QuadraticTask::random(6, 0.2, 1.0, 3).unwrap();
        let hp = HyperParams::from_values([
            ("lr", Transform::Sigmoid, lr),
            ("wd", Transform::Sigmoid, 0.02),
        ])
        .unwrap();
        let cfg = SgdConfig {
            lr: HpSource::Learned(0),
            momentum: HpSource::Fixed(0.0),
            weight_decay: HpSource::Learned(1),
        };
        (task, hp, cfg)
    }

    fn spec(strategy: Strategy, total: u64, tau: u64, cfg: SgdConfig) -> RunSpec {
        RunSpec {
            strategy,
            schedule: Schedule {
                total_steps: total,
                tau,
                sigma: tau.min(40),
                delay_m: 5,
                log_stride: 5,
                ..Schedule::default()
            },
            inner: InnerOptimizer::Sgd(cfg),
            outer: OuterOptimizer::default(),
        }
    }

    fn strip(log: &RunLog) -> RunLog {
        let mut log = log.clone();
        log.strategy = Strategy::Local;
        log.wall_time_s = 0.0;
        for r in &mut log.outer {
            r.wall_time_s = 0.0;
            r.source = Source::Local;
            r.checkpoint_hash = None;
            r.restored_hash = None;
        }
        log
    }

    #[test]
    fn local_and_global_coincide_when_tau_is_total() {
        let (task, hp, cfg) = setup(0.3);
        let local = run(&task, &hp, &spec(Strategy::Local, 60, 60, cfg)).unwrap();
        let global = run(&task, &hp, &spec(Strategy::Global, 60, 60, cfg)).unwrap();
        assert_eq!(local.outer.len(), 1);
        assert_eq!(strip(&local), strip(&global));
        assert_eq!(global.outer[0].source, Source::GlobalPlayout);
    }

    #[test]
    fn first_playout_matches_oracle() {
        let (task, hp, cfg) = setup(0.3);
        let log = run(&task, &hp, &spec(Strategy::Global, 200, 20, cfg)).unwrap();
        let oracle = quadratic_oracle_hypergradient(&task, &hp, &cfg, 200).unwrap();
        let h = DVector::from_vec(log.outer[0].hypergrad.clone());
        assert!((&h - &oracle).amax() <= 1e-10 * oracle.amax());
        for r in &log.outer[..log.outer.len() - 1] {
            assert_eq!(r.checkpoint_hash, r.restored_hash);
            assert!(r.checkpoint_hash.is_some());
        }
        // Playouts cost Σ_s (T − sτ) extra steps.
        assert_eq!(log.inner_steps_executed, 200 + (0..10).map(|s| 200 - 20 * (s + 1)).sum::<u64>());
    }

    #[test]
    fn local_tags_and_counts() {
        let (task, hp, cfg) = setup(0.3);
        let log = run(&task, &hp, &spec(Strategy::Local, 100, 20, cfg)).unwrap();
        assert!(log.completed());
        assert_eq!(log.outer.len(), 5);
        assert!(log.outer.iter().all(|r| r.source == Source::Local && r.applied));
        assert_eq!(log.hypergrads.len(), 100);
        assert_eq!(log.inner.len(), 20);
        assert!(log.metric("val_loss").is_some());
    }

    #[test]
    fn glocal_on_converged_dynamics_returns_the_constant() {
        let task = QuadraticTask::random(4, 0.9, 1.0, 1).unwrap();
        let hp = HyperParams::from_values([
            ("lr", Transform::Sigmoid, 0.9),
            ("wd", Transform::Sigmoid, 0.02),
        ])
        .unwrap();
        let cfg = SgdConfig {
            lr: HpSource::Learned(0),
            momentum: HpSource::Fixed(0.0),
            weight_decay: HpSource::Learned(1),
        };
        let log = run(&task, &hp, &spec(Strategy::Glocal, 100, 100, cfg)).unwrap();
        let r = &log.outer[0];
        assert_eq!(r.source, Source::Glocal);
        let last = &log.hypergrads.last().unwrap().h;
        for (a, b) in r.hypergrad.iter().zip(last) {
            assert!((a - b).abs() < 1e-6 * b.abs().max(1.0));
        }
        assert!(r.dmd.as_ref().unwrap().kept_mode_count >= 1);
    }

    #[test]
    fn no_hpo_keeps_hyperparameters() {
        let (task, hp, cfg) = setup(0.3);
        let log = run(&task, &hp, &spec(Strategy::NoHpo, 100, 20, cfg)).unwrap();
        assert!(log.outer.is_empty() && log.hypergrads.is_empty());
        assert_eq!(log.final_phi_raw, hp.raw());
        assert_eq!(log.inner.len(), 20);
    }

    #[test]
    fn divergent_training_is_reported() {
        let (task, _, cfg) = setup(0.3);
        let hp = HyperParams::new(
            vec![50.0, -5.0],
            vec![Transform::Identity, Transform::Sigmoid],
            vec!["lr".into(), "wd".into()],
        )
        .unwrap();
        let log = run(&task, &hp, &spec(Strategy::Local, 2000, 20, cfg)).unwrap();
        assert!(matches!(log.status, RunStatus::Diverged { .. }));
        assert!(log.final_metrics.is_empty());
    }

    #[test]
    fn full_restart_reference_runs() {
        let (task, hp, cfg) = setup(0.3);
        let log = run(&task, &hp, &spec(Strategy::GlobalFull, 40, 20, cfg)).unwrap();
        assert_eq!(log.outer.len(), 2);
        assert_eq!(log.inner_steps_executed, 3 * 40);
        let oracle = quadratic_oracle_hypergradient(&task, &hp, &cfg, 40).unwrap();
        let h = DVector::from_vec(log.outer[0].hypergrad.clone());
        assert!((&h - &oracle).amax() <= 1e-10 * oracle.amax());
    }

    #[test]
    fn invalid_schedule_is_rejected() {
        let (task, hp, cfg) = setup(0.3);
        let err = run(&task, &hp, &spec(Strategy::Local, 100, 30, cfg)).unwrap_err();
        assert!(matches!(err, DriverError::Schedule(_)));
    }
}
