//! Closed-loop episodes: the transition function picks the state, the
//! behaviour's controller for that state drives the robot.

use std::fmt;

use rsm_core::corrections::{Forkable, Terminated, WorldFork};
use rsm_core::lang::EvalError;
use rsm_core::trace::{Trace, TraceElement, TraceError};
use rsm_core::{eval_transition, Bindings, Label, ParameterMap, Shape, TransitionFn};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::world::{boundary, WorldState, DT};
use crate::{attacker, docker};

/// Which behaviour runs, and with it the success predicate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    /// Attacker: success when the ball crosses the goal line.
    Goal,
    /// Docker: success when the machine reaches its end state docked.
    Dock,
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Goal => "goal",
            Task::Dock => "dock",
        })
    }
}

impl Task {
    pub fn states(self) -> &'static [&'static str] {
        match self {
            Task::Goal => attacker::STATES,
            Task::Dock => docker::STATES,
        }
    }

    pub fn inputs(self) -> &'static [(&'static str, Shape)] {
        match self {
            Task::Goal => attacker::INPUTS,
            Task::Dock => docker::INPUTS,
        }
    }

    pub fn vars(self) -> &'static [(&'static str, Shape)] {
        match self {
            Task::Goal => attacker::VARS,
            Task::Dock => docker::VARS,
        }
    }

    /// Default episode length in seconds.
    pub fn time_limit(self) -> f64 {
        match self {
            Task::Goal => 10.0,
            Task::Dock => 30.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub task: Task,
    pub world: WorldState,
    pub time_limit: f64,
}

impl Scenario {
    pub fn new(task: Task, world: WorldState) -> Self {
        Scenario {
            task,
            world,
            time_limit: task.time_limit(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Goal,
    Docked,
    /// Reached the end state away from the dock.
    Undocked,
    Out,
    /// End state reached and nothing is moving.
    Stalled,
    Timeout,
}

impl Outcome {
    pub fn success(self) -> bool {
        matches!(self, Outcome::Goal | Outcome::Docked)
    }
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("the {task} simulator has no {kind} channel `{name}`")]
    UnknownChannel { task: Task, kind: &'static str, name: String },
    #[error("channel `{name}` is declared {declared} but the {task} simulator provides {provided}")]
    ChannelShape {
        task: Task,
        name: String,
        declared: Shape,
        provided: Shape,
    },
    #[error("the {task} simulator has no controller for state \"{0}\"", task = .1)]
    UnknownState(String, Task),
    #[error("invalid time limit {0}")]
    TimeLimit(f64),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Trace(#[from] TraceError),
}

/// Checks that `t` only uses channels and states the simulator provides.
pub fn check_compatible(task: Task, t: &TransitionFn) -> Result<(), SimError> {
    let check = |kind: &'static str, decl: &[(String, Shape)], have: &[(&str, Shape)]| {
        for (n, sh) in decl {
            match have.iter().find(|(h, _)| h == n) {
                None => {
                    return Err(SimError::UnknownChannel {
                        task,
                        kind,
                        name: n.clone(),
                    })
                }
                Some((_, p)) if p != sh => {
                    return Err(SimError::ChannelShape {
                        task,
                        name: n.clone(),
                        declared: *sh,
                        provided: *p,
                    })
                }
                _ => {}
            }
        }
        Ok(())
    };
    check("input", &t.inputs, task.inputs())?;
    check("variable", &t.vars, task.vars())?;
    for s in &t.states {
        if !task.states().contains(&s.as_str()) {
            return Err(SimError::UnknownState(s.to_string(), task));
        }
    }
    Ok(())
}

/// World plus behaviour memory, stepped one tick at a time.
#[derive(Clone, Debug)]
struct Core {
    task: Task,
    world: WorldState,
    mem: attacker::Mem,
    tick: u64,
}

impl Core {
    fn new(task: Task, mut world: WorldState) -> Self {
        let tick = (world.time / DT).round().max(0.0) as u64;
        world.time = tick as f64 * DT;
        Core {
            task,
            world,
            mem: attacker::Mem::default(),
            tick,
        }
    }

    /// Channel values restricted to what `t` declares.
    fn observe(&self, t: &TransitionFn) -> (Bindings, Bindings) {
        let (mut i, mut v) = match self.task {
            Task::Goal => attacker::observe(&self.world, &self.mem),
            Task::Dock => docker::observe(&self.world),
        };
        i.retain(|k, _| t.inputs.iter().any(|(n, _)| n == k));
        v.retain(|k, _| t.vars.iter().any(|(n, _)| n == k));
        (i, v)
    }

    /// One tick with the machine in `next` (coming from `cur`).
    fn advance(&mut self, cur: &str, next: &str) -> Option<Outcome> {
        let w = &mut self.world;
        let out = match self.task {
            Task::Goal => {
                let before = w.ball;
                w.move_robot(attacker::control(next, w));
                w.move_ball();
                attacker::interact(next, w, &mut self.mem);
                attacker::update_mem(cur, next, &mut self.mem);
                match boundary(before, w.ball) {
                    crate::world::BallEvent::Goal => Some(Outcome::Goal),
                    crate::world::BallEvent::Out => Some(Outcome::Out),
                    crate::world::BallEvent::None => (next == "END"
                        && w.ball_vel == crate::geom::V2::ZERO)
                        .then_some(Outcome::Stalled),
                }
            }
            Task::Dock => {
                w.move_robot(docker::control(next, w));
                (next == "END").then(|| {
                    if docker::docked(w) {
                        Outcome::Docked
                    } else {
                        Outcome::Undocked
                    }
                })
            }
        };
        self.tick += 1;
        self.world.time = self.tick as f64 * DT;
        out
    }
}

#[derive(Clone, Debug)]
pub struct Episode {
    /// Every tick up to and including the first element in the end state
    /// (or the last tick before termination). Consecutive elements replay
    /// through the transition function.
    pub trace: Trace,
    pub outcome: Outcome,
    pub success: bool,
    pub ticks: u64,
}

fn simulate(
    t: &TransitionFn,
    p: &ParameterMap,
    s: &Scenario,
    mut trace: Option<&mut Trace>,
) -> Result<(Outcome, u64), SimError> {
    check_compatible(s.task, t)?;
    if !(s.time_limit > 0.0 && s.time_limit.is_finite()) {
        return Err(SimError::TimeLimit(s.time_limit));
    }
    p.validate_for(t)?;
    let mut core = Core::new(s.task, s.world);
    let limit = core.tick + (s.time_limit / DT).round() as u64;
    let end = t.end_state().clone();
    let mut state = t.start_state().clone();
    let mut record = |core: &Core, state: &Label| -> Result<(), SimError> {
        if let Some(tr) = trace.as_deref_mut() {
            let (i, v) = core.observe(t);
            tr.record_step(t, i, v, state.clone())?;
        }
        Ok(())
    };
    loop {
        record(&core, &state)?;
        if state == end {
            // absorbing: the ball may still be rolling
            loop {
                if let Some(o) = core.advance(end.as_str(), end.as_str()) {
                    return Ok((o, core.tick));
                }
                if core.tick >= limit {
                    return Ok((Outcome::Timeout, core.tick));
                }
            }
        }
        let (i, v) = core.observe(t);
        let next = eval_transition(t, &state, &i, &v, p)?;
        let done = core.advance(state.as_str(), next.as_str());
        state = next;
        if let Some(o) = done {
            record(&core, &state)?;
            return Ok((o, core.tick));
        }
        if core.tick >= limit {
            record(&core, &state)?;
            return Ok((Outcome::Timeout, core.tick));
        }
    }
}

/// Runs one episode and records its trace.
pub fn run_episode(t: &TransitionFn, p: &ParameterMap, s: &Scenario) -> Result<Episode, SimError> {
    let mut trace = Trace::for_transition(t);
    let (outcome, ticks) = simulate(t, p, s, Some(&mut trace))?;
    Ok(Episode {
        trace,
        outcome,
        success: outcome.success(),
        ticks,
    })
}

/// Runs one episode without recording; for batch evaluation.
pub fn outcome(t: &TransitionFn, p: &ParameterMap, s: &Scenario) -> Result<Outcome, SimError> {
    simulate(t, p, s, None).map(|(o, _)| o)
}

/// Forks worlds from recorded trace elements for continue corrections.
#[derive(Clone, Copy, Debug)]
pub struct Simulator {
    pub task: Task,
    pub time_limit: f64,
}

impl Simulator {
    pub fn new(task: Task) -> Self {
        Simulator {
            task,
            time_limit: task.time_limit(),
        }
    }
}

struct Fork {
    core: Core,
    rsm: TransitionFn,
    state: Label,
    limit: u64,
}

impl WorldFork for Fork {
    fn observe(&self) -> (Bindings, Bindings) {
        self.core.observe(&self.rsm)
    }

    fn advance(&mut self, state: &Label) -> Result<(), Terminated> {
        if self.core.tick >= self.limit {
            return Err(Terminated("timeout".into()));
        }
        let cur = std::mem::replace(&mut self.state, state.clone());
        match self.core.advance(cur.as_str(), state.as_str()) {
            Some(o) => Err(Terminated(format!("{o:?}").to_lowercase())),
            None => Ok(()),
        }
    }
}

impl Forkable for Simulator {
    fn fork(
        &self,
        t: &TransitionFn,
        _p: &ParameterMap,
        elem: &TraceElement,
    ) -> Result<Box<dyn WorldFork + Send>, String> {
        check_compatible(self.task, t).map_err(|e| e.to_string())?;
        let (world, mem) = match self.task {
            Task::Goal => attacker::reconstruct(&elem.inputs, &elem.vars)?,
            Task::Dock => (docker::reconstruct(&elem.inputs)?, attacker::Mem::default()),
        };
        let mut core = Core::new(self.task, world);
        core.mem = mem;
        let limit = (self.time_limit / DT).round() as u64;
        Ok(Box::new(Fork {
            core,
            rsm: t.clone(),
            state: elem.state.clone(),
            limit,
        }))
    }
}
