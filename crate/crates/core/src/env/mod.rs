//! Environments behind one interface so agents and trainers can ignore
//! which world they act in.

pub mod household;
pub mod overcooked;

use std::collections::{HashSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use household::{House, HouseObs, HouseState, Substitution, TaskSpec};
use overcooked::{Kitchen, OvercookedObs, OvercookedState, OvercookedTask};

/// Tasks that can be trained on.
pub const TRAIN_TASKS: [&str; 4] = ["tomato_salad", "tomato_lettuce_salad", "food_preparation", "entertainment"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Overcooked,
    Household,
}

/// Every known task id, training tasks first, then unseen variants.
pub fn all_task_ids() -> Result<Vec<String>> {
    let mut ids: Vec<String> = TRAIN_TASKS.iter().map(|s| s.to_string()).collect();
    for s in Substitution::all()? {
        ids.extend(s.id);
    }
    Ok(ids)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub reward: f64,
    pub done: bool,
    pub success: bool,
    pub truncated: bool,
    /// Primitive steps consumed (always 1 in the household world).
    pub steps: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub enum World {
    Kitchen(Kitchen),
    House(House),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum State {
    Kitchen(OvercookedState),
    House(HouseState),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Observation {
    Kitchen(OvercookedObs),
    House(HouseObs),
}

/// One environment instance: a world definition plus its current state.
#[derive(Debug, Clone)]
pub struct TaskEnv {
    pub task: String,
    world: World,
    state: State,
}

impl TaskEnv {
    pub fn new(task: &str) -> Result<Self> {
        Self::with_mask(task, true)
    }

    /// `mask_invalid` only affects household tasks.
    pub fn with_mask(task: &str, mask_invalid: bool) -> Result<Self> {
        let world = match task.parse::<OvercookedTask>() {
            Ok(t) => World::Kitchen(Kitchen::new(t)?),
            Err(_) => {
                let mut h = House::new(TaskSpec::builtin(task)?);
                h.mask_invalid = mask_invalid;
                World::House(h)
            }
        };
        Ok(Self::from_world(task, world))
    }

    pub fn from_world(task: &str, world: World) -> Self {
        let state = match &world {
            World::Kitchen(k) => State::Kitchen(k.initial_state()),
            World::House(h) => State::House(h.initial_state()),
        };
        Self { task: task.to_string(), world, state }
    }

    pub fn world(&self) -> &World {
        &self.world
    }

    pub fn state(&self) -> &State {
        &self.state
    }

    pub fn set_state(&mut self, state: State) -> Result<()> {
        match (&self.world, &state) {
            (World::Kitchen(_), State::Kitchen(_)) | (World::House(_), State::House(_)) => {
                self.state = state;
                Ok(())
            }
            _ => Err(Error::InvalidInput("state does not belong to this environment".into())),
        }
    }

    pub fn family(&self) -> Family {
        match self.world {
            World::Kitchen(_) => Family::Overcooked,
            World::House(_) => Family::Household,
        }
    }

    /// Id of the task whose prompt template applies (the base task for
    /// renamed variants).
    pub fn template_id(&self) -> String {
        match &self.world {
            World::Kitchen(k) => k.task.as_str().to_string(),
            World::House(_) => Substitution::builtin(&self.task).map(|s| s.base).unwrap_or_else(|_| self.task.clone()),
        }
    }

    pub fn reset(&mut self) {
        self.state = match &self.world {
            World::Kitchen(k) => State::Kitchen(k.initial_state()),
            World::House(h) => State::House(h.initial_state()),
        };
    }

    pub fn action_count(&self) -> usize {
        match &self.world {
            World::Kitchen(k) => k.task.actions().len(),
            World::House(h) => h.spec.actions.len(),
        }
    }

    /// Offered action indices, in table order. Empty once done.
    pub fn valid_actions(&self) -> Vec<usize> {
        match (&self.world, &self.state) {
            (World::Kitchen(k), State::Kitchen(s)) => {
                if s.done {
                    Vec::new()
                } else {
                    (0..k.task.actions().len()).collect()
                }
            }
            (World::House(h), State::House(s)) => h.valid_actions(s),
            _ => unreachable!("world and state always match"),
        }
    }

    pub fn is_done(&self) -> bool {
        match &self.state {
            State::Kitchen(s) => s.done,
            State::House(s) => s.done,
        }
    }

    pub fn step(&mut self, action: usize) -> Result<StepOutcome> {
        let (state, out) = match (&self.world, &self.state) {
            (World::Kitchen(k), State::Kitchen(s)) => {
                let a = *k
                    .task
                    .actions()
                    .get(action)
                    .ok_or_else(|| Error::InvalidInput(format!("action index {action} out of range")))?;
                let (n, i) = k.transition(s, a)?;
                let out = StepOutcome {
                    reward: i.reward,
                    done: i.done,
                    success: i.success,
                    truncated: i.truncated,
                    steps: i.steps_consumed,
                };
                (State::Kitchen(n), out)
            }
            (World::House(h), State::House(s)) => {
                let (n, i) = h.transition(s, action)?;
                let out = StepOutcome { reward: i.reward, done: i.done, success: i.success, truncated: i.truncated, steps: 1 };
                (State::House(n), out)
            }
            _ => unreachable!("world and state always match"),
        };
        self.state = state;
        Ok(out)
    }

    pub fn observation(&self) -> Observation {
        match (&self.world, &self.state) {
            (World::Kitchen(k), State::Kitchen(s)) => Observation::Kitchen(k.observe(s)),
            (World::House(h), State::House(s)) => Observation::House(h.observe(s)),
            _ => unreachable!("world and state always match"),
        }
    }

    pub fn features(&self) -> Vec<f64> {
        match (self.observation(), &self.world) {
            (Observation::Kitchen(o), _) => o.features(),
            (Observation::House(o), World::House(h)) => o.features(h.spec.rooms.len()),
            _ => unreachable!("world and state always match"),
        }
    }

    pub fn feature_dim(&self) -> usize {
        match &self.world {
            World::Kitchen(_) => overcooked::FEATURE_DIM,
            World::House(h) => HouseObs::feature_dim(h.spec.rooms.len(), h.spec.objects.len()),
        }
    }

    pub fn action_label(&self, action: usize) -> String {
        match &self.world {
            World::Kitchen(k) => k.task.actions()[action].label().to_string(),
            World::House(h) => h.spec.action_label(h.spec.actions[action]),
        }
    }

    /// Template key of an action.
    pub fn action_key(&self, action: usize) -> String {
        match &self.world {
            World::Kitchen(k) => k.task.actions()[action].key().to_string(),
            World::House(h) => h.spec.action_key(h.spec.actions[action]),
        }
    }

    pub fn render(&self) -> String {
        match (&self.world, &self.state) {
            (World::Kitchen(k), State::Kitchen(s)) => k.render_ascii(s),
            (World::House(h), State::House(s)) => h.render(s),
            _ => unreachable!("world and state always match"),
        }
    }

    pub fn state_hash(&self) -> String {
        match (&self.world, &self.state) {
            (World::Kitchen(k), State::Kitchen(s)) => k.state_hash(s),
            (World::House(h), State::House(s)) => h.state_hash(s),
            _ => unreachable!("world and state always match"),
        }
    }

    /// Discount factor used for this family's returns.
    pub fn default_gamma(&self) -> f64 {
        match self.family() {
            Family::Overcooked => 0.99,
            Family::Household => 0.95,
        }
    }
}

/// Live states reachable from reset within `depth` actions, in
/// breadth-first order.
pub fn reachable_states(env: &TaskEnv, depth: usize) -> Result<Vec<State>> {
    let mut start = env.clone();
    start.reset();
    let mut seen = HashSet::from([start.state().clone()]);
    let mut out = vec![start.state().clone()];
    let mut queue = VecDeque::from([(start.state().clone(), 0usize)]);
    let mut probe = start;
    while let Some((s, d)) = queue.pop_front() {
        if d == depth {
            continue;
        }
        probe.set_state(s.clone())?;
        for a in probe.valid_actions() {
            probe.set_state(s.clone())?;
            probe.step(a)?;
            if !probe.is_done() && seen.insert(probe.state().clone()) {
                out.push(probe.state().clone());
                queue.push_back((probe.state().clone(), d + 1));
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_task_builds() {
        for id in all_task_ids().unwrap() {
            let env = TaskEnv::new(&id).unwrap();
            assert!(!env.valid_actions().is_empty(), "{id}");
            assert_eq!(env.features().len(), env.feature_dim());
        }
        assert_eq!(all_task_ids().unwrap().len(), 10);
        assert!(TaskEnv::new("soup").is_err());
    }

    #[test]
    fn overcooked_exposes_full_lists() {
        assert_eq!(TaskEnv::new("tomato_salad").unwrap().valid_actions().len(), 5);
        assert_eq!(TaskEnv::new("tomato_lettuce_salad").unwrap().valid_actions().len(), 8);
    }

    #[test]
    fn template_ids_follow_base_tasks() {
        assert_eq!(TaskEnv::new("laundry").unwrap().template_id(), "food_preparation");
        assert_eq!(TaskEnv::new("entertainment").unwrap().template_id(), "entertainment");
    }

    #[test]
    fn reachable_sweep_is_finite_and_starts_at_reset() {
        let env = TaskEnv::new("food_preparation").unwrap();
        let states = reachable_states(&env, 3).unwrap();
        assert_eq!(&states[0], TaskEnv::new("food_preparation").unwrap().state());
        assert!(states.len() > 5);
    }
}
