//! Turns observations and actions into text.
//!
//! A template file has three sections. `[obs]` lines are sentences, each
//! optionally guarded by `?key=value,...` conditions over facts extracted
//! from the observation; `[cue]` is the closing phrase that action prompts
//! complete; `[actions]` maps action keys to prompt variants, the first
//! variant whose conditions hold wins. `{slot}` inserts a fact and
//! `{^slot}` inserts it with a capital first letter.

use std::collections::{BTreeMap, BTreeSet};

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data;
use crate::env::household::{HouseObs, Loc, TaskSpec};
use crate::env::overcooked::{Hand, ItemLoc, OvercookedObs};
use crate::env::{all_task_ids, reachable_states, Observation, TaskEnv, World};
use crate::error::{Error, Result};

/// Cue phrases that every observation prompt ends with.
pub const CUES: [&str; 2] = ["you should first", "your next step is to"];

pub type Facts = BTreeMap<String, String>;

#[derive(Debug, Clone, PartialEq, Eq)]
struct Cond {
    key: String,
    negated: bool,
    values: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Line {
    conds: Vec<Cond>,
    text: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Template {
    pub task: String,
    obs: Vec<Line>,
    cue: String,
    actions: Vec<(String, Vec<Line>)>,
}

fn parse_conds(spec: &str) -> Result<Vec<Cond>> {
    spec.split(',')
        .map(|c| {
            let (key, negated, vals) = if let Some((k, v)) = c.split_once("!=") {
                (k, true, v)
            } else if let Some((k, v)) = c.split_once('=') {
                (k, false, v)
            } else {
                return Err(Error::Format(format!("template: bad condition {c:?}")));
            };
            Ok(Cond { key: key.trim().into(), negated, values: vals.split('|').map(|v| v.trim().into()).collect() })
        })
        .collect()
}

/// Splits `?conds rest` into conditions and the remaining text.
fn parse_guarded(s: &str) -> Result<(Vec<Cond>, &str)> {
    match s.strip_prefix('?') {
        Some(rest) => {
            let (c, text) = rest.split_once(' ').unwrap_or((rest, ""));
            Ok((parse_conds(c)?, text.trim()))
        }
        None => Ok((Vec::new(), s.trim())),
    }
}

fn holds(conds: &[Cond], facts: &Facts) -> Result<bool> {
    for c in conds {
        let v = facts.get(&c.key).ok_or_else(|| Error::InvalidInput(format!("template refers to unknown fact {:?}", c.key)))?;
        if c.values.contains(v) == c.negated {
            return Ok(false);
        }
    }
    Ok(true)
}

fn fill(text: &str, facts: &Facts) -> Result<String> {
    let mut out = String::with_capacity(text.len() + 16);
    let mut rest = text;
    while let Some(i) = rest.find('{') {
        out.push_str(&rest[..i]);
        let j = rest[i..].find('}').ok_or_else(|| Error::Format(format!("template: unclosed slot in {text:?}")))? + i;
        let slot = &rest[i + 1..j];
        let (cap, key) = match slot.strip_prefix('^') {
            Some(k) => (true, k),
            None => (false, slot),
        };
        let v = facts.get(key).ok_or_else(|| Error::InvalidInput(format!("template slot {key:?} has no value")))?;
        if cap {
            let mut cs = v.chars();
            if let Some(c) = cs.next() {
                out.extend(c.to_uppercase());
                out.push_str(cs.as_str());
            }
        } else {
            out.push_str(v);
        }
        rest = &rest[j + 1..];
    }
    out.push_str(rest);
    Ok(out)
}

impl Template {
    pub fn parse(text: &str) -> Result<Template> {
        let mut task = None;
        let mut section = "";
        let mut obs = Vec::new();
        let mut cue = None;
        let mut actions: Vec<(String, Vec<Line>)> = Vec::new();
        for raw in text.lines() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with(';') {
                continue;
            }
            if line.starts_with('[') {
                section = match line {
                    "[obs]" => "obs",
                    "[cue]" => "cue",
                    "[actions]" => "actions",
                    _ => return Err(Error::Format(format!("template: unknown section {line}"))),
                };
                continue;
            }
            match section {
                "" => match line.strip_prefix("task ") {
                    Some(t) => task = Some(t.trim().to_string()),
                    None => return Err(Error::Format(format!("template: unexpected line {line:?}"))),
                },
                "obs" => {
                    let (conds, text) = parse_guarded(line)?;
                    obs.push(Line { conds, text: text.into() });
                }
                "cue" => {
                    if cue.replace(line.to_string()).is_some() {
                        return Err(Error::Format("template: more than one cue".into()));
                    }
                }
                _ => {
                    let (head, text) = line
                        .split_once(" : ")
                        .ok_or_else(|| Error::Format(format!("template: action line needs ' : ' in {line:?}")))?;
                    let (key, conds) = match head.split_once(' ') {
                        Some((k, c)) => (k, parse_guarded(c.trim())?.0),
                        None => (head, Vec::new()),
                    };
                    let line = Line { conds, text: text.trim().into() };
                    match actions.iter_mut().find(|(k, _)| k == key) {
                        Some((_, v)) => v.push(line),
                        None => actions.push((key.to_string(), vec![line])),
                    }
                }
            }
        }
        let cue = cue.ok_or_else(|| Error::Format("template: missing cue".into()))?;
        if !CUES.iter().any(|c| cue.ends_with(c)) {
            return Err(Error::Format(format!("template: cue {cue:?} must end with a cue phrase")));
        }
        Ok(Template { task: task.ok_or_else(|| Error::Format("template: missing task".into()))?, obs, cue, actions })
    }

    pub fn builtin(task: &str) -> Result<Template> {
        let text = data::template(task).ok_or_else(|| Error::Config(format!("no prompt template for {task:?}")))?;
        Template::parse(text)
    }

    pub fn action_keys(&self) -> impl Iterator<Item = &str> {
        self.actions.iter().map(|(k, _)| k.as_str())
    }

    pub fn render_obs(&self, facts: &Facts) -> Result<String> {
        let mut parts = Vec::new();
        for l in &self.obs {
            if holds(&l.conds, facts)? {
                parts.push(fill(&l.text, facts)?);
            }
        }
        parts.push(fill(&self.cue, facts)?);
        Ok(parts.join(" "))
    }

    pub fn render_action(&self, key: &str, facts: &Facts) -> Result<String> {
        let (_, variants) = self
            .actions
            .iter()
            .find(|(k, _)| k == key)
            .ok_or_else(|| Error::InvalidInput(format!("template {} has no action {key:?}", self.task)))?;
        for v in variants {
            if holds(&v.conds, facts)? {
                return fill(&v.text, facts);
            }
        }
        Err(Error::InvalidInput(format!("no prompt variant of {key:?} applies")))
    }
}

fn article(word: &str) -> &'static str {
    if word.starts_with(['a', 'e', 'i', 'o', 'u']) {
        "an"
    } else {
        "a"
    }
}

fn with_article(phrase: &str) -> String {
    format!("{} {phrase}", article(phrase))
}

/// "a", "a and b", "a, b and c".
fn join_list(items: &[String]) -> String {
    match items {
        [] => String::new(),
        [one] => one.clone(),
        [init @ .., last] => format!("{} and {last}", init.join(", ")),
    }
}

fn yes(b: bool) -> String {
    if b { "yes" } else { "no" }.into()
}

/// Facts visible in a kitchen observation.
pub fn overcooked_facts(obs: &OvercookedObs) -> Facts {
    let mut f = Facts::new();
    let name = |i: usize| obs.kinds[i].name();
    let chopped = |i: usize| obs.ingredients[i].chopped;
    let item_desc = |i: usize| {
        with_article(&format!("{} {}", if chopped(i) { "chopped" } else { "unchopped" }, name(i)))
    };
    let contents: Vec<String> = obs.bowl_contents().into_iter().map(|i| name(i).to_string()).collect();
    let bowl_desc = if contents.is_empty() {
        "an empty bowl".to_string()
    } else {
        format!("a bowl containing chopped {}", join_list(&contents))
    };
    let desc = |h: Hand| match h {
        Hand::Ingredient(i) => item_desc(i),
        Hand::Bowl => bowl_desc.clone(),
        Hand::Nothing => "none".into(),
    };

    let mut notice = Vec::new();
    for (i, e) in obs.ingredients.iter().enumerate() {
        if e.visible && matches!(e.loc, ItemLoc::Counter(_)) {
            notice.push(if chopped(i) { item_desc(i) } else { with_article(name(i)) });
        }
    }
    if obs.bowl.visible && matches!(obs.bowl.loc, ItemLoc::Counter(_)) {
        notice.push(bowl_desc.clone());
    }
    let n = match notice.len() {
        0 => "none",
        1 => "one",
        _ => "many",
    };
    f.insert("notice".into(), n.into());
    f.insert("notice_list".into(), join_list(&notice));

    for k in 0..2 {
        let v = if k < obs.boards.len() { obs.board_item(k).map_or("none".into(), desc) } else { "none".into() };
        f.insert(format!("board{}", k + 1), v);
    }
    let front = obs.board_in_front();
    f.insert("front".into(), front.map_or("none".into(), |k| format!("board{}", k + 1)));
    let front_item = match front.and_then(|k| obs.board_item(k)) {
        Some(Hand::Ingredient(i)) => name(i).to_string(),
        _ => "none".into(),
    };
    f.insert("front_item".into(), front_item);

    let hand = obs.hand();
    let (kind, item) = match hand {
        Hand::Nothing => ("nothing", "none".to_string()),
        Hand::Bowl => ("bowl", "bowl".to_string()),
        Hand::Ingredient(i) => (if chopped(i) { "chopped" } else { "raw" }, name(i).to_string()),
    };
    f.insert("hand".into(), kind.into());
    f.insert("hand_item".into(), item);
    f.insert("hand_desc".into(), desc(hand));
    f.insert("bowl_empty".into(), yes(contents.is_empty()));
    let recipe: Vec<String> = obs.recipe.iter().map(|r| r.name().to_string()).collect();
    f.insert("recipe".into(), join_list(&recipe));
    f
}

/// "none", a single role, "both" when every member of the group is in
/// it, otherwise roles joined by '+'.
fn group(roles: &[&str], members: &[&str]) -> String {
    match members {
        [] => "none".into(),
        [one] => (*one).into(),
        _ if members.len() == roles.len() => "both".into(),
        _ => members.join("+"),
    }
}

/// Facts visible in a household observation.
pub fn household_facts(spec: &TaskSpec, obs: &HouseObs) -> Facts {
    let mut f = Facts::new();
    f.insert("room".into(), spec.rooms[obs.room].key.clone());
    f.insert("room_name".into(), spec.rooms[obs.room].name.clone());
    f.insert("goal".into(), spec.goal.clone());
    f.insert("sitting".into(), yes(obs.sitting));
    let grabbable: Vec<&str> =
        spec.objects.iter().filter(|o| o.flags.grabbable).map(|o| o.role.as_str()).collect();
    let (mut held, mut placed, mut free, mut seen) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let mut close = "none".to_string();
    let mut close_name = "none".to_string();
    let mut tv_state = String::new();
    for (o, v) in spec.objects.iter().zip(&obs.objects) {
        let r = o.role.as_str();
        f.insert(r.into(), o.name.clone());
        f.insert(format!("{r}_be"), if o.flags.plural { "are" } else { "is" }.into());
        f.insert(format!("{r}_visible"), yes(v.visible));
        let loc = match v.loc {
            None => "unseen",
            Some(Loc::Room(_)) => "free",
            Some(Loc::Held) => "held",
            Some(Loc::In(_)) => "in",
            Some(Loc::On(_)) => "on",
        };
        f.insert(format!("{r}_loc"), loc.into());
        f.insert(format!("{r}_open"), yes(v.open));
        f.insert(format!("{r}_on"), yes(v.switched_on));
        if v.close && close == "none" {
            close = r.into();
            close_name = o.name.clone();
        }
        if o.flags.switchable && v.switched_on && tv_state.is_empty() {
            tv_state = format!("the {} is turned on, ", o.name);
        }
        if o.flags.grabbable && v.visible {
            seen.push(r);
            match loc {
                "held" => held.push(r),
                "on" => placed.push(r),
                "free" => free.push(r),
                _ => {}
            }
        }
    }
    f.insert("close".into(), close);
    f.insert("close_name".into(), close_name);
    f.insert("tv_state".into(), tv_state);
    f.insert("held".into(), group(&grabbable, &held));
    f.insert("placed".into(), group(&grabbable, &placed));
    f.insert("free".into(), group(&grabbable, &free));
    f.insert("seen".into(), group(&grabbable, &seen));
    f
}

pub fn facts(env: &TaskEnv) -> Facts {
    match (env.observation(), env.world()) {
        (Observation::Kitchen(o), _) => overcooked_facts(&o),
        (Observation::House(o), World::House(h)) => household_facts(&h.spec, &o),
        _ => unreachable!("observation matches world"),
    }
}

/// Renders prompts for one task.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prompter {
    pub template: Template,
}

impl Prompter {
    pub fn for_env(env: &TaskEnv) -> Result<Self> {
        Ok(Self { template: Template::builtin(&env.template_id())? })
    }

    fn check(&self, env: &TaskEnv) -> Result<()> {
        if self.template.task != env.template_id() {
            return Err(Error::InvalidInput(format!(
                "template {} does not match task {}",
                self.template.task, env.task
            )));
        }
        Ok(())
    }

    pub fn obs_to_prompt(&self, env: &TaskEnv) -> Result<String> {
        self.check(env)?;
        self.template.render_obs(&facts(env))
    }

    pub fn action_to_prompt(&self, env: &TaskEnv, action: usize) -> Result<String> {
        self.check(env)?;
        if action >= env.action_count() {
            return Err(Error::InvalidInput(format!("unknown action {action}")));
        }
        self.template.render_action(&env.action_key(action), &facts(env))
    }

    /// Observation prompt plus one prompt per listed action.
    pub fn prompts(&self, env: &TaskEnv, actions: &[usize]) -> Result<(String, Vec<String>)> {
        self.check(env)?;
        let f = facts(env);
        let obs = self.template.render_obs(&f)?;
        let acts = actions
            .iter()
            .map(|&a| self.template.render_action(&env.action_key(a), &f))
            .collect::<Result<Vec<_>>>()?;
        Ok((obs, acts))
    }
}

/// Depth of the exhaustive sweep that guarantees every reachable action
/// prompt appears in the corpus.
fn coverage_depth(env: &TaskEnv) -> usize {
    match env.family() {
        crate::env::Family::Overcooked => 3,
        crate::env::Family::Household => 4,
    }
}

/// Words that never make an action relevant to a goal.
const STOPWORDS: [&str; 22] = [
    "a", "an", "and", "first", "in", "is", "next", "of", "on", "only", "order", "should", "step", "the", "to",
    "up", "while", "with", "you", "your", "for", "from",
];

/// Sampling weight of an action prompt sharing a content word with the
/// goal clause, relative to one that does not.
pub const RELEVANT_WEIGHT: f64 = 4.0;

fn content_words(text: &str) -> BTreeSet<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .filter(|w| !STOPWORDS.contains(&w.as_str()))
        .collect()
}

/// Corpus sampling weights of action prompts under an observation prompt:
/// actions naming something from the goal clause (the final sentence) are
/// favoured. This is a commonsense prior, not a solution.
pub fn plausibility_weights(obs: &str, actions: &[String]) -> Vec<f64> {
    let clause = obs.trim_end().rsplit(". ").next().unwrap_or(obs);
    let goal = content_words(clause);
    actions
        .iter()
        .map(|a| if content_words(a).iter().any(|w| goal.contains(w)) { RELEVANT_WEIGHT } else { 1.0 })
        .collect()
}

/// General-knowledge sentences of `task`, with its object names filled in.
pub fn procedure_sentences(task: &str) -> Result<Vec<String>> {
    let env = TaskEnv::new(task)?;
    let base = env.template_id();
    let mut out = Vec::new();
    for line in data::procedures().lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with(';') {
            continue;
        }
        let (id, sentence) =
            line.split_once(" : ").ok_or_else(|| Error::Format(format!("procedure line without ' : ': {line}")))?;
        if id.trim() != base {
            continue;
        }
        let mut text = sentence.trim().to_string();
        if let World::House(h) = env.world() {
            for o in &h.spec.objects {
                text = text.replace(&format!("{{{}}}", o.role), &o.name);
            }
            text = text.replace("{goal}", &h.spec.goal);
        }
        if text.contains('{') {
            return Err(Error::Format(format!("unfilled slot in procedure sentence for {task}: {text}")));
        }
        out.push(text);
    }
    Ok(out)
}

/// How often each procedure sentence is repeated in the corpus.
const PROCEDURE_REPEATS: usize = 10;

/// Synthetic pretraining text. `n_samples` lines pair an observation
/// prompt with one plausible action prompt, drawn along random rollouts of
/// every task in `tasks` (actions weighted by [`plausibility_weights`]).
/// Then come one line for each action prompt reachable at small depth that
/// the sample missed, and the procedure sentences of every known task,
/// unseen ones included, so their nouns are in the vocabulary. Each line
/// holds at most one action, so no line spells out a solution.
pub fn generate_corpus(tasks: &[String], n_samples: usize, seed: u64) -> Result<Vec<String>> {
    if tasks.is_empty() {
        return Err(Error::InvalidInput("corpus needs at least one task".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut envs = Vec::new();
    for t in tasks {
        let env = TaskEnv::new(t)?;
        let p = Prompter::for_env(&env)?;
        envs.push((env, p));
    }
    let mut lines = Vec::with_capacity(n_samples);
    let mut covered = BTreeSet::new();
    for i in 0..n_samples {
        let (env, p) = &mut envs[i % tasks.len()];
        if env.is_done() || rng.random_bool(0.05) {
            env.reset();
        }
        let valid = env.valid_actions();
        let (obs, acts) = p.prompts(env, &valid)?;
        let w = WeightedIndex::new(plausibility_weights(&obs, &acts))
            .map_err(|e| Error::InvalidInput(format!("action weights: {e}")))?;
        let k = w.sample(&mut rng);
        covered.insert(acts[k].clone());
        lines.push(format!("{obs} {}", acts[k]));
        env.step(valid[k])?;
    }
    for (env, p) in &mut envs {
        let depth = coverage_depth(env);
        for s in reachable_states(env, depth)? {
            env.set_state(s)?;
            let valid = env.valid_actions();
            let (obs, acts) = p.prompts(env, &valid)?;
            for a in acts {
                if covered.insert(a.clone()) {
                    lines.push(format!("{obs} {a}"));
                }
            }
        }
        env.reset();
    }
    for task in all_task_ids()? {
        for s in procedure_sentences(&task)? {
            lines.extend(std::iter::repeat_n(s, PROCEDURE_REPEATS));
        }
    }
    Ok(lines)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn env(task: &str) -> (TaskEnv, Prompter) {
        let e = TaskEnv::new(task).unwrap();
        let p = Prompter::for_env(&e).unwrap();
        (e, p)
    }

    fn act(e: &mut TaskEnv, key: &str) {
        let i = (0..e.action_count()).find(|&i| e.action_key(i) == key).unwrap();
        e.step(i).unwrap();
    }

    fn prompts(e: &TaskEnv, p: &Prompter) -> Vec<String> {
        p.prompts(e, &e.valid_actions()).unwrap().1
    }

    #[test]
    fn tomato_salad_initial_prompt_is_exact() {
        let (e, p) = env("tomato_salad");
        assert_eq!(
            p.obs_to_prompt(&e).unwrap(),
            "There is a fixed cutting board in the room. You notice a tomato on the table. Currently you don't have \
             anything in hand. To serve the dish of a bowl only containing chopped tomato, you should first"
        );
        assert_eq!(
            prompts(&e, &p),
            ["pick up the tomato", "take the bowl", "walk to the cutting board", "serve nothing", "chop nothing"]
        );
    }

    #[test]
    fn tomato_salad_prompts_follow_the_hand() {
        let (mut e, p) = env("tomato_salad");
        act(&mut e, "get_tomato");
        assert!(p.obs_to_prompt(&e).unwrap().contains("Currently you are carrying an unchopped tomato in hand."));
        assert_eq!(p.action_to_prompt(&e, 2).unwrap(), "put the tomato on the cutting board");
        assert_eq!(p.action_to_prompt(&e, 3).unwrap(), "serve the dish");
        act(&mut e, "go_board1");
        let obs = p.obs_to_prompt(&e).unwrap();
        assert!(obs.contains("An unchopped tomato is on the cutting board."), "{obs}");
        assert!(obs.contains("standing in front of the cutting board without anything in hand"), "{obs}");
        assert_eq!(p.action_to_prompt(&e, 4).unwrap(), "chop the tomato");
        act(&mut e, "chop");
        act(&mut e, "get_tomato");
        assert_eq!(p.action_to_prompt(&e, 2).unwrap(), "walk to the cutting board");
        act(&mut e, "get_bowl");
        let obs = p.obs_to_prompt(&e).unwrap();
        assert!(obs.contains("carrying a bowl containing chopped tomato in hand"), "{obs}");
        assert_eq!(p.action_to_prompt(&e, 0).unwrap(), "put the tomato in the bowl");
    }

    #[test]
    fn tomato_lettuce_salad_initial_prompt() {
        let (e, p) = env("tomato_lettuce_salad");
        assert_eq!(
            p.obs_to_prompt(&e).unwrap(),
            "There are two fixed cutting boards in the room. You notice a tomato, a lettuce and an onion on the \
             different tables. Currently you don't have anything in hand. To serve the dish of a bowl only \
             containing chopped tomato and lettuce, you should first"
        );
        assert_eq!(
            prompts(&e, &p),
            [
                "pick up the tomato",
                "pick up the lettuce",
                "pick up the onion",
                "take the empty bowl",
                "walk to the first cutting board",
                "walk to the second cutting board",
                "serve nothing",
                "chop nothing"
            ]
        );
    }

    #[test]
    fn food_preparation_walkthrough() {
        let (mut e, p) = env("food_preparation");
        assert_eq!(
            p.obs_to_prompt(&e).unwrap(),
            "There are four rooms: the kitchen, bathroom, bedroom, and living room. You are in the kitchen. You \
             notice pancake and microwave. Currently, you are not grabbing anything in hand. The pancake and the \
             microwave are not within your immediate reach. The microwave is not opened. In order to heat up the \
             pancake in the microwave, your next step is to"
        );
        assert_eq!(
            prompts(&e, &p),
            [
                "walk to the living room",
                "walk to the bathroom",
                "walk to the bedroom",
                "reach for the pancake",
                "move to the microwave"
            ]
        );
        act(&mut e, "walk_food");
        assert!(p.obs_to_prompt(&e).unwrap().contains("The pancake is within your immediate reach."));
        assert!(prompts(&e, &p).contains(&"grab the pancake".to_string()));
        act(&mut e, "grab_food");
        let obs = p.obs_to_prompt(&e).unwrap();
        assert!(obs.contains("Currently, you have grabbed the pancake in hand. The microwave is not within"), "{obs}");
        act(&mut e, "walk_appliance");
        act(&mut e, "open_appliance");
        let obs = p.obs_to_prompt(&e).unwrap();
        assert!(obs.contains("The microwave is within your immediate reach. The microwave is opened."), "{obs}");
        act(&mut e, "putin_food_appliance");
        let obs = p.obs_to_prompt(&e).unwrap();
        assert!(!obs.contains("grabbing") && !obs.contains("grabbed"), "{obs}");
    }

    #[test]
    fn entertainment_walkthrough() {
        let (mut e, p) = env("entertainment");
        let obs = p.obs_to_prompt(&e).unwrap();
        assert_eq!(
            obs,
            "There are four rooms: the kitchen, bathroom, bedroom, and living room. You are in the kitchen and \
             notice chips and milk. But they are not within your immediate reach. Currently, you are not grabbing \
             anything in hand. In order to enjoy the chips and the milk while watching TV, your next step is to"
        );
        act(&mut e, "walk_chips");
        assert!(p
            .obs_to_prompt(&e)
            .unwrap()
            .contains("The chips are within your immediate reach. But you have not grabbed the chips."));
        act(&mut e, "grab_chips");
        assert!(p.obs_to_prompt(&e).unwrap().contains("The milk is not within your immediate reach."));
        act(&mut e, "walk_milk");
        act(&mut e, "grab_milk");
        act(&mut e, "walk_livingroom");
        let obs = p.obs_to_prompt(&e).unwrap();
        assert!(obs.contains("You are in the living room and notice a coffee table, a TV and a sofa. They are not close to you. Currently, you have grabbed the chips and the milk in hand."), "{obs}");
        act(&mut e, "walk_coffeetable");
        act(&mut e, "putback_chips_coffeetable");
        act(&mut e, "walk_tv");
        act(&mut e, "switchon_tv");
        let obs = p.obs_to_prompt(&e).unwrap();
        assert!(obs.contains("Currently, the TV is turned on, you have the chips on the coffee table and the milk in your hand."), "{obs}");
        assert!(prompts(&e, &p).contains(&"move to the sofa".to_string()));
    }

    #[test]
    fn unseen_tasks_rename_prompts() {
        let (e, p) = env("laundry");
        let obs = p.obs_to_prompt(&e).unwrap();
        assert!(obs.ends_with("In order to wash the clothes in the washing machine, your next step is to"), "{obs}");
        assert!(prompts(&e, &p).contains(&"reach for the clothes".to_string()));
        let (e, p) = env("apple_pie");
        assert!(p.obs_to_prompt(&e).unwrap().contains("You notice apple pie and microwave."));
    }

    #[test]
    fn template_mismatch_is_refused() {
        let (e, _) = env("tomato_salad");
        let (_, p) = env("entertainment");
        assert!(p.obs_to_prompt(&e).is_err());
    }

    #[test]
    fn every_reachable_prompt_renders_and_ends_with_a_cue() {
        for task in crate::env::all_task_ids().unwrap() {
            let (mut e, p) = env(&task);
            for s in reachable_states(&e, 3).unwrap() {
                e.set_state(s).unwrap();
                let (obs, acts) = p.prompts(&e, &e.valid_actions()).unwrap();
                assert!(CUES.iter().any(|c| obs.ends_with(c)));
                assert!(!obs.contains("  ") && !obs.contains('{'), "{obs}");
                for a in acts {
                    assert!(!a.is_empty() && !a.contains('{') && !a.contains(" a a") && !a.contains(" a o"));
                }
            }
        }
    }

    #[test]
    fn corpus_is_deterministic_and_covers_actions() {
        let tasks: Vec<String> = ["tomato_salad".into(), "food_preparation".into()].to_vec();
        let a = generate_corpus(&tasks, 60, 3).unwrap();
        let b = generate_corpus(&tasks, 60, 3).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().any(|l| l.ends_with("you should first chop nothing")));
        assert!(a.iter().any(|l| l.ends_with("your next step is to put the pancake in the microwave")));
        assert!(generate_corpus(&[], 5, 0).is_err());
    }

    #[test]
    fn goal_objects_are_favoured() {
        let (e, p) = env("food_preparation");
        let (obs, acts) = p.prompts(&e, &e.valid_actions()).unwrap();
        let w = plausibility_weights(&obs, &acts);
        for (a, w) in acts.iter().zip(&w) {
            let expect = if a.contains("pancake") || a.contains("microwave") { RELEVANT_WEIGHT } else { 1.0 };
            assert_eq!(*w, expect, "{a}");
        }
    }

    #[test]
    fn procedure_sentences_use_renamed_objects() {
        let s = procedure_sentences("laundry").unwrap();
        assert!(s.contains(&"You can wash the clothes in the washing machine.".to_string()), "{s:?}");
        assert!(procedure_sentences("tomato_salad").unwrap().iter().all(|l| !l.contains('{')));
        let corpus = generate_corpus(&["tomato_salad".to_string()], 10, 0).unwrap();
        for noun in ["dishwasher", "hamburger", "apple pie", "coffee table"] {
            assert!(corpus.iter().any(|l| l.contains(noun)), "{noun}");
        }
    }

    #[test]
    fn no_line_spells_out_a_solution() {
        // Scripted solutions, as action prompt sequences.
        let solutions: [(&str, &[&str]); 2] = [
            ("food_preparation", &["walk_food", "grab_food", "walk_appliance", "open_appliance", "putin_food_appliance", "close_appliance"]),
            ("tomato_salad", &["get_tomato", "go_board1", "chop", "get_tomato", "get_bowl", "deliver"]),
        ];
        let tasks: Vec<String> = crate::env::TRAIN_TASKS.iter().map(|s| s.to_string()).collect();
        let corpus = generate_corpus(&tasks, 400, 1).unwrap();
        for (task, keys) in solutions {
            let (mut e, p) = env(task);
            let mut steps = Vec::new();
            let mut success = false;
            for k in keys {
                let i = (0..e.action_count()).find(|&i| e.action_key(i) == *k).unwrap();
                steps.push(p.action_to_prompt(&e, i).unwrap());
                success = e.step(i).unwrap().success;
            }
            assert!(success, "{task} script must succeed");
            for line in &corpus {
                let mut rest = line.as_str();
                let mut found = 0;
                for s in &steps {
                    match rest.find(s.as_str()) {
                        Some(i) => {
                            found += 1;
                            rest = &rest[i + s.len()..];
                        }
                        None => break,
                    }
                }
                assert!(found < steps.len(), "{task}: {line}");
            }
        }
    }

    #[test]
    fn template_parse_errors() {
        assert!(Template::parse("task x\n[obs]\nhi\n").is_err());
        assert!(Template::parse("task x\n[cue]\nthe end\n").is_err());
        assert!(Template::parse("task x\n[bogus]\n").is_err());
        let t = Template::parse("task x\n[obs]\n?a=1 One.\n[cue]\nyou should first\n").unwrap();
        assert!(t.render_obs(&Facts::new()).is_err());
    }
}
