//! Symbolic household simulator: four rooms, a few objects, two hands and
//! one semantic action per step.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::data;
use crate::error::{Error, Result};

pub const MAX_STEPS: u32 = 50;
pub const HAND_CAPACITY: usize = 2;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoomSpec {
    pub key: String,
    pub id: u32,
    pub name: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectFlags {
    pub grabbable: bool,
    pub container: bool,
    pub surface: bool,
    pub switchable: bool,
    pub sittable: bool,
    /// Takes "are" rather than "is".
    pub plural: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectSpec {
    /// Stable role name used by predicates, actions and templates.
    pub role: String,
    pub id: u32,
    pub start_room: usize,
    pub name: String,
    pub flags: ObjectFlags,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Target {
    Room(usize),
    Object(usize),
}

/// One semantic action. Object operands index `TaskSpec::objects`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum HouseholdAction {
    Walk(Target),
    Grab(usize),
    Open(usize),
    Close(usize),
    SwitchOn(usize),
    SwitchOff(usize),
    PutIn(usize, usize),
    PutBack(usize, usize),
    Sit(usize),
    StandUp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Atom {
    In(usize, usize),
    On(usize, usize),
    Held(usize),
    Open(usize),
    SwitchedOn(usize),
    Sitting,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Literal {
    pub negated: bool,
    pub atom: Atom,
}

/// Conjunction of disjunctions of (possibly negated) atoms.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Predicate {
    pub clauses: Vec<Vec<Literal>>,
}

impl Predicate {
    /// Parses `a & b | !c & d`: `&` separates clauses, `|` separates the
    /// alternatives inside a clause.
    pub fn parse(text: &str, objects: &[ObjectSpec]) -> Result<Predicate> {
        let obj = |name: &str| {
            objects
                .iter()
                .position(|o| o.role == name.trim())
                .ok_or_else(|| Error::Format(format!("predicate: unknown object {name:?}")))
        };
        let mut clauses = Vec::new();
        for clause in text.split('&') {
            let mut lits = Vec::new();
            for lit in clause.split('|') {
                let lit = lit.trim();
                let (negated, body) = match lit.strip_prefix('!') {
                    Some(rest) => (true, rest.trim()),
                    None => (false, lit),
                };
                let (name, args) = match body.split_once('(') {
                    Some((n, rest)) => {
                        let inner = rest
                            .strip_suffix(')')
                            .ok_or_else(|| Error::Format(format!("predicate: missing ')' in {body:?}")))?;
                        (n.trim(), inner.split(',').map(str::trim).collect::<Vec<_>>())
                    }
                    None => (body, Vec::new()),
                };
                let arity = |n: usize| {
                    if args.len() == n {
                        Ok(())
                    } else {
                        Err(Error::Format(format!("predicate: {name} takes {n} arguments")))
                    }
                };
                let atom = match name {
                    "in" => {
                        arity(2)?;
                        Atom::In(obj(args[0])?, obj(args[1])?)
                    }
                    "on" => {
                        arity(2)?;
                        Atom::On(obj(args[0])?, obj(args[1])?)
                    }
                    "held" => {
                        arity(1)?;
                        Atom::Held(obj(args[0])?)
                    }
                    "open" => {
                        arity(1)?;
                        Atom::Open(obj(args[0])?)
                    }
                    "switched_on" => {
                        arity(1)?;
                        Atom::SwitchedOn(obj(args[0])?)
                    }
                    "sitting" => Atom::Sitting,
                    _ => return Err(Error::Format(format!("predicate: unknown atom {name:?}"))),
                };
                lits.push(Literal { negated, atom });
            }
            clauses.push(lits);
        }
        Ok(Predicate { clauses })
    }

    pub fn eval(&self, s: &HouseState) -> bool {
        self.clauses.iter().all(|c| c.iter().any(|l| s.holds(l.atom) != l.negated))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub id: String,
    pub title: String,
    pub start_room: usize,
    pub rooms: Vec<RoomSpec>,
    pub objects: Vec<ObjectSpec>,
    /// Verb phrase of the goal clause ("heat up", "wash").
    pub goal: String,
    pub success: Predicate,
    pub actions: Vec<HouseholdAction>,
    pub max_steps: u32,
}

impl TaskSpec {
    /// Parses a task file. `action` lines list the action table in order.
    pub fn parse(text: &str) -> Result<TaskSpec> {
        let mut id = None;
        let mut title = None;
        let mut start = None;
        let mut rooms: Vec<RoomSpec> = Vec::new();
        let mut objects: Vec<ObjectSpec> = Vec::new();
        let mut goal = None;
        let mut success = None;
        let mut action_lines = Vec::new();
        for line in text.lines().map(str::trim) {
            if line.is_empty() || line.starts_with(';') {
                continue;
            }
            let (key, rest) = line.split_once(' ').unwrap_or((line, ""));
            let rest = rest.trim();
            match key {
                "task" => id = Some(rest.to_string()),
                "title" => title = Some(rest.to_string()),
                "start" => start = Some(rest.to_string()),
                "goal" => goal = Some(rest.to_string()),
                "success" => success = Some(rest.to_string()),
                "room" => {
                    let mut it = rest.splitn(3, ' ');
                    let (Some(k), Some(rid), Some(name)) = (it.next(), it.next(), it.next()) else {
                        return Err(Error::Format(format!("task: bad room line {line:?}")));
                    };
                    rooms.push(RoomSpec { key: k.into(), id: parse_id(rid)?, name: name.trim().into() });
                }
                "object" => {
                    let (head, name) = rest
                        .split_once(':')
                        .ok_or_else(|| Error::Format(format!("task: object line needs ': name' in {line:?}")))?;
                    let words: Vec<&str> = head.split_whitespace().collect();
                    if words.len() < 3 {
                        return Err(Error::Format(format!("task: bad object line {line:?}")));
                    }
                    let room = rooms
                        .iter()
                        .position(|r| r.key == words[2])
                        .ok_or_else(|| Error::Format(format!("task: unknown room {:?}", words[2])))?;
                    let mut flags = ObjectFlags::default();
                    for f in &words[3..] {
                        match *f {
                            "grabbable" => flags.grabbable = true,
                            "container" => flags.container = true,
                            "surface" => flags.surface = true,
                            "switchable" => flags.switchable = true,
                            "sittable" => flags.sittable = true,
                            "plural" => flags.plural = true,
                            _ => return Err(Error::Format(format!("task: unknown object flag {f:?}"))),
                        }
                    }
                    objects.push(ObjectSpec {
                        role: words[0].into(),
                        id: parse_id(words[1])?,
                        start_room: room,
                        name: name.trim().into(),
                        flags,
                    });
                }
                "action" => action_lines.push(rest.to_string()),
                _ => return Err(Error::Format(format!("task: unexpected line {line:?}"))),
            }
        }
        let missing = |what: &str| Error::Format(format!("task: missing {what}"));
        let start = start.ok_or_else(|| missing("start"))?;
        let start_room = rooms.iter().position(|r| r.key == start).ok_or_else(|| missing("start room"))?;
        let success = Predicate::parse(&success.ok_or_else(|| missing("success"))?, &objects)?;
        let mut actions = Vec::new();
        for a in &action_lines {
            actions.push(parse_action(a, &rooms, &objects)?);
        }
        if actions.is_empty() {
            return Err(missing("actions"));
        }
        Ok(TaskSpec {
            id: id.ok_or_else(|| missing("task id"))?,
            title: title.ok_or_else(|| missing("title"))?,
            start_room,
            rooms,
            objects,
            goal: goal.ok_or_else(|| missing("goal"))?,
            success,
            actions,
            max_steps: MAX_STEPS,
        })
    }

    /// Built-in task by id, including unseen variants.
    pub fn builtin(id: &str) -> Result<TaskSpec> {
        if let Some(text) = data::task(id) {
            return TaskSpec::parse(text);
        }
        let sub = Substitution::builtin(id)?;
        let base = TaskSpec::builtin(&sub.base)?;
        make_unseen_task(&base, &sub)
    }

    pub fn object(&self, role: &str) -> Option<usize> {
        self.objects.iter().position(|o| o.role == role)
    }

    /// Stable identifier of an action, built from roles.
    pub fn action_key(&self, a: HouseholdAction) -> String {
        let o = |i: usize| self.objects[i].role.as_str();
        match a {
            HouseholdAction::Walk(Target::Room(r)) => format!("walk_{}", self.rooms[r].key),
            HouseholdAction::Walk(Target::Object(i)) => format!("walk_{}", o(i)),
            HouseholdAction::Grab(i) => format!("grab_{}", o(i)),
            HouseholdAction::Open(i) => format!("open_{}", o(i)),
            HouseholdAction::Close(i) => format!("close_{}", o(i)),
            HouseholdAction::SwitchOn(i) => format!("switchon_{}", o(i)),
            HouseholdAction::SwitchOff(i) => format!("switchoff_{}", o(i)),
            HouseholdAction::PutIn(i, j) => format!("putin_{}_{}", o(i), o(j)),
            HouseholdAction::PutBack(i, j) => format!("putback_{}_{}", o(i), o(j)),
            HouseholdAction::Sit(i) => format!("sit_{}", o(i)),
            HouseholdAction::StandUp => "standup".into(),
        }
    }

    /// Simulator-style label, e.g. `[walk] <kitchen> (11)`.
    pub fn action_label(&self, a: HouseholdAction) -> String {
        let o = |i: usize| format!("<{}> ({})", self.objects[i].name, self.objects[i].id);
        match a {
            HouseholdAction::Walk(Target::Room(r)) => {
                format!("[walk] <{}> ({})", self.rooms[r].key, self.rooms[r].id)
            }
            HouseholdAction::Walk(Target::Object(i)) => format!("[walk] {}", o(i)),
            HouseholdAction::Grab(i) => format!("[grab] {}", o(i)),
            HouseholdAction::Open(i) => format!("[open] {}", o(i)),
            HouseholdAction::Close(i) => format!("[close] {}", o(i)),
            HouseholdAction::SwitchOn(i) => format!("[switchon] {}", o(i)),
            HouseholdAction::SwitchOff(i) => format!("[switchoff] {}", o(i)),
            HouseholdAction::PutIn(i, j) => format!("[putin] {} {}", o(i), o(j)),
            HouseholdAction::PutBack(i, j) => format!("[putback] {} {}", o(i), o(j)),
            HouseholdAction::Sit(i) => format!("[sit] {}", o(i)),
            HouseholdAction::StandUp => "[standup]".into(),
        }
    }
}

fn parse_id(s: &str) -> Result<u32> {
    s.parse().map_err(|_| Error::Format(format!("task: bad id {s:?}")))
}

fn parse_action(line: &str, rooms: &[RoomSpec], objects: &[ObjectSpec]) -> Result<HouseholdAction> {
    let words: Vec<&str> = line.split_whitespace().collect();
    let obj = |i: usize| {
        let name = words.get(i).ok_or_else(|| Error::Format(format!("task: action {line:?} needs an operand")))?;
        objects.iter().position(|o| o.role == *name).ok_or_else(|| Error::Format(format!("task: unknown object {name:?}")))
    };
    let a = match words.first().copied() {
        Some("walk") => {
            let name = words.get(1).copied().unwrap_or("");
            match rooms.iter().position(|r| r.key == name) {
                Some(r) => HouseholdAction::Walk(Target::Room(r)),
                None => HouseholdAction::Walk(Target::Object(obj(1)?)),
            }
        }
        Some("grab") => HouseholdAction::Grab(obj(1)?),
        Some("open") => HouseholdAction::Open(obj(1)?),
        Some("close") => HouseholdAction::Close(obj(1)?),
        Some("switchon") => HouseholdAction::SwitchOn(obj(1)?),
        Some("switchoff") => HouseholdAction::SwitchOff(obj(1)?),
        Some("putin") => HouseholdAction::PutIn(obj(1)?, obj(2)?),
        Some("putback") => HouseholdAction::PutBack(obj(1)?, obj(2)?),
        Some("sit") => HouseholdAction::Sit(obj(1)?),
        Some("standup") => HouseholdAction::StandUp,
        _ => return Err(Error::Format(format!("task: unknown action {line:?}"))),
    };
    Ok(a)
}

/// Renaming that turns a base task into an unseen one.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Substitution {
    pub id: Option<String>,
    pub title: Option<String>,
    pub base: String,
    /// `(role, new display name)` pairs.
    pub renames: Vec<(String, String)>,
    pub goal: Option<String>,
}

impl Substitution {
    pub fn builtin(id: &str) -> Result<Substitution> {
        Substitution::all()?
            .into_iter()
            .find(|s| s.id.as_deref() == Some(id))
            .ok_or_else(|| Error::Config(format!("unknown household task {id:?}")))
    }

    /// All unseen tasks listed in the data file, in file order.
    pub fn all() -> Result<Vec<Substitution>> {
        let mut out = Vec::new();
        for line in data::UNSEEN_TASKS.lines().map(str::trim) {
            if line.is_empty() || line.starts_with(';') {
                continue;
            }
            let body = line
                .strip_prefix("unseen ")
                .ok_or_else(|| Error::Format(format!("unseen: unexpected line {line:?}")))?;
            let mut parts = body.split('|').map(str::trim);
            let head: Vec<&str> = parts.next().unwrap_or("").splitn(3, ' ').collect();
            if head.len() < 3 {
                return Err(Error::Format(format!("unseen: bad header in {line:?}")));
            }
            let mut sub = Substitution {
                id: Some(head[0].into()),
                base: head[1].into(),
                title: Some(head[2].trim().into()),
                ..Default::default()
            };
            for part in parts {
                if let Some(goal) = part.strip_prefix("goal=") {
                    sub.goal = Some(goal.trim().into());
                    continue;
                }
                for pair in part.split(',') {
                    let (role, name) = pair
                        .split_once('=')
                        .ok_or_else(|| Error::Format(format!("unseen: bad rename {pair:?}")))?;
                    sub.renames.push((role.trim().into(), name.trim().into()));
                }
            }
            out.push(sub);
        }
        Ok(out)
    }
}

/// Applies a renaming to `base`. Dynamics, ids and the action table are
/// untouched; only display names and the goal phrase change.
pub fn make_unseen_task(base: &TaskSpec, sub: &Substitution) -> Result<TaskSpec> {
    let mut spec = base.clone();
    for (role, name) in &sub.renames {
        let i = spec
            .object(role)
            .ok_or_else(|| Error::Config(format!("substitution names unknown object {role:?}")))?;
        let o = &mut spec.objects[i];
        if o.name != *name {
            o.name = name.clone();
            o.flags.plural = name.ends_with('s') && !name.ends_with("ss");
        }
    }
    if let Some(g) = &sub.goal {
        spec.goal = g.clone();
    }
    if let Some(id) = &sub.id {
        spec.id = id.clone();
    }
    if let Some(t) = &sub.title {
        spec.title = t.clone();
    }
    Ok(spec)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Loc {
    Room(usize),
    On(usize),
    In(usize),
    Held,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct HouseState {
    pub room: usize,
    pub close: BTreeSet<usize>,
    /// Held objects in grab order.
    pub hands: Vec<usize>,
    pub loc: Vec<Loc>,
    pub open: Vec<bool>,
    pub switched_on: Vec<bool>,
    pub sitting: bool,
    pub timestep: u32,
    pub done: bool,
    pub success: bool,
}

impl HouseState {
    pub fn holds(&self, atom: Atom) -> bool {
        match atom {
            Atom::In(a, b) => self.loc[a] == Loc::In(b),
            Atom::On(a, b) => self.loc[a] == Loc::On(b),
            Atom::Held(a) => self.loc[a] == Loc::Held,
            Atom::Open(a) => self.open[a],
            Atom::SwitchedOn(a) => self.switched_on[a],
            Atom::Sitting => self.sitting,
        }
    }

    /// Room an object is currently in.
    pub fn room_of(&self, o: usize) -> usize {
        match self.loc[o] {
            Loc::Room(r) => r,
            Loc::On(p) | Loc::In(p) => self.room_of(p),
            Loc::Held => self.room,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HouseStepInfo {
    pub reward: f64,
    pub done: bool,
    pub success: bool,
    pub truncated: bool,
    /// The action was outside the valid set and did nothing.
    pub noop: bool,
}

/// A task plus the pure transition function over its states.
#[derive(Debug, Clone, PartialEq)]
pub struct House {
    pub spec: TaskSpec,
    /// Offer only valid actions; otherwise the whole table is offered and
    /// invalid picks are one-step no-ops.
    pub mask_invalid: bool,
}

impl House {
    pub fn new(spec: TaskSpec) -> Self {
        Self { spec, mask_invalid: true }
    }

    pub fn initial_state(&self) -> HouseState {
        let n = self.spec.objects.len();
        HouseState {
            room: self.spec.start_room,
            close: BTreeSet::new(),
            hands: Vec::new(),
            loc: self.spec.objects.iter().map(|o| Loc::Room(o.start_room)).collect(),
            open: vec![false; n],
            switched_on: vec![false; n],
            sitting: false,
            timestep: 0,
            done: false,
            success: false,
        }
    }

    pub fn is_valid(&self, s: &HouseState, a: HouseholdAction) -> bool {
        let f = |o: usize| &self.spec.objects[o].flags;
        let close = |o: usize| s.close.contains(&o);
        let held = |o: usize| s.loc[o] == Loc::Held;
        match a {
            HouseholdAction::Walk(Target::Room(r)) => r != s.room,
            HouseholdAction::Walk(Target::Object(o)) => {
                s.room_of(o) == s.room && !held(o) && !close(o) && !matches!(s.loc[o], Loc::In(_))
            }
            HouseholdAction::Grab(o) => close(o) && f(o).grabbable && !held(o) && s.hands.len() < HAND_CAPACITY,
            HouseholdAction::Open(o) | HouseholdAction::Close(o) => close(o) && f(o).container,
            HouseholdAction::SwitchOn(o) => {
                close(o) && f(o).switchable && !s.switched_on[o] && s.hands.len() < HAND_CAPACITY
            }
            HouseholdAction::SwitchOff(o) => close(o) && f(o).switchable,
            HouseholdAction::PutIn(a, c) => held(a) && close(c) && f(c).container,
            HouseholdAction::PutBack(a, p) => held(a) && close(p) && f(p).surface,
            HouseholdAction::Sit(o) => close(o) && f(o).sittable && !s.sitting,
            HouseholdAction::StandUp => s.sitting,
        }
    }

    /// Indices into the action table that are currently offered.
    pub fn valid_actions(&self, s: &HouseState) -> Vec<usize> {
        if s.done {
            return Vec::new();
        }
        (0..self.spec.actions.len())
            .filter(|&i| !self.mask_invalid || self.is_valid(s, self.spec.actions[i]))
            .collect()
    }

    fn apply(&self, s: &mut HouseState, a: HouseholdAction) {
        match a {
            HouseholdAction::Walk(Target::Room(r)) => {
                s.room = r;
                s.close.clear();
                s.sitting = false;
            }
            HouseholdAction::Walk(Target::Object(o)) => {
                s.close = BTreeSet::from([o]);
                s.sitting = false;
            }
            HouseholdAction::Grab(o) => {
                s.loc[o] = Loc::Held;
                s.hands.push(o);
                s.close.remove(&o);
            }
            HouseholdAction::Open(o) => s.open[o] = true,
            HouseholdAction::Close(o) => s.open[o] = false,
            HouseholdAction::SwitchOn(o) => s.switched_on[o] = true,
            HouseholdAction::SwitchOff(o) => s.switched_on[o] = false,
            HouseholdAction::PutIn(a, c) => {
                if s.open[c] {
                    s.loc[a] = Loc::In(c);
                    s.hands.retain(|&h| h != a);
                }
            }
            HouseholdAction::PutBack(a, p) => {
                s.loc[a] = Loc::On(p);
                s.hands.retain(|&h| h != a);
            }
            HouseholdAction::Sit(_) => s.sitting = true,
            HouseholdAction::StandUp => s.sitting = false,
        }
    }

    /// Executes action-table entry `index`. Pure.
    pub fn transition(&self, s: &HouseState, index: usize) -> Result<(HouseState, HouseStepInfo)> {
        if s.done {
            return Err(Error::InvalidInput("step called on a finished episode".into()));
        }
        let a = *self
            .spec
            .actions
            .get(index)
            .ok_or_else(|| Error::InvalidInput(format!("action index {index} out of range")))?;
        let valid = self.is_valid(s, a);
        if !valid && self.mask_invalid {
            return Err(Error::InvalidInput(format!("action {} is not valid here", self.spec.action_label(a))));
        }
        let mut next = s.clone();
        if valid {
            self.apply(&mut next, a);
        }
        next.timestep += 1;
        let success = self.spec.success.eval(&next);
        next.success = success;
        let truncated = !success && next.timestep >= self.spec.max_steps;
        next.done = success || truncated;
        let info = HouseStepInfo { reward: if success { 1.0 } else { 0.0 }, done: next.done, success, truncated, noop: !valid };
        Ok((next, info))
    }

    pub fn observe(&self, s: &HouseState) -> HouseObs {
        let objects = (0..self.spec.objects.len())
            .map(|o| {
                let visible = s.room_of(o) == s.room;
                ObjectView {
                    visible,
                    close: s.close.contains(&o),
                    loc: visible.then_some(s.loc[o]),
                    open: visible && s.open[o],
                    switched_on: visible && s.switched_on[o],
                }
            })
            .collect();
        HouseObs { room: s.room, objects, hands: s.hands.clone(), sitting: s.sitting, timestep: s.timestep }
    }

    pub fn render(&self, s: &HouseState) -> String {
        HouseView { house: self, state: s }.to_string()
    }

    pub fn state_hash(&self, s: &HouseState) -> String {
        use sha2::{Digest, Sha256};
        let digest = Sha256::digest(self.render(s).as_bytes());
        crate::lm::hex(&digest[..8])
    }
}

struct HouseView<'a> {
    house: &'a House,
    state: &'a HouseState,
}

impl fmt::Display for HouseView<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (spec, s) = (&self.house.spec, self.state);
        writeln!(f, "room: {}", spec.rooms[s.room].key)?;
        for (i, o) in spec.objects.iter().enumerate() {
            let loc = match s.loc[i] {
                Loc::Room(r) => spec.rooms[r].key.clone(),
                Loc::On(p) => format!("on {}", spec.objects[p].role),
                Loc::In(c) => format!("in {}", spec.objects[c].role),
                Loc::Held => "held".into(),
            };
            write!(f, "{}: {loc}", o.role)?;
            if s.close.contains(&i) {
                write!(f, " close")?;
            }
            if s.open[i] {
                write!(f, " open")?;
            }
            if s.switched_on[i] {
                write!(f, " on")?;
            }
            writeln!(f)?;
        }
        writeln!(f, "sitting: {}", s.sitting)?;
        writeln!(f, "step: {} {}", s.timestep, if s.success { "success" } else if s.done { "over" } else { "running" })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectView {
    pub visible: bool,
    pub close: bool,
    /// Known only when visible.
    pub loc: Option<Loc>,
    pub open: bool,
    pub switched_on: bool,
}

/// What the agent sees: its room and the objects in it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HouseObs {
    pub room: usize,
    pub objects: Vec<ObjectView>,
    pub hands: Vec<usize>,
    pub sitting: bool,
    pub timestep: u32,
}

impl HouseObs {
    /// Numeric encoding for the MLP baseline.
    pub fn features(&self, n_rooms: usize) -> Vec<f64> {
        let mut f = vec![0.0; n_rooms];
        f[self.room] = 1.0;
        for o in &self.objects {
            f.extend([
                f64::from(o.visible),
                f64::from(o.close),
                f64::from(o.loc == Some(Loc::Held)),
                f64::from(matches!(o.loc, Some(Loc::On(_)))),
                f64::from(matches!(o.loc, Some(Loc::In(_)))),
                f64::from(o.open),
                f64::from(o.switched_on),
            ]);
        }
        f.push(f64::from(self.sitting));
        f.push(self.hands.len() as f64 / HAND_CAPACITY as f64);
        f
    }

    pub fn feature_dim(n_rooms: usize, n_objects: usize) -> usize {
        n_rooms + 7 * n_objects + 2
    }
}
