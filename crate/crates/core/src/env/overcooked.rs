//! Single-agent kitchen grid with macro-actions.
//!
//! The grid is fixed per task and loaded from a layout file. Macro-actions
//! walk a breadth-first shortest path to the cell next to their target and
//! then interact. Every primitive move, stay or interaction costs one step.

use std::collections::VecDeque;
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data;
use crate::error::{Error, Result};

pub const MAX_STEPS: u32 = 200;
pub const STEP_PENALTY: f64 = 0.001;
pub const CHOP_BONUS: f64 = 0.2;
pub const DELIVERY_REWARD: f64 = 1.0;
pub const WRONG_DELIVERY_PENALTY: f64 = 0.1;
/// Chebyshev radius of the visible window (a 5x5 square).
pub const VIEW_RADIUS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Pos {
    pub x: usize,
    pub y: usize,
}

impl Pos {
    pub fn new(x: usize, y: usize) -> Self {
        Self { x, y }
    }

    fn chebyshev(self, o: Pos) -> usize {
        self.x.abs_diff(o.x).max(self.y.abs_diff(o.y))
    }

    fn adjacent(self, o: Pos) -> bool {
        self.x.abs_diff(o.x) + self.y.abs_diff(o.y) == 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OvercookedTask {
    TomatoSalad,
    TomatoLettuceSalad,
}

impl OvercookedTask {
    pub const ALL: [OvercookedTask; 2] = [OvercookedTask::TomatoSalad, OvercookedTask::TomatoLettuceSalad];

    pub fn as_str(self) -> &'static str {
        match self {
            OvercookedTask::TomatoSalad => "tomato_salad",
            OvercookedTask::TomatoLettuceSalad => "tomato_lettuce_salad",
        }
    }

    /// Macro-actions exposed by the task, in prompt-table order.
    pub fn actions(self) -> &'static [MacroAction] {
        use MacroAction::*;
        match self {
            OvercookedTask::TomatoSalad => &[GetTomato, GetBowl, GoCuttingBoard1, Deliver, Chop],
            OvercookedTask::TomatoLettuceSalad => {
                &[GetTomato, GetLettuce, GetOnion, GetBowl, GoCuttingBoard1, GoCuttingBoard2, Deliver, Chop]
            }
        }
    }
}

impl FromStr for OvercookedTask {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        OvercookedTask::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown overcooked task {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ingredient {
    Tomato,
    Lettuce,
    Onion,
}

impl Ingredient {
    pub const ALL: [Ingredient; 3] = [Ingredient::Tomato, Ingredient::Lettuce, Ingredient::Onion];

    pub fn name(self) -> &'static str {
        match self {
            Ingredient::Tomato => "tomato",
            Ingredient::Lettuce => "lettuce",
            Ingredient::Onion => "onion",
        }
    }

    fn glyph(self, chopped: bool) -> char {
        let c = match self {
            Ingredient::Tomato => 'T',
            Ingredient::Lettuce => 'L',
            Ingredient::Onion => 'O',
        };
        if chopped {
            c.to_ascii_lowercase()
        } else {
            c
        }
    }

    fn from_glyph(c: char) -> Option<(Ingredient, bool)> {
        let kind = match c.to_ascii_uppercase() {
            'T' => Ingredient::Tomato,
            'L' => Ingredient::Lettuce,
            'O' => Ingredient::Onion,
            _ => return None,
        };
        Some((kind, c.is_ascii_lowercase()))
    }

    fn from_name(s: &str) -> Option<Ingredient> {
        Ingredient::ALL.into_iter().find(|i| i.name() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MacroAction {
    Chop,
    GetTomato,
    GetLettuce,
    GetOnion,
    GetBowl,
    GoCuttingBoard1,
    GoCuttingBoard2,
    Deliver,
}

impl MacroAction {
    pub fn label(self) -> &'static str {
        match self {
            MacroAction::Chop => "Chop",
            MacroAction::GetTomato => "Get-Tomato",
            MacroAction::GetLettuce => "Get-Lettuce",
            MacroAction::GetOnion => "Get-Onion",
            MacroAction::GetBowl => "Get-Bowl",
            MacroAction::GoCuttingBoard1 => "Go-Cutting-Board-1",
            MacroAction::GoCuttingBoard2 => "Go-Cutting-Board-2",
            MacroAction::Deliver => "Deliver",
        }
    }

    /// Identifier used by prompt templates.
    pub fn key(self) -> &'static str {
        match self {
            MacroAction::Chop => "chop",
            MacroAction::GetTomato => "get_tomato",
            MacroAction::GetLettuce => "get_lettuce",
            MacroAction::GetOnion => "get_onion",
            MacroAction::GetBowl => "get_bowl",
            MacroAction::GoCuttingBoard1 => "go_board1",
            MacroAction::GoCuttingBoard2 => "go_board2",
            MacroAction::Deliver => "deliver",
        }
    }

    fn ingredient(self) -> Option<Ingredient> {
        match self {
            MacroAction::GetTomato => Some(Ingredient::Tomato),
            MacroAction::GetLettuce => Some(Ingredient::Lettuce),
            MacroAction::GetOnion => Some(Ingredient::Onion),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cell {
    Floor,
    Counter,
    Board(usize),
    Delivery,
}

/// Where a movable item currently is.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ItemLoc {
    Counter(Pos),
    Board(usize),
    InBowl,
    Held,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub name: String,
    pub width: usize,
    pub height: usize,
    cells: Vec<Cell>,
    pub recipe: Vec<Ingredient>,
    /// Ingredients present in the kitchen with their start counters.
    pub ingredients: Vec<(Ingredient, Pos)>,
    pub bowl_start: Pos,
    pub boards: Vec<Pos>,
    pub delivery: Pos,
    pub agent_start: Pos,
}

impl Layout {
    /// Parses a layout file: `name`, `recipe` and `grid` headers, `;`
    /// comments, then one row per line.
    pub fn parse(text: &str) -> Result<Layout> {
        let mut name = None;
        let mut recipe = Vec::new();
        let mut rows: Vec<&str> = Vec::new();
        let mut in_grid = false;
        for line in text.lines() {
            if in_grid {
                if !line.trim().is_empty() {
                    rows.push(line.trim_end());
                }
                continue;
            }
            let line = line.trim();
            if line.is_empty() || line.starts_with(';') {
                continue;
            }
            let (key, rest) = line.split_once(' ').unwrap_or((line, ""));
            match key {
                "name" => name = Some(rest.trim().to_string()),
                "recipe" => {
                    for w in rest.split_whitespace() {
                        recipe.push(
                            Ingredient::from_name(w)
                                .ok_or_else(|| Error::Format(format!("layout: unknown ingredient {w:?}")))?,
                        );
                    }
                }
                "grid" => in_grid = true,
                _ => return Err(Error::Format(format!("layout: unexpected line {line:?}"))),
            }
        }
        let name = name.ok_or_else(|| Error::Format("layout: missing name".into()))?;
        if recipe.is_empty() {
            return Err(Error::Format("layout: empty recipe".into()));
        }
        let height = rows.len();
        let width = rows.first().map_or(0, |r| r.chars().count());
        if width == 0 || rows.iter().any(|r| r.chars().count() != width) {
            return Err(Error::Format("layout: grid rows must be non-empty and equally wide".into()));
        }
        let mut cells = Vec::with_capacity(width * height);
        let (mut ingredients, mut bowl, mut boards, mut delivery, mut agent) =
            (Vec::new(), None, Vec::<(usize, Pos)>::new(), None, None);
        for (y, row) in rows.iter().enumerate() {
            for (x, c) in row.chars().enumerate() {
                let p = Pos::new(x, y);
                let cell = match c {
                    '.' => Cell::Floor,
                    '#' => Cell::Counter,
                    '*' => {
                        if delivery.replace(p).is_some() {
                            return Err(Error::Format("layout: more than one delivery cell".into()));
                        }
                        Cell::Delivery
                    }
                    'A' => {
                        if agent.replace(p).is_some() {
                            return Err(Error::Format("layout: more than one agent".into()));
                        }
                        Cell::Floor
                    }
                    'B' => {
                        if bowl.replace(p).is_some() {
                            return Err(Error::Format("layout: more than one bowl".into()));
                        }
                        Cell::Counter
                    }
                    '1'..='9' => {
                        let k = c as usize - '1' as usize;
                        boards.push((k, p));
                        Cell::Board(k)
                    }
                    _ => match Ingredient::from_glyph(c) {
                        Some((kind, false)) => {
                            if ingredients.iter().any(|&(k, _)| k == kind) {
                                return Err(Error::Format(format!("layout: duplicate {}", kind.name())));
                            }
                            ingredients.push((kind, p));
                            Cell::Counter
                        }
                        _ => return Err(Error::Format(format!("layout: unknown glyph {c:?}"))),
                    },
                };
                cells.push(cell);
            }
        }
        boards.sort();
        if boards.is_empty() || boards.iter().enumerate().any(|(i, &(k, _))| i != k) {
            return Err(Error::Format("layout: cutting boards must be numbered 1..n".into()));
        }
        ingredients.sort();
        for r in &recipe {
            if !ingredients.iter().any(|(k, _)| k == r) {
                return Err(Error::Format(format!("layout: recipe needs a {} on the grid", r.name())));
            }
        }
        Ok(Layout {
            name,
            width,
            height,
            cells,
            recipe,
            ingredients,
            bowl_start: bowl.ok_or_else(|| Error::Format("layout: missing bowl".into()))?,
            boards: boards.into_iter().map(|(_, p)| p).collect(),
            delivery: delivery.ok_or_else(|| Error::Format("layout: missing delivery cell".into()))?,
            agent_start: agent.ok_or_else(|| Error::Format("layout: missing agent".into()))?,
        })
    }

    pub fn builtin(task: OvercookedTask) -> Result<Layout> {
        Layout::parse(data::layout(task))
    }

    pub fn cell(&self, p: Pos) -> Cell {
        self.cells[p.y * self.width + p.x]
    }

    fn neighbors(&self, p: Pos) -> impl Iterator<Item = Pos> + '_ {
        // Fixed tie-break order: up, down, left, right.
        let (w, h) = (self.width as isize, self.height as isize);
        [(0isize, -1isize), (0, 1), (-1, 0), (1, 0)].into_iter().filter_map(move |(dx, dy)| {
            let (x, y) = (p.x as isize + dx, p.y as isize + dy);
            (x >= 0 && y >= 0 && x < w && y < h).then(|| Pos::new(x as usize, y as usize))
        })
    }

    /// Shortest path (excluding the start) over floor cells from `from` to
    /// the nearest floor cell next to `target`.
    pub fn path_to(&self, from: Pos, target: Pos) -> Option<Vec<Pos>> {
        let goal = |p: Pos| p.adjacent(target);
        let mut parent = vec![usize::MAX; self.width * self.height];
        let idx = |p: Pos| p.y * self.width + p.x;
        parent[idx(from)] = idx(from);
        let mut queue = VecDeque::from([from]);
        while let Some(p) = queue.pop_front() {
            if goal(p) {
                let mut path = Vec::new();
                let mut cur = p;
                while cur != from {
                    path.push(cur);
                    let pi = parent[idx(cur)];
                    cur = Pos::new(pi % self.width, pi / self.width);
                }
                path.reverse();
                return Some(path);
            }
            for n in self.neighbors(p) {
                if self.cell(n) == Cell::Floor && parent[idx(n)] == usize::MAX {
                    parent[idx(n)] = idx(p);
                    queue.push_back(n);
                }
            }
        }
        None
    }

    fn ingredient_start(&self, kind: Ingredient) -> Pos {
        self.ingredients.iter().find(|(k, _)| *k == kind).map(|(_, p)| *p).expect("ingredient in layout")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct IngredientState {
    pub kind: Ingredient,
    pub loc: ItemLoc,
    pub chopped: bool,
}

/// What the agent is holding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Hand {
    Nothing,
    /// Index into `OvercookedState::ingredients`.
    Ingredient(usize),
    Bowl,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct OvercookedState {
    pub task: OvercookedTask,
    pub agent: Pos,
    pub ingredients: Vec<IngredientState>,
    pub bowl: ItemLoc,
    pub timestep: u32,
    pub done: bool,
    pub success: bool,
}

impl OvercookedState {
    pub fn hand(&self) -> Hand {
        if self.bowl == ItemLoc::Held {
            return Hand::Bowl;
        }
        match self.ingredients.iter().position(|i| i.loc == ItemLoc::Held) {
            Some(i) => Hand::Ingredient(i),
            None => Hand::Nothing,
        }
    }

    pub fn ingredient(&self, kind: Ingredient) -> Option<usize> {
        self.ingredients.iter().position(|i| i.kind == kind)
    }

    pub fn bowl_contents(&self) -> Vec<usize> {
        (0..self.ingredients.len()).filter(|&i| self.ingredients[i].loc == ItemLoc::InBowl).collect()
    }

    /// What sits on board `k`, if anything.
    pub fn board_item(&self, k: usize) -> Option<Hand> {
        if self.bowl == ItemLoc::Board(k) {
            return Some(Hand::Bowl);
        }
        self.ingredients.iter().position(|i| i.loc == ItemLoc::Board(k)).map(Hand::Ingredient)
    }

    fn set_loc(&mut self, item: Hand, loc: ItemLoc) {
        match item {
            Hand::Bowl => self.bowl = loc,
            Hand::Ingredient(i) => self.ingredients[i].loc = loc,
            Hand::Nothing => {}
        }
    }
}

/// Per-macro bookkeeping. `reward` equals
/// `bonus - STEP_PENALTY * steps_consumed`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MacroInfo {
    pub steps_consumed: u32,
    pub bonus: f64,
    pub reward: f64,
    pub done: bool,
    pub truncated: bool,
    pub success: bool,
    /// A wrong item was delivered and sent back to its start.
    pub wrong_delivery: bool,
}

/// Interaction a macro will perform once the agent stands next to its
/// target.
enum Interaction {
    PickUp(Hand),
    IntoBowl(usize),
    Place(usize),
    Deliver,
}

enum Plan {
    Noop,
    Move(Pos, Option<Interaction>),
}

/// A fixed layout plus the pure transition function over its states.
#[derive(Debug, Clone, PartialEq)]
pub struct Kitchen {
    pub task: OvercookedTask,
    pub layout: Layout,
}

impl Kitchen {
    pub fn new(task: OvercookedTask) -> Result<Self> {
        let layout = Layout::builtin(task)?;
        Self::with_layout(task, layout)
    }

    pub fn with_layout(task: OvercookedTask, layout: Layout) -> Result<Self> {
        let needs = if task == OvercookedTask::TomatoSalad { 1 } else { 2 };
        if layout.boards.len() < needs {
            return Err(Error::Config(format!("task {} needs {needs} cutting boards", task.as_str())));
        }
        Ok(Self { task, layout })
    }

    pub fn initial_state(&self) -> OvercookedState {
        OvercookedState {
            task: self.task,
            agent: self.layout.agent_start,
            ingredients: self
                .layout
                .ingredients
                .iter()
                .map(|&(kind, p)| IngredientState { kind, loc: ItemLoc::Counter(p), chopped: false })
                .collect(),
            bowl: ItemLoc::Counter(self.layout.bowl_start),
            timestep: 0,
            done: false,
            success: false,
        }
    }

    /// The task's full macro list while live; empty once done.
    pub fn valid_actions(&self, s: &OvercookedState) -> Vec<MacroAction> {
        if s.done {
            Vec::new()
        } else {
            self.task.actions().to_vec()
        }
    }

    pub fn item_pos(&self, s: &OvercookedState, loc: ItemLoc) -> Pos {
        match loc {
            ItemLoc::Counter(p) => p,
            ItemLoc::Board(k) => self.layout.boards[k],
            ItemLoc::InBowl => self.item_pos(s, s.bowl),
            ItemLoc::Held => s.agent,
        }
    }

    fn board_of(loc: ItemLoc) -> Option<usize> {
        match loc {
            ItemLoc::Board(k) => Some(k),
            _ => None,
        }
    }

    fn plan(&self, s: &OvercookedState, a: MacroAction) -> Plan {
        let hand = s.hand();
        let target_of = |loc: ItemLoc| match loc {
            ItemLoc::Counter(p) => Some(p),
            ItemLoc::Board(k) => Some(self.layout.boards[k]),
            _ => None,
        };
        match a {
            MacroAction::GetTomato | MacroAction::GetLettuce | MacroAction::GetOnion => {
                let Some(i) = a.ingredient().and_then(|k| s.ingredient(k)) else {
                    return Plan::Noop;
                };
                let Some(target) = target_of(s.ingredients[i].loc) else {
                    return Plan::Noop;
                };
                match hand {
                    Hand::Nothing => Plan::Move(target, Some(Interaction::PickUp(Hand::Ingredient(i)))),
                    Hand::Bowl if s.ingredients[i].chopped => Plan::Move(target, Some(Interaction::IntoBowl(i))),
                    _ => Plan::Noop,
                }
            }
            MacroAction::GetBowl => {
                let Some(target) = target_of(s.bowl) else {
                    return Plan::Noop;
                };
                match hand {
                    Hand::Nothing => Plan::Move(target, Some(Interaction::PickUp(Hand::Bowl))),
                    Hand::Ingredient(i) if s.ingredients[i].chopped => {
                        Plan::Move(target, Some(Interaction::IntoBowl(i)))
                    }
                    _ => Plan::Noop,
                }
            }
            MacroAction::GoCuttingBoard1 | MacroAction::GoCuttingBoard2 => {
                let k = if a == MacroAction::GoCuttingBoard1 { 0 } else { 1 };
                let target = self.layout.boards[k];
                let on_board = s.board_item(k);
                let act = match (hand, on_board) {
                    (Hand::Nothing, _) => None,
                    (_, None) => Some(Interaction::Place(k)),
                    (Hand::Bowl, Some(Hand::Ingredient(j))) if s.ingredients[j].chopped => {
                        Some(Interaction::IntoBowl(j))
                    }
                    (Hand::Ingredient(i), Some(Hand::Bowl)) if s.ingredients[i].chopped => {
                        Some(Interaction::IntoBowl(i))
                    }
                    _ => None,
                };
                Plan::Move(target, act)
            }
            MacroAction::Deliver => match hand {
                Hand::Nothing => Plan::Noop,
                _ => Plan::Move(self.layout.delivery, Some(Interaction::Deliver)),
            },
            MacroAction::Chop => Plan::Noop,
        }
    }

    fn choppable_board(&self, s: &OvercookedState) -> Option<usize> {
        (0..self.layout.boards.len()).find(|&k| {
            s.agent.adjacent(self.layout.boards[k])
                && matches!(s.board_item(k), Some(Hand::Ingredient(i)) if !s.ingredients[i].chopped)
        })
    }

    fn reset_item(&self, s: &mut OvercookedState, item: Hand) {
        match item {
            Hand::Bowl => {
                for i in s.bowl_contents() {
                    s.ingredients[i].loc = ItemLoc::Counter(self.layout.ingredient_start(s.ingredients[i].kind));
                }
                s.bowl = ItemLoc::Counter(self.layout.bowl_start);
            }
            Hand::Ingredient(i) => {
                s.ingredients[i].loc = ItemLoc::Counter(self.layout.ingredient_start(s.ingredients[i].kind));
            }
            Hand::Nothing => {}
        }
    }

    fn correct_dish(&self, s: &OvercookedState) -> bool {
        if s.hand() != Hand::Bowl {
            return false;
        }
        let mut got: Vec<Ingredient> = s
            .bowl_contents()
            .into_iter()
            .filter(|&i| s.ingredients[i].chopped)
            .map(|i| s.ingredients[i].kind)
            .collect();
        let all_chopped = s.bowl_contents().iter().all(|&i| s.ingredients[i].chopped);
        let mut want = self.layout.recipe.clone();
        got.sort();
        want.sort();
        all_chopped && got == want
    }

    /// Executes one macro-action. Pure: the input state is not modified.
    pub fn transition(&self, s: &OvercookedState, a: MacroAction) -> Result<(OvercookedState, MacroInfo)> {
        if s.done {
            return Err(Error::InvalidInput("step called on a finished episode".into()));
        }
        if !self.task.actions().contains(&a) {
            return Err(Error::InvalidInput(format!("{} is not an action of {}", a.label(), self.task.as_str())));
        }
        let mut next = s.clone();
        let budget = MAX_STEPS - s.timestep;
        let mut bonus = 0.0;
        let mut wrong_delivery = false;
        let mut steps = 1;

        if a == MacroAction::Chop {
            if let Some(k) = self.choppable_board(s) {
                let i = s.ingredients.iter().position(|x| x.loc == ItemLoc::Board(k)).expect("board item");
                next.ingredients[i].chopped = true;
                if self.layout.recipe.contains(&next.ingredients[i].kind) {
                    bonus += CHOP_BONUS;
                }
            }
        } else if let Plan::Move(target, interaction) = self.plan(s, a) {
            if let Some(path) = self.layout.path_to(s.agent, target) {
                let cost = path.len() as u32 + u32::from(interaction.is_some());
                if cost > budget {
                    let walked = (budget as usize).min(path.len());
                    if walked > 0 {
                        next.agent = path[walked - 1];
                    }
                    steps = budget;
                } else {
                    if let Some(&last) = path.last() {
                        next.agent = last;
                    }
                    steps = cost.max(1);
                    if let Some(act) = interaction {
                        let hand = s.hand();
                        match act {
                            Interaction::PickUp(item) => next.set_loc(item, ItemLoc::Held),
                            Interaction::IntoBowl(i) => {
                                next.ingredients[i].loc = ItemLoc::InBowl;
                                if hand != Hand::Bowl && Self::board_of(s.bowl).is_none() {
                                    // Chopped ingredient carried to the bowl.
                                    next.bowl = ItemLoc::Held;
                                }
                            }
                            Interaction::Place(k) => next.set_loc(hand, ItemLoc::Board(k)),
                            Interaction::Deliver => {
                                if self.correct_dish(s) {
                                    bonus += DELIVERY_REWARD;
                                    next.success = true;
                                    next.done = true;
                                } else {
                                    bonus -= WRONG_DELIVERY_PENALTY;
                                    wrong_delivery = true;
                                    self.reset_item(&mut next, hand);
                                }
                            }
                        }
                    }
                }
            }
        }
        steps = steps.min(budget);
        next.timestep += steps;
        let truncated = !next.done && next.timestep >= MAX_STEPS;
        if truncated {
            next.done = true;
        }
        let reward = bonus - STEP_PENALTY * steps as f64;
        let info = MacroInfo {
            steps_consumed: steps,
            bonus,
            reward,
            done: next.done,
            truncated,
            success: next.success,
            wrong_delivery,
        };
        Ok((next, info))
    }

    /// Partial observation: entities within the window are reported as they
    /// are, others at their start cell and flagged masked.
    pub fn observe(&self, s: &OvercookedState) -> OvercookedObs {
        let visible = |p: Pos| p.chebyshev(s.agent) <= VIEW_RADIUS;
        let ingredients = s
            .ingredients
            .iter()
            .map(|ing| {
                let pos = self.item_pos(s, ing.loc);
                if visible(pos) {
                    EntityView { visible: true, pos, loc: ing.loc, chopped: ing.chopped }
                } else {
                    let start = self.layout.ingredient_start(ing.kind);
                    EntityView { visible: false, pos: start, loc: ItemLoc::Counter(start), chopped: false }
                }
            })
            .collect();
        let bowl_pos = self.item_pos(s, s.bowl);
        let bowl = if visible(bowl_pos) {
            EntityView { visible: true, pos: bowl_pos, loc: s.bowl, chopped: false }
        } else {
            let start = self.layout.bowl_start;
            EntityView { visible: false, pos: start, loc: ItemLoc::Counter(start), chopped: false }
        };
        OvercookedObs {
            task: s.task,
            width: self.layout.width,
            height: self.layout.height,
            agent: s.agent,
            kinds: s.ingredients.iter().map(|i| i.kind).collect(),
            ingredients,
            bowl,
            boards: self.layout.boards.clone(),
            recipe: self.layout.recipe.clone(),
            timestep: s.timestep,
        }
    }

    /// Deterministic text picture of a state: the grid, then the hand, the
    /// bowl contents and the step counter.
    pub fn render_ascii(&self, s: &OvercookedState) -> String {
        let l = &self.layout;
        let mut grid: Vec<Vec<char>> = (0..l.height)
            .map(|y| {
                (0..l.width)
                    .map(|x| match l.cell(Pos::new(x, y)) {
                        Cell::Floor => '.',
                        Cell::Counter => '#',
                        Cell::Board(k) => char::from_digit(k as u32 + 1, 10).unwrap_or('?'),
                        Cell::Delivery => '*',
                    })
                    .collect()
            })
            .collect();
        let mut on_board = vec![String::from("-"); l.boards.len()];
        for ing in &s.ingredients {
            match ing.loc {
                ItemLoc::Counter(p) => grid[p.y][p.x] = ing.kind.glyph(ing.chopped),
                ItemLoc::Board(k) => on_board[k] = ing.kind.glyph(ing.chopped).to_string(),
                _ => {}
            }
        }
        match s.bowl {
            ItemLoc::Counter(p) => grid[p.y][p.x] = 'B',
            ItemLoc::Board(k) => on_board[k] = "B".into(),
            _ => {}
        }
        grid[s.agent.y][s.agent.x] = 'A';
        let mut out = String::new();
        for row in grid {
            out.extend(row);
            out.push('\n');
        }
        let hand = match s.hand() {
            Hand::Nothing => "-".to_string(),
            Hand::Bowl => "B".to_string(),
            Hand::Ingredient(i) => s.ingredients[i].kind.glyph(s.ingredients[i].chopped).to_string(),
        };
        let bowl: Vec<String> =
            s.bowl_contents().iter().map(|&i| s.ingredients[i].kind.glyph(s.ingredients[i].chopped).to_string()).collect();
        let status = if s.success {
            "success"
        } else if s.done {
            "over"
        } else {
            "running"
        };
        let _ = writeln!(out, "boards: {}", on_board.join(" "));
        let _ = writeln!(out, "hand: {hand}");
        let _ = writeln!(out, "bowl: {}", if bowl.is_empty() { "-".into() } else { bowl.join(" ") });
        let _ = writeln!(out, "step: {} {status}", s.timestep);
        out
    }

    /// Short content hash of a state, for trajectory logs.
    pub fn state_hash(&self, s: &OvercookedState) -> String {
        use sha2::{Digest, Sha256};
        let digest = Sha256::digest(self.render_ascii(s).as_bytes());
        crate::lm::hex(&digest[..8])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityView {
    pub visible: bool,
    pub pos: Pos,
    pub loc: ItemLoc,
    pub chopped: bool,
}

/// What the agent can see. The hand and the bowl in hand are always known.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OvercookedObs {
    pub task: OvercookedTask,
    pub width: usize,
    pub height: usize,
    pub agent: Pos,
    pub kinds: Vec<Ingredient>,
    pub ingredients: Vec<EntityView>,
    pub bowl: EntityView,
    pub boards: Vec<Pos>,
    pub recipe: Vec<Ingredient>,
    pub timestep: u32,
}

impl OvercookedObs {
    pub fn hand(&self) -> Hand {
        if self.bowl.loc == ItemLoc::Held {
            return Hand::Bowl;
        }
        match self.ingredients.iter().position(|i| i.loc == ItemLoc::Held) {
            Some(i) => Hand::Ingredient(i),
            None => Hand::Nothing,
        }
    }

    /// Visible contents of the bowl.
    pub fn bowl_contents(&self) -> Vec<usize> {
        (0..self.ingredients.len())
            .filter(|&i| self.ingredients[i].visible && self.ingredients[i].loc == ItemLoc::InBowl)
            .collect()
    }

    /// Visible item on board `k`.
    pub fn board_item(&self, k: usize) -> Option<Hand> {
        if self.bowl.visible && self.bowl.loc == ItemLoc::Board(k) {
            return Some(Hand::Bowl);
        }
        self.ingredients.iter().position(|i| i.visible && i.loc == ItemLoc::Board(k)).map(Hand::Ingredient)
    }

    /// First cutting board next to the agent.
    pub fn board_in_front(&self) -> Option<usize> {
        self.boards.iter().position(|b| b.adjacent(self.agent))
    }

    /// Fixed-width numeric encoding for the MLP baseline.
    pub fn features(&self) -> Vec<f64> {
        let nx = |p: Pos| p.x as f64 / (self.width - 1).max(1) as f64;
        let ny = |p: Pos| p.y as f64 / (self.height - 1).max(1) as f64;
        let mut f = vec![nx(self.agent), ny(self.agent)];
        let hand = self.hand();
        let held_chopped = matches!(hand, Hand::Ingredient(i) if self.ingredients[i].chopped);
        f.extend([
            f64::from(hand == Hand::Nothing),
            f64::from(matches!(hand, Hand::Ingredient(_)) && !held_chopped),
            f64::from(held_chopped),
            f64::from(hand == Hand::Bowl),
        ]);
        for kind in Ingredient::ALL {
            match self.kinds.iter().position(|&k| k == kind) {
                Some(i) => {
                    let e = &self.ingredients[i];
                    let (x, y) = if e.visible { (nx(e.pos), ny(e.pos)) } else { (0.0, 0.0) };
                    f.extend([
                        f64::from(e.visible),
                        x,
                        y,
                        f64::from(e.chopped),
                        f64::from(matches!(e.loc, ItemLoc::Board(_))),
                        f64::from(e.loc == ItemLoc::InBowl),
                        f64::from(e.loc == ItemLoc::Held),
                    ]);
                }
                None => f.extend([0.0; 7]),
            }
        }
        let b = &self.bowl;
        let (x, y) = if b.visible { (nx(b.pos), ny(b.pos)) } else { (0.0, 0.0) };
        f.extend([f64::from(b.visible), x, y, f64::from(matches!(b.loc, ItemLoc::Board(_)))]);
        f
    }
}

/// Length of [`OvercookedObs::features`].
pub const FEATURE_DIM: usize = 2 + 4 + 3 * 7 + 4;
