//! Layouts, task specs and prompt templates compiled into the library.

use crate::env::overcooked::OvercookedTask;

pub const UNSEEN_TASKS: &str = include_str!("../data/tasks/unseen.txt");

const FILES: &[(&str, &str)] = &[
    ("layouts/tomato_salad.txt", include_str!("../data/layouts/tomato_salad.txt")),
    ("layouts/tomato_lettuce_salad.txt", include_str!("../data/layouts/tomato_lettuce_salad.txt")),
    ("tasks/food_preparation.txt", include_str!("../data/tasks/food_preparation.txt")),
    ("tasks/entertainment.txt", include_str!("../data/tasks/entertainment.txt")),
    ("tasks/unseen.txt", UNSEEN_TASKS),
    ("templates/tomato_salad.txt", include_str!("../data/templates/tomato_salad.txt")),
    ("templates/tomato_lettuce_salad.txt", include_str!("../data/templates/tomato_lettuce_salad.txt")),
    ("templates/food_preparation.txt", include_str!("../data/templates/food_preparation.txt")),
    ("templates/entertainment.txt", include_str!("../data/templates/entertainment.txt")),
    ("corpus/procedures.txt", include_str!("../data/corpus/procedures.txt")),
];

/// Every embedded data file as `(relative path, contents)`.
pub fn files() -> &'static [(&'static str, &'static str)] {
    FILES
}

fn get(path: &str) -> Option<&'static str> {
    FILES.iter().find(|(p, _)| *p == path).map(|(_, t)| *t)
}

pub fn layout(task: OvercookedTask) -> &'static str {
    get(&format!("layouts/{}.txt", task.as_str())).expect("layout embedded")
}

/// Task file for a base household task.
pub fn task(id: &str) -> Option<&'static str> {
    if id == "unseen" {
        return None;
    }
    get(&format!("tasks/{id}.txt"))
}

/// Prompt template for a base task id.
pub fn template(id: &str) -> Option<&'static str> {
    get(&format!("templates/{id}.txt"))
}

/// General-knowledge sentences for the pretraining corpus.
pub fn procedures() -> &'static str {
    get("corpus/procedures.txt").expect("procedures embedded")
}
