//! Hierarchical task recipes and utterance realization.
//!
//! A [`RecipeLibrary`] is parsed from a small line-oriented language (see
//! `parse`). Recipes decompose a goal into actor-attributed steps, optionally
//! wrapped in a prologue and an epilogue section. A goal may have several
//! recipes distinguished by their method name and applicability condition.

mod parse;
mod realize;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use parse::parse_library;
pub use realize::{parse_markup, realize, realize_marked, Gesture, RealizeError, SemanticAct, TimedGesture, Utterance};

/// Reconstruction of the IGlassware demonstration task model.
pub const IGLASSWARE_LIBRARY: &str = include_str!("../../fixtures/iglassware.recipes");

/// Goal injected by the engagement layer when the user does not take up a turn.
pub const ASK_TO_END_GOAL: &str = "ask_to_end";
/// Goal injected by the engagement layer when the user's face is lost.
pub const RE_ENGAGE_GOAL: &str = "re_engage";
/// Goal the engagement layer jumps to when the interaction must close.
pub const CLOSING_GOAL: &str = "closing";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StepActor {
    Robot,
    Human,
    Either,
}

impl fmt::Display for StepActor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StepActor::Robot => "robot",
            StepActor::Human => "user",
            StepActor::Either => "either",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Act {
    /// Robot statement or request. `chain` keeps the floor for the next act.
    Say { text: String, chain: bool },
    /// Robot query for an unbound recipe parameter.
    Ask { param: String },
    /// Robot head nod.
    Nod,
    /// User supplies a parameter value by speaking.
    Tell { param: String },
    /// User looks at an object.
    Look { object: String },
    /// User pours between two objects; observed through the table sensor.
    Pour { from: String, to: String },
    /// Subgoal, optionally proposed to the user before it is undertaken.
    Goal {
        goal: String,
        propose: Option<String>,
        persuade: Option<String>,
    },
}

impl Act {
    pub fn is_primitive(&self) -> bool {
        !matches!(self, Act::Goal { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Step {
    pub actor: StepActor,
    pub act: Act,
    pub optional: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Section {
    pub label: Option<String>,
    pub steps: Vec<Step>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Condition {
    Done(String),
    Skipped(String),
    Aborted,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    pub ty: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Recipe {
    pub goal: String,
    pub purpose: String,
    pub method: Option<String>,
    pub condition: Option<Condition>,
    pub params: Vec<Param>,
    pub prologue: Option<Section>,
    pub steps: Vec<Step>,
    pub epilogue: Option<Section>,
}

impl Recipe {
    /// Segment label, e.g. `closing by normal closing`.
    pub fn label(&self) -> String {
        match &self.method {
            Some(m) => format!("{} by {}", self.purpose, m),
            None => self.purpose.clone(),
        }
    }

    pub fn prologue_label(&self) -> String {
        self.prologue
            .as_ref()
            .and_then(|s| s.label.clone())
            .unwrap_or_else(|| format!("providing prologue to {}", self.purpose))
    }

    pub fn epilogue_label(&self) -> String {
        self.epilogue
            .as_ref()
            .and_then(|s| s.label.clone())
            .unwrap_or_else(|| format!("providing epilogue to {}", self.purpose))
    }

    /// Every step in execution order: prologue, body, epilogue.
    pub fn all_steps(&self) -> impl Iterator<Item = &Step> {
        self.prologue
            .iter()
            .flat_map(|s| s.steps.iter())
            .chain(self.steps.iter())
            .chain(self.epilogue.iter().flat_map(|s| s.steps.iter()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TemplateKind {
    Ask,
    Reformulate,
    Await,
}

impl fmt::Display for TemplateKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TemplateKind::Ask => "ask",
            TemplateKind::Reformulate => "reformulate",
            TemplateKind::Await => "await",
        })
    }
}

/// Application-specific surface form overriding a default realization.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationTemplate {
    pub kind: TemplateKind,
    /// `None` matches any argument.
    pub arg: Option<String>,
    pub surface: String,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LibraryError {
    #[error("{line}:{column}: {msg}")]
    Syntax { line: usize, column: usize, msg: String },
    #[error("line {line}: duplicate recipe for goal `{goal}`")]
    DuplicateGoal { goal: String, line: usize },
    #[error("line {line}: step refers to unknown goal `{goal}`")]
    UnresolvedSubgoal { goal: String, line: usize },
    #[error("cyclic recipe reference: {}", cycle.join(" -> "))]
    CyclicReference { cycle: Vec<String> },
    #[error("line {line}: unknown parameter `{param}`")]
    UnknownParameter { param: String, line: usize },
    #[error("unknown goal `{0}`")]
    UnknownGoal(String),
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecipeLibrary {
    pub top: Option<String>,
    pub recipes: Vec<Recipe>,
    pub templates: Vec<GenerationTemplate>,
}

impl RecipeLibrary {
    pub fn iglassware() -> Self {
        parse_library(IGLASSWARE_LIBRARY).expect("bundled library parses")
    }

    pub fn is_empty(&self) -> bool {
        self.recipes.is_empty() && self.templates.is_empty()
    }

    pub fn has_goal(&self, goal: &str) -> bool {
        self.recipes.iter().any(|r| r.goal == goal)
    }

    /// All recipes for `goal`, in file order.
    pub fn recipes_for<'a>(&'a self, goal: &'a str) -> impl Iterator<Item = &'a Recipe> + 'a {
        self.recipes.iter().filter(move |r| r.goal == goal)
    }

    /// Goal names in first-appearance order.
    pub fn goals(&self) -> Vec<&str> {
        let mut seen = BTreeSet::new();
        self.recipes
            .iter()
            .filter(|r| seen.insert(r.goal.as_str()))
            .map(|r| r.goal.as_str())
            .collect()
    }

    pub fn params(&self) -> BTreeMap<&str, &str> {
        self.recipes
            .iter()
            .flat_map(|r| r.params.iter())
            .map(|p| (p.name.as_str(), p.ty.as_str()))
            .collect()
    }

    /// Subgoals of the first recipe of `goal`.
    pub fn first_level_subgoals(&self, goal: &str) -> Vec<String> {
        self.recipes_for(goal)
            .next()
            .map(|r| {
                r.all_steps()
                    .filter_map(|s| match &s.act {
                        Act::Goal { goal, .. } => Some(goal.clone()),
                        _ => None,
                    })
                    .collect()
            })
            .unwrap_or_default()
    }

    /// Canonical DSL text; parsing it yields an equal library.
    pub fn to_dsl(&self) -> String {
        parse::serialize(self)
    }

    pub fn expand(&self, goal: &str) -> Result<PlanNode, LibraryError> {
        expand(goal, self)
    }
}

/// Static decomposition of a goal into its possible plans.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum PlanNode {
    Goal {
        goal: String,
        optional: bool,
        alternatives: Vec<PlanRecipe>,
    },
    Act {
        actor: StepActor,
        act: Act,
        optional: bool,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PlanRecipe {
    pub label: String,
    pub prologue: Option<PlanSection>,
    pub body: Vec<PlanNode>,
    pub epilogue: Option<PlanSection>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PlanSection {
    pub label: String,
    pub children: Vec<PlanNode>,
}

impl PlanNode {
    /// Number of goal levels on the deepest path (a goal with only primitive
    /// steps has depth 1).
    pub fn depth(&self) -> usize {
        match self {
            PlanNode::Act { .. } => 0,
            PlanNode::Goal { alternatives, .. } => {
                1 + alternatives
                    .iter()
                    .flat_map(|r| r.children())
                    .map(PlanNode::depth)
                    .max()
                    .unwrap_or(0)
            }
        }
    }

    /// Finds the first goal node with the given name (pre-order).
    pub fn find_goal(&self, name: &str) -> Option<&PlanNode> {
        match self {
            PlanNode::Act { .. } => None,
            PlanNode::Goal { goal, alternatives, .. } => {
                if goal == name {
                    return Some(self);
                }
                alternatives
                    .iter()
                    .flat_map(|r| r.children())
                    .find_map(|c| c.find_goal(name))
            }
        }
    }
}

impl PlanRecipe {
    pub fn children(&self) -> impl Iterator<Item = &PlanNode> {
        self.prologue
            .iter()
            .flat_map(|s| s.children.iter())
            .chain(self.body.iter())
            .chain(self.epilogue.iter().flat_map(|s| s.children.iter()))
    }
}

/// Expands `goal` into a plan tree covering every alternative recipe.
pub fn expand(goal: &str, library: &RecipeLibrary) -> Result<PlanNode, LibraryError> {
    if !library.has_goal(goal) {
        return Err(LibraryError::UnknownGoal(goal.to_string()));
    }
    Ok(expand_goal(goal, false, library))
}

fn expand_goal(goal: &str, optional: bool, library: &RecipeLibrary) -> PlanNode {
    let alternatives = library
        .recipes_for(goal)
        .map(|r| {
            let section = |s: &Option<Section>, label: String| {
                s.as_ref().map(|s| PlanSection {
                    label,
                    children: s.steps.iter().map(|st| expand_step(st, library)).collect(),
                })
            };
            PlanRecipe {
                label: r.label(),
                prologue: section(&r.prologue, r.prologue_label()),
                body: r.steps.iter().map(|st| expand_step(st, library)).collect(),
                epilogue: section(&r.epilogue, r.epilogue_label()),
            }
        })
        .collect();
    PlanNode::Goal {
        goal: goal.to_string(),
        optional,
        alternatives,
    }
}

fn expand_step(step: &Step, library: &RecipeLibrary) -> PlanNode {
    match &step.act {
        Act::Goal { goal, .. } => expand_goal(goal, step.optional, library),
        act => PlanNode::Act {
            actor: step.actor,
            act: act.clone(),
            optional: step.optional,
        },
    }
}
