//! Recipe language.
//!
//! One directive per line; indentation is not significant and `#` starts a
//! comment outside quoted strings.
//!
//! ```text
//! top <goal>
//! recipe <goal> "<purpose>" [by "<method>"] [when (done|skipped) <goal> | when aborted]
//!   param <name> <type>
//!   prologue ["<label>"]          # following steps go to the prologue
//!   body                          # ... to the body (the default)
//!   epilogue ["<label>"]          # ... to the epilogue
//!   step robot say "<text>" [chain] [optional]
//!   step robot ask <param>
//!   step robot nod
//!   step user tell <param>
//!   step user look <object>
//!   step user pour <from> <to>
//!   step [robot|user|either] goal <goal> [optional] [propose "<text>"] [persuade "<text>"]
//! end
//! template (ask|reformulate|await) (<arg>|*) "<surface form>"
//! ```
//!
//! Say texts and templates may contain `{param}` slots and gesture markers
//! (`[glance cup]`, `[point cup]`, `[beat]`).

use std::collections::{BTreeMap, BTreeSet};

use super::realize::slots;
use super::{
    Act, Condition, GenerationTemplate, LibraryError, Param, Recipe, RecipeLibrary, Section, Step, StepActor,
    TemplateKind,
};

#[derive(Debug, Clone)]
struct Token {
    text: String,
    quoted: bool,
    column: usize,
}

fn tokenize(line: &str, line_no: usize) -> Result<Vec<Token>, LibraryError> {
    let mut out = Vec::new();
    let chars: Vec<char> = line.chars().collect();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if c == '#' {
            break;
        } else if c == '"' {
            let column = i + 1;
            let mut text = String::new();
            i += 1;
            loop {
                match chars.get(i) {
                    None => {
                        return Err(LibraryError::Syntax {
                            line: line_no,
                            column,
                            msg: "unterminated string".into(),
                        })
                    }
                    Some('"') => {
                        i += 1;
                        break;
                    }
                    Some('\\') => {
                        match chars.get(i + 1) {
                            Some(&e @ ('"' | '\\')) => text.push(e),
                            _ => {
                                return Err(LibraryError::Syntax {
                                    line: line_no,
                                    column: i + 1,
                                    msg: "invalid escape".into(),
                                })
                            }
                        }
                        i += 2;
                    }
                    Some(&ch) => {
                        text.push(ch);
                        i += 1;
                    }
                }
            }
            out.push(Token { text, quoted: true, column });
        } else {
            let column = i + 1;
            let start = i;
            while i < chars.len() && !chars[i].is_whitespace() && chars[i] != '"' && chars[i] != '#' {
                i += 1;
            }
            out.push(Token {
                text: chars[start..i].iter().collect(),
                quoted: false,
                column,
            });
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    tokens: &'a [Token],
    pos: usize,
    line: usize,
    eol_column: usize,
}

impl<'a> Cursor<'a> {
    fn err(&self, msg: impl Into<String>) -> LibraryError {
        let column = self.tokens.get(self.pos).map_or(self.eol_column, |t| t.column);
        LibraryError::Syntax {
            line: self.line,
            column,
            msg: msg.into(),
        }
    }

    fn peek(&self) -> Option<&'a Token> {
        self.tokens.get(self.pos)
    }

    fn word(&mut self, what: &str) -> Result<String, LibraryError> {
        match self.peek() {
            Some(t) if !t.quoted && is_name(&t.text) => {
                self.pos += 1;
                Ok(t.text.clone())
            }
            _ => Err(self.err(format!("expected {what}"))),
        }
    }

    fn string(&mut self, what: &str) -> Result<String, LibraryError> {
        match self.peek() {
            Some(t) if t.quoted => {
                self.pos += 1;
                Ok(t.text.clone())
            }
            _ => Err(self.err(format!("expected quoted {what}"))),
        }
    }

    fn keyword(&mut self, kw: &str) -> bool {
        match self.peek() {
            Some(t) if !t.quoted && t.text == kw => {
                self.pos += 1;
                true
            }
            _ => false,
        }
    }

    fn optional_string(&mut self) -> Option<String> {
        match self.peek() {
            Some(t) if t.quoted => {
                self.pos += 1;
                Some(t.text.clone())
            }
            _ => None,
        }
    }

    fn finish(&self) -> Result<(), LibraryError> {
        if self.pos < self.tokens.len() {
            Err(self.err(format!("unexpected `{}`", self.tokens[self.pos].text)))
        } else {
            Ok(())
        }
    }
}

fn is_name(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_alphanumeric() || c == '_' || c == '-' || c == '*')
}

#[derive(Clone, Copy, PartialEq)]
enum SectionKind {
    Prologue,
    Body,
    Epilogue,
}

struct OpenRecipe {
    recipe: Recipe,
    line: usize,
    section: SectionKind,
}

/// References collected while parsing, checked once the whole file is read.
#[derive(Default)]
struct Refs {
    subgoals: Vec<(String, usize)>,
    params: Vec<(String, usize)>,
}

pub fn parse_library(text: &str) -> Result<RecipeLibrary, LibraryError> {
    let mut lib = RecipeLibrary::default();
    let mut open: Option<OpenRecipe> = None;
    let mut refs = Refs::default();
    let mut recipe_lines = Vec::new();
    let mut template_lines = Vec::new();

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let tokens = tokenize(raw, line_no)?;
        if tokens.is_empty() {
            continue;
        }
        let mut cur = Cursor {
            tokens: &tokens,
            pos: 0,
            line: line_no,
            eol_column: raw.chars().count() + 1,
        };
        let head = cur.word("directive")?;
        match (head.as_str(), open.as_mut()) {
            ("top", None) => {
                lib.top = Some(cur.word("goal name")?);
            }
            ("recipe", None) => {
                let goal = cur.word("goal name")?;
                let purpose = cur.string("purpose")?;
                let method = if cur.keyword("by") { Some(cur.string("method")?) } else { None };
                let condition = if cur.keyword("when") {
                    if cur.keyword("done") {
                        Some(Condition::Done(cur.word("goal name")?))
                    } else if cur.keyword("skipped") {
                        Some(Condition::Skipped(cur.word("goal name")?))
                    } else if cur.keyword("aborted") {
                        Some(Condition::Aborted)
                    } else {
                        return Err(cur.err("expected `done`, `skipped` or `aborted`"));
                    }
                } else {
                    None
                };
                cur.finish()?;
                if let Some(Condition::Done(g) | Condition::Skipped(g)) = &condition {
                    refs.subgoals.push((g.clone(), line_no));
                }
                open = Some(OpenRecipe {
                    recipe: Recipe {
                        goal,
                        purpose,
                        method,
                        condition,
                        params: Vec::new(),
                        prologue: None,
                        steps: Vec::new(),
                        epilogue: None,
                    },
                    line: line_no,
                    section: SectionKind::Body,
                });
                continue;
            }
            ("template", None) => {
                let kind = match cur.word("template kind")?.as_str() {
                    "ask" => TemplateKind::Ask,
                    "reformulate" => TemplateKind::Reformulate,
                    "await" => TemplateKind::Await,
                    other => {
                        cur.pos -= 1;
                        return Err(cur.err(format!("unknown template kind `{other}`")));
                    }
                };
                let arg = cur.word("template argument or `*`")?;
                let surface = cur.string("surface form")?;
                cur.finish()?;
                if kind == TemplateKind::Ask && arg != "*" {
                    refs.params.push((arg.clone(), line_no));
                }
                template_lines.push((surface.clone(), line_no));
                lib.templates.push(GenerationTemplate {
                    kind,
                    arg: (arg != "*").then_some(arg),
                    surface,
                });
            }
            ("end", Some(_)) => {
                cur.finish()?;
                let done = open.take().unwrap();
                recipe_lines.push(done.line);
                lib.recipes.push(done.recipe);
                continue;
            }
            ("param", Some(r)) => {
                let name = cur.word("parameter name")?;
                let ty = cur.word("parameter type")?;
                cur.finish()?;
                r.recipe.params.push(Param { name, ty });
            }
            ("prologue" | "epilogue", Some(r)) => {
                let label = cur.optional_string();
                cur.finish()?;
                let (slot, kind) = if head == "prologue" {
                    (&mut r.recipe.prologue, SectionKind::Prologue)
                } else {
                    (&mut r.recipe.epilogue, SectionKind::Epilogue)
                };
                if slot.is_some() {
                    cur.pos = 0;
                    return Err(cur.err(format!("{head} declared twice")));
                }
                *slot = Some(Section { label, steps: Vec::new() });
                r.section = kind;
            }
            ("body", Some(r)) => {
                cur.finish()?;
                r.section = SectionKind::Body;
            }
            ("step", Some(r)) => {
                let step = parse_step(&mut cur, &mut refs)?;
                let target = match r.section {
                    SectionKind::Body => &mut r.recipe.steps,
                    SectionKind::Prologue => &mut r.recipe.prologue.as_mut().unwrap().steps,
                    SectionKind::Epilogue => &mut r.recipe.epilogue.as_mut().unwrap().steps,
                };
                target.push(step);
            }
            ("recipe" | "top" | "template", Some(_)) => {
                cur.pos = 0;
                return Err(cur.err(format!("`{head}` inside a recipe (missing `end`?)")));
            }
            (_, _) => {
                cur.pos = 0;
                return Err(cur.err(format!("unexpected `{head}`")));
            }
        }
    }
    if let Some(r) = open {
        return Err(LibraryError::Syntax {
            line: r.line,
            column: 1,
            msg: format!("recipe `{}` is missing `end`", r.recipe.goal),
        });
    }
    validate(&lib, &refs, &recipe_lines, &template_lines)?;
    if lib.top.is_none() {
        lib.top = lib.recipes.first().map(|r| r.goal.clone());
    }
    Ok(lib)
}

fn parse_step(cur: &mut Cursor<'_>, refs: &mut Refs) -> Result<Step, LibraryError> {
    let mut actor = None;
    if cur.keyword("robot") {
        actor = Some(StepActor::Robot);
    } else if cur.keyword("user") {
        actor = Some(StepActor::Human);
    } else if cur.keyword("either") {
        actor = Some(StepActor::Either);
    }
    let verb_pos = cur.pos;
    let verb = cur.word("act")?;
    let act = match verb.as_str() {
        "say" => Act::Say {
            text: cur.string("text")?,
            chain: false,
        },
        "ask" => Act::Ask {
            param: cur.word("parameter name")?,
        },
        "nod" => Act::Nod,
        "tell" => Act::Tell {
            param: cur.word("parameter name")?,
        },
        "look" => Act::Look {
            object: cur.word("object")?,
        },
        "pour" => Act::Pour {
            from: cur.word("source object")?,
            to: cur.word("target object")?,
        },
        "goal" => Act::Goal {
            goal: cur.word("goal name")?,
            propose: None,
            persuade: None,
        },
        other => {
            cur.pos = verb_pos;
            return Err(cur.err(format!("unknown act `{other}`")));
        }
    };
    let mut step = Step {
        actor: actor.unwrap_or(match act {
            Act::Tell { .. } | Act::Look { .. } | Act::Pour { .. } => StepActor::Human,
            Act::Goal { .. } => StepActor::Either,
            _ => StepActor::Robot,
        }),
        act,
        optional: false,
    };
    loop {
        if cur.keyword("optional") {
            step.optional = true;
        } else if let Act::Say { chain, .. } = &mut step.act {
            if cur.keyword("chain") {
                *chain = true;
            } else {
                break;
            }
        } else if let Act::Goal { propose, persuade, .. } = &mut step.act {
            if cur.keyword("propose") {
                *propose = Some(cur.string("proposal")?);
            } else if cur.keyword("persuade") {
                *persuade = Some(cur.string("persuasion")?);
            } else {
                break;
            }
        } else {
            break;
        }
    }
    cur.finish()?;
    let line = cur.line;
    match &step.act {
        Act::Goal { goal, propose, persuade } => {
            refs.subgoals.push((goal.clone(), line));
            for text in propose.iter().chain(persuade.iter()) {
                refs.params.extend(slots(text).into_iter().map(|s| (s, line)));
            }
        }
        Act::Say { text, .. } => refs.params.extend(slots(text).into_iter().map(|s| (s, line))),
        Act::Ask { param } | Act::Tell { param } => refs.params.push((param.clone(), line)),
        _ => {}
    }
    Ok(step)
}

fn validate(
    lib: &RecipeLibrary,
    refs: &Refs,
    recipe_lines: &[usize],
    template_lines: &[(String, usize)],
) -> Result<(), LibraryError> {
    let mut seen = BTreeSet::new();
    for (r, &line) in lib.recipes.iter().zip(recipe_lines) {
        if !seen.insert((r.goal.as_str(), r.method.as_deref())) {
            return Err(LibraryError::DuplicateGoal {
                goal: r.goal.clone(),
                line,
            });
        }
    }
    for (goal, line) in &refs.subgoals {
        if !lib.has_goal(goal) {
            return Err(LibraryError::UnresolvedSubgoal {
                goal: goal.clone(),
                line: *line,
            });
        }
    }
    if let Some(top) = &lib.top {
        if !lib.has_goal(top) {
            return Err(LibraryError::UnresolvedSubgoal { goal: top.clone(), line: 0 });
        }
    }
    let params = lib.params();
    for (p, line) in &refs.params {
        if !params.contains_key(p.as_str()) {
            return Err(LibraryError::UnknownParameter {
                param: p.clone(),
                line: *line,
            });
        }
    }
    // Template slots may name the act's own argument or a library parameter.
    for (surface, line) in template_lines {
        for s in slots(surface) {
            if !matches!(s.as_str(), "param" | "object" | "act") && !params.contains_key(s.as_str()) {
                return Err(LibraryError::UnknownParameter { param: s, line: *line });
            }
        }
    }
    check_acyclic(lib)
}

fn check_acyclic(lib: &RecipeLibrary) -> Result<(), LibraryError> {
    let mut edges: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for r in &lib.recipes {
        let out = edges.entry(r.goal.as_str()).or_default();
        for s in r.all_steps() {
            if let Act::Goal { goal, .. } = &s.act {
                out.push(goal.as_str());
            }
        }
    }
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        Visiting,
        Done,
    }
    fn visit<'a>(
        node: &'a str,
        edges: &BTreeMap<&'a str, Vec<&'a str>>,
        marks: &mut BTreeMap<&'a str, Mark>,
        path: &mut Vec<&'a str>,
    ) -> Result<(), LibraryError> {
        match marks.get(node) {
            Some(Mark::Done) => return Ok(()),
            Some(Mark::Visiting) => {
                let start = path.iter().position(|n| *n == node).unwrap_or(0);
                let mut cycle: Vec<String> = path[start..].iter().map(|s| s.to_string()).collect();
                cycle.push(node.to_string());
                return Err(LibraryError::CyclicReference { cycle });
            }
            None => {}
        }
        marks.insert(node, Mark::Visiting);
        path.push(node);
        for next in edges.get(node).into_iter().flatten() {
            visit(next, edges, marks, path)?;
        }
        path.pop();
        marks.insert(node, Mark::Done);
        Ok(())
    }
    let mut marks = BTreeMap::new();
    for goal in edges.keys() {
        visit(goal, &edges, &mut marks, &mut Vec::new())?;
    }
    Ok(())
}

fn quote(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        if c == '"' || c == '\\' {
            out.push('\\');
        }
        out.push(c);
    }
    out.push('"');
    out
}

pub(super) fn serialize(lib: &RecipeLibrary) -> String {
    let mut out = String::new();
    if let Some(top) = &lib.top {
        out.push_str(&format!("top {top}\n\n"));
    }
    for r in &lib.recipes {
        out.push_str(&format!("recipe {} {}", r.goal, quote(&r.purpose)));
        if let Some(m) = &r.method {
            out.push_str(&format!(" by {}", quote(m)));
        }
        match &r.condition {
            Some(Condition::Done(g)) => out.push_str(&format!(" when done {g}")),
            Some(Condition::Skipped(g)) => out.push_str(&format!(" when skipped {g}")),
            Some(Condition::Aborted) => out.push_str(" when aborted"),
            None => {}
        }
        out.push('\n');
        for p in &r.params {
            out.push_str(&format!("  param {} {}\n", p.name, p.ty));
        }
        let write_section = |out: &mut String, kw: &str, s: &Section| {
            out.push_str("  ");
            out.push_str(kw);
            if let Some(l) = &s.label {
                out.push(' ');
                out.push_str(&quote(l));
            }
            out.push('\n');
            for st in &s.steps {
                out.push_str(&step_line(st));
            }
        };
        if let Some(p) = &r.prologue {
            write_section(&mut out, "prologue", p);
            if !r.steps.is_empty() || r.epilogue.is_none() {
                out.push_str("  body\n");
            }
        }
        for st in &r.steps {
            out.push_str(&step_line(st));
        }
        if let Some(e) = &r.epilogue {
            write_section(&mut out, "epilogue", e);
        }
        out.push_str("end\n\n");
    }
    for t in &lib.templates {
        out.push_str(&format!(
            "template {} {} {}\n",
            t.kind,
            t.arg.as_deref().unwrap_or("*"),
            quote(&t.surface)
        ));
    }
    out
}

fn step_line(st: &Step) -> String {
    let mut s = format!("  step {} ", st.actor);
    match &st.act {
        Act::Say { text, chain } => {
            s.push_str(&format!("say {}", quote(text)));
            if *chain {
                s.push_str(" chain");
            }
        }
        Act::Ask { param } => s.push_str(&format!("ask {param}")),
        Act::Nod => s.push_str("nod"),
        Act::Tell { param } => s.push_str(&format!("tell {param}")),
        Act::Look { object } => s.push_str(&format!("look {object}")),
        Act::Pour { from, to } => s.push_str(&format!("pour {from} {to}")),
        Act::Goal { goal, propose, persuade } => {
            s.push_str(&format!("goal {goal}"));
            if let Some(p) = propose {
                s.push_str(&format!(" propose {}", quote(p)));
            }
            if let Some(p) = persuade {
                s.push_str(&format!(" persuade {}", quote(p)));
            }
        }
    }
    if st.optional {
        s.push_str(" optional");
    }
    s.push('\n');
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::recipe::IGLASSWARE_LIBRARY;

    #[test]
    fn empty_input_is_empty_library() {
        let lib = parse_library("").unwrap();
        assert!(lib.is_empty());
        assert_eq!(lib.top, None);
        assert!(parse_library("# only a comment\n\n").unwrap().is_empty());
    }

    #[test]
    fn self_cycle() {
        let err = parse_library("recipe a \"A\"\n step goal a\nend\n").unwrap_err();
        assert_eq!(err, LibraryError::CyclicReference { cycle: vec!["a".into(), "a".into()] });
    }

    #[test]
    fn longer_cycle() {
        let src = "recipe a \"A\"\n step goal b\nend\nrecipe b \"B\"\n step goal c\nend\nrecipe c \"C\"\n step goal a\nend\n";
        let LibraryError::CyclicReference { cycle } = parse_library(src).unwrap_err() else {
            panic!("expected cycle");
        };
        assert_eq!(cycle, vec!["a", "b", "c", "a"]);
    }

    #[test]
    fn duplicate_goal() {
        let src = "recipe a \"A\"\nend\nrecipe a \"A again\"\nend\n";
        assert_eq!(
            parse_library(src).unwrap_err(),
            LibraryError::DuplicateGoal { goal: "a".into(), line: 3 }
        );
        // Alternatives with distinct methods are fine.
        let alt = "recipe a \"A\" by \"x\"\nend\nrecipe a \"A\" by \"y\"\nend\n";
        assert!(parse_library(alt).is_ok());
    }

    #[test]
    fn unresolved_subgoal() {
        let src = "recipe a \"A\"\n  step goal nowhere\nend\n";
        assert_eq!(
            parse_library(src).unwrap_err(),
            LibraryError::UnresolvedSubgoal { goal: "nowhere".into(), line: 2 }
        );
    }

    #[test]
    fn syntax_errors_carry_position() {
        let err = parse_library("recipe a \"A\"\n  step robot dance\nend\n").unwrap_err();
        assert_eq!(
            err,
            LibraryError::Syntax { line: 2, column: 14, msg: "unknown act `dance`".into() }
        );
        let err = parse_library("recipe a \"unterminated\nend\n").unwrap_err();
        assert!(matches!(err, LibraryError::Syntax { line: 1, column: 10, .. }));
        let err = parse_library("recipe a \"A\"\n").unwrap_err();
        assert!(matches!(err, LibraryError::Syntax { line: 1, .. }));
        let err = parse_library("step robot nod\n").unwrap_err();
        assert!(matches!(err, LibraryError::Syntax { line: 1, column: 1, .. }));
    }

    #[test]
    fn unknown_slot() {
        let src = "recipe a \"A\"\n  step robot say \"Hello {nobody}\"\nend\n";
        assert!(matches!(parse_library(src), Err(LibraryError::UnknownParameter { line: 2, .. })));
    }

    #[test]
    fn sections_and_flags() {
        let src = r#"
recipe show "showing"
  param who name
  prologue "warming up"
  step robot say "Look, {who}!" chain
  body
  step user look cup optional
  epilogue
  step robot nod
end
"#;
        let lib = parse_library(src).unwrap();
        let r = &lib.recipes[0];
        assert_eq!(r.prologue.as_ref().unwrap().label.as_deref(), Some("warming up"));
        assert_eq!(r.prologue.as_ref().unwrap().steps[0].act, Act::Say { text: "Look, {who}!".into(), chain: true });
        assert!(r.steps[0].optional);
        assert_eq!(r.steps[0].actor, StepActor::Human);
        assert_eq!(r.epilogue_label(), "providing epilogue to showing");
        assert_eq!(lib.top.as_deref(), Some("show"));
    }

    #[test]
    fn fixture_serializes_to_fixpoint() {
        let lib = parse_library(IGLASSWARE_LIBRARY).unwrap();
        let text = lib.to_dsl();
        let again = parse_library(&text).unwrap();
        assert_eq!(lib, again);
        assert_eq!(text, again.to_dsl());
    }
}
