//! Generators and checks for the schema and protocol invariants, run by both
//! the property suite and the acceptance target.

use nvpersona::catalog::DescriptionCatalog;
use nvpersona::llm::{CallContext, ChatBackend, ChatRequest, GatewayError};
use nvpersona::prompt::{build_system_prompt, PersonaConfig, Personality, PromptOptions, ScenarioKind};
use nvpersona::schema::{
    load_schema, parse_annotated, parse_annotated_with, serialize_annotation, ActionSet,
    MarkupError, MarkupFormat, Modality, ParseOptions, Speaker,
};
use nvpersona::sim::{run_trial, RunConfig, TrialSpec, TrialStatus};
use proptest::prelude::*;
use proptest::test_runner::TestCaseError;

pub type Check = Result<(), TestCaseError>;

/// Canonical set from schema positions, keeping only the first member of each exclusion group.
pub fn set_from_positions(positions: &[usize]) -> ActionSet {
    let schema = load_schema();
    let mut ps = positions.to_vec();
    ps.sort_unstable();
    ps.dedup();
    let mut groups = Vec::new();
    let mut set = ActionSet::default();
    for p in ps {
        let a = &schema.actions()[p];
        if let Some(g) = a.exclusion_group {
            if groups.contains(&g) {
                continue;
            }
            groups.push(g);
        }
        list_mut(&mut set, a.modality).push(a.name.to_string());
    }
    set
}

pub fn list_mut(set: &mut ActionSet, m: Modality) -> &mut Vec<String> {
    match m {
        Modality::Face => &mut set.face,
        Modality::Body => &mut set.body,
        Modality::Voice => &mut set.voice,
    }
}

pub fn sentence() -> impl Strategy<Value = String> {
    (prop::collection::vec("[a-zA-Z']{1,9}", 1..12), prop::sample::select(vec![".", "!", "?", ""]))
        .prop_map(|(words, end)| format!("{}{end}", words.join(" ")))
        .prop_filter("needs a letter", |s| s.chars().any(char::is_alphabetic))
}

pub fn positions() -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(0usize..29, 0..10)
}

pub fn markup_round_trip(text: &str, ps: &[usize], json: bool) -> Check {
    let set = set_from_positions(ps);
    let format = if json { MarkupFormat::StructuredJson } else { MarkupFormat::InlineTags };
    let raw = serialize_annotation(text, &set, format);
    let back = parse_annotated(&raw, format).map_err(|e| TestCaseError::fail(e.to_string()))?;
    prop_assert_eq!(&back.text, text);
    prop_assert_eq!(&back.actions, &set);
    prop_assert_eq!(&back.raw, &raw);
    let u = back.into_utterance(Speaker::Personality, 0);
    prop_assert!(u.validate(load_schema()).is_ok());
    Ok(())
}

pub const EXCLUSIVE_PAIRS: [(&str, &str); 3] = [
    ("Make Eye Contact", "Avert Gaze"),
    ("Loud Volume", "Small Volume"),
    ("Fast Pace", "Slow Pace"),
];

pub fn exclusion_rejected(text: &str, ps: &[usize], group: usize) -> Check {
    let schema = load_schema();
    let (x, y) = EXCLUSIVE_PAIRS[group];
    let mut set = set_from_positions(ps);
    for n in [x, y] {
        let list = list_mut(&mut set, schema.get(n).unwrap().modality);
        if !list.iter().any(|have| have == n) {
            list.push(n.to_string());
        }
    }
    for format in [MarkupFormat::StructuredJson, MarkupFormat::InlineTags] {
        let raw = serialize_annotation(text, &set, format);
        for lenient in [false, true] {
            let got = parse_annotated_with(schema, &raw, format, ParseOptions { lenient });
            let rejected = matches!(got, Err(MarkupError::ExclusionViolation { .. }));
            prop_assert!(rejected, "{raw} lenient={lenient}: {got:?}");
        }
    }
    Ok(())
}

pub fn prompt_covers_all_actions(seed: u64, ext: bool, nego: bool, personality_side: bool) -> Check {
    let cfg = PersonaConfig::default();
    let label = if ext { Personality::Extrovert } else { Personality::Introvert };
    let kind = if nego { ScenarioKind::Negotiation } else { ScenarioKind::IceBreaking };
    let side = if personality_side { Speaker::Personality } else { Speaker::Generic };
    let catalog = DescriptionCatalog::bundled();
    let schema = load_schema();
    let opts = PromptOptions { seed, ..PromptOptions::default() };
    let build = || {
        build_system_prompt(&cfg.profile(label), cfg.scenario(kind), schema, &catalog, side, &opts).unwrap()
    };
    let p = build();
    prop_assert_eq!(schema.actions().len(), 29);
    for a in schema.actions() {
        let prefix = format!("- {}: ", a.name);
        let line = p.lines().find(|l| l.starts_with(&prefix));
        prop_assert!(line.is_some(), "missing {}", a.name);
        let desc = &line.unwrap()[prefix.len()..];
        prop_assert!(catalog.descriptions(a.name).iter().any(|d| d == desc));
    }
    prop_assert_eq!(p, build());
    Ok(())
}

#[derive(Debug, Clone)]
pub enum Reply {
    Annotated { text: String, actions: Vec<usize>, end: bool },
    Inline { text: String, actions: Vec<usize>, end: bool },
    Garbage,
    Down,
}

pub fn reply() -> impl Strategy<Value = Reply> {
    prop_oneof![
        6 => (sentence(), positions(), prop::bool::weighted(0.15))
            .prop_map(|(text, actions, end)| Reply::Annotated { text, actions, end }),
        3 => (sentence(), positions(), prop::bool::weighted(0.15))
            .prop_map(|(text, actions, end)| Reply::Inline { text, actions, end }),
        1 => Just(Reply::Garbage),
        1 => Just(Reply::Down),
    ]
}

/// Answers call `n` of a speaker with `replies[(2n + side) % len]`.
pub struct RandomBackend {
    pub replies: Vec<Reply>,
}

impl ChatBackend for RandomBackend {
    fn complete(&self, _req: &ChatRequest, ctx: &CallContext) -> Result<String, GatewayError> {
        let key = ctx.stream.as_ref().unwrap();
        let side = usize::from(key.speaker == Speaker::Generic);
        let r = &self.replies[(2 * key.call_index + side) % self.replies.len()];
        let end = |e: bool| if e { " <END>" } else { "" };
        let render = |text: &str, actions: &[usize], format| serialize_annotation(text, &set_from_positions(actions), format);
        match r {
            Reply::Annotated { text, actions, end: e } => {
                Ok(format!("{}{}", render(text, actions, MarkupFormat::StructuredJson), end(*e)))
            }
            Reply::Inline { text, actions, end: e } => {
                Ok(format!("{}{}", render(text, actions, MarkupFormat::InlineTags), end(*e)))
            }
            Reply::Garbage => Ok("{\"face\": [\"Wink\"]".into()),
            Reply::Down => Err(GatewayError::Transport { status: Some(503), message: "down".into() }),
        }
    }

    fn descriptor(&self) -> String {
        "random".into()
    }

    fn is_deterministic(&self) -> bool {
        true
    }
}

/// Turn caps, turn numbering, speaker alternation, opening side, question order.
pub fn dialogue_protocol(replies: Vec<Reply>, nego: bool, ext: bool, seed: u64) -> Check {
    let config = RunConfig { seed, ..RunConfig::default() };
    let kind = if nego { ScenarioKind::Negotiation } else { ScenarioKind::IceBreaking };
    let spec = TrialSpec {
        scenario: kind,
        personality: if ext { Personality::Extrovert } else { Personality::Introvert },
        trial_index: 0,
        seed,
    };
    let backend = RandomBackend { replies };
    let mut sink = Vec::new();
    let trial = run_trial(&config, &spec, &backend, &mut sink).unwrap();
    let scenario = config.persona.scenario(kind);
    let cap = if nego { 10 } else { 8 };
    let us = &trial.utterances;

    prop_assert!(us.len() <= cap);
    prop_assert_eq!(trial.entry.utterances, us.len());
    prop_assert_eq!(String::from_utf8(sink).unwrap().lines().count(), us.len());
    let opener = if nego { Speaker::Personality } else { Speaker::Generic };
    for (i, u) in us.iter().enumerate() {
        prop_assert_eq!(u.turn_index, i);
        let want = if i % 2 == 0 { opener } else { opener.other() };
        prop_assert_eq!(u.speaker, want);
        prop_assert!(u.validate(load_schema()).is_ok());
        if u.speaker == Speaker::Generic {
            prop_assert!(u.actions.is_empty());
        }
    }
    match trial.entry.status {
        TrialStatus::Failed => prop_assert!(trial.entry.errors.len() >= config.max_consecutive_failures),
        TrialStatus::Complete => {
            if !nego {
                // questions go out at the generic agent's first three turns, in order
                let asked: Vec<&str> = us
                    .iter()
                    .filter(|u| u.speaker == Speaker::Generic)
                    .map(|u| u.text.as_str())
                    .collect();
                prop_assert!(asked.len() >= scenario.fixed_questions.len());
                for (q, said) in scenario.fixed_questions.iter().zip(&asked) {
                    prop_assert!(said.to_lowercase().contains(&q.to_lowercase()));
                }
            }
            if us.len() < cap {
                prop_assert!(us.last().unwrap().raw.contains("<END>"));
            }
        }
        TrialStatus::Pending => prop_assert!(false, "pending after run"),
    }
    Ok(())
}
