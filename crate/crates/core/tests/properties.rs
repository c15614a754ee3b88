mod common;

use common::invariants::{self, positions, reply, sentence, set_from_positions};
use common::{rel_err, CASES};
use nvpersona::catalog::DescriptionCatalog;
use nvpersona::lexicon::{self, Lexicon};
use nvpersona::prompt::{
    build_system_prompt, PersonaConfig, Personality, PersonalityProfile, PromptOptions, ScenarioKind,
};
use nvpersona::schema::{
    compile_behavior_script, load_schema, parse_annotated, parse_annotated_with, serialize_annotation,
    EventStart, MarkupError, MarkupFormat, Modality, ParseOptions, Speaker,
};
use nvpersona::stats::{
    chi2_sf, chi_square, reg_inc_beta, reg_lower_gamma, student_t_test, welch_t_test,
};
use proptest::prelude::*;

fn config() -> ProptestConfig {
    ProptestConfig::with_cases(CASES)
}

// ---------------------------------------------------------------------------
// markup

proptest! {
    #![proptest_config(config())]

    #[test]
    fn markup_round_trips(text in sentence(), ps in positions(), json in any::<bool>()) {
        invariants::markup_round_trip(&text, &ps, json)?;
    }

    #[test]
    fn parse_order_is_canonical(text in sentence(), ps in positions()) {
        // the same actions listed in any order, with case noise, parse to one set
        let set = set_from_positions(&ps);
        let mut raw = text.clone();
        let names: Vec<&str> = set.iter().collect();
        for n in names.iter().rev() {
            raw.push_str(&format!(" ({})", n.to_uppercase()));
        }
        let back = parse_annotated(&raw, MarkupFormat::InlineTags).unwrap();
        prop_assert_eq!(back.actions, set);
    }

    #[test]
    fn exclusion_groups_reject(text in sentence(), ps in positions(), group in 0usize..3) {
        invariants::exclusion_rejected(&text, &ps, group)?;
    }

    #[test]
    fn unknown_actions_strict_vs_lenient(text in sentence(), ps in positions(), bogus in "[A-Z][a-z]{3,8} [A-Z][a-z]{3,8}") {
        let schema = load_schema();
        prop_assume!(schema.get(&bogus).is_none());
        let set = set_from_positions(&ps);
        let raw = format!(
            "{{\"text\": {}, \"face\": {}, \"body\": {}, \"voice\": {}}}",
            serde_json::to_string(&text).unwrap(),
            serde_json::to_string(&[set.face.clone(), vec![bogus.clone()]].concat()).unwrap(),
            serde_json::to_string(&set.body).unwrap(),
            serde_json::to_string(&set.voice).unwrap(),
        );
        let strict = parse_annotated_with(schema, &raw, MarkupFormat::StructuredJson, ParseOptions::default());
        prop_assert_eq!(strict.unwrap_err(), MarkupError::UnknownAction(bogus.clone()));
        let lenient = parse_annotated_with(schema, &raw, MarkupFormat::StructuredJson, ParseOptions { lenient: true }).unwrap();
        prop_assert_eq!(lenient.actions, set);
        prop_assert_eq!(lenient.warnings.len(), 1);
    }

    #[test]
    fn behavior_script_orders_by_modality(text in sentence(), ps in positions(), turn in 0usize..10) {
        let set = set_from_positions(&ps);
        let raw = serialize_annotation(&text, &set, MarkupFormat::StructuredJson);
        let u = parse_annotated(&raw, MarkupFormat::StructuredJson).unwrap().into_utterance(Speaker::Personality, turn);
        let script = compile_behavior_script(&u).unwrap();
        prop_assert_eq!(script.turn_index, turn);
        prop_assert_eq!(script.events.len(), set.len());
        let names: Vec<&str> = script.events.iter().map(|e| e.action.as_str()).collect();
        let want: Vec<&str> = set.iter().collect();
        prop_assert_eq!(names, want);
        prop_assert!(script.events.windows(2).all(|w| w[0].modality <= w[1].modality));
        prop_assert!(script.events.iter().all(|e| e.start == EventStart::Immediate));
    }
}

#[test]
fn json_schema_file_matches_action_schema() {
    let src = include_str!("../data/structured_markup.schema.json");
    let doc: serde_json::Value = serde_json::from_str(src).unwrap();
    assert_eq!(doc["required"], serde_json::json!(["text"]));
    let schema = load_schema();
    for m in Modality::ALL {
        let listed: Vec<&str> = doc["properties"][m.as_str()]["items"]["enum"]
            .as_array()
            .unwrap()
            .iter()
            .map(|v| v.as_str().unwrap())
            .collect();
        let want: Vec<&str> = schema.by_modality(m).map(|a| a.name).collect();
        assert_eq!(listed, want, "{}", m.as_str());
    }
}

// ---------------------------------------------------------------------------
// prompts

proptest! {
    #![proptest_config(config())]

    #[test]
    fn annotated_prompt_lists_every_action(seed in any::<u64>(), ext in any::<bool>(), nego in any::<bool>(), personality_side in any::<bool>()) {
        invariants::prompt_covers_all_actions(seed, ext, nego, personality_side)?;
    }

    #[test]
    fn trait_content_is_separated(seed in any::<u64>(), nego in any::<bool>(), annotate in any::<bool>()) {
        let cfg = PersonaConfig::default();
        let kind = if nego { ScenarioKind::Negotiation } else { ScenarioKind::IceBreaking };
        let catalog = DescriptionCatalog::bundled();
        let schema = load_schema();
        let opts = PromptOptions { seed, annotate, ..PromptOptions::default() };
        let ext = cfg.profile(Personality::Extrovert);
        let int = cfg.profile(Personality::Introvert);
        let build = |profile: &PersonalityProfile, side| {
            build_system_prompt(profile, cfg.scenario(kind), schema, &catalog, side, &opts).unwrap()
        };
        let pe = build(&ext, Speaker::Personality);
        let pi = build(&int, Speaker::Personality);
        let pg = build(&PersonalityProfile::generic(), Speaker::Generic);
        prop_assert!(pe.contains(&ext.trait_definition) && !pe.contains(&int.trait_definition));
        prop_assert!(pi.contains(&int.trait_definition) && !pi.contains(&ext.trait_definition));
        prop_assert!(!pg.contains(&ext.trait_definition) && !pg.contains(&int.trait_definition));
        for hint in ext.behavioral_guidance.values() {
            prop_assert!(!pi.contains(hint.as_str()) && !pg.contains(hint.as_str()));
        }
        for hint in int.behavioral_guidance.values() {
            prop_assert!(!pe.contains(hint.as_str()) && !pg.contains(hint.as_str()));
        }
        let lists_actions = pe.contains("- Make Eye Contact: ");
        prop_assert_eq!(lists_actions, annotate);
    }
}

// ---------------------------------------------------------------------------
// simulation

proptest! {
    #![proptest_config(config())]

    #[test]
    fn dialogues_respect_caps_and_turn_taking(
        replies in prop::collection::vec(reply(), 1..24),
        nego in any::<bool>(),
        ext in any::<bool>(),
        seed in any::<u64>(),
    ) {
        invariants::dialogue_protocol(replies, nego, ext, seed)?;
    }
}

// ---------------------------------------------------------------------------
// statistics

fn sample(max: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-50.0f64..50.0, 2..max)
}

fn not_flat(xs: &[f64]) -> bool {
    xs.iter().any(|x| (x - xs[0]).abs() > 1e-6)
}

fn table(rows: usize, cols: usize) -> impl Strategy<Value = Vec<Vec<u64>>> {
    prop::collection::vec(prop::collection::vec(1u64..200, cols), rows)
}

#[test]
fn special_functions_match_quadrature_on_grid() {
    let beta = common::beta_grid();
    let gamma = common::gamma_grid();
    assert_eq!((beta.len(), gamma.len()), (50, 50));
    for (a, b, x) in beta {
        let want = common::inc_beta_by_quadrature(a, b, x);
        assert!((reg_inc_beta(a, b, x) - want).abs() < 1e-8, "I_{x}({a}, {b})");
    }
    for (s, x) in gamma {
        let want = common::lower_gamma_by_quadrature(s, x);
        assert!((reg_lower_gamma(s, x) - want).abs() < 1e-8, "P({s}, {x})");
    }
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn welch_matches_textbook_oracle(a in sample(40), b in sample(40)) {
        prop_assume!(not_flat(&a) || not_flat(&b));
        let mine = welch_t_test(&a, &b).unwrap();
        let o = common::welch_oracle(&a, &b);
        prop_assert!(rel_err(mine.t, o.t) < 1e-9, "t {} vs {}", mine.t, o.t);
        prop_assert!(rel_err(mine.df, o.df) < 1e-9, "df {} vs {}", mine.df, o.df);
        prop_assert!((mine.p_two_sided - o.p).abs() < 1e-9, "p {} vs {}", mine.p_two_sided, o.p);
        prop_assert!(rel_err(mine.cohens_d, o.d) < 1e-9);
    }

    #[test]
    fn welch_is_antisymmetric(a in sample(30), b in sample(30)) {
        prop_assume!(not_flat(&a) || not_flat(&b));
        let ab = welch_t_test(&a, &b).unwrap();
        let ba = welch_t_test(&b, &a).unwrap();
        prop_assert!((ab.t + ba.t).abs() < 1e-9 * ab.t.abs().max(1.0));
        prop_assert!((ab.cohens_d + ba.cohens_d).abs() < 1e-9 * ab.cohens_d.abs().max(1.0));
        prop_assert!((ab.p_two_sided - ba.p_two_sided).abs() < 1e-12);
        prop_assert!((ab.df - ba.df).abs() < 1e-9 * ab.df);
        prop_assert!((0.0..=1.0).contains(&ab.p_two_sided));
    }

    #[test]
    fn t_tests_ignore_location_and_scale(a in sample(30), b in sample(30), shift in -100.0f64..100.0, scale in 0.1f64..10.0) {
        prop_assume!(not_flat(&a) || not_flat(&b));
        let tr = |xs: &[f64]| xs.iter().map(|x| x * scale + shift).collect::<Vec<_>>();
        for test in [welch_t_test, student_t_test] {
            let base = test(&a, &b).unwrap();
            let moved = test(&tr(&a), &tr(&b)).unwrap();
            prop_assert!(rel_err(moved.t, base.t) < 1e-6);
            prop_assert!(rel_err(moved.cohens_d, base.cohens_d) < 1e-6);
            prop_assert!((moved.p_two_sided - base.p_two_sided).abs() < 1e-6);
        }
    }

    #[test]
    fn chi_square_2x2_closed_form(t in table(2, 2)) {
        let r = chi_square(&t, false).unwrap();
        let want = common::chi2_2x2_closed_form(t[0][0] as f64, t[0][1] as f64, t[1][0] as f64, t[1][1] as f64);
        prop_assert!(rel_err(r.chi2, want) < 1e-9);
        prop_assert_eq!(r.df, 1);
        let yates = chi_square(&t, true).unwrap();
        prop_assert!(yates.chi2 <= r.chi2 + 1e-12);
        prop_assert!(yates.p >= r.p - 1e-12);
    }

    #[test]
    fn chi_square_invariant_under_permutation(t in table(3, 4), rot in 0usize..3, swap in 0usize..4) {
        let base = chi_square(&t, false).unwrap();
        let mut rows = t.clone();
        rows.rotate_left(rot);
        for r in &mut rows {
            r.swap(0, swap);
        }
        let permuted = chi_square(&rows, false).unwrap();
        prop_assert!(rel_err(permuted.chi2, base.chi2) < 1e-9);
        let transposed: Vec<Vec<u64>> = (0..4).map(|j| t.iter().map(|r| r[j]).collect()).collect();
        let tr = chi_square(&transposed, false).unwrap();
        prop_assert!(rel_err(tr.chi2, base.chi2) < 1e-9);
        prop_assert_eq!(tr.df, base.df);
    }

    #[test]
    fn chi_square_scales_with_counts(t in table(2, 3), k in 2u64..20) {
        let base = chi_square(&t, false).unwrap();
        let scaled: Vec<Vec<u64>> = t.iter().map(|r| r.iter().map(|x| x * k).collect()).collect();
        let big = chi_square(&scaled, false).unwrap();
        prop_assert!(rel_err(big.chi2, base.chi2 * k as f64) < 1e-9);
        prop_assert!(big.p <= base.p + 1e-15);
    }

    #[test]
    fn incomplete_beta_matches_quadrature(a in 3.0f64..25.0, b in 3.0f64..25.0, x in 0.001f64..0.999) {
        let want = common::inc_beta_by_quadrature(a, b, x);
        prop_assert!((reg_inc_beta(a, b, x) - want).abs() < 1e-8, "I_{x}({a},{b})");
        // reflection
        prop_assert!((reg_inc_beta(a, b, x) + reg_inc_beta(b, a, 1.0 - x) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn lower_gamma_matches_quadrature(s in 3.0f64..30.0, x in 0.05f64..80.0) {
        let want = common::lower_gamma_by_quadrature(s, x);
        prop_assert!((reg_lower_gamma(s, x) - want).abs() < 1e-8, "P({s},{x})");
    }

    #[test]
    fn chi2_sf_is_monotone(df in 1usize..12, x in 0.0f64..50.0, dx in 0.01f64..5.0) {
        let (lo, hi) = (chi2_sf(x, df as f64), chi2_sf(x + dx, df as f64));
        prop_assert!(hi <= lo && (0.0..=1.0).contains(&hi));
    }
}

// ---------------------------------------------------------------------------
// lexicon

fn demo_vocab() -> Vec<String> {
    let src = Lexicon::demo_source();
    let mut sections = 0;
    let mut words = Vec::new();
    for line in src.lines() {
        if line.trim() == "%" {
            sections += 1;
            continue;
        }
        if sections >= 2 {
            if let Some((pat, _)) = line.split_once('\t') {
                words.push(pat.trim().trim_end_matches('*').to_string());
            }
        }
    }
    words.extend(["zebra", "table", "purple", "quietly"].map(String::from));
    words
}

fn text_from(vocab: &[String]) -> impl Strategy<Value = String> {
    let vocab = vocab.to_vec();
    prop::collection::vec(prop::sample::select(vocab), 1..40).prop_map(|ws| ws.join(" "))
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn percentages_are_bounded_and_length_free(text in text_from(&demo_vocab()), k in 2usize..5) {
        let lex = Lexicon::demo();
        let one = lexicon::score(&text, &lex).unwrap();
        let repeated = lexicon::score(&vec![text.as_str(); k].join(" "), &lex).unwrap();
        prop_assert_eq!(repeated.word_count, k * one.word_count);
        for (c, v) in &one.percentages {
            prop_assert!((0.0..=100.0).contains(v));
            prop_assert!((repeated.get(c) - v).abs() < 1e-9);
        }
    }

    #[test]
    fn adding_a_category_word_never_lowers_it(words in prop::collection::vec(prop::sample::select(vec!["apple", "antler", "bee", "cat", "dog"]), 1..30), extra in 0usize..3) {
        let lex = Lexicon::from_patterns(&[("a", &["apple", "ant*"]), ("b", &["bee"]), ("ab", &["apple", "bee"])]).unwrap();
        let text = words.join(" ");
        let before = lexicon::score(&text, &lex).unwrap();
        let added = ["apple", "bee", "cat"][extra];
        let after = lexicon::score(&format!("{text} {added}"), &lex).unwrap();
        for c in ["a", "b", "ab"] {
            let hit = !lex.match_token(added).is_empty()
                && lex.match_token(added).contains(&lex.categories().iter().position(|x| x.id == c).unwrap());
            if hit {
                prop_assert!(after.get(c) >= before.get(c));
            } else {
                prop_assert!(after.get(c) <= before.get(c));
            }
        }
    }

    #[test]
    fn categories_are_scored_independently(text in text_from(&demo_vocab()), drop in 0usize..40) {
        let lex = Lexicon::demo();
        let ids: Vec<String> = lex.categories().iter().map(|c| c.id.clone()).collect();
        let gone = &ids[drop % ids.len()];
        let full = lexicon::score(&text, &lex).unwrap();
        let partial = lexicon::score(&text, &lex.without_category(gone)).unwrap();
        prop_assert_eq!(partial.percentages.len(), full.percentages.len() - 1);
        for (c, v) in &partial.percentages {
            prop_assert_eq!(*v, full.get(c));
        }
    }
}
