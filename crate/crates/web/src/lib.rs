//! Browser bindings for the demo page. Every export takes plain strings or
//! numbers and returns a JSON string; failures come back as `{"error": ...}`.

use nvpersona::analysis::ClassifierBinding;
use nvpersona::lexicon::{self, Lexicon};
use nvpersona::schema::{
    compile_behavior_script, load_schema, parse_annotated_with, MarkupFormat, ParseOptions,
    Speaker,
};
use nvpersona::stats::{chi_square, t_test, TTestVariant};
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

fn respond(result: Result<Value, String>) -> String {
    match result {
        Ok(v) => v.to_string(),
        Err(e) => json!({ "error": e }).to_string(),
    }
}

/// Parses a marked-up utterance (JSON object or inline `(Action)` tags) into
/// its spoken text, canonical action lists and behavior script.
pub fn markup_to_script(raw: &str, lenient: bool) -> Result<Value, String> {
    let format = if raw.trim_start().starts_with('{') {
        MarkupFormat::StructuredJson
    } else {
        MarkupFormat::InlineTags
    };
    let ann = parse_annotated_with(load_schema(), raw, format, ParseOptions { lenient })
        .map_err(|e| e.to_string())?;
    let warnings = ann.warnings.clone();
    let utterance = ann.into_utterance(Speaker::Personality, 0);
    let script = compile_behavior_script(&utterance).map_err(|e| e.to_string())?;
    Ok(json!({
        "format": format,
        "text": utterance.text,
        "actions": utterance.actions,
        "script": script,
        "warnings": warnings,
    }))
}

/// Category percentages from the bundled demo lexicon plus the offline
/// extraversion baseline label.
pub fn score(text: &str) -> Result<Value, String> {
    let lex = Lexicon::demo();
    let fv = lexicon::score(text, &lex).map_err(|e| e.to_string())?;
    let baseline = ClassifierBinding::default().build();
    let label = baseline.classify(text).map_err(|e| e.to_string())?;
    let categories: Vec<Value> = lex
        .categories()
        .iter()
        .map(|c| json!({ "id": c.id, "name": c.name, "percent": fv.get(&c.id) }))
        .collect();
    Ok(json!({
        "word_count": fv.word_count,
        "sentence_count": fv.sentence_count,
        "categories": categories,
        "baseline": { "classifier": baseline.descriptor(), "extravert": label },
    }))
}

/// Chi-square test on a 2x2 table, with and without Yates' correction.
pub fn chi_square_2x2(a: u32, b: u32, c: u32, d: u32) -> Result<Value, String> {
    let table = vec![vec![u64::from(a), u64::from(b)], vec![u64::from(c), u64::from(d)]];
    let yates = chi_square(&table, true).map_err(|e| e.to_string())?;
    let plain = chi_square(&table, false).map_err(|e| e.to_string())?;
    Ok(json!({
        "df": yates.df,
        "expected": yates.expected,
        "yates": { "chi2": yates.chi2, "p": yates.p },
        "uncorrected": { "chi2": plain.chi2, "p": plain.p },
    }))
}

fn numbers(s: &str) -> Result<Vec<f64>, String> {
    s.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<f64>().map_err(|_| format!("not a number: {t:?}")))
        .collect()
}

/// Two-sample t-test on comma or whitespace separated numbers.
pub fn t_test_lists(a: &str, b: &str, student: bool) -> Result<Value, String> {
    let variant = if student { TTestVariant::Student } else { TTestVariant::Welch };
    let r = t_test(&numbers(a)?, &numbers(b)?, variant).map_err(|e| e.to_string())?;
    serde_json::to_value(r).map_err(|e| e.to_string())
}

#[wasm_bindgen(js_name = parseMarkup)]
pub fn parse_markup_js(raw: &str, lenient: bool) -> String {
    respond(markup_to_script(raw, lenient))
}

#[wasm_bindgen(js_name = scoreText)]
pub fn score_text_js(text: &str) -> String {
    respond(score(text))
}

#[wasm_bindgen(js_name = chiSquare2x2)]
pub fn chi_square_js(a: u32, b: u32, c: u32, d: u32) -> String {
    respond(chi_square_2x2(a, b, c, d))
}

#[wasm_bindgen(js_name = tTest)]
pub fn t_test_js(a: &str, b: &str, student: bool) -> String {
    respond(t_test_lists(a, b, student))
}

/// The 29 action names by modality, for the page's cheat sheet.
#[wasm_bindgen(js_name = actionList)]
pub fn action_list_js() -> String {
    let schema = load_schema();
    let rows: Vec<Value> = schema
        .actions()
        .iter()
        .map(|a| json!({ "name": a.name, "modality": a.modality, "polarity": a.polarity }))
        .collect();
    Value::Array(rows).to_string()
}
