use radx_core::prompting::{builtin_template, load_template, render_prompt, BuiltinTemplate};
use radx_core::schema::{question_schema, Report};

const DEFAULT_FALSE: &str =
    "Set the answer to False by default for questions not mentioned in the CT report.";
const FIRST_TUMOR: &str = "If the CT report describes more than one tumor, extract the structured information of the first tumor described in the CT report only.";

fn fixture_lines() -> Vec<String> {
    include_str!("fixtures/pmk_knowledge.txt")
        .lines()
        .map(str::to_owned)
        .collect()
}

fn report() -> Report {
    Report::new("R7", "Nodule in the right upper lobe, 1.2 x 0.8 cm.").unwrap()
}

#[test]
fn pmk_body_ends_with_knowledge_instructions_in_order() {
    let body = render_prompt(&report(), &builtin_template(BuiltinTemplate::Pmk)).body;
    let knowledge = fixture_lines();
    assert_eq!(knowledge.len(), 6);
    let lines: Vec<&str> = body.lines().collect();
    let tail: Vec<String> = lines[lines.len() - 6..]
        .iter()
        .map(|s| s.to_string())
        .collect();
    assert_eq!(tail, knowledge);
    assert_eq!(body.matches(FIRST_TUMOR).count(), 1);
    assert!(body.contains(DEFAULT_FALSE));
}

#[test]
fn base_has_default_false_rule_and_no_knowledge() {
    let body = render_prompt(&report(), &builtin_template(BuiltinTemplate::Base)).body;
    assert!(body.contains(DEFAULT_FALSE));
    assert!(!body.contains(FIRST_TUMOR));
    for line in fixture_lines() {
        assert!(!body.contains(&line));
    }
}

#[test]
fn both_templates_list_every_question_in_order() {
    for variant in [BuiltinTemplate::Base, BuiltinTemplate::Pmk] {
        let body = render_prompt(&report(), &builtin_template(variant)).body;
        let mut cursor = 0;
        for q in question_schema() {
            let line = format!("{}. {}: ____", q.id.get(), q.text);
            let at = body[cursor..]
                .find(&line)
                .unwrap_or_else(|| panic!("missing {line}"));
            cursor += at + line.len();
        }
        let report_at = body.find(&report().text).unwrap();
        assert!(report_at < body.find("1. ").unwrap());
    }
}

#[test]
fn shipped_template_files_load() {
    let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/templates");
    for variant in [BuiltinTemplate::Base, BuiltinTemplate::Pmk] {
        let loaded = load_template(format!("{dir}/{}.txt", variant.name())).unwrap();
        assert_eq!(loaded, builtin_template(variant));
    }
}
