use criterion::{black_box, criterion_group, criterion_main, Criterion};

use radx_core::eval::{evaluate, metrics_boolean, DEFAULT_TOLERANCE_MM};
use radx_core::form_parser::{extract_form, render_filled_form};
use radx_core::normalize::{canonical_answers, postprocess};
use radx_core::prompting::{builtin_template, render_prompt};
use radx_core::schema::{question_schema, StructuredRecord};
use radx_core::synthcorpus::{
    generate_corpus, oracle_response, GenConfig, LanguageStyle, NoiseMap,
};
use radx_core::{BuiltinTemplate, DensityPriority};

fn bench_render(c: &mut Criterion) {
    let (report, _) = generate_corpus(&GenConfig::new(1, 1)).unwrap().remove(0);
    let template = builtin_template(BuiltinTemplate::Pmk);
    c.bench_function("render_prompt/pmk", |b| {
        b.iter(|| render_prompt(black_box(&report), black_box(&template)))
    });
}

fn bench_extract_form(c: &mut Criterion) {
    let (_, gold) = generate_corpus(&GenConfig::new(2, 1)).unwrap().remove(0);
    let schema = question_schema();
    let plain = render_filled_form(&canonical_answers(&gold.findings));
    let chatty = oracle_response(
        &gold.report_id,
        &gold.findings,
        &NoiseMap::new(),
        0,
        LanguageStyle::Chatty,
    );
    let mut shuffled: Vec<&str> = plain.lines().collect();
    shuffled.reverse();
    let unnumbered: String = shuffled
        .iter()
        .map(|l| l.split_once(". ").map_or(*l, |(_, rest)| rest))
        .collect::<Vec<_>>()
        .join("\n");
    let mut group = c.benchmark_group("extract_form");
    for (name, text) in [
        ("plain", &plain),
        ("chatty", &chatty),
        ("fuzzy", &unnumbered),
    ] {
        group.bench_function(name, |b| {
            b.iter(|| extract_form(black_box(text), &schema).unwrap())
        });
    }
    group.finish();
}

fn bench_postprocess(c: &mut Criterion) {
    let (_, gold) = generate_corpus(&GenConfig::new(3, 1)).unwrap().remove(0);
    let text = render_filled_form(&canonical_answers(&gold.findings));
    let mut form = extract_form(&text, &question_schema()).unwrap();
    form.report_id = gold.report_id.clone();
    c.bench_function("postprocess", |b| {
        b.iter(|| postprocess(black_box(&form), DensityPriority::default()))
    });
}

fn bench_metrics(c: &mut Criterion) {
    let pairs = generate_corpus(&GenConfig::new(4, 1000)).unwrap();
    let golds: Vec<_> = pairs.iter().map(|(_, g)| g.clone()).collect();
    let records: Vec<StructuredRecord> = golds
        .iter()
        .map(|g| StructuredRecord::new(g.report_id.clone(), g.findings.clone(), vec![]).unwrap())
        .collect();
    let preds: Vec<bool> = golds.iter().map(|g| g.findings.spiculation).collect();
    let truth: Vec<bool> = golds.iter().map(|g| g.findings.lobulation).collect();
    c.bench_function("metrics_boolean/1000", |b| {
        b.iter(|| metrics_boolean(black_box(&preds), black_box(&truth)).unwrap())
    });
    c.bench_function("evaluate/1000", |b| {
        b.iter(|| evaluate(black_box(&records), black_box(&golds), DEFAULT_TOLERANCE_MM).unwrap())
    });
}

criterion_group!(
    benches,
    bench_render,
    bench_extract_form,
    bench_postprocess,
    bench_metrics
);
criterion_main!(benches);
