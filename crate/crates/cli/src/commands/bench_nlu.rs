use std::path::Path;
use std::sync::Mutex;

use anyhow::{anyhow, Context, Result};
use nlsql_core::evaluation::{
    aggregate_nlu, bleu, judge_score, keyword_f1, rouge, CalibrationModel, NluItemRecord, Prf,
};
use nlsql_core::llm::{LanguageModel, LlmCall, RecordingModel};
use nlsql_core::template::{PromptTemplate, JUDGE_RUBRIC};
use nlsql_core::uqu::{load_nlu_records, understand, NluRecord, Split, UquOptions, UserQuestion};
use rayon::prelude::*;

use super::{calls_cost, uqu_template, usage_of, write_file};
use crate::config::AppConfig;
use crate::runtime::Clients;
use crate::CommonArgs;

struct Scorer<'a> {
    uqu: &'a dyn LanguageModel,
    judge: Option<&'a dyn LanguageModel>,
    template: PromptTemplate,
    rubric: PromptTemplate,
    options: UquOptions,
    judge_model: String,
    record_timings: bool,
}

fn recording<'a>(
    inner: &'a dyn LanguageModel,
    stage: &str,
    log: &'a Mutex<Vec<LlmCall>>,
    timings: bool,
) -> RecordingModel<'a, dyn LanguageModel + 'a> {
    let m = RecordingModel::new(inner, stage, log);
    if timings {
        m
    } else {
        m.without_latency()
    }
}

fn score_record(s: &Scorer<'_>, index: usize, record: &NluRecord) -> (NluItemRecord, Vec<LlmCall>) {
    let log = Mutex::new(Vec::new());
    let mut item = NluItemRecord {
        index,
        question: record.question.clone(),
        bleu1: 0.0,
        bleu2: 0.0,
        rouge1: 0.0,
        rouge2: 0.0,
        rouge_l: 0.0,
        keyword: Prf::default(),
        judge_raw: None,
        error: None,
        usage: Default::default(),
    };
    let outcome = (|| -> Result<()> {
        let question =
            UserQuestion::new(&record.question, record.hint.clone(), record.db_id.clone().unwrap_or_default())?;
        let u = understand(&question, &recording(s.uqu, "uqu", &log, s.record_timings), &s.template, &s.options)?;
        let pred = u.decomposition.as_text();
        let gold = record.decomposition.as_text();
        item.keyword = keyword_f1(&u.keywords, &record.keywords);
        item.bleu1 = bleu(&pred, &gold, 1)?;
        item.bleu2 = bleu(&pred, &gold, 2)?;
        let r = rouge(&pred, &gold)?;
        item.rouge1 = r.rouge1;
        item.rouge2 = r.rouge2;
        item.rouge_l = r.rouge_l;
        if let Some(judge) = s.judge {
            let judge = recording(judge, "judge", &log, s.record_timings);
            match judge_score(&judge, &u.decomposition, &record.decomposition, &s.rubric, &s.judge_model) {
                Ok(j) => item.judge_raw = Some(j.raw),
                Err(e) => log::warn!("item {index}: judge failed: {e}"),
            }
        }
        Ok(())
    })();
    if let Err(e) = outcome {
        item.error = Some(format!("{e:#}"));
    }
    let calls = log.into_inner().unwrap_or_default();
    item.usage = usage_of(&calls);
    (item, calls)
}

pub fn run(
    app: &AppConfig,
    common: &CommonArgs,
    records: &Path,
    split: &str,
    out: &Path,
    with_judge: bool,
) -> Result<i32> {
    let config = &app.pipeline;
    let split: Split = split.parse().map_err(|e: String| anyhow!(e))?;
    let load = load_nlu_records(records)?;
    for e in &load.errors {
        log::warn!("record {} skipped: {}", e.index, e.message);
    }
    let selected: Vec<&NluRecord> = load.split(split).collect();
    if common.dry_run {
        println!(
            "{} records in split ({} skipped as malformed); no model calls made",
            selected.len(),
            load.errors.len()
        );
        return Ok(0);
    }
    let clients = Clients::build(config, common.mock.as_deref())?;
    let judge = if with_judge { clients.judge.as_deref() } else { None };
    let scorer = Scorer {
        uqu: clients.uqu.as_ref(),
        judge,
        template: uqu_template(),
        rubric: PromptTemplate::new(JUDGE_RUBRIC, &["candidate", "reference"])?,
        options: UquOptions {
            model: config.uqu.model.clone(),
            temperature: config.temperature,
            max_tokens: config.max_tokens,
        },
        judge_model: config.judge.model.clone(),
        record_timings: config.record_timings,
    };
    let pool =
        rayon::ThreadPoolBuilder::new().num_threads(config.workers).build().context("cannot start worker pool")?;
    let scored: Vec<(NluItemRecord, Vec<LlmCall>)> =
        pool.install(|| selected.par_iter().enumerate().map(|(i, r)| score_record(&scorer, i, r)).collect());
    let costs: Vec<Option<f64>> = scored.iter().map(|(_, c)| calls_cost(config, c)).collect();
    let items: Vec<NluItemRecord> = scored.into_iter().map(|(i, _)| i).collect();
    let report = aggregate_nlu(&items, &CalibrationModel::default(), &costs);
    write_file(&out.join("report.json"), &report.to_json())?;
    write_file(&out.join("report.txt"), &report.to_text_table())?;
    print!("{}", report.to_text_table());
    println!("Report: {}", out.join("report.json").display());
    Ok(0)
}
