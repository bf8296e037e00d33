//! Pipeline stages. Each reads its upstream artifact from the run
//! directory and writes its own; outputs depend only on inputs and options.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use attrag_core::attribution::{
    attribute_post_generation, default_thresholds, enumerate_weights, rank_rows, AttributionConfig, GridCase,
    GridRow, PreparedGrid,
};
use attrag_core::corpus::{build_query, corpus_stats, Summary};
use attrag_core::embedding::{embed, rank_sentences, EmbedInput};
use attrag_core::evaluation::{
    factuality, overall, relevance_with, retrieval_eval, EvaluationError, ExternalScorer, RelevanceReport,
};
use attrag_core::generation::{generate_valid, GenerationConfig, GenerationError, Generated, PromptSpec};
use attrag_core::truncation::PassThrough;
use attrag_core::{CaseStudy, Dataset, EmbeddingProvider, QueryMode, Strategy, VectorIndex};
use rayon::prelude::*;

use crate::artifacts::*;
use crate::embeddings::{write_embeddings, ProviderSpec};
use crate::error::{Error, Result};
use crate::io::{load_dataset, read_json, write_json, write_text};
use crate::llm::EndpointSpec;
use crate::scorers::HttpScorer;

/// Runs `f` on a pool of `jobs` threads (0 picks the rayon default).
fn with_jobs<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

fn case_error(case: &CaseStudy, e: impl std::fmt::Display) -> Error {
    Error::Case {
        case_id: case.case_id.clone(),
        message: e.to_string(),
    }
}

#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct ValidationReport {
    pub split: attrag_core::Split,
    pub cases: usize,
    pub sentences: usize,
    pub labeled_cases: usize,
}

pub fn validate(dataset: &Path) -> Result<ValidationReport> {
    let d = load_dataset(dataset)?;
    Ok(ValidationReport {
        split: d.split,
        cases: d.cases.len(),
        sentences: d.cases.iter().map(|c| c.sentences.len()).sum(),
        labeled_cases: d.cases.iter().filter(|c| c.is_labeled()).count(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum StatsFormat {
    Csv,
    Table,
}

pub fn stats(dataset: &Path, format: StatsFormat, per_case: bool) -> Result<String> {
    let d = load_dataset(dataset)?;
    let report = corpus_stats(&d.cases)?;
    let rows = |s: &Summary| {
        [
            ("count", s.count as f64),
            ("min", s.min),
            ("q1", s.q1),
            ("median", s.median),
            ("q3", s.q3),
            ("max", s.max),
            ("mean", s.mean),
        ]
    };
    let mut out = String::new();
    match format {
        StatsFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            if per_case {
                w.write_record(["case_id", "sentences", "tokens"])?;
                for c in &report.per_case {
                    w.write_record([c.case_id.clone(), c.sentences.to_string(), c.tokens.to_string()])?;
                }
            } else {
                w.write_record(["statistic", "sentences_per_case", "tokens_per_sentence"])?;
                for ((name, a), (_, b)) in rows(&report.sentence_counts).into_iter().zip(rows(&report.sentence_lengths)) {
                    w.write_record([name.to_string(), a.to_string(), b.to_string()])?;
                }
            }
            let bytes = w.into_inner().map_err(|e| Error::Config(e.to_string()))?;
            out.push_str(&String::from_utf8_lossy(&bytes));
        }
        StatsFormat::Table => {
            out.push_str(&format!("{:<10}{:>20}{:>22}\n", "statistic", "sentences/case", "tokens/sentence"));
            for ((name, a), (_, b)) in rows(&report.sentence_counts).into_iter().zip(rows(&report.sentence_lengths)) {
                out.push_str(&format!("{name:<10}{a:>20.2}{b:>22.2}\n"));
            }
            if per_case {
                out.push('\n');
                for c in &report.per_case {
                    out.push_str(&format!("{:<24}{:>8}{:>8}\n", c.case_id, c.sentences, c.tokens));
                }
            }
        }
    }
    Ok(out)
}

/// Precomputes embeddings for every note sentence and every query form,
/// producing a file usable with `--embedding file:<path>`.
pub fn index(dataset: &Path, embedding: &ProviderSpec, out: &Path) -> Result<usize> {
    let d = load_dataset(dataset)?;
    let provider = embedding.open()?;
    let queries: Vec<String> = d
        .cases
        .iter()
        .flat_map(|c| QueryMode::ALL.iter().map(move |m| build_query(c, *m)))
        .collect();
    write_embeddings(out, provider.as_ref(), &d.cases, queries.iter().map(String::as_str))
}

pub struct RetrieveOptions {
    pub dataset: PathBuf,
    pub out: PathBuf,
    pub embedding: String,
    pub strategy: String,
    pub query_mode: QueryMode,
    pub jobs: usize,
    pub seed: u64,
}

fn retrieve_case(
    case: &CaseStudy,
    provider: &dyn EmbeddingProvider,
    strategy: &Strategy,
    mode: QueryMode,
) -> Result<RetrievalRecord> {
    let index = VectorIndex::build(std::iter::once(case), provider).map_err(|e| case_error(case, e))?;
    let query = build_query(case, mode);
    let qv = embed(provider, EmbedInput::Text(&query)).map_err(|e| case_error(case, e))?;
    let ranked = rank_sentences(case, &qv, &index).map_err(|e| case_error(case, e))?;
    let result = strategy
        .apply(&ranked, case, &query, &PassThrough)
        .map_err(|e| case_error(case, e))?;
    Ok(RetrievalRecord {
        case_id: case.case_id.clone(),
        ranked,
        kept_ids: result.kept_ids,
        cut_index: result.cut_index,
        diagnostics: result.diagnostics,
    })
}

pub fn retrieve(opts: &RetrieveOptions) -> Result<RetrievalArtifact> {
    let strategy: Strategy = opts.strategy.parse()?;
    let d = load_dataset(&opts.dataset)?;
    let provider = opts.embedding.parse::<ProviderSpec>()?.open()?;
    let records: Vec<RetrievalRecord> = with_jobs(opts.jobs, || {
        d.cases
            .par_iter()
            .map(|c| retrieve_case(c, provider.as_ref(), &strategy, opts.query_mode))
            .collect::<Result<Vec<_>>>()
    })??;
    let evaluation = if d.cases.iter().all(CaseStudy::is_labeled) {
        let kept: BTreeMap<String, attrag_core::TruncationResult> = records
            .iter()
            .map(|r| {
                (
                    r.case_id.clone(),
                    attrag_core::TruncationResult {
                        kept_ids: r.kept_ids.clone(),
                        cut_index: r.cut_index,
                        strategy: strategy.to_string(),
                        diagnostics: BTreeMap::new(),
                    },
                )
            })
            .collect();
        Some(retrieval_eval(&d.cases, &kept)?)
    } else {
        None
    };
    let artifact = RetrievalArtifact {
        strategy: strategy.to_string(),
        query_mode: opts.query_mode,
        embedding: opts.embedding.clone(),
        seed: opts.seed,
        cases: records,
        evaluation,
    };
    write_json(&opts.out.join(RETRIEVAL), &artifact)?;
    Ok(artifact)
}

pub struct GenerateOptions {
    pub dataset: PathBuf,
    pub out: PathBuf,
    pub endpoint: String,
    pub model: String,
    pub prompt: PromptSpec,
    pub word_limit: usize,
    pub jobs: usize,
}

fn evidence_for<'c>(case: &'c CaseStudy, kept: &[u32]) -> Vec<(u32, &'c str)> {
    // evidence is shown in note order, numbered with the original ids
    let mut ids = kept.to_vec();
    ids.sort_unstable();
    ids.into_iter()
        .filter_map(|id| case.sentence(id).map(|s| (id, s.text.as_str())))
        .collect()
}

fn lookup<'d>(d: &'d Dataset, case_id: &str) -> Result<&'d CaseStudy> {
    d.case(case_id).ok_or_else(|| Error::Case {
        case_id: case_id.to_string(),
        message: "not in dataset".into(),
    })
}

pub fn generate(opts: &GenerateOptions) -> Result<GenerationArtifact> {
    let spec: EndpointSpec = opts.endpoint.parse()?;
    opts.prompt.validate()?;
    let d = load_dataset(&opts.dataset)?;
    let retrieval: RetrievalArtifact = read_json(&opts.out.join(RETRIEVAL))?;
    let client = spec.open()?;
    let config = GenerationConfig {
        model: opts.model.clone(),
        word_limit: opts.word_limit,
    };
    let run = |r: &RetrievalRecord| -> Result<(GenerationRecord, Option<GenerationError>)> {
        let case = lookup(&d, &r.case_id)?;
        let evidence = evidence_for(case, &r.kept_ids);
        let evidence_ids = evidence.iter().map(|(id, _)| *id).collect();
        Ok(match generate_valid(client.as_ref(), &opts.prompt, &config, case, &evidence) {
            Ok(outcome) => (
                GenerationRecord {
                    case_id: r.case_id.clone(),
                    evidence_ids,
                    output: Some(outcome.output),
                    attempts: outcome.attempts,
                    error: None,
                },
                None,
            ),
            Err(e) => {
                log::warn!("case {}: {e}", r.case_id);
                (
                    GenerationRecord {
                        case_id: r.case_id.clone(),
                        evidence_ids,
                        output: None,
                        attempts: e.attempts().to_vec(),
                        error: Some(e.to_string()),
                    },
                    Some(e),
                )
            }
        })
    };
    // a script is replayed in call order, so it must be consumed sequentially
    let jobs = if matches!(spec, EndpointSpec::Script(_)) { 1 } else { opts.jobs };
    let results: Vec<(GenerationRecord, Option<GenerationError>)> =
        with_jobs(jobs, || retrieval.cases.par_iter().map(run).collect::<Result<Vec<_>>>())??;
    let fatal = results.iter().find_map(|(_, e)| match e {
        Some(e @ (GenerationError::Unreachable { .. } | GenerationError::Client { .. })) => Some(e.clone()),
        _ => None,
    });
    let artifact = GenerationArtifact {
        model: opts.model.clone(),
        endpoint: opts.endpoint.clone(),
        prompt: opts.prompt,
        word_limit: opts.word_limit,
        cases: results.into_iter().map(|(r, _)| r).collect(),
    };
    write_json(&opts.out.join(GENERATION), &artifact)?;
    if let Some(e) = fatal {
        return Err(Error::Generation(e));
    }
    Ok(artifact)
}

pub struct AttributeOptions {
    pub dataset: PathBuf,
    pub out: PathBuf,
    pub embedding: String,
    pub config: AttributionConfig,
    pub jobs: usize,
}

pub fn attribute(opts: &AttributeOptions) -> Result<AttributionArtifact> {
    let d = load_dataset(&opts.dataset)?;
    let generation: GenerationArtifact = read_json(&opts.out.join(GENERATION))?;
    let needs_provider = generation
        .cases
        .iter()
        .any(|c| matches!(c.output, Some(Generated::Uncited { .. })));
    let provider: Option<Arc<dyn EmbeddingProvider>> = if needs_provider {
        Some(opts.embedding.parse::<ProviderSpec>()?.open()?)
    } else {
        None
    };
    let run = |g: &GenerationRecord| -> Result<Option<AttributionRecord>> {
        let Some(output) = &g.output else {
            return Ok(None);
        };
        Ok(Some(match output {
            Generated::Cited { answer } => AttributionRecord {
                case_id: g.case_id.clone(),
                answer: answer.sentences.clone(),
                citations: answer.citations.clone(),
                config: AttributionRunConfig::inline(),
            },
            Generated::Uncited { sentences, .. } => {
                let case = lookup(&d, &g.case_id)?;
                let evidence = evidence_for(case, &g.evidence_ids);
                let sentences: Vec<&str> = sentences.iter().map(String::as_str).collect();
                let provider = provider.as_deref().expect("provider opened for uncited output");
                let answer = attribute_post_generation(&sentences, &evidence, &opts.config, provider)
                    .map_err(|e| case_error(case, e))?;
                AttributionRecord {
                    case_id: g.case_id.clone(),
                    answer: answer.sentences,
                    citations: answer.citations,
                    config: AttributionRunConfig::post_generation(&opts.config),
                }
            }
        }))
    };
    let cases: Vec<Option<AttributionRecord>> =
        with_jobs(opts.jobs, || generation.cases.par_iter().map(run).collect::<Result<Vec<_>>>())??;
    let artifact = AttributionArtifact {
        cases: cases.into_iter().flatten().collect(),
    };
    write_json(&opts.out.join(ATTRIBUTION), &artifact)?;
    Ok(artifact)
}

pub struct EvaluateOptions {
    pub dataset: PathBuf,
    pub out: PathBuf,
    pub embedding: String,
    /// `name=url` external scorers.
    pub external: Vec<String>,
    pub jobs: usize,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn evaluate(opts: &EvaluateOptions) -> Result<EvaluationArtifact> {
    let d = load_dataset(&opts.dataset)?;
    let attribution: AttributionArtifact = read_json(&opts.out.join(ATTRIBUTION))?;
    let provider = opts.embedding.parse::<ProviderSpec>()?.open()?;
    let scorers = opts
        .external
        .iter()
        .map(|s| HttpScorer::parse(s))
        .collect::<Result<Vec<_>>>()?;
    let scorer_refs: Vec<&dyn ExternalScorer> = scorers.iter().map(|s| s as &dyn ExternalScorer).collect();

    let answers: BTreeMap<&str, &AttributionRecord> =
        attribution.cases.iter().map(|r| (r.case_id.as_str(), r)).collect();
    let cited: BTreeMap<String, std::collections::BTreeSet<u32>> = attribution
        .cases
        .iter()
        .map(|r| (r.case_id.clone(), r.citations.iter().flat_map(|c| c.ids.iter().copied()).collect()))
        .collect();
    let fact = factuality(&d.cases, &cited)?;

    let per_case: Vec<CaseEvaluation> = with_jobs(opts.jobs, || {
        d.cases
            .par_iter()
            .map(|case| {
                let text = answers.get(case.case_id.as_str()).map(|r| r.answer.join(" ")).unwrap_or_default();
                let relevance = match relevance_with(&text, case, provider.as_ref(), &scorer_refs) {
                    Ok(r) => Some(r),
                    Err(EvaluationError::NoEssential(_)) => None,
                    Err(e) => return Err(case_error(case, e)),
                };
                Ok(CaseEvaluation {
                    case_id: case.case_id.clone(),
                    cited_ids: cited.get(&case.case_id).map(|s| s.iter().copied().collect()).unwrap_or_default(),
                    relevance,
                })
            })
            .collect::<Result<Vec<_>>>()
    })??;
    let reports: Vec<RelevanceReport> = per_case.iter().filter_map(|c| c.relevance.clone()).collect();
    let relevance = RelevanceReport::average(&reports);
    let artifact = EvaluationArtifact {
        overall: overall(fact.strict.f1, relevance.mean),
        factuality: fact,
        relevance,
        per_case,
    };
    write_json(&opts.out.join(EVALUATION), &artifact)?;
    write_evaluation_csv(&opts.out.join(EVALUATION_CSV), &artifact)?;
    Ok(artifact)
}

fn write_evaluation_csv(path: &Path, a: &EvaluationArtifact) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "case_id", "strict_p", "strict_r", "strict_f1", "lenient_p", "lenient_r", "lenient_f1", "bleu", "rouge",
        "sari", "semantic", "relevance",
    ])?;
    for (c, f) in a.per_case.iter().zip(&a.factuality.per_case) {
        let rel = c.relevance.as_ref();
        w.write_record([
            c.case_id.clone(),
            fmt_opt(f.strict.map(|p| p.precision)),
            fmt_opt(f.strict.map(|p| p.recall)),
            fmt_opt(f.strict.map(|p| p.f1)),
            fmt_opt(f.lenient.map(|p| p.precision)),
            fmt_opt(f.lenient.map(|p| p.recall)),
            fmt_opt(f.lenient.map(|p| p.f1)),
            fmt_opt(rel.map(|r| r.bleu)),
            fmt_opt(rel.map(|r| r.rouge)),
            fmt_opt(rel.map(|r| r.sari)),
            fmt_opt(rel.map(|r| r.semantic)),
            fmt_opt(rel.map(|r| r.mean)),
        ])?;
    }
    let (s, l, r) = (a.factuality.strict, a.factuality.lenient, &a.relevance);
    w.write_record(
        [
            "macro".to_string(),
            s.precision.to_string(),
            s.recall.to_string(),
            s.f1.to_string(),
            l.precision.to_string(),
            l.recall.to_string(),
            l.f1.to_string(),
            r.bleu.to_string(),
            r.rouge.to_string(),
            r.sari.to_string(),
            r.semantic.to_string(),
            r.mean.to_string(),
        ],
    )?;
    let bytes = w.into_inner().map_err(|e| Error::Config(e.to_string()))?;
    write_text(path, &String::from_utf8_lossy(&bytes))
}

pub struct GridSearchOptions {
    pub dataset: PathBuf,
    pub out: PathBuf,
    pub embedding: String,
    pub step: f64,
    pub include_zero: bool,
    pub thresholds: Vec<f64>,
    pub jobs: usize,
}

pub fn grid_search(opts: &GridSearchOptions) -> Result<Vec<GridRow>> {
    let d = load_dataset(&opts.dataset)?;
    let generation: GenerationArtifact = read_json(&opts.out.join(GENERATION))?;
    let provider = opts.embedding.parse::<ProviderSpec>()?.open()?;
    let weights = enumerate_weights(opts.step, opts.include_zero)?;
    let thresholds = if opts.thresholds.is_empty() {
        default_thresholds()
    } else {
        opts.thresholds.clone()
    };
    let by_id: BTreeMap<&str, &GenerationRecord> =
        generation.cases.iter().map(|g| (g.case_id.as_str(), g)).collect();
    let mut grid_cases = Vec::with_capacity(d.cases.len());
    for case in &d.cases {
        let Some(g) = by_id.get(case.case_id.as_str()) else {
            continue;
        };
        grid_cases.push(GridCase {
            case,
            answer_sentences: g.output.as_ref().map(|o| o.sentences().to_vec()).unwrap_or_default(),
            retrieved: g.evidence_ids.clone(),
        });
    }
    let configs: Vec<AttributionConfig> = weights
        .iter()
        .flat_map(|w| thresholds.iter().map(move |t| AttributionConfig::new(*w, *t)))
        .collect::<Result<_, _>>()?;
    let mut rows = with_jobs(opts.jobs, || -> Result<Vec<GridRow>> {
        let prepared = PreparedGrid::new(&grid_cases, provider.as_ref())?;
        configs
            .par_iter()
            .map(|c| {
                Ok(GridRow {
                    weights: c.weights,
                    threshold: c.threshold,
                    score: prepared.evaluate(c)?,
                })
            })
            .collect()
    })??;
    rank_rows(&mut rows);

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["w1", "w2", "w3", "T", "strictP", "strictF1", "relevance", "overall"])?;
    for r in &rows {
        let s = r.score.factuality.strict;
        w.write_record([
            r.weights.lexical.to_string(),
            r.weights.fuzzy.to_string(),
            r.weights.semantic.to_string(),
            r.threshold.to_string(),
            s.precision.to_string(),
            s.f1.to_string(),
            r.score.relevance.mean.to_string(),
            r.score.overall.to_string(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Config(e.to_string()))?;
    write_text(&opts.out.join(GRID_SEARCH), &String::from_utf8_lossy(&bytes))?;
    Ok(rows)
}
