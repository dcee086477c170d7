use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use xfaith::aggregate::{build_matrix, score_example, Strategy};
use xfaith::annotate::{
    annotate_threshold, clean_removal, random_removal, select_test_faith, BagOfWordsCosine, FaithLabel,
    FaithfulnessAnnotation, RemovalSet, SelectionRule, SentenceScore, SimilarityScorer,
};
use xfaith::benchmark::{accuracy, benchmark_strategies, parse_benchmark};
use xfaith::corpus::{
    common_languages, derive_cross_pairs, parse_corpus_with, parse_xnli, write_corpus, CorpusExample, LanguageSet,
};
use xfaith::losses::{grad_check, loss_value, LossInputs, LossKind};
use xfaith::scorer::{
    CachedScorer, MockScorer, NliScorer, RemoteScorer, RemoteScorerConfig, ScoreCache, ScorePair,
};
use xfaith::textmetrics::{corpus_stats, example_stats, tokenizer_by_name};
use xfaith::transform::{make_clean, make_mask, make_unlike, retain_only, TokenizedSummary};
use xfaith::Error;

use crate::artifacts::Run;
use crate::config::{ScorerKind, Settings};

/// One line of the scores file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoreLine {
    pub id: String,
    pub strategy: Strategy,
    pub sent_scores: Vec<f64>,
    pub premises: Vec<Vec<usize>>,
    pub aggregate: f64,
}

fn jsonl<T: Serialize>(records: &[T]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.push(b'\n');
    }
    Ok(out)
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(bytes: &[u8], what: &str) -> Result<Vec<T>> {
    let text = std::str::from_utf8(bytes).map_err(|e| Error::Validation(format!("{what}: {e}")))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| {
                Error::Parse {
                    line: i + 1,
                    message: format!("{what}: {e}"),
                }
                .into()
            })
        })
        .collect()
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool> {
    Ok(rayon::ThreadPoolBuilder::new().num_threads(jobs).build()?)
}

fn read_corpus(run: &mut Run, settings: &Settings, path: &Path) -> Result<Vec<CorpusExample>> {
    let bytes = run.input(path)?;
    let langs = if settings.any_lang {
        LanguageSet::any()
    } else {
        LanguageSet::default()
    };
    parse_corpus_with(bytes.as_slice(), &langs).with_context(|| format!("corpus {}", path.display()))
}

/// The configured scorer, optionally behind a persistent cache.
pub enum Backend {
    Plain(Box<dyn NliScorer>),
    Cached(CachedScorer<Box<dyn NliScorer>>, PathBuf),
}

impl Backend {
    pub fn build(settings: &Settings) -> Result<Self> {
        let inner: Box<dyn NliScorer> = match settings.scorer {
            ScorerKind::Mock => Box::new(MockScorer::new(settings.seed)),
            ScorerKind::Cache => {
                let path = settings.cache.as_ref().expect("validated");
                return Ok(Backend::Plain(Box::new(ScoreCache::load(path)?)));
            }
            ScorerKind::Remote => {
                let mut config = RemoteScorerConfig::new(settings.endpoint.clone().expect("validated"));
                config.max_batch = settings.max_batch;
                config.timeout = Duration::from_secs(settings.timeout_secs);
                Box::new(RemoteScorer::connect(config)?)
            }
        };
        Ok(match &settings.cache {
            None => Backend::Plain(inner),
            Some(path) if path.exists() => {
                Backend::Cached(CachedScorer::with_cache(inner, ScoreCache::load(path)?)?, path.clone())
            }
            Some(path) => Backend::Cached(CachedScorer::new(inner), path.clone()),
        })
    }

    pub fn scorer(&self) -> &dyn NliScorer {
        match self {
            Backend::Plain(s) => s.as_ref(),
            Backend::Cached(s, _) => s,
        }
    }

    /// Persists newly scored pairs.
    pub fn finish(&self) -> Result<()> {
        if let Backend::Cached(s, path) = self {
            s.snapshot().persist(path)?;
        }
        Ok(())
    }
}

#[derive(Serialize)]
struct MatrixLine<'a> {
    id: &'a str,
    /// Rows are document sentences, columns summary sentences.
    entailment: Vec<Vec<f64>>,
    neutral: Vec<Vec<f64>>,
    contradiction: Vec<Vec<f64>>,
}

pub fn score(settings: &Settings, matrix_out: Option<&Path>) -> Result<()> {
    let out = settings.out()?;
    let mut run = Run::new("score", settings);
    let corpus = read_corpus(&mut run, settings, settings.input()?)?;
    let backend = Backend::build(settings)?;
    let scorer = backend.scorer();
    run.scorer_id(scorer.scorer_id());

    let pool = pool(settings.jobs)?;
    let lines: Vec<Vec<ScoreLine>> = pool.install(|| {
        corpus
            .par_iter()
            .map(|ex| {
                settings
                    .strategies
                    .iter()
                    .map(|&st| {
                        let pf = score_example(ex, scorer, &settings.strategy_config(st))?;
                        Ok(ScoreLine {
                            id: pf.id.clone(),
                            strategy: st,
                            sent_scores: pf.sent_scores(),
                            premises: pf.sentences.iter().map(|s| s.premises.clone()).collect(),
                            aggregate: pf.aggregate,
                        })
                    })
                    .collect::<Result<Vec<_>, Error>>()
            })
            .collect::<Result<Vec<_>, Error>>()
    })?;
    let lines: Vec<ScoreLine> = lines.into_iter().flatten().collect();

    if let Some(path) = matrix_out {
        let matrices = pool.install(|| {
            corpus
                .par_iter()
                .map(|ex| build_matrix(ex, scorer))
                .collect::<Result<Vec<_>, Error>>()
        })?;
        let records: Vec<MatrixLine> = matrices
            .iter()
            .map(|m| {
                let grid = |f: fn(&xfaith::scorer::NliDistribution) -> f64| {
                    (0..m.rows())
                        .map(|r| (0..m.cols()).map(|c| f(m.get(r, c))).collect())
                        .collect()
                };
                MatrixLine {
                    id: m.example_id(),
                    entailment: grid(|d| d.entailment),
                    neutral: grid(|d| d.neutral),
                    contradiction: grid(|d| d.contradiction),
                }
            })
            .collect();
        run.output(path, &jsonl(&records)?)?;
    }
    backend.finish()?;
    run.output(out, &jsonl(&lines)?)?;
    run.finish(out)
}

#[derive(Debug, Default)]
pub struct AnnotateOutputs {
    pub removal_out: Option<PathBuf>,
    pub random_out: Option<PathBuf>,
    pub test_faith_out: Option<PathBuf>,
    pub corpus: Option<PathBuf>,
    pub similarity: Option<PathBuf>,
    pub sweep: Option<Vec<f64>>,
}

#[derive(Deserialize)]
struct SimilarityLine {
    id: String,
    score: f64,
}

fn pct_label(pct: f64) -> String {
    format!("{pct}")
}

pub fn annotate(settings: &Settings, opts: &AnnotateOutputs) -> Result<()> {
    let out = settings.out()?;
    let strategy = settings.single_strategy()?;
    let mut run = Run::new("annotate", settings);
    let all: Vec<ScoreLine> = read_jsonl(&run.input(settings.input()?)?, "scores")?;
    let found: BTreeSet<&str> = all.iter().map(|l| l.strategy.as_str()).collect();
    let lines: Vec<&ScoreLine> = all.iter().filter(|l| l.strategy == strategy).collect();
    if lines.is_empty() {
        bail!(Error::Validation(format!(
            "no {strategy} scores in input (found: {})",
            found.into_iter().collect::<Vec<_>>().join(", ")
        )));
    }
    let sentence_scores: Vec<SentenceScore> = lines
        .iter()
        .flat_map(|l| l.sent_scores.iter().enumerate().map(|(i, &s)| SentenceScore::new(l.id.clone(), i, s)))
        .collect();
    let per_example: Vec<(String, Vec<f64>)> = lines.iter().map(|l| (l.id.clone(), l.sent_scores.clone())).collect();
    let ids: Vec<String> = lines.iter().map(|l| l.id.clone()).collect();

    let emit = |run: &mut Run, pct: f64, ann: &Path, clean: Option<&Path>, random: Option<&Path>| -> Result<()> {
        let annotations: Vec<FaithfulnessAnnotation> = annotate_threshold(&sentence_scores, pct)?;
        run.output(ann, &jsonl(&annotations)?)?;
        let removal = clean_removal(&per_example, pct)?;
        if let Some(p) = clean {
            run.output(p, removal.to_text().as_bytes())?;
        }
        if let Some(p) = random {
            let r = random_removal(&ids, removal.len(), pct, settings.seed)?;
            run.output(p, r.to_text().as_bytes())?;
        }
        Ok(())
    };

    match &opts.sweep {
        Some(grid) => {
            std::fs::create_dir_all(out)?;
            for &pct in grid {
                if !(0.0..=100.0).contains(&pct) {
                    bail!(Error::Validation(format!("sweep value {pct} outside [0, 100]")));
                }
                let l = pct_label(pct);
                emit(
                    &mut run,
                    pct,
                    &out.join(format!("annotations.pct{l}.jsonl")),
                    Some(&out.join(format!("clean.pct{l}.txt"))),
                    Some(&out.join(format!("random.pct{l}.txt"))),
                )?;
            }
        }
        None => emit(
            &mut run,
            settings.pct,
            out,
            opts.removal_out.as_deref(),
            opts.random_out.as_deref(),
        )?,
    }

    if let Some(path) = &opts.test_faith_out {
        let faith: Vec<(String, f64)> = lines.iter().map(|l| (l.id.clone(), l.aggregate)).collect();
        let similarity = similarity_scores(&mut run, settings, opts, &ids)?;
        let set = select_test_faith(&faith, &similarity, settings.fraction)?;
        run.output(path, set.to_text().as_bytes())?;
    }
    run.finish(out)
}

fn similarity_scores(
    run: &mut Run,
    settings: &Settings,
    opts: &AnnotateOutputs,
    ids: &[String],
) -> Result<BTreeMap<String, f64>> {
    if let Some(path) = &opts.similarity {
        let lines: Vec<SimilarityLine> = read_jsonl(&run.input(path)?, "similarity")?;
        return Ok(lines.into_iter().map(|l| (l.id, l.score)).collect());
    }
    let Some(corpus_path) = &opts.corpus else {
        bail!(Error::Validation(
            "Test_Faith selection needs --similarity or --corpus with reference summaries".into()
        ));
    };
    let corpus = read_corpus(run, settings, corpus_path)?;
    let by_id: BTreeMap<&str, &CorpusExample> = corpus.iter().map(|e| (e.id.as_str(), e)).collect();
    let sim = BagOfWordsCosine;
    ids.iter()
        .map(|id| {
            let ex = by_id
                .get(id.as_str())
                .ok_or_else(|| Error::Validation(format!("id {id:?} missing from corpus")))?;
            let reference = ex
                .ref_sum_src
                .as_ref()
                .ok_or_else(|| Error::Validation(format!("example {id:?} has no ref_sum_src")))?;
            let reference: Vec<&str> = reference.iter().map(|s| s.text.as_str()).collect();
            Ok((id.clone(), sim.similarity(&ex.summary_text(), &reference.join(" "))))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum TransformMode {
    Clean,
    Random,
    Retain,
    Mask,
    Unlike,
}

pub fn transform(
    settings: &Settings,
    mode: TransformMode,
    ids: Option<&Path>,
    annotations: Option<&Path>,
) -> Result<()> {
    let out = settings.out()?;
    let mut run = Run::new("transform", settings);
    let corpus = read_corpus(&mut run, settings, settings.input()?)?;
    let bytes = match mode {
        TransformMode::Clean | TransformMode::Random | TransformMode::Retain => {
            let path = ids.ok_or_else(|| Error::Validation("--ids is required for this mode".into()))?;
            let text = String::from_utf8(run.input(path)?)?;
            let set = RemovalSet::from_text(&text)?;
            let expected = match mode {
                TransformMode::Clean => SelectionRule::Clean,
                TransformMode::Random => SelectionRule::Random,
                _ => SelectionRule::TestFaith,
            };
            if set.rule != expected {
                bail!(Error::Validation(format!(
                    "id set was made by rule {} but mode expects {}",
                    set.rule.as_str(),
                    expected.as_str()
                )));
            }
            let kept = if mode == TransformMode::Retain {
                retain_only(&corpus, &set)?
            } else {
                make_clean(&corpus, &set)?
            };
            let mut buf = Vec::new();
            write_corpus(&mut buf, &kept)?;
            buf
        }
        TransformMode::Mask | TransformMode::Unlike => {
            let path =
                annotations.ok_or_else(|| Error::Validation("--annotations is required for this mode".into()))?;
            let anns: Vec<FaithfulnessAnnotation> = read_jsonl(&run.input(path)?, "annotations")?;
            let labels: BTreeMap<(String, usize), FaithLabel> =
                anns.into_iter().map(|a| ((a.id, a.sent_idx), a.label)).collect();
            let tok = tokenizer_by_name(&settings.tokenizer)?;
            let mut buf = Vec::new();
            for ex in &corpus {
                let sentences: Vec<Vec<String>> = ex.sum_sents.iter().map(|s| tok.tokenize(&s.text)).collect();
                let summary = TokenizedSummary::from_sentences(sentences)
                    .map_err(|e| e.context(format!("example {}", ex.id)))?;
                let labels: Vec<FaithLabel> = (0..ex.sum_sents.len())
                    .map(|i| {
                        labels.get(&(ex.id.clone(), i)).copied().ok_or_else(|| {
                            Error::Validation(format!("no annotation for example {} sentence {i}", ex.id))
                        })
                    })
                    .collect::<Result<_, _>>()?;
                if mode == TransformMode::Mask {
                    serde_json::to_writer(&mut buf, &make_mask(&ex.id, &summary, &labels)?)?;
                } else {
                    serde_json::to_writer(&mut buf, &make_unlike(&ex.id, &summary, &labels)?)?;
                }
                buf.push(b'\n');
            }
            buf
        }
    };
    run.output(out, &bytes)?;
    run.finish(out)
}

pub fn stats(settings: &Settings) -> Result<()> {
    let out = settings.out()?;
    let mut run = Run::new("stats", settings);
    let corpus = read_corpus(&mut run, settings, settings.input()?)?;
    if corpus.is_empty() {
        bail!(Error::Validation("corpus is empty".into()));
    }
    let tok = tokenizer_by_name(&settings.tokenizer)?;
    let per_example = pool(settings.jobs)?.install(|| {
        corpus
            .par_iter()
            .map(|ex| example_stats(ex, tok.as_ref()))
            .collect::<Result<Vec<_>, Error>>()
    })?;
    let pairs: BTreeSet<String> = corpus.iter().map(|e| e.lang_pair()).collect();
    let column = if pairs.len() == 1 {
        pairs.into_iter().next().unwrap()
    } else {
        "all".to_string()
    };
    run.output(out, corpus_stats(&per_example).to_tsv(&column).as_bytes())?;
    run.finish(out)
}

pub fn benchmark(settings: &Settings, lang_pair: &str) -> Result<()> {
    let out = settings.out()?;
    let mut run = Run::new("benchmark", settings);
    let bytes = run.input(settings.input()?)?;
    let records = parse_benchmark(bytes.as_slice(), lang_pair)?;
    if records.is_empty() {
        bail!(Error::Validation("benchmark file has no records".into()));
    }
    let report = benchmark_strategies(&records);
    run.output(out, report.to_tsv().as_bytes())?;
    run.finish(out)
}

#[derive(Debug, Clone)]
pub struct LossCheckOptions {
    pub instance: Option<PathBuf>,
    pub cases: usize,
    pub timesteps: usize,
    pub vocab: usize,
    pub h: f64,
    pub tol: f64,
    pub literal: bool,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct InstanceFile {
    logits: Vec<Vec<f64>>,
    targets: Vec<usize>,
    faithful: Vec<bool>,
}

pub fn loss_check(settings: &Settings, opts: &LossCheckOptions) -> Result<()> {
    use rand::{Rng, SeedableRng};

    let mut run = Run::new("loss-check", settings);
    if opts.timesteps == 0 || opts.vocab == 0 {
        bail!(Error::Validation("--timesteps and --vocab must be at least 1".into()));
    }
    let worked = match &opts.instance {
        Some(path) => {
            let f: InstanceFile = serde_json::from_slice(&run.input(path)?)
                .map_err(|e| Error::Validation(format!("instance {}: {e}", path.display())))?;
            LossInputs::new(f.logits, f.targets, f.faithful, settings.alpha)?
        }
        None => LossInputs::new(vec![vec![0.0; 3]; 2], vec![0, 1], vec![true, false], settings.alpha)?,
    };
    let mut kinds = vec![LossKind::Mle, LossKind::Mask, LossKind::Unlike];
    if opts.literal {
        kinds.push(LossKind::UnlikeLiteral);
    }

    let mut report = String::new();
    writeln!(report, "# loss-check alpha={} seed={}", settings.alpha, settings.seed)?;
    writeln!(
        report,
        "instance T={} V={} targets={:?} faithful={:?}",
        worked.timesteps(),
        worked.vocab(),
        worked.targets(),
        worked.faithful().iter().map(|&f| u8::from(f)).collect::<Vec<_>>()
    )?;
    writeln!(report, "loss\ttotal\tmle\tunlikelihood")?;
    for &kind in &kinds {
        let v = loss_value(kind, &worked);
        writeln!(report, "{kind}\t{:.6}\t{:.6}\t{:.6}", v.total, v.mle, v.unlikelihood)?;
    }

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(settings.seed);
    let mut instances = vec![worked];
    for _ in 0..opts.cases {
        let logits = (0..opts.timesteps)
            .map(|_| (0..opts.vocab).map(|_| rng.random_range(-3.0..3.0)).collect())
            .collect();
        let targets = (0..opts.timesteps).map(|_| rng.random_range(0..opts.vocab)).collect();
        let faithful = (0..opts.timesteps).map(|_| rng.random_bool(0.5)).collect();
        instances.push(LossInputs::new(logits, targets, faithful, settings.alpha)?);
    }
    writeln!(
        report,
        "\ngradient check: {} instances (T={} V={} plus the instance above), h={} tol={}",
        instances.len(),
        opts.timesteps,
        opts.vocab,
        opts.h,
        opts.tol
    )?;
    writeln!(report, "loss\tcoords\tfailures\tworst_rel_error\tt\tv\tanalytic\tnumeric")?;
    let mut failed = false;
    for &kind in &kinds {
        let mut coords = 0;
        let mut failures = 0;
        let mut worst = None;
        for x in &instances {
            let r = grad_check(kind, x, opts.h, opts.tol)?;
            coords += r.coordinates;
            failures += r.failures.len();
            if worst.is_none_or(|w: xfaith::losses::GradCheckEntry| r.worst.rel_error > w.rel_error) {
                worst = Some(r.worst);
            }
        }
        let w = worst.expect("at least one instance");
        failed |= failures > 0;
        writeln!(
            report,
            "{kind}\t{coords}\t{failures}\t{:.3e}\t{}\t{}\t{:.9}\t{:.9}",
            w.rel_error, w.timestep, w.token, w.analytic, w.numeric
        )?;
    }
    writeln!(report, "status\t{}", if failed { "FAIL" } else { "ok" })?;

    match &settings.out {
        Some(out) => {
            run.output(out, report.as_bytes())?;
            run.finish(out)?;
        }
        None => print!("{report}"),
    }
    if failed {
        bail!("gradient check failed");
    }
    Ok(())
}

#[derive(Debug, Clone, Default)]
pub struct XnliOptions {
    pub premise_lang: Option<String>,
    pub hypothesis_lang: Option<String>,
    pub accuracy_out: Option<PathBuf>,
    pub langs: Option<Vec<String>>,
}

pub fn xnli_pairs(settings: &Settings, opts: &XnliOptions) -> Result<()> {
    let mut run = Run::new("xnli-pairs", settings);
    let rows = parse_xnli(run.input(settings.input()?)?.as_slice())?;
    let mut primary = None;

    match (&opts.premise_lang, &opts.hypothesis_lang) {
        (Some(p), Some(h)) => {
            let out = settings.out()?;
            run.output(out, &jsonl(&derive_cross_pairs(&rows, p, h)?)?)?;
            primary = Some(out.to_path_buf());
        }
        (None, None) => {}
        _ => bail!(Error::Validation("--premise-lang and --hypothesis-lang go together".into())),
    }

    if let Some(path) = &opts.accuracy_out {
        let langs: Vec<String> = match &opts.langs {
            Some(l) => l.clone(),
            None => common_languages(&rows).into_iter().collect(),
        };
        if langs.is_empty() {
            bail!(Error::Validation("no language is shared by every row".into()));
        }
        let backend = Backend::build(settings)?;
        let scorer = backend.scorer();
        run.scorer_id(scorer.scorer_id());
        let combos: Vec<(&String, &String)> = langs.iter().flat_map(|p| langs.iter().map(move |h| (p, h))).collect();
        let accs = pool(settings.jobs)?.install(|| {
            combos
                .par_iter()
                .map(|(p, h)| {
                    let pairs = derive_cross_pairs(&rows, p, h)?;
                    let batch: Vec<ScorePair> =
                        pairs.iter().map(|x| ScorePair::new(x.premise.clone(), x.hypothesis.clone())).collect();
                    let dists = xfaith::scorer::score_batch(scorer, &xfaith::scorer::ScoreBatch::new(0, batch))?;
                    let pred: Vec<_> = dists.iter().map(|d| d.argmax()).collect();
                    let gold: Vec<_> = pairs.iter().map(|x| x.gold_label).collect();
                    accuracy(&pred, &gold)
                })
                .collect::<Result<Vec<f64>, Error>>()
        })?;
        backend.finish()?;
        let mut tsv = String::from("premise\\hypothesis");
        for h in &langs {
            write!(tsv, "\t{h}")?;
        }
        tsv.push('\n');
        for (i, p) in langs.iter().enumerate() {
            tsv.push_str(p);
            for j in 0..langs.len() {
                write!(tsv, "\t{:.2}", 100.0 * accs[i * langs.len() + j])?;
            }
            tsv.push('\n');
        }
        writeln!(tsv, "# n={}", rows.len())?;
        run.output(path, tsv.as_bytes())?;
        primary.get_or_insert(path.clone());
    }

    match primary {
        Some(p) => run.finish(&p),
        None => bail!(Error::Validation(
            "nothing to do: give --premise-lang/--hypothesis-lang with --out, or --accuracy-out".into()
        )),
    }
}
