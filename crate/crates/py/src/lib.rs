//! Python bindings.
//!
//! Scores, feedback rendering and parsing, order policies, summary
//! extraction, statistics and an offline experiment runner. Errors surface
//! as `ValueError`.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::sync::Arc;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use refinery::backend::{Backends, ChatBackend, SimulatedBackend};
use refinery::config::Config;
use refinery::databuild::{verification_filter as verify, ReasoningStrategy, StageCounts};
use refinery::evaluator::scores_from_labels as scores_of;
use refinery::experiment::{outcomes_jsonl, parse_policy, render_report, run_experiment, ExperimentPlan};
use refinery::feedback::{self, FeedbackLabels};
use refinery::model::{fraction_to_f64, Dimension, DimensionScores, KeyFactSet, SummaryRecord};
use refinery::pipeline::{parse as extract, PipelineKind};
use refinery::stats::{self, BootstrapConfig, BootstrapMode, ScoreSeries, TableFormat, TrialSummary};

fn err<E: Display>(e: E) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Exact per-dimension scores of one summary.
#[pyclass(name = "DimensionScores", frozen)]
struct PyScores {
    inner: DimensionScores,
}

#[pymethods]
impl PyScores {
    #[getter]
    fn faithfulness(&self) -> f64 {
        fraction_to_f64(self.inner.faithfulness)
    }

    #[getter]
    fn completeness(&self) -> f64 {
        fraction_to_f64(self.inner.completeness)
    }

    #[getter]
    fn conciseness(&self) -> f64 {
        fraction_to_f64(self.inner.conciseness)
    }

    fn composite(&self) -> f64 {
        fraction_to_f64(self.inner.composite())
    }

    /// `(numerator, denominator)` per dimension.
    fn exact(&self) -> Vec<(u64, u64)> {
        Dimension::ALL
            .iter()
            .map(|d| {
                let f = self.inner.get(*d);
                (*f.numer(), *f.denom())
            })
            .collect()
    }

    fn __repr__(&self) -> String {
        let s = &self.inner;
        format!(
            "DimensionScores(faithfulness={}, completeness={}, conciseness={})",
            s.faithfulness, s.completeness, s.conciseness
        )
    }
}

/// Scores from three binary label vectors (1 = needs revision).
#[pyfunction]
fn scores_from_labels(faith: Vec<u8>, comp: Vec<u8>, conc: Vec<u8>) -> PyResult<PyScores> {
    scores_of(&faith, &comp, &conc).map(|inner| PyScores { inner }).map_err(err)
}

#[pyfunction]
fn segment_sentences(text: &str) -> Vec<String> {
    refinery::segment::segment_sentences(text)
}

fn parse_order(order: Option<Vec<String>>) -> PyResult<feedback::Order> {
    let Some(names) = order else { return Ok(Dimension::ALL) };
    let dims = names
        .iter()
        .map(|n| n.parse::<Dimension>().map_err(err))
        .collect::<PyResult<Vec<_>>>()?;
    if !feedback::is_permutation(&dims) {
        return Err(err("order must be a permutation of the three dimensions"));
    }
    Ok([dims[0], dims[1], dims[2]])
}

/// Feedback text for one summary.
#[pyfunction]
#[pyo3(signature = (faith, comp, conc, sentences, keyfacts, order=None))]
fn render_feedback(
    faith: Vec<u8>,
    comp: Vec<u8>,
    conc: Vec<u8>,
    sentences: Vec<String>,
    keyfacts: Vec<String>,
    order: Option<Vec<String>>,
) -> PyResult<String> {
    let labels = FeedbackLabels::new(faith, comp, conc).map_err(err)?;
    let summary = SummaryRecord::new("doc", "py", sentences).map_err(err)?;
    let keyfacts = KeyFactSet::new("doc", keyfacts).map_err(err)?;
    labels.check_lengths(summary.len(), keyfacts.len()).map_err(err)?;
    Ok(feedback::render_feedback(&labels, &summary, &keyfacts, parse_order(order)?).text())
}

/// `(order, {dimension: [flagged 1-based indices]})` from feedback text.
#[pyfunction]
fn parse_feedback(text: &str) -> PyResult<(Vec<String>, BTreeMap<String, Vec<usize>>)> {
    let parsed = feedback::parse_feedback(text).map_err(err)?;
    let order = parsed.order.iter().map(|d| d.to_string()).collect();
    let flagged = parsed
        .flagged
        .iter()
        .map(|(d, set)| (d.to_string(), set.iter().copied().collect()))
        .collect();
    Ok((order, flagged))
}

/// Dimension order for record `index` under a policy such as `random:7`.
#[pyfunction]
#[pyo3(signature = (policy, index, seed=0))]
fn choose_order(policy: &str, index: u64, seed: u64) -> PyResult<Vec<String>> {
    let p = parse_policy(policy, seed).map_err(err)?;
    Ok(feedback::choose_order(&p, index).iter().map(|d| d.to_string()).collect())
}

#[pyfunction]
fn extract_boxed(text: &str) -> Option<String> {
    extract::extract_boxed(text)
}

#[pyfunction]
fn parse_revised_summary(text: &str) -> PyResult<String> {
    extract::parse_revised_summary(text).map_err(err)
}

/// `(reasoning, revised)` from a think/answer reply.
#[pyfunction]
fn parse_refeed_output(text: &str) -> PyResult<(String, String)> {
    extract::parse_refeed_output(text).map_err(err)
}

#[pyfunction]
fn pipeline_kinds() -> Vec<String> {
    PipelineKind::all().iter().map(ToString::to_string).collect()
}

#[pyfunction]
fn round1(x: f64) -> f64 {
    stats::round1(x)
}

#[pyfunction]
fn max_min(values: Vec<f64>) -> PyResult<f64> {
    stats::max_min(&values).map_err(err)
}

/// Rendered deltas `[faith, comp, conc, avg]`, e.g. `["+4.7", ...]`.
#[pyfunction]
fn delta_row(before: [f64; 3], after: [f64; 3]) -> Vec<String> {
    let b = TrialSummary::new("before", before[0], before[1], before[2]);
    let a = TrialSummary::new("after", after[0], after[1], after[2]);
    stats::delta_row(&b, &a).render().to_vec()
}

/// `(p_value, significant)` of a paired bootstrap on per-record fractions.
#[pyfunction]
#[pyo3(signature = (baseline, treatment, resamples=10_000, seed=0, exhaustive=false))]
fn paired_bootstrap(baseline: Vec<f64>, treatment: Vec<f64>, resamples: u64, seed: u64, exhaustive: bool) -> PyResult<(f64, bool)> {
    let b = ScoreSeries::unkeyed("baseline", baseline).map_err(err)?;
    let t = ScoreSeries::unkeyed("treatment", treatment).map_err(err)?;
    let mode = if exhaustive {
        BootstrapMode::Exhaustive
    } else {
        BootstrapMode::MonteCarlo
    };
    let r = stats::paired_bootstrap(&b, &t, &BootstrapConfig::new(resamples, seed).with_mode(mode)).map_err(err)?;
    Ok((r.p_value, r.significant))
}

/// `(passed, reason)` of the verification filter.
#[pyfunction]
#[pyo3(signature = (before, after, strict_delta=false))]
fn verification_filter(before: PyRef<'_, PyScores>, after: PyRef<'_, PyScores>, strict_delta: bool) -> (bool, String) {
    let v = verify(&before.inner, &after.inner, strict_delta);
    (v.passed, v.reason)
}

/// Verified over format-passed as a percentage string, or `—`.
#[pyfunction]
fn ledger_ratio(format_passed: u64, verification_passed: u64) -> String {
    StageCounts::new("", ReasoningStrategy::Reflective, "")
        .with_counts(format_passed, format_passed, verification_passed)
        .ratio_text()
}

/// Normalised corpus as JSON lines.
#[pyfunction]
fn load_corpus(path: &str) -> PyResult<String> {
    refinery::corpus::load_corpus(path).map(|c| c.to_jsonl()).map_err(err)
}

/// Runs pipelines over a corpus with the offline simulated backend.
/// Returns `(outcomes_jsonl, report_markdown)`.
#[pyfunction]
#[pyo3(signature = (corpus_path, pipelines, seed=0, policy="fixed"))]
fn simulate(py: Python<'_>, corpus_path: &str, pipelines: Vec<String>, seed: u64, policy: &str) -> PyResult<(String, String)> {
    let kinds = pipelines
        .iter()
        .map(|p| p.parse::<PipelineKind>().map_err(err))
        .collect::<PyResult<Vec<_>>>()?;
    let policy = parse_policy(policy, seed).map_err(err)?;
    let corpus_path = corpus_path.to_string();
    py.detach(move || {
        let corpus = refinery::corpus::load_corpus(&corpus_path).map_err(|e| e.to_string())?;
        let sim: Arc<dyn ChatBackend> = Arc::new(SimulatedBackend::new());
        let backends = Backends::new().with("sim", sim);
        let mut plan = ExperimentPlan::single_backend(corpus_path, "sim", kinds, seed);
        plan.policies = vec![policy];
        let outcome = run_experiment(&plan, &corpus, &backends, &Config::simulated()).map_err(|e| e.to_string())?;
        let report = render_report(&outcome.records, plan.bootstrap_resamples, seed, false, TableFormat::Markdown);
        Ok::<_, String>((outcomes_jsonl(&outcome.records), report))
    })
    .map_err(err)
}

#[pymodule]
fn refinery_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyScores>()?;
    m.add_function(wrap_pyfunction!(scores_from_labels, m)?)?;
    m.add_function(wrap_pyfunction!(segment_sentences, m)?)?;
    m.add_function(wrap_pyfunction!(render_feedback, m)?)?;
    m.add_function(wrap_pyfunction!(parse_feedback, m)?)?;
    m.add_function(wrap_pyfunction!(choose_order, m)?)?;
    m.add_function(wrap_pyfunction!(extract_boxed, m)?)?;
    m.add_function(wrap_pyfunction!(parse_revised_summary, m)?)?;
    m.add_function(wrap_pyfunction!(parse_refeed_output, m)?)?;
    m.add_function(wrap_pyfunction!(pipeline_kinds, m)?)?;
    m.add_function(wrap_pyfunction!(round1, m)?)?;
    m.add_function(wrap_pyfunction!(max_min, m)?)?;
    m.add_function(wrap_pyfunction!(delta_row, m)?)?;
    m.add_function(wrap_pyfunction!(paired_bootstrap, m)?)?;
    m.add_function(wrap_pyfunction!(verification_filter, m)?)?;
    m.add_function(wrap_pyfunction!(ledger_ratio, m)?)?;
    m.add_function(wrap_pyfunction!(load_corpus, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
