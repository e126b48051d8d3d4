//! Acceptance criteria, one line each. Runs without the libtest harness so
//! the PASS/FAIL lines always reach the console.

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use refinery::backend::{
    ApproxTokenCounter, CachedBackend, CallParams, ChatBackend, ChatRequest, FnBackend, ModelHandle, ReplayBackend,
    Role, ScriptedBackend, SimulatedBackend,
};
use refinery::config::Config;
use refinery::corpus::{load_corpus, Corpus};
use refinery::databuild::{build_dataset, verification_filter, BuildConfig, BuildModels, ReasoningStrategy, StageCounts};
use refinery::evaluator::scores::{score_alignment, score_faithfulness, scores_from_labels};
use refinery::evaluator::{AlignmentEdge, ErrorCategory, Evaluator, FactCheckVerdict};
use refinery::experiment::{run_experiment, write_outputs, ExperimentPlan};
use refinery::feedback::{all_orders, choose_order, labels_from_eval, parse_feedback, render_feedback, FeedbackLabels, OrderPolicy};
use refinery::pipeline::{parse_refeed_output, run_pipeline, LabelMode, PipelineKind, PipelineModels, RefineInput};
use refinery::stats::{self, BootstrapConfig, BootstrapMode, ScoreSeries, TrialSummary};
use refinery::{Dimension, DimensionScores, Document, DocumentFormat, Fraction, KeyFactSet, SummaryRecord};

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn fixture(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(rel)
}

fn paper() -> String {
    std::fs::read_to_string(root().join("paper.md")).expect("paper.md in the workspace root")
}

/// Every `needle` must occur verbatim in paper.md.
fn in_paper(needles: &[&str]) -> Result<(), String> {
    let text = paper();
    for n in needles {
        ensure(text.contains(n), format!("paper.md does not contain {n:?}"))?;
    }
    Ok(())
}

fn frac(n: u64, d: u64) -> Fraction {
    Fraction::new(n, d)
}

fn scores(f: Fraction, c: Fraction, n: Fraction) -> DimensionScores {
    DimensionScores::new(f, c, n).unwrap()
}

fn pct(f: Fraction) -> f64 {
    stats::round1(100.0 * *f.numer() as f64 / *f.denom() as f64)
}

// ---------------------------------------------------------------------------

fn metric_oracle() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for case in 0..1000 {
        let n = rng.random_range(1..=6usize);
        let m = rng.random_range(1..=6usize);
        let verdicts: Vec<FactCheckVerdict> = (1..=n)
            .map(|i| FactCheckVerdict {
                sentence_index: i,
                reason: String::new(),
                category: ErrorCategory::ALL[rng.random_range(0..9)],
            })
            .collect();
        let edges: Vec<AlignmentEdge> = (1..=m)
            .map(|j| {
                let matched = rng.random_bool(0.5);
                let lines = if matched {
                    (1..=n).filter(|_| rng.random_bool(0.4)).collect()
                } else {
                    BTreeSet::new()
                };
                AlignmentEdge { keyfact_index: j, matched, line_numbers: lines }
            })
            .collect();

        // brute force by set counting
        let correct = (1..=n)
            .filter(|i| verdicts.iter().any(|v| v.sentence_index == *i && v.category == ErrorCategory::NoError))
            .count();
        let matched = edges.iter().filter(|e| e.matched).count();
        let cited = (1..=n).filter(|i| edges.iter().any(|e| e.line_numbers.contains(i))).count();
        let want = scores(frac(correct as u64, n as u64), frac(matched as u64, m as u64), frac(cited as u64, n as u64));

        let faith = score_faithfulness(&verdicts, n).map_err(|e| e.to_string())?;
        let (comp, conc) = score_alignment(&edges, m, n).map_err(|e| e.to_string())?;
        ensure(scores(faith, comp, conc) == want, format!("case {case}: scorer disagrees with counting"))?;

        let labels = labels_from_eval(&verdicts, &edges, n, m).map_err(|e| e.to_string())?;
        let via_labels = scores_from_labels(&labels.faith, &labels.comp, &labels.conc).map_err(|e| e.to_string())?;
        ensure(via_labels == want, format!("case {case}: label path disagrees with counting"))?;
    }
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(5), format!("took {elapsed:?}"))?;
    Ok(format!("1000 instances exact, {:.0} ms", elapsed.as_secs_f64() * 1000.0))
}

fn paper_arithmetic() -> Check {
    in_paper(&[
        "78.0 & 46.4 & 76.4 & 66.9",
        "82.7\\textsuperscript{*}}{\\color{blue}\\textbf{\\scriptsize{(+4.7)}}}",
        "60.0\\textsuperscript{*}{\\color{blue}\\textbf{\\scriptsize{(+13.6)}}}",
        "83.4\\textsuperscript{*}{\\color{blue}\\textbf{\\scriptsize{(+7.0)}}}",
        "75.3\\textsuperscript{*}}{\\color{blue}\\textbf{\\scriptsize{(+8.4)}}}",
        "14,505 & 9,179 & 3,922 & 42.73\\%",
        "14,505 & 7,382 & 2,806 & 38.01\\%",
    ])?;
    let before = TrialSummary::new("Before", 78.0, 46.4, 76.4);
    ensure((before.avg() - 66.9).abs() <= 0.05, format!("composite {}", before.avg()))?;
    ensure(stats::round1(before.avg()) == 66.9, "composite does not round to 66.9")?;

    let refeed = TrialSummary::new("ReFeed", 82.7, 60.0, 83.4);
    let deltas = stats::delta_row(&before, &refeed).render();
    ensure(deltas == ["+4.7", "+13.6", "+7.0", "+8.4"], format!("deltas {deltas:?}"))?;

    let mm = |v: &[f64]| stats::round1(stats::max_min(v).unwrap());
    ensure(mm(&[59.1, 59.0, 63.2, 55.3]) == 7.9, "P2 Comp. Max-Min")?;
    // ReFeed rows under Random, Last-Faith, Last-Comp, Last-Conc
    let fa = mm(&[84.2, 83.6, 83.4, 84.3]);
    let cm = mm(&[62.9, 62.6, 62.4, 62.9]);
    let cn = mm(&[84.2, 84.6, 84.5, 84.4]);
    ensure((fa, cm, cn) == (0.9, 0.5, 0.4), format!("ReFeed Max-Min {fa}/{cm}/{cn}"))?;

    let reflective = StageCounts::new("ReFeed", ReasoningStrategy::Reflective, "high").with_counts(14_505, 9_179, 3_922);
    let receptive = StageCounts::new("P4-FT", ReasoningStrategy::Receptive, "high").with_counts(14_505, 7_382, 2_806);
    ensure(reflective.ratio_text() == "42.73%", reflective.ratio_text())?;
    ensure(receptive.ratio_text() == "38.01%", receptive.ratio_text())?;
    Ok("66.9, +4.7/+13.6/+7.0/+8.4, 7.9, 0.9/0.5/0.4, 42.73%, 38.01%".into())
}

fn worked_example() -> Check {
    in_paper(&[
        "Faithfulness Feedback : [0, 0, 0, 0, 0, 0, 1, 0, 0]",
        "Conciseness Feedback : [0, 0, 0, 0, 0, 1, 0, 0, 0]",
        "Completeness Feedback : [0, 0, 0, 0, 0, 1, 0, 0, 0, 0, 0, 1, 0, 1]",
        "Faithfulness Score : 89\\%",
        "Conciseness Score : 89\\%",
    ])?;
    let faith = [0, 0, 0, 0, 0, 0, 1, 0, 0];
    let comp = [0, 0, 0, 0, 0, 1, 0, 0, 0, 0, 0, 1, 0, 1];
    let conc = [0, 0, 0, 0, 0, 1, 0, 0, 0];
    let s = scores_from_labels(&faith, &comp, &conc).map_err(|e| e.to_string())?;
    ensure(s.faithfulness == frac(8, 9) && s.conciseness == frac(8, 9), "expected 8/9")?;
    ensure(pct(s.faithfulness) == 88.9 && pct(s.conciseness) == 88.9, "expected 88.9")?;
    ensure(pct(s.faithfulness).round() == 89.0, "does not round to the printed 89")?;
    // completeness from the same vectors is 11/14; the printed 71% is not label-derived
    Ok(format!("8/9 = 88.9% for both (completeness vector gives {}%)", pct(s.completeness)))
}

fn feedback_rendering() -> Check {
    let golden = std::fs::read_to_string(fixture("feedback/appendix_d.txt")).map_err(|e| e.to_string())?;
    let labels = FeedbackLabels::new(vec![1, 0, 0], vec![1, 1, 0], vec![0, 0, 1]).unwrap();
    let summary = SummaryRecord::new("d", "m", vec!["S1".into(), "S2".into(), "S3".into()]).unwrap();
    let keyfacts = KeyFactSet::new("d", vec!["K1".into(), "K2".into(), "K2".into()]).unwrap();
    let text = render_feedback(&labels, &summary, &keyfacts, Dimension::ALL).text();
    ensure(text == golden, format!("rendering differs from golden:\n{text}"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(500);
    let orders = all_orders();
    for case in 0..500 {
        let n = rng.random_range(1..=6usize);
        let m = rng.random_range(1..=6usize);
        let mut bits = |k: usize| (0..k).map(|_| u8::from(rng.random_bool(0.4))).collect::<Vec<u8>>();
        let labels = FeedbackLabels::new(bits(n), bits(m), bits(n)).unwrap();
        let summary = SummaryRecord::new("d", "m", (1..=n).map(|i| format!("Sentence number {i}.")).collect()).unwrap();
        let keyfacts = KeyFactSet::new("d", (1..=m).map(|j| format!("Fact {j}")).collect()).unwrap();
        let order = orders[rng.random_range(0..6)];
        let parsed = parse_feedback(&render_feedback(&labels, &summary, &keyfacts, order).text()).map_err(|e| e.to_string())?;
        ensure(parsed.order == order.to_vec(), format!("case {case}: order lost"))?;
        for d in Dimension::ALL {
            ensure(parsed.flagged[&d] == labels.flagged(d), format!("case {case}: {d} flags lost"))?;
        }
    }
    Ok("golden byte-identical; 500 random round trips".into())
}

const TOURIST: &str = "A tourist visits a medical facility with a bad cough and requests to see an internist. Since he doesn't have a registration card, he needs to register as a new patient. The staff member asks for his ID card to record his name, age, occupation, address, and contact number. The tourist expresses a preference for traditional Chinese medicine, and the staff informs him that the registration fee is 7 yuan.";

/// A reply shaped for whichever pipeline sent the request.
fn scenario_reply(req: &ChatRequest) -> String {
    if req.messages.iter().any(|m| m.role == Role::System) {
        format!("<think>\nChecking each block.\n</think>\n\n<answer>\n**Final Revised Summary:**\n\\[ \\boxed{{\\text{{{TOURIST}}}}} \\]\n</answer>")
    } else {
        "Feedback Reasoning: the feedback is valid.\nRevised Summary: The staff asks for an ID card. The fee is 7 yuan.".into()
    }
}

struct Scenario {
    name: &'static str,
    labels: FeedbackLabels,
}

fn scenarios() -> Vec<Scenario> {
    let l = |f: Vec<u8>, c: Vec<u8>, n: Vec<u8>| FeedbackLabels::new(f, c, n).unwrap();
    vec![
        Scenario { name: "clean", labels: l(vec![0, 0, 0], vec![0, 0], vec![0, 0, 0]) },
        Scenario { name: "one unfaithful", labels: l(vec![0, 1, 0], vec![1, 0], vec![0, 0, 1]) },
        Scenario { name: "all flagged", labels: l(vec![1, 1, 1], vec![1, 1], vec![1, 1, 1]) },
        Scenario { name: "two unfaithful", labels: l(vec![1, 0, 1], vec![0, 1], vec![0, 1, 0]) },
    ]
}

fn pipeline_structure() -> Check {
    let doc = Document::new("t", "dialogue", DocumentFormat::Dialogue, "#Person1#: The registration fee is 7 yuan, please.").unwrap();
    let summary = SummaryRecord::new(
        "t",
        "m",
        vec!["A tourist has a cough.".into(), "The doctor asks for his name.".into(), "The fee is 7 yuan.".into()],
    )
    .unwrap();
    let keyfacts = KeyFactSet::new("t", vec!["The tourist has a cough.".into(), "The registration fee is 7 yuan.".into()]).unwrap();

    let mut checked = 0;
    for sc in scenarios() {
        for kind in PipelineKind::all() {
            let calls = Arc::new(AtomicUsize::new(0));
            let seen = Arc::new(Mutex::new(Vec::<ChatRequest>::new()));
            let (c, s) = (calls.clone(), seen.clone());
            let backend: Arc<dyn ChatBackend> = Arc::new(FnBackend::new(move |r: &ChatRequest| {
                c.fetch_add(1, Ordering::SeqCst);
                s.lock().unwrap().push(r.clone());
                Ok(scenario_reply(r))
            }));
            let refine = ModelHandle::new("mock", backend, CallParams::default());
            let input = RefineInput { document: &doc, summary: &summary, keyfacts: &keyfacts, labels: &sc.labels };
            let models = PipelineModels { refine: &refine, reason: None, detector: None, label_mode: LabelMode::Stale };
            let unsupported = vec!["The doctor asks for his name.".to_string()];
            let result = run_pipeline(kind, input, Dimension::ALL, models, Some(&unsupported))
                .map_err(|e| format!("{} on {}: {e}", kind, sc.name))?;
            let got = calls.load(Ordering::SeqCst);
            let want = kind
                .refinement_calls()
                .unwrap_or_else(|| sc.labels.flagged(Dimension::Faithfulness).len() + 1);
            let expected = match kind {
                PipelineKind::P2 | PipelineKind::P3 => 3,
                PipelineKind::Dcr => sc.labels.flagged(Dimension::Faithfulness).len() + 1,
                _ => 1,
            };
            ensure(got == want && got == expected, format!("{kind} on {}: {got} calls, expected {expected}", sc.name))?;

            let reqs = seen.lock().unwrap().clone();
            match kind {
                PipelineKind::P3 => {
                    ensure(result.sessions() == 1, "P3 must stay in one session")?;
                    for (i, r) in reqs.iter().enumerate() {
                        ensure(r.messages.len() == 2 * i + 1, format!("P3 turn {} sees {} messages", i + 1, r.messages.len()))?;
                        if i > 0 {
                            let prev = &reqs[i - 1].messages;
                            ensure(r.messages[..prev.len()] == prev[..], "P3 history rewritten")?;
                            ensure(r.messages[prev.len()].role == Role::Assistant, "P3 history lacks the reply")?;
                        }
                    }
                    ensure(result.transcript.len() == 6, "P3 transcript incomplete")?;
                }
                PipelineKind::P2 => {
                    ensure(result.sessions() == 3, "P2 must use three sessions")?;
                    ensure(reqs.iter().all(|r| r.messages.len() == 1), "P2 session carried history")?;
                    for s in 0..3 {
                        ensure(result.session(s).len() == 2, format!("P2 session {s} is not one exchange"))?;
                    }
                }
                _ => {}
            }
            checked += 1;
        }
    }

    // the boxed summary of the training-format example is extracted verbatim
    in_paper(&["the staff informs him that the registration fee is 7 yuan.\\}\\}"])?;
    let raw = format!("<think>\nreasoning\n</think>\n\n<answer>\n**Final Revised Summary:**\n\\[ \\boxed{{\\text{{{TOURIST}}}}} \\]\n</answer>");
    let (_, revised) = parse_refeed_output(&raw).map_err(|e| e.to_string())?;
    ensure(revised == TOURIST, format!("boxed extraction gave {revised:?}"))?;
    let teacher = ModelHandle::new("t", Arc::new(ScriptedBackend::new([raw.as_str()])), CallParams::default());
    let labels = &scenarios()[1].labels;
    let input = RefineInput { document: &doc, summary: &summary, keyfacts: &keyfacts, labels };
    let r = refinery::pipeline::run_refeed(input, Dimension::ALL, &teacher).map_err(|e| e.to_string())?;
    ensure(r.revised.text() == TOURIST, "ReFeed revised summary differs from the boxed text")?;
    Ok(format!("{checked} pipeline runs with expected call counts; boxed summary verbatim"))
}

fn order_policies() -> Check {
    let random = OrderPolicy::RandomPerSample { seed: 1 };
    let orders = all_orders();
    let mut counts = [0usize; 6];
    let draws: Vec<_> = (0..6000u64).map(|i| choose_order(&random, i)).collect();
    for o in &draws {
        counts[orders.iter().position(|p| p == o).unwrap()] += 1;
    }
    for last in Dimension::ALL {
        let p = OrderPolicy::LastFixed { last, seed: 1 };
        let seen: BTreeSet<_> = (0..6000u64).map(|i| choose_order(&p, i)).collect();
        ensure(seen.iter().all(|o| o[2] == last), format!("last-{last} misplaced"))?;
        ensure(seen.len() == 2, format!("last-{last} does not vary the first two"))?;
    }
    let again: Vec<_> = (0..6000u64).map(|i| choose_order(&random, i)).collect();
    ensure(draws == again, "same seed, different sequence")?;
    let other: Vec<_> = (0..6000u64).map(|i| choose_order(&OrderPolicy::RandomPerSample { seed: 2 }, i)).collect();
    ensure(draws != other, "seed has no effect")?;

    let chi2: f64 = counts.iter().map(|&c| (c as f64 - 1000.0).powi(2) / 1000.0).sum();
    for (i, c) in counts.iter().enumerate() {
        let share = *c as f64 / 6000.0;
        ensure(
            (share - 1.0 / 6.0).abs() <= 0.05 / 6.0,
            format!("permutation {i}: {c} of 6000 is outside 1/6 ± 5% (counts {counts:?}, chi2 {chi2:.1} on 5 df)"),
        )?;
    }
    Ok(format!("counts {counts:?}, chi2 {chi2:.1} on 5 df"))
}

fn qc_truth_table() -> Check {
    let s = |f: (u64, u64), c: (u64, u64), n: (u64, u64)| scores(frac(f.0, f.1), frac(c.0, c.1), frac(n.0, n.1));
    // (before, after, strict, expected)
    let cases = [
        (s((9, 10), (1, 2), (7, 10)), s((1, 1), (6, 10), (7, 10)), false, true),
        (s((9, 10), (1, 2), (7, 10)), s((1, 1), (6, 10), (7, 10)), true, false),
        (s((1, 2), (1, 2), (1, 2)), s((9, 10), (8, 10), (9, 10)), false, false),
        (s((1, 1), (6, 10), (7, 10)), s((1, 1), (7, 10), (8, 10)), true, false),
        (s((1, 1), (6, 10), (7, 10)), s((1, 1), (7, 10), (8, 10)), false, true),
        (s((1, 2), (1, 4), (1, 4)), s((1, 1), (1, 2), (1, 2)), false, true),
        (s((1, 2), (1, 4), (1, 4)), s((1, 1), (1, 2), (1, 2)), true, true),
        (s((1, 2), (1, 4), (1, 4)), s((1, 1), (2, 5), (3, 5)), false, false),
        (s((1, 2), (1, 4), (1, 4)), s((1, 1), (3, 5), (2, 5)), false, false),
        (s((1, 1), (4, 5), (4, 5)), s((1, 1), (7, 10), (9, 10)), false, false),
        (s((1, 2), (1, 2), (1, 2)), s((1, 1), (1, 1), (1, 1)), true, true),
        (s((1, 1), (1, 1), (1, 1)), s((1, 1), (1, 1), (1, 1)), false, true),
    ];
    for (i, (before, after, strict, want)) in cases.iter().enumerate() {
        let v = verification_filter(before, after, *strict);
        ensure(v.passed == *want, format!("case {}: got {} ({})", i + 1, v.passed, v.reason))?;
        ensure(v.passed == v.reason.is_empty(), format!("case {}: reason {:?}", i + 1, v.reason))?;
    }

    // every emitted record re-verifies against the recorded tape
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let tape = dir.path().join("tape.jsonl");
    let corpus = load_corpus(fixture("corpus/tiny.jsonl")).map_err(|e| e.to_string())?;
    let config = BuildConfig::default();
    let build = {
        let rec: Arc<dyn ChatBackend> =
            Arc::new(CachedBackend::with_tape(SimulatedBackend::new(), &tape).map_err(|e| e.to_string())?);
        build_with(&corpus, &config, rec)
    };
    ensure(!build.records.is_empty(), "no record passed both filters")?;
    let replay: Arc<dyn ChatBackend> = Arc::new(ReplayBackend::open(&tape).map_err(|e| e.to_string())?);
    let verifier = Evaluator::new(ModelHandle::new("sim", replay, CallParams::default()));
    for r in &build.records {
        let entry = corpus
            .entries
            .iter()
            .find(|e| e.document.id == r.meta.doc_id)
            .ok_or("record names an unknown document")?;
        let (_, text) = parse_refeed_output(r.assistant()).map_err(|e| e.to_string())?;
        let revised = SummaryRecord::from_text(r.meta.doc_id.clone(), r.meta.summarizer.clone(), &text).map_err(|e| e.to_string())?;
        let keyfacts = entry.keyfacts.as_ref().ok_or("fixture lacks key facts")?;
        let eval = verifier
            .evaluate(&entry.document, &revised, keyfacts)
            .map_err(|e| format!("{}: {e}", r.meta.record_id))?;
        ensure(Some(eval.scores) == r.meta.after, format!("{}: replayed scores differ", r.meta.record_id))?;
        ensure(
            verification_filter(&r.meta.before, &eval.scores, config.strict_delta).passed,
            format!("{}: fails re-verification", r.meta.record_id),
        )?;
    }
    Ok(format!("12 cases exact; {} emitted records re-verified from the tape", build.records.len()))
}

fn build_with(corpus: &Corpus, config: &BuildConfig, backend: Arc<dyn ChatBackend>) -> refinery::databuild::DatasetBuild {
    let h = ModelHandle::new("sim", backend, CallParams::default());
    let evaluator = Evaluator::new(h.clone());
    let models = BuildModels {
        summarizers: std::slice::from_ref(&h),
        detector: &evaluator,
        teacher: &h,
        verifier: &evaluator,
        counter: &ApproxTokenCounter,
    };
    build_dataset(corpus, config, &models)
}

fn bootstrap() -> Check {
    let cfg = |b: u64, seed: u64| BootstrapConfig::new(b, seed).with_mode(BootstrapMode::MonteCarlo);
    let base: Vec<f64> = (0..50).map(|i| 0.2 + 0.01 * i as f64).collect();
    let plus: Vec<f64> = base.iter().map(|x| x + 0.1).collect();
    let b = ScoreSeries::unkeyed("before", base.clone()).unwrap();
    let t = ScoreSeries::unkeyed("after", plus).unwrap();
    let shifted = stats::paired_bootstrap(&b, &t, &cfg(10_000, 1)).map_err(|e| e.to_string())?;
    ensure(shifted.p_value < 0.001, format!("constant shift p = {}", shifted.p_value))?;
    let same = stats::paired_bootstrap(&b, &b, &cfg(10_000, 1)).map_err(|e| e.to_string())?;
    ensure(same.p_value > 0.9, format!("identical series p = {}", same.p_value))?;

    // d = (+1, -1, 0)
    let b3 = ScoreSeries::unkeyed("before", vec![0.0, 1.0, 0.5]).unwrap();
    let t3 = ScoreSeries::unkeyed("after", vec![1.0, 0.0, 0.5]).unwrap();
    let exact = stats::paired_bootstrap(&b3, &t3, &BootstrapConfig::new(10_000, 3).with_mode(BootstrapMode::Exhaustive))
        .map_err(|e| e.to_string())?;
    let mc = stats::paired_bootstrap(&b3, &t3, &cfg(10_000, 3)).map_err(|e| e.to_string())?;
    ensure(
        (exact.p_value - mc.p_value).abs() <= 0.02,
        format!("exhaustive {} vs Monte Carlo {}", exact.p_value, mc.p_value),
    )?;

    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let datasets = 200;
    let mut rejections = 0;
    for k in 0..datasets {
        let base: Vec<f64> = (0..30).map(|_| rng.random_range(0.2..0.8)).collect();
        let noisy: Vec<f64> = base.iter().map(|x| x + rng.random_range(-0.1..0.1)).collect();
        let b = ScoreSeries::unkeyed("b", base).unwrap();
        let t = ScoreSeries::unkeyed("t", noisy).unwrap();
        let r = stats::paired_bootstrap(&b, &t, &cfg(2_000, k)).map_err(|e| e.to_string())?;
        rejections += usize::from(r.significant);
    }
    let rate = rejections as f64 / datasets as f64;
    ensure((0.01..=0.10).contains(&rate), format!("null rejection rate {rate}"))?;
    Ok(format!(
        "shift p={}, identical p={}, n=3 exhaustive {:.4} vs MC {:.4}, null rejection {:.3}",
        shifted.p_value, same.p_value, exact.p_value, mc.p_value, rate
    ))
}

fn determinism() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let tape = dir.path().join("tape.jsonl");
    let corpus_path = fixture("corpus/tiny.jsonl");
    let corpus = load_corpus(&corpus_path).map_err(|e| e.to_string())?;
    let config = Config::simulated();
    let mut plan = ExperimentPlan::single_backend(&corpus_path, "sim", PipelineKind::all(), 11);
    plan.policies = vec![OrderPolicy::RandomPerSample { seed: 11 }];
    plan.concurrency = 4;
    let build_cfg = BuildConfig { seed: 11, ..BuildConfig::default() };

    let run = |backend: Arc<dyn ChatBackend>, out: &Path| -> Result<String, String> {
        let backends = refinery::backend::Backends::new().with("sim", backend.clone());
        let outcome = run_experiment(&plan, &corpus, &backends, &config).map_err(|e| e.to_string())?;
        ensure(outcome.records.iter().all(|r| r.succeeded()), "a record failed")?;
        write_outputs(&outcome, out).map_err(|e| e.to_string())?;
        let build = build_with(&corpus, &build_cfg, backend);
        std::fs::write(out.join("train.jsonl"), build.records_jsonl()).map_err(|e| e.to_string())?;
        Ok(outcome.manifest.run_id.to_string())
    };

    {
        let rec: Arc<dyn ChatBackend> =
            Arc::new(CachedBackend::with_tape(SimulatedBackend::new(), &tape).map_err(|e| e.to_string())?);
        run(rec, &dir.path().join("recorded"))?;
    }
    for name in ["replay-1", "replay-2"] {
        let replay: Arc<dyn ChatBackend> = Arc::new(ReplayBackend::open(&tape).map_err(|e| e.to_string())?);
        run(replay, &dir.path().join(name))?;
    }
    let files = ["outcomes.jsonl", "report.md", "report.csv", "train.jsonl"];
    for f in files {
        let read = |d: &str| std::fs::read(dir.path().join(d).join(f)).unwrap();
        let (a, b, c) = (read("recorded"), read("replay-1"), read("replay-2"));
        ensure(!a.is_empty(), format!("{f} is empty"))?;
        ensure(b == c, format!("{f} differs between replays"))?;
        ensure(a == b, format!("{f} differs between recording and replay"))?;
    }
    Ok(format!("{} byte-identical across two strict replays", files.join(", ")))
}

fn main() {
    let start = Instant::now();
    let criteria: Vec<(&str, fn() -> Check)> = vec![
        ("metric oracle", metric_oracle),
        ("paper arithmetic", paper_arithmetic),
        ("faithfulness/conciseness worked example", worked_example),
        ("feedback rendering", feedback_rendering),
        ("pipeline structure", pipeline_structure),
        ("order policies", order_policies),
        ("quality-control truth table", qc_truth_table),
        ("bootstrap", bootstrap),
        ("determinism end-to-end", determinism),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(msg)
        });
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name}: {why}");
            }
        }
    }
    // every backend above is simulated, scripted or replayed
    let elapsed = start.elapsed();
    if elapsed < Duration::from_secs(120) {
        println!("PASS  offline test budget: acceptance ran offline in {:.1} s", elapsed.as_secs_f64());
    } else {
        failed += 1;
        println!("FAIL  offline test budget: {:.1} s", elapsed.as_secs_f64());
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
}
