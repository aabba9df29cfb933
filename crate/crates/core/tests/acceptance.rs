//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each,
//! and exits non-zero if any failed.

mod common;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::routing::post;
use axum::{Json, Router};
use common::{case, l};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use ucagents::backend::{
    record_session, replay_session, BackendError, ChatBackend, LiveConfig, OpenAiCompatibleBackend, Recording,
    RetryPolicy, ScriptedBackend,
};
use ucagents::harness::runner::transcript_path;
use ucagents::harness::{run_benchmark, BackendProvider, DatasetRecord, RunOptions, RunReport, ScriptPlan, Subset};
use ucagents::metrics::{format_tokens_k, parse_tokens_k, trajectory_entropy, LedgerRow, UsageLedger};
use ucagents::prompts::{parse_report, ParseError, ParsedReport, Stage};
use ucagents::protocol::{
    route_after_tier1, route_after_tier2, route_letters_after_tier1, route_letters_after_tier2, run_case, AgentReport,
    AgentRole, CaseImage, Destination, Engine, EngineConfig, EventKind, MedicalCase, OptionLetter, ProtocolError, Route,
    RouteStage, Transcript,
};

type Outcome = Result<String, String>;
type Criterion<'a> = (&'static str, Duration, Box<dyn Fn() -> Outcome + 'a>);

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn letter(i: usize) -> OptionLetter {
    OptionLetter::from_index(i).unwrap()
}

fn engine() -> Engine {
    Engine::with_bundled_templates(EngineConfig { model_id: "scripted".into(), ..EngineConfig::default() })
}

// 1. Routing oracle equivalence.

fn report(role: AgentRole, h: OptionLetter) -> AgentReport {
    AgentReport { role, hypothesis: h, reasoning: String::new(), temperature: 0.0, raw_text: String::new() }
}

fn routing_oracle() -> Outcome {
    let mut pairs = 0usize;
    for size in 2..=26 {
        for a in 0..size {
            for b in 0..size {
                let (x, y) = (letter(a), letter(b));
                pairs += 1;

                let got = route_letters_after_tier1(x, y);
                let via_reports = route_after_tier1(&report(AgentRole::Tier1Expert(1), x), &report(AgentRole::Tier1Expert(2), y));
                check(got == via_reports, || format!("tier-1 report/letter mismatch at {x},{y}"))?;
                let (dest, cands) = if a == b { (Destination::Tier2, None) } else { (Destination::Tier3, Some((x, y))) };
                check(
                    got.stage == RouteStage::AfterTier1 && got.destination == dest && got.divergence == (a != b) && got.candidates == cands,
                    || format!("tier-1 routing wrong for {x},{y}: {got:?}"),
                )?;

                let got = route_letters_after_tier2(x, y);
                let via_report = route_after_tier2(x, &report(AgentRole::Tier2Supervisor, y));
                check(got == via_report, || format!("tier-2 report/letter mismatch at {x},{y}"))?;
                let (dest, cands) = if a == b { (Destination::Terminate, None) } else { (Destination::Tier3, Some((x, y))) };
                check(
                    got.stage == RouteStage::AfterTier2 && got.destination == dest && got.divergence == (a != b) && got.candidates == cands,
                    || format!("tier-2 routing wrong for {x},{y}: {got:?}"),
                )?;
            }
        }
    }
    Ok(format!("{pairs} ordered pairs per rule"))
}

// 2. Call-count reproduction.

fn expected_stages(route: Route) -> Vec<Stage> {
    let tier3 = [
        Stage::Critic,
        Stage::Critic,
        Stage::LeaderInquiry,
        Stage::CriticResponse,
        Stage::CriticResponse,
        Stage::LeaderVerdict,
    ];
    let mut v = vec![Stage::Tier1, Stage::Tier1];
    match route {
        Route::T1T2 => v.push(Stage::Tier2),
        Route::T1T3 => v.extend(tier3),
        Route::T1T2T3 => {
            v.push(Stage::Tier2);
            v.extend(tier3);
        }
    }
    v
}

async fn call_counts() -> Outcome {
    let cases = [
        (Route::T1T2, ScriptPlan::unanimous(l('C'))),
        (Route::T1T3, ScriptPlan { tier1: (l('A'), l('D')), supervisor: l('A'), leader: l('D'), usage: None }),
        (Route::T1T2T3, ScriptPlan { tier1: (l('B'), l('B')), supervisor: l('A'), leader: l('B'), usage: None }),
    ];
    let mut seen = Vec::new();
    for (route, plan) in cases {
        let out = engine()
            .run_case(&case("count", 4), &plan.backend())
            .await
            .map_err(|e| format!("{route}: {e}"))?;
        let t = &out.transcript;
        let stages: Vec<Stage> = t.model_calls().map(|c| c.stage).collect();
        check(out.verdict.route_taken == route, || format!("expected {route}, took {}", out.verdict.route_taken))?;
        check(stages.len() == route.model_calls(), || format!("{route}: {} calls", stages.len()))?;
        check(stages == expected_stages(route), || format!("{route}: call order {stages:?}"))?;
        let v = t.violations();
        check(v.is_empty(), || format!("{route}: {v:?}"))?;

        // Routing events sit between the tiers they separate.
        let kinds: Vec<&str> = t
            .events
            .iter()
            .map(|e| match &e.kind {
                EventKind::ModelCall(c) => match c.stage {
                    Stage::Tier1 => "t1",
                    Stage::Tier2 => "t2",
                    _ => "t3",
                },
                EventKind::ParseOutcome(_) => "p",
                EventKind::Routing(_) => "route",
                EventKind::Verdict(_) => "verdict",
            })
            .filter(|k| *k != "p")
            .collect();
        let expected: Vec<&str> = match route {
            Route::T1T2 => vec!["t1", "t1", "route", "t2", "route", "verdict"],
            Route::T1T3 => [vec!["t1", "t1", "route"], vec!["t3"; 6], vec!["verdict"]].concat(),
            Route::T1T2T3 => [vec!["t1", "t1", "route", "t2", "route"], vec!["t3"; 6], vec!["verdict"]].concat(),
        };
        check(kinds == expected, || format!("{route}: event order {kinds:?}"))?;
        seen.push(format!("{route}={}", stages.len()));
    }
    Ok(seen.join(" "))
}

// 3. Stance immutability and one inquiry round under randomized scripts.

const GARBAGE: &[&str] = &["I cannot tell from this image.", "#Answer: maybe", ""];

/// Script with random letters and random malformed outputs that force
/// parse retries. Returns the backend and the answer the protocol must reach.
fn random_script(rng: &mut ChaCha8Rng, n_options: usize) -> (ScriptedBackend, OptionLetter) {
    let pick = |rng: &mut ChaCha8Rng| letter(rng.random_range(0..n_options));
    let mut backend = ScriptedBackend::new(vec![]);
    let mut positions: HashMap<String, usize> = HashMap::new();
    let mut say = |backend: ScriptedBackend, rng: &mut ChaCha8Rng, agent: &str, text: String| {
        let mut b = backend;
        let pos = positions.entry(agent.to_string()).or_insert(0);
        if rng.random_bool(0.2) {
            *pos += 1;
            b = b.respond_at(agent, *pos, GARBAGE[rng.random_range(0..GARBAGE.len())]);
        }
        if rng.random_bool(0.1) {
            // A well-formed answer naming a letter the case does not offer.
            *pos += 1;
            b = b.respond_at(agent, *pos, "#Reasoning: x #Answer: Z #Final Reasoning: x #Final Answer: Z");
        }
        *pos += 1;
        b.respond_at(agent, *pos, text)
    };
    let (h1, h2) = (pick(rng), if rng.random_bool(0.5) { None } else { Some(pick(rng)) });
    let h2 = h2.unwrap_or(h1);
    let sup = if rng.random_bool(0.5) { h1 } else { pick(rng) };
    let leader = pick(rng);
    backend = say(backend, rng, "tier1_expert_1", format!("#Reasoning: first look. #Answer: {h1}"));
    backend = say(backend, rng, "tier1_expert_2", format!("#Reasoning: second look. #Answer: {h2}"));
    backend = say(backend, rng, "tier2_supervisor", format!("#Review Reasoning: review. #Answer: {sup}"));
    let candidates = if h1 != h2 {
        Some((h1, h2))
    } else if sup != h1 {
        Some((h1, sup))
    } else {
        None
    };
    let Some((a, b)) = candidates else {
        return (backend, sup);
    };
    backend = say(backend, rng, "critic_1", format!("#Flaws: risk in {a}. Counter Evidence: rim."));
    backend = say(backend, rng, "critic_2", format!("#Flaws: risk in {b}. Counter Evidence: halo."));
    backend = say(
        backend,
        rng,
        "leader",
        format!("Inquiries:@ To Expert 1 who reviews {a}: why? @ To Expert 2 who reviews {b}: why not?"),
    );
    backend = say(backend, rng, "critic_1", "Because of the rim.".into());
    backend = say(backend, rng, "critic_2", "Because of the halo.".into());
    backend = say(backend, rng, "leader", format!("#Final Reasoning: weighed both. #Final Answer: {leader}"));
    (backend, leader)
}

fn stance_and_inquiry_check(t: &Transcript) -> Result<(), String> {
    let mut stances: BTreeMap<AgentRole, BTreeSet<OptionLetter>> = BTreeMap::new();
    let mut inquired: BTreeMap<u8, usize> = BTreeMap::new();
    let mut rounds = 0;
    for (role, _, fields) in t.accepted() {
        if let Some(h) = fields.hypothesis() {
            stances.entry(role).or_default().insert(h);
        }
        if let ParsedReport::Inquiries { inquiries } = fields {
            rounds += 1;
            for q in inquiries {
                *inquired.entry(q.addressed_to).or_default() += 1;
            }
        }
    }
    check(stances.values().all(|s| s.len() == 1), || format!("{}: stance changed {stances:?}", t.case_id))?;
    check(rounds <= 1, || format!("{}: {rounds} inquiry rounds", t.case_id))?;
    check(inquired.values().all(|n| *n == 1), || format!("{}: critic inquired twice {inquired:?}", t.case_id))
}

async fn stance_immutability() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5EED_0003);
    let engine = engine();
    let (mut retried, mut failed, mut tier3) = (0, 0, 0);
    for i in 0..1000 {
        let n_options = rng.random_range(2..=6);
        let (backend, expected) = random_script(&mut rng, n_options);
        let c = case(&format!("r{i}"), n_options);
        let t = match engine.run_case(&c, &backend).await {
            Ok(out) => {
                check(out.verdict.answer == expected, || format!("r{i}: answered {} not {expected}", out.verdict.answer))?;
                out.transcript
            }
            Err(f) => {
                check(matches!(f.error, ProtocolError::ParseExhausted { .. } | ProtocolError::InquiryMismatch { .. }), || {
                    format!("r{i}: unexpected failure {}", f.error)
                })?;
                failed += 1;
                f.transcript
            }
        };
        if t.model_calls().any(|c| c.attempt > 0) {
            retried += 1;
        }
        if t.model_calls().any(|c| c.stage == Stage::LeaderInquiry) {
            tier3 += 1;
        }
        stance_and_inquiry_check(&t)?;
        let v = t.violations();
        check(v.is_empty(), || format!("r{i}: {v:?}"))?;
    }
    Ok(format!("1000 cases, {tier3} reached Tier-3, {retried} with retries, {failed} exhausted a retry budget"))
}

// 4. Entropy against a brute-force oracle.

fn entropy_oracle(letters: &[u8]) -> f64 {
    // H = log2(n) - (1/n) Σ c·log2(c), counting by repeated scans.
    let n = letters.len() as f64;
    let mut seen = Vec::new();
    let mut acc = 0.0;
    for &x in letters {
        if seen.contains(&x) {
            continue;
        }
        seen.push(x);
        let c = letters.iter().filter(|&&y| y == x).count() as f64;
        acc += c * c.log2();
    }
    n.log2() - acc / n
}

fn entropy_metric() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5EED_0004);
    let mut worst = 0.0f64;
    for _ in 0..10_000 {
        let size = rng.random_range(1..=10);
        let alphabet = rng.random_range(1..=6);
        let raw: Vec<u8> = (0..size).map(|_| rng.random_range(0..alphabet)).collect();
        let letters: Vec<OptionLetter> = raw.iter().map(|&i| letter(i as usize)).collect();
        let got = trajectory_entropy(&letters).map_err(|e| e.to_string())?.entropy_bits;
        let diff = (got - entropy_oracle(&raw)).abs();
        worst = worst.max(diff);
        check(diff <= 1e-12, || format!("{raw:?}: {got} vs oracle {}", entropy_oracle(&raw)))?;
    }
    for n in 1..=10 {
        let unanimous = vec![l('B'); n];
        let h = trajectory_entropy(&unanimous).unwrap().entropy_bits;
        check(h == 0.0, || format!("unanimous {n}: {h}"))?;
    }
    let h = trajectory_entropy(&[l('A'), l('B')]).unwrap().entropy_bits;
    check(h == 1.0, || format!("balanced pair: {h}"))?;
    let h = trajectory_entropy(&[l('A'), l('A'), l('B'), l('B')]).unwrap().entropy_bits;
    check(h == 1.0, || format!("balanced quadruple: {h}"))?;
    Ok(format!("10000 multisets, max |error| {worst:.1e} bits"))
}

// 5. Ledger exactness and thousands rendering.

fn ledger_exactness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5EED_0005);
    let roles = [
        AgentRole::Tier1Expert(1),
        AgentRole::Tier1Expert(2),
        AgentRole::Tier2Supervisor,
        AgentRole::Critic(1),
        AgentRole::Critic(2),
        AgentRole::Leader,
    ];
    for _ in 0..500 {
        let n = rng.random_range(0..60);
        let mut ledger = UsageLedger::default();
        let (mut si, mut so, mut se) = (0u64, 0u64, 0u64);
        let mut per_role: BTreeMap<String, (u64, u64, u64)> = BTreeMap::new();
        for _ in 0..n {
            let role = roles[rng.random_range(0..roles.len())];
            let (i, o) = (rng.random_range(0..200_000u64), rng.random_range(0..20_000u64));
            let estimated = rng.random_bool(0.3);
            si += i;
            so += o;
            se += u64::from(estimated);
            let e = per_role.entry(role.label()).or_default();
            e.0 += i;
            e.1 += o;
            e.2 += 1;
            ledger.push(LedgerRow { role, stage: Stage::Tier1, input_tokens: i, output_tokens: o, estimated });
        }
        let t = ledger.totals;
        check(t.input_tokens == si && t.output_tokens == so && t.api_calls == n && t.estimated_calls == se, || {
            format!("totals {t:?} vs sums ({si}, {so}, {n}, {se})")
        })?;
        for (role, totals) in ledger.by_role() {
            let (i, o, c) = per_role[&role];
            check(totals.input_tokens == i && totals.output_tokens == o && totals.api_calls == c, || {
                format!("{role}: {totals:?}")
            })?;
        }

        let rendered = format_tokens_k(si, so);
        let back = parse_tokens_k(&rendered).ok_or_else(|| format!("cannot parse {rendered}"))?;
        let to_tens = |x: u64| (x + 5) / 10 * 10;
        check(back == (to_tens(si), to_tens(so)), || format!("{rendered} read back as {back:?} for ({si}, {so})"))?;
        let (ti, to) = (si / 10 * 10, so / 10 * 10);
        check(parse_tokens_k(&format_tokens_k(ti, to)) == Some((ti, to)), || format!("({ti}, {to}) not identity"))?;
    }
    check(format_tokens_k(4400, 370) == "4.40/0.37", || format_tokens_k(4400, 370))?;
    check(parse_tokens_k("4.40/0.37") == Some((4400, 370)), || "4.40/0.37 parse".into())?;
    Ok("500 random streams; renders exact at 10-token resolution".into())
}

// 6. Grammar corpus.

enum Expect {
    Answer(char),
    Risk,
    Targets(char, char),
    Response,
}

fn accepted_corpus() -> Vec<(Stage, &'static str, Expect)> {
    use Expect::*;
    use Stage::*;
    vec![
        (Tier1, "#Reasoning: The lesion is well circumscribed. The margins are smooth. #Answer: B", Answer('B')),
        (Tier1, "#Reasoning: Diffuse ground-glass opacity. #Answer: A.", Answer('A')),
        (Tier1, "#Reasoning: Cardiomegaly is present.\n#Answer: C", Answer('C')),
        (Tier1, "#reasoning: lowercase markers still count. #answer: d", Answer('D')),
        (Tier1, "#Reasoning: <3-5 sentences of reasoning> #Answer: <a single letter of your choice, e.g. A or B.>.\n#Reasoning: Real text after the echo. #Answer: B", Answer('B')),
        (Tier1, "# Reasoning : spaced markers. # Answer : (E)", Answer('E')),
        (Tier1, "#Reasoning: Option B fits.\n#Answer: **B**", Answer('B')),
        (Tier1, "#Reasoning: Yes, consistent.\n#Answer: A\nThis is my final choice for the case.", Answer('A')),
        (Tier1, "Some preamble.\n#Reasoning: Nodular pattern. #Answer: C", Answer('C')),
        (Tier2, "#Review Reasoning: The observed image evidence supports the prior judgments. #Answer: A", Answer('A')),
        (Tier2, "#Review Reasoning: The consensus overlooks a pleural effusion. #Answer: C.", Answer('C')),
        (Tier2, "#Review Reasoning: <Write a rigorous 3-5 sentence paragraph> #Answer: <a single letter of your choice, e.g. A or B>.\n#Review Reasoning: Reaffirmed. #Answer: B", Answer('B')),
        (Tier2, "#review reasoning: lowercase. #answer: b", Answer('B')),
        (Tier2, "#Reasoning: a supervisor dropping the Review word. #Answer: D", Answer('D')),
        (Critic, "#Flaws: The hypothesis ignores the rim sign. Counter Evidence: The rim is thin and irregular.", Risk),
        (Critic, "#Flaws: Overconfident reading. #Counter Evidence: The image shows calcification.", Risk),
        (Critic, "#Flaws: <Describe the specific logical flaw> Counter Evidence: <Cite specific evidence>.\n#Flaws: Real flaw. Counter Evidence: Real evidence.", Risk),
        (Critic, "#flaws: lower case. counter evidence: also lower case.", Risk),
        (Critic, "#Flaws: Misses the halo.\nCounter-Evidence: No halo is visible.", Risk),
        (LeaderInquiry, "Inquiries:@ To Expert 1 who reviews A: Why is the rim decisive? @ To Expert 2 who reviews B: Is the halo artefactual?", Targets('A', 'B')),
        (LeaderInquiry, "Inquiries:\n@ To Expert 1 who reviews C: What about the margins?\n@ To Expert 2 who reviews A: What about density?", Targets('C', 'A')),
        (LeaderInquiry, "@ To Expert 2 who reviews B: Second first? @ To Expert 1 who reviews D: First second?", Targets('D', 'B')),
        (LeaderInquiry, "Inquiries:@ To Expert 1 who reviews option A: Q1? @ To Expert 2 who reviews option B: Q2?", Targets('A', 'B')),
        (LeaderInquiry, "Inquiries:@ to expert 1 who reviews (a): lower? @ to expert 2 who reviews (b): case?", Targets('A', 'B')),
        (LeaderInquiry, "Inquiries:@To Expert 1, who reviews E: spacing? @To Expert 2, who reviews F: commas?", Targets('E', 'F')),
        (CriticResponse, "The rim sign remains the decisive risk for option A.", Response),
        (CriticResponse, "  I keep my stance: the halo is real.  ", Response),
        (LeaderVerdict, "#Final Reasoning: Option B survived its critique better than A. #Final Answer: B", Answer('B')),
        (LeaderVerdict, "#Final Reasoning: Neither candidate survived; the overlooked option fits. #Final Answer: C.", Answer('C')),
        (LeaderVerdict, "#Final Reasoning: <A report, within 6-8 sentences> #Final Answer: <Only the single letter of your choice, e.g., A or B>.\n#Final Reasoning: Real. #Final Answer: A", Answer('A')),
        (LeaderVerdict, "#final reasoning: lower. #final answer: (d)", Answer('D')),
        (LeaderVerdict, "#Final Reasoning: Compared both critiques.\n#Final Answer: A\n", Answer('A')),
    ]
}

fn malformed_corpus() -> Vec<(Stage, &'static str, ParseError)> {
    use ParseError::*;
    use Stage::*;
    vec![
        (Tier1, "#Reasoning: no answer given.", MarkerMissing("#Answer")),
        (Tier1, "#Answer: A", MarkerMissing("#Reasoning")),
        (Tier1, "#Reasoning:   #Answer: A", EmptyField("#Reasoning")),
        (Tier1, "#Reasoning: torn. #Answer: A or B", AnswerNotALetter("A or B".into())),
        (Tier1, "#Reasoning: numeric. #Answer: 3", AnswerNotALetter("3".into())),
        (Tier1, "#Reasoning: blank answer. #Answer:", AnswerNotALetter(String::new())),
        (Tier1, "#Reasoning: worded. #Answer: Option C", AnswerNotALetter("Option C".into())),
        (Tier2, "#Review Reasoning: supervisor forgot.", MarkerMissing("#Answer")),
        (Tier2, "#Review Reasoning: spelled out. #Answer: effusion", AnswerNotALetter("effusion".into())),
        (LeaderVerdict, "#Final Reasoning: wrong marker. #Answer: A", MarkerMissing("#Final Answer")),
        (LeaderVerdict, "#Final Answer: A", MarkerMissing("#Final Reasoning")),
        (LeaderVerdict, "#Final Reasoning: x #Final Answer: none", AnswerNotALetter("none".into())),
        (Critic, "#Flaws: only flaws.", MarkerMissing("Counter Evidence")),
        (Critic, "Counter Evidence: only evidence.", MarkerMissing("#Flaws")),
        (Critic, "#Flaws: Counter Evidence: evidence.", EmptyField("#Flaws")),
        (Critic, "#Flaws: a flaw. Counter Evidence:  ", EmptyField("Counter Evidence")),
        (LeaderInquiry, "I have no questions.", WrongArity(0)),
        (LeaderInquiry, "Inquiries:@ To Expert 1 who reviews A: only one?", WrongArity(1)),
        (
            LeaderInquiry,
            "@ To Expert 1 who reviews A: a? @ To Expert 2 who reviews B: b? @ To Expert 3 who reviews C: c?",
            WrongArity(3),
        ),
        (LeaderInquiry, "@ To Expert 1 who reviews A: a? @ To Expert 1 who reviews B: b?", DuplicateExpert(1)),
        (LeaderInquiry, "@ To Expert 1 who reviews A: a? @ To Expert 3 who reviews B: b?", UnknownExpert(3)),
        (
            LeaderInquiry,
            "@ To Expert one who reviews A: a? @ To Expert 2 who reviews B: b?",
            UnparsableHeader("@ To Expert one who reviews A: a?".into()),
        ),
        (LeaderInquiry, "@ To Expert 1 who reviews A: @ To Expert 2 who reviews B: b?", EmptyField("inquiry question")),
        (CriticResponse, "   \n ", EmptyField("response")),
    ]
}

fn grammar_corpus() -> Outcome {
    let accepted = accepted_corpus();
    check(accepted.len() >= 30, || format!("only {} fixtures", accepted.len()))?;
    for (stage, text, expect) in &accepted {
        let parsed = parse_report(text, *stage).map_err(|e| format!("{stage:?} rejected {text:?}: {e}"))?;
        let ok = match (expect, &parsed) {
            (Expect::Answer(c), p) => p.hypothesis() == Some(l(*c)),
            (Expect::Risk, ParsedReport::Risk { flaws, counter_evidence }) => !flaws.is_empty() && !counter_evidence.is_empty(),
            (Expect::Targets(a, b), ParsedReport::Inquiries { inquiries }) => {
                inquiries.len() == 2
                    && inquiries[0].addressed_to == 1
                    && inquiries[0].reviewed_option == l(*a)
                    && inquiries[1].reviewed_option == l(*b)
                    && inquiries.iter().all(|q| !q.question.is_empty())
            }
            (Expect::Response, ParsedReport::Response { text }) => !text.is_empty(),
            _ => false,
        };
        check(ok, || format!("{stage:?} parsed {text:?} as {parsed:?}"))?;
        // The canonical rendering parses back to the same fields.
        let again = parse_report(&parsed.to_canonical(*stage), *stage);
        check(again.as_ref() == Ok(&parsed), || format!("{stage:?} canonical form of {text:?} changed: {again:?}"))?;
    }
    let malformed = malformed_corpus();
    for (stage, text, expected) in &malformed {
        let got = parse_report(text, *stage);
        check(got.as_ref() == Err(expected), || format!("{stage:?} {text:?}: expected {expected:?}, got {got:?}"))?;
    }
    Ok(format!("{} accepted, {} rejected with typed errors", accepted.len(), malformed.len()))
}

// 7. Determinism and record/replay.

fn scripted_provider(plans: Arc<HashMap<String, ScriptPlan>>) -> Arc<dyn BackendProvider> {
    Arc::new(move |case_id: &str, _trial: u32| -> Result<Arc<dyn ChatBackend>, BackendError> {
        Ok(Arc::new(plans[case_id].backend()))
    })
}

fn text_records(n: usize, options: usize, gold: impl Fn(usize) -> OptionLetter) -> Vec<DatasetRecord> {
    (0..n)
        .map(|i| DatasetRecord {
            case_id: format!("s{i:05}"),
            image_path: None,
            question: format!("Synthetic question {i}?"),
            options: (0..options).map(|k| format!("choice {k}")).collect(),
            gold: gold(i),
            subset: if i % 2 == 0 { Subset::Closed } else { Subset::Open },
            field_hint: None,
        })
        .collect()
}

/// Answers every stage by recognising its template, like a model that
/// always picks A except as supervisor.
async fn live_shaped_server() -> (String, Arc<AtomicUsize>) {
    let hits = Arc::new(AtomicUsize::new(0));
    let counter = hits.clone();
    let handler = move |Json(body): Json<Value>| {
        let counter = counter.clone();
        async move {
            counter.fetch_add(1, Ordering::SeqCst);
            let messages = body["messages"].as_array().cloned().unwrap_or_default();
            let last = messages.last().map(|m| m["content"].to_string()).unwrap_or_default();
            let text = if last.contains("#Final Answer") {
                "#Final Reasoning: A survived its audit. #Final Answer: A".to_string()
            } else if last.contains("do not change your stance") {
                "The critique stands.".to_string()
            } else if last.contains("Inquiries:@") {
                let risk = last.rsplit("[Critics on Assessments]").next().unwrap_or_default();
                let target = |n: u32| {
                    let key = format!("Expert {n} who reviews ");
                    risk.find(&key).and_then(|i| risk[i + key.len()..].chars().next()).unwrap_or('?')
                };
                format!("Inquiries:@ To Expert 1 who reviews {}: why? @ To Expert 2 who reviews {}: why?", target(1), target(2))
            } else if last.contains("#Flaws:") {
                "#Flaws: possible overcall. Counter Evidence: faint margin.".to_string()
            } else if last.contains("#Review Reasoning") {
                "#Review Reasoning: The consensus overlooks B. #Answer: B".to_string()
            } else {
                "#Reasoning: Looks like A. #Answer: A".to_string()
            };
            Json(json!({
                "choices": [{ "message": { "role": "assistant", "content": text } }],
                "usage": { "prompt_tokens": 50 + last.len() as u64 / 4, "completion_tokens": text.len() as u64 / 4 }
            }))
        }
    };
    let app = Router::new().route("/v1/chat/completions", post(handler));
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
    (format!("http://{addr}/v1"), hits)
}

async fn determinism_and_replay() -> Outcome {
    // Byte-stable scripted runs.
    let mut rng = ChaCha8Rng::seed_from_u64(0x5EED_0007);
    let records = text_records(60, 4, |_| l('A'));
    let plans: HashMap<String, ScriptPlan> = records
        .iter()
        .map(|r| {
            let mut pick = || letter(rng.random_range(0..4));
            let plan = ScriptPlan { tier1: (pick(), pick()), supervisor: pick(), leader: pick(), usage: None };
            (r.case_id.clone(), plan)
        })
        .collect();
    let plans = Arc::new(plans);
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut reports = Vec::new();
    for run in ["a", "b"] {
        let options = RunOptions { output_dir: Some(dir.path().join(run)), max_parallel: 8, ..RunOptions::default() };
        let report = run_benchmark(&records, &engine(), scripted_provider(plans.clone()), &options)
            .await
            .map_err(|e| e.to_string())?;
        reports.push(serde_json::to_string(&report).unwrap());
    }
    check(reports[0] == reports[1], || "reports differ between runs".into())?;
    for r in &records {
        let load = |run: &str| {
            Transcript::load(&transcript_path(&dir.path().join(run), &r.case_id, 1)).map(|t| t.without_timing().to_json())
        };
        let (a, b) = (load("a").map_err(|e| e.to_string())?, load("b").map_err(|e| e.to_string())?);
        check(a == b, || format!("{} transcript differs", r.case_id))?;
    }

    // Record a live-shaped HTTP session and replay it offline.
    let (url, hits) = live_shaped_server().await;
    let live = OpenAiCompatibleBackend::new(LiveConfig {
        base_url: url,
        api_key: None,
        timeout: Duration::from_secs(5),
        retry: RetryPolicy { max_retries: 1, initial_backoff: Duration::from_millis(1), ..RetryPolicy::default() },
        max_in_flight: 4,
    })
    .map_err(|e| e.to_string())?;
    let recorder = record_session(Arc::new(live));
    let config = EngineConfig { model_id: "vlm".into(), ..EngineConfig::default() };
    let original_case = case("live", 4);
    let original = run_case(&original_case, &config, &recorder).await.map_err(|e| e.to_string())?;
    check(original.verdict.route_taken == Route::T1T2T3, || format!("live session took {}", original.verdict.route_taken))?;
    let recording: Recording = recorder.recording();
    let calls = hits.load(Ordering::SeqCst);
    check(recording.calls.len() == calls && calls == 9, || format!("{} recorded of {calls}", recording.calls.len()))?;
    let json = serde_json::to_string(&recording).unwrap();
    let recording: Recording = serde_json::from_str(&json).unwrap();

    let replayed = run_case(&original_case, &config, &replay_session(recording.clone())).await.map_err(|e| e.to_string())?;
    check(replayed.verdict == original.verdict, || "replayed verdict differs".into())?;
    check(hits.load(Ordering::SeqCst) == calls, || "replay reached the network".into())?;
    check(replayed.transcript.without_timing() == original.transcript.without_timing(), || "replayed transcript differs".into())?;

    let mut mutations: Vec<(&str, MedicalCase, EngineConfig)> = Vec::new();
    let mut c = original_case.clone();
    c.question.push_str(" (revised)");
    mutations.push(("question", c, config.clone()));
    let mut c = original_case.clone();
    c.options[2].1 = "a different finding".into();
    mutations.push(("option text", c, config.clone()));
    let c = original_case.clone().with_image(CaseImage::new("image/png", vec![9, 9, 9]));
    mutations.push(("image bytes", c, config.clone()));
    let mut cfg = config.clone();
    cfg.prompt.medical_field = "dermatology".into();
    mutations.push(("prompt context", original_case.clone(), cfg));
    let mut cfg = config.clone();
    cfg.tier3_inquiry_temperature = 0.2;
    mutations.push(("temperature", original_case.clone(), cfg));
    let mut cfg = config.clone();
    cfg.model_id = "other-model".into();
    mutations.push(("model", original_case.clone(), cfg));
    for (what, c, cfg) in mutations {
        let err = run_case(&c, &cfg, &replay_session(recording.clone())).await.err();
        let diverged = matches!(
            err.as_ref().map(|f| &f.error),
            Some(ProtocolError::Backend(BackendError::ReplayDivergence { .. }))
        );
        check(diverged, || format!("{what} mutation not detected: {:?}", err.map(|f| f.error)))?;
    }
    Ok("60-case run byte-stable; 9-call live session replayed; 6 mutations detected".into())
}

// 8. Synthetic benchmark accuracy.

const OPTIONS: usize = 4;

fn noisy_letter(rng: &mut ChaCha8Rng, gold: usize, p: f64) -> usize {
    if rng.random_bool(p) {
        gold
    } else {
        let wrong = rng.random_range(0..OPTIONS - 1);
        if wrong >= gold { wrong + 1 } else { wrong }
    }
}

/// Draws one case's agent answers: Tier-1 pair, supervisor, leader.
fn draw(rng: &mut ChaCha8Rng, gold: usize, p: f64) -> [usize; 4] {
    [0; 4].map(|_| noisy_letter(rng, gold, p))
}

/// Independent model of the deliberation state machine.
fn oracle_answer([e1, e2, sup, leader]: [usize; 4]) -> usize {
    if e1 != e2 {
        leader
    } else if sup == e1 {
        sup
    } else {
        leader
    }
}

fn monte_carlo(p: f64, seed: u64, n: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut correct = 0;
    for _ in 0..n {
        let gold = rng.random_range(0..OPTIONS);
        correct += usize::from(oracle_answer(draw(&mut rng, gold, p)) == gold);
    }
    100.0 * correct as f64 / n as f64
}

async fn harness_accuracy(p: f64, seed: u64, n: usize) -> Result<RunReport, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut golds = Vec::with_capacity(n);
    let mut plans = HashMap::with_capacity(n);
    for i in 0..n {
        let gold = rng.random_range(0..OPTIONS);
        let [e1, e2, sup, leader] = draw(&mut rng, gold, p);
        golds.push(gold);
        plans.insert(
            format!("s{i:05}"),
            ScriptPlan { tier1: (letter(e1), letter(e2)), supervisor: letter(sup), leader: letter(leader), usage: Some((1, 1)) },
        );
    }
    let records = text_records(n, OPTIONS, |i| letter(golds[i]));
    let options = RunOptions { max_parallel: 16, ..RunOptions::default() };
    run_benchmark(&records, &engine(), scripted_provider(Arc::new(plans)), &options)
        .await
        .map_err(|e| e.to_string())
}

async fn synthetic_accuracy() -> Outcome {
    let oracle_report = harness_accuracy(1.0, 0x5EED_0008, 500).await?;
    let acc = oracle_report.trial(1).and_then(|t| t.full_accuracy);
    check(acc == Some(100.0), || format!("oracle agents scored {acc:?}"))?;
    check(oracle_report.failed_cases == 0, || "oracle run had failures".into())?;

    let mut notes = vec!["oracle agents 100.0%".to_string()];
    for (k, p) in [0.4, 0.6, 0.8].into_iter().enumerate() {
        let k = k as u64;
        let report = harness_accuracy(p, 0x5EED_0108 + k, 10_000).await?;
        check(report.failed_cases == 0, || format!("p={p}: {} failed cases", report.failed_cases))?;
        let measured = report.trial(1).and_then(|t| t.full_accuracy).ok_or("no accuracy")?;
        let expected = monte_carlo(p, 0x5EED_0208 + k, 10_000);
        check((measured - expected).abs() <= 2.0, || format!("p={p}: harness {measured:.2}% vs oracle {expected:.2}%"))?;
        notes.push(format!("p={p}: {measured:.2}% vs {expected:.2}%"));
    }
    Ok(notes.join("; "))
}

// 9. Cost shape over Tier-1 agreement rates.

async fn cost_shape() -> Outcome {
    const N: usize = 400;
    const PER_CALL: (u64, u64) = (120, 30);
    let mut rng = ChaCha8Rng::seed_from_u64(0x5EED_0009);
    let mut means = Vec::new();
    for rate in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let agreeing = (rate * N as f64).round() as usize;
        let mut order: Vec<usize> = (0..N).collect();
        for i in (1..N).rev() {
            order.swap(i, rng.random_range(0..=i));
        }
        let mut plans = HashMap::new();
        for (rank, &i) in order.iter().enumerate() {
            let plan = if rank < agreeing {
                // One in four agreeing cases is challenged by the supervisor.
                let sup = if rank % 4 == 0 { l('B') } else { l('A') };
                ScriptPlan { tier1: (l('A'), l('A')), supervisor: sup, leader: l('A'), usage: Some(PER_CALL) }
            } else {
                ScriptPlan { tier1: (l('A'), l('C')), supervisor: l('A'), leader: l('A'), usage: Some(PER_CALL) }
            };
            plans.insert(format!("s{i:05}"), plan);
        }
        let records = text_records(N, 4, |_| l('A'));
        let options = RunOptions { max_parallel: 16, ..RunOptions::default() };
        let report = run_benchmark(&records, &engine(), scripted_provider(Arc::new(plans)), &options)
            .await
            .map_err(|e| e.to_string())?;
        let mean = report.mean_calls_per_case.ok_or("no mean")?;
        let challenged = agreeing.div_ceil(4);
        let expected = (3 * (agreeing - challenged) + 9 * challenged + 8 * (N - agreeing)) as f64 / N as f64;
        check((mean - expected).abs() < 1e-12, || format!("rate {rate}: mean {mean} vs {expected}"))?;
        check((3.0..=9.0).contains(&mean), || format!("rate {rate}: mean {mean} outside [3, 9]"))?;
        let calls = report.usage.totals.api_calls;
        check(
            report.usage.totals.input_tokens == calls * PER_CALL.0 && report.usage.totals.output_tokens == calls * PER_CALL.1,
            || format!("rate {rate}: token totals not proportional to calls"),
        )?;
        means.push((rate, mean));
    }
    check(means.windows(2).all(|w| w[1].1 < w[0].1), || format!("not decreasing: {means:?}"))?;
    Ok(means.iter().map(|(r, m)| format!("{r}:{m:.2}")).collect::<Vec<_>>().join(" "))
}

fn main() {
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build().unwrap();
    let criteria: Vec<Criterion> = vec![
        ("routing oracle equivalence", Duration::from_secs(1), Box::new(routing_oracle)),
        ("call-count reproduction", Duration::from_secs(1), Box::new(|| rt.block_on(call_counts()))),
        ("stance immutability and one-round inquiry", Duration::from_secs(10), Box::new(|| rt.block_on(stance_immutability()))),
        ("entropy metric", Duration::from_secs(5), Box::new(entropy_metric)),
        ("ledger exactness", Duration::from_secs(1), Box::new(ledger_exactness)),
        ("grammar corpus", Duration::from_secs(1), Box::new(grammar_corpus)),
        ("determinism and record/replay", Duration::from_secs(5), Box::new(|| rt.block_on(determinism_and_replay()))),
        ("synthetic benchmark accuracy", Duration::from_secs(60), Box::new(|| rt.block_on(synthetic_accuracy()))),
        ("cost-shape sanity", Duration::from_secs(30), Box::new(|| rt.block_on(cost_shape()))),
    ];
    let mut failures = 0;
    for (i, (name, budget, run)) in criteria.iter().enumerate() {
        let started = Instant::now();
        let outcome = run();
        let elapsed = started.elapsed();
        let outcome = match outcome {
            Ok(detail) if elapsed > *budget => Err(format!("{detail}; took {elapsed:.2?}, budget {budget:?}")),
            other => other,
        };
        match outcome {
            Ok(detail) => println!("PASS {} {name} ({elapsed:.2?}): {detail}", i + 1),
            Err(why) => {
                failures += 1;
                println!("FAIL {} {name} ({elapsed:.2?}): {why}", i + 1);
            }
        }
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failures, criteria.len());
    if failures > 0 {
        std::process::exit(1);
    }
}
