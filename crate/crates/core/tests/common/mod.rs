#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use groundprover::corpus::{load_corpus, Corpus, CorpusFormat, RefKind, Reference};
use groundprover::decoder::{DecodeConfig, SearchTrace};
use groundprover::harness::{AnnotationRecord, FineError, StepCorrect};
use groundprover::lmbackend::{Continuation, MockScript};

pub fn fixture_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn golden_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name)
}

pub fn fixture_corpus() -> Corpus {
    load_corpus(&fixture_path("corpus.json"), CorpusFormat::Json).expect("fixture corpus loads")
}

pub fn toks(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_string).collect()
}

// ---------------------------------------------------------------------------
// Brute-force metric oracles.

fn all_ngrams(tokens: &[String], n: usize) -> Vec<Vec<String>> {
    let mut out = Vec::new();
    if tokens.len() < n {
        return out;
    }
    for i in 0..=tokens.len() - n {
        let mut g = Vec::new();
        for j in 0..n {
            g.push(tokens[i + j].clone());
        }
        out.push(g);
    }
    out
}

fn count_in(grams: &[Vec<String>], g: &[String]) -> usize {
    grams.iter().filter(|x| x.as_slice() == g).count()
}

pub fn oracle_gleu(hyp: &[String], reference: &[String]) -> f64 {
    if hyp.is_empty() {
        return if reference.is_empty() { 1.0 } else { 0.0 };
    }
    if reference.is_empty() {
        return 0.0;
    }
    let (mut matches, mut hyp_total, mut ref_total) = (0usize, 0usize, 0usize);
    for n in 1..=4 {
        let hg = all_ngrams(hyp, n);
        let rg = all_ngrams(reference, n);
        hyp_total += hg.len();
        ref_total += rg.len();
        let mut done: Vec<Vec<String>> = Vec::new();
        for g in &hg {
            if done.contains(g) {
                continue;
            }
            done.push(g.clone());
            matches += count_in(&hg, g).min(count_in(&rg, g));
        }
    }
    let p = matches as f64 / hyp_total as f64;
    let r = matches as f64 / ref_total as f64;
    if p < r {
        p
    } else {
        r
    }
}

pub fn oracle_token_f1(hyp: &[String], reference: &[String]) -> f64 {
    if hyp.is_empty() && reference.is_empty() {
        return 1.0;
    }
    if hyp.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let mut seen: Vec<&String> = Vec::new();
    let mut overlap = 0usize;
    for t in hyp {
        if seen.contains(&t) {
            continue;
        }
        seen.push(t);
        let a = hyp.iter().filter(|x| *x == t).count();
        let b = reference.iter().filter(|x| *x == t).count();
        overlap += a.min(b);
    }
    if overlap == 0 {
        return 0.0;
    }
    let p = overlap as f64 / hyp.len() as f64;
    let r = overlap as f64 / reference.len() as f64;
    2.0 * p * r / (p + r)
}

/// Sample Pearson r by the textbook formula.
pub fn oracle_pearson(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let sx: f64 = xs.iter().sum();
    let sy: f64 = ys.iter().sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| x * y).sum();
    let sxx: f64 = xs.iter().map(|x| x * x).sum();
    let syy: f64 = ys.iter().map(|y| y * y).sum();
    (n * sxy - sx * sy) / ((n * sxx - sx * sx).sqrt() * (n * syy - sy * sy).sqrt())
}

// ---------------------------------------------------------------------------
// Scripted search trees.
//
// A tree fixture is a product tree: every node at depth d offers the same
// options `levels[d]`. Each option lists the titles it mentions by hand, so
// the oracle below never parses wikitext.

#[derive(Clone, Debug)]
pub struct Opt {
    pub text: &'static str,
    pub weight: f64,
    pub mentions: &'static [&'static str],
}

pub const fn opt(text: &'static str, weight: f64, mentions: &'static [&'static str]) -> Opt {
    Opt { text, weight, mentions }
}

#[derive(Clone, Debug)]
pub struct TreeFixture {
    pub name: &'static str,
    pub theorem: Reference,
    /// Constraint titles, canonical form.
    pub constraints: Vec<String>,
    pub levels: Vec<Vec<Opt>>,
    /// Every option of every reachable node is expected to be sampled.
    pub full_sampling: bool,
    pub greedy_steps: Vec<&'static str>,
    pub stepwisepp_steps: Vec<&'static str>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Node {
    pub steps: Vec<String>,
    pub logprob: f64,
    pub mentions: BTreeSet<String>,
    pub terminated: bool,
}

impl Node {
    pub fn text(&self) -> String {
        self.steps.join("\n\n")
    }

    pub fn coverage(&self, constraints: &BTreeSet<String>) -> usize {
        self.mentions.intersection(constraints).count()
    }
}

impl TreeFixture {
    pub fn constraint_set(&self) -> BTreeSet<String> {
        self.constraints.iter().cloned().collect()
    }

    pub fn script(&self) -> MockScript {
        let last = self.levels.len() - 1;
        let chunk = |depth: usize, o: &Opt| {
            let lead = if depth == 0 { " " } else { "" };
            if depth == last {
                Continuation::ending(format!("{lead}{} </proof>", o.text), o.weight)
            } else {
                Continuation::new(format!("{lead}{}\n\n", o.text), o.weight)
            }
        };
        let mut script = MockScript::new().rule("<proof>", self.levels[0].iter().map(|o| chunk(0, o)).collect());
        for d in 0..last {
            for o in &self.levels[d] {
                script = script.rule(
                    format!("{}\n\n", o.text),
                    self.levels[d + 1].iter().map(|c| chunk(d + 1, c)).collect(),
                );
            }
        }
        script
    }

    fn level_logprob(&self, depth: usize, i: usize) -> f64 {
        let total: f64 = self.levels[depth].iter().map(|o| o.weight).sum();
        (self.levels[depth][i].weight / total).ln()
    }

    pub fn children(&self, node: &Node) -> Vec<Node> {
        let d = node.steps.len();
        (0..self.levels[d].len())
            .map(|i| {
                let o = &self.levels[d][i];
                let mut steps = node.steps.clone();
                steps.push(o.text.to_string());
                let mut mentions = node.mentions.clone();
                mentions.extend(o.mentions.iter().map(|m| m.to_string()));
                Node {
                    steps,
                    logprob: node.logprob + self.level_logprob(d, i),
                    mentions,
                    terminated: d + 1 == self.levels.len(),
                }
            })
            .collect()
    }

    pub fn root() -> Node {
        Node {
            steps: Vec::new(),
            logprob: 0.0,
            mentions: BTreeSet::new(),
            terminated: false,
        }
    }

    /// Every node of the tree, keyed by text.
    pub fn all_nodes(&self) -> BTreeMap<String, Node> {
        let mut out = BTreeMap::new();
        let mut frontier = vec![Self::root()];
        while let Some(n) = frontier.pop() {
            if !n.terminated {
                frontier.extend(self.children(&n));
            }
            if !n.steps.is_empty() {
                out.insert(n.text(), n);
            }
        }
        out
    }

    pub fn leaves(&self) -> Vec<Node> {
        self.all_nodes().into_values().filter(|n| n.terminated).collect()
    }

    /// Highest-probability path, taking the first option on ties.
    pub fn greedy_path(&self) -> Node {
        let mut node = Self::root();
        while !node.terminated {
            let kids = self.children(&node);
            let mut best = 0;
            for (i, k) in kids.iter().enumerate() {
                if k.logprob > kids[best].logprob {
                    best = i;
                }
            }
            node = kids[best].clone();
        }
        node
    }
}

pub fn oracle_values(nodes: &[Node], constraints: &BTreeSet<String>, alpha: f64) -> Vec<f64> {
    let mut cmax: f64 = 1e-12;
    let mut lmax: f64 = 1e-12;
    for n in nodes {
        cmax = cmax.max(n.coverage(constraints) as f64);
        lmax = lmax.max(n.logprob.abs());
    }
    nodes
        .iter()
        .map(|n| alpha * (n.coverage(constraints) as f64 / cmax) + (1.0 - alpha) * (n.logprob / lmax))
        .collect()
}

/// Top-`quota` per alpha, unioned in cluster order.
pub fn oracle_select(nodes: &[Node], constraints: &BTreeSet<String>, clusters: &[(f64, usize)]) -> Vec<usize> {
    let mut chosen: Vec<usize> = Vec::new();
    for &(alpha, quota) in clusters {
        let v = oracle_values(nodes, constraints, alpha);
        let mut idx: Vec<usize> = (0..nodes.len()).collect();
        // insertion sort: value desc, logprob desc, text asc
        for i in 1..idx.len() {
            let mut j = i;
            while j > 0 {
                let (a, b) = (idx[j - 1], idx[j]);
                let better = v[b] > v[a]
                    || (v[b] == v[a] && nodes[b].logprob > nodes[a].logprob)
                    || (v[b] == v[a] && nodes[b].logprob == nodes[a].logprob && nodes[b].text() < nodes[a].text());
                if better {
                    idx.swap(j - 1, j);
                    j -= 1;
                } else {
                    break;
                }
            }
        }
        for &i in idx.iter().take(quota) {
            if !chosen.contains(&i) {
                chosen.push(i);
            }
        }
    }
    chosen
}

/// Result of simulating the beam over a fully sampled tree.
pub struct BeamOracle {
    /// Per iteration: the pool texts and the selected texts.
    pub iterations: Vec<(BTreeSet<String>, BTreeSet<String>)>,
    pub final_node: Node,
}

pub fn oracle_beam(fx: &TreeFixture, clusters: &[(f64, usize)], final_alpha: f64) -> BeamOracle {
    let constraints = fx.constraint_set();
    let mut beam = vec![TreeFixture::root()];
    let mut iterations = Vec::new();
    while beam.iter().any(|n| !n.terminated) {
        let mut pool: Vec<Node> = beam.iter().filter(|n| n.terminated).cloned().collect();
        for n in beam.iter().filter(|n| !n.terminated) {
            for c in fx.children(n) {
                if let Some(existing) = pool.iter_mut().find(|p| p.text() == c.text() && p.terminated == c.terminated) {
                    if c.logprob > existing.logprob {
                        *existing = c;
                    }
                } else {
                    pool.push(c);
                }
            }
        }
        let sel = oracle_select(&pool, &constraints, clusters);
        iterations.push((
            pool.iter().map(Node::text).collect(),
            sel.iter().map(|&i| pool[i].text()).collect(),
        ));
        beam = sel.into_iter().map(|i| pool[i].clone()).collect();
    }
    let best = oracle_select(&beam, &constraints, &[(final_alpha, 1)])[0];
    BeamOracle {
        iterations,
        final_node: beam[best].clone(),
    }
}

/// Checks a decoder trace against the enumerated tree: every candidate is
/// a tree node with the enumerated log-probability, and every selection
/// matches the selection oracle.
pub fn check_trace_against_tree(fx: &TreeFixture, trace: &SearchTrace, clusters: &[(f64, usize)]) -> Result<(), String> {
    let nodes = fx.all_nodes();
    let constraints = fx.constraint_set();
    let mut prev_selected: BTreeMap<String, bool> = BTreeMap::new();
    for it in &trace.iterations {
        for e in &it.expanded {
            if prev_selected.get(e) == Some(&true) {
                return Err(format!("{}: terminated candidate {e:?} was expanded", fx.name));
            }
        }
        let mut pool = Vec::new();
        for c in &it.candidates {
            let n = nodes
                .get(&c.text)
                .ok_or_else(|| format!("{}: {:?} is not in the tree", fx.name, c.text))?;
            if (n.logprob - c.cum_logprob).abs() > 1e-12 {
                return Err(format!("{}: logprob of {:?}: {} vs {}", fx.name, c.text, c.cum_logprob, n.logprob));
            }
            if n.coverage(&constraints) != c.coverage || n.terminated != c.terminated {
                return Err(format!("{}: coverage or status of {:?}", fx.name, c.text));
            }
            pool.push(n.clone());
        }
        let expect = oracle_select(&pool, &constraints, clusters);
        if expect != it.selected {
            return Err(format!(
                "{}: iteration {} selected {:?}, oracle {:?}",
                fx.name, it.iteration, it.selected, expect
            ));
        }
        prev_selected = it
            .selected
            .iter()
            .map(|&i| (it.candidates[i].text.clone(), it.candidates[i].terminated))
            .collect();
    }
    Ok(())
}

fn theorem(title: &str, content: &str) -> Reference {
    Reference::new(100, RefKind::Theorem, title, vec![content.to_string()])
}

const EVEN: &str = "Definition:Even Integer";
const ODD: &str = "Definition:Odd Integer";

/// Fixtures where every constraint-covering option is less likely than a
/// non-covering sibling.
pub fn coverage_fixtures() -> Vec<TreeFixture> {
    vec![
        TreeFixture {
            name: "even_plus_five",
            theorem: theorem("Even Integer Plus 5 is Odd", "Let $x$ be even. Then $x + 5$ is odd."),
            constraints: vec![EVEN.into(), ODD.into()],
            levels: vec![
                vec![
                    opt("Let $x$ be even.", 0.55, &[]),
                    opt("By [[Definition:Even_Integer|definition]], $x = 2 k$.", 0.45, &[EVEN]),
                ],
                vec![
                    opt("Hence $x + 5$ is odd.", 0.55, &[]),
                    opt("So $x + 5 = 2 (k + 2) + 1$ is [[Definition:Odd Integer|odd]].", 0.45, &[ODD]),
                ],
            ],
            full_sampling: true,
            greedy_steps: vec!["Let $x$ be even.", "Hence $x + 5$ is odd."],
            stepwisepp_steps: vec![
                "By [[Definition:Even_Integer|definition]], $x = 2 k$.",
                "So $x + 5 = 2 (k + 2) + 1$ is [[Definition:Odd Integer|odd]].",
            ],
        },
        TreeFixture {
            name: "sum_of_evens",
            theorem: theorem("Sum of Even Integers is Even", "Let $x, y$ be even. Then $x + y$ is even."),
            constraints: vec![
                EVEN.into(),
                "Integer Multiplication Distributes over Addition".into(),
                "Integer Addition is Closed".into(),
            ],
            levels: vec![
                vec![
                    opt("Let $x$ and $y$ be even.", 0.55, &[]),
                    opt("Let $x = 2 a$ and $y = 2 b$ by [[Definition:Even Integer|definition]].", 0.45, &[EVEN]),
                ],
                vec![
                    opt("Then $x + y = 2 a + 2 b$.", 0.6, &[]),
                    opt(
                        "By [[Integer Multiplication Distributes over Addition]], $x + y = 2 (a + b)$.",
                        0.4,
                        &["Integer Multiplication Distributes over Addition"],
                    ),
                ],
                vec![
                    opt("Thus $x + y$ is even.", 0.55, &[]),
                    opt(
                        "As $a + b$ is an integer by [[Integer_Addition_is_Closed]], $x + y$ is even.",
                        0.45,
                        &["Integer Addition is Closed"],
                    ),
                ],
            ],
            full_sampling: true,
            greedy_steps: vec![
                "Let $x$ and $y$ be even.",
                "Then $x + y = 2 a + 2 b$.",
                "Thus $x + y$ is even.",
            ],
            stepwisepp_steps: vec![
                "Let $x = 2 a$ and $y = 2 b$ by [[Definition:Even Integer|definition]].",
                "By [[Integer Multiplication Distributes over Addition]], $x + y = 2 (a + b)$.",
                "As $a + b$ is an integer by [[Integer_Addition_is_Closed]], $x + y$ is even.",
            ],
        },
        TreeFixture {
            name: "hallucinated_shortcut",
            theorem: theorem("Odd Integer Plus 1 is Even", "Let $x$ be odd. Then $x + 1$ is even."),
            constraints: vec![ODD.into()],
            levels: vec![
                vec![
                    opt("By [[Lemma:Odd Shift]], $x + 1$ is even.", 0.55, &["Lemma:Odd Shift"]),
                    opt("By [[Definition:Odd Integer|definition]], $x = 2 k + 1$.", 0.45, &[ODD]),
                ],
                vec![opt("The result follows.", 1.0, &[])],
            ],
            full_sampling: true,
            greedy_steps: vec!["By [[Lemma:Odd Shift]], $x + 1$ is even.", "The result follows."],
            stepwisepp_steps: vec!["By [[Definition:Odd Integer|definition]], $x = 2 k + 1$.", "The result follows."],
        },
        TreeFixture {
            name: "late_coverage",
            theorem: theorem("Square of Odd Integer is Odd", "Let $n$ be odd. Then $n^2$ is odd."),
            constraints: vec![ODD.into()],
            levels: vec![
                vec![opt("Let $n = 2 m + 1$.", 1.0, &[])],
                vec![
                    opt("Then $n^2 = 4 m^2 + 4 m + 1$.", 0.4, &[]),
                    opt("Then $n^2 = 2 (2 m^2 + 2 m) + 1$.", 0.33, &[]),
                    opt("Then $n^2 = 2 (2 m^2 + 2 m) + 1$, which is [[Definition:Odd Integer|odd]].", 0.27, &[ODD]),
                ],
                vec![opt("Hence the claim.", 1.0, &[])],
            ],
            full_sampling: true,
            greedy_steps: vec!["Let $n = 2 m + 1$.", "Then $n^2 = 4 m^2 + 4 m + 1$.", "Hence the claim."],
            stepwisepp_steps: vec![
                "Let $n = 2 m + 1$.",
                "Then $n^2 = 2 (2 m^2 + 2 m) + 1$, which is [[Definition:Odd Integer|odd]].",
                "Hence the claim.",
            ],
        },
        TreeFixture {
            name: "unreachable_definition",
            theorem: theorem("Prime Greater than 2 is Odd", "Let $p > 2$ be prime. Then $p$ is odd."),
            constraints: vec!["Definition:Prime Number".into()],
            levels: vec![
                vec![
                    opt("Suppose $p$ is even.", 0.9995, &[]),
                    opt(
                        "By [[Definition:Prime Number|definition]], $p$ has exactly two divisors.",
                        0.0005,
                        &["Definition:Prime Number"],
                    ),
                ],
                vec![opt("Then $2$ divides $p$, a contradiction.", 1.0, &[])],
            ],
            full_sampling: false,
            greedy_steps: vec!["Suppose $p$ is even.", "Then $2$ divides $p$, a contradiction."],
            stepwisepp_steps: vec!["Suppose $p$ is even.", "Then $2$ divides $p$, a contradiction."],
        },
        TreeFixture {
            name: "unreachable_closing",
            theorem: theorem("Double of Integer is Even", "Let $n$ be an integer. Then $2 n$ is even."),
            constraints: vec![EVEN.into()],
            levels: vec![
                vec![opt("Let $m = 2 n$.", 1.0, &[])],
                vec![
                    opt("Then $m$ is even.", 0.9998, &[]),
                    opt("Then $m$ is [[Definition:Even Integer|even]].", 0.0002, &[EVEN]),
                ],
            ],
            full_sampling: false,
            greedy_steps: vec!["Let $m = 2 n$.", "Then $m$ is even."],
            stepwisepp_steps: vec!["Let $m = 2 n$.", "Then $m$ is even."],
        },
    ]
}

/// Default stepwise++ clusters as `(alpha, quota)`.
pub fn default_clusters(config: &DecodeConfig) -> Vec<(f64, usize)> {
    config
        .alpha_clusters
        .iter()
        .copied()
        .zip(config.cluster_quotas())
        .collect()
}

/// A random-text script: words, mention words, step breaks and an end
/// marker, so searches branch heavily.
pub fn babble_script(end_weight: f64) -> MockScript {
    let words = [
        "alpha ", "beta ", "gamma ", "delta ", "so ", "hence ", "$x$ ", "$y = 2 k$ ",
    ];
    let mentions = ["[[Definition:Even Integer|even]] ", "[[Definition:Odd Integer|odd]] ", "[[Lemma:Missing]] "];
    let body = |with_breaks: bool| {
        let mut t: Vec<Continuation> = words.iter().map(|w| Continuation::new(*w, 1.0)).collect();
        t.extend(mentions.iter().map(|m| Continuation::new(*m, 0.4)));
        if with_breaks {
            t.push(Continuation::new("\n\n", 2.0));
            t.push(Continuation::ending("</proof>", end_weight));
        }
        t
    };
    let mut script = MockScript::new().rule("<proof>", body(false)).rule("\n\n", body(false));
    for w in words.iter().chain(mentions.iter()) {
        script = script.rule(*w, body(true));
    }
    script
}

// ---------------------------------------------------------------------------
// JSON-schema subset: type, enum, required, properties, items, $ref, oneOf.

pub fn validate_schema(root: &serde_json::Value, schema: &serde_json::Value, value: &serde_json::Value) -> Result<(), String> {
    use serde_json::Value;
    if let Some(Value::String(r)) = schema.get("$ref") {
        let name = r.strip_prefix("#/definitions/").ok_or_else(|| format!("unsupported ref {r}"))?;
        return validate_schema(root, &root["definitions"][name], value);
    }
    if let Some(Value::Array(options)) = schema.get("oneOf") {
        let ok = options.iter().filter(|s| validate_schema(root, s, value).is_ok()).count();
        return if ok == 1 { Ok(()) } else { Err(format!("{value} matches {ok} oneOf branches")) };
    }
    if let Some(t) = schema.get("type") {
        let types: Vec<&str> = match t {
            Value::String(s) => vec![s.as_str()],
            Value::Array(a) => a.iter().filter_map(Value::as_str).collect(),
            _ => return Err("bad type".into()),
        };
        let matches = |ty: &str| match ty {
            "null" => value.is_null(),
            "boolean" => value.is_boolean(),
            "integer" => value.is_u64() || value.is_i64(),
            "number" => value.is_number(),
            "string" => value.is_string(),
            "array" => value.is_array(),
            "object" => value.is_object(),
            _ => false,
        };
        if !types.iter().any(|ty| matches(ty)) {
            return Err(format!("{value} is not of type {types:?}"));
        }
    }
    if let Some(Value::Array(allowed)) = schema.get("enum") {
        if !allowed.contains(value) {
            return Err(format!("{value} is not one of {allowed:?}"));
        }
    }
    if let Value::Object(obj) = value {
        if let Some(Value::Array(req)) = schema.get("required") {
            for k in req.iter().filter_map(Value::as_str) {
                if !obj.contains_key(k) {
                    return Err(format!("missing field {k}"));
                }
            }
        }
        if let Some(Value::Object(props)) = schema.get("properties") {
            for (k, s) in props {
                if let Some(v) = obj.get(k) {
                    validate_schema(root, s, v).map_err(|e| format!("{k}: {e}"))?;
                }
            }
        }
    }
    if let (Value::Array(items), Some(s)) = (value, schema.get("items")) {
        for (i, v) in items.iter().enumerate() {
            validate_schema(root, s, v).map_err(|e| format!("[{i}]: {e}"))?;
        }
    }
    Ok(())
}

pub fn validate_definition(definition: &str, value: &serde_json::Value) -> Result<(), String> {
    let root: serde_json::Value = serde_json::from_str(groundprover::service::RESPONSE_SCHEMA).unwrap();
    let schema = root["definitions"][definition].clone();
    assert!(!schema.is_null(), "no definition {definition}");
    validate_schema(&root, &schema, value)
}

pub const CLOSE_6: &str = "$x + 5$ is odd. </content> </theorem> <proof>";

pub struct StepOption {
    pub text: &'static str,
    pub weight: f64,
    pub end: bool,
}

/// Options offered for each gold step of theorem 6; the first is the most
/// likely and the second reproduces the gold step.
pub fn next_step_tree() -> Vec<(&'static str, Vec<StepOption>)> {
    let o = |text, weight, end| StepOption { text, weight, end };
    vec![
        (
            CLOSE_6,
            vec![
                o(" So it holds.\n\n", 0.5, false),
                o(" By [[Definition:Even Integer|definition]], $x = 2 k$.\n\n", 0.3, false),
                o(" Let $x = 2 k$.\n\n", 0.2, false),
            ],
        ),
        (
            "$x = 2 k$.\n\n",
            vec![
                o("It holds.\n\n", 0.5, false),
                o("Then $x + 5 = 2 (k + 2) + 1$.\n\n", 0.3, false),
                o("Then $x + 5$ is odd.\n\n", 0.2, false),
            ],
        ),
        (
            "+ 1$.\n\n",
            vec![
                o("Done.\n\n", 0.5, false),
                o("So $x + 5$ is [[Definition:Odd Integer|odd]].\n{{qed}} </proof>", 0.3, true),
                o("So it is odd. </proof>", 0.2, true),
            ],
        ),
    ]
}

pub fn option_text(o: &StepOption) -> String {
    let t = o.text.split("</proof>").next().unwrap();
    t.trim().to_string()
}

/// Annotation record; steps without errors count as correct and useful.
pub fn rec(id: u64, step: usize, errors: &[FineError], oc: u8, ou: u8) -> AnnotationRecord {
    AnnotationRecord {
        theorem_id: id,
        step_index: step,
        fine_grained_errors: errors.iter().copied().collect(),
        step_correct: if errors.is_empty() { StepCorrect::Yes } else { StepCorrect::No },
        step_useful: errors.is_empty(),
        overall_correct: oc,
        overall_useful: ou,
    }
}
