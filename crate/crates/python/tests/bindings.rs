use std::ffi::CString;
use std::sync::Once;

use groundprover_py::groundprover_py;
use pyo3::prelude::*;
use pyo3::types::PyDict;

static INIT: Once = Once::new();

fn fixture(name: &str) -> String {
    format!("{}/../core/tests/fixtures/{name}", env!("CARGO_MANIFEST_DIR"))
}

/// Runs `code` with the module imported as `gp`.
fn run(code: &str) {
    INIT.call_once(|| {
        pyo3::append_to_inittab!(groundprover_py);
        Python::initialize();
    });
    Python::attach(|py| {
        let globals = PyDict::new(py);
        globals.set_item("gp", py.import("groundprover_py").unwrap()).unwrap();
        globals.set_item("CORPUS", fixture("corpus.json")).unwrap();
        globals.set_item("SCRIPT", fixture("mock_script.json")).unwrap();
        let code = CString::new(code).unwrap();
        if let Err(e) = py.run(&code, Some(&globals), None) {
            e.print(py);
            panic!("python code failed");
        }
    });
}

#[test]
fn mentions_and_normalization() {
    run(r#"
m = gp.parse_mentions("[[Definition:Even_Integer|even]]")
assert len(m) == 1
assert (m[0].kind, m[0].target_title, m[0].surface) == ("definition", "Even_Integer", "even")
assert m[0].canonical_title() == "Definition:Even Integer"
assert (m[0].start, m[0].end) == (0, 32)
assert gp.normalize("[[Definition:Even_Integer|even]]") == "even"
assert gp.normalize_title("A__b  c") == "A b c"
assert gp.segment_proof("a\n\nb") == ["a", "b"]
"#);
}

#[test]
fn metrics() {
    run(r#"
assert gp.gleu("a b", "a b c") == 0.5
assert gp.token_f1("a b", "a b") == 1.0
p, r, f = gp.ref_prf(["A", "B"], ["A", "B", "C"])
assert abs(p - 1) < 1e-12 and abs(r - 2 / 3) < 1e-12 and abs(f - 0.8) < 1e-12
assert gp.ref_prf([], []) == (1.0, 1.0, 1.0)
assert abs(gp.pearson([1, 2, 3, 4], [2, 1, 4, 3]) - 0.6) < 1e-10
try:
    gp.pearson([1, 1, 1], [1, 2, 3])
    raise AssertionError("expected ValueError")
except ValueError:
    pass
v = gp.value_scores([2, 1, 0], [-1, -2, -4], 0.5)
assert all(abs(a - b) < 1e-12 for a, b in zip(v, [0.375, 0.0, -0.5]))
"#);
}

#[test]
fn corpus_and_decode() {
    run(r#"
c = gp.Corpus.load(CORPUS)
assert len(c) > 0
ids = c.theorem_ids("test")
assert 6 in ids
assert c.gold_proof(6)
s = c.score(6, "\n\n".join(c.gold_proof(6)))
assert s["gleu"] == 1.0 and s["halluc"] == 0.0
b = gp.MockBackend.from_file(SCRIPT, 7)
p1 = gp.decode(c, 6, b, "stepwisepp")
p2 = gp.decode(c, 6, gp.MockBackend.from_file(SCRIPT, 7), "stepwisepp")
assert p1.terminated and p1.steps == p2.steps and p1.trace_json == p2.trace_json
assert b.usage()[1] == p1.samples
g = gp.decode(c, 6, gp.MockBackend.from_file(SCRIPT, 7), "greedy")
assert g.samples == 1
try:
    gp.decode(c, 6, b, "beam")
    raise AssertionError("expected ValueError")
except ValueError:
    pass
try:
    c.title(99999)
    raise AssertionError("expected KeyError")
except KeyError:
    pass
"#);
}
