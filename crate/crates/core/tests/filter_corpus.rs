use featloom::filter::run_filter_chain;
use serde::Deserialize;

#[derive(Deserialize)]
struct Case {
    expected: String,
    source: String,
}

#[test]
fn corpus_stage_attribution() {
    let schema: Vec<String> = ["gsr", "ecg", "acc"].iter().map(|s| s.to_string()).collect();
    let text = include_str!("data/filter_corpus.ndjson");
    let cases: Vec<Case> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(cases.len(), 50);
    let mut wrong = Vec::new();
    for c in &cases {
        let out = run_filter_chain(&c.source, &schema);
        let got = match out.verdicts.iter().find(|v| !v.passed) {
            Some(v) => v.stage.as_str().to_string(),
            None if out.admitted.len() == 1 => "valid".to_string(),
            None => "nothing admitted".to_string(),
        };
        if got != c.expected {
            wrong.push(format!("{:?}: expected {}, got {got} {:?}", c.source, c.expected, out.verdicts));
        }
    }
    assert!(wrong.is_empty(), "{}", wrong.join("\n"));
    for stage in ["extraction", "name-parameter", "body-content", "constant-return", "valid"] {
        assert_eq!(cases.iter().filter(|c| c.expected == stage).count(), 10);
    }
}
