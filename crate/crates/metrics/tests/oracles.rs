use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tetrad_metrics::*;

fn toks(s: &str) -> Vec<String> {
    tokenize(s)
}

/// Longest common subsequence by trying every subsequence of `a`.
fn brute_lcs(a: &[String], b: &[String]) -> usize {
    let mut best = 0;
    for mask in 0u32..(1 << a.len()) {
        let k = mask.count_ones() as usize;
        if k <= best {
            continue;
        }
        let sub: Vec<&String> = (0..a.len()).filter(|i| mask & (1 << i) != 0).map(|i| &a[i]).collect();
        let mut it = b.iter();
        if sub.iter().all(|x| it.any(|y| y == *x)) {
            best = k;
        }
    }
    best
}

/// BLEU straight from the definition: explicit n-gram lists, linear-scan
/// counting, product of precisions.
fn definition_bleu(c: &[String], r: &[String], max_n: usize) -> f64 {
    if c.is_empty() {
        return 0.0;
    }
    let mut product = 1.0;
    for n in 1..=max_n {
        if c.len() < n {
            return 0.0;
        }
        let cg: Vec<&[String]> = (0..=c.len() - n).map(|i| &c[i..i + n]).collect();
        let rg: Vec<&[String]> = if r.len() >= n { (0..=r.len() - n).map(|i| &r[i..i + n]).collect() } else { vec![] };
        let mut distinct: Vec<&[String]> = Vec::new();
        for g in &cg {
            if !distinct.contains(g) {
                distinct.push(g);
            }
        }
        let clipped: usize = distinct
            .iter()
            .map(|g| {
                let in_c = cg.iter().filter(|x| *x == g).count();
                let in_r = rg.iter().filter(|x| *x == g).count();
                in_c.min(in_r)
            })
            .sum();
        product *= clipped as f64 / cg.len() as f64;
    }
    let bp = (1.0 - r.len() as f64 / c.len() as f64).min(0.0).exp();
    bp * product.powf(1.0 / max_n as f64)
}

fn random_tokens(rng: &mut ChaCha8Rng, max_len: usize, vocab: usize) -> Vec<String> {
    let n = rng.random_range(0..=max_len);
    (0..n).map(|_| format!("w{}", rng.random_range(0..vocab))).collect()
}

#[test]
fn tokenization() {
    assert_eq!(toks("The cat, sat-down!  OK"), vec!["the", "cat", "sat", "down", "ok"]);
    assert_eq!(toks("'C:maj' at 105.5 BPM"), vec!["c", "maj", "at", "105", "5", "bpm"]);
    assert!(toks(" ,. ").is_empty());
}

#[test]
fn bleu_examples() {
    let b = bleu(&toks("the the the"), &toks("the cat"), 1);
    assert_eq!(b.score, 1.0 / 3.0);
    assert_eq!(b.brevity_penalty, 1.0);
    let s = toks("a quick brown fox jumps over");
    assert_eq!(bleu(&s, &s, 4).score, 1.0);
    assert_eq!(bleu(&s, &s, 1).score, 1.0);
    let e = bleu(&[], &s, 4);
    assert_eq!(e.score, 0.0);
    assert!(e.zero_flag);
    // too short for 4-grams: no smoothing, so zero and flagged
    let short = bleu(&toks("a quick"), &s, 4);
    assert_eq!(short.score, 0.0);
    assert!(short.zero_flag);
}

#[test]
fn rouge_examples() {
    let r = rouge_l(&toks("a b c d"), &toks("a x c"));
    assert_eq!((r.precision, r.recall), (0.5, 2.0 / 3.0));
    assert!((r.f1 - 4.0 / 7.0).abs() < 1e-15);
    let s = toks("same words here");
    let id = rouge_l(&s, &s);
    assert_eq!((id.precision, id.recall, id.f1), (1.0, 1.0, 1.0));
    let d = rouge_l(&toks("a b"), &toks("c d"));
    assert_eq!((d.precision, d.recall, d.f1), (0.0, 0.0, 0.0));
    let both = rouge_l(&[], &[]);
    assert!(both.empty_flag && both.f1 == 0.0);
}

#[test]
fn rouge_matches_brute_force_lcs() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for _ in 0..1000 {
        let a = random_tokens(&mut rng, 12, 4);
        let b = random_tokens(&mut rng, 12, 4);
        let l = brute_lcs(&a, &b);
        assert_eq!(lcs_len(&a, &b), l, "{a:?} {b:?}");
        let r = rouge_l(&a, &b);
        if !a.is_empty() {
            assert_eq!(r.precision, l as f64 / a.len() as f64);
        }
        if !b.is_empty() {
            assert_eq!(r.recall, l as f64 / b.len() as f64);
        }
    }
}

#[test]
fn bleu_matches_definition() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut nonzero = 0;
    for _ in 0..1000 {
        let c = random_tokens(&mut rng, 12, 3);
        let r = random_tokens(&mut rng, 12, 3);
        for n in [1, 2, 4] {
            let got = bleu(&c, &r, n).score;
            let want = definition_bleu(&c, &r, n);
            assert!((got - want).abs() <= 1e-12, "{c:?} {r:?} n={n}: {got} vs {want}");
            if n == 4 && got > 0.0 {
                nonzero += 1;
            }
        }
    }
    assert!(nonzero > 50, "oracle should exercise non-zero BLEU-4 ({nonzero})");
}

#[test]
fn report_aggregates_and_files() {
    let items = [("a", "the cat sat", "the cat sat on the mat"), ("b", "", "something"), ("c", "x y z w", "x y z w")];
    let rep = EvalReport::score_all("demo", items, None);
    assert_eq!(rep.aggregate.n, 3);
    let mean = |f: fn(&ExampleScore) -> f64| rep.examples.iter().map(f).sum::<f64>() / 3.0;
    assert_eq!(rep.aggregate.bleu1, mean(|e| e.bleu1));
    assert_eq!(rep.aggregate.bleu, mean(|e| e.bleu));
    assert_eq!(rep.aggregate.rouge_l_f1, mean(|e| e.rouge_l.f1));
    assert!(rep.examples[1].flags.contains(&"empty_candidate".to_string()));
    assert_eq!(rep.examples[2].bleu, 1.0);
    assert!(rep.aggregate.external.is_none());

    let dir = tempfile::tempdir().unwrap();
    let csv_path = dir.path().join("agg.csv");
    EvalReport::write_csv(&[&rep], &csv_path).unwrap();
    let text = std::fs::read_to_string(&csv_path).unwrap();
    assert!(text.starts_with("label,n,failed,bleu1,bleu,rouge_l_p,rouge_l_r,rouge_l_f1\n"));
    let jl = dir.path().join("ex.jsonl");
    rep.write_jsonl(&jl).unwrap();
    assert_eq!(std::fs::read_to_string(&jl).unwrap().lines().count(), 3);
    let js = dir.path().join("rep.json");
    rep.write_json(&js).unwrap();
    assert_eq!(EvalReport::read_json(&js).unwrap(), rep);
    // deterministic
    assert_eq!(EvalReport::score_all("demo", items, None), rep);
}

struct Constant;
impl ExternalScorer for Constant {
    fn name(&self) -> &str {
        "ext"
    }
    fn score(&self, _: &str, _: &str) -> std::result::Result<Triple, String> {
        Ok(Triple { precision: 0.5, recall: 0.5, f1: 0.5 })
    }
}

struct Flaky;
impl ExternalScorer for Flaky {
    fn name(&self) -> &str {
        "flaky"
    }
    fn score(&self, c: &str, _: &str) -> std::result::Result<Triple, String> {
        if c.contains("boom") {
            Err("scorer exploded".into())
        } else {
            Ok(Triple { precision: 1.0, recall: 1.0, f1: 1.0 })
        }
    }
}

#[test]
fn external_scorer_column() {
    let items = [("a", "one two", "one two"), ("b", "boom", "x")];
    let rep = EvalReport::score_all("c", items, Some(&Constant));
    assert_eq!(rep.aggregate.external_name.as_deref(), Some("ext"));
    assert_eq!(rep.aggregate.external.unwrap().f1, 0.5);
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("a.csv");
    EvalReport::write_csv(&[&rep], &p).unwrap();
    assert!(std::fs::read_to_string(&p).unwrap().lines().next().unwrap().ends_with("ext_p,ext_r,ext_f1"));

    let rep = EvalReport::score_all("c", items, Some(&Flaky));
    assert_eq!(rep.examples[1].error.as_deref(), Some("external scorer: scorer exploded"));
    assert_eq!((rep.aggregate.n, rep.aggregate.failed), (1, 1));
}

#[test]
fn radar() {
    let one = radar_normalize(&[vec![0.3, 2.0, 7.0]]).unwrap();
    assert_eq!(one.values, vec![vec![1.0, 1.0, 1.0]]);
    let two = radar_normalize(&[vec![2.0], vec![4.0]]).unwrap();
    assert_eq!(two.values, vec![vec![0.5], vec![1.0]]);
    let z = radar_normalize(&[vec![0.0, 1.0], vec![0.0, 3.0]]).unwrap();
    assert_eq!(z.flagged_axes, vec![0]);
    assert_eq!(z.values[1], vec![0.0, 1.0]);
    assert!(radar_normalize(&[vec![1.0], vec![1.0, 2.0]]).is_err());
}

proptest! {
    #[test]
    fn identity_scores_one(words in proptest::collection::vec("[a-z]{1,6}", 4..20)) {
        let s: Vec<String> = words;
        prop_assert_eq!(bleu(&s, &s, 4).score, 1.0);
        prop_assert_eq!(bleu(&s, &s, 1).score, 1.0);
        prop_assert_eq!(rouge_l(&s, &s).f1, 1.0);
    }

    #[test]
    fn brevity_penalty_grows_toward_the_reference(words in proptest::collection::vec("[a-z]{1,6}", 3..20), k in 1usize..3) {
        let reference: Vec<String> = words;
        let k = k.min(reference.len() - 1);
        let mut prev = bleu(&reference[..k], &reference, 1).brevity_penalty;
        for len in k + 1..=reference.len() {
            let bp = bleu(&reference[..len], &reference, 1).brevity_penalty;
            prop_assert!(bp > prev, "{} !> {}", bp, prev);
            prev = bp;
        }
        prop_assert_eq!(prev, 1.0);
    }

    #[test]
    fn metrics_stay_in_unit_interval(a in "[a-c ]{0,30}", b in "[a-c ]{0,30}") {
        let (c, r) = (tokenize(&a), tokenize(&b));
        for v in [bleu(&c, &r, 1).score, bleu(&c, &r, 4).score, rouge_l(&c, &r).precision, rouge_l(&c, &r).recall, rouge_l(&c, &r).f1] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn radar_preserves_axis_ranking(rows in proptest::collection::vec(proptest::collection::vec(0.01f64..100.0, 3), 1..6)) {
        let rad = radar_normalize(&rows).unwrap();
        for a in 0..3 {
            for i in 0..rows.len() {
                for j in 0..rows.len() {
                    if rows[i][a] < rows[j][a] {
                        prop_assert!(rad.values[i][a] < rad.values[j][a]);
                    }
                }
            }
            prop_assert!(rad.values.iter().any(|r| r[a] == 1.0));
        }
    }
}
