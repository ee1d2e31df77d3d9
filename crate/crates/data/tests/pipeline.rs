use std::collections::{BTreeMap, HashSet};
use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::path::Path;
use std::sync::mpsc;
use std::thread;

use proptest::prelude::*;
use tetrad_core::{Modality, RawImage, RawVideo};
use tetrad_data::instructions::placeholders;
use tetrad_data::unify::{compose, Any2tTriplet, Blocks, UNIFY_INSTRUCTION};
use tetrad_data::*;
use tetrad_music::chroma::NOTE_NAMES;
use tetrad_music::{estimate_tempo, onset_envelope, parse_features, textualize, FRAME, HOP};

fn unified_records(n: usize) -> Vec<Music4wayRecord> {
    let recs: Vec<Music4wayRecord> = synth_raw(11, n)
        .unwrap()
        .iter()
        .map(|it| build_record(&it.id, &it.music, &it.video, &it.params, Split::Train, it.seed).unwrap().record)
        .collect();
    unify_records(&recs, &TemplateUnifier).unwrap()
}

/// Clones of `base` under fresh ids, so seeded draws vary without more audio.
fn relabelled(base: &[Music4wayRecord], n: usize) -> Vec<Music4wayRecord> {
    (0..n)
        .map(|i| {
            let mut r = base[i % base.len()].clone();
            r.id = format!("clone-{i}");
            r.media = MediaRefs::for_id(&r.id);
            r
        })
        .collect()
}

fn tree(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().display().to_string(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn synthesis_is_deterministic() {
    let a = synth_raw(7, 3).unwrap();
    assert_eq!(a, synth_raw(7, 3).unwrap());
    assert_ne!(a[0].params, synth_raw(8, 1).unwrap()[0].params);
    // items do not depend on the corpus size
    assert_eq!(synth_raw(7, 1).unwrap()[0], a[0]);
    assert!(synth_raw(7, 0).is_err());

    let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    synth_corpus(d1.path(), 7, 3, 0.05).unwrap();
    synth_corpus(d2.path(), 7, 3, 0.05).unwrap();
    let t = tree(d1.path());
    assert_eq!(t.len(), 1 + 3 * 4, "records + music, sidecar, video, image");
    assert_eq!(t, tree(d2.path()));
}

#[test]
fn drawn_tempo_is_recoverable() {
    let items = synth_raw(3, 20).unwrap();
    let mut hits = 0;
    for it in &items {
        let env = onset_envelope(&it.music, FRAME, HOP).unwrap();
        let top = estimate_tempo(&env, 3).top().unwrap().bpm;
        if (top - it.params.bpm as f64).abs() <= 2.0 {
            hits += 1;
        } else {
            eprintln!("{}: drawn {} estimated {top}", it.id, it.params.bpm);
        }
    }
    assert!(hits >= 18, "{hits}/20");
}

#[test]
fn captions_name_the_drawn_parameters() {
    for it in synth_raw(5, 10).unwrap() {
        let p = &it.params;
        let music = p.music();
        assert!(music.contains(&format!("{} ", NOTE_NAMES[p.tonic])), "{music}");
        let root = p.progression[1].split(':').next().unwrap();
        assert!(music.contains(&format!("{root} ")), "{music} lacks {root}");
        assert!(p.video().contains(&p.colour) && p.video().contains(p.shape.name()));
        for text in [music, p.video(), p.image(3, 12)] {
            assert!(!text.chars().any(|c| c.is_ascii_digit()), "{text}");
        }
    }
}

#[test]
fn record_building() {
    let it = synth_one(1, 0).unwrap();
    let single = RawVideo::new(vec![it.video.frames[4].clone()], 2.0).unwrap();
    for seed in 0..5 {
        let b = build_record("x", &it.music, &single, &it.params, Split::Train, seed).unwrap();
        assert_eq!(b.record.frame_index, 0);
        assert_eq!(b.image, single.frames[0]);
    }
    let a = build_record("x", &it.music, &it.video, &it.params, Split::Test, 99).unwrap();
    let b = build_record("x", &it.music, &it.video, &it.params, Split::Test, 99).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.image, it.video.frames[a.record.frame_index]);
    let seen: HashSet<usize> = (0..40)
        .map(|s| build_record("x", &it.music, &it.video, &it.params, Split::Test, s).unwrap().record.frame_index)
        .collect();
    assert!(seen.len() > 4, "frame draws {seen:?}");

    let ft = &a.record.feature_text;
    assert_eq!(&textualize(&parse_features(ft).unwrap()), ft);

    let empty = RawVideo { frames: Vec::<RawImage>::new(), fps: 2.0 };
    assert!(build_record("x", &it.music, &empty, &it.params, Split::Train, 0).is_err());
}

#[test]
fn template_unifier() {
    let recs = unified_records(4);
    for r in &recs {
        let u = r.unified().unwrap();
        assert_eq!(TemplateUnifier.unify(r).unwrap(), u);
        for c in r.features().unwrap().chords {
            assert!(u.contains(&c.label.to_string()), "{u} lacks {}", c.label);
        }
        for cap in [&r.captions.video, &r.captions.image, &r.captions.music] {
            assert!(u.contains(cap.as_str()));
        }
        assert!(u.contains("BPM"));
    }
}

#[test]
fn multiway_pairs() {
    let recs = unified_records(3);
    for r in &recs {
        let mi = make_mi2t(r).unwrap();
        let mv = make_mv2t(r).unwrap();
        assert_eq!(mi.slots(), vec![Modality::Music, Modality::Image]);
        assert_eq!(mv.slots(), vec![Modality::Music, Modality::Video]);
        assert_eq!((mi.input.as_str(), mv.input.as_str()), ("<Music> <Image>", "<Music> <Video>"));
        assert_eq!(mi.media[1].path, r.media.image);
        assert_eq!(mv.media[1].path, r.media.video);
        for p in [&mi, &mv] {
            assert_eq!(p.instruction, MULTIWAY_INSTRUCTION);
            assert_eq!(p.target, r.unified().unwrap());
        }
    }
    let mut bare = recs[0].clone();
    bare.unified_caption = None;
    assert!(matches!(make_mi2t(&bare), Err(DataError::Missing { .. })));
    let built = build_dataset(&recs, DatasetKind::Mi2t, &TemplateUnifier, TargetVariant::Full, 0).unwrap();
    assert_eq!(built.pairs.len(), recs.len());
}

#[test]
fn any2t_template_pairs_follow_placeholder_rules() {
    let recs = relabelled(&unified_records(2), 300);
    let a = build_dataset(&recs, DatasetKind::Any2t, &TemplateUnifier, TargetVariant::Full, 5).unwrap();
    assert!(a.skipped.is_empty());
    assert_eq!(a.pairs.len(), 300);
    let mut inputs = HashSet::new();
    let mut first_slot = HashSet::new();
    for p in &a.pairs {
        p.validate().unwrap();
        let slots = placeholders(&p.input).unwrap();
        assert_eq!(slots.iter().filter(|&&m| m == Modality::Music).count(), 1);
        assert!(slots.len() >= 2);
        assert!(p.input.contains("<Music>"));
        inputs.insert(p.input.clone());
        first_slot.insert(slots[0]);
    }
    assert!(inputs.len() >= 10, "only {} distinct inputs", inputs.len());
    assert_eq!(first_slot.len(), 3, "music should not always come first");
    let b = build_dataset(&recs, DatasetKind::Any2t, &TemplateUnifier, TargetVariant::Full, 5).unwrap();
    assert_eq!(a.pairs, b.pairs);
}

#[test]
fn target_variants() {
    let recs = unified_records(3);
    for r in &recs {
        let p = make_mi2t(r).unwrap();
        assert_eq!(make_target_variant(&p, r, TargetVariant::Full).unwrap(), p);
        let nomf = make_target_variant(&p, r, TargetVariant::NoMf).unwrap();
        assert!(!nomf.target.chars().any(|c| c.is_ascii_digit()), "{}", nomf.target);
        assert!(!nomf.target.contains("BPM"));
        let novc = make_target_variant(&make_mv2t(r).unwrap(), r, TargetVariant::NoVc).unwrap();
        assert!(!novc.target.contains(&r.captions.video));
        assert!(!novc.target.contains(&r.captions.image));
        assert!(novc.target.contains(&r.captions.music));
        assert_eq!(novc.variant, TargetVariant::NoVc);

        let mut remote = p.clone();
        remote.unifier = Some(UnifierKind::Remote);
        assert!(matches!(make_target_variant(&remote, r, TargetVariant::NoMf), Err(DataError::Unsupported(_))));
        let caption = &make_caption_pairs(r).unwrap()[0];
        assert!(make_target_variant(caption, r, TargetVariant::NoMf).is_err());
    }
}

#[test]
fn caption_pairs() {
    let r = &unified_records(1)[0];
    let c = make_caption_pairs(r).unwrap();
    let tasks: Vec<TaskTag> = c.iter().map(|p| p.task).collect();
    assert_eq!(tasks, vec![TaskTag::M2tCaption, TaskTag::I2t, TaskTag::V2t]);
    assert_eq!(c[0].target, r.captions.music);
    assert_eq!(c[2].slots(), vec![Modality::Video]);
}

#[test]
fn jsonl_round_trip_and_errors() {
    let recs = unified_records(2);
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("records.jsonl");
    write_jsonl(&p, &recs).unwrap();
    assert_eq!(load_records(&p).unwrap(), recs);

    let pairs: Vec<InstructionPair> = recs.iter().map(|r| make_mi2t(r).unwrap()).collect();
    let q = dir.path().join("pairs.jsonl");
    write_jsonl(&q, &pairs).unwrap();
    assert_eq!(load_pairs(&q).unwrap(), pairs);

    let mut text = std::fs::read_to_string(&q).unwrap();
    text.push_str("{not json\n");
    std::fs::write(&q, &text).unwrap();
    match load_pairs(&q) {
        Err(DataError::Malformed { line, .. }) => assert_eq!(line, 3),
        other => panic!("{other:?}"),
    }
    write_jsonl(&q, &[pairs[0].clone(), pairs[0].clone()]).unwrap();
    assert!(matches!(load_pairs(&q), Err(DataError::DuplicateId(_))));

    let mut bad = pairs[0].clone();
    bad.input = "<Image> <Music>".into();
    write_jsonl(&q, &[bad]).unwrap();
    assert!(load_pairs(&q).is_err(), "slot order mismatch must not load");
}

#[test]
fn hash_split_of_a_thousand_ids() {
    let ids: Vec<String> = (0..1000).map(|i| format!("id-{i}")).collect();
    let test: HashSet<&String> = ids.iter().filter(|id| assign_split(id, 3, 0.05) == Split::Test).collect();
    let train: HashSet<&String> = ids.iter().filter(|id| assign_split(id, 3, 0.05) == Split::Train).collect();
    assert!(test.is_disjoint(&train));
    assert_eq!(test.len() + train.len(), 1000);
    // binomial(1000, 0.05): sd ≈ 6.9, allow 3 sd
    assert!((29..=71).contains(&test.len()), "{} test ids", test.len());
    assert!(ids.iter().all(|id| assign_split(id, 3, 0.0) == Split::Train));
    assert!(ids.iter().all(|id| assign_split(id, 3, 1.0) == Split::Test));
}

#[test]
fn embedding_cache() {
    let dir = tempfile::tempdir().unwrap();
    let recs = synth_corpus(dir.path(), 2, 2, 0.5).unwrap();
    let cfg = tetrad_core::EncoderConfig::default();
    let a = load_or_build(dir.path(), &recs, &cfg).unwrap();
    assert_eq!(a.len(), 2);
    let e = &a[&recs[0].id];
    assert_eq!((e.music.count(), e.video.count(), e.image.count()), (4, 4, 1));
    let cached = tetrad_data::cache::cache_path(dir.path(), &cfg);
    assert!(cached.exists());
    // second call reads the file and agrees exactly
    let b = load_or_build(dir.path(), &recs, &cfg).unwrap();
    assert_eq!(a, b);
    let other = tetrad_core::EncoderConfig { n_image: 5, ..cfg };
    assert_ne!(tetrad_data::cache::cache_path(dir.path(), &other), cached);
}

// --- remote unifier against a local stand-in server ---

struct Captured {
    head: String,
    body: String,
}

/// Serves `replies` (status, body) one per connection, reporting each request.
fn serve(replies: Vec<(u16, String)>) -> (String, mpsc::Receiver<Captured>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        for (status, reply) in replies {
            let (mut stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut head = String::new();
            let mut len = 0usize;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
                if line == "\r\n" || line.is_empty() {
                    break;
                }
                head.push_str(&line);
            }
            let mut body = vec![0u8; len];
            reader.read_exact(&mut body).unwrap();
            tx.send(Captured { head, body: String::from_utf8(body).unwrap() }).unwrap();
            let resp = format!(
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{reply}",
                reply.len()
            );
            stream.write_all(resp.as_bytes()).unwrap();
        }
    });
    (url, rx)
}

fn chat_reply(content: &str) -> String {
    serde_json::json!({"choices": [{"message": {"role": "assistant", "content": content}}]}).to_string()
}

fn remote(url: &str, retries: u32, audit: Option<&Path>) -> RemoteUnifier {
    let mut cfg = RemoteConfig::new(url);
    cfg.retries = retries;
    cfg.backoff_ms = 1;
    cfg.timeout_ms = 5_000;
    cfg.audit_log = audit.map(Path::to_path_buf);
    RemoteUnifier::new(cfg, "test-key".into())
}

#[test]
fn remote_request_embeds_the_prompt() {
    let r = &unified_records(1)[0];
    let (url, rx) = serve(vec![(200, chat_reply("A unified paragraph."))]);
    let dir = tempfile::tempdir().unwrap();
    let audit = dir.path().join("audit.jsonl");
    let u = remote(&url, 0, Some(&audit));
    assert_eq!(u.unify(r).unwrap(), "A unified paragraph.");
    let req = rx.recv().unwrap();
    assert!(req.head.starts_with("POST /v1/chat/completions"));
    assert!(req.head.to_ascii_lowercase().contains("authorization: bearer test-key"));
    let body: serde_json::Value = serde_json::from_str(&req.body).unwrap();
    let content = body["messages"][0]["content"].as_str().unwrap();
    assert!(content.contains("generate a unified description that combines the elements"));
    assert!(content.ends_with(UNIFY_INSTRUCTION));
    assert!(content.contains(&format!("- Video Caption: {}", r.captions.video)));
    assert!(content.contains("------ Tempo: [["));
    let log = std::fs::read_to_string(&audit).unwrap();
    assert_eq!(log.lines().count(), 1);
    assert!(log.contains("A unified paragraph.") && !log.contains("test-key"));
}

#[test]
fn remote_failures_are_typed_and_counted() {
    let r = &unified_records(1)[0];
    let (url, _rx) = serve(vec![(500, "{}".into()), (503, "{}".into()), (500, "{}".into())]);
    match remote(&url, 2, None).unify(r) {
        Err(DataError::Transport { attempts, .. }) => assert_eq!(attempts, 3),
        other => panic!("{other:?}"),
    }
    // a client error is not retried
    let (url, _rx) = serve(vec![(401, "{}".into())]);
    match remote(&url, 5, None).unify(r) {
        Err(DataError::Transport { attempts, message }) => {
            assert_eq!(attempts, 1);
            assert!(message.contains("401"));
        }
        other => panic!("{other:?}"),
    }
    // nothing listening
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let u = remote(&format!("http://127.0.0.1:{port}/x"), 1, None);
    assert!(matches!(u.unify(r), Err(DataError::Transport { attempts: 2, .. })));
}

#[test]
fn remote_any2t_is_validated() {
    let recs = unified_records(2);
    let good = "Input: Watch <Video> and hear <Music>.\nInstruction: How do they fit?\nOutput: They fit well.";
    let bad = "Input: Watch <video> and hear <Music>.\nInstruction: How?\nOutput: Well.";
    let (url, rx) = serve(vec![(200, chat_reply(good)), (200, chat_reply(bad))]);
    let u = remote(&url, 0, None);
    let built = build_dataset(&recs, DatasetKind::Any2t, &u, TargetVariant::Full, 0).unwrap();
    assert_eq!(built.pairs.len(), 1);
    assert_eq!(built.skipped.len(), 1);
    let p = &built.pairs[0];
    assert_eq!(p.slots(), vec![Modality::Video, Modality::Music]);
    assert_eq!(p.unifier, Some(UnifierKind::Remote));
    let req: serde_json::Value = serde_json::from_str(&rx.recv().unwrap().body).unwrap();
    assert_eq!(req["messages"][0]["role"], "system");
    assert!(req["messages"][0]["content"].as_str().unwrap().contains("Music must be referred to as <Music>."));
    assert!(req["messages"][1]["content"].as_str().unwrap().contains("- Unified Caption: "));
}

#[test]
fn any2t_reply_parsing() {
    let t = Any2tTriplet::parse("Input: a <Music>\n b <Image>\nInstruction: why?\n\nOutput: x\ny").unwrap();
    assert_eq!(t.input, "a <Music> b <Image>");
    assert_eq!(t.output, "x y");
    assert!(Any2tTriplet::parse("Input: a\nOutput: b").is_err());
}

#[test]
fn missing_key_is_a_config_error() {
    // this test alone reads the variable; it never sets it
    if std::env::var("UNIFIER_API_KEY").is_err() {
        assert!(matches!(RemoteUnifier::from_env(RemoteConfig::new("http://127.0.0.1:1/")), Err(DataError::Config(_))));
    }
}

#[test]
fn composition_blocks() {
    let r = &unified_records(1)[0];
    let music_only = compose(r, Blocks { video: false, image: false, features: false }).unwrap();
    assert_eq!(music_only, r.captions.music);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pairs_round_trip_through_jsonl(
        instruction in "[ -~]{1,40}",
        target in "[a-zA-Z ,.\"\\\\\n\u{e9}\u{4e2d}]{1,60}",
        tail in "[a-z ]{0,10}",
    ) {
        let p = InstructionPair {
            id: "p".into(),
            task: TaskTag::Any2t,
            input: format!("<Image> then <Music>{tail}"),
            media: vec![
                MediaSlot { modality: Modality::Image, path: "i".into() },
                MediaSlot { modality: Modality::Music, path: "m".into() },
            ],
            instruction: instruction.replace('<', "("),
            target: target.clone(),
            record_id: None,
            split: Some(Split::Test),
            unifier: Some(UnifierKind::Template),
            variant: TargetVariant::NoVc,
        };
        prop_assume!(!p.instruction.trim().is_empty() && !target.trim().is_empty());
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("p.jsonl");
        write_jsonl(&f, std::slice::from_ref(&p)).unwrap();
        prop_assert_eq!(load_pairs(&f).unwrap(), vec![p]);
    }

    #[test]
    fn split_depends_only_on_id_and_seed(id in "[a-z0-9-]{1,20}", seed in any::<u64>()) {
        let s = assign_split(&id, seed, 0.05);
        prop_assert_eq!(s, assign_split(&id, seed, 0.05));
        let u = tetrad_data::split::hash_unit(&id, seed);
        prop_assert!((0.0..1.0).contains(&u));
    }
}
