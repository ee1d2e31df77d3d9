use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tetrad_core::fusion::Segment;
use tetrad_core::gradcheck::grad_check_params;
use tetrad_core::model::target_accuracy;
use tetrad_core::tokenizer::{pretokenize, BOS_ID, EOS_ID};
use tetrad_core::{
    AssemblyMode, ClipEmbeddingSet, Decoding, Error, FusionConfig, LmConfig, ModalInputs, Modality, Model, ModelConfig,
    ParamStore, Role, Scalar, Tape, Tensor, Tokenizer,
};

const V: usize = 40;

fn micro_config(fusion_layers: usize) -> ModelConfig {
    ModelConfig {
        lm: LmConfig { vocab_size: V, d_model: 16, n_layers: 2, n_heads: 2, max_seq_len: 64, dropout: 0.0 },
        d_enc: 8,
        fusion: FusionConfig { n_layers: fusion_layers, n_heads: 2, max_len: 32 },
        lora_rank: 4,
        lora_alpha: 8.0,
        ..ModelConfig::default()
    }
}

fn random_set(m: Modality, n: usize, dim: usize, rng: &mut ChaCha8Rng) -> ClipEmbeddingSet {
    let rows = (0..n)
        .map(|_| {
            let mut r: Vec<f64> = (0..dim).map(|_| rng.random::<f64>() - 0.5).collect();
            let norm = r.iter().map(|x| x * x).sum::<f64>().sqrt();
            r.iter_mut().for_each(|x| *x /= norm);
            r
        })
        .collect();
    ClipEmbeddingSet::new(m, rows).unwrap()
}

fn random_inputs(n: usize, text: usize, rng: &mut ChaCha8Rng) -> ModalInputs {
    ModalInputs {
        music: Some(random_set(Modality::Music, n, 8, rng)),
        video: Some(random_set(Modality::Video, n, 8, rng)),
        image: Some(random_set(Modality::Image, 1, 8, rng)),
        text: (0..text).map(|_| rng.random_range(7..V)).collect(),
    }
}

fn ids(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(7..V)).collect()
}

fn build<T: Scalar>(cfg: ModelConfig, seed: u64) -> (ParamStore<T>, Model) {
    let mut store = ParamStore::new();
    let model = Model::new(&mut store, cfg, seed).unwrap();
    (store, model)
}

fn logits_of<T: Scalar>(
    store: &ParamStore<T>,
    model: &Model,
    inputs: &ModalInputs,
    q: &[usize],
    t: &[usize],
    mode: AssemblyMode,
) -> Tensor<T> {
    let mut tape = Tape::inference(store);
    let seq = model.assemble(&mut tape, inputs, q, Some(t), mode).unwrap();
    let l = model.logits(&mut tape, &seq, None).unwrap();
    tape.value(l).clone()
}

// ---------------------------------------------------------------- tokenizer

#[test]
fn tokenizer_round_trip_and_placeholders() {
    let corpus = ["The music of <Music> and <Image>, at 120 BPM.", "Key: A minor;  chords 'C:maj'"];
    let tok = Tokenizer::build(corpus.iter().copied(), 2048).unwrap();
    for s in corpus {
        assert!(tok.covers(s));
        assert_eq!(tok.decode(&tok.encode(s)), s);
    }
    for p in ["<Music>", "<Image>", "<Video>"] {
        let e = tok.encode(p);
        assert_eq!(e.len(), 1);
        assert_eq!(tok.token(e[0]), Some(p));
    }
    assert_eq!(tok.encode("zebra"), vec![tok.unk()]);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("vocab.txt");
    let tok2 = Tokenizer::build(["a\nb\\c  d\r\n"].iter().copied(), 100).unwrap();
    tok2.save(&path).unwrap();
    assert_eq!(Tokenizer::load(&path).unwrap(), tok2);
    std::fs::write(&path, "hello\n").unwrap();
    assert!(Tokenizer::load(&path).is_err());
}

#[test]
fn vocabulary_cap_and_order() {
    let tok = Tokenizer::build(["b b b a a c"].iter().copied(), 9).unwrap();
    assert_eq!(tok.len(), 9);
    // " a" and " b" twice each (tie broken by text), then "b" and " c" once
    assert_eq!(tok.token(7), Some(" a"));
    assert_eq!(tok.token(8), Some(" b"));
    assert!(Tokenizer::build(["x"].iter().copied(), 3).is_err());
}

mod tokenizer_props {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn pieces_concatenate_to_input(s in "[ a-zA-Z0-9,.'!:\\n<>]{0,40}") {
            prop_assert_eq!(pretokenize(&s).concat(), s.clone());
            let tok = Tokenizer::build([s.as_str()].iter().copied(), 4096).unwrap();
            prop_assert_eq!(tok.decode(&tok.encode(&s)), s);
        }
    }
}

// ---------------------------------------------------------------- language model

#[test]
fn single_token_logits_shape() {
    let (store, model) = build::<f64>(micro_config(1), 1);
    let mut tape = Tape::inference(&store);
    let x = model.lm.embed(&mut tape, &[5]).unwrap();
    let l = model.lm.forward(&mut tape, x, None).unwrap();
    assert_eq!(tape.shape(l), &[1, V]);
}

#[test]
fn overlength_is_an_error() {
    let (store, model) = build::<f64>(micro_config(1), 1);
    let mut tape = Tape::inference(&store);
    let x = model.lm.embed(&mut tape, &vec![8; 65]).unwrap();
    assert!(matches!(model.lm.forward(&mut tape, x, None), Err(Error::TooLong { len: 65, max: 64 })));
}

#[test]
fn causal_invariance_is_exact() {
    let (store, model) = build::<f32>(micro_config(1), 2);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..25 {
        let len = rng.random_range(2..20);
        let base = Tensor::<f64>::randn(vec![len, 16], 1.0, &mut rng).cast::<f32>();
        let t = rng.random_range(0..len - 1);
        let mut changed = base.clone();
        for j in (t + 1) * 16..len * 16 {
            changed.data_mut()[j] += rng.random::<f32>() * 10.0 - 5.0;
        }
        let run = |x: &Tensor<f32>| {
            let mut tape = Tape::inference(&store);
            let v = tape.constant(x.clone());
            let l = model.lm.forward(&mut tape, v, None).unwrap();
            tape.value(l).clone()
        };
        let (a, b) = (run(&base), run(&changed));
        for r in 0..=t {
            assert_eq!(a.row(r), b.row(r), "row {r} moved");
        }
        assert_ne!(a.row(len - 1), b.row(len - 1));
    }
}

#[test]
fn lm_forward_and_loss_gradients() {
    let (mut store, model) = build::<f64>(micro_config(0), 4);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let seq = ids(7, &mut rng);
    let targets = ids(7, &mut rng);
    let checks = grad_check_params(&mut store, 1e-6, |tape| {
        let x = model.lm.embed(tape, &seq)?;
        let l = model.lm.forward(tape, x, None)?;
        tape.cross_entropy(l, &targets, &[false, true, true, false, true, true, true])
    })
    .unwrap();
    assert!(checks.iter().any(|c| c.name == "lm.layers.1.attn.wq.weight"));
    for c in &checks {
        assert!(c.report.max_rel_error <= 1e-4, "{}: {:?}", c.name, c.report);
    }
}

#[test]
fn generation_contracts() {
    let (store, model) = build::<f32>(micro_config(1), 6);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let inputs = random_inputs(2, 0, &mut rng);
    let q = ids(3, &mut rng);
    let m = AssemblyMode::Fused;
    assert!(model.generate(&store, &inputs, &q, m, 0, Decoding::Greedy).unwrap().is_empty());
    let a = model.generate(&store, &inputs, &q, m, 12, Decoding::Greedy).unwrap();
    let b = model.generate(&store, &inputs, &q, m, 12, Decoding::Greedy).unwrap();
    assert_eq!(a, b);
    assert!(a.len() <= 12 && !a.contains(&EOS_ID));
    let s = |seed| model.generate(&store, &inputs, &q, m, 12, Decoding::Temperature { t: 1.5, seed }).unwrap();
    assert_eq!(s(11), s(11));
    assert!((0..5).any(|k| s(k) != s(k + 100)), "sampling never varies");
}

// ---------------------------------------------------------------- LoRA

#[test]
fn lora_attach_is_identity_and_counts_parameters() {
    let cfg = ModelConfig { lora_rank: 32, lora_alpha: 32.0, ..micro_config(1) };
    let (mut store, mut model) = build::<f32>(cfg, 8);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let inputs = random_inputs(4, 2, &mut rng);
    let (q, t) = (ids(4, &mut rng), ids(6, &mut rng));
    let before = logits_of(&store, &model, &inputs, &q, &t, AssemblyMode::Fused);
    let added = model.attach_lora(&mut store, 1).unwrap();
    // 2 layers × 4 projections × r·(d_in + d_out)
    assert_eq!(added, 2 * 4 * 32 * (16 + 16));
    let lora_params: usize =
        store.iter().filter(|(_, p)| p.name.starts_with("lora.")).map(|(_, p)| p.tensor.len()).sum();
    assert_eq!(lora_params, added);
    assert!(!store.get(store.id("lm.layers.0.attn.wq.weight").unwrap()).trainable);
    assert!(store.get(store.id("lm.layers.0.mlp.fc1.weight").unwrap()).trainable);
    let after = logits_of(&store, &model, &inputs, &q, &t, AssemblyMode::Fused);
    assert_eq!(before, after);

    // merging untouched adapters is exact too
    model.merge_lora(&mut store).unwrap();
    assert_eq!(logits_of(&store, &model, &inputs, &q, &t, AssemblyMode::Fused), before);
    assert!(model.merge_lora(&mut store).is_err(), "double merge");
    assert!(!store.names().iter().any(|n| n.starts_with("lora.")));
}

#[test]
fn lora_pattern_must_match() {
    let cfg = ModelConfig { lora_targets: vec!["lm.layers.*.attn.nope*".into()], ..micro_config(1) };
    let (mut store, mut model) = build::<f32>(cfg, 8);
    assert!(matches!(model.attach_lora(&mut store, 1), Err(Error::Config(_))));
}

fn sgd_steps<T: Scalar>(store: &mut ParamStore<T>, model: &Model, steps: usize, lr: f64, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inputs = random_inputs(4, 2, &mut rng);
    let (q, t) = (ids(4, &mut rng), ids(6, &mut rng));
    for _ in 0..steps {
        let grads = {
            let mut tape = Tape::new(&*store);
            let (loss, _, _) = model.loss(&mut tape, &inputs, &q, &t, AssemblyMode::Fused, None).unwrap();
            tape.backward(loss).unwrap().into_params()
        };
        for (id, g) in grads {
            let p = store.get_mut(id);
            for (w, d) in p.tensor.data_mut().iter_mut().zip(g.data()) {
                *w -= T::lit(lr) * *d;
            }
        }
    }
}

#[test]
fn lora_merge_matches_adapter_forward_after_training() {
    let cfg = ModelConfig { lora_rank: 32, lora_alpha: 32.0, ..micro_config(1) };
    let (mut store, mut model) = build::<f32>(cfg, 10);
    model.attach_lora(&mut store, 2).unwrap();
    let base: Vec<Tensor<f32>> = ["lm.layers.0.attn.wq.weight", "lm.layers.1.attn.wo.weight"]
        .iter()
        .map(|n| store.tensor(store.id(n).unwrap()).clone())
        .collect();
    sgd_steps(&mut store, &model, 10, 0.05, 3);
    // base weights untouched, B moved
    assert_eq!(store.tensor(store.id("lm.layers.0.attn.wq.weight").unwrap()), &base[0]);
    let b = store.tensor(store.id("lora.lm.layers.0.attn.wq.b").unwrap());
    assert!(b.data().iter().any(|&v| v != 0.0));

    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let inputs = random_inputs(4, 2, &mut rng);
    let (q, t) = (ids(4, &mut rng), ids(6, &mut rng));
    let adapted = logits_of(&store, &model, &inputs, &q, &t, AssemblyMode::Fused);
    model.merge_lora(&mut store).unwrap();
    let merged = logits_of(&store, &model, &inputs, &q, &t, AssemblyMode::Fused);
    assert!(adapted.max_abs_diff(&merged) <= 1e-6);
    assert_ne!(store.tensor(store.id("lm.layers.1.attn.wo.weight").unwrap()), &base[1]);
}

// ---------------------------------------------------------------- fusion and assembly

#[test]
fn adaptor_shapes_identity_and_errors() {
    let cfg = ModelConfig { d_enc: 16, ..micro_config(1) };
    let (mut store, model) = build::<f64>(cfg, 13);
    let ad = model.adaptor(Modality::Music).clone();
    store.get_mut(ad.linear.weight).tensor = Tensor::eye(16);
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let set = random_set(Modality::Music, 4, 16, &mut rng);
    let mut tape = Tape::inference(&store);
    let out = model.adapt(&mut tape, &set).unwrap();
    assert_eq!(tape.shape(out), &[4, 16]);
    assert_eq!(tape.value(out), &set.matrix::<f64>());
    let wrong = random_set(Modality::Video, 2, 16, &mut rng);
    assert!(ad.adapt(&mut tape, &wrong).is_err());
    let narrow = random_set(Modality::Music, 2, 5, &mut rng);
    assert!(model.adapt(&mut tape, &narrow).is_err());
}

#[test]
fn adapt_gradients() {
    let (mut store, model) = build::<f64>(micro_config(1), 15);
    store.set_trainable(|n| n.starts_with("adaptor.video"));
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let set = random_set(Modality::Video, 3, 8, &mut rng);
    let checks = grad_check_params(&mut store, 1e-6, |tape| {
        let r = model.adapt(tape, &set)?;
        let t = tape.tanh(r);
        let sq = tape.mul(t, t)?;
        tape.mean(sq)
    })
    .unwrap();
    assert_eq!(checks.len(), 2);
    for c in checks {
        assert!(c.report.max_rel_error <= 1e-4, "{}: {:?}", c.name, c.report);
    }
}

#[test]
fn fusion_identity_and_lengths() {
    let (store, model) = build::<f64>(micro_config(0), 17);
    let mut rng = ChaCha8Rng::seed_from_u64(18);
    let x = Tensor::<f64>::randn(vec![17, 16], 1.0, &mut rng);
    let mut tape = Tape::inference(&store);
    let v = tape.constant(x.clone());
    let out = model.fusion.fuse(&mut tape, v, &[Segment::Text; 17]).unwrap();
    assert_eq!(tape.value(out), &x);

    let (store, model) = build::<f64>(micro_config(1), 17);
    let inputs = ModalInputs {
        music: Some(random_set(Modality::Music, 4, 8, &mut rng)),
        video: Some(random_set(Modality::Video, 4, 8, &mut rng)),
        image: Some(random_set(Modality::Image, 4, 8, &mut rng)),
        text: ids(5, &mut rng),
    };
    let mut tape = Tape::inference(&store);
    let (block, segs) = model.fused_block(&mut tape, &inputs, AssemblyMode::Fused).unwrap();
    assert_eq!(tape.shape(block), &[17, 16]);
    assert_eq!(segs[..4], [Segment::Music; 4]);
    assert_eq!(segs[4..8], [Segment::Video; 4]);
    assert_eq!(segs[8..12], [Segment::Image; 4]);
    assert_eq!(segs[12..], [Segment::Text; 5]);

    let long = tape.constant(Tensor::zeros(vec![33, 16]));
    assert!(matches!(model.fusion.fuse(&mut tape, long, &[Segment::Text; 33]), Err(Error::TooLong { .. })));
}

#[test]
fn fusion_is_bidirectional() {
    let (store, model) = build::<f64>(micro_config(1), 19);
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let mut fired = 0;
    for _ in 0..20 {
        let n = rng.random_range(2..12);
        let x = Tensor::<f64>::randn(vec![n, 16], 1.0, &mut rng);
        let mut y = x.clone();
        for j in (n - 1) * 16..n * 16 {
            y.data_mut()[j] += rng.random::<f64>() - 0.5;
        }
        let run = |t: &Tensor<f64>| {
            let mut tape = Tape::inference(&store);
            let v = tape.constant(t.clone());
            let o = model.fusion.fuse(&mut tape, v, &vec![Segment::Music; n]).unwrap();
            tape.value(o).row(0).to_vec()
        };
        let (a, b) = (run(&x), run(&y));
        let d: f64 = a.iter().zip(&b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt();
        if d > 1e-8 {
            fired += 1;
        }
    }
    assert_eq!(fired, 20);
}

#[test]
fn pooled_zero_layer_fused_path_equals_vanilla() {
    let (store, model) = build::<f32>(micro_config(0), 21);
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    for _ in 0..10 {
        let inputs = random_inputs(4, rng.random_range(0..3), &mut rng);
        let (q, t) = (ids(3, &mut rng), ids(5, &mut rng));
        let vanilla = logits_of(&store, &model, &inputs, &q, &t, AssemblyMode::Vanilla);
        let fused = logits_of(&store, &model, &inputs.pooled(), &q, &t, AssemblyMode::Fused);
        assert_eq!(vanilla, fused);
    }
}

#[test]
fn assembly_layout_and_mask() {
    let (store, model) = build::<f64>(micro_config(1), 23);
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    let inputs = ModalInputs {
        music: Some(random_set(Modality::Music, 4, 8, &mut rng)),
        text: ids(2, &mut rng),
        ..Default::default()
    };
    let (q, t) = (ids(3, &mut rng), ids(4, &mut rng));
    let mut tape = Tape::inference(&store);
    let seq = model.assemble(&mut tape, &inputs, &q, Some(&t), AssemblyMode::Fused).unwrap();
    assert_eq!(seq.len(), 4 + 2 + 3 + 5);
    assert_eq!(seq.roles[..4], [Role::Fused(Segment::Music); 4]);
    assert_eq!(seq.roles[4..6], [Role::Fused(Segment::Text); 2]);
    assert_eq!(seq.roles[6..9], [Role::Query; 3]);
    assert_eq!(seq.roles[9..], [Role::Target; 5]);
    let want_mask: Vec<bool> = (0..14).map(|i| i >= 9).collect();
    assert_eq!(seq.mask, want_mask);
    assert_eq!(&seq.labels[9..13], &t[..]);
    assert_eq!(seq.labels[13], EOS_ID);
    assert_eq!(tape.shape(seq.embeddings), &[14, 16]);
    // the first target row is <s>
    let emb = tape.value(seq.embeddings).row(9).to_vec();
    assert_eq!(emb, store.tensor(model.lm.tok_emb).row(BOS_ID));

    // text-only sanity mode still yields logits
    let text_only = inputs.text_only();
    let seq = model.assemble(&mut tape, &text_only, &q, Some(&t), AssemblyMode::Fused).unwrap();
    assert_eq!(seq.fused_len(), 2);
    let l = model.logits(&mut tape, &seq, None).unwrap();
    assert_eq!(tape.shape(l), &[10, V]);

    assert!(model.assemble(&mut tape, &ModalInputs::default(), &[], Some(&t), AssemblyMode::Fused).is_err());
}

#[test]
fn loss_ignores_everything_but_targets() {
    let (store, model) = build::<f64>(micro_config(1), 25);
    let mut rng = ChaCha8Rng::seed_from_u64(26);
    let inputs = random_inputs(2, 1, &mut rng);
    let (q, t) = (ids(3, &mut rng), ids(4, &mut rng));
    let mut tape = Tape::inference(&store);
    let seq = model.assemble(&mut tape, &inputs, &q, Some(&t), AssemblyMode::Fused).unwrap();
    let logits = model.logits(&mut tape, &seq, None).unwrap();
    let a = tape.cross_entropy(logits, &seq.labels, &seq.mask).unwrap();
    let mut labels = seq.labels.clone();
    for (l, m) in labels.iter_mut().zip(&seq.mask) {
        if !m {
            *l = (*l + 7) % V;
        }
    }
    let b = tape.cross_entropy(logits, &labels, &seq.mask).unwrap();
    assert_eq!(tape.value(a), tape.value(b));
    let acc = target_accuracy(tape.value(logits), &seq.labels, &seq.mask).unwrap();
    assert!((0.0..=1.0).contains(&acc));
}

#[test]
fn query_only_input_gives_zero_fusion_gradients() {
    let (store, model) = build::<f64>(micro_config(1), 27);
    let mut rng = ChaCha8Rng::seed_from_u64(28);
    let (q, t) = (ids(3, &mut rng), ids(4, &mut rng));
    let mut tape = Tape::new(&store);
    let (loss, _, _) = model.loss(&mut tape, &ModalInputs::default(), &q, &t, AssemblyMode::Fused, None).unwrap();
    // register the fusion parameters so they appear in the gradient set
    for (id, p) in store.iter() {
        if p.name.starts_with("fusion.") {
            tape.param(id);
        }
    }
    let grads = tape.backward(loss).unwrap();
    let mut seen = 0;
    for (id, g) in grads.params() {
        if store.get(*id).name.starts_with("fusion.") {
            seen += 1;
            assert!(g.data().iter().all(|&v| v == 0.0));
        }
    }
    assert!(seen > 0);
}

#[test]
fn full_pipeline_gradients() {
    let (mut store, mut model) = build::<f64>(micro_config(1), 29);
    model.attach_lora(&mut store, 3).unwrap();
    // give the zero-initialised B factors some mass so A's gradient is exercised
    let mut rng = ChaCha8Rng::seed_from_u64(30);
    for (_, p) in store.iter_mut() {
        if p.name.ends_with(".b") && p.name.starts_with("lora.") {
            p.tensor = Tensor::randn(p.tensor.shape().to_vec(), 0.1, &mut rng);
        }
    }
    let inputs = random_inputs(3, 2, &mut rng);
    let (q, t) = (ids(3, &mut rng), ids(4, &mut rng));
    let checks = grad_check_params(&mut store, 1e-6, |tape| {
        let (loss, _, _) = model.loss(tape, &inputs, &q, &t, AssemblyMode::Fused, None)?;
        Ok(loss)
    })
    .unwrap();
    let worst = checks.iter().map(|c| c.report.max_rel_error).fold(0.0, f64::max);
    assert!(worst <= 1e-4, "worst {worst}");
    for prefix in ["adaptor.music", "adaptor.image", "fusion.layers.0", "fusion.seg_emb", "lora.", "lm.tok_emb"] {
        assert!(checks.iter().any(|c| c.name.starts_with(prefix)), "{prefix} not checked");
    }
}

#[test]
fn checkpoint_round_trip_with_adapters() {
    let (mut store, mut model) = build::<f32>(micro_config(1), 31);
    model.attach_lora(&mut store, 4).unwrap();
    sgd_steps(&mut store, &model, 2, 0.05, 5);
    let dir = tempfile::tempdir().unwrap();
    tetrad_core::checkpoint::save_store(dir.path(), &store, serde_json::json!({"note": "x"})).unwrap();

    let (mut fresh, mut fresh_model) = build::<f32>(micro_config(1), 99);
    fresh_model.attach_lora(&mut fresh, 0).unwrap();
    tetrad_core::checkpoint::load_store(dir.path(), &mut fresh).unwrap();
    for (id, p) in store.iter() {
        assert_eq!(&p.tensor, fresh.tensor(fresh.id(&p.name).unwrap()), "{}", p.name);
        let _ = id;
    }
    // a store without adapters cannot take this checkpoint
    let (mut plain, _) = build::<f32>(micro_config(1), 1);
    let err = tetrad_core::checkpoint::load_store(dir.path(), &mut plain).unwrap_err();
    assert!(err.to_string().contains("lora."), "{err}");
    // nor can one of another width
    let (mut wide, _) = build::<f32>(ModelConfig { d_enc: 9, ..micro_config(1) }, 1);
    assert!(tetrad_core::checkpoint::load_store(dir.path(), &mut wide).is_err());
}
