mod common;

use std::collections::HashMap;

use tetrad_core::{Decoding, ParamStore, Tensor};
use tetrad_data::{Split, TaskTag};
use tetrad_train::gradcheck::pipeline_gradcheck;
use tetrad_train::grid::{default_grid, GridCell};
use tetrad_train::pipeline::{init_model, Corpus};
use tetrad_train::trainer::{load_model, read_loss_csv, LOSS_FILE, MODEL_DIR};
use tetrad_train::*;

fn small_spec() -> ModelSpec {
    ModelSpec {
        d_model: 16,
        n_layers: 1,
        n_heads: 2,
        fusion_heads: 2,
        lora_rank: 4,
        lora_alpha: 4.0,
        ..ModelSpec::default()
    }
}

fn snapshot(store: &ParamStore<f32>) -> HashMap<String, Tensor<f32>> {
    store.iter().map(|(_, p)| (p.name.clone(), p.tensor.clone())).collect()
}

fn moved(before: &HashMap<String, Tensor<f32>>, store: &ParamStore<f32>) -> Vec<String> {
    let mut v: Vec<String> =
        store.iter().filter(|(_, p)| before.get(&p.name) != Some(&p.tensor)).map(|(_, p)| p.name.clone()).collect();
    v.sort();
    v
}

struct Setup {
    _dir: tempfile::TempDir,
    fx: common::Fixture,
}

fn setup(count: usize) -> Setup {
    let dir = tempfile::tempdir().unwrap();
    let fx = common::fixture(dir.path(), count, 0.25);
    Setup { _dir: dir, fx }
}

impl Setup {
    fn corpus(&self) -> Corpus<'_> {
        Corpus {
            datasets: &self.fx.datasets,
            table: &self.fx.table,
            tokenizer: &self.fx.tokenizer,
            d_enc: self.fx.encoder.d_enc,
        }
    }
}

fn quick(stage: u8, steps: u64) -> StageConfig {
    let base = if stage == 1 { StageConfig::stage1() } else { StageConfig::stage2() };
    StageConfig { lr: 1e-2, batch_size: 2, max_steps: Some(steps), ..base }
}

#[test]
fn trainable_sets_are_enforced_exactly() {
    let s = setup(12);
    let c = s.corpus();
    let ab = AblationConfig::beta();
    let spec = small_spec();
    let (mut model, mut store) = init_model(&c, &spec, &ab, 1).unwrap();
    let data = c.examples(&c.datasets.stage1(Split::Train), &ab, &spec).unwrap();

    let before = snapshot(&store);
    let mut t = Trainer::new(&model, &mut store, quick(1, 3), ab.mode(), 0).unwrap();
    t.run(&mut store, &data, None).unwrap();
    let changed = moved(&before, &store);
    assert!(!changed.is_empty());
    assert!(changed.iter().all(|n| stage1_trainable(n)), "{changed:?}");
    assert!(changed.iter().any(|n| n.starts_with("fusion.")));
    assert!(changed.iter().any(|n| n.starts_with("adaptor.")));

    // stage 2 without adapters is refused
    assert!(matches!(
        Trainer::new(&model, &mut store, quick(2, 1), ab.mode(), 0),
        Err(TrainError::Stage { stage: 2, .. })
    ));
    begin_stage2(&mut model, &mut store, 5).unwrap();
    let data2 = c.examples(&c.datasets.stage2(Split::Train, true), &ab, &spec).unwrap();
    let before = snapshot(&store);
    let mut t = Trainer::new(&model, &mut store, quick(2, 3), ab.mode(), 0).unwrap();
    t.run(&mut store, &data2, None).unwrap();
    let changed = moved(&before, &store);
    assert!(changed.iter().all(|n| stage2_trainable(n)), "{changed:?}");
    assert!(changed.iter().any(|n| n.starts_with("lora.")));
    assert!(changed.contains(&"lm.tok_emb".to_string()));
    assert!(!changed.iter().any(|n| n.contains(".attn.w") && n.starts_with("lm.")));
}

#[test]
fn same_seed_same_curve_and_resume_continues_it() {
    let s = setup(12);
    let c = s.corpus();
    let ab = AblationConfig::alpha();
    let spec = small_spec();
    let data = c.examples(&c.datasets.stage1(Split::Train), &ab, &spec).unwrap();
    let stage = StageConfig { max_steps: Some(8), epochs: 3, batch_size: 4, lr: 5e-3, ..StageConfig::stage1() };
    let straight = |seed| {
        let (model, mut store) = init_model(&c, &spec, &ab, 3).unwrap();
        let mut t = Trainer::new(&model, &mut store, stage.clone(), ab.mode(), seed).unwrap();
        t.run(&mut store, &data, None).unwrap();
        (t.log.clone(), snapshot(&store))
    };
    let (a, wa) = straight(11);
    let (b, wb) = straight(11);
    assert_eq!(a, b);
    assert_eq!(wa, wb);
    assert_eq!(a.len(), 8);
    let (other, _) = straight(12);
    assert_ne!(a, other, "a different seed shuffles differently");

    // 3 steps, save, rebuild from disk, 5 more
    let dir = tempfile::tempdir().unwrap();
    {
        let (model, mut store) = init_model(&c, &spec, &ab, 3).unwrap();
        let mut t = Trainer::new(&model, &mut store, stage.clone(), ab.mode(), 11).unwrap();
        assert_eq!(t.run(&mut store, &data, Some(3)).unwrap(), 3);
        t.save(dir.path(), &store).unwrap();
    }
    let (model, mut store) = load_model::<f32>(&dir.path().join(MODEL_DIR)).unwrap();
    let mut t = Trainer::resume(dir.path(), &model, &mut store).unwrap();
    assert_eq!(t.position.step, 3);
    t.run(&mut store, &data, None).unwrap();
    assert_eq!(t.log, a, "resumed curve");
    assert_eq!(snapshot(&store), wa, "resumed weights");
    assert_eq!(read_loss_csv(&dir.path().join(LOSS_FILE)).unwrap(), a[..3].to_vec());
}

#[test]
fn checkpoint_into_other_shape_names_the_parameter() {
    let s = setup(6);
    let c = s.corpus();
    let ab = AblationConfig::beta();
    let (model, store) = init_model(&c, &small_spec(), &ab, 1).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_model(dir.path(), &store, &model.config).unwrap();
    let (m2, s2) = load_model::<f32>(dir.path()).unwrap();
    assert_eq!(m2.config, model.config);
    assert_eq!(snapshot(&s2), snapshot(&store));

    let wide = ModelSpec { d_model: 32, ..small_spec() };
    let (_, mut other) = init_model(&c, &wide, &ab, 1).unwrap();
    let err = tetrad_core::checkpoint::load_store(dir.path(), &mut other).unwrap_err().to_string();
    assert!(err.contains("parameter `"), "{err}");
}

#[test]
fn non_finite_loss_aborts_with_diagnostics() {
    let s = setup(6);
    let c = s.corpus();
    let ab = AblationConfig::beta();
    let spec = small_spec();
    let (model, mut store) = init_model(&c, &spec, &ab, 1).unwrap();
    let id = store.id("adaptor.music.weight").unwrap();
    store.get_mut(id).tensor.data_mut()[0] = f32::NAN;
    let data = c.examples(&c.datasets.stage1(Split::Train), &ab, &spec).unwrap();
    let mut t = Trainer::new(&model, &mut store, quick(1, 5), ab.mode(), 0).unwrap();
    match t.run(&mut store, &data, None) {
        Err(TrainError::NonFinite { step, what, examples, .. }) => {
            assert_eq!(step, 1);
            assert!(what.contains("loss"), "{what}");
            assert!(!examples.is_empty());
        }
        other => panic!("expected a non-finite abort, got {other:?}"),
    }
}

#[test]
fn gradients_of_both_stage_sets() {
    let t = std::time::Instant::now();
    let stages = pipeline_gradcheck(4).unwrap();
    assert_eq!(stages.len(), 2);
    for s in &stages {
        assert!(s.max_rel_error <= 1e-4, "stage {}: {}", s.stage, s.max_rel_error);
        for p in &s.params {
            let ok = if s.stage == 1 { stage1_trainable(&p.name) } else { stage2_trainable(&p.name) };
            assert!(ok, "{} checked in stage {}", p.name, s.stage);
        }
    }
    let names = |k: usize| stages[k].params.iter().map(|p| p.name.clone()).collect::<Vec<_>>();
    assert!(names(1).iter().any(|n| n.starts_with("lora.")));
    assert!(names(1).contains(&"lm.tok_emb".to_string()));
    assert!(names(0).iter().all(|n| names(1).contains(n)), "stage-1 set within stage-2 set");
    assert!(t.elapsed().as_secs() < 60);
}

#[test]
fn one_pair_is_memorised_and_regenerated() {
    let s = setup(6);
    let c = s.corpus();
    let ab = AblationConfig::beta();
    let spec = ModelSpec { d_model: 32, n_layers: 2, ..small_spec() };
    let pair = c.datasets.captions.iter().find(|p| p.task == TaskTag::M2tCaption).unwrap();
    let data = c.examples(&[pair], &ab, &spec).unwrap();
    let (mut model, mut store) = init_model(&c, &spec, &ab, 2).unwrap();
    begin_stage2(&mut model, &mut store, 3).unwrap();
    let stage = StageConfig { lr: 1e-2, batch_size: 1, epochs: 400, ..StageConfig::stage2() };
    let mut t = Trainer::new(&model, &mut store, stage, ab.mode(), 0).unwrap();
    t.run(&mut store, &data, None).unwrap();
    let ex = &data[0];
    let out = model.generate(&store, &ex.inputs, &ex.query, ab.mode(), ex.target.len() + 5, Decoding::Greedy).unwrap();
    assert_eq!(c.tokenizer.decode(&out), pair.target);
}

#[test]
fn text_only_eval_drops_media() {
    let s = setup(12);
    let c = s.corpus();
    let ab = AblationConfig::beta();
    let spec = small_spec();
    let (model, store) = init_model(&c, &spec, &ab, 2).unwrap();
    let tasks = [TaskTag::Mi2t, TaskTag::Mv2t, TaskTag::Any2t];
    let full = tetrad_train::pipeline::run_benchmarks(&c, &model, &store, &spec, &ab, &tasks, Some(2), 8, Sanity::Full)
        .unwrap();
    let text =
        tetrad_train::pipeline::run_benchmarks(&c, &model, &store, &spec, &ab, &tasks, Some(2), 8, Sanity::TextOnly)
            .unwrap();
    assert_eq!(full.len(), 3);
    assert_eq!(text[2].label, "Any2T/text-only");
    for (f, t) in full.iter().zip(&text) {
        assert_eq!(f.examples.len(), t.examples.len());
        assert!(f.aggregate.failed == 0 && t.aggregate.failed == 0);
    }
    let dir = tempfile::tempdir().unwrap();
    tetrad_train::pipeline::write_reports(dir.path(), &text).unwrap();
    assert!(dir.path().join("MI2T-text-only.json").exists());
    assert!(dir.path().join("aggregate.csv").exists());
}

fn tiny_grid() -> GridConfig {
    GridConfig {
        model: small_spec(),
        stage1: StageConfig { max_steps: Some(2), batch_size: 2, ..StageConfig::stage1() },
        stage2: StageConfig { max_steps: Some(2), batch_size: 2, ..StageConfig::stage2() },
        seeds: vec![0, 1],
        eval_limit: Some(2),
        max_new: 6,
    }
}

#[test]
fn grid_shape_and_reproducibility() {
    let grid = default_grid();
    assert_eq!(grid.len(), 8);
    assert!(grid.iter().any(|c| c.ablation == AblationConfig::alpha()));
    assert!(grid.iter().any(|c| c.ablation == AblationConfig::beta()));
    assert!(grid.iter().any(|c| c.ablation == AblationConfig::vanilla()));
    for pt in [0, 1, 2, 6] {
        assert!(grid.iter().any(|c| c.ablation.pt_layers == pt));
    }

    let s = setup(16);
    let c = s.corpus();
    let cells: Vec<GridCell> = grid.into_iter().filter(|c| ["vanilla", "beta"].contains(&c.name.as_str())).collect();
    let mut seen = 0;
    let a = run_ablation_grid(&c, &tiny_grid(), &cells, |_| seen += 1);
    assert_eq!(seen, 4);
    assert!(a.runs.iter().all(|r| r.error.is_none()), "{:?}", a.runs.iter().map(|r| &r.error).collect::<Vec<_>>());
    let b = run_ablation_grid(&c, &tiny_grid(), &cells, |_| {});
    let strip = |g: &GridResult| g.runs.iter().map(|r| (r.cell.clone(), r.seed, r.reports.clone())).collect::<Vec<_>>();
    assert_eq!(strip(&a), strip(&b));
    let rows = a.rows();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[1].label, "(2)+MIE+PT(1-layer)");
    assert_eq!(rows[0].seeds_ok, 2);
    let md = a.to_markdown();
    assert_eq!(md.lines().count(), 4);
    assert!(md.contains("MV2T R-L F1"));
    let dir = tempfile::tempdir().unwrap();
    a.write_csv(&dir.path().join("grid.csv")).unwrap();
    let csv = std::fs::read_to_string(dir.path().join("grid.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
}

#[test]
fn failing_cell_does_not_stop_the_grid() {
    let s = setup(16);
    let c = s.corpus();
    let mut cfg = tiny_grid();
    cfg.seeds = vec![0];
    // the fused block of Any2T examples (media rows plus input text) no
    // longer fits, so only the unfused cell survives
    cfg.model.fusion_max_len = 6;
    let cells: Vec<GridCell> =
        default_grid().into_iter().filter(|c| ["vanilla", "beta"].contains(&c.name.as_str())).collect();
    let g = run_ablation_grid(&c, &cfg, &cells, |_| {});
    assert_eq!(g.runs.len(), 2);
    assert!(g.runs[0].error.is_none(), "{:?}", g.runs[0].error);
    assert!(g.runs[1].error.is_some());
    let rows = g.rows();
    assert_eq!((rows[1].seeds_ok, rows[1].seeds_failed), (0, 1));
}
