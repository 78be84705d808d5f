use super::*;
use crate::model::{greedy_response, Layout};
use crate::rng::rng_stream;
use crate::tasks::gen_tasks;
use crate::types::TaskKind;

fn tiny_config() -> TrainConfig {
    let mut c = TrainConfig::default();
    c.model.embed_dim = 6;
    c.model.hidden_dim = 8;
    c.train_questions = 12;
    c.heldout_per_kind = 5;
    c.iterations = 6;
    c.batch_questions = 2;
    c.eval_every = 2;
    c.checkpoint_every = 3;
    c.responses_per_teacher = 2;
    c.max_len = 20;
    c.disc_max_len = 64;
    c.sft.epochs = 1;
    c.disc_pretrain.questions = 4;
    c.disc_pretrain.responses_per_source = 2;
    c.disc_pretrain.steps = 5;
    c
}

#[test]
fn memorized_answers_score_one_and_zero_params_stay_near_chance() {
    let v = Vocab::new();
    let qs = gen_tasks(&v, TaskKind::ModArith, 300, 0, &mut rng_stream(0, "eval", 0));
    // zero weights: uniform logits, argmax is token 0 ("0") forever, which is
    // right only when the answer is "0"
    let zero = PolicyParams::zeros(Layout::default());
    let acc = evaluate(&zero, &v, &qs, 8);
    let chance = qs.iter().filter(|q| q.answer_text == "0").count() as f64 / qs.len() as f64;
    assert_eq!(greedy_response(&zero, &v, &qs[0], 8).text, "00000000");
    assert!(acc <= chance);
    assert_eq!(acc, evaluate(&zero, &v, &qs, 8));

    // a head bias that always emits "7" answers every "7" question
    let mut p = PolicyParams::zeros(Layout::default());
    let ob = p.layout.out_b();
    p.data[ob.start + v.id('7').unwrap()] = 50.0;
    let sevens: Vec<Question> = qs.iter().filter(|q| q.answer_text == "7").cloned().collect();
    assert!(!sevens.is_empty());
    assert_eq!(evaluate(&p, &v, &sevens, 1), 1.0);
}

#[test]
fn pipeline_artifacts_are_deterministic_and_disjoint() {
    let out_a = tempfile::tempdir().unwrap();
    let out_b = tempfile::tempdir().unwrap();
    let c = tiny_config();
    let run = |root: &Path| {
        let p = Pipeline::open(c.clone(), root).unwrap();
        let s = p.train(RunKind::Ril).unwrap();
        (p.dir.clone(), s.final_accuracy)
    };
    let (da, acc_a) = run(out_a.path());
    let (db, acc_b) = run(out_b.path());
    assert_eq!(acc_a, acc_b);
    assert_eq!(da.file_name(), db.file_name());
    assert!(da.file_name().unwrap().to_str().unwrap().ends_with("-s0"));
    for f in [
        "metrics_ril.jsonl",
        "policy_ril.ckpt",
        "disc_ril.ckpt",
        "policy_ril_iter3.ckpt",
        "policy_ril_iter6.ckpt",
        "sft.ckpt",
        "disc_pretrained.ckpt",
        "teacher_cache.jsonl",
        "tasks_train.jsonl",
        "tasks_heldout.jsonl",
    ] {
        assert_eq!(std::fs::read(da.join(f)).unwrap(), std::fs::read(db.join(f)).unwrap(), "{f}");
    }
    let p = Pipeline::open(c, out_a.path()).unwrap();
    let (train, heldout) = p.tasks().unwrap();
    assert!(train.iter().all(|q| q.id < HELDOUT_ID_BASE));
    assert!(heldout.iter().all(|q| q.id >= HELDOUT_ID_BASE));
}

#[test]
fn plots_copy_log_values_exactly() {
    let out = tempfile::tempdir().unwrap();
    let p = Pipeline::open(tiny_config(), out.path()).unwrap();
    let s = p.train(RunKind::Rl(AdvantageVariant::DrGrpo)).unwrap();
    let files = emit_plots(std::slice::from_ref(&s.metrics_path)).unwrap();
    assert_eq!(files.len(), 2);
    let csv = std::fs::read_to_string(&files[1]).unwrap();
    let logged = plots::load_metrics(&s.metrics_path).unwrap();
    for (line, m) in csv.lines().skip(1).zip(&logged) {
        let cols: Vec<&str> = line.split(',').collect();
        assert_eq!(cols[1].parse::<f64>().unwrap(), m.mean_similarity_reward);
        assert_eq!(cols[2].parse::<f64>().unwrap(), m.mean_answer_reward);
        assert_eq!(cols[3].parse::<f64>().ok(), m.eval_accuracy);
    }
    let svg = std::fs::read_to_string(&files[0]).unwrap();
    assert_eq!(svg.matches("<polyline").count(), 3);
    let evals: Vec<f64> = logged.iter().filter_map(|m| m.eval_accuracy).collect();
    for e in evals {
        assert!(svg.contains(&format!("data-value=\"{e}\"")));
    }

    let bad = out.path().join("metrics_bad.jsonl");
    std::fs::write(&bad, "{not json\n").unwrap();
    assert!(matches!(emit_plots(&[bad]), Err(Error::Malformed { .. })));
}

#[test]
fn report_rows_recompute_from_logs() {
    let out = tempfile::tempdir().unwrap();
    let p = Pipeline::open(tiny_config(), out.path()).unwrap();
    let ril = p.train(RunKind::Ril).unwrap();
    p.train(RunKind::Rl(AdvantageVariant::Grpo)).unwrap();
    evaluate_run(&p).unwrap();
    let r = report(&p.dir).unwrap();
    assert_eq!(r.rows.len(), 2);
    assert_eq!(r.seed, 0);
    assert_eq!(r.config, p.config);
    let row = r.rows.iter().find(|r| r.variant == "ril").unwrap();
    assert_eq!(row.final_accuracy, Some(ril.final_accuracy));
    let logged = plots::load_metrics(&ril.metrics_path).unwrap();
    assert_eq!(row.mean_answer_reward, mean(logged.iter().map(|m| m.mean_answer_reward)));
    assert!(r.sft_accuracy.is_some());
    assert!(p.path("report.md").exists());
}

#[test]
fn sweep_arms_and_plot_shapes() {
    let base = TrainConfig::default();
    let levels: Vec<u32> = SweepAxis::SimLevels.arms(&base).iter().map(|(_, c)| c.sim_levels).collect();
    assert_eq!(levels, vec![2, 3, 5, 0]);
    let mus: Vec<usize> = SweepAxis::Mu.arms(&base).iter().map(|(_, c)| c.mu).collect();
    assert_eq!(mus, vec![1, 2, 4, 8]);
    let ns: Vec<usize> = SweepAxis::TeacherResponses.arms(&base).iter().map(|(_, c)| c.responses_per_teacher).collect();
    assert_eq!(ns, vec![1, 2, 4, 8, 16]);
    for axis in SweepAxis::ALL {
        assert_eq!(axis.name().parse::<SweepAxis>().unwrap(), axis);
        for (_, c) in axis.arms(&base) {
            c.validate().unwrap();
        }
    }
    assert!("bogus".parse::<SweepAxis>().is_err());

    let out = tempfile::tempdir().unwrap();
    let mut c = tiny_config();
    c.iterations = 2;
    let r = sweep(&c, SweepAxis::SimLevels, out.path()).unwrap();
    assert_eq!(r.rows.len(), 4);
    let dir = PathBuf::from(&r.base_run_dir);
    let svg = std::fs::read_to_string(dir.join("sweep_sim_levels.svg")).unwrap();
    assert_eq!(svg.matches("data-series=\"final_accuracy\"").count(), 4);

    let line = SweepResult {
        axis: "teacher_responses".into(),
        base_run_dir: String::new(),
        rows: [1, 2, 4, 8, 16]
            .iter()
            .map(|n| ComparisonRow {
                variant: n.to_string(),
                final_accuracy: Some(*n as f64 / 32.0),
                mean_similarity_reward: 0.0,
                mean_answer_reward: 0.0,
                iterations: 1,
                metrics_log: String::new(),
            })
            .collect(),
    };
    let (svg, csv) = emit_sweep_plot(&line, out.path()).unwrap();
    assert_eq!(std::fs::read_to_string(svg).unwrap().matches("<circle").count(), 5);
    assert_eq!(std::fs::read_to_string(csv).unwrap().lines().count(), 6);
}
