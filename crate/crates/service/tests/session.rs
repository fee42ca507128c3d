use neurath::{read_behavior, Condition, IngestOptions, Preset, ProblemSpec, Reporting};
use neurath_service::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn fixed_clock() -> Clock {
    std::sync::Arc::new(|| 1_000)
}

fn custom(device: u32, tests: usize, w_s: f64, w_b: f64, reporting: Reporting) -> SessionSpec {
    SessionSpec {
        problems: Some(vec![ProblemSpec { device, n: 3, tests }]),
        condition: Some(Condition {
            w_s,
            w_b,
            w_known: true,
            reporting,
        }),
        seed: Some(5),
        ..SessionSpec::default()
    }
}

fn start(spec: &SessionSpec) -> Session {
    Session::create("s1".into(), spec.resolve().unwrap(), true, fixed_clock())
}

fn step(s: &mut Session, c: &str, j: &str) -> JudgeResponse {
    s.intervene(&InterveneRequest {
        intervention: c.into(),
        predictions: None,
    })
    .unwrap();
    s.judge(&JudgeRequest {
        judgment: j.into(),
        ..JudgeRequest::default()
    })
    .unwrap()
}

#[test]
fn presets_set_the_schedule() {
    let exp2 = SessionSpec {
        preset: Some(Preset::Exp2),
        seed: Some(1),
        ..SessionSpec::default()
    }
    .resolve()
    .unwrap();
    assert_eq!(exp2.problems.len(), 7);
    assert!(exp2.problems.iter().all(|p| p.tests == 6));
    assert!(!exp2.condition.w_known);

    let exp1 = SessionSpec {
        preset: Some(Preset::Exp1),
        seed: Some(1),
        ..SessionSpec::default()
    }
    .resolve()
    .unwrap();
    assert_eq!(exp1.problems.len(), 10);
    let tests: Vec<usize> = exp1.problems.iter().map(|p| p.tests).collect();
    assert_eq!(tests, [6, 6, 6, 6, 6, 8, 8, 8, 8, 8]);
}

#[test]
fn invalid_specs_are_rejected() {
    assert!(matches!(SessionSpec::default().resolve(), Err(SessionError::Validation(_))));
    let mut s = custom(1, 6, 0.9, 0.1, Reporting::Remain);
    s.problems = Some(vec![ProblemSpec { device: 42, n: 3, tests: 6 }]);
    assert!(matches!(s.resolve(), Err(SessionError::Validation(_))));
    let s = custom(1, 0, 0.9, 0.1, Reporting::Remain);
    assert!(matches!(s.resolve(), Err(SessionError::Validation(_))));
    let s = custom(1, 6, 1.5, 0.1, Reporting::Remain);
    assert!(matches!(s.resolve(), Err(SessionError::Validation(_))));
}

#[test]
fn same_seed_gives_same_outcome_stream() {
    let spec = SessionSpec {
        preset: Some(Preset::Exp1),
        seed: Some(99),
        ..SessionSpec::default()
    };
    let store = Store::open(ServiceConfig::default()).unwrap();
    let a = store.create(&spec).unwrap();
    let b = store.create(&spec).unwrap();
    assert_ne!(a.id, b.id);
    for _ in 0..6 {
        let req = InterveneRequest {
            intervention: "..+".into(),
            predictions: None,
        };
        let oa = store.intervene(&a.id, &req).unwrap();
        let ob = store.intervene(&b.id, &req).unwrap();
        assert_eq!(oa.outcome, ob.outcome);
        let j = JudgeRequest {
            judgment: String::new(),
            ..JudgeRequest::default()
        };
        store.judge(&a.id, &j).unwrap();
        store.judge(&b.id, &j).unwrap();
    }
}

#[test]
fn deterministic_regime_turns_chain_on() {
    let mut s = start(&custom(3, 6, 1.0, 0.0, Reporting::Remain));
    let out = s
        .intervene(&InterveneRequest {
            intervention: "+..".into(),
            predictions: None,
        })
        .unwrap();
    assert_eq!(out.outcome, "111");
    assert_eq!(out.phase, Phase::Judge);
}

#[test]
fn observation_is_allowed() {
    let mut s = start(&custom(3, 6, 0.9, 0.1, Reporting::Remain));
    let out = s.intervene(&InterveneRequest {
        intervention: "...".into(),
        predictions: None,
    });
    assert!(out.is_ok());
}

#[test]
fn phase_and_dimension_errors() {
    let mut s = start(&custom(3, 6, 0.9, 0.1, Reporting::Remain));
    let j = JudgeRequest {
        judgment: "x->y".into(),
        ..JudgeRequest::default()
    };
    assert!(matches!(s.judge(&j), Err(SessionError::Sequence { .. })));
    let bad = InterveneRequest {
        intervention: "+.".into(),
        predictions: None,
    };
    assert!(matches!(s.intervene(&bad), Err(SessionError::Validation(_))));
    let ok = InterveneRequest {
        intervention: "+..".into(),
        predictions: None,
    };
    s.intervene(&ok).unwrap();
    assert!(matches!(s.intervene(&ok), Err(SessionError::Sequence { .. })));
    let unspecified = JudgeRequest {
        judgment: "x->y;?".into(),
        ..JudgeRequest::default()
    };
    assert!(matches!(s.judge(&unspecified), Err(SessionError::Validation(_))));
}

#[test]
fn cyclic_judgments_are_rejected_and_not_logged() {
    let mut s = start(&custom(3, 6, 0.9, 0.1, Reporting::Remain));
    s.intervene(&InterveneRequest {
        intervention: "+..".into(),
        predictions: None,
    })
    .unwrap();
    let before = s.events().len();
    for cyc in ["x->y;y->z;z->x", "x->y;y->x"] {
        let err = s
            .judge(&JudgeRequest {
                judgment: cyc.into(),
                ..JudgeRequest::default()
            })
            .unwrap_err();
        assert!(matches!(err, SessionError::Loop));
        assert_eq!(err.to_string(), LOOP_MESSAGE);
        assert!(err.to_string().contains("loop"));
    }
    assert_eq!(s.events().len(), before);
    assert_eq!(s.phase(), Phase::Judge);
    let ok = s.judge(&JudgeRequest {
        judgment: String::new(),
        ..JudgeRequest::default()
    });
    assert!(ok.unwrap().accepted);
}

#[test]
fn last_judgment_gives_feedback_and_score() {
    let mut s = start(&custom(5, 2, 0.9, 0.1, Reporting::Remain));
    let r = step(&mut s, "+..", "");
    assert!(r.feedback.is_none());
    let r = step(&mut s, "+..", "x->y;x->z;y->z");
    let fb = r.feedback.unwrap();
    assert_eq!(fb.device_id, 5);
    assert_eq!(fb.true_graph, "x->y;x->z;y->z");
    assert_eq!(r.phase, Phase::Done);
    let score = r.score.unwrap();
    assert_eq!(score.accuracy, 1.0);
    assert!(matches!(s.events().last().unwrap().event, Event::Score(_)));
}

#[test]
fn all_absent_against_fully_connected_scores_zero() {
    let mut s = start(&custom(5, 1, 0.9, 0.1, Reporting::Remain));
    let r = step(&mut s, "...", "");
    let score = r.score.unwrap();
    assert_eq!((score.correct, score.pairs), (0, 3));
}

#[test]
fn random_judgments_score_near_a_third() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut correct = 0;
    let mut total = 0;
    for seed in 0..400u64 {
        let spec = SessionSpec {
            preset: Some(Preset::Exp1ThreeVar),
            seed: Some(seed),
            ..SessionSpec::default()
        };
        let mut s = Session::create(format!("s{seed}"), spec.resolve().unwrap(), false, fixed_clock());
        while s.phase() != Phase::Done {
            s.intervene(&InterveneRequest {
                intervention: "...".into(),
                predictions: None,
            })
            .unwrap();
            loop {
                let pick = |rng: &mut ChaCha8Rng, a: &str, b: &str| match rng.random_range(0..3) {
                    0 => String::new(),
                    1 => format!("{a}->{b}"),
                    _ => format!("{b}->{a}"),
                };
                let edges: Vec<String> = [("x", "y"), ("x", "z"), ("y", "z")]
                    .iter()
                    .map(|(a, b)| pick(&mut rng, a, b))
                    .filter(|e| !e.is_empty())
                    .collect();
                let r = s.judge(&JudgeRequest {
                    judgment: edges.join(";"),
                    ..JudgeRequest::default()
                });
                match r {
                    Ok(_) => break,
                    Err(SessionError::Loop) => continue,
                    Err(e) => panic!("{e}"),
                }
            }
        }
        let score = s.score(ScoringMode::Final);
        correct += score.correct;
        total += score.pairs;
    }
    let acc = correct as f64 / total as f64;
    assert!((acc - 1.0 / 3.0).abs() < 0.03, "{acc}");
}

#[test]
fn random_timepoint_scoring_is_stable() {
    let mut s = start(&custom(2, 6, 0.9, 0.1, Reporting::Remain));
    for _ in 0..6 {
        step(&mut s, "+..", "x->y");
    }
    let a = s.score(ScoringMode::RandomTimepoint);
    let b = s.score(ScoringMode::RandomTimepoint);
    assert_eq!(a, b);
    assert!(a.problems[0].test < 6);
    assert!((a.accuracy - 2.0 / 3.0).abs() < 1e-12);
}

#[test]
fn reporting_mode_controls_echo() {
    let mut remain = start(&custom(2, 6, 0.9, 0.1, Reporting::Remain));
    step(&mut remain, "+..", "x->y");
    assert_eq!(remain.snapshot().previous_judgment.as_deref(), Some("x->y"));

    let mut gone = start(&custom(2, 6, 0.9, 0.1, Reporting::Disappear));
    step(&mut gone, "+..", "x->y");
    let snap = gone.snapshot();
    assert!(snap.previous_judgment.is_none());
    assert!(!serde_json::to_string(&snap).unwrap().contains("x->y"));
}

#[test]
fn hidden_strengths_are_not_shown() {
    let spec = SessionSpec {
        preset: Some(Preset::Exp2),
        seed: Some(2),
        ..SessionSpec::default()
    };
    let snap = Session::create("a".into(), spec.resolve().unwrap(), false, fixed_clock()).snapshot();
    assert!(snap.condition.w_s.is_none() && snap.condition.w_b.is_none());
}

#[test]
fn predictions_and_confidences_are_stored_verbatim() {
    let mut s = start(&custom(2, 6, 0.9, 0.1, Reporting::Remain));
    let preds = vec![None, Some(0.25), Some(0.875)];
    s.intervene(&InterveneRequest {
        intervention: "+..".into(),
        predictions: Some(preds.clone()),
    })
    .unwrap();
    let conf = vec![Some(1.0), Some(0.5), None];
    s.judge(&JudgeRequest {
        judgment: "x->y".into(),
        confidences: Some(conf.clone()),
        free_text: None,
    })
    .unwrap();
    assert!(s
        .events()
        .iter()
        .any(|e| e.event == Event::Prediction { problem: 0, test: 0, values: preds.clone() }));
    let data = s.participant_data();
    assert_eq!(data.problems[0].tests[0].predictions, preds);
    assert_eq!(data.problems[0].tests[0].confidences, conf);
}

#[test]
fn export_round_trips_through_ingest() {
    let spec = SessionSpec {
        preset: Some(Preset::Exp2),
        seed: Some(11),
        ..SessionSpec::default()
    };
    let mut s = Session::create("round".into(), spec.resolve().unwrap(), false, fixed_clock());
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for t in 0..9 {
        s.intervene(&InterveneRequest {
            intervention: ["+..", ".-+", "..."][t % 3].into(),
            predictions: Some(vec![Some(rng.random()), None, Some(0.5)]),
        })
        .unwrap();
        s.judge(&JudgeRequest {
            judgment: ["x->y", "", "z->x;y->x"][t % 3].into(),
            confidences: Some(vec![Some(rng.random()), Some(0.1), None]),
            free_text: None,
        })
        .unwrap();
    }
    let csv = s.export_csv().unwrap();
    let back = read_behavior(csv.as_bytes(), IngestOptions { strict: true }).unwrap();
    assert_eq!(back, vec![s.participant_data()]);
    assert_eq!(back[0].problems.len(), 2);
    assert_eq!(back[0].condition.reporting, s.plan().condition.reporting);
}

#[test]
fn disappear_flag_survives_export() {
    let mut s = start(&custom(2, 1, 0.9, 0.1, Reporting::Disappear));
    step(&mut s, "+..", "x->y");
    let back = read_behavior(s.export_csv().unwrap().as_bytes(), IngestOptions::default()).unwrap();
    assert_eq!(back[0].condition.reporting, Reporting::Disappear);
}

#[test]
fn free_text_goes_to_side_file() {
    let mut spec = custom(2, 2, 0.9, 0.1, Reporting::Remain);
    spec.free_text_problem = Some(0);
    let mut s = start(&spec);
    assert!(s.snapshot().free_text_prompt);
    s.intervene(&InterveneRequest {
        intervention: "+..".into(),
        predictions: None,
    })
    .unwrap();
    let short = s.judge(&JudgeRequest {
        judgment: "x->y".into(),
        confidences: None,
        free_text: Some("hm".into()),
    });
    assert!(matches!(short, Err(SessionError::Validation(_))));
    s.judge(&JudgeRequest {
        judgment: "x->y".into(),
        confidences: None,
        free_text: Some("x, then y lit up".into()),
    })
    .unwrap();
    let side = s.export_free_text().unwrap();
    assert_eq!(side, "session_id,problem,test,text\ns1,0,0,\"x, then y lit up\"\n");
}

#[test]
fn replay_reproduces_the_log() {
    let mut s = start(&custom(4, 3, 0.75, 0.25, Reporting::Remain));
    s.intervene(&InterveneRequest {
        intervention: "+..".into(),
        predictions: Some(vec![None, Some(0.7), Some(0.2)]),
    })
    .unwrap();
    s.judge(&JudgeRequest {
        judgment: "x->z".into(),
        confidences: Some(vec![Some(0.5), Some(0.9), Some(0.5)]),
        free_text: Some("because".into()),
    })
    .unwrap();
    step(&mut s, ".+.", "x->z;y->z");
    step(&mut s, "...", "x->z;y->z");
    let r = Session::replay(s.events(), true).unwrap();
    assert_eq!(r.events(), s.events());
    assert_eq!(r.snapshot(), s.snapshot());

    let mut tampered = s.events().to_vec();
    for e in tampered.iter_mut() {
        if let Event::Outcome { outcome, .. } = &mut e.event {
            *outcome = if outcome == "111" { "100".into() } else { "111".into() };
            break;
        }
    }
    assert!(matches!(Session::replay(&tampered, true), Err(SessionError::Replay(_))));
}

#[test]
fn phase_counts_never_drift() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut s = start(&custom(3, 4, 0.9, 0.1, Reporting::Remain));
    for _ in 0..200 {
        if rng.random_bool(0.5) {
            let _ = s.intervene(&InterveneRequest {
                intervention: "+..".into(),
                predictions: None,
            });
        } else {
            let j = ["x->y", "x->y;y->z;z->x", ""][rng.random_range(0..3)];
            let _ = s.judge(&JudgeRequest {
                judgment: j.into(),
                ..JudgeRequest::default()
            });
        }
        let count = |f: fn(&Event) -> bool| s.events().iter().filter(|e| f(&e.event)).count();
        let iv = count(|e| matches!(e, Event::Intervention { .. }));
        let out = count(|e| matches!(e, Event::Outcome { .. }));
        let jd = count(|e| matches!(e, Event::Judgment { .. }));
        assert!(jd <= out && out <= iv && iv - jd <= 1);
        assert!(s
            .events()
            .windows(2)
            .all(|w| w[0].timestamp <= w[1].timestamp && w[1].seq == w[0].seq + 1));
    }
    assert_eq!(s.phase(), Phase::Done);
}

#[test]
fn analytics_policy_and_values() {
    let spec = custom(1, 16, 0.9, 0.1, Reporting::Remain);
    let plan = spec.resolve().unwrap();
    let mut off = Session::create("off".into(), plan.clone(), true, fixed_clock());
    assert!(matches!(off.analytics(NsQuery::default()), Err(SessionError::Policy)));

    let mut on_plan = plan;
    on_plan.analytics = true;
    let mut blocked = Session::create("b".into(), on_plan.clone(), false, fixed_clock());
    assert!(matches!(blocked.analytics(NsQuery::default()), Err(SessionError::Policy)));

    let mut s = Session::create("on".into(), on_plan, true, fixed_clock());
    let fresh = s.analytics(NsQuery::default()).unwrap();
    for m in &fresh.edge_marginals {
        assert!((m.forward - 8.0 / 25.0).abs() < 1e-12);
        assert!((m.absent - 9.0 / 25.0).abs() < 1e-12);
        assert!((m.backward - 8.0 / 25.0).abs() < 1e-12);
    }
    assert_eq!(fresh.eig.len(), 27);
    assert!(fresh.eig.iter().all(|g| g.gain >= -1e-9));
    assert_eq!(fresh.foci.len(), 7);
    assert!(fresh.foci.last().unwrap().entropy.is_none());
    let total: f64 = fresh.ns.distribution.iter().map(|g| g.prob).sum();
    assert!((total - 1.0).abs() < 1e-9);

    for _ in 0..8 {
        step(&mut s, "+..", "x->y");
        step(&mut s, ".+.", "x->y");
    }
    let late = s.analytics(NsQuery::default()).unwrap();
    assert!(late.edge_marginals[0].forward > 0.9, "{:?}", late.edge_marginals[0]);
    assert_eq!(late.reference_judgment, "x->y");
    assert!(late.foci.last().unwrap().entropy.is_some());
}
